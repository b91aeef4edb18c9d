//! Tabular ingestion, feature schemas, scaling and unit encodings.
//!
//! Datasets always hold raw values. The schema carries everything needed to
//! move between raw values and the network's unit layout:
//!
//! - standard layout: numeric features are one standardized unit, categorical
//!   features are a one-hot block in category-list order;
//! - binned layout: numeric features become `m` equal-width bin indicators.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NgmError, Result};

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureType {
    Continuous,
    Categorical,
    Ordinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub std: f64,
    /// Constant columns are centred but not scaled.
    #[serde(default)]
    pub constant: bool,
}

impl Scaling {
    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// One column of the schema. The JSON form is
/// `{name, type, categories?, bins?}` plus optional fitted statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: FeatureType,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    /// Requested bin count for numeric features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_edges: Option<Vec<f64>>,
    /// Empirical marginal: category frequencies or bin frequencies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginal: Option<Vec<f64>>,
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureType::Continuous,
            categories: Vec::new(),
            bins: None,
            scaling: None,
            bin_edges: None,
            marginal: None,
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureType::Categorical,
            categories,
            bins: None,
            scaling: None,
            bin_edges: None,
            marginal: None,
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == FeatureType::Categorical
    }

    pub fn is_numeric(&self) -> bool {
        !self.is_categorical()
    }

    /// Width in the standard layout.
    pub fn unit_width(&self) -> usize {
        if self.is_categorical() {
            self.categories.len()
        } else {
            1
        }
    }

    /// Width in the binned layout.
    pub fn binned_width(&self) -> usize {
        if self.is_categorical() {
            self.categories.len()
        } else {
            self.bin_count()
        }
    }

    pub fn bin_count(&self) -> usize {
        self.bin_edges
            .as_ref()
            .map(|e| e.len() - 1)
            .or(self.bins)
            .unwrap_or(DEFAULT_BINS)
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling.unwrap_or(Scaling {
            mean: 0.0,
            std: 1.0,
            constant: false,
        })
    }

    pub fn category_index(&self, value: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == value)
    }

    pub fn edges(&self) -> Result<&[f64]> {
        self.bin_edges
            .as_deref()
            .ok_or_else(|| NgmError::Schema(format!("feature `{}` has no bin edges", self.name)))
    }

    /// Bin index of a raw value; values outside the training range are
    /// clamped to the first/last bin.
    pub fn bin_of(&self, x: f64) -> Result<usize> {
        Ok(bin_index(self.edges()?, x))
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(NgmError::Schema("empty feature name".into()));
        }
        match self.kind {
            FeatureType::Categorical => {
                if self.categories.is_empty() {
                    return Err(NgmError::Schema(format!(
                        "categorical feature `{}` has no categories",
                        self.name
                    )));
                }
                let unique: BTreeSet<&String> = self.categories.iter().collect();
                if unique.len() != self.categories.len() {
                    return Err(NgmError::Schema(format!(
                        "categorical feature `{}` has duplicate categories",
                        self.name
                    )));
                }
            }
            FeatureType::Continuous | FeatureType::Ordinal => {
                if let Some(s) = self.scaling {
                    if !(s.std > 0.0) || !s.mean.is_finite() {
                        return Err(NgmError::Schema(format!("feature `{}` has invalid scaling", self.name)));
                    }
                }
                if let Some(m) = self.bins {
                    if m < 2 {
                        return Err(NgmError::Schema(format!(
                            "feature `{}` needs at least 2 bins",
                            self.name
                        )));
                    }
                }
                if let Some(e) = &self.bin_edges {
                    if e.len() < 3 || e.windows(2).any(|w| !(w[1] > w[0])) {
                        return Err(NgmError::Schema(format!(
                            "feature `{}` bin edges must be strictly increasing with >= 2 bins",
                            self.name
                        )));
                    }
                }
            }
        }
        if let Some(p) = &self.marginal {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(NgmError::Schema(format!(
                    "feature `{}` marginal is not a distribution",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

pub fn bin_index(edges: &[f64], x: f64) -> usize {
    let m = edges.len() - 1;
    if x <= edges[0] {
        return 0;
    }
    if x >= edges[m] {
        return m - 1;
    }
    // first edge strictly greater than x, minus one
    let upper = edges.partition_point(|&e| e <= x);
    (upper - 1).min(m - 1)
}

/// Equal-width edges over `[lo, hi]`; a degenerate range is widened to
/// `[lo - 0.5, hi + 0.5]`.
pub fn equal_width_edges(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let w = (hi - lo) / m as f64;
    let mut edges: Vec<f64> = (0..=m).map(|k| lo + w * k as f64).collect();
    edges[m] = hi;
    edges
}

/// Ordered list of feature specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        if features.is_empty() {
            return Err(NgmError::Schema("schema has no features".into()));
        }
        let mut names = BTreeSet::new();
        for f in &features {
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(NgmError::Schema(format!("duplicate feature `{}`", f.name)));
            }
        }
        Ok(Self { features })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            List(Vec<FeatureSpec>),
            Wrapped { features: Vec<FeatureSpec> },
        }
        let features = match serde_json::from_str::<Repr>(text)? {
            Repr::List(f) | Repr::Wrapped { features: f } => f,
        };
        Self::new(features)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NgmError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.features)?)
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &FeatureSpec {
        &self.features[i]
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| NgmError::Schema(format!("unknown feature `{name}`")))
    }

    pub fn unit_widths(&self) -> Vec<usize> {
        self.features.iter().map(FeatureSpec::unit_width).collect()
    }

    pub fn binned_widths(&self) -> Vec<usize> {
        self.features.iter().map(FeatureSpec::binned_width).collect()
    }

    pub fn unit_count(&self) -> usize {
        self.unit_widths().iter().sum()
    }

    /// Start offset of each feature's block in the standard layout.
    pub fn unit_offsets(&self) -> Vec<usize> {
        offsets(&self.unit_widths())
    }

    pub fn binned_offsets(&self) -> Vec<usize> {
        offsets(&self.binned_widths())
    }

    pub fn has_bins(&self) -> bool {
        self.features
            .iter()
            .all(|f| f.is_categorical() || f.bin_edges.is_some())
    }

    /// Infers a schema from raw string columns: numeric if every cell
    /// parses as `f64`, categorical otherwise (categories sorted).
    pub fn infer(names: &[String], cells: &[Vec<String>]) -> Result<Self> {
        let mut features = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            let numeric = cells.iter().all(|row| row[j].trim().parse::<f64>().is_ok());
            if numeric {
                features.push(FeatureSpec::continuous(name.clone()));
            } else {
                let cats: BTreeSet<String> = cells.iter().map(|row| row[j].trim().to_string()).collect();
                features.push(FeatureSpec::categorical(name.clone(), cats.into_iter().collect()));
            }
        }
        Self::new(features)
    }

    /// Fills in scaling, bin edges and empirical marginals from `ds`.
    /// Bin counts come from each feature's `bins` field or `default_bins`.
    pub fn fit(&self, ds: &Dataset, default_bins: usize) -> Result<FeatureSchema> {
        if default_bins < 2 {
            return Err(NgmError::Config("bin count must be >= 2".into()));
        }
        let mut out = self.clone();
        for (j, f) in out.features.iter_mut().enumerate() {
            match ds.column(j) {
                Column::Numeric(v) => {
                    let m = f.bins.unwrap_or(default_bins);
                    if m < 2 {
                        return Err(NgmError::Config(format!("feature `{}` needs at least 2 bins", f.name)));
                    }
                    f.scaling = Some(column_scaling(v));
                    let (lo, hi) = v
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                    let edges = equal_width_edges(lo, hi, m);
                    f.marginal = Some(histogram(v, &edges));
                    f.bin_edges = Some(edges);
                }
                Column::Categorical(v) => {
                    let mut counts = vec![0.0; f.categories.len()];
                    for &c in v {
                        counts[c] += 1.0;
                    }
                    let n = v.len() as f64;
                    f.marginal = Some(counts.into_iter().map(|c| c / n).collect());
                }
            }
        }
        Ok(out)
    }

    /// Standard-layout encoding of raw rows: standardized numerics and
    /// one-hot categoricals.
    pub fn encode(&self, ds: &Dataset) -> Result<DMatrix<f64>> {
        self.check(ds)?;
        let offsets = self.unit_offsets();
        let mut x = DMatrix::zeros(ds.rows(), self.unit_count());
        for (j, f) in self.features.iter().enumerate() {
            match ds.column(j) {
                Column::Numeric(v) => {
                    let s = f.scaling();
                    for (r, &val) in v.iter().enumerate() {
                        x[(r, offsets[j])] = s.forward(val);
                    }
                }
                Column::Categorical(v) => {
                    for (r, &c) in v.iter().enumerate() {
                        x[(r, offsets[j] + c)] = 1.0;
                    }
                }
            }
        }
        Ok(x)
    }

    /// Binned-layout encoding: numeric features become bin indicators.
    pub fn encode_binned(&self, ds: &Dataset) -> Result<DMatrix<f64>> {
        self.check(ds)?;
        let widths = self.binned_widths();
        let offsets = offsets(&widths);
        let mut x = DMatrix::zeros(ds.rows(), widths.iter().sum());
        for (j, f) in self.features.iter().enumerate() {
            match ds.column(j) {
                Column::Numeric(v) => {
                    let edges = f.edges()?;
                    for (r, &val) in v.iter().enumerate() {
                        x[(r, offsets[j] + bin_index(edges, val))] = 1.0;
                    }
                }
                Column::Categorical(v) => {
                    for (r, &c) in v.iter().enumerate() {
                        x[(r, offsets[j] + c)] = 1.0;
                    }
                }
            }
        }
        Ok(x)
    }

    /// Inverse of [`encode`](Self::encode): numerics are unscaled, one-hot
    /// blocks are decoded by argmax (lowest index on ties).
    pub fn decode(&self, x: &DMatrix<f64>) -> Result<Dataset> {
        if x.ncols() != self.unit_count() {
            return Err(NgmError::Dimension(format!(
                "encoded width {} does not match schema width {}",
                x.ncols(),
                self.unit_count()
            )));
        }
        let offsets = self.unit_offsets();
        let columns = self
            .features
            .iter()
            .enumerate()
            .map(|(j, f)| {
                if f.is_categorical() {
                    Column::Categorical(
                        (0..x.nrows())
                            .map(|r| argmax((0..f.unit_width()).map(|k| x[(r, offsets[j] + k)])))
                            .collect(),
                    )
                } else {
                    let s = f.scaling();
                    Column::Numeric((0..x.nrows()).map(|r| s.inverse(x[(r, offsets[j])])).collect())
                }
            })
            .collect();
        Dataset::new(self.clone(), columns)
    }

    /// Standard-layout vector of marginal means: 0 for standardized
    /// numerics, the uniform simplex point for categorical blocks.
    pub fn mean_units(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.unit_count());
        let offsets = self.unit_offsets();
        for (j, f) in self.features.iter().enumerate() {
            if f.is_categorical() {
                let k = f.categories.len();
                for c in 0..k {
                    v[offsets[j] + c] = 1.0 / k as f64;
                }
            }
        }
        v
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        if ds.schema().names() != self.names() {
            return Err(NgmError::Schema("dataset columns do not match the schema".into()));
        }
        for (j, f) in self.features.iter().enumerate() {
            match (ds.column(j), f.is_categorical()) {
                (Column::Categorical(v), true) => {
                    if v.iter().any(|&c| c >= f.categories.len()) {
                        return Err(NgmError::Schema(format!(
                            "feature `{}` has a category outside the schema",
                            f.name
                        )));
                    }
                }
                (Column::Numeric(_), false) => {}
                _ => {
                    return Err(NgmError::Schema(format!(
                        "column type of `{}` does not match the schema",
                        f.name
                    )))
                }
            }
        }
        Ok(())
    }
}

fn offsets(widths: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    widths
        .iter()
        .map(|w| {
            let o = acc;
            acc += w;
            o
        })
        .collect()
}

pub(crate) fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn column_scaling(v: &[f64]) -> Scaling {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 1e-12 * mean.abs().max(1.0) {
        Scaling {
            mean,
            std,
            constant: false,
        }
    } else {
        Scaling {
            mean,
            std: 1.0,
            constant: true,
        }
    }
}

fn histogram(v: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut counts = vec![0.0; edges.len() - 1];
    for &x in v {
        counts[bin_index(edges, x)] += 1.0;
    }
    let n = v.len() as f64;
    counts.into_iter().map(|c| c / n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    /// Category indices into the schema's category list.
    Categorical(Vec<usize>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `M` rows of `D` typed raw columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    columns: Vec<Column>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, columns: Vec<Column>) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(NgmError::Dimension(format!(
                "{} columns for {} schema features",
                columns.len(),
                schema.len()
            )));
        }
        let m = columns[0].len();
        if m == 0 {
            return Err(NgmError::Data("dataset has no rows".into()));
        }
        if columns.iter().any(|c| c.len() != m) {
            return Err(NgmError::Data("columns have different lengths".into()));
        }
        for (c, f) in columns.iter().zip(schema.features()) {
            match (c, f.is_categorical()) {
                (Column::Numeric(v), false) => {
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(NgmError::Data(format!("non-finite value in `{}`", f.name)));
                    }
                }
                (Column::Categorical(v), true) => {
                    if v.iter().any(|&i| i >= f.categories.len()) {
                        return Err(NgmError::Data(format!("category index out of range in `{}`", f.name)));
                    }
                }
                _ => {
                    return Err(NgmError::Schema(format!(
                        "column type of `{}` does not match the schema",
                        f.name
                    )))
                }
            }
        }
        Ok(Self { schema, columns })
    }

    /// All-continuous dataset from a row-major matrix.
    pub fn from_matrix(names: &[String], x: &DMatrix<f64>) -> Result<Self> {
        if names.len() != x.ncols() {
            return Err(NgmError::Dimension("name count does not match columns".into()));
        }
        let schema = FeatureSchema::new(names.iter().map(|n| FeatureSpec::continuous(n.clone())).collect())?;
        let columns = (0..x.ncols())
            .map(|j| Column::Numeric(x.column(j).iter().copied().collect()))
            .collect();
        Self::new(schema, columns)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    pub fn rows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    /// Replaces the schema (e.g. with a fitted one). Names and types must
    /// agree with the current columns.
    pub fn with_schema(self, schema: FeatureSchema) -> Result<Self> {
        if schema.names() != self.schema.names() {
            return Err(NgmError::Schema("schema names differ from dataset columns".into()));
        }
        Dataset::new(schema, self.columns)
    }

    /// Numeric column values as a dense matrix (categorical columns as
    /// category index).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.cols(), |r, c| match &self.columns[c] {
            Column::Numeric(v) => v[r],
            Column::Categorical(v) => v[r] as f64,
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Dataset> {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                Column::Numeric(v) => Column::Numeric(idx.iter().map(|&i| v[i]).collect()),
                Column::Categorical(v) => Column::Categorical(idx.iter().map(|&i| v[i]).collect()),
            })
            .collect();
        Dataset::new(self.schema.clone(), columns)
    }

    /// Cell rendered as text: numbers with full round-trip precision,
    /// categories by name.
    pub fn cell_string(&self, r: usize, c: usize) -> String {
        match &self.columns[c] {
            Column::Numeric(v) => format!("{}", v[r]),
            Column::Categorical(v) => self.schema.feature(c).categories[v[r]].clone(),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.schema.names())?;
        for r in 0..self.rows() {
            wr.write_record((0..self.cols()).map(|c| self.cell_string(r, c)))?;
        }
        wr.flush().map_err(|e| NgmError::io("<csv output>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| NgmError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Reads a CSV with a header row. When `schema` is absent it is inferred;
/// explicit schemas keep their own category order.
pub fn read_csv<R: Read>(reader: R, schema: Option<&FeatureSchema>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if names.is_empty() {
        return Err(NgmError::Data("missing header row".into()));
    }
    let mut cells: Vec<Vec<String>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.len() != names.len() {
            return Err(NgmError::Data(format!(
                "ragged row at line {line}: expected {} fields, found {}",
                names.len(),
                rec.len()
            )));
        }
        let row: Vec<String> = rec.iter().map(|s| s.trim().to_string()).collect();
        for (j, cell) in row.iter().enumerate() {
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(NgmError::Cell {
                    line,
                    column: names[j].clone(),
                    message: "missing value".into(),
                });
            }
        }
        cells.push(row);
    }
    if cells.is_empty() {
        return Err(NgmError::Data("no data rows".into()));
    }
    let schema = match schema {
        Some(s) => {
            if s.names() != names {
                return Err(NgmError::Schema(format!(
                    "CSV header {names:?} does not match schema {:?}",
                    s.names()
                )));
            }
            s.clone()
        }
        None => FeatureSchema::infer(&names, &cells)?,
    };
    let mut columns = Vec::with_capacity(names.len());
    for (j, f) in schema.features().iter().enumerate() {
        if f.is_categorical() {
            let mut v = Vec::with_capacity(cells.len());
            for (r, row) in cells.iter().enumerate() {
                let idx = f.category_index(&row[j]).ok_or_else(|| NgmError::Cell {
                    line: r + 2,
                    column: f.name.clone(),
                    message: format!("unknown category `{}`", row[j]),
                })?;
                v.push(idx);
            }
            columns.push(Column::Categorical(v));
        } else {
            let mut v = Vec::with_capacity(cells.len());
            for (r, row) in cells.iter().enumerate() {
                let x: f64 = row[j].parse().map_err(|_| NgmError::Cell {
                    line: r + 2,
                    column: f.name.clone(),
                    message: format!("cannot parse `{}` as a number", row[j]),
                })?;
                if !x.is_finite() {
                    return Err(NgmError::Cell {
                        line: r + 2,
                        column: f.name.clone(),
                        message: "non-finite number".into(),
                    });
                }
                v.push(x);
            }
            columns.push(Column::Numeric(v));
        }
    }
    Dataset::new(schema, columns)
}

pub fn load_csv(path: &Path, schema: Option<&FeatureSchema>) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| NgmError::io(path, e))?;
    read_csv(std::io::BufReader::new(f), schema)
}

/// Standardizes numeric columns to zero mean and unit variance. Constant
/// columns are only centred and flagged in the returned schema.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, FeatureSchema)> {
    let mut specs = ds.schema().features().to_vec();
    let mut columns = Vec::with_capacity(ds.cols());
    for (spec, col) in specs.iter_mut().zip(ds.columns()) {
        match col {
            Column::Numeric(v) => {
                let s = column_scaling(v);
                spec.scaling = Some(s);
                columns.push(Column::Numeric(v.iter().map(|&x| s.forward(x)).collect()));
            }
            c => columns.push(c.clone()),
        }
    }
    let schema = FeatureSchema::new(specs)?;
    let standardized = Dataset::new(ds.schema().clone(), columns)?;
    Ok((standardized, schema))
}

/// Inverse of [`standardize`].
pub fn unstandardize(ds: &Dataset, schema: &FeatureSchema) -> Result<Dataset> {
    let columns = ds
        .columns()
        .iter()
        .zip(schema.features())
        .map(|(c, f)| match c {
            Column::Numeric(v) => {
                let s = f.scaling();
                Column::Numeric(v.iter().map(|&z| s.inverse(z)).collect())
            }
            c => c.clone(),
        })
        .collect();
    Dataset::new(ds.schema().clone(), columns)
}

/// Relative-frequency histogram of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Category names or `[lo, hi)` bin labels.
    pub support: Vec<String>,
    pub probabilities: Vec<f64>,
    /// Bin edges for numeric features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
}

pub fn empirical_marginal(ds: &Dataset, feature: usize, bins: usize) -> Result<Histogram> {
    if feature >= ds.cols() {
        return Err(NgmError::Schema(format!("feature index {feature} out of range")));
    }
    let spec = ds.schema().feature(feature);
    match ds.column(feature) {
        Column::Categorical(v) => {
            let mut counts = vec![0.0; spec.categories.len()];
            for &c in v {
                counts[c] += 1.0;
            }
            let n = v.len() as f64;
            Ok(Histogram {
                support: spec.categories.clone(),
                probabilities: counts.into_iter().map(|c| c / n).collect(),
                edges: None,
            })
        }
        Column::Numeric(v) => {
            if bins < 1 {
                return Err(NgmError::Config("histogram needs at least one bin".into()));
            }
            let edges = match &spec.bin_edges {
                Some(e) => e.clone(),
                None => {
                    let (lo, hi) = v
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                    equal_width_edges(lo, hi, bins)
                }
            };
            let probabilities = histogram(v, &edges);
            let support = edges.windows(2).map(|w| format!("[{}, {})", w[0], w[1])).collect();
            Ok(Histogram {
                support,
                probabilities,
                edges: Some(edges),
            })
        }
    }
}
