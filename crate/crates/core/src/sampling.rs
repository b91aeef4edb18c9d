//! Ancestral-style sampling: features are visited in a graph ordering and
//! each one is drawn from its conditional given everything fixed so far.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset, FeatureSpec};
use crate::error::{NgmError, Result};
use crate::graph::{bfs_from_sources, bfs_order, topological_order, DependencyGraph};
use crate::inference::{conditional_distribution, InferenceQuery, Value, DEFAULT_EPS_CLIP};
use crate::learning::NgmModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingMode {
    /// Breadth-first from a random start feature, drawn per sample.
    #[default]
    Bfs,
    /// One fixed topological order; the graph must be a DAG.
    Topological,
}

impl FromStr for OrderingMode {
    type Err = NgmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bfs" => Ok(Self::Bfs),
            "topological" | "topo" => Ok(Self::Topological),
            other => Err(NgmError::Config(format!(
                "unknown ordering `{other}`, expected bfs or topological"
            ))),
        }
    }
}

impl fmt::Display for OrderingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bfs => "bfs",
            Self::Topological => "topological",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub count: usize,
    pub ordering: OrderingMode,
    pub seed: u64,
    /// Features fixed in every sample before the walk starts.
    pub presets: BTreeMap<String, Value>,
    pub eps_clip: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            count: 100,
            ordering: OrderingMode::Bfs,
            seed: 0,
            presets: BTreeMap::new(),
            eps_clip: DEFAULT_EPS_CLIP,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(NgmError::Config("sample count must be >= 1".into()));
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return Err(NgmError::Config("clip epsilon must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One complete assignment in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub values: Vec<Value>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub data: Dataset,
    /// Per-sample warnings prefixed with the sample index.
    pub warnings: Vec<String>,
}

/// Value drawn from `probabilities` over the feature's support: a category,
/// or a uniform point inside the chosen bin. Constant columns return their
/// constant.
pub fn draw_value<R: Rng + ?Sized>(spec: &FeatureSpec, probabilities: &[f64], rng: &mut R) -> Result<Value> {
    if let Some(s) = spec.scaling.filter(|s| s.constant && spec.is_numeric()) {
        return Ok(Value::Number(s.mean));
    }
    let idx = WeightedIndex::new(probabilities)
        .map_err(|e| NgmError::Numerical(format!("cannot draw `{}`: {e}", spec.name)))?
        .sample(rng);
    if spec.is_categorical() {
        return Ok(Value::Category(spec.categories[idx].clone()));
    }
    let edges = spec.edges()?;
    if idx + 1 >= edges.len() {
        return Err(NgmError::Dimension(format!("`{}` has no bin {idx}", spec.name)));
    }
    let (lo, hi) = (edges[idx], edges[idx + 1]);
    Ok(Value::Number(if hi > lo { rng.random_range(lo..hi) } else { lo }))
}

/// Draw from the feature's empirical marginal.
pub fn draw_marginal<R: Rng + ?Sized>(spec: &FeatureSpec, rng: &mut R) -> Result<Value> {
    let p = spec
        .marginal
        .as_ref()
        .ok_or_else(|| NgmError::Schema(format!("feature `{}` has no fitted marginal", spec.name)))?;
    draw_value(spec, p, rng)
}

/// Walks `ordering` (schema indices, a permutation) and fixes every feature
/// in turn. The first free feature comes from its marginal when nothing is
/// preset; the rest come from conditionals given all fixed features.
pub fn get_sample<R: Rng + ?Sized>(
    model: &NgmModel,
    ordering: &[usize],
    presets: &BTreeMap<String, Value>,
    eps_clip: f64,
    rng: &mut R,
) -> Result<Sample> {
    let schema = &model.schema;
    let d = schema.len();
    let mut seen = vec![false; d];
    if ordering.len() != d
        || ordering
            .iter()
            .any(|&j| j >= d || std::mem::replace(&mut seen[j], true))
    {
        return Err(NgmError::Config(format!(
            "ordering {ordering:?} is not a permutation of {d} features"
        )));
    }
    InferenceQuery::new(presets.clone(), Vec::new()).validate(schema)?;
    let mut known = presets.clone();
    let mut warnings = Vec::new();
    for &j in ordering {
        let spec = schema.feature(j);
        if known.contains_key(&spec.name) {
            continue;
        }
        let value = if known.is_empty() {
            draw_marginal(spec, rng)?
        } else {
            let q = InferenceQuery::new(known.clone(), vec![spec.name.clone()]);
            let dist = conditional_distribution(model, &q, &spec.name, eps_clip)?;
            if !dist.converged {
                warnings.push(format!("inference for `{}` did not converge", spec.name));
            }
            draw_value(spec, &dist.probabilities, rng)?
        };
        known.insert(spec.name.clone(), value);
    }
    let values = schema.names().iter().map(|n| known[n].clone()).collect();
    Ok(Sample { values, warnings })
}

fn schema_index_map(model: &NgmModel, graph: &DependencyGraph) -> Result<Vec<usize>> {
    let schema = &model.schema;
    if graph.len() != schema.len() {
        return Err(NgmError::Graph(format!(
            "graph has {} nodes but the model has {} features",
            graph.len(),
            schema.len()
        )));
    }
    graph.nodes().iter().map(|n| schema.index_of(n)).collect()
}

/// Visiting order (schema indices) for one sample.
pub fn sample_order<R: Rng + ?Sized>(
    model: &NgmModel,
    graph: &DependencyGraph,
    mode: OrderingMode,
    presets: &BTreeMap<String, Value>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let to_schema = schema_index_map(model, graph)?;
    let order = match mode {
        OrderingMode::Topological => topological_order(graph)?,
        OrderingMode::Bfs if presets.is_empty() => bfs_order(graph, rng.random_range(0..graph.len()))?,
        OrderingMode::Bfs => {
            let sources = presets.keys().map(|k| graph.index_of(k)).collect::<Result<Vec<_>>>()?;
            bfs_from_sources(&graph.adjacency(), &sources)
        }
    };
    Ok(order.into_iter().map(|g| to_schema[g]).collect())
}

/// Independent random stream of sample `index`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `cfg.count` samples drawn in parallel. Sample `i` uses its own stream
/// derived from `(seed, i)`, so the table does not depend on thread count.
pub fn sample_batch(model: &NgmModel, graph: &DependencyGraph, cfg: &SamplerConfig) -> Result<SampleTable> {
    cfg.validate()?;
    schema_index_map(model, graph)?;
    if cfg.ordering == OrderingMode::Topological {
        graph.ensure_dag()?;
    }
    let samples = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, i as u64);
            let order = sample_order(model, graph, cfg.ordering, &cfg.presets, &mut rng)?;
            get_sample(model, &order, &cfg.presets, cfg.eps_clip, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let schema = &model.schema;
    let mut columns: Vec<Column> = schema
        .features()
        .iter()
        .map(|f| {
            if f.is_categorical() {
                Column::Categorical(Vec::with_capacity(cfg.count))
            } else {
                Column::Numeric(Vec::with_capacity(cfg.count))
            }
        })
        .collect();
    let mut warnings = Vec::new();
    for (i, s) in samples.into_iter().enumerate() {
        for (j, v) in s.values.into_iter().enumerate() {
            let f = schema.feature(j);
            match (&mut columns[j], v) {
                (Column::Numeric(c), Value::Number(x)) => c.push(x),
                (Column::Categorical(c), Value::Category(name)) => c.push(
                    f.category_index(&name)
                        .ok_or_else(|| NgmError::Config(format!("`{name}` is not a category of `{}`", f.name)))?,
                ),
                (_, v) => return Err(NgmError::Config(format!("invalid value `{v}` for `{}`", f.name))),
            }
        }
        warnings.extend(s.warnings.into_iter().map(|w| format!("sample {i}: {w}")));
    }
    Ok(SampleTable {
        data: Dataset::new(schema.clone(), columns)?,
        warnings,
    })
}
