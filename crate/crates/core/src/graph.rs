//! Feature dependency graphs and the binary masks derived from them.
//!
//! A [`DependencyGraph`] is the user-supplied belief about which features
//! depend on which. A [`DependencyMask`] is the binary input-unit x output-unit
//! matrix that the neural view is trained to respect: entry `[i, o] = 1` means
//! output `o` may depend on input `i`.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;
use crate::error::{NgmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Directed,
    Undirected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sign::Positive => f.write_str("+"),
            Sign::Negative => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub kind: EdgeKind,
    pub sign: Option<Sign>,
    pub weight: Option<f64>,
}

/// Directed, undirected or mixed-edge graph over named features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyGraph {
    nodes: Vec<String>,
    edges: Vec<Edge>,
}

impl DependencyGraph {
    /// Builds a graph, rejecting duplicate names, dangling endpoints and
    /// self-loops.
    pub fn new(nodes: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if !seen.insert(n.as_str()) {
                return Err(NgmError::Graph(format!("duplicate node name `{n}`")));
            }
        }
        for e in &edges {
            if e.source >= nodes.len() || e.target >= nodes.len() {
                return Err(NgmError::Graph(format!(
                    "edge ({}, {}) references a node outside 0..{}",
                    e.source,
                    e.target,
                    nodes.len()
                )));
            }
            if e.source == e.target {
                return Err(NgmError::Graph(format!("self-loop on `{}`", nodes[e.source])));
            }
        }
        Ok(Self { nodes, edges })
    }

    /// Convenience constructor from `(source, target, kind)` name triples.
    pub fn from_named<S: AsRef<str>>(nodes: &[S], edges: &[(S, S, EdgeKind)]) -> Result<Self> {
        let nodes: Vec<String> = nodes.iter().map(|s| s.as_ref().to_string()).collect();
        let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut out = Vec::with_capacity(edges.len());
        for (s, t, kind) in edges {
            let source = *index
                .get(s.as_ref())
                .ok_or_else(|| NgmError::UnknownNode(s.as_ref().to_string()))?;
            let target = *index
                .get(t.as_ref())
                .ok_or_else(|| NgmError::UnknownNode(t.as_ref().to_string()))?;
            out.push(Edge {
                source,
                target,
                kind: *kind,
                sign: None,
                weight: None,
            });
        }
        Self::new(nodes, out)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| NgmError::UnknownNode(name.to_string()))
    }

    pub fn has_directed(&self) -> bool {
        self.edges.iter().any(|e| e.kind == EdgeKind::Directed)
    }

    pub fn has_undirected(&self) -> bool {
        self.edges.iter().any(|e| e.kind == EdgeKind::Undirected)
    }

    /// Undirected neighbour sets, sorted ascending. Directed edges are
    /// treated as undirected here.
    pub fn adjacency(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.source].insert(e.target);
            adj[e.target].insert(e.source);
        }
        adj
    }

    fn parents(&self) -> Vec<BTreeSet<usize>> {
        let mut parents = vec![BTreeSet::new(); self.nodes.len()];
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::Directed) {
            parents[e.target].insert(e.source);
        }
        parents
    }

    fn children(&self) -> Vec<BTreeSet<usize>> {
        let mut children = vec![BTreeSet::new(); self.nodes.len()];
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::Directed) {
            children[e.source].insert(e.target);
        }
        children
    }

    /// Returns one directed cycle (as node names, first node repeated at the
    /// end) if the directed part of the graph has one.
    pub fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let children = self.children();
        let n = self.nodes.len();
        let mut mark = vec![Mark::White; n];
        let mut parent = vec![usize::MAX; n];
        for root in 0..n {
            if mark[root] != Mark::White {
                continue;
            }
            // iterative DFS with explicit child cursors
            let mut stack: Vec<(usize, Vec<usize>)> = vec![(root, children[root].iter().copied().collect())];
            mark[root] = Mark::Grey;
            while let Some((node, pending)) = stack.last_mut() {
                let node = *node;
                if let Some(next) = pending.pop() {
                    match mark[next] {
                        Mark::White => {
                            parent[next] = node;
                            mark[next] = Mark::Grey;
                            stack.push((next, children[next].iter().copied().collect()));
                        }
                        Mark::Grey => {
                            let mut cycle = vec![next];
                            let mut cur = node;
                            while cur != next {
                                cycle.push(cur);
                                cur = parent[cur];
                            }
                            cycle.push(next);
                            cycle.reverse();
                            return Some(cycle.into_iter().map(|i| self.nodes[i].clone()).collect());
                        }
                        Mark::Black => {}
                    }
                } else {
                    mark[node] = Mark::Black;
                    stack.pop();
                }
            }
        }
        None
    }

    pub fn ensure_dag(&self) -> Result<()> {
        if self.has_undirected() {
            return Err(NgmError::GraphMode(
                "expected a DAG but the graph has undirected edges".into(),
            ));
        }
        match self.find_cycle() {
            Some(c) => Err(NgmError::Cycle(c)),
            None => Ok(()),
        }
    }

    /// Undirected graph obtained by connecting co-parents of every node and
    /// dropping edge directions. Undirected edges are kept as they are.
    pub fn moralize(&self) -> DependencyGraph {
        let parents = self.parents();
        let mut pairs = BTreeSet::new();
        for e in &self.edges {
            pairs.insert((e.source.min(e.target), e.source.max(e.target)));
        }
        for ps in &parents {
            let ps: Vec<usize> = ps.iter().copied().collect();
            for (a, &p) in ps.iter().enumerate() {
                for &q in &ps[a + 1..] {
                    pairs.insert((p.min(q), p.max(q)));
                }
            }
        }
        let edges = pairs
            .into_iter()
            .map(|(s, t)| Edge {
                source: s,
                target: t,
                kind: EdgeKind::Undirected,
                sign: None,
                weight: None,
            })
            .collect();
        DependencyGraph {
            nodes: self.nodes.clone(),
            edges,
        }
    }

    /// Reads a tab-separated edge list (`source<TAB>target<TAB>kind[<TAB>sign[<TAB>weight]]`).
    /// The node universe comes from `nodes`, typically the dataset schema.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse_edge_list(text: &str, nodes: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 || fields.len() > 5 {
                return Err(NgmError::Graph(format!(
                    "line {}: expected 3 to 5 tab-separated fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let lookup = |name: &str| {
                index
                    .get(name.trim())
                    .copied()
                    .ok_or_else(|| NgmError::UnknownNode(name.trim().to_string()))
            };
            let source = lookup(fields[0])?;
            let target = lookup(fields[1])?;
            let kind = match fields[2].trim() {
                "directed" | "->" => EdgeKind::Directed,
                "undirected" | "--" => EdgeKind::Undirected,
                other => {
                    return Err(NgmError::Graph(format!(
                        "line {}: unknown edge kind `{other}`",
                        lineno + 1
                    )))
                }
            };
            let sign = match fields.get(3).map(|s| s.trim()) {
                None | Some("") => None,
                Some("+") => Some(Sign::Positive),
                Some("-") => Some(Sign::Negative),
                Some(other) => {
                    return Err(NgmError::Graph(format!(
                        "line {}: unknown edge sign `{other}`",
                        lineno + 1
                    )))
                }
            };
            let weight = match fields.get(4).map(|s| s.trim()) {
                None | Some("") => None,
                Some(w) => Some(
                    w.parse::<f64>()
                        .map_err(|_| NgmError::Graph(format!("line {}: bad edge weight `{w}`", lineno + 1)))?,
                ),
            };
            edges.push(Edge {
                source,
                target,
                kind,
                sign,
                weight,
            });
        }
        Self::new(nodes.to_vec(), edges)
    }

    /// Reads a square 0/1 adjacency matrix in CSV with a header row of
    /// feature names. Symmetric entries become undirected edges, one-sided
    /// entries become directed edges (row -> column).
    pub fn parse_adjacency_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let nodes: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let d = nodes.len();
        let mut adj = vec![vec![false; d]; d];
        let mut rows = 0;
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            if r >= d {
                return Err(NgmError::Graph(format!("adjacency matrix has more than {d} rows")));
            }
            if record.len() != d {
                return Err(NgmError::Graph(format!(
                    "adjacency row {} has {} entries, expected {d}",
                    r + 1,
                    record.len()
                )));
            }
            for (c, cell) in record.iter().enumerate() {
                adj[r][c] = match cell.trim() {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(NgmError::Graph(format!(
                            "adjacency entry ({}, {}) must be 0 or 1, got `{other}`",
                            r + 1,
                            c + 1
                        )))
                    }
                };
            }
            rows += 1;
        }
        if rows != d {
            return Err(NgmError::Graph(format!(
                "adjacency matrix has {rows} rows, expected {d}"
            )));
        }
        let mut edges = Vec::new();
        for i in 0..d {
            for j in 0..d {
                if i == j || !adj[i][j] {
                    continue;
                }
                if adj[j][i] {
                    if i < j {
                        edges.push(Edge {
                            source: i,
                            target: j,
                            kind: EdgeKind::Undirected,
                            sign: None,
                            weight: None,
                        });
                    }
                } else {
                    edges.push(Edge {
                        source: i,
                        target: j,
                        kind: EdgeKind::Directed,
                        sign: None,
                        weight: None,
                    });
                }
            }
        }
        Self::new(nodes, edges)
    }

    /// Loads either format; `.csv` files are read as adjacency matrices.
    pub fn load(path: &Path, nodes: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NgmError::io(path, e))?;
        let is_csv = path.extension().map(|e| e.eq_ignore_ascii_case("csv")).unwrap_or(false);
        let g = if is_csv {
            Self::parse_adjacency_csv(&text)?
        } else {
            Self::parse_edge_list(&text, nodes)?
        };
        if is_csv && g.nodes() != nodes {
            return Err(NgmError::Graph(format!(
                "adjacency header {:?} does not match data columns {:?}",
                g.nodes(),
                nodes
            )));
        }
        Ok(g)
    }

    /// Writes the tab-separated edge-list format.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(&self.nodes[e.source]);
            out.push('\t');
            out.push_str(&self.nodes[e.target]);
            out.push('\t');
            out.push_str(match e.kind {
                EdgeKind::Directed => "directed",
                EdgeKind::Undirected => "undirected",
            });
            if e.sign.is_some() || e.weight.is_some() {
                out.push('\t');
                if let Some(s) = e.sign {
                    out.push_str(&s.to_string());
                }
            }
            if let Some(w) = e.weight {
                out.push('\t');
                out.push_str(&format!("{w}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Row/column label of a mask entry: the owning feature and the unit's
/// offset inside that feature's block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitLabel {
    pub feature: String,
    pub sub: usize,
}

impl UnitLabel {
    pub fn new(feature: impl Into<String>, sub: usize) -> Self {
        Self {
            feature: feature.into(),
            sub,
        }
    }
}

/// Binary allowed-dependency matrix, input units (rows) x output units (cols).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyMask {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
    row_labels: Vec<UnitLabel>,
    col_labels: Vec<UnitLabel>,
}

impl DependencyMask {
    pub fn from_fn(
        row_labels: Vec<UnitLabel>,
        col_labels: Vec<UnitLabel>,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let rows = row_labels.len();
        let cols = col_labels.len();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(u8::from(f(i, j)));
            }
        }
        Self {
            rows,
            cols,
            data,
            row_labels,
            col_labels,
        }
    }

    /// Square mask over named features with `(name, 0)` labels.
    pub fn square(names: &[String], f: impl FnMut(usize, usize) -> bool) -> Self {
        let labels: Vec<UnitLabel> = names.iter().map(|n| UnitLabel::new(n.clone(), 0)).collect();
        Self::from_fn(labels.clone(), labels, f)
    }

    /// Builds a mask from nested 0/1 rows with generated labels `f0, f1, ...`.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(NgmError::Dimension("ragged mask rows".into()));
        }
        if rows.iter().flatten().any(|&v| v > 1) {
            return Err(NgmError::Dimension("mask entries must be 0 or 1".into()));
        }
        let rl = (0..r).map(|i| UnitLabel::new(format!("f{i}"), 0)).collect();
        let cl = (0..c).map(|i| UnitLabel::new(format!("f{i}"), 0)).collect();
        Ok(Self::from_fn(rl, cl, |i, j| rows[i][j] == 1))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j] == 1
    }

    pub fn row_labels(&self) -> &[UnitLabel] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[UnitLabel] {
        &self.col_labels
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.data
            .chunks(self.cols.max(1))
            .take(self.rows)
            .map(<[u8]>::to_vec)
            .collect()
    }

    /// Dense `f64` copy, rows = input units.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| f64::from(self.data[i * self.cols + j]))
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Elementwise `1 - s`.
    pub fn complement(&self) -> DependencyMask {
        DependencyMask {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| 1 - v).collect(),
            row_labels: self.row_labels.clone(),
            col_labels: self.col_labels.clone(),
        }
    }

    /// Block expansion: every raw row `i` becomes `row_widths[i]` unit rows,
    /// every raw column `j` becomes `col_widths[j]` unit columns, and each
    /// block is filled with the raw entry.
    pub fn expand(&self, row_widths: &[usize], col_widths: &[usize]) -> Result<DependencyMask> {
        if row_widths.len() != self.rows || col_widths.len() != self.cols {
            return Err(NgmError::Dimension(format!(
                "mask is {}x{} but {} row widths and {} column widths were given",
                self.rows,
                self.cols,
                row_widths.len(),
                col_widths.len()
            )));
        }
        if row_widths.iter().chain(col_widths).any(|&w| w == 0) {
            return Err(NgmError::Dimension("block widths must be >= 1".into()));
        }
        let (row_labels, row_owner) = expand_labels(&self.row_labels, row_widths);
        let (col_labels, col_owner) = expand_labels(&self.col_labels, col_widths);
        Ok(DependencyMask::from_fn(row_labels, col_labels, |i, j| {
            self.get(row_owner[i], col_owner[j])
        }))
    }

    /// Copy with every diagonal feature block cleared, i.e. no input unit of a
    /// feature may reach an output unit of the same feature.
    pub fn without_self_paths(&self) -> DependencyMask {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.row_labels[i].feature == self.col_labels[j].feature {
                    out.data[i * self.cols + j] = 0;
                }
            }
        }
        out
    }

    /// Copy with `feature`'s input rows replaced by `width` rows that share
    /// the original row pattern. Used for one-hot and bin expansion of a
    /// single input feature.
    pub fn with_row_labels(&self, labels: Vec<UnitLabel>) -> Result<DependencyMask> {
        if labels.len() != self.rows {
            return Err(NgmError::Dimension("row label count mismatch".into()));
        }
        let mut out = self.clone();
        out.row_labels = labels;
        Ok(out)
    }

    pub fn with_col_labels(&self, labels: Vec<UnitLabel>) -> Result<DependencyMask> {
        if labels.len() != self.cols {
            return Err(NgmError::Dimension("column label count mismatch".into()));
        }
        let mut out = self.clone();
        out.col_labels = labels;
        Ok(out)
    }
}

fn expand_labels(labels: &[UnitLabel], widths: &[usize]) -> (Vec<UnitLabel>, Vec<usize>) {
    let mut out = Vec::new();
    let mut owner = Vec::new();
    for (i, (label, &w)) in labels.iter().zip(widths).enumerate() {
        for sub in 0..w {
            out.push(UnitLabel::new(label.feature.clone(), sub));
            owner.push(i);
        }
    }
    (out, owner)
}

/// Mask of an undirected graph: `mask[i, j] = 1` iff `i == j` or `{i, j}` is
/// an edge.
pub fn neighbor_mask(g: &DependencyGraph) -> Result<DependencyMask> {
    if g.has_directed() {
        return Err(NgmError::GraphMode(
            "neighbor mask requires an undirected graph; use markov_blanket_mask or dependency_mask".into(),
        ));
    }
    let adj = g.adjacency();
    Ok(DependencyMask::square(g.nodes(), |i, j| i == j || adj[i].contains(&j)))
}

/// Markov blanket members of every node: parents, children and co-parents.
pub fn markov_blankets(g: &DependencyGraph) -> Result<Vec<BTreeSet<usize>>> {
    g.ensure_dag()?;
    let parents = g.parents();
    let children = g.children();
    let mut mb = vec![BTreeSet::new(); g.len()];
    for v in 0..g.len() {
        mb[v].extend(parents[v].iter().copied());
        for &c in &children[v] {
            mb[v].insert(c);
            mb[v].extend(parents[c].iter().copied().filter(|&p| p != v));
        }
    }
    Ok(mb)
}

/// Mask of a DAG: `mask[i, j] = 1` iff `i == j` or `i` is in the Markov
/// blanket of `j`.
pub fn markov_blanket_mask(g: &DependencyGraph) -> Result<DependencyMask> {
    let mb = markov_blankets(g)?;
    Ok(DependencyMask::square(g.nodes(), |i, j| i == j || mb[j].contains(&i)))
}

/// Mask for any graph mode: undirected graphs use neighbourhoods, DAGs use
/// Markov blankets, mixed graphs are moralized first.
pub fn dependency_mask(g: &DependencyGraph) -> Result<DependencyMask> {
    match (g.has_directed(), g.has_undirected()) {
        (false, _) => neighbor_mask(g),
        (true, false) => markov_blanket_mask(g),
        (true, true) => neighbor_mask(&g.moralize()),
    }
}

/// Undirected graph over a square feature-level mask: `{i, j}` is an edge
/// when either direction is allowed.
pub fn mask_graph(s: &DependencyMask) -> Result<DependencyGraph> {
    if s.rows() != s.cols() {
        return Err(NgmError::Dimension("mask must be square to define a graph".into()));
    }
    let nodes: Vec<String> = s.row_labels().iter().map(|l| l.feature.clone()).collect();
    let mut edges = Vec::new();
    for i in 0..s.rows() {
        for j in i + 1..s.cols() {
            if s.get(i, j) || s.get(j, i) {
                edges.push(Edge {
                    source: i,
                    target: j,
                    kind: EdgeKind::Undirected,
                    sign: None,
                    weight: None,
                });
            }
        }
    }
    DependencyGraph::new(nodes, edges)
}

pub fn complement_mask(s: &DependencyMask) -> DependencyMask {
    s.complement()
}

/// Expands a square raw-feature mask to the unit layout of `schema`
/// (one-hot width for categorical features, 1 for numeric ones).
pub fn expand_mask(s: &DependencyMask, schema: &FeatureSchema) -> Result<DependencyMask> {
    if s.rows() != schema.len() || s.cols() != schema.len() {
        return Err(NgmError::Dimension(format!(
            "mask is {}x{} but schema has {} features",
            s.rows(),
            s.cols(),
            schema.len()
        )));
    }
    let widths = schema.unit_widths();
    s.expand(&widths, &widths)
}

/// Breadth-first ordering from `start`. Neighbours are queued in ascending
/// index order; remaining components are appended, each seeded by its
/// lowest-index node.
pub fn bfs_order(g: &DependencyGraph, start: usize) -> Result<Vec<usize>> {
    if start >= g.len() {
        return Err(NgmError::UnknownNode(format!("index {start}")));
    }
    if g.has_directed() {
        return Err(NgmError::GraphMode("BFS ordering expects an undirected graph".into()));
    }
    Ok(bfs_from_sources(&g.adjacency(), &[start]))
}

/// Multi-source BFS used when some features are pre-set: all `sources` come
/// first (in the given order), then the traversal spreads outward.
pub fn bfs_from_sources(adj: &[BTreeSet<usize>], sources: &[usize]) -> Vec<usize> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    for &s in sources {
        if !seen[s] {
            seen[s] = true;
            order.push(s);
            queue.push_back(s);
        }
    }
    loop {
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    order.push(w);
                    queue.push_back(w);
                }
            }
        }
        match (0..n).find(|&i| !seen[i]) {
            Some(seed) => {
                seen[seed] = true;
                order.push(seed);
                queue.push_back(seed);
            }
            None => break,
        }
    }
    order
}

/// Kahn's algorithm with ascending-index tie-breaking.
pub fn topological_order(g: &DependencyGraph) -> Result<Vec<usize>> {
    g.ensure_dag()?;
    let children = g.children();
    let mut indegree = vec![0usize; g.len()];
    for cs in &children {
        for &c in cs {
            indegree[c] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| Reverse(i))
        .collect();
    let mut order = Vec::with_capacity(g.len());
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() != g.len() {
        return Err(NgmError::Cycle(g.find_cycle().unwrap_or_default()));
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    fn undirected(nodes: &[&str], edges: &[(&str, &str)]) -> DependencyGraph {
        let e: Vec<_> = edges.iter().map(|(a, b)| (*a, *b, EdgeKind::Undirected)).collect();
        DependencyGraph::from_named(nodes, &e).unwrap()
    }

    fn directed(nodes: &[&str], edges: &[(&str, &str)]) -> DependencyGraph {
        let e: Vec<_> = edges.iter().map(|(a, b)| (*a, *b, EdgeKind::Directed)).collect();
        DependencyGraph::from_named(nodes, &e).unwrap()
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(DependencyGraph::new(names(&["a", "a"]), vec![]).is_err());
        assert!(DependencyGraph::from_named(&["a", "b"], &[("a", "a", EdgeKind::Directed)]).is_err());
        assert!(DependencyGraph::from_named(&["a", "b"], &[("a", "c", EdgeKind::Directed)]).is_err());
    }

    #[test]
    fn mask_graph_round_trips_undirected_masks() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let s = DependencyMask::square(&names, |i, j| i == j || (i == 0 && j == 2));
        let g = mask_graph(&s).unwrap();
        assert_eq!(g.nodes(), names.as_slice());
        assert_eq!(g.edges().len(), 1);
        let back = neighbor_mask(&g).unwrap();
        assert!(back.get(0, 2) && back.get(2, 0) && !back.get(0, 1));
    }

    #[test]
    fn neighbor_mask_examples() {
        let chain = undirected(&["a", "b", "c"], &[("a", "b"), ("b", "c")]);
        assert_eq!(
            neighbor_mask(&chain).unwrap().to_rows(),
            vec![vec![1, 1, 0], vec![1, 1, 1], vec![0, 1, 1]]
        );
        let empty = undirected(&["a", "b"], &[]);
        assert_eq!(neighbor_mask(&empty).unwrap().to_rows(), vec![vec![1, 0], vec![0, 1]]);
        let full = undirected(&["a", "b", "c"], &[("a", "b"), ("b", "c"), ("a", "c")]);
        assert_eq!(neighbor_mask(&full).unwrap().count_ones(), 9);

        let dag = directed(&["a", "b"], &[("a", "b")]);
        assert!(matches!(neighbor_mask(&dag), Err(NgmError::GraphMode(_))));
    }

    #[test]
    fn markov_blanket_examples() {
        let collider = directed(&["a", "b", "c"], &[("a", "b"), ("c", "b")]);
        let m = markov_blanket_mask(&collider).unwrap();
        assert_eq!(m.to_rows()[0], vec![1, 1, 1]);
        assert!(m.is_symmetric());

        let chain = directed(&["a", "b", "c"], &[("a", "b"), ("b", "c")]);
        let mb = markov_blankets(&chain).unwrap();
        assert_eq!(mb[1], BTreeSet::from([0, 2]));
        assert_eq!(mb[0], BTreeSet::from([1]));
        assert_eq!(mb[2], BTreeSet::from([1]));

        let with_isolated = directed(&["a", "b", "d"], &[("a", "b")]);
        let m = markov_blanket_mask(&with_isolated).unwrap();
        assert_eq!(m.to_rows()[2], vec![0, 0, 1]);
        assert_eq!(m.to_rows().iter().map(|r| r[2]).collect::<Vec<_>>(), vec![0, 0, 1]);
    }

    #[test]
    fn cycle_is_reported_with_its_nodes() {
        let cyc = directed(&["a", "b", "c"], &[("a", "b"), ("b", "c"), ("c", "a")]);
        match markov_blanket_mask(&cyc) {
            Err(NgmError::Cycle(c)) => {
                assert_eq!(c.first(), c.last());
                assert_eq!(c.len(), 4);
            }
            other => panic!("expected cycle error, got {other:?}"),
        }
        assert!(matches!(topological_order(&cyc), Err(NgmError::Cycle(_))));
    }

    #[test]
    fn mixed_graph_is_moralized() {
        let g = DependencyGraph::from_named(
            &["a", "b", "c", "d"],
            &[
                ("a", "c", EdgeKind::Directed),
                ("b", "c", EdgeKind::Directed),
                ("c", "d", EdgeKind::Undirected),
            ],
        )
        .unwrap();
        let m = dependency_mask(&g).unwrap();
        assert!(m.get(0, 1), "co-parents a and b must be connected");
        assert!(m.get(2, 3));
        assert!(!m.get(0, 3));
        assert!(m.is_symmetric());
    }

    #[test]
    fn complement_examples() {
        let s = DependencyMask::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap();
        assert_eq!(complement_mask(&s).to_rows(), vec![vec![0, 1], vec![1, 0]]);
        let ones = DependencyMask::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap();
        assert_eq!(complement_mask(&ones).count_ones(), 0);
    }

    #[test]
    fn expand_examples() {
        let s = DependencyMask::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap();
        let e = s.expand(&[1, 2], &[1, 2]).unwrap();
        assert_eq!(e.count_ones(), 9);
        assert_eq!(
            e.row_labels(),
            &[
                UnitLabel::new("f0", 0),
                UnitLabel::new("f1", 0),
                UnitLabel::new("f1", 1)
            ]
        );

        let id = DependencyMask::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap();
        let e = id.expand(&[2, 2], &[2, 2]).unwrap();
        assert_eq!(
            e.to_rows(),
            vec![vec![1, 1, 0, 0], vec![1, 1, 0, 0], vec![0, 0, 1, 1], vec![0, 0, 1, 1]]
        );
        let e = id.expand(&[1, 3], &[1, 3]).unwrap();
        assert_eq!(e.rows(), 4);
        assert_eq!(e.to_rows()[0], vec![1, 0, 0, 0]);
        assert_eq!(e.to_rows()[3], vec![0, 1, 1, 1]);

        assert!(matches!(id.expand(&[1], &[1, 1]), Err(NgmError::Dimension(_))));
    }

    #[test]
    fn self_paths_are_cleared_per_block() {
        let s = DependencyMask::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap();
        let e = s.expand(&[1, 2], &[1, 2]).unwrap().without_self_paths();
        assert_eq!(e.to_rows(), vec![vec![0, 1, 1], vec![1, 0, 0], vec![1, 0, 0]]);
    }

    #[test]
    fn bfs_examples() {
        let chain = undirected(&["a", "b", "c"], &[("a", "b"), ("b", "c")]);
        assert_eq!(bfs_order(&chain, 1).unwrap(), vec![1, 0, 2]);
        let single = undirected(&["x"], &[]);
        assert_eq!(bfs_order(&single, 0).unwrap(), vec![0]);
        let star = undirected(&["x", "s", "y", "z"], &[("s", "x"), ("s", "y"), ("s", "z")]);
        assert_eq!(bfs_order(&star, 0).unwrap(), vec![0, 1, 2, 3]);
        assert!(bfs_order(&star, 9).is_err());

        let split = undirected(&["a", "b", "c", "d"], &[("c", "d")]);
        assert_eq!(bfs_order(&split, 3).unwrap(), vec![3, 2, 0, 1]);
    }

    #[test]
    fn topological_examples() {
        let g = directed(&["a", "b", "c"], &[("a", "b"), ("a", "c")]);
        assert_eq!(topological_order(&g).unwrap(), vec![0, 1, 2]);
        let g = directed(&["a", "b"], &[("b", "a")]);
        assert_eq!(topological_order(&g).unwrap(), vec![1, 0]);
        let g = directed(&["n0", "n1", "n2"], &[]);
        assert_eq!(topological_order(&g).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn edge_list_round_trip_and_errors() {
        let nodes = names(&["a", "b", "c"]);
        let text = "a\tb\tundirected\t+\nb\tc\tdirected\t-\t0.5\n# comment\n";
        let g = DependencyGraph::parse_edge_list(text, &nodes).unwrap();
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.edges()[1].sign, Some(Sign::Negative));
        assert_eq!(g.edges()[1].weight, Some(0.5));
        let again = DependencyGraph::parse_edge_list(&g.to_edge_list(), &nodes).unwrap();
        assert_eq!(again, g);

        assert!(matches!(
            DependencyGraph::parse_edge_list("a\tq\tundirected\n", &nodes),
            Err(NgmError::UnknownNode(_))
        ));
        assert!(DependencyGraph::parse_edge_list("a\tb\tsideways\n", &nodes).is_err());
    }

    #[test]
    fn adjacency_csv() {
        let text = "a,b,c\n0,1,0\n1,0,1\n0,0,0\n";
        let g = DependencyGraph::parse_adjacency_csv(text).unwrap();
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.edges()[0].kind, EdgeKind::Undirected);
        assert_eq!(g.edges()[1].kind, EdgeKind::Directed);
        assert!(DependencyGraph::parse_adjacency_csv("a,b\n0,2\n1,0\n").is_err());
    }

    fn arb_mask() -> impl Strategy<Value = Vec<Vec<u8>>> {
        (1usize..6, 1usize..6)
            .prop_flat_map(|(r, c)| proptest::collection::vec(proptest::collection::vec(0u8..2, c), r))
    }

    fn arb_dag() -> impl Strategy<Value = DependencyGraph> {
        (2usize..8).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..12).prop_map(move |pairs| {
                let nodes: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
                // orient every edge low -> high index of a random permutation
                let edges = pairs
                    .into_iter()
                    .filter(|(a, b)| a != b)
                    .map(|(a, b)| Edge {
                        source: a.min(b),
                        target: a.max(b),
                        kind: EdgeKind::Directed,
                        sign: None,
                        weight: None,
                    })
                    .collect();
                DependencyGraph::new(nodes, edges).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn complement_is_an_involution(rows in arb_mask()) {
            let s = DependencyMask::from_rows(&rows).unwrap();
            prop_assert_eq!(complement_mask(&complement_mask(&s)), s.clone());
            let sum = s.to_matrix() + complement_mask(&s).to_matrix();
            prop_assert!(sum.iter().all(|&v| v == 1.0));
        }

        #[test]
        fn expansion_preserves_block_entries(rows in arb_mask(), seed in 0u64..1000) {
            let s = DependencyMask::from_rows(&rows).unwrap();
            let rw: Vec<usize> = (0..s.rows()).map(|i| 1 + ((seed as usize + i) % 3)).collect();
            let cw: Vec<usize> = (0..s.cols()).map(|j| 1 + ((seed as usize * 7 + j) % 4)).collect();
            let e = s.expand(&rw, &cw).unwrap();
            let row_owner: Vec<usize> = rw.iter().enumerate().flat_map(|(i, &w)| std::iter::repeat_n(i, w)).collect();
            let col_owner: Vec<usize> = cw.iter().enumerate().flat_map(|(j, &w)| std::iter::repeat_n(j, w)).collect();
            for i in 0..e.rows() {
                for j in 0..e.cols() {
                    prop_assert_eq!(e.get(i, j), s.get(row_owner[i], col_owner[j]));
                }
            }
        }

        #[test]
        fn topological_order_has_no_inversions(g in arb_dag()) {
            let order = topological_order(&g).unwrap();
            let mut pos = vec![0; g.len()];
            for (p, &v) in order.iter().enumerate() { pos[v] = p; }
            for e in g.edges() {
                prop_assert!(pos[e.source] < pos[e.target]);
            }
        }

        #[test]
        fn markov_blanket_mask_is_symmetric(g in arb_dag()) {
            prop_assert!(markov_blanket_mask(&g).unwrap().is_symmetric());
        }

        #[test]
        fn bfs_visits_each_node_after_a_neighbour(g in arb_dag(), start in 0usize..8) {
            let u = g.moralize();
            let start = start % u.len();
            let order = bfs_order(&u, start).unwrap();
            prop_assert_eq!(order[0], start);
            let mut sorted = order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..u.len()).collect::<Vec<_>>());
            let adj = u.adjacency();
            let mut placed = vec![false; u.len()];
            placed[start] = true;
            for &v in &order[1..] {
                let has_placed_nbr = adj[v].iter().any(|&w| placed[w]);
                let is_component_seed = adj[v].iter().all(|&w| !placed[w]);
                prop_assert!(has_placed_nbr || is_component_seed);
                placed[v] = true;
            }
        }
    }
}
