//! Gaussian chain fixtures, partial correlations and graph-recovery scoring.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;

use crate::data::{argmax, Dataset, FeatureSchema};
use crate::error::{NgmError, Result};
use crate::graph::{DependencyGraph, EdgeKind};
use crate::inference::{clip_normalize, gradient_map, InferenceQuery, Value, DEFAULT_EPS_CLIP};
use crate::learning::NgmModel;

/// Symmetric positive definite precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix {
    theta: DMatrix<f64>,
}

impl PrecisionMatrix {
    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        if !theta.is_square() || theta.nrows() == 0 {
            return Err(NgmError::Dimension(
                "precision matrix must be square and non-empty".into(),
            ));
        }
        let d = theta.nrows();
        for i in 0..d {
            for j in 0..i {
                if (theta[(i, j)] - theta[(j, i)]).abs() > 1e-12 {
                    return Err(NgmError::Numerical("precision matrix is not symmetric".into()));
                }
            }
        }
        let min = SymmetricEigen::new(theta.clone()).eigenvalues.min();
        if !(min > 0.0) {
            return Err(NgmError::Numerical(format!(
                "precision matrix is not positive definite (smallest eigenvalue {min:.3e})"
            )));
        }
        Ok(Self { theta })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.theta
            .clone()
            .cholesky()
            .expect("positive definite by construction")
            .inverse()
    }

    /// Conditional mean of `target` given `known` values in the same units
    /// as the samples, with all other features marginalized.
    pub fn conditional_mean(&self, target: usize, known: &[(usize, f64)]) -> f64 {
        let sigma = self.covariance();
        if known.is_empty() {
            return 0.0;
        }
        let k = known.len();
        let s_kk = DMatrix::from_fn(k, k, |a, b| sigma[(known[a].0, known[b].0)]);
        let s_tk = DMatrix::from_fn(1, k, |_, b| sigma[(target, known[b].0)]);
        let v = DMatrix::from_fn(k, 1, |a, _| known[a].1);
        let inv = s_kk
            .try_inverse()
            .expect("covariance blocks of a PD matrix are invertible");
        (s_tk * inv * v)[(0, 0)]
    }
}

/// Nonzero off-diagonal pattern as an undirected graph over `names`.
pub fn precision_graph(theta: &PrecisionMatrix, names: &[String]) -> Result<DependencyGraph> {
    let m = theta.matrix();
    let mut edges = Vec::new();
    for i in 0..m.nrows() {
        for j in i + 1..m.ncols() {
            if m[(i, j)] != 0.0 {
                edges.push((names[i].clone(), names[j].clone(), EdgeKind::Undirected));
            }
        }
    }
    DependencyGraph::from_named(names, &edges)
}

/// `x1, x2, ..., xD`.
pub fn feature_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

/// Tridiagonal chain precision: off-diagonals drawn uniformly from
/// `(-1, -0.5) U (0.5, 1)`, unit diagonal, then diagonal loading so the
/// smallest eigenvalue is at least 0.1.
pub fn chain_precision<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<PrecisionMatrix> {
    if d < 2 {
        return Err(NgmError::Config("chain needs at least 2 nodes".into()));
    }
    let mut theta = DMatrix::<f64>::identity(d, d);
    for i in 0..d - 1 {
        let mag: f64 = rng.random_range(0.5..1.0);
        let v = if rng.random_bool(0.5) { mag } else { -mag };
        theta[(i, i + 1)] = v;
        theta[(i + 1, i)] = v;
    }
    let min = SymmetricEigen::new(theta.clone()).eigenvalues.min();
    if min < 0.1 {
        let delta = 0.1 - min;
        for i in 0..d {
            theta[(i, i)] += delta;
        }
    }
    PrecisionMatrix::new(theta)
}

/// `-theta_ij / sqrt(theta_ii theta_jj)` off the diagonal, 0 on it.
pub fn partial_correlation(theta: &PrecisionMatrix) -> DMatrix<f64> {
    let m = theta.matrix();
    let d = m.nrows();
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            0.0
        } else {
            -m[(i, j)] / (m[(i, i)] * m[(j, j)]).sqrt()
        }
    })
}

/// `m` draws from `N(0, theta^-1)`: with `theta = L L^T`, `x = L^-T z`.
pub fn sample_mvn<R: Rng + ?Sized>(theta: &PrecisionMatrix, m: usize, rng: &mut R) -> Result<Dataset> {
    let d = theta.dim();
    let chol = theta
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| NgmError::Numerical("Cholesky factorization of the precision matrix failed".into()))?;
    let lt = chol.l().transpose();
    let mut x = DMatrix::zeros(m, d);
    for r in 0..m {
        let z = nalgebra::DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let row = lt
            .solve_upper_triangular(&z)
            .ok_or_else(|| NgmError::Numerical("triangular solve failed".into()))?;
        x.row_mut(r).copy_from(&row.transpose());
    }
    Dataset::from_matrix(&feature_names(d), &x)
}

/// Default ridge: `1e-3 * trace(S) / D`.
pub fn default_ridge(cov: &DMatrix<f64>) -> f64 {
    1e-3 * cov.trace() / cov.nrows() as f64
}

/// Unbiased sample covariance of the rows of `x`.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mean = x.row_mean();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    (c.transpose() * &c) / (n.saturating_sub(1).max(1)) as f64
}

/// Edge scores `|partial correlation|` of the ridge-regularized inverse
/// sample covariance. `ridge = None` uses [`default_ridge`].
pub fn recovery_oracle(x: &DMatrix<f64>, ridge: Option<f64>) -> Result<DMatrix<f64>> {
    let (m, d) = x.shape();
    if d < 2 || m < 2 {
        return Err(NgmError::Data("recovery needs at least 2 rows and 2 columns".into()));
    }
    let mut cov = sample_covariance(x);
    let ridge = ridge.unwrap_or_else(|| default_ridge(&cov));
    if ridge == 0.0 && m <= d {
        return Err(NgmError::Numerical(format!(
            "sample covariance of {m} rows in {d} dimensions is singular; use a positive ridge"
        )));
    }
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    let theta = cov
        .cholesky()
        .ok_or_else(|| NgmError::Numerical("regularized covariance is not positive definite".into()))?
        .inverse();
    let theta = (&theta + theta.transpose()) * 0.5;
    let pc = partial_correlation(&PrecisionMatrix { theta });
    Ok(pc.map(f64::abs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub false_positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub aupr: f64,
    pub auc: f64,
    /// `(i, j, score, is_edge)` for every unordered pair `i < j`.
    pub edge_scores: Vec<(usize, usize, f64, bool)>,
    pub sweep: Vec<SweepPoint>,
}

/// AUC (ties count half) and AUPR (average precision over distinct
/// thresholds) of the upper-triangle scores against a symmetric 0/1 truth.
pub fn score_recovery(truth: &DMatrix<f64>, scores: &DMatrix<f64>) -> Result<RecoveryMetrics> {
    if truth.shape() != scores.shape() || !truth.is_square() {
        return Err(NgmError::Dimension(
            "truth and score matrices must be square and the same size".into(),
        ));
    }
    let d = truth.nrows();
    let mut edge_scores = Vec::with_capacity(d * d.saturating_sub(1) / 2);
    for i in 0..d {
        for j in i + 1..d {
            if !scores[(i, j)].is_finite() {
                return Err(NgmError::NonFinite {
                    term: format!("score ({i}, {j})"),
                });
            }
            edge_scores.push((i, j, scores[(i, j)], truth[(i, j)] != 0.0));
        }
    }
    let pos = edge_scores.iter().filter(|e| e.3).count();
    let neg = edge_scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(NgmError::Data("recovery scoring needs both edges and non-edges".into()));
    }

    let mut wins = 0.0;
    for a in edge_scores.iter().filter(|e| e.3) {
        for b in edge_scores.iter().filter(|e| !e.3) {
            if a.2 > b.2 {
                wins += 1.0;
            } else if a.2 == b.2 {
                wins += 0.5;
            }
        }
    }
    let auc = wins / (pos * neg) as f64;

    let mut sorted: Vec<(f64, bool)> = edge_scores.iter().map(|e| (e.2, e.3)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut sweep = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut aupr = 0.0;
    let mut last_recall = 0.0;
    let mut k = 0;
    while k < sorted.len() {
        let threshold = sorted[k].0;
        while k < sorted.len() && sorted[k].0 == threshold {
            if sorted[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / pos as f64;
        aupr += (recall - last_recall) * precision;
        last_recall = recall;
        sweep.push(SweepPoint {
            threshold,
            precision,
            recall,
            false_positive_rate: fp as f64 / neg as f64,
        });
    }
    Ok(RecoveryMetrics {
        aupr,
        auc,
        edge_scores,
        sweep,
    })
}

/// 0/1 adjacency of an undirected graph, zero diagonal.
pub fn adjacency_matrix(g: &DependencyGraph) -> DMatrix<f64> {
    let adj = g.adjacency();
    DMatrix::from_fn(
        g.len(),
        g.len(),
        |i, j| if i != j && adj[i].contains(&j) { 1.0 } else { 0.0 },
    )
}

/// `points` evenly spaced raw values over `mean +- k * std` of a numeric
/// feature.
pub fn sigma_grid(schema: &FeatureSchema, feature: &str, k: f64, points: usize) -> Result<Vec<f64>> {
    let spec = schema.feature(schema.index_of(feature)?);
    if spec.is_categorical() {
        return Err(NgmError::Config(format!("`{feature}` is categorical")));
    }
    let s = spec.scaling();
    Ok(match points {
        0 => Vec::new(),
        1 => vec![s.mean],
        _ => (0..points)
            .map(|i| s.inverse(-k + 2.0 * k * i as f64 / (points - 1) as f64))
            .collect(),
    })
}

/// Marginal-mean raw value of every feature: the fitted mean for numerics,
/// the most frequent category otherwise.
pub fn marginal_means(schema: &FeatureSchema) -> BTreeMap<String, Value> {
    schema
        .features()
        .iter()
        .map(|f| {
            let v = if f.is_categorical() {
                let k = f.marginal.as_ref().map_or(0, |p| argmax(p.iter().copied()));
                Value::Category(f.categories[k].clone())
            } else {
                Value::Number(f.scaling().mean)
            };
            (f.name.clone(), v)
        })
        .collect()
}

/// Model response of `target` as `neighbor` sweeps `grid` (raw units), all
/// other features held at their marginal means. Numeric targets report the
/// raw prediction; categorical targets the clip-normalized probability of
/// their last category.
pub fn dependency_curve(model: &NgmModel, target: &str, neighbor: &str, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let schema = &model.schema;
    let t = schema.feature(schema.index_of(target)?);
    let n = schema.feature(schema.index_of(neighbor)?);
    if target == neighbor {
        return Err(NgmError::Config("target and neighbor must differ".into()));
    }
    if n.is_categorical() {
        return Err(NgmError::Config(format!("neighbor `{neighbor}` must be numeric")));
    }
    let mut known = marginal_means(schema);
    known.remove(target);
    grid.iter()
        .map(|&v| {
            known.insert(neighbor.to_string(), Value::Number(v));
            let q = InferenceQuery::new(known.clone(), vec![target.to_string()]);
            let est = &gradient_map(model, &q)?.estimates[0];
            let y = if t.is_categorical() {
                *clip_normalize(&est.prediction, DEFAULT_EPS_CLIP)
                    .last()
                    .expect("non-empty block")
            } else {
                est.value.as_number().expect("numeric target")
            };
            Ok((v, y))
        })
        .collect()
}

/// Least-squares slope and coefficient of determination of `(x, y)` pairs.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}
