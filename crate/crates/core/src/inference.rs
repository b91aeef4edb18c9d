//! Inference on a trained model: gradient-based completion of unknown
//! inputs, message passing, and conditional distributions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, Dataset, FeatureSchema};
use crate::error::{NgmError, Result};
use crate::graph::DependencyMask;
use crate::learning::{
    feature_blocks, init_params, train, training_mask, InputLayout, NgmModel, Segment, SegmentKind, TrainConfig,
};
use crate::numerics::{AdamConfig, MlpParams};

pub const DEFAULT_EPS_CLIP: f64 = 1e-4;

/// A raw (unscaled) feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Category(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(v) => write!(f, "{v}"),
            Value::Category(c) => f.write_str(c),
        }
    }
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            Value::Category(_) => None,
        }
    }
}

/// Parses `name=value,name=value` against `schema`; numeric features must
/// parse as numbers, categorical values must be known categories.
pub fn parse_assignments(text: &str, schema: &FeatureSchema) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, raw) = part
            .split_once('=')
            .ok_or_else(|| NgmError::Config(format!("expected name=value, got `{part}`")))?;
        let (name, raw) = (name.trim(), raw.trim());
        let spec = schema.feature(schema.index_of(name)?);
        let value = if spec.is_categorical() {
            if spec.category_index(raw).is_none() {
                return Err(NgmError::Config(format!("`{raw}` is not a category of `{name}`")));
            }
            Value::Category(raw.to_string())
        } else {
            Value::Number(
                raw.parse()
                    .map_err(|_| NgmError::Config(format!("`{raw}` is not a number (feature `{name}`)")))?,
            )
        };
        if out.insert(name.to_string(), value).is_some() {
            return Err(NgmError::Config(format!("feature `{name}` assigned twice")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceQuery {
    pub known: BTreeMap<String, Value>,
    pub targets: Vec<String>,
    pub max_iterations: usize,
    pub epsilon: f64,
    pub step_size: f64,
}

impl InferenceQuery {
    pub fn new(known: BTreeMap<String, Value>, targets: Vec<String>) -> Self {
        Self {
            known,
            targets,
            max_iterations: 2000,
            epsilon: 1e-6,
            step_size: 1e-2,
        }
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(NgmError::Config("convergence epsilon must be positive".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(NgmError::Config("step size must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for t in &self.targets {
            schema.index_of(t)?;
            if self.known.contains_key(t) {
                return Err(NgmError::Config(format!("`{t}` is both known and a target")));
            }
            if !seen.insert(t) {
                return Err(NgmError::Config(format!("target `{t}` listed twice")));
            }
        }
        for (name, v) in &self.known {
            let spec = schema.feature(schema.index_of(name)?);
            match (v, spec.is_categorical()) {
                (Value::Number(x), false) if x.is_finite() => {}
                (Value::Category(c), true) if spec.category_index(c).is_some() => {}
                _ => {
                    return Err(NgmError::Config(format!("invalid value `{v}` for feature `{name}`")));
                }
            }
        }
        Ok(())
    }
}

/// One target's estimate. `value` decodes the model output at the completed
/// inputs; `input_value` decodes the completed input itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub feature: String,
    pub value: Value,
    pub input_value: Value,
    /// Output units of the feature (standardized or one-hot scores).
    pub prediction: Vec<f64>,
    /// Completed input units of the feature.
    pub assignment: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub estimates: Vec<TargetEstimate>,
    pub loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessagePassingResult {
    pub estimates: Vec<TargetEstimate>,
    pub iterations: usize,
    pub converged: bool,
    /// Squared iterate distance per pass.
    pub distances: Vec<f64>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDistribution {
    pub feature: String,
    /// Category names or `[lo, hi)` bin labels in raw units.
    pub support: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
    pub probabilities: Vec<f64>,
    /// False when the underlying gradient completion hit its iteration cap.
    pub converged: bool,
}

/// Clips every entry to `[eps, 1]` and rescales to sum to one.
pub fn clip_normalize(raw: &[f64], eps: f64) -> Vec<f64> {
    let clipped: Vec<f64> = raw
        .iter()
        .map(|&v| if v.is_nan() { eps } else { v.clamp(eps, 1.0) })
        .collect();
    let sum: f64 = clipped.iter().sum();
    clipped.into_iter().map(|v| v / sum).collect()
}

/// Standard-layout starting point of a query and its known-unit mask.
/// Unknown numerics start at the standardized mean 0, unknown categorical
/// blocks at the uniform simplex point.
pub fn encode_query(schema: &FeatureSchema, known: &BTreeMap<String, Value>) -> Result<(DVector<f64>, Vec<bool>)> {
    let mut x = schema.mean_units();
    let mut mask = vec![false; x.len()];
    let offsets = schema.unit_offsets();
    for (name, v) in known {
        let j = schema.index_of(name)?;
        let spec = schema.feature(j);
        let o = offsets[j];
        match v {
            Value::Number(raw) if spec.is_numeric() => {
                x[o] = spec.scaling().forward(*raw);
                mask[o] = true;
            }
            Value::Category(c) if spec.is_categorical() => {
                let k = spec
                    .category_index(c)
                    .ok_or_else(|| NgmError::Config(format!("`{c}` is not a category of `{name}`")))?;
                for u in 0..spec.unit_width() {
                    x[o + u] = if u == k { 1.0 } else { 0.0 };
                    mask[o + u] = true;
                }
            }
            _ => return Err(NgmError::Config(format!("invalid value `{v}` for feature `{name}`"))),
        }
    }
    Ok((x, mask))
}

fn decode_block(schema: &FeatureSchema, j: usize, units: &[f64]) -> Value {
    let spec = schema.feature(j);
    if spec.is_categorical() {
        Value::Category(spec.categories[argmax(units.iter().copied())].clone())
    } else {
        Value::Number(spec.scaling().inverse(units[0]))
    }
}

fn estimates(
    schema: &FeatureSchema,
    targets: &[String],
    inputs: &DVector<f64>,
    outputs: &DVector<f64>,
) -> Result<Vec<TargetEstimate>> {
    let offsets = schema.unit_offsets();
    targets
        .iter()
        .map(|t| {
            let j = schema.index_of(t)?;
            let w = schema.feature(j).unit_width();
            let r = offsets[j]..offsets[j] + w;
            let prediction = outputs.as_slice()[r.clone()].to_vec();
            let assignment = inputs.as_slice()[r].to_vec();
            Ok(TargetEstimate {
                feature: t.clone(),
                value: decode_block(schema, j, &prediction),
                input_value: decode_block(schema, j, &assignment),
                prediction,
                assignment,
            })
        })
        .collect()
}

fn require_standard(model: &NgmModel) -> Result<()> {
    if model.layout != InputLayout::Standard {
        return Err(NgmError::Inference(
            "point inference needs a standard-layout model".into(),
        ));
    }
    Ok(())
}

/// Per-row result of the batched gradient completion.
#[derive(Debug, Clone)]
pub struct BatchMap {
    pub inputs: DMatrix<f64>,
    pub loss: Vec<f64>,
    pub initial_loss: Vec<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

/// Per-row inference loss `sum over known units of (f(x) - x)^2` and its
/// gradient with respect to the unknown units of `x` (zero on known units).
/// `known` holds 1 for clamped units and 0 elsewhere.
pub fn inference_loss_grad(
    params: &MlpParams,
    x: &DMatrix<f64>,
    known: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if known.shape() != x.shape() {
        return Err(NgmError::Dimension("known mask does not match the query batch".into()));
    }
    let trace = params.forward_trace(x)?;
    let diff = (trace.output() - x).component_mul(known);
    let losses = diff.row_iter().map(|r| r.norm_squared()).collect();
    let (_, dx) = params.backward(&trace, &(diff * 2.0));
    // on unknown units the direct term of the residual vanishes
    let grad = dx.zip_map(known, |g, k| if k > 0.0 { 0.0 } else { g });
    Ok((losses, grad))
}

/// Gradient completion of many rows at once. `known` flags the clamped
/// units of each row; only the other units are updated. Each row keeps its
/// own Adam state and stops on its own once its loss reaches `epsilon`.
pub fn gradient_map_batch(
    params: &MlpParams,
    x0: &DMatrix<f64>,
    known: &[Vec<bool>],
    max_iterations: usize,
    epsilon: f64,
    adam: AdamConfig,
) -> Result<BatchMap> {
    let (n, u) = x0.shape();
    if known.len() != n || known.iter().any(|k| k.len() != u) {
        return Err(NgmError::Dimension("known mask does not match the query batch".into()));
    }
    if u != params.input_dim() || params.output_dim() != u {
        return Err(NgmError::Dimension(
            "inference needs matching input and output layouts".into(),
        ));
    }
    let km = DMatrix::from_fn(n, u, |r, c| if known[r][c] { 1.0 } else { 0.0 });
    let mut x = x0.clone();
    let mut best = x0.clone();
    let mut best_loss = vec![f64::INFINITY; n];
    let mut initial_loss = vec![0.0; n];
    let mut iterations = vec![0usize; n];
    let mut converged = vec![false; n];
    let mut active: Vec<bool> = known.iter().map(|k| k.iter().any(|&b| !b)).collect();
    let mut m = DMatrix::<f64>::zeros(n, u);
    let mut v = DMatrix::<f64>::zeros(n, u);
    for it in 0..=max_iterations {
        let (losses, dx) = inference_loss_grad(params, &x, &km)?;
        for (r, &loss) in losses.iter().enumerate() {
            if !loss.is_finite() {
                return Err(NgmError::NonFinite {
                    term: "inference loss".into(),
                });
            }
            if it == 0 {
                initial_loss[r] = loss;
            }
            if loss < best_loss[r] {
                best_loss[r] = loss;
                best.row_mut(r).copy_from(&x.row(r));
            }
            if !active[r] || loss <= epsilon {
                converged[r] |= loss <= epsilon || !active[r];
                active[r] = false;
            }
        }
        if it == max_iterations || !active.iter().any(|&a| a) {
            break;
        }
        for r in (0..n).filter(|&r| active[r]) {
            iterations[r] += 1;
            let t = iterations[r] as i32;
            let c1 = 1.0 - adam.beta1.powi(t);
            let c2 = 1.0 - adam.beta2.powi(t);
            for c in (0..u).filter(|&c| !known[r][c]) {
                let g = dx[(r, c)];
                m[(r, c)] = adam.beta1 * m[(r, c)] + (1.0 - adam.beta1) * g;
                v[(r, c)] = adam.beta2 * v[(r, c)] + (1.0 - adam.beta2) * g * g;
                x[(r, c)] -= adam.step_size * (m[(r, c)] / c1) / ((v[(r, c)] / c2).sqrt() + adam.epsilon);
            }
        }
    }
    // clamped entries are copied from the query, never recomputed
    for r in 0..n {
        for c in 0..u {
            if known[r][c] {
                best[(r, c)] = x0[(r, c)];
            }
        }
    }
    Ok(BatchMap {
        inputs: best,
        loss: best_loss,
        initial_loss,
        iterations,
        converged,
    })
}

/// Gradient-based completion: unknown inputs are optimized so the model
/// reproduces the known features, weights frozen.
pub fn gradient_map(model: &NgmModel, q: &InferenceQuery) -> Result<MapResult> {
    require_standard(model)?;
    q.validate(&model.schema)?;
    if q.targets.is_empty() {
        return Ok(MapResult {
            estimates: Vec::new(),
            loss: 0.0,
            initial_loss: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let (x0, known) = encode_query(&model.schema, &q.known)?;
    let batch = gradient_map_batch(
        &model.params,
        &DMatrix::from_row_slice(1, x0.len(), x0.as_slice()),
        &[known],
        q.max_iterations,
        q.epsilon,
        AdamConfig::with_step_size(q.step_size),
    )?;
    let inputs = batch.inputs.row(0).transpose();
    let outputs = model.params.forward(&inputs)?;
    Ok(MapResult {
        estimates: estimates(&model.schema, &q.targets, &inputs, &outputs)?,
        loss: batch.loss[0],
        initial_loss: batch.initial_loss[0],
        iterations: batch.iterations[0],
        converged: batch.converged[0],
    })
}

/// Fixed-point iteration `X[U] <- f(X)[U]` with known entries clamped.
pub fn message_passing(model: &NgmModel, q: &InferenceQuery) -> Result<MessagePassingResult> {
    require_standard(model)?;
    q.validate(&model.schema)?;
    let (mut x, known) = encode_query(&model.schema, &q.known)?;
    let mut distances = Vec::new();
    let mut converged = false;
    if known.iter().all(|&k| k) {
        converged = true;
    } else {
        for _ in 0..q.max_iterations {
            let out = model.params.forward(&x)?;
            let mut dist = 0.0;
            for (u, &k) in known.iter().enumerate() {
                if !k {
                    dist += (out[u] - x[u]).powi(2);
                    x[u] = out[u];
                }
            }
            if !dist.is_finite() {
                return Err(NgmError::NonFinite {
                    term: "message passing iterate".into(),
                });
            }
            distances.push(dist);
            if dist <= q.epsilon {
                converged = true;
                break;
            }
        }
    }
    let outputs = model.params.forward(&x)?;
    let warning = (!converged).then(|| {
        format!(
            "message passing did not converge in {} iterations (last distance {:.3e})",
            q.max_iterations,
            distances.last().copied().unwrap_or(0.0)
        )
    });
    Ok(MessagePassingResult {
        estimates: estimates(&model.schema, &q.targets, &x, &outputs)?,
        iterations: distances.len(),
        converged,
        distances,
        warning,
    })
}

/// Conditional distribution of `target` given the query's known values.
/// Categorical targets read the clip-normalized output block after
/// gradient completion; numeric targets need the binned variant and score
/// every bin.
pub fn conditional_distribution(
    model: &NgmModel,
    q: &InferenceQuery,
    target: &str,
    eps_clip: f64,
) -> Result<ConditionalDistribution> {
    if !(eps_clip > 0.0 && eps_clip < 1.0) {
        return Err(NgmError::Config("clip epsilon must lie in (0, 1)".into()));
    }
    let schema = &model.schema;
    let j = schema.index_of(target)?;
    if q.known.contains_key(target) {
        return Err(NgmError::Config(format!("`{target}` is already known")));
    }
    let spec = schema.feature(j);
    if spec.is_categorical() {
        let mut q = q.clone();
        q.targets = vec![target.to_string()];
        let res = gradient_map(model, &q)?;
        return Ok(ConditionalDistribution {
            feature: target.to_string(),
            support: spec.categories.clone(),
            edges: None,
            probabilities: clip_normalize(&res.estimates[0].prediction, eps_clip),
            converged: res.converged,
        });
    }
    let binned = model.binned.as_deref().ok_or_else(|| {
        NgmError::Inference(format!(
            "numeric target `{target}` needs a model trained with a binned variant"
        ))
    })?;
    q.validate(schema)?;
    let scores = bin_scores(binned, &q.known, j)?;
    let edges = spec.edges()?.to_vec();
    Ok(ConditionalDistribution {
        feature: target.to_string(),
        support: edges.windows(2).map(|w| format!("[{}, {})", w[0], w[1])).collect(),
        edges: Some(edges),
        probabilities: clip_normalize(&scores, eps_clip),
        converged: true,
    })
}

/// Normalized posterior bin weights of numeric feature `target`: each bin
/// is placed on the binned model's input, every known feature's output is
/// compared with its observed value under a Gaussian residual model, and
/// the result is weighted by the target's empirical bin marginal.
pub fn bin_scores(binned: &NgmModel, known: &BTreeMap<String, Value>, target: usize) -> Result<Vec<f64>> {
    if binned.layout != InputLayout::Binned {
        return Err(NgmError::Inference("bin scores need a binned-layout model".into()));
    }
    let schema = &binned.schema;
    let spec = schema.feature(target);
    if spec.is_categorical() {
        return Err(NgmError::Inference(format!("`{}` is categorical", spec.name)));
    }
    let bin_widths = schema.binned_widths();
    let bin_offsets = schema.binned_offsets();
    let unit_offsets = schema.unit_offsets();
    let mut base = DVector::zeros(bin_widths.iter().sum());
    for (j, f) in schema.features().iter().enumerate() {
        let o = bin_offsets[j];
        match known.get(&f.name) {
            Some(Value::Number(raw)) if f.is_numeric() => base[o + f.bin_of(*raw)?] = 1.0,
            Some(Value::Category(c)) if f.is_categorical() => {
                let k = f
                    .category_index(c)
                    .ok_or_else(|| NgmError::Config(format!("`{c}` is not a category of `{}`", f.name)))?;
                base[o + k] = 1.0;
            }
            Some(v) => return Err(NgmError::Config(format!("invalid value `{v}` for `{}`", f.name))),
            None => {
                let w = bin_widths[j];
                match &f.marginal {
                    Some(p) if f.is_numeric() && p.len() == w => {
                        for (k, &pk) in p.iter().enumerate() {
                            base[o + k] = pk;
                        }
                    }
                    _ => {
                        for k in 0..w {
                            base[o + k] = 1.0 / w as f64;
                        }
                    }
                }
            }
        }
    }
    let m = bin_widths[target];
    let to = bin_offsets[target];
    let mut rows = DMatrix::zeros(m, base.len());
    for b in 0..m {
        rows.row_mut(b).copy_from(&base.transpose());
        for k in 0..m {
            rows[(b, to + k)] = if k == b { 1.0 } else { 0.0 };
        }
    }
    let out = binned.params.forward_batch(&rows)?;
    let (observed, known_units) = encode_query(schema, known)?;
    let prior = spec
        .marginal
        .clone()
        .filter(|p| p.len() == m)
        .unwrap_or_else(|| vec![1.0 / m as f64; m]);
    let target_units = unit_offsets[target]..unit_offsets[target] + 1;
    let log_scores: Vec<f64> = (0..m)
        .map(|b| {
            let mut ll = 0.0;
            for (u, &k) in known_units.iter().enumerate() {
                if k && !target_units.contains(&u) {
                    let s = binned.residual_std[u];
                    ll -= 0.5 * ((out[(b, u)] - observed[u]) / s).powi(2);
                }
            }
            prior[b].ln() + ll
        })
        .collect();
    let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(NgmError::NonFinite {
            term: format!("bin scores of `{}`", spec.name),
        });
    }
    let w: Vec<f64> = log_scores.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / sum).collect())
}

/// Trains the binned-input, real-output variant of a model: numeric inputs
/// become bin indicators whose mask rows copy the original feature's row.
pub fn train_binned_variant(
    data: &Dataset,
    s: &DependencyMask,
    cfg: &TrainConfig,
    schema: &FeatureSchema,
) -> Result<NgmModel> {
    cfg.validate()?;
    if !schema.has_bins() {
        return Err(NgmError::Schema("schema has no fitted bin edges".into()));
    }
    if let Some(f) = schema.features().iter().find(|f| f.is_numeric() && f.bin_count() < 2) {
        return Err(NgmError::Config(format!("feature `{}` needs at least 2 bins", f.name)));
    }
    if s.rows() != schema.len() || s.cols() != schema.len() {
        return Err(NgmError::Dimension("mask does not match the schema".into()));
    }
    let cfg = &TrainConfig {
        lambda: cfg.binned_lambda,
        ..cfg.clone()
    };
    let x = schema.encode_binned(data)?;
    let y = schema.encode(data)?;
    let unit_mask = training_mask(&s.expand(&schema.binned_widths(), &schema.unit_widths())?, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x62696e6e6564);
    let params = init_params(x.ncols(), y.ncols(), cfg, &mut rng)?;
    let segments = vec![Segment {
        kind: SegmentKind::Core,
        start: 0,
        end: params.num_layers(),
        mask: unit_mask.clone(),
        lambda: None,
    }];
    let blocks = feature_blocks(&schema.binned_widths(), &schema.unit_widths());
    let fitted = train(&x, &y, params, &segments, &unit_mask, &blocks, cfg, &mut rng)?;
    Ok(fitted.into_model(
        schema.clone(),
        s.clone(),
        unit_mask,
        InputLayout::Binned,
        segments,
        cfg.clone(),
    ))
}

/// Trains the binned variant for `model` and attaches it.
pub fn attach_binned_variant(model: &mut NgmModel, data: &Dataset) -> Result<()> {
    let binned = train_binned_variant(data, &model.feature_mask, &model.config, &model.schema)?;
    model.binned = Some(Box::new(binned));
    Ok(())
}
