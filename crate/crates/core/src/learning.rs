//! Training: proximal initialization followed by the joint regression and
//! soft-graph objective.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use log::{debug, info, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureSchema, DEFAULT_BINS};
use crate::error::{NgmError, Result};
use crate::graph::{expand_mask, DependencyMask};
use crate::numerics::{
    lambda_from_paths, masked_path_ratio, path_dependency_layers, structure_penalty_eval, Activation, Adam, AdamConfig,
    MlpParams, NormKind,
};

/// Hidden layer width: an absolute count or a multiple of the input width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenWidth {
    Units(usize),
    PerInput(usize),
}

impl HiddenWidth {
    pub fn resolve(self, input_units: usize) -> usize {
        match self {
            HiddenWidth::Units(h) => h,
            HiddenWidth::PerInput(k) => k * input_units,
        }
    }
}

impl Default for HiddenWidth {
    fn default() -> Self {
        HiddenWidth::PerInput(2)
    }
}

impl FromStr for HiddenWidth {
    type Err = NgmError;

    /// `30` for a fixed width, `2x` for twice the input width.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || NgmError::Config(format!("invalid hidden width `{s}` (expected N or Nx)"));
        if let Some(k) = s.strip_suffix('x') {
            Ok(HiddenWidth::PerInput(k.parse().map_err(|_| bad())?))
        } else {
            Ok(HiddenWidth::Units(s.parse().map_err(|_| bad())?))
        }
    }
}

impl fmt::Display for HiddenWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HiddenWidth::Units(h) => write!(f, "{h}"),
            HiddenWidth::PerInput(k) => write!(f, "{k}x"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum LambdaMode {
    Fixed(f64),
    /// Reset to the squared masked path norm after every epoch.
    Adaptive,
}

impl FromStr for LambdaMode {
    type Err = NgmError;

    /// `adaptive` or `fixed:VALUE`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "adaptive" {
            return Ok(LambdaMode::Adaptive);
        }
        s.strip_prefix("fixed:")
            .and_then(|v| v.parse().ok())
            .map(LambdaMode::Fixed)
            .ok_or_else(|| NgmError::Config(format!("invalid lambda `{s}` (expected fixed:VALUE or adaptive)")))
    }
}

impl fmt::Display for LambdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaMode::Fixed(v) => write!(f, "fixed:{v}"),
            LambdaMode::Adaptive => f.write_str("adaptive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: HiddenWidth,
    /// Number of weight matrices in the core network.
    pub layers: usize,
    pub epochs_init: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: LambdaMode,
    pub norm: NormKind,
    pub eps_log: f64,
    pub seed: u64,
    pub validation_split: f64,
    pub learning_rate: f64,
    pub activation: Activation,
    /// Apply the hidden nonlinearity after the last layer as well.
    pub relu_output: bool,
    /// Keep the diagonal blocks of the mask, letting a feature's output read
    /// its own input.
    pub self_dependency: bool,
    /// Bin count used for the binned variant.
    pub bins: usize,
    /// Penalty weight of the binned variant, whose wider input layer needs
    /// more pressure to stay inside the mask.
    pub binned_lambda: LambdaMode,
    /// Score each feature's reconstruction with its own input hidden. Only
    /// takes effect without `self_dependency`.
    pub holdout_self: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: HiddenWidth::default(),
            layers: 2,
            epochs_init: 300,
            epochs: 300,
            batch_size: 128,
            lambda: LambdaMode::Fixed(0.1),
            norm: NormKind::L2,
            eps_log: 1e-12,
            seed: 0,
            validation_split: 0.1,
            learning_rate: 1e-3,
            activation: Activation::Tanh,
            relu_output: false,
            self_dependency: false,
            bins: DEFAULT_BINS,
            binned_lambda: LambdaMode::Fixed(0.3),
            holdout_self: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NgmError::Config(m.to_string()));
        if self.hidden.resolve(1) == 0 {
            return bad("hidden width must be >= 1");
        }
        if self.layers == 0 {
            return bad("layer count must be >= 1");
        }
        if self.epochs_init == 0 || self.epochs == 0 {
            return bad("epoch counts must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        for mode in [self.lambda, self.binned_lambda] {
            if let LambdaMode::Fixed(v) = mode {
                if !(1e-2..=1e2).contains(&v) {
                    return bad("fixed lambda must lie in [1e-2, 1e2]");
                }
            }
        }
        if !(self.eps_log > 0.0) {
            return bad("eps_log must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_split) {
            return bad("validation split must be in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.bins < 2 {
            return bad("bin count must be >= 2");
        }
        Ok(())
    }

    fn final_activation(&self) -> Activation {
        if self.relu_output {
            Activation::Relu
        } else {
            Activation::Identity
        }
    }

    /// Layer boundaries of the core network.
    pub fn core_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let h = self.hidden.resolve(input).max(1);
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(h, self.layers - 1));
        dims.push(output);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Encoder,
    Core,
    Decoder,
}

/// Contiguous run of layers `[start, end)` carrying its own structure
/// penalty against `mask` (allowed input x output units of the run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
    pub mask: DependencyMask,
    /// Overrides the configured penalty weight for this segment.
    #[serde(default)]
    pub lambda: Option<LambdaMode>,
}

impl Segment {
    pub fn complement(&self) -> DMatrix<f64> {
        self.mask.complement().to_matrix()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputLayout {
    /// Standardized numerics, one-hot categoricals.
    Standard,
    /// Numerics as one-hot bins, categoricals one-hot.
    Binned,
}

/// Per-epoch record of the fit phase; index 0 is the state right after
/// proximal initialization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub regression: Vec<f64>,
    pub validation: Vec<f64>,
    pub structure: Vec<f64>,
    pub masked_ratio: Vec<f64>,
    /// Training regression loss of the randomly initialized network.
    pub initial_regression: f64,
    /// Training regression loss after proximal initialization.
    pub proximal_regression: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalLosses {
    pub regression: f64,
    pub validation: f64,
    /// Sum of segment penalties.
    pub structure: f64,
    pub masked_ratio: f64,
}

/// A trained neural view.
#[derive(Debug, Clone, PartialEq)]
pub struct NgmModel {
    pub params: MlpParams,
    pub schema: FeatureSchema,
    /// Feature-level mask the model was trained against.
    pub feature_mask: DependencyMask,
    /// Unit-level end-to-end mask actually enforced (input x output units).
    pub mask: DependencyMask,
    pub layout: InputLayout,
    pub segments: Vec<Segment>,
    /// One trace per segment, aligned with `segments`.
    pub lambda_traces: Vec<Vec<f64>>,
    pub history: TrainHistory,
    pub losses: FinalLosses,
    /// Root-mean-square training residual per output unit.
    pub residual_std: Vec<f64>,
    pub config: TrainConfig,
    pub binned: Option<Box<NgmModel>>,
}

impl NgmModel {
    /// Trace of the core segment.
    pub fn lambda_trace(&self) -> &[f64] {
        let i = self
            .segments
            .iter()
            .position(|s| s.kind == SegmentKind::Core)
            .unwrap_or(0);
        &self.lambda_traces[i]
    }

    pub fn input_width(&self) -> usize {
        self.params.input_dim()
    }

    pub fn output_width(&self) -> usize {
        self.params.output_dim()
    }

    /// Forward pass over encoded rows.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.params.forward_batch(x)
    }

    /// Input-major end-to-end path dependency over normalized weights.
    pub fn path_dependency(&self) -> DMatrix<f64> {
        path_dependency_layers(self.params.layers(), true)
    }

    /// l1 share of end-to-end path mass on forbidden unit pairs.
    pub fn masked_ratio(&self) -> f64 {
        masked_path_ratio(self.params.layers(), &self.mask.complement().to_matrix())
    }

    /// Masked path ratio aggregated to feature blocks (sum of unit entries
    /// per block) against the feature-level mask with self paths cleared
    /// as in training.
    pub fn feature_masked_ratio(&self) -> f64 {
        let s = self.path_dependency();
        let mut total = 0.0;
        let mut masked = 0.0;
        for i in 0..self.mask.rows() {
            for j in 0..self.mask.cols() {
                total += s[(i, j)];
                if !self.mask.get(i, j) {
                    masked += s[(i, j)];
                }
            }
        }
        if total > 0.0 {
            masked / total
        } else {
            0.0
        }
    }
}

/// Mean over samples and output units of the squared residual `y - f(x)`.
pub fn regression_loss(params: &MlpParams, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_xy(params, x, y)?;
    let out = params.forward_batch(x)?;
    let value = (out - y).norm_squared() / (y.nrows() * y.ncols()).max(1) as f64;
    if !value.is_finite() {
        return Err(NgmError::NonFinite {
            term: "regression".into(),
        });
    }
    Ok(value)
}

/// Regression loss with its parameter gradient.
pub fn regression_loss_grad(params: &MlpParams, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(f64, MlpParams)> {
    check_xy(params, x, y)?;
    let trace = params.forward_trace(x)?;
    let resid = trace.output() - y;
    let scale = 1.0 / (y.nrows() * y.ncols()).max(1) as f64;
    let value = resid.norm_squared() * scale;
    if !value.is_finite() {
        return Err(NgmError::NonFinite {
            term: "regression".into(),
        });
    }
    let (grads, _) = params.backward(&trace, &(resid * (2.0 * scale)));
    Ok((value, grads))
}

/// Input and output unit ranges of one feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureBlock {
    pub input: Range<usize>,
    pub output: Range<usize>,
}

/// Pairs consecutive input and output blocks of the given widths.
pub fn feature_blocks(input_widths: &[usize], output_widths: &[usize]) -> Vec<FeatureBlock> {
    let mut i0 = 0;
    let mut o0 = 0;
    input_widths
        .iter()
        .zip(output_widths)
        .map(|(&wi, &wo)| {
            let b = FeatureBlock {
                input: i0..i0 + wi,
                output: o0..o0 + wo,
            };
            i0 += wi;
            o0 += wo;
            b
        })
        .collect()
}

/// Each row repeated once per block with that block's input units zeroed.
fn holdout_rows(x: &DMatrix<f64>, blocks: &[FeatureBlock]) -> DMatrix<f64> {
    let nb = blocks.len();
    let mut rep = DMatrix::zeros(x.nrows() * nb, x.ncols());
    for r in 0..x.nrows() {
        for (b, block) in blocks.iter().enumerate() {
            let k = r * nb + b;
            for c in 0..x.ncols() {
                if !block.input.contains(&c) {
                    rep[(k, c)] = x[(r, c)];
                }
            }
        }
    }
    rep
}

fn check_blocks(params: &MlpParams, blocks: &[FeatureBlock]) -> Result<()> {
    let covered: usize = blocks.iter().map(|b| b.output.len()).sum();
    let fits = blocks
        .iter()
        .all(|b| b.input.end <= params.input_dim() && b.output.end <= params.output_dim());
    if blocks.is_empty() || covered != params.output_dim() || !fits {
        return Err(NgmError::Dimension(
            "feature blocks must tile the output units and lie inside the network".into(),
        ));
    }
    Ok(())
}

/// Predictions where every feature's output block is computed with that
/// feature's own input block zeroed.
pub fn holdout_predict(params: &MlpParams, x: &DMatrix<f64>, blocks: &[FeatureBlock]) -> Result<DMatrix<f64>> {
    check_blocks(params, blocks)?;
    let out = params.forward_batch(&holdout_rows(x, blocks))?;
    let nb = blocks.len();
    let mut pred = DMatrix::zeros(x.nrows(), params.output_dim());
    for r in 0..x.nrows() {
        for (b, block) in blocks.iter().enumerate() {
            for c in block.output.clone() {
                pred[(r, c)] = out[(r * nb + b, c)];
            }
        }
    }
    Ok(pred)
}

/// Regression loss of [`holdout_predict`]. Equals [`regression_loss`] when no
/// output depends on its own feature's input.
pub fn holdout_loss(params: &MlpParams, x: &DMatrix<f64>, y: &DMatrix<f64>, blocks: &[FeatureBlock]) -> Result<f64> {
    check_xy(params, x, y)?;
    let pred = holdout_predict(params, x, blocks)?;
    let value = (pred - y).norm_squared() / (y.nrows() * y.ncols()).max(1) as f64;
    if !value.is_finite() {
        return Err(NgmError::NonFinite {
            term: "regression".into(),
        });
    }
    Ok(value)
}

/// [`holdout_loss`] with its parameter gradient.
pub fn holdout_loss_grad(
    params: &MlpParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    blocks: &[FeatureBlock],
) -> Result<(f64, MlpParams)> {
    check_xy(params, x, y)?;
    check_blocks(params, blocks)?;
    let trace = params.forward_trace(&holdout_rows(x, blocks))?;
    let out = trace.output();
    let nb = blocks.len();
    let scale = 1.0 / (y.nrows() * y.ncols()).max(1) as f64;
    let mut d_out = DMatrix::zeros(out.nrows(), out.ncols());
    let mut value = 0.0;
    for r in 0..x.nrows() {
        for (b, block) in blocks.iter().enumerate() {
            let k = r * nb + b;
            for c in block.output.clone() {
                let e = out[(k, c)] - y[(r, c)];
                value += e * e;
                d_out[(k, c)] = 2.0 * scale * e;
            }
        }
    }
    value *= scale;
    if !value.is_finite() {
        return Err(NgmError::NonFinite {
            term: "regression".into(),
        });
    }
    let (grads, _) = params.backward(&trace, &d_out);
    Ok((value, grads))
}

/// `log(eps_log + ||S_nn * S^c||)` over all layers of `params`.
pub fn structure_penalty(params: &MlpParams, s_complement: &DMatrix<f64>, norm: NormKind, eps_log: f64) -> f64 {
    structure_penalty_eval(params.layers(), s_complement, norm, eps_log).value
}

/// Penalty of one segment with its gradient, zero outside the segment.
pub fn segment_penalty_grad(
    params: &MlpParams,
    segment: &Segment,
    norm: NormKind,
    eps_log: f64,
) -> Result<(f64, MlpParams)> {
    let layers = &params.layers()[segment.start..segment.end];
    let eval = structure_penalty_eval(layers, &segment.complement(), norm, eps_log);
    if !eval.value.is_finite() {
        return Err(NgmError::NonFinite {
            term: format!("{:?} structure", segment.kind).to_lowercase(),
        });
    }
    let mut grads = params.zeros_like();
    for (k, g) in eval.weight_grads.into_iter().enumerate() {
        grads.layers_mut()[segment.start + k].weight = g;
    }
    Ok((eval.value, grads))
}

/// Squared l2 norm of the masked normalized path product.
pub fn lambda_init(params: &MlpParams, s_complement: &DMatrix<f64>) -> f64 {
    lambda_from_paths(params.layers(), s_complement)
}

/// Fresh core network for the given widths with the configured activations.
pub fn init_params(input: usize, output: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<MlpParams> {
    MlpParams::init(
        &cfg.core_dims(input, output),
        cfg.activation,
        cfg.final_activation(),
        rng,
    )
}

/// Regression-only training for `epochs_init` epochs on every row.
pub fn proximal_init(x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &TrainConfig) -> Result<MlpParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params(x.ncols(), y.ncols(), cfg, &mut rng)?;
    let rows: Vec<usize> = (0..x.nrows()).collect();
    run_proximal(&mut params, x, y, &rows, None, cfg, &mut rng)?;
    Ok(params)
}

/// Trains a standard-layout model on raw data against a feature-level mask.
pub fn fit_ngm(data: &Dataset, s: &DependencyMask, cfg: &TrainConfig) -> Result<NgmModel> {
    cfg.validate()?;
    let schema = data.schema().fit(data, cfg.bins)?;
    let x = schema.encode(data)?;
    let unit_mask = training_mask(&expand_mask(s, &schema)?, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = init_params(x.ncols(), x.ncols(), cfg, &mut rng)?;
    let segments = vec![Segment {
        kind: SegmentKind::Core,
        start: 0,
        end: params.num_layers(),
        mask: unit_mask.clone(),
        lambda: None,
    }];
    let widths = schema.unit_widths();
    let blocks = feature_blocks(&widths, &widths);
    let fitted = train(&x, &x, params, &segments, &unit_mask, &blocks, cfg, &mut rng)?;
    Ok(fitted.into_model(
        schema,
        s.clone(),
        unit_mask,
        InputLayout::Standard,
        segments,
        cfg.clone(),
    ))
}

/// Applies the self-dependency setting to a unit-level mask.
pub(crate) fn training_mask(mask: &DependencyMask, cfg: &TrainConfig) -> DependencyMask {
    if cfg.self_dependency {
        mask.clone()
    } else {
        mask.without_self_paths()
    }
}

pub(crate) struct Fitted {
    pub params: MlpParams,
    pub lambda_traces: Vec<Vec<f64>>,
    pub history: TrainHistory,
    pub losses: FinalLosses,
    pub residual_std: Vec<f64>,
}

impl Fitted {
    pub(crate) fn into_model(
        self,
        schema: FeatureSchema,
        feature_mask: DependencyMask,
        mask: DependencyMask,
        layout: InputLayout,
        segments: Vec<Segment>,
        config: TrainConfig,
    ) -> NgmModel {
        NgmModel {
            params: self.params,
            schema,
            feature_mask,
            mask,
            layout,
            segments,
            lambda_traces: self.lambda_traces,
            history: self.history,
            losses: self.losses,
            residual_std: self.residual_std,
            config,
            binned: None,
        }
    }
}

/// Proximal initialization followed by the penalized fit with best-iterate
/// retention. `overall_mask` is only used for the reported masked ratio.
pub(crate) fn train(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    mut params: MlpParams,
    segments: &[Segment],
    overall_mask: &DependencyMask,
    blocks: &[FeatureBlock],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Fitted> {
    let blocks = (cfg.holdout_self && !cfg.self_dependency).then_some(blocks);
    let reg_loss = |p: &MlpParams, x: &DMatrix<f64>, y: &DMatrix<f64>| match blocks {
        Some(b) => holdout_loss(p, x, y, b),
        None => regression_loss(p, x, y),
    };
    check_xy(&params, x, y)?;
    for s in segments {
        let layers = &params.layers()[s.start..s.end];
        if s.mask.rows() != layers[0].in_dim() || s.mask.cols() != layers[layers.len() - 1].out_dim() {
            return Err(NgmError::Dimension(format!(
                "{:?} mask is {}x{} but its layers map {} -> {} units",
                s.kind,
                s.mask.rows(),
                s.mask.cols(),
                layers[0].in_dim(),
                layers[layers.len() - 1].out_dim()
            )));
        }
    }
    if overall_mask.rows() != x.ncols() || overall_mask.cols() != y.ncols() {
        return Err(NgmError::Dimension(
            "mask does not match the network's input/output units".into(),
        ));
    }
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_val = ((n as f64) * cfg.validation_split).floor() as usize;
    if n - n_val == 0 {
        return Err(NgmError::Data(
            "no training rows left after the validation split".into(),
        ));
    }
    let (val_rows, train_rows) = order.split_at(n_val);
    let mut train_rows = train_rows.to_vec();
    train_rows.sort_unstable();
    let x_train = x.select_rows(&train_rows);
    let y_train = y.select_rows(&train_rows);
    let (x_val, y_val) = if val_rows.is_empty() {
        (x_train.clone(), y_train.clone())
    } else {
        (x.select_rows(val_rows), y.select_rows(val_rows))
    };
    let all_train: Vec<usize> = (0..x_train.nrows()).collect();

    let mut history = TrainHistory {
        initial_regression: reg_loss(&params, &x_train, &y_train)?,
        ..TrainHistory::default()
    };
    run_proximal(&mut params, &x_train, &y_train, &all_train, blocks, cfg, rng)?;
    history.proximal_regression = reg_loss(&params, &x_train, &y_train)?;

    let complements: Vec<DMatrix<f64>> = segments.iter().map(Segment::complement).collect();
    let overall_c = overall_mask.complement().to_matrix();
    let modes: Vec<LambdaMode> = segments.iter().map(|s| s.lambda.unwrap_or(cfg.lambda)).collect();
    let mut lambdas: Vec<f64> = complements
        .iter()
        .zip(segments)
        .zip(&modes)
        .map(|((c, s), mode)| match *mode {
            LambdaMode::Fixed(v) => v,
            LambdaMode::Adaptive => lambda_from_paths(&params.layers()[s.start..s.end], c),
        })
        .collect();
    // a vanishing initial lambda would switch the penalty off for good
    let mut fallback = vec![false; segments.len()];
    for (k, lam) in lambdas.iter_mut().enumerate() {
        if modes[k] == LambdaMode::Adaptive && *lam < 1e-8 {
            warn!(
                "{:?} lambda {lam:.3e} below 1e-8, falling back to fixed lambda 1.0",
                segments[k].kind
            );
            *lam = 1.0;
            fallback[k] = true;
        }
    }
    let mut lambda_traces: Vec<Vec<f64>> = lambdas.iter().map(|&l| vec![l]).collect();
    let lambda_refs: Vec<f64> = modes
        .iter()
        .map(|m| match *m {
            LambdaMode::Fixed(v) => v,
            LambdaMode::Adaptive => 1.0,
        })
        .collect();

    // (train regression, validation regression, structure, masked ratio, selection score)
    let evaluate = |p: &MlpParams| -> Result<(f64, f64, f64, f64, f64)> {
        let reg = reg_loss(p, &x_train, &y_train)?;
        let val = reg_loss(p, &x_val, &y_val)?;
        let mut structure = 0.0;
        let mut score = val;
        for ((s, c), r) in segments.iter().zip(&complements).zip(&lambda_refs) {
            let v = structure_penalty_eval(&p.layers()[s.start..s.end], c, cfg.norm, cfg.eps_log).value;
            structure += v;
            score += r * v;
        }
        let ratio = masked_path_ratio(p.layers(), &overall_c);
        Ok((reg, val, structure, ratio, score))
    };
    let record = |h: &mut TrainHistory, e: (f64, f64, f64, f64, f64)| {
        h.regression.push(e.0);
        h.validation.push(e.1);
        h.structure.push(e.2);
        h.masked_ratio.push(e.3);
    };

    let start = evaluate(&params)?;
    record(&mut history, start);
    let mut best = (start.4, params.clone(), 0usize);

    let mut adam = Adam::new(AdamConfig::with_step_size(cfg.learning_rate), params.param_count());
    let mut flat = params.to_flat();
    let mut batch = Vec::with_capacity(x_train.nrows());
    for epoch in 1..=cfg.epochs {
        batch.clear();
        batch.extend(0..x_train.nrows());
        batch.shuffle(rng);
        for chunk in batch.chunks(cfg.batch_size) {
            let xb = x_train.select_rows(chunk);
            let yb = y_train.select_rows(chunk);
            let (_, mut grads) = reg_loss_grad(&params, &xb, &yb, blocks).map_err(|e| divergence(e, "fit"))?;
            for ((s, c), &lam) in segments.iter().zip(&complements).zip(&lambdas) {
                let layers = &params.layers()[s.start..s.end];
                let eval = structure_penalty_eval(layers, c, cfg.norm, cfg.eps_log);
                if !eval.value.is_finite() {
                    return Err(NgmError::NonFinite {
                        term: format!("{:?} structure", s.kind).to_lowercase(),
                    });
                }
                for (k, g) in eval.weight_grads.iter().enumerate() {
                    grads.layers_mut()[s.start + k].weight += g * lam;
                }
            }
            adam.step(&mut flat, &grads.to_flat());
            params.assign_flat(&flat);
        }
        if !params.is_finite() {
            return Err(NgmError::Divergence(format!(
                "parameters became non-finite at epoch {epoch}; try a smaller learning rate"
            )));
        }
        let e = evaluate(&params)?;
        record(&mut history, e);
        if e.4 <= best.0 {
            best = (e.4, params.clone(), epoch);
        }
        for (k, (s, c)) in segments.iter().zip(&complements).enumerate() {
            if modes[k] == LambdaMode::Adaptive {
                if !fallback[k] {
                    lambdas[k] = lambda_from_paths(&params.layers()[s.start..s.end], c);
                }
                lambda_traces[k].push(lambdas[k]);
            }
        }
        if epoch % 50 == 0 || epoch == cfg.epochs {
            debug!(
                "epoch {epoch}: regression {:.5} validation {:.5} structure {:.3} ratio {:.4}",
                e.0, e.1, e.2, e.3
            );
        }
    }

    let (_, params, best_epoch) = best;
    history.best_epoch = best_epoch;
    let e = evaluate(&params)?;
    let losses = FinalLosses {
        regression: e.0,
        validation: e.1,
        structure: e.2,
        masked_ratio: e.3,
    };
    info!(
        "trained: regression {:.5}, structure {:.3}, masked ratio {:.4} (best epoch {best_epoch})",
        losses.regression, losses.structure, losses.masked_ratio
    );
    let out = match blocks {
        Some(b) => holdout_predict(&params, &x_train, b)?,
        None => params.forward_batch(&x_train)?,
    };
    let residual_std = (0..y_train.ncols())
        .map(|j| {
            let ms = (0..y_train.nrows())
                .map(|r| (out[(r, j)] - y_train[(r, j)]).powi(2))
                .sum::<f64>()
                / y_train.nrows() as f64;
            ms.sqrt().max(1e-3)
        })
        .collect();
    Ok(Fitted {
        params,
        lambda_traces,
        history,
        losses,
        residual_std,
    })
}

fn run_proximal(
    params: &mut MlpParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    rows: &[usize],
    blocks: Option<&[FeatureBlock]>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut adam = Adam::new(AdamConfig::with_step_size(cfg.learning_rate), params.param_count());
    let mut flat = params.to_flat();
    let mut batch = rows.to_vec();
    for epoch in 1..=cfg.epochs_init {
        batch.shuffle(rng);
        for chunk in batch.chunks(cfg.batch_size) {
            let xb = x.select_rows(chunk);
            let yb = y.select_rows(chunk);
            let (_, grads) = reg_loss_grad(params, &xb, &yb, blocks).map_err(|e| divergence(e, "proximal init"))?;
            adam.step(&mut flat, &grads.to_flat());
            params.assign_flat(&flat);
        }
        if !params.is_finite() {
            return Err(NgmError::Divergence(format!(
                "proximal init produced non-finite parameters at epoch {epoch}; try a smaller learning rate"
            )));
        }
    }
    Ok(())
}

fn reg_loss_grad(
    params: &MlpParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    blocks: Option<&[FeatureBlock]>,
) -> Result<(f64, MlpParams)> {
    match blocks {
        Some(b) => holdout_loss_grad(params, x, y, b),
        None => regression_loss_grad(params, x, y),
    }
}

fn divergence(e: NgmError, phase: &str) -> NgmError {
    match e {
        NgmError::NonFinite { term } => NgmError::Divergence(format!(
            "{term} loss became non-finite during {phase}; try a smaller learning rate"
        )),
        other => other,
    }
}

fn check_xy(params: &MlpParams, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != params.input_dim() || y.ncols() != params.output_dim() || x.nrows() != y.nrows() {
        return Err(NgmError::Dimension(format!(
            "batch {}x{} -> {}x{} does not fit a {} -> {} network",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols(),
            params.input_dim(),
            params.output_dim()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(NgmError::NonFinite {
            term: "input batch".into(),
        });
    }
    Ok(())
}
