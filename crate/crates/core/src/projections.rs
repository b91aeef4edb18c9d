//! Per-feature encoder and decoder layers wrapped around the core network.
//!
//! Encoder and decoder are dense layers like the core; their connectivity is
//! held block-diagonal (each feature's units only reach that feature's
//! encoder units) by their own log path-norm penalties, so the whole stack is
//! one network trained end to end.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;
use crate::error::{NgmError, Result};
use crate::graph::DependencyMask;
use crate::learning::{
    feature_blocks, init_params, train, training_mask, InputLayout, LambdaMode, NgmModel, Segment, SegmentKind,
    TrainConfig,
};
use crate::numerics::{structure_penalty_eval, Activation, Layer, MlpParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    /// Encoded input units per feature.
    pub input_widths: Vec<usize>,
    /// Encoder output units per feature.
    pub encoder_widths: Vec<usize>,
    /// Decoder output units per feature.
    pub output_widths: Vec<usize>,
    /// Input units x encoder units.
    pub encoder_mask: DependencyMask,
    /// Core output units (laid out like the encoder) x output units.
    pub decoder_mask: DependencyMask,
    /// Penalty weights of the wrappers; `None` follows the core setting.
    pub lambda_encoder: Option<LambdaMode>,
    pub lambda_decoder: Option<LambdaMode>,
    /// Dense layers per wrapper.
    pub encoder_depth: usize,
    pub decoder_depth: usize,
}

impl ProjectionSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.input_widths.len();
        if d == 0 || self.encoder_widths.len() != d || self.output_widths.len() != d {
            return Err(NgmError::Config("projection widths must list every feature".into()));
        }
        let all = self
            .input_widths
            .iter()
            .chain(&self.encoder_widths)
            .chain(&self.output_widths);
        if all.copied().any(|w| w == 0) {
            return Err(NgmError::Config("projection widths must be >= 1".into()));
        }
        if self.encoder_depth == 0 || self.decoder_depth == 0 {
            return Err(NgmError::Config("encoder and decoder need at least one layer".into()));
        }
        let (di, de, dout) = (self.input_units(), self.encoder_units(), self.output_units());
        if self.encoder_mask.rows() != di || self.encoder_mask.cols() != de {
            return Err(NgmError::Dimension(format!(
                "encoder mask is {}x{}, expected {di}x{de}",
                self.encoder_mask.rows(),
                self.encoder_mask.cols()
            )));
        }
        if self.decoder_mask.rows() != de || self.decoder_mask.cols() != dout {
            return Err(NgmError::Dimension(format!(
                "decoder mask is {}x{}, expected {de}x{dout}",
                self.decoder_mask.rows(),
                self.decoder_mask.cols()
            )));
        }
        Ok(())
    }

    pub fn input_units(&self) -> usize {
        self.input_widths.iter().sum()
    }

    pub fn encoder_units(&self) -> usize {
        self.encoder_widths.iter().sum()
    }

    pub fn output_units(&self) -> usize {
        self.output_widths.iter().sum()
    }
}

/// Block-diagonal single-layer wrappers for every feature of `schema`. A
/// continuous feature keeps its width; a categorical one gets one encoder
/// unit per category.
pub fn build_projection(schema: &FeatureSchema) -> Result<ProjectionSpec> {
    if schema.is_empty() {
        return Err(NgmError::Schema("cannot build projections for an empty schema".into()));
    }
    let names = schema.names();
    let widths = schema.unit_widths();
    let diagonal = DependencyMask::square(&names, |i, j| i == j);
    Ok(ProjectionSpec {
        input_widths: widths.clone(),
        encoder_widths: widths.clone(),
        output_widths: widths.clone(),
        encoder_mask: diagonal.expand(&widths, &widths)?,
        decoder_mask: diagonal.expand(&widths, &widths)?,
        lambda_encoder: None,
        lambda_decoder: None,
        encoder_depth: 1,
        decoder_depth: 1,
    })
}

/// Layer count of encoder, core and decoder.
pub fn stack_depths(spec: &ProjectionSpec, cfg: &TrainConfig) -> (usize, usize, usize) {
    (spec.encoder_depth, cfg.layers, spec.decoder_depth)
}

/// Encoder, core and decoder segments of a projected network. The core mask
/// is `s` expanded to encoder widths with the self-dependency setting applied.
pub fn projection_segments(s: &DependencyMask, spec: &ProjectionSpec, cfg: &TrainConfig) -> Result<Vec<Segment>> {
    spec.validate()?;
    let (de, dc, dd) = stack_depths(spec, cfg);
    let core_mask = training_mask(&s.expand(&spec.encoder_widths, &spec.encoder_widths)?, cfg);
    Ok(vec![
        Segment {
            kind: SegmentKind::Encoder,
            start: 0,
            end: de,
            mask: spec.encoder_mask.clone(),
            lambda: spec.lambda_encoder,
        },
        Segment {
            kind: SegmentKind::Core,
            start: de,
            end: de + dc,
            mask: core_mask,
            lambda: None,
        },
        Segment {
            kind: SegmentKind::Decoder,
            start: de + dc,
            end: de + dc + dd,
            mask: spec.decoder_mask.clone(),
            lambda: spec.lambda_decoder,
        },
    ])
}

fn wrapper_layers(
    input: usize,
    output: usize,
    depth: usize,
    hidden: Activation,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Layer>> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(output, depth));
    Ok(MlpParams::init(&dims, hidden, Activation::Identity, rng)?
        .layers()
        .to_vec())
}

/// Randomly initialized encoder + core + decoder stack.
pub fn init_projected(spec: &ProjectionSpec, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<MlpParams> {
    spec.validate()?;
    let (di, de, dout) = (spec.input_units(), spec.encoder_units(), spec.output_units());
    let mut layers = wrapper_layers(di, de, spec.encoder_depth, cfg.activation, rng)?;
    layers.extend(init_params(de, de, cfg, rng)?.layers().iter().cloned());
    layers.extend(wrapper_layers(de, dout, spec.decoder_depth, cfg.activation, rng)?);
    MlpParams::new(layers)
}

/// Full objective: mean squared reconstruction error plus the weighted
/// penalty of every segment.
pub fn projected_objective(
    params: &MlpParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    segments: &[Segment],
    lambdas: &[f64],
    cfg: &TrainConfig,
) -> Result<f64> {
    if lambdas.len() != segments.len() {
        return Err(NgmError::Dimension("one lambda per segment expected".into()));
    }
    let mut total = crate::learning::regression_loss(params, x, y)?;
    for (s, lam) in segments.iter().zip(lambdas) {
        let eval = structure_penalty_eval(&params.layers()[s.start..s.end], &s.complement(), cfg.norm, cfg.eps_log);
        total += lam * eval.value;
    }
    Ok(total)
}

/// Trains encoder, core and decoder jointly on rows encoded by `schema`
/// against the feature-level mask `s`.
pub fn fit_ngm_generic(
    x: &DMatrix<f64>,
    schema: &FeatureSchema,
    s: &DependencyMask,
    spec: &ProjectionSpec,
    cfg: &TrainConfig,
) -> Result<NgmModel> {
    cfg.validate()?;
    spec.validate()?;
    if spec.input_widths != schema.unit_widths() || spec.output_widths != schema.unit_widths() {
        return Err(NgmError::Dimension(
            "projection widths do not match the schema's encoding".into(),
        ));
    }
    if x.ncols() != spec.input_units() {
        return Err(NgmError::Dimension(format!(
            "data has {} columns, projections expect {}",
            x.ncols(),
            spec.input_units()
        )));
    }
    if s.rows() != schema.len() || s.cols() != schema.len() {
        return Err(NgmError::Dimension("mask does not match the schema".into()));
    }
    let segments = projection_segments(s, spec, cfg)?;
    let overall = training_mask(&s.expand(&spec.input_widths, &spec.output_widths)?, cfg);
    let blocks = feature_blocks(&spec.input_widths, &spec.output_widths);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = init_projected(spec, cfg, &mut rng)?;
    let fitted = train(x, x, params, &segments, &overall, &blocks, cfg, &mut rng)?;
    Ok(fitted.into_model(
        schema.clone(),
        s.clone(),
        overall,
        InputLayout::Standard,
        segments,
        cfg.clone(),
    ))
}
