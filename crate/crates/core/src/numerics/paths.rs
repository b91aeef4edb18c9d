//! Path-dependency matrix `S_nn = prod |W_l|` and the soft structure penalty
//! `log(eps + ||S_nn * S^c||)` with its exact gradient.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::mlp::{Layer, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    #[default]
    L2,
}

impl std::str::FromStr for NormKind {
    type Err = crate::NgmError;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" => Ok(NormKind::L1),
            "l2" => Ok(NormKind::L2),
            other => Err(crate::NgmError::Config(format!(
                "unknown norm `{other}`, expected l1 or l2"
            ))),
        }
    }
}

impl NormKind {
    /// Norm of a nonnegative matrix.
    pub fn apply(self, a: &DMatrix<f64>) -> f64 {
        match self {
            NormKind::L1 => a.iter().map(|v| v.abs()).sum(),
            NormKind::L2 => a.norm(),
        }
    }
}

/// Input-major path product (`in x out`) of a layer stack. With `normalize`
/// each weight matrix is divided by its Frobenius norm first; an all-zero
/// layer stays zero.
pub fn path_dependency_layers(layers: &[Layer], normalize: bool) -> DMatrix<f64> {
    let mut m: Option<DMatrix<f64>> = None;
    for l in layers {
        let p = abs_weight(&l.weight, normalize);
        m = Some(match m {
            None => p,
            Some(acc) => p * acc,
        });
    }
    m.expect("at least one layer").transpose()
}

pub fn path_dependency(p: &MlpParams, normalize: bool) -> DMatrix<f64> {
    path_dependency_layers(p.layers(), normalize)
}

fn abs_weight(w: &DMatrix<f64>, normalize: bool) -> DMatrix<f64> {
    let scale = if normalize {
        let n = w.norm();
        if n > 0.0 {
            1.0 / n
        } else {
            0.0
        }
    } else {
        1.0
    };
    w.map(|v| v.abs() * scale)
}

/// `||S_nn * S^c||_norm` with normalized weights.
pub fn masked_path_norm(layers: &[Layer], s_complement: &DMatrix<f64>, norm: NormKind) -> f64 {
    norm.apply(&path_dependency_layers(layers, true).component_mul(s_complement))
}

/// Fraction of path mass (l1) that falls on forbidden entries.
pub fn masked_path_ratio(layers: &[Layer], s_complement: &DMatrix<f64>) -> f64 {
    let s = path_dependency_layers(layers, true);
    let total: f64 = s.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    s.component_mul(s_complement).iter().sum::<f64>() / total
}

/// Value and weight gradients of the structure penalty.
#[derive(Debug, Clone)]
pub struct PenaltyEval {
    pub value: f64,
    pub masked_norm: f64,
    /// dValue/dW_l, same shape as each layer weight.
    pub weight_grads: Vec<DMatrix<f64>>,
}

/// `log(eps_log + ||S_nn * S^c||)` over normalized weights, with gradient.
pub fn structure_penalty_eval(
    layers: &[Layer],
    s_complement: &DMatrix<f64>,
    norm: NormKind,
    eps_log: f64,
) -> PenaltyEval {
    let n_layers = layers.len();
    let norms: Vec<f64> = layers.iter().map(|l| l.weight.norm()).collect();
    let hats: Vec<DMatrix<f64>> = layers
        .iter()
        .zip(&norms)
        .map(|(l, &n)| {
            if n > 0.0 {
                &l.weight / n
            } else {
                DMatrix::zeros(l.out_dim(), l.in_dim())
            }
        })
        .collect();
    let abs: Vec<DMatrix<f64>> = hats.iter().map(|h| h.abs()).collect();

    // right[l] = P_{l-1} ... P_0 (in_l x in); right[0] = I
    let in_dim = layers[0].in_dim();
    let mut right = Vec::with_capacity(n_layers + 1);
    right.push(DMatrix::<f64>::identity(in_dim, in_dim));
    for l in 0..n_layers {
        let next = &abs[l] * &right[l];
        right.push(next);
    }
    let product = &right[n_layers]; // out x in
    let masked = product.transpose().component_mul(s_complement);
    let masked_norm = norm.apply(&masked);
    let value = (eps_log + masked_norm).ln();

    let d_norm = 1.0 / (eps_log + masked_norm);
    let g_a: DMatrix<f64> = match norm {
        NormKind::L1 => masked.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        NormKind::L2 => {
            if masked_norm > 0.0 {
                &masked / masked_norm
            } else {
                DMatrix::zeros(masked.nrows(), masked.ncols())
            }
        }
    };
    // dV/dM where M = product (out x in)
    let g_m = (g_a.component_mul(s_complement) * d_norm).transpose();

    let mut weight_grads = vec![DMatrix::zeros(0, 0); n_layers];
    // left = P_{L-1} ... P_{l+1} (out x out_l), built from the top down
    let out_dim = layers[n_layers - 1].out_dim();
    let mut left = DMatrix::<f64>::identity(out_dim, out_dim);
    for l in (0..n_layers).rev() {
        let g_p = left.transpose() * &g_m * right[l].transpose();
        let g_hat = g_p.zip_map(&hats[l], |g, h| {
            if h > 0.0 {
                g
            } else if h < 0.0 {
                -g
            } else {
                0.0
            }
        });
        weight_grads[l] = if norms[l] > 0.0 {
            let inner = g_hat.dot(&hats[l]);
            (g_hat - &hats[l] * inner) / norms[l]
        } else {
            DMatrix::zeros(layers[l].out_dim(), layers[l].in_dim())
        };
        left = &left * &abs[l];
    }
    PenaltyEval {
        value,
        masked_norm,
        weight_grads,
    }
}

/// Squared Frobenius norm of the masked normalized path product.
pub fn lambda_from_paths(layers: &[Layer], s_complement: &DMatrix<f64>) -> f64 {
    path_dependency_layers(layers, true)
        .component_mul(s_complement)
        .norm_squared()
}
