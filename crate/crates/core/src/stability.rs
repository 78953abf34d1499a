//! SVCCA similarity between representation matrices, per-layer
//! representation stability, and the per-task meta-scaler.
//!
//! After centering, each matrix is reduced to the leading left singular
//! vectors that carry the requested share of variance. Directions with
//! numerically zero singular values are always dropped. The canonical
//! correlations between two such orthonormal bases are the singular values
//! of `U_xᵀ U_y`, so no covariance regularisation is needed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::metalearn::ModelParams;

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.99;

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvccaOptions {
    pub variance_threshold: f64,
    /// Upper bound on retained directions per matrix.
    pub max_dims: Option<usize>,
}

impl Default for SvccaOptions {
    fn default() -> Self {
        Self {
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            max_dims: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Svcca {
    /// Mean canonical correlation in `[0, 1]`.
    pub similarity: f64,
    pub correlations: Vec<f64>,
    pub dims: (usize, usize),
    /// Set when either input has zero variance; `similarity` is then 0.
    pub degenerate: bool,
}

/// One rs measurement of a layer at a training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityTrace {
    pub layer: usize,
    pub epoch: usize,
    pub rs: f64,
}

pub fn svcca(x: &Tensor, y: &Tensor, variance_threshold: f64) -> Result<f64> {
    let opts = SvccaOptions {
        variance_threshold,
        max_dims: None,
    };
    Ok(svcca_detailed(x, y, &opts)?.similarity)
}

pub fn svcca_detailed(x: &Tensor, y: &Tensor, opts: &SvccaOptions) -> Result<Svcca> {
    if !(opts.variance_threshold > 0.0 && opts.variance_threshold <= 1.0) {
        return Err(Error::domain(format!(
            "variance_threshold must lie in (0, 1], got {}",
            opts.variance_threshold
        )));
    }
    if opts.max_dims == Some(0) {
        return Err(Error::domain("max_dims must be at least 1"));
    }
    for m in [x, y] {
        if m.rank() != 2 || m.rows() < 2 {
            return Err(Error::invalid(format!(
                "representation needs at least 2 rows, got shape {:?}",
                m.shape()
            )));
        }
        if !m.is_finite() {
            return Err(Error::Numeric("representation contains non-finite values".into()));
        }
    }
    if x.rows() != y.rows() {
        return Err(Error::Shape {
            op: "svcca",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let (ux, uy) = match (reduced_basis(x, opts), reduced_basis(y, opts)) {
        (Some(ux), Some(uy)) => (ux, uy),
        (ux, uy) => {
            return Ok(Svcca {
                similarity: 0.0,
                correlations: Vec::new(),
                dims: (ux.map_or(0, |u| u.ncols()), uy.map_or(0, |u| u.ncols())),
                degenerate: true,
            })
        }
    };
    let dims = (ux.ncols(), uy.ncols());
    let cross = ux.transpose() * &uy;
    let mut correlations: Vec<f64> = cross
        .singular_values()
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    correlations.sort_by(|a, b| b.total_cmp(a));
    correlations.truncate(dims.0.min(dims.1));
    let mean = correlations.iter().sum::<f64>() / correlations.len() as f64;
    Ok(Svcca {
        similarity: mean.clamp(0.0, 1.0),
        correlations,
        dims,
        degenerate: false,
    })
}

/// Left singular vectors and singular values of `a`.
///
/// nalgebra's bidiagonal SVD occasionally returns a factorization that does
/// not reconstruct an exactly rank-deficient input (errors near 1e-3 on a
/// centred 3×3). Each result is therefore checked, falling back to the
/// transpose and then to an SVD of the QR factor R.
fn left_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let tol = 1e-10 * a.norm().max(f64::MIN_POSITIVE);
    let fits = |u: &DMatrix<f64>, s: &DVector<f64>, v_t: &DMatrix<f64>| {
        (u * DMatrix::from_diagonal(s) * v_t - a).norm() <= tol
    };
    let direct = a.clone().svd(true, true);
    let (u, v_t) = (direct.u.expect("u requested"), direct.v_t.expect("v_t requested"));
    if fits(&u, &direct.singular_values, &v_t) {
        return (u, direct.singular_values);
    }
    let t = a.transpose().svd(true, true);
    let (tu, tv_t) = (t.u.expect("u requested"), t.v_t.expect("v_t requested"));
    let (u, v_t) = (tv_t.transpose(), tu.transpose());
    if fits(&u, &t.singular_values, &v_t) {
        return (u, t.singular_values);
    }
    let qr = a.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let inner = r.svd(true, false);
    (q * inner.u.expect("u requested"), inner.singular_values)
}

/// Orthonormal basis of the retained directions, or `None` at zero variance.
fn reduced_basis(m: &Tensor, opts: &SvccaOptions) -> Option<DMatrix<f64>> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut a = DMatrix::from_row_slice(rows, cols, m.data());
    for mut col in a.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let (u, sv) = left_svd(&a);
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let top = sv[order[0]];
    if !(top > 0.0) {
        return None;
    }
    let order: Vec<usize> = order
        .into_iter()
        .filter(|&i| sv[i] > top * RANK_TOL)
        .collect();
    let total: f64 = order.iter().map(|&i| sv[i].powi(2)).sum();
    let mut keep = 0;
    let mut acc = 0.0;
    for &i in &order {
        acc += sv[i].powi(2);
        keep += 1;
        if acc >= opts.variance_threshold * total * (1.0 - 1e-12) {
            break;
        }
    }
    if let Some(cap) = opts.max_dims {
        keep = keep.min(cap);
    }
    Some(DMatrix::from_fn(rows, keep, |r, c| u[(r, order[c])]))
}

/// SVCCA of layer `layer` between two models on a fixed probe batch. Layers
/// are numbered through the body and end with the head.
pub fn representation_stability(
    model_t: &ModelParams,
    model_prev: &ModelParams,
    probe: &Tensor,
    layer: usize,
    variance_threshold: f64,
) -> Result<f64> {
    let count = model_t.num_layers();
    if layer >= count || model_prev.num_layers() != count {
        return Err(Error::invalid(format!(
            "layer {layer} out of range for models with {count} and {} layers",
            model_prev.num_layers()
        )));
    }
    let a = model_t.layer_output(probe, layer)?;
    let b = model_prev.layer_output(probe, layer)?;
    svcca(&a, &b, variance_threshold)
}

/// rs for every layer at once.
pub fn stability_profile(
    model_t: &ModelParams,
    model_prev: &ModelParams,
    probe: &Tensor,
    epoch: usize,
    variance_threshold: f64,
) -> Result<Vec<StabilityTrace>> {
    let a = model_t.layer_outputs(probe)?;
    let b = model_prev.layer_outputs(probe)?;
    if a.len() != b.len() {
        return Err(Error::invalid("models differ in depth"));
    }
    a.iter()
        .zip(&b)
        .enumerate()
        .map(|(layer, (x, y))| {
            Ok(StabilityTrace {
                layer,
                epoch,
                rs: svcca(x, y, variance_threshold)?,
            })
        })
        .collect()
}

/// Task weight from the head-input representation on the query inputs after
/// the last and the penultimate inner steps. Without a penultimate state the
/// weight is 1.
///
/// Retained directions are capped at half the row count, since query sets are
/// often smaller than the embedding width.
pub fn meta_scaler(final_rep: &Tensor, prev_rep: Option<&Tensor>) -> Result<f64> {
    let Some(prev) = prev_rep else {
        return Ok(1.0);
    };
    if final_rep.data() == prev.data() {
        return Ok(1.0);
    }
    let opts = SvccaOptions {
        variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
        max_dims: Some((final_rep.rows() / 2).max(1)),
    };
    Ok(svcca_detailed(final_rep, prev, &opts)?.similarity)
}
