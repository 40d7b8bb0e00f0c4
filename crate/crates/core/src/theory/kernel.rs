//! The kernel `P(t) = α² Σ_i (P_{i−1}ᵀP_{i−1}) ⊗ (S_{i+1}S_{i+1}ᵀ)` that
//! drives the linearized output dynamics `vec ΔU ≈ −η P vec(U − Y)`.

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{kron, sym_eigvals, vec, Matrix};
use crate::network::{NetworkState, ScaledMatrix};
use crate::theory::sampled_pairs;

/// Largest `n·d_y` for which P is formed explicitly.
pub const DEFAULT_P_CAP: usize = 4096;

fn gram(s: &ScaledMatrix, transpose_first: bool) -> DMatrix<f64> {
    let m = s.mat.as_dmatrix();
    if transpose_first {
        m.transpose() * m
    } else {
        m * m.transpose()
    }
}

/// Dense `P` of size `n·d_y` (column-major vec convention).
pub fn build_p(net: &NetworkState, x: &Matrix, cap: usize) -> Result<Matrix> {
    let n = x.cols();
    let d_y = net.plan().d_y();
    if n * d_y > cap {
        return Err(Error::invalid(format!(
            "P would be {0}x{0}, above the cap {cap}",
            n * d_y
        )));
    }
    let cache = net.product_cache(x)?;
    let mut p = DMatrix::zeros(n * d_y, n * d_y);
    for i in 1..=net.depth() {
        let pre = cache.prefix(i - 1);
        let suf = cache.suffix(i + 1);
        let coef = (2.0 * (net.log_alpha() + pre.log_scale + suf.log_scale)).exp();
        let k = kron(&Matrix::wrap(gram(pre, true)), &Matrix::wrap(gram(suf, false)))?;
        p += k.as_dmatrix() * coef;
    }
    Ok(Matrix::wrap(p))
}

/// Extreme eigenvalues of P against the window
/// `[(3/5) L σ_min²(X)/d_y, 2 L σ_max²(X)/d_y]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PWindow {
    pub lam_min: f64,
    pub lam_max: f64,
    pub lower: f64,
    pub upper: f64,
    /// Sampled partial products inside the 0.9/1.1 near-isometry window.
    pub isometry_ok: bool,
    /// Eigenvalues are exact (P formed) rather than Kronecker-factor bounds.
    pub exact: bool,
    pub pass: bool,
}

/// Near-isometry of sampled partial products relative to their nominal
/// scale.
fn isometry_holds(net: &NetworkState) -> Result<bool> {
    let (lo, hi) = (0.9f64.ln(), 1.1f64.ln());
    for (i, j) in sampled_pairs(net.depth()) {
        let (s_hi, s_lo) = net.log_sv_extremes(i, j)?;
        let nominal: f64 = (i..=j).map(|k| net.log_layer_scale(k)).sum();
        if s_hi - nominal > hi || s_lo - nominal < lo {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn p_eig_window(net: &NetworkState, ds: &Dataset) -> Result<PWindow> {
    let stats = ds.stats();
    let l = net.depth() as f64;
    let d_y = net.plan().d_y() as f64;
    let lower = 0.6 * l * stats.sigma_min_x.powi(2) / d_y;
    let upper = 2.0 * l * stats.norm_x.powi(2) / d_y;
    let isometry_ok = isometry_holds(net)?;

    let exact = ds.n() * net.plan().d_y() <= DEFAULT_P_CAP;
    let (lam_min, lam_max) = if exact {
        let eig = sym_eigvals(&build_p(net, ds.x(), DEFAULT_P_CAP)?)?;
        (eig[eig.len() - 1], eig[0])
    } else {
        // λ(A ⊗ B) = λ(A)λ(B), and λ_min/λ_max of a PSD sum are bounded by
        // the sums of the termwise extremes.
        let cache = net.product_cache(ds.x())?;
        let n = ds.n();
        let dy = net.plan().d_y();
        let (mut lo, mut hi) = (0.0, 0.0);
        for i in 1..=net.depth() {
            let pre = cache.prefix(i - 1);
            let suf = cache.suffix(i + 1);
            let (p_hi, p_lo) = pre.log_singular_extremes();
            let (s_hi, s_lo) = suf.log_singular_extremes();
            // σ_min of a wide factor is only a Gram eigenvalue when the
            // factor has at least as many rows as the Gram size.
            let p_lo = if pre.mat.rows() >= n { p_lo } else { f64::NEG_INFINITY };
            let s_lo = if suf.mat.cols() >= dy { s_lo } else { f64::NEG_INFINITY };
            hi += (2.0 * (net.log_alpha() + p_hi + s_hi)).exp();
            lo += (2.0 * (net.log_alpha() + p_lo + s_lo)).exp();
        }
        (lo, hi)
    };
    let pass = isometry_ok && lam_min >= lower && lam_max <= upper;
    Ok(PWindow {
        lam_min,
        lam_max,
        lower,
        upper,
        isometry_ok,
        exact,
        pass,
    })
}

/// Decomposition of one step into the kernel term and the higher-order
/// remainder `α E(t) X = ΔU + η·reshape(P vec(U − Y))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicsResidual {
    /// Relative disagreement between the remainder computed through P and
    /// through per-layer gradients.
    pub identity_err: f64,
    /// α‖E(t)X‖_F.
    pub e_norm: f64,
    /// (1/6)·η·λ_min(P(t))·‖U(t) − Y‖_F.
    pub e_bound: f64,
    pub lam_min: f64,
    pub pass: bool,
}

pub fn dynamics_residual(
    net_t: &NetworkState,
    net_t1: &NetworkState,
    ds: &Dataset,
    eta: f64,
) -> Result<DynamicsResidual> {
    let x = ds.x();
    let (n, d_y) = (ds.n(), ds.d_y());
    let u0 = net_t.forward_output(x)?;
    let u1 = net_t1.forward_output(x)?;
    let resid = u0.sub(ds.y())?;
    let du = u1.sub(&u0)?;

    let p = build_p(net_t, x, DEFAULT_P_CAP)?;
    let p_r = Matrix::wrap(p.as_dmatrix() * vec(&resid).as_dmatrix());
    let kernel_term = Matrix::wrap(
        nalgebra::DMatrix::from_column_slice(d_y, n, p_r.as_dmatrix().as_slice()),
    );
    let e_p = du.add(&kernel_term.scale(eta))?;

    // Same first-order term assembled from gradients: α Σ S_{i+1} G_i P_{i−1}.
    let cache = net_t.product_cache(x)?;
    let grads = net_t.gradients(ds)?;
    let mut first = DMatrix::zeros(d_y, n);
    for (k, g) in grads.iter().enumerate() {
        let i = k + 1;
        let pre = cache.prefix(i - 1);
        let suf = cache.suffix(i + 1);
        let coef = (net_t.log_alpha() + pre.log_scale + suf.log_scale).exp();
        first += (suf.mat.as_dmatrix() * g.as_dmatrix() * pre.mat.as_dmatrix()) * coef;
    }
    let e_g = du.add(&Matrix::wrap(first).scale(eta))?;

    let scale = du
        .frobenius_norm()
        .max(eta * kernel_term.frobenius_norm())
        .max(f64::MIN_POSITIVE);
    let identity_err = e_p.sub(&e_g)?.frobenius_norm() / scale;

    let eig = sym_eigvals(&p)?;
    let lam_min = eig[eig.len() - 1];
    let e_norm = e_p.frobenius_norm();
    let e_bound = eta * lam_min * resid.frobenius_norm() / 6.0;
    Ok(DynamicsResidual {
        identity_err,
        e_norm,
        e_bound,
        lam_min,
        pass: e_norm <= e_bound,
    })
}
