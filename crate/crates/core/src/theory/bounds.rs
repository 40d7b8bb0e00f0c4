//! Contraction curve, width requirement and the A/B/C induction checks for
//! orthogonally initialized networks.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::init::SchemeKind;
use crate::network::{least_squares_opt, NetworkState};
use crate::theory::report::{CheckRow, TheoryReport};
use crate::trainer::theorem_lr;

/// Default constant in the initial-loss bound.
pub const DEFAULT_C_B: f64 = 10.0;

/// `ℓ* + (1 − ½ηLλ_r(XᵀX)/d_y)^t (ℓ(0) − ℓ*)` with the data-dependent parts
/// precomputed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Theorem1Curve {
    pub loss_opt: f64,
    pub loss0: f64,
    /// Per-step contraction factor.
    pub factor: f64,
}

impl Theorem1Curve {
    pub fn new(ds: &Dataset, depth: usize, d_y: usize, eta: f64, loss0: f64) -> Result<Self> {
        let limit = theorem_lr(ds, depth, d_y);
        if !(eta > 0.0) || eta > limit * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "learning rate {eta} outside (0, {limit}]"
            )));
        }
        let lam_r = ds.stats().sigma_min_x.powi(2);
        let factor = 1.0 - 0.5 * eta * depth as f64 * lam_r / d_y as f64;
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::invalid(format!("contraction factor {factor} outside (0, 1]")));
        }
        let (_, loss_opt) = least_squares_opt(ds)?;
        Ok(Theorem1Curve {
            loss_opt,
            loss0,
            factor,
        })
    }

    pub fn at(&self, t: usize) -> f64 {
        let decay = (t as f64 * (-(1.0 - self.factor)).ln_1p()).exp();
        self.loss_opt + decay * (self.loss0 - self.loss_opt)
    }
}

pub fn theorem1_bound_curve(
    ds: &Dataset,
    depth: usize,
    d_y: usize,
    eta: f64,
    loss0: f64,
    t: usize,
) -> Result<f64> {
    Ok(Theorem1Curve::new(ds, depth, d_y, eta, loss0)?.at(t))
}

fn wstar_norm(ds: &Dataset) -> Result<f64> {
    match ds.stats().norm_wstar {
        Some(v) => Ok(v),
        None => Ok(least_squares_opt(ds)?.0.spectral_norm()),
    }
}

/// `max(⌈C r̃ κ² (d_y(1 + ‖W*‖²) + ln(r/δ))⌉, d_x)`.
pub fn width_requirement(ds: &Dataset, d_y: usize, delta: f64, c: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) || !(c > 0.0) {
        return Err(Error::invalid("need delta in (0, 1) and C > 0"));
    }
    let s = ds.stats();
    let w = wstar_norm(ds)?;
    let inner = d_y as f64 * (1.0 + w * w) + (s.rank as f64 / delta).ln();
    let m = (c * s.stable_rank * s.kappa * s.kappa * inner).ceil();
    Ok((m as usize).max(ds.d_x()))
}

/// `c_B (1 + ln(r/δ)/d_y + ‖W*‖²) ‖X‖_F²`.
pub fn init_loss_bound(ds: &Dataset, d_y: usize, delta: f64, c_b: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("need delta in (0, 1)"));
    }
    let s = ds.stats();
    let w = wstar_norm(ds)?;
    Ok(c_b * (1.0 + (s.rank as f64 / delta).ln() / d_y as f64 + w * w) * s.frob_x.powi(2))
}

fn require_orthogonal(net: &NetworkState) -> Result<()> {
    if net.scheme().kind != SchemeKind::Orthogonal {
        return Err(Error::invalid("near-isometry window is defined for orthogonal nets"));
    }
    Ok(())
}

/// `0.9 m^{k/2} ≤ σ_min, σ_max ≤ 1.1 m^{k/2}` for each pair, `k = j − i + 1`,
/// compared in log space.
pub fn check_property_b(
    net0: &NetworkState,
    net_t: &NetworkState,
    pairs: &[(usize, usize)],
) -> Result<TheoryReport> {
    require_orthogonal(net_t)?;
    if net0.plan() != net_t.plan() {
        return Err(Error::invalid("networks have different plans"));
    }
    let l = net_t.depth();
    let log_m = (net_t.plan().width() as f64).ln();
    let mut report = TheoryReport::new();
    for &(i, j) in pairs {
        if (i, j) == (1, l) {
            continue;
        }
        let (hi, lo) = net_t.log_sv_extremes(i, j)?;
        let nominal = 0.5 * (j - i + 1) as f64 * log_m;
        report.push(CheckRow::at_most(format!("B_hi({i},{j})"), hi - nominal, 1.1f64.ln(), 0.0));
        report.push(CheckRow::at_least(format!("B_lo({i},{j})"), lo - nominal, 0.9f64.ln(), 0.0));
    }
    Ok(report)
}

/// `‖W_i(t) − W_i(0)‖_F ≤ 8√(B d_y)‖X‖ / (L σ_min²(X))` for every layer.
/// Gaussian nets get a single skipped row.
pub fn check_property_c(
    net0: &NetworkState,
    net_t: &NetworkState,
    ds: &Dataset,
    b_value: f64,
) -> Result<TheoryReport> {
    let s = ds.stats();
    let l = net_t.depth();
    let d_y = net_t.plan().d_y() as f64;
    let radius = 8.0 * (b_value * d_y).sqrt() * s.norm_x / (l as f64 * s.sigma_min_x.powi(2));
    let mut report = TheoryReport::new();
    let drifts = net_t
        .weights()
        .iter()
        .zip(net0.weights())
        .map(|(w, w0)| w.sub(w0).map(|d| d.frobenius_norm()))
        .collect::<Result<Vec<_>>>()?;
    if net_t.scheme().kind != SchemeKind::Orthogonal {
        let worst = drifts.iter().copied().fold(0.0, f64::max);
        report.push(CheckRow::skipped(
            "C_drift",
            worst,
            radius,
            "radius is derived for the orthogonal scheme",
        ));
        return Ok(report);
    }
    for (k, d) in drifts.into_iter().enumerate() {
        report.push(CheckRow::at_most(format!("C_drift({})", k + 1), d, radius, 0.0));
    }
    Ok(report)
}
