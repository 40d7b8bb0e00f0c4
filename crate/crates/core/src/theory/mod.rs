//! Executable versions of the convergence and trapping analysis: the
//! output-dynamics kernel P(t), the contraction curve, the A/B/C induction
//! properties and the Gaussian-regime decay statistics.

mod bounds;
mod gaussian;
mod kernel;
mod report;

pub use bounds::{
    check_property_b, check_property_c, init_loss_bound, theorem1_bound_curve,
    width_requirement, Theorem1Curve, DEFAULT_C_B,
};
pub use gaussian::{
    drift_shrinks_with_depth, half_chi_mean, mc_product_norm, moment_check,
    perturbation_stability, stuck_window_check, McProductStats, MomentCheck, StuckVerdict,
    StuckWindow,
};
pub use kernel::{
    build_p, dynamics_residual, p_eig_window, DynamicsResidual, PWindow, DEFAULT_P_CAP,
};
pub use report::{CheckRow, Comparison, TheoryReport, Verdict};

use crate::error::Result;
use crate::linalg::Matrix;
use crate::network::{NetworkState, ScaledMatrix};

/// Partial-product pairs used for the near-isometry diagnostics:
/// `(1, i)`, `(i, L)` and `(i, i + ⌈L/4⌉)` for all valid `i`, without
/// `(1, L)`, sorted and deduplicated.
pub fn sampled_pairs(depth: usize) -> Vec<(usize, usize)> {
    let l = depth;
    let q = l.div_ceil(4);
    let mut pairs = Vec::with_capacity(3 * l);
    for i in 1..=l {
        pairs.push((1, i));
        pairs.push((i, l));
        if i + q <= l {
            pairs.push((i, i + q));
        }
    }
    pairs.retain(|&p| p != (1, l));
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Layers normalized by their nominal scale, `A_i = W_i / (√d_i σ_i)`, with
/// `β = α ∏ √d_i σ_i` kept as ln β.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledWeights {
    pub a: Vec<Matrix>,
    pub log_beta: f64,
}

impl ScaledWeights {
    pub fn from_network(net: &NetworkState) -> Self {
        let a = (1..=net.depth())
            .map(|i| net.layer(i).scale((-net.log_layer_scale(i)).exp()))
            .collect();
        ScaledWeights {
            a,
            log_beta: net.log_beta(),
        }
    }

    pub fn depth(&self) -> usize {
        self.a.len()
    }

    /// `A_j ⋯ A_i` in log-scaled form (1-based, `i ≤ j`).
    pub fn product(&self, i: usize, j: usize) -> ScaledMatrix {
        let mut acc = ScaledMatrix::new(self.a[i - 1].clone(), 0.0);
        for k in i + 1..=j {
            let next = Matrix::wrap(self.a[k - 1].as_dmatrix() * acc.mat.as_dmatrix());
            acc = ScaledMatrix::new(next, acc.log_scale);
        }
        acc
    }

    /// ln ‖A_{j:1}‖ for j = 1..L from a single prefix pass.
    pub fn prefix_log_norms(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.depth());
        let mut acc = ScaledMatrix::new(self.a[0].clone(), 0.0);
        out.push(acc.log_spectral());
        for k in 2..=self.depth() {
            let next = Matrix::wrap(self.a[k - 1].as_dmatrix() * acc.mat.as_dmatrix());
            acc = ScaledMatrix::new(next, acc.log_scale);
            out.push(acc.log_spectral());
        }
        out
    }

    /// `β A_{L:1}` as a dense matrix.
    pub fn end_to_end(&self) -> Result<Matrix> {
        let p = self.product(1, self.depth());
        Ok(p.mat.scale((p.log_scale + self.log_beta).exp()))
    }
}
