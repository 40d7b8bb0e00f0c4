//! Initial weight stacks: scaled Haar-orthogonal and iid Gaussian.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::NetworkState;
use crate::rng::GaussianStream;

const STREAM_LAYER: u64 = 0x1A7E_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Orthogonal,
    Gaussian,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Orthogonal => "orthogonal",
            SchemeKind::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "orthogonal" | "orth" | "ot" => Ok(SchemeKind::Orthogonal),
            "gaussian" | "gauss" | "gs" => Ok(SchemeKind::Gaussian),
            other => Err(format!("unknown init scheme {other:?}")),
        }
    }
}

/// Initialization family plus per-layer standard deviations for the
/// Gaussian family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitScheme {
    pub kind: SchemeKind,
    /// Empty means 1.0 for every layer; a single entry is broadcast.
    pub sigma: Vec<f64>,
}

impl InitScheme {
    pub fn orthogonal() -> Self {
        InitScheme {
            kind: SchemeKind::Orthogonal,
            sigma: Vec::new(),
        }
    }

    pub fn gaussian() -> Self {
        InitScheme {
            kind: SchemeKind::Gaussian,
            sigma: Vec::new(),
        }
    }

    pub fn gaussian_with_sigma(sigma: Vec<f64>) -> Self {
        InitScheme {
            kind: SchemeKind::Gaussian,
            sigma,
        }
    }

    pub fn of_kind(kind: SchemeKind) -> Self {
        InitScheme {
            kind,
            sigma: Vec::new(),
        }
    }

    /// σ for layer `i` (1-based).
    pub fn sigma_at(&self, i: usize) -> f64 {
        match self.sigma.len() {
            0 => 1.0,
            1 => self.sigma[0],
            _ => self.sigma[i - 1],
        }
    }

    fn validate(&self, plan: &DimensionPlan) -> Result<()> {
        if self.sigma.len() > 1 && self.sigma.len() != plan.depth() {
            return Err(Error::invalid(format!(
                "{} sigmas given for depth {}",
                self.sigma.len(),
                plan.depth()
            )));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("Gaussian sigmas must be positive and finite"));
        }
        if self.kind == SchemeKind::Orthogonal {
            plan.check_orthogonal()?;
        }
        Ok(())
    }

    /// Nominal singular-value scale of layer `i`: √m for orthogonal layers,
    /// √d_i·σ_i for Gaussian ones.
    pub fn layer_scale(&self, plan: &DimensionPlan, i: usize) -> f64 {
        match self.kind {
            SchemeKind::Orthogonal => (plan.width() as f64).sqrt(),
            SchemeKind::Gaussian => (plan.dims()[i] as f64).sqrt() * self.sigma_at(i),
        }
    }

    /// Layers whose `d_i σ_i²` falls outside `[L^-c, L^c]`.
    pub fn sanity_warnings(&self, plan: &DimensionPlan, exponent: f64) -> Vec<String> {
        if self.kind != SchemeKind::Gaussian {
            return Vec::new();
        }
        let l = plan.depth() as f64;
        let (lo, hi) = (l.powf(-exponent), l.powf(exponent));
        (1..=plan.depth())
            .filter_map(|i| {
                let v = plan.dims()[i] as f64 * self.sigma_at(i).powi(2);
                (v < lo || v > hi).then(|| {
                    format!("layer {i}: d_i*sigma_i^2 = {v} outside [{lo}, {hi}]")
                })
            })
            .collect()
    }
}

/// Layer widths `d_0 = d_x, d_1, …, d_L = d_y`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DimensionPlan {
    dims: Vec<usize>,
    width: usize,
}

impl DimensionPlan {
    /// `depth` layers with every hidden width equal to `width`. For depth 1
    /// the width is only used to size the orthogonal factor.
    pub fn uniform(d_x: usize, d_y: usize, width: usize, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("depth must be at least 1"));
        }
        if d_x == 0 || d_y == 0 || width == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut dims = vec![width; depth + 1];
        dims[0] = d_x;
        dims[depth] = d_y;
        Ok(DimensionPlan { dims, width })
    }

    /// Arbitrary widths; the reported hidden width is the largest one.
    pub fn from_dims(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("need at least d_0 and d_1"));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let width = dims.iter().copied().max().unwrap_or(1);
        let width = if dims.len() > 2 {
            dims[1..dims.len() - 1].iter().copied().max().unwrap_or(width)
        } else {
            width
        };
        Ok(DimensionPlan { dims, width })
    }

    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn d_x(&self) -> usize {
        self.dims[0]
    }

    pub fn d_y(&self) -> usize {
        self.dims[self.depth()]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Shape `(d_i, d_{i-1})` of layer `i` (1-based).
    pub fn layer_shape(&self, i: usize) -> (usize, usize) {
        (self.dims[i], self.dims[i - 1])
    }

    fn check_orthogonal(&self) -> Result<()> {
        let l = self.depth();
        if self.dims[1..l].iter().any(|&d| d != self.width) {
            return Err(Error::invalid("orthogonal init needs equal hidden widths"));
        }
        if self.width < self.d_x().max(self.d_y()) {
            return Err(Error::invalid(format!(
                "orthogonal init needs width {} >= max(d_x, d_y) = {}",
                self.width,
                self.d_x().max(self.d_y())
            )));
        }
        Ok(())
    }
}

/// Haar-distributed `m × m` orthogonal matrix: QR of an iid Gaussian matrix
/// with the columns of Q multiplied by the signs of diag(R).
pub fn sample_haar_orthogonal(m: usize, stream: &mut GaussianStream) -> Matrix {
    let g = stream.matrix(m, m, 1.0).into_dmatrix();
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Matrix::from_dmatrix(q).expect("m >= 1")
}

/// ln α for the plan and scheme, computed without forming m^(L-1).
pub fn log_scaling_alpha(plan: &DimensionPlan, scheme: &InitScheme) -> f64 {
    let l = plan.depth();
    let d_y = plan.d_y() as f64;
    match scheme.kind {
        SchemeKind::Orthogonal => -0.5 * ((l as f64 - 1.0) * (plan.width() as f64).ln() + d_y.ln()),
        SchemeKind::Gaussian => {
            let hidden: f64 = (1..l)
                .map(|i| (plan.dims()[i] as f64).ln() + 2.0 * scheme.sigma_at(i).ln())
                .sum();
            -0.5 * (d_y.ln() + 2.0 * scheme.sigma_at(l).ln() + hidden)
        }
    }
}

/// Output scaling α; underflows to 0 only for astronomically deep/wide
/// plans, where [`log_scaling_alpha`] should be used instead.
pub fn scaling_alpha(plan: &DimensionPlan, scheme: &InitScheme) -> f64 {
    log_scaling_alpha(plan, scheme).exp()
}

/// Samples `W_1(0), …, W_L(0)` with independent per-layer streams derived
/// from `seed`.
pub fn init_weights(plan: &DimensionPlan, scheme: &InitScheme, seed: u64) -> Result<NetworkState> {
    scheme.validate(plan)?;
    let l = plan.depth();
    let weights: Vec<Matrix> = (1..=l)
        .map(|i| {
            let mut stream = GaussianStream::derived(seed, &[STREAM_LAYER, i as u64]);
            let (rows, cols) = plan.layer_shape(i);
            match scheme.kind {
                SchemeKind::Gaussian => stream.matrix(rows, cols, scheme.sigma_at(i)),
                SchemeKind::Orthogonal => {
                    let m = plan.width();
                    let q = sample_haar_orthogonal(m, &mut stream).scale((m as f64).sqrt());
                    q.row_block(0, rows).column_block(0, cols)
                }
            }
        })
        .collect();
    NetworkState::new(weights, log_scaling_alpha(plan, scheme), plan.clone(), scheme.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{matmul, singular_values};

    fn gram_error(a: &Matrix, scale: f64) -> f64 {
        let g = matmul(&a.transpose(), a).unwrap();
        g.sub(&Matrix::identity(g.rows()).scale(scale)).unwrap().max_abs()
    }

    #[test]
    fn haar_is_orthogonal() {
        let mut s = GaussianStream::new(1);
        for m in [1, 2, 4, 17] {
            let q = sample_haar_orthogonal(m, &mut s);
            assert!(gram_error(&q, 1.0) < 1e-12);
        }
    }

    #[test]
    fn haar_one_by_one_sign_is_fair() {
        let mut s = GaussianStream::new(2);
        let n = 10_000;
        let plus = (0..n)
            .filter(|_| sample_haar_orthogonal(1, &mut s).get(0, 0) > 0.0)
            .count();
        let freq = plus as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.05, "{freq}");
        let v = sample_haar_orthogonal(1, &mut s).get(0, 0);
        assert_eq!(v.abs(), 1.0);
    }

    #[test]
    fn haar_first_column_is_uniform_on_sphere() {
        // Each coordinate² of a uniform unit vector in R^m has mean 1/m and
        // variance 2(m-1)/(m²(m+2)).
        let m = 4;
        let n = 10_000;
        let mut s = GaussianStream::new(3);
        let mut sums = vec![0.0; m];
        for _ in 0..n {
            let q = sample_haar_orthogonal(m, &mut s);
            for (k, acc) in sums.iter_mut().enumerate() {
                *acc += q.get(k, 0).powi(2);
            }
        }
        let mf = m as f64;
        let sd = (2.0 * (mf - 1.0) / (mf * mf * (mf + 2.0)) / n as f64).sqrt();
        for acc in sums {
            let mean = acc / n as f64;
            assert!((mean - 1.0 / mf).abs() < 3.0 * sd, "{mean}");
        }
    }

    #[test]
    fn orthogonal_layers_satisfy_isometries() {
        let plan = DimensionPlan::uniform(2, 3, 4, 4).unwrap();
        let net = init_weights(&plan, &InitScheme::orthogonal(), 5).unwrap();
        let w = net.weights();
        assert!(gram_error(&w[0], 4.0) < 1e-12);
        assert_eq!(w[0].shape(), (4, 2));
        for sv in singular_values(&w[0]) {
            assert!((sv - 2.0).abs() < 1e-12);
        }
        for hidden in &w[1..3] {
            assert!(gram_error(hidden, 4.0) < 1e-12);
            assert!(gram_error(&hidden.transpose(), 4.0) < 1e-12);
        }
        assert!(gram_error(&w[3].transpose(), 4.0) < 1e-12);
    }

    #[test]
    fn orthogonal_requires_wide_enough_plan() {
        let plan = DimensionPlan::uniform(8, 2, 4, 3).unwrap();
        assert!(matches!(
            init_weights(&plan, &InitScheme::orthogonal(), 0),
            Err(Error::InvalidInput(_))
        ));
        assert!(init_weights(&plan, &InitScheme::gaussian(), 0).is_ok());
    }

    #[test]
    fn gaussian_frobenius_mean() {
        let plan = DimensionPlan::uniform(64, 64, 64, 2).unwrap();
        let total: f64 = (0..100)
            .map(|seed| {
                let net = init_weights(&plan, &InitScheme::gaussian(), seed).unwrap();
                net.weights()[0].frobenius_norm().powi(2)
            })
            .sum();
        let mean = total / 100.0;
        assert!((mean / 4096.0 - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn layers_use_independent_streams() {
        let plan = DimensionPlan::uniform(3, 3, 3, 3).unwrap();
        let net = init_weights(&plan, &InitScheme::gaussian(), 9).unwrap();
        assert_ne!(net.weights()[0], net.weights()[1]);
        let again = init_weights(&plan, &InitScheme::gaussian(), 9).unwrap();
        assert_eq!(net.weights(), again.weights());
    }

    #[test]
    fn alpha_values() {
        let plan = DimensionPlan::uniform(2, 2, 4, 3).unwrap();
        let a = scaling_alpha(&plan, &InitScheme::orthogonal());
        assert!((a - 1.0 / 32f64.sqrt()).abs() < 1e-15);
        let shallow = DimensionPlan::uniform(5, 3, 7, 1).unwrap();
        for scheme in [InitScheme::orthogonal(), InitScheme::gaussian()] {
            assert!((scaling_alpha(&shallow, &scheme) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        }
        // Identical α for both schemes at σ = 1 and uniform width.
        let plan = DimensionPlan::uniform(6, 2, 9, 5).unwrap();
        let (o, g) = (
            log_scaling_alpha(&plan, &InitScheme::orthogonal()),
            log_scaling_alpha(&plan, &InitScheme::gaussian()),
        );
        assert!((o - g).abs() < 1e-12);
    }

    #[test]
    fn alpha_survives_huge_depth() {
        let plan = DimensionPlan::uniform(10, 10, 1000, 700).unwrap();
        let la = log_scaling_alpha(&plan, &InitScheme::orthogonal());
        let expect = -0.5 * (699.0 * 1000f64.ln() + 10f64.ln());
        assert!((la - expect).abs() < 1e-9);
        assert!(la.is_finite());
    }

    #[test]
    fn gaussian_alpha_preserves_norm_in_expectation() {
        let plan = DimensionPlan::uniform(10, 10, 64, 10).unwrap();
        let scheme = InitScheme::gaussian();
        let mut probe = GaussianStream::new(77);
        let mut acc = 0.0;
        for seed in 0..200 {
            let net = init_weights(&plan, &scheme, seed).unwrap();
            let x = probe.matrix(10, 1, 1.0);
            let x = x.scale(1.0 / x.frobenius_norm());
            acc += net.forward_output(&x).unwrap().frobenius_norm().powi(2);
        }
        let mean = acc / 200.0;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn sigma_list_checks() {
        let plan = DimensionPlan::uniform(4, 2, 8, 3).unwrap();
        let bad = InitScheme::gaussian_with_sigma(vec![1.0, 1.0]);
        assert!(init_weights(&plan, &bad, 0).is_err());
        let neg = InitScheme::gaussian_with_sigma(vec![-1.0]);
        assert!(init_weights(&plan, &neg, 0).is_err());
        let tiny = InitScheme::gaussian_with_sigma(vec![1e-3]);
        assert_eq!(tiny.sanity_warnings(&plan, 2.0).len(), 3);
        assert!(InitScheme::gaussian().sanity_warnings(&plan, 2.0).is_empty());
        assert_eq!(InitScheme::gaussian().sanity_warnings(&plan, 1.0).len(), 2);
    }

    #[test]
    fn scheme_names_parse() {
        assert_eq!("orthogonal".parse::<SchemeKind>().unwrap(), SchemeKind::Orthogonal);
        assert_eq!("Gaussian".parse::<SchemeKind>().unwrap(), SchemeKind::Gaussian);
        assert!("xavier".parse::<SchemeKind>().is_err());
    }
}
