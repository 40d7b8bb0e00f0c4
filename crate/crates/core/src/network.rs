//! The deep linear network `f(x) = α W_L ⋯ W_1 x`.
//!
//! Long chains carry a separate natural-log scale and are rescaled by
//! powers of two whenever their entries leave a safe range, so depth 700
//! never overflows even though `m^(L/2)` does.

use std::f64::consts::LN_2;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::data::{Dataset, RANK_TOL};
use crate::error::{Error, Result};
use crate::init::{DimensionPlan, InitScheme, SchemeKind};
use crate::linalg::{singular_values, thin_left_mul, thin_update, Matrix};
use crate::metafile::Meta;
use crate::numfmt::fmt_g;

const RENORM_LO: f64 = 8.636168555094445e-78; // 2^-256
const RENORM_HI: f64 = 1.157920892373162e77; // 2^256

/// A matrix stored as `e^log_scale · mat`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledMatrix {
    pub mat: Matrix,
    pub log_scale: f64,
}

impl ScaledMatrix {
    pub fn new(mat: Matrix, log_scale: f64) -> Self {
        let mut s = ScaledMatrix { mat, log_scale };
        s.renormalize();
        s
    }

    /// Dense value; overflows to ±inf for astronomically large scales.
    pub fn to_matrix(&self) -> Matrix {
        self.mat.scale(self.log_scale.exp())
    }

    /// `(ln σ_max, ln σ_min)` over the `min(rows, cols)` singular values.
    pub fn log_singular_extremes(&self) -> (f64, f64) {
        let sv = singular_values(&self.mat);
        let hi = sv.first().copied().unwrap_or(0.0);
        let lo = sv.last().copied().unwrap_or(0.0);
        (hi.ln() + self.log_scale, lo.ln() + self.log_scale)
    }

    pub fn log_frobenius(&self) -> f64 {
        self.mat.frobenius_norm().ln() + self.log_scale
    }

    pub fn log_spectral(&self) -> f64 {
        self.mat.spectral_norm().ln() + self.log_scale
    }

    fn renormalize(&mut self) {
        renormalize(self.mat.as_dmatrix_mut(), &mut self.log_scale);
    }
}

/// Rescales by a power of two once the largest entry leaves
/// `[2^-256, 2^256]`; values in range are left untouched so ordinary
/// products stay bit-exact.
fn renormalize(m: &mut DMatrix<f64>, log_scale: &mut f64) {
    let a = m.amax();
    if a > 0.0 && a.is_finite() && !(RENORM_LO..=RENORM_HI).contains(&a) {
        let e = a.log2().round() as i32;
        if e != 0 {
            *m *= 2f64.powi(-e);
            *log_scale += e as f64 * LN_2;
        }
    }
}

/// Weights, scaling factor and the plan/scheme they were built from.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    weights: Vec<Matrix>,
    log_alpha: f64,
    plan: DimensionPlan,
    scheme: InitScheme,
}

impl NetworkState {
    pub fn new(
        weights: Vec<Matrix>,
        log_alpha: f64,
        plan: DimensionPlan,
        scheme: InitScheme,
    ) -> Result<Self> {
        if weights.len() != plan.depth() {
            return Err(Error::invalid(format!(
                "{} weight matrices for depth {}",
                weights.len(),
                plan.depth()
            )));
        }
        for (k, w) in weights.iter().enumerate() {
            if w.shape() != plan.layer_shape(k + 1) {
                return Err(Error::invalid(format!(
                    "layer {} has shape {:?}, plan says {:?}",
                    k + 1,
                    w.shape(),
                    plan.layer_shape(k + 1)
                )));
            }
        }
        if !log_alpha.is_finite() {
            return Err(Error::invalid("alpha must be positive and finite"));
        }
        Ok(NetworkState {
            weights,
            log_alpha,
            plan,
            scheme,
        })
    }

    /// Network from explicit weights (`W_1` first) and α. Layer scales
    /// default to √d_i.
    pub fn from_weights(weights: Vec<Matrix>, alpha: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("need at least one layer"));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid("alpha must be positive and finite"));
        }
        let mut dims = vec![weights[0].cols()];
        for (k, w) in weights.iter().enumerate() {
            if w.cols() != dims[k] {
                return Err(Error::invalid(format!(
                    "layer {} expects {} inputs, previous layer gives {}",
                    k + 1,
                    w.cols(),
                    dims[k]
                )));
            }
            dims.push(w.rows());
        }
        let plan = DimensionPlan::from_dims(dims)?;
        Self::new(weights, alpha.ln(), plan, InitScheme::gaussian())
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    /// Layer `i`, 1-based.
    pub fn layer(&self, i: usize) -> &Matrix {
        &self.weights[i - 1]
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn plan(&self) -> &DimensionPlan {
        &self.plan
    }

    pub fn scheme(&self) -> &InitScheme {
        &self.scheme
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    /// ln c_i for layer `i` (1-based).
    pub fn log_layer_scale(&self, i: usize) -> f64 {
        self.scheme.layer_scale(&self.plan, i).ln()
    }

    /// ln β with β = α·∏ c_i, the output scale of the normalized chain.
    pub fn log_beta(&self) -> f64 {
        self.log_alpha + (1..=self.depth()).map(|i| self.log_layer_scale(i)).sum::<f64>()
    }

    /// Copy with layer `i` replaced.
    pub fn with_layer(&self, i: usize, w: Matrix) -> Result<Self> {
        if i == 0 || i > self.depth() {
            return Err(Error::invalid(format!("layer {i} out of range")));
        }
        if w.shape() != self.layer(i).shape() {
            return Err(Error::invalid("replacement layer has the wrong shape"));
        }
        let mut next = self.clone();
        next.weights[i - 1] = w;
        Ok(next)
    }

    fn w(&self, i: usize) -> &DMatrix<f64> {
        self.layer(i).as_dmatrix()
    }

    /// `W_j ⋯ W_i` in log-scaled form; `j = i − 1` gives the identity.
    pub fn log_partial_product(&self, i: usize, j: usize) -> Result<ScaledMatrix> {
        let l = self.depth();
        if i == 0 || j > l || i > j + 1 {
            return Err(Error::invalid(format!(
                "partial product ({i}, {j}) outside 1 <= i <= j+1 <= {}",
                l + 1
            )));
        }
        if i == j + 1 {
            let n = self.plan.dims()[j];
            return Ok(ScaledMatrix::new(Matrix::identity(n), 0.0));
        }
        let mut acc = self.w(i).clone();
        let mut log_scale = 0.0;
        renormalize(&mut acc, &mut log_scale);
        for k in i + 1..=j {
            acc = self.w(k) * acc;
            renormalize(&mut acc, &mut log_scale);
        }
        Ok(ScaledMatrix::new(Matrix::wrap(acc), log_scale))
    }

    /// `W_j ⋯ W_i` as a dense matrix.
    pub fn partial_product(&self, i: usize, j: usize) -> Result<Matrix> {
        Ok(self.log_partial_product(i, j)?.to_matrix())
    }

    /// `(ln σ_max, ln σ_min)` of `W_{j:i}`.
    pub fn log_sv_extremes(&self, i: usize, j: usize) -> Result<(f64, f64)> {
        Ok(self.log_partial_product(i, j)?.log_singular_extremes())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() != self.plan.d_x() {
            return Err(Error::invalid(format!(
                "input has {} rows, network expects {}",
                x.rows(),
                self.plan.d_x()
            )));
        }
        Ok(())
    }

    /// `U = α W_{L:1} X`, multiplied right-to-left starting from X.
    pub fn forward_output(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut acc = x.as_dmatrix().clone();
        let mut log_scale = self.log_alpha;
        renormalize(&mut acc, &mut log_scale);
        for i in 1..=self.depth() {
            acc = self.w(i) * acc;
            renormalize(&mut acc, &mut log_scale);
        }
        Ok(Matrix::wrap(acc * log_scale.exp()))
    }

    /// `½‖U − Y‖_F²`.
    pub fn loss(&self, ds: &Dataset) -> Result<f64> {
        let u = self.forward_output(ds.x())?;
        Ok(0.5 * u.sub(ds.y())?.frobenius_norm().powi(2))
    }

    /// Prefix and suffix products for `X`.
    pub fn product_cache(&self, x: &Matrix) -> Result<ProductCache> {
        self.check_input(x)?;
        let l = self.depth();
        let mut prefixes = Vec::with_capacity(l + 1);
        prefixes.push(ScaledMatrix::new(x.clone(), 0.0));
        for i in 1..=l {
            let prev = &prefixes[i - 1];
            prefixes.push(ScaledMatrix::new(
                Matrix::wrap(self.w(i) * prev.mat.as_dmatrix()),
                prev.log_scale,
            ));
        }
        let mut suffixes = vec![ScaledMatrix::new(Matrix::identity(self.plan.d_y()), 0.0)];
        for i in (1..=l).rev() {
            let next = suffixes.last().expect("nonempty");
            let s = ScaledMatrix::new(Matrix::wrap(next.mat.as_dmatrix() * self.w(i)), next.log_scale);
            suffixes.push(s);
        }
        suffixes.reverse();
        Ok(ProductCache {
            prefixes,
            suffixes,
            log_alpha: self.log_alpha,
        })
    }

    /// Suffix products, output and residual at the current state.
    pub(crate) fn suffix_pass(&self, ds: &Dataset) -> Result<SuffixPass> {
        let x = ds.x();
        self.check_input(x)?;
        let l = self.depth();
        let d_y = self.plan.d_y();
        let mut suffix: Vec<(DMatrix<f64>, f64)> = Vec::with_capacity(l + 1);
        suffix.push((DMatrix::identity(d_y, d_y), 0.0));
        for i in (1..=l).rev() {
            let (prev, prev_log) = suffix.last().expect("nonempty");
            let mut s = thin_left_mul(prev, self.w(i));
            let mut log_s = *prev_log;
            renormalize(&mut s, &mut log_s);
            suffix.push((s, log_s));
        }
        suffix.reverse();
        let (s1, log_s1) = &suffix[0];
        let output = Matrix::wrap((s1 * x.as_dmatrix()) * (self.log_alpha + log_s1).exp());
        let residual = output.sub(ds.y())?;
        let loss = 0.5 * residual.frobenius_norm().powi(2);
        Ok(SuffixPass {
            suffix,
            output,
            residual,
            loss,
        })
    }

    /// Walks the prefix products `T_i = W_i ⋯ W_1 X Rᵀ`, handing each layer
    /// its gradient factors `(S_{i+1}, T_{i−1}, ln coef)` with
    /// `G_i = coef · S_{i+1}ᵀ T_{i−1}ᵀ`.
    fn prefix_walk<F>(&self, pass: &SuffixPass, x: &Matrix, mut visit: F)
    where
        F: FnMut(&DMatrix<f64>, &DMatrix<f64>, f64),
    {
        let l = self.depth();
        let mut t = x.as_dmatrix() * pass.residual.as_dmatrix().transpose();
        let mut log_t = 0.0;
        renormalize(&mut t, &mut log_t);
        for i in 1..=l {
            let (s_next, log_s_next) = &pass.suffix[i];
            visit(s_next, &t, self.log_alpha + log_s_next + log_t);
            if i < l {
                t = self.w(i) * &t;
                renormalize(&mut t, &mut log_t);
            }
        }
    }

    /// `W_i ← W_i − η G_i` for all layers, gradients taken at the state
    /// `pass` was computed from. Same walk as `prefix_walk`, but each layer
    /// is read once: `T_i` is formed from the old column before it is updated.
    pub(crate) fn apply_gd_update(&mut self, pass: &SuffixPass, x: &Matrix, eta: f64) {
        let l = self.depth();
        let mut t = x.as_dmatrix() * pass.residual.as_dmatrix().transpose();
        let mut log_t = 0.0;
        renormalize(&mut t, &mut log_t);
        for i in 1..=l {
            let (s_next, log_s_next) = &pass.suffix[i];
            let coef = -eta * (self.log_alpha + log_s_next + log_t).exp();
            let w = self.weights[i - 1].as_dmatrix_mut();
            if let Some(next) = thin_update(w, s_next, &t, coef, i < l) {
                t = next;
                renormalize(&mut t, &mut log_t);
            }
        }
    }

    /// Gradients in factored form; see [`GradientFactors`].
    pub fn gradient_factors(&self, ds: &Dataset) -> Result<GradientFactors> {
        let pass = self.suffix_pass(ds)?;
        let l = self.depth();
        let mut left = Vec::with_capacity(l);
        let mut right = Vec::with_capacity(l);
        let mut log_coef = Vec::with_capacity(l);
        self.prefix_walk(&pass, ds.x(), |s, t, c| {
            left.push(Matrix::wrap(s.transpose()));
            right.push(Matrix::wrap(t.transpose()));
            log_coef.push(c);
        });
        Ok(GradientFactors {
            left,
            right,
            log_coef,
            output: pass.output,
            loss: pass.loss,
        })
    }

    /// `∂ℓ/∂W_i = α S_{i+1}ᵀ (U − Y) P_{i−1}ᵀ` for every layer.
    pub fn gradients(&self, ds: &Dataset) -> Result<Vec<Matrix>> {
        let f = self.gradient_factors(ds)?;
        Ok((0..self.depth()).map(|k| f.gradient(k + 1)).collect())
    }

    /// Writes `W_i.mat` files and a `meta` file into `dir`.
    pub fn save_checkpoint(&self, dir: &Path, seed: Option<u64>, step: u64) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, w) in self.weights.iter().enumerate() {
            w.save(&dir.join(format!("W_{}.mat", k + 1)))?;
        }
        let mut meta = Meta::new();
        meta.set("depth", self.depth());
        meta.set("dims", join(self.plan.dims().iter()));
        meta.set("width", self.plan.width());
        meta.set("scheme", self.scheme.kind);
        meta.set("sigma", join(self.scheme.sigma.iter().map(|s| fmt_g(*s, 17))));
        meta.set("alpha", fmt_g(self.alpha(), 17));
        meta.set("log_alpha", fmt_g(self.log_alpha, 17));
        meta.set("seed", seed.map_or("none".to_string(), |s| s.to_string()));
        meta.set("step", step);
        meta.save(&dir.join("meta"))
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
        let meta_path = dir.join("meta");
        let meta = Meta::load(&meta_path)?;
        let need = |key: &str| {
            meta.get(key)
                .ok_or_else(|| Error::parse(&meta_path, format!("missing key {key}")))
        };
        let dims = parse_list::<usize>(need("dims")?, &meta_path)?;
        let width: usize = meta.get_parsed("width", &meta_path)?.unwrap_or(0);
        let kind: SchemeKind = need("scheme")?
            .parse()
            .map_err(|e: String| Error::parse(&meta_path, e))?;
        let sigma = parse_list::<f64>(meta.get("sigma").unwrap_or(""), &meta_path)?;
        let log_alpha: f64 = meta
            .get_parsed("log_alpha", &meta_path)?
            .ok_or_else(|| Error::parse(&meta_path, "missing key log_alpha"))?;
        let seed = match need("seed")? {
            "none" => None,
            s => Some(
                s.parse::<u64>()
                    .map_err(|e| Error::parse(&meta_path, format!("seed: {e}")))?,
            ),
        };
        let step: u64 = meta.get_parsed("step", &meta_path)?.unwrap_or(0);

        let plan = if dims.len() >= 2 && width > 0 && uniform_hidden(&dims, width) {
            DimensionPlan::uniform(dims[0], dims[dims.len() - 1], width, dims.len() - 1)?
        } else {
            DimensionPlan::from_dims(dims)?
        };
        let weights = (1..=plan.depth())
            .map(|i| Matrix::load(&dir.join(format!("W_{i}.mat"))))
            .collect::<Result<Vec<_>>>()?;
        let net = NetworkState::new(weights, log_alpha, plan, InitScheme { kind, sigma })?;
        Ok(Checkpoint { net, seed, step })
    }
}

fn uniform_hidden(dims: &[usize], width: usize) -> bool {
    dims[1..dims.len() - 1].iter().all(|&d| d == width)
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list<T>(s: &str, origin: &Path) -> Result<Vec<T>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| Error::parse(origin, format!("{p:?}: {e}"))))
        .collect()
}

/// Suffix products `S_{k+1}` (index `k`, log-scaled) with the output,
/// residual and loss at one state.
pub(crate) struct SuffixPass {
    suffix: Vec<(DMatrix<f64>, f64)>,
    pub output: Matrix,
    pub residual: Matrix,
    pub loss: f64,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: NetworkState,
    pub seed: Option<u64>,
    pub step: u64,
}

/// Prefix products `P_i = W_{i:1} X` (i = 0..L) and suffix products
/// `S_i = W_{L:i}` (i = 1..L+1), both log-scaled.
#[derive(Clone, Debug)]
pub struct ProductCache {
    prefixes: Vec<ScaledMatrix>,
    suffixes: Vec<ScaledMatrix>,
    log_alpha: f64,
}

impl ProductCache {
    pub fn depth(&self) -> usize {
        self.prefixes.len() - 1
    }

    /// `P_i`, with `P_0 = X`.
    pub fn prefix(&self, i: usize) -> &ScaledMatrix {
        &self.prefixes[i]
    }

    /// `S_i`, with `S_{L+1} = I`.
    pub fn suffix(&self, i: usize) -> &ScaledMatrix {
        &self.suffixes[i - 1]
    }

    /// `α P_L`.
    pub fn output(&self) -> Matrix {
        let p = &self.prefixes[self.depth()];
        p.mat.scale((p.log_scale + self.log_alpha).exp())
    }
}

/// `G_i = e^{log_coef_i} · left_i · right_i` with `left_i` of shape
/// `d_i × d_y` and `right_i` of shape `d_y × d_{i−1}`, plus the output and
/// loss at the state the gradients were taken at.
#[derive(Clone, Debug)]
pub struct GradientFactors {
    pub left: Vec<Matrix>,
    pub right: Vec<Matrix>,
    pub log_coef: Vec<f64>,
    pub output: Matrix,
    pub loss: f64,
}

impl GradientFactors {
    /// Dense `G_i`, 1-based.
    pub fn gradient(&self, i: usize) -> Matrix {
        let k = i - 1;
        let g = self.left[k].as_dmatrix() * self.right[k].as_dmatrix();
        Matrix::wrap(g * self.log_coef[k].exp())
    }
}

/// Minimum-norm least-squares map `W_opt = Y X⁺` and its loss.
pub fn least_squares_opt(ds: &Dataset) -> Result<(Matrix, f64)> {
    let x = ds.x().as_dmatrix();
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return Err(Error::invalid("X is zero"));
    }
    // X⁺ = V Σ⁺ Uᵀ.
    let mut sigma_inv = svd.singular_values.clone();
    for s in sigma_inv.iter_mut() {
        *s = if *s > RANK_TOL * smax { 1.0 / *s } else { 0.0 };
    }
    let pinv = v_t.transpose() * DMatrix::from_diagonal(&sigma_inv) * u.transpose();
    let wopt = Matrix::wrap(ds.y().as_dmatrix() * pinv);
    let fit = Matrix::wrap(wopt.as_dmatrix() * x);
    let loss = 0.5 * fit.sub(ds.y())?.frobenius_norm().powi(2);
    Ok((wopt, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::init::init_weights;
    use crate::linalg::matmul;
    use crate::rng::GaussianStream;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_rows(&[vec![v]]).unwrap()
    }

    fn scalar_chain() -> NetworkState {
        NetworkState::from_weights(vec![scalar(2.0), scalar(3.0)], 1.0).unwrap()
    }

    #[test]
    fn scalar_forward_and_loss() {
        let net = scalar_chain();
        assert_eq!(net.forward_output(&scalar(5.0)).unwrap().get(0, 0), 30.0);
        let ds = Dataset::new(scalar(5.0), scalar(31.0), None).unwrap();
        assert_eq!(net.loss(&ds).unwrap(), 0.5);
    }

    #[test]
    fn scalar_gradients() {
        let net = scalar_chain();
        let ds = Dataset::new(scalar(1.0), scalar(0.0), None).unwrap();
        assert_eq!(net.loss(&ds).unwrap(), 18.0);
        let g = net.gradients(&ds).unwrap();
        assert!((g[0].get(0, 0) - 18.0).abs() < 1e-12);
        assert!((g[1].get(0, 0) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn zero_layer_gives_half_target_norm() {
        let ds = gen_synthetic(3, 2, 4, 1).unwrap();
        let plan = DimensionPlan::uniform(3, 2, 4, 3).unwrap();
        let net = init_weights(&plan, &InitScheme::gaussian(), 2).unwrap();
        let net = net.with_layer(2, Matrix::zeros(4, 4)).unwrap();
        let expect = 0.5 * ds.y().frobenius_norm().powi(2);
        assert!((net.loss(&ds).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_range_is_identity() {
        let plan = DimensionPlan::uniform(3, 2, 5, 3).unwrap();
        let net = init_weights(&plan, &InitScheme::gaussian(), 0).unwrap();
        assert_eq!(net.partial_product(2, 1).unwrap(), Matrix::identity(5));
        assert_eq!(net.partial_product(1, 0).unwrap(), Matrix::identity(3));
        assert_eq!(net.partial_product(4, 3).unwrap(), Matrix::identity(2));
        assert!(net.partial_product(0, 1).is_err());
        assert!(net.partial_product(3, 1).is_err());
        assert!(net.partial_product(1, 4).is_err());
    }

    #[test]
    fn full_product_matches_forward() {
        let ds = gen_synthetic(4, 3, 5, 9).unwrap();
        let plan = DimensionPlan::uniform(4, 3, 6, 4).unwrap();
        let net = init_weights(&plan, &InitScheme::gaussian(), 3).unwrap();
        let u = net.forward_output(ds.x()).unwrap();
        let via = matmul(&net.partial_product(1, 4).unwrap(), ds.x()).unwrap();
        let diff = u.scale(1.0 / net.alpha()).sub(&via).unwrap().frobenius_norm();
        assert!(diff < 1e-10 * via.frobenius_norm());
    }

    #[test]
    fn orthogonal_partial_products_are_isometries() {
        let plan = DimensionPlan::uniform(2, 2, 4, 5).unwrap();
        let net = init_weights(&plan, &InitScheme::orthogonal(), 4).unwrap();
        let (hi, lo) = net.log_sv_extremes(2, 3).unwrap();
        assert!((hi.exp() - 4.0).abs() < 1e-10);
        assert!((lo.exp() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn deep_products_stay_finite_in_log_space() {
        let plan = DimensionPlan::uniform(10, 10, 100, 400).unwrap();
        let net = init_weights(&plan, &InitScheme::orthogonal(), 1).unwrap();
        let (hi, lo) = net.log_sv_extremes(2, 399).unwrap();
        let expect = 0.5 * 398.0 * 100f64.ln();
        assert!((hi - expect).abs() < 1e-8 * expect);
        assert!((lo - expect).abs() < 1e-8 * expect);
        let ds = gen_synthetic(10, 10, 4, 2).unwrap();
        let u = net.forward_output(ds.x()).unwrap();
        assert!(u.is_finite());
    }

    #[test]
    fn cache_agrees_with_forward() {
        let ds = gen_synthetic(3, 2, 4, 5).unwrap();
        let plan = DimensionPlan::uniform(3, 2, 4, 3).unwrap();
        let net = init_weights(&plan, &InitScheme::orthogonal(), 6).unwrap();
        let cache = net.product_cache(ds.x()).unwrap();
        let u = net.forward_output(ds.x()).unwrap();
        assert!(cache.output().sub(&u).unwrap().max_abs() < 1e-12);
        for i in 1..=3 {
            let chain = matmul(
                &matmul(&cache.suffix(i + 1).to_matrix(), net.layer(i)).unwrap(),
                &cache.prefix(i - 1).to_matrix(),
            )
            .unwrap()
            .scale(net.alpha());
            assert!(chain.sub(&u).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn gradients_vanish_at_interpolation() {
        let ds = gen_synthetic(3, 2, 4, 0).unwrap();
        let plan = DimensionPlan::uniform(3, 2, 3, 2).unwrap();
        let net = init_weights(&plan, &InitScheme::gaussian(), 1).unwrap();
        let fitted = Dataset::new(ds.x().clone(), net.forward_output(ds.x()).unwrap(), None).unwrap();
        for g in net.gradients(&fitted).unwrap() {
            assert!(g.max_abs() < 1e-12);
        }
    }

    #[test]
    fn least_squares_identity_input() {
        let y = GaussianStream::new(2).matrix(2, 3, 1.0);
        let ds = Dataset::new(Matrix::identity(3), y.clone(), None).unwrap();
        let (w, loss) = least_squares_opt(&ds).unwrap();
        assert!(w.sub(&y).unwrap().max_abs() < 1e-12);
        assert!(loss < 1e-24);
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let mut s = GaussianStream::new(8);
        let x = s.matrix(2, 4, 1.0);
        let y = s.matrix(1, 4, 1.0);
        let ds = Dataset::new(x.clone(), y.clone(), None).unwrap();
        let (w, loss) = least_squares_opt(&ds).unwrap();
        let xxt = matmul(&x, &x.transpose()).unwrap();
        let inv = xxt.as_dmatrix().clone().try_inverse().unwrap();
        let oracle = Matrix::wrap(y.as_dmatrix() * x.as_dmatrix().transpose() * inv);
        assert!(w.sub(&oracle).unwrap().max_abs() < 1e-9);
        assert!(loss > 0.0);
    }

    #[test]
    fn least_squares_realizable() {
        let ds = gen_synthetic(8, 3, 5, 4).unwrap();
        let (_, loss) = least_squares_opt(&ds).unwrap();
        assert!(loss < 1e-12 * ds.y().frobenius_norm().powi(2));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let plan = DimensionPlan::uniform(3, 2, 4, 3).unwrap();
        let net = init_weights(&plan, &InitScheme::gaussian_with_sigma(vec![0.5]), 11).unwrap();
        net.save_checkpoint(dir.path(), Some(11), 42).unwrap();
        let back = NetworkState::load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.net, net);
        assert_eq!(back.seed, Some(11));
        assert_eq!(back.step, 42);
    }
}
