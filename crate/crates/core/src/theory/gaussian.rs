//! Gaussian-regime statistics: decay of normalized products, their
//! stability under small perturbations, and the trapped-loss window.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::init::SchemeKind;
use crate::linalg::Matrix;
use crate::network::ScaledMatrix;
use crate::rng::GaussianStream;
use crate::theory::report::{CheckRow, TheoryReport};
use crate::theory::ScaledWeights;
use crate::trainer::{RunRecord, RunStatus};

const STREAM_MC: u64 = 0x3C00_0001;
const STREAM_MOMENT: u64 = 0x3C00_0002;
const STREAM_PERTURB: u64 = 0x3C00_0003;

/// `E√(χ²_d / d) = √(2/d) Γ((d+1)/2) / Γ(d/2)`.
pub fn half_chi_mean(d: usize) -> f64 {
    assert!(d >= 1);
    // r(d) = Γ((d+1)/2)/Γ(d/2) satisfies r(d+2) = r(d)(d+1)/d.
    let (mut r, mut k) = if d % 2 == 1 {
        (1.0 / std::f64::consts::PI.sqrt(), 1)
    } else {
        (std::f64::consts::PI.sqrt() / 2.0, 2)
    };
    while k < d {
        r *= (k + 1) as f64 / k as f64;
        k += 2;
    }
    (2.0 / d as f64).sqrt() * r
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentCheck {
    pub empirical: f64,
    pub analytic: f64,
    pub rel_err: f64,
}

/// Monte Carlo mean of `√Z` with `d·Z ~ χ²_d`, the per-layer norm ratio of
/// a normalized Gaussian layer applied to a unit vector.
pub fn moment_check(d: usize, draws: usize, seed: u64) -> MomentCheck {
    let mut s = GaussianStream::derived(seed, &[STREAM_MOMENT, d as u64]);
    let total: f64 = (0..draws)
        .map(|_| {
            let z: f64 = (0..d).map(|_| s.gaussian().powi(2)).sum::<f64>() / d as f64;
            z.sqrt()
        })
        .sum();
    let empirical = total / draws as f64;
    let analytic = half_chi_mean(d);
    MomentCheck {
        empirical,
        analytic,
        rel_err: (empirical / analytic - 1.0).abs(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McProductStats {
    /// Median over trials of ln‖A_{j:1}(0)‖, index `j − 1`.
    pub median_log_norm: Vec<f64>,
    /// Least-squares slope of `median_log_norm` against `j`.
    pub slope: f64,
    /// Quantiles (50%, 90%, 99%) over trials of ln max_{i≤j} ‖A_{j:i}(0)‖.
    pub tail_quantiles: [f64; 3],
    /// `−median ln‖A_{L:1}‖ / L^γ` for the probed exponent γ.
    pub decay_ratio: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn fit_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n + 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let dx = (k + 1) as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn sample_scaled_stack(dims: &[usize], seed: u64, trial: usize) -> ScaledWeights {
    let a = (1..dims.len())
        .map(|i| {
            let mut s = GaussianStream::derived(seed, &[STREAM_MC, trial as u64, i as u64]);
            s.matrix(dims[i], dims[i - 1], 1.0 / (dims[i] as f64).sqrt())
        })
        .collect();
    ScaledWeights { a, log_beta: 0.0 }
}

/// Samples `trials` stacks of normalized Gaussian layers with widths `dims`
/// and summarizes the size of their partial products.
pub fn mc_product_norm(dims: &[usize], gamma: f64, trials: usize, seed: u64) -> Result<McProductStats> {
    if trials < 30 {
        return Err(Error::invalid("need at least 30 trials"));
    }
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::invalid("need at least one layer with positive widths"));
    }
    let l = dims.len() - 1;
    let mut per_depth: Vec<Vec<f64>> = vec![Vec::with_capacity(trials); l];
    let mut tails = Vec::with_capacity(trials);
    for trial in 0..trials {
        let sw = sample_scaled_stack(dims, seed, trial);
        for (j, v) in sw.prefix_log_norms().into_iter().enumerate() {
            per_depth[j].push(v);
        }
        let mut worst = f64::NEG_INFINITY;
        for i in 1..=l {
            let mut acc = ScaledMatrix::new(sw.a[i - 1].clone(), 0.0);
            worst = worst.max(acc.log_spectral());
            for k in i + 1..=l {
                let next = Matrix::wrap(sw.a[k - 1].as_dmatrix() * acc.mat.as_dmatrix());
                acc = ScaledMatrix::new(next, acc.log_scale);
                worst = worst.max(acc.log_spectral());
            }
        }
        tails.push(worst);
    }
    let median_log_norm: Vec<f64> = per_depth.iter_mut().map(|v| median(v)).collect();
    tails.sort_by(f64::total_cmp);
    let slope = fit_slope(&median_log_norm);
    let decay_ratio = -median_log_norm[l - 1] / (l as f64).powf(gamma);
    Ok(McProductStats {
        median_log_norm,
        slope,
        tail_quantiles: [quantile(&tails, 0.5), quantile(&tails, 0.9), quantile(&tails, 0.99)],
        decay_ratio,
    })
}

fn long_pairs(l: usize) -> Vec<(usize, usize)> {
    let q = l.div_ceil(4).max(1);
    let mut pairs: Vec<(usize, usize)> = (1..=l.saturating_sub(q)).map(|i| (i, i + q)).collect();
    pairs.push((1, l));
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Adds a random perturbation of spectral norm `epsilon` to every layer,
/// `probes` times, and checks that long products (`j − i ≥ L/4`) grow by at
/// most a factor 2. Rows are skipped when `epsilon` exceeds the premise
/// threshold `e^{0.6 · slope · L}` measured on the unperturbed stack.
pub fn perturbation_stability(
    sw: &ScaledWeights,
    epsilon: f64,
    probes: usize,
    seed: u64,
) -> Result<TheoryReport> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("epsilon must be nonnegative"));
    }
    let l = sw.depth();
    let slope = fit_slope(&sw.prefix_log_norms());
    let threshold = (0.6 * slope.min(0.0) * l as f64).exp();
    let pairs = long_pairs(l);
    let base: Vec<f64> = pairs.iter().map(|&(i, j)| sw.product(i, j).log_spectral()).collect();
    let mut excess = vec![f64::NEG_INFINITY; pairs.len()];
    for probe in 0..probes.max(1) {
        let a = sw
            .a
            .iter()
            .enumerate()
            .map(|(k, a)| {
                if epsilon == 0.0 {
                    return Ok(a.clone());
                }
                let mut s = GaussianStream::derived(seed, &[STREAM_PERTURB, probe as u64, k as u64]);
                let g = s.matrix(a.rows(), a.cols(), 1.0);
                a.add(&g.scale(epsilon / g.spectral_norm()))
            })
            .collect::<Result<Vec<_>>>()?;
        let perturbed = ScaledWeights {
            a,
            log_beta: sw.log_beta,
        };
        for (k, &(i, j)) in pairs.iter().enumerate() {
            excess[k] = excess[k].max(perturbed.product(i, j).log_spectral() - base[k]);
        }
    }
    let mut report = TheoryReport::new();
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let name = format!("perturb({i},{j})");
        if epsilon > threshold {
            report.push(CheckRow::skipped(
                name,
                excess[k],
                2f64.ln(),
                format!("premise violated: epsilon {epsilon:e} > {threshold:e}"),
            ));
        } else {
            report.push(CheckRow::at_most(name, excess[k], 2f64.ln(), 0.0));
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StuckVerdict {
    Stuck,
    Escaped,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StuckWindow {
    pub lo: f64,
    pub hi: f64,
    pub min_loss: f64,
    pub max_loss: f64,
    /// First recorded step outside the window.
    pub exit_step: Option<usize>,
    pub verdict: StuckVerdict,
}

/// Checks `ℓ(t) ∈ (0.4‖Y‖_F², 0.6‖Y‖_F²)` for every recorded `t ≤ horizon`.
pub fn stuck_window_check(record: &RunRecord, ds: &Dataset, horizon: Option<usize>) -> Result<StuckWindow> {
    if record.config.scheme.kind != SchemeKind::Gaussian {
        return Err(Error::invalid("stuck window applies to Gaussian runs"));
    }
    let y2 = ds.y().frobenius_norm().powi(2);
    let (lo, hi) = (0.4 * y2, 0.6 * y2);
    let horizon = horizon.unwrap_or(usize::MAX);
    let mut min_loss = f64::INFINITY;
    let mut max_loss = f64::NEG_INFINITY;
    let mut exit_step = None;
    for r in record.rows.iter().filter(|r| r.t <= horizon) {
        min_loss = min_loss.min(r.loss);
        max_loss = max_loss.max(r.loss);
        if exit_step.is_none() && !(r.loss > lo && r.loss < hi) {
            exit_step = Some(r.t);
        }
    }
    if record.status == RunStatus::Diverged && exit_step.is_none() {
        exit_step = Some(record.final_row().t + 1);
    }
    Ok(StuckWindow {
        lo,
        hi,
        min_loss,
        max_loss,
        exit_step,
        verdict: if exit_step.is_none() {
            StuckVerdict::Stuck
        } else {
            StuckVerdict::Escaped
        },
    })
}

/// Whether the per-step weight drift (last recorded max drift over steps
/// taken) is non-increasing in depth. Records need diagnostics.
pub fn drift_shrinks_with_depth(records: &[(usize, &RunRecord)]) -> Result<bool> {
    let mut rates = records
        .iter()
        .map(|(depth, rec)| {
            let row = rec
                .rows
                .iter()
                .rev()
                .find(|r| r.diag.is_some() && r.t > 0)
                .ok_or_else(|| Error::invalid("record has no diagnosed step after t = 0"))?;
            Ok((*depth, row.diag.expect("filtered").drift_max / row.t as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    rates.sort_by_key(|r| r.0);
    Ok(rates.windows(2).all(|w| w[1].1 <= w[0].1))
}
