//! Full-batch gradient descent with trajectory recording.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::data::{DataStats, Dataset};
use crate::error::{Error, Result};
use crate::init::{init_weights, DimensionPlan, InitScheme};
use crate::network::{least_squares_opt, NetworkState};
use crate::numfmt::fmt_g;
use crate::theory::sampled_pairs;

/// Loss above `DIVERGENCE_FACTOR · ℓ(0)` aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

/// `d_y / (2 L ‖X‖²)`, the largest step covered by the convergence theorem
/// for orthogonal initialization.
pub fn theorem_lr(ds: &Dataset, depth: usize, d_y: usize) -> f64 {
    d_y as f64 / (2.0 * depth as f64 * ds.stats().norm_x.powi(2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum EtaPolicy {
    Auto,
    Fixed(f64),
}

impl EtaPolicy {
    pub fn resolve(self, ds: &Dataset, plan: &DimensionPlan) -> f64 {
        match self {
            EtaPolicy::Auto => theorem_lr(ds, plan.depth(), plan.d_y()),
            EtaPolicy::Fixed(v) => v,
        }
    }
}

impl fmt::Display for EtaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EtaPolicy::Auto => f.write_str("auto"),
            EtaPolicy::Fixed(v) => f.write_str(&fmt_g(*v, 17)),
        }
    }
}

impl FromStr for EtaPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(EtaPolicy::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(EtaPolicy::Fixed(v)),
            _ => Err(format!("learning rate must be \"auto\" or a positive number, got {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub eta: EtaPolicy,
    /// Record loss every this many steps (0 = only first and last).
    pub record_every: usize,
    /// Spectral diagnostics every this many steps (0 = never).
    pub diag_every: usize,
    /// Extra steps that are always recorded.
    pub record_at: Vec<usize>,
    pub seed: u64,
    pub scheme: InitScheme,
    pub plan: DimensionPlan,
    /// Stop once ℓ(t)/ℓ(0) ≤ this value; 0 disables.
    pub stop_rel_loss: f64,
}

impl TrainConfig {
    pub fn new(plan: DimensionPlan, scheme: InitScheme, steps: usize, seed: u64) -> Self {
        TrainConfig {
            steps,
            eta: EtaPolicy::Auto,
            record_every: 1,
            diag_every: 0,
            record_at: Vec::new(),
            seed,
            scheme,
            plan,
            stop_rel_loss: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if let EtaPolicy::Fixed(v) = self.eta {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid("learning rate must be positive"));
            }
        }
        if !(self.stop_rel_loss >= 0.0) {
            return Err(Error::invalid("stop_rel_loss must be nonnegative"));
        }
        Ok(())
    }

    fn records(&self, t: usize) -> bool {
        t == 0
            || t == self.steps
            || (self.record_every > 0 && t % self.record_every == 0)
            || self.record_at.contains(&t)
    }

    fn diagnoses(&self, t: usize) -> bool {
        self.diag_every > 0 && (t % self.diag_every == 0 || t == self.steps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Stopped,
    Diverged,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Stopped => "stopped",
            RunStatus::Diverged => "diverged",
        }
    }
}

/// Spectral diagnostics at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    /// max_i ‖W_i(t) − W_i(0)‖_F.
    pub drift: f64,
    /// Running maximum of `drift` over diagnosed steps.
    pub drift_max: f64,
    /// max over sampled pairs of ln σ_max(W_{j:i}) − Σ_{k=i..j} ln c_k.
    pub log_sv_hi: f64,
    /// min over sampled pairs of ln σ_min(W_{j:i}) − Σ_{k=i..j} ln c_k.
    pub log_sv_lo: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RecordRow {
    pub t: usize,
    pub loss: f64,
    pub rel_loss: f64,
    pub diag: Option<Diagnostics>,
}

/// Trajectory of one run plus its header.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RecordRow>,
    pub status: RunStatus,
    pub eta: f64,
    pub loss0: f64,
    pub loss_opt: f64,
    pub stats: DataStats,
    pub config: TrainConfig,
}

impl RunRecord {
    pub fn final_row(&self) -> &RecordRow {
        self.rows.last().expect("a record always has the t = 0 row")
    }

    /// ℓ(t)/ℓ(0) at step `t` if recorded.
    pub fn rel_loss_at(&self, t: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.t == t).map(|r| r.rel_loss)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,loss,rel_loss,drift,drift_max,log_sv_hi,log_sv_lo\n");
        for r in &self.rows {
            let diag = match r.diag {
                Some(d) => [d.drift, d.drift_max, d.log_sv_hi, d.log_sv_lo]
                    .map(|v| fmt_g(v, 10))
                    .join(","),
                None => ",,,".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.t,
                fmt_g(r.loss, 10),
                fmt_g(r.rel_loss, 10),
                diag
            ));
        }
        out
    }

    pub fn meta_json(&self) -> String {
        let c = &self.config;
        let meta = serde_json::json!({
            "status": self.status,
            "steps": c.steps,
            "eta_policy": c.eta.to_string(),
            "eta": self.eta,
            "record_every": c.record_every,
            "diag_every": c.diag_every,
            "seed": c.seed,
            "scheme": c.scheme.kind,
            "sigma": if c.scheme.sigma.is_empty() { vec![1.0] } else { c.scheme.sigma.clone() },
            "dims": c.plan.dims(),
            "width": c.plan.width(),
            "depth": c.plan.depth(),
            "stop_rel_loss": c.stop_rel_loss,
            "loss0": self.loss0,
            "loss_opt": self.loss_opt,
            "rank": self.stats.rank,
            "kappa": self.stats.kappa,
            "stable_rank": self.stats.stable_rank,
            "sigma_min_x": self.stats.sigma_min_x,
            "norm_x": self.stats.norm_x,
            "frob_x": self.stats.frob_x,
            "norm_wstar": self.stats.norm_wstar,
        });
        serde_json::to_string_pretty(&meta).expect("plain values serialize") + "\n"
    }

    /// Writes `record.csv` and `meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("record.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let meta = dir.join("meta.json");
        fs::write(&meta, self.meta_json()).map_err(|e| Error::io(&meta, e))
    }
}

/// Result of [`train`]: the record and the initial and final networks.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub initial: NetworkState,
    pub last: NetworkState,
}

/// One simultaneous update `W_i ← W_i − η G_i`, all gradients taken at the
/// current state.
pub fn gd_step(net: &NetworkState, ds: &Dataset, eta: f64) -> Result<NetworkState> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let pass = net.suffix_pass(ds)?;
    let mut next = net.clone();
    next.apply_gd_update(&pass, ds.x(), eta);
    if next.weights().iter().any(|w| !w.is_finite()) {
        return Err(Error::Numerical("non-finite weights after update".into()));
    }
    Ok(next)
}

/// Drift and sampled partial-product singular values of `net` against
/// `net0`.
pub fn diagnose(net0: &NetworkState, net: &NetworkState, drift_max: f64) -> Result<Diagnostics> {
    let drift = net
        .weights()
        .iter()
        .zip(net0.weights())
        .map(|(w, w0)| w.sub(w0).map(|d| d.frobenius_norm()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for (i, j) in sampled_pairs(net.depth()) {
        let (s_hi, s_lo) = net.log_sv_extremes(i, j)?;
        let nominal: f64 = (i..=j).map(|k| net.log_layer_scale(k)).sum();
        hi = hi.max(s_hi - nominal);
        lo = lo.min(s_lo - nominal);
    }
    Ok(Diagnostics {
        drift,
        drift_max: drift_max.max(drift),
        log_sv_hi: hi,
        log_sv_lo: lo,
    })
}

/// Runs [`train`] and keeps only the record.
pub fn train_run(cfg: &TrainConfig, ds: &Dataset) -> Result<RunRecord> {
    Ok(train(cfg, ds)?.record)
}

pub fn train(cfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    train_observed(cfg, ds, |_, _, _| {})
}

/// Trains and calls `observe(t, initial, current)` at every diagnostic step.
pub fn train_observed<F>(cfg: &TrainConfig, ds: &Dataset, mut observe: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &NetworkState, &NetworkState),
{
    cfg.validate()?;
    if ds.d_x() != cfg.plan.d_x() || ds.d_y() != cfg.plan.d_y() {
        return Err(Error::invalid(format!(
            "plan expects d_x={}, d_y={}; data has d_x={}, d_y={}",
            cfg.plan.d_x(),
            cfg.plan.d_y(),
            ds.d_x(),
            ds.d_y()
        )));
    }
    let initial = init_weights(&cfg.plan, &cfg.scheme, cfg.seed)?;
    let eta = cfg.eta.resolve(ds, &cfg.plan);
    let (_, loss_opt) = least_squares_opt(ds)?;

    let mut net = initial.clone();
    let mut rows = Vec::new();
    let mut status = RunStatus::Completed;
    let mut loss0 = f64::NAN;
    let mut drift_max = 0.0;

    for t in 0..=cfg.steps {
        let pass = net.suffix_pass(ds)?;
        let loss = pass.loss;
        if t == 0 {
            loss0 = loss;
            if !loss0.is_finite() {
                return Err(Error::Numerical("non-finite initial loss".into()));
            }
        } else if !loss.is_finite() || loss > DIVERGENCE_FACTOR * loss0 {
            status = RunStatus::Diverged;
            break;
        }
        let rel_loss = if loss0 > 0.0 { loss / loss0 } else { 0.0 };
        let stop = cfg.stop_rel_loss > 0.0 && rel_loss <= cfg.stop_rel_loss;
        let diagnosed = cfg.diagnoses(t);
        if cfg.records(t) || diagnosed || stop {
            let diag = if diagnosed {
                let d = diagnose(&initial, &net, drift_max)?;
                drift_max = d.drift_max;
                observe(t, &initial, &net);
                Some(d)
            } else {
                None
            };
            rows.push(RecordRow {
                t,
                loss,
                rel_loss,
                diag,
            });
        }
        if stop && t < cfg.steps {
            status = RunStatus::Stopped;
            break;
        }
        if t < cfg.steps {
            net.apply_gd_update(&pass, ds.x(), eta);
        }
    }

    let record = RunRecord {
        rows,
        status,
        eta,
        loss0,
        loss_opt,
        stats: ds.stats().clone(),
        config: cfg.clone(),
    };
    Ok(TrainOutcome {
        record,
        initial,
        last: net,
    })
}
