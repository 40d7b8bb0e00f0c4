//! Depth × width trainability scans.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use dln_core::numfmt::fmt_g;
use dln_core::rng::derive_seed;
use dln_core::trainer::train_run;
use dln_core::{gen_synthetic, Dataset, DimensionPlan, EtaPolicy, InitScheme, RunStatus, SchemeKind, TrainConfig};

use crate::error::{LabError, Result};
use crate::heatmap::{emit_heatmap, Grid};

pub const CSV_HEADER: &str = "depth,width,scheme,trial,eta,checkpoint,rel_loss_log10,status";

/// Where scan data come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Synthetic {
        d_x: usize,
        d_y: usize,
        n: usize,
        seed: u64,
        normalize: bool,
    },
    Path(PathBuf),
}

impl DataSpec {
    /// 64 × 16 inputs, 4 outputs.
    pub fn desk(seed: u64) -> Self {
        DataSpec::Synthetic {
            d_x: 64,
            d_y: 4,
            n: 16,
            seed,
            normalize: false,
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSpec::Synthetic {
                d_x,
                d_y,
                n,
                seed,
                normalize,
            } => {
                let ds = gen_synthetic(*d_x, *d_y, *n, *seed)?;
                Ok(if *normalize { ds.normalized()? } else { ds })
            }
            DataSpec::Path(p) => Ok(Dataset::load(p)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanConfig {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub schemes: Vec<SchemeKind>,
    pub trials: usize,
    pub steps: usize,
    pub checkpoints: Vec<usize>,
    pub eta: EtaPolicy,
    pub master_seed: u64,
    pub data: DataSpec,
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() || self.widths.is_empty() || self.schemes.is_empty() {
            return Err(LabError::usage("depths, widths and schemes must be nonempty"));
        }
        if self.depths.contains(&0) || self.widths.contains(&0) {
            return Err(LabError::usage("depths and widths must be positive"));
        }
        if self.trials == 0 {
            return Err(LabError::usage("trials must be at least 1"));
        }
        if self.checkpoints.is_empty() || self.checkpoints.iter().any(|&c| c > self.steps) {
            return Err(LabError::usage(format!(
                "checkpoints must be a nonempty subset of [0, {}]",
                self.steps
            )));
        }
        Ok(())
    }

    fn sorted(&self) -> (Vec<usize>, Vec<usize>, Vec<SchemeKind>, Vec<usize>) {
        let mut d = self.depths.clone();
        d.sort_unstable();
        d.dedup();
        let mut w = self.widths.clone();
        w.sort_unstable();
        w.dedup();
        let mut s = self.schemes.clone();
        s.sort_by_key(|k| k.as_str());
        s.dedup();
        let mut c = self.checkpoints.clone();
        c.sort_unstable();
        c.dedup();
        (d, w, s, c)
    }
}

fn scheme_tag(kind: SchemeKind) -> u64 {
    match kind {
        SchemeKind::Orthogonal => 1,
        SchemeKind::Gaussian => 2,
    }
}

/// Seed of one (depth, width, scheme, trial) cell.
pub fn cell_seed(master: u64, depth: usize, width: usize, scheme: SchemeKind, trial: usize) -> u64 {
    derive_seed(master, &[depth as u64, width as u64, scheme_tag(scheme), trial as u64])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CellStatus {
    Ok,
    Diverged,
    /// The plan is not valid for the scheme (orthogonal width below d_x or d_y).
    Invalid,
    Error,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Diverged => "diverged",
            CellStatus::Invalid => "invalid",
            CellStatus::Error => "error",
        }
    }
}

/// One output row.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanRow {
    pub depth: usize,
    pub width: usize,
    pub scheme: SchemeKind,
    pub trial: usize,
    pub eta: f64,
    pub checkpoint: usize,
    pub rel_loss_log10: f64,
    pub status: CellStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub config: ScanConfig,
    pub rows: Vec<ScanRow>,
}

struct Cell {
    depth: usize,
    width: usize,
    scheme: SchemeKind,
    trial: usize,
    seed: u64,
}

fn run_cell(cell: &Cell, ds: &Dataset, cfg: &ScanConfig, checkpoints: &[usize]) -> Vec<ScanRow> {
    let row = |eta: f64, checkpoint: usize, v: f64, status| ScanRow {
        depth: cell.depth,
        width: cell.width,
        scheme: cell.scheme,
        trial: cell.trial,
        eta,
        checkpoint,
        rel_loss_log10: v,
        status,
    };
    let plan = match DimensionPlan::uniform(ds.d_x(), ds.d_y(), cell.width, cell.depth) {
        Ok(p) => p,
        Err(_) => return checkpoints.iter().map(|&c| row(f64::NAN, c, f64::NAN, CellStatus::Error)).collect(),
    };
    let invalid = cell.scheme == SchemeKind::Orthogonal && cell.width < ds.d_x().max(ds.d_y());
    let eta = cfg.eta.resolve(ds, &plan);
    if invalid {
        return checkpoints.iter().map(|&c| row(eta, c, f64::NAN, CellStatus::Invalid)).collect();
    }
    let mut tc = TrainConfig::new(plan, InitScheme::of_kind(cell.scheme), cfg.steps, cell.seed);
    tc.eta = cfg.eta;
    tc.record_every = 0;
    tc.record_at = checkpoints.to_vec();
    match train_run(&tc, ds) {
        Ok(rec) => checkpoints
            .iter()
            .map(|&c| match rec.rel_loss_at(c) {
                Some(r) => row(rec.eta, c, r.max(f64::MIN_POSITIVE).log10(), CellStatus::Ok),
                None if rec.status == RunStatus::Diverged => row(rec.eta, c, f64::NAN, CellStatus::Diverged),
                None => row(rec.eta, c, f64::NAN, CellStatus::Error),
            })
            .collect(),
        Err(_) => checkpoints.iter().map(|&c| row(eta, c, f64::NAN, CellStatus::Error)).collect(),
    }
}

/// Runs every cell on a pool of `jobs` threads; rows come back ordered by
/// (depth, width, scheme, trial, checkpoint) whatever the completion order.
pub fn run_scan(cfg: &ScanConfig, jobs: usize) -> Result<ScanResult> {
    cfg.validate()?;
    let ds = cfg.data.load()?;
    let (depths, widths, schemes, checkpoints) = cfg.sorted();
    let mut cells = Vec::new();
    for &depth in &depths {
        for &width in &widths {
            for &scheme in &schemes {
                for trial in 0..cfg.trials {
                    let seed = cell_seed(cfg.master_seed, depth, width, scheme, trial);
                    cells.push(Cell {
                        depth,
                        width,
                        scheme,
                        trial,
                        seed,
                    });
                }
            }
        }
    }
    let mut seen = HashSet::with_capacity(cells.len());
    for c in &cells {
        if !seen.insert(c.seed) {
            return Err(LabError::usage(format!(
                "per-cell seed collision at depth {} width {} {} trial {}",
                c.depth, c.width, c.scheme, c.trial
            )));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| LabError::usage(format!("thread pool: {e}")))?;
    let per_cell: Vec<Vec<ScanRow>> =
        pool.install(|| cells.par_iter().map(|c| run_cell(c, &ds, cfg, &checkpoints)).collect());
    Ok(ScanResult {
        config: cfg.clone(),
        rows: per_cell.into_iter().flatten().collect(),
    })
}

impl ScanResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.depth,
                r.width,
                r.scheme,
                r.trial,
                fmt_g(r.eta, 10),
                r.checkpoint,
                fmt_g(r.rel_loss_log10, 10),
                r.status.as_str()
            ));
        }
        out
    }

    /// Median over trials; diverged/errored trials count as +inf. `None`
    /// when the cell has no rows or every trial is an invalid plan.
    pub fn median(&self, scheme: SchemeKind, checkpoint: usize, depth: usize, width: usize) -> Option<f64> {
        let rows: Vec<&ScanRow> = self
            .rows
            .iter()
            .filter(|r| r.scheme == scheme && r.checkpoint == checkpoint && r.depth == depth && r.width == width)
            .collect();
        if rows.is_empty() || rows.iter().all(|r| r.status == CellStatus::Invalid) {
            return None;
        }
        let mut v: Vec<f64> = rows
            .iter()
            .map(|r| if r.rel_loss_log10.is_nan() { f64::INFINITY } else { r.rel_loss_log10 })
            .collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }

    pub fn grid(&self, scheme: SchemeKind, checkpoint: usize) -> Grid {
        let (depths, widths, _, _) = self.config.sorted();
        let values = depths
            .iter()
            .map(|&d| widths.iter().map(|&w| self.median(scheme, checkpoint, d, w)).collect())
            .collect();
        Grid {
            depths,
            widths,
            values,
        }
    }

    /// Smallest width whose median is below `threshold` at this depth;
    /// missing cells count as untrainable.
    pub fn min_trainable_width(&self, scheme: SchemeKind, checkpoint: usize, depth: usize, threshold: f64) -> Option<usize> {
        let (_, widths, _, _) = self.config.sorted();
        widths
            .into_iter()
            .find(|&w| self.median(scheme, checkpoint, depth, w).is_some_and(|v| v < threshold))
    }

    /// Smallest width `w₀` such that every depth is trainable at every
    /// width ≥ `w₀`.
    pub fn uniform_trainable_width(&self, scheme: SchemeKind, checkpoint: usize, threshold: f64) -> Option<usize> {
        let (depths, widths, _, _) = self.config.sorted();
        let ok = |w: usize| {
            depths.iter().all(|&d| {
                widths
                    .iter()
                    .filter(|&&x| x >= w)
                    .all(|&x| self.median(scheme, checkpoint, d, x).is_some_and(|v| v < threshold))
            })
        };
        widths.iter().copied().find(|&w| ok(w))
    }

    /// Writes `scan.csv` plus one heat map per (scheme, checkpoint).
    pub fn save(&self, dir: &Path) -> Result<Vec<String>> {
        let io = |p: &Path, e| LabError::Core(dln_core::Error::Io {
            path: p.to_path_buf(),
            source: e,
        });
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let csv = dir.join("scan.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| io(&csv, e))?;
        let (_, _, schemes, checkpoints) = self.config.sorted();
        let mut notes = Vec::new();
        for &s in &schemes {
            for &c in &checkpoints {
                let grid = self.grid(s, c);
                let stem = format!("heatmap_{s}_t{c}");
                emit_heatmap(&grid, dir, &stem)?;
                if grid.missing() > 0 {
                    notes.push(format!("{stem}: {} missing cell(s) drawn red", grid.missing()));
                }
            }
        }
        Ok(notes)
    }
}
