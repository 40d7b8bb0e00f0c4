//! Subcommand bodies. Each returns `Ok(())` for exit code 0.

use std::fs;
use std::path::{Path, PathBuf};

use dln_core::numfmt::fmt_g;
use dln_core::theory::{width_requirement, TheoryReport};
use dln_core::trainer::train;
use dln_core::{
    gen_synthetic, Dataset, DimensionPlan, EtaPolicy, InitScheme, RunStatus, SchemeKind,
    TrainConfig,
};

use crate::cli::{Cli, Command, DataArgs, GenDataArgs, ScanArgs, TrainArgs, VerifyArgs};
use crate::config::{List, Settings};
use crate::error::{LabError, Result};
use crate::scan::{run_scan, DataSpec, ScanConfig};
use crate::verify::{is_probabilistic, run_family, FAMILIES};

const GLOBAL_KEYS: &[&str] = &["seed", "out", "jobs"];
const DATA_KEYS: &[&str] = &["data", "dx", "dy", "n", "data_seed", "normalize"];
const TRAIN_KEYS: &[&str] = &[
    "scheme",
    "depth",
    "width",
    "steps",
    "eta",
    "sigma",
    "record_every",
    "diag_every",
    "stop_rel_loss",
    "no_checkpoints",
];
const SCAN_KEYS: &[&str] = &["depths", "widths", "schemes", "trials", "steps", "checkpoints", "eta"];
const VERIFY_KEYS: &[&str] = &["only", "run"];

const DESK: (usize, usize, usize) = (64, 4, 16);

/// Values shared by every subcommand after merging flags and config.
struct Common {
    seed: u64,
    out: PathBuf,
    jobs: usize,
}

fn allowed(extra: &[&[&'static str]]) -> Vec<&'static str> {
    GLOBAL_KEYS.iter().chain(extra.iter().flat_map(|g| g.iter())).copied().collect()
}

fn flag_or(settings: &Settings, flag: bool, key: &str) -> Result<bool> {
    Ok(flag || settings.pick::<bool>(None, key)?.unwrap_or(false))
}

pub fn run(cli: Cli) -> Result<()> {
    let keys = match &cli.command {
        Command::GenData(_) => allowed(&[&["dx", "dy", "n", "normalize"]]),
        Command::Train(_) => allowed(&[DATA_KEYS, TRAIN_KEYS]),
        Command::Scan(_) => allowed(&[DATA_KEYS, SCAN_KEYS]),
        Command::Verify(_) => allowed(&[VERIFY_KEYS]),
    };
    let settings = Settings::load(cli.config.as_deref(), &keys)?;
    let default_jobs = std::thread::available_parallelism().map_or(1, usize::from);
    let jobs = settings.pick(cli.jobs, "jobs")?.unwrap_or(default_jobs);
    if jobs == 0 {
        return Err(LabError::usage("--jobs must be at least 1"));
    }
    let common = Common {
        seed: settings.pick(cli.seed, "seed")?.unwrap_or(0),
        out: settings
            .pick(cli.out, "out")?
            .unwrap_or_else(|| Path::new("dlnlab-out").join(cli.command.name())),
        jobs,
    };
    match cli.command {
        Command::GenData(a) => gen_data(&common, &settings, a),
        Command::Train(a) => train_cmd(&common, &settings, a),
        Command::Scan(a) => scan_cmd(&common, &settings, a),
        Command::Verify(a) => verify_cmd(&common, &settings, a),
    }
}

fn positive(name: &str, v: usize) -> Result<usize> {
    if v == 0 {
        return Err(LabError::usage(format!("--{name} must be positive")));
    }
    Ok(v)
}

fn print_stats(ds: &Dataset) {
    let s = ds.stats();
    println!(
        "d_x={} d_y={} n={} rank={} kappa={} stable_rank={}",
        ds.d_x(),
        ds.d_y(),
        ds.n(),
        s.rank,
        fmt_g(s.kappa, 6),
        fmt_g(s.stable_rank, 6)
    );
}

fn gen_data(c: &Common, s: &Settings, a: GenDataArgs) -> Result<()> {
    let d_x = positive("dx", s.pick(a.dx, "dx")?.unwrap_or(DESK.0))?;
    let d_y = positive("dy", s.pick(a.dy, "dy")?.unwrap_or(DESK.1))?;
    let n = positive("n", s.pick(a.n, "n")?.unwrap_or(DESK.2))?;
    let mut ds = gen_synthetic(d_x, d_y, n, c.seed)?;
    if flag_or(s, a.normalize, "normalize")? {
        ds = ds.normalized()?;
    }
    ds.save(&c.out)?;
    print_stats(&ds);
    println!("wrote {}", c.out.display());
    Ok(())
}

/// Resolved data source: a directory or generated data.
fn data_spec(c: &Common, s: &Settings, a: &DataArgs) -> Result<DataSpec> {
    if let Some(p) = s.pick(a.data.clone(), "data")? {
        return Ok(DataSpec::Path(p));
    }
    Ok(DataSpec::Synthetic {
        d_x: positive("dx", s.pick(a.dx, "dx")?.unwrap_or(DESK.0))?,
        d_y: positive("dy", s.pick(a.dy, "dy")?.unwrap_or(DESK.1))?,
        n: positive("n", s.pick(a.n, "n")?.unwrap_or(DESK.2))?,
        seed: s.pick(a.data_seed, "data_seed")?.unwrap_or(c.seed),
        normalize: flag_or(s, a.normalize, "normalize")?,
    })
}

fn train_cmd(c: &Common, s: &Settings, a: TrainArgs) -> Result<()> {
    let spec = data_spec(c, s, &a.data)?;
    let mut ds = spec.load()?;
    if matches!(spec, DataSpec::Path(_)) && flag_or(s, a.data.normalize, "normalize")? {
        ds = ds.normalized()?;
    }
    let kind = s.pick(a.scheme, "scheme")?.unwrap_or(SchemeKind::Orthogonal);
    let depth = positive("depth", s.pick(a.depth, "depth")?.unwrap_or(16))?;
    let width = positive("width", s.pick(a.width, "width")?.unwrap_or(64))?;
    let steps = s.pick(a.steps, "steps")?.unwrap_or(2000);
    let plan = DimensionPlan::uniform(ds.d_x(), ds.d_y(), width, depth)?;
    let scheme = match (kind, s.pick(a.sigma, "sigma")?) {
        (SchemeKind::Gaussian, Some(sigma)) => InitScheme::gaussian_with_sigma(vec![sigma]),
        (SchemeKind::Orthogonal, Some(_)) => {
            return Err(LabError::usage("--sigma applies to the gaussian scheme"))
        }
        (k, None) => InitScheme::of_kind(k),
    };
    let mut cfg = TrainConfig::new(plan, scheme, steps, c.seed);
    cfg.eta = s.pick(a.eta, "eta")?.unwrap_or(EtaPolicy::Auto);
    cfg.record_every = s.pick(a.record_every, "record_every")?.unwrap_or(1);
    cfg.diag_every = s.pick(a.diag_every, "diag_every")?.unwrap_or(0);
    cfg.stop_rel_loss = s.pick(a.stop_rel_loss, "stop_rel_loss")?.unwrap_or(0.0);

    for w in cfg.scheme.sanity_warnings(&cfg.plan, 1.0) {
        eprintln!("warning: {w}");
    }
    if kind == SchemeKind::Orthogonal {
        let need = width_requirement(&ds, ds.d_y(), 0.1, 1.0)?;
        if width < need {
            eprintln!("note: width {width} is below the sufficient width {need} (C=1, delta=0.1)");
        }
    }

    let out = train(&cfg, &ds)?;
    let rec = &out.record;
    rec.save(&c.out)?;
    ds.save(&c.out.join("data"))?;
    if !flag_or(s, a.no_checkpoints, "no_checkpoints")? {
        out.initial.save_checkpoint(&c.out.join("init"), Some(c.seed), 0)?;
        let last = rec.final_row().t as u64;
        out.last.save_checkpoint(&c.out.join("final"), Some(c.seed), last)?;
    }
    let last = rec.final_row();
    println!(
        "scheme={} depth={depth} width={width} eta={} steps={} loss0={} final_loss={} rel_loss={} status={}",
        kind,
        fmt_g(rec.eta, 6),
        last.t,
        fmt_g(rec.loss0, 6),
        fmt_g(last.loss, 6),
        fmt_g(last.rel_loss, 6),
        rec.status.as_str()
    );
    println!("wrote {}", c.out.display());
    if rec.status == RunStatus::Diverged {
        return Err(LabError::Diverged(last.t));
    }
    Ok(())
}

fn scan_config(c: &Common, s: &Settings, a: &ScanArgs) -> Result<ScanConfig> {
    let checkpoints = s
        .pick(a.checkpoints.clone(), "checkpoints")?
        .map_or_else(|| vec![1258, 10000], |l| l.0);
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    Ok(ScanConfig {
        depths: s.pick(a.depths.clone(), "depths")?.map_or_else(|| vec![8, 16, 32, 64, 128], |l| l.0),
        widths: s
            .pick(a.widths.clone(), "widths")?
            .map_or_else(|| vec![4, 8, 16, 32, 64, 128, 256], |l| l.0),
        schemes: s
            .pick(a.schemes.clone(), "schemes")?
            .map_or_else(|| vec![SchemeKind::Gaussian, SchemeKind::Orthogonal], |l: List<SchemeKind>| l.0),
        trials: s.pick(a.trials, "trials")?.unwrap_or(3),
        steps: s.pick(a.steps, "steps")?.unwrap_or(last),
        checkpoints,
        eta: s.pick(a.eta, "eta")?.unwrap_or(EtaPolicy::Auto),
        master_seed: c.seed,
        data: data_spec(c, s, &a.data)?,
    })
}

fn scan_cmd(c: &Common, s: &Settings, a: ScanArgs) -> Result<()> {
    let cfg = scan_config(c, s, &a)?;
    let res = run_scan(&cfg, c.jobs)?;
    for note in res.save(&c.out)? {
        eprintln!("note: {note}");
    }
    let mut depths = cfg.depths.clone();
    depths.sort_unstable();
    depths.dedup();
    let mut cps = cfg.checkpoints.clone();
    cps.sort_unstable();
    cps.dedup();
    for &cp in &cps {
        for &kind in &cfg.schemes {
            let frontier: Vec<String> = depths
                .iter()
                .map(|&d| match res.min_trainable_width(kind, cp, d, -2.0) {
                    Some(w) => format!("{d}:{w}"),
                    None => format!("{d}:-"),
                })
                .collect();
            println!("t={cp} {kind} min trainable width by depth: {}", frontier.join(" "));
        }
    }
    println!("wrote {} ({} rows)", c.out.join("scan.csv").display(), res.rows.len());
    Ok(())
}

fn verify_cmd(c: &Common, s: &Settings, a: VerifyArgs) -> Result<()> {
    let families: Vec<String> = match s.pick(a.only, "only")? {
        Some(List(v)) => v,
        None => FAMILIES.iter().map(|f| f.to_string()).collect(),
    };
    for f in &families {
        if !FAMILIES.contains(&f.as_str()) {
            return Err(LabError::usage(format!(
                "unknown check family {f:?} (expected one of {})",
                FAMILIES.join(", ")
            )));
        }
    }
    let run_dir = s.pick(a.run, "run")?;
    let mut all = TheoryReport::new();
    let mut hard_failures = Vec::new();
    for f in &families {
        let report = run_family(f, c.seed, run_dir.as_deref())?;
        let pass = report.all_pass();
        // Checks on a supplied run are statements about that run, not about most seeds.
        let soft = is_probabilistic(f) && !(f == "trajectory" && run_dir.is_some());
        println!(
            "{f}: {}{}",
            if pass { "pass" } else { "FAIL" },
            if soft { " (probabilistic)" } else { "" }
        );
        if !pass {
            print!("{}", report.summary());
            if !soft {
                hard_failures.extend(report.failures().map(|r| format!("{f}/{}", r.name)));
            }
        }
        for mut row in report.rows {
            row.name = format!("{f}/{}", row.name);
            all.push(row);
        }
    }
    fs::create_dir_all(&c.out).map_err(|e| dln_core::Error::Io {
        path: c.out.clone(),
        source: e,
    })?;
    all.save_csv(&c.out.join("verify.csv"))?;
    println!("wrote {}", c.out.join("verify.csv").display());
    if !hard_failures.is_empty() {
        return Err(LabError::CheckFailed(hard_failures.join(", ")));
    }
    Ok(())
}
