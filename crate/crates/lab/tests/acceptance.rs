//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`).

use std::process::ExitCode;
use std::time::Instant;

use dln_core::theory::StuckVerdict;
use dln_core::{EtaPolicy, SchemeKind};
use dln_lab::scan::{run_scan, DataSpec, ScanConfig, ScanResult};
use dln_lab::verify::{
    decay, dynamics, grad_check, orthogonality, p_spectrum, stuck_dataset, stuck_run, stuck_seed,
    trajectory_dataset, trajectory_run, trajectory_seed, TrajectoryOutcome,
};

type Outcome = Result<(bool, String), String>;

fn report_line(id: usize, title: &str, outcome: Outcome, secs: f64) -> bool {
    let (ok, detail) = match outcome {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "criterion {id:>2} {}: {title} ({detail}) [{secs:.1}s]",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

fn all_pass(report: dln_lab::Result<dln_core::theory::TheoryReport>) -> Outcome {
    let r = report.map_err(|e| e.to_string())?;
    let failed: Vec<String> = r.failures().map(|f| f.name.clone()).collect();
    Ok((failed.is_empty(), if failed.is_empty() {
        format!("{} checks", r.rows.len())
    } else {
        format!("failing: {}", failed.join(", "))
    }))
}

fn trajectories() -> Result<Vec<TrajectoryOutcome>, String> {
    let ds = trajectory_dataset(0).map_err(|e| e.to_string())?;
    (0..10)
        .map(|k| trajectory_run(&ds, 16, 64, 2000, 100, trajectory_seed(0, k)).map_err(|e| e.to_string()))
        .collect()
}

fn criterion4(runs: &[TrajectoryOutcome]) -> Outcome {
    let good = runs.iter().filter(|o| o.a_ok()).count();
    let worst = runs.iter().map(|o| o.bound_ratio).fold(0.0, f64::max);
    let fin = runs.iter().map(|o| o.final_rel_loss).fold(0.0, f64::max);
    Ok((
        good >= 9,
        format!("{good}/10 seeds; max loss/curve {worst:.4}, max final rel_loss {fin:.3e}"),
    ))
}

fn criterion5(runs: &[TrajectoryOutcome]) -> Outcome {
    let good = runs.iter().filter(|o| o.b_ok && o.c_ok).count();
    let b = runs.iter().filter(|o| o.b_ok).count();
    let c = runs.iter().filter(|o| o.c_ok).count();
    let hi = runs.iter().map(|o| o.b_hi).fold(f64::NEG_INFINITY, f64::max);
    let lo = runs.iter().map(|o| o.b_lo).fold(f64::INFINITY, f64::min);
    Ok((
        good >= 9,
        format!(
            "{good}/10 seeds; B {b}/10 (log dev {lo:.3}..{hi:.3} vs window {:.3}..{:.3}), C {c}/10",
            0.9f64.ln(),
            1.1f64.ln()
        ),
    ))
}

fn criterion7() -> Outcome {
    let ds = stuck_dataset(0).map_err(|e| e.to_string())?;
    let mut stuck = 0;
    let mut exits = Vec::new();
    for k in 0..10 {
        let (_, w) = stuck_run(&ds, 100, 10, 5000, stuck_seed(0, k)).map_err(|e| e.to_string())?;
        if w.verdict == StuckVerdict::Stuck {
            stuck += 1;
        }
        exits.push(w.exit_step.map_or("-".to_string(), |t| t.to_string()));
    }
    Ok((stuck >= 8, format!("{stuck}/10 seeds stayed in window; exit steps {}", exits.join(","))))
}

fn criterion8() -> Outcome {
    let d = decay(0, 100, 100_000).map_err(|e| e.to_string())?;
    let decreasing = d.medians.windows(2).all(|w| w[1] < w[0]);
    let medians: Vec<String> = d
        .depths
        .iter()
        .zip(&d.medians)
        .map(|(l, m)| format!("L={l}:{m:.3}"))
        .collect();
    Ok((
        decreasing && d.moment_rel_err < 0.01,
        format!("medians {}; moment rel err {:.2e}", medians.join(" "), d.moment_rel_err),
    ))
}

fn desk_scan_config() -> ScanConfig {
    ScanConfig {
        depths: vec![8, 16, 32, 64, 128],
        widths: vec![4, 8, 16, 32, 64, 128, 256],
        schemes: vec![SchemeKind::Gaussian, SchemeKind::Orthogonal],
        trials: 3,
        steps: 1258,
        checkpoints: vec![1258],
        eta: EtaPolicy::Auto,
        master_seed: 0,
        data: DataSpec::desk(0),
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

fn criterion9(res: &ScanResult) -> Outcome {
    let w0 = res.uniform_trainable_width(SchemeKind::Orthogonal, 1258, -2.0);
    let a = w0.is_some_and(|w| w <= 64);
    let depths = [8, 16, 32, 64, 128];
    // Untrainable at every width counts as an infinite frontier.
    let frontier: Vec<Option<usize>> = depths
        .iter()
        .map(|&d| res.min_trainable_width(SchemeKind::Gaussian, 1258, d, -2.0))
        .collect();
    let key = |w: &Option<usize>| w.unwrap_or(usize::MAX);
    let monotone = frontier.windows(2).all(|p| key(&p[1]) >= key(&p[0]));
    let exceeds = match (w0, frontier[4]) {
        (Some(w0), f) => key(&f) > w0,
        (None, _) => false,
    };
    let shown: Vec<String> = depths
        .iter()
        .zip(&frontier)
        .map(|(d, w)| format!("{d}:{}", w.map_or("-".into(), |w| w.to_string())))
        .collect();
    Ok((
        a && monotone && exceeds,
        format!(
            "(a) orthogonal w0={} {}; (b) gaussian frontier {} monotone={monotone} exceeds_w0_at_128={exceeds}",
            w0.map_or("-".into(), |w| w.to_string()),
            if a { "ok" } else { "fails" },
            shown.join(" ")
        ),
    ))
}

fn criterion10(first: &ScanResult) -> Outcome {
    let cfg = desk_scan_config();
    let again = run_scan(&cfg, jobs()).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (p1, p2) = (dir.path().join("a"), dir.path().join("b"));
    first.save(&p1).map_err(|e| e.to_string())?;
    again.save(&p2).map_err(|e| e.to_string())?;
    let read = |p: std::path::PathBuf| std::fs::read(p).map_err(|e| e.to_string());
    let (b1, b2) = (read(p1.join("scan.csv"))?, read(p2.join("scan.csv"))?);
    Ok((b1 == b2, format!("{} bytes, identical={}", b1.len(), b1 == b2)))
}

fn main() -> ExitCode {
    let mut ok = true;
    let mut run = |id: usize, title: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = f();
        ok &= report_line(id, title, out, t.elapsed().as_secs_f64());
    };

    run(1, "orthogonality invariants", &mut || all_pass(orthogonality(0, 32, 16)));
    run(2, "gradient vs finite differences", &mut || all_pass(grad_check(0, 20)));
    run(3, "P(0) spectrum oracle", &mut || all_pass(p_spectrum(0)));

    let t = Instant::now();
    let runs = trajectories();
    let traj_secs = t.elapsed().as_secs_f64();
    run(4, "contraction curve", &mut || {
        runs.as_ref().map_err(Clone::clone).and_then(|r| criterion4(r))
    });
    println!("             (criteria 4-5 trajectories: {traj_secs:.1}s)");
    run(5, "trajectory properties B and C", &mut || {
        runs.as_ref().map_err(Clone::clone).and_then(|r| criterion5(r))
    });

    run(6, "dynamics identity and remainder bound", &mut || all_pass(dynamics(0, 10)));
    run(7, "Gaussian stuck window", &mut criterion7);
    run(8, "product-norm decay", &mut criterion8);

    let t = Instant::now();
    let scan = run_scan(&desk_scan_config(), jobs()).map_err(|e| e.to_string());
    let scan_secs = t.elapsed().as_secs_f64();
    println!("             (desk scan: {scan_secs:.1}s with {} job(s))", jobs());
    run(9, "phase diagram", &mut || scan.as_ref().map_err(Clone::clone).and_then(criterion9));
    run(10, "scan determinism", &mut || scan.as_ref().map_err(Clone::clone).and_then(criterion10));

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
