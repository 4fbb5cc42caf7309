use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use faultyris::optimizer::{baselines, OptSettings, Scheme, SchemeResult};
use faultyris::scenario::{Profile, Scenario, SystemConfig};
use faultyris_harness::beampattern::{beampattern, uniform_grid};
use faultyris_harness::config::load_config;
use faultyris_harness::selftest::{run_selftest, violations};
use faultyris_harness::spec::ExperimentSpec;
use faultyris_harness::sweep::run_sweep;
use faultyris_harness::{HarnessError, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "faultyris", version, about = "Sensing bounds and joint design for RIS with faulty elements")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML file: system overrides (simulate, beampattern, selftest) or a sweep spec (sweep).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scheme to run; repeat for several. Defaults depend on the verb.
    #[arg(long)]
    scheme: Vec<Scheme>,
    #[arg(long, default_value = "desk")]
    profile: Profile,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the schemes on independent trials and write results and iteration logs.
    Simulate(Common),
    /// Monte Carlo sweep over one system parameter.
    Sweep(Common),
    /// Gain grid of one scheme's design through the faulty surface.
    Beampattern {
        #[command(flatten)]
        common: Common,
        /// Trial index of the scenario to draw.
        #[arg(long, default_value_t = 0)]
        trial: u64,
        #[arg(long, default_value_t = 61)]
        elev_points: usize,
        #[arg(long, default_value_t = 91)]
        azim_points: usize,
    },
    /// Consistency checks on random instances.
    Selftest(Common),
}

fn system(c: &Common) -> Result<SystemConfig> {
    load_config(c.config.as_deref(), c.profile, c.seed)
}

fn settings(cfg: &SystemConfig) -> OptSettings {
    OptSettings { tol: Some(cfg.tol), ..OptSettings::default() }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::fs::write(path, text)?)
}

#[derive(Serialize)]
struct TrialSummary<'a> {
    trial: u64,
    scheme: &'a str,
    tr_bound: f64,
    sinr_db: &'a [f64],
    sinr_ok: bool,
    outer_iterations: Option<usize>,
    converged: Option<bool>,
    rank_gap: Option<f64>,
    /// Pseudo-true elevation and azimuth of the final design, degrees.
    pseudo_true_deg: Option<[f64; 2]>,
    violations: Vec<String>,
}

fn summary(trial: u64, r: &SchemeResult) -> TrialSummary<'_> {
    TrialSummary {
        trial,
        scheme: r.scheme.name(),
        tr_bound: r.tr_bound,
        sinr_db: &r.sinr_db,
        sinr_ok: r.sinr_ok,
        outer_iterations: r.bcd.as_ref().map(|b| b.outer_iterations()),
        converged: r.bcd.as_ref().map(|b| b.converged),
        rank_gap: r.bcd.as_ref().map(|b| b.rank_gap),
        pseudo_true_deg: r.bcd.as_ref().map(|b| [b.blocks.eta0.elev.to_degrees(), b.blocks.eta0.azim.to_degrees()]),
        violations: violations(r),
    }
}

fn simulate(c: &Common) -> Result<usize> {
    let cfg = system(c)?;
    let schemes = if c.scheme.is_empty() { Scheme::ALL.to_vec() } else { c.scheme.clone() };
    let st = settings(&cfg);
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("out/simulate"));
    let mut results = Vec::new();
    let mut log = String::new();
    let mut bad = 0;
    for trial in 0..c.trials.unwrap_or(1) as u64 {
        let sc = Scenario::generate(&cfg, trial)?;
        let res = baselines(&sc, &schemes, &st)?;
        for r in &res {
            if let Some(b) = &r.bcd {
                for it in &b.iterations {
                    let line = serde_json::json!({ "trial": trial, "scheme": r.scheme.name(), "record": it });
                    log.push_str(&serde_json::to_string(&line)?);
                    log.push('\n');
                }
            }
            let s = summary(trial, r);
            println!("trial {trial} {:<9} tr_bound {:.6e} sinr_ok {}", s.scheme, s.tr_bound, s.sinr_ok);
            for v in &s.violations {
                eprintln!("violation: trial {trial} {v}");
            }
            bad += s.violations.len();
            results.push(serde_json::to_value(&s)?);
        }
    }
    let doc = serde_json::json!({ "config": cfg, "results": results });
    write(&out.join("result.json"), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    write(&out.join("iterations.jsonl"), &log)?;
    println!("wrote {}", out.display());
    Ok(bad)
}

fn sweep(c: &Common) -> Result<usize> {
    let mut spec = match &c.config {
        Some(p) => ExperimentSpec::load(p, c.profile)?,
        None => ExperimentSpec::default_for(c.profile, c.trials.unwrap_or(5), c.seed.unwrap_or(1))?,
    };
    if let Some(t) = c.trials {
        spec.n_trials = t;
    }
    if let Some(s) = c.seed {
        spec.seed = s;
    }
    if !c.scheme.is_empty() {
        spec.schemes = c.scheme.clone();
        if !spec.schemes.contains(&Scheme::Ub) {
            spec.schemes.push(Scheme::Ub);
        }
    }
    spec.validate()?;
    let out = c.out.clone().or_else(|| spec.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out/sweep"));
    let st = settings(&spec.base);
    let rep = run_sweep(&spec, &st, Some(&out))?;
    let mut bad = 0;
    for o in &rep.outcomes {
        match &o.results {
            Ok(res) => {
                for v in res.iter().flat_map(violations) {
                    eprintln!("violation: {}={} trial {} {v}", spec.axis.name(), o.value, o.trial);
                    bad += 1;
                }
            }
            Err(e) => eprintln!("error: {}={} trial {}: {e}", spec.axis.name(), o.value, o.trial),
        }
    }
    for s in &rep.summary {
        let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4e}"));
        println!("{}={:<8} {:<9} n={:<3} mean {} median {} ci95 {}", s.axis, s.value, s.scheme, s.n_ok, f(s.mean), f(s.median), f(s.ci95));
    }
    println!("wrote {} ({:.1} s)", out.display(), rep.manifest.wall_time_s);
    Ok(bad)
}

fn beampattern_cmd(c: &Common, trial: u64, ne: usize, na: usize) -> Result<usize> {
    let cfg = system(c)?;
    let scheme = match c.scheme.as_slice() {
        [] => Scheme::Proposed,
        [s] => *s,
        _ => return Err(HarnessError::Invalid("beampattern takes a single --scheme".into())),
    };
    let sc = Scenario::generate(&cfg, trial)?;
    let res = baselines(&sc, &[scheme], &settings(&cfg))?;
    let r = res.into_iter().next().ok_or_else(|| HarnessError::Invalid("no result".into()))?;
    let grid = beampattern(&cfg, &sc.channels, &r.ris, &r.design, &uniform_grid(-90.0, 90.0, ne)?, &uniform_grid(-90.0, 90.0, na)?)?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from(format!("out/beampattern_{}.dat", scheme.name())));
    write(&out, &grid.to_gnuplot())?;
    write(&out.with_extension("json"), &serde_json::to_string(&grid)?)?;
    let (i, j, g) = grid.argmax();
    let (te, ta) = sc.channels.target_aod;
    println!(
        "{}: peak {g:.4e} at ({:.1}, {:.1}) deg; target at ({:.1}, {:.1}) deg; wrote {}",
        scheme.name(),
        grid.elev_deg[i],
        grid.azim_deg[j],
        te.to_degrees(),
        ta.to_degrees(),
        out.display()
    );
    Ok(violations(&r).len())
}

fn selftest(c: &Common) -> Result<usize> {
    let cfg = system(c)?;
    let checks = run_selftest(&cfg, c.trials.unwrap_or(5) as u64);
    for k in &checks {
        println!("{} {}: {}", if k.pass { "PASS" } else { "FAIL" }, k.name, k.detail);
    }
    if let Some(out) = &c.out {
        write(out, &(serde_json::to_string_pretty(&checks)? + "\n"))?;
    }
    Ok(checks.iter().filter(|k| !k.pass).count())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Simulate(c) => simulate(c),
        Cmd::Sweep(c) => sweep(c),
        Cmd::Beampattern { common, trial, elev_points, azim_points } => beampattern_cmd(common, *trial, *elev_points, *azim_points),
        Cmd::Selftest(c) => selftest(c),
    };
    match r {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} invariant violation(s)");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
