//! Quick consistency checks run by the `selftest` verb.

use faultyris::bounds::{assemble_blocks, crb_phi, definiteness_suite, phi_block, pseudo_true, AForm, EchoModel};
use faultyris::optimizer::{baselines, OptSettings, Scheme, SchemeResult};
use faultyris::scenario::{Scenario, Stream, SystemConfig};
use faultyris::signal::TransmitDesign;
use faultyris::{CMat, CVec, C64};
use faultyris_conic::{solve, AffineExpr, Coef, SdpProblem, SolveStatus, SolverSettings, VarKind};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beampattern::{beampattern, uniform_grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl SelfCheck {
    fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        SelfCheck { name: name.into(), pass, detail: detail.into() }
    }

    fn error(name: &str, e: impl std::fmt::Display) -> Self {
        SelfCheck::new(name, false, format!("error: {e}"))
    }
}

/// Random full-power design drawn from the scenario's oracle stream.
pub fn random_design(sc: &Scenario) -> TransmitDesign {
    let cfg = &sc.config;
    let mut rng = sc.streams().rng(Stream::Oracle);
    let mut cn = || C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
    let a = CMat::from_fn(cfg.n_tx, cfg.n_tx, |_, _| cn());
    let d = TransmitDesign {
        beamformers: (0..cfg.n_users).map(|_| CVec::from_fn(cfg.n_tx, |_, _| cn())).collect(),
        sense_cov: &a * a.adjoint(),
    };
    d.scaled(cfg.p_max_w / d.power())
}

fn zero_mismatch(cfg: &SystemConfig, trials: u64) -> SelfCheck {
    let name = "zero_fault_reduces_to_crb";
    let cfg = SystemConfig { n_faulty: 0, ..cfg.clone() };
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let run = || -> faultyris::Result<f64> {
            let sc = Scenario::generate(&cfg, t)?;
            let d = random_design(&sc);
            let echo = EchoModel::new(&cfg, &sc.channels, &sc.ris)?;
            let eta0 = pseudo_true(&echo, &d, &echo.eta_true(), &Default::default())?;
            let mcrb = assemble_blocks(&echo, &d, &eta0, AForm::Generic)?.trace();
            let crb = crb_phi(&cfg, &sc.channels, &sc.ris, &d)?.trace();
            Ok((mcrb - crb).abs() / crb)
        };
        match run() {
            Ok(e) => worst = worst.max(e),
            Err(e) => return SelfCheck::error(name, e),
        }
    }
    SelfCheck::new(name, worst <= 1e-8, format!("max relative difference {worst:.2e}"))
}

fn block_checks(cfg: &SystemConfig, trials: u64) -> Vec<SelfCheck> {
    let (alg, def) = ("block_algebra", "definiteness");
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for t in 0..trials {
        let run = || -> faultyris::Result<_> {
            let sc = Scenario::generate(cfg, t)?;
            let d = random_design(&sc);
            let echo = EchoModel::new(cfg, &sc.channels, &sc.ris)?;
            let eta0 = pseudo_true(&echo, &d, &echo.eta_true(), &Default::default())?;
            assemble_blocks(&echo, &d, &eta0, AForm::Generic)
        };
        let blocks = match run() {
            Ok(b) => b,
            Err(e) => return vec![SelfCheck::error(alg, &e), SelfCheck::error(def, e)],
        };
        match blocks.full_a().try_inverse() {
            Some(ai) => {
                let top = phi_block(&(ai * blocks.full_b() * ai));
                worst = worst.max((top - blocks.mcrb_phi).norm() / top.norm());
            }
            None => worst = f64::INFINITY,
        }
        let rep = definiteness_suite(&blocks);
        failures.extend(rep.failures().into_iter().map(|c| format!("trial {t}: {}", c.name)));
    }
    vec![
        SelfCheck::new(alg, worst <= 1e-9, format!("max relative difference {worst:.2e}")),
        SelfCheck::new(def, failures.is_empty(), if failures.is_empty() { "all predicates hold".into() } else { failures.join(", ") }),
    ]
}

fn conic_toy() -> SelfCheck {
    let name = "conic_toy";
    let n = 4;
    let mut p = SdpProblem::new();
    let x = p.add_var("X", VarKind::RealSymmetric, n);
    p.minimize(AffineExpr::new().term(x, Coef::identity(n)));
    for i in 0..n {
        p.add_eq(AffineExpr::constant(-1.0).term(x, Coef::entry(i, i, 1.0)));
    }
    match solve(&p, &SolverSettings::default()) {
        Ok(s) => {
            let err = (s.real(x) - DMatrix::<f64>::identity(n, n)).norm();
            let ok = s.status == SolveStatus::Optimal && s.gap < 1e-7 && err < 1e-6;
            SelfCheck::new(name, ok, format!("{:?}, gap {:.1e}, solution error {err:.1e}", s.status, s.gap))
        }
        Err(e) => SelfCheck::error(name, e),
    }
}

fn design_checks(cfg: &SystemConfig) -> Vec<SelfCheck> {
    let (bcd_name, bp_name) = ("design_contracts", "beampattern_nonnegative");
    let run = || -> faultyris::Result<_> {
        let sc = Scenario::generate(cfg, 0)?;
        let res = baselines(&sc, &[Scheme::Proposed], &OptSettings::default())?;
        Ok((sc, res.into_iter().next()))
    };
    let (sc, res) = match run() {
        Ok((sc, Some(r))) => (sc, r),
        Ok((_, None)) => return vec![SelfCheck::new(bcd_name, false, "no result"), SelfCheck::new(bp_name, false, "no design")],
        Err(e) => return vec![SelfCheck::error(bcd_name, &e), SelfCheck::error(bp_name, e)],
    };
    let problems = violations(&res);
    let bcd_check = SelfCheck::new(
        bcd_name,
        problems.is_empty(),
        if problems.is_empty() { format!("tr bound {:.4e}", res.tr_bound) } else { problems.join(", ") },
    );
    let bp_check = match (uniform_grid(-60.0, 60.0, 25), uniform_grid(-90.0, 90.0, 37)) {
        (Ok(el), Ok(az)) => match beampattern(cfg, &sc.channels, &res.ris, &res.design, &el, &az) {
            Ok(g) => {
                let ok = g.gain.iter().flatten().all(|x| x.is_finite() && *x >= 0.0);
                SelfCheck::new(bp_name, ok, format!("peak {:.3e}", g.argmax().2))
            }
            Err(e) => SelfCheck::error(bp_name, e),
        },
        (Err(e), _) | (_, Err(e)) => SelfCheck::error(bp_name, e),
    };
    vec![bcd_check, bp_check]
}

/// Contract breaches of an optimized scheme: objective increase, broken
/// sandwich chain, rank flag or SINR shortfall. Unoptimized schemes only
/// report missing values.
pub fn violations(res: &SchemeResult) -> Vec<String> {
    let mut out = Vec::new();
    if !res.tr_bound.is_finite() || res.tr_bound <= 0.0 {
        out.push(format!("{}: bound {} is not positive", res.scheme.name(), res.tr_bound));
    }
    let Some(b) = &res.bcd else { return out };
    if b.objective_trace.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-9)) {
        out.push(format!("{}: objective increased", res.scheme.name()));
    }
    if b.iterations.iter().any(|it| !it.sandwich_ok) {
        out.push(format!("{}: sandwich chain violated", res.scheme.name()));
    }
    if b.rank_flag {
        out.push(format!("{}: rank gap {:.1e}", res.scheme.name(), b.rank_gap));
    }
    if !res.sinr_ok {
        out.push(format!("{}: SINR below target {:?} dB", res.scheme.name(), res.sinr_db));
    }
    out
}

/// Runs every check on `cfg` with `trials` random instances where applicable.
pub fn run_selftest(cfg: &SystemConfig, trials: u64) -> Vec<SelfCheck> {
    let mut out = vec![zero_mismatch(cfg, trials)];
    out.extend(block_checks(cfg, trials));
    out.push(conic_toy());
    out.extend(design_checks(cfg));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_selftest_passes() {
        let checks = run_selftest(&SystemConfig::desk(), 3);
        assert_eq!(checks.len(), 6);
        for c in &checks {
            assert!(c.pass, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn random_design_uses_full_power() {
        let sc = Scenario::generate(&SystemConfig::desk(), 2).unwrap();
        let d = random_design(&sc);
        assert!((d.power() - sc.config.p_max_w).abs() < 1e-12 * sc.config.p_max_w);
        assert_eq!(d, random_design(&sc));
    }
}
