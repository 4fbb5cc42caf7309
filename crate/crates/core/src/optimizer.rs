//! Joint transmit beamforming and working-phase design.
//!
//! The bound `tr(Z⁻¹UZ⁻¹)` is replaced by the relaxed product
//! `tr(C̃ − B_ap B_aa⁻¹ B_pa)·tr(D̃²)` with auxiliaries `C̃` (bounded below by an
//! LMI in the B/A blocks) and `D̃ ≺ 0` (bounded above by `Z⁻¹` through a second
//! LMI). Block coordinate descent alternates:
//!
//! * a beamforming step: majorization-minimization over `(W_k, R_s, C̃)` with
//!   `D̃` fixed, each iterate an SDP followed by rank-one recovery;
//! * a phase step: successive convex approximation over the lifted phase
//!   matrix `Ṽ` and `D̃` with `(W_k, R_s, C̃)` fixed and a nuclear-minus-spectral
//!   rank penalty.
//!
//! Internally powers are in units of `P_max`, the coefficient parameters are
//! rescaled by `|α₀|` and every block is divided by a fixed information scale,
//! so all SDP data are of order one. The tracked objective is the relaxed
//! product at the tightest auxiliaries, `tr(U)·tr(Z⁻²)`, a function of the
//! design alone.

use faultyris_conic::{solve, AffineExpr, Coef, SdpProblem, SdpSolution, SolveStatus, SolverSettings, VarId, VarKind};
use nalgebra::{Matrix2, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    alpha_block, assemble_blocks, b_coupling, c_floor, crb_phi, lower_left, pseudo_true, sandwich_chain, sandwich_holds,
    upper_right, AForm, BlockMaps, BoundBlocks, EchoModel, ParamVector, PhaseMaps, PseudoTrueSettings,
};
use crate::linalg::{c, eig2, herm_eig_desc, hermitian_part, inv2, min_eig, re_inner, sym2, unit_modulus};
use crate::scenario::{cascaded_comm_channel, ChannelSet, RisRealization, Scenario, Stream, SystemConfig};
use crate::signal::{q_matrix, sinr, sinr_db, LiftedDesign, TransmitDesign};
use crate::{CMat, CVec, Error, Result, C64};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptSettings {
    pub max_outer: usize,
    pub max_mm: usize,
    pub max_sca: usize,
    pub rho_start: f64,
    pub rho_factor: f64,
    pub rho_max: f64,
    /// Rank-one acceptance threshold on `λ₂/λ₁`.
    pub rank_tol: f64,
    /// Relative slack added to the auxiliaries between subproblems.
    pub aux_margin: f64,
    /// Strictness margin of `D̃ ≺ 0`.
    pub nd_margin: f64,
    /// Relative SINR back-off inside the beamforming SDP.
    pub sinr_backoff_bf: f64,
    /// Relative SINR back-off inside the phase SDP.
    pub sinr_backoff_ris: f64,
    /// Random covariances per MM iterate used to audit minorization.
    pub mm_audit_points: usize,
    pub form: AForm,
    /// Overrides the configured convergence threshold.
    pub tol: Option<f64>,
    /// Step halvings tried before an update is rejected.
    pub backtrack_steps: usize,
    /// Refine the initial design by joint MM over design and auxiliaries.
    pub joint_warm_start: bool,
    /// Re-solve the pseudo-true point at every candidate iterate instead of
    /// holding the initial one for the whole run.
    pub refresh_pseudo_true: bool,
    pub pseudo_true: PseudoTrueSettings,
    #[serde(skip)]
    pub solver: SolverSettings,
}

impl Default for OptSettings {
    fn default() -> Self {
        OptSettings {
            max_outer: 30,
            max_mm: 15,
            max_sca: 25,
            rho_start: 0.1,
            rho_factor: 5.0,
            rho_max: 1e4,
            rank_tol: 1e-4,
            aux_margin: 1e-6,
            nd_margin: 1e-6,
            sinr_backoff_bf: 1e-6,
            sinr_backoff_ris: 1e-3,
            mm_audit_points: 50,
            form: AForm::Generic,
            tol: None,
            refresh_pseudo_true: true,
            joint_warm_start: true,
            backtrack_steps: 6,
            pseudo_true: PseudoTrueSettings::default(),
            solver: SolverSettings::default(),
        }
    }
}

/// Fixed unit system of one run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Scaling {
    /// Parameter weights `(1, 1, |α₀|, |α₀|)`.
    pub weights: [f64; 4],
    /// Common divisor of every information block.
    pub info: f64,
    pub p_max: f64,
}

/// Model pieces that depend on the commanded phases.
#[derive(Debug, Clone)]
struct Model {
    chs: ChannelSet,
    ris: RisRealization,
    echo: EchoModel,
    eta0: ParamVector,
    /// Normalized maps: blocks in scaled units as functions of `R̂ = R_x / P_max`.
    maps: BlockMaps,
    hbar: Vec<CVec>,
}

impl Model {
    fn new(cfg: &SystemConfig, chs: &ChannelSet, ris: &RisRealization, eta0: &ParamVector, sc: &Scaling, form: AForm) -> Result<Self> {
        let chs = chs.partitioned(ris)?;
        let echo = EchoModel::new(cfg, &chs, ris)?;
        let maps = BlockMaps::new(&echo, eta0, form).rescaled(&sc.weights, sc.p_max / sc.info);
        let hbar = (0..chs.n_users()).map(|k| cascaded_comm_channel(&chs, ris, k)).collect::<Result<_>>()?;
        Ok(Model { chs, ris: ris.clone(), echo, eta0: *eta0, maps, hbar })
    }
}

/// Normalized design: rank-one beamformers and `R̂_s`.
#[derive(Debug, Clone)]
struct Design {
    beams: Vec<CVec>,
    rs: CMat,
}

impl Design {
    fn r_hat(&self) -> CMat {
        let mut r = self.rs.clone();
        for w in &self.beams {
            r += w * w.adjoint();
        }
        r
    }

    fn lifted(&self) -> Vec<CMat> {
        self.beams.iter().map(|w| w * w.adjoint()).collect()
    }

    fn to_watts(&self, p: f64) -> TransmitDesign {
        TransmitDesign { beamformers: self.beams.iter().map(|w| w * c(p.sqrt())).collect(), sense_cov: &self.rs * c(p) }
    }

    fn from_watts(d: &TransmitDesign, p: f64) -> Self {
        Design { beams: d.beamformers.iter().map(|w| w / c(p.sqrt())).collect(), rs: &d.sense_cov / c(p) }
    }
}

/// Blocks at one design with the auxiliaries set just above their floors.
#[derive(Debug, Clone)]
struct Tight {
    b: Matrix4<f64>,
    c_t: Matrix2<f64>,
    d_t: Matrix2<f64>,
    /// `tr(U)·tr(Z⁻²)` in scaled units.
    j: f64,
    /// `tr(Z⁻¹UZ⁻¹)` in scaled units.
    bound: f64,
    blocks: BoundBlocks,
}

fn tighten(maps: &BlockMaps, r_hat: &CMat, eta0: &ParamVector, margin: f64) -> Result<Tight> {
    let (a, b) = maps.eval(r_hat);
    let blocks = BoundBlocks::from_full(*eta0, &a, &b)?;
    let (_, zmax) = eig2(&blocks.z);
    if !(zmax < 0.0) {
        return Err(Error::DegenerateDesign("Z is not negative definite".into()));
    }
    let zi = inv2(&blocks.z, "Z")?;
    let cf = c_floor(&a, &b)?;
    let c_t = cf + Matrix2::identity() * (margin * cf.trace().abs() / 2.0);
    let d_t = zi * (1.0 + margin);
    let j = blocks.u.trace() * (zi * zi).trace();
    let bound = blocks.mcrb_phi.trace();
    if !(j.is_finite() && j > 0.0) {
        return Err(Error::NumericalFailure("relaxed objective is not finite".into()));
    }
    Ok(Tight { b, c_t, d_t, j, bound, blocks })
}

/// Result of a Proposition-style rank-one recovery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryAudit {
    /// Largest entrywise change of `R_x`.
    pub rx_change: f64,
    /// Largest relative SINR change over users.
    pub sinr_rel_change: f64,
    /// Smallest eigenvalue of the recovered `R_s`, relative to `tr R_x`.
    pub rs_min_eig: f64,
}

/// Rank-one beamformers with `R_x` and every SINR preserved.
///
/// `hbar[k]` are the cascaded channels as vectors (rows), `noise` is the
/// communication noise in the same power units as the design.
pub fn recover_rank_one(w_hat: &[CMat], rs_hat: &CMat, hbar: &[CVec], noise: f64) -> Result<(Vec<CVec>, CMat, RecoveryAudit)> {
    if w_hat.len() != hbar.len() {
        return Err(Error::InvalidArgument("one lifted beamformer per user is required".into()));
    }
    let mut rs = hermitian_part(rs_hat);
    let mut beams = Vec::with_capacity(w_hat.len());
    for (wk, h) in w_hat.iter().zip(hbar) {
        let wk = hermitian_part(wk);
        let hc = h.conjugate();
        let g = hc.dotc(&(&wk * &hc)).re;
        if !(g > 0.0) {
            return Err(Error::DegenerateDesign("zero useful signal at a user".into()));
        }
        let w = &wk * &hc / c(g.sqrt());
        rs += &wk - &w * w.adjoint();
        beams.push(w);
    }
    let before = LiftedDesign { w_lift: w_hat.iter().map(hermitian_part).collect(), sense_cov: hermitian_part(rs_hat) };
    let after = TransmitDesign { beamformers: beams.clone(), sense_cov: rs.clone() };
    let (rb, ra) = (before.tx_cov(), after.tx_cov());
    let rx_change = (&rb - &ra).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let quad = |h: &CVec, m: &CMat| h.conjugate().dotc(&(m * h.conjugate())).re;
    let mut sinr_rel_change: f64 = 0.0;
    for (k, h) in hbar.iter().enumerate() {
        let sb = quad(h, &before.w_lift[k]) / (quad(h, &rb) - quad(h, &before.w_lift[k]) + noise);
        let wk = &beams[k] * beams[k].adjoint();
        let sa = quad(h, &wk) / (quad(h, &ra) - quad(h, &wk) + noise);
        sinr_rel_change = sinr_rel_change.max((sa - sb).abs() / sb.abs().max(f64::MIN_POSITIVE));
    }
    let tr = ra.trace().re.abs().max(f64::MIN_POSITIVE);
    let audit = RecoveryAudit { rx_change, sinr_rel_change, rs_min_eig: min_eig(&rs) / tr };
    Ok((beams, rs, audit))
}

/// One MM iterate of the beamforming step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MmRecord {
    /// `tr(C̃) − tr(B_ap B_aa⁻¹ B_pa)` at the iterate.
    pub objective: f64,
    /// `|surrogate − exact|` at the anchor, relative.
    pub tangency_err: f64,
    /// Smallest `exact − surrogate` over the random audit points, relative.
    pub minorization_gap: f64,
    pub recovery: RecoveryAudit,
    pub status: String,
    /// False for a solve that did not improve and was discarded.
    pub accepted: bool,
}

/// One SCA iterate of the phase step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaRecord {
    pub rho: f64,
    /// Penalized objective `‖D̃‖²/t₀ + ρ(‖Ṽ‖_* − ‖Ṽ‖₂)`.
    pub objective: f64,
    /// Linearized objective value returned by the SDP.
    pub sdp_objective: f64,
    /// Same linearized problem evaluated at the previous iterate.
    pub sdp_objective_at_anchor: f64,
    pub rank_gap: f64,
    pub status: String,
}

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterRecord {
    pub outer: usize,
    /// Relaxed objective (true units) after the iteration.
    pub objective: f64,
    /// Bound at the pseudo-true point used by the run (true units).
    pub tr_mcrb_run: f64,
    pub min_sinr_db: f64,
    pub bf_accepted: bool,
    pub ris_accepted: bool,
    pub mm: Vec<MmRecord>,
    pub sca: Vec<ScaRecord>,
    /// Rank gap of the last phase-step solution.
    pub rank_gap: f64,
    /// Worst SINR ratio to target after unit-modulus projection.
    pub projected_sinr_ratio: f64,
    pub sandwich: [f64; 3],
    pub sandwich_ok: bool,
}

/// Output of one alternating design run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BcdResult {
    pub design: TransmitDesign,
    pub ris: RisRealization,
    /// Pseudo-true point of the last accepted iterate as used by the run.
    pub eta_last: ParamVector,
    /// Blocks at the re-solved pseudo-true point of the final design.
    pub blocks: BoundBlocks,
    pub tr_bound: f64,
    /// Relaxed objective (true units); entry 0 is the initial value.
    pub objective_trace: Vec<f64>,
    pub iterations: Vec<IterRecord>,
    pub converged: bool,
    /// Final rank gap of the lifted phase matrix.
    pub rank_gap: f64,
    pub rank_flag: bool,
    pub init_recovery: RecoveryAudit,
    /// Accepted joint warm-start iterates before the alternating loop.
    pub warm_steps: usize,
    pub scaling: Scaling,
}

impl BcdResult {
    pub fn outer_iterations(&self) -> usize {
        self.iterations.len()
    }
}

fn add_linear(expr: &mut AffineExpr, vars: &[VarId], k: &CMat) {
    for &v in vars {
        expr.add_term(v, Coef::Dense(k.clone()));
    }
}

/// `hvc hvcᴴ` with `hvc = conj(h̄)`, so `Re tr(Cᴴ W) = h̄ W h̄ᴴ`.
fn channel_gram(h: &CVec) -> CMat {
    let hc = h.conjugate();
    &hc * hc.adjoint()
}

/// Optimal, or stalled with residuals small enough to use the iterate.
fn usable(sol: &SdpSolution) -> bool {
    const LOOSE: f64 = 1e-6;
    sol.is_optimal()
        || (sol.status == SolveStatus::NumericalLimit && sol.primal_residual < LOOSE && sol.dual_residual < LOOSE && sol.gap < LOOSE)
}

fn status_name(s: SolveStatus) -> String {
    format!("{s:?}")
}

/// Treatment of `D̃` in the beamforming SDP.
#[derive(Debug, Clone, Copy)]
enum DAux {
    /// `D̃` held at the given value.
    Fixed(Matrix2<f64>),
    /// `D̃` free; the product objective is replaced by its log-tangent
    /// majorizer `tr(C̃ − ·)/c0 + ‖D̃‖²/d0`.
    Joint { c0: f64, d0: f64 },
}

struct BfSolve {
    w_hat: Vec<CMat>,
    rs_hat: CMat,
    c_t: Matrix2<f64>,
}

/// Adds power and SINR rows over `(W_k…, R_s)`; SINR rows are in units of `γσ²/P`.
fn add_comm_constraints(p: &mut SdpProblem, wv: &[VarId], rs: VarId, hbar: &[CVec], gamma: f64, noise_norm: f64, backoff: f64) {
    let n = hbar[0].len();
    let mut pw = AffineExpr::constant(1.0);
    for &v in wv.iter().chain(std::iter::once(&rs)) {
        pw.add_term(v, Coef::identity(n).scaled(-1.0));
    }
    p.add_ge(pw);
    for (k, h) in hbar.iter().enumerate() {
        let g = channel_gram(h);
        let mut e = AffineExpr::constant(-(1.0 + backoff));
        for (i, &v) in wv.iter().enumerate() {
            let s = if i == k { 1.0 / (gamma * noise_norm) } else { -1.0 / noise_norm };
            e.add_term(v, Coef::Dense(&g * c(s)));
        }
        e.add_term(rs, Coef::Dense(&g * c(-1.0 / noise_norm)));
        p.add_ge(e);
    }
}

/// `−[[D̃, Ĩ], [Ĩᵀ, A]] ⪰ 0` where `A` entries are given as expressions and `D̃` by `dt(i, j)`.
fn add_d_lmi(p: &mut SdpProblem, a: &dyn Fn(usize, usize) -> AffineExpr, dt: &dyn Fn(usize, usize) -> AffineExpr) {
    p.add_lmi(6, 0.0, |i, j| {
        if j < 2 {
            dt(i, j).scaled(-1.0)
        } else if i < 2 {
            AffineExpr::constant(if j - 2 == i { -1.0 } else { 0.0 })
        } else {
            a(i - 2, j - 2).scaled(-1.0)
        }
    });
}

fn map_expr(vars: &[VarId], k: &CMat) -> AffineExpr {
    let mut e = AffineExpr::new();
    add_linear(&mut e, vars, k);
    e
}

struct Ctx<'a> {
    cfg: &'a SystemConfig,
    base_chs: &'a ChannelSet,
    scaling: Scaling,
    st: &'a OptSettings,
    gamma: f64,
    noise_norm: f64,
}

impl Ctx<'_> {
    fn model(&self, ris: &RisRealization, eta0: &ParamVector) -> Result<Model> {
        Model::new(self.cfg, self.base_chs, ris, eta0, &self.scaling, self.st.form)
    }

    /// First point on the segment from `start` to `target` (lifted designs,
    /// step halved from 1) whose tracked objective does not exceed `j_ref`.
    fn backtrack(&self, m: &Model, start: &Design, target: &Design, j_ref: f64) -> Result<Option<(Model, Design, Tight)>> {
        let mut lam = 1.0;
        for _ in 0..self.st.backtrack_steps.max(1) {
            if let Some(d) = self.blend(m, start, target, lam) {
                if let Ok((m2, t)) = self.candidate(&m.ris, &d, &m.eta0) {
                    if t.j <= j_ref {
                        return Ok(Some((m2, d, t)));
                    }
                }
            }
            lam *= 0.5;
        }
        Ok(None)
    }

    /// Rank-one design of the lifted point `(1 − λ)·start + λ·target`.
    fn blend(&self, m: &Model, start: &Design, target: &Design, lam: f64) -> Option<Design> {
        let w: Vec<CMat> = start.lifted().iter().zip(target.lifted()).map(|(a, b)| a * c(1.0 - lam) + b * c(lam)).collect();
        let rs = &start.rs * c(1.0 - lam) + &target.rs * c(lam);
        recover_rank_one(&w, &rs, &m.hbar, self.noise_norm).ok().map(|(beams, rs, _)| Design { beams, rs })
    }

    /// Model and tightened state of a candidate iterate.
    fn candidate(&self, ris: &RisRealization, design: &Design, eta_prev: &ParamVector) -> Result<(Model, Tight)> {
        let eta0 = if self.st.refresh_pseudo_true {
            let chs = self.base_chs.partitioned(ris)?;
            let echo = EchoModel::new(self.cfg, &chs, ris)?;
            pseudo_true(&echo, &design.to_watts(self.scaling.p_max), &echo.eta_true(), &self.st.pseudo_true)?
        } else {
            *eta_prev
        };
        let m = self.model(ris, &eta0)?;
        let t = tighten(&m.maps, &design.r_hat(), &eta0, self.st.aux_margin)?;
        Ok((m, t))
    }

    /// Minimizes `‖D̃‖²` over designs meeting power, SINR and the D-side LMI.
    fn init_sdp(&self, m: &Model) -> Result<Design> {
        let n = self.cfg.n_tx;
        let mut p = SdpProblem::new();
        let wv: Vec<VarId> = (0..self.cfg.n_users).map(|k| p.add_var(&format!("W{k}"), VarKind::Hermitian, n)).collect();
        let rs = p.add_var("Rs", VarKind::Hermitian, n);
        let pv = p.add_var("P", VarKind::RealSymmetric, 2);
        let t = p.add_var("t", VarKind::RealSymmetric, 1);
        let mut all = wv.clone();
        all.push(rs);
        let delta = self.st.nd_margin;
        let dt = move |i: usize, j: usize| {
            AffineExpr::constant(if i == j { -delta } else { 0.0 }).term(pv, Coef::entry(i, j, -1.0))
        };
        add_d_lmi(&mut p, &|i, j| map_expr(&all, &m.maps.a[4 * i + j]), &dt);
        add_epigraph(&mut p, t, &dt);
        add_comm_constraints(&mut p, &wv, rs, &m.hbar, self.gamma, self.noise_norm, self.st.sinr_backoff_bf);
        p.minimize(AffineExpr::new().term(t, Coef::entry(0, 0, 1.0)));
        let sol = solve(&p, &self.st.solver)?;
        match sol.status {
            _ if usable(&sol) => {}
            SolveStatus::Infeasible => {
                return Err(Error::InfeasibleScenario("SINR targets cannot be met within the power budget".into()))
            }
            s => return Err(Error::NumericalFailure(format!("initial design SDP ended with {s:?} pr={:e} dr={:e} gap={:e} it={}", sol.primal_residual, sol.dual_residual, sol.gap, sol.iterations))),
        }
        let w_hat: Vec<CMat> = wv.iter().map(|&v| sol.hermitian(v).clone()).collect();
        let (beams, rs, _) = recover_rank_one(&w_hat, sol.hermitian(rs), &m.hbar, self.noise_norm)?;
        Ok(Design { beams, rs })
    }

    /// Largest `τ` with `R̂_x ⪰ τ·target` under power and SINR.
    fn repair_sdp(&self, m: &Model, target: &CMat) -> Result<Option<Design>> {
        let n = self.cfg.n_tx;
        let mut p = SdpProblem::new();
        let wv: Vec<VarId> = (0..self.cfg.n_users).map(|k| p.add_var(&format!("W{k}"), VarKind::Hermitian, n)).collect();
        let rs = p.add_var("Rs", VarKind::Hermitian, n);
        let tau = p.add_var("tau", VarKind::RealSymmetric, 1);
        let mut all = wv.clone();
        all.push(rs);
        // Hermitian LMI written on the real embedding [[Re, −Im], [Im, Re]].
        p.add_lmi(2 * n, 0.0, |i, j| {
            let (bi, ii) = (i / n, i % n);
            let (bj, jj) = (j / n, j % n);
            let (re_part, sign) = match (bi, bj) {
                (0, 0) | (1, 1) => (true, 1.0),
                (0, 1) => (false, -1.0),
                _ => (false, 1.0),
            };
            // Re/Im of (R̂_x)_{ii,jj} as Re tr(Cᴴ X) functionals.
            let k = if re_part {
                let mut k = CMat::zeros(n, n);
                k[(ii, jj)] += c(0.5);
                k[(jj, ii)] += c(0.5);
                k
            } else {
                let mut k = CMat::zeros(n, n);
                k[(ii, jj)] += C64::new(0.0, 0.5);
                k[(jj, ii)] -= C64::new(0.0, 0.5);
                k
            };
            let t = if re_part { target[(ii, jj)].re } else { target[(ii, jj)].im };
            map_expr(&all, &(k * c(sign))).term(tau, Coef::entry(0, 0, -sign * t))
        });
        add_comm_constraints(&mut p, &wv, rs, &m.hbar, self.gamma, self.noise_norm, self.st.sinr_backoff_bf);
        p.minimize(AffineExpr::new().term(tau, Coef::entry(0, 0, -1.0)));
        let sol = solve(&p, &self.st.solver)?;
        if !usable(&sol) {
            return Ok(None);
        }
        let w_hat: Vec<CMat> = wv.iter().map(|&v| sol.hermitian(v).clone()).collect();
        Ok(recover_rank_one(&w_hat, sol.hermitian(rs), &m.hbar, self.noise_norm).ok().map(|(beams, rs, _)| Design { beams, rs }))
    }

    fn bf_sdp(&self, m: &Model, anchor_b: &Matrix4<f64>, aux: DAux) -> Result<(SolveStatus, Option<BfSolve>)> {
        let n = self.cfg.n_tx;
        let mut p = SdpProblem::new();
        let wv: Vec<VarId> = (0..self.cfg.n_users).map(|k| p.add_var(&format!("W{k}"), VarKind::Hermitian, n)).collect();
        let rs = p.add_var("Rs", VarKind::Hermitian, n);
        let ct = p.add_var("C", VarKind::RealSymmetric, 2);
        let mut all = wv.clone();
        all.push(rs);
        let a = &m.maps.a;
        let b = &m.maps.b;
        // C-side LMI: [[C̃ − B_pp, A_ap + B_ap], [·, B_aa]] ⪰ 0.
        p.add_lmi(4, 0.0, |i, j| {
            let k = 4 * i + j;
            if i < 2 && j < 2 {
                map_expr(&all, &(-&b[k])).term(ct, Coef::entry(i, j, 1.0))
            } else if i < 2 {
                map_expr(&all, &(&a[k] + &b[k]))
            } else {
                map_expr(&all, &b[k])
            }
        });
        let mut extra = AffineExpr::new();
        let mut c_weight = 1.0;
        match aux {
            DAux::Fixed(d) => {
                add_d_lmi(&mut p, &|i, j| map_expr(&all, &a[4 * i + j]), &|i, j| AffineExpr::constant(d[(i, j)]));
            }
            DAux::Joint { c0, d0 } => {
                let pv = p.add_var("P", VarKind::RealSymmetric, 2);
                let t = p.add_var("t", VarKind::RealSymmetric, 1);
                let delta = self.st.nd_margin;
                let dt = move |i: usize, j: usize| {
                    AffineExpr::constant(if i == j { -delta } else { 0.0 }).term(pv, Coef::entry(i, j, -1.0))
                };
                add_d_lmi(&mut p, &|i, j| map_expr(&all, &a[4 * i + j]), &dt);
                add_epigraph(&mut p, t, &dt);
                extra.add_term(t, Coef::entry(0, 0, 1.0 / d0));
                c_weight = 1.0 / c0;
            }
        }
        add_comm_constraints(&mut p, &wv, rs, &m.hbar, self.gamma, self.noise_norm, self.st.sinr_backoff_bf);
        // Linearized tr(B_ap B_aa⁻¹ B_pa) at the anchor.
        let x = upper_right(anchor_b);
        let yi = inv2(&alpha_block(anchor_b), "B_αα")?;
        let g1 = x * yi * 2.0;
        let g2 = yi * x.transpose() * x * yi;
        let mut kobj = CMat::zeros(n, n);
        for i in 0..2 {
            for j in 0..2 {
                kobj += &b[4 * (2 + j) + i] * c(g1[(i, j)]);
                kobj -= &b[4 * (2 + j) + 2 + i] * c(g2[(i, j)]);
            }
        }
        let mut obj = map_expr(&all, &(kobj * c(-c_weight)));
        obj.add_term(ct, Coef::identity(2).scaled(c_weight));
        p.minimize(obj.add(&extra));
        let sol = solve(&p, &self.st.solver)?;
        if !usable(&sol) {
            return Ok((sol.status, None));
        }
        Ok((
            sol.status,
            Some(BfSolve {
                w_hat: wv.iter().map(|&v| sol.hermitian(v).clone()).collect(),
                rs_hat: sol.hermitian(rs).clone(),
                c_t: sym2_dyn(sol.real(ct)),
            }),
        ))
    }
}

/// `[[I₃, d], [dᵀ, t]] ⪰ 0` with `d = (D̃₀₀, √2 D̃₀₁, D̃₁₁)`, i.e. `t ≥ ‖D̃‖_F²`.
fn add_epigraph(p: &mut SdpProblem, t: VarId, dt: &dyn Fn(usize, usize) -> AffineExpr) {
    let s2 = std::f64::consts::SQRT_2;
    p.add_lmi(4, 0.0, |i, j| match (i, j) {
        (3, 3) => AffineExpr::new().term(t, Coef::entry(0, 0, 1.0)),
        (0, 3) => dt(0, 0),
        (1, 3) => dt(0, 1).scaled(s2),
        (2, 3) => dt(1, 1),
        (i, j) => AffineExpr::constant(if i == j { 1.0 } else { 0.0 }),
    });
}

/// `tr(B_ap B_aa⁻¹ B_pa)` and its linearization at `anchor`, both at `b`.
fn coupling_and_surrogate(b: &Matrix4<f64>, anchor: &Matrix4<f64>) -> Result<(f64, f64)> {
    let exact = b_coupling(b)?.trace();
    let x0 = upper_right(anchor);
    let y0i = inv2(&alpha_block(anchor), "B_αα")?;
    let sur = 2.0 * (x0 * y0i * lower_left(b)).trace() - (y0i * x0.transpose() * x0 * y0i * alpha_block(b)).trace();
    Ok((exact, sur))
}

fn sym2_dyn(m: &nalgebra::DMatrix<f64>) -> Matrix2<f64> {
    sym2(&Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]))
}

fn random_unit_cov(n: usize, rng: &mut ChaCha8Rng) -> CMat {
    let k = rng.random_range(1..=n);
    let g = CMat::from_fn(n, k, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let r = &g * g.adjoint();
    let tr = r.trace().re;
    r / c(tr)
}

struct BfOutcome {
    design: Design,
    tight: Tight,
    model: Option<Model>,
    records: Vec<MmRecord>,
    accepted: bool,
}

fn beamforming_step(ctx: &Ctx, m: &Model, design: &Design, tight: &Tight, rng: &mut ChaCha8Rng) -> Result<BfOutcome> {
    let d_t = tight.d_t;
    let mut cur = design.clone();
    let mut cur_b = tight.b;
    let mut cur_obj = tight.c_t.trace() - b_coupling(&tight.b)?.trace();
    let mut records = Vec::new();
    for _ in 0..ctx.st.max_mm {
        let (status, sol) = ctx.bf_sdp(m, &cur_b, DAux::Fixed(d_t))?;
        let Some(sol) = sol else {
            records.push(MmRecord {
                objective: cur_obj,
                tangency_err: 0.0,
                minorization_gap: 0.0,
                recovery: RecoveryAudit { rx_change: 0.0, sinr_rel_change: 0.0, rs_min_eig: 0.0 },
                status: status_name(status),
                accepted: false,
            });
            break;
        };
        let (beams, rs, audit) = recover_rank_one(&sol.w_hat, &sol.rs_hat, &m.hbar, ctx.noise_norm)?;
        let next = Design { beams, rs };
        let r = next.r_hat();
        let (_, b) = m.maps.eval(&r);
        let exact_new = b_coupling(&b)?.trace();
        let obj = sol.c_t.trace() - exact_new;

        // Surrogate audit around the anchor used for this solve.
        let (ex_a, sur_a) = coupling_and_surrogate(&cur_b, &cur_b)?;
        let tangency_err = (ex_a - sur_a).abs() / ex_a.abs().max(f64::MIN_POSITIVE);
        let mut gap = f64::INFINITY;
        for _ in 0..ctx.st.mm_audit_points {
            let rr = random_unit_cov(ctx.cfg.n_tx, rng);
            let (_, bb) = m.maps.eval(&rr);
            let (ex, sur) = coupling_and_surrogate(&bb, &cur_b)?;
            gap = gap.min((ex - sur) / ex.abs().max(f64::MIN_POSITIVE));
        }
        let improved = obj <= cur_obj;
        records.push(MmRecord { objective: obj, tangency_err, minorization_gap: gap, recovery: audit, status: status_name(status), accepted: improved });
        if !improved {
            break;
        }
        let rel = (cur_obj - obj) / cur_obj.abs().max(f64::MIN_POSITIVE);
        cur = next;
        cur_b = b;
        cur_obj = obj;
        if rel < ctx_tol(ctx) {
            break;
        }
    }
    match ctx.backtrack(m, design, &cur, tight.j)? {
        Some((model, d, t)) => Ok(BfOutcome { design: d, tight: t, model: Some(model), records, accepted: true }),
        None => Ok(BfOutcome { design: design.clone(), tight: tight.clone(), model: None, records, accepted: false }),
    }
}

/// Joint MM on `log J` over the design and both auxiliaries, each iterate
/// re-anchored and accepted only if the tracked objective decreases.
fn joint_warm_start(ctx: &Ctx, mut m: Model, mut design: Design, mut tight: Tight) -> Result<(Model, Design, Tight, usize)> {
    let mut accepted = 0;
    for _ in 0..ctx.st.max_mm {
        let c0 = tight.c_t.trace() - b_coupling(&tight.b)?.trace();
        let d0 = (tight.d_t * tight.d_t).trace();
        let (_, sol) = ctx.bf_sdp(&m, &tight.b, DAux::Joint { c0, d0 })?;
        let Some(sol) = sol else { break };
        let (beams, rs, _) = recover_rank_one(&sol.w_hat, &sol.rs_hat, &m.hbar, ctx.noise_norm)?;
        let next = Design { beams, rs };
        let Some((m2, next, t2)) = ctx.backtrack(&m, &design, &next, tight.j)? else { break };
        let rel = (tight.j - t2.j) / tight.j;
        m = m2;
        design = next;
        tight = t2;
        accepted += 1;
        if rel < ctx_tol(ctx) {
            break;
        }
    }
    Ok((m, design, tight, accepted))
}

fn ctx_tol(ctx: &Ctx) -> f64 {
    ctx.st.tol.unwrap_or(ctx.cfg.tol)
}

fn pad(k: &CMat) -> CMat {
    let w = k.nrows();
    let mut out = CMat::zeros(w + 1, w + 1);
    out.view_mut((0, 0), (w, w)).copy_from(k);
    out
}

fn lift(v_w: &CVec) -> CVec {
    let mut vt = CVec::from_element(v_w.len() + 1, c(1.0));
    vt.rows_mut(0, v_w.len()).copy_from(v_w);
    vt
}

struct RisOutcome {
    v_w: CVec,
    records: Vec<ScaRecord>,
    rank_gap: f64,
}

fn phase_step(ctx: &Ctx, m: &Model, design: &Design, tight: &Tight) -> Result<Option<RisOutcome>> {
    let wn = m.ris.working_idx().len();
    if wn == 0 {
        return Ok(None);
    }
    let sc = &ctx.scaling;
    let r_true = design.r_hat() * c(sc.p_max);
    let pm = PhaseMaps::new(&m.echo, &m.eta0, &r_true, ctx.st.form);
    let wgt = |i: usize, j: usize| sc.weights[i] * sc.weights[j] / sc.info;
    let a_const = Matrix4::from_fn(|i, j| pm.a_const[(i, j)] * wgt(i, j));
    let a_coef: Vec<CMat> = (0..16).map(|k| pad(&pm.a_coef[k]) * c(wgt(k / 4, k % 4))).collect();
    let b = tight.b;
    let c_t = tight.c_t;
    let lifted = LiftedDesign { w_lift: design.lifted().iter().map(|w| w * c(sc.p_max)).collect(), sense_cov: &design.rs * c(sc.p_max) };
    let q: Vec<CMat> = (0..ctx.cfg.n_users)
        .map(|k| q_matrix(&m.chs, &m.ris, &lifted, k, ctx.gamma))
        .collect::<Result<_>>()?;
    let sinr_floor = ctx.gamma * ctx.cfg.noise_comm_w;
    let t0 = (tight.d_t * tight.d_t).trace();
    let delta = ctx.st.nd_margin;

    let mut v_prev = {
        let vt = lift(&m.ris.working_phases());
        &vt * vt.adjoint()
    };
    let mut u = herm_eig_desc(&v_prev).1.swap_remove(0);
    let mut rho = ctx.st.rho_start;
    let mut records = Vec::new();
    let mut best: Option<CMat> = None;
    let mut prev_obj = f64::INFINITY;
    let mut gap = 1.0;
    for _ in 0..ctx.st.max_sca {
        let mut p = SdpProblem::new();
        let vv = p.add_var("V", VarKind::Hermitian, wn + 1);
        let pv = p.add_var("P", VarKind::RealSymmetric, 2);
        let t = p.add_var("t", VarKind::RealSymmetric, 1);
        let a_expr = |i: usize, j: usize| AffineExpr::constant(a_const[(i, j)]).term(vv, Coef::Dense(a_coef[4 * i + j].clone()));
        p.add_lmi(4, 0.0, |i, j| {
            if i < 2 && j < 2 {
                AffineExpr::constant(c_t[(i, j)] - b[(i, j)])
            } else if i < 2 {
                a_expr(i, j).plus(b[(i, j)])
            } else {
                AffineExpr::constant(b[(i, j)])
            }
        });
        let dt = move |i: usize, j: usize| {
            AffineExpr::constant(if i == j { -delta } else { 0.0 }).term(pv, Coef::entry(i, j, -1.0))
        };
        add_d_lmi(&mut p, &a_expr, &dt);
        add_epigraph(&mut p, t, &dt);
        for i in 0..=wn {
            p.add_eq(AffineExpr::constant(-1.0).term(vv, Coef::entry(i, i, 1.0)));
        }
        for qk in &q {
            p.add_ge(AffineExpr::constant(-(1.0 + ctx.st.sinr_backoff_ris)).term(vv, Coef::Dense(qk * c(1.0 / sinr_floor))));
        }
        let uu = &u * u.adjoint();
        p.minimize(AffineExpr::new().term(t, Coef::entry(0, 0, 1.0 / t0)).term(vv, Coef::Dense(&uu * c(-rho))));
        let sol = solve(&p, &ctx.st.solver)?;
        if !usable(&sol) {
            records.push(ScaRecord {
                rho,
                objective: prev_obj,
                sdp_objective: f64::NAN,
                sdp_objective_at_anchor: f64::NAN,
                rank_gap: gap,
                status: status_name(sol.status),
            });
            break;
        }
        let v = hermitian_part(sol.hermitian(vv));
        let pm2 = sym2_dyn(sol.real(pv));
        let d = -pm2 - Matrix2::identity() * delta;
        let (vals, vecs) = herm_eig_desc(&v);
        let l1 = vals[0].max(f64::MIN_POSITIVE);
        gap = vals.get(1).copied().unwrap_or(0.0).max(0.0) / l1;
        let nuclear: f64 = vals.iter().map(|x| x.max(0.0)).sum();
        let obj = (d * d).trace() / t0 + rho * (nuclear - vals[0]);
        let at_anchor = {
            let (dv, _) = herm_eig_desc(&v_prev);
            (tight.d_t * tight.d_t).trace() / t0 - rho * re_inner(&uu, &v_prev) + 0.0 * dv[0]
        };
        records.push(ScaRecord {
            rho,
            objective: obj,
            sdp_objective: sol.objective,
            sdp_objective_at_anchor: at_anchor,
            rank_gap: gap,
            status: status_name(sol.status),
        });
        let delta_obj = (prev_obj - obj).abs() / obj.abs().max(1.0);
        best = Some(v.clone());
        u = vecs[0].clone();
        v_prev = v;
        prev_obj = obj;
        if delta_obj < ctx_tol(ctx) && gap < ctx.st.rank_tol {
            break;
        }
        rho = (rho * ctx.st.rho_factor).min(ctx.st.rho_max);
    }
    let Some(v) = best else { return Ok(None) };
    let top = herm_eig_desc(&v).1.swap_remove(0);
    let last = top[wn];
    if last.norm() == 0.0 {
        return Ok(None);
    }
    let v_w = unit_modulus(&CVec::from_iterator(wn, top.iter().take(wn).map(|z| z / last)));
    Ok(Some(RisOutcome { v_w, records, rank_gap: gap }))
}

fn min_sinr_ratio(m: &Model, d: &TransmitDesign, gamma: f64, noise: f64) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for k in 0..d.beamformers.len() {
        worst = worst.min(sinr(&m.chs, &m.ris, d, k, noise)? / gamma);
    }
    Ok(worst)
}

/// Top singular direction of `H_BR diag(a)` projected to unit modulus.
pub fn matched_phases(chs: &ChannelSet) -> CVec {
    let m = CMat::from_fn(chs.n_tx(), chs.n_ris(), |n, r| chs.h_bs_ris[(n, r)] * chs.steering_full[r]);
    let gram = m.adjoint() * &m;
    let v = herm_eig_desc(&gram).1.swap_remove(0);
    unit_modulus(&v)
}

/// Re-solves the pseudo-true point from the true parameter and assembles the bound.
pub fn evaluate_mcrb(cfg: &SystemConfig, chs: &ChannelSet, ris: &RisRealization, design: &TransmitDesign, st: &OptSettings) -> Result<BoundBlocks> {
    let chs = chs.partitioned(ris)?;
    let echo = EchoModel::new(cfg, &chs, ris)?;
    let eta0 = pseudo_true(&echo, design, &echo.eta_true(), &st.pseudo_true)?;
    assemble_blocks(&echo, design, &eta0, AForm::Generic)
}

/// Warm start for the faulty surface: phases and pseudo-true point.
#[derive(Debug, Clone)]
pub struct InitState {
    pub ris: RisRealization,
    pub eta0: ParamVector,
    pub design: TransmitDesign,
}

/// Takes the fault-free design, writes its phases as commanded phases of
/// `ris` and solves for the pseudo-true point of that deployment.
pub fn initialize(cfg: &SystemConfig, chs: &ChannelSet, ris: &RisRealization, ub: &BcdResult, st: &OptSettings) -> Result<InitState> {
    let mut ris = ris.clone();
    ris.set_commanded_phases(ub.ris.commanded_phases().clone())?;
    let chs = chs.partitioned(&ris)?;
    let echo = EchoModel::new(cfg, &chs, &ris)?;
    let eta0 = pseudo_true(&echo, &ub.design, &echo.eta_true(), &st.pseudo_true)?;
    Ok(InitState { ris, eta0, design: ub.design.clone() })
}

/// Alternating design from commanded phases in `ris` and initial pseudo-true `eta0`.
///
/// With a `reference` design (in watts) the start is the better of the
/// initial SDP design and the SINR-feasible design whose covariance
/// dominates the largest multiple of the reference covariance.
pub fn bcd(
    cfg: &SystemConfig,
    chs: &ChannelSet,
    ris: &RisRealization,
    eta0: &ParamVector,
    reference: Option<&TransmitDesign>,
    st: &OptSettings,
) -> Result<BcdResult> {
    cfg.validate()?;
    let a0 = eta0.alpha().norm();
    if !(a0 > 0.0) {
        return Err(Error::DegenerateDesign("zero pseudo-true coefficient".into()));
    }
    let mut scaling = Scaling { weights: [1.0, 1.0, a0, a0], info: 1.0, p_max: cfg.p_max_w };
    let ctx0 = Ctx {
        cfg,
        base_chs: chs,
        scaling,
        st,
        gamma: cfg.sinr_threshold,
        noise_norm: cfg.noise_comm_w / cfg.p_max_w,
    };
    let probe = ctx0.model(ris, eta0)?;
    let (_, bref) = probe.maps.eval(&(CMat::identity(cfg.n_tx, cfg.n_tx) / c(cfg.n_tx as f64)));
    scaling.info = bref.trace();
    if !(scaling.info.is_finite() && scaling.info > 0.0) {
        return Err(Error::DegenerateDesign("no information at the reference design".into()));
    }
    let ctx = Ctx { scaling, ..ctx0 };
    let model0 = ctx.model(ris, eta0)?;
    let mut design = ctx.init_sdp(&model0)?;
    let init_recovery = {
        let lifted = design.lifted();
        recover_rank_one(&lifted, &design.rs, &model0.hbar, ctx.noise_norm)?.2
    };
    let (mut model, mut tight) = ctx.candidate(ris, &design, eta0)?;
    if let Some(r) = reference {
        let target = Design::from_watts(r, cfg.p_max_w).r_hat();
        if let Some(d) = ctx.repair_sdp(&model0, &target)? {
            if let Ok((m, t)) = ctx.candidate(ris, &d, eta0) {
                if t.j < tight.j {
                    model = m;
                    tight = t;
                    design = d;
                }
            }
        }
    }
    let (mut model, mut design, mut tight, warm_steps) = if st.joint_warm_start {
        joint_warm_start(&ctx, model, design, tight)?
    } else {
        (model, design, tight, 0)
    };
    let mut objective_trace = vec![tight.j / scaling.info];
    let mut iterations = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5eed);
    let mut converged = false;
    let mut rank_gap = 0.0;
    let tol = ctx_tol(&ctx);

    for outer in 1..=st.max_outer {
        let j_prev = tight.j;
        let bf = beamforming_step(&ctx, &model, &design, &tight, &mut rng)?;
        design = bf.design;
        tight = bf.tight;
        if let Some(m) = bf.model {
            model = m;
        }

        let mut ris_accepted = false;
        let mut sca = Vec::new();
        let mut projected = f64::NAN;
        if let Some(out) = phase_step(&ctx, &model, &design, &tight)? {
            rank_gap = out.rank_gap;
            sca = out.records;
            let watts = design.to_watts(cfg.p_max_w);
            let v0 = model.ris.working_phases();
            let mut lam = 1.0;
            for step in 0..st.backtrack_steps.max(1) {
                let v = unit_modulus(&(&v0 * c(1.0 - lam) + &out.v_w * c(lam)));
                lam *= 0.5;
                let mut cand_ris = model.ris.clone();
                cand_ris.set_working_phases(&v)?;
                let ratio = min_sinr_ratio(&ctx.model(&cand_ris, &model.eta0)?, &watts, cfg.sinr_threshold, cfg.noise_comm_w)?;
                if step == 0 {
                    projected = ratio;
                }
                if ratio < 1.0 {
                    continue;
                }
                if let Ok((cand, t)) = ctx.candidate(&cand_ris, &design, &model.eta0) {
                    if t.j <= tight.j {
                        model = cand;
                        tight = t;
                        ris_accepted = true;
                        break;
                    }
                }
            }
        }
        let chain = sandwich_chain(&tight.blocks, &tight.c_t, &tight.d_t)?;
        let watts = design.to_watts(cfg.p_max_w);
        let min_sinr = min_sinr_ratio(&model, &watts, cfg.sinr_threshold, cfg.noise_comm_w)? * cfg.sinr_threshold;
        iterations.push(IterRecord {
            outer,
            objective: tight.j / scaling.info,
            tr_mcrb_run: tight.bound / scaling.info,
            min_sinr_db: sinr_db(min_sinr),
            bf_accepted: bf.accepted,
            ris_accepted,
            mm: bf.records,
            sca,
            rank_gap,
            projected_sinr_ratio: projected,
            sandwich: chain,
            sandwich_ok: sandwich_holds(&chain, 1e-9),
        });
        objective_trace.push(tight.j / scaling.info);
        let rel = (j_prev - tight.j) / j_prev;
        if rel < tol {
            converged = true;
            break;
        }
    }

    let final_design = design.to_watts(cfg.p_max_w);
    final_design.check(cfg.p_max_w * (1.0 + 1e-9))?;
    let blocks = evaluate_mcrb(cfg, chs, &model.ris, &final_design, st)?;
    Ok(BcdResult {
        tr_bound: blocks.trace(),
        design: final_design,
        ris: model.ris,
        eta_last: model.eta0,
        blocks,
        objective_trace,
        iterations,
        converged,
        rank_flag: rank_gap >= st.rank_tol,
        rank_gap,
        init_recovery,
        warm_steps,
        scaling,
    })
}

/// Fault-free design from matched phases.
pub fn bcd_perfect(cfg: &SystemConfig, chs: &ChannelSet, st: &OptSettings) -> Result<BcdResult> {
    let ris = RisRealization::perfect(matched_phases(chs))?;
    let chs = chs.partitioned(&ris)?;
    let eta = ParamVector::new(chs.target_aod.0, chs.target_aod.1, chs.alpha_target);
    bcd(cfg, &chs, &ris, &eta, None, st)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Proposed,
    Ub,
    Naive,
    Random,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Proposed, Scheme::Ub, Scheme::Naive, Scheme::Random];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Ub => "ub",
            Scheme::Naive => "naive",
            Scheme::Random => "random",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme '{s}'")))
    }
}

/// Bound and SINR audit of one scheme on one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: Scheme,
    /// `tr(CRB_φ)` for the fault-free benchmark, `tr(MCRB_φ)` otherwise.
    pub tr_bound: f64,
    pub bound: Matrix2<f64>,
    pub design: TransmitDesign,
    pub ris: RisRealization,
    pub sinr_db: Vec<f64>,
    pub sinr_ok: bool,
    pub bcd: Option<BcdResult>,
}

fn audit_sinr(cfg: &SystemConfig, chs: &ChannelSet, ris: &RisRealization, d: &TransmitDesign) -> Result<(Vec<f64>, bool)> {
    let chs = chs.partitioned(ris)?;
    let s: Vec<f64> = (0..cfg.n_users).map(|k| sinr(&chs, ris, d, k, cfg.noise_comm_w)).collect::<Result<_>>()?;
    let ok = s.iter().all(|x| *x >= cfg.sinr_threshold * (1.0 - 1e-6));
    Ok((s.iter().map(|x| sinr_db(*x)).collect(), ok))
}

/// Runs the requested schemes with common random numbers on one scenario.
pub fn baselines(sc: &Scenario, schemes: &[Scheme], st: &OptSettings) -> Result<Vec<SchemeResult>> {
    let cfg = &sc.config;
    let chs = &sc.channels;
    let ub = bcd_perfect(cfg, chs, st)?;
    let mut out = Vec::new();
    let mut proposed: Option<BcdResult> = None;
    let need_proposed = schemes.iter().any(|s| matches!(s, Scheme::Proposed | Scheme::Random));
    if need_proposed {
        let init = initialize(cfg, chs, &sc.ris, &ub, st)?;
        proposed = Some(bcd(cfg, chs, &init.ris, &init.eta0, Some(&init.design), st)?);
    }
    for &s in schemes {
        let r = match s {
            Scheme::Ub => {
                let crb = crb_phi(cfg, chs, &ub.ris, &ub.design)?;
                let (sinr_db, sinr_ok) = audit_sinr(cfg, chs, &ub.ris, &ub.design)?;
                SchemeResult { scheme: s, tr_bound: crb.trace(), bound: crb, design: ub.design.clone(), ris: ub.ris.clone(), sinr_db, sinr_ok, bcd: Some(ub.clone()) }
            }
            Scheme::Naive => {
                let mut ris = sc.ris.clone();
                ris.set_commanded_phases(ub.ris.commanded_phases().clone())?;
                let blocks = evaluate_mcrb(cfg, chs, &ris, &ub.design, st)?;
                let (sinr_db, sinr_ok) = audit_sinr(cfg, chs, &ris, &ub.design)?;
                SchemeResult { scheme: s, tr_bound: blocks.trace(), bound: blocks.mcrb_phi, design: ub.design.clone(), ris, sinr_db, sinr_ok, bcd: None }
            }
            Scheme::Proposed => {
                let p = proposed.clone().ok_or_else(|| Error::NumericalFailure("missing proposed run".into()))?;
                let (sinr_db, sinr_ok) = audit_sinr(cfg, chs, &p.ris, &p.design)?;
                SchemeResult { scheme: s, tr_bound: p.tr_bound, bound: p.blocks.mcrb_phi, design: p.design.clone(), ris: p.ris.clone(), sinr_db, sinr_ok, bcd: Some(p) }
            }
            Scheme::Random => {
                let p = proposed.as_ref().ok_or_else(|| Error::NumericalFailure("missing proposed run".into()))?;
                let mut ris = p.ris.clone();
                let mut rng = sc.streams().rng(Stream::RandomPhases);
                let wn = ris.working_idx().len();
                let v = CVec::from_fn(wn, |_, _| C64::from_polar(1.0, rng.random::<f64>() * 2.0 * std::f64::consts::PI));
                ris.set_working_phases(&v)?;
                let blocks = evaluate_mcrb(cfg, chs, &ris, &p.design, st)?;
                let (sinr_db, sinr_ok) = audit_sinr(cfg, chs, &ris, &p.design)?;
                SchemeResult { scheme: s, tr_bound: blocks.trace(), bound: blocks.mcrb_phi, design: p.design.clone(), ris, sinr_db, sinr_ok, bcd: None }
            }
        };
        out.push(r);
    }
    Ok(out)
}

/// Scaled copy helper used by tests and the harness.
pub fn design_from_normalized(beams: &[CVec], rs: &CMat, p: f64) -> TransmitDesign {
    Design { beams: beams.to_vec(), rs: rs.clone() }.to_watts(p)
}

/// Inverse of [`design_from_normalized`].
pub fn normalized_from_design(d: &TransmitDesign, p: f64) -> (Vec<CVec>, CMat) {
    let n = Design::from_watts(d, p);
    (n.beams, n.rs)
}
