//! System configuration, node geometry, fault realizations and channels.
//!
//! Conventions used throughout the crate:
//!
//! * RIS elements are indexed `r = r_y + R_y·r_z` (y fastest), zero based.
//! * The RIS lies in the y-z plane facing +x. A direction `u` maps to
//!   elevation `asin(u_z)` and azimuth `atan2(u_y, u_x)`.
//! * A phase vector `v` acts as `Θ = diag(conj v)`, so a reflected column is
//!   `H_BR diag(v) a`.
//! * Per-user cascaded channels are stored as `R×N_t` matrices
//!   `H_k = diag(h_kᴴ) H_BRᴴ`, so `h̄_k = vᴴ H_k` and the working/faulty
//!   splits are row subsets.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::c;
use crate::{CMat, CVec, Error, Result, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Position = [f64; 3];

fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// All scalar parameters and node positions of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub r_y: usize,
    pub r_z: usize,
    pub n_faulty: usize,
    pub n_users: usize,
    pub carrier_hz: f64,
    pub elem_spacing_y_m: f64,
    pub elem_spacing_z_m: f64,
    pub p_max_w: f64,
    pub noise_sense_w: f64,
    pub noise_comm_w: f64,
    /// Linear SINR threshold.
    pub sinr_threshold: f64,
    /// Target radar cross section (linear).
    pub rcs: f64,
    /// Scatterer radar cross section (linear).
    pub scatter_rcs: f64,
    pub n_slots: usize,
    pub tol: f64,
    pub bs_pos: Position,
    pub ris_pos: Position,
    pub target_pos: Position,
    pub scatter_pos: Position,
    pub user_center: Position,
    pub user_radius_m: f64,
    pub rician_k_bs_ris: f64,
    pub rician_k_ris_ue: f64,
    pub pathloss_ref_db: f64,
    pub pathloss_exp_bs_ris: f64,
    pub pathloss_exp_ris_ue: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::InvalidArgument(format!("unknown profile '{s}'"))),
        }
    }
}

impl SystemConfig {
    /// Full-size system: 32 antennas, 15×10 RIS, 40 faulty elements.
    pub fn paper() -> Self {
        let carrier_hz = 28e9;
        let half = 0.5 * SPEED_OF_LIGHT / carrier_hz;
        SystemConfig {
            n_tx: 32,
            n_rx: 32,
            r_y: 15,
            r_z: 10,
            n_faulty: 40,
            n_users: 4,
            carrier_hz,
            elem_spacing_y_m: half,
            elem_spacing_z_m: half,
            p_max_w: db_to_lin(33.0 - 30.0),
            noise_sense_w: db_to_lin(-110.0 - 30.0),
            noise_comm_w: db_to_lin(-110.0 - 30.0),
            sinr_threshold: db_to_lin(10.0),
            rcs: db_to_lin(1.0),
            scatter_rcs: db_to_lin(1.0),
            n_slots: 64,
            tol: 1e-5,
            bs_pos: [15.0, 0.0, 10.0],
            ris_pos: [0.0, 40.0, 5.0],
            target_pos: [20.0, 55.0, 1.0],
            scatter_pos: [20.0, 30.0, 1.0],
            user_center: [15.0, 40.0, 1.0],
            user_radius_m: 8.0,
            rician_k_bs_ris: 10.0,
            rician_k_ris_ue: 1.0,
            pathloss_ref_db: -30.0,
            pathloss_exp_bs_ris: 2.0,
            pathloss_exp_ris_ue: 2.2,
            rng_seed: 1,
        }
    }

    /// Reduced system that keeps every SDP block small.
    pub fn desk() -> Self {
        SystemConfig {
            n_tx: 8,
            n_rx: 8,
            r_y: 4,
            r_z: 4,
            n_faulty: 4,
            n_users: 2,
            p_max_w: db_to_lin(20.0 - 30.0),
            ..Self::paper()
        }
    }

    pub fn from_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn n_ris(&self) -> usize {
        self.r_y * self.r_z
    }

    pub fn n_working(&self) -> usize {
        self.n_ris() - self.n_faulty
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength_m()
    }

    /// Grid coordinates `(r_y, r_z)` of element `r`.
    pub fn grid_coords(&self, r: usize) -> (usize, usize) {
        (r % self.r_y, r / self.r_y)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_tx == 0 || self.n_rx == 0 || self.r_y == 0 || self.r_z == 0 || self.n_users == 0 || self.n_slots == 0 {
            return bad("antenna, element, user and slot counts must be positive");
        }
        if self.n_faulty > self.n_ris() {
            return bad("n_faulty exceeds the number of RIS elements");
        }
        let positive = [
            self.carrier_hz,
            self.elem_spacing_y_m,
            self.elem_spacing_z_m,
            self.p_max_w,
            self.noise_sense_w,
            self.noise_comm_w,
            self.sinr_threshold,
            self.rcs,
            self.scatter_rcs,
            self.tol,
            self.user_radius_m,
        ];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return bad("powers, noise variances, spacings, thresholds and radii must be positive and finite");
        }
        if !(self.rician_k_bs_ris >= 0.0 && self.rician_k_ris_ue >= 0.0) {
            return bad("Rician factors must be non-negative");
        }
        let pts = [self.bs_pos, self.ris_pos, self.target_pos, self.scatter_pos, self.user_center];
        if pts.iter().flatten().any(|x| !x.is_finite()) {
            return bad("positions must be finite");
        }
        for p in [self.bs_pos, self.target_pos, self.scatter_pos] {
            if distance(&self.ris_pos, &p) == 0.0 {
                return bad("nodes may not coincide with the RIS");
            }
        }
        Ok(())
    }
}

pub fn distance(a: &Position, b: &Position) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn unit(from: &Position, to: &Position) -> [f64; 3] {
    let d = distance(from, to);
    [(to[0] - from[0]) / d, (to[1] - from[1]) / d, (to[2] - from[2]) / d]
}

/// Elevation and azimuth of `to` seen from `from` in the RIS frame.
pub fn departure_angles(from: &Position, to: &Position) -> (f64, f64) {
    let u = unit(from, to);
    (u[2].clamp(-1.0, 1.0).asin(), u[1].atan2(u[0]))
}

/// RIS steering vector, optionally restricted to `subset` (in the given order).
pub fn steering_vector(cfg: &SystemConfig, elev: f64, azim: f64, subset: Option<&[usize]>) -> Result<CVec> {
    if !elev.is_finite() || !azim.is_finite() {
        return Err(Error::InvalidArgument("non-finite angle".into()));
    }
    let n = cfg.n_ris();
    let ky = cfg.wavenumber() * cfg.elem_spacing_y_m * elev.cos() * azim.sin();
    let kz = cfg.wavenumber() * cfg.elem_spacing_z_m * elev.sin();
    let entry = |r: usize| {
        let (y, z) = cfg.grid_coords(r);
        C64::from_polar(1.0, -(ky * y as f64 + kz * z as f64))
    };
    match subset {
        None => Ok(CVec::from_fn(n, |r, _| entry(r))),
        Some(idx) => {
            if let Some(&bad) = idx.iter().find(|&&r| r >= n) {
                return Err(Error::InvalidArgument(format!("subset index {bad} out of range (R = {n})")));
            }
            Ok(CVec::from_iterator(idx.len(), idx.iter().map(|&r| entry(r))))
        }
    }
}

/// Half-wavelength ULA along x at the BS toward unit direction `u`.
fn bs_steering(n: usize, u: &[f64; 3]) -> CVec {
    CVec::from_fn(n, |i, _| C64::from_polar(1.0, -PI * i as f64 * u[0]))
}

/// Named sub-streams of the per-trial generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Faults = 1,
    Channels = 2,
    Users = 3,
    RandomPhases = 4,
    Oracle = 5,
}

/// Seedable, splittable generator: one ChaCha8 key per `(seed, trial)` and an
/// independent stream per purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    pub seed: u64,
    pub trial: u64,
}

impl SeedStreams {
    pub fn new(seed: u64, trial: u64) -> Self {
        SeedStreams { seed, trial }
    }

    pub fn rng(&self, s: Stream) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.trial.to_le_bytes());
        let mut r = ChaCha8Rng::from_seed(key);
        r.set_stream(s as u64);
        r
    }
}

/// Fault partition, fixed faulty coefficients and commanded phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisRealization {
    faulty_idx: Vec<usize>,
    working_idx: Vec<usize>,
    faulty_coeffs: CVec,
    commanded_phases: CVec,
}

impl RisRealization {
    /// Builds a realization; `faulty_idx` must be strictly increasing.
    pub fn new(n_ris: usize, faulty_idx: Vec<usize>, faulty_coeffs: CVec, commanded_phases: CVec) -> Result<Self> {
        if faulty_idx.windows(2).any(|w| w[0] >= w[1]) || faulty_idx.last().is_some_and(|&l| l >= n_ris) {
            return Err(Error::InvalidArgument("faulty indices must be increasing and in range".into()));
        }
        if faulty_coeffs.len() != faulty_idx.len() || commanded_phases.len() != n_ris {
            return Err(Error::InvalidArgument("coefficient lengths do not match the partition".into()));
        }
        if faulty_coeffs.iter().any(|z| !(z.norm() <= 1.0 + 1e-12)) {
            return Err(Error::InvalidArgument("faulty coefficient modulus exceeds 1".into()));
        }
        if commanded_phases.iter().any(|z| (z.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidArgument("commanded phases must be unit modulus".into()));
        }
        let working_idx = (0..n_ris).filter(|r| faulty_idx.binary_search(r).is_err()).collect();
        Ok(RisRealization { faulty_idx, working_idx, faulty_coeffs, commanded_phases })
    }

    /// Fault-free surface with the given commanded phases.
    pub fn perfect(commanded_phases: CVec) -> Result<Self> {
        let n = commanded_phases.len();
        Self::new(n, Vec::new(), CVec::zeros(0), commanded_phases)
    }

    pub fn n_ris(&self) -> usize {
        self.commanded_phases.len()
    }

    pub fn faulty_idx(&self) -> &[usize] {
        &self.faulty_idx
    }

    pub fn working_idx(&self) -> &[usize] {
        &self.working_idx
    }

    pub fn faulty_coeffs(&self) -> &CVec {
        &self.faulty_coeffs
    }

    pub fn commanded_phases(&self) -> &CVec {
        &self.commanded_phases
    }

    /// Commanded phases at the working positions.
    pub fn working_phases(&self) -> CVec {
        CVec::from_iterator(self.working_idx.len(), self.working_idx.iter().map(|&r| self.commanded_phases[r]))
    }

    pub fn set_commanded_phases(&mut self, v: CVec) -> Result<()> {
        if v.len() != self.n_ris() || v.iter().any(|z| (z.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidArgument("commanded phases must be unit modulus of length R".into()));
        }
        self.commanded_phases = v;
        Ok(())
    }

    /// Overwrites the working entries of the commanded phases.
    pub fn set_working_phases(&mut self, v_w: &CVec) -> Result<()> {
        if v_w.len() != self.working_idx.len() || v_w.iter().any(|z| (z.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidArgument("working phases must be unit modulus of length W".into()));
        }
        for (k, &r) in self.working_idx.iter().enumerate() {
            self.commanded_phases[r] = v_w[k];
        }
        Ok(())
    }

    /// Coefficients actually applied: working phases plus faulty coefficients.
    pub fn effective_coeffs(&self) -> CVec {
        let mut v = self.commanded_phases.clone();
        for (k, &r) in self.faulty_idx.iter().enumerate() {
            v[r] = self.faulty_coeffs[k];
        }
        v
    }
}

/// Uniform random fault subset with `β ~ U(0,1)`, `θ ~ U(0, 2π)`.
pub fn sample_fault_realization(cfg: &SystemConfig, streams: &SeedStreams) -> Result<RisRealization> {
    let n = cfg.n_ris();
    if cfg.n_faulty > n {
        return Err(Error::InvalidConfig("n_faulty exceeds the number of RIS elements".into()));
    }
    let mut rng = streams.rng(Stream::Faults);
    let mut idx = index::sample(&mut rng, n, cfg.n_faulty).into_vec();
    idx.sort_unstable();
    let coeffs = CVec::from_fn(idx.len(), |_, _| {
        let beta: f64 = rng.random();
        let theta: f64 = rng.random::<f64>() * 2.0 * PI;
        C64::from_polar(beta, theta)
    });
    RisRealization::new(n, idx, coeffs, CVec::from_element(n, c(1.0)))
}

/// Sampled and derived channels of one scenario realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    /// `H_BR`, `N_t×R`.
    pub h_bs_ris: CMat,
    /// `h_k`, length `R`.
    pub h_ris_ue: Vec<CVec>,
    /// `H_k = diag(h_kᴴ) H_BRᴴ`, `R×N_t`.
    pub h_cascade_ue: Vec<CMat>,
    /// Working rows of `H_k`, `W×N_t`.
    pub h_cascade_ue_working: Vec<CMat>,
    /// Faulty rows of `H_k`, `F×N_t`.
    pub h_cascade_ue_faulty: Vec<CMat>,
    /// `v_Fᴴ H_{F,k}` stored as a length-`N_t` vector (a row).
    pub h_faulty_ue: Vec<CVec>,
    pub steering_full: CVec,
    pub steering_working: CVec,
    pub steering_scatter_faulty: CVec,
    pub steering_scatter_full: CVec,
    pub target_aod: (f64, f64),
    pub scatter_aod: (f64, f64),
    pub alpha_target: C64,
    pub alpha_scatter: C64,
    /// `G_W = diag(a_Wᴴ) H_{BR,W}ᴴ`, `W×N_t`.
    pub g_working: CMat,
    pub h_bs_ris_working: CMat,
    pub h_bs_ris_faulty: CMat,
    pub user_positions: Vec<Position>,
}

fn select_cols(m: &CMat, idx: &[usize]) -> CMat {
    CMat::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

fn select_rows(m: &CMat, idx: &[usize]) -> CMat {
    CMat::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

fn select(v: &CVec, idx: &[usize]) -> CVec {
    CVec::from_iterator(idx.len(), idx.iter().map(|&r| v[r]))
}

fn cn01(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn rician(los: &CMat, k: f64, pl: f64, rng: &mut ChaCha8Rng) -> CMat {
    let (a, b) = ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt());
    let nlos = CMat::from_fn(los.nrows(), los.ncols(), |_, _| cn01(rng));
    (los * c(a) + nlos * c(b)) * c(pl.sqrt())
}

/// Echo amplitude of a point reflector over the two-hop BS→RIS→point path.
pub fn reflection_amplitude(cfg: &SystemConfig, point: &Position, rcs: f64) -> f64 {
    let d = distance(&cfg.bs_pos, &cfg.ris_pos) + distance(&cfg.ris_pos, point);
    let lam = cfg.wavelength_m();
    (cfg.n_tx as f64 * cfg.n_rx as f64 * lam * lam * rcs / (4.0 * PI.powi(3) * d.powi(4))).sqrt()
}

fn pathloss(cfg: &SystemConfig, d: f64, exp: f64) -> f64 {
    db_to_lin(cfg.pathloss_ref_db) * d.powf(-exp)
}

/// Draws Rician channels and user positions and derives every split for `ris`.
pub fn sample_channels(cfg: &SystemConfig, ris: &RisRealization, streams: &SeedStreams) -> Result<ChannelSet> {
    cfg.validate()?;
    let (nt, n) = (cfg.n_tx, cfg.n_ris());
    if ris.n_ris() != n {
        return Err(Error::InvalidArgument("realization size does not match config".into()));
    }
    let mut users_rng = streams.rng(Stream::Users);
    let user_positions: Vec<Position> = (0..cfg.n_users)
        .map(|_| {
            let rad = cfg.user_radius_m * users_rng.random::<f64>().sqrt();
            let ang = 2.0 * PI * users_rng.random::<f64>();
            let c0 = cfg.user_center;
            [c0[0] + rad * ang.cos(), c0[1] + rad * ang.sin(), c0[2]]
        })
        .collect();

    let mut rng = streams.rng(Stream::Channels);
    let (e, a) = departure_angles(&cfg.ris_pos, &cfg.bs_pos);
    let a_ris_bs = steering_vector(cfg, e, a, None)?;
    let a_bs = bs_steering(nt, &unit(&cfg.bs_pos, &cfg.ris_pos));
    let los_br = &a_bs * a_ris_bs.adjoint();
    let pl_br = pathloss(cfg, distance(&cfg.bs_pos, &cfg.ris_pos), cfg.pathloss_exp_bs_ris);
    let h_bs_ris = rician(&los_br, cfg.rician_k_bs_ris, pl_br, &mut rng);

    let mut h_ris_ue = Vec::with_capacity(cfg.n_users);
    for p in &user_positions {
        let (e, a) = departure_angles(&cfg.ris_pos, p);
        let los = steering_vector(cfg, e, a, None)?;
        let pl = pathloss(cfg, distance(&cfg.ris_pos, p), cfg.pathloss_exp_ris_ue);
        let h = rician(&CMat::from_column_slice(n, 1, los.as_slice()), cfg.rician_k_ris_ue, pl, &mut rng);
        h_ris_ue.push(h.column(0).into_owned());
    }

    let target_aod = departure_angles(&cfg.ris_pos, &cfg.target_pos);
    let scatter_aod = departure_angles(&cfg.ris_pos, &cfg.scatter_pos);
    let mut chs = ChannelSet {
        h_cascade_ue: h_ris_ue.iter().map(|h| cascade(&h_bs_ris, h)).collect(),
        h_bs_ris,
        h_ris_ue,
        h_cascade_ue_working: Vec::new(),
        h_cascade_ue_faulty: Vec::new(),
        h_faulty_ue: Vec::new(),
        steering_full: steering_vector(cfg, target_aod.0, target_aod.1, None)?,
        steering_working: CVec::zeros(0),
        steering_scatter_faulty: CVec::zeros(0),
        steering_scatter_full: steering_vector(cfg, scatter_aod.0, scatter_aod.1, None)?,
        target_aod,
        scatter_aod,
        alpha_target: c(reflection_amplitude(cfg, &cfg.target_pos, cfg.rcs)),
        alpha_scatter: c(reflection_amplitude(cfg, &cfg.scatter_pos, cfg.scatter_rcs)),
        g_working: CMat::zeros(0, nt),
        h_bs_ris_working: CMat::zeros(nt, 0),
        h_bs_ris_faulty: CMat::zeros(nt, 0),
        user_positions,
    };
    chs.repartition(ris)?;
    Ok(chs)
}

fn cascade(h_br: &CMat, h: &CVec) -> CMat {
    CMat::from_fn(h_br.ncols(), h_br.nrows(), |r, n| (h[r] * h_br[(n, r)]).conj())
}

impl ChannelSet {
    pub fn n_tx(&self) -> usize {
        self.h_bs_ris.nrows()
    }

    pub fn n_ris(&self) -> usize {
        self.h_bs_ris.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.h_ris_ue.len()
    }

    /// Re-derives every working/faulty split for another realization of the
    /// same surface, keeping the sampled base channels.
    pub fn repartition(&mut self, ris: &RisRealization) -> Result<()> {
        if ris.n_ris() != self.n_ris() {
            return Err(Error::InvalidArgument("realization size does not match channels".into()));
        }
        let (sw, sf) = (ris.working_idx(), ris.faulty_idx());
        self.h_cascade_ue_working = self.h_cascade_ue.iter().map(|h| select_rows(h, sw)).collect();
        self.h_cascade_ue_faulty = self.h_cascade_ue.iter().map(|h| select_rows(h, sf)).collect();
        let vf = ris.faulty_coeffs();
        self.h_faulty_ue = self
            .h_cascade_ue_faulty
            .iter()
            .map(|h| (vf.adjoint() * h).transpose())
            .collect();
        self.steering_working = select(&self.steering_full, sw);
        self.steering_scatter_faulty = select(&self.steering_scatter_full, sf);
        self.h_bs_ris_working = select_cols(&self.h_bs_ris, sw);
        self.h_bs_ris_faulty = select_cols(&self.h_bs_ris, sf);
        let aw = &self.steering_working;
        self.g_working = CMat::from_fn(sw.len(), self.n_tx(), |w, n| (aw[w] * self.h_bs_ris_working[(n, w)]).conj());
        Ok(())
    }

    /// Copy re-derived for `ris`.
    pub fn partitioned(&self, ris: &RisRealization) -> Result<ChannelSet> {
        let mut out = self.clone();
        out.repartition(ris)?;
        Ok(out)
    }

    fn check(&self, ris: &RisRealization) -> Result<()> {
        if self.steering_working.len() != ris.working_idx().len() || self.h_faulty_ue.len() != self.n_users() {
            return Err(Error::InvalidArgument("channel splits do not match the realization".into()));
        }
        Ok(())
    }
}

/// `h̄_k = v_Wᴴ H_{W,k} + v_Fᴴ H_{F,k}` as a length-`N_t` vector (a row).
pub fn cascaded_comm_channel(chs: &ChannelSet, ris: &RisRealization, k: usize) -> Result<CVec> {
    if k >= chs.n_users() {
        return Err(Error::InvalidArgument(format!("user index {k} out of range")));
    }
    chs.check(ris)?;
    let vw = ris.working_phases();
    let row = vw.adjoint() * &chs.h_cascade_ue_working[k];
    Ok(row.transpose() + &chs.h_faulty_ue[k])
}

/// Column `H_BR diag(coeffs) a` restricted to `idx`.
fn reflected(h_br: &CMat, coeffs: &CVec, a: &CVec) -> CVec {
    h_br * coeffs.component_mul(a)
}

/// `(Ω̄_W, Ω̄_F, Ḡ)` of the true echo model.
pub fn sensing_cascade(chs: &ChannelSet, ris: &RisRealization) -> Result<(CMat, CMat, CMat)> {
    chs.check(ris)?;
    let omega_w = omega_working_vector_form(chs, &ris.working_phases());
    let cf = reflected(&chs.h_bs_ris_faulty, ris.faulty_coeffs(), &chs.steering_scatter_faulty);
    let omega_f = &cf * cf.adjoint();
    let g_bar = &omega_w * chs.alpha_target + &omega_f * chs.alpha_scatter;
    Ok((omega_w, omega_f, g_bar))
}

/// `Ω̄_W = G_Wᴴ v_W v_Wᴴ G_W`.
pub fn omega_working_vector_form(chs: &ChannelSet, v_w: &CVec) -> CMat {
    let cw = chs.g_working.adjoint() * v_w;
    &cw * cw.adjoint()
}

/// `Ω̄_W = H_{BR,W} Θ_Wᴴ a_W a_Wᴴ Θ_W H_{BR,W}ᴴ` with explicit diagonal matrices.
pub fn omega_working_matrix_form(chs: &ChannelSet, v_w: &CVec) -> CMat {
    let theta = CMat::from_diagonal(&v_w.map(|z| z.conj()));
    let trm = &chs.steering_working * chs.steering_working.adjoint();
    &chs.h_bs_ris_working * theta.adjoint() * trm * &theta * chs.h_bs_ris_working.adjoint()
}

/// One fully built scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: SystemConfig,
    pub trial: u64,
    pub ris: RisRealization,
    pub channels: ChannelSet,
}

impl Scenario {
    pub fn generate(cfg: &SystemConfig, trial: u64) -> Result<Self> {
        cfg.validate()?;
        let streams = SeedStreams::new(cfg.rng_seed, trial);
        let ris = sample_fault_realization(cfg, &streams)?;
        let channels = sample_channels(cfg, &ris, &streams)?;
        Ok(Scenario { config: cfg.clone(), trial, ris, channels })
    }

    pub fn streams(&self) -> SeedStreams {
        SeedStreams::new(self.config.rng_seed, self.trial)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// Reassembles a full `N_t×R` matrix from its working/faulty column splits.
pub fn merge_cols(working: &CMat, faulty: &CMat, ris: &RisRealization) -> CMat {
    let mut m = DMatrix::zeros(working.nrows(), ris.n_ris());
    for (k, &r) in ris.working_idx().iter().enumerate() {
        m.set_column(r, &working.column(k));
    }
    for (k, &r) in ris.faulty_idx().iter().enumerate() {
        m.set_column(r, &faulty.column(k));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn desk(f: usize) -> SystemConfig {
        SystemConfig { n_faulty: f, ..SystemConfig::desk() }
    }

    fn build(cfg: &SystemConfig, trial: u64) -> Scenario {
        Scenario::generate(cfg, trial).unwrap()
    }

    fn rel(a: &CMat, b: &CMat) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn wavenumber_times_wavelength_is_two_pi() {
        let cfg = SystemConfig::paper();
        assert!((cfg.wavenumber() * cfg.wavelength_m() - 2.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn zero_angles_give_all_ones() {
        let a = steering_vector(&SystemConfig::paper(), 0.0, 0.0, None).unwrap();
        assert_eq!(a.len(), 150);
        assert!(a.iter().all(|z| *z == c(1.0)));
    }

    #[test]
    fn target_geometry_and_first_entry() {
        let cfg = SystemConfig::paper();
        let (e, a) = departure_angles(&cfg.ris_pos, &cfg.target_pos);
        assert!((e.to_degrees() + 9.09).abs() < 0.01);
        assert!((a.to_degrees() - 36.87).abs() < 0.01);
        let s = steering_vector(&cfg, e, a, None).unwrap();
        assert_eq!(s[0], c(1.0));
        assert!(s.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn vertical_limit_depends_on_rz_only() {
        let cfg = SystemConfig::desk();
        let s = steering_vector(&cfg, PI / 2.0, 0.7, None).unwrap();
        for r in 0..cfg.n_ris() {
            let (_, z) = cfg.grid_coords(r);
            let expect = C64::from_polar(1.0, -PI * z as f64);
            assert!((s[r] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn subset_out_of_range_is_rejected() {
        let cfg = SystemConfig::desk();
        assert!(matches!(steering_vector(&cfg, 0.1, 0.2, Some(&[0, 16])), Err(Error::InvalidArgument(_))));
        let s = steering_vector(&cfg, 0.1, 0.2, Some(&[3, 1])).unwrap();
        let full = steering_vector(&cfg, 0.1, 0.2, None).unwrap();
        assert_eq!(s[0], full[3]);
        assert_eq!(s[1], full[1]);
    }

    #[test]
    fn fault_sampling_edge_cases() {
        let s = SeedStreams::new(3, 0);
        let r = sample_fault_realization(&desk(0), &s).unwrap();
        assert!(r.faulty_idx().is_empty() && r.working_idx().len() == 16);
        let r = sample_fault_realization(&desk(16), &s).unwrap();
        assert!(r.working_idx().is_empty());
        let chs = sample_channels(&desk(16), &r, &s).unwrap();
        assert_eq!(chs.g_working.nrows(), 0);
        let cfg = SystemConfig::paper();
        let a = sample_fault_realization(&cfg, &SeedStreams::new(11, 2)).unwrap();
        let b = sample_fault_realization(&cfg, &SeedStreams::new(11, 2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.faulty_idx().len(), 40);
        assert!(a.faulty_coeffs().iter().all(|z| z.norm() <= 1.0));
    }

    #[test]
    fn same_seed_gives_identical_channels() {
        let cfg = desk(4);
        let a = build(&cfg, 5);
        let b = build(&cfg, 5);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_ne!(a.channels.h_bs_ris, build(&cfg, 6).channels.h_bs_ris);
        let back = Scenario::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn fault_stream_is_independent_of_channel_stream() {
        let cfg4 = desk(4);
        let cfg8 = desk(8);
        let a = build(&cfg4, 1);
        let b = build(&cfg8, 1);
        assert_eq!(a.channels.h_bs_ris, b.channels.h_bs_ris);
        assert_eq!(a.channels.user_positions, b.channels.user_positions);
    }

    #[test]
    fn large_k_factor_gives_line_of_sight() {
        let cfg = SystemConfig { rician_k_bs_ris: 1e12, ..desk(0) };
        let sc = build(&cfg, 0);
        let (e, a) = departure_angles(&cfg.ris_pos, &cfg.bs_pos);
        let los = bs_steering(cfg.n_tx, &unit(&cfg.bs_pos, &cfg.ris_pos)) * steering_vector(&cfg, e, a, None).unwrap().adjoint();
        let pl = pathloss(&cfg, distance(&cfg.bs_pos, &cfg.ris_pos), cfg.pathloss_exp_bs_ris);
        assert!(rel(&sc.channels.h_bs_ris, &(los * c(pl.sqrt()))) < 1e-5);
    }

    #[test]
    fn k_factor_power_ratio() {
        let los = CMat::from_element(1, 1, c(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k: f64 = 10.0;
        let n = 10_000;
        let mean_los = (k / (k + 1.0)).sqrt();
        let mut nlos_pow: f64 = 0.0;
        for _ in 0..n {
            let h = rician(&los, k, 1.0, &mut rng)[(0, 0)];
            nlos_pow += (h - c(mean_los)).norm_sqr();
        }
        let ratio = mean_los * mean_los / (nlos_pow / n as f64);
        assert!((ratio / k - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn alpha_matches_closed_form() {
        let cfg = SystemConfig::paper();
        let sc = build(&cfg, 0);
        let d = distance(&cfg.bs_pos, &cfg.ris_pos) + distance(&cfg.ris_pos, &cfg.target_pos);
        let lam = SPEED_OF_LIGHT / 28e9;
        let want = 32.0 * 32.0 * lam * lam * 10f64.powf(0.1) / (4.0 * PI * PI * PI * d.powi(4));
        assert!((sc.channels.alpha_target.norm_sqr() / want - 1.0).abs() < 1e-12);
        assert_eq!(sc.channels.alpha_target.im, 0.0);
        let (_, az_s) = sc.channels.scatter_aod;
        assert!((az_s - sc.channels.target_aod.1).abs().to_degrees() >= 20.0);
    }

    #[test]
    fn comm_channel_without_faults_is_plain_cascade() {
        let sc = build(&desk(0), 2);
        let v = sc.ris.commanded_phases().clone();
        for k in 0..2 {
            let h = cascaded_comm_channel(&sc.channels, &sc.ris, k).unwrap();
            let direct = (v.adjoint() * &sc.channels.h_cascade_ue[k]).transpose();
            assert!((&h - &direct).norm() < 1e-14 * direct.norm());
        }
        assert!(cascaded_comm_channel(&sc.channels, &sc.ris, 2).is_err());
    }

    #[test]
    fn comm_channel_matches_per_path_sum() {
        let sc = build(&desk(5), 4);
        let chs = &sc.channels;
        let eff = sc.ris.effective_coeffs();
        for k in 0..2 {
            let h = cascaded_comm_channel(chs, &sc.ris, k).unwrap();
            for n in 0..chs.n_tx() {
                let mut s = c(0.0);
                for r in 0..chs.n_ris() {
                    s += eff[r].conj() * chs.h_ris_ue[k][r].conj() * chs.h_bs_ris[(n, r)].conj();
                }
                assert!((h[n] - s).norm() < 1e-12 * s.norm().max(1e-30));
            }
        }
    }

    #[test]
    fn all_faulty_comm_channel_uses_faulty_part_only() {
        let sc = build(&desk(16), 4);
        let h = cascaded_comm_channel(&sc.channels, &sc.ris, 0).unwrap();
        assert_eq!(h, sc.channels.h_faulty_ue[0]);
    }

    #[test]
    fn perfect_surface_echo_is_target_only() {
        let sc = build(&desk(0), 3);
        let (w, f, g) = sensing_cascade(&sc.channels, &sc.ris).unwrap();
        assert_eq!(f.norm(), 0.0);
        assert!((g - w * sc.channels.alpha_target).norm() == 0.0);
    }

    #[test]
    fn column_splits_reassemble() {
        let sc = build(&desk(6), 8);
        let chs = &sc.channels;
        assert_eq!(merge_cols(&chs.h_bs_ris_working, &chs.h_bs_ris_faulty, &sc.ris), chs.h_bs_ris);
        for k in 0..2 {
            let t = merge_cols(&chs.h_cascade_ue_working[k].transpose(), &chs.h_cascade_ue_faulty[k].transpose(), &sc.ris);
            assert_eq!(t.transpose(), chs.h_cascade_ue[k]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn steering_is_unit_modulus(e in -1.5f64..1.5, a in -3.14f64..3.14) {
            let s = steering_vector(&SystemConfig::desk(), e, a, None).unwrap();
            prop_assert!(s.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }

        #[test]
        fn omega_forms_agree(seed in 0u64..1000, f in 0usize..8, psi in 0.0f64..6.28) {
            let mut sc = build(&SystemConfig { rng_seed: seed, ..desk(f) }, 0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vw = CVec::from_fn(sc.ris.working_idx().len(), |_, _| C64::from_polar(1.0, rng.random::<f64>() * 6.28));
            sc.ris.set_working_phases(&vw).unwrap();
            let a = omega_working_vector_form(&sc.channels, &vw);
            let b = omega_working_matrix_form(&sc.channels, &vw);
            prop_assert!(rel(&a, &b) < 1e-10);
            let rot = omega_working_vector_form(&sc.channels, &(&vw * C64::from_polar(1.0, psi)));
            prop_assert!(rel(&rot, &a) < 1e-12);
            let (_, _, g) = sensing_cascade(&sc.channels, &sc.ris).unwrap();
            prop_assert!((&g - g.adjoint()).norm() <= 1e-12 * g.norm());
        }
    }
}
