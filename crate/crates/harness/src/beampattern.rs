//! Transmit beampattern seen through the RIS.

use faultyris::scenario::{steering_vector, ChannelSet, RisRealization, SystemConfig};
use faultyris::signal::TransmitDesign;
use faultyris::{CMat, CVec};
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

/// Gain on an elevation × azimuth grid; `gain[i][j]` is at
/// `(elev_deg[i], azim_deg[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeampatternGrid {
    pub elev_deg: Vec<f64>,
    pub azim_deg: Vec<f64>,
    pub gain: Vec<Vec<f64>>,
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(HarnessError::Invalid(format!("bad grid [{lo}, {hi}] with {n} points")));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

/// `bᴴ R_x b` with `b = H_BR diag(θ_eff) a(φ)`; small negative round-off is
/// clamped to zero.
pub fn gain_at(cfg: &SystemConfig, h_eff: &CMat, rx: &CMat, elev: f64, azim: f64) -> Result<f64> {
    let a = steering_vector(cfg, elev, azim, None)?;
    let b: CVec = h_eff * a;
    Ok((b.adjoint() * rx * &b)[(0, 0)].re.max(0.0))
}

pub fn beampattern(
    cfg: &SystemConfig,
    chs: &ChannelSet,
    ris: &RisRealization,
    design: &TransmitDesign,
    elev_deg: &[f64],
    azim_deg: &[f64],
) -> Result<BeampatternGrid> {
    let eff = ris.effective_coeffs();
    if eff.len() != chs.n_ris() {
        return Err(HarnessError::Invalid(format!("RIS has {} elements, channel {}", eff.len(), chs.n_ris())));
    }
    let h_eff = CMat::from_fn(chs.n_tx(), chs.n_ris(), |n, r| chs.h_bs_ris[(n, r)] * eff[r]);
    let rx = design.tx_cov();
    let gain = elev_deg
        .iter()
        .map(|e| azim_deg.iter().map(|a| gain_at(cfg, &h_eff, &rx, e.to_radians(), a.to_radians())).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(BeampatternGrid { elev_deg: elev_deg.to_vec(), azim_deg: azim_deg.to_vec(), gain })
}

impl BeampatternGrid {
    /// Grid indices and value of the largest gain.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (i, row) in self.gain.iter().enumerate() {
            for (j, &g) in row.iter().enumerate() {
                if g > best.2 {
                    best = (i, j, g);
                }
            }
        }
        best
    }

    /// Blank-line separated blocks of `elev azim gain`, as read by `splot`.
    pub fn to_gnuplot(&self) -> String {
        let mut s = String::from("# elev_deg azim_deg gain\n");
        for (i, row) in self.gain.iter().enumerate() {
            for (j, g) in row.iter().enumerate() {
                s.push_str(&format!("{} {} {:.9e}\n", self.elev_deg[i], self.azim_deg[j], g));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use faultyris::optimizer::matched_phases;
    use faultyris::scenario::Scenario;
    use faultyris::C64;

    fn nearest(grid: &[f64], x: f64) -> usize {
        (0..grid.len()).min_by(|&a, &b| (grid[a] - x).abs().total_cmp(&(grid[b] - x).abs())).unwrap()
    }

    #[test]
    fn matched_design_peaks_at_the_target() {
        let cfg = SystemConfig { n_faulty: 0, rician_k_bs_ris: 1e8, ..SystemConfig::desk() };
        let sc = Scenario::generate(&cfg, 0).unwrap();
        let mut ris = sc.ris.clone();
        ris.set_commanded_phases(matched_phases(&sc.channels)).unwrap();
        let (te, ta) = sc.channels.target_aod;
        let h_eff = CMat::from_fn(cfg.n_tx, cfg.n_ris(), |n, r| sc.channels.h_bs_ris[(n, r)] * ris.effective_coeffs()[r]);
        let b = h_eff * steering_vector(&cfg, te, ta, None).unwrap();
        let u = &b / C64::new(b.norm(), 0.0);
        let design = TransmitDesign {
            beamformers: vec![CVec::zeros(cfg.n_tx); cfg.n_users],
            sense_cov: &u * u.adjoint() * C64::new(cfg.p_max_w, 0.0),
        };
        let elev = uniform_grid(-60.0, 60.0, 121).unwrap();
        let azim = uniform_grid(-90.0, 90.0, 181).unwrap();
        let g = beampattern(&cfg, &sc.channels, &ris, &design, &elev, &azim).unwrap();
        let (i, j, peak) = g.argmax();
        assert!(peak > 0.0);
        let (ti, tj) = (nearest(&elev, te.to_degrees()), nearest(&azim, ta.to_degrees()));
        assert!(i.abs_diff(ti) <= 1 && j.abs_diff(tj) <= 1, "peak ({i},{j}) target ({ti},{tj})");
    }

    #[test]
    fn zero_design_gives_zero_pattern_and_bad_grids_are_rejected() {
        let cfg = SystemConfig::desk();
        let sc = Scenario::generate(&cfg, 1).unwrap();
        let design = TransmitDesign::zero(cfg.n_tx, cfg.n_users);
        let g = beampattern(&cfg, &sc.channels, &sc.ris, &design, &[0.0, 10.0], &[0.0]).unwrap();
        assert!(g.gain.iter().flatten().all(|&x| x == 0.0));
        assert!(uniform_grid(1.0, 0.0, 5).is_err());
        assert!(uniform_grid(0.0, 1.0, 1).is_err());
        assert_eq!(g.to_gnuplot().lines().count(), 1 + 2 * 2);
    }
}
