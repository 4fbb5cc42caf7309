//! Transmit designs, covariance, power and the SINR forms.

use serde::{Deserialize, Serialize};

use crate::linalg::{c, min_eig, re_inner};
use crate::scenario::{cascaded_comm_channel, ChannelSet, RisRealization};
use crate::{CMat, CVec, Error, Result};

/// Beamformers `w_k` and sensing covariance `R_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitDesign {
    pub beamformers: Vec<CVec>,
    pub sense_cov: CMat,
}

impl TransmitDesign {
    pub fn zero(n_tx: usize, n_users: usize) -> Self {
        TransmitDesign { beamformers: vec![CVec::zeros(n_tx); n_users], sense_cov: CMat::zeros(n_tx, n_tx) }
    }

    /// `R_x = Σ w_k w_kᴴ + R_s`.
    pub fn tx_cov(&self) -> CMat {
        let mut r = self.sense_cov.clone();
        for w in &self.beamformers {
            r += w * w.adjoint();
        }
        r
    }

    pub fn power(&self) -> f64 {
        self.tx_cov().trace().re
    }

    pub fn lifted(&self) -> LiftedDesign {
        LiftedDesign {
            w_lift: self.beamformers.iter().map(|w| w * w.adjoint()).collect(),
            sense_cov: self.sense_cov.clone(),
        }
    }

    pub fn scaled(&self, power_factor: f64) -> Self {
        let s = power_factor.sqrt();
        TransmitDesign {
            beamformers: self.beamformers.iter().map(|w| w * c(s)).collect(),
            sense_cov: &self.sense_cov * c(power_factor),
        }
    }

    /// Checks `R_s ⪰ 0` and the power budget.
    pub fn check(&self, p_max: f64) -> Result<()> {
        let tr = self.sense_cov.trace().re.abs().max(f64::MIN_POSITIVE);
        if min_eig(&self.sense_cov) < -1e-9 * tr {
            return Err(Error::NumericalFailure("sensing covariance is not PSD".into()));
        }
        if self.power() > p_max + 1e-6 {
            return Err(Error::NumericalFailure(format!("power {} exceeds budget {p_max}", self.power())));
        }
        Ok(())
    }
}

/// Lifted beamformers `W_k = w_k w_kᴴ` (rank unconstrained) and `R_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedDesign {
    pub w_lift: Vec<CMat>,
    pub sense_cov: CMat,
}

impl LiftedDesign {
    pub fn tx_cov(&self) -> CMat {
        let mut r = self.sense_cov.clone();
        for w in &self.w_lift {
            r += w;
        }
        r
    }
}

/// `h̄ M h̄ᴴ` for a row `h̄` stored as a vector.
fn quad(h: &CVec, m: &CMat) -> f64 {
    (h.transpose() * m * h.conjugate())[(0, 0)].re
}

fn check_user(design_users: usize, k: usize) -> Result<()> {
    if k >= design_users {
        return Err(Error::InvalidArgument(format!("user index {k} out of range")));
    }
    Ok(())
}

/// SINR of user `k` (linear).
pub fn sinr(chs: &ChannelSet, ris: &RisRealization, design: &TransmitDesign, k: usize, noise: f64) -> Result<f64> {
    check_user(design.beamformers.len(), k)?;
    let h = cascaded_comm_channel(chs, ris, k)?;
    let gain = |w: &CVec| h.dot(w).norm_sqr();
    let signal = gain(&design.beamformers[k]);
    let interference: f64 = design.beamformers.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, w)| gain(w)).sum();
    Ok(signal / (interference + quad(&h, &design.sense_cov) + noise))
}

pub fn sinr_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// `(1/γ + 1)·tr(H̄_k W_k) − tr(H̄_k R_x)`; the SINR target holds iff this is at least `σ_k²`.
pub fn sinr_lifted_lhs(chs: &ChannelSet, ris: &RisRealization, lifted: &LiftedDesign, k: usize, gamma: f64) -> Result<f64> {
    check_user(lifted.w_lift.len(), k)?;
    let h = cascaded_comm_channel(chs, ris, k)?;
    Ok((1.0 / gamma + 1.0) * quad(&h, &lifted.w_lift[k]) - quad(&h, &lifted.tx_cov()))
}

/// Stacked channel `[H_{W,k}; h̄_{F,k}]`, `(W+1)×N_t`.
pub fn stacked_channel(chs: &ChannelSet, k: usize) -> CMat {
    let hw = &chs.h_cascade_ue_working[k];
    let w = hw.nrows();
    let mut m = CMat::zeros(w + 1, hw.ncols());
    m.rows_mut(0, w).copy_from(hw);
    m.row_mut(w).copy_from(&chs.h_faulty_ue[k].transpose());
    m
}

/// `Q_k = M (W_k − γ(Σ_{i≠k} W_i + R_s)) Mᴴ` with `M` the stacked channel.
///
/// With `ṽ = [v_W; 1]`, `Re tr(Q_k ṽṽᴴ)` equals `γ·σ_k²` exactly at the SINR boundary.
pub fn q_matrix(chs: &ChannelSet, ris: &RisRealization, lifted: &LiftedDesign, k: usize, gamma: f64) -> Result<CMat> {
    check_user(lifted.w_lift.len(), k)?;
    if k >= chs.n_users() || chs.h_cascade_ue_working[k].nrows() != ris.working_idx().len() {
        return Err(Error::InvalidArgument("channel splits do not match the realization".into()));
    }
    let mut x = &lifted.sense_cov * c(-gamma);
    for (i, w) in lifted.w_lift.iter().enumerate() {
        x += if i == k { w.clone() } else { w * c(-gamma) };
    }
    let m = stacked_channel(chs, k);
    Ok(&m * x * m.adjoint())
}

/// `Re tr(Q ṽṽᴴ)` with `ṽ = [v_W; 1]`.
pub fn q_form(q: &CMat, v_w: &CVec) -> f64 {
    let mut vt = CVec::from_element(v_w.len() + 1, c(1.0));
    vt.rows_mut(0, v_w.len()).copy_from(v_w);
    re_inner(&(&vt * vt.adjoint()), &q.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Scenario, SystemConfig};
    use crate::C64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cn(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * std::f64::consts::FRAC_1_SQRT_2
    }

    fn random_design(n: usize, k: usize, scale: f64, rng: &mut ChaCha8Rng) -> TransmitDesign {
        let a = CMat::from_fn(n, 2, |_, _| cn(rng));
        TransmitDesign {
            beamformers: (0..k).map(|_| CVec::from_fn(n, |_, _| cn(rng)) * c(scale.sqrt())).collect(),
            sense_cov: &a * a.adjoint() * c(scale),
        }
    }

    fn scenario(seed: u64, f: usize) -> Scenario {
        Scenario::generate(&SystemConfig { rng_seed: seed, n_faulty: f, ..SystemConfig::desk() }, 0).unwrap()
    }

    /// Power scale that puts SINR values near the threshold.
    fn scale_for(sc: &Scenario) -> f64 {
        let h = cascaded_comm_channel(&sc.channels, &sc.ris, 0).unwrap();
        sc.config.noise_comm_w / h.norm_squared()
    }

    #[test]
    fn zero_design_has_zero_sinr() {
        let sc = scenario(1, 2);
        let d = TransmitDesign::zero(8, 2);
        assert_eq!(sinr(&sc.channels, &sc.ris, &d, 0, 1e-14).unwrap(), 0.0);
        let lhs = sinr_lifted_lhs(&sc.channels, &sc.ris, &d.lifted(), 1, 10.0).unwrap();
        assert!(lhs == 0.0 && lhs < sc.config.noise_comm_w);
        let q = q_matrix(&sc.channels, &sc.ris, &d.lifted(), 0, 10.0).unwrap();
        assert_eq!(q.norm(), 0.0);
    }

    #[test]
    fn single_user_sinr_is_snr() {
        let cfg = SystemConfig { n_users: 1, ..SystemConfig::desk() };
        let sc = Scenario::generate(&cfg, 0).unwrap();
        let w = CVec::from_element(8, c(1e-3));
        let d = TransmitDesign { beamformers: vec![w.clone()], sense_cov: CMat::zeros(8, 8) };
        let h = cascaded_comm_channel(&sc.channels, &sc.ris, 0).unwrap();
        let want = h.dot(&w).norm_sqr() / 1e-14;
        assert!((sinr(&sc.channels, &sc.ris, &d, 0, 1e-14).unwrap() / want - 1.0).abs() < 1e-12);
        let q = q_matrix(&sc.channels, &sc.ris, &d.lifted(), 0, 10.0).unwrap();
        assert!(crate::linalg::min_eig(&q) > -1e-12 * q.norm());
    }

    #[test]
    fn symbol_level_simulation_matches_closed_form() {
        let sc = scenario(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let s = scale_for(&sc);
        let d = random_design(8, 2, s, &mut rng);
        let noise = sc.config.noise_comm_w;
        let h = cascaded_comm_channel(&sc.channels, &sc.ris, 0).unwrap();
        let chol = (d.sense_cov.clone() + CMat::identity(8, 8) * c(1e-12 * s)).cholesky().unwrap().l();
        let qpsk = |rng: &mut ChaCha8Rng| {
            let b: u8 = rng.random_range(0..4);
            C64::from_polar(1.0, std::f64::consts::FRAC_PI_4 + b as f64 * std::f64::consts::FRAC_PI_2)
        };
        let slots = 100_000;
        let (mut sig, mut rest) = (0.0, 0.0);
        for _ in 0..slots {
            let s0 = qpsk(&mut rng);
            let s1 = qpsk(&mut rng);
            let z = CVec::from_fn(8, |_, _| cn(&mut rng));
            let xs = &chol * z;
            let n = cn(&mut rng) * noise.sqrt();
            sig += (h.dot(&d.beamformers[0]) * s0).norm_sqr();
            rest += (h.dot(&d.beamformers[1]) * s1 + h.dot(&xs) + n).norm_sqr();
        }
        let empirical = sig / rest;
        let closed = sinr(&sc.channels, &sc.ris, &d, 0, noise).unwrap();
        assert!((empirical / closed - 1.0).abs() < 0.02, "{empirical} vs {closed}");
    }

    #[test]
    fn tx_cov_trace_is_sum_of_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_design(8, 3, 1.0, &mut rng).lifted();
        let parts: f64 = d.w_lift.iter().map(|w| w.trace().re).sum::<f64>() + d.sense_cov.trace().re;
        assert!((d.tx_cov().trace().re - parts).abs() < 1e-10 * parts);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn sinr_predicates_agree(seed in 0u64..10_000, f in 0usize..6, boost in 0.1f64..40.0) {
            let sc = scenario(seed % 50, f);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_design(8, 2, scale_for(&sc) * boost, &mut rng);
            let (gamma, noise) = (sc.config.sinr_threshold, sc.config.noise_comm_w);
            let lifted = d.lifted();
            for k in 0..2 {
                let s = sinr(&sc.channels, &sc.ris, &d, k, noise).unwrap();
                let lhs = sinr_lifted_lhs(&sc.channels, &sc.ris, &lifted, k, gamma).unwrap();
                let q = q_matrix(&sc.channels, &sc.ris, &lifted, k, gamma).unwrap();
                let qv = q_form(&q, &sc.ris.working_phases());
                let margin = (s / gamma - 1.0).abs();
                if margin > 1e-9 {
                    prop_assert_eq!(s >= gamma, lhs >= noise);
                    prop_assert_eq!(s >= gamma, qv >= gamma * noise);
                }
                // Both lifted forms are scaled copies of the same quantity.
                prop_assert!((qv - gamma * lhs).abs() <= 1e-9 * (qv.abs() + gamma * lhs.abs()).max(1e-40));
            }
        }
    }
}
