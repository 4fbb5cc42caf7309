//! Misspecified-bound engine.
//!
//! The assumed (fault-free) echo model is `α Ω̄(φ)` with
//! `Ω̄(φ) = T a(φ) a(φ)ᴴ Tᴴ` and `T = H_BR diag(v)` built from the commanded
//! phases over all `R` elements. The true echo is `Ḡ = ᾱ Ω̄_W + α' Ω̄_F`.
//!
//! Every information quantity is a trace against the transmit covariance:
//! for echo matrices `P`, `Q` the per-slot inner product of `vec(PX)` and
//! `vec(QX)` is `tr(Pᴴ Q R_x)` (see [`inner`]). Parameters are ordered
//! `η = (φ_e, φ_a, Re α, Im α)`; 4×4 matrices split into a φ block (top left)
//! and an α block (bottom right).

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use serde::{Deserialize, Serialize};

use crate::linalg::{c, eig2, inv2, re_inner, sym2, tr_prod};
use crate::scenario::{sensing_cascade, ChannelSet, RisRealization, SystemConfig};
use crate::signal::TransmitDesign;
use crate::{CMat, CVec, Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub elev: f64,
    pub azim: f64,
    pub alpha_re: f64,
    pub alpha_im: f64,
}

impl ParamVector {
    pub fn new(elev: f64, azim: f64, alpha: C64) -> Self {
        ParamVector { elev, azim, alpha_re: alpha.re, alpha_im: alpha.im }
    }

    pub fn alpha(&self) -> C64 {
        C64::new(self.alpha_re, self.alpha_im)
    }

    pub fn to_vec(&self) -> Vector4<f64> {
        Vector4::new(self.elev, self.azim, self.alpha_re, self.alpha_im)
    }

    pub fn from_vec(v: &Vector4<f64>) -> Self {
        ParamVector { elev: v[0], azim: v[1], alpha_re: v[2], alpha_im: v[3] }
    }
}

/// Per-slot inner product `tr(Pᴴ Q R)`.
pub fn inner(p: &CMat, q: &CMat, r: &CMat) -> C64 {
    tr_prod(&p.adjoint(), &(q * r))
}

/// Element geometry of the surface: phase-gradient factors and grid coordinates.
#[derive(Debug, Clone)]
pub struct ArrayGeometry {
    pub kdy: f64,
    pub kdz: f64,
    pub r_y: Vec<f64>,
    pub r_z: Vec<f64>,
}

impl ArrayGeometry {
    pub fn new(cfg: &SystemConfig) -> Self {
        let k = cfg.wavenumber();
        let (y, z): (Vec<f64>, Vec<f64>) = (0..cfg.n_ris())
            .map(|r| {
                let (a, b) = cfg.grid_coords(r);
                (a as f64, b as f64)
            })
            .unzip();
        ArrayGeometry { kdy: k * cfg.elem_spacing_y_m, kdz: k * cfg.elem_spacing_z_m, r_y: y, r_z: z }
    }

    /// Steering vector with its first and second angle derivatives:
    /// `(a, ∂_e a, ∂_a a, ∂_ee a, ∂_ea a, ∂_aa a)`.
    pub fn steering_family(&self, e: f64, az: f64) -> [CVec; 6] {
        let (se, ce, sa, ca) = (e.sin(), e.cos(), az.sin(), az.cos());
        let n = self.r_y.len();
        let mut out: [CVec; 6] = std::array::from_fn(|_| CVec::zeros(n));
        for r in 0..n {
            let (y, z) = (self.r_y[r], self.r_z[r]);
            let p = self.kdy * ce * sa * y + self.kdz * se * z;
            let ge = -self.kdy * se * sa * y + self.kdz * ce * z;
            let ga = self.kdy * ce * ca * y;
            let hee = -self.kdy * ce * sa * y - self.kdz * se * z;
            let hea = -self.kdy * se * ca * y;
            let haa = -self.kdy * ce * sa * y;
            let a = C64::from_polar(1.0, -p);
            let j = C64::new(0.0, 1.0);
            out[0][r] = a;
            out[1][r] = -j * ge * a;
            out[2][r] = -j * ga * a;
            out[3][r] = (-j * hee - ge * ge) * a;
            out[4][r] = (-j * hea - ge * ga) * a;
            out[5][r] = (-j * haa - ga * ga) * a;
        }
        out
    }
}

/// `(Ω, Ω̇_e, Ω̇_a, Ω̈_ee, Ω̈_ea, Ω̈_aa)` on the `R×R` element domain.
///
/// With `a_r = e^{−j p_r}` and phase gradients `g_x`, `Ω̇_x = −j[diag(g_x), Ω]`
/// and `Ω̈_xy = −j[diag(h_xy), Ω] − [diag(g_x), [diag(g_y), Ω]]`.
pub fn omega_derivatives(cfg: &SystemConfig, elev: f64, azim: f64) -> [CMat; 6] {
    let g = ArrayGeometry::new(cfg);
    let (se, ce, sa, ca) = (elev.sin(), elev.cos(), azim.sin(), azim.cos());
    let n = cfg.n_ris();
    let diag = |f: &dyn Fn(f64, f64) -> f64| (0..n).map(|r| f(g.r_y[r], g.r_z[r])).collect::<Vec<f64>>();
    let ge = diag(&|y, z| -g.kdy * se * sa * y + g.kdz * ce * z);
    let ga = diag(&|y, _| g.kdy * ce * ca * y);
    let hee = diag(&|y, z| -g.kdy * ce * sa * y - g.kdz * se * z);
    let hea = diag(&|y, _| -g.kdy * se * ca * y);
    let haa = diag(&|y, _| -g.kdy * ce * sa * y);
    let a = &g.steering_family(elev, azim)[0];
    let omega = a * a.adjoint();
    let j = C64::new(0.0, 1.0);
    let comm = |d: &[f64], m: &CMat| CMat::from_fn(n, n, |r, s| m[(r, s)] * (d[r] - d[s]));
    let first = |d: &[f64]| comm(d, &omega) * (-j);
    let second = |h: &[f64], gx: &[f64], gy: &[f64]| comm(h, &omega) * (-j) - comm(gx, &comm(gy, &omega));
    [
        omega.clone(),
        first(&ge),
        first(&ga),
        second(&hee, &ge, &ge),
        second(&hea, &ge, &ga),
        second(&haa, &ga, &ga),
    ]
}

/// Coefficient convention for the residual `ε` entering the A blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AForm {
    /// `ε = ᾱ Ω̄_W + α' Ω̄_F − α₀ Ω̄` with the true coefficients.
    Generic,
    /// `ε = α₀ (Ω̄_W + Ω̄_F − Ω̄)`, one common coefficient.
    Expanded,
}

/// True and assumed echo models for one design-independent configuration.
#[derive(Debug, Clone)]
pub struct EchoModel {
    pub geometry: ArrayGeometry,
    /// `T = H_BR diag(v)` over all elements, `N_t×R`.
    pub t_mat: CMat,
    pub omega_w_bar: CMat,
    pub omega_f_bar: CMat,
    pub g_bar: CMat,
    /// `G_W`, `W×N_t`.
    pub g_working: CMat,
    pub alpha_target: C64,
    pub alpha_scatter: C64,
    pub target_aod: (f64, f64),
    pub noise: f64,
}

impl EchoModel {
    pub fn new(cfg: &SystemConfig, chs: &ChannelSet, ris: &RisRealization) -> Result<Self> {
        let (omega_w_bar, omega_f_bar, g_bar) = sensing_cascade(chs, ris)?;
        let v = ris.commanded_phases();
        let t_mat = CMat::from_fn(chs.n_tx(), chs.n_ris(), |n, r| chs.h_bs_ris[(n, r)] * v[r]);
        Ok(EchoModel {
            geometry: ArrayGeometry::new(cfg),
            t_mat,
            omega_w_bar,
            omega_f_bar,
            g_bar,
            g_working: chs.g_working.clone(),
            alpha_target: chs.alpha_target,
            alpha_scatter: chs.alpha_scatter,
            target_aod: chs.target_aod,
            noise: cfg.noise_sense_w,
        })
    }

    /// True parameter `η̄`.
    pub fn eta_true(&self) -> ParamVector {
        ParamVector::new(self.target_aod.0, self.target_aod.1, self.alpha_target)
    }

    /// Reflected column `T a(φ)`.
    pub fn column(&self, e: f64, az: f64) -> CVec {
        let f = self.geometry.steering_family(e, az);
        &self.t_mat * &f[0]
    }

    /// `ε` for the given convention.
    pub fn residual(&self, model: &MeanModel, form: AForm) -> CMat {
        let a0 = model.alpha;
        match form {
            AForm::Generic => &self.g_bar - &model.omega[0] * a0,
            AForm::Expanded => (&self.omega_w_bar + &self.omega_f_bar - &model.omega[0]) * a0,
        }
    }
}

/// Assumed mean and its derivatives at one parameter point.
#[derive(Debug, Clone)]
pub struct MeanModel {
    pub alpha: C64,
    /// `(Ω̄, Ω̄_e, Ω̄_a, Ω̄_ee, Ω̄_ea, Ω̄_aa)`, all `N_t×N_t`.
    pub omega: [CMat; 6],
    /// First derivatives of the mean, one per parameter.
    pub d1: [CMat; 4],
    /// Second derivatives, symmetric in the two indices.
    pub d2: [[CMat; 4]; 4],
}

/// Mean of the assumed model at `eta` with derivative family.
pub fn mu_misspecified(echo: &EchoModel, eta: &ParamVector) -> MeanModel {
    let f = echo.geometry.steering_family(eta.elev, eta.azim);
    let col: Vec<CVec> = f.iter().map(|a| &echo.t_mat * a).collect();
    let outer = |x: &CVec, y: &CVec| x * y.adjoint();
    let (c0, ce, ca) = (&col[0], &col[1], &col[2]);
    let sym = |x: &CVec, y: &CVec| outer(x, y) + outer(y, x);
    let omega = [
        outer(c0, c0),
        sym(ce, c0),
        sym(ca, c0),
        sym(&col[3], c0) + sym(ce, ce),
        sym(&col[4], c0) + outer(ce, ca) + outer(ca, ce),
        sym(&col[5], c0) + sym(ca, ca),
    ];
    let alpha = eta.alpha();
    let j = C64::new(0.0, 1.0);
    let d1 = [&omega[1] * alpha, &omega[2] * alpha, omega[0].clone(), &omega[0] * j];
    let n = omega[0].nrows();
    let zero = CMat::zeros(n, n);
    let d2e = [&omega[3] * alpha, &omega[4] * alpha, omega[1].clone(), &omega[1] * j];
    let d2a = [&omega[4] * alpha, &omega[5] * alpha, omega[2].clone(), &omega[2] * j];
    let d2 = [
        d2e.clone(),
        d2a.clone(),
        [d2e[2].clone(), d2a[2].clone(), zero.clone(), zero.clone()],
        [d2e[3].clone(), d2a[3].clone(), zero.clone(), zero],
    ];
    MeanModel { alpha, omega, d1, d2 }
}

/// Coefficients making every block entry a linear functional of `R_x`:
/// `A_ij(R) = Re tr(a_ijᴴ R)` and likewise for B.
#[derive(Debug, Clone)]
pub struct BlockMaps {
    pub a: Vec<CMat>,
    pub b: Vec<CMat>,
}

fn herm(m: CMat) -> CMat {
    (&m + m.adjoint()) * c(0.5)
}

impl BlockMaps {
    pub fn new(echo: &EchoModel, eta: &ParamVector, form: AForm) -> Self {
        let m = mu_misspecified(echo, eta);
        let eps = echo.residual(&m, form);
        let s = 2.0 / echo.noise;
        let mut a = Vec::with_capacity(16);
        let mut b = Vec::with_capacity(16);
        for i in 0..4 {
            for j in 0..4 {
                // Re tr(Pᴴ Q R) = Re tr(Kᴴ R) with K = Qᴴ P.
                let kb = herm(m.d1[j].adjoint() * &m.d1[i]) * c(s);
                let ka = herm(m.d2[i][j].adjoint() * &eps) * c(s) - &kb;
                a.push(ka);
                b.push(kb);
            }
        }
        BlockMaps { a, b }
    }

    pub fn eval(&self, r: &CMat) -> (Matrix4<f64>, Matrix4<f64>) {
        let f = |v: &[CMat]| {
            let mut m = Matrix4::zeros();
            for i in 0..4 {
                for j in i..4 {
                    let x = re_inner(&v[4 * i + j], r);
                    m[(i, j)] = x;
                    m[(j, i)] = x;
                }
            }
            m
        };
        (f(&self.a), f(&self.b))
    }

    /// Multiplies every map by `w_i w_j s` (parameter rescaling and a common factor).
    pub fn rescaled(&self, w: &[f64; 4], s: f64) -> BlockMaps {
        let f = |v: &[CMat]| (0..16).map(|k| &v[k] * c(w[k / 4] * w[k % 4] * s)).collect();
        BlockMaps { a: f(&self.a), b: f(&self.b) }
    }
}

/// A blocks as functions of the working-phase lift `V_W = v_W v_Wᴴ`:
/// `A_ij(V) = a_const_ij + Re tr(a_coef_ijᴴ V)` at a fixed `R_x`.
#[derive(Debug, Clone)]
pub struct PhaseMaps {
    pub a_const: Matrix4<f64>,
    pub a_coef: Vec<CMat>,
}

impl PhaseMaps {
    pub fn new(echo: &EchoModel, eta: &ParamVector, r: &CMat, form: AForm) -> Self {
        let m = mu_misspecified(echo, eta);
        let s = 2.0 / echo.noise;
        let (coef_w, fixed) = match form {
            AForm::Generic => (echo.alpha_target, &echo.omega_f_bar * echo.alpha_scatter - &m.omega[0] * m.alpha),
            AForm::Expanded => (m.alpha, (&echo.omega_f_bar - &m.omega[0]) * m.alpha),
        };
        let gw = &echo.g_working;
        let mut a_const = Matrix4::zeros();
        let mut a_coef = Vec::with_capacity(16);
        for i in 0..4 {
            for j in 0..4 {
                let b = s * inner(&m.d1[i], &m.d1[j], r).re;
                a_const[(i, j)] = s * inner(&fixed, &m.d2[i][j], r).re - b;
                let k = gw * r * m.d2[i][j].adjoint() * gw.adjoint() * (coef_w * s);
                a_coef.push(herm(k));
            }
        }
        PhaseMaps { a_const, a_coef }
    }

    pub fn eval(&self, v_lift: &CMat) -> Matrix4<f64> {
        let mut a = self.a_const;
        for i in 0..4 {
            for j in 0..4 {
                a[(i, j)] += re_inner(&self.a_coef[4 * i + j], v_lift);
            }
        }
        (a + a.transpose()) * 0.5
    }
}

pub fn phi_block(m: &Matrix4<f64>) -> Matrix2<f64> {
    m.fixed_view::<2, 2>(0, 0).into_owned()
}

pub fn upper_right(m: &Matrix4<f64>) -> Matrix2<f64> {
    m.fixed_view::<2, 2>(0, 2).into_owned()
}

pub fn lower_left(m: &Matrix4<f64>) -> Matrix2<f64> {
    m.fixed_view::<2, 2>(2, 0).into_owned()
}

pub fn alpha_block(m: &Matrix4<f64>) -> Matrix2<f64> {
    m.fixed_view::<2, 2>(2, 2).into_owned()
}

/// Pseudo-true parameter, the eight 2×2 blocks, `Z`, `U` and the bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundBlocks {
    pub eta0: ParamVector,
    pub a_pp: Matrix2<f64>,
    pub b_pp: Matrix2<f64>,
    /// Upper-right (φ rows, α columns) block of A.
    pub a_ap: Matrix2<f64>,
    /// Lower-left (α rows, φ columns) block of A.
    pub a_pa: Matrix2<f64>,
    pub b_ap: Matrix2<f64>,
    pub b_pa: Matrix2<f64>,
    pub a_aa: Matrix2<f64>,
    pub b_aa: Matrix2<f64>,
    pub z: Matrix2<f64>,
    pub u: Matrix2<f64>,
    pub mcrb_phi: Matrix2<f64>,
}

/// `B_ap B_aa⁻¹ B_pa`.
pub fn b_coupling(b: &Matrix4<f64>) -> Result<Matrix2<f64>> {
    Ok(sym2(&(upper_right(b) * inv2(&alpha_block(b), "B_αα")? * lower_left(b))))
}

/// `B_pp + (A_ap + B_ap) B_aa⁻¹ (A_pa + B_pa)`, the smallest `C̃` allowed by the C-side LMI.
pub fn c_floor(a: &Matrix4<f64>, b: &Matrix4<f64>) -> Result<Matrix2<f64>> {
    let bi = inv2(&alpha_block(b), "B_αα")?;
    Ok(sym2(&(phi_block(b) + (upper_right(a) + upper_right(b)) * bi * (lower_left(a) + lower_left(b)))))
}

impl BoundBlocks {
    pub fn from_full(eta0: ParamVector, a: &Matrix4<f64>, b: &Matrix4<f64>) -> Result<Self> {
        let a_aa = alpha_block(a);
        let a_aa_inv = inv2(&a_aa, "A_αα")?;
        let b_aa_inv = inv2(&alpha_block(b), "B_αα")?;
        let z = sym2(&(phi_block(a) - upper_right(a) * a_aa_inv * lower_left(a)));
        let s = upper_right(a) + upper_right(b);
        let t = lower_left(a) + lower_left(b);
        let u = sym2(&(phi_block(b) - upper_right(b) * b_aa_inv * lower_left(b) + s * b_aa_inv * t));
        let zi = inv2(&z, "Z")?;
        let mcrb_phi = sym2(&(zi * u * zi));
        Ok(BoundBlocks {
            eta0,
            a_pp: phi_block(a),
            b_pp: phi_block(b),
            a_ap: upper_right(a),
            a_pa: lower_left(a),
            b_ap: upper_right(b),
            b_pa: lower_left(b),
            a_aa,
            b_aa: alpha_block(b),
            z,
            u,
            mcrb_phi,
        })
    }

    fn assemble(pp: &Matrix2<f64>, ap: &Matrix2<f64>, pa: &Matrix2<f64>, aa: &Matrix2<f64>) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(pp);
        m.fixed_view_mut::<2, 2>(0, 2).copy_from(ap);
        m.fixed_view_mut::<2, 2>(2, 0).copy_from(pa);
        m.fixed_view_mut::<2, 2>(2, 2).copy_from(aa);
        m
    }

    pub fn full_a(&self) -> Matrix4<f64> {
        Self::assemble(&self.a_pp, &self.a_ap, &self.a_pa, &self.a_aa)
    }

    pub fn full_b(&self) -> Matrix4<f64> {
        Self::assemble(&self.b_pp, &self.b_ap, &self.b_pa, &self.b_aa)
    }

    pub fn trace(&self) -> f64 {
        self.mcrb_phi.trace()
    }
}

/// Blocks at `eta0` for the design `design`.
pub fn assemble_blocks(echo: &EchoModel, design: &TransmitDesign, eta0: &ParamVector, form: AForm) -> Result<BoundBlocks> {
    let r = design.tx_cov();
    let (a, b) = BlockMaps::new(echo, eta0, form).eval(&r);
    BoundBlocks::from_full(*eta0, &a, &b)
}

/// `Z⁻¹ U Z⁻¹`.
pub fn mcrb_phi(blocks: &BoundBlocks) -> Result<Matrix2<f64>> {
    let zi = inv2(&blocks.z, "Z")?;
    Ok(sym2(&(zi * blocks.u * zi)))
}

/// φ block of the inverse FIM for a fault-free surface at the true parameter.
pub fn crb_phi(cfg: &SystemConfig, chs: &ChannelSet, ris_perfect: &RisRealization, design: &TransmitDesign) -> Result<Matrix2<f64>> {
    if !ris_perfect.faulty_idx().is_empty() {
        return Err(Error::InvalidArgument("CRB requires a fault-free realization".into()));
    }
    let chs = chs.partitioned(ris_perfect)?;
    let echo = EchoModel::new(cfg, &chs, ris_perfect)?;
    let (_, b) = BlockMaps::new(&echo, &echo.eta_true(), AForm::Generic).eval(&design.tx_cov());
    inv2(&sym2(&(phi_block(&b) - b_coupling(&b)?)), "FIM Schur complement")
}

/// Settings of the pseudo-true search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoTrueSettings {
    /// Half width of the angle grid around the initial point, radians.
    pub span: f64,
    pub grid: usize,
    /// Simplex spread stopping tolerance relative to `tr(Ḡ R Ḡᴴ)`.
    pub nm_tol: f64,
    pub newton_iters: usize,
}

impl Default for PseudoTrueSettings {
    fn default() -> Self {
        PseudoTrueSettings { span: 3f64.to_radians(), grid: 41, nm_tol: 1e-10, newton_iters: 30 }
    }
}

/// Least-squares residual with the coefficient profiled out.
#[derive(Debug, Clone)]
pub struct Residual<'a> {
    echo: &'a EchoModel,
    r: CMat,
    gr: CMat,
    base: f64,
}

impl<'a> Residual<'a> {
    pub fn new(echo: &'a EchoModel, design: &TransmitDesign) -> Result<Self> {
        let r = design.tx_cov();
        let gr = &echo.g_bar * &r;
        let base = tr_prod(&gr, &echo.g_bar.adjoint()).re;
        if r.norm() == 0.0 || !(base > 0.0) {
            if !base.is_finite() {
                return Err(Error::NumericalFailure("non-finite residual".into()));
            }
            return Err(Error::DegenerateDesign("flat residual: design or echo is zero".into()));
        }
        Ok(Residual { echo, r, gr, base })
    }

    /// `tr(Ḡ R Ḡᴴ)`, the residual at `α = 0`.
    pub fn base(&self) -> f64 {
        self.base
    }

    /// Profiled residual and best coefficient at the angles.
    pub fn profiled(&self, e: f64, az: f64) -> (f64, C64) {
        let col = self.echo.column(e, az);
        let p = col.dotc(&(&self.gr * &col));
        let q = col.norm_squared() * col.dotc(&(&self.r * &col)).re;
        if !(q > 0.0) {
            return (self.base, c(0.0));
        }
        (self.base - p.norm_sqr() / q, p / q)
    }

    /// `tr(E R Eᴴ)` at a full parameter vector.
    pub fn full(&self, eta: &ParamVector) -> f64 {
        let col = self.echo.column(eta.elev, eta.azim);
        let a = eta.alpha();
        let p = col.dotc(&(&self.gr * &col));
        let q = col.norm_squared() * col.dotc(&(&self.r * &col)).re;
        self.base - 2.0 * (a.conj() * p).re + a.norm_sqr() * q
    }
}

fn nelder_mead(f: &dyn Fn([f64; 2]) -> f64, x0: [f64; 2], step: f64, ftol: f64, max_iter: usize) -> [f64; 2] {
    let mut s = [x0, [x0[0] + step, x0[1]], [x0[0], x0[1] + step]];
    let mut fv = s.map(f);
    for _ in 0..max_iter {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        s = idx.map(|i| s[i]);
        fv = idx.map(|i| fv[i]);
        if fv[2] - fv[0] <= ftol {
            break;
        }
        let cen = [(s[0][0] + s[1][0]) / 2.0, (s[0][1] + s[1][1]) / 2.0];
        let along = |t: f64| [cen[0] + t * (s[2][0] - cen[0]), cen[1] + t * (s[2][1] - cen[1])];
        let xr = along(-1.0);
        let fr = f(xr);
        if fr < fv[0] {
            let xe = along(-2.0);
            let fe = f(xe);
            if fe < fr {
                s[2] = xe;
                fv[2] = fe;
            } else {
                s[2] = xr;
                fv[2] = fr;
            }
        } else if fr < fv[1] {
            s[2] = xr;
            fv[2] = fr;
        } else {
            let xc = if fr < fv[2] { along(-0.5) } else { along(0.5) };
            let fc = f(xc);
            if fc < fv[2].min(fr) {
                s[2] = xc;
                fv[2] = fc;
            } else {
                for k in 1..3 {
                    s[k] = [(s[0][0] + s[k][0]) / 2.0, (s[0][1] + s[k][1]) / 2.0];
                    fv[k] = f(s[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).unwrap_or(0);
    s[best]
}

/// Gradient and Hessian of `tr(E R Eᴴ)` in η.
fn grad_hess(echo: &EchoModel, r: &CMat, eta: &ParamVector) -> (Vector4<f64>, Matrix4<f64>) {
    let m = mu_misspecified(echo, eta);
    let eps = echo.residual(&m, AForm::Generic);
    let mut g = Vector4::zeros();
    let mut h = Matrix4::zeros();
    for i in 0..4 {
        g[i] = -2.0 * inner(&eps, &m.d1[i], r).re;
        for j in i..4 {
            let x = 2.0 * inner(&m.d1[i], &m.d1[j], r).re - 2.0 * inner(&eps, &m.d2[i][j], r).re;
            h[(i, j)] = x;
            h[(j, i)] = x;
        }
    }
    (g, h)
}

/// Minimizer of `‖μ̄ − μ̃(η)‖²` near `init`.
pub fn pseudo_true(echo: &EchoModel, design: &TransmitDesign, init: &ParamVector, settings: &PseudoTrueSettings) -> Result<ParamVector> {
    let res = Residual::new(echo, design)?;
    let lim = std::f64::consts::FRAC_PI_2 - 1e-6;
    let n = settings.grid.max(1);
    let pitch = if n > 1 { 2.0 * settings.span / (n - 1) as f64 } else { 0.0 };
    let mut best = (f64::INFINITY, [init.elev, init.azim]);
    for i in 0..n {
        for k in 0..n {
            let e = (init.elev - settings.span + pitch * i as f64).clamp(-lim, lim);
            let az = init.azim - settings.span + pitch * k as f64;
            let (l, _) = res.profiled(e, az);
            if !l.is_finite() {
                return Err(Error::NumericalFailure("non-finite residual on the angle grid".into()));
            }
            if l < best.0 {
                best = (l, [e, az]);
            }
        }
    }
    let f = |x: [f64; 2]| res.profiled(x[0].clamp(-lim, lim), x[1]).0;
    let step = if pitch > 0.0 { pitch } else { 1e-3 };
    let x = nelder_mead(&f, best.1, step, settings.nm_tol * res.base(), 2000);
    let (_, a) = res.profiled(x[0], x[1]);
    let mut eta = ParamVector::new(x[0].clamp(-lim, lim), x[1], a);
    let mut cur = res.full(&eta);
    // Residual values lose about 1e-16·base to cancellation near an exact fit;
    // inside that band a step is judged by the scaled gradient instead.
    let noise = 1e-13 * res.base();
    for _ in 0..settings.newton_iters {
        let (g, h) = grad_hess(echo, &res.r, &eta);
        let d = h.diagonal().map(|x| if x > 0.0 { 1.0 / x.sqrt() } else { 1.0 });
        let hs = Matrix4::from_fn(|i, j| h[(i, j)] * d[i] * d[j]);
        let Some(ch) = hs.cholesky() else { break };
        let step = -ch.solve(&g.component_mul(&d)).component_mul(&d);
        let gn = g.component_mul(&d).norm();
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-4 {
            let cand = ParamVector::from_vec(&(eta.to_vec() + step * t));
            let l = res.full(&cand);
            let ok = cand.elev.abs() < lim
                && (l < cur - noise || (l <= cur + noise && grad_hess(echo, &res.r, &cand).0.component_mul(&d).norm() < gn));
            if ok {
                eta = cand;
                cur = l;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        let small = step[0].abs().max(step[1].abs()) < 1e-15;
        if !moved || small {
            break;
        }
    }
    if !cur.is_finite() {
        return Err(Error::NumericalFailure("non-finite residual at the pseudo-true point".into()));
    }
    Ok(eta)
}

/// One named predicate with its margin (positive means satisfied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefinitenessReport {
    pub checks: Vec<Check>,
}

impl DefinitenessReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

fn sym_eigs(m: &Matrix4<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues;
    (e.min(), e.max())
}

/// `min eig` of a dynamically sized symmetric matrix.
fn dyn_min_eig(m: &nalgebra::DMatrix<f64>) -> f64 {
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min()
}

/// Runs the definiteness and Schur-equivalence predicates on one block set.
pub fn definiteness_suite(blocks: &BoundBlocks) -> DefinitenessReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, pass: bool, margin: f64| checks.push(Check { name: name.into(), pass, margin });
    // Congruence by diag(1, 1, w, w) balances angle and coefficient units; it
    // preserves inertia, the φ Schur complements and the φ block of A⁻¹.
    let w = (blocks.b_pp.norm() / blocks.b_aa.norm()).sqrt();
    let w = if w.is_finite() && w > 0.0 { w } else { 1.0 };
    let sc = Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, w, w));
    let a = sc * blocks.full_a() * sc;
    let b = sc * blocks.full_b() * sc;
    let blocks = &BoundBlocks::from_full(blocks.eta0, &a, &b).unwrap_or_else(|_| blocks.clone());
    let (bmin, bmax) = sym_eigs(&b);
    push("B_psd", bmin >= -1e-9 * bmax.abs(), bmin / bmax.abs().max(f64::MIN_POSITIVE));
    let (amin, amax) = sym_eigs(&a);
    push("A_negative_definite", amax < 0.0, -amax / amin.abs().max(f64::MIN_POSITIVE));
    let (zmin, zmax) = eig2(&blocks.z);
    push("Z_negative_definite", zmax < 0.0, -zmax / zmin.abs().max(f64::MIN_POSITIVE));
    match (inv2(&blocks.z, "Z"), a.try_inverse()) {
        (Ok(zi), Some(ai)) => {
            let (lo, hi) = eig2(&(zi * zi));
            push("Zinv_squared_positive_definite", lo > 0.0, lo / hi.abs().max(f64::MIN_POSITIVE));
            let top = phi_block(&ai);
            let err = (top - zi).norm() / zi.norm();
            push("A_inverse_phi_block_equals_Zinv", err < 1e-9, 1e-9 - err);

            // C-side LMI against its Schur complement at points just inside/outside.
            if let Ok(cf) = c_floor(&a, &b) {
                let scale = cf.norm().max(blocks.b_pp.norm());
                let mut agree = true;
                let mut worst: f64 = f64::INFINITY;
                // Congruence scaling balances the φ and α blocks before the eigen test.
                let s2 = (blocks.b_aa.norm() / scale).sqrt();
                for tau in [1e-3, -1e-3, 1e-1, -1e-1] {
                    let ct = cf + Matrix2::identity() * (tau * scale);
                    let mut lmi = Matrix4::zeros();
                    lmi.fixed_view_mut::<2, 2>(0, 0).copy_from(&((ct - blocks.b_pp) * s2));
                    lmi.fixed_view_mut::<2, 2>(0, 2).copy_from(&(blocks.a_ap + blocks.b_ap));
                    lmi.fixed_view_mut::<2, 2>(2, 0).copy_from(&(blocks.a_pa + blocks.b_pa));
                    lmi.fixed_view_mut::<2, 2>(2, 2).copy_from(&(blocks.b_aa / s2));
                    let direct = sym_eigs(&lmi).0 >= 0.0;
                    let schur = eig2(&(ct - cf)).0 >= 0.0;
                    agree &= direct == schur;
                    worst = worst.min(sym_eigs(&lmi).0.abs());
                }
                push("C_lmi_schur_consistent", agree, worst);
            }
            // D-side LMI against its Schur complement.
            let scale = zi.norm();
            let mut agree = true;
            let mut worst: f64 = f64::INFINITY;
            let s2 = (a.norm() / scale).sqrt();
            for tau in [1e-3, -1e-3, 1e-1, -1e-1] {
                let dt = zi - Matrix2::identity() * (tau * scale);
                let mut m = nalgebra::DMatrix::<f64>::zeros(6, 6);
                m.view_mut((0, 0), (2, 2)).copy_from(&(-dt * s2));
                m.view_mut((0, 2), (2, 2)).copy_from(&(-Matrix2::<f64>::identity()));
                m.view_mut((2, 0), (2, 2)).copy_from(&(-Matrix2::<f64>::identity()));
                m.view_mut((2, 2), (4, 4)).copy_from(&(-a / s2));
                let direct = dyn_min_eig(&m) >= 0.0;
                let schur = eig2(&(zi - dt)).0 >= 0.0;
                agree &= direct == schur;
                worst = worst.min(dyn_min_eig(&m).abs());
            }
            push("D_lmi_schur_consistent", agree, worst);
        }
        _ => push("invertible", false, 0.0),
    }
    DefinitenessReport { checks }
}

/// `(tr(Z⁻¹UZ⁻¹), tr(D̃MD̃), tr(M)·tr(D̃²))` with `M = C̃ − B_ap B_aa⁻¹ B_pa`.
pub fn sandwich_chain(blocks: &BoundBlocks, c_tilde: &Matrix2<f64>, d_tilde: &Matrix2<f64>) -> Result<[f64; 3]> {
    let zi = inv2(&blocks.z, "Z")?;
    let m = c_tilde - sym2(&(blocks.b_ap * inv2(&blocks.b_aa, "B_αα")? * blocks.b_pa));
    Ok([(zi * blocks.u * zi).trace(), (d_tilde * m * d_tilde).trace(), m.trace() * (d_tilde * d_tilde).trace()])
}

pub fn sandwich_holds(chain: &[f64; 3], rel_slack: f64) -> bool {
    chain[0] <= chain[1] * (1.0 + rel_slack) && chain[1] <= chain[2] * (1.0 + rel_slack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Scenario, SystemConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cn(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * std::f64::consts::FRAC_1_SQRT_2
    }

    fn random_design(n: usize, k: usize, p: f64, rng: &mut ChaCha8Rng) -> TransmitDesign {
        let a = CMat::from_fn(n, n, |_, _| cn(rng));
        let d = TransmitDesign {
            beamformers: (0..k).map(|_| CVec::from_fn(n, |_, _| cn(rng))).collect(),
            sense_cov: &a * a.adjoint(),
        };
        let s = p / d.power();
        d.scaled(s)
    }

    fn setup(seed: u64, f: usize) -> (Scenario, EchoModel, TransmitDesign) {
        let cfg = SystemConfig { rng_seed: seed, n_faulty: f, ..SystemConfig::desk() };
        let mut sc = Scenario::generate(&cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let v = CVec::from_fn(16, |_, _| C64::from_polar(1.0, rng.random::<f64>() * 6.283));
        sc.ris.set_commanded_phases(v).unwrap();
        let echo = EchoModel::new(&cfg, &sc.channels, &sc.ris).unwrap();
        let d = random_design(8, 2, cfg.p_max_w, &mut rng);
        (sc, echo, d)
    }

    fn rel(a: &CMat, b: &CMat) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn omega_family_matches_finite_differences() {
        let cfg = SystemConfig::desk();
        let (e, a) = (0.3, -0.4);
        let h = 1e-6;
        let w = omega_derivatives(&cfg, e, a);
        let fd = |de: f64, da: f64, k: usize| {
            let p = omega_derivatives(&cfg, e + de, a + da);
            let m = omega_derivatives(&cfg, e - de, a - da);
            (&p[k] - &m[k]) * c(0.5 / h)
        };
        assert!(rel(&fd(h, 0.0, 0), &w[1]) < 1e-5);
        assert!(rel(&fd(0.0, h, 0), &w[2]) < 1e-5);
        assert!(rel(&fd(h, 0.0, 1), &w[3]) < 1e-4);
        assert!(rel(&fd(0.0, h, 1), &w[4]) < 1e-4);
        assert!(rel(&fd(h, 0.0, 2), &w[4]) < 1e-4);
        assert!(rel(&fd(0.0, h, 2), &w[5]) < 1e-4);
        for m in &w {
            assert!((m - m.adjoint()).norm() < 1e-12 * m.norm().max(1.0));
        }
        assert!((w[0].trace().re - 16.0).abs() < 1e-12);
    }

    #[test]
    fn single_column_surface_has_no_azimuth_derivative() {
        let cfg = SystemConfig { r_y: 1, ..SystemConfig::desk() };
        let w = omega_derivatives(&cfg, 0.2, 0.9);
        assert_eq!(w[2].norm(), 0.0);
    }

    #[test]
    fn barred_family_matches_transformed_element_family() {
        let (sc, echo, _) = setup(3, 2);
        let eta = ParamVector::new(0.1, 0.5, C64::new(1.0, 0.0));
        let m = mu_misspecified(&echo, &eta);
        let w = omega_derivatives(&sc.config, 0.1, 0.5);
        for k in 0..6 {
            let t = &echo.t_mat * &w[k] * echo.t_mat.adjoint();
            assert!(rel(&m.omega[k], &t) < 1e-10, "k = {k}");
        }
    }

    #[test]
    fn zero_alpha_mean_is_zero() {
        let (_, echo, d) = setup(2, 2);
        let m = mu_misspecified(&echo, &ParamVector::new(0.1, 0.2, c(0.0)));
        let mean = &m.omega[0] * m.alpha;
        assert_eq!(inner(&mean, &mean, &d.tx_cov()).norm(), 0.0);
    }

    /// Signal matrix `X` with `X Xᴴ / T = R` exactly.
    fn explicit_signal(r: &CMat, t: usize, rng: &mut ChaCha8Rng) -> CMat {
        let n = r.nrows();
        let e = SymmetricEigen::new(r.clone());
        let sqrt = &e.eigenvectors * CMat::from_diagonal(&e.eigenvalues.map(|x| c(x.max(0.0).sqrt()))) * e.eigenvectors.adjoint();
        let g = CMat::from_fn(t, n, |_, _| cn(rng));
        let q = g.qr().q();
        &sqrt * q.adjoint() * c((t as f64).sqrt())
    }

    #[test]
    fn covariance_form_matches_explicit_signal() {
        let (_, echo, d) = setup(9, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = d.tx_cov();
        let t = 16;
        let x = explicit_signal(&r, t, &mut rng);
        assert!(rel(&(&x * x.adjoint() * c(1.0 / t as f64)), &r) < 1e-10);
        let eta = ParamVector::new(-0.12, 0.61, C64::new(2e-6, -1e-6));
        let m = mu_misspecified(&echo, &eta);
        let mu = &m.omega[0] * m.alpha * &x;
        let direct = mu.iter().map(|z| z.norm_sqr()).sum::<f64>() / t as f64;
        let mean = &m.omega[0] * m.alpha;
        let cov = inner(&mean, &mean, &r).re;
        assert!((direct / cov - 1.0).abs() < 1e-8);

        // Generic A through explicit residual and second-derivative signals.
        let maps = BlockMaps::new(&echo, &eta, AForm::Generic);
        let (a, b) = maps.eval(&r);
        let eps = (&echo.g_bar - &m.omega[0] * m.alpha) * &x;
        let s = 2.0 / echo.noise;
        for i in 0..4 {
            for j in 0..4 {
                let di = &m.d1[i] * &x;
                let dj = &m.d1[j] * &x;
                let d2 = &m.d2[i][j] * &x;
                let dot = |p: &CMat, q: &CMat| p.iter().zip(q.iter()).map(|(u, v)| (u.conj() * v).re).sum::<f64>() / t as f64;
                let bb = s * dot(&di, &dj);
                let aa = s * dot(&eps, &d2) - bb;
                assert!((b[(i, j)] - bb).abs() <= 1e-8 * b.norm());
                assert!((a[(i, j)] - aa).abs() <= 1e-7 * a.norm());
            }
        }
    }

    #[test]
    fn mean_derivatives_match_finite_differences() {
        let (_, echo, _) = setup(5, 2);
        let eta = ParamVector::new(-0.1, 0.55, C64::new(1.3, -0.4));
        let m = mu_misspecified(&echo, &eta);
        let mean = |p: &ParamVector| {
            let mm = mu_misspecified(&echo, p);
            &mm.omega[0] * mm.alpha
        };
        let h = 1e-6;
        for i in 0..4 {
            let mut ep = eta.to_vec();
            let mut em = eta.to_vec();
            ep[i] += h;
            em[i] -= h;
            let fd = (mean(&ParamVector::from_vec(&ep)) - mean(&ParamVector::from_vec(&em))) * c(0.5 / h);
            assert!(rel(&fd, &m.d1[i]) < 1e-5, "first {i}");
            let pm = mu_misspecified(&echo, &ParamVector::from_vec(&ep));
            let mm = mu_misspecified(&echo, &ParamVector::from_vec(&em));
            for j in 0..4 {
                if m.d2[i][j].norm() == 0.0 {
                    assert_eq!((&pm.d1[j] - &mm.d1[j]).norm(), 0.0);
                    continue;
                }
                let fd2 = (&pm.d1[j] - &mm.d1[j]) * c(0.5 / h);
                assert!(rel(&fd2, &m.d2[i][j]) < 1e-4, "second {i}{j}");
            }
        }
    }

    #[test]
    fn zero_mismatch_gives_true_parameter_and_crb() {
        let (sc, echo, d) = setup(11, 0);
        let eta_bar = echo.eta_true();
        let init = ParamVector::new(eta_bar.elev + 0.01, eta_bar.azim - 0.01, eta_bar.alpha() * 0.9);
        let eta0 = pseudo_true(&echo, &d, &init, &PseudoTrueSettings::default()).unwrap();
        assert!((eta0.elev - eta_bar.elev).abs() < 1e-6);
        assert!((eta0.azim - eta_bar.azim).abs() < 1e-6);
        assert!((eta0.alpha() - eta_bar.alpha()).norm() < 1e-6 * eta_bar.alpha().norm());
        let blocks = assemble_blocks(&echo, &d, &eta_bar, AForm::Generic).unwrap();
        assert!((blocks.full_a() + blocks.full_b()).norm() <= 1e-12 * blocks.full_b().norm());
        let crb = crb_phi(&sc.config, &sc.channels, &sc.ris, &d).unwrap();
        assert!((blocks.trace() - crb.trace()).abs() < 1e-8 * crb.trace());
        let at_eta0 = assemble_blocks(&echo, &d, &eta0, AForm::Generic).unwrap();
        assert!((at_eta0.trace() - crb.trace()).abs() < 1e-8 * crb.trace());
    }

    #[test]
    fn crb_scales_inversely_with_power() {
        let (sc, _, d) = setup(12, 0);
        let a = crb_phi(&sc.config, &sc.channels, &sc.ris, &d).unwrap().trace();
        let b = crb_phi(&sc.config, &sc.channels, &sc.ris, &d.scaled(2.0)).unwrap().trace();
        assert!((a / b - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_design_is_degenerate() {
        let (_, echo, _) = setup(1, 2);
        let d = TransmitDesign::zero(8, 2);
        let init = echo.eta_true();
        assert!(matches!(pseudo_true(&echo, &d, &init, &PseudoTrueSettings::default()), Err(Error::DegenerateDesign(_))));
        assert!(matches!(assemble_blocks(&echo, &d, &init, AForm::Generic), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn pseudo_true_matches_fine_grid() {
        let cfg = SystemConfig { rng_seed: 7, n_faulty: 4, ..SystemConfig::desk() };
        let mut sc = Scenario::generate(&cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        sc.ris.set_commanded_phases(CVec::from_fn(16, |_, _| C64::from_polar(1.0, rng.random::<f64>() * 6.283))).unwrap();
        let echo = EchoModel::new(&cfg, &sc.channels, &sc.ris).unwrap();
        let d = random_design(8, 2, cfg.p_max_w, &mut rng);
        let init = echo.eta_true();
        let eta0 = pseudo_true(&echo, &d, &init, &PseudoTrueSettings::default()).unwrap();
        let res = Residual::new(&echo, &d).unwrap();
        // Wide window: the pseudo-true point may leave the initial search grid.
        let span = 12f64.to_radians();
        let pitch = 2.0 * span / 200.0;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..201 {
            for k in 0..201 {
                let e = init.elev - span + pitch * i as f64;
                let a = init.azim - span + pitch * k as f64;
                let l = res.profiled(e, a).0;
                if l < best.0 {
                    best = (l, e, a);
                }
            }
        }
        assert!((eta0.elev - best.1).abs() <= pitch);
        assert!((eta0.azim - best.2).abs() <= pitch);
        assert!(res.full(&eta0) <= best.0 * (1.0 + 1e-12));
        assert!(res.full(&eta0) <= res.full(&init));
    }

    #[test]
    fn expanded_form_agrees_when_coefficients_coincide() {
        let (sc, _, d) = setup(21, 3);
        let mut chs = sc.channels.clone();
        chs.alpha_scatter = chs.alpha_target;
        let echo = EchoModel::new(&sc.config, &chs, &sc.ris).unwrap();
        let eta = ParamVector::new(0.05, 0.6, chs.alpha_target);
        let g = assemble_blocks(&echo, &d, &eta, AForm::Generic).unwrap();
        let x = assemble_blocks(&echo, &d, &eta, AForm::Expanded).unwrap();
        assert!((g.full_a() - x.full_a()).norm() <= 1e-7 * g.full_a().norm());
    }

    #[test]
    fn phase_maps_reproduce_blocks() {
        let (sc, echo, d) = setup(6, 3);
        let eta = pseudo_true(&echo, &d, &echo.eta_true(), &PseudoTrueSettings::default()).unwrap();
        let r = d.tx_cov();
        let pm = PhaseMaps::new(&echo, &eta, &r, AForm::Generic);
        let vw = sc.ris.working_phases();
        let a = pm.eval(&(&vw * vw.adjoint()));
        let (a_direct, _) = BlockMaps::new(&echo, &eta, AForm::Generic).eval(&r);
        assert!((a - a_direct).norm() <= 1e-9 * a_direct.norm());
    }

    #[test]
    fn mcrb_equals_block_of_sandwich_inverse() {
        let (_, echo, d) = setup(8, 4);
        let eta = pseudo_true(&echo, &d, &echo.eta_true(), &PseudoTrueSettings::default()).unwrap();
        let blocks = assemble_blocks(&echo, &d, &eta, AForm::Generic).unwrap();
        let ai = blocks.full_a().try_inverse().unwrap();
        let full = ai * blocks.full_b() * ai;
        let top = phi_block(&full);
        assert!((top - blocks.mcrb_phi).norm() <= 1e-9 * top.norm());
        assert_eq!(blocks.a_aa, -blocks.b_aa);
        let report = definiteness_suite(&blocks);
        assert!(report.all_pass(), "{:?}", report.failures());
    }

    #[test]
    fn global_phase_rotation_leaves_bound_unchanged() {
        let (mut sc, _, d) = setup(14, 3);
        let cfg = sc.config.clone();
        let echo = EchoModel::new(&cfg, &sc.channels, &sc.ris).unwrap();
        let eta = pseudo_true(&echo, &d, &echo.eta_true(), &PseudoTrueSettings::default()).unwrap();
        let t0 = assemble_blocks(&echo, &d, &eta, AForm::Generic).unwrap().trace();
        let rot = C64::from_polar(1.0, 0.8);
        let v = sc.ris.commanded_phases() * rot;
        let vf = sc.ris.faulty_coeffs() * rot;
        sc.ris = RisRealization::new(16, sc.ris.faulty_idx().to_vec(), vf, v).unwrap();
        sc.channels.repartition(&sc.ris).unwrap();
        let echo2 = EchoModel::new(&cfg, &sc.channels, &sc.ris).unwrap();
        let eta2 = pseudo_true(&echo2, &d, &echo2.eta_true(), &PseudoTrueSettings::default()).unwrap();
        let t1 = assemble_blocks(&echo2, &d, &eta2, AForm::Generic).unwrap().trace();
        assert!((t0 / t1 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn bound_scales_linearly_with_noise() {
        let (_, mut echo, d) = setup(15, 3);
        let eta = pseudo_true(&echo, &d, &echo.eta_true(), &PseudoTrueSettings::default()).unwrap();
        let t0 = assemble_blocks(&echo, &d, &eta, AForm::Generic).unwrap().trace();
        echo.noise *= 3.0;
        let t1 = assemble_blocks(&echo, &d, &eta, AForm::Generic).unwrap().trace();
        assert!((t1 / t0 - 3.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn blocks_are_consistent(seed in 0u64..10_000, f in 1usize..8) {
            let (_, echo, d) = setup(seed, f);
            let eta = pseudo_true(&echo, &d, &echo.eta_true(), &PseudoTrueSettings::default()).unwrap();
            let blocks = assemble_blocks(&echo, &d, &eta, AForm::Generic).unwrap();
            let (lo, hi) = eig2(&blocks.mcrb_phi);
            prop_assert!(lo >= -1e-9 * hi && blocks.mcrb_phi[(0, 0)] > 0.0 && blocks.mcrb_phi[(1, 1)] > 0.0);
            let report = definiteness_suite(&blocks);
            prop_assert!(report.all_pass(), "{:?}", report.failures());
            let zi = inv2(&blocks.z, "Z").unwrap();
            let ct = c_floor(&blocks.full_a(), &blocks.full_b()).unwrap();
            let chain = sandwich_chain(&blocks, &ct, &zi).unwrap();
            prop_assert!(sandwich_holds(&chain, 1e-9));
        }
    }
}
