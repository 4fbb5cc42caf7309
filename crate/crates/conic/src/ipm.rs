//! Infeasible-start primal-dual path-following method with the HKM search
//! direction and Mehrotra predictor-corrector steps.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::standard::{BlockKind, BlockMat, StandardForm};
use crate::SolveStatus;

/// Tolerances and limits for the interior-point iteration.
#[derive(Debug, Clone)]
pub struct SolverSettings {
    /// Relative primal and dual residual tolerance.
    pub tol_feas: f64,
    /// Relative duality gap tolerance.
    pub tol_gap: f64,
    /// Threshold on normalized Farkas certificates.
    pub tol_infeas: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Once the worst residual is below 1e-6, stop after this many iterations
    /// without a 10% drop in it.
    pub stall_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tol_feas: 1e-9, tol_gap: 1e-9, tol_infeas: 1e-9, max_iter: 120, step_fraction: 0.98, stall_iter: 12 }
    }
}

#[derive(Debug, Clone)]
enum Blk {
    Psd(DMatrix<f64>),
    Lp(DVector<f64>),
}

impl Blk {
    fn dot(&self, o: &Blk) -> f64 {
        match (self, o) {
            (Blk::Psd(a), Blk::Psd(b)) => a.dot(b),
            (Blk::Lp(a), Blk::Lp(b)) => a.dot(b),
            _ => unreachable!(),
        }
    }

    fn norm_sq(&self) -> f64 {
        match self {
            Blk::Psd(a) => a.norm_squared(),
            Blk::Lp(a) => a.norm_squared(),
        }
    }

    fn axpy(&mut self, s: f64, o: &Blk) {
        match (self, o) {
            (Blk::Psd(a), Blk::Psd(b)) => *a += b * s,
            (Blk::Lp(a), Blk::Lp(b)) => *a += b * s,
            _ => unreachable!(),
        }
    }
}

fn inner(a: &[Blk], b: &[Blk]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn norm(a: &[Blk]) -> f64 {
    a.iter().map(Blk::norm_sq).sum::<f64>().sqrt()
}

pub(crate) struct IpmOutput {
    pub status: SolveStatus,
    pub psd: Vec<DMatrix<f64>>,
    pub lp: DVector<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

struct Scaled {
    blocks: Vec<BlockKind>,
    rows: Vec<Vec<(usize, BlockMat)>>,
    b: DVector<f64>,
    c: Vec<Blk>,
    /// Per-block list of `(row, coefficient index within row)`.
    by_block: Vec<Vec<(usize, usize)>>,
    /// Per PSD block: positions in `by_block[k]` of dense coefficients, and
    /// those coefficients vectorized as columns.
    dense_cols: Vec<(Vec<usize>, DMatrix<f64>)>,
}

impl Scaled {
    fn a_op(&self, x: &[Blk]) -> DVector<f64> {
        DVector::from_fn(self.rows.len(), |i, _| {
            self.rows[i]
                .iter()
                .map(|(b, m)| match &x[*b] {
                    Blk::Psd(xm) => m.dot_psd(xm),
                    Blk::Lp(xv) => m.dot_lp(xv),
                })
                .sum()
        })
    }

    fn at_op(&self, y: &DVector<f64>) -> Vec<Blk> {
        let mut out = zeros(&self.blocks);
        for (i, row) in self.rows.iter().enumerate() {
            for (b, m) in row {
                match &mut out[*b] {
                    Blk::Psd(o) => m.add_to_psd(y[i], o),
                    Blk::Lp(o) => m.add_to_lp(y[i], o),
                }
            }
        }
        out
    }
}

fn zeros(blocks: &[BlockKind]) -> Vec<Blk> {
    blocks
        .iter()
        .map(|b| match *b {
            BlockKind::Psd(n) => Blk::Psd(DMatrix::zeros(n, n)),
            BlockKind::Lp(n) => Blk::Lp(DVector::zeros(n)),
        })
        .collect()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(sym(m)).map(|c| sym(&c.inverse()))
}

/// Largest `a` with `x + a·dx` in the cone (may be infinite).
fn max_step(x: &Blk, dx: &Blk) -> f64 {
    match (x, dx) {
        (Blk::Psd(x), Blk::Psd(dx)) => {
            let Some(ch) = Cholesky::new(sym(x)) else { return 0.0 };
            let l = ch.l();
            let Some(t) = l.solve_lower_triangular(dx) else { return 0.0 };
            let Some(t) = l.solve_lower_triangular(&t.transpose()) else { return 0.0 };
            let ev = SymmetricEigen::new(sym(&t)).eigenvalues;
            let lmin = ev.iter().cloned().fold(f64::INFINITY, f64::min);
            if lmin >= 0.0 {
                f64::INFINITY
            } else {
                -1.0 / lmin
            }
        }
        (Blk::Lp(x), Blk::Lp(dx)) => x
            .iter()
            .zip(dx.iter())
            .filter(|(_, d)| **d < 0.0)
            .map(|(a, d)| -a / d)
            .fold(f64::INFINITY, f64::min),
        _ => unreachable!(),
    }
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if m.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Some(ch.solve(rhs));
    }
    let scale = m.diagonal().iter().cloned().fold(0.0, f64::max).max(1e-300);
    let mut reg = 1e-14 * scale;
    for _ in 0..8 {
        let mut mm = m.clone();
        for i in 0..mm.nrows() {
            mm[(i, i)] += reg;
        }
        if let Some(ch) = Cholesky::new(mm) {
            return Some(ch.solve(rhs));
        }
        reg *= 100.0;
    }
    m.clone().lu().solve(rhs)
}

pub(crate) fn solve_standard(sf: &StandardForm, settings: &SolverSettings) -> IpmOutput {
    let m_all = sf.rows.len();
    let blocks = sf.blocks.clone();

    let mut rows = Vec::with_capacity(m_all);
    let mut b = Vec::with_capacity(m_all);
    let mut trivially_infeasible = false;
    for (row, &bi) in sf.rows.iter().zip(&sf.b) {
        let s: f64 = row.iter().map(|(_, m)| m.norm_sq()).sum::<f64>().sqrt();
        if s == 0.0 {
            if bi.abs() > 1e-12 {
                trivially_infeasible = true;
            }
            continue;
        }
        let mut r = row.clone();
        r.iter_mut().for_each(|(_, m)| m.scale(1.0 / s));
        rows.push(r);
        b.push(bi / s);
    }
    let mut c: Vec<Blk> = zeros(&blocks);
    for (k, cm) in sf.c.iter().enumerate() {
        if let Some(cm) = cm {
            match &mut c[k] {
                Blk::Psd(o) => cm.add_to_psd(1.0, o),
                Blk::Lp(o) => cm.add_to_lp(1.0, o),
            }
        }
    }
    let mut b = DVector::from_vec(b);
    let bs = b.norm().max(1.0);
    let cs = norm(&c).max(1.0);
    b /= bs;
    c.iter_mut().for_each(|blk| match blk {
        Blk::Psd(m) => *m /= cs,
        Blk::Lp(v) => *v /= cs,
    });
    let mut by_block = vec![Vec::new(); blocks.len()];
    for (i, row) in rows.iter().enumerate() {
        for (k, (bk, _)) in row.iter().enumerate() {
            by_block[*bk].push((i, k));
        }
    }
    let dense_cols = by_block
        .iter()
        .map(|list| {
            let pos: Vec<usize> = (0..list.len())
                .filter(|&t| matches!(rows[list[t].0][list[t].1].1, BlockMat::Dense(_)))
                .collect();
            let n2 = pos.first().map_or(0, |&t| match &rows[list[t].0][list[t].1].1 {
                BlockMat::Dense(a) => a.len(),
                BlockMat::Sparse(_) => 0,
            });
            let mut cols = DMatrix::zeros(n2, pos.len());
            for (q, &t) in pos.iter().enumerate() {
                if let BlockMat::Dense(a) = &rows[list[t].0][list[t].1].1 {
                    cols.column_mut(q).copy_from_slice(a.as_slice());
                }
            }
            (pos, cols)
        })
        .collect();
    let p = Scaled { blocks: blocks.clone(), rows, b, c, by_block, dense_cols };
    let m = p.rows.len();

    let unscale = |x: &[Blk]| -> (Vec<DMatrix<f64>>, DVector<f64>) {
        let mut psd = Vec::new();
        let mut lp = DVector::zeros(0);
        for blk in x {
            match blk {
                Blk::Psd(a) => psd.push(a * bs),
                Blk::Lp(v) => {
                    psd.push(DMatrix::zeros(0, 0));
                    lp = v * bs;
                }
            }
        }
        (psd, lp)
    };

    let mut x: Vec<Blk> = Vec::new();
    let mut z: Vec<Blk> = Vec::new();
    let mut nu = 0.0;
    for (k, bk) in blocks.iter().enumerate() {
        let n = bk.dim();
        nu += n as f64;
        let nf = n as f64;
        let mut xi: f64 = 10.0f64.max(nf.sqrt());
        let mut eta: f64 = 10.0f64.max(nf.sqrt());
        for &(i, _) in &p.by_block[k] {
            xi = xi.max(nf * (1.0 + p.b[i].abs()) / 2.0);
        }
        eta = eta.max(p.c[k].norm_sq().sqrt());
        match bk {
            BlockKind::Psd(n) => {
                x.push(Blk::Psd(DMatrix::identity(*n, *n) * xi));
                z.push(Blk::Psd(DMatrix::identity(*n, *n) * eta));
            }
            BlockKind::Lp(n) => {
                x.push(Blk::Lp(DVector::from_element(*n, xi)));
                z.push(Blk::Lp(DVector::from_element(*n, eta)));
            }
        }
    }
    let mut y = DVector::zeros(m);

    let bnorm = p.b.norm();
    let cnorm = norm(&p.c);
    let mut status = SolveStatus::NumericalLimit;
    let mut iterations = 0;
    let (mut relp, mut reld, mut relgap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut stall = 0;
    let mut last_progress = 0;
    let mut best: Option<(f64, Vec<Blk>, f64, f64, f64)> = None;

    if trivially_infeasible {
        let (psd, lp) = unscale(&x);
        return IpmOutput {
            status: SolveStatus::Infeasible,
            psd,
            lp,
            iterations: 0,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            gap: f64::INFINITY,
        };
    }

    for it in 0..settings.max_iter {
        iterations = it;
        let ax = p.a_op(&x);
        let rp = &p.b - &ax;
        let aty = p.at_op(&y);
        let mut rd = p.c.clone();
        for k in 0..rd.len() {
            rd[k].axpy(-1.0, &aty[k]);
            rd[k].axpy(-1.0, &z[k]);
        }
        let pobj = inner(&p.c, &x);
        let dobj = p.b.dot(&y);
        let xz = inner(&x, &z);
        let mu = xz / nu;
        relp = rp.norm() / (1.0 + bnorm);
        reld = norm(&rd) / (1.0 + cnorm);
        let denom = 1.0 + pobj.abs() + dobj.abs();
        relgap = ((pobj - dobj).abs() / denom).max(xz / denom);
        if !(relp.is_finite() && reld.is_finite() && relgap.is_finite()) {
            break;
        }
        let merit = relp.max(reld).max(relgap);
        if best.as_ref().map_or(true, |b| merit < b.0) {
            if best.as_ref().map_or(true, |b| merit < 0.9 * b.0) {
                last_progress = it;
            }
            best = Some((merit, x.clone(), relp, reld, relgap));
        }
        if merit < 1e-6 && it >= last_progress + settings.stall_iter {
            break;
        }
        if relp < settings.tol_feas && reld < settings.tol_feas && relgap < settings.tol_gap {
            status = SolveStatus::Optimal;
            break;
        }
        if dobj > 0.0 {
            let mut cert = aty.clone();
            for k in 0..cert.len() {
                cert[k].axpy(1.0, &z[k]);
            }
            if norm(&cert) / dobj < settings.tol_infeas && relp > settings.tol_feas {
                status = SolveStatus::Infeasible;
                break;
            }
        }
        if pobj < 0.0 && ax.norm() / (-pobj) < settings.tol_infeas && reld > settings.tol_feas {
            status = SolveStatus::Unbounded;
            break;
        }

        // Per-block helpers.
        let mut zinv: Vec<Blk> = Vec::with_capacity(z.len());
        let mut failed = false;
        for zb in &z {
            match zb {
                Blk::Psd(zm) => match spd_inverse(zm) {
                    Some(inv) => zinv.push(Blk::Psd(inv)),
                    None => {
                        failed = true;
                        zinv.push(Blk::Psd(zm.clone()));
                    }
                },
                Blk::Lp(zv) => zinv.push(Blk::Lp(zv.map(|a| 1.0 / a))),
            }
        }
        if failed {
            break;
        }

        // Schur complement M_ij = ⟨A_i, X A_j Z⁻¹⟩.
        let mut mm = DMatrix::<f64>::zeros(m, m);
        for (k, list) in p.by_block.iter().enumerate() {
            match (&x[k], &zinv[k]) {
                (Blk::Psd(xm), Blk::Psd(zi)) => {
                    let n = xm.nrows();
                    let (dpos, dcols) = &p.dense_cols[k];
                    let mut is_dense = vec![false; list.len()];
                    dpos.iter().for_each(|&t| is_dense[t] = true);
                    let mut gcols = DMatrix::zeros(if dpos.is_empty() { 0 } else { n * n }, list.len());
                    for (t, &(j, cj)) in list.iter().enumerate() {
                        let aj = &p.rows[j][cj].1;
                        let g = match aj {
                            BlockMat::Dense(a) => (xm * a) * zi,
                            BlockMat::Sparse(es) => {
                                let mut g = DMatrix::zeros(n, n);
                                for &(r, cc, v) in es {
                                    g.ger(v, &xm.column(r), &zi.column(cc), 1.0);
                                    if r != cc {
                                        g.ger(v, &xm.column(cc), &zi.column(r), 1.0);
                                    }
                                }
                                g
                            }
                        };
                        for (u, &(i, ci)) in list.iter().enumerate() {
                            if !is_dense[u] {
                                mm[(i, j)] += p.rows[i][ci].1.dot_psd(&g);
                            }
                        }
                        if !dpos.is_empty() {
                            gcols.column_mut(t).copy_from_slice(g.as_slice());
                        }
                    }
                    if !dpos.is_empty() {
                        let prod = dcols.tr_mul(&gcols);
                        for (q, &u) in dpos.iter().enumerate() {
                            let i = list[u].0;
                            for (t, &(j, _)) in list.iter().enumerate() {
                                mm[(i, j)] += prod[(q, t)];
                            }
                        }
                    }
                }
                (Blk::Lp(xv), Blk::Lp(zi)) => {
                    let w = xv.component_mul(zi);
                    for &(j, cj) in list {
                        let mut dj = DVector::zeros(w.len());
                        p.rows[j][cj].1.add_to_lp(1.0, &mut dj);
                        let dj = dj.component_mul(&w);
                        for &(i, ci) in list {
                            mm[(i, j)] += p.rows[i][ci].1.dot_lp(&dj);
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
        let mm = sym(&mm);

        // X·Rd·Z⁻¹ term shared by both solves.
        let xrdz: Vec<Blk> = (0..x.len())
            .map(|k| match (&x[k], &rd[k], &zinv[k]) {
                (Blk::Psd(a), Blk::Psd(r), Blk::Psd(zi)) => Blk::Psd(a * r * zi),
                (Blk::Lp(a), Blk::Lp(r), Blk::Lp(zi)) => Blk::Lp(a.component_mul(r).component_mul(zi)),
                _ => unreachable!(),
            })
            .collect();

        let direction = |kmat: &[Blk]| -> Option<(Vec<Blk>, DVector<f64>, Vec<Blk>)> {
            let mut t = kmat.to_vec();
            for k in 0..t.len() {
                t[k].axpy(-1.0, &xrdz[k]);
            }
            let rhs = &rp - p.a_op(&t);
            let dy = solve_spd(&mm, &rhs)?;
            let atdy = p.at_op(&dy);
            let mut dz = rd.clone();
            for k in 0..dz.len() {
                dz[k].axpy(-1.0, &atdy[k]);
            }
            let dx: Vec<Blk> = (0..x.len())
                .map(|k| match (&kmat[k], &x[k], &dz[k], &zinv[k]) {
                    (Blk::Psd(kk), Blk::Psd(xm), Blk::Psd(d), Blk::Psd(zi)) => Blk::Psd(sym(&(kk - xm * d * zi))),
                    (Blk::Lp(kk), Blk::Lp(xv), Blk::Lp(d), Blk::Lp(zi)) => Blk::Lp(kk - xv.component_mul(d).component_mul(zi)),
                    _ => unreachable!(),
                })
                .collect();
            Some((dx, dy, dz))
        };

        let steps = |dx: &[Blk], dz: &[Blk]| -> (f64, f64) {
            let ap = x.iter().zip(dx).map(|(a, d)| max_step(a, d)).fold(f64::INFINITY, f64::min);
            let ad = z.iter().zip(dz).map(|(a, d)| max_step(a, d)).fold(f64::INFINITY, f64::min);
            (ap, ad)
        };

        // Predictor.
        let kpred: Vec<Blk> = x
            .iter()
            .map(|b| match b {
                Blk::Psd(a) => Blk::Psd(-a),
                Blk::Lp(v) => Blk::Lp(-v),
            })
            .collect();
        let Some((dxa, _dya, dza)) = direction(&kpred) else { break };
        let (apa, ada) = steps(&dxa, &dza);
        let (apa, ada) = (apa.min(1.0), ada.min(1.0));
        let mut xa = x.clone();
        let mut za = z.clone();
        for k in 0..xa.len() {
            xa[k].axpy(apa, &dxa[k]);
            za[k].axpy(ada, &dza[k]);
        }
        let mu_aff = inner(&xa, &za) / nu;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let kcorr: Vec<Blk> = (0..x.len())
            .map(|k| match (&x[k], &zinv[k], &dxa[k], &dza[k]) {
                (Blk::Psd(xm), Blk::Psd(zi), Blk::Psd(dxm), Blk::Psd(dzm)) => {
                    Blk::Psd(zi * (sigma * mu) - xm - dxm * dzm * zi)
                }
                (Blk::Lp(xv), Blk::Lp(zi), Blk::Lp(dxv), Blk::Lp(dzv)) => {
                    Blk::Lp(zi * (sigma * mu) - xv - dxv.component_mul(dzv).component_mul(zi))
                }
                _ => unreachable!(),
            })
            .collect();
        let Some((dx, dy, dz)) = direction(&kcorr) else { break };
        let (ap, ad) = steps(&dx, &dz);
        let ap = (settings.step_fraction * ap).min(1.0);
        let ad = (settings.step_fraction * ad).min(1.0);
        for k in 0..x.len() {
            x[k].axpy(ap, &dx[k]);
            z[k].axpy(ad, &dz[k]);
        }
        y += dy * ad;
        if ap < 1e-9 && ad < 1e-9 {
            stall += 1;
            if stall >= 3 {
                break;
            }
        } else {
            stall = 0;
        }
    }

    let (final_x, fp, fd, fg) = if status == SolveStatus::NumericalLimit {
        match best {
            Some((_, bx, a, b2, c2)) => (bx, a, b2, c2),
            None => (x, relp, reld, relgap),
        }
    } else {
        (x, relp, reld, relgap)
    };
    let (psd, lp) = unscale(&final_x);
    IpmOutput {
        status,
        psd,
        lp,
        iterations: iterations + 1,
        primal_residual: fp,
        dual_residual: fd,
        gap: fg,
    }
}
