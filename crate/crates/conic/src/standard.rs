//! Standard primal form `min ⟨C, X⟩ s.t. ⟨A_i, X⟩ = b_i, X ∈ K` over a product of
//! PSD blocks and one nonnegative-orthant block, plus an SDPA text dump.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::problem::{AffineExpr, Coef, Constraint, SdpProblem, VarKind, VarValue};
use crate::ConicError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BlockKind {
    Psd(usize),
    Lp(usize),
}

impl BlockKind {
    pub(crate) fn dim(self) -> usize {
        match self {
            BlockKind::Psd(n) | BlockKind::Lp(n) => n,
        }
    }
}

/// Symmetric block coefficient. A sparse entry `(i, j, v)` with `i < j` stands for
/// `v` at both `(i, j)` and `(j, i)`. For LP blocks only diagonal entries occur.
#[derive(Debug, Clone)]
pub(crate) enum BlockMat {
    Dense(DMatrix<f64>),
    Sparse(Vec<(usize, usize, f64)>),
}

impl BlockMat {
    pub(crate) fn dot_psd(&self, x: &DMatrix<f64>) -> f64 {
        match self {
            BlockMat::Dense(a) => a.dot(x),
            BlockMat::Sparse(es) => es
                .iter()
                .map(|&(i, j, v)| if i == j { v * x[(i, i)] } else { v * (x[(i, j)] + x[(j, i)]) })
                .sum(),
        }
    }

    pub(crate) fn dot_lp(&self, x: &DVector<f64>) -> f64 {
        match self {
            BlockMat::Dense(a) => (0..x.len()).map(|i| a[(i, i)] * x[i]).sum(),
            BlockMat::Sparse(es) => es.iter().map(|&(i, _, v)| v * x[i]).sum(),
        }
    }

    pub(crate) fn add_to_psd(&self, s: f64, x: &mut DMatrix<f64>) {
        match self {
            BlockMat::Dense(a) => *x += a * s,
            BlockMat::Sparse(es) => {
                for &(i, j, v) in es {
                    x[(i, j)] += s * v;
                    if i != j {
                        x[(j, i)] += s * v;
                    }
                }
            }
        }
    }

    pub(crate) fn add_to_lp(&self, s: f64, x: &mut DVector<f64>) {
        match self {
            BlockMat::Dense(a) => {
                for i in 0..x.len() {
                    x[i] += s * a[(i, i)];
                }
            }
            BlockMat::Sparse(es) => {
                for &(i, _, v) in es {
                    x[i] += s * v;
                }
            }
        }
    }

    pub(crate) fn norm_sq(&self) -> f64 {
        match self {
            BlockMat::Dense(a) => a.norm_squared(),
            BlockMat::Sparse(es) => es.iter().map(|&(i, j, v)| if i == j { v * v } else { 2.0 * v * v }).sum(),
        }
    }

    pub(crate) fn scale(&mut self, s: f64) {
        match self {
            BlockMat::Dense(a) => *a *= s,
            BlockMat::Sparse(es) => es.iter_mut().for_each(|e| e.2 *= s),
        }
    }
}

/// Accumulates symmetric contributions for one block before freezing them.
#[derive(Default)]
struct BlockAcc {
    dense: Option<DMatrix<f64>>,
    sparse: BTreeMap<(usize, usize), f64>,
}

impl BlockAcc {
    /// Adds the functional `Σ c_ij X_ij` (X symmetric), symmetrized.
    fn add_functional(&mut self, n: usize, c: &Coef, sign: f64) {
        match c {
            Coef::Dense(m) => {
                let d = self.dense.get_or_insert_with(|| DMatrix::zeros(n, n));
                for i in 0..n {
                    for j in 0..n {
                        let v = 0.5 * sign * m[(i, j)].re;
                        d[(i, j)] += v;
                        d[(j, i)] += v;
                    }
                }
            }
            Coef::Entries(es) => {
                for &(i, j, z) in es {
                    let key = (i.min(j), i.max(j));
                    let v = if i == j { sign * z.re } else { 0.5 * sign * z.re };
                    *self.sparse.entry(key).or_insert(0.0) += v;
                }
            }
            Coef::Vector(_) => unreachable!("vector coefficient on matrix variable"),
        }
    }

    fn add_lp(&mut self, idx: usize, v: f64) {
        *self.sparse.entry((idx, idx)).or_insert(0.0) += v;
    }

    fn finish(self, kind: BlockKind) -> Option<BlockMat> {
        let n = kind.dim();
        match self.dense {
            Some(mut d) => {
                for ((i, j), v) in self.sparse {
                    d[(i, j)] += v;
                    if i != j {
                        d[(j, i)] += v;
                    }
                }
                if d.iter().all(|&x| x == 0.0) {
                    None
                } else {
                    Some(BlockMat::Dense(d))
                }
            }
            None => {
                let es: Vec<_> = self.sparse.into_iter().filter(|&(_, v)| v != 0.0).map(|((i, j), v)| (i, j, v)).collect();
                if es.is_empty() {
                    None
                } else if matches!(kind, BlockKind::Psd(_)) && n > 4 && es.len() * 4 > n * n {
                    let mut d = DMatrix::zeros(n, n);
                    BlockMat::Sparse(es).add_to_psd(1.0, &mut d);
                    Some(BlockMat::Dense(d))
                } else {
                    Some(BlockMat::Sparse(es))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum VarLoc {
    Psd(usize),
    /// Free vector of length `n` split as `p − q` at LP offsets `off..off+n` and `off+n..off+2n`.
    Free { off: usize, n: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct StandardForm {
    pub blocks: Vec<BlockKind>,
    /// Sparse row storage: each row lists `(block, coefficient)`.
    pub rows: Vec<Vec<(usize, BlockMat)>>,
    pub b: Vec<f64>,
    pub c: Vec<Option<BlockMat>>,
    locs: Vec<VarLoc>,
    lp_block: Option<usize>,
}

struct RowBuilder<'a> {
    sf_blocks: &'a [BlockKind],
    accs: BTreeMap<usize, BlockAcc>,
}

impl<'a> RowBuilder<'a> {
    fn new(sf_blocks: &'a [BlockKind]) -> Self {
        RowBuilder { sf_blocks, accs: BTreeMap::new() }
    }

    fn add_expr(&mut self, e: &AffineExpr, locs: &[VarLoc], lp_block: Option<usize>, sign: f64) {
        for (v, c) in &e.terms {
            match locs[v.0] {
                VarLoc::Psd(b) => {
                    let n = self.sf_blocks[b].dim();
                    self.accs.entry(b).or_default().add_functional(n, c, sign);
                }
                VarLoc::Free { off, n } => {
                    let lb = lp_block.expect("free variables need an LP block");
                    let x = match c {
                        Coef::Vector(x) => x,
                        _ => unreachable!(),
                    };
                    let acc = self.accs.entry(lb).or_default();
                    for k in 0..n {
                        acc.add_lp(off + k, sign * x[k]);
                        acc.add_lp(off + n + k, -sign * x[k]);
                    }
                }
            }
        }
    }

    fn finish(self) -> Vec<(usize, BlockMat)> {
        let blocks = self.sf_blocks;
        self.accs
            .into_iter()
            .filter_map(|(b, acc)| acc.finish(blocks[b]).map(|m| (b, m)))
            .collect()
    }
}

impl StandardForm {
    /// Compiles an all-real problem (see [`crate::realify`]).
    pub(crate) fn compile(p: &SdpProblem) -> Result<StandardForm, ConicError> {
        if p.has_complex() {
            return Err(ConicError::InvalidProblem("complex variables must be realified first".into()));
        }
        let mut blocks = Vec::new();
        let mut locs = Vec::new();
        let mut lp_len = 0usize;
        for v in &p.vars {
            match v.kind {
                VarKind::RealSymmetric => {
                    blocks.push(BlockKind::Psd(v.dim));
                    locs.push(VarLoc::Psd(blocks.len() - 1));
                }
                VarKind::Free => {
                    locs.push(VarLoc::Free { off: lp_len, n: v.dim });
                    lp_len += 2 * v.dim;
                }
                VarKind::Hermitian => unreachable!(),
            }
        }
        let mut lmi_blocks = Vec::new();
        let mut ge_slacks = Vec::new();
        for c in &p.constraints {
            match c {
                Constraint::Lmi { dim, .. } => {
                    blocks.push(BlockKind::Psd(*dim));
                    lmi_blocks.push(blocks.len() - 1);
                }
                Constraint::Ge(_) => {
                    ge_slacks.push(lp_len);
                    lp_len += 1;
                }
                Constraint::Eq(_) => {}
            }
        }
        let lp_block = if lp_len > 0 {
            blocks.push(BlockKind::Lp(lp_len));
            Some(blocks.len() - 1)
        } else {
            None
        };

        let mut rows = Vec::new();
        let mut b = Vec::new();
        let (mut li, mut gi) = (0, 0);
        for c in &p.constraints {
            match c {
                Constraint::Eq(e) => {
                    let mut rb = RowBuilder::new(&blocks);
                    rb.add_expr(e, &locs, lp_block, 1.0);
                    rows.push(rb.finish());
                    b.push(-e.constant);
                }
                Constraint::Ge(e) => {
                    let mut rb = RowBuilder::new(&blocks);
                    rb.add_expr(e, &locs, lp_block, 1.0);
                    rb.accs.entry(lp_block.unwrap()).or_default().add_lp(ge_slacks[gi], -1.0);
                    gi += 1;
                    rows.push(rb.finish());
                    b.push(-e.constant);
                }
                Constraint::Lmi { dim, upper, margin } => {
                    let sb = lmi_blocks[li];
                    li += 1;
                    let mut k = 0;
                    for i in 0..*dim {
                        for j in i..*dim {
                            let e = &upper[k];
                            k += 1;
                            let mut rb = RowBuilder::new(&blocks);
                            rb.accs.entry(sb).or_default().add_functional(*dim, &Coef::entry(i, j, 1.0), 1.0);
                            rb.add_expr(e, &locs, lp_block, -1.0);
                            rows.push(rb.finish());
                            b.push(e.constant - if i == j { *margin } else { 0.0 });
                        }
                    }
                }
            }
        }

        let mut rb = RowBuilder::new(&blocks);
        rb.add_expr(&p.objective, &locs, lp_block, 1.0);
        let mut c = vec![None; blocks.len()];
        for (bk, m) in rb.finish() {
            c[bk] = Some(m);
        }
        Ok(StandardForm { blocks, rows, b, c, locs, lp_block })
    }

    /// Extracts variable values from block values.
    pub(crate) fn values(&self, psd: &[DMatrix<f64>], lp: &DVector<f64>) -> Vec<VarValue> {
        self.locs
            .iter()
            .map(|l| match *l {
                VarLoc::Psd(b) => VarValue::Real(psd[b].clone()),
                VarLoc::Free { off, n } => VarValue::Vector(DVector::from_fn(n, |k, _| lp[off + k] - lp[off + n + k])),
            })
            .collect()
    }

    pub(crate) fn lp_block(&self) -> Option<usize> {
        self.lp_block
    }

    /// Writes the problem in SDPA sparse format. SDPA's dual form
    /// `max ⟨F0, Y⟩ s.t. ⟨Fi, Y⟩ = ci, Y ⪰ 0` matches this primal with `F0 = −C`.
    pub(crate) fn to_sdpa(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.rows.len());
        let _ = writeln!(s, "{}", self.blocks.len());
        let sizes: Vec<String> = self
            .blocks
            .iter()
            .map(|b| match b {
                BlockKind::Psd(n) => n.to_string(),
                BlockKind::Lp(n) => format!("-{n}"),
            })
            .collect();
        let _ = writeln!(s, "{}", sizes.join(" "));
        let bs: Vec<String> = self.b.iter().map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(s, "{}", bs.join(" "));
        let emit = |mat: usize, blk: usize, m: &BlockMat, sign: f64, s: &mut String| match m {
            BlockMat::Sparse(es) => {
                for &(i, j, v) in es {
                    let _ = writeln!(s, "{mat} {} {} {} {:.17e}", blk + 1, i + 1, j + 1, sign * v);
                }
            }
            BlockMat::Dense(d) => {
                for i in 0..d.nrows() {
                    for j in i..d.ncols() {
                        if d[(i, j)] != 0.0 {
                            let _ = writeln!(s, "{mat} {} {} {} {:.17e}", blk + 1, i + 1, j + 1, sign * d[(i, j)]);
                        }
                    }
                }
            }
        };
        for (blk, m) in self.c.iter().enumerate() {
            if let Some(m) = m {
                emit(0, blk, m, -1.0, &mut s);
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            for (blk, m) in row {
                emit(r + 1, *blk, m, 1.0, &mut s);
            }
        }
        s
    }
}
