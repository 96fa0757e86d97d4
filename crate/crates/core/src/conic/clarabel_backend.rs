use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use num_complex::Complex64;

// Linked for the BLAS/LAPACK symbols Clarabel's PSD cones need.
use openblas_src as _;

use super::{Affine, SdpProblem, SdpSolution, Sense, SolutionValues, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, CMat};

/// Column layout of the real decision vector: scalars first, then one block
/// per Hermitian variable holding `n` diagonal entries followed by
/// `(re, im)` pairs of the strict upper triangle in row-major order.
struct Layout {
    n_scalars: usize,
    offsets: Vec<usize>,
    dims: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(problem: &SdpProblem) -> Self {
        let n_scalars = problem.scalars.len();
        let mut offsets = Vec::with_capacity(problem.hermitians.len());
        let mut dims = Vec::with_capacity(problem.hermitians.len());
        let mut next = n_scalars;
        for (_, n) in &problem.hermitians {
            offsets.push(next);
            dims.push(*n);
            next += n * n;
        }
        Layout { n_scalars, offsets, dims, total: next }
    }

    fn diag(&self, block: usize, i: usize) -> usize {
        self.offsets[block] + i
    }

    /// Columns of `(Re X_ij, Im X_ij)` for `i < j`.
    fn pair(&self, block: usize, i: usize, j: usize) -> (usize, usize) {
        debug_assert!(i < j);
        let n = self.dims[block];
        // pairs preceding row i: Σ_{r<i} (n-1-r)
        let before = i * (2 * n - i - 1) / 2;
        let k = before + (j - i - 1);
        let c = self.offsets[block] + n + 2 * k;
        (c, c + 1)
    }

    fn unpack(&self, x: &[f64]) -> (Vec<f64>, Vec<CMat>) {
        let scalars = x[..self.n_scalars].to_vec();
        let blocks = (0..self.dims.len())
            .map(|b| {
                let n = self.dims[b];
                let mut m = CMat::zeros(n, n);
                for i in 0..n {
                    m[(i, i)] = Complex64::new(x[self.diag(b, i)], 0.0);
                    for j in i + 1..n {
                        let (re, im) = self.pair(b, i, j);
                        let z = Complex64::new(x[re], x[im]);
                        m[(i, j)] = z;
                        m[(j, i)] = z.conj();
                    }
                }
                m
            })
            .collect();
        (scalars, blocks)
    }
}

/// Sparse linear form `constant + Σ coef·x[col]`.
#[derive(Default, Clone)]
struct Row {
    constant: f64,
    terms: Vec<(usize, f64)>,
}

impl Row {
    fn scaled(mut self, k: f64) -> Self {
        self.constant *= k;
        self.terms.iter_mut().for_each(|(_, c)| *c *= k);
        self
    }
}

fn lower_affine(layout: &Layout, e: &Affine) -> Row {
    let mut row = Row { constant: e.constant, terms: Vec::new() };
    for (v, c) in &e.scalars {
        row.terms.push((v.0, *c));
    }
    for (x, a) in &e.traces {
        let b = x.0;
        let n = layout.dims[b];
        let a = hermitian_part(a);
        for i in 0..n {
            row.terms.push((layout.diag(b, i), a[(i, i)].re));
            for j in i + 1..n {
                let (re, im) = layout.pair(b, i, j);
                row.terms.push((re, 2.0 * a[(i, j)].re));
                row.terms.push((im, 2.0 * a[(i, j)].im));
            }
        }
    }
    row
}

/// Entry `(r, c)` of the real embedding `[[Re X, −Im X], [Im X, Re X]]`.
fn embedding_entry(layout: &Layout, block: usize, r: usize, c: usize) -> Row {
    let n = layout.dims[block];
    let (bi, i) = (r / n, r % n);
    let (bj, j) = (c / n, c % n);
    let re_part = |i: usize, j: usize| -> Row {
        if i == j {
            Row { constant: 0.0, terms: vec![(layout.diag(block, i), 1.0)] }
        } else {
            let (lo, hi) = (i.min(j), i.max(j));
            Row { constant: 0.0, terms: vec![(layout.pair(block, lo, hi).0, 1.0)] }
        }
    };
    let im_part = |i: usize, j: usize| -> Row {
        if i == j {
            Row::default()
        } else if i < j {
            Row { constant: 0.0, terms: vec![(layout.pair(block, i, j).1, 1.0)] }
        } else {
            Row { constant: 0.0, terms: vec![(layout.pair(block, j, i).1, -1.0)] }
        }
    };
    match (bi, bj) {
        (0, 0) | (1, 1) => re_part(i, j),
        (0, 1) => im_part(i, j).scaled(-1.0),
        _ => im_part(i, j),
    }
}

#[derive(Clone, Copy)]
enum ConeKind {
    Zero,
    Nonneg,
    Soc(usize),
    Psd(usize),
}

/// Rows are stored in the form `s = constant + Σ coef·x` with `s ∈ cone`.
struct ConeBlock {
    kind: ConeKind,
    rows: Vec<Row>,
}

fn svec_rows(dim: usize, entry: impl Fn(usize, usize) -> Row) -> Vec<Row> {
    let mut rows = Vec::with_capacity(dim * (dim + 1) / 2);
    for c in 0..dim {
        for r in 0..=c {
            let k = if r == c { 1.0 } else { std::f64::consts::SQRT_2 };
            rows.push(entry(r, c).scaled(k));
        }
    }
    rows
}

fn build_blocks(problem: &SdpProblem, layout: &Layout) -> Vec<ConeBlock> {
    let mut zero = Vec::new();
    let mut nonneg = Vec::new();
    let mut others = Vec::new();

    for c in &problem.linear {
        let row = lower_affine(layout, &c.expr);
        match c.sense {
            Sense::Eq => zero.push(row),
            Sense::Ge => nonneg.push(row),
            Sense::Le => nonneg.push(row.scaled(-1.0)),
        }
    }
    for (idx, (_, b)) in problem.scalars.iter().enumerate() {
        if let Some(l) = b.lower {
            nonneg.push(Row { constant: -l, terms: vec![(idx, 1.0)] });
        }
        if let Some(u) = b.upper {
            nonneg.push(Row { constant: u, terms: vec![(idx, -1.0)] });
        }
    }
    for s in &problem.socs {
        let mut rows = vec![lower_affine(layout, &s.head)];
        rows.extend(s.tail.iter().map(|e| lower_affine(layout, e)));
        others.push(ConeBlock { kind: ConeKind::Soc(rows.len()), rows });
    }
    for l in &problem.lmis {
        let d = l.entries.len();
        if d == 1 {
            nonneg.push(lower_affine(layout, &l.entries[0][0]));
        } else {
            let rows = svec_rows(d, |r, c| lower_affine(layout, &l.entries[r][c]));
            others.push(ConeBlock { kind: ConeKind::Psd(d), rows });
        }
    }
    for (b, &n) in layout.dims.iter().enumerate() {
        if n == 1 {
            nonneg.push(Row { constant: 0.0, terms: vec![(layout.diag(b, 0), 1.0)] });
        } else {
            let rows = svec_rows(2 * n, |r, c| embedding_entry(layout, b, r, c));
            others.push(ConeBlock { kind: ConeKind::Psd(2 * n), rows });
        }
    }

    let mut blocks = Vec::new();
    if !zero.is_empty() {
        blocks.push(ConeBlock { kind: ConeKind::Zero, rows: zero });
    }
    if !nonneg.is_empty() {
        blocks.push(ConeBlock { kind: ConeKind::Nonneg, rows: nonneg });
    }
    blocks.extend(others);
    blocks
}

fn row_value(row: &Row, x: &[f64]) -> f64 {
    row.constant + row.terms.iter().map(|(c, v)| v * x[*c]).sum::<f64>()
}

fn smat(dim: usize, s: &[f64]) -> nalgebra::DMatrix<f64> {
    let mut m = nalgebra::DMatrix::zeros(dim, dim);
    let mut k = 0;
    for c in 0..dim {
        for r in 0..=c {
            let v = if r == c { s[k] } else { s[k] / std::f64::consts::SQRT_2 };
            m[(r, c)] = v;
            m[(c, r)] = v;
            k += 1;
        }
    }
    m
}

fn cone_violation(blocks: &[ConeBlock], x: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for b in blocks {
        let s: Vec<f64> = b.rows.iter().map(|r| row_value(r, x)).collect();
        let v = match b.kind {
            ConeKind::Zero => s.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            ConeKind::Nonneg => s.iter().fold(0.0_f64, |m, v| m.max(-v)),
            ConeKind::Soc(_) => {
                let t = s[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                (t - s[0]).max(0.0)
            }
            ConeKind::Psd(d) => {
                let ev = smat(d, &s).symmetric_eigen().eigenvalues;
                (-ev.min()).max(0.0)
            }
        };
        worst = worst.max(v);
    }
    worst
}

/// Solves `problem` with Clarabel at the given relative tolerance.
///
/// Solver statuses are mapped onto [`SolveStatus`]; reduced-accuracy
/// solutions count as optimal. Only malformed problems produce `Err`.
pub fn solve(problem: &SdpProblem, tolerance: f64) -> Result<SdpSolution> {
    problem.validate()?;
    let layout = Layout::new(problem);
    let blocks = build_blocks(problem, &layout);

    let n = layout.total;
    let (mut ri, mut ci, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::new();
    let mut cones = Vec::with_capacity(blocks.len());
    let mut m = 0;
    for blk in &blocks {
        for row in &blk.rows {
            // s = b − A x  with  s = constant + g·x  ⇒  A = −g, b = constant
            for &(c, v) in &row.terms {
                if v != 0.0 {
                    ri.push(m);
                    ci.push(c);
                    vals.push(-v);
                }
            }
            b.push(row.constant);
            m += 1;
        }
        cones.push(match blk.kind {
            ConeKind::Zero => SupportedConeT::ZeroConeT(blk.rows.len()),
            ConeKind::Nonneg => SupportedConeT::NonnegativeConeT(blk.rows.len()),
            ConeKind::Soc(d) => SupportedConeT::SecondOrderConeT(d),
            ConeKind::Psd(d) => SupportedConeT::PSDTriangleConeT(d),
        });
    }
    let a = CscMatrix::new_from_triplets(m, n, ri, ci, vals);
    let p = CscMatrix::<f64>::zeros((n, n));

    let obj = lower_affine(&layout, &problem.objective);
    let mut q = vec![0.0; n];
    for &(c, v) in &obj.terms {
        q[c] -= v;
    }

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(300)
        .direct_solve_method("faer".to_string())
        .tol_gap_abs(tolerance)
        .tol_gap_rel(tolerance)
        .tol_feas(tolerance)
        .tol_ktratio(tolerance.sqrt().min(1e-6))
        .build()
        .map_err(|e| Error::Solver(format!("settings: {e:?}")))?;

    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| Error::Solver(format!("setup: {e:?}")))?;
    solver.solve();

    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    };
    if status != SolveStatus::Optimal {
        log::debug!("conic solve ended with {:?}", sol.status);
        return Ok(SdpSolution::failed(status, sol.iterations));
    }
    let (scalars, hermitians) = layout.unpack(&sol.x);
    let objective = problem.objective.eval(&scalars, &hermitians);
    Ok(SdpSolution {
        status,
        objective,
        iterations: sol.iterations,
        primal_violation: cone_violation(&blocks, &sol.x),
        values: Some(SolutionValues { scalars, hermitians }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_indices_are_dense_and_unique() {
        let mut p = SdpProblem::new();
        p.add_scalar("s", super::super::Bounds::FREE);
        p.add_psd("X", 4);
        p.add_psd("Y", 3);
        let l = Layout::new(&p);
        assert_eq!(l.total, 1 + 16 + 9);
        let mut seen = std::collections::BTreeSet::new();
        for (b, &n) in l.dims.iter().enumerate() {
            for i in 0..n {
                seen.insert(l.diag(b, i));
                for j in i + 1..n {
                    let (re, im) = l.pair(b, i, j);
                    seen.insert(re);
                    seen.insert(im);
                }
            }
        }
        assert_eq!(seen.len(), l.total - 1);
        assert_eq!(*seen.iter().next().unwrap(), 1);
        assert_eq!(*seen.iter().last().unwrap(), l.total - 1);
    }

    #[test]
    fn embedding_round_trip_preserves_spectrum() {
        // The real embedding of a Hermitian X has each eigenvalue of X twice.
        use crate::linalg::{hermitian_eigen, testutil::random_psd};
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x = random_psd(&mut rng, 3);
        let mut p = SdpProblem::new();
        p.add_psd("X", 3);
        let layout = Layout::new(&p);
        let mut v = vec![0.0; layout.total];
        for i in 0..3 {
            v[layout.diag(0, i)] = x[(i, i)].re;
            for j in i + 1..3 {
                let (re, im) = layout.pair(0, i, j);
                v[re] = x[(i, j)].re;
                v[im] = x[(i, j)].im;
            }
        }
        let (_, back) = layout.unpack(&v);
        assert!((&back[0] - &x).norm() < 1e-12);

        let s: Vec<f64> = svec_rows(6, |r, c| embedding_entry(&layout, 0, r, c))
            .iter()
            .map(|row| row_value(row, &v))
            .collect();
        let mut emb: Vec<f64> = smat(6, &s).symmetric_eigen().eigenvalues.iter().copied().collect();
        emb.sort_by(f64::total_cmp);
        let (mut ev, _) = hermitian_eigen(&x);
        ev.sort_by(f64::total_cmp);
        for (k, e) in ev.iter().enumerate() {
            assert!((emb[2 * k] - e).abs() < 1e-9);
            assert!((emb[2 * k + 1] - e).abs() < 1e-9);
        }
    }
}
