//! Small complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// `v v^H`.
pub fn outer(v: &CVec) -> CMat {
    v * v.adjoint()
}

/// `diag(u^H) · m`, i.e. row `i` of `m` scaled by `conj(u_i)`.
pub fn diag_conj_mul(u: &CVec, m: &CMat) -> CMat {
    assert_eq!(u.len(), m.nrows());
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let s = u[i].conj();
        row.iter_mut().for_each(|x| *x *= s);
    }
    out
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> Complex64 {
    assert_eq!(a.ncols(), b.nrows());
    assert_eq!(a.nrows(), b.ncols());
    let mut acc = ZERO;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Real part of `Tr(A B)`; exact for Hermitian arguments.
pub fn trace_re(a: &CMat, b: &CMat) -> f64 {
    trace_product(a, b).re
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

pub fn trace(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

pub fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Returns `(values, vectors)` with vectors as columns.
pub fn hermitian_eigen(x: &CMat) -> (Vec<f64>, CMat) {
    let n = x.nrows();
    let eig = hermitian_part(x).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Largest eigenvalue and a unit eigenvector of a Hermitian matrix.
///
/// The eigenvector's phase is fixed so that its largest-magnitude entry is
/// real and positive. When the top eigenvalue is repeated the returned vector
/// is one arbitrary member of the eigenspace.
pub fn principal_eigpair(x: &CMat) -> (f64, CVec) {
    assert_eq!(x.nrows(), x.ncols(), "principal_eigpair needs a square matrix");
    let (values, vectors) = hermitian_eigen(x);
    let mut e: CVec = vectors.column(0).into_owned();
    let pivot = e
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let p = e[pivot];
    if p.norm() > 0.0 {
        let rot = p.conj() / p.norm();
        e.iter_mut().for_each(|z| *z *= rot);
    }
    (values[0], e)
}

/// Ratio `λ₂/λ₁` of a Hermitian PSD matrix; 0 for rank ≤ 1 or the zero matrix.
pub fn second_to_first_eigen_ratio(x: &CMat) -> f64 {
    if x.nrows() < 2 {
        return 0.0;
    }
    let (values, _) = hermitian_eigen(x);
    if values[0] <= 0.0 {
        return 0.0;
    }
    (values[1].max(0.0)) / values[0]
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub fn randn_c<R: Rng>(rng: &mut R) -> Complex64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    pub fn random_cvec<R: Rng>(rng: &mut R, n: usize) -> CVec {
        CVec::from_fn(n, |_, _| randn_c(rng))
    }

    pub fn random_cmat<R: Rng>(rng: &mut R, r: usize, c: usize) -> CMat {
        CMat::from_fn(r, c, |_, _| randn_c(rng))
    }

    pub fn random_psd<R: Rng>(rng: &mut R, n: usize) -> CMat {
        let a = random_cmat(rng, n, n);
        &a * a.adjoint()
    }
}
