//! Small linear-algebra helpers: row-major vectorization of operators,
//! compressed sparse superoperators, and thin wrappers over `nalgebra` for
//! the dense solves.
//!
//! Vectorization is row-major, `vec(rho)[i * d + j] = rho[i][j]`, so that
//! `vec(A rho B) = (A (x) B^T) vec(rho)`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Compressed sparse row matrix over complex numbers.
#[derive(Clone, Debug, Default)]
pub struct Csr {
    pub n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl Csr {
    pub fn from_entries(n: usize, entries: BTreeMap<(usize, usize), C64>) -> Self {
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals = Vec::with_capacity(entries.len());
        for ((r, c), v) in entries {
            if v.norm_sqr() == 0.0 {
                continue;
            }
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `y = A x`.
    #[inline]
    pub fn mul_into(&self, x: &[C64], y: &mut [C64]) {
        for r in 0..self.n {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }

    /// `y += s A x`.
    #[inline]
    pub fn mul_add_into(&self, s: C64, x: &[C64], y: &mut [C64]) {
        for r in 0..self.n {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] += s * acc;
        }
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut out = Array2::zeros((self.n, self.n));
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[[r, self.cols[k]]] += self.vals[k];
            }
        }
        out
    }
}

/// Accumulates `coef * (A (x) B)` into a sparse entry map, `A` and `B` being
/// `d x d` dense operators.
pub fn add_kron(
    acc: &mut BTreeMap<(usize, usize), C64>,
    coef: C64,
    a: &Array2<C64>,
    b: &Array2<C64>,
) {
    let d = a.nrows();
    let nz_b: Vec<(usize, usize, C64)> = b
        .indexed_iter()
        .filter(|(_, v)| v.norm_sqr() != 0.0)
        .map(|((i, j), v)| (i, j, *v))
        .collect();
    for ((i, k), av) in a.indexed_iter() {
        if av.norm_sqr() == 0.0 {
            continue;
        }
        for &(j, l, bv) in &nz_b {
            *acc.entry((i * d + j, k * d + l)).or_insert(C64::new(0.0, 0.0)) += coef * av * bv;
        }
    }
}

#[inline]
pub fn vec_of(rho: &Array2<C64>) -> Vec<C64> {
    rho.iter().copied().collect()
}

#[inline]
pub fn mat_of(v: &[C64], d: usize) -> Array2<C64> {
    Array2::from_shape_vec((d, d), v.to_vec()).expect("length d*d")
}

/// Trace of a row-major vectorized operator.
#[inline]
pub fn vec_trace(v: &[C64], d: usize) -> C64 {
    (0..d).map(|i| v[i * d + i]).sum()
}

/// `Tr(A X)` for a dense `A` and vectorized `X`.
#[inline]
pub fn trace_product(a: &Array2<C64>, x: &[C64]) -> C64 {
    let d = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..d {
        for k in 0..d {
            let aik = a[[i, k]];
            if aik.norm_sqr() != 0.0 {
                acc += aik * x[k * d + i];
            }
        }
    }
    acc
}

/// `A X A^+` for vectorized `X`.
pub fn sandwich(a: &Array2<C64>, x: &[C64], out: &mut [C64]) {
    let d = a.nrows();
    let mut tmp = vec![C64::new(0.0, 0.0); d * d];
    // tmp = A X
    for i in 0..d {
        for k in 0..d {
            let aik = a[[i, k]];
            if aik.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..d {
                tmp[i * d + j] += aik * x[k * d + j];
            }
        }
    }
    // out = tmp A^+
    for v in out.iter_mut() {
        *v = C64::new(0.0, 0.0);
    }
    for j in 0..d {
        for l in 0..d {
            let ajl = a[[j, l]].conj();
            if ajl.norm_sqr() == 0.0 {
                continue;
            }
            for i in 0..d {
                out[i * d + j] += tmp[i * d + l] * ajl;
            }
        }
    }
}

fn to_nalgebra(a: &Array2<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Solves the dense system `A x = b`. Fails when a pivot is negligible
/// relative to the largest one.
pub fn solve_dense(a: &Array2<C64>, b: &[C64]) -> Result<Vec<C64>> {
    let n = a.nrows();
    let lu = to_nalgebra(a).lu();
    let u = lu.u();
    let mut max_p: f64 = 0.0;
    let mut min_p = f64::INFINITY;
    for i in 0..n {
        let p = u[(i, i)].norm();
        max_p = max_p.max(p);
        min_p = min_p.min(p);
    }
    if !(min_p > 1e-13 * max_p) {
        return Err(Error::SingularGenerator {
            pivot: if max_p > 0.0 { min_p / max_p } else { 0.0 },
        });
    }
    let rhs = nalgebra::DVector::from_column_slice(b);
    let x = lu
        .solve(&rhs)
        .ok_or(Error::SingularGenerator { pivot: 0.0 })?;
    Ok(x.iter().copied().collect())
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &Array2<C64>) -> Vec<f64> {
    let m = to_nalgebra(a);
    let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(h);
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn kron_superoperator_matches_dense_product() {
        let a = Array2::from_shape_fn((3, 3), |(i, j)| c(i as f64 - 0.5 * j as f64, 0.3 * j as f64));
        let b = Array2::from_shape_fn((3, 3), |(i, j)| c(0.2 * (i * j) as f64, i as f64 - 1.0));
        let x = Array2::from_shape_fn((3, 3), |(i, j)| c((i + 2 * j) as f64, 1.0 - i as f64));
        let mut acc = BTreeMap::new();
        add_kron(&mut acc, c(1.0, 0.0), &a, &b.t().to_owned());
        let s = Csr::from_entries(9, acc);
        let mut y = vec![c(0.0, 0.0); 9];
        s.mul_into(&vec_of(&x), &mut y);
        let expect = a.dot(&x).dot(&b);
        for (u, v) in y.iter().zip(expect.iter()) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn sandwich_and_trace_product() {
        let a = Array2::from_shape_fn((2, 2), |(i, j)| c(i as f64 + 1.0, j as f64 - 0.5));
        let x = Array2::from_shape_fn((2, 2), |(i, j)| c((i * 2 + j) as f64, 0.1));
        let mut out = vec![c(0.0, 0.0); 4];
        sandwich(&a, &vec_of(&x), &mut out);
        let ad = a.t().mapv(|v| v.conj());
        let expect = a.dot(&x).dot(&ad);
        for (u, v) in out.iter().zip(expect.iter()) {
            assert!((u - v).norm() < 1e-12);
        }
        let tr = trace_product(&a, &vec_of(&x));
        let ax = a.dot(&x);
        assert!((tr - (ax[[0, 0]] + ax[[1, 1]])).norm() < 1e-12);
    }

    #[test]
    fn singular_system_is_reported() {
        let a = Array2::from_shape_fn((2, 2), |(_, _)| c(1.0, 0.0));
        assert!(matches!(
            solve_dense(&a, &[c(1.0, 0.0), c(0.0, 0.0)]),
            Err(Error::SingularGenerator { .. })
        ));
    }

    #[test]
    fn hermitian_spectrum() {
        let mut a = Array2::zeros((2, 2));
        a[[0, 1]] = c(0.0, -1.0);
        a[[1, 0]] = c(0.0, 1.0);
        let ev = hermitian_eigenvalues(&a);
        assert!((ev[0] + 1.0).abs() < 1e-12 && (ev[1] - 1.0).abs() < 1e-12);
    }
}
