//! Dense linear-algebra helpers shared by the quotient and dynamics code.
//!
//! All quotient-space operators are stored as `DMatrix<C64>`. Hermitian
//! matrices are diagonalized with nalgebra's symmetric eigensolver and matrix
//! functions are applied through the resulting spectral decomposition.

use nalgebra::{DMatrix, DVector};

use crate::C64;

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<C64>,
}

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(c)
}

/// Symmetrize `(m + m†)/2`.
pub fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * c(0.5)
}

/// Largest entry modulus.
pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// `max |m - m†|`, relative to `max |m|` when that is nonzero.
pub fn hermiticity_residual(m: &DMatrix<C64>) -> f64 {
    let scale = max_abs(m);
    let diff = max_abs(&(m - m.adjoint()));
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn hermitian_eigen(m: &DMatrix<C64>) -> HermitianEigen {
    let n = m.nrows();
    if n == 0 {
        return HermitianEigen {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    HermitianEigen { values, vectors }
}

/// `f(m)` for Hermitian `m` through its spectral decomposition.
pub fn spectral_apply<F: Fn(f64) -> C64>(m: &DMatrix<C64>, f: F) -> DMatrix<C64> {
    let eig = hermitian_eigen(m);
    spectral_apply_eigen(&eig, f)
}

pub fn spectral_apply_eigen<F: Fn(f64) -> C64>(eig: &HermitianEigen, f: F) -> DMatrix<C64> {
    let n = eig.values.len();
    let mut scaled = eig.vectors.clone();
    for (j, &lam) in eig.values.iter().enumerate() {
        let fj = f(lam);
        for i in 0..n {
            scaled[(i, j)] *= fj;
        }
    }
    scaled * eig.vectors.adjoint()
}

/// Spectral norm (largest singular value).
pub fn op_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |a, &s| a.max(s))
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<C64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank: singular values above `tol * σ_max`.
pub fn svd_rank(m: &DMatrix<C64>, tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&x| x > tol * smax).count(),
        _ => 0,
    }
}

/// Outcome of a diagonally pivoted Cholesky factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotedCholesky {
    pub rank: usize,
    pub pivots: Vec<f64>,
    /// Most negative remaining diagonal entry when the factorization stopped.
    pub min_remaining_diagonal: f64,
    /// True when some remaining diagonal fell below `-tol * d_max`.
    pub negative_pivot: bool,
}

/// Diagonally pivoted Cholesky of a Hermitian matrix, stopping when the
/// largest remaining diagonal drops to `tol * d_max` (`d_max` the largest
/// initial diagonal). Independent of any eigensolver.
pub fn pivoted_cholesky(g: &DMatrix<C64>, tol: f64) -> PivotedCholesky {
    let n = g.nrows();
    let mut a = hermitian_part(g);
    let d_max = (0..n).map(|i| a[(i, i)].re).fold(0.0_f64, f64::max);
    let threshold = tol * d_max;
    let mut used = vec![false; n];
    let mut pivots = Vec::new();
    let mut negative_pivot = false;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !used[i]) {
            let d = a[(i, i)].re;
            if d < -threshold {
                negative_pivot = true;
            }
            if best.is_none_or(|(_, b)| d > b) {
                best = Some((i, d));
            }
        }
        let Some((p, d)) = best else { break };
        if d <= threshold {
            break;
        }
        used[p] = true;
        pivots.push(d);
        let sq = d.sqrt();
        let col: Vec<C64> = (0..n).map(|i| a[(i, p)] / sq).collect();
        for i in (0..n).filter(|&i| !used[i]) {
            for j in (0..n).filter(|&j| !used[j]) {
                let upd = col[i] * col[j].conj();
                a[(i, j)] -= upd;
            }
        }
    }
    let min_remaining_diagonal = (0..n)
        .filter(|&i| !used[i])
        .map(|i| a[(i, i)].re)
        .fold(f64::INFINITY, f64::min);
    PivotedCholesky {
        rank: pivots.len(),
        pivots,
        min_remaining_diagonal: if min_remaining_diagonal.is_finite() {
            min_remaining_diagonal
        } else {
            0.0
        },
        negative_pivot,
    }
}

/// Orthonormal basis (columns) of the orthogonal complement of the column
/// span of `m`, using the left singular vectors beyond the numerical rank.
pub fn orthogonal_complement(m: &DMatrix<C64>, tol: f64) -> DMatrix<C64> {
    let rows = m.nrows();
    if m.ncols() == 0 {
        return DMatrix::identity(rows, rows);
    }
    // Left singular vectors of m are the eigenvectors of m m†.
    let gram = m * m.adjoint();
    let eig = hermitian_eigen(&gram);
    let top = eig.values.last().copied().unwrap_or(0.0).max(0.0);
    // σ² threshold matches a σ-relative tolerance.
    let cut = (tol * tol) * top;
    let keep: Vec<usize> = (0..rows).filter(|&i| eig.values[i] <= cut).collect();
    DMatrix::from_fn(rows, keep.len(), |r, k| eig.vectors[(r, keep[k])])
}

pub fn column(m: &DMatrix<C64>, j: usize) -> DVector<C64> {
    m.column(j).into_owned()
}

/// `⟨u, v⟩ = Σ conj(u_i) v_i`.
pub fn inner(u: &DVector<C64>, v: &DVector<C64>) -> C64 {
    u.dotc(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(rows: usize, data: &[f64]) -> DMatrix<C64> {
        to_complex(&DMatrix::from_row_slice(rows, rows, data))
    }

    #[test]
    fn eigen_sorted_ascending() {
        let e = hermitian_eigen(&real(2, &[1.0, 2.0, 2.0, 1.0]));
        assert!((e.values[0] + 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn spectral_log_of_diagonal() {
        let m = real(2, &[(-1.0f64).exp(), 0.0, 0.0, (-2.0f64).exp()]);
        let h = spectral_apply(&m, |x| c(-x.ln()));
        assert!((h[(0, 0)].re - 1.0).abs() < 1e-14);
        assert!((h[(1, 1)].re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn pivoted_cholesky_detects_rank_and_indefiniteness() {
        let pc = pivoted_cholesky(&real(2, &[1.0, 1.0, 1.0, 1.0]), 1e-10);
        assert_eq!(pc.rank, 1);
        assert!(!pc.negative_pivot);
        let bad = pivoted_cholesky(&real(2, &[1.0, 2.0, 2.0, 1.0]), 1e-10);
        assert!(bad.negative_pivot);
    }

    #[test]
    fn complement_is_orthogonal() {
        let m = real(3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let q = orthogonal_complement(&m, 1e-10);
        assert_eq!(q.ncols(), 1);
        assert!((q[(2, 0)].norm() - 1.0).abs() < 1e-12);
    }
}
