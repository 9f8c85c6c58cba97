//! The reflection-positive form on positive-time polynomial vectors, its
//! null-space quotient, and the quantization map `A ↦ Â`.
//!
//! Euclidean vectors are finite combinations of monomials
//! `Φ(f₁)⋯Φ(f_n)Ω`. For the Gaussian measure the form
//! `⟨A, ΘB⟩ = ⟨Φ(f₁)⋯Φ(f_m) Φ(ϑg₁)⋯Φ(ϑg_n)⟩` is a Wick pairing sum, so
//! every matrix element below is exact up to rounding.

use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::gaussian::{pairing_sum, CovarianceOperator, MOMENT_CAP};
use crate::lattice::{LatticeGeometry, Reflection, Site, TestFunction};
use crate::linalg::{self, c, hermitian_eigen};
use crate::{Error, Result, C64};

/// Default relative rank tolerance: eigenvalues `λ ≤ tol·λ_max` are null.
pub const RANK_TOL: f64 = 1e-10;

/// Ordered product `Φ(f₁)⋯Φ(f_n)` acting on the Euclidean vacuum.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub factors: Vec<TestFunction>,
}

impl Monomial {
    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    pub fn deltas(geom: &Arc<LatticeGeometry>, sites: &[Site]) -> Result<Self> {
        let factors = sites
            .iter()
            .map(|s| TestFunction::delta(geom, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Monomial { factors })
    }
}

/// Finite combination `Σ c_k Φ(f_{k,1})⋯Φ(f_{k,n_k}) Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanVector {
    pub terms: Vec<(C64, Monomial)>,
}

impl EuclideanVector {
    pub fn vacuum() -> Self {
        EuclideanVector {
            terms: vec![(c(1.0), Monomial { factors: Vec::new() })],
        }
    }

    pub fn monomial(factors: Vec<TestFunction>) -> Self {
        EuclideanVector {
            terms: vec![(c(1.0), Monomial { factors })],
        }
    }

    pub fn deltas(geom: &Arc<LatticeGeometry>, sites: &[Site]) -> Result<Self> {
        Ok(EuclideanVector {
            terms: vec![(c(1.0), Monomial::deltas(geom, sites)?)],
        })
    }

    pub fn degree(&self) -> usize {
        self.terms.iter().map(|(_, m)| m.degree()).max().unwrap_or(0)
    }

    pub fn scaled(&self, z: C64) -> Self {
        EuclideanVector {
            terms: self.terms.iter().map(|(k, m)| (k * z, m.clone())).collect(),
        }
    }

    pub fn add(&self, other: &EuclideanVector) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        EuclideanVector { terms }
    }

    /// Translate every factor by `a`.
    pub fn shift(&self, a: &[i64]) -> Result<Self> {
        let terms = self
            .terms
            .iter()
            .map(|(k, m)| {
                let factors = m.factors.iter().map(|f| f.shift(a)).collect::<Result<Vec<_>>>()?;
                Ok((*k, Monomial { factors }))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EuclideanVector { terms })
    }

    /// `Φ(h) A`.
    pub fn times_field(&self, h: &TestFunction) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(k, m)| {
                let mut factors = Vec::with_capacity(m.factors.len() + 1);
                factors.push(h.clone());
                factors.extend(m.factors.iter().cloned());
                (*k, Monomial { factors })
            })
            .collect();
        EuclideanVector { terms }
    }

    /// First factor site outside the admissible positive-time support, if any.
    pub fn support_violation(&self, geom: &LatticeGeometry) -> Option<Site> {
        let t_min = match geom.reflection {
            Reflection::Site => 0,
            Reflection::Link => 1,
        };
        self.terms
            .iter()
            .flat_map(|(_, m)| m.factors.iter())
            .flat_map(|f| f.support())
            .find(|s| s[0] < t_min)
    }
}

fn check_support(geom: &LatticeGeometry, v: &EuclideanVector) -> Result<()> {
    match v.support_violation(geom) {
        Some(site) => Err(Error::SupportViolation { site }),
        None => Ok(()),
    }
}

/// `⟨A, ΘB⟩` for two monomials: the Wick moment of `A`'s factors followed
/// by the reflected factors of `B`.
pub fn gram_entry(cov: &CovarianceOperator, a: &Monomial, b: &Monomial) -> Result<f64> {
    let n = a.degree() + b.degree();
    if n > MOMENT_CAP {
        return Err(Error::ComplexityGuard {
            what: "moment order",
            got: n,
            cap: MOMENT_CAP,
        });
    }
    if n % 2 == 1 {
        return Ok(0.0);
    }
    let fields: Vec<TestFunction> = a
        .factors
        .iter()
        .cloned()
        .chain(b.factors.iter().map(|g| g.reflect()))
        .collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = cov.bilinear(&fields[i], &fields[j]);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Ok(pairing_sum(n, |i, j| w[(i, j)]).0)
}

/// Sesquilinear `⟨A, ΘB⟩` over the terms of two Euclidean vectors.
pub fn rp_form(cov: &CovarianceOperator, a: &EuclideanVector, b: &EuclideanVector) -> Result<C64> {
    let mut acc = c(0.0);
    for (ka, ma) in &a.terms {
        for (kb, mb) in &b.terms {
            let g = gram_entry(cov, ma, mb)?;
            if g != 0.0 {
                acc += ka.conj() * kb * g;
            }
        }
    }
    Ok(acc)
}

/// Gram matrix `G_ij = ⟨A_i, ΘA_j⟩` of a generator list.
#[derive(Debug, Clone)]
pub struct RPGram {
    pub generators: Vec<EuclideanVector>,
    pub matrix: DMatrix<C64>,
}

impl RPGram {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for i in 0..self.matrix.nrows() {
            let row: Vec<String> = self.matrix.row(i).iter().map(|z| format!("{:e}", z.re)).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn assemble_gram(cov: &CovarianceOperator, generators: Vec<EuclideanVector>) -> Result<RPGram> {
    let geom = cov.geometry();
    for g in &generators {
        check_support(geom, g)?;
    }
    let n = generators.len();
    let mut matrix = DMatrix::from_element(n, n, c(0.0));
    for i in 0..n {
        for j in i..n {
            let v = rp_form(cov, &generators[i], &generators[j])?;
            matrix[(i, j)] = v;
            matrix[(j, i)] = v.conj();
        }
    }
    Ok(RPGram { generators, matrix })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RpVerdict {
    pub pass: bool,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Pass iff `λ_min ≥ -tol·λ_max`.
pub fn check_rp(gram: &RPGram, tol: f64) -> RpVerdict {
    let eig = hermitian_eigen(&gram.matrix);
    let min_eigenvalue = eig.values.first().copied().unwrap_or(0.0);
    let max_eigenvalue = eig.values.last().copied().unwrap_or(0.0);
    RpVerdict {
        pass: min_eigenvalue >= -tol * max_eigenvalue.abs(),
        min_eigenvalue,
        max_eigenvalue,
    }
}

/// A block of quotient coordinates belonging to one polynomial degree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sector {
    pub degree: usize,
    pub range: Range<usize>,
}

/// Orthonormal coordinates on the quotient `ℋ = span{Â_i}`.
#[derive(Debug, Clone)]
pub struct QuotientBasis {
    pub generators: Vec<EuclideanVector>,
    pub gram: DMatrix<C64>,
    pub rank: usize,
    /// `V` (generators × rank) with `V† G V = I`.
    pub isometry: DMatrix<C64>,
    pub tolerance: f64,
    pub lambda_max: f64,
    /// Degree blocks; a single block for an ungraded quotient.
    pub sectors: Vec<Sector>,
}

fn refuse_if_not_rp(gram: &RPGram, tol: f64) -> Result<f64> {
    let verdict = check_rp(gram, tol);
    if !verdict.pass {
        return Err(Error::ReflectionPositivity {
            min_eigenvalue: verdict.min_eigenvalue,
            max_eigenvalue: verdict.max_eigenvalue,
        });
    }
    Ok(verdict.max_eigenvalue)
}

/// Quotient by the null space: `G = UΛU†`, keep `λ > tol·λ_max`,
/// `V = U_kept Λ_kept^{-1/2}`.
pub fn quotient(gram: &RPGram, tol: f64) -> Result<QuotientBasis> {
    let lambda_max = refuse_if_not_rp(gram, tol)?;
    let eig = hermitian_eigen(&gram.matrix);
    let keep: Vec<usize> = (0..eig.values.len())
        .filter(|&i| eig.values[i] > tol * lambda_max)
        .collect();
    let n = gram.matrix.nrows();
    let isometry = DMatrix::from_fn(n, keep.len(), |r, k| {
        eig.vectors[(r, keep[k])] / eig.values[keep[k]].sqrt()
    });
    let degree = gram.generators.iter().map(|g| g.degree()).max().unwrap_or(0);
    Ok(QuotientBasis {
        generators: gram.generators.clone(),
        gram: gram.matrix.clone(),
        rank: keep.len(),
        isometry,
        tolerance: tol,
        lambda_max,
        sectors: vec![Sector {
            degree,
            range: 0..keep.len(),
        }],
    })
}

/// Degree-graded quotient: sector `n` is the part of the degree-`≤ n` span
/// orthogonal to the degree-`< n` span (the Wick-ordered sector). Operators
/// that preserve the polynomial filtration and are self-adjoint are then
/// block diagonal in these coordinates.
pub fn quotient_graded(gram: &RPGram, tol: f64) -> Result<QuotientBasis> {
    let lambda_max = refuse_if_not_rp(gram, tol)?;
    let g = &gram.matrix;
    let n = g.nrows();
    let mut degrees: Vec<usize> = gram.generators.iter().map(|v| v.degree()).collect();
    degrees.sort_unstable();
    degrees.dedup();

    let mut kept: DMatrix<C64> = DMatrix::from_element(n, 0, c(0.0));
    let mut sectors = Vec::new();
    for d in degrees {
        let idx: Vec<usize> = (0..n).filter(|&i| gram.generators[i].degree() == d).collect();
        let mut cand = DMatrix::from_element(n, idx.len(), c(0.0));
        for (k, &i) in idx.iter().enumerate() {
            cand[(i, k)] = c(1.0);
        }
        if kept.ncols() > 0 {
            let overlap = kept.adjoint() * g * &cand;
            cand -= &kept * overlap;
        }
        let residual = cand.adjoint() * g * &cand;
        let eig = hermitian_eigen(&residual);
        let keep: Vec<usize> = (0..eig.values.len())
            .filter(|&i| eig.values[i] > tol * lambda_max)
            .collect();
        // Largest residual eigenvalues first, so each sector is ordered the
        // same way as the ungraded quotient.
        let new = DMatrix::from_fn(n, keep.len(), |r, k| {
            let col = keep[keep.len() - 1 - k];
            let mut acc = c(0.0);
            for m in 0..idx.len() {
                acc += cand[(r, m)] * eig.vectors[(m, col)];
            }
            acc / eig.values[col].sqrt()
        });
        let start = kept.ncols();
        let mut grown = DMatrix::from_element(n, start + new.ncols(), c(0.0));
        grown.columns_mut(0, start).copy_from(&kept);
        grown.columns_mut(start, new.ncols()).copy_from(&new);
        kept = grown;
        sectors.push(Sector {
            degree: d,
            range: start..kept.ncols(),
        });
    }
    Ok(QuotientBasis {
        generators: gram.generators.clone(),
        gram: g.clone(),
        rank: kept.ncols(),
        isometry: kept,
        tolerance: tol,
        lambda_max,
        sectors,
    })
}

impl QuotientBasis {
    /// `max |V† G V - I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let id = DMatrix::<C64>::identity(self.rank, self.rank);
        linalg::max_abs(&(self.isometry.adjoint() * &self.gram * &self.isometry - id))
    }

    /// Quotient coordinates of every generator, as columns (`V† G`).
    pub fn generator_coordinates(&self) -> DMatrix<C64> {
        self.isometry.adjoint() * &self.gram
    }

    pub fn sector(&self, degree: usize) -> Option<&Sector> {
        self.sectors.iter().find(|s| s.degree == degree)
    }

    pub fn max_degree(&self) -> usize {
        self.sectors.iter().map(|s| s.degree).max().unwrap_or(0)
    }

    /// Coordinates of the quantized vacuum.
    pub fn vacuum(&self, cov: &CovarianceOperator) -> Result<DVector<C64>> {
        quantize(self, cov, &EuclideanVector::vacuum())
    }

    /// Matrix `⟨e_k, (op e_l)^⟩` of a Euclidean operation compressed to the
    /// quotient: `V† S V` with `S_ij = ⟨A_i, Θ op(A_j)⟩`.
    pub fn compress<F>(&self, cov: &CovarianceOperator, op: F) -> Result<DMatrix<C64>>
    where
        F: Fn(&EuclideanVector) -> Result<EuclideanVector>,
    {
        let n = self.generators.len();
        let images = self.generators.iter().map(&op).collect::<Result<Vec<_>>>()?;
        let mut s = DMatrix::from_element(n, n, c(0.0));
        for (j, img) in images.iter().enumerate() {
            for i in 0..n {
                s[(i, j)] = rp_form(cov, &self.generators[i], img)?;
            }
        }
        Ok(self.isometry.adjoint() * s * &self.isometry)
    }

    /// JSON description: rank, tolerance, sector blocks, and `V` as nested
    /// `[re, im]` arrays.
    pub fn to_json(&self) -> serde_json::Value {
        let v: Vec<Vec<[f64; 2]>> = (0..self.isometry.nrows())
            .map(|r| {
                (0..self.isometry.ncols())
                    .map(|k| [self.isometry[(r, k)].re, self.isometry[(r, k)].im])
                    .collect()
            })
            .collect();
        serde_json::json!({
            "rank": self.rank,
            "tolerance": self.tolerance,
            "sectors": self.sectors,
            "V": v,
        })
    }
}

/// Coordinates of `Â` in the orthonormal quotient basis. Fails when the
/// Gram projection misses part of `‖Â‖²`, i.e. `A` is outside the span.
pub fn quantize(basis: &QuotientBasis, cov: &CovarianceOperator, a: &EuclideanVector) -> Result<DVector<C64>> {
    check_support(cov.geometry(), a)?;
    let b = DVector::from_iterator(
        basis.generators.len(),
        basis
            .generators
            .iter()
            .map(|g| rp_form(cov, g, a))
            .collect::<Result<Vec<_>>>()?,
    );
    let coords = basis.isometry.adjoint() * b;
    let norm2 = rp_form(cov, a, a)?.re;
    let residual = norm2 - coords.norm_squared();
    // Each discarded eigendirection may carry up to `tolerance * lambda_max`.
    let truncation = basis.tolerance * basis.lambda_max * (basis.generators.len() - basis.rank) as f64;
    if residual > SPAN_TOL * norm2.abs().max(f64::MIN_POSITIVE) + truncation {
        return Err(Error::SpanDeficiency { residual });
    }
    Ok(coords)
}

/// Relative residual tolerance for [`quantize`].
pub const SPAN_TOL: f64 = 1e-9;

/// All monomials of degree `≤ max_degree` in deltas at `sites`, as
/// multisets (non-decreasing site order), sorted by degree.
pub fn monomial_family(geom: &Arc<LatticeGeometry>, sites: &[Site], max_degree: usize) -> Result<Vec<EuclideanVector>> {
    let mut out = Vec::new();
    for d in 0..=max_degree {
        for combo in multisets(sites.len(), d) {
            let chosen: Vec<Site> = combo.iter().map(|&i| sites[i].clone()).collect();
            out.push(EuclideanVector::deltas(geom, &chosen)?);
        }
    }
    Ok(out)
}

/// Graded quotient generated by all monomials of degree `≤ max_degree` in
/// deltas on the given time slices. By the Markov property of the lattice
/// field a single slice already spans every sector.
pub fn slice_basis(cov: &CovarianceOperator, times: &[i64], max_degree: usize, tol: f64) -> Result<QuotientBasis> {
    let geom = cov.geometry().clone();
    let sites: Vec<Site> = times.iter().flat_map(|&t| geom.slice_sites(t)).collect();
    let gram = assemble_gram(cov, monomial_family(&geom, &sites, max_degree)?)?;
    quotient_graded(&gram, tol)
}

/// Non-decreasing index tuples of length `k` from `0..n`.
pub fn multisets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, k, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k, 0, &mut Vec::new(), &mut out);
    out
}
