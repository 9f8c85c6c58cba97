//! Heat-kernel regularized fields `φ_{I,ε}(x) = e^{-εH} φ_I(x) e^{-εH}`,
//! their derivatives as nested commutators with `H` and `P`, the factorial
//! derivative bound, and continuation of matrix elements to complex time.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{time_zero_field, OperatorLabel, QuantizedDynamics, SectorOperator};
use crate::gaussian::CovarianceOperator;
use crate::lattice::TestFunction;
use crate::linalg::{c, op_norm, spectral_apply};
use crate::rp_quantize::{quantize, EuclideanVector};
use crate::{Error, Result, C64};

/// Largest `|k|` accepted by [`field_derivative`].
pub const DERIVATIVE_CAP: usize = 6;
/// Largest `γ` tried by the fit.
pub const GAMMA_CAP: u32 = 20;
/// Number of Taylor terms beyond the constant one.
pub const TAYLOR_ORDER: usize = 12;

/// `k = (k₀, k₁, …, k_s)`; `k₀` counts time derivatives.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct MultiIndex {
    pub k: Vec<usize>,
}

impl MultiIndex {
    pub fn new(k: Vec<usize>) -> Self {
        MultiIndex { k }
    }

    pub fn zero(len: usize) -> Self {
        MultiIndex { k: vec![0; len] }
    }

    pub fn order(&self) -> usize {
        self.k.iter().sum()
    }

    pub fn factorial(&self) -> f64 {
        self.k.iter().map(|&n| factorial(n)).product()
    }

    pub fn raised(&self, j: usize) -> Self {
        let mut k = self.k.clone();
        k[j] += 1;
        MultiIndex { k }
    }

    /// All multi-indices of length `len` with `|k| ≤ max_order`, graded.
    pub fn up_to(len: usize, max_order: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for n in 0..=max_order {
            compositions(len, n, &mut Vec::new(), &mut out);
        }
        out
    }
}

fn compositions(len: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
    if cur.len() + 1 == len {
        cur.push(n);
        out.push(MultiIndex::new(cur.clone()));
        cur.pop();
        return;
    }
    if len == 0 {
        return;
    }
    for first in (0..=n).rev() {
        cur.push(first);
        compositions(len, n - first, cur, out);
        cur.pop();
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `Ad_A(B) = [A, B]`.
pub fn ad(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a * b - b * a
}

/// A regularized field at the point `(t, x⃗)`.
#[derive(Debug, Clone)]
pub struct RegularizedField {
    pub epsilon: f64,
    pub time: f64,
    pub position: Vec<i64>,
    /// `φ_I(x) = e^{-tH} φ(0, δ_x⃗) e^{tH}`.
    pub unregularized: DMatrix<C64>,
    pub matrix: SectorOperator,
}

impl RegularizedField {
    pub fn norm(&self) -> f64 {
        op_norm(&self.matrix.matrix)
    }
}

/// `φ(0, δ_x⃗)` in quotient coordinates.
pub fn point_field(dynamics: &QuantizedDynamics, cov: &CovarianceOperator, x: &[i64]) -> Result<DMatrix<C64>> {
    let geom = cov.geometry();
    let mut site = vec![0];
    site.extend_from_slice(x);
    let h = TestFunction::delta(geom, &site)?;
    Ok(time_zero_field(&dynamics.basis, cov, &h)?.op.matrix)
}

/// `e^{-tH} X e^{tH}`.
pub fn imaginary_time(dynamics: &QuantizedDynamics, x: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let h = &dynamics.hamiltonian.matrix;
    spectral_apply(h, |e| c((-t * e).exp())) * x * spectral_apply(h, |e| c((t * e).exp()))
}

/// `e^{-εH} X e^{-εH}`.
pub fn sandwich(dynamics: &QuantizedDynamics, x: &DMatrix<C64>, eps: f64) -> DMatrix<C64> {
    let s = dynamics.heat(c(eps));
    &s * x * &s
}

pub fn regularized_field(
    dynamics: &QuantizedDynamics,
    cov: &CovarianceOperator,
    t: f64,
    x: &[i64],
    eps: f64,
) -> Result<RegularizedField> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("regularization epsilon {eps} must be positive")));
    }
    if t.is_nan() || t.abs() > eps {
        return Err(Error::Margin(format!(
            "time {t} outside the regularization margin |t| <= {eps}"
        )));
    }
    let phi_i = imaginary_time(dynamics, &point_field(dynamics, cov, x)?, t);
    let matrix = sandwich(dynamics, &phi_i, eps);
    Ok(RegularizedField {
        epsilon: eps,
        time: t,
        position: x.to_vec(),
        unregularized: phi_i,
        matrix: SectorOperator::new(OperatorLabel::RegularizedField, matrix, &dynamics.basis.sectors),
    })
}

/// Unregularized derivative `(-1)^{k₀}(-i)^{|k|-k₀}(Ad_H)^{k₀}(Ad_P)^{k⃗} φ_I`,
/// spatial commutators applied first.
pub fn raw_derivative(dynamics: &QuantizedDynamics, phi_i: &DMatrix<C64>, k: &MultiIndex) -> Result<DMatrix<C64>> {
    let s = dynamics.momenta.len();
    if k.k.len() != s + 1 {
        return Err(Error::InvalidDimension(format!(
            "multi-index {:?} has length {}, lattice needs {}",
            k.k,
            k.k.len(),
            s + 1
        )));
    }
    if k.order() > DERIVATIVE_CAP {
        return Err(Error::ComplexityGuard {
            what: "derivative order",
            got: k.order(),
            cap: DERIVATIVE_CAP,
        });
    }
    let mut x = phi_i.clone();
    for (j, m) in dynamics.momenta.iter().enumerate() {
        for _ in 0..k.k[j + 1] {
            x = ad(&m.generator.matrix, &x);
        }
    }
    for _ in 0..k.k[0] {
        x = ad(&dynamics.hamiltonian.matrix, &x);
    }
    let spatial = (k.order() - k.k[0]) as i32;
    let prefactor =
        C64::new(if k.k[0].is_multiple_of(2) { 1.0 } else { -1.0 }, 0.0) * C64::new(0.0, -1.0).powi(spatial);
    Ok(x * prefactor)
}

/// `D^k φ_{I,ε}(x)`: derivative of the unregularized field, then sandwiched.
pub fn field_derivative(
    dynamics: &QuantizedDynamics,
    field: &RegularizedField,
    k: &MultiIndex,
) -> Result<SectorOperator> {
    let raw = raw_derivative(dynamics, &field.unregularized, k)?;
    Ok(SectorOperator::new(
        OperatorLabel::RegularizedField,
        sandwich(dynamics, &raw, field.epsilon),
        &dynamics.basis.sectors,
    ))
}

/// Time derivative of `t ↦ φ_{I,ε}(t, x⃗)` by Richardson-extrapolated central
/// differences of exact conjugations `e^{∓δH}`.
pub fn time_derivative_fd(dynamics: &QuantizedDynamics, field: &RegularizedField, delta: f64) -> DMatrix<C64> {
    let central = |d: f64| {
        let plus = imaginary_time(dynamics, &field.unregularized, d);
        let minus = imaginary_time(dynamics, &field.unregularized, -d);
        (plus - minus) * c(1.0 / (2.0 * d))
    };
    let coarse = central(delta);
    let fine = central(delta / 2.0);
    let d = (fine * c(4.0) - coarse) * c(1.0 / 3.0);
    sandwich(dynamics, &d, field.epsilon)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DerivativeRow {
    pub k: Vec<usize>,
    pub norm: f64,
    pub bound: f64,
    /// `bound / norm` (infinite for a vanishing derivative).
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AnalyticityReport {
    pub epsilon: f64,
    #[serde(rename = "M_used")]
    pub m_used: f64,
    #[serde(rename = "M1_fit")]
    pub m1_fit: f64,
    pub gamma_fit: u32,
    pub gamma_proof: u32,
    pub max_k_checked: usize,
    pub table: Vec<DerivativeRow>,
    /// Largest change of any derivative norm under a unit spatial translation.
    pub translation_residual: f64,
}

impl AnalyticityReport {
    pub fn bound(&self, order: usize) -> f64 {
        bound_value(self.m1_fit, self.m_used, self.epsilon, self.gamma_fit, order)
    }

    pub fn dominates(&self) -> bool {
        self.table.iter().all(|r| r.norm <= r.bound * (1.0 + 1e-12))
    }
}

fn bound_value(m1: f64, m: f64, eps: f64, gamma: u32, order: usize) -> f64 {
    let n = order + gamma as usize;
    m1 * (4.0 * m / eps).powi(n as i32) * factorial(n)
}

/// Smallest `γ ≤ GAMMA_CAP` for which every measured one-step ratio obeys
/// `‖D^{k+e_j}‖ ≤ (4M/ε)(|k| + γ + 1)‖D^k‖`, and the smallest `M₁` for which
/// `‖D^k‖ ≤ M₁(4M/ε)^{|k|+γ}(|k|+γ)!` holds on the whole table.
pub fn fit_bound(table: &[(MultiIndex, f64)], m: f64, eps: f64) -> Result<(u32, f64)> {
    let scale = 4.0 * m / eps;
    let lookup: std::collections::BTreeMap<&MultiIndex, f64> = table.iter().map(|(k, n)| (k, *n)).collect();
    let floor = table.iter().map(|(_, n)| *n).fold(0.0_f64, f64::max) * 1e-13;
    let envelope_ok = |gamma: u32| {
        table.iter().all(|(k, norm)| {
            (0..k.k.len()).all(|j| match lookup.get(&k.raised(j)) {
                Some(&next) if next > floor => next <= scale * (k.order() as f64 + gamma as f64 + 1.0) * norm,
                _ => true,
            })
        })
    };
    let gamma = (0..=GAMMA_CAP)
        .find(|&g| envelope_ok(g))
        .ok_or_else(|| Error::FitFailure(format!("no gamma <= {GAMMA_CAP} satisfies the factorial envelope")))?;
    let m1 = table
        .iter()
        .map(|(k, n)| n / bound_value(1.0, m, eps, gamma, k.order()))
        .fold(0.0_f64, f64::max);
    Ok((gamma, m1))
}

fn derivative_norms(
    dynamics: &QuantizedDynamics,
    field: &RegularizedField,
    ks: &[MultiIndex],
) -> Result<Vec<(MultiIndex, f64)>> {
    ks.iter()
        .map(|k| Ok((k.clone(), op_norm(&field_derivative(dynamics, field, k)?.matrix))))
        .collect()
}

/// Measure `‖D^k φ_{I,ε}(0, 0⃗)‖` for `|k| ≤ max_order` and fit the bound.
/// `r` is the Sobolev index entering `γ_proof = 2r + d + 2`.
pub fn verify_derivative_bound(
    dynamics: &QuantizedDynamics,
    cov: &CovarianceOperator,
    eps: f64,
    m: f64,
    max_order: usize,
    r: u32,
) -> Result<AnalyticityReport> {
    let s = cov.geometry().spatial_dims();
    let origin = vec![0; s];
    let field = regularized_field(dynamics, cov, 0.0, &origin, eps)?;
    let ks = MultiIndex::up_to(s + 1, max_order);
    let norms = derivative_norms(dynamics, &field, &ks)?;

    let mut translation_residual = 0.0_f64;
    if s > 0 {
        let mut e1 = origin.clone();
        e1[0] = 1;
        let moved = regularized_field(dynamics, cov, 0.0, &e1, eps)?;
        for ((_, a), (_, b)) in norms.iter().zip(derivative_norms(dynamics, &moved, &ks)?) {
            translation_residual = translation_residual.max((a - b).abs());
        }
    }

    let m_used = m.max(1.0);
    let (gamma_fit, m1_fit) = fit_bound(&norms, m_used, eps)?;
    let table = norms
        .iter()
        .map(|(k, n)| {
            let bound = bound_value(m1_fit, m_used, eps, gamma_fit, k.order());
            DerivativeRow {
                k: k.k.clone(),
                norm: *n,
                bound,
                margin: if *n > 0.0 { bound / n } else { f64::INFINITY },
            }
        })
        .collect();
    Ok(AnalyticityReport {
        epsilon: eps,
        m_used,
        m1_fit,
        gamma_fit,
        gamma_proof: 2 * r + cov.geometry().dim() as u32 + 2,
        max_k_checked: max_order,
        table,
        translation_residual,
    })
}

/// `F(z) = ⟨Â, e^{-εH} φ_I(z, x⃗) e^{-εH} B̂⟩` by exact matrix functions and by
/// its Taylor series in `z` about 0.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Continuation {
    pub z0: [f64; 2],
    pub exact: [f64; 2],
    pub taylor: [f64; 2],
    pub error: f64,
    pub relative_error: f64,
}

fn pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

/// Taylor coefficients `⟨A, e^{-εH}(-Ad_H)^n φ e^{-εH} B⟩/n!` for `n ≤ order`.
pub fn taylor_coefficients(
    dynamics: &QuantizedDynamics,
    phi: &DMatrix<C64>,
    a: &DVector<C64>,
    b: &DVector<C64>,
    eps: f64,
    order: usize,
) -> Vec<C64> {
    let s = dynamics.heat(c(eps));
    let left = (a.adjoint() * &s).transpose();
    let right = &s * b;
    let mut x = phi.clone();
    let mut out = Vec::with_capacity(order + 1);
    for n in 0..=order {
        let v = (left.transpose() * &x * &right)[(0, 0)];
        out.push(v / factorial(n));
        x = -ad(&dynamics.hamiltonian.matrix, &x);
    }
    out
}

/// Exact `F(z)` via `e^{-(ε+z)H} φ e^{-(ε-z)H}`.
pub fn exact_value(
    dynamics: &QuantizedDynamics,
    phi: &DMatrix<C64>,
    a: &DVector<C64>,
    b: &DVector<C64>,
    eps: f64,
    z: C64,
) -> C64 {
    let left = dynamics.heat(c(eps) + z);
    let right = dynamics.heat(c(eps) - z);
    (a.adjoint() * left * phi * right * b)[(0, 0)]
}

fn horner(coeffs: &[C64], z: C64) -> C64 {
    coeffs.iter().rev().fold(c(0.0), |acc, &a| acc * z + a)
}

/// Compare exact and Taylor values at `z0`. Outside the certified disk
/// `|z0| < ε/(4M)` this refuses unless `explore` is set.
#[allow(clippy::too_many_arguments)]
pub fn continue_complex(
    dynamics: &QuantizedDynamics,
    phi: &DMatrix<C64>,
    a: &DVector<C64>,
    b: &DVector<C64>,
    eps: f64,
    m_used: f64,
    z0: C64,
    explore: bool,
) -> Result<Continuation> {
    let radius = eps / (4.0 * m_used);
    if z0.norm() >= radius && !explore {
        return Err(Error::OutsideDomain(format!(
            "|z0| = {} is outside the certified disk of radius {radius}",
            z0.norm()
        )));
    }
    let exact = exact_value(dynamics, phi, a, b, eps, z0);
    let taylor = horner(&taylor_coefficients(dynamics, phi, a, b, eps, TAYLOR_ORDER), z0);
    let error = (exact - taylor).norm();
    Ok(Continuation {
        z0: pair(z0),
        exact: pair(exact),
        taylor: pair(taylor),
        error,
        relative_error: if exact.norm() > 0.0 {
            error / exact.norm()
        } else {
            error
        },
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LemmaReport {
    pub epsilon: f64,
    pub m_used: f64,
    pub disk_radius: f64,
    pub bound: f64,
    pub max_abs_f: f64,
    pub samples: usize,
    pub pass: bool,
    /// Largest `|F(z)|` divided by the bound obtained by summing the fitted
    /// derivative bounds, `M₁(4M/ε)^γ γ!/(1-q)^{γ+1}‖Â‖‖B̂‖`, `q = 4M|z|/ε`.
    pub series_ratio: f64,
}

/// `|F(z)| ≤ (M₁/ε^γ)‖Â‖‖B̂‖` at `samples` points spread over the disk
/// `|z| < ε/(4M)` (radii `ρ(j+1)/(samples+1)`, golden-angle directions).
pub fn lemma_bound_check(
    dynamics: &QuantizedDynamics,
    phi: &DMatrix<C64>,
    a: &DVector<C64>,
    b: &DVector<C64>,
    fit: &AnalyticityReport,
    samples: usize,
) -> LemmaReport {
    let eps = fit.epsilon;
    let radius = eps / (4.0 * fit.m_used);
    let bound = fit.m1_fit / eps.powi(fit.gamma_fit as i32) * a.norm() * b.norm();
    let golden = PI * (3.0 - 5f64.sqrt());
    let gamma = fit.gamma_fit as i32;
    let series_scale =
        fit.m1_fit * (4.0 * fit.m_used / eps).powi(gamma) * factorial(fit.gamma_fit as usize) * a.norm() * b.norm();
    let mut max_abs_f = 0.0_f64;
    let mut series_ratio = 0.0_f64;
    for j in 0..samples {
        let rho = radius * (j + 1) as f64 / (samples + 1) as f64;
        let z = C64::from_polar(rho, golden * j as f64);
        let f = exact_value(dynamics, phi, a, b, eps, z).norm();
        max_abs_f = max_abs_f.max(f);
        let q = rho / radius;
        series_ratio = series_ratio.max(f * (1.0 - q).powi(gamma + 1) / series_scale);
    }
    LemmaReport {
        epsilon: eps,
        m_used: fit.m_used,
        disk_radius: radius,
        bound,
        max_abs_f,
        samples,
        pass: max_abs_f <= bound,
        series_ratio,
    }
}

/// Largest grid radius `ρ ≤ ρ_max` such that at every grid radius up to it,
/// in the directions `1, i, -1, -i`, the last Taylor increment is below
/// `1e-8` of `‖e^{-εH}φe^{-εH}‖‖A‖‖B‖`.
pub fn convergence_radius(
    dynamics: &QuantizedDynamics,
    phi: &DMatrix<C64>,
    a: &DVector<C64>,
    b: &DVector<C64>,
    eps: f64,
    rho_max: f64,
    steps: usize,
) -> f64 {
    let coeffs = taylor_coefficients(dynamics, phi, a, b, eps, TAYLOR_ORDER);
    let scale = op_norm(&sandwich(dynamics, phi, eps)) * a.norm() * b.norm();
    let last = coeffs[TAYLOR_ORDER];
    let mut radius = 0.0;
    for n in 1..=steps {
        let rho = rho_max * n as f64 / steps as f64;
        let ok = [c(1.0), C64::i(), c(-1.0), -C64::i()]
            .iter()
            .all(|dir| (last * (dir * rho).powi(TAYLOR_ORDER as i32)).norm() <= 1e-8 * scale);
        if !ok {
            break;
        }
        radius = rho;
    }
    radius
}

/// `φ_I(x_{i₁})⋯φ_I(x_{iₙ})Ω̂` with `t_{i₁} ≤ ⋯ ≤ t_{iₙ}`, evaluated as
/// `e^{-t₁H}φ₁e^{-(t₂-t₁)H}φ₂⋯Ω̂`, with the residual against the direct
/// quantization of the Euclidean monomial.
#[derive(Debug, Clone)]
pub struct AntiTimeOrdered {
    pub vector: DVector<C64>,
    pub coincident_times: bool,
    pub equivariance_residual: f64,
}

pub fn antitimeordered_vector(
    dynamics: &QuantizedDynamics,
    cov: &CovarianceOperator,
    points: &[Vec<i64>],
) -> Result<AntiTimeOrdered> {
    let n_max = dynamics.basis.max_degree();
    if points.len() > n_max {
        return Err(Error::ComplexityGuard {
            what: "product length",
            got: points.len(),
            cap: n_max,
        });
    }
    if let Some(p) = points.iter().find(|p| p[0] < 0) {
        return Err(Error::SupportViolation { site: p.clone() });
    }
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p[0]);
    let coincident_times = sorted.windows(2).any(|w| w[0][0] == w[1][0]);

    let mut v = dynamics.vacuum.clone();
    let mut later = None;
    for p in sorted.iter().rev() {
        if let Some(t_next) = later {
            v = dynamics.heat(c((t_next - p[0]) as f64)) * v;
        }
        v = point_field(dynamics, cov, &p[1..])? * v;
        later = Some(p[0]);
    }
    if let Some(t_first) = later {
        v = dynamics.heat(c(t_first as f64)) * v;
    }
    let direct = quantize(&dynamics.basis, cov, &EuclideanVector::deltas(cov.geometry(), points)?)?;
    let equivariance_residual = (&v - direct).norm();
    Ok(AntiTimeOrdered {
        vector: v,
        coincident_times,
        equivariance_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::verify_spectral_condition;
    use crate::gaussian::build_covariance;
    use crate::lattice::{build_geometry, Reflection, TimeBoundary};
    use crate::linalg::max_abs;
    use crate::rp_quantize::{slice_basis, RANK_TOL};

    fn setup(b: TimeBoundary, deg: usize) -> (CovarianceOperator, QuantizedDynamics) {
        let g = build_geometry(6, &[4], b, Reflection::Site).unwrap();
        let cov = build_covariance(&g, 1.0).unwrap();
        let basis = slice_basis(&cov, &[0, 1], deg, RANK_TOL).unwrap();
        let d = QuantizedDynamics::build(&cov, basis).unwrap();
        (cov, d)
    }

    #[test]
    fn multi_index_enumeration() {
        let ks = MultiIndex::up_to(2, 4);
        assert_eq!(ks.len(), 15);
        assert_eq!(ks[0], MultiIndex::zero(2));
        assert!(ks.windows(2).all(|w| w[0].order() <= w[1].order()));
        assert_eq!(MultiIndex::new(vec![2, 3]).factorial(), 12.0);
        assert_eq!(MultiIndex::up_to(3, 2).len(), 10);
    }

    #[test]
    fn field_definition_and_spatial_covariance() {
        let (cov, d) = setup(TimeBoundary::Open, 2);
        let f = regularized_field(&d, &cov, 0.0, &[0], 0.5).unwrap();
        let direct = sandwich(&d, &point_field(&d, &cov, &[0]).unwrap(), 0.5);
        assert!(max_abs(&(f.matrix.matrix.clone() - direct)) < 1e-12);
        let u = d.translation(&[1]);
        let moved = regularized_field(&d, &cov, 0.0, &[1], 0.5).unwrap();
        let conj = &u * &f.matrix.matrix * u.adjoint();
        assert!(max_abs(&(conj - &moved.matrix.matrix)) < 1e-12);
        assert!(matches!(
            regularized_field(&d, &cov, 0.6, &[0], 0.5),
            Err(Error::Margin(_))
        ));
        assert!(matches!(
            regularized_field(&d, &cov, 0.0, &[0], 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn norm_decreases_in_epsilon() {
        let (cov, d) = setup(TimeBoundary::Open, 2);
        let norms: Vec<f64> = [0.25, 0.5, 1.0]
            .iter()
            .map(|&e| regularized_field(&d, &cov, 0.0, &[0], e).unwrap().norm())
            .collect();
        assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
    }

    #[test]
    fn time_derivative_matches_finite_difference() {
        let (cov, d) = setup(TimeBoundary::Dirichlet, 2);
        let f = regularized_field(&d, &cov, 0.2, &[1], 0.5).unwrap();
        let exact = field_derivative(&d, &f, &MultiIndex::new(vec![1, 0])).unwrap().matrix;
        for delta in [1e-3, 5e-4] {
            let fd = time_derivative_fd(&d, &f, delta);
            assert!(max_abs(&(fd - &exact)) < 1e-6);
        }
        let k0 = field_derivative(&d, &f, &MultiIndex::zero(2)).unwrap().matrix;
        assert!(max_abs(&(k0 - &f.matrix.matrix)) < 1e-15);
    }

    #[test]
    fn mixed_partials_commute() {
        let (cov, d) = setup(TimeBoundary::Open, 2);
        let f = regularized_field(&d, &cov, 0.0, &[0], 0.5).unwrap();
        let h = &d.hamiltonian.matrix;
        let p = &d.momenta[0].generator.matrix;
        let hp = ad(h, &ad(p, &f.unregularized));
        let ph = ad(p, &ad(h, &f.unregularized));
        assert!(max_abs(&(hp - ph)) < 1e-11);
    }

    #[test]
    fn derivative_cap_guard() {
        let (cov, d) = setup(TimeBoundary::Open, 1);
        let f = regularized_field(&d, &cov, 0.0, &[0], 0.5).unwrap();
        assert!(matches!(
            field_derivative(&d, &f, &MultiIndex::new(vec![4, 3])),
            Err(Error::ComplexityGuard { .. })
        ));
    }

    #[test]
    fn fit_with_single_datum() {
        let (g, m1) = fit_bound(&[(MultiIndex::zero(2), 3.0)], 1.0, 0.5).unwrap();
        assert_eq!(g, 0);
        assert_eq!(m1, 3.0);
    }

    #[test]
    fn fit_needs_larger_gamma_for_steep_growth() {
        let table = vec![(MultiIndex::new(vec![0]), 1.0), (MultiIndex::new(vec![1]), 20.0)];
        let (g, m1) = fit_bound(&table, 1.0, 1.0).unwrap();
        assert_eq!(g, 4);
        assert!((m1 - 1.0 / 6144.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_bound_report() {
        let (cov, d) = setup(TimeBoundary::Dirichlet, 2);
        let rep = verify_derivative_bound(&d, &cov, 0.5, 1.0, 3, 1).unwrap();
        assert!(rep.dominates());
        assert_eq!(rep.gamma_proof, 6);
        assert_eq!(rep.table.len(), 10);
        assert!(rep.translation_residual < 1e-12);
    }

    #[test]
    fn continuation_oracles() {
        let (cov, d) = setup(TimeBoundary::Open, 2);
        let phi = point_field(&d, &cov, &[0]).unwrap();
        let b = quantize(
            &d.basis,
            &cov,
            &EuclideanVector::deltas(cov.geometry(), &[vec![1, 0]]).unwrap(),
        )
        .unwrap();
        let a = d.vacuum.clone();
        let zero = continue_complex(&d, &phi, &a, &b, 0.5, 1.0, c(0.0), false).unwrap();
        assert!(zero.error < 1e-15);
        let real = continue_complex(&d, &phi, &a, &b, 0.5, 1.0, c(0.05), false).unwrap();
        let shifted = imaginary_time(&d, &phi, 0.05);
        let direct = (a.adjoint() * sandwich(&d, &shifted, 0.5) * &b)[(0, 0)];
        assert!((C64::new(real.exact[0], real.exact[1]) - direct).norm() < 1e-13);
        let z0 = C64::new(0.0, 0.5 / 8.0);
        let rep = continue_complex(&d, &phi, &a, &b, 0.5, 1.0, z0, false).unwrap();
        assert!(rep.relative_error < 1e-8, "{rep:?}");
        assert!(matches!(
            continue_complex(&d, &phi, &a, &b, 0.5, 1.0, c(0.2), false),
            Err(Error::OutsideDomain(_))
        ));
        assert!(continue_complex(&d, &phi, &a, &b, 0.5, 1.0, c(0.2), true).is_ok());
        assert!(convergence_radius(&d, &phi, &a, &b, 0.5, 0.5, 40) >= 0.125);
    }

    #[test]
    fn antitimeordered_products() {
        let (cov, d) = setup(TimeBoundary::Open, 3);
        let empty = antitimeordered_vector(&d, &cov, &[]).unwrap();
        assert!((empty.vector - &d.vacuum).norm() < 1e-15);
        let one = antitimeordered_vector(&d, &cov, &[vec![2, 1]]).unwrap();
        assert!(one.equivariance_residual < 1e-10);
        let ab = antitimeordered_vector(&d, &cov, &[vec![1, 0], vec![3, 2]]).unwrap();
        let ba = antitimeordered_vector(&d, &cov, &[vec![3, 2], vec![1, 0]]).unwrap();
        assert!((ab.vector - ba.vector).norm() < 1e-14);
        assert!(ab.equivariance_residual < 1e-10);
        let three = antitimeordered_vector(&d, &cov, &[vec![1, 0], vec![1, 3], vec![2, 1]]).unwrap();
        assert!(three.coincident_times);
        assert!(three.equivariance_residual < 1e-10, "{}", three.equivariance_residual);
        assert!(antitimeordered_vector(&d, &cov, &vec![vec![1, 0]; 4]).is_err());
    }

    #[test]
    fn spectral_m_feeds_the_fit() {
        let (cov, d) = setup(TimeBoundary::Open, 2);
        let sc = verify_spectral_condition(&d.hamiltonian, &d.momentum_generators(), 1.5f64.acosh()).unwrap();
        let rep = verify_derivative_bound(&d, &cov, 1.0, sc.m_star, 2, 1).unwrap();
        assert!(rep.m_used >= 1.0 && rep.m_used >= sc.m_star);
    }
}
