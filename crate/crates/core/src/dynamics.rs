//! Quantized dynamics on the physical space: the transfer matrix `e^{-H}`,
//! the Hamiltonian, lattice momenta, and the time-zero field, together with
//! the energy estimates they are expected to satisfy.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::gaussian::CovarianceOperator;
use crate::lattice::{
    sobolev_norm, spacetime_norm, spatial_helmholtz_matrix, LatticeGeometry, Reflection, Site, TestFunction,
};
use crate::linalg::{self, c, hermitian_eigen, hermiticity_residual, op_norm, spectral_apply};
use crate::rp_quantize::{EuclideanVector, QuotientBasis, Sector};
use crate::{Error, Result, C64};

/// Tolerance on invariants of quantized operators (contraction, positivity,
/// unitarity).
pub const OP_TOL: f64 = 1e-10;
/// Slack on `0 ≤ e^{-H} ≤ 1` and `H ≥ 0`: with Dirichlet time boundaries the
/// unit time shift is only approximately a symmetry, so the compressed
/// transfer matrix can overshoot by an amount decaying in `T`.
pub const TRANSFER_TOL: f64 = 1e-6;
/// Largest `‖[H, P_j]‖` accepted before the free-field joint basis is refused.
pub const COMMUTATOR_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorLabel {
    Transfer,
    Hamiltonian,
    Momentum(usize),
    Field,
    RegularizedField,
    Other,
}

/// Matrix of an operator in orthonormal quotient coordinates.
#[derive(Debug, Clone)]
pub struct SectorOperator {
    pub label: OperatorLabel,
    pub matrix: DMatrix<C64>,
    pub sectors: Vec<Sector>,
    /// Relative `|M - M†|` before symmetrization (zero when not symmetrized).
    pub raw_asymmetry: f64,
}

impl SectorOperator {
    pub fn new(label: OperatorLabel, matrix: DMatrix<C64>, sectors: &[Sector]) -> Self {
        SectorOperator {
            label,
            matrix,
            sectors: sectors.to_vec(),
            raw_asymmetry: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Largest entry outside the diagonal degree blocks.
    pub fn off_block_max(&self) -> f64 {
        let mut worst = 0.0_f64;
        for a in &self.sectors {
            for b in &self.sectors {
                if a.degree == b.degree {
                    continue;
                }
                for i in a.range.clone() {
                    for j in b.range.clone() {
                        worst = worst.max(self.matrix[(i, j)].norm());
                    }
                }
            }
        }
        worst
    }

    /// Diagonal block of one degree.
    pub fn block(&self, degree: usize) -> Option<DMatrix<C64>> {
        let s = self.sectors.iter().find(|s| s.degree == degree)?;
        let r = s.range.clone();
        Some(self.matrix.view((r.start, r.start), (r.len(), r.len())).into_owned())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigen(&self.matrix).values
    }
}

/// Lattice free-field dispersion: `cosh ω(k) = 1 + ½(m² + Σ_j 2(1 - cos(2πk_j/L_j)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionOracle {
    pub spatial_sizes: Vec<usize>,
    pub mass: f64,
}

impl DispersionOracle {
    pub fn new(spatial_sizes: &[usize], mass: f64) -> Self {
        DispersionOracle {
            spatial_sizes: spatial_sizes.to_vec(),
            mass,
        }
    }

    pub fn omega(&self, k: &[i64]) -> f64 {
        let lap: f64 = k
            .iter()
            .zip(&self.spatial_sizes)
            .map(|(&kj, &l)| 2.0 * (1.0 - (2.0 * PI * kj as f64 / l as f64).cos()))
            .sum();
        (1.0 + 0.5 * (self.mass * self.mass + lap)).acosh()
    }

    /// Lattice momentum of mode `k`, each component in `(-π, π]`.
    pub fn momentum(&self, k: &[i64]) -> Vec<f64> {
        k.iter()
            .zip(&self.spatial_sizes)
            .map(|(&kj, &l)| principal_angle(2.0 * PI * kj as f64 / l as f64))
            .collect()
    }

    /// All spatial mode indices, lexicographic.
    pub fn modes(&self) -> Vec<Vec<i64>> {
        let mut out = vec![Vec::new()];
        for &l in &self.spatial_sizes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..l as i64).map(move |k| {
                        let mut p = prefix.clone();
                        p.push(k);
                        p
                    })
                })
                .collect();
        }
        out
    }

    /// One-particle energies, ascending.
    pub fn one_particle_energies(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.modes().iter().map(|k| self.omega(k)).collect();
        e.sort_by(f64::total_cmp);
        e
    }

    pub fn omega_min(&self) -> f64 {
        self.omega(&vec![0; self.spatial_sizes.len()])
    }
}

/// Map an angle into `(-π, π]`.
pub fn principal_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI + 1e-12 {
        a -= 2.0 * PI;
    }
    if a <= -PI + 1e-12 {
        a += 2.0 * PI;
    }
    a
}

fn margin(e: Error) -> Error {
    match e {
        Error::OutOfRange(msg) => Error::Margin(msg),
        other => other,
    }
}

/// Matrix of `Â ↦ (T(a)A)^` for a translation `a`.
pub fn translation_matrix(basis: &QuotientBasis, cov: &CovarianceOperator, a: &[i64]) -> Result<DMatrix<C64>> {
    basis.compress(cov, |g| g.shift(a).map_err(margin))
}

/// Matrix of the `steps`-fold unit time shift, symmetrized.
pub fn time_shift(basis: &QuotientBasis, cov: &CovarianceOperator, steps: i64) -> Result<SectorOperator> {
    let a = cov.geometry().time_unit(steps);
    let raw = translation_matrix(basis, cov, &a)?;
    let mut op = SectorOperator::new(OperatorLabel::Transfer, linalg::hermitian_part(&raw), &basis.sectors);
    op.raw_asymmetry = hermiticity_residual(&raw);
    Ok(op)
}

/// The transfer matrix `e^{-H}`: the quantized unit time shift.
pub fn build_transfer(basis: &QuotientBasis, cov: &CovarianceOperator) -> Result<SectorOperator> {
    let op = time_shift(basis, cov, 1)?;
    let eig = hermitian_eigen(&op.matrix);
    let lo = eig.values.first().copied().unwrap_or(0.0);
    let hi = eig.values.last().copied().unwrap_or(0.0);
    if lo < -TRANSFER_TOL || hi > 1.0 + TRANSFER_TOL {
        return Err(Error::Domain(format!(
            "transfer matrix is not a contraction: spectrum in [{lo:e}, {hi:e}]"
        )));
    }
    Ok(op)
}

/// `H = -log(e^{-H})` by spectral calculus.
pub fn hamiltonian(transfer: &SectorOperator) -> Result<SectorOperator> {
    let eig = hermitian_eigen(&transfer.matrix);
    if let Some(&lo) = eig.values.first() {
        if lo <= 0.0 {
            return Err(Error::Continuation(format!(
                "transfer matrix has non-positive eigenvalue {lo:e}; spectrum {:?}",
                eig.values
            )));
        }
    }
    let h = linalg::spectral_apply_eigen(&eig, |x| c(-x.ln()));
    let op = SectorOperator::new(OperatorLabel::Hamiltonian, h, &transfer.sectors);
    let min = op.eigenvalues().first().copied().unwrap_or(0.0);
    if min < -TRANSFER_TOL {
        return Err(Error::Continuation(format!("Hamiltonian has eigenvalue {min:e} < 0")));
    }
    Ok(op)
}

/// Spatial translation `U_j` and its generator `P_j = -i log U_j`
/// (principal branch, eigenvalues in `(-π, π]`).
#[derive(Debug, Clone)]
pub struct Momentum {
    pub direction: usize,
    pub unitary: SectorOperator,
    pub generator: SectorOperator,
    pub unitarity_residual: f64,
    pub branch: &'static str,
}

pub fn momentum(basis: &QuotientBasis, cov: &CovarianceOperator, j: usize) -> Result<Momentum> {
    let geom = cov.geometry();
    if j >= geom.spatial_dims() {
        return Err(Error::InvalidDimension(format!(
            "spatial direction {j} but the lattice has {} spatial dimensions",
            geom.spatial_dims()
        )));
    }
    let u = translation_matrix(basis, cov, &geom.spatial_unit(j))?;
    let n = u.nrows();
    let residual = linalg::max_abs(&(u.adjoint() * &u - DMatrix::<C64>::identity(n, n)));
    if residual > OP_TOL {
        return Err(Error::NotUnitary(residual));
    }
    let p = unitary_log(&u)?;
    Ok(Momentum {
        direction: j,
        unitary: SectorOperator::new(OperatorLabel::Other, u, &basis.sectors),
        generator: SectorOperator::new(OperatorLabel::Momentum(j), p, &basis.sectors),
        unitarity_residual: residual,
        branch: "principal (-pi, pi]",
    })
}

/// `-i log U` for unitary `U` through its (diagonal) Schur form.
fn unitary_log(u: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let n = u.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (q, t) = nalgebra::linalg::Schur::new(u.clone()).unpack();
    let mut off = 0.0_f64;
    for i in 0..n {
        for j in i + 1..n {
            off = off.max(t[(i, j)].norm());
        }
    }
    if off > 1e-8 {
        return Err(Error::NotUnitary(off));
    }
    let mut d = DMatrix::from_element(n, n, c(0.0));
    for i in 0..n {
        d[(i, i)] = c(principal_angle(t[(i, i)].arg()));
    }
    Ok(linalg::hermitian_part(&(&q * d * q.adjoint())))
}

/// Joint eigenbasis of commuting Hermitian matrices by nested clustering:
/// diagonalize the first, then each later one inside every eigenspace.
/// Returns the basis (columns) and the eigenvalue tuple of each column.
pub fn joint_eigenbasis(ops: &[&DMatrix<C64>]) -> (DMatrix<C64>, Vec<Vec<f64>>) {
    let n = ops.first().map(|m| m.nrows()).unwrap_or(0);
    let mut blocks: Vec<(DMatrix<C64>, Vec<f64>)> = vec![(DMatrix::identity(n, n), Vec::new())];
    for op in ops {
        let mut next = Vec::new();
        for (w, vals) in blocks {
            let compressed = w.adjoint() * *op * &w;
            let eig = hermitian_eigen(&compressed);
            let rotated = &w * &eig.vectors;
            let mut start = 0;
            while start < eig.values.len() {
                let mut end = start + 1;
                let scale = eig.values[start].abs().max(1.0);
                while end < eig.values.len() && eig.values[end] - eig.values[end - 1] < 1e-7 * scale {
                    end += 1;
                }
                let mean = eig.values[start..end].iter().sum::<f64>() / (end - start) as f64;
                let mut v = vals.clone();
                v.push(mean);
                next.push((rotated.columns(start, end - start).into_owned(), v));
                start = end;
            }
        }
        blocks = next;
    }
    let mut basis = DMatrix::from_element(n, n, c(0.0));
    let mut tuples = Vec::with_capacity(n);
    let mut col = 0;
    for (w, vals) in blocks {
        for k in 0..w.ncols() {
            basis.set_column(col, &w.column(k));
            tuples.push(vals.clone());
            col += 1;
        }
    }
    (basis, tuples)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SpectralConditionReport {
    pub m_star: f64,
    pub analytic_bound: f64,
    pub h_min: f64,
    pub max_commutator: f64,
    pub joint_residual: f64,
    pub pass: bool,
}

/// `0 ≤ H` and `|P| ≤ M(H + I)`: `M_star = max |p|/(h + 1)` over the joint
/// eigenbasis, compared with `π√s/ω_min`.
pub fn verify_spectral_condition(
    h: &SectorOperator,
    momenta: &[SectorOperator],
    omega_min: f64,
) -> Result<SpectralConditionReport> {
    let mut max_commutator = 0.0_f64;
    for p in momenta {
        let comm = &h.matrix * &p.matrix - &p.matrix * &h.matrix;
        max_commutator = max_commutator.max(op_norm(&comm));
    }
    if max_commutator > COMMUTATOR_TOL {
        return Err(Error::Unsupported(format!(
            "‖[H, P]‖ = {max_commutator:e}: joint spectral analysis needs commuting H and P"
        )));
    }
    let mut ops: Vec<&DMatrix<C64>> = vec![&h.matrix];
    ops.extend(momenta.iter().map(|p| &p.matrix));
    let (w, tuples) = joint_eigenbasis(&ops);
    let mut joint_residual = 0.0_f64;
    for (k, vals) in tuples.iter().enumerate() {
        let v = w.column(k).into_owned();
        for (op, &lam) in ops.iter().zip(vals) {
            let r = (*op * &v - &v * c(lam)).norm();
            joint_residual = joint_residual.max(r);
        }
    }
    let mut m_star = 0.0_f64;
    let mut h_min = f64::INFINITY;
    for vals in &tuples {
        let energy = vals[0];
        h_min = h_min.min(energy);
        let p = vals[1..].iter().fold(0.0_f64, |a, x| a + x * x).sqrt();
        m_star = m_star.max(p / (energy + 1.0));
    }
    let s = momenta.len() as f64;
    let analytic_bound = PI * s.sqrt() / omega_min;
    Ok(SpectralConditionReport {
        m_star,
        analytic_bound,
        h_min: if h_min.is_finite() { h_min } else { 0.0 },
        max_commutator,
        joint_residual,
        pass: m_star.is_finite() && h_min >= -TRANSFER_TOL && m_star <= analytic_bound + 1e-9,
    })
}

/// Time-zero field `φ(0, h)` with the norm of the part raised out of the
/// top degree (dropped by truncation).
#[derive(Debug, Clone)]
pub struct FieldOperator {
    pub op: SectorOperator,
    /// `max_l ‖(1 - P_N) φ(0,h) e_l‖` over top-sector basis vectors.
    pub truncation_residual: f64,
}

pub fn time_zero_field(basis: &QuotientBasis, cov: &CovarianceOperator, h: &TestFunction) -> Result<FieldOperator> {
    let geom = cov.geometry();
    if geom.reflection != Reflection::Site {
        return Err(Error::Unsupported(
            "the time-zero field needs the site reflection (fixed slice t = 0)".into(),
        ));
    }
    if let Some(t) = h.support_times().into_iter().find(|&t| t != 0) {
        return Err(Error::Domain(format!("time-zero test function has support at t = {t}")));
    }
    let matrix = basis.compress(cov, |g| Ok(g.times_field(h)))?;
    let matrix = linalg::hermitian_part(&matrix);

    let top = basis.max_degree();
    let mut truncation_residual = 0.0_f64;
    if let Some(sector) = basis.sector(top) {
        let raised: Vec<EuclideanVector> = basis.generators.iter().map(|g| g.times_field(h)).collect();
        let n = raised.len();
        let mut gh = DMatrix::from_element(n, n, c(0.0));
        for i in 0..n {
            for j in i..n {
                let v = crate::rp_quantize::rp_form(cov, &raised[i], &raised[j])?;
                gh[(i, j)] = v;
                gh[(j, i)] = v.conj();
            }
        }
        for l in sector.range.clone() {
            let e = basis.isometry.column(l).into_owned();
            let full = (e.adjoint() * &gh * &e)[(0, 0)].re;
            let kept: f64 = matrix.column(l).norm_squared();
            truncation_residual = truncation_residual.max((full - kept).max(0.0).sqrt());
        }
    }
    Ok(FieldOperator {
        op: SectorOperator::new(OperatorLabel::Field, matrix, &basis.sectors),
        truncation_residual,
    })
}

/// `(H + I)^{-1/2}`.
pub fn resolvent_sqrt(h: &SectorOperator) -> DMatrix<C64> {
    spectral_apply(&h.matrix, |x| c(1.0 / (x + 1.0).sqrt()))
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct FieldBound {
    /// Smallest `c` with `c(H + I) ± φ ⪰ 0`.
    pub c: f64,
    pub norm: f64,
    pub ratio: f64,
}

/// `±φ(0,h) ≤ c(h)(H + I)`: `c(h) = ‖(H+I)^{-1/2} φ (H+I)^{-1/2}‖`.
pub fn verify_field_bound(
    h_op: &SectorOperator,
    field: &SectorOperator,
    h: &TestFunction,
    r: u32,
) -> Result<FieldBound> {
    let rs = resolvent_sqrt(h_op);
    let sandwich = &rs * &field.matrix * &rs;
    let eig = hermitian_eigen(&sandwich);
    let c_h = eig.values.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let norm = sobolev_norm(h, r)?;
    let ratio = if norm > 0.0 { c_h / norm } else { 0.0 };
    Ok(FieldBound { c: c_h, norm, ratio })
}

/// Basis, transfer matrix, Hamiltonian and momenta of one quantization.
#[derive(Debug, Clone)]
pub struct QuantizedDynamics {
    pub geometry: std::sync::Arc<crate::lattice::LatticeGeometry>,
    pub basis: QuotientBasis,
    pub transfer: SectorOperator,
    pub hamiltonian: SectorOperator,
    pub momenta: Vec<Momentum>,
    pub vacuum: DVector<C64>,
}

impl QuantizedDynamics {
    pub fn build(cov: &CovarianceOperator, basis: QuotientBasis) -> Result<Self> {
        let transfer = build_transfer(&basis, cov)?;
        let hamiltonian = hamiltonian(&transfer)?;
        let momenta = (0..cov.geometry().spatial_dims())
            .map(|j| momentum(&basis, cov, j))
            .collect::<Result<Vec<_>>>()?;
        let vacuum = basis.vacuum(cov)?;
        Ok(QuantizedDynamics {
            geometry: cov.geometry().clone(),
            basis,
            transfer,
            hamiltonian,
            momenta,
            vacuum,
        })
    }

    pub fn geometry(&self) -> &std::sync::Arc<crate::lattice::LatticeGeometry> {
        &self.geometry
    }

    pub fn momentum_generators(&self) -> Vec<SectorOperator> {
        self.momenta.iter().map(|m| m.generator.clone()).collect()
    }

    /// `e^{-zH}` for complex `z`.
    pub fn heat(&self, z: C64) -> DMatrix<C64> {
        spectral_apply(&self.hamiltonian.matrix, |x| (-z * x).exp())
    }

    /// `U(x) = ∏ U_j^{x_j}`, the quantized spatial translation by `x`.
    pub fn translation(&self, x: &[i64]) -> DMatrix<C64> {
        let n = self.basis.rank;
        let mut out = DMatrix::<C64>::identity(n, n);
        for (m, &xj) in self.momenta.iter().zip(x) {
            let u = &m.unitary.matrix;
            let step = if xj >= 0 { u.clone() } else { u.adjoint() };
            for _ in 0..xj.unsigned_abs() {
                out = &step * out;
            }
        }
        out
    }

    /// One-particle energies: eigenvalues of the degree-one block of `H`.
    pub fn one_particle_energies(&self) -> Vec<f64> {
        self.hamiltonian
            .block(1)
            .map(|b| hermitian_eigen(&b).values)
            .unwrap_or_default()
    }
}

/// Time-zero fields `φ(0, δ_x)` for every slice site, and `e^{itH}` for
/// integer `t`; `φ(0, h)` is linear in `h`, so any time-zero field is a
/// combination of the table entries.
#[derive(Debug, Clone)]
pub struct FieldTable {
    pub fields: Vec<DMatrix<C64>>,
    pub truncation: Vec<f64>,
    evolutions: std::collections::BTreeMap<i64, DMatrix<C64>>,
}

impl FieldTable {
    pub fn new(dynamics: &QuantizedDynamics, cov: &CovarianceOperator) -> Result<Self> {
        let geom = cov.geometry();
        let mut fields = Vec::new();
        let mut truncation = Vec::new();
        for site in geom.slice_sites(0) {
            let f = time_zero_field(&dynamics.basis, cov, &TestFunction::delta(geom, &site)?)?;
            fields.push(f.op.matrix);
            truncation.push(f.truncation_residual);
        }
        let evolutions = (geom.t_min()..=geom.t_max())
            .map(|t| {
                let ev = spectral_apply(&dynamics.hamiltonian.matrix, |x| C64::new(0.0, t as f64 * x).exp());
                (t, ev)
            })
            .collect();
        Ok(FieldTable {
            fields,
            truncation,
            evolutions,
        })
    }

    /// `φ(0, h)` for `h` supported on the slice `t = 0`.
    pub fn time_zero(&self, h: &TestFunction) -> Result<DMatrix<C64>> {
        if let Some(t) = h.support_times().into_iter().find(|&t| t != 0) {
            return Err(Error::Domain(format!("time-zero test function has support at t = {t}")));
        }
        let geom = h.geometry();
        let n = self.fields.first().map_or(0, |f| f.nrows());
        let mut out = DMatrix::from_element(n, n, c(0.0));
        for (index, value) in h.entries() {
            let k = index - geom.index(&geom.slice_sites(0)[0])?;
            out += &self.fields[k] * c(value);
        }
        Ok(out)
    }

    /// Real-time smeared field `φ(f) = Σ_t e^{itH} φ(0, f(t,·)) e^{-itH}`.
    pub fn smeared(&self, f: &TestFunction) -> Result<DMatrix<C64>> {
        let geom = f.geometry();
        let n = self.fields.first().map_or(0, |m| m.nrows());
        let mut total = DMatrix::from_element(n, n, c(0.0));
        for t in f.support_times() {
            let slice = f.slice(t).shift(&geom.time_unit(-t)).map_err(margin)?;
            let ev = &self.evolutions[&t];
            total += ev * self.time_zero(&slice)? * ev.adjoint();
        }
        Ok(total)
    }
}

/// Cap on ascent iterations in [`FieldRatioAscent::ascend`].
pub const ASCENT_STEPS: usize = 200;

/// One seeded start of a field-ratio maximization.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct RatioSample {
    /// Ratio at the random start.
    pub sampled: f64,
    /// Ratio after ascent; never below `sampled`.
    pub ascended: f64,
}

/// Maximizer of `‖L φ(0,h) R‖ / ‖h‖_r` over time-zero `h`.
///
/// With `K = (-Δ_x + 1)^r` and `h = K⁻¹u` the ratio is `‖Σ_y u_y B_y‖` on
/// the unit sphere, a convex function. Linearizing at the top singular pair
/// and renormalizing never decreases it, so ascent from random starts gives
/// lower bounds on the sup that are far sharper than raw sampling.
#[derive(Debug, Clone)]
pub struct FieldRatioAscent {
    directions: Vec<DMatrix<C64>>,
    helmholtz: DMatrix<f64>,
}

impl FieldRatioAscent {
    pub fn new(
        table: &FieldTable,
        left: &DMatrix<C64>,
        right: &DMatrix<C64>,
        geom: &LatticeGeometry,
        r: u32,
    ) -> Result<Self> {
        let helmholtz = spatial_helmholtz_matrix(geom, r);
        let inverse = helmholtz
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Domain("spatial Helmholtz operator is singular".into()))?;
        let n = table.fields.first().map_or(0, |m| m.nrows());
        let directions = (0..inverse.ncols())
            .map(|y| {
                let mut field = DMatrix::from_element(n, n, c(0.0));
                for (x, a) in table.fields.iter().enumerate() {
                    field += a * c(inverse[(x, y)]);
                }
                left * field * right
            })
            .collect();
        Ok(FieldRatioAscent { directions, helmholtz })
    }

    fn value(&self, u: &DVector<f64>) -> (f64, DMatrix<C64>) {
        let n = self.directions[0].nrows();
        let mut m = DMatrix::from_element(n, n, c(0.0));
        for (b, &w) in self.directions.iter().zip(u.iter()) {
            m += b * c(w);
        }
        (op_norm(&m), m)
    }

    /// `(ratio at u, ratio after ascent)` for a nonzero start `u = K h`.
    pub fn ascend(&self, u: &DVector<f64>) -> (f64, f64) {
        let (start, mut m) = self.value(&(u / u.norm()));
        let mut current = start;
        for _ in 0..ASCENT_STEPS {
            let svd = m.clone().svd(true, true);
            let (Some(left), Some(right_t)) = (svd.u, svd.v_t) else {
                break;
            };
            let k = svd.singular_values.imax();
            let a = left.column(k);
            let b = right_t.row(k).adjoint();
            let g = DVector::from_iterator(
                self.directions.len(),
                self.directions.iter().map(|d| (a.adjoint() * d * &b)[(0, 0)].re),
            );
            let norm = g.norm();
            if norm == 0.0 {
                break;
            }
            let (value, next) = self.value(&(g / norm));
            if value <= current * (1.0 + 1e-13) {
                current = current.max(value);
                break;
            }
            current = value;
            m = next;
        }
        (start, current)
    }

    /// Ascent from `count` starts `h` with independent standard normal values.
    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<RatioSample> {
        let n = self.helmholtz.nrows();
        (0..count)
            .map(|_| {
                let h = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
                let (sampled, ascended) = self.ascend(&(&self.helmholtz * h));
                RatioSample { sampled, ascended }
            })
            .collect()
    }
}

/// Ratios `‖φ(f)(H + I)^{-1}‖ / ‖f‖_{r,1}` for `count` random real-time `f`
/// with standard normal values on every site with `0 ≤ t ≤ t_max`.
pub fn local_field_ratios<R: Rng>(
    dynamics: &QuantizedDynamics,
    table: &FieldTable,
    r: u32,
    t_max: i64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let geom = dynamics.geometry().clone();
    let sites: Vec<Site> = geom.sites().filter(|s| s[0] >= 0 && s[0] <= t_max).collect();
    let resolvent = spectral_apply(&dynamics.hamiltonian.matrix, |x| c(1.0 / (x + 1.0)));
    (0..count)
        .map(|_| {
            let f = TestFunction::random(&geom, &sites, rng);
            Ok(op_norm(&(table.smeared(&f)? * &resolvent)) / spacetime_norm(&f, r))
        })
        .collect()
}

/// Real-time smeared field `φ(f) = Σ_t e^{itH} φ(0, f(t,·)) e^{-itH}`.
pub fn smeared_field(dynamics: &QuantizedDynamics, cov: &CovarianceOperator, f: &TestFunction) -> Result<DMatrix<C64>> {
    FieldTable::new(dynamics, cov)?.smeared(f)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LocalFieldReport {
    /// `‖φ(f)(H + I)^{-1}‖`.
    pub resolvent_norm: f64,
    pub spacetime_norm: f64,
    pub ratio: f64,
    /// Finite-dimensional φ(f) is Hermitian; recorded residual.
    pub symmetry_residual: f64,
    /// `‖[φ(f), φ(g)]‖` on vectors of degree `< N_max`, where truncation is exact.
    pub commutator_norm: f64,
    /// Commutator norm on the whole truncated space (includes the top-degree
    /// truncation effect).
    pub commutator_norm_full: f64,
    /// Largest commutator of spectral projections, evaluated when the full
    /// commutator is below `1e-10`.
    pub spectral_projection_commutator: Option<f64>,
}

fn spectral_projections(m: &DMatrix<C64>) -> Vec<DMatrix<C64>> {
    let eig = hermitian_eigen(m);
    let n = eig.values.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && eig.values[end] - eig.values[end - 1] < 1e-8 * eig.values[start].abs().max(1.0) {
            end += 1;
        }
        let w = eig.vectors.columns(start, end - start);
        out.push(w * w.adjoint());
        start = end;
    }
    out
}

pub fn verify_local_field_ops(
    dynamics: &QuantizedDynamics,
    cov: &CovarianceOperator,
    f: &TestFunction,
    g: &TestFunction,
    r: u32,
) -> Result<LocalFieldReport> {
    let table = FieldTable::new(dynamics, cov)?;
    let phi_f = table.smeared(f)?;
    let phi_g = table.smeared(g)?;
    let resolvent = spectral_apply(&dynamics.hamiltonian.matrix, |x| c(1.0 / (x + 1.0)));
    let resolvent_norm = op_norm(&(&phi_f * resolvent));
    let st_norm = spacetime_norm(f, r);
    let comm = &phi_f * &phi_g - &phi_g * &phi_f;
    let commutator_norm_full = op_norm(&comm);
    let top = dynamics.basis.max_degree();
    let low: usize = dynamics
        .basis
        .sectors
        .iter()
        .filter(|s| s.degree < top)
        .map(|s| s.range.len())
        .sum();
    let commutator_norm = if low > 0 {
        op_norm(&comm.columns(0, low).into_owned())
    } else {
        0.0
    };
    let spectral_projection_commutator = if commutator_norm_full < 1e-10 {
        let pf = spectral_projections(&phi_f);
        let pg = spectral_projections(&phi_g);
        let mut worst = 0.0_f64;
        for a in &pf {
            for b in &pg {
                worst = worst.max(linalg::max_abs(&(a * b - b * a)));
            }
        }
        Some(worst)
    } else {
        None
    };
    Ok(LocalFieldReport {
        resolvent_norm,
        spacetime_norm: st_norm,
        ratio: if st_norm > 0.0 { resolvent_norm / st_norm } else { 0.0 },
        symmetry_residual: hermiticity_residual(&phi_f),
        commutator_norm,
        commutator_norm_full,
        spectral_projection_commutator,
    })
}

/// Sup of a sample and whether doubling it moved the sup by less than `rel`.
pub fn sup_stability(first: &[f64], second: &[f64], rel: f64) -> (f64, f64, bool) {
    let a = first.iter().copied().fold(0.0_f64, f64::max);
    let b = first.iter().chain(second).copied().fold(0.0_f64, f64::max);
    let stable = a.is_finite() && b.is_finite() && a > 0.0 && (b - a).abs() < rel * a;
    (a, b, stable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::build_covariance;
    use crate::lattice::{build_geometry, TimeBoundary};
    use crate::rp_quantize::{slice_basis, RANK_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(t: usize, l: &[usize], b: TimeBoundary, deg: usize) -> (CovarianceOperator, QuantizedDynamics) {
        let g = build_geometry(t, l, b, Reflection::Site).unwrap();
        let cov = build_covariance(&g, 1.0).unwrap();
        let basis = slice_basis(&cov, &[0, 1], deg, RANK_TOL).unwrap();
        let dynm = QuantizedDynamics::build(&cov, basis).unwrap();
        (cov, dynm)
    }

    #[test]
    fn principal_angles() {
        assert!((principal_angle(PI) - PI).abs() < 1e-15);
        assert!((principal_angle(-PI) - PI).abs() < 1e-15);
        assert!((principal_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn hamiltonian_of_simple_transfers() {
        let id = SectorOperator::new(OperatorLabel::Transfer, DMatrix::identity(2, 2), &[]);
        assert!(linalg::max_abs(&hamiltonian(&id).unwrap().matrix) < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![c((-1.0f64).exp()), c((-2.0f64).exp())]));
        let h = hamiltonian(&SectorOperator::new(OperatorLabel::Transfer, d, &[])).unwrap();
        assert!((h.matrix[(0, 0)].re - 1.0).abs() < 1e-14);
        assert!((h.matrix[(1, 1)].re - 2.0).abs() < 1e-14);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![c(0.5), c(0.0)]));
        assert!(matches!(
            hamiltonian(&SectorOperator::new(OperatorLabel::Transfer, bad, &[])),
            Err(Error::Continuation(_))
        ));
    }

    #[test]
    fn vacuum_sector_is_invariant() {
        let (_, d) = setup(4, &[], TimeBoundary::Open, 1);
        let vac = d.basis.sector(0).unwrap().range.clone();
        assert_eq!(vac.len(), 1);
        assert!((d.transfer.matrix[(vac.start, vac.start)].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_one_particle_energy() {
        let (_, d) = setup(6, &[], TimeBoundary::Open, 1);
        let e = d.one_particle_energies();
        assert_eq!(e.len(), 1);
        assert!((e[0] - 1.5f64.acosh()).abs() < 1e-10);
        assert!((1.5f64.acosh() - 0.9624236501192069).abs() < 1e-15);
    }

    #[test]
    fn momentum_phases_on_four_site_circle() {
        let (_, d) = setup(3, &[4], TimeBoundary::Dirichlet, 1);
        let p = &d.momenta[0];
        let allowed = [0.0, PI / 2.0, -PI / 2.0, PI];
        let block = p.generator.block(1).unwrap();
        for v in hermitian_eigen(&block).values {
            assert!(allowed.iter().any(|a| (a - v).abs() < 1e-10), "{v}");
        }
        let vac = d.basis.sector(0).unwrap().range.start;
        assert!(p.generator.matrix[(vac, vac)].norm() < 1e-12);
        let u4 = d.translation(&[4]);
        let n = u4.nrows();
        assert!(linalg::max_abs(&(u4 - DMatrix::<C64>::identity(n, n))) < 1e-10);
    }

    #[test]
    fn spectral_condition_zero_without_space() {
        let (_, d) = setup(6, &[], TimeBoundary::Dirichlet, 2);
        let rep = verify_spectral_condition(&d.hamiltonian, &[], 1.5f64.acosh()).unwrap();
        assert_eq!(rep.m_star, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn spectral_condition_one_particle_table() {
        let g = build_geometry(6, &[4], TimeBoundary::Open, Reflection::Site).unwrap();
        let cov = build_covariance(&g, 1.0).unwrap();
        let basis = slice_basis(&cov, &[0, 1], 1, RANK_TOL).unwrap();
        let d = QuantizedDynamics::build(&cov, basis).unwrap();
        let oracle = DispersionOracle::new(&[4], 1.0);
        let rep = verify_spectral_condition(&d.hamiltonian, &d.momentum_generators(), oracle.omega_min()).unwrap();
        let expect = oracle
            .modes()
            .iter()
            .map(|k| oracle.momentum(k)[0].abs() / (oracle.omega(k) + 1.0))
            .fold(0.0, f64::max);
        assert!((rep.m_star - expect).abs() < 1e-8, "{} vs {expect}", rep.m_star);
        assert!(rep.pass);
    }

    #[test]
    fn field_matrix_elements() {
        let (cov, d) = setup(6, &[4], TimeBoundary::Dirichlet, 2);
        let g = cov.geometry().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = TestFunction::random(&g, &g.slice_sites(0), &mut rng);
        let field = time_zero_field(&d.basis, &cov, &h).unwrap();
        assert!(hermiticity_residual(&field.op.matrix) < 1e-12);
        let vac = &d.vacuum;
        let expect_zero = (vac.adjoint() * &field.op.matrix * vac)[(0, 0)];
        assert!(expect_zero.norm() < 1e-12);
        // ⟨Φ̂(δ_(1,x)), φ(0,h) Ω̂⟩ = Σ_y h(y) C((-1,x),(0,y)).
        let x = 2;
        let one =
            crate::rp_quantize::quantize(&d.basis, &cov, &EuclideanVector::deltas(&g, &[vec![1, x]]).unwrap()).unwrap();
        let lhs = (one.adjoint() * &field.op.matrix * vac)[(0, 0)];
        let rhs: f64 = (0..4)
            .map(|y| h.value(&[0, y]) * cov.entry(&[-1, x], &[0, y]).unwrap())
            .sum();
        assert!((lhs.re - rhs).abs() < 1e-12 && lhs.im.abs() < 1e-12);
        assert!(field.truncation_residual > 0.0);
    }

    #[test]
    fn field_bound_homogeneity() {
        let (cov, d) = setup(6, &[4], TimeBoundary::Dirichlet, 2);
        let g = cov.geometry().clone();
        let zero = TestFunction::zero(&g);
        let f0 = time_zero_field(&d.basis, &cov, &zero).unwrap();
        let b0 = verify_field_bound(&d.hamiltonian, &f0.op, &zero, 1).unwrap();
        assert_eq!((b0.c, b0.ratio), (0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = TestFunction::random(&g, &g.slice_sites(0), &mut rng);
        let b1 = verify_field_bound(&d.hamiltonian, &time_zero_field(&d.basis, &cov, &h).unwrap().op, &h, 1).unwrap();
        let h2 = h.scaled(2.0);
        let b2 = verify_field_bound(
            &d.hamiltonian,
            &time_zero_field(&d.basis, &cov, &h2).unwrap().op,
            &h2,
            1,
        )
        .unwrap();
        assert!((b2.c - 2.0 * b1.c).abs() < 1e-12 * b1.c.max(1.0));
        assert!((b2.ratio - b1.ratio).abs() < 1e-12);
    }

    #[test]
    fn local_field_commutators() {
        let (cov, d) = setup(6, &[4], TimeBoundary::Dirichlet, 2);
        let g = cov.geometry().clone();
        let f = TestFunction::from_sites(&g, &[(vec![0, 0], 1.0)]).unwrap();
        let h = TestFunction::from_sites(&g, &[(vec![0, 2], 0.5), (vec![0, 3], -1.0)]).unwrap();
        let same = verify_local_field_ops(&d, &cov, &f, &f, 1).unwrap();
        assert_eq!(same.commutator_norm_full, 0.0);
        assert!(same.spectral_projection_commutator.unwrap() < 1e-8);
        let disjoint = verify_local_field_ops(&d, &cov, &f, &h, 1).unwrap();
        assert!(disjoint.commutator_norm < 1e-10, "{}", disjoint.commutator_norm);
        assert!(disjoint.symmetry_residual < 1e-12);
        assert!(disjoint.ratio.is_finite() && disjoint.ratio > 0.0);
    }

    #[test]
    fn field_table_is_linear_combination() {
        let (cov, d) = setup(6, &[4], TimeBoundary::Dirichlet, 2);
        let g = cov.geometry().clone();
        let table = FieldTable::new(&d, &cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = TestFunction::random(&g, &g.slice_sites(0), &mut rng);
        let direct = time_zero_field(&d.basis, &cov, &h).unwrap().op.matrix;
        assert!(linalg::max_abs(&(table.time_zero(&h).unwrap() - direct)) < 1e-12);
        let f = TestFunction::from_sites(&g, &[(vec![2, 1], 0.7)]).unwrap();
        assert!(table.time_zero(&f).is_err());
        let ev = spectral_apply(&d.hamiltonian.matrix, |x| C64::new(0.0, 2.0 * x).exp());
        let expect = &ev * table.time_zero(&f.shift(&[-2, 0]).unwrap()).unwrap() * ev.adjoint();
        assert!(linalg::max_abs(&(table.smeared(&f).unwrap() - expect)) < 1e-12);
    }

    #[test]
    fn ratio_ascent_is_monotone_and_bounded() {
        let (cov, d) = setup(6, &[4], TimeBoundary::Dirichlet, 2);
        let g = cov.geometry().clone();
        let table = FieldTable::new(&d, &cov).unwrap();
        let rs = resolvent_sqrt(&d.hamiltonian);
        let ascent = FieldRatioAscent::new(&table, &rs, &rs, &g, 1).unwrap();
        // Cauchy-Schwarz over the unit sphere in u.
        let ceiling = ascent.directions.iter().map(|b| op_norm(b).powi(2)).sum::<f64>().sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let h = TestFunction::random(&g, &g.slice_sites(0), &mut rng);
            let u = DVector::from_iterator(4, g.slice_sites(0).iter().map(|s| h.value(s)));
            let (start, top) = ascent.ascend(&(spatial_helmholtz_matrix(&g, 1) * u));
            let field = SectorOperator::new(OperatorLabel::Field, table.time_zero(&h).unwrap(), &d.basis.sectors);
            let direct = verify_field_bound(&d.hamiltonian, &field, &h, 1).unwrap().ratio;
            assert!((start - direct).abs() < 1e-12 * direct);
            assert!(top >= start && top <= ceiling * (1.0 + 1e-12));
        }
    }

    #[test]
    fn joint_basis_of_commuting_diagonals() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.0), c(1.0), c(2.0)]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![c(3.0), c(-3.0), c(0.0)]));
        let (w, tuples) = joint_eigenbasis(&[&a, &b]);
        assert_eq!(tuples.len(), 3);
        for (k, t) in tuples.iter().enumerate() {
            let v = w.column(k).into_owned();
            assert!((&a * &v - &v * c(t[0])).norm() < 1e-12);
            assert!((&b * &v - &v * c(t[1])).norm() < 1e-12);
        }
    }
}
