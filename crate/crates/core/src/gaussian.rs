//! Gaussian (free) field: covariance `C = (-Δ + m²)⁻¹`, the characteristic
//! functional `S(f) = exp(-½⟨f, Cf⟩)` and Wick moments by pairing enumeration.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::lattice::{LatticeGeometry, Site, TestFunction, TimeBoundary};
use crate::{Error, Result};

/// Default cap on the number of fields in a moment; `(11)!! = 10395` pairings.
pub const MOMENT_CAP: usize = 12;

#[derive(Debug, Clone)]
pub struct CovarianceOperator {
    geometry: Arc<LatticeGeometry>,
    mass: f64,
    kernel: DMatrix<f64>,
    precision: DMatrix<f64>,
}

/// Nearest-neighbour `-Δ + m²` on the configured lattice, with the exterior
/// of the time interval integrated out for [`TimeBoundary::Open`].
pub fn precision_matrix(geom: &LatticeGeometry, mass: f64) -> DMatrix<f64> {
    let n = geom.site_count();
    let mut q = DMatrix::zeros(n, n);
    let diag = 2.0 * geom.dim() as f64 + mass * mass;
    for i in 0..n {
        q[(i, i)] += diag;
        for j in geom.neighbors(i) {
            q[(i, j)] -= 1.0;
        }
    }
    if geom.time_boundary == TimeBoundary::Open {
        let b = half_line_boundary(geom, mass);
        let k = geom.slice_size();
        for base in [0, (geom.n_times() - 1) * k] {
            for a in 0..k {
                for c in 0..k {
                    q[(base + a, base + c)] -= b[(a, c)];
                }
            }
        }
    }
    q
}

/// Boundary value `G(1,1)` of the Green function of a half-line of slices,
/// `G = (A - G)⁻¹` with `A = (2 + m²) - Δ_x`, solved as
/// `G = (A - √(A² - 4))/2` on the spectrum of the slice operator.
fn half_line_boundary(geom: &LatticeGeometry, mass: f64) -> DMatrix<f64> {
    let k = geom.slice_size();
    let slice = geom.slice_sites(geom.t_min());
    let mut a = DMatrix::<f64>::zeros(k, k);
    let s = geom.spatial_dims();
    for (i, site) in slice.iter().enumerate() {
        a[(i, i)] += 2.0 + mass * mass + 2.0 * s as f64;
        for j in 0..s {
            for step in [-1i64, 1] {
                let mut dir = vec![0i64; geom.dim()];
                dir[j + 1] = step;
                let nb = geom.shift_site(site, &dir).expect("spatial shift");
                let jdx = slice.iter().position(|x| *x == nb).expect("same slice");
                a[(i, jdx)] -= 1.0;
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(a);
    let g = eig.eigenvalues.map(|lam: f64| 0.5 * (lam - (lam * lam - 4.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&g) * eig.eigenvectors.transpose()
}

pub fn build_covariance(geom: &Arc<LatticeGeometry>, mass: f64) -> Result<CovarianceOperator> {
    if !mass.is_finite() || mass <= 0.0 {
        return Err(Error::InvalidMass(mass));
    }
    let precision = precision_matrix(geom, mass);
    let kernel = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("-Δ + m² is not positive definite".into()))?
        .inverse();
    let kernel = (&kernel + kernel.transpose()) * 0.5;
    Ok(CovarianceOperator {
        geometry: Arc::clone(geom),
        mass,
        kernel,
        precision,
    })
}

impl CovarianceOperator {
    pub fn geometry(&self) -> &Arc<LatticeGeometry> {
        &self.geometry
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// `C(a, b)` for two sites.
    pub fn entry(&self, a: &[i64], b: &[i64]) -> Result<f64> {
        let g = &self.geometry;
        Ok(self.kernel[(g.index(a)?, g.index(b)?)])
    }

    /// `⟨f, C g⟩`.
    pub fn bilinear(&self, f: &TestFunction, g: &TestFunction) -> f64 {
        let mut acc = 0.0;
        for (i, fi) in f.entries() {
            for (j, gj) in g.entries() {
                acc += fi * self.kernel[(i, j)] * gj;
            }
        }
        acc
    }

    /// `max |C · (-Δ + m²) - I|`.
    pub fn inverse_residual(&self) -> f64 {
        let n = self.kernel.nrows();
        (&self.kernel * &self.precision - DMatrix::<f64>::identity(n, n)).amax()
    }

    /// Row-major CSV of the kernel, sites in lexicographic `(t, x₁, …)` order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for i in 0..self.kernel.nrows() {
            let row: Vec<String> = self.kernel.row(i).iter().map(|v| format!("{v:e}")).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sum over all perfect pairings of `{0, …, n-1}` of `∏ w(i, j)`, together
/// with the number of pairings visited. Odd `n` gives `(0, 0)`.
pub fn pairing_sum<F: Fn(usize, usize) -> f64>(n: usize, w: F) -> (f64, u64) {
    fn rec<F: Fn(usize, usize) -> f64>(rest: &mut Vec<usize>, w: &F, count: &mut u64) -> f64 {
        if rest.is_empty() {
            *count += 1;
            return 1.0;
        }
        let first = rest.remove(0);
        let mut total = 0.0;
        for k in 0..rest.len() {
            let partner = rest.remove(k);
            let weight = w(first, partner);
            if weight != 0.0 {
                total += weight * rec(rest, w, count);
            } else {
                *count += double_factorial_count(rest.len());
            }
            rest.insert(k, partner);
        }
        rest.insert(0, first);
        total
    }
    if n % 2 == 1 {
        return (0.0, 0);
    }
    let mut rest: Vec<usize> = (0..n).collect();
    let mut count = 0;
    let total = rec(&mut rest, &w, &mut count);
    (total, count)
}

/// `(n - 1)!!` perfect pairings of `n` (even) objects.
pub fn double_factorial_count(n: usize) -> u64 {
    if n % 2 == 1 {
        return 0;
    }
    (1..n as u64).step_by(2).product::<u64>().max(1)
}

/// Gaussian moment `⟨Φ(f₁)⋯Φ(f_n)⟩` with the default cap.
pub fn wick_moment(cov: &CovarianceOperator, fs: &[TestFunction]) -> Result<f64> {
    wick_moment_capped(cov, fs, MOMENT_CAP)
}

pub fn wick_moment_capped(cov: &CovarianceOperator, fs: &[TestFunction], cap: usize) -> Result<f64> {
    let n = fs.len();
    if n > cap {
        return Err(Error::ComplexityGuard {
            what: "moment order",
            got: n,
            cap,
        });
    }
    if n % 2 == 1 {
        return Ok(0.0);
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = cov.bilinear(&fs[i], &fs[j]);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Ok(pairing_sum(n, |i, j| w[(i, j)]).0)
}

/// The characteristic functional of the Gaussian measure.
#[derive(Debug, Clone)]
pub struct CharacteristicFunctional {
    pub covariance: CovarianceOperator,
}

impl CharacteristicFunctional {
    pub fn new(covariance: CovarianceOperator) -> Self {
        CharacteristicFunctional { covariance }
    }

    /// `S(f) = exp(-½ fᵀCf)` for real `f`.
    pub fn eval(&self, f: &TestFunction) -> f64 {
        (-0.5 * self.covariance.bilinear(f, f)).exp()
    }
}

pub fn eval_s(s: &CharacteristicFunctional, f: &TestFunction) -> f64 {
    s.eval(f)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct C1Report {
    pub samples: usize,
    pub shifts_checked: usize,
    pub max_shift_deviation: f64,
    pub max_reflection_deviation: f64,
}

/// Random test function on a few sites drawn from `sites`.
pub(crate) fn random_sparse<R: Rng>(
    geom: &Arc<LatticeGeometry>,
    sites: &[Site],
    k: usize,
    rng: &mut R,
) -> TestFunction {
    let chosen: Vec<Site> = (0..k).map(|_| sites[rng.gen_range(0..sites.len())].clone()).collect();
    TestFunction::random(geom, &chosen, rng)
}

/// Translation and reflection invariance of `S` on random test functions
/// supported strictly inside the time interval, over all unit shifts.
pub fn verify_c1<R: Rng>(s: &CharacteristicFunctional, sample_count: usize, rng: &mut R) -> C1Report {
    let geom = s.covariance.geometry().clone();
    let interior: Vec<Site> = geom
        .sites()
        .filter(|x| x[0] > geom.t_min() && x[0] < geom.t_max())
        .collect();
    let sites = if interior.is_empty() {
        geom.sites().collect()
    } else {
        interior
    };
    let mut report = C1Report {
        samples: sample_count,
        shifts_checked: 0,
        max_shift_deviation: 0.0,
        max_reflection_deviation: 0.0,
    };
    for _ in 0..sample_count {
        let f = random_sparse(&geom, &sites, 3, rng);
        let sf = s.eval(&f);
        report.max_reflection_deviation = report.max_reflection_deviation.max((s.eval(&f.reflect()) - sf).abs());
        for dir in 0..geom.dim() {
            for step in [-1i64, 1] {
                let mut a = vec![0i64; geom.dim()];
                a[dir] = step;
                if let Ok(fa) = f.shift(&a) {
                    report.shifts_checked += 1;
                    report.max_shift_deviation = report.max_shift_deviation.max((s.eval(&fa) - sf).abs());
                }
            }
        }
    }
    report
}

/// `|S(f_a) - S(f)|` for a unit time shift of `f`.
pub fn time_shift_deviation(s: &CharacteristicFunctional, f: &TestFunction) -> Result<f64> {
    let a = f.geometry().time_unit(1);
    Ok((s.eval(&f.shift(&a)?) - s.eval(f)).abs())
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct C3Report {
    pub samples: usize,
    pub sobolev_r: u32,
    /// Largest `|S(f)|` seen; at most one for real `f`.
    pub max_abs_s: f64,
    /// Smallest `M` with `fᵀCf ≤ M‖f‖²_{α,1}` on every sample.
    pub m_fit: f64,
    pub exponent: u32,
}

/// Growth bound: `|S(f)| ≤ 1` and the quadratic-form constant
/// `fᵀCf ≤ M_fit ‖f‖²_{α,1}` fitted over samples.
pub fn verify_c3(s: &CharacteristicFunctional, r: u32, samples: &[TestFunction]) -> (f64, C3Report) {
    let mut max_abs_s = 0.0_f64;
    let mut m_fit = 0.0_f64;
    for f in samples {
        max_abs_s = max_abs_s.max(s.eval(f).abs());
        let norm = crate::lattice::spacetime_norm(f, r);
        if norm > 0.0 {
            m_fit = m_fit.max(s.covariance.bilinear(f, f) / (norm * norm));
        }
    }
    let report = C3Report {
        samples: samples.len(),
        sobolev_r: r,
        max_abs_s,
        m_fit,
        exponent: 2,
    };
    (m_fit, report)
}

/// Dense vector of `f` (helper for quadratic forms in tests and reports).
pub fn dense_vector(f: &TestFunction) -> DVector<f64> {
    DVector::from_vec(f.dense())
}
