//! Discretized space-time: a finite time interval times a spatial torus.
//!
//! Sites are integer tuples `(t, x₁, …, x_s)` stored in lexicographic order
//! with time slowest. The time reflection, space-time shifts and the discrete
//! Sobolev norms used throughout the estimates live here.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A lattice point `(t, x₁, …, x_s)`.
pub type Site = Vec<i64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeBoundary {
    /// Field vanishes just outside the time interval.
    Dirichlet,
    /// Time wraps around a circle.
    Periodic,
    /// Exterior half-lines integrated out exactly: the window marginal of the
    /// field on the infinite time line.
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reflection {
    /// `ϑt = -t`, fixing the slice `t = 0`.
    Site,
    /// `ϑt = 1 - t`, no fixed slice.
    Link,
}

/// Which part of `X = X₋ ∪ X₀ ∪ X₊` a time belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeRegion {
    Negative,
    Zero,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeGeometry {
    #[serde(rename = "T")]
    pub time_extent: usize,
    pub spatial_sizes: Vec<usize>,
    pub time_boundary: TimeBoundary,
    pub reflection: Reflection,
}

/// Validated constructor. `T ≥ 1`, every `L_j ≥ 2`.
pub fn build_geometry(
    time_extent: usize,
    spatial_sizes: &[usize],
    time_boundary: TimeBoundary,
    reflection: Reflection,
) -> Result<Arc<LatticeGeometry>> {
    if time_extent < 1 {
        return Err(Error::InvalidDimension(format!(
            "time extent T = {time_extent} must be at least 1"
        )));
    }
    if let Some(l) = spatial_sizes.iter().find(|&&l| l < 2) {
        return Err(Error::InvalidDimension(format!("spatial size {l} must be at least 2")));
    }
    Ok(Arc::new(LatticeGeometry {
        time_extent,
        spatial_sizes: spatial_sizes.to_vec(),
        time_boundary,
        reflection,
    }))
}

impl LatticeGeometry {
    /// Unvalidated constructor for degenerate test lattices (e.g. `T = 0`).
    pub fn new_unchecked(
        time_extent: usize,
        spatial_sizes: &[usize],
        time_boundary: TimeBoundary,
        reflection: Reflection,
    ) -> Arc<Self> {
        Arc::new(LatticeGeometry {
            time_extent,
            spatial_sizes: spatial_sizes.to_vec(),
            time_boundary,
            reflection,
        })
    }

    /// Space-time dimension `d = s + 1`.
    pub fn dim(&self) -> usize {
        self.spatial_sizes.len() + 1
    }

    pub fn spatial_dims(&self) -> usize {
        self.spatial_sizes.len()
    }

    /// Smallest time coordinate: `-T` (site reflection) or `1 - T` (link).
    pub fn t_min(&self) -> i64 {
        match self.reflection {
            Reflection::Site => -(self.time_extent as i64),
            Reflection::Link => 1 - self.time_extent as i64,
        }
    }

    pub fn t_max(&self) -> i64 {
        self.time_extent as i64
    }

    pub fn n_times(&self) -> usize {
        (self.t_max() - self.t_min() + 1) as usize
    }

    pub fn slice_size(&self) -> usize {
        self.spatial_sizes.iter().product()
    }

    pub fn site_count(&self) -> usize {
        self.n_times() * self.slice_size()
    }

    pub fn time_region(&self, t: i64) -> TimeRegion {
        match (self.reflection, t) {
            (_, t) if t >= 1 => TimeRegion::Positive,
            (Reflection::Site, 0) => TimeRegion::Zero,
            _ => TimeRegion::Negative,
        }
    }

    /// `ϑt`.
    pub fn reflect_time(&self, t: i64) -> i64 {
        match self.reflection {
            Reflection::Site => -t,
            Reflection::Link => 1 - t,
        }
    }

    pub fn contains(&self, site: &[i64]) -> bool {
        site.len() == self.dim()
            && (self.t_min()..=self.t_max()).contains(&site[0])
            && site[1..]
                .iter()
                .zip(&self.spatial_sizes)
                .all(|(&x, &l)| (0..l as i64).contains(&x))
    }

    pub fn index(&self, site: &[i64]) -> Result<usize> {
        if !self.contains(site) {
            return Err(Error::OutOfRange(format!("site {site:?} not in lattice")));
        }
        let mut idx = (site[0] - self.t_min()) as usize;
        for (&x, &l) in site[1..].iter().zip(&self.spatial_sizes) {
            idx = idx * l + x as usize;
        }
        Ok(idx)
    }

    pub fn site(&self, mut index: usize) -> Site {
        let mut coords = vec![0i64; self.dim()];
        for j in (0..self.spatial_dims()).rev() {
            let l = self.spatial_sizes[j];
            coords[j + 1] = (index % l) as i64;
            index /= l;
        }
        coords[0] = index as i64 + self.t_min();
        coords
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.site_count()).map(|i| self.site(i))
    }

    /// All sites of one time slice, in lexicographic spatial order.
    pub fn slice_sites(&self, t: i64) -> Vec<Site> {
        let base = ((t - self.t_min()) as usize) * self.slice_size();
        (0..self.slice_size()).map(|k| self.site(base + k)).collect()
    }

    /// Sites of `X₊` (t ≥ 1).
    pub fn positive_sites(&self) -> Vec<Site> {
        self.sites().filter(|s| s[0] >= 1).collect()
    }

    /// `ϑ` applied to a site.
    pub fn reflect_site(&self, site: &[i64]) -> Site {
        let mut out = site.to_vec();
        out[0] = self.reflect_time(site[0]);
        out
    }

    /// Translate a site by `a`; spatial components wrap, time wraps only for
    /// periodic boundary.
    pub fn shift_site(&self, site: &[i64], a: &[i64]) -> Result<Site> {
        if a.len() != self.dim() {
            return Err(Error::InvalidDimension(format!(
                "shift vector has length {}, expected {}",
                a.len(),
                self.dim()
            )));
        }
        let mut out = site.to_vec();
        let t = site[0] + a[0];
        out[0] = match self.time_boundary {
            TimeBoundary::Periodic => (t - self.t_min()).rem_euclid(self.n_times() as i64) + self.t_min(),
            _ if (self.t_min()..=self.t_max()).contains(&t) => t,
            _ => {
                return Err(Error::OutOfRange(format!(
                    "time {t} leaves the interval [{}, {}]",
                    self.t_min(),
                    self.t_max()
                )))
            }
        };
        for j in 0..self.spatial_dims() {
            let l = self.spatial_sizes[j] as i64;
            out[j + 1] = (site[j + 1] + a[j + 1]).rem_euclid(l);
        }
        Ok(out)
    }

    /// Nearest-neighbour links of a site, with multiplicity (on a circle of
    /// two sites both spatial links reach the same neighbour). Time links
    /// leaving the interval are omitted unless time is periodic.
    pub fn neighbors(&self, index: usize) -> Vec<usize> {
        let site = self.site(index);
        let mut out = Vec::with_capacity(2 * self.dim());
        for dir in 0..self.dim() {
            for step in [-1i64, 1] {
                let mut a = vec![0i64; self.dim()];
                a[dir] = step;
                if let Ok(nb) = self.shift_site(&site, &a) {
                    out.push(self.index(&nb).expect("shifted site in range"));
                }
            }
        }
        out
    }

    /// Unit vector `e_j` in spatial direction `j` (1-based space-time index).
    pub fn spatial_unit(&self, j: usize) -> Vec<i64> {
        let mut a = vec![0i64; self.dim()];
        a[j + 1] = 1;
        a
    }

    pub fn time_unit(&self, steps: i64) -> Vec<i64> {
        let mut a = vec![0i64; self.dim()];
        a[0] = steps;
        a
    }
}

/// A real function on lattice sites with finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    geometry: Arc<LatticeGeometry>,
    values: BTreeMap<usize, f64>,
}

impl TestFunction {
    pub fn zero(geometry: &Arc<LatticeGeometry>) -> Self {
        TestFunction {
            geometry: Arc::clone(geometry),
            values: BTreeMap::new(),
        }
    }

    pub fn delta(geometry: &Arc<LatticeGeometry>, site: &[i64]) -> Result<Self> {
        Self::from_sites(geometry, &[(site.to_vec(), 1.0)])
    }

    pub fn from_sites(geometry: &Arc<LatticeGeometry>, entries: &[(Site, f64)]) -> Result<Self> {
        let mut f = Self::zero(geometry);
        for (site, v) in entries {
            if !v.is_finite() {
                return Err(Error::Domain(format!("non-finite value {v} at {site:?}")));
            }
            let idx = geometry.index(site)?;
            *f.values.entry(idx).or_insert(0.0) += v;
        }
        f.values.retain(|_, v| *v != 0.0);
        Ok(f)
    }

    /// Independent standard-normal values on the given sites.
    pub fn random<R: Rng>(geometry: &Arc<LatticeGeometry>, sites: &[Site], rng: &mut R) -> Self {
        let entries: Vec<(Site, f64)> = sites.iter().map(|s| (s.clone(), standard_normal(rng))).collect();
        Self::from_sites(geometry, &entries).expect("sites belong to geometry")
    }

    pub fn geometry(&self) -> &Arc<LatticeGeometry> {
        &self.geometry
    }

    /// Nonzero entries keyed by site index.
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().map(|(&i, &v)| (i, v))
    }

    pub fn value(&self, site: &[i64]) -> f64 {
        self.geometry
            .index(site)
            .ok()
            .and_then(|i| self.values.get(&i).copied())
            .unwrap_or(0.0)
    }

    pub fn support(&self) -> Vec<Site> {
        self.values.keys().map(|&i| self.geometry.site(i)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    /// Distinct times carrying nonzero values, ascending.
    pub fn support_times(&self) -> Vec<i64> {
        let mut ts: Vec<i64> = self.support().iter().map(|s| s[0]).collect();
        ts.dedup();
        ts
    }

    /// Dense values over all sites.
    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.geometry.site_count()];
        for (&i, &v) in &self.values {
            out[i] = v;
        }
        out
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        for v in out.values.values_mut() {
            *v *= lambda;
        }
        out.values.retain(|_, v| *v != 0.0);
        out
    }

    pub fn add(&self, other: &TestFunction) -> Self {
        let mut out = self.clone();
        for (&i, &v) in &other.values {
            *out.values.entry(i).or_insert(0.0) += v;
        }
        out.values.retain(|_, v| *v != 0.0);
        out
    }

    /// Restriction to the slice at time `t`.
    pub fn slice(&self, t: i64) -> Self {
        let mut out = Self::zero(&self.geometry);
        for (&i, &v) in &self.values {
            if self.geometry.site(i)[0] == t {
                out.values.insert(i, v);
            }
        }
        out
    }

    /// `(ϑf)(t, x) = f(ϑ⁻¹t, x)`.
    pub fn reflect(&self) -> Self {
        let g = &self.geometry;
        let mut out = Self::zero(g);
        for (&i, &v) in &self.values {
            let r = g.reflect_site(&g.site(i));
            let idx = g.index(&r).expect("reflection is a bijection of sites");
            out.values.insert(idx, v);
        }
        out
    }

    /// `f_a(x) = f(x - a)`.
    pub fn shift(&self, a: &[i64]) -> Result<Self> {
        let g = &self.geometry;
        let mut out = Self::zero(g);
        for (&i, &v) in &self.values {
            let s = g.shift_site(&g.site(i), a)?;
            out.values.insert(g.index(&s)?, v);
        }
        Ok(out)
    }

    pub fn to_record(&self) -> TestFunctionRecord {
        TestFunctionRecord {
            entries: self.values.iter().map(|(&i, &v)| (self.geometry.site(i), v)).collect(),
        }
    }

    pub fn from_record(geometry: &Arc<LatticeGeometry>, rec: &TestFunctionRecord) -> Result<Self> {
        Self::from_sites(geometry, &rec.entries)
    }
}

/// Sparse serialized form: a list of `(site, value)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionRecord {
    pub entries: Vec<(Site, f64)>,
}

pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Apply `-Δ_x + 1` (spatial nearest-neighbour Laplacian on the torus) to a
/// dense slice vector.
fn apply_spatial_helmholtz(geom: &LatticeGeometry, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    let s = geom.spatial_dims();
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = (1.0 + 2.0 * s as f64) * v[k];
        let mut stride = 1usize;
        for j in (0..s).rev() {
            let l = geom.spatial_sizes[j];
            let xj = (k / stride) % l;
            let up = k - xj * stride + ((xj + 1) % l) * stride;
            let down = k - xj * stride + ((xj + l - 1) % l) * stride;
            acc -= v[up] + v[down];
            stride *= l;
        }
        *o = acc;
    }
    out
}

/// Matrix of `(-Δ_x + 1)^r` on one time slice, in `slice_sites` order.
pub fn spatial_helmholtz_matrix(geom: &LatticeGeometry, r: u32) -> DMatrix<f64> {
    let n = geom.slice_sites(0).len();
    let mut out = DMatrix::identity(n, n);
    for j in 0..n {
        let mut v: Vec<f64> = (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
        for _ in 0..r {
            v = apply_spatial_helmholtz(geom, &v);
        }
        out.set_column(j, &DVector::from_vec(v));
    }
    out
}

/// `‖(-Δ_x + 1)^r h‖_{ℓ²}` for `h` supported on a single time slice.
pub fn sobolev_norm(h: &TestFunction, r: u32) -> Result<f64> {
    let times = h.support_times();
    if times.len() > 1 {
        return Err(Error::Domain(format!(
            "time-zero norm needs single-slice support, got times {times:?}"
        )));
    }
    let Some(&t) = times.first() else {
        return Ok(0.0);
    };
    let g = h.geometry();
    let mut v: Vec<f64> = g.slice_sites(t).iter().map(|s| h.value(s)).collect();
    for _ in 0..r {
        v = apply_spatial_helmholtz(g, &v);
    }
    Ok(v.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// `‖f‖_{α,1} = Σ_t ‖f(t, ·)‖_α` with unit time spacing.
pub fn spacetime_norm(f: &TestFunction, r: u32) -> f64 {
    f.support_times()
        .into_iter()
        .map(|t| sobolev_norm(&f.slice(t), r).expect("slice has single-time support"))
        .sum()
}
