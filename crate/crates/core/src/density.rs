//! Density of localized field polynomials: generator families supported in
//! a positive-time region, time-strip scheduling of their factors, per-degree
//! rank against the truncated physical space, and orthogonal witnesses when
//! the span falls short.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::gaussian::CovarianceOperator;
use crate::lattice::{LatticeGeometry, Site};
use crate::linalg::{orthogonal_complement, singular_values, svd_rank};
use crate::rp_quantize::{monomial_family, quantize, EuclideanVector, QuotientBasis};
use crate::{Error, Result, C64};

/// Largest `|⟨χ, v⟩|` accepted for a witness.
pub const WITNESS_TOL: f64 = 1e-8;

/// A finite set of lattice points with strictly positive times.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub label: String,
    pub sites: Vec<Site>,
}

impl Region {
    pub fn new(geom: &LatticeGeometry, label: &str, sites: Vec<Site>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Domain(format!("region {label} is empty")));
        }
        let mut seen = BTreeSet::new();
        let mut unique = Vec::new();
        for s in sites {
            if !geom.contains(&s) {
                return Err(Error::OutOfRange(format!(
                    "region {label}: site {s:?} is not on the lattice"
                )));
            }
            if s[0] < 1 {
                return Err(Error::SupportViolation { site: s });
            }
            if seen.insert(s.clone()) {
                unique.push(s);
            }
        }
        unique.sort();
        Ok(Region {
            label: label.to_string(),
            sites: unique,
        })
    }

    /// Product region `times × positions`.
    pub fn product(geom: &LatticeGeometry, label: &str, times: &[i64], positions: &[Vec<i64>]) -> Result<Self> {
        let mut sites = Vec::new();
        for &t in times {
            for x in positions {
                let mut s = vec![t];
                s.extend_from_slice(x);
                sites.push(s);
            }
        }
        Region::new(geom, label, sites)
    }

    /// Every positive-time site.
    pub fn all_positive(geom: &LatticeGeometry) -> Self {
        Region {
            label: "all".into(),
            sites: geom.positive_sites(),
        }
    }

    pub fn times(&self) -> Vec<i64> {
        let set: BTreeSet<i64> = self.sites.iter().map(|s| s[0]).collect();
        set.into_iter().collect()
    }

    pub fn sites_at(&self, t: i64) -> Vec<Site> {
        self.sites.iter().filter(|s| s[0] == t).cloned().collect()
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.sites.iter().all(|s| other.sites.contains(s))
    }
}

/// All increasing time tuples `t₁ < ⋯ < tₙ` from `times` with consecutive
/// separation `≥ 2·eps_gap`: the admissible assignments of factor `j` to a
/// time strip.
pub fn strip_schedule(times: &[i64], n: usize, eps_gap: i64) -> Result<Vec<Vec<i64>>> {
    if eps_gap < 1 {
        return Err(Error::Domain(format!("strip spacing {eps_gap} must be at least 1")));
    }
    let mut sorted: Vec<i64> = times.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    fn rec(ts: &[i64], n: usize, gap: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for &t in ts {
            if cur.last().is_none_or(|&p| t - p >= gap) {
                cur.push(t);
                rec(ts, n, gap, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(&sorted, n, 2 * eps_gap, &mut Vec::new(), &mut out);
    if out.is_empty() {
        return Err(Error::ScheduleInfeasible(format!(
            "times {sorted:?} admit no {n} strips separated by {}",
            2 * eps_gap
        )));
    }
    Ok(out)
}

/// Generators of degree `n` in `region`: one delta per strip-scheduled time,
/// at every combination of region sites on those times.
pub fn strip_family(
    geom: &std::sync::Arc<LatticeGeometry>,
    region: &Region,
    n: usize,
    eps_gap: i64,
) -> Result<Vec<EuclideanVector>> {
    let mut out = Vec::new();
    for tuple in strip_schedule(&region.times(), n, eps_gap)? {
        let mut choices: Vec<Vec<Site>> = vec![Vec::new()];
        for &t in &tuple {
            let here = region.sites_at(t);
            choices = choices
                .into_iter()
                .flat_map(|prefix| {
                    here.iter().map(move |s| {
                        let mut p = prefix.clone();
                        p.push(s.clone());
                        p
                    })
                })
                .collect();
        }
        for chosen in choices {
            out.push(EuclideanVector::deltas(geom, &chosen)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SectorRank {
    pub degree: usize,
    pub dim: usize,
    pub rank: usize,
    pub gap: usize,
    /// Degree was reached only through coincident-time generators, or not at all.
    pub schedule_infeasible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityReport {
    pub region: String,
    pub degree: usize,
    pub coincident_times: bool,
    pub generators: usize,
    pub sectors: Vec<SectorRank>,
    /// Smallest singular value of the coordinate matrix over `σ_max`.
    pub min_singular_value: f64,
    pub max_singular_value: f64,
    #[serde(skip)]
    pub coordinates: DMatrix<C64>,
    #[serde(skip)]
    pub tolerance: f64,
}

impl DensityReport {
    pub fn total_gap(&self) -> usize {
        self.sectors.iter().map(|s| s.gap).sum()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.sectors.iter().map(|s| s.rank).collect()
    }
}

/// Quantize the region family of degree `≤ n_max` into `basis` and measure
/// its rank per degree. With `coincident_times` the unscheduled family of all
/// monomials in region deltas is added.
pub fn density_check(
    basis: &QuotientBasis,
    cov: &CovarianceOperator,
    region: &Region,
    n_max: usize,
    tol: f64,
    coincident_times: bool,
) -> Result<DensityReport> {
    if n_max > basis.max_degree() {
        return Err(Error::Domain(format!(
            "degree {n_max} exceeds the ambient truncation {}; enlarge the ambient basis",
            basis.max_degree()
        )));
    }
    let geom = cov.geometry().clone();
    let dim: usize = (0..=n_max).map(|d| basis.sector(d).map_or(0, |s| s.range.len())).sum();

    let mut by_degree: Vec<Vec<EuclideanVector>> = Vec::new();
    let mut infeasible = Vec::new();
    for n in 0..=n_max {
        let mut family = match strip_family(&geom, region, n, 1) {
            Ok(f) => {
                infeasible.push(false);
                f
            }
            Err(Error::ScheduleInfeasible(_)) => {
                infeasible.push(true);
                Vec::new()
            }
            Err(e) => return Err(e),
        };
        if coincident_times {
            family.extend(
                monomial_family(&geom, &region.sites, n)?
                    .into_iter()
                    .filter(|g| g.degree() == n),
            );
        }
        by_degree.push(family);
    }

    let total: usize = by_degree.iter().map(Vec::len).sum();
    let mut coords = DMatrix::from_element(dim, total, C64::new(0.0, 0.0));
    let mut col = 0;
    let mut ranks_cumulative = Vec::new();
    for family in &by_degree {
        for g in family {
            let v = quantize(basis, cov, g).map_err(|e| match e {
                Error::SpanDeficiency { residual } => Error::Domain(format!(
                    "region generator outside the ambient span (residual {residual:e}); enlarge the ambient basis"
                )),
                other => other,
            })?;
            coords.set_column(col, &v.rows(0, dim));
            col += 1;
        }
        ranks_cumulative.push(svd_rank(&coords.columns(0, col).into_owned(), tol));
    }
    let sectors = (0..=n_max)
        .map(|n| {
            let d = basis.sector(n).map_or(0, |s| s.range.len());
            let rank = ranks_cumulative[n] - if n > 0 { ranks_cumulative[n - 1] } else { 0 };
            SectorRank {
                degree: n,
                dim: d,
                rank,
                gap: d.saturating_sub(rank),
                schedule_infeasible: infeasible[n],
            }
        })
        .collect();
    let sv = singular_values(&coords);
    let max_sv = sv.first().copied().unwrap_or(0.0);
    let min_sv = if sv.len() < dim {
        0.0
    } else {
        sv.last().copied().unwrap_or(0.0)
    };
    Ok(DensityReport {
        region: region.label.clone(),
        degree: n_max,
        coincident_times,
        generators: total,
        sectors,
        min_singular_value: if max_sv > 0.0 { min_sv / max_sv } else { 0.0 },
        max_singular_value: max_sv,
        coordinates: coords,
        tolerance: tol,
    })
}

/// A unit vector orthogonal to every generated vector, with
/// `max |⟨χ, v⟩|` over the normalized generators.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Witness {
    pub vector: Vec<[f64; 2]>,
    pub max_overlap: f64,
    pub verified: bool,
    /// Norm of χ in each degree sector.
    pub sector_weights: Vec<f64>,
}

pub fn orthogonal_witness(report: &DensityReport, basis: &QuotientBasis) -> Option<Witness> {
    if report.total_gap() == 0 {
        return None;
    }
    let complement = orthogonal_complement(&report.coordinates, report.tolerance);
    if complement.ncols() == 0 {
        return None;
    }
    let chi: DVector<C64> = complement.column(0).into_owned();
    let mut max_overlap = 0.0_f64;
    for v in report.coordinates.column_iter() {
        let n = v.norm();
        if n > 0.0 {
            max_overlap = max_overlap.max((chi.adjoint() * v)[(0, 0)].norm() / n);
        }
    }
    let sector_weights = (0..=report.degree)
        .map(|d| {
            basis
                .sector(d)
                .map_or(0.0, |s| chi.rows(s.range.start, s.range.len()).norm())
        })
        .collect();
    Some(Witness {
        vector: chi.iter().map(|z| [z.re, z.im]).collect(),
        max_overlap,
        verified: max_overlap <= WITNESS_TOL,
        sector_weights,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DensityRow {
    pub label: String,
    pub degree: usize,
    pub dim: usize,
    pub rank: usize,
    pub gap: usize,
    pub min_singular_value: f64,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DensitySweep {
    pub reports: Vec<DensityReport>,
    pub rows: Vec<DensityRow>,
    /// Rank never decreased from a region to a region containing it.
    pub monotone: bool,
}

impl DensitySweep {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "degree", "dim", "rank", "gap", "min_singular_value", "seconds"])?;
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.degree.to_string(),
                r.dim.to_string(),
                r.rank.to_string(),
                r.gap.to_string(),
                format!("{:e}", r.min_singular_value),
                format!("{:.6}", r.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run [`density_check`] for every region at each truncation degree and
/// check rank monotonicity under region inclusion.
pub fn density_sweep(
    basis: &QuotientBasis,
    cov: &CovarianceOperator,
    regions: &[Region],
    degrees: &[usize],
    tol: f64,
    coincident_times: bool,
) -> Result<DensitySweep> {
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    let mut ranks: Vec<Vec<Vec<usize>>> = Vec::new();
    for region in regions {
        let mut per_degree = Vec::new();
        for &n in degrees {
            let start = Instant::now();
            let rep = density_check(basis, cov, region, n, tol, coincident_times)?;
            let seconds = start.elapsed().as_secs_f64();
            for s in &rep.sectors {
                rows.push(DensityRow {
                    label: region.label.clone(),
                    degree: s.degree,
                    dim: s.dim,
                    rank: s.rank,
                    gap: s.gap,
                    min_singular_value: rep.min_singular_value,
                    seconds,
                });
            }
            per_degree.push(rep.ranks());
            reports.push(rep);
        }
        ranks.push(per_degree);
    }
    let mut monotone = true;
    for (i, a) in regions.iter().enumerate() {
        for (j, b) in regions.iter().enumerate() {
            if i != j && a.is_subset_of(b) {
                for (ra, rb) in ranks[i].iter().zip(&ranks[j]) {
                    monotone &= ra.iter().zip(rb).all(|(x, y)| x <= y);
                }
            }
        }
    }
    Ok(DensitySweep {
        reports,
        rows,
        monotone,
    })
}
