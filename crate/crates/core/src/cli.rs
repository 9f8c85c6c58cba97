//! Configuration, orchestration of the verification suites, and report
//! emission.
//!
//! Each subcommand runs a slice of the checks and stores its section under
//! `<out>/sections/`; `report` merges the sections into `report.json`, and
//! `run` does everything in one pass. Wall-clock timings go to
//! `timings.json` so that `report.json` depends only on config and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::density::Region;
use crate::dynamics::QuantizedDynamics;
use crate::gaussian::{build_covariance, CovarianceOperator};
use crate::lattice::{build_geometry, LatticeGeometry, Reflection, TimeBoundary};
use crate::rp_quantize::{slice_basis, QuotientBasis};
use crate::{Error, Result};

mod checks;

pub use checks::run_check;

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "OSQUANT_OUT_DIR";
/// Largest truncation degree accepted from a config.
pub const N_MAX_CAP: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(rename = "T")]
    pub time_extent: usize,
    pub spatial_sizes: Vec<usize>,
    pub time_boundary: TimeBoundary,
    pub reflection: Reflection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub rp_tol: f64,
    pub rank_tol: f64,
    pub op_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub label: String,
    pub times: Vec<i64>,
    /// Spatial positions; the region is `times × sites`.
    pub sites: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSizes {
    pub c1: usize,
    pub c3: usize,
    pub field_bound: usize,
    pub local_field: usize,
    pub lemma: usize,
}

impl Default for SampleSizes {
    fn default() -> Self {
        SampleSizes {
            c1: 20,
            c3: 50,
            field_bound: 100,
            local_field: 50,
            lemma: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub mass: f64,
    pub n_max: usize,
    pub sobolev_r: u32,
    pub tolerances: Tolerances,
    pub epsilons: Vec<f64>,
    pub derivative_cap: usize,
    pub regions: Vec<RegionConfig>,
    /// Truncation degree of the density checks.
    pub density_degree: usize,
    pub seed: u64,
    #[serde(default)]
    pub samples: SampleSizes,
    /// Add coincident-time generators to the density families.
    #[serde(default)]
    pub coincident_times: bool,
}

impl Default for RunConfig {
    /// The desk configuration.
    fn default() -> Self {
        RunConfig {
            geometry: GeometryConfig {
                time_extent: 6,
                spatial_sizes: vec![4],
                time_boundary: TimeBoundary::Dirichlet,
                reflection: Reflection::Site,
            },
            mass: 1.0,
            n_max: 3,
            sobolev_r: 1,
            tolerances: Tolerances {
                rp_tol: 1e-10,
                rank_tol: 1e-10,
                op_tol: 1e-10,
            },
            epsilons: vec![0.5, 1.0],
            derivative_cap: 4,
            regions: vec![
                RegionConfig {
                    label: "block".into(),
                    times: vec![1, 2, 3, 4],
                    sites: vec![vec![0], vec![1]],
                },
                RegionConfig {
                    label: "parity".into(),
                    times: vec![1, 2, 3, 4],
                    sites: vec![vec![0]],
                },
            ],
            density_degree: 2,
            seed: 42,
            samples: SampleSizes::default(),
            coincident_times: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tolerances;
        for (name, v) in [("rp_tol", t.rp_tol), ("rank_tol", t.rank_tol), ("op_tol", t.op_tol)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidMass(self.mass));
        }
        if self.n_max == 0 || self.n_max > N_MAX_CAP {
            return Err(Error::Config(format!(
                "n_max = {} must lie in 1..={N_MAX_CAP}",
                self.n_max
            )));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Config(
                "epsilons must be a nonempty list of positive numbers".into(),
            ));
        }
        if self.derivative_cap > crate::heatkernel::DERIVATIVE_CAP {
            return Err(Error::Config(format!(
                "derivative_cap = {} exceeds {}",
                self.derivative_cap,
                crate::heatkernel::DERIVATIVE_CAP
            )));
        }
        let s = &self.samples;
        if s.field_bound == 0 || s.local_field == 0 || s.lemma == 0 {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        let geom = self.geometry()?;
        if self.density_degree > self.n_max {
            return Err(Error::Config(format!(
                "density_degree {} exceeds n_max {}",
                self.density_degree, self.n_max
            )));
        }
        for r in &self.regions {
            r.build(&geom)?;
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Arc<LatticeGeometry>> {
        let g = &self.geometry;
        build_geometry(g.time_extent, &g.spatial_sizes, g.time_boundary, g.reflection)
    }
}

impl RegionConfig {
    pub fn build(&self, geom: &LatticeGeometry) -> Result<Region> {
        Region::product(geom, &self.label, &self.times, &self.sites)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Finding,
    Fail,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Finding => "finding",
            Verdict::Fail => "fail",
        }
    }

    /// The worse of two verdicts.
    pub fn and(self, other: Verdict) -> Verdict {
        self.max(other)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub verdict: Verdict,
    pub summary: String,
    pub evidence: Value,
}

impl CheckResult {
    pub fn new(verdict: Verdict, summary: impl Into<String>, evidence: Value) -> Self {
        CheckResult {
            verdict,
            summary: summary.into(),
            evidence,
        }
    }

    pub fn from_error(e: &Error) -> Self {
        CheckResult::new(Verdict::Fail, e.to_string(), json!({ "error": e.to_string() }))
    }
}

/// Checks and fitted constants produced by one subcommand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub checks: BTreeMap<String, CheckResult>,
    pub constants: BTreeMap<String, Value>,
}

impl Section {
    pub fn merge(&mut self, other: Section) {
        self.checks.extend(other.checks);
        self.constants.extend(other.constants);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: RunConfig,
    pub checks: BTreeMap<String, CheckResult>,
    pub constants: BTreeMap<String, Value>,
}

impl Report {
    pub fn new(config: &RunConfig, section: Section) -> Self {
        Report {
            config: config.clone(),
            checks: section.checks,
            constants: section.constants,
        }
    }

    pub fn any_fail(&self) -> bool {
        self.checks.values().any(|c| c.verdict == Verdict::Fail)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Subcommand {
    CheckRp,
    Spectrum,
    Bounds,
    Analyticity,
    Density,
}

impl Subcommand {
    pub const ALL: [Subcommand; 5] = [
        Subcommand::CheckRp,
        Subcommand::Spectrum,
        Subcommand::Bounds,
        Subcommand::Analyticity,
        Subcommand::Density,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::CheckRp => "check-rp",
            Subcommand::Spectrum => "spectrum",
            Subcommand::Bounds => "bounds",
            Subcommand::Analyticity => "analyticity",
            Subcommand::Density => "density",
        }
    }

    /// Check keys computed by this subcommand, in execution order.
    pub fn checks(&self) -> &'static [&'static str] {
        match self {
            Subcommand::CheckRp => &["C1", "C2", "C3"],
            Subcommand::Spectrum => &["transfer", "FE1"],
            Subcommand::Bounds => &["FE2", "localfield"],
            Subcommand::Analyticity => &["analyticity", "lemma"],
            Subcommand::Density => &["theorem2"],
        }
    }

    pub fn owning(check: &str) -> Option<Subcommand> {
        Subcommand::ALL.into_iter().find(|s| s.checks().contains(&check))
    }
}

/// Every check key, in dependency order.
pub fn all_checks() -> Vec<&'static str> {
    Subcommand::ALL
        .iter()
        .flat_map(|s| s.checks().iter().copied())
        .collect()
}

/// Lazily built shared state: covariance, ambient quotient, dynamics.
pub struct Context {
    pub config: RunConfig,
    pub geometry: Arc<LatticeGeometry>,
    pub covariance: CovarianceOperator,
    dynamics: Option<std::result::Result<Arc<QuantizedDynamics>, String>>,
    pub(crate) m_star: Option<f64>,
    pub(crate) analyticity: BTreeMap<String, crate::heatkernel::AnalyticityReport>,
    /// CSV artifacts produced by the checks, by file name.
    pub artifacts: BTreeMap<String, Vec<u8>>,
    pub timings: BTreeMap<String, f64>,
}

impl Context {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let geometry = config.geometry()?;
        let covariance = build_covariance(&geometry, config.mass)?;
        Ok(Context {
            config: config.clone(),
            geometry,
            covariance,
            dynamics: None,
            m_star: None,
            analyticity: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timings: BTreeMap::new(),
        })
    }

    /// Seeded generator for one check; independent of which other checks run.
    pub fn rng(&self, check: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let stream = all_checks().iter().position(|c| *c == check).unwrap_or(usize::MAX) as u64;
        rng.set_stream(stream);
        rng
    }

    /// Ambient quotient generated by the first positive-time slice (`t = 0`
    /// for site reflection, `t = 1` for link reflection) up to degree
    /// `n_max`. By the Markov property this slice spans the quotient.
    pub fn ambient_basis(&self) -> Result<QuotientBasis> {
        let t0 = if self.geometry.reflection == Reflection::Site {
            0
        } else {
            1
        };
        slice_basis(
            &self.covariance,
            &[t0],
            self.config.n_max,
            self.config.tolerances.rank_tol,
        )
    }

    pub fn dynamics(&mut self) -> Result<Arc<QuantizedDynamics>> {
        if self.dynamics.is_none() {
            let built = self
                .ambient_basis()
                .and_then(|b| QuantizedDynamics::build(&self.covariance, b))
                .map(Arc::new)
                .map_err(|e| e.to_string());
            self.dynamics = Some(built);
        }
        match self.dynamics.as_ref().expect("set above") {
            Ok(d) => Ok(d.clone()),
            Err(msg) => Err(Error::Domain(format!("dynamics unavailable: {msg}"))),
        }
    }
}

/// Run the named checks (all of `sub` when `only` is empty).
pub fn run_subcommand(ctx: &mut Context, sub: Subcommand, only: &[String]) -> Section {
    let mut section = Section::default();
    for &check in sub.checks() {
        if !only.is_empty() && !only.iter().any(|o| o == check) {
            continue;
        }
        let start = Instant::now();
        let (result, constants) = match run_check(ctx, check) {
            Ok(pair) => pair,
            Err(e) => (CheckResult::from_error(&e), BTreeMap::new()),
        };
        ctx.timings.insert(check.to_string(), start.elapsed().as_secs_f64());
        section.checks.insert(check.to_string(), result);
        section.constants.extend(constants);
    }
    section
}

/// Full run: every subcommand in dependency order.
pub fn run(config: &RunConfig, only: &[String]) -> Result<(Report, Context)> {
    let mut ctx = Context::new(config)?;
    let mut all = Section::default();
    for sub in Subcommand::ALL {
        let s = run_subcommand(&mut ctx, sub, only);
        all.merge(s);
    }
    Ok((Report::new(config, all), ctx))
}

pub fn section_path(out_dir: &Path, sub: Subcommand) -> PathBuf {
    out_dir.join("sections").join(format!("{}.json", sub.name()))
}

/// Write a section, the artifacts and the timings of a context.
pub fn write_outputs(out_dir: &Path, sub: Option<Subcommand>, section: &Section, ctx: &Context) -> Result<()> {
    fs::create_dir_all(out_dir.join("sections"))?;
    match sub {
        Some(s) => fs::write(section_path(out_dir, s), serde_json::to_string_pretty(section)? + "\n")?,
        None => {
            for s in Subcommand::ALL {
                let part = Section {
                    checks: section
                        .checks
                        .iter()
                        .filter(|(k, _)| s.checks().contains(&k.as_str()))
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .collect(),
                    constants: section.constants.clone(),
                };
                fs::write(section_path(out_dir, s), serde_json::to_string_pretty(&part)? + "\n")?;
            }
        }
    }
    for (name, bytes) in &ctx.artifacts {
        fs::write(out_dir.join(name), bytes)?;
    }
    let timings_path = out_dir.join("timings.json");
    let mut timings: BTreeMap<String, f64> = fs::read_to_string(&timings_path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    timings.extend(ctx.timings.clone());
    fs::write(timings_path, serde_json::to_string_pretty(&timings)? + "\n")?;
    Ok(())
}

/// Merge the stored sections of every subcommand into a report.
pub fn merge_sections(config: &RunConfig, out_dir: &Path) -> Result<Report> {
    let mut all = Section::default();
    for sub in Subcommand::ALL {
        let path = section_path(out_dir, sub);
        let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact {
            artifact: path.display().to_string(),
            subcommand: sub.name().to_string(),
        })?;
        all.merge(serde_json::from_str(&text)?);
    }
    Ok(Report::new(config, all))
}

pub fn write_report(out_dir: &Path, report: &Report) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("report.json");
    fs::write(&path, report.to_json()?)?;
    Ok(path)
}

/// One line per check: `KEY verdict: summary`.
pub fn summary_lines(checks: &BTreeMap<String, CheckResult>) -> Vec<String> {
    all_checks()
        .iter()
        .filter_map(|k| {
            checks
                .get(*k)
                .map(|c| format!("{k:<12} {:<8} {}", c.verdict.as_str(), c.summary))
        })
        .collect()
}
