//! Run configurations and the batch pipeline: simulate, sweep, path
//! estimator, per-seed artifacts and cross-seed summaries.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundling::BundleMethod;
use crate::chf::{discounted_moment, MomentBackend, MomentRequest};
use crate::engine::{backward_sweep, path_estimator, sim_options, SgbmConfig, SweepOutput};
use crate::error::{Error, Result};
use crate::model::{preset, ContractKind, ContractSpec, ModelFamily, ModelSpec, TimeGrid};
use crate::monomial::MonomialSet;
use crate::paths::{simulate_with, PathGrid};
use crate::report::{Estimator, ExposureReport};
use crate::risk::CreditSpec;

pub const DEFAULT_BUNDLES: usize = 64;

/// The only environment variable read: overrides the output directory.
pub const OUTPUT_DIR_ENV: &str = "SGBM_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorChoice {
    Direct,
    Path,
    #[default]
    Both,
}

impl EstimatorChoice {
    pub fn includes(self, e: Estimator) -> bool {
        matches!((self, e), (EstimatorChoice::Both, _) | (EstimatorChoice::Direct, Estimator::Direct) | (EstimatorChoice::Path, Estimator::Path))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BundlingKind {
    #[default]
    Bifurcation,
    EqualNumber,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub maturity: Option<f64>,
    pub steps: Option<usize>,
    pub dt: Option<f64>,
    /// Explicit monitoring dates; overrides `maturity` and `steps`.
    pub dates: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationFlags {
    /// Compare moment backends on a grid of conditioning states.
    pub check_backends: bool,
    /// Compare analytic moments with sample moments of the simulated paths.
    pub moment_probe: bool,
    /// Write bundle assignments and regression coefficients.
    pub dump_bundles: bool,
}

fn default_paths() -> usize {
    100_000
}
fn default_order() -> usize {
    2
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_output() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    /// Base parameter set; the tables below override single fields of it.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub model: toml::Table,
    #[serde(default)]
    pub contract: toml::Table,
    #[serde(default)]
    pub grid: GridSection,
    /// Pass-1 paths `N`.
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// Pass-2 paths; `2 N` when absent.
    #[serde(default)]
    pub path_paths: Option<usize>,
    /// Basis order `p`.
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub bundling: BundlingKind,
    /// Total bundle count `J` for bifurcation (default 64), or for
    /// one-dimensional equal-number bundling on x.
    #[serde(default)]
    pub bundles: Option<usize>,
    /// Per-dimension splits `(J1, J2, J3)` for equal-number bundling.
    #[serde(default)]
    pub splits: Option<Vec<usize>>,
    #[serde(default)]
    pub estimator: EstimatorChoice,
    #[serde(default)]
    pub credit: CreditSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub intervals: Option<usize>,
    #[serde(default)]
    pub validation: ValidationFlags,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

/// A fully specified run.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub name: String,
    pub model: ModelSpec,
    pub contract: ContractSpec,
    pub grid: TimeGrid,
    pub sgbm: SgbmConfig,
    pub paths: usize,
    pub path_paths: usize,
    pub estimator: EstimatorChoice,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub validation: ValidationFlags,
}

fn to_table<T: Serialize>(v: &T) -> toml::Table {
    toml::Table::try_from(v).expect("serializes to a table")
}

fn section<T: serde::de::DeserializeOwned>(name: &str, table: toml::Table) -> Result<T> {
    table.try_into().map_err(|e: toml::de::Error| Error::Config(format!("[{name}] {}", e.message().trim())))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies overrides to the preset (if any) and checks every module
    /// precondition that can be checked without simulating.
    pub fn resolve(&self) -> Result<Resolved> {
        let base = self.preset.as_deref().map(preset).transpose()?;

        let mut model_t = base.as_ref().map(|b| to_table(&b.0)).unwrap_or_default();
        model_t.extend(self.model.clone());
        let model: ModelSpec = section("model", model_t)?;
        model.validate()?;

        let user_maturity = self.contract.get("maturity").and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64)));
        let g = &self.grid;
        let dt = g.dt.or(base.as_ref().map(|b| b.2.dt)).ok_or_else(|| Error::Config("[grid] missing field `dt`".into()))?;
        let grid = if let Some(dates) = &g.dates {
            TimeGrid::new(dates.clone(), dt)?
        } else {
            let maturity = g
                .maturity
                .or(user_maturity)
                .or(base.as_ref().map(|b| b.2.maturity()))
                .ok_or_else(|| Error::Config("[grid] missing field `maturity`".into()))?;
            let steps = g
                .steps
                .or(base.as_ref().map(|b| b.2.n_steps()))
                .ok_or_else(|| Error::Config("[grid] missing field `steps`".into()))?;
            TimeGrid::uniform(maturity, steps, dt)?
        };

        let mut contract_t = base.as_ref().map(|b| to_table(&b.1)).unwrap_or_default();
        contract_t.extend(self.contract.clone());
        if user_maturity.is_none() {
            contract_t.insert("maturity".into(), toml::Value::Float(grid.maturity()));
        }
        let mut contract: ContractSpec = section("contract", contract_t)?;
        if !self.contract.contains_key("exercise_dates") {
            contract.exercise_dates =
                if contract.kind == ContractKind::Bermudan { grid.dates[1..].to_vec() } else { Vec::new() };
        }
        if contract.kind != ContractKind::DownAndOutBarrier && !self.contract.contains_key("barrier") {
            contract.barrier = None;
        }
        contract.validate(model.s0)?;
        contract.exercise_flags(&grid)?;

        let n_dims = model.family.n_dims();
        let bundling = match (self.bundling, &self.splits, self.bundles) {
            (BundlingKind::Bifurcation, None, j) => BundleMethod::bifurcation_for(j.unwrap_or(DEFAULT_BUNDLES), n_dims)?,
            (BundlingKind::Bifurcation, Some(_), _) => {
                return Err(Error::Config("`splits` needs bundling = \"equal-number\"".into()))
            }
            (BundlingKind::EqualNumber, Some(s), _) => BundleMethod::EqualNumber { splits: s.clone() },
            (BundlingKind::EqualNumber, None, j) => BundleMethod::EqualNumber { splits: vec![j.unwrap_or(1)] },
        };
        bundling.validate(n_dims)?;
        let mut sgbm = SgbmConfig::new(self.order, bundling);
        sgbm.credit = self.credit;
        sgbm.credit.validate()?;
        if let Some(k) = self.intervals {
            sgbm.intervals = k;
        }
        if self.order > model.family.degree_cap() {
            return Err(Error::DegreeTooHigh { degree: self.order, cap: model.family.degree_cap() });
        }

        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("`seeds` must be distinct".into()));
        }
        if self.paths < 2 {
            return Err(Error::Config("`paths` must be at least 2".into()));
        }
        let path_paths = self.path_paths.unwrap_or(2 * self.paths);
        if path_paths < 2 {
            return Err(Error::Config("`path_paths` must be at least 2".into()));
        }
        let output_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| self.output_dir.clone());
        Ok(Resolved {
            name: self.name.clone().or_else(|| self.preset.clone()).unwrap_or_else(|| "run".into()),
            model,
            contract,
            grid,
            sgbm,
            paths: self.paths,
            path_paths,
            estimator: self.estimator,
            seeds: self.seeds.clone(),
            output_dir,
            validation: self.validation.clone(),
        })
    }
}

/// Seed of the out-of-sample pass belonging to pass-1 seed `seed`.
pub fn path_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    /// Pass-1 seed; the path estimator uses [`path_seed`] of it.
    pub seed: u64,
    pub estimator: Estimator,
    pub v0: f64,
    pub v0_std_err: f64,
    pub cva: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
    pub csv: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation across seeds, 0 for one seed.
    pub std: f64,
}

impl Stat {
    pub fn of(x: &[f64]) -> Stat {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let std = if x.len() > 1 { (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Stat { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub estimator: Estimator,
    pub seeds: usize,
    pub v0: Stat,
    pub cva: Stat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta0: Option<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<Stat>,
}

impl Aggregate {
    pub fn from_seeds(estimator: Estimator, rows: &[&SeedResult]) -> Aggregate {
        let col = |f: &dyn Fn(&SeedResult) -> Option<f64>| -> Option<Stat> {
            rows.iter().map(|r| f(r)).collect::<Option<Vec<f64>>>().map(|v| Stat::of(&v))
        };
        Aggregate {
            estimator,
            seeds: rows.len(),
            v0: col(&|r| Some(r.v0)).unwrap(),
            cva: col(&|r| Some(r.cva)).unwrap(),
            delta0: col(&|r| r.delta0),
            gamma0: col(&|r| r.gamma0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backends_max_rel_diff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment_probe_max_z: Option<f64>,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub family: ModelFamily,
    pub kind: ContractKind,
    pub paths: usize,
    pub path_paths: usize,
    pub order: usize,
    pub bundles: usize,
    pub results: Vec<SeedResult>,
    pub aggregates: Vec<Aggregate>,
    pub validation: ValidationOutcome,
}

impl RunSummary {
    pub fn aggregate(&self, e: Estimator) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.estimator == e)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }

    pub fn passed(&self) -> bool {
        self.validation.failures.is_empty()
    }
}

/// Direct and (optionally) path reports of one seed.
pub struct SeedRun {
    pub sweep: SweepOutput,
    pub path: Option<ExposureReport>,
    pub paths: PathGrid,
}

/// Pipeline for one seed without touching the filesystem.
pub fn run_seed(r: &Resolved, seed: u64) -> Result<SeedRun> {
    let paths = simulate_with(&r.model, &r.grid, r.paths, seed, sim_options(&r.contract))?;
    let sweep = backward_sweep(&r.model, &r.contract, &r.grid, &paths, &r.sgbm)?;
    let path = if r.estimator.includes(Estimator::Path) {
        Some(path_estimator(&r.model, &r.contract, &r.grid, &sweep.pass1, &r.sgbm, r.path_paths, path_seed(seed))?)
    } else {
        None
    };
    Ok(SeedRun { sweep, path, paths })
}

fn seed_result(seed: u64, rep: &ExposureReport, csv: String) -> SeedResult {
    SeedResult {
        seed,
        estimator: rep.estimator,
        v0: rep.v0,
        v0_std_err: rep.v0_std_err,
        cva: rep.cva,
        delta0: rep.delta0(),
        gamma0: rep.gamma0(),
        csv,
    }
}

/// Runs every seed, writing `seed-<s>/<estimator>.csv`, a per-seed
/// `summary.toml` and the cross-seed `summary.toml` under the output
/// directory. Validation failures are recorded, not raised.
pub fn run(r: &Resolved) -> Result<RunSummary> {
    let out = &r.output_dir;
    let mut results = Vec::new();
    let mut validation = ValidationOutcome::default();
    if r.validation.check_backends {
        let rows = moment_backend_table(&r.model, &r.grid, r.sgbm.order)?;
        write_atomic(&out.join("moments.csv"), moment_rows_csv(&rows).as_bytes())?;
        let worst = rows.iter().map(|x| x.rel_diff).fold(0.0, f64::max);
        validation.backends_max_rel_diff = Some(worst);
        if let Some(bad) = rows.iter().find(|x| !x.passed) {
            validation.failures.push(format!(
                "moment backends disagree at tau={} v={} exps={:?}: {} vs {}",
                bad.tau, bad.v, bad.exps, bad.primary, bad.reference
            ));
        }
    }
    for &seed in &r.seeds {
        let run = run_seed(r, seed)?;
        let dir = out.join(format!("seed-{seed}"));
        let mut per_seed = Vec::new();
        if r.estimator.includes(Estimator::Direct) {
            let csv = run.sweep.report.profile.to_csv_string();
            write_atomic(&dir.join("direct.csv"), csv.as_bytes())?;
            per_seed.push(seed_result(seed, &run.sweep.report, format!("seed-{seed}/direct.csv")));
        }
        if let Some(p) = &run.path {
            let csv = p.profile.to_csv_string();
            write_atomic(&dir.join("path.csv"), csv.as_bytes())?;
            per_seed.push(seed_result(seed, p, format!("seed-{seed}/path.csv")));
        }
        if r.validation.dump_bundles {
            let (bundles, coeffs) = dump_bundles(r, &run)?;
            write_atomic(&dir.join("bundles.csv"), bundles.as_bytes())?;
            write_atomic(&dir.join("coefficients.csv"), coeffs.as_bytes())?;
        }
        if r.validation.moment_probe {
            let rows = moment_probe(&r.model, &run.paths, r.sgbm.order)?;
            let z = rows.iter().map(|x| x.z.abs()).fold(0.0, f64::max);
            validation.moment_probe_max_z = Some(validation.moment_probe_max_z.unwrap_or(0.0).max(z));
            if let Some(bad) = rows.iter().find(|x| !x.passed) {
                validation.failures.push(format!(
                    "seed {seed}: moment {:?} analytic {} vs sample {} ({} standard errors)",
                    bad.exps, bad.analytic, bad.sample, bad.z
                ));
            }
        }
        #[derive(Serialize)]
        struct PerSeed<'a> {
            results: &'a [SeedResult],
        }
        let text = toml::to_string(&PerSeed { results: &per_seed }).expect("serializes");
        write_atomic(&dir.join("summary.toml"), text.as_bytes())?;
        results.extend(per_seed);
    }
    let aggregates = [Estimator::Direct, Estimator::Path]
        .into_iter()
        .filter_map(|e| {
            let rows: Vec<&SeedResult> = results.iter().filter(|x| x.estimator == e).collect();
            (!rows.is_empty()).then(|| Aggregate::from_seeds(e, &rows))
        })
        .collect();
    let summary = RunSummary {
        name: r.name.clone(),
        family: r.model.family,
        kind: r.contract.kind,
        paths: r.paths,
        path_paths: r.path_paths,
        order: r.sgbm.order,
        bundles: r.sgbm.bundling.n_bundles(r.model.family.n_dims()),
        results,
        aggregates,
        validation,
    };
    write_atomic(&out.join("summary.toml"), summary.to_toml().as_bytes())?;
    Ok(summary)
}

/// Bundle ids per path and date, and the regression coefficients, as CSV.
pub fn dump_bundles(r: &Resolved, run: &SeedRun) -> Result<(String, String)> {
    let mut bundles = Vec::new();
    let vars = r.model.family.state_vars();
    let knock = match r.contract.kind {
        ContractKind::DownAndOutBarrier => Some(run.paths.knockout_dates(r.contract.barrier.unwrap(), r.contract.monitoring)?),
        _ => None,
    };
    let mut header = true;
    for (m, rule) in run.sweep.pass1.rules.iter().enumerate() {
        let Some(rule) = rule else { continue };
        let cols: Vec<&[f64]> = match r.sgbm.bundling {
            BundleMethod::Bifurcation { .. } => vars.iter().map(|&v| run.paths.column(v, m)).collect(),
            BundleMethod::EqualNumber { .. } => crate::bundling::priority_order(r.model.family)
                .into_iter()
                .map(|v| run.paths.column(v, m))
                .collect(),
        };
        let active = crate::bundling::active_filter(knock.as_deref(), None, m, run.paths.n_paths());
        let assign = rule.classify(&cols, Some(&active))?;
        assign.write_csv(&mut bundles, r.grid.dates[m], header)?;
        header = false;
    }
    let mut coeffs = Vec::new();
    run.sweep.pass1.coeffs.write_csv(&mut coeffs)?;
    Ok((String::from_utf8(bundles).expect("ascii"), String::from_utf8(coeffs).expect("ascii")))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentCheckRow {
    pub tau: f64,
    pub v: f64,
    pub exps: [u8; 3],
    /// Closed form for Heston, power series otherwise.
    pub primary: f64,
    /// Power series for Heston, finite differences otherwise.
    pub reference: f64,
    pub rel_diff: f64,
    pub passed: bool,
}

/// Relative agreement required between two analytic moment backends.
pub const BACKEND_TOL: f64 = 1e-6;
/// Looser tolerance when the reference is a finite-difference derivative.
pub const FD_TOL: f64 = 1e-4;

/// Backend comparison on a 10 x 10 grid of interval lengths and variances
/// for every monomial up to `order`.
pub fn moment_backend_table(model: &ModelSpec, grid: &TimeGrid, order: usize) -> Result<Vec<MomentCheckRow>> {
    let heston = model.family == ModelFamily::Heston;
    let max_tau = grid.dates.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let v_ref = if model.family.stochastic_variance() { model.vbar.max(model.v0).max(1e-4) } else { model.sigma * model.sigma };
    let set = MonomialSet::new(model.family.n_dims(), order.min(model.family.degree_cap()));
    let vars = model.family.state_vars();
    let mut rows = Vec::new();
    for i in 1..=10 {
        let tau = max_tau * i as f64 / 10.0;
        for j in 0..10 {
            let v = if model.family.stochastic_variance() { v_ref * (0.05 + 0.3 * j as f64) } else { v_ref };
            for e in set.exponents() {
                let mut exps = [0u8; 3];
                for (d, sv) in vars.iter().enumerate() {
                    exps[sv.slot()] = e[d];
                }
                let req = MomentRequest { exps, tau, state: [model.x0(), v, model.r0] };
                let (a, b, tol) = if heston && req.degree() <= 2 {
                    (
                        discounted_moment(model, &req, MomentBackend::ClosedForm)?,
                        discounted_moment(model, &req, MomentBackend::PowerSeries)?,
                        BACKEND_TOL,
                    )
                } else {
                    (
                        discounted_moment(model, &req, MomentBackend::PowerSeries)?,
                        discounted_moment(model, &req, MomentBackend::FiniteDifference)?,
                        FD_TOL,
                    )
                };
                let rel = if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
                rows.push(MomentCheckRow { tau, v, exps, primary: a, reference: b, rel_diff: rel, passed: rel <= tol });
            }
            if !model.family.stochastic_variance() {
                break;
            }
        }
    }
    Ok(rows)
}

pub fn moment_rows_csv(rows: &[MomentCheckRow]) -> String {
    let mut s = String::from("tau,v,ex,ev,er,primary,reference,rel_diff,passed\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.tau, r.v, r.exps[0], r.exps[1], r.exps[2], r.primary, r.reference, r.rel_diff, r.passed
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentProbeRow {
    pub exps: [u8; 3],
    pub analytic: f64,
    pub sample: f64,
    pub std_err: f64,
    /// `(sample - analytic) / std_err`.
    pub z: f64,
    pub passed: bool,
}

/// Discounted moments of the first date seen from the initial state against
/// sample averages over the simulated paths; passes within 3 standard errors.
pub fn moment_probe(model: &ModelSpec, paths: &PathGrid, order: usize) -> Result<Vec<MomentProbeRow>> {
    let set = MonomialSet::new(model.family.n_dims(), order.min(model.family.degree_cap()));
    let vars = model.family.state_vars();
    let tau = paths.dates()[1];
    let mut rows = Vec::new();
    for e in set.exponents() {
        let mut exps = [0u8; 3];
        for (d, sv) in vars.iter().enumerate() {
            exps[sv.slot()] = e[d];
        }
        let s0 = model.initial_state();
        let req = MomentRequest { exps, tau, state: s0 };
        let backend = if model.family == ModelFamily::Heston && req.degree() <= 2 {
            MomentBackend::ClosedForm
        } else {
            MomentBackend::PowerSeries
        };
        let analytic = discounted_moment(model, &req, backend)?;
        let sm = paths.sample_moment(1, exps, true)?;
        let z = if sm.std_err > 0.0 { (sm.mean - analytic) / sm.std_err } else { 0.0 };
        let close = (sm.mean - analytic).abs() <= 1e-12 * analytic.abs().max(1.0);
        rows.push(MomentProbeRow { exps, analytic, sample: sm.mean, std_err: sm.std_err, z, passed: z.abs() <= 3.0 || close });
    }
    Ok(rows)
}

pub fn probe_rows_csv(rows: &[MomentProbeRow]) -> String {
    let mut s = String::from("ex,ev,er,analytic,sample,std_err,z,passed\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.exps[0], r.exps[1], r.exps[2], r.analytic, r.sample, r.std_err, r.z, r.passed
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_field_is_named() {
        let e = RunConfig::from_toml("preset = \"TestA\"\npathz = 10\n").unwrap_err().to_string();
        assert!(e.contains("pathz"), "{e}");
        let cfg = RunConfig::from_toml("preset = \"TestA\"\n[model]\nkapa = 1.0\n").unwrap();
        let e = cfg.resolve().unwrap_err().to_string();
        assert!(e.contains("kapa") && e.contains("[model]"), "{e}");
        let e = RunConfig::from_toml("[grid]\nstepz = 3\n").unwrap_err().to_string();
        assert!(e.contains("stepz"), "{e}");
    }

    #[test]
    fn preset_overrides() {
        let cfg = RunConfig::from_toml(
            "preset = \"TestA\"\nseeds = [1, 2]\n[contract]\nkind = \"european\"\nstrike = 90.0\n[grid]\nsteps = 4\n",
        )
        .unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.contract.kind, ContractKind::European);
        assert!(r.contract.exercise_dates.is_empty());
        assert_eq!(r.contract.strike, 90.0);
        assert_eq!(r.grid.n_steps(), 4);
        assert_eq!(r.model.kappa, 1.15);
        assert_eq!(r.path_paths, 200_000);
        assert_eq!(r.sgbm.bundling, BundleMethod::Bifurcation { levels: 3 });

        let bermudan = RunConfig::from_toml("preset = \"TestA\"\n[grid]\nsteps = 5\n").unwrap().resolve().unwrap();
        assert_eq!(bermudan.contract.exercise_dates, bermudan.grid.dates[1..].to_vec());

        let bad = RunConfig::from_toml("preset = \"TestA\"\nseeds = []\n").unwrap();
        assert!(bad.resolve().is_err());
        let bad = RunConfig::from_toml("preset = \"TestA\"\nsplits = [4, 4]\n").unwrap();
        assert!(bad.resolve().is_err());
        let eq = RunConfig::from_toml("preset = \"TestA\"\nbundling = \"equal-number\"\nsplits = [4, 4]\n").unwrap();
        assert_eq!(eq.resolve().unwrap().sgbm.bundling, BundleMethod::EqualNumber { splits: vec![4, 4] });
    }

    #[test]
    fn inline_model_without_preset() {
        let text = r#"
            [model]
            family = "bs"
            s0 = 100.0
            r0 = 0.03
            sigma = 0.2
            [contract]
            kind = "european"
            option = "call"
            strike = 100.0
            [grid]
            maturity = 1.0
            steps = 2
            dt = 0.5
        "#;
        let r = RunConfig::from_toml(text).unwrap().resolve().unwrap();
        assert_eq!(r.contract.maturity, 1.0);
        assert_eq!(r.name, "run");
        let e = RunConfig::from_toml("[contract]\nkind = \"european\"\n").unwrap().resolve().unwrap_err().to_string();
        assert!(e.contains("[model]"), "{e}");
    }

    #[test]
    fn stats() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s, Stat { mean: 2.0, std: 1.0 });
        assert_eq!(Stat::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn backend_table_heston() {
        let (model, _, grid) = preset("TestA").unwrap();
        let rows = moment_backend_table(&model, &grid, 2).unwrap();
        assert_eq!(rows.len(), 100 * 6);
        assert!(rows.iter().all(|r| r.passed), "{:?}", rows.iter().find(|r| !r.passed));
    }
}
