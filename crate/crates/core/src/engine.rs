//! Backward SGBM sweep, exposure statistics, and the out-of-sample path
//! estimator.
//!
//! Several contracts on the same paths can be valued in one sweep: bundles,
//! regression designs and discounted moments are shared, only the
//! coefficient solves and contract rules differ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundling::{self, BundleAssignment, BundleMethod, BundleRule};
use crate::chf::LogMgf;
use crate::error::{Error, Result};
use crate::model::{BarrierMonitoring, ContractKind, ContractSpec, ModelSpec, StateVar, TimeGrid};
use crate::paths::{simulate_with, PathGrid, SimOptions};
use crate::regression::{enumerate_basis, fit_date_multi, BasisSpec, BundleFit, CoefficientTable};
use crate::report::{Estimator, ExposureReport, Profile};
use crate::risk::{cva, CreditSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgbmConfig {
    /// Polynomial order `p` of the regression basis.
    pub order: usize,
    pub bundling: BundleMethod,
    #[serde(default)]
    pub credit: CreditSpec,
    /// Quadrature intervals for the hybrid volatility integrals.
    #[serde(default = "default_intervals")]
    pub intervals: usize,
    /// Keep per-path values, exposures and derivatives.
    #[serde(default)]
    pub keep_matrix: bool,
}

fn default_intervals() -> usize {
    crate::chf::sqrtvar::DEFAULT_INTERVALS
}

impl SgbmConfig {
    pub fn new(order: usize, bundling: BundleMethod) -> Self {
        SgbmConfig { order, bundling, credit: CreditSpec::default(), intervals: default_intervals(), keep_matrix: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathStatus {
    Alive,
    Exercised,
    KnockedOut,
    Expired,
}

/// Per-path, per-date values, stored date-major like [`PathGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureMatrix {
    pub n_paths: usize,
    pub value: Vec<f64>,
    pub exposure: Vec<f64>,
    pub d_exposure: Vec<f64>,
    pub d2_exposure: Vec<f64>,
    pub status: Vec<PathStatus>,
}

impl ExposureMatrix {
    fn new(n_paths: usize, n_dates: usize) -> Self {
        let k = n_paths * n_dates;
        ExposureMatrix {
            n_paths,
            value: vec![0.0; k],
            exposure: vec![0.0; k],
            d_exposure: vec![0.0; k],
            d2_exposure: vec![0.0; k],
            status: vec![PathStatus::Alive; k],
        }
    }

    pub fn at(&self, m: usize, i: usize) -> (f64, f64, f64, f64, PathStatus) {
        let k = m * self.n_paths + i;
        (self.value[k], self.exposure[k], self.d_exposure[k], self.d2_exposure[k], self.status[k])
    }
}

/// What the path estimator reuses from the first pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pass1 {
    /// Bundle rule at each date `m = 0..M-1`; `None` where all paths form
    /// one bundle.
    pub rules: Vec<Option<BundleRule>>,
    pub coeffs: CoefficientTable,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub report: ExposureReport,
    pub pass1: Pass1,
    pub matrix: Option<ExposureMatrix>,
}

/// Nearest-rank empirical quantile: element `ceil(alpha n)` (1-based) of the
/// sorted sample, 0 for an empty sample.
pub fn pfe(exposures: &[f64], alpha: f64) -> f64 {
    if exposures.is_empty() {
        return 0.0;
    }
    let n = exposures.len();
    let rank = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    let mut v = exposures.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(rank - 1, f64::total_cmp);
    *kth
}

/// Discounted moment generators per distinct interval length.
struct Moments {
    keys: Vec<u64>,
    mgfs: Vec<LogMgf>,
}

impl Moments {
    fn new(model: &ModelSpec, grid: &TimeGrid, degree: usize, intervals: usize) -> Result<Self> {
        let mut keys: Vec<u64> = Vec::new();
        let mut mgfs = Vec::new();
        for w in grid.dates.windows(2) {
            let tau = w[1] - w[0];
            let key = tau.to_bits();
            if !keys.contains(&key) {
                keys.push(key);
                mgfs.push(LogMgf::with_intervals(model, tau, degree, intervals)?);
            }
        }
        Ok(Moments { keys, mgfs })
    }

    fn get(&self, tau: f64) -> &LogMgf {
        let k = self.keys.iter().position(|&k| k == tau.to_bits()).expect("interval tabulated");
        &self.mgfs[k]
    }
}

/// Basis bookkeeping for continuation values and their x-derivatives.
struct Combiner {
    h: usize,
    /// `(index of x-lowered monomial, x exponent)`.
    d1: Vec<Option<(usize, f64)>>,
    /// `(index of twice x-lowered monomial, a (a - 1))`.
    d2: Vec<Option<(usize, f64)>>,
}

impl Combiner {
    fn new(basis: &BasisSpec) -> Self {
        let set = basis.set();
        let h = basis.len();
        let d1 = (0..h).map(|k| set.lowered(k, 0).map(|j| (j, set.exponents()[k][0] as f64))).collect();
        let d2 = (0..h)
            .map(|k| {
                let a = set.exponents()[k][0] as f64;
                set.lowered(k, 0).and_then(|j| set.lowered(j, 0)).map(|j| (j, a * (a - 1.0)))
            })
            .collect();
        Combiner { h, d1, d2 }
    }

    /// `(c, dc/dx, d2c/dx2)` from the discounted standardized moments `phi`.
    fn eval(&self, beta: &[f64], phi: &[f64], sx: f64) -> [f64; 3] {
        let mut c = 0.0;
        let mut cx = 0.0;
        let mut cxx = 0.0;
        for k in 0..self.h {
            c += beta[k] * phi[k];
            if let Some((j, a)) = self.d1[k] {
                cx += beta[k] * a * phi[j];
            }
            if let Some((j, a)) = self.d2[k] {
                cxx += beta[k] * a * phi[j];
            }
        }
        [c, cx / sx, cxx / (sx * sx)]
    }
}

/// Standardized discounted moments of the next state seen from `state`.
fn moments_at(mgf: &LogMgf, vars: &[StateVar], fit: &BundleFit, state: [f64; 3], out: &mut [f64]) {
    let mut center = [0.0; 3];
    for (d, v) in vars.iter().enumerate() {
        center[d] = match v {
            StateVar::LogSpot => fit.center[d] - state[0],
            _ => fit.center[d],
        };
    }
    mgf.standardized_moments(state[1], state[2], &center, &fit.scale, out);
}

fn state_columns<'a>(paths: &'a PathGrid, vars: &[StateVar], m: usize) -> Vec<&'a [f64]> {
    vars.iter().map(|&v| paths.column(v, m)).collect()
}

fn bundle_columns<'a>(paths: &'a PathGrid, method: &BundleMethod, m: usize) -> Vec<&'a [f64]> {
    let vars = match method {
        BundleMethod::Bifurcation { .. } => paths.family().state_vars().to_vec(),
        BundleMethod::EqualNumber { .. } => bundling::priority_order(paths.family()),
    };
    state_columns(paths, &vars, m)
}

/// Per-date statistics of one exposure cross-section.
struct DateStats {
    ee: f64,
    ee_star: f64,
    pfe: f64,
    delta: f64,
    gamma: f64,
}

fn date_stats(e: &[f64], ex: &[f64], exx: &[f64], disc: &[f64], s0: f64, alpha: f64) -> DateStats {
    let n = e.len() as f64;
    let (mut s, mut sd, mut d1, mut d2) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..e.len() {
        s += e[i];
        sd += disc[i] * e[i];
        d1 += ex[i];
        d2 += exx[i] - ex[i];
    }
    DateStats { ee: s / n, ee_star: sd / n, pfe: pfe(e, alpha), delta: d1 / n / s0, gamma: d2 / n / (s0 * s0) }
}

struct ProfileBuilder {
    p: Profile,
}

impl ProfileBuilder {
    fn new(dates: &[f64], order: usize) -> Self {
        let k = dates.len();
        ProfileBuilder {
            p: Profile {
                t: dates.to_vec(),
                ee: vec![0.0; k],
                ee_star: vec![0.0; k],
                pfe: vec![0.0; k],
                delta: (order >= 1).then(|| vec![0.0; k]),
                gamma: (order >= 2).then(|| vec![0.0; k]),
            },
        }
    }

    fn set(&mut self, m: usize, s: &DateStats) {
        self.p.ee[m] = s.ee;
        self.p.ee_star[m] = s.ee_star;
        self.p.pfe[m] = s.pfe;
        if let Some(d) = self.p.delta.as_mut() {
            d[m] = s.delta;
        }
        if let Some(g) = self.p.gamma.as_mut() {
            g[m] = s.gamma;
        }
    }
}

/// Exposure and its derivatives from a value and its derivatives.
fn positive_part(v: [f64; 3]) -> [f64; 3] {
    if v[0] > 0.0 {
        v
    } else {
        [0.0; 3]
    }
}

struct Setup {
    basis: BasisSpec,
    moments: Moments,
    combiner: Combiner,
    kind: ContractKind,
    exercise: Vec<Vec<bool>>,
}

fn setup(model: &ModelSpec, contracts: &[ContractSpec], grid: &TimeGrid, cfg: &SgbmConfig) -> Result<Setup> {
    model.validate()?;
    grid.validate()?;
    cfg.credit.validate()?;
    let first = contracts.first().ok_or_else(|| crate::error::invalid("contracts", "empty batch"))?;
    for c in contracts {
        c.validate(model.s0)?;
        if c.kind != first.kind || c.barrier != first.barrier || c.monitoring != first.monitoring {
            return Err(crate::error::invalid("contracts", "a batch must share kind and barrier"));
        }
        if (c.maturity - grid.maturity()).abs() > 1e-9 * c.maturity {
            return Err(Error::InvalidGrid(format!("last date {} differs from maturity {}", grid.maturity(), c.maturity)));
        }
    }
    let n = model.family.n_dims();
    cfg.bundling.validate(n)?;
    if cfg.order > model.family.degree_cap() {
        return Err(Error::DegreeTooHigh { degree: cfg.order, cap: model.family.degree_cap() });
    }
    let basis = enumerate_basis(n, cfg.order)?;
    let moments = Moments::new(model, grid, cfg.order, cfg.intervals)?;
    let combiner = Combiner::new(&basis);
    let exercise = contracts
        .iter()
        .map(|c| match c.kind {
            ContractKind::Bermudan => c.exercise_flags(grid),
            _ => Ok(vec![false; grid.dates.len()]),
        })
        .collect::<Result<_>>()?;
    Ok(Setup { basis, moments, combiner, kind: first.kind, exercise })
}

/// Simulation options a contract needs.
pub fn sim_options(contract: &ContractSpec) -> SimOptions {
    SimOptions {
        track_minimum: contract.kind == ContractKind::DownAndOutBarrier
            && contract.monitoring == BarrierMonitoring::Substeps,
    }
}

fn knockouts(paths: &PathGrid, contract: &ContractSpec) -> Result<Option<Vec<usize>>> {
    match contract.kind {
        ContractKind::DownAndOutBarrier => {
            paths.knockout_dates(contract.barrier.expect("validated"), contract.monitoring).map(Some)
        }
        _ => Ok(None),
    }
}

/// Continuation values `[c, c_x, c_xx]` for every contract and path at date
/// `m`, flattened `[(i * n_contracts + c) * 3 + k]`; inactive paths get 0.
#[allow(clippy::too_many_arguments)]
fn continuation(
    st: &Setup,
    paths: &PathGrid,
    m: usize,
    tau: f64,
    assign: &BundleAssignment,
    fits: &[Vec<BundleFit>],
) -> Vec<f64> {
    let n = paths.n_paths();
    let nc = fits.len();
    let vars = paths.family().state_vars();
    let mgf = st.moments.get(tau);
    let h = st.basis.len();
    let mut out = vec![0.0; n * nc * 3];
    out.par_chunks_mut(nc * 3).with_min_len(256).enumerate().for_each(|(i, slot)| {
        let Some(b) = assign.bundle_of(i) else { return };
        let mut phi = [0.0; crate::monomial::MAX_TERMS];
        let fit0 = &fits[0][b];
        moments_at(mgf, vars, fit0, paths.state(m, i), &mut phi[..h]);
        for (c, f) in fits.iter().enumerate() {
            let r = st.combiner.eval(&f[b].coeffs, &phi[..h], fit0.scale[0]);
            slot[c * 3..c * 3 + 3].copy_from_slice(&r);
        }
    });
    out
}

/// SGBM backward iteration for one contract; see [`backward_sweep_batch`].
pub fn backward_sweep(
    model: &ModelSpec,
    contract: &ContractSpec,
    grid: &TimeGrid,
    paths: &PathGrid,
    cfg: &SgbmConfig,
) -> Result<SweepOutput> {
    Ok(backward_sweep_batch(model, std::slice::from_ref(contract), grid, paths, cfg)?.pop().unwrap())
}

/// SGBM backward iteration over `paths` for contracts sharing kind and
/// barrier, returning the direct-estimator report, the pass-1 artifacts and
/// optionally the per-path matrix for each contract.
pub fn backward_sweep_batch(
    model: &ModelSpec,
    contracts: &[ContractSpec],
    grid: &TimeGrid,
    paths: &PathGrid,
    cfg: &SgbmConfig,
) -> Result<Vec<SweepOutput>> {
    let st = setup(model, contracts, grid, cfg)?;
    if paths.dates() != grid.dates.as_slice() || paths.family() != model.family {
        return Err(Error::InvalidGrid("paths were simulated on another grid or model".into()));
    }
    let n = paths.n_paths();
    let nc = contracts.len();
    let big_m = grid.n_steps();
    let vars = model.family.state_vars();
    let knock = knockouts(paths, &contracts[0])?;
    let alive = |i: usize, m: usize| knock.as_ref().is_none_or(|k| k[i] > m);
    let bermudan = st.kind == ContractKind::Bermudan;
    let alpha = cfg.credit.alpha;
    let s0 = model.s0;

    let mut profiles: Vec<ProfileBuilder> = (0..nc).map(|_| ProfileBuilder::new(&grid.dates, cfg.order)).collect();
    let mut tables: Vec<CoefficientTable> = (0..nc).map(|_| CoefficientTable::new(big_m)).collect();
    let mut rules: Vec<Option<BundleRule>> = vec![None; big_m];
    let mut matrices: Vec<Option<ExposureMatrix>> =
        (0..nc).map(|_| cfg.keep_matrix.then(|| ExposureMatrix::new(n, big_m + 1))).collect();

    // terminal values
    let x_t = paths.x(big_m);
    let mut v_next: Vec<Vec<f64>> = contracts
        .iter()
        .map(|c| (0..n).map(|i| if alive(i, big_m) { c.payoff(x_t[i].exp()) } else { 0.0 }).collect())
        .collect();
    for (c, mat) in matrices.iter_mut().enumerate() {
        if let Some(mat) = mat {
            let base = big_m * n;
            for i in 0..n {
                mat.value[base + i] = v_next[c][i];
                mat.status[base + i] = if alive(i, big_m) { PathStatus::Expired } else { PathStatus::KnockedOut };
            }
        }
    }

    // Bermudan continuation per contract and date, resolved forwards at the end
    let mut stored: Vec<Vec<Vec<[f64; 3]>>> = vec![vec![Vec::new(); big_m]; if bermudan { nc } else { 0 }];
    let mut exercised: Vec<Vec<Vec<bool>>> = vec![vec![Vec::new(); big_m]; if bermudan { nc } else { 0 }];

    for m in (1..big_m).rev() {
        let active: Vec<bool> = (0..n).map(|i| alive(i, m)).collect();
        let cols = bundle_columns(paths, &cfg.bundling, m);
        let (assign, rule) = bundling::build(&cfg.bundling, &cols, Some(&active))?;
        let next_states = state_columns(paths, vars, m + 1);
        let targets: Vec<&[f64]> = v_next.iter().map(Vec::as_slice).collect();
        let fits = fit_date_multi(&st.basis, &assign, &next_states, &targets)?;
        let tau = grid.dates[m + 1] - grid.dates[m];
        let cont = continuation(&st, paths, m, tau, &assign, &fits);
        let x_m = paths.x(m);
        let disc = paths.disc(m);

        for c in 0..nc {
            let val = |i: usize| -> [f64; 3] {
                let k = (i * nc + c) * 3;
                [cont[k], cont[k + 1], cont[k + 2]]
            };
            if bermudan {
                let ex_date = st.exercise[c][m];
                let mut flags = vec![false; n];
                let mut vals = Vec::with_capacity(n);
                for i in 0..n {
                    let v = val(i);
                    let g = contracts[c].payoff(x_m[i].exp());
                    if ex_date && g > v[0] {
                        flags[i] = true;
                        v_next[c][i] = g;
                    } else {
                        v_next[c][i] = v[0];
                    }
                    vals.push(v);
                }
                stored[c][m] = vals;
                exercised[c][m] = flags;
            } else {
                let mut e = vec![0.0; n];
                let mut ex = vec![0.0; n];
                let mut exx = vec![0.0; n];
                for i in 0..n {
                    if active[i] {
                        let v = val(i);
                        v_next[c][i] = v[0];
                        let p = positive_part(v);
                        e[i] = p[0];
                        ex[i] = p[1];
                        exx[i] = p[2];
                    } else {
                        v_next[c][i] = 0.0;
                    }
                }
                profiles[c].set(m, &date_stats(&e, &ex, &exx, disc, s0, alpha));
                if let Some(mat) = matrices[c].as_mut() {
                    let base = m * n;
                    for i in 0..n {
                        mat.value[base + i] = v_next[c][i];
                        mat.exposure[base + i] = e[i];
                        mat.d_exposure[base + i] = ex[i];
                        mat.d2_exposure[base + i] = exx[i];
                        mat.status[base + i] = if active[i] { PathStatus::Alive } else { PathStatus::KnockedOut };
                    }
                }
            }
            tables[c].dates[m] = fits[c].clone();
        }
        rules[m] = Some(rule);
    }

    // t_0: one bundle holding every path
    let all = vec![true; n];
    let assign0 = BundleAssignment::single(&all);
    let next_states = state_columns(paths, vars, 1.min(big_m));
    let targets: Vec<&[f64]> = v_next.iter().map(Vec::as_slice).collect();
    let fits0 = fit_date_multi(&st.basis, &assign0, &next_states, &targets)?;
    let mgf0 = st.moments.get(grid.dates[1] - grid.dates[0]);
    let h = st.basis.len();
    let mut phi0 = vec![0.0; h];
    moments_at(mgf0, vars, &fits0[0][0], model.initial_state(), &mut phi0);
    let disc1 = paths.disc(1);

    let mut outputs = Vec::with_capacity(nc);
    for c in 0..nc {
        let v0 = st.combiner.eval(&fits0[c][0].coeffs, &phi0, fits0[0][0].scale[0]);
        let e0 = positive_part(v0);
        tables[c].dates[0] = fits0[c].clone();

        if bermudan {
            // forward resolution of the exercise policy
            let mut tau = vec![big_m; n];
            for (m, flags) in exercised[c].iter().enumerate().skip(1) {
                for i in 0..n {
                    if tau[i] == big_m && flags[i] {
                        tau[i] = m;
                    }
                }
            }
            for m in 1..big_m {
                let mut e = vec![0.0; n];
                let mut ex = vec![0.0; n];
                let mut exx = vec![0.0; n];
                for i in 0..n {
                    if tau[i] > m {
                        let p = positive_part(stored[c][m][i]);
                        e[i] = p[0];
                        ex[i] = p[1];
                        exx[i] = p[2];
                    }
                }
                profiles[c].set(m, &date_stats(&e, &ex, &exx, paths.disc(m), s0, alpha));
                if let Some(mat) = matrices[c].as_mut() {
                    let base = m * n;
                    for i in 0..n {
                        let v = stored[c][m][i];
                        let exercised_now = exercised[c][m][i];
                        mat.value[base + i] =
                            if exercised_now { contracts[c].payoff(paths.x(m)[i].exp()) } else { v[0] };
                        mat.exposure[base + i] = e[i];
                        mat.d_exposure[base + i] = ex[i];
                        mat.d2_exposure[base + i] = exx[i];
                        mat.status[base + i] = if tau[i] > m { PathStatus::Alive } else { PathStatus::Exercised };
                    }
                }
            }
            if let Some(mat) = matrices[c].as_mut() {
                for i in 0..n {
                    if tau[i] < big_m {
                        mat.status[big_m * n + i] = PathStatus::Exercised;
                    }
                }
            }
        }

        profiles[c].set(
            0,
            &DateStats {
                ee: e0[0],
                ee_star: e0[0],
                pfe: e0[0],
                delta: e0[1] / s0,
                gamma: (e0[2] - e0[1]) / (s0 * s0),
            },
        );
        if let Some(mat) = matrices[c].as_mut() {
            for i in 0..n {
                mat.value[i] = v0[0];
                mat.exposure[i] = e0[0];
                mat.d_exposure[i] = e0[1];
                mat.d2_exposure[i] = e0[2];
            }
        }

        // sampling error proxy: spread of the discounted next-date values
        let vals: Vec<f64> = (0..n).map(|i| disc1[i] * targets[c][i]).collect();
        let v0_std_err = std_err(&vals);

        let profile = std::mem::take(&mut profiles[c].p);
        let cva_value = cva(&profile.ee_star, &cfg.credit, &grid.dates)?;
        outputs.push(SweepOutput {
            report: ExposureReport {
                estimator: Estimator::Direct,
                seed: paths.seed(),
                n_paths: n,
                profile,
                v0: v0[0],
                v0_std_err,
                cva: cva_value,
            },
            pass1: Pass1 { rules: rules.clone(), coeffs: std::mem::take(&mut tables[c]) },
            matrix: matrices[c].take(),
        });
    }
    Ok(outputs)
}

fn std_err(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Out-of-sample estimator for one contract; see [`path_estimator_batch`].
pub fn path_estimator(
    model: &ModelSpec,
    contract: &ContractSpec,
    grid: &TimeGrid,
    pass1: &Pass1,
    cfg: &SgbmConfig,
    n_paths: usize,
    seed: u64,
) -> Result<ExposureReport> {
    Ok(path_estimator_batch(model, std::slice::from_ref(contract), grid, &[pass1], cfg, n_paths, seed)?.pop().unwrap())
}

/// Second pass on `n_paths` fresh paths: bundles are classified with the
/// pass-1 rules and continuation values use the pass-1 coefficients. EE and
/// V(0) come from pathwise-discounted cash flows under the frozen exercise
/// policy; PFE and the Greeks from the out-of-sample continuation values.
pub fn path_estimator_batch(
    model: &ModelSpec,
    contracts: &[ContractSpec],
    grid: &TimeGrid,
    pass1: &[&Pass1],
    cfg: &SgbmConfig,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ExposureReport>> {
    let st = setup(model, contracts, grid, cfg)?;
    let big_m = grid.n_steps();
    if pass1.len() != contracts.len() {
        return Err(Error::LengthMismatch { expected: contracts.len(), got: pass1.len() });
    }
    for p in pass1 {
        if p.rules.len() != big_m || p.coeffs.dates.len() != big_m {
            return Err(Error::MissingArtifacts(p.rules.len().min(p.coeffs.dates.len())));
        }
        if let Some(m) = (0..big_m).find(|&m| p.coeffs.dates[m].is_empty() || (m > 0 && p.rules[m].is_none())) {
            return Err(Error::MissingArtifacts(m));
        }
    }
    let paths = simulate_with(model, grid, n_paths, seed, sim_options(&contracts[0]))?;
    let n = n_paths;
    let nc = contracts.len();
    let knock = knockouts(&paths, &contracts[0])?;
    let alive = |i: usize, m: usize| knock.as_ref().is_none_or(|k| k[i] > m);
    let bermudan = st.kind == ContractKind::Bermudan;
    let alpha = cfg.credit.alpha;
    let s0 = model.s0;

    let mut profiles: Vec<ProfileBuilder> = (0..nc).map(|_| ProfileBuilder::new(&grid.dates, cfg.order)).collect();
    let mut stored: Vec<Vec<Vec<[f64; 3]>>> = vec![vec![Vec::new(); big_m]; nc];
    let mut tau: Vec<Vec<usize>> = vec![vec![big_m; n]; nc];

    for m in (1..big_m).rev() {
        let active: Vec<bool> = (0..n).map(|i| alive(i, m)).collect();
        let cols = bundle_columns(&paths, &cfg.bundling, m);
        let rule = pass1[0].rules[m].as_ref().expect("checked");
        let assign = rule.classify(&cols, Some(&active))?;
        let fits: Vec<Vec<BundleFit>> = pass1.iter().map(|p| p.coeffs.dates[m].clone()).collect();
        if fits.iter().any(|f| f.len() != assign.n_bundles()) {
            return Err(Error::MissingArtifacts(m));
        }
        let cont = continuation(&st, &paths, m, grid.dates[m + 1] - grid.dates[m], &assign, &fits);
        let x_m = paths.x(m);
        for c in 0..nc {
            let vals: Vec<[f64; 3]> = (0..n)
                .map(|i| {
                    let k = (i * nc + c) * 3;
                    [cont[k], cont[k + 1], cont[k + 2]]
                })
                .collect();
            if bermudan && st.exercise[c][m] {
                // backwards over dates, so the last hit is the first exercise
                for i in 0..n {
                    if contracts[c].payoff(x_m[i].exp()) > vals[i][0] {
                        tau[c][i] = m;
                    }
                }
            }
            stored[c][m] = vals;
        }
    }

    let x_t = paths.x(big_m);
    let mut outputs = Vec::with_capacity(nc);
    for c in 0..nc {
        // cash flows at the stopping dates
        let cash: Vec<f64> = (0..n)
            .map(|i| {
                let t = tau[c][i];
                if t == big_m {
                    if alive(i, big_m) {
                        contracts[c].payoff(x_t[i].exp())
                    } else {
                        0.0
                    }
                } else {
                    contracts[c].payoff(paths.x(t)[i].exp())
                }
            })
            .collect();
        let disc_tau: Vec<f64> = (0..n).map(|i| paths.disc(tau[c][i])[i]).collect();
        let pv: Vec<f64> = (0..n).map(|i| disc_tau[i] * cash[i]).collect();
        let v0 = pv.iter().sum::<f64>() / n as f64;

        for m in 1..big_m {
            let disc = paths.disc(m);
            let (mut ee, mut ee_star) = (0.0, 0.0);
            let mut e = vec![0.0; n];
            let mut ex = vec![0.0; n];
            let mut exx = vec![0.0; n];
            for i in 0..n {
                if tau[c][i] > m && alive(i, m) {
                    ee += pv[i] / disc[i];
                    ee_star += pv[i];
                    let p = positive_part(stored[c][m][i]);
                    e[i] = p[0];
                    ex[i] = p[1];
                    exx[i] = p[2];
                }
            }
            let mut s = date_stats(&e, &ex, &exx, disc, s0, alpha);
            s.ee = ee / n as f64;
            s.ee_star = ee_star / n as f64;
            profiles[c].set(m, &s);
        }

        // Greeks at t_0 from the pass-1 fit at the initial state
        let fit0 = &pass1[c].coeffs.dates[0][0];
        let mut phi0 = vec![0.0; st.basis.len()];
        moments_at(
            st.moments.get(grid.dates[1] - grid.dates[0]),
            model.family.state_vars(),
            fit0,
            model.initial_state(),
            &mut phi0,
        );
        let g0 = positive_part(st.combiner.eval(&fit0.coeffs, &phi0, fit0.scale[0]));
        let e0 = v0.max(0.0);
        profiles[c].set(
            0,
            &DateStats { ee: e0, ee_star: e0, pfe: e0, delta: g0[1] / s0, gamma: (g0[2] - g0[1]) / (s0 * s0) },
        );

        let profile = std::mem::take(&mut profiles[c].p);
        let cva_value = cva(&profile.ee_star, &cfg.credit, &grid.dates)?;
        outputs.push(ExposureReport {
            estimator: Estimator::Path,
            seed,
            n_paths: n,
            profile,
            v0,
            v0_std_err: std_err(&pv),
            cva: cva_value,
        });
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{preset, ModelFamily, OptionType};
    use crate::paths::simulate;

    #[test]
    fn nearest_rank_quantile() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(pfe(&v, 0.975), 97.0);
        assert_eq!(pfe(&[0.0; 10], 0.975), 0.0);
        assert_eq!(pfe(&[], 0.5), 0.0);
        assert_eq!(pfe(&[3.0, 1.0, 2.0], 0.5), 2.0);
    }

    fn european(strike: f64, maturity: f64) -> ContractSpec {
        ContractSpec {
            kind: ContractKind::European,
            option: OptionType::Put,
            strike,
            maturity,
            barrier: None,
            monitoring: BarrierMonitoring::Substeps,
            exercise_dates: Vec::new(),
        }
    }

    #[test]
    fn one_step_constant_rate_matches_discounted_fitted_mean() {
        let (mut model, _, _) = preset("TestA").unwrap();
        model.family = ModelFamily::Heston;
        let grid = TimeGrid::uniform(1.0, 1, 0.05).unwrap();
        let contract = european(100.0, 1.0);
        let paths = simulate(&model, &grid, 4000, 11).unwrap();
        for p in 0..=3 {
            let cfg = SgbmConfig::new(p, BundleMethod::Bifurcation { levels: 2 });
            let out = backward_sweep(&model, &contract, &grid, &paths, &cfg).unwrap();
            // single bundle at t_0: the constant column preserves the sample mean
            let fit = &out.pass1.coeffs.dates[0][0];
            let basis = enumerate_basis(2, p).unwrap();
            let mut fitted = 0.0;
            let mut row = vec![0.0; basis.len()];
            for i in 0..4000 {
                let st = paths.state(1, i);
                let z = [(st[0] - fit.center[0]) / fit.scale[0], (st[1] - fit.center[1]) / fit.scale[1]];
                basis.set().eval(&z, &mut row);
                fitted += row.iter().zip(&fit.coeffs).map(|(a, b)| a * b).sum::<f64>();
            }
            fitted /= 4000.0;
            let payoff_mean = paths.x(1).iter().map(|x| contract.payoff(x.exp())).sum::<f64>() / 4000.0;
            assert!((fitted - payoff_mean).abs() < 1e-9, "p={p}");
            if p == 0 {
                // only the constant: continuation is the discounted mean payoff
                let want = (-model.r0 * 1.0f64).exp() * payoff_mean;
                assert!((out.report.v0 - want).abs() <= 1e-10, "{} {}", out.report.v0, want);
                assert!(out.report.profile.delta.is_none());
            }
        }
    }

    #[test]
    fn european_close_to_mc_and_bs_limit() {
        let (mut model, _, _) = preset("TestA").unwrap();
        model.gamma = 1e-13;
        model.v0 = model.vbar;
        let grid = TimeGrid::uniform(1.0, 4, 0.05).unwrap();
        let contract = european(100.0, 1.0);
        let paths = simulate(&model, &grid, 20_000, 5).unwrap();
        let cfg = SgbmConfig::new(2, BundleMethod::Bifurcation { levels: 2 });
        let out = backward_sweep(&model, &contract, &grid, &paths, &cfg).unwrap();
        let bs = crate::risk::bs_price(OptionType::Put, 100.0, 100.0, 1.0, model.r0, model.vbar.sqrt());
        assert!((out.report.v0 - bs).abs() < 0.05, "{} {}", out.report.v0, bs);
        let r = &out.report.profile;
        assert_eq!(r.ee[4], 0.0);
        assert!(r.ee.iter().all(|&e| e >= 0.0));
        assert!(r.ee_star.iter().zip(&r.ee).all(|(a, b)| a <= b));
        let d = r.delta.as_ref().unwrap()[0];
        assert!(d < 0.0 && d > -1.0);
    }

    #[test]
    fn barrier_above_all_paths_is_european() {
        let (model, _, _) = preset("TestA").unwrap();
        let grid = TimeGrid::uniform(1.0, 5, 0.05).unwrap();
        let e = european(100.0, 1.0);
        let mut b = e.clone();
        b.kind = ContractKind::DownAndOutBarrier;
        b.barrier = Some(1e-6);
        let paths = simulate_with(&model, &grid, 3000, 8, sim_options(&b)).unwrap();
        let cfg = SgbmConfig::new(2, BundleMethod::Bifurcation { levels: 1 });
        let a = backward_sweep(&model, &e, &grid, &paths, &cfg).unwrap();
        let c = backward_sweep(&model, &b, &grid, &paths, &cfg).unwrap();
        assert_eq!(a.report.profile, c.report.profile);
    }

    #[test]
    fn batch_equals_single() {
        let (model, contract, grid) = preset("TestA").unwrap();
        let mut other = contract.clone();
        other.strike = 110.0;
        let paths = simulate(&model, &grid, 2000, 3).unwrap();
        let cfg = SgbmConfig::new(2, BundleMethod::Bifurcation { levels: 1 });
        let batch = backward_sweep_batch(&model, &[contract.clone(), other.clone()], &grid, &paths, &cfg).unwrap();
        let one = backward_sweep(&model, &other, &grid, &paths, &cfg).unwrap();
        assert_eq!(batch[1].report, one.report);
        let p_batch =
            path_estimator_batch(&model, &[contract, other.clone()], &grid, &[&batch[0].pass1, &batch[1].pass1], &cfg, 1000, 4)
                .unwrap();
        let p_one = path_estimator(&model, &other, &grid, &one.pass1, &cfg, 1000, 4).unwrap();
        assert_eq!(p_batch[1], p_one);
    }

    #[test]
    fn bermudan_matrix_absorbs_after_exercise() {
        let (model, contract, grid) = preset("TestA").unwrap();
        let paths = simulate(&model, &grid, 3000, 2).unwrap();
        let mut cfg = SgbmConfig::new(2, BundleMethod::Bifurcation { levels: 1 });
        cfg.keep_matrix = true;
        let out = backward_sweep(&model, &contract, &grid, &paths, &cfg).unwrap();
        let mat = out.matrix.unwrap();
        let mut exercised_any = false;
        for i in 0..3000 {
            let mut gone = false;
            for m in 0..=grid.n_steps() {
                let (v, e, ex, exx, s) = mat.at(m, i);
                assert!(v.is_finite());
                if gone {
                    assert_eq!((e, ex, exx), (0.0, 0.0, 0.0));
                    assert_eq!(s, PathStatus::Exercised);
                }
                if s == PathStatus::Exercised {
                    gone = true;
                    exercised_any = true;
                    assert_eq!(e, 0.0);
                }
            }
        }
        assert!(exercised_any);
        let r = &out.report.profile;
        let ee1: f64 = (0..3000).map(|i| mat.at(1, i).1).sum::<f64>() / 3000.0;
        assert!((ee1 - r.ee[1]).abs() < 1e-12);
        assert_eq!(r.ee[grid.n_steps()], 0.0);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (model, contract, grid) = preset("TestA").unwrap();
        let paths = simulate(&model, &grid, 500, 1).unwrap();
        let cfg = SgbmConfig::new(3, BundleMethod::Bifurcation { levels: 1 });
        let mut c = contract.clone();
        c.exercise_dates.push(0.55);
        assert!(matches!(backward_sweep(&model, &c, &grid, &paths, &cfg), Err(Error::ExerciseDateMissing(_))));
        let (hhw, _, _) = preset("TestB_rho02_T5").unwrap();
        assert!(matches!(backward_sweep(&hhw, &contract, &grid, &paths, &cfg), Err(Error::DegreeTooHigh { .. })));
        let short = TimeGrid::uniform(0.5, 5, 0.05).unwrap();
        assert!(backward_sweep(&model, &contract, &short, &paths, &cfg).is_err());
        let empty = Pass1 { rules: vec![], coeffs: CoefficientTable::new(0) };
        assert!(matches!(
            path_estimator(&model, &contract, &grid, &empty, &cfg, 100, 1),
            Err(Error::MissingArtifacts(_))
        ));
    }
}
