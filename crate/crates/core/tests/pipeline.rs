//! End-to-end checks of the public pipeline at small path counts.

use proptest::prelude::*;

use sgbm::bundling::BundleMethod;
use sgbm::engine::{backward_sweep, path_estimator, pfe, sim_options, SgbmConfig};
use sgbm::model::{preset, ContractKind, ModelFamily, TimeGrid};
use sgbm::paths::{simulate, simulate_with};
use sgbm::report::{relative_l2, Estimator, Profile};
use sgbm::risk::mc_european_oracle;
use sgbm::runner::{path_seed, run, RunConfig};

fn bifurcation(j: usize, n_dims: usize) -> SgbmConfig {
    SgbmConfig::new(2, BundleMethod::bifurcation_for(j, n_dims).unwrap())
}

#[test]
fn bshw_european_matches_plain_monte_carlo() {
    let (mut model, mut contract, _) = preset("TestB_rho02_T5").unwrap();
    model.family = ModelFamily::Bshw;
    model.sigma = 0.2;
    model.eta = 0.01;
    contract.kind = ContractKind::European;
    contract.maturity = 2.0;
    contract.exercise_dates.clear();
    let grid = TimeGrid::uniform(2.0, 4, 0.05).unwrap();
    let paths = simulate(&model, &grid, 20_000, 11).unwrap();
    let sweep = backward_sweep(&model, &contract, &grid, &paths, &bifurcation(16, 2)).unwrap();
    let mc = mc_european_oracle(&model, &contract, &grid, 20_000, 11).unwrap();
    assert!((sweep.report.v0 - mc.price).abs() <= 3.0 * mc.std_err, "{} vs {:?}", sweep.report.v0, mc);
    // a European is never exercised early, so exposure is the discounted value
    let ee = &sweep.report.profile.ee;
    assert!((ee[0] - sweep.report.v0).abs() < 1e-12);
    assert_eq!(*ee.last().unwrap(), 0.0);
}

#[test]
fn bermudan_estimators_bracket_and_beat_european() {
    let (model, contract, grid) = preset("TestA").unwrap();
    let c = bifurcation(16, 2);
    let paths = simulate_with(&model, &grid, 20_000, 3, sim_options(&contract)).unwrap();
    let sweep = backward_sweep(&model, &contract, &grid, &paths, &c).unwrap();
    let path = path_estimator(&model, &contract, &grid, &sweep.pass1, &c, 40_000, path_seed(3)).unwrap();
    let direct = &sweep.report;
    let se = direct.v0_std_err.hypot(path.v0_std_err);
    assert!(path.v0 <= direct.v0 + 3.0 * se, "path {} direct {}", path.v0, direct.v0);
    assert!((path.v0 - 5.48).abs() < 0.1 && (direct.v0 - 5.48).abs() < 0.1);

    let mut european = contract.clone();
    european.kind = ContractKind::European;
    european.exercise_dates.clear();
    let eu = backward_sweep(&model, &european, &grid, &paths, &c).unwrap().report;
    assert!(eu.v0 < direct.v0);
    // early exercise removes exposure: EE decays faster than for the European
    let m = grid.n_steps() / 2;
    assert!(direct.profile.ee[m] < eu.profile.ee[m]);
    assert!(direct.cva > 0.0 && direct.cva < eu.cva);
}

#[test]
fn runner_writes_readable_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let text = "preset = \"TestA\"\npaths = 4000\nbundles = 4\nseeds = [5]\n";
    let mut cfg = RunConfig::from_toml(text).unwrap();
    cfg.output_dir = dir.path().to_path_buf();
    let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(again, cfg);

    let summary = run(&cfg.resolve().unwrap()).unwrap();
    assert!(summary.passed());
    let direct = summary.aggregate(Estimator::Direct).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("seed-5").join("direct.csv")).unwrap();
    let profile = Profile::read_csv(csv.as_bytes()).unwrap();
    assert_eq!(profile.len(), 11);
    assert_eq!(profile.ee[0], direct.v0.mean);
    assert!(profile.delta.is_some() && profile.gamma.is_some());
    assert!(dir.path().join("summary.toml").exists());
}

proptest! {
    #[test]
    fn pfe_is_a_monotone_sample_quantile(
        xs in prop::collection::vec(-1e6f64..1e6, 1..200),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let q_lo = pfe(&xs, lo);
        let q_hi = pfe(&xs, hi);
        prop_assert!(q_lo <= q_hi);
        prop_assert!(xs.contains(&q_hi));
        let max = xs.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(pfe(&xs, 1.0), max);
    }

    #[test]
    fn csv_round_trips_exactly(rows in prop::collection::vec(prop::array::uniform5(-1e9f64..1e9), 1..20)) {
        let p = Profile {
            t: rows.iter().map(|r| r[0].abs()).collect(),
            ee: rows.iter().map(|r| r[1]).collect(),
            ee_star: rows.iter().map(|r| r[2]).collect(),
            pfe: rows.iter().map(|r| r[3]).collect(),
            delta: Some(rows.iter().map(|r| r[4]).collect()),
            gamma: None,
        };
        let back = Profile::read_csv(p.to_csv_string().as_bytes()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn relative_l2_scales(a in prop::collection::vec(0.1f64..10.0, 1..50), k in 0.5f64..2.0) {
        let b: Vec<f64> = a.iter().map(|x| x * k).collect();
        let d = relative_l2(&a, &b).unwrap();
        prop_assert!((d - (k - 1.0).abs()).abs() < 1e-12);
        prop_assert_eq!(relative_l2(&a, &a).unwrap(), 0.0);
    }
}
