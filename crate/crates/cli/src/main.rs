use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sgbm::model::Preset;
use sgbm::report::{compare, Profile};
use sgbm::runner::{
    dump_bundles, moment_backend_table, moment_probe, moment_rows_csv, probe_rows_csv, run, run_seed, write_atomic,
    BundlingKind, EstimatorChoice, Resolved, RunConfig,
};

#[derive(Parser)]
#[command(name = "sgbm", version, about = "Exposure profiles, exposure Greeks and CVA with SGBM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline for every seed and write profiles and summaries.
    Run(RunArgs),
    /// Relative L2 distance of profile B from reference profile A.
    Compare { a: PathBuf, b: PathBuf },
    /// Cross-check moment backends and compare with sample moments.
    ValidateMoments(RunArgs),
    /// Write bundle assignments and coefficients for the first seed.
    DumpBundles(RunArgs),
    /// List the built-in parameter sets.
    PresetList,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Direct,
    Path,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum BundlingArg {
    Bifurcation,
    EqualNumber,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Pass-1 paths.
    #[arg(short = 'n', long)]
    paths: Option<usize>,
    /// Pass-2 paths.
    #[arg(long)]
    path_paths: Option<usize>,
    /// Basis order.
    #[arg(short = 'p', long)]
    order: Option<usize>,
    #[arg(long, value_enum)]
    bundling: Option<BundlingArg>,
    /// Total bundle count J.
    #[arg(short = 'j', long)]
    bundles: Option<usize>,
    /// Equal-number splits per dimension, e.g. 8,8.
    #[arg(long, value_delimiter = ',')]
    splits: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    check_backends: bool,
    #[arg(long)]
    moment_probe: bool,
    #[arg(long)]
    dump_bundles: bool,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.preset {
            cfg.preset = Some(p.clone());
        }
        if cfg.preset.is_none() && self.config.is_none() {
            bail!("either --config or --preset is required");
        }
        if let Some(v) = self.paths {
            cfg.paths = v;
        }
        if let Some(v) = self.path_paths {
            cfg.path_paths = Some(v);
        }
        if let Some(v) = self.order {
            cfg.order = v;
        }
        if let Some(v) = self.bundling {
            cfg.bundling = match v {
                BundlingArg::Bifurcation => BundlingKind::Bifurcation,
                BundlingArg::EqualNumber => BundlingKind::EqualNumber,
            };
        }
        if let Some(v) = self.bundles {
            cfg.bundles = Some(v);
        }
        if let Some(v) = &self.splits {
            cfg.splits = Some(v.clone());
        }
        if let Some(v) = self.estimator {
            cfg.estimator = match v {
                EstimatorArg::Direct => EstimatorChoice::Direct,
                EstimatorArg::Path => EstimatorChoice::Path,
                EstimatorArg::Both => EstimatorChoice::Both,
            };
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        cfg.validation.check_backends |= self.check_backends;
        cfg.validation.moment_probe |= self.moment_probe;
        cfg.validation.dump_bundles |= self.dump_bundles;
        Ok(cfg)
    }

    fn resolve(&self) -> Result<Resolved> {
        Ok(self.config()?.resolve()?)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let r = args.resolve()?;
    let summary = run(&r)?;
    println!("{} ({} paths, p={}, J={})", summary.name, summary.paths, summary.order, summary.bundles);
    for row in &summary.results {
        println!(
            "seed {} {:<6} V0={} se={} CVA={} Delta={} Gamma={}",
            row.seed,
            row.estimator.name(),
            row.v0,
            row.v0_std_err,
            row.cva,
            opt(row.delta0),
            opt(row.gamma0)
        );
    }
    for a in &summary.aggregates {
        println!(
            "{:<6} mean V0={} (std {}) CVA={} (std {})",
            a.estimator.name(),
            a.v0.mean,
            a.v0.std,
            a.cva.mean,
            a.cva.std
        );
    }
    println!("wrote {}", r.output_dir.join("summary.toml").display());
    for f in &summary.validation.failures {
        eprintln!("validation failed: {f}");
    }
    Ok(if summary.passed() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_compare(a: &PathBuf, b: &PathBuf) -> Result<ExitCode> {
    let read = |p: &PathBuf| -> Result<Profile> {
        let f = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        Profile::read_csv(std::io::BufReader::new(f)).with_context(|| format!("reading {}", p.display()))
    };
    let c = compare(&read(a)?, &read(b)?)?;
    println!("EE {}", c.ee);
    println!("PFE {}", c.pfe);
    println!("DeltaEE {}", opt(c.delta));
    println!("GammaEE {}", opt(c.gamma));
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate_moments(args: &RunArgs) -> Result<ExitCode> {
    let r = args.resolve()?;
    let rows = moment_backend_table(&r.model, &r.grid, r.sgbm.order)?;
    write_atomic(&r.output_dir.join("moments.csv"), moment_rows_csv(&rows).as_bytes())?;
    let worst = rows.iter().map(|x| x.rel_diff).fold(0.0, f64::max);
    let backends_ok = rows.iter().all(|x| x.passed);
    println!("backends: {} points, max relative difference {worst}", rows.len());
    let seed = r.seeds[0];
    let paths = sgbm::paths::simulate(&r.model, &r.grid, r.paths, seed)?;
    let probe = moment_probe(&r.model, &paths, r.sgbm.order)?;
    write_atomic(&r.output_dir.join("probe.csv"), probe_rows_csv(&probe).as_bytes())?;
    let z = probe.iter().map(|x| x.z.abs()).fold(0.0, f64::max);
    let probe_ok = probe.iter().all(|x| x.passed);
    println!("sample moments: {} monomials, max |z| {z}", probe.len());
    if backends_ok && probe_ok {
        println!("ok");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("moment validation failed");
        Ok(ExitCode::from(2))
    }
}

fn cmd_dump_bundles(args: &RunArgs) -> Result<ExitCode> {
    let mut r = args.resolve()?;
    r.estimator = EstimatorChoice::Direct;
    let seed = r.seeds[0];
    let run = run_seed(&r, seed)?;
    let (bundles, coeffs) = dump_bundles(&r, &run)?;
    let b = r.output_dir.join(format!("bundles-{seed}.csv"));
    let c = r.output_dir.join(format!("coefficients-{seed}.csv"));
    write_atomic(&b, bundles.as_bytes())?;
    write_atomic(&c, coeffs.as_bytes())?;
    println!("wrote {} and {}", b.display(), c.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare { a, b } => cmd_compare(a, b),
        Command::ValidateMoments(a) => cmd_validate_moments(a),
        Command::DumpBundles(a) => cmd_dump_bundles(a),
        Command::PresetList => {
            for p in Preset::ALL {
                println!("{:<16} {}", p.name(), p.description());
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
