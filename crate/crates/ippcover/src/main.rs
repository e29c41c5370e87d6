//! Command-line front end: fit kernels from measurement CSVs, plan
//! guaranteed sensing routes, verify plans, and run benchmark sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ippcover::coverage::{CoverageMatrix, TargetSpec};
use ippcover::error::Error;
use ippcover::eval::{self, SweepConfig};
use ippcover::field::FieldSpec;
use ippcover::gp::{self, GpModel, KernelKind};
use ippcover::kernel::KernelSpec;
use ippcover::planners::{self, BudgetSpec, Plan, RoutingConfig};
use ippcover::{Environment, Point};

#[derive(Parser)]
#[command(name = "ippcover", version, about = "Sensing-route planning with guaranteed GP uncertainty")]
struct Cli {
    /// Base RNG seed for all stochastic steps.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker thread cap (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit kernel hyperparameters to a measurement CSV (x,y,value).
    Fit {
        /// Training CSV with header x,y,value.
        #[arg(long)]
        train: PathBuf,
        /// Environment JSON file.
        #[arg(long)]
        env: PathBuf,
        /// Kernel family: rbf | variable.
        #[arg(long, default_value = "rbf")]
        kernel_kind: String,
        /// Output model file name (inside --output-dir).
        #[arg(long, default_value = "kernel.json")]
        out: String,
    },
    /// Compute a guaranteed sensing route.
    Plan {
        #[arg(long)]
        env: PathBuf,
        /// Model file produced by `fit`.
        #[arg(long)]
        kernel: PathBuf,
        /// Method: greedy | gcb | hex.
        #[arg(long, default_value = "greedy")]
        method: String,
        /// Target as a fraction of the maximum prior variance, in (0,1).
        #[arg(long, conflicts_with = "target_abs")]
        target_ratio: Option<f64>,
        /// Target as an absolute posterior variance.
        #[arg(long)]
        target_abs: Option<f64>,
        /// Travel budget in meters (gcb only).
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Recheck a plan's variance guarantee from its files.
    Verify {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        env: PathBuf,
    },
    /// Run the full method x ratio benchmark sweep from a config file.
    Benchmark {
        /// JSON config: {"env": path, "field": {...}, sweep fields...}.
        #[arg(long)]
        config: PathBuf,
    },
}

/// Fitted model on disk: kernel, noise level, and the mean offset
/// predictions revert to.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    kernel: KernelSpec,
    noise_variance: f64,
    #[serde(default)]
    y_offset: f64,
}

impl ModelFile {
    fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })
    }

    fn to_model(&self) -> Result<GpModel, Error> {
        GpModel::with_offset(
            self.kernel.clone(),
            self.noise_variance,
            Vec::new(),
            Vec::new(),
            self.y_offset,
        )
    }
}

#[derive(Debug, Deserialize)]
struct BenchmarkConfig {
    env: String,
    field: FieldSpec,
    #[serde(flatten)]
    sweep: SweepConfig,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidTarget { .. } => 4,
        Error::NoFeasiblePath(..) | Error::InvalidGeometry(_) | Error::EmptyDiscretization(_) => 5,
        Error::FitDiverged
        | Error::InsufficientData { .. }
        | Error::FactorizationFailure(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        // Ignore failure: the global pool may already exist in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
    if let Err(e) = std::fs::create_dir_all(&cli.output_dir) {
        eprintln!("error: cannot create output dir: {e}");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Fit {
            train,
            env,
            kernel_kind,
            out,
        } => cmd_fit(&cli, train, env, kernel_kind, out),
        Command::Plan {
            env,
            kernel,
            method,
            target_ratio,
            target_abs,
            budget,
        } => cmd_plan(&cli, env, kernel, method, *target_ratio, *target_abs, *budget),
        Command::Verify { plan, kernel, env } => cmd_verify(plan, kernel, env),
        Command::Benchmark { config } => cmd_benchmark(&cli, config),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn read_training_csv(path: &Path) -> Result<(Vec<Point>, Vec<f64>), Error> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            file: file.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            file: file.clone(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        let get = |j: usize| -> Result<f64, Error> {
            rec.get(j)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    file: file.clone(),
                    line: i + 2,
                    msg: format!("bad numeric field {}", j + 1),
                })
        };
        xs.push(Point::new(get(0)?, get(1)?));
        ys.push(get(2)?);
    }
    Ok((xs, ys))
}

fn cmd_fit(
    cli: &Cli,
    train: &Path,
    env_path: &Path,
    kernel_kind: &str,
    out: &str,
) -> Result<u8, Error> {
    let env = Environment::load(env_path)?;
    let kind: KernelKind = kernel_kind.parse()?;
    let (xs, ys) = read_training_csv(train)?;
    let model = gp::fit(&xs, &ys, kind, &env, cli.seed)?;
    let lml = model.log_marginal_likelihood()?;

    let model_file = ModelFile {
        kernel: model.kernel.clone(),
        noise_variance: model.noise_variance,
        y_offset: model.y_offset,
    };
    let out_path = cli.output_dir.join(out);
    std::fs::write(&out_path, serde_json::to_string_pretty(&model_file)?)?;

    let report = serde_json::json!({
        "n": xs.len(),
        "kernel_kind": kernel_kind,
        "log_marginal_likelihood": lml,
        "signal_variance": model.kernel.signal_variance(),
        "noise_variance": model.noise_variance,
        "y_offset": model.y_offset,
    });
    let report_path = cli.output_dir.join("fit_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    println!(
        "fit n={} lml={:.6} noise_variance={:.6e} -> {}",
        xs.len(),
        lml,
        model.noise_variance,
        out_path.display()
    );
    Ok(0)
}

fn cmd_plan(
    cli: &Cli,
    env_path: &Path,
    kernel_path: &Path,
    method: &str,
    target_ratio: Option<f64>,
    target_abs: Option<f64>,
    budget: Option<f64>,
) -> Result<u8, Error> {
    let env = Environment::load(env_path)?;
    let model_file = ModelFile::load(kernel_path)?;
    let model = model_file.to_model()?;
    let target = match (target_ratio, target_abs) {
        (Some(r), None) => {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::InvalidTarget {
                    got: r,
                    max: 1.0,
                });
            }
            TargetSpec::Ratio(r)
        }
        (None, Some(v)) => TargetSpec::Absolute(v),
        _ => {
            return Err(Error::Config(
                "exactly one of --target-ratio / --target-abs is required".into(),
            ))
        }
    };
    let rc = RoutingConfig {
        seed: cli.seed,
        start: None,
    };
    let plan = match method {
        "greedy" => {
            let matrix = CoverageMatrix::build(
                &env,
                &model_file.kernel,
                model_file.noise_variance,
                &target,
                None,
            )?;
            planners::plan_greedy(&matrix, &env, &rc, &[], false, None)?
        }
        "gcb" => {
            let matrix = CoverageMatrix::build(
                &env,
                &model_file.kernel,
                model_file.noise_variance,
                &target,
                None,
            )?;
            let spec = match budget {
                Some(b) => BudgetSpec::meters(b),
                None => BudgetSpec::unlimited(),
            };
            planners::plan_gcb(&matrix, &env, &spec, &rc, &[])?
        }
        "hex" => {
            let resolved = target.resolve(&env, &model_file.kernel, None)?;
            planners::plan_hex(
                &env,
                &model_file.kernel,
                model_file.noise_variance,
                resolved,
                &rc,
            )?
        }
        other => return Err(Error::Config(format!("unknown method `{other}`"))),
    };

    let achieved = planners::verify_guarantee(&plan, &model, &env)?;
    write_plan_artifacts(&cli.output_dir, &plan, achieved, &model, &env)?;
    println!(
        "method={} waypoints={} length_m={:.3} achieved_max_variance={:.6} target={:.6}",
        plan.method,
        plan.selected.len(),
        plan.route.length,
        achieved,
        plan.target_variance
    );
    Ok(0)
}

fn write_plan_artifacts(
    dir: &Path,
    plan: &Plan,
    achieved: f64,
    model: &GpModel,
    env: &Environment,
) -> Result<(), Error> {
    let mut value = serde_json::to_value(plan)?;
    value["achieved_max_variance"] = serde_json::json!(achieved);
    std::fs::write(
        dir.join("plan.json"),
        serde_json::to_string_pretty(&value)?,
    )?;

    let mut csv = String::from("seq,x,y\n");
    for (i, p) in plan.route.geometry.iter().enumerate() {
        csv.push_str(&format!("{},{:.6},{:.6}\n", i, p.x, p.y));
    }
    std::fs::write(dir.join("route.csv"), csv)?;

    // Heatmap of the posterior after measuring at the plan's waypoints.
    let xs: Vec<Point> = plan.selected.iter().map(|&j| env.candidates[j]).collect();
    let ys = vec![0.0; xs.len()];
    let cond = model.condition(&xs, &ys)?;
    eval::export_variance_pgm(&cond, env, &dir.join("variance.pgm"))?;
    Ok(())
}

fn cmd_verify(plan_path: &Path, kernel_path: &Path, env_path: &Path) -> Result<u8, Error> {
    let env = Environment::load(env_path)?;
    let model_file = ModelFile::load(kernel_path)?;
    let model = model_file.to_model()?;
    let text = std::fs::read_to_string(plan_path)?;
    let plan: Plan = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: plan_path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    for &j in &plan.selected {
        if j >= env.candidates.len() {
            return Err(Error::Config(format!(
                "plan references candidate {j} but the environment has {}",
                env.candidates.len()
            )));
        }
    }
    let achieved = planners::verify_guarantee(&plan, &model, &env)?;
    println!("{achieved:.9}");
    if achieved <= plan.target_variance + 1e-9 {
        Ok(0)
    } else {
        Ok(1)
    }
}

fn cmd_benchmark(cli: &Cli, config_path: &Path) -> Result<u8, Error> {
    let text = std::fs::read_to_string(config_path)?;
    let mut config: BenchmarkConfig =
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: config_path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
    if cli.seed != 0 {
        config.sweep.seed = cli.seed;
    }
    config.sweep.validate()?;
    let base_dir = config_path.parent().unwrap_or(Path::new("."));
    let env_path = {
        let p = PathBuf::from(&config.env);
        if p.is_absolute() {
            p
        } else {
            base_dir.join(p)
        }
    };
    let env = Environment::load(&env_path)?;
    let (bmin, bmax) = env.boundary.bbox();
    let field = config.field.build(
        [bmin.x, bmin.y, bmax.x, bmax.y],
        base_dir,
        config.sweep.seed,
    )?;

    let outcome = eval::run_sweep(&env, &field, &config.sweep)?;

    eval::write_results_csv(&outcome.reports, &cli.output_dir.join("results.csv"))?;
    eval::write_long_csv(&outcome.reports, &cli.output_dir.join("results_long.csv"))?;
    eval::write_timings_csv(&outcome.reports, &cli.output_dir.join("timings.csv"))?;

    let plans_dir = cli.output_dir.join("plans");
    std::fs::create_dir_all(&plans_dir)?;
    for (method, ratio, plan) in &outcome.plans {
        let achieved = planners::verify_guarantee(plan, &outcome.model, &env)?;
        let mut value = serde_json::to_value(plan)?;
        value["achieved_max_variance"] = serde_json::json!(achieved);
        let name = format!("{}_{:.2}.json", method, ratio);
        std::fs::write(plans_dir.join(name), serde_json::to_string_pretty(&value)?)?;
    }

    // Heatmap for the last retained plan, if any.
    if let Some((_, _, plan)) = outcome.plans.last() {
        let xs: Vec<Point> = plan.selected.iter().map(|&j| env.candidates[j]).collect();
        let ys = vec![0.0; xs.len()];
        let cond = outcome.model.condition(&xs, &ys)?;
        eval::export_variance_pgm(&cond, &env, &cli.output_dir.join("variance.pgm"))?;
    }

    let failures = outcome
        .reports
        .iter()
        .filter(|r| r.status != "ok")
        .count();
    println!(
        "benchmark cells={} failures={} -> {}",
        outcome.reports.len(),
        failures,
        cli.output_dir.join("results.csv").display()
    );
    Ok(0)
}
