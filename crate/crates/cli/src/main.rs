//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 when the fitted system is unstable (the
//! artifact is still written), 1 on any input or runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nmfsem::evaluation::{bootstrap_with, BootstrapOptions};
use nmfsem::io::{
    dataset_to_csv, export_diagram, load_artifact, load_column_spec, load_dataset, save_artifact, write_atomic,
    DiagramLabels, EdgeThreshold, LabeledDataset, RunArtifact, DEFAULT_RELATIVE_THRESHOLD,
};
use nmfsem::selection::{cross_validate, CvGrid};
use nmfsem::simulation::{self, SimCondition};
use nmfsem::{fit, FitConfig, FitResult, InitMethod, Penalties};

const EXIT_UNSTABLE: u8 = 2;
const EXIT_ERROR: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "nmfsem", version, about = "Non-negative matrix factorization with latent feedback")]
struct Cli {
    /// Worker threads for parallel fits; defaults to all available cores.
    #[arg(long, global = true, env = "NMFSEM_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model and write a run artifact.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "fit.json")]
        out: PathBuf,
    },
    /// Cross-validate the penalty weights (and optionally Q), then refit.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Candidate latent dimensions; defaults to --q alone.
        #[arg(long, value_delimiter = ',')]
        q_values: Option<Vec<usize>>,
        /// Default: {0, 0.001, 0.01, 0.1, 1} times the data scale.
        #[arg(long, value_delimiter = ',')]
        lambda1_values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        lambda2_values: Option<Vec<f64>>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value = "cv.json")]
        out: PathBuf,
        /// Also write the per-cell table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Percentile bootstrap of the feedback strength and amplification ratio.
    Bootstrap {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 200)]
        b: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value = "bootstrap.json")]
        out: PathBuf,
    },
    /// Monte Carlo study on synthetic data.
    Simulate {
        /// Run the four noise-free reference conditions.
        #[arg(long)]
        table1: bool,
        /// Replications per condition.
        #[arg(long, default_value_t = 50)]
        r: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Noise level of a single custom condition.
        #[arg(long, default_value_t = 0.0, conflicts_with = "table1")]
        sigma: f64,
        /// Feedback strength of a single custom condition.
        #[arg(long, default_value_t = 0.0, conflicts_with = "table1")]
        rho_true: f64,
        /// Sample size of a single custom condition.
        #[arg(long, default_value_t = 200, conflicts_with = "table1")]
        n: usize,
        #[arg(long, default_value_t = 100.0)]
        lambda_x: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda1: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda2: f64,
        #[arg(long, default_value_t = 2000)]
        max_iter: usize,
        /// Summary CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the first replicate of the first condition as `data.csv`
        /// and `spec.toml` into this directory. Its first observation is
        /// set to zero so that rescaling on load keeps the structure exact.
        #[arg(long)]
        export_dir: Option<PathBuf>,
    },
    /// Export the path diagram of a fitted artifact as Graphviz DOT.
    Diagram {
        #[arg(long)]
        artifact: PathBuf,
        /// Edge cutoff as a fraction of the largest weight in each matrix.
        #[arg(long, default_value_t = DEFAULT_RELATIVE_THRESHOLD)]
        relative_threshold: f64,
        /// Absolute edge cutoff; overrides --relative-threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Output path; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the summary table of a fitted artifact.
    Metrics {
        #[arg(long)]
        artifact: PathBuf,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file with a header row, one column per variable.
    #[arg(long)]
    data: PathBuf,
    /// TOML column spec (role, transform, protective per column).
    #[arg(long)]
    spec: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitArg {
    Nndsvdar,
    Kmeans,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Latent dimension.
    #[arg(long, default_value_t = 2)]
    q: usize,
    #[arg(long, default_value_t = 0.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
    #[arg(long, default_value_t = 100.0)]
    lambda_x: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    rel_tol: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Nndsvdar)]
    init: InitArg,
}

impl ModelArgs {
    fn config(&self) -> Result<FitConfig> {
        let mut cfg = FitConfig::new(self.q);
        cfg.penalties = Penalties {
            lambda_x: self.lambda_x,
            lambda_1: self.lambda1,
            lambda_2: self.lambda2,
        };
        cfg.seed = self.seed;
        cfg.max_iter = self.max_iter;
        cfg.rel_tol = self.rel_tol;
        cfg.init = match self.init {
            InitArg::Nndsvdar => InitMethod::Nndsvdar,
            InitArg::Kmeans => InitMethod::Kmeans,
        };
        cfg.validate().context("invalid model flags")?;
        Ok(cfg)
    }
}

fn load(args: &DataArgs) -> Result<LabeledDataset> {
    let specs = load_column_spec(&args.spec).with_context(|| format!("reading --spec {}", args.spec.display()))?;
    load_dataset(&args.data, &specs).with_context(|| format!("reading --data {}", args.data.display()))
}

fn fmt_opt(v: Option<f64>, width: usize, prec: usize) -> String {
    match v {
        Some(x) => format!("{x:>width$.prec$}"),
        None => format!("{:>width$}", "-"),
    }
}

/// Q, rho, AR, SC_map, SC_cov, MAE.
fn summary_table(q: usize, r: &FitResult) -> String {
    let m = r.metrics;
    format!(
        "{:>3}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}\n{:>3}  {:>7.3}  {}  {}  {}  {}\n",
        "Q",
        "rho",
        "AR",
        "SC_map",
        "SC_cov",
        "MAE",
        q,
        r.equilibrium.rho,
        fmt_opt(r.equilibrium.ar, 7, 3),
        fmt_opt(m.map(|m| m.sc_map), 7, 3),
        fmt_opt(m.map(|m| m.sc_cov), 7, 3),
        fmt_opt(m.map(|m| m.mae), 7, 3),
    )
}

fn status(r: &FitResult) -> u8 {
    if r.equilibrium.stable {
        0
    } else {
        eprintln!(
            "warning: fitted system is unstable (rho = {:.4} >= 1); equilibrium quantities are undefined",
            r.equilibrium.rho
        );
        EXIT_UNSTABLE
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Fit { data, model, out } => {
            let cfg = model.config()?;
            let d = load(&data)?;
            let r = fit(&d.data, &cfg)?;
            print!("{}", summary_table(cfg.q, &r));
            let code = status(&r);
            let mut art = RunArtifact::new(cfg, d.endogenous, d.exogenous)?;
            art.fit = Some(r);
            save_artifact(&art, &out).with_context(|| format!("writing --out {}", out.display()))?;
            Ok(code)
        }
        Command::Cv {
            data,
            model,
            q_values,
            lambda1_values,
            lambda2_values,
            folds,
            out,
            csv,
        } => {
            let base = model.config()?;
            let d = load(&data)?;
            let default = CvGrid::default_for(&d.data);
            let grid = CvGrid {
                lambda1_values: lambda1_values.unwrap_or(default.lambda1_values),
                lambda2_values: lambda2_values.unwrap_or(default.lambda2_values),
                lambda_x: model.lambda_x,
                k_folds: folds,
                q_values,
            };
            let cv = cross_validate(&d.data, &grid, &base)?;
            let best = cv.best_cell().clone();
            println!("{:>3}  {:>10}  {:>10}  {:>9}  stable", "q", "lambda1", "lambda2", "cv_mae");
            for (i, c) in cv.cells.iter().enumerate() {
                println!(
                    "{:>3}  {:>10.4e}  {:>10.4e}  {}  {}{}",
                    c.q,
                    c.lambda_1,
                    c.lambda_2,
                    fmt_opt(c.mean_mae, 9, 5),
                    c.stable,
                    if i == cv.best { "  <- selected" } else { "" }
                );
            }
            if let Some(path) = &csv {
                write_atomic(path, cv.to_csv().as_bytes()).with_context(|| format!("writing --csv {}", path.display()))?;
            }
            let mut cfg = base;
            cfg.q = best.q;
            cfg.penalties.lambda_1 = best.lambda_1;
            cfg.penalties.lambda_2 = best.lambda_2;
            let r = fit(&d.data, &cfg)?;
            println!();
            print!("{}", summary_table(cfg.q, &r));
            let code = status(&r);
            let mut art = RunArtifact::new(cfg, d.endogenous, d.exogenous)?;
            art.fit = Some(r);
            art.cv = Some(cv);
            save_artifact(&art, &out).with_context(|| format!("writing --out {}", out.display()))?;
            Ok(code)
        }
        Command::Bootstrap {
            data,
            model,
            b,
            level,
            out,
        } => {
            let cfg = model.config()?;
            let d = load(&data)?;
            let point = fit(&d.data, &cfg)?;
            let opts = BootstrapOptions {
                level,
                ..BootstrapOptions::new(b, cfg.seed)
            };
            let boot = bootstrap_with(&d.data, &cfg, &opts)?;
            print!("{}", summary_table(cfg.q, &point));
            println!();
            println!("{:>5}  {:>7}  {:>17}", "", "point", format!("{:.0}% interval", level * 100.0));
            println!(
                "{:>5}  {:>7.3}  [{:>7.3}, {:>7.3}]",
                "rho", boot.rho_point, boot.rho_interval.0, boot.rho_interval.1
            );
            println!(
                "{:>5}  {}  [{:>7.3}, {:>7.3}]",
                "AR",
                fmt_opt(boot.ar_point, 7, 3),
                boot.ar_interval.0,
                boot.ar_interval.1
            );
            println!(
                "retained {} of {} replicates ({} unstable, {} failed)",
                boot.retained(),
                boot.b,
                boot.n_unstable,
                boot.n_failed
            );
            let code = status(&point);
            let mut art = RunArtifact::new(cfg, d.endogenous, d.exogenous)?;
            art.fit = Some(point);
            art.bootstrap = Some(boot);
            save_artifact(&art, &out).with_context(|| format!("writing --out {}", out.display()))?;
            Ok(code)
        }
        Command::Simulate {
            table1,
            r,
            seed,
            sigma,
            rho_true,
            n,
            lambda_x,
            lambda1,
            lambda2,
            max_iter,
            out,
            export_dir,
        } => {
            let conditions = if table1 {
                simulation::reference_conditions(r, seed)
            } else {
                vec![SimCondition {
                    r,
                    seed,
                    ..SimCondition::new(sigma, rho_true, n)
                }]
            };
            for c in &conditions {
                c.validate()?;
            }
            let mut cfg = FitConfig::new(conditions[0].q);
            cfg.penalties = Penalties {
                lambda_x,
                lambda_1: lambda1,
                lambda_2: lambda2,
            };
            cfg.max_iter = max_iter;
            cfg.validate()?;
            if let Some(dir) = &export_dir {
                export(&conditions[0], dir)?;
            }
            let summaries = simulation::run_study(&conditions, &cfg)?;
            print!("{}", simulation::summary_table(&summaries));
            for s in summaries.iter().filter(|s| s.n_excluded > 0) {
                eprintln!("{}: {} of {} replicates excluded", s.condition.label(), s.n_excluded, s.condition.r);
            }
            if let Some(path) = &out {
                write_atomic(path, simulation::summary_csv(&summaries).as_bytes())
                    .with_context(|| format!("writing --out {}", path.display()))?;
            }
            Ok(0)
        }
        Command::Diagram {
            artifact,
            relative_threshold,
            threshold,
            out,
        } => {
            let art = load_artifact(&artifact).with_context(|| format!("reading --artifact {}", artifact.display()))?;
            let Some(r) = &art.fit else {
                bail!("artifact {} contains no fit", artifact.display());
            };
            let t = match threshold {
                Some(a) => EdgeThreshold::Absolute(a),
                None => EdgeThreshold::RelativeToMax(relative_threshold),
            };
            let labels = DiagramLabels {
                endogenous: art.endogenous.clone(),
                exogenous: art.exogenous.clone(),
            };
            let dot = export_diagram(r, &labels, t)?;
            match &out {
                Some(p) => write_atomic(p, dot.as_bytes()).with_context(|| format!("writing --out {}", p.display()))?,
                None => print!("{dot}"),
            }
            Ok(0)
        }
        Command::Metrics { artifact } => {
            let art = load_artifact(&artifact).with_context(|| format!("reading --artifact {}", artifact.display()))?;
            let Some(r) = &art.fit else {
                bail!("artifact {} contains no fit", artifact.display());
            };
            print!("{}", summary_table(r.params.q(), r));
            Ok(status(r))
        }
    }
}

fn export(condition: &SimCondition, dir: &Path) -> Result<()> {
    let (data, _) = simulation::replicate_data(condition, 0, 0)?;
    let labeled = LabeledDataset {
        data: simulation::anchor_at_origin(&data)?,
        endogenous: (1..=condition.p1).map(|i| format!("y{i}")).collect(),
        exogenous: (1..=condition.p2).map(|i| format!("z{i}")).collect(),
    };
    let (csv, spec) = dataset_to_csv(&labeled)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating --export-dir {}", dir.display()))?;
    write_atomic(dir.join("data.csv"), csv.as_bytes())?;
    write_atomic(dir.join("spec.toml"), spec.as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: --threads {t}: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
