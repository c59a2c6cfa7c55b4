//! The `ssbnn` command line.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 for runtime failures.

use crate::io::checkpoint::RngState;
use crate::io::config::ConfigError;
use crate::io::dataset::{gen_synthetic, load_mnist, read_csv, read_idx_pair, write_csv, write_idx_pair, DEFAULT_PIXEL_SCALE};
use crate::io::{load_checkpoint, save_checkpoint, Checkpoint, Dataset, RunConfig, Split, Teacher};
use crate::metrics::{flops_table, model_shapes, parse_architecture, SparsityReport};
use crate::network::{BayesianMlp, Likelihood, Targets};
use crate::planner::Plan;
use crate::prior::PriorKind;
use crate::train::{evaluate, train, TrainData, TrainError, EVAL_SAMPLES};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "ssbnn", version, about = "Spike-and-slab Bayesian MLPs with structured node selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint and a metrics CSV.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        prior: Option<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        pixel_scale: Option<f64>,
    },
    /// Score a checkpoint and report its sparsity.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test inputs (IDX) and targets (IDX).
        #[arg(long, requires = "test_y")]
        test_x: Option<PathBuf>,
        #[arg(long, requires = "test_x")]
        test_y: Option<PathBuf>,
        #[arg(long, conflicts_with = "test_x")]
        test_csv: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PIXEL_SCALE)]
        pixel_scale: f64,
        #[arg(long, default_value_t = EVAL_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print rate quantities, inclusion probabilities and the contraction radius.
    Plan {
        #[command(flatten)]
        config: ConfigArgs,
        /// Prior family; defaults to the config's `prior` or ss-gl.
        #[arg(long)]
        prior: Option<String>,
    },
    /// Print a per-layer FLOPs table.
    Flops {
        /// Architecture description, one layer per line.
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        arch: Option<PathBuf>,
        /// Count FLOPs of a trained checkpoint instead.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Generate synthetic regression data from a teacher function.
    GenData {
        /// `sin:<dim>[:amp[:freq]]`, `product:<dim>[:amp]` or `constant:<dim>:<value>`.
        #[arg(long, conflicts_with = "teacher_file", required_unless_present = "teacher_file")]
        teacher: Option<String>,
        /// TOML teacher description (needed for sparse-mlp teachers).
        #[arg(long)]
        teacher_file: Option<PathBuf>,
        #[arg(long)]
        n_train: usize,
        #[arg(long, default_value_t = 0)]
        n_test: usize,
        #[arg(long, default_value_t = 1.0)]
        noise_sigma: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = DataFormat::Csv)]
        format: DataFormat,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    Csv,
    Idx,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::DataMismatch(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Train {
            config,
            seed,
            epochs,
            lr,
            batch_size,
            prior,
            output_dir,
            pixel_scale,
        } => {
            let mut overrides = config.overrides.clone();
            overrides.push(format!("seed={seed}"));
            if let Some(v) = epochs {
                overrides.push(format!("epochs={v}"));
            }
            if let Some(v) = lr {
                overrides.push(format!("lr={v:e}"));
            }
            if let Some(v) = batch_size {
                overrides.push(format!("batch_size={v}"));
            }
            if let Some(v) = prior {
                let kind: PriorKind = v.parse().map_err(usage)?;
                overrides.push(format!("prior=\"{kind}\""));
            }
            if let Some(v) = output_dir {
                overrides.push(format!("output_dir={}", toml::Value::String(v.display().to_string())));
            }
            if let Some(v) = pixel_scale {
                overrides.push(format!("pixel_scale={v:e}"));
            }
            let cfg = RunConfig::load(config.config.as_deref(), &overrides)?;
            cmd_train(&cfg, out, err)
        }
        Command::Eval {
            checkpoint,
            test_x,
            test_y,
            test_csv,
            pixel_scale,
            samples,
            seed,
        } => cmd_eval(&checkpoint, test_x.zip(test_y), test_csv, pixel_scale, samples, seed, out),
        Command::Plan { config, prior } => {
            let cfg = RunConfig::load(config.config.as_deref(), &config.overrides)?;
            let kind = match prior {
                Some(p) => p.parse().map_err(usage)?,
                None => cfg.prior_kind(),
            };
            let plan = Plan::compute(kind, &cfg.topology()?).map_err(usage)?;
            out.write_all(plan.to_csv().as_bytes()).map_err(runtime)
        }
        Command::Flops { arch, checkpoint } => {
            let shapes = match (arch, checkpoint) {
                (Some(a), _) => {
                    let text = std::fs::read_to_string(&a).map_err(|e| runtime(format!("{}: {e}", a.display())))?;
                    parse_architecture(&text).map_err(usage)?
                }
                (None, Some(c)) => model_shapes(&load_checkpoint(&c).map_err(runtime)?.model),
                (None, None) => return Err(usage("one of --arch or --checkpoint is required")),
            };
            let table = flops_table(&shapes).map_err(usage)?;
            out.write_all(table.to_csv().as_bytes()).map_err(runtime)
        }
        Command::GenData {
            teacher,
            teacher_file,
            n_train,
            n_test,
            noise_sigma,
            seed,
            out: dir,
            format,
        } => {
            let teacher: Teacher = match (teacher, teacher_file) {
                (Some(t), _) => t.parse().map_err(usage)?,
                (None, Some(f)) => {
                    let text = std::fs::read_to_string(&f).map_err(|e| runtime(format!("{}: {e}", f.display())))?;
                    toml::from_str(&text).map_err(usage)?
                }
                (None, None) => return Err(usage("one of --teacher or --teacher-file is required")),
            };
            let (tr, te) = gen_synthetic(&teacher, n_train, n_test, noise_sigma, seed).map_err(usage)?;
            std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
            let mut written = Vec::new();
            for d in [&tr, &te] {
                if d.is_empty() {
                    continue;
                }
                match format {
                    DataFormat::Csv => {
                        let p = dir.join(format!("{}.csv", d.split));
                        write_csv(&p, d).map_err(runtime)?;
                        written.push(p);
                    }
                    DataFormat::Idx => {
                        let (x, y) = write_idx_pair(&dir, &d.split.to_string(), false, d).map_err(runtime)?;
                        written.extend([x, y]);
                    }
                }
            }
            for p in written {
                writeln!(out, "{}", p.display()).map_err(runtime)?;
            }
            Ok(())
        }
    }
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<Option<Dataset>, CliError> {
    let (x, y, c) = match split {
        Split::Train => (&cfg.train_x, &cfg.train_y, &cfg.train_csv),
        Split::Test => (&cfg.test_x, &cfg.test_y, &cfg.test_csv),
    };
    let scale = cfg.pixel_scale.unwrap_or(DEFAULT_PIXEL_SCALE);
    let classes = match cfg.likelihood.unwrap_or(Likelihood::Categorical) {
        Likelihood::Categorical => cfg.widths.as_ref().and_then(|w| w.last().copied()),
        Likelihood::GaussianRegression => None,
    };
    let data = match (x, y, c) {
        (Some(x), Some(y), None) => read_idx_pair(x, y, split, scale).map_err(runtime)?,
        (None, None, Some(c)) => read_csv(c, split, classes).map_err(runtime)?,
        (None, None, None) => return Ok(None),
        _ => return Err(usage(format!("give either {split}_x and {split}_y or {split}_csv"))),
    };
    Ok(Some(data))
}

fn cmd_train(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let tc = cfg.train_config()?;
    let output_dir = cfg.output_dir.clone().ok_or_else(|| usage("missing required key 'output_dir'"))?;
    let mut train_set = load_split(cfg, Split::Train)?.ok_or_else(|| usage("no training data (set train_x/train_y or train_csv)"))?;
    if let Some(n) = cfg.train_subset {
        train_set = train_set.subsample(n, tc.seed);
    }
    let test_set = load_split(cfg, Split::Test)?;
    cfg.check_data_dims(train_set.input_dim(), train_set.output_dim())?;
    let net = cfg.network_config(Some(train_set.len()))?;
    let mut model = BayesianMlp::new(net, tc.seed).map_err(usage)?;
    let eval = test_set.as_ref().map(|t| (&t.inputs, &t.targets));
    let data = TrainData {
        x: &train_set.inputs,
        y: &train_set.targets,
        eval,
    };
    let outcome = train(&mut model, data, &tc, |m| {
        let _ = writeln!(
            err,
            "epoch {:>4}  elbo {:.4}  nll {:.4}  kl {:.4}  score {:.4}  compression {:.4}",
            m.epoch, m.elbo, m.nll, m.kl, m.score, m.sparsity.compression_ratio
        );
    })?;
    std::fs::create_dir_all(&output_dir).map_err(|e| runtime(format!("{}: {e}", output_dir.display())))?;
    let ckpt = Checkpoint {
        train: Some(tc.clone()),
        rng: Some(RngState {
            seed: tc.seed,
            step: outcome.optimizer.step,
            epochs_run: outcome.epochs_run,
        }),
        optimizer: Some(outcome.optimizer.clone()),
        ..Checkpoint::new(model)
    };
    save_checkpoint(&output_dir.join("checkpoint.json"), &ckpt).map_err(runtime)?;
    outcome.trace.save_csv(&output_dir.join("metrics.csv"))?;
    cfg.save(&output_dir.join("config.toml"))?;
    let last = outcome.trace.rows.last().expect("at least one epoch");
    writeln!(
        out,
        "trained {} epochs{}; final score {:.6}; compression {:.6}; outputs in {}",
        outcome.epochs_run,
        if outcome.stopped_early { " (early stop)" } else { "" },
        last.score,
        last.sparsity.compression_ratio,
        output_dir.display()
    )
    .map_err(runtime)
}

fn cmd_eval(
    checkpoint: &Path,
    idx: Option<(PathBuf, PathBuf)>,
    csv: Option<PathBuf>,
    pixel_scale: f64,
    samples: usize,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let model = load_checkpoint(checkpoint).map_err(runtime)?.model;
    let classes = *model.config.widths.last().expect("validated widths");
    let data = match (idx, csv) {
        (Some((x, y)), _) => {
            let d = read_idx_pair(&x, &y, Split::Test, pixel_scale);
            Some(d.or_else(|_| load_mnist(&x, &y, Split::Test, pixel_scale)).map_err(runtime)?)
        }
        (None, Some(c)) => Some(read_csv(&c, Split::Test, Some(classes)).map_err(runtime)?),
        (None, None) => None,
    };
    if let Some(d) = data {
        let targets = match (d.targets, model.config.likelihood) {
            (Targets::Classes { labels, .. }, Likelihood::Categorical) => Targets::Classes { labels, num_classes: classes },
            (t, _) => t,
        };
        let score = evaluate(&model, &d.inputs, &targets, samples.max(1), seed)?;
        let name = match model.config.likelihood {
            Likelihood::Categorical => "accuracy",
            Likelihood::GaussianRegression => "rmse",
        };
        writeln!(out, "metric,value\n{name},{score}").map_err(runtime)?;
        let report = SparsityReport::from_model(&model).to_csv();
        out.write_all(report.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>().as_bytes())
            .map_err(runtime)
    } else {
        out.write_all(SparsityReport::from_model(&model).to_csv().as_bytes()).map_err(runtime)
    }
}
