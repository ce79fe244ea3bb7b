//! The `avdb` command-line front end.
//!
//! Exit codes: 0 success, 1 gradient check failed, 2 usage error or
//! unwritable output, 3 dataset error, 4 configuration error, 5 model
//! container or dimension mismatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::bench::run_bench;
use crate::cnn::gradcheck::run_gradcheck;
use crate::config::{ConfigError, RunConfig};
use crate::container::{Model, ModelContainer, ModelKind};
use crate::dataset::{generate_synthetic, load_images, write_corpus, LabeledImage};
use crate::pipeline::{
    check_compatible, check_disjoint, params_string, prepare, score, train_model, PipelineError,
};
use crate::report::{append_csv, to_csv_string, ResultRow};

/// Drone-vs-bird image classification with KNN, linear SVM and a small CNN.
#[derive(Debug, Parser)]
#[command(name = "avdb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Knn,
    Svm,
    Cnn,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Knn => ModelKind::Knn,
            ModelArg::Svm => ModelKind::Svm,
            ModelArg::Cnn => ModelKind::Cnn,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic corpus into <out>/drone, <out>/bird and manifest.csv.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Images per class.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train one classifier on the training split and save it.
    Train {
        #[arg(long)]
        model: ModelArg,
        #[arg(long)]
        data: PathBuf,
        /// Config file or inline `key=value`; repeatable, later wins.
        #[arg(long)]
        config: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved model on the test split recorded in it.
    Eval {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Append the result row to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Preprocessing overrides; the split seed and fraction are fixed.
        #[arg(long)]
        config: Vec<String>,
    },
    /// Compare KNN, SVM and CNN over seeds 1..=N, plus the CNN depth/epoch sweep.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        config: Vec<String>,
    },
    /// Finite-difference check of the CNN backward pass on a tiny network.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Add this offset to one analytic gradient entry (negative control).
        #[arg(long)]
        perturb: Option<f64>,
    },
}

#[derive(Debug)]
pub enum Failure {
    Gradcheck(String),
    Usage(String),
    Dataset(String),
    Config(String),
    Model(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Gradcheck(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Dataset(_) => 3,
            Failure::Config(_) => 4,
            Failure::Model(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Gradcheck(m)
            | Failure::Usage(m)
            | Failure::Dataset(m)
            | Failure::Config(m)
            | Failure::Model(m) => m,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::Dataset(_) | PipelineError::Training(_) | PipelineError::Leakage(_) => {
                Failure::Dataset(msg)
            }
            PipelineError::Config(_) => Failure::Config(msg),
            PipelineError::Mismatch(_) => Failure::Model(msg),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message());
            f.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Outcome {
    match cmd {
        Command::Gen {
            out: dir,
            count,
            size,
            seed,
        } => cmd_gen(&dir, count as usize, size, seed, out),
        Command::Train {
            model,
            data,
            config,
            out: path,
        } => cmd_train(model.into(), &data, &config, &path, out),
        Command::Eval {
            model_file,
            data,
            csv,
            config,
        } => cmd_eval(&model_file, &data, csv.as_deref(), &config, out),
        Command::Bench {
            data,
            seeds,
            csv,
            config,
        } => cmd_bench(&data, seeds, csv.as_deref(), &config, out),
        Command::Gradcheck { seed, perturb } => cmd_gradcheck(seed, perturb, out),
    }
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) {
    // Output is best effort: a closed stdout must not turn success into failure.
    let _ = writeln!(out, "{}", line.as_ref());
}

/// Applies each `--config` argument in order: an existing file is read as
/// config text, anything else containing `=` is one inline assignment.
pub fn resolve_config(base: RunConfig, args: &[String]) -> Result<RunConfig, Failure> {
    let mut cfg = base;
    for arg in args {
        let path = Path::new(arg);
        if path.is_file() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read config `{arg}`: {e}")))?;
            cfg.apply_text(&text)
                .map_err(|e| Failure::Config(format!("{arg}: {e}")))?;
        } else if arg.contains('=') {
            cfg.apply_text(arg)?;
        } else {
            return Err(Failure::Config(format!("config file `{arg}` not found")));
        }
    }
    Ok(cfg)
}

fn load(data: &Path, cfg: &RunConfig) -> Result<Vec<LabeledImage>, Failure> {
    load_images(data, cfg.image_size).map_err(|e| Failure::Dataset(e.to_string()))
}

fn cmd_gen(dir: &Path, count: usize, size: usize, seed: u64, out: &mut dyn Write) -> Outcome {
    let corpus =
        generate_synthetic(count, size, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    write_corpus(&corpus, dir, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    say(
        out,
        format!(
            "wrote {} images ({count} per class, {size}x{size}, seed {seed}) to {}",
            corpus.len(),
            dir.display()
        ),
    );
    Ok(())
}

fn cmd_train(
    kind: ModelKind,
    data: &Path,
    config: &[String],
    path: &Path,
    out: &mut dyn Write,
) -> Outcome {
    let cfg = resolve_config(RunConfig::default(), config)?;
    crate::pipeline::validate_config(&cfg, kind)?;
    let images = load(data, &cfg)?;
    let (train, test) = prepare(&images, &cfg, kind)?;
    say(
        out,
        format!(
            "split seed={} fraction={} train={} test={}",
            cfg.seed,
            cfg.train_fraction,
            train.len(),
            test.len()
        ),
    );
    let epochs = cfg.cnn.epochs;
    let model = train_model(kind, &train, &cfg, |e| {
        say(
            out,
            format!(
                "epoch {}/{epochs} loss={:.6} accuracy={:.4}",
                e.epoch, e.mean_loss, e.accuracy
            ),
        );
    })?;
    match &model {
        Model::Knn(m) => say(
            out,
            format!(
                "knn: stored {} training samples, k={}, dim={}",
                m.train().len(),
                m.k(),
                m.feature_dim()
            ),
        ),
        Model::Svm(m) => {
            let correct = train
                .samples()
                .iter()
                .filter(|s| m.predict(&s.features).ok() == Some(s.label))
                .count();
            say(
                out,
                format!(
                    "svm: dim={} objective={:.6} train_accuracy={:.4}",
                    m.dim(),
                    m.objective(&train, cfg.svm.lambda),
                    correct as f64 / train.len() as f64
                ),
            );
        }
        Model::Cnn(m) => say(out, format!("cnn: {} parameters", m.param_count())),
    }
    ModelContainer { config: cfg, model }
        .save(path)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    say(out, format!("saved {kind} model to {}", path.display()));
    Ok(())
}

fn cmd_eval(
    model_file: &Path,
    data: &Path,
    csv: Option<&Path>,
    config: &[String],
    out: &mut dyn Write,
) -> Outcome {
    let container = ModelContainer::load(model_file).map_err(|e| Failure::Model(e.to_string()))?;
    let stored = container.config.clone();
    let cfg = resolve_config(stored.clone(), config)?;
    for (key, same) in [
        ("seed", cfg.seed == stored.seed),
        (
            "train_fraction",
            cfg.train_fraction == stored.train_fraction,
        ),
    ] {
        if !same {
            return Err(ConfigError::Locked(key.into()).into());
        }
    }
    let model = container.model;
    let kind = model.kind();
    check_compatible(&model, &cfg)?;
    let images = load(data, &cfg)?;
    let start = Instant::now();
    let (train, test) = prepare(&images, &cfg, kind)?;
    if let Model::Knn(m) = &model {
        // the stored reference set must not overlap the evaluation ids
        let stored = crate::dataset::Dataset::new(m.train().to_vec())
            .map_err(|e| Failure::Model(e.to_string()))?;
        check_disjoint(&stored, &test)?;
    }
    let (cm, rep) = score(&model, &test)?;
    let row = ResultRow::new(
        kind.display_name(),
        cfg.seed,
        params_string(kind, &cfg),
        cm,
        start.elapsed().as_millis() as u64,
    );
    say(
        out,
        format!(
            "{kind} on {} test images (train split {}, seed {})",
            test.len(),
            train.len(),
            cfg.seed
        ),
    );
    say(
        out,
        format!("tp={} tn={} fp={} fn={}", cm.tp, cm.tn, cm.fp, cm.fn_),
    );
    say(
        out,
        format!(
            "accuracy={} sensitivity={} precision={}",
            rep.accuracy, rep.sensitivity, rep.precision
        ),
    );
    say(
        out,
        format!(
            "misclassified ({}): {}",
            rep.misclassified_ids.len(),
            rep.misclassified_ids.join(" ")
        ),
    );
    if let Some(path) = csv {
        append_csv(path, &[row]).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

/// Worker count from `AVDB_THREADS`; unset or `0` means serial.
pub fn thread_count() -> Result<usize, Failure> {
    match std::env::var("AVDB_THREADS") {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("AVDB_THREADS=`{v}` is not a count"))),
    }
}

fn cmd_bench(
    data: &Path,
    seeds: u64,
    csv: Option<&Path>,
    config: &[String],
    out: &mut dyn Write,
) -> Outcome {
    let cfg = resolve_config(RunConfig::default(), config)?;
    let threads = thread_count()?;
    let images = load(data, &cfg)?;
    let seeds: Vec<u64> = (1..=seeds).collect();
    // progress goes straight to the process stderr so worker threads can share it
    let progress = |line: &str| eprintln!("{line}");
    let reports = run_bench(&images, &cfg, &seeds, threads, &progress)?;
    let rows: Vec<ResultRow> = reports
        .iter()
        .flat_map(|r| r.rows.iter().cloned())
        .collect();
    let _ = write!(out, "{}", to_csv_string(&rows));
    for r in &reports {
        say(out, r.ranking_line());
    }
    if let Some(path) = csv {
        append_csv(path, &rows).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, perturb: Option<f64>, out: &mut dyn Write) -> Outcome {
    let r = run_gradcheck(seed, perturb).map_err(|e| Failure::Gradcheck(e.to_string()))?;
    say(
        out,
        format!(
            "max relative error {:e} over {} parameters",
            r.max_rel_error, r.params_checked
        ),
    );
    if r.passed() {
        say(out, "gradcheck passed");
        Ok(())
    } else {
        Err(Failure::Gradcheck(format!(
            "gradcheck failed: worst parameter {}[{}] analytic={:e} numeric={:e}",
            r.worst.tensor, r.worst.index, r.worst.analytic, r.worst.numeric
        )))
    }
}
