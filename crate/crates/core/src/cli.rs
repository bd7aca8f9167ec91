//! Command-line driver: `dsfacto train` and `dsfacto bench`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, ValueEnum};

use crate::config::{Mode, Routing, RunConfig};
use crate::data::{self, Dataset, SynthSpec};
use crate::engine;
use crate::error::{Error, Result};
use crate::fm::{FmModel, LossKind, Task};
use crate::metrics::{self, format_sig6, TrainTrace};
use crate::serial;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

const USAGE: &str = "usage: dsfacto <train|bench> [options]\n       dsfacto <train|bench> --help";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Squared,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    SerialBatch,
    SerialIncremental,
    Dsfacto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RoutingArg {
    Ring,
    Random,
}

/// Model and optimizer flags shared by both subcommands.
#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskArg,
    /// Defaults to squared for regression and logistic for classification
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Override the dimension count inferred from the data
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    /// Per-epoch multiplicative step size decay
    #[arg(long, default_value_t = 1.0)]
    decay: f64,
    #[arg(long = "lambda-w", default_value_t = 1e-4)]
    lambda_w: f64,
    #[arg(long = "lambda-v", default_value_t = 1e-4)]
    lambda_v: f64,
    #[arg(long, value_enum, default_value = "ring")]
    routing: RoutingArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "init-sd", default_value_t = 0.01)]
    init_sd: f64,
    /// Patch the local latent projections after every latent update
    #[arg(long = "local-a-refresh")]
    local_a_refresh: bool,
    /// Run the engine workers round-robin on one thread
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Parser)]
#[command(name = "dsfacto train", about = "Train a factorization machine")]
struct TrainOpts {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dsfacto")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Trace CSV destination
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write 0 in the elapsed_secs column so traces are byte-reproducible
    #[arg(long = "no-timing")]
    no_timing: bool,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Debug, Parser)]
#[command(
    name = "dsfacto bench",
    about = "Time the dsfacto engine at several worker counts"
)]
struct BenchOpts {
    /// LIBSVM training file; a synthetic dataset is generated when absent
    #[arg(long)]
    train: Option<PathBuf>,
    /// Comma-separated worker counts
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    workers: Vec<usize>,
    #[arg(long = "synth-n", default_value_t = 20000)]
    synth_n: usize,
    #[arg(long = "synth-dim", default_value_t = 2000)]
    synth_dim: usize,
    #[arg(long = "synth-density", default_value_t = 0.05)]
    synth_density: f64,
    /// CSV destination, standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

impl TrainFlags {
    fn config(&self, mode: Mode, workers: usize) -> RunConfig {
        let task = match self.task {
            TaskArg::Regression => Task::Regression,
            TaskArg::Classification => Task::Classification,
        };
        let loss = match self.loss {
            Some(LossArg::Squared) => LossKind::Squared,
            Some(LossArg::Logistic) => LossKind::Logistic,
            None => task.default_loss(),
        };
        RunConfig {
            task,
            loss,
            dim: self.dim,
            k: self.k,
            epochs: self.epochs,
            eta: self.eta,
            decay: self.decay,
            lambda_w: self.lambda_w,
            lambda_v: self.lambda_v,
            workers,
            routing: match self.routing {
                RoutingArg::Ring => Routing::Ring,
                RoutingArg::Random => Routing::Random,
            },
            seed: self.seed,
            init_sd: self.init_sd,
            local_a_refresh: self.local_a_refresh,
            deterministic: self.deterministic,
            mode,
            ..RunConfig::default()
        }
    }
}

/// Entry point for the binary. `argv[0]` is the program name.
pub fn run(argv: &[String]) -> i32 {
    match argv.get(1).map(String::as_str) {
        Some("train") => cmd_train(&argv[1..]),
        Some("bench") => cmd_bench(&argv[1..]),
        Some("-h" | "--help" | "help") => {
            println!("{USAGE}");
            EXIT_OK
        }
        Some("-V" | "--version") => {
            println!("dsfacto {}", env!("CARGO_PKG_VERSION"));
            EXIT_OK
        }
        Some(other) => {
            eprintln!("unknown command '{other}'\n{USAGE}");
            EXIT_CONFIG
        }
        None => {
            eprintln!("{USAGE}");
            EXIT_CONFIG
        }
    }
}

fn parse_args<T: Parser>(argv: &[String]) -> std::result::Result<T, i32> {
    let name = format!("dsfacto {}", argv.first().map_or("", String::as_str));
    T::command()
        .bin_name(name)
        .try_get_matches_from(argv)
        .and_then(|m| T::from_arg_matches(&m))
        .map_err(|e| {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        })
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn report(err: Error) -> i32 {
    eprintln!("dsfacto: {err}");
    exit_code(&err)
}

/// `dsfacto train`. `argv[0]` is the subcommand name.
pub fn cmd_train(argv: &[String]) -> i32 {
    let opts: TrainOpts = match parse_args(argv) {
        Ok(o) => o,
        Err(code) => return code,
    };
    let mode = match opts.mode {
        ModeArg::SerialBatch => Mode::SerialBatch,
        ModeArg::SerialIncremental => Mode::SerialIncremental,
        ModeArg::Dsfacto => Mode::Dsfacto,
    };
    let mut config = opts.flags.config(mode, opts.workers);
    config.train_path = Some(opts.train.clone());
    config.test_path = opts.test.clone();
    config.out_path = opts.out.clone();
    if let Err(e) = config.validate() {
        return report(e);
    }
    match train_files(&config, opts.no_timing) {
        Ok(line) => {
            println!("{line}");
            EXIT_OK
        }
        Err(e) => report(e),
    }
}

fn load(path: &Path, task: Task) -> Result<Dataset> {
    let file = File::open(path)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    data::parse_libsvm(BufReader::new(file), task, None)
}

fn train_files(config: &RunConfig, no_timing: bool) -> Result<String> {
    let train_path = config
        .train_path
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("--train is required".into()))?;
    let mut train = load(train_path, config.task)?;
    let mut test = config
        .test_path
        .as_deref()
        .map(|p| load(p, config.task))
        .transpose()?;
    let dim = [
        Some(train.dim()),
        test.as_ref().map(Dataset::dim),
        config.dim,
    ]
    .into_iter()
    .flatten()
    .max()
    .unwrap_or(0);
    if let Some(d) = config.dim {
        if d < dim {
            return Err(Error::InvalidArgument(format!(
                "--dim {d} is below the largest feature index {dim}"
            )));
        }
    }
    train = train.with_dim(dim)?;
    test = test.map(|t| t.with_dim(dim)).transpose()?;

    let (model, mut trace) = train_model(config, &train, test.as_ref())?;
    if no_timing {
        let mut zeroed = TrainTrace::new();
        for row in trace.rows() {
            zeroed.push(metrics::TraceRow {
                elapsed_secs: 0.0,
                ..*row
            });
        }
        trace = zeroed;
    }
    if let Some(out) = &config.out_path {
        let mut w = BufWriter::new(File::create(out)?);
        metrics::write_trace(&trace, &mut w)?;
        w.flush()?;
    }
    summary(config, &model, &train, test.as_ref())
}

/// Dispatches to the serial trainer or the engine according to `config.mode`.
pub fn train_model(
    config: &RunConfig,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<(FmModel, TrainTrace)> {
    match config.mode {
        Mode::Dsfacto => engine::run(config, train, test),
        Mode::SerialBatch | Mode::SerialIncremental => serial::train(config, train, test),
    }
}

fn summary(
    config: &RunConfig,
    model: &FmModel,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<String> {
    let name = match config.task {
        Task::Regression => "rmse",
        Task::Classification => "accuracy",
    };
    let objective = crate::fm::objective(model, train.examples(), &config.hyperparams())?;
    let mut line = format!(
        "epochs={} objective={} train_{name}={}",
        config.epochs,
        format_sig6(objective),
        format_sig6(metrics::evaluate(model, train)?)
    );
    if let Some(t) = test {
        line.push_str(&format!(
            " test_{name}={}",
            format_sig6(metrics::evaluate(model, t)?)
        ));
    }
    Ok(line)
}

/// `dsfacto bench`. `argv[0]` is the subcommand name.
pub fn cmd_bench(argv: &[String]) -> i32 {
    let opts: BenchOpts = match parse_args(argv) {
        Ok(o) => o,
        Err(code) => return code,
    };
    let config = opts.flags.config(Mode::Dsfacto, 1);
    if let Err(e) = config.validate() {
        return report(e);
    }
    if opts.workers.is_empty() || opts.workers.contains(&0) {
        return report(Error::InvalidArgument(
            "--workers needs a list of positive counts".into(),
        ));
    }
    let train = match &opts.train {
        Some(p) => load(p, config.task).and_then(|d| match config.dim {
            Some(dim) => d.with_dim(dim),
            None => Ok(d),
        }),
        None => data::synth_fm(&SynthSpec {
            n: opts.synth_n,
            dim: opts.synth_dim,
            k: config.k,
            density: opts.synth_density,
            noise_sd: 0.1,
            task: config.task,
            seed: config.seed,
        })
        .map(|(d, _)| d),
    };
    let train = match train {
        Ok(t) => t,
        Err(e) => return report(e),
    };
    let rows = match bench(&config, &train, &opts.workers) {
        Ok(r) => r,
        Err(e) => return report(e),
    };
    let written = match &opts.out {
        Some(p) => File::create(p)
            .map_err(Error::from)
            .and_then(|f| write_bench(&rows, BufWriter::new(f))),
        None => write_bench(&rows, io::stdout().lock()),
    };
    match written {
        Ok(()) => EXIT_OK,
        Err(e) => report(e),
    }
}

/// One benchmark measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub workers: usize,
    pub elapsed_secs: f64,
    pub speedup: f64,
}

/// Times the training loop at each worker count. The clock covers epochs
/// 1..=T only, not loading or the initial accumulate pass.
pub fn bench(config: &RunConfig, train: &Dataset, workers: &[usize]) -> Result<Vec<BenchRow>> {
    let mut times = Vec::with_capacity(workers.len());
    for &p in workers {
        let c = RunConfig {
            workers: p,
            mode: Mode::Dsfacto,
            ..config.clone()
        };
        let (_, trace) = engine::run(&c, train, None)?;
        times.push((p, trace.last().map_or(0.0, |r| r.elapsed_secs)));
    }
    let base = times
        .iter()
        .find(|(p, _)| *p == 1)
        .or(times.first())
        .map(|&(_, t)| t)
        .unwrap_or(0.0);
    Ok(times
        .into_iter()
        .map(|(p, t)| BenchRow {
            workers: p,
            elapsed_secs: t,
            speedup: if t > 0.0 { base / t } else { 1.0 },
        })
        .collect())
}

pub fn write_bench<W: Write>(rows: &[BenchRow], mut out: W) -> Result<()> {
    writeln!(out, "workers,elapsed_secs,speedup")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{}",
            r.workers,
            format_sig6(r.elapsed_secs),
            format_sig6(r.speedup)
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(&args("dsfacto")), EXIT_CONFIG);
        assert_eq!(run(&args("dsfacto frobnicate")), EXIT_CONFIG);
        assert_eq!(cmd_train(&args("train --epochs 3")), EXIT_CONFIG);
        assert_eq!(cmd_train(&args("train --train x --bogus")), EXIT_CONFIG);
        assert_eq!(cmd_train(&args("train --train x --eta 0")), EXIT_CONFIG);
        assert_eq!(cmd_train(&args("train --train x --k 0")), EXIT_CONFIG);
        assert_eq!(cmd_bench(&args("bench --workers 1,0")), EXIT_CONFIG);
    }

    #[test]
    fn missing_file_is_a_runtime_error() {
        assert_eq!(
            cmd_train(&args("train --train /nonexistent/train.svm")),
            EXIT_RUNTIME
        );
    }

    #[test]
    fn flags_map_onto_config() {
        let o = TrainOpts::try_parse_from(args(
            "train --train a --task classification --routing random --lambda-w 0.5 --workers 3",
        ))
        .unwrap();
        let c = o.flags.config(Mode::Dsfacto, o.workers);
        assert_eq!(c.loss, LossKind::Logistic);
        assert_eq!(c.routing, Routing::Random);
        assert_eq!(c.lambda_w, 0.5);
        assert_eq!(c.workers, 3);
        assert_eq!(c.k, 4);
    }

    #[test]
    fn single_entry_bench() {
        let (ds, _) = data::synth_fm(&SynthSpec {
            n: 30,
            dim: 10,
            k: 2,
            density: 0.3,
            noise_sd: 0.1,
            task: Task::Regression,
            seed: 3,
        })
        .unwrap();
        let c = RunConfig {
            k: 2,
            epochs: 2,
            ..RunConfig::default()
        };
        let rows = bench(&c, &ds, &[1]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].speedup, 1.0);
        let mut buf = Vec::new();
        write_bench(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.ends_with(",1\n"));
    }
}
