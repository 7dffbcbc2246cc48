//! The `rqgmm` command-line frontend.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad data or file, 3 a fit that
//! failed on valid input.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Deserialize;

use crate::error::Error;
use crate::harness::compare::levels_for;
use crate::harness::{compare, generate, SynthSpec};
use crate::io::{
    export_features, read_embeddings, read_id_table, read_model, write_embeddings, write_id_table, write_model, Dtype,
    EmbeddingFile, IdTable, MissingPolicy,
};
use crate::kmeans::FitConfig;
use crate::rq::{encode_batch, evaluate, fit, Level, Method, RqModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_FIT: i32 = 3;

const DEFAULT_LEVELS: usize = 2;
const DEFAULT_K: usize = 128;

#[derive(Parser, Debug)]
#[command(name = "rqgmm", version, about = "Residual quantization of embeddings into semantic IDs")]
struct Cli {
    /// Worker threads for data-parallel steps. Results do not depend on it.
    #[arg(long, global = true, env = "RQGMM_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    /// TOML file with default values for fit options; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Increase log detail on standard error (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic embeddings with known cluster structure.
    Synth(SynthArgs),
    /// Fit a quantizer and write a model file.
    Fit(FitArgs),
    /// Assign semantic IDs to embeddings.
    Encode(EncodeArgs),
    /// Report reconstruction RMSE and code utilization.
    Eval(EvalArgs),
    /// Compare methods over several seeds of synthetic data.
    Compare(CompareArgs),
    /// Summarize a model file.
    Inspect(InspectArgs),
    /// Append semantic-ID columns to a feature table.
    Export(ExportArgs),
}

#[derive(Args, Debug, Clone)]
struct SpecArgs {
    #[arg(long, default_value_t = SynthSpec::default().n)]
    n: usize,
    #[arg(long, default_value_t = SynthSpec::default().d)]
    d: usize,
    #[arg(long, default_value_t = SynthSpec::default().coarse_k)]
    coarse_k: usize,
    #[arg(long, default_value_t = SynthSpec::default().fine_k)]
    fine_k: usize,
    #[arg(long, default_value_t = SynthSpec::default().coarse_scale)]
    coarse_scale: f64,
    #[arg(long, default_value_t = SynthSpec::default().fine_scale)]
    fine_scale: f64,
    #[arg(long, default_value_t = SynthSpec::default().noise_sigma)]
    noise_sigma: f64,
    /// Use the same isotropic noise for every cluster.
    #[arg(long)]
    homoscedastic: bool,
}

impl SpecArgs {
    fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            n: self.n,
            d: self.d,
            coarse_k: self.coarse_k,
            fine_k: self.fine_k,
            coarse_scale: self.coarse_scale,
            fine_scale: self.fine_scale,
            noise_sigma: self.noise_sigma,
            heteroscedastic: !self.homoscedastic,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "f32")]
    dtype: DtypeArg,
    /// Store item keys `item0`, `item1`, ... alongside the vectors.
    #[arg(long)]
    with_ids: bool,
    /// Embedding file to write.
    #[arg(short, long)]
    out: PathBuf,
    /// Write the generating labels and centers as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

/// Fit options shared by `fit` and `compare`. `None` means "not given on
/// the command line"; the config file and then built-in defaults apply.
#[derive(Args, Debug)]
struct FitOpts {
    /// rq-gmm, rq-kmeans or flat-vq [default: rq-gmm]
    #[arg(long)]
    method: Option<Method>,
    /// Number of residual levels [default: 2]
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    levels: Option<u32>,
    /// Codes per level [default: 128]
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    k: Option<u32>,
    /// Iteration cap per level [default: 30]
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    max_iters: Option<u32>,
    /// Relative objective change that counts as converged [default: 1e-6]
    #[arg(long)]
    tol: Option<f64>,
    /// Keep empty clusters and starved components instead of reseeding them.
    #[arg(long)]
    no_reseed: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Training embeddings.
    #[arg(short, long)]
    input: PathBuf,
    /// Model file to write.
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    opts: FitOpts,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(short, long)]
    model: PathBuf,
    #[arg(short, long)]
    input: PathBuf,
    /// ID table to write; standard output when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(short, long)]
    model: PathBuf,
    #[arg(short, long)]
    input: PathBuf,
    /// Also write the report as JSON to this path.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    opts: FitOpts,
    /// Methods to run (comma separated) [default: all]
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
    /// Seeds 0..N-1.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    /// Per-cell table.
    #[arg(long)]
    tsv: Option<PathBuf>,
    /// Full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    model: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MissingArg {
    Fail,
    Fill,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// ID table from `encode`.
    #[arg(long)]
    ids: PathBuf,
    /// Tab-separated feature table whose first column is `item_key`.
    #[arg(long)]
    base: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// What to write for items without an ID.
    #[arg(long, value_enum, default_value = "fail")]
    missing: MissingArg,
}

/// Values a `--config` file may set.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    method: Option<Method>,
    levels: Option<usize>,
    k: Option<usize>,
    max_iters: Option<usize>,
    tol: Option<f64>,
    seed: Option<u64>,
    reseed_empty: Option<bool>,
    threads: Option<usize>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();

    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            let mut msg = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                if !msg.contains(&s.to_string()) {
                    let _ = write!(msg, ": {s}");
                }
                source = s.source();
            }
            eprintln!("error: {msg}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    if e.is_fit_failure() {
        EXIT_FIT
    } else {
        EXIT_DATA
    }
}

fn execute(cli: Cli) -> CmdResult {
    let config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e).in_file(path))?;
            toml::from_str::<ConfigFile>(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };
    let threads = cli.threads.map(|t| t as usize).or(config.threads);
    if threads == Some(0) {
        return Err(Failure::Usage("threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit_cmd(a, &config),
        Command::Encode(a) => encode_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Compare(a) => compare_cmd(a, &config),
        Command::Inspect(a) => inspect(a),
        Command::Export(a) => export(a),
    })
}

struct Resolved {
    method: Method,
    levels: usize,
    k: usize,
    cfg: FitConfig,
}

fn resolve(opts: &FitOpts, seed: Option<u64>, config: &ConfigFile) -> Result<Resolved, Failure> {
    let defaults = FitConfig::default();
    let method = opts.method.or(config.method).unwrap_or(Method::RqGmm);
    let levels_given = opts.levels.map(|v| v as usize).or(config.levels);
    let levels = levels_given.unwrap_or(DEFAULT_LEVELS);
    let k = opts.k.map(|v| v as usize).or(config.k).unwrap_or(DEFAULT_K);
    let cfg = FitConfig {
        max_iters: opts.max_iters.map(|v| v as usize).or(config.max_iters).unwrap_or(defaults.max_iters),
        tol: opts.tol.or(config.tol).unwrap_or(defaults.tol),
        seed: seed.or(config.seed).unwrap_or(defaults.seed),
        reseed_empty: !opts.no_reseed && config.reseed_empty.unwrap_or(defaults.reseed_empty),
    };
    if levels == 0 || k == 0 {
        return Err(Failure::Usage("levels and k must be at least 1".into()));
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if method == Method::FlatVq && levels_given.is_some_and(|l| l != 1) {
        warn!("flat-vq always uses a single level; ignoring levels={levels}");
    }
    Ok(Resolved {
        method,
        levels: levels_for(method, levels),
        k,
        cfg,
    })
}

fn stdout_write(bytes: &[u8]) -> CmdResult {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes).and_then(|_| out.flush()).map_err(Error::Io)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| Error::Io(e).in_file(path))?;
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn synth(a: SynthArgs) -> CmdResult {
    let spec = a.spec.spec(a.seed);
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (matrix, truth) = generate(&spec)?;
    let dtype = match a.dtype {
        DtypeArg::F32 => Dtype::F32,
        DtypeArg::F64 => Dtype::F64,
    };
    let n = matrix.n();
    let mut file = EmbeddingFile::new(matrix, dtype);
    if a.with_ids {
        file = file.with_ids((0..n).map(|i| format!("item{i}")).collect())?;
    }
    write_embeddings(&file, &a.out)?;
    if let Some(path) = &a.truth {
        write_text(path, &to_json(&truth))?;
    }
    info!("wrote {n} x {} embeddings to {}", spec.d, a.out.display());
    Ok(())
}

fn fit_cmd(a: FitArgs, config: &ConfigFile) -> CmdResult {
    let r = resolve(&a.opts, a.seed, config)?;
    let data = read_embeddings(&a.input)?.matrix;
    info!(
        "fitting {} with L={} K={} on {} x {}",
        r.method,
        r.levels,
        r.k,
        data.n(),
        data.d()
    );
    let model = fit(&data, r.method, r.levels, r.k, &r.cfg).map_err(|e| e.in_file(&a.input))?;
    write_model(&model, &a.out)?;
    stdout_write(to_json(&model.fit_report).as_bytes())
}

fn encode_cmd(a: EncodeArgs) -> CmdResult {
    let model = read_model(&a.model)?;
    let file = read_embeddings(&a.input)?;
    let ids = encode_batch(&file.matrix, &model).map_err(|e| e.in_file(&a.input))?;
    let table = IdTable::new(file.keys(), ids)?;
    match &a.out {
        Some(path) => write_id_table(&table, path)?,
        None => stdout_write(table.to_text()?.as_bytes())?,
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> CmdResult {
    let model = read_model(&a.model)?;
    let data = read_embeddings(&a.input)?.matrix;
    let report = evaluate(&data, &model).map_err(|e| e.in_file(&a.input))?;
    let mut text = format!(
        "method {}  L={}  K={}  n={}\nrmse {:.6}\n",
        model.method(),
        model.num_levels(),
        model.k(),
        report.n_samples,
        report.rmse
    );
    for (l, u) in report.utilization_per_level.iter().enumerate() {
        let _ = writeln!(text, "level {} utilization {:.4}", l + 1, u);
    }
    text.push_str(&to_json(&report));
    if let Some(path) = &a.json {
        write_text(path, &to_json(&report))?;
    }
    stdout_write(text.as_bytes())
}

fn compare_cmd(a: CompareArgs, config: &ConfigFile) -> CmdResult {
    let r = resolve(&a.opts, None, config)?;
    let spec = a.spec.spec(0);
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let methods = if a.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        a.methods.clone()
    };
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let levels = a.opts.levels.map(|v| v as usize).or(config.levels).unwrap_or(DEFAULT_LEVELS);
    let report = compare(&spec, &methods, levels, r.k, &seeds, &r.cfg)?;
    if let Some(path) = &a.tsv {
        write_text(path, &report.to_tsv())?;
    }
    if let Some(path) = &a.json {
        write_text(path, &to_json(&report))?;
    }
    stdout_write(report.render_summary().as_bytes())
}

/// Entropy in nats of a distribution given by non-negative weights.
fn entropy(weights: impl Iterator<Item = f64> + Clone) -> f64 {
    let total: f64 = weights.clone().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -weights
        .filter(|&w| w > 0.0)
        .map(|w| {
            let p = w / total;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn describe(model: &RqModel) -> String {
    let mut out = format!(
        "method {}\nlevels {}\nK {}\nD {}\ntrained on {} samples (seed {}, max_iters {}, tol {:e})\n",
        model.method(),
        model.num_levels(),
        model.k(),
        model.dim(),
        model.fit_report.n_samples,
        model.fit_report.seed,
        model.fit_report.max_iters,
        model.fit_report.tol
    );
    let _ = writeln!(
        out,
        "{:<6} {:>4} {:>10} {:>12} {:>11} {:>10} {:>9}",
        "level", "K", "iters", "entropy", "max entropy", "util", "rmse"
    );
    for (l, (level, rep)) in model.levels().iter().zip(&model.fit_report.levels).enumerate() {
        let h = match level {
            Level::Gmm(g) => entropy(g.weights().iter().copied()),
            Level::Kmeans(_) => entropy(rep.histogram.iter().map(|&c| c as f64)),
        };
        let _ = writeln!(
            out,
            "{:<6} {:>4} {:>10} {:>12.4} {:>11.4} {:>10.4} {:>9.5}",
            l + 1,
            level.k(),
            rep.iterations,
            h,
            (level.k() as f64).ln(),
            rep.utilization,
            rep.rmse
        );
    }
    out.push_str("entropy: of mixture weights (rq-gmm) or training code counts (k-means levels)\n");
    out
}

fn inspect(a: InspectArgs) -> CmdResult {
    let model = read_model(&a.model)?;
    stdout_write(describe(&model).as_bytes())
}

fn export(a: ExportArgs) -> CmdResult {
    let ids = read_id_table(&a.ids)?;
    let base = std::fs::read_to_string(&a.base).map_err(|e| Error::Io(e).in_file(&a.base))?;
    let policy = match a.missing {
        MissingArg::Fail => MissingPolicy::Fail,
        MissingArg::Fill => MissingPolicy::Fill,
    };
    let out = export_features(&ids, &base, policy).map_err(|e| e.in_file(&a.base))?;
    write_text(&a.out, &out)
}
