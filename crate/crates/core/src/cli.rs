//! Command-line front end: `explain`, `evaluate`, `ablate` and `serve`.

use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::corpus::{ablate, ensure_dir, evaluate_corpus, CorpusOptions};
use crate::error::{Error, Result};
use crate::oracle::{wire, ModelOracle, OracleSpec, ScoreSemantics, ToyVit, ToyVitConfig};
use crate::pipeline::{explain, ExplainConfig, Explanation, MaskMode};
use crate::raster::{encode_png, grayscale_png, load_image, overlay, write_vcx1};
use crate::scoring::ScoreMode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "vitcx",
    version,
    about = "Saliency maps for vision transformers from patch-embedding masks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Explain one image and write the saliency map and a JSON sidecar.
    Explain(ExplainArgs),
    /// Explain and score every image of a manifest.
    Evaluate(CorpusArgs),
    /// Evaluate a manifest under every ablation variant.
    Ablate(CorpusArgs),
    /// Serve the built-in toy oracle over the framed protocol.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// builtin-toy, subprocess:<command> or tcp:<host:port>
    #[arg(long, env = "VITCX_ORACLE", default_value = "builtin-toy")]
    pub oracle: String,
    /// Block whose embeddings become masks (default: the last block).
    #[arg(long, env = "VITCX_BLOCK_INDEX")]
    pub block_index: Option<usize>,
    /// Cosine-distance threshold for merging masks.
    #[arg(long, env = "VITCX_DELTA", default_value_t = 0.1)]
    pub delta: f64,
    /// Standard deviation of the debiasing noise.
    #[arg(long, env = "VITCX_SIGMA", default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, env = "VITCX_MASK_MODE", value_enum, default_value_t = MaskMode::Vit)]
    pub mask_mode: MaskMode,
    #[arg(long, env = "VITCX_NUM_RANDOM_MASKS", default_value_t = 5000)]
    pub num_random_masks: usize,
    #[arg(long, env = "VITCX_RANDOM_GRID", default_value_t = 7)]
    pub random_grid: usize,
    #[arg(long, env = "VITCX_RANDOM_KEEP_PROB", default_value_t = 0.5)]
    pub random_keep_prob: f64,
    #[arg(long, env = "VITCX_SCORE_MODE", value_enum, default_value_t = ScoreMode::Debiased)]
    pub score_mode: ScoreMode,
    /// Pixel-coverage-bias correction.
    #[arg(long, env = "VITCX_PCB", value_enum, default_value_t = Toggle::On)]
    pub pcb: Toggle,
    #[arg(long, env = "VITCX_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Deletion / insertion curve steps.
    #[arg(long, env = "VITCX_STEPS", default_value_t = 100)]
    pub steps: usize,
    /// Class to explain (default: the oracle's top-1 prediction).
    #[arg(long, env = "VITCX_TARGET_CLASS")]
    pub target_class: Option<usize>,
    #[arg(long, env = "VITCX_OUTPUT_DIR", default_value = "vitcx-out")]
    pub output_dir: PathBuf,
    /// Masks per oracle request.
    #[arg(long, env = "VITCX_BATCH_SIZE", default_value_t = 64)]
    pub batch_size: usize,
}

impl RunArgs {
    pub fn explain_config(&self) -> ExplainConfig {
        ExplainConfig {
            block_index: self.block_index,
            delta: self.delta,
            sigma: self.sigma,
            mask_mode: self.mask_mode,
            num_random_masks: self.num_random_masks,
            random_grid: self.random_grid,
            random_keep_prob: self.random_keep_prob,
            score_mode: self.score_mode,
            pcb: self.pcb == Toggle::On,
            seed: self.seed,
            target_class: self.target_class,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Input image (PNG or JPEG).
    pub image: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Worker threads, each with its own oracle connection.
    #[arg(long, env = "VITCX_JOBS")]
    pub jobs: Option<usize>,
    /// JSON-lines manifest: {"image": path, "target_class"?, "boxes"?, "id"?}
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// `stdio` or `tcp:<host:port>`
    #[arg(long, default_value = "stdio")]
    pub listen: String,
    #[arg(long, default_value_t = 7)]
    pub weight_seed: u64,
    #[arg(long, value_enum, default_value_t = SemanticsArg::Softmax)]
    pub score_semantics: SemanticsArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SemanticsArg {
    Softmax,
    Logit,
}

/// Map a failure to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_oracle_failure() {
        EXIT_ORACLE
    } else if err.is_io_failure() {
        EXIT_IO
    } else {
        EXIT_USAGE
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Explain(args) => run_explain(&args).map(|_| ()),
        Command::Evaluate(args) => run_evaluate(&args),
        Command::Ablate(args) => run_ablate(&args),
        Command::Serve(args) => run_serve(&args),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot write {}: {e}", path.display()),
        ))
    })
}

/// Write the saliency artifacts of one explanation into `dir`.
pub fn write_explanation(
    dir: &Path,
    image_path: &Path,
    image: &crate::types::Image,
    cfg: &ExplainConfig,
    explanation: &Explanation,
) -> Result<()> {
    ensure_dir(dir)?;
    let map = &explanation.saliency;
    write_vcx1(&dir.join("saliency.vcx"), map.height(), map.width(), map.values())?;
    write_file(&dir.join("saliency.png"), &grayscale_png(map)?)?;
    write_file(&dir.join("overlay.png"), &encode_png(&overlay(image, map)?.into())?)?;

    let dec = &explanation.decomposition;
    let sidecar = json!({
        "image": image_path.display().to_string(),
        "target_class": explanation.target_class,
        "K": explanation.num_masks(),
        "mu": dec.mu,
        "score_variance": dec.variance,
        "overdetermined": dec.is_overdetermined(),
        "scores": explanation.scores,
        "mask_mode": cfg.mask_mode,
        "score_mode": cfg.score_mode,
        "pcb": cfg.pcb,
        "delta": cfg.delta,
        "sigma": cfg.sigma,
        "seed": cfg.seed,
        "timing": explanation.timing,
    });
    write_file(&dir.join("explain.json"), &serde_json::to_vec_pretty(&sidecar)?)
}

pub fn run_explain(args: &ExplainArgs) -> Result<Explanation> {
    let spec: OracleSpec = args.run.oracle.parse()?;
    let cfg = args.run.explain_config();
    cfg.validate()?;
    let oracle = spec.connect()?;
    let info = oracle.info()?;
    let (image, _) = load_image(&args.image, info.input_height, info.input_width)?;
    let explanation = explain(oracle.as_ref(), &image, &cfg)?;
    write_explanation(&args.run.output_dir, &args.image, &image, &cfg, &explanation)?;
    log::info!(
        "explained class {} with {} masks in {:.3}s",
        explanation.target_class,
        explanation.num_masks(),
        explanation.timing.total_seconds
    );
    Ok(explanation)
}

fn corpus_options(args: &CorpusArgs) -> Result<CorpusOptions> {
    let default_jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    Ok(CorpusOptions {
        oracle: args.run.oracle.parse()?,
        explain: args.run.explain_config(),
        steps: args.run.steps,
        jobs: args.jobs.unwrap_or(default_jobs),
    })
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.push(b'\n');
    }
    write_file(path, &out)
}

pub fn run_evaluate(args: &CorpusArgs) -> Result<()> {
    let opts = corpus_options(args)?;
    let outcome = evaluate_corpus(&args.manifest, &opts)?;
    let dir = &args.run.output_dir;
    ensure_dir(dir)?;
    write_jsonl(&dir.join("reports.jsonl"), &outcome.reports)?;
    write_file(&dir.join("summary.json"), &serde_json::to_vec_pretty(&outcome.summary)?)?;
    let s = &outcome.summary;
    println!(
        "images {}  skipped {}  Del {}  Ins {}  PG {}  K {}",
        s.num_images,
        s.skipped,
        fmt_opt(s.mean_deletion_auc),
        fmt_opt(s.mean_insertion_auc),
        fmt_opt(s.pointing_game.accuracy),
        fmt_opt(s.mean_k),
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

pub fn run_ablate(args: &CorpusArgs) -> Result<()> {
    let opts = corpus_options(args)?;
    let (rows, reports) = ablate(&args.manifest, &opts)?;
    let dir = &args.run.output_dir;
    ensure_dir(dir)?;
    for (row, reports) in rows.iter().zip(&reports) {
        write_jsonl(&dir.join(format!("{}.reports.jsonl", row.variant.name)), reports)?;
    }
    write_file(&dir.join("ablation.json"), &serde_json::to_vec_pretty(&rows)?)?;

    println!(
        "{:<10} {:<16} {:<9} {:<4} {:>14} {:>7} {:>7} {:>7} {:>14}",
        "variant", "masks", "impact", "pcb", "K", "Del", "Ins", "PG", "time (s)"
    );
    for row in &rows {
        let s = &row.summary;
        let v = &row.variant;
        println!(
            "{:<10} {:<16} {:<9} {:<4} {:>14} {:>7} {:>7} {:>7} {:>14}",
            v.name,
            format!("{:?}", v.mask_mode).to_lowercase(),
            format!("{:?}", v.score_mode).to_lowercase(),
            if v.pcb { "on" } else { "off" },
            format!("{} ± {}", fmt_opt(s.mean_k), fmt_opt(s.std_k)),
            fmt_opt(s.mean_deletion_auc),
            fmt_opt(s.mean_insertion_auc),
            fmt_opt(s.pointing_game.accuracy),
            format!("{} ± {}", fmt_opt(s.mean_seconds), fmt_opt(s.std_seconds)),
        );
    }
    Ok(())
}

pub fn run_serve(args: &ServeArgs) -> Result<()> {
    let oracle = Arc::new(ToyVit::new(ToyVitConfig {
        weight_seed: args.weight_seed,
        score_semantics: match args.score_semantics {
            SemanticsArg::Softmax => ScoreSemantics::Softmax,
            SemanticsArg::Logit => ScoreSemantics::Logit,
        },
        ..Default::default()
    })?);
    if args.listen == "stdio" {
        let stdout = std::io::stdout();
        return wire::serve(oracle.as_ref(), std::io::stdin().lock(), stdout.lock());
    }
    let addr = args
        .listen
        .strip_prefix("tcp:")
        .ok_or_else(|| Error::InvalidArgument(format!("cannot listen on `{}`", args.listen)))?;
    let listener = TcpListener::bind(addr)?;
    // Announce the bound port so callers can pass `tcp:host:0`.
    writeln!(std::io::stderr(), "listening on {}", listener.local_addr()?)?;
    for stream in listener.incoming() {
        let stream = stream?;
        let oracle = Arc::clone(&oracle);
        std::thread::spawn(move || {
            let Ok(reader) = stream.try_clone() else { return };
            if let Err(e) = wire::serve(oracle.as_ref() as &dyn ModelOracle, reader, stream) {
                log::warn!("connection ended with error: {e}");
            }
        });
    }
    Ok(())
}
