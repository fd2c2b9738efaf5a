//! Command-line pipelines over the semkit library: corpus synthesis and
//! validation, tokenization statistics, codec and adapter training,
//! encode/decode round trips, decoding runs, and metric reports.
//! Subcommands compose through files only; every artifact embeds the
//! resolved configuration and seeds that produced it.

mod config;

use clap::{Parser, Subcommand, ValueEnum};
use config::RunConfig;
use semkit::corpus::{ingest_jsonl, read_jsonl_raw, split_corpus, synth_corpus, Corpus};
use semkit::decode::{
    decode_beam, decode_fsa, decode_top_p, invalidity_ratio_outcomes, ngram_fit,
    syntactic_failure_ratio, DecodeOutcome, Sampling, Scorer, UniformScorer,
};
use semkit::fsa::BranchProbs;
use semkit::metrics::{evaluate_run, EvalConfig};
use semkit::sem::{validate_sequence, Token};
use semkit::tokenize::{
    bpe_fit, compression_ratio, segment_sequence, segmentation_record, Compressor, Variant,
};
use semkit::vq::{
    load_checkpoint, save_checkpoint, train_adapters, train_vqvae, AdapterTrainConfig,
    CodecConfig, MockBackbone,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_VALIDATION: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<semkit::corpus::CorpusError> for CliError {
    fn from(e: semkit::corpus::CorpusError) -> Self {
        match e {
            semkit::corpus::CorpusError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Config(format!("{e:#}"))
    }
}

impl From<semkit::vq::VqError> for CliError {
    fn from(e: semkit::vq::VqError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "semkit", version, about = "Sketch-and-extrude sequence toolkit")]
struct Cli {
    /// Flat key-value config file (`section.key = value`); flags override.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Curve,
    Loop,
    Single,
    Bpe,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Fsa,
    TopP,
    Beam,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus: per-entry verdicts plus an invalidity summary.
    Validate {
        corpus: PathBuf,
        /// Verdicts JSONL destination (defaults to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus of grammar-valid sequences.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        budget: Option<usize>,
        /// Keep every model to a single sketch-extrusion pair.
        #[arg(long)]
        single_pair: bool,
        /// Also assign train/val/test splits with this seed.
        #[arg(long)]
        split_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a corpus into primitives, or fit/apply the BPE baseline.
    Tokenize {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// BPE merge budget.
        #[arg(long)]
        merges: Option<usize>,
        /// Print the compression-ratio comparison across all schemes.
        #[arg(long)]
        stats: bool,
        /// Segmentations JSONL (or BPE merges file) destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the vector-quantized codec; writes a checkpoint and loss CSV.
    TrainVq {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Align a trained codec with a frozen mock backbone.
    TrainAdapters {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mock_vocab: Option<usize>,
        #[arg(long)]
        d_tok: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode corpus models into backbone id sequences.
    Encode {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode backbone id sequences back into token sequences.
    Decode {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a decoding strategy over a scorer; emits JSONL decode records.
    Sample {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        /// `uniform` or `ngram:<order>` (requires --corpus to fit).
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate generated sequences against aligned truth sequences.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        cloud_points: Option<usize>,
        #[arg(long)]
        cloud_seed: Option<u64>,
    },
    /// Export the grammar automaton description as JSON.
    FsaJson {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(CliError::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_meta(out: &Path, config: &RunConfig) -> Result<(), CliError> {
    let meta = serde_json::json!({
        "schema_version": 1,
        "config": config.resolved_json(),
    });
    let path = out.with_extension(format!(
        "{}meta.json",
        out.extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    std::fs::write(path, serde_json::to_string_pretty(&meta).unwrap())?;
    Ok(())
}

fn load_corpus_strict(path: &Path) -> Result<Corpus, CliError> {
    let corpus = ingest_jsonl(path)?;
    if corpus.is_empty() {
        return Err(CliError::Config(format!(
            "{} holds no valid entries",
            path.display()
        )));
    }
    Ok(corpus)
}

fn cmd_validate(config: &mut RunConfig, corpus_path: &Path, out: Option<&Path>) -> Result<u8, CliError> {
    let entries = read_jsonl_raw(corpus_path)?;
    if entries.is_empty() {
        return Err(CliError::Config("empty corpus".to_string()));
    }
    let mut lines = String::new();
    let mut invalid = 0usize;
    for (id, tokens) in &entries {
        let report = validate_sequence(tokens);
        if !report.valid {
            invalid += 1;
        }
        lines.push_str(
            &serde_json::json!({
                "id": id,
                "valid": report.valid,
                "syntactic_error": report.error.map(|e| e.to_string()),
                "geometric_flags": report.geometric_flags,
            })
            .to_string(),
        );
        lines.push('\n');
    }
    write_or_print(out, &lines)?;
    let summary = serde_json::json!({
        "schema_version": 1,
        "config": config.resolved_json(),
        "total": entries.len(),
        "invalid": invalid,
        "ir_percent": 100.0 * invalid as f64 / entries.len() as f64,
    });
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(if invalid > 0 { EXIT_VALIDATION } else { 0 })
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    config: &mut RunConfig,
    seed: Option<u64>,
    n: Option<usize>,
    budget: Option<usize>,
    single_pair: bool,
    split_seed: Option<u64>,
    out: &Path,
) -> Result<u8, CliError> {
    let seed = config.resolve("synth.seed", seed, 0u64)?;
    let n = config.resolve("synth.n", n, 100usize)?;
    let budget = config.resolve("synth.budget", budget, 96usize)?;
    let single = config.resolve("synth.single_pair", single_pair.then_some(true), false)?;
    let probs = if single {
        BranchProbs::default().single_pair()
    } else {
        BranchProbs::default()
    };
    let mut corpus =
        synth_corpus(seed, n, budget, &probs).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(split_seed) = split_seed {
        let split_seed = config.resolve("split.seed", Some(split_seed), 0u64)?;
        split_corpus(&mut corpus, split_seed, semkit::corpus::DEFAULT_SPLIT_RATIOS)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let manifest =
            semkit::corpus::split_manifest(&corpus, split_seed, semkit::corpus::DEFAULT_SPLIT_RATIOS);
        std::fs::write(
            out.with_extension("splits.json"),
            serde_json::to_string_pretty(&manifest).unwrap(),
        )?;
    }
    std::fs::write(out, corpus.to_jsonl())?;
    write_meta(out, config)?;
    println!(
        "{}",
        serde_json::json!({
            "schema_version": 1,
            "config": config.resolved_json(),
            "written": corpus.len(),
            "out": out.display().to_string(),
        })
    );
    Ok(0)
}

fn cmd_tokenize(
    config: &mut RunConfig,
    corpus_path: &Path,
    variant: Option<VariantArg>,
    merges: Option<usize>,
    stats: bool,
    out: Option<&Path>,
) -> Result<u8, CliError> {
    let corpus = load_corpus_strict(corpus_path)?;
    let sequences = corpus.sequences();
    let merges = config.resolve("bpe.merges", merges, 1000usize)?;

    if stats {
        let bpe = bpe_fit(&sequences, merges).map_err(|e| CliError::Config(e.to_string()))?;
        let rows = [
            ("single", compression_ratio(&Compressor::Primitive(Variant::Single), &sequences)),
            ("loop", compression_ratio(&Compressor::Primitive(Variant::Loop), &sequences)),
            ("curve", compression_ratio(&Compressor::Primitive(Variant::Curve), &sequences)),
            ("bpe", compression_ratio(&Compressor::Bpe(&bpe), &sequences)),
            ("raw", compression_ratio(&Compressor::Raw, &sequences)),
        ];
        let mut table = serde_json::Map::new();
        println!("scheme  compression%");
        for (name, ratio) in rows {
            let ratio = ratio.map_err(|e| CliError::Config(e.to_string()))?;
            println!("{name:>6}  {ratio:.2}");
            table.insert(name.to_string(), serde_json::json!(ratio));
        }
        let summary = serde_json::json!({
            "schema_version": 1,
            "config": config.resolved_json(),
            "compression_percent": table,
        });
        if let Some(path) = out {
            std::fs::write(path, serde_json::to_string_pretty(&summary).unwrap())?;
        }
        return Ok(0);
    }

    let variant = variant.ok_or_else(|| {
        CliError::Config("--variant is required without --stats".to_string())
    })?;
    match variant {
        VariantArg::Bpe => {
            let bpe = bpe_fit(&sequences, merges).map_err(|e| CliError::Config(e.to_string()))?;
            write_or_print(out, &bpe.to_merges_text())?;
        }
        _ => {
            let variant = match variant {
                VariantArg::Curve => Variant::Curve,
                VariantArg::Loop => Variant::Loop,
                VariantArg::Single => Variant::Single,
                VariantArg::Bpe => unreachable!(),
            };
            let mut lines = String::new();
            for entry in &corpus.entries {
                let spans = segment_sequence(&entry.tokens, variant)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                lines.push_str(&segmentation_record(&entry.id, variant, &spans).to_string());
                lines.push('\n');
            }
            write_or_print(out, &lines)?;
        }
    }
    if let Some(path) = out {
        write_meta(path, config)?;
    }
    Ok(0)
}

fn cmd_train_vq(
    config: &mut RunConfig,
    corpus_path: &Path,
    seed: Option<u64>,
    epochs: Option<usize>,
    out: &Path,
    curves: Option<&Path>,
) -> Result<u8, CliError> {
    let seed = config.resolve("train.seed", seed, 0u64)?;
    let mut codec_config = CodecConfig::desk();
    codec_config.epochs = config.resolve("codec.epochs", epochs, codec_config.epochs)?;
    codec_config.d_model = config.resolve("codec.d_model", None, codec_config.d_model)?;
    codec_config.codebook_size =
        config.resolve("codec.codebook_size", None, codec_config.codebook_size)?;
    codec_config.learn_rate = config.resolve("codec.learn_rate", None, codec_config.learn_rate)?;
    codec_config.batch_size = config.resolve("codec.batch_size", None, codec_config.batch_size)?;
    codec_config.val_fraction =
        config.resolve("codec.val_fraction", None, codec_config.val_fraction)?;

    let corpus = load_corpus_strict(corpus_path)?;
    let (codec, report) = train_vqvae(&corpus.sequences(), &codec_config, seed)?;
    save_checkpoint(&codec, out)?;
    if let Some(curves_path) = curves {
        std::fs::write(curves_path, report.to_csv())?;
    }
    write_meta(out, config)?;
    println!(
        "{}",
        serde_json::json!({
            "schema_version": 1,
            "config": config.resolved_json(),
            "stopped_epoch": report.stopped_epoch,
            "final_exact_rate": report.final_exact_rate,
            "warnings": report.warnings,
            "checkpoint": out.display().to_string(),
        })
    );
    Ok(0)
}

fn cmd_train_adapters(
    config: &mut RunConfig,
    codec_path: &Path,
    seed: Option<u64>,
    mock_vocab: Option<usize>,
    d_tok: Option<usize>,
    out: &Path,
) -> Result<u8, CliError> {
    let mut codec = load_checkpoint(codec_path)?;
    let seed = config.resolve("adapters.seed", seed, 0u64)?;
    let mock_vocab = config.resolve(
        "adapters.mock_vocab",
        mock_vocab,
        4 * codec.config.codebook_size,
    )?;
    let d_tok = config.resolve("adapters.d_tok", d_tok, 256usize)?;
    let backbone = MockBackbone::seeded(mock_vocab, d_tok, seed);
    let (adapters, report) = train_adapters(&codec, &backbone, &AdapterTrainConfig::default(), seed)?;
    codec.adapters = Some(adapters);
    codec.backbone = Some(backbone);
    save_checkpoint(&codec, out)?;
    write_meta(out, config)?;
    println!(
        "{}",
        serde_json::json!({
            "schema_version": 1,
            "config": config.resolved_json(),
            "collision_rate": report.collision_rate,
            "initial_loss": report.initial_loss,
            "final_loss": report.final_loss,
            "checkpoint": out.display().to_string(),
        })
    );
    Ok(0)
}

fn cmd_encode(codec_path: &Path, corpus_path: &Path, out: &Path, config: &mut RunConfig) -> Result<u8, CliError> {
    let codec = load_checkpoint(codec_path)?;
    let corpus = load_corpus_strict(corpus_path)?;
    let mut lines = String::new();
    for entry in &corpus.entries {
        let model = semkit::sem::parse_model(&entry.tokens)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let ids = codec.cad_encode(&model)?;
        lines.push_str(&serde_json::json!({"id": entry.id, "ids": ids}).to_string());
        lines.push('\n');
    }
    std::fs::write(out, lines)?;
    write_meta(out, config)?;
    Ok(0)
}

fn cmd_decode(codec_path: &Path, ids_path: &Path, out: &Path, config: &mut RunConfig) -> Result<u8, CliError> {
    let codec = load_checkpoint(codec_path)?;
    let text = std::fs::read_to_string(ids_path)?;
    let mut lines = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        #[derive(serde::Deserialize)]
        struct IdLine {
            id: String,
            ids: Vec<u32>,
        }
        let record: IdLine = serde_json::from_str(line)
            .map_err(|_| CliError::Config(format!("ids line {} malformed", i + 1)))?;
        let model = codec.cad_decode(&record.ids)?;
        let tokens = semkit::sem::serialize_model(&model);
        let symbols: Vec<String> = tokens.iter().map(|t| t.symbol()).collect();
        lines.push_str(&serde_json::json!({"id": record.id, "tokens": symbols}).to_string());
        lines.push('\n');
    }
    std::fs::write(out, lines)?;
    write_meta(out, config)?;
    Ok(0)
}

fn build_scorer(
    spec: &str,
    corpus: Option<&Path>,
    alpha: f64,
) -> Result<Box<dyn Scorer + Send + Sync>, CliError> {
    if spec == "uniform" {
        return Ok(Box::new(UniformScorer::default()));
    }
    if let Some(order) = spec.strip_prefix("ngram:") {
        let order: usize = order
            .parse()
            .map_err(|_| CliError::Config(format!("bad scorer spec {spec}")))?;
        let corpus_path =
            corpus.ok_or_else(|| CliError::Config("ngram scorer needs --corpus".to_string()))?;
        let corpus = load_corpus_strict(corpus_path)?;
        return Ok(Box::new(ngram_fit(&corpus.sequences(), order, alpha)));
    }
    Err(CliError::Config(format!("unknown scorer {spec}")))
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample(
    config: &mut RunConfig,
    strategy: StrategyArg,
    scorer_spec: Option<String>,
    corpus: Option<&Path>,
    n: Option<usize>,
    seed: Option<u64>,
    max_len: Option<usize>,
    p: Option<f64>,
    width: Option<usize>,
    out: &Path,
) -> Result<u8, CliError> {
    let scorer_spec = config.resolve(
        "sample.scorer",
        scorer_spec,
        "uniform".to_string(),
    )?;
    let n = config.resolve("sample.n", n, 100usize)?;
    let seed = config.resolve("sample.seed", seed, 0u64)?;
    let max_len = config.resolve("sample.max_len", max_len, 256usize)?;
    let p = config.resolve("sample.p", p, 0.9f64)?;
    let width = config.resolve("sample.width", width, 4usize)?;
    let alpha = config.resolve("sample.alpha", None, 0.01f64)?;
    let scorer = build_scorer(&scorer_spec, corpus, alpha)?;

    let outcomes: Vec<DecodeOutcome> = (0..n)
        .map(|i| match strategy {
            StrategyArg::Fsa => decode_fsa(
                scorer.as_ref(),
                max_len,
                Sampling::Temperature(1.0),
                seed + i as u64,
            ),
            StrategyArg::TopP => decode_top_p(scorer.as_ref(), p, max_len, seed + i as u64),
            StrategyArg::Beam => decode_beam(scorer.as_ref(), width, max_len).outcome,
        })
        .collect();

    let mut lines = String::new();
    for (i, outcome) in outcomes.iter().enumerate() {
        let mut record = outcome.to_record();
        record["id"] = serde_json::json!(format!("{}-{i}", outcome.strategy));
        record["config"] = config.resolved_json();
        let symbols: Vec<String> = outcome.tokens.iter().map(|t| t.symbol()).collect();
        record["tokens"] = serde_json::json!(symbols);
        lines.push_str(&record.to_string());
        lines.push('\n');
    }
    std::fs::write(out, lines)?;
    write_meta(out, config)?;
    println!(
        "{}",
        serde_json::json!({
            "schema_version": 1,
            "config": config.resolved_json(),
            "n": n,
            "ir_percent": 100.0 * invalidity_ratio_outcomes(&outcomes),
            "syntactic_failure_percent": 100.0 * syntactic_failure_ratio(&outcomes),
            "out": out.display().to_string(),
        })
    );
    Ok(0)
}

fn cmd_eval(
    config: &mut RunConfig,
    generated: &Path,
    truth: &Path,
    out: Option<&Path>,
    resolution: Option<usize>,
    cloud_points: Option<usize>,
    cloud_seed: Option<u64>,
) -> Result<u8, CliError> {
    let generated: Vec<Vec<Token>> = read_jsonl_raw(generated)?
        .into_iter()
        .map(|(_, tokens)| tokens)
        .collect();
    let truth: Vec<Vec<Token>> = read_jsonl_raw(truth)?
        .into_iter()
        .map(|(_, tokens)| tokens)
        .collect();
    let eval_config = EvalConfig {
        voxel_resolution: config.resolve("eval.resolution", resolution, 64usize)?,
        cloud_points: config.resolve("eval.cloud_points", cloud_points, 2000usize)?,
        cloud_seed: config.resolve("eval.cloud_seed", cloud_seed, 0u64)?,
        jsd_resolution: config.resolve("eval.jsd_resolution", None, 28usize)?,
    };
    let report = evaluate_run(&generated, &truth, &eval_config)
        .map_err(|e| CliError::Config(e.to_string()))?;
    print!("{}", report.render_table());
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&report).unwrap())?;
        write_meta(path, config)?;
    }
    Ok(0)
}

fn run() -> Result<u8, CliError> {
    let cli = Cli::parse();
    let mut config = RunConfig::load(cli.config.as_deref()).map_err(CliError::from)?;
    match cli.command {
        Command::Validate { corpus, out } => cmd_validate(&mut config, &corpus, out.as_deref()),
        Command::Synth {
            seed,
            n,
            budget,
            single_pair,
            split_seed,
            out,
        } => cmd_synth(&mut config, seed, n, budget, single_pair, split_seed, &out),
        Command::Tokenize {
            corpus,
            variant,
            merges,
            stats,
            out,
        } => cmd_tokenize(&mut config, &corpus, variant, merges, stats, out.as_deref()),
        Command::TrainVq {
            corpus,
            seed,
            epochs,
            out,
            curves,
        } => cmd_train_vq(&mut config, &corpus, seed, epochs, &out, curves.as_deref()),
        Command::TrainAdapters {
            codec,
            seed,
            mock_vocab,
            d_tok,
            out,
        } => cmd_train_adapters(&mut config, &codec, seed, mock_vocab, d_tok, &out),
        Command::Encode { codec, corpus, out } => cmd_encode(&codec, &corpus, &out, &mut config),
        Command::Decode { codec, ids, out } => cmd_decode(&codec, &ids, &out, &mut config),
        Command::Sample {
            strategy,
            scorer,
            corpus,
            n,
            seed,
            max_len,
            p,
            width,
            out,
        } => cmd_sample(
            &mut config,
            strategy,
            scorer,
            corpus.as_deref(),
            n,
            seed,
            max_len,
            p,
            width,
            &out,
        ),
        Command::Eval {
            generated,
            truth,
            out,
            resolution,
            cloud_points,
            cloud_seed,
        } => cmd_eval(
            &mut config,
            &generated,
            &truth,
            out.as_deref(),
            resolution,
            cloud_points,
            cloud_seed,
        ),
        Command::FsaJson { out } => {
            let doc = semkit::fsa::export_json();
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&doc).unwrap())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Config(message)) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": "config", "message": message}})
            );
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Io(message)) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": "io", "message": message}})
            );
            ExitCode::from(EXIT_IO)
        }
    }
}
