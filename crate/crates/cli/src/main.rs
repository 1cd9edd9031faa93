//! `m2l` — the command-line front end: synthesize datasets, train captioning
//! models, generate captions, segment motions through the trained attention,
//! score captions and segmentations, and export plot-ready alignment tables.
//!
//! Every run that writes artifacts also writes a manifest echoing the fully
//! resolved configuration and seed, so any output can be regenerated
//! bit-for-bit from its manifest alone.
//!
//! Exit codes: 0 success, 2 usage or configuration problem, 3 missing or
//! unwritable file, 4 unparseable input, 5 unsupported checkpoint version.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use motion2lang::attention::{AttentionConfig, AttentionKind};
use motion2lang::data::{
    parse_dataset, synth_generate, write_dataset, MotionSample, Primitive, SynthConfig,
    Vocabulary, ALL_PRIMITIVES, EOS_WORD,
};
use motion2lang::decoder::{beam_decode, DEFAULT_LENGTH_NORM, DEFAULT_MAX_LEN};
use motion2lang::encoder::EncoderConfig;
use motion2lang::metrics::{
    bleu4_with, semantic_score, tokenize, EmbeddingProvider, FileEmbedding, HashEmbedding,
    Smoothing,
};
use motion2lang::model::{Model, ModelConfig};
use motion2lang::segmentation::{
    corpus_scores, language_segmentation, motion_segmentation, AlignedSample, LanguageSegments,
    MotionSegment, DEFAULT_THETA_GRID,
};
use motion2lang::training::{load_checkpoint, save_checkpoint, train, TrainingConfig};
use motion2lang::viz::{export, DEFAULT_SHARPEN};
use motion2lang::{Error, Result};

#[derive(Parser)]
#[command(
    name = "m2l",
    version,
    about = "Motion-to-language captioning with attention-based motion segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotated motion-caption dataset.
    Synth(SynthArgs),
    /// Train a captioning model and save a checkpoint.
    Train(TrainArgs),
    /// Caption samples with a trained model.
    Generate(GenerateArgs),
    /// Split motions into primitive intervals via the trained attention.
    Segment(SegmentArgs),
    /// Score inferred segmentations against dataset annotations.
    ScoreSeg(ScoreSegArgs),
    /// Score generated captions (BLEU@4 and embedding similarity).
    ScoreText(ScoreTextArgs),
    /// Export attention, trace, transparency, and segment tables as CSV.
    ExportAttn(ExportAttnArgs),
    /// Sweep per-frame encoder depths and widths sequentially.
    Grid(GridArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum EncoderArg {
    Gru,
    Bigru,
    Mlp,
    DeepMlp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum AttentionArg {
    Soft,
    Local,
    LocalRecurrent,
}

impl From<AttentionArg> for AttentionKind {
    fn from(a: AttentionArg) -> AttentionKind {
        match a {
            AttentionArg::Soft => AttentionKind::Soft,
            AttentionArg::Local => AttentionKind::Local,
            AttentionArg::LocalRecurrent => AttentionKind::LocalRecurrent,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SmoothingArg {
    None,
    AddOne,
}

#[derive(clap::Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 2)]
    min_primitives: usize,
    #[arg(long, default_value_t = 3)]
    max_primitives: usize,
    #[arg(long, default_value_t = 20.0)]
    fps: f64,
    /// Comma-separated primitive names; all seven when omitted.
    #[arg(long, value_delimiter = ',')]
    primitives: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path (one JSON sample per line).
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Serialize, Clone)]
struct ModelFlags {
    #[arg(long, value_enum, default_value = "gru")]
    encoder: EncoderArg,
    #[arg(long, value_enum, default_value = "soft")]
    attention: AttentionArg,
    /// Attention window half-width, in frames.
    #[arg(long = "D", default_value_t = 5)]
    window: usize,
    /// Gaussian radius of the window; D/2 when omitted.
    #[arg(long)]
    radius: Option<f64>,
    /// Window overlap fraction α; the position advances by ≥ (1−α)·2D.
    #[arg(long, default_value_t = 0.0)]
    overlap_alpha: f64,
    /// Zero attention outside the window instead of merely damping it.
    #[arg(long)]
    mask: bool,
    /// End windows at the position instead of centering on it.
    #[arg(long)]
    causal: bool,
    #[arg(long, default_value_t = 64)]
    embed: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Width of non-final per-frame encoder layers (mlp and deep-mlp).
    #[arg(long, default_value_t = 64)]
    width: usize,
}

#[derive(clap::Args, Serialize, Clone)]
struct TrainFlags {
    #[arg(long = "lr", default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long = "teacher-forcing", default_value_t = 0.5)]
    teacher_forcing: f64,
    /// Draw the forcing coin once per sequence instead of per step.
    #[arg(long)]
    per_sequence_forcing: bool,
    /// Length-normalization exponent of the training loss.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 5.0)]
    grad_clip: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Words rarer than this in the training captions map to the unknown id.
    #[arg(long, default_value_t = 1)]
    min_freq: u64,
}

#[derive(clap::Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    training: TrainFlags,
    /// Output directory (checkpoint.json, loss.csv, run.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Caption only the sample at this zero-based index.
    #[arg(long)]
    index: Option<usize>,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, default_value_t = DEFAULT_LENGTH_NORM)]
    length_norm: f64,
    /// Also write one JSON record per caption here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Serialize)]
struct SegmentArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated action words that delimit phrases; defaults to the
    /// synthetic vocabulary's action words.
    #[arg(long, value_delimiter = ',')]
    action_words: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    /// Output directory (segments.jsonl, run.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct ScoreSegArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    /// Also write the report here (prints to stdout regardless).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Serialize)]
struct ScoreTextArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, value_enum, default_value = "none")]
    smoothing: SmoothingArg,
    /// Sentence embedding table (JSONL); a hashed bag of words when omitted.
    #[arg(long)]
    embedding: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Serialize)]
struct ExportAttnArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Zero-based sample index to export.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    /// Transparency sharpening factor.
    #[arg(long, default_value_t = DEFAULT_SHARPEN)]
    sharpen: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    training: TrainFlags,
    #[command(flatten)]
    model: ModelFlags,
    /// Per-frame encoder depths to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 4])]
    depths: Vec<usize>,
    /// Per-frame encoder widths to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![64usize, 128, 256])]
    widths: Vec<usize>,
    /// Fraction of samples used for training; the rest score the sweep.
    #[arg(long, default_value_t = 0.9)]
    train_frac: f64,
    /// Output directory (grid.csv, one subdirectory per combination).
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(&a),
        Command::Generate(a) => cmd_generate(a),
        Command::Segment(a) => cmd_segment(a),
        Command::ScoreSeg(a) => cmd_score_seg(a),
        Command::ScoreText(a) => cmd_score_text(a),
        Command::ExportAttn(a) => cmd_export_attn(a),
        Command::Grid(a) => cmd_grid(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Io { .. } => 3,
                Error::Parse { .. } => 4,
                Error::CheckpointVersion { .. } => 5,
                Error::InvalidArgument(_) | Error::InvalidConfig(_) | Error::UnsupportedMode(_) => 2,
                _ => 1,
            })
        }
    }
}

fn write_manifest(path: &Path, command: &str, config: impl Serialize) -> Result<()> {
    let manifest = serde_json::json!({ "command": command, "config": config });
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidArgument(format!("manifest cannot serialize: {e}")))?;
    std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

/// Parse a dataset, warn about rejected lines, insist on at least one sample
/// and a single consistent frame width.
fn load_samples(path: &Path) -> Result<Vec<MotionSample>> {
    let (samples, rejections) = parse_dataset(path)?;
    for r in &rejections {
        eprintln!("warning: {}:{} skipped: {}", path.display(), r.line, r.reason);
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            location: path.display().to_string(),
            reason: "no valid samples".into(),
        });
    }
    let width = samples[0].width;
    if let Some(s) = samples.iter().find(|s| s.width != width) {
        return Err(Error::InvalidArgument(format!(
            "mixed frame widths: sample {} has {} while the first sample has {width}",
            s.id, s.width
        )));
    }
    Ok(samples)
}

fn model_config(flags: &ModelFlags, input_dim: usize, vocab_size: usize) -> ModelConfig {
    let encoder = match flags.encoder {
        EncoderArg::Gru => EncoderConfig::gru(input_dim, flags.hidden),
        EncoderArg::Bigru => EncoderConfig::bigru(input_dim, flags.hidden),
        EncoderArg::Mlp => EncoderConfig::mlp(input_dim, vec![flags.width, flags.hidden]),
        EncoderArg::DeepMlp => EncoderConfig::mlp(
            input_dim,
            vec![flags.width, flags.width, flags.width, flags.hidden],
        ),
    };
    let attention = AttentionConfig {
        kind: flags.attention.into(),
        window: flags.window,
        radius: flags.radius,
        overlap_alpha: flags.overlap_alpha,
        mask: flags.mask,
        causal: flags.causal,
    };
    ModelConfig {
        encoder,
        attention,
        vocab_size,
        embed_dim: flags.embed,
        decoder_hidden: flags.hidden,
    }
}

fn training_config(flags: &TrainFlags) -> TrainingConfig {
    TrainingConfig {
        learning_rate: flags.learning_rate,
        teacher_forcing_ratio: flags.teacher_forcing,
        per_sequence_forcing: flags.per_sequence_forcing,
        beta: flags.beta,
        batch_size: flags.batch,
        epochs: flags.epochs,
        seed: flags.seed,
        grad_clip: flags.grad_clip,
    }
}

fn train_samples_of(
    samples: &[MotionSample],
    vocab: &Vocabulary,
) -> Vec<motion2lang::training::TrainSample> {
    samples
        .iter()
        .map(|s| motion2lang::training::TrainSample {
            motion: s.frames_tensor(),
            targets: vocab.target_ids(&s.descriptions[0]),
        })
        .collect()
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let primitives = if args.primitives.is_empty() {
        ALL_PRIMITIVES.to_vec()
    } else {
        args.primitives
            .iter()
            .map(|n| Primitive::parse(n))
            .collect::<Result<Vec<_>>>()?
    };
    let cfg = SynthConfig {
        samples: args.samples,
        min_primitives: args.min_primitives,
        max_primitives: args.max_primitives,
        primitives,
        fps: args.fps,
    };
    let samples = synth_generate(&cfg, args.seed)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_dataset(&args.out, &samples)?;
    write_manifest(&manifest_sibling(&args.out), "synth", &args)?;
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn manifest_sibling(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let samples = load_samples(&args.data)?;
    let vocab = Vocabulary::build(&samples, args.training.min_freq);
    let cfg = model_config(&args.model, samples[0].width, vocab.len());
    let tcfg = training_config(&args.training);
    let mut model = Model::init(cfg, args.training.seed)?;
    let data = train_samples_of(&samples, &vocab);
    let report = train(&mut model, &data, &tcfg)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    save_checkpoint(&args.out.join("checkpoint.json"), &model, &vocab, Some(&tcfg))?;
    let mut loss_csv = String::from("epoch,loss\n");
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        loss_csv.push_str(&format!("{},{loss:.16e}\n", i + 1));
    }
    let loss_path = args.out.join("loss.csv");
    std::fs::write(&loss_path, loss_csv).map_err(|e| Error::io(&loss_path, e))?;
    write_manifest(&args.out.join("run.json"), "train", args)?;
    println!(
        "trained {} epochs on {} samples; final loss {:.6}",
        tcfg.epochs,
        data.len(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Caption one motion and strip the terminator off the word list.
fn caption(
    model: &Model,
    vocab: &Vocabulary,
    sample: &MotionSample,
    beam: usize,
    max_len: usize,
    length_norm: f64,
) -> Result<(motion2lang::decoder::GenerationResult, Vec<String>)> {
    let result = beam_decode(model, &sample.frames_tensor(), beam, max_len, length_norm)?
        .into_iter()
        .next()
        .expect("beam search returns at least one hypothesis");
    let mut words = vocab.decode(&result.tokens);
    if words.last().map(String::as_str) == Some(EOS_WORD) {
        words.pop();
    }
    Ok((result, words))
}

#[derive(Serialize)]
struct GenerationRecord {
    id: String,
    caption: String,
    tokens: Vec<usize>,
    score: f64,
    normalized_score: f64,
    positions: Vec<f64>,
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let (model, vocab, _) = load_checkpoint(&args.checkpoint)?;
    let samples = load_samples(&args.data)?;
    let picked = pick(&samples, args.index)?;
    let mut records = Vec::with_capacity(picked.len());
    for sample in picked {
        let (result, words) = caption(
            &model,
            &vocab,
            sample,
            args.beam,
            args.max_len,
            args.length_norm,
        )?;
        let text = words.join(" ");
        println!("{}\t{}", sample.id, text);
        records.push(GenerationRecord {
            id: sample.id.clone(),
            caption: text,
            tokens: result.tokens.clone(),
            score: result.score,
            normalized_score: result.normalized_score,
            positions: result.trace.positions.clone(),
        });
    }
    if let Some(out) = &args.out {
        let mut body = String::new();
        for r in &records {
            body.push_str(&serde_json::to_string(r).expect("record serializes"));
            body.push('\n');
        }
        std::fs::write(out, body).map_err(|e| Error::io(out, e))?;
        write_manifest(&manifest_sibling(out), "generate", &args)?;
    }
    Ok(())
}

fn pick(samples: &[MotionSample], index: Option<usize>) -> Result<Vec<&MotionSample>> {
    match index {
        None => Ok(samples.iter().collect()),
        Some(i) => samples
            .get(i)
            .map(|s| vec![s])
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "sample index {i} out of range for {} samples",
                    samples.len()
                ))
            }),
    }
}

fn require_windows(model: &Model) -> Result<()> {
    if !model.config.attention.kind.is_local() {
        return Err(Error::UnsupportedMode(
            "soft attention yields no alignment windows; train with --attention local or local-recurrent".into(),
        ));
    }
    Ok(())
}

fn default_action_words() -> Vec<String> {
    let mut words: Vec<String> = ALL_PRIMITIVES
        .iter()
        .map(|p| p.action_word().to_string())
        .collect();
    words.dedup();
    words
}

#[derive(Serialize)]
struct SegmentRecord {
    id: String,
    caption: String,
    language: LanguageSegments,
    motion_segments: Vec<MotionSegment>,
    positions: Vec<f64>,
}

#[derive(Serialize)]
struct UnalignedRecord {
    id: String,
    caption: String,
    unaligned: bool,
}

fn cmd_segment(args: SegmentArgs) -> Result<()> {
    let (model, vocab, _) = load_checkpoint(&args.checkpoint)?;
    require_windows(&model)?;
    let samples = load_samples(&args.data)?;
    let action_words = if args.action_words.is_empty() {
        default_action_words()
    } else {
        args.action_words.clone()
    };

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut body = String::new();
    let mut aligned = 0usize;
    for sample in &samples {
        let (result, words) = caption(&model, &vocab, sample, 1, args.max_len, DEFAULT_LENGTH_NORM)?;
        let text = words.join(" ");
        let full = vocab.decode(&result.tokens);
        let lang = language_of(&full, &action_words);
        let line = match lang {
            Some(lang) => {
                let segments = motion_segmentation(&result.trace.segments, &lang)?;
                aligned += 1;
                serde_json::to_string(&SegmentRecord {
                    id: sample.id.clone(),
                    caption: text,
                    language: lang,
                    motion_segments: segments,
                    positions: result.trace.positions.clone(),
                })
            }
            None => serde_json::to_string(&UnalignedRecord {
                id: sample.id.clone(),
                caption: text,
                unaligned: true,
            }),
        }
        .expect("record serializes");
        body.push_str(&line);
        body.push('\n');
    }
    let out_file = args.out.join("segments.jsonl");
    std::fs::write(&out_file, body).map_err(|e| Error::io(&out_file, e))?;
    write_manifest(&args.out.join("run.json"), "segment", &args)?;
    println!(
        "segmented {aligned} of {} samples into {}",
        samples.len(),
        out_file.display()
    );
    Ok(())
}

/// Phrase boundaries of a generated caption: the indices of its action words
/// (any member of `action_words`, in order of appearance) plus its
/// terminator. `None` when the caption has no terminator or no action word.
fn language_of(tokens: &[String], action_words: &[String]) -> Option<LanguageSegments> {
    let k_eos = tokens.iter().position(|t| t == EOS_WORD)?;
    let k: Vec<usize> = tokens[..k_eos]
        .iter()
        .enumerate()
        .filter(|(_, t)| action_words.contains(t))
        .map(|(i, _)| i)
        .collect();
    if k.is_empty() {
        return None;
    }
    Some(LanguageSegments { k, k_eos })
}

fn cmd_score_seg(args: ScoreSegArgs) -> Result<()> {
    let (model, vocab, _) = load_checkpoint(&args.checkpoint)?;
    require_windows(&model)?;
    let samples = load_samples(&args.data)?;
    let mut aligned = Vec::new();
    let mut excluded = 0usize;
    for sample in &samples {
        let Some(gt) = sample.ground_truth() else {
            excluded += 1;
            continue;
        };
        let (result, _) = caption(&model, &vocab, sample, 1, args.max_len, DEFAULT_LENGTH_NORM)?;
        let full = vocab.decode(&result.tokens);
        let Some(lang) = language_segmentation(&full, &gt.action_words) else {
            excluded += 1;
            continue;
        };
        let predicted = motion_segmentation(&result.trace.segments, &lang)?
            .into_iter()
            .map(|m| m.interval)
            .collect();
        aligned.push(AlignedSample {
            predicted,
            ground_truth: gt.segments,
            positions: Some(result.trace.positions.clone()),
            language: lang,
        });
    }
    if aligned.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "none of the {} samples could be aligned and scored",
            samples.len()
        )));
    }
    let report = corpus_scores(&aligned, excluded, &DEFAULT_THETA_GRID)?;
    let body = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidArgument(format!("report cannot serialize: {e}")))?;
    println!("{body}");
    if let Some(out) = &args.out {
        std::fs::write(out, body + "\n").map_err(|e| Error::io(out, e))?;
        write_manifest(&manifest_sibling(out), "score-seg", &args)?;
    }
    Ok(())
}

fn cmd_score_text(args: ScoreTextArgs) -> Result<()> {
    let (model, vocab, _) = load_checkpoint(&args.checkpoint)?;
    let samples = load_samples(&args.data)?;
    let mut preds = Vec::with_capacity(samples.len());
    let mut refs = Vec::with_capacity(samples.len());
    let mut pred_sentences = Vec::with_capacity(samples.len());
    let mut ref_sentences = Vec::with_capacity(samples.len());
    for sample in &samples {
        let (_, words) = caption(
            &model,
            &vocab,
            sample,
            args.beam,
            args.max_len,
            DEFAULT_LENGTH_NORM,
        )?;
        pred_sentences.push(vec![words.join(" ")]);
        preds.push(words);
        refs.push(sample.descriptions.iter().map(|d| tokenize(d)).collect::<Vec<_>>());
        ref_sentences.push(sample.descriptions.clone());
    }
    let smoothing = match args.smoothing {
        SmoothingArg::None => Smoothing::None,
        SmoothingArg::AddOne => Smoothing::AddOne,
    };
    let bleu = bleu4_with(&preds, &refs, smoothing)?;
    let provider: Box<dyn EmbeddingProvider> = match &args.embedding {
        Some(path) => Box::new(FileEmbedding::load(path)?),
        None => Box::new(HashEmbedding::new(64)),
    };
    let semantic = semantic_score(&ref_sentences, &pred_sentences, provider.as_ref())?;
    let report = serde_json::json!({
        "samples": samples.len(),
        "bleu4": bleu,
        "semantic_similarity": semantic,
    });
    let body = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidArgument(format!("report cannot serialize: {e}")))?;
    println!("{body}");
    if let Some(out) = &args.out {
        std::fs::write(out, body + "\n").map_err(|e| Error::io(out, e))?;
        write_manifest(&manifest_sibling(out), "score-text", &args)?;
    }
    Ok(())
}

fn cmd_export_attn(args: ExportAttnArgs) -> Result<()> {
    let (model, vocab, _) = load_checkpoint(&args.checkpoint)?;
    let samples = load_samples(&args.data)?;
    let sample = samples.get(args.index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "sample index {} out of range for {} samples",
            args.index,
            samples.len()
        ))
    })?;
    let (result, _) = caption(&model, &vocab, sample, 1, args.max_len, DEFAULT_LENGTH_NORM)?;
    let words = vocab.decode(&result.tokens);
    let language = sample
        .ground_truth()
        .and_then(|gt| language_segmentation(&words, &gt.action_words));
    let paths = export(&args.out, &words, &result, language.as_ref(), args.sharpen)?;
    write_manifest(&args.out.join("run.json"), "export-attn", &args)?;
    println!("wrote {}", paths.attention.display());
    println!("wrote {}", paths.trace.display());
    println!("wrote {}", paths.transparency.display());
    if let Some(gamma) = paths.gamma {
        println!("wrote {}", gamma.display());
    }
    Ok(())
}

fn cmd_grid(args: &GridArgs) -> Result<()> {
    let samples = load_samples(&args.data)?;
    let held_out = ((samples.len() as f64) * (1.0 - args.train_frac)).round() as usize;
    let split = samples.len().saturating_sub(held_out.max(1));
    if split == 0 {
        return Err(Error::InvalidArgument(
            "training fraction leaves no training samples".into(),
        ));
    }
    let (train_split, eval_split) = samples.split_at(split);
    let vocab = Vocabulary::build(train_split, args.training.min_freq);
    let data = train_samples_of(train_split, &vocab);
    let tcfg = training_config(&args.training);

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut rows = String::from("depth,width,final_loss,eval_bleu4\n");
    for &depth in &args.depths {
        if depth < 2 {
            return Err(Error::InvalidArgument(format!(
                "depth {depth} too small: the per-frame encoder needs at least one hidden layer plus the final resize"
            )));
        }
        for &width in &args.widths {
            let mut flags = args.model.clone();
            flags.encoder = EncoderArg::Mlp;
            let mut dims = vec![width; depth - 1];
            dims.push(flags.hidden);
            let mut cfg = model_config(&flags, samples[0].width, vocab.len());
            cfg.encoder = EncoderConfig::mlp(samples[0].width, dims);
            let mut model = Model::init(cfg, tcfg.seed)?;
            let report = train(&mut model, &data, &tcfg)?;
            let final_loss = report.epoch_losses.last().copied().unwrap_or(f64::NAN);

            let mut preds = Vec::new();
            let mut refs = Vec::new();
            for sample in eval_split {
                let (_, words) =
                    caption(&model, &vocab, sample, 1, DEFAULT_MAX_LEN, DEFAULT_LENGTH_NORM)?;
                preds.push(words);
                refs.push(sample.descriptions.iter().map(|d| tokenize(d)).collect::<Vec<_>>());
            }
            let bleu = bleu4_with(&preds, &refs, Smoothing::AddOne)?;
            rows.push_str(&format!("{depth},{width},{final_loss:.16e},{bleu:.16e}\n"));

            let combo_dir = args.out.join(format!("depth{depth}-width{width}"));
            std::fs::create_dir_all(&combo_dir).map_err(|e| Error::io(&combo_dir, e))?;
            save_checkpoint(&combo_dir.join("checkpoint.json"), &model, &vocab, Some(&tcfg))?;
            println!("depth {depth} width {width}: loss {final_loss:.4}, bleu {bleu:.4}");
        }
    }
    let grid_path = args.out.join("grid.csv");
    std::fs::write(&grid_path, rows).map_err(|e| Error::io(&grid_path, e))?;
    write_manifest(&args.out.join("run.json"), "grid", args)?;
    Ok(())
}
