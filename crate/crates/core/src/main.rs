use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use fairkit::cda::{self, SwapMode};
use fairkit::corpus_io::{
    self, load_attribute_spec, load_embedding_dump, load_swap_lexicon, load_token_prob_dump,
    save_token_prob_dump, BiasCategory,
};
use fairkit::pipeline::{self, EvaluateConfig};
use fairkit::projection::{self, BlendConfig, ProjectionConfig};
use fairkit::report::{self, Metric};
use fairkit::selfdebias::{self, SelfDebiasConfig};
use fairkit::Error;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "fairkit",
    version,
    about = "Bias metrics and post-hoc debiasing over model dumps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run bias metrics over a directory of dumps and emit a report.
    Evaluate(EvaluateArgs),
    /// Counterfactually rewrite a text corpus.
    Augment(AugmentArgs),
    /// Compare two reports run-by-run.
    Compare(CompareArgs),
    /// Train a nullspace projector from labelled class-word embeddings.
    TrainProjection(TrainArgs),
    /// Produce projected (and optionally blended) next-token distributions.
    Rescore(RescoreArgs),
    /// Rescale plain distributions against bias-prompted ones.
    Selfdebias(SelfDebiasArgs),
    /// Print the bias-eliciting prompt for a sentence.
    DebiasPrompt(PromptArgs),
    /// Write one copy of a corpus per class of an attribute spec.
    Split(SplitArgs),
    /// Check that a file satisfies its schema.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dumps: PathBuf,
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Comma-separated: weat, seat, hellinger, stereoset, crows, honest.
    #[arg(long, value_delimiter = ',', required = true)]
    metrics: Vec<Metric>,
    #[arg(long)]
    category: Option<BiasCategory>,
    #[arg(long, env = "FAIRKIT_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = fairkit::stats::DEFAULT_MAX_PERMUTATIONS)]
    max_permutations: u64,
    /// Drop words missing from the embedding dump instead of failing.
    #[arg(long)]
    allow_missing: bool,
    #[arg(long)]
    hurtlex: Option<PathBuf>,
    #[arg(long, default_value_t = pipeline::DEFAULT_K)]
    k: usize,
    /// JSON report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print the table rendering to stdout.
    #[arg(long)]
    text: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TwoWay,
    OneWay,
    Multiclass,
}

impl From<ModeArg> for SwapMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::TwoWay => SwapMode::TwoWay,
            ModeArg::OneWay => SwapMode::OneWay,
            ModeArg::Multiclass => SwapMode::Multiclass,
        }
    }
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long, env = "FAIRKIT_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// JSONL with one record per changed line.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
    /// JSON comparison destination; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 1)]
    rounds: usize,
    #[arg(long, env = "FAIRKIT_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = projection::DEFAULT_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = projection::DEFAULT_LEARNING_RATE)]
    learning_rate: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RescoreArgs {
    #[arg(long)]
    model: PathBuf,
    /// Embedding dump keyed by step id.
    #[arg(long)]
    contexts: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Distribution dump of the unmodified model; enables blending.
    #[arg(long)]
    original: Option<PathBuf>,
    #[arg(long, default_value_t = projection::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelfDebiasArgs {
    #[arg(long)]
    plain: PathBuf,
    #[arg(long)]
    biased: PathBuf,
    #[arg(long, default_value_t = selfdebias::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
    /// JSONL audit of per-word deltas and scale factors.
    #[arg(long)]
    deltas: Option<PathBuf>,
}

#[derive(Args)]
struct PromptArgs {
    #[arg(long)]
    sentence: String,
    #[arg(long)]
    bias: String,
    /// Template with `{x}` (sentence) and `{y}` (bias description) slots.
    #[arg(long, default_value = selfdebias::DEFAULT_TEMPLATE)]
    template: String,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Embeddings,
    TokenProbs,
    Candidates,
    Completions,
    Spec,
    SwapLexicon,
    Hurtlex,
    Report,
    Projection,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    file: PathBuf,
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Metadata written next to derived distribution dumps.
fn write_meta(out: &Path, meta: serde_json::Value) -> anyhow::Result<()> {
    let mut path = out.as_os_str().to_owned();
    path.push(".meta.json");
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    write_file(Path::new(&path), &text)
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let cfg = EvaluateConfig {
        dumps: a.dumps,
        spec: a.spec,
        hurtlex: a.hurtlex,
        metrics: a.metrics,
        category: a.category,
        seed: a.seed,
        max_permutations: a.max_permutations,
        allow_missing: a.allow_missing,
        k: a.k,
    };
    let report = pipeline::evaluate(&cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    match &a.out {
        Some(path) => write_file(path, &report.to_json())?,
        None => print!("{}", report.to_json()),
    }
    if a.text {
        print!("{}", report.render_text());
    }
    Ok(())
}

fn augment(a: AugmentArgs) -> anyhow::Result<()> {
    let lexicon = load_swap_lexicon(&a.lexicon)?;
    let corpus = fs::read_to_string(&a.corpus)
        .map_err(|e| Error::Usage(format!("{}: {e}", a.corpus.display())))?;
    let out = cda::augment_corpus(&corpus, &lexicon, a.mode.into(), a.seed).map_err(Error::from)?;
    write_file(&a.out, &out.text)?;
    let changed = out.changed().count();
    if let Some(audit) = &a.audit {
        let mut text = String::new();
        for r in out.changed() {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        write_file(audit, &text)?;
    }
    eprintln!("{changed} of {} lines changed", out.records.len());
    Ok(())
}

fn compare(a: CompareArgs) -> anyhow::Result<()> {
    let before = report::load_report(&a.before)?;
    let after = report::load_report(&a.after)?;
    let cmp = report::compare_reports(&before, &after).map_err(Error::from)?;
    if let Some(path) = &a.out {
        write_file(path, &cmp.to_json())?;
    }
    print!("{}", cmp.render_text());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let dump = load_embedding_dump(&a.embeddings)?;
    let spec = load_attribute_spec(&a.spec)?;
    let (labeled, missing) = projection::labeled_from_spec(&dump, &spec);
    if !missing.is_empty() {
        eprintln!(
            "warning: class words without vectors: {}",
            missing.join(", ")
        );
    }
    let cfg = ProjectionConfig {
        rounds: a.rounds,
        seed: a.seed,
        iterations: a.iterations,
        learning_rate: a.learning_rate,
    };
    let model = projection::train_projection(&labeled, &cfg).map_err(Error::from)?;
    projection::save_projection_model(&model, &a.out)?;
    for (round, acc) in model.classifier_accuracies.iter().enumerate() {
        eprintln!("round {}: classifier accuracy {acc:.4}", round + 1);
    }
    Ok(())
}

fn rescore(a: RescoreArgs) -> anyhow::Result<()> {
    let model = projection::load_projection_model(&a.model)?;
    let contexts = load_embedding_dump(&a.contexts)?;
    let vocab = load_embedding_dump(&a.vocab)?;
    let original = a.original.as_ref().map(load_token_prob_dump).transpose()?;
    let blend = BlendConfig::new(a.alpha).map_err(Error::from)?;
    let out = pipeline::rescore_dump(&model, &contexts, &vocab, original.as_ref(), blend)?;
    save_token_prob_dump(&out, &a.out)?;
    write_meta(
        &a.out,
        json!({
            "command": "rescore",
            "engine_version": fairkit::ENGINE_VERSION,
            "alpha": original.as_ref().map(|_| a.alpha),
            "blended": original.is_some(),
            "projection_rounds": model.rounds,
            "projection_config": model.config,
        }),
    )
}

fn run_selfdebias(a: SelfDebiasArgs) -> anyhow::Result<()> {
    let plain = load_token_prob_dump(&a.plain)?;
    let biased = load_token_prob_dump(&a.biased)?;
    let cfg = SelfDebiasConfig {
        lambda_decay: a.lambda,
        ..Default::default()
    };
    cfg.validate().map_err(Error::from)?;
    let (out, audit) = pipeline::selfdebias_dump(&plain, &biased, &cfg)?;
    save_token_prob_dump(&out, &a.out)?;
    if let Some(path) = &a.deltas {
        let mut text = String::new();
        for step in &audit {
            text.push_str(&serde_json::to_string(step)?);
            text.push('\n');
        }
        write_file(path, &text)?;
    }
    write_meta(
        &a.out,
        json!({
            "command": "selfdebias",
            "engine_version": fairkit::ENGINE_VERSION,
            "lambda_decay": a.lambda,
            "renormalized": true,
        }),
    )
}

fn prompt(a: PromptArgs) -> anyhow::Result<()> {
    let cfg = SelfDebiasConfig::new(selfdebias::DEFAULT_LAMBDA, a.template).map_err(Error::from)?;
    let p = selfdebias::build_debias_prompt(&a.sentence, &a.bias, &cfg).map_err(Error::from)?;
    println!("{p}");
    Ok(())
}

fn split(a: SplitArgs) -> anyhow::Result<()> {
    let spec = load_attribute_spec(&a.spec)?;
    let corpus = fs::read_to_string(&a.corpus)
        .map_err(|e| Error::Usage(format!("{}: {e}", a.corpus.display())))?;
    let copies = cda::split_by_class(&corpus, &spec).map_err(Error::from)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (label, text) in copies {
        write_file(&a.out_dir.join(format!("{label}.txt")), &text)?;
    }
    Ok(())
}

fn validate(a: ValidateArgs) -> anyhow::Result<()> {
    let f = &a.file;
    let summary = match a.kind {
        Kind::Embeddings => {
            let d = load_embedding_dump(f)?;
            format!("{} vectors of dimension {}", d.len(), d.dim())
        }
        Kind::TokenProbs => format!("{} records", load_token_prob_dump(f)?.records.len()),
        Kind::Candidates => format!(
            "{} candidate sets",
            corpus_io::load_candidate_sets(f, None)?.sets.len()
        ),
        Kind::Completions => format!(
            "{} prompts",
            corpus_io::load_completion_dump(f)?.records.len()
        ),
        Kind::Spec => {
            let s = load_attribute_spec(f)?;
            format!("spec {:?} with {} classes", s.name, s.classes.len())
        }
        Kind::SwapLexicon => format!("{} lexicon", load_swap_lexicon(f)?.mode()),
        Kind::Hurtlex => {
            let (lex, dups) = corpus_io::load_hurt_lexicon(f)?;
            format!("{} entries ({dups} duplicates dropped)", lex.len())
        }
        Kind::Report => format!("{} runs", report::load_report(f)?.runs.len()),
        Kind::Projection => {
            let m = projection::load_projection_model(f)?;
            format!("projector of dimension {} after {} rounds", m.dim, m.rounds)
        }
    };
    println!("ok: {summary}");
    Ok(())
}

/// Library failures carry their own class; anything else (output I/O,
/// serialization) is reported as an input problem.
fn exit_code(err: &anyhow::Error) -> u8 {
    err.downcast_ref::<Error>()
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Evaluate(a) => evaluate(a),
        Command::Augment(a) => augment(a),
        Command::Compare(a) => compare(a),
        Command::TrainProjection(a) => train(a),
        Command::Rescore(a) => rescore(a),
        Command::Selfdebias(a) => run_selfdebias(a),
        Command::DebiasPrompt(a) => prompt(a),
        Command::Split(a) => split(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
