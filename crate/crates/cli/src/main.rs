//! Command-line front end: ingest checks, training, topic inspection,
//! personalized ranking, contact filtering, evaluation, and synthetic data.
//!
//! Exit codes are a stable contract: 0 success, 2 input or parse error,
//! 3 invalid configuration, 4 cold or unknown user, 5 internal invariant
//! violation. Output files are written to a temporary file and renamed into
//! place, so a failing run never leaves a partial file behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use tagrank::contacts::{contact_set, filter_by_contacts, ContactLevel};
use tagrank::corpus::{
    build_vocabulary, load_contacts, load_corpus, load_labels, related_tags, user_tag_histogram,
    Label,
};
use tagrank::eval::{eval_report, DenominatorRule, EvalConfig, EvalInput};
use tagrank::model::{top_tags_per_topic, train, ModelConfig};
use tagrank::model_file::{load_model, model_to_bytes, planted_to_bytes};
use tagrank::personalize::{load_ranked_csv, rank_images, user_topic_vector, ProfileMode};
use tagrank::synth::{generate, CountRange, SynthSpec};
use tagrank::Error;

#[derive(Parser)]
#[command(name = "tagrank", version, about = "Personalized ranking of tag-search results")]
struct Cli {
    /// Suppress progress notes on stderr; results always print.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate input files and print what they contain.
    IngestCheck(IngestCheckArgs),
    /// Train a topic model and write it to a model file.
    Train(TrainArgs),
    /// Print each topic's highest-probability tags as CSV.
    Topics(TopicsArgs),
    /// Rank a corpus of candidate images for one user, best first.
    Rank(RankArgs),
    /// Keep only the images owned by a user's social contacts.
    FilterContacts(FilterContactsArgs),
    /// Score a result list against relevance labels.
    Eval(EvalArgs),
    /// Generate a synthetic corpus with known planted topics.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestCheckArgs {
    /// Corpus file: one JSON image record per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Contact list CSV (`user,contact` with header).
    #[arg(long)]
    contacts: Option<PathBuf>,
    /// Relevance label CSV (`image_id,label` with header).
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Number of latent topics.
    #[arg(long)]
    topics: usize,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Stop when the relative log-likelihood change drops below this.
    #[arg(long, default_value_t = 1e-6)]
    rel_tol: f64,
    /// Floor applied to probabilities inside logs and after updates.
    #[arg(long, default_value_t = 1e-12)]
    prob_floor: f64,
    /// Worker threads for the E-step; any value gives identical results.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Include group annotations in training (off by default).
    #[arg(long, default_value_t = false)]
    use_groups: bool,
}

#[derive(Args)]
struct TopicsArgs {
    #[arg(long)]
    model: PathBuf,
    /// Tags listed per topic.
    #[arg(long, default_value_t = 25)]
    top: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Profile from every tag the user ever applied.
    All,
    /// Profile from the user's tags co-occurring with --query-tag.
    Related,
}

impl From<ModeArg> for ProfileMode {
    fn from(mode: ModeArg) -> ProfileMode {
        match mode {
            ModeArg::All => ProfileMode::AllTags,
            ModeArg::Related => ProfileMode::RelatedTags,
        }
    }
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    model: PathBuf,
    /// Candidate pool; also the source of the user's tag history.
    #[arg(long)]
    corpus: PathBuf,
    /// The querying user.
    #[arg(long)]
    user: String,
    /// Size of the ranked page.
    #[arg(long, default_value_t = 50)]
    top_n: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::All)]
    profile_mode: ModeArg,
    /// Query tag for --profile-mode related.
    #[arg(long)]
    query_tag: Option<String>,
    /// Write the ranked CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FilterContactsArgs {
    /// Contact list CSV (`user,contact` with header).
    #[arg(long)]
    contacts: PathBuf,
    /// Candidate pool to filter.
    #[arg(long)]
    corpus: PathBuf,
    /// The searching user, removed from their own contact set.
    #[arg(long)]
    user: String,
    /// 1 = direct contacts, 2 = contacts plus the contacts' contacts.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    level: u8,
    /// Keep the user's own images too.
    #[arg(long, default_value_t = false)]
    include_self: bool,
    /// Write the kept image ids here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    /// Divide by every retrieved result.
    All,
    /// Divide by labeled results only.
    Labeled,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["results", "ranked"])))]
struct EvalArgs {
    /// Plain result list: one image id per line.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Ranked CSV as written by `rank`.
    #[arg(long)]
    ranked: Option<PathBuf>,
    /// Relevance label CSV (`image_id,label` with header).
    #[arg(long)]
    labels: PathBuf,
    /// Precision denominator; defaults to `all` for --results and
    /// `labeled` for --ranked.
    #[arg(long, value_enum)]
    rule: Option<RuleArg>,
    /// Plain-search precision to report improvement against.
    #[arg(long)]
    baseline: Option<f64>,
    /// Print the two-line CSV instead of the aligned table.
    #[arg(long, default_value_t = false)]
    csv: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    topics: usize,
    #[arg(long, default_value_t = 10)]
    users: usize,
    #[arg(long, default_value_t = 1000)]
    images: usize,
    /// Count or inclusive range, e.g. `4` or `3..6`.
    #[arg(long, default_value = "3..6", value_parser = parse_count_range)]
    tags_per_image: CountRange,
    /// Count or inclusive range; `0..0` disables groups.
    #[arg(long, default_value = "0..0", value_parser = parse_count_range)]
    groups_per_image: CountRange,
    #[arg(long, default_value_t = 30)]
    vocab_tags: usize,
    #[arg(long, default_value_t = 0)]
    vocab_groups: usize,
    /// 0 = identical topics, 1 = disjoint per-topic tag blocks.
    #[arg(long, default_value_t = 0.9)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corpus file to write (JSONL).
    #[arg(long)]
    out_corpus: PathBuf,
    /// Planted-truth model file to write.
    #[arg(long)]
    out_truth: PathBuf,
}

fn parse_count_range(text: &str) -> Result<CountRange, String> {
    text.parse::<CountRange>().map_err(|e| e.to_string())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) | Error::RetryCapExceeded { .. } | Error::TopicCountMismatch { .. } => 3,
        Error::ColdUser { .. } | Error::UnknownUser { .. } => 4,
        Error::Invariant(_) => 5,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

fn run(cli: Cli) -> tagrank::Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::IngestCheck(args) => ingest_check(args),
        Command::Train(args) => run_train(args, quiet),
        Command::Topics(args) => run_topics(args),
        Command::Rank(args) => run_rank(args, quiet),
        Command::FilterContacts(args) => run_filter(args, quiet),
        Command::Eval(args) => run_eval(args),
        Command::Synth(args) => run_synth(args, quiet),
    }
}

/// Print a progress note on stderr unless --quiet.
fn note(quiet: bool, message: String) {
    if !quiet {
        eprintln!("{message}");
    }
}

/// Write through a temporary file in the target directory, then rename, so
/// the destination is never left half-written.
fn write_atomic(path: &Path, bytes: &[u8]) -> tagrank::Result<()> {
    let dir = match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Print to stdout, or write atomically when a path was given.
fn emit(out: Option<&Path>, text: &str) -> tagrank::Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ingest_check(args: IngestCheckArgs) -> tagrank::Result<()> {
    let load = load_corpus(&args.corpus)?;
    let vocab = build_vocabulary(&load.corpus);
    println!(
        "corpus: {} images, {} users, {} tags, {} groups",
        load.corpus.len(),
        vocab.users.len(),
        vocab.tags.len(),
        vocab.groups.len()
    );
    println!(
        "corpus warnings: {} duplicate tags dropped, {} duplicate groups dropped",
        load.warnings.duplicate_tags, load.warnings.duplicate_groups
    );
    if let Some(path) = &args.contacts {
        let contacts = load_contacts(path)?;
        println!(
            "contacts: {} users with contacts, {} edges, {} self-loops dropped",
            contacts.graph.users().count(),
            contacts.graph.edge_count(),
            contacts.self_loops_dropped
        );
    }
    if let Some(path) = &args.labels {
        let labels = load_labels(path)?;
        let (mut relevant, mut not_relevant, mut undecided) = (0usize, 0usize, 0usize);
        for (_, label) in labels.iter() {
            match label {
                Label::Relevant => relevant += 1,
                Label::NotRelevant => not_relevant += 1,
                Label::Undecided => undecided += 1,
            }
        }
        println!(
            "labels: {} labeled images, {relevant} relevant, {not_relevant} not relevant, {undecided} undecided",
            labels.len()
        );
    }
    Ok(())
}

fn run_train(args: TrainArgs, quiet: bool) -> tagrank::Result<()> {
    let load = load_corpus(&args.corpus)?;
    let corpus = load.corpus;
    if !load.warnings.is_clean() {
        note(
            quiet,
            format!(
                "note: dropped {} duplicate tags and {} duplicate groups while loading",
                load.warnings.duplicate_tags, load.warnings.duplicate_groups
            ),
        );
    }
    let vocab = build_vocabulary(&corpus);
    note(
        quiet,
        format!(
            "loaded {} images: {} users, {} tags, {} groups",
            corpus.len(),
            vocab.users.len(),
            vocab.tags.len(),
            vocab.groups.len()
        ),
    );
    let config = ModelConfig {
        topics: args.topics,
        use_groups: args.use_groups,
        max_iters: args.max_iters,
        rel_tol: args.rel_tol,
        seed: args.seed,
        prob_floor: args.prob_floor,
        threads: args.threads,
    };
    let (model, stats) = train(&corpus, &config)?;
    note(
        quiet,
        if stats.converged {
            format!("converged after {} iterations", stats.iterations)
        } else {
            format!("stopped at the iteration cap ({})", stats.iterations)
        },
    );
    write_atomic(&args.out, &model_to_bytes(&model))?;
    let final_ll = stats.log_likelihood.last().copied().unwrap_or(f64::NAN);
    println!(
        "model {}: topics={} iterations={} converged={} log_likelihood={}",
        args.out.display(),
        config.topics,
        stats.iterations,
        stats.converged,
        final_ll
    );
    Ok(())
}

fn run_topics(args: TopicsArgs) -> tagrank::Result<()> {
    let model = load_model(&args.model)?;
    let tags = top_tags_per_topic(&model, args.top);
    let mut out = String::from("topic,rank,tag,probability\n");
    let mut current = usize::MAX;
    let mut rank = 0usize;
    for entry in &tags {
        if entry.topic != current {
            current = entry.topic;
            rank = 0;
        }
        rank += 1;
        out.push_str(&format!(
            "{},{rank},{},{}\n",
            entry.topic, entry.tag, entry.probability
        ));
    }
    print!("{out}");
    Ok(())
}

fn run_rank(args: RankArgs, quiet: bool) -> tagrank::Result<()> {
    let model = load_model(&args.model)?;
    let corpus = load_corpus(&args.corpus)?.corpus;
    let mode = ProfileMode::from(args.profile_mode);
    let histogram = match mode {
        ProfileMode::AllTags => user_tag_histogram(&corpus, &args.user)?,
        ProfileMode::RelatedTags => {
            let query = args.query_tag.as_deref().ok_or_else(|| {
                Error::InvalidConfig("--profile-mode related needs --query-tag".into())
            })?;
            related_tags(&corpus, &args.user, query)?
        }
    };
    let profile = user_topic_vector(&model, &histogram, &args.user)?;
    if !profile.dropped_tags.is_empty() {
        note(
            quiet,
            format!(
                "note: {} profile tags outside the model vocabulary",
                profile.dropped_tags.len()
            ),
        );
    }
    let ranked = rank_images(&model, corpus.images(), &profile, args.top_n, mode)?;
    if !ranked.skipped_candidates.is_empty() {
        note(
            quiet,
            format!(
                "note: skipped {} candidates with unknown owners",
                ranked.skipped_candidates.len()
            ),
        );
    }
    if ranked.unknown_annotations > 0 {
        note(
            quiet,
            format!(
                "note: {} candidate annotations outside the model vocabulary",
                ranked.unknown_annotations
            ),
        );
    }
    emit(args.out.as_deref(), &ranked.to_csv())
}

fn run_filter(args: FilterContactsArgs, quiet: bool) -> tagrank::Result<()> {
    let contacts = load_contacts(&args.contacts)?;
    let corpus = load_corpus(&args.corpus)?.corpus;
    let level = ContactLevel::from_number(args.level)
        .expect("clap keeps --level in 1..=2");
    let mut set = contact_set(&contacts.graph, &args.user, level);
    if args.include_self {
        set = set.including_self();
    }
    let kept = filter_by_contacts(corpus.images(), &set);
    note(
        quiet,
        format!(
            "note: kept {} of {} images via {} contact-set members",
            kept.len(),
            corpus.len(),
            set.len()
        ),
    );
    let mut text = String::new();
    for image in &kept {
        text.push_str(image.id());
        text.push('\n');
    }
    emit(args.out.as_deref(), &text)
}

fn read_results_list(path: &Path) -> tagrank::Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|line| !line.is_empty())
        .map(str::to_string)
        .collect())
}

fn run_eval(args: EvalArgs) -> tagrank::Result<()> {
    let labels = load_labels(&args.labels)?;
    let rule = match (args.rule, args.ranked.is_some()) {
        (Some(RuleArg::All), _) => DenominatorRule::AllRetrieved,
        (Some(RuleArg::Labeled), _) => DenominatorRule::LabeledOnly,
        (None, true) => DenominatorRule::LabeledOnly,
        (None, false) => DenominatorRule::AllRetrieved,
    };
    let config = EvalConfig {
        rule,
        baseline_precision: args.baseline,
    };
    let report = if let Some(path) = &args.results {
        let ids = read_results_list(path)?;
        eval_report(EvalInput::Results(&ids), &labels, &config)?
    } else {
        let path = args.ranked.as_ref().expect("clap requires one input");
        let entries = load_ranked_csv(path)?;
        eval_report(EvalInput::Ranked(&entries), &labels, &config)?
    };
    let text = if args.csv { report.to_csv() } else { report.to_table() };
    print!("{text}");
    if !text.ends_with('\n') {
        println!();
    }
    Ok(())
}

fn run_synth(args: SynthArgs, quiet: bool) -> tagrank::Result<()> {
    let spec = SynthSpec {
        topics: args.topics,
        users: args.users,
        images: args.images,
        tags_per_image: args.tags_per_image,
        groups_per_image: args.groups_per_image,
        vocab_tags: args.vocab_tags,
        vocab_groups: args.vocab_groups,
        separation: args.separation,
        seed: args.seed,
    };
    let (corpus, truth) = generate(&spec)?;
    note(
        quiet,
        format!(
            "generated {} images for {} users (seed {})",
            corpus.len(),
            spec.users,
            spec.seed
        ),
    );
    write_atomic(&args.out_corpus, corpus.to_jsonl().as_bytes())?;
    write_atomic(&args.out_truth, &planted_to_bytes(&truth.model, &truth.assignments))?;
    println!("corpus {}: {} images", args.out_corpus.display(), corpus.len());
    println!("truth {}: topics={}", args.out_truth.display(), spec.topics);
    Ok(())
}
