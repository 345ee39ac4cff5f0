use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use dialogue_synth::adapt::{adapt_corpus, concat, concat_by_text, load_mapping, DomainMapping};
use dialogue_synth::builtin;
use dialogue_synth::dataset::{
    compute_stats, emit_multiwoz, emit_native, mix, parse_native, sample_corpus, DialogueCorpus,
};
use dialogue_synth::grammar::{bind_ontology, load_template_dir, parse_templates, BoundGrammar, Grammar};
use dialogue_synth::model::{load_model, validate_dialogue, DialogueModel};
use dialogue_synth::ontology::{load_ontology, Ontology};
use dialogue_synth::synthesizer::{synthesize, PruningScope, SynthesisParams, Truncation};

/// Failure classes, mapped to exit codes 1 and 2.
enum Failure {
    Domain(String),
    Format(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Format(_) => 2,
        }
    }
}

type Res<T> = Result<T, Failure>;

fn domain_err(e: impl std::fmt::Display) -> Failure {
    Failure::Domain(e.to_string())
}

#[derive(Parser)]
#[command(name = "dialsynth", version, about = "Synthesize annotated task-oriented dialogue corpora")]
struct Cli {
    /// Log verbosity: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus and write native, MultiWOZ and metadata files.
    Synth(SynthArgs),
    /// Check dialogues against the model (and, with templates, replay them).
    Validate(ValidateArgs),
    /// Move dialogues to another domain.
    Adapt(AdaptArgs),
    /// Splice dialogues of two domains pairwise into multi-domain dialogues.
    Concat(ConcatArgs),
    /// Print corpus statistics.
    Stats(StatsArgs),
    /// Sample and concatenate several corpora.
    Mix(MixArgs),
    /// Keep a uniform random fraction of a corpus, in input order.
    Sample(SampleArgs),
}

#[derive(Args)]
struct Inputs {
    /// Dialogue model JSON; the built-in transaction model by default.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory of `.tmpl` files; the built-in library by default.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Ontology JSON; the built-in ontology by default.
    #[arg(long)]
    ontology: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    PerPair,
    PerContext,
}

#[derive(Clone, Copy, ValueEnum)]
enum TruncationArg {
    Balanced,
    Uniform,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value = "restaurant")]
    domain: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    first_turn_pruning: usize,
    #[arg(long, default_value_t = 9)]
    first_turn_depth: u32,
    #[arg(long, default_value_t = 1_000)]
    pruning: usize,
    #[arg(long, default_value_t = 6)]
    max_depth: u32,
    #[arg(long, default_value_t = 10_000)]
    working_set: usize,
    /// Pairs expanded per iteration; defaults to the working-set size.
    #[arg(long)]
    transitions_per_iteration: Option<usize>,
    #[arg(long, default_value_t = 6)]
    max_turns: usize,
    /// Candidate evaluations per production per depth, in units of the pruning size.
    #[arg(long, default_value_t = 10)]
    budget_factor: usize,
    #[arg(long, value_enum, default_value = "per-pair")]
    pruning_scope: ScopeArg,
    #[arg(long, value_enum, default_value = "balanced")]
    truncation: TruncationArg,
    /// Close stalled dialogues with a closing turn instead of dropping them.
    #[arg(long)]
    complete_stalled: bool,
    /// Keep this fraction of the synthesized dialogues.
    #[arg(long)]
    sample: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; all cores by default. Output does not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Native JSONL corpus.
    input: PathBuf,
    #[command(flatten)]
    inputs: Inputs,
    /// Replay turns against the built-in (or `--templates`) grammar bound to each dialogue's domain.
    #[arg(long)]
    replay: bool,
}

#[derive(Args)]
struct AdaptArgs {
    input: PathBuf,
    /// Mapping JSON; the built-in restaurant-to-hotel mapping by default.
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    ontology: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ConcatArgs {
    first: PathBuf,
    second: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Find the splice point from closing phrases instead of recorded states.
    #[arg(long)]
    by_text: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    input: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct MixArgs {
    /// JSON: {"parts":[{"input":path,"fraction":f,"seed":n}]}.
    spec: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    input: PathBuf,
    #[arg(long)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MixSpec {
    parts: Vec<MixPart>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MixPart {
    input: PathBuf,
    fraction: f64,
    #[serde(default)]
    seed: u64,
}

fn read(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))
}

fn load_model_arg(path: &Option<PathBuf>) -> Res<DialogueModel> {
    match path {
        Some(p) => load_model(&read(p)?).map_err(|e| {
            let m = format!("{}: {e}", p.display());
            match e {
                dialogue_synth::model::ModelError::Syntax(_) => Failure::Format(m),
                _ => Failure::Domain(m),
            }
        }),
        None => Ok(builtin::model()),
    }
}

fn load_ontology_arg(path: &Option<PathBuf>) -> Res<Ontology> {
    match path {
        Some(p) => load_ontology(&read(p)?).map_err(|e| {
            let m = format!("{}: {e}", p.display());
            match e {
                dialogue_synth::ontology::OntologyError::Syntax(_) => Failure::Format(m),
                _ => Failure::Domain(m),
            }
        }),
        None => Ok(builtin::ontology()),
    }
}

fn load_grammar_arg(path: &Option<PathBuf>) -> Res<Grammar> {
    match path {
        Some(p) => {
            if !p.is_dir() {
                return Err(Failure::Domain(format!("{}: not a readable directory", p.display())));
            }
            let sources = load_template_dir(p).map_err(domain_err)?;
            parse_templates(&sources).map_err(domain_err)
        }
        None => Ok(builtin::grammar()),
    }
}

fn read_corpus(path: &Path) -> Res<DialogueCorpus> {
    let f = File::open(path).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    parse_native(BufReader::new(f)).map_err(|e| match e {
        dialogue_synth::dataset::DatasetError::Io(e) => Failure::Domain(format!("{}: {e}", path.display())),
        other => Failure::Format(format!("{}: {other}", path.display())),
    })
}

fn write_native(corpus: &DialogueCorpus, path: &Path) -> Res<()> {
    let f = File::create(path).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    emit_native(corpus, BufWriter::new(f)).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))
}

fn cmd_synth(a: SynthArgs) -> Res<()> {
    let model = load_model_arg(&a.inputs.model)?;
    let ontology = load_ontology_arg(&a.inputs.ontology)?;
    let grammar = load_grammar_arg(&a.inputs.templates)?;
    let bg = bind_ontology(&grammar, &model, &ontology, &a.domain).map_err(domain_err)?;
    let params = SynthesisParams {
        first_turn_max_depth: a.first_turn_depth,
        first_turn_pruning: a.first_turn_pruning,
        max_depth: a.max_depth,
        pruning_size: a.pruning,
        budget_factor: a.budget_factor,
        working_set_size: a.working_set,
        transitions_per_iteration: a.transitions_per_iteration,
        max_turns: a.max_turns,
        pruning_scope: match a.pruning_scope {
            ScopeArg::PerPair => PruningScope::PerPair,
            ScopeArg::PerContext => PruningScope::PerContext,
        },
        truncation: match a.truncation {
            TruncationArg::Balanced => Truncation::Balanced,
            TruncationArg::Uniform => Truncation::Uniform,
        },
        complete_stalled: a.complete_stalled,
        seed: a.seed,
    };
    let run = || synthesize(&model, &bg, &params).map_err(domain_err);
    let mut corpus = match a.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(domain_err)?
            .install(run)?,
        None => run()?,
    };
    if let Some(f) = a.sample {
        corpus = sample_corpus(&corpus, f, a.seed).map_err(domain_err)?;
    }

    fs::create_dir_all(&a.out).map_err(|e| Failure::Domain(format!("{}: {e}", a.out.display())))?;
    write_native(&corpus, &a.out.join("native.jsonl"))?;
    let mw = a.out.join("multiwoz.json");
    let f = File::create(&mw).map_err(|e| Failure::Domain(format!("{}: {e}", mw.display())))?;
    emit_multiwoz(&corpus, BufWriter::new(f)).map_err(|e| Failure::Domain(format!("{}: {e}", mw.display())))?;
    let meta = a.out.join("metadata.json");
    let text = serde_json::to_string_pretty(&corpus.metadata).map_err(domain_err)? + "\n";
    fs::write(&meta, text).map_err(|e| Failure::Domain(format!("{}: {e}", meta.display())))?;

    eprint!("{}", compute_stats(&corpus, Some(&model)));
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Res<()> {
    let model = load_model_arg(&a.inputs.model)?;
    let corpus = read_corpus(&a.input)?;
    let grammars: Vec<(String, BoundGrammar)> = if a.replay || a.inputs.templates.is_some() {
        let ontology = load_ontology_arg(&a.inputs.ontology)?;
        let grammar = load_grammar_arg(&a.inputs.templates)?;
        let mut domains: Vec<&str> = corpus.dialogues.iter().flat_map(|d| d.domains()).collect();
        domains.sort_unstable();
        domains.dedup();
        domains
            .into_iter()
            .filter(|d| ontology.domains.contains_key(*d))
            .map(|d| Ok((d.to_string(), bind_ontology(&grammar, &model, &ontology, d).map_err(domain_err)?)))
            .collect::<Res<_>>()?
    } else {
        Vec::new()
    };
    let mut violations = 0usize;
    let mut bad = 0usize;
    let mut skipped = 0usize;
    for d in &corpus.dialogues {
        let bg = grammars.iter().find(|(n, _)| n == d.domain()).map(|(_, g)| g);
        let report = validate_dialogue(d, &model, bg);
        skipped += report.replay_skipped();
        if !report.is_valid() {
            bad += 1;
        }
        for v in &report.violations {
            violations += 1;
            eprintln!("{}: {v}", d.id);
        }
    }
    eprintln!(
        "{} dialogues, {} with violations, {} violations, replay skipped on {} turns",
        corpus.len(),
        bad,
        violations,
        skipped
    );
    if violations > 0 {
        return Err(Failure::Domain(format!("{violations} violations")));
    }
    Ok(())
}

fn cmd_adapt(a: AdaptArgs) -> Res<()> {
    let ontology = load_ontology_arg(&a.ontology)?;
    let mapping: DomainMapping = match &a.mapping {
        Some(p) => load_mapping(&read(p)?).map_err(|e| Failure::Format(format!("{}: {e}", p.display())))?,
        None => builtin::restaurant_to_hotel(),
    };
    let corpus = read_corpus(&a.input)?;
    let (out, skipped) = adapt_corpus(&corpus, &mapping, &ontology, a.seed).map_err(domain_err)?;
    write_native(&out, &a.output)?;
    eprintln!("adapted {} dialogues, skipped {}", out.len(), skipped.len());
    let mut reasons: std::collections::BTreeMap<&str, usize> = Default::default();
    for (_, r) in &skipped {
        *reasons.entry(r.as_str()).or_default() += 1;
    }
    for (r, n) in reasons {
        eprintln!("  skipped {n}: {r}");
    }
    Ok(())
}

fn cmd_concat(a: ConcatArgs) -> Res<()> {
    let model = load_model_arg(&a.model)?;
    let first = read_corpus(&a.first)?;
    let second = read_corpus(&a.second)?;
    let mut out = DialogueCorpus::default();
    let mut failed = 0usize;
    for (x, y) in first.dialogues.iter().zip(&second.dialogues) {
        let id = format!("{}+{}", x.id, y.id);
        let r = if a.by_text {
            concat_by_text(x, y, &id)
        } else {
            concat(x, y, &model, &id)
        };
        match r {
            Ok(d) => out.dialogues.push(d),
            Err(e @ dialogue_synth::adapt::ConcatError::SameDomain(_)) => return Err(domain_err(e)),
            Err(e) => {
                failed += 1;
                log::warn!("{id}: {e}");
            }
        }
    }
    out.metadata.domain = out.dialogues.first().map(|d| d.domains().join("+")).unwrap_or_default();
    out.metadata.synthesized = out.len();
    write_native(&out, &a.output)?;
    eprintln!("concatenated {} dialogues, {} pairs failed", out.len(), failed);
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Res<()> {
    let model = load_model_arg(&a.model)?;
    let corpus = read_corpus(&a.input)?;
    let report = compute_stats(&corpus, Some(&model));
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let res = if a.json {
        writeln!(lock, "{}", serde_json::to_string_pretty(&report).map_err(domain_err)?)
    } else {
        write!(lock, "{report}")
    };
    res.map_err(domain_err)
}

fn cmd_mix(a: MixArgs) -> Res<()> {
    let spec: MixSpec =
        serde_json::from_str(&read(&a.spec)?).map_err(|e| Failure::Format(format!("{}: {e}", a.spec.display())))?;
    let corpora: Vec<DialogueCorpus> = spec.parts.iter().map(|p| read_corpus(&p.input)).collect::<Res<_>>()?;
    let parts: Vec<(&DialogueCorpus, f64, u64)> =
        corpora.iter().zip(&spec.parts).map(|(c, p)| (c, p.fraction, p.seed)).collect();
    let sources: Vec<String> = spec.parts.iter().map(|p| p.input.display().to_string()).collect();
    let out = mix(&parts, &sources).map_err(domain_err)?;
    write_native(&out, &a.output)?;
    for p in &out.metadata.parts {
        eprintln!("{}: {} dialogues (fraction {}, seed {})", p.source, p.count, p.fraction, p.seed);
    }
    eprintln!("{} dialogues", out.len());
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Res<()> {
    let corpus = read_corpus(&a.input)?;
    let out = sample_corpus(&corpus, a.fraction, a.seed).map_err(domain_err)?;
    write_native(&out, &a.output)?;
    eprintln!("kept {} of {} dialogues", out.len(), corpus.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::Concat(a) => cmd_concat(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Mix(a) => cmd_mix(a),
        Command::Sample(a) => cmd_sample(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Domain(m) | Failure::Format(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
