//! `claimcheck` command-line tool.
//!
//! Exit codes: 0 on success, 2 for usage or input errors, 3 for internal
//! failures.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use claimcheck_core::document::ContextAnchor;
use claimcheck_core::fragments::Category;
use claimcheck_core::pipeline::{
    prepare_claims, verify, DatasetSource, DocumentSource, PinSpec, PipelineError, Stage, LITERAL_CAP,
};
use claimcheck_core::verdict::{compute_metrics, emit_markup, GroundTruth, MetricsError};
use claimcheck_core::{Dataset, DecisionRule, DocumentFormat, GroupSizeRule, Report, RoundingRule, VerifyConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

/// Marks errors caused by the caller's inputs.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

#[derive(Parser)]
#[command(
    name = "claimcheck",
    version,
    about = "Check numerical claims in text against a relational dataset"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the claims of a document and write a JSON report.
    Verify(VerifyArgs),
    /// Score a report against ground truth.
    Metrics(MetricsArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Show intermediate pipeline state.
    #[command(subcommand)]
    Inspect(Inspect),
}

#[derive(Args)]
struct DataArgs {
    /// CSV tables; the file stem is the table name.
    #[arg(long = "data", num_args = 1..)]
    data: Vec<PathBuf>,
    /// Schema sidecar with foreign keys (and table files when --data is omitted).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Data dictionary, tab-separated `table.column<TAB>description`.
    #[arg(long = "dict")]
    dictionary: Option<PathBuf>,
    /// Extra synonym pairs, tab-separated.
    #[arg(long)]
    synonyms: Option<PathBuf>,
}

#[derive(Args)]
struct DocArgs {
    #[arg(long)]
    doc: PathBuf,
    /// Dependency parses for the document's sentences.
    #[arg(long)]
    parses: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoundingArg {
    Any,
    Claim,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Top1,
    Any,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Auto,
    Html,
    Canonical,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    Min,
    LiteralMax,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnchorArg {
    Min,
    Max,
}

/// Overrides for the verification defaults.
#[derive(Args)]
struct ConfigArgs {
    /// Prior probability that a claim is correct.
    #[arg(long = "p-t", env = "CLAIMCHECK_P_T")]
    p_t: Option<f64>,
    /// Fragments retrieved per category per claim.
    #[arg(long = "hits")]
    hits: Option<usize>,
    /// Maximum predicates per query.
    #[arg(long = "m-preds")]
    m_preds: Option<usize>,
    /// Row-pass budget for cube evaluation.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, value_enum)]
    rounding: Option<RoundingArg>,
    #[arg(long, value_enum)]
    rule: Option<RuleArg>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long = "group-rule", value_enum)]
    group_rule: Option<GroupArg>,
    #[arg(long, value_enum)]
    anchor: Option<AnchorArg>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Candidates listed per claim in the report.
    #[arg(long = "top-k")]
    top_k: Option<usize>,
    /// Worker threads (1 runs single-threaded).
    #[arg(long, env = "CLAIMCHECK_THREADS")]
    threads: Option<usize>,
    /// Evaluate each query separately instead of merging into cubes.
    #[arg(long = "no-merging")]
    no_merging: bool,
    /// Disable the result cache between inference rounds.
    #[arg(long = "no-caching")]
    no_caching: bool,
    /// Record elapsed time in the report (makes output non-deterministic).
    #[arg(long)]
    timing: bool,
}

impl ConfigArgs {
    fn apply(&self, mut c: VerifyConfig) -> Result<VerifyConfig> {
        macro_rules! set {
            ($field:ident, $value:expr) => {
                if let Some(v) = $value {
                    c.$field = v;
                }
            };
        }
        set!(p_t, self.p_t);
        set!(hits_k, self.hits);
        set!(m_preds, self.m_preds);
        set!(budget, self.budget);
        set!(max_iter, self.max_iter);
        set!(tol, self.tol);
        set!(top_k, self.top_k);
        set!(
            rounding,
            self.rounding.map(|r| match r {
                RoundingArg::Any => RoundingRule::AnySigDigits,
                RoundingArg::Claim => RoundingRule::ClaimPrecision,
            })
        );
        set!(
            rule,
            self.rule.map(|r| match r {
                RuleArg::Top1 => DecisionRule::Top1,
                RuleArg::Any => DecisionRule::Any,
            })
        );
        set!(
            format,
            self.format.map(|f| match f {
                FormatArg::Auto => DocumentFormat::Auto,
                FormatArg::Html => DocumentFormat::Html,
                FormatArg::Canonical => DocumentFormat::Canonical,
            })
        );
        set!(
            group_rule,
            self.group_rule.map(|g| match g {
                GroupArg::Min => GroupSizeRule::Min,
                GroupArg::LiteralMax => GroupSizeRule::LiteralMax,
            })
        );
        set!(
            anchor,
            self.anchor.map(|a| match a {
                AnchorArg::Min => ContextAnchor::Min,
                AnchorArg::Max => ContextAnchor::Max,
            })
        );
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        c.merging &= !self.no_merging;
        c.caching &= !self.no_caching;
        c.include_timing |= self.timing;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    doc: DocArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Pins by claim id as JSON, e.g. `{"1": "not_a_claim"}`.
    #[arg(long)]
    pins: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write annotated HTML.
    #[arg(long)]
    markup: Option<PathBuf>,
    /// Also write ranked candidates and fragment marginals per claim.
    #[arg(long)]
    details: Option<PathBuf>,
    /// Print the per-iteration prior trace to stderr.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Cut-offs for top-k coverage.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    /// Count claims without candidates as flagged.
    #[arg(long = "include-nocandidate")]
    include_nocandidate: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "CLAIMCHECK_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[arg(long = "data-dir", env = "CLAIMCHECK_DATA_DIR", default_value = "claimcheck-data")]
    data_dir: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Subcommand)]
enum Inspect {
    /// List detected claims.
    Claims {
        #[command(flatten)]
        doc: DocArgs,
        #[arg(long, value_enum, default_value = "auto")]
        format: FormatArg,
    },
    /// Retrieved fragments with relevance scores for one claim.
    Fragments {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        doc: DocArgs,
        #[arg(long)]
        claim: usize,
        #[arg(long, default_value_t = 20)]
        hits: usize,
    },
}

fn load_dataset(args: &DataArgs) -> Result<Dataset> {
    if args.data.is_empty() && args.schema.is_none() {
        return Err(input_error("provide --data or a --schema listing the tables"));
    }
    let source = DatasetSource::from_paths(
        &args.data,
        args.schema.as_deref(),
        args.dictionary.as_deref(),
        args.synonyms.as_deref(),
    )?;
    Ok(Dataset::build(&source, LITERAL_CAP)?)
}

fn load_document(args: &DocArgs) -> Result<DocumentSource> {
    Ok(DocumentSource::from_paths(&args.doc, args.parses.as_deref())?)
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| input_error(format!("reading {}: {e}", path.display())))
}

fn write_output(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_verify(args: VerifyArgs) -> Result<()> {
    let config = args.config.apply(VerifyConfig::default())?;
    let pins: PinSpec = match &args.pins {
        Some(p) => serde_json::from_str(&read_input(p)?).map_err(|e| input_error(format!("pins: {e}")))?,
        None => PinSpec::default(),
    };
    let dataset = load_dataset(&args.data)?;
    let doc = load_document(&args.doc)?;
    let progress = |stage: Stage| log::info!("stage {stage:?}");
    let out = verify(&dataset, &doc, &config, &pins, Some(&progress))?;
    if args.trace {
        for record in &out.report.priors_trace {
            eprintln!("{}", serde_json::to_string(record)?);
        }
    }
    let json = out.report.to_json();
    match &args.out {
        Some(path) => write_output(path, &json)?,
        None => println!("{json}"),
    }
    if let Some(path) = &args.markup {
        let parsed = claimcheck_core::document::ingest_document(&doc.text, config.format)?;
        write_output(path, &emit_markup(&parsed, &out.report.claims))?;
    }
    if let Some(path) = &args.details {
        write_output(path, &serde_json::to_string_pretty(&out.details)?)?;
    }
    Ok(())
}

fn run_metrics(args: MetricsArgs) -> Result<()> {
    if args.k.contains(&0) {
        return Err(input_error("k values must be positive"));
    }
    let report = Report::from_json(&read_input(&args.report)?).map_err(|e| input_error(format!("report: {e}")))?;
    let truth = GroundTruth::from_json(&read_input(&args.truth)?)?;
    let m = compute_metrics(&report.claims, &truth, &args.k, args.include_nocandidate);
    println!("{}", serde_json::to_string_pretty(&m)?);
    Ok(())
}

fn run_serve(args: ServeArgs) -> Result<()> {
    let config = args.config.apply(VerifyConfig::default())?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime
        .block_on(claimcheck_service::serve(args.listen, &args.data_dir, config))
        .with_context(|| format!("serving on {}", args.listen))
}

fn run_inspect(cmd: Inspect) -> Result<()> {
    match cmd {
        Inspect::Claims { doc, format } => {
            let source = load_document(&doc)?;
            let format = match format {
                FormatArg::Auto => DocumentFormat::Auto,
                FormatArg::Html => DocumentFormat::Html,
                FormatArg::Canonical => DocumentFormat::Canonical,
            };
            let parsed = claimcheck_core::document::ingest_document(&source.text, format)?;
            let claims: Vec<_> = claimcheck_core::document::detect_claims(&parsed)
                .into_iter()
                .map(|c| {
                    json!({
                        "id": c.id,
                        "sentence": c.sentence,
                        "text": c.text,
                        "value": c.claimed_value,
                        "sig_digits": c.sig_digits,
                        "exact_word": c.exact_word,
                        "is_percent": c.is_percent,
                        "sentence_text": parsed.sentences[c.sentence].text,
                    })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&claims)?);
        }
        Inspect::Fragments { data, doc, claim, hits } => {
            let dataset = load_dataset(&data)?;
            let source = load_document(&doc)?;
            let config = VerifyConfig {
                hits_k: hits,
                ..VerifyConfig::default()
            };
            config.validate()?;
            let prepared = prepare_claims(&dataset, &source, &config, &PinSpec::default())?;
            let pos =
                prepared.claims.iter().position(|c| c.id == claim).ok_or_else(|| {
                    input_error(format!("no claim {claim}; the document has {}", prepared.claims.len()))
                })?;
            let row = &prepared.rows[pos];
            let mut out = serde_json::Map::new();
            out.insert("claim_id".into(), json!(claim));
            out.insert("text".into(), json!(prepared.claims[pos].text));
            for category in Category::ALL {
                let list: Vec<_> = row
                    .category(category)
                    .iter()
                    .map(|&(id, score)| json!({ "label": dataset.catalog.label(id, &dataset.schema), "score": score }))
                    .collect();
                out.insert(category.label().to_string(), json!(list));
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<InputError>() || cause.is::<MetricsError>() {
            return 2;
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return if p.is_input_error() { 2 } else { 3 };
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Verify(a) => run_verify(a),
        Command::Metrics(a) => run_metrics(a),
        Command::Serve(a) => run_serve(a),
        Command::Inspect(c) => run_inspect(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
