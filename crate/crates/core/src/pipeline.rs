//! End-to-end verification: dataset preparation, claim modelling, EM and
//! report assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cube::{
    pick_scope, CostBudget, CubeEngine, CubeError, EngineOptions, EngineStats, EvalScope, GroupSizeRule,
};
use crate::dataset::{
    build_schema, load_csv, parse_data_dictionary, table_name_for, DataDictionary, DatasetError, Schema, SchemaSidecar,
};
use crate::document::{
    claim_keywords, detect_claims, ingest_document, ClaimSite, ContextAnchor, DistanceProvider, Document,
    DocumentError, DocumentFormat,
};
use crate::fragments::{
    build_index, Category, FragmentCatalog, FragmentId, FragmentIndex, KeywordSources, RelevanceRow, Target,
    DEFAULT_LITERAL_CAP,
};
use crate::inference::{init_uniform_priors, run_em, with_relevance_floor, ClaimModel, EmConfig, InferenceError};
use crate::lexicon::SynonymLexicon;
use crate::query::{enumerate_candidates, AggFunction, Predicate, QueryCandidate, QueryError, RoundingRule};
use crate::verdict::{assemble_verdicts, RankedCandidate, Report, RunStats, TraceRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("pinned query for claim {claim}")]
    Pin {
        claim: usize,
        #[source]
        source: QueryError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl PipelineError {
    /// Whether the error stems from the caller's inputs rather than a fault
    /// in the verification itself.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, PipelineError::Inference(_) | PipelineError::ThreadPool(_))
            && !matches!(self, PipelineError::Cube(CubeError::NotCovered))
    }
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    String::from_utf8(read(path)?).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

fn content_id(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Raw dataset inputs as uploaded or read from disk.
#[derive(Debug, Clone, Default)]
pub struct DatasetSource {
    /// `(table name, csv bytes)`.
    pub tables: Vec<(String, Vec<u8>)>,
    pub schema: Option<String>,
    pub dictionary: Option<String>,
    /// Extra synonym pairs, tab-separated.
    pub synonyms: Option<String>,
}

impl DatasetSource {
    /// Reads CSV files plus optional sidecars. With no CSV paths, the
    /// schema sidecar's table list is resolved next to the sidecar.
    pub fn from_paths(
        data: &[PathBuf],
        schema: Option<&Path>,
        dictionary: Option<&Path>,
        synonyms: Option<&Path>,
    ) -> Result<Self, PipelineError> {
        let schema_text = schema.map(read_text).transpose()?;
        let mut paths = data.to_vec();
        if paths.is_empty() {
            if let (Some(text), Some(path)) = (&schema_text, schema) {
                let sidecar = SchemaSidecar::parse(text)?;
                paths = sidecar.table_paths(path.parent().unwrap_or(Path::new(".")));
            }
        }
        let tables = paths
            .iter()
            .map(|p| Ok((table_name_for(p), read(p)?)))
            .collect::<Result<_, PipelineError>>()?;
        Ok(DatasetSource {
            tables,
            schema: schema_text,
            dictionary: dictionary.map(read_text).transpose()?,
            synonyms: synonyms.map(read_text).transpose()?,
        })
    }

    pub fn content_id(&self) -> String {
        let mut tables: Vec<&(String, Vec<u8>)> = self.tables.iter().collect();
        tables.sort_by(|a, b| a.0.cmp(&b.0));
        let mut parts: Vec<&[u8]> = Vec::new();
        for (name, bytes) in tables {
            parts.push(name.as_bytes());
            parts.push(bytes);
        }
        for opt in [&self.schema, &self.dictionary, &self.synonyms] {
            parts.push(opt.as_deref().unwrap_or("\u{0}").as_bytes());
        }
        content_id(&parts)
    }
}

/// An ingested dataset with its fragment catalog and retrieval index.
#[derive(Debug)]
pub struct Dataset {
    pub id: String,
    pub schema: Schema,
    pub dictionary: Option<DataDictionary>,
    pub catalog: FragmentCatalog,
    pub index: FragmentIndex,
}

impl Dataset {
    pub fn build(source: &DatasetSource, literal_cap: usize) -> Result<Self, PipelineError> {
        let tables = source
            .tables
            .iter()
            .map(|(name, bytes)| load_csv(bytes, name))
            .collect::<Result<Vec<_>, _>>()?;
        let fks = match &source.schema {
            Some(text) => SchemaSidecar::parse(text)?.foreign_keys()?,
            None => Vec::new(),
        };
        let schema = build_schema(tables, fks)?;
        let dictionary = source
            .dictionary
            .as_deref()
            .map(|d| parse_data_dictionary(d, &schema))
            .transpose()?;
        let mut sources = KeywordSources::builtin();
        sources.dictionary = dictionary.clone();
        if let Some(extra) = &source.synonyms {
            sources.synonyms.merge(SynonymLexicon::from_tsv(extra));
        }
        let catalog = FragmentCatalog::build(&schema, &sources, literal_cap);
        let index = build_index(&catalog);
        Ok(Dataset {
            id: source.content_id(),
            schema,
            dictionary,
            catalog,
            index,
        })
    }
}

/// A document with its optional dependency parses.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DocumentSource {
    pub text: String,
    pub parses: Option<String>,
}

impl DocumentSource {
    pub fn from_paths(doc: &Path, parses: Option<&Path>) -> Result<Self, PipelineError> {
        Ok(DocumentSource {
            text: read_text(doc)?,
            parses: parses.map(read_text).transpose()?,
        })
    }

    pub fn content_id(&self) -> String {
        content_id(&[
            self.text.as_bytes(),
            self.parses.as_deref().unwrap_or("\u{0}").as_bytes(),
        ])
    }
}

/// Tunable constants of a verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub p_t: f64,
    /// Fragments retrieved per category per claim.
    pub hits_k: usize,
    pub m_preds: usize,
    /// Row-pass budget for cube evaluation.
    pub budget: u64,
    pub rounding: RoundingRule,
    pub rule: crate::verdict::DecisionRule,
    pub max_iter: usize,
    pub tol: f64,
    pub group_rule: GroupSizeRule,
    pub anchor: ContextAnchor,
    pub format: DocumentFormat,
    pub merging: bool,
    pub caching: bool,
    /// Candidates listed per verdict in the report.
    pub top_k: usize,
    /// Candidates kept per claim in run details.
    pub detail_k: usize,
    pub include_timing: bool,
    /// Worker threads; `Some(1)` gives the single-threaded mode.
    pub threads: Option<usize>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            p_t: crate::inference::DEFAULT_P_TRUE,
            hits_k: 20,
            m_preds: crate::query::DEFAULT_MAX_PREDICATES,
            budget: crate::cube::DEFAULT_MAX_ROW_PASSES,
            rounding: RoundingRule::AnySigDigits,
            rule: crate::verdict::DecisionRule::Top1,
            max_iter: 20,
            tol: 1e-6,
            group_rule: GroupSizeRule::Min,
            anchor: ContextAnchor::Min,
            format: DocumentFormat::Auto,
            merging: true,
            caching: true,
            top_k: 10,
            detail_k: 100,
            include_timing: false,
            threads: None,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.p_t) {
            return bad("p_t must lie in [0, 1]");
        }
        if self.hits_k == 0 {
            return bad("hits_k must be positive");
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return bad("tol must be non-negative");
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        Ok(())
    }
}

/// User feedback on one claim of a finished run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// Index into the claim's ranked candidate list.
    Select(usize),
    Custom(CustomQuery),
    NotAClaim,
}

/// A query assembled from named fragments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomQuery {
    pub function: String,
    /// `*`, `table.*`, `column` or `table.column`.
    pub target: String,
    /// `(column, literal)` in order.
    #[serde(default)]
    pub predicates: Vec<(String, String)>,
}

impl CustomQuery {
    pub fn resolve(&self, schema: &Schema) -> Result<QueryCandidate, QueryError> {
        let function =
            AggFunction::from_name(&self.function).ok_or_else(|| QueryError::UnknownName(self.function.clone()))?;
        let target = resolve_target(&self.target, schema)?;
        let predicates = self
            .predicates
            .iter()
            .map(|(c, v)| {
                let column = schema
                    .resolve_column(c)
                    .ok_or_else(|| QueryError::UnknownName(c.clone()))?;
                let literal = schema
                    .column(column)
                    .literal_code(v)
                    .ok_or_else(|| QueryError::UnknownLiteral {
                        column: c.clone(),
                        literal: v.clone(),
                    })?;
                Ok(Predicate { column, literal })
            })
            .collect::<Result<Vec<_>, QueryError>>()?;
        Ok(QueryCandidate::new(function, target, predicates))
    }
}

fn resolve_target(name: &str, schema: &Schema) -> Result<Target, QueryError> {
    if name == "*" {
        let first = schema
            .table_ids()
            .next()
            .ok_or_else(|| QueryError::UnknownName(name.to_string()))?;
        return Ok(Target::Star(first));
    }
    if let Some(table) = name.strip_suffix(".*") {
        return schema
            .table_id(table)
            .map(Target::Star)
            .ok_or_else(|| QueryError::UnknownName(name.to_string()));
    }
    schema
        .resolve_column(name)
        .map(Target::Column)
        .ok_or_else(|| QueryError::UnknownName(name.to_string()))
}

/// A resolved pin for one claim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pin {
    Query(QueryCandidate),
    NotAClaim,
}

/// Pins by claim id, inherited by successor runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PinSpec {
    pub pins: BTreeMap<usize, Pin>,
}

/// Fragment in a claim's scope with its probability of appearing in the
/// claim's query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentMarginal {
    pub id: FragmentId,
    pub category: Category,
    pub label: String,
    pub score: f64,
    pub marginal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimDetails {
    pub claim_id: usize,
    pub candidates: Vec<RankedCandidate>,
    pub fragments: Vec<FragmentMarginal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieval,
    Scope,
    Em { iteration: usize },
    Assembly,
}

pub struct VerifyOutcome {
    pub report: Report,
    pub details: Vec<ClaimDetails>,
    pub scope: EvalScope,
}

/// Runs verification with optional progress notifications.
pub fn verify(
    dataset: &Dataset,
    document: &DocumentSource,
    config: &VerifyConfig,
    pins: &PinSpec,
    progress: Option<&(dyn Fn(Stage) + Sync)>,
) -> Result<VerifyOutcome, PipelineError> {
    config.validate()?;
    match config.threads {
        None => verify_inner(dataset, document, config, pins, progress),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| PipelineError::ThreadPool(e.to_string()))?
            .install(|| verify_inner(dataset, document, config, pins, progress)),
    }
}

/// Document structure, detected claims and their relevance rows.
pub struct PreparedClaims {
    pub document: Document,
    pub claims: Vec<ClaimSite>,
    pub rows: Vec<RelevanceRow>,
}

pub fn prepare_claims(
    dataset: &Dataset,
    source: &DocumentSource,
    config: &VerifyConfig,
    pins: &PinSpec,
) -> Result<PreparedClaims, PipelineError> {
    let document = ingest_document(&source.text, config.format)?;
    let claims: Vec<ClaimSite> = detect_claims(&document)
        .into_iter()
        .filter(|c| pins.pins.get(&c.id) != Some(&Pin::NotAClaim))
        .collect();
    let distance = match &source.parses {
        Some(p) => DistanceProvider::from_sidecar(p)?,
        None => DistanceProvider::surface(),
    };
    let rows = claims
        .iter()
        .map(|c| {
            let keywords = claim_keywords(c, &document, &distance, config.anchor);
            dataset.index.retrieve(&keywords, config.hits_k)
        })
        .collect();
    Ok(PreparedClaims { document, claims, rows })
}

/// Evaluation scope and per-claim candidate models for prepared claims.
pub struct Modelled {
    pub scope: EvalScope,
    pub models: Vec<ClaimModel>,
    /// Relevance rows with floor scores for unretrieved scoped fragments.
    pub rows: Vec<RelevanceRow>,
}

pub fn build_models(
    dataset: &Dataset,
    prepared: &PreparedClaims,
    config: &VerifyConfig,
    pins: &PinSpec,
) -> Result<Modelled, PipelineError> {
    let schema = &dataset.schema;
    let catalog = &dataset.catalog;
    let claims = &prepared.claims;
    let mut scope = pick_scope(
        &prepared.rows,
        catalog,
        schema,
        CostBudget {
            max_row_passes: config.budget,
        },
        config.m_preds,
        config.group_rule,
    )?;
    let mut pinned: BTreeMap<usize, QueryCandidate> = BTreeMap::new();
    for c in claims {
        if let Some(Pin::Query(q)) = pins.pins.get(&c.id) {
            q.validate(schema, config.m_preds.max(q.predicates.len()))
                .map_err(|source| PipelineError::Pin { claim: c.id, source })?;
            for p in &q.predicates {
                scope.add_literal(p.column, p.literal);
            }
            scope.targets.insert(q.target);
            pinned.insert(c.id, q.clone());
        }
    }

    let mut scoped_ids: Vec<FragmentId> = scope.functions.iter().map(|f| catalog.function_id(*f)).collect();
    scoped_ids.extend(schema.table_ids().filter_map(|t| catalog.target_id(Target::Star(t))));
    let mut models = Vec::with_capacity(claims.len());
    let mut floored_rows = Vec::with_capacity(claims.len());
    for (claim, row) in claims.iter().zip(&prepared.rows) {
        let mut extra = scoped_ids.clone();
        let pin = pinned.get(&claim.id);
        if let Some(q) = pin {
            extra.extend(query_fragments(q, catalog));
        }
        let row = with_relevance_floor(row, &extra, catalog);
        let mut candidates = enumerate_candidates(&row, &scope, catalog, schema, config.m_preds);
        let pin_index = pin.map(|q| {
            candidates
                .iter()
                .position(|c| crate::query::canonical_equal(c, q))
                .unwrap_or_else(|| {
                    candidates.push(q.clone());
                    candidates.len() - 1
                })
        });
        let mut model = ClaimModel::new(claim.id, candidates, &row, catalog)?;
        model.pinned = pin_index;
        models.push(model);
        floored_rows.push(row);
    }

    Ok(Modelled {
        scope,
        models,
        rows: floored_rows,
    })
}

fn query_fragments(q: &QueryCandidate, catalog: &FragmentCatalog) -> Vec<FragmentId> {
    let mut ids = vec![catalog.function_id(q.function)];
    ids.extend(catalog.target_id(q.target));
    ids.extend(
        q.predicates
            .iter()
            .filter_map(|p| catalog.predicate_id(p.column, p.literal)),
    );
    ids
}

fn verify_inner(
    dataset: &Dataset,
    source: &DocumentSource,
    config: &VerifyConfig,
    pins: &PinSpec,
    progress: Option<&(dyn Fn(Stage) + Sync)>,
) -> Result<VerifyOutcome, PipelineError> {
    let started = Instant::now();
    let notify = |s: Stage| {
        if let Some(p) = progress {
            p(s)
        }
    };
    let schema = &dataset.schema;
    let catalog = &dataset.catalog;
    notify(Stage::Retrieval);
    let prepared = prepare_claims(dataset, source, config, pins)?;
    let claims = &prepared.claims;

    notify(Stage::Scope);
    let Modelled {
        scope,
        models,
        rows: floored_rows,
    } = build_models(dataset, &prepared, config, pins)?;

    let engine = CubeEngine::new(
        schema,
        scope,
        EngineOptions {
            merging: config.merging,
            caching: config.caching,
            group_rule: config.group_rule,
            m_preds: config.m_preds,
        },
    );
    let initial = init_uniform_priors(engine.scope());
    let work: Vec<(&ClaimSite, &[QueryCandidate])> = models
        .iter()
        .map(|m| {
            let claim = claims.iter().find(|c| c.id == m.claim_id).expect("claim exists");
            (claim, m.candidates.as_slice())
        })
        .collect();
    let mut evaluations = Vec::new();
    let mut iteration = 0;
    let em = run_em(
        &models,
        initial,
        || -> Result<_, CubeError> {
            iteration += 1;
            notify(Stage::Em { iteration });
            evaluations = engine.evaluate(&work, config.rounding)?;
            Ok(evaluations
                .iter()
                .map(|e| e.iter().map(|x| x.outcome).collect())
                .collect())
        },
        &EmConfig {
            p_t: config.p_t,
            max_iter: config.max_iter,
            tol: config.tol,
        },
    )?;

    notify(Stage::Assembly);
    let verdicts = assemble_verdicts(
        claims,
        &models,
        &em.distributions,
        &evaluations,
        config.rule,
        config.top_k,
        schema,
    );
    let sql_of = |m: &ClaimModel, i: Option<usize>| {
        i.and_then(|i| crate::query::render_query_sql(&m.candidates[i], schema).ok())
    };
    let priors_trace = em
        .trace
        .iter()
        .map(|it| TraceRecord {
            iteration: it.iteration,
            priors: it.priors.snapshot(schema),
            top1: models
                .iter()
                .zip(&it.top1)
                .map(|(m, i)| (m.claim_id, sql_of(m, *i)))
                .collect(),
            delta: it.delta,
        })
        .collect();

    let details = models
        .iter()
        .zip(&em.distributions)
        .zip(&evaluations)
        .zip(&floored_rows)
        .map(|(((m, d), evals), row)| {
            let mut marginal: BTreeMap<FragmentId, f64> = BTreeMap::new();
            for (q, p) in m.candidates.iter().zip(&d.probabilities) {
                for id in query_fragments(q, catalog).into_iter().collect::<BTreeSet<_>>() {
                    *marginal.entry(id).or_insert(0.0) += p;
                }
            }
            let fragments = Category::ALL
                .iter()
                .flat_map(|&c| row.category(c).iter().map(move |(id, s)| (c, *id, *s)))
                .filter(|(_, id, _)| fragment_in_scope(*id, catalog, engine.scope()))
                .map(|(category, id, score)| FragmentMarginal {
                    id,
                    category,
                    label: catalog.label(id, schema),
                    score,
                    marginal: marginal.get(&id).copied().unwrap_or(0.0).min(1.0),
                })
                .collect();
            let candidates = d
                .ranked(&m.candidates)
                .into_iter()
                .take(config.detail_k)
                .map(|(i, p)| RankedCandidate {
                    sql: crate::query::render_query_sql(&m.candidates[i], schema).unwrap_or_default(),
                    nl: crate::query::render_query_nl(&m.candidates[i], schema),
                    probability: p,
                    value: evals[i].value,
                    outcome: evals[i].outcome,
                    query: m.candidates[i].clone(),
                })
                .collect();
            ClaimDetails {
                claim_id: m.claim_id,
                candidates,
                fragments,
            }
        })
        .collect();

    let engine_stats: EngineStats = engine.stats();
    let report = Report {
        dataset_id: dataset.id.clone(),
        document_id: source.content_id(),
        claims: verdicts,
        priors_trace,
        stats: RunStats {
            claims: claims.len(),
            candidates: models.iter().map(|m| m.candidates.len()).sum(),
            em_iterations: em.trace.len(),
            converged: em.converged,
            restrict_columns: engine.scope().restrict_columns.len(),
            engine: engine_stats,
            elapsed_ms: config.include_timing.then(|| started.elapsed().as_millis() as u64),
        },
    };
    Ok(VerifyOutcome {
        report,
        details,
        scope: engine.scope().clone(),
    })
}

fn fragment_in_scope(id: FragmentId, catalog: &FragmentCatalog, scope: &EvalScope) -> bool {
    use crate::fragments::FragmentKind;
    match catalog.kind(id) {
        FragmentKind::Function(f) => scope.functions.contains(&f),
        FragmentKind::AggColumn(t) => scope.targets.contains(&t),
        FragmentKind::Predicate { column, literal } => scope.keeps(column, literal),
    }
}

/// Default literal cap re-exported for loaders.
pub const LITERAL_CAP: usize = DEFAULT_LITERAL_CAP;
