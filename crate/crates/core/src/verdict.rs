//! Verdicts, reports, evaluation metrics and annotated output.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::{EngineStats, Evaluation, Outcome};
use crate::dataset::{decimal_literal, parse_decimal, Schema};
use crate::document::{Block, ClaimSite, Document};
use crate::inference::{ClaimDistribution, ClaimModel, PriorsSnapshot};
use crate::query::{parse_sql_shape, render_query_nl, render_query_sql, AggFunction, QueryCandidate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Verified,
    Flagged,
    NoCandidate,
}

impl VerdictStatus {
    pub fn css_class(self) -> &'static str {
        match self {
            VerdictStatus::Verified => "verified",
            VerdictStatus::Flagged => "flagged",
            VerdictStatus::NoCandidate => "nocandidate",
        }
    }
}

/// When a claim counts as verified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// The most likely query matches.
    #[default]
    Top1,
    /// Some evaluated query matches.
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub sql: String,
    pub nl: String,
    pub probability: f64,
    pub value: Option<f64>,
    pub outcome: Outcome,
    pub query: QueryCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: usize,
    pub sentence: usize,
    /// Byte span of the claim within its sentence.
    pub span: [usize; 2],
    pub text: String,
    pub value: f64,
    pub is_percent: bool,
    pub status: VerdictStatus,
    pub correctness_probability: f64,
    pub best_value: Option<f64>,
    #[serde(default)]
    pub pinned: bool,
    /// Every weight was zero and probabilities fell back to uniform.
    #[serde(default)]
    pub uniform_fallback: bool,
    pub top_k: Vec<RankedCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub priors: PriorsSnapshot,
    /// SQL of each claim's most likely query, by claim id.
    pub top1: BTreeMap<usize, Option<String>>,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub claims: usize,
    pub candidates: usize,
    pub em_iterations: usize,
    pub converged: bool,
    pub restrict_columns: usize,
    pub engine: EngineStats,
    /// Only present when timing was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset_id: String,
    pub document_id: String,
    pub claims: Vec<Verdict>,
    pub priors_trace: Vec<TraceRecord>,
    pub stats: RunStats,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn claim(&self, id: usize) -> Option<&Verdict> {
        self.claims.iter().find(|v| v.id == id)
    }
}

/// Builds one verdict per modelled claim.
#[allow(clippy::too_many_arguments)]
pub fn assemble_verdicts(
    claims: &[ClaimSite],
    models: &[ClaimModel],
    distributions: &[ClaimDistribution],
    evaluations: &[Vec<Evaluation>],
    rule: DecisionRule,
    top_k: usize,
    schema: &Schema,
) -> Vec<Verdict> {
    models
        .iter()
        .zip(distributions)
        .zip(evaluations)
        .map(|((model, dist), evals)| {
            let claim = claims
                .iter()
                .find(|c| c.id == model.claim_id)
                .expect("model refers to a claim");
            let ranked = dist.ranked(&model.candidates);
            let correctness_probability: f64 = ranked
                .iter()
                .filter(|(i, _)| evals[*i].outcome == Outcome::Match)
                .fold(0.0, |acc, (_, p)| acc + p)
                .min(1.0);
            let status = match ranked.first() {
                None => VerdictStatus::NoCandidate,
                Some((i, _)) => {
                    let verified = match rule {
                        DecisionRule::Top1 => evals[*i].outcome == Outcome::Match,
                        DecisionRule::Any => evals.iter().any(|e| e.outcome == Outcome::Match),
                    };
                    if verified {
                        VerdictStatus::Verified
                    } else {
                        VerdictStatus::Flagged
                    }
                }
            };
            let top: Vec<RankedCandidate> = ranked
                .iter()
                .take(top_k)
                .map(|(i, p)| {
                    let q = &model.candidates[*i];
                    RankedCandidate {
                        sql: render_query_sql(q, schema).unwrap_or_default(),
                        nl: render_query_nl(q, schema),
                        probability: *p,
                        value: evals[*i].value,
                        outcome: evals[*i].outcome,
                        query: q.clone(),
                    }
                })
                .collect();
            Verdict {
                id: claim.id,
                sentence: claim.sentence,
                span: [claim.start, claim.end],
                text: claim.text.clone(),
                value: claim.claimed_value,
                is_percent: claim.is_percent,
                status,
                correctness_probability,
                best_value: ranked.first().and_then(|(i, _)| evals[*i].value),
                pinned: dist.pinned,
                uniform_fallback: dist.all_zero,
                top_k: top,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expected {
    Correct,
    Erroneous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub claim_id: usize,
    pub sql: String,
    pub expected: Expected,
}

/// Reference queries and labels per claim.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruth {
    pub entries: Vec<TruthEntry>,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ground truth: {0}")]
    Json(#[from] serde_json::Error),
}

impl GroundTruth {
    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Schema-free normal form of a query used to compare SQL texts: names are
/// lowercased and unqualified, numeric literals normalised and the order of
/// non-condition predicates ignored.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CanonicalQuery {
    pub function: AggFunction,
    pub target: Option<String>,
    pub condition: Option<(String, String)>,
    pub predicates: BTreeSet<(String, String)>,
}

fn unqualified(name: &str) -> String {
    name.rsplit('.').next().unwrap_or(name).to_lowercase()
}

fn normal_literal(v: &str) -> String {
    parse_decimal(v).map(decimal_literal).unwrap_or_else(|| v.to_string())
}

impl CanonicalQuery {
    pub fn from_sql(sql: &str) -> Option<Self> {
        let shape = parse_sql_shape(sql).ok()?;
        let target = if shape.function.is_row_share() {
            None
        } else {
            shape.argument.as_deref().map(unqualified)
        };
        let mut preds: Vec<(String, String)> = shape
            .conditions
            .iter()
            .map(|(c, v)| (unqualified(c), normal_literal(v)))
            .collect();
        let condition = if shape.function == AggFunction::ConditionalProbability && !preds.is_empty() {
            Some(preds.remove(0))
        } else {
            None
        };
        Some(CanonicalQuery {
            function: shape.function,
            target,
            condition,
            predicates: preds.into_iter().collect(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub ratio: f64,
    /// Truth entries whose claim has no verdict.
    pub unmatched: Vec<usize>,
}

/// Share of truth-covered claims whose `k` best candidates include the
/// reference query.
pub fn topk_coverage(verdicts: &[Verdict], truth: &GroundTruth, k: usize) -> Coverage {
    let mut hits = 0usize;
    let mut scored = 0usize;
    let mut unmatched = Vec::new();
    for entry in &truth.entries {
        let Some(v) = verdicts.iter().find(|v| v.id == entry.claim_id) else {
            unmatched.push(entry.claim_id);
            continue;
        };
        scored += 1;
        let Some(reference) = CanonicalQuery::from_sql(&entry.sql) else {
            continue;
        };
        if v.top_k
            .iter()
            .take(k)
            .any(|c| CanonicalQuery::from_sql(&c.sql).as_ref() == Some(&reference))
        {
            hits += 1;
        }
    }
    Coverage {
        ratio: if scored == 0 { 0.0 } else { hits as f64 / scored as f64 },
        unmatched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision and recall of flagging erroneous claims. NoCandidate verdicts
/// count as flagged only when `include_nocandidate` is set; otherwise they
/// are left out entirely.
pub fn precision_recall_f1(verdicts: &[Verdict], truth: &GroundTruth, include_nocandidate: bool) -> PrecisionRecall {
    let mut flagged = 0usize;
    let mut erroneous = 0usize;
    let mut both = 0usize;
    for entry in &truth.entries {
        let Some(v) = verdicts.iter().find(|v| v.id == entry.claim_id) else {
            continue;
        };
        let is_flagged = match v.status {
            VerdictStatus::Flagged => true,
            VerdictStatus::NoCandidate if include_nocandidate => true,
            VerdictStatus::NoCandidate => continue,
            VerdictStatus::Verified => false,
        };
        let is_erroneous = entry.expected == Expected::Erroneous;
        flagged += is_flagged as usize;
        erroneous += is_erroneous as usize;
        both += (is_flagged && is_erroneous) as usize;
    }
    let precision = if flagged == 0 {
        1.0
    } else {
        both as f64 / flagged as f64
    };
    let recall = if erroneous == 0 {
        1.0
    } else {
        both as f64 / erroneous as f64
    };
    PrecisionRecall {
        precision,
        recall,
        f1: f1(precision, recall),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub topk_coverage: BTreeMap<usize, f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub unmatched_truth: Vec<usize>,
}

pub fn compute_metrics(verdicts: &[Verdict], truth: &GroundTruth, ks: &[usize], include_nocandidate: bool) -> Metrics {
    let mut coverage = BTreeMap::new();
    let mut unmatched = Vec::new();
    for &k in ks {
        let c = topk_coverage(verdicts, truth, k);
        unmatched = c.unmatched;
        coverage.insert(k, c.ratio);
    }
    let pr = precision_recall_f1(verdicts, truth, include_nocandidate);
    Metrics {
        topk_coverage: coverage,
        precision: pr.precision,
        recall: pr.recall,
        f1: pr.f1,
        unmatched_truth: unmatched,
    }
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{}", crate::query::round_sig(v, 6))
    }
}

/// HTML rendering of the document with every claim wrapped in a span
/// carrying its status and top-1 query.
pub fn emit_markup(doc: &Document, verdicts: &[Verdict]) -> String {
    let mut by_sentence: BTreeMap<usize, Vec<&Verdict>> = BTreeMap::new();
    for v in verdicts {
        by_sentence.entry(v.sentence).or_default().push(v);
    }
    for list in by_sentence.values_mut() {
        list.sort_by_key(|v| v.span[0]);
    }
    let mut out = String::from("<article>\n");
    for block in &doc.blocks {
        match *block {
            Block::Heading(s) => {
                let sec = &doc.sections[s];
                let level = sec.level.clamp(1, 6);
                out.push_str(&format!("<h{level}>{}</h{level}>\n", escape_html(&sec.headline)));
            }
            Block::Paragraph(p) => {
                let sentences: Vec<String> = doc.paragraphs[p]
                    .sentences
                    .iter()
                    .map(|&si| {
                        let text = &doc.sentences[si].text;
                        let mut rendered = String::new();
                        let mut at = 0;
                        for v in by_sentence.get(&si).into_iter().flatten() {
                            let [start, end] = v.span;
                            if start < at || end > text.len() {
                                continue;
                            }
                            rendered.push_str(&escape_html(&text[at..start]));
                            let top = v.top_k.first();
                            rendered.push_str(&format!(
                                "<span class=\"claim {}\" data-claim-id=\"{}\" data-correctness-probability=\"{:.4}\" data-description=\"{}\" data-value=\"{}\">{}</span>",
                                v.status.css_class(),
                                v.id,
                                v.correctness_probability,
                                escape_html(top.map_or("", |t| t.nl.as_str())),
                                v.best_value.map(format_value).unwrap_or_default(),
                                escape_html(&text[start..end])
                            ));
                            at = end;
                        }
                        rendered.push_str(&escape_html(&text[at..]));
                        rendered
                    })
                    .collect();
                out.push_str(&format!("<p>{}</p>\n", sentences.join(" ")));
            }
        }
    }
    out.push_str("</article>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::{detect_claims, ingest_document, DocumentFormat};

    fn verdict(id: usize, status: VerdictStatus, sqls: &[&str]) -> Verdict {
        Verdict {
            id,
            sentence: 0,
            span: [0, 0],
            text: String::new(),
            value: 1.0,
            is_percent: false,
            status,
            correctness_probability: 0.5,
            best_value: Some(1.0),
            pinned: false,
            uniform_fallback: false,
            top_k: sqls
                .iter()
                .map(|s| RankedCandidate {
                    sql: s.to_string(),
                    nl: String::new(),
                    probability: 0.1,
                    value: None,
                    outcome: Outcome::Mismatch,
                    query: QueryCandidate::new(
                        AggFunction::Count,
                        crate::fragments::Target::Star(crate::dataset::TableId(0)),
                        vec![],
                    ),
                })
                .collect(),
        }
    }

    fn truth(entries: &[(usize, &str, Expected)]) -> GroundTruth {
        GroundTruth {
            entries: entries
                .iter()
                .map(|(id, sql, e)| TruthEntry {
                    claim_id: *id,
                    sql: sql.to_string(),
                    expected: *e,
                })
                .collect(),
        }
    }

    #[test]
    fn canonical_sql_forms() {
        let a = CanonicalQuery::from_sql("select count(*) from t where a = 'x' and b = 2.0").unwrap();
        let b = CanonicalQuery::from_sql("SELECT COUNT(*) FROM t WHERE t.b = '2' AND t.a = 'x'").unwrap();
        assert_eq!(a, b);
        let c1 =
            CanonicalQuery::from_sql("select conditional_probability(*) from t where a = 'x' and b = 'y'").unwrap();
        let c2 =
            CanonicalQuery::from_sql("select conditional_probability(*) from t where b = 'y' and a = 'x'").unwrap();
        assert_ne!(c1, c2);
    }

    #[test]
    fn coverage_examples() {
        let t = truth(&[(0, "select count(*) from t where a = 'x'", Expected::Correct)]);
        let v = vec![verdict(
            0,
            VerdictStatus::Verified,
            &[
                "select sum(v) from t",
                "select avg(v) from t",
                "select count(*) from t where a = 'x'",
            ],
        )];
        assert_eq!(topk_coverage(&v, &t, 1).ratio, 0.0);
        assert_eq!(topk_coverage(&v, &t, 3).ratio, 1.0);
        let miss = vec![verdict(0, VerdictStatus::Verified, &["select sum(v) from t"])];
        assert_eq!(topk_coverage(&miss, &t, 10).ratio, 0.0);
        let t2 = truth(&[
            (0, "select count(*) from t where a = 'x'", Expected::Correct),
            (1, "select count(*) from t", Expected::Correct),
            (7, "select count(*) from t", Expected::Correct),
        ]);
        let v2 = vec![
            verdict(0, VerdictStatus::Verified, &["select count(*) from t where a = 'x'"]),
            verdict(1, VerdictStatus::Verified, &["select sum(v) from t"]),
        ];
        let c = topk_coverage(&v2, &t2, 1);
        assert_eq!(c.ratio, 0.5);
        assert_eq!(c.unmatched, vec![7]);
    }

    #[test]
    fn precision_recall_examples() {
        let sql = "select count(*) from t";
        let labels: Vec<(usize, &str, Expected)> = (0..10)
            .map(|i| (i, sql, if i < 2 { Expected::Erroneous } else { Expected::Correct }))
            .collect();
        let t = truth(&labels);
        let flag = |ids: &[usize]| -> Vec<Verdict> {
            (0..10)
                .map(|i| {
                    verdict(
                        i,
                        if ids.contains(&i) {
                            VerdictStatus::Flagged
                        } else {
                            VerdictStatus::Verified
                        },
                        &[],
                    )
                })
                .collect()
        };
        let exact = precision_recall_f1(&flag(&[0, 1]), &t, false);
        assert_eq!((exact.precision, exact.recall, exact.f1), (1.0, 1.0, 1.0));
        let four = precision_recall_f1(&flag(&[0, 1, 5, 6]), &t, false);
        assert_eq!((four.precision, four.recall), (0.5, 1.0));
        assert!((four.f1 - 2.0 / 3.0).abs() < 1e-12);
        let none = precision_recall_f1(&flag(&[]), &t, false);
        assert_eq!((none.precision, none.recall, none.f1), (1.0, 0.0, 0.0));
    }

    #[test]
    fn report_round_trip() {
        let r = Report {
            dataset_id: "d".into(),
            document_id: "doc".into(),
            claims: vec![verdict(0, VerdictStatus::Flagged, &["select count(*) from t"])],
            priors_trace: vec![TraceRecord {
                iteration: 1,
                priors: PriorsSnapshot {
                    functions: BTreeMap::from([("count".into(), 0.1 + 0.2)]),
                    targets: BTreeMap::new(),
                    columns: BTreeMap::from([("t.a".into(), 1.0 / 3.0)]),
                },
                top1: BTreeMap::from([(0, Some("select count(*) from t".into()))]),
                delta: 0.25,
            }],
            stats: RunStats::default(),
        };
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn markup_wraps_claims() {
        let doc = ingest_document("# T\n\nThere were four bans.\n", DocumentFormat::Canonical).unwrap();
        let claims = detect_claims(&doc);
        let mut v = verdict(0, VerdictStatus::Verified, &["select count(*) from t"]);
        v.span = [claims[0].start, claims[0].end];
        v.best_value = Some(4.0);
        let html = emit_markup(&doc, &[v.clone()]);
        assert!(html.contains("<span class=\"claim verified\" data-claim-id=\"0\""));
        assert!(html.contains(">four</span>"));
        v.status = VerdictStatus::Flagged;
        let html = emit_markup(&doc, &[v]);
        assert!(html.contains("class=\"claim flagged\""));
        assert!(html.contains("data-value=\"4\""));
        let plain = emit_markup(&doc, &[]);
        assert!(plain.contains("<p>There were four bans.</p>"));
        assert!(!plain.contains("<span"));
    }
}
