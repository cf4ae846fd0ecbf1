//! Document-level priors over query features and per-claim posteriors.
//!
//! A candidate's weight is the product of its feature priors, the relevance
//! scores of its fragments and an evaluation factor (`p_T` on a match,
//! `1 - p_T` otherwise). EM alternates between normalising those weights per
//! claim and re-estimating the priors from each claim's most likely query.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::{EvalScope, Outcome};
use crate::dataset::{ColumnId, Schema};
use crate::fragments::{Category, FragmentCatalog, FragmentId, RelevanceRow, Target};
use crate::query::{AggFunction, QueryCandidate};

pub const PRIOR_FLOOR: f64 = 1e-3;
pub const DEFAULT_P_TRUE: f64 = 0.999;
/// Unretrieved fragments in scope score this fraction of the smallest
/// retrieved score of their category.
pub const RELEVANCE_FLOOR_FACTOR: f64 = 0.5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InferenceError {
    #[error("fragment {0} has no relevance score for this claim")]
    MissingScore(FragmentId),
    #[error("query references a fragment missing from the catalog")]
    UnknownFragment,
}

/// Priors over functions, targets (each summing to one) and per-column
/// restriction probabilities (independent).
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub p_f: BTreeMap<AggFunction, f64>,
    pub p_a: BTreeMap<Target, f64>,
    pub p_r: BTreeMap<ColumnId, f64>,
}

impl Priors {
    pub fn function(&self, f: AggFunction) -> f64 {
        self.p_f.get(&f).copied().unwrap_or(PRIOR_FLOOR)
    }

    pub fn target(&self, t: Target) -> f64 {
        self.p_a.get(&t).copied().unwrap_or(PRIOR_FLOOR)
    }

    pub fn restriction(&self, c: ColumnId) -> f64 {
        self.p_r.get(&c).copied().unwrap_or(PRIOR_FLOOR)
    }

    /// Largest absolute difference over all cells present in either.
    pub fn linf_distance(&self, other: &Priors) -> f64 {
        fn diff<K: Ord>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> f64 {
            let keys: BTreeSet<&K> = a.keys().chain(b.keys()).collect();
            keys.into_iter()
                .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
                .fold(0.0, f64::max)
        }
        diff(&self.p_f, &other.p_f)
            .max(diff(&self.p_a, &other.p_a))
            .max(diff(&self.p_r, &other.p_r))
    }

    pub fn prior_factor(&self, q: &QueryCandidate) -> f64 {
        let mut w = self.function(q.function) * self.target(q.target);
        for p in &q.predicates {
            w *= self.restriction(p.column);
        }
        w
    }

    pub fn snapshot(&self, schema: &Schema) -> PriorsSnapshot {
        PriorsSnapshot {
            functions: self.p_f.iter().map(|(f, p)| (f.name().to_string(), *p)).collect(),
            targets: self.p_a.iter().map(|(t, p)| (target_label(*t, schema), *p)).collect(),
            columns: self.p_r.iter().map(|(c, p)| (schema.column_name(*c), *p)).collect(),
        }
    }
}

pub fn target_label(t: Target, schema: &Schema) -> String {
    match t {
        Target::Star(table) => format!("{}.*", schema.table(table).name()),
        Target::Column(c) => schema.column_name(c),
    }
}

/// Name-keyed view of priors for reports and traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorsSnapshot {
    pub functions: BTreeMap<String, f64>,
    pub targets: BTreeMap<String, f64>,
    pub columns: BTreeMap<String, f64>,
}

/// Uniform priors over the scope: 1/8 per function, 1/|targets| per target
/// and 1/|columns| per restrictable column.
pub fn init_uniform_priors(scope: &EvalScope) -> Priors {
    let uniform = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let pf = uniform(scope.functions.len());
    let pa = uniform(scope.targets.len());
    let pr = uniform(scope.restrict_columns.len());
    Priors {
        p_f: scope.functions.iter().map(|f| (*f, pf)).collect(),
        p_a: scope.targets.iter().map(|t| (*t, pa)).collect(),
        p_r: scope.restrict_columns.iter().map(|c| (*c, pr)).collect(),
    }
}

/// Adds every `extra` fragment missing from `row` at the category floor.
pub fn with_relevance_floor(row: &RelevanceRow, extra: &[FragmentId], catalog: &FragmentCatalog) -> RelevanceRow {
    let mut cats: [Vec<(FragmentId, f64)>; 3] = Category::ALL.map(|c| row.category(c).to_vec());
    let floors: [f64; 3] = Category::ALL.map(|c| {
        row.category(c)
            .iter()
            .map(|(_, s)| *s)
            .filter(|s| *s > 0.0)
            .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.min(s))))
            .map_or(1.0, |m| RELEVANCE_FLOOR_FACTOR * m)
    });
    for &id in extra {
        let c = catalog.kind(id).category().index();
        if !cats[c].iter().any(|(f, _)| *f == id) {
            cats[c].push((id, floors[c]));
        }
    }
    let [f, a, p] = cats;
    RelevanceRow::from_scores(f, a, p)
}

fn fragment_ids(q: &QueryCandidate, catalog: &FragmentCatalog) -> Result<Vec<FragmentId>, InferenceError> {
    let mut ids = vec![catalog.function_id(q.function)];
    ids.push(catalog.target_id(q.target).ok_or(InferenceError::UnknownFragment)?);
    for p in &q.predicates {
        ids.push(
            catalog
                .predicate_id(p.column, p.literal)
                .ok_or(InferenceError::UnknownFragment)?,
        );
    }
    Ok(ids)
}

/// Product of the relevance scores of a candidate's fragments.
pub fn relevance_factor(
    q: &QueryCandidate,
    rel: &RelevanceRow,
    catalog: &FragmentCatalog,
) -> Result<f64, InferenceError> {
    let mut w = 1.0;
    for id in fragment_ids(q, catalog)? {
        w *= rel.score(id).ok_or(InferenceError::MissingScore(id))?;
    }
    Ok(w)
}

pub fn evaluation_factor(outcome: Outcome, p_t: f64) -> f64 {
    match outcome {
        Outcome::Match => p_t,
        Outcome::Mismatch | Outcome::NoValue => 1.0 - p_t,
    }
}

/// Unnormalised posterior weight of one candidate.
pub fn candidate_weight(
    q: &QueryCandidate,
    rel: &RelevanceRow,
    catalog: &FragmentCatalog,
    priors: &Priors,
    outcome: Outcome,
    p_t: f64,
) -> Result<f64, InferenceError> {
    Ok(priors.prior_factor(q) * relevance_factor(q, rel, catalog)? * evaluation_factor(outcome, p_t))
}

/// One claim's candidate space with precomputed relevance products.
#[derive(Debug, Clone)]
pub struct ClaimModel {
    pub claim_id: usize,
    pub candidates: Vec<QueryCandidate>,
    pub relevance: Vec<f64>,
    /// Index of a candidate fixed by user feedback.
    pub pinned: Option<usize>,
}

impl ClaimModel {
    pub fn new(
        claim_id: usize,
        candidates: Vec<QueryCandidate>,
        rel: &RelevanceRow,
        catalog: &FragmentCatalog,
    ) -> Result<Self, InferenceError> {
        let relevance = candidates
            .iter()
            .map(|q| relevance_factor(q, rel, catalog))
            .collect::<Result<_, _>>()?;
        Ok(ClaimModel {
            claim_id,
            candidates,
            relevance,
            pinned: None,
        })
    }
}

/// Normalised distribution over one claim's candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimDistribution {
    /// Aligned with the model's candidates.
    pub probabilities: Vec<f64>,
    /// Index of the most likely candidate.
    pub ml: Option<usize>,
    /// Every weight was zero and the uniform fallback was used.
    pub all_zero: bool,
    pub pinned: bool,
}

impl ClaimDistribution {
    /// Candidate indices by descending probability, ties by candidate order.
    pub fn ranked(&self, candidates: &[QueryCandidate]) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self.probabilities.iter().copied().enumerate().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| candidates[a.0].cmp(&candidates[b.0])));
        v
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

fn argmax(probs: &[f64], candidates: &[QueryCandidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in probs.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let better = p.total_cmp(&probs[b]).then_with(|| candidates[b].cmp(&candidates[i]));
                if better == std::cmp::Ordering::Greater {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

pub fn claim_distribution(model: &ClaimModel, priors: &Priors, outcomes: &[Outcome], p_t: f64) -> ClaimDistribution {
    let n = model.candidates.len();
    if let Some(pin) = model.pinned {
        let mut probabilities = vec![0.0; n];
        probabilities[pin] = 1.0;
        return ClaimDistribution {
            probabilities,
            ml: Some(pin),
            all_zero: false,
            pinned: true,
        };
    }
    let weights: Vec<f64> = model
        .candidates
        .iter()
        .zip(&model.relevance)
        .zip(outcomes)
        .map(|((q, rel), o)| priors.prior_factor(q) * rel * evaluation_factor(*o, p_t))
        .collect();
    let total: f64 = weights.iter().sum();
    let (probabilities, all_zero) = if total > 0.0 && total.is_finite() {
        (weights.iter().map(|w| w / total).collect(), false)
    } else {
        (vec![if n == 0 { 0.0 } else { 1.0 / n as f64 }; n], n > 0)
    };
    let ml = argmax(&probabilities, &model.candidates);
    ClaimDistribution {
        probabilities,
        ml,
        all_zero,
        pinned: false,
    }
}

/// Posterior per claim. `outcomes[i]` is aligned with `models[i].candidates`.
pub fn e_step(models: &[ClaimModel], priors: &Priors, outcomes: &[Vec<Outcome>], p_t: f64) -> Vec<ClaimDistribution> {
    models
        .par_iter()
        .zip(outcomes.par_iter())
        .map(|(m, o)| claim_distribution(m, priors, o, p_t))
        .collect()
}

/// Re-estimates priors from each claim's most likely query. Function and
/// target shares are floored and renormalised; restriction shares are
/// floored only.
pub fn m_step(distributions: &[ClaimDistribution], models: &[ClaimModel], previous: &Priors) -> Priors {
    let n = models.len();
    if n == 0 {
        return previous.clone();
    }
    let mut f_count: BTreeMap<AggFunction, f64> = previous.p_f.keys().map(|k| (*k, 0.0)).collect();
    let mut a_count: BTreeMap<Target, f64> = previous.p_a.keys().map(|k| (*k, 0.0)).collect();
    let mut r_count: BTreeMap<ColumnId, f64> = previous.p_r.keys().map(|k| (*k, 0.0)).collect();
    for (d, m) in distributions.iter().zip(models) {
        let Some(ml) = d.ml else { continue };
        let q = &m.candidates[ml];
        *f_count.entry(q.function).or_insert(0.0) += 1.0;
        *a_count.entry(q.target).or_insert(0.0) += 1.0;
        for c in q.predicates.iter().map(|p| p.column).collect::<BTreeSet<_>>() {
            *r_count.entry(c).or_insert(0.0) += 1.0;
        }
    }
    let n = n as f64;
    fn normalised<K: Ord + Copy>(counts: &BTreeMap<K, f64>, n: f64) -> BTreeMap<K, f64> {
        let floored: BTreeMap<K, f64> = counts.iter().map(|(k, c)| (*k, (c / n).max(PRIOR_FLOOR))).collect();
        let total: f64 = floored.values().sum();
        floored.into_iter().map(|(k, v)| (k, v / total)).collect()
    }
    Priors {
        p_f: normalised(&f_count, n),
        p_a: normalised(&a_count, n),
        p_r: r_count
            .into_iter()
            .map(|(k, c)| (k, (c / n).clamp(PRIOR_FLOOR, 1.0)))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub p_t: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            p_t: DEFAULT_P_TRUE,
            max_iter: 20,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmIteration {
    pub iteration: usize,
    pub priors: Priors,
    /// Most likely candidate index per claim model.
    pub top1: Vec<Option<usize>>,
    /// L-infinity change of the priors in this iteration.
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub distributions: Vec<ClaimDistribution>,
    pub priors: Priors,
    pub outcomes: Vec<Vec<Outcome>>,
    pub trace: Vec<EmIteration>,
    pub converged: bool,
}

/// Alternates evaluation-refined E-steps and M-steps until the priors move
/// less than `tol` or `max_iter` is reached. `evaluate` is called once per
/// iteration; distributions returned reflect the final priors.
pub fn run_em<E>(
    models: &[ClaimModel],
    initial: Priors,
    mut evaluate: impl FnMut() -> Result<Vec<Vec<Outcome>>, E>,
    config: &EmConfig,
) -> Result<EmResult, E> {
    let mut priors = initial;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut outcomes = Vec::new();
    for iteration in 1..=config.max_iter.max(1) {
        outcomes = evaluate()?;
        let dists = e_step(models, &priors, &outcomes, config.p_t);
        let next = m_step(&dists, models, &priors);
        let delta = next.linf_distance(&priors);
        priors = next;
        trace.push(EmIteration {
            iteration,
            priors: priors.clone(),
            top1: dists.iter().map(|d| d.ml).collect(),
            delta,
        });
        if delta < config.tol || config.tol.is_infinite() {
            converged = true;
            break;
        }
    }
    let distributions = e_step(models, &priors, &outcomes, config.p_t);
    Ok(EmResult {
        distributions,
        priors,
        outcomes,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TableId;
    use crate::query::Predicate;

    fn col(i: u16) -> ColumnId {
        ColumnId {
            table: TableId(0),
            column: i,
        }
    }

    fn star() -> Target {
        Target::Star(TableId(0))
    }

    fn scope(targets: usize, columns: usize) -> EvalScope {
        let mut s = EvalScope {
            functions: AggFunction::ALL.into_iter().collect(),
            targets: BTreeSet::from([star()]),
            ..Default::default()
        };
        for i in 1..targets {
            s.targets.insert(Target::Column(col(100 + i as u16)));
        }
        s.restrict_columns = (0..columns as u16).map(col).collect();
        s
    }

    #[test]
    fn uniform_priors() {
        let p = init_uniform_priors(&scope(5, 7));
        assert!((p.restriction(col(0)) - 0.143).abs() < 5e-4);
        assert!((p.function(AggFunction::Count) - 0.125).abs() < 1e-12);
        assert!((p.function(AggFunction::Count) * p.target(star()) - 0.025).abs() < 1e-12);
    }

    fn model(cands: Vec<QueryCandidate>, rel: Vec<f64>) -> ClaimModel {
        ClaimModel {
            claim_id: 0,
            candidates: cands,
            relevance: rel,
            pinned: None,
        }
    }

    fn unit_priors() -> Priors {
        Priors {
            p_f: AggFunction::ALL.into_iter().map(|f| (f, 1.0)).collect(),
            p_a: BTreeMap::from([(star(), 1.0)]),
            p_r: BTreeMap::from([(col(0), 1.0)]),
        }
    }

    #[test]
    fn weight_arithmetic() {
        let q = QueryCandidate::new(AggFunction::Count, star(), vec![]);
        let m = model(vec![q.clone()], vec![1.0]);
        let d = |o| priors_weight(&m, &unit_priors(), o, 0.999);
        assert!((d(Outcome::Match) - 0.999).abs() < 1e-12);
        assert!((d(Outcome::Mismatch) - 0.001).abs() < 1e-12);
        assert!((d(Outcome::NoValue) - 0.001).abs() < 1e-12);

        let p = Priors {
            p_f: BTreeMap::from([(AggFunction::Count, 0.5)]),
            p_a: BTreeMap::from([(star(), 0.5)]),
            p_r: BTreeMap::from([(col(0), 0.4)]),
        };
        let q = QueryCandidate::new(
            AggFunction::Count,
            star(),
            vec![Predicate {
                column: col(0),
                literal: 0,
            }],
        );
        let w = p.prior_factor(&q) * (2.0 * 1.0 * 3.0) * evaluation_factor(Outcome::Match, 0.9);
        assert!((w - 0.54).abs() < 1e-12);
    }

    fn priors_weight(m: &ClaimModel, p: &Priors, o: Outcome, pt: f64) -> f64 {
        p.prior_factor(&m.candidates[0]) * m.relevance[0] * evaluation_factor(o, pt)
    }

    #[test]
    fn normalisation_pin_and_fallback() {
        let a = QueryCandidate::new(AggFunction::Count, star(), vec![]);
        let b = QueryCandidate::new(AggFunction::Percentage, star(), vec![]);
        let m = model(vec![a.clone(), b.clone()], vec![3.0, 1.0]);
        let d = claim_distribution(&m, &unit_priors(), &[Outcome::Match, Outcome::Match], 0.9);
        assert!((d.probabilities[0] - 0.75).abs() < 1e-12);
        assert!((d.probabilities[1] - 0.25).abs() < 1e-12);
        assert_eq!(d.ml, Some(0));

        let mut pinned = m.clone();
        pinned.pinned = Some(1);
        let d = claim_distribution(&pinned, &unit_priors(), &[Outcome::Match, Outcome::Match], 0.9);
        assert_eq!(d.probabilities, vec![0.0, 1.0]);

        let zero = model(vec![a, b], vec![0.0, 0.0]);
        let d = claim_distribution(&zero, &unit_priors(), &[Outcome::Match, Outcome::Match], 0.9);
        assert!(d.all_zero);
        assert_eq!(d.probabilities, vec![0.5, 0.5]);
    }

    #[test]
    fn m_step_counts() {
        let games = col(0);
        let other = col(1);
        let prev = init_uniform_priors(&scope(1, 2));
        let with = QueryCandidate::new(
            AggFunction::Count,
            star(),
            vec![Predicate {
                column: games,
                literal: 0,
            }],
        );
        let without = QueryCandidate::new(AggFunction::Count, star(), vec![]);
        let models = vec![
            model(vec![with.clone()], vec![1.0]),
            model(vec![with], vec![1.0]),
            model(vec![without], vec![1.0]),
        ];
        let dists: Vec<ClaimDistribution> = models
            .iter()
            .map(|m| claim_distribution(m, &prev, &[Outcome::Match], 0.9))
            .collect();
        let p = m_step(&dists, &models, &prev);
        assert!((p.restriction(games) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.restriction(other), PRIOR_FLOOR);
        let f_norm = 1.0 + 7.0 * PRIOR_FLOOR;
        assert!((p.function(AggFunction::Count) - 1.0 / f_norm).abs() < 1e-12);
        assert!((p.function(AggFunction::Max) - PRIOR_FLOOR / f_norm).abs() < 1e-12);
        assert!((p.p_f.values().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((p.p_a.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn em_single_candidate_and_infinite_tol() {
        let q = QueryCandidate::new(AggFunction::Count, star(), vec![]);
        let models = vec![model(vec![q], vec![1.0])];
        let s = scope(1, 1);
        let ok = || Ok::<_, ()>(vec![vec![Outcome::Match]]);
        let r = run_em(&models, init_uniform_priors(&s), ok, &EmConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.distributions[0].probabilities, vec![1.0]);
        // priors settle after the first update; the second confirms it
        assert_eq!(r.trace.len(), 2);
        assert!(r.trace[1].delta < 1e-12);

        let cfg = EmConfig {
            tol: f64::INFINITY,
            ..EmConfig::default()
        };
        let r = run_em(&models, init_uniform_priors(&s), ok, &cfg).unwrap();
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn relevance_floor_fills_missing() {
        use crate::dataset::{build_schema, load_csv};
        let t = load_csv(b"a,b\nx,1\n", "t").unwrap();
        let s = build_schema(vec![t], vec![]).unwrap();
        let catalog = FragmentCatalog::build(&s, &crate::fragments::KeywordSources::builtin(), 10);
        let star_id = catalog.target_id(star()).unwrap();
        let b = s.resolve_column("b").unwrap();
        let b_id = catalog.target_id(Target::Column(b)).unwrap();
        let a = s.resolve_column("a").unwrap();
        let ax = catalog.predicate_id(a, 0).unwrap();
        let b1 = catalog.predicate_id(b, 0).unwrap();
        let f_count = catalog.function_id(AggFunction::Count);
        let f_sum = catalog.function_id(AggFunction::Sum);
        let f_avg = catalog.function_id(AggFunction::Avg);
        let row = RelevanceRow::from_scores(vec![(f_sum, 2.0), (f_avg, 0.5)], vec![(b_id, 3.0)], vec![(ax, 4.0)]);
        let filled = with_relevance_floor(&row, &[f_count, f_sum, star_id, b1], &catalog);
        assert_eq!(filled.score(f_count), Some(0.25));
        assert_eq!(filled.score(f_sum), Some(2.0));
        assert_eq!(filled.score(star_id), Some(1.5));
        assert_eq!(filled.score(b1), Some(2.0));
        assert_eq!(filled.score(ax), Some(4.0));
        let empty = with_relevance_floor(&RelevanceRow::default(), &[f_count], &catalog);
        assert_eq!(empty.score(f_count), Some(1.0));
    }
}
