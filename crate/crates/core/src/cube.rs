//! Merged cube evaluation of query candidates with a cross-iteration cache.
//!
//! A cube over dimension columns `G` holds one aggregate per assignment of
//! each dimension to a kept literal, `Default` (any other value) or `All`.
//! Every candidate whose predicate columns are a subset of `G` is answered
//! by a single lookup, and one scan computes all aggregates that share the
//! same dimensions and joined relation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::dataset::{join_plan, ColumnId, JoinedView, Schema, TableId};
use crate::document::ClaimSite;
use crate::fragments::{Category, FragmentCatalog, RelevanceRow, Target};
use crate::query::{decimal_to_f64, round_matches, AggFunction, QueryCandidate, RoundingRule};

pub const DEFAULT_MAX_ROW_PASSES: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CubeError {
    #[error("cost budget {budget} cannot afford a single cube pass (needs {needed})")]
    BudgetTooSmall { needed: u64, budget: u64 },
    #[error("{function} over non-numeric target")]
    TypeMismatch { function: AggFunction },
    #[error("no computed cube covers the candidate")]
    NotCovered,
    #[error("tables cannot be joined: {0}")]
    Disconnected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBudget {
    pub max_row_passes: u64,
}

impl Default for CostBudget {
    fn default() -> Self {
        CostBudget {
            max_row_passes: DEFAULT_MAX_ROW_PASSES,
        }
    }
}

/// How many dimensions each cube gets given `x` restrictable columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSizeRule {
    /// `min(m, x)`.
    #[default]
    Min,
    /// `max(m, x - 1)`, capped at `x`.
    LiteralMax,
}

impl GroupSizeRule {
    pub fn group_size(self, m: usize, x: usize) -> usize {
        match self {
            GroupSizeRule::Min => m.min(x),
            GroupSizeRule::LiteralMax => m.max(x.saturating_sub(1)).min(x),
        }
    }
}

/// Functions, targets, restrictable columns and kept literals evaluated for
/// a whole document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalScope {
    pub functions: BTreeSet<AggFunction>,
    pub targets: BTreeSet<Target>,
    /// Descending by marginal relevance.
    pub restrict_columns: Vec<ColumnId>,
    pub kept: BTreeMap<ColumnId, BTreeSet<u32>>,
}

impl EvalScope {
    pub fn keeps(&self, column: ColumnId, literal: u32) -> bool {
        self.restrict_columns.contains(&column) && self.kept.get(&column).is_some_and(|k| k.contains(&literal))
    }

    /// Ensures a literal is evaluated (used for user-specified queries).
    pub fn add_literal(&mut self, column: ColumnId, literal: u32) {
        if !self.restrict_columns.contains(&column) {
            self.restrict_columns.push(column);
        }
        self.kept.entry(column).or_default().insert(literal);
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u64, |acc, i| acc.saturating_mul((n - i) as u64) / (i as u64 + 1))
}

/// Number of (basis function, target) aggregates a scope needs.
fn aggregate_count(functions: &BTreeSet<AggFunction>, targets: &BTreeSet<Target>, schema: &Schema) -> u64 {
    let mut pairs = BTreeSet::new();
    for &f in functions {
        for &t in targets {
            if let Some(b) = basis(f, t, schema) {
                pairs.insert(b);
            }
        }
    }
    pairs.len().max(1) as u64
}

/// Cost estimate: cube keys times total rows.
pub fn estimate_cost(
    schema: &Schema,
    functions: &BTreeSet<AggFunction>,
    targets: &BTreeSet<Target>,
    restrict: usize,
    m_preds: usize,
    rule: GroupSizeRule,
) -> u64 {
    let rows: u64 = schema
        .table_ids()
        .map(|t| schema.table(t).row_count() as u64)
        .sum::<u64>()
        .max(1);
    let groups = binomial(restrict, rule.group_size(m_preds, restrict));
    groups
        .saturating_mul(aggregate_count(functions, targets, schema))
        .saturating_mul(rows)
}

/// Builds the evaluation scope from per-claim relevance rows (each already
/// cut to the retrieval depth). Columns enter in descending order of their
/// maximum per-claim relevance share until the cost budget would be exceeded.
pub fn pick_scope(
    rows: &[RelevanceRow],
    catalog: &FragmentCatalog,
    schema: &Schema,
    budget: CostBudget,
    m_preds: usize,
    rule: GroupSizeRule,
) -> Result<EvalScope, CubeError> {
    let functions: BTreeSet<AggFunction> = AggFunction::ALL.into_iter().collect();
    let mut targets: BTreeSet<Target> = schema.table_ids().map(Target::Star).collect();
    let mut marginal: BTreeMap<ColumnId, f64> = BTreeMap::new();
    let mut kept: BTreeMap<ColumnId, BTreeSet<u32>> = BTreeMap::new();
    for row in rows {
        targets.extend(
            row.category(Category::AggColumn)
                .iter()
                .filter_map(|(id, _)| catalog.target(*id)),
        );
        let preds = row.category(Category::Predicate);
        let total: f64 = preds.iter().map(|(_, s)| s).sum();
        let mut per_column: BTreeMap<ColumnId, f64> = BTreeMap::new();
        for (id, score) in preds {
            if let Some((column, literal)) = catalog.predicate(*id) {
                *per_column.entry(column).or_insert(0.0) += score / total;
                kept.entry(column).or_default().insert(literal);
            }
        }
        for (c, m) in per_column {
            let e = marginal.entry(c).or_insert(0.0);
            *e = e.max(m);
        }
    }
    let mut columns: Vec<(ColumnId, f64)> = marginal.into_iter().collect();
    columns.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let base = estimate_cost(schema, &functions, &targets, 0, m_preds, rule);
    if base > budget.max_row_passes {
        return Err(CubeError::BudgetTooSmall {
            needed: base,
            budget: budget.max_row_passes,
        });
    }
    let mut restrict = Vec::new();
    for (c, _) in columns {
        if estimate_cost(schema, &functions, &targets, restrict.len() + 1, m_preds, rule) > budget.max_row_passes {
            break;
        }
        restrict.push(c);
    }
    kept.retain(|c, _| restrict.contains(c));
    Ok(EvalScope {
        functions,
        targets,
        restrict_columns: restrict,
        kept,
    })
}

/// A dimension's value in a cube assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DimValue {
    Literal(u32),
    /// Any value outside the kept set, or a missing cell.
    Default,
    /// No restriction on this dimension.
    All,
}

/// Maps each cell to its kept literal or the default sentinel.
pub fn in_or_default(codes: &[Option<u32>], kept: &BTreeSet<u32>) -> Vec<DimValue> {
    codes
        .iter()
        .map(|c| match c {
            Some(c) if kept.contains(c) => DimValue::Literal(*c),
            _ => DimValue::Default,
        })
        .collect()
}

type DimKey = SmallVec<[DimValue; 4]>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CubeKey {
    pub function: AggFunction,
    pub target: Target,
    /// Sorted.
    pub dims: Vec<ColumnId>,
    /// Kept literals per dimension, aligned with `dims`.
    pub kept: Vec<Vec<u32>>,
}

/// Aggregates for every non-empty assignment; empty groups read as 0 for
/// counts and as no value otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeResult {
    pub function: AggFunction,
    pub dims: Vec<ColumnId>,
    values: HashMap<DimKey, Decimal>,
}

impl CubeResult {
    pub fn get(&self, assignment: &[DimValue]) -> Option<Decimal> {
        match self.values.get(assignment) {
            Some(v) => Some(*v),
            None if matches!(self.function, AggFunction::Count | AggFunction::CountDistinct) => Some(Decimal::ZERO),
            None => None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[DimValue], Decimal)> {
        self.values.iter().map(|(k, v)| (k.as_slice(), *v))
    }
}

/// Maps a query's function and target onto the aggregate that answers it.
/// Row shares are answered from the row count of the target's table.
pub fn basis(function: AggFunction, target: Target, schema: &Schema) -> Option<(AggFunction, Target)> {
    match (function, target) {
        (f, t) if f.is_row_share() => Some((AggFunction::Count, Target::Star(t.table()))),
        (AggFunction::Count, t) => Some((AggFunction::Count, t)),
        (AggFunction::CountDistinct, Target::Star(_)) => None,
        (AggFunction::CountDistinct, t) => Some((AggFunction::CountDistinct, t)),
        (f, Target::Column(c)) if schema.column(c).is_numeric() => Some((f, Target::Column(c))),
        _ => None,
    }
}

#[derive(Debug, Clone, Default)]
struct TargetAcc {
    rows: u64,
    sum: Decimal,
    min: Option<Decimal>,
    max: Option<Decimal>,
    distinct: Option<BTreeSet<u32>>,
}

impl TargetAcc {
    fn merge(&mut self, other: &TargetAcc) {
        self.rows += other.rows;
        self.sum += other.sum;
        self.min = match (self.min, other.min) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.max = match (self.max, other.max) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        if let (Some(d), Some(o)) = (&mut self.distinct, &other.distinct) {
            d.extend(o.iter().copied());
        }
    }
}

/// One scan over `view` grouping by the mapped dimension tuple, followed by
/// a roll-up over all `2^|dims|` subsets of dimensions set to `All`.
/// Results are returned in the order of `aggregates`.
pub fn compute_cube(
    view: &JoinedView,
    schema: &Schema,
    dims: &[ColumnId],
    kept: &[&BTreeSet<u32>],
    aggregates: &[(AggFunction, Target)],
) -> Result<Vec<CubeResult>, CubeError> {
    let mut targets: Vec<Target> = Vec::new();
    let mut wants_distinct: Vec<bool> = Vec::new();
    for &(f, t) in aggregates {
        if f.needs_numeric_target() && !matches!(t, Target::Column(c) if schema.column(c).is_numeric()) {
            return Err(CubeError::TypeMismatch { function: f });
        }
        let i = match targets.iter().position(|x| *x == t) {
            Some(i) => i,
            None => {
                targets.push(t);
                wants_distinct.push(false);
                targets.len() - 1
            }
        };
        if f == AggFunction::CountDistinct {
            wants_distinct[i] = true;
        }
    }
    let pos = |table: TableId| view.position(table).expect("view covers table");
    let dim_pos: Vec<usize> = dims.iter().map(|d| pos(d.table)).collect();
    let target_pos: Vec<usize> = targets.iter().map(|t| pos(t.table())).collect();

    let mut base: HashMap<DimKey, Vec<TargetAcc>> = HashMap::new();
    let fresh: Vec<TargetAcc> = wants_distinct
        .iter()
        .map(|&d| TargetAcc {
            distinct: d.then(BTreeSet::new),
            ..Default::default()
        })
        .collect();
    for row in 0..view.len() {
        let key: DimKey = dims
            .iter()
            .zip(&dim_pos)
            .zip(kept)
            .map(|((d, &p), k)| match schema.column(*d).code(view.base_row(row, p)) {
                Some(c) if k.contains(&c) => DimValue::Literal(c),
                _ => DimValue::Default,
            })
            .collect();
        let accs = base.entry(key).or_insert_with(|| fresh.clone());
        for (i, t) in targets.iter().enumerate() {
            let r = view.base_row(row, target_pos[i]);
            let acc = &mut accs[i];
            match t {
                Target::Star(_) => acc.rows += 1,
                Target::Column(c) => {
                    let col = schema.column(*c);
                    let Some(code) = col.code(r) else { continue };
                    acc.rows += 1;
                    if let Some(d) = &mut acc.distinct {
                        d.insert(code);
                    }
                    if let Some(v) = col.number(r) {
                        acc.sum += v;
                        acc.min = Some(acc.min.map_or(v, |m| m.min(v)));
                        acc.max = Some(acc.max.map_or(v, |m| m.max(v)));
                    }
                }
            }
        }
    }

    let n = dims.len();
    let mut rolled: HashMap<DimKey, Vec<TargetAcc>> = HashMap::new();
    for mask in 0u32..(1 << n) {
        for (key, accs) in &base {
            let mut k = key.clone();
            for (i, v) in k.iter_mut().enumerate() {
                if mask & (1 << i) != 0 {
                    *v = DimValue::All;
                }
            }
            match rolled.get_mut(&k) {
                Some(existing) => {
                    for (e, a) in existing.iter_mut().zip(accs) {
                        e.merge(a);
                    }
                }
                None => {
                    rolled.insert(k, accs.clone());
                }
            }
        }
    }

    let mut out = Vec::with_capacity(aggregates.len());
    for &(f, t) in aggregates {
        let i = targets.iter().position(|x| *x == t).expect("target registered");
        let numeric = |acc: &TargetAcc| acc.rows > 0 && acc.min.is_some();
        let values: HashMap<DimKey, Decimal> = rolled
            .iter()
            .filter_map(|(k, accs)| {
                let acc = &accs[i];
                let v = match f {
                    AggFunction::Count => Some(Decimal::from(acc.rows)),
                    AggFunction::CountDistinct => Some(Decimal::from(acc.distinct.as_ref().map_or(0, |d| d.len()))),
                    AggFunction::Sum => numeric(acc).then_some(acc.sum),
                    AggFunction::Avg => numeric(acc).then(|| acc.sum / Decimal::from(acc.rows)),
                    AggFunction::Min => acc.min,
                    AggFunction::Max => acc.max,
                    AggFunction::Percentage | AggFunction::ConditionalProbability => None,
                };
                v.map(|v| (k.clone(), v))
            })
            .collect();
        out.push(CubeResult {
            function: f,
            dims: dims.to_vec(),
            values,
        });
    }
    Ok(out)
}

/// Cube results shared across EM iterations.
#[derive(Debug, Default)]
pub struct ResultCache {
    map: RwLock<HashMap<CubeKey, Arc<CubeResult>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ResultCache {
    pub fn get(&self, key: &CubeKey) -> Option<Arc<CubeResult>> {
        let r = self.map.read().expect("cache lock").get(key).cloned();
        match r {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        r
    }

    pub fn contains(&self, key: &CubeKey) -> bool {
        self.map.read().expect("cache lock").contains_key(key)
    }

    pub fn put(&self, key: CubeKey, value: Arc<CubeResult>) {
        self.map.write().expect("cache lock").entry(key).or_insert(value);
    }

    pub fn clear(&self) {
        self.map.write().expect("cache lock").clear();
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineOptions {
    /// Compute all aggregates sharing dimensions and relation in one scan.
    pub merging: bool,
    /// Keep cube results across evaluation rounds.
    pub caching: bool,
    pub group_rule: GroupSizeRule,
    pub m_preds: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            merging: true,
            caching: true,
            group_rule: GroupSizeRule::Min,
            m_preds: crate::query::DEFAULT_MAX_PREDICATES,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    /// Scans over joined data.
    pub cube_computations: u64,
    /// Cube keys produced by those scans.
    pub cube_keys: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub lookups: u64,
    pub evaluation_rounds: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Match,
    Mismatch,
    NoValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value: Option<f64>,
    pub outcome: Outcome,
}

/// Evaluates candidates for one document run against fixed scope.
pub struct CubeEngine<'a> {
    schema: &'a Schema,
    scope: EvalScope,
    options: EngineOptions,
    groups: Vec<Vec<ColumnId>>,
    cache: ResultCache,
    views: Mutex<HashMap<BTreeSet<TableId>, Arc<JoinedView>>>,
    computations: AtomicU64,
    keys: AtomicU64,
    lookups: AtomicU64,
    rounds: AtomicU64,
}

impl<'a> CubeEngine<'a> {
    pub fn new(schema: &'a Schema, scope: EvalScope, options: EngineOptions) -> Self {
        let x = scope.restrict_columns.len();
        let n = options.group_rule.group_size(options.m_preds, x);
        let mut groups = Vec::new();
        combinations(&scope.restrict_columns, n, 0, &mut Vec::new(), &mut groups);
        for g in &mut groups {
            g.sort();
        }
        CubeEngine {
            schema,
            scope,
            options,
            groups,
            cache: ResultCache::default(),
            views: Mutex::new(HashMap::new()),
            computations: AtomicU64::new(0),
            keys: AtomicU64::new(0),
            lookups: AtomicU64::new(0),
            rounds: AtomicU64::new(0),
        }
    }

    pub fn scope(&self) -> &EvalScope {
        &self.scope
    }

    /// Column groups iterated for cube dimensions.
    pub fn groups(&self) -> &[Vec<ColumnId>] {
        &self.groups
    }

    pub fn stats(&self) -> EngineStats {
        EngineStats {
            cube_computations: self.computations.load(Ordering::Relaxed),
            cube_keys: self.keys.load(Ordering::Relaxed),
            cache_hits: self.cache.hits(),
            cache_misses: self.cache.misses(),
            lookups: self.lookups.load(Ordering::Relaxed),
            evaluation_rounds: self.rounds.load(Ordering::Relaxed),
        }
    }

    fn view(&self, tables: &BTreeSet<TableId>) -> Result<Arc<JoinedView>, CubeError> {
        let mut views = self.views.lock().expect("view lock");
        if let Some(v) = views.get(tables) {
            return Ok(v.clone());
        }
        let plan = join_plan(self.schema, tables).map_err(|e| CubeError::Disconnected(e.to_string()))?;
        let v = Arc::new(JoinedView::materialize(self.schema, &plan));
        views.insert(tables.clone(), v.clone());
        Ok(v)
    }

    fn kept_for(&self, dims: &[ColumnId]) -> Vec<Vec<u32>> {
        dims.iter()
            .map(|d| {
                self.scope
                    .kept
                    .get(d)
                    .map(|k| k.iter().copied().collect())
                    .unwrap_or_default()
            })
            .collect()
    }

    /// Dimensions answering a candidate: the first group containing its
    /// predicate columns over the same relation, else exactly those columns.
    pub fn dims_for(&self, q: &QueryCandidate) -> Vec<ColumnId> {
        let relation = q.tables();
        let cols: BTreeSet<ColumnId> = q.predicates.iter().map(|p| p.column).collect();
        for g in &self.groups {
            if !cols.iter().all(|c| g.contains(c)) {
                continue;
            }
            let mut tables: BTreeSet<TableId> = g.iter().map(|c| c.table).collect();
            tables.insert(q.target.table());
            if tables == relation {
                return g.clone();
            }
        }
        cols.into_iter().collect()
    }

    fn cube(&self, function: AggFunction, target: Target, dims: &[ColumnId]) -> Result<Arc<CubeResult>, CubeError> {
        let key = CubeKey {
            function,
            target,
            dims: dims.to_vec(),
            kept: self.kept_for(dims),
        };
        if let Some(r) = self.cache.get(&key) {
            return Ok(r);
        }
        let mut relation: BTreeSet<TableId> = dims.iter().map(|c| c.table).collect();
        relation.insert(target.table());
        let aggregates: Vec<(AggFunction, Target)> = if self.options.merging {
            self.mergeable(dims, &relation)
        } else {
            vec![(function, target)]
        };
        let view = self.view(&relation)?;
        let kept_sets: Vec<BTreeSet<u32>> = key.kept.iter().map(|k| k.iter().copied().collect()).collect();
        let kept_refs: Vec<&BTreeSet<u32>> = kept_sets.iter().collect();
        let results = compute_cube(&view, self.schema, dims, &kept_refs, &aggregates)?;
        self.computations.fetch_add(1, Ordering::Relaxed);
        self.keys.fetch_add(results.len() as u64, Ordering::Relaxed);
        let mut wanted = None;
        for ((f, t), r) in aggregates.into_iter().zip(results) {
            let r = Arc::new(r);
            if f == function && t == target {
                wanted = Some(r.clone());
            }
            self.cache.put(
                CubeKey {
                    function: f,
                    target: t,
                    dims: dims.to_vec(),
                    kept: key.kept.clone(),
                },
                r,
            );
        }
        wanted.ok_or(CubeError::NotCovered)
    }

    /// Scoped aggregates whose joined relation with `dims` is `relation`.
    fn mergeable(&self, dims: &[ColumnId], relation: &BTreeSet<TableId>) -> Vec<(AggFunction, Target)> {
        let dim_tables: BTreeSet<TableId> = dims.iter().map(|c| c.table).collect();
        let mut out = BTreeSet::new();
        for &f in &self.scope.functions {
            for &t in &self.scope.targets {
                let mut tables = dim_tables.clone();
                tables.insert(t.table());
                if &tables != relation {
                    continue;
                }
                if let Some(b) = basis(f, t, self.schema) {
                    out.insert(b);
                }
            }
        }
        out.into_iter().collect()
    }

    /// Value of one candidate, `None` when the aggregate is undefined.
    pub fn lookup(&self, q: &QueryCandidate) -> Result<Option<f64>, CubeError> {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        let (bf, bt) =
            basis(q.function, q.target, self.schema).ok_or(CubeError::TypeMismatch { function: q.function })?;
        let dims = self.dims_for(q);
        let cube = self.cube(bf, bt, &dims)?;
        let assign = |preds: &[crate::query::Predicate]| -> Result<DimKey, CubeError> {
            let mut key: DimKey = dims.iter().map(|_| DimValue::All).collect();
            for p in preds {
                let i = dims.iter().position(|d| *d == p.column).ok_or(CubeError::NotCovered)?;
                key[i] = if self.scope.kept.get(&p.column).is_some_and(|k| k.contains(&p.literal)) {
                    DimValue::Literal(p.literal)
                } else {
                    return Err(CubeError::NotCovered);
                };
            }
            Ok(key)
        };
        let full = assign(&q.predicates)?;
        let value = match q.function {
            AggFunction::Percentage | AggFunction::ConditionalProbability => {
                let num = cube.get(&full).unwrap_or(Decimal::ZERO);
                let denom_key = if q.function == AggFunction::Percentage {
                    assign(&[])?
                } else {
                    assign(&q.predicates[..1])?
                };
                let den = cube.get(&denom_key).unwrap_or(Decimal::ZERO);
                if den.is_zero() {
                    None
                } else {
                    Some(Decimal::ONE_HUNDRED * num / den)
                }
            }
            _ => cube.get(&full),
        };
        Ok(value.map(decimal_to_f64))
    }

    /// Evaluates every claim's candidates and compares with the claimed value.
    pub fn evaluate(
        &self,
        claims: &[(&ClaimSite, &[QueryCandidate])],
        rounding: RoundingRule,
    ) -> Result<Vec<Vec<Evaluation>>, CubeError> {
        self.rounds.fetch_add(1, Ordering::Relaxed);
        if !self.options.caching {
            self.cache.clear();
        }
        claims
            .iter()
            .map(|(claim, candidates)| {
                candidates
                    .iter()
                    .map(|q| {
                        let value = self.lookup(q)?;
                        let outcome = match value {
                            None => Outcome::NoValue,
                            Some(v) if round_matches(v, claim, rounding) => Outcome::Match,
                            Some(_) => Outcome::Mismatch,
                        };
                        Ok(Evaluation { value, outcome })
                    })
                    .collect()
            })
            .collect()
    }

    /// Diagnostic dump: `function,target,dims,value` with one row per entry.
    pub fn dump_csv(&self) -> String {
        let map = self.cache.map.read().expect("cache lock");
        let mut keys: Vec<&CubeKey> = map.keys().collect();
        keys.sort_by(|a, b| (a.function, a.target, &a.dims).cmp(&(b.function, b.target, &b.dims)));
        let mut out = String::from("function,target,dims,value\n");
        for key in keys {
            let r = &map[key];
            let target = match key.target {
                Target::Star(t) => format!("{}.*", self.schema.table(t).name()),
                Target::Column(c) => self.schema.column_name(c),
            };
            let mut entries: Vec<(&[DimValue], Decimal)> = r.entries().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            for (assign, v) in entries {
                let dims: Vec<String> = key
                    .dims
                    .iter()
                    .zip(assign)
                    .map(|(d, a)| {
                        let col = self.schema.column(*d);
                        let val = match a {
                            DimValue::Literal(l) => col.distinct_literals()[*l as usize].clone(),
                            DimValue::Default => "<default>".into(),
                            DimValue::All => "*".into(),
                        };
                        format!("{}={}", self.schema.column_name(*d), val)
                    })
                    .collect();
                out.push_str(&format!(
                    "{},{},\"{}\",{}\n",
                    key.function,
                    target,
                    dims.join(";").replace('"', "\"\""),
                    v
                ));
            }
        }
        out
    }
}

fn combinations(items: &[ColumnId], k: usize, start: usize, current: &mut Vec<ColumnId>, out: &mut Vec<Vec<ColumnId>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for i in start..items.len() {
        current.push(items[i]);
        combinations(items, k, i + 1, current, out);
        current.pop();
    }
}
