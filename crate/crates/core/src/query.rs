//! Simple aggregate queries: one function, one target, a conjunction of
//! equality predicates.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rust_decimal::prelude::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{join_plan, parse_decimal, ColumnId, Schema, TableId};
use crate::document::ClaimSite;
use crate::fragments::{Category, FragmentCatalog, RelevanceRow, Target};

pub const DEFAULT_MAX_PREDICATES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggFunction {
    Count,
    CountDistinct,
    Sum,
    Avg,
    Min,
    Max,
    Percentage,
    ConditionalProbability,
}

impl AggFunction {
    pub const ALL: [AggFunction; 8] = [
        AggFunction::Count,
        AggFunction::CountDistinct,
        AggFunction::Sum,
        AggFunction::Avg,
        AggFunction::Min,
        AggFunction::Max,
        AggFunction::Percentage,
        AggFunction::ConditionalProbability,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AggFunction::Count => "count",
            AggFunction::CountDistinct => "count_distinct",
            AggFunction::Sum => "sum",
            AggFunction::Avg => "avg",
            AggFunction::Min => "min",
            AggFunction::Max => "max",
            AggFunction::Percentage => "percentage",
            AggFunction::ConditionalProbability => "conditional_probability",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase().replace([' ', '-'], "_");
        AggFunction::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .or(match s.as_str() {
                "average" | "mean" => Some(AggFunction::Avg),
                "countdistinct" => Some(AggFunction::CountDistinct),
                "percent" => Some(AggFunction::Percentage),
                "condprob" | "conditionalprobability" => Some(AggFunction::ConditionalProbability),
                _ => None,
            })
    }

    /// Sum, Avg, Min and Max need a numeric column.
    pub fn needs_numeric_target(self) -> bool {
        matches!(
            self,
            AggFunction::Sum | AggFunction::Avg | AggFunction::Min | AggFunction::Max
        )
    }

    /// Percentage and ConditionalProbability are row shares computed from
    /// counts; their target only selects the base table.
    pub fn is_row_share(self) -> bool {
        matches!(self, AggFunction::Percentage | AggFunction::ConditionalProbability)
    }
}

impl fmt::Display for AggFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Predicate {
    pub column: ColumnId,
    /// Index into the column's sorted distinct literals.
    pub literal: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueryCandidate {
    pub function: AggFunction,
    pub target: Target,
    /// Ordered; for ConditionalProbability the first is the condition.
    pub predicates: Vec<Predicate>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("{function} needs a numeric target")]
    NonNumericTarget { function: AggFunction },
    #[error("count_distinct needs a column target")]
    DistinctOfStar,
    #[error("conditional probability needs at least one predicate")]
    MissingCondition,
    #[error("two predicates on one column")]
    DuplicateColumn,
    #[error("more than {0} predicates")]
    TooManyPredicates(usize),
    #[error("tables cannot be joined: {0}")]
    Disconnected(String),
    #[error("cannot parse query: {0}")]
    Parse(String),
    #[error("unknown table or column: {0}")]
    UnknownName(String),
    #[error("literal {literal:?} does not occur in {column}")]
    UnknownLiteral { column: String, literal: String },
}

impl QueryCandidate {
    pub fn new(function: AggFunction, target: Target, predicates: Vec<Predicate>) -> Self {
        QueryCandidate {
            function,
            target,
            predicates,
        }
    }

    /// Tables the query ranges over: the target's table and every predicate's.
    pub fn tables(&self) -> BTreeSet<TableId> {
        let mut t: BTreeSet<TableId> = self.predicates.iter().map(|p| p.column.table).collect();
        t.insert(self.target.table());
        t
    }

    pub fn validate(&self, schema: &Schema, max_predicates: usize) -> Result<(), QueryError> {
        if let Target::Column(c) = self.target {
            if self.function.needs_numeric_target() && !schema.column(c).is_numeric() {
                return Err(QueryError::NonNumericTarget {
                    function: self.function,
                });
            }
        } else if self.function.needs_numeric_target() {
            return Err(QueryError::NonNumericTarget {
                function: self.function,
            });
        } else if self.function == AggFunction::CountDistinct {
            return Err(QueryError::DistinctOfStar);
        }
        if self.function == AggFunction::ConditionalProbability && self.predicates.is_empty() {
            return Err(QueryError::MissingCondition);
        }
        if self.predicates.len() > max_predicates {
            return Err(QueryError::TooManyPredicates(max_predicates));
        }
        let cols: BTreeSet<ColumnId> = self.predicates.iter().map(|p| p.column).collect();
        if cols.len() != self.predicates.len() {
            return Err(QueryError::DuplicateColumn);
        }
        Ok(())
    }
}

/// Equality up to predicate order, except that the condition of a
/// conditional probability must match. Row-share targets compare by table.
pub fn canonical_equal(a: &QueryCandidate, b: &QueryCandidate) -> bool {
    if a.function != b.function || a.predicates.len() != b.predicates.len() {
        return false;
    }
    let same_target = if a.function.is_row_share() {
        a.target.table() == b.target.table()
    } else {
        a.target == b.target
    };
    if !same_target {
        return false;
    }
    let (pa, pb) = if a.function == AggFunction::ConditionalProbability && !a.predicates.is_empty() {
        if a.predicates[0] != b.predicates[0] {
            return false;
        }
        (&a.predicates[1..], &b.predicates[1..])
    } else {
        (&a.predicates[..], &b.predicates[..])
    };
    let sa: BTreeSet<&Predicate> = pa.iter().collect();
    let sb: BTreeSet<&Predicate> = pb.iter().collect();
    sa == sb
}

/// Explicit combination of fragments. `predicates` must already be in the
/// desired order (descending relevance); subsets keep that order.
pub fn combine_fragments(
    functions: &[AggFunction],
    targets: &[Target],
    predicates: &[Predicate],
    max_predicates: usize,
    schema: &Schema,
) -> Vec<QueryCandidate> {
    let mut subsets: Vec<Vec<Predicate>> = vec![Vec::new()];
    fn extend(
        preds: &[Predicate],
        start: usize,
        current: &mut Vec<Predicate>,
        max: usize,
        out: &mut Vec<Vec<Predicate>>,
    ) {
        if current.len() == max {
            return;
        }
        for i in start..preds.len() {
            if current.iter().any(|p| p.column == preds[i].column) {
                continue;
            }
            current.push(preds[i]);
            out.push(current.clone());
            extend(preds, i + 1, current, max, out);
            current.pop();
        }
    }
    extend(predicates, 0, &mut Vec::new(), max_predicates, &mut subsets);
    subsets.sort_by_key(|s| s.len());

    let mut connected: HashMap<BTreeSet<TableId>, bool> = HashMap::new();
    let mut out = Vec::new();
    for &function in functions {
        for &target in targets {
            if function.is_row_share() && !target.is_star() {
                continue;
            }
            for preds in &subsets {
                let q = QueryCandidate::new(function, target, preds.clone());
                if q.validate(schema, max_predicates).is_err() {
                    continue;
                }
                let tables = q.tables();
                let ok = *connected
                    .entry(tables.clone())
                    .or_insert_with(|| join_plan(schema, &tables).is_ok());
                if ok {
                    out.push(q);
                }
            }
        }
    }
    out
}

/// Candidates for one claim: scoped functions, the claim's retrieved targets
/// plus every star, and the claim's retrieved predicates on scoped columns
/// with kept literals, ordered by descending score.
pub fn enumerate_candidates(
    relevance: &RelevanceRow,
    scope: &crate::cube::EvalScope,
    catalog: &FragmentCatalog,
    schema: &Schema,
    max_predicates: usize,
) -> Vec<QueryCandidate> {
    let mut targets: Vec<Target> = relevance
        .category(Category::AggColumn)
        .iter()
        .filter_map(|(id, _)| catalog.target(*id))
        .filter(|t| scope.targets.contains(t))
        .collect();
    for t in schema.table_ids().map(Target::Star) {
        if !targets.contains(&t) && scope.targets.contains(&t) {
            targets.push(t);
        }
    }
    targets.sort();
    let predicates: Vec<Predicate> = relevance
        .category(Category::Predicate)
        .iter()
        .filter_map(|(id, _)| catalog.predicate(*id))
        .filter(|(column, literal)| scope.keeps(*column, *literal))
        .map(|(column, literal)| Predicate { column, literal })
        .collect();
    let functions: Vec<AggFunction> = scope.functions.iter().copied().collect();
    combine_fragments(&functions, &targets, &predicates, max_predicates, schema)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingRule {
    /// Any number of significant digits between 1 and 12.
    #[default]
    AnySigDigits,
    /// Exactly the digits written in the claim.
    ClaimPrecision,
}

pub const MAX_SIG_DIGITS: u32 = 12;

/// Rounds half away from zero to `k` significant digits.
pub fn round_sig(x: f64, k: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let k = k.max(1) as i32;
    let mut e = x.abs().log10().floor() as i32;
    if x.abs() >= 10f64.powi(e + 1) {
        e += 1;
    } else if x.abs() < 10f64.powi(e) {
        e -= 1;
    }
    let shift = k - 1 - e;
    let scaled = if shift >= 0 {
        x * 10f64.powi(shift)
    } else {
        x / 10f64.powi(-shift)
    };
    let floor = scaled.abs().floor();
    let frac = scaled.abs() - floor;
    // values within a few ulps of .5 round away from zero
    let magnitude = if (frac - 0.5).abs() <= 8.0 * f64::EPSILON * scaled.abs().max(1.0) {
        floor + 1.0
    } else {
        scaled.abs().round()
    };
    let rounded = magnitude.copysign(x);
    if shift >= 0 {
        rounded / 10f64.powi(shift)
    } else {
        rounded * 10f64.powi(-shift)
    }
}

/// Equality up to float noise, well below one unit at 12 significant digits.
fn approx_eq(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-13 * a.abs().max(b.abs())
}

/// Whether an evaluation result rounds to the claimed value.
pub fn round_matches(result: f64, claim: &ClaimSite, rule: RoundingRule) -> bool {
    value_matches(result, claim.claimed_value, claim.sig_digits, claim.exact_word, rule)
}

pub fn value_matches(result: f64, claimed: f64, sig_digits: u32, exact_word: bool, rule: RoundingRule) -> bool {
    if !result.is_finite() {
        return false;
    }
    let hit = match rule {
        RoundingRule::AnySigDigits => (1..=MAX_SIG_DIGITS).any(|k| approx_eq(round_sig(result, k), claimed)),
        RoundingRule::ClaimPrecision => approx_eq(round_sig(result, sig_digits), claimed),
    };
    hit && (!exact_word || (result - claimed).abs() < 0.5)
}

fn quote_literal(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn literal_sql(schema: &Schema, p: &Predicate) -> String {
    let col = schema.column(p.column);
    let lit = &col.distinct_literals()[p.literal as usize];
    if col.is_numeric() {
        lit.clone()
    } else {
        quote_literal(lit)
    }
}

/// Canonical SQL text in a small dialect: `percentage(*)` and
/// `conditional_probability(*)` name the row-share functions.
pub fn render_query_sql(q: &QueryCandidate, schema: &Schema) -> Result<String, QueryError> {
    let plan = join_plan(schema, &q.tables()).map_err(|e| QueryError::Disconnected(e.to_string()))?;
    let qualified = plan.tables.len() > 1;
    let col = |c: ColumnId| -> String {
        let name = schema.column(c).name().to_lowercase();
        if qualified {
            format!("{}.{}", schema.table(c.table).name().to_lowercase(), name)
        } else {
            name
        }
    };
    let arg = match q.target {
        Target::Star(_) => "*".to_string(),
        Target::Column(c) => col(c),
    };
    let select = match q.function {
        AggFunction::CountDistinct => format!("count(distinct {arg})"),
        f => format!("{}({arg})", f.name()),
    };
    let mut sql = format!(
        "select {select} from {}",
        schema.table(plan.tables[0]).name().to_lowercase()
    );
    for (t, j) in plan.tables.iter().skip(1).zip(&plan.joins) {
        sql.push_str(&format!(
            " join {} on {} = {}",
            schema.table(*t).name().to_lowercase(),
            col(j.foreign),
            col(j.primary)
        ));
    }
    if !q.predicates.is_empty() {
        let conds: Vec<String> = q
            .predicates
            .iter()
            .map(|p| format!("{} = {}", col(p.column), literal_sql(schema, p)))
            .collect();
        sql.push_str(" where ");
        sql.push_str(&conds.join(" and "));
    }
    Ok(sql)
}

/// Short English description of a query.
pub fn render_query_nl(q: &QueryCandidate, schema: &Schema) -> String {
    let target = match q.target {
        Target::Star(_) => "rows".to_string(),
        Target::Column(c) => schema.column(c).name().to_string(),
    };
    let cond = |ps: &[Predicate]| -> String {
        ps.iter()
            .map(|p| {
                let col = schema.column(p.column);
                format!("{} is '{}'", col.name(), col.distinct_literals()[p.literal as usize])
            })
            .collect::<Vec<_>>()
            .join(" and ")
    };
    let head = match (q.function, q.target) {
        (AggFunction::Count, Target::Star(_)) => "the number of rows".to_string(),
        (AggFunction::Count, _) => format!("the number of {target} values"),
        (AggFunction::CountDistinct, _) => format!("the number of distinct {target} values"),
        (AggFunction::Sum, _) => format!("the sum of {target}"),
        (AggFunction::Avg, _) => format!("the average of {target}"),
        (AggFunction::Min, _) => format!("the minimum of {target}"),
        (AggFunction::Max, _) => format!("the maximum of {target}"),
        (AggFunction::Percentage, _) => "the percentage of rows".to_string(),
        (AggFunction::ConditionalProbability, _) => {
            let (first, rest) = q.predicates.split_first().expect("validated condition");
            return if rest.is_empty() {
                format!(
                    "the percentage of rows where {} among rows where {}",
                    cond(&[*first]),
                    cond(&[*first])
                )
            } else {
                format!(
                    "among rows where {}, the percentage where {}",
                    cond(&[*first]),
                    cond(rest)
                )
            };
        }
    };
    if q.predicates.is_empty() {
        head
    } else {
        format!("{head} where {}", cond(&q.predicates))
    }
}

/// Syntactic form of a query in the dialect produced by [`render_query_sql`],
/// before names are resolved against a schema. Identifiers are lowercased.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlShape {
    pub function: AggFunction,
    /// `None` for `*`.
    pub argument: Option<String>,
    pub tables: Vec<String>,
    pub conditions: Vec<(String, String)>,
}

pub fn parse_sql_shape(sql: &str) -> Result<SqlShape, QueryError> {
    let tokens = lex_sql(sql)?;
    let mut p = SqlParser { tokens, pos: 0 };
    p.keyword("select")?;
    let fname = p.ident()?;
    p.expect(SqlToken::LParen)?;
    let mut function =
        AggFunction::from_name(&fname).ok_or_else(|| QueryError::Parse(format!("unknown function {fname}")))?;
    if function == AggFunction::Count && p.peek_keyword("distinct") {
        p.pos += 1;
        function = AggFunction::CountDistinct;
    }
    let argument = if p.eat(&SqlToken::Star) { None } else { Some(p.ident()?) };
    p.expect(SqlToken::RParen)?;
    p.keyword("from")?;
    let mut tables = vec![p.ident()?];
    while p.peek_keyword("join") {
        p.pos += 1;
        tables.push(p.ident()?);
        p.keyword("on")?;
        p.ident()?;
        p.expect(SqlToken::Eq)?;
        p.ident()?;
    }
    let mut conditions = Vec::new();
    if p.peek_keyword("where") {
        p.pos += 1;
        loop {
            let column = p.ident()?;
            p.expect(SqlToken::Eq)?;
            let value = p.literal()?;
            conditions.push((column, value));
            if p.peek_keyword("and") {
                p.pos += 1;
            } else {
                break;
            }
        }
    }
    if p.pos != p.tokens.len() {
        return Err(QueryError::Parse("trailing tokens".into()));
    }
    Ok(SqlShape {
        function,
        argument,
        tables,
        conditions,
    })
}

/// Parses and resolves a query against a schema. Table qualifiers are
/// optional when a column name is unambiguous.
pub fn parse_query_sql(sql: &str, schema: &Schema) -> Result<QueryCandidate, QueryError> {
    let shape = parse_sql_shape(sql)?;
    let table_ids: Vec<TableId> = shape
        .tables
        .iter()
        .map(|t| find_table(schema, t).ok_or_else(|| QueryError::UnknownName(t.clone())))
        .collect::<Result<_, _>>()?;
    let resolve = |name: &str| -> Result<ColumnId, QueryError> {
        resolve_sql_column(schema, name, &table_ids).ok_or_else(|| QueryError::UnknownName(name.to_string()))
    };
    let target = match &shape.argument {
        None => Target::Star(table_ids[0]),
        Some(name) => Target::Column(resolve(name)?),
    };
    let mut predicates = Vec::new();
    for (name, value) in &shape.conditions {
        let column = resolve(name)?;
        let col = schema.column(column);
        let code = col
            .literal_code(value)
            .or_else(|| {
                if col.is_numeric() {
                    parse_decimal(value).and_then(|d| col.literal_code(&crate::dataset::decimal_literal(d)))
                } else {
                    None
                }
            })
            .ok_or_else(|| QueryError::UnknownLiteral {
                column: schema.column_name(column),
                literal: value.clone(),
            })?;
        predicates.push(Predicate { column, literal: code });
    }
    Ok(QueryCandidate::new(shape.function, target, predicates))
}

fn find_table(schema: &Schema, name: &str) -> Option<TableId> {
    schema.table_id(name).or_else(|| {
        schema
            .table_ids()
            .find(|t| schema.table(*t).name().eq_ignore_ascii_case(name))
    })
}

fn resolve_sql_column(schema: &Schema, name: &str, tables: &[TableId]) -> Option<ColumnId> {
    let find_in = |t: TableId, col: &str| -> Option<ColumnId> {
        schema
            .table(t)
            .columns()
            .iter()
            .position(|c| c.name().eq_ignore_ascii_case(col))
            .map(|i| ColumnId {
                table: t,
                column: i as u16,
            })
    };
    if let Some((t, c)) = name.split_once('.') {
        let t = find_table(schema, t)?;
        return find_in(t, c);
    }
    let hits: Vec<ColumnId> = tables.iter().filter_map(|t| find_in(*t, name)).collect();
    match hits.as_slice() {
        [one] => Some(*one),
        _ => schema.resolve_column(name),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum SqlToken {
    Word(String),
    Str(String),
    LParen,
    RParen,
    Star,
    Eq,
}

fn lex_sql(sql: &str) -> Result<Vec<SqlToken>, QueryError> {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() || c == ';' => i += 1,
            '(' => {
                out.push(SqlToken::LParen);
                i += 1
            }
            ')' => {
                out.push(SqlToken::RParen);
                i += 1
            }
            '*' => {
                out.push(SqlToken::Star);
                i += 1
            }
            '=' => {
                out.push(SqlToken::Eq);
                i += 1
            }
            '\'' | '`' | '\u{2018}' | '\u{2019}' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(QueryError::Parse("unterminated string".into())),
                        Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some('\'' | '\u{2019}') => {
                            i += 1;
                            break;
                        }
                        Some(ch) => {
                            s.push(*ch);
                            i += 1;
                        }
                    }
                }
                out.push(SqlToken::Str(s));
            }
            '"' => {
                let end = chars[i + 1..]
                    .iter()
                    .position(|&ch| ch == '"')
                    .ok_or_else(|| QueryError::Parse("unterminated identifier".into()))?;
                out.push(SqlToken::Word(chars[i + 1..i + 1 + end].iter().collect()));
                i += end + 2;
            }
            c if c.is_alphanumeric() || c == '_' || c == '.' || c == '-' || c == '+' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '.' | '-' | '+' | ','))
                {
                    if chars[i] == ',' && !chars.get(i + 1).is_some_and(|n| n.is_ascii_digit()) {
                        break;
                    }
                    i += 1;
                }
                out.push(SqlToken::Word(chars[start..i].iter().collect()));
            }
            other => return Err(QueryError::Parse(format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

struct SqlParser {
    tokens: Vec<SqlToken>,
    pos: usize,
}

impl SqlParser {
    fn next(&mut self) -> Option<SqlToken> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, t: &SqlToken) -> bool {
        if self.tokens.get(self.pos) == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: SqlToken) -> Result<(), QueryError> {
        if self.eat(&t) {
            Ok(())
        } else {
            Err(QueryError::Parse(format!("expected {t:?}")))
        }
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.tokens.get(self.pos), Some(SqlToken::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.peek_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            Err(QueryError::Parse(format!("expected {kw}")))
        }
    }

    fn ident(&mut self) -> Result<String, QueryError> {
        match self.next() {
            Some(SqlToken::Word(w)) => Ok(w.to_lowercase()),
            other => Err(QueryError::Parse(format!("expected identifier, found {other:?}"))),
        }
    }

    fn literal(&mut self) -> Result<String, QueryError> {
        match self.next() {
            Some(SqlToken::Str(s)) => Ok(s),
            Some(SqlToken::Word(w)) => Ok(w),
            other => Err(QueryError::Parse(format!("expected literal, found {other:?}"))),
        }
    }
}

/// Converts an aggregate stored as a decimal into the float used for
/// rounding comparisons.
pub fn decimal_to_f64(d: rust_decimal::Decimal) -> f64 {
    d.to_f64().unwrap_or(f64::NAN)
}
