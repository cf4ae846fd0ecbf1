//! Shared fixtures and a brute-force query evaluator that reads the raw CSV
//! text itself and joins by nested loops.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use claimcheck_core::fragments::Target;
use claimcheck_core::pipeline::{Dataset, DatasetSource, DocumentSource, LITERAL_CAP};
use claimcheck_core::{AggFunction, QueryCandidate, Schema};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture_dir(name: &str) -> PathBuf {
    workspace_root().join("fixtures").join(name)
}

/// Dataset and document read from a fixture directory laid out like
/// `fixtures/nfl`.
pub fn load_nfl(name: &str) -> (Dataset, DocumentSource) {
    let dir = fixture_dir(name);
    let source = DatasetSource::from_paths(
        &[dir.join("nflsuspensions.csv")],
        None,
        Some(&dir.join("dictionary.tsv")),
        Some(&dir.join("synonyms.tsv")),
    )
    .unwrap();
    let dataset = Dataset::build(&source, LITERAL_CAP).unwrap();
    let doc = DocumentSource::from_paths(&dir.join("document.md"), Some(&dir.join("parses.json"))).unwrap();
    (dataset, doc)
}

/// Tables as CSV text plus foreign keys as `("t.c", "u.d")`.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub tables: Vec<(String, String)>,
    pub foreign_keys: Vec<(String, String)>,
}

impl Fixture {
    pub fn source(&self) -> DatasetSource {
        let schema = if self.foreign_keys.is_empty() {
            None
        } else {
            let fks: Vec<String> = self
                .foreign_keys
                .iter()
                .map(|(a, b)| format!("{{\"from\":\"{a}\",\"to\":\"{b}\"}}"))
                .collect();
            let tables: Vec<String> = self.tables.iter().map(|(n, _)| format!("\"{n}.csv\"")).collect();
            Some(format!(
                "{{\"tables\":[{}],\"foreign_keys\":[{}]}}",
                tables.join(","),
                fks.join(",")
            ))
        };
        DatasetSource {
            tables: self
                .tables
                .iter()
                .map(|(n, t)| (n.clone(), t.clone().into_bytes()))
                .collect(),
            schema,
            dictionary: None,
            synonyms: None,
        }
    }

    pub fn dataset(&self) -> Dataset {
        Dataset::build(&self.source(), LITERAL_CAP).unwrap()
    }

    pub fn raw(&self) -> RawData {
        RawData::parse(self)
    }
}

pub fn nfl_fixture() -> Fixture {
    let text = std::fs::read_to_string(fixture_dir("nfl").join("nflsuspensions.csv")).unwrap();
    Fixture {
        name: "nfl",
        tables: vec![("nflsuspensions".into(), text)],
        foreign_keys: vec![],
    }
}

fn pick<'a>(rng: &mut StdRng, options: &[&'a str]) -> &'a str {
    options[rng.gen_range(0..options.len())]
}

/// Single table with text and numeric columns, some cells missing. Numeric
/// values are multiples of 0.25 so sums are exact in binary floating point.
pub fn sales_fixture(rows: usize, seed: u64) -> Fixture {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut text = String::from("region,product,channel,promo,units,price\n");
    for _ in 0..rows {
        let region = pick(&mut rng, &["north", "south", "east", "west"]);
        let product = pick(&mut rng, &["apples", "pears", "plums", "figs", "dates", "limes"]);
        let channel = pick(&mut rng, &["online", "store", "phone"]);
        let promo = if rng.gen_bool(0.05) {
            ""
        } else {
            pick(&mut rng, &["yes", "no"])
        };
        let units = if rng.gen_bool(0.05) {
            String::new()
        } else {
            rng.gen_range(1..=50).to_string()
        };
        let price = format!("{}", rng.gen_range(1..=400) as f64 * 0.25);
        text.push_str(&format!("{region},{product},{channel},{promo},{units},{price}\n"));
    }
    Fixture {
        name: "sales",
        tables: vec![("sales".into(), text)],
        foreign_keys: vec![],
    }
}

/// Orders referencing customers through `orders.customer_id`.
pub fn orders_fixture(customers: usize, orders: usize, seed: u64) -> Fixture {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut c = String::from("id,segment,country\n");
    for id in 0..customers {
        let segment = pick(&mut rng, &["retail", "wholesale", "public"]);
        let country = pick(&mut rng, &["fr", "de", "it", "es"]);
        c.push_str(&format!("{},{segment},{country}\n", id + 1));
    }
    let mut o = String::from("order_id,customer_id,status,amount,quantity\n");
    for id in 0..orders {
        let customer = rng.gen_range(1..=customers);
        let status = pick(&mut rng, &["open", "shipped", "returned"]);
        let amount = format!("{}", rng.gen_range(4..=2000) as f64 * 0.5);
        let quantity = if rng.gen_bool(0.03) {
            String::new()
        } else {
            rng.gen_range(1..=12).to_string()
        };
        o.push_str(&format!("{},{customer},{status},{amount},{quantity}\n", id + 1));
    }
    Fixture {
        name: "orders",
        tables: vec![("customers".into(), c), ("orders".into(), o)],
        foreign_keys: vec![("orders.customer_id".into(), "customers.id".into())],
    }
}

/// Table cells exactly as written in the CSV text.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    fn index(&self, column: &str) -> usize {
        self.header.iter().position(|h| h == column).unwrap()
    }

    /// A column is numeric when every non-empty cell parses as a number.
    fn numeric(&self, col: usize) -> bool {
        self.rows
            .iter()
            .all(|r| r[col].is_empty() || raw_number(&r[col]).is_some())
    }
}

fn raw_number(s: &str) -> Option<f64> {
    s.replace(',', "").parse::<f64>().ok()
}

/// Naive reading of the raw split records; fixtures quote only fields that
/// contain commas.
fn split_record(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            c => cur.push(c),
        }
    }
    out.push(cur);
    out.into_iter().map(|s| s.trim().to_string()).collect()
}

#[derive(Debug, Clone)]
pub struct RawData {
    pub tables: BTreeMap<String, RawTable>,
    pub foreign_keys: Vec<((String, String), (String, String))>,
}

/// Query with every reference spelled out by name.
#[derive(Debug, Clone)]
pub struct NamedQuery {
    pub function: AggFunction,
    pub target_table: String,
    pub target_column: Option<String>,
    pub predicates: Vec<(String, String, String)>,
}

impl NamedQuery {
    pub fn from_candidate(q: &QueryCandidate, schema: &Schema) -> Self {
        let (target_table, target_column) = match q.target {
            Target::Star(t) => (schema.table(t).name().to_string(), None),
            Target::Column(c) => (
                schema.table(c.table).name().to_string(),
                Some(schema.column(c).name().to_string()),
            ),
        };
        NamedQuery {
            function: q.function,
            target_table,
            target_column,
            predicates: q
                .predicates
                .iter()
                .map(|p| {
                    let col = schema.column(p.column);
                    (
                        schema.table(p.column.table).name().to_string(),
                        col.name().to_string(),
                        col.distinct_literals()[p.literal as usize].clone(),
                    )
                })
                .collect(),
        }
    }

    fn tables(&self) -> BTreeSet<String> {
        let mut t: BTreeSet<String> = self.predicates.iter().map(|p| p.0.clone()).collect();
        t.insert(self.target_table.clone());
        t
    }
}

fn split_ref(s: &str) -> (String, String) {
    let (t, c) = s.split_once('.').unwrap();
    (t.to_string(), c.to_string())
}

impl RawData {
    pub fn parse(f: &Fixture) -> Self {
        let tables = f
            .tables
            .iter()
            .map(|(name, text)| {
                let mut lines = text.lines().filter(|l| !l.trim().is_empty());
                let header = split_record(lines.next().unwrap());
                let rows = lines.map(split_record).collect();
                (name.clone(), RawTable { header, rows })
            })
            .collect();
        RawData {
            tables,
            foreign_keys: f
                .foreign_keys
                .iter()
                .map(|(a, b)| (split_ref(a), split_ref(b)))
                .collect(),
        }
    }

    /// Every combination of rows, one per table, satisfying all foreign keys
    /// inside the table set.
    pub fn join(&self, tables: &BTreeSet<String>) -> Vec<BTreeMap<String, usize>> {
        let names: Vec<&String> = tables.iter().collect();
        let mut out = Vec::new();
        let mut current = BTreeMap::new();
        self.nested(&names, 0, &mut current, &mut out);
        out
    }

    fn nested(
        &self,
        names: &[&String],
        depth: usize,
        current: &mut BTreeMap<String, usize>,
        out: &mut Vec<BTreeMap<String, usize>>,
    ) {
        if depth == names.len() {
            let ok = self
                .foreign_keys
                .iter()
                .all(|((ft, fc), (tt, tc))| match (current.get(ft), current.get(tt)) {
                    (Some(&fr), Some(&tr)) => {
                        let a = &self.tables[ft];
                        let b = &self.tables[tt];
                        a.rows[fr][a.index(fc)] == b.rows[tr][b.index(tc)]
                    }
                    _ => true,
                });
            if ok {
                out.push(current.clone());
            }
            return;
        }
        for r in 0..self.tables[names[depth]].rows.len() {
            current.insert(names[depth].clone(), r);
            self.nested(names, depth + 1, current, out);
        }
        current.remove(names[depth]);
    }

    fn cell<'a>(&'a self, tuple: &BTreeMap<String, usize>, table: &str, column: &str) -> &'a str {
        let t = &self.tables[table];
        &t.rows[tuple[table]][t.index(column)]
    }

    fn matches(&self, tuple: &BTreeMap<String, usize>, (table, column, literal): &(String, String, String)) -> bool {
        let t = &self.tables[table];
        let cell = self.cell(tuple, table, column);
        if cell.is_empty() {
            return false;
        }
        if t.numeric(t.index(column)) {
            raw_number(cell) == raw_number(literal)
        } else {
            cell == literal
        }
    }

    /// Value of `q` by brute force, `None` where the aggregate is undefined.
    /// `joined` caches join results per table set.
    pub fn evaluate(
        &self,
        q: &NamedQuery,
        joined: &mut BTreeMap<BTreeSet<String>, Vec<BTreeMap<String, usize>>>,
    ) -> Option<f64> {
        let tables = q.tables();
        let rows = joined
            .entry(tables.clone())
            .or_insert_with(|| self.join(&tables))
            .clone();
        let count_where = |preds: &[(String, String, String)]| {
            rows.iter().filter(|t| preds.iter().all(|p| self.matches(t, p))).count() as f64
        };
        match q.function {
            AggFunction::Percentage => {
                let all = count_where(&[]);
                (all > 0.0).then(|| 100.0 * count_where(&q.predicates) / all)
            }
            AggFunction::ConditionalProbability => {
                let cond = count_where(&q.predicates[..1]);
                (cond > 0.0).then(|| 100.0 * count_where(&q.predicates) / cond)
            }
            f => {
                let selected: Vec<&BTreeMap<String, usize>> = rows
                    .iter()
                    .filter(|t| q.predicates.iter().all(|p| self.matches(t, p)))
                    .collect();
                let cells: Vec<&str> = match &q.target_column {
                    None => selected.iter().map(|_| "*").collect(),
                    Some(c) => selected
                        .iter()
                        .map(|t| self.cell(t, &q.target_table, c))
                        .filter(|s| !s.is_empty())
                        .collect(),
                };
                let numbers: Vec<f64> = cells.iter().filter_map(|s| raw_number(s)).collect();
                match f {
                    AggFunction::Count => Some(cells.len() as f64),
                    AggFunction::CountDistinct => {
                        let distinct: BTreeSet<String> = cells
                            .iter()
                            .map(|s| match raw_number(s) {
                                Some(n) if q.target_column.is_some() && self.is_numeric_target(q) => format!("{n}"),
                                _ => s.to_string(),
                            })
                            .collect();
                        Some(distinct.len() as f64)
                    }
                    AggFunction::Sum => (!numbers.is_empty()).then(|| numbers.iter().sum()),
                    AggFunction::Avg => {
                        (!numbers.is_empty()).then(|| numbers.iter().sum::<f64>() / numbers.len() as f64)
                    }
                    AggFunction::Min => numbers.iter().copied().reduce(f64::min),
                    AggFunction::Max => numbers.iter().copied().reduce(f64::max),
                    _ => unreachable!(),
                }
            }
        }
    }

    fn is_numeric_target(&self, q: &NamedQuery) -> bool {
        let t = &self.tables[&q.target_table];
        q.target_column.as_ref().is_some_and(|c| t.numeric(t.index(c)))
    }
}

/// Sentences stating counts over the sales fixture, all restricting the
/// same columns.
pub fn sales_document(raw: &RawData, claims: usize) -> String {
    let t = &raw.tables["sales"];
    let (ri, ci) = (t.index("region"), t.index("channel"));
    let regions = ["north", "south", "east", "west"];
    let channels = ["online", "store", "phone"];
    let mut text = String::from("# Fruit sales report\n\n");
    for i in 0..claims {
        let region = regions[i % regions.len()];
        let channel = channels[i % channels.len()];
        let n = t.rows.iter().filter(|r| r[ri] == region && r[ci] == channel).count();
        text.push_str(&format!(
            "In the {region} region there were {n} sales through the {channel} channel. "
        ));
    }
    text.push('\n');
    text
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}
