//! CSV ingestion, schema validation and PK-FK join planning.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("table `{0}`: empty input (no header record)")]
    EmptyInput(String),
    #[error("table `{table}`: row {row} has {found} cells, header has {expected}")]
    RaggedRow {
        table: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("table `{table}`: duplicate header `{name}`")]
    DuplicateHeader { table: String, name: String },
    #[error("table `{table}`: header {index} is empty")]
    EmptyHeader { table: String, index: usize },
    #[error("duplicate table name `{0}`")]
    DuplicateTable(String),
    #[error("foreign keys form a cycle through `{0}`")]
    CyclicSchema(String),
    #[error("unknown table or column `{0}`")]
    UnknownTableOrColumn(String),
    #[error("foreign key target `{0}` is not unique")]
    NonUniqueKey(String),
    #[error("data dictionary line {line}: missing tab separator")]
    MalformedLine { line: usize },
    #[error("data dictionary line {line}: unknown column `{column}`")]
    UnknownColumn { line: usize, column: String },
    #[error("no foreign-key path connects {0}")]
    Disconnected(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema sidecar: {0}")]
    Sidecar(String),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnType {
    Numeric,
    Text,
}

/// One cell as seen by aggregation and predicate code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell<'a> {
    Missing,
    Number(Decimal),
    Text(&'a str),
}

/// A typed column. Every column is also dictionary encoded: `distinct` holds
/// the sorted distinct literal texts and `codes` indexes into it per row.
#[derive(Debug, Clone)]
pub struct Column {
    name: String,
    ctype: ColumnType,
    numbers: Vec<Option<Decimal>>,
    distinct: Vec<String>,
    codes: Vec<Option<u32>>,
}

impl Column {
    fn from_cells(name: String, cells: Vec<String>) -> Self {
        let parsed: Vec<Option<Option<Decimal>>> = cells
            .iter()
            .map(|c| {
                if c.is_empty() {
                    Some(None)
                } else {
                    parse_decimal(c).map(Some)
                }
            })
            .collect();
        let numeric = parsed.iter().all(Option::is_some);
        let (ctype, numbers, literals): (_, Vec<Option<Decimal>>, Vec<Option<String>>) = if numeric {
            let numbers: Vec<Option<Decimal>> = parsed.into_iter().map(Option::unwrap).collect();
            let literals = numbers.iter().map(|n| n.map(decimal_literal)).collect();
            (ColumnType::Numeric, numbers, literals)
        } else {
            let literals = cells
                .into_iter()
                .map(|c| if c.is_empty() { None } else { Some(c) })
                .collect();
            (ColumnType::Text, Vec::new(), literals)
        };
        let distinct: Vec<String> = literals
            .iter()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let lookup: HashMap<&str, u32> = distinct
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as u32))
            .collect();
        let codes = literals.iter().map(|l| l.as_deref().map(|s| lookup[s])).collect();
        Column {
            name,
            ctype,
            numbers,
            distinct,
            codes,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ctype(&self) -> ColumnType {
        self.ctype
    }

    pub fn is_numeric(&self) -> bool {
        self.ctype == ColumnType::Numeric
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn cell(&self, row: usize) -> Cell<'_> {
        match self.codes[row] {
            None => Cell::Missing,
            Some(code) => match self.ctype {
                ColumnType::Numeric => Cell::Number(self.numbers[row].expect("coded numeric cell")),
                ColumnType::Text => Cell::Text(&self.distinct[code as usize]),
            },
        }
    }

    /// Numeric value of a row, `None` for missing cells or Text columns.
    pub fn number(&self, row: usize) -> Option<Decimal> {
        self.numbers.get(row).copied().flatten()
    }

    /// Literal text of a row as used by equality predicates.
    pub fn literal(&self, row: usize) -> Option<&str> {
        self.codes[row].map(|c| self.distinct[c as usize].as_str())
    }

    pub fn code(&self, row: usize) -> Option<u32> {
        self.codes[row]
    }

    /// Sorted distinct non-missing literals.
    pub fn distinct_literals(&self) -> &[String] {
        &self.distinct
    }

    pub fn literal_code(&self, literal: &str) -> Option<u32> {
        self.distinct
            .binary_search_by(|d| d.as_str().cmp(literal))
            .ok()
            .map(|i| i as u32)
    }
}

/// Parses a data cell as a decimal number: optional sign, digits with
/// optional thousands separators, at most one decimal point.
pub fn parse_decimal(cell: &str) -> Option<Decimal> {
    let s = cell.trim();
    let (sign, body) = match s.as_bytes().first()? {
        b'-' => ("-", &s[1..]),
        b'+' => ("", &s[1..]),
        _ => ("", s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if int_part.is_empty() && frac_part.is_none_or(str::is_empty) {
        return None;
    }
    if let Some(f) = frac_part {
        if !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    let digits: String = if int_part.contains(',') {
        let groups: Vec<&str> = int_part.split(',').collect();
        let first_ok = (1..=3).contains(&groups[0].len());
        let rest_ok = groups[1..].iter().all(|g| g.len() == 3);
        if !first_ok || !rest_ok {
            return None;
        }
        groups.concat()
    } else {
        int_part.to_string()
    };
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut text = String::with_capacity(s.len());
    text.push_str(sign);
    text.push_str(if digits.is_empty() { "0" } else { &digits });
    if let Some(f) = frac_part.filter(|f| !f.is_empty()) {
        text.push('.');
        text.push_str(f);
    }
    Decimal::from_str(&text).ok()
}

/// Canonical literal text of a numeric value ("1000", "0.04", "-3").
pub fn decimal_literal(value: Decimal) -> String {
    let mut v = value.normalize();
    if v.is_zero() {
        v.set_sign_positive(true);
    }
    v.to_string()
}

#[derive(Debug, Clone)]
pub struct Table {
    name: String,
    columns: Vec<Column>,
    row_count: usize,
}

impl Table {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// Loads one CSV table (comma separated, double-quote quoting, UTF-8).
pub fn load_csv(bytes: &[u8], name: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(DatasetError::EmptyInput(name.to_string())),
        Some(r) => r?,
    };
    let names: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for (index, n) in names.iter().enumerate() {
        if n.is_empty() {
            return Err(DatasetError::EmptyHeader {
                table: name.to_string(),
                index,
            });
        }
        if !seen.insert(n.as_str()) {
            return Err(DatasetError::DuplicateHeader {
                table: name.to_string(),
                name: n.clone(),
            });
        }
    }
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); names.len()];
    let mut row_count = 0;
    for (i, record) in records.enumerate() {
        let record = record?;
        if record.len() != names.len() {
            return Err(DatasetError::RaggedRow {
                table: name.to_string(),
                row: i + 1,
                expected: names.len(),
                found: record.len(),
            });
        }
        for (col, value) in record.iter().enumerate() {
            cells[col].push(value.trim().to_string());
        }
        row_count += 1;
    }
    let columns = names
        .into_iter()
        .zip(cells)
        .map(|(n, c)| Column::from_cells(n, c))
        .collect();
    Ok(Table {
        name: name.to_string(),
        columns,
        row_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TableId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnId {
    pub table: TableId,
    pub column: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

impl ForeignKey {
    pub fn new(from: &str, to: &str) -> Option<Self> {
        let (ft, fc) = from.split_once('.')?;
        let (tt, tc) = to.split_once('.')?;
        Some(ForeignKey {
            from_table: ft.to_string(),
            from_column: fc.to_string(),
            to_table: tt.to_string(),
            to_column: tc.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ResolvedFk {
    from: ColumnId,
    to: ColumnId,
}

/// A validated, immutable set of tables connected by acyclic PK-FK edges.
#[derive(Debug, Clone)]
pub struct Schema {
    tables: Vec<Table>,
    fks: Vec<ForeignKey>,
    resolved: Vec<ResolvedFk>,
}

pub fn build_schema(tables: Vec<Table>, fks: Vec<ForeignKey>) -> Result<Schema> {
    let mut names = HashSet::new();
    for t in &tables {
        if !names.insert(t.name.clone()) {
            return Err(DatasetError::DuplicateTable(t.name.clone()));
        }
    }
    let find = |table: &str, column: &str| -> Result<ColumnId> {
        let ti = tables
            .iter()
            .position(|t| t.name == table)
            .ok_or_else(|| DatasetError::UnknownTableOrColumn(table.to_string()))?;
        let ci = tables[ti]
            .column_index(column)
            .ok_or_else(|| DatasetError::UnknownTableOrColumn(format!("{table}.{column}")))?;
        Ok(ColumnId {
            table: TableId(ti as u16),
            column: ci as u16,
        })
    };
    let mut resolved = Vec::with_capacity(fks.len());
    for fk in &fks {
        let from = find(&fk.from_table, &fk.from_column)?;
        let to = find(&fk.to_table, &fk.to_column)?;
        let target = &tables[to.table.0 as usize].columns[to.column as usize];
        let non_missing = target.codes.iter().flatten().count();
        if non_missing != target.distinct.len() {
            return Err(DatasetError::NonUniqueKey(format!("{}.{}", fk.to_table, fk.to_column)));
        }
        resolved.push(ResolvedFk { from, to });
    }

    // Kahn's algorithm over the directed fk graph
    let n = tables.len();
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in &resolved {
        out[r.from.table.0 as usize].push(r.to.table.0 as usize);
        indegree[r.to.table.0 as usize] += 1;
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut visited = 0;
    while let Some(i) = queue.pop_front() {
        visited += 1;
        for &j in &out[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                queue.push_back(j);
            }
        }
    }
    if visited != n {
        let culprit = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(DatasetError::CyclicSchema(tables[culprit].name.clone()));
    }

    Ok(Schema { tables, fks, resolved })
}

impl Schema {
    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn foreign_keys(&self) -> &[ForeignKey] {
        &self.fks
    }

    pub fn table(&self, id: TableId) -> &Table {
        &self.tables[id.0 as usize]
    }

    pub fn table_id(&self, name: &str) -> Option<TableId> {
        self.tables
            .iter()
            .position(|t| t.name == name)
            .map(|i| TableId(i as u16))
    }

    pub fn table_ids(&self) -> impl Iterator<Item = TableId> + '_ {
        (0..self.tables.len()).map(|i| TableId(i as u16))
    }

    pub fn column(&self, id: ColumnId) -> &Column {
        &self.tables[id.table.0 as usize].columns[id.column as usize]
    }

    pub fn column_ids(&self) -> impl Iterator<Item = ColumnId> + '_ {
        self.tables.iter().enumerate().flat_map(|(ti, t)| {
            (0..t.columns.len()).map(move |ci| ColumnId {
                table: TableId(ti as u16),
                column: ci as u16,
            })
        })
    }

    /// Resolves `table.column`, or a bare column name when it is unique
    /// across tables.
    pub fn resolve_column(&self, name: &str) -> Option<ColumnId> {
        if let Some((t, c)) = name.split_once('.') {
            let table = self.table_id(t)?;
            let column = self.table(table).column_index(c)?;
            return Some(ColumnId {
                table,
                column: column as u16,
            });
        }
        let mut found = self.column_ids().filter(|&id| self.column(id).name == name);
        let first = found.next()?;
        found.next().is_none().then_some(first)
    }

    pub fn column_name(&self, id: ColumnId) -> String {
        format!("{}.{}", self.table(id.table).name, self.column(id).name)
    }

    /// A topological order of tables along fk edges (referencing before
    /// referenced). Exists for every accepted schema.
    pub fn topological_order(&self) -> Vec<TableId> {
        let n = self.tables.len();
        let mut indegree = vec![0usize; n];
        for r in &self.resolved {
            indegree[r.to.table.0 as usize] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop_front() {
            order.push(TableId(i as u16));
            for r in self.resolved.iter().filter(|r| r.from.table.0 as usize == i) {
                let j = r.to.table.0 as usize;
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    queue.push_back(j);
                }
            }
        }
        order
    }

    fn neighbours(&self, t: TableId) -> Vec<(TableId, ResolvedFk)> {
        let mut out: Vec<(TableId, ResolvedFk)> = self
            .resolved
            .iter()
            .filter_map(|r| {
                if r.from.table == t {
                    Some((r.to.table, *r))
                } else if r.to.table == t {
                    Some((r.from.table, *r))
                } else {
                    None
                }
            })
            .collect();
        out.sort_by(|a, b| {
            self.table(a.0)
                .name
                .cmp(&self.table(b.0).name)
                .then_with(|| self.fk_sort_key(&a.1).cmp(&self.fk_sort_key(&b.1)))
        });
        out
    }

    fn fk_sort_key(&self, fk: &ResolvedFk) -> (String, String) {
        (self.column_name(fk.from), self.column_name(fk.to))
    }
}

/// Equality join between two columns along a PK-FK edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JoinPredicate {
    pub foreign: ColumnId,
    pub primary: ColumnId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinPlan {
    /// Tables in attachment order: the first is the root, each later one is
    /// connected to an earlier one by the join predicate at the same offset
    /// minus one.
    pub tables: Vec<TableId>,
    pub joins: Vec<JoinPredicate>,
}

impl JoinPlan {
    pub fn table_set(&self) -> BTreeSet<TableId> {
        self.tables.iter().copied().collect()
    }
}

/// Connects `needed` tables along shortest PK-FK paths. Needed tables are
/// attached in name order; among equally short paths the one whose table
/// name sequence is lexicographically smallest wins.
pub fn join_plan(schema: &Schema, needed: &BTreeSet<TableId>) -> Result<JoinPlan> {
    let mut ordered: Vec<TableId> = needed.iter().copied().collect();
    ordered.sort_by(|a, b| schema.table(*a).name.cmp(&schema.table(*b).name));
    let Some(&root) = ordered.first() else {
        return Err(DatasetError::Disconnected("an empty table set".into()));
    };
    let mut tables = vec![root];
    let mut joins = Vec::new();
    let mut in_tree: HashSet<TableId> = HashSet::from([root]);

    for &target in &ordered[1..] {
        if in_tree.contains(&target) {
            continue;
        }
        let path = shortest_path(schema, &tables, target).ok_or_else(|| {
            let names: Vec<&str> = ordered.iter().map(|t| schema.table(*t).name()).collect();
            DatasetError::Disconnected(names.join(", "))
        })?;
        for window in path.windows(2) {
            let (from, to) = (window[0].0, window[1].0);
            if in_tree.insert(to) {
                tables.push(to);
                let fk = window[1].1.expect("edge on path step");
                let (foreign, primary) = (fk.from, fk.to);
                debug_assert!(
                    (foreign.table == from && primary.table == to) || (foreign.table == to && primary.table == from)
                );
                joins.push(JoinPredicate { foreign, primary });
            }
        }
    }
    Ok(JoinPlan { tables, joins })
}

type PathStep = (TableId, Option<ResolvedFk>);

fn shortest_path(schema: &Schema, tree: &[TableId], target: TableId) -> Option<Vec<PathStep>> {
    let name_seq = |p: &[PathStep]| -> Vec<String> { p.iter().map(|(t, _)| schema.table(*t).name.clone()).collect() };
    let mut best: HashMap<TableId, Vec<PathStep>> = HashMap::new();
    let mut frontier: Vec<TableId> = Vec::new();
    for &t in tree {
        best.insert(t, vec![(t, None)]);
        frontier.push(t);
    }
    while !frontier.is_empty() {
        if let Some(p) = best.get(&target) {
            return Some(p.clone());
        }
        let mut next: BTreeMap<TableId, Vec<PathStep>> = BTreeMap::new();
        for &node in &frontier {
            let base = best[&node].clone();
            for (nb, fk) in schema.neighbours(node) {
                if best.contains_key(&nb) {
                    continue;
                }
                let mut cand = base.clone();
                cand.push((nb, Some(fk)));
                match next.get(&nb) {
                    Some(existing) if name_seq(existing) <= name_seq(&cand) => {}
                    _ => {
                        next.insert(nb, cand);
                    }
                }
            }
        }
        frontier = next.keys().copied().collect();
        best.extend(next);
    }
    best.get(&target).cloned()
}

/// Materialised inner join along a plan: one row-index tuple per joined row.
#[derive(Debug, Clone)]
pub struct JoinedView {
    tables: Vec<TableId>,
    stride: usize,
    rows: Vec<u32>,
    len: usize,
}

impl JoinedView {
    pub fn materialize(schema: &Schema, plan: &JoinPlan) -> JoinedView {
        let root = plan.tables[0];
        let stride = plan.tables.len();
        let root_rows = schema.table(root).row_count();
        let mut tuples: Vec<Vec<u32>> = (0..root_rows as u32).map(|r| vec![r]).collect();
        let mut placed = vec![root];
        for (step, &table) in plan.tables.iter().enumerate().skip(1) {
            let join = plan.joins[step - 1];
            let (new_col, old_col) = if join.foreign.table == table {
                (join.foreign, join.primary)
            } else {
                (join.primary, join.foreign)
            };
            let old_pos = placed
                .iter()
                .position(|t| *t == old_col.table)
                .expect("join attaches to a placed table");
            let new_column = schema.column(new_col);
            let mut build: HashMap<&str, Vec<u32>> = HashMap::new();
            for r in 0..new_column.len() {
                if let Some(lit) = new_column.literal(r) {
                    build.entry(lit).or_default().push(r as u32);
                }
            }
            let old_column = schema.column(old_col);
            let mut next = Vec::with_capacity(tuples.len());
            for tuple in tuples {
                let probe = old_column.literal(tuple[old_pos] as usize);
                if let Some(matches) = probe.and_then(|p| build.get(p)) {
                    for &m in matches {
                        let mut t = tuple.clone();
                        t.push(m);
                        next.push(t);
                    }
                }
            }
            tuples = next;
            placed.push(table);
        }
        let len = tuples.len();
        let rows = tuples.into_iter().flatten().collect();
        JoinedView {
            tables: placed,
            stride,
            rows,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tables(&self) -> &[TableId] {
        &self.tables
    }

    pub fn position(&self, table: TableId) -> Option<usize> {
        self.tables.iter().position(|t| *t == table)
    }

    /// Base-table row index of `table_pos` in joined row `row`.
    #[inline]
    pub fn base_row(&self, row: usize, table_pos: usize) -> usize {
        self.rows[row * self.stride + table_pos] as usize
    }
}

/// Column descriptions keyed by column.
#[derive(Debug, Clone, Default)]
pub struct DataDictionary {
    pub entries: BTreeMap<ColumnId, String>,
}

impl DataDictionary {
    pub fn description(&self, column: ColumnId) -> Option<&str> {
        self.entries.get(&column).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parses `table.column<TAB>description` lines. Later duplicates win.
pub fn parse_data_dictionary(text: &str, schema: &Schema) -> Result<DataDictionary> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (key, description) = line
            .split_once('\t')
            .ok_or(DatasetError::MalformedLine { line: i + 1 })?;
        let key = key.trim();
        let column = key
            .split_once('.')
            .and_then(|_| schema.resolve_column(key))
            .ok_or_else(|| DatasetError::UnknownColumn {
                line: i + 1,
                column: key.to_string(),
            })?;
        entries.insert(column, description.trim().to_string());
    }
    Ok(DataDictionary { entries })
}

/// JSON sidecar listing table files and foreign keys.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SchemaSidecar {
    pub tables: Vec<String>,
    #[serde(default)]
    pub foreign_keys: Vec<SidecarForeignKey>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SidecarForeignKey {
    pub from: String,
    pub to: String,
}

impl SchemaSidecar {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DatasetError::Sidecar(e.to_string()))
    }

    pub fn foreign_keys(&self) -> Result<Vec<ForeignKey>> {
        self.foreign_keys
            .iter()
            .map(|fk| {
                ForeignKey::new(&fk.from, &fk.to).ok_or_else(|| {
                    DatasetError::Sidecar(format!(
                        "foreign key `{} -> {}` must use table.column on both sides",
                        fk.from, fk.to
                    ))
                })
            })
            .collect()
    }

    /// Table file paths resolved against the sidecar's directory.
    pub fn table_paths(&self, base: &Path) -> Vec<PathBuf> {
        self.tables.iter().map(|t| base.join(t)).collect()
    }
}

/// Table name derived from a file path (its stem).
pub fn table_name_for(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

pub fn load_csv_file(path: &Path) -> Result<Table> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_csv(&bytes, &table_name_for(path))
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnType::Numeric => f.write_str("numeric"),
            ColumnType::Text => f.write_str("text"),
        }
    }
}
