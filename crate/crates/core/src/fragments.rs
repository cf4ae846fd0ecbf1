//! Query fragments, their keyword bags and the per-category BM25 index.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnId, DataDictionary, Schema, TableId};
use crate::document::WeightedKeywordSet;
use crate::lexicon::{decompose_name, normalize_term, text_terms, word_term, SynonymLexicon, Wordlist};
use crate::query::AggFunction;

/// Columns with more distinct literals than this yield no predicate fragments.
pub const DEFAULT_LITERAL_CAP: usize = 20_000;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FragmentId(pub u32);

impl fmt::Display for FragmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Function,
    AggColumn,
    Predicate,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Function, Category::AggColumn, Category::Predicate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Function => "function",
            Category::AggColumn => "target",
            Category::Predicate => "predicate",
        }
    }
}

/// What an aggregation ranges over: all rows of a table or one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Target {
    Star(TableId),
    Column(ColumnId),
}

impl Target {
    pub fn table(self) -> TableId {
        match self {
            Target::Star(t) => t,
            Target::Column(c) => c.table,
        }
    }

    pub fn is_star(self) -> bool {
        matches!(self, Target::Star(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FragmentKind {
    Function(AggFunction),
    AggColumn(Target),
    /// `column = literal` where `literal` indexes the column's distinct list.
    Predicate {
        column: ColumnId,
        literal: u32,
    },
}

impl FragmentKind {
    pub fn category(&self) -> Category {
        match self {
            FragmentKind::Function(_) => Category::Function,
            FragmentKind::AggColumn(_) => Category::AggColumn,
            FragmentKind::Predicate { .. } => Category::Predicate,
        }
    }
}

/// Multiset of lowercase, stopword-free terms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeywordBag {
    terms: BTreeMap<String, u32>,
}

impl KeywordBag {
    pub fn add(&mut self, term: &str) {
        if let Some(t) = word_term(term) {
            *self.terms.entry(t).or_insert(0) += 1;
        }
    }

    pub fn extend<I, S>(&mut self, terms: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for t in terms {
            self.add(t.as_ref());
        }
    }

    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains_key(term)
    }

    pub fn frequency(&self, term: &str) -> u32 {
        self.terms.get(term).copied().unwrap_or(0)
    }

    /// Total number of term occurrences.
    pub fn size(&self) -> u32 {
        self.terms.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.terms.iter().map(|(t, n)| (t.as_str(), *n))
    }
}

#[derive(Debug, Clone)]
pub struct QueryFragment {
    pub id: FragmentId,
    pub kind: FragmentKind,
    pub keywords: KeywordBag,
}

/// Fixed keyword sets for the aggregation functions.
pub fn function_terms(f: AggFunction) -> &'static [&'static str] {
    match f {
        AggFunction::Count => &["count", "number", "many", "total", "times"],
        AggFunction::CountDistinct => &["distinct", "unique", "different"],
        AggFunction::Sum => &["sum", "total", "combined", "overall"],
        AggFunction::Avg => &["average", "mean", "typical", "per"],
        AggFunction::Min => &["minimum", "least", "lowest", "smallest", "fewest"],
        AggFunction::Max => &["maximum", "most", "highest", "largest", "biggest"],
        AggFunction::Percentage => &["percent", "percentage", "share", "proportion", "ratio"],
        AggFunction::ConditionalProbability => &["of", "among", "given", "those", "who"],
    }
}

/// Inputs for keyword derivation besides the schema itself.
#[derive(Debug, Clone, Default)]
pub struct KeywordSources {
    pub dictionary: Option<DataDictionary>,
    pub synonyms: SynonymLexicon,
    pub wordlist: Wordlist,
}

impl KeywordSources {
    pub fn builtin() -> Self {
        KeywordSources {
            dictionary: None,
            synonyms: SynonymLexicon::builtin(),
            wordlist: Wordlist::builtin(),
        }
    }
}

fn name_terms(name: &str, wordlist: &Wordlist) -> Vec<String> {
    decompose_name(name, wordlist)
        .iter()
        .map(|t| normalize_term(t))
        .collect()
}

fn with_synonyms(terms: &[String], synonyms: &SynonymLexicon) -> Vec<String> {
    let mut out = terms.to_vec();
    for t in terms {
        out.extend(synonyms.synonyms(t).map(str::to_string));
    }
    out
}

pub fn derive_fragment_keywords(kind: &FragmentKind, schema: &Schema, sources: &KeywordSources) -> KeywordBag {
    let mut bag = KeywordBag::default();
    let column_part = |bag: &mut KeywordBag, column: ColumnId| {
        let col = schema.column(column);
        let terms = name_terms(col.name(), &sources.wordlist);
        bag.extend(with_synonyms(&terms, &sources.synonyms));
        bag.extend(name_terms(schema.table(column.table).name(), &sources.wordlist));
        if let Some(desc) = sources.dictionary.as_ref().and_then(|d| d.description(column)) {
            bag.extend(text_terms(desc));
        }
    };
    match *kind {
        FragmentKind::Function(f) => bag.extend(function_terms(f).iter().copied()),
        FragmentKind::AggColumn(Target::Star(table)) => {
            bag.extend(name_terms(schema.table(table).name(), &sources.wordlist));
        }
        FragmentKind::AggColumn(Target::Column(column)) => column_part(&mut bag, column),
        FragmentKind::Predicate { column, literal } => {
            let text = &schema.column(column).distinct_literals()[literal as usize];
            let terms = text_terms(text);
            bag.extend(with_synonyms(&terms, &sources.synonyms));
            column_part(&mut bag, column);
        }
    }
    bag
}

/// Every fragment derivable from a schema, grouped by category.
#[derive(Debug, Clone)]
pub struct FragmentCatalog {
    fragments: Vec<QueryFragment>,
    by_category: [Vec<FragmentId>; 3],
    predicates: HashMap<(ColumnId, u32), FragmentId>,
    targets: HashMap<Target, FragmentId>,
    skipped_columns: Vec<ColumnId>,
}

impl FragmentCatalog {
    pub fn build(schema: &Schema, sources: &KeywordSources, literal_cap: usize) -> Self {
        let mut kinds: Vec<FragmentKind> = AggFunction::ALL.iter().map(|f| FragmentKind::Function(*f)).collect();
        for table in schema.table_ids() {
            kinds.push(FragmentKind::AggColumn(Target::Star(table)));
            for (ci, col) in schema.table(table).columns().iter().enumerate() {
                if col.is_numeric() {
                    kinds.push(FragmentKind::AggColumn(Target::Column(ColumnId {
                        table,
                        column: ci as u16,
                    })));
                }
            }
        }
        let mut skipped_columns = Vec::new();
        for column in schema.column_ids() {
            let n = schema.column(column).distinct_literals().len();
            if n > literal_cap {
                log::warn!(
                    "column {} has {n} distinct literals (cap {literal_cap}); no predicates generated",
                    schema.column_name(column)
                );
                skipped_columns.push(column);
                continue;
            }
            kinds.extend((0..n as u32).map(|literal| FragmentKind::Predicate { column, literal }));
        }

        let mut catalog = FragmentCatalog {
            fragments: Vec::with_capacity(kinds.len()),
            by_category: Default::default(),
            predicates: HashMap::new(),
            targets: HashMap::new(),
            skipped_columns,
        };
        for kind in kinds {
            let id = FragmentId(catalog.fragments.len() as u32);
            let keywords = derive_fragment_keywords(&kind, schema, sources);
            catalog.by_category[kind.category().index()].push(id);
            match kind {
                FragmentKind::Predicate { column, literal } => {
                    catalog.predicates.insert((column, literal), id);
                }
                FragmentKind::AggColumn(t) => {
                    catalog.targets.insert(t, id);
                }
                FragmentKind::Function(_) => {}
            }
            catalog.fragments.push(QueryFragment { id, kind, keywords });
        }
        catalog
    }

    pub fn get(&self, id: FragmentId) -> &QueryFragment {
        &self.fragments[id.0 as usize]
    }

    pub fn kind(&self, id: FragmentId) -> FragmentKind {
        self.fragments[id.0 as usize].kind
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn fragments(&self) -> &[QueryFragment] {
        &self.fragments
    }

    pub fn category(&self, c: Category) -> &[FragmentId] {
        &self.by_category[c.index()]
    }

    pub fn count(&self, c: Category) -> usize {
        self.by_category[c.index()].len()
    }

    /// Fragment id of an aggregation function; functions occupy the first ids.
    pub fn function_id(&self, f: AggFunction) -> FragmentId {
        FragmentId(f.index() as u32)
    }

    pub fn target_id(&self, t: Target) -> Option<FragmentId> {
        self.targets.get(&t).copied()
    }

    pub fn predicate_id(&self, column: ColumnId, literal: u32) -> Option<FragmentId> {
        self.predicates.get(&(column, literal)).copied()
    }

    pub fn target(&self, id: FragmentId) -> Option<Target> {
        match self.kind(id) {
            FragmentKind::AggColumn(t) => Some(t),
            _ => None,
        }
    }

    pub fn predicate(&self, id: FragmentId) -> Option<(ColumnId, u32)> {
        match self.kind(id) {
            FragmentKind::Predicate { column, literal } => Some((column, literal)),
            _ => None,
        }
    }

    pub fn skipped_columns(&self) -> &[ColumnId] {
        &self.skipped_columns
    }

    /// Human-readable label, e.g. `count`, `t.*`, `t.salary`, `t.games = 'indef'`.
    pub fn label(&self, id: FragmentId, schema: &Schema) -> String {
        match self.kind(id) {
            FragmentKind::Function(f) => f.name().to_string(),
            FragmentKind::AggColumn(Target::Star(t)) => format!("{}.*", schema.table(t).name()),
            FragmentKind::AggColumn(Target::Column(c)) => schema.column_name(c),
            FragmentKind::Predicate { column, literal } => format!(
                "{} = '{}'",
                schema.column_name(column),
                schema.column(column).distinct_literals()[literal as usize]
            ),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct CategoryIndex {
    docs: Vec<FragmentId>,
    doc_len: Vec<u32>,
    postings: HashMap<String, Vec<(u32, u32)>>,
    avg_len: f64,
}

impl CategoryIndex {
    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

/// Inverted index over fragment keyword bags, one BM25 corpus per category.
#[derive(Debug, Clone)]
pub struct FragmentIndex {
    categories: [CategoryIndex; 3],
}

pub fn build_index(catalog: &FragmentCatalog) -> FragmentIndex {
    let mut categories: [CategoryIndex; 3] = Default::default();
    for fragment in catalog.fragments() {
        let idx = &mut categories[fragment.kind.category().index()];
        let local = idx.docs.len() as u32;
        idx.docs.push(fragment.id);
        idx.doc_len.push(fragment.keywords.size());
        for (term, tf) in fragment.keywords.iter() {
            idx.postings.entry(term.to_string()).or_default().push((local, tf));
        }
    }
    for idx in &mut categories {
        let total: u64 = idx.doc_len.iter().map(|&l| l as u64).sum();
        idx.avg_len = if idx.docs.is_empty() {
            0.0
        } else {
            total as f64 / idx.docs.len() as f64
        };
    }
    FragmentIndex { categories }
}

impl FragmentIndex {
    pub fn document_count(&self, c: Category) -> usize {
        self.categories[c.index()].docs.len()
    }

    pub fn average_length(&self, c: Category) -> f64 {
        self.categories[c.index()].avg_len
    }

    pub fn postings(&self, c: Category, term: &str) -> Vec<(FragmentId, u32)> {
        let idx = &self.categories[c.index()];
        idx.postings
            .get(term)
            .map(|p| p.iter().map(|&(d, tf)| (idx.docs[d as usize], tf)).collect())
            .unwrap_or_default()
    }

    /// Scores fragments per category against weighted query terms and keeps
    /// the `k` best of each. Ties go to the lower fragment id.
    pub fn retrieve(&self, query: &WeightedKeywordSet, k: usize) -> RelevanceRow {
        let mut row = RelevanceRow::default();
        for c in Category::ALL {
            let idx = &self.categories[c.index()];
            let mut scores: HashMap<u32, f64> = HashMap::new();
            for (term, weight) in query.iter() {
                let Some(postings) = idx.postings.get(term) else {
                    continue;
                };
                let idf = idx.idf(postings.len());
                for &(doc, tf) in postings {
                    let tf = tf as f64;
                    let len_norm = if idx.avg_len > 0.0 {
                        idx.doc_len[doc as usize] as f64 / idx.avg_len
                    } else {
                        1.0
                    };
                    let s = idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * len_norm));
                    *scores.entry(doc).or_insert(0.0) += weight * s;
                }
            }
            let mut ranked: Vec<(FragmentId, f64)> = scores
                .into_iter()
                .filter(|(_, s)| *s > 0.0 && s.is_finite())
                .map(|(d, s)| (idx.docs[d as usize], s))
                .collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.truncate(k);
            row.scores[c.index()] = ranked;
        }
        row
    }
}

/// Retrieved relevance scores for one claim, best first within each category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelevanceRow {
    scores: [Vec<(FragmentId, f64)>; 3],
}

impl RelevanceRow {
    pub fn from_scores(
        function: Vec<(FragmentId, f64)>,
        target: Vec<(FragmentId, f64)>,
        predicate: Vec<(FragmentId, f64)>,
    ) -> Self {
        RelevanceRow {
            scores: [function, target, predicate],
        }
    }

    pub fn category(&self, c: Category) -> &[(FragmentId, f64)] {
        &self.scores[c.index()]
    }

    pub fn score(&self, id: FragmentId) -> Option<f64> {
        self.scores
            .iter()
            .flat_map(|v| v.iter())
            .find(|(f, _)| *f == id)
            .map(|(_, s)| *s)
    }

    pub fn is_empty(&self) -> bool {
        self.scores.iter().all(Vec::is_empty)
    }

    pub fn len(&self) -> usize {
        self.scores.iter().map(Vec::len).sum()
    }

    /// Multiplies every score of one category by `factor`.
    pub fn scale_category(&mut self, c: Category, factor: f64) {
        for (_, s) in &mut self.scores[c.index()] {
            *s *= factor;
        }
    }
}
