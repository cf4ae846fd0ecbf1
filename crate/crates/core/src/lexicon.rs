//! Term handling shared by fragment indexing and claim keyword extraction.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::OnceLock;

const STOPWORDS: &str = include_str!("../data/stopwords.txt");
const WORDLIST: &str = include_str!("../data/wordlist.txt");
const SYNONYMS: &str = include_str!("../data/synonyms.tsv");

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

pub fn is_stopword(term: &str) -> bool {
    stopwords().contains(term)
}

/// Light plural folding applied symmetrically to fragment bags and claim
/// keywords: "categories" -> "category", "bans" -> "ban".
pub fn normalize_term(term: &str) -> String {
    let lower = term.to_lowercase();
    if lower.chars().all(|c| c.is_ascii_digit()) {
        return lower;
    }
    let n = lower.len();
    if n > 4 && lower.ends_with("ies") {
        return format!("{}y", &lower[..n - 3]);
    }
    if n > 3
        && lower.ends_with('s')
        && !lower.ends_with("ss")
        && !lower.ends_with("us")
        && !lower.ends_with("is")
        && lower.is_char_boundary(n - 1)
    {
        return lower[..n - 1].to_string();
    }
    lower
}

/// Splits free text into normalised, stopword-free terms.
pub fn text_terms(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\'').to_lowercase())
        .filter(|w| !w.is_empty() && !is_stopword(w))
        .map(|w| normalize_term(&w))
        .filter(|w| !w.is_empty() && !is_stopword(w))
        .collect()
}

/// Single-token term for a word already isolated by a tokenizer; `None` when
/// the word is a stopword.
pub fn word_term(word: &str) -> Option<String> {
    let lower = word.to_lowercase();
    if lower.is_empty() || is_stopword(&lower) {
        return None;
    }
    let t = normalize_term(&lower);
    (!t.is_empty() && !is_stopword(&t)).then_some(t)
}

/// Dictionary words used to segment concatenated identifiers.
#[derive(Debug, Clone, Default)]
pub struct Wordlist {
    words: HashSet<String>,
}

impl Wordlist {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        Self::from_lines(WORDLIST)
    }

    pub fn from_lines(text: &str) -> Self {
        let mut w = Self::default();
        w.extend(text.lines());
        w
    }

    pub fn extend<'a>(&mut self, words: impl IntoIterator<Item = &'a str>) {
        for word in words {
            let word = word.trim().to_lowercase();
            if word.chars().count() >= MIN_WORD_LEN {
                self.words.insert(word);
            }
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl<'a> FromIterator<&'a str> for Wordlist {
    fn from_iter<T: IntoIterator<Item = &'a str>>(iter: T) -> Self {
        let mut w = Self::default();
        w.extend(iter);
        w
    }
}

const MIN_WORD_LEN: usize = 3;
const MIN_RESIDUE_LEN: usize = 3;

/// Decomposes an identifier into terms: split on non-alphanumerics and case
/// transitions, then greedily extract the longest dictionary word from each
/// token. Residue of three or more characters is kept verbatim.
pub fn decompose_name(name: &str, wordlist: &Wordlist) -> Vec<String> {
    let mut out = Vec::new();
    for token in split_identifier(name) {
        let chars: Vec<char> = token.to_lowercase().chars().collect();
        segment(&chars, wordlist, &mut out);
    }
    out
}

fn split_identifier(name: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for part in name.split(|c: char| !c.is_alphanumeric()) {
        let chars: Vec<char> = part.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (prev, cur) = (chars[i - 1], chars[i]);
            let lower_to_upper = prev.is_lowercase() && cur.is_uppercase();
            let acronym_end =
                prev.is_uppercase() && cur.is_uppercase() && chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if lower_to_upper || acronym_end {
                tokens.push(chars[start..i].iter().collect());
                start = i;
            }
        }
        if start < chars.len() {
            tokens.push(chars[start..].iter().collect());
        }
    }
    tokens
}

fn segment(chars: &[char], wordlist: &Wordlist, out: &mut Vec<String>) {
    if chars.is_empty() {
        return;
    }
    let n = chars.len();
    for len in (MIN_WORD_LEN..=n).rev() {
        for start in 0..=(n - len) {
            let candidate: String = chars[start..start + len].iter().collect();
            if wordlist.contains(&candidate) {
                segment(&chars[..start], wordlist, out);
                out.push(candidate);
                segment(&chars[start + len..], wordlist, out);
                return;
            }
        }
    }
    if n >= MIN_RESIDUE_LEN {
        out.push(chars.iter().collect());
    }
}

/// Term-to-synonyms lexicon loaded from `term<TAB>synonym` lines. Entries
/// are symmetric.
#[derive(Debug, Clone, Default)]
pub struct SynonymLexicon {
    map: HashMap<String, BTreeSet<String>>,
}

impl SynonymLexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        Self::from_tsv(SYNONYMS)
    }

    /// Lines without a tab are skipped.
    pub fn from_tsv(text: &str) -> Self {
        let mut lex = Self::default();
        for line in text.lines() {
            if let Some((a, b)) = line.trim_end_matches('\r').split_once('\t') {
                let (a, b) = (normalize_term(a.trim()), normalize_term(b.trim()));
                if a.is_empty() || b.is_empty() || a == b {
                    continue;
                }
                lex.map.entry(a.clone()).or_default().insert(b.clone());
                lex.map.entry(b).or_default().insert(a);
            }
        }
        lex
    }

    pub fn merge(&mut self, other: SynonymLexicon) {
        for (k, v) in other.map {
            self.map.entry(k).or_default().extend(v);
        }
    }

    pub fn synonyms(&self, term: &str) -> impl Iterator<Item = &str> {
        self.map
            .get(term)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
