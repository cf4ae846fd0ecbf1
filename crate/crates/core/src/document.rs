//! Document structure, claim detection and per-claim keyword context.

use std::collections::{BTreeMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::word_term;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DocumentError {
    #[error("malformed markup: {0}")]
    MalformedMarkup(String),
    #[error("parse sidecar: {0}")]
    Sidecar(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no dependency parse for sentence {sentence}")]
pub struct MissingParse {
    pub sentence: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentFormat {
    Html,
    Canonical,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    Number,
    Ordinal,
    Percent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
    /// Byte span within the owning sentence's text.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct Sentence {
    pub text: String,
    pub tokens: Vec<Token>,
    pub paragraph: usize,
}

#[derive(Debug, Clone)]
pub struct Paragraph {
    pub section: usize,
    pub sentences: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Section {
    pub headline: String,
    pub level: usize,
    pub parent: Option<usize>,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Heading(usize),
    Paragraph(usize),
}

/// Hierarchical document: sections (with headlines) contain paragraphs,
/// paragraphs contain sentences. Section 0 is the implicit root.
#[derive(Debug, Clone)]
pub struct Document {
    pub sections: Vec<Section>,
    pub paragraphs: Vec<Paragraph>,
    pub sentences: Vec<Sentence>,
    pub blocks: Vec<Block>,
}

impl Document {
    /// Sections from the one containing `paragraph` up to (excluding) the root.
    pub fn section_path(&self, paragraph: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut s = Some(self.paragraphs[paragraph].section);
        while let Some(i) = s {
            if i == 0 {
                break;
            }
            out.push(i);
            s = self.sections[i].parent;
        }
        out
    }
}

struct Builder {
    doc: Document,
    open: Vec<usize>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            doc: Document {
                sections: vec![Section {
                    headline: String::new(),
                    level: 0,
                    parent: None,
                    tokens: Vec::new(),
                }],
                paragraphs: Vec::new(),
                sentences: Vec::new(),
                blocks: Vec::new(),
            },
            open: vec![0],
        }
    }

    fn heading(&mut self, level: usize, text: &str) {
        while self
            .open
            .last()
            .is_some_and(|&s| s != 0 && self.doc.sections[s].level >= level)
        {
            self.open.pop();
        }
        let parent = *self.open.last().unwrap_or(&0);
        let headline = collapse_ws(text);
        let tokens = tokenize(&headline);
        let id = self.doc.sections.len();
        self.doc.sections.push(Section {
            headline,
            level,
            parent: Some(parent),
            tokens,
        });
        self.open.push(id);
        self.doc.blocks.push(Block::Heading(id));
    }

    fn paragraph(&mut self, text: &str) {
        let text = collapse_ws(text);
        if text.is_empty() {
            return;
        }
        let section = *self.open.last().unwrap_or(&0);
        let pid = self.doc.paragraphs.len();
        let mut ids = Vec::new();
        for s in split_sentences(&text) {
            ids.push(self.doc.sentences.len());
            self.doc.sentences.push(Sentence {
                tokens: tokenize(&s),
                text: s,
                paragraph: pid,
            });
        }
        self.doc.paragraphs.push(Paragraph {
            section,
            sentences: ids,
        });
        self.doc.blocks.push(Block::Paragraph(pid));
    }
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn ingest_document(input: &str, format: DocumentFormat) -> Result<Document, DocumentError> {
    let format = match format {
        DocumentFormat::Auto if looks_like_html(input) => DocumentFormat::Html,
        DocumentFormat::Auto => DocumentFormat::Canonical,
        f => f,
    };
    match format {
        DocumentFormat::Html => parse_html(input),
        _ => Ok(parse_canonical(input)),
    }
}

fn looks_like_html(input: &str) -> bool {
    let lower = input.to_ascii_lowercase();
    [
        "<html", "<body", "<p", "<div", "<h1", "<h2", "<h3", "<h4", "<h5", "<h6", "<li", "<br",
    ]
    .iter()
    .any(|t| {
        lower.match_indices(t).any(|(i, _)| {
            lower[i + t.len()..]
                .chars()
                .next()
                .is_some_and(|c| c == '>' || c == '/' || c.is_whitespace())
        })
    })
}

fn parse_canonical(input: &str) -> Document {
    let mut b = Builder::new();
    let mut para = String::new();
    for line in input.lines() {
        let trimmed = line.trim();
        let hashes = trimmed.chars().take_while(|&c| c == '#').count();
        if hashes > 0 && trimmed[hashes..].starts_with([' ', '\t']) || (hashes > 0 && trimmed.len() == hashes) {
            b.paragraph(&std::mem::take(&mut para));
            b.heading(hashes, &trimmed[hashes..]);
        } else if trimmed.is_empty() {
            b.paragraph(&std::mem::take(&mut para));
        } else {
            para.push(' ');
            para.push_str(trimmed);
        }
    }
    b.paragraph(&para);
    b.doc
}

fn decode_entities(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        let end = rest[..rest.len().min(12)].find(';');
        let decoded = end.and_then(|e| {
            let name = &rest[1..e];
            let ch = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some(' '),
                "rsquo" | "lsquo" => Some('\''),
                "ldquo" | "rdquo" => Some('"'),
                "ndash" | "mdash" => Some('-'),
                _ if name.starts_with("#x") || name.starts_with("#X") => {
                    u32::from_str_radix(&name[2..], 16).ok().and_then(char::from_u32)
                }
                _ if name.starts_with('#') => name[1..].parse().ok().and_then(char::from_u32),
                _ => None,
            };
            ch.map(|c| (c, e + 1))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn parse_html(input: &str) -> Result<Document, DocumentError> {
    let mut b = Builder::new();
    let mut text = String::new();
    let mut heading: Option<(usize, String)> = None;
    let mut skip_until: Option<String> = None;
    let mut rest = input;
    while !rest.is_empty() {
        let Some(lt) = rest.find('<') else {
            push_text(&mut heading, &mut text, skip_until.is_some(), rest);
            break;
        };
        push_text(&mut heading, &mut text, skip_until.is_some(), &rest[..lt]);
        rest = &rest[lt..];
        if rest.starts_with("<!--") {
            let end = rest
                .find("-->")
                .ok_or_else(|| DocumentError::MalformedMarkup("unterminated comment".into()))?;
            rest = &rest[end + 3..];
            continue;
        }
        let gt = rest
            .find('>')
            .ok_or_else(|| DocumentError::MalformedMarkup("unterminated tag".into()))?;
        let inner = rest[1..gt].trim();
        rest = &rest[gt + 1..];
        let closing = inner.starts_with('/');
        let name: String = inner
            .trim_start_matches('/')
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        if let Some(skip) = &skip_until {
            if closing && &name == skip {
                skip_until = None;
            }
            continue;
        }
        match name.as_str() {
            "script" | "style" | "head" if !closing && !inner.ends_with('/') => {
                skip_until = Some(name);
            }
            "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => {
                let level = name[1..].parse::<usize>().unwrap_or(1);
                if closing {
                    match heading.take() {
                        Some((l, t)) if l == level => b.heading(level, &decode_entities(&t)),
                        Some(_) => return Err(DocumentError::MalformedMarkup(format!("mismatched </{name}>"))),
                        None => {}
                    }
                } else {
                    if heading.is_some() {
                        return Err(DocumentError::MalformedMarkup(format!(
                            "<{name}> opened inside a heading"
                        )));
                    }
                    b.paragraph(&decode_entities(&std::mem::take(&mut text)));
                    heading = Some((level, String::new()));
                }
            }
            "p" | "div" | "li" | "ul" | "ol" | "table" | "tr" | "td" | "th" | "blockquote" | "section" | "article"
            | "body" | "html" | "header" | "footer" | "main" => {
                if heading.is_none() {
                    b.paragraph(&decode_entities(&std::mem::take(&mut text)));
                }
            }
            "br" => push_text(&mut heading, &mut text, false, " "),
            _ => {}
        }
    }
    if let Some((level, _)) = heading {
        return Err(DocumentError::MalformedMarkup(format!("unclosed <h{level}>")));
    }
    b.paragraph(&decode_entities(&text));
    Ok(b.doc)
}

fn push_text(heading: &mut Option<(usize, String)>, text: &mut String, skipping: bool, s: &str) {
    if skipping {
        return;
    }
    match heading {
        Some((_, h)) => h.push_str(s),
        None => text.push_str(s),
    }
}

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "inc", "ltd", "co", "corp", "no",
    "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "u.s", "u.k", "approx", "est",
    "fig", "gov", "gen", "sen", "rep",
];

/// Splits paragraph text at terminal punctuation followed by whitespace,
/// except after known abbreviations and single-letter initials.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if matches!(c, b'.' | b'!' | b'?') {
            let mut j = i + 1;
            while j < bytes.len() && matches!(bytes[j], b'"' | b'\'' | b')') {
                j += 1;
            }
            let boundary = j >= bytes.len() || bytes[j].is_ascii_whitespace();
            if boundary && !(c == b'.' && is_abbreviation(&text[start..i])) {
                let s = text[start..j].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = j;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

fn is_abbreviation(before: &str) -> bool {
    let word: String = before
        .chars()
        .rev()
        .take_while(|c| c.is_alphanumeric() || *c == '.')
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect::<String>()
        .to_lowercase();
    if word.is_empty() {
        return false;
    }
    (word.chars().count() == 1 && word.chars().all(char::is_alphabetic)) || ABBREVIATIONS.contains(&word.as_str())
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Splits sentence text into word, number, ordinal and percent tokens.
/// Punctuation and whitespace produce no tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |k: usize| chars.get(k).map_or(text.len(), |(b, _)| *b);
    let mut tokens = Vec::new();
    let mut k = 0;
    while k < chars.len() {
        let (start, c) = chars[k];
        let starts_number = c.is_ascii_digit()
            || (c == '.'
                && chars.get(k + 1).is_some_and(|(_, n)| n.is_ascii_digit())
                && (k == 0 || !chars[k - 1].1.is_alphanumeric()));
        if starts_number {
            let mut j = k;
            let mut seen_point = false;
            while j < chars.len() {
                let ch = chars[j].1;
                if ch.is_ascii_digit() {
                    j += 1;
                } else if ch == ','
                    && !seen_point
                    && (1..=3).all(|d| chars.get(j + d).is_some_and(|(_, x)| x.is_ascii_digit()))
                    && !chars.get(j + 4).is_some_and(|(_, x)| x.is_ascii_digit())
                {
                    j += 4;
                } else if ch == '.' && !seen_point && chars.get(j + 1).is_some_and(|(_, x)| x.is_ascii_digit()) {
                    seen_point = true;
                    j += 1;
                } else {
                    break;
                }
            }
            let mut w = j;
            while w < chars.len() && chars[w].1.is_alphabetic() {
                w += 1;
            }
            if w > j {
                let suffix: String = chars[j..w].iter().map(|(_, c)| *c).collect::<String>().to_lowercase();
                let kind = if matches!(suffix.as_str(), "st" | "nd" | "rd" | "th") {
                    TokenKind::Ordinal
                } else {
                    TokenKind::Word
                };
                tokens.push(Token {
                    text: text[start..end_of(w)].to_string(),
                    kind,
                    start,
                    end: end_of(w),
                });
                k = w;
            } else {
                tokens.push(Token {
                    text: text[start..end_of(j)].to_string(),
                    kind: TokenKind::Number,
                    start,
                    end: end_of(j),
                });
                k = j;
            }
        } else if c.is_alphabetic() {
            let mut j = k + 1;
            while j < chars.len() {
                let ch = chars[j].1;
                let apostrophe = is_apostrophe(ch) && chars.get(j + 1).is_some_and(|(_, n)| n.is_alphabetic());
                if ch.is_alphanumeric() || apostrophe {
                    j += 1;
                } else {
                    break;
                }
            }
            tokens.push(Token {
                text: text[start..end_of(j)].to_string(),
                kind: TokenKind::Word,
                start,
                end: end_of(j),
            });
            k = j;
        } else if c == '%' {
            tokens.push(Token {
                text: "%".into(),
                kind: TokenKind::Percent,
                start,
                end: end_of(k + 1),
            });
            k += 1;
        } else {
            k += 1;
        }
    }
    tokens
}

/// A detected numeric claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSite {
    pub id: usize,
    pub sentence: usize,
    /// Token index range within the sentence, including a trailing percent
    /// marker when present.
    pub first_token: usize,
    pub last_token: usize,
    pub claimed_value: f64,
    pub sig_digits: u32,
    pub exact_word: bool,
    pub is_percent: bool,
    /// Surface text of the number itself.
    pub text: String,
    /// Byte span of the claim within the sentence text.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsedNumber {
    pub value: f64,
    pub sig_digits: u32,
    pub exact_word: bool,
    pub is_percent: bool,
}

const YEAR_CUES: &[&str] = &["in", "since", "until", "by", "before", "after"];
const MONTHS: &[&str] = &[
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
    "jan",
    "feb",
    "mar",
    "apr",
    "jun",
    "jul",
    "aug",
    "sep",
    "sept",
    "oct",
    "nov",
    "dec",
];

fn number_word(w: &str) -> Option<(u64, NumberWordKind)> {
    use NumberWordKind::*;
    let v = match w {
        "one" => (1, Unit),
        "two" => (2, Unit),
        "three" => (3, Unit),
        "four" => (4, Unit),
        "five" => (5, Unit),
        "six" => (6, Unit),
        "seven" => (7, Unit),
        "eight" => (8, Unit),
        "nine" => (9, Unit),
        "ten" => (10, Teen),
        "eleven" => (11, Teen),
        "twelve" => (12, Teen),
        "thirteen" => (13, Teen),
        "fourteen" => (14, Teen),
        "fifteen" => (15, Teen),
        "sixteen" => (16, Teen),
        "seventeen" => (17, Teen),
        "eighteen" => (18, Teen),
        "nineteen" => (19, Teen),
        "twenty" => (20, Tens),
        "thirty" => (30, Tens),
        "forty" => (40, Tens),
        "fifty" => (50, Tens),
        "sixty" => (60, Tens),
        "seventy" => (70, Tens),
        "eighty" => (80, Tens),
        "ninety" => (90, Tens),
        "hundred" => (100, Hundred),
        "thousand" => (1_000, Scale),
        "million" => (1_000_000, Scale),
        "billion" => (1_000_000_000, Scale),
        _ => return None,
    };
    Some(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NumberWordKind {
    Unit,
    Teen,
    Tens,
    Hundred,
    Scale,
}

/// Accumulates spelled-out number words; rejects words that cannot extend
/// the current number ("one two" is two numbers).
#[derive(Default)]
struct WordNumber {
    total: u64,
    current: u64,
    words: usize,
    last_scale: u64,
}

impl WordNumber {
    fn push(&mut self, value: u64, kind: NumberWordKind) -> bool {
        use NumberWordKind::*;
        let ok = match kind {
            Unit => {
                self.current.is_multiple_of(10)
                    && (!self.current.is_multiple_of(100)
                        || self.current == 0
                        || self.words > 0 && self.current.is_multiple_of(100))
            }
            Teen | Tens => self.current.is_multiple_of(100),
            Hundred => (1..=99).contains(&(self.current % 1000)) || self.words == 0,
            Scale => {
                (self.last_scale == 0 || value < self.last_scale) && (self.total + self.current > 0 || self.words == 0)
            }
        };
        let ok = ok && !(self.words > 0 && !self.current.is_multiple_of(10) && matches!(kind, Unit | Teen | Tens));
        if !ok {
            return false;
        }
        match kind {
            Unit | Teen | Tens => self.current += value,
            Hundred => self.current = self.current.max(1) * 100,
            Scale => {
                self.total += self.current.max(1) * value;
                self.current = 0;
                self.last_scale = value;
            }
        }
        self.words += 1;
        true
    }

    fn value(&self) -> u64 {
        self.total + self.current
    }
}

fn digit_count(v: u64) -> u32 {
    v.to_string().len() as u32
}

/// Significant digits as written: leading zeros never count; trailing zeros
/// count only after a decimal point.
pub fn significant_digits(number: &str) -> u32 {
    let s: String = number.chars().filter(|c| c.is_ascii_digit() || *c == '.').collect();
    let n = if s.contains('.') {
        s.replace('.', "").trim_start_matches('0').len()
    } else {
        s.trim_start_matches('0').trim_end_matches('0').len()
    };
    n.max(1) as u32
}

/// Parses a claim's token span: digits with separators, or spelled-out words.
pub fn parse_number(tokens: &[Token]) -> Option<ParsedNumber> {
    let is_percent = tokens
        .last()
        .is_some_and(|t| t.kind == TokenKind::Percent || t.text.eq_ignore_ascii_case("percent"))
        && tokens.len() > 1;
    let body = if is_percent {
        &tokens[..tokens.len() - 1]
    } else {
        tokens
    };
    let first = body.first()?;
    if first.kind == TokenKind::Number && body.len() == 1 {
        let cleaned: String = first.text.chars().filter(|c| *c != ',').collect();
        let value: f64 = cleaned.parse().ok()?;
        return Some(ParsedNumber {
            value,
            sig_digits: significant_digits(&first.text),
            exact_word: false,
            is_percent,
        });
    }
    let mut acc = WordNumber::default();
    for t in body {
        let lower = t.text.to_lowercase();
        if lower == "and" && acc.words > 0 {
            continue;
        }
        let (v, kind) = number_word(&lower)?;
        if !acc.push(v, kind) {
            return None;
        }
    }
    if acc.words == 0 {
        return None;
    }
    let value = acc.value();
    Some(ParsedNumber {
        value: value as f64,
        sig_digits: digit_count(value),
        exact_word: true,
        is_percent,
    })
}

fn month_adjacent(tokens: &[Token]) -> HashSet<usize> {
    let mut out = HashSet::new();
    let is_month = |t: &Token| t.kind == TokenKind::Word && MONTHS.contains(&t.text.to_lowercase().as_str());
    let is_year =
        |t: &Token| t.kind == TokenKind::Number && t.text.len() == 4 && t.text.chars().all(|c| c.is_ascii_digit());
    for (i, t) in tokens.iter().enumerate() {
        if !is_month(t) {
            continue;
        }
        // "Sept 22, 2015", "22 September 2015", "September 2015"
        if let Some(next) = tokens.get(i + 1) {
            if matches!(next.kind, TokenKind::Number | TokenKind::Ordinal) {
                out.insert(i + 1);
                if tokens.get(i + 2).is_some_and(is_year) {
                    out.insert(i + 2);
                }
            }
        }
        if i > 0 && matches!(tokens[i - 1].kind, TokenKind::Number | TokenKind::Ordinal) {
            out.insert(i - 1);
            if tokens.get(i + 1).is_some_and(is_year) {
                out.insert(i + 1);
            }
        }
    }
    out
}

fn is_year_mention(tokens: &[Token], i: usize) -> bool {
    let t = &tokens[i];
    if t.text.len() != 4 || !t.text.chars().all(|c| c.is_ascii_digit()) {
        return false;
    }
    let v: u32 = t.text.parse().unwrap_or(0);
    (1000..=2999).contains(&v)
        && i > 0
        && tokens[i - 1].kind == TokenKind::Word
        && YEAR_CUES.contains(&tokens[i - 1].text.to_lowercase().as_str())
}

/// Finds claim sites in document order: numeric literals and spelled-out
/// cardinals, except cued years, ordinals and parts of dates.
pub fn detect_claims(doc: &Document) -> Vec<ClaimSite> {
    let mut claims = Vec::new();
    for (si, sentence) in doc.sentences.iter().enumerate() {
        let tokens = &sentence.tokens;
        let dates = month_adjacent(tokens);
        let mut i = 0;
        while i < tokens.len() {
            let t = &tokens[i];
            let mut j = i;
            let candidate = match t.kind {
                TokenKind::Number if !dates.contains(&i) && !is_year_mention(tokens, i) => {
                    j = i + 1;
                    true
                }
                TokenKind::Word if number_word(&t.text.to_lowercase()).is_some() => {
                    // longest run of number words that still parses as one number
                    let mut acc = WordNumber::default();
                    let mut k = i;
                    let mut end = i;
                    while k < tokens.len() {
                        let lower = tokens[k].text.to_lowercase();
                        if lower == "and"
                            && acc.words > 0
                            && tokens
                                .get(k + 1)
                                .is_some_and(|n| number_word(&n.text.to_lowercase()).is_some())
                        {
                            k += 1;
                            continue;
                        }
                        match number_word(&lower) {
                            Some((v, kind)) if tokens[k].kind == TokenKind::Word && acc.push(v, kind) => {
                                k += 1;
                                end = k;
                            }
                            _ => break,
                        }
                    }
                    j = end.max(i + 1);
                    true
                }
                _ => false,
            };
            if !candidate {
                i += 1;
                continue;
            }
            let mut last = j;
            if let Some(next) = tokens.get(j) {
                if next.kind == TokenKind::Percent || next.text.eq_ignore_ascii_case("percent") {
                    last = j + 1;
                }
            }
            if let Some(parsed) = parse_number(&tokens[i..last]) {
                claims.push(ClaimSite {
                    id: claims.len(),
                    sentence: si,
                    first_token: i,
                    last_token: last - 1,
                    claimed_value: parsed.value,
                    sig_digits: parsed.sig_digits,
                    exact_word: parsed.exact_word,
                    is_percent: parsed.is_percent,
                    text: sentence.text[tokens[i].start..tokens[j - 1].end].to_string(),
                    start: tokens[i].start,
                    end: tokens[last - 1].end,
                });
            }
            i = last;
        }
    }
    claims
}

/// Claim keywords: term to weight, keeping the maximum over occurrences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedKeywordSet {
    terms: BTreeMap<String, f64>,
}

impl WeightedKeywordSet {
    pub fn insert_max(&mut self, term: &str, weight: f64) {
        if !(weight > 0.0 && weight.is_finite()) || term.is_empty() {
            return;
        }
        let e = self.terms.entry(term.to_string()).or_insert(weight);
        if weight > *e {
            *e = weight;
        }
    }

    pub fn get(&self, term: &str) -> Option<f64> {
        self.terms.get(term).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.terms.iter().map(|(t, w)| (t.as_str(), *w))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        WeightedKeywordSet {
            terms: self.terms.iter().map(|(t, w)| (t.clone(), w * c)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    #[default]
    Surface,
    Parsed,
}

/// Token distances within a sentence: dependency-tree hops when a parse is
/// supplied, otherwise absolute token index difference.
#[derive(Debug, Clone, Default)]
pub struct DistanceProvider {
    pub mode: DistanceMode,
    parses: Vec<Option<Vec<(usize, usize)>>>,
}

impl DistanceProvider {
    pub fn surface() -> Self {
        Self::default()
    }

    pub fn parsed(parses: Vec<Option<Vec<(usize, usize)>>>) -> Self {
        DistanceProvider {
            mode: DistanceMode::Parsed,
            parses,
        }
    }

    /// Reads the parse sidecar: one array of `[head, dependent]` pairs per
    /// sentence, in document order. `null` marks a sentence without parse.
    pub fn from_sidecar(json: &str) -> Result<Self, DocumentError> {
        let parsed: Vec<Option<Vec<[usize; 2]>>> =
            serde_json::from_str(json).map_err(|e| DocumentError::Sidecar(e.to_string()))?;
        Ok(Self::parsed(
            parsed
                .into_iter()
                .map(|s| s.map(|edges| edges.into_iter().map(|[h, d]| (h, d)).collect()))
                .collect(),
        ))
    }

    pub fn parsed_distance(&self, sentence: usize, a: usize, b: usize) -> Result<usize, MissingParse> {
        let edges = self
            .parses
            .get(sentence)
            .and_then(Option::as_ref)
            .ok_or(MissingParse { sentence })?;
        if a == b {
            return Ok(1);
        }
        let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(h, d) in edges {
            adj.entry(h).or_default().push(d);
            adj.entry(d).or_default().push(h);
        }
        let mut seen = HashSet::from([a]);
        let mut queue = VecDeque::from([(a, 0usize)]);
        while let Some((node, dist)) = queue.pop_front() {
            for &n in adj.get(&node).into_iter().flatten() {
                if n == b {
                    return Ok((dist + 1).max(1));
                }
                if seen.insert(n) {
                    queue.push_back((n, dist + 1));
                }
            }
        }
        Err(MissingParse { sentence })
    }

    pub fn distance(&self, sentence: usize, a: usize, b: usize) -> usize {
        if self.mode == DistanceMode::Parsed {
            match self.parsed_distance(sentence, a, b) {
                Ok(d) => return d,
                Err(e) => log::warn!("{e}; falling back to surface distance"),
            }
        }
        a.abs_diff(b).max(1)
    }
}

/// Which same-sentence weight anchors the context weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextAnchor {
    /// Minimum same-sentence weight.
    #[default]
    Min,
    Max,
}

pub const PARAGRAPH_CONTEXT_FACTOR: f64 = 0.4;
pub const HEADLINE_CONTEXT_FACTOR: f64 = 0.7;

fn token_term(t: &Token) -> Option<String> {
    match t.kind {
        TokenKind::Word => word_term(&t.text),
        TokenKind::Number => Some(t.text.replace(',', "")),
        TokenKind::Ordinal | TokenKind::Percent => None,
    }
}

/// Weighted keywords for a claim: same-sentence tokens by inverse distance,
/// previous and paragraph-first sentences at 0.4 of the anchor weight,
/// enclosing headlines at 0.7 of it.
pub fn claim_keywords(
    claim: &ClaimSite,
    doc: &Document,
    dist: &DistanceProvider,
    anchor: ContextAnchor,
) -> WeightedKeywordSet {
    let mut k = WeightedKeywordSet::default();
    let sentence = &doc.sentences[claim.sentence];
    let mut same: Vec<f64> = Vec::new();
    for (i, tok) in sentence.tokens.iter().enumerate() {
        if (claim.first_token..=claim.last_token).contains(&i) {
            continue;
        }
        let Some(term) = token_term(tok) else { continue };
        let d = (claim.first_token..=claim.last_token)
            .map(|c| dist.distance(claim.sentence, i, c))
            .min()
            .unwrap_or(1);
        let w = 1.0 / d as f64;
        same.push(w);
        k.insert_max(&term, w);
    }
    if claim.is_percent {
        k.insert_max("percent", 1.0);
    }
    let m = match anchor {
        ContextAnchor::Min => same.iter().copied().fold(f64::INFINITY, f64::min),
        ContextAnchor::Max => same.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let m = if m.is_finite() { m } else { 1.0 };

    let paragraph = &doc.paragraphs[sentence.paragraph];
    let pos = paragraph
        .sentences
        .iter()
        .position(|&s| s == claim.sentence)
        .unwrap_or(0);
    let mut context = Vec::new();
    if pos > 0 {
        context.push(paragraph.sentences[pos - 1]);
    }
    if let Some(&first) = paragraph.sentences.first() {
        context.push(first);
    }
    for si in context {
        for (i, tok) in doc.sentences[si].tokens.iter().enumerate() {
            if si == claim.sentence && (claim.first_token..=claim.last_token).contains(&i) {
                continue;
            }
            if let Some(term) = token_term(tok) {
                k.insert_max(&term, PARAGRAPH_CONTEXT_FACTOR * m);
            }
        }
    }
    for s in doc.section_path(sentence.paragraph) {
        for tok in &doc.sections[s].tokens {
            if let Some(term) = token_term(tok) {
                k.insert_max(&term, HEADLINE_CONTEXT_FACTOR * m);
            }
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical(s: &str) -> Document {
        ingest_document(s, DocumentFormat::Canonical).unwrap()
    }

    #[test]
    fn html_structure() {
        let d = ingest_document("<h1>A</h1><p>Cats run. Dogs sleep.</p>", DocumentFormat::Auto).unwrap();
        assert_eq!(d.sections.len(), 2);
        assert_eq!(d.paragraphs.len(), 1);
        assert_eq!(d.sentences.len(), 2);
        assert_eq!(d.paragraphs[0].section, 1);

        let d = ingest_document("<h1>A</h1><h2>B</h2><p>t</p><h1>C</h1><p>u</p>", DocumentFormat::Html).unwrap();
        assert_eq!(d.sections[2].parent, Some(1));
        assert_eq!(d.sections[3].parent, Some(0));
        assert_eq!(d.section_path(0), vec![2, 1]);
    }

    #[test]
    fn html_errors_and_stripping() {
        assert!(matches!(
            ingest_document("<h1>never closed<p>x</p>", DocumentFormat::Html),
            Err(DocumentError::MalformedMarkup(_))
        ));
        assert!(ingest_document("<p>broken <b", DocumentFormat::Html).is_err());
        let d = ingest_document(
            "<html><head><title>T</title></head><body><p>Fish &amp; <b>chips</b> cost 5.</p><script>var x = 1;</script></body></html>",
            DocumentFormat::Html,
        )
        .unwrap();
        assert_eq!(d.sentences.len(), 1);
        assert_eq!(d.sentences[0].text, "Fish & chips cost 5.");
    }

    #[test]
    fn plain_text_fallback() {
        let d = ingest_document("First para.\nstill first.\n\nSecond para.", DocumentFormat::Auto).unwrap();
        assert_eq!(d.sections.len(), 1);
        assert_eq!(d.paragraphs.len(), 2);
        assert_eq!(d.sentences.len(), 3);
    }

    #[test]
    fn canonical_headings_nest() {
        let d = canonical("# Top\n\n## Sub\n\nText here.\n");
        assert_eq!(d.sections.len(), 3);
        assert_eq!(d.sections[2].parent, Some(1));
        assert_eq!(d.section_path(0), vec![2, 1]);
    }

    #[test]
    fn sentence_splitting_guards() {
        assert_eq!(
            split_sentences("Dr. Smith paid 3.5 dollars. Then left! OK?"),
            vec!["Dr. Smith paid 3.5 dollars.", "Then left!", "OK?"]
        );
        assert_eq!(
            split_sentences("The U.S. rate rose. Again."),
            vec!["The U.S. rate rose.", "Again."]
        );
    }

    #[test]
    fn tokenizer_kinds() {
        let toks = tokenize("56,033 coders, 13% and the 3rd of 0.040 don't");
        let kinds: Vec<(String, TokenKind)> = toks.iter().map(|t| (t.text.clone(), t.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                ("56,033".into(), TokenKind::Number),
                ("coders".into(), TokenKind::Word),
                ("13".into(), TokenKind::Number),
                ("%".into(), TokenKind::Percent),
                ("and".into(), TokenKind::Word),
                ("the".into(), TokenKind::Word),
                ("3rd".into(), TokenKind::Ordinal),
                ("of".into(), TokenKind::Word),
                ("0.040".into(), TokenKind::Number),
                ("don't".into(), TokenKind::Word),
            ]
        );
    }

    fn claims_of(text: &str) -> Vec<ClaimSite> {
        detect_claims(&canonical(text))
    }

    #[test]
    fn detects_spelled_out_claims() {
        let c = claims_of("three were for repeated substance abuse");
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].claimed_value, 3.0);
        assert!(c[0].exact_word);
        let c = claims_of("There were twenty-one bans and one hundred and five fines.");
        let values: Vec<f64> = c.iter().map(|c| c.claimed_value).collect();
        assert_eq!(values, vec![21.0, 105.0]);
        let c = claims_of("one two");
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn excludes_years_ordinals_and_dates() {
        assert!(claims_of("in 2015 the rate was high").is_empty());
        assert!(claims_of("the 3rd quarter").is_empty());
        assert!(claims_of("the data was updated on Sept. 22, 2015").is_empty());
        // a bare four-digit number without a cue is still a claim
        assert_eq!(claims_of("about 2015 people").len(), 1);
    }

    #[test]
    fn percent_claims() {
        let c = claims_of("13% of respondents across the globe");
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].claimed_value, 13.0);
        assert!(c[0].is_percent);
        assert_eq!(c[0].sig_digits, 2);
        assert_eq!(c[0].text, "13");
        let c = claims_of("it rose 4.5 percent");
        assert!(c[0].is_percent);
    }

    #[test]
    fn detection_is_idempotent() {
        let doc = canonical("# H\n\nFour of 10 players. in 1999 there were 3.\n");
        assert_eq!(detect_claims(&doc), detect_claims(&doc));
        assert!(detect_claims(&doc).iter().all(|c| c.claimed_value != 1999.0));
    }

    fn number(text: &str) -> ParsedNumber {
        parse_number(&tokenize(text)).unwrap()
    }

    #[test]
    fn number_parsing() {
        assert_eq!(
            number("56,033"),
            ParsedNumber {
                value: 56033.0,
                sig_digits: 5,
                exact_word: false,
                is_percent: false
            }
        );
        assert_eq!(
            number("four"),
            ParsedNumber {
                value: 4.0,
                sig_digits: 1,
                exact_word: true,
                is_percent: false
            }
        );
        assert_eq!(
            number("0.040"),
            ParsedNumber {
                value: 0.04,
                sig_digits: 2,
                exact_word: false,
                is_percent: false
            }
        );
        assert_eq!(number("13").sig_digits, 2);
        assert_eq!(number("1,000").sig_digits, 1);
        assert_eq!(number("one thousand").sig_digits, 4);
        assert_eq!(number("two million").value, 2_000_000.0);
    }

    #[test]
    fn keyword_weights_follow_tree_distance() {
        let doc = canonical("three were for repeated abuse, one for gambling");
        let claims = detect_claims(&doc);
        let toks: Vec<&str> = doc.sentences[0].tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(
            toks,
            vec!["three", "were", "for", "repeated", "abuse", "one", "for", "gambling"]
        );
        // three -> gambling 2 hops, one -> gambling 1 hop
        let edges = vec![(0, 1), (1, 3), (3, 4), (1, 7), (5, 7), (5, 6)];
        let dp = DistanceProvider::parsed(vec![Some(edges)]);
        let three = claim_keywords(&claims[0], &doc, &dp, ContextAnchor::Min);
        let one = claim_keywords(&claims[1], &doc, &dp, ContextAnchor::Min);
        assert_eq!(three.get("gambling"), Some(0.5));
        assert_eq!(one.get("gambling"), Some(1.0));
        assert_ne!(three, one);
    }

    #[test]
    fn headline_and_paragraph_context() {
        let doc = canonical("# Lifetime bans\n\nSuspensions were common. Four total.\n");
        let claims = detect_claims(&doc);
        assert_eq!(claims.len(), 1);
        let k = claim_keywords(&claims[0], &doc, &DistanceProvider::surface(), ContextAnchor::Min);
        // single other token at distance 1 -> anchor weight 1
        assert_eq!(k.get("total"), Some(1.0));
        assert_eq!(k.get("lifetime"), Some(0.7));
        assert_eq!(k.get("ban"), Some(0.7));
        assert_eq!(k.get("suspension"), Some(0.4));
        assert!(k.get("four").is_none());
    }

    #[test]
    fn one_sentence_paragraph_context_does_not_lower_weights() {
        let doc = canonical("Exactly four gamblers.");
        let c = &detect_claims(&doc)[0];
        let k = claim_keywords(c, &doc, &DistanceProvider::surface(), ContextAnchor::Min);
        assert_eq!(k.get("exactly"), Some(1.0));
        assert_eq!(k.get("gambler"), Some(1.0));
    }

    #[test]
    fn distances() {
        let s = DistanceProvider::surface();
        assert_eq!(s.distance(0, 2, 5), 3);
        assert_eq!(s.distance(0, 4, 5), 1);
        assert_eq!(s.distance(0, 5, 5), 1);
        let p = DistanceProvider::parsed(vec![Some(vec![(1, 2), (2, 3)]), None]);
        assert_eq!(p.distance(0, 1, 3), 2);
        assert_eq!(p.parsed_distance(1, 0, 3), Err(MissingParse { sentence: 1 }));
        assert_eq!(p.distance(1, 0, 3), 3);
        let sc = DistanceProvider::from_sidecar("[[[0,1],[1,2]], null]").unwrap();
        assert_eq!(sc.distance(0, 0, 2), 2);
    }
}
