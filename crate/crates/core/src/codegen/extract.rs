//! Reference argument extractor.
//!
//! Scans the subtask sentence for value candidates (digit literals, number
//! words, boolean words, quoted strings), then binds them to parameters: first
//! by proximity to a mention of the parameter's name, then whatever is left by
//! order of appearance.

use std::sync::OnceLock;

use regex::Regex;

use super::numbers::{canonical_literal, is_number_word, parse_number_words};
use super::{ArgumentExtractor, CodegenError};
use crate::corpus::{ApiFunction, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CandidateKind {
    Numeric,
    Boolean,
    Text,
}

impl CandidateKind {
    fn for_type(ty: ValueType) -> Self {
        match ty {
            ValueType::Integer | ValueType::Decimal => CandidateKind::Numeric,
            ValueType::Boolean => CandidateKind::Boolean,
            ValueType::String => CandidateKind::Text,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Candidate {
    pub kind: CandidateKind,
    pub value: String,
    /// Index of the first token of the candidate.
    pub start: usize,
    /// Index one past its last token.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word(String),
    Literal(String),
    Quoted(String),
}

fn token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#""([^"]*)"|“([^”]*)”|([-+]?\d+(?:\.\d+)?)|([A-Za-z]+(?:['-][A-Za-z]+)*)"#)
            .expect("token regex compiles")
    })
}

fn tokenize(text: &str) -> Vec<Token> {
    token_regex()
        .captures_iter(text)
        .map(|c| {
            if let Some(q) = c.get(1).or_else(|| c.get(2)) {
                Token::Quoted(q.as_str().to_string())
            } else if let Some(n) = c.get(3) {
                Token::Literal(n.as_str().to_string())
            } else {
                Token::Word(c[4].to_lowercase())
            }
        })
        .collect()
}

fn boolean_word(word: &str) -> Option<&'static str> {
    match word {
        "true" | "on" | "yes" | "enable" | "enabled" => Some("true"),
        "false" | "off" | "no" | "disable" | "disabled" => Some("false"),
        _ => None,
    }
}

fn scan(tokens: &[Token], wanted: &[CandidateKind]) -> Vec<Candidate> {
    let want = |k| wanted.contains(&k);
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match &tokens[i] {
            Token::Literal(lit) if want(CandidateKind::Numeric) => {
                if let Some(value) = canonical_literal(lit) {
                    out.push(Candidate { kind: CandidateKind::Numeric, value, start: i, end: i + 1 });
                }
                i += 1;
            }
            Token::Quoted(s) if want(CandidateKind::Text) => {
                out.push(Candidate { kind: CandidateKind::Text, value: s.clone(), start: i, end: i + 1 });
                i += 1;
            }
            Token::Word(w) if want(CandidateKind::Numeric) && is_number_word(w) => {
                // Collect the run of words starting here and parse a phrase.
                let run: Vec<&str> = tokens[i..]
                    .iter()
                    .map_while(|t| match t {
                        Token::Word(w) => Some(w.as_str()),
                        _ => None,
                    })
                    .collect();
                match parse_number_words(&run) {
                    Some((value, used)) => {
                        out.push(Candidate { kind: CandidateKind::Numeric, value, start: i, end: i + used });
                        i += used;
                    }
                    None => i += 1,
                }
            }
            Token::Word(w) if want(CandidateKind::Boolean) => {
                if let Some(b) = boolean_word(w) {
                    out.push(Candidate { kind: CandidateKind::Boolean, value: b.into(), start: i, end: i + 1 });
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    out
}

fn name_tokens(name: &str) -> Vec<String> {
    name.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .filter(|s| !is_number_word(s))
        .collect()
}

/// Token positions where the parameter is mentioned. A full match of the name's
/// tokens wins (position of its last token); otherwise occurrences of the
/// first name token count.
fn mentions(tokens: &[Token], param: &str, candidates: &[Candidate]) -> Vec<usize> {
    let parts = name_tokens(param);
    if parts.is_empty() {
        return Vec::new();
    }
    let inside_candidate = |i: usize| candidates.iter().any(|c| c.start <= i && i < c.end);
    let word_at = |i: usize| match tokens.get(i) {
        Some(Token::Word(w)) if !inside_candidate(i) => Some(w.as_str()),
        _ => None,
    };
    let full: Vec<usize> = (0..tokens.len())
        .filter(|&i| parts.iter().enumerate().all(|(k, p)| word_at(i + k) == Some(p.as_str())))
        .map(|i| i + parts.len() - 1)
        .collect();
    if !full.is_empty() {
        return full;
    }
    (0..tokens.len()).filter(|&i| word_at(i) == Some(parts[0].as_str())).collect()
}

// Mentions usually precede their value ("set the speed to five"); a mention
// after the value costs an extra half token so the preceding one wins.
fn cost(mention_positions: &[usize], c: &Candidate) -> f64 {
    mention_positions
        .iter()
        .map(|&m| {
            if m < c.start {
                (c.start - m) as f64
            } else {
                (m + 1).saturating_sub(c.end) as f64 + 0.5
            }
        })
        .fold(f64::INFINITY, f64::min)
}

const EXHAUSTIVE_LIMIT: usize = 7;

/// Bind candidates to parameters. `kinds[p]` is the kind parameter `p` accepts.
/// Returns candidate indices per parameter.
pub(crate) fn bind(
    kinds: &[CandidateKind],
    mention_sets: &[Vec<usize>],
    candidates: &[Candidate],
) -> Option<Vec<usize>> {
    let n = kinds.len();
    let mut assignment: Vec<Option<usize>> = vec![None; n];
    let mentioned: Vec<usize> = (0..n).filter(|&p| !mention_sets[p].is_empty()).collect();
    let costs: Vec<Vec<f64>> = mentioned
        .iter()
        .map(|&p| {
            candidates
                .iter()
                .map(|c| if c.kind == kinds[p] { cost(&mention_sets[p], c) } else { f64::INFINITY })
                .collect()
        })
        .collect();

    if mentioned.len() <= EXHAUSTIVE_LIMIT {
        // Minimum total distance over injective assignments; the first optimum
        // in declaration-order enumeration wins ties.
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut used = vec![false; candidates.len()];
        let mut current = Vec::with_capacity(mentioned.len());
        search(&costs, 0, 0.0, &mut used, &mut current, &mut best);
        if let Some((_, picks)) = best {
            for (slot, &p) in mentioned.iter().enumerate() {
                assignment[p] = Some(picks[slot]);
            }
        }
    } else {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (slot, row) in costs.iter().enumerate() {
            for (ci, &c) in row.iter().enumerate() {
                if c.is_finite() {
                    pairs.push((c, slot, ci));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut taken = vec![false; candidates.len()];
        for (_, slot, ci) in pairs {
            let p = mentioned[slot];
            if assignment[p].is_none() && !taken[ci] {
                assignment[p] = Some(ci);
                taken[ci] = true;
            }
        }
    }

    // Whatever is left goes by order of appearance.
    let mut taken: Vec<bool> = vec![false; candidates.len()];
    for ci in assignment.iter().flatten() {
        taken[*ci] = true;
    }
    for p in 0..n {
        if assignment[p].is_none() {
            let next = (0..candidates.len()).find(|&ci| !taken[ci] && candidates[ci].kind == kinds[p])?;
            taken[next] = true;
            assignment[p] = Some(next);
        }
    }
    assignment.into_iter().collect()
}

fn search(
    costs: &[Vec<f64>],
    slot: usize,
    acc: f64,
    used: &mut [bool],
    current: &mut Vec<usize>,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if let Some((b, _)) = best {
        if acc >= *b {
            return;
        }
    }
    if slot == costs.len() {
        *best = Some((acc, current.clone()));
        return;
    }
    for ci in 0..used.len() {
        let c = costs[slot][ci];
        if used[ci] || !c.is_finite() {
            continue;
        }
        used[ci] = true;
        current.push(ci);
        search(costs, slot + 1, acc + c, used, current, best);
        current.pop();
        used[ci] = false;
    }
}

/// Deterministic rule-based extractor used as the default and as the oracle for
/// generated datasets.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceExtractor;

impl ArgumentExtractor for ReferenceExtractor {
    fn name(&self) -> &str {
        "reference"
    }

    fn extract_values(&self, text: &str, function: &ApiFunction) -> Result<Vec<String>, CodegenError> {
        let kinds: Vec<CandidateKind> = function
            .parameters
            .iter()
            .map(|p| CandidateKind::for_type(p.value_type))
            .collect();
        let mut wanted = kinds.clone();
        wanted.dedup();
        let tokens = tokenize(text);
        let candidates = scan(&tokens, &wanted);
        if candidates.len() != kinds.len() {
            return Err(CodegenError::Arity {
                function: function.name.clone(),
                expected: kinds.len(),
                found: candidates.len(),
            });
        }
        let mention_sets: Vec<Vec<usize>> = function
            .parameters
            .iter()
            .map(|p| mentions(&tokens, &p.name, &candidates))
            .collect();
        let picks = bind(&kinds, &mention_sets, &candidates).ok_or_else(|| CodegenError::Arity {
            function: function.name.clone(),
            expected: kinds.len(),
            found: candidates.len(),
        })?;
        Ok(picks.into_iter().map(|ci| candidates[ci].value.clone()).collect())
    }
}
