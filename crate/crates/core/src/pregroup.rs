//! Pregroup grammar over the basic types `n`, `p`, `s`.
//!
//! A [`SimpleType`] is a basic type with an integer adjoint index: negative
//! values are iterated left adjoints, positive values iterated right
//! adjoints. A [`PregroupType`] is a product of simple types, the empty
//! product being the monoid unit. Reduction contracts `x^(k) x^(k+1)` pairs
//! (which covers both `x x^r <= 1` and `x^l x <= 1`) with a single stack
//! pass, which produces planar (nested) links.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GrammarError {
    #[error("unknown word `{0}`")]
    UnknownWord(String),
    #[error("sentence does not reduce to s; residue is `{0}`")]
    NotASentence(PregroupType),
    #[error("empty input")]
    Empty,
    #[error("cannot parse type `{0}`")]
    BadType(String),
    #[error("lexicon file: {0}")]
    Lexicon(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BasicType {
    #[serde(rename = "n")]
    N,
    #[serde(rename = "p")]
    P,
    #[serde(rename = "s")]
    S,
}

impl BasicType {
    pub const ALL: [BasicType; 3] = [BasicType::N, BasicType::P, BasicType::S];

    pub fn symbol(self) -> char {
        match self {
            BasicType::N => 'n',
            BasicType::P => 'p',
            BasicType::S => 's',
        }
    }
}

impl fmt::Display for BasicType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimpleType {
    pub base: BasicType,
    /// `< 0` left adjoints, `> 0` right adjoints.
    pub adjoint: i32,
}

impl SimpleType {
    pub fn new(base: BasicType, adjoint: i32) -> Self {
        Self { base, adjoint }
    }

    pub fn plain(base: BasicType) -> Self {
        Self::new(base, 0)
    }

    pub fn left(self) -> Self {
        Self::new(self.base, self.adjoint - 1)
    }

    pub fn right(self) -> Self {
        Self::new(self.base, self.adjoint + 1)
    }

    /// True when `self · next <= 1`.
    pub fn contracts_with(self, next: SimpleType) -> bool {
        self.base == next.base && next.adjoint == self.adjoint + 1
    }
}

impl fmt::Display for SimpleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.base)?;
        let suffix = if self.adjoint < 0 { "^l" } else { "^r" };
        for _ in 0..self.adjoint.unsigned_abs() {
            f.write_str(suffix)?;
        }
        Ok(())
    }
}

impl FromStr for SimpleType {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GrammarError::BadType(s.to_string());
        let mut parts = s.trim().split('^');
        let base = match parts.next().ok_or_else(bad)? {
            "n" => BasicType::N,
            "p" => BasicType::P,
            "s" => BasicType::S,
            _ => return Err(bad()),
        };
        let mut adjoint = 0i32;
        for p in parts {
            match p {
                "0" | "" => {}
                "l" => adjoint -= 1,
                "r" => adjoint += 1,
                // `^ll`, `^rr` shorthand
                _ if p.chars().all(|c| c == 'l') => adjoint -= p.len() as i32,
                _ if p.chars().all(|c| c == 'r') => adjoint += p.len() as i32,
                _ => return Err(bad()),
            }
        }
        Ok(SimpleType::new(base, adjoint))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PregroupType(pub Vec<SimpleType>);

impl PregroupType {
    pub fn unit() -> Self {
        Self(Vec::new())
    }

    pub fn from_factors(factors: impl IntoIterator<Item = SimpleType>) -> Self {
        Self(factors.into_iter().collect())
    }

    pub fn basic(b: BasicType) -> Self {
        Self(vec![SimpleType::plain(b)])
    }

    pub fn sentence() -> Self {
        Self::basic(BasicType::S)
    }

    pub fn factors(&self) -> &[SimpleType] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_unit(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &PregroupType) -> PregroupType {
        let mut f = self.0.clone();
        f.extend_from_slice(&other.0);
        PregroupType(f)
    }

    /// `(a·b)^l = b^l·a^l`
    pub fn left_adjoint(&self) -> PregroupType {
        self.adjoint(Direction::Left)
    }

    pub fn right_adjoint(&self) -> PregroupType {
        self.adjoint(Direction::Right)
    }

    pub fn adjoint(&self, direction: Direction) -> PregroupType {
        PregroupType(
            self.0
                .iter()
                .rev()
                .map(|t| match direction {
                    Direction::Left => t.left(),
                    Direction::Right => t.right(),
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
}

impl fmt::Display for PregroupType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for PregroupType {
    type Err = GrammarError;

    /// Surface syntax `n^r.s^0.n^l`; `1` (or empty) is the unit.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == "1" {
            return Ok(PregroupType::unit());
        }
        s.split('.').map(str::parse).collect::<Result<Vec<_>, _>>().map(PregroupType)
    }
}

/// Position of one simple-type occurrence in a flattened input: `(word, factor)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Occurrence {
    pub word: usize,
    pub factor: usize,
}

/// A contraction link between a left occurrence and a right occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Link {
    pub left: Occurrence,
    pub right: Occurrence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derivation {
    pub input: Vec<(String, PregroupType)>,
    pub cups: Vec<Link>,
    pub result: PregroupType,
    /// Uncontracted occurrences, left to right. Their types form `result`.
    pub residue: Vec<Occurrence>,
}

impl Derivation {
    pub fn type_at(&self, occ: Occurrence) -> SimpleType {
        self.input[occ.word].1.factors()[occ.factor]
    }

    /// Flat left-to-right index of an occurrence.
    pub fn flat_index(&self, occ: Occurrence) -> usize {
        self.input[..occ.word].iter().map(|(_, t)| t.len()).sum::<usize>() + occ.factor
    }

    pub fn is_sentence(&self) -> bool {
        self.result == PregroupType::sentence()
    }

    /// No two links cross when occurrences are laid out on a line.
    pub fn is_planar(&self) -> bool {
        let spans: Vec<(usize, usize)> = self
            .cups
            .iter()
            .map(|l| (self.flat_index(l.left), self.flat_index(l.right)))
            .collect();
        for (i, &(a, b)) in spans.iter().enumerate() {
            for &(c, d) in &spans[i + 1..] {
                let crosses = (a < c && c < b && b < d) || (c < a && a < d && d < b);
                if crosses {
                    return false;
                }
            }
        }
        true
    }
}

/// Contract a type sequence with the left-to-right stack pass.
///
/// Returns the derivation whether or not it reaches `s`; use [`reduce`] to
/// demand a sentence.
pub fn reduce_any(words: &[(String, PregroupType)]) -> Result<Derivation, GrammarError> {
    if words.is_empty() {
        return Err(GrammarError::Empty);
    }
    let mut stack: Vec<(Occurrence, SimpleType)> = Vec::new();
    let mut cups = Vec::new();
    for (w, (_, ty)) in words.iter().enumerate() {
        for (f, &t) in ty.factors().iter().enumerate() {
            let occ = Occurrence { word: w, factor: f };
            match stack.last() {
                Some(&(top_occ, top)) if top.contracts_with(t) => {
                    stack.pop();
                    cups.push(Link { left: top_occ, right: occ });
                }
                _ => stack.push((occ, t)),
            }
        }
    }
    let result = PregroupType::from_factors(stack.iter().map(|&(_, t)| t));
    let residue = stack.into_iter().map(|(o, _)| o).collect();
    Ok(Derivation { input: words.to_vec(), cups, result, residue })
}

/// Reduce untagged types; words are named by position.
pub fn reduce(types: &[PregroupType]) -> Result<Derivation, GrammarError> {
    let words: Vec<_> = types.iter().enumerate().map(|(i, t)| (format!("w{i}"), t.clone())).collect();
    reduce_words(&words)
}

pub fn reduce_words(words: &[(String, PregroupType)]) -> Result<Derivation, GrammarError> {
    let d = reduce_any(words)?;
    if d.is_sentence() {
        Ok(d)
    } else {
        Err(GrammarError::NotASentence(d.result))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, PregroupType>,
}

pub const SHAPES: [&str; 4] = ["cylinder", "sphere", "cube", "cone"];
pub const LEFT_OF: &str = "isLeftOf";
pub const RIGHT_OF: &str = "isRightOf";

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Task vocabulary plus the function words of the long-form sentences.
    pub fn task_default() -> Self {
        let mut lex = Lexicon::new();
        let ty = |s: &str| s.parse::<PregroupType>().expect("builtin type");
        for shape in SHAPES {
            lex.insert(shape, ty("n"));
        }
        lex.insert(LEFT_OF, ty("n^r.s.n^l"));
        lex.insert(RIGHT_OF, ty("n^r.s.n^l"));
        lex.insert("the", ty("n.n^l"));
        lex.insert("is", ty("n^r.s.p^l"));
        for prep in ["on", "to", "of"] {
            lex.insert(prep, ty("p.n^l"));
        }
        lex.insert("left", ty("n.p^l"));
        lex.insert("right", ty("n.p^l"));
        lex
    }

    pub fn insert(&mut self, word: impl Into<String>, ty: PregroupType) {
        self.entries.insert(word.into(), ty);
    }

    pub fn get(&self, word: &str) -> Option<&PregroupType> {
        self.entries.get(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json_str(s: &str) -> Result<Self, GrammarError> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(s).map_err(|e| GrammarError::Lexicon(e.to_string()))?;
        let mut lex = Lexicon::new();
        for (w, t) in raw {
            lex.insert(w, t.parse()?);
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GrammarError> {
        let s = std::fs::read_to_string(path.as_ref())
            .map_err(|e| GrammarError::Lexicon(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&s)
    }

    pub fn to_json_string(&self) -> String {
        let raw: BTreeMap<&str, String> =
            self.entries.iter().map(|(w, t)| (w.as_str(), t.to_string())).collect();
        serde_json::to_string_pretty(&raw).expect("string map serializes")
    }

    /// Tokenize on ASCII whitespace, look up each word and reduce to `s`.
    pub fn parse(&self, caption: &str) -> Result<Derivation, GrammarError> {
        let words = caption
            .split_ascii_whitespace()
            .map(|w| {
                self.get(w)
                    .map(|t| (w.to_string(), t.clone()))
                    .ok_or_else(|| GrammarError::UnknownWord(w.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        reduce_words(&words)
    }
}
