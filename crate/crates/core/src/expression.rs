//! Dimensioned OID security vocabulary.
//!
//! Every vocabulary item is an [`Oid`] prefixed by its [`Dimension`]
//! (`Risk.1.1.2`). Items of different dimensions can be chained with colons
//! into a [`SecurityExpression`] (`Risk.1.1.2:Function.19.12.2`); the chain
//! must move strictly toward the concrete end, and the last segment is the
//! operative one.

use std::fmt;
use std::str::FromStr;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExpressionError {
    #[error("syntax error in `{text}`: {reason}")]
    Syntax { text: String, reason: &'static str },
    #[error("compound `{0}` does not move strictly toward Technique")]
    DimensionOrder(String),
    #[error("duplicate expression `{0}`")]
    DuplicateExpression(String),
}

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("malformed dictionary document: {0}")]
    Format(String),
    #[error("oid {0} listed twice")]
    DuplicateOid(Oid),
    #[error("oid {oid} does not belong to the {expected} dictionary")]
    DimensionMismatch { oid: Oid, expected: Dimension },
}

/// The four viewpoints of security vocabulary, ordered from abstract to
/// concrete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dimension {
    Target,
    Risk,
    Function,
    Technique,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Target,
        Dimension::Risk,
        Dimension::Function,
        Dimension::Technique,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Target => "Target",
            Dimension::Risk => "Risk",
            Dimension::Function => "Function",
            Dimension::Technique => "Technique",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// The next more concrete dimension.
    pub fn finer(self) -> Option<Dimension> {
        Dimension::ALL.get(self.index() + 1).copied()
    }

    /// The next more abstract dimension.
    pub fn coarser(self) -> Option<Dimension> {
        self.index().checked_sub(1).map(|i| Dimension::ALL[i])
    }

    /// Numeric arc prefix registered for the dimension's dictionary.
    ///
    /// Recorded for export to numeric OID tooling only; matching always uses
    /// the symbolic prefix. The root below is a private placeholder arc.
    pub fn registry_arcs(self) -> [u32; 8] {
        [1, 3, 6, 1, 4, 1, 65535, self.index() as u32 + 1]
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = ExpressionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| ExpressionError::Syntax {
                text: s.to_owned(),
                reason: "unknown dimension name",
            })
    }
}

impl Serialize for Dimension {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Dimension {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A single vocabulary identifier such as `Function.19.12.2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Oid {
    dimension: Dimension,
    arcs: Vec<u32>,
}

impl Oid {
    pub fn new(dimension: Dimension, arcs: Vec<u32>) -> Result<Self, ExpressionError> {
        if arcs.is_empty() {
            return Err(ExpressionError::Syntax {
                text: dimension.name().to_owned(),
                reason: "an oid needs at least one arc",
            });
        }
        Ok(Oid { dimension, arcs })
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn arcs(&self) -> &[u32] {
        &self.arcs
    }

    /// Ordering on canonical text, used wherever a total, human-predictable
    /// tie-break is needed.
    pub fn cmp_canonical(&self, other: &Oid) -> std::cmp::Ordering {
        self.to_string().cmp(&other.to_string())
    }
}

impl fmt::Display for Oid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dimension.name())?;
        for arc in &self.arcs {
            write!(f, ".{arc}")?;
        }
        Ok(())
    }
}

impl FromStr for Oid {
    type Err = ExpressionError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let syntax = |reason| ExpressionError::Syntax {
            text: text.to_owned(),
            reason,
        };
        let mut parts = text.split('.');
        let dimension: Dimension = parts
            .next()
            .filter(|p| !p.is_empty())
            .ok_or_else(|| syntax("missing dimension"))?
            .parse()
            .map_err(|_| syntax("unknown dimension name"))?;
        let mut arcs = Vec::new();
        for part in parts {
            if part.is_empty() {
                return Err(syntax("empty arc"));
            }
            if !part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(syntax("arcs must be decimal digits"));
            }
            if part.len() > 1 && part.starts_with('0') {
                return Err(syntax("arcs must not have leading zeros"));
            }
            arcs.push(part.parse().map_err(|_| syntax("arc out of range"))?);
        }
        if arcs.is_empty() {
            return Err(syntax("an oid needs at least one arc"));
        }
        Ok(Oid { dimension, arcs })
    }
}

impl Serialize for Oid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Oid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One or more OIDs joined by `:` in strictly increasing dimension order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SecurityExpression {
    segments: Vec<Oid>,
}

impl SecurityExpression {
    pub fn new(segments: Vec<Oid>) -> Result<Self, ExpressionError> {
        if segments.is_empty() {
            return Err(ExpressionError::Syntax {
                text: String::new(),
                reason: "empty expression",
            });
        }
        let expr = SecurityExpression { segments };
        if expr
            .segments
            .windows(2)
            .any(|w| w[0].dimension() >= w[1].dimension())
        {
            return Err(ExpressionError::DimensionOrder(expr.to_string()));
        }
        Ok(expr)
    }

    pub fn single(oid: Oid) -> Self {
        SecurityExpression {
            segments: vec![oid],
        }
    }

    pub fn segments(&self) -> &[Oid] {
        &self.segments
    }

    /// The last segment; the one that matching and translation act on.
    pub fn operative(&self) -> &Oid {
        self.segments.last().expect("expressions are never empty")
    }

    /// Leading segments kept as context for the operative one.
    pub fn context(&self) -> &[Oid] {
        &self.segments[..self.segments.len() - 1]
    }

    pub fn effective_dimension(&self) -> Dimension {
        self.operative().dimension()
    }

    /// Replace the operative segment, keeping only context segments that sit
    /// strictly below both `limit` and the new tail's dimension.
    pub fn with_tail(&self, tail: Oid, limit: Dimension) -> SecurityExpression {
        let bound = limit.min(tail.dimension());
        let mut segments: Vec<Oid> = self
            .context()
            .iter()
            .filter(|s| s.dimension() < bound)
            .cloned()
            .collect();
        segments.push(tail);
        SecurityExpression { segments }
    }
}

pub fn parse_expression(text: &str) -> Result<SecurityExpression, ExpressionError> {
    text.parse()
}

pub fn effective_dimension(expr: &SecurityExpression) -> Dimension {
    expr.effective_dimension()
}

impl fmt::Display for SecurityExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.segments.iter().enumerate() {
            if i > 0 {
                f.write_str(":")?;
            }
            write!(f, "{seg}")?;
        }
        Ok(())
    }
}

impl FromStr for SecurityExpression {
    type Err = ExpressionError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(ExpressionError::Syntax {
                text: text.to_owned(),
                reason: "empty expression",
            });
        }
        let segments = trimmed
            .split(':')
            .map(str::parse)
            .collect::<Result<Vec<Oid>, _>>()?;
        SecurityExpression::new(segments)
    }
}

impl From<Oid> for SecurityExpression {
    fn from(oid: Oid) -> Self {
        SecurityExpression::single(oid)
    }
}

impl Serialize for SecurityExpression {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SecurityExpression {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExpressionRole {
    Requirement,
    Capability,
    SslaEntry,
}

/// An insertion-ordered, duplicate-free list of expressions.
///
/// On the wire this is a plain JSON array of canonical strings; the role is
/// carried by the field the set is stored in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpressionSet {
    role: ExpressionRole,
    items: IndexSet<SecurityExpression>,
}

impl ExpressionSet {
    pub fn new(role: ExpressionRole) -> Self {
        ExpressionSet {
            role,
            items: IndexSet::new(),
        }
    }

    pub fn from_items<I>(role: ExpressionRole, items: I) -> Result<Self, ExpressionError>
    where
        I: IntoIterator<Item = SecurityExpression>,
    {
        let mut set = ExpressionSet::new(role);
        for item in items {
            set.insert(item)?;
        }
        Ok(set)
    }

    pub fn parse<S: AsRef<str>>(role: ExpressionRole, texts: &[S]) -> Result<Self, ExpressionError> {
        ExpressionSet::from_items(
            role,
            texts
                .iter()
                .map(|t| t.as_ref().parse())
                .collect::<Result<Vec<_>, _>>()?,
        )
    }

    pub fn role(&self) -> ExpressionRole {
        self.role
    }

    pub fn with_role(mut self, role: ExpressionRole) -> Self {
        self.role = role;
        self
    }

    pub fn insert(&mut self, expr: SecurityExpression) -> Result<(), ExpressionError> {
        if self.items.contains(&expr) {
            return Err(ExpressionError::DuplicateExpression(expr.to_string()));
        }
        self.items.insert(expr);
        Ok(())
    }

    /// Insert unless already present; returns whether the item was new.
    pub fn insert_new(&mut self, expr: SecurityExpression) -> bool {
        self.items.insert(expr)
    }

    pub fn contains(&self, expr: &SecurityExpression) -> bool {
        self.items.contains(expr)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SecurityExpression> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.items.iter().map(ToString::to_string).collect()
    }

    /// Serde helpers for typed fields: `#[serde(deserialize_with = ...)]`.
    pub fn deserialize_requirements<'de, D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Self::deserialize_role(d, ExpressionRole::Requirement)
    }

    pub fn deserialize_capabilities<'de, D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Self::deserialize_role(d, ExpressionRole::Capability)
    }

    pub fn deserialize_entries<'de, D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Self::deserialize_role(d, ExpressionRole::SslaEntry)
    }

    fn deserialize_role<'de, D: Deserializer<'de>>(
        d: D,
        role: ExpressionRole,
    ) -> Result<Self, D::Error> {
        let items = Vec::<SecurityExpression>::deserialize(d)?;
        ExpressionSet::from_items(role, items).map_err(serde::de::Error::custom)
    }
}

impl Serialize for ExpressionSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.items.iter())
    }
}

impl<'a> IntoIterator for &'a ExpressionSet {
    type Item = &'a SecurityExpression;
    type IntoIter = indexmap::set::Iter<'a, SecurityExpression>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Vocabulary of one dimension. Labels are for display only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    dimension: Dimension,
    entries: IndexMap<Oid, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryFile {
    dimension: Dimension,
    entries: Vec<DictionaryEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryEntry {
    oid: Oid,
    label: String,
}

impl Dictionary {
    pub fn empty(dimension: Dimension) -> Self {
        Dictionary {
            dimension,
            entries: IndexMap::new(),
        }
    }

    pub fn from_entries<I>(dimension: Dimension, entries: I) -> Result<Self, DictionaryError>
    where
        I: IntoIterator<Item = (Oid, String)>,
    {
        let mut dict = Dictionary::empty(dimension);
        for (oid, label) in entries {
            if oid.dimension() != dimension {
                return Err(DictionaryError::DimensionMismatch {
                    oid,
                    expected: dimension,
                });
            }
            if dict.entries.contains_key(&oid) {
                return Err(DictionaryError::DuplicateOid(oid));
            }
            dict.entries.insert(oid, label);
        }
        Ok(dict)
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn contains(&self, oid: &Oid) -> bool {
        self.entries.contains_key(oid)
    }

    pub fn label(&self, oid: &Oid) -> Option<&str> {
        self.entries.get(oid).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Oid, &str)> {
        self.entries.iter().map(|(o, l)| (o, l.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(DictionaryFile {
            dimension: self.dimension,
            entries: self
                .entries
                .iter()
                .map(|(oid, label)| DictionaryEntry {
                    oid: oid.clone(),
                    label: label.clone(),
                })
                .collect(),
        })
        .expect("dictionary serializes")
    }
}

/// Parse and validate a dictionary document.
pub fn load_dictionary(document: &[u8]) -> Result<Dictionary, DictionaryError> {
    let file: DictionaryFile =
        serde_json::from_slice(document).map_err(|e| DictionaryError::Format(e.to_string()))?;
    Dictionary::from_entries(
        file.dimension,
        file.entries.into_iter().map(|e| (e.oid, e.label)),
    )
}
