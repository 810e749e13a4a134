//! Knowledge base: dictionaries plus the three adjacent-dimension
//! translation tables, and translation between dimensions.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expression::{
    load_dictionary, Dictionary, DictionaryError, Dimension, ExpressionSet, Oid, SecurityExpression,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranslationError {
    #[error("oid {0} is not in any dictionary")]
    UnknownOid(Oid),
    #[error("knowledge base unavailable: {0}")]
    Unavailable(String),
}

impl TranslationError {
    pub fn code(&self) -> &'static str {
        match self {
            TranslationError::UnknownOid(_) => "unknown-oid",
            TranslationError::Unavailable(_) => "kb-unavailable",
        }
    }
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("malformed translation table: {0}")]
    Format(String),
    #[error("no translation table maps {0} to {1}")]
    InvalidPair(Dimension, Dimension),
    #[error("oid {oid} in a {source_dim}->{target} table has the wrong dimension")]
    DimensionMismatch {
        oid: Oid,
        source_dim: Dimension,
        target: Dimension,
    },
    #[error("key {0} has more than one row")]
    DuplicateKey(Oid),
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Dictionary {
        path: String,
        source: DictionaryError,
    },
    #[error("{path}: {source}")]
    Table { path: String, source: TableError },
    #[error("expected the {expected} {what} but found {found}")]
    Misplaced {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("table row references {0}, which is missing from its dictionary")]
    UndefinedOid(Oid),
}

/// Directed multimap from one dimension to the next finer one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationTable {
    source: Dimension,
    target: Dimension,
    rows: IndexMap<Oid, IndexSet<Oid>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    source: Dimension,
    target: Dimension,
    rows: Vec<TableRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRow {
    key: Oid,
    values: Vec<Oid>,
}

impl TranslationTable {
    pub fn empty(source: Dimension, target: Dimension) -> Result<Self, TableError> {
        if source.finer() != Some(target) {
            return Err(TableError::InvalidPair(source, target));
        }
        Ok(TranslationTable {
            source,
            target,
            rows: IndexMap::new(),
        })
    }

    pub fn from_rows<I>(source: Dimension, target: Dimension, rows: I) -> Result<Self, TableError>
    where
        I: IntoIterator<Item = (Oid, Vec<Oid>)>,
    {
        let mut table = TranslationTable::empty(source, target)?;
        for (key, values) in rows {
            let mismatch = |oid: &Oid| TableError::DimensionMismatch {
                oid: oid.clone(),
                source_dim: source,
                target,
            };
            if key.dimension() != source {
                return Err(mismatch(&key));
            }
            if let Some(bad) = values.iter().find(|v| v.dimension() != target) {
                return Err(mismatch(bad));
            }
            if table.rows.contains_key(&key) {
                return Err(TableError::DuplicateKey(key));
            }
            table.rows.insert(key, values.into_iter().collect());
        }
        Ok(table)
    }

    pub fn source(&self) -> Dimension {
        self.source
    }

    pub fn target(&self) -> Dimension {
        self.target
    }

    pub fn row(&self, key: &Oid) -> Option<&IndexSet<Oid>> {
        self.rows.get(key)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&Oid, &IndexSet<Oid>)> {
        self.rows.iter()
    }
}

pub fn load_table(document: &[u8]) -> Result<TranslationTable, TableError> {
    let file: TableFile =
        serde_json::from_slice(document).map_err(|e| TableError::Format(e.to_string()))?;
    TranslationTable::from_rows(
        file.source,
        file.target,
        file.rows.into_iter().map(|r| (r.key, r.values)),
    )
}

/// Outcome of translating one expression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TranslationResult {
    pub input: SecurityExpression,
    pub output: Vec<SecurityExpression>,
    /// No table row applied; `output` is exactly `[input]`.
    pub passthrough: bool,
}

/// Anything that can answer translation queries: a local knowledge base or a
/// remote KB service.
pub trait Translator {
    fn translate(
        &self,
        expr: &SecurityExpression,
        goal: Dimension,
    ) -> Result<TranslationResult, TranslationError>;
}

impl<T: Translator + ?Sized> Translator for &T {
    fn translate(
        &self,
        expr: &SecurityExpression,
        goal: Dimension,
    ) -> Result<TranslationResult, TranslationError> {
        (**self).translate(expr, goal)
    }
}

impl<T: Translator + ?Sized> Translator for std::sync::Arc<T> {
    fn translate(
        &self,
        expr: &SecurityExpression,
        goal: Dimension,
    ) -> Result<TranslationResult, TranslationError> {
        (**self).translate(expr, goal)
    }
}

/// Element-wise translation; failures are reported per item.
pub fn translate_set<T: Translator + ?Sized>(
    kb: &T,
    set: &ExpressionSet,
    goal: Dimension,
) -> IndexMap<SecurityExpression, Result<TranslationResult, TranslationError>> {
    set.iter()
        .map(|e| (e.clone(), kb.translate(e, goal)))
        .collect()
}

/// Dictionaries and translation tables. Immutable once built.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    dictionaries: [Dictionary; 4],
    /// Indexed by source dimension: Target, Risk, Function.
    tables: [TranslationTable; 3],
    /// Per table: value -> keys whose row contains it, in row order.
    reverse: [HashMap<Oid, IndexSet<Oid>>; 3],
}

pub const DICTIONARY_FILES: [&str; 4] = ["target.json", "risk.json", "function.json", "technique.json"];
pub const TABLE_FILES: [&str; 3] = [
    "target-risk.json",
    "risk-function.json",
    "function-technique.json",
];

impl KnowledgeBase {
    pub fn new(dictionaries: [Dictionary; 4], tables: [TranslationTable; 3]) -> Result<Self, KbError> {
        for (dict, dim) in dictionaries.iter().zip(Dimension::ALL) {
            if dict.dimension() != dim {
                return Err(KbError::Misplaced {
                    what: "dictionary",
                    expected: dim.to_string(),
                    found: dict.dimension().to_string(),
                });
            }
        }
        for (table, dim) in tables.iter().zip(Dimension::ALL) {
            if table.source() != dim {
                return Err(KbError::Misplaced {
                    what: "table",
                    expected: format!("{dim} source"),
                    found: table.source().to_string(),
                });
            }
            for (key, values) in table.rows() {
                for oid in std::iter::once(key).chain(values) {
                    if !dictionaries[oid.dimension().index()].contains(oid) {
                        return Err(KbError::UndefinedOid(oid.clone()));
                    }
                }
            }
        }
        let reverse = [0, 1, 2].map(|i| {
            let mut index: HashMap<Oid, IndexSet<Oid>> = HashMap::new();
            for (key, values) in tables[i].rows() {
                for v in values {
                    index.entry(v.clone()).or_default().insert(key.clone());
                }
            }
            index
        });
        Ok(KnowledgeBase {
            dictionaries,
            tables,
            reverse,
        })
    }

    /// A knowledge base with empty dictionaries and tables.
    pub fn empty() -> Self {
        let dicts = Dimension::ALL.map(Dictionary::empty);
        let tables = [Dimension::Target, Dimension::Risk, Dimension::Function]
            .map(|d| TranslationTable::empty(d, d.finer().unwrap()).unwrap());
        KnowledgeBase::new(dicts, tables).unwrap()
    }

    /// Load the seven fixture files (`target.json`, ..., `function-technique.json`)
    /// from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self, KbError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).map_err(|source| KbError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let mut dicts = Vec::with_capacity(4);
        for name in DICTIONARY_FILES {
            let bytes = read(name)?;
            dicts.push(load_dictionary(&bytes).map_err(|source| KbError::Dictionary {
                path: name.to_owned(),
                source,
            })?);
        }
        let mut tables = Vec::with_capacity(3);
        for name in TABLE_FILES {
            let bytes = read(name)?;
            tables.push(load_table(&bytes).map_err(|source| KbError::Table {
                path: name.to_owned(),
                source,
            })?);
        }
        let dicts: [Dictionary; 4] = dicts.try_into().expect("four dictionaries");
        let tables: [TranslationTable; 3] = tables.try_into().expect("three tables");
        KnowledgeBase::new(dicts, tables)
    }

    pub fn dictionary(&self, dim: Dimension) -> &Dictionary {
        &self.dictionaries[dim.index()]
    }

    /// Table whose source is `dim`; `None` for Technique.
    pub fn table(&self, source: Dimension) -> Option<&TranslationTable> {
        self.tables.get(source.index())
    }

    pub fn knows(&self, oid: &Oid) -> bool {
        self.dictionary(oid.dimension()).contains(oid)
    }

    fn forward_hop(&self, oid: &Oid) -> Option<&IndexSet<Oid>> {
        self.table(oid.dimension())?.row(oid)
    }

    fn reverse_hop(&self, oid: &Oid) -> Option<&IndexSet<Oid>> {
        let source = oid.dimension().coarser()?;
        self.reverse[source.index()].get(oid)
    }
}

impl Translator for KnowledgeBase {
    fn translate(
        &self,
        expr: &SecurityExpression,
        goal: Dimension,
    ) -> Result<TranslationResult, TranslationError> {
        if let Some(unknown) = expr.segments().iter().find(|o| !self.knows(o)) {
            return Err(TranslationError::UnknownOid(unknown.clone()));
        }
        let start = expr.effective_dimension();
        if start == goal {
            return Ok(passthrough(expr));
        }

        let mut frontier: IndexSet<Oid> = IndexSet::from([expr.operative().clone()]);
        let mut applied = false;
        let mut dim = start;
        while dim != goal {
            let next_dim = if goal > dim {
                dim.finer()
            } else {
                dim.coarser()
            }
            .expect("goal lies between Target and Technique");
            let mut next = IndexSet::new();
            for item in frontier {
                let hop = if item.dimension() != dim {
                    None
                } else if goal > dim {
                    self.forward_hop(&item)
                } else {
                    self.reverse_hop(&item)
                };
                match hop {
                    Some(values) if !values.is_empty() => {
                        applied = true;
                        next.extend(values.iter().cloned());
                    }
                    // No row: already as concrete (or abstract) as it gets.
                    _ => {
                        next.insert(item);
                    }
                }
            }
            frontier = next;
            dim = next_dim;
        }

        if !applied {
            return Ok(passthrough(expr));
        }
        let mut output: IndexSet<SecurityExpression> = IndexSet::new();
        for oid in frontier {
            output.insert(expr.with_tail(oid, goal));
        }
        Ok(TranslationResult {
            input: expr.clone(),
            output: output.into_iter().collect(),
            passthrough: false,
        })
    }
}

fn passthrough(expr: &SecurityExpression) -> TranslationResult {
    TranslationResult {
        input: expr.clone(),
        output: vec![expr.clone()],
        passthrough: true,
    }
}
