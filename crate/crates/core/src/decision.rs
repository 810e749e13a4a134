//! Requirement-vs-capability decisions and counterproposal synthesis.
//!
//! A requirement is satisfied when every function it translates to is
//! covered by the capabilities, where a technique capability covers every
//! function whose technique row lists it. Requirements already in the
//! Technique dimension match capabilities directly.
//!
//! Function-level expansion of a requirement is conjunctive (all functions
//! are needed). Technique suggestions for a function are disjunctive (any
//! one of them will do), which is what counterproposals rely on.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde::Serialize;

use crate::expression::{
    Dimension, ExpressionRole, ExpressionSet, Oid, SecurityExpression,
};
use crate::translation::{TranslationError, Translator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Satisfaction {
    Satisfied,
    Unsatisfied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Overall {
    Accept,
    Counter,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub per_requirement: IndexMap<SecurityExpression, Satisfaction>,
    pub overall: Overall,
    /// Present unless the verdict is `Accept`. Its `unsatisfiable` list is
    /// non-empty exactly when the verdict is `Reject`.
    pub counterproposal: Option<CounterProposal>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterProposal {
    pub entries: ExpressionSet,
    pub unsatisfiable: Vec<SecurityExpression>,
}

fn operatives(caps: &ExpressionSet) -> HashSet<Oid> {
    caps.iter().map(|c| c.operative().clone()).collect()
}

/// Function-dimension coverage of a capability set: every capability's own
/// operative OID plus everything it translates to in the Function dimension.
pub fn capability_cover<T: Translator + ?Sized>(
    kb: &T,
    caps: &ExpressionSet,
) -> Result<HashSet<Oid>, TranslationError> {
    let mut cover = operatives(caps);
    for cap in caps {
        let translated = kb.translate(cap, Dimension::Function)?;
        cover.extend(translated.output.iter().map(|e| e.operative().clone()));
    }
    Ok(cover)
}

pub fn decide_one<T: Translator + ?Sized>(
    kb: &T,
    req: &SecurityExpression,
    caps: &ExpressionSet,
) -> Result<Satisfaction, TranslationError> {
    let cover = capability_cover(kb, caps)?;
    decide_against_cover(kb, req, caps, &cover)
}

fn decide_against_cover<T: Translator + ?Sized>(
    kb: &T,
    req: &SecurityExpression,
    caps: &ExpressionSet,
    cover: &HashSet<Oid>,
) -> Result<Satisfaction, TranslationError> {
    let satisfied = if req.effective_dimension() == Dimension::Technique {
        caps.iter().any(|c| c.operative() == req.operative())
    } else {
        kb.translate(req, Dimension::Function)?
            .output
            .iter()
            .all(|entry| cover.contains(entry.operative()))
    };
    Ok(if satisfied {
        Satisfaction::Satisfied
    } else {
        Satisfaction::Unsatisfied
    })
}

/// Judge `reqs` against the capabilities `offered` with them. When some
/// requirement is unsatisfied, a counterproposal is built from `own`
/// capabilities; the verdict is `Counter` if it resolves every requirement
/// and `Reject` otherwise.
pub fn decide_set<T: Translator + ?Sized>(
    kb: &T,
    reqs: &ExpressionSet,
    offered: &ExpressionSet,
    own: &ExpressionSet,
) -> Result<Verdict, TranslationError> {
    let cover = capability_cover(kb, offered)?;
    let mut per_requirement = IndexMap::with_capacity(reqs.len());
    for req in reqs {
        per_requirement.insert(req.clone(), decide_against_cover(kb, req, offered, &cover)?);
    }
    if per_requirement.values().all(|s| *s == Satisfaction::Satisfied) {
        return Ok(Verdict {
            per_requirement,
            overall: Overall::Accept,
            counterproposal: None,
        });
    }
    let counter = build_counterproposal(kb, reqs, offered, own);
    let overall = if counter.unsatisfiable.is_empty() {
        Overall::Counter
    } else {
        Overall::Reject
    };
    Ok(Verdict {
        per_requirement,
        overall,
        counterproposal: Some(counter),
    })
}

/// Concretize each requirement into techniques the builder can provide.
///
/// Per function, the chosen technique is the canonically smallest of
/// (1) KB suggestions held by both parties, else (2) KB suggestions held by
/// the builder alone. Items without technique rows are echoed when the
/// builder's capabilities assert them. A requirement with any unresolvable
/// function is listed as unsatisfiable and contributes no entries.
pub fn build_counterproposal<T: Translator + ?Sized>(
    kb: &T,
    reqs: &ExpressionSet,
    peer_caps: &ExpressionSet,
    own_caps: &ExpressionSet,
) -> CounterProposal {
    let own = operatives(own_caps);
    let peer = operatives(peer_caps);
    let mut entries = ExpressionSet::new(ExpressionRole::SslaEntry);
    let mut unsatisfiable = Vec::new();
    for req in reqs {
        match resolve(kb, req, &peer, &own) {
            Some(resolved) => {
                for entry in resolved {
                    entries.insert_new(entry);
                }
            }
            None => unsatisfiable.push(req.clone()),
        }
    }
    CounterProposal {
        entries,
        unsatisfiable,
    }
}

fn resolve<T: Translator + ?Sized>(
    kb: &T,
    req: &SecurityExpression,
    peer: &HashSet<Oid>,
    own: &HashSet<Oid>,
) -> Option<Vec<SecurityExpression>> {
    if req.effective_dimension() == Dimension::Technique {
        return own.contains(req.operative()).then(|| vec![req.clone()]);
    }
    let functions = kb.translate(req, Dimension::Function).ok()?;
    let mut resolved = Vec::with_capacity(functions.output.len());
    for item in &functions.output {
        let tail = if item.effective_dimension() < Dimension::Function {
            own.contains(item.operative()).then(|| item.operative().clone())?
        } else {
            let suggestions = kb.translate(item, Dimension::Technique).ok()?;
            if suggestions.passthrough {
                own.contains(item.operative()).then(|| item.operative().clone())?
            } else {
                choose_technique(&suggestions.output, peer, own)?
            }
        };
        resolved.push(append_tail(req, tail));
    }
    Some(resolved)
}

fn choose_technique(
    suggestions: &[SecurityExpression],
    peer: &HashSet<Oid>,
    own: &HashSet<Oid>,
) -> Option<Oid> {
    suggestions
        .iter()
        .map(SecurityExpression::operative)
        .filter(|t| t.dimension() == Dimension::Technique && own.contains(*t))
        .min_by(|a, b| {
            (!peer.contains(*a), a.to_string()).cmp(&(!peer.contains(*b), b.to_string()))
        })
        .cloned()
}

/// `req:tail`, or `req` itself when the tail is its own operative OID.
fn append_tail(req: &SecurityExpression, tail: Oid) -> SecurityExpression {
    if &tail == req.operative() {
        return req.clone();
    }
    let mut segments = req.segments().to_vec();
    segments.push(tail);
    SecurityExpression::new(segments).expect("tail is finer than the requirement")
}
