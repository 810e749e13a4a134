//! Scripted end-to-end runs with per-message expectations.
//!
//! ```json
//! {"name": "...", "user": "user.json", "sp": "sp.json",
//!  "outcome": "agreed", "entries": ["Function.15"],
//!  "steps": [{"message": "translation", "from": "user", "expect": ["function-dimension"]},
//!            {"message": "ssla-proposal", "from": "user", "expect": ["round-1", "stamped"]}]}
//! ```
//!
//! Tags: `function-dimension`, `round-<n>`, `stamped`, `technique-compounds`,
//! `contains:<expr>`, `embeds-previous`, `reason:<code>`, `item:<expr>`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{read_file, AgentConfig, ConfigError};
use super::{prepare_requirements, run_negotiation, AgentError, Outcome, RunOptions};
use crate::expression::{Dimension, SecurityExpression};
use crate::protocol::{
    parse_message, Message, Phase, CANCEL, CONFIRMATION, PROPOSAL,
};
use crate::wire::WireDocument;

pub const TRANSLATION_STEP: &str = "translation";

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioStep {
    pub message: String,
    pub from: String,
    #[serde(default)]
    pub expect: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    pub user: PathBuf,
    pub sp: PathBuf,
    pub outcome: String,
    /// Entries the final SSLA must contain.
    #[serde(default)]
    pub entries: Vec<String>,
    pub steps: Vec<ScenarioStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepResult {
    pub index: usize,
    pub message: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub passed: bool,
    pub outcome: Phase,
    pub entries: Vec<String>,
    pub steps: Vec<StepResult>,
    #[serde(skip)]
    pub run: Option<Outcome>,
}

fn known_tag(tag: &str) -> bool {
    matches!(tag, "function-dimension" | "stamped" | "technique-compounds" | "embeds-previous")
        || tag.strip_prefix("round-").is_some_and(|n| n.parse::<u32>().is_ok())
        || tag.strip_prefix("contains:").is_some_and(|e| e.parse::<SecurityExpression>().is_ok())
        || tag.strip_prefix("item:").is_some()
        || tag.strip_prefix("reason:").is_some()
}

impl ScenarioScript {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let invalid = |m: String| ConfigError::Parse {
            path: path.to_owned(),
            detail: m,
        };
        let mut script: ScenarioScript =
            serde_json::from_slice(&read_file(path)?).map_err(|e| invalid(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut script.user, &mut script.sp] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.is_file() {
                return Err(invalid(format!("fixture {} does not exist", p.display())));
            }
        }
        if !matches!(script.outcome.as_str(), "agreed" | "cancelled") {
            return Err(invalid(format!("unknown outcome `{}`", script.outcome)));
        }
        for e in &script.entries {
            e.parse::<SecurityExpression>().map_err(|err| invalid(err.to_string()))?;
        }
        for (i, step) in script.steps.iter().enumerate() {
            if !matches!(step.message.as_str(), TRANSLATION_STEP | PROPOSAL | CONFIRMATION | CANCEL) {
                return Err(invalid(format!("step {i}: unknown message `{}`", step.message)));
            }
            if !matches!(step.from.as_str(), "user" | "sp") {
                return Err(invalid(format!("step {i}: unknown party `{}`", step.from)));
            }
            if let Some(tag) = step.expect.iter().find(|t| !known_tag(t)) {
                return Err(invalid(format!("step {i}: unknown tag `{tag}`")));
            }
        }
        Ok(script)
    }
}

pub fn run_scenario(script: &ScenarioScript, options: RunOptions) -> Result<ScenarioReport, AgentError> {
    let user = AgentConfig::read(&script.user)?.load()?;
    let sp = AgentConfig::read(&script.sp)?.load()?;
    let user_id = user.key.identity();
    let prepared = prepare_requirements(user.kb.as_ref(), &user.requirements)?;
    let outcome = run_negotiation(&user, &sp, options)?;

    let mut steps = Vec::new();
    let mut messages = outcome.messages.iter();
    let mut previous: Option<&WireDocument> = None;
    for (index, step) in script.steps.iter().enumerate() {
        let result = if step.message == TRANSLATION_STEP {
            let mut problems = Vec::new();
            for tag in &step.expect {
                if tag == "function-dimension" && prepared.iter().any(|e| e.effective_dimension() != Dimension::Function) {
                    problems.push(format!("{tag}: {:?}", prepared.to_strings()));
                }
            }
            finish(index, step, problems, format!("{} requirements", prepared.len()))
        } else {
            match messages.next() {
                None => finish(index, step, vec!["no message".into()], String::new()),
                Some(doc) => {
                    let r = check_message(index, step, doc, previous, user_id);
                    previous = Some(doc);
                    r
                }
            }
        };
        steps.push(result);
    }
    let extra = messages.count();
    let entries: Vec<String> = outcome
        .record
        .as_ref()
        .map(|r| r.agreed_entries.to_strings())
        .unwrap_or_default();
    let expected_phase = if script.outcome == "agreed" { Phase::Agreed } else { Phase::Cancelled };
    let passed = steps.iter().all(|s| s.passed)
        && extra == 0
        && outcome.phase == expected_phase
        && script.entries.iter().all(|e| entries.contains(e));
    Ok(ScenarioReport {
        name: script.name.clone(),
        passed,
        outcome: outcome.phase,
        entries,
        steps,
        run: Some(outcome),
    })
}

fn finish(index: usize, step: &ScenarioStep, problems: Vec<String>, ok: String) -> StepResult {
    StepResult {
        index,
        message: step.message.clone(),
        passed: problems.is_empty(),
        detail: if problems.is_empty() { ok } else { problems.join("; ") },
    }
}

fn check_message(
    index: usize,
    step: &ScenarioStep,
    doc: &WireDocument,
    previous: Option<&WireDocument>,
    user: crate::crypto::PartyIdentity,
) -> StepResult {
    let mut problems = Vec::new();
    if doc.kind != step.message {
        problems.push(format!("got `{}`", doc.kind));
        return finish(index, step, problems, String::new());
    }
    let message = match parse_message(doc) {
        Ok(m) => m,
        Err(e) => return finish(index, step, vec![e.to_string()], String::new()),
    };
    let sender = match &message {
        Message::Proposal(p) => p.body.sender(),
        Message::Confirmation(c) => c.body.confirmer,
        Message::Cancel(c) => c.body.sender,
    };
    let from = if sender == user { "user" } else { "sp" };
    if from != step.from {
        problems.push(format!("sent by {from}"));
    }
    for tag in &step.expect {
        let ok = match (&message, tag.as_str()) {
            (Message::Proposal(p), "stamped") => p.body.pow.is_some(),
            (Message::Proposal(p), "function-dimension") => {
                p.body.requirements.iter().all(|e| e.effective_dimension() == Dimension::Function)
            }
            (Message::Proposal(p), "technique-compounds") => p
                .body
                .requirements
                .iter()
                .any(|e| e.segments().len() > 1 && e.effective_dimension() == Dimension::Technique),
            (Message::Proposal(p), t) if t.starts_with("round-") => t[6..].parse() == Ok(p.body.round),
            (Message::Proposal(p), t) if t.starts_with("contains:") => {
                p.body.requirements.to_strings().iter().any(|e| e == &t[9..])
            }
            (Message::Confirmation(c), "embeds-previous") => {
                previous.map(WireDocument::encode) == Some(c.body.proposal.encode())
            }
            (Message::Cancel(c), t) if t.starts_with("reason:") => c.body.reason.code == t[7..],
            (Message::Cancel(c), t) if t.starts_with("item:") => c.body.reason.items.iter().any(|i| i == &t[5..]),
            _ => false,
        };
        if !ok {
            problems.push(format!("expected {tag}"));
        }
    }
    let summary = match &message {
        Message::Proposal(p) => format!("round {}: {}", p.body.round, p.body.requirements.to_strings().join(", ")),
        Message::Confirmation(_) => "confirmed".into(),
        Message::Cancel(c) => format!("{} {:?}", c.body.reason.code, c.body.reason.items),
    };
    finish(index, step, problems, summary)
}
