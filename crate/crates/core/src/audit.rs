//! Offline verification of stored agreement records.
//!
//! The audit needs only the record and the parties' public keys. It does
//! not consult a KB and never re-runs translation: the agreed entries are
//! judged as signed text, not for adequacy.

use std::cell::RefCell;

use serde::Serialize;

use crate::crypto::{derive_identity, PartyIdentity, PublicKey};
use crate::pow::negotiation_id_from;
use crate::protocol::{
    ConfirmationBody, ProposalBody, SignedConfirmation, SignedProposal, SslaRecord, CONFIRMATION,
    PROPOSAL,
};
use crate::wire::document::{Signed, WireDocument};

pub const CHECK_DOCUMENT: &str = "document-canonical";
pub const CHECK_IDENTITY: &str = "identity-binding";
pub const CHECK_EMBEDDED: &str = "embedded-proposal-intact";
pub const CHECK_PROPOSAL_SIGNATURE: &str = "proposal-signature";
pub const CHECK_CONFIRMATION_SIGNATURE: &str = "confirmation-signature";
pub const CHECK_TRANSCRIPT: &str = "transcript-signatures";
pub const CHECK_NEGOTIATION_ID: &str = "negotiation-id-derivation";
pub const CHECK_POW: &str = "pow-difficulty";
pub const CHECK_SIGNING_ORDER: &str = "signing-order";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditVerdict {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub verdict: AuditVerdict,
    pub checks: Vec<CheckResult>,
    pub agreed_entries: Vec<String>,
    pub initiator: Option<PartyIdentity>,
    pub responder: Option<PartyIdentity>,
}

impl AuditReport {
    fn from_checks(checks: Vec<CheckResult>, record: Option<&SslaRecord>) -> Self {
        let verdict = if checks.iter().all(|c| c.passed) {
            AuditVerdict::Valid
        } else {
            AuditVerdict::Invalid
        };
        AuditReport {
            verdict,
            checks,
            agreed_entries: record.map(|r| r.agreed_entries.to_strings()).unwrap_or_default(),
            initiator: record.map(|r| r.initiator),
            responder: record.map(|r| r.responder),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.verdict == AuditVerdict::Valid
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Checks(Vec<CheckResult>);

impl Checks {
    fn push(&mut self, name: &'static str, outcome: Result<String, String>) {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.0.push(CheckResult { name, passed, detail });
    }
}

/// Audit stored evidence bytes. The bytes must be the canonical encoding of
/// a record document.
pub fn audit_document(bytes: &[u8], keys: &[PublicKey]) -> AuditReport {
    let parsed = WireDocument::decode_canonical(bytes)
        .map_err(|e| e.to_string())
        .and_then(|doc| SslaRecord::from_document(&doc).map_err(|e| e.to_string()));
    match parsed {
        Ok(record) => {
            let mut report = audit_record(&record, keys);
            report.checks.insert(
                0,
                CheckResult {
                    name: CHECK_DOCUMENT,
                    passed: true,
                    detail: format!("{} canonical bytes", bytes.len()),
                },
            );
            report
        }
        Err(detail) => AuditReport::from_checks(
            vec![CheckResult {
                name: CHECK_DOCUMENT,
                passed: false,
                detail,
            }],
            None,
        ),
    }
}

fn key_for<'k>(keys: &'k [PublicKey], who: &PartyIdentity) -> Option<&'k PublicKey> {
    keys.iter().find(|k| derive_identity(k) == *who)
}

/// Signature checks for one audit; a document repeated in the record is
/// verified once.
struct Verifier<'k> {
    keys: &'k [PublicKey],
    done: RefCell<Vec<(Vec<u8>, PartyIdentity, bool)>>,
}

impl<'k> Verifier<'k> {
    fn new(keys: &'k [PublicKey]) -> Self {
        Verifier {
            keys,
            done: RefCell::new(Vec::new()),
        }
    }

    fn verify<B>(&self, signed: &Signed<B>, claimed_key: &PublicKey, who: &PartyIdentity) -> Result<String, String> {
        let key = key_for(self.keys, who).ok_or_else(|| format!("no key supplied for {who}"))?;
        if key != claimed_key {
            return Err(format!("embedded key of {who} differs from the supplied key"));
        }
        let encoded = signed.document().encode();
        let cached = self.done.borrow().iter().find(|(d, w, _)| *d == encoded && w == who).map(|e| e.2);
        let valid = cached.unwrap_or_else(|| {
            let v = signed.verifies_with(key);
            self.done.borrow_mut().push((encoded, *who, v));
            v
        });
        signature_outcome(valid, who)
    }
}

fn signature_outcome(valid: bool, who: &PartyIdentity) -> Result<String, String> {
    if valid {
        Ok(format!("signed by {who}"))
    } else {
        Err(format!("signature by {who} does not verify"))
    }
}

/// Verify every claim a record makes. All checks run; the report lists each.
pub fn audit_record(record: &SslaRecord, keys: &[PublicKey]) -> AuditReport {
    let mut checks = Checks(Vec::new());
    let verifier = Verifier::new(keys);

    checks.push(CHECK_IDENTITY, {
        let missing: Vec<String> = [("initiator", &record.initiator), ("responder", &record.responder)]
            .iter()
            .filter(|(_, who)| key_for(keys, who).is_none())
            .map(|(role, who)| format!("{role} {who}"))
            .collect();
        if missing.is_empty() {
            Ok("both identities match supplied keys".into())
        } else {
            Err(format!("no supplied key matches {}", missing.join(", ")))
        }
    });

    let confirmation: Result<SignedConfirmation, String> =
        Signed::<ConfirmationBody>::from_document(record.confirmation.clone(), CONFIRMATION)
            .map_err(|e| format!("confirmation: {e}"));
    let proposal: Result<SignedProposal, String> = confirmation.as_ref().map_err(Clone::clone).and_then(|c| {
        Signed::<ProposalBody>::from_document(c.body.proposal.clone(), PROPOSAL).map_err(|e| format!("embedded proposal: {e}"))
    });

    checks.push(CHECK_EMBEDDED, match (&confirmation, &proposal) {
        (Ok(c), Ok(p)) => embedded_consistent(record, c, p),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    });

    checks.push(CHECK_PROPOSAL_SIGNATURE, match &proposal {
        Ok(p) => verifier.verify(p, &p.body.sender_key, &p.body.sender()),
        Err(e) => Err(e.clone()),
    });

    checks.push(CHECK_CONFIRMATION_SIGNATURE, match &confirmation {
        Ok(c) => verifier.verify(c, &c.body.sender_key, &c.body.confirmer),
        Err(e) => Err(e.clone()),
    });

    let transcript: Result<Vec<SignedProposal>, String> = record
        .transcript
        .iter()
        .enumerate()
        .map(|(i, d)| Signed::from_document(d.clone(), PROPOSAL).map_err(|e| format!("transcript[{i}]: {e}")))
        .collect();

    checks.push(CHECK_TRANSCRIPT, transcript.as_ref().map_err(Clone::clone).and_then(|t| transcript_consistent(record, t, &verifier)));

    let first = transcript.as_ref().ok().and_then(|t| t.first());
    let stamp = first.and_then(|p| p.body.pow.as_ref());

    checks.push(CHECK_NEGOTIATION_ID, match (first, stamp) {
        (Some(p), Some(stamp)) => {
            let ext = stamp.extension().map_err(|e| e.to_string());
            if negotiation_id_from(stamp) != record.negotiation_id {
                Err("negotiation id is not the digest of the round-1 stamp".into())
            } else if stamp.resource() != record.responder.hex() {
                Err("stamp resource is not the responder".into())
            } else {
                match ext {
                    Ok(ext) if ext.initiator == record.initiator.id && ext.responder == record.responder.id && ext.nonce == p.body.nonce => {
                        Ok(format!("{} derived from round-1 stamp", record.negotiation_id))
                    }
                    Ok(_) => Err("stamp extension does not name the parties and nonce".into()),
                    Err(e) => Err(e),
                }
            }
        }
        _ => Err("no round-1 stamp in transcript".into()),
    });

    checks.push(CHECK_POW, match stamp {
        Some(s) if s.meets_claimed_bits() => Ok(format!("{} bits", s.bits())),
        Some(s) => Err(format!("digest lacks the claimed {} zero bits", s.bits())),
        None => Err("no stamp".into()),
    });

    checks.push(CHECK_SIGNING_ORDER, Ok(match (&proposal, &confirmation) {
        (Ok(p), Ok(c)) => format!("{} signed the proposal; {} signed last", p.body.sender(), c.body.confirmer),
        _ => "unknown".into(),
    }));

    AuditReport::from_checks(checks.0, Some(record))
}

fn embedded_consistent(record: &SslaRecord, c: &SignedConfirmation, p: &SignedProposal) -> Result<String, String> {
    let b = &p.body;
    let mut problems = Vec::new();
    if record.agreed_entries.to_strings() != b.requirements.to_strings() {
        problems.push("agreed entries differ from the confirmed proposal");
    }
    if record.negotiation_id != b.negotiation_id || record.negotiation_id != c.body.negotiation_id {
        problems.push("negotiation id differs");
    }
    if record.initiator != b.initiator || record.responder != b.responder {
        problems.push("parties differ");
    }
    if record.proposal_signature.signer != b.sender() || record.proposal_signature.signature != p.signature {
        problems.push("proposal signature field differs");
    }
    if record.confirmation_signature.signer != c.body.confirmer
        || c.body.confirmer != b.recipient()
        || record.confirmation_signature.signature != c.signature
    {
        problems.push("confirmation signature field differs");
    }
    if record.transcript.last().map(WireDocument::encode) != Some(c.body.proposal.encode()) {
        problems.push("transcript does not end with the confirmed proposal");
    }
    if problems.is_empty() {
        Ok(format!("{} entries", record.agreed_entries.len()))
    } else {
        Err(problems.join("; "))
    }
}

fn transcript_consistent(record: &SslaRecord, t: &[SignedProposal], verifier: &Verifier) -> Result<String, String> {
    if t.is_empty() {
        return Err("empty transcript".into());
    }
    for (i, p) in t.iter().enumerate() {
        let b = &p.body;
        if b.round as usize != i + 1 {
            return Err(format!("transcript[{i}] has round {}", b.round));
        }
        if b.negotiation_id != record.negotiation_id || b.initiator != record.initiator || b.responder != record.responder {
            return Err(format!("transcript[{i}] belongs to another negotiation"));
        }
        verifier.verify(p, &b.sender_key, &b.sender()).map_err(|e| format!("transcript[{i}]: {e}"))?;
    }
    Ok(format!("{} proposals", t.len()))
}

/// True iff both records have byte-identical canonical encodings.
pub fn compare_evidence(a: &SslaRecord, b: &SslaRecord) -> bool {
    a.encode() == b.encode()
}
