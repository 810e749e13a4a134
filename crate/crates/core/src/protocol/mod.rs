//! Signed multi-round negotiation of an SSLA.
//!
//! The initiator opens with a round-1 proposal carrying a hashcash stamp;
//! the stamp's digest names the negotiation. Each party answers a proposal
//! with a confirmation, a counterproposal in the next round, or a cancel.
//! A confirmation embeds the confirmed proposal verbatim, so once it is
//! delivered both parties hold the same dual-signed [`SslaRecord`].

mod messages;
mod party;
mod record;

use thiserror::Error;

use crate::pow::NegotiationId;
use crate::wire::document::{DocumentError, Signed, WireDocument};

pub use messages::{
    cancel_codes, CancelBody, CancelReason, ConfirmationBody, Message, ProposalBody, Role,
    SignedCancel, SignedConfirmation, SignedProposal, CANCEL, CONFIRMATION, PROPOSAL, RECORD,
};
pub use party::{
    Clock, FixedClock, Negotiation, Party, Phase, ProtocolConfig, Received, SystemClock,
    DEFAULT_MAX_ROUNDS, DEFAULT_TIMESTAMP_WINDOW,
};
pub use record::{SignerSignature, SslaRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported version `{0}`")]
    UnsupportedVersion(String),
    #[error("invalid signature: {0}")]
    InvalidSignature(String),
    #[error("invalid proof of work: {0}")]
    InvalidPow(String),
    #[error("nonce already seen in this negotiation")]
    ReplayedNonce,
    #[error("timestamp {timestamp} is outside the window around {now}")]
    StaleTimestamp { timestamp: i64, now: i64 },
    #[error("state violation: {0}")]
    StateViolation(String),
    #[error("unknown negotiation {0}")]
    UnknownNegotiation(NegotiationId),
    #[error("confirmation does not embed the proposal that was sent")]
    MismatchedEmbedding,
    #[error("message is not addressed to this party: {0}")]
    Misaddressed(String),
    #[error("unknown OID: {0}")]
    UnknownOid(String),
}

/// Stable machine-readable codes, one per [`ProtocolError`] variant.
pub const ERROR_CODES: [&str; 11] = [
    "malformed",
    "unsupported-version",
    "invalid-signature",
    "invalid-pow",
    "replayed-nonce",
    "stale-timestamp",
    "state-violation",
    "unknown-negotiation",
    "mismatched-embedding",
    "misaddressed",
    "unknown-oid",
];

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        let index = match self {
            ProtocolError::Malformed(_) => 0,
            ProtocolError::UnsupportedVersion(_) => 1,
            ProtocolError::InvalidSignature(_) => 2,
            ProtocolError::InvalidPow(_) => 3,
            ProtocolError::ReplayedNonce => 4,
            ProtocolError::StaleTimestamp { .. } => 5,
            ProtocolError::StateViolation(_) => 6,
            ProtocolError::UnknownNegotiation(_) => 7,
            ProtocolError::MismatchedEmbedding => 8,
            ProtocolError::Misaddressed(_) => 9,
            ProtocolError::UnknownOid(_) => 10,
        };
        ERROR_CODES[index]
    }
}

impl From<DocumentError> for ProtocolError {
    fn from(e: DocumentError) -> Self {
        match e {
            DocumentError::UnsupportedVersion(v) => ProtocolError::UnsupportedVersion(v),
            other => ProtocolError::Malformed(other.to_string()),
        }
    }
}

/// Decode any negotiation message from a document.
pub fn parse_message(doc: &WireDocument) -> Result<Message, ProtocolError> {
    if doc.version != crate::wire::document::WIRE_VERSION {
        return Err(ProtocolError::UnsupportedVersion(doc.version.clone()));
    }
    Ok(match doc.kind.as_str() {
        PROPOSAL => Message::Proposal(Signed::from_document(doc.clone(), PROPOSAL)?),
        CONFIRMATION => Message::Confirmation(Signed::from_document(doc.clone(), CONFIRMATION)?),
        CANCEL => Message::Cancel(Signed::from_document(doc.clone(), CANCEL)?),
        other => return Err(ProtocolError::Malformed(format!("unexpected document type `{other}`"))),
    })
}

#[cfg(test)]
mod tests;
