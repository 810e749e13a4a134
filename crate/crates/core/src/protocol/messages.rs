//! Message bodies. Each is carried as a signed [`WireDocument`] whose body is
//! the struct's fields plus `signature`.

use serde::{Deserialize, Serialize};

use crate::crypto::{PartyIdentity, PublicKey};
use crate::expression::ExpressionSet;
use crate::pow::{HashcashStamp, NegotiationId};
use crate::wire::document::{b64, Signed, WireDocument};

pub const PROPOSAL: &str = "ssla-proposal";
pub const CONFIRMATION: &str = "ssla-confirmation";
pub const CANCEL: &str = "ssla-cancel";
pub const RECORD: &str = "ssla-record";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Initiator,
    Responder,
}

impl Role {
    /// Odd rounds are sent by the initiator, even rounds by the responder.
    pub fn sender_of_round(round: u32) -> Role {
        if round % 2 == 1 {
            Role::Initiator
        } else {
            Role::Responder
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalBody {
    pub negotiation_id: NegotiationId,
    pub round: u32,
    #[serde(deserialize_with = "ExpressionSet::deserialize_requirements")]
    pub requirements: ExpressionSet,
    #[serde(deserialize_with = "ExpressionSet::deserialize_capabilities")]
    pub capabilities: ExpressionSet,
    pub initiator: PartyIdentity,
    pub responder: PartyIdentity,
    pub sender_key: PublicKey,
    #[serde(with = "b64")]
    pub nonce: Vec<u8>,
    /// Unix seconds.
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb_uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pow: Option<HashcashStamp>,
}

impl ProposalBody {
    pub fn sender(&self) -> PartyIdentity {
        match Role::sender_of_round(self.round) {
            Role::Initiator => self.initiator,
            Role::Responder => self.responder,
        }
    }

    pub fn recipient(&self) -> PartyIdentity {
        match Role::sender_of_round(self.round) {
            Role::Initiator => self.responder,
            Role::Responder => self.initiator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfirmationBody {
    pub negotiation_id: NegotiationId,
    /// The confirmed proposal, signature included, exactly as received.
    pub proposal: WireDocument,
    pub confirmer: PartyIdentity,
    pub sender_key: PublicKey,
    #[serde(with = "b64")]
    pub nonce: Vec<u8>,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CancelReason {
    pub code: String,
    pub items: Vec<String>,
}

impl CancelReason {
    pub fn new(code: &str, items: Vec<String>) -> Self {
        CancelReason {
            code: code.to_owned(),
            items,
        }
    }
}

pub mod cancel_codes {
    /// Some requirement cannot be concretized from the sender's capabilities.
    pub const UNSATISFIABLE: &str = "unsatisfiable";
    /// A counterproposal no longer covers the initiator's requirements.
    pub const WEAKENED: &str = "weakened";
    pub const MAX_ROUNDS: &str = "max-rounds";
    pub const UNKNOWN_OID: &str = "unknown-oid";
    pub const REQUESTED: &str = "requested";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CancelBody {
    pub negotiation_id: NegotiationId,
    /// Last round the sender had seen or sent.
    pub round: u32,
    pub sender: PartyIdentity,
    pub recipient: PartyIdentity,
    pub sender_key: PublicKey,
    pub reason: CancelReason,
    #[serde(with = "b64")]
    pub nonce: Vec<u8>,
    pub timestamp: i64,
}

pub type SignedProposal = Signed<ProposalBody>;
pub type SignedConfirmation = Signed<ConfirmationBody>;
pub type SignedCancel = Signed<CancelBody>;

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Message {
    Proposal(SignedProposal),
    Confirmation(SignedConfirmation),
    Cancel(SignedCancel),
}

impl Message {
    pub fn negotiation_id(&self) -> NegotiationId {
        match self {
            Message::Proposal(p) => p.body.negotiation_id,
            Message::Confirmation(c) => c.body.negotiation_id,
            Message::Cancel(c) => c.body.negotiation_id,
        }
    }

    pub fn document(&self) -> &WireDocument {
        match self {
            Message::Proposal(p) => p.document(),
            Message::Confirmation(c) => c.document(),
            Message::Cancel(c) => c.document(),
        }
    }
}
