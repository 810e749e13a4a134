use serde::{Deserialize, Serialize};

use super::messages::{ProposalBody, SignedConfirmation, PROPOSAL, RECORD};
use super::ProtocolError;
use crate::crypto::{PartyIdentity, Signature};
use crate::expression::{ExpressionRole, ExpressionSet};
use crate::pow::NegotiationId;
use crate::wire::document::{DocumentError, Signed, WireDocument};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignerSignature {
    pub signer: PartyIdentity,
    pub signature: Signature,
}

/// The dual-signed agreement as each party stores it.
///
/// `confirmation` embeds the agreed proposal; `transcript` holds every
/// proposal of the negotiation in round order, ending with the agreed one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslaRecord {
    pub negotiation_id: NegotiationId,
    #[serde(deserialize_with = "ExpressionSet::deserialize_entries")]
    pub agreed_entries: ExpressionSet,
    pub initiator: PartyIdentity,
    pub responder: PartyIdentity,
    pub proposal_signature: SignerSignature,
    pub confirmation_signature: SignerSignature,
    pub confirmation: WireDocument,
    pub transcript: Vec<WireDocument>,
}

impl SslaRecord {
    /// Build a record from a confirmation and the proposal transcript.
    /// Fails unless both signatures verify under keys bound to the signers'
    /// identities and the transcript ends with the confirmed proposal.
    pub fn assemble(
        confirmation: &SignedConfirmation,
        transcript: Vec<WireDocument>,
    ) -> Result<Self, ProtocolError> {
        let conf = &confirmation.body;
        if !conf.confirmer.matches(&conf.sender_key) || !confirmation.verifies_with(&conf.sender_key) {
            return Err(ProtocolError::InvalidSignature("confirmation".into()));
        }
        let proposal = Signed::<ProposalBody>::from_document(conf.proposal.clone(), PROPOSAL)?;
        let body = &proposal.body;
        let proposer = body.sender();
        if !proposer.matches(&body.sender_key) || !proposal.verifies_with(&body.sender_key) {
            return Err(ProtocolError::InvalidSignature("embedded proposal".into()));
        }
        if conf.confirmer != body.recipient() {
            return Err(ProtocolError::Misaddressed("confirmer is not the proposal's recipient".into()));
        }
        if conf.negotiation_id != body.negotiation_id {
            return Err(ProtocolError::MismatchedEmbedding);
        }
        match transcript.last() {
            Some(last) if last.encode() == conf.proposal.encode() => {}
            _ => return Err(ProtocolError::MismatchedEmbedding),
        }
        Ok(SslaRecord {
            negotiation_id: body.negotiation_id,
            agreed_entries: body.requirements.clone().with_role(ExpressionRole::SslaEntry),
            initiator: body.initiator,
            responder: body.responder,
            proposal_signature: SignerSignature {
                signer: proposer,
                signature: proposal.signature.clone(),
            },
            confirmation_signature: SignerSignature {
                signer: conf.confirmer,
                signature: confirmation.signature.clone(),
            },
            confirmation: confirmation.document().clone(),
            transcript,
        })
    }

    pub fn to_document(&self) -> WireDocument {
        WireDocument::new(RECORD, serde_json::to_value(self).expect("records serialize"))
    }

    /// Canonical evidence bytes, as written to disk.
    pub fn encode(&self) -> Vec<u8> {
        self.to_document().encode()
    }

    pub fn from_document(doc: &WireDocument) -> Result<Self, DocumentError> {
        doc.expect_kind(RECORD)?;
        doc.body_as()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DocumentError> {
        Self::from_document(&WireDocument::decode(bytes)?)
    }
}
