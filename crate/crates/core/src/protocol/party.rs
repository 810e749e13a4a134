use std::collections::HashSet;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use indexmap::IndexMap;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::messages::{
    cancel_codes, CancelBody, CancelReason, ConfirmationBody, Message, ProposalBody, Role,
    SignedCancel, SignedConfirmation, SignedProposal, CANCEL, CONFIRMATION, PROPOSAL,
};
use super::record::SslaRecord;
use super::{parse_message, ProtocolError};
use crate::crypto::{KeyPair, PartyIdentity, PublicKey};
use crate::decision::{decide_set, Overall, Satisfaction};
use crate::expression::{ExpressionRole, ExpressionSet};
use crate::pow::{self, negotiation_id_from, NegotiationId, PowPolicy, PowRejection, StampExtension, StampReplaySet};
use crate::translation::Translator;
use crate::wire::document::{Signed, WireDocument};

pub const DEFAULT_MAX_ROUNDS: u32 = 8;
pub const DEFAULT_TIMESTAMP_WINDOW: Duration = Duration::from_secs(300);
const NONCE_LEN: usize = 16;

/// Wall clock in Unix seconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> i64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        chrono::Utc::now().timestamp()
    }
}

/// A settable clock shared between clones.
#[derive(Debug, Clone)]
pub struct FixedClock(Arc<AtomicI64>);

impl FixedClock {
    pub fn new(now: i64) -> Self {
        FixedClock(Arc::new(AtomicI64::new(now)))
    }

    pub fn set(&self, now: i64) {
        self.0.store(now, Ordering::SeqCst);
    }

    pub fn advance(&self, seconds: i64) {
        self.0.fetch_add(seconds, Ordering::SeqCst);
    }
}

impl Clock for FixedClock {
    fn now(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolConfig {
    pub pow: PowPolicy,
    pub max_rounds: u32,
    pub timestamp_window: Duration,
    /// Require a fresh stamp on every proposal, not only round 1.
    pub pow_every_round: bool,
    /// Advertised in proposals so the peer can consult the same KB.
    pub kb_uri: Option<String>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            pow: PowPolicy::default(),
            max_rounds: DEFAULT_MAX_ROUNDS,
            timestamp_window: DEFAULT_TIMESTAMP_WINDOW,
            pow_every_round: false,
            kb_uri: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Idle,
    ProposalSent,
    ProposalReceived,
    Agreed,
    Cancelled,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Agreed | Phase::Cancelled)
    }

    pub fn can_transition(from: Phase, to: Phase) -> bool {
        use Phase::*;
        matches!(
            (from, to),
            (Idle, ProposalSent)
                | (Idle, ProposalReceived)
                | (ProposalSent, ProposalReceived)
                | (ProposalReceived, ProposalSent)
                | (ProposalSent, Agreed)
                | (ProposalReceived, Agreed)
                | (ProposalSent, Cancelled)
                | (ProposalReceived, Cancelled)
        )
    }
}

/// One party's view of one negotiation.
#[derive(Debug, Clone)]
pub struct Negotiation {
    id: NegotiationId,
    role: Role,
    peer: PartyIdentity,
    peer_key: Option<PublicKey>,
    phases: Vec<Phase>,
    round: u32,
    standing: Option<ExpressionSet>,
    last_sent: Option<WireDocument>,
    transcript: Vec<WireDocument>,
    history: Vec<WireDocument>,
    seen_nonces: HashSet<Vec<u8>>,
    record: Option<SslaRecord>,
    cancel_reason: Option<CancelReason>,
}

impl Negotiation {
    fn new(id: NegotiationId, role: Role, peer: PartyIdentity) -> Self {
        Negotiation {
            id,
            role,
            peer,
            peer_key: None,
            phases: vec![Phase::Idle],
            round: 0,
            standing: None,
            last_sent: None,
            transcript: Vec::new(),
            history: Vec::new(),
            seen_nonces: HashSet::new(),
            record: None,
            cancel_reason: None,
        }
    }

    fn set_phase(&mut self, to: Phase) {
        debug_assert!(Phase::can_transition(self.phase(), to), "{:?} -> {to:?}", self.phase());
        self.phases.push(to);
    }

    pub fn id(&self) -> NegotiationId {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn peer(&self) -> PartyIdentity {
        self.peer
    }

    pub fn phase(&self) -> Phase {
        *self.phases.last().expect("phase log starts with Idle")
    }

    /// Every phase this negotiation has been in, starting with `Idle`.
    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    /// Proposals in round order.
    pub fn transcript(&self) -> &[WireDocument] {
        &self.transcript
    }

    /// Every message sent or accepted, in order.
    pub fn history(&self) -> &[WireDocument] {
        &self.history
    }

    pub fn record(&self) -> Option<&SslaRecord> {
        self.record.as_ref()
    }

    pub fn cancel_reason(&self) -> Option<&CancelReason> {
        self.cancel_reason.as_ref()
    }
}

/// Outcome of accepting an incoming message.
#[derive(Debug, Clone)]
pub struct Received {
    pub negotiation_id: NegotiationId,
    pub phase: Phase,
    /// Confirmation, counterproposal or cancel to send back.
    pub reply: Option<WireDocument>,
}

enum Plan {
    Confirm,
    Counter(ExpressionSet),
    Cancel(CancelReason),
}

/// A negotiating party: key, capabilities, KB access and all of its
/// negotiations. Single writer; wrap in a mutex to share.
pub struct Party {
    key: KeyPair,
    identity: PartyIdentity,
    kb: Arc<dyn Translator + Send + Sync>,
    capabilities: ExpressionSet,
    config: ProtocolConfig,
    clock: Arc<dyn Clock>,
    rng: ChaCha20Rng,
    negotiations: IndexMap<NegotiationId, Negotiation>,
    stamps: StampReplaySet,
}

impl Party {
    pub fn new(
        key: KeyPair,
        kb: Arc<dyn Translator + Send + Sync>,
        capabilities: ExpressionSet,
        config: ProtocolConfig,
    ) -> Self {
        Party {
            identity: key.identity(),
            key,
            kb,
            capabilities: capabilities.with_role(ExpressionRole::Capability),
            config,
            clock: Arc::new(SystemClock),
            rng: ChaCha20Rng::from_entropy(),
            negotiations: IndexMap::new(),
            stamps: StampReplaySet::new(),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Deterministic nonces and stamp randomness.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha20Rng::seed_from_u64(seed);
        self
    }

    pub fn identity(&self) -> PartyIdentity {
        self.identity
    }

    pub fn public_key(&self) -> &PublicKey {
        self.key.public()
    }

    pub fn capabilities(&self) -> &ExpressionSet {
        &self.capabilities
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn negotiation(&self, id: &NegotiationId) -> Option<&Negotiation> {
        self.negotiations.get(id)
    }

    pub fn negotiations(&self) -> impl Iterator<Item = &Negotiation> {
        self.negotiations.values()
    }

    pub fn phase(&self, id: &NegotiationId) -> Phase {
        self.negotiations.get(id).map_or(Phase::Idle, Negotiation::phase)
    }

    pub fn record(&self, id: &NegotiationId) -> Option<&SslaRecord> {
        self.negotiations.get(id).and_then(Negotiation::record)
    }

    fn nonce(&mut self) -> Vec<u8> {
        let mut nonce = vec![0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        nonce
    }

    fn has_active_with(&self, peer: &PartyIdentity) -> bool {
        self.negotiations
            .values()
            .any(|n| n.peer == *peer && !n.phase().is_terminal())
    }

    fn mint_stamp(&mut self, proposal: &ProposalBody, now: i64) -> pow::HashcashStamp {
        let ext = StampExtension {
            initiator: proposal.initiator.id.to_vec(),
            responder: proposal.responder.id.to_vec(),
            nonce: proposal.nonce.clone(),
        };
        let resource = proposal.recipient().hex();
        pow::mint(&resource, &ext, &self.config.pow, now, &mut self.rng).stamp
    }

    /// Open a negotiation with a round-1 proposal.
    pub fn initiate(
        &mut self,
        requirements: ExpressionSet,
        responder: PartyIdentity,
    ) -> Result<SignedProposal, ProtocolError> {
        if responder == self.identity {
            return Err(ProtocolError::Misaddressed("cannot negotiate with oneself".into()));
        }
        if self.has_active_with(&responder) {
            return Err(ProtocolError::StateViolation(format!(
                "a negotiation with {responder} is already in progress"
            )));
        }
        let now = self.clock.now();
        let mut body = ProposalBody {
            negotiation_id: NegotiationId([0; 32]),
            round: 1,
            requirements: requirements.with_role(ExpressionRole::Requirement),
            capabilities: self.capabilities.clone(),
            initiator: self.identity,
            responder,
            sender_key: self.key.public().clone(),
            nonce: self.nonce(),
            timestamp: now,
            kb_uri: self.config.kb_uri.clone(),
            pow: None,
        };
        let stamp = self.mint_stamp(&body, now);
        body.negotiation_id = negotiation_id_from(&stamp);
        body.pow = Some(stamp);
        if self.negotiations.contains_key(&body.negotiation_id) {
            return Err(ProtocolError::StateViolation("negotiation id collision".into()));
        }
        let standing = body.requirements.clone();
        let signed = Signed::sign(PROPOSAL, body, &self.key);
        let mut n = Negotiation::new(signed.body.negotiation_id, Role::Initiator, responder);
        n.standing = Some(standing);
        n.round = 1;
        n.last_sent = Some(signed.document().clone());
        n.transcript.push(signed.document().clone());
        n.history.push(signed.document().clone());
        n.set_phase(Phase::ProposalSent);
        self.negotiations.insert(n.id, n);
        Ok(signed)
    }

    /// Dispatch an incoming document to the matching `receive_*` operation.
    pub fn receive(&mut self, doc: &WireDocument) -> Result<Received, ProtocolError> {
        match parse_message(doc)? {
            Message::Proposal(p) => self.receive_proposal(p),
            Message::Confirmation(c) => self.receive_confirmation(c),
            Message::Cancel(c) => self.receive_cancel(c),
        }
    }

    fn check_time(&self, timestamp: i64, now: i64) -> Result<(), ProtocolError> {
        let window = self.config.timestamp_window.as_secs() as i64;
        if (timestamp - now).abs() > window {
            return Err(ProtocolError::StaleTimestamp { timestamp, now });
        }
        Ok(())
    }

    fn check_stamp(&self, body: &ProposalBody, now: i64) -> Result<(), ProtocolError> {
        let stamp = body
            .pow
            .as_ref()
            .ok_or_else(|| ProtocolError::InvalidPow("missing stamp".into()))?;
        pow::check(stamp, &self.identity.hex(), &self.config.pow, now, &self.stamps).map_err(|e| match e {
            PowRejection::Replayed => ProtocolError::ReplayedNonce,
            other => ProtocolError::InvalidPow(other.to_string()),
        })?;
        let ext = stamp
            .extension()
            .map_err(|e| ProtocolError::InvalidPow(e.to_string()))?;
        if ext.initiator != body.initiator.id || ext.responder != body.responder.id || ext.nonce != body.nonce {
            return Err(ProtocolError::InvalidPow("stamp extension does not match the proposal".into()));
        }
        Ok(())
    }

    pub fn receive_proposal(&mut self, proposal: SignedProposal) -> Result<Received, ProtocolError> {
        let now = self.clock.now();
        let b = &proposal.body;
        let sender = b.sender();
        if b.round == 0 || b.initiator == b.responder {
            return Err(ProtocolError::Malformed("bad round or parties".into()));
        }
        if !sender.matches(&b.sender_key) {
            return Err(ProtocolError::InvalidSignature("sender key does not match sender identity".into()));
        }
        if !proposal.verifies_with(&b.sender_key) {
            return Err(ProtocolError::InvalidSignature("proposal".into()));
        }
        if b.recipient() != self.identity {
            return Err(ProtocolError::Misaddressed("proposal recipient".into()));
        }
        self.check_time(b.timestamp, now)?;
        let standing = match self.negotiations.get(&b.negotiation_id) {
            None => {
                if b.round != 1 {
                    return Err(ProtocolError::UnknownNegotiation(b.negotiation_id));
                }
                self.check_stamp(b, now)?;
                let stamp = b.pow.as_ref().expect("checked above");
                if negotiation_id_from(stamp) != b.negotiation_id {
                    return Err(ProtocolError::InvalidPow(
                        "negotiation id is not derived from the stamp".into(),
                    ));
                }
                if self.has_active_with(&sender) {
                    return Err(ProtocolError::StateViolation(format!(
                        "a negotiation with {sender} is already in progress"
                    )));
                }
                None
            }
            Some(n) => {
                if n.seen_nonces.contains(&b.nonce) {
                    return Err(ProtocolError::ReplayedNonce);
                }
                if n.peer != sender {
                    return Err(ProtocolError::Misaddressed("sender is not this negotiation's peer".into()));
                }
                if n.phase() != Phase::ProposalSent {
                    return Err(ProtocolError::StateViolation(format!(
                        "proposal received in phase {:?}",
                        n.phase()
                    )));
                }
                if b.round != n.round + 1 {
                    return Err(ProtocolError::StateViolation(format!(
                        "expected round {}, got {}",
                        n.round + 1,
                        b.round
                    )));
                }
                let (initiator, responder) = match n.role {
                    Role::Initiator => (self.identity, n.peer),
                    Role::Responder => (n.peer, self.identity),
                };
                if b.initiator != initiator || b.responder != responder {
                    return Err(ProtocolError::StateViolation("parties changed mid-negotiation".into()));
                }
                if n.peer_key.as_ref().is_some_and(|k| *k != b.sender_key) {
                    return Err(ProtocolError::InvalidSignature("peer key changed".into()));
                }
                if self.config.pow_every_round {
                    self.check_stamp(b, now)?;
                }
                n.standing.clone()
            }
        };

        let plan = self.plan(b, standing.as_ref());
        let doc = proposal.document().clone();
        let mut prospective: Vec<WireDocument> = self
            .negotiations
            .get(&b.negotiation_id)
            .map(|n| n.transcript.clone())
            .unwrap_or_default();
        prospective.push(doc.clone());

        enum Reply {
            Confirm(SignedConfirmation, SslaRecord),
            Counter(SignedProposal),
            Cancel(SignedCancel),
        }
        let reply = match plan {
            Plan::Confirm => {
                let conf = Signed::sign(
                    CONFIRMATION,
                    ConfirmationBody {
                        negotiation_id: b.negotiation_id,
                        proposal: doc.clone(),
                        confirmer: self.identity,
                        sender_key: self.key.public().clone(),
                        nonce: self.nonce(),
                        timestamp: now,
                    },
                    &self.key,
                );
                let record = SslaRecord::assemble(&conf, prospective)?;
                Reply::Confirm(conf, record)
            }
            Plan::Counter(entries) => {
                let mut body = ProposalBody {
                    negotiation_id: b.negotiation_id,
                    round: b.round + 1,
                    requirements: entries.with_role(ExpressionRole::Requirement),
                    capabilities: self.capabilities.clone(),
                    initiator: b.initiator,
                    responder: b.responder,
                    sender_key: self.key.public().clone(),
                    nonce: self.nonce(),
                    timestamp: now,
                    kb_uri: self.config.kb_uri.clone(),
                    pow: None,
                };
                if self.config.pow_every_round {
                    body.pow = Some(self.mint_stamp(&body, now));
                }
                Reply::Counter(Signed::sign(PROPOSAL, body, &self.key))
            }
            Plan::Cancel(reason) => Reply::Cancel(self.sign_cancel(b.negotiation_id, b.round, sender, reason, now)),
        };

        // Commit.
        let id = b.negotiation_id;
        if standing.is_none() && !self.negotiations.contains_key(&id) {
            self.stamps.insert(b.pow.as_ref().expect("round 1 carries a stamp"));
            self.stamps.prune(now, &self.config.pow);
            self.negotiations.insert(id, Negotiation::new(id, Role::Responder, sender));
        } else if self.config.pow_every_round {
            if let Some(stamp) = &b.pow {
                self.stamps.insert(stamp);
            }
        }
        let n = self.negotiations.get_mut(&id).expect("inserted above");
        n.seen_nonces.insert(b.nonce.clone());
        n.peer_key = Some(b.sender_key.clone());
        n.round = b.round;
        n.transcript.push(doc.clone());
        n.history.push(doc);
        n.set_phase(Phase::ProposalReceived);
        let reply_doc = match reply {
            Reply::Confirm(conf, record) => {
                n.history.push(conf.document().clone());
                n.record = Some(record);
                n.set_phase(Phase::Agreed);
                conf.into_document()
            }
            Reply::Counter(counter) => {
                let d = counter.into_document();
                n.round += 1;
                n.last_sent = Some(d.clone());
                n.transcript.push(d.clone());
                n.history.push(d.clone());
                n.set_phase(Phase::ProposalSent);
                d
            }
            Reply::Cancel(cancel) => {
                n.history.push(cancel.document().clone());
                n.cancel_reason = Some(cancel.body.reason.clone());
                n.set_phase(Phase::Cancelled);
                cancel.into_document()
            }
        };
        Ok(Received {
            negotiation_id: id,
            phase: n.phase(),
            reply: Some(reply_doc),
        })
    }

    fn plan(&self, b: &ProposalBody, standing: Option<&ExpressionSet>) -> Plan {
        let kb = self.kb.as_ref();
        if let Some(standing) = standing {
            let offered = b.requirements.clone().with_role(ExpressionRole::Capability);
            let empty = ExpressionSet::new(ExpressionRole::Capability);
            match decide_set(kb, standing, &offered, &empty) {
                Ok(v) if v.overall == Overall::Accept => {}
                Ok(v) => {
                    let lost = v
                        .per_requirement
                        .iter()
                        .filter(|(_, s)| **s == Satisfaction::Unsatisfied)
                        .map(|(r, _)| r.to_string())
                        .collect();
                    return Plan::Cancel(CancelReason::new(cancel_codes::WEAKENED, lost));
                }
                Err(e) => return Plan::Cancel(CancelReason::new(e.code(), vec![e.to_string()])),
            }
        }
        match decide_set(kb, &b.requirements, &b.capabilities, &self.capabilities) {
            Err(e) => Plan::Cancel(CancelReason::new(e.code(), vec![e.to_string()])),
            Ok(v) => match v.overall {
                Overall::Accept => Plan::Confirm,
                Overall::Counter if b.round >= self.config.max_rounds => {
                    Plan::Cancel(CancelReason::new(cancel_codes::MAX_ROUNDS, Vec::new()))
                }
                Overall::Counter => Plan::Counter(v.counterproposal.expect("counter verdicts carry one").entries),
                Overall::Reject => Plan::Cancel(CancelReason::new(
                    cancel_codes::UNSATISFIABLE,
                    v.counterproposal
                        .map(|c| c.unsatisfiable.iter().map(ToString::to_string).collect())
                        .unwrap_or_default(),
                )),
            },
        }
    }

    fn sign_cancel(
        &mut self,
        id: NegotiationId,
        round: u32,
        recipient: PartyIdentity,
        reason: CancelReason,
        now: i64,
    ) -> SignedCancel {
        let body = CancelBody {
            negotiation_id: id,
            round,
            sender: self.identity,
            recipient,
            sender_key: self.key.public().clone(),
            reason,
            nonce: self.nonce(),
            timestamp: now,
        };
        Signed::sign(CANCEL, body, &self.key)
    }

    pub fn receive_confirmation(&mut self, confirmation: SignedConfirmation) -> Result<Received, ProtocolError> {
        let now = self.clock.now();
        let b = &confirmation.body;
        if !b.confirmer.matches(&b.sender_key) || !confirmation.verifies_with(&b.sender_key) {
            return Err(ProtocolError::InvalidSignature("confirmation".into()));
        }
        let n = self
            .negotiations
            .get(&b.negotiation_id)
            .ok_or(ProtocolError::UnknownNegotiation(b.negotiation_id))?;
        if b.confirmer != n.peer {
            return Err(ProtocolError::Misaddressed("confirmer is not this negotiation's peer".into()));
        }
        self.check_time(b.timestamp, now)?;
        if n.seen_nonces.contains(&b.nonce) {
            return Err(ProtocolError::ReplayedNonce);
        }
        if n.phase() != Phase::ProposalSent {
            return Err(ProtocolError::StateViolation(format!(
                "confirmation received in phase {:?}",
                n.phase()
            )));
        }
        let sent = n.last_sent.as_ref().expect("a proposal was sent");
        if b.proposal.encode() != sent.encode() {
            return Err(ProtocolError::MismatchedEmbedding);
        }
        let record = SslaRecord::assemble(&confirmation, n.transcript.clone())?;

        let n = self.negotiations.get_mut(&b.negotiation_id).expect("looked up above");
        n.seen_nonces.insert(b.nonce.clone());
        n.history.push(confirmation.document().clone());
        n.record = Some(record);
        n.set_phase(Phase::Agreed);
        Ok(Received {
            negotiation_id: n.id,
            phase: Phase::Agreed,
            reply: None,
        })
    }

    pub fn receive_cancel(&mut self, cancel: SignedCancel) -> Result<Received, ProtocolError> {
        let now = self.clock.now();
        let b = &cancel.body;
        if !b.sender.matches(&b.sender_key) || !cancel.verifies_with(&b.sender_key) {
            return Err(ProtocolError::InvalidSignature("cancel".into()));
        }
        if b.recipient != self.identity {
            return Err(ProtocolError::Misaddressed("cancel recipient".into()));
        }
        let n = self
            .negotiations
            .get(&b.negotiation_id)
            .ok_or(ProtocolError::UnknownNegotiation(b.negotiation_id))?;
        if b.sender != n.peer {
            return Err(ProtocolError::Misaddressed("sender is not this negotiation's peer".into()));
        }
        self.check_time(b.timestamp, now)?;
        if n.seen_nonces.contains(&b.nonce) {
            return Err(ProtocolError::ReplayedNonce);
        }
        if n.phase().is_terminal() {
            return Err(ProtocolError::StateViolation(format!("cancel received in phase {:?}", n.phase())));
        }

        let n = self.negotiations.get_mut(&b.negotiation_id).expect("looked up above");
        n.seen_nonces.insert(b.nonce.clone());
        n.history.push(cancel.document().clone());
        n.cancel_reason = Some(b.reason.clone());
        n.set_phase(Phase::Cancelled);
        Ok(Received {
            negotiation_id: n.id,
            phase: Phase::Cancelled,
            reply: None,
        })
    }

    /// Abandon a negotiation; the returned message informs the peer.
    pub fn cancel(&mut self, id: &NegotiationId, reason: CancelReason) -> Result<SignedCancel, ProtocolError> {
        let n = self
            .negotiations
            .get(id)
            .ok_or(ProtocolError::UnknownNegotiation(*id))?;
        if n.phase().is_terminal() {
            return Err(ProtocolError::StateViolation(format!("cannot cancel in phase {:?}", n.phase())));
        }
        let (peer, round) = (n.peer, n.round);
        let now = self.clock.now();
        let signed = self.sign_cancel(*id, round, peer, reason, now);
        let n = self.negotiations.get_mut(id).expect("looked up above");
        n.history.push(signed.document().clone());
        n.cancel_reason = Some(signed.body.reason.clone());
        n.set_phase(Phase::Cancelled);
        Ok(signed)
    }
}
