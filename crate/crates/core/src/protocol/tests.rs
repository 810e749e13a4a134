use serde_json::json;

use super::*;
use crate::expression::ExpressionRole::{Capability, Requirement};
use crate::testutil::*;
use crate::wire::document::Signed;

fn pair(user_caps: &[&str], sp_caps: &[&str]) -> (Party, Party, FixedClock) {
    let clock = FixedClock::new(NOW);
    (party("user", user_caps, &clock, 1), party("sp", sp_caps, &clock, 2), clock)
}

fn reqs(items: &[&str]) -> crate::expression::ExpressionSet {
    set(Requirement, items)
}

/// Deliver `doc` to `to`, then keep bouncing replies until nobody answers.
fn run(a: &mut Party, b: &mut Party, first: WireDocument) -> Vec<WireDocument> {
    let mut sent = vec![first.clone()];
    let mut next = Some(first);
    let mut to_b = true;
    while let Some(doc) = next.take() {
        let receiver = if to_b { &mut *b } else { &mut *a };
        next = receiver.receive(&doc).unwrap().reply;
        if let Some(d) = &next {
            sent.push(d.clone());
        }
        to_b = !to_b;
    }
    sent
}

#[test]
fn scenario_counters_in_technique_dimension_then_agrees() {
    let (mut user, mut sp, _) = pair(USER_CAPS, SP_CAPS);
    let p1 = user.initiate(reqs(SCENARIO_FUNCTIONS), sp.identity()).unwrap();
    let id = p1.body.negotiation_id;
    let flow = run(&mut user, &mut sp, p1.into_document());
    let kinds: Vec<_> = flow.iter().map(|d| d.kind.as_str()).collect();
    assert_eq!(kinds, [PROPOSAL, PROPOSAL, CONFIRMATION]);

    let counter: SignedProposal = Signed::from_document(flow[1].clone(), PROPOSAL).unwrap();
    assert_eq!(counter.body.round, 2);
    assert_eq!(
        counter.body.requirements.to_strings(),
        [
            "Function.12.1.3:Technique.3.1",
            "Function.17:Technique.7.2",
            "Function.23.3:Technique.3.1",
            "Function.15",
            "Function.19.12.2:Technique.3.5",
        ]
    );

    assert_eq!(user.phase(&id), Phase::Agreed);
    assert_eq!(sp.phase(&id), Phase::Agreed);
    let (ur, sr) = (user.record(&id).unwrap(), sp.record(&id).unwrap());
    assert_eq!(ur.encode(), sr.encode());
    assert_eq!(ur.agreed_entries, counter.body.requirements.clone().with_role(crate::expression::ExpressionRole::SslaEntry));
    assert_eq!(ur.proposal_signature.signer, sp.identity());
    assert_eq!(ur.confirmation_signature.signer, user.identity());
    assert_eq!(ur.transcript.len(), 2);
    assert_eq!(user.negotiation(&id).unwrap().phases(), [Phase::Idle, Phase::ProposalSent, Phase::ProposalReceived, Phase::Agreed]);
    assert_eq!(sp.negotiation(&id).unwrap().phases(), [Phase::Idle, Phase::ProposalReceived, Phase::ProposalSent, Phase::Agreed]);
}

#[test]
fn satisfiable_round_one_is_confirmed_directly() {
    let (mut user, mut sp, _) = pair(USER_CAPS, SP_CAPS);
    let p1 = user.initiate(reqs(&["Function.17", "Function.23.3"]), sp.identity()).unwrap();
    let id = p1.body.negotiation_id;
    let r = sp.receive(p1.document()).unwrap();
    assert_eq!(r.phase, Phase::Agreed);
    let conf: SignedConfirmation = Signed::from_document(r.reply.unwrap(), CONFIRMATION).unwrap();
    assert_eq!(conf.body.proposal.encode(), p1.document().encode());
    assert_eq!(user.receive(conf.document()).unwrap().phase, Phase::Agreed);
    assert_eq!(user.record(&id).unwrap().encode(), sp.record(&id).unwrap().encode());
}

#[test]
fn empty_requirements_agree_on_empty_ssla() {
    let (mut user, mut sp, _) = pair(USER_CAPS, SP_CAPS);
    let p1 = user.initiate(reqs(&[]), sp.identity()).unwrap();
    let id = p1.body.negotiation_id;
    run(&mut user, &mut sp, p1.into_document());
    assert!(user.record(&id).unwrap().agreed_entries.is_empty());
    assert_eq!(sp.phase(&id), Phase::Agreed);
}

#[test]
fn missing_authentication_techniques_cancel() {
    let (mut user, mut sp, _) = pair(USER_CAPS, &["Technique.3.1", "Technique.3.5", "Technique.9.1", "Function.15"]);
    let p1 = user.initiate(reqs(SCENARIO_FUNCTIONS), sp.identity()).unwrap();
    let id = p1.body.negotiation_id;
    let flow = run(&mut user, &mut sp, p1.into_document());
    assert_eq!(flow.last().unwrap().kind, CANCEL);
    for p in [&user, &sp] {
        assert_eq!(p.phase(&id), Phase::Cancelled);
        assert!(p.record(&id).is_none());
        let reason = p.negotiation(&id).unwrap().cancel_reason().unwrap();
        assert_eq!(reason.code, cancel_codes::UNSATISFIABLE);
        assert_eq!(reason.items, ["Function.17"]);
    }
}

#[test]
fn max_rounds_bounds_counterproposals() {
    let clock = FixedClock::new(NOW);
    let mut user = party("user", USER_CAPS, &clock, 1);
    let config = ProtocolConfig { max_rounds: 1, ..ProtocolConfig::default() };
    let mut sp = Party::new(key("sp"), kb(), set(Capability, SP_CAPS), config)
        .with_clock(std::sync::Arc::new(clock.clone()))
        .with_seed(2);
    let p1 = user.initiate(reqs(SCENARIO_FUNCTIONS), sp.identity()).unwrap();
    let r = sp.receive(p1.document()).unwrap();
    assert_eq!(r.phase, Phase::Cancelled);
    let cancel: SignedCancel = Signed::from_document(r.reply.unwrap(), CANCEL).unwrap();
    assert_eq!(cancel.body.reason.code, cancel_codes::MAX_ROUNDS);
}

#[test]
fn weakened_counterproposal_is_cancelled() {
    let clock = FixedClock::new(NOW);
    let mut user = party("user", USER_CAPS, &clock, 1);
    let sp_key = key("sp");
    let p1 = user.initiate(reqs(&["Function.17", "Function.15"]), sp_key.identity()).unwrap();
    let mut body = p1.body.clone();
    body.round = 2;
    body.requirements = reqs(&["Function.17:Technique.7.2"]);
    body.capabilities = set(Capability, SP_CAPS);
    body.sender_key = sp_key.public().clone();
    body.nonce = vec![9; 16];
    body.pow = None;
    let counter = Signed::sign(PROPOSAL, body, &sp_key);
    let r = user.receive(counter.document()).unwrap();
    assert_eq!(r.phase, Phase::Cancelled);
    let reason = user.negotiation(&p1.body.negotiation_id).unwrap().cancel_reason().unwrap();
    assert_eq!(reason.code, cancel_codes::WEAKENED);
    assert_eq!(reason.items, ["Function.15"]);
}

#[test]
fn duplicate_proposal_is_a_replay() {
    let (mut user, mut sp, _) = pair(USER_CAPS, SP_CAPS);
    let p1 = user.initiate(reqs(SCENARIO_FUNCTIONS), sp.identity()).unwrap();
    sp.receive(p1.document()).unwrap();
    assert_eq!(sp.receive(p1.document()).unwrap_err(), ProtocolError::ReplayedNonce);
}

#[test]
fn proposal_reserializes_to_identical_bytes() {
    let (mut user, sp, _) = pair(USER_CAPS, SP_CAPS);
    let p1 = user.initiate(reqs(SCENARIO_FUNCTIONS), sp.identity()).unwrap();
    let bytes = p1.document().encode();
    let back: SignedProposal = Signed::from_document(WireDocument::decode(&bytes).unwrap(), PROPOSAL).unwrap();
    assert_eq!(back.document().encode(), bytes);
    assert_eq!(back.body, p1.body);
}

fn snapshot(p: &Party) -> Vec<(Phase, usize)> {
    p.negotiations().map(|n| (n.phase(), n.history().len())).collect()
}

#[test]
fn rejected_proposals_leave_no_trace() {
    let (mut user, mut sp, clock) = pair(USER_CAPS, SP_CAPS);
    let p1 = user.initiate(reqs(SCENARIO_FUNCTIONS), sp.identity()).unwrap();
    let before = snapshot(&sp);

    let mut tampered = p1.document().clone();
    tampered.body["requirements"] = json!(["Function.17"]);
    assert!(matches!(sp.receive(&tampered), Err(ProtocolError::InvalidSignature(_))));

    let mut version = p1.document().clone();
    version.version = "2".into();
    assert_eq!(sp.receive(&version).unwrap_err().code(), "unsupported-version");

    clock.advance(301);
    assert!(matches!(sp.receive(p1.document()), Err(ProtocolError::StaleTimestamp { .. })));
    clock.advance(-301);

    let intruder = party("intruder", SP_CAPS, &clock, 3);
    let mut other = party("user", USER_CAPS, &clock, 4);
    let misaddressed = other.initiate(reqs(&[]), intruder.identity()).unwrap();
    assert!(matches!(sp.receive(misaddressed.document()), Err(ProtocolError::Misaddressed(_))));

    assert_eq!(snapshot(&sp), before);
    assert!(sp.receive(p1.document()).is_ok());
}

#[test]
fn proof_of_work_is_enforced_on_first_contact() {
    let clock = FixedClock::new(NOW);
    let weak = ProtocolConfig { pow: crate::pow::PowPolicy::with_bits(1), ..ProtocolConfig::default() };
    let mut user = Party::new(key("user"), kb(), set(Capability, USER_CAPS), weak)
        .with_clock(std::sync::Arc::new(clock.clone()))
        .with_seed(5);
    let mut sp = party("sp", SP_CAPS, &clock, 2);
    let p1 = user.initiate(reqs(&[]), sp.identity()).unwrap();
    assert!(matches!(sp.receive(p1.document()), Err(ProtocolError::InvalidPow(_))));

    // A valid stamp lifted onto a different proposal.
    let mut user = party("user", USER_CAPS, &clock, 6);
    let p1 = user.initiate(reqs(&[]), sp.identity()).unwrap();
    let mut body = p1.body.clone();
    body.nonce = vec![0; 16];
    let spliced = Signed::sign(PROPOSAL, body, &key("user"));
    assert!(matches!(sp.receive(spliced.document()), Err(ProtocolError::InvalidPow(_))));
    assert!(sp.receive(p1.document()).is_ok());
}

#[test]
fn one_active_negotiation_per_pair() {
    let (mut user, sp, _) = pair(USER_CAPS, SP_CAPS);
    let p1 = user.initiate(reqs(&[]), sp.identity()).unwrap();
    assert!(matches!(user.initiate(reqs(&[]), sp.identity()), Err(ProtocolError::StateViolation(_))));
    user.cancel(&p1.body.negotiation_id, CancelReason::new(cancel_codes::REQUESTED, vec![])).unwrap();
    assert!(user.initiate(reqs(&[]), sp.identity()).is_ok());
}

#[test]
fn cancel_is_terminal_and_verifiable() {
    let (mut user, mut sp, _) = pair(USER_CAPS, SP_CAPS);
    let p1 = user.initiate(reqs(SCENARIO_FUNCTIONS), sp.identity()).unwrap();
    let id = p1.body.negotiation_id;
    sp.receive(p1.document()).unwrap();
    let cancel = user.cancel(&id, CancelReason::new(cancel_codes::REQUESTED, vec![])).unwrap();
    assert!(cancel.verifies_with(user.public_key()));
    assert!(matches!(
        user.cancel(&id, CancelReason::new(cancel_codes::REQUESTED, vec![])),
        Err(ProtocolError::StateViolation(_))
    ));
    assert_eq!(sp.receive(cancel.document()).unwrap().phase, Phase::Cancelled);
    assert_eq!(sp.receive(cancel.document()).unwrap_err(), ProtocolError::ReplayedNonce);
    assert!(user.record(&id).is_none());
}

#[test]
fn tampered_embedding_is_rejected() {
    let (mut user, mut sp, _) = pair(USER_CAPS, SP_CAPS);
    let p1 = user.initiate(reqs(SCENARIO_FUNCTIONS), sp.identity()).unwrap();
    let id = p1.body.negotiation_id;
    let counter = sp.receive(p1.document()).unwrap().reply.unwrap();
    let counter: SignedProposal = Signed::from_document(counter, PROPOSAL).unwrap();

    // The SP "confirms" its own counter with one entry altered.
    let mut embedded = counter.document().clone();
    embedded.body["requirements"][1] = json!("Function.17:Technique.7.1");
    let conf = Signed::sign(
        CONFIRMATION,
        ConfirmationBody {
            negotiation_id: id,
            proposal: embedded,
            confirmer: user.identity(),
            sender_key: user.public_key().clone(),
            nonce: vec![7; 16],
            timestamp: NOW,
        },
        &key("user"),
    );
    assert_eq!(sp.receive(conf.document()).unwrap_err(), ProtocolError::MismatchedEmbedding);
    assert_eq!(sp.phase(&id), Phase::ProposalSent);
}

#[test]
fn confirmation_for_unknown_negotiation() {
    let (mut user, mut sp, _) = pair(USER_CAPS, SP_CAPS);
    let p1 = user.initiate(reqs(&[]), sp.identity()).unwrap();
    let conf = sp.receive(p1.document()).unwrap().reply.unwrap();
    let clock = FixedClock::new(NOW);
    let mut stranger = party("user", USER_CAPS, &clock, 9);
    assert!(matches!(stranger.receive(&conf), Err(ProtocolError::UnknownNegotiation(_))));
}

#[test]
fn records_require_both_signatures() {
    let (mut user, mut sp, _) = pair(USER_CAPS, SP_CAPS);
    let p1 = user.initiate(reqs(&["Function.17"]), sp.identity()).unwrap();
    let conf = sp.receive(p1.document()).unwrap().reply.unwrap();
    let conf: SignedConfirmation = Signed::from_document(conf, CONFIRMATION).unwrap();
    assert!(SslaRecord::assemble(&conf, vec![p1.document().clone()]).is_ok());

    let mut bad_outer = conf.document().clone();
    bad_outer.body["timestamp"] = json!(NOW + 1);
    let bad_outer = Signed::from_document(bad_outer, CONFIRMATION).unwrap();
    assert!(matches!(
        SslaRecord::assemble(&bad_outer, vec![p1.document().clone()]),
        Err(ProtocolError::InvalidSignature(_))
    ));

    let mut bad_inner = p1.document().clone();
    bad_inner.body["timestamp"] = json!(NOW + 1);
    let mut body = conf.body.clone();
    body.proposal = bad_inner.clone();
    let resigned = Signed::sign(CONFIRMATION, body, &key("sp"));
    assert!(matches!(
        SslaRecord::assemble(&resigned, vec![bad_inner]),
        Err(ProtocolError::InvalidSignature(_))
    ));
}

#[test]
fn error_codes_are_distinct() {
    let mut codes = ERROR_CODES.to_vec();
    codes.sort();
    codes.dedup();
    assert_eq!(codes.len(), ERROR_CODES.len());
}
