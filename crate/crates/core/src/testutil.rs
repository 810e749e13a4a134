use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::crypto::KeyPair;
use crate::expression::{ExpressionRole, ExpressionSet};
use crate::protocol::{FixedClock, Party, ProtocolConfig};
use crate::translation::KnowledgeBase;

pub const NOW: i64 = 1_700_000_000;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn kb() -> Arc<KnowledgeBase> {
    Arc::new(KnowledgeBase::load_dir(&fixtures().join("kb")).unwrap())
}

pub fn key(name: &str) -> KeyPair {
    let pem = std::fs::read_to_string(fixtures().join("keys").join(format!("{name}.key.pem"))).unwrap();
    KeyPair::from_pkcs8_pem(&pem).unwrap()
}

pub fn set(role: ExpressionRole, items: &[&str]) -> ExpressionSet {
    ExpressionSet::parse(role, items).unwrap()
}

pub const USER_CAPS: &[&str] = &["Technique.3.1", "Technique.7.2"];
pub const SP_CAPS: &[&str] = &[
    "Technique.3.1",
    "Technique.3.5",
    "Technique.7.1",
    "Technique.7.2",
    "Technique.9.1",
    "Function.15",
];
pub const SCENARIO_FUNCTIONS: &[&str] =
    &["Function.12.1.3", "Function.17", "Function.23.3", "Function.15", "Function.19.12.2"];

pub fn party(key_name: &str, caps: &[&str], clock: &FixedClock, seed: u64) -> Party {
    Party::new(key(key_name), kb(), set(ExpressionRole::Capability, caps), ProtocolConfig::default())
        .with_clock(Arc::new(clock.clone()))
        .with_seed(seed)
}

/// Run the hotspot scenario to completion; returns both parties' records.
pub fn scenario_records() -> (crate::protocol::SslaRecord, crate::protocol::SslaRecord, Vec<crate::crypto::PublicKey>) {
    let clock = FixedClock::new(NOW);
    let mut user = party("user", USER_CAPS, &clock, 1);
    let mut sp = party("sp", SP_CAPS, &clock, 2);
    let p1 = user.initiate(set(ExpressionRole::Requirement, SCENARIO_FUNCTIONS), sp.identity()).unwrap();
    let id = p1.body.negotiation_id;
    let counter = sp.receive(p1.document()).unwrap().reply.unwrap();
    let conf = user.receive(&counter).unwrap().reply.unwrap();
    sp.receive(&conf).unwrap();
    let keys = vec![user.public_key().clone(), sp.public_key().clone()];
    (user.record(&id).unwrap().clone(), sp.record(&id).unwrap().clone(), keys)
}
