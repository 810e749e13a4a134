#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use ssla::audit::audit_record;
use ssla::crypto::{KeyPair, PartyIdentity, PublicKey};
use ssla::expression::{ExpressionRole, ExpressionSet};
use ssla::pow::PowPolicy;
use ssla::protocol::{
    parse_message, CancelReason, FixedClock, Message, Party, Phase, ProtocolConfig, SslaRecord,
    CANCEL, CONFIRMATION, PROPOSAL,
};
use ssla::translation::KnowledgeBase;
use ssla::wire::{Signed, WireDocument};

pub const NOW: i64 = 1_700_000_000;

pub const USER_CAPS: &[&str] = &["Technique.3.1", "Technique.7.2"];
pub const SP_CAPS: &[&str] = &[
    "Technique.3.1",
    "Technique.3.5",
    "Technique.7.1",
    "Technique.7.2",
    "Technique.9.1",
    "Function.15",
];
pub const SP_NO_AUTH_CAPS: &[&str] = &["Technique.3.1", "Technique.3.5", "Technique.9.1", "Function.15"];
pub const SCENARIO_FUNCTIONS: &[&str] =
    &["Function.12.1.3", "Function.17", "Function.23.3", "Function.15", "Function.19.12.2"];

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

pub fn party(key: KeyPair, caps: &[&str], config: &ProtocolConfig, clock: &FixedClock, seed: u64) -> Party {
    Party::new(key, kb(), set(ExpressionRole::Capability, caps), config.clone())
        .with_clock(Arc::new(clock.clone()))
        .with_seed(seed)
}

/// Bounce messages between two parties until nobody replies.
pub fn exchange(a: &mut Party, b: &mut Party, first: WireDocument) -> Vec<WireDocument> {
    let mut sent = vec![first.clone()];
    let mut next = Some(first);
    let mut to_b = true;
    while let Some(doc) = next.take() {
        let receiver = if to_b { &mut *b } else { &mut *a };
        next = receiver.receive(&doc).unwrap().reply;
        sent.extend(next.clone());
        to_b = !to_b;
    }
    sent
}

/// Hotspot run between the fixture RSA parties.
pub fn scenario_records() -> (SslaRecord, SslaRecord, Vec<PublicKey>) {
    let clock = FixedClock::new(NOW);
    let config = ProtocolConfig::default();
    let mut user = party(key("user"), USER_CAPS, &config, &clock, 1);
    let mut sp = party(key("sp"), SP_CAPS, &config, &clock, 2);
    let p1 = user
        .initiate(set(ExpressionRole::Requirement, SCENARIO_FUNCTIONS), sp.identity())
        .unwrap();
    let id = p1.body.negotiation_id;
    exchange(&mut user, &mut sp, p1.into_document());
    let keys = vec![user.public_key().clone(), sp.public_key().clone()];
    (user.record(&id).unwrap().clone(), sp.record(&id).unwrap().clone(), keys)
}

// ---------------------------------------------------------------------------
// Decision oracle over the raw fixture files.

/// Translation tables and dictionaries read straight from the fixture JSON.
pub struct RawKb {
    /// `(source dimension, key) -> values`
    pub rows: HashMap<String, Vec<String>>,
    pub dictionary: BTreeMap<String, Vec<String>>,
}

impl RawKb {
    pub fn load(dir: &Path) -> Self {
        let mut rows = HashMap::new();
        let mut dictionary = BTreeMap::new();
        for entry in std::fs::read_dir(dir).unwrap() {
            let doc: Value = serde_json::from_slice(&std::fs::read(entry.unwrap().path()).unwrap()).unwrap();
            if let Some(table_rows) = doc.get("rows").and_then(Value::as_array) {
                for row in table_rows {
                    let key = row["key"].as_str().unwrap().to_owned();
                    let values = row["values"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_owned());
                    rows.insert(key, values.collect());
                }
            } else {
                let dim = doc["dimension"].as_str().unwrap().to_owned();
                let oids = doc["entries"].as_array().unwrap().iter().map(|e| e["oid"].as_str().unwrap().to_owned());
                dictionary.insert(dim, oids.collect());
            }
        }
        RawKb { rows, dictionary }
    }

    fn dimension(oid: &str) -> &str {
        oid.split('.').next().unwrap()
    }

    /// Function-level items a single requirement OID needs (conjunctive).
    pub fn needed(&self, oid: &str) -> BTreeSet<String> {
        let mut frontier = BTreeSet::from([oid.to_owned()]);
        for dim in ["Target", "Risk"] {
            frontier = frontier
                .into_iter()
                .flat_map(|o| match (Self::dimension(&o) == dim, self.rows.get(&o)) {
                    (true, Some(values)) if !values.is_empty() => values.clone(),
                    _ => vec![o],
                })
                .collect();
        }
        frontier
    }

    /// Whether `item` is covered by `caps`: held directly, or a Function
    /// whose technique row lists some held capability.
    pub fn covered(&self, item: &str, caps: &BTreeSet<String>) -> bool {
        caps.contains(item)
            || (Self::dimension(item) == "Function"
                && self.rows.get(item).is_some_and(|techs| techs.iter().any(|t| caps.contains(t))))
    }

    /// Expected outcome: every needed item covered.
    pub fn oracle(&self, requirement: &str, caps: &BTreeSet<String>) -> bool {
        let operative = requirement.rsplit(':').next().unwrap();
        if Self::dimension(operative) == "Technique" {
            return caps.contains(operative);
        }
        self.needed(operative).iter().all(|f| self.covered(f, caps))
    }

    /// The literal reading of the published pseudocode: return 0 as soon as
    /// a translated entry is found among the capabilities' functions.
    pub fn pseudocode(&self, requirement: &str, caps: &BTreeSet<String>) -> bool {
        let operative = requirement.rsplit(':').next().unwrap();
        if Self::dimension(operative) == "Technique" {
            return caps.contains(operative);
        }
        !self.needed(operative).iter().any(|f| self.covered(f, caps))
    }
}

// ---------------------------------------------------------------------------
// Evidence mutation.

/// Every way of changing exactly one byte inside one field of a JSON value:
/// each byte of each string (keys included) XOR 0x01, each digit of each
/// number bumped.
pub fn field_mutations(value: &Value) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    mutate_into(value, String::new(), &mut |path, replacement| out.push((path, replacement)));
    out
}

fn flip_string(s: &str) -> Vec<String> {
    (0..s.len())
        .filter_map(|i| {
            let mut bytes = s.as_bytes().to_vec();
            bytes[i] ^= 0x01;
            String::from_utf8(bytes).ok()
        })
        .collect()
}

fn mutate_into(value: &Value, path: String, emit: &mut dyn FnMut(String, Value)) {
    match value {
        Value::String(s) => {
            for m in flip_string(s) {
                emit(path.clone(), Value::String(m));
            }
        }
        Value::Number(n) => {
            let text = n.to_string();
            for (i, c) in text.char_indices().filter(|(_, c)| c.is_ascii_digit()) {
                let d = (c.to_digit(10).unwrap() + 1) % 10;
                let mut t = text.clone();
                t.replace_range(i..i + 1, &d.to_string());
                if let Ok(v) = serde_json::from_str::<Value>(&t) {
                    if v != *value {
                        emit(path.clone(), v);
                    }
                }
            }
        }
        Value::Bool(b) => emit(path, Value::Bool(!b)),
        Value::Null => {}
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                mutate_into(item, format!("{path}[{i}]"), &mut |p, v| {
                    let mut copy = items.clone();
                    copy[i] = v;
                    emit(p, Value::Array(copy));
                });
            }
        }
        Value::Object(map) => {
            for (k, item) in map {
                let child = format!("{path}.{k}");
                mutate_into(item, child.clone(), &mut |p, v| {
                    let mut copy = map.clone();
                    copy.insert(k.clone(), v);
                    emit(p, Value::Object(copy));
                });
                for renamed in flip_string(k) {
                    let mut copy = map.clone();
                    let v = copy.remove(k).unwrap();
                    copy.insert(renamed, v);
                    emit(format!("{child}#key"), Value::Object(copy));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Message-sequence fuzzing.

#[derive(Debug, Default, Clone)]
pub struct FuzzStats {
    pub sequences: usize,
    pub deliveries: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub crashes: usize,
    pub illegal_transitions: usize,
    pub agreed: usize,
    pub agreed_without_dual_signatures: usize,
    pub rejection_codes: BTreeMap<&'static str, usize>,
    pub violations: Vec<String>,
}

struct Cast {
    keys: HashMap<PartyIdentity, KeyPair>,
    public: Vec<PublicKey>,
    config: ProtocolConfig,
    user: KeyPair,
    sp: KeyPair,
    intruder: KeyPair,
}

const REQUIREMENT_SETS: &[&[&str]] = &[
    SCENARIO_FUNCTIONS,
    &["Function.17", "Function.23.3"],
    &["Function.17"],
    &[],
    &["Technique.7.2", "Function.15"],
    &["Risk.1.1.1"],
];

/// Messages from negotiations other than the fuzzed one, between the same
/// parties and with an intruder.
fn foreign_pool(cast: &Cast, clock: &FixedClock) -> Vec<WireDocument> {
    let mut pool = Vec::new();
    for (i, (sp_caps, reqs)) in [(SP_CAPS, SCENARIO_FUNCTIONS), (SP_NO_AUTH_CAPS, SCENARIO_FUNCTIONS), (SP_CAPS, &["Function.17"][..])]
        .into_iter()
        .enumerate()
    {
        let mut u = party(cast.user.clone(), USER_CAPS, &cast.config, clock, 1000 + i as u64);
        let mut s = party(cast.sp.clone(), sp_caps, &cast.config, clock, 2000 + i as u64);
        let p1 = u.initiate(set(ExpressionRole::Requirement, reqs), s.identity()).unwrap();
        pool.extend(exchange(&mut u, &mut s, p1.into_document()));
    }
    let mut u = party(cast.user.clone(), USER_CAPS, &cast.config, clock, 3000);
    let p1 = u.initiate(set(ExpressionRole::Requirement, SCENARIO_FUNCTIONS), cast.sp.identity()).unwrap();
    let id = p1.body.negotiation_id;
    pool.push(p1.into_document());
    pool.push(u.cancel(&id, CancelReason::new("requested", vec![])).unwrap().into_document());

    let mut intruder = party(cast.intruder.clone(), USER_CAPS, &cast.config, clock, 4000);
    let p1 = intruder.initiate(set(ExpressionRole::Requirement, &["Function.17"]), cast.sp.identity()).unwrap();
    pool.push(p1.into_document());
    pool
}

/// Re-sign a modified copy of a message with its claimed sender's key, so
/// that only protocol logic can reject it.
fn forge(cast: &Cast, doc: &WireDocument, rng: &mut ChaCha8Rng, ids: &[ssla::pow::NegotiationId]) -> Option<WireDocument> {
    let message = parse_message(doc).ok()?;
    let other_id = ids[rng.gen_range(0..ids.len())];
    Some(match message {
        Message::Proposal(p) => {
            let mut body = p.body.clone();
            match rng.gen_range(0..5) {
                0 => body.round = body.round.saturating_sub(rng.gen_range(1..3)),
                1 => body.round += rng.gen_range(1..3),
                2 => body.negotiation_id = other_id,
                3 => body.timestamp -= 3600,
                _ => body.nonce = vec![rng.gen(); 16],
            }
            let key = cast.keys.get(&body.sender())?;
            Signed::sign(PROPOSAL, body, key).into_document()
        }
        Message::Confirmation(c) => {
            let mut body = c.body.clone();
            match rng.gen_range(0..3) {
                0 => body.negotiation_id = other_id,
                1 => body.timestamp -= 3600,
                _ => body.nonce = vec![rng.gen(); 16],
            }
            let key = cast.keys.get(&body.confirmer)?;
            Signed::sign(CONFIRMATION, body, key).into_document()
        }
        Message::Cancel(c) => {
            let mut body = c.body.clone();
            match rng.gen_range(0..3) {
                0 => body.negotiation_id = other_id,
                1 => body.round += 1,
                _ => body.nonce = vec![rng.gen(); 16],
            }
            let key = cast.keys.get(&body.sender)?;
            Signed::sign(CANCEL, body, key).into_document()
        }
    })
}

fn corrupt(doc: &WireDocument, rng: &mut ChaCha8Rng) -> Option<WireDocument> {
    let mut bytes = doc.encode();
    let at = rng.gen_range(0..bytes.len());
    bytes[at] ^= 1 << rng.gen_range(0..7);
    WireDocument::decode(&bytes).ok()
}

struct Observed {
    phases: Vec<Phase>,
    record: Option<Vec<u8>>,
}

fn check_party(party: &Party, cast: &Cast, seen: &mut HashMap<ssla::pow::NegotiationId, Observed>, stats: &mut FuzzStats) {
    for n in party.negotiations() {
        let phases = n.phases().to_vec();
        let legal = phases.first() == Some(&Phase::Idle)
            && phases.windows(2).all(|w| Phase::can_transition(w[0], w[1]))
            && phases.last() == Some(&n.phase());
        let previous = seen.get(&n.id());
        let append_only = previous.is_none_or(|o| phases.starts_with(&o.phases));
        if !legal || !append_only {
            stats.illegal_transitions += 1;
            stats.violations.push(format!("phase log {phases:?}"));
        }
        let record = n.record().map(SslaRecord::encode);
        if n.phase() != Phase::Agreed && record.is_some() {
            stats.agreed_without_dual_signatures += 1;
            stats.violations.push("record outside Agreed".into());
        }
        let newly_agreed = n.phase() == Phase::Agreed && previous.is_none_or(|o| o.phases.last() != Some(&Phase::Agreed));
        if newly_agreed {
            stats.agreed += 1;
            let valid = n.record().is_some_and(|r| {
                let parties = [r.initiator, r.responder];
                audit_record(r, &cast.public).is_valid()
                    && r.proposal_signature.signer != r.confirmation_signature.signer
                    && parties.contains(&r.proposal_signature.signer)
                    && parties.contains(&r.confirmation_signature.signer)
                    && parties.contains(&party.identity())
            });
            if !valid {
                stats.agreed_without_dual_signatures += 1;
                stats.violations.push(format!("agreed without dual signatures: {:?}", n.id()));
            }
        }
        if let Some(o) = previous {
            if o.record.is_some() && o.record != record {
                stats.illegal_transitions += 1;
                stats.violations.push("record changed after agreement".into());
            }
        }
        seen.insert(n.id(), Observed { phases, record });
    }
}

/// Run `sequences` randomized deliveries of genuine, duplicated, stale,
/// spliced, forged and corrupted messages to fresh party pairs.
pub fn fuzz(sequences: usize, seed: u64) -> FuzzStats {
    let (user, sp, intruder) = (key("user-ed"), key("sp-ed"), key("intruder"));
    let config = ProtocolConfig {
        pow: PowPolicy::with_bits(4),
        ..ProtocolConfig::default()
    };
    let cast = Cast {
        keys: [&user, &sp, &intruder].iter().map(|k| (k.identity(), (*k).clone())).collect(),
        public: vec![user.public().clone(), sp.public().clone(), intruder.public().clone()],
        config,
        user,
        sp,
        intruder,
    };
    let clock = FixedClock::new(NOW);
    let foreign = foreign_pool(&cast, &clock);
    let foreign_ids: Vec<_> = foreign.iter().filter_map(|d| parse_message(d).ok()).map(|m| m.negotiation_id()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = FuzzStats::default();
    for s in 0..sequences {
        clock.set(NOW);
        let sp_caps = if rng.gen_bool(0.3) { SP_NO_AUTH_CAPS } else { SP_CAPS };
        let reqs = REQUIREMENT_SETS[rng.gen_range(0..REQUIREMENT_SETS.len())];
        let mut parties = [
            party(cast.user.clone(), USER_CAPS, &cast.config, &clock, 10 * s as u64),
            party(cast.sp.clone(), sp_caps, &cast.config, &clock, 10 * s as u64 + 1),
        ];
        let mut seen: [HashMap<_, Observed>; 2] = Default::default();
        let p1 = parties[0]
            .initiate(set(ExpressionRole::Requirement, reqs), cast.sp.identity())
            .unwrap()
            .into_document();
        let mut ids = foreign_ids.clone();
        ids.push(parse_message(&p1).unwrap().negotiation_id());
        let mut pool = vec![p1.clone()];
        let mut last: Option<(usize, WireDocument)> = Some((1, p1));

        for _ in 0..rng.gen_range(1..=14) {
            let (to, doc) = match rng.gen_range(0..10) {
                0..=3 if last.is_some() => last.clone().unwrap(),
                4 | 5 => (rng.gen_range(0..2), pool[rng.gen_range(0..pool.len())].clone()),
                6 => (rng.gen_range(0..2), foreign[rng.gen_range(0..foreign.len())].clone()),
                7 | 8 => {
                    let base = &pool[rng.gen_range(0..pool.len())];
                    match forge(&cast, base, &mut rng, &ids) {
                        Some(d) => (rng.gen_range(0..2), d),
                        None => continue,
                    }
                }
                _ => {
                    let base = &pool[rng.gen_range(0..pool.len())];
                    match corrupt(base, &mut rng) {
                        Some(d) => (rng.gen_range(0..2), d),
                        None => continue,
                    }
                }
            };
            if rng.gen_ratio(1, 20) {
                clock.advance(rng.gen_range(1..2000));
            }
            stats.deliveries += 1;
            let receiver = &mut parties[to];
            match catch_unwind(AssertUnwindSafe(|| receiver.receive(&doc))) {
                Ok(Ok(received)) => {
                    stats.accepted += 1;
                    last = received.reply.map(|r| {
                        pool.push(r.clone());
                        (1 - to, r)
                    });
                }
                Ok(Err(e)) => {
                    stats.rejected += 1;
                    *stats.rejection_codes.entry(e.code()).or_default() += 1;
                }
                Err(_) => {
                    stats.crashes += 1;
                    stats.violations.push(format!("panic on {}", doc.encode_string()));
                }
            }
            check_party(&parties[to], &cast, &mut seen[to], &mut stats);
        }
        stats.sequences += 1;
    }
    stats
}
