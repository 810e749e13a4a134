//! Hashcash v1 proof-of-work stamps.
//!
//! Stamp string: `1:bits:date:resource:ext:rand:counter`, valid when its
//! SHA-1 digest starts with at least `bits` zero bits. `date` is UTC
//! `YYMMDDhhmmss` when minted here; `YYMMDD` and `YYMMDDhhmm` are accepted.
//!
//! The extension field carries the negotiation metadata as
//! `init=<id>;resp=<id>;nonce=<nonce>`, each value unpadded base64url.
//! The negotiation ID is the SHA-256 digest of the full stamp string.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use base64::engine::general_purpose::URL_SAFE_NO_PAD as B64URL;
use base64::Engine;
use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha1::Sha1;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::decode_hex32;

pub const DEFAULT_BITS: u32 = 12;
pub const DEFAULT_MAX_STAMP_AGE: Duration = Duration::from_secs(600);
pub const DEFAULT_CLOCK_SKEW: Duration = Duration::from_secs(120);

thread_local! {
    static STAMP_HASHES: Cell<u64> = const { Cell::new(0) };
}

/// Number of stamp digests computed on this thread so far.
pub fn stamp_hash_count() -> u64 {
    STAMP_HASHES.with(Cell::get)
}

fn stamp_digest(text: &str) -> [u8; 20] {
    STAMP_HASHES.with(|c| c.set(c.get() + 1));
    Sha1::digest(text.as_bytes()).into()
}

pub fn leading_zero_bits(digest: &[u8]) -> u32 {
    let mut bits = 0;
    for byte in digest {
        if *byte == 0 {
            bits += 8;
        } else {
            bits += byte.leading_zeros();
            break;
        }
    }
    bits
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PowPolicy {
    pub required_bits: u32,
    pub max_stamp_age: Duration,
    pub clock_skew: Duration,
}

impl Default for PowPolicy {
    fn default() -> Self {
        PowPolicy {
            required_bits: DEFAULT_BITS,
            max_stamp_age: DEFAULT_MAX_STAMP_AGE,
            clock_skew: DEFAULT_CLOCK_SKEW,
        }
    }
}

impl PowPolicy {
    pub fn with_bits(bits: u32) -> Self {
        PowPolicy {
            required_bits: bits,
            ..PowPolicy::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PowRejection {
    #[error("malformed stamp: {0}")]
    Malformed(String),
    #[error("unsupported stamp version {0}")]
    UnsupportedVersion(String),
    #[error("stamp claims {claimed} bits, policy requires {required}")]
    InsufficientBits { claimed: u32, required: u32 },
    #[error("stamp is for resource `{found}`, expected `{expected}`")]
    ResourceMismatch { expected: String, found: String },
    #[error("stamp date is outside the freshness window")]
    Stale,
    #[error("stamp was already spent")]
    Replayed,
    #[error("stamp digest does not have the claimed leading zero bits")]
    DifficultyNotMet,
}

impl PowRejection {
    pub fn code(&self) -> &'static str {
        match self {
            PowRejection::Malformed(_) => "stamp-malformed",
            PowRejection::UnsupportedVersion(_) => "stamp-version",
            PowRejection::InsufficientBits { .. } => "stamp-bits",
            PowRejection::ResourceMismatch { .. } => "stamp-resource",
            PowRejection::Stale => "stamp-stale",
            PowRejection::Replayed => "stamp-replayed",
            PowRejection::DifficultyNotMet => "stamp-difficulty",
        }
    }
}

/// Negotiation metadata carried in the stamp's extension field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StampExtension {
    pub initiator: Vec<u8>,
    pub responder: Vec<u8>,
    pub nonce: Vec<u8>,
}

impl StampExtension {
    pub fn encode(&self) -> String {
        format!(
            "init={};resp={};nonce={}",
            B64URL.encode(&self.initiator),
            B64URL.encode(&self.responder),
            B64URL.encode(&self.nonce)
        )
    }

    pub fn decode(text: &str) -> Result<Self, PowRejection> {
        let bad = || PowRejection::Malformed(format!("extension `{text}`"));
        let mut values = Vec::with_capacity(3);
        let mut fields = text.split(';');
        for key in ["init", "resp", "nonce"] {
            let field = fields.next().ok_or_else(bad)?;
            let value = field
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(bad)?;
            values.push(B64URL.decode(value).map_err(|_| bad())?);
        }
        if fields.next().is_some() {
            return Err(bad());
        }
        let nonce = values.pop().unwrap();
        let responder = values.pop().unwrap();
        let initiator = values.pop().unwrap();
        Ok(StampExtension {
            initiator,
            responder,
            nonce,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashcashStamp {
    bits: u32,
    date: String,
    resource: String,
    ext: String,
    rand: String,
    counter: String,
}

impl HashcashStamp {
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn date(&self) -> &str {
        &self.date
    }

    pub fn resource(&self) -> &str {
        &self.resource
    }

    pub fn raw_extension(&self) -> &str {
        &self.ext
    }

    pub fn extension(&self) -> Result<StampExtension, PowRejection> {
        StampExtension::decode(&self.ext)
    }

    /// Stamp date as Unix seconds.
    pub fn timestamp(&self) -> Result<i64, PowRejection> {
        parse_stamp_date(&self.date)
    }

    /// One digest: does the stamp meet the difficulty it claims?
    pub fn meets_claimed_bits(&self) -> bool {
        leading_zero_bits(&stamp_digest(&self.to_string())) >= self.bits
    }
}

impl fmt::Display for HashcashStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "1:{}:{}:{}:{}:{}:{}",
            self.bits, self.date, self.resource, self.ext, self.rand, self.counter
        )
    }
}

impl FromStr for HashcashStamp {
    type Err = PowRejection;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = text.split(':').collect();
        if fields.len() != 7 {
            return Err(PowRejection::Malformed(format!("expected 7 fields, found {}", fields.len())));
        }
        if fields[0] != "1" {
            return Err(PowRejection::UnsupportedVersion(fields[0].to_owned()));
        }
        let canonical_number = !fields[1].is_empty()
            && fields[1].bytes().all(|b| b.is_ascii_digit())
            && (fields[1] == "0" || !fields[1].starts_with('0'));
        let bits: u32 = fields[1]
            .parse()
            .ok()
            .filter(|b| canonical_number && *b <= 160)
            .ok_or_else(|| PowRejection::Malformed(format!("bits `{}`", fields[1])))?;
        parse_stamp_date(fields[2])?;
        let base64ish = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'+' || b == b'/' || b == b'=');
        if !base64ish(fields[5]) || !base64ish(fields[6]) {
            return Err(PowRejection::Malformed("rand and counter must be base64 characters".into()));
        }
        Ok(HashcashStamp {
            bits,
            date: fields[2].to_owned(),
            resource: fields[3].to_owned(),
            ext: fields[4].to_owned(),
            rand: fields[5].to_owned(),
            counter: fields[6].to_owned(),
        })
    }
}

impl Serialize for HashcashStamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HashcashStamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn parse_stamp_date(date: &str) -> Result<i64, PowRejection> {
    let bad = || PowRejection::Malformed(format!("date `{date}`"));
    if !date.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let parsed = match date.len() {
        6 => NaiveDate::parse_from_str(date, "%y%m%d").map(|d| d.and_hms_opt(0, 0, 0).unwrap()),
        10 => NaiveDateTime::parse_from_str(date, "%y%m%d%H%M"),
        12 => NaiveDateTime::parse_from_str(date, "%y%m%d%H%M%S"),
        _ => return Err(bad()),
    }
    .map_err(|_| bad())?;
    Ok(parsed.and_utc().timestamp())
}

pub fn format_stamp_date(unix_seconds: i64) -> String {
    DateTime::<Utc>::from_timestamp(unix_seconds, 0)
        .expect("timestamp in range")
        .format("%y%m%d%H%M%S")
        .to_string()
}

#[derive(Debug, Clone)]
pub struct Minted {
    pub stamp: HashcashStamp,
    /// Counter values tried, including the winning one.
    pub attempts: u64,
}

/// Search counters from zero until the stamp meets `policy.required_bits`.
pub fn mint<R: RngCore + ?Sized>(
    resource: &str,
    extension: &StampExtension,
    policy: &PowPolicy,
    now: i64,
    rng: &mut R,
) -> Minted {
    let mut rand_bytes = [0u8; 12];
    rng.fill_bytes(&mut rand_bytes);
    let mut stamp = HashcashStamp {
        bits: policy.required_bits,
        date: format_stamp_date(now),
        resource: resource.to_owned(),
        ext: extension.encode(),
        rand: base64::engine::general_purpose::STANDARD.encode(rand_bytes),
        counter: String::new(),
    };
    let prefix = format!(
        "1:{}:{}:{}:{}:{}:",
        stamp.bits, stamp.date, stamp.resource, stamp.ext, stamp.rand
    );
    let mut counter: u64 = 0;
    loop {
        let candidate = format!("{prefix}{counter:x}");
        if leading_zero_bits(&stamp_digest(&candidate)) >= policy.required_bits {
            stamp.counter = format!("{counter:x}");
            return Minted {
                stamp,
                attempts: counter + 1,
            };
        }
        counter += 1;
    }
}

/// Spent stamps, remembered until they could no longer pass the freshness
/// check. Single writer.
#[derive(Debug, Default, Clone)]
pub struct StampReplaySet {
    spent: HashMap<String, i64>,
}

impl StampReplaySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, stamp: &HashcashStamp) -> bool {
        self.spent.contains_key(&stamp.to_string())
    }

    /// Record a stamp as spent; returns false if it already was.
    pub fn insert(&mut self, stamp: &HashcashStamp) -> bool {
        let date = stamp.timestamp().unwrap_or(i64::MAX);
        self.spent.insert(stamp.to_string(), date).is_none()
    }

    /// Forget stamps dated before `now - max_age - skew`.
    pub fn prune(&mut self, now: i64, policy: &PowPolicy) {
        let horizon = now - (policy.max_stamp_age + policy.clock_skew).as_secs() as i64;
        self.spent.retain(|_, date| *date >= horizon);
    }

    pub fn len(&self) -> usize {
        self.spent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spent.is_empty()
    }
}

/// All acceptance checks without recording the stamp. Performs one digest.
pub fn check(
    stamp: &HashcashStamp,
    expected_resource: &str,
    policy: &PowPolicy,
    now: i64,
    seen: &StampReplaySet,
) -> Result<(), PowRejection> {
    if stamp.bits < policy.required_bits {
        return Err(PowRejection::InsufficientBits {
            claimed: stamp.bits,
            required: policy.required_bits,
        });
    }
    if stamp.resource != expected_resource {
        return Err(PowRejection::ResourceMismatch {
            expected: expected_resource.to_owned(),
            found: stamp.resource.clone(),
        });
    }
    let date = stamp.timestamp()?;
    let age = policy.max_stamp_age.as_secs() as i64;
    let skew = policy.clock_skew.as_secs() as i64;
    if date < now - age - skew || date > now + skew {
        return Err(PowRejection::Stale);
    }
    if seen.contains(stamp) {
        return Err(PowRejection::Replayed);
    }
    if !stamp.meets_claimed_bits() {
        return Err(PowRejection::DifficultyNotMet);
    }
    Ok(())
}

/// [`check`], then mark the stamp spent.
pub fn verify(
    stamp: &HashcashStamp,
    expected_resource: &str,
    policy: &PowPolicy,
    now: i64,
    seen: &mut StampReplaySet,
) -> Result<(), PowRejection> {
    check(stamp, expected_resource, policy, now, seen)?;
    seen.insert(stamp);
    Ok(())
}

/// Fixed-length identifier of one negotiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NegotiationId(pub [u8; 32]);

impl NegotiationId {
    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(text: &str) -> Result<Self, String> {
        decode_hex32(text).map(NegotiationId)
    }
}

impl fmt::Display for NegotiationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

impl Serialize for NegotiationId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.hex())
    }
}

impl<'de> Deserialize<'de> for NegotiationId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        NegotiationId::from_hex(&String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

pub fn negotiation_id_from(stamp: &HashcashStamp) -> NegotiationId {
    NegotiationId(Sha256::digest(stamp.to_string().as_bytes()).into())
}
