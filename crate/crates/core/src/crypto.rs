//! Keys, party identities and signatures over canonical JSON.
//!
//! Public keys are encoded as DER `SubjectPublicKeyInfo`. A party identity is
//! the SHA-256 digest of that encoding, so any verifier holding the key can
//! recompute it. Signed bytes are the canonical form of a JSON value: object
//! keys sorted by byte order, no insignificant whitespace, UTF-8.
//!
//! | algorithm id           | scheme                              |
//! |------------------------|-------------------------------------|
//! | `rsa-pkcs1v15-sha256`  | RSASSA-PKCS1-v1_5, SHA-256, ≥ 2048 bits |
//! | `ed25519`              | Ed25519 (RFC 8032)                  |

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{CryptoRng, RngCore};
use rsa::pkcs1v15;
use rsa::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey, LineEnding};
use rsa::signature::{SignatureEncoding, Signer, Verifier};
use rsa::traits::PublicKeyParts;
use rsa::{RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const RSA_MIN_BITS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("malformed key: {0}")]
    MalformedKey(String),
    #[error("unsupported signature algorithm `{0}`")]
    UnsupportedAlgorithm(String),
    #[error("RSA key of {0} bits is below the {RSA_MIN_BITS}-bit minimum")]
    WeakKey(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignatureAlgorithm {
    RsaPkcs1Sha256,
    Ed25519,
}

impl SignatureAlgorithm {
    pub fn id(self) -> &'static str {
        match self {
            SignatureAlgorithm::RsaPkcs1Sha256 => "rsa-pkcs1v15-sha256",
            SignatureAlgorithm::Ed25519 => "ed25519",
        }
    }

    pub fn from_id(id: &str) -> Result<Self, CryptoError> {
        match id {
            "rsa-pkcs1v15-sha256" => Ok(SignatureAlgorithm::RsaPkcs1Sha256),
            "ed25519" => Ok(SignatureAlgorithm::Ed25519),
            other => Err(CryptoError::UnsupportedAlgorithm(other.to_owned())),
        }
    }
}

/// Canonical bytes of a JSON value.
pub fn canonical_bytes(value: &Value) -> Vec<u8> {
    serde_json::to_vec(&sorted(value)).expect("JSON values always serialize")
}

fn sorted(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k.clone(), sorted(v))).collect())
        }
        Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
        other => other.clone(),
    }
}

#[derive(Clone, PartialEq, Eq)]
pub enum PublicKey {
    Rsa(RsaPublicKey),
    Ed25519(ed25519_dalek::VerifyingKey),
}

impl PublicKey {
    pub fn algorithm(&self) -> SignatureAlgorithm {
        match self {
            PublicKey::Rsa(_) => SignatureAlgorithm::RsaPkcs1Sha256,
            PublicKey::Ed25519(_) => SignatureAlgorithm::Ed25519,
        }
    }

    /// DER `SubjectPublicKeyInfo`; the input to identity derivation.
    pub fn spki_der(&self) -> Vec<u8> {
        match self {
            PublicKey::Rsa(k) => k.to_public_key_der().expect("RSA key encodes").as_bytes().to_vec(),
            PublicKey::Ed25519(k) => k.to_public_key_der().expect("Ed25519 key encodes").as_bytes().to_vec(),
        }
    }

    pub fn from_spki_der(der: &[u8]) -> Result<Self, CryptoError> {
        if let Ok(k) = RsaPublicKey::from_public_key_der(der) {
            check_rsa_size(&k)?;
            return Ok(PublicKey::Rsa(k));
        }
        ed25519_dalek::VerifyingKey::from_public_key_der(der)
            .map(PublicKey::Ed25519)
            .map_err(|e| CryptoError::MalformedKey(e.to_string()))
    }

    pub fn from_pem(pem: &str) -> Result<Self, CryptoError> {
        if let Ok(k) = RsaPublicKey::from_public_key_pem(pem) {
            check_rsa_size(&k)?;
            return Ok(PublicKey::Rsa(k));
        }
        ed25519_dalek::VerifyingKey::from_public_key_pem(pem)
            .map(PublicKey::Ed25519)
            .map_err(|e| CryptoError::MalformedKey(e.to_string()))
    }

    pub fn to_pem(&self) -> String {
        match self {
            PublicKey::Rsa(k) => k.to_public_key_pem(LineEnding::LF).expect("RSA key encodes"),
            PublicKey::Ed25519(k) => {
                ed25519_dalek::pkcs8::EncodePublicKey::to_public_key_pem(k, LineEnding::LF)
                    .expect("Ed25519 key encodes")
            }
        }
    }

    pub fn identity(&self) -> PartyIdentity {
        derive_identity(self)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}, {})", self.algorithm().id(), self.identity())
    }
}

fn check_rsa_size(k: &RsaPublicKey) -> Result<(), CryptoError> {
    let bits = k.n().bits();
    if bits < RSA_MIN_BITS {
        return Err(CryptoError::WeakKey(bits));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PublicKeyDoc {
    alg: String,
    spki: String,
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PublicKeyDoc {
            alg: self.algorithm().id().to_owned(),
            spki: B64.encode(self.spki_der()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = PublicKeyDoc::deserialize(d)?;
        let alg = SignatureAlgorithm::from_id(&doc.alg).map_err(serde::de::Error::custom)?;
        let der = B64.decode(&doc.spki).map_err(serde::de::Error::custom)?;
        let key = PublicKey::from_spki_der(&der).map_err(serde::de::Error::custom)?;
        if key.algorithm() != alg {
            return Err(serde::de::Error::custom("key does not match its algorithm id"));
        }
        Ok(key)
    }
}

/// A signing key. Never printed.
#[derive(Clone)]
pub struct KeyPair {
    inner: KeyInner,
    public: PublicKey,
}

#[derive(Clone)]
enum KeyInner {
    Rsa(pkcs1v15::SigningKey<Sha256>),
    Ed25519(ed25519_dalek::SigningKey),
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({:?}, <secret>)", self.public)
    }
}

impl KeyPair {
    /// Load a PKCS#8 PEM private key (RSA or Ed25519).
    pub fn from_pkcs8_pem(pem: &str) -> Result<Self, CryptoError> {
        if let Ok(k) = RsaPrivateKey::from_pkcs8_pem(pem) {
            return KeyPair::from_rsa(k);
        }
        ed25519_dalek::SigningKey::from_pkcs8_pem(pem)
            .map(KeyPair::from_ed25519)
            .map_err(|e| CryptoError::MalformedKey(e.to_string()))
    }

    pub fn from_rsa(key: RsaPrivateKey) -> Result<Self, CryptoError> {
        let public = key.to_public_key();
        check_rsa_size(&public)?;
        Ok(KeyPair {
            inner: KeyInner::Rsa(pkcs1v15::SigningKey::new(key)),
            public: PublicKey::Rsa(public),
        })
    }

    pub fn from_ed25519(key: ed25519_dalek::SigningKey) -> Self {
        let public = PublicKey::Ed25519(key.verifying_key());
        KeyPair {
            inner: KeyInner::Ed25519(key),
            public,
        }
    }

    pub fn generate<R: RngCore + CryptoRng>(alg: SignatureAlgorithm, rng: &mut R) -> Result<Self, CryptoError> {
        match alg {
            SignatureAlgorithm::RsaPkcs1Sha256 => {
                let key = RsaPrivateKey::new(rng, RSA_MIN_BITS)
                    .map_err(|e| CryptoError::MalformedKey(e.to_string()))?;
                KeyPair::from_rsa(key)
            }
            SignatureAlgorithm::Ed25519 => Ok(KeyPair::from_ed25519(ed25519_dalek::SigningKey::generate(rng))),
        }
    }

    pub fn to_pkcs8_pem(&self) -> String {
        match &self.inner {
            KeyInner::Rsa(k) => k.as_ref().to_pkcs8_pem(LineEnding::LF).expect("RSA key encodes").to_string(),
            KeyInner::Ed25519(k) => ed25519_dalek::pkcs8::EncodePrivateKey::to_pkcs8_pem(k, LineEnding::LF)
                .expect("Ed25519 key encodes")
                .to_string(),
        }
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn identity(&self) -> PartyIdentity {
        self.public.identity()
    }

    pub fn algorithm(&self) -> SignatureAlgorithm {
        self.public.algorithm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentityBinding {
    PublicKeyHash,
    /// Digest of a certificate; accepted on input, never produced.
    Certificate,
}

/// A party's identity, bound to its public key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartyIdentity {
    pub binding: IdentityBinding,
    pub id: [u8; 32],
}

impl PartyIdentity {
    pub fn hex(&self) -> String {
        hex::encode(self.id)
    }

    /// Whether `key` is the key this identity was derived from.
    pub fn matches(&self, key: &PublicKey) -> bool {
        self.binding == IdentityBinding::PublicKeyHash && derive_identity(key) == *self
    }
}

impl fmt::Display for PartyIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentityDoc {
    binding: IdentityBinding,
    id: String,
}

impl Serialize for PartyIdentity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        IdentityDoc {
            binding: self.binding,
            id: self.hex(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PartyIdentity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = IdentityDoc::deserialize(d)?;
        let id = decode_hex32(&doc.id).map_err(serde::de::Error::custom)?;
        Ok(PartyIdentity {
            binding: doc.binding,
            id,
        })
    }
}

/// Strict lowercase-hex decoding of a 32-byte digest.
pub fn decode_hex32(text: &str) -> Result<[u8; 32], String> {
    if text.len() != 64 || text.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(format!("`{text}` is not 64 lowercase hex digits"));
    }
    let mut out = [0u8; 32];
    hex::decode_to_slice(text, &mut out).map_err(|e| e.to_string())?;
    Ok(out)
}

pub fn derive_identity(key: &PublicKey) -> PartyIdentity {
    PartyIdentity {
        binding: IdentityBinding::PublicKeyHash,
        id: Sha256::digest(key.spki_der()).into(),
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Signature {
    pub alg: String,
    pub value: Vec<u8>,
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}, {} bytes)", self.alg, self.value.len())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignatureDoc {
    alg: String,
    value: String,
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        SignatureDoc {
            alg: self.alg.clone(),
            value: B64.encode(&self.value),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = SignatureDoc::deserialize(d)?;
        Ok(Signature {
            alg: doc.alg,
            value: B64.decode(&doc.value).map_err(serde::de::Error::custom)?,
        })
    }
}

pub fn sign(body: &[u8], key: &KeyPair) -> Signature {
    let value = match &key.inner {
        KeyInner::Rsa(k) => k.sign(body).to_vec(),
        KeyInner::Ed25519(k) => ed25519_dalek::Signer::sign(k, body).to_bytes().to_vec(),
    };
    Signature {
        alg: key.algorithm().id().to_owned(),
        value,
    }
}

/// Check `sig` over `body`. Unknown algorithms and algorithm/key mismatches
/// are reported as errors; a bad signature is `Ok(false)`.
pub fn verify(body: &[u8], sig: &Signature, key: &PublicKey) -> Result<bool, CryptoError> {
    let alg = SignatureAlgorithm::from_id(&sig.alg)?;
    if alg != key.algorithm() {
        return Ok(false);
    }
    Ok(match key {
        PublicKey::Rsa(k) => pkcs1v15::Signature::try_from(sig.value.as_slice())
            .map(|s| pkcs1v15::VerifyingKey::<Sha256>::new(k.clone()).verify(body, &s).is_ok())
            .unwrap_or(false),
        PublicKey::Ed25519(k) => ed25519_dalek::Signature::from_slice(&sig.value)
            .map(|s| k.verify_strict(body, &s).is_ok())
            .unwrap_or(false),
    })
}
