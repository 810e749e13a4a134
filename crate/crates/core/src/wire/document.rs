//! The document envelope shared by every message, reply and stored record.
//!
//! A document is a JSON object `{"type", "version", "body"}`. Its canonical
//! encoding has lexicographically sorted keys and no whitespace. Signed
//! documents carry `body.signature`, computed over the canonical encoding of
//! the document with that one key removed.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::crypto::{canonical_bytes, sign, verify, KeyPair, PublicKey, Signature};

pub const WIRE_VERSION: &str = "1";
pub const SIGNATURE_FIELD: &str = "signature";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DocumentError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unsupported document version `{0}`")]
    UnsupportedVersion(String),
    #[error("expected a `{expected}` document, found `{found}`")]
    WrongType { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireDocument {
    #[serde(rename = "type")]
    pub kind: String,
    pub version: String,
    pub body: Value,
}

impl WireDocument {
    pub fn new(kind: &str, body: Value) -> Self {
        WireDocument {
            kind: kind.to_owned(),
            version: WIRE_VERSION.to_owned(),
            body,
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("documents always serialize")
    }

    /// Canonical encoding.
    pub fn encode(&self) -> Vec<u8> {
        canonical_bytes(&self.to_value())
    }

    pub fn encode_string(&self) -> String {
        String::from_utf8(self.encode()).expect("JSON is UTF-8")
    }

    /// Parse any JSON rendering of a document. Unknown versions are errors.
    pub fn decode(bytes: &[u8]) -> Result<Self, DocumentError> {
        let value: Value =
            serde_json::from_slice(bytes).map_err(|e| DocumentError::Malformed(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, DocumentError> {
        let doc: WireDocument =
            serde_json::from_value(value).map_err(|e| DocumentError::Malformed(e.to_string()))?;
        if doc.version != WIRE_VERSION {
            return Err(DocumentError::UnsupportedVersion(doc.version));
        }
        if !doc.body.is_object() {
            return Err(DocumentError::Malformed("body must be an object".into()));
        }
        Ok(doc)
    }

    /// Parse bytes that must already be in canonical form.
    pub fn decode_canonical(bytes: &[u8]) -> Result<Self, DocumentError> {
        let doc = Self::decode(bytes)?;
        if doc.encode() != bytes {
            return Err(DocumentError::Malformed("document is not in canonical form".into()));
        }
        Ok(doc)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), DocumentError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(DocumentError::WrongType {
                expected: kind.to_owned(),
                found: self.kind.clone(),
            })
        }
    }

    /// Typed view of the body. The body must be exactly what `B` serializes
    /// back to, so every accepted document has a single meaning.
    pub fn body_as<B: Serialize + DeserializeOwned>(&self) -> Result<B, DocumentError> {
        typed_body(self.body.clone())
    }

    /// Bytes covered by `body.signature`.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut body = self.body.as_object().cloned().unwrap_or_default();
        body.remove(SIGNATURE_FIELD);
        signing_bytes_of(&self.kind, &self.version, body)
    }

    pub fn signature(&self) -> Result<Signature, DocumentError> {
        let value = self
            .body
            .get(SIGNATURE_FIELD)
            .ok_or_else(|| DocumentError::Malformed("missing signature".into()))?;
        serde_json::from_value(value.clone()).map_err(|e| DocumentError::Malformed(e.to_string()))
    }
}

fn signing_bytes_of(kind: &str, version: &str, body: Map<String, Value>) -> Vec<u8> {
    let mut doc = Map::new();
    doc.insert("type".into(), Value::String(kind.to_owned()));
    doc.insert("version".into(), Value::String(version.to_owned()));
    doc.insert("body".into(), Value::Object(body));
    canonical_bytes(&Value::Object(doc))
}

fn typed_body<B: Serialize + DeserializeOwned>(value: Value) -> Result<B, DocumentError> {
    let typed: B =
        serde_json::from_value(value.clone()).map_err(|e| DocumentError::Malformed(e.to_string()))?;
    let back = serde_json::to_value(&typed).map_err(|e| DocumentError::Malformed(e.to_string()))?;
    if canonical_bytes(&back) != canonical_bytes(&value) {
        return Err(DocumentError::Malformed("body is not in canonical form".into()));
    }
    Ok(typed)
}

/// A typed body together with its signature and the exact document it came
/// from. Verification always runs over the document, never a re-encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Signed<B> {
    pub body: B,
    pub signature: Signature,
    document: WireDocument,
}

impl<B: Serialize + DeserializeOwned> Signed<B> {
    pub fn sign(kind: &str, body: B, key: &KeyPair) -> Self {
        let fields = match serde_json::to_value(&body).expect("bodies always serialize") {
            Value::Object(map) => map,
            _ => panic!("signed bodies must serialize to objects"),
        };
        let signature = sign(&signing_bytes_of(kind, WIRE_VERSION, fields.clone()), key);
        let mut with_sig = fields;
        with_sig.insert(
            SIGNATURE_FIELD.into(),
            serde_json::to_value(&signature).expect("signatures serialize"),
        );
        Signed {
            body,
            signature,
            document: WireDocument::new(kind, Value::Object(with_sig)),
        }
    }

    pub fn from_document(document: WireDocument, kind: &str) -> Result<Self, DocumentError> {
        document.expect_kind(kind)?;
        if document.version != WIRE_VERSION {
            return Err(DocumentError::UnsupportedVersion(document.version));
        }
        let mut fields = match &document.body {
            Value::Object(map) => map.clone(),
            _ => return Err(DocumentError::Malformed("body must be an object".into())),
        };
        let signature = fields
            .remove(SIGNATURE_FIELD)
            .ok_or_else(|| DocumentError::Malformed("missing signature".into()))?;
        let signature: Signature = serde_json::from_value(signature.clone())
            .map_err(|e| DocumentError::Malformed(format!("signature: {e}")))?;
        let body = typed_body(Value::Object(fields))?;
        Ok(Signed {
            body,
            signature,
            document,
        })
    }
}

impl<B> Signed<B> {
    pub fn document(&self) -> &WireDocument {
        &self.document
    }

    pub fn into_document(self) -> WireDocument {
        self.document
    }

    /// False for a bad signature and for algorithms this build cannot check.
    pub fn verifies_with(&self, key: &PublicKey) -> bool {
        verify(&self.document.signing_bytes(), &self.signature, key).unwrap_or(false)
    }
}

/// Standard-alphabet base64 for byte fields; decoding rejects non-canonical
/// padding and trailing bits.
pub mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}
