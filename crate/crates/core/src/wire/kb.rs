//! KB endpoints and a [`Translator`] backed by a remote KB.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::service::{ErrorBody, Method, Request, Response, Service, NOT_FOUND};
use super::transport::Transport;
use crate::crypto::{KeyPair, PublicKey};
use crate::expression::{Dimension, Oid, SecurityExpression};
use crate::translation::{KnowledgeBase, TranslationError, TranslationResult, Translator};
use crate::wire::document::{b64, Signed, WireDocument, SIGNATURE_FIELD};

pub const TRANSLATION_REQUEST: &str = "translation-request";
pub const TRANSLATION_REPLY: &str = "translation-reply";
pub const DICTIONARY: &str = "dictionary";
pub const TRANSLATE_PATH: &str = "/translate";
pub const DICTIONARIES_PATH: &str = "/dictionaries";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationRequest {
    /// Canonical expression strings; each is answered independently.
    pub expressions: Vec<String>,
    pub goal: Dimension,
    #[serde(with = "b64")]
    pub nonce: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemResult {
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passthrough: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationReply {
    #[serde(with = "b64")]
    pub nonce: Vec<u8>,
    pub goal: Dimension,
    pub results: Vec<ItemResult>,
}

/// Stateless KB endpoints. With a signing key, replies are signed.
pub struct KbService {
    kb: Arc<KnowledgeBase>,
    signer: Option<KeyPair>,
}

impl KbService {
    pub fn new(kb: Arc<KnowledgeBase>) -> Self {
        KbService { kb, signer: None }
    }

    pub fn with_signed_replies(mut self, key: KeyPair) -> Self {
        self.signer = Some(key);
        self
    }

    pub fn translate(&self, request: &TranslationRequest) -> TranslationReply {
        let results = request
            .expressions
            .iter()
            .map(|text| {
                let outcome = text
                    .parse::<SecurityExpression>()
                    .map_err(|e| ErrorBody {
                        code: "malformed".into(),
                        detail: e.to_string(),
                    })
                    .and_then(|expr| {
                        self.kb.translate(&expr, request.goal).map_err(|e| ErrorBody {
                            code: e.code().into(),
                            detail: match e {
                                TranslationError::UnknownOid(oid) => oid.to_string(),
                                other => other.to_string(),
                            },
                        })
                    });
                match outcome {
                    Ok(r) => ItemResult {
                        input: text.clone(),
                        output: Some(r.output.iter().map(ToString::to_string).collect()),
                        passthrough: Some(r.passthrough),
                        error: None,
                    },
                    Err(e) => ItemResult {
                        input: text.clone(),
                        output: None,
                        passthrough: None,
                        error: Some(e),
                    },
                }
            })
            .collect();
        TranslationReply {
            nonce: request.nonce.clone(),
            goal: request.goal,
            results,
        }
    }

    fn reply_document(&self, reply: TranslationReply) -> WireDocument {
        match &self.signer {
            Some(key) => Signed::sign(TRANSLATION_REPLY, reply, key).into_document(),
            None => WireDocument::new(TRANSLATION_REPLY, serde_json::to_value(reply).expect("replies serialize")),
        }
    }
}

impl Service for KbService {
    fn handle(&self, request: &Request) -> Response {
        let path = request.path.trim_end_matches('/');
        match (request.method, path) {
            (Method::Post, TRANSLATE_PATH) => {
                let parsed = WireDocument::decode(&request.body).and_then(|doc| {
                    doc.expect_kind(TRANSLATION_REQUEST)?;
                    doc.body_as::<TranslationRequest>()
                });
                match parsed {
                    Ok(req) => Response::document(200, &self.reply_document(self.translate(&req))),
                    Err(e) => Response::protocol_error(&e.into()),
                }
            }
            (Method::Get, p) => {
                let Some(name) = p.strip_prefix(DICTIONARIES_PATH).and_then(|r| r.strip_prefix('/')) else {
                    return Response::error(NOT_FOUND, format!("no resource at {p}"));
                };
                match name.parse::<Dimension>() {
                    Ok(dim) => Response::document(200, &WireDocument::new(DICTIONARY, self.kb.dictionary(dim).to_json())),
                    Err(_) => Response::error(NOT_FOUND, format!("no dimension `{name}`")),
                }
            }
            _ => Response::error(NOT_FOUND, format!("no resource at {path}")),
        }
    }
}

/// Translation through a KB service. Answers are cached per expression and
/// goal; with a pinned key, unsigned or badly signed replies are refused.
pub struct RemoteKb<T: Transport> {
    transport: T,
    signer: Option<PublicKey>,
    cache: Mutex<HashMap<(String, Dimension), TranslationResult>>,
    counter: Mutex<u64>,
}

impl<T: Transport> RemoteKb<T> {
    pub fn new(transport: T) -> Self {
        RemoteKb {
            transport,
            signer: None,
            cache: Mutex::new(HashMap::new()),
            counter: Mutex::new(0),
        }
    }

    pub fn require_signer(mut self, key: PublicKey) -> Self {
        self.signer = Some(key);
        self
    }

    fn next_nonce(&self) -> Vec<u8> {
        let mut c = self.counter.lock().unwrap_or_else(|p| p.into_inner());
        *c += 1;
        c.to_be_bytes().to_vec()
    }

    pub fn request(&self, expressions: Vec<String>, goal: Dimension) -> Result<TranslationReply, TranslationError> {
        let unavailable = |m: String| TranslationError::Unavailable(m);
        let request = TranslationRequest {
            expressions,
            goal,
            nonce: self.next_nonce(),
        };
        let doc = WireDocument::new(TRANSLATION_REQUEST, serde_json::to_value(&request).expect("requests serialize"));
        let response = self
            .transport
            .request(Request::post(TRANSLATE_PATH, &doc))
            .map_err(|e| unavailable(e.to_string()))?;
        let doc = WireDocument::decode(&response.body).map_err(|e| unavailable(e.to_string()))?;
        if response.status != 200 {
            let detail = doc
                .body_as::<ErrorBody>()
                .map(|e| format!("{}: {}", e.code, e.detail))
                .unwrap_or_else(|_| format!("status {}", response.status));
            return Err(unavailable(detail));
        }
        doc.expect_kind(TRANSLATION_REPLY).map_err(|e| unavailable(e.to_string()))?;
        let reply: TranslationReply = match &self.signer {
            Some(key) => {
                let signed = Signed::<TranslationReply>::from_document(doc, TRANSLATION_REPLY)
                    .map_err(|e| unavailable(e.to_string()))?;
                if !signed.verifies_with(key) {
                    return Err(unavailable("KB reply signature does not verify".into()));
                }
                signed.body
            }
            None => {
                let mut body = doc.body.clone();
                if let Some(map) = body.as_object_mut() {
                    map.remove(SIGNATURE_FIELD);
                }
                serde_json::from_value(body).map_err(|e| unavailable(e.to_string()))?
            }
        };
        if reply.nonce != request.nonce || reply.goal != goal || reply.results.len() != request.expressions.len() {
            return Err(unavailable("KB reply does not answer the request".into()));
        }
        Ok(reply)
    }
}

fn item_to_result(input: &SecurityExpression, item: ItemResult) -> Result<TranslationResult, TranslationError> {
    if let Some(err) = item.error {
        return Err(match (err.code.as_str(), err.detail.parse::<Oid>()) {
            ("unknown-oid", Ok(oid)) => TranslationError::UnknownOid(oid),
            _ => TranslationError::Unavailable(format!("{}: {}", err.code, err.detail)),
        });
    }
    let output = item
        .output
        .unwrap_or_default()
        .iter()
        .map(|s| s.parse())
        .collect::<Result<Vec<SecurityExpression>, _>>()
        .map_err(|e| TranslationError::Unavailable(e.to_string()))?;
    Ok(TranslationResult {
        input: input.clone(),
        output,
        passthrough: item.passthrough.unwrap_or(false),
    })
}

impl<T: Transport> Translator for RemoteKb<T> {
    fn translate(&self, expr: &SecurityExpression, goal: Dimension) -> Result<TranslationResult, TranslationError> {
        let key = (expr.to_string(), goal);
        if let Some(hit) = self.cache.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(hit.clone());
        }
        let mut reply = self.request(vec![key.0.clone()], goal)?;
        let result = item_to_result(expr, reply.results.remove(0))?;
        self.cache
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key, result.clone());
        Ok(result)
    }
}
