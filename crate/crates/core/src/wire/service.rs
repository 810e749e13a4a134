//! Resource-oriented request handling, independent of the transport.
//!
//! | method | path                       | body                      | success |
//! |--------|----------------------------|---------------------------|---------|
//! | POST   | `/translate`               | `translation-request`     | 200     |
//! | GET    | `/dictionaries/<dimension>`| none                      | 200     |
//! | POST   | `/negotiations`            | round-1 `ssla-proposal`   | 201     |
//! | POST   | `/negotiations/<id>`       | any negotiation message   | 200     |
//! | GET    | `/negotiations/<id>`       | none                      | 200     |
//!
//! Failures return an `error` document `{code, detail}`; see [`http_status`].

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::pow::NegotiationId;
use crate::protocol::{parse_message, Message, Party, Phase, ProtocolError, ERROR_CODES};
use crate::wire::document::WireDocument;

pub const ERROR: &str = "error";
pub const STATUS: &str = "negotiation-status";
pub const NOT_FOUND: &str = "not-found";
pub const NEGOTIATIONS: &str = "/negotiations";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub method: Method,
    pub path: String,
    pub body: Vec<u8>,
}

impl Request {
    pub fn get(path: &str) -> Self {
        Request {
            method: Method::Get,
            path: path.to_owned(),
            body: Vec::new(),
        }
    }

    pub fn post(path: &str, doc: &WireDocument) -> Self {
        Request {
            method: Method::Post,
            path: path.to_owned(),
            body: doc.encode(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub body: Vec<u8>,
    pub location: Option<String>,
}

impl Response {
    pub fn document(status: u16, doc: &WireDocument) -> Self {
        Response {
            status,
            body: doc.encode(),
            location: None,
        }
    }

    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        let body = ErrorBody {
            code: code.to_owned(),
            detail: detail.into(),
        };
        Response::document(
            http_status(code),
            &WireDocument::new(ERROR, serde_json::to_value(body).expect("error bodies serialize")),
        )
    }

    pub fn protocol_error(e: &ProtocolError) -> Self {
        Response::error(e.code(), e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub detail: String,
}

/// HTTP status for each registered error code.
pub fn http_status(code: &str) -> u16 {
    match code {
        "invalid-signature" => 401,
        "invalid-pow" => 403,
        "unknown-negotiation" | NOT_FOUND => 404,
        "replayed-nonce" | "state-violation" => 409,
        "kb-unavailable" => 503,
        _ => 400,
    }
}

/// Every code a service can answer with.
pub fn error_codes() -> Vec<&'static str> {
    let mut codes = ERROR_CODES.to_vec();
    codes.push(NOT_FOUND);
    codes
}

pub trait Service: Send + Sync {
    fn handle(&self, request: &Request) -> Response;
}

pub fn negotiation_path(id: &NegotiationId) -> String {
    format!("{NEGOTIATIONS}/{}", id.hex())
}

/// A party answering negotiation messages. Requests are serialized through
/// one lock, so each negotiation has a single writer.
pub struct NegotiationService {
    party: Mutex<Party>,
}

impl NegotiationService {
    pub fn new(party: Party) -> Self {
        NegotiationService {
            party: Mutex::new(party),
        }
    }

    pub fn with_party<R>(&self, f: impl FnOnce(&mut Party) -> R) -> R {
        let mut guard = self.party.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    }

    fn status(party: &Party, id: &NegotiationId) -> WireDocument {
        let n = party.negotiation(id).expect("caller checked");
        WireDocument::new(
            STATUS,
            json!({
                "negotiation_id": id.hex(),
                "phase": n.phase(),
                "round": n.round(),
            }),
        )
    }

    fn create(&self, body: &[u8]) -> Response {
        let doc = match WireDocument::decode(body) {
            Ok(d) => d,
            Err(e) => return Response::protocol_error(&e.into()),
        };
        match parse_message(&doc) {
            Ok(Message::Proposal(p)) if p.body.round == 1 => {}
            Ok(_) => {
                return Response::protocol_error(&ProtocolError::Misaddressed(
                    "only round-1 proposals create negotiations".into(),
                ))
            }
            Err(e) => return Response::protocol_error(&e),
        }
        self.with_party(|party| match party.receive(&doc) {
            Ok(received) => {
                let reply = received.reply.expect("proposals always get a reply");
                let mut response = Response::document(201, &reply);
                response.location = Some(negotiation_path(&received.negotiation_id));
                response
            }
            Err(e) => Response::protocol_error(&e),
        })
    }

    fn post(&self, id: &NegotiationId, body: &[u8]) -> Response {
        let doc = match WireDocument::decode(body) {
            Ok(d) => d,
            Err(e) => return Response::protocol_error(&e.into()),
        };
        let message = match parse_message(&doc) {
            Ok(m) => m,
            Err(e) => return Response::protocol_error(&e),
        };
        if message.negotiation_id() != *id {
            return Response::protocol_error(&ProtocolError::Misaddressed(
                "message negotiation id differs from the resource".into(),
            ));
        }
        self.with_party(|party| {
            if party.negotiation(id).is_none() {
                return Response::protocol_error(&ProtocolError::UnknownNegotiation(*id));
            }
            match party.receive(&doc) {
                Ok(received) => match received.reply {
                    Some(reply) => Response::document(200, &reply),
                    None => Response::document(200, &Self::status(party, id)),
                },
                Err(e) => Response::protocol_error(&e),
            }
        })
    }

    fn get(&self, id: &NegotiationId) -> Response {
        self.with_party(|party| match party.negotiation(id) {
            None => Response::protocol_error(&ProtocolError::UnknownNegotiation(*id)),
            Some(n) => match (n.phase(), n.record()) {
                (Phase::Agreed, Some(record)) => Response::document(200, &record.to_document()),
                _ => Response::document(200, &Self::status(party, id)),
            },
        })
    }
}

impl Service for NegotiationService {
    fn handle(&self, request: &Request) -> Response {
        let path = request.path.trim_end_matches('/');
        if path == NEGOTIATIONS {
            return match request.method {
                Method::Post => self.create(&request.body),
                Method::Get => Response::error(NOT_FOUND, "listing negotiations is not supported"),
            };
        }
        let Some(hex) = path.strip_prefix(NEGOTIATIONS).and_then(|r| r.strip_prefix('/')) else {
            return Response::error(NOT_FOUND, format!("no resource at {path}"));
        };
        let Ok(id) = NegotiationId::from_hex(hex) else {
            return Response::error(NOT_FOUND, format!("`{hex}` is not a negotiation id"));
        };
        match request.method {
            Method::Post => self.post(&id, &request.body),
            Method::Get => self.get(&id),
        }
    }
}
