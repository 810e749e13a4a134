//! Client side of the negotiation resource.

use thiserror::Error;

use super::service::{negotiation_path, ErrorBody, Request, ERROR, NEGOTIATIONS};
use super::transport::{Transport, TransportError};
use crate::pow::NegotiationId;
use crate::wire::document::{DocumentError, WireDocument};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("peer rejected the message ({status} {code}): {detail}")]
    Rejected { status: u16, code: String, detail: String },
    #[error("unreadable reply: {0}")]
    Malformed(#[from] DocumentError),
}

pub struct NegotiationClient<T: Transport> {
    transport: T,
}

impl<T: Transport> NegotiationClient<T> {
    pub fn new(transport: T) -> Self {
        NegotiationClient { transport }
    }

    fn exchange(&self, request: Request, expected: u16) -> Result<(WireDocument, Option<String>), ClientError> {
        let response = self.transport.request(request)?;
        let doc = WireDocument::decode(&response.body)?;
        if response.status != expected {
            let (code, detail) = match (doc.kind.as_str(), doc.body_as::<ErrorBody>()) {
                (ERROR, Ok(e)) => (e.code, e.detail),
                _ => (String::from("unexpected"), doc.encode_string()),
            };
            return Err(ClientError::Rejected {
                status: response.status,
                code,
                detail,
            });
        }
        Ok((doc, response.location))
    }

    /// Post a round-1 proposal; returns the reply and the created resource path.
    pub fn open(&self, proposal: &WireDocument) -> Result<(WireDocument, String), ClientError> {
        let (doc, location) = self.exchange(Request::post(NEGOTIATIONS, proposal), 201)?;
        let location = location.unwrap_or_default();
        Ok((doc, location))
    }

    pub fn send(&self, id: &NegotiationId, message: &WireDocument) -> Result<WireDocument, ClientError> {
        Ok(self.exchange(Request::post(&negotiation_path(id), message), 200)?.0)
    }

    /// The stored record once agreed, otherwise a status document.
    pub fn fetch(&self, id: &NegotiationId) -> Result<WireDocument, ClientError> {
        Ok(self.exchange(Request::get(&negotiation_path(id)), 200)?.0)
    }
}
