//! Document encoding, services and transports.

pub mod client;
pub mod document;
pub mod kb;
pub mod service;
pub mod transport;

pub use client::{ClientError, NegotiationClient};
pub use document::{DocumentError, Signed, WireDocument};
pub use kb::{KbService, RemoteKb};
pub use service::{NegotiationService, Request, Response, Service};
pub use transport::{HttpClient, HttpServer, Loopback, Transport, TransportError};
