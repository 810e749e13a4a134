//! Moving requests to services: in-process loopback or HTTP.

use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use super::service::{Method, Request, Response, Service};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport failure: {0}")]
    Io(String),
}

pub trait Transport: Send + Sync {
    fn request(&self, request: Request) -> Result<Response, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn request(&self, request: Request) -> Result<Response, TransportError> {
        (**self).request(request)
    }
}

/// Calls a service directly. Bodies still cross as bytes, so encoding is
/// exercised exactly as on a network.
#[derive(Clone)]
pub struct Loopback {
    service: Arc<dyn Service>,
}

impl Loopback {
    pub fn new(service: Arc<dyn Service>) -> Self {
        Loopback { service }
    }
}

impl Transport for Loopback {
    fn request(&self, request: Request) -> Result<Response, TransportError> {
        Ok(self.service.handle(&request))
    }
}

/// HTTP/1.1 client for a service rooted at `base` (e.g. `http://127.0.0.1:8080`).
pub struct HttpClient {
    base: String,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(base: &str) -> Self {
        HttpClient {
            base: base.trim_end_matches('/').to_owned(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }
}

impl Transport for HttpClient {
    fn request(&self, request: Request) -> Result<Response, TransportError> {
        let url = format!("{}{}", self.base, request.path);
        let result = match request.method {
            Method::Get => self.agent.get(&url).call(),
            Method::Post => self
                .agent
                .post(&url)
                .set("Content-Type", "application/json")
                .send_bytes(&request.body),
        };
        let response = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => return Err(TransportError::Io(e.to_string())),
        };
        let status = response.status();
        let location = response.header("Location").map(str::to_owned);
        let mut body = Vec::new();
        response
            .into_reader()
            .take(16 << 20)
            .read_to_end(&mut body)
            .map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(Response {
            status,
            body,
            location,
        })
    }
}

const WORKERS: usize = 4;
const MAX_BODY: u64 = 4 << 20;

/// A running HTTP front end for a service.
pub struct HttpServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl HttpServer {
    /// Bind `addr` (port 0 picks a free port) and serve on worker threads.
    pub fn start(addr: &str, service: Arc<dyn Service>) -> Result<Self, TransportError> {
        let server = tiny_http::Server::http(addr).map_err(|e| TransportError::Io(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| TransportError::Io("not an IP listener".into()))?;
        let server = Arc::new(server);
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let service = Arc::clone(&service);
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        respond(&*service, request);
                    }
                })
            })
            .collect();
        Ok(HttpServer {
            server,
            addr,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the server is shut down from another thread.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn respond(service: &dyn Service, mut request: tiny_http::Request) {
    let method = match request.method() {
        tiny_http::Method::Get => Some(Method::Get),
        tiny_http::Method::Post => Some(Method::Post),
        _ => None,
    };
    let mut body = Vec::new();
    let read = request.as_reader().take(MAX_BODY).read_to_end(&mut body);
    let response = match (method, read) {
        (Some(method), Ok(_)) => service.handle(&Request {
            method,
            path: request.url().split('?').next().unwrap_or("").to_owned(),
            body,
        }),
        (None, _) => Response::error(super::service::NOT_FOUND, "unsupported method"),
        (_, Err(e)) => Response::error("malformed", e.to_string()),
    };
    let mut out = tiny_http::Response::from_data(response.body).with_status_code(response.status);
    out.add_header(
        tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header"),
    );
    if let Some(location) = response.location {
        if let Ok(h) = tiny_http::Header::from_bytes("Location", location.as_bytes()) {
            out.add_header(h);
        }
    }
    let _ = request.respond(out);
}
