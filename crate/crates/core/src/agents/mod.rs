//! Executable roles: KB server, SP server, user agent and scenario runner.

mod config;
mod scenario;

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{KeyPair, PartyIdentity};
use crate::expression::{Dimension, ExpressionRole, ExpressionSet};
use crate::pow::NegotiationId;
use crate::protocol::{
    CancelReason, FixedClock, Party, Phase, ProtocolError, SslaRecord, CANCEL, CONFIRMATION,
};
use crate::translation::{TranslationError, Translator};
use crate::wire::{
    ClientError, HttpServer, KbService, Loopback, NegotiationClient, NegotiationService, Service,
    Transport, TransportError, WireDocument,
};

pub use config::{
    load_expressions, load_kb, load_key, load_public_key, read_file, Agent, AgentConfig, AgentRole,
    ConfigError, PowSettings,
};
pub use scenario::{run_scenario, ScenarioReport, ScenarioScript, ScenarioStep, StepResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_CANCELLED: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

/// Fixed instant used for reproducible runs.
pub const DETERMINISTIC_EPOCH: i64 = 1_700_000_000;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("protocol error [{code}]: {0}", code = .0.code())]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("translation failed [{code}]: {0}", code = .0.code())]
    Translation(#[from] TranslationError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl AgentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AgentError::Config(_) => EXIT_CONFIG,
            _ => EXIT_PROTOCOL,
        }
    }

    pub fn code(&self) -> String {
        match self {
            AgentError::Config(_) => "config".into(),
            AgentError::Protocol(e) => e.code().into(),
            AgentError::Client(ClientError::Rejected { code, .. }) => code.clone(),
            AgentError::Client(_) | AgentError::Transport(_) => "transport".into(),
            AgentError::Translation(e) => e.code().into(),
        }
    }
}

/// Bring requirements stated above the Function dimension down to
/// functions through the user's KB; the rest are kept as they are.
pub fn prepare_requirements<T: Translator + ?Sized>(
    kb: &T,
    requirements: &ExpressionSet,
) -> Result<ExpressionSet, TranslationError> {
    let mut out = ExpressionSet::new(ExpressionRole::Requirement);
    for req in requirements {
        if req.effective_dimension() < Dimension::Function {
            for item in kb.translate(req, Dimension::Function)?.output {
                out.insert_new(item);
            }
        } else {
            out.insert_new(req.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub negotiation_id: NegotiationId,
    pub phase: Phase,
    /// Every message exchanged, in order.
    pub messages: Vec<WireDocument>,
    pub record: Option<SslaRecord>,
    pub peer_record: Option<SslaRecord>,
    pub cancel_reason: Option<CancelReason>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self.phase {
            Phase::Agreed => EXIT_OK,
            Phase::Cancelled => EXIT_CANCELLED,
            _ => EXIT_PROTOCOL,
        }
    }
}

/// Drive one negotiation from the initiator's side until it terminates.
pub fn negotiate<T: Transport>(
    user: &mut Party,
    requirements: ExpressionSet,
    responder: PartyIdentity,
    client: &NegotiationClient<T>,
) -> Result<Outcome, AgentError> {
    let opening = user.initiate(requirements, responder)?.into_document();
    let id = parse_id(&opening)?;
    let mut messages = vec![opening.clone()];
    let (mut incoming, _) = client.open(&opening)?;
    loop {
        messages.push(incoming.clone());
        let received = user.receive(&incoming)?;
        let Some(reply) = received.reply else { break };
        messages.push(reply.clone());
        let answer = client.send(&id, &reply)?;
        if reply.kind == CONFIRMATION || reply.kind == CANCEL {
            break;
        }
        incoming = answer;
    }
    let negotiation = user.negotiation(&id).expect("initiated above");
    let peer_record = match negotiation.phase() {
        Phase::Agreed => Some(
            SslaRecord::from_document(&client.fetch(&id)?)
                .map_err(|e| ProtocolError::Malformed(format!("peer record: {e}")))?,
        ),
        _ => None,
    };
    Ok(Outcome {
        negotiation_id: id,
        phase: negotiation.phase(),
        messages,
        record: negotiation.record().cloned(),
        peer_record,
        cancel_reason: negotiation.cancel_reason().cloned(),
    })
}

fn parse_id(doc: &WireDocument) -> Result<NegotiationId, ProtocolError> {
    Ok(crate::protocol::parse_message(doc)?.negotiation_id())
}

/// Test hooks for reproducible runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Seeds both parties' randomness and pins the clock to
    /// [`DETERMINISTIC_EPOCH`].
    pub deterministic_seed: Option<u64>,
}

pub fn build_party(agent: &Agent, options: RunOptions, seed_offset: u64) -> Party {
    let party = Party::new(
        agent.key.clone(),
        Arc::clone(&agent.kb),
        agent.capabilities.clone(),
        agent.protocol.clone(),
    );
    match options.deterministic_seed {
        Some(seed) => party
            .with_seed(seed.wrapping_add(seed_offset))
            .with_clock(Arc::new(FixedClock::new(DETERMINISTIC_EPOCH))),
        None => party,
    }
}

/// Run a user against an in-process SP over the loopback transport and
/// write both evidence files where configured.
pub fn run_negotiation(user: &Agent, sp: &Agent, options: RunOptions) -> Result<Outcome, AgentError> {
    let service = Arc::new(NegotiationService::new(build_party(sp, options, 1)));
    let client = NegotiationClient::new(Loopback::new(service.clone() as Arc<dyn Service>));
    let outcome = run_user(user, sp.key.identity(), &client, options)?;
    if let (Some(path), Some(record)) = (&sp.out, &outcome.peer_record) {
        write_record(path, record)?;
    }
    Ok(outcome)
}

/// Run the user side against any transport.
pub fn run_user<T: Transport>(
    user: &Agent,
    responder: PartyIdentity,
    client: &NegotiationClient<T>,
    options: RunOptions,
) -> Result<Outcome, AgentError> {
    let mut party = build_party(user, options, 0);
    let requirements = prepare_requirements(user.kb.as_ref(), &user.requirements)?;
    let outcome = negotiate(&mut party, requirements, responder, client)?;
    if let (Some(path), Some(record)) = (&user.out, &outcome.record) {
        write_record(path, record)?;
    }
    Ok(outcome)
}

pub fn write_record(path: &Path, record: &SslaRecord) -> Result<(), ConfigError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| ConfigError::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    std::fs::write(path, record.encode()).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Load the KB first, then bind; a bad fixture never opens a socket.
pub fn run_kb_server(kb_dir: &Path, listen: &str, signer: Option<KeyPair>) -> Result<HttpServer, AgentError> {
    let kb = Arc::new(load_kb(kb_dir)?);
    let mut service = KbService::new(kb);
    if let Some(key) = signer {
        service = service.with_signed_replies(key);
    }
    Ok(HttpServer::start(listen, Arc::new(service))?)
}

pub fn run_sp_server(agent: &Agent, listen: &str, options: RunOptions) -> Result<HttpServer, AgentError> {
    let service = NegotiationService::new(build_party(agent, options, 1));
    Ok(HttpServer::start(listen, Arc::new(service))?)
}
