use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::crypto::{KeyPair, PartyIdentity, PublicKey};
use crate::expression::{ExpressionRole, ExpressionSet, SecurityExpression};
use crate::pow::PowPolicy;
use crate::protocol::ProtocolConfig;
use crate::translation::{KnowledgeBase, Translator};
use crate::wire::{HttpClient, RemoteKb};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    User,
    Sp,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowSettings {
    #[serde(default = "default_bits")]
    pub bits: u32,
    #[serde(default = "default_age")]
    pub max_stamp_age_secs: u64,
    #[serde(default = "default_skew")]
    pub clock_skew_secs: u64,
}

fn default_bits() -> u32 {
    crate::pow::DEFAULT_BITS
}
fn default_age() -> u64 {
    crate::pow::DEFAULT_MAX_STAMP_AGE.as_secs()
}
fn default_skew() -> u64 {
    crate::pow::DEFAULT_CLOCK_SKEW.as_secs()
}

impl Default for PowSettings {
    fn default() -> Self {
        PowSettings {
            bits: default_bits(),
            max_stamp_age_secs: default_age(),
            clock_skew_secs: default_skew(),
        }
    }
}

/// Agent configuration file. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub role: AgentRole,
    /// PKCS#8 PEM private key.
    pub key: PathBuf,
    /// Local KB directory; alternative to `kb_url`.
    #[serde(default)]
    pub kb_dir: Option<PathBuf>,
    #[serde(default)]
    pub kb_url: Option<String>,
    /// JSON array of expressions (users only).
    #[serde(default)]
    pub requirements: Option<PathBuf>,
    pub capabilities: PathBuf,
    #[serde(default)]
    pub pow: PowSettings,
    #[serde(default)]
    pub max_rounds: Option<u32>,
    /// SP: address to listen on.
    #[serde(default)]
    pub listen: Option<String>,
    /// User: base URL of the SP's negotiation service.
    #[serde(default)]
    pub peer_url: Option<String>,
    /// User: the SP's public key (PEM); its digest is the responder identity.
    #[serde(default)]
    pub peer_key: Option<PathBuf>,
    /// Where to write this party's evidence record.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// A configuration with every referenced file read and parsed.
pub struct Agent {
    pub role: AgentRole,
    pub key: KeyPair,
    pub kb: Arc<dyn Translator + Send + Sync>,
    pub kb_uri: Option<String>,
    pub requirements: ExpressionSet,
    pub capabilities: ExpressionSet,
    pub protocol: ProtocolConfig,
    pub listen: Option<String>,
    pub peer_url: Option<String>,
    pub peer: Option<(PartyIdentity, PublicKey)>,
    pub out: Option<PathBuf>,
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, ConfigError> {
    std::fs::read(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_key(path: &Path) -> Result<KeyPair, ConfigError> {
    let pem = String::from_utf8(read_file(path)?).map_err(|e| parse_error(path, e))?;
    KeyPair::from_pkcs8_pem(&pem).map_err(|e| parse_error(path, e))
}

pub fn load_public_key(path: &Path) -> Result<PublicKey, ConfigError> {
    let pem = String::from_utf8(read_file(path)?).map_err(|e| parse_error(path, e))?;
    PublicKey::from_pem(&pem).map_err(|e| parse_error(path, e))
}

pub fn load_expressions(path: &Path, role: ExpressionRole) -> Result<ExpressionSet, ConfigError> {
    let items: Vec<SecurityExpression> =
        serde_json::from_slice(&read_file(path)?).map_err(|e| parse_error(path, e))?;
    ExpressionSet::from_items(role, items).map_err(|e| parse_error(path, e))
}

pub fn load_kb(dir: &Path) -> Result<KnowledgeBase, ConfigError> {
    KnowledgeBase::load_dir(dir).map_err(|e| parse_error(dir, e))
}

fn parse_error(path: &Path, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Parse {
        path: path.to_owned(),
        detail: e.to_string(),
    }
}

impl AgentConfig {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let mut config: AgentConfig =
            serde_json::from_slice(&read_file(path)?).map_err(|e| parse_error(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.key);
        resolve(&mut config.capabilities);
        for p in [&mut config.kb_dir, &mut config.requirements, &mut config.peer_key, &mut config.out]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        Ok(config)
    }

    /// Read every referenced file. No network access happens here.
    pub fn load(&self) -> Result<Agent, ConfigError> {
        let key = load_key(&self.key)?;
        let (kb, kb_uri): (Arc<dyn Translator + Send + Sync>, _) = match (&self.kb_dir, &self.kb_url) {
            (Some(dir), None) => (Arc::new(load_kb(dir)?), None),
            (None, Some(url)) => (Arc::new(RemoteKb::new(HttpClient::new(url))), Some(url.clone())),
            _ => return Err(ConfigError::Invalid("exactly one of kb_dir and kb_url is required".into())),
        };
        let requirements = match &self.requirements {
            Some(p) => load_expressions(p, ExpressionRole::Requirement)?,
            None => ExpressionSet::new(ExpressionRole::Requirement),
        };
        let capabilities = load_expressions(&self.capabilities, ExpressionRole::Capability)?;
        let peer = match &self.peer_key {
            Some(p) => {
                let k = load_public_key(p)?;
                Some((k.identity(), k))
            }
            None => None,
        };
        let max_rounds = self.max_rounds.unwrap_or(crate::protocol::DEFAULT_MAX_ROUNDS);
        if max_rounds == 0 {
            return Err(ConfigError::Invalid("max_rounds must be at least 1".into()));
        }
        let protocol = ProtocolConfig {
            pow: PowPolicy {
                required_bits: self.pow.bits,
                max_stamp_age: Duration::from_secs(self.pow.max_stamp_age_secs),
                clock_skew: Duration::from_secs(self.pow.clock_skew_secs),
            },
            max_rounds,
            kb_uri: kb_uri.clone(),
            ..ProtocolConfig::default()
        };
        Ok(Agent {
            role: self.role,
            key,
            kb,
            kb_uri,
            requirements,
            capabilities,
            protocol,
            listen: self.listen.clone(),
            peer_url: self.peer_url.clone(),
            peer,
            out: self.out.clone(),
        })
    }
}
