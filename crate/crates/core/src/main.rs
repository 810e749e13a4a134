use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ssla::agents::{
    load_key, load_kb, load_public_key, read_file, run_kb_server, run_negotiation, run_scenario,
    run_sp_server, run_user, write_record, AgentConfig, AgentError, ConfigError, RunOptions, ScenarioScript,
    EXIT_INVALID, EXIT_OK,
};
use ssla::audit::{audit_document, compare_evidence};
use ssla::crypto::{KeyPair, PublicKey, SignatureAlgorithm};
use ssla::expression::{Dimension, SecurityExpression};
use ssla::protocol::SslaRecord;
use ssla::translation::Translator;
use ssla::wire::{HttpClient, NegotiationClient, RemoteKb, WireDocument};

#[derive(Parser)]
#[command(name = "ssla", version, about = "Security SLA negotiation agents and evidence audit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve a knowledge base directory over HTTP.
    KbServer {
        #[arg(long)]
        kb_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Sign translation replies with this key.
        #[arg(long)]
        sign_key: Option<PathBuf>,
    },
    /// Run a service provider's negotiation endpoint.
    SpServer {
        #[command(flatten)]
        agent: AgentArgs,
        #[arg(long)]
        listen: Option<String>,
    },
    /// Negotiate as a user, over HTTP or against an in-process SP.
    Negotiate {
        #[command(flatten)]
        agent: AgentArgs,
        /// Run the SP from this configuration in-process instead of
        /// contacting `peer_url`.
        #[arg(long)]
        sp_config: Option<PathBuf>,
        /// Write the record fetched from the SP here.
        #[arg(long)]
        peer_out: Option<PathBuf>,
    },
    /// Run a scripted scenario and check every exchanged message.
    Scenario {
        script: PathBuf,
        #[cfg(feature = "test-hooks")]
        #[arg(long)]
        deterministic_seed: Option<u64>,
    },
    /// Audit stored records offline.
    Audit {
        #[arg(long = "record", required = true)]
        records: Vec<PathBuf>,
        /// Public keys (PEM) of the parties.
        #[arg(long = "key", required = true)]
        keys: Vec<PathBuf>,
    },
    /// Translate expressions toward a goal dimension.
    Translate {
        #[arg(long, conflicts_with = "kb_url", required_unless_present = "kb_url")]
        kb_dir: Option<PathBuf>,
        #[arg(long)]
        kb_url: Option<String>,
        #[arg(long)]
        goal: Dimension,
        #[arg(required = true)]
        expressions: Vec<SecurityExpression>,
    },
    /// Generate a PKCS#8 key pair and print its identity.
    Keygen {
        #[arg(long, value_enum, default_value_t = Algorithm::Rsa)]
        algorithm: Algorithm,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        public_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Algorithm {
    Rsa,
    Ed25519,
}

#[derive(Args)]
struct AgentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    kb_url: Option<String>,
    #[arg(long)]
    requirements: Option<PathBuf>,
    #[arg(long)]
    capabilities: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Required proof-of-work difficulty.
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    max_rounds: Option<u32>,
    /// Seed every random choice and pin the clock.
    #[cfg(feature = "test-hooks")]
    #[arg(long)]
    deterministic_seed: Option<u64>,
}

impl AgentArgs {
    fn config(&self) -> Result<AgentConfig, ConfigError> {
        let mut config = AgentConfig::read(&self.config)?;
        if let Some(url) = &self.kb_url {
            config.kb_url = Some(url.clone());
            config.kb_dir = None;
        }
        if let Some(p) = &self.requirements {
            config.requirements = Some(p.clone());
        }
        if let Some(p) = &self.capabilities {
            config.capabilities = p.clone();
        }
        if let Some(p) = &self.out {
            config.out = Some(p.clone());
        }
        if let Some(bits) = self.bits {
            config.pow.bits = bits;
        }
        if let Some(n) = self.max_rounds {
            config.max_rounds = Some(n);
        }
        Ok(config)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            #[cfg(feature = "test-hooks")]
            deterministic_seed: self.deterministic_seed,
            #[cfg(not(feature = "test-hooks"))]
            deterministic_seed: None,
        }
    }
}

fn print_json(value: &serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(value).expect("json values serialize"));
    let _ = out.flush();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn run(command: Command) -> Result<i32, AgentError> {
    match command {
        Command::KbServer { kb_dir, listen, sign_key } => {
            let signer = sign_key.as_deref().map(load_key).transpose()?;
            let server = run_kb_server(&kb_dir, &listen, signer)?;
            print_json(&json!({ "listening": server.url() }));
            server.join();
            Ok(EXIT_OK)
        }
        Command::SpServer { agent, listen } => {
            let loaded = agent.config()?.load()?;
            let listen = listen
                .or_else(|| loaded.listen.clone())
                .ok_or_else(|| ConfigError::Invalid("no listen address".into()))?;
            let server = run_sp_server(&loaded, &listen, agent.options())?;
            print_json(&json!({ "listening": server.url(), "identity": loaded.key.identity() }));
            server.join();
            Ok(EXIT_OK)
        }
        Command::Negotiate { agent, sp_config, peer_out } => {
            let user = agent.config()?.load()?;
            let outcome = match sp_config {
                Some(path) => run_negotiation(&user, &AgentConfig::read(&path)?.load()?, agent.options())?,
                None => {
                    let url = user
                        .peer_url
                        .clone()
                        .ok_or_else(|| ConfigError::Invalid("peer_url or --sp-config is required".into()))?;
                    let (responder, _) = user
                        .peer
                        .clone()
                        .ok_or_else(|| ConfigError::Invalid("peer_key is required".into()))?;
                    let client = NegotiationClient::new(HttpClient::new(&url));
                    run_user(&user, responder, &client, agent.options())?
                }
            };
            if let (Some(path), Some(record)) = (&peer_out, &outcome.peer_record) {
                write_record(path, record)?;
            }
            print_json(&json!({
                "negotiation_id": outcome.negotiation_id,
                "phase": outcome.phase,
                "messages": outcome.messages.iter().map(|m| m.kind.clone()).collect::<Vec<_>>(),
                "entries": outcome.record.as_ref().map(|r| r.agreed_entries.to_strings()),
                "cancel_reason": outcome.cancel_reason,
                "evidence_identical": match (&outcome.record, &outcome.peer_record) {
                    (Some(a), Some(b)) => Some(compare_evidence(a, b)),
                    _ => None,
                },
            }));
            Ok(outcome.exit_code())
        }
        Command::Scenario {
            script,
            #[cfg(feature = "test-hooks")]
            deterministic_seed,
        } => {
            #[cfg(not(feature = "test-hooks"))]
            let deterministic_seed = None;
            let script = ScenarioScript::read(&script)?;
            let report = run_scenario(&script, RunOptions { deterministic_seed })?;
            print_json(&serde_json::to_value(&report).expect("reports serialize"));
            Ok(if report.passed { EXIT_OK } else { EXIT_INVALID })
        }
        Command::Audit { records, keys } => {
            let keys = keys.iter().map(|p| load_public_key(p)).collect::<Result<Vec<PublicKey>, _>>()?;
            let mut reports = Vec::new();
            let mut parsed = Vec::new();
            for path in &records {
                let bytes = read_file(path)?;
                let report = audit_document(&bytes, &keys);
                if let Ok(r) = WireDocument::decode(&bytes).map_err(|e| e.to_string()).and_then(|d| {
                    SslaRecord::from_document(&d).map_err(|e| e.to_string())
                }) {
                    parsed.push(r);
                }
                reports.push(json!({ "record": path, "report": report }));
            }
            let all_valid = reports.iter().all(|r| r["report"]["verdict"] == "valid");
            let identical = (records.len() > 1 && parsed.len() == records.len())
                .then(|| parsed.windows(2).all(|w| compare_evidence(&w[0], &w[1])));
            print_json(&json!({ "reports": reports, "evidence_identical": identical }));
            Ok(if all_valid && identical != Some(false) { EXIT_OK } else { EXIT_INVALID })
        }
        Command::Translate { kb_dir, kb_url, goal, expressions } => {
            let kb: Box<dyn Translator> = match (kb_dir, kb_url) {
                (Some(dir), _) => Box::new(load_kb(&dir)?),
                (None, Some(url)) => Box::new(RemoteKb::new(HttpClient::new(&url))),
                (None, None) => unreachable!("clap requires one source"),
            };
            let results: Vec<_> = expressions
                .iter()
                .map(|input| match kb.translate(input, goal) {
                    Ok(t) => json!({
                        "input": input.to_string(),
                        "output": t.output.iter().map(ToString::to_string).collect::<Vec<_>>(),
                        "passthrough": t.passthrough,
                    }),
                    Err(e) => json!({ "input": input.to_string(), "error": e.code(), "detail": e.to_string() }),
                })
                .collect();
            let failed = results.iter().any(|r| r.get("error").is_some());
            print_json(&json!(results));
            Ok(if failed { EXIT_INVALID } else { EXIT_OK })
        }
        Command::Keygen { algorithm, out, public_out } => {
            let alg = match algorithm {
                Algorithm::Rsa => SignatureAlgorithm::RsaPkcs1Sha256,
                Algorithm::Ed25519 => SignatureAlgorithm::Ed25519,
            };
            let key = KeyPair::generate(alg, &mut rand::rngs::OsRng)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            write(&out, key.to_pkcs8_pem().as_bytes())?;
            if let Some(p) = public_out {
                write(&p, key.public().to_pem().as_bytes())?;
            }
            print_json(&json!({ "identity": key.identity(), "algorithm": alg.id() }));
            Ok(EXIT_OK)
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ConfigError> {
    std::fs::write(path, bytes).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })
}
