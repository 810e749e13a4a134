//! Negotiation of non-repudiable security service level agreements (SSLAs).
//!
//! Parties describe security requirements and capabilities with dimensioned
//! OIDs ([`expression`]), translate them between dimensions through a
//! knowledge base ([`translation`]), decide and counter-propose
//! ([`decision`]), and exchange signed, proof-of-work protected messages
//! ([`protocol`], [`pow`], [`crypto`]) until both hold the same dual-signed
//! agreement, which [`audit`] verifies offline.

pub mod agents;
pub mod audit;
pub mod crypto;
pub mod decision;
pub mod expression;
pub mod pow;
pub mod protocol;
pub mod translation;
pub mod wire;

#[cfg(test)]
mod testutil;
