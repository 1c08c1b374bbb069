//! Finite-blocklength analysis and simulation toolkit for the two-user
//! additive-noise multiple access channel (MAC) and the rateless random
//! access channel (RAC).
//!
//! The crate splits into closed-form pieces ([`analytics`], [`mvnormal`],
//! [`mac_regions`], [`rac_rates`]) and executable coding schemes with their
//! Monte Carlo estimators ([`noise`], [`codec`], [`montecarlo`]). All rates
//! and dispersions are in nats.

pub mod analytics;
pub mod cli;
pub mod codec;
pub mod error;
pub mod mac_regions;
pub mod montecarlo;
pub mod mvnormal;
pub mod noise;
pub mod rac_rates;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Decoding strategy at the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    /// Joint nearest-neighbor search over all message tuples.
    Jnn,
    /// Successive interference cancellation.
    Sic,
}

impl std::fmt::Display for Decoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decoder::Jnn => "jnn",
            Decoder::Sic => "sic",
        })
    }
}
