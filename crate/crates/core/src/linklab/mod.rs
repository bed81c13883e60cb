//! Link emulation and measurement validation.
//!
//! A [`LinkEmulator`] delays or drops datagrams on a two-way link according
//! to a [`LinkSpec`] and records every decision in a [`GroundTruthLog`], which
//! then serves as the oracle for measured RTTs. The same emulator backs the
//! virtual-clock validation harness, the wall-clock harness over loopback
//! sockets, and the emulated sockets used by agents.
//!
//! Scenario delays are applied in the forward direction only: a "10 ms" link
//! adds 10 ms to every round trip, not 20.

mod emulator;
mod render;
mod validation;
mod wallclock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emulator::{
    Delivery, Direction, GroundTruthEntry, GroundTruthLog, LinkEmulator, NetworkEmulator,
};
pub use render::{render_validation, ValidationArtifacts, CSV_HEADER};
pub use validation::{run_validation, run_validation_with, ValidationReport, ValidationSample};
pub use wallclock::{run_validation_wallclock, DelayLine};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkSpec {
    pub forward_delay_ms: f64,
    /// Upper bound of the uniform jitter added on top of the forward delay.
    pub forward_jitter_ms: f64,
    pub reverse_delay_ms: f64,
    pub reverse_jitter_ms: f64,
    pub loss_prob: f64,
    /// When false, deliveries within a direction never overtake each other.
    pub reorder: bool,
    pub seed: u64,
}

impl Default for LinkSpec {
    fn default() -> Self {
        Self {
            forward_delay_ms: 0.0,
            forward_jitter_ms: 0.0,
            reverse_delay_ms: 0.0,
            reverse_jitter_ms: 0.0,
            loss_prob: 0.0,
            reorder: false,
            seed: 1,
        }
    }
}

impl LinkSpec {
    /// Constant forward delay, nothing else.
    pub fn constant(forward_delay_ms: f64) -> Self {
        Self {
            forward_delay_ms,
            ..Self::default()
        }
    }

    pub fn with_jitter(mut self, forward_jitter_ms: f64) -> Self {
        self.forward_jitter_ms = forward_jitter_ms;
        self
    }

    pub fn with_loss(mut self, loss_prob: f64) -> Self {
        self.loss_prob = loss_prob;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// A link that drops everything.
    pub fn blackhole() -> Self {
        Self::default().with_loss(1.0)
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let delays = [
            ("forward_delay_ms", self.forward_delay_ms),
            ("forward_jitter_ms", self.forward_jitter_ms),
            ("reverse_delay_ms", self.reverse_delay_ms),
            ("reverse_jitter_ms", self.reverse_jitter_ms),
        ];
        for (name, v) in delays {
            if !v.is_finite() || v < 0.0 {
                return Err(LinkError::Invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(LinkError::Invalid(format!(
                "loss_prob must be in [0, 1], got {}",
                self.loss_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("invalid link spec: {0}")]
    Invalid(String),
    #[error("n_probes must be at least 1")]
    NoProbes,
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for LinkError {
    fn from(e: std::io::Error) -> Self {
        LinkError::Io(e.to_string())
    }
}

fn default_interval_ms() -> f64 {
    1000.0
}

/// One entry of a scenario file: a link plus how to probe it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub link: LinkSpec,
    pub n_probes: usize,
    #[serde(default = "default_interval_ms")]
    pub interval_ms: f64,
}

impl Scenario {
    pub fn label(&self, index: usize) -> String {
        self.name.clone().unwrap_or_else(|| {
            let mut s = format!("{}ms", self.link.forward_delay_ms);
            if self.link.forward_jitter_ms > 0.0 {
                s.push_str(&format!("+j{}ms", self.link.forward_jitter_ms));
            }
            if self.link.loss_prob > 0.0 {
                s.push_str(&format!("+loss{}", self.link.loss_prob));
            }
            format!("#{index} {s}")
        })
    }
}

/// Parses a JSON array of scenarios.
pub fn parse_scenarios(json: &str) -> Result<Vec<Scenario>, LinkError> {
    let scenarios: Vec<Scenario> =
        serde_json::from_str(json).map_err(|e| LinkError::Invalid(e.to_string()))?;
    for s in &scenarios {
        s.link.validate()?;
        if s.n_probes == 0 {
            return Err(LinkError::NoProbes);
        }
        if !(s.interval_ms.is_finite() && s.interval_ms > 0.0) {
            return Err(LinkError::Invalid(format!(
                "interval_ms must be positive, got {}",
                s.interval_ms
            )));
        }
    }
    Ok(scenarios)
}
