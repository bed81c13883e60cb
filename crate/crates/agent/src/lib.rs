//! Headless measurement agent: joins a session, handshakes with every peer
//! in the roster, probes each established link once per send interval and
//! reports the latest RTT per link to the collector once per stats interval.

pub mod config;
pub mod driver;
pub mod engine;
pub mod handshake;
pub mod lookup;
pub mod net;
pub mod reporter;
pub mod sim;

pub use config::{AgentConfig, ConfigError, IpLookupMode};
pub use driver::{run_agent, AgentError, AgentSummary, RunOptions};
pub use engine::{FailReason, LinkSnapshot, LinkState, MeshEngine, MeshStatus, Now, Output};
pub use lookup::{lookup_self, SelfInfo};
pub use net::{AgentSocket, SharedNetwork};
pub use reporter::{Reporter, ReporterStats};
pub use sim::{SimConfig, Simulation};
