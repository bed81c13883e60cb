//! Offline aggregation of measurement records into distributions, per-pair
//! statistics and their renderings.

mod heatmap;
mod histogram;
mod mesh;
mod pairs;
mod percentile;

use thiserror::Error;

pub use heatmap::{render_heatmap, Cell, Heatmap, Metric};
pub use histogram::{histogram, Histogram, COARSE_EDGES_MS};
pub use mesh::{mesh_report, DirectedPair, MeshReport};
pub use pairs::{pair_stats, pair_stats_with_threshold, PairKey, PairStats, PairStatsMap};
pub use percentile::{nearest_rank, percentile, percentile_sorted, Summary};

/// RTT above which a pair is considered unfit for tightly synchronized use.
pub const DEFAULT_THRESHOLD_MS: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("empty input")]
    EmptyInput,
    #[error("node `{0}` is not in the node order")]
    UnknownNode(String),
    #[error("a mesh needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
}

/// Lexicographic list of every id appearing as reporter or peer.
pub fn node_ids(records: &[crate::record::MeasurementRecord]) -> Vec<String> {
    let set: std::collections::BTreeSet<&str> = records
        .iter()
        .flat_map(|r| [r.your_id.as_str(), r.peer_id.as_str()])
        .collect();
    set.into_iter().map(str::to_string).collect()
}
