use std::collections::BTreeSet;

use serde::Serialize;

use super::pairs::pair_stats_with_threshold;
use super::AnalysisError;
use crate::record::MeasurementRecord;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct DirectedPair {
    pub reporter: String,
    pub peer: String,
}

impl DirectedPair {
    fn new(reporter: &str, peer: &str) -> Self {
        Self {
            reporter: reporter.to_string(),
            peer: peer.to_string(),
        }
    }
}

/// Completeness and asymmetry audit of a full-mesh run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshReport {
    pub nodes: Vec<String>,
    pub expected_directed_pairs: usize,
    pub observed_pairs: usize,
    pub missing_pairs: Vec<DirectedPair>,
    /// Pairs observed in this direction whose reverse has no data.
    pub asymmetric_pairs: Vec<DirectedPair>,
    pub threshold_ms: f64,
    /// Observed pairs whose mean RTT is below the threshold.
    pub pairs_under_threshold_mean: usize,
    /// Observed pairs whose p99 RTT is below the threshold.
    pub pairs_under_threshold_p99: usize,
    /// Records naming a node outside the expected list; not counted above.
    pub unexpected_records: usize,
}

impl MeshReport {
    pub fn completeness(&self) -> f64 {
        if self.expected_directed_pairs == 0 {
            return 0.0;
        }
        self.observed_pairs as f64 / self.expected_directed_pairs as f64
    }
}

pub fn mesh_report(
    records: &[MeasurementRecord],
    expected_nodes: &[String],
    threshold_ms: f64,
) -> Result<MeshReport, AnalysisError> {
    let nodes: Vec<String> = {
        let mut seen = BTreeSet::new();
        expected_nodes
            .iter()
            .filter(|n| seen.insert(n.as_str()))
            .cloned()
            .collect()
    };
    if nodes.len() < 2 {
        return Err(AnalysisError::TooFewNodes(nodes.len()));
    }
    let known: BTreeSet<&str> = nodes.iter().map(String::as_str).collect();
    let (inside, outside): (Vec<&MeasurementRecord>, Vec<&MeasurementRecord>) = records
        .iter()
        .partition(|r| known.contains(r.your_id.as_str()) && known.contains(r.peer_id.as_str()));
    let inside: Vec<MeasurementRecord> = inside.into_iter().cloned().collect();
    let stats = pair_stats_with_threshold(&inside, threshold_ms);

    let mut missing = Vec::new();
    let mut asymmetric = Vec::new();
    let mut observed = 0;
    let mut under_mean = 0;
    let mut under_p99 = 0;
    for a in &nodes {
        for b in &nodes {
            if a == b {
                continue;
            }
            match stats.get(&(a.clone(), b.clone())) {
                None => missing.push(DirectedPair::new(a, b)),
                Some(s) => {
                    observed += 1;
                    if s.mean_ms < threshold_ms {
                        under_mean += 1;
                    }
                    if s.p99_ms < threshold_ms {
                        under_p99 += 1;
                    }
                    if !stats.contains_key(&(b.clone(), a.clone())) {
                        asymmetric.push(DirectedPair::new(a, b));
                    }
                }
            }
        }
    }
    let n = nodes.len();
    Ok(MeshReport {
        expected_directed_pairs: n * (n - 1),
        nodes,
        observed_pairs: observed,
        missing_pairs: missing,
        asymmetric_pairs: asymmetric,
        threshold_ms,
        pairs_under_threshold_mean: under_mean,
        pairs_under_threshold_p99: under_p99,
        unexpected_records: outside.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(a: &str, b: &str, rtt: f64) -> MeasurementRecord {
        MeasurementRecord::new(1, a, b, rtt)
    }

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("{i:02}")).collect()
    }

    #[test]
    fn two_nodes_both_directions() {
        let r = mesh_report(
            &[rec("a", "b", 5.0), rec("b", "a", 6.0)],
            &["a".into(), "b".into()],
            60.0,
        )
        .unwrap();
        assert_eq!(r.expected_directed_pairs, 2);
        assert_eq!(r.observed_pairs, 2);
        assert!(r.missing_pairs.is_empty());
        assert!(r.asymmetric_pairs.is_empty());
    }

    #[test]
    fn one_direction_is_asymmetric() {
        let r = mesh_report(&[rec("a", "b", 5.0)], &["a".into(), "b".into()], 60.0).unwrap();
        assert_eq!(r.asymmetric_pairs, vec![DirectedPair::new("a", "b")]);
        assert_eq!(r.missing_pairs, vec![DirectedPair::new("b", "a")]);
    }

    #[test]
    fn seventy_seven_of_ninety() {
        let nodes = ids(10);
        let mut recs = Vec::new();
        let mut k = 0;
        'outer: for a in &nodes {
            for b in &nodes {
                if a == b {
                    continue;
                }
                if k == 77 {
                    break 'outer;
                }
                recs.push(rec(a, b, 10.0 + k as f64));
                k += 1;
            }
        }
        let r = mesh_report(&recs, &nodes, 60.0).unwrap();
        assert_eq!(r.expected_directed_pairs, 90);
        assert_eq!(r.observed_pairs, 77);
        assert_eq!(r.missing_pairs.len(), 13);
        // RTT 10 + k is below 60 for k < 50.
        assert_eq!(r.pairs_under_threshold_mean, 50);
    }

    #[test]
    fn too_few_nodes() {
        assert_eq!(
            mesh_report(&[], &["solo".into()], 60.0),
            Err(AnalysisError::TooFewNodes(1))
        );
    }

    #[test]
    fn outside_records_are_counted_separately() {
        let r = mesh_report(&[rec("a", "z", 5.0)], &["a".into(), "b".into()], 60.0).unwrap();
        assert_eq!(r.unexpected_records, 1);
        assert_eq!(r.observed_pairs, 0);
    }

    proptest! {
        #[test]
        fn observed_plus_missing_is_expected(
            n in 2usize..8,
            pairs in proptest::collection::vec((0usize..8, 0usize..8), 0..60),
        ) {
            let nodes = ids(n);
            let recs: Vec<MeasurementRecord> = pairs
                .into_iter()
                .filter(|(a, b)| a != b)
                .map(|(a, b)| rec(&format!("{:02}", a + 1), &format!("{:02}", b + 1), 1.0))
                .collect();
            let r = mesh_report(&recs, &nodes, 60.0).unwrap();
            prop_assert_eq!(r.observed_pairs + r.missing_pairs.len(), n * (n - 1));
        }
    }
}
