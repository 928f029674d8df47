//! Retrieval accuracy from ranked neighbour labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_label: usize,
    /// Neighbour labels, nearest first.
    pub neighbor_labels: Vec<usize>,
}

fn check(results: &[RetrievalResult], k: usize) -> Result<(), MetricError> {
    if results.is_empty() {
        return Err(MetricError::Empty);
    }
    match results.iter().map(|r| r.neighbor_labels.len()).min() {
        Some(got) if got < k => Err(MetricError::TooFew { need: k, got }),
        _ => Ok(()),
    }
}

/// Fraction of queries with at least one same-label neighbour in the top `k`.
pub fn acc_at_k(results: &[RetrievalResult], k: usize) -> Result<f64, MetricError> {
    check(results, k)?;
    let hits = results.iter().filter(|r| r.neighbor_labels[..k].contains(&r.query_label)).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Fraction of queries whose modal top-`k` label equals the query label. Among
/// tied modal labels the one ranked nearest wins.
pub fn majority_vote_acc(results: &[RetrievalResult], k: usize) -> Result<f64, MetricError> {
    check(results, k)?;
    let hits = results
        .iter()
        .filter(|r| {
            let top = &r.neighbor_labels[..k];
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for &l in top {
                *counts.entry(l).or_default() += 1;
            }
            let best = counts.values().copied().max().unwrap_or(0);
            top.iter().find(|l| counts[l] == best) == Some(&r.query_label)
        })
        .count();
    Ok(hits as f64 / results.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(q: usize, n: &[usize]) -> RetrievalResult {
        RetrievalResult { query_label: q, neighbor_labels: n.to_vec() }
    }

    #[test]
    fn any_hit_within_k() {
        assert_eq!(acc_at_k(&[r(0, &[1, 0, 2])], 3).unwrap(), 1.0);
        assert_eq!(acc_at_k(&[r(0, &[1, 0, 2])], 1).unwrap(), 0.0);
        assert!(acc_at_k(&[r(0, &[1])], 3).is_err());
    }

    #[test]
    fn majority_vote_and_rank_tie_break() {
        assert_eq!(majority_vote_acc(&[r(0, &[0, 0, 1, 0, 2])], 5).unwrap(), 1.0);
        assert_eq!(majority_vote_acc(&[r(0, &[0, 0, 1, 1, 2])], 5).unwrap(), 1.0);
        assert_eq!(majority_vote_acc(&[r(0, &[1, 0, 0, 1, 2])], 5).unwrap(), 0.0);
    }
}
