//! Nearest-neighbour retrieval on l2-normalized features.

use serde::{Deserialize, Serialize};

use super::{to_matrix, DownstreamError};
use crate::numeric::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Row position in the index.
    pub index: usize,
    pub id: String,
    pub label: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    rows: Tensor,
    ids: Vec<String>,
    labels: Vec<usize>,
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

impl KnnIndex {
    pub fn new(features: &[Vec<f64>], ids: Vec<String>, labels: Vec<usize>) -> Result<Self, DownstreamError> {
        if features.len() != labels.len() || ids.len() != labels.len() {
            return Err(DownstreamError::RowLabelMismatch { rows: features.len(), labels: labels.len() });
        }
        let (rows, _) = to_matrix(features)?.l2_normalize_rows();
        Ok(Self { rows, ids, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.dims2().1
    }

    /// The `k` nearest rows by ascending distance; equal distances keep index
    /// order.
    pub fn query(&self, feature: &[f64], k: usize) -> Result<Vec<Neighbor>, DownstreamError> {
        if k > self.len() {
            return Err(DownstreamError::KTooLarge { k, size: self.len() });
        }
        if feature.len() != self.dim() {
            return Err(DownstreamError::DimensionMismatch { expected: self.dim(), got: feature.len() });
        }
        let q = normalize(feature);
        let mut all: Vec<(usize, f64)> = (0..self.len())
            .map(|i| {
                let d2: f64 = self.rows.row(i).iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                (i, d2.sqrt())
            })
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(all
            .into_iter()
            .take(k)
            .map(|(i, distance)| Neighbor { index: i, id: self.ids[i].clone(), label: self.labels[i], distance })
            .collect())
    }
}
