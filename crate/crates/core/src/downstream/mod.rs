//! Evaluation protocols on frozen features: linear probe, attention MIL, KNN
//! retrieval, ridge regression for gene expression, and patient folds.

mod knn;
mod mil;
mod probe;
mod ridge;

pub use knn::{KnnIndex, Neighbor};
pub use mil::{bag_loss, train_abmil, Abmil, AbmilConfig, AbmilVars, Bag};
pub use probe::{argmax, probe_loss, train_linear_probe, LinearProbe, ProbeConfig};
pub use ridge::{gene_pipeline, ridge_fit, select_top_variance_genes, GeneEval, RidgeModel};

use std::collections::BTreeSet;
use std::io::Write;

use thiserror::Error;

use crate::numeric::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("only one class present; need at least two")]
    SingleClass,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{rows} rows but {labels} labels")]
    RowLabelMismatch { rows: usize, labels: usize },
    #[error("feature dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("bag has no instances")]
    EmptyBag,
    #[error("k={k} exceeds index size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("singular system at lambda=0; set lambda > 0")]
    Singular,
    #[error("negative or non-finite lambda {0}")]
    BadLambda(f64),
    #[error("need at least 2 distinct patients, got {0}")]
    TooFewPatients(usize),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rows as a `[n, d]` tensor; rejects ragged or empty input.
pub fn to_matrix(rows: &[Vec<f64>]) -> Result<Tensor, DownstreamError> {
    let d = rows.first().ok_or(DownstreamError::Empty)?.len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(DownstreamError::DimensionMismatch { expected: d, got: r.len() });
    }
    Ok(Tensor::from_rows(rows)?)
}

/// Checks labels against the class count and the row count, and that at
/// least two classes occur.
pub fn check_labels(labels: &[usize], classes: usize, rows: usize) -> Result<(), DownstreamError> {
    if rows != labels.len() {
        return Err(DownstreamError::RowLabelMismatch { rows, labels: labels.len() });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(DownstreamError::LabelOutOfRange { label, classes });
    }
    if labels.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(DownstreamError::SingleClass);
    }
    Ok(())
}

/// Row order sorted by label, then by the bit patterns of the features.
pub fn canonical_order(features: &[Vec<f64>], labels: &[usize]) -> Vec<usize> {
    let key = |i: usize| (labels[i], features[i].iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by_cached_key(|&i| key(i));
    idx
}

/// Leave-one-patient-out folds, ordered by patient id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<String>,
}

impl FoldPlan {
    /// Training and held-out sample indices for fold `k`.
    pub fn split(&self, k: usize, patients: &[String]) -> (Vec<usize>, Vec<usize>) {
        let held = &self.folds[k];
        (0..patients.len()).partition(|&i| &patients[i] != held)
    }
}

pub fn make_patient_folds(patients: &[String]) -> Result<FoldPlan, DownstreamError> {
    let unique: BTreeSet<&String> = patients.iter().collect();
    if unique.len() < 2 {
        return Err(DownstreamError::TooFewPatients(unique.len()));
    }
    Ok(FoldPlan { folds: unique.into_iter().cloned().collect() })
}

/// `id,true_label,score_0,...,score_{C-1}`.
pub fn write_predictions<W: Write>(
    out: W,
    ids: &[String],
    labels: &[usize],
    scores: &[Vec<f64>],
) -> Result<(), DownstreamError> {
    let classes = scores.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "true_label".to_string()];
    header.extend((0..classes).map(|c| format!("score_{c}")));
    w.write_record(&header)?;
    for ((id, y), s) in ids.iter().zip(labels).zip(scores) {
        let mut rec = vec![id.clone(), y.to_string()];
        rec.extend(s.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `query_id,rank,neighbor_id,label,distance`, ranks starting at 1.
pub fn write_retrieval<W: Write>(out: W, results: &[(String, Vec<Neighbor>)]) -> Result<(), DownstreamError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query_id", "rank", "neighbor_id", "label", "distance"])?;
    for (q, neigh) in results {
        for (r, n) in neigh.iter().enumerate() {
            w.write_record([
                q.clone(),
                (r + 1).to_string(),
                n.id.clone(),
                n.label.to_string(),
                n.distance.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn three_patients_give_three_disjoint_folds() {
        let p = ids(&["C", "A", "B", "A", "C"]);
        let plan = make_patient_folds(&p).unwrap();
        assert_eq!(plan.folds, ids(&["A", "B", "C"]));
        for k in 0..3 {
            let (train, test) = plan.split(k, &p);
            assert!(test.iter().all(|&i| p[i] == plan.folds[k]));
            assert!(train.iter().all(|&i| p[i] != plan.folds[k]));
            assert_eq!(train.len() + test.len(), p.len());
        }
    }

    #[test]
    fn single_patient_is_rejected() {
        assert!(make_patient_folds(&ids(&["A", "A"])).is_err());
    }

    #[test]
    fn labels_are_validated() {
        assert!(matches!(check_labels(&[0, 2], 2, 2), Err(DownstreamError::LabelOutOfRange { .. })));
        assert!(matches!(check_labels(&[0, 1], 2, 3), Err(DownstreamError::RowLabelMismatch { .. })));
        assert!(check_labels(&[1, 0], 2, 2).is_ok());
    }

    #[test]
    fn prediction_csv_layout() {
        let mut buf = Vec::new();
        write_predictions(&mut buf, &ids(&["s1"]), &[1], &[vec![0.25, 0.75]]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "id,true_label,score_0,score_1\ns1,1,0.25,0.75\n");
    }
}
