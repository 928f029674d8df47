//! Per-patient, per-marker agreement between model and reference reports.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{IhcStatus, LymphomaReport, Marker, ReportError, MARKERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellState {
    Agree,
    Disagree,
    /// Either side lacks a call; excluded from rates.
    Missing,
}

impl CellState {
    pub fn as_str(self) -> &'static str {
        match self {
            CellState::Agree => "agree",
            CellState::Disagree => "disagree",
            CellState::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementCell {
    pub patient: String,
    pub marker: Marker,
    pub model: IhcStatus,
    pub truth: IhcStatus,
    pub state: CellState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    /// Patients ascending; within a patient, markers in vocabulary order over
    /// the union of both panels.
    pub cells: Vec<AgreementCell>,
    pub agree: usize,
    pub disagree: usize,
    pub missing: usize,
    /// Per-marker `agree / (agree + disagree)`, `None` without comparable cells.
    pub per_marker: BTreeMap<Marker, Option<f64>>,
}

fn rate(agree: usize, disagree: usize) -> Option<f64> {
    (agree + disagree > 0).then(|| agree as f64 / (agree + disagree) as f64)
}

impl AgreementMatrix {
    /// `agree / (agree + disagree)`; `None` when no cell is comparable.
    pub fn rate(&self) -> Option<f64> {
        rate(self.agree, self.disagree)
    }

    /// `patient,marker,model,truth,cell` rows.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["patient", "marker", "model", "truth", "cell"])?;
        for c in &self.cells {
            w.write_record([
                c.patient.as_str(),
                c.marker.as_str(),
                c.model.as_str(),
                c.truth.as_str(),
                c.state.as_str(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 fields"))
    }
}

fn by_patient(reports: &[LymphomaReport], side: &str) -> Result<BTreeMap<String, LymphomaReport>, ReportError> {
    let mut out = BTreeMap::new();
    for r in reports {
        if out.insert(r.patient().to_string(), r.clone()).is_some() {
            return Err(ReportError::PatientMismatch(format!("{side} lists patient {} twice", r.patient())));
        }
    }
    Ok(out)
}

/// Compares lymphoma reports patient by patient. A marker absent from one
/// side's panel counts as missing on that side.
pub fn agreement(model: &[LymphomaReport], truth: &[LymphomaReport]) -> Result<AgreementMatrix, ReportError> {
    let (m, t) = (by_patient(model, "model")?, by_patient(truth, "truth")?);
    let (mk, tk): (BTreeSet<&String>, BTreeSet<&String>) = (m.keys().collect(), t.keys().collect());
    if mk != tk {
        let only: Vec<&&String> = mk.symmetric_difference(&tk).collect();
        return Err(ReportError::PatientMismatch(format!("unmatched patients {only:?}")));
    }
    let mut cells = Vec::new();
    let mut tally: BTreeMap<Marker, (usize, usize)> = BTreeMap::new();
    let (mut agree, mut disagree, mut missing) = (0, 0, 0);
    for (patient, mr) in &m {
        let tr = &t[patient];
        for name in MARKERS {
            let marker = Marker::parse(name).expect("vocabulary marker");
            let (ms, ts) = (mr.status(&marker), tr.status(&marker));
            if ms.is_none() && ts.is_none() {
                continue;
            }
            let (ms, ts) = (ms.unwrap_or(IhcStatus::Missing), ts.unwrap_or(IhcStatus::Missing));
            let e = tally.entry(marker.clone()).or_insert((0, 0));
            let state = if ms == IhcStatus::Missing || ts == IhcStatus::Missing {
                missing += 1;
                CellState::Missing
            } else if ms == ts {
                agree += 1;
                e.0 += 1;
                CellState::Agree
            } else {
                disagree += 1;
                e.1 += 1;
                CellState::Disagree
            };
            cells.push(AgreementCell { patient: patient.clone(), marker, model: ms, truth: ts, state });
        }
    }
    let per_marker = tally.into_iter().map(|(k, (a, d))| (k, rate(a, d))).collect();
    Ok(AgreementMatrix { cells, agree, disagree, missing, per_marker })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{compose_lymphoma, IhcCall, LymphomaSubtype, PanelSpec};
    use proptest::prelude::*;

    fn report(patient: &str, calls: &[(&str, IhcCall)]) -> LymphomaReport {
        let preds = calls.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        compose_lymphoma(patient, LymphomaSubtype::Aitl, &preds, &PanelSpec::shipped()).unwrap()
    }

    const FOUR: [&str; 4] = ["CD3", "CD4", "CD8", "PD-1"];

    fn four(flip: Option<usize>) -> LymphomaReport {
        let calls: Vec<(&str, IhcCall)> = FOUR
            .iter()
            .enumerate()
            .map(|(i, &m)| (m, if Some(i) == flip { IhcCall::Negative } else { IhcCall::Positive }))
            .collect();
        report("P1", &calls)
    }

    #[test]
    fn identical_reports_agree_fully() {
        let a = agreement(&[four(None)], &[four(None)]).unwrap();
        assert_eq!(a.rate(), Some(1.0));
        assert_eq!(a.cells.len(), PanelSpec::shipped().panel(LymphomaSubtype::Aitl).unwrap().len());
    }

    #[test]
    fn one_flip_in_four_comparable_cells() {
        let a = agreement(&[four(Some(2))], &[four(None)]).unwrap();
        assert_eq!((a.agree, a.disagree), (3, 1));
        assert_eq!(a.rate(), Some(0.75));
        assert_eq!(a.per_marker[&Marker::parse("CD8").unwrap()], Some(0.0));
    }

    #[test]
    fn all_model_cells_missing_has_no_rate() {
        let a = agreement(&[report("P1", &[])], &[four(None)]).unwrap();
        assert_eq!(a.rate(), None);
        assert_eq!(a.agree + a.disagree, 0);
    }

    #[test]
    fn patient_sets_must_match() {
        assert!(matches!(agreement(&[four(None)], &[report("P9", &[])]), Err(ReportError::PatientMismatch(_))));
    }

    #[test]
    fn csv_layout() {
        let csv = agreement(&[four(Some(0))], &[four(None)]).unwrap().to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("patient,marker,model,truth,cell"));
        assert!(csv.contains("P1,CD3,negative,positive,disagree\n"));
        assert!(csv.contains("P1,CD20,missing,missing,missing\n"));
    }

    proptest! {
        #[test]
        fn swapping_sides_keeps_counts(codes in prop::collection::vec((0u8..3, 0u8..3), 4)) {
            let pick = |c: u8| match c { 0 => Some(IhcCall::Positive), 1 => Some(IhcCall::Negative), _ => None };
            let side = |first: bool| {
                let calls: Vec<(&str, IhcCall)> = FOUR.iter().zip(&codes)
                    .filter_map(|(&m, &(a, b))| pick(if first { a } else { b }).map(|c| (m, c)))
                    .collect();
                report("P1", &calls)
            };
            let (x, y) = (side(true), side(false));
            let ab = agreement(std::slice::from_ref(&x), std::slice::from_ref(&y)).unwrap();
            let ba = agreement(&[y], &[x]).unwrap();
            prop_assert_eq!((ab.agree, ab.disagree, ab.missing), (ba.agree, ba.disagree, ba.missing));
        }
    }
}
