//! Report composition and canonical JSON.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{IhcCall, IhcStatus, LymphomaSubtype, Marker, PanelSpec, ReportError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LymphomaReport {
    patient: String,
    subtype: LymphomaSubtype,
    panel: Vec<Marker>,
    /// Exactly the panel markers.
    ihc: BTreeMap<Marker, IhcStatus>,
}

impl LymphomaReport {
    pub fn patient(&self) -> &str {
        &self.patient
    }

    pub fn subtype(&self) -> LymphomaSubtype {
        self.subtype
    }

    pub fn panel(&self) -> &[Marker] {
        &self.panel
    }

    pub fn ihc(&self) -> &BTreeMap<Marker, IhcStatus> {
        &self.ihc
    }

    /// Status of `marker`, or `None` when it is not on this report's panel.
    pub fn status(&self, marker: &Marker) -> Option<IhcStatus> {
        self.ihc.get(marker).copied()
    }

    /// Panel markers reported as missing, in panel order.
    pub fn missing(&self) -> Vec<&Marker> {
        self.panel.iter().filter(|m| self.ihc[*m] == IhcStatus::Missing).collect()
    }
}

/// Picks the panel for `subtype`; panel markers without a prediction are
/// reported missing, and predictions for markers off the panel are dropped.
pub fn compose_lymphoma(
    patient: &str,
    subtype: LymphomaSubtype,
    ihc_preds: &BTreeMap<String, IhcCall>,
    panels: &PanelSpec,
) -> Result<LymphomaReport, ReportError> {
    let preds: BTreeMap<Marker, IhcCall> =
        ihc_preds.iter().map(|(k, &v)| Marker::parse(k).map(|m| (m, v))).collect::<Result<_, _>>()?;
    let panel = panels.panel(subtype)?.to_vec();
    for m in preds.keys().filter(|m| !panel.contains(m)) {
        log::debug!("patient {patient}: {m} is not on the {subtype} panel; dropped");
    }
    let ihc = panel.iter().map(|m| (m.clone(), preds.get(m).map_or(IhcStatus::Missing, |&c| c.into()))).collect();
    Ok(LymphomaReport { patient: patient.to_string(), subtype, panel, ihc })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Malignancy {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grade {
    Cancerous,
    LowGrade,
    HighGrade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polyp {
    Hyperplastic,
    Inflammatory,
    PolypoidHyperplasia,
    None,
}

/// A grade exists only on positive findings and a polyp type only on
/// negative ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finding {
    Positive { grade: Grade },
    Negative { polyp: Polyp },
}

impl Finding {
    pub fn malignancy(self) -> Malignancy {
        match self {
            Finding::Positive { .. } => Malignancy::Positive,
            Finding::Negative { .. } => Malignancy::Negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorectalReport {
    pub patient: String,
    pub finding: Finding,
}

pub fn compose_colorectal(
    patient: &str,
    malignancy: Malignancy,
    grade: Option<Grade>,
    polyp: Option<Polyp>,
) -> Result<ColorectalReport, ReportError> {
    let finding = match (malignancy, grade, polyp) {
        (Malignancy::Positive, _, Some(_)) => {
            return Err(ReportError::Schema("a positive finding cannot carry a polyp type".into()))
        }
        (Malignancy::Positive, None, None) => {
            return Err(ReportError::Schema("a positive finding needs a grade".into()))
        }
        (Malignancy::Positive, Some(grade), None) => Finding::Positive { grade },
        (Malignancy::Negative, Some(_), _) => {
            return Err(ReportError::Schema("a negative finding cannot carry a grade".into()))
        }
        (Malignancy::Negative, None, polyp) => Finding::Negative { polyp: polyp.unwrap_or(Polyp::None) },
    };
    Ok(ColorectalReport { patient: patient.to_string(), finding })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Report {
    Lymphoma(LymphomaReport),
    Colorectal(ColorectalReport),
}

fn enum_str<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("unit enums serialize")
}

fn take<T: for<'de> Deserialize<'de>>(obj: &mut Map<String, Value>, key: &str) -> Result<Option<T>, ReportError> {
    obj.remove(key)
        .map(|v| serde_json::from_value(v).map_err(|e| ReportError::Json(format!("field {key}: {e}"))))
        .transpose()
}

fn need<T: for<'de> Deserialize<'de>>(obj: &mut Map<String, Value>, key: &str) -> Result<T, ReportError> {
    take(obj, key)?.ok_or_else(|| ReportError::Json(format!("missing field {key}")))
}

impl Report {
    pub fn patient(&self) -> &str {
        match self {
            Report::Lymphoma(r) => &r.patient,
            Report::Colorectal(r) => &r.patient,
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            Report::Lymphoma(r) => json!({
                "patient": r.patient,
                "disease": "lymphoma",
                "subtype": enum_str(r.subtype),
                "panel": r.panel,
                "ihc": r.ihc.iter().map(|(m, s)| (m.to_string(), enum_str(s))).collect::<Map<_, _>>(),
            }),
            Report::Colorectal(r) => {
                let mut v = json!({
                    "patient": r.patient,
                    "disease": "colorectal",
                    "malignancy": enum_str(r.finding.malignancy()),
                });
                match r.finding {
                    Finding::Positive { grade } => v["grade"] = enum_str(grade),
                    Finding::Negative { polyp } => v["polyp"] = enum_str(polyp),
                }
                v
            }
        }
    }

    /// Compact JSON with lexicographically sorted keys.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(&self.to_value()).expect("value serializes")
    }

    /// Parses and re-validates a report; unknown fields are rejected.
    pub fn from_value(v: Value) -> Result<Self, ReportError> {
        let Value::Object(mut obj) = v else {
            return Err(ReportError::Json("report must be an object".into()));
        };
        let patient: String = need(&mut obj, "patient")?;
        let disease: String = need(&mut obj, "disease")?;
        let report = match disease.as_str() {
            "lymphoma" => {
                let subtype: LymphomaSubtype = need(&mut obj, "subtype")?;
                let panel: Vec<Marker> = need(&mut obj, "panel")?;
                let ihc: BTreeMap<Marker, IhcStatus> = need(&mut obj, "ihc")?;
                let mut sorted = panel.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != panel.len() || !sorted.iter().eq(ihc.keys()) {
                    return Err(ReportError::Schema("ihc entries must match the panel exactly".into()));
                }
                Report::Lymphoma(LymphomaReport { patient, subtype, panel, ihc })
            }
            "colorectal" => {
                let malignancy: Malignancy = need(&mut obj, "malignancy")?;
                let grade: Option<Grade> = take(&mut obj, "grade")?;
                let polyp: Option<Polyp> = take(&mut obj, "polyp")?;
                if malignancy == Malignancy::Negative && polyp.is_none() {
                    return Err(ReportError::Schema("a negative report must state its polyp type".into()));
                }
                Report::Colorectal(compose_colorectal(&patient, malignancy, grade, polyp)?)
            }
            other => return Err(ReportError::Json(format!("unknown disease {other:?}"))),
        };
        if let Some(k) = obj.keys().next() {
            return Err(ReportError::Json(format!("unknown field {k}")));
        }
        Ok(report)
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Self::from_value(serde_json::from_str(text).map_err(|e| ReportError::Json(e.to_string()))?)
    }
}
