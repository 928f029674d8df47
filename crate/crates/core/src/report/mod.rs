//! Structured lymphoma and colorectal reports composed from subtask
//! predictions, with explicit missing stains and agreement scoring.

mod agreement;
mod compose;

pub use agreement::{agreement, AgreementCell, AgreementMatrix, CellState};
pub use compose::{
    compose_colorectal, compose_lymphoma, ColorectalReport, Finding, Grade, LymphomaReport, Malignancy, Polyp, Report,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Closed IHC marker vocabulary.
pub const MARKERS: [&str; 30] = [
    "CD5",
    "CD3",
    "CD20",
    "CD79a",
    "CD21",
    "EBER",
    "CD10",
    "Bcl-6",
    "Bcl-2",
    "MUM-1",
    "CD4",
    "CD23",
    "PD-1",
    "Cyclin D1",
    "CD19",
    "CD22",
    "CD8",
    "C-myc",
    "CD56",
    "Granzyme B",
    "TIA-1",
    "Perforin",
    "CD2",
    "CD30",
    "CD7",
    "CD38",
    "ICOS",
    "CXCL-13",
    "ALK",
    "PD-L1",
];

/// Shipped AITL and DLBCL panels.
pub const PANELS_JSON: &str = include_str!("../../registry/panels.json");

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("unknown marker {0:?}")]
    UnknownMarker(String),
    #[error("unknown lymphoma subtype {0:?}")]
    UnknownSubtype(String),
    #[error("no panel configured for subtype {0}")]
    NoPanel(LymphomaSubtype),
    #[error("panel for {subtype} lists {marker} twice")]
    DuplicateMarker { subtype: LymphomaSubtype, marker: Marker },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("patient sets differ: {0}")]
    PatientMismatch(String),
    #[error("malformed report JSON: {0}")]
    Json(String),
}

/// A marker name from [`MARKERS`], matched exactly.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Marker(String);

impl Marker {
    pub fn parse(name: &str) -> Result<Self, ReportError> {
        if MARKERS.contains(&name) {
            Ok(Self(name.to_string()))
        } else {
            Err(ReportError::UnknownMarker(name.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Marker {
    type Error = ReportError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Marker::parse(&s)
    }
}

impl From<Marker> for String {
    fn from(m: Marker) -> Self {
        m.0
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LymphomaSubtype {
    #[serde(rename = "FL")]
    Fl,
    #[serde(rename = "AITL")]
    Aitl,
    #[serde(rename = "DLBCL")]
    Dlbcl,
    #[serde(rename = "NKT")]
    Nkt,
    #[serde(rename = "reactive")]
    Reactive,
}

impl LymphomaSubtype {
    pub const ALL: [LymphomaSubtype; 5] = [
        LymphomaSubtype::Fl,
        LymphomaSubtype::Aitl,
        LymphomaSubtype::Dlbcl,
        LymphomaSubtype::Nkt,
        LymphomaSubtype::Reactive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LymphomaSubtype::Fl => "FL",
            LymphomaSubtype::Aitl => "AITL",
            LymphomaSubtype::Dlbcl => "DLBCL",
            LymphomaSubtype::Nkt => "NKT",
            LymphomaSubtype::Reactive => "reactive",
        }
    }
}

impl fmt::Display for LymphomaSubtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LymphomaSubtype {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| ReportError::UnknownSubtype(s.to_string()))
    }
}

/// A stain call supplied as input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IhcCall {
    Positive,
    Negative,
}

/// A stain status in a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IhcStatus {
    Positive,
    Negative,
    Missing,
}

impl IhcStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            IhcStatus::Positive => "positive",
            IhcStatus::Negative => "negative",
            IhcStatus::Missing => "missing",
        }
    }
}

impl From<IhcCall> for IhcStatus {
    fn from(c: IhcCall) -> Self {
        match c {
            IhcCall::Positive => IhcStatus::Positive,
            IhcCall::Negative => IhcStatus::Negative,
        }
    }
}

/// Subtype -> ordered marker list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<LymphomaSubtype, Vec<Marker>>", into = "BTreeMap<LymphomaSubtype, Vec<Marker>>")]
pub struct PanelSpec {
    panels: BTreeMap<LymphomaSubtype, Vec<Marker>>,
}

impl TryFrom<BTreeMap<LymphomaSubtype, Vec<Marker>>> for PanelSpec {
    type Error = ReportError;
    fn try_from(panels: BTreeMap<LymphomaSubtype, Vec<Marker>>) -> Result<Self, Self::Error> {
        for (&subtype, markers) in &panels {
            for (i, m) in markers.iter().enumerate() {
                if markers[..i].contains(m) {
                    return Err(ReportError::DuplicateMarker { subtype, marker: m.clone() });
                }
            }
        }
        Ok(Self { panels })
    }
}

impl From<PanelSpec> for BTreeMap<LymphomaSubtype, Vec<Marker>> {
    fn from(p: PanelSpec) -> Self {
        p.panels
    }
}

impl PanelSpec {
    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Json(e.to_string()))
    }

    /// The AITL and DLBCL panels compiled into the artifact.
    pub fn shipped() -> Self {
        Self::from_json(PANELS_JSON).expect("shipped panels are valid")
    }

    pub fn panel(&self, subtype: LymphomaSubtype) -> Result<&[Marker], ReportError> {
        self.panels.get(&subtype).map(Vec::as_slice).ok_or(ReportError::NoPanel(subtype))
    }
}
