//! The shipped task registry and its schema checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Registry text compiled into the artifact.
pub const REGISTRY_JSON: &str = include_str!("../../registry/tasks.json");

pub const TASK_COUNT: u32 = 112;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    SlidePreprocessing,
    PanCancer,
    LesionIdentification,
    CancerSubtyping,
    BiomarkerEvaluation,
    GeneExpression,
    StructuredReport,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::SlidePreprocessing,
        Category::PanCancer,
        Category::LesionIdentification,
        Category::CancerSubtyping,
        Category::BiomarkerEvaluation,
        Category::GeneExpression,
        Category::StructuredReport,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::SlidePreprocessing => "slide-preprocessing",
            Category::PanCancer => "pan-cancer",
            Category::LesionIdentification => "lesion-identification",
            Category::CancerSubtyping => "cancer-subtyping",
            Category::BiomarkerEvaluation => "biomarker-evaluation",
            Category::GeneExpression => "gene-expression",
            Category::StructuredReport => "structured-report",
        }
    }

    /// Task count the registry must carry for this category.
    pub fn expected_count(self) -> usize {
        match self {
            Category::SlidePreprocessing => 12,
            Category::PanCancer => 3,
            Category::LesionIdentification => 15,
            Category::CancerSubtyping => 36,
            Category::BiomarkerEvaluation => 36,
            Category::GeneExpression => 10,
            Category::StructuredReport => 0,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "WSI")]
    Wsi,
    #[serde(rename = "ROI")]
    Roi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    LinearProbe,
    Abmil,
    Knn,
    Ridge,
    DetectionMetricsOnly,
    SegmentationMetricsOnly,
    Report,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::LinearProbe => "linear-probe",
            Protocol::Abmil => "abmil",
            Protocol::Knn => "knn",
            Protocol::Ridge => "ridge",
            Protocol::DetectionMetricsOnly => "detection-metrics-only",
            Protocol::SegmentationMetricsOnly => "segmentation-metrics-only",
            Protocol::Report => "report",
        }
    }

    /// Metric names this protocol is able to emit.
    pub fn supported_metrics(self) -> &'static [&'static str] {
        match self {
            Protocol::LinearProbe | Protocol::Abmil => &["accuracy", "balanced_accuracy", "weighted_f1", "auc"],
            Protocol::Knn => &["acc@1", "acc@3", "acc@5", "mvacc@5"],
            Protocol::Ridge => &["pearson_mean"],
            Protocol::DetectionMetricsOnly => &["map_bbox@0.5", "map_bbox@0.75", "map_seg@0.5", "map_seg@0.75"],
            Protocol::SegmentationMetricsOnly => &["mpa", "miou", "mean_dice", "precision", "recall"],
            Protocol::Report => &["agreement"],
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitRatio {
    #[serde(rename = "8:1:1")]
    R811,
    #[serde(rename = "6:4")]
    R64,
    #[serde(rename = "3:2")]
    R32,
    #[serde(rename = "7:2:1")]
    R721,
    #[serde(rename = "4:1")]
    R41,
    #[serde(rename = "9:1")]
    R91,
    #[serde(rename = "8:2")]
    R82,
    /// One fold per patient.
    #[serde(rename = "lopo")]
    LeaveOnePatientOut,
}

impl SplitRatio {
    /// Part weights in train, (val,) test order; empty for patient folds.
    pub fn weights(self) -> &'static [u32] {
        match self {
            SplitRatio::R811 => &[8, 1, 1],
            SplitRatio::R64 => &[6, 4],
            SplitRatio::R32 => &[3, 2],
            SplitRatio::R721 => &[7, 2, 1],
            SplitRatio::R41 => &[4, 1],
            SplitRatio::R91 => &[9, 1],
            SplitRatio::R82 => &[8, 2],
            SplitRatio::LeaveOnePatientOut => &[],
        }
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitRatio::LeaveOnePatientOut => f.write_str("lopo"),
            r => {
                let parts: Vec<String> = r.weights().iter().map(u32::to_string).collect();
                f.write_str(&parts.join(":"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub ratio: SplitRatio,
    /// Keep per-class proportions within one item in every part.
    pub stratified: bool,
    /// Split whole groups (slides or patients) rather than items.
    #[serde(default)]
    pub grouped: bool,
    /// False when the ratio was inferred from printed counts.
    #[serde(default)]
    pub stated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportedCounts {
    pub train: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<u64>,
    pub test: u64,
}

/// Training settings as printed for a task; absent entries fall back to the
/// protocol defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskHyper {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDescriptor {
    pub id: u32,
    pub name: String,
    pub dataset: String,
    pub open_source: bool,
    pub category: Category,
    pub level: Level,
    pub site: String,
    /// Slide or patch count of the source dataset.
    pub quantity: u64,
    pub protocol: Protocol,
    pub split: SplitSpec,
    pub metrics: Vec<String>,
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_counts: Option<ReportedCounts>,
    #[serde(default)]
    pub hyper: TaskHyper,
    /// Patient count of the gene-expression fixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patients: Option<usize>,
}

impl TaskDescriptor {
    fn check(&self) -> Result<(), String> {
        if !(1..=TASK_COUNT).contains(&self.id) {
            return Err(format!("id {} outside 1..={TASK_COUNT}", self.id));
        }
        if self.protocol == Protocol::Abmil && self.level != Level::Wsi {
            return Err(format!("task {}: abmil requires WSI level", self.id));
        }
        if self.metrics.is_empty() {
            return Err(format!("task {}: empty metric list", self.id));
        }
        let supported = self.protocol.supported_metrics();
        if let Some(m) = self.metrics.iter().find(|m| !supported.contains(&m.as_str())) {
            return Err(format!("task {}: metric {m} not produced by {}", self.id, self.protocol));
        }
        let lopo = self.split.ratio == SplitRatio::LeaveOnePatientOut;
        if lopo != (self.protocol == Protocol::Ridge) {
            return Err(format!("task {}: lopo splits go with ridge tasks only", self.id));
        }
        match self.protocol {
            Protocol::LinearProbe | Protocol::Abmil | Protocol::Knn if self.classes.len() < 2 => {
                Err(format!("task {}: needs at least 2 classes", self.id))
            }
            Protocol::DetectionMetricsOnly | Protocol::SegmentationMetricsOnly if self.classes.is_empty() => {
                Err(format!("task {}: needs class names", self.id))
            }
            Protocol::Ridge if self.patients.is_none_or(|p| p < 2) => {
                Err(format!("task {}: ridge needs at least 2 patients", self.id))
            }
            _ => Ok(()),
        }
    }
}

/// 1-based line of the `index`-th top-level array element.
fn element_line(text: &str, index: usize) -> usize {
    let (mut depth, mut seen, mut line) = (0usize, 0usize, 1usize);
    let (mut in_str, mut escaped) = (false, false);
    for ch in text.chars() {
        if ch == '\n' {
            line += 1;
        }
        if in_str {
            match (escaped, ch) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '{' | '[' => {
                if depth == 1 {
                    if seen == index {
                        return line;
                    }
                    seen += 1;
                }
                depth += 1;
            }
            '}' | ']' => depth = depth.saturating_sub(1),
            _ => {}
        }
    }
    line
}

/// Parses and validates registry text.
pub fn parse_registry(text: &str) -> Result<Vec<TaskDescriptor>, HarnessError> {
    let tasks: Vec<TaskDescriptor> =
        serde_json::from_str(text).map_err(|e| HarnessError::Registry { line: e.line(), message: e.to_string() })?;
    let at = |i: usize, message: String| HarnessError::Registry { line: element_line(text, i), message };
    let mut seen = BTreeSet::new();
    for (i, t) in tasks.iter().enumerate() {
        t.check().map_err(|m| at(i, m))?;
        if !seen.insert(t.id) {
            return Err(at(i, format!("duplicate task id {}", t.id)));
        }
    }
    if tasks.len() != TASK_COUNT as usize {
        return Err(HarnessError::Registry {
            line: 1,
            message: format!("expected {TASK_COUNT} tasks, found {}", tasks.len()),
        });
    }
    let counts = category_counts(&tasks);
    for c in Category::ALL {
        let got = counts.get(&c).copied().unwrap_or(0);
        if got != c.expected_count() {
            return Err(HarnessError::Registry {
                line: 1,
                message: format!("category {c} has {got} tasks, expected {}", c.expected_count()),
            });
        }
    }
    let mut tasks = tasks;
    tasks.sort_by_key(|t| t.id);
    Ok(tasks)
}

/// The shipped registry, sorted by id.
pub fn load_registry() -> Result<Vec<TaskDescriptor>, HarnessError> {
    parse_registry(REGISTRY_JSON)
}

pub fn category_counts(tasks: &[TaskDescriptor]) -> BTreeMap<Category, usize> {
    let mut out = BTreeMap::new();
    for t in tasks {
        *out.entry(t.category).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(reg: &[TaskDescriptor], id: u32) -> &TaskDescriptor {
        &reg[id as usize - 1]
    }

    #[test]
    fn shipped_registry_is_complete() {
        let reg = load_registry().unwrap();
        assert_eq!(reg.len(), 112);
        assert!(reg.iter().enumerate().all(|(i, t)| t.id as usize == i + 1));
        let counts = category_counts(&reg);
        assert_eq!(counts[&Category::SlidePreprocessing], 12);
        assert_eq!(counts[&Category::PanCancer], 3);
        assert_eq!(counts[&Category::LesionIdentification], 15);
        assert_eq!(counts[&Category::CancerSubtyping], 36);
        assert_eq!(counts[&Category::BiomarkerEvaluation], 36);
        assert_eq!(counts[&Category::GeneExpression], 10);
    }

    #[test]
    fn printed_split_ratios_are_carried() {
        let reg = load_registry().unwrap();
        assert_eq!(task(&reg, 51).split.ratio, SplitRatio::R82);
        assert_eq!(task(&reg, 52).split.ratio, SplitRatio::R721);
        assert_eq!(task(&reg, 13).split.ratio, SplitRatio::R811);
        assert_eq!(task(&reg, 103).split.ratio, SplitRatio::LeaveOnePatientOut);
        assert!(task(&reg, 51).split.stated);
    }

    #[test]
    fn printed_abmil_settings_are_carried() {
        let reg = load_registry().unwrap();
        let h = task(&reg, 13).hyper;
        assert_eq!((h.epochs, h.lr, h.batch), (Some(50), Some(2e-5), Some(1)));
        let h = task(&reg, 52).hyper;
        assert_eq!((h.epochs, h.lr, h.batch), (Some(40), Some(2e-4), Some(32)));
        assert_eq!(task(&reg, 47).classes, ["FL", "AITL", "DLBCL", "NKT", "reactive hyperplasia"]);
        assert_eq!(task(&reg, 15).classes.len(), 32);
    }

    #[test]
    fn syntax_errors_report_the_line() {
        let text = "[\n {\"id\": 1,\n  \"name\": }\n]";
        match parse_registry(text) {
            Err(HarnessError::Registry { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn semantic_errors_report_the_entry_line() {
        let mut reg = load_registry().unwrap();
        reg[4].level = Level::Roi;
        reg[4].protocol = Protocol::Abmil;
        let text = serde_json::to_string_pretty(&reg).unwrap();
        let err = parse_registry(&text).unwrap_err();
        let HarnessError::Registry { line, message } = err else { panic!() };
        assert!(message.contains("abmil requires WSI"));
        let entry = text.lines().position(|l| l.contains("\"id\": 5,")).unwrap() + 1;
        assert_eq!(line, entry - 1);
    }

    #[test]
    fn duplicate_ids_and_bad_totals_are_rejected() {
        let mut reg = load_registry().unwrap();
        reg[1].id = 1;
        let err = parse_registry(&serde_json::to_string(&reg).unwrap()).unwrap_err();
        assert!(err.to_string().contains("duplicate task id 1"));
        reg.truncate(1);
        let err = parse_registry(&serde_json::to_string(&reg).unwrap()).unwrap_err();
        assert!(err.to_string().contains("expected 112"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(REGISTRY_JSON).unwrap();
        v[0]["colour"] = serde_json::json!("red");
        assert!(parse_registry(&v.to_string()).is_err());
    }
}
