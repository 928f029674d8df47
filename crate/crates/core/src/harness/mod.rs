//! Task registry, seeded splits, synthetic fixtures, protocol runs and
//! result aggregation.

mod aggregate;
mod fixture;
mod registry;
mod run;
mod split;

pub use aggregate::{aggregate, write_outputs, Summary, TaskRow};
pub use fixture::{
    generate_fixture, Fixture, FixtureData, FixtureFamily, FixtureOptions, FixtureParams, ImageBag, CANVAS, GENE_COUNT,
    PATCH_SIDE, SEG_SIDE,
};
pub use registry::{
    category_counts, load_registry, parse_registry, Category, Level, Protocol, ReportedCounts, SplitRatio, SplitSpec,
    TaskDescriptor, TaskHyper, REGISTRY_JSON, TASK_COUNT,
};
pub use run::{run_suite, run_task, task_seed, RunConfig, RunResult};
pub use split::{split_dataset, Splits};

use thiserror::Error;

use crate::downstream::DownstreamError;
use crate::metrics::MetricError;
use crate::slide::SlideError;
use crate::ssl::SslError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("registry line {line}: {message}")]
    Registry { line: usize, message: String },
    #[error("split: {0}")]
    Split(String),
    #[error("task {task} ({protocol}) cannot run on fixture {family}")]
    FixtureMismatch { task: u32, protocol: String, family: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("task {0} is not in the registry")]
    UnknownTask(u32),
    #[error("task {0} has more than one result")]
    DuplicateResult(u32),
    #[error("no results to aggregate")]
    NoResults,
    #[error("task {task} did not produce metric {metric}")]
    MissingMetric { task: u32, metric: String },
    #[error("task {task}: metric {metric} is not finite")]
    NonFinite { task: u32, metric: String },
    #[error(transparent)]
    Downstream(#[from] DownstreamError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Ssl(#[from] SslError),
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
