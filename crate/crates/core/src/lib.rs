//! Desk-scale self-supervised pathology pipeline.
//!
//! Tiled slide storage and patch sampling feed a small DINO/iBOT/KoLeo
//! student-teacher trainer; frozen teacher features are evaluated with linear
//! probes, attention MIL, retrieval and ridge regression over a registry of
//! 112 task descriptors, and lymphoma/colorectal predictions are composed into
//! structured reports.

pub mod downstream;
pub mod harness;
pub mod metrics;
pub mod numeric;
pub mod report;
pub mod slide;
pub mod ssl;
pub mod synth;
