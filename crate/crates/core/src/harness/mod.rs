//! Synthetic ground-truth data and multi-seed method comparisons.

pub mod compare;
pub mod matching;
pub mod synth;

pub use compare::{compare, Cell, CellOutcome, ComparisonReport, MethodSummary};
pub use matching::{matched_accuracy, min_cost_assignment};
pub use synth::{generate, sample_mixture, GroundTruth, SynthSpec};
