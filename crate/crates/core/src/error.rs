use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid value at {index}: {reason}")]
    Validation { index: String, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("windows are not sorted by start time (position {0})")]
    Unsorted(usize),
    #[error("need at least {needed} windows to split, got {got}")]
    TooFewWindows { needed: usize, got: usize },
    #[error("time indices of flow and weather tensors differ")]
    TimeIndexMismatch,
    #[error("series of {total} steps is shorter than history {history} + horizon {horizon}")]
    SeriesTooShort { total: usize, history: usize, horizon: usize },
    #[error("unknown parcel ids: {0:?}")]
    UnknownParcels(Vec<String>),
    #[error("no trip records")]
    NoRecords,
    #[error("no station reading for attribute {attribute} at hour {hour}")]
    Gap { attribute: String, hour: i64 },
    #[error("calendar index out of range: {0}")]
    Calendar(String),
    #[error("non-finite activation in {stage} block {block}")]
    NonFinite { stage: &'static str, block: usize },
    #[error("no normal reference matches day type {day_type} at hour {hour}")]
    NoReferenceMatch { day_type: &'static str, hour: u8 },
    #[error("checkpoint does not match model configuration: {0}")]
    CheckpointMismatch(String),
}
