//! Failure kinds and their process exit codes.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Unclassified runtime failure.
    Runtime,
    ConfigNotFound,
    /// Unknown key, type mismatch, range violation or unsupported version.
    BadConfig,
    /// A model checkpoint is missing or unreadable.
    MissingModel,
    /// Input data does not match its documented schema.
    BadData,
    /// The constructed network exceeded its certification tolerance.
    CertificationFailed,
    /// Training loss became non-finite or exceeded the divergence threshold.
    Diverged,
    Io,
}

impl Kind {
    /// `2` is reserved for command-line usage errors reported by the argument parser.
    pub fn code(self) -> u8 {
        match self {
            Self::Runtime => 1,
            Self::ConfigNotFound => 3,
            Self::BadConfig => 4,
            Self::MissingModel => 5,
            Self::BadData => 6,
            Self::CertificationFailed => 7,
            Self::Diverged => 8,
            Self::Io => 9,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

/// Exit code for an error chain: an explicit [`Failure`] wins, then known library errors.
pub fn classify(err: &anyhow::Error) -> Kind {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind;
        }
        if let Some(e) = cause.downcast_ref::<tinyformer::Error>() {
            match e {
                tinyformer::Error::Diverged { .. } => return Kind::Diverged,
                tinyformer::Error::Checkpoint { .. } | tinyformer::Error::ShapeMismatch { .. } => return Kind::MissingModel,
                _ => {}
            }
        }
        if let Some(e) = cause.downcast_ref::<eb_harness::Error>() {
            match e {
                eb_harness::Error::Schema { .. } | eb_harness::Error::EmptyTasks(_) | eb_harness::Error::Csv(_) => {
                    return Kind::BadData
                }
                eb_harness::Error::Model(tinyformer::Error::Checkpoint { .. } | tinyformer::Error::Io(_)) => {
                    return Kind::MissingModel
                }
                _ => {}
            }
        }
    }
    Kind::Runtime
}
