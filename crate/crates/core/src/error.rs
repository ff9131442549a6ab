//! Error type shared by all core modules.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// The two 6D-rotation vectors are too close to parallel (or zero) for
    /// Gram-Schmidt to produce a frame.
    DegenerateRotation,
    IndexOutOfRange { index: usize, len: usize },
    TooFewPoints { needed: usize, got: usize },
    /// All relative motions are numerically identity; no screw axis exists.
    DegenerateMotion,
    NonFiniteLoss { iteration: usize },
    OracleShapeMismatch { expected: usize, got: usize },
    LengthMismatch { left: usize, right: usize },
    MissingGroundTruth,
    MissingState { edge: usize, step: usize },
    UnknownLabel { label: usize },
    EmptyPart { part: usize },
    InvalidInput(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DegenerateRotation => write!(f, "degenerate 6D rotation input"),
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range (len {len})")
            }
            Error::TooFewPoints { needed, got } => {
                write!(f, "need at least {needed} points, got {got}")
            }
            Error::DegenerateMotion => write!(f, "relative motions are identity; no axis defined"),
            Error::NonFiniteLoss { iteration } => {
                write!(f, "non-finite loss at iteration {iteration}")
            }
            Error::OracleShapeMismatch { expected, got } => {
                write!(f, "flow oracle returned {got} motions, expected {expected}")
            }
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::MissingGroundTruth => write!(f, "dataset has no ground truth"),
            Error::MissingState { edge, step } => {
                write!(f, "no joint state for edge {edge} at step {step}")
            }
            Error::UnknownLabel { label } => write!(f, "label {label} references no part"),
            Error::EmptyPart { part } => write!(f, "part {part} has no assigned points"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
        }
    }
}
