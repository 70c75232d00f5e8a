//! Error type shared by every module.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Height label outside the accepted [100, 250] cm gate.
    HeightOutOfRange { id: String, height_cm: f64 },
    /// Descriptor or feature vector has the wrong dimension.
    DescriptorDimMismatch { context: String, expected: usize, got: usize },
    /// Height text could not be resolved to a unit (values in [3, 100)).
    AmbiguousUnit(String),
    /// An operation received an empty input it cannot handle.
    EmptyInput(&'static str),
    /// The exhaustive matching oracle only runs on matrices up to 8x8.
    OracleTooLarge { rows: usize, cols: usize },
    /// A crop could not be formed (too few joints, zero area).
    DegenerateCrop(String),
    /// All visible joints coincide; keypoints cannot be whitened.
    ZeroScale,
    /// Tensor shapes do not agree.
    ShapeError(String),
    /// A loss was requested over zero samples.
    EmptyBatch,
    /// Classification label is not 0 or 1.
    LabelError(f64),
    /// A non-finite value appeared in a forward pass, gradient or update.
    DivergenceFault { step: usize, context: String },
    /// Configuration or argument violates a structural contract.
    SpecError(String),
    /// Normal equations are singular and no ridge term was supplied.
    SingularSystem,
    /// A model stream needs an input the feature bundle does not carry.
    StreamInputMissing(&'static str),
    /// Gender-conditioned training found no usable labeled rows.
    InsufficientLabels,
    /// The same (image, subject) pair produced two examples.
    DuplicateExample { image_id: String, subject_id: String },
    /// A candidate subject id does not resolve against the subject store.
    UnknownSubject { image_id: String, subject_id: String },
    /// Dataset too small to be split.
    TooSmall { have: usize, need: usize },
    /// A pipeline stage failed; partial outputs are quarantined.
    StageFailure { stage: String, cause: Box<Error> },
    /// Output was produced under a different configuration.
    ConfigHashMismatch { path: String, expected: String, found: String },
    Io(std::io::Error),
    Json(serde_json::Error),
    Parse(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::HeightOutOfRange { id, height_cm } => {
                write!(f, "subject '{id}': height {height_cm} cm outside [100, 250]")
            }
            Error::DescriptorDimMismatch { context, expected, got } => {
                write!(f, "{context}: descriptor dimension {got}, expected {expected}")
            }
            Error::AmbiguousUnit(text) => write!(f, "ambiguous height unit in '{text}'"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::OracleTooLarge { rows, cols } => {
                write!(f, "oracle limited to 8x8, got {rows}x{cols}")
            }
            Error::DegenerateCrop(why) => write!(f, "degenerate crop: {why}"),
            Error::ZeroScale => write!(f, "all visible joints coincide, zero whitening scale"),
            Error::ShapeError(why) => write!(f, "shape mismatch: {why}"),
            Error::EmptyBatch => write!(f, "loss over an empty batch"),
            Error::LabelError(v) => write!(f, "classification label {v} is not 0 or 1"),
            Error::DivergenceFault { step, context } => {
                write!(f, "non-finite value at step {step}: {context}")
            }
            Error::SpecError(why) => write!(f, "invalid specification: {why}"),
            Error::SingularSystem => write!(f, "singular normal equations (try ridge > 0)"),
            Error::StreamInputMissing(which) => write!(f, "missing stream input: {which}"),
            Error::InsufficientLabels => write!(f, "no usable gender-labeled rows"),
            Error::DuplicateExample { image_id, subject_id } => {
                write!(f, "duplicate example for image '{image_id}', subject '{subject_id}'")
            }
            Error::UnknownSubject { image_id, subject_id } => {
                write!(f, "image '{image_id}': candidate '{subject_id}' not in subject store")
            }
            Error::TooSmall { have, need } => {
                write!(f, "dataset of {have} examples cannot satisfy {need} splits")
            }
            Error::StageFailure { stage, cause } => write!(f, "stage '{stage}' failed: {cause}"),
            Error::ConfigHashMismatch { path, expected, found } => {
                write!(f, "'{path}' was produced under config {found}, expected {expected} (use --force to override)")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "record parse error: {e}"),
            Error::Parse(why) => write!(f, "parse error: {why}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            Error::StageFailure { cause, .. } => Some(cause),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl Error {
    /// Process exit code for the CLI: 2 validation, 3 stage failure, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DivergenceFault { .. } => 4,
            Error::StageFailure { cause, .. } => cause.exit_code().max(3),
            Error::Io(_) => 3,
            _ => 2,
        }
    }
}
