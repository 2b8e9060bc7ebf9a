use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cell radius must be positive and finite, got {0}")]
    InvalidRadius(f64),

    #[error("kernel offsets {first} and {second} are {distance:.12} apart; lattice spacing is {expected:.12}")]
    LatticeViolation {
        first: usize,
        second: usize,
        distance: f64,
        expected: f64,
    },

    #[error("offset {index} does not lie on the close-packed lattice")]
    OffLattice { index: usize },

    #[error("{op} requires a sphere-packed kernel")]
    CubeKernel { op: &'static str },

    #[error("empty kernel: at least one cell offset is required")]
    EmptyKernel,

    #[error("monte-carlo coverage needs at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("cannot sample {requested} points from a cloud of {available}")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("density needs at least one feature channel")]
    NoFeatures,

    #[error("density value {value} at point {index} must be positive")]
    NonPositiveDensity { index: usize, value: f64 },

    #[error("backward cache does not match the supplied gradient: {0}")]
    CacheMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config line {line}: {message} (`{token}`)")]
    ConfigParse {
        line: usize,
        token: String,
        message: String,
    },

    #[error("every point in the batch carries the ignore label; step skipped")]
    AllIgnored,

    #[error("training and evaluation need labelled clouds")]
    MissingLabels,

    #[error("label {label} out of range for {n_classes} classes")]
    LabelRange { label: u32, n_classes: usize },

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },

    #[error("{path}: truncated at byte {offset}: expected {expected} bytes, {available} available")]
    Truncated {
        path: PathBuf,
        offset: u64,
        expected: u64,
        available: u64,
    },

    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    RowWidth {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}: cannot parse `{token}`")]
    ParseValue {
        path: PathBuf,
        line: usize,
        token: String,
    },

    #[error("{path}: unsupported format version {version} (newest known is {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        version: u32,
        supported: u32,
    },

    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),

    #[error("point {0} is not covered by any tile")]
    Uncovered(usize),

    #[error("scene spec has no primitives")]
    EmptySpec,

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach `path` to an I/O failure.
    pub fn file(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn shape(what: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            what,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
