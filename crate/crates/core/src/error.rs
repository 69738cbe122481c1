use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty graph spec")]
    EmptyGraph,
    #[error("dangling node reference: edge {edge} references node {node}, graph has {nodes} nodes")]
    DanglingNode { edge: usize, node: usize, nodes: usize },
    #[error("edge {edge} is a self loop on node {node}")]
    SelfLoop { edge: usize, node: usize },
    #[error("zero-length edge {edge} between nodes {from} and {to}")]
    ZeroLengthEdge { edge: usize, from: usize, to: usize },
    #[error("edge {edge} has non-positive speed limit {limit}")]
    BadSpeedLimit { edge: usize, limit: f64 },
    #[error("disconnected graph: node {node} is unreachable from node 0")]
    DisconnectedGraph { node: usize },
    #[error("invalid range for {name}: [{lo}, {hi}]")]
    InvalidRange { name: &'static str, lo: f64, hi: f64 },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("non-positive distance {0} m")]
    NonPositiveDistance(f64),
    #[error("coincident endpoints")]
    CoincidentPoints,
    #[error("airborne endpoint must be above the ground endpoint (altitude difference {0} m)")]
    NonPositiveAltitude(f64),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("cannot place vehicles: {0}")]
    Placement(String),
    #[error("episode already finished")]
    EpisodeDone,
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("config error: {0}")]
    Config(String),
    #[error("unsupported checkpoint version")]
    UnsupportedCheckpoint,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("scenario fingerprint mismatch: checkpoint {found}, config {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Configuration-class errors map to CLI exit code 1, everything else to 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::EmptyGraph
                | Error::DanglingNode { .. }
                | Error::SelfLoop { .. }
                | Error::ZeroLengthEdge { .. }
                | Error::BadSpeedLimit { .. }
                | Error::DisconnectedGraph { .. }
                | Error::InvalidRange { .. }
                | Error::InvalidParam { .. }
                | Error::Placement(_)
                | Error::Config(_)
        )
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam { name, reason: reason.into() }
    }
}
