use thiserror::Error;

use crate::types::ProcessId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("infeasible topology spec: {0}")]
    InfeasibleSpec(String),
    #[error("no {required}-connected regular graph found after {attempts} attempts")]
    GenerationExhausted { required: usize, attempts: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("path of {0} hops exceeds the 16-bit length field")]
    PathTooLong(usize),
    #[error("payload of {0} bytes exceeds the 32-bit size field")]
    PayloadTooLarge(usize),
    #[error("local payload ID {id} does not fit in {bits} bits")]
    LocalIdTooWide { id: u32, bits: u8 },
    #[error("message not encodable under this configuration: {0}")]
    Invalid(&'static str),
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathStoreError {
    #[error("store holds {0} paths; brute force is limited to 20")]
    StoreTooLarge(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("local payload IDs exhausted ({0} bits)")]
    LocalIdExhausted(u8),
    #[error("malformed path from {0}")]
    MalformedPath(ProcessId),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("graph is not {required}-connected (connectivity {actual})")]
    Infeasible { required: usize, actual: usize },
    #[error("simulation did not quiesce within {0} events")]
    NonQuiescent(u64),
    #[error("adversary plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("dump output: {0}")]
    Output(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown modification `{0}`")]
    UnknownModification(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("rows do not match: {0}")]
    KeyMismatch(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
