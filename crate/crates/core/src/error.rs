use thiserror::Error;

use crate::snn::Time;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SnnError {
    #[error("input at t={t} ms precedes the last update at t={last} ms")]
    NonMonotoneTime { t: Time, last: Time },
    #[error("neuron index {index} out of range for a layer of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("spike event ({t} ms, neuron {neuron}) is out of order or duplicated")]
    UnorderedEvent { t: Time, neuron: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("rate model is singular: {0}")]
    SingularSystem(String),
    #[error("label {0} is not a valid class")]
    InvalidLabel(usize),
    #[error("accuracy before STDP must be positive to form an improvement rate")]
    ZeroBaseline,
    #[error("invalid configuration: {0}")]
    Config(String),
}
