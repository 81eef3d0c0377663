//! Discrete-time spiking neural network training.
//!
//! A 784–300–10 network of leaky integrate-and-fire neurons with
//! winner-take-all lateral inhibition is first trained with an
//! approximate-gradient backpropagation rule on a handful of labeled MNIST
//! digits, then refined without labels by an asymmetric STDP rule. A
//! self-training baseline (pseudo-labeling the most confident unlabeled
//! samples) is included for comparison.
//!
//! Module map:
//!
//! * [`snn`]: neuron state, layers, the 1 ms clocked simulator
//! * [`encoding`]: on-center receptive field and Poisson rate coding
//! * [`backprop`]: activity traces, the rate model and its derivatives,
//!   normalized error backpropagation, threshold regularization
//! * [`stdp`]: the windowed asymmetric STDP rule
//! * [`mnist`]: IDX parsing and disjoint class-balanced splits
//! * [`pipeline`]: proposed / BP-only / self-training schedules, evaluation
//! * [`config`], [`metrics`], [`experiment`]: run configuration, CSV output,
//!   and the end-to-end runner used by the CLI

pub mod backprop;
pub mod config;
pub mod encoding;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mnist;
pub mod pipeline;
pub mod seed;
pub mod snn;
pub mod stdp;

pub use error::SnnError;
