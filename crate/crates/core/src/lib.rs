//! Fully-connected dual-task classifiers whose neurons live in a 2-D plane.
//!
//! Every neuron carries a learnable coordinate. Training adds two penalties to
//! the classification loss for a chosen set of layers:
//!
//! - a transport cost, `|a| * distance` summed over incoming connections and
//!   divided by the layer width, which makes strong long connections expensive;
//! - a density cost, `exp(-distance)` summed over ordered neuron pairs and
//!   divided by the squared layer width, which keeps neurons from piling up.
//!
//! After training, [`split::greedy_split`] walks backward from the two 10-way
//! output heads and assigns every neuron of the penalized layers to the head it
//! feeds most strongly. [`eval::evaluate`] then compares full-network accuracy
//! with the accuracy of each masked subnetwork on its own task.
//!
//! Module map:
//!
//! - [`nn`]: network, forward/backward pass, per-head cross-entropy
//! - [`optim`]: Adam and plain SGD over flat parameter tensors
//! - [`spatial`]: positions, transport/density costs and their gradients
//! - [`data`]: IDX parsing and the concatenated/mixed/sequential input modes
//! - [`split`]: greedy backward assignment, masks, masked forward pass
//! - [`eval`]: accuracies and the full-vs-split report
//! - [`persist`]: run config, checkpoints, results log
//! - [`train`]: the training loop tying the above together
//! - [`gradcheck`]: finite-difference verification of every analytic gradient
//! - [`export`]: CSV and SVG artifacts of the learned layout

pub mod data;
pub mod error;
pub mod eval;
pub mod export;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod persist;
pub mod spatial;
pub mod split;
pub mod train;

pub use error::{Error, Result};
pub use nn::{Activation, ForwardTrace, Network};
pub use spatial::{PositionMap, SpatialConfig};

/// Width of each task head.
pub const HEAD_WIDTH: usize = 10;
/// Number of task heads (and split groups by default).
pub const NUM_TASKS: usize = 2;
/// Width of the output layer: two 10-way heads side by side.
pub const OUTPUT_WIDTH: usize = HEAD_WIDTH * NUM_TASKS;
