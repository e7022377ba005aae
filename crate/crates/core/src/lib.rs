//! Deep Predictive Model for collision risk: a multi-branch ConvLSTM with
//! Monte-Carlo weight dropout, trained on a built-in intersection simulator.

pub mod checkpoint;
pub mod dataset;
pub mod dropout;
pub mod error;
pub mod net;
pub mod sim;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
