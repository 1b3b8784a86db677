#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod experiment;
pub mod gps;
pub mod io;
pub mod observability;
pub mod propagation;
pub mod sim;
pub mod so3;
pub mod state;
pub mod stats;
pub mod vision;
