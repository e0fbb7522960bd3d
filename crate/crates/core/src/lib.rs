//! Training toolkit for pen-IMU handwriting recognition with a CTC recognizer
//! regularized by a training-only text-alignment branch.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod metrics;
pub mod model;
pub mod negatives;
pub mod nn;
pub mod objectives;
pub mod trainer;
