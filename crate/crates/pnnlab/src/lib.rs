//! Product-based neural networks and classic baselines for click-through-rate
//! estimation over multi-field categorical data.
//!
//! The crate implements, from scratch and with hand-derived gradients:
//!
//! * inner- and outer-product networks (IPNN / OPNN) whose product layers
//!   come in both a brute-force quadratic form and the complexity-reduced
//!   forms (rank-K inner factorization, outer superposition), verified
//!   against each other;
//! * baselines: logistic regression, factorization machines, and an
//!   embedding MLP (FNN), plus a combined inner+outer network (PNN*);
//! * minibatch SGD training with inverted dropout, L2 for the linear models,
//!   early stopping, and bitwise-reproducible runs from a seed;
//! * evaluation: AUC (rank-based, tie-aware), log loss, RMSE, relative
//!   information gain, paired t-tests, and probability recalibration after
//!   negative down-sampling.
//!
//! Design rules shared by every module: plain-`f64` numerics with
//! deterministic left-to-right reductions, seeded RNG everywhere, text file
//! formats that round-trip bit-exactly, and errors instead of panics for
//! anything a caller could get wrong.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod models;
pub mod numkit;
pub mod product;
pub mod training;

pub use error::{Error, Result};
pub use model::{Model, ModelKind};
pub use numkit::{Mat, Rng};
pub use training::TrainConfig;
