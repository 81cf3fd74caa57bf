//! Bounded-output head pose regression with a Siamese pairwise ranking loss.
//!
//! A small MLP backbone maps input features to a feature vector `F`; an output
//! head turns `F` into (yaw, pitch, roll) either as a plain dot product, as a
//! scaled cosine similarity against L2-normalized weight columns, or as the
//! shifted angle between them. Training pairs two samples of the same identity
//! and mixes a paired MSE with a per-angle ordering hinge.
//!
//! ```no_run
//! use rankpose::{data, trainer, evaluation};
//!
//! let train = data::generate_synthetic(&data::SyntheticConfig::default())?;
//! let (state, _history) = trainer::train(&train, None, &trainer::TrainConfig::default())?;
//! let report = evaluation::evaluate(&state, &train, Default::default())?;
//! println!("avg MAE {:.2}°", report.to_degrees().avg);
//! # Ok::<(), rankpose::Error>(())
//! ```

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod head;
pub mod losses;
pub mod model;
pub mod network;
pub mod optimizer;
pub mod parallel;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
pub use head::{HeadKind, NormMode, OutputHead, PoseAngles};
pub use losses::{LossBreakdown, LossConfig, PairPrediction};
pub use model::PoseModel;
pub use parallel::Execution;
pub use trainer::{TrainConfig, TrainHistory, TrainState};
