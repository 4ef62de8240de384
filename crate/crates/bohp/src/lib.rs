//! Neural networks whose connections carry a trainable amount of Hebbian
//! plasticity.
//!
//! Each plastic connection has a fixed baseline weight `w`, a plasticity
//! coefficient `alpha`, and a running Hebbian trace (an exponential moving
//! average of pre- times post-synaptic activity). The trace changes within
//! an episode; `w` and `alpha` are ordinary parameters trained by gradient
//! descent across episodes. The gradient of an episode loss with respect to
//! `w`, `alpha`, and the bias is computed exactly by carrying per-parameter
//! trace sensitivities forward through time ([`grad`]), and is checked
//! against a central finite-difference oracle ([`fd`]).
//!
//! The crate ships three episodic toy tasks ([`tasks`]), a seeded training
//! harness with multi-run aggregation ([`trainer`]), connection-structure
//! summaries for trained models ([`summary`]), and JSON/CSV artifact
//! emission ([`io`]). The `bohp` binary exposes all of it on the command
//! line.
//!
//! Core math is generic over the scalar type via [`Scalar`]; the
//! experiments run in `f64` (see the type aliases at the crate root).

pub mod error;
pub mod fd;
pub mod grad;
pub mod io;
pub mod num;
pub mod plastic;
pub mod summary;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
pub use num::Scalar;

/// Double-precision network, the configuration used by the experiments.
pub type Network64 = plastic::Network<f64>;
/// Single-precision network.
pub type Network32 = plastic::Network<f32>;
/// Double-precision episode script.
pub type EpisodeScript64 = tasks::EpisodeScript<f64>;
/// Double-precision episode gradient.
pub type EpisodeGradient64 = grad::EpisodeGradient<f64>;
