//! Simulation and estimation toolkit for random compositions of Lipschitz maps.
//!
//! A random map is a finitely supported distribution over fiber maps of a
//! compact metric space (circle, interval or real projective space). The
//! crate estimates annealed Lyapunov exponents, certifies negative maximal
//! exponents on an ε-net, discretizes the annealed Koopman operator to count
//! and locate stationary measures, checks Kingman-type limits exactly on
//! finite Markov operators, and reproduces central-limit, Berry–Esseen and
//! large-deviation behaviour for matrix cocycles and circle diffeomorphisms.
//!
//! Every stochastic routine is driven by counter-based streams: results are a
//! function of `(master_seed, stream)` only, never of the rayon pool size.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod cocycles;
pub mod continuity;
pub mod error;
pub mod kingman;
pub mod koopman;
pub mod limits;
pub mod lyapunov;
pub mod markov;
pub mod rng;
pub mod spaces;
pub mod stats;
pub mod systems;

pub use cocycles::{Cocycle, LogProduct, SpectrumEstimate};
pub use continuity::{SweepResult, SystemPath};
pub use error::{Error, Result};
pub use kingman::{FiniteMarkovOperator, SubadditiveSequence};
pub use koopman::{DiscretizedKoopman, Grid, StationaryReport};
pub use lyapunov::{Certificate, ContractionOnAverageWitness, ExponentAtPoint};
pub use spaces::{Space, SpacePoint};
pub use stats::Estimate;
pub use systems::{FiberMap, MapFamily, RandomMapSystem, Word};
