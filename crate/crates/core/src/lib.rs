//! Mixtures of discrete-time Gaussian processes over Riemannian pose
//! manifolds: few-shot trajectory fitting, mode discovery, skill chaining,
//! constraint conditioning, and variance-aware path optimization on
//! serial-chain kinematics.
//!
//! A trajectory model here is a length-T sequence of independent
//! diagonal-covariance Gaussians, each living in the tangent space at a
//! per-step Fréchet mean on a product manifold (Euclidean blocks and unit
//! quaternions). Mixtures of such models carry categorical mode weights;
//! chains of mixtures carry mode-to-mode transition tables.

pub mod error;
pub mod gp;
pub mod io;
pub mod kinematics;
pub mod manifold;
pub mod metrics;
pub mod mixture;
pub mod partition;
pub mod pipeline;
pub mod rigid;
pub mod rng;
pub mod synth;
pub mod trajopt;
pub mod updating;

pub use error::{Error, Result};
pub use gp::{DiscreteGp, FitOptions, FramedDemo, FramedGp, Trajectory};
pub use manifold::{Factor, ManifoldPoint, ManifoldSpec, TangentVector};
pub use mixture::{GpMixture, Mode, SkillChain};
pub use partition::{Partition, PartitionMethod};
pub use rigid::RigidTransform;
