//! Orthogonal initialization of residual networks for exact dynamical
//! isometry, with baseline initializers, signal-propagation theory,
//! Monte-Carlo estimators and a small fully-connected trainer.
//!
//! Module map:
//!
//! * [`linalg`]: dense kernels, Haar sampling, singular values, seeded streams.
//! * [`init`]: block initializers (Risotto Type B/C and the i.i.d. baselines).
//! * [`network`]: residual forward pass, effective signals, Jacobians.
//! * [`sigprop`]: closed-form propagation results and their Monte-Carlo checks.
//! * [`train`]: SGD with momentum on fully-connected residual networks.

pub mod error;
pub mod init;
pub mod linalg;
pub mod network;
pub mod sigprop;
pub mod train;

pub use error::{Error, Result};
pub use init::{BlockKind, BlockSpec, BlockWeights, InitScheme, KernelSize, SchemeKind, SigmaOverrides};
pub use linalg::{ConvKernel, FeatureMap, Matrix, RngStream};
pub use network::{Activations, JacobianReport, NetworkSpec, NetworkWeights, Pooling};
