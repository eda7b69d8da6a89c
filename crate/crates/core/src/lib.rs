//! Super-resolution hierarchical beam alignment for mmWave massive-MIMO
//! uniform linear arrays.
//!
//! The library covers the full simulation stack:
//!
//! * [`arraymath`] - steering vectors, layered DFT codebooks, Dirichlet-kernel
//!   beam gains, and the monotone gain-ratio inversion that turns a pair of
//!   beam powers into a continuous angle estimate.
//! * [`channel`] - sparse multipath channel generation, noisy single-pilot
//!   measurements, and a plain-text channel interchange format.
//! * [`search`] - exhaustive, binary, and quaternary super-resolution (QSSR)
//!   beam alignment strategies over one shared measurement interface.
//! * [`neural`] - QSSR-Net: a gated-recurrent estimator trained end-to-end on
//!   the received-power objective, with hand-rolled backpropagation.
//! * [`impairments`] - per-element antenna position and phase error models.
//! * [`calibration`] - online parametric self-calibration of those errors.
//! * [`rng`] - counter-derived random streams for reproducible Monte-Carlo.

pub mod arraymath;
pub mod calibration;
pub mod channel;
pub mod impairments;
pub mod matrix;
pub mod neural;
pub mod optim;
pub mod rng;
pub mod search;

pub use arraymath::NormalizedAngle;
pub use channel::{ChannelEnsembleConfig, PathChannel};
pub use matrix::CMatrix;
pub use rng::RngStream;
