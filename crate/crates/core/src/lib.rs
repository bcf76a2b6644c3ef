//! Bit-exact simulation of a stochastic-bitstream Bayesian machine applied to
//! binocular disparity.
//!
//! The crate is layered bottom-up:
//!
//! * [`stochastic`]: Bernoulli bit sources, AND products, stochastic buses and
//!   counter banks with overflow readout.
//! * [`machine`]: the matrix of product modules performing naive Bayesian
//!   fusion over a stochastic bus.
//! * [`model`]: images, 5x5 feature filters, matching costs, likelihoods and
//!   the per-pixel fusion problem.
//! * [`reference`]: the floating-point posterior used as an oracle.
//! * [`engine`]: the per-pixel disparity machine run over a likelihood volume.
//! * [`eval`]: accuracy metrics, counter-size sweeps and the hardware model.
//! * [`pnm`], [`dump`], [`pipeline`]: file formats and orchestration used by the
//!   `stodisp` binary.
//! * [`synth`]: procedural stereo scenes for tests and experiments.

pub mod dump;
pub mod engine;
pub mod error;
pub mod eval;
pub mod machine;
pub mod model;
pub mod pipeline;
pub mod pnm;
pub mod reference;
pub mod stochastic;
pub mod synth;

pub use error::{Error, Result};
