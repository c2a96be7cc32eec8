//! Hybrid stereo matching with learned multi-scale similarities.

pub mod backbone;
pub mod error;
pub mod io;
pub mod losses;
pub mod matcher;
pub mod metrics;
pub mod sampling;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
