//! Single-image super-resolution with deep back-projection networks.
//!
//! The crate bundles a small differentiable tensor engine ([`tensor`]), the
//! learned up-/down-projection units ([`projection`]) and the networks built
//! from them ([`net`]), classical iterative back-projection ([`ibp`]), image
//! I/O and quality metrics ([`imaging`]) and a desk-scale training loop
//! ([`training`]).

pub mod error;
pub mod ibp;
pub mod imaging;
pub mod net;
pub mod projection;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
