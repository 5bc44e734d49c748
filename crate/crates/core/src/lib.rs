//! Behavioral simulator of a hybrid digital/analog floating-point
//! compute-in-memory macro.
//!
//! Exponents and the `1 + W_M + X_M` part of every mantissa product are
//! handled digitally and exactly; the `W_M * X_M` part goes through a
//! charge-sharing analog array and a low-resolution flash ADC. Everything
//! is checked against exact dyadic-rational oracles ([`exact::ExactReal`]).

pub mod cim;
pub mod decomposition;
pub mod energy;
pub mod error;
pub mod error_map;
pub mod exact;
pub mod exponent;
pub mod fp;
pub mod inference;
pub mod parallel;

pub use error::{Error, Result};
pub use exact::ExactReal;
pub use fp::{FpFormat, FpValue};
