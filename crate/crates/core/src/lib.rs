pub mod error;
pub mod fock;
pub mod gkp;
pub mod channels;
pub mod numerics;
pub mod readout;
pub mod prep;
pub mod clifford;
pub mod shift_ec;
pub mod harness;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
