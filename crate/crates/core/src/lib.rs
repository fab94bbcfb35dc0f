//! Joint remote antenna port (RAP) selection and block-diagonalization (BD)
//! precoding for the downlink of a Cloud-RAN with multi-antenna users.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: layouts, path loss, Rayleigh fading and normalized channels.
//! - [`bd`]: null-space bases, the closed-form dual waterfilling kernel,
//!   covariance and precoder recovery, rate and per-RAP power evaluation.
//! - [`solver`]: the reweighted-ℓ1 outer loop with projected dual
//!   subgradient updates and active-set extraction.
//! - [`oracle`]: exhaustive subset search and a projected-gradient reference
//!   solver used to validate the closed form.
//!
//! All powers are expressed in normalized units: the noise power is 1 and
//! the largest per-RAP budget equals the number of antennas per RAP. See
//! [`model`].

pub mod bd;
mod error;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod solver;

pub use error::{Error, Result};
pub use linalg::CMat;
