//! Numerical laboratory for the uni-modular ensemble (UME): Hermitian matrices
//! with zero diagonal and unit-modulus off-diagonal entries `exp(i phi)`.
//!
//! Modules, roughly bottom-up:
//! - [`ensemble`]: reproducible UME/GUE sampling and the `W = M / (2 sqrt(N-2))` scaling
//! - [`spectral`]: eigenvalues, moments, Chebyshev traces, `y_n`, centered traces `F_n`
//! - [`nbwalks`]: magnetic Hashimoto operator, Bass identity, exact walk enumeration
//! - [`density`]: closed-form densities, the delta kernel, trace-formula checks
//! - [`formfactor`]: angle unfolding and the spectral form factor
//! - [`brownian`]: phase Brownian motion, drift/diffusion, Gaussianity diagnostics
//! - [`mcharness`]: deterministic parallel Monte Carlo with streaming moments

pub mod brownian;
pub mod density;
pub mod ensemble;
pub mod error;
pub mod formfactor;
pub mod mcharness;
pub mod nbwalks;
pub mod spectral;

pub use error::{LabError, Result};
pub use num_complex::Complex64 as C64;
