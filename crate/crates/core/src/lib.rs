//! Simulation and analysis toolkit for an integrated polarization-entangled
//! photon-pair source.
//!
//! The chip is a silicon-wire waveguide, a ~90° polarization rotator and a
//! second silicon-wire waveguide, with spot-size converters at both facets.
//! A diagonally polarized pump generates TE pairs in each waveguide via
//! four-wave mixing; the rotator turns the first pair into TM, so the output
//! is a superposition of |TE,TE⟩ and |TM,TM⟩.
//!
//! Modules, bottom-up:
//!
//! - [`algebra`]: Jones vectors, 2×2/4×4 operators, two-photon kets and
//!   density matrices, Hermitian eigen-decomposition, the magic basis.
//! - [`fwm`]: nonlinear coefficient, FWM efficiency and conversion spectra.
//! - [`device`]: the element chain, pump propagation, pair weights,
//!   dephasing, the emitted state and polarizer fringe scans.
//! - [`metrics`]: purity, fidelity, fully entangled fraction, concurrence.
//! - [`detection`]: gated detector statistics and seeded count sampling.
//! - [`tomography`]: linear inversion and maximum-likelihood reconstruction.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod detection;
pub mod device;
pub mod fwm;
pub mod metrics;
pub mod tomography;

pub use algebra::{DensityMatrix4, JonesVector, Operator2, Operator4, TwoPhotonKet};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Converts a loss in dB to a linear power transmittance.
pub fn db_to_transmittance(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Converts a linear power ratio to dB.
pub fn ratio_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Optical bandwidth in Hz of a spectral window `bandwidth_nm` wide centred
/// at `center_nm`.
pub fn bandwidth_nm_to_hz(bandwidth_nm: f64, center_nm: f64) -> f64 {
    let center_m = center_nm * 1e-9;
    SPEED_OF_LIGHT * bandwidth_nm * 1e-9 / (center_m * center_m)
}
