//! Physical constants (CODATA 2018) and unit conversions.

use std::f64::consts::PI;

/// Bohr magneton, J/T (CODATA 2018).
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
/// Planck constant, J·s (exact in the 2019 SI).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = PLANCK / (2.0 * PI);
/// Boltzmann constant, J/K (exact in the 2019 SI).
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Vacuum permeability, N/A² (CODATA 2018).
pub const MU_0: f64 = 1.256_637_062_12e-6;
/// Unified atomic mass unit, kg (CODATA 2018).
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Tesla per gauss.
pub const GAUSS: f64 = 1e-4;

#[inline]
pub fn gauss_to_tesla(b_gauss: f64) -> f64 {
    b_gauss * GAUSS
}

#[inline]
pub fn tesla_to_gauss(b_tesla: f64) -> f64 {
    b_tesla / GAUSS
}

#[inline]
pub fn celsius_to_kelvin(t_c: f64) -> f64 {
    t_c + 273.15
}
