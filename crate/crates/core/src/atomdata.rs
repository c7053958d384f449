//! Ground-state Zeeman structure of alkali atoms.
//!
//! [`breit_rabi_energy`] gives the exact level energies, nuclear term included.
//! [`zeeman_coefficients`] gives the second-order expansion used everywhere else:
//! the m-independent shifts and the nuclear Zeeman term are dropped there, leaving
//! `±ħ(Ω⁽¹⁾ m − Ω⁽²⁾ m²)`.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::units::{ATOMIC_MASS_UNIT, BOHR_MAGNETON, HBAR, PLANCK};

/// Ground-state data of an alkali species.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSpecies {
    pub name: String,
    /// Nuclear spin I.
    pub nuclear_spin: f64,
    /// Nuclear g-factor, sign convention with μ_I = g_I μ_B I (negative for ⁸⁷Rb).
    pub g_i: f64,
    /// Electronic Landé factor of the S₁/₂ ground state.
    pub g_j: f64,
    /// Ground-state hyperfine splitting, J.
    pub hyperfine_splitting: f64,
    /// Atomic mass, kg.
    pub atomic_mass: f64,
}

/// On-disk species record (`name, I, gI, gJ, dE_hfs_Hz, mass_u`).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpeciesRecord {
    pub name: String,
    #[serde(rename = "I")]
    pub nuclear_spin: f64,
    #[serde(rename = "gI")]
    pub g_i: f64,
    #[serde(rename = "gJ")]
    pub g_j: f64,
    #[serde(rename = "dE_hfs_Hz")]
    pub hyperfine_hz: f64,
    pub mass_u: f64,
}

impl AtomSpecies {
    /// ⁸⁷Rb with standard reference values (hyperfine splitting from the
    /// atomic-clock measurement, g-factors from the usual D-line tables).
    pub fn rb87() -> Self {
        Self {
            name: "Rb87".to_string(),
            nuclear_spin: 1.5,
            g_i: -0.000_995_141_4,
            g_j: 2.002_331_13,
            hyperfine_splitting: PLANCK * 6.834_682_610_904e9,
            atomic_mass: 86.909_180_527 * ATOMIC_MASS_UNIT,
        }
    }

    /// Look up a compiled-in preset by name (case-insensitive).
    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "rb87" | "87rb" | "rubidium-87" => Ok(Self::rb87()),
            other => Err(invalid("species.preset", format!("unknown preset `{other}`"))),
        }
    }

    pub fn from_record(rec: &SpeciesRecord) -> Result<Self> {
        let s = Self {
            name: rec.name.clone(),
            nuclear_spin: rec.nuclear_spin,
            g_i: rec.g_i,
            g_j: rec.g_j,
            hyperfine_splitting: PLANCK * rec.hyperfine_hz,
            atomic_mass: rec.mass_u * ATOMIC_MASS_UNIT,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn to_record(&self) -> SpeciesRecord {
        SpeciesRecord {
            name: self.name.clone(),
            nuclear_spin: self.nuclear_spin,
            g_i: self.g_i,
            g_j: self.g_j,
            hyperfine_hz: self.hyperfine_splitting / PLANCK,
            mass_u: self.atomic_mass / ATOMIC_MASS_UNIT,
        }
    }

    /// Read a single species record, or a list of them, from a JSON file.
    pub fn load_json(path: impl AsRef<Path>) -> Result<Vec<Self>> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let records: Vec<SpeciesRecord> = if value.is_array() {
            serde_json::from_value(value)?
        } else {
            vec![serde_json::from_value(value)?]
        };
        records.iter().map(Self::from_record).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let two_i = 2.0 * self.nuclear_spin;
        if !(self.nuclear_spin > 0.0) || (two_i - two_i.round()).abs() > 1e-12 {
            return Err(invalid("I", "nuclear spin must be a positive half-integer"));
        }
        if !(self.hyperfine_splitting > 0.0) || !self.hyperfine_splitting.is_finite() {
            return Err(invalid("dE_hfs_Hz", "hyperfine splitting must be positive"));
        }
        if !(self.atomic_mass > 0.0) || !self.atomic_mass.is_finite() {
            return Err(invalid("mass_u", "mass must be positive"));
        }
        if !self.g_i.is_finite() || !self.g_j.is_finite() {
            return Err(invalid("gJ", "g-factors must be finite"));
        }
        Ok(())
    }

    /// 2I + 1
    #[inline]
    pub fn multiplicity(&self) -> f64 {
        2.0 * self.nuclear_spin + 1.0
    }

    /// Dimensionless field parameter x of the Breit–Rabi formula.
    #[inline]
    pub fn field_parameter(&self, b: f64) -> f64 {
        (self.g_j - self.g_i) * BOHR_MAGNETON * b / self.hyperfine_splitting
    }
}

/// Exact ground-state energy of |F, m_F⟩ in a field `b` (T), from the Breit–Rabi formula.
///
/// `f` must be I ± 1/2 and `m_f` a matching projection. Negative fields are allowed.
pub fn breit_rabi_energy(species: &AtomSpecies, f: f64, m_f: f64, b: f64) -> Result<f64> {
    let i = species.nuclear_spin;
    let upper = (f - (i + 0.5)).abs() < 1e-9;
    let lower = (f - (i - 0.5)).abs() < 1e-9 && i - 0.5 >= 0.0;
    if !upper && !lower {
        return Err(Error::Domain(format!("F = {f} is not I ± 1/2 for I = {i}")));
    }
    let two_m = 2.0 * m_f;
    if (two_m - two_m.round()).abs() > 1e-9 || ((f - m_f).round() - (f - m_f)).abs() > 1e-9 {
        return Err(Error::Domain(format!("m_F = {m_f} is not a projection of F = {f}")));
    }
    if m_f.abs() > f + 1e-9 {
        return Err(Error::Domain(format!("|m_F| = {} exceeds F = {f}", m_f.abs())));
    }

    let de = species.hyperfine_splitting;
    let n = species.multiplicity();
    let x = species.field_parameter(b);
    let sign = if upper { 1.0 } else { -1.0 };

    // The stretched states are pure product states; the radicand is (1 ± x)²
    // and the branch that stays linear through x = ±1 is 1 + sgn(m)·x.
    let root = if upper && (m_f.abs() - (i + 0.5)).abs() < 1e-9 {
        1.0 + m_f.signum() * x
    } else {
        (1.0 + 4.0 * m_f * x / n + x * x).sqrt()
    };

    Ok(-de / (2.0 * n) + species.g_i * BOHR_MAGNETON * m_f * b + sign * 0.5 * de * root)
}

/// Field-independent coefficients of the linear and quadratic Larmor frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeemanCoefficients {
    /// Ω⁽¹⁾ / B, rad s⁻¹ T⁻¹.
    pub omega1_per_b: f64,
    /// Ω⁽²⁾ / B², rad s⁻¹ T⁻².
    pub omega2_per_b2: f64,
    /// +1 for F = I + 1/2, −1 for F = I − 1/2.
    pub sign: i8,
}

/// Hyperfine branch selector for [`zeeman_coefficients`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// F = I + 1/2
    Upper,
    /// F = I − 1/2
    Lower,
}

impl Branch {
    pub fn sign(self) -> i8 {
        match self {
            Branch::Upper => 1,
            Branch::Lower => -1,
        }
    }
}

pub fn zeeman_coefficients(species: &AtomSpecies, branch: Branch) -> ZeemanCoefficients {
    let n = species.multiplicity();
    let gmu = species.g_j * BOHR_MAGNETON;
    ZeemanCoefficients {
        omega1_per_b: gmu / (n * HBAR),
        omega2_per_b2: gmu * gmu / (species.hyperfine_splitting * n * n * HBAR),
        sign: branch.sign(),
    }
}

impl ZeemanCoefficients {
    /// (Ω⁽¹⁾, Ω⁽²⁾) in rad/s for field `b` in T. Ω⁽¹⁾ keeps the sign of `b`.
    #[inline]
    pub fn larmor_frequencies(&self, b: f64) -> (f64, f64) {
        (self.omega1_per_b * b, self.omega2_per_b2 * b * b)
    }
}

/// Free-function form of [`ZeemanCoefficients::larmor_frequencies`].
pub fn larmor_frequencies(coeffs: &ZeemanCoefficients, b: f64) -> (f64, f64) {
    coeffs.larmor_frequencies(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::gauss_to_tesla;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn rb() -> AtomSpecies {
        AtomSpecies::rb87()
    }

    #[test]
    fn zero_field_splitting_is_hyperfine() {
        let s = rb();
        let e2 = breit_rabi_energy(&s, 2.0, 0.0, 0.0).unwrap();
        let e1 = breit_rabi_energy(&s, 1.0, 0.0, 0.0).unwrap();
        assert!(((e2 - e1) / s.hyperfine_splitting - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stretched_state_is_affine() {
        let s = rb();
        let e = |b: f64| breit_rabi_energy(&s, 2.0, 2.0, b).unwrap();
        // x crosses ±1 near ±0.24 T
        for &(b0, b1, b2) in &[(0.0, 0.1, 0.2), (-1.0, 0.0, 1.0), (0.2, 0.5, 0.8), (-3.0, -2.0, -1.0)] {
            let second = e(b2) - 2.0 * e(b1) + e(b0);
            assert!(second.abs() < 1e-9 * s.hyperfine_splitting, "curvature {second:e}");
        }
        let e_m = |b: f64| breit_rabi_energy(&s, 2.0, -2.0, b).unwrap();
        let second = e_m(1.0) - 2.0 * e_m(0.5) + e_m(0.0);
        assert!(second.abs() < 1e-9 * s.hyperfine_splitting);
    }

    #[test]
    fn f1_m1_at_25_gauss_matches_expansion() {
        let s = rb();
        let b = gauss_to_tesla(25.0);
        let exact = breit_rabi_energy(&s, 1.0, 1.0, b).unwrap();
        let c = zeeman_coefficients(&s, Branch::Lower);
        let (w1, w2) = c.larmor_frequencies(b);
        let scalar = -s.hyperfine_splitting / (2.0 * s.multiplicity()) - 0.5 * s.hyperfine_splitting;
        let approx = scalar - HBAR * (w1 - w2);
        assert!(((exact - approx) / exact).abs() < 1e-4);
    }

    #[test]
    fn invalid_quantum_numbers() {
        let s = rb();
        assert!(breit_rabi_energy(&s, 3.0, 0.0, 0.0).is_err());
        assert!(breit_rabi_energy(&s, 1.0, 2.0, 0.0).is_err());
        assert!(breit_rabi_energy(&s, 1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn linear_coefficient_is_0p70_mhz_per_gauss() {
        let c = zeeman_coefficients(&rb(), Branch::Lower);
        // g_J μ_B / (4 h) evaluated by hand: 2.00233113 × 9.2740100783e-24 / (4 × 6.62607015e-34)
        let by_hand = 2.002_331_13 * 9.274_010_078_3e-24 / (4.0 * 6.626_070_15e-34) * 1e-4 / 1e6;
        let mhz_per_gauss = c.omega1_per_b / (2.0 * PI) * 1e-4 / 1e6;
        assert!((mhz_per_gauss - by_hand).abs() < 1e-12);
        assert!((mhz_per_gauss - 0.7006).abs() < 5e-4);
        let (w1, _) = c.larmor_frequencies(gauss_to_tesla(1.0));
        assert!((w1 / (2.0 * PI) / 1e6 - 0.70).abs() < 0.01);
    }

    #[test]
    fn quadratic_coefficient_at_25_gauss() {
        let c = zeeman_coefficients(&rb(), Branch::Lower);
        let (w1, w2) = c.larmor_frequencies(gauss_to_tesla(25.0));
        let khz = w2 / (2.0 * PI) / 1e3;
        assert!((10.0..100.0).contains(&khz), "{khz} kHz");
        assert!(w1 / w2 >= 100.0);
        assert_eq!(c.larmor_frequencies(0.0), (0.0, 0.0));
    }

    #[test]
    fn species_json_round_trip() {
        let rec = rb().to_record();
        let text = serde_json::to_string(&rec).unwrap();
        assert!(text.contains("\"dE_hfs_Hz\""));
        let back = AtomSpecies::from_record(&serde_json::from_str(&text).unwrap()).unwrap();
        assert!((back.hyperfine_splitting / rb().hyperfine_splitting - 1.0).abs() < 1e-15);
    }

    #[test]
    fn species_validation() {
        let mut s = rb();
        s.nuclear_spin = 1.3;
        assert!(s.validate().is_err());
        let mut s = rb();
        s.atomic_mass = 0.0;
        assert!(s.validate().is_err());
        assert!(AtomSpecies::preset("Cs133").is_err());
    }

    /// E(m) − E(0) within one hyperfine level is free of every m-independent term,
    /// so it must match ±ħ(Ω⁽¹⁾m − Ω⁽²⁾m²) up to third order in x once g_I = 0.
    #[test]
    fn expansion_error_is_third_order() {
        let mut s = rb();
        s.g_i = 0.0;
        let c = zeeman_coefficients(&s, Branch::Lower);
        for k in 1..=60 {
            let x_target = 1e-2 * k as f64 / 60.0;
            for &sgn in &[1.0, -1.0] {
                let b = sgn * x_target * s.hyperfine_splitting / (s.g_j * BOHR_MAGNETON);
                let x = s.field_parameter(b).abs();
                let (w1, w2) = c.larmor_frequencies(b);
                for &(f, sign) in &[(1.0, -1.0), (2.0, 1.0)] {
                    let e0 = breit_rabi_energy(&s, f, 0.0, b).unwrap();
                    for m in [-1.0, 1.0] {
                        let split = breit_rabi_energy(&s, f, m, b).unwrap() - e0;
                        let model = sign * HBAR * (w1 * m - w2 * m * m);
                        let err = (split - model).abs() / s.hyperfine_splitting;
                        assert!(err < 10.0 * x.powi(3), "x={x} F={f} m={m} err={err:e}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn larmor_parity(b in -0.1f64..0.1) {
            let c = zeeman_coefficients(&rb(), Branch::Lower);
            let (p1, p2) = c.larmor_frequencies(b);
            let (n1, n2) = c.larmor_frequencies(-b);
            prop_assert_eq!(p1, -n1);
            prop_assert_eq!(p2, n2);
            prop_assert!(p2 >= 0.0);
        }
    }
}
