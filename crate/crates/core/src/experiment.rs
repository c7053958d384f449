//! Declarative experiment configuration and the figure-level computations built on it.
//!
//! A config is a JSON document with a `schema_version` field and the sections
//! `species`, `circuit`, `coils`, `cell`, `montecarlo`, `signal` and `sweep`. Every
//! section is optional and falls back to the pulser defaults.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::f64::consts::PI;
use std::path::Path;

use crate::atomdata::{zeeman_coefficients, AtomSpecies, Branch, SpeciesRecord, ZeemanCoefficients};
use crate::circuit::{linear_fit, simulate_pulse, CircuitParams, CurrentTrace};
use crate::coils::{pair_field, CoilGeometry};
use crate::error::{invalid, Error, Result};
use crate::montecarlo::{
    dephasing_curve, CellGeometry, DephasingTable, EnsembleConfig, LinearField, QuadraticMode, WallModel,
};
use crate::signal::{
    fit_fid, synthesize_fid, uniform_times, FidModel, FitResult, FrozenMask, TauSweep, TimeSeries, PARAM_NAMES,
};
use crate::spin::{accumulated_phases, Observables, PhaseCurve};
use crate::units::celsius_to_kelvin;
use crate::vec3::Vec3;

pub const SCHEMA_VERSION: u32 = 1;

/// Center field per ampere (T/A) that puts the full ⟨α̂_R⟩(τ) oscillation period at
/// 70 μs for the 24 V, 326 kHz pulser; reproduced by [`calibrate_field_per_ampere`]
/// with [`CALIBRATION_VOLTAGE`], [`CALIBRATION_PERIOD`] and [`CALIBRATION_WINDOW`].
pub const CALIBRATED_FIELD_PER_AMPERE: f64 = 2.6393e-4;
pub const CALIBRATION_VOLTAGE: f64 = 24.0;
pub const CALIBRATION_PERIOD: f64 = 70e-6;
/// Pulse lengths (s) over which the steady-state slope of φ⁽²⁾(τ) is fitted.
pub const CALIBRATION_WINDOW: (f64, f64) = (40e-6, 100e-6);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeciesSection {
    /// Compiled-in preset; ignored when `record` is given.
    pub preset: Option<String>,
    pub record: Option<SpeciesRecord>,
    /// "lower" (F = I − 1/2) or "upper".
    pub branch: String,
}

impl Default for SpeciesSection {
    fn default() -> Self {
        Self { preset: Some("Rb87".into()), record: None, branch: "lower".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitSection {
    #[serde(rename = "R_ohm")]
    pub r_ohm: f64,
    #[serde(rename = "L_H")]
    pub l_h: f64,
    #[serde(rename = "C_F")]
    pub c_f: f64,
    #[serde(rename = "V_V")]
    pub v_v: f64,
    #[serde(rename = "drive_frequency_Hz")]
    pub drive_frequency_hz: f64,
    pub pulse_length_s: f64,
    /// Defaults to 20·2L/R.
    pub tail_length_s: Option<f64>,
    #[serde(rename = "sample_rate_Hz")]
    pub sample_rate_hz: Option<f64>,
    pub samples_per_cycle: f64,
    pub extra_resistance_ohm: f64,
}

impl Default for CircuitSection {
    fn default() -> Self {
        let p = CircuitParams::bench_pulser();
        Self {
            r_ohm: p.resistance,
            l_h: p.inductance,
            c_f: p.capacitance,
            v_v: p.voltage,
            drive_frequency_hz: p.drive_frequency,
            pulse_length_s: p.pulse_length,
            tail_length_s: None,
            sample_rate_hz: None,
            samples_per_cycle: 200.0,
            extra_resistance_ohm: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoilsSection {
    pub loop_radius_m: f64,
    pub turns: u32,
    /// Defaults to the loop radius (Helmholtz spacing).
    pub separation_m: Option<f64>,
    pub axis: [f64; 3],
    pub center_m: [f64; 3],
    /// Center field per ampere used by the motionless pipeline; `null` means the
    /// geometric value of the pair.
    #[serde(rename = "field_per_ampere_T_per_A")]
    pub field_per_ampere: Option<f64>,
}

impl Default for CoilsSection {
    fn default() -> Self {
        let g = CoilGeometry::helmholtz_preset();
        Self {
            loop_radius_m: g.loop_radius,
            turns: g.turns_per_coil,
            separation_m: None,
            axis: g.axis.to_array(),
            center_m: g.center.to_array(),
            field_per_ampere: Some(CALIBRATED_FIELD_PER_AMPERE),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellSection {
    pub radius_m: f64,
    pub center_m: [f64; 3],
}

impl Default for CellSection {
    fn default() -> Self {
        let c = CellGeometry::standard_cell();
        Self { radius_m: c.radius, center_m: c.center.to_array() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    pub n_particles: usize,
    /// Overrides the top-level seed for the ensemble when set.
    pub seed: Option<u64>,
    #[serde(rename = "temperature_C")]
    pub temperature_c: f64,
    pub steps_per_cycle: usize,
    pub wall: WallModel,
    pub linear_field: LinearField,
    pub quadratic: QuadraticMode,
    pub homogeneous: bool,
    pub field_map_cells: usize,
    pub max_pulse_s: f64,
    pub retune_capacitance: bool,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        let e = EnsembleConfig::standard();
        Self {
            n_particles: e.n_particles,
            seed: None,
            temperature_c: 38.0,
            steps_per_cycle: e.steps_per_cycle,
            wall: e.wall,
            linear_field: e.linear_field,
            quadratic: e.quadratic,
            homogeneous: e.homogeneous,
            field_map_cells: e.field_map_cells,
            max_pulse_s: e.max_pulse_length,
            retune_capacitance: e.retune_capacitance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSection {
    pub chi: f64,
    pub gamma_per_s: f64,
    /// Probe-stage Larmor frequency Ω_L, rad/s.
    #[serde(rename = "omega_L_rad_per_s")]
    pub omega_l: f64,
    #[serde(rename = "V_R")]
    pub v_r: f64,
    #[serde(rename = "V_I")]
    pub v_i: f64,
    /// Observable scale constants.
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub n_samples: usize,
    pub duration_s: f64,
    pub noise_sigma_rad: f64,
    pub frozen: Vec<String>,
    /// φ⁽²⁾ used by the `fid` demonstration.
    pub demo_phi2: f64,
}

impl Default for SignalSection {
    fn default() -> Self {
        let m = FidModel::default();
        Self {
            chi: m.chi,
            gamma_per_s: m.gamma,
            omega_l: m.omega_l,
            v_r: m.v_r,
            v_i: m.v_i,
            a: 1.0,
            b: 1.0,
            n_samples: 4000,
            duration_s: 0.04,
            noise_sigma_rad: 0.005,
            frozen: vec!["chi".into(), "V_R".into(), "V_I".into()],
            demo_phi2: 1.0,
        }
    }
}

/// Pulse lengths either listed or as an evenly spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, count: usize },
}

impl TauSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            TauSpec::List(v) => v.clone(),
            TauSpec::Range { start, stop, count } => match *count {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..n).map(|k| start + (stop - start) * k as f64 / (n - 1) as f64).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub tau_s: TauSpec,
    #[serde(rename = "voltages_V")]
    pub voltages: Vec<f64>,
    #[serde(rename = "drive_frequencies_Hz")]
    pub drive_frequencies: Vec<f64>,
    pub n_pi: Vec<u32>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            tau_s: TauSpec::Range { start: 0.0, stop: 200e-6, count: 201 },
            voltages: vec![12.0, 24.0],
            drive_frequencies: vec![100e3, 140e3, 200e3, 326e3],
            n_pi: (0..=6).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub species: SpeciesSection,
    #[serde(default)]
    pub circuit: CircuitSection,
    #[serde(default)]
    pub coils: CoilsSection,
    #[serde(default)]
    pub cell: CellSection,
    #[serde(default)]
    pub montecarlo: MonteCarloSection,
    #[serde(default)]
    pub signal: SignalSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_seed() -> u64 {
    1
}

fn default_output_dir() -> String {
    "out".into()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: default_seed(),
            output_dir: default_output_dir(),
            species: SpeciesSection::default(),
            circuit: CircuitSection::default(),
            coils: CoilsSection::default(),
            cell: CellSection::default(),
            montecarlo: MonteCarloSection::default(),
            signal: SignalSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

/// Set `dotted.path` in a JSON document to `raw`, parsed as JSON when possible and
/// as a string otherwise. Intermediate objects are created as needed.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Domain(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Domain(format!("bad override path `{path}`")));
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Domain(format!("override path `{path}` crosses a non-object")))?;
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Domain(format!("override path `{path}` crosses a non-object")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Line (1-based) where `dotted.path` is written in `text`, located by searching for
/// each key in turn after the previous one.
pub fn locate_key(text: &str, dotted: &str) -> Option<usize> {
    let mut from = 0;
    for key in dotted.split('.') {
        let needle = format!("\"{key}\"");
        from += text[from..].find(&needle)?;
    }
    Some(text[..from].matches('\n').count() + 1)
}

/// A config problem with its position in the source text when known.
#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub error: Error,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.error),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    /// Parse, apply overrides and validate. Errors carry the offending line.
    pub fn from_json_str(text: &str, overrides: &[String]) -> std::result::Result<Self, ConfigError> {
        let mut doc: Value = serde_json::from_str(text)
            .map_err(|e| ConfigError { line: Some(e.line()), error: Error::Json(e) })?;
        for o in overrides {
            apply_override(&mut doc, o).map_err(|error| ConfigError { line: None, error })?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(doc).map_err(|e| {
            let line = e.to_string().split('`').nth(1).and_then(|k| locate_key(text, k));
            ConfigError { line, error: Error::Json(e) }
        })?;
        cfg.validate().map_err(|error| {
            let line = match &error {
                Error::InvalidParameter { field, .. } => locate_key(text, field).or_else(|| {
                    // fall back to the section header
                    field.split('.').next().and_then(|s| locate_key(text, s))
                }),
                _ => None,
            };
            ConfigError { line, error }
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| ConfigError { line: None, error: Error::Io(e) })?;
        Self::from_json_str(&text, overrides)
    }

    /// Check every section before any computation starts.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.species()?;
        self.branch()?;
        self.circuit_params()?.validate()?;
        self.coil_geometry().validate()?;
        if let Some(b) = self.coils.field_per_ampere {
            if !(b > 0.0) || !b.is_finite() {
                return Err(invalid("coils.field_per_ampere_T_per_A", "must be positive"));
            }
        }
        self.cell_geometry().validate()?;
        self.ensemble_config()?.validate()?;
        self.fid_model().validate()?;
        self.frozen_mask()?;
        let s = &self.signal;
        if s.n_samples < 2 || !(s.duration_s > 0.0) {
            return Err(invalid("signal.n_samples", "need at least 2 samples over a positive duration"));
        }
        if !(s.noise_sigma_rad >= 0.0) {
            return Err(invalid("signal.noise_sigma_rad", "must be non-negative"));
        }
        if self.sweep.tau_s.values().iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(invalid("sweep.tau_s", "pulse lengths must be non-negative"));
        }
        if self.sweep.voltages.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("sweep.voltages_V", "voltages must be non-negative"));
        }
        if self.sweep.drive_frequencies.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(invalid("sweep.drive_frequencies_Hz", "frequencies must be positive"));
        }
        Ok(())
    }

    pub fn species(&self) -> Result<AtomSpecies> {
        let s = match (&self.species.record, &self.species.preset) {
            (Some(rec), _) => AtomSpecies::from_record(rec),
            (None, Some(name)) => AtomSpecies::preset(name),
            (None, None) => Err(invalid("species.preset", "give a preset or a record")),
        };
        s.map_err(|e| match e {
            Error::InvalidParameter { field, reason } if !field.starts_with("species.") => {
                invalid(&format!("species.record.{field}"), reason)
            }
            other => other,
        })
    }

    pub fn branch(&self) -> Result<Branch> {
        match self.species.branch.to_ascii_lowercase().as_str() {
            "lower" => Ok(Branch::Lower),
            "upper" => Ok(Branch::Upper),
            other => Err(invalid("species.branch", format!("`{other}` is neither `lower` nor `upper`"))),
        }
    }

    pub fn coefficients(&self) -> Result<ZeemanCoefficients> {
        Ok(zeeman_coefficients(&self.species()?, self.branch()?))
    }

    pub fn circuit_params(&self) -> Result<CircuitParams> {
        let c = &self.circuit;
        let mut p = CircuitParams {
            resistance: c.r_ohm,
            inductance: c.l_h,
            capacitance: c.c_f,
            voltage: c.v_v,
            drive_frequency: c.drive_frequency_hz,
            pulse_length: c.pulse_length_s,
            tail_length: 0.0,
            sample_rate: c.sample_rate_hz.unwrap_or(c.samples_per_cycle * c.drive_frequency_hz),
            extra_resistance: c.extra_resistance_ohm,
        };
        p.tail_length = match c.tail_length_s {
            Some(t) => t,
            None if p.total_resistance() > 0.0 && p.inductance > 0.0 => p.default_tail_length(),
            None => 0.0,
        };
        Ok(p)
    }

    pub fn coil_geometry(&self) -> CoilGeometry {
        let c = &self.coils;
        CoilGeometry {
            loop_radius: c.loop_radius_m,
            turns_per_coil: c.turns,
            separation: c.separation_m.unwrap_or(c.loop_radius_m),
            axis: Vec3::from(c.axis),
            center: Vec3::from(c.center_m),
        }
    }

    pub fn cell_geometry(&self) -> CellGeometry {
        CellGeometry { radius: self.cell.radius_m, center: Vec3::from(self.cell.center_m) }
    }

    /// Configured center field per ampere, or the geometric one.
    pub fn field_per_ampere(&self) -> Result<f64> {
        match self.coils.field_per_ampere {
            Some(b) => Ok(b),
            None => geometric_field_per_ampere(&self.coil_geometry(), self.cell_geometry().center),
        }
    }

    pub fn ensemble_config(&self) -> Result<EnsembleConfig> {
        let m = &self.montecarlo;
        Ok(EnsembleConfig {
            n_particles: m.n_particles,
            temperature: celsius_to_kelvin(m.temperature_c),
            species: self.species()?,
            branch: self.branch()?,
            cell: self.cell_geometry(),
            coils: self.coil_geometry(),
            circuit: self.circuit_params()?,
            seed: m.seed.unwrap_or(self.seed),
            steps_per_cycle: m.steps_per_cycle,
            wall: m.wall,
            linear_field: m.linear_field,
            quadratic: m.quadratic,
            homogeneous: m.homogeneous,
            field_map_cells: m.field_map_cells,
            max_pulse_length: m.max_pulse_s,
            retune_capacitance: m.retune_capacitance,
        })
    }

    pub fn observables(&self) -> Observables {
        Observables::new(self.signal.a, self.signal.b)
    }

    /// FID template with the φ⁽²⁾ = 0 expectation values.
    pub fn fid_model(&self) -> FidModel {
        let s = &self.signal;
        FidModel {
            chi: s.chi,
            gamma: s.gamma_per_s,
            omega_l: s.omega_l,
            alpha_r: 0.5 * s.a,
            alpha_i: 0.0,
            beta: 0.0,
            v_r: s.v_r,
            v_i: s.v_i,
        }
    }

    pub fn frozen_mask(&self) -> Result<FrozenMask> {
        let mut m = FrozenMask::none();
        for name in &self.signal.frozen {
            if !PARAM_NAMES.contains(&name.as_str()) {
                return Err(invalid("signal.frozen", format!("unknown parameter `{name}`")));
            }
            m = m.with(name, true)?;
        }
        Ok(m)
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let n = self.signal.n_samples;
        uniform_times(n, self.signal.duration_s / n as f64)
    }

    pub fn tau_sweep(&self) -> Result<TauSweep> {
        Ok(TauSweep {
            circuit: self.circuit_params()?,
            field_per_ampere: self.field_per_ampere()?,
            coeffs: self.coefficients()?,
            observables: self.observables(),
            fid: self.fid_model(),
            frozen: self.frozen_mask()?,
            times: self.sample_times(),
            noise_sigma: self.signal.noise_sigma_rad,
            seed: self.seed,
            taus: self.sweep.tau_s.values(),
        })
    }
}

/// Pair field per ampere at `point`, projected on the coil axis.
pub fn geometric_field_per_ampere(geom: &CoilGeometry, point: Vec3) -> Result<f64> {
    Ok(pair_field(geom, 1.0, point)?.dot(geom.axis))
}

/// Current trace of the configured pulse.
pub fn circuit_trace(cfg: &ExperimentConfig) -> Result<CurrentTrace> {
    simulate_pulse(&cfg.circuit_params()?)
}

/// Larmor frequencies and running phases at the cell center.
pub fn phase_curve(cfg: &ExperimentConfig) -> Result<PhaseCurve> {
    let tr = circuit_trace(cfg)?;
    Ok(accumulated_phases(&tr, cfg.field_per_ampere()?, &cfg.coefficients()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub voltage: f64,
    pub tau: f64,
    pub phi2: f64,
}

/// φ⁽²⁾ after the full decay for every (voltage, τ) pair.
pub fn phase_scaling(
    circuit: &CircuitParams,
    field_per_ampere: f64,
    coeffs: &ZeemanCoefficients,
    voltages: &[f64],
    taus: &[f64],
) -> Result<Vec<ScalingPoint>> {
    let jobs: Vec<(f64, f64)> = voltages.iter().flat_map(|&v| taus.iter().map(move |&t| (v, t))).collect();
    jobs.par_iter()
        .map(|&(voltage, tau)| {
            let mut p = *circuit;
            p.voltage = voltage;
            p.pulse_length = tau;
            let tr = simulate_pulse(&p)?;
            let phi2 = accumulated_phases(&tr, field_per_ampere, coeffs).last().phi2;
            Ok(ScalingPoint { voltage, tau, phi2 })
        })
        .collect()
}

/// Least-squares line through (x, y) with its coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn line_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    let (slope, intercept) = linear_fit(xs, ys);
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    LineFit { slope, intercept, r_squared }
}

/// Linear fit of φ⁽²⁾(τ) at one voltage over `window`.
pub fn steady_state_fit(points: &[ScalingPoint], voltage: f64, window: (f64, f64)) -> Result<LineFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.voltage == voltage && p.tau >= window.0 && p.tau <= window.1)
        .map(|p| (p.tau, p.phi2))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::Domain(format!("fewer than 3 pulse lengths inside the fit window at {voltage} V")));
    }
    Ok(line_fit(&xs, &ys))
}

/// Evenly spaced pulse lengths across `window`.
pub fn window_taus(window: (f64, f64), count: usize) -> Vec<f64> {
    (0..count).map(|k| window.0 + (window.1 - window.0) * k as f64 / (count - 1) as f64).collect()
}

/// Result of scaling the center field so the ⟨α̂_R⟩(τ) oscillation has a given period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub reference_field_per_ampere: f64,
    pub reference_period: f64,
    pub field_per_ampere: f64,
    pub target_period: f64,
}

/// Rescale `reference_field` so one 2π cycle of the steady-state φ⁽²⁾(τ) takes
/// `target_period`. φ⁽²⁾ scales with the field squared, so one reference run fixes it.
pub fn calibrate_field_per_ampere(
    circuit: &CircuitParams,
    coeffs: &ZeemanCoefficients,
    reference_field: f64,
    target_period: f64,
    window: (f64, f64),
) -> Result<Calibration> {
    if !(target_period > 0.0) || !(reference_field > 0.0) {
        return Err(Error::Domain("calibration needs a positive period and reference field".into()));
    }
    let taus = window_taus(window, 31);
    let pts = phase_scaling(circuit, reference_field, coeffs, &[circuit.voltage], &taus)?;
    let fit = steady_state_fit(&pts, circuit.voltage, window)?;
    if !(fit.slope > 0.0) {
        return Err(Error::Domain("φ⁽²⁾ does not grow with τ for this circuit".into()));
    }
    let reference_period = 2.0 * PI / fit.slope;
    Ok(Calibration {
        reference_field_per_ampere: reference_field,
        reference_period,
        field_per_ampere: reference_field * (reference_period / target_period).sqrt(),
        target_period,
    })
}

/// The documented calibration run: geometric field of the configured coils, 24 V,
/// target period 70 μs.
pub fn standard_calibration(cfg: &ExperimentConfig) -> Result<Calibration> {
    let mut p = cfg.circuit_params()?;
    p.voltage = CALIBRATION_VOLTAGE;
    let b = geometric_field_per_ampere(&cfg.coil_geometry(), cfg.cell_geometry().center)?;
    calibrate_field_per_ampere(&p, &cfg.coefficients()?, b, CALIBRATION_PERIOD, CALIBRATION_WINDOW)
}

/// Synthetic FID at `signal.demo_phi2` and its fit.
pub fn fid_demo(cfg: &ExperimentConfig) -> Result<(FidModel, TimeSeries, FitResult)> {
    let e = crate::spin::appendix_pipeline(cfg.signal.demo_phi2, &cfg.observables());
    let truth = FidModel { alpha_r: e.alpha_r, alpha_i: e.alpha_i, beta: e.beta, ..cfg.fid_model() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let series = synthesize_fid(&truth, &cfg.sample_times(), cfg.signal.noise_sigma_rad, &mut rng)?;
    let guess = FidModel { alpha_r: 0.0, alpha_i: 0.0, beta: 0.0, ..cfg.fid_model() };
    let fit = fit_fid(&series, &guess, &cfg.frozen_mask()?)?;
    Ok((truth, series, fit))
}

/// Dephasing table for the configured frequencies; rows are limited to `sweep.n_pi`.
pub fn dephasing(cfg: &ExperimentConfig) -> Result<DephasingTable> {
    let ens = cfg.ensemble_config()?;
    let n_max = cfg.sweep.n_pi.iter().copied().max().unwrap_or(0);
    let mut table = dephasing_curve(&ens, &cfg.sweep.drive_frequencies, n_max)?;
    table.rows.retain(|r| cfg.sweep.n_pi.contains(&r.n_pi));
    Ok(table)
}
