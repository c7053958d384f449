//! Thermal-motion dephasing of an atomic ensemble in the inhomogeneous pulse field.
//!
//! Atoms fly ballistically inside a spherical cell and bounce off the walls with a
//! randomized direction. At each step the coil field at the atom's position, scaled
//! by the coil current, rotates the spin about the instantaneous field direction;
//! the quadratic phase is accumulated from the field component along the coil axis
//! and applied as one operator after the pulse.
//!
//! Every particle owns a ChaCha8 stream selected by its index, and all reductions
//! run sequentially in particle order, so results do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

use crate::atomdata::{zeeman_coefficients, AtomSpecies, Branch, ZeemanCoefficients};
use crate::circuit::{simulate_pulse, CircuitParams, CurrentTrace, MIN_SAMPLES_PER_CYCLE};
use crate::coils::{pair_field, CoilGeometry, FieldMap};
use crate::error::{invalid, Error, Result};
use crate::spin::{
    accumulated_phases, appendix_pipeline, quadratic_phase, readout_rotation, DensityMatrix, Observables,
    SpinState, Su2,
};
use crate::units::{celsius_to_kelvin, BOLTZMANN};
use crate::vec3::Vec3;

/// Coarsest accepted time-step policy.
pub const MIN_STEPS_PER_CYCLE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    /// m
    pub radius: f64,
    pub center: Vec3,
}

impl CellGeometry {
    /// 37 mm diameter sphere at the origin.
    pub fn standard_cell() -> Self {
        Self { radius: 18.5e-3, center: Vec3::ZERO }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(invalid("cell.radius_m", "must be positive"));
        }
        if !self.center.is_finite() {
            return Err(invalid("cell.center_m", "must be finite"));
        }
        Ok(())
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (p - self.center).norm() <= self.radius * (1.0 + 1e-12)
    }
}

/// Direction law after a wall collision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WallModel {
    /// Uniform over the inward hemisphere.
    #[default]
    Uniform,
    /// Lambertian (cosine-weighted about the inward normal).
    Cosine,
}

/// Which part of the field drives the linear precession.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinearField {
    /// Full vector field; rotation about the instantaneous field direction.
    #[default]
    Full,
    /// Only the component along the coil axis.
    AxisOnly,
}

/// When the quadratic phase is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuadraticMode {
    /// A single exp(−iφ⁽²⁾ F_a²) after the pulse.
    #[default]
    EndOfPulse,
    /// Step by step, interleaved with the linear rotations.
    Interleaved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub n_particles: usize,
    /// K
    pub temperature: f64,
    pub species: AtomSpecies,
    pub branch: Branch,
    pub cell: CellGeometry,
    pub coils: CoilGeometry,
    pub circuit: CircuitParams,
    pub seed: u64,
    pub steps_per_cycle: usize,
    pub wall: WallModel,
    pub linear_field: LinearField,
    pub quadratic: QuadraticMode,
    /// Replace b(r) by its value at the cell center.
    pub homogeneous: bool,
    /// Grid intervals per coordinate of the tabulated field.
    pub field_map_cells: usize,
    /// Longest pulse tried when solving for a phase target, s.
    pub max_pulse_length: f64,
    /// Re-tune the capacitor to resonance at each drive frequency of a sweep.
    pub retune_capacitance: bool,
}

impl EnsembleConfig {
    pub fn standard() -> Self {
        Self {
            n_particles: 10_000,
            temperature: celsius_to_kelvin(38.0),
            species: AtomSpecies::rb87(),
            branch: Branch::Lower,
            cell: CellGeometry::standard_cell(),
            coils: CoilGeometry::helmholtz_preset(),
            circuit: CircuitParams::bench_pulser(),
            seed: 1,
            steps_per_cycle: 200,
            wall: WallModel::Uniform,
            linear_field: LinearField::Full,
            quadratic: QuadraticMode::EndOfPulse,
            homogeneous: false,
            field_map_cells: 256,
            max_pulse_length: 1e-3,
            retune_capacitance: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 1 {
            return Err(invalid("montecarlo.n_particles", "must be at least 1"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(invalid("montecarlo.temperature_C", "must be above absolute zero"));
        }
        if self.steps_per_cycle < MIN_STEPS_PER_CYCLE {
            return Err(invalid(
                "montecarlo.steps_per_cycle",
                format!("must be at least {MIN_STEPS_PER_CYCLE}"),
            ));
        }
        if self.field_map_cells < 2 {
            return Err(invalid("montecarlo.field_map_cells", "must be at least 2"));
        }
        if !(self.max_pulse_length > 0.0) {
            return Err(invalid("montecarlo.max_pulse_s", "must be positive"));
        }
        self.species.validate()?;
        self.cell.validate()?;
        self.coils.validate()?;
        self.circuit.validate()
    }

    pub fn coefficients(&self) -> ZeemanCoefficients {
        zeeman_coefficients(&self.species, self.branch)
    }

    /// Circuit for a given drive frequency, re-tuned if configured.
    pub fn circuit_at(&self, frequency: f64) -> CircuitParams {
        let mut p = self.circuit;
        p.drive_frequency = frequency;
        p.sample_rate = p.sample_rate / self.circuit.drive_frequency * frequency;
        if self.retune_capacitance {
            let w = 2.0 * PI * frequency;
            p.capacitance = 1.0 / (p.inductance * w * w);
        }
        p
    }

    /// Field per ampere at the cell center, along the coil axis.
    pub fn center_field_per_ampere(&self) -> Result<f64> {
        Ok(pair_field(&self.coils, 1.0, self.cell.center)?.dot(self.coils.axis))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub position: Vec3,
    pub velocity: Vec3,
    /// |velocity|, kept separately so repeated bounces cannot drift it.
    pub speed: f64,
    /// Accumulated linear rotation.
    pub rotation: Su2,
    pub phi2_accum: f64,
}

impl Particle {
    pub fn at_rest(position: Vec3) -> Self {
        Self { position, velocity: Vec3::ZERO, speed: 0.0, rotation: Su2::IDENTITY, phi2_accum: 0.0 }
    }

    /// Spin state implied by the rotation accumulator and phase, from |1⟩ₓ.
    pub fn spin_state(&self, axis: Vec3) -> SpinState {
        quadratic_phase(axis, self.phi2_accum) * (self.rotation.to_spin1() * SpinState::x_polarized())
    }
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        if let Some(u) = v.normalized() {
            return u;
        }
    }
}

/// Maxwell–Boltzmann speed scale √(k_B T / m).
pub fn thermal_sigma(temperature: f64, mass: f64) -> f64 {
    (BOLTZMANN * temperature.max(0.0) / mass).sqrt()
}

/// Mean Maxwell–Boltzmann speed √(8 k_B T / (π m)).
pub fn mean_speed(temperature: f64, mass: f64) -> f64 {
    (8.0 * BOLTZMANN * temperature / (PI * mass)).sqrt()
}

/// Uniform position in the cell, Maxwellian velocity, spin in |1⟩ₓ.
pub fn sample_initial<R: Rng + ?Sized>(config: &EnsembleConfig, rng: &mut R) -> Particle {
    let cell = &config.cell;
    let r = cell.radius * rng.gen::<f64>().cbrt();
    let position = cell.center + random_unit(rng) * r;
    let sigma = thermal_sigma(config.temperature, config.species.atomic_mass);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let velocity = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
    Particle { position, velocity, speed: velocity.norm(), ..Particle::at_rest(position) }
}

fn wall_direction<R: Rng + ?Sized>(inward: Vec3, wall: WallModel, rng: &mut R) -> Vec3 {
    loop {
        let u = random_unit(rng);
        let d = match wall {
            WallModel::Uniform => {
                if u.dot(inward) < 0.0 {
                    -u
                } else {
                    u
                }
            }
            WallModel::Cosine => match (inward + u).normalized() {
                Some(d) => d,
                None => continue,
            },
        };
        if d.dot(inward) > 1e-12 {
            return d;
        }
    }
}

/// Straight flight for `dt` with exact wall intersections and randomized re-emission.
pub fn propagate<R: Rng + ?Sized>(
    particle: &Particle,
    dt: f64,
    cell: &CellGeometry,
    wall: WallModel,
    rng: &mut R,
) -> Particle {
    let mut p = *particle;
    if p.speed == 0.0 {
        return p;
    }
    let mut remaining = dt;
    let r2 = cell.radius * cell.radius;
    while remaining > 0.0 {
        let d = p.position - cell.center;
        let a = p.speed * p.speed;
        let b = d.dot(p.velocity);
        let c = (d.norm_squared() - r2).min(0.0);
        let s_hit = (-b + (b * b - a * c).max(0.0).sqrt()) / a;
        if s_hit >= remaining {
            p.position += p.velocity * remaining;
            break;
        }
        let hit = d + p.velocity * s_hit;
        let outward = hit.normalized().unwrap_or(Vec3::X);
        p.position = cell.center + outward * cell.radius;
        p.velocity = wall_direction(-outward, wall, rng) * p.speed;
        remaining -= s_hit;
    }
    let d = p.position - cell.center;
    let n = d.norm();
    if n > cell.radius {
        p.position = cell.center + d * (cell.radius / n);
    }
    debug_assert!(cell.contains(p.position));
    p
}

/// Per-ampere field seen by the atoms.
#[derive(Debug, Clone)]
pub enum FieldSource {
    Map(FieldMap),
    Homogeneous(Vec3),
}

impl FieldSource {
    pub fn for_config(config: &EnsembleConfig) -> Result<Self> {
        if config.homogeneous {
            Ok(FieldSource::Homogeneous(pair_field(&config.coils, 1.0, config.cell.center)?))
        } else {
            Ok(FieldSource::Map(FieldMap::for_sphere(
                &config.coils,
                config.cell.center,
                config.cell.radius,
                config.field_map_cells,
            )?))
        }
    }

    #[inline]
    pub fn at(&self, point: Vec3) -> Result<Vec3> {
        match self {
            FieldSource::Map(m) => m.field_per_ampere(point),
            FieldSource::Homogeneous(b) => Ok(*b),
        }
    }
}

/// Final ensemble for one pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutcome {
    pub states: Vec<SpinState>,
}

/// Ensemble-averaged ⟨α̂_R⟩ after the π/4 readout rotation, with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Amplitude {
    pub amplitude: f64,
    pub std_err: f64,
}

impl EnsembleOutcome {
    pub fn density_matrix(&self) -> Result<DensityMatrix> {
        DensityMatrix::mixture(self.states.iter())
    }

    pub fn amplitude(&self, obs: &Observables) -> Amplitude {
        let r = readout_rotation();
        let vals: Vec<f64> = self.states.iter().map(|s| obs.evaluate(&(r * *s)).alpha_r).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Amplitude { amplitude: mean, std_err: (var / n).sqrt() }
    }
}

/// Shared step grid: midpoint time and length of every step.
struct StepGrid {
    dt: Vec<f64>,
    /// current[pulse][step], zero after the end of that pulse's trace
    current: Vec<Vec<f64>>,
}

fn step_grid(traces: &[CurrentTrace], steps_per_cycle: usize) -> Result<StepGrid> {
    let f = traces[0].params.drive_frequency;
    if traces.iter().any(|t| t.params.drive_frequency != f) {
        return Err(Error::Domain("traces sharing trajectories need one drive frequency".into()));
    }
    let mut edges: Vec<f64> = Vec::new();
    for tr in traces {
        edges.push(tr.start_time());
        edges.push(tr.end_time());
        if tr.is_analytic() {
            edges.extend(tr.segments.iter().map(|s| s.t_start));
        }
    }
    edges.retain(|t| t.is_finite());
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut mids = Vec::new();
    let mut dt = Vec::new();
    for w in edges.windows(2) {
        let n = (((w[1] - w[0]) * f * steps_per_cycle as f64).ceil() as usize).max(1);
        let h = (w[1] - w[0]) / n as f64;
        for k in 0..n {
            mids.push(w[0] + (k as f64 + 0.5) * h);
            dt.push(h);
        }
    }
    let current = traces
        .iter()
        .map(|tr| {
            let (a, b) = (tr.start_time(), tr.end_time());
            mids.iter().map(|&t| if t >= a && t <= b { tr.current_at(t) } else { 0.0 }).collect()
        })
        .collect();
    Ok(StepGrid { dt, current })
}

#[derive(Clone, Copy)]
struct PulseState {
    rotation: Su2,
    phi2: f64,
    state: SpinState,
}

/// Evolve the ensemble through several pulses at one drive frequency. Each particle
/// follows one trajectory that is shared by all pulses.
pub fn evolve_pulses(config: &EnsembleConfig, traces: &[CurrentTrace]) -> Result<Vec<EnsembleOutcome>> {
    config.validate()?;
    if traces.is_empty() {
        return Ok(Vec::new());
    }
    let field = FieldSource::for_config(config)?;
    evolve_with_field(config, traces, &field)
}

/// [`evolve_pulses`] with an explicit field source.
pub fn evolve_with_field(
    config: &EnsembleConfig,
    traces: &[CurrentTrace],
    field: &FieldSource,
) -> Result<Vec<EnsembleOutcome>> {
    if config.steps_per_cycle < MIN_STEPS_PER_CYCLE {
        return Err(Error::Precondition(format!(
            "{} steps per drive cycle; at least {MIN_STEPS_PER_CYCLE} required",
            config.steps_per_cycle
        )));
    }
    let grid = step_grid(traces, config.steps_per_cycle)?;
    let coeffs = config.coefficients();
    let axis = config.coils.axis;
    let n_pulses = traces.len();

    // Pulses share their drive until each one ends, so a pulse follows the longest
    // one (the reference) until its current first differs.
    let reference = (0..n_pulses)
        .max_by(|&a, &b| traces[a].end_time().partial_cmp(&traces[b].end_time()).unwrap())
        .unwrap();

    let run = |index: usize| -> Result<Vec<SpinState>> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(index as u64);
        let mut p = sample_initial(config, &mut rng);
        let psi0 = SpinState::x_polarized();
        let mut pulses: Vec<PulseState> =
            (0..n_pulses).map(|_| PulseState { rotation: Su2::IDENTITY, phi2: 0.0, state: psi0 }).collect();
        let mut diverged: Vec<bool> = (0..n_pulses).map(|j| j == reference).collect();
        let mut pending = 0.5 * grid.dt.first().copied().unwrap_or(0.0);
        for (k, &h) in grid.dt.iter().enumerate() {
            // move to the step midpoint
            p = propagate(&p, pending, &config.cell, config.wall, &mut rng);
            pending = 0.5 * (h + grid.dt.get(k + 1).copied().unwrap_or(0.0));
            let i_ref = grid.current[reference][k];
            for j in 0..n_pulses {
                if !diverged[j] && grid.current[j][k] != i_ref {
                    diverged[j] = true;
                    pulses[j] = pulses[reference];
                }
            }
            if !grid.current.iter().zip(&diverged).any(|(c, &d)| d && c[k] != 0.0) {
                continue;
            }
            let b = field.at(p.position)?;
            let b_axis = b.dot(axis);
            let b_lin = match config.linear_field {
                LinearField::Full => b,
                LinearField::AxisOnly => axis * b_axis,
            };
            let b_mag = b_lin.norm();
            let b_hat = if b_mag > 0.0 { b_lin / b_mag } else { axis };
            for (j, ps) in pulses.iter_mut().enumerate() {
                let i = grid.current[j][k];
                if !diverged[j] || i == 0.0 {
                    continue;
                }
                let step = Su2::rotation(b_hat, coeffs.omega1_per_b * b_mag * i * h);
                let dphi = coeffs.omega2_per_b2 * (b_axis * i) * (b_axis * i) * h;
                match config.quadratic {
                    QuadraticMode::EndOfPulse => {
                        ps.rotation = step.compose(&ps.rotation);
                        ps.phi2 += dphi;
                    }
                    QuadraticMode::Interleaved => {
                        ps.state = quadratic_phase(axis, dphi) * (step.to_spin1() * ps.state);
                    }
                }
            }
        }
        let finals: Vec<SpinState> = (0..n_pulses)
            .map(|j| {
                let ps = if diverged[j] { &pulses[j] } else { &pulses[reference] };
                match config.quadratic {
                    QuadraticMode::EndOfPulse => quadratic_phase(axis, ps.phi2) * (ps.rotation.to_spin1() * psi0),
                    QuadraticMode::Interleaved => ps.state,
                }
            })
            .collect();
        Ok(finals)
    };

    let per_particle: Vec<Vec<SpinState>> =
        (0..config.n_particles).into_par_iter().map(run).collect::<Result<_>>()?;
    let mut out: Vec<EnsembleOutcome> =
        (0..n_pulses).map(|_| EnsembleOutcome { states: Vec::with_capacity(config.n_particles) }).collect();
    for states in per_particle {
        for (o, s) in out.iter_mut().zip(states) {
            o.states.push(s);
        }
    }
    Ok(out)
}

/// Single-pulse form of [`evolve_pulses`].
pub fn evolve_pulse(config: &EnsembleConfig, trace: &CurrentTrace) -> Result<EnsembleOutcome> {
    Ok(evolve_pulses(config, std::slice::from_ref(trace))?.remove(0))
}

/// Quadratic phase at the cell center for a pulse of length `tau`.
pub fn center_phi2(config: &EnsembleConfig, params: &CircuitParams, tau: f64) -> Result<f64> {
    let mut p = *params;
    p.pulse_length = tau;
    // the phase integral is exact per sample interval, so the coarsest grid will do
    p.sample_rate = MIN_SAMPLES_PER_CYCLE * p.drive_frequency;
    let tr = simulate_pulse(&p)?;
    let b = config.center_field_per_ampere()?;
    Ok(accumulated_phases(&tr, b, &config.coefficients()).last().phi2)
}

/// Pulse length giving center φ⁽²⁾ = `target`, by bisection up to
/// `config.max_pulse_length`. `None` if the target is out of reach.
pub fn solve_pulse_length(config: &EnsembleConfig, params: &CircuitParams, target: f64) -> Result<Option<f64>> {
    if target <= 0.0 {
        return Ok(Some(0.0));
    }
    let (mut lo, mut hi) = (0.0, config.max_pulse_length);
    if center_phi2(config, params, hi)? < target {
        return Ok(None);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if center_phi2(config, params, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DephasingRow {
    pub freq_hz: f64,
    pub n_pi: u32,
    /// `None` when the phase target could not be reached.
    pub pulse_length: Option<f64>,
    pub amplitude: Option<f64>,
    pub std_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DephasingTable {
    pub rows: Vec<DephasingRow>,
}

impl DephasingTable {
    pub fn get(&self, freq_hz: f64, n_pi: u32) -> Option<&DephasingRow> {
        self.rows.iter().find(|r| r.freq_hz == freq_hz && r.n_pi == n_pi)
    }

    /// `freq_hz,n_pi,amplitude,std_err`; unreachable targets leave the values empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "freq_hz,n_pi,amplitude,std_err")?;
        for r in &self.rows {
            match (r.amplitude, r.std_err) {
                (Some(a), Some(e)) => writeln!(w, "{},{},{:.12e},{:.12e}", r.freq_hz, r.n_pi, a, e)?,
                _ => writeln!(w, "{},{},,", r.freq_hz, r.n_pi)?,
            }
        }
        Ok(())
    }
}

/// A zero current over the same span as a decayed pulse, for the n = 0 rows.
fn idle_trace(params: &CircuitParams) -> Result<CurrentTrace> {
    let mut p = *params;
    p.voltage = 0.0;
    p.pulse_length = 0.0;
    simulate_pulse(&p)
}

/// ⟨α̂_R⟩ for center phase targets nπ, n = 0..=n_max, at each drive frequency.
pub fn dephasing_curve(config: &EnsembleConfig, frequencies: &[f64], n_max: u32) -> Result<DephasingTable> {
    config.validate()?;
    let field = FieldSource::for_config(config)?;
    let obs = Observables::default();
    let mut rows = Vec::new();
    for &f in frequencies {
        if !(f > 0.0) {
            return Err(invalid("sweep.drive_frequencies_Hz", "must be positive"));
        }
        let params = config.circuit_at(f);
        params.validate()?;
        let mut traces = Vec::new();
        let mut slots = Vec::new();
        for n in 0..=n_max {
            let tau = if n == 0 { Some(0.0) } else { solve_pulse_length(config, &params, n as f64 * PI)? };
            match tau {
                Some(t) => {
                    let tr = if n == 0 {
                        idle_trace(&params)?
                    } else {
                        let mut p = params;
                        p.pulse_length = t;
                        simulate_pulse(&p)?
                    };
                    slots.push((n, Some((t, traces.len()))));
                    traces.push(tr);
                }
                None => slots.push((n, None)),
            }
        }
        let outcomes = if traces.is_empty() { Vec::new() } else { evolve_with_field(config, &traces, &field)? };
        for (n, slot) in slots {
            rows.push(match slot {
                Some((tau, idx)) => {
                    let a = outcomes[idx].amplitude(&obs);
                    DephasingRow {
                        freq_hz: f,
                        n_pi: n,
                        pulse_length: Some(tau),
                        amplitude: Some(a.amplitude),
                        std_err: Some(a.std_err),
                    }
                }
                None => DephasingRow { freq_hz: f, n_pi: n, pulse_length: None, amplitude: None, std_err: None },
            });
        }
    }
    Ok(DephasingTable { rows })
}

/// Motionless prediction for the n-th target: (A/2)(1 − sin nπ) = A/2.
pub fn motionless_amplitude(phi2: f64) -> f64 {
    appendix_pipeline(phi2, &Observables::default()).alpha_r
}
