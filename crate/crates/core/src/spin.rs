//! Spin-1 states, rotations, the pulse propagator and the probe observables.
//!
//! Basis order is m = +1, 0, −1 along z. Conventions:
//!
//! * rotations are `exp(−iθ n·F)` (active, right-handed);
//! * the y-quantized basis is reached with `O = exp(+iπ/2 F_x)`, which maps F_z onto F_y;
//! * the probe-stage rotation is `exp(−iπ/4 F_x)`. With this handedness the
//!   prepared |1⟩ₓ state ends with ⟨α̂_R⟩ = (A/2)(1 − sin φ⁽²⁾); the opposite sign
//!   gives 1 + sin φ⁽²⁾.

use nalgebra::{Complex, Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};
use std::ops::Mul;

use crate::atomdata::ZeemanCoefficients;
use crate::circuit::{check_tail, CurrentTrace};
use crate::error::{Error, Result};
use crate::vec3::Vec3;

pub type C64 = Complex<f64>;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// 3×3 complex operator in the z basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Operator3(pub Matrix3<C64>);

/// Normalized spin-1 ket in the z basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinState(Vector3<C64>);

impl Operator3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn zeros() -> Self {
        Self(Matrix3::zeros())
    }

    pub fn from_rows(rows: [[C64; 3]; 3]) -> Self {
        Self(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(self.0 * s)
    }

    pub fn add(&self, o: &Operator3) -> Self {
        Self(self.0 + o.0)
    }

    pub fn sub(&self, o: &Operator3) -> Self {
        Self(self.0 - o.0)
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.0[(r, c)]
    }

    /// Largest element modulus.
    pub fn max_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// ‖U†U − 𝟙‖_max
    pub fn unitarity_defect(&self) -> f64 {
        (self.0.adjoint() * self.0 - Matrix3::identity()).iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// ‖A − A†‖_max
    pub fn hermiticity_defect(&self) -> f64 {
        (self.0 - self.0.adjoint()).iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn apply(&self, s: &SpinState) -> SpinState {
        SpinState(self.0 * s.0)
    }

    /// ⟨ψ|A|ψ⟩
    pub fn expectation(&self, s: &SpinState) -> C64 {
        s.0.dotc(&(self.0 * s.0))
    }

    pub fn commutator(&self, o: &Operator3) -> Self {
        Self(self.0 * o.0 - o.0 * self.0)
    }

    pub fn to_nested(&self) -> Vec<Vec<[f64; 2]>> {
        (0..3)
            .map(|r| (0..3).map(|c| [self.0[(r, c)].re, self.0[(r, c)].im]).collect())
            .collect()
    }

    pub fn from_nested(rows: &[Vec<[f64; 2]>]) -> Result<Self> {
        if rows.len() != 3 || rows.iter().any(|r| r.len() != 3) {
            return Err(Error::Domain("operator must be 3×3".into()));
        }
        Ok(Self(Matrix3::from_fn(|r, c| C64::new(rows[r][c][0], rows[r][c][1]))))
    }
}

impl Mul for Operator3 {
    type Output = Operator3;
    fn mul(self, o: Operator3) -> Operator3 {
        Operator3(self.0 * o.0)
    }
}

impl Mul<SpinState> for Operator3 {
    type Output = SpinState;
    fn mul(self, s: SpinState) -> SpinState {
        self.apply(&s)
    }
}

impl Serialize for Operator3 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Operator3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        Operator3::from_nested(&rows).map_err(serde::de::Error::custom)
    }
}

impl SpinState {
    /// Normalize the given amplitudes (order m = +1, 0, −1).
    pub fn new(amplitudes: [C64; 3]) -> Result<Self> {
        let v = Vector3::from(amplitudes);
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain("state vector must be non-zero and finite".into()));
        }
        Ok(Self(v / C64::new(n, 0.0)))
    }

    /// |m⟩ in the z basis.
    pub fn basis(m: i32) -> Result<Self> {
        let idx = match m {
            1 => 0,
            0 => 1,
            -1 => 2,
            _ => return Err(Error::Domain(format!("m = {m} is not a spin-1 projection"))),
        };
        let mut v = Vector3::zeros();
        v[idx] = ONE;
        Ok(Self(v))
    }

    /// |1⟩ₓ = exp(−iπ/2 F_y)|1⟩_z = (|1⟩ + √2|0⟩ + |−1⟩)/2.
    pub fn x_polarized() -> Self {
        rotation_unchecked(Vec3::Y, FRAC_PI_2).apply(&SpinState::basis(1).unwrap())
    }

    pub fn amplitudes(&self) -> [C64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_nested(&self) -> Vec<[f64; 2]> {
        self.0.iter().map(|z| [z.re, z.im]).collect()
    }
}

impl Serialize for SpinState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpinState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<[f64; 2]>::deserialize(d)?;
        if v.len() != 3 {
            return Err(serde::de::Error::custom("state must have 3 amplitudes"));
        }
        let amps = [C64::new(v[0][0], v[0][1]), C64::new(v[1][0], v[1][1]), C64::new(v[2][0], v[2][1])];
        SpinState::new(amps).map_err(serde::de::Error::custom)
    }
}

/// Spin-1 angular momentum matrices (F_x, F_y, F_z), ħ = 1.
pub fn spin_matrices() -> [Operator3; 3] {
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    let fx = Operator3::from_rows([[ZERO, s, ZERO], [s, ZERO, s], [ZERO, s, ZERO]]);
    let is = I * FRAC_1_SQRT_2;
    let fy = Operator3::from_rows([[ZERO, -is, ZERO], [is, ZERO, -is], [ZERO, is, ZERO]]);
    let fz = Operator3::from_rows([[ONE, ZERO, ZERO], [ZERO, ZERO, ZERO], [ZERO, ZERO, -ONE]]);
    [fx, fy, fz]
}

/// n·F
pub fn spin_projection(n: Vec3) -> Operator3 {
    let [fx, fy, fz] = spin_matrices();
    Operator3(fx.0 * C64::new(n.x, 0.0) + fy.0 * C64::new(n.y, 0.0) + fz.0 * C64::new(n.z, 0.0))
}

/// exp(−iθ n·F) for a unit axis `n`.
pub fn rotation(axis: Vec3, angle: f64) -> Result<Operator3> {
    if (axis.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("rotation axis must be a unit vector (|n| = {})", axis.norm())));
    }
    Ok(rotation_unchecked(axis, angle))
}

/// Rodrigues form for spin 1, using (n·F)³ = n·F:
/// exp(−iθ N) = 𝟙 − i sinθ N + (cosθ − 1) N².
pub(crate) fn rotation_unchecked(axis: Vec3, angle: f64) -> Operator3 {
    let n = spin_projection(axis).0;
    let (s, c) = angle.sin_cos();
    Operator3(Matrix3::identity() - n * (I * s) + n * n * C64::new(c - 1.0, 0.0))
}

/// exp(−iφ (n·F)²) = 𝟙 + (e^{−iφ} − 1)(n·F)², since (n·F)² is a projector for spin 1.
pub fn quadratic_phase(axis: Vec3, phi: f64) -> Operator3 {
    let n = spin_projection(axis).0;
    let p = n * n;
    Operator3(Matrix3::identity() + p * (C64::from_polar(1.0, -phi) - ONE))
}

/// Change of basis whose columns are the F_y eigenvectors |m⟩_y (m = +1, 0, −1).
pub fn y_to_z_basis() -> Operator3 {
    rotation_unchecked(Vec3::X, -FRAC_PI_2)
}

/// Pulse propagator after the linear phase has cancelled:
/// diagonal in the y basis with entries e^{−iφ m²}, returned in the z basis.
pub fn pulse_unitary(phi2: f64) -> Operator3 {
    let o = y_to_z_basis();
    let e = C64::from_polar(1.0, -phi2);
    let diag = Operator3(Matrix3::from_diagonal(&Vector3::new(e, ONE, e)));
    o * diag * o.adjoint()
}

/// The probe-stage observables α̂_R, α̂_I, β̂.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub alpha_r: Operator3,
    pub alpha_i: Operator3,
    pub beta: Operator3,
}

impl Observables {
    /// Scale constants `a` (coherence observables) and `b` (orientation observable).
    pub fn new(a: f64, b: f64) -> Self {
        let a = C64::new(a, 0.0);
        let b = C64::new(b, 0.0);
        let alpha_r = Operator3::from_rows([[ZERO, ZERO, a], [ZERO, ZERO, ZERO], [a, ZERO, ZERO]]);
        // iA(|−1⟩⟨1| − |1⟩⟨−1|)
        let alpha_i = Operator3::from_rows([[ZERO, ZERO, -I * a], [ZERO, ZERO, ZERO], [I * a, ZERO, ZERO]]);
        let beta = Operator3::from_rows([[b, ZERO, ZERO], [ZERO, ZERO, ZERO], [ZERO, ZERO, -b]]);
        Self { alpha_r, alpha_i, beta }
    }

    /// (⟨α̂_R⟩, ⟨α̂_I⟩, ⟨β̂⟩) for a pure state.
    pub fn evaluate(&self, s: &SpinState) -> Expectations {
        Expectations {
            alpha_r: self.alpha_r.expectation(s).re,
            alpha_i: self.alpha_i.expectation(s).re,
            beta: self.beta.expectation(s).re,
        }
    }

    /// Expectation values for a density matrix.
    pub fn evaluate_mixed(&self, rho: &DensityMatrix) -> Expectations {
        Expectations {
            alpha_r: rho.expectation(&self.alpha_r),
            alpha_i: rho.expectation(&self.alpha_i),
            beta: rho.expectation(&self.beta),
        }
    }
}

impl Default for Observables {
    fn default() -> Self {
        Self::new(1.0, 1.0)
    }
}

/// Free-function form with unit constants A = B = 1.
pub fn observables() -> Observables {
    Observables::default()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    pub alpha_r: f64,
    pub alpha_i: f64,
    pub beta: f64,
}

/// The π/4 probe-stage rotation about x.
pub fn readout_rotation() -> Operator3 {
    rotation_unchecked(Vec3::X, FRAC_PI_4)
}

/// Prepare |1⟩ₓ, apply the pulse, rotate by π/4 about x and read out.
pub fn appendix_pipeline(phi2: f64, obs: &Observables) -> Expectations {
    let psi = readout_rotation() * (pulse_unitary(phi2) * SpinState::x_polarized());
    obs.evaluate(&psi)
}

/// Accumulated linear and quadratic phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePair {
    pub phi1: f64,
    pub phi2: f64,
}

/// Larmor frequencies and running phases at every sample of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCurve {
    pub times: Vec<f64>,
    pub omega1: Vec<f64>,
    pub omega2: Vec<f64>,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
}

impl PhaseCurve {
    pub fn last(&self) -> PhasePair {
        PhasePair { phi1: *self.phi1.last().unwrap(), phi2: *self.phi2.last().unwrap() }
    }
}

/// Running phases for B(t) = field_per_ampere · I(t), without the tail precondition.
///
/// φ⁽¹⁾ is the exact capacitor-charge difference for solver traces; the φ⁽²⁾
/// increments are 5-point Gauss–Legendre integrals of the analytic I² over each
/// sample interval, so the running φ⁽²⁾ never decreases.
pub fn accumulated_phases(trace: &CurrentTrace, field_per_ampere: f64, coeffs: &ZeemanCoefficients) -> PhaseCurve {
    let k1 = coeffs.omega1_per_b * field_per_ampere;
    let k2 = coeffs.omega2_per_b2 * field_per_ampere * field_per_ampere;
    let n = trace.times.len();
    let mut phi1 = Vec::with_capacity(n);
    let mut phi2 = Vec::with_capacity(n);
    let mut acc2 = 0.0;
    let mut trapz1 = 0.0;
    for k in 0..n {
        if k > 0 {
            acc2 += k2 * trace.integral_i2(trace.times[k - 1], trace.times[k]);
            trapz1 += 0.5 * (trace.currents[k - 1] + trace.currents[k]) * (trace.times[k] - trace.times[k - 1]);
        }
        let q = match &trace.charges {
            Some(qs) => qs[k] - qs[0],
            None => trapz1,
        };
        phi1.push(k1 * q);
        phi2.push(acc2);
    }
    PhaseCurve {
        times: trace.times.clone(),
        omega1: trace.currents.iter().map(|i| k1 * i).collect(),
        omega2: trace.currents.iter().map(|i| k2 * i * i).collect(),
        phi1,
        phi2,
    }
}

/// φ⁽¹⁾ and φ⁽²⁾ over the whole trace; the trace must include the decayed tail.
pub fn phases_from_trace(trace: &CurrentTrace, field_per_ampere: f64, coeffs: &ZeemanCoefficients) -> Result<PhasePair> {
    check_tail(trace)?;
    Ok(accumulated_phases(trace, field_per_ampere, coeffs).last())
}

/// Smallest accepted step density for [`brute_force_evolution`].
pub const MIN_STEPS_PER_CYCLE: usize = 100;

/// Time-ordered product of short-step propagators
/// exp(−i[Ω⁽¹⁾(t) F_y + Ω⁽²⁾(t) F_y²] Δt) over the trace, midpoint-sampled,
/// for a motionless atom in a field along y.
pub fn brute_force_evolution(
    trace: &CurrentTrace,
    field_per_ampere: f64,
    coeffs: &ZeemanCoefficients,
    steps_per_cycle: usize,
) -> Result<Operator3> {
    if steps_per_cycle < MIN_STEPS_PER_CYCLE {
        return Err(Error::Precondition(format!(
            "{steps_per_cycle} steps per drive cycle; at least {MIN_STEPS_PER_CYCLE} required"
        )));
    }
    let [_, fy, _] = spin_matrices();
    let fy = fy.0;
    let fy2 = fy * fy;
    let k1 = coeffs.omega1_per_b * field_per_ampere;
    let k2 = coeffs.omega2_per_b2 * field_per_ampere * field_per_ampere;
    let f = trace.params.drive_frequency;

    let intervals: Vec<(f64, f64)> = if trace.is_analytic() {
        trace.segments.iter().map(|s| (s.t_start, s.t_end.min(trace.end_time()))).collect()
    } else {
        trace.times.windows(2).map(|w| (w[0], w[1])).collect()
    };

    let mut u = Matrix3::<C64>::identity();
    for (a, b) in intervals {
        if b <= a {
            continue;
        }
        let n = (((b - a) * f * steps_per_cycle as f64).ceil() as usize).max(1);
        let dt = (b - a) / n as f64;
        for k in 0..n {
            let i = trace.current_at(a + (k as f64 + 0.5) * dt);
            let th1 = k1 * i * dt;
            let th2 = k2 * i * i * dt;
            // the step generator has eigenvalues m·th1 + m²·th2 on the F_y eigenbasis
            let e = C64::from_polar(1.0, -th2);
            let step = Matrix3::identity() - fy * (I * e * th1.sin()) + fy2 * (e * th1.cos() - ONE);
            u = step * u;
        }
    }
    Ok(Operator3(u))
}

/// max-norm distance between two operators after removing the relative global phase,
/// aligned on the largest-modulus element of `a`.
pub fn distance_up_to_phase(a: &Operator3, b: &Operator3) -> f64 {
    let (mut best, mut idx) = (0.0, (0, 0));
    for r in 0..3 {
        for c in 0..3 {
            let v = a.get(r, c).norm();
            if v > best {
                best = v;
                idx = (r, c);
            }
        }
    }
    let (av, bv) = (a.get(idx.0, idx.1), b.get(idx.0, idx.1));
    let phase = if bv.norm() > 0.0 { (av / bv) / (av / bv).norm() } else { ONE };
    a.sub(&b.scale(phase)).max_norm()
}

/// Ensemble density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(pub Matrix3<C64>);

impl DensityMatrix {
    pub fn pure(s: &SpinState) -> Self {
        Self(s.0 * s.0.adjoint())
    }

    /// Uniform mixture, summed in the given order.
    pub fn mixture<'a>(states: impl IntoIterator<Item = &'a SpinState>) -> Result<Self> {
        let mut acc = Matrix3::<C64>::zeros();
        let mut n = 0usize;
        for s in states {
            acc += s.0 * s.0.adjoint();
            n += 1;
        }
        if n == 0 {
            return Err(Error::Domain("empty ensemble".into()));
        }
        Ok(Self(acc / C64::new(n as f64, 0.0)))
    }

    pub fn transform(&self, u: &Operator3) -> Self {
        Self(u.0 * self.0 * u.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Tr(ρA), real part.
    pub fn expectation(&self, a: &Operator3) -> f64 {
        (self.0 * a.0).trace().re
    }

    pub fn hermiticity_defect(&self) -> f64 {
        Operator3(self.0).hermiticity_defect()
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let h = (self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        let ev = h.symmetric_eigenvalues();
        let mut out = [ev[0], ev[1], ev[2]];
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }
}

/// SU(2) element [[a, b], [−b*, a*]]: the spin-½ image of a rotation. Composing
/// these and mapping to spin 1 once is equivalent to composing spin-1 rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Su2 {
    pub a: C64,
    pub b: C64,
}

impl Su2 {
    pub const IDENTITY: Su2 = Su2 { a: ONE, b: ZERO };

    /// exp(−iθ n·σ/2)
    #[inline]
    pub fn rotation(axis: Vec3, angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Su2 {
            a: C64::new(c, -s * axis.z),
            b: C64::new(-s * axis.y, -s * axis.x),
        }
    }

    /// exp(−i v·σ/2) for a rotation vector `v` (angle |v| about v̂).
    #[inline]
    pub fn from_rotation_vector(v: Vec3) -> Self {
        let th = v.norm();
        if th == 0.0 {
            return Self::IDENTITY;
        }
        Self::rotation(v / th, th)
    }

    /// self · o
    #[inline]
    pub fn compose(&self, o: &Su2) -> Su2 {
        // [[a, b], [−b*, a*]] [[c, d], [−d*, c*]]
        Su2 {
            a: self.a * o.a - self.b * o.b.conj(),
            b: self.a * o.b + self.b * o.a.conj(),
        }
    }

    /// Spin-1 representation in the (+1, 0, −1) basis.
    pub fn to_spin1(&self) -> Operator3 {
        let (a, b) = (self.a, self.b);
        let c = -b.conj();
        let d = a.conj();
        let r2 = C64::new(std::f64::consts::SQRT_2, 0.0);
        Operator3::from_rows([
            [a * a, r2 * a * b, b * b],
            [r2 * a * c, a * d + b * c, r2 * b * d],
            [c * c, r2 * c * d, d * d],
        ])
    }

    pub fn norm_defect(&self) -> f64 {
        (self.a.norm_sqr() + self.b.norm_sqr() - 1.0).abs()
    }
}
