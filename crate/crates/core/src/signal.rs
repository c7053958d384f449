//! Probe-stage polarization-rotation signal: synthesis and damped least-squares fit.
//!
//! δα(t) = χ e^{−γt} [α_R V_R sin(2Ω_L t) + α_I V_R cos(2Ω_L t) − β V_I]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use crate::atomdata::ZeemanCoefficients;
use crate::circuit::{simulate_pulse, CircuitParams};
use crate::error::{invalid, Error, Result};
use crate::spin::{accumulated_phases, appendix_pipeline, Observables};

pub const N_PARAMS: usize = 8;

/// Parameter names in vector order.
pub const PARAM_NAMES: [&str; N_PARAMS] = ["chi", "gamma", "omega_L", "alpha_R", "alpha_I", "beta", "V_R", "V_I"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidModel {
    pub chi: f64,
    /// s⁻¹
    pub gamma: f64,
    /// rad/s
    #[serde(rename = "omega_L")]
    pub omega_l: f64,
    #[serde(rename = "alpha_R")]
    pub alpha_r: f64,
    #[serde(rename = "alpha_I")]
    pub alpha_i: f64,
    pub beta: f64,
    #[serde(rename = "V_R")]
    pub v_r: f64,
    #[serde(rename = "V_I")]
    pub v_i: f64,
}

impl Default for FidModel {
    /// 2Ω_L/2π = 5 kHz, γ = 50 s⁻¹, unit scales, the φ⁽²⁾ = 0 expectation values.
    fn default() -> Self {
        Self {
            chi: 1.0,
            gamma: 50.0,
            omega_l: 2.0 * PI * 2.5e3,
            alpha_r: 0.5,
            alpha_i: 0.0,
            beta: 0.0,
            v_r: 1.0,
            v_i: 1.0,
        }
    }
}

impl FidModel {
    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [self.chi, self.gamma, self.omega_l, self.alpha_r, self.alpha_i, self.beta, self.v_r, self.v_i]
    }

    pub fn from_array(p: [f64; N_PARAMS]) -> Self {
        Self { chi: p[0], gamma: p[1], omega_l: p[2], alpha_r: p[3], alpha_i: p[4], beta: p[5], v_r: p[6], v_i: p[7] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(invalid("signal.gamma_per_s", "must be finite and non-negative"));
        }
        for (name, v) in PARAM_NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err(invalid(&format!("signal.{name}"), "must be finite"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn evaluate(&self, t: f64) -> f64 {
        let (s, c) = (2.0 * self.omega_l * t).sin_cos();
        self.chi
            * (-self.gamma * t).exp()
            * (self.alpha_r * self.v_r * s + self.alpha_i * self.v_r * c - self.beta * self.v_i)
    }

    /// ∂δα/∂p in parameter order.
    #[inline]
    pub fn gradient(&self, t: f64) -> [f64; N_PARAMS] {
        let (s, c) = (2.0 * self.omega_l * t).sin_cos();
        let e = (-self.gamma * t).exp();
        let osc = self.alpha_r * self.v_r * s + self.alpha_i * self.v_r * c;
        let bracket = osc - self.beta * self.v_i;
        let ce = self.chi * e;
        [
            e * bracket,
            -t * ce * bracket,
            ce * 2.0 * t * self.v_r * (self.alpha_r * c - self.alpha_i * s),
            ce * self.v_r * s,
            ce * self.v_r * c,
            -ce * self.v_i,
            ce * (self.alpha_r * s + self.alpha_i * c),
            -ce * self.beta,
        ]
    }
}

/// Which parameters the fit holds fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenMask(pub [bool; N_PARAMS]);

impl Default for FrozenMask {
    /// χ, V_R and V_I frozen: the fit then estimates the products with the
    /// expectation values.
    fn default() -> Self {
        let mut m = [false; N_PARAMS];
        m[0] = true;
        m[6] = true;
        m[7] = true;
        Self(m)
    }
}

impl FrozenMask {
    pub fn none() -> Self {
        Self([false; N_PARAMS])
    }

    pub fn with(mut self, name: &str, frozen: bool) -> Result<Self> {
        let i = PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::Domain(format!("unknown fit parameter `{name}`")))?;
        self.0[i] = frozen;
        Ok(self)
    }

    fn free(&self) -> Vec<usize> {
        (0..N_PARAMS).filter(|&i| !self.0[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_s,delta_alpha_rad")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t:.12e},{v:.12e}")?;
        }
        Ok(())
    }
}

/// `n` uniform sample times starting at 0 with spacing `dt`.
pub fn uniform_times(n: usize, dt: f64) -> Vec<f64> {
    (0..n).map(|k| k as f64 * dt).collect()
}

/// Model samples plus white Gaussian noise.
pub fn synthesize_fid<R: Rng + ?Sized>(
    model: &FidModel,
    times: &[f64],
    noise_sigma: f64,
    rng: &mut R,
) -> Result<TimeSeries> {
    model.validate()?;
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("sample times must be strictly ascending".into()));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::Domain("noise sigma must be non-negative".into()));
    }
    let values = times
        .iter()
        .map(|&t| {
            let clean = model.evaluate(t);
            if noise_sigma > 0.0 {
                clean + noise_sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                clean
            }
        })
        .collect();
    Ok(TimeSeries { times: times.to_vec(), values })
}

/// Frequency (Hz) of the strongest line of the mean-removed series, refined by
/// zero padding and a parabola through the peak bin. Sample times must be uniform.
pub fn spectrum_peak(series: &TimeSeries) -> Result<f64> {
    let n = series.len();
    if n < 4 {
        return Err(Error::Domain("too few samples for a spectrum".into()));
    }
    let dt = (series.times[n - 1] - series.times[0]) / (n - 1) as f64;
    if series.times.windows(2).any(|w| ((w[1] - w[0]) / dt - 1.0).abs() > 1e-6) {
        return Err(Error::Domain("spectrum needs uniformly spaced samples".into()));
    }
    let mean = series.values.iter().sum::<f64>() / n as f64;
    let m = (8 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series.values.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let mag: Vec<f64> = buf[..m / 2 + 1].iter().map(|z| z.norm()).collect();
    let k = (1..mag.len()).max_by(|&a, &b| mag[a].partial_cmp(&mag[b]).unwrap()).unwrap_or(0);
    let shift = if k > 0 && k + 1 < mag.len() {
        let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
        let den = a - 2.0 * b + c;
        if den != 0.0 {
            0.5 * (a - c) / den
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok((k as f64 + shift) / (m as f64 * dt))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Converged when every free parameter's relative step falls below this.
    pub step_tolerance: f64,
    /// Replace a free Ω_L guess by the spectral peak estimate.
    pub spectral_omega_guess: bool,
    /// Seed free amplitude parameters with a linear least-squares solve.
    pub linear_amplitude_guess: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 500, step_tolerance: 1e-12, spectral_omega_guess: true, linear_amplitude_guess: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FidModel,
    /// `None` unless the fit converged.
    pub residual_rms: Option<f64>,
    /// One-sigma errors of the free parameters, keyed by name.
    pub std_errors: BTreeMap<String, f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.std_errors.get(name).copied()
    }
}

fn normal_equations(
    model: &FidModel,
    series: &TimeSeries,
    free: &[usize],
) -> (DMatrix<f64>, DVector<f64>, f64) {
    let p = free.len();
    let mut jtj = DMatrix::<f64>::zeros(p, p);
    let mut jtr = DVector::<f64>::zeros(p);
    let mut ssr = 0.0;
    let mut row = vec![0.0; p];
    for (&t, &y) in series.times.iter().zip(&series.values) {
        let r = y - model.evaluate(t);
        ssr += r * r;
        let g = model.gradient(t);
        for (a, &i) in free.iter().enumerate() {
            row[a] = g[i];
        }
        for a in 0..p {
            jtr[a] += row[a] * r;
            for b in 0..=a {
                jtj[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            jtj[(b, a)] = jtj[(a, b)];
        }
    }
    (jtj, jtr, ssr)
}

fn sum_squares(model: &FidModel, series: &TimeSeries) -> f64 {
    series.times.iter().zip(&series.values).map(|(&t, &y)| (y - model.evaluate(t)).powi(2)).sum()
}

/// Linear least squares for the free subset of (α_R, α_I, β) at fixed nonlinear parameters.
fn linear_amplitudes(model: &mut FidModel, series: &TimeSeries, frozen: &FrozenMask) {
    let idx: Vec<usize> = [3, 4, 5].into_iter().filter(|&i| !frozen.0[i]).collect();
    if idx.is_empty() {
        return;
    }
    let n = series.len();
    let mut a = DMatrix::<f64>::zeros(n, idx.len());
    let mut b = DVector::<f64>::zeros(n);
    let mut fixed = *model;
    for &i in &idx {
        let mut p = fixed.to_array();
        p[i] = 0.0;
        fixed = FidModel::from_array(p);
    }
    for (k, (&t, &y)) in series.times.iter().zip(&series.values).enumerate() {
        let g = model.gradient(t);
        for (c, &i) in idx.iter().enumerate() {
            a[(k, c)] = g[i];
        }
        b[k] = y - fixed.evaluate(t);
    }
    if let Ok(x) = a.svd(true, true).solve(&b, 1e-14) {
        let mut p = model.to_array();
        for (c, &i) in idx.iter().enumerate() {
            if x[c].is_finite() {
                p[i] = x[c];
            }
        }
        *model = FidModel::from_array(p);
    }
}

/// Levenberg–Marquardt fit of the free parameters with default options.
pub fn fit_fid(series: &TimeSeries, initial_guess: &FidModel, frozen: &FrozenMask) -> Result<FitResult> {
    fit_fid_with(series, initial_guess, frozen, &FitOptions::default())
}

pub fn fit_fid_with(
    series: &TimeSeries,
    initial_guess: &FidModel,
    frozen: &FrozenMask,
    options: &FitOptions,
) -> Result<FitResult> {
    let free = frozen.free();
    if free.is_empty() {
        return Err(Error::Domain("every fit parameter is frozen".into()));
    }
    if series.len() < 8 * free.len() {
        return Err(Error::Precondition(format!(
            "{} samples for {} free parameters; need at least {}",
            series.len(),
            free.len(),
            8 * free.len()
        )));
    }
    if series.values.iter().chain(&series.times).any(|v| !v.is_finite()) {
        return Err(Error::Domain("series contains non-finite values".into()));
    }
    initial_guess.validate()?;

    let mut model = *initial_guess;
    if options.spectral_omega_guess && !frozen.0[2] {
        if let Ok(f) = spectrum_peak(series) {
            if f > 0.0 {
                model.omega_l = PI * f;
            }
        }
    }
    if options.linear_amplitude_guess {
        linear_amplitudes(&mut model, series, frozen);
    }

    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let (mut jtj, mut jtr, mut ssr) = normal_equations(&model, series, &free);
    let scale = series.max_abs().max(f64::MIN_POSITIVE);
    while iterations < options.max_iterations {
        iterations += 1;
        if ssr <= (1e-14 * scale).powi(2) * series.len() as f64 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for d in 0..free.len() {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(delta) = a.clone().cholesky().map(|c| c.solve(&jtr)).or_else(|| a.lu().solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut p = model.to_array();
            for (k, &i) in free.iter().enumerate() {
                p[i] += delta[k];
            }
            p[1] = p[1].max(0.0);
            let trial = FidModel::from_array(p);
            let trial_ssr = sum_squares(&trial, series);
            if trial_ssr.is_finite() && trial_ssr <= ssr {
                let small = free.iter().enumerate().all(|(k, &i)| {
                    delta[k].abs() <= options.step_tolerance * (model.to_array()[i].abs() + options.step_tolerance)
                });
                model = trial;
                (jtj, jtr, ssr) = normal_equations(&model, series, &free);
                lambda = (lambda * 0.3).max(1e-15);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // no downhill step at any damping: a stationary point to working precision
            converged = true;
            break;
        }
    }

    let dof = (series.len() - free.len()).max(1) as f64;
    let s2 = ssr / dof;
    let mut std_errors = BTreeMap::new();
    if let Some(inv) = jtj.clone().try_inverse() {
        for (k, &i) in free.iter().enumerate() {
            std_errors.insert(PARAM_NAMES[i].to_string(), (s2 * inv[(k, k)]).max(0.0).sqrt());
        }
    }
    Ok(FitResult {
        model,
        residual_rms: converged.then(|| (ssr / series.len() as f64).sqrt()),
        std_errors,
        converged,
        iterations,
    })
}

/// Inputs of a motionless-atom τ sweep through circuit, phases, readout, synthesis and fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSweep {
    pub circuit: CircuitParams,
    pub field_per_ampere: f64,
    pub coeffs: ZeemanCoefficients,
    pub observables: Observables,
    /// Template FID; its expectation values are replaced per τ.
    pub fid: FidModel,
    pub frozen: FrozenMask,
    pub times: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub taus: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauPoint {
    pub tau: f64,
    pub phi2: f64,
    /// ⟨α̂_R⟩ straight from the spin pipeline.
    pub direct: f64,
    /// ⟨α̂_R⟩ recovered by the fit.
    pub fitted: f64,
    pub std_err: f64,
    pub converged: bool,
}

/// ⟨α̂_R⟩ versus pulse length; each τ uses noise stream `index` of `seed`.
pub fn amplitude_vs_tau(sweep: &TauSweep) -> Result<Vec<TauPoint>> {
    sweep.circuit.validate()?;
    sweep.fid.validate()?;
    sweep
        .taus
        .par_iter()
        .enumerate()
        .map(|(index, &tau)| {
            let mut p = sweep.circuit;
            p.pulse_length = tau;
            let trace = simulate_pulse(&p)?;
            let phi2 = accumulated_phases(&trace, sweep.field_per_ampere, &sweep.coeffs).last().phi2;
            let e = appendix_pipeline(phi2, &sweep.observables);
            let truth = FidModel { alpha_r: e.alpha_r, alpha_i: e.alpha_i, beta: e.beta, ..sweep.fid };
            let mut rng = ChaCha8Rng::seed_from_u64(sweep.seed);
            rng.set_stream(index as u64);
            let series = synthesize_fid(&truth, &sweep.times, sweep.noise_sigma, &mut rng)?;
            let guess = FidModel { alpha_r: 0.0, alpha_i: 0.0, beta: 0.0, ..sweep.fid };
            let fit = fit_fid(&series, &guess, &sweep.frozen)?;
            Ok(TauPoint {
                tau,
                phi2,
                direct: e.alpha_r,
                fitted: fit.model.alpha_r,
                std_err: fit.std_error("alpha_R").unwrap_or(f64::NAN),
                converged: fit.converged,
            })
        })
        .collect()
}
