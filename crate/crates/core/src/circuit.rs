//! H-bridge driven series RLC pulser.
//!
//! Between switching instants the bridge applies a constant voltage, so the
//! circuit obeys `L dI/dt + R I + Q/C = V` with constant V. Its solution is a
//! damped sinusoid (or the over/critically damped analogue) about the
//! equilibrium charge `C V`; the solver propagates (I, Q) across each segment in
//! closed form. The capacitor ends uncharged, so ∫I dt over the whole trace is the
//! final charge and vanishes up to the exponentially small remnant of the tail.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::quadrature::gauss_legendre5;

/// Minimum samples per drive cycle for a valid trace.
pub const MIN_SAMPLES_PER_CYCLE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    /// Series resistance of coils and resistor, Ω.
    pub resistance: f64,
    /// Coil inductance, H.
    pub inductance: f64,
    /// Series capacitance, F.
    pub capacitance: f64,
    /// H-bridge supply voltage, V.
    pub voltage: f64,
    /// Square-wave switching frequency, Hz.
    pub drive_frequency: f64,
    /// Duration of the driven part, s.
    pub pulse_length: f64,
    /// Free decay window after the pulse, s.
    pub tail_length: f64,
    /// Output sample rate, Hz.
    pub sample_rate: f64,
    /// Additional loss resistance (switches, wiring), Ω.
    pub extra_resistance: f64,
}

impl CircuitParams {
    /// R = 3.3 Ω, C = 10 nF, L = 25 μH, V = 23 V, 326 kHz drive, 100 μs pulse.
    pub fn bench_pulser() -> Self {
        let mut p = Self {
            resistance: 3.3,
            inductance: 25e-6,
            capacitance: 10e-9,
            voltage: 23.0,
            drive_frequency: 326e3,
            pulse_length: 100e-6,
            tail_length: 0.0,
            sample_rate: 326e3 * 200.0,
            extra_resistance: 0.0,
        };
        p.tail_length = p.default_tail_length();
        p
    }

    /// R + extra resistance.
    #[inline]
    pub fn total_resistance(&self) -> f64 {
        self.resistance + self.extra_resistance
    }

    /// Amplitude decay rate of the free circuit, R/(2L).
    #[inline]
    pub fn decay_rate(&self) -> f64 {
        self.total_resistance() / (2.0 * self.inductance)
    }

    /// 20 · 2L/R.
    pub fn default_tail_length(&self) -> f64 {
        20.0 / self.decay_rate()
    }

    /// Undamped resonance 1/(2π√(LC)), Hz.
    pub fn resonance_frequency(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * (self.inductance * self.capacitance).sqrt())
    }

    /// Damped natural frequency, Hz (zero when not underdamped).
    pub fn damped_frequency(&self) -> f64 {
        let w0sq = 1.0 / (self.inductance * self.capacitance);
        let a = self.decay_rate();
        (w0sq - a * a).max(0.0).sqrt() / (2.0 * std::f64::consts::PI)
    }

    pub fn end_time(&self) -> f64 {
        self.pulse_length + self.tail_length
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("circuit.R_ohm", self.resistance),
            ("circuit.L_H", self.inductance),
            ("circuit.C_F", self.capacitance),
            ("circuit.drive_frequency_Hz", self.drive_frequency),
            ("circuit.sample_rate_Hz", self.sample_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("circuit.V_V", self.voltage),
            ("circuit.pulse_length_s", self.pulse_length),
            ("circuit.tail_length_s", self.tail_length),
            ("circuit.extra_resistance_ohm", self.extra_resistance),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        if self.sample_rate < MIN_SAMPLES_PER_CYCLE * self.drive_frequency {
            return Err(invalid(
                "circuit.sample_rate_Hz",
                format!("need at least {MIN_SAMPLES_PER_CYCLE} samples per drive cycle"),
            ));
        }
        Ok(())
    }
}

/// Bridge output voltage: a 50 % square wave of ±V starting positive at t = 0 and
/// lasting `pulse_length`; zero outside the pulse.
pub fn drive_voltage(params: &CircuitParams, t: f64) -> f64 {
    if t < 0.0 || t >= params.pulse_length {
        return 0.0;
    }
    let half_cycles = (2.0 * params.drive_frequency * t).floor() as i64;
    if half_cycles % 2 == 0 {
        params.voltage
    } else {
        -params.voltage
    }
}

/// One constant-voltage stretch of the trace, with the state at its start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub voltage: f64,
    pub current_start: f64,
    pub charge_start: f64,
}

/// Closed-form propagator of the source-free series RLC.
#[derive(Debug, Clone, Copy)]
struct Propagator {
    alpha: f64,
    w0sq: f64,
    capacitance: f64,
    /// ω₀² − α²
    disc: f64,
}

impl Propagator {
    fn new(p: &CircuitParams) -> Self {
        let alpha = p.decay_rate();
        let w0sq = 1.0 / (p.inductance * p.capacitance);
        Self { alpha, w0sq, capacitance: p.capacitance, disc: w0sq - alpha * alpha }
    }

    /// e^{−αt}·(C(t), S(t)) with C, S = cos, sin(ωt)/ω, their hyperbolic
    /// counterparts, or the critical limit. The hyperbolic case is formed from the
    /// two decaying exponentials so long segments neither overflow nor cancel.
    #[inline]
    fn damped_basis(&self, t: f64) -> (f64, f64) {
        let d = self.disc;
        let x = d * t * t;
        if x.abs() < 1e-6 {
            let damp = (-self.alpha * t).exp();
            let c = 1.0 - x / 2.0 + x * x / 24.0 - x * x * x / 720.0;
            let s = t * (1.0 - x / 6.0 + x * x / 120.0 - x * x * x / 5040.0);
            (damp * c, damp * s)
        } else if d > 0.0 {
            let damp = (-self.alpha * t).exp();
            let w = d.sqrt();
            let (sn, cs) = (w * t).sin_cos();
            (damp * cs, damp * sn / w)
        } else {
            let w = (-d).sqrt();
            let slow = (-self.w0sq / (w + self.alpha) * t).exp();
            let fast = (-(w + self.alpha) * t).exp();
            (0.5 * (slow + fast), 0.5 * (slow - fast) / w)
        }
    }

    /// State (I, Q) after time `t` under constant voltage `v`, from (i0, q0).
    #[inline]
    fn advance(&self, v: f64, i0: f64, q0: f64, t: f64) -> (f64, f64) {
        let qe = self.capacitance * v;
        let u0 = q0 - qe;
        let (c, s) = self.damped_basis(t);
        let u = u0 * c + (i0 + self.alpha * u0) * s;
        let i = i0 * c - (self.alpha * i0 + self.w0sq * u0) * s;
        (i, u + qe)
    }
}

/// Sampled coil current together with the analytic segment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentTrace {
    pub times: Vec<f64>,
    pub currents: Vec<f64>,
    /// Capacitor charge at each sample, when the trace came from the solver.
    pub charges: Option<Vec<f64>>,
    pub params: CircuitParams,
    /// Constant-voltage segments; empty for purely sampled traces.
    pub segments: Vec<Segment>,
}

/// Solve the pulser over [0, τ + tail_length].
pub fn simulate_pulse(params: &CircuitParams) -> Result<CurrentTrace> {
    params.validate()?;
    let prop = Propagator::new(params);
    let t_end = params.end_time();

    // switching instants
    let half = 0.5 / params.drive_frequency;
    let mut edges = vec![0.0];
    let mut k = 1u64;
    loop {
        let t = k as f64 * half;
        if t >= params.pulse_length * (1.0 - 1e-12) {
            break;
        }
        edges.push(t);
        k += 1;
    }
    if params.pulse_length > 0.0 {
        edges.push(params.pulse_length);
    }
    if t_end > *edges.last().unwrap() {
        edges.push(t_end);
    }

    let mut segments = Vec::with_capacity(edges.len());
    let (mut i, mut q) = (0.0, 0.0);
    for (n, w) in edges.windows(2).enumerate() {
        let v = if w[0] < params.pulse_length {
            if n % 2 == 0 { params.voltage } else { -params.voltage }
        } else {
            0.0
        };
        segments.push(Segment { t_start: w[0], t_end: w[1], voltage: v, current_start: i, charge_start: q });
        let (ni, nq) = prop.advance(v, i, q, w[1] - w[0]);
        i = ni;
        q = nq;
    }

    // uniform grid plus every switching instant
    let n_uniform = (t_end * params.sample_rate).floor() as usize;
    let mut times: Vec<f64> = (0..=n_uniform).map(|k| k as f64 / params.sample_rate).collect();
    times.extend(edges.iter().copied());
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * t_end.max(1e-30));
    times.retain(|&t| t <= t_end);
    if times.last().copied() != Some(t_end) {
        times.push(t_end);
    }

    let mut trace = CurrentTrace {
        times: Vec::new(),
        currents: Vec::new(),
        charges: None,
        params: *params,
        segments,
    };
    let mut currents = Vec::with_capacity(times.len());
    let mut charges = Vec::with_capacity(times.len());
    for &t in &times {
        let (i, q) = trace.state_at(t);
        currents.push(i);
        charges.push(q);
    }
    trace.times = times;
    trace.currents = currents;
    trace.charges = Some(charges);
    Ok(trace)
}

impl CurrentTrace {
    /// Wrap externally sampled data. Integrals over such a trace use the trapezoid rule.
    pub fn from_samples(times: Vec<f64>, currents: Vec<f64>, params: CircuitParams) -> Result<Self> {
        if times.len() != currents.len() || times.len() < 2 {
            return Err(Error::Domain("need at least two (t, I) samples of equal length".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("sample times must be strictly increasing".into()));
        }
        Ok(Self { times, currents, charges: None, params, segments: Vec::new() })
    }

    pub fn is_analytic(&self) -> bool {
        !self.segments.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn max_abs_current(&self) -> f64 {
        self.currents.iter().fold(0.0, |m, i| m.max(i.abs()))
    }

    fn segment_index(&self, t: f64) -> usize {
        let idx = self.segments.partition_point(|s| s.t_end <= t);
        idx.min(self.segments.len() - 1)
    }

    /// Exact (I, Q) at time `t` (analytic traces only).
    pub fn state_at(&self, t: f64) -> (f64, f64) {
        if self.segments.is_empty() {
            return (self.current_at(t), f64::NAN);
        }
        if t <= self.segments[0].t_start {
            return (0.0, 0.0);
        }
        let s = &self.segments[self.segment_index(t)];
        let prop = Propagator::new(&self.params);
        prop.advance(s.voltage, s.current_start, s.charge_start, t - s.t_start)
    }

    /// Current at arbitrary `t`: exact for analytic traces, linear interpolation otherwise.
    pub fn current_at(&self, t: f64) -> f64 {
        if !self.segments.is_empty() {
            return self.state_at(t).0;
        }
        if t <= self.times[0] {
            return self.currents[0];
        }
        let k = self.times.partition_point(|&x| x <= t);
        if k >= self.times.len() {
            return *self.currents.last().unwrap();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        self.currents[k - 1] * (1.0 - w) + self.currents[k] * w
    }

    /// ∫ I² dt over [t0, t1] where both lie in one segment (or between two samples).
    pub(crate) fn integral_i2(&self, t0: f64, t1: f64) -> f64 {
        if self.segments.is_empty() {
            let (a, b) = (self.current_at(t0), self.current_at(t1));
            // exact for the piecewise-linear interpolant
            return (t1 - t0) * (a * a + a * b + b * b) / 3.0;
        }
        let s = &self.segments[self.segment_index(0.5 * (t0 + t1))];
        let prop = Propagator::new(&self.params);
        gauss_legendre5(t0, t1, |t| {
            let (i, _) = prop.advance(s.voltage, s.current_start, s.charge_start, t - s.t_start);
            i * i
        })
    }

    /// Sample times split at segment boundaries, so that each interval is smooth.
    pub(crate) fn smooth_intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.windows(2).map(|w| (w[0], w[1]))
    }

    /// Capacitor-charge difference Q(t) − Q(start), exact for analytic traces.
    pub fn charge_since_start(&self, t: f64) -> f64 {
        if self.is_analytic() {
            self.state_at(t).1 - self.state_at(self.start_time()).1
        } else {
            let mut acc = 0.0;
            for (a, b) in self.smooth_intervals() {
                if a >= t {
                    break;
                }
                let e = b.min(t);
                acc += 0.5 * (self.current_at(a) + self.current_at(e)) * (e - a);
            }
            acc
        }
    }

    /// Write `t_s,I_A` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_s,I_A")?;
        for (t, i) in self.times.iter().zip(&self.currents) {
            writeln!(w, "{t:e},{i:e}")?;
        }
        Ok(())
    }

    /// Copy of the trace cut at `t_cut` (used to show what an incomplete pulse does).
    pub fn truncated(&self, t_cut: f64) -> Self {
        let mut out = self.clone();
        let keep = self.times.partition_point(|&t| t < t_cut);
        out.times.truncate(keep);
        out.currents.truncate(keep);
        if let Some(q) = out.charges.as_mut() {
            q.truncate(keep);
        }
        if t_cut > *out.times.last().unwrap_or(&0.0) {
            let (i, q) = self.state_at(t_cut);
            out.times.push(t_cut);
            out.currents.push(if self.is_analytic() { i } else { self.current_at(t_cut) });
            if let Some(qs) = out.charges.as_mut() {
                qs.push(q);
            }
        }
        out.segments.retain(|s| s.t_start < t_cut);
        if let Some(last) = out.segments.last_mut() {
            last.t_end = last.t_end.min(t_cut);
        }
        out
    }
}

/// Check that the trace extends at least 10 · 2L/R past the pulse end.
pub fn check_tail(trace: &CurrentTrace) -> Result<()> {
    let needed = trace.params.pulse_length + 10.0 / trace.params.decay_rate();
    if trace.end_time() < needed * (1.0 - 1e-12) {
        return Err(Error::Precondition(format!(
            "trace ends at {:.3e} s, needs to reach {:.3e} s (pulse end + 10·2L/R)",
            trace.end_time(),
            needed
        )));
    }
    Ok(())
}

/// ∫ I dt over the whole trace: the final capacitor charge for solver traces,
/// the trapezoid rule for sampled ones.
pub fn total_charge(trace: &CurrentTrace) -> Result<f64> {
    check_tail(trace)?;
    Ok(trace.charge_since_start(trace.end_time()))
}

/// Exponential decay rate of the oscillation envelope after `t_from`, from a
/// log-linear fit through the refined peaks of |I|.
pub fn fit_envelope_decay(trace: &CurrentTrace, t_from: f64, t_to: f64) -> Result<f64> {
    let mut pts = Vec::new();
    let n = trace.times.len();
    for k in 1..n - 1 {
        let t = trace.times[k];
        if t <= t_from || t >= t_to {
            continue;
        }
        let (a, b, c) = (trace.currents[k - 1].abs(), trace.currents[k].abs(), trace.currents[k + 1].abs());
        if b > a && b >= c && b > 0.0 {
            // refine the extremum with a golden-section search on the exact current
            let (lo, hi) = (trace.times[k - 1], trace.times[k + 1]);
            pts.push(refine_peak(trace, lo, hi));
        }
    }
    if pts.len() < 3 {
        return Err(Error::Precondition("fewer than three envelope peaks in the window".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (slope, _) = linear_fit(&xs, &ys);
    Ok(-slope)
}

fn refine_peak(trace: &CurrentTrace, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |t: f64| trace.current_at(t).abs();
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    let t = 0.5 * (lo + hi);
    (t, f(t))
}

/// Ordinary least squares y = slope·x + intercept.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn short_params() -> CircuitParams {
        let mut p = CircuitParams::bench_pulser();
        p.pulse_length = 20e-6;
        p.tail_length = p.default_tail_length();
        p
    }

    #[test]
    fn drive_phase_convention() {
        let p = CircuitParams::bench_pulser();
        let period = 1.0 / p.drive_frequency;
        assert_eq!(drive_voltage(&p, 1e-12), p.voltage);
        assert_eq!(drive_voltage(&p, 0.75 * period), -p.voltage);
        assert_eq!(drive_voltage(&p, p.pulse_length + 1e-9), 0.0);
        assert_eq!(drive_voltage(&p, -1e-9), 0.0);
    }

    #[test]
    fn zero_voltage_gives_zero_current() {
        let mut p = short_params();
        p.voltage = 1e-300;
        let tr = simulate_pulse(&p).unwrap();
        assert!(tr.max_abs_current() < 1e-290);
    }

    #[test]
    fn starts_from_rest() {
        let tr = simulate_pulse(&short_params()).unwrap();
        assert_eq!(tr.times[0], 0.0);
        assert_eq!(tr.currents[0], 0.0);
    }

    #[test]
    fn switch_instants_are_sample_points() {
        let p = short_params();
        let tr = simulate_pulse(&p).unwrap();
        for s in &tr.segments {
            assert!(tr.times.iter().any(|&t| (t - s.t_start).abs() < 1e-18));
        }
    }

    #[test]
    fn state_is_continuous_across_switches() {
        let tr = simulate_pulse(&short_params()).unwrap();
        let prop = Propagator::new(&tr.params);
        for w in tr.segments.windows(2) {
            let (i, q) = prop.advance(w[0].voltage, w[0].current_start, w[0].charge_start, w[0].t_end - w[0].t_start);
            assert!((i - w[1].current_start).abs() < 1e-14 * (1.0 + i.abs()));
            assert!((q - w[1].charge_start).abs() < 1e-20 + 1e-14 * q.abs());
            let eps = 1e-13;
            let left = tr.current_at(w[1].t_start - eps);
            let right = tr.current_at(w[1].t_start + eps);
            assert!((left - right).abs() < 1e-5, "jump {}", (left - right).abs());
        }
    }

    #[test]
    fn propagator_solves_the_ode() {
        // finite-difference residual of L I' + R I + Q/C = V
        for &(r, c) in &[(3.3, 10e-9), (200.0, 10e-9), (100.0, 10e-9), (1e3, 1e-9)] {
            let mut p = short_params();
            p.resistance = r;
            p.capacitance = c;
            let prop = Propagator::new(&p);
            let (v, i0, q0) = (5.0, 0.3, 2e-8);
            for &t in &[1e-7, 1e-6, 5e-6] {
                let h = 1e-11;
                let (ip, qp) = prop.advance(v, i0, q0, t + h);
                let (im, qm) = prop.advance(v, i0, q0, t - h);
                let (i, q) = prop.advance(v, i0, q0, t);
                let di = (ip - im) / (2.0 * h);
                let dq = (qp - qm) / (2.0 * h);
                let resid = p.inductance * di + r * i + q / c - v;
                assert!(resid.abs() < 1e-4 * v, "R={r}: residual {resid}");
                assert!((dq - i).abs() < 1e-5 * (1.0 + i.abs()));
            }
        }
    }

    #[test]
    fn critically_damped_matches_neighbors() {
        let mut p = short_params();
        p.resistance = 2.0 * (p.inductance / p.capacitance).sqrt();
        let crit = Propagator::new(&p);
        assert!(crit.disc.abs() < 1e-6 * crit.w0sq);
        let mut lo = p;
        lo.resistance *= 1.0 - 1e-7;
        let mut hi = p;
        hi.resistance *= 1.0 + 1e-7;
        for &t in &[1e-7, 1e-6, 1e-5] {
            let a = crit.advance(1.0, 0.1, 0.0, t).0;
            let b = Propagator::new(&lo).advance(1.0, 0.1, 0.0, t).0;
            let c = Propagator::new(&hi).advance(1.0, 0.1, 0.0, t).0;
            assert!((a - b).abs() < 1e-6 * a.abs().max(1e-3));
            assert!((a - c).abs() < 1e-6 * a.abs().max(1e-3));
        }
    }

    #[test]
    fn energy_audit() {
        // ∫V I dt = ½LI² + Q²/2C + ∫R I² dt, with ∫R I² dt by independent fine quadrature
        let mut p = short_params();
        p.tail_length = 10e-6;
        let tr = simulate_pulse(&p).unwrap();
        let r = p.total_resistance();
        let sub = 64;
        let mut heat = 0.0;
        let mut work = 0.0;
        for s in &tr.segments {
            let h = (s.t_end - s.t_start) / sub as f64;
            // composite Simpson on the exact current
            let mut acc = 0.0;
            for k in 0..=2 * sub {
                let t = s.t_start + 0.5 * h * k as f64;
                let w = if k == 0 || k == 2 * sub { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * tr.current_at(t).powi(2);
            }
            heat += r * acc * h / 6.0;
            let q_end = tr.state_at(s.t_end).1;
            work += s.voltage * (q_end - s.charge_start);
        }
        let (i, q) = tr.state_at(tr.end_time());
        let stored = 0.5 * p.inductance * i * i + q * q / (2.0 * p.capacitance);
        assert!(((stored + heat) / work - 1.0).abs() < 1e-6, "audit {:e}", (stored + heat) / work - 1.0);
    }

    #[test]
    fn charge_of_half_sine() {
        let mut p = short_params();
        p.pulse_length = 0.0;
        p.tail_length = 1e-3;
        let n = 20_001;
        let t_end = 1e-3;
        let times: Vec<f64> = (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect();
        let currents: Vec<f64> = times.iter().map(|t| 2.0 * (PI * t / t_end).sin()).collect();
        let tr = CurrentTrace::from_samples(times.clone(), currents, p).unwrap();
        let q = total_charge(&tr).unwrap();
        let exact = 2.0 * 2.0 * t_end / PI;
        assert!((q / exact - 1.0).abs() < 1e-8);

        let zero = CurrentTrace::from_samples(times, vec![0.0; n], p).unwrap();
        assert_eq!(total_charge(&zero).unwrap(), 0.0);
    }

    #[test]
    fn short_trace_is_rejected() {
        let mut p = short_params();
        p.tail_length = 1e-6;
        let tr = simulate_pulse(&p).unwrap();
        assert!(matches!(total_charge(&tr), Err(Error::Precondition(_))));
    }

    #[test]
    fn overdamped_pulse_is_charge_neutral() {
        let mut p = short_params();
        p.resistance = 500.0;
        p.tail_length = p.default_tail_length().max(2e-3);
        let tr = simulate_pulse(&p).unwrap();
        let q = total_charge(&tr).unwrap();
        assert!(q.abs() < 1e-9 * tr.max_abs_current() / p.drive_frequency);
    }

    #[test]
    fn sample_rate_floor() {
        let mut p = short_params();
        p.sample_rate = 40.0 * p.drive_frequency;
        assert!(simulate_pulse(&p).is_err());
        let mut p = short_params();
        p.inductance = -1.0;
        assert!(simulate_pulse(&p).is_err());
    }

    #[test]
    fn resonant_square_drive_amplitude() {
        let mut p = CircuitParams::bench_pulser();
        p.drive_frequency = p.damped_frequency();
        p.sample_rate = 200.0 * p.drive_frequency;
        p.pulse_length = 300e-6;
        p.tail_length = 0.0;
        let tr = simulate_pulse(&p).unwrap();
        let steady = tr
            .times
            .iter()
            .zip(&tr.currents)
            .filter(|(t, _)| **t > 200e-6)
            .fold(0.0f64, |m, (_, i)| m.max(i.abs()));
        let phasor = p.voltage * 4.0 / PI / p.resistance;
        assert!((steady / phasor - 1.0).abs() < 0.5, "steady {steady} vs {phasor}");
    }

    #[test]
    fn csv_header() {
        let tr = simulate_pulse(&short_params()).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t_s,I_A\n"));
        assert_eq!(text.lines().count(), tr.times.len() + 1);
    }
}
