//! One function per figure target. Each returns its artifacts in memory; the caller
//! writes them.

use std::fmt::Write as _;

use anyhow::{Context, Result};
use qzeeman::circuit::{fit_envelope_decay, total_charge};
use qzeeman::experiment::{
    circuit_trace, fid_demo, phase_curve, phase_scaling, standard_calibration, steady_state_fit, ExperimentConfig,
    CALIBRATION_WINDOW,
};
use qzeeman::signal::amplitude_vs_tau;
use qzeeman::spin::phases_from_trace;
use serde_json::json;

/// A named output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn text(name: &str, body: String) -> Self {
        Self { name: name.to_string(), bytes: body.into_bytes() }
    }

    fn json(name: &str, value: &serde_json::Value) -> Result<Self> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        Ok(Self::text(name, s))
    }
}

fn csv_with<F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>>(name: &str, f: F) -> Result<Artifact> {
    let mut bytes = Vec::new();
    f(&mut bytes)?;
    Ok(Artifact { name: name.to_string(), bytes })
}

fn gnuplot(name: &str, title: &str, xlabel: &str, ylabel: &str, plot: &str) -> Artifact {
    let png = name.trim_end_matches(".gp");
    Artifact::text(
        name,
        format!(
            "# gnuplot {name}\n\
             set datafile separator ','\n\
             set key autotitle columnhead\n\
             set terminal pngcairo size 900,600\n\
             set output '{png}.png'\n\
             set title '{title}'\n\
             set xlabel '{xlabel}'\n\
             set ylabel '{ylabel}'\n\
             set grid\n\
             {plot}\n"
        ),
    )
}

pub fn circuit(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let tr = circuit_trace(cfg)?;
    let p = tr.params;
    let q = total_charge(&tr)?;
    let decay = fit_envelope_decay(&tr, p.pulse_length + 1e-6, p.pulse_length + 60e-6).ok();
    Ok(vec![
        csv_with("circuit.csv", |w| tr.write_csv(w))?,
        Artifact::json(
            "circuit_summary.json",
            &json!({
                "peak_current_A": tr.max_abs_current(),
                "total_charge_C": q,
                "envelope_decay_per_s": decay,
                "expected_decay_per_s": p.decay_rate(),
                "end_time_s": tr.end_time(),
            }),
        )?,
        gnuplot("circuit.gp", "Coil current", "t [s]", "I [A]", "plot 'circuit.csv' using 1:2 with lines lw 1"),
    ])
}

pub fn phases(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let curve = phase_curve(cfg)?;
    let tr = circuit_trace(cfg)?;
    let pair = phases_from_trace(&tr, cfg.field_per_ampere()?, &cfg.coefficients()?)?;
    let mut s = String::from("t_s,omega1_rad_per_s,omega2_rad_per_s,phi1_rad,phi2_rad\n");
    for k in 0..curve.times.len() {
        writeln!(
            s,
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            curve.times[k], curve.omega1[k], curve.omega2[k], curve.phi1[k], curve.phi2[k]
        )?;
    }
    Ok(vec![
        Artifact::text("phases.csv", s),
        Artifact::json("phases_summary.json", &json!({ "phi1_rad": pair.phi1, "phi2_rad": pair.phi2 }))?,
        gnuplot(
            "phases.gp",
            "Cumulative linear and quadratic phases",
            "t [s]",
            "phase [rad]",
            "plot 'phases.csv' using 1:4 with lines title 'phi1', '' using 1:5 with lines title 'phi2'",
        ),
    ])
}

pub fn alpha_vs_tau(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let sweep = cfg.tau_sweep()?;
    let pts = amplitude_vs_tau(&sweep)?;
    let mut s = String::from("tau_s,phi2_rad,alpha_r_direct,alpha_r_fit,alpha_r_std_err,converged\n");
    for p in &pts {
        writeln!(
            s,
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
            p.tau, p.phi2, p.direct, p.fitted, p.std_err, p.converged
        )?;
    }
    let cal = standard_calibration(cfg).context("calibration run")?;
    Ok(vec![
        Artifact::text("alpha_vs_tau.csv", s),
        Artifact::json("calibration.json", &serde_json::to_value(cal)?)?,
        gnuplot(
            "alpha_vs_tau.gp",
            "Probe amplitude versus pulse length",
            "tau [s]",
            "<alpha_R>",
            "plot 'alpha_vs_tau.csv' using 1:4:5 with yerrorbars title 'fit', '' using 1:3 with lines title 'direct'",
        ),
    ])
}

pub fn phase_scaling_task(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let taus = cfg.sweep.tau_s.values();
    let pts = phase_scaling(
        &cfg.circuit_params()?,
        cfg.field_per_ampere()?,
        &cfg.coefficients()?,
        &cfg.sweep.voltages,
        &taus,
    )?;
    let mut s = String::from("voltage_V,tau_s,phi2_rad\n");
    for p in &pts {
        writeln!(s, "{},{:.12e},{:.12e}", p.voltage, p.tau, p.phi2)?;
    }
    let mut fits = String::from("voltage_V,slope_rad_per_s,intercept_rad,r_squared\n");
    for &v in &cfg.sweep.voltages {
        if let Ok(f) = steady_state_fit(&pts, v, CALIBRATION_WINDOW) {
            writeln!(fits, "{v},{:.12e},{:.12e},{:.12e}", f.slope, f.intercept, f.r_squared)?;
        }
    }
    let plot = format!(
        "plot for [v in \"{}\"] 'phase_scaling.csv' using 2:($1==v ? $3 : 1/0) with linespoints title sprintf('%s V', v)",
        cfg.sweep.voltages.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
    );
    Ok(vec![
        Artifact::text("phase_scaling.csv", s),
        Artifact::text("phase_scaling_fit.csv", fits),
        gnuplot("phase_scaling.gp", "Quadratic phase versus pulse length", "tau [s]", "phi2 [rad]", &plot),
    ])
}

pub fn dephasing(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let table = qzeeman::experiment::dephasing(cfg)?;
    let plot = format!(
        "plot for [f in \"{}\"] 'dephasing.csv' using 2:($1==f ? $3 : 1/0):4 with yerrorlines title sprintf('%s Hz', f)",
        cfg.sweep.drive_frequencies.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(" ")
    );
    Ok(vec![
        csv_with("dephasing.csv", |w| table.write_csv(w))?,
        gnuplot("dephasing.gp", "Ensemble amplitude versus pi-cycles", "n", "<alpha_R>", &plot),
    ])
}

pub fn fid(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let (truth, series, fit) = fid_demo(cfg)?;
    let mut s = String::from("t_s,delta_alpha_rad,fit_rad\n");
    for (&t, &v) in series.times.iter().zip(&series.values) {
        writeln!(s, "{t:.12e},{v:.12e},{:.12e}", fit.model.evaluate(t))?;
    }
    Ok(vec![
        Artifact::text("fid.csv", s),
        Artifact::json("fid_fit.json", &json!({ "truth": truth, "fit": fit }))?,
        gnuplot(
            "fid.gp",
            "Free induction decay and fit",
            "t [s]",
            "delta alpha [rad]",
            "plot 'fid.csv' using 1:2 with points pt 7 ps 0.3 title 'signal', '' using 1:3 with lines title 'fit'",
        ),
    ])
}
