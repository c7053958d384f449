#![allow(dead_code)]

use nalgebra::{Complex, Matrix3};
use qzeeman::coils::CoilGeometry;
use qzeeman::units::MU_0;
use qzeeman::vec3::Vec3;

pub type C64 = Complex<f64>;

/// exp(M) by scaling and squaring with a 30-term Taylor series.
pub fn expm(m: &Matrix3<C64>) -> Matrix3<C64> {
    let norm = m.iter().map(|z| z.norm()).sum::<f64>();
    let s = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
    let a = m / C64::new(2f64.powi(s), 0.0);
    let mut term = Matrix3::<C64>::identity();
    let mut sum = term;
    for k in 1..30 {
        term = term * a / C64::new(k as f64, 0.0);
        sum += term;
    }
    for _ in 0..s {
        sum = sum * sum;
    }
    sum
}

/// Biot–Savart line integral around a ring of radius `a` with the periodic midpoint
/// rule, which converges geometrically for points off the wire.
pub fn ring_biot_savart(a: f64, center: Vec3, axis: Vec3, current: f64, point: Vec3, n: usize) -> Vec3 {
    let helper = if axis.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
    let e1 = axis.cross(helper).normalized().unwrap();
    let e2 = axis.cross(e1);
    let dth = 2.0 * std::f64::consts::PI / n as f64;
    let mut b = Vec3::ZERO;
    for k in 0..n {
        let th = (k as f64 + 0.5) * dth;
        let (s, c) = th.sin_cos();
        let src = center + e1 * (a * c) + e2 * (a * s);
        let dl = (e1 * (-s) + e2 * c) * (a * dth);
        let r = point - src;
        let r3 = r.norm().powi(3);
        b += dl.cross(r) / r3;
    }
    b * (MU_0 * current / (4.0 * std::f64::consts::PI))
}

pub fn pair_biot_savart(g: &CoilGeometry, current: f64, point: Vec3, n: usize) -> Vec3 {
    let [c1, c2] = g.coil_centers();
    let i = current * g.turns_per_coil as f64;
    ring_biot_savart(g.loop_radius, c1, g.axis, i, point, n) + ring_biot_savart(g.loop_radius, c2, g.axis, i, point, n)
}

/// Central-difference Jacobian ∂B_i/∂x_j.
pub fn jacobian(f: impl Fn(Vec3) -> Vec3, p: Vec3, h: f64) -> [[f64; 3]; 3] {
    let mut j = [[0.0; 3]; 3];
    for (col, e) in [Vec3::X, Vec3::Y, Vec3::Z].into_iter().enumerate() {
        let d = (f(p + e * h) - f(p - e * h)) / (2.0 * h);
        for (row, v) in d.to_array().into_iter().enumerate() {
            j[row][col] = v;
        }
    }
    j
}

pub fn frobenius(j: &[[f64; 3]; 3]) -> f64 {
    j.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Kolmogorov distribution tail Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..100 {
        let k = k as f64;
        s += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    s.clamp(0.0, 1.0)
}

/// One-sample KS p-value against U(0, 1).
pub fn ks_uniform_p(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        d = d.max((i as f64 + 1.0) / n - x).max(x - i as f64 / n);
    }
    let sn = n.sqrt();
    kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)
}
