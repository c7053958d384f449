//! Complete elliptic integrals K(m), E(m) via the arithmetic-geometric mean,
//! plus the two combinations that appear in the thin-loop field and cancel badly
//! near the loop axis.

use std::f64::consts::FRAC_PI_2;

/// (K(m), E(m)) for parameter m = k² in [0, 1).
pub(crate) fn ellip_ke(m: f64) -> (f64, f64) {
    debug_assert!((0.0..1.0).contains(&m));
    let mut a = 1.0;
    let mut g = (1.0 - m).sqrt();
    let mut c = m.sqrt();
    // Σ 2^(n-1) c_n², with c₀² = m
    let mut sum = 0.5 * m;
    let mut pow = 0.5;
    for _ in 0..40 {
        if c.abs() <= f64::EPSILON * a {
            break;
        }
        let an = 0.5 * (a + g);
        c = 0.5 * (a - g);
        g = (a * g).sqrt();
        a = an;
        pow *= 2.0;
        sum += pow * c * c;
    }
    let k = FRAC_PI_2 / a;
    (k, k * (1.0 - sum))
}

/// Below this parameter the power series are used for the cancelling combinations.
const SERIES_LIMIT: f64 = 0.05;

/// Coefficients q_n² of the K series, K = π/2 Σ q_n² mⁿ, q_n = (2n−1)!!/(2n)!!.
fn q2(n: usize) -> f64 {
    let mut q = 1.0;
    for j in 1..=n {
        q *= (2 * j - 1) as f64 / (2 * j) as f64;
    }
    q * q
}

/// G(m) = (2 − m) E(m) − 2 (1 − m) K(m), which vanishes like 3π m²/16.
pub(crate) fn radial_combo(m: f64) -> f64 {
    if m >= SERIES_LIMIT {
        let (k, e) = ellip_ke(m);
        return (2.0 - m) * e - 2.0 * (1.0 - m) * k;
    }
    // With k_n = q_n², e_n = −q_n²/(2n−1):
    // g_n = 2 e_n − e_{n−1} − 2 k_n + 2 k_{n−1}.
    let mut sum = 0.0;
    let mut mp = m * m;
    let mut prev_k = q2(1);
    let mut prev_e = -q2(1);
    for n in 2..60 {
        let kn = prev_k * ((2 * n - 1) as f64 / (2 * n) as f64).powi(2);
        let en = -kn / (2 * n - 1) as f64;
        let g = 2.0 * en - prev_e - 2.0 * kn + 2.0 * prev_k;
        let term = g * mp;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
        mp *= m;
        prev_k = kn;
        prev_e = en;
    }
    FRAC_PI_2 * sum
}
