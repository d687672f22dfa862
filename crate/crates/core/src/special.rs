//! Real Gamma function and friends.
//!
//! Lanczos approximation (g = 7, nine coefficients) with the reflection
//! formula for arguments below 1/2. Relative error is around 1e-15 on the
//! ranges used here.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_sum(x: f64) -> f64 {
    // x is the shifted argument (x = z - 1)
    let mut a = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    a
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.floor()
}

/// Gamma function on the real line. Returns NaN at the poles.
pub fn gamma(x: f64) -> f64 {
    if is_nonpositive_integer(x) {
        return f64::NAN;
    }
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    if x > 171.7 {
        return f64::INFINITY;
    }
    if x == x.floor() && x <= 23.0 {
        // exact factorials
        return (1..x as u32).fold(1.0, |acc, k| acc * k as f64);
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    // split the power so that t^(z+1/2) does not overflow before e^-t scales it down
    let half = t.powf(0.5 * (z + 0.5));
    (2.0 * PI).sqrt() * half * ((-t).exp() * half) * lanczos_sum(z)
}

/// Reciprocal Gamma, exactly zero at the poles of Gamma.
pub fn rgamma(x: f64) -> f64 {
    if is_nonpositive_integer(x) {
        return 0.0;
    }
    if x < 0.5 {
        // 1/Γ(x) = sin(πx) Γ(1-x) / π
        return (PI * x).sin() * gamma(1.0 - x) / PI;
    }
    if x > 171.7 {
        return (-ln_gamma(x)).exp();
    }
    1.0 / gamma(x)
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + lanczos_sum(z).ln()
}
