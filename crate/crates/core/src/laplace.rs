//! Numerical inversion of Laplace transforms.
//!
//! The primary route is the fixed-Talbot contour
//! `σ(θ) = r θ (cot θ + i)`, `θ ∈ (-π, π)`, discretized by the trapezoid rule
//! with `M` nodes and `r = 2M / (5t)`. Every point of this contour satisfies
//! `|σ(θ)| = r θ / sin θ >= r`, and the contour has argument `θ` at parameter
//! `θ`, so a singularity at `ρ e^{iφ}` lies inside whenever `r > ρ sin φ / φ`.
//! [`InversionOptions::min_radius`] carries that requirement.
//!
//! Roundoff grows like `eps·e^{rt}`, so callers with singularities far out
//! should subtract their residues rather than enlarge the contour.
//!
//! The fallback is the Euler-accelerated Bromwich trapezoid rule.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

/// Talbot configuration for a single evaluation time.
#[derive(Debug, Clone, Copy)]
pub struct InversionOptions {
    /// Base node count (`M`).
    pub nodes: usize,
    /// Upper bound on the node count after radius adaptation.
    pub max_nodes: usize,
    /// The contour scale `r` must be at least this large.
    pub min_radius: f64,
    /// Relative tolerance for the internal convergence estimate.
    pub tolerance: f64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            nodes: 20,
            max_nodes: 80,
            min_radius: 0.0,
            tolerance: 1e-8,
        }
    }
}

/// An inverted value with its convergence estimate.
#[derive(Debug, Clone, Copy)]
pub struct Inverted {
    pub value: f64,
    /// `|f_M - f_{4M/5}|`.
    pub estimate: f64,
    pub method: Method,
    /// The estimate exceeded the tolerance for every method tried.
    pub warning: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Talbot,
    Euler,
}

/// Fixed-Talbot sum with `m` nodes and contour scale `r`.
pub fn talbot_sum<F>(f: &F, t: f64, m: usize, r: f64) -> Result<f64>
where
    F: Fn(Complex64) -> Result<Complex64>,
{
    let h = std::f64::consts::PI / m as f64;
    let z0 = Complex64::new(r, 0.0);
    let mut acc = 0.5 * (f(z0)? * (r * t).exp()).re;
    for k in 1..m {
        let theta = k as f64 * h;
        let cot = theta.cos() / theta.sin();
        let sigma = Complex64::new(r * theta * cot, r * theta);
        let tau = theta + (theta * cot - 1.0) * cot;
        let w = Complex64::new(1.0, tau);
        acc += ((sigma * t).exp() * f(sigma)? * w).re;
    }
    Ok(r / m as f64 * acc)
}

/// Node count needed so that `r = 2M/(5t) >= min_radius`.
fn talbot_nodes(t: f64, opts: &InversionOptions) -> usize {
    let needed = (2.5 * opts.min_radius * t).ceil() as usize;
    opts.nodes.max(needed).min(opts.max_nodes)
}

/// Euler-accelerated Bromwich trapezoid rule (`2m + 1` symbol evaluations).
pub fn euler_sum<F>(f: &F, t: f64, m: usize) -> Result<f64>
where
    F: Fn(Complex64) -> Result<Complex64>,
{
    // binomial weights ξ_k
    let mut xi = vec![0.0; 2 * m + 1];
    xi[0] = 0.5;
    for x in xi.iter_mut().take(m + 1).skip(1) {
        *x = 1.0;
    }
    let two_m = 2.0f64.powi(-(m as i32));
    xi[2 * m] = two_m;
    let mut binom = 1.0;
    for k in 1..m {
        binom *= (m - k + 1) as f64 / k as f64;
        xi[2 * m - k] = xi[2 * m - k + 1] + two_m * binom;
    }
    let beta0 = m as f64 * 10f64.ln() / 3.0;
    let mut acc = 0.0;
    for (k, x) in xi.iter().enumerate() {
        let beta = Complex64::new(beta0, std::f64::consts::PI * k as f64);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * x * f(beta / t)?.re;
    }
    Ok(10f64.powf(m as f64 / 3.0) / t * acc)
}

/// Invert `symbol` at a single time `t > 0`, with a convergence estimate
/// from a second Talbot evaluation with 4/5 of the nodes. Falls back to the
/// Euler rule when the Talbot estimate misses the tolerance.
pub fn invert_at<F>(symbol: &F, t: f64, opts: &InversionOptions) -> Result<Inverted>
where
    F: Fn(Complex64) -> Result<Complex64>,
{
    if !(t > 0.0) {
        return Err(invalid("t", format!("inversion needs t > 0, got {t}")));
    }
    // Double-precision roundoff grows like eps·e^{2M/5}, so M stays near 20;
    // larger counts are only used when a minimum radius demands it.
    let m2 = talbot_nodes(t, opts);
    let m1 = (m2 * 4) / 5;
    let v1 = talbot_sum(symbol, t, m1, 2.0 * m1 as f64 / (5.0 * t))?;
    let v2 = talbot_sum(symbol, t, m2, 2.0 * m2 as f64 / (5.0 * t))?;
    let est = (v1 - v2).abs();
    let tol = opts.tolerance * v2.abs().max(1.0);
    if est <= tol {
        return Ok(Inverted {
            value: v2,
            estimate: est,
            method: Method::Talbot,
            warning: false,
        });
    }
    let e1 = euler_sum(symbol, t, 16);
    let e2 = euler_sum(symbol, t, 20);
    if let (Ok(e1), Ok(e2)) = (e1, e2) {
        let eest = (e1 - e2).abs();
        if eest < est {
            return Ok(Inverted {
                value: e2,
                estimate: eest,
                method: Method::Euler,
                warning: eest > tol,
            });
        }
    }
    Ok(Inverted {
        value: v2,
        estimate: est,
        method: Method::Talbot,
        warning: true,
    })
}

/// Invert `symbol` on every grid time (all must be positive).
pub fn invert_laplace<F>(symbol: &F, times: &[f64], opts: &InversionOptions) -> Result<Vec<Inverted>>
where
    F: Fn(Complex64) -> Result<Complex64>,
{
    times.iter().map(|&t| invert_at(symbol, t, opts)).collect()
}

/// Convenience wrapper for infallible symbols.
pub fn invert_simple<G: Fn(Complex64) -> Complex64>(symbol: G, t: f64) -> Result<f64> {
    let f = |z: Complex64| -> Result<Complex64> {
        let v = symbol(z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Pole { re: z.re, im: z.im })
        }
    };
    invert_at(&f, t, &InversionOptions::default()).map(|r| r.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_pair() {
        let v = invert_simple(|z| 1.0 / (z + 1.0), 1.0).unwrap();
        assert_relative_eq!(v, (-1.0f64).exp(), max_relative = 1e-11);
    }

    #[test]
    fn ramp_pair() {
        let v = invert_simple(|z| 1.0 / (z * z), 2.5).unwrap();
        assert_relative_eq!(v, 2.5, max_relative = 1e-11);
    }

    #[test]
    fn cosine_pair() {
        let t = std::f64::consts::FRAC_PI_4;
        let v = invert_simple(|z| z / (z * z + 4.0), t).unwrap();
        assert!(v.abs() < 1e-11, "{v}");
    }

    #[test]
    fn fractional_power_pair() {
        // 1/z^{1.5} <-> t^{0.5}/Γ(1.5)
        let v = invert_simple(|z| z.powf(-1.5), 0.7).unwrap();
        assert_relative_eq!(v, 0.7f64.sqrt() / crate::special::gamma(1.5), max_relative = 1e-11);
    }

    #[test]
    fn euler_rule_agrees() {
        let f = |z: Complex64| -> Result<Complex64> { Ok(1.0 / (z + 2.0)) };
        let v = euler_sum(&f, 0.8, 18).unwrap();
        assert_relative_eq!(v, (-1.6f64).exp(), max_relative = 1e-7);
    }

    #[test]
    fn radius_adaptation_encloses_poles() {
        // poles at ±12i lie outside the default contour (r = 8 at t = 1)
        let f = |z: Complex64| -> Result<Complex64> { Ok(z / (z * z + 144.0)) };
        let plain = talbot_sum(&f, 1.0, 20, 8.0).unwrap();
        assert!((plain - 12.0f64.cos()).abs() > 1e-3);
        let opts = InversionOptions {
            min_radius: 1.4 * 12.0 * 2.0 / std::f64::consts::PI,
            ..Default::default()
        };
        let r = invert_at(&f, 1.0, &opts).unwrap();
        assert!((r.value - 12.0f64.cos()).abs() < 1e-7, "{:?}", r);
        assert!(!r.warning);
    }

    #[test]
    fn rejects_nonpositive_time() {
        assert!(invert_simple(|z| 1.0 / z, 0.0).is_err());
    }
}
