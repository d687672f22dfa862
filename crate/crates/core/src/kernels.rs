//! Fractional-calculus primitives on uniform time grids.
//!
//! * [`rl_kernel`]: the Riemann–Liouville kernel `k_ρ(t) = t^{ρ-1}/Γ(ρ)` (zero for `t <= 0`).
//! * [`convolve`]: grid convolution, with product integration whenever one
//!   factor is an analytic kernel (exact kernel moments against the
//!   piecewise-linear interpolant of the other factor).
//! * [`caputo_derivative`]: L1 finite-difference Caputo derivative (test oracle).
//! * [`mainardi_wright`]: the Mainardi–Wright density `M_ν`.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::quad::{integrate_with_breaks, QuadOptions};
use crate::special::{gamma, ln_gamma};

/// Uniform grid `t0 + k·dt`, `k = 0..n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    /// Number of grid points, including `t0`.
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid("dt", format!("must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps", "must be at least 1"));
        }
        if !t0.is_finite() {
            return Err(invalid("t0", "must be finite"));
        }
        Ok(Self { t0, dt, n_steps })
    }

    /// Grid `[0, end]` with step `dt`; `end` must be a multiple of `dt` (to 1e-9 relative).
    pub fn covering(end: f64, dt: f64) -> Result<Self> {
        let steps = (end / dt).round();
        if (steps * dt - end).abs() > 1e-9 * end.abs().max(dt) {
            return Err(invalid("dt", format!("{dt} does not divide {end}")));
        }
        Self::new(0.0, dt, steps as usize + 1)
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.t(self.n_steps - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_steps).map(|k| self.t(k)).collect()
    }

    /// Index of the grid point equal to `t` (within `1e-9·dt`), if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.t0) / self.dt;
        let k = x.round();
        if k < 0.0 || (x - k).abs() > 1e-9 || k as usize >= self.n_steps {
            None
        } else {
            Some(k as usize)
        }
    }

    /// Largest grid index with `t_k <= t` (clamped to the grid).
    pub fn floor_index(&self, t: f64) -> usize {
        let x = ((t - self.t0) / self.dt + 1e-9).floor().max(0.0) as usize;
        x.min(self.n_steps - 1)
    }

    pub fn sample<F: FnMut(f64) -> f64>(&self, mut f: F) -> Vec<f64> {
        (0..self.n_steps).map(|k| f(self.t(k))).collect()
    }
}

/// Positive order `ρ` of a Riemann–Liouville kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOrder(f64);

impl KernelOrder {
    pub fn new(rho: f64) -> Result<Self> {
        if rho > 0.0 && rho.is_finite() {
            Ok(Self(rho))
        } else {
            Err(invalid("rho", format!("kernel order must be positive, got {rho}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `k_ρ(t)`.
pub fn rl_kernel(rho: KernelOrder, t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t.powf(rho.0 - 1.0) / gamma(rho.0)
    }
}

/// Same as [`rl_kernel`] but validating a raw order.
pub fn rl_kernel_checked(rho: f64, t: f64) -> Result<f64> {
    Ok(rl_kernel(KernelOrder::new(rho)?, t))
}

/// One factor of a grid convolution.
#[derive(Debug, Clone, Copy)]
pub enum Factor<'a> {
    /// The analytic kernel `k_ρ`, integrated exactly cell by cell.
    Kernel(KernelOrder),
    /// Samples on the grid points.
    Sampled(&'a [f64]),
}

/// Per-cell product-integration weights for `k_ρ` on `[i·dt, (i+1)·dt]`:
/// `∫ k_ρ(τ) G(τ) dτ ≈ left[i]·G(i·dt) + right[i]·G((i+1)·dt)` for linear `G`.
#[derive(Debug, Clone)]
pub struct CellWeights {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl CellWeights {
    pub fn new(rho: KernelOrder, dt: f64, cells: usize) -> Self {
        let r = rho.value();
        let g1 = gamma(r + 1.0);
        let g2 = gamma(r + 2.0);
        let scale = dt.powf(r);
        let mut left = Vec::with_capacity(cells);
        let mut right = Vec::with_capacity(cells);
        for i in 0..cells {
            let a = i as f64;
            let b = a + 1.0;
            // moments in units of dt
            let m0 = (b.powf(r) - a.powf(r)) / g1;
            let m1 = r * (b.powf(r + 1.0) - a.powf(r + 1.0)) / g2;
            let wr = m1 - a * m0;
            right.push(scale * wr);
            left.push(scale * (m0 - wr));
        }
        Self { left, right }
    }
}

fn check_samples(grid: &TimeGrid, f: &Factor<'_>) -> Result<()> {
    if let Factor::Sampled(s) = f {
        if s.len() != grid.n_steps {
            return Err(Error::GridMismatch(format!(
                "sample length {} but grid has {} points",
                s.len(),
                grid.n_steps
            )));
        }
    }
    Ok(())
}

fn kernel_against_samples(grid: &TimeGrid, rho: KernelOrder, g: &[f64]) -> Vec<f64> {
    let n = grid.n_steps;
    let w = CellWeights::new(rho, grid.dt, n.saturating_sub(1));
    let mut out = vec![0.0; n];
    for k in 1..n {
        let mut acc = 0.0;
        for i in 0..k {
            acc += w.left[i] * g[k - i] + w.right[i] * g[k - i - 1];
        }
        out[k] = acc;
    }
    out
}

/// `(f * g)(t_k) = ∫_0^{t_k} f(t_k - s) g(s) ds` on a grid starting at 0.
///
/// Sampled/sampled pairs use the trapezoid rule. A kernel factor is
/// integrated exactly against the piecewise-linear interpolant of the other
/// factor. Two kernels combine exactly.
pub fn convolve(grid: &TimeGrid, f: Factor<'_>, g: Factor<'_>) -> Result<Vec<f64>> {
    if grid.t0 != 0.0 {
        return Err(Error::GridMismatch(format!(
            "convolution grid must start at 0, starts at {}",
            grid.t0
        )));
    }
    check_samples(grid, &f)?;
    check_samples(grid, &g)?;
    let n = grid.n_steps;
    let dt = grid.dt;
    match (f, g) {
        (Factor::Sampled(f), Factor::Sampled(g)) => {
            let mut out = vec![0.0; n];
            for k in 1..n {
                let mut acc = 0.5 * (f[k] * g[0] + f[0] * g[k]);
                for j in 1..k {
                    acc += f[k - j] * g[j];
                }
                out[k] = acc * dt;
            }
            Ok(out)
        }
        (Factor::Kernel(rho), Factor::Sampled(g)) | (Factor::Sampled(g), Factor::Kernel(rho)) => {
            Ok(kernel_against_samples(grid, rho, g))
        }
        (Factor::Kernel(p), Factor::Kernel(q)) => {
            // semigroup property k_p * k_q = k_{p+q}
            let pq = KernelOrder(p.0 + q.0);
            Ok(grid.sample(|t| rl_kernel(pq, t)))
        }
    }
}

/// L1-scheme Caputo derivative of order `rho ∈ [0, 1)` of grid samples.
/// Order zero returns the samples unchanged.
pub fn caputo_derivative(grid: &TimeGrid, f: &[f64], rho: f64) -> Result<Vec<f64>> {
    if f.len() != grid.n_steps {
        return Err(Error::GridMismatch(format!(
            "sample length {} but grid has {} points",
            f.len(),
            grid.n_steps
        )));
    }
    if rho == 0.0 {
        return Ok(f.to_vec());
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(invalid("rho", format!("L1 oracle needs 0 <= rho < 1, got {rho}")));
    }
    let n = grid.n_steps;
    let b: Vec<f64> = (0..n)
        .map(|j| ((j + 1) as f64).powf(1.0 - rho) - (j as f64).powf(1.0 - rho))
        .collect();
    let c = grid.dt.powf(-rho) / gamma(2.0 - rho);
    let mut out = vec![0.0; n];
    for k in 1..n {
        let mut acc = 0.0;
        for j in 0..k {
            acc += b[j] * (f[k - j] - f[k - j - 1]);
        }
        out[k] = c * acc;
    }
    Ok(out)
}

/// Result of the truncated Mainardi series.
#[derive(Debug, Clone, Copy)]
pub struct SeriesValue {
    pub value: f64,
    /// Truncation plus cancellation estimate.
    pub abs_error: f64,
    pub terms: usize,
}

const MAINARDI_MAX_TERMS: usize = 300;

fn check_nu(nu: f64) -> Result<()> {
    if nu > 0.0 && nu < 1.0 {
        Ok(())
    } else {
        Err(invalid("nu", format!("need 0 < nu < 1, got {nu}")))
    }
}

/// Series `M_ν(l) = Σ (-l)^n / (n! Γ(1 - ν - νn))`, written through the
/// reflection formula as `Σ (-l)^n Γ(ν(n+1)) sin(πν(n+1)) / (π n!)`.
pub fn mainardi_series(nu: f64, l: f64) -> Result<SeriesValue> {
    check_nu(nu)?;
    if l < 0.0 {
        return Err(invalid("l", "argument must be nonnegative"));
    }
    if l == 0.0 {
        return Ok(SeriesValue {
            value: 1.0 / gamma(1.0 - nu),
            abs_error: 0.0,
            terms: 1,
        });
    }
    let ln_l = l.ln();
    let mut sum = 0.0f64;
    let mut abs_sum = 0.0f64;
    for n in 0..MAINARDI_MAX_TERMS {
        let nf = n as f64;
        let envelope = (nf * ln_l + ln_gamma(nu * (nf + 1.0)) - ln_gamma(nf + 1.0)).exp() / PI;
        if n > 0 && envelope < 1e-14 * (sum.abs() + 1.0) {
            return Ok(SeriesValue {
                value: sum,
                abs_error: envelope + 4.0 * f64::EPSILON * abs_sum,
                terms: n,
            });
        }
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        let term = sign * envelope * (PI * nu * (nf + 1.0)).sin();
        sum += term;
        abs_sum += term.abs();
    }
    let last = ((MAINARDI_MAX_TERMS as f64) * ln_l + ln_gamma(nu * (MAINARDI_MAX_TERMS as f64 + 1.0))
        - ln_gamma(MAINARDI_MAX_TERMS as f64 + 1.0))
    .exp()
        / PI;
    Err(Error::SeriesNonConvergence {
        terms: MAINARDI_MAX_TERMS,
        last_term: last,
    })
}

/// Mainardi–Wright function `M_ν(l)` by its power series.
pub fn mainardi_wright(nu: f64, l: f64) -> Result<f64> {
    mainardi_series(nu, l).map(|s| s.value)
}

/// `log A(φ)` for Kanter's function
/// `A(φ) = [sin(νφ)^ν sin((1-ν)φ)^{1-ν} / sin φ]^{1/(1-ν)}`.
fn kanter_log(nu: f64, phi: f64) -> f64 {
    (nu * (nu * phi).sin().ln() + (1.0 - nu) * ((1.0 - nu) * phi).sin().ln() - phi.sin().ln()) / (1.0 - nu)
}

/// `M_ν(l)` for `l > 0` through the positive integral representation
///
/// `M_ν(l) = 1/(π(1-ν) l) ∫_0^π exp(w(φ) - e^{w(φ)}) dφ`, `w = log A(φ) + log(l)/(1-ν)`,
///
/// obtained from the one-sided stable density. No cancellation, so it is
/// used where the series loses accuracy (large `l`, or `ν` close to 1).
pub fn mainardi_wright_integral(nu: f64, l: f64) -> Result<f64> {
    check_nu(nu)?;
    if !(l > 0.0) {
        return Err(invalid("l", "integral representation needs l > 0"));
    }
    let shift = l.ln() / (1.0 - nu);
    let w = |phi: f64| kanter_log(nu, phi) + shift;
    let integrand = |phi: f64| {
        let wv = w(phi);
        if wv > 700.0 {
            0.0
        } else {
            (wv - wv.exp()).exp()
        }
    };
    let lo = 1e-12;
    let hi = PI - 1e-12;
    let mut breaks = vec![0.0];
    if w(lo) < 0.0 && w(hi) > 0.0 {
        // w is increasing; locate the peak of the integrand at w = 0
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if w(m) < 0.0 {
                a = m;
            } else {
                b = m;
            }
            if b - a < 1e-15 {
                break;
            }
        }
        let peak = 0.5 * (a + b);
        let h = 1e-7 * peak.max(1e-3);
        let slope = ((w(peak + h) - w(peak - h)) / (2.0 * h)).abs().max(1e-12);
        let width = 1.0 / slope;
        for &k in &[-16.0, -4.0, -1.0, 0.0, 1.0, 4.0, 16.0] {
            let p = peak + k * width;
            if p > 0.0 && p < PI {
                breaks.push(p);
            }
        }
    }
    breaks.push(PI);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    // absolute floor of 1e-20 on M itself: deep-tail values need no more
    let opts = QuadOptions {
        abs_tol: 1e-20 * PI * (1.0 - nu) * l,
        rel_tol: 1e-12,
        max_intervals: 4000,
    };
    let r = integrate_with_breaks(integrand, &breaks, opts)?;
    Ok(r.value / (PI * (1.0 - nu) * l))
}

/// Accurate `M_ν(l)` for all `l >= 0`: the series where its error estimate
/// is below `1e-13`, the integral representation elsewhere.
pub fn mainardi_density(nu: f64, l: f64) -> Result<f64> {
    match mainardi_series(nu, l) {
        Ok(s) if s.abs_error <= 1e-13 => Ok(s.value),
        Ok(_) | Err(Error::SeriesNonConvergence { .. }) => mainardi_wright_integral(nu, l),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k(rho: f64) -> KernelOrder {
        KernelOrder::new(rho).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(rl_kernel(k(1.0), 2.0), 1.0);
        assert_eq!(rl_kernel(k(0.7), -1.0), 0.0);
        assert_relative_eq!(rl_kernel(k(0.5), 1.0), 1.0 / PI.sqrt(), max_relative = 1e-14);
        assert!(KernelOrder::new(0.0).is_err());
        assert!(KernelOrder::new(-0.3).is_err());
        assert!(rl_kernel_checked(-1.0, 1.0).is_err());
    }

    #[test]
    fn grid_basics() {
        let g = TimeGrid::new(0.0, 0.25, 5).unwrap();
        assert_eq!(g.end(), 1.0);
        assert_eq!(g.index_of(0.5), Some(2));
        assert_eq!(g.index_of(0.6), None);
        assert!(TimeGrid::new(0.0, 0.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 0.1, 0).is_err());
        assert!(TimeGrid::covering(1.0, 0.3).is_err());
        assert_eq!(TimeGrid::covering(1.0, 0.0025).unwrap().n_steps, 401);
    }

    #[test]
    fn ramp_from_unit_kernels() {
        let g = TimeGrid::covering(1.0, 1e-3).unwrap();
        let c = convolve(&g, Factor::Kernel(k(1.0)), Factor::Kernel(k(1.0))).unwrap();
        let err = (0..g.n_steps).map(|i| (c[i] - g.t(i)).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
        let c2 = convolve(&g, Factor::Kernel(k(1.0)), Factor::Sampled(&vec![1.0; g.n_steps])).unwrap();
        let err2 = (0..g.n_steps).map(|i| (c2[i] - g.t(i)).abs()).fold(0.0, f64::max);
        assert!(err2 < 1e-12);
        let half = convolve(&g, Factor::Kernel(k(0.5)), Factor::Kernel(k(0.5))).unwrap();
        assert_relative_eq!(half[500], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn zero_factor_gives_zero() {
        let g = TimeGrid::covering(1.0, 0.01).unwrap();
        let zero = vec![0.0; g.n_steps];
        let other = g.sample(|t| (3.0 * t).sin() + 2.0);
        let c = convolve(&g, Factor::Sampled(&zero), Factor::Sampled(&other)).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        let c = convolve(&g, Factor::Kernel(k(0.4)), Factor::Sampled(&zero)).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_grid_rejected() {
        let g = TimeGrid::covering(1.0, 0.1).unwrap();
        let short = vec![1.0; 3];
        assert!(matches!(
            convolve(&g, Factor::Sampled(&short), Factor::Kernel(k(0.5))),
            Err(Error::GridMismatch(_))
        ));
        let shifted = TimeGrid::new(1.0, 0.1, 11).unwrap();
        let ok = vec![1.0; 11];
        assert!(convolve(&shifted, Factor::Sampled(&ok), Factor::Sampled(&ok)).is_err());
    }

    #[test]
    fn product_integration_is_second_order() {
        // k_{0.3} * cos(t) against a fine-quadrature oracle at t = 1
        let oracle = crate::quad::integrate(
            |tau: f64| tau.powf(-0.7) / gamma(0.3) * (1.0 - tau).cos(),
            0.0,
            1.0,
            QuadOptions::with_tol(1e-14, 1e-13),
        )
        .unwrap()
        .value;
        let err = |dt: f64| {
            let g = TimeGrid::covering(1.0, dt).unwrap();
            let c = g.sample(f64::cos);
            let r = convolve(&g, Factor::Kernel(k(0.3)), Factor::Sampled(&c)).unwrap();
            (r[g.n_steps - 1] - oracle).abs()
        };
        let (e1, e2) = (err(0.02), err(0.01));
        let order = (e1 / e2).log2();
        assert!(order > 1.8, "observed order {order} ({e1} {e2} {oracle})");
    }

    #[test]
    fn caputo_of_constant_and_ramp() {
        let g = TimeGrid::covering(1.0, 1e-3).unwrap();
        let c = caputo_derivative(&g, &vec![3.0; g.n_steps], 0.5).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-14));
        let ramp = g.times();
        let d = caputo_derivative(&g, &ramp, 0.5).unwrap();
        // L1 is exact on linear functions
        assert_relative_eq!(d[g.n_steps - 1], 2.0 / PI.sqrt(), max_relative = 1e-10);
        let same = caputo_derivative(&g, &ramp, 0.0).unwrap();
        assert_eq!(same, ramp);
        assert!(caputo_derivative(&g, &ramp, 1.0).is_err());
    }

    #[test]
    fn caputo_l1_order() {
        // f = t^2, D^ρ f = 2 t^{2-ρ} / Γ(3-ρ); L1 error is O(dt^{2-ρ})
        let rho = 0.4;
        let exact = 2.0 / gamma(3.0 - rho);
        let err = |dt: f64| {
            let g = TimeGrid::covering(1.0, dt).unwrap();
            let f = g.sample(|t| t * t);
            let d = caputo_derivative(&g, &f, rho).unwrap();
            (d[g.n_steps - 1] - exact).abs()
        };
        let order = (err(0.01) / err(0.005)).log2();
        assert!((order - (2.0 - rho)).abs() < 0.1, "order {order}");
    }

    #[test]
    fn mainardi_special_values() {
        for &nu in &[0.2, 0.5, 0.8] {
            assert_relative_eq!(
                mainardi_wright(nu, 0.0).unwrap(),
                1.0 / gamma(1.0 - nu),
                max_relative = 1e-14
            );
        }
        let v = mainardi_wright(0.5, 1.0).unwrap();
        assert_relative_eq!(v, (-0.25f64).exp() / PI.sqrt(), max_relative = 1e-12);
        assert!(mainardi_wright(1.2, 1.0).is_err());
    }

    #[test]
    fn integral_representation_matches_series() {
        for &nu in &[0.5, 0.6, 0.75, 0.9] {
            for &l in &[0.1, 0.5, 1.0, 2.0] {
                // the series stalls for nu close to 1 at moderate l
                let Ok(s) = mainardi_series(nu, l) else {
                    assert!(nu >= 0.9 && l >= 1.0, "series failed at nu={nu} l={l}");
                    continue;
                };
                let i = mainardi_wright_integral(nu, l).unwrap();
                assert!(
                    (s.value - i).abs() < 1e-11 + s.abs_error,
                    "nu={nu} l={l}: {} vs {i}",
                    s.value
                );
            }
        }
        // Gaussian closed form for nu = 1/2 far into the tail
        let l = 9.0;
        assert_relative_eq!(
            mainardi_wright_integral(0.5, l).unwrap(),
            (-l * l / 4.0).exp() / PI.sqrt(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn series_flags_non_convergence() {
        assert!(matches!(
            mainardi_series(0.9995, 1.0),
            Err(Error::SeriesNonConvergence { .. })
        ));
        // the combined evaluator still answers
        assert!(mainardi_density(0.9995, 1.0).unwrap().is_finite());
    }
}
