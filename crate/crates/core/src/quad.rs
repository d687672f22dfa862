//! Numerical quadrature: globally adaptive Gauss–Kronrod (7/15) and
//! composite Gauss–Legendre.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_intervals: 2000,
        }
    }
}

impl QuadOptions {
    pub fn with_tol(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
}

#[derive(Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Segment { a, b, value, error }
}

/// Adaptive integration of `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResult> {
    integrate_with_breaks(f, &[a, b], opts)
}

/// Adaptive integration over consecutive panels `[breaks[i], breaks[i+1]]`.
/// The initial panels are refined jointly (largest error first).
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], opts: QuadOptions) -> Result<QuadResult> {
    assert!(breaks.len() >= 2, "need at least one panel");
    let mut segs: Vec<Segment> = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| gk15(&mut f, w[0], w[1]))
        .collect();
    if segs.is_empty() {
        return Ok(QuadResult { value: 0.0, error: 0.0 });
    }
    loop {
        let value: f64 = segs.iter().map(|s| s.value).sum();
        let error: f64 = segs.iter().map(|s| s.error).sum();
        let target = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= target {
            return Ok(QuadResult { value, error });
        }
        if segs.len() >= opts.max_intervals {
            return Err(Error::Quadrature {
                tol: target,
                estimate: error,
            });
        }
        let (worst, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("non-empty");
        let s = segs.swap_remove(worst);
        let mid = 0.5 * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            // interval collapsed to machine resolution
            return Err(Error::Quadrature {
                tol: target,
                estimate: error,
            });
        }
        segs.push(gk15(&mut f, s.a, mid));
        segs.push(gk15(&mut f, mid, s.b));
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule on `[a, b]` with `panels` equal panels.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeRule {
    pub fn new(a: f64, b: f64, panels: usize, order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let h = (b - a) / panels as f64;
        let mut points = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let left = a + p as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                points.push(left + 0.5 * h * (xi + 1.0));
                weights.push(0.5 * h * wi);
            }
        }
        Self { points, weights }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_exactness() {
        let (x, w) = gauss_legendre(8);
        // exact for degree <= 15
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert_relative_eq!(integral, 2.0 / 15.0, max_relative = 1e-14);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let r = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, QuadOptions::with_tol(1e-12, 1e-10)).unwrap();
        assert_relative_eq!(r.value, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn adaptive_oscillatory() {
        let r = integrate(|x: f64| (20.0 * x).cos(), 0.0, 3.0, QuadOptions::default()).unwrap();
        assert_relative_eq!(r.value, (60.0f64).sin() / 20.0, max_relative = 1e-10);
    }

    #[test]
    fn reports_failure_when_budget_too_small() {
        let opts = QuadOptions {
            abs_tol: 1e-15,
            rel_tol: 1e-15,
            max_intervals: 2,
        };
        assert!(integrate(|x: f64| (50.0 * x).sin().abs(), 0.0, 10.0, opts).is_err());
    }

    #[test]
    fn composite_rule() {
        let rule = CompositeRule::new(0.0, std::f64::consts::PI, 64, 8);
        assert_relative_eq!(rule.integrate(|x| x.sin()), 2.0, max_relative = 1e-14);
    }
}
