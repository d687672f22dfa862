//! Dirichlet-Laplacian eigenbasis on `[0, π]`, projection and the model registries.
//!
//! Nonlinear maps are evaluated pseudo-spectrally on `4N + 1` uniform points.
//! The discrete sine transform on that grid is orthonormal for the first
//! `N` modes, so pointwise bounds `|g(z)| <= L|z|` carry over exactly to
//! coefficient norms; the registry's `μ` functions rely on this.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::impulse::ImpulseSchedule;
use crate::quad::CompositeRule;
use crate::resolvent::FractionalOrders;

/// `ξ_n(x) = √(2/π) sin(nx)`.
#[inline]
pub fn xi(n: usize, x: f64) -> f64 {
    (2.0 / PI).sqrt() * (n as f64 * x).sin()
}

/// Eigenfunction handle returned by [`eigenpair`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eigenfunction(pub usize);

impl Eigenfunction {
    pub fn eval(&self, x: f64) -> f64 {
        xi(self.0, x)
    }
}

/// `(λ_n, ξ_n) = (−n², √(2/π) sin(nx))`, `n >= 1`.
pub fn eigenpair(n: usize) -> Result<(f64, Eigenfunction)> {
    if n < 1 {
        return Err(invalid("n", "mode index starts at 1"));
    }
    Ok((-((n * n) as f64), Eigenfunction(n)))
}

/// Eigenvalues of the first `n_modes` modes.
pub fn eigenvalues(n_modes: usize) -> Vec<f64> {
    (1..=n_modes).map(|n| -((n * n) as f64)).collect()
}

/// Default panel count for [`project`].
pub const DEFAULT_PANELS: usize = 64;

/// `c_n = ∫_0^π f ξ_n`, `n = 1..=n_modes`, by composite 8-point Gauss–Legendre.
pub fn project<F: Fn(f64) -> f64>(f: F, n_modes: usize, panels: usize) -> Result<Vec<f64>> {
    if n_modes == 0 {
        return Err(invalid("n_modes", "must be at least 1"));
    }
    if panels == 0 {
        return Err(invalid("panels", "must be at least 1"));
    }
    let rule = CompositeRule::new(0.0, PI, panels, 8);
    let fx: Vec<f64> = rule.points.iter().map(|&x| f(x)).collect();
    Ok((1..=n_modes)
        .map(|n| {
            rule.points
                .iter()
                .zip(&rule.weights)
                .zip(&fx)
                .map(|((&x, &w), &v)| w * v * xi(n, x))
                .sum()
        })
        .collect())
}

/// `Σ c_n ξ_n(x)`.
pub fn reconstruct(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().enumerate().map(|(i, c)| c * xi(i + 1, x)).sum()
}

/// Collocation grid `x_j = jπ/(4N)` with the basis sampled once.
#[derive(Debug, Clone)]
pub struct Collocation {
    n_modes: usize,
    points: Vec<f64>,
    /// `basis[j * n_modes + (n-1)] = ξ_n(x_j)`
    basis: Vec<f64>,
    h: f64,
}

impl Collocation {
    pub fn new(n_modes: usize) -> Self {
        let m = 4 * n_modes.max(1);
        let h = PI / m as f64;
        let points: Vec<f64> = (0..=m).map(|j| j as f64 * h).collect();
        let mut basis = Vec::with_capacity(points.len() * n_modes);
        for &x in &points {
            for n in 1..=n_modes {
                basis.push(xi(n, x));
            }
        }
        Self {
            n_modes,
            points,
            basis,
            h,
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn to_physical(&self, coeffs: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for j in 0..self.points.len() {
            let row = &self.basis[j * self.n_modes..(j + 1) * self.n_modes];
            out.push(row.iter().zip(coeffs).map(|(b, c)| b * c).sum());
        }
    }

    pub fn to_modes(&self, values: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|c| *c = 0.0);
        for (j, v) in values.iter().enumerate() {
            let row = &self.basis[j * self.n_modes..(j + 1) * self.n_modes];
            for (c, b) in out.iter_mut().zip(row) {
                *c += self.h * v * b;
            }
        }
    }
}

/// Named nonlinearity with parameters, as written in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl NonlinearitySpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

/// Resolved registry entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    /// `0`.
    Zero,
    /// `c e^{−kt} z` (defaults `c = 1/3`, `k = 1`).
    LinearDecay { c: f64, k: f64 },
    /// `e^{−kt} z / (d + |z|)` pointwise (defaults `k = 3`, `d = 2`).
    Saturating { k: f64, d: f64 },
    /// `c e^{−kt} z` (defaults `c = e^π`, `k = 4`).
    ExpScale { c: f64, k: f64 },
    /// `(a + e^{−kt} z) / (1 + |z|)` pointwise (defaults `a = 2`, `k = π`).
    ShiftedSaturating { a: f64, k: f64 },
    /// `σ` in every coefficient, independent of the state.
    Constant { sigma: f64 },
}

/// Registry keys.
pub const NONLINEARITY_KEYS: [&str; 6] = [
    "zero",
    "linear_decay",
    "saturating",
    "exp_scale",
    "shifted_saturating",
    "constant",
];

/// Shape of the declared growth bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// `‖g(t,z)‖^p <= μ(t) ‖z‖^p`.
    Linear,
    /// `‖g(t,z)‖^p <= μ(t) (1 + ‖z‖^p)`; the state-proportional form cannot hold.
    Affine,
}

fn take_params(spec: &NonlinearitySpec, allowed: &[(&str, f64)]) -> Result<Vec<f64>> {
    for key in spec.params.keys() {
        if !allowed.iter().any(|(k, _)| k == key) {
            return Err(Error::UnknownKey {
                registry: "nonlinearity parameter",
                key: format!("{}.{}", spec.name, key),
            });
        }
    }
    allowed
        .iter()
        .map(|(k, d)| {
            let v = spec.params.get(*k).copied().unwrap_or(*d);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(invalid("params", format!("{}.{} must be finite", spec.name, k)))
            }
        })
        .collect()
}

impl Nonlinearity {
    pub fn resolve(spec: &NonlinearitySpec) -> Result<Self> {
        Ok(match spec.name.as_str() {
            "zero" => {
                take_params(spec, &[])?;
                Nonlinearity::Zero
            }
            "linear_decay" => {
                let v = take_params(spec, &[("c", 1.0 / 3.0), ("k", 1.0)])?;
                Nonlinearity::LinearDecay { c: v[0], k: v[1] }
            }
            "saturating" => {
                let v = take_params(spec, &[("k", 3.0), ("d", 2.0)])?;
                if !(v[1] > 0.0) {
                    return Err(invalid("params", "saturating.d must be positive"));
                }
                Nonlinearity::Saturating { k: v[0], d: v[1] }
            }
            "exp_scale" => {
                let v = take_params(spec, &[("c", PI.exp()), ("k", 4.0)])?;
                Nonlinearity::ExpScale { c: v[0], k: v[1] }
            }
            "shifted_saturating" => {
                let v = take_params(spec, &[("a", 2.0), ("k", PI)])?;
                Nonlinearity::ShiftedSaturating { a: v[0], k: v[1] }
            }
            "constant" => {
                let v = take_params(spec, &[("sigma", 1.0)])?;
                Nonlinearity::Constant { sigma: v[0] }
            }
            other => {
                return Err(Error::UnknownKey {
                    registry: "nonlinearity",
                    key: other.to_string(),
                })
            }
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Nonlinearity::Zero)
    }

    /// `true` if the map acts on coefficients without collocation.
    pub fn is_linear(&self) -> bool {
        matches!(
            self,
            Nonlinearity::Zero | Nonlinearity::LinearDecay { .. } | Nonlinearity::ExpScale { .. }
        )
    }

    pub fn bound_kind(&self) -> BoundKind {
        match self {
            Nonlinearity::ShiftedSaturating { .. } | Nonlinearity::Constant { .. } => BoundKind::Affine,
            _ => BoundKind::Linear,
        }
    }

    /// `μ(t)` of the declared bound in the coefficient (= L²) norm.
    pub fn mu(&self, t: f64, p: f64, n_modes: usize) -> f64 {
        match *self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::LinearDecay { c, k } | Nonlinearity::ExpScale { c, k } => (c.abs() * (-k * t).exp()).powf(p),
            Nonlinearity::Saturating { k, d } => ((-k * t).exp() / d).powf(p),
            Nonlinearity::ShiftedSaturating { a, k } => {
                let m = a.abs().max((-k * t).exp());
                (PI * m * m).powf(0.5 * p)
            }
            Nonlinearity::Constant { sigma } => (sigma * sigma * n_modes as f64).powf(0.5 * p),
        }
    }

    /// Evaluate `g(t, z)` in coefficient space.
    pub fn apply(&self, t: f64, z: &[f64], colloc: &Collocation, out: &mut [f64]) {
        match *self {
            Nonlinearity::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Nonlinearity::LinearDecay { c, k } | Nonlinearity::ExpScale { c, k } => {
                let s = c * (-k * t).exp();
                for (o, v) in out.iter_mut().zip(z) {
                    *o = s * v;
                }
            }
            Nonlinearity::Constant { sigma } => out.iter_mut().for_each(|v| *v = sigma),
            Nonlinearity::Saturating { k, d } => {
                let s = (-k * t).exp();
                pointwise(colloc, z, out, |v| s * v / (d + v.abs()));
            }
            Nonlinearity::ShiftedSaturating { a, k } => {
                let s = (-k * t).exp();
                pointwise(colloc, z, out, |v| (a + s * v) / (1.0 + v.abs()));
            }
        }
    }

    /// Pointwise evaluation then re-projection, for any entry (diagnostics).
    pub fn apply_pseudo_spectral(&self, t: f64, z: &[f64], colloc: &Collocation, out: &mut [f64]) {
        match *self {
            Nonlinearity::LinearDecay { c, k } | Nonlinearity::ExpScale { c, k } => {
                let s = c * (-k * t).exp();
                pointwise(colloc, z, out, |v| s * v);
            }
            _ => self.apply(t, z, colloc, out),
        }
    }
}

fn pointwise<F: Fn(f64) -> f64>(colloc: &Collocation, z: &[f64], out: &mut [f64], f: F) {
    let mut phys = Vec::with_capacity(colloc.points().len());
    colloc.to_physical(z, &mut phys);
    for v in phys.iter_mut() {
        *v = f(*v);
    }
    colloc.to_modes(&phys, out);
}

/// Initial-data registry entries, written in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Zero,
    /// `amplitude · sin(n x)`.
    SineMode {
        n: usize,
        amplitude: f64,
    },
    /// `scale · x(π − x)`.
    Parabola {
        scale: f64,
    },
    /// `slope · x + intercept`.
    Affine {
        slope: f64,
        intercept: f64,
    },
    /// Coefficients given directly (missing trailing modes are zero).
    Coefficients {
        values: Vec<f64>,
    },
}

impl InitialData {
    pub fn coefficients(&self, n_modes: usize, panels: usize) -> Result<Vec<f64>> {
        match self {
            InitialData::Zero => Ok(vec![0.0; n_modes]),
            InitialData::SineMode { n, amplitude } => {
                if *n < 1 {
                    return Err(invalid("n", "mode index starts at 1"));
                }
                let mut c = vec![0.0; n_modes];
                if *n <= n_modes {
                    c[n - 1] = amplitude * (PI / 2.0).sqrt();
                }
                Ok(c)
            }
            InitialData::Parabola { scale } => project(|x| scale * x * (PI - x), n_modes, panels),
            InitialData::Affine { slope, intercept } => project(|x| slope * x + intercept, n_modes, panels),
            InitialData::Coefficients { values } => {
                if values.len() > n_modes {
                    return Err(invalid(
                        "values",
                        format!("{} coefficients for {n_modes} modes", values.len()),
                    ));
                }
                let mut c = values.clone();
                c.resize(n_modes, 0.0);
                Ok(c)
            }
        }
    }
}

/// How the Wiener increments enter the modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// One scalar Wiener process drives every mode (`W = ℝ`).
    Scalar,
    /// Mode `n` is driven by its own Wiener process with variance `q_n`.
    Diagonal,
}

/// Covariance of the driving noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub variances: Vec<f64>,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() {
            return Err(invalid("variances", "need at least one noise mode"));
        }
        if kind == NoiseKind::Scalar && variances.len() != 1 {
            return Err(invalid("variances", "scalar noise takes exactly one variance"));
        }
        if let Some(v) = variances.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(invalid("variances", format!("variance {v} must be finite and >= 0")));
        }
        Ok(Self { kind, variances })
    }

    pub fn scalar(variance: f64) -> Result<Self> {
        Self::new(NoiseKind::Scalar, vec![variance])
    }

    pub fn none() -> Self {
        Self {
            kind: NoiseKind::Scalar,
            variances: vec![0.0],
        }
    }

    pub fn n_noise_modes(&self) -> usize {
        self.variances.len()
    }

    pub fn is_silent(&self) -> bool {
        self.variances.iter().all(|v| *v == 0.0)
    }

    /// Largest variance: `‖g‖²_{L_2^0} <= q_max ‖g‖²` for mode-diagonal maps.
    pub fn q_max(&self) -> f64 {
        self.variances.iter().copied().fold(0.0, f64::max)
    }

    /// Noise process driving state mode `n` (0-based).
    #[inline]
    pub fn source_of(&self, n: usize) -> usize {
        match self.kind {
            NoiseKind::Scalar => 0,
            NoiseKind::Diagonal => n,
        }
    }
}

/// Truncated spectral model of the controlled system.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    pub n_modes: usize,
    pub orders: FractionalOrders,
    pub eigenvalues: Vec<f64>,
    pub g1: Nonlinearity,
    pub g2: Nonlinearity,
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub noise: NoiseModel,
    pub schedule: ImpulseSchedule,
    pub p: f64,
    colloc: Collocation,
}

impl SpectralModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_modes: usize,
        orders: FractionalOrders,
        g1: Nonlinearity,
        g2: Nonlinearity,
        z0: Vec<f64>,
        z1: Vec<f64>,
        noise: NoiseModel,
        schedule: ImpulseSchedule,
        p: f64,
    ) -> Result<Self> {
        if n_modes < 1 {
            return Err(invalid("n_modes", "must be at least 1"));
        }
        orders.validate()?;
        if !(p >= 2.0 && p.is_finite()) {
            return Err(invalid("p", format!("moment order must be >= 2, got {p}")));
        }
        if z0.len() != n_modes || z1.len() != n_modes {
            return Err(invalid("z0", "initial data length must equal n_modes"));
        }
        if noise.kind == NoiseKind::Diagonal && noise.n_noise_modes() != n_modes {
            return Err(invalid("variances", "diagonal noise needs one variance per mode"));
        }
        Ok(Self {
            n_modes,
            eigenvalues: eigenvalues(n_modes),
            orders,
            g1,
            g2,
            z0,
            z1,
            noise,
            schedule,
            p,
            colloc: Collocation::new(n_modes),
        })
    }

    /// Replace the Dirichlet spectrum `−n²` (test problems, e.g. `λ = 0`).
    pub fn with_eigenvalues(mut self, eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.len() != self.n_modes {
            return Err(invalid("eigenvalues", "need one eigenvalue per mode"));
        }
        if let Some(l) = eigenvalues.iter().find(|l| !(**l <= 0.0 && l.is_finite())) {
            return Err(invalid(
                "eigenvalues",
                format!("eigenvalue {l} must be finite and <= 0"),
            ));
        }
        self.eigenvalues = eigenvalues;
        Ok(self)
    }

    pub fn collocation(&self) -> &Collocation {
        &self.colloc
    }

    /// `g1(t, z)` in coefficients.
    pub fn g1(&self, t: f64, z: &[f64], out: &mut [f64]) {
        self.g1.apply(t, z, &self.colloc, out)
    }

    /// `g2(t, z)` in coefficients (mode-diagonal action on the noise).
    pub fn g2(&self, t: f64, z: &[f64], out: &mut [f64]) {
        self.g2.apply(t, z, &self.colloc, out)
    }

    pub fn ell(&self) -> f64 {
        self.schedule.ell()
    }
}

/// Euclidean norm of a coefficient vector (= L² norm of the field).
pub fn norm(c: &[f64]) -> f64 {
    c.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigenpairs() {
        assert_eq!(eigenpair(1).unwrap().0, -1.0);
        assert_eq!(eigenpair(3).unwrap().0, -9.0);
        assert!(eigenpair(0).is_err());
        let rule = CompositeRule::new(0.0, PI, 64, 8);
        let ip = rule.integrate(|x| xi(2, x) * xi(5, x));
        assert!(ip.abs() < 1e-10);
    }

    #[test]
    fn projection_examples() {
        let c = project(f64::sin, 4, DEFAULT_PANELS).unwrap();
        assert_relative_eq!(c[0], (PI / 2.0).sqrt(), max_relative = 1e-13);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-13));
        assert!(project(|_| 0.0, 3, 8).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reconstruct_basis() {
        let mut c = vec![0.0; 3];
        c[0] = (PI / 2.0).sqrt();
        assert!((reconstruct(&c, PI / 2.0) - 1.0).abs() < 1e-12);
        assert_eq!(reconstruct(&[0.0; 4], 1.0), 0.0);
    }

    #[test]
    fn registry_lookup() {
        assert!(matches!(
            Nonlinearity::resolve(&NonlinearitySpec::new("nope")),
            Err(Error::UnknownKey { .. })
        ));
        assert!(Nonlinearity::resolve(&NonlinearitySpec::new("saturating").with("zz", 1.0)).is_err());
        let g = Nonlinearity::resolve(&NonlinearitySpec::new("linear_decay")).unwrap();
        let colloc = Collocation::new(3);
        let mut out = [0.0; 3];
        g.apply(0.0, &[3.0, -6.0, 9.0], &colloc, &mut out);
        assert_relative_eq!(out[1], -2.0, max_relative = 1e-15);
        let g = Nonlinearity::resolve(&NonlinearitySpec::new("exp_scale")).unwrap();
        g.apply(0.0, &[1.0, 0.0, 2.0], &colloc, &mut out);
        assert_relative_eq!(out[2], 2.0 * PI.exp(), max_relative = 1e-15);
    }

    #[test]
    fn collocation_is_orthonormal() {
        let n = 12;
        let colloc = Collocation::new(n);
        let mut phys = Vec::new();
        let mut back = vec![0.0; n];
        let c: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        colloc.to_physical(&c, &mut phys);
        colloc.to_modes(&phys, &mut back);
        for (a, b) in c.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseModel::new(NoiseKind::Scalar, vec![1.0, 2.0]).is_err());
        assert!(NoiseModel::new(NoiseKind::Diagonal, vec![1.0, -2.0]).is_err());
        let n = NoiseModel::new(NoiseKind::Diagonal, vec![0.5, 2.0]).unwrap();
        assert_eq!(n.q_max(), 2.0);
        assert_eq!(n.source_of(1), 1);
    }

    #[test]
    fn initial_data_entries() {
        let c = InitialData::SineMode { n: 2, amplitude: 1.0 }
            .coefficients(3, 32)
            .unwrap();
        assert_relative_eq!(c[1], (PI / 2.0).sqrt(), max_relative = 1e-15);
        // x(π−x) has only odd sine modes: c_n = √(2/π)·4/n³ for odd n
        let c = InitialData::Parabola { scale: 1.0 }.coefficients(4, 64).unwrap();
        assert_relative_eq!(c[0], (2.0 / PI).sqrt() * 4.0, max_relative = 1e-12);
        assert!(c[1].abs() < 1e-12);
        assert_relative_eq!(c[2], (2.0 / PI).sqrt() * 4.0 / 27.0, max_relative = 1e-12);
    }
}
