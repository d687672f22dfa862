//! Scalar resolvent families of the multi-term operator, one eigenvalue at a time.
//!
//! For an eigenvalue `λ` the families have Laplace symbols
//!
//! ```text
//! ŝ(z) = z^α / D(z),   ĵ(z) = 1 / D(z),   D(z) = z^{1+α} + Σ β_ι z^{γ_ι} − λ
//! ```
//!
//! (principal branches). `D` usually has a conjugate pair of simple zeros
//! on the principal sheet. Their residues are subtracted analytically and
//! only the pole-free remainder goes through the Talbot contour, so the
//! contour never has to reach out to the zeros of high modes.

use std::io::Write;

use num_complex::Complex64;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kernels::{convolve, mainardi_density, Factor, KernelOrder, TimeGrid};
use crate::laplace::{invert_at, InversionOptions};
use crate::quad::{integrate_with_breaks, QuadOptions};
use crate::special::gamma;

/// `(α, {γ_ι}, {β_ι})`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FractionalOrders {
    pub alpha: f64,
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl FractionalOrders {
    /// Validates `0 < α ≤ γ_m ≤ … ≤ γ_1 < 1` and `β_ι > 0`.
    pub fn new(alpha: f64, gammas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        let o = Self { alpha, gammas, betas };
        o.validate()?;
        Ok(o)
    }

    /// Single-term orders (`m = 0`).
    pub fn single(alpha: f64) -> Result<Self> {
        Self::new(alpha, vec![], vec![])
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.alpha;
        if !(a > 0.0 && a <= 1.0) {
            return Err(invalid("alpha", format!("need 0 < alpha <= 1, got {a}")));
        }
        if self.gammas.len() != self.betas.len() {
            return Err(invalid(
                "gammas",
                format!("{} gammas but {} betas", self.gammas.len(), self.betas.len()),
            ));
        }
        for (i, g) in self.gammas.iter().enumerate() {
            if !(*g >= a && *g < 1.0) {
                return Err(invalid("gammas", format!("gamma[{i}] = {g} outside [alpha, 1)")));
            }
            if i > 0 && *g > self.gammas[i - 1] {
                return Err(invalid("gammas", "must be nonincreasing"));
            }
        }
        for (i, b) in self.betas.iter().enumerate() {
            if !(*b > 0.0 && b.is_finite()) {
                return Err(invalid("betas", format!("beta[{i}] = {b} must be positive")));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.gammas.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.gammas.iter().copied().zip(self.betas.iter().copied())
    }
}

/// The resolvent symbol for one eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventSymbol {
    pub orders: FractionalOrders,
    pub lambda: f64,
}

impl ResolventSymbol {
    pub fn new(orders: FractionalOrders, lambda: f64) -> Result<Self> {
        orders.validate()?;
        if !lambda.is_finite() {
            return Err(invalid("lambda", "must be finite"));
        }
        Ok(Self { orders, lambda })
    }

    /// `D(z)`, optionally with the multi-term part scaled by `s`.
    fn denominator_scaled(&self, z: Complex64, s: f64) -> Complex64 {
        let a = self.orders.alpha;
        let mut d = z.powf(1.0 + a) - self.lambda;
        for (g, b) in self.orders.terms() {
            d += s * b * z.powf(g);
        }
        d
    }

    fn derivative_scaled(&self, z: Complex64, s: f64) -> Complex64 {
        let a = self.orders.alpha;
        let mut d = (1.0 + a) * z.powf(a);
        for (g, b) in self.orders.terms() {
            d += s * b * g * z.powf(g - 1.0);
        }
        d
    }

    pub fn denominator(&self, z: Complex64) -> Complex64 {
        self.denominator_scaled(z, 1.0)
    }

    fn checked_denominator(&self, z: Complex64) -> Result<Complex64> {
        let d = self.denominator(z);
        if !(d.norm() >= 1e-14 * z.norm().powf(1.0 + self.orders.alpha)) || !d.is_finite() {
            return Err(Error::Pole { re: z.re, im: z.im });
        }
        Ok(d)
    }

    /// `ŝ(z) = z^α / D(z)`.
    pub fn s_hat(&self, z: Complex64) -> Result<Complex64> {
        Ok(z.powf(self.orders.alpha) / self.checked_denominator(z)?)
    }

    /// `ĵ(z) = 1 / D(z)`.
    pub fn j_hat(&self, z: Complex64) -> Result<Complex64> {
        Ok(1.0 / self.checked_denominator(z)?)
    }

    /// The zero of `D` in the upper half of the principal sheet, if any
    /// (its conjugate is the other one). Traced by Newton continuation from
    /// the single-term root `|λ|^{1/(1+α)} e^{iπ/(1+α)}` while the
    /// multi-term weights are switched on.
    pub fn upper_zero(&self) -> Option<Complex64> {
        if !(self.lambda < 0.0) {
            return None;
        }
        let a = self.orders.alpha;
        let mut z = Complex64::from_polar((-self.lambda).powf(1.0 / (1.0 + a)), std::f64::consts::PI / (1.0 + a));
        let newton = |z0: Complex64, s: f64| -> Option<Complex64> {
            let mut z = z0;
            for _ in 0..60 {
                let dz = self.denominator_scaled(z, s) / self.derivative_scaled(z, s);
                if !dz.is_finite() {
                    return None;
                }
                z -= dz;
                if !(z.im > 0.0) {
                    // crossed onto the cut: the zero has left the sheet
                    return None;
                }
                if dz.norm() <= 1e-15 * z.norm() {
                    return Some(z);
                }
            }
            let res = self.denominator_scaled(z, s).norm();
            (res <= 1e-10 * z.norm().powf(1.0 + a).max(1.0)).then_some(z)
        };
        z = newton(z, 0.0)?;
        if self.orders.m() == 0 {
            return Some(z);
        }
        let mut s: f64 = 0.0;
        let mut h: f64 = 1.0 / 16.0;
        while s < 1.0 {
            let next = (s + h).min(1.0);
            match newton(z, next) {
                Some(zn) if (zn - z).norm() <= 0.25 * z.norm() => {
                    z = zn;
                    s = next;
                    h = (h * 1.5).min(0.25);
                }
                _ => {
                    h *= 0.5;
                    if h < 1e-7 {
                        return None;
                    }
                }
            }
        }
        // reject zeros that are numerically on the cut
        (z.arg() < std::f64::consts::PI - 1e-9).then_some(z)
    }
}

/// Which transform of the family to invert: the symbol is
/// `z^power / D(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `S`, symbol `z^α/D`.
    S,
    /// `J = k_α * S`, symbol `1/D`.
    J,
    /// `∫_0^t S`, symbol `z^{α-1}/D`.
    SIntegral,
    /// `∫_0^t J`, symbol `z^{-1}/D`.
    JIntegral,
}

impl Family {
    fn power(self, alpha: f64) -> f64 {
        match self {
            Family::S => alpha,
            Family::J => 0.0,
            Family::SIntegral => alpha - 1.0,
            Family::JIntegral => -1.0,
        }
    }

    /// Value at `t = 0` (initial-value theorem).
    fn at_zero(self) -> f64 {
        match self {
            Family::S => 1.0,
            _ => 0.0,
        }
    }
}

/// Sampled family values plus the number of times whose convergence
/// estimate missed the tolerance.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub values: Vec<f64>,
    pub warnings: usize,
}

/// Invert one family on the grid; the `t = 0` entry is set analytically.
pub fn eval_family(sym: &ResolventSymbol, family: Family, grid: &TimeGrid) -> Result<Inversion> {
    let power = family.power(sym.orders.alpha);
    let pole = sym.upper_zero();
    let residue = match pole {
        Some(zk) => {
            let d1 = sym.derivative_scaled(zk, 1.0);
            let r = zk.powf(power) / d1;
            if !r.is_finite() {
                return Err(Error::Pole { re: zk.re, im: zk.im });
            }
            Some((zk, r))
        }
        None => None,
    };
    let remainder = |z: Complex64| -> Result<Complex64> {
        let base = z.powf(power) / sym.checked_denominator(z)?;
        Ok(match residue {
            Some((zk, r)) => base - r / (z - zk) - r.conj() / (z - zk.conj()),
            None => base,
        })
    };
    let opts = InversionOptions::default();
    let mut values = Vec::with_capacity(grid.n_steps);
    let mut warnings = 0;
    for k in 0..grid.n_steps {
        let t = grid.t(k);
        if t == 0.0 {
            values.push(family.at_zero());
            continue;
        }
        let inv = invert_at(&remainder, t, &opts)?;
        if inv.warning {
            warnings += 1;
        }
        let pole_part = match residue {
            Some((zk, r)) => 2.0 * (r * (zk * t).exp()).re,
            None => 0.0,
        };
        values.push(inv.value + pole_part);
    }
    Ok(Inversion { values, warnings })
}

/// `S(t_k)` on the grid, with `S(0) = 1`.
#[allow(non_snake_case)]
pub fn eval_resolvent_S(sym: &ResolventSymbol, grid: &TimeGrid) -> Result<Vec<f64>> {
    eval_family(sym, Family::S, grid).map(|i| i.values)
}

/// `J(t_k)` on the grid, with `J(0) = 0`.
#[allow(non_snake_case)]
pub fn eval_resolvent_J(sym: &ResolventSymbol, grid: &TimeGrid) -> Result<Vec<f64>> {
    eval_family(sym, Family::J, grid).map(|i| i.values)
}

/// Independent evaluation of `S(t)` for `m = 0`, `0 < α < 1` by subordination
/// to the cosine family:
/// `S(t) = ∫_0^∞ M_ν(y) cos(√(-λ) t^ν y) dy`, `ν = (1+α)/2`.
#[allow(non_snake_case)]
pub fn subordination_S(lambda: f64, alpha: f64, t: f64) -> Result<f64> {
    if !(lambda <= 0.0) {
        return Err(invalid("lambda", "subordination needs lambda <= 0"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(
            "alpha",
            format!("subordination needs 0 < alpha < 1, got {alpha}"),
        ));
    }
    if !(t >= 0.0) {
        return Err(invalid("t", "must be nonnegative"));
    }
    let nu = 0.5 * (1.0 + alpha);
    let w = (-lambda).sqrt() * t.powf(nu);
    // support: the density is negligible once it is below 1e-17 beyond its mode
    let mut y_max: f64 = 2.0;
    while mainardi_density(nu, y_max)? > 1e-17 {
        y_max *= 1.5;
        if y_max > 1e4 {
            return Err(invalid("alpha", "Mainardi density tail too heavy"));
        }
    }
    // panels: a fixed subdivision plus resolution of the oscillation period
    let panels = ((y_max * w / std::f64::consts::PI).ceil() as usize).clamp(16, 4000);
    let mut breaks: Vec<f64> = (0..=panels).map(|i| y_max * i as f64 / panels as f64).collect();
    // the density concentrates near y = 1 as ν → 1
    for &b in &[0.9, 0.99, 0.999, 1.0, 1.001, 1.01, 1.1] {
        if b < y_max {
            breaks.push(b);
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut err: Option<Error> = None;
    let f = |y: f64| match mainardi_density(nu, y) {
        Ok(m) => m * (w * y).cos(),
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    };
    let r = integrate_with_breaks(f, &breaks, QuadOptions::with_tol(1e-11, 1e-9))?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(r.value)
}

/// Tabulated families for every eigenvalue on a common grid starting at 0.
///
/// Rows per mode `n`: `s`, `j`, `s_int = ∫S`, `j_int = ∫J` and the
/// multi-term correction `corr = Σ β_ι (k_{1+α-γ_ι} * S)`.
#[derive(Debug, Clone)]
pub struct ResolventTable {
    pub grid: TimeGrid,
    pub orders: FractionalOrders,
    pub eigenvalues: Vec<f64>,
    pub s: Vec<Vec<f64>>,
    pub j: Vec<Vec<f64>>,
    pub s_int: Vec<Vec<f64>>,
    pub j_int: Vec<Vec<f64>>,
    pub corr: Vec<Vec<f64>>,
    /// Grid maximum of `|S|` over all modes (a lower estimate of the true sup).
    pub sup_norm_s: f64,
    /// Inversions whose convergence estimate missed the tolerance.
    pub warnings: usize,
}

struct Rows {
    s: Vec<f64>,
    j: Vec<f64>,
    s_int: Vec<f64>,
    j_int: Vec<f64>,
    corr: Vec<f64>,
    warnings: usize,
}

fn mode_rows(orders: &FractionalOrders, lambda: f64, grid: &TimeGrid) -> Result<Rows> {
    let sym = ResolventSymbol::new(orders.clone(), lambda)?;
    let s = eval_family(&sym, Family::S, grid)?;
    let j = eval_family(&sym, Family::J, grid)?;
    let si = eval_family(&sym, Family::SIntegral, grid)?;
    let ji = eval_family(&sym, Family::JIntegral, grid)?;
    let mut corr = vec![0.0; grid.n_steps];
    for (g, b) in orders.terms() {
        let c = convolve(
            grid,
            Factor::Kernel(KernelOrder::new(1.0 + orders.alpha - g)?),
            Factor::Sampled(&s.values),
        )?;
        for (acc, v) in corr.iter_mut().zip(c) {
            *acc += b * v;
        }
    }
    Ok(Rows {
        warnings: s.warnings + j.warnings + si.warnings + ji.warnings,
        s: s.values,
        j: j.values,
        s_int: si.values,
        j_int: ji.values,
        corr,
    })
}

/// Build the table for all eigenvalues (in parallel when enabled).
pub fn build_resolvent_table(orders: &FractionalOrders, eigenvalues: &[f64], grid: TimeGrid) -> Result<ResolventTable> {
    orders.validate()?;
    if eigenvalues.is_empty() {
        return Err(invalid("eigenvalues", "need at least one eigenvalue"));
    }
    if grid.t0 != 0.0 {
        return Err(Error::GridMismatch("resolvent grid must start at 0".into()));
    }
    #[cfg(feature = "parallel")]
    let rows: Vec<Result<Rows>> = eigenvalues.par_iter().map(|&l| mode_rows(orders, l, &grid)).collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Result<Rows>> = eigenvalues.iter().map(|&l| mode_rows(orders, l, &grid)).collect();
    let mut table = ResolventTable {
        grid,
        orders: orders.clone(),
        eigenvalues: eigenvalues.to_vec(),
        s: Vec::new(),
        j: Vec::new(),
        s_int: Vec::new(),
        j_int: Vec::new(),
        corr: Vec::new(),
        sup_norm_s: 0.0,
        warnings: 0,
    };
    for r in rows {
        let r = r?;
        table.sup_norm_s = r.s.iter().fold(table.sup_norm_s, |m, v| m.max(v.abs()));
        table.warnings += r.warnings;
        table.s.push(r.s);
        table.j.push(r.j);
        table.s_int.push(r.s_int);
        table.j_int.push(r.j_int);
        table.corr.push(r.corr);
    }
    if table.warnings > 0 {
        log::warn!("{} resolvent inversions missed the accuracy target", table.warnings);
    }
    Ok(table)
}

impl ResolventTable {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `t^α/Γ(1+α)` times the sup norm: the magnitude bound for `J`.
    pub fn j_bound(&self, t: f64) -> f64 {
        self.sup_norm_s * t.powf(self.orders.alpha) / gamma(1.0 + self.orders.alpha)
    }

    /// CSV with columns `t, S_1, J_1, S_2, J_2, …`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("t");
        for n in 1..=self.n_modes() {
            header.push_str(&format!(",S_{n},J_{n}"));
        }
        writeln!(w, "{header}")?;
        for k in 0..self.grid.n_steps {
            let mut line = format!("{:.16e}", self.grid.t(k));
            for n in 0..self.n_modes() {
                line.push_str(&format!(",{:.16e},{:.16e}", self.s[n][k], self.j[n][k]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sym(alpha: f64, gammas: &[f64], betas: &[f64], lambda: f64) -> ResolventSymbol {
        ResolventSymbol::new(
            FractionalOrders::new(alpha, gammas.to_vec(), betas.to_vec()).unwrap(),
            lambda,
        )
        .unwrap()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn symbol_values() {
        assert_relative_eq!(
            sym(0.5, &[], &[], 0.0).s_hat(c(2.0)).unwrap().re,
            0.5,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            sym(1.0, &[], &[], -4.0).s_hat(c(1.0)).unwrap().re,
            0.2,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            sym(0.5, &[0.5], &[1.0], 0.0).s_hat(c(1.0)).unwrap().re,
            0.5,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            sym(1.0, &[], &[], 0.0).j_hat(c(3.0)).unwrap().re,
            1.0 / 9.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            sym(1.0, &[], &[], -4.0).j_hat(c(1.0)).unwrap().re,
            0.2,
            max_relative = 1e-15
        );
    }

    #[test]
    fn pole_is_reported() {
        let s = sym(1.0, &[], &[], -4.0);
        assert!(matches!(s.s_hat(Complex64::new(0.0, 2.0)), Err(Error::Pole { .. })));
    }

    #[test]
    fn order_validation() {
        assert!(FractionalOrders::new(0.0, vec![], vec![]).is_err());
        assert!(FractionalOrders::new(1.2, vec![], vec![]).is_err());
        assert!(FractionalOrders::new(0.5, vec![0.4], vec![1.0]).is_err());
        assert!(FractionalOrders::new(0.5, vec![0.6, 0.7], vec![1.0, 1.0]).is_err());
        assert!(FractionalOrders::new(0.5, vec![0.6], vec![0.0]).is_err());
        assert!(FractionalOrders::new(0.5, vec![0.6], vec![]).is_err());
        assert!(FractionalOrders::new(0.2, vec![0.6, 0.4, 0.3], vec![1.0, 5.0, 8.0]).is_ok());
    }

    #[test]
    fn zero_tracking() {
        let s = sym(1.0, &[], &[], -9.0);
        let z = s.upper_zero().unwrap();
        assert!((z - Complex64::new(0.0, 3.0)).norm() < 1e-12);
        let s = sym(0.5, &[0.6], &[0.5], -4.0);
        let z = s.upper_zero().unwrap();
        assert!(s.denominator(z).norm() < 1e-10);
        assert!(sym(0.5, &[], &[], 0.0).upper_zero().is_none());
    }

    #[test]
    fn wave_limit() {
        let g = TimeGrid::covering(1.0, 0.01).unwrap();
        for n in 1..=3 {
            let nf = n as f64;
            let s = sym(1.0, &[], &[], -nf * nf);
            let sv = eval_resolvent_S(&s, &g).unwrap();
            let jv = eval_resolvent_J(&s, &g).unwrap();
            for k in 0..g.n_steps {
                let t = g.t(k);
                assert!((sv[k] - (nf * t).cos()).abs() < 1e-9);
                assert!((jv[k] - (nf * t).sin() / nf).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_eigenvalue_powers() {
        let g = TimeGrid::covering(1.0, 0.05).unwrap();
        let s = sym(0.4, &[], &[], 0.0);
        let sv = eval_resolvent_S(&s, &g).unwrap();
        let jv = eval_resolvent_J(&s, &g).unwrap();
        for k in 0..g.n_steps {
            let t = g.t(k);
            assert!((sv[k] - 1.0).abs() < 1e-9);
            assert!((jv[k] - t.powf(0.4) / gamma(1.4)).abs() < 1e-9);
        }
    }

    #[test]
    fn initial_value_multi_term() {
        let s = sym(0.5, &[0.6, 0.5], &[1.0, 5.0], -9.0);
        let g = TimeGrid::new(0.0, 1e-5, 3).unwrap();
        let sv = eval_resolvent_S(&s, &g).unwrap();
        assert_eq!(sv[0], 1.0);
        assert!((sv[2] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn integral_rows_integrate() {
        let s = sym(0.5, &[0.6], &[0.5], -4.0);
        let g = TimeGrid::covering(1.0, 0.001).unwrap();
        let t = build_resolvent_table(&s.orders, &[-4.0], g).unwrap();
        // trapezoid of S vs the inverted ∫S
        let mut acc = 0.0;
        for k in 1..g.n_steps {
            acc += 0.5 * g.dt * (t.s[0][k] + t.s[0][k - 1]);
        }
        assert!((acc - t.s_int[0][g.n_steps - 1]).abs() < 1e-6);
    }

    #[test]
    fn single_point_grid() {
        let g = TimeGrid::new(0.0, 0.1, 1).unwrap();
        let t = build_resolvent_table(&FractionalOrders::single(0.5).unwrap(), &[-1.0], g).unwrap();
        assert_eq!(t.s[0], vec![1.0]);
        assert_eq!(t.j[0], vec![0.0]);
    }

    #[test]
    fn subordination_trivial_and_limit() {
        assert_relative_eq!(subordination_S(0.0, 0.6, 1.0).unwrap(), 1.0, max_relative = 1e-6);
        let v = subordination_S(-4.0, 0.999, 0.5).unwrap();
        assert!((v - 1.0f64.cos()).abs() < 5e-3, "{v}");
    }

    #[test]
    fn csv_layout() {
        let g = TimeGrid::covering(0.1, 0.05).unwrap();
        let t = build_resolvent_table(&FractionalOrders::single(1.0).unwrap(), &[-1.0, -4.0], g).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,S_1,J_1,S_2,J_2");
        assert_eq!(lines.len(), 4);
    }
}
