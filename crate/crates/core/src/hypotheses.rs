//! Smallness constants of the existence and a-priori-bound theory.
//!
//! Every constant is evaluated exactly as written in the theory, including
//! the different splitting factors (`3^{p−1}` for the contraction constant,
//! `6^{p−1}` elsewhere). Integrals `∫_0^t μ_i` appearing inside constants that
//! must not depend on `t` are taken over the whole horizon `[0, ℓ]`.

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::quad::{integrate, QuadOptions};
use crate::resolvent::ResolventTable;
use crate::special::gamma;
use crate::spectral::{norm, BoundKind, Nonlinearity, SpectralModel};

/// `c_p = (p/(p−1))^p`.
pub fn small_c_p(p: f64) -> f64 {
    (p / (p - 1.0)).powf(p)
}

/// `C_p = (p(p−1)/2)^{p/2} (p/(p−1))^{p²/2}`.
pub fn big_c_p(p: f64) -> f64 {
    (0.5 * p * (p - 1.0)).powf(0.5 * p) * (p / (p - 1.0)).powf(0.5 * p * p)
}

/// Constants of one impulse `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpulseConstants {
    pub t: f64,
    pub e: f64,
    pub a: f64,
    pub b: f64,
    pub a_tilde: f64,
    pub b_tilde: f64,
}

/// Inputs of the checker.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisData {
    /// `S = sup ‖S(t)‖` (a grid estimate when taken from a table).
    pub s: f64,
    pub p: f64,
    pub ell: f64,
    pub impulses: Vec<ImpulseConstants>,
    /// `α`, `γ_ι`, `β_ι`. Only `0 < α <= 1`, `0 < γ_ι < 1`, `β_ι > 0` are
    /// required here; the ordering `α <= γ_ι` matters for the dynamics, not for
    /// evaluating the constants.
    pub alpha: f64,
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `∫_0^ℓ μ_1`.
    pub mu1_integral: f64,
    /// `∫_0^ℓ μ_2`, already including the noise covariance factor.
    pub mu2_integral: f64,
    /// `‖E‖`.
    pub e_norm: f64,
    /// `‖u‖_{L^p}`.
    pub u_norm: f64,
    /// `E‖z_0‖^p`, `E‖z_1‖^p`.
    pub z0_moment: f64,
    pub z1_moment: f64,
    /// Whether both growth bounds hold in the state-proportional form `μ(t)‖z‖^p`.
    pub growth_state_proportional: bool,
}

impl HypothesisData {
    /// Gather the data of a model: `S` from the table, `μ` integrals by adaptive
    /// quadrature (tolerance 1e−10), and the noise covariance folded into `μ_2`
    /// via `‖g‖^p_{L_2^0} <= q_max^{p/2} ‖g‖^p`.
    pub fn from_model(model: &SpectralModel, table: &ResolventTable, e_norm: f64, u_norm: f64) -> Result<Self> {
        let p = model.p;
        let ell = model.ell();
        let mu_int = |g: &Nonlinearity| -> Result<f64> {
            if g.is_zero() {
                return Ok(0.0);
            }
            let n = model.n_modes;
            Ok(integrate(|t| g.mu(t, p, n), 0.0, ell, QuadOptions::with_tol(1e-10, 1e-10))?.value)
        };
        let impulses = model
            .schedule
            .impulses()
            .iter()
            .map(|i| ImpulseConstants {
                t: i.t,
                e: i.e,
                a: i.a,
                b: i.b,
                a_tilde: i.a_tilde,
                b_tilde: i.b_tilde,
            })
            .collect();
        let noise_factor = model.noise.q_max().powf(0.5 * p);
        let data = Self {
            s: table.sup_norm_s,
            p,
            ell,
            impulses,
            alpha: model.orders.alpha,
            gammas: model.orders.gammas.clone(),
            betas: model.orders.betas.clone(),
            mu1_integral: mu_int(&model.g1)?,
            mu2_integral: if model.noise.is_silent() {
                0.0
            } else {
                noise_factor * mu_int(&model.g2)?
            },
            e_norm,
            u_norm,
            z0_moment: norm(&model.z0).powf(p),
            z1_moment: norm(&model.z1).powf(p),
            growth_state_proportional: [&model.g1, &model.g2]
                .iter()
                .all(|g| g.is_zero() || g.bound_kind() == BoundKind::Linear),
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 2.0 && self.p.is_finite()) {
            return Err(invalid("p", format!("moment order must be >= 2, got {}", self.p)));
        }
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(invalid("ell", "horizon must be positive"));
        }
        let nonneg = [
            ("s", self.s),
            ("mu1_integral", self.mu1_integral),
            ("mu2_integral", self.mu2_integral),
            ("e_norm", self.e_norm),
            ("u_norm", self.u_norm),
            ("z0_moment", self.z0_moment),
            ("z1_moment", self.z1_moment),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        for imp in &self.impulses {
            for v in [imp.a, imp.b, imp.a_tilde, imp.b_tilde] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(invalid(
                        "impulses",
                        format!("constants must be finite and >= 0, got {v}"),
                    ));
                }
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("alpha", format!("need 0 < alpha <= 1, got {}", self.alpha)));
        }
        if self.gammas.len() != self.betas.len() {
            return Err(invalid("gammas", "gammas and betas differ in length"));
        }
        if self.gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(invalid("gammas", "need 0 < gamma < 1"));
        }
        if self.betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(invalid("betas", "need beta > 0"));
        }
        Ok(())
    }

    pub fn r(&self) -> usize {
        self.impulses.len()
    }

    /// `t_q` for `q = 1..=r+1` (`t_{r+1} = ℓ`).
    pub fn t_q(&self, q: usize) -> f64 {
        if q >= 1 && q <= self.r() {
            self.impulses[q - 1].t
        } else {
            self.ell
        }
    }

    fn split6(&self) -> f64 {
        6f64.powf(self.p - 1.0)
    }

    /// `Σ_ι β_ι (σ/Γ(1+α−γ_ι))^p T^{(1+α−γ_ι)p} / (1+pα−pγ_ι)`; `+∞` when a
    /// denominator is not positive (the bound does not exist).
    fn multi_term(&self, sigma: f64, t: f64) -> f64 {
        let (a, p) = (self.alpha, self.p);
        self.gammas
            .iter()
            .zip(&self.betas)
            .map(|(&g, &b)| {
                let den = 1.0 + p * a - p * g;
                if den <= 0.0 {
                    return f64::INFINITY;
                }
                b * (sigma / gamma(1.0 + a - g)).powf(p) * t.powf((1.0 + a - g) * p) / den
            })
            .sum()
    }

    /// `(S/Γ(1+α))^p ((p−1)/(αp+p−1))^p T^{αp+p−1}`.
    fn drift_factor(&self, t: f64) -> f64 {
        let (a, p) = (self.alpha, self.p);
        (self.s / gamma(1.0 + a)).powf(p) * ((p - 1.0) / (a * p + p - 1.0)).powf(p) * t.powf(a * p + p - 1.0)
    }

    /// `(S/Γ(1+α))^p ((p−2)/(2αp+p−2))^{(p−2)/p} T^{(2αp+p−2)/2}`.
    fn noise_factor(&self, t: f64) -> f64 {
        let (a, p) = (self.alpha, self.p);
        let den = 2.0 * a * p + p - 2.0;
        (self.s / gamma(1.0 + a)).powf(p) * ((p - 2.0) / den).powf((p - 2.0) / p) * t.powf(0.5 * den)
    }
}

/// `£_{F1} = max_q { a_q, 3^{p−1}(S^p a_q + S^p ℓ b_q + Σβ(S/Γ(1+α−γ))^p ℓ^{(1+α−γ)p}/(1+pα−pγ) a_q) }`;
/// 0 without impulses.
pub fn contraction_constant_f1(d: &HypothesisData) -> f64 {
    let sp = d.s.powf(d.p);
    let split = 3f64.powf(d.p - 1.0);
    d.impulses
        .iter()
        .map(|i| {
            let inner = sp * i.a + sp * d.ell * i.b + d.multi_term(d.s, d.ell) * i.a;
            i.a.max(split * inner)
        })
        .fold(0.0, f64::max)
}

/// `£_F`: the growth constant with the drift and noise contributions; 0 without impulses.
pub fn growth_constant_f(d: &HypothesisData) -> f64 {
    let sp = d.s.powf(d.p);
    let six = d.split6();
    let mu_part =
        six * d.drift_factor(d.ell) * d.mu1_integral + six * big_c_p(d.p) * d.noise_factor(d.ell) * d.mu2_integral;
    d.impulses
        .iter()
        .map(|i| {
            i.a_tilde
                + six * sp * i.a_tilde
                + six * sp * d.ell * i.b_tilde
                + six * d.multi_term(d.s, d.ell) * i.a_tilde
                + mu_part
        })
        .fold(0.0, f64::max)
}

/// Every constant of the checker.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsReport {
    pub p: f64,
    pub s: f64,
    pub small_c_p: f64,
    pub big_c_p: f64,
    pub mu1_integral: f64,
    pub mu2_integral: f64,
    pub f1: f64,
    pub f: f64,
    pub x1: f64,
    /// `x_{1q}`, `q = 0..=r`.
    pub x1q: Vec<f64>,
    /// `x_{2q}`, `q = 1..=r`.
    pub x2q: Vec<f64>,
    /// `x_{3q}`, `q = 0..=r`.
    pub x3q: Vec<f64>,
    /// `£̃` evaluated with `t_{q+1}`, `q = 1..=r`.
    pub l_tilde: Vec<f64>,
    /// The three arguments of the max defining `Δ`.
    pub delta_initial: f64,
    pub delta_impulse: f64,
    pub delta_flow: f64,
    pub delta: f64,
    pub f1_pass: bool,
    pub f_pass: bool,
    pub a_tilde_pass: bool,
    pub growth_state_proportional: bool,
}

impl ConstantsReport {
    /// All smallness conditions hold and the growth bounds have the required form.
    pub fn passes(&self) -> bool {
        self.f1_pass && self.f_pass && self.a_tilde_pass && self.growth_state_proportional
    }

    fn fields(&self) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = vec![
            ("p".into(), fmt(self.p)),
            ("S".into(), fmt(self.s)),
            ("S_source".into(), "grid maximum of the resolvent table".into()),
            ("c_p".into(), fmt(self.small_c_p)),
            ("C_p".into(), fmt(self.big_c_p)),
            ("mu1_integral".into(), fmt(self.mu1_integral)),
            ("mu2_integral".into(), fmt(self.mu2_integral)),
            ("mu_integral_range".into(), "[0, ell]".into()),
            ("L_F1".into(), fmt(self.f1)),
            ("L_F".into(), fmt(self.f)),
            ("x1".into(), fmt(self.x1)),
        ];
        for (q, x) in self.x1q.iter().enumerate() {
            v.push((format!("x1_{q}"), fmt(*x)));
        }
        for (q, x) in self.x2q.iter().enumerate() {
            v.push((format!("x2_{}", q + 1), fmt(*x)));
        }
        for (q, x) in self.x3q.iter().enumerate() {
            v.push((format!("x3_{q}"), fmt(*x)));
        }
        for (q, x) in self.l_tilde.iter().enumerate() {
            v.push((format!("L_tilde_{}", q + 1), fmt(*x)));
        }
        v.extend([
            ("delta_initial".into(), fmt(self.delta_initial)),
            ("delta_impulse".into(), fmt(self.delta_impulse)),
            ("delta_flow".into(), fmt(self.delta_flow)),
            ("Delta".into(), fmt(self.delta)),
            ("L_F1_lt_1".into(), self.f1_pass.to_string()),
            ("L_F_lt_1".into(), self.f_pass.to_string()),
            ("a_tilde_lt_1".into(), self.a_tilde_pass.to_string()),
            (
                "growth_state_proportional".into(),
                self.growth_state_proportional.to_string(),
            ),
            ("pass".into(), self.passes().to_string()),
        ]);
        v
    }

    /// `key = value` lines.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let fields = self.fields();
        let width = fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in fields {
            writeln!(w, "{k:<width$} = {v}")?;
        }
        Ok(())
    }

    /// Header plus one CSV row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let fields = self.fields();
        let header: Vec<&str> = fields.iter().map(|(k, _)| k.as_str()).collect();
        let row: Vec<String> = fields.iter().map(|(_, v)| csv_escape(v)).collect();
        writeln!(w, "{}", header.join(","))?;
        writeln!(w, "{}", row.join(","))?;
        Ok(())
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') {
        format!("\"{s}\"")
    } else {
        s.to_string()
    }
}

/// All constants and the a priori bound `Δ`. Fails if some `ã_q >= 1`.
pub fn apriori_bound_delta(d: &HypothesisData) -> Result<ConstantsReport> {
    d.validate()?;
    if let Some((q, i)) = d.impulses.iter().enumerate().find(|(_, i)| i.a_tilde >= 1.0) {
        return Err(Error::BoundUndefined {
            interval: q + 1,
            value: i.a_tilde,
        });
    }
    let p = d.p;
    let six = d.split6();
    let sp = d.s.powf(p);
    let r = d.r();
    let x1 =
        six * sp * d.z0_moment + six * sp * d.t_q(1) * d.z1_moment + six * d.multi_term(d.s, d.t_q(1)) * d.z0_moment;
    let control = d.e_norm.powf(p) * d.u_norm.powf(p);
    let mu_l1 = d.mu1_integral + d.mu2_integral;
    let x1q: Vec<f64> = (0..=r).map(|q| six * d.drift_factor(d.t_q(q + 1)) * control).collect();
    let x3q: Vec<f64> = (0..=r)
        .map(|q| {
            let t = d.t_q(q + 1);
            six * (d.drift_factor(t) + d.noise_factor(t)) * mu_l1
        })
        .collect();
    let x2q: Vec<f64> = (1..=r)
        .map(|q| {
            let i = &d.impulses[q - 1];
            let t = d.t_q(q + 1);
            six * sp * i.a_tilde + six * t * sp * i.b_tilde + six * d.multi_term(d.s, t) * i.a_tilde
        })
        .collect();
    let l_tilde: Vec<f64> = (1..=r)
        .map(|q| {
            let t = d.t_q(q + 1);
            d.impulses
                .iter()
                .map(|k| six * sp * (k.a_tilde + t * k.b_tilde + d.multi_term(1.0, t) * k.a_tilde))
                .fold(0.0, f64::max)
        })
        .collect();
    let delta_initial = (x1 + x1q[0]) * x3q[0].exp();
    let delta_impulse = d
        .impulses
        .iter()
        .map(|i| i.a_tilde / (1.0 - i.a_tilde))
        .fold(0.0, f64::max);
    let delta_flow = (1..=r)
        .map(|q| (x2q[q - 1] + x1q[q]) * (1.0 + l_tilde[q - 1]).powi(q as i32) * x3q[q].exp())
        .fold(0.0, f64::max);
    let f1 = contraction_constant_f1(d);
    let f = growth_constant_f(d);
    Ok(ConstantsReport {
        p,
        s: d.s,
        small_c_p: small_c_p(p),
        big_c_p: big_c_p(p),
        mu1_integral: d.mu1_integral,
        mu2_integral: d.mu2_integral,
        f1,
        f,
        x1,
        x1q,
        x2q,
        x3q,
        l_tilde,
        delta_initial,
        delta_impulse,
        delta_flow,
        delta: delta_initial.max(delta_impulse).max(delta_flow),
        f1_pass: f1 < 1.0,
        f_pass: f < 1.0,
        a_tilde_pass: true,
        growth_state_proportional: d.growth_state_proportional,
    })
}

/// Like [`apriori_bound_delta`], but an undefined bound is reported
/// (`Δ = +∞`, `a_tilde_lt_1 = false`) instead of raised.
pub fn check_hypotheses(d: &HypothesisData) -> Result<ConstantsReport> {
    match apriori_bound_delta(d) {
        Err(Error::BoundUndefined { .. }) => {
            let capped = HypothesisData {
                impulses: d
                    .impulses
                    .iter()
                    .map(|i| ImpulseConstants { a_tilde: 0.0, ..*i })
                    .collect(),
                ..d.clone()
            };
            let mut rep = apriori_bound_delta(&capped)?;
            rep.f1 = contraction_constant_f1(d);
            rep.f = growth_constant_f(d);
            rep.f1_pass = rep.f1 < 1.0;
            rep.f_pass = rep.f < 1.0;
            rep.x2q.iter_mut().for_each(|x| *x = f64::INFINITY);
            rep.delta_impulse = f64::INFINITY;
            rep.delta = f64::INFINITY;
            rep.a_tilde_pass = false;
            Ok(rep)
        }
        other => other,
    }
}
