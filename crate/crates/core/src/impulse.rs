//! Non-instantaneous impulses: the partition
//! `0 = e_0 = t_0 < t_1 < e_1 < … < t_r < e_r < t_{r+1} = ℓ` and the maps
//! `ς_q(t, y) = c_q(t) y`, `φ_q(t, y) = d_q(t) y` active on `(t_q, e_q]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Scalar multiplier `c(t)` from the impulse registry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Multiplier {
    Zero,
    /// `scale · sin(t)`.
    Sin {
        scale: f64,
    },
    /// `scale · cos(t)`.
    Cos {
        scale: f64,
    },
    /// `value`.
    Constant {
        value: f64,
    },
}

/// Registry key plus parameters, as written in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplierSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl MultiplierSpec {
    pub fn new(name: &str, params: &[(&str, f64)]) -> Self {
        Self {
            name: name.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

pub const MULTIPLIER_KEYS: [&str; 4] = ["zero", "sin", "cos", "constant"];

impl Multiplier {
    pub fn resolve(spec: &MultiplierSpec) -> Result<Self> {
        let allowed: &[&str] = match spec.name.as_str() {
            "zero" => &[],
            "sin" | "cos" => &["scale"],
            "constant" => &["value"],
            other => {
                return Err(Error::UnknownKey {
                    registry: "impulse multiplier",
                    key: other.to_string(),
                })
            }
        };
        if let Some(k) = spec.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::UnknownKey {
                registry: "impulse multiplier parameter",
                key: format!("{}.{}", spec.name, k),
            });
        }
        let get = |k: &str, d: f64| -> Result<f64> {
            let v = spec.params.get(k).copied().unwrap_or(d);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(invalid("params", format!("{}.{k} must be finite", spec.name)))
            }
        };
        Ok(match spec.name.as_str() {
            "zero" => Multiplier::Zero,
            "sin" => Multiplier::Sin {
                scale: get("scale", 1.0)?,
            },
            "cos" => Multiplier::Cos {
                scale: get("scale", 1.0)?,
            },
            _ => Multiplier::Constant {
                value: get("value", 1.0)?,
            },
        })
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Multiplier::Zero => 0.0,
            Multiplier::Sin { scale } => scale * t.sin(),
            Multiplier::Cos { scale } => scale * t.cos(),
            Multiplier::Constant { value } => value,
        }
    }

    /// `(sup |c|)^p` over `(a, b]` from 1000 samples, inflated by 1%.
    pub fn lipschitz_constant(&self, a: f64, b: f64, p: f64) -> f64 {
        let n = 1000;
        let sup = (1..=n)
            .map(|i| self.eval(a + (b - a) * i as f64 / n as f64).abs())
            .fold(0.0, f64::max);
        1.01 * sup.powf(p)
    }
}

/// One impulse interval as written in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseSpec {
    /// Start `t_q` (the state is frozen from `z(t_q)`).
    pub t: f64,
    /// End `e_q`.
    pub e: f64,
    pub varsigma: MultiplierSpec,
    pub varphi: MultiplierSpec,
}

/// A resolved impulse with its Lipschitz/growth constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Impulse {
    pub t: f64,
    pub e: f64,
    pub varsigma: Multiplier,
    pub varphi: Multiplier,
    pub a: f64,
    pub b: f64,
    pub a_tilde: f64,
    pub b_tilde: f64,
}

/// Where a time falls in the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Interval {
    /// `(e_q, t_{q+1}]` (`[0, t_1]` for `q = 0`).
    Flow(usize),
    /// `(t_q, e_q]`, `q >= 1`.
    Impulse(usize),
}

impl Interval {
    pub fn tag(&self) -> String {
        match self {
            Interval::Flow(q) => format!("flow{q}"),
            Interval::Impulse(q) => format!("impulse{q}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseSchedule {
    ell: f64,
    impulses: Vec<Impulse>,
}

impl ImpulseSchedule {
    /// No impulses on `[0, ℓ]`.
    pub fn empty(ell: f64) -> Result<Self> {
        Self::new(ell, &[], 2.0)
    }

    /// Validates the strict interleaving and computes the constants for moment order `p`.
    pub fn new(ell: f64, specs: &[ImpulseSpec], p: f64) -> Result<Self> {
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(invalid("ell", format!("horizon must be positive, got {ell}")));
        }
        let mut prev = 0.0;
        let mut impulses = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if !(s.t > prev) {
                return Err(invalid("t", format!("impulse {i}: t = {} must exceed {prev}", s.t)));
            }
            if !(s.e > s.t) {
                return Err(invalid(
                    "e",
                    format!("impulse {i}: e = {} must exceed t = {}", s.e, s.t),
                ));
            }
            if !(s.e < ell) {
                return Err(invalid(
                    "e",
                    format!("impulse {i}: e = {} must be below ell = {ell}", s.e),
                ));
            }
            let varsigma = Multiplier::resolve(&s.varsigma)?;
            let varphi = Multiplier::resolve(&s.varphi)?;
            let a = varsigma.lipschitz_constant(s.t, s.e, p);
            let b = varphi.lipschitz_constant(s.t, s.e, p);
            impulses.push(Impulse {
                t: s.t,
                e: s.e,
                varsigma,
                varphi,
                a,
                b,
                // linear maps: ‖c y‖^p <= a ‖y‖^p <= a (1 + ‖y‖^p)
                a_tilde: a,
                b_tilde: b,
            });
            prev = s.e;
        }
        Ok(Self { ell, impulses })
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    /// Number of impulses `r`.
    pub fn r(&self) -> usize {
        self.impulses.len()
    }

    /// Impulse `q` (1-based).
    pub fn impulse(&self, q: usize) -> &Impulse {
        &self.impulses[q - 1]
    }

    pub fn impulses(&self) -> &[Impulse] {
        &self.impulses
    }

    /// `t_q` for `q = 0..=r+1` (`t_0 = 0`, `t_{r+1} = ℓ`).
    pub fn t_q(&self, q: usize) -> f64 {
        match q {
            0 => 0.0,
            q if q <= self.r() => self.impulses[q - 1].t,
            _ => self.ell,
        }
    }

    /// `e_q` for `q = 0..=r` (`e_0 = 0`).
    pub fn e_q(&self, q: usize) -> f64 {
        if q == 0 {
            0.0
        } else {
            self.impulses[q - 1].e
        }
    }

    /// Interval containing `t`.
    pub fn locate(&self, t: f64) -> Result<Interval> {
        if !(t >= 0.0 && t <= self.ell) {
            return Err(Error::OutOfRange { t, ell: self.ell });
        }
        for (i, imp) in self.impulses.iter().enumerate() {
            if t <= imp.t {
                return Ok(Interval::Flow(i));
            }
            if t <= imp.e {
                return Ok(Interval::Impulse(i + 1));
            }
        }
        Ok(Interval::Flow(self.r()))
    }

    /// `(ς_q(t, y), φ_q(t, y))` for `t ∈ (t_q, e_q]`.
    pub fn impulse_state(&self, q: usize, t: f64, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if q == 0 || q > self.r() {
            return Err(invalid("q", format!("no impulse {q}")));
        }
        let imp = &self.impulses[q - 1];
        let (c, d) = (imp.varsigma.eval(t), imp.varphi.eval(t));
        Ok((y.iter().map(|v| c * v).collect(), y.iter().map(|v| d * v).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example61(p: f64) -> ImpulseSchedule {
        ImpulseSchedule::new(
            1.0,
            &[ImpulseSpec {
                t: 0.2,
                e: 0.9,
                varsigma: MultiplierSpec::new("sin", &[("scale", 0.25)]),
                varphi: MultiplierSpec::new("sin", &[("scale", 1.0 / 3.0)]),
            }],
            p,
        )
        .unwrap()
    }

    #[test]
    fn locate_example() {
        let s = example61(2.0);
        assert_eq!(s.locate(0.5).unwrap(), Interval::Impulse(1));
        assert_eq!(s.locate(0.1).unwrap(), Interval::Flow(0));
        assert_eq!(s.locate(0.9).unwrap(), Interval::Impulse(1));
        assert_eq!(s.locate(0.2).unwrap(), Interval::Flow(0));
        assert_eq!(s.locate(0.0).unwrap(), Interval::Flow(0));
        assert_eq!(s.locate(1.0).unwrap(), Interval::Flow(1));
        assert!(s.locate(1.1).is_err());
        assert!(s.locate(-0.1).is_err());
    }

    #[test]
    fn impulse_values() {
        let s = example61(2.0);
        let (z, zp) = s.impulse_state(1, 0.9, &[1.0, 0.0, 0.0]).unwrap();
        assert!((z[0] - 0.25 * 0.9f64.sin()).abs() < 1e-15);
        assert!((z[0] - 0.195_831_727_406_870_9).abs() < 1e-15);
        assert!((zp[0] - 0.9f64.sin() / 3.0).abs() < 1e-15);
        let (z, zp) = s.impulse_state(1, 0.5, &[0.0; 3]).unwrap();
        assert!(z.iter().chain(&zp).all(|v| *v == 0.0));
    }

    #[test]
    fn constants_cover_sup() {
        let s = example61(2.0);
        let imp = s.impulse(1);
        let sup = 0.25 * 0.9f64.sin();
        assert!((imp.a - 1.01 * sup * sup).abs() < 1e-12);
        assert_eq!(imp.a_tilde, imp.a);
    }

    #[test]
    fn rejects_bad_partitions() {
        let spec = |t: f64, e: f64| ImpulseSpec {
            t,
            e,
            varsigma: MultiplierSpec::new("zero", &[]),
            varphi: MultiplierSpec::new("zero", &[]),
        };
        assert!(ImpulseSchedule::new(1.0, &[spec(0.5, 0.4)], 2.0).is_err());
        assert!(ImpulseSchedule::new(1.0, &[spec(0.2, 1.0)], 2.0).is_err());
        assert!(ImpulseSchedule::new(1.0, &[spec(0.2, 0.4), spec(0.3, 0.6)], 2.0).is_err());
        assert!(ImpulseSchedule::new(1.0, &[spec(0.2, 0.4), spec(0.5, 0.6)], 2.0).is_ok());
        let bad = ImpulseSpec {
            varsigma: MultiplierSpec::new("tan", &[]),
            ..spec(0.2, 0.4)
        };
        assert!(matches!(
            ImpulseSchedule::new(1.0, &[bad], 2.0),
            Err(Error::UnknownKey { .. })
        ));
    }
}
