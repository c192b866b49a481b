//! Profile functions on one period `[0, q)`.
//!
//! A profile is stored without its period; the owning atom supplies `q`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "lowercase", deny_unknown_fields)]
pub enum Profile {
    /// `slope * x`.
    Linear {
        #[serde(default = "one")]
        slope: f64,
    },
    /// Rises with slope `amplitude` to `q / 2`, then falls back to 0 at `q`.
    Tent {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude * 1{x < half}`.
    Indicator {
        half: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude * cos(frequency * x + phase)`.
    Cosine {
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Constant {
        value: f64,
    },
    /// Piecewise linear through `(x, y)` knots. The first knot sits at 0 and the
    /// last at `q`; a repeated abscissa encodes a jump (right-continuous).
    Tabulated {
        knots: Vec<[f64; 2]>,
    },
}

fn one() -> f64 {
    1.0
}

impl Profile {
    pub fn zero() -> Self {
        Profile::Constant { value: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Profile::Linear { slope } => *slope == 0.0,
            Profile::Tent { amplitude } | Profile::Indicator { amplitude, .. } | Profile::Cosine { amplitude, .. } => {
                *amplitude == 0.0
            }
            Profile::Constant { value } => *value == 0.0,
            Profile::Tabulated { knots } => knots.iter().all(|k| k[1] == 0.0),
        }
    }

    pub fn validate(&self, q: f64, field: &str) -> Result<()> {
        let finite = |name: &str, x: f64| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{field}.params.{name}"), "must be finite"))
            }
        };
        match self {
            Profile::Linear { slope } => finite("slope", *slope),
            Profile::Tent { amplitude } => finite("amplitude", *amplitude),
            Profile::Indicator { half, amplitude } => {
                finite("amplitude", *amplitude)?;
                if !(*half > 0.0 && *half < q) {
                    return Err(Error::invalid(
                        format!("{field}.params.half"),
                        format!("must lie in (0, q) = (0, {q})"),
                    ));
                }
                Ok(())
            }
            Profile::Cosine {
                frequency,
                phase,
                amplitude,
            } => {
                finite("frequency", *frequency)?;
                finite("phase", *phase)?;
                finite("amplitude", *amplitude)
            }
            Profile::Constant { value } => finite("value", *value),
            Profile::Tabulated { knots } => {
                let path = format!("{field}.params.knots");
                if knots.len() < 2 {
                    return Err(Error::invalid(path, "need at least two knots"));
                }
                if knots.iter().any(|k| !k[0].is_finite() || !k[1].is_finite()) {
                    return Err(Error::invalid(path, "knots must be finite"));
                }
                if knots[0][0] != 0.0 {
                    return Err(Error::invalid(path, "first knot must sit at 0"));
                }
                let last = knots[knots.len() - 1][0];
                if (last - q).abs() > 1e-12 * q.max(1.0) {
                    return Err(Error::invalid(path, format!("last knot must sit at q = {q}")));
                }
                for w in knots.windows(2) {
                    if w[1][0] < w[0][0] {
                        return Err(Error::invalid(path, "abscissae must be non-decreasing"));
                    }
                }
                for w in knots.windows(3) {
                    if w[0][0] == w[2][0] {
                        return Err(Error::invalid(path, "at most two knots may share an abscissa"));
                    }
                }
                Ok(())
            }
        }
    }

    /// Value at `x`, which must already be reduced into `[0, q)`.
    pub fn value(&self, x: f64, q: f64) -> Result<f64> {
        if !(0.0..q).contains(&x) {
            return Err(Error::domain(format!("profile argument {x} outside [0, {q})")));
        }
        Ok(self.at(x, q))
    }

    /// Unchecked evaluation; `x` is assumed to lie in `[0, q)`.
    #[inline]
    pub fn at(&self, x: f64, q: f64) -> f64 {
        match self {
            Profile::Linear { slope } => slope * x,
            Profile::Tent { amplitude } => {
                if x < 0.5 * q {
                    amplitude * x
                } else {
                    amplitude * (q - x)
                }
            }
            Profile::Indicator { half, amplitude } => {
                if x < *half {
                    *amplitude
                } else {
                    0.0
                }
            }
            Profile::Cosine {
                frequency,
                phase,
                amplitude,
            } => amplitude * frequency.mul_add(x, *phase).cos(),
            Profile::Constant { value } => *value,
            Profile::Tabulated { knots } => tabulated_at(knots, x),
        }
    }

    /// `F(0)`.
    pub fn at_zero(&self, q: f64) -> f64 {
        self.at(0.0, q)
    }

    /// The left limit `F(q-)`, exact for every family.
    pub fn left_limit_at_q(&self, q: f64) -> f64 {
        match self {
            Profile::Linear { slope } => slope * q,
            Profile::Tent { .. } => 0.0,
            Profile::Indicator { .. } => 0.0,
            Profile::Cosine {
                frequency,
                phase,
                amplitude,
            } => amplitude * frequency.mul_add(q, *phase).cos(),
            Profile::Constant { value } => *value,
            Profile::Tabulated { knots } => knots[knots.len() - 1][1],
        }
    }

    /// `sup |F|` on `[0, q)`.
    pub fn sup_abs(&self, q: f64) -> f64 {
        match self {
            Profile::Linear { slope } => slope.abs() * q,
            Profile::Tent { amplitude } => amplitude.abs() * 0.5 * q,
            Profile::Indicator { amplitude, .. } => amplitude.abs(),
            Profile::Cosine {
                frequency,
                phase,
                amplitude,
            } => {
                // cos reaches +-1 inside the window once it spans a critical point
                let (lo, hi) = ordered(*phase, frequency.mul_add(q, *phase));
                let k = (lo / std::f64::consts::PI).ceil();
                if k * std::f64::consts::PI < hi {
                    amplitude.abs()
                } else {
                    amplitude.abs() * lo.cos().abs().max(hi.cos().abs())
                }
            }
            Profile::Constant { value } => value.abs(),
            Profile::Tabulated { knots } => knots.iter().map(|k| k[1].abs()).fold(0.0, f64::max),
        }
    }

    /// Essential sup of `|F'|` when `F` is absolutely continuous on `[0, q)`,
    /// `None` when it is not. Tabulated profiles use difference quotients.
    pub fn ess_sup_derivative(&self, q: f64) -> Option<f64> {
        match self {
            Profile::Linear { slope } => Some(slope.abs()),
            Profile::Tent { amplitude } => Some(amplitude.abs()),
            Profile::Indicator { amplitude, .. } => (*amplitude == 0.0).then_some(0.0),
            Profile::Cosine {
                frequency,
                phase,
                amplitude,
            } => {
                let (lo, hi) = ordered(*phase, frequency.mul_add(q, *phase));
                let k = ((lo - std::f64::consts::FRAC_PI_2) / std::f64::consts::PI).ceil();
                let s = if std::f64::consts::FRAC_PI_2 + k * std::f64::consts::PI < hi {
                    1.0
                } else {
                    lo.sin().abs().max(hi.sin().abs())
                };
                Some((amplitude * frequency).abs() * s)
            }
            Profile::Constant { .. } => Some(0.0),
            Profile::Tabulated { knots } => {
                let mut best: f64 = 0.0;
                for w in knots.windows(2) {
                    let dx = w[1][0] - w[0][0];
                    if dx == 0.0 {
                        if w[1][1] != w[0][1] {
                            return None;
                        }
                        continue;
                    }
                    best = best.max(((w[1][1] - w[0][1]) / dx).abs());
                }
                Some(best)
            }
        }
    }

    /// Points of `(0, q)` where the profile is not smooth.
    pub fn breakpoints(&self, q: f64) -> Vec<f64> {
        match self {
            Profile::Tent { .. } => vec![0.5 * q],
            Profile::Indicator { half, .. } => vec![*half],
            Profile::Tabulated { knots } => {
                let mut out: Vec<f64> = knots.iter().map(|k| k[0]).filter(|&x| x > 0.0 && x < q).collect();
                out.dedup();
                out
            }
            _ => Vec::new(),
        }
    }

    /// The profile `y -> F(lambda * y)` on the period `q / lambda`, `lambda > 0`.
    pub fn rescaled(&self, lambda: f64) -> Profile {
        match self {
            Profile::Linear { slope } => Profile::Linear { slope: slope * lambda },
            Profile::Tent { amplitude } => Profile::Tent {
                amplitude: amplitude * lambda,
            },
            Profile::Indicator { half, amplitude } => Profile::Indicator {
                half: half / lambda,
                amplitude: *amplitude,
            },
            Profile::Cosine {
                frequency,
                phase,
                amplitude,
            } => Profile::Cosine {
                frequency: frequency * lambda,
                phase: *phase,
                amplitude: *amplitude,
            },
            Profile::Constant { value } => Profile::Constant { value: *value },
            Profile::Tabulated { knots } => Profile::Tabulated {
                knots: knots.iter().map(|k| [k[0] / lambda, k[1]]).collect(),
            },
        }
    }

    /// The profile `y -> F(q - lambda * y)` on the period `q / lambda`.
    ///
    /// Families not closed under reflection fall back to knots; the result
    /// agrees with the reflection away from finitely many points.
    pub fn reflected(&self, q: f64, lambda: f64) -> Profile {
        let p = q / lambda;
        match self {
            Profile::Tent { amplitude } => Profile::Tent {
                amplitude: amplitude * lambda,
            },
            Profile::Cosine {
                frequency,
                phase,
                amplitude,
            } => Profile::Cosine {
                frequency: frequency * lambda,
                phase: -frequency.mul_add(q, *phase),
                amplitude: *amplitude,
            },
            Profile::Constant { value } => Profile::Constant { value: *value },
            Profile::Linear { slope } => Profile::Tabulated {
                knots: vec![[0.0, slope * q], [p, 0.0]],
            },
            Profile::Indicator { half, amplitude } => {
                let cut = (q - half) / lambda;
                Profile::Tabulated {
                    knots: vec![[0.0, 0.0], [cut, 0.0], [cut, *amplitude], [p, *amplitude]],
                }
            }
            Profile::Tabulated { knots } => {
                let mut out: Vec<[f64; 2]> = knots.iter().rev().map(|k| [(q - k[0]) / lambda, k[1]]).collect();
                out[0][0] = 0.0;
                let n = out.len();
                out[n - 1][0] = p;
                Profile::Tabulated { knots: out }
            }
        }
    }
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn tabulated_at(knots: &[[f64; 2]], x: f64) -> f64 {
    // first index whose abscissa is > x; right-continuity at repeated knots
    let idx = knots.partition_point(|k| k[0] <= x);
    if idx == 0 {
        return knots[0][1];
    }
    if idx >= knots.len() {
        return knots[knots.len() - 1][1];
    }
    let (a, b) = (knots[idx - 1], knots[idx]);
    let dx = b[0] - a[0];
    if dx == 0.0 {
        return b[1];
    }
    a[1] + (b[1] - a[1]) * (x - a[0]) / dx
}
