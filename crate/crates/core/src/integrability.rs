//! Well-definedness: `L^alpha` norms of increments, the `C^q` norm of the
//! ring kernel, the sufficient-condition checklist and the explicit bound for
//! the harmonizable cosine kernel.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::kernel::{AtomKernel, AtomSpec, KernelSpec, StableParams};
use crate::line::{integrate_line, Combination, LineConfig, LineResult, Status};
use crate::profile::Profile;
use crate::quadrature::{adaptive, gauss_legendre, Estimate};
use crate::scalar::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Bisections allowed in each adaptive integral.
    pub max_subdivisions: usize,
    /// Distance from the cut points (relative to their spread) beyond which
    /// the power-law tail model replaces integration.
    pub u_tail_cutoff: f64,
    /// Closest relative approach to a cut point before the tail model
    /// takes over on that side.
    pub singularity_padding: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 1e-13,
            max_subdivisions: 50,
            u_tail_cutoff: 1e8,
            singularity_padding: 1e-250,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::invalid("rel_tol/abs_tol", "tolerances must be positive"));
        }
        if !(self.u_tail_cutoff > 1.0 && self.singularity_padding > 0.0 && self.singularity_padding < 1.0) {
            return Err(Error::invalid("u_tail_cutoff/singularity_padding", "out of range"));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::invalid("max_subdivisions", "must be positive"));
        }
        Ok(())
    }

    /// Settings for the inner line integrals, a decade tighter than the outer ones.
    pub fn line(&self) -> LineConfig {
        LineConfig {
            rel_tol: 0.1 * self.rel_tol,
            abs_tol: 0.1 * self.abs_tol,
            max_splits: self.max_subdivisions,
            u_max: self.u_tail_cutoff,
            pad: self.singularity_padding,
        }
    }
}

/// A nonnegative quantity obtained by quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    /// `+inf` when divergent.
    pub value: f64,
    pub converged: bool,
    pub error_estimate: f64,
    pub status: Status,
    /// Contributions of the pieces the integral was split into.
    pub pieces: Vec<f64>,
}

impl Serialize for NormReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("NormReport", 3)?;
        if self.value.is_infinite() {
            st.serialize_field("value", "+inf")?;
        } else {
            st.serialize_field("value", &self.value)?;
        }
        st.serialize_field("converged", &self.converged)?;
        st.serialize_field("error_estimate", &self.error_estimate)?;
        st.end()
    }
}

impl NormReport {
    pub(crate) fn from_parts(value: f64, error: f64, status: Status, pieces: Vec<f64>) -> Self {
        let status = if status == Status::Divergent || value.is_infinite() {
            Status::Divergent
        } else {
            status
        };
        let value = if status == Status::Divergent {
            f64::INFINITY
        } else {
            value
        };
        Self {
            value,
            converged: status == Status::Converged,
            error_estimate: error,
            status,
            pieces,
        }
    }

    pub fn zero() -> Self {
        Self::from_parts(0.0, 0.0, Status::Converged, Vec::new())
    }

    /// `value^(1/p)`, propagating the error to first order.
    pub fn root(mut self, p: f64) -> Self {
        if self.value.is_finite() && self.value > 0.0 {
            let r = self.value.powf(1.0 / p);
            self.error_estimate = r * self.error_estimate / (p * self.value);
            self.value = r;
        }
        self
    }
}

/// Worst of two statuses.
pub(crate) fn worse(a: Status, b: Status) -> Status {
    use Status::*;
    match (a, b) {
        (Divergent, _) | (_, Divergent) => Divergent,
        (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
        _ => Converged,
    }
}

/// Accumulates the outcomes of many inner line integrals.
#[derive(Debug, Clone)]
pub(crate) struct Tally {
    pub status: Status,
    pub inner_err: f64,
}

impl Tally {
    pub fn new() -> Self {
        Self {
            status: Status::Converged,
            inner_err: 0.0,
        }
    }

    pub fn take(&mut self, r: &LineResult, weight: f64) -> f64 {
        self.status = worse(self.status, r.status);
        self.inner_err += weight.abs() * r.error;
        r.value
    }
}

/// Adaptive GK15 of `v -> f(v)` over `[a, b]` where every evaluation is itself
/// a line integral. Inner errors are integrated along with the values.
pub(crate) fn outer_adaptive<F>(a: f64, b: f64, cfg: &QuadratureConfig, mut f: F) -> (Estimate, Status)
where
    F: FnMut(f64) -> LineResult,
{
    let mut tally = Tally::new();
    let mut errs = Vec::new();
    let (est, ok) = {
        let mut g = |v: f64| {
            let r = f(v);
            errs.push(r.error);
            tally.take(&r, 1.0)
        };
        // half the budget is left for the inner errors; kinks in the outer
        // integrand (colliding jumps of different terms) need extra splits
        adaptive(
            &mut g,
            a,
            b,
            0.5 * cfg.abs_tol,
            0.5 * cfg.rel_tol,
            4 * cfg.max_subdivisions,
        )
    };
    if tally.status == Status::Divergent || !est.value.is_finite() {
        return (
            Estimate {
                value: f64::INFINITY,
                error: 0.0,
            },
            Status::Divergent,
        );
    }
    // inner errors are at most the sup over the evaluations times the length
    let inner = errs.iter().copied().fold(0.0, f64::max) * (b - a).abs();
    let err = est.error + inner;
    let mut status = tally.status;
    if !ok || err > cfg.abs_tol.max(cfg.rel_tol * est.value.abs()) {
        status = worse(status, Status::Inconclusive);
    }
    (
        Estimate {
            value: est.value,
            error: err,
        },
        status,
    )
}

/// `(sum_atoms weight int_0^q int_R |G_t(v, u)|^alpha du dv)^(1/alpha)`, the
/// scale parameter of `X(t)`.
pub fn lalpha_increment_norm(spec: &KernelSpec, t: f64, cfg: &QuadratureConfig) -> Result<NormReport> {
    cfg.validate()?;
    if !t.is_finite() {
        return Err(Error::domain("t must be finite"));
    }
    if t == 0.0 {
        return Ok(NormReport::zero());
    }
    let r = crate::oracle::char_exponent(spec, &[t], &[1.0], cfg)?;
    Ok(r.root(spec.params.alpha()))
}

const MAX_PANEL_DEPTH: u32 = 4;

/// The `C^q` norm of the ring kernel:
/// `(sum_atoms weight int_1^{e^q} h^{-alpha H - 1} int_R |K(u+h) - K(u)|^alpha du dh)^(1/alpha)`.
///
/// The `h` integral uses 64-point Gauss–Legendre panels on dyadic pieces of
/// `[1, e^q]`. Requires unit speed in every atom.
pub fn cq_norm(spec: &KernelSpec, cfg: &QuadratureConfig) -> Result<NormReport> {
    cfg.validate()?;
    for (i, a) in spec.atoms.iter().enumerate() {
        if a.s != 1.0 {
            return Err(Error::domain(format!(
                "atom {i} has speed s = {}; normalize the speed before computing the C^q norm",
                a.s
            )));
        }
    }
    let alpha = spec.params.alpha();
    let hexp = -alpha * spec.params.H() - 1.0;
    let rule = gauss_legendre(64);
    let coarse_rule = gauss_legendre(32);
    let line = cfg.line();
    let mut total = CompensatedSum::new();
    let mut tally = Tally::new();
    let mut pieces = Vec::new();
    let mut panel_err = 0.0;
    for atom in spec.evaluators() {
        if atom.is_zero() {
            pieces.push(0.0);
            continue;
        }
        let top = atom.q.exp();
        let mut edges = vec![1.0];
        while edges[edges.len() - 1] * 2.0 < top {
            let next = edges[edges.len() - 1] * 2.0;
            edges.push(next);
        }
        edges.push(top);
        let mut atom_sum = CompensatedSum::new();
        // each dyadic panel is bisected while the 64- and 32-point rules disagree
        let mut stack: Vec<(f64, f64, u32)> = edges.windows(2).rev().map(|w| (w[0], w[1], 0)).collect();
        while let Some((lo, hi, depth)) = stack.pop() {
            let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            let line_at = |h: f64| {
                let comb = Combination::increments(&atom, 0.0, &[h], &[1.0]);
                integrate_line(&comb, alpha, &line)
            };
            let mut fine = CompensatedSum::new();
            for (x, wt) in rule.0.iter().zip(&rule.1) {
                let h = c + r * x;
                let k = wt * r * h.powf(hexp);
                fine.add(k * tally.take(&line_at(h), k));
            }
            let mut coarse = 0.0;
            for (x, wt) in coarse_rule.0.iter().zip(&coarse_rule.1) {
                let h = c + r * x;
                coarse += wt * r * h.powf(hexp) * line_at(h).value;
            }
            if tally.status == Status::Divergent {
                break;
            }
            let fine = fine.value();
            let diff = (fine - coarse).abs();
            if diff > 0.25 * cfg.rel_tol * fine.abs() && diff > cfg.abs_tol && depth < MAX_PANEL_DEPTH {
                stack.push((c, hi, depth + 1));
                stack.push((lo, c, depth + 1));
                continue;
            }
            panel_err += atom.weight * diff;
            atom_sum.add(fine);
        }
        if tally.status == Status::Divergent {
            break;
        }
        let v = atom.weight * atom_sum.value();
        pieces.push(v);
        total.add(v);
    }
    let value = total.value();
    let err = panel_err + tally.inner_err;
    let mut status = tally.status;
    if status == Status::Converged && err > cfg.abs_tol.max(cfg.rel_tol * value) {
        status = Status::Inconclusive;
    }
    Ok(NormReport::from_parts(value, err, status, pieces).root(alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Pass,
    Fail,
    NotRequired,
}

impl Check {
    fn of(ok: bool) -> Self {
        if ok {
            Check::Pass
        } else {
            Check::Fail
        }
    }
}

/// Outcome of the sufficient-condition checklist for one atom. A failed
/// checklist does not show that the kernel is ill-defined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficientReport {
    /// Bounded profiles.
    pub s1: Check,
    /// Absolutely continuous profiles with bounded derivatives.
    pub s2: Check,
    /// `F_i(0) = b1 F_i(q-)`, needed only when `kappa >= 0`.
    pub s3: Check,
    pub sufficient: bool,
    pub sup_f: f64,
    pub sup_df: Option<f64>,
}

pub fn sufficient_conditions(atom: &AtomSpec, params: &StableParams) -> SufficientReport {
    let q = atom.q;
    let profs: [&Profile; 2] = [&atom.f1, &atom.f2];
    let sup_f = profs.iter().map(|p| p.sup_abs(q)).fold(0.0, f64::max);
    let derivs: Vec<Option<f64>> = profs.iter().map(|p| p.ess_sup_derivative(q)).collect();
    let sup_df = if derivs.iter().all(|d| d.is_some()) {
        Some(derivs.iter().map(|d| d.unwrap() * atom.s.abs()).fold(0.0, f64::max))
    } else {
        None
    };
    let s1 = Check::of(sup_f.is_finite());
    let s2 = Check::of(sup_df.is_some_and(f64::is_finite));
    let b1 = atom.b1 as f64;
    let s3 = if params.kappa() >= 0.0 {
        Check::of(profs.iter().all(|p| {
            let (a, b) = (p.at_zero(q), b1 * p.left_limit_at_q(q));
            (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
        }))
    } else {
        Check::NotRequired
    };
    let sufficient = s1 == Check::Pass && s2 == Check::Pass && s3 != Check::Fail;
    SufficientReport {
        s1,
        s2,
        s3,
        sufficient,
        sup_f,
        sup_df,
    }
}

/// `int_0^inf f(u) du` through `u = e^y`, in unit shells away from `y = 0`
/// with a geometric tail on each end.
fn half_line<F: FnMut(f64) -> f64>(mut f: F, cfg: &QuadratureConfig) -> (f64, f64, Status) {
    let mut g = |y: f64| {
        let u = y.exp();
        let v = f(u);
        if v == 0.0 {
            0.0
        } else {
            v * u
        }
    };
    let mut total = CompensatedSum::new();
    let mut err = 0.0;
    let mut status = Status::Converged;
    for dir in [-1.0, 1.0] {
        let mut hist: Vec<f64> = Vec::new();
        for k in 0..400 {
            let (a, b) = if dir < 0.0 {
                (-(k as f64) - 1.0, -(k as f64))
            } else {
                (k as f64, k as f64 + 1.0)
            };
            let (e, _) = adaptive(
                &mut g,
                a,
                b,
                0.01 * cfg.abs_tol,
                0.01 * cfg.rel_tol,
                cfg.max_subdivisions,
            );
            err += e.error;
            total.add(e.value);
            hist.push(e.value);
            let n = hist.len();
            if n >= 3 {
                let r = hist[n - 1] / hist[n - 2];
                let rp = hist[n - 2] / hist[n - 3];
                if hist[n - 1] == 0.0 && hist[n - 2] == 0.0 {
                    break;
                }
                if r < 1.0 && rp < 1.0 {
                    let tail = hist[n - 1] * r / (1.0 - r);
                    if tail < 0.01 * cfg.rel_tol * total.value() {
                        total.add(tail);
                        err += tail * (2.0 * (r - rp).abs() / (1.0 - r) + 1e-9);
                        break;
                    }
                }
            }
            if k == 399 {
                status = Status::Inconclusive;
            }
        }
    }
    (total.value(), err, status)
}

/// Discretised spectral measure for the harmonizable cosine kernel.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, Serialize)]
pub struct LambdaAtom {
    pub z: f64,
    pub weight: f64,
}

/// Explicit upper bound on `int |G_1|^alpha` for the harmonizable cosine kernel:
/// `2^alpha 2pi (sum lambda) I1 + 2^alpha 2pi (sum |z|^alpha lambda) I2`, with
/// `I1 = int |(1+u)_+^kappa - u_+^kappa|^alpha du` and
/// `I2 = int_0^inf u^{kappa alpha} |ln(1+u) - ln u|^alpha du`.
/// The factor `2pi` is the length of the `v` range.
pub fn harmonizable_bound(lambda: &[LambdaAtom], params: &StableParams, cfg: &QuadratureConfig) -> Result<NormReport> {
    cfg.validate()?;
    let alpha = params.alpha();
    let kappa = params.kappa();
    let mut mass = 0.0;
    let mut moment = 0.0;
    for (i, l) in lambda.iter().enumerate() {
        if !(l.weight >= 0.0 && l.weight.is_finite()) {
            return Err(Error::invalid(
                format!("lambda[{i}].weight"),
                "must be nonnegative and finite",
            ));
        }
        if !l.z.is_finite() {
            return Err(Error::invalid(format!("lambda[{i}].z"), "must be finite"));
        }
        mass += l.weight;
        moment += l.z.abs().powf(alpha) * l.weight;
    }
    if !(mass.is_finite() && moment.is_finite()) {
        return Err(Error::invalid("lambda", "mass and alpha-moment must be finite"));
    }
    if mass == 0.0 {
        return Ok(NormReport::zero());
    }
    let unit = AtomKernel::new(&AtomSpec::simple(1.0, Profile::Constant { value: 1.0 }), params);
    let i1 = integrate_line(&Combination::increments(&unit, 0.0, &[1.0], &[1.0]), alpha, &cfg.line());
    let (i2, e2, s2) = half_line(
        |u| {
            let pw = if kappa == 0.0 { 1.0 } else { u.powf(kappa * alpha) };
            pw * (1.0 + 1.0 / u).ln().powf(alpha)
        },
        cfg,
    );
    let c = 2f64.powf(alpha) * std::f64::consts::TAU;
    let value = c * (mass * i1.value + moment * i2);
    let err = c * (mass * i1.error + moment * e2);
    let status = worse(i1.status, s2);
    Ok(NormReport::from_parts(
        value,
        err,
        status,
        vec![c * mass * i1.value, c * moment * i2],
    ))
}
