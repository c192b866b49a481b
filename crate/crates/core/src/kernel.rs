//! Kernel specifications and pointwise evaluation of `G`, `K` and `G_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::Profile;
use crate::scalar::split;

/// `|kappa|` below this is treated as exactly zero, so parameter pairs such as
/// `alpha = 1.6, H = 0.625` select the logarithmic branch despite rounding.
pub const KAPPA_SNAP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams {
    alpha: f64,
    h: f64,
}

impl StableParams {
    pub fn new(alpha: f64, h: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::invalid("alpha", format!("must lie in (0, 2), got {alpha}")));
        }
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::invalid("H", format!("must lie in (0, 1), got {h}")));
        }
        Ok(Self { alpha, h })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[allow(non_snake_case)]
    pub fn H(&self) -> f64 {
        self.h
    }

    /// `H - 1/alpha`, recomputed on every call.
    pub fn kappa(&self) -> f64 {
        let k = self.h - 1.0 / self.alpha;
        if k.abs() < KAPPA_SNAP {
            0.0
        } else {
            k
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub weight: f64,
    pub q: f64,
    pub b1: i8,
    pub s: f64,
    #[serde(rename = "F1")]
    pub f1: Profile,
    #[serde(rename = "F2")]
    pub f2: Profile,
    #[serde(rename = "F3", default)]
    pub f3: f64,
}

impl AtomSpec {
    /// Unit-weight atom with `b1 = 1`, `s = 1`, `F2 = 0`, `F3 = 0`.
    pub fn simple(q: f64, f1: Profile) -> Self {
        Self {
            weight: 1.0,
            q,
            b1: 1,
            s: 1.0,
            f1,
            f2: Profile::zero(),
            f3: 0.0,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |f: &str, why: &str| Err(Error::invalid(format!("{path}.{f}"), why));
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return bad("weight", "must be positive and finite");
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return bad("q", "must be positive and finite");
        }
        if self.b1 != 1 && self.b1 != -1 {
            return bad("b1", "must be 1 or -1");
        }
        if self.s == 0.0 || !self.s.is_finite() {
            return bad("s", "must be nonzero and finite");
        }
        if !self.f3.is_finite() {
            return bad("F3", "must be finite");
        }
        self.f1.validate(self.q, &format!("{path}.F1"))?;
        self.f2.validate(self.q, &format!("{path}.F2"))
    }

    /// Whether the `F3 ln|u|` term is switched on.
    pub fn log_active(&self, params: &StableParams) -> bool {
        self.b1 == 1 && params.kappa() == 0.0 && self.f3 != 0.0
    }

    /// Length of one return period of the flow in `ln c`, i.e. `q / |s|`.
    pub fn log_period(&self) -> f64 {
        self.q / self.s.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpecDoc", into = "KernelSpecDoc")]
pub struct KernelSpec {
    pub label: String,
    pub params: StableParams,
    pub atoms: Vec<AtomSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSpecDoc {
    label: String,
    alpha: f64,
    #[serde(rename = "H")]
    h: f64,
    atoms: Vec<AtomSpec>,
}

impl TryFrom<KernelSpecDoc> for KernelSpec {
    type Error = Error;

    fn try_from(d: KernelSpecDoc) -> Result<Self> {
        KernelSpec::new(d.label, StableParams::new(d.alpha, d.h)?, d.atoms)
    }
}

impl From<KernelSpec> for KernelSpecDoc {
    fn from(k: KernelSpec) -> Self {
        KernelSpecDoc {
            label: k.label,
            alpha: k.params.alpha,
            h: k.params.h,
            atoms: k.atoms,
        }
    }
}

impl KernelSpec {
    pub fn new(label: impl Into<String>, params: StableParams, atoms: Vec<AtomSpec>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("atoms", "need at least one atom"));
        }
        for (i, a) in atoms.iter().enumerate() {
            a.validate(&format!("atoms[{i}]"))?;
        }
        Ok(Self {
            label: label.into(),
            params,
            atoms,
        })
    }

    /// Parse and validate a JSON document. Errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: KernelSpecDoc = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::invalid(
                if path == "." { "document".into() } else { path },
                e.into_inner().to_string(),
            )
        })?;
        KernelSpec::try_from(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("kernel specs always serialise")
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn atom(&self, i: usize) -> Result<&AtomSpec> {
        self.atoms
            .get(i)
            .ok_or_else(|| Error::domain(format!("atom index {i} out of range ({} atoms)", self.atoms.len())))
    }

    pub fn evaluator(&self, i: usize) -> Result<AtomKernel> {
        Ok(AtomKernel::new(self.atom(i)?, &self.params))
    }

    pub fn evaluators(&self) -> Vec<AtomKernel> {
        self.atoms.iter().map(|a| AtomKernel::new(a, &self.params)).collect()
    }

    /// Equivalent spec with unit speed in every atom.
    ///
    /// Substituting `v = s v'` (or `v = q - |s| v'` when `s < 0`) turns an
    /// atom of period `q` into one of period `q/|s|` and weight `weight |s|`
    /// whose kernel agrees with the original almost everywhere.
    pub fn normalize_speed(&self) -> KernelSpec {
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                let lam = a.s.abs();
                let (f1, f2) = if a.s > 0.0 {
                    (a.f1.rescaled(lam), a.f2.rescaled(lam))
                } else {
                    (a.f1.reflected(a.q, lam), a.f2.reflected(a.q, lam))
                };
                AtomSpec {
                    weight: a.weight * lam,
                    q: a.q / lam,
                    b1: a.b1,
                    s: 1.0,
                    f1,
                    f2,
                    f3: a.f3,
                }
            })
            .collect();
        KernelSpec {
            label: self.label.clone(),
            params: self.params,
            atoms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LfsmAtom {
    pub weight: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "F2")]
    pub f2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedLfsmSpec {
    pub params: StableParams,
    pub atoms: Vec<LfsmAtom>,
}

impl MixedLfsmSpec {
    pub fn new(params: StableParams, atoms: Vec<LfsmAtom>) -> Result<Self> {
        for (i, a) in atoms.iter().enumerate() {
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return Err(Error::invalid(
                    format!("atoms[{i}].weight"),
                    "must be positive and finite",
                ));
            }
            if !a.f1.is_finite() || !a.f2.is_finite() {
                return Err(Error::invalid(format!("atoms[{i}]"), "F1 and F2 must be finite"));
            }
        }
        Ok(Self { params, atoms })
    }
}

/// The canonical representation of a mixed LFSM: unit period and speed,
/// `b1 = 1`, constant profiles. For `kappa = 0` the power part becomes the
/// indicator of `(0, inf)` carrying `F2` and the log term carries `F1`.
pub fn embed_mixed_lfsm(m: &MixedLfsmSpec) -> KernelSpec {
    let log_branch = m.params.kappa() == 0.0;
    let atoms = m
        .atoms
        .iter()
        .map(|a| {
            let (f1, f2, f3) = if log_branch {
                (a.f2, 0.0, a.f1)
            } else {
                (a.f1, a.f2, 0.0)
            };
            AtomSpec {
                weight: a.weight,
                q: 1.0,
                b1: 1,
                s: 1.0,
                f1: Profile::Constant { value: f1 },
                f2: Profile::Constant { value: f2 },
                f3,
            }
        })
        .collect();
    KernelSpec {
        label: "mixed-lfsm".into(),
        params: m.params,
        atoms,
    }
}

/// Pre-digested single atom, cheap to evaluate in inner loops.
#[derive(Debug, Clone)]
pub struct AtomKernel {
    pub q: f64,
    pub s: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub weight: f64,
    flip: bool,
    f1: Profile,
    f2: Profile,
    f1_zero: bool,
    f2_zero: bool,
    /// `F3` when the log term is active, otherwise 0.
    f3: f64,
    bps1: Vec<f64>,
    bps2: Vec<f64>,
}

impl AtomKernel {
    pub fn new(a: &AtomSpec, p: &StableParams) -> Self {
        let mut bps1 = vec![0.0];
        bps1.extend(a.f1.breakpoints(a.q));
        let mut bps2 = vec![0.0];
        bps2.extend(a.f2.breakpoints(a.q));
        Self {
            q: a.q,
            s: a.s,
            kappa: p.kappa(),
            alpha: p.alpha(),
            weight: a.weight,
            flip: a.b1 == -1,
            f1_zero: a.f1.is_zero(),
            f2_zero: a.f2.is_zero(),
            f1: a.f1.clone(),
            f2: a.f2.clone(),
            f3: if a.log_active(p) { a.f3 } else { 0.0 },
            bps1,
            bps2,
        }
    }

    pub fn log_active(&self) -> bool {
        self.f3 != 0.0
    }

    pub fn f3_active(&self) -> f64 {
        self.f3
    }

    pub fn b1(&self) -> f64 {
        if self.flip {
            -1.0
        } else {
            1.0
        }
    }

    pub fn log_period(&self) -> f64 {
        self.q / self.s.abs()
    }

    pub fn is_zero(&self) -> bool {
        self.f1_zero && self.f2_zero && self.f3 == 0.0
    }

    /// Profile breakpoints in `[0, q)` for the positive (`F1`) or negative
    /// (`F2`) half-line, always including the wrap point 0.
    pub fn breakpoints(&self, positive: bool) -> &[f64] {
        if positive {
            &self.bps1
        } else {
            &self.bps2
        }
    }

    pub fn side_is_zero(&self, positive: bool) -> bool {
        self.f3 == 0.0 && if positive { self.f1_zero } else { self.f2_zero }
    }

    /// `G(v, u)` without argument checks. At `u = 0` the power part is taken
    /// as 0 and an active log term gives `-inf * F3`.
    #[inline]
    pub fn g(&self, v: f64, u: f64) -> f64 {
        if u == 0.0 {
            return if self.f3 != 0.0 {
                f64::NEG_INFINITY * self.f3
            } else {
                0.0
            };
        }
        let lnu = u.abs().ln();
        let (n, r) = split(self.s.mul_add(lnu, v), self.q);
        let pos = u > 0.0;
        let mut out = 0.0;
        if !(if pos { self.f1_zero } else { self.f2_zero }) {
            let prof = if pos { &self.f1 } else { &self.f2 };
            let pw = if self.kappa == 0.0 {
                1.0
            } else {
                (self.kappa * lnu).exp()
            };
            out = prof.at(r, self.q) * pw;
            if self.flip && n.rem_euclid(2.0) == 1.0 {
                out = -out;
            }
        }
        if self.f3 != 0.0 {
            out += self.f3 * lnu;
        }
        out
    }

    /// Envelope `sup|F| |u|^kappa + |F3 ln|u||`, a natural scale for residuals.
    pub fn envelope(&self, u: f64) -> f64 {
        let sup = if u > 0.0 {
            self.f1.sup_abs(self.q)
        } else {
            self.f2.sup_abs(self.q)
        };
        let pw = if u == 0.0 {
            if self.kappa == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            u.abs().powf(self.kappa)
        };
        sup * pw + (self.f3 * u.abs().ln()).abs()
    }
}

fn check_v(a: &AtomSpec, v: f64) -> Result<()> {
    if !(0.0..a.q).contains(&v) {
        return Err(Error::domain(format!("v = {v} outside [0, {})", a.q)));
    }
    Ok(())
}

fn check_u(a: &AtomSpec, p: &StableParams, u: f64) -> Result<()> {
    if !u.is_finite() {
        return Err(Error::domain(format!("u = {u} is not finite")));
    }
    if u == 0.0 && a.log_active(p) {
        return Err(Error::Singular("u = 0 with an active log term".into()));
    }
    Ok(())
}

#[allow(non_snake_case)]
pub fn eval_G(spec: &KernelSpec, atom: usize, v: f64, u: f64) -> Result<f64> {
    let a = spec.atom(atom)?;
    check_v(a, v)?;
    check_u(a, &spec.params, u)?;
    Ok(AtomKernel::new(a, &spec.params).g(v, u))
}

/// Ring kernel `K(u) = G(0, u)`; defined for unit-speed atoms.
#[allow(non_snake_case)]
pub fn eval_K(spec: &KernelSpec, atom: usize, u: f64) -> Result<f64> {
    let a = spec.atom(atom)?;
    if a.s != 1.0 {
        return Err(Error::domain(format!(
            "ring kernel needs s = 1 (atom {atom} has s = {}); normalize the speed first",
            a.s
        )));
    }
    eval_G(spec, atom, 0.0, u)
}

/// `G(v, t + u) - G(v, u)`.
pub fn eval_increment(spec: &KernelSpec, atom: usize, v: f64, t: f64, u: f64) -> Result<f64> {
    let a = spec.atom(atom)?;
    check_v(a, v)?;
    if !t.is_finite() {
        return Err(Error::domain("t must be finite"));
    }
    check_u(a, &spec.params, u)?;
    check_u(a, &spec.params, t + u)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let k = AtomKernel::new(a, &spec.params);
    Ok(k.g(v, t + u) - k.g(v, u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(f1: Profile, alpha: f64, h: f64) -> KernelSpec {
        KernelSpec::new(
            "t",
            StableParams::new(alpha, h).unwrap(),
            vec![AtomSpec::simple(1.0, f1)],
        )
        .unwrap()
    }

    fn tent() -> KernelSpec {
        single(Profile::Tent { amplitude: 1.0 }, 1.6, 0.5)
    }

    #[test]
    fn kappa_is_derived_and_snapped() {
        let p = StableParams::new(1.6, 0.5).unwrap();
        assert_eq!(p.kappa(), 0.5 - 1.0 / 1.6);
        assert_eq!(StableParams::new(1.6, 0.625).unwrap().kappa(), 0.0);
        assert_eq!(StableParams::new(1.25, 0.8).unwrap().kappa(), 0.0);
        assert!(StableParams::new(2.0, 0.5).is_err());
        assert!(StableParams::new(1.5, 1.0).is_err());
    }

    #[test]
    fn tent_value_at_e_to_0_3() {
        // tent(0.3) * exp(0.3 * kappa) with kappa = -0.125
        let g = eval_G(&tent(), 0, 0.0, 0.3f64.exp()).unwrap();
        assert!((g - 0.288_958_0).abs() < 5e-7, "{g}");
        let k = eval_K(&tent(), 0, 0.3f64.exp()).unwrap();
        assert_eq!(g, k);
    }

    #[test]
    fn tent_increment_at_one() {
        // tent(ln 2) 2^kappa - tent(0)
        let d = eval_increment(&tent(), 0, 0.0, 1.0, 1.0).unwrap();
        assert!((d - 0.281_385).abs() < 2e-6, "{d}");
        assert_eq!(eval_increment(&tent(), 0, 0.3, 0.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn log_branch_minus_indicator_at_minus_one() {
        let mut a = AtomSpec::simple(1.0, Profile::Tent { amplitude: 1.0 });
        a.f2 = Profile::Constant { value: 1.0 };
        for b1 in [1, -1] {
            a.b1 = b1;
            let spec = KernelSpec::new("k0", StableParams::new(1.6, 0.625).unwrap(), vec![a.clone()]).unwrap();
            assert_eq!(eval_G(&spec, 0, 0.4, -1.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn linear_vanishes_at_one() {
        let spec = single(Profile::Linear { slope: 1.0 }, 1.6, 0.5);
        assert_eq!(eval_G(&spec, 0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(eval_K(&spec, 0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn ring_kernel_relation() {
        let spec = tent();
        let kappa = spec.params.kappa();
        let (v, u) = (0.4, 2.0);
        let lhs = eval_G(&spec, 0, v, u).unwrap();
        let rhs = (-kappa * v).exp() * eval_K(&spec, 0, v.exp() * u).unwrap();
        assert!((lhs - rhs).abs() < 1e-15);
    }

    #[test]
    fn argument_errors() {
        let spec = tent();
        assert!(matches!(eval_G(&spec, 0, 1.0, 2.0), Err(Error::Domain(_))));
        assert!(matches!(eval_G(&spec, 0, -0.1, 2.0), Err(Error::Domain(_))));
        assert!(matches!(eval_G(&spec, 3, 0.1, 2.0), Err(Error::Domain(_))));
        assert_eq!(eval_G(&spec, 0, 0.1, 0.0).unwrap(), 0.0);
        let lfsm = embed_mixed_lfsm(
            &MixedLfsmSpec::new(
                StableParams::new(1.6, 0.625).unwrap(),
                vec![LfsmAtom {
                    weight: 1.0,
                    f1: 1.0,
                    f2: 0.0,
                }],
            )
            .unwrap(),
        );
        assert!(matches!(eval_G(&lfsm, 0, 0.1, 0.0), Err(Error::Singular(_))));
        assert!(matches!(
            eval_increment(&lfsm, 0, 0.1, 1.0, -1.0),
            Err(Error::Singular(_))
        ));
        let mut s = tent();
        s.atoms[0].s = 2.0;
        assert!(eval_K(&s, 0, 1.0).is_err());
    }

    #[test]
    fn embedding_matches_lfsm_increments() {
        let p = StableParams::new(1.6, 0.5).unwrap();
        let spec = embed_mixed_lfsm(
            &MixedLfsmSpec::new(
                p,
                vec![LfsmAtom {
                    weight: 1.0,
                    f1: 1.3,
                    f2: -0.4,
                }],
            )
            .unwrap(),
        );
        assert_eq!(spec.atoms[0].f1, Profile::Constant { value: 1.3 });
        assert_eq!(spec.atoms[0].f2, Profile::Constant { value: -0.4 });
        let k = p.kappa();
        let pp = |x: f64| if x > 0.0 { x.powf(k) } else { 0.0 };
        let pm = |x: f64| if x < 0.0 { (-x).powf(k) } else { 0.0 };
        for &(v, t, u) in &[(0.0, 1.0, 0.5), (0.7, 2.0, -0.5), (0.2, 0.3, -3.0), (0.9, 1.5, 4.0)] {
            let got = eval_increment(&spec, 0, v, t, u).unwrap();
            let want = 1.3 * (pp(t + u) - pp(u)) - 0.4 * (pm(t + u) - pm(u));
            assert!((got - want).abs() < 1e-14 * want.abs().max(1.0), "{got} vs {want}");
        }

        let p0 = StableParams::new(1.6, 0.625).unwrap();
        let z = embed_mixed_lfsm(
            &MixedLfsmSpec::new(
                p0,
                vec![LfsmAtom {
                    weight: 1.0,
                    f1: 1.0,
                    f2: 0.0,
                }],
            )
            .unwrap(),
        );
        assert_eq!(z.atoms[0].f3, 1.0);
        assert_eq!(z.atoms[0].f1, Profile::Constant { value: 0.0 });
        let z2 = embed_mixed_lfsm(
            &MixedLfsmSpec::new(
                p0,
                vec![LfsmAtom {
                    weight: 1.0,
                    f1: 0.5,
                    f2: 2.0,
                }],
            )
            .unwrap(),
        );
        // 0.5 ln|t+u|/|u| + 2 1{-t < u < 0}
        let got = eval_increment(&z2, 0, 0.3, 1.0, -0.25).unwrap();
        assert!((got - (0.5 * (0.75f64 / 0.25).ln() + 2.0)).abs() < 1e-14);
        let empty = embed_mixed_lfsm(
            &MixedLfsmSpec::new(
                p,
                vec![LfsmAtom {
                    weight: 1.0,
                    f1: 0.0,
                    f2: 0.0,
                }],
            )
            .unwrap(),
        );
        assert_eq!(eval_increment(&empty, 0, 0.1, 1.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn normalized_speed_agrees_pointwise() {
        for s in [2.5, -0.7] {
            for b1 in [1i8, -1] {
                let a = AtomSpec {
                    weight: 1.0,
                    q: 1.3,
                    b1,
                    s,
                    f1: Profile::Indicator {
                        half: 0.5,
                        amplitude: 1.0,
                    },
                    f2: Profile::Linear { slope: -0.4 },
                    f3: 0.0,
                };
                let spec = KernelSpec::new("x", StableParams::new(1.5, 0.4).unwrap(), vec![a]).unwrap();
                let n = spec.normalize_speed();
                assert_eq!(n.atoms[0].s, 1.0);
                assert!((n.atoms[0].weight - s.abs()).abs() < 1e-15);
                let g = spec.evaluator(0).unwrap();
                let h = n.evaluator(0).unwrap();
                let p = n.atoms[0].q;
                for i in 0..40 {
                    let vp = p * (i as f64 + 0.31) / 40.0;
                    let v = if s > 0.0 { s * vp } else { 1.3 - s.abs() * vp };
                    for &u in &[0.37, -2.2, 5.1, -0.013] {
                        let (x, y) = (g.g(v, u), h.g(vp, u));
                        assert!((x - y).abs() < 1e-9, "s={s} b1={b1} v'={vp} u={u}: {x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn json_round_trip_and_paths() {
        let spec = tent();
        let text = spec.to_json();
        assert!(text.contains("\"H\""));
        assert_eq!(KernelSpec::from_json(&text).unwrap(), spec);

        let bad = text.replace("\"q\": 1.0", "\"q\": -1.0");
        match KernelSpec::from_json(&bad) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "atoms[0].q"),
            other => panic!("{other:?}"),
        }
        let unknown = text.replace("\"label\"", "\"extra\": 1, \"label\"");
        assert!(matches!(KernelSpec::from_json(&unknown), Err(Error::Validation { .. })));
        let typo = text.replace("\"amplitude\"", "\"amp\"");
        match KernelSpec::from_json(&typo) {
            Err(Error::Validation { field, .. }) => assert!(field.starts_with("atoms[0].F1"), "{field}"),
            other => panic!("{other:?}"),
        }
    }
}
