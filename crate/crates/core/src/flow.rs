//! The cyclic flow `v -> {v + s ln c}_q` on each atom, the cocycle and the
//! semi-additive functionals built on top of it, and the check that a
//! canonical kernel is generated by this flow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{AtomKernel, KernelSpec, StableParams};
use crate::profile::Profile;
use crate::scalar::split;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowAtom {
    pub q: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CyclicFlow {
    pub atoms: Vec<FlowAtom>,
}

impl CyclicFlow {
    pub fn new(atoms: Vec<FlowAtom>) -> Result<Self> {
        for (i, a) in atoms.iter().enumerate() {
            if !(a.q > 0.0) || !a.q.is_finite() {
                return Err(Error::invalid(format!("atoms[{i}].q"), "period must be positive"));
            }
            if a.s == 0.0 || !a.s.is_finite() {
                return Err(Error::invalid(format!("atoms[{i}].s"), "speed must be nonzero"));
            }
        }
        Ok(Self { atoms })
    }

    pub fn of(spec: &KernelSpec) -> Self {
        Self {
            atoms: spec.atoms.iter().map(|a| FlowAtom { q: a.q, s: a.s }).collect(),
        }
    }

    fn atom(&self, i: usize) -> Result<FlowAtom> {
        self.atoms
            .get(i)
            .copied()
            .ok_or_else(|| Error::domain(format!("atom index {i} out of range ({} atoms)", self.atoms.len())))
    }
}

/// `([v + s ln c]_q, {v + s ln c}_q)`.
#[inline]
fn shift(a: FlowAtom, v: f64, c: f64) -> (f64, f64) {
    split(a.s.mul_add(c.ln(), v), a.q)
}

fn check_c(c: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::domain(format!(
            "flow parameter c must be positive and finite, got {c}"
        )));
    }
    Ok(())
}

pub fn apply_flow(flow: &CyclicFlow, atom: usize, v: f64, c: f64) -> Result<f64> {
    check_c(c)?;
    let a = flow.atom(atom)?;
    if !(0.0..a.q).contains(&v) {
        return Err(Error::domain(format!("v = {v} outside [0, {})", a.q)));
    }
    Ok(shift(a, v, c).1)
}

/// `min(|x - y|, q - |x - y|)`.
pub fn circular_distance(x: f64, y: f64, q: f64) -> f64 {
    let d = (x - y).abs() % q;
    d.min(q - d)
}

/// Generators of the functionals on one atom.
///
/// `b_tilde` is the sign function that flips at each of `sign_cuts`, starting
/// from `+1` at `v = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomGenerators {
    pub b1: i8,
    pub sign_cuts: Vec<f64>,
    pub g: Profile,
    pub j: Profile,
    pub j1: f64,
}

impl AtomGenerators {
    pub fn trivial(b1: i8) -> Self {
        Self {
            b1,
            sign_cuts: Vec::new(),
            g: Profile::zero(),
            j: Profile::zero(),
            j1: 0.0,
        }
    }

    fn b_tilde(&self, v: f64) -> f64 {
        let flips = self.sign_cuts.iter().filter(|&&x| x <= v).count();
        if flips % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTriple {
    pub flow: CyclicFlow,
    pub generators: Vec<AtomGenerators>,
}

impl FlowTriple {
    pub fn new(flow: CyclicFlow, generators: Vec<AtomGenerators>) -> Result<Self> {
        if flow.atoms.len() != generators.len() {
            return Err(Error::invalid("generators", "need one generator set per atom"));
        }
        for (i, (a, g)) in flow.atoms.iter().zip(&generators).enumerate() {
            if g.b1 != 1 && g.b1 != -1 {
                return Err(Error::invalid(format!("generators[{i}].b1"), "must be 1 or -1"));
            }
            if g.sign_cuts.iter().any(|x| !(0.0..a.q).contains(x)) {
                return Err(Error::invalid(
                    format!("generators[{i}].sign_cuts"),
                    "cuts must lie in [0, q)",
                ));
            }
            g.g.validate(a.q, &format!("generators[{i}].g"))?;
            g.j.validate(a.q, &format!("generators[{i}].j"))?;
        }
        Ok(Self { flow, generators })
    }

    /// The triple under which a canonical kernel is generated: trivial sign
    /// generator, `g = 0`, and `j_c = F3 ln c` on log-active atoms.
    ///
    /// On a log-active atom `F3 ln c = (F3/s)({v + s ln c} - v) + (F3 q/s)[v + s ln c]`,
    /// so `j_tilde(v) = F3 v / s` and `j1 = F3 q / s` reproduce it.
    pub fn canonical(spec: &KernelSpec) -> Self {
        let generators = spec
            .atoms
            .iter()
            .map(|a| {
                let mut g = AtomGenerators::trivial(a.b1);
                if a.log_active(&spec.params) {
                    g.j = Profile::Linear { slope: a.f3 / a.s };
                    g.j1 = a.f3 * a.q / a.s;
                }
                g
            })
            .collect();
        Self {
            flow: CyclicFlow::of(spec),
            generators,
        }
    }

    /// Random generators on the flow of `spec`: a few sign cuts and tabulated
    /// `g`, `j` with jumps, drawn from `seed`.
    pub fn randomized(flow: CyclicFlow, b1: &[i8], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut generators = Vec::new();
        for (a, &b) in flow.atoms.iter().zip(b1) {
            let ncuts = rng.gen_range(0..4);
            let mut sign_cuts: Vec<f64> = (0..ncuts).map(|_| rng.gen_range(0.0..a.q)).collect();
            sign_cuts.sort_by(f64::total_cmp);
            generators.push(AtomGenerators {
                b1: b,
                sign_cuts,
                g: random_profile(&mut rng, a.q),
                j: random_profile(&mut rng, a.q),
                j1: rng.gen_range(-2.0..2.0),
            });
        }
        if generators.len() != flow.atoms.len() {
            return Err(Error::invalid("b1", "need one sign per atom"));
        }
        Self::new(flow, generators)
    }
}

fn random_profile(rng: &mut ChaCha8Rng, q: f64) -> Profile {
    let n = rng.gen_range(2..7);
    let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..q)).collect();
    xs.sort_by(f64::total_cmp);
    let mut knots = vec![[0.0, rng.gen_range(-1.0..1.0)]];
    for x in xs {
        knots.push([x, rng.gen_range(-1.0..1.0)]);
        if rng.gen_bool(0.3) {
            knots.push([x, rng.gen_range(-1.0..1.0)]);
        }
    }
    knots.push([q, rng.gen_range(-1.0..1.0)]);
    Profile::Tabulated { knots }
}

impl FlowTriple {
    fn parts(&self, atom: usize) -> Result<(FlowAtom, &AtomGenerators)> {
        let a = self.flow.atom(atom)?;
        let g = self
            .generators
            .get(atom)
            .ok_or_else(|| Error::domain(format!("atom index {atom} out of range")))?;
        Ok((a, g))
    }

    fn b(&self, a: FlowAtom, g: &AtomGenerators, v: f64, c: f64) -> f64 {
        let (n, r) = shift(a, v, c);
        let mut out = g.b_tilde(r) / g.b_tilde(v);
        if g.b1 == -1 && n.rem_euclid(2.0) == 1.0 {
            out = -out;
        }
        out
    }

    fn g_c(&self, a: FlowAtom, g: &AtomGenerators, v: f64, c: f64) -> f64 {
        let r = shift(a, v, c).1;
        g.g.at(r, a.q) - g.g.at(v, a.q) / c
    }

    fn j_c(&self, a: FlowAtom, g: &AtomGenerators, kappa: f64, v: f64, c: f64) -> f64 {
        let (n, r) = shift(a, v, c);
        let mut out = self.b(a, g, v, c) * g.j.at(r, a.q) - c.powf(-kappa) * g.j.at(v, a.q);
        if g.b1 == 1 && kappa == 0.0 {
            out += g.j1 * n / g.b_tilde(v);
        }
        out
    }
}

pub fn cocycle_eval(triple: &FlowTriple, atom: usize, v: f64, c: f64) -> Result<f64> {
    check_c(c)?;
    let (a, g) = triple.parts(atom)?;
    Ok(triple.b(a, g, v, c))
}

pub fn semi_additive_1_eval(triple: &FlowTriple, atom: usize, v: f64, c: f64) -> Result<f64> {
    check_c(c)?;
    let (a, g) = triple.parts(atom)?;
    Ok(triple.g_c(a, g, v, c))
}

pub fn semi_additive_2_eval(triple: &FlowTriple, params: &StableParams, atom: usize, v: f64, c: f64) -> Result<f64> {
    check_c(c)?;
    let (a, g) = triple.parts(atom)?;
    Ok(triple.j_c(a, g, params.kappa(), v, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowSample {
    pub atom: usize,
    pub v: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Samples with `v` uniform on `[0, q)` and `ln c` uniform on `[-3q/|s|, 3q/|s|]`,
/// so that several wraparounds occur.
pub fn random_samples(flow: &CyclicFlow, n: usize, seed: u64) -> Vec<FlowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let atom = i % flow.atoms.len().max(1);
            let a = flow.atoms[atom];
            let span = 3.0 * a.q / a.s.abs();
            FlowSample {
                atom,
                v: rng.gen_range(0.0..a.q),
                c1: rng.gen_range(-span..span).exp(),
                c2: rng.gen_range(-span..span).exp(),
            }
        })
        .collect()
}

fn check_samples(flow: &CyclicFlow, samples: &[FlowSample]) -> Result<()> {
    for (k, smp) in samples.iter().enumerate() {
        let a = flow.atom(smp.atom)?;
        check_c(smp.c1)?;
        check_c(smp.c2)?;
        if !(0.0..a.q).contains(&smp.v) {
            return Err(Error::invalid(format!("samples[{k}].v"), "outside [0, q)"));
        }
    }
    Ok(())
}

/// Max circular distance between `psi_{c1 c2}(v)` and `psi_{c2}(psi_{c1}(v))`.
pub fn verify_flow_identity(flow: &CyclicFlow, samples: &[FlowSample]) -> Result<f64> {
    check_samples(flow, samples)?;
    Ok(samples
        .iter()
        .map(|smp| {
            let a = flow.atoms[smp.atom];
            let lhs = shift(a, smp.v, smp.c1 * smp.c2).1;
            let rhs = shift(a, shift(a, smp.v, smp.c1).1, smp.c2).1;
            circular_distance(lhs, rhs, a.q)
        })
        .fold(0.0, f64::max))
}

/// `b_{c1 c2}(v) = b_{c1}(v) b_{c2}(psi_{c1}(v))`; the residual is 0 or 2.
pub fn verify_cocycle(triple: &FlowTriple, samples: &[FlowSample]) -> Result<f64> {
    check_samples(&triple.flow, samples)?;
    let mut worst: f64 = 0.0;
    for smp in samples {
        let (a, g) = triple.parts(smp.atom)?;
        let lhs = triple.b(a, g, smp.v, smp.c1 * smp.c2);
        let mid = shift(a, smp.v, smp.c1).1;
        let rhs = triple.b(a, g, smp.v, smp.c1) * triple.b(a, g, mid, smp.c2);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// `|lhs - sum terms|` relative to the largest magnitude involved (at least 1),
/// so that rounding in terms of size `1/c` does not count as a violation.
fn relative_gap(lhs: f64, terms: &[f64]) -> f64 {
    let rhs: f64 = terms.iter().sum();
    let scale = terms.iter().fold(lhs.abs().max(1.0), |m, t| m.max(t.abs()));
    (lhs - rhs).abs() / scale
}

/// `g_{c1 c2}(v) = c2^{-1} g_{c1}(v) + g_{c2}(psi_{c1}(v))`, as a relative residual.
pub fn verify_semi_additive_1(triple: &FlowTriple, samples: &[FlowSample]) -> Result<f64> {
    check_samples(&triple.flow, samples)?;
    let mut worst: f64 = 0.0;
    for smp in samples {
        let (a, g) = triple.parts(smp.atom)?;
        let lhs = triple.g_c(a, g, smp.v, smp.c1 * smp.c2);
        let mid = shift(a, smp.v, smp.c1).1;
        let (t1, t2) = (triple.g_c(a, g, smp.v, smp.c1) / smp.c2, triple.g_c(a, g, mid, smp.c2));
        worst = worst.max(relative_gap(lhs, &[t1, t2]));
    }
    Ok(worst)
}

/// `j_{c1 c2}(v) = c2^{-kappa} j_{c1}(v) + b_{c1}(v) j_{c2}(psi_{c1}(v))`, as a
/// relative residual.
pub fn verify_semi_additive_2(triple: &FlowTriple, params: &StableParams, samples: &[FlowSample]) -> Result<f64> {
    check_samples(&triple.flow, samples)?;
    let kappa = params.kappa();
    let mut worst: f64 = 0.0;
    for smp in samples {
        let (a, g) = triple.parts(smp.atom)?;
        let lhs = triple.j_c(a, g, kappa, smp.v, smp.c1 * smp.c2);
        let mid = shift(a, smp.v, smp.c1).1;
        let t1 = smp.c2.powf(-kappa) * triple.j_c(a, g, kappa, smp.v, smp.c1);
        let t2 = triple.b(a, g, smp.v, smp.c1) * triple.j_c(a, g, kappa, mid, smp.c2);
        worst = worst.max(relative_gap(lhs, &[t1, t2]));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub atom: usize,
    pub v: f64,
    pub u: f64,
}

/// `v` uniform on `[0, q)`, `|u|` log-uniform on `[1e-3, 1e3]` with a random sign.
pub fn random_grid(spec: &KernelSpec, n: usize, seed: u64) -> Vec<GridPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let atom = i % spec.atoms.len();
            let mag = rng.gen_range(-3.0f64..3.0) * std::f64::consts::LN_10;
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            GridPoint {
                atom,
                v: rng.gen_range(0.0..spec.atoms[atom].q),
                u: sign * mag.exp(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationReport {
    pub residual: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Max over `c` and the grid of
/// `|c^{-kappa} G(v, cu) - b_c(v) G(psi_c(v), u) - j_c(v)|`, relative to the
/// larger of both sides and the kernel envelope at `cu`.
///
/// Grid points where either side hits the logarithmic singularity at `u = 0`
/// are skipped and counted.
pub fn generation_residual(spec: &KernelSpec, c_list: &[f64], grid: &[GridPoint]) -> Result<GenerationReport> {
    for &c in c_list {
        check_c(c)?;
    }
    let triple = FlowTriple::canonical(spec);
    let evals: Vec<AtomKernel> = spec.evaluators();
    let kappa = spec.params.kappa();
    let mut worst: f64 = 0.0;
    let (mut evaluated, mut skipped) = (0, 0);
    for (k, p) in grid.iter().enumerate() {
        let at = evals
            .get(p.atom)
            .ok_or_else(|| Error::invalid(format!("grid[{k}].atom"), "out of range"))?;
        if !(0.0..at.q).contains(&p.v) || !p.u.is_finite() {
            return Err(Error::invalid(format!("grid[{k}]"), "v outside [0, q) or u not finite"));
        }
        let (a, g) = triple.parts(p.atom)?;
        for &c in c_list {
            if p.u == 0.0 && at.log_active() {
                skipped += 1;
                continue;
            }
            let scale = c.powf(-kappa);
            let lhs = scale * at.g(p.v, c * p.u);
            let b = triple.b(a, g, p.v, c);
            let jc = if at.log_active() { at.f3_active() * c.ln() } else { 0.0 };
            let rhs = b * at.g(shift(a, p.v, c).1, p.u) + jc;
            let denom = lhs
                .abs()
                .max(rhs.abs())
                .max(scale * at.envelope(c * p.u))
                .max(f64::MIN_POSITIVE);
            worst = worst.max((lhs - rhs).abs() / denom);
            evaluated += 1;
        }
    }
    Ok(GenerationReport {
        residual: worst,
        evaluated,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowReport {
    pub label: String,
    pub samples: usize,
    pub seed: u64,
    pub flow_identity: f64,
    pub cocycle: f64,
    pub semi_additive_1: f64,
    pub semi_additive_2: f64,
    pub generation: GenerationReport,
}

/// Everything `verify-flow` reports: the functional equations under random
/// generators and the generation relation under the canonical triple.
pub fn flow_report(spec: &KernelSpec, samples: usize, seed: u64) -> Result<FlowReport> {
    let flow = CyclicFlow::of(spec);
    let b1: Vec<i8> = spec.atoms.iter().map(|a| a.b1).collect();
    let triple = FlowTriple::randomized(flow.clone(), &b1, seed)?;
    let smp = random_samples(&flow, samples, seed.wrapping_add(1));
    let grid = random_grid(spec, samples, seed.wrapping_add(2));
    Ok(FlowReport {
        label: spec.label.clone(),
        samples,
        seed,
        flow_identity: verify_flow_identity(&flow, &smp)?,
        cocycle: verify_cocycle(&triple, &smp)?,
        semi_additive_1: verify_semi_additive_1(&triple, &smp)?,
        semi_additive_2: verify_semi_additive_2(&triple, &spec.params, &smp)?,
        generation: generation_residual(spec, &[0.5, 2.0, std::f64::consts::E], &grid)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::AtomSpec;

    fn unit() -> CyclicFlow {
        CyclicFlow::new(vec![FlowAtom { q: 1.0, s: 1.0 }]).unwrap()
    }

    #[test]
    fn flow_examples() {
        let f = unit();
        assert!((apply_flow(&f, 0, 0.3, 0.5f64.exp()).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(apply_flow(&f, 0, 0.3, 1.0).unwrap(), 0.3);
        assert!((apply_flow(&f, 0, 0.3, 0.9f64.exp()).unwrap() - 0.2).abs() < 1e-15);
        assert!(apply_flow(&f, 0, 0.3, 0.0).is_err());
        assert!(apply_flow(&f, 0, 0.3, -1.0).is_err());
    }

    #[test]
    fn flow_returns_after_one_period() {
        let f = CyclicFlow::new(vec![FlowAtom { q: 2.0, s: -0.5 }]).unwrap();
        for k in [1.0, 2.0, -3.0] {
            let v = apply_flow(&f, 0, 0.7, (k * 2.0 / 0.5f64).exp()).unwrap();
            assert!(circular_distance(v, 0.7, 2.0) < 1e-12, "{k}: {v}");
        }
    }

    #[test]
    fn cocycle_examples() {
        let t = FlowTriple::new(unit(), vec![AtomGenerators::trivial(-1)]).unwrap();
        assert_eq!(cocycle_eval(&t, 0, 0.3, 0.5f64.exp()).unwrap(), 1.0);
        assert_eq!(cocycle_eval(&t, 0, 0.3, 0.9f64.exp()).unwrap(), -1.0);
        assert_eq!(cocycle_eval(&t, 0, 0.3, 1.0).unwrap(), 1.0);
        let s = [FlowSample {
            atom: 0,
            v: 0.3,
            c1: 0.5f64.exp(),
            c2: 0.4f64.exp(),
        }];
        assert_eq!(verify_cocycle(&t, &s).unwrap(), 0.0);
    }

    #[test]
    fn wraparound_in_group_law() {
        let s = [FlowSample {
            atom: 0,
            v: 0.9,
            c1: 0.6f64.exp(),
            c2: 0.6f64.exp(),
        }];
        assert!(verify_flow_identity(&unit(), &s).unwrap() < 1e-15);
    }

    #[test]
    fn randomized_functionals_satisfy_their_equations() {
        let flow = CyclicFlow::new(vec![
            FlowAtom { q: 1.0, s: 1.0 },
            FlowAtom { q: 2.5, s: -2.0 },
            FlowAtom { q: 0.3, s: 0.7 },
        ])
        .unwrap();
        let smp = random_samples(&flow, 10_000, 7);
        assert!(verify_flow_identity(&flow, &smp).unwrap() <= 1e-12);
        for (seed, b1) in [(1, [1, -1, 1]), (2, [-1, -1, 1]), (3, [1, 1, 1])] {
            let t = FlowTriple::randomized(flow.clone(), &b1, seed).unwrap();
            assert_eq!(verify_cocycle(&t, &smp).unwrap(), 0.0);
            assert!(verify_semi_additive_1(&t, &smp).unwrap() <= 1e-12);
            for (alpha, h) in [(1.5, 2.0 / 3.0), (1.6, 0.5), (1.2, 0.9)] {
                let p = StableParams::new(alpha, h).unwrap();
                assert!(verify_semi_additive_2(&t, &p, &smp).unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn bracket_only_j_functional() {
        let mut g = AtomGenerators::trivial(1);
        g.j1 = 2.0;
        let t = FlowTriple::new(unit(), vec![g]).unwrap();
        let p = StableParams::new(1.5, 2.0 / 3.0).unwrap();
        assert_eq!(p.kappa(), 0.0);
        let j = semi_additive_2_eval(&t, &p, 0, 0.3, 0.9f64.exp()).unwrap();
        assert_eq!(j, 2.0);
        let smp = random_samples(&t.flow, 10_000, 11);
        assert!(verify_semi_additive_2(&t, &p, &smp).unwrap() <= 1e-12);
    }

    #[test]
    fn canonical_triple_reproduces_log_shift() {
        let p = StableParams::new(1.5, 2.0 / 3.0).unwrap();
        let mut a = AtomSpec::simple(1.3, Profile::Tent { amplitude: 1.0 });
        a.f3 = 2.0;
        a.s = -0.8;
        let spec = KernelSpec::new("k0", p, vec![a]).unwrap();
        let t = FlowTriple::canonical(&spec);
        for (v, c) in [(0.1, std::f64::consts::E), (1.2, 0.5), (0.6, 40.0)] {
            let j = semi_additive_2_eval(&t, &p, 0, v, c).unwrap();
            assert!((j - 2.0 * c.ln()).abs() < 1e-13, "{j}");
        }
        let grid = random_grid(&spec, 1000, 3);
        let r = generation_residual(&spec, &[0.5, 2.0, std::f64::consts::E], &grid).unwrap();
        assert!(r.residual <= 1e-12, "{r:?}");
        assert_eq!(r.evaluated, 3000);
    }

    #[test]
    fn identity_flow_parameter_gives_zero_residual() {
        let p = StableParams::new(1.6, 0.5).unwrap();
        let spec = KernelSpec::new("tent", p, vec![AtomSpec::simple(1.0, Profile::Tent { amplitude: 1.0 })]).unwrap();
        let grid = random_grid(&spec, 200, 5);
        assert_eq!(generation_residual(&spec, &[1.0], &grid).unwrap().residual, 0.0);
    }
}
