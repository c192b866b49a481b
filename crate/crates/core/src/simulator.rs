//! Monte Carlo paths from a cell discretisation of the SαS random measure.
//!
//! `X(t_j) = sum_cells G_{t_j}(z, v_c, u_c) (cell measure)^{1/alpha} eps_c` with
//! independent standard SαS `eps_c`. The `u` axis is cut at the singular points
//! `{0, -t_j}` and every side is log-spaced, from a small inner distance out to
//! the next midpoint or to `+-U`. Replication `r` draws from its own ChaCha
//! stream, so paths do not depend on how replications are scheduled.

use std::f64::consts::PI;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// One standard SαS variate (`E e^{i theta X} = e^{-|theta|^alpha}`) by the
/// Chambers–Mallows–Stuck transform.
#[inline]
pub fn sas_variate<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    let v = PI * (u - 0.5);
    let w = -rng.sample::<f64, _>(Open01).ln();
    if alpha == 1.0 {
        return v.tan();
    }
    let e = ((1.0 - alpha) * (((1.0 - alpha) * v).cos() / w).ln() - v.cos().ln()) / alpha;
    (alpha * v).sin() * e.exp()
}

pub fn sas_sample<R: Rng + ?Sized>(rng: &mut R, alpha: f64, n: usize) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    Ok((0..n).map(|_| sas_variate(alpha, rng)).collect())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 2), got {alpha}")));
    }
    Ok(())
}

/// The stream used by replication `rep`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationGrid {
    /// Half-width `U` of the truncated `u` range.
    pub u_max: f64,
    /// Total `u` cells, shared among the log-spaced sides.
    pub u_cells: usize,
    /// Midpoint cells in `v` per atom.
    pub v_cells: usize,
    /// Width of the innermost cell next to each singular point.
    pub inner: f64,
    pub t_grid: Vec<f64>,
    pub seed: u64,
}

impl SimulationGrid {
    /// A grid that keeps the discretisation bias of the scale near 1e-3 for
    /// the registry kernels.
    pub fn new(t_grid: Vec<f64>, seed: u64) -> Self {
        let tmax = t_grid.iter().fold(1.0f64, |m, t| m.max(t.abs()));
        Self {
            u_max: 1e5 * tmax,
            u_cells: 2400,
            v_cells: 4,
            inner: 1e-6,
            t_grid,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("t_grid", "need at least one finite time"));
        }
        if self.t_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("t_grid", "times must be strictly increasing"));
        }
        let tmax = self.t_grid.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        if !(self.u_max > 2.0 * tmax + 1.0) || !self.u_max.is_finite() {
            return Err(Error::invalid("u_max", "need U > 2 max|t| + 1"));
        }
        if self.u_cells == 0 || self.v_cells == 0 {
            return Err(Error::invalid("u_cells", "cell counts must be positive"));
        }
        if !(self.inner > 0.0 && self.inner < 1.0) {
            return Err(Error::invalid("inner", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Cell coefficients `a[c][j]`, already multiplied by `(cell measure)^{1/alpha}`.
/// Cells where every coefficient vanishes are dropped.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub alpha: f64,
    pub times: usize,
    pub coef: Vec<f64>,
    /// Cell centres moved off a singular value.
    pub perturbed: usize,
}

impl Discretization {
    pub fn build(spec: &KernelSpec, grid: &SimulationGrid) -> Result<Self> {
        grid.validate()?;
        let alpha = spec.params.alpha();
        let times = grid.t_grid.len();
        let cells = u_cells(grid);
        let mut coef = Vec::new();
        let mut perturbed = 0;
        let mut row = vec![0.0; times];
        for atom in spec.evaluators() {
            if atom.is_zero() {
                continue;
            }
            let dv = atom.q / grid.v_cells as f64;
            for iv in 0..grid.v_cells {
                let v = (iv as f64 + 0.5) * dv;
                for &(mut u, du) in &cells {
                    let eval = |u: f64, row: &mut [f64]| {
                        let g0 = atom.g(v, u);
                        for (r, &t) in row.iter_mut().zip(&grid.t_grid) {
                            *r = if t == 0.0 { 0.0 } else { atom.g(v, t + u) - g0 };
                        }
                        row.iter().all(|r| r.is_finite())
                    };
                    if !eval(u, &mut row) {
                        u += 0.5 * du;
                        perturbed += 1;
                        if !eval(u, &mut row) {
                            return Err(Error::Singular(format!("kernel is not finite near u = {u}")));
                        }
                    }
                    if row.iter().all(|&r| r == 0.0) {
                        continue;
                    }
                    let m = (atom.weight * dv * du).powf(1.0 / alpha);
                    coef.extend(row.iter().map(|r| r * m));
                }
            }
        }
        Ok(Self {
            alpha,
            times,
            coef,
            perturbed,
        })
    }

    pub fn cells(&self) -> usize {
        self.coef.len().checked_div(self.times).unwrap_or(0)
    }

    /// Scale of the discretised `sum_j theta_j X(t_j)`.
    pub fn scale(&self, theta: &[f64]) -> f64 {
        let s: f64 = self
            .coef
            .chunks_exact(self.times)
            .map(|c| {
                c.iter()
                    .zip(theta)
                    .map(|(a, t)| a * t)
                    .sum::<f64>()
                    .abs()
                    .powf(self.alpha)
            })
            .sum();
        s.powf(1.0 / self.alpha)
    }

    fn path(&self, seed: u64, rep: u64, out: &mut [f64]) {
        let mut rng = replication_rng(seed, rep);
        out.fill(0.0);
        for c in self.coef.chunks_exact(self.times) {
            let e = sas_variate(self.alpha, &mut rng);
            for (o, a) in out.iter_mut().zip(c) {
                *o += a * e;
            }
        }
    }
}

/// `(centre, width)` of every `u` cell.
fn u_cells(grid: &SimulationGrid) -> Vec<(f64, f64)> {
    let mut pts: Vec<f64> = std::iter::once(0.0).chain(grid.t_grid.iter().map(|t| -t)).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let n = pts.len();
    // (anchor, direction, reach)
    let mut sides = vec![(pts[0], -1.0, grid.u_max + pts[0])];
    for w in pts.windows(2) {
        let h = 0.5 * (w[1] - w[0]);
        sides.push((w[0], 1.0, h));
        sides.push((w[1], -1.0, h));
    }
    sides.push((pts[n - 1], 1.0, grid.u_max - pts[n - 1]));
    let inner = |reach: f64| grid.inner.min(0.5 * reach);
    let total: f64 = sides.iter().map(|&(_, _, r)| (r / inner(r)).ln()).sum();
    let mut out = Vec::new();
    for (p, dir, reach) in sides {
        let d0 = inner(reach);
        let span = (reach / d0).ln();
        let m = ((grid.u_cells as f64 * span / total).round() as usize).max(4);
        out.push((p + dir * 0.5 * d0, d0));
        let step = span / m as f64;
        for i in 0..m {
            let (a, b) = (d0 * (i as f64 * step).exp(), d0 * ((i + 1) as f64 * step).exp());
            out.push((p + dir * (a * b).sqrt(), b - a));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct PathEnsemble {
    pub label: String,
    pub alpha: f64,
    pub grid: SimulationGrid,
    pub replications: usize,
    pub cells: usize,
    pub perturbed: usize,
    /// Row-major `replications x t_grid`.
    pub values: Vec<f64>,
}

impl PathEnsemble {
    pub fn times(&self) -> usize {
        self.grid.t_grid.len()
    }

    pub fn path(&self, rep: usize) -> &[f64] {
        let t = self.times();
        &self.values[rep * t..(rep + 1) * t]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.times()).copied().collect()
    }
}

pub fn simulate_paths(spec: &KernelSpec, grid: &SimulationGrid, replications: usize) -> Result<PathEnsemble> {
    let disc = Discretization::build(spec, grid)?;
    simulate_with(spec, grid, &disc, replications)
}

pub fn simulate_with(
    spec: &KernelSpec,
    grid: &SimulationGrid,
    disc: &Discretization,
    replications: usize,
) -> Result<PathEnsemble> {
    if replications == 0 {
        return Err(Error::invalid("replications", "must be positive"));
    }
    let times = grid.t_grid.len();
    let mut values = vec![0.0; replications * times];
    if disc.cells() > 0 {
        values
            .par_chunks_mut(times)
            .enumerate()
            .for_each(|(rep, out)| disc.path(grid.seed, rep as u64, out));
    }
    Ok(PathEnsemble {
        label: spec.label.clone(),
        alpha: disc.alpha,
        grid: grid.clone(),
        replications,
        cells: disc.cells(),
        perturbed: disc.perturbed,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleEstimate {
    pub sigma: f64,
    pub se: f64,
}

pub const BOOTSTRAP: usize = 200;

/// `theta = c / median|x|` for `c` in `{0.25, 0.5, 0.75, 1}`.
pub fn default_theta_grid(x: &[f64]) -> Result<Vec<f64>> {
    let mut a: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    if a.is_empty() {
        return Err(Error::invalid("ensemble", "no replications"));
    }
    let mid = a.len() / 2;
    let (_, m, _) = a.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::invalid("ensemble", "degenerate sample: median |X| is zero"));
    }
    Ok([0.25, 0.5, 0.75, 1.0].iter().map(|c| c / m).collect())
}

/// `sigma^alpha` from `-ln|phi(theta)| = sigma^alpha |theta|^alpha` by least
/// squares, reading the sample through `idx`.
fn fit_scale_alpha(x: &[f64], idx: Option<&[usize]>, theta: &[f64], alpha: f64) -> f64 {
    let n = idx.map_or(x.len(), |i| i.len()) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for &th in theta {
        let (mut c, mut s) = (0.0, 0.0);
        let mut acc = |v: f64| {
            let (sn, cs) = (th * v).sin_cos();
            c += cs;
            s += sn;
        };
        match idx {
            Some(i) => i.iter().for_each(|&k| acc(x[k])),
            None => x.iter().for_each(|&v| acc(v)),
        }
        let l = -((c / n).hypot(s / n)).ln();
        let p = th.abs().powf(alpha);
        num += l * p;
        den += p * p;
    }
    num / den
}

fn check_theta(theta: &[f64]) -> Result<()> {
    if theta.is_empty() || theta.iter().any(|t| *t == 0.0 || !t.is_finite()) {
        return Err(Error::invalid("theta_grid", "need nonzero finite frequencies"));
    }
    Ok(())
}

fn bootstrap_indices(seed: u64, n: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b007);
    (0..BOOTSTRAP).map(move |_| (0..n).map(|_| rng.gen_range(0..n)).collect())
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn column_checked(e: &PathEnsemble, j: usize) -> Result<Vec<f64>> {
    if j >= e.times() {
        return Err(Error::invalid("t_index", "out of range"));
    }
    let x = e.column(j);
    if x.is_empty() || x.iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("ensemble", "degenerate: every value is zero"));
    }
    Ok(x)
}

/// Scale of `X(t_j)` from the empirical characteristic function, with a
/// bootstrap standard error.
pub fn empirical_scale(e: &PathEnsemble, t_index: usize, theta_grid: &[f64]) -> Result<ScaleEstimate> {
    check_theta(theta_grid)?;
    let x = column_checked(e, t_index)?;
    let a = e.alpha;
    let sigma = fit_scale_alpha(&x, None, theta_grid, a).powf(1.0 / a);
    let boots: Vec<Vec<usize>> = bootstrap_indices(e.grid.seed, x.len()).collect();
    let reps: Vec<f64> = boots
        .par_iter()
        .map(|i| fit_scale_alpha(&x, Some(i), theta_grid, a).powf(1.0 / a))
        .collect();
    Ok(ScaleEstimate {
        sigma,
        se: std_dev(&reps),
    })
}

/// `sigma(t_num) / sigma(t_den)`, with both columns resampled jointly. Each
/// column uses its own default frequency grid.
pub fn scale_ratio(e: &PathEnsemble, num: usize, den: usize) -> Result<ScaleEstimate> {
    let (xn, xd) = (column_checked(e, num)?, column_checked(e, den)?);
    let (tn, td) = (default_theta_grid(&xn)?, default_theta_grid(&xd)?);
    let a = e.alpha;
    let ratio =
        |idx: Option<&[usize]>| (fit_scale_alpha(&xn, idx, &tn, a) / fit_scale_alpha(&xd, idx, &td, a)).powf(1.0 / a);
    let boots: Vec<Vec<usize>> = bootstrap_indices(e.grid.seed, xn.len()).collect();
    let reps: Vec<f64> = boots.par_iter().map(|i| ratio(Some(i))).collect();
    Ok(ScaleEstimate {
        sigma: ratio(None),
        se: std_dev(&reps),
    })
}
