//! Integrals over the whole line of `|sum_i c_i G(v_i, m_i (u + o_i)) + d|^alpha`.
//!
//! The line is cut at the singular points `-o_i`. Each side is mapped to
//! logarithmic coordinates `u = p +- e^y` and integrated in chunks ("shells")
//! of whole log-periods, so that far from the cut points consecutive shells
//! shrink by a nearly constant ratio. Inside a shell the integrand is split at
//! every point where a profile breakpoint or a period wrap is crossed, which
//! leaves smooth pieces for Gauss–Kronrod. The unexplored remainder beyond the
//! last shell is the geometric sum of the observed ratio (a power-law tail).

use crate::kernel::AtomKernel;
use crate::quadrature::{adaptive, gauss_legendre};
use crate::scalar::CompensatedSum;

/// `coef * G(v, m (u + o))`, with `m > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub v: f64,
    pub m: f64,
    pub o: f64,
}

impl Term {
    pub fn new(coef: f64, v: f64, m: f64, o: f64) -> Self {
        Self { coef, v, m, o }
    }

    /// The same term read at the argument `k u + g`.
    pub fn compose(&self, k: f64, g: f64) -> Term {
        Term {
            coef: self.coef,
            v: self.v,
            m: self.m * k,
            o: (self.o + g) / k,
        }
    }
}

/// A linear combination of shifted and dilated copies of one atom's kernel.
#[derive(Debug, Clone)]
pub struct Combination<'a> {
    pub atom: &'a AtomKernel,
    pub terms: Vec<Term>,
    pub constant: f64,
}

impl<'a> Combination<'a> {
    pub fn new(atom: &'a AtomKernel, terms: Vec<Term>) -> Self {
        Self {
            atom,
            terms,
            constant: 0.0,
        }
    }

    /// Terms `theta_j G(v, t_j + u) - (sum theta_j) G(v, u)`.
    pub fn increments(atom: &'a AtomKernel, v: f64, t: &[f64], theta: &[f64]) -> Self {
        let mut terms = Vec::with_capacity(t.len() + 1);
        let mut base = CompensatedSum::new();
        for (&tj, &th) in t.iter().zip(theta) {
            if th == 0.0 || tj == 0.0 {
                continue;
            }
            terms.push(Term::new(th, v, 1.0, tj));
            base.add(th);
        }
        let b = base.value();
        if b != 0.0 {
            terms.push(Term::new(-b, v, 1.0, 0.0));
        }
        Self::new(atom, terms)
    }

    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        let mut s = self.constant;
        for t in &self.terms {
            s += t.coef * self.atom.g(t.v, t.m * (u + t.o));
        }
        s
    }

    /// Value at `u = p + d` where `offsets[i] = p + o_i` was precomputed, so
    /// that the distance to a term's own singular point is exact.
    #[inline]
    fn value_local(&self, offsets: &[f64], d: f64) -> f64 {
        let mut s = self.constant;
        for (t, c) in self.terms.iter().zip(offsets) {
            s += t.coef * self.atom.g(t.v, t.m * (c + d));
        }
        s
    }

    pub fn is_trivial(&self) -> bool {
        self.constant == 0.0 && (self.atom.is_zero() || self.terms.iter().all(|t| t.coef == 0.0))
    }

    /// Sorted distinct points `-o_i`.
    pub fn singular_points(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.terms.iter().filter(|t| t.coef != 0.0).map(|t| -t.o).collect();
        p.sort_by(f64::total_cmp);
        p.dedup();
        p
    }

    /// For the side anchored at `p` with direction `sigma`, append the `y`
    /// values in `(ya, yb)` at which some term crosses a profile breakpoint.
    fn push_breakpoints(&self, offsets: &[f64], sigma: f64, ya: f64, yb: f64, out: &mut Vec<f64>) {
        let a = self.atom;
        let (da, db) = (ya.exp(), yb.exp());
        for (t, &c) in self.terms.iter().zip(offsets) {
            if t.coef == 0.0 {
                continue;
            }
            let xa = c + sigma * da;
            let xb = c + sigma * db;
            let positive = if xa != 0.0 { xa > 0.0 } else { xb > 0.0 };
            if a.side_is_zero(positive) {
                continue;
            }
            let (lo, hi) = if xa.abs() <= xb.abs() {
                (xa.abs(), xb.abs())
            } else {
                (xb.abs(), xa.abs())
            };
            if hi == 0.0 {
                continue;
            }
            let l1 = (t.m * lo).ln();
            let l2 = (t.m * hi).ln();
            // profile argument s ln(m|x|) + v runs over [z1, z2]
            let (z1, z2) = {
                let (p1, p2) = (a.s * l1 + t.v, a.s * l2 + t.v);
                if p1 <= p2 {
                    (p1, p2)
                } else {
                    (p2, p1)
                }
            };
            for &b in a.breakpoints(positive) {
                let k0 = ((z1 - b) / a.q).ceil();
                let k1 = ((z2 - b) / a.q).floor();
                if !(k0.is_finite() && k1.is_finite()) || k1 - k0 > 1e5 {
                    continue;
                }
                let mut k = k0;
                while k <= k1 {
                    let target = ((b + k * a.q - t.v) / a.s).exp() / t.m;
                    let x = if positive { target } else { -target };
                    let d = sigma * (x - c);
                    if d > 0.0 {
                        let y = d.ln();
                        if y > ya && y < yb {
                            out.push(y);
                        }
                    }
                    k += 1.0;
                }
            }
        }
    }

    /// Chunk length in `y`: a whole number of log-periods, at least `ln 2`.
    fn chunk_len(&self) -> f64 {
        let mut p = self.atom.log_period();
        if self.atom.b1() < 0.0 {
            p *= 2.0;
        }
        let m = p.max(1e-3);
        m * (std::f64::consts::LN_2 / m).ceil()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Converged,
    Divergent,
    Inconclusive,
}

#[derive(Debug, Clone, Copy)]
pub struct LineConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Bisections allowed per smooth piece.
    pub max_splits: usize,
    /// Largest `|u - p|` explored before the tail model takes over, relative
    /// to the spread of the cut points (or 1). Far out, `G(t + u) - G(u)`
    /// loses about `log10(u / t)` digits to cancellation.
    pub u_max: f64,
    /// Smallest `|u - p|` explored, relative to the side's starting scale.
    pub pad: f64,
}

impl Default for LineConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-7,
            abs_tol: 1e-14,
            max_splits: 50,
            u_max: 1e8,
            pad: 1e-250,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineResult {
    pub value: f64,
    /// Compare against the caller's tolerance; `status` only says whether
    /// the tail model held.
    pub error: f64,
    pub status: Status,
    /// Contribution of each side, left to right (diagnostics).
    pub sides: Vec<f64>,
}

impl LineResult {
    fn zero() -> Self {
        Self {
            value: 0.0,
            error: 0.0,
            status: Status::Converged,
            sides: Vec::new(),
        }
    }
}

struct Side {
    p: f64,
    sigma: f64,
    /// Down-shells start here; up-shells (outer sides only) too.
    y_top: f64,
    outer: bool,
}

fn sides_of(points: &[f64]) -> Vec<Side> {
    let n = points.len();
    let spread = points[n - 1] - points[0];
    let y_out = spread.max(1.0).ln();
    let mut out = vec![Side {
        p: points[0],
        sigma: -1.0,
        y_top: y_out,
        outer: true,
    }];
    for w in points.windows(2) {
        let half = 0.5 * (w[1] - w[0]);
        let y = half.ln();
        out.push(Side {
            p: w[0],
            sigma: 1.0,
            y_top: y,
            outer: false,
        });
        out.push(Side {
            p: w[1],
            sigma: -1.0,
            y_top: y,
            outer: false,
        });
    }
    out.push(Side {
        p: points[n - 1],
        sigma: 1.0,
        y_top: y_out,
        outer: true,
    });
    out
}

struct Ctx<'c, 'a> {
    comb: &'c Combination<'a>,
    alpha: f64,
    cfg: LineConfig,
    scale: f64,
    err: f64,
    status: Status,
}

impl Ctx<'_, '_> {
    fn chunk(&mut self, offsets: &[f64], sigma: f64, ya: f64, yb: f64, crude: bool) -> f64 {
        let mut cuts = vec![ya];
        self.comb.push_breakpoints(offsets, sigma, ya, yb, &mut cuts);
        cuts.push(yb);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-13 * (1.0 + b.abs()));
        if cuts.len() == 1 {
            return 0.0;
        }
        let alpha = self.alpha;
        let comb = self.comb;
        let mut f = |y: f64| {
            let d = y.exp();
            let g = comb.value_local(offsets, sigma * d);
            if g == 0.0 {
                0.0
            } else {
                g.abs().powf(alpha) * d
            }
        };
        let pieces = (cuts.len() - 1) as f64;
        let mut sum = CompensatedSum::new();
        for w in cuts.windows(2) {
            if crude {
                sum.add(crate::quadrature::gk15(&mut f, w[0], w[1]).value);
                continue;
            }
            let abs = self.cfg.abs_tol.max(0.01 * self.cfg.rel_tol * self.scale) / pieces;
            // a piece that misses its own target only matters through the
            // total error, which is checked at the end
            let (e, _) = adaptive(&mut f, w[0], w[1], abs, self.cfg.rel_tol, self.cfg.max_splits);
            self.err += e.error;
            sum.add(e.value);
        }
        sum.value()
    }

    /// Shells from `y0` outward in direction `dir` (-1 towards the cut point,
    /// +1 towards infinity) until the geometric tail is negligible.
    fn shells(&mut self, offsets: &[f64], sigma: f64, y0: f64, dir: f64, y_stop: f64) -> f64 {
        let len = self.comb.chunk_len();
        let mut total = CompensatedSum::new();
        let mut history: Vec<f64> = Vec::new();
        let mut partial: Vec<f64> = Vec::new();
        let mut k = 0usize;
        loop {
            let (ya, yb) = if dir < 0.0 {
                (y0 - (k + 1) as f64 * len, y0 - k as f64 * len)
            } else {
                (y0 + k as f64 * len, y0 + (k + 1) as f64 * len)
            };
            let s = self.chunk(offsets, sigma, ya, yb, false);
            total.add(s);
            history.push(s);
            partial.push(total.value());
            k += 1;
            let n = history.len();
            let target = self.cfg.rel_tol * self.scale.max(total.value()).max(self.cfg.abs_tol / self.cfg.rel_tol);
            let tiny = 1e-3 * self.cfg.abs_tol;
            if n >= 3 && history[n - 3..].iter().all(|&x| x <= tiny) {
                return total.value();
            }
            if n >= 3 {
                let r = history[n - 1] / history[n - 2];
                let rp = history[n - 2] / history[n - 3];
                if r.is_finite() && rp.is_finite() && r < 1.0 && rp < 1.0 && (r - rp).abs() < 0.25 {
                    let tail = history[n - 1] * r / (1.0 - r);
                    if tail <= 0.1 * target {
                        let spread = ((r - rp).abs() / (1.0 - r)).min(1.0);
                        self.err += tail * (2.0 * spread + 1e-9);
                        return total.value() + tail;
                    }
                }
                // a slow power-law tail: accept the extrapolation once the
                // ratios have settled, even if the tail itself is large
                if let Some((tail, err)) = settled_tail(&history) {
                    if err <= 0.1 * target {
                        self.err += err;
                        return total.value() + tail;
                    }
                }
                if dir > 0.0 && n >= 8 {
                    // growth only counts once the ratios have settled; the
                    // first shells can bulge before the power law sets in
                    let ratios: Vec<f64> = history[n - 4..].windows(2).map(|w| w[1] / w[0]).collect();
                    let grow = ratios
                        .iter()
                        .all(|r| *r >= 0.99 && (r - ratios[2]).abs() <= 0.05 * ratios[2]);
                    if grow && partial[n - 4] > 0.0 && partial[n - 1] >= 1.5 * partial[n - 4] {
                        self.status = Status::Divergent;
                        return f64::INFINITY;
                    }
                }
            }
            let beyond = if dir < 0.0 { ya <= y_stop } else { yb >= y_stop };
            // settling ratios earn extra shells while unit-width features
            // are still resolvable in log coordinates
            let overrun = dir > 0.0 && yb < y0 + RESOLVABLE_LOG_SPAN && settled_tail(&history).is_some();
            if beyond && !overrun {
                return self.finish(&history, total.value(), dir);
            }
        }
    }

    fn finish(&mut self, history: &[f64], total: f64, dir: f64) -> f64 {
        let n = history.len();
        if n < 3 {
            self.status = Status::Inconclusive;
            return total;
        }
        if let Some((tail, err)) = settled_tail(history) {
            self.err += err;
            return total + tail;
        }
        let ratios: Vec<f64> = history[n - 3..].windows(2).map(|w| w[1] / w[0]).collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let r = ratios[ratios.len() - 1];
        if r.is_finite() && r < 1.0 && mean < 0.99 {
            let tail = history[n - 1] * r / (1.0 - r);
            let spread = ((ratios[0] - r).abs() / (1.0 - r)).min(1.0);
            self.err += tail * (2.0 * spread + 1e-9);
            return total + tail;
        }
        if dir > 0.0 && mean >= 0.99 {
            self.status = Status::Divergent;
            return f64::INFINITY;
        }
        self.status = Status::Inconclusive;
        total
    }
}

/// Past `|u| ~ 1e8` times the spread of the singular points, rounding of
/// `ln |u|` moves unit-width pieces by more than the tail model tolerates.
const RESOLVABLE_LOG_SPAN: f64 = 18.5;

/// Ratios `r_k -> r_inf` with `r_k - r_inf ~ rho^k`, fitted to three
/// consecutive ratios. `None` unless the increments shrink monotonically.
fn drift_model(r: &[f64]) -> Option<(f64, f64)> {
    let (d1, d2) = (r[1] - r[0], r[2] - r[1]);
    if d1 == 0.0 || d2 == 0.0 {
        return Some((r[2], 0.0));
    }
    let rho = d2 / d1;
    if !(rho > 0.0 && rho < 0.9) {
        return None;
    }
    Some((r[2] + d2 * rho / (1.0 - rho), rho))
}

/// `h * sum_j prod_{i <= j} r_i` with `r_i = r_inf + (r_last - r_inf) rho^i`.
fn modelled_tail(h: f64, r_last: f64, r_inf: f64, rho: f64) -> f64 {
    let mut sum = CompensatedSum::new();
    let mut term = h;
    let mut dev = r_last - r_inf;
    for _ in 0..100_000 {
        dev *= rho;
        term *= r_inf + dev;
        sum.add(term);
        if term.abs() <= 1e-17 * sum.value().abs() {
            break;
        }
    }
    sum.value()
}

/// Tail beyond the last shell and its error, once the shell ratios have
/// settled clearly below one. A ratio still drifting geometrically is
/// extrapolated, and the error is the disagreement with the same model
/// fitted one shell earlier.
fn settled_tail(history: &[f64]) -> Option<(f64, f64)> {
    let n = history.len();
    if n < 6 {
        return None;
    }
    let ratios: Vec<f64> = history[n - 6..].windows(2).map(|w| w[1] / w[0]).collect();
    if !ratios.iter().all(|x| x.is_finite() && *x > 0.0 && *x < 0.98) {
        return None;
    }
    let r = ratios[4];
    let spread = ratios[2..].iter().map(|x| (x - r).abs()).fold(0.0, f64::max) / (1.0 - r);
    if spread > 1e-2 {
        return None;
    }
    let h = history[n - 1];
    if let (Some((inf, rho)), Some((inf_p, rho_p))) = (drift_model(&ratios[2..]), drift_model(&ratios[1..4])) {
        if inf < 0.98 && inf_p < 0.98 {
            let tail = modelled_tail(h, r, inf, rho);
            let prev = modelled_tail(h, r, inf_p, rho_p);
            return Some((tail, (tail - prev).abs() + 1e-9 * tail));
        }
    }
    // no clean drift: plain geometric tail, charged for the ratio spread
    let tail = h * r / (1.0 - r);
    Some((tail, tail * (2.0 * spread + 1e-9)))
}

/// `int_R |comb(u)|^alpha du`.
pub fn integrate_line(comb: &Combination, alpha: f64, cfg: &LineConfig) -> LineResult {
    if comb.is_trivial() {
        return LineResult::zero();
    }
    let points = comb.singular_points();
    if points.is_empty() {
        // a nonzero constant is never integrable
        return LineResult {
            value: f64::INFINITY,
            error: 0.0,
            status: Status::Divergent,
            sides: Vec::new(),
        };
    }
    let sides = sides_of(&points);
    let mut ctx = Ctx {
        comb,
        alpha,
        cfg: *cfg,
        scale: 0.0,
        err: 0.0,
        status: Status::Converged,
    };
    let offsets: Vec<Vec<f64>> = sides
        .iter()
        .map(|s| comb.terms.iter().map(|t| s.p + t.o).collect())
        .collect();
    // crude pass over the first chunk of every side sets the absolute scale
    let len = comb.chunk_len();
    let mut scale: f64 = 0.0;
    for (s, off) in sides.iter().zip(&offsets) {
        scale = scale.max(ctx.chunk(off, s.sigma, s.y_top - len, s.y_top, true));
        if s.outer {
            scale = scale.max(ctx.chunk(off, s.sigma, s.y_top, s.y_top + len, true));
        }
    }
    ctx.scale = scale;
    let mut contributions = Vec::with_capacity(sides.len());
    for (s, off) in sides.iter().zip(&offsets) {
        let y_down = s.y_top + cfg.pad.ln();
        let mut v = ctx.shells(off, s.sigma, s.y_top, -1.0, y_down);
        if s.outer && v.is_finite() {
            let y_up = s.y_top + cfg.u_max.ln().max(10.0 * len);
            v += ctx.shells(off, s.sigma, s.y_top, 1.0, y_up);
        }
        contributions.push(v);
        if ctx.status == Status::Divergent {
            break;
        }
    }
    let value: f64 = if ctx.status == Status::Divergent {
        f64::INFINITY
    } else {
        contributions.iter().copied().collect::<CompensatedSum>().value()
    };
    LineResult {
        value,
        error: ctx.err,
        status: ctx.status,
        sides: contributions,
    }
}

/// Quadrature nodes and weights on `[-window, window]` aligned with the
/// breakpoints of several combinations, for repeated weighted sums.
#[derive(Debug, Clone, Default)]
pub struct NodeSet {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct NodeConfig {
    pub window: f64,
    /// Innermost `|u - p|` relative to the local gap.
    pub pad: f64,
    /// Longest piece in `y`.
    pub max_piece: f64,
    pub order: usize,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            window: 50.0,
            pad: 1e-10,
            max_piece: 0.25,
            order: 6,
        }
    }
}

impl NodeSet {
    pub fn build(combs: &[&Combination], cfg: &NodeConfig) -> NodeSet {
        let rule = gauss_legendre(cfg.order);
        let mut pts: Vec<f64> = combs
            .iter()
            .flat_map(|c| c.singular_points())
            .filter(|p| p.abs() < cfg.window)
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
        if pts.is_empty() {
            pts.push(0.0);
        }
        let n = pts.len();
        // (anchor, direction, top distance)
        let mut segs: Vec<(f64, f64, f64)> = Vec::new();
        segs.push((pts[0], -1.0, cfg.window + pts[0]));
        for w in pts.windows(2) {
            let h = 0.5 * (w[1] - w[0]);
            segs.push((w[0], 1.0, h));
            segs.push((w[1], -1.0, h));
        }
        segs.push((pts[n - 1], 1.0, cfg.window - pts[n - 1]));

        let mut out = NodeSet::default();
        for (p, sigma, top) in segs {
            if top <= 0.0 {
                continue;
            }
            let yb = top.ln();
            let ya = (top * cfg.pad).ln();
            let mut cuts = vec![ya, yb];
            for c in combs {
                let off: Vec<f64> = c.terms.iter().map(|t| p + t.o).collect();
                c.push_breakpoints(&off, sigma, ya, yb, &mut cuts);
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            for w in cuts.windows(2) {
                let m = ((w[1] - w[0]) / cfg.max_piece).ceil().max(1.0) as usize;
                let h = (w[1] - w[0]) / m as f64;
                for j in 0..m {
                    let (a, b) = (w[0] + j as f64 * h, w[0] + (j + 1) as f64 * h);
                    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
                    for (x, wt) in rule.0.iter().zip(&rule.1) {
                        let y = c + r * x;
                        let d = y.exp();
                        out.u.push(p + sigma * d);
                        out.w.push(wt * r * d);
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}
