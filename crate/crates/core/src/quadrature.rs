//! One-dimensional rules: adaptive Gauss–Kronrod (7/15) and Gauss–Legendre.

use crate::scalar::CompensatedSum;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Value and error estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Plain 15-point Kronrod rule. The error uses the usual QUADPACK scaling of
/// the Kronrod/Gauss difference, which is far less pessimistic than the raw
/// difference on smooth integrands.
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Estimate {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut fv = [0.0; 15];
    fv[7] = f(c);
    for j in 0..7 {
        let x = h * XGK[j];
        fv[j] = f(c - x);
        fv[14 - j] = f(c + x);
    }
    let mut k = fv[7] * WGK[7];
    let mut g = fv[7] * WG[3];
    for j in 0..7 {
        let s = fv[j] + fv[14 - j];
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    let mean = 0.5 * k;
    let mut asc = WGK[7] * (fv[7] - mean).abs();
    for j in 0..7 {
        asc += WGK[j] * ((fv[j] - mean).abs() + (fv[14 - j] - mean).abs());
    }
    let asc = asc * h.abs();
    let mut err = ((k - g) * h).abs();
    if asc != 0.0 && err != 0.0 {
        err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
    }
    Estimate {
        value: k * h,
        error: err.max(50.0 * f64::EPSILON * (k * h).abs()),
    }
}

/// Globally adaptive GK15: repeatedly bisects the interval with the largest
/// error until `error <= max(abs_tol, rel_tol |value|)` or `max_splits`
/// bisections have been made. Returns the estimate and whether it converged.
pub fn adaptive<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_splits: usize,
) -> (Estimate, bool) {
    if a == b {
        return (Estimate::default(), true);
    }
    let first = gk15(f, a, b);
    let mut parts: Vec<(f64, f64, Estimate)> = vec![(a, b, first)];
    let mut splits = 0;
    loop {
        let (value, error) = totals(&parts);
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return (Estimate { value, error }, true);
        }
        if splits >= max_splits {
            return (Estimate { value, error }, false);
        }
        let (idx, _) = parts.iter().enumerate().fold(
            (0, -1.0),
            |best, (i, p)| if p.2.error > best.1 { (i, p.2.error) } else { best },
        );
        let (lo, hi, _) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            return (Estimate { value, error }, false);
        }
        parts.push((lo, mid, gk15(f, lo, mid)));
        parts.push((mid, hi, gk15(f, mid, hi)));
        splits += 1;
    }
}

fn totals(parts: &[(f64, f64, Estimate)]) -> (f64, f64) {
    // order-independent: sort by left endpoint before summing
    let mut idx: Vec<usize> = (0..parts.len()).collect();
    idx.sort_by(|&i, &j| parts[i].0.total_cmp(&parts[j].0));
    let mut v = CompensatedSum::new();
    let mut e = 0.0;
    for i in idx {
        v.add(parts[i].2.value);
        e += parts[i].2.error;
    }
    (v.value(), e)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Fixed Gauss–Legendre rule mapped to `[a, b]`.
pub fn gl_apply<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = CompensatedSum::new();
    for (x, w) in rule.0.iter().zip(&rule.1) {
        s.add(w * f(c + h * x));
    }
    s.value() * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk15_integrates_polynomials_exactly() {
        let e = gk15(&mut |x: f64| x.powi(20) - 3.0 * x, -1.0, 2.0);
        let exact = (2f64.powi(21) + 1.0) / 21.0 - 4.5;
        assert!((e.value - exact).abs() < 1e-10 * exact.abs());
    }

    #[test]
    fn adaptive_handles_sqrt_endpoint() {
        let (e, ok) = adaptive(&mut |x: f64| x.sqrt(), 0.0, 1.0, 1e-14, 1e-12, 200);
        assert!(ok);
        assert!((e.value - 2.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn adaptive_reports_failure_on_budget() {
        let (_, ok) = adaptive(&mut |x: f64| 1.0 / x.abs().sqrt(), -1.0, 1.0, 1e-15, 1e-15, 3);
        assert!(!ok);
    }

    #[test]
    fn gauss_legendre_weights() {
        for n in [1, 2, 5, 16, 64] {
            let (x, w) = gauss_legendre(n);
            let s: f64 = w.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n}");
            // exact for degree 2n - 1
            let d = 2 * n - 2;
            let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(d as i32)).sum();
            assert!((m - 2.0 / (d as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
        let r = gauss_legendre(64);
        let v = gl_apply(&mut |x: f64| x.exp(), 0.0, 3.0, &r);
        assert!((v - (3f64.exp() - 1.0)).abs() < 1e-12);
    }
}
