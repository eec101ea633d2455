//! Gauss–Legendre panel quadrature and Legendre-expansion utilities.
//!
//! Everything in the solver that integrates does so on composite Gauss–Legendre
//! panels. Besides plain rules this module provides the two families of
//! product-integration moments the solver needs:
//!
//! - exponential moments `∫ e^{c(t−τ)} P_n(τ) dτ`, used to integrate smooth
//!   amplitudes against stiff exponentials (transverse resolvent cumulatives)
//!   and against oscillatory factors (Filon tail of the Fourier synthesis);
//! - logarithmic moments `∫ P_n(τ) ln|x−τ| dτ`, used by the corrected Nyström
//!   quadrature for the log-singular interface kernel.

use num_complex::Complex64 as C64;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [−1, 1].
///
/// Newton iteration on Pₙ with the three-term recurrence; nodes are returned in
/// ascending order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess for the i-th positive root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_deriv(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        let (_, d) = legendre_with_deriv(n, 0.0);
        nodes[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

/// (Pₙ(x), Pₙ′(x)) by the standard recurrence.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 1..n {
        let jf = j as f64;
        let p2 = ((2.0 * jf + 1.0) * x * p1 - jf * p0) / (jf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// P₀(x) … P_nmax(x).
pub fn legendre_all(x: f64, nmax: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(nmax + 1);
    p.push(1.0);
    if nmax == 0 {
        return p;
    }
    p.push(x);
    for n in 1..nmax {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * x * p[n] - nf * p[n - 1]) / (nf + 1.0);
        p.push(next);
    }
    p
}

/// Legendre functions of the second kind Q₀(x) … Q_nmax(x).
///
/// For |x| < 1 these are the principal-value branch (Q₀ = atanh x); for
/// |x| > 1, Q₀ = ½ ln((x+1)/(x−1)). Upward recurrence, adequate for the
/// small orders used here.
pub fn legendre_q_all(x: f64, nmax: usize) -> Vec<f64> {
    let q0 = if x.abs() < 1.0 {
        x.atanh()
    } else {
        0.5 * ((x + 1.0).abs() / (x - 1.0).abs()).ln()
    };
    let mut q = Vec::with_capacity(nmax + 1);
    q.push(q0);
    if nmax == 0 {
        return q;
    }
    q.push(x * q0 - 1.0);
    for n in 1..nmax {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * x * q[n] - nf * q[n - 1]) / (nf + 1.0);
        q.push(next);
    }
    q
}

/// Moments μₙ = ∫_{−1}^{1} Pₙ(τ) ln|x−τ| dτ for n = 0..=nmax.
///
/// μ₀ has the elementary closed form; for n ≥ 1,
/// μₙ = 2 (Q_{n+1}(x) − Q_{n−1}(x)) / (2n+1), which follows from Neumann's
/// formula for Qₙ and vanishes as x → ∞.
pub fn log_moments(x: f64, nmax: usize) -> Vec<f64> {
    let mut mu = Vec::with_capacity(nmax + 1);
    let term = |u: f64| if u == 0.0 { 0.0 } else { u * u.abs().ln() };
    mu.push(term(1.0 + x) + term(1.0 - x) - 2.0);
    if nmax == 0 {
        return mu;
    }
    let q = legendre_q_all(x, nmax + 1);
    for n in 1..=nmax {
        mu.push(2.0 * (q[n + 1] - q[n - 1]) / (2.0 * n as f64 + 1.0));
    }
    mu
}

const MOMENT_RECURRENCE_CUT: f64 = 50.0;
const SUBRULE_N: usize = 64;

/// Lower exponential moments Fₙ(c, t) = ∫_{−1}^{t} e^{c(t−τ)} Pₙ(τ) dτ,
/// n = 0..=nmax, for Re c ≤ 0 (decaying weight) or purely oscillatory c.
///
/// Small |c| uses a 64-point Gauss rule on [−1, t]; large |c| uses the stable
/// upward recurrence seeded by the closed forms for F₀ and F₁.
pub fn exp_moments_lower(c: C64, t: f64, nmax: usize) -> Vec<C64> {
    if c.norm() <= MOMENT_RECURRENCE_CUT {
        exp_moments_lower_quad(c, t, nmax)
    } else {
        exp_moments_lower_rec(c, t, nmax)
    }
}

fn exp_moments_lower_quad(c: C64, t: f64, nmax: usize) -> Vec<C64> {
    let (xs, ws) = gl_cached(SUBRULE_N);
    let mut f = vec![C64::new(0.0, 0.0); nmax + 1];
    let half = 0.5 * (t + 1.0);
    if half <= 0.0 {
        return f;
    }
    for (&u, &w) in xs.iter().zip(ws.iter()) {
        let tau = -1.0 + half * (u + 1.0);
        let e = (c * (t - tau)).exp() * (w * half);
        let p = legendre_all(tau, nmax);
        for n in 0..=nmax {
            f[n] += e * p[n];
        }
    }
    f
}

fn exp_moments_lower_rec(c: C64, t: f64, nmax: usize) -> Vec<C64> {
    let x = t + 1.0;
    let ecx = (c * x).exp();
    let mut f = Vec::with_capacity(nmax + 1);
    f.push((ecx - 1.0) / c);
    if nmax >= 1 {
        f.push((t * (ecx - 1.0) - x * ecx) / c + (ecx - 1.0) / (c * c));
    }
    let p = legendre_all(t, nmax + 1);
    for n in 1..nmax {
        let nf = n as f64;
        let next = f[n - 1] + ((2.0 * nf + 1.0) * f[n] - (p[n + 1] - p[n - 1])) / c;
        f.push(next);
    }
    f
}

/// Full-interval moments Ẽₙ(c) = ∫_{−1}^{1} e^{cτ} Pₙ(τ) dτ, n = 0..=nmax.
pub fn exp_moments_full(c: C64, nmax: usize) -> Vec<C64> {
    if c.norm() <= MOMENT_RECURRENCE_CUT {
        let (xs, ws) = gl_cached(SUBRULE_N);
        let mut f = vec![C64::new(0.0, 0.0); nmax + 1];
        for (&u, &w) in xs.iter().zip(ws.iter()) {
            let e = (c * u).exp() * w;
            let p = legendre_all(u, nmax);
            for n in 0..=nmax {
                f[n] += e * p[n];
            }
        }
        f
    } else {
        let mut f = Vec::with_capacity(nmax + 1);
        let (ep, em) = (c.exp(), (-c).exp());
        f.push((ep - em) / c);
        if nmax >= 1 {
            f.push((c * (ep + em) - (ep - em)) / (c * c));
        }
        for n in 1..nmax {
            let nf = n as f64;
            let next = f[n - 1] - (2.0 * nf + 1.0) * f[n] / c;
            f.push(next);
        }
        f
    }
}

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Memoized Gauss–Legendre rules (the solver only ever asks for a few sizes;
/// each computed rule is leaked once).
pub fn gl_cached(n: usize) -> (&'static [f64], &'static [f64]) {
    static RULES: OnceLock<Mutex<HashMap<usize, (&'static [f64], &'static [f64])>>> =
        OnceLock::new();
    let rules = RULES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = rules.lock().unwrap();
    if let Some(&r) = guard.get(&n) {
        return r;
    }
    let (x, w) = gauss_legendre(n);
    let r = (
        &*Box::leak(x.into_boxed_slice()),
        &*Box::leak(w.into_boxed_slice()),
    );
    guard.insert(n, r);
    r
}

/// A fixed-order panel rule with the transforms the solver applies per panel:
/// nodal values → Legendre coefficients, barycentric interpolation, and
/// precomputed sub-rules for partial integrals ∫_{−1}^{xᵢ} at every node.
#[derive(Debug, Clone)]
pub struct PanelRule {
    pub n: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Row-major (n × n): coeffs[m] = Σ_i to_coeffs[m*n+i] · vals[i].
    to_coeffs: Vec<f64>,
    /// Barycentric weights for the GL nodes.
    bary: Vec<f64>,
    /// Per node i: 64-point sub-rule on [−1, nodes[i]] with Legendre values.
    partial: Vec<SubRule>,
}

#[derive(Debug, Clone)]
struct SubRule {
    taus: Vec<f64>,
    wts: Vec<f64>,
    /// leg[j*(nmax+1) + m] = P_m(taus[j]).
    leg: Vec<f64>,
}

impl PanelRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        // Exact nodal→coefficient transform: ĝ_m = (2m+1)/2 Σ w_i P_m(x_i) g_i.
        let mut to_coeffs = vec![0.0; n * n];
        for (i, (&x, &w)) in nodes.iter().zip(weights.iter()).enumerate() {
            let p = legendre_all(x, n - 1);
            for m in 0..n {
                to_coeffs[m * n + i] = (2.0 * m as f64 + 1.0) / 2.0 * w * p[m];
            }
        }
        let mut bary = vec![0.0; n];
        for i in 0..n {
            let mut w = 1.0;
            for j in 0..n {
                if j != i {
                    w /= nodes[i] - nodes[j];
                }
            }
            bary[i] = w;
        }
        let partial = nodes.iter().map(|&t| SubRule::new(t, n)).collect();
        PanelRule {
            n,
            nodes,
            weights,
            to_coeffs,
            bary,
            partial,
        }
    }

    /// Legendre coefficients of the degree-(n−1) interpolant of `vals`.
    pub fn to_coeffs(&self, vals: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut c = vec![C64::new(0.0, 0.0); n];
        for m in 0..n {
            let row = &self.to_coeffs[m * n..(m + 1) * n];
            let mut acc = C64::new(0.0, 0.0);
            for (a, v) in row.iter().zip(vals.iter()) {
                acc += v * *a;
            }
            c[m] = acc;
        }
        c
    }

    /// Barycentric interpolation of nodal values at τ ∈ [−1, 1].
    pub fn interpolate(&self, vals: &[C64], tau: f64) -> C64 {
        let mut num = C64::new(0.0, 0.0);
        let mut den = 0.0;
        for i in 0..self.n {
            let d = tau - self.nodes[i];
            if d.abs() < 1e-14 {
                return vals[i];
            }
            let t = self.bary[i] / d;
            num += vals[i] * t;
            den += t;
        }
        num / den
    }

    /// Fₙ(c, node_i) for n = 0..self.n−1, using the precomputed sub-rule when
    /// |c| is moderate and the recurrence otherwise.
    pub fn partial_exp_moments(&self, c: C64, node_idx: usize) -> Vec<C64> {
        let nmax = self.n - 1;
        if c.norm() <= MOMENT_RECURRENCE_CUT {
            let sub = &self.partial[node_idx];
            let t = self.nodes[node_idx];
            let mut f = vec![C64::new(0.0, 0.0); nmax + 1];
            for (j, (&tau, &w)) in sub.taus.iter().zip(sub.wts.iter()).enumerate() {
                let e = (c * (t - tau)).exp() * w;
                let leg = &sub.leg[j * (nmax + 1)..(j + 1) * (nmax + 1)];
                for n in 0..=nmax {
                    f[n] += e * leg[n];
                }
            }
            f
        } else {
            exp_moments_lower_rec(c, self.nodes[node_idx], nmax)
        }
    }

    /// Fₙ(c, t) for arbitrary t ∈ [−1, 1].
    pub fn partial_exp_moments_at(&self, c: C64, t: f64) -> Vec<C64> {
        exp_moments_lower(c, t, self.n - 1)
    }
}

impl SubRule {
    fn new(t: f64, n: usize) -> Self {
        let (xs, ws) = gauss_legendre(SUBRULE_N);
        let half = 0.5 * (t + 1.0);
        let mut taus = Vec::with_capacity(SUBRULE_N);
        let mut wts = Vec::with_capacity(SUBRULE_N);
        let mut leg = Vec::with_capacity(SUBRULE_N * n);
        for (&u, &w) in xs.iter().zip(ws.iter()) {
            let tau = -1.0 + half * (u + 1.0);
            taus.push(tau);
            wts.push(w * half);
            leg.extend(legendre_all(tau, n - 1));
        }
        SubRule { taus, wts, leg }
    }
}

/// Split [lo, hi] into panels no longer than `hmax`, forcing the interior
/// points of `breaks` as panel edges. Both endpoints are included; the edge
/// list is strictly increasing.
pub fn split_panels(lo: f64, hi: f64, breaks: &[f64], hmax: f64) -> Vec<(f64, f64)> {
    assert!(hi > lo && hmax > 0.0);
    let mut edges = vec![lo];
    let mut bks: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&b| b > lo + 1e-13 && b < hi - 1e-13)
        .collect();
    bks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    edges.extend(bks);
    edges.push(hi);
    let mut panels = Vec::new();
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let m = ((b - a) / hmax).ceil().max(1.0) as usize;
        let h = (b - a) / m as f64;
        for j in 0..m {
            let p0 = a + j as f64 * h;
            let p1 = if j + 1 == m { b } else { a + (j + 1) as f64 * h };
            panels.push((p0, p1));
        }
    }
    panels
}

/// Adaptive Gauss quadrature of a complex integrand (used by test oracles and
/// a few diagnostics; the solver proper is panel-based). Splits the worst
/// interval first under a fixed subdivision budget.
pub fn adaptive_quad<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64, tol: f64) -> C64 {
    fn gl25<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64) -> C64 {
        let (xs, ws) = gl_cached(25);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = C64::new(0.0, 0.0);
        for (&x, &w) in xs.iter().zip(ws.iter()) {
            acc += f(mid + half * x) * (w * half);
        }
        acc
    }
    // (err, a, b, value)
    let mut items: Vec<(f64, f64, f64, C64)> = Vec::new();
    let whole = gl25(f, a, b);
    items.push((f64::INFINITY, a, b, whole));
    for _ in 0..20_000 {
        let total_err: f64 = items.iter().map(|it| it.0).sum();
        if total_err < tol {
            break;
        }
        // Split the interval with the largest error estimate.
        let (idx, _) = items
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .0.partial_cmp(&y.1 .0).unwrap())
            .unwrap();
        let (_, ia, ib, ival) = items.swap_remove(idx);
        let m = 0.5 * (ia + ib);
        let left = gl25(f, ia, m);
        let right = gl25(f, m, b.min(ib));
        let err = (left + right - ival).norm();
        let child_err = if (ib - ia) < 1e-13 * (b - a).abs() {
            0.0
        } else {
            err
        };
        items.push((0.5 * child_err, ia, m, left));
        items.push((0.5 * child_err, m, ib, right));
    }
    items.iter().map(|it| it.3).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C64;

    #[test]
    fn gl_exactness_on_polynomials() {
        let (x, w) = gauss_legendre(16);
        // degree 31 monomial: ∫_{-1}^{1} t^30 dt = 2/31
        let s: f64 = x.iter().zip(&w).map(|(&t, &wi)| wi * t.powi(30)).sum();
        assert!((s - 2.0 / 31.0).abs() < 1e-14, "got {s}");
        let s1: f64 = x.iter().zip(&w).map(|(&t, &wi)| wi * t.powi(31)).sum();
        assert!(s1.abs() < 1e-14);
    }

    #[test]
    fn gl_weights_sum_to_two() {
        for n in [1, 2, 5, 16, 24, 64] {
            let (_, w) = gauss_legendre(n);
            let s: f64 = w.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn exp_moments_match_adaptive_quadrature() {
        let cases = [
            C64::new(-0.3, 0.0),
            C64::new(-4.0, 2.0),
            C64::new(-30.0, 10.0),
            C64::new(-120.0, 40.0),
            C64::new(0.0, 35.0),
            C64::new(0.0, 180.0),
            C64::new(-300.0, 0.0),
        ];
        for &c in &cases {
            for &t in &[-0.7, 0.13, 0.92, 1.0] {
                let f = exp_moments_lower(c, t, 15);
                for n in [0usize, 1, 3, 9, 15] {
                    let oracle =
                        adaptive_quad(&|tau| (c * (t - tau)).exp() * legendre_all(tau, n)[n],
                                      -1.0, t, 1e-14);
                    let scale = oracle.norm().max(1.0 / (1.0 + c.norm()));
                    assert!(
                        (f[n] - oracle).norm() <= 1e-11 * scale.max(1e-8),
                        "c={c} t={t} n={n}: {:?} vs {:?}",
                        f[n],
                        oracle
                    );
                }
            }
        }
    }

    #[test]
    fn full_moments_match_adaptive_quadrature() {
        for &c in &[C64::new(0.0, 3.0), C64::new(0.0, 90.0), C64::new(-2.0, 60.0)] {
            let f = exp_moments_full(c, 15);
            let scale = f[0].norm().max(1.0 / (1.0 + c.norm()));
            for n in [0usize, 2, 7, 15] {
                let oracle =
                    adaptive_quad(&|tau| (c * tau).exp() * legendre_all(tau, n)[n], -1.0, 1.0, 1e-14);
                assert!(
                    (f[n] - oracle).norm() <= 1e-11 * scale.max(oracle.norm()),
                    "c={c} n={n}: {:?} vs {:?}",
                    f[n],
                    oracle
                );
            }
        }
    }

    #[test]
    fn log_moments_match_adaptive_quadrature() {
        for &x in &[0.0, 0.31, -0.83, 0.999, 1.02, 1.31, -1.17] {
            let mu = log_moments(x, 15);
            for n in [0usize, 1, 4, 11, 15] {
                // Split at the singular point when it is inside the interval.
                let f = |t: f64| C64::new((x - t).abs().max(1e-300).ln() * legendre_all(t, n)[n], 0.0);
                let oracle = if x.abs() < 1.0 {
                    adaptive_quad(&f, -1.0, x, 1e-13) + adaptive_quad(&f, x, 1.0, 1e-13)
                } else {
                    adaptive_quad(&f, -1.0, 1.0, 1e-13)
                };
                assert!(
                    (mu[n] - oracle.re).abs() < 5e-9,
                    "x={x} n={n}: {} vs {}",
                    mu[n],
                    oracle.re
                );
            }
        }
    }

    #[test]
    fn panel_rule_coeff_roundtrip() {
        let rule = PanelRule::new(16);
        // A degree-9 polynomial must be represented exactly.
        let vals: Vec<C64> = rule
            .nodes
            .iter()
            .map(|&x| C64::new(0.3 + 2.0 * x - x.powi(9), -0.5 * x * x))
            .collect();
        let coeffs = rule.to_coeffs(&vals);
        for &t in &[-0.93, -0.2, 0.55, 0.98] {
            let p = legendre_all(t, 15);
            let mut acc = C64::new(0.0, 0.0);
            for (cm, pm) in coeffs.iter().zip(p.iter()) {
                acc += cm * *pm;
            }
            let exact = C64::new(0.3 + 2.0 * t - t.powi(9), -0.5 * t * t);
            assert!((acc - exact).norm() < 1e-12);
            let interp = rule.interpolate(&vals, t);
            assert!((interp - exact).norm() < 1e-12);
        }
    }

    #[test]
    fn split_panels_respects_breaks() {
        let p = split_panels(-5.0, 5.0, &[-3.0, 0.0, 3.0, 7.0], 0.8);
        assert!((p[0].0 + 5.0).abs() < 1e-15);
        assert!((p.last().unwrap().1 - 5.0).abs() < 1e-15);
        for w in p.windows(2) {
            assert!((w[0].1 - w[1].0).abs() < 1e-14, "gap/overlap");
        }
        for &b in &[-3.0, 0.0, 3.0] {
            assert!(
                p.iter().any(|&(a, _)| (a - b).abs() < 1e-13),
                "missing break {b}"
            );
        }
        assert!(p.iter().all(|&(a, b)| b - a <= 0.8 + 1e-12));
    }
}
