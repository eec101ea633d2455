//! The bi-infinite waveguide Green's function G = G₀ + w.
//!
//! w is synthesized from its partial Fourier transform w̃(ξ; x₂, y₂) along the
//! contour γ_F = {s − i·tanh s}, which passes below the positive real poles
//! ±ξ_j of the transverse resolvent and above the negative ones — that choice
//! of sides realizes the outgoing (limiting-absorption) solution without any
//! explicit damping parameter.
//!
//! For each Fourier node the transverse ODE is solved once per medium (scaled
//! Runge–Kutta below the WKB crossover, an exponent-series WKB expansion
//! above) and distilled into four cumulative integrals on the channel grid:
//!
//! ```text
//!   A(x) = ∫_{−d}^{x} e^{2α(x−z)} φ₋ p dz     B(x)  = ∫_{−d}^{x} φ₊ p dz
//!   C(x) = ∫_{x}^{d} e^{2α(z−x)} φ₊ p dz      B̃(x) = ∫_{−d}^{x} φ₋ p dz
//! ```
//!
//! with p = k²q/(2α) and φ∓ the scaled transverse solutions. Every value of
//! w̃ anywhere on Γ_ℂ × Γ_ℂ is then an O(1) combination:
//!
//! ```text
//!   w̃(x,y) = e^{α(y−x)} [φ₊(x)A(x) + φ₋(x)(B(y) − B(x) + C(y))] / W,  x ≤ y,
//!   w̃(x,y) = e^{α(x−y)} [φ₊(x)(A(y) + B̃(x) − B̃(y)) + φ₋(x)C(x)] / W,  x > y,
//! ```
//!
//! extended beyond the channel by the exact factors e^{α(±x−d)}. All stored
//! quantities stay O(1) however large |ξ| gets; the exponentials above always
//! have non-positive real part.
//!
//! The Fourier contour itself has three zones: dyadic panels shrinking into
//! s = 0 (the stationary point governing far-field kernel asymptotics), plain
//! panels across the pole/branch region, and geometrically growing tail panels
//! integrated by Filon product quadrature so that the oscillation e^{iξx₁} of
//! field synthesis costs nodes only logarithmically.

use crate::geometry::Potential;
use crate::jet::Jet;
use crate::modes::{integrate_transverse_mesh, RkMesh, Side, TransverseSolution};
use crate::quad::{exp_moments_full, exp_moments_lower, gl_cached, split_panels, PanelRule};
use crate::specfun::{alpha_star, complex_distance, hankel_h0_h1};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

pub(crate) const NPP: usize = 16; // nodes per panel, both transverse and Fourier

#[derive(Debug, Error)]
pub enum GreensError {
    #[error(transparent)]
    SpecFun(#[from] crate::specfun::SpecFunError),
    #[error(transparent)]
    Modes(#[from] crate::modes::ModesError),
    #[error("transverse resolvent pole too close to the Fourier contour: |W({xi})| = {wnorm:e}")]
    PoleProximity { xi: C64, wnorm: f64 },
    #[error("requested separation {0:e} below the configured floor {1:e}")]
    SeparationTooSmall(f64, f64),
    #[error("k²(1+q) − ξ² nearly vanishes on the channel at ξ = {0} (WKB turning point)")]
    TurningPointError(C64),
    #[error("field point x₁ = {0} outside the synthesis window |x₁| ≤ {1}")]
    AccuracyLoss(f64, f64),
    #[error("{0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Fourier contour
// ---------------------------------------------------------------------------

/// What the contour will be asked to synthesize; fixes the tail model
/// e^{Re α*·δ} |ξ|^p < tol.
#[derive(Debug, Clone, Copy)]
pub enum SynthTarget {
    /// k_D: bounded amplitude (p = 0).
    KernelD,
    /// k_C: ξ²-weighted (p = 2).
    KernelC,
    /// Field synthesis with oscillation bound |x₁| ≤ l0.
    Field { delta_min: f64, l0: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct FourierOptions {
    pub tol: f64,
    pub delta_min: f64,
    pub l0: f64,
    /// End of the plainly panelled region (must clear poles and branch points).
    pub s_core: f64,
    pub core_h: f64,
    pub tail_ratio: f64,
    /// Algebraic weight power in the tail model (2 covers k_C).
    pub p_power: i32,
}

impl FourierOptions {
    /// Defaults serving a medium pair: the core region clears both pole sets,
    /// the tail model uses the k_C weight.
    pub fn for_media(k: f64, media: &[&Potential], tol: f64, l0: f64) -> Self {
        let mut xi_min_max = k;
        let mut d_max: f64 = 1.0;
        for q in media {
            xi_min_max = xi_min_max.max(k * (1.0 + q.sup_bound()).sqrt());
            d_max = d_max.max(q.half_width());
        }
        FourierOptions {
            tol,
            delta_min: 1e-3 * d_max,
            l0,
            s_core: (8.0 * k).max(2.0 * xi_min_max) + 4.0,
            core_h: 0.7,
            tail_ratio: 4.0 / 3.0,
            p_power: 2,
        }
    }

    pub fn for_target(k: f64, target: SynthTarget, media: &[&Potential], tol: f64) -> Self {
        let mut o = Self::for_media(k, media, tol, 10.0);
        match target {
            SynthTarget::KernelD => o.p_power = 0,
            SynthTarget::KernelC => o.p_power = 2,
            SynthTarget::Field { delta_min, l0 } => {
                o.p_power = 1;
                o.delta_min = delta_min.max(o.delta_min);
                o.l0 = l0;
            }
        }
        o
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FNode {
    pub s: f64,
    pub xi: C64,
    /// dξ/ds = 1 − i sech² s.
    pub dxi: C64,
    /// Parameter-space quadrature weight within the panel.
    pub w: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FPanel {
    pub a: f64,
    pub b: f64,
    pub offset: usize,
    /// Tail panels are integrated by Filon product quadrature when an
    /// oscillatory factor is present.
    pub filon: bool,
}

/// The half-contour s ∈ [0, s_max] of γ_F (the other half is folded in by
/// evenness of w̃ in ξ).
#[derive(Debug, Clone)]
pub struct FourierContour {
    pub k: f64,
    pub opts: FourierOptions,
    pub panels: Vec<FPanel>,
    pub nodes: Vec<FNode>,
    pub s_max: f64,
}

pub(crate) fn xi_of(s: f64) -> C64 {
    C64::new(s, -s.tanh())
}

fn dxi_of(s: f64) -> C64 {
    let sech = 1.0 / s.cosh();
    C64::new(1.0, -sech * sech)
}

pub fn build_fourier_contour(k: f64, opts: &FourierOptions) -> FourierContour {
    // Tail cutoff: e^{−S δ} S^p = tol.
    let delta = opts.delta_min;
    let mut s_max = (1.0 / opts.tol).ln() / delta;
    for _ in 0..40 {
        s_max = ((1.0 / opts.tol).ln() + opts.p_power as f64 * s_max.max(2.0).ln()) / delta;
    }
    s_max = s_max.max(opts.s_core * 2.0);

    let mut edges: Vec<(f64, f64, bool)> = Vec::new();
    // Dyadic zoom into s = 0 (stationary region of the far-field kernels).
    let mut lo = 0.0;
    let mut hi = 1e-3;
    while hi < 1.0 {
        edges.push((lo, hi, false));
        lo = hi;
        hi *= 2.0;
    }
    // Plain panels through the pole/branch region.
    for (a, b) in split_panels(lo, opts.s_core, &[k], opts.core_h) {
        edges.push((a, b, false));
    }
    // Geometric Filon tail.
    let mut a = opts.s_core;
    while a < s_max {
        let b = (a * opts.tail_ratio).min(s_max);
        edges.push((a, b, true));
        a = b;
    }
    let (gx, gw) = gl_cached(NPP);
    let mut nodes = Vec::with_capacity(edges.len() * NPP);
    let mut panels = Vec::with_capacity(edges.len());
    for &(a, b, filon) in &edges {
        let offset = nodes.len();
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        for (&x, &w) in gx.iter().zip(gw.iter()) {
            let s = mid + half * x;
            nodes.push(FNode {
                s,
                xi: xi_of(s),
                dxi: dxi_of(s),
                w: w * half,
            });
        }
        panels.push(FPanel { a, b, offset, filon });
    }
    FourierContour {
        k,
        opts: *opts,
        panels,
        nodes,
        s_max,
    }
}

/// Per-panel oscillatory weights for field synthesis at a fixed x₁: applied to
/// the Legendre coefficients of a tail-panel amplitude they produce
/// ∫ 2cos(ξx₁)·Φ dξ and ∫ 2ξ sin(ξx₁)·Φ dξ exactly in the oscillation.
#[derive(Debug, Clone)]
pub struct FilonWeights {
    /// Per Filon panel: (cos-fold weights, sin-fold weights), each NPP long,
    /// to be dotted with the Legendre coefficients of Φ and ξ·Φ respectively.
    pub per_panel: Vec<(Vec<C64>, Vec<C64>)>,
    pub x1: f64,
}

impl FourierContour {
    pub fn filon_weights(&self, x1: f64) -> FilonWeights {
        let mut per_panel = Vec::new();
        for p in &self.panels {
            if !p.filon {
                continue;
            }
            let h = p.b - p.a;
            let smid = 0.5 * (p.a + p.b);
            let c = C64::new(0.0, x1 * h * 0.5);
            let ep = exp_moments_full(c, NPP - 1);
            let em = exp_moments_full(-c, NPP - 1);
            // On the tail tanh s = 1 to machine precision: ξ = s − i, so
            // e^{iξx₁} = e^{x₁} e^{isx₁} and e^{−iξx₁} = e^{−x₁} e^{−isx₁}.
            let fp = C64::new(0.0, x1 * smid).exp() * (x1.exp() * h / 2.0);
            let fm = C64::new(0.0, -x1 * smid).exp() * ((-x1).exp() * h / 2.0);
            let mut wcos = Vec::with_capacity(NPP);
            let mut wsin = Vec::with_capacity(NPP);
            let i = C64::new(0.0, 1.0);
            for n in 0..NPP {
                wcos.push(fp * ep[n] + fm * em[n]);
                wsin.push(-i * (fp * ep[n] - fm * em[n]));
            }
            per_panel.push((wcos, wsin));
        }
        FilonWeights { per_panel, x1 }
    }
}

// ---------------------------------------------------------------------------
// Transverse grid and per-node cached data
// ---------------------------------------------------------------------------

/// Fixed Gauss–Legendre channel grid on [−d, d] with panel breaks at the
/// potential's smoothness breakpoints.
#[derive(Debug, Clone)]
pub struct TransverseGrid {
    pub d: f64,
    pub panels: Vec<(f64, f64)>,
    /// All GL nodes, panel by panel (length NPP·panels).
    pub xs: Vec<f64>,
}

impl TransverseGrid {
    pub fn new(q: &Potential, k: f64) -> Self {
        let h = Self::channel_h(q, k);
        Self::with_layout(
            q,
            &ChannelLayout {
                h,
                breaks: q.breakpoints(),
            },
        )
    }

    /// Build against a shared channel layout so two media (and the interface
    /// discretization) produce bitwise-identical panel edges on the overlap.
    pub fn with_layout(q: &Potential, layout: &ChannelLayout) -> Self {
        let d = q.half_width();
        let mut breaks = layout.breaks.clone();
        breaks.extend(q.breakpoints());
        let panels = split_panels(-d, d, &breaks, layout.h);
        let (gx, _) = gl_cached(NPP);
        let mut xs = Vec::with_capacity(panels.len() * NPP);
        for &(a, b) in &panels {
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            for &x in gx {
                xs.push(mid + half * x);
            }
        }
        TransverseGrid { d, panels, xs }
    }

    /// Channel panel length: short enough for 16 nodes to resolve both the
    /// potential's structure and the fastest channel oscillation of φ. Shared
    /// with the contour panelizer so interface nodes inside [−d, d] coincide
    /// with grid nodes.
    pub fn channel_h(q: &Potential, k: f64) -> f64 {
        (4.5 / q.osc_scale().max(k * (1.0 + q.sup_bound()).sqrt())).min(0.5)
    }

    /// Whether x is (numerically) one of the grid nodes or a channel edge.
    pub fn edges(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.panels.iter().map(|p| p.0).collect();
        e.push(self.d);
        e
    }

    pub fn panel_of(&self, x: f64) -> usize {
        let mut lo = 0;
        let mut hi = self.panels.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if x > self.panels[mid].1 {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Everything the solver needs about one medium at one Fourier node.
#[derive(Debug, Clone)]
pub struct NodeData {
    pub alpha: C64,
    pub wronskian: C64,
    pub phim: Vec<C64>,
    pub phip: Vec<C64>,
    a_cum: Vec<C64>,
    b_cum: Vec<C64>,
    bt_cum: Vec<C64>,
    c_cum: Vec<C64>,
    /// Cumulative values at panel edges (length panels+1) for off-grid use.
    a_edge: Vec<C64>,
    b_edge: Vec<C64>,
    bt_edge: Vec<C64>,
    c_edge: Vec<C64>,
    /// Per-panel Legendre coefficients of φ∓·p (length NPP·panels).
    gm_coeff: Vec<C64>,
    gp_coeff: Vec<C64>,
    /// Ready-made evaluation bundles at the channel ends ±d (the reference
    /// points of every excursion outside the channel).
    at_minus_d: EdgeVals,
    at_plus_d: EdgeVals,
}

#[derive(Debug, Clone, Copy)]
struct EdgeVals {
    phim: C64,
    phip: C64,
    a: C64,
    b: C64,
    bt: C64,
    c: C64,
}

/// Cached transverse data for one medium over a full Fourier contour.
pub struct MediumCache {
    pub q: Potential,
    pub k: f64,
    pub fc: Arc<FourierContour>,
    pub grid: TransverseGrid,
    pub nodes: Vec<NodeData>,
    /// |ξ| above which the WKB expansion replaced Runge–Kutta.
    pub crossover: f64,
    pub wkb_order: usize,
}

/// The shared panel policy for every structure living on the channel: the two
/// transverse grids and the interface discretization inside [−d, d]. Using one
/// layout makes their nodes coincide bitwise, which keeps kernel assembly on
/// the O(1) cached path.
#[derive(Debug, Clone)]
pub struct ChannelLayout {
    pub h: f64,
    pub breaks: Vec<f64>,
}

impl ChannelLayout {
    pub fn for_media(k: f64, media: &[&Potential]) -> Self {
        let mut h = f64::INFINITY;
        let mut breaks = Vec::new();
        for q in media {
            h = h.min(TransverseGrid::channel_h(q, k));
            breaks.extend(q.breakpoints());
            breaks.push(-q.half_width());
            breaks.push(q.half_width());
        }
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        ChannelLayout { h, breaks }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CacheOptions {
    pub wkb_order: usize,
    /// Relative agreement demanded between RK and WKB at the crossover.
    pub wkb_gate_tol: f64,
    /// RK accuracy target driving the step-count policy.
    pub rk_tol: f64,
}

impl Default for CacheOptions {
    fn default() -> Self {
        CacheOptions {
            wkb_order: 6,
            wkb_gate_tol: 1e-8,
            rk_tol: 1e-9,
        }
    }
}

/// RK steps per unit length for accuracy `tol` at transverse stiffness |α|.
fn rk_density(alpha_norm: f64, two_d: f64, tol: f64) -> f64 {
    let base = 500.0;
    let rho = (two_d / (30.0 * tol)).powf(0.25) * alpha_norm.powf(1.25);
    rho.max(base).min(4e5)
}

// ---------------------------------------------------------------------------
// WKB expansion
// ---------------------------------------------------------------------------

/// Exponent-series tables: cumulative integrals C_j(x) = ∫_{−d}^x c_j with
/// c₁ = k²q/2 and c_{m+1} = (c_m′ + Σ_{i+j=m} c_i c_j)/2, computed exactly via
/// jet arithmetic on the potential profiles. The pure series gives
/// φ₋ = exp(Σ_j C_j(x)/αʲ) and φ₊ = exp(Σ_j (−1)ʲ (C_j(x) − C_j(d))/αʲ).
///
/// A jump of q reflects an O(1/α²) wave the exponent series cannot carry, so
/// the hybrid evaluator used by the cache propagates piecewise-constant
/// pieces with the exact constant-coefficient two-exponential solution (in
/// the cancellation-free variables η = μ − α, ν = −k²q₀/η) and reserves the
/// series for smooth pieces.
pub struct WkbTables {
    pub order: usize,
    /// cum[j−1][node] = C_j at grid node.
    cum: Vec<Vec<f64>>,
    /// Cumulative values at panel edges (order × panels+1).
    cum_edge: Vec<Vec<f64>>,
    /// c_j values at grid nodes (for derivatives of φ).
    cval: Vec<Vec<f64>>,
    /// c_j one-sided limits at panel ends, from inside the panel.
    cval_end: Vec<Vec<f64>>,
    /// Constant value of q on each grid panel, when the panel is flat.
    panel_const: Vec<Option<f64>>,
    panels: Vec<(f64, f64)>,
    n_nodes: usize,
    k: f64,
    q_max: f64,
}

impl WkbTables {
    pub fn new(q: &Potential, k: f64, grid: &TransverseGrid, order: usize) -> Self {
        assert!((1..=6).contains(&order));
        let rule = panel_rule();
        let n = grid.xs.len();
        let mut cj: Vec<Vec<Jet>> = Vec::with_capacity(order);
        let c1: Vec<Jet> = grid
            .xs
            .iter()
            .map(|&x| q.eval_jet(x) * (k * k / 2.0))
            .collect();
        cj.push(c1);
        for m in 1..order {
            let mut next = Vec::with_capacity(n);
            for i in 0..n {
                // c_{m+1} = (c_m' + Σ_{a+b=m, a,b≥1} c_a c_b) / 2
                let mut acc = derive_jet(&cj[m - 1][i]);
                for a in 1..m {
                    let b = m - a;
                    acc = acc + cj[a - 1][i] * cj[b - 1][i];
                }
                next.push(acc.scale(0.5));
            }
            cj.push(next);
        }
        let cval: Vec<Vec<f64>> = cj
            .iter()
            .map(|row| row.iter().map(|j| j.value()).collect())
            .collect();
        // End-of-panel limits of c_j via the Legendre interpolant.
        let mut cval_end = vec![vec![0.0; grid.panels.len()]; order];
        let mut cum = Vec::with_capacity(order);
        let mut cum_edge = Vec::with_capacity(order);
        for (j, vals) in cval.iter().enumerate() {
            let mut acc = vec![0.0; n];
            let mut edges = vec![0.0; grid.panels.len() + 1];
            let mut edge = 0.0;
            for (ip, &(a, b)) in grid.panels.iter().enumerate() {
                let h = b - a;
                let seg: Vec<C64> = vals[ip * NPP..(ip + 1) * NPP]
                    .iter()
                    .map(|&v| C64::new(v, 0.0))
                    .collect();
                let coeffs = rule.to_coeffs(&seg);
                cval_end[j][ip] = rule.interpolate(&seg, 1.0).re;
                for i in 0..NPP {
                    let f = plain_partial_moments(i);
                    let mut v = C64::new(0.0, 0.0);
                    for nn in 0..NPP {
                        v += coeffs[nn] * f[nn];
                    }
                    acc[ip * NPP + i] = edge + (h / 2.0) * v.re;
                }
                edge += h * coeffs[0].re; // ∫_{−1}^{1} keeps only the P₀ term
                edges[ip + 1] = edge;
            }
            cum.push(acc);
            cum_edge.push(edges);
        }
        let panel_const = grid
            .panels
            .iter()
            .map(|&(a, b)| q.constant_piece_value(0.5 * (a + b)))
            .collect();
        WkbTables {
            order,
            cum,
            cum_edge,
            cval,
            cval_end,
            panel_const,
            panels: grid.panels.clone(),
            n_nodes: n,
            k,
            q_max: q.sup_bound(),
        }
    }

    fn check_turning_point(&self, alpha: C64, xi: C64) -> Result<(), GreensError> {
        if (alpha * alpha).norm() < 4.0 * self.k * self.k * self.q_max {
            return Err(GreensError::TurningPointError(xi));
        }
        Ok(())
    }

    /// Pure exponent-series solutions (φ, φ′) at all grid nodes. Errors with a
    /// turning point when k²(1+q) − ξ² is not safely dominated by α².
    pub fn eval(&self, xi: C64, side: Side) -> Result<(Vec<C64>, Vec<C64>), GreensError> {
        let alpha = alpha_star(xi, self.k)?;
        self.check_turning_point(alpha, xi)?;
        let n = self.n_nodes;
        let mut phi = Vec::with_capacity(n);
        let mut dphi = Vec::with_capacity(n);
        let pw = self.powers(alpha, side);
        let cum_d: Vec<f64> = (0..self.order)
            .map(|j| self.cum_edge[j][self.panels.len()])
            .collect();
        for i in 0..n {
            let mut s = C64::new(0.0, 0.0);
            let mut ds = C64::new(0.0, 0.0);
            for j in 0..self.order {
                let cumulative = match side {
                    Side::Minus => self.cum[j][i],
                    Side::Plus => self.cum[j][i] - cum_d[j],
                };
                s += pw[j] * cumulative;
                ds += pw[j] * self.cval[j][i];
            }
            let e = s.exp();
            phi.push(e);
            dphi.push(e * ds);
        }
        Ok((phi, dphi))
    }

    /// Inverse powers α^{−j} with the (−1)^j twist for the plus side.
    fn powers(&self, alpha: C64, side: Side) -> Vec<C64> {
        let mut pw = Vec::with_capacity(self.order);
        let mut p = C64::new(1.0, 0.0);
        for j in 0..self.order {
            p /= alpha;
            let sgn = match side {
                Side::Minus => 1.0,
                Side::Plus => {
                    if (j + 1) % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            pw.push(p * sgn);
        }
        pw
    }

    /// Hybrid high-frequency evaluation: exact two-exponential propagation on
    /// flat panels, exponent series on smooth ones. Returns (φ, φ′) on the
    /// grid plus the trace (φ(end), φ′(end)) at the far side.
    pub fn eval_hybrid(
        &self,
        xi: C64,
        side: Side,
    ) -> Result<(Vec<C64>, Vec<C64>, (C64, C64)), GreensError> {
        let alpha = alpha_star(xi, self.k)?;
        self.check_turning_point(alpha, xi)?;
        let n = self.n_nodes;
        let zero = C64::new(0.0, 0.0);
        let mut phi = vec![zero; n];
        let mut dphi = vec![zero; n];
        let pw = self.powers(alpha, side);
        let npan = self.panels.len();
        let mut cur = C64::new(1.0, 0.0);
        let mut dcur = zero;
        let k2 = self.k * self.k;
        let rule = panel_rule();

        let panel_order: Vec<usize> = match side {
            Side::Minus => (0..npan).collect(),
            Side::Plus => (0..npan).rev().collect(),
        };
        for &ip in &panel_order {
            let (pa, pb) = self.panels[ip];
            let h = pb - pa;
            if let Some(q0) = self.panel_const[ip] {
                // Exact constant-coefficient propagation; Re η ≥ 0 and ν is
                // computed cancellation-free as −k²q₀/η.
                let mu = (alpha * alpha - k2 * q0).sqrt();
                let eta = mu - alpha;
                let nu = -k2 * q0 / eta;
                // Marching-variable derivative at entry: +φ′ rightward, −φ′
                // leftward.
                let ddel = match side {
                    Side::Minus => dcur,
                    Side::Plus => -dcur,
                };
                let a_amp = (eta * cur + ddel) / (mu * 2.0);
                let b_amp = (nu * cur - ddel) / (mu * 2.0);
                for i in 0..NPP {
                    let x = self.node_x(ip, i);
                    let del = match side {
                        Side::Minus => x - pa,
                        Side::Plus => pb - x,
                    };
                    let e1 = (nu * del).exp();
                    let e2 = (-eta * del).exp();
                    let v = a_amp * e1 + b_amp * e2;
                    let dv = nu * a_amp * e1 - eta * b_amp * e2;
                    phi[ip * NPP + i] = v;
                    dphi[ip * NPP + i] = match side {
                        Side::Minus => dv,
                        Side::Plus => -dv,
                    };
                }
                let e1 = (nu * h).exp();
                let e2 = (-eta * h).exp();
                let v = a_amp * e1 + b_amp * e2;
                let dv = nu * a_amp * e1 - eta * b_amp * e2;
                cur = v;
                dcur = match side {
                    Side::Minus => dv,
                    Side::Plus => -dv,
                };
            } else {
                // Exponent series anchored at the entry edge of this panel.
                let entry_edge = match side {
                    Side::Minus => ip,
                    Side::Plus => ip + 1,
                };
                for i in 0..NPP {
                    let mut s = zero;
                    let mut ds = zero;
                    for j in 0..self.order {
                        s += pw[j] * (self.cum[j][ip * NPP + i] - self.cum_edge[j][entry_edge]);
                        ds += pw[j] * self.cval[j][ip * NPP + i];
                    }
                    let v = cur * s.exp();
                    phi[ip * NPP + i] = v;
                    dphi[ip * NPP + i] = v * ds;
                }
                let exit_edge = match side {
                    Side::Minus => ip + 1,
                    Side::Plus => ip,
                };
                let mut s = zero;
                let mut ds = zero;
                for j in 0..self.order {
                    s += pw[j] * (self.cum_edge[j][exit_edge] - self.cum_edge[j][entry_edge]);
                    let c_exit = match side {
                        Side::Minus => self.cval_end[j][ip],
                        // Left exit: c_j limit at pa from inside ≈ first-node
                        // interpolant; use the panel start value.
                        Side::Plus => {
                            let seg: Vec<C64> = self.cval[j][ip * NPP..(ip + 1) * NPP]
                                .iter()
                                .map(|&v| C64::new(v, 0.0))
                                .collect();
                            rule.interpolate(&seg, -1.0).re
                        }
                    };
                    ds += pw[j] * c_exit;
                }
                cur *= s.exp();
                dcur = cur * ds;
            }
        }
        Ok((phi, dphi, (cur, dcur)))
    }

    fn node_x(&self, ip: usize, i: usize) -> f64 {
        let (a, b) = self.panels[ip];
        0.5 * (a + b) + 0.5 * (b - a) * panel_rule().nodes[i]
    }
}

fn derive_jet(j: &Jet) -> Jet {
    let mut a = [0.0; crate::jet::JET_ORDER + 1];
    for k in 0..crate::jet::JET_ORDER {
        a[k] = (k as f64 + 1.0) * j.a[k + 1];
    }
    Jet { a }
}

/// The spec-level WKB operation: exponent series of given order evaluated on
/// the medium's default grid.
pub fn wkb_transverse(
    q: &Potential,
    k: f64,
    xi: C64,
    order: usize,
    side: Side,
) -> Result<TransverseSolution, GreensError> {
    let grid = TransverseGrid::new(q, k);
    let tables = WkbTables::new(q, k, &grid, order);
    let alpha = alpha_star(xi, k)?;
    let (phi, dphi) = tables.eval(xi, side)?;
    Ok(TransverseSolution {
        xi,
        alpha,
        side,
        grid: grid.xs.clone(),
        phi,
        dphi,
        stiffness_warning: false,
    })
}

// ---------------------------------------------------------------------------
// Cache construction
// ---------------------------------------------------------------------------

pub(crate) fn panel_rule() -> &'static PanelRule {
    use std::sync::OnceLock;
    static RULE: OnceLock<PanelRule> = OnceLock::new();
    RULE.get_or_init(|| PanelRule::new(NPP))
}

/// Fₙ(0, τᵢ): plain Legendre antiderivatives at the standard nodes.
fn plain_partial_moments(node_idx: usize) -> &'static [C64] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<Vec<Vec<C64>>> = OnceLock::new();
    let t = TABLE.get_or_init(|| {
        let rule = panel_rule();
        (0..NPP).map(|i| plain_moments_at(rule.nodes[i])).collect()
    });
    &t[node_idx]
}

/// Starting WKB crossover: clear of the guided-mode band and of 8k. The cache
/// builder raises it geometrically until the RK/WKB agreement gate holds, so
/// strongly oscillatory potentials end up with a larger effective value.
fn default_crossover(q: &Potential, k: f64) -> f64 {
    let xi_min = k * (1.0 + q.sup_bound()).sqrt();
    (8.0 * k).max(2.0 * xi_min)
}

pub fn build_medium_cache(
    q: &Potential,
    k: f64,
    fc: Arc<FourierContour>,
    opts: CacheOptions,
) -> Result<MediumCache, GreensError> {
    let layout = ChannelLayout::for_media(k, &[q]);
    build_medium_cache_with_layout(q, k, fc, opts, &layout)
}

pub fn build_medium_cache_with_layout(
    q: &Potential,
    k: f64,
    fc: Arc<FourierContour>,
    opts: CacheOptions,
    layout: &ChannelLayout,
) -> Result<MediumCache, GreensError> {
    let grid = TransverseGrid::with_layout(q, layout);
    let tables = WkbTables::new(q, k, &grid, opts.wkb_order);
    let two_d = 2.0 * grid.d;

    // Validate the RK/WKB handoff and push the crossover out until the two
    // agree to the gate tolerance.
    let mut crossover = default_crossover(q, k);
    if !q.is_zero() {
        for _ in 0..8 {
            let xi = xi_of(crossover);
            let alpha = alpha_star(xi, k)?;
            let density = rk_density(alpha.norm(), two_d, opts.rk_tol.min(1e-10));
            let mesh = RkMesh::new(q, k, &grid_with_edges(&grid), density);
            let rk = integrate_transverse_mesh(&mesh, k, xi, Side::Minus)?;
            let (phi_rk, _) = strip_edges(&grid, &rk.phi, &rk.dphi);
            let agree = match tables.eval_hybrid(xi, Side::Minus) {
                Ok((phi, _, _)) => {
                    let nl = grid.xs.len() - 1;
                    (phi[nl] - phi_rk[nl]).norm() / phi_rk[nl].norm() <= opts.wkb_gate_tol
                }
                Err(_) => false,
            };
            if agree {
                break;
            }
            crossover *= 1.4;
        }
    }

    let node_results: Result<Vec<NodeData>, GreensError> = fc
        .nodes
        .par_iter()
        .map(|fnode| build_node(q, k, &grid, &tables, fnode.xi, crossover, &opts))
        .collect();
    let nodes = node_results?;
    for (nd, fnode) in nodes.iter().zip(fc.nodes.iter()) {
        if nd.wronskian.norm() < 1e-10 * fnode.xi.norm().max(1.0) {
            return Err(GreensError::PoleProximity {
                xi: fnode.xi,
                wnorm: nd.wronskian.norm(),
            });
        }
    }
    Ok(MediumCache {
        q: q.clone(),
        k,
        fc,
        grid,
        nodes,
        crossover,
        wkb_order: opts.wkb_order,
    })
}

fn build_node(
    q: &Potential,
    k: f64,
    grid: &TransverseGrid,
    tables: &WkbTables,
    xi: C64,
    crossover: f64,
    opts: &CacheOptions,
) -> Result<NodeData, GreensError> {
    let alpha = alpha_star(xi, k)?;
    let n = grid.xs.len();
    let (phim, phip, phi_d, dphi_d) = if q.is_zero() {
        (
            vec![C64::new(1.0, 0.0); n],
            vec![C64::new(1.0, 0.0); n],
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
        )
    } else if xi.norm() >= crossover {
        let (pm, _, (pd, dpd)) = tables.eval_hybrid(xi, Side::Minus)?;
        let (pp, _, _) = tables.eval_hybrid(xi, Side::Plus)?;
        (pm, pp, pd, dpd)
    } else {
        let density = rk_density(alpha.norm(), 2.0 * grid.d, opts.rk_tol);
        let mesh = RkMesh::new(q, k, &grid_with_edges(grid), density);
        let sm = integrate_transverse_mesh(&mesh, k, xi, Side::Minus)?;
        let sp = integrate_transverse_mesh(&mesh, k, xi, Side::Plus)?;
        let last = sm.grid.len() - 1;
        let (pd, dpd) = (sm.phi[last], sm.dphi[last]);
        let (pm, _) = strip_edges(grid, &sm.phi, &sm.dphi);
        let (pp, _) = strip_edges(grid, &sp.phi, &sp.dphi);
        (pm, pp, pd, dpd)
    };
    let wr = alpha * 2.0 * phi_d - dphi_d;

    // p(z) = k²q(z)/(2α).
    let rule = panel_rule();
    let pfac = k * k / (2.0 * alpha);
    let mut gm = Vec::with_capacity(n);
    let mut gp = Vec::with_capacity(n);
    for (i, &x) in grid.xs.iter().enumerate() {
        let p = pfac * q.eval(x);
        gm.push(phim[i] * p);
        gp.push(phip[i] * p);
    }
    let npan = grid.panels.len();
    let mut gm_coeff = Vec::with_capacity(n);
    let mut gp_coeff = Vec::with_capacity(n);
    for ip in 0..npan {
        gm_coeff.extend(rule.to_coeffs(&gm[ip * NPP..(ip + 1) * NPP]));
        gp_coeff.extend(rule.to_coeffs(&gp[ip * NPP..(ip + 1) * NPP]));
    }

    // Cumulatives. Every exponential carries a non-positive real exponent.
    let zero = C64::new(0.0, 0.0);
    let mut a_cum = vec![zero; n];
    let mut b_cum = vec![zero; n];
    let mut bt_cum = vec![zero; n];
    let mut c_cum = vec![zero; n];
    let mut a_edge = vec![zero; npan + 1];
    let mut b_edge = vec![zero; npan + 1];
    let mut bt_edge = vec![zero; npan + 1];
    let mut c_edge = vec![zero; npan + 1];

    for ip in 0..npan {
        let (pa, pb) = grid.panels[ip];
        let h = pb - pa;
        let c = alpha * h;
        let cm = &gm_coeff[ip * NPP..(ip + 1) * NPP];
        let cp = &gp_coeff[ip * NPP..(ip + 1) * NPP];
        let full = exp_moments_lower(c, 1.0, NPP - 1);
        for i in 0..NPP {
            let fmom = rule.partial_exp_moments(c, i);
            let plain = plain_partial_moments(i);
            let x = grid.xs[ip * NPP + i];
            let (mut av, mut bv, mut btv) = (zero, zero, zero);
            for nn in 0..NPP {
                av += cm[nn] * fmom[nn];
                bv += cp[nn] * plain[nn];
                btv += cm[nn] * plain[nn];
            }
            a_cum[ip * NPP + i] = (alpha * 2.0 * (x - pa)).exp() * a_edge[ip] + (h / 2.0) * av;
            b_cum[ip * NPP + i] = b_edge[ip] + (h / 2.0) * bv;
            bt_cum[ip * NPP + i] = bt_edge[ip] + (h / 2.0) * btv;
        }
        let (mut af, mut bf, mut btf) = (zero, zero, zero);
        for nn in 0..NPP {
            af += cm[nn] * full[nn];
        }
        bf += cp[0] * 2.0;
        btf += cm[0] * 2.0;
        a_edge[ip + 1] = (alpha * 2.0 * h).exp() * a_edge[ip] + (h / 2.0) * af;
        b_edge[ip + 1] = b_edge[ip] + (h / 2.0) * bf;
        bt_edge[ip + 1] = bt_edge[ip] + (h / 2.0) * btf;
    }
    // C marches right to left.
    for ip in (0..npan).rev() {
        let (pa, pb) = grid.panels[ip];
        let h = pb - pa;
        let c = alpha * h;
        let cp = &gp_coeff[ip * NPP..(ip + 1) * NPP];
        for i in 0..NPP {
            // F̃ₙ(c, τᵢ) = (−1)ⁿ Fₙ(c, −τᵢ); −τᵢ is the mirrored node.
            let fmir = rule.partial_exp_moments(c, NPP - 1 - i);
            let x = grid.xs[ip * NPP + i];
            let mut cv = zero;
            let mut sign = 1.0;
            for nn in 0..NPP {
                cv += cp[nn] * fmir[nn] * sign;
                sign = -sign;
            }
            c_cum[ip * NPP + i] = (alpha * 2.0 * (pb - x)).exp() * c_edge[ip + 1] + (h / 2.0) * cv;
        }
        let full = exp_moments_lower(c, 1.0, NPP - 1);
        let mut cf = zero;
        let mut sign = 1.0;
        for nn in 0..NPP {
            // F̃ₙ(c, −1) = (−1)ⁿ Fₙ(c, 1)
            cf += cp[nn] * full[nn] * sign;
            sign = -sign;
        }
        c_edge[ip] = (alpha * 2.0 * h).exp() * c_edge[ip + 1] + (h / 2.0) * cf;
    }

    let last = npan - 1;
    let at_minus_d = EdgeVals {
        phim: rule.interpolate(&phim[0..NPP], -1.0),
        phip: rule.interpolate(&phip[0..NPP], -1.0),
        a: zero,
        b: zero,
        bt: zero,
        c: c_edge[0],
    };
    let at_plus_d = EdgeVals {
        phim: rule.interpolate(&phim[last * NPP..(last + 1) * NPP], 1.0),
        phip: rule.interpolate(&phip[last * NPP..(last + 1) * NPP], 1.0),
        a: a_edge[npan],
        b: b_edge[npan],
        bt: bt_edge[npan],
        c: zero,
    };
    Ok(NodeData {
        alpha,
        wronskian: wr,
        phim,
        phip,
        a_cum,
        b_cum,
        bt_cum,
        c_cum,
        a_edge,
        b_edge,
        bt_edge,
        c_edge,
        gm_coeff,
        gp_coeff,
        at_minus_d,
        at_plus_d,
    })
}

fn grid_with_edges(grid: &TransverseGrid) -> Vec<f64> {
    let mut g = Vec::with_capacity(grid.xs.len() + grid.panels.len() + 1);
    for (ip, &(a, _)) in grid.panels.iter().enumerate() {
        g.push(a);
        g.extend_from_slice(&grid.xs[ip * NPP..(ip + 1) * NPP]);
    }
    g.push(grid.d);
    g
}

fn strip_edges(grid: &TransverseGrid, phi: &[C64], dphi: &[C64]) -> (Vec<C64>, Vec<C64>) {
    let mut p = Vec::with_capacity(grid.xs.len());
    let mut dp = Vec::with_capacity(grid.xs.len());
    for ip in 0..grid.panels.len() {
        let base = ip * (NPP + 1) + 1;
        p.extend_from_slice(&phi[base..base + NPP]);
        dp.extend_from_slice(&dphi[base..base + NPP]);
    }
    (p, dp)
}

// ---------------------------------------------------------------------------
// w̃ evaluation
// ---------------------------------------------------------------------------

/// A point of Γ_ℂ reduced to the channel: a real reference coordinate in
/// [−d, d] plus the complex offset whose exponential factor e^{α·offset}
/// carries the excursion (Re offset ≥ 0 always).
#[derive(Debug, Clone, Copy)]
pub struct Reduced {
    pub x_ref: f64,
    pub offset: C64,
}

struct CumsAt {
    phim: C64,
    phip: C64,
    a: C64,
    b: C64,
    bt: C64,
    c: C64,
}

impl MediumCache {
    pub fn d(&self) -> f64 {
        self.grid.d
    }

    /// Reduce z ∈ Γ_ℂ against this medium's channel half-width.
    pub fn reduce(&self, z: C64) -> Reduced {
        let d = self.grid.d;
        if z.re > d {
            Reduced {
                x_ref: d,
                offset: z - d,
            }
        } else if z.re < -d {
            Reduced {
                x_ref: -d,
                offset: -z - d,
            }
        } else {
            debug_assert!(z.im.abs() <= 1e-9 * (1.0 + z.re.abs()));
            Reduced {
                x_ref: z.re,
                offset: C64::new(0.0, 0.0),
            }
        }
    }

    /// w̃(ξ_m; x, y) for channel coordinates by grid index.
    #[inline]
    pub fn wtilde_grid(&self, m: usize, i: usize, j: usize) -> C64 {
        let nd = &self.nodes[m];
        let (x, y) = (self.grid.xs[i], self.grid.xs[j]);
        if x <= y {
            (nd.alpha * (y - x)).exp()
                * (nd.phip[i] * nd.a_cum[i]
                    + nd.phim[i] * (nd.b_cum[j] - nd.b_cum[i] + nd.c_cum[j]))
                / nd.wronskian
        } else {
            (nd.alpha * (x - y)).exp()
                * (nd.phip[i] * (nd.a_cum[j] + nd.bt_cum[i] - nd.bt_cum[j])
                    + nd.phim[i] * nd.c_cum[i])
                / nd.wronskian
        }
    }

    /// Channel-interior w̃ at arbitrary real coordinates.
    pub fn wtilde_channel(&self, m: usize, x: f64, y: f64) -> C64 {
        let nd = &self.nodes[m];
        let px = self.cums_at(m, x);
        let py = self.cums_at(m, y);
        if x <= y {
            (nd.alpha * (y - x)).exp() * (px.phip * px.a + px.phim * (py.b - px.b + py.c))
                / nd.wronskian
        } else {
            (nd.alpha * (x - y)).exp()
                * (px.phip * (py.a + px.bt - py.bt) + px.phim * px.c)
                / nd.wronskian
        }
    }

    /// Full Γ_ℂ × Γ_ℂ evaluation via the exponential-factor extension.
    pub fn wtilde(&self, m: usize, x2: C64, y2: C64) -> C64 {
        let rx = self.reduce(x2);
        let ry = self.reduce(y2);
        let nd = &self.nodes[m];
        let fac = (nd.alpha * (rx.offset + ry.offset)).exp();
        fac * self.wtilde_channel(m, rx.x_ref, ry.x_ref)
    }

    fn cums_at(&self, m: usize, x: f64) -> CumsAt {
        let nd = &self.nodes[m];
        // The channel ends are the reference points of every reduced
        // excursion, so they get precomputed bundles.
        if x == self.grid.d {
            let e = &nd.at_plus_d;
            return CumsAt {
                phim: e.phim,
                phip: e.phip,
                a: e.a,
                b: e.b,
                bt: e.bt,
                c: e.c,
            };
        }
        if x == -self.grid.d {
            let e = &nd.at_minus_d;
            return CumsAt {
                phim: e.phim,
                phip: e.phip,
                a: e.a,
                b: e.b,
                bt: e.bt,
                c: e.c,
            };
        }
        let ip = self.grid.panel_of(x);
        let (pa, pb) = self.grid.panels[ip];
        let h = pb - pa;
        let tau = ((2.0 * x - pa - pb) / h).clamp(-1.0, 1.0);
        let rule = panel_rule();
        // Snap to a grid node when possible (assembly hits nodes exactly).
        for i in 0..NPP {
            if (rule.nodes[i] - tau).abs() < 1e-13 {
                let g = ip * NPP + i;
                return CumsAt {
                    phim: nd.phim[g],
                    phip: nd.phip[g],
                    a: nd.a_cum[g],
                    b: nd.b_cum[g],
                    bt: nd.bt_cum[g],
                    c: nd.c_cum[g],
                };
            }
        }
        let seg = ip * NPP..(ip + 1) * NPP;
        let phim = rule.interpolate(&nd.phim[seg.clone()], tau);
        let phip = rule.interpolate(&nd.phip[seg.clone()], tau);
        let c_mom = nd.alpha * h;
        let fm = rule.partial_exp_moments_at(c_mom, tau);
        let fplain = plain_moments_at(tau);
        // F̃ₙ(c, τ) = (−1)ⁿ Fₙ(c, −τ)
        let fmir = rule.partial_exp_moments_at(c_mom, -tau);
        let cm = &nd.gm_coeff[seg.clone()];
        let cp = &nd.gp_coeff[seg];
        let zero = C64::new(0.0, 0.0);
        let (mut av, mut bv, mut btv, mut cv) = (zero, zero, zero, zero);
        let mut sign = 1.0;
        for nn in 0..NPP {
            av += cm[nn] * fm[nn];
            bv += cp[nn] * fplain[nn];
            btv += cm[nn] * fplain[nn];
            cv += cp[nn] * fmir[nn] * sign;
            sign = -sign;
        }
        CumsAt {
            phim,
            phip,
            a: (nd.alpha * 2.0 * (x - pa)).exp() * nd.a_edge[ip] + (h / 2.0) * av,
            b: nd.b_edge[ip] + (h / 2.0) * bv,
            bt: nd.bt_edge[ip] + (h / 2.0) * btv,
            c: (nd.alpha * 2.0 * (pb - x)).exp() * nd.c_edge[ip + 1] + (h / 2.0) * cv,
        }
    }

    // -----------------------------------------------------------------------
    // Green's function
    // -----------------------------------------------------------------------

    /// G(x; (0, y₂)) and ∂G/∂y₁ at y₁ = 0, for a target in the strip and a
    /// source height anywhere on Γ_ℂ. G satisfies (Δ + k²(1+q))G = −δ with
    /// G₀ = (i/4)H₀⁽¹⁾(k‖x−y‖).
    pub fn green(&self, x1: f64, x2: f64, y2: C64) -> Result<(C64, C64), GreensError> {
        if x1.abs() > self.fc.opts.l0 {
            return Err(GreensError::AccuracyLoss(x1, self.fc.opts.l0));
        }
        let k = self.k;
        let i = C64::new(0.0, 1.0);
        let r = complex_distance(x1, x2, y2)?;
        let h = hankel_h0_h1(k * r)?;
        let free = i / 4.0 * h.h0;
        let dfree = i * k / 4.0 * h.h1 * x1 / r;
        let fw = self.fc.filon_weights(x1);
        let (wv, dwv) = self.synth_field_with(&fw, x2, y2);
        let inv2pi = 1.0 / (2.0 * std::f64::consts::PI);
        Ok((free + inv2pi * wv, dfree + inv2pi * dwv))
    }

    /// Fourier synthesis of (w, ∂w/∂y₁)(x₁, x₂; 0, y₂), unweighted by 1/2π,
    /// reusing precomputed Filon weights for the x₁ value.
    pub fn synth_field_with(&self, fw: &FilonWeights, x2: f64, y2: C64) -> (C64, C64) {
        let x1 = fw.x1;
        let rx = self.reduce(C64::new(x2, 0.0));
        let ry = self.reduce(y2);
        let sep = rx.offset.re + ry.offset.re + (ry.x_ref - rx.x_ref).abs();
        let mut wsum = C64::new(0.0, 0.0);
        let mut dsum = C64::new(0.0, 0.0);
        let rule = panel_rule();
        let mut filon_idx = 0usize;
        for p in &self.fc.panels {
            // Exponential damping makes far panels negligible.
            let s_lo = self.fc.nodes[p.offset].s;
            if s_lo * sep - x1.abs() > 40.0 && s_lo > self.fc.opts.s_core {
                if p.filon {
                    filon_idx += 1;
                }
                continue;
            }
            if !p.filon {
                for m in p.offset..p.offset + NPP {
                    let fnode = &self.fc.nodes[m];
                    let wt = self.wtilde_pair(m, &rx, &ry);
                    let common = wt * fnode.dxi * fnode.w;
                    let phase = fnode.xi * x1;
                    wsum += common * 2.0 * phase.cos();
                    dsum += common * 2.0 * fnode.xi * phase.sin();
                }
            } else {
                let (wcos, wsin) = &fw.per_panel[filon_idx];
                filon_idx += 1;
                let mut amp = [C64::new(0.0, 0.0); NPP];
                let mut ampx = [C64::new(0.0, 0.0); NPP];
                for (idx, m) in (p.offset..p.offset + NPP).enumerate() {
                    let fnode = &self.fc.nodes[m];
                    let wt = self.wtilde_pair(m, &rx, &ry) * fnode.dxi;
                    amp[idx] = wt;
                    ampx[idx] = wt * fnode.xi;
                }
                let ca = rule.to_coeffs(&amp);
                let cx = rule.to_coeffs(&ampx);
                for nn in 0..NPP {
                    wsum += ca[nn] * wcos[nn];
                    dsum += cx[nn] * wsin[nn];
                }
            }
        }
        (wsum, dsum)
    }

    #[inline]
    fn wtilde_pair(&self, m: usize, rx: &Reduced, ry: &Reduced) -> C64 {
        let nd = &self.nodes[m];
        let fac = (nd.alpha * (rx.offset + ry.offset)).exp();
        fac * self.wtilde_channel(m, rx.x_ref, ry.x_ref)
    }
}

fn plain_moments_at(tau: f64) -> Vec<C64> {
    let p = crate::quad::legendre_all(tau, NPP);
    let mut f = Vec::with_capacity(NPP);
    f.push(C64::new(tau + 1.0, 0.0));
    for n in 1..NPP {
        f.push(C64::new((p[n + 1] - p[n - 1]) / (2.0 * n as f64 + 1.0), 0.0));
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_quad;

    const K: f64 = 3.0;

    fn small_fc() -> Arc<FourierContour> {
        let q = Potential::qb_right();
        let opts = FourierOptions::for_media(K, &[&q], 1e-8, 4.0);
        Arc::new(build_fourier_contour(K, &opts))
    }

    #[test]
    fn contour_nodes_have_opposite_im_sign() {
        let fc = small_fc();
        for n in &fc.nodes {
            assert!(n.xi.im < 0.0 && n.xi.re > 0.0);
            assert!((n.xi.im + n.xi.re.tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_potential_wtilde_vanishes() {
        let q = Potential::zero();
        let fc = small_fc();
        let cache = build_medium_cache(&q, K, fc, CacheOptions::default()).unwrap();
        for m in [0usize, 50, 200] {
            let v = cache.wtilde(m, C64::new(0.3, 0.0), C64::new(-0.4, 0.0));
            assert_eq!(v, C64::new(0.0, 0.0));
        }
    }

    /// Independent oracle: w̃ via the resolvent integral with adaptive
    /// quadrature against freshly integrated unscaled solutions (linear
    /// interpolation on a fine uniform mesh).
    fn wtilde_oracle(q: &Potential, xi: C64, x: f64, y: f64) -> C64 {
        let d = q.half_width();
        let alpha = alpha_star(xi, K).unwrap();
        let dens = 4000.0;
        let nfine = 24_000;
        let grid: Vec<f64> = (0..=nfine)
            .map(|i| -d + 2.0 * d * i as f64 / nfine as f64)
            .collect();
        let mesh = RkMesh::new(q, K, &grid, dens);
        let smf = integrate_transverse_mesh(&mesh, K, xi, Side::Minus).unwrap();
        let spf = integrate_transverse_mesh(&mesh, K, xi, Side::Plus).unwrap();
        let last = smf.grid.len() - 1;
        let w = smf.alpha * 2.0 * smf.phi[last] - smf.dphi[last];
        let at = |sol: &TransverseSolution, z: f64, side: Side| -> C64 {
            let t = ((z + d) / (2.0 * d) * nfine as f64).clamp(0.0, nfine as f64);
            let i0 = (t.floor() as usize).min(nfine - 1);
            let frac = t - i0 as f64;
            let p = sol.phi[i0] * (1.0 - frac) + sol.phi[i0 + 1] * frac;
            match side {
                Side::Minus => (-alpha * z).exp() * p,
                Side::Plus => (alpha * z).exp() * p,
            }
        };
        let um = |z: f64| at(&smf, z, Side::Minus);
        let up = |z: f64| at(&spf, z, Side::Plus);
        let p = |z: f64| K * K * q.eval(z) / (2.0 * alpha);
        let src = |z: f64| p(z) * (alpha * (z - y).abs()).exp();
        let f1 = |z: f64| um(z) * src(z);
        let f2 = |z: f64| up(z) * src(z);
        let i1 = adaptive_quad(&f1, -d, x.min(y), 1e-12) + adaptive_quad(&f1, x.min(y), x, 1e-12);
        let i2 = adaptive_quad(&f2, x, x.max(y), 1e-12) + adaptive_quad(&f2, x.max(y), d, 1e-12);
        (up(x) * i1 + um(x) * i2) / w
    }

    #[test]
    fn wtilde_matches_resolvent_oracle() {
        let q = Potential::qb_right();
        let fc = small_fc();
        let cache = build_medium_cache(&q, K, fc.clone(), CacheOptions::default()).unwrap();
        for &m in &[3usize, 40, 90] {
            let xi = fc.nodes[m].xi;
            for &(x, y) in &[(0.3, 1.1), (1.7, -2.0), (-0.5, -0.5001)] {
                let got = cache.wtilde(m, C64::new(x, 0.0), C64::new(y, 0.0));
                let want = wtilde_oracle(&q, xi, x, y);
                assert!(
                    (got - want).norm() <= 2e-6 * want.norm().max(1e-10),
                    "m={m} ξ={xi} (x,y)=({x},{y}): {got:?} vs {want:?}"
                );
            }
        }
    }

    #[test]
    fn wtilde_is_symmetric() {
        let q = Potential::qa_right();
        let fc = small_fc();
        let cache = build_medium_cache(&q, K, fc, CacheOptions::default()).unwrap();
        let pts = [(-1.3, 0.4), (0.9, 2.1), (2.9, -2.9), (0.05, 0.0)];
        for m in [5usize, 60, 150, 400] {
            for &(x, y) in &pts {
                let a = cache.wtilde(m, C64::new(x, 0.0), C64::new(y, 0.0));
                let b = cache.wtilde(m, C64::new(y, 0.0), C64::new(x, 0.0));
                assert!(
                    (a - b).norm() <= 1e-9 * a.norm().max(1e-12),
                    "m={m} ({x},{y}): {a:?} vs {b:?}"
                );
            }
        }
    }

    #[test]
    fn wtilde_extension_continuous_at_d() {
        let q = Potential::qb_right();
        let fc = small_fc();
        let cache = build_medium_cache(&q, K, fc, CacheOptions::default()).unwrap();
        let m = 30;
        let inner = cache.wtilde(m, C64::new(0.5, 0.0), C64::new(2.999999, 0.0));
        let outer = cache.wtilde(m, C64::new(0.5, 0.0), C64::new(3.000001, 0.0));
        assert!((inner - outer).norm() < 1e-5 * inner.norm());
    }

    #[test]
    fn wtilde_decays_cubically_in_xi() {
        // |w̃(ξ; x, x)| ~ C/|ξ|³ on a real-frequency sweep (the ρ terms vanish
        // on the diagonal): fitted exponent ≤ −2.
        let q = Potential::qb_right();
        let xi_min = K * (1.0 + q.sup_bound()).sqrt();
        let mut pts = Vec::new();
        for j in 0..6 {
            let xi = 2.0 * xi_min * (1.6_f64).powi(j);
            let w = wtilde_oracle(&q, C64::new(xi, 0.0), 0.3, 0.3);
            pts.push((xi.ln(), w.norm().max(1e-300).ln()));
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(slope <= -2.0, "fitted decay exponent {slope}");
    }

    #[test]
    fn wkb_exact_for_zero_potential() {
        let q = Potential::zero();
        let sol = wkb_transverse(&q, K, C64::new(40.0, -1.0), 6, Side::Minus).unwrap();
        for v in &sol.phi {
            assert!((v - C64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn wkb_matches_rk_at_crossover() {
        for q in [Potential::qa_left(), Potential::qa_right(), Potential::qb_right()] {
            let fc = small_fc();
            let cache = build_medium_cache(&q, K, fc, CacheOptions::default()).unwrap();
            let xi = xi_of(cache.crossover);
            let grid = TransverseGrid::new(&q, K);
            let tables = WkbTables::new(&q, K, &grid, 6);
            let (phi_wkb, _, _) = tables.eval_hybrid(xi, Side::Minus).unwrap();
            let alpha = alpha_star(xi, K).unwrap();
            let density = rk_density(alpha.norm(), 2.0 * grid.d, 1e-10);
            let mesh = RkMesh::new(&q, K, &grid_with_edges(&grid), density);
            let rk = integrate_transverse_mesh(&mesh, K, xi, Side::Minus).unwrap();
            let (phi_rk, _) = strip_edges(&grid, &rk.phi, &rk.dphi);
            let nl = grid.xs.len() - 1;
            let diff = (phi_wkb[nl] - phi_rk[nl]).norm() / phi_rk[nl].norm();
            assert!(
                diff < 1e-7,
                "crossover {} gate failed: {diff:e}",
                cache.crossover
            );
        }
    }

    #[test]
    fn hybrid_exact_on_square_well() {
        // Constant pieces propagate by the exact two-exponential solution, so
        // the hybrid matches high-density RK at machine level for any ξ.
        let q = Potential::qb_right();
        let grid = TransverseGrid::new(&q, K);
        let tables = WkbTables::new(&q, K, &grid, 6);
        for &s in &[24.0, 100.0, 1000.0] {
            let xi = xi_of(s);
            let (phi, _, _) = tables.eval_hybrid(xi, Side::Minus).unwrap();
            let alpha = alpha_star(xi, K).unwrap();
            let density = rk_density(alpha.norm(), 2.0 * grid.d, 1e-10);
            let mesh = RkMesh::new(&q, K, &grid_with_edges(&grid), density);
            let rk = integrate_transverse_mesh(&mesh, K, xi, Side::Minus).unwrap();
            let (phi_rk, _) = strip_edges(&grid, &rk.phi, &rk.dphi);
            let nl = grid.xs.len() - 1;
            let diff = (phi[nl] - phi_rk[nl]).norm() / phi_rk[nl].norm();
            // At very large |ξ| the RK side is the accuracy limiter.
            assert!(diff < 2e-9, "s={s}: hybrid vs RK {diff:e}");
        }
    }

    #[test]
    fn wkb_order1_series_error_decays_algebraically() {
        // The pure order-1 exponent series misses the jump-reflected wave of
        // the square well; its error must decay at least like 1/ξ² and stay
        // inside the expansion's own error-bound scale.
        let q = Potential::qb_right();
        let grid = TransverseGrid::new(&q, K);
        let tables = WkbTables::new(&q, K, &grid, 1);
        let xi_min = K * 2.0_f64.sqrt();
        let mut errs = Vec::new();
        for &f in &[6.0, 12.0] {
            let xi = C64::new(f * xi_min, 0.0);
            let alpha = alpha_star(xi, K).unwrap();
            let (phi, _) = tables.eval(xi, Side::Minus).unwrap();
            let mu = (alpha * alpha - C64::new(K * K, 0.0)).sqrt();
            let nl = grid.xs.len() - 1;
            let x = grid.xs[nl];
            let exact = ((alpha + mu) * (x + 3.0)).exp();
            errs.push((phi[nl] - exact).norm() / exact.norm());
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 2.5, "errors {errs:?} ratio {ratio}");
        assert!(errs[1] < 1e-2);
    }

    #[test]
    fn green_reduces_to_free_space_for_zero_potential() {
        let q = Potential::zero();
        let fc = small_fc();
        let cache = build_medium_cache(&q, K, fc, CacheOptions::default()).unwrap();
        let (g, dg) = cache.green(1.2, 0.7, C64::new(-0.4, 0.0)).unwrap();
        let r = ((1.2f64).powi(2) + (0.7f64 + 0.4).powi(2)).sqrt();
        let h = hankel_h0_h1(C64::new(K * r, 0.0)).unwrap();
        let free = C64::new(0.0, 0.25) * h.h0;
        let dfree = C64::new(0.0, 0.25 * K) * h.h1 * 1.2 / r;
        assert!((g - free).norm() < 1e-13 * free.norm());
        assert!((dg - dfree).norm() < 1e-13 * dfree.norm());
    }

    #[test]
    fn green_reciprocity_on_interface() {
        let q = Potential::qb_right();
        let fc = small_fc();
        let cache = build_medium_cache(&q, K, fc, CacheOptions::default()).unwrap();
        for &(a, b) in &[(0.4, 1.9), (-2.0, 0.3), (2.5, 2.8)] {
            let (gab, _) = cache.green(0.0, a, C64::new(b, 0.0)).unwrap();
            let (gba, _) = cache.green(0.0, b, C64::new(a, 0.0)).unwrap();
            assert!(
                (gab - gba).norm() <= 1e-8 * gab.norm(),
                "G(0,{a};0,{b}) = {gab:?} vs swapped {gba:?}"
            );
        }
    }

    #[test]
    fn green_field_self_convergence_in_tail_tol() {
        // A denser contour with a tighter tail tolerance should agree to
        // within 10× the coarser tolerance.
        let q = Potential::qb_right();
        let tol = 1e-7;
        let mut o1 = FourierOptions::for_media(K, &[&q], tol, 4.0);
        o1.tol = tol;
        let mut o2 = FourierOptions::for_media(K, &[&q], tol * 1e-2, 4.0);
        o2.core_h = 0.35;
        o2.tail_ratio = 1.18;
        let c1 = build_medium_cache(
            &q,
            K,
            Arc::new(build_fourier_contour(K, &o1)),
            CacheOptions::default(),
        )
        .unwrap();
        let c2 = build_medium_cache(
            &q,
            K,
            Arc::new(build_fourier_contour(K, &o2)),
            CacheOptions::default(),
        )
        .unwrap();
        let (g1, _) = c1.green(0.5, 1.5, C64::new(0.9, 0.0)).unwrap();
        let (g2, _) = c2.green(0.5, 1.5, C64::new(0.9, 0.0)).unwrap();
        assert!((g1 - g2).norm() < 10.0 * tol, "{g1:?} vs {g2:?}");
    }

    #[test]
    fn green_fd_helmholtz_residual_small() {
        // (Δ_h + k²(1+q))G ≈ 0 away from the source.
        let q = Potential::qb_right();
        let opts = FourierOptions::for_media(K, &[&q], 1e-9, 4.0);
        let fc = Arc::new(build_fourier_contour(K, &opts));
        let cache = build_medium_cache(&q, K, fc, CacheOptions::default()).unwrap();
        let y2 = C64::new(1.0, 0.0);
        let (x1, x2) = (1.3, 0.4);
        let h = 1e-4;
        let g = |a: f64, b: f64| cache.green(a, b, y2).unwrap().0;
        let g0 = g(x1, x2);
        let lap =
            (g(x1 + h, x2) + g(x1 - h, x2) + g(x1, x2 + h) + g(x1, x2 - h) - 4.0 * g0) / (h * h);
        let res = lap + K * K * (1.0 + q.eval(x2)) * g0;
        let scale = K * K * (1.0 + q.sup_bound()) * g0.norm();
        assert!(
            res.norm() < 1e-3 * scale,
            "residual {:e} vs scale {:e}",
            res.norm(),
            scale
        );
    }
}
