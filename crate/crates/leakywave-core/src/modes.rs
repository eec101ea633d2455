//! The transverse eigenproblem of the bi-infinite waveguide.
//!
//! For a frequency ξ the transverse operator L_ξ = ∂²_{x₂} + k²(1+q) − ξ² has
//! two distinguished solutions ũ₋, ũ₊ that equal e^{∓α*x₂} on the free sides
//! x₂ < −d, x₂ > d. Guided modes are the (finitely many) real ξ ∈
//! (k, k√(1+M_q)) where the Wronskian of the pair vanishes; the eigenfunction
//! then decays like e^{−κ|x₂|}, κ = √(ξ²−k²), with closed-form tails.
//!
//! Solutions are integrated in the scaled variables φ₋ = e^{α x₂}ũ₋ and
//! φ₊ = e^{−α x₂}ũ₊ (α = α*(ξ)), which stay O(1) for every ξ the solver
//! visits, including far out on the Fourier contour where the raw solutions
//! overflow by hundreds of orders of magnitude.

use crate::geometry::Potential;
use crate::quad::gl_cached;
use crate::specfun::alpha_star;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModesError {
    #[error(transparent)]
    SpecFun(#[from] crate::specfun::SpecFunError),
    #[error("mode scan could not isolate roots after {0} refinement rounds")]
    ModeMissRisk(usize),
    #[error("evaluation point {0} outside the admissible region")]
    OutOfRegion(C64),
    #[error("{0}")]
    Invalid(String),
}

/// Which free side the solution is launched from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// ũ₋ = e^{−α x₂} for x₂ ≤ −d, integrated rightward.
    Minus,
    /// ũ₊ = e^{+α x₂} for x₂ ≥ +d, integrated leftward.
    Plus,
}

/// A transverse solution in scaled form on a fixed grid.
///
/// For `Side::Minus`: ũ₋(x) = e^{−αx} φ(x), φ(−d) = 1, φ′(−d) = 0.
/// For `Side::Plus`:  ũ₊(x) = e^{+αx} φ(x), φ(+d) = 1, φ′(+d) = 0.
#[derive(Debug, Clone)]
pub struct TransverseSolution {
    pub xi: C64,
    pub alpha: C64,
    pub side: Side,
    pub grid: Vec<f64>,
    pub phi: Vec<C64>,
    pub dphi: Vec<C64>,
    /// Set when |α|·(2d)/N exceeded 0.1 for the step count used.
    pub stiffness_warning: bool,
}

impl TransverseSolution {
    /// Unscaled value ũ(grid[i]); may overflow for very large |α| — intended
    /// for the mode-finding regime where exponents stay representable.
    pub fn u(&self, i: usize) -> C64 {
        let x = self.grid[i];
        match self.side {
            Side::Minus => (-self.alpha * x).exp() * self.phi[i],
            Side::Plus => (self.alpha * x).exp() * self.phi[i],
        }
    }

    /// Unscaled derivative ∂ũ(grid[i]).
    pub fn du(&self, i: usize) -> C64 {
        let x = self.grid[i];
        match self.side {
            Side::Minus => (-self.alpha * x).exp() * (self.dphi[i] - self.alpha * self.phi[i]),
            Side::Plus => (self.alpha * x).exp() * (self.dphi[i] + self.alpha * self.phi[i]),
        }
    }
}

/// Precomputed k²q values at all RK stage points for one grid and substep
/// policy, so repeated solves (the Fourier cache, the mode scan) reuse the
/// same potential samples.
#[derive(Debug, Clone)]
pub struct RkMesh {
    pub grid: Vec<f64>,
    /// Per interval: substep count and k²q at the 2n+1 stage abscissae.
    intervals: Vec<(usize, Vec<f64>)>,
    pub total_steps: usize,
}

impl RkMesh {
    /// `grid` must be ascending, include both endpoints ±d, and contain every
    /// breakpoint of `q` so each interval is smooth.
    pub fn new(q: &Potential, k: f64, grid: &[f64], steps_per_unit: f64) -> Self {
        let k2 = k * k;
        let mut intervals = Vec::with_capacity(grid.len() - 1);
        let mut total = 0usize;
        for w in grid.windows(2) {
            let (a, b) = (w[0], w[1]);
            let n = ((b - a) * steps_per_unit).ceil().max(2.0) as usize;
            let h = (b - a) / n as f64;
            // Stage points: step endpoints and midpoints; q is sampled just
            // inside the interval at the edges so jumps resolve consistently.
            let mut qs = Vec::with_capacity(2 * n + 1);
            for j in 0..=(2 * n) {
                let mut x = a + 0.5 * h * j as f64;
                if j == 0 {
                    x += 1e-12 * (b - a);
                }
                if j == 2 * n {
                    x -= 1e-12 * (b - a);
                }
                qs.push(k2 * q.eval(x));
            }
            intervals.push((n, qs));
            total += n;
        }
        RkMesh {
            grid: grid.to_vec(),
            intervals,
            total_steps: total,
        }
    }
}

/// Classical RK4 on the scaled second-order equation
/// φ″ = ±2α φ′ − k²q φ (+ for the left launch, − for the right launch),
/// recording (φ, φ′) at every grid point.
pub fn integrate_transverse_mesh(
    mesh: &RkMesh,
    k: f64,
    xi: C64,
    side: Side,
) -> Result<TransverseSolution, ModesError> {
    let alpha = alpha_star(xi, k)?;
    let n_grid = mesh.grid.len();
    let mut phi = vec![C64::new(0.0, 0.0); n_grid];
    let mut dphi = vec![C64::new(0.0, 0.0); n_grid];
    let two_d = mesh.grid[n_grid - 1] - mesh.grid[0];
    let stiffness_warning = alpha.norm() * two_d / mesh.total_steps as f64 > 0.1;

    let n_int = mesh.intervals.len();
    let mut y0 = C64::new(1.0, 0.0);
    let mut y1 = C64::new(0.0, 0.0);
    match side {
        Side::Minus => {
            let c2a = alpha * 2.0;
            phi[0] = y0;
            dphi[0] = y1;
            for iv in 0..n_int {
                let (nsub, qs) = &mesh.intervals[iv];
                let h = (mesh.grid[iv + 1] - mesh.grid[iv]) / *nsub as f64;
                for j in 0..*nsub {
                    let (qa, qm, qb) = (qs[2 * j], qs[2 * j + 1], qs[2 * j + 2]);
                    rk4_step(&mut y0, &mut y1, h, c2a, qa, qm, qb);
                }
                phi[iv + 1] = y0;
                dphi[iv + 1] = y1;
            }
        }
        Side::Plus => {
            let c2a = -alpha * 2.0;
            phi[n_grid - 1] = y0;
            dphi[n_grid - 1] = y1;
            for step in 0..n_int {
                let iv = n_int - 1 - step;
                let (nsub, qs) = &mesh.intervals[iv];
                let h = -(mesh.grid[iv + 1] - mesh.grid[iv]) / *nsub as f64;
                for j in 0..*nsub {
                    let m = 2 * (*nsub - j);
                    let (qa, qm, qb) = (qs[m], qs[m - 1], qs[m - 2]);
                    rk4_step(&mut y0, &mut y1, h, c2a, qa, qm, qb);
                }
                phi[iv] = y0;
                dphi[iv] = y1;
            }
        }
    }
    Ok(TransverseSolution {
        xi,
        alpha,
        side,
        grid: mesh.grid.clone(),
        phi,
        dphi,
        stiffness_warning,
    })
}

#[inline]
fn rk4_step(y0: &mut C64, y1: &mut C64, h: f64, c2a: C64, qa: f64, qm: f64, qb: f64) {
    let f = |q: f64, u0: C64, u1: C64| (u1, c2a * u1 - q * u0);
    let (k1a, k1b) = f(qa, *y0, *y1);
    let (k2a, k2b) = f(qm, *y0 + k1a * (0.5 * h), *y1 + k1b * (0.5 * h));
    let (k3a, k3b) = f(qm, *y0 + k2a * (0.5 * h), *y1 + k2b * (0.5 * h));
    let (k4a, k4b) = f(qb, *y0 + k3a * h, *y1 + k3b * h);
    *y0 += (k1a + (k2a + k3a) * 2.0 + k4a) * (h / 6.0);
    *y1 += (k1b + (k2b + k3b) * 2.0 + k4b) * (h / 6.0);
}

/// Convenience wrapper building a fresh mesh (breakpoints of `q` inserted).
pub fn integrate_transverse(
    q: &Potential,
    k: f64,
    xi: C64,
    side: Side,
    steps_per_unit: f64,
) -> Result<TransverseSolution, ModesError> {
    let mesh = RkMesh::new(q, k, &default_grid(q), steps_per_unit);
    integrate_transverse_mesh(&mesh, k, xi, side)
}

fn default_grid(q: &Potential) -> Vec<f64> {
    let d = q.half_width();
    let mut grid = vec![-d];
    grid.extend(q.breakpoints());
    grid.push(d);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    grid
}

/// W(ξ) = ũ₋(d) ∂ũ₊(d) − ũ₊(d) ∂ũ₋(d) = 2α φ₋(d) − φ₋′(d),
/// using ũ₊(d) = e^{αd}, ∂ũ₊(d) = α e^{αd} and the scaled ũ₋ trace. The
/// e^{±αd} factors cancel exactly, so the formula never overflows.
pub fn wronskian_mesh(mesh: &RkMesh, k: f64, xi: C64) -> Result<C64, ModesError> {
    let sol = integrate_transverse_mesh(mesh, k, xi, Side::Minus)?;
    let last = sol.grid.len() - 1;
    Ok(sol.alpha * 2.0 * sol.phi[last] - sol.dphi[last])
}

/// Standalone Wronskian evaluation.
pub fn wronskian(q: &Potential, k: f64, xi: C64, steps_per_unit: f64) -> Result<C64, ModesError> {
    let mesh = RkMesh::new(q, k, &default_grid(q), steps_per_unit);
    wronskian_mesh(&mesh, k, xi)
}

// ---------------------------------------------------------------------------
// Guided modes
// ---------------------------------------------------------------------------

const EVAL_NODES_PER_PIECE: usize = 32;

/// One guided mode: frequency, decay rate, tail coefficients, and the interior
/// profile on per-piece Gauss–Legendre grids for barycentric evaluation.
#[derive(Debug, Clone)]
pub struct Mode {
    pub xi: f64,
    pub kappa: f64,
    /// v(x₂) = c_plus · e^{−κ x₂} for x₂ > d.
    pub c_plus: f64,
    /// v(x₂) = c_minus · e^{+κ x₂} for x₂ < −d.
    pub c_minus: f64,
    pieces: Vec<ModePiece>,
    half_width: f64,
}

#[derive(Debug, Clone)]
struct ModePiece {
    lo: f64,
    hi: f64,
    vals: Vec<f64>,
}

/// The guided-mode family of one potential at wavenumber k.
#[derive(Debug, Clone)]
pub struct ModeSet {
    pub k: f64,
    pub m_q: f64,
    /// Upper bound k√(1+M_q) on guided frequencies.
    pub xi_min: f64,
    pub modes: Vec<Mode>,
    /// |W(ξ_j)|/ξ_j at each accepted root.
    pub wronskian_residuals: Vec<f64>,
    pub refinement_rounds: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ModeSearchConfig {
    pub scan_points: usize,
    pub scan_steps_per_unit: f64,
    pub refine_steps_per_unit: f64,
    pub rel_tol: f64,
}

impl Default for ModeSearchConfig {
    fn default() -> Self {
        ModeSearchConfig {
            scan_points: 2000,
            scan_steps_per_unit: 500.0,
            refine_steps_per_unit: 4000.0,
            rel_tol: 1e-11,
        }
    }
}

/// Scan the Wronskian over (k(1+1e−8), k√(1+M_q)), bracket sign changes, and
/// polish each root by Brent's method. Eigenfunctions are L²-normalized with
/// closed-form tail integrals and the sign fixed by v(d) > 0.
///
/// Two sign changes in adjacent scan cells flag a miss risk; the scan is then
/// refined ×4, up to three rounds.
pub fn find_modes(q: &Potential, k: f64, cfg: ModeSearchConfig) -> Result<ModeSet, ModesError> {
    let m_q = q.sup_bound();
    let xi_min = k * (1.0 + m_q).sqrt();
    if q.is_zero() {
        return Ok(ModeSet {
            k,
            m_q,
            xi_min,
            modes: vec![],
            wronskian_residuals: vec![],
            refinement_rounds: 0,
        });
    }
    let grid = default_grid(q);
    let lo = k * (1.0 + 1e-8);
    let hi = xi_min * (1.0 - 1e-10);
    let w_real = |xi: f64, mesh: &RkMesh| -> Result<f64, ModesError> {
        let w = wronskian_mesh(mesh, k, C64::new(xi, 0.0))?;
        Ok(w.re)
    };

    let mut n_scan = cfg.scan_points.max(64);
    let mut rounds = 0usize;
    let brackets = loop {
        let scan_mesh = RkMesh::new(q, k, &grid, cfg.scan_steps_per_unit);
        let xs: Vec<f64> = (0..=n_scan)
            .map(|i| lo + (hi - lo) * i as f64 / n_scan as f64)
            .collect();
        let ws: Result<Vec<f64>, ModesError> =
            xs.par_iter().map(|&xi| w_real(xi, &scan_mesh)).collect();
        let ws = ws?;
        let mut brs: Vec<(f64, f64)> = Vec::new();
        let mut adjacent = false;
        let mut last_change: Option<usize> = None;
        for i in 0..n_scan {
            if ws[i].signum() != ws[i + 1].signum() {
                if last_change == Some(i.wrapping_sub(1)) {
                    adjacent = true;
                }
                last_change = Some(i);
                brs.push((xs[i], xs[i + 1]));
            }
        }
        if !adjacent {
            break brs;
        }
        if rounds >= 3 {
            return Err(ModesError::ModeMissRisk(rounds));
        }
        n_scan *= 4;
        rounds += 1;
    };

    let refine_mesh = RkMesh::new(q, k, &grid, cfg.refine_steps_per_unit);
    let refined: Result<Vec<(f64, f64)>, ModesError> = brackets
        .par_iter()
        .map(|&(a, b)| {
            let f = |xi: f64| w_real(xi, &refine_mesh).unwrap_or(f64::NAN);
            let root = brent(&f, a, b, cfg.rel_tol)?;
            Ok((root, f(root).abs() / root))
        })
        .collect();
    let mut refined = refined?;
    refined.sort_by(|m, n| m.0.partial_cmp(&n.0).unwrap());
    let mut modes = Vec::new();
    let mut residuals = Vec::new();
    for (root, res) in refined {
        modes.push(build_mode(q, k, root, cfg.refine_steps_per_unit)?);
        residuals.push(res);
    }
    Ok(ModeSet {
        k,
        m_q,
        xi_min,
        modes,
        wronskian_residuals: residuals,
        refinement_rounds: rounds,
    })
}

fn brent<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, rel_tol: f64) -> Result<f64, ModesError> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa * fb > 0.0 {
        return Err(ModesError::Invalid(format!(
            "bracket [{a}, {b}] does not straddle a root"
        )));
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut mflag = true;
    let mut d_prev = (b - a).abs();
    for _ in 0..200 {
        let tol = rel_tol * b.abs().max(1.0);
        if fb == 0.0 || (b - a).abs() < tol {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let inside = (s > lo.min(b) && s < lo.max(b)) || (s > b.min(lo) && s < b.max(lo));
        let cond = !inside
            || (mflag && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!mflag && (s - b).abs() >= d_prev / 2.0)
            || (mflag && (b - c).abs() < tol)
            || (!mflag && d_prev < tol);
        if cond {
            s = 0.5 * (a + b);
            mflag = true;
        } else {
            mflag = false;
        }
        let fs = f(s);
        d_prev = (b - c).abs();
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Ok(b)
}

/// Integrate the eigenfunction at the converged root onto per-piece GL grids,
/// normalize in L² (interior quadrature + closed-form tails), fix the sign.
fn build_mode(q: &Potential, k: f64, xi: f64, steps_per_unit: f64) -> Result<Mode, ModesError> {
    let d = q.half_width();
    let kappa = (xi * xi - k * k).sqrt();
    // Evaluation panels short enough that 32 nodes resolve both the local
    // oscillation of v and the potential's own structure.
    let h_eval = (4.0 / q.osc_scale().max(k * (1.0 + q.sup_bound()).sqrt())).min(0.5);
    let edges: Vec<f64> = {
        let panels = crate::quad::split_panels(-d, d, &q.breakpoints(), h_eval);
        let mut e: Vec<f64> = panels.iter().map(|p| p.0).collect();
        e.push(d);
        e
    };
    let (gx, gw) = gl_cached(EVAL_NODES_PER_PIECE);
    let mut grid = vec![edges[0]];
    for w in edges.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let half = 0.5 * (w[1] - w[0]);
        for &x in gx {
            grid.push(mid + half * x);
        }
        grid.push(w[1]);
    }
    let mesh = RkMesh::new(q, k, &grid, steps_per_unit);
    let sol = integrate_transverse_mesh(&mesh, k, C64::new(xi, 0.0), Side::Minus)?;
    // Real eigenproblem: values are real up to roundoff.
    let vals: Vec<f64> = (0..grid.len()).map(|i| sol.u(i).re).collect();

    let mut norm_sq = 0.0;
    let mut idx = 1;
    let mut pieces = Vec::new();
    for w in edges.windows(2) {
        let half = 0.5 * (w[1] - w[0]);
        let mut pv = Vec::with_capacity(EVAL_NODES_PER_PIECE);
        for j in 0..EVAL_NODES_PER_PIECE {
            let v = vals[idx + j];
            norm_sq += gw[j] * half * v * v;
            pv.push(v);
        }
        pieces.push(ModePiece {
            lo: w[0],
            hi: w[1],
            vals: pv,
        });
        idx += EVAL_NODES_PER_PIECE + 1;
    }
    let v_at_d = *vals.last().unwrap();
    let v_at_md = vals[0];
    norm_sq += (v_at_d * v_at_d + v_at_md * v_at_md) / (2.0 * kappa);
    let mut scale = 1.0 / norm_sq.sqrt();
    if v_at_d * scale < 0.0 {
        scale = -scale;
    }
    for p in &mut pieces {
        for v in &mut p.vals {
            *v *= scale;
        }
    }
    let c_plus = v_at_d * scale * (kappa * d).exp();
    let c_minus = v_at_md * scale * (kappa * d).exp();
    Ok(Mode {
        xi,
        kappa,
        c_plus,
        c_minus,
        pieces,
        half_width: d,
    })
}

impl Mode {
    /// Evaluate the mode profile at z ∈ Γ_ℂ: barycentric interior interpolation
    /// for |Re z| ≤ d (where z must be real), closed-form tails beyond.
    pub fn eval(&self, z: C64) -> Result<C64, ModesError> {
        let d = self.half_width;
        if z.re > d {
            return Ok((-self.kappa * z).exp() * self.c_plus);
        }
        if z.re < -d {
            return Ok((self.kappa * z).exp() * self.c_minus);
        }
        if z.im.abs() > 1e-10 * (1.0 + z.re.abs()) {
            return Err(ModesError::OutOfRegion(z));
        }
        let x = z.re;
        for p in &self.pieces {
            if x <= p.hi + 1e-14 && x >= p.lo - 1e-14 {
                let rule = eval_rule();
                let tau = ((2.0 * x - p.lo - p.hi) / (p.hi - p.lo)).clamp(-1.0, 1.0);
                let cvals: Vec<C64> = p.vals.iter().map(|&v| C64::new(v, 0.0)).collect();
                return Ok(rule.interpolate(&cvals, tau));
            }
        }
        Err(ModesError::OutOfRegion(z))
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }
}

fn eval_rule() -> &'static crate::quad::PanelRule {
    use std::sync::OnceLock;
    static RULE: OnceLock<crate::quad::PanelRule> = OnceLock::new();
    RULE.get_or_init(|| crate::quad::PanelRule::new(EVAL_NODES_PER_PIECE))
}
