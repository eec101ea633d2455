//! Potentials, complexified contours, truncation, and panel discretizations.
//!
//! The interface line {x₁ = 0} is replaced by a graph contour z(t) = t + iψ(t)
//! with ψ ≡ 0 on the flat window [−L_C, L_C] and monotone imaginary lift
//! outside it. Admissibility (monotonicity plus, when required, the slope
//! condition c_lo|t| ≤ |ψ| ≤ c_hi|t| far out) is certified at construction.
//! Truncation cuts the contour where e^{−β|Im z|} reaches a prescribed ε, and
//! the truncated contour is split into composite Gauss–Legendre panels.

use crate::jet::Jet;
use crate::quad::{gl_cached, split_panels};
use crate::specfun::erf_real;
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("potential invalid: {0}")]
    BadPotential(String),
    #[error("lift decreases near t = {0}")]
    MonotonicityViolation(f64),
    #[error("slope condition cannot be certified: {0}")]
    SlopeViolation(String),
    #[error("contour is not flat on [−L_C, L_C]: |ψ({0})| = {1:e}")]
    FlatnessViolation(f64, f64),
    #[error("requested truncation depth {target} exceeds sup ψ = {sup}")]
    UnreachableDepth { target: f64, sup: f64 },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

// ---------------------------------------------------------------------------
// Potentials
// ---------------------------------------------------------------------------

/// Analytic profile of one smooth piece of a potential.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Zero,
    Const(f64),
    /// 2 e^{−2x²} (3 + 2cos(5πx + 0.7) − cos(2x + 1.6))
    SmoothLeftA,
    /// (8/3) e^{−x²/0.245} (1.53 − cos(1.05) + 0.53 cos(x + 0.25))
    SmoothRightA,
    /// Piecewise-linear table (x ascending).
    Tabulated { xs: Vec<f64>, vals: Vec<f64> },
}

impl Profile {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Const(v) => *v,
            Profile::SmoothLeftA => {
                2.0 * (-2.0 * x * x).exp()
                    * (3.0 + 2.0 * (5.0 * std::f64::consts::PI * x + 0.7).cos()
                        - (2.0 * x + 1.6).cos())
            }
            Profile::SmoothRightA => {
                8.0 / 3.0
                    * (-x * x / 0.245).exp()
                    * (1.53 - 1.05_f64.cos() + 0.53 * (x + 0.25).cos())
            }
            Profile::Tabulated { xs, vals } => {
                if xs.is_empty() {
                    return 0.0;
                }
                if x <= xs[0] {
                    return vals[0];
                }
                if x >= *xs.last().unwrap() {
                    return *vals.last().unwrap();
                }
                let i = xs.partition_point(|&t| t <= x).min(xs.len() - 1);
                let (x0, x1) = (xs[i - 1], xs[i]);
                let s = (x - x0) / (x1 - x0);
                vals[i - 1] * (1.0 - s) + vals[i] * s
            }
        }
    }

    pub fn eval_jet(&self, x: f64) -> Jet {
        match self {
            Profile::Zero => Jet::constant(0.0),
            Profile::Const(v) => Jet::constant(*v),
            Profile::SmoothLeftA => {
                let t = Jet::variable(x);
                let env = (t * t * -2.0).exp() * 2.0;
                let c1 = (t * (5.0 * std::f64::consts::PI) + 0.7).cos();
                let c2 = (t * 2.0 + 1.6).cos();
                env * (c1 * 2.0 + 3.0 - c2)
            }
            Profile::SmoothRightA => {
                let t = Jet::variable(x);
                let env = (t * t * (-1.0 / 0.245)).exp() * (8.0 / 3.0);
                let c = (t + 0.25).cos();
                env * (c * 0.53 + (1.53 - 1.05_f64.cos()))
            }
            Profile::Tabulated { .. } => Jet::constant(self.eval(x)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PotentialPiece {
    pub lo: f64,
    pub hi: f64,
    pub profile: Profile,
}

/// A transverse potential q(x₂) ≥ 0 supported on [−d, d], piecewise smooth.
#[derive(Debug, Clone)]
pub struct Potential {
    half_width: f64,
    pieces: Vec<PotentialPiece>,
    sup_bound: f64,
    osc_scale: f64,
    zero: bool,
}

impl Potential {
    pub fn from_pieces(half_width: f64, pieces: Vec<PotentialPiece>) -> Result<Self, GeometryError> {
        if half_width <= 0.0 {
            return Err(GeometryError::BadParameter("half_width must be > 0".into()));
        }
        let mut cur = -half_width;
        for p in &pieces {
            if (p.lo - cur).abs() > 1e-12 || p.hi <= p.lo {
                return Err(GeometryError::BadPotential(format!(
                    "pieces must tile [−d, d]; got gap at {cur}"
                )));
            }
            cur = p.hi;
        }
        if !pieces.is_empty() && (cur - half_width).abs() > 1e-12 {
            return Err(GeometryError::BadPotential("pieces do not reach d".into()));
        }
        let mut sup: f64 = 0.0;
        let mut sup_dd: f64 = 0.0;
        let mut zero = true;
        for p in &pieces {
            let n = 600;
            for i in 0..=n {
                let x = p.lo + (p.hi - p.lo) * i as f64 / n as f64;
                let j = p.profile.eval_jet(x);
                let v = j.value();
                if v < -1e-12 {
                    return Err(GeometryError::BadPotential(format!("q({x}) = {v} < 0")));
                }
                if v > 1e-13 {
                    zero = false;
                }
                sup = sup.max(v);
                sup_dd = sup_dd.max(j.derivative(2).abs());
            }
        }
        let osc_scale = if sup > 0.0 { (sup_dd / sup).sqrt() } else { 0.0 };
        Ok(Potential {
            half_width,
            pieces,
            sup_bound: sup,
            osc_scale,
            zero,
        })
    }

    /// The vacuum potential q ≡ 0 (nominal half-width 1).
    pub fn zero() -> Self {
        Potential {
            half_width: 1.0,
            pieces: vec![],
            sup_bound: 0.0,
            osc_scale: 0.0,
            zero: true,
        }
    }

    /// q = height · χ_{[−a, a]}.
    pub fn square_well(height: f64, half_width: f64) -> Self {
        Potential::from_pieces(
            half_width,
            vec![PotentialPiece {
                lo: -half_width,
                hi: half_width,
                profile: Profile::Const(height),
            }],
        )
        .expect("square well is valid")
    }

    /// The smooth left preset (supports four guided modes at k = 3).
    pub fn qa_left() -> Self {
        Potential::from_pieces(
            4.25,
            vec![PotentialPiece {
                lo: -4.25,
                hi: 4.25,
                profile: Profile::SmoothLeftA,
            }],
        )
        .expect("preset is valid")
    }

    /// The smooth right preset (two guided modes at k = 3).
    pub fn qa_right() -> Self {
        Potential::from_pieces(
            3.0,
            vec![PotentialPiece {
                lo: -3.0,
                hi: 3.0,
                profile: Profile::SmoothRightA,
            }],
        )
        .expect("preset is valid")
    }

    /// The indicator preset χ_{[−3,3]} (five guided modes at k = 3).
    pub fn qb_right() -> Self {
        Potential::square_well(1.0, 3.0)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// M_q = sup q.
    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    /// Oscillation scale √(sup|q″| / sup q); feeds the WKB crossover choice.
    pub fn osc_scale(&self) -> f64 {
        self.osc_scale
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x.abs() > self.half_width {
            return 0.0;
        }
        for p in &self.pieces {
            if x <= p.hi || std::ptr::eq(p, self.pieces.last().unwrap()) {
                if x >= p.lo - 1e-14 {
                    return p.profile.eval(x);
                }
            }
        }
        0.0
    }

    pub fn eval_jet(&self, x: f64) -> Jet {
        if x.abs() > self.half_width {
            return Jet::constant(0.0);
        }
        for p in &self.pieces {
            if x <= p.hi + 1e-14 && x >= p.lo - 1e-14 {
                return p.profile.eval_jet(x);
            }
        }
        Jet::constant(0.0)
    }

    /// The constant value of the piece containing x, when that piece is flat.
    pub fn constant_piece_value(&self, x: f64) -> Option<f64> {
        if x.abs() > self.half_width {
            return Some(0.0);
        }
        for p in &self.pieces {
            if x <= p.hi + 1e-14 && x >= p.lo - 1e-14 {
                return match p.profile {
                    Profile::Zero => Some(0.0),
                    Profile::Const(v) => Some(v),
                    _ => None,
                };
            }
        }
        Some(0.0)
    }

    /// Interior smoothness breakpoints (piece edges strictly inside (−d, d)).
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::new();
        for p in &self.pieces {
            if p.lo > -self.half_width + 1e-12 {
                b.push(p.lo);
            }
            if p.hi < self.half_width - 1e-12 {
                b.push(p.hi);
            }
        }
        b.dedup_by(|a, c| (*a - *c).abs() < 1e-12);
        b
    }
}

// ---------------------------------------------------------------------------
// Admissible contours
// ---------------------------------------------------------------------------

/// Built-in lift families ψ(t).
#[derive(Debug, Clone, PartialEq)]
pub enum Lift {
    /// ψ ≡ 0 — the real line.
    Zero,
    /// ψ(t) = amplitude · (erf((center+t)/width) − erf((center−t)/width)).
    Erf { amplitude: f64, center: f64, width: f64 },
    /// Smoothed linear ramp: slope · (g(t−start) − g(−t−start)) with the
    /// erf-smoothed rectifier g; `smooth = 0` gives the literal ramp.
    Ramp { slope: f64, start: f64, smooth: f64 },
    /// Tabulated lift; piecewise-linear in between, derivative by 4th-order
    /// central differences.
    Tabulated { ts: Vec<f64>, psis: Vec<f64> },
}

impl Lift {
    fn eval(&self, t: f64) -> f64 {
        match self {
            Lift::Zero => 0.0,
            Lift::Erf { amplitude, center, width } => {
                amplitude * (erf_real((center + t) / width) - erf_real((center - t) / width))
            }
            Lift::Ramp { slope, start, smooth } => {
                let g = |u: f64| -> f64 {
                    if *smooth <= 0.0 {
                        return u.max(0.0);
                    }
                    let v = u / smooth;
                    0.5 * u * (1.0 + erf_real(v))
                        + smooth * (-v * v).exp() / (2.0 * std::f64::consts::PI.sqrt())
                };
                slope * (g(t - start) - g(-t - start))
            }
            Lift::Tabulated { ts, psis } => {
                if ts.is_empty() {
                    return 0.0;
                }
                if t <= ts[0] {
                    return psis[0];
                }
                if t >= *ts.last().unwrap() {
                    return *psis.last().unwrap();
                }
                let i = ts.partition_point(|&u| u <= t).min(ts.len() - 1);
                let s = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
                psis[i - 1] * (1.0 - s) + psis[i] * s
            }
        }
    }

    fn deriv(&self, t: f64) -> f64 {
        match self {
            Lift::Zero => 0.0,
            Lift::Erf { amplitude, center, width } => {
                let two_over_sqrt_pi = 2.0 / std::f64::consts::PI.sqrt();
                amplitude * two_over_sqrt_pi / width
                    * ((-((center + t) / width).powi(2)).exp()
                        + (-((center - t) / width).powi(2)).exp())
            }
            Lift::Ramp { slope, start, smooth } => {
                let gp = |u: f64| -> f64 {
                    if *smooth <= 0.0 {
                        return if u > 0.0 { 1.0 } else { 0.0 };
                    }
                    0.5 * (1.0 + erf_real(u / smooth))
                };
                slope * (gp(t - start) + gp(-t - start))
            }
            Lift::Tabulated { ts, .. } => {
                let scale = if ts.len() >= 2 {
                    (ts.last().unwrap() - ts[0]).abs().max(1.0)
                } else {
                    1.0
                };
                let h = 1e-6 * scale;
                (-self.eval(t + 2.0 * h) + 8.0 * self.eval(t + h) - 8.0 * self.eval(t - h)
                    + self.eval(t - 2.0 * h))
                    / (12.0 * h)
            }
        }
    }
}

/// Whether the slope condition must be certified at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlopeCheck {
    Require,
    Skip,
}

/// A monotone graph contour z(t) = t + iψ(t), flat on [−L_C, L_C].
#[derive(Debug, Clone)]
pub struct AdmissibleContour {
    lift: Lift,
    l_c: f64,
    k: f64,
    /// Certified slope window constants; zero when slope checking was skipped.
    pub c_lo: f64,
    pub c_hi: f64,
    pub r0: f64,
    pub slope_checked: bool,
}

/// Validates flatness on the window, monotonicity of the lift, and (unless
/// skipped) the slope condition on [R₀, 10 R₀].
pub fn build_admissible_contour(
    lift: Lift,
    l_c: f64,
    k: f64,
    slope: SlopeCheck,
) -> Result<AdmissibleContour, GeometryError> {
    if l_c <= 0.0 || k <= 0.0 {
        return Err(GeometryError::BadParameter("need L_C > 0, k > 0".into()));
    }
    let flat_tol = 1e-12 * l_c;
    let n = 400;
    for i in 0..=n {
        let t = -l_c + 2.0 * l_c * i as f64 / n as f64;
        let v = lift.eval(t);
        if v.abs() > flat_tol {
            return Err(GeometryError::FlatnessViolation(t, v.abs()));
        }
    }
    // Monotonicity and sign pattern of the raw lift on a wide sample grid.
    let r0_guess = find_r0(&lift, l_c);
    let t_span = (10.0 * r0_guess).max(4.0 * l_c);
    let m = 4000;
    let mut prev = lift.eval(-t_span);
    for i in 1..=m {
        let t = -t_span + 2.0 * t_span * i as f64 / m as f64;
        let v = lift.eval(t);
        if v < prev - 1e-10 * (1.0 + v.abs()) {
            return Err(GeometryError::MonotonicityViolation(t));
        }
        prev = v;
    }
    let (c_lo, c_hi, slope_checked) = match slope {
        SlopeCheck::Skip => (0.0, 0.0, false),
        SlopeCheck::Require => {
            let r0 = r0_guess;
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            let n = 800;
            for i in 0..=n {
                let t = r0 + (10.0 * r0 - r0) * i as f64 / n as f64;
                for s in [t, -t] {
                    let ratio = lift.eval(s).abs() / s.abs();
                    lo = lo.min(ratio);
                    hi = hi.max(ratio);
                }
            }
            if !(lo > 0.0) {
                return Err(GeometryError::SlopeViolation(format!(
                    "|ψ|/|t| reaches 0 on [{r0}, {}]",
                    10.0 * r0
                )));
            }
            (0.95 * lo, 1.05 * hi, true)
        }
    };
    Ok(AdmissibleContour {
        lift,
        l_c,
        k,
        c_lo,
        c_hi,
        r0: r0_guess,
        slope_checked,
    })
}

/// First |t| beyond which the lift is decidedly nonzero (|ψ| ≥ 0.5), used as
/// the slope-window anchor R₀ > L_C.
fn find_r0(lift: &Lift, l_c: f64) -> f64 {
    let mut t = l_c * 1.2;
    for _ in 0..200 {
        if lift.eval(t).abs() >= 0.5 {
            return t.max(1.5 * l_c);
        }
        t *= 1.1;
        if t > 1e6 {
            break;
        }
    }
    1.5 * l_c
}

impl AdmissibleContour {
    /// The lift with sub-threshold flat-window values clamped to exactly zero.
    pub fn psi(&self, t: f64) -> f64 {
        if t.abs() <= self.l_c {
            return 0.0;
        }
        let v = self.lift.eval(t);
        if v.abs() <= 1e-12 * self.l_c {
            0.0
        } else {
            v
        }
    }

    pub fn dpsi(&self, t: f64) -> f64 {
        if t.abs() <= self.l_c {
            return 0.0;
        }
        let v = self.lift.deriv(t);
        if v.abs() <= 1e-14 {
            0.0
        } else {
            v
        }
    }

    pub fn z(&self, t: f64) -> C64 {
        C64::new(t, self.psi(t))
    }

    /// dz/dt = 1 + iψ′(t).
    pub fn dz(&self, t: f64) -> C64 {
        C64::new(1.0, self.dpsi(t))
    }

    pub fn l_c(&self) -> f64 {
        self.l_c
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// sup ψ over [0, 10⁷] (saturation value for bounded lifts).
    pub fn sup_psi(&self) -> f64 {
        self.lift.eval(1e7)
    }
}

// ---------------------------------------------------------------------------
// Truncation
// ---------------------------------------------------------------------------

/// A contour truncated where e^{−β |Im z|} = ε.
#[derive(Debug, Clone)]
pub struct TruncatedContour {
    pub contour: AdmissibleContour,
    pub beta: f64,
    pub eps: f64,
    /// Parameter bound: the contour is kept on [−t_max, t_max].
    pub t_max: f64,
    /// |Im z| at the cut.
    pub depth: f64,
    pub saturated: bool,
}

pub fn truncate_contour(
    contour: &AdmissibleContour,
    beta: f64,
    eps: f64,
    allow_saturation: bool,
) -> Result<TruncatedContour, GeometryError> {
    if beta <= 0.0 || eps <= 0.0 || eps > 1.0 {
        return Err(GeometryError::BadParameter("need β > 0, 0 < ε ≤ 1".into()));
    }
    let target = (1.0 / eps).ln() / beta;
    truncate_at_depth(contour, beta, eps, target, allow_saturation)
}

/// Truncate at a prescribed |Im z| depth directly.
pub fn truncate_at_depth(
    contour: &AdmissibleContour,
    beta: f64,
    eps: f64,
    target: f64,
    allow_saturation: bool,
) -> Result<TruncatedContour, GeometryError> {
    if target <= 0.0 {
        return Ok(TruncatedContour {
            contour: contour.clone(),
            beta,
            eps,
            t_max: contour.l_c(),
            depth: 0.0,
            saturated: false,
        });
    }
    // Bracket by doubling out from the flat window.
    let mut hi = contour.l_c() * 1.5 + 1.0;
    let mut reached = false;
    for _ in 0..80 {
        if contour.psi(hi) >= target {
            reached = true;
            break;
        }
        hi *= 1.5;
        if hi > 1e9 {
            break;
        }
    }
    if !reached {
        let sup = contour.sup_psi();
        if !allow_saturation {
            return Err(GeometryError::UnreachableDepth { target, sup });
        }
        // Saturating lift: cut where ψ first reaches (1 − 1e−9)·sup.
        let sat = sup * (1.0 - 1e-9);
        let mut hi2 = contour.l_c() * 1.5 + 1.0;
        while contour.psi(hi2) < sat && hi2 < 1e9 {
            hi2 *= 1.5;
        }
        let t_max = bisect_monotone(|t| contour.psi(t), contour.l_c(), hi2, sat);
        return Ok(TruncatedContour {
            contour: contour.clone(),
            beta,
            eps,
            t_max,
            depth: contour.psi(t_max),
            saturated: true,
        });
    }
    let t_max = bisect_monotone(|t| contour.psi(t), contour.l_c(), hi, target);
    Ok(TruncatedContour {
        contour: contour.clone(),
        beta,
        eps,
        t_max,
        depth: contour.psi(t_max),
        saturated: false,
    })
}

fn bisect_monotone<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, target: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-13 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// Panels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct PanelNode {
    /// Contour parameter.
    pub t: f64,
    /// Position z = t + iψ(t).
    pub z: C64,
    /// Tangent factor dz/dt = 1 + iψ′(t).
    pub dz: C64,
    /// Parameter-space quadrature weight (already scaled by the panel size).
    pub w: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PanelInfo {
    pub t0: f64,
    pub t1: f64,
    /// Index of the first node of this panel in the flat node list.
    pub offset: usize,
}

/// Composite Gauss–Legendre discretization of a truncated contour.
#[derive(Debug, Clone)]
pub struct PanelDiscretization {
    pub trunc: TruncatedContour,
    pub panels: Vec<PanelInfo>,
    pub nodes: Vec<PanelNode>,
    pub nodes_per_panel: usize,
}

/// Panel-length policy: `inner` applies on the flat window, `outer` beyond it,
/// and `arc_cap` bounds the arc length |dz| · h of any panel (to keep a fixed
/// number of nodes per wavelength on steep climbs).
#[derive(Debug, Clone, Copy)]
pub struct PanelSizing {
    pub inner: f64,
    pub outer: f64,
    pub arc_cap: f64,
}

impl PanelSizing {
    pub fn uniform(h: f64) -> Self {
        PanelSizing {
            inner: h,
            outer: h,
            arc_cap: f64::INFINITY,
        }
    }
}

/// Simple spec-level panelizer: uniform cap, forced breakpoints.
pub fn panelize(
    trunc: &TruncatedContour,
    max_panel_param_len: f64,
    nodes_per_panel: usize,
    breaks: &[f64],
) -> PanelDiscretization {
    panelize_sized(
        trunc,
        PanelSizing::uniform(max_panel_param_len),
        nodes_per_panel,
        breaks,
    )
}

pub fn panelize_sized(
    trunc: &TruncatedContour,
    sizing: PanelSizing,
    nodes_per_panel: usize,
    breaks: &[f64],
) -> PanelDiscretization {
    assert!(nodes_per_panel >= 2);
    let lc = trunc.contour.l_c();
    let tm = trunc.t_max;
    let mut all_breaks: Vec<f64> = breaks.to_vec();
    all_breaks.extend_from_slice(&[-lc, lc]);
    // Tile the three regions with their own caps.
    let mut edges: Vec<(f64, f64)> = Vec::new();
    if tm > lc {
        edges.extend(split_panels(-tm, -lc, &all_breaks, sizing.outer));
    }
    edges.extend(split_panels(-lc, lc, &all_breaks, sizing.inner));
    if tm > lc {
        edges.extend(split_panels(lc, tm, &all_breaks, sizing.outer));
    }
    // Enforce the arc-length cap by bisecting offending panels.
    let mut stack: Vec<(f64, f64)> = edges;
    let mut final_panels: Vec<(f64, f64)> = Vec::new();
    while let Some((a, b)) = stack.pop() {
        let h = b - a;
        let stretch = trunc
            .contour
            .dz(a)
            .norm()
            .max(trunc.contour.dz(0.5 * (a + b)).norm())
            .max(trunc.contour.dz(b).norm());
        if h * stretch > sizing.arc_cap && h > 1e-6 {
            let m = 0.5 * (a + b);
            stack.push((a, m));
            stack.push((m, b));
        } else {
            final_panels.push((a, b));
        }
    }
    final_panels.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());

    let (gx, gw) = gl_cached(nodes_per_panel);
    let mut nodes = Vec::with_capacity(final_panels.len() * nodes_per_panel);
    let mut panels = Vec::with_capacity(final_panels.len());
    for &(a, b) in &final_panels {
        let offset = nodes.len();
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        for (&x, &w) in gx.iter().zip(gw.iter()) {
            let t = mid + half * x;
            nodes.push(PanelNode {
                t,
                z: trunc.contour.z(t),
                dz: trunc.contour.dz(t),
                w: w * half,
            });
        }
        panels.push(PanelInfo { t0: a, t1: b, offset });
    }
    PanelDiscretization {
        trunc: trunc.clone(),
        panels,
        nodes,
        nodes_per_panel,
    }
}

impl PanelDiscretization {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// ∫ f(z) dz over the discretized contour.
    pub fn integrate<F: Fn(C64) -> C64>(&self, f: F) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for n in &self.nodes {
            acc += f(n.z) * n.dz * n.w;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_contour() -> AdmissibleContour {
        build_admissible_contour(
            Lift::Erf {
                amplitude: 20.0,
                center: 40.0,
                width: 5.0,
            },
            6.0,
            3.0,
            SlopeCheck::Require,
        )
        .unwrap()
    }

    #[test]
    fn erf_lift_reference_values() {
        let c = paper_contour();
        // ψ(100) = 20(erf(28) − erf(−12)) = 40 to machine precision
        assert!((c.psi(100.0) - 40.0).abs() < 1e-12);
        // ψ(0) = 0 exactly by oddness of the difference
        assert_eq!(c.psi(0.0), 0.0);
        // flat window clamps to exactly zero
        assert_eq!(c.psi(5.9), 0.0);
    }

    #[test]
    fn real_line_contour_needs_slope_skip() {
        assert!(build_admissible_contour(Lift::Zero, 6.0, 3.0, SlopeCheck::Require).is_err());
        let c = build_admissible_contour(Lift::Zero, 6.0, 3.0, SlopeCheck::Skip).unwrap();
        assert_eq!(c.c_lo, 0.0);
        assert!(!c.slope_checked);
    }

    #[test]
    fn decreasing_lift_rejected() {
        let bad = Lift::Tabulated {
            ts: vec![-100.0, -8.0, 8.0, 20.0, 100.0],
            psis: vec![-30.0, 0.0, 0.0, 5.0, 3.0],
        };
        match build_admissible_contour(bad, 6.0, 3.0, SlopeCheck::Skip) {
            Err(GeometryError::MonotonicityViolation(_)) => {}
            other => panic!("expected monotonicity violation, got {other:?}"),
        }
    }

    #[test]
    fn truncation_matches_paper_cutoff() {
        let c = paper_contour();
        // The cut at |Im z| = 39.527 sits at t = 48: ψ(48) = 20(1 + erf(1.6)).
        let tc = truncate_at_depth(&c, 3.0, 1e-10, 39.527, false).unwrap();
        assert!((tc.t_max - 48.0).abs() < 2e-3, "t_max = {}", tc.t_max);
        assert!((tc.depth - 39.527).abs() < 1e-9);
    }

    #[test]
    fn truncation_eps_one_gives_flat_boundary() {
        let c = paper_contour();
        let tc = truncate_contour(&c, 1.0, 1.0, false).unwrap();
        assert_eq!(tc.t_max, 6.0);
        assert_eq!(tc.depth, 0.0);
    }

    #[test]
    fn truncation_bisection_oracle() {
        // β = 1, ε = e^{−10} → cutoff at ψ = 10; verify by independent bisection.
        let c = paper_contour();
        let tc = truncate_contour(&c, 1.0, (-10.0_f64).exp(), false).unwrap();
        let mut lo = 6.0;
        let mut hi = 100.0;
        for _ in 0..100 {
            let m = 0.5 * (lo + hi);
            if c.psi(m) < 10.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        assert!((tc.t_max - 0.5 * (lo + hi)).abs() < 1e-9);
        assert!((c.psi(tc.t_max) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn truncation_saturation_flagged() {
        let c = paper_contour(); // sup ψ = 40
        assert!(matches!(
            truncate_at_depth(&c, 3.0, 1e-16, 45.0, false),
            Err(GeometryError::UnreachableDepth { .. })
        ));
        let tc = truncate_at_depth(&c, 3.0, 1e-16, 45.0, true).unwrap();
        assert!(tc.saturated);
        assert!(tc.depth > 39.9 && tc.depth <= 40.0);
    }

    #[test]
    fn panels_tile_without_gaps_and_include_breaks() {
        let c = paper_contour();
        let tc = truncate_at_depth(&c, 3.0, 1e-10, 39.527, false).unwrap();
        let disc = panelize(&tc, 1.0, 16, &[-4.25, 4.25]);
        let mut cur = -tc.t_max;
        for p in &disc.panels {
            assert!((p.t0 - cur).abs() < 1e-10, "gap at {cur}");
            cur = p.t1;
        }
        assert!((cur - tc.t_max).abs() < 1e-10);
        for &b in &[-6.0, -4.25, 4.25, 6.0] {
            assert!(disc.panels.iter().any(|p| (p.t0 - b).abs() < 1e-10));
        }
    }

    #[test]
    fn quadrature_exact_on_constants() {
        let c = paper_contour();
        let tc = truncate_at_depth(&c, 3.0, 1e-10, 39.527, false).unwrap();
        let disc = panelize(&tc, 0.9, 16, &[]);
        let total = disc.integrate(|_| C64::new(1.0, 0.0));
        let exact = disc.trunc.contour.z(tc.t_max) - disc.trunc.contour.z(-tc.t_max);
        assert!(
            (total - exact).norm() <= 1e-13 * exact.norm(),
            "{total} vs {exact}"
        );
    }

    #[test]
    fn quadrature_matches_exponential_antiderivative() {
        // ∫ e^{ikz} dz = (e^{ikz(t_max)} − e^{ikz(−t_max)})/(ik)
        let c = paper_contour();
        let k = 3.0;
        let tc = truncate_at_depth(&c, 3.0, 1e-10, 20.0, false).unwrap();
        let disc = panelize_sized(
            &tc,
            PanelSizing {
                inner: 0.5,
                outer: 0.8,
                arc_cap: 4.5,
            },
            16,
            &[],
        );
        let ik = C64::new(0.0, k);
        let val = disc.integrate(|z| (ik * z).exp());
        let exact =
            ((ik * disc.trunc.contour.z(tc.t_max)).exp() - (ik * disc.trunc.contour.z(-tc.t_max)).exp()) / ik;
        assert!(
            (val - exact).norm() < 1e-10 * exact.norm().max(1e-3),
            "{val} vs {exact}"
        );
        // self-convergence under refinement
        let fine = panelize_sized(
            &tc,
            PanelSizing {
                inner: 0.25,
                outer: 0.4,
                arc_cap: 2.25,
            },
            16,
            &[],
        );
        let val_fine = fine.integrate(|z| (ik * z).exp());
        assert!((val_fine - exact).norm() <= (val - exact).norm().max(1e-14) * 10.0);
    }

    #[test]
    fn pairwise_monotonicity_property() {
        let c = paper_contour();
        let tc = truncate_at_depth(&c, 3.0, 1e-10, 39.527, false).unwrap();
        let disc = panelize(&tc, 1.3, 16, &[]);
        // Ties (both points on the flat segment) carry no ordering information,
        // so the pairwise assertion applies to strictly positive Im gaps.
        for a in disc.nodes.iter().step_by(7) {
            for b in disc.nodes.iter().step_by(11) {
                let d = a.z - b.z;
                if d.im > 1e-12 {
                    assert!(d.re >= -1e-12, "monotonicity violated: {} {}", a.z, b.z);
                }
            }
        }
    }

    #[test]
    fn truncation_depth_scales_with_log_eps() {
        // Doubling log(1/ε) doubles |Im z| at the cut in the slope regime.
        let c = build_admissible_contour(
            Lift::Ramp {
                slope: 1.0,
                start: 10.0,
                smooth: 0.75,
            },
            6.0,
            3.0,
            SlopeCheck::Require,
        )
        .unwrap();
        let beta = 1.0;
        let t1 = truncate_contour(&c, beta, (-8.0_f64).exp(), false).unwrap();
        let t2 = truncate_contour(&c, beta, (-16.0_f64).exp(), false).unwrap();
        assert!((t2.depth / t1.depth - 2.0).abs() < 1e-9);
    }

    #[test]
    fn presets_match_their_formulas() {
        let ql = Potential::qa_left();
        let qra = Potential::qa_right();
        let qrb = Potential::qb_right();
        let mut s = 7u64;
        let mut rng = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..20 {
            let x = rng() * 3.0;
            let pi = std::f64::consts::PI;
            let ref_l =
                2.0 * (-2.0 * x * x).exp() * (3.0 + 2.0 * (5.0 * pi * x + 0.7).cos() - (2.0 * x + 1.6).cos());
            let ref_ra = 8.0 / 3.0
                * (-x * x / 0.245).exp()
                * (1.53 - (1.05_f64).cos() + 0.53 * (x + 0.25).cos());
            let ref_rb = if x.abs() <= 3.0 { 1.0 } else { 0.0 };
            assert!((ql.eval(x) - ref_l).abs() <= 1e-14 * ref_l.abs().max(1.0));
            assert!((qra.eval(x) - ref_ra).abs() <= 1e-14 * ref_ra.abs().max(1.0));
            assert!((qrb.eval(x) - ref_rb).abs() == 0.0);
        }
        assert!(ql.sup_bound() > 9.0 && ql.sup_bound() < 10.5);
        assert!(qrb.sup_bound() == 1.0);
        assert!(ql.osc_scale() > 10.0, "q_l oscillation scale {}", ql.osc_scale());
    }

    #[test]
    fn potential_support_and_positivity() {
        let q = Potential::qa_left();
        assert_eq!(q.eval(5.0), 0.0);
        assert_eq!(q.eval(-4.3), 0.0);
        assert!(q.eval(0.0) > 0.0);
        assert!(!q.is_zero());
        assert!(Potential::zero().is_zero());
    }
}
