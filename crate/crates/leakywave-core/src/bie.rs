//! Nyström assembly and solution of (I + K_Γ̃ε)[σ; τ] = [f_D; f_N].
//!
//! The 2N×2N system has the block form [[I, D], [C, I]] with
//! D_{ij} = W_j·k_D(z_i, z_j) and C_{ij} = −W_j·k_C(z_i, z_j), W_j the
//! contour quadrature weights w_j·(1 + iψ′). k_C carries a log singularity on
//! the channel diagonal, so C-entries whose target sits in a panel at (or
//! adjacent to) the singular point are replaced by product-integration
//! weights: the log coefficient a(x) is extracted once per channel panel by
//! fitting a·ln δ + b to kernel samples just above the separation floor, the
//! a·ln|x−y| part is integrated exactly against the Legendre interpolant, and
//! the smooth remainder rides the plain rule.

use crate::geometry::PanelDiscretization;
use crate::greens::GreensError;
use crate::kernels::{KernelEvaluator, KernelMatrices};
use crate::linalg::{lu_factor, CMat, LinalgError};
use crate::quad::log_moments;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BieError {
    #[error(transparent)]
    Greens(#[from] GreensError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("system nearly singular: condition estimate {0:.3e}")]
    NearSingular(f64),
    #[error("{0}")]
    Invalid(String),
}

/// Dirichlet/Neumann data sampled at the contour nodes.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub fd: Vec<C64>,
    pub fn_: Vec<C64>,
}

/// Solved densities at the contour nodes.
#[derive(Debug, Clone)]
pub struct Density {
    pub sigma: Vec<C64>,
    pub tau: Vec<C64>,
}

/// Scheme for the log-singular channel diagonal of k_C.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularScheme {
    /// Fitted-log product integration (default).
    ProductIntegration,
    /// Dyadic refinement toward the target with interpolated density.
    GradedRefinement,
}

#[derive(Debug, Clone, Copy)]
pub struct AssemblyOptions {
    pub scheme: SingularScheme,
    /// Fit window [δ_min, fit_span·δ_min] for the log-coefficient extraction.
    pub fit_span: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            scheme: SingularScheme::ProductIntegration,
            fit_span: 10.0,
        }
    }
}

pub struct SystemMatrix {
    pub mat: CMat,
    pub n: usize,
    /// Count of quadrature-corrected C-block entries.
    pub corrected_entries: usize,
}

pub struct SolveReport {
    pub residual: f64,
    pub cond_estimate: f64,
}

/// Assemble the full 2N×2N Nyström matrix, with corrected near-diagonal
/// C-block quadrature.
pub fn assemble_system(
    disc: &PanelDiscretization,
    ev: &KernelEvaluator,
    opts: &AssemblyOptions,
) -> Result<SystemMatrix, BieError> {
    let n = disc.nodes.len();
    let KernelMatrices { kd, kc } = ev.assemble_kernel_matrices(disc);
    let weights: Vec<C64> = disc.nodes.iter().map(|p| p.dz * p.w).collect();

    let mut mat = CMat::zeros(2 * n, 2 * n);
    for i in 0..n {
        mat[(i, i)] = C64::new(1.0, 0.0);
        mat[(n + i, n + i)] = C64::new(1.0, 0.0);
        for j in 0..n {
            mat[(i, n + j)] = weights[j] * kd[(i, j)];
            mat[(n + i, j)] = -(weights[j] * kc[(i, j)]);
        }
    }

    let corrected = apply_singular_correction(&mut mat, disc, ev, &kc, opts)?;
    Ok(SystemMatrix {
        mat,
        n,
        corrected_entries: corrected,
    })
}

/// Channel panels of the discretization (flat region, |t| ≤ d_max, dz ≡ 1).
fn channel_panels(disc: &PanelDiscretization, d_max: f64) -> Vec<usize> {
    disc.panels
        .iter()
        .enumerate()
        .filter(|(_, p)| p.t0 >= -d_max - 1e-12 && p.t1 <= d_max + 1e-12)
        .map(|(ip, _)| ip)
        .collect()
}

fn apply_singular_correction(
    mat: &mut CMat,
    disc: &PanelDiscretization,
    ev: &KernelEvaluator,
    kc: &CMat,
    opts: &AssemblyOptions,
) -> Result<usize, BieError> {
    let n = disc.nodes.len();
    let npp = disc.nodes_per_panel;
    let d_max = ev.d_max;
    let chan = channel_panels(disc, d_max);
    if chan.is_empty() {
        return Ok(0);
    }
    let rule = crate::quad::PanelRule::new(npp);

    // Log-coefficient table: one two-sided fit per channel panel midpoint,
    // linearly interpolated to targets.
    let fit_xs: Vec<f64> = chan
        .iter()
        .map(|&ip| 0.5 * (disc.panels[ip].t0 + disc.panels[ip].t1))
        .collect();
    let fits: Result<Vec<(C64, C64)>, GreensError> = fit_xs
        .par_iter()
        .map(|&x| fit_log_coefficient(ev, x, opts.fit_span))
        .collect();
    let fits = fits?;
    let fit_at = |x: f64| -> (C64, C64) {
        if fit_xs.len() == 1 {
            return fits[0];
        }
        let j = fit_xs
            .partition_point(|&c| c < x)
            .clamp(1, fit_xs.len() - 1);
        let (x0, x1) = (fit_xs[j - 1], fit_xs[j]);
        let s = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        (
            fits[j - 1].0 * (1.0 - s) + fits[j].0 * s,
            fits[j - 1].1 * (1.0 - s) + fits[j].1 * s,
        )
    };

    // Targets: every node inside a channel panel gets corrections over the
    // panels within reach of the singular point.
    let mut count = 0usize;
    let updates: Vec<(usize, usize, Vec<C64>)> = chan
        .par_iter()
        .flat_map_iter(|&ip_t| {
            let panel = disc.panels[ip_t];
            (panel.offset..panel.offset + npp).map(move |i| (ip_t, i))
        })
        .map(|(ip_t, i)| {
            let xi = disc.nodes[i].t;
            let (a, b) = fit_at(xi);
            let mut row_updates = Vec::new();
            for &ip in &chan {
                let p = disc.panels[ip];
                let h = p.t1 - p.t0;
                let dist = if xi < p.t0 {
                    p.t0 - xi
                } else if xi > p.t1 {
                    xi - p.t1
                } else {
                    0.0
                };
                if dist > 0.6 * h {
                    continue;
                }
                let tau_c = (2.0 * xi - p.t0 - p.t1) / h;
                let wcorr = match opts.scheme {
                    SingularScheme::ProductIntegration => corrected_weights_product(
                        &rule, kc, disc, i, ip, tau_c, h, a, b,
                    ),
                    SingularScheme::GradedRefinement => corrected_weights_graded(
                        &rule, ev, disc, i, ip, a, b,
                    ),
                };
                row_updates.push((i, ip, wcorr));
            }
            row_updates
        })
        .flatten()
        .collect();
    for (i, ip, wcorr) in updates {
        let off = disc.panels[ip].offset;
        for (jj, w) in wcorr.into_iter().enumerate() {
            mat[(n + i, off + jj)] = -w;
            count += 1;
        }
    }
    Ok(count)
}

/// Two-sided fit of k_C(x, x±δ) ≈ a·ln δ + b over δ ∈ [δ_min, span·δ_min].
fn fit_log_coefficient(
    ev: &KernelEvaluator,
    x: f64,
    span: f64,
) -> Result<(C64, C64), GreensError> {
    let lo = ev.delta_min;
    let hi = span * ev.delta_min;
    let nsamp = 6;
    let mut ls = Vec::new();
    let mut vs = Vec::new();
    for i in 0..nsamp {
        let d = lo * (hi / lo).powf(i as f64 / (nsamp - 1) as f64);
        for sgn in [1.0, -1.0] {
            let y = x + sgn * d;
            if y.abs() > ev.d_max {
                continue;
            }
            let v = ev.kernel_kc(C64::new(x, 0.0), C64::new(y, 0.0))?;
            ls.push(d.ln());
            vs.push(v);
        }
    }
    let nf = ls.len() as f64;
    let sx: f64 = ls.iter().sum();
    let sxx: f64 = ls.iter().map(|l| l * l).sum();
    let sv: C64 = vs.iter().sum();
    let sxv: C64 = ls.iter().zip(vs.iter()).map(|(l, v)| v * *l).sum();
    let det = nf * sxx - sx * sx;
    let a = (sxv * nf - sv * sx) / det;
    let b = (sv * sxx - sxv * sx) / det;
    Ok((a, b))
}

/// Product-integration weights for ∫_panel k_C(x_i, y) σ(y) dy with the model
/// k_C = a·ln|x_i − y| + r(y): the log part is integrated exactly against the
/// Legendre interpolant, the remainder r (kernel minus fitted log) rides the
/// plain rule using the already-assembled nodal kernel values.
#[allow(clippy::too_many_arguments)]
fn corrected_weights_product(
    rule: &crate::quad::PanelRule,
    kc: &CMat,
    disc: &PanelDiscretization,
    i: usize,
    ip: usize,
    tau_c: f64,
    h: f64,
    a: C64,
    b: C64,
) -> Vec<C64> {
    let npp = rule.n;
    let off = disc.panels[ip].offset;
    let mu = log_moments(tau_c, npp - 1);
    let xi = disc.nodes[i].t;
    let mut w = vec![C64::new(0.0, 0.0); npp];
    // Log part: ∫ ln|x−y| ℓ_j(y) dy = (h/2)[ln(h/2)·w_j + Σ_n M_{n,j} μ_n].
    for j in 0..npp {
        let mut acc = (h / 2.0).ln() * rule.weights[j];
        for nn in 0..npp {
            // Column j of the nodal→coefficient matrix.
            acc += coeff_entry(rule, nn, j) * mu[nn];
        }
        w[j] = a * (acc * h / 2.0);
    }
    // Smooth remainder at the nodes (the self entry uses the fit intercept).
    for j in 0..npp {
        let yj = disc.nodes[off + j].t;
        let r = if off + j == i {
            b
        } else {
            kc[(i, off + j)] - a * (yj - xi).abs().ln()
        };
        w[j] += r * disc.nodes[off + j].w;
    }
    w
}

fn coeff_entry(rule: &crate::quad::PanelRule, n: usize, j: usize) -> f64 {
    // ĝ_n = (2n+1)/2 Σ_j w_j P_n(x_j) g_j  — reproduce the matrix entry.
    let p = crate::quad::legendre_all(rule.nodes[j], n);
    (2.0 * n as f64 + 1.0) / 2.0 * rule.weights[j] * p[n]
}

/// Fallback: dyadic refinement toward the target, density interpolated from
/// the panel nodes, kernel sampled at the refined nodes (clamped to the
/// separation floor using the fitted log model inside it).
fn corrected_weights_graded(
    rule: &crate::quad::PanelRule,
    ev: &KernelEvaluator,
    disc: &PanelDiscretization,
    i: usize,
    ip: usize,
    a: C64,
    b: C64,
) -> Vec<C64> {
    let npp = rule.n;
    let p = disc.panels[ip];
    let xi = disc.nodes[i].t;
    let floor = ev.delta_min;
    // Dyadic sub-edges toward x_i from both sides.
    let mut edges = vec![p.t0, p.t1];
    let mut gap = 0.5 * (p.t1 - p.t0);
    while gap > 4.0 * floor {
        for sgn in [-1.0, 1.0] {
            let e = xi + sgn * gap;
            if e > p.t0 + 1e-14 && e < p.t1 - 1e-14 {
                edges.push(e);
            }
        }
        gap *= 0.5;
    }
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    edges.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
    let (gx, gw) = crate::quad::gl_cached(8);
    let mut w = vec![C64::new(0.0, 0.0); npp];
    for win in edges.windows(2) {
        let (a0, b0) = (win[0], win[1]);
        let mid = 0.5 * (a0 + b0);
        let half = 0.5 * (b0 - a0);
        for (&u, &wu) in gx.iter().zip(gw.iter()) {
            let y = mid + half * u;
            let dist = (y - xi).abs();
            let kv = if dist >= floor {
                ev.kernel_kc(C64::new(xi, 0.0), C64::new(y, 0.0))
                    .unwrap_or_else(|_| a * dist.ln() + b)
            } else {
                a * dist.max(1e-300).ln() + b
            };
            // Distribute onto the panel's cardinal functions.
            let tau = (2.0 * y - p.t0 - p.t1) / (p.t1 - p.t0);
            for (j, wj) in cardinal_values(rule, tau).into_iter().enumerate() {
                w[j] += kv * wj * (wu * half);
            }
        }
    }
    w
}

fn cardinal_values(rule: &crate::quad::PanelRule, tau: f64) -> Vec<f64> {
    let npp = rule.n;
    let mut vals = vec![0.0; npp];
    for (j, v) in vals.iter_mut().enumerate() {
        let mut unit = vec![C64::new(0.0, 0.0); npp];
        unit[j] = C64::new(1.0, 0.0);
        *v = rule.interpolate(&unit, tau).re;
    }
    vals
}

/// Dense LU solve with residual and condition reporting.
pub fn solve_system(sm: &SystemMatrix, data: &BoundaryData) -> Result<(Density, SolveReport), BieError> {
    let n = sm.n;
    if data.fd.len() != n || data.fn_.len() != n {
        return Err(BieError::Invalid("data length mismatch".into()));
    }
    let mut rhs = Vec::with_capacity(2 * n);
    rhs.extend_from_slice(&data.fd);
    rhs.extend_from_slice(&data.fn_);
    let lu = lu_factor(sm.mat.clone())?;
    let x = lu.solve(&rhs);
    let ax = sm.mat.matvec(&x);
    let mut rnum: f64 = 0.0;
    let mut rden: f64 = 0.0;
    for (axi, bi) in ax.iter().zip(rhs.iter()) {
        rnum = rnum.max((axi - bi).norm());
        rden = rden.max(bi.norm());
    }
    let residual = rnum / rden.max(1e-300);
    let cond = sm.mat.norm_one() * lu.inv_norm_one_estimate();
    if cond > 1e12 {
        return Err(BieError::NearSingular(cond));
    }
    Ok((
        Density {
            sigma: x[..n].to_vec(),
            tau: x[n..].to_vec(),
        },
        SolveReport {
            residual,
            cond_estimate: cond,
        },
    ))
}

/// Apply the discretized K = [[0, D], [C, 0]] to nodal data (used for the
/// modified right-hand side of mode incidence and for diagnostics).
pub fn apply_k(sm: &SystemMatrix, fd: &[C64], fn_: &[C64]) -> (Vec<C64>, Vec<C64>) {
    let n = sm.n;
    let mut top = vec![C64::new(0.0, 0.0); n];
    let mut bot = vec![C64::new(0.0, 0.0); n];
    top.par_iter_mut().enumerate().for_each(|(i, t)| {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..n {
            acc += sm.mat[(i, n + j)] * fn_[j];
        }
        *t = acc;
    });
    bot.par_iter_mut().enumerate().for_each(|(i, t)| {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..n {
            acc += sm.mat[(n + i, j)] * fd[j];
        }
        *t = acc;
    });
    (top, bot)
}

/// Evaluate the solved densities anywhere on Γ_ℂ via
/// [σ; τ](z) = [f_D; f_N](z) − K_Γ̃[σ; τ](z).
pub fn extend_density<F>(
    disc: &PanelDiscretization,
    ev: &KernelEvaluator,
    density: &Density,
    data_at: F,
    z: C64,
) -> Result<(C64, C64), BieError>
where
    F: Fn(C64) -> (C64, C64),
{
    let (fd, fn_) = data_at(z);
    let mut dsum = C64::new(0.0, 0.0);
    let mut csum = C64::new(0.0, 0.0);
    for (j, node) in disc.nodes.iter().enumerate() {
        let w = node.dz * node.w;
        let kd = ev.kernel_kd(z, node.z)?;
        let kc = ev.kernel_kc(z, node.z)?;
        dsum += w * kd * density.tau[j];
        csum += w * kc * density.sigma[j];
    }
    // σ = f_D − D τ;  τ = f_N − C σ = f_N + ∫k_C σ.
    Ok((fd - dsum, fn_ + csum))
}

/// Weighted sup-norm ‖f‖_{α,β} = sup e^{β|Im z|}(1+|z|)^α |f(z)| over nodes.
pub fn weighted_norm(disc: &PanelDiscretization, vals: &[C64], alpha: f64, beta: f64) -> f64 {
    disc.nodes
        .iter()
        .zip(vals.iter())
        .map(|(n, v)| (beta * n.z.im.abs()).exp() * (1.0 + n.z.norm()).powf(alpha) * v.norm())
        .fold(0.0, f64::max)
}
