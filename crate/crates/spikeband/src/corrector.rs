//! First-order corrector machinery on the transverse half-plane (n + 1 = 2).
//!
//! The curved-domain Laplacian acting on slowly modulated profiles expands as
//! `Δu + eps (trace(H) ∂_{ζ2}u − 2 ζ2 H11 ∂²_{ζ1ζ1}u) + O(eps²)`, with H the
//! second fundamental form at the base point (geometry frozen: no slow-variable
//! derivatives survive). Matching orders in eps gives the corrector equation
//! `L0 w1 = trace(H) ∂_{ζ2}w0 − 2 ζ2 H11 ∂²_{ζ1ζ1}w0` on the half-plane with a
//! Neumann floor, solvable because the right side is even in ζ1 while the
//! kernel direction ∂_{ζ1}w0 is odd. This module realizes the metric
//! expansion, the truncated Laplacian, the bordered corrector solve, the
//! residual-order test, and the projection identities behind the solvability
//! bookkeeping.

use crate::ground_state::{compute_constants, Power, RadialProfile};
use crate::linalg::{BandMat, LinalgError};
use crate::par::*;
use crate::quad::{half_sphere_moments, integrate_weighted, radial_cell_weights};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorrectorError {
    #[error("right-hand side is not orthogonal to the translation kernel (relative overlap {overlap:e})")]
    SolvabilityViolation { overlap: f64 },
    #[error("bordered corrector system is rank-deficient: {0}")]
    SingularSystem(String),
}

impl From<LinalgError> for CorrectorError {
    fn from(e: LinalgError) -> Self {
        CorrectorError::SingularSystem(e.to_string())
    }
}

/// Second-fundamental-form and connection data frozen at one base point.
/// Index 0 is the transverse ζ1 direction; indices 1.. are base directions.
#[derive(Debug, Clone)]
pub struct GeometryData {
    /// Side length of `h`: 1 transverse direction plus the base directions.
    pub dim: usize,
    /// Symmetric `dim x dim` matrix of curvature components, row-major.
    pub h: Vec<f64>,
    /// Connection coefficients in the single transverse direction,
    /// symmetric `(dim-1) x (dim-1)`, row-major.
    pub gamma: Vec<f64>,
    /// Transverse curvature components; with one transverse direction the
    /// single entry is forced to zero by antisymmetry.
    pub rcurv: Vec<f64>,
    pub trace_h: f64,
}

impl GeometryData {
    pub fn new(dim: usize, h: Vec<f64>, gamma: Vec<f64>, rcurv: Vec<f64>) -> Self {
        assert!(dim >= 1);
        assert_eq!(h.len(), dim * dim);
        let k = dim - 1;
        assert_eq!(gamma.len(), k * k);
        assert_eq!(rcurv.len(), 1);
        assert_eq!(rcurv[0], 0.0, "transverse curvature vanishes by antisymmetry");
        for a in 0..dim {
            for b in 0..a {
                assert!(
                    (h[a * dim + b] - h[b * dim + a]).abs() <= 1e-14 * h[a * dim + b].abs(),
                    "h must be symmetric"
                );
            }
        }
        for a in 0..k {
            for b in 0..a {
                assert!(
                    (gamma[a * k + b] - gamma[b * k + a]).abs()
                        <= 1e-14 * gamma[a * k + b].abs(),
                    "gamma must be symmetric"
                );
            }
        }
        let trace_h = (0..dim).map(|a| h[a * dim + a]).sum();
        GeometryData {
            dim,
            h,
            gamma,
            rcurv,
            trace_h,
        }
    }

    /// All-zero data: the flat cylinder.
    pub fn flat(dim: usize) -> Self {
        let k = dim - 1;
        GeometryData::new(dim, vec![0.0; dim * dim], vec![0.0; k * k], vec![0.0])
    }

    pub fn h_at(&self, a: usize, b: usize) -> f64 {
        self.h[a * self.dim + b]
    }

    /// The ζ1ζ1 component, the only one entering the transverse Hessian term.
    pub fn h11(&self) -> f64 {
        self.h[0]
    }

    fn h_squared(&self, a: usize, b: usize) -> f64 {
        (0..self.dim).map(|c| self.h_at(a, c) * self.h_at(c, b)).sum()
    }
}

/// Metric components at one point, truncated at second order in eps.
#[derive(Debug, Clone)]
pub struct MetricExpansion {
    /// Transverse block (1 x 1 here).
    pub g_transverse: Vec<f64>,
    /// Base-transverse block, one entry per base direction.
    pub g_mixed: Vec<f64>,
    /// Base block, row-major (dim-1) x (dim-1).
    pub g_base: Vec<f64>,
    /// Normal-tangential components, exactly zero.
    pub g_normal_mixed: f64,
    /// Normal-normal component, exactly one.
    pub g_normal: f64,
}

/// Metric coefficients at `zeta = (zeta1, zeta2)` through order eps^2. The
/// identities g_{alpha N} = 0, g_NN = 1 are exact in Fermi coordinates and
/// returned as such.
pub fn metric_expansion(geom: &GeometryData, epsilon: f64, zeta: (f64, f64)) -> MetricExpansion {
    let (z1, z2) = zeta;
    let e2 = epsilon * epsilon;
    let k = geom.dim - 1;

    let g_transverse = vec![
        1.0 + 2.0 * epsilon * z2 * geom.h11()
            + e2 * z2 * z2 * geom.h_squared(0, 0)
            + e2 / 3.0 * geom.rcurv[0] * z1 * z1,
    ];
    let g_mixed: Vec<f64> = (0..k)
        .map(|a| 2.0 * epsilon * z2 * geom.h_at(a + 1, 0))
        .collect();
    let mut g_base = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let gg: f64 = (0..k).map(|c| geom.gamma[a * k + c] * geom.gamma[c * k + b]).sum();
            g_base[a * k + b] = if a == b { 1.0 } else { 0.0 }
                - 2.0 * epsilon * geom.gamma[a * k + b] * z1
                + 2.0 * epsilon * z2 * geom.h_at(a + 1, b + 1)
                + e2 * z1 * z1 * gg
                + e2 * z2 * z2 * geom.h_squared(a + 1, b + 1);
        }
    }
    MetricExpansion {
        g_transverse,
        g_mixed,
        g_base,
        g_normal_mixed: 0.0,
        g_normal: 1.0,
    }
}

/// Uniform tensor grid on ζ1 ∈ [−R, R], ζ2 ∈ [0, R].
#[derive(Debug, Clone, Copy)]
pub struct HalfPlaneGrid {
    pub r: f64,
    pub step: f64,
    /// ζ1 node count (odd, symmetric about 0).
    pub n1: usize,
    /// ζ2 node count.
    pub n2: usize,
}

impl HalfPlaneGrid {
    pub fn new(r: f64, step: f64) -> Self {
        assert!(r > 0.0 && step > 0.0);
        let m = (r / step).round() as usize;
        assert!(m >= 8, "grid too coarse");
        let step = r / m as f64;
        HalfPlaneGrid {
            r,
            step,
            n1: 2 * m + 1,
            n2: m + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n2 + j
    }

    #[inline]
    pub fn zeta1(&self, i: usize) -> f64 {
        (i as isize - (self.n2 as isize - 1)) as f64 * self.step
    }

    #[inline]
    pub fn zeta2(&self, j: usize) -> f64 {
        j as f64 * self.step
    }

    /// Cell area of a row: half cells along the Neumann floor.
    #[inline]
    fn area(&self, j: usize) -> f64 {
        let a = self.step * self.step;
        if j == 0 {
            0.5 * a
        } else {
            a
        }
    }
}

/// w0 sampled on the grid.
pub fn w0_field(profile: &RadialProfile, grid: &HalfPlaneGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for i in 0..grid.n1 {
        let z1 = grid.zeta1(i);
        for j in 0..grid.n2 {
            let z2 = grid.zeta2(j);
            out[grid.idx(i, j)] = profile.w_at((z1 * z1 + z2 * z2).sqrt());
        }
    }
    out
}

/// ∂_{ζ2} w0 sampled analytically (w′(r) ζ2 / r, zero at the origin).
pub fn dz2_w0_field(profile: &RadialProfile, grid: &HalfPlaneGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for i in 0..grid.n1 {
        let z1 = grid.zeta1(i);
        for j in 0..grid.n2 {
            let z2 = grid.zeta2(j);
            let r = (z1 * z1 + z2 * z2).sqrt();
            out[grid.idx(i, j)] = if r == 0.0 {
                0.0
            } else {
                profile.dw_at(r) * z2 / r
            };
        }
    }
    out
}

/// ∂²_{ζ1ζ1} w0 sampled analytically:
/// w″ ζ1²/r² + w′ ζ2²/r³, with the isotropic limit w″(0) at the origin.
pub fn d11_w0_field(profile: &RadialProfile, grid: &HalfPlaneGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for i in 0..grid.n1 {
        let z1 = grid.zeta1(i);
        for j in 0..grid.n2 {
            let z2 = grid.zeta2(j);
            let r = (z1 * z1 + z2 * z2).sqrt();
            out[grid.idx(i, j)] = if r == 0.0 {
                profile.ddw_at(0.0)
            } else {
                profile.ddw_at(r) * (z1 / r) * (z1 / r)
                    + profile.dw_at(r) * (z2 * z2) / (r * r * r)
            };
        }
    }
    out
}

/// Right-hand side of the corrector equation:
/// trace(H) ∂_{ζ2}w0 − 2 ζ2 H11 ∂²_{ζ1ζ1}w0.
pub fn corrector_rhs(
    profile: &RadialProfile,
    geom: &GeometryData,
    grid: &HalfPlaneGrid,
) -> Vec<f64> {
    let dz2 = dz2_w0_field(profile, grid);
    let d11 = d11_w0_field(profile, grid);
    let mut out = vec![0.0; grid.len()];
    for i in 0..grid.n1 {
        for j in 0..grid.n2 {
            let id = grid.idx(i, j);
            out[id] = geom.trace_h * dz2[id] - 2.0 * grid.zeta2(j) * geom.h11() * d11[id];
        }
    }
    out
}

/// Laplacian truncated at the requested eps order, via second-order centered
/// differences with a ghost reflection across the Neumann floor. The output
/// is defined at interior nodes and on the ζ2 = 0 row; the three outer edges
/// (outside the stencil support) are returned as zero. Slow-variable
/// derivatives vanish identically in this frozen-geometry model.
pub fn expansion_apply(
    geom: &GeometryData,
    epsilon: f64,
    grid: &HalfPlaneGrid,
    u: &[f64],
    order: usize,
) -> Vec<f64> {
    assert!(order <= 1, "orders 0 and 1 are implemented");
    assert_eq!(u.len(), grid.len());
    let h = grid.step;
    let h2 = h * h;
    let mut out = vec![0.0; grid.len()];
    for i in 1..grid.n1 - 1 {
        for j in 0..grid.n2 - 1 {
            let id = grid.idx(i, j);
            let uc = u[id];
            let ue = u[grid.idx(i + 1, j)];
            let uw = u[grid.idx(i - 1, j)];
            let un = u[grid.idx(i, j + 1)];
            let us = if j == 0 {
                u[grid.idx(i, 1)]
            } else {
                u[grid.idx(i, j - 1)]
            };
            let mut v = (ue + uw + un + us - 4.0 * uc) / h2;
            if order == 1 {
                let dz2 = (un - us) / (2.0 * h);
                let d11 = (ue + uw - 2.0 * uc) / h2;
                v += epsilon * (geom.trace_h * dz2 - 2.0 * grid.zeta2(j) * geom.h11() * d11);
            }
            out[id] = v;
        }
    }
    out
}

/// First-order corrector on the half-plane grid.
#[derive(Debug, Clone)]
pub struct CorrectorField {
    pub grid: HalfPlaneGrid,
    /// Values on the full tensor grid; zero on the outer Dirichlet edges.
    pub w1: Vec<f64>,
    /// Normalized overlap of the right-hand side with the kernel direction.
    pub kernel_coeff: f64,
    /// Relative residual of the bordered linear system.
    pub solver_residual: f64,
}

struct Unknowns {
    n1: usize,
    n2: usize,
}

impl Unknowns {
    /// Unknowns are interior in ζ1 and everything but the outer edge in ζ2;
    /// the ζ2 index runs fastest so the matrix bandwidth is the column height.
    fn new(grid: &HalfPlaneGrid) -> Self {
        Unknowns {
            n1: grid.n1,
            n2: grid.n2,
        }
    }

    fn count(&self) -> usize {
        (self.n1 - 2) * (self.n2 - 1)
    }

    fn band(&self) -> usize {
        self.n2 - 1
    }

    #[inline]
    fn row(&self, i: usize, j: usize) -> usize {
        (i - 1) * (self.n2 - 1) + j
    }
}

/// Symmetric measure-weighted discretization of L0 = −Δ + 1 − p w0^{p−1}:
/// flux form with edge weights halved along the Neumann floor and cell areas
/// matching, Dirichlet on the three outer edges.
fn assemble_l0(profile: &RadialProfile, grid: &HalfPlaneGrid) -> BandMat {
    let unk = Unknowns::new(grid);
    let mut a = BandMat::new(unk.count(), unk.band(), unk.band());
    let p = profile.params.p;
    for i in 1..grid.n1 - 1 {
        let z1 = grid.zeta1(i);
        for j in 0..grid.n2 - 1 {
            let z2 = grid.zeta2(j);
            let r = (z1 * z1 + z2 * z2).sqrt();
            let row = unk.row(i, j);
            let horiz = if j == 0 { 0.5 } else { 1.0 };
            let mut diag = 0.0;

            // East and west fluxes; Dirichlet neighbors contribute only to
            // the diagonal.
            diag += horiz;
            if i + 1 < grid.n1 - 1 {
                a.set(row, unk.row(i + 1, j), -horiz);
            }
            diag += horiz;
            if i > 1 {
                a.set(row, unk.row(i - 1, j), -horiz);
            }
            // North flux (Dirichlet at the outer edge).
            diag += 1.0;
            if j + 1 < grid.n2 - 1 {
                a.set(row, unk.row(i, j + 1), -1.0);
            }
            // South flux; none across the Neumann floor.
            if j > 0 {
                diag += 1.0;
                a.set(row, unk.row(i, j - 1), -1.0);
            }

            let w = profile.w_at(r);
            diag += grid.area(j) * (1.0 - p * w.powf(p - 1.0));
            a.set(row, row, diag);
        }
    }
    a
}

/// Solve the corrector equation with a caller-supplied right-hand side
/// sampled on the full grid. The kernel constraint (orthogonality to the
/// discrete ∂_{ζ1}w0) is imposed through a bordered system, eliminated by
/// two banded solves.
pub fn w1_solve_with_rhs(
    profile: &RadialProfile,
    grid: &HalfPlaneGrid,
    f: &[f64],
) -> Result<CorrectorField, CorrectorError> {
    assert_eq!(f.len(), grid.len());
    let unk = Unknowns::new(grid);
    let nu = unk.count();

    // Kernel direction ∂_{ζ1}w0 = w′(r) ζ1 / r, sampled analytically.
    let mut kern = vec![0.0; grid.len()];
    for i in 0..grid.n1 {
        let z1 = grid.zeta1(i);
        for j in 0..grid.n2 {
            let z2 = grid.zeta2(j);
            let r = (z1 * z1 + z2 * z2).sqrt();
            kern[grid.idx(i, j)] = if r == 0.0 {
                0.0
            } else {
                profile.dw_at(r) * z1 / r
            };
        }
    }

    // Measure-weighted data restricted to the unknowns.
    let mut b = vec![0.0; nu];
    let mut c = vec![0.0; nu];
    let mut f_norm_sq = 0.0;
    let mut k_norm_sq = 0.0;
    let mut overlap = 0.0;
    for i in 1..grid.n1 - 1 {
        for j in 0..grid.n2 - 1 {
            let id = grid.idx(i, j);
            let row = unk.row(i, j);
            let area = grid.area(j);
            b[row] = area * f[id];
            c[row] = area * kern[id];
            f_norm_sq += area * f[id] * f[id];
            k_norm_sq += area * kern[id] * kern[id];
            overlap += area * f[id] * kern[id];
        }
    }

    if f_norm_sq == 0.0 {
        return Ok(CorrectorField {
            grid: *grid,
            w1: vec![0.0; grid.len()],
            kernel_coeff: 0.0,
            solver_residual: 0.0,
        });
    }
    let kernel_coeff = overlap / (f_norm_sq.sqrt() * k_norm_sq.sqrt());
    if kernel_coeff.abs() > 1e-6 {
        return Err(CorrectorError::SolvabilityViolation {
            overlap: kernel_coeff,
        });
    }

    let lu = assemble_l0(profile, grid).factor()?;
    let mut x1 = b.clone();
    lu.solve_in_place(&mut x1);
    let mut x2 = c.clone();
    lu.solve_in_place(&mut x2);
    drop(lu);

    let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).map(|(a, b)| a * b).sum() };
    let denom = dot(&c, &x2);
    let scale = dot(&c, &c).sqrt() * dot(&x2, &x2).sqrt();
    if denom.abs() <= 1e3 * f64::EPSILON * scale {
        return Err(CorrectorError::SingularSystem(
            "constraint direction lost in the bordered elimination".into(),
        ));
    }
    let mu = dot(&c, &x1) / denom;
    let w: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a - mu * b).collect();

    // Residual of the bordered system, against a fresh assembly.
    let a = assemble_l0(profile, grid);
    let aw = a.mul(&w);
    let mut num = 0.0;
    let mut den = 0.0;
    for row in 0..nu {
        let r = aw[row] + mu * c[row] - b[row];
        num += r * r;
        den += b[row] * b[row];
    }
    let solver_residual = (num / den).sqrt();

    let mut w1 = vec![0.0; grid.len()];
    for i in 1..grid.n1 - 1 {
        for j in 0..grid.n2 - 1 {
            w1[grid.idx(i, j)] = w[unk.row(i, j)];
        }
    }
    Ok(CorrectorField {
        grid: *grid,
        w1,
        kernel_coeff,
        solver_residual,
    })
}

/// Solve the corrector equation for the given geometry on a fresh grid.
pub fn w1_solve(
    profile: &RadialProfile,
    geom: &GeometryData,
    r: f64,
    step: f64,
) -> Result<CorrectorField, CorrectorError> {
    assert_eq!(profile.params.d, 2, "half-plane corrector needs d = 2");
    let grid = HalfPlaneGrid::new(r, step);
    let f = corrector_rhs(profile, geom, &grid);
    w1_solve_with_rhs(profile, &grid, &f)
}

/// Sup-norm residual orders of the zeroth- and first-order approximations.
#[derive(Debug, Clone, Serialize)]
pub struct OrderReport {
    pub epsilons: Vec<f64>,
    pub r0: Vec<f64>,
    pub r1: Vec<f64>,
    pub slope_r0: f64,
    pub slope_r1: f64,
}

/// Sup norm over the stencil-supported nodes.
fn residual_sup(
    profile: &RadialProfile,
    geom: &GeometryData,
    grid: &HalfPlaneGrid,
    u: &[f64],
    epsilon: f64,
) -> f64 {
    let lap = expansion_apply(geom, epsilon, grid, u, 1);
    let pw = Power::new(profile.params.p);
    let mut sup = 0.0f64;
    for i in 1..grid.n1 - 1 {
        for j in 0..grid.n2 - 1 {
            let id = grid.idx(i, j);
            sup = sup.max((-lap[id] + u[id] - pw.eval(u[id])).abs());
        }
    }
    sup
}

/// Residuals of w0 and of w0 + eps w1 under the order-1 expansion, with
/// fitted log-log slopes. The first approximation drops the eps^1 error to
/// eps^2, which is the whole point of the corrector.
pub fn residual_order_test(
    profile: &RadialProfile,
    geom: &GeometryData,
    w1: &CorrectorField,
    eps_list: &[f64],
) -> OrderReport {
    assert!(eps_list.len() >= 4, "need at least four epsilons");
    assert!(
        eps_list.windows(2).all(|w| w[1] < w[0]),
        "eps_list must decrease"
    );
    let grid = &w1.grid;
    let w0 = w0_field(profile, grid);
    let pairs: Vec<(f64, f64)> = eps_list
        .to_vec()
        .into_par_iter()
        .map(|eps| {
            let r0 = residual_sup(profile, geom, grid, &w0, eps);
            let u1: Vec<f64> = w0
                .iter()
                .zip(&w1.w1)
                .map(|(a, b)| a + eps * b)
                .collect();
            let r1 = residual_sup(profile, geom, grid, &u1, eps);
            (r0, r1)
        })
        .collect();
    let r0: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let r1: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let xs: Vec<f64> = eps_list.iter().map(|e| e.ln()).collect();
    let (slope_r0, _) = fit_ln(&xs, &r0);
    let (slope_r1, _) = fit_ln(&xs, &r1);
    OrderReport {
        epsilons: eps_list.to_vec(),
        r0,
        r1,
        slope_r0,
        slope_r1,
    }
}

fn fit_ln(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let ln_ys: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    crate::linalg::fit_line(xs, &ln_ys)
}

/// Projection integrals behind the solvability bookkeeping.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    /// ∫ ζ_i ∂_s w0 ∂²_{si} w0 over the half-space (s ≠ i).
    pub i1: f64,
    /// Its predicted value −C0/2.
    pub i1_predicted: f64,
    /// ∫ ζ_s ∂_s w0 ∂²_{ii} w0 (s ≠ i).
    pub exchange_lhs: f64,
    /// The exchange identity predicts −i1.
    pub exchange_rhs: f64,
    /// Normalized slice integral of an integrand odd in ζ1; zero by parity.
    pub odd_moment: f64,
    pub c0: f64,
}

/// Radial-reduction quadrature of the kernel-projection integrals. The two
/// angular moments involved are |t_s² t_i²| and |t_s²| over the half-sphere;
/// all radial factors come from the profile's own grid.
pub fn projection_identities(profile: &RadialProfile) -> IdentityReport {
    let d = profile.params.d;
    assert!(d >= 2, "projection identities need d >= 2");
    let moments = half_sphere_moments(d);
    let c0 = compute_constants(profile).c0;

    let len = profile.grid.len();
    let weights = radial_cell_weights(len, profile.step, d - 1);
    let mut wp_sq = vec![0.0; len];
    let mut wp_wpp_r = vec![0.0; len];
    for (i, &r) in profile.grid.iter().enumerate() {
        let dw = profile.dw[i];
        wp_sq[i] = dw * dw;
        wp_wpp_r[i] = dw * profile.ddw_at(r) * r;
    }
    let j_int = integrate_weighted(&wp_sq, &weights);
    let k_int = integrate_weighted(&wp_wpp_r, &weights);

    // ζ_i ∂_s ∂²_{si}: angular factor ⟨t_s² t_i²⟩, radial factor w′w″r − w′².
    let i1 = moments.m_t2_sq_sq * (k_int - j_int);
    // ζ_s ∂_s ∂²_{ii}: w″ comes with ⟨t_s²t_i²⟩ and w′/r with ⟨t_s²⟩ − ⟨t_s²t_i²⟩.
    let exchange_lhs =
        moments.m_t2_sq_sq * k_int + (moments.m_t1_sq - moments.m_t2_sq_sq) * j_int;

    // Slice quadrature of ∂_{ζ2}w0 ∂_{ζ1}w0, odd in ζ1: the projection of
    // the residual connection term on the kernel direction.
    let grid = HalfPlaneGrid::new(10.0_f64.min(profile.r_max), 0.05);
    let dz2 = dz2_w0_field(profile, &grid);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..grid.n1 {
        let z1 = grid.zeta1(i);
        for j in 0..grid.n2 {
            let z2 = grid.zeta2(j);
            let r = (z1 * z1 + z2 * z2).sqrt();
            let d1 = if r == 0.0 {
                0.0
            } else {
                profile.dw_at(r) * z1 / r
            };
            let v = grid.area(j) * dz2[grid.idx(i, j)] * d1;
            num += v;
            den += v.abs();
        }
    }
    let odd_moment = if den == 0.0 { 0.0 } else { num / den };

    IdentityReport {
        i1,
        i1_predicted: -0.5 * c0,
        exchange_lhs,
        exchange_rhs: -i1,
        odd_moment,
        c0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_state::{solve_profile, ProblemParams};
    use approx::assert_relative_eq;
    use std::sync::OnceLock;

    fn profile_d2() -> &'static RadialProfile {
        static P: OnceLock<RadialProfile> = OnceLock::new();
        P.get_or_init(|| {
            let params = ProblemParams::new(3.0, 2).unwrap();
            solve_profile(params, 15.0, 1e-3, 1e-12).unwrap()
        })
    }

    fn generic_geom() -> GeometryData {
        GeometryData::new(
            2,
            vec![4.0, 0.0, 0.0, 3.0],
            vec![0.3],
            vec![0.0],
        )
    }

    fn solved_field() -> &'static CorrectorField {
        static F: OnceLock<CorrectorField> = OnceLock::new();
        F.get_or_init(|| w1_solve(profile_d2(), &generic_geom(), 12.0, 0.08).unwrap())
    }

    #[test]
    fn metric_expansion_limits() {
        let flat = GeometryData::flat(2);
        let m = metric_expansion(&flat, 0.3, (1.2, 0.7));
        assert_eq!(m.g_transverse, vec![1.0]);
        assert_eq!(m.g_mixed, vec![0.0]);
        assert_eq!(m.g_base, vec![1.0]);
        assert_eq!(m.g_normal_mixed, 0.0);
        assert_eq!(m.g_normal, 1.0);

        // On the base point every correction carries a zeta factor.
        let geom = generic_geom();
        let m = metric_expansion(&geom, 0.3, (0.0, 0.0));
        assert_eq!(m.g_transverse, vec![1.0]);
        assert_eq!(m.g_base, vec![1.0]);

        // Closed form for the transverse component.
        let eps = 0.05;
        let (z1, z2) = (0.8, 0.4);
        let m = metric_expansion(&geom, eps, (z1, z2));
        let expect = 1.0 + 2.0 * eps * z2 * 4.0 + eps * eps * z2 * z2 * 16.0;
        assert_relative_eq!(m.g_transverse[0], expect, max_relative = 1e-15);
        let expect = 1.0 - 2.0 * eps * 0.3 * z1
            + 2.0 * eps * z2 * 3.0
            + eps * eps * z1 * z1 * 0.09
            + eps * eps * z2 * z2 * 9.0;
        assert_relative_eq!(m.g_base[0], expect, max_relative = 1e-15);

        // A base block with several directions stays symmetric.
        let geom3 = GeometryData::new(
            3,
            vec![2.0, 0.5, -0.3, 0.5, 1.5, 0.2, -0.3, 0.2, 1.0],
            vec![0.4, 0.1, 0.1, -0.2],
            vec![0.0],
        );
        assert_relative_eq!(geom3.trace_h, 4.5, max_relative = 1e-15);
        let m = metric_expansion(&geom3, 0.07, (0.9, 0.6));
        for a in 0..2 {
            for b in 0..2 {
                assert_relative_eq!(
                    m.g_base[a * 2 + b],
                    m.g_base[b * 2 + a],
                    max_relative = 1e-14
                );
            }
        }
    }

    #[test]
    fn discrete_laplacian_matches_the_radial_equation() {
        let profile = profile_d2();
        let grid = HalfPlaneGrid::new(10.0, 0.05);
        let w0 = w0_field(profile, &grid);
        let flat = GeometryData::flat(2);

        // Flat geometry: the eps term is absent, orders agree exactly.
        let a0 = expansion_apply(&flat, 0.2, &grid, &w0, 0);
        let a1 = expansion_apply(&flat, 0.2, &grid, &w0, 1);
        assert_eq!(a0, a1);

        // -lap(w0) + w0 - w0^p vanishes to second order in the step.
        let sup = |g: &HalfPlaneGrid, lap: &[f64], u: &[f64]| -> f64 {
            let mut s = 0.0f64;
            for i in 1..g.n1 - 1 {
                for j in 0..g.n2 - 1 {
                    let id = g.idx(i, j);
                    s = s.max((-lap[id] + u[id] - u[id].powi(3)).abs());
                }
            }
            s
        };
        // Fourth derivatives of the profile near the origin are large
        // (|w''(0)| is about 4.3), so the h^2 constant is a few units.
        let coarse = sup(&grid, &a0, &w0);
        assert!(coarse < 3e-2, "coarse residual {coarse}");

        let fine_grid = HalfPlaneGrid::new(10.0, 0.025);
        let w0f = w0_field(profile, &fine_grid);
        let af = expansion_apply(&flat, 0.2, &fine_grid, &w0f, 0);
        let fine = sup(&fine_grid, &af, &w0f);
        let ratio = coarse / fine;
        assert!(
            (3.0..5.5).contains(&ratio),
            "expected second-order decay, got ratio {ratio}"
        );
    }

    #[test]
    fn first_order_term_matches_the_symbolic_form() {
        let profile = profile_d2();
        let geom = generic_geom();
        let eps = 0.13;
        let mismatch = |step: f64| -> f64 {
            let grid = HalfPlaneGrid::new(10.0, step);
            let w0 = w0_field(profile, &grid);
            let a0 = expansion_apply(&geom, 0.0, &grid, &w0, 1);
            let a1 = expansion_apply(&geom, eps, &grid, &w0, 1);
            let dz2 = dz2_w0_field(profile, &grid);
            let d11 = d11_w0_field(profile, &grid);
            let mut worst = 0.0f64;
            for i in 1..grid.n1 - 1 {
                for j in 0..grid.n2 - 1 {
                    let id = grid.idx(i, j);
                    let got = (a1[id] - a0[id]) / eps;
                    let want =
                        geom.trace_h * dz2[id] - 2.0 * grid.zeta2(j) * geom.h11() * d11[id];
                    worst = worst.max((got - want).abs());
                }
            }
            worst
        };
        // Discrete versus analytic derivatives: second-order agreement.
        let coarse = mismatch(0.05);
        let fine = mismatch(0.025);
        assert!(coarse < 5e-2, "eps-term mismatch {coarse}");
        let ratio = coarse / fine;
        assert!(
            (3.0..5.5).contains(&ratio),
            "expected second-order agreement, got ratio {ratio}"
        );
    }

    #[test]
    fn flat_geometry_gives_zero_corrector() {
        let field = w1_solve(profile_d2(), &GeometryData::flat(2), 8.0, 0.1).unwrap();
        assert!(field.w1.iter().all(|&v| v == 0.0));
        assert_eq!(field.kernel_coeff, 0.0);
        assert_eq!(field.solver_residual, 0.0);
    }

    #[test]
    fn assembled_operator_is_symmetric() {
        let profile = profile_d2();
        let grid = HalfPlaneGrid::new(6.0, 0.2);
        let a = assemble_l0(profile, &grid);
        let unk = Unknowns::new(&grid);
        let n = unk.count();
        let band = unk.band();
        for i in 0..n {
            for j in i + 1..(i + band + 1).min(n) {
                assert_eq!(a.get(i, j), a.get(j, i), "asymmetry at ({i},{j})");
            }
        }
    }

    #[test]
    fn corrector_solve_satisfies_its_contracts() {
        let field = solved_field();
        let grid = &field.grid;
        assert!(field.kernel_coeff.abs() < 1e-8, "kernel overlap {}", field.kernel_coeff);
        assert!(field.solver_residual < 1e-10, "residual {}", field.solver_residual);

        let peak = field.w1.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(peak > 0.1, "corrector unexpectedly small: {peak}");

        // Exponential decay: the outer 10% of the grid is negligible.
        let mut outer = 0.0f64;
        for i in 0..grid.n1 {
            for j in 0..grid.n2 {
                let frac = (grid.zeta1(i).abs() / grid.r).max(grid.zeta2(j) / grid.r);
                if frac > 0.9 {
                    outer = outer.max(field.w1[grid.idx(i, j)].abs());
                }
            }
        }
        assert!(outer < 1e-3 * peak, "outer mass {} vs peak {}", outer, peak);

        // Discrete orthogonality to the kernel direction.
        let mut dot = 0.0;
        let mut k_sq = 0.0;
        let mut w_sq = 0.0;
        for i in 0..grid.n1 {
            let z1 = grid.zeta1(i);
            for j in 0..grid.n2 {
                let z2 = grid.zeta2(j);
                let r = (z1 * z1 + z2 * z2).sqrt();
                let k = if r == 0.0 {
                    0.0
                } else {
                    profile_d2().dw_at(r) * z1 / r
                };
                let area = grid.area(j);
                let w = field.w1[grid.idx(i, j)];
                dot += area * w * k;
                k_sq += area * k * k;
                w_sq += area * w * w;
            }
        }
        assert!(
            dot.abs() < 1e-10 * k_sq.sqrt() * w_sq.sqrt(),
            "kernel component {dot}"
        );

        // Neumann floor: the one-sided normal derivative is O(step^2).
        let mut worst = 0.0f64;
        for i in 0..grid.n1 {
            let d = (-3.0 * field.w1[grid.idx(i, 0)] + 4.0 * field.w1[grid.idx(i, 1)]
                - field.w1[grid.idx(i, 2)])
                / (2.0 * grid.step);
            worst = worst.max(d.abs());
        }
        assert!(worst < 0.05 * peak, "normal derivative {worst} vs peak {peak}");
    }

    #[test]
    fn corrector_is_linear_in_the_geometry() {
        let profile = profile_d2();
        let single = w1_solve(profile, &generic_geom(), 8.0, 0.1).unwrap();
        let doubled_geom = GeometryData::new(
            2,
            vec![8.0, 0.0, 0.0, 6.0],
            vec![0.6],
            vec![0.0],
        );
        let doubled = w1_solve(profile, &doubled_geom, 8.0, 0.1).unwrap();
        for (a, b) in single.w1.iter().zip(&doubled.w1) {
            assert!(
                (2.0 * a - b).abs() <= 1e-10 * b.abs().max(1e-300),
                "linearity breach: {a} vs {b}"
            );
        }
    }

    #[test]
    fn parity_breaking_rhs_is_rejected() {
        let profile = profile_d2();
        let grid = HalfPlaneGrid::new(8.0, 0.1);
        // The kernel direction itself: maximal overlap.
        let mut f = vec![0.0; grid.len()];
        for i in 0..grid.n1 {
            let z1 = grid.zeta1(i);
            for j in 0..grid.n2 {
                let z2 = grid.zeta2(j);
                let r = (z1 * z1 + z2 * z2).sqrt();
                f[grid.idx(i, j)] = if r == 0.0 {
                    0.0
                } else {
                    profile.dw_at(r) * z1 / r
                };
            }
        }
        match w1_solve_with_rhs(profile, &grid, &f) {
            Err(CorrectorError::SolvabilityViolation { overlap }) => {
                assert!(overlap.abs() > 0.99);
            }
            other => panic!("expected SolvabilityViolation, got {other:?}"),
        }
    }

    #[test]
    fn residual_orders_match_the_expansion() {
        let profile = profile_d2();
        // Strong curvature so the eps^2 signal clears the fixed h^2
        // discretization floor of the sup norm at the smallest eps.
        let geom = GeometryData::new(2, vec![12.0, 0.0, 0.0, 9.0], vec![0.3], vec![0.0]);
        let field = w1_solve(profile, &geom, 12.0, 0.08).unwrap();
        let eps_list = [0.1, 0.05, 0.025, 0.0125];
        let rep = residual_order_test(profile, &geom, &field, &eps_list);
        assert!(
            (rep.slope_r0 - 1.0).abs() < 0.1,
            "r0 slope {} (values {:?})",
            rep.slope_r0,
            rep.r0
        );
        assert!(
            (rep.slope_r1 - 2.0).abs() < 0.15,
            "r1 slope {} (values {:?})",
            rep.slope_r1,
            rep.r1
        );
        // The corrected residual falls faster: the ratio trends to zero.
        let ratios: Vec<f64> = rep.r1.iter().zip(&rep.r0).map(|(a, b)| a / b).collect();
        for pair in ratios.windows(2) {
            assert!(pair[1] < pair[0], "ratio should decrease: {ratios:?}");
        }
        assert!(ratios.last().unwrap() < &1.0, "ratios {ratios:?}");

        // Flat geometry: residuals are pure discretization noise, no trend.
        let flat = GeometryData::flat(2);
        let zero = w1_solve(profile, &flat, 12.0, 0.08).unwrap();
        let rep = residual_order_test(profile, &flat, &zero, &eps_list);
        let max = rep.r0.iter().fold(0.0f64, |m, &v| m.max(v));
        let min = rep.r0.iter().fold(f64::MAX, |m, &v| m.min(v));
        assert!(max / min < 1.01, "flat residuals should not trend: {:?}", rep.r0);
    }

    #[test]
    fn projection_identities_hold() {
        let rep = projection_identities(profile_d2());
        assert_relative_eq!(rep.i1, rep.i1_predicted, max_relative = 1e-6);
        assert_relative_eq!(rep.exchange_lhs, rep.exchange_rhs, max_relative = 1e-6);
        assert!(rep.odd_moment.abs() < 1e-12, "odd moment {}", rep.odd_moment);
        assert!(rep.i1 < 0.0 && rep.c0 > 0.0);

        // Dimension generic: the same identity for a d = 3 profile.
        let params = ProblemParams::new(3.0, 3).unwrap();
        let profile = solve_profile(params, 15.0, 1e-3, 1e-12).unwrap();
        let rep = projection_identities(&profile);
        assert_relative_eq!(rep.i1, rep.i1_predicted, max_relative = 1e-6);
        assert_relative_eq!(rep.exchange_lhs, rep.exchange_rhs, max_relative = 1e-6);
    }
}
