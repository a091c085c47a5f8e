//! Quadrature helpers for radially reduced half-space integrals.
//!
//! A function on the half-space of dimension `d = n + 1` that factors as
//! `f(r) * (angular part)` integrates as `(angular moment) * ∫ f(r) r^n dr`.
//! The radial factor is handled with finite-volume cell weights on a uniform
//! grid (exact for the measure `r^n dr` over each cell), the angular factor
//! with closed-form half-sphere moments.
//!
//! The degenerate case `d = 1` is admitted for validation against closed
//! forms; there the "half-space" convention reverts to the full line, so the
//! moments below are the two-point `S^0` sums.

/// Surface measure of the unit sphere `S^{n}` in `R^{n+1}`.
pub fn sphere_area(n: usize) -> f64 {
    // |S^n| = 2 pi^{(n+1)/2} / Gamma((n+1)/2), evaluated via the half-integer
    // Gamma recursion to avoid pulling in a special-function dependency.
    let half = 0.5 * (n as f64 + 1.0);
    2.0 * std::f64::consts::PI.powf(half) / gamma_half(n + 1)
}

/// Gamma(m/2) for integer m >= 1, reduced to Gamma(1) = 1 or
/// Gamma(1/2) = sqrt(pi).
fn gamma_half(m: usize) -> f64 {
    let mut z = 0.5 * m as f64;
    let mut acc = 1.0;
    while z > 1.0 + 1e-12 {
        z -= 1.0;
        acc *= z;
    }
    if (z - 1.0).abs() < 1e-12 {
        acc
    } else {
        acc * std::f64::consts::PI.sqrt()
    }
}

/// Angular moments over the half-sphere for transverse dimension `d`.
///
/// `m0` integrates 1, `m_t1_sq` integrates the square of one fixed coordinate
/// of the unit vector, `m_t2_sq_sq` integrates the product of squares of two
/// distinct coordinates. Integrands even in the normal coordinate, so each
/// moment is half the full-sphere value (d >= 2); for d = 1 the full two-point
/// sum is used instead, matching the full-line convention for the constants.
#[derive(Debug, Clone, Copy)]
pub struct HalfSphereMoments {
    pub m0: f64,
    pub m_t1_sq: f64,
    pub m_t2_sq_sq: f64,
}

pub fn half_sphere_moments(d: usize) -> HalfSphereMoments {
    assert!(d >= 1, "transverse dimension must be at least 1");
    if d == 1 {
        return HalfSphereMoments {
            m0: 2.0,
            m_t1_sq: 2.0,
            m_t2_sq_sq: 0.0,
        };
    }
    let n = d - 1;
    let full = sphere_area(n);
    let dim = d as f64;
    HalfSphereMoments {
        m0: 0.5 * full,
        m_t1_sq: 0.5 * full / dim,
        m_t2_sq_sq: 0.5 * full / (dim * (dim + 2.0)),
    }
}

/// Finite-volume weights for the measure `r^n dr` on the uniform grid
/// `r_i = i * step`, `i = 0..len`. Cell `i` spans `[r_i - step/2, r_i + step/2]`
/// clipped to `[0, r_max]`, and the weight is the exact measure of the cell.
pub fn radial_cell_weights(len: usize, step: f64, n: usize) -> Vec<f64> {
    let pow = n as f64 + 1.0;
    let cell = |a: f64, b: f64| (b.powf(pow) - a.powf(pow)) / pow;
    (0..len)
        .map(|i| {
            let r = i as f64 * step;
            let lo = (r - 0.5 * step).max(0.0);
            let hi = if i + 1 == len { r } else { r + 0.5 * step };
            cell(lo, hi)
        })
        .collect()
}

/// `∫ f(r) r^n dr` over the grid underlying `weights`.
pub fn integrate_weighted(f: &[f64], weights: &[f64]) -> f64 {
    assert_eq!(f.len(), weights.len());
    f.iter().zip(weights).map(|(v, w)| v * w).sum()
}

/// Plain trapezoid rule on a uniform grid.
pub fn trapezoid(f: &[f64], step: f64) -> f64 {
    if f.len() < 2 {
        return 0.0;
    }
    let inner: f64 = f[1..f.len() - 1].iter().sum();
    step * (0.5 * (f[0] + f[f.len() - 1]) + inner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sphere_areas_match_closed_forms() {
        assert_relative_eq!(sphere_area(0), 2.0, max_relative = 1e-14);
        assert_relative_eq!(sphere_area(1), 2.0 * std::f64::consts::PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_area(2), 4.0 * std::f64::consts::PI, max_relative = 1e-14);
        assert_relative_eq!(
            sphere_area(3),
            2.0 * std::f64::consts::PI * std::f64::consts::PI,
            max_relative = 1e-14
        );
    }

    #[test]
    fn half_plane_moments_match_direct_angular_integrals() {
        // d = 2: integrate over the angle phi in (0, pi) directly.
        let m = half_sphere_moments(2);
        let samples = 200_000;
        let h = std::f64::consts::PI / samples as f64;
        let (mut i0, mut i1, mut i2) = (0.0, 0.0, 0.0);
        for k in 0..samples {
            let phi = (k as f64 + 0.5) * h;
            let c = phi.cos();
            let s = phi.sin();
            i0 += h;
            i1 += h * c * c;
            i2 += h * c * c * s * s;
        }
        assert_relative_eq!(m.m0, i0, max_relative = 1e-9);
        assert_relative_eq!(m.m_t1_sq, i1, max_relative = 1e-9);
        assert_relative_eq!(m.m_t2_sq_sq, i2, max_relative = 1e-9);
    }

    #[test]
    fn cell_weights_sum_to_total_measure() {
        let step = 1e-3;
        let len = 10_001;
        for n in 0..4 {
            let w = radial_cell_weights(len, step, n);
            let total: f64 = w.iter().sum();
            let r_max = (len - 1) as f64 * step;
            assert_relative_eq!(
                total,
                r_max.powi(n as i32 + 1) / (n as f64 + 1.0),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn weighted_quadrature_is_second_order_on_smooth_integrands() {
        // ∫_0^1 e^{-r} r dr = 1 - 2/e.
        let exact = 1.0 - 2.0 / std::f64::consts::E;
        let err = |step: f64| {
            let len = (1.0 / step).round() as usize + 1;
            let f: Vec<f64> = (0..len).map(|i| (-(i as f64) * step).exp()).collect();
            let w = radial_cell_weights(len, step, 1);
            (integrate_weighted(&f, &w) - exact).abs()
        };
        let e1 = err(1e-2);
        let e2 = err(5e-3);
        assert!(e1 / e2 > 3.0 && e1 / e2 < 5.0, "ratio {}", e1 / e2);
    }
}
