//! Spectral data of the model submanifold: Laplace-Beltrami eigenvalues
//! `rho_j`, normal-Laplacian eigenvalues `omega_l` and Jacobi eigenvalues
//! `mu_l`, for analytically known flat models (circles and flat tori), with
//! Weyl-law diagnostics and diagonal inversion of the Jacobi operator.
//!
//! The normal bundle is modeled as trivial and flat, so the normal Laplacian
//! acts componentwise (omega = n copies of rho) and the Jacobi operator is a
//! scalar shift `mu = omega + kappa`; the downstream asymptotics depend only
//! on `min |mu| > 0` and on the Weyl growth of the lists.

use crate::ground_state::ProfileConstants;
use crate::linalg::fit_line;
use crate::par::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("need at least {need} eigenvalues for a Weyl fit, have {have}")]
    InsufficientData { have: usize, need: usize },
    #[error("Jacobi eigenvalue mu[{index}] = {value:e} is numerically zero but carries data")]
    DegenerateJacobi { index: usize, value: f64 },
}

/// Eigenvalue lists of the model submanifold, multiplicities expanded
/// inline. `mu` follows the ordering of `omega`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmanifoldSpectra {
    pub k: usize,
    pub n: usize,
    pub vol: f64,
    pub label: String,
    pub rho: Vec<f64>,
    pub omega: Vec<f64>,
    pub mu: Vec<f64>,
    /// Smallest |mu_l|; the model is non-degenerate iff this is positive.
    #[serde(skip)]
    pub min_abs_mu: f64,
}

impl SubmanifoldSpectra {
    /// Recompute the cached degeneracy indicator (after deserializing).
    pub fn refresh_min_mu(&mut self) {
        self.min_abs_mu = self
            .mu
            .iter()
            .map(|m| m.abs())
            .fold(f64::INFINITY, f64::min);
        if self.mu.is_empty() {
            self.min_abs_mu = f64::INFINITY;
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.min_abs_mu < 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhichSpectrum {
    Rho,
    Omega,
    Mu,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeylReport {
    pub fitted_constant: f64,
    pub fitted_exponent: f64,
    pub target_exponent: f64,
    pub relative_errors: Vec<f64>,
}

/// Fourier spectrum of a circle of the given circumference: eigenvalues
/// `(2 pi m / length)^2`, multiplicity two for m != 0.
pub fn circle_spectrum(length: f64, count: usize) -> SubmanifoldSpectra {
    assert!(length > 0.0);
    let base = (2.0 * std::f64::consts::PI / length).powi(2);
    let mut rho = Vec::with_capacity(count);
    let mut m = 0u64;
    while rho.len() < count {
        if m == 0 {
            rho.push(0.0);
        } else {
            let v = base * (m * m) as f64;
            rho.push(v);
            if rho.len() < count {
                rho.push(v);
            }
        }
        m += 1;
    }
    SubmanifoldSpectra {
        k: 1,
        n: 0,
        vol: length,
        label: format!("circle(L={length})"),
        rho,
        omega: Vec::new(),
        mu: Vec::new(),
        min_abs_mu: f64::INFINITY,
    }
}

/// Lattice spectrum of a flat torus with the given side lengths:
/// eigenvalues `sum_i (2 pi m_i / L_i)^2` over integer vectors.
///
/// Enumeration is certified by a frontier bound: every vector outside the
/// box `|m_i| <= b` has some component of size b+1, hence eigenvalue at
/// least `(2 pi (b+1) / L_max)^2`; entries below that frontier are complete.
/// The box grows until `count` entries are certified.
pub fn flat_torus_spectrum(lengths: &[f64], count: usize) -> SubmanifoldSpectra {
    assert!(!lengths.is_empty() && lengths.iter().all(|&l| l > 0.0));
    let k = lengths.len();
    let l_max = lengths.iter().cloned().fold(0.0f64, f64::max);
    let freq: Vec<f64> = lengths
        .iter()
        .map(|&l| (2.0 * std::f64::consts::PI / l).powi(2))
        .collect();

    let mut b = (count as f64).sqrt().ceil() as i64 + 2;
    let rho = loop {
        let frontier = (2.0 * std::f64::consts::PI * (b as f64 + 1.0) / l_max).powi(2);
        // One strip per leading coordinate, enumerated independently.
        let mut values: Vec<f64> = (-b..=b)
            .collect::<Vec<i64>>()
            .into_par_iter()
            .map(|m0| {
                let mut strip = Vec::new();
                let mut idx = vec![-b; k - 1];
                loop {
                    let mut v = freq[0] * (m0 * m0) as f64;
                    for (j, &m) in idx.iter().enumerate() {
                        v += freq[j + 1] * (m * m) as f64;
                    }
                    if v < frontier {
                        strip.push(v);
                    }
                    // Odometer over the remaining k-1 coordinates.
                    let mut carry = true;
                    for slot in idx.iter_mut() {
                        if *slot < b {
                            *slot += 1;
                            carry = false;
                            break;
                        }
                        *slot = -b;
                    }
                    if carry {
                        break;
                    }
                }
                strip
            })
            .collect::<Vec<Vec<f64>>>()
            .into_iter()
            .flatten()
            .collect();
        values.sort_unstable_by(f64::total_cmp);
        if values.len() >= count {
            values.truncate(count);
            break values;
        }
        b *= 2;
    };

    SubmanifoldSpectra {
        k,
        n: 0,
        vol: lengths.iter().product(),
        label: format!(
            "torus(L={})",
            lengths
                .iter()
                .map(|l| format!("{l}"))
                .collect::<Vec<_>>()
                .join("x")
        ),
        rho,
        omega: Vec::new(),
        mu: Vec::new(),
        min_abs_mu: f64::INFINITY,
    }
}

/// Attach the normal data: the flat trivial normal bundle of rank `n` gives
/// omega as n interleaved copies of rho, and the Jacobi eigenvalues are the
/// scalar shift `mu = omega + kappa`. The smallest |mu| is recorded; a zero
/// entry marks the model as degenerate (a warning state, not a failure).
pub fn build_spectra(base: &SubmanifoldSpectra, n: usize, kappa: f64) -> SubmanifoldSpectra {
    assert!(!base.rho.is_empty(), "base spectra must have rho populated");
    assert!(n >= 1, "normal rank must be at least 1");
    let mut omega = Vec::with_capacity(base.rho.len() * n);
    for &r in &base.rho {
        for _ in 0..n {
            omega.push(r);
        }
    }
    let mu: Vec<f64> = omega.iter().map(|&w| w + kappa).collect();
    let mut out = SubmanifoldSpectra {
        k: base.k,
        n,
        vol: base.vol,
        label: format!("{}+normal(n={n},kappa={kappa})", base.label),
        rho: base.rho.clone(),
        omega,
        mu,
        min_abs_mu: 0.0,
    };
    out.refresh_min_mu();
    out
}

/// Least-squares Weyl fit `lambda_j ~ C (j / vol)^(2/k)` over the top half
/// of the list (1-based index j).
pub fn weyl_check(
    spectra: &SubmanifoldSpectra,
    which: WhichSpectrum,
) -> Result<WeylReport, GeometryError> {
    let list: &[f64] = match which {
        WhichSpectrum::Rho => &spectra.rho,
        WhichSpectrum::Omega => &spectra.omega,
        WhichSpectrum::Mu => &spectra.mu,
    };
    if list.len() < 1000 {
        return Err(GeometryError::InsufficientData {
            have: list.len(),
            need: 1000,
        });
    }
    let start = list.len() / 2;
    let mut xs = Vec::with_capacity(list.len() - start);
    let mut ys = Vec::with_capacity(list.len() - start);
    for (i, &v) in list.iter().enumerate().skip(start) {
        if v > 0.0 {
            xs.push(((i + 1) as f64).ln());
            ys.push(v.ln());
        }
    }
    let (slope, intercept) = fit_line(&xs, &ys);
    // lambda = C (j/vol)^b  =>  ln lambda = b ln j + (ln C - b ln vol).
    let fitted_constant = (intercept + slope * spectra.vol.ln()).exp();
    let relative_errors: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(&lx, &ly)| {
            let fit = intercept + slope * lx;
            (ly.exp() - fit.exp()) / ly.exp()
        })
        .collect();
    Ok(WeylReport {
        fitted_constant,
        fitted_exponent: slope,
        target_exponent: 2.0 / spectra.k as f64,
        relative_errors,
    })
}

/// Solve `C0 * J Phi = G` in the Jacobi eigenbasis: `phi_l = g_l / (C0 mu_l)`.
/// Only modes actually carrying data need an invertible eigenvalue.
pub fn jacobi_invert(
    spectra: &SubmanifoldSpectra,
    g_coeffs: &[f64],
    constants: &ProfileConstants,
) -> Result<Vec<f64>, GeometryError> {
    assert!(
        g_coeffs.len() <= spectra.mu.len(),
        "more coefficients than Jacobi eigenvalues"
    );
    let mut phi = Vec::with_capacity(g_coeffs.len());
    for (i, &g) in g_coeffs.iter().enumerate() {
        let mu = spectra.mu[i];
        if g == 0.0 {
            phi.push(0.0);
            continue;
        }
        if mu.abs() < 1e-12 {
            return Err(GeometryError::DegenerateJacobi {
                index: i,
                value: mu,
            });
        }
        phi.push(g / (constants.c0 * mu));
    }
    Ok(phi)
}
