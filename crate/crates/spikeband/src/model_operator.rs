//! Spectrum of the model linearized operator at surface scale epsilon.
//!
//! Every model eigenvalue below the validity threshold comes from one of two
//! branches: `eta(eps^2 rho_j)` driven by the base Laplacian eigenvalues, or
//! a sigma family driven by the normal data (either the literal fiber branch
//! `sigma(eps^2 omega_l)`, or its order-eps^2 refinement
//! `eps^2 C0 mu_l / C1`, which is the default). On top of the assembled
//! spectrum sit the diagnostics: Morse index growth against `Theta eps^-k`,
//! spectral-gap statistics, the invertible-epsilon sweep, and the eigenvalue
//! derivative flow with its chain-rule/finite-difference cross check.

use crate::fiber_spectrum::{
    assemble_pencil, eta as eta_direct, fiber_eigen, find_alpha_bar, sigma as sigma_direct, tau,
    AlphaBarResult, FiberDomain, FiberError,
};
use crate::geometry::{weyl_check, GeometryError, SubmanifoldSpectra, WhichSpectrum};
use crate::ground_state::{ProfileConstants, RadialProfile};
use crate::linalg::{fit_line, Pchip};
use crate::par::*;
use crate::quad::half_sphere_moments;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("spectra list ends at alpha = {alpha_reached:e} before the branch reaches the threshold {threshold:e}")]
    SpectraTooShort { alpha_reached: f64, threshold: f64 },
    #[error("no sample epsilon clears the score threshold c = {c}")]
    NoAdmissibleEpsilon { c: f64 },
    #[error("branch does not cross zero inside the range (crossing at epsilon = {eps_star:e})")]
    NoCrossing { eps_star: f64 },
    #[error(transparent)]
    Fiber(#[from] FiberError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    /// sigma(eps^2 omega_l) through the fiber branch.
    Fiber,
    /// eps^2 C0 mu_l / C1, the order-eps^2 value for the true operator.
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Eta,
    Sigma,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpectrumEntry {
    pub value: f64,
    pub branch: BranchKind,
    pub source_index: usize,
    /// rho_j for eta entries; omega_l (fiber mode) or mu_l (refined mode)
    /// for sigma entries.
    pub source_eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSpectrum {
    pub epsilon: f64,
    pub entries: Vec<SpectrumEntry>,
    pub threshold: f64,
    pub sigma_mode: SigmaMode,
    /// Entries that were evaluated but fell at or above the threshold.
    pub discarded: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MorseIndexReport {
    pub epsilons: Vec<f64>,
    pub counts: Vec<usize>,
    pub theta: f64,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub window: f64,
    pub entries: Vec<SpectrumEntry>,
    pub eta_gaps: Vec<f64>,
    pub sigma_min_abs: Option<f64>,
    pub empty_window: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapScaling {
    pub epsilons: Vec<f64>,
    pub median_eta_gaps: Vec<f64>,
    pub sigma_minima: Vec<f64>,
    pub eta_gap_slope: f64,
    pub sigma_min_slope: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepInterval {
    pub lo: f64,
    pub hi: f64,
    /// Sample of maximal score inside the interval (the representative
    /// admissible epsilon).
    pub eps_star: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KatoReport {
    pub eps_samples: Vec<f64>,
    pub dlambda_chain: Vec<f64>,
    pub dlambda_fd: Vec<f64>,
    pub eps_star: f64,
    pub f_bar_model: f64,
    pub max_rel_mismatch: f64,
}

/// Memoized branch functions eta, sigma and eta' on a 2000-point log-spaced
/// alpha grid over [0, 4 alpha_bar], interpolated with the shape-preserving
/// cubic; queries beyond the grid fall back to direct pencil solves.
pub struct BranchCurves {
    profile: RadialProfile,
    domain: FiberDomain,
    alpha_bar: AlphaBarResult,
    tau0: f64,
    grid_max: f64,
    eta_curve: Pchip,
    sigma_curve: Pchip,
    eta_deriv_curve: Pchip,
}

impl BranchCurves {
    pub fn build(profile: &RadialProfile, domain: &FiberDomain) -> Result<Self, FiberError> {
        let alpha_bar = find_alpha_bar(profile, None, 1e-8, domain)?;
        let tau0 = tau(profile, 0.0, domain)?;
        let grid_max = 4.0 * alpha_bar.alpha_bar;

        let mut alphas = Vec::with_capacity(2000);
        alphas.push(0.0);
        let lo = grid_max * 1e-6;
        let points = 1999usize;
        for i in 0..points {
            let t = i as f64 / (points - 1) as f64;
            alphas.push(lo * (grid_max / lo).powf(t));
        }

        // Cell masses do not depend on alpha; share one assembly across the
        // whole grid and get each eta eigenpair from the guarded solver.
        let mass_pencil = assemble_pencil(profile, 0.0, 0, domain);
        let m0 = half_sphere_moments(profile.params.d).m0;
        let samples: Vec<Result<(f64, f64, f64), FiberError>> = alphas
            .clone()
            .into_par_iter()
            .map(|alpha| {
                let pair = &fiber_eigen(profile, alpha, 0, 1, domain)?[0];
                let v = &pair.v[mass_pencil.offset..];
                let vbv: f64 = v
                    .iter()
                    .zip(&mass_pencil.mass)
                    .map(|(vi, mi)| vi * vi * mi)
                    .sum();
                let deriv = (1.0 - pair.lambda) * m0 * vbv;
                let s = sigma_direct(profile, alpha, domain)?;
                Ok((pair.lambda, s, deriv))
            })
            .collect();
        let mut eta_vals = Vec::with_capacity(alphas.len());
        let mut sigma_vals = Vec::with_capacity(alphas.len());
        let mut deriv_vals = Vec::with_capacity(alphas.len());
        for s in samples {
            let (e, s, d) = s?;
            eta_vals.push(e);
            sigma_vals.push(s);
            deriv_vals.push(d);
        }

        Ok(BranchCurves {
            profile: profile.clone(),
            domain: *domain,
            alpha_bar,
            tau0,
            grid_max,
            eta_curve: Pchip::new(alphas.clone(), eta_vals),
            sigma_curve: Pchip::new(alphas.clone(), sigma_vals),
            eta_deriv_curve: Pchip::new(alphas, deriv_vals),
        })
    }

    pub fn alpha_bar(&self) -> &AlphaBarResult {
        &self.alpha_bar
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    pub fn domain(&self) -> &FiberDomain {
        &self.domain
    }

    pub fn profile(&self) -> &RadialProfile {
        &self.profile
    }

    /// Validity cap below which the two-branch classification holds.
    pub fn default_threshold(&self) -> f64 {
        0.25 * self.tau0
    }

    pub fn eta(&self, alpha: f64) -> f64 {
        if alpha <= self.grid_max {
            self.eta_curve.eval(alpha)
        } else {
            eta_direct(&self.profile, alpha, &self.domain).expect("direct eta solve")
        }
    }

    pub fn sigma(&self, alpha: f64) -> f64 {
        if alpha <= self.grid_max {
            self.sigma_curve.eval(alpha)
        } else {
            sigma_direct(&self.profile, alpha, &self.domain).expect("direct sigma solve")
        }
    }

    pub fn eta_deriv(&self, alpha: f64) -> f64 {
        if alpha <= self.grid_max {
            self.eta_deriv_curve.eval(alpha)
        } else {
            crate::fiber_spectrum::eta_derivative(&self.profile, alpha, &self.domain)
                .expect("direct eta derivative solve")
        }
    }
}

/// Assemble the model spectrum at one epsilon from prebuilt curves.
pub fn assemble_with_curves(
    curves: &BranchCurves,
    constants: &ProfileConstants,
    spectra: &SubmanifoldSpectra,
    epsilon: f64,
    sigma_mode: SigmaMode,
    threshold: Option<f64>,
) -> Result<ModelSpectrum, ModelError> {
    assert!(epsilon > 0.0);
    assert!(!spectra.rho.is_empty(), "spectra must carry rho data");
    assert!(
        !spectra.mu.is_empty() && !spectra.omega.is_empty(),
        "spectra must carry normal data (run build_spectra first)"
    );
    let threshold = threshold.unwrap_or_else(|| curves.default_threshold());
    let e2 = epsilon * epsilon;
    let mut entries = Vec::new();
    let mut discarded = 0usize;

    let mut reached = false;
    for (j, &rho) in spectra.rho.iter().enumerate() {
        let value = curves.eta(e2 * rho);
        if value < threshold {
            entries.push(SpectrumEntry {
                value,
                branch: BranchKind::Eta,
                source_index: j,
                source_eigenvalue: rho,
            });
        } else {
            discarded += 1;
            reached = true;
            break;
        }
    }
    if !reached {
        return Err(ModelError::SpectraTooShort {
            alpha_reached: e2 * spectra.rho.last().unwrap(),
            threshold,
        });
    }

    let mut reached = false;
    match sigma_mode {
        SigmaMode::Refined => {
            for (l, &mu) in spectra.mu.iter().enumerate() {
                let value = e2 * constants.c0 * mu / constants.c1;
                if value < threshold {
                    entries.push(SpectrumEntry {
                        value,
                        branch: BranchKind::Sigma,
                        source_index: l,
                        source_eigenvalue: mu,
                    });
                } else {
                    discarded += 1;
                    reached = true;
                    break;
                }
            }
        }
        SigmaMode::Fiber => {
            for (l, &omega) in spectra.omega.iter().enumerate() {
                let value = curves.sigma(e2 * omega);
                if value < threshold {
                    entries.push(SpectrumEntry {
                        value,
                        branch: BranchKind::Sigma,
                        source_index: l,
                        source_eigenvalue: omega,
                    });
                } else {
                    discarded += 1;
                    reached = true;
                    break;
                }
            }
        }
    }
    if !reached {
        let last = match sigma_mode {
            SigmaMode::Refined => *spectra.mu.last().unwrap(),
            SigmaMode::Fiber => *spectra.omega.last().unwrap(),
        };
        return Err(ModelError::SpectraTooShort {
            alpha_reached: e2 * last,
            threshold,
        });
    }

    entries.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then_with(|| (a.branch == BranchKind::Sigma).cmp(&(b.branch == BranchKind::Sigma)))
            .then_with(|| a.source_index.cmp(&b.source_index))
    });
    Ok(ModelSpectrum {
        epsilon,
        entries,
        threshold,
        sigma_mode,
        discarded,
    })
}

/// One-shot assembly: builds the memoized curves first. Prefer
/// `BranchCurves::build` + `assemble_with_curves` when sweeping epsilon.
pub fn assemble_model_spectrum(
    profile: &RadialProfile,
    constants: &ProfileConstants,
    spectra: &SubmanifoldSpectra,
    epsilon: f64,
    sigma_mode: SigmaMode,
    threshold: Option<f64>,
) -> Result<ModelSpectrum, ModelError> {
    let curves = BranchCurves::build(profile, &FiberDomain::default())?;
    assemble_with_curves(&curves, constants, spectra, epsilon, sigma_mode, threshold)
}

/// Number of negative model eigenvalues.
pub fn morse_index(model: &ModelSpectrum) -> usize {
    model.entries.iter().filter(|e| e.value < 0.0).count()
}

/// Morse index growth against the Weyl prediction
/// `Theta = (alpha_bar / C_k)^{k/2} Vol(K)`.
pub fn morse_report(
    curves: &BranchCurves,
    constants: &ProfileConstants,
    spectra: &SubmanifoldSpectra,
    epsilons: &[f64],
) -> Result<MorseIndexReport, ModelError> {
    let weyl = weyl_check(spectra, WhichSpectrum::Rho)?;
    let k = spectra.k as f64;
    let theta = (curves.alpha_bar().alpha_bar / weyl.fitted_constant).powf(0.5 * k) * spectra.vol;
    let mut counts = Vec::with_capacity(epsilons.len());
    let mut ratios = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let model = assemble_with_curves(curves, constants, spectra, eps, SigmaMode::Refined, None)?;
        let count = morse_index(&model);
        counts.push(count);
        ratios.push(count as f64 * eps.powf(k) / theta);
    }
    Ok(MorseIndexReport {
        epsilons: epsilons.to_vec(),
        counts,
        theta,
        ratios,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Collapse entries that coincide to relative precision 1e-12 (multiplicity
/// duplicates), leaving the distinct levels.
fn dedupe_sorted(values: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        match out.last() {
            Some(&last) if (v - last).abs() <= 1e-12 * v.abs().max(last.abs()) => {}
            _ => out.push(v),
        }
    }
    out
}

/// Near-zero structure of the spectrum at one epsilon: eta-level gaps and
/// the distance of the sigma branch from zero.
pub fn gap_report(
    curves: &BranchCurves,
    constants: &ProfileConstants,
    spectra: &SubmanifoldSpectra,
    epsilon: f64,
    window: Option<f64>,
) -> Result<GapReport, ModelError> {
    let k = spectra.k as f64;
    let window = window.unwrap_or_else(|| 10.0 * epsilon.powf(k.min(2.0)));
    let model = assemble_with_curves(curves, constants, spectra, epsilon, SigmaMode::Refined, None)?;
    let entries: Vec<SpectrumEntry> = model
        .entries
        .iter()
        .filter(|e| e.value.abs() < window)
        .cloned()
        .collect();
    let eta_values: Vec<f64> = entries
        .iter()
        .filter(|e| e.branch == BranchKind::Eta)
        .map(|e| e.value)
        .collect();
    let distinct = dedupe_sorted(&eta_values);
    let eta_gaps: Vec<f64> = distinct.windows(2).map(|w| w[1] - w[0]).collect();
    let sigma_min_abs = model
        .entries
        .iter()
        .filter(|e| e.branch == BranchKind::Sigma)
        .map(|e| e.value.abs())
        .min_by(f64::total_cmp);
    Ok(GapReport {
        window,
        empty_window: entries.is_empty(),
        degenerate: sigma_min_abs.map_or(false, |m| m == 0.0),
        entries,
        eta_gaps,
        sigma_min_abs,
    })
}

/// Gap scaling across an epsilon sweep: median eta-level gap should scale
/// like eps^k, the sigma distance from zero like eps^2.
pub fn gap_scaling(
    curves: &BranchCurves,
    constants: &ProfileConstants,
    spectra: &SubmanifoldSpectra,
    epsilons: &[f64],
) -> Result<GapScaling, ModelError> {
    assert!(epsilons.len() >= 2);
    let mut median_gaps = Vec::with_capacity(epsilons.len());
    let mut sigma_minima = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let rep = gap_report(curves, constants, spectra, eps, None)?;
        assert!(
            !rep.eta_gaps.is_empty(),
            "no eta gaps inside the window at epsilon = {eps}"
        );
        median_gaps.push(median(rep.eta_gaps.clone()));
        sigma_minima.push(rep.sigma_min_abs.expect("sigma branch present"));
    }
    let xs: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let ys_gap: Vec<f64> = median_gaps.iter().map(|g| g.ln()).collect();
    let ys_sig: Vec<f64> = sigma_minima.iter().map(|s| s.ln()).collect();
    let (eta_gap_slope, _) = fit_line(&xs, &ys_gap);
    let (sigma_min_slope, _) = fit_line(&xs, &ys_sig);
    Ok(GapScaling {
        epsilons: epsilons.to_vec(),
        median_eta_gaps: median_gaps,
        sigma_minima,
        eta_gap_slope,
        sigma_min_slope,
    })
}

/// Distance of the model spectrum from zero, normalized by the resonance
/// scale min(eps^2, eps^k).
pub fn invertibility_score(
    curves: &BranchCurves,
    constants: &ProfileConstants,
    spectra: &SubmanifoldSpectra,
    epsilon: f64,
) -> Result<f64, ModelError> {
    let model = assemble_with_curves(curves, constants, spectra, epsilon, SigmaMode::Refined, None)?;
    let min_abs = model
        .entries
        .iter()
        .map(|e| e.value.abs())
        .min_by(f64::total_cmp)
        .expect("nonempty spectrum");
    let k = spectra.k as f64;
    Ok(min_abs / epsilon.powf(2.0f64.max(k)))
}

/// Maximal sub-intervals of [eps_lo, eps_hi] where the invertibility score
/// stays at or above c, each with its best sample. For small c the score
/// dips below the threshold only in narrow wells around the eta-branch
/// resonances eps = sqrt(alpha_bar / rho_j); the well width shrinks like
/// c * eps^(k+1), far below any affordable uniform grid. The sweep
/// therefore cuts the range at the predicted resonances, samples each
/// segment on a geometric grid of about `samples / segments` points, and
/// pins the admissible endpoints by bisecting the score = c crossing, so
/// the interval lengths do not depend on the sampling density.
pub fn invertibility_sweep(
    curves: &BranchCurves,
    constants: &ProfileConstants,
    spectra: &SubmanifoldSpectra,
    eps_lo: f64,
    eps_hi: f64,
    samples: usize,
    c: f64,
) -> Result<Vec<SweepInterval>, ModelError> {
    assert!(eps_lo > 0.0 && eps_hi > eps_lo);
    assert!(samples >= 100, "need at least 100 samples");
    // An undersized spectra list surfaces here once, at the worst epsilon.
    invertibility_score(curves, constants, spectra, eps_lo)?;
    let score = |eps: f64| {
        invertibility_score(curves, constants, spectra, eps)
            .expect("score evaluation inside sweep")
    };

    let abar = curves.alpha_bar().alpha_bar;
    let mut cuts: Vec<f64> = spectra
        .rho
        .iter()
        .filter(|&&r| r > 0.0)
        .map(|&r| (abar / r).sqrt())
        .filter(|&e| e > eps_lo && e < eps_hi)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| *a - *b <= 1e-12 * *b);

    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(eps_lo);
    bounds.extend_from_slice(&cuts);
    bounds.push(eps_hi);
    let segments: Vec<(f64, f64)> = bounds.windows(2).map(|w| (w[0], w[1])).collect();
    let per_segment = (samples / segments.len()).clamp(5, 64);

    let found: Vec<Option<SweepInterval>> = segments
        .into_par_iter()
        .map(|(a, b)| segment_interval(a, b, per_segment, c, &score))
        .collect();
    let intervals: Vec<SweepInterval> = found.into_iter().flatten().collect();
    if intervals.is_empty() {
        return Err(ModelError::NoAdmissibleEpsilon { c });
    }
    Ok(intervals)
}

/// Admissible part of one inter-resonance segment: None when the score
/// never reaches c there, otherwise the maximal sub-interval, with each
/// endpoint bisected onto its score = c crossing. A segment bound is kept
/// as an endpoint only where the score is already admissible at the bound
/// itself (the sweep limits; resonance cuts always fail that test).
fn segment_interval(
    a: f64,
    b: f64,
    samples: usize,
    c: f64,
    score: &(impl Fn(f64) -> f64 + Sync),
) -> Option<SweepInterval> {
    if b <= a {
        return None;
    }
    let ratio = b / a;
    let pts: Vec<(f64, f64)> = (1..=samples)
        .map(|i| {
            let eps = a * ratio.powf(i as f64 / (samples + 1) as f64);
            (eps, score(eps))
        })
        .collect();
    let best = (0..pts.len()).max_by(|&i, &j| pts[i].1.total_cmp(&pts[j].1))?;
    let (x_star, s_star) = pts[best];
    if s_star < c {
        return None;
    }

    let mut good = x_star;
    let mut lo = None;
    for &(e, s) in pts[..best].iter().rev() {
        if s >= c {
            good = e;
        } else {
            lo = Some(score_crossing(e, good, c, score));
            break;
        }
    }
    let lo = lo.unwrap_or_else(|| {
        if score(a) >= c {
            a
        } else {
            score_crossing(a, good, c, score)
        }
    });

    let mut good = x_star;
    let mut hi = None;
    for &(e, s) in &pts[best + 1..] {
        if s >= c {
            good = e;
        } else {
            hi = Some(score_crossing(e, good, c, score));
            break;
        }
    }
    let hi = hi.unwrap_or_else(|| {
        if score(b) >= c {
            b
        } else {
            score_crossing(b, good, c, score)
        }
    });

    Some(SweepInterval {
        lo,
        hi,
        eps_star: x_star,
        score: s_star,
    })
}

/// Bisect the score = c crossing bracketed by an inadmissible point and an
/// admissible one; returns the admissible-side end of the final bracket.
fn score_crossing(
    mut bad: f64,
    mut good: f64,
    c: f64,
    score: &(impl Fn(f64) -> f64 + Sync),
) -> f64 {
    for _ in 0..60 {
        if (bad - good).abs() <= 1e-9 * good {
            break;
        }
        let mid = 0.5 * (bad + good);
        if score(mid) >= c {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}

/// Eigenvalue derivative flow along the eta branch for base mode j:
/// d(lambda)/d(eps) by the chain rule 2 eps rho_j eta'(eps^2 rho_j) against
/// centered finite differences of directly solved eta values, plus the
/// crossing constant F = eps_* d(lambda)/d(eps) at the zero crossing.
pub fn kato_flow(
    curves: &BranchCurves,
    spectra: &SubmanifoldSpectra,
    branch_index: usize,
    eps_lo: f64,
    eps_hi: f64,
) -> Result<KatoReport, ModelError> {
    assert!(branch_index < spectra.rho.len());
    assert!(eps_lo > 0.0 && eps_hi > eps_lo);
    let rho = spectra.rho[branch_index];
    if rho == 0.0 {
        return Err(ModelError::NoCrossing {
            eps_star: f64::INFINITY,
        });
    }
    let eps_star = (curves.alpha_bar().alpha_bar / rho).sqrt();
    if eps_star < eps_lo || eps_star > eps_hi {
        return Err(ModelError::NoCrossing { eps_star });
    }

    let count = 21usize;
    let ratio = eps_hi / eps_lo;
    let eps_samples: Vec<f64> = (0..count)
        .map(|i| eps_lo * ratio.powf(i as f64 / (count - 1) as f64))
        .collect();
    let profile = curves.profile();
    let domain = curves.domain();
    let pairs: Vec<(f64, f64)> = eps_samples
        .clone()
        .into_par_iter()
        .map(|eps| {
            let chain = 2.0 * eps * rho * curves.eta_deriv(eps * eps * rho);
            let delta = 1e-3 * eps;
            let up = eta_direct(profile, (eps + delta) * (eps + delta) * rho, domain)
                .expect("direct eta");
            let dn = eta_direct(profile, (eps - delta) * (eps - delta) * rho, domain)
                .expect("direct eta");
            let fd = (up - dn) / (2.0 * delta);
            (chain, fd)
        })
        .collect();
    let dlambda_chain: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let dlambda_fd: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let max_rel_mismatch = dlambda_chain
        .iter()
        .zip(&dlambda_fd)
        .map(|(c, f)| (c - f).abs() / c.abs().max(f.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0f64, f64::max);

    let f_bar_model = eps_star * 2.0 * eps_star * rho * curves.eta_deriv(curves.alpha_bar().alpha_bar);
    Ok(KatoReport {
        eps_samples,
        dlambda_chain,
        dlambda_fd,
        eps_star,
        f_bar_model,
        max_rel_mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_spectra, circle_spectrum};
    use crate::ground_state::{compute_constants, solve_profile, ProblemParams};
    use approx::assert_relative_eq;
    use std::sync::OnceLock;

    struct Ctx {
        constants: ProfileConstants,
        curves: BranchCurves,
    }

    static CTX: OnceLock<Ctx> = OnceLock::new();

    fn ctx() -> &'static Ctx {
        CTX.get_or_init(|| {
            let params = ProblemParams::new(3.0, 2).unwrap();
            let profile = solve_profile(params, 15.0, 1e-3, 1e-12).unwrap();
            let constants = compute_constants(&profile);
            let curves = BranchCurves::build(&profile, &FiberDomain::default()).unwrap();
            Ctx { constants, curves }
        })
    }

    fn circle_model(kappa: f64, count: usize) -> SubmanifoldSpectra {
        let base = circle_spectrum(2.0 * std::f64::consts::PI, count);
        build_spectra(&base, 1, kappa)
    }

    #[test]
    fn memoized_curves_match_direct_solves() {
        let c = ctx();
        let top = 4.0 * c.curves.alpha_bar().alpha_bar;
        let mut state = 0xfeed5eed1234u64;
        let mut rand = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let alpha = rand() * top;
            let direct = eta_direct(c.curves.profile(), alpha, c.curves.domain()).unwrap();
            assert!(
                (c.curves.eta(alpha) - direct).abs() < 1e-4,
                "eta memo off at alpha = {alpha}"
            );
            let direct = sigma_direct(c.curves.profile(), alpha, c.curves.domain()).unwrap();
            assert!(
                (c.curves.sigma(alpha) - direct).abs() < 1e-4,
                "sigma memo off at alpha = {alpha}"
            );
        }
    }

    #[test]
    fn assembled_spectrum_is_sorted_and_classified() {
        let c = ctx();
        let spectra = circle_model(0.5, 400);
        let model = assemble_with_curves(
            &c.curves,
            &c.constants,
            &spectra,
            0.05,
            SigmaMode::Refined,
            None,
        )
        .unwrap();
        assert!(model
            .entries
            .windows(2)
            .all(|w| w[0].value <= w[1].value));
        assert!(model.entries.iter().all(|e| e.value < model.threshold));
        assert!(model.discarded >= 2);

        // The j = 0 eta entry sits at eta(0) = -(p-1).
        let first_eta = model
            .entries
            .iter()
            .find(|e| e.branch == BranchKind::Eta && e.source_index == 0)
            .unwrap();
        assert_relative_eq!(first_eta.value, -2.0, epsilon = 1e-3);

        // Refined sigma entries carry the exact closed form.
        let e2 = 0.05f64 * 0.05;
        for e in model.entries.iter().filter(|e| e.branch == BranchKind::Sigma) {
            let expect = e2 * c.constants.c0 * e.source_eigenvalue / c.constants.c1;
            assert_eq!(e.value, expect);
            assert!(e.source_eigenvalue > 0.0);
            assert!(e.value > 0.0);
        }

        // Negative sigma entries come one-for-one from negative mu.
        let spectra = circle_model(-0.5, 400);
        let model = assemble_with_curves(
            &c.curves,
            &c.constants,
            &spectra,
            0.05,
            SigmaMode::Refined,
            None,
        )
        .unwrap();
        let neg_sigma = model
            .entries
            .iter()
            .filter(|e| e.branch == BranchKind::Sigma && e.value < 0.0)
            .count();
        let neg_mu = spectra.mu.iter().filter(|&&m| m < 0.0).count();
        assert_eq!(neg_sigma, neg_mu);
    }

    #[test]
    fn eta_branch_values_are_monotone_in_epsilon() {
        let c = ctx();
        let rho_j = 36.0;
        let mut prev = f64::MIN;
        for i in 0..40 {
            let eps = 0.002 + 0.004 * i as f64;
            let v = c.curves.eta(eps * eps * rho_j);
            assert!(v >= prev - 1e-12, "eta branch dipped at eps = {eps}");
            prev = v;
        }
    }

    #[test]
    fn short_spectra_are_rejected() {
        let c = ctx();
        let spectra = circle_model(0.5, 3);
        match assemble_with_curves(
            &c.curves,
            &c.constants,
            &spectra,
            0.05,
            SigmaMode::Refined,
            None,
        ) {
            Err(ModelError::SpectraTooShort { .. }) => {}
            other => panic!("expected SpectraTooShort, got {other:?}"),
        }
    }

    #[test]
    fn single_mode_spectrum_has_unit_morse_index() {
        let c = ctx();
        // A one-mode model constructed directly: only rho_0 = 0, whose eta
        // value is eta(0) < 0, plus one positive sigma entry.
        let model = ModelSpectrum {
            epsilon: 0.05,
            entries: vec![
                SpectrumEntry {
                    value: c.curves.eta(0.0),
                    branch: BranchKind::Eta,
                    source_index: 0,
                    source_eigenvalue: 0.0,
                },
                SpectrumEntry {
                    value: 0.05 * 0.05 * c.constants.c0 * 0.5 / c.constants.c1,
                    branch: BranchKind::Sigma,
                    source_index: 0,
                    source_eigenvalue: 0.5,
                },
            ],
            threshold: c.curves.default_threshold(),
            sigma_mode: SigmaMode::Refined,
            discarded: 0,
        };
        assert_eq!(morse_index(&model), 1);
    }

    #[test]
    fn morse_counts_track_the_weyl_prediction() {
        let c = ctx();
        let spectra = circle_model(0.5, 1400);
        let eps_list = [0.04, 0.02, 0.01, 0.005];
        let rep = morse_report(&c.curves, &c.constants, &spectra, &eps_list).unwrap();
        // Circle of circumference 2 pi with C_1 = pi^2: Theta = 2 sqrt(abar).
        let expect = 2.0 * c.curves.alpha_bar().alpha_bar.sqrt();
        assert_relative_eq!(rep.theta, expect, max_relative = 2e-2);
        let last = *rep.ratios.last().unwrap();
        assert!((last - 1.0).abs() < 0.1, "final Morse ratio {last}");
        // Counts are exactly the negative-eta counts 1 + 2 floor(sqrt(abar)/eps).
        let abar = c.curves.alpha_bar().alpha_bar;
        for (&eps, &count) in eps_list.iter().zip(&rep.counts) {
            let predict = 1 + 2 * ((abar.sqrt() / eps).floor() as usize);
            assert_eq!(count, predict, "count mismatch at eps = {eps}");
        }
    }

    #[test]
    fn gap_scaling_matches_the_two_resonance_exponents() {
        let c = ctx();
        let spectra = circle_model(0.5, 4000);
        let eps_list = [0.02, 0.01, 0.005, 0.0025];
        let scaling = gap_scaling(&c.curves, &c.constants, &spectra, &eps_list).unwrap();
        assert!(
            (scaling.eta_gap_slope - 1.0).abs() < 0.2,
            "eta gap slope {}",
            scaling.eta_gap_slope
        );
        assert!(
            (scaling.sigma_min_slope - 2.0).abs() < 0.1,
            "sigma min slope {}",
            scaling.sigma_min_slope
        );
        // Refined sigma minimum is the closed form eps^2 C0 min|mu| / C1.
        for (&eps, &m) in eps_list.iter().zip(&scaling.sigma_minima) {
            let expect = eps * eps * c.constants.c0 * 0.5 / c.constants.c1;
            assert_relative_eq!(m, expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn degenerate_sigma_mode_is_flagged() {
        let c = ctx();
        let spectra = circle_model(-1.0, 600);
        let rep = gap_report(&c.curves, &c.constants, &spectra, 0.02, None).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.sigma_min_abs, Some(0.0));
    }

    #[test]
    fn sweep_finds_admissible_intervals_and_excludes_crossings() {
        let c = ctx();
        let spectra = circle_model(1.0, 3000);
        let abar = c.curves.alpha_bar().alpha_bar;

        // Two dyadic blocks, each must contain an admissible interval.
        for l in [4, 5] {
            let lo = 0.5f64.powi(l + 1);
            let hi = 0.5f64.powi(l);
            let intervals =
                invertibility_sweep(&c.curves, &c.constants, &spectra, lo, hi, 400, 0.02).unwrap();
            assert!(!intervals.is_empty());
            for iv in &intervals {
                assert!(iv.score >= 0.02);
                assert!(iv.lo <= iv.eps_star && iv.eps_star <= iv.hi);
            }
        }

        // An exact eta-branch crossing scores near zero and is excluded.
        let m = 40.0f64;
        let eps_cross = (abar / (m * m)).sqrt();
        let score = invertibility_score(&c.curves, &c.constants, &spectra, eps_cross).unwrap();
        assert!(score < 0.02, "score at a crossing = {score}");

        match invertibility_sweep(&c.curves, &c.constants, &spectra, 0.02, 0.04, 150, 10.0) {
            Err(ModelError::NoAdmissibleEpsilon { .. }) => {}
            other => panic!("expected NoAdmissibleEpsilon, got {other:?}"),
        }
    }

    #[test]
    fn sweep_intervals_match_dense_score_sampling() {
        let c = ctx();
        let spectra = circle_model(0.5, 3000);
        let (lo, hi) = (0.024f64, 0.028);
        let threshold = 0.05;
        let intervals =
            invertibility_sweep(&c.curves, &c.constants, &spectra, lo, hi, 200, threshold)
                .unwrap();

        // Brute force: uniform sampling fine enough to land several points
        // inside each sub-threshold resonance well.
        let n = 20_000usize;
        let step = (hi - lo) / n as f64;
        let scores: Vec<f64> = (0..=n)
            .map(|i| {
                invertibility_score(&c.curves, &c.constants, &spectra, lo + step * i as f64)
                    .unwrap()
            })
            .collect();
        let mut runs = Vec::new();
        let mut start: Option<usize> = None;
        for i in 0..=n + 1 {
            let ok = i <= n && scores[i] >= threshold;
            match (ok, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((lo + step * s as f64, lo + step * (i - 1) as f64));
                    start = None;
                }
                _ => {}
            }
        }
        assert_eq!(intervals.len(), runs.len(), "interval count vs dense oracle");
        for (iv, run) in intervals.iter().zip(&runs) {
            assert!(
                (iv.lo - run.0).abs() <= 2.0 * step,
                "lo {} vs dense {}",
                iv.lo,
                run.0
            );
            assert!(
                (iv.hi - run.1).abs() <= 2.0 * step,
                "hi {} vs dense {}",
                iv.hi,
                run.1
            );
        }
    }

    #[test]
    fn derivative_flow_is_consistent_and_j_independent() {
        let c = ctx();
        let spectra = circle_model(0.5, 3000);
        let abar = c.curves.alpha_bar().alpha_bar;
        let expect_f = 2.0 * abar * c.curves.alpha_bar().eta_slope;

        let mut f_values = Vec::new();
        for m in [30usize, 60, 100] {
            // Index of the first copy of mode m in the multiplicity-expanded
            // rho list: 0, 1, 1, 4, 4, ... puts m^2 at index 2m - 1.
            let j = 2 * m - 1;
            assert_eq!(spectra.rho[j], (m * m) as f64);
            let rep = kato_flow(&c.curves, &spectra, j, 0.01, 0.2).unwrap();
            assert!(rep.max_rel_mismatch < 0.01, "mismatch {}", rep.max_rel_mismatch);
            assert!(rep.dlambda_chain.iter().all(|&d| d > 0.0));
            assert!(rep.f_bar_model > 0.0);
            assert_relative_eq!(rep.f_bar_model, expect_f, max_relative = 1e-3);
            f_values.push(rep.f_bar_model);
        }
        for w in f_values.windows(2) {
            assert_relative_eq!(w[0], w[1], max_relative = 1e-3);
        }

        match kato_flow(&c.curves, &spectra, 0, 0.01, 0.2) {
            Err(ModelError::NoCrossing { .. }) => {}
            other => panic!("expected NoCrossing for rho = 0, got {other:?}"),
        }
        match kato_flow(&c.curves, &spectra, 1, 0.5, 0.9) {
            Err(ModelError::NoCrossing { eps_star }) => assert!(eps_star > 0.9),
            other => panic!("expected NoCrossing outside range, got {other:?}"),
        }
    }
}
