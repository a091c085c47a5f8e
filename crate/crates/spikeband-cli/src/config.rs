//! Run configuration: a flat TOML file with one section per concern, plus
//! `--set section.key=value` overrides applied before deserialization.
//!
//! Every section rejects unknown keys so that a typo fails the run instead
//! of silently falling back to a default.

use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub corrector: CorrectorSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub p: f64,
    pub d: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Radial domain radius for the profile shooting solve.
    pub r_max: f64,
    /// Profile grid step.
    pub step: f64,
    /// Shooting bisection tolerance on the initial height.
    pub shoot_tol: f64,
    /// Radial domain radius for the fiber pencils.
    pub fiber_r_max: f64,
    /// Fiber grid step.
    pub fiber_step: f64,
    /// Truncation exponent (R = eps^-gamma) carried by the fiber domain.
    pub gamma: f64,
    /// Root tolerance for the resonance threshold search.
    pub alpha_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            r_max: 15.0,
            step: 1e-3,
            shoot_tol: 1e-12,
            fiber_r_max: 15.0,
            fiber_step: 1e-2,
            gamma: 0.5,
            alpha_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// "circle", "torus" or "file".
    pub kind: String,
    /// Circle circumference.
    pub length: f64,
    /// Torus side lengths.
    pub lengths: Vec<f64>,
    /// Number of base eigenvalues to enumerate.
    pub count: usize,
    /// Rank of the normal bundle.
    pub normal_rank: usize,
    /// Constant Jacobi shift: mu_l = omega_l + kappa.
    pub kappa: f64,
    /// JSON spectra file, used when kind = "file".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectra_file: Option<String>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: "circle".to_string(),
            length: std::f64::consts::TAU,
            lengths: vec![std::f64::consts::TAU, std::f64::consts::TAU * 1.618033988749895],
            count: 4000,
            normal_rank: 1,
            kappa: 0.5,
            spectra_file: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Single working value of eps (model-spectrum).
    pub epsilon: f64,
    /// Explicit eps list, largest first (morse, gaps, corrector orders).
    pub eps_list: Vec<f64>,
    /// Range endpoints for continuous sweeps (sweep, kato).
    pub eps_lo: f64,
    pub eps_hi: f64,
    /// Geometric sample count for the invertibility sweep.
    pub samples: usize,
    /// Admissibility constant: a sample is kept when score >= c.
    pub c: f64,
    /// Base eigenvalue index tracked by the kato command.
    pub branch_index: usize,
    /// Alpha range for the branches command.
    pub alpha_max: f64,
    pub alpha_count: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            epsilon: 0.05,
            eps_list: vec![0.02, 0.01, 0.005],
            eps_lo: 0.004,
            eps_hi: 0.032,
            samples: 400,
            c: 0.05,
            branch_index: 1,
            alpha_max: 6.0,
            alpha_count: 121,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// "refined" or "fiber".
    pub sigma_mode: String,
    /// Spectral cutoff; defaults to tau(0)/4 when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Near-zero window for gap statistics; defaults to 10 eps^min(2,k).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            sigma_mode: "refined".to_string(),
            threshold: None,
            window: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectorSection {
    /// Half-plane radius.
    pub r: f64,
    /// Grid step.
    pub step: f64,
    /// Second fundamental form entries (symmetric 2x2).
    pub h11: f64,
    pub h12: f64,
    pub h22: f64,
    /// Base connection coefficient (enters the metric terms only).
    pub gamma: f64,
}

impl Default for CorrectorSection {
    fn default() -> Self {
        CorrectorSection {
            r: 12.0,
            step: 0.08,
            h11: 4.0,
            h12: 0.0,
            h22: 3.0,
            gamma: 0.3,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".to_string(),
        }
    }
}

/// Parse the config file, apply `--set section.key=value` overrides, then
/// deserialize and range-check. Every failure is a one-line message.
pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    // `message()` keeps the diagnostics to one line (no span rendering).
    let mut value: toml::Value = text
        .parse()
        .map_err(|e: toml::de::Error| format!("config parse error: {}", e.message()))?;
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let config: RunConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| format!("config error: {}", e.message()))?;
    validate(&config)?;
    Ok(config)
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), String> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override '{spec}' is not of the form section.key=value"))?;
    let (section, key) = path
        .split_once('.')
        .ok_or_else(|| format!("override key '{path}' is not of the form section.key"))?;
    // Parse the right-hand side with the TOML value grammar; fall back to a
    // bare string so unquoted names like `circle` stay usable.
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Value>() {
        Ok(doc) => doc["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let table = root
        .as_table_mut()
        .ok_or_else(|| "config root is not a table".to_string())?;
    let entry = table
        .entry(section)
        .or_insert_with(|| toml::Value::Table(Default::default()));
    let section_table = entry
        .as_table_mut()
        .ok_or_else(|| format!("config section '{section}' is not a table"))?;
    section_table.insert(key.to_string(), parsed);
    Ok(())
}

fn validate(c: &RunConfig) -> Result<(), String> {
    fn ensure(cond: bool, msg: &str) -> Result<(), String> {
        if cond {
            Ok(())
        } else {
            Err(msg.to_string())
        }
    }
    ensure(c.problem.p > 1.0, "problem.p must exceed 1")?;
    ensure(c.problem.d >= 1, "problem.d must be at least 1")?;

    let s = &c.solver;
    ensure(s.r_max >= 10.0, "solver.r_max must be at least 10")?;
    ensure(s.step > 0.0 && s.step <= 1e-2, "solver.step must lie in (0, 1e-2]")?;
    ensure(
        s.shoot_tol > 0.0 && s.shoot_tol <= 1e-8,
        "solver.shoot_tol must lie in (0, 1e-8]",
    )?;
    ensure(s.fiber_r_max >= 10.0, "solver.fiber_r_max must be at least 10")?;
    ensure(
        s.fiber_step > 0.0 && s.fiber_r_max / s.fiber_step >= 501.0,
        "solver.fiber_step must give at least 500 fiber nodes",
    )?;
    ensure(s.gamma > 0.0 && s.gamma < 1.0, "solver.gamma must lie in (0, 1)")?;
    ensure(
        s.alpha_tol > 0.0 && s.alpha_tol <= 1e-6,
        "solver.alpha_tol must lie in (0, 1e-6]",
    )?;

    let m = &c.model;
    match m.kind.as_str() {
        "circle" => ensure(m.length > 0.0, "model.length must be positive")?,
        "torus" => {
            ensure(!m.lengths.is_empty(), "model.lengths must be non-empty")?;
            ensure(
                m.lengths.iter().all(|&l| l > 0.0),
                "model.lengths must all be positive",
            )?;
        }
        "file" => ensure(
            m.spectra_file.is_some(),
            "model.kind = \"file\" requires model.spectra_file",
        )?,
        other => return Err(format!("model.kind '{other}' is not circle, torus or file")),
    }
    ensure(m.count >= 8, "model.count must be at least 8")?;
    ensure(m.normal_rank >= 1, "model.normal_rank must be at least 1")?;

    let w = &c.sweep;
    ensure(w.epsilon > 0.0, "sweep.epsilon must be positive")?;
    ensure(
        w.eps_list.iter().all(|&e| e > 0.0),
        "sweep.eps_list entries must be positive",
    )?;
    ensure(
        w.eps_list.windows(2).all(|p| p[1] < p[0]),
        "sweep.eps_list must be strictly decreasing",
    )?;
    ensure(
        w.eps_lo > 0.0 && w.eps_hi > w.eps_lo,
        "sweep.eps_lo/eps_hi must satisfy 0 < lo < hi",
    )?;
    ensure(w.samples >= 100, "sweep.samples must be at least 100")?;
    ensure(w.c > 0.0, "sweep.c must be positive")?;
    ensure(
        w.alpha_max > 0.0 && w.alpha_count >= 2,
        "sweep.alpha_max/alpha_count must give a real sweep",
    )?;

    let sp = &c.spectrum;
    ensure(
        sp.sigma_mode == "refined" || sp.sigma_mode == "fiber",
        "spectrum.sigma_mode must be refined or fiber",
    )?;
    if let Some(t) = sp.threshold {
        ensure(t > 0.0, "spectrum.threshold must be positive")?;
    }
    if let Some(win) = sp.window {
        ensure(win > 0.0, "spectrum.window must be positive")?;
    }

    let co = &c.corrector;
    ensure(co.step > 0.0, "corrector.step must be positive")?;
    ensure(
        co.r / co.step >= 8.0,
        "corrector.r must span at least 8 grid steps",
    )?;
    ensure(c.output.dir != "/", "output.dir must not be the filesystem root")?;
    Ok(())
}
