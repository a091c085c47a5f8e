//! Command-line front end: reads a TOML run configuration, dispatches one
//! subcommand, and writes that command's CSV/JSON artifacts plus a run
//! manifest (config echo, toolkit version, phase timings) into the output
//! directory.
//!
//! Exit codes: 0 on success, 1 on validation failure (bad flags, bad or
//! missing config keys, inputs outside documented ranges), 2 on numerical
//! failure propagated from the library.

mod config;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use spikeband::corrector::{projection_identities, residual_order_test, w1_solve, GeometryData};
use spikeband::fiber_spectrum::{
    eta, find_alpha_bar, sigma, tau, FiberBoundary, FiberDomain,
};
use spikeband::geometry::{
    build_spectra, circle_spectrum, flat_torus_spectrum, weyl_check, SubmanifoldSpectra,
    WhichSpectrum,
};
use spikeband::ground_state::{
    compute_constants, decay_diagnostics, solve_profile, ProblemParams, RadialProfile,
};
use spikeband::io::{fmt_f64, to_json_pretty, write_csv, write_profile_csv, ConstantsRecord};
use spikeband::model_operator::{
    assemble_with_curves, gap_scaling, invertibility_sweep, kato_flow, morse_index, morse_report,
    BranchCurves, BranchKind, ModelError, SigmaMode,
};

#[derive(Parser)]
#[command(
    name = "spikeband",
    version,
    about = "Spectral toolkit runner: ground states, eigenvalue branches, model spectra"
)]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the radial profile and export it with its constants.
    GroundState,
    /// Sweep the fiber branches eta, sigma, tau over alpha.
    Branches,
    /// Locate the resonance threshold where eta crosses zero.
    AlphaBar,
    /// Assemble the model spectrum below the cutoff at one epsilon.
    ModelSpectrum,
    /// Count negative modes across an epsilon sweep.
    Morse,
    /// Near-zero gap statistics and their scaling exponents.
    Gaps,
    /// Scan epsilon for intervals where the model operator is invertible.
    Sweep,
    /// Eigenvalue flow in epsilon near a resonance crossing.
    Kato,
    /// Solve the first-order corrector and check residual orders.
    Corrector,
    /// Projection identities of the corrector right-hand side.
    Identities,
    /// Counting-law fit for the configured base spectrum.
    Weyl,
    /// Recompute reference values on forced high-resolution grids.
    RegenGolden,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GroundState => "ground-state",
            Command::Branches => "branches",
            Command::AlphaBar => "alpha-bar",
            Command::ModelSpectrum => "model-spectrum",
            Command::Morse => "morse",
            Command::Gaps => "gaps",
            Command::Sweep => "sweep",
            Command::Kato => "kato",
            Command::Corrector => "corrector",
            Command::Identities => "identities",
            Command::Weyl => "weyl",
            Command::RegenGolden => "regen-golden",
        }
    }
}

enum CliError {
    Validation(String),
    Numerical(String),
}

macro_rules! numerical_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Numerical(e.to_string())
            }
        }
    )*};
}
numerical_from!(
    spikeband::ground_state::GroundStateError,
    spikeband::fiber_spectrum::FiberError,
    spikeband::geometry::GeometryError,
    spikeband::model_operator::ModelError,
    spikeband::corrector::CorrectorError,
    spikeband::io::IoError,
    std::io::Error
);

fn main() {
    let code = match real_main() {
        Ok(()) => 0,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            2
        }
    };
    std::process::exit(code);
}

fn real_main() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let line = e
                .render()
                .to_string()
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .to_string();
            return Err(CliError::Validation(line));
        }
    };
    let config_path = cli
        .config
        .ok_or_else(|| CliError::Validation("missing required flag --config <PATH>".into()))?;
    let config = config::load(&config_path, &cli.set).map_err(CliError::Validation)?;
    let mut run = Run {
        config,
        command: cli.command,
        timings: BTreeMap::new(),
        started: Instant::now(),
    };
    run.dispatch()
}

struct Run {
    config: config::RunConfig,
    command: Command,
    timings: BTreeMap<String, f64>,
    started: Instant,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    command: &'static str,
    config: &'a config::RunConfig,
    timings_ms: &'a BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct SpectrumSummary {
    epsilon: f64,
    threshold: f64,
    sigma_mode: String,
    base_count: usize,
    entry_count: usize,
    discarded: usize,
    morse_index: usize,
}

#[derive(Serialize)]
struct CorrectorSummary {
    r: f64,
    step: f64,
    n1: usize,
    n2: usize,
    kernel_coeff: f64,
    solver_residual: f64,
}

#[derive(Serialize)]
struct SweepRecord {
    eps_lo: f64,
    eps_hi: f64,
    samples: usize,
    c: f64,
    intervals: Vec<spikeband::model_operator::SweepInterval>,
}

#[derive(Serialize)]
struct GoldenValues {
    p: f64,
    d: usize,
    w0_zero: f64,
    c0: f64,
    c1: f64,
    alpha_bar: f64,
    eta_slope: f64,
    f_bar_model: f64,
    profile_step: f64,
    fiber_step: f64,
    r_max: f64,
    fiber_r_max: f64,
}

impl Run {
    fn dispatch(&mut self) -> Result<(), CliError> {
        match self.command {
            Command::GroundState => self.cmd_ground_state(),
            Command::Branches => self.cmd_branches(),
            Command::AlphaBar => self.cmd_alpha_bar(),
            Command::ModelSpectrum => self.cmd_model_spectrum(),
            Command::Morse => self.cmd_morse(),
            Command::Gaps => self.cmd_gaps(),
            Command::Sweep => self.cmd_sweep(),
            Command::Kato => self.cmd_kato(),
            Command::Corrector => self.cmd_corrector(),
            Command::Identities => self.cmd_identities(),
            Command::Weyl => self.cmd_weyl(),
            Command::RegenGolden => self.cmd_regen_golden(),
        }
    }

    fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings
            .insert(label.to_string(), t.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn params(&self) -> Result<ProblemParams, CliError> {
        ProblemParams::new(self.config.problem.p, self.config.problem.d)
            .map_err(|e| CliError::Validation(e.to_string()))
    }

    fn profile(&mut self) -> Result<RadialProfile, CliError> {
        let params = self.params()?;
        let s = self.config.solver.clone();
        Ok(self.time("profile", || {
            solve_profile(params, s.r_max, s.step, s.shoot_tol)
        })?)
    }

    fn domain(&self) -> FiberDomain {
        let s = &self.config.solver;
        FiberDomain::new(s.fiber_r_max, s.fiber_step, FiberBoundary::Decay, s.gamma)
    }

    fn curves(&mut self, profile: &RadialProfile) -> Result<BranchCurves, CliError> {
        let domain = self.domain();
        Ok(self.time("curves", || BranchCurves::build(profile, &domain))?)
    }

    fn spectra_with_count(&self, count: usize) -> Result<SubmanifoldSpectra, CliError> {
        let m = &self.config.model;
        let base = match m.kind.as_str() {
            "circle" => circle_spectrum(m.length, count),
            "torus" => flat_torus_spectrum(&m.lengths, count),
            "file" => {
                let path = m.spectra_file.as_ref().expect("validated");
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Validation(format!("cannot read spectra file {path}: {e}"))
                })?;
                let mut spectra: SubmanifoldSpectra = serde_json::from_str(&text)
                    .map_err(|e| CliError::Validation(format!("spectra file {path}: {e}")))?;
                spectra.refresh_min_mu();
                return Ok(spectra);
            }
            _ => unreachable!("validated"),
        };
        Ok(build_spectra(&base, m.normal_rank, m.kappa))
    }

    fn spectra(&mut self) -> Result<SubmanifoldSpectra, CliError> {
        let t = Instant::now();
        let out = self.spectra_with_count(self.config.model.count);
        self.timings
            .insert("spectra".to_string(), t.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn sigma_mode(&self) -> SigmaMode {
        match self.config.spectrum.sigma_mode.as_str() {
            "fiber" => SigmaMode::Fiber,
            _ => SigmaMode::Refined,
        }
    }

    fn eps_list(&self, min_len: usize) -> Result<Vec<f64>, CliError> {
        let list = &self.config.sweep.eps_list;
        if list.len() < min_len {
            return Err(CliError::Validation(format!(
                "sweep.eps_list needs at least {min_len} entries for {}",
                self.command.name()
            )));
        }
        Ok(list.clone())
    }

    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = PathBuf::from(&self.config.output.dir);
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn write_json<T: Serialize>(&self, dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
        let mut f = std::fs::File::create(dir.join(name))?;
        f.write_all(to_json_pretty(value).as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    fn write_rows(
        &self,
        dir: &Path,
        name: &str,
        header: &[&str],
        rows: &[Vec<f64>],
    ) -> Result<(), CliError> {
        let mut f = std::fs::File::create(dir.join(name))?;
        write_csv(&mut f, header, rows)?;
        Ok(())
    }

    /// Manifest and config echo; called last so the timings are complete.
    fn finish(&mut self, dir: &Path) -> Result<(), CliError> {
        self.timings.insert(
            "total".to_string(),
            self.started.elapsed().as_secs_f64() * 1e3,
        );
        let manifest = Manifest {
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.name(),
            config: &self.config,
            timings_ms: &self.timings,
        };
        let mut f = std::fs::File::create(dir.join("manifest.json"))?;
        f.write_all(to_json_pretty(&manifest).as_bytes())?;
        f.write_all(b"\n")?;
        let echo = toml::to_string_pretty(&self.config)
            .map_err(|e| CliError::Numerical(format!("config echo: {e}")))?;
        std::fs::write(dir.join("config.toml"), echo)?;
        Ok(())
    }

    fn cmd_ground_state(&mut self) -> Result<(), CliError> {
        let profile = self.profile()?;
        let constants = self.time("constants", || compute_constants(&profile));
        let decay = decay_diagnostics(&profile)?;
        let dir = self.out_dir()?;
        let mut f = std::fs::File::create(dir.join("profile.csv"))?;
        write_profile_csv(&mut f, &profile)?;
        self.write_json(
            &dir,
            "constants.json",
            &ConstantsRecord::new(profile.params, &profile, &constants),
        )?;
        self.write_json(&dir, "decay.json", &decay)?;
        self.finish(&dir)
    }

    fn cmd_branches(&mut self) -> Result<(), CliError> {
        let profile = self.profile()?;
        let domain = self.domain();
        let w = self.config.sweep.clone();
        let rows = self.time("branch-sweep", || -> Result<Vec<Vec<f64>>, CliError> {
            let mut rows = Vec::with_capacity(w.alpha_count);
            for i in 0..w.alpha_count {
                let alpha = w.alpha_max * i as f64 / (w.alpha_count - 1) as f64;
                rows.push(vec![
                    alpha,
                    eta(&profile, alpha, &domain)?,
                    sigma(&profile, alpha, &domain)?,
                    tau(&profile, alpha, &domain)?,
                ]);
            }
            Ok(rows)
        })?;
        let dir = self.out_dir()?;
        self.write_rows(&dir, "branches.csv", &["alpha", "eta", "sigma", "tau"], &rows)?;
        self.finish(&dir)
    }

    fn cmd_alpha_bar(&mut self) -> Result<(), CliError> {
        let profile = self.profile()?;
        let domain = self.domain();
        let tol = self.config.solver.alpha_tol;
        let root = self.time("root", || find_alpha_bar(&profile, None, tol, &domain))?;
        let dir = self.out_dir()?;
        self.write_json(&dir, "alpha_bar.json", &root)?;
        self.finish(&dir)
    }

    fn cmd_model_spectrum(&mut self) -> Result<(), CliError> {
        let profile = self.profile()?;
        let constants = compute_constants(&profile);
        let curves = self.curves(&profile)?;
        let mut spectra = self.spectra()?;
        let mut count = self.config.model.count;
        let epsilon = self.config.sweep.epsilon;
        let mode = self.sigma_mode();
        let threshold = self.config.spectrum.threshold;
        let can_extend = self.config.model.kind != "file";
        let t = Instant::now();
        let model = {
            let mut attempts = 0;
            loop {
                match assemble_with_curves(&curves, &constants, &spectra, epsilon, mode, threshold)
                {
                    Ok(model) => break model,
                    Err(ModelError::SpectraTooShort { .. }) if can_extend && attempts < 6 => {
                        attempts += 1;
                        count *= 2;
                        spectra = self.spectra_with_count(count)?;
                    }
                    Err(e) => return Err(CliError::from(e)),
                }
            }
        };
        self.timings
            .insert("assemble".to_string(), t.elapsed().as_secs_f64() * 1e3);
        let dir = self.out_dir()?;
        let mut f = std::fs::File::create(dir.join("spectrum.csv"))?;
        writeln!(f, "value,branch,source_index,source_eigenvalue")?;
        for e in &model.entries {
            let branch = match e.branch {
                BranchKind::Eta => "eta",
                BranchKind::Sigma => "sigma",
            };
            writeln!(
                f,
                "{},{branch},{},{}",
                fmt_f64(e.value),
                e.source_index,
                fmt_f64(e.source_eigenvalue)
            )?;
        }
        self.write_json(
            &dir,
            "spectrum.json",
            &SpectrumSummary {
                epsilon,
                threshold: model.threshold,
                sigma_mode: self.config.spectrum.sigma_mode.clone(),
                base_count: count,
                entry_count: model.entries.len(),
                discarded: model.discarded,
                morse_index: morse_index(&model),
            },
        )?;
        self.finish(&dir)
    }

    fn cmd_morse(&mut self) -> Result<(), CliError> {
        let eps = self.eps_list(1)?;
        let profile = self.profile()?;
        let constants = compute_constants(&profile);
        let curves = self.curves(&profile)?;
        let spectra = self.spectra()?;
        let report = self.time("counts", || {
            morse_report(&curves, &constants, &spectra, &eps)
        })?;
        let dir = self.out_dir()?;
        let mut f = std::fs::File::create(dir.join("morse.csv"))?;
        writeln!(f, "epsilon,count,ratio")?;
        for i in 0..report.epsilons.len() {
            writeln!(
                f,
                "{},{},{}",
                fmt_f64(report.epsilons[i]),
                report.counts[i],
                fmt_f64(report.ratios[i])
            )?;
        }
        self.write_json(&dir, "morse.json", &report)?;
        self.finish(&dir)
    }

    fn cmd_gaps(&mut self) -> Result<(), CliError> {
        let eps = self.eps_list(2)?;
        let profile = self.profile()?;
        let constants = compute_constants(&profile);
        let curves = self.curves(&profile)?;
        let spectra = self.spectra()?;
        let scaling = self.time("gap-sweep", || {
            gap_scaling(&curves, &constants, &spectra, &eps)
        })?;
        let dir = self.out_dir()?;
        let rows: Vec<Vec<f64>> = (0..scaling.epsilons.len())
            .map(|i| {
                vec![
                    scaling.epsilons[i],
                    scaling.median_eta_gaps[i],
                    scaling.sigma_minima[i],
                ]
            })
            .collect();
        self.write_rows(
            &dir,
            "gaps.csv",
            &["epsilon", "median_eta_gap", "sigma_min_abs"],
            &rows,
        )?;
        self.write_json(&dir, "gaps.json", &scaling)?;
        self.finish(&dir)
    }

    fn cmd_sweep(&mut self) -> Result<(), CliError> {
        let profile = self.profile()?;
        let constants = compute_constants(&profile);
        let curves = self.curves(&profile)?;
        let spectra = self.spectra()?;
        let w = self.config.sweep.clone();
        let intervals = self.time("scan", || {
            invertibility_sweep(
                &curves, &constants, &spectra, w.eps_lo, w.eps_hi, w.samples, w.c,
            )
        })?;
        let dir = self.out_dir()?;
        let rows: Vec<Vec<f64>> = intervals
            .iter()
            .map(|iv| vec![iv.lo, iv.hi, iv.eps_star, iv.score])
            .collect();
        self.write_rows(&dir, "sweep.csv", &["lo", "hi", "eps_star", "score"], &rows)?;
        self.write_json(
            &dir,
            "sweep.json",
            &SweepRecord {
                eps_lo: w.eps_lo,
                eps_hi: w.eps_hi,
                samples: w.samples,
                c: w.c,
                intervals,
            },
        )?;
        self.finish(&dir)
    }

    fn cmd_kato(&mut self) -> Result<(), CliError> {
        let profile = self.profile()?;
        let curves = self.curves(&profile)?;
        let spectra = self.spectra()?;
        let w = self.config.sweep.clone();
        if w.branch_index >= spectra.rho.len() {
            return Err(CliError::Validation(format!(
                "sweep.branch_index {} exceeds the {} base eigenvalues",
                w.branch_index,
                spectra.rho.len()
            )));
        }
        let report = self.time("flow", || {
            kato_flow(&curves, &spectra, w.branch_index, w.eps_lo, w.eps_hi)
        })?;
        let dir = self.out_dir()?;
        let rows: Vec<Vec<f64>> = (0..report.eps_samples.len())
            .map(|i| {
                vec![
                    report.eps_samples[i],
                    report.dlambda_chain[i],
                    report.dlambda_fd[i],
                ]
            })
            .collect();
        self.write_rows(
            &dir,
            "kato.csv",
            &["epsilon", "dlambda_chain", "dlambda_fd"],
            &rows,
        )?;
        self.write_json(&dir, "kato.json", &report)?;
        self.finish(&dir)
    }

    fn cmd_corrector(&mut self) -> Result<(), CliError> {
        if self.config.problem.d != 2 {
            return Err(CliError::Validation(
                "the corrector solve needs problem.d = 2 (one tangent, one normal direction)"
                    .into(),
            ));
        }
        let profile = self.profile()?;
        let co = self.config.corrector.clone();
        let geom = GeometryData::new(
            2,
            vec![co.h11, co.h12, co.h12, co.h22],
            vec![co.gamma],
            vec![0.0],
        );
        let field = self.time("solve", || w1_solve(&profile, &geom, co.r, co.step))?;
        let orders = if self.config.sweep.eps_list.len() >= 4 {
            let eps = self.config.sweep.eps_list.clone();
            Some(self.time("orders", || residual_order_test(&profile, &geom, &field, &eps)))
        } else {
            None
        };
        let dir = self.out_dir()?;
        let grid = &field.grid;
        let mut f = std::fs::File::create(dir.join("corrector.csv"))?;
        writeln!(f, "zeta1,zeta2,w1")?;
        for i in 0..grid.n1 {
            for j in 0..grid.n2 {
                writeln!(
                    f,
                    "{},{},{}",
                    fmt_f64(grid.zeta1(i)),
                    fmt_f64(grid.zeta2(j)),
                    fmt_f64(field.w1[grid.idx(i, j)])
                )?;
            }
        }
        self.write_json(
            &dir,
            "corrector.json",
            &CorrectorSummary {
                r: co.r,
                step: co.step,
                n1: grid.n1,
                n2: grid.n2,
                kernel_coeff: field.kernel_coeff,
                solver_residual: field.solver_residual,
            },
        )?;
        if let Some(orders) = orders {
            self.write_json(&dir, "orders.json", &orders)?;
        }
        self.finish(&dir)
    }

    fn cmd_identities(&mut self) -> Result<(), CliError> {
        let profile = self.profile()?;
        let report = self.time("identities", || projection_identities(&profile));
        let dir = self.out_dir()?;
        self.write_json(&dir, "identities.json", &report)?;
        self.finish(&dir)
    }

    fn cmd_weyl(&mut self) -> Result<(), CliError> {
        let spectra = self.spectra()?;
        let report = self.time("fit", || weyl_check(&spectra, WhichSpectrum::Rho))?;
        let dir = self.out_dir()?;
        let mut f = std::fs::File::create(dir.join("weyl.csv"))?;
        writeln!(f, "index,rho")?;
        for (j, rho) in spectra.rho.iter().enumerate() {
            writeln!(f, "{j},{}", fmt_f64(*rho))?;
        }
        self.write_json(&dir, "weyl.json", &report)?;
        self.write_json(&dir, "spectra.json", &spectra)?;
        self.finish(&dir)
    }

    /// Reference values on forced high-resolution grids: shooting step at
    /// most 1e-5 and a fiber grid refined twice (step / 4).
    fn cmd_regen_golden(&mut self) -> Result<(), CliError> {
        let params = self.params()?;
        let s = self.config.solver.clone();
        let profile_step = s.step.min(1e-5);
        let fiber_step = s.fiber_step / 4.0;
        let profile = self.time("profile", || {
            solve_profile(params, s.r_max, profile_step, s.shoot_tol)
        })?;
        let constants = compute_constants(&profile);
        let domain = FiberDomain::new(s.fiber_r_max, fiber_step, FiberBoundary::Decay, s.gamma);
        let root = self.time("root", || {
            find_alpha_bar(&profile, None, s.alpha_tol.min(1e-10), &domain)
        })?;
        let golden = GoldenValues {
            p: params.p,
            d: params.d,
            w0_zero: profile.w0(),
            c0: constants.c0,
            c1: constants.c1,
            alpha_bar: root.alpha_bar,
            eta_slope: root.eta_slope,
            f_bar_model: 2.0 * root.alpha_bar * root.eta_slope,
            profile_step,
            fiber_step,
            r_max: s.r_max,
            fiber_r_max: s.fiber_r_max,
        };
        let dir = self.out_dir()?;
        self.write_json(&dir, "golden.json", &golden)?;
        self.finish(&dir)
    }
}
