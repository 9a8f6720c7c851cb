use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use stefan_core::eigen::{self, FieldPair, GrowthReport, SpectralNorms};
use stefan_core::stefan::{
    fit_circle, fit_exponential, initial, predict_limit_circle, ExpFit, LimitCircle, LimitInput, SimConfig, Simulation,
    TrajectorySample,
};
use stefan_core::verify::{self, VerifyOptions};
use stefan_core::StefanError;

use crate::error::CliError;
use crate::output::{self, CheckLine};

/// Escape threshold θ₀ of the growth diagnostics.
pub const THETA0: f64 = 0.05;
/// Weight of the random part of the unstable initial datum.
pub const PERTURBATION: f64 = 0.3;
/// Largest wave number perturbed by the generic stable datum.
pub const GENERIC_KMAX: usize = 4;

pub fn load_config(path: &Path) -> Result<SimConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg: SimConfig = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub struct Outcome {
    pub checks: Vec<CheckLine>,
    pub failures: usize,
}

impl Outcome {
    fn new() -> Self {
        Self {
            checks: Vec::new(),
            failures: 0,
        }
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        println!("{} {name}: {detail}", if passed { "ok  " } else { "FAIL" });
        if !passed {
            self.failures += 1;
        }
        self.checks.push(CheckLine {
            name: name.into(),
            passed,
            detail,
        });
    }
}

#[derive(Debug, Serialize)]
struct EigenSummary {
    rstar: f64,
    zeta: f64,
    stable: bool,
    lambda0_dispersion: Option<f64>,
    lambda0_rayleigh: Option<f64>,
    relative_agreement: Option<f64>,
    fhat: Option<f64>,
}

/// Radial resolution of the variational estimate in `eigen`.
const RAYLEIGH_N: usize = 2048;
const AGREEMENT_TOL: f64 = 1e-4;

pub fn cmd_eigen(cfg: &SimConfig, dir: &Path) -> Result<Outcome, CliError> {
    let mut out = Outcome::new();
    let zeta = eigen::zeta(cfg.rstar);
    println!("zeta(R* = {}) = {zeta:.6e}", cfg.rstar);
    let mode = eigen::find_lambda0(cfg.rstar)?;
    let summary = match mode {
        None => {
            println!("stable: zeta > 0, no positive eigenvalue");
            out.check(
                "sign_dichotomy",
                zeta > 0.0,
                format!("no positive root, zeta = {zeta:.3e}"),
            );
            EigenSummary {
                rstar: cfg.rstar,
                zeta,
                stable: true,
                lambda0_dispersion: None,
                lambda0_rayleigh: None,
                relative_agreement: None,
                fhat: None,
            }
        }
        Some(mode) => {
            let ray = eigen::rayleigh_min(cfg.rstar, RAYLEIGH_N)?;
            let rel = (ray.lambda0 - mode.lambda).abs() / mode.lambda;
            println!(
                "unstable: lambda0 = {:.10} (dispersion), {:.10} (Rayleigh, n = {RAYLEIGH_N})",
                mode.lambda, ray.lambda0
            );
            out.check(
                "sign_dichotomy",
                zeta < 0.0,
                format!("positive root, zeta = {zeta:.3e}"),
            );
            out.check(
                "method_agreement",
                rel < AGREEMENT_TOL,
                format!("relative difference {rel:.3e} (tolerance {AGREEMENT_TOL:e})"),
            );
            let rows: Vec<Vec<f64>> = mode.table.iter().step_by(4).map(|&(r, v, d)| vec![r, v, d]).collect();
            output::write_table(
                &dir.join("mode_profile.csv"),
                &["r", "v", "dv"].map(String::from),
                &rows,
            )?;
            EigenSummary {
                rstar: cfg.rstar,
                zeta,
                stable: false,
                lambda0_dispersion: Some(mode.lambda),
                lambda0_rayleigh: Some(ray.lambda0),
                relative_agreement: Some(rel),
                fhat: Some(mode.fhat),
            }
        }
    };
    output::write_json(&dir.join("eigen.json"), &summary)?;
    Ok(out)
}

pub fn cmd_dispersion_scan(cfg: &SimConfig, kmax: usize, dir: &Path) -> Result<Outcome, CliError> {
    let lmax = eigen::LAMBDA_MAX;
    let mut rows = Vec::new();
    let mut width = 0;
    for k in 0..=kmax {
        let p = eigen::DispersionProblem::new(k, cfg.rstar)?;
        let mut roots = p.roots(-lmax, -1e-6, 2000)?;
        roots.extend(p.roots(1e-6, lmax, 400)?);
        println!("k = {k}: {} roots in [-{lmax}, {lmax}]", roots.len());
        width = width.max(roots.len());
        let mut row = vec![k as f64];
        row.extend(roots);
        rows.push(row);
    }
    let mut header = vec!["k".to_string()];
    header.extend((1..=width).map(|i| format!("lambda_root_{i}")));
    output::write_table(&dir.join("dispersion_scan.csv"), &header, &rows)?;
    Ok(Outcome::new())
}

#[derive(Debug, Serialize)]
struct StableSummary {
    e0_fit: Option<ExpFit>,
    predicted: LimitCircle,
    attained: (f64, f64, f64),
    center_error: f64,
    radius_error: f64,
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    t_final: f64,
    steps: usize,
    zeta: f64,
    max_drift: (f64, f64, f64),
    origin_flux: (f64, f64),
    stable: Option<StableSummary>,
    growth: Option<GrowthReport>,
    growth_note: Option<String>,
    aborted: Option<String>,
}

struct Run {
    samples: Vec<TrajectorySample>,
    pairs: Vec<(f64, FieldPair)>,
    sim: Simulation,
    aborted: Option<StefanError>,
}

fn default_every(cfg: &SimConfig) -> usize {
    let steps = (cfg.t_end / cfg.dt).round().max(1.0) as usize;
    steps.div_ceil(1000).max(1)
}

fn run_sim(sim: Simulation, every: usize, record_pairs: bool, kcut: usize) -> Result<Run, CliError> {
    let mut run = Run {
        samples: Vec::new(),
        pairs: Vec::new(),
        sim,
        aborted: None,
    };
    let record = |run: &mut Run| -> Result<(), StefanError> {
        run.samples.push(run.sim.sample()?);
        if record_pairs {
            let w = initial::to_pair_w(run.sim.grid(), &run.sim.field, &run.sim.state)?;
            run.pairs.push((
                run.sim.t,
                FieldPair {
                    w,
                    f: run.sim.state.f.with_cutoff(kcut),
                },
            ));
        }
        Ok(())
    };
    record(&mut run)?;
    let n = (run.sim.cfg.t_end / run.sim.cfg.dt).round() as usize;
    for s in 1..=n {
        if let Err(e) = run.sim.step().and_then(|_| {
            if s % every == 0 || s == n {
                record(&mut run)
            } else {
                Ok(())
            }
        }) {
            run.aborted = Some(e);
            break;
        }
    }
    Ok(run)
}

pub fn cmd_simulate(cfg: &SimConfig, every: Option<usize>, dir: &Path) -> Result<Outcome, CliError> {
    let mut out = Outcome::new();
    let zeta = eigen::zeta(cfg.rstar);
    let every = every.unwrap_or_else(|| default_every(cfg)).max(1);
    let grid = Arc::new(cfg.grid()?);
    let unstable = if zeta < 0.0 && cfg.delta > 0.0 {
        eigen::find_lambda0(cfg.rstar)?
    } else {
        None
    };
    let (u, state, growth_setup) = match &unstable {
        Some(mode) => {
            let norms = SpectralNorms::new(grid.clone(), mode.lambda, 1.0)?;
            let e0 = mode.pair(&grid, cfg.k);
            let y0 = eigen::perturbed_datum(&e0, &norms, PERTURBATION, cfg.seed)?.scale(cfg.delta);
            let (u, st) = initial::from_pair(&grid, &y0.w, &y0.f)?;
            (u, st, Some((norms, e0)))
        }
        None => {
            let (u, st) = initial::generic(cfg, GENERIC_KMAX)?;
            (u, st, None)
        }
    };
    let state0 = state.clone();
    let sim = Simulation::new(cfg.clone(), u, state)?;
    let c0 = sim.initial_conserved();
    let run = run_sim(sim, every, growth_setup.is_some(), cfg.k)?;
    output::write_trajectory(&dir.join("trajectory.csv"), &run.samples, cfg.k)?;

    let drift = run.samples.iter().fold((0.0_f64, 0.0_f64, 0.0_f64), |m, s| {
        (
            m.0.max(s.conserved.m0.abs()),
            m.1.max(s.conserved.ma.abs()),
            m.2.max(s.conserved.mb.abs()),
        )
    });
    let mut summary = SimulateSummary {
        t_final: run.sim.t,
        steps: run.sim.steps,
        zeta,
        max_drift: drift,
        origin_flux: run.sim.origin_flux(),
        stable: None,
        growth: None,
        growth_note: None,
        aborted: run.aborted.as_ref().map(|e| e.to_string()),
    };
    println!(
        "t = {:.4}, steps = {}, max drift m0 {:.3e}, ma {:.3e}, mb {:.3e}",
        run.sim.t, run.sim.steps, drift.0, drift.1, drift.2
    );

    if let Some((norms, e0)) = &growth_setup {
        match eigen::growth_check(&run.pairs, e0, norms, cfg.delta, THETA0) {
            Ok(rep) => {
                println!(
                    "growth: fitted rate {:.6} vs lambda0 {:.6} (relative {:.3e}); escape time {:.4}, norm {:.4e}",
                    rep.fitted_rate, rep.lambda0, rep.relative_error, rep.escape_time, rep.escape_norm
                );
                out.check(
                    "growth_rate",
                    rep.relative_error < 0.05,
                    format!("relative error {:.3e}", rep.relative_error),
                );
                summary.growth = Some(rep);
            }
            Err(e) => {
                println!("growth: {e}");
                summary.growth_note = Some(e.to_string());
            }
        }
    } else if cfg.delta > 0.0 && zeta > 0.0 {
        let ts: Vec<f64> = run.samples.iter().map(|s| s.t).collect();
        let e0s: Vec<f64> = run.samples.iter().map(|s| s.conserved.e0).collect();
        let e0_fit = fit_exponential(&ts, &e0s, 1e-3, 1e3).ok();
        let inp = LimitInput::from_conserved(cfg.rstar, &c0, &state0);
        let predicted = predict_limit_circle(&inp)?;
        let attained = fit_circle(&run.sim.state, &grid.theta);
        let center_error = (attained.0 - predicted.x).hypot(attained.1 - predicted.y);
        let radius_error = (attained.2 - predicted.radius).abs();
        println!(
            "limit circle: predicted ({:.6e}, {:.6e}, {:.8}), attained ({:.6e}, {:.6e}, {:.8})",
            predicted.x, predicted.y, predicted.radius, attained.0, attained.1, attained.2
        );
        if let Some(fit) = &e0_fit {
            println!("E0 decay: c + A exp(-k t) with k = {:.4}, rms {:.2e}", fit.k, fit.rms);
        }
        summary.stable = Some(StableSummary {
            e0_fit,
            predicted,
            attained,
            center_error,
            radius_error,
        });
    }
    output::write_json(&dir.join("summary.json"), &summary)?;
    if let Some(e) = run.aborted {
        return Err(CliError::Aborted {
            t: run.sim.t,
            source: e,
        });
    }
    Ok(out)
}

pub fn cmd_conserved(cfg: &SimConfig, every: Option<usize>, dir: &Path) -> Result<Outcome, CliError> {
    let mut out = Outcome::new();
    let every = every.unwrap_or_else(|| default_every(cfg)).max(1);
    let (u, state) = initial::generic(cfg, GENERIC_KMAX)?;
    let mut sim = Simulation::new(cfg.clone(), u, state)?;
    let mut rows = Vec::new();
    let n = (cfg.t_end / cfg.dt).round() as usize;
    let mut push = |sim: &mut Simulation| -> Result<(), StefanError> {
        let s = sim.sample()?;
        let (fa, fb) = sim.origin_flux();
        let c = s.conserved;
        rows.push(vec![
            s.t,
            c.m0,
            c.ma,
            c.mb,
            c.ma - fa,
            c.mb - fb,
            c.e,
            c.e0,
            c.d0,
            s.eir,
        ]);
        Ok(())
    };
    push(&mut sim)?;
    for s in 1..=n {
        let r = sim.step().and_then(|_| {
            if s % every == 0 || s == n {
                push(&mut sim)
            } else {
                Ok(())
            }
        });
        if let Err(e) = r {
            write_conserved(dir, &rows)?;
            return Err(CliError::Aborted { t: sim.t, source: e });
        }
    }
    write_conserved(dir, &rows)?;
    let last = rows.last().expect("at least the initial row");
    println!("drift at T: m0 {:.3e}, ma {:.3e}, mb {:.3e}", last[1], last[2], last[3]);
    println!(
        "flux-corrected momentum drift at T: ma {:.3e}, mb {:.3e}",
        last[4], last[5]
    );
    let e_increase = rows
        .windows(2)
        .map(|w| w[1][6] - w[0][6])
        .fold(f64::NEG_INFINITY, f64::max);
    out.check(
        "energy_nonincreasing",
        e_increase <= 1e-3 * cfg.delta * cfg.delta,
        format!("largest E increase between samples {e_increase:.3e}"),
    );
    Ok(out)
}

fn write_conserved(dir: &Path, rows: &[Vec<f64>]) -> Result<(), CliError> {
    let header = [
        "t",
        "m0",
        "ma",
        "mb",
        "ma_flux_corrected",
        "mb_flux_corrected",
        "E",
        "E0",
        "D0",
        "eir",
    ]
    .map(String::from);
    output::write_table(&dir.join("conserved.csv"), &header, rows)
}

#[derive(Debug, Serialize)]
struct LimitSummary {
    prediction: LimitCircle,
    jacobian_closed_form: f64,
    jacobian_claimed: f64,
}

pub fn cmd_limit_circle(cfg: &SimConfig, dir: &Path) -> Result<Outcome, CliError> {
    let (u, state) = initial::generic(cfg, GENERIC_KMAX)?;
    let sim = Simulation::new(cfg.clone(), u, state.clone())?;
    let inp = LimitInput::from_conserved(cfg.rstar, &sim.initial_conserved(), &state);
    let p = predict_limit_circle(&inp)?;
    let rb2 = p.radius * p.radius;
    let summary = LimitSummary {
        jacobian_closed_form: PI * (rb2 + cfg.rstar * cfg.rstar),
        jacobian_claimed: 4.0 * PI * PI * rb2,
        prediction: p,
    };
    println!(
        "predicted limit circle: center ({:.6e}, {:.6e}), radius {:.10}",
        summary.prediction.x, summary.prediction.y, summary.prediction.radius
    );
    println!(
        "Jacobian at the origin: {:?}; closed form pi(R^2 + R*^2) = {:.10}; 4 pi^2 R^2 = {:.10}",
        summary.prediction.jacobian_at_origin, summary.jacobian_closed_form, summary.jacobian_claimed
    );
    output::write_json(&dir.join("limit_circle.json"), &summary)?;
    Ok(Outcome::new())
}

pub fn cmd_verify(quick: bool, dir: &Path) -> Result<Outcome, CliError> {
    let mut opts = VerifyOptions::from_env();
    opts.quick |= quick;
    let rep = verify::run_all(&opts);
    let mut out = Outcome::new();
    for r in &rep.results {
        out.check(
            r.name,
            r.passed,
            format!(
                "{} (metric {:.3e}, tolerance {:.1e}, {:.2}s)",
                r.detail, r.metric, r.tolerance, r.seconds
            ),
        );
    }
    println!(
        "{} properties, {} failed, {:.1}s",
        rep.results.len(),
        rep.failures().len(),
        rep.seconds
    );
    output::write_json(&dir.join("verify.json"), &rep)?;
    Ok(out)
}
