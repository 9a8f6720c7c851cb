//! End-to-end property suite over all modules at small resolutions.
//!
//! Set `STEFAN_VERIFY_QUICK=1` for the reduced-resolution run.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::eigen::{self, FieldPair, RadialFe, SpectralNorms};
use crate::geometry::{curvature, InterfaceState};
use crate::heat::{HeatSolver, RadialGrid};
use crate::pullback::{self, build_map, coefficients, default_blend_width, MapSamples};
use crate::spectral::{quad_circle, wirtinger_gap, FourierSeries, ThetaGrid};
use crate::stefan::{initial, JumpOrientation, SimConfig, Simulation};
use crate::Result;

/// Environment variable selecting the reduced-resolution suite.
pub const QUICK_ENV: &str = "STEFAN_VERIFY_QUICK";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub quick: bool,
    /// Jump orientation used by the dynamic checks (mutation hook).
    pub orientation: JumpOrientation,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            quick: false,
            orientation: JumpOrientation::Physical,
            seed: 1,
        }
    }
}

impl VerifyOptions {
    pub fn from_env() -> Self {
        let quick = std::env::var(QUICK_ENV)
            .map(|v| !v.is_empty() && v != "0")
            .unwrap_or(false);
        Self {
            quick,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    /// Measured value compared against `tolerance`.
    pub metric: f64,
    pub tolerance: f64,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub quick: bool,
    pub results: Vec<PropertyResult>,
    pub seconds: f64,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&PropertyResult> {
        self.results.iter().filter(|r| !r.passed).collect()
    }
}

type Check = fn(&VerifyOptions) -> Result<(f64, f64, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("parseval", parseval),
    ("wirtinger", wirtinger),
    ("curvature_vs_parametric", curvature_oracle),
    ("pullback_chain_rule", chain_rule_oracle),
    ("jump_round_trip", jump_round_trip),
    ("maximum_principle", maximum_principle),
    ("mass_conservation", mass_conservation),
    ("zero_eigenspace", zero_eigenspace),
    ("brackets_symmetry", brackets_symmetry),
    ("brackets_orthogonality", brackets_orthogonality),
    ("quadratic_form_positivity", form_positivity),
];

/// Run every property; a check that errors counts as failed.
pub fn run_all(opts: &VerifyOptions) -> VerifyReport {
    let start = Instant::now();
    let results = CHECKS
        .iter()
        .map(|(name, check)| {
            let t = Instant::now();
            let (passed, metric, tolerance, detail) = match check(opts) {
                Ok((m, tol, d)) => (m.is_finite() && m <= tol, m, tol, d),
                Err(e) => (false, f64::NAN, f64::NAN, format!("error: {e}")),
            };
            PropertyResult {
                name,
                passed,
                metric,
                tolerance,
                detail,
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect();
    VerifyReport {
        quick: opts.quick,
        results,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_series(rng: &mut ChaCha8Rng, k: usize, from: usize) -> FourierSeries {
    let mut f = FourierSeries::zeros(k);
    for q in from..=k {
        let s = 1.0 / (1 + q * q) as f64;
        f.set(
            q,
            s * rng.random_range(-1.0..1.0),
            if q == 0 { 0.0 } else { s * rng.random_range(-1.0..1.0) },
        );
    }
    f
}

fn parseval(opts: &VerifyOptions) -> Result<(f64, f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let grid = ThetaGrid::new(64)?;
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let f = random_series(&mut rng, 24, 0);
        let v = f.synthesize(&grid);
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        let q = quad_circle(&grid, &sq)?;
        worst = worst.max((q - f.l2_sq()).abs() / f.l2_sq());
    }
    Ok((
        worst,
        1e-12,
        "relative gap between quadrature and coefficient norms".into(),
    ))
}

fn wirtinger(opts: &VerifyOptions) -> Result<(f64, f64, String)> {
    // ∫f_θ² ≥ 4∫f² on modes ≥ 2 by quadrature, and agreement with the coefficient gap
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 1);
    let grid = ThetaGrid::new(64)?;
    let mut worst = f64::NEG_INFINITY;
    let mut mismatch = 0.0_f64;
    for _ in 0..20 {
        let f = random_series(&mut rng, 20, 2);
        let ft = f.d_theta(1).synthesize(&grid);
        let fv = f.synthesize(&grid);
        let a = quad_circle(&grid, &ft.iter().map(|x| x * x).collect::<Vec<_>>())?;
        let b = quad_circle(&grid, &fv.iter().map(|x| x * x).collect::<Vec<_>>())?;
        worst = worst.max(4.0 * b - a);
        mismatch = mismatch.max(((a - b) - wirtinger_gap(&f)).abs() / a);
    }
    let metric = worst.max(0.0) + mismatch;
    Ok((
        metric,
        1e-12,
        format!("max(4∫f² − ∫f_θ²) = {worst:.3e}, gap mismatch {mismatch:.3e}"),
    ))
}

fn curvature_oracle(_: &VerifyOptions) -> Result<(f64, f64, String)> {
    // circle of radius ρ about c written as a radial graph about the origin: H = 1/ρ
    let m = 256;
    let grid = ThetaGrid::new(m)?;
    let mut worst = 0.0_f64;
    for &(rho, cx, cy) in &[(1.05, 0.03, -0.02), (0.97, -0.01, 0.04)] {
        let r: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|t| {
                let (s, c) = t.sin_cos();
                let along = cx * c + cy * s;
                let cross = cx * s - cy * c;
                along + (rho * rho - cross * cross).sqrt() - 1.0
            })
            .collect();
        let f = FourierSeries::analyze(&grid, &r, m / 2 - 1)?;
        let h = curvature(&InterfaceState::new(f), &grid)?;
        worst = worst.max(h.iter().fold(0.0_f64, |a, v| a.max((v - 1.0 / rho).abs())));
    }
    Ok((worst, 1e-9, "sup |H − 1/ρ| for offset circles".into()))
}

/// Largest error of `L̄ū + correction` against the physical Laplacian on interior rings.
fn chain_rule_error(n: usize) -> Result<f64> {
    let rstar = 2.0;
    let grid = Arc::new(RadialGrid::new(n, n, 32, rstar)?);
    let solver = HeatSolver::new(grid.clone(), 1e-3)?;
    let delta = 1e-2;
    let mut f = FourierSeries::zeros(14);
    f.set(1, 0.5 * delta, 0.0);
    f.set(2, delta, 0.5 * delta);
    f.set(3, -0.4 * delta, 0.2 * delta);
    let state = InterfaceState::new(f);
    let map = build_map(&state, default_blend_width(rstar, (0.0, 0.0)), rstar, &grid.theta)?;
    let samples = MapSamples::new(&map, &grid);
    let coeffs = coefficients(&map, &samples, &grid, &FourierSeries::zeros(14));
    let rs2 = rstar * rstar;
    let u = |x: f64, y: f64| {
        let r2 = x * x + y * y;
        (PI * r2 / rs2).cos() + (1.0 - r2 / (2.0 * rs2)) * (x * x - y * y + 0.7 * x * y)
    };
    let lap = |x: f64, y: f64| {
        // exact Laplacian of the test function
        let r2 = x * x + y * y;
        let a = PI / rs2;
        let radial = -4.0 * a * (a * r2).sin() - 4.0 * a * a * r2 * (a * r2).cos();
        let q = x * x - y * y + 0.7 * x * y;
        // Δ(w q) with w = 1 − r²/(2R*²), Δq = 0, Δw = −2/R*², ∇w·∇q = −(2/R*²) q
        radial + (-2.0 / rs2) * q - 2.0 * (2.0 / rs2) * q
    };
    let mut field = grid.zeros();
    let m = grid.m();
    for i in 0..grid.nr() {
        for (j, t) in grid.theta.nodes().iter().enumerate() {
            let r = samples.r_phys[samples.idx(i, j)];
            field.u[i * m + j] = u(r * t.cos(), r * t.sin());
        }
    }
    let l = solver.apply_laplacian(&field);
    let c = solver.correction(&field, &coeffs);
    let mut worst = 0.0_f64;
    for i in 1..grid.nr() - 1 {
        if i == grid.iface() {
            continue;
        }
        for (j, t) in grid.theta.nodes().iter().enumerate() {
            let r = samples.r_phys[samples.idx(i, j)];
            let k = i * m + j;
            worst = worst.max((l.u[k] + c.u[k] - lap(r * t.cos(), r * t.sin())).abs());
        }
    }
    Ok(worst)
}

fn chain_rule_oracle(opts: &VerifyOptions) -> Result<(f64, f64, String)> {
    let (n1, n2) = if opts.quick { (64, 128) } else { (128, 256) };
    let (e1, e2) = (chain_rule_error(n1)?, chain_rule_error(n2)?);
    let ratio = e1 / e2;
    // second order: the error must drop by at least 3 under halving
    Ok((
        3.0 / ratio,
        1.0,
        format!("errors {e1:.3e} (N={n1}), {e2:.3e} (N={n2}), ratio {ratio:.2}"),
    ))
}

fn jump_round_trip(opts: &VerifyOptions) -> Result<(f64, f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 2);
    let grid = ThetaGrid::new(64)?;
    let f = random_series(&mut rng, 16, 0).scale(0.05);
    let state = InterfaceState::new(f);
    let raw: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let back = pullback::jump_transform_inverse(&pullback::jump_transform(&raw, &state, &grid)?, &state, &grid)?;
    let trip = raw.iter().zip(&back).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let circle = pullback::jump_transform(&raw, &InterfaceState::circle(16), &grid)?;
    let ident = raw.iter().zip(&circle).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    Ok((
        trip.max(ident),
        1e-13,
        format!("round trip {trip:.2e}, circle identity {ident:.2e}"),
    ))
}

fn maximum_principle(opts: &VerifyOptions) -> Result<(f64, f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 3);
    let n = if opts.quick { 16 } else { 32 };
    let grid = Arc::new(RadialGrid::new(n, n, 32, 1.5)?);
    let solver = HeatSolver::new(grid.clone(), 1e-2)?;
    // smooth data in [−1, 1]; boundary data in [−0.5, 0.5]
    let (a, b): (f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    let mut u = grid.sample(|r, t| 0.5 * (a * (2.0 * t).cos() + b * r * t.sin()) + 0.4 * (PI * r).cos());
    let dir: Vec<f64> = grid.theta.nodes().iter().map(|t| 0.5 * (3.0 * t).sin()).collect();
    let (lo0, hi0) =
        u.u.iter()
            .chain(&dir)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |m, v| (m.0.min(*v), m.1.max(*v)));
    let mut over = 0.0_f64;
    for _ in 0..20 {
        u = solver.imex_step(&u, None, &dir)?;
        let (lo, hi) =
            u.u.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |m, v| (m.0.min(*v), m.1.max(*v)));
        over = over.max(hi - hi0).max(lo0 - lo);
    }
    Ok((
        over.max(0.0),
        1e-3,
        format!("largest excursion beyond the data range {over:.3e}"),
    ))
}

fn mass_conservation(opts: &VerifyOptions) -> Result<(f64, f64, String)> {
    let cfg = SimConfig {
        rstar: 1.2,
        eps: 1e-4,
        dt: 1e-3,
        t_end: 0.02,
        k: 14,
        m: 32,
        n_minus: 64,
        n_plus: 64,
        delta: 1e-3,
        center_x: 0.0,
        center_y: 0.0,
        seed: opts.seed,
        outdir: None,
    };
    let (u, state) = initial::generic(&cfg, 4)?;
    let mut sim = Simulation::new(cfg.clone(), u, state)?;
    sim.set_jump_orientation(opts.orientation);
    let steps = if opts.quick { 10 } else { 20 };
    for _ in 0..steps {
        sim.step()?;
    }
    let drift = sim.drift()?.m0.abs();
    let rel = drift / cfg.delta;
    Ok((
        rel,
        1e-3,
        format!("|m₀(t) − m₀(0)| / δ after {steps} steps = {rel:.3e}"),
    ))
}

fn zero_eigenspace(_: &VerifyOptions) -> Result<(f64, f64, String)> {
    let rstar = 2.0;
    let d0 = eigen::dispersion(0, 0.0, rstar)?.abs();
    let d1 = eigen::dispersion(1, 0.0, rstar)?.abs();
    let mut smallest = f64::INFINITY;
    for k in 2..=8 {
        smallest = smallest.min(eigen::dispersion(k, 0.0, rstar)?.abs());
    }
    let metric = d0.max(d1).max(if smallest > 1e-6 { 0.0 } else { 1.0 });
    Ok((
        metric,
        1e-10,
        format!("|D₀(0)| = {d0:.2e}, |D₁(0)| = {d1:.2e}, min_(k≥2) |D_k(0)| = {smallest:.3e}"),
    ))
}

fn brackets_symmetry(opts: &VerifyOptions) -> Result<(f64, f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 4);
    let mut worst = 0.0_f64;
    for k in [0usize, 2, 3] {
        let fe = RadialFe::new(k, 2.0, 32)?;
        let x: Vec<f64> = (0..fe.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..fe.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (lx, ly) = (fe.apply_l(&x)?, fe.apply_l(&y)?);
        let (a, b) = (fe.gram.form(&lx, &y), fe.gram.form(&x, &ly));
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
    }
    // the 2D brackets on random pairs
    let grid = Arc::new(RadialGrid::new(16, 16, 16, 2.0)?);
    let norms = SpectralNorms::new(grid.clone(), 3.4, 1.0)?;
    let pair = |rng: &mut ChaCha8Rng| {
        let mut w = grid.zeros();
        w.u.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        FieldPair {
            w,
            f: random_series(rng, 6, 0),
        }
    };
    let (p, q) = (pair(&mut rng), pair(&mut rng));
    let s2 = (norms.brackets_i(&p, &q) - norms.brackets_i(&q, &p)).abs();
    let ones = FieldPair {
        w: grid.sample(|_, _| 1.0),
        f: FourierSeries::constant(6, -1.0),
    };
    let e11 = (norms.brackets(&ones, &ones) - (norms.area() - 2.0 * PI)).abs();
    let metric = worst.max(s2).max(e11);
    Ok((
        metric,
        1e-9,
        format!("discrete L symmetry {worst:.2e}, 2D bracket symmetry {s2:.2e}, ⟨e₁₁,e₁₁⟩ error {e11:.2e}"),
    ))
}

fn brackets_orthogonality(_: &VerifyOptions) -> Result<(f64, f64, String)> {
    // two distinct mode-0 eigenvectors of the discrete pencil
    let fe = RadialFe::new(0, 2.0, 48)?;
    let (_, x) = fe.min_quotient_dense()?;
    let lx = fe.apply_l(&x)?;
    let mut y: Vec<f64> = (0..fe.len()).map(|i| (i as f64 * 0.37).sin()).collect();
    // deflate the first eigenvector and iterate towards the next one
    let (mu, _) = fe.min_quotient_dense()?;
    let _ = lx;
    let c = fe.constraint.clone().unwrap_or_default();
    let proj = |v: &mut Vec<f64>| {
        let s = fe.stiff.form(v, &x) / fe.stiff.form(&x, &x);
        v.iter_mut().zip(&x).for_each(|(a, b)| *a -= s * b);
        let cc: f64 = c.iter().map(|v| v * v).sum();
        if cc > 0.0 {
            let t: f64 = c.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() / cc;
            v.iter_mut().zip(&c).for_each(|(a, b)| *a -= t * b);
        }
    };
    proj(&mut y);
    let (mu2, y) = fe.refine(y, mu * 0.2, 40)?;
    let nx = fe.gram.form(&x, &x).abs().sqrt();
    let ny = fe.gram.form(&y, &y).abs().sqrt();
    let dot = fe.gram.form(&x, &y).abs() / (nx * ny);
    let distinct = (mu2 - mu).abs() > 1e-6 * mu.abs();
    Ok((
        if distinct { dot } else { 1.0 },
        1e-8,
        format!("μ₁ = {mu:.6}, μ₂ = {mu2:.6}, |⟨e₁,e₂⟩| = {dot:.2e}"),
    ))
}

fn form_positivity(opts: &VerifyOptions) -> Result<(f64, f64, String)> {
    // ⟨y,y⟩_I − I∫|∇v|² = ⟨y,y⟩ + ∫|∇v|²/λ₀ ≥ 0 on the constrained mode-0 space
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 5);
    let fe = RadialFe::new(0, 2.0, 48)?;
    let (mu, _) = fe.min_quotient_dense()?;
    let lambda0 = -1.0 / mu;
    let c = fe.constraint.clone().expect("mode 0 has a constraint");
    let cc: f64 = c.iter().map(|v| v * v).sum();
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let mut x: Vec<f64> = (0..fe.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / cc;
        x.iter_mut().zip(&c).for_each(|(a, b)| *a -= t * b);
        let g = fe.stiff.form(&x, &x);
        worst = worst.min((fe.gram.form(&x, &x) + g / lambda0) / g);
    }
    Ok((
        (-worst).max(0.0),
        1e-12,
        format!("min (⟨y,y⟩_I − I∫|∇v|²)/∫|∇v|² = {worst:.3e}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let rep = run_all(&VerifyOptions {
            quick: true,
            ..VerifyOptions::default()
        });
        for r in &rep.results {
            assert!(
                r.passed,
                "{}: {} (metric {}, tol {})",
                r.name, r.detail, r.metric, r.tolerance
            );
        }
    }

    #[test]
    fn flipped_jump_is_caught() {
        let opts = VerifyOptions {
            quick: true,
            orientation: JumpOrientation::Flipped,
            ..VerifyOptions::default()
        };
        let r = mass_conservation(&opts);
        assert!(r.map(|(m, tol, _)| m > tol).unwrap_or(true));
    }
}
