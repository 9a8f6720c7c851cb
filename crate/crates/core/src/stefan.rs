//! Coupled evolution of temperature and interface, conservation laws and the
//! limiting-circle predictor.
//!
//! Units: σ = 1, lengths scaled by the steady radius. In the linear regime, the coupled
//! step treats the interface law implicitly. The explicit law itself is
//! [`interface_update`].

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StefanError};
use crate::geometry::{curvature, curvature_remainder_n, metric, InterfaceState};
use crate::heat::{self, normal_jump, HeatSolver, RadialGrid, TwoPhaseField};
use crate::pullback::{self, build_map, coefficients, default_blend_width, BlendMap, MapSamples};
use crate::spectral::{FourierSeries, ThetaGrid};

/// Run parameters. Serialized keys follow the command-line configuration format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub rstar: f64,
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(rename = "T", default = "defaults::t_end")]
    pub t_end: f64,
    #[serde(rename = "K", default = "defaults::k")]
    pub k: usize,
    #[serde(rename = "M", default = "defaults::m")]
    pub m: usize,
    #[serde(rename = "Nminus", default = "defaults::n")]
    pub n_minus: usize,
    #[serde(rename = "Nplus", default = "defaults::n")]
    pub n_plus: usize,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default)]
    pub center_x: f64,
    #[serde(default)]
    pub center_y: f64,
    #[serde(default)]
    pub seed: u64,
    /// Output directory for the command-line drivers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outdir: Option<String>,
}

mod defaults {
    pub fn eps() -> f64 {
        1e-4
    }
    pub fn dt() -> f64 {
        1e-4
    }
    pub fn t_end() -> f64 {
        0.1
    }
    pub fn k() -> usize {
        42
    }
    pub fn m() -> usize {
        128
    }
    pub fn n() -> usize {
        128
    }
    pub fn delta() -> f64 {
        1e-3
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            rstar: 1.2,
            eps: defaults::eps(),
            dt: defaults::dt(),
            t_end: defaults::t_end(),
            k: defaults::k(),
            m: defaults::m(),
            n_minus: defaults::n(),
            n_plus: defaults::n(),
            delta: defaults::delta(),
            center_x: 0.0,
            center_y: 0.0,
            seed: 0,
            outdir: None,
        }
    }
}

impl SimConfig {
    pub fn center(&self) -> (f64, f64) {
        (self.center_x, self.center_y)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(StefanError::InvalidConfig(s));
        if !(self.rstar > 1.0 + self.center_x.hypot(self.center_y)) {
            return bad(format!("container radius R* = {} must exceed 1 + |center|", self.rstar));
        }
        if !(self.eps >= 0.0) {
            return bad(format!("eps = {} must be nonnegative", self.eps));
        }
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return bad(format!("dt = {}, T = {} must be positive", self.dt, self.t_end));
        }
        if !self.m.is_multiple_of(2) || self.m < 2 * self.k + 2 {
            return bad(format!(
                "M = {} must be even and at least 2K+2 = {}",
                self.m,
                2 * self.k + 2
            ));
        }
        if self.n_minus < 3 || self.n_plus < 3 {
            return bad("Nminus and Nplus must be at least 3".into());
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return bad(format!("delta = {} must be a nonnegative number", self.delta));
        }
        Ok(())
    }

    /// Area of the container.
    pub fn area(&self) -> f64 {
        PI * self.rstar * self.rstar
    }

    pub fn grid(&self) -> Result<RadialGrid> {
        RadialGrid::new(self.n_minus, self.n_plus, self.m, self.rstar)
    }
}

/// `u = H − 1` on the interface, sampled on `theta`.
pub fn dirichlet_data(state: &InterfaceState, theta: &ThetaGrid) -> Result<Vec<f64>> {
    Ok(curvature(state, theta)?.into_iter().map(|h| h - 1.0).collect())
}

/// Real trigonometric basis `1, cos θ, sin θ, …, cos Kθ, sin Kθ` on a grid.
#[derive(Debug, Clone)]
struct Galerkin {
    k: usize,
    phi: DMatrix<f64>,
    norms: Vec<f64>,
    dth: f64,
}

impl Galerkin {
    fn new(k: usize, theta: &ThetaGrid) -> Self {
        let n = 2 * k + 1;
        let m = theta.len();
        let mut phi = DMatrix::zeros(n, m);
        let mut norms = vec![PI; n];
        norms[0] = 2.0 * PI;
        for (j, &t) in theta.nodes().iter().enumerate() {
            phi[(0, j)] = 1.0;
            for kk in 1..=k {
                let (s, c) = (kk as f64 * t).sin_cos();
                phi[(2 * kk - 1, j)] = c;
                phi[(2 * kk, j)] = s;
            }
        }
        Self {
            k,
            phi,
            norms,
            dth: theta.spacing(),
        }
    }

    fn wavenumber(q: usize) -> usize {
        q.div_ceil(2)
    }

    /// Galerkin matrix of pointwise multiplication by `w`.
    fn mult(&self, w: &[f64]) -> DMatrix<f64> {
        let mut scaled = self.phi.clone();
        for (j, wj) in w.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*wj * self.dth);
        }
        let mut out = &scaled * self.phi.transpose();
        for (p, norm) in self.norms.iter().enumerate() {
            out.row_mut(p).scale_mut(1.0 / norm);
        }
        out
    }

    fn project(&self, v: &[f64]) -> DVector<f64> {
        let mut out = &self.phi * DVector::from_column_slice(v) * self.dth;
        for (p, norm) in self.norms.iter().enumerate() {
            out[p] /= norm;
        }
        out
    }

    fn to_series(&self, c: &DVector<f64>) -> FourierSeries {
        let mut s = FourierSeries::zeros(self.k);
        s.set(0, c[0], 0.0);
        for kk in 1..=self.k {
            s.set(kk, c[2 * kk - 1], c[2 * kk]);
        }
        s
    }
}

fn solve_dense(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| StefanError::IllPosedUpdate(format!("singular {what}")))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(StefanError::IllPosedUpdate(format!("non-finite {what}")))
    }
}

/// Solve `R f_t + ε f_{θ⁴t} = −|g|·jump` (Galerkin in the modes of `state.f`) and return
/// the advanced state together with `f_t`. `jump` holds samples of `[u_n]∘φ`.
pub fn interface_update(
    state: &InterfaceState,
    jump: &[f64],
    eps: f64,
    dt: f64,
    theta: &ThetaGrid,
) -> Result<(InterfaceState, FourierSeries)> {
    if eps < 0.0 {
        return Err(StefanError::IllPosedUpdate(format!("eps = {eps} < 0")));
    }
    let k = state.f.cutoff();
    theta.check_cutoff(k)?;
    let gal = Galerkin::new(k, theta);
    let f_t = solve_interface_law(&gal, state, jump, eps, theta, None)?;
    let mut next = state.clone();
    next.f = state.f.axpy(dt, &f_t);
    Ok((next, f_t))
}

/// Implicit part of the interface law: `extra` is a diagonal-in-mode matrix times `W`.
fn solve_interface_law(
    gal: &Galerkin,
    state: &InterfaceState,
    jump: &[f64],
    eps: f64,
    theta: &ThetaGrid,
    implicit: Option<(&[f64], &[f64])>,
) -> Result<FourierSeries> {
    let g = metric(state, theta)?;
    let r = state.samples(theta).r;
    let rhs: Vec<f64> = jump.iter().zip(&g).map(|(j, g)| -g * j).collect();
    let mut a = gal.mult(&r);
    for q in 0..a.nrows() {
        a[(q, q)] += eps * (Galerkin::wavenumber(q) as f64).powi(4);
    }
    if let Some((w, diag)) = implicit {
        let mw = gal.mult(w);
        for q in 0..a.ncols() {
            let s = diag[Galerkin::wavenumber(q)];
            for p in 0..a.nrows() {
                a[(p, q)] -= mw[(p, q)] * s;
            }
        }
    }
    let c = solve_dense(a, gal.project(&rhs), "interface system")?;
    Ok(gal.to_series(&c))
}

/// Conservation-law values. `m0`, `ma`, `mb` are absolute invariants; use
/// [`ConservedSet::deviation_from`] for drifts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservedSet {
    pub m0: f64,
    pub ma: f64,
    pub mb: f64,
    pub e: f64,
    pub e0: f64,
    pub d0: f64,
}

impl ConservedSet {
    pub fn deviation_from(&self, initial: &ConservedSet) -> ConservedSet {
        ConservedSet {
            m0: self.m0 - initial.m0,
            ma: self.ma - initial.ma,
            mb: self.mb - initial.mb,
            ..*self
        }
    }
}

/// Physical-domain integrals of a field evaluated through the pullback map.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhysicalIntegrals {
    pub int_u: f64,
    pub int_u2: f64,
    pub int_grad2: f64,
    pub int_up_a: f64,
    pub int_up_b: f64,
}

/// Harmonic weights `p_a = x(1 + R*²/|x|²)`, `p_b = y(1 + R*²/|x|²)`.
pub fn momentum_weights(x: f64, y: f64, rstar: f64) -> (f64, f64) {
    let s = 1.0 + rstar * rstar / (x * x + y * y);
    (x * s, y * s)
}

pub fn physical_integrals(
    solver: &HeatSolver,
    field: &TwoPhaseField,
    samples: &MapSamples,
    center: (f64, f64),
) -> PhysicalIntegrals {
    let grid = solver.grid();
    let (m, nr, ni) = (grid.m(), grid.nr(), grid.iface());
    let rstar = grid.rstar;
    let d = solver.derivatives(field);
    let (inner, outer) = heat::one_sided_radial(grid, field);
    let (v_in, v_out) = grid.iface_half_volumes();
    let dth = grid.theta.spacing();
    let mut out = PhysicalIntegrals::default();
    let nodes = grid.theta.nodes();
    for i in 0..nr {
        let vol = grid.volumes()[i];
        for j in 0..m {
            let k = samples.idx(i, j);
            let u = field.u[i * m + j];
            let jac = samples.jacobian[k];
            let w = vol * jac * dth;
            out.int_u += w * u;
            out.int_u2 += w * u * u;
            let r = samples.r_phys[k];
            let (s, c) = nodes[j].sin_cos();
            let (x, y) = (center.0 + r * c, center.1 + r * s);
            if x * x + y * y > 0.0 {
                let (pa, pb) = momentum_weights(x, y, rstar);
                out.int_up_a += w * u * pa;
                out.int_up_b += w * u * pb;
            }
            let jet = samples.jets[k];
            let grad2 = |ur: f64| {
                let a = ur * (jet.pi + r * jet.pr);
                let b = (d.ut[i * m + j] + ur * r * jet.pt) / r;
                a * a + b * b
            };
            if i == 0 {
                continue;
            } else if i == ni {
                out.int_grad2 += dth * jac * (v_in * grad2(inner[j]) + v_out * grad2(outer[j]));
            } else if i == nr - 1 {
                let hp = grid.h_plus();
                let ur = (3.0 * u - 4.0 * field.at(i - 1, j) + field.at(i - 2, j)) / (2.0 * hp);
                out.int_grad2 += w * grad2(ur);
            } else {
                out.int_grad2 += w * grad2(d.ur[i * m + j]);
            }
        }
    }
    let p0 = samples.jets[0].pi;
    let (gx, gy) = origin_gradient(grid, field, p0);
    out.int_grad2 += grid.volumes()[0] * 2.0 * PI * samples.jacobian[0] * (gx * gx + gy * gy);
    out
}

/// Physical gradient of `u` at the origin, from the mode-1 content of the first ring.
pub fn origin_gradient(grid: &RadialGrid, field: &TwoPhaseField, pi0: f64) -> (f64, f64) {
    let h = grid.radii()[1];
    let (mut gx, mut gy) = (0.0, 0.0);
    for (j, t) in grid.theta.nodes().iter().enumerate() {
        gx += field.at(1, j) * t.cos();
        gy += field.at(1, j) * t.sin();
    }
    let s = 2.0 * pi0 / (grid.m() as f64 * h);
    (gx * s, gy * s)
}

/// `∫_{S¹} [F(R,θ) − F(1,θ)] dθ` with `F(R,θ) = ∫_1^R p(c + r e_θ) r dr`, for `p_a`, `p_b`.
pub fn interface_momentum(state: &InterfaceState, rstar: f64, theta: &ThetaGrid) -> (f64, f64) {
    let r_s = state.samples(theta).r;
    let (cx, cy) = state.center;
    let (mut fa, mut fb) = (0.0, 0.0);
    for (j, &t) in theta.nodes().iter().enumerate() {
        let (s, c) = t.sin_cos();
        let rr = r_s[j];
        if state.center == (0.0, 0.0) {
            let w = (rr.powi(3) - 1.0) / 3.0 + rstar * rstar * (rr - 1.0);
            fa += c * w;
            fb += s * w;
        } else {
            let (ga, gb) = gauss_legendre(1.0, rr, |r| {
                let (pa, pb) = momentum_weights(cx + r * c, cy + r * s, rstar);
                (pa * r, pb * r)
            });
            fa += ga;
            fb += gb;
        }
    }
    (fa * theta.spacing(), fb * theta.spacing())
}

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> (f64, f64)) -> (f64, f64) {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    GL_NODES.iter().zip(GL_WEIGHTS.iter()).fold((0.0, 0.0), |acc, (x, w)| {
        let v = f(mid + half * x);
        (acc.0 + w * half * v.0, acc.1 + w * half * v.1)
    })
}

/// Conservation laws and energies of a snapshot.
pub fn conserved(
    solver: &HeatSolver,
    field: &TwoPhaseField,
    state: &InterfaceState,
    samples: &MapSamples,
) -> Result<ConservedSet> {
    let grid = solver.grid();
    let theta = &grid.theta;
    let ints = physical_integrals(solver, field, samples, state.center);
    let f = &state.f;
    let mass_f = 2.0 * PI * f.a(0) + 0.5 * f.l2_sq();
    let (fa, fb) = interface_momentum(state, grid.rstar, theta);
    let len = metric(state, theta)?.iter().sum::<f64>() * theta.spacing();
    let area = PI * grid.rstar * grid.rstar;
    let e0 = 0.5 * ints.int_u2 + ints.int_u + (len - 2.0 * PI);
    Ok(ConservedSet {
        m0: ints.int_u + mass_f,
        ma: ints.int_up_a + fa,
        mb: ints.int_up_b + fb,
        e: e0 + 0.5 * area + 2.0 * PI,
        e0,
        d0: ints.int_grad2,
    })
}

/// One recorded point of a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub f: FourierSeries,
    /// Deviations of the invariants from their initial values; energies as evaluated.
    pub conserved: ConservedSet,
    pub sup_f: f64,
    pub l2_u: f64,
    pub grad_u: f64,
    /// Energy-identity residual rate of the step ending at `t`.
    pub eir: f64,
}

/// Terms entering the energy identity at one time level.
#[derive(Debug, Clone, Copy)]
struct EnergyParts {
    half_sq: f64,
    length: f64,
    d0: f64,
}

/// Per-step residual rates of the energy identity from energy values at consecutive steps.
///
/// `half_sq[n] = ½∫(1+u)²`, `length[n] = ∫|g|`, `d0[n] = ∫|∇u|²`, `eps_flux[n]` the ε-term
/// `ε∫H f_{θ⁴t}` over step `n−1 → n` (zero for ε = 0).
pub fn energy_identity_residual(half_sq: &[f64], length: &[f64], d0: &[f64], eps_flux: &[f64], dt: f64) -> Vec<f64> {
    (1..half_sq.len())
        .map(|n| (half_sq[n] - half_sq[n - 1] + length[n] - length[n - 1]) / dt + d0[n] + eps_flux[n])
        .collect()
}

/// Explicitly flipped jump orientation, used to check that diagnostics catch sign errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JumpOrientation {
    #[default]
    Physical,
    Flipped,
}

/// Time stepper holding the heat solver, the field on the reference grid and the interface.
pub struct Simulation {
    pub cfg: SimConfig,
    solver: HeatSolver,
    grid: Arc<RadialGrid>,
    gal: Galerkin,
    pub field: TwoPhaseField,
    pub state: InterfaceState,
    pub f_t: FourierSeries,
    pub t: f64,
    pub steps: usize,
    d: f64,
    orientation: JumpOrientation,
    /// `(dt·L_k)` scaled jump responses per wave number.
    resp: Vec<f64>,
    initial: ConservedSet,
    energy: EnergyParts,
    /// `∫_0^t ||f_t||²_{L²}`.
    ft_energy: f64,
    last_eir: f64,
    /// `−2πR*² ∫_0^t ∇u(0, s) ds`, the momentum exchanged through the dipole of `p_a`, `p_b`.
    origin_flux: (f64, f64),
    cache: Option<(BlendMap, MapSamples)>,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("t", &self.t)
            .field("cfg", &self.cfg)
            .finish()
    }
}

impl Simulation {
    pub fn new(cfg: SimConfig, field: TwoPhaseField, state: InterfaceState) -> Result<Self> {
        cfg.validate()?;
        if state.center != (0.0, 0.0) {
            return Err(StefanError::InvalidConfig(
                "the time-domain solver needs center (0, 0)".into(),
            ));
        }
        let grid = Arc::new(cfg.grid()?);
        if field.dims() != (grid.nr(), grid.m()) {
            return Err(StefanError::InvalidGrid(
                "field does not match the configured grid".into(),
            ));
        }
        let state = InterfaceState {
            f: state.f.with_cutoff(cfg.k),
            center: state.center,
        };
        state.validate(cfg.rstar, &grid.theta)?;
        let solver = HeatSolver::new(grid.clone(), cfg.dt)?;
        let gal = Galerkin::new(cfg.k, &grid.theta);
        let resp = (0..=cfg.k)
            .map(|k| solver.dirichlet_response(k).1 * cfg.dt * ((k * k) as f64 - 1.0))
            .collect();
        let d = default_blend_width(cfg.rstar, cfg.center());
        let mut sim = Self {
            cfg: cfg.clone(),
            solver,
            grid,
            gal,
            field,
            f_t: FourierSeries::zeros(cfg.k),
            state,
            t: 0.0,
            steps: 0,
            d,
            orientation: JumpOrientation::Physical,
            resp,
            initial: ConservedSet {
                m0: 0.0,
                ma: 0.0,
                mb: 0.0,
                e: 0.0,
                e0: 0.0,
                d0: 0.0,
            },
            energy: EnergyParts {
                half_sq: 0.0,
                length: 0.0,
                d0: 0.0,
            },
            ft_energy: 0.0,
            last_eir: 0.0,
            origin_flux: (0.0, 0.0),
            cache: None,
        };
        // impose the interface condition exactly
        let dir = dirichlet_data(&sim.state, &sim.grid.theta)?;
        sim.field.ring_mut(sim.grid.iface()).copy_from_slice(&dir);
        let c = sim.conserved_now()?;
        sim.initial = c;
        sim.energy = sim.energy_parts(&c)?;
        Ok(sim)
    }

    #[doc(hidden)]
    pub fn set_jump_orientation(&mut self, o: JumpOrientation) {
        self.orientation = o;
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn solver(&self) -> &HeatSolver {
        &self.solver
    }

    pub fn blend_width(&self) -> f64 {
        self.d
    }

    pub fn initial_conserved(&self) -> ConservedSet {
        self.initial
    }

    /// Accumulated origin exchange of the momentum functionals; `drift − origin_flux`
    /// vanishes up to discretization error.
    pub fn origin_flux(&self) -> (f64, f64) {
        self.origin_flux
    }

    pub fn ft_energy(&self) -> f64 {
        self.ft_energy
    }

    fn map(&mut self) -> Result<&(BlendMap, MapSamples)> {
        if self.cache.is_none() {
            let map = build_map(&self.state, self.d, self.cfg.rstar, &self.grid.theta)?;
            let samples = MapSamples::new(&map, &self.grid);
            self.cache = Some((map, samples));
        }
        Ok(self.cache.as_ref().expect("just filled"))
    }

    /// Conservation laws at the current time (absolute values).
    pub fn conserved_now(&mut self) -> Result<ConservedSet> {
        self.map()?;
        let (_, samples) = self.cache.as_ref().expect("cached");
        conserved(&self.solver, &self.field, &self.state, samples)
    }

    fn energy_parts(&self, c: &ConservedSet) -> Result<EnergyParts> {
        let len = metric(&self.state, &self.grid.theta)?.iter().sum::<f64>() * self.grid.theta.spacing();
        Ok(EnergyParts {
            half_sq: c.e - len,
            length: len,
            d0: c.d0,
        })
    }

    /// Advance one step.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.cfg.dt;
        let theta = self.grid.theta.clone();
        self.map()?;
        let (map, samples) = self.cache.take().expect("cached");
        let coeffs = coefficients(&map, &samples, &self.grid, &self.f_t);
        let dir = dirichlet_data(&self.state, &theta)?;
        let ustar = self.solver.imex_step(&self.field, Some(&coeffs), &dir)?;

        // [ū_n] = −[ū_r] along the reference normal of the inner phase
        let sign = match self.orientation {
            JumpOrientation::Physical => 1.0,
            JumpOrientation::Flipped => -1.0,
        };
        let raw: Vec<f64> = normal_jump(&self.grid, &ustar).iter().map(|j| -j * sign).collect();
        let jump = pullback::jump_transform(&raw, &self.state, &theta)?;
        let g = metric(&self.state, &theta)?;
        let r = self.state.samples(&theta).r;
        let w: Vec<f64> = g.iter().zip(&r).map(|(g, r)| sign * g * g / (r * r)).collect();
        let f_t = solve_interface_law(
            &self.gal,
            &self.state,
            &jump,
            self.cfg.eps,
            &theta,
            Some((&w, &self.resp)),
        )?;

        // linearized interface value increment and its harmonic response
        let mut lft = f_t.clone();
        for k in 0..=self.cfg.k {
            let l = (k * k) as f64 - 1.0;
            lft.set(k, f_t.a(k) * l * dt, f_t.b(k) * l * dt);
        }
        let mut next = ustar;
        self.solver.add_dirichlet_response(&mut next, &lft.synthesize(&theta));

        let mut state = self.state.clone();
        state.f = self.state.f.axpy(dt, &f_t);
        state.validate(self.cfg.rstar, &theta)?;
        let dir_next = dirichlet_data(&state, &theta)?;
        next.ring_mut(self.grid.iface()).copy_from_slice(&dir_next);
        if !next.is_finite() {
            return Err(StefanError::SingularSystem("non-finite field after step".into()));
        }

        let eps_flux = if self.cfg.eps > 0.0 {
            let h = curvature(&state, &theta)?;
            let f4 = f_t.d_theta(4).synthesize(&theta);
            self.cfg.eps * h.iter().zip(&f4).map(|(a, b)| a * b).sum::<f64>() * theta.spacing()
        } else {
            0.0
        };
        self.ft_energy += dt * f_t.l2_sq();
        self.field = next;
        self.state = state;
        self.f_t = f_t;
        self.t += dt;
        self.steps += 1;

        let c = self.conserved_now()?;
        let pi0 = self.cache.as_ref().expect("cached").1.jets[0].pi;
        let (gx, gy) = origin_gradient(&self.grid, &self.field, pi0);
        let k = -2.0 * PI * self.cfg.rstar * self.cfg.rstar * dt;
        self.origin_flux = (self.origin_flux.0 + k * gx, self.origin_flux.1 + k * gy);
        let parts = self.energy_parts(&c)?;
        self.last_eir = energy_identity_residual(
            &[self.energy.half_sq, parts.half_sq],
            &[self.energy.length, parts.length],
            &[self.energy.d0, parts.d0],
            &[0.0, eps_flux],
            dt,
        )[0];
        self.energy = parts;
        Ok(())
    }

    /// Current diagnostics as a trajectory sample.
    pub fn sample(&mut self) -> Result<TrajectorySample> {
        let c = self.conserved_now()?;
        let theta = self.grid.theta.clone();
        let (_, samples) = self.cache.as_ref().expect("cached");
        let ints = physical_integrals(&self.solver, &self.field, samples, self.state.center);
        Ok(TrajectorySample {
            t: self.t,
            f: self.state.f.clone(),
            conserved: c.deviation_from(&self.initial),
            sup_f: self.state.f.sup_norm(&theta),
            l2_u: ints.int_u2.max(0.0).sqrt(),
            grad_u: ints.int_grad2.max(0.0).sqrt(),
            eir: self.last_eir,
        })
    }

    /// Absolute invariants minus values at the start; same as `sample().conserved`.
    pub fn drift(&mut self) -> Result<ConservedSet> {
        Ok(self.conserved_now()?.deviation_from(&self.initial))
    }

    /// Run to `t_end`, sampling every `every` steps (and at the end).
    pub fn run(&mut self, t_end: f64, every: usize) -> Result<Vec<TrajectorySample>> {
        let mut out = vec![self.sample()?];
        let n = ((t_end - self.t) / self.cfg.dt).round().max(0.0) as usize;
        for s in 1..=n {
            self.step()?;
            if s % every.max(1) == 0 || s == n {
                out.push(self.sample()?);
            }
        }
        Ok(out)
    }
}

/// Generic initial data with the interface condition satisfied exactly.
pub mod initial {
    use super::*;

    /// Named generator for all generic perturbations: ChaCha8 seeded from the config seed.
    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Mode-`k` harmonic profile, `r^k` inside; outside harmonic with zero Neumann data at `R*`.
    pub fn harmonic_profile(k: usize, r: f64, rstar: f64) -> f64 {
        if k == 0 {
            return 1.0;
        }
        let kf = k as i32;
        if r <= 1.0 {
            r.powi(kf)
        } else {
            let a = rstar.powi(2 * kf);
            (r.powi(kf) + a * r.powi(-kf)) / (1.0 + a)
        }
    }

    /// Field whose trace on `r = 1` equals `trace` (samples over θ), extended harmonically.
    pub fn harmonic_extension(grid: &RadialGrid, trace: &[f64]) -> TwoPhaseField {
        let theta = &grid.theta;
        let kmax = grid.m() / 2 - 1;
        let s = FourierSeries::analyze(theta, trace, kmax).expect("grid resolves M/2-1");
        let mut out = grid.zeros();
        let nodes = theta.nodes();
        for (i, &r) in grid.radii().iter().enumerate() {
            for (j, &t) in nodes.iter().enumerate() {
                let mut v = s.a(0);
                for k in 1..=kmax {
                    let p = harmonic_profile(k, r, grid.rstar);
                    if p == 0.0 {
                        continue;
                    }
                    let (sn, cs) = (k as f64 * t).sin_cos();
                    v += p * (s.a(k) * cs + s.b(k) * sn);
                }
                out.u[i * grid.m() + j] = v;
            }
        }
        out
    }

    /// Random low-mode interface `δ·Σ_{k≤kmax} (α_k cos kθ + β_k sin kθ)` and a
    /// compatible temperature with random interior bumps.
    pub fn generic(cfg: &SimConfig, kmax: usize) -> Result<(TwoPhaseField, InterfaceState)> {
        let grid = cfg.grid()?;
        let mut rng = rng(cfg.seed);
        let mut f = FourierSeries::zeros(cfg.k);
        for k in 0..=kmax.min(cfg.k) {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            f.set(
                k,
                cfg.delta * a / (1 + k * k) as f64,
                cfg.delta * b / (1 + k * k) as f64,
            );
        }
        let state = InterfaceState::new(f);
        let trace = dirichlet_data(&state, &grid.theta)?;
        let mut field = harmonic_extension(&grid, &trace);
        let bumps: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rstar = cfg.rstar;
        let extra = grid.sample(|r, t| {
            if r <= 1.0 {
                (1.0 - r * r) * (bumps[0] + bumps[1] * r * t.cos())
            } else {
                let s = (r - 1.0) / (rstar - 1.0);
                s * (2.0 - s) * (bumps[2] + bumps[3] * t.sin())
            }
        });
        field.axpy(cfg.delta, &extra);
        Ok((field, state))
    }

    /// `ū = w + N(f)(θ)` from a fixed-domain pair `(w, f)`.
    pub fn from_pair(
        grid: &RadialGrid,
        w: &TwoPhaseField,
        f: &FourierSeries,
    ) -> Result<(TwoPhaseField, InterfaceState)> {
        let state = InterfaceState::new(f.clone());
        let kmax = grid.m() / 2 - 1;
        let n = curvature_remainder_n(&state, kmax)?.synthesize(&grid.theta);
        let mut u = w.clone();
        for i in 0..grid.nr() {
            for (v, nj) in u.ring_mut(i).iter_mut().zip(&n) {
                *v += nj;
            }
        }
        Ok((u, state))
    }

    /// `w = ū − N(f)(θ)`.
    pub fn to_pair_w(grid: &RadialGrid, u: &TwoPhaseField, state: &InterfaceState) -> Result<TwoPhaseField> {
        let kmax = grid.m() / 2 - 1;
        let n = curvature_remainder_n(state, kmax)?.synthesize(&grid.theta);
        let mut w = u.clone();
        for i in 0..grid.nr() {
            for (v, nj) in w.ring_mut(i).iter_mut().zip(&n) {
                *v -= nj;
            }
        }
        Ok(w)
    }
}

/// Outcome of [`picard_solve`].
#[derive(Debug, Clone)]
pub struct PicardReport {
    pub iterations: usize,
    /// Distance between consecutive iterates, `sup_t (||Δu||²_{L²} + ||Δf||²_{H¹})^{1/2}`.
    pub distances: Vec<f64>,
    /// `distances[m+1] / distances[m]`.
    pub ratios: Vec<f64>,
    pub fields: Vec<TwoPhaseField>,
    pub states: Vec<InterfaceState>,
}

/// Picard iteration over `n_steps` steps: heat on the domain of the previous interface
/// iterate, then the explicit interface law with that iterate's geometry.
pub fn picard_solve(
    cfg: &SimConfig,
    field0: &TwoPhaseField,
    state0: &InterfaceState,
    n_steps: usize,
    tol: f64,
    max_iter: usize,
) -> Result<PicardReport> {
    cfg.validate()?;
    let grid = Arc::new(cfg.grid()?);
    let solver = HeatSolver::new(grid.clone(), cfg.dt)?;
    let theta = grid.theta.clone();
    let gal = Galerkin::new(cfg.k, &theta);
    let d = default_blend_width(cfg.rstar, cfg.center());
    let dt = cfg.dt;
    let state0 = InterfaceState {
        f: state0.f.with_cutoff(cfg.k),
        center: state0.center,
    };
    let mut u0 = field0.clone();
    u0.ring_mut(grid.iface())
        .copy_from_slice(&dirichlet_data(&state0, &theta)?);

    let mut fs: Vec<InterfaceState> = vec![state0.clone(); n_steps + 1];
    let mut us: Vec<TwoPhaseField> = vec![u0.clone(); n_steps + 1];
    let mut distances = Vec::new();
    let scale = (0..=n_steps)
        .map(|_| (heat::l2_sq(&grid, &u0) + state0.f.h1_sq()).sqrt())
        .fold(0.0, f64::max)
        .max(1e-300);
    for iter in 1..=max_iter {
        let mut new_f = vec![state0.clone()];
        let mut new_u = vec![u0.clone()];
        for n in 0..n_steps {
            let map = build_map(&fs[n], d, cfg.rstar, &theta)?;
            let samples = MapSamples::new(&map, &grid);
            let ft_m = fs[n + 1].f.axpy(-1.0, &fs[n].f).scale(1.0 / dt);
            let coeffs = coefficients(&map, &samples, &grid, &ft_m);
            let dir = dirichlet_data(&fs[n + 1], &theta)?;
            let u_next = solver.imex_step(&new_u[n], Some(&coeffs), &dir)?;
            let raw: Vec<f64> = normal_jump(&grid, &u_next).iter().map(|j| -j).collect();
            let jump = pullback::jump_transform(&raw, &fs[n + 1], &theta)?;
            let f_t = solve_interface_law(&gal, &fs[n + 1], &jump, cfg.eps, &theta, None)?;
            let mut st = new_f[n].clone();
            st.f = new_f[n].f.axpy(dt, &f_t);
            st.validate(cfg.rstar, &theta).map_err(|_| StefanError::NoContraction {
                iterations: iter,
                distance: f64::INFINITY,
            })?;
            new_f.push(st);
            new_u.push(u_next);
        }
        let mut dist = 0.0_f64;
        for n in 0..=n_steps {
            let mut du = new_u[n].clone();
            du.axpy(-1.0, &us[n]);
            let df = new_f[n].f.axpy(-1.0, &fs[n].f);
            dist = dist.max((heat::l2_sq(&grid, &du) + df.h1_sq()).sqrt());
        }
        distances.push(dist);
        fs = new_f;
        us = new_u;
        if !dist.is_finite() {
            return Err(StefanError::NoContraction {
                iterations: iter,
                distance: dist,
            });
        }
        if dist <= tol * scale {
            let ratios = distances.windows(2).map(|w| w[1] / w[0]).collect();
            return Ok(PicardReport {
                iterations: iter,
                distances,
                ratios,
                fields: us,
                states: fs,
            });
        }
    }
    Err(StefanError::NoContraction {
        iterations: max_iter,
        distance: *distances.last().unwrap_or(&f64::NAN),
    })
}

/// Both sides of the first-mode bound, with the calibrated constant `lhs / rhs`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FirstModeReport {
    pub lhs: f64,
    pub rhs: f64,
    pub invariants: f64,
    pub grad_u: f64,
    pub high_modes: f64,
    pub eps_term: f64,
    pub calibrated_c: f64,
    /// Left side nonzero while every right-side term vanishes.
    pub violated: bool,
}

/// `|a₁| + |b₁|` against `|m₀| + |m_a| + |m_b| + ||∇u|| + Σ_{k≥2}(|a_k|+|b_k|) + ε√t(∫||f_t||²)^{1/2}`.
/// The invariants are absolute values relative to the steady circle.
pub fn first_mode_bound_check(
    state: &InterfaceState,
    conserved: &ConservedSet,
    grad_u: f64,
    eps: f64,
    t: f64,
    ft_energy: f64,
) -> FirstModeReport {
    let f = &state.f;
    let lhs = f.a(1).abs() + f.b(1).abs();
    let invariants = conserved.m0.abs() + conserved.ma.abs() + conserved.mb.abs();
    let high_modes: f64 = (2..=f.cutoff()).map(|k| f.a(k).abs() + f.b(k).abs()).sum();
    let eps_term = eps * t.sqrt() * ft_energy.sqrt();
    let rhs = invariants + grad_u + high_modes + eps_term;
    let tiny = 1e-14 * (1.0 + lhs);
    FirstModeReport {
        lhs,
        rhs,
        invariants,
        grad_u,
        high_modes,
        eps_term,
        calibrated_c: if rhs > 0.0 {
            lhs / rhs
        } else if lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        },
        violated: rhs <= tiny && lhs > tiny,
    }
}

/// `∫_{B_ρ(c)} (p_a, p_b) dA` by trapezoid quadrature in polar coordinates about the
/// origin (requires `|c| < ρ`).
pub fn disk_momentum(c: (f64, f64), rho: f64, rstar: f64, nodes: usize) -> (f64, f64) {
    let (mut a, mut b) = (0.0, 0.0);
    let h = 2.0 * PI / nodes as f64;
    for j in 0..nodes {
        let phi = j as f64 * h;
        let (s, co) = phi.sin_cos();
        let along = c.0 * co + c.1 * s;
        let cross = c.0 * s - c.1 * co;
        let rmax = along + (rho * rho - cross * cross).sqrt();
        let w = rmax.powi(3) / 3.0 + rstar * rstar * rmax;
        a += co * w;
        b += s * w;
    }
    (a * h, b * h)
}

/// Input data for [`predict_limit_circle`].
#[derive(Debug, Clone)]
pub struct LimitInput {
    pub rstar: f64,
    /// `∫_Ω u₀`.
    pub int_u0: f64,
    pub f0: FourierSeries,
    /// Center of the initial parametrization.
    pub center0: (f64, f64),
    /// Absolute momentum invariants.
    pub ma: f64,
    pub mb: f64,
}

impl LimitInput {
    /// From the invariants of the initial state (`m₀ = ∫u + 2πa₀ + ½||f||²`).
    pub fn from_conserved(rstar: f64, c: &ConservedSet, state: &InterfaceState) -> Self {
        let f = &state.f;
        Self {
            rstar,
            int_u0: c.m0 - 2.0 * PI * f.a(0) - 0.5 * f.l2_sq(),
            f0: f.clone(),
            center0: state.center,
            ma: c.ma,
            mb: c.mb,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitCircle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    /// Finite-difference Jacobian of the momentum system at the origin.
    pub jacobian_at_origin: [[f64; 2]; 2],
    pub newton_residuals: Vec<f64>,
}

const DISK_NODES: usize = 512;

/// Radius from mass conservation, center from the two momentum laws.
pub fn predict_limit_circle(inp: &LimitInput) -> Result<LimitCircle> {
    let area = PI * inp.rstar * inp.rstar;
    let mut r1 = inp.f0.clone();
    r1.set(0, r1.a(0) + 1.0, 0.0);
    let rhs = area + inp.int_u0 + 0.5 * r1.l2_sq();
    let mut rb = 1.0_f64;
    let mut converged = false;
    for _ in 0..60 {
        let g = area / rb + PI * rb * rb - rhs;
        let dg = -area / (rb * rb) + 2.0 * PI * rb;
        if dg.abs() < 1e-14 {
            break;
        }
        let step = g / dg;
        rb -= step;
        if step.abs() < 1e-15 * rb.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged || !(rb > 0.0) || !rb.is_finite() {
        return Err(StefanError::DataNotSmall(format!("radius Newton failed (R = {rb})")));
    }

    let base = disk_momentum(inp.center0, 1.0, inp.rstar, DISK_NODES);
    let target = (inp.ma + base.0, inp.mb + base.1);
    let resid = |c: (f64, f64)| {
        let v = disk_momentum(c, rb, inp.rstar, DISK_NODES);
        (v.0 - target.0, v.1 - target.1)
    };
    let jac = |c: (f64, f64)| {
        let h = 1e-6;
        let px = resid((c.0 + h, c.1));
        let mx = resid((c.0 - h, c.1));
        let py = resid((c.0, c.1 + h));
        let my = resid((c.0, c.1 - h));
        [
            [(px.0 - mx.0) / (2.0 * h), (py.0 - my.0) / (2.0 * h)],
            [(px.1 - mx.1) / (2.0 * h), (py.1 - my.1) / (2.0 * h)],
        ]
    };
    let j0 = jac((0.0, 0.0));
    let mut c = (0.0, 0.0);
    let mut hist = Vec::new();
    for _ in 0..30 {
        let r = resid(c);
        let norm = r.0.hypot(r.1);
        hist.push(norm);
        if norm < 1e-13 {
            break;
        }
        let j = jac(c);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-14 {
            return Err(StefanError::DataNotSmall("singular momentum Jacobian".into()));
        }
        let dx = (j[1][1] * r.0 - j[0][1] * r.1) / det;
        let dy = (-j[1][0] * r.0 + j[0][0] * r.1) / det;
        c = (c.0 - dx, c.1 - dy);
        if c.0.hypot(c.1) >= rb {
            return Err(StefanError::DataNotSmall("center Newton left the disk".into()));
        }
    }
    if *hist.last().unwrap_or(&1.0) > 1e-10 {
        return Err(StefanError::DataNotSmall(format!(
            "center Newton did not converge: {hist:?}"
        )));
    }
    Ok(LimitCircle {
        x: c.0,
        y: c.1,
        radius: rb,
        jacobian_at_origin: j0,
        newton_residuals: hist,
    })
}

/// Least-squares fit `y ≈ c + A e^{−kt}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExpFit {
    pub c: f64,
    pub a: f64,
    pub k: f64,
    /// Root-mean-square residual.
    pub rms: f64,
}

/// Fit `c + A e^{−kt}` with `k` in `[k_lo, k_hi]` (golden section on `log k`, linear
/// least squares for `c`, `A`).
pub fn fit_exponential(t: &[f64], y: &[f64], k_lo: f64, k_hi: f64) -> Result<ExpFit> {
    if t.len() != y.len() || t.len() < 4 || !(k_lo > 0.0 && k_hi > k_lo) {
        return Err(StefanError::InvalidConfig(
            "exponential fit needs ≥ 4 points and 0 < k_lo < k_hi".into(),
        ));
    }
    let solve = |k: f64| -> ExpFit {
        let n = t.len() as f64;
        let e: Vec<f64> = t.iter().map(|t| (-k * t).exp()).collect();
        let (se, see) = (e.iter().sum::<f64>(), e.iter().map(|v| v * v).sum::<f64>());
        let (sy, sey) = (y.iter().sum::<f64>(), e.iter().zip(y).map(|(a, b)| a * b).sum::<f64>());
        let det = n * see - se * se;
        let (c, a) = if det.abs() < 1e-300 {
            (sy / n, 0.0)
        } else {
            ((see * sy - se * sey) / det, (n * sey - se * sy) / det)
        };
        let rss: f64 = e.iter().zip(y).map(|(e, y)| (c + a * e - y).powi(2)).sum();
        ExpFit {
            c,
            a,
            k,
            rms: (rss / n).sqrt(),
        }
    };
    let (mut lo, mut hi) = (k_lo.ln(), k_hi.ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (solve(x1.exp()).rms, solve(x2.exp()).rms);
    for _ in 0..200 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = solve(x1.exp()).rms;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = solve(x2.exp()).rms;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(solve((0.5 * (lo + hi)).exp()))
}

/// Best-fit circle `(x̄, ȳ, R̄)` of a radial graph about the origin (Gauss–Newton).
pub fn fit_circle(state: &InterfaceState, theta: &ThetaGrid) -> (f64, f64, f64) {
    let r = state.samples(theta).r;
    let pts: Vec<(f64, f64)> = theta
        .nodes()
        .iter()
        .zip(&r)
        .map(|(t, r)| (state.center.0 + r * t.cos(), state.center.1 + r * t.sin()))
        .collect();
    let n = pts.len() as f64;
    let (mut cx, mut cy) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let mut rad = 1.0;
    for _ in 0..50 {
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = nalgebra::Vector3::<f64>::zeros();
        for p in &pts {
            let (dx, dy) = (p.0 - cx, p.1 - cy);
            let dist = dx.hypot(dy);
            let res = dist - rad;
            let jrow = nalgebra::Vector3::new(-dx / dist, -dy / dist, -1.0);
            jtj += jrow * jrow.transpose();
            jtr += jrow * res;
        }
        let Some(step) = jtj.lu().solve(&(-jtr)) else { break };
        cx += step[0];
        cy += step[1];
        rad += step[2];
        if step.norm() < 1e-15 {
            break;
        }
    }
    (cx, cy, rad)
}

fn _assert_send() {
    fn is_send<T: Send>() {}
    is_send::<TwoPhaseField>();
    is_send::<InterfaceState>();
}
