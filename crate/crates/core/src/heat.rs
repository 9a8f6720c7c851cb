//! Two-phase transmission heat solver on the reference annulus-plus-disk `0 ≤ r ≤ R*`.
//!
//! The radial direction uses a conservative finite-volume stencil with a node shared by
//! both phases at `r = 1`; the angular direction is handled mode by mode through FFTs.
//! Backward Euler is applied to the constant-coefficient Laplacian while the pullback
//! corrections enter explicitly.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, StefanError};
use crate::pullback::PullbackCoeffs;
use crate::spectral::ThetaGrid;

/// Zone-uniform radial nodes with a shared interface node at `r = 1`.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    pub n_minus: usize,
    pub n_plus: usize,
    pub rstar: f64,
    pub theta: ThetaGrid,
    r: Vec<f64>,
    vol: Vec<f64>,
    /// `r_{i+1/2}/(r_{i+1} − r_i)` for the edge between `i` and `i+1`.
    cond: Vec<f64>,
}

impl RadialGrid {
    pub fn new(n_minus: usize, n_plus: usize, m: usize, rstar: f64) -> Result<Self> {
        if n_minus < 3 || n_plus < 3 {
            return Err(StefanError::InvalidGrid("each zone needs at least 3 cells".into()));
        }
        if !(rstar > 1.0) {
            return Err(StefanError::InvalidGrid(format!("R* = {rstar} must exceed 1")));
        }
        let theta = ThetaGrid::new(m)?;
        let hm = 1.0 / n_minus as f64;
        let hp = (rstar - 1.0) / n_plus as f64;
        let mut r: Vec<f64> = (0..=n_minus).map(|i| i as f64 * hm).collect();
        r.extend((1..=n_plus).map(|j| 1.0 + j as f64 * hp));
        r[n_minus] = 1.0;
        let nr = r.len();
        r[nr - 1] = rstar;
        let mut edges = vec![0.0; nr + 1];
        for i in 1..nr {
            edges[i] = 0.5 * (r[i - 1] + r[i]);
        }
        edges[nr] = rstar;
        let vol = (0..nr)
            .map(|i| 0.5 * (edges[i + 1].powi(2) - edges[i].powi(2)))
            .collect();
        let cond = (0..nr - 1).map(|i| edges[i + 1] / (r[i + 1] - r[i])).collect();
        Ok(Self {
            n_minus,
            n_plus,
            rstar,
            theta,
            r,
            vol,
            cond,
        })
    }

    pub fn nr(&self) -> usize {
        self.r.len()
    }

    pub fn m(&self) -> usize {
        self.theta.len()
    }

    pub fn iface(&self) -> usize {
        self.n_minus
    }

    pub fn h_minus(&self) -> f64 {
        1.0 / self.n_minus as f64
    }

    pub fn h_plus(&self) -> f64 {
        (self.rstar - 1.0) / self.n_plus as f64
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    /// Finite-volume cell areas per radian, `∫ r dr` over each dual cell.
    pub fn volumes(&self) -> &[f64] {
        &self.vol
    }

    /// The interface dual cell split into its inner and outer halves.
    pub fn iface_half_volumes(&self) -> (f64, f64) {
        let hm = self.h_minus();
        let hp = self.h_plus();
        (
            0.5 * (1.0 - (1.0 - 0.5 * hm).powi(2)),
            0.5 * ((1.0 + 0.5 * hp).powi(2) - 1.0),
        )
    }

    pub fn conductances(&self) -> &[f64] {
        &self.cond
    }

    /// Wave number carried by FFT index `q`.
    pub fn wavenumber(&self, q: usize) -> usize {
        let m = self.m();
        q.min(m - q)
    }

    pub fn zeros(&self) -> TwoPhaseField {
        TwoPhaseField {
            nr: self.nr(),
            m: self.m(),
            u: vec![0.0; self.nr() * self.m()],
        }
    }

    /// Sample `u(r, θ)` at every node.
    pub fn sample(&self, u: impl Fn(f64, f64) -> f64) -> TwoPhaseField {
        let mut out = self.zeros();
        for (i, &r) in self.r.iter().enumerate() {
            for (j, &t) in self.theta.nodes().iter().enumerate() {
                out.u[i * self.m() + j] = if i == 0 { u(0.0, 0.0) } else { u(r, t) };
            }
        }
        out
    }
}

/// Temperature samples `u[i·M + j] = u(r_i, θ_j)`, single-valued at `r = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseField {
    nr: usize,
    m: usize,
    pub u: Vec<f64>,
}

impl TwoPhaseField {
    pub fn ring(&self, i: usize) -> &[f64] {
        &self.u[i * self.m..(i + 1) * self.m]
    }

    pub fn ring_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.u[i * self.m..(i + 1) * self.m]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.u[i * self.m + j]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nr, self.m)
    }

    pub fn sup_norm(&self) -> f64 {
        self.u.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn axpy(&mut self, s: f64, other: &TwoPhaseField) {
        self.u.iter_mut().zip(&other.u).for_each(|(a, b)| *a += s * b);
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().all(|v| v.is_finite())
    }
}

/// Factored tridiagonal system (Thomas algorithm without pivoting).
#[derive(Debug, Clone)]
struct Tridiag {
    sub: Vec<f64>,
    cp: Vec<f64>,
    inv: Vec<f64>,
}

impl Tridiag {
    fn factor(sub: Vec<f64>, diag: &[f64], sup: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut cp = vec![0.0; n];
        let mut inv = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let den = diag[i] - if i > 0 { sub[i] * prev } else { 0.0 };
            if den.abs() < 1e-300 || !den.is_finite() {
                return Err(StefanError::SingularSystem(format!("zero pivot at row {i}")));
            }
            inv[i] = 1.0 / den;
            cp[i] = sup[i] * inv[i];
            prev = cp[i];
        }
        Ok(Self { sub, cp, inv })
    }

    fn solve(&self, x: &mut [Complex<f64>]) {
        let n = x.len();
        x[0] *= self.inv[0];
        for i in 1..n {
            let prev = x[i - 1];
            x[i] = (x[i] - prev * self.sub[i]) * self.inv[i];
        }
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= next * self.cp[i];
        }
    }
}

/// Per-wavenumber factorizations and Dirichlet responses.
#[derive(Debug, Clone)]
struct ModeSystem {
    inner: Tridiag,
    outer: Tridiag,
    /// Coefficient multiplying the interface value in the last inner row.
    couple_in: f64,
    /// Coefficient multiplying the interface value in the first outer row.
    couple_out: f64,
    /// Response of `(I − dt L_k) ψ = 0` with `ψ(1) = 1`, on all radial nodes.
    psi: Vec<f64>,
    /// `[ψ_r]` at `r = 1` by the three-point one-sided formula.
    psi_jump: f64,
}

/// Discrete polar derivatives of a field (radial finite differences, angular FFT).
#[derive(Debug, Clone)]
pub struct PolarDerivatives {
    pub ur: Vec<f64>,
    pub urr: Vec<f64>,
    pub ut: Vec<f64>,
    pub utt: Vec<f64>,
    pub urt: Vec<f64>,
}

pub struct HeatSolver {
    grid: Arc<RadialGrid>,
    dt: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    modes: Vec<ModeSystem>,
}

impl std::fmt::Debug for HeatSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HeatSolver")
            .field("grid", &self.grid)
            .field("dt", &self.dt)
            .finish()
    }
}

impl HeatSolver {
    pub fn new(grid: Arc<RadialGrid>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(StefanError::InvalidConfig(format!("dt = {dt} must be positive")));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.m());
        let inv = planner.plan_fft_inverse(grid.m());
        let modes = (0..=grid.m() / 2)
            .map(|k| Self::build_mode(&grid, dt, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            dt,
            fwd,
            inv,
            modes,
        })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Row `i` of `L_k` as `(sub, diag, sup)`, for `i` not the origin and not the interface.
    fn stencil(grid: &RadialGrid, k: usize, i: usize) -> (f64, f64, f64) {
        let (r, vol, cond) = (grid.radii(), grid.volumes(), grid.conductances());
        let k2 = (k * k) as f64;
        let nr = grid.nr();
        let sub = cond[i - 1] / vol[i];
        let sup = if i + 1 < nr { cond[i] / vol[i] } else { 0.0 };
        (sub, -(sub + sup) - k2 / (r[i] * r[i]), sup)
    }

    fn build_mode(grid: &RadialGrid, dt: f64, k: usize) -> Result<ModeSystem> {
        let ni = grid.iface();
        let nr = grid.nr();
        let (vol, cond) = (grid.volumes(), grid.conductances());

        let mut sub = vec![0.0; ni];
        let mut diag = vec![1.0; ni];
        let mut sup = vec![0.0; ni];
        if k == 0 {
            let c = cond[0] / vol[0];
            diag[0] = 1.0 + dt * c;
            sup[0] = -dt * c;
        }
        let mut couple_in = 0.0;
        for i in 1..ni {
            let (l, d, u) = Self::stencil(grid, k, i);
            sub[i] = -dt * l;
            diag[i] = 1.0 - dt * d;
            if i + 1 < ni {
                sup[i] = -dt * u;
            } else {
                couple_in = dt * u;
            }
        }
        let inner = Tridiag::factor(sub, &diag, &sup)?;

        let no = nr - ni - 1;
        let mut sub = vec![0.0; no];
        let mut diag = vec![1.0; no];
        let mut sup = vec![0.0; no];
        let mut couple_out = 0.0;
        for (row, i) in (ni + 1..nr).enumerate() {
            let (l, d, u) = Self::stencil(grid, k, i);
            if row == 0 {
                couple_out = dt * l;
            } else {
                sub[row] = -dt * l;
            }
            diag[row] = 1.0 - dt * d;
            sup[row] = -dt * u;
        }
        let outer = Tridiag::factor(sub, &diag, &sup)?;

        let mut sys = ModeSystem {
            inner,
            outer,
            couple_in,
            couple_out,
            psi: vec![],
            psi_jump: 0.0,
        };
        let mut col = vec![Complex::new(0.0, 0.0); nr];
        Self::solve_column(&sys, &mut col, Complex::new(1.0, 0.0), ni);
        sys.psi = col.iter().map(|c| c.re).collect();
        sys.psi_jump = jump_of_profile(grid, &sys.psi);
        Ok(sys)
    }

    /// Solve one mode column in place given the interface value.
    fn solve_column(sys: &ModeSystem, col: &mut [Complex<f64>], iface_val: Complex<f64>, ni: usize) {
        col[ni] = iface_val;
        col[ni - 1] += iface_val * sys.couple_in;
        col[ni + 1] += iface_val * sys.couple_out;
        let (inner, rest) = col.split_at_mut(ni);
        sys.inner.solve(inner);
        sys.outer.solve(&mut rest[1..]);
    }

    fn forward_rings(&self, field: &TwoPhaseField) -> Vec<Complex<f64>> {
        let m = self.grid.m();
        let mut buf: Vec<Complex<f64>> = field.u.iter().map(|&v| Complex::new(v, 0.0)).collect();
        for ring in buf.chunks_mut(m) {
            self.fwd.process(ring);
        }
        buf
    }

    fn inverse_rings(&self, mut buf: Vec<Complex<f64>>) -> TwoPhaseField {
        let m = self.grid.m();
        for ring in buf.chunks_mut(m) {
            self.inv.process(ring);
        }
        let s = 1.0 / m as f64;
        TwoPhaseField {
            nr: self.grid.nr(),
            m,
            u: buf.iter().map(|c| c.re * s).collect(),
        }
    }

    /// Apply the discrete Laplacian mode by mode (interface rows use the flux balance of
    /// the shared dual cell).
    pub fn apply_laplacian(&self, field: &TwoPhaseField) -> TwoPhaseField {
        let grid = &self.grid;
        let (m, nr) = (grid.m(), grid.nr());
        let spec = self.forward_rings(field);
        let mut out = vec![Complex::new(0.0, 0.0); nr * m];
        let (vol, cond) = (grid.volumes(), grid.conductances());
        for q in 0..m {
            let k = grid.wavenumber(q);
            let c = |i: usize| spec[i * m + q];
            out[q] = if k == 0 {
                (c(1) - c(0)) * (cond[0] / vol[0])
            } else {
                Complex::new(0.0, 0.0)
            };
            for i in 1..nr {
                let (l, d, u) = if i == grid.iface() {
                    let l = cond[i - 1] / vol[i];
                    let u = cond[i] / vol[i];
                    (l, -(l + u) - (k * k) as f64, u)
                } else {
                    Self::stencil(grid, k, i)
                };
                let mut v = c(i - 1) * l + c(i) * d;
                if i + 1 < nr {
                    v += c(i + 1) * u;
                }
                out[i * m + q] = if k > 0 && i == 0 { Complex::new(0.0, 0.0) } else { v };
            }
        }
        self.inverse_rings(out)
    }

    /// Solve `(I − dt Δ_h) u = rhs` with the interface value prescribed (samples over θ).
    pub fn implicit_solve(&self, rhs: &TwoPhaseField, dirichlet: &[f64]) -> Result<TwoPhaseField> {
        let grid = &self.grid;
        let (m, nr, ni) = (grid.m(), grid.nr(), grid.iface());
        if dirichlet.len() != m {
            return Err(StefanError::InvalidGrid("dirichlet samples do not match M".into()));
        }
        let mut spec = self.forward_rings(rhs);
        let mut dir: Vec<Complex<f64>> = dirichlet.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fwd.process(&mut dir);
        let mut col = vec![Complex::new(0.0, 0.0); nr];
        for q in 0..m {
            let k = grid.wavenumber(q);
            for i in 0..nr {
                col[i] = spec[i * m + q];
            }
            if k > 0 {
                col[0] = Complex::new(0.0, 0.0);
            }
            Self::solve_column(&self.modes[k], &mut col, dir[q], ni);
            for i in 0..nr {
                spec[i * m + q] = col[i];
            }
        }
        let out = self.inverse_rings(spec);
        if !out.is_finite() {
            return Err(StefanError::SingularSystem("non-finite implicit solution".into()));
        }
        Ok(out)
    }

    /// One IMEX step: backward Euler on the Laplacian, explicit pullback correction.
    pub fn imex_step(
        &self,
        field: &TwoPhaseField,
        coeffs: Option<&PullbackCoeffs>,
        dirichlet: &[f64],
    ) -> Result<TwoPhaseField> {
        let mut rhs = field.clone();
        if let Some(c) = coeffs {
            let corr = self.correction(field, c);
            rhs.axpy(self.dt, &corr);
        }
        self.implicit_solve(&rhs, dirichlet)
    }

    /// Mode-`k` Dirichlet response profile and its normal jump.
    pub fn dirichlet_response(&self, k: usize) -> (&[f64], f64) {
        let s = &self.modes[k];
        (&s.psi, s.psi_jump)
    }

    /// Add `Σ_k ψ_k(r) δD_k(θ)` for interface increments `delta` (samples over θ).
    pub fn add_dirichlet_response(&self, field: &mut TwoPhaseField, delta: &[f64]) {
        let grid = &self.grid;
        let m = grid.m();
        let mut dir: Vec<Complex<f64>> = delta.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fwd.process(&mut dir);
        let s = 1.0 / m as f64;
        let mut ring = vec![Complex::new(0.0, 0.0); m];
        for i in 0..grid.nr() {
            for q in 0..m {
                ring[q] = dir[q] * self.modes[grid.wavenumber(q)].psi[i];
            }
            self.inv.process(&mut ring);
            for (u, c) in field.ring_mut(i).iter_mut().zip(&ring) {
                *u += c.re * s;
            }
        }
    }

    /// Radial finite differences and spectral angular derivatives.
    ///
    /// Rows at the origin and at the interface are left at zero; they are never used
    /// with these values.
    pub fn derivatives(&self, field: &TwoPhaseField) -> PolarDerivatives {
        let grid = &self.grid;
        let (m, nr, ni) = (grid.m(), grid.nr(), grid.iface());
        let spec = self.forward_rings(field);
        let mut d1 = vec![Complex::new(0.0, 0.0); nr * m];
        let mut d2 = vec![Complex::new(0.0, 0.0); nr * m];
        for i in 0..nr {
            for q in 0..m {
                let k = grid.wavenumber(q) as f64;
                // signed wave number; the Nyquist mode has no odd derivative
                let ks = if 2 * q == m {
                    0.0
                } else if q < m / 2 {
                    k
                } else {
                    -k
                };
                let c = spec[i * m + q];
                d1[i * m + q] = c * Complex::new(0.0, ks);
                d2[i * m + q] = c * (-k * k);
            }
        }
        let ut = self.inverse_rings(d1).u;
        let utt = self.inverse_rings(d2).u;
        let r = grid.radii();
        let mut ur = vec![0.0; nr * m];
        let mut urr = vec![0.0; nr * m];
        let mut urt = vec![0.0; nr * m];
        for i in 1..nr {
            if i == ni {
                continue;
            }
            for j in 0..m {
                let idx = i * m + j;
                if i + 1 < nr {
                    let (hl, hr) = (r[i] - r[i - 1], r[i + 1] - r[i]);
                    let h = 0.5 * (hl + hr);
                    ur[idx] = (field.u[idx + m] - field.u[idx - m]) / (2.0 * h);
                    urr[idx] = (field.u[idx + m] - 2.0 * field.u[idx] + field.u[idx - m]) / (h * h);
                    urt[idx] = (ut[idx + m] - ut[idx - m]) / (2.0 * h);
                } else {
                    let h = r[i] - r[i - 1];
                    ur[idx] = 0.0;
                    urr[idx] = 2.0 * (field.u[idx - m] - field.u[idx]) / (h * h);
                    urt[idx] = 0.0;
                }
            }
        }
        PolarDerivatives { ur, urr, ut, utt, urt }
    }

    /// Explicit correction `a_ij ∂_ij u + b_i ∂_i u` at every node (zero at the interface).
    pub fn correction(&self, field: &TwoPhaseField, coeffs: &PullbackCoeffs) -> TwoPhaseField {
        let grid = &self.grid;
        let (m, nr, ni) = (grid.m(), grid.nr(), grid.iface());
        let mut out = grid.zeros();
        let d = self.derivatives(field);
        let r = grid.radii();
        for i in 1..nr {
            if i == ni || !coeffs.ring_active(i) {
                continue;
            }
            for (j, &t) in grid.theta.nodes().iter().enumerate() {
                let idx = i * m + j;
                let (s, c) = t.sin_cos();
                let ri = r[i];
                let (ur, utr) = (d.ur[idx], d.ut[idx] / ri);
                let ux = c * ur - s * utr;
                let uy = s * ur + c * utr;
                let lap_t = d.ur[idx] / ri + d.utt[idx] / (ri * ri);
                let mix = d.urt[idx] / ri - d.ut[idx] / (ri * ri);
                let uxx = c * c * d.urr[idx] + s * s * lap_t - 2.0 * c * s * mix;
                let uyy = s * s * d.urr[idx] + c * c * lap_t + 2.0 * c * s * mix;
                let uxy = c * s * (d.urr[idx] - lap_t) + (c * c - s * s) * mix;
                let a = coeffs.a(i, j);
                let b = coeffs.b(i, j);
                out.u[idx] = a[0] * uxx + 2.0 * a[1] * uxy + a[2] * uyy + b[0] * ux + b[1] * uy;
            }
        }
        // origin: isotropic part only, the limit value of π is direction independent
        let p0 = coeffs.pi_origin();
        if p0 != 1.0 {
            let ring1_mean = field.ring(1).iter().sum::<f64>() / m as f64;
            let lap0 = (ring1_mean - field.at(0, 0)) * (grid.conductances()[0] / grid.volumes()[0]);
            let v = (p0 * p0 - 1.0) * lap0;
            out.ring_mut(0).iter_mut().for_each(|o| *o = v);
        }
        out
    }
}

/// `[u_r]` at `r = 1` of a radial profile (outer minus inner, three-point one-sided).
pub fn jump_of_profile(grid: &RadialGrid, p: &[f64]) -> f64 {
    let i = grid.iface();
    let inner = (3.0 * p[i] - 4.0 * p[i - 1] + p[i - 2]) / (2.0 * grid.h_minus());
    let outer = (-3.0 * p[i] + 4.0 * p[i + 1] - p[i + 2]) / (2.0 * grid.h_plus());
    outer - inner
}

/// One-sided radial derivatives `(inner, outer)` at the interface for each θ node.
pub fn one_sided_radial(grid: &RadialGrid, field: &TwoPhaseField) -> (Vec<f64>, Vec<f64>) {
    let i = grid.iface();
    let (a, b) = (grid.h_minus(), grid.h_plus());
    let (um2, um1, u0, up1, up2) = (
        field.ring(i - 2),
        field.ring(i - 1),
        field.ring(i),
        field.ring(i + 1),
        field.ring(i + 2),
    );
    let inner = (0..grid.m())
        .map(|j| (3.0 * u0[j] - 4.0 * um1[j] + um2[j]) / (2.0 * a))
        .collect();
    let outer = (0..grid.m())
        .map(|j| (-3.0 * u0[j] + 4.0 * up1[j] - up2[j]) / (2.0 * b))
        .collect();
    (inner, outer)
}

/// `[ū_r]` at the reference interface, outer minus inner.
pub fn normal_jump(grid: &RadialGrid, field: &TwoPhaseField) -> Vec<f64> {
    let (inner, outer) = one_sided_radial(grid, field);
    outer.iter().zip(&inner).map(|(o, i)| o - i).collect()
}

/// `∫ u` over the reference domain with finite-volume weights.
pub fn integral(grid: &RadialGrid, field: &TwoPhaseField) -> f64 {
    let dth = grid.theta.spacing();
    grid.volumes()
        .iter()
        .enumerate()
        .map(|(i, v)| v * field.ring(i).iter().sum::<f64>())
        .sum::<f64>()
        * dth
}

/// `∫ u²` over the reference domain.
pub fn l2_sq(grid: &RadialGrid, field: &TwoPhaseField) -> f64 {
    let dth = grid.theta.spacing();
    grid.volumes()
        .iter()
        .enumerate()
        .map(|(i, v)| v * field.ring(i).iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        * dth
}
