//! Linearization at the steady circle: the transmission eigenproblem
//! `λv = Δv`, `v(1) = (k²−1) f̂`, `[v_r](1) = λ f̂`, `v_r(R*) = 0`, per Fourier mode,
//! its variational characterization and the inner products used for the growth analysis.
//!
//! `[v_r]` is outer minus inner; the interface normal of the evolution points into the
//! inner phase, so `[v_n] = −[v_r] = −λ f̂`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Result, StefanError};
use crate::heat::{RadialGrid, TwoPhaseField};
use crate::spectral::FourierSeries;

/// `ζ = 1/|Ω| − 1/|S¹|` for `σ = 1` and unit radius; negative means unstable.
pub fn zeta(rstar: f64) -> f64 {
    1.0 / (PI * rstar * rstar) - 1.0 / (2.0 * PI)
}

/// General threshold `1/(σ|Ω|) − 1/(|S_R̄| R̄²)`; reporting only.
pub fn zeta_general(sigma: f64, rstar: f64, rbar: f64) -> f64 {
    1.0 / (sigma * PI * rstar * rstar) - 1.0 / (2.0 * PI * rbar.powi(3))
}

/// Default upper end of the positive bracket.
pub const LAMBDA_MAX: f64 = 50.0;
const LAMBDA_MIN: f64 = 1e-6;
const SERIES_START: f64 = 0.1;

/// Radial shooting for one Fourier mode.
#[derive(Debug, Clone, Copy)]
pub struct DispersionProblem {
    pub k: usize,
    pub rstar: f64,
    /// RK4 steps per unit length.
    pub steps_per_unit: usize,
}

/// `(v, v')` at `r = 1` of the regular inner and Neumann outer solutions.
#[derive(Debug, Clone, Copy)]
pub struct Matching {
    pub inner: (f64, f64),
    pub outer: (f64, f64),
}

fn series(k: usize, lambda: f64, r: f64) -> (f64, f64) {
    // v = Σ c_j r^{k+2j}, c_j = c_{j−1} λ / (4 j (j+k))
    let (mut c, mut v, mut dv) = (1.0, 0.0, 0.0);
    let rk = r.powi(k as i32);
    let mut p = 1.0;
    for j in 0..200 {
        if j > 0 {
            c *= lambda / (4.0 * j as f64 * (j + k) as f64);
            p *= r * r;
        }
        let term = c * p;
        v += term;
        dv += c * (k + 2 * j) as f64 * p;
        if term.abs() < 1e-18 * v.abs() && j > 2 {
            break;
        }
    }
    (v * rk, dv * rk / r)
}

impl DispersionProblem {
    pub fn new(k: usize, rstar: f64) -> Result<Self> {
        if !(rstar > 1.0) || !rstar.is_finite() {
            return Err(StefanError::InvalidConfig(format!("R* = {rstar} must exceed 1")));
        }
        Ok(Self {
            k,
            rstar,
            steps_per_unit: 4000,
        })
    }

    pub fn with_steps(mut self, steps_per_unit: usize) -> Self {
        self.steps_per_unit = steps_per_unit.max(10);
        self
    }

    fn rhs(&self, lambda: f64, r: f64, y: (f64, f64)) -> (f64, f64) {
        let k2 = (self.k * self.k) as f64;
        (y.1, -y.1 / r + (lambda + k2 / (r * r)) * y.0)
    }

    /// RK4 from `(a, y)` to `b`, optionally recording every node.
    fn integrate(
        &self,
        lambda: f64,
        a: f64,
        b: f64,
        mut y: (f64, f64),
        mut rec: Option<&mut Vec<(f64, f64, f64)>>,
    ) -> (f64, f64) {
        let n = ((b - a).abs() * self.steps_per_unit as f64).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        if let Some(r) = rec.as_deref_mut() {
            r.push((a, y.0, y.1));
        }
        for s in 0..n {
            let r = a + s as f64 * h;
            let k1 = self.rhs(lambda, r, y);
            let k2 = self.rhs(lambda, r + 0.5 * h, (y.0 + 0.5 * h * k1.0, y.1 + 0.5 * h * k1.1));
            let k3 = self.rhs(lambda, r + 0.5 * h, (y.0 + 0.5 * h * k2.0, y.1 + 0.5 * h * k2.1));
            let k4 = self.rhs(lambda, r + h, (y.0 + h * k3.0, y.1 + h * k3.1));
            y.0 += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            y.1 += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            if let Some(rv) = rec.as_deref_mut() {
                let r = if s + 1 == n { b } else { a + (s + 1) as f64 * h };
                rv.push((r, y.0, y.1));
            }
        }
        y
    }

    pub fn matching(&self, lambda: f64) -> Result<Matching> {
        let start = series(self.k, lambda, SERIES_START);
        let inner = self.integrate(lambda, SERIES_START, 1.0, start, None);
        let outer = self.integrate(lambda, self.rstar, 1.0, (1.0, 0.0), None);
        let m = Matching { inner, outer };
        if [inner.0, inner.1, outer.0, outer.1]
            .iter()
            .all(|v| v.is_finite() && v.abs() < 1e250)
        {
            Ok(m)
        } else {
            Err(StefanError::BracketTooWide { lambda })
        }
    }

    /// `D_k(λ) = (k²−1)(φ⁻φ⁺' − φ⁺φ⁻') − λφ⁻φ⁺` at `r = 1`.
    pub fn d(&self, lambda: f64) -> Result<f64> {
        let m = self.matching(lambda)?;
        let k2 = (self.k * self.k) as f64 - 1.0;
        let (pm, dpm) = m.inner;
        let (pp, dpp) = m.outer;
        Ok(k2 * (pm * dpp - pp * dpm) - lambda * pm * pp)
    }

    /// `D_k(λ)/λ` for `k ≤ 1`, removing the root at the origin; `D_k` otherwise.
    pub fn d_deflated(&self, lambda: f64) -> Result<f64> {
        let d = self.d(lambda)?;
        Ok(if self.k <= 1 { d / lambda } else { d })
    }

    /// Roots of the deflated dispersion function on `[lo, hi]` from `samples` sign checks.
    pub fn roots(&self, lo: f64, hi: f64, samples: usize) -> Result<Vec<f64>> {
        let grid = bracket_grid(lo, hi, samples);
        let vals = grid.iter().map(|&l| self.d_deflated(l)).collect::<Result<Vec<f64>>>()?;
        let mut out = Vec::new();
        for w in 0..grid.len() - 1 {
            if vals[w] == 0.0 {
                out.push(grid[w]);
            } else if vals[w] * vals[w + 1] < 0.0 {
                out.push(self.bisect(grid[w], grid[w + 1], vals[w])?);
            }
        }
        Ok(out)
    }

    fn bisect(&self, mut a: f64, mut b: f64, mut fa: f64) -> Result<f64> {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let fm = self.d_deflated(m)?;
            if fm == 0.0 {
                return Ok(m);
            }
            if fa * fm < 0.0 {
                b = m;
            } else {
                a = m;
                fa = fm;
            }
            if (b - a).abs() <= 1e-15 * b.abs().max(1e-300) {
                break;
            }
        }
        Ok(0.5 * (a + b))
    }
}

/// Sample points: geometric below 1 (if the bracket starts there), uniform above.
fn bracket_grid(lo: f64, hi: f64, samples: usize) -> Vec<f64> {
    let samples = samples.max(4);
    let mut g = Vec::new();
    if lo > 0.0 && lo < 1.0 && hi > 1.0 {
        let n = samples / 4;
        for i in 0..n {
            g.push(lo * (1.0 / lo).powf(i as f64 / n as f64));
        }
        for i in 0..=samples {
            g.push(1.0 + (hi - 1.0) * i as f64 / samples as f64);
        }
    } else {
        for i in 0..=samples {
            g.push(lo + (hi - lo) * i as f64 / samples as f64);
        }
    }
    g
}

/// `D_k(λ)` with the default integrator.
pub fn dispersion(k: usize, lambda: f64, rstar: f64) -> Result<f64> {
    DispersionProblem::new(k, rstar)?.d(lambda)
}

/// Eigenvalue and radial profile of one mode, normalized to unit `⟨·,·⟩_I` norm.
#[derive(Debug, Clone, Serialize)]
pub struct EigenMode {
    pub lambda: f64,
    pub k: usize,
    pub rstar: f64,
    /// Interface amplitude.
    pub fhat: f64,
    /// Radial table `(r, v, v')` on `[0, R*]`, increasing in `r`.
    pub table: Vec<(f64, f64, f64)>,
}

impl EigenMode {
    /// Build the mode for a root `lambda` of `D_k`, with weight `i_weight` in the norm.
    pub fn from_root(problem: &DispersionProblem, lambda: f64, i_weight: f64) -> Result<Self> {
        let k = problem.k;
        if k == 1 {
            return Err(StefanError::InvalidConfig("k = 1 modes are translations".into()));
        }
        let mut inner = Vec::new();
        let nser = 20;
        for i in 0..nser {
            let r = SERIES_START * i as f64 / nser as f64;
            let (v, dv) = if r == 0.0 {
                (if k == 0 { 1.0 } else { 0.0 }, if k == 1 { 1.0 } else { 0.0 })
            } else {
                series(k, lambda, r)
            };
            inner.push((r, v, dv));
        }
        let start = series(k, lambda, SERIES_START);
        let mut rec = Vec::new();
        problem.integrate(lambda, SERIES_START, 1.0, start, Some(&mut rec));
        inner.extend(rec);
        let mut outer = Vec::new();
        problem.integrate(lambda, problem.rstar, 1.0, (1.0, 0.0), Some(&mut outer));
        outer.reverse();
        let a = 1.0 / inner.last().expect("nonempty").1;
        let b = 1.0 / outer[0].1;
        let mut table: Vec<(f64, f64, f64)> = inner.iter().map(|&(r, v, d)| (r, a * v, a * d)).collect();
        table.extend(outer.iter().map(|&(r, v, d)| (r, b * v, b * d)));
        let fhat = 1.0 / ((k * k) as f64 - 1.0);
        let mut mode = Self {
            lambda,
            k,
            rstar: problem.rstar,
            fhat,
            table,
        };
        let scale = mode.continuum_norm_i(i_weight);
        if !(scale > 0.0) {
            return Err(StefanError::SingularSystem(format!("non-positive mode norm {scale}")));
        }
        mode.scale(1.0 / scale.sqrt());
        Ok(mode)
    }

    fn scale(&mut self, s: f64) {
        self.fhat *= s;
        for e in &mut self.table {
            e.1 *= s;
            e.2 *= s;
        }
    }

    fn angular(&self) -> f64 {
        if self.k == 0 {
            2.0 * PI
        } else {
            PI
        }
    }

    fn integrate_table(&self, g: impl Fn(f64, f64, f64) -> f64) -> f64 {
        // trapezoid on the (fine, piecewise uniform) RK4 table
        self.table
            .windows(2)
            .map(|w| {
                let (r0, v0, d0) = w[0];
                let (r1, v1, d1) = w[1];
                0.5 * (r1 - r0) * (g(r0, v0, d0) + g(r1, v1, d1))
            })
            .sum()
    }

    /// `⟨e, e⟩` and `∫|∇v|²` in the continuum (table quadrature).
    pub fn continuum_forms(&self) -> (f64, f64) {
        let k2 = (self.k * self.k) as f64;
        let l2 = self.integrate_table(|r, v, _| v * v * r);
        let grad = self.integrate_table(|r, v, d| d * d * r + if r > 0.0 { k2 * v * v / r } else { 0.0 });
        let fpart = if self.k == 0 {
            -self.fhat * self.fhat
        } else {
            (k2 - 1.0) * self.fhat * self.fhat
        };
        (self.angular() * (l2 + fpart), self.angular() * grad)
    }

    pub fn continuum_norm_i(&self, i_weight: f64) -> f64 {
        let (b, g) = self.continuum_forms();
        b + (1.0 / self.lambda + i_weight) * g
    }

    /// Radial profile by cubic Hermite interpolation of the table.
    pub fn value(&self, r: f64) -> f64 {
        let t = &self.table;
        let idx = match t.binary_search_by(|e| e.0.partial_cmp(&r).expect("finite radii")) {
            Ok(i) => return t[i].1,
            Err(i) => i.clamp(1, t.len() - 1),
        };
        let (r0, v0, d0) = t[idx - 1];
        let (r1, v1, d1) = t[idx];
        let h = r1 - r0;
        let s = (r - r0) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        h00 * v0 + h10 * h * d0 + h01 * v1 + h11 * h * d1
    }

    /// Residuals of the interface couplings: continuity, Dirichlet, jump, Neumann.
    pub fn coupling_residuals(&self) -> [f64; 4] {
        let iface = self
            .table
            .iter()
            .position(|e| e.0 == 1.0)
            .expect("r = 1 is a table node");
        let (_, vin, din) = self.table[iface];
        let (_, vout, dout) = self.table[iface + 1];
        let last = self.table.last().expect("nonempty");
        let k2 = (self.k * self.k) as f64 - 1.0;
        [
            (vin - vout).abs(),
            (vin - k2 * self.fhat).abs(),
            (dout - din - self.lambda * self.fhat).abs(),
            last.2.abs(),
        ]
    }

    /// The mode as a `(w, f)` pair on a grid with angular dependence `cos kθ`.
    pub fn pair(&self, grid: &RadialGrid, kcut: usize) -> FieldPair {
        let k = self.k;
        let w = grid.sample(|r, t| self.value(r) * (k as f64 * t).cos());
        let mut w = w;
        if k > 0 {
            w.ring_mut(0).iter_mut().for_each(|v| *v = 0.0);
        } else {
            let v0 = self.value(0.0);
            w.ring_mut(0).iter_mut().for_each(|v| *v = v0);
        }
        FieldPair {
            w,
            f: FourierSeries::mode(kcut, k, self.fhat, 0.0),
        }
    }
}

/// Smallest positive eigenvalue of mode 0, if any.
pub fn find_lambda0(rstar: f64) -> Result<Option<EigenMode>> {
    find_lambda0_with(DispersionProblem::new(0, rstar)?, LAMBDA_MAX, 1.0)
}

pub fn find_lambda0_with(problem: DispersionProblem, lambda_max: f64, i_weight: f64) -> Result<Option<EigenMode>> {
    let roots = problem.roots(LAMBDA_MIN, lambda_max, 400)?;
    match roots.len() {
        0 => Ok(None),
        1 => EigenMode::from_root(&problem, roots[0], i_weight).map(Some),
        _ => Err(StefanError::ReportAllRoots { roots }),
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (5 points).
const GL5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Symmetric tridiagonal matrix (diagonal and first off-diagonal).
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    fn zeros(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            off: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.off[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul(x).iter().zip(y).map(|(a, b)| a * b).sum()
    }

    fn combine(&self, s: f64, other: &SymTridiag) -> SymTridiag {
        SymTridiag {
            diag: self.diag.iter().zip(&other.diag).map(|(a, b)| a + s * b).collect(),
            off: self.off.iter().zip(&other.off).map(|(a, b)| a + s * b).collect(),
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }
}

/// LU of a general tridiagonal matrix with partial pivoting.
#[derive(Debug, Clone)]
pub struct TridiagLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swap: Vec<bool>,
}

impl TridiagLu {
    pub fn new(a: &SymTridiag) -> Result<Self> {
        let n = a.len();
        let (mut dl, mut d, mut du) = (a.off.clone(), a.diag.clone(), a.off.clone());
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swap = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    return Err(StefanError::SingularSystem("zero pivot in tridiagonal LU".into()));
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swap[i] = true;
            }
        }
        if n > 0 && d[n - 1] == 0.0 {
            return Err(StefanError::SingularSystem("zero pivot in tridiagonal LU".into()));
        }
        Ok(Self { dl, d, du, du2, swap })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut x = b.to_vec();
        for i in 0..n.saturating_sub(1) {
            if self.swap[i] {
                let t = x[i];
                x[i] = x[i + 1];
                x[i + 1] = t - self.dl[i] * x[i];
            } else {
                x[i + 1] -= self.dl[i] * x[i];
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            if i + 1 < n {
                s -= self.du[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= self.du2[i] * x[i + 2];
            }
            x[i] = s / self.d[i];
        }
        x
    }
}

/// Piecewise-linear finite elements for one mode of the quotient
/// `⟨(v,f),(v,f)⟩ / ∫|∇v|²` (the common angular factor dropped).
#[derive(Debug, Clone)]
pub struct RadialFe {
    pub k: usize,
    pub rstar: f64,
    /// Radii of the unknowns (essential nodes removed).
    pub nodes: Vec<f64>,
    /// Index of the interface node among the unknowns, if present.
    pub iface: Option<usize>,
    /// Stiffness `∫(v'² + k²v²/r²) r dr`.
    pub stiff: SymTridiag,
    /// `∫v² r dr` plus the interface term of the `f` part.
    pub gram: SymTridiag,
    /// Constraint row `∫v r dr − v(1)` (mode 0 only).
    pub constraint: Option<Vec<f64>>,
}

impl RadialFe {
    /// `n_in` intervals on `[0, 1]`, `ceil(n_in (R*−1))` on `[1, R*]`.
    pub fn new(k: usize, rstar: f64, n_in: usize) -> Result<Self> {
        if !(rstar > 1.0) {
            return Err(StefanError::InvalidConfig(format!("R* = {rstar} must exceed 1")));
        }
        if n_in < 2 {
            return Err(StefanError::InvalidGrid("need at least 2 inner intervals".into()));
        }
        let n_out = ((n_in as f64) * (rstar - 1.0)).ceil().max(2.0) as usize;
        let mut r: Vec<f64> = (0..=n_in).map(|i| i as f64 / n_in as f64).collect();
        r.extend((1..=n_out).map(|i| 1.0 + (rstar - 1.0) * i as f64 / n_out as f64));
        let n = r.len();
        let k2 = (k * k) as f64;
        let mut stiff = SymTridiag::zeros(n);
        let mut mass = SymTridiag::zeros(n);
        let mut load = vec![0.0; n];
        for e in 0..n - 1 {
            let (a, b) = (r[e], r[e + 1]);
            let h = b - a;
            for &(x, w) in &GL5 {
                let rr = 0.5 * (a + b) + 0.5 * h * x;
                let wt = 0.5 * h * w;
                let (pa, pb) = ((b - rr) / h, (rr - a) / h);
                let inv = if k > 0 { k2 / rr } else { 0.0 };
                stiff.diag[e] += wt * (rr / (h * h) + inv * pa * pa);
                stiff.diag[e + 1] += wt * (rr / (h * h) + inv * pb * pb);
                stiff.off[e] += wt * (-rr / (h * h) + inv * pa * pb);
                mass.diag[e] += wt * rr * pa * pa;
                mass.diag[e + 1] += wt * rr * pb * pb;
                mass.off[e] += wt * rr * pa * pb;
                load[e] += wt * rr * pa;
                load[e + 1] += wt * rr * pb;
            }
        }
        let iface = n_in;
        match k {
            0 => mass.diag[iface] -= 1.0,
            1 => {}
            _ => mass.diag[iface] += 1.0 / (k2 - 1.0),
        }
        // essential nodes: origin for k ≥ 1, interface for k = 1
        let mut keep: Vec<usize> = (0..n).collect();
        if k == 1 {
            keep.retain(|&i| i != 0 && i != iface);
        } else if k >= 2 {
            keep.retain(|&i| i != 0);
        }
        let restrict = |m: &SymTridiag| -> SymTridiag {
            let mut out = SymTridiag::zeros(keep.len());
            for (p, &i) in keep.iter().enumerate() {
                out.diag[p] = m.diag[i];
                if p + 1 < keep.len() {
                    out.off[p] = if keep[p + 1] == i + 1 { m.off[i] } else { 0.0 };
                }
            }
            out
        };
        let constraint = (k == 0).then(|| {
            let mut c = load.clone();
            c[iface] -= 1.0;
            c
        });
        Ok(Self {
            k,
            rstar,
            nodes: keep.iter().map(|&i| r[i]).collect(),
            iface: keep.iter().position(|&i| i == iface),
            stiff: restrict(&stiff),
            gram: restrict(&mass),
            constraint,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `⟨y, y⟩ / ∫|∇v|²` for nodal values `x`.
    pub fn quotient(&self, x: &[f64]) -> f64 {
        self.gram.form(x, x) / self.stiff.form(x, x)
    }

    /// Interface amplitude `f̂` carried by nodal values `x`.
    pub fn fhat(&self, x: &[f64]) -> f64 {
        match (self.k, self.iface) {
            (1, _) | (_, None) => 0.0,
            (k, Some(i)) => x[i] / ((k * k) as f64 - 1.0),
        }
    }

    /// Discrete `L = −B⁻¹K` applied to `x`, with `B` the Gram matrix of `⟨·,·⟩`.
    pub fn apply_l(&self, x: &[f64]) -> Result<Vec<f64>> {
        let lu = TridiagLu::new(&self.gram)?;
        Ok(lu.solve(&self.stiff.mul(x)).into_iter().map(|v| -v).collect())
    }

    fn null_basis(&self) -> DMatrix<f64> {
        let n = self.len();
        match &self.constraint {
            None => DMatrix::identity(n, n),
            Some(c) => {
                let p = (0..n)
                    .max_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs()))
                    .expect("nonempty");
                let mut z = DMatrix::zeros(n, n - 1);
                let mut col = 0;
                for i in 0..n {
                    if i == p {
                        continue;
                    }
                    z[(i, col)] = 1.0;
                    z[(p, col)] = -c[i] / c[p];
                    col += 1;
                }
                z
            }
        }
    }

    /// Smallest constrained quotient by a dense generalized symmetric eigensolve.
    pub fn min_quotient_dense(&self) -> Result<(f64, Vec<f64>)> {
        let z = self.null_basis();
        let kz = z.transpose() * self.stiff.dense() * &z;
        let mz = z.transpose() * self.gram.dense() * &z;
        let chol = kz
            .cholesky()
            .ok_or_else(|| StefanError::SingularSystem("stiffness not positive on the constraint set".into()))?;
        let l = chol.l();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| StefanError::SingularSystem("singular Cholesky factor".into()))?;
        let c = &linv * mz * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = c.symmetric_eigen();
        let (imin, mu) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, v)| (i, *v))
            .expect("nonempty");
        let y = eig.eigenvectors.column(imin).into_owned();
        let xz = linv.transpose() * y;
        let x = &z * xz;
        Ok((mu, x.iter().cloned().collect()))
    }

    /// Rayleigh-quotient iteration for the constrained pencil from a starting guess.
    pub fn refine(&self, mut x: Vec<f64>, mut sigma: f64, iters: usize) -> Result<(f64, Vec<f64>)> {
        let mut mu = sigma;
        for it in 0..iters {
            let a = self.gram.combine(-sigma, &self.stiff);
            let lu = TridiagLu::new(&a)?;
            let rhs = self.stiff.mul(&x);
            let mut y = lu.solve(&rhs);
            if let Some(c) = &self.constraint {
                let yc = lu.solve(c);
                let s = dot(c, &y) / dot(c, &yc);
                y.iter_mut().zip(&yc).for_each(|(a, b)| *a -= s * b);
            }
            let nk = self.stiff.form(&y, &y).sqrt();
            if !(nk > 0.0) || !nk.is_finite() {
                return Err(StefanError::SingularSystem("inverse iteration broke down".into()));
            }
            x = y.into_iter().map(|v| v / nk).collect();
            let new_mu = self.gram.form(&x, &x);
            let done = (new_mu - mu).abs() <= 1e-15 * new_mu.abs();
            mu = new_mu;
            if it >= 1 {
                sigma = mu * (1.0 + 1e-13);
            }
            if done && it >= 2 {
                break;
            }
        }
        Ok((mu, x))
    }

    /// Linear interpolation of nodal values onto this mesh.
    pub fn interpolate_from(&self, other: &RadialFe, x: &[f64]) -> Vec<f64> {
        self.nodes
            .iter()
            .map(|&r| {
                let i = other.nodes.partition_point(|&q| q < r).clamp(1, other.len() - 1);
                let (r0, r1) = (other.nodes[i - 1], other.nodes[i]);
                let s = ((r - r0) / (r1 - r0)).clamp(0.0, 1.0);
                x[i - 1] * (1.0 - s) + x[i] * s
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of the variational computation of the growth rate.
#[derive(Debug, Clone, Serialize)]
pub struct RayleighResult {
    pub lambda0: f64,
    /// `min I = −1/λ₀`.
    pub min_quotient: f64,
    pub nodes: Vec<f64>,
    pub v: Vec<f64>,
    pub fhat: f64,
}

/// Largest mode-0 system solved densely; finer meshes use a dense seed and RQI.
const DENSE_LIMIT: usize = 400;

/// `min_{S⊥} ⟨y,y⟩/∫|∇v|²` on the mode-0 subspace with `n_in` intervals on `[0, 1]`.
pub fn rayleigh_min(rstar: f64, n_in: usize) -> Result<RayleighResult> {
    let fe = RadialFe::new(0, rstar, n_in)?;
    let (mu, x) = if fe.len() <= DENSE_LIMIT {
        fe.min_quotient_dense()?
    } else {
        let coarse = RadialFe::new(0, rstar, 128)?;
        let (mu0, x0) = coarse.min_quotient_dense()?;
        fe.refine(fe.interpolate_from(&coarse, &x0), mu0, 30)?
    };
    if mu >= 0.0 {
        return Err(StefanError::StableRegime { min_quotient: mu });
    }
    let fhat = -x[fe.iface.expect("mode 0 keeps the interface")];
    Ok(RayleighResult {
        lambda0: -1.0 / mu,
        min_quotient: mu,
        nodes: fe.nodes.clone(),
        v: x,
        fhat,
    })
}

/// Temperature–interface pair `(w, f)` on the reference grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub w: TwoPhaseField,
    pub f: FourierSeries,
}

impl FieldPair {
    pub fn axpy(&self, s: f64, other: &FieldPair) -> FieldPair {
        let mut w = self.w.clone();
        w.axpy(s, &other.w);
        FieldPair {
            w,
            f: self.f.axpy(s, &other.f),
        }
    }

    pub fn scale(&self, s: f64) -> FieldPair {
        let mut w = self.w.clone();
        w.u.iter_mut().for_each(|v| *v *= s);
        FieldPair { w, f: self.f.scale(s) }
    }
}

/// Discrete `⟨·,·⟩`, `⟨·,·⟩_I` and `||·||` on a reference grid.
#[derive(Debug, Clone)]
pub struct SpectralNorms {
    grid: Arc<RadialGrid>,
    pub lambda0: f64,
    pub i_weight: f64,
}

impl SpectralNorms {
    pub fn new(grid: Arc<RadialGrid>, lambda0: f64, i_weight: f64) -> Result<Self> {
        if !(lambda0 > 0.0) || !(i_weight > 0.0) {
            return Err(StefanError::InvalidConfig(format!(
                "need λ₀ > 0 and I > 0, got {lambda0}, {i_weight}"
            )));
        }
        Ok(Self {
            grid,
            lambda0,
            i_weight,
        })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    /// `∫vw` (finite-volume quadrature).
    pub fn l2(&self, v: &TwoPhaseField, w: &TwoPhaseField) -> f64 {
        let g = &self.grid;
        let m = g.m();
        let dth = g.theta.spacing();
        g.volumes()
            .iter()
            .enumerate()
            .map(|(i, vol)| vol * dth * v.ring(i).iter().zip(w.ring(i)).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
            * if m == 0 { 0.0 } else { 1.0 }
    }

    /// Discrete Dirichlet form `∫∇v·∇w`.
    pub fn grad(&self, v: &TwoPhaseField, w: &TwoPhaseField) -> f64 {
        let g = &self.grid;
        let (m, nr) = (g.m(), g.nr());
        let dth = g.theta.spacing();
        let cond = g.conductances();
        let mut s = 0.0;
        for i in 0..nr - 1 {
            for j in 0..m {
                let dv = v.at(i + 1, j) - v.at(i, j);
                let dw = w.at(i + 1, j) - w.at(i, j);
                s += cond[i] * dv * dw * dth;
            }
        }
        let kmax = m / 2 - 1;
        for i in 1..nr {
            let ri = g.radii()[i];
            let sv = FourierSeries::analyze(&g.theta, v.ring(i), kmax).expect("resolved");
            let sw = FourierSeries::analyze(&g.theta, w.ring(i), kmax).expect("resolved");
            let ang: f64 = (1..=kmax)
                .map(|k| PI * (k * k) as f64 * (sv.a(k) * sw.a(k) + sv.b(k) * sw.b(k)))
                .sum();
            s += g.volumes()[i] / (ri * ri) * ang;
        }
        s
    }

    fn f_form(f: &FourierSeries, g: &FourierSeries) -> f64 {
        let k = f.cutoff().min(g.cutoff());
        -2.0 * PI * f.a(0) * g.a(0)
            + (1..=k)
                .map(|q| PI * ((q * q) as f64 - 1.0) * (f.a(q) * g.a(q) + f.b(q) * g.b(q)))
                .sum::<f64>()
    }

    /// `⟨y1, y2⟩ = ∫vw + ∫(f_θ g_θ − f g)`.
    pub fn brackets(&self, y1: &FieldPair, y2: &FieldPair) -> f64 {
        self.l2(&y1.w, &y2.w) + Self::f_form(&y1.f, &y2.f)
    }

    /// `⟨y1, y2⟩ + (1/λ₀ + I)∫∇v·∇w`.
    pub fn brackets_i(&self, y1: &FieldPair, y2: &FieldPair) -> f64 {
        self.brackets(y1, y2) + (1.0 / self.lambda0 + self.i_weight) * self.grad(&y1.w, &y2.w)
    }

    /// Discrete container area.
    pub fn area(&self) -> f64 {
        let g = &self.grid;
        g.volumes().iter().sum::<f64>() * g.m() as f64 * g.theta.spacing()
    }

    /// Split `y = y_S + y⊥`: coefficient of `(1, −1)`, the `k = 1` part of `f`, and `y⊥`.
    pub fn split(&self, y: &FieldPair) -> (f64, (f64, f64), FieldPair) {
        let g = &self.grid;
        let ones = FieldPair {
            w: g.sample(|_, _| 1.0),
            f: FourierSeries::constant(y.f.cutoff(), -1.0),
        };
        let alpha = self.brackets(y, &ones) / (self.area() - 2.0 * PI);
        let mut perp = y.axpy(-alpha, &ones);
        let (a1, b1) = (y.f.a(1), y.f.b(1));
        perp.f.set(1, 0.0, 0.0);
        (alpha, (a1, b1), perp)
    }

    /// `||y||² = ||y_S||²_{L²×L²} + ||y⊥||²_I`.
    pub fn norm_low(&self, y: &FieldPair) -> f64 {
        let (alpha, (a1, b1), perp) = self.split(y);
        let ys = alpha * alpha * (self.area() + 2.0 * PI) + PI * (a1 * a1 + b1 * b1);
        (ys + self.brackets_i(&perp, &perp)).max(0.0).sqrt()
    }
}

/// Outcome of [`growth_check`].
#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub fitted_rate: f64,
    pub lambda0: f64,
    pub relative_error: f64,
    /// Projection coefficient of the normalized initial datum.
    pub c01: f64,
    /// `max ||y − δe^{λ₀t}c₀₁e₀|| / (δ²e^{2λ₀t} + δ)` over the window.
    pub bound_constant: f64,
    pub escape_time: f64,
    pub escape_norm: f64,
    pub window: (f64, f64),
    pub window_points: usize,
}

/// Projection growth of a trajectory of `(t, y(t))` onto the real growing mode `e0`.
pub fn growth_check(
    trajectory: &[(f64, FieldPair)],
    e0: &FieldPair,
    norms: &SpectralNorms,
    delta: f64,
    theta0: f64,
) -> Result<GrowthReport> {
    let lambda0 = norms.lambda0;
    let ee = norms.brackets_i(e0, e0);
    let coeff: Vec<f64> = trajectory.iter().map(|(_, y)| norms.brackets_i(y, e0) / ee).collect();
    let c01 = coeff.first().copied().unwrap_or(0.0) / delta;
    let (lo, hi) = (3.0 * delta, theta0 / 3.0);
    let pts: Vec<(f64, f64, usize)> = trajectory
        .iter()
        .zip(&coeff)
        .enumerate()
        .filter(|(_, (_, c))| c.abs() >= lo && c.abs() <= hi)
        .map(|(i, ((t, _), c))| (*t, c.abs().ln(), i))
        .collect();
    if pts.len() < 3 {
        return Err(StefanError::WindowEmpty);
    }
    let n = pts.len() as f64;
    let (mt, ml) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    let rate = sxy / sxx;
    let mut bound = 0.0_f64;
    for &(t, _, i) in &pts {
        let lin = e0.scale(delta * (lambda0 * t).exp() * c01);
        let dev = norms.norm_low(&trajectory[i].1.axpy(-1.0, &lin));
        let scale = delta * delta * (2.0 * lambda0 * t).exp() + delta;
        bound = bound.max(dev / scale);
    }
    let escape_time = (theta0 / delta).ln() / lambda0;
    let j = trajectory
        .iter()
        .position(|(t, _)| *t >= escape_time)
        .ok_or(StefanError::WindowEmpty)?;
    let escape_norm = if j == 0 {
        norms.norm_low(&trajectory[0].1)
    } else {
        let (t0, t1) = (trajectory[j - 1].0, trajectory[j].0);
        let (n0, n1) = (norms.norm_low(&trajectory[j - 1].1), norms.norm_low(&trajectory[j].1));
        n0 + (n1 - n0) * (escape_time - t0) / (t1 - t0)
    };
    Ok(GrowthReport {
        fitted_rate: rate,
        lambda0,
        relative_error: (rate - lambda0).abs() / lambda0,
        c01,
        bound_constant: bound,
        escape_time,
        escape_norm,
        window: (pts[0].0, pts[pts.len() - 1].0),
        window_points: pts.len(),
    })
}

/// `normalize(e0 + weight·ξ)` for a seeded random `ξ` in the interface domain: random
/// `f` in modes `2..=4` with the harmonic temperature trace `−(f + f_θθ)`, plus bumps
/// vanishing at `r = 1`.
pub fn perturbed_datum(e0: &FieldPair, norms: &SpectralNorms, weight: f64, seed: u64) -> Result<FieldPair> {
    let grid = norms.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = FourierSeries::zeros(e0.f.cutoff());
    for k in 2..=4usize.min(f.cutoff()) {
        f.set(k, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    let trace = f.axpy(1.0, &f.d_theta(2)).scale(-1.0).synthesize(&grid.theta);
    let mut w = crate::stefan::initial::harmonic_extension(grid, &trace);
    let (b0, b1): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let rstar = grid.rstar;
    w.axpy(
        1.0,
        &grid.sample(|r, t| {
            if r <= 1.0 {
                b0 * (1.0 - r * r)
            } else {
                b1 * (r - 1.0) * (rstar - r) * (2.0 * t).cos()
            }
        }),
    );
    let xi = FieldPair { w, f };
    let xi = xi.scale(1.0 / norms.norm_low(&xi));
    let y = e0.axpy(weight, &xi);
    Ok(y.scale(1.0 / norms.norm_low(&y)))
}

/// Simulate from `δ·y0` until the escape time and record `(t, y(t))` every `every` steps.
pub fn growth_trajectory(
    cfg: &crate::stefan::SimConfig,
    y0: &FieldPair,
    delta: f64,
    t_end: f64,
    every: usize,
) -> Result<Vec<(f64, FieldPair)>> {
    use crate::stefan::{initial, Simulation};
    let grid = cfg.grid()?;
    let start = y0.scale(delta);
    let (u, state) = initial::from_pair(&grid, &start.w, &start.f.with_cutoff(cfg.k))?;
    let mut sim = Simulation::new(cfg.clone(), u, state)?;
    let record = |sim: &Simulation| -> Result<(f64, FieldPair)> {
        let w = initial::to_pair_w(sim.grid(), &sim.field, &sim.state)?;
        Ok((
            sim.t,
            FieldPair {
                w,
                f: sim.state.f.with_cutoff(y0.f.cutoff()),
            },
        ))
    };
    let mut out = vec![record(&sim)?];
    let n = (t_end / cfg.dt).ceil() as usize;
    for s in 1..=n {
        sim.step()?;
        if s % every.max(1) == 0 || s == n {
            out.push(record(&sim)?);
        }
    }
    Ok(out)
}

/// Shifted inverse iteration over all modes `0..=kmax` from seeded random data.
#[derive(Debug, Clone, Serialize)]
pub struct GrowingMode2d {
    pub lambda0: f64,
    /// Quotient energy per wave number of the converged vector (cos and sin summed).
    pub mode_energy: Vec<f64>,
    /// Fraction of the sampled 2D angular energy outside `k = 0`.
    pub energy_outside_k0: f64,
    pub iterations: usize,
}

pub fn growing_mode_2d(rstar: f64, n_in: usize, kmax: usize, seed: u64, iterations: usize) -> Result<GrowingMode2d> {
    let blocks: Vec<RadialFe> = (0..=kmax)
        .map(|k| RadialFe::new(k, rstar, n_in))
        .collect::<Result<_>>()?;
    let (mu_seed, _) = blocks[0].min_quotient_dense()?;
    if mu_seed >= 0.0 {
        return Err(StefanError::StableRegime { min_quotient: mu_seed });
    }
    let sigma = mu_seed * (1.0 + 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // one vector per (k, cos/sin); the k = 0 sine slot stays empty
    let mut x: Vec<Vec<Vec<f64>>> = blocks
        .iter()
        .map(|b| {
            let parts = if b.k == 0 { 1 } else { 2 };
            (0..parts)
                .map(|_| (0..b.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    let lus: Vec<TridiagLu> = blocks
        .iter()
        .map(|b| TridiagLu::new(&b.gram.combine(-sigma, &b.stiff)))
        .collect::<Result<_>>()?;
    for _ in 0..iterations {
        let mut total = 0.0;
        for (b, (xs, lu)) in blocks.iter().zip(x.iter_mut().zip(&lus)) {
            for xv in xs.iter_mut() {
                let mut y = lu.solve(&b.stiff.mul(xv));
                if let Some(c) = &b.constraint {
                    let yc = lu.solve(c);
                    let s = dot(c, &y) / dot(c, &yc);
                    y.iter_mut().zip(&yc).for_each(|(a, q)| *a -= s * q);
                }
                total += b.stiff.form(&y, &y);
                *xv = y;
            }
        }
        let s = 1.0 / total.sqrt();
        x.iter_mut().flatten().flatten().for_each(|v| *v *= s);
    }
    let num: f64 = blocks
        .iter()
        .zip(&x)
        .map(|(b, xs)| xs.iter().map(|v| b.gram.form(v, v)).sum::<f64>() * if b.k == 0 { 2.0 } else { 1.0 })
        .sum();
    let den: f64 = blocks
        .iter()
        .zip(&x)
        .map(|(b, xs)| xs.iter().map(|v| b.stiff.form(v, v)).sum::<f64>() * if b.k == 0 { 2.0 } else { 1.0 })
        .sum();
    let mu = num / den;
    let mode_energy: Vec<f64> = blocks
        .iter()
        .zip(&x)
        .map(|(b, xs)| xs.iter().map(|v| b.stiff.form(v, v)).sum::<f64>() * if b.k == 0 { 2.0 * PI } else { PI })
        .collect();
    // synthesize on a polar grid and measure the angular content directly
    let m = 2 * kmax + 4;
    let theta = crate::spectral::ThetaGrid::new(m)?;
    let radii = &blocks[0].nodes;
    let (mut inside, mut outside) = (0.0, 0.0);
    let dr = radii.get(1).copied().unwrap_or(1.0);
    for &r in radii {
        let mut ring = vec![0.0; m];
        for (b, xs) in blocks.iter().zip(&x) {
            let Some(q) = b.nodes.iter().position(|&s| (s - r).abs() < 1e-14) else {
                continue;
            };
            for (j, &t) in theta.nodes().iter().enumerate() {
                let (s, c) = (b.k as f64 * t).sin_cos();
                ring[j] += xs[0][q] * c + xs.get(1).map_or(0.0, |v| v[q] * s);
            }
        }
        let sr = FourierSeries::analyze(&theta, &ring, m / 2 - 1)?;
        let w = r.max(0.25 * dr);
        inside += w * 2.0 * PI * sr.a(0) * sr.a(0);
        outside += w
            * (1..=sr.cutoff())
                .map(|k| PI * (sr.a(k).powi(2) + sr.b(k).powi(2)))
                .sum::<f64>();
    }
    Ok(GrowingMode2d {
        lambda0: -1.0 / mu,
        mode_energy,
        energy_outside_k0: outside / (inside + outside),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zeta_threshold() {
        assert!(zeta(1.2) > 0.0);
        assert!(zeta(2.0) < 0.0);
        assert!(zeta(2f64.sqrt()).abs() < 1e-15);
        assert_relative_eq!(zeta_general(1.0, 2.0, 1.0), zeta(2.0), epsilon = 1e-15);
    }

    #[test]
    fn zero_modes() {
        assert_eq!(dispersion(0, 0.0, 2.0).unwrap(), 0.0);
        assert_eq!(dispersion(1, 0.0, 2.0).unwrap(), 0.0);
        for k in 2..=6 {
            // −(k²−1) k R*^k with the outer solution normalized at R*
            let d = dispersion(k, 0.0, 2.0).unwrap();
            let expect = -(((k * k - 1) * k) as f64) * 2f64.powi(k as i32);
            assert_relative_eq!(d, expect, max_relative = 1e-9);
        }
    }

    #[test]
    fn series_matches_rk4() {
        let p = DispersionProblem::new(3, 2.0).unwrap();
        let (v, d) = series(3, 2.5, 0.6);
        let y = p.integrate(2.5, SERIES_START, 0.6, series(3, 2.5, SERIES_START), None);
        assert_relative_eq!(v, y.0, max_relative = 1e-11);
        assert_relative_eq!(d, y.1, max_relative = 1e-11);
    }

    #[test]
    fn lambda0_stable_and_unstable() {
        assert!(find_lambda0(1.2).unwrap().is_none());
        let m = find_lambda0(2.0).unwrap().unwrap();
        assert!(m.lambda > 0.0 && m.k == 0);
        for r in m.coupling_residuals() {
            assert!(r < 1e-8, "{r}");
        }
        assert_relative_eq!(m.continuum_norm_i(1.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn tridiag_lu_matches_dense() {
        let a = SymTridiag {
            diag: vec![0.0, 1.0, -2.0, 0.5, 3.0],
            off: vec![2.0, 1.0, 4.0, -1.0],
        };
        let b = vec![1.0, -2.0, 0.5, 3.0, 1.0];
        let x = TridiagLu::new(&a).unwrap().solve(&b);
        let r = a.mul(&x);
        for (u, v) in r.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rayleigh_signs() {
        assert!(matches!(rayleigh_min(1.2, 64), Err(StefanError::StableRegime { .. })));
        let r = rayleigh_min(2.0, 64).unwrap();
        assert!(r.min_quotient < 0.0);
    }

    #[test]
    fn fe_symmetry_of_l() {
        let fe = RadialFe::new(0, 2.0, 16).unwrap();
        let x: Vec<f64> = (0..fe.len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..fe.len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let lx = fe.apply_l(&x).unwrap();
        let ly = fe.apply_l(&y).unwrap();
        let a = fe.gram.form(&lx, &y);
        let b = fe.gram.form(&x, &ly);
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}
