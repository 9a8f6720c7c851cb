//! Interfaces given as radial graphs `x = c + R(θ)(cos θ, sin θ)` with `R = 1 + f`.
//!
//! Orientation: `n` is the unit normal pointing into the inner phase Ω⁻ and the
//! normal velocity is `V = x_t · n`, so `V > 0` when the outer phase Ω⁺ expands.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StefanError};
use crate::spectral::{FourierSeries, ThetaGrid};

/// Minimum admissible radius and container margin.
pub const MIN_RADIUS: f64 = 0.1;
pub const CONTAINER_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceState {
    pub f: FourierSeries,
    pub center: (f64, f64),
}

/// Pointwise samples of `R`, `R_θ`, `R_θθ`.
#[derive(Debug, Clone)]
pub struct RadialSamples {
    pub r: Vec<f64>,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
}

impl InterfaceState {
    pub fn new(f: FourierSeries) -> Self {
        Self { f, center: (0.0, 0.0) }
    }

    pub fn circle(k: usize) -> Self {
        Self::new(FourierSeries::zeros(k))
    }

    pub fn with_center(mut self, x0: f64, y0: f64) -> Self {
        self.center = (x0, y0);
        self
    }

    pub fn center_norm(&self) -> f64 {
        self.center.0.hypot(self.center.1)
    }

    pub fn samples(&self, grid: &ThetaGrid) -> RadialSamples {
        let mut r = self.f.synthesize(grid);
        r.iter_mut().for_each(|v| *v += 1.0);
        RadialSamples {
            r,
            r1: self.f.d_theta(1).synthesize(grid),
            r2: self.f.d_theta(2).synthesize(grid),
        }
    }

    fn check_positive(&self, s: &RadialSamples) -> Result<()> {
        let min_r = s.r.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min_r > 0.0) {
            return Err(StefanError::InvalidInterface(format!(
                "min R = {min_r:.4e} is not positive"
            )));
        }
        Ok(())
    }

    /// Full admissibility check against a container of radius `rstar`.
    pub fn validate(&self, rstar: f64, grid: &ThetaGrid) -> Result<()> {
        if !self.f.is_finite() {
            return Err(StefanError::InvalidInterface("non-finite coefficients".into()));
        }
        let s = self.samples(grid);
        let min_r = s.r.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_r = s.r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if min_r < MIN_RADIUS {
            return Err(StefanError::InvalidInterface(format!(
                "min R = {min_r:.4} < {MIN_RADIUS}"
            )));
        }
        if max_r + self.center_norm() > rstar - CONTAINER_MARGIN {
            return Err(StefanError::InvalidInterface(format!(
                "max R + |center| = {:.4} leaves no margin inside R* = {rstar}",
                max_r + self.center_norm()
            )));
        }
        Ok(())
    }
}

/// Sampled metric, curvature, tangent and normal.
#[derive(Debug, Clone)]
pub struct InterfaceGeometry {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub tau: Vec<(f64, f64)>,
    pub n: Vec<(f64, f64)>,
}

impl InterfaceGeometry {
    pub fn compute(state: &InterfaceState, grid: &ThetaGrid) -> Result<Self> {
        let s = state.samples(grid);
        state.check_positive(&s)?;
        let mut g = Vec::with_capacity(grid.len());
        let mut h = Vec::with_capacity(grid.len());
        let mut tau = Vec::with_capacity(grid.len());
        let mut n = Vec::with_capacity(grid.len());
        for (j, &t) in grid.nodes().iter().enumerate() {
            let (r, r1, r2) = (s.r[j], s.r1[j], s.r2[j]);
            let gj = r.hypot(r1);
            let (sn, cs) = t.sin_cos();
            g.push(gj);
            h.push(curvature_point(r, r1, r2));
            tau.push(((r1 * cs - r * sn) / gj, (r1 * sn + r * cs) / gj));
            n.push((-(r * cs + r1 * sn) / gj, -(r * sn - r1 * cs) / gj));
        }
        Ok(Self { g, h, tau, n })
    }
}

#[inline]
fn curvature_point(r: f64, r1: f64, r2: f64) -> f64 {
    let g2 = r * r + r1 * r1;
    (r * r + 2.0 * r1 * r1 - r * r2) / (g2 * g2.sqrt())
}

/// `|g| = sqrt(R² + R_θ²)` at the grid nodes.
pub fn metric(state: &InterfaceState, grid: &ThetaGrid) -> Result<Vec<f64>> {
    let s = state.samples(grid);
    state.check_positive(&s)?;
    Ok(s.r.iter().zip(&s.r1).map(|(r, r1)| r.hypot(*r1)).collect())
}

/// `H = 1/|g| − (1/R)(R_θ/|g|)_θ` at the grid nodes.
pub fn curvature(state: &InterfaceState, grid: &ThetaGrid) -> Result<Vec<f64>> {
    let s = state.samples(grid);
    state.check_positive(&s)?;
    Ok((0..grid.len())
        .map(|j| curvature_point(s.r[j], s.r1[j], s.r2[j]))
        .collect())
}

fn remainder_series(
    state: &InterfaceState,
    k_out: usize,
    point: impl Fn(f64, f64, f64) -> f64,
) -> Result<FourierSeries> {
    let grid = ThetaGrid::dealiased(state.f.cutoff().max(k_out), 2 * k_out + 2);
    let s = state.samples(&grid);
    state.check_positive(&s)?;
    let vals: Vec<f64> = (0..grid.len()).map(|j| point(s.r[j], s.r1[j], s.r2[j])).collect();
    FourierSeries::analyze(&grid, &vals, k_out)
}

/// `N(f) = H − (1 − f − f_θθ)`, truncated to `k_out`.
pub fn curvature_remainder_n(state: &InterfaceState, k_out: usize) -> Result<FourierSeries> {
    remainder_series(state, k_out, |r, r1, r2| curvature_point(r, r1, r2) - (2.0 - r - r2))
}

/// `N*(f) = 1/|g| − (1 − f) − (1/|g|)_θ f_θ / R`, truncated to `k_out`.
pub fn curvature_remainder_nstar(state: &InterfaceState, k_out: usize) -> Result<FourierSeries> {
    remainder_series(state, k_out, |r, r1, r2| {
        let g2 = r * r + r1 * r1;
        let g = g2.sqrt();
        let inv_g_theta = -(r * r1 + r1 * r2) / (g2 * g);
        1.0 / g - (2.0 - r) - inv_g_theta * r1 / r
    })
}

/// `Ψ(f) = |g| − 1 − f − f_θ²/2`, truncated to `k_out`.
pub fn jacobian_remainder_psi(state: &InterfaceState, k_out: usize) -> Result<FourierSeries> {
    remainder_series(state, k_out, |r, r1, _| r.hypot(r1) - r - 0.5 * r1 * r1)
}

/// Normal and tangential velocities `V = −f_t R/|g|`, `V_par = f_t f_θ/|g|`.
pub fn velocities(state: &InterfaceState, f_t: &FourierSeries, grid: &ThetaGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = state.samples(grid);
    state.check_positive(&s)?;
    let ft = f_t.synthesize(grid);
    let mut v = Vec::with_capacity(grid.len());
    let mut vp = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let g = s.r[j].hypot(s.r1[j]);
        v.push(-ft[j] * s.r[j] / g);
        vp.push(ft[j] * s.r1[j] / g);
    }
    Ok((v, vp))
}

/// Arc length `∫ |g| dθ`.
pub fn arc_length(state: &InterfaceState, grid: &ThetaGrid) -> Result<f64> {
    Ok(metric(state, grid)?.iter().sum::<f64>() * grid.spacing())
}

/// Enclosed area `½∫R² dθ`.
pub fn enclosed_area(state: &InterfaceState) -> f64 {
    let mut r = state.f.clone();
    r.set(0, r.a(0) + 1.0, 0.0);
    0.5 * r.l2_sq()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn unit_circle_geometry() {
        let grid = ThetaGrid::new(32).unwrap();
        let st = InterfaceState::circle(4);
        let geo = InterfaceGeometry::compute(&st, &grid).unwrap();
        for j in 0..32 {
            assert_abs_diff_eq!(geo.g[j], 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(geo.h[j], 1.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(arc_length(&st, &grid).unwrap(), 2.0 * PI, epsilon = 1e-13);
    }

    #[test]
    fn scaled_circle() {
        let grid = ThetaGrid::new(32).unwrap();
        let st = InterfaceState::new(FourierSeries::constant(4, 0.5));
        for h in curvature(&st, &grid).unwrap() {
            assert_abs_diff_eq!(h, 2.0 / 3.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(arc_length(&st, &grid).unwrap(), 3.0 * PI, epsilon = 1e-13);
        let n = curvature_remainder_n(&st, 4).unwrap();
        assert_abs_diff_eq!(n.a(0), 0.25 / 1.5, epsilon = 1e-14);
        let ns = curvature_remainder_nstar(&st, 4).unwrap();
        assert_abs_diff_eq!(ns.a(0), 0.25 / 1.5, epsilon = 1e-14);
        assert!(jacobian_remainder_psi(&st, 4).unwrap().l2_sq() < 1e-28);
    }

    #[test]
    fn metric_at_zero_is_exact() {
        let grid = ThetaGrid::new(16).unwrap();
        let st = InterfaceState::new(FourierSeries::mode(2, 1, 0.01, 0.0));
        assert_eq!(metric(&st, &grid).unwrap()[0], 1.01);
    }

    #[test]
    fn rejects_nonpositive_radius() {
        let grid = ThetaGrid::new(16).unwrap();
        let st = InterfaceState::new(FourierSeries::constant(2, -1.5));
        assert!(matches!(metric(&st, &grid), Err(StefanError::InvalidInterface(_))));
        let st = InterfaceState::new(FourierSeries::constant(2, 0.19));
        assert!(st.validate(1.2, &grid).is_err());
        assert!(st.validate(1.3, &grid).is_ok());
    }

    #[test]
    fn frame_is_orthonormal() {
        let grid = ThetaGrid::new(64).unwrap();
        let mut f = FourierSeries::zeros(5);
        f.set(2, 0.1, -0.05);
        f.set(5, 0.02, 0.03);
        let geo = InterfaceGeometry::compute(&InterfaceState::new(f), &grid).unwrap();
        for j in 0..64 {
            let (t, n) = (geo.tau[j], geo.n[j]);
            assert!((t.0 * n.0 + t.1 * n.1).abs() < 1e-12);
            assert!((t.0.hypot(t.1) - 1.0).abs() < 1e-12);
            assert!((n.0.hypot(n.1) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn velocities_of_uniform_growth() {
        let grid = ThetaGrid::new(8).unwrap();
        let st = InterfaceState::circle(2);
        let (v, vp) = velocities(&st, &FourierSeries::constant(2, 0.7), &grid).unwrap();
        assert!(v.iter().all(|x| (*x + 0.7).abs() < 1e-15));
        assert!(vp.iter().all(|x| x.abs() < 1e-15));
        let (v, _) = velocities(&st, &FourierSeries::zeros(2), &grid).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn area_of_shifted_radius() {
        let st = InterfaceState::new(FourierSeries::constant(3, 0.2));
        assert_abs_diff_eq!(enclosed_area(&st), PI * 1.44, epsilon = 1e-13);
    }
}
