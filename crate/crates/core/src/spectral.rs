//! Real Fourier series on the periodic circle.
//!
//! A series with cutoff `K` stores `f(θ) = a₀ + Σ_{k=1..K} (a_k cos kθ + b_k sin kθ)`.
//! Synthesis and analysis are direct `O(KM)` sums on an equispaced [`ThetaGrid`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StefanError};

/// Equispaced nodes `θ_j = 2πj/M` on the circle.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGrid {
    m: usize,
    theta: Vec<f64>,
}

impl ThetaGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 || !m.is_multiple_of(2) {
            return Err(StefanError::InvalidGrid(format!("M = {m} must be even and >= 2")));
        }
        let theta = (0..m).map(|j| 2.0 * PI * j as f64 / m as f64).collect();
        Ok(Self { m, theta })
    }

    /// Smallest even grid that resolves cutoff `k` without aliasing of triple products.
    pub fn dealiased(k: usize, at_least: usize) -> Self {
        let mut m = (3 * k + 3).max(at_least).max(4);
        if m % 2 == 1 {
            m += 1;
        }
        Self::new(m).expect("even size")
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn nodes(&self) -> &[f64] {
        &self.theta
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.m as f64
    }

    /// Check `M >= 2K + 2`.
    pub fn check_cutoff(&self, k: usize) -> Result<()> {
        if self.m < 2 * k + 2 {
            return Err(StefanError::InvalidGrid(format!(
                "M = {} cannot resolve cutoff K = {k} (need M >= 2K+2)",
                self.m
            )));
        }
        Ok(())
    }
}

/// Projection selectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// `P_n`: the exact mode-`n` component.
    Mode(usize),
    /// `P_{n+}`: all modes `k >= n`.
    Tail(usize),
    /// `P = P_{1+}`: the function minus its mean.
    MeanFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl FourierSeries {
    pub fn zeros(k: usize) -> Self {
        Self {
            a: vec![0.0; k + 1],
            b: vec![0.0; k + 1],
        }
    }

    pub fn constant(k: usize, c: f64) -> Self {
        let mut s = Self::zeros(k);
        s.a[0] = c;
        s
    }

    /// Build from `a_0..a_K` and `b_1..b_K`.
    pub fn from_coeffs(a: Vec<f64>, b_from_1: Vec<f64>) -> Result<Self> {
        if a.is_empty() || b_from_1.len() + 1 != a.len() {
            return Err(StefanError::InvalidGrid(format!(
                "coefficient lengths a = {}, b = {} are inconsistent",
                a.len(),
                b_from_1.len()
            )));
        }
        let mut b = Vec::with_capacity(a.len());
        b.push(0.0);
        b.extend(b_from_1);
        Ok(Self { a, b })
    }

    /// Single mode `c·cos kθ + s·sin kθ` embedded in cutoff `cutoff`.
    pub fn mode(cutoff: usize, k: usize, c: f64, s: f64) -> Self {
        let mut out = Self::zeros(cutoff);
        out.a[k] = c;
        if k > 0 {
            out.b[k] = s;
        }
        out
    }

    pub fn cutoff(&self) -> usize {
        self.a.len() - 1
    }

    pub fn a(&self, k: usize) -> f64 {
        self.a.get(k).copied().unwrap_or(0.0)
    }

    pub fn b(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.b.get(k).copied().unwrap_or(0.0)
        }
    }

    pub fn set(&mut self, k: usize, a: f64, b: f64) {
        self.a[k] = a;
        self.b[k] = if k == 0 { 0.0 } else { b };
    }

    pub fn a_coeffs(&self) -> &[f64] {
        &self.a
    }

    /// `b_1..b_K`.
    pub fn b_coeffs(&self) -> &[f64] {
        &self.b[1..]
    }

    /// Copy with a new cutoff (truncating or zero padding).
    pub fn with_cutoff(&self, k: usize) -> Self {
        let mut out = Self::zeros(k);
        for j in 0..=k.min(self.cutoff()) {
            out.a[j] = self.a[j];
            out.b[j] = self.b[j];
        }
        out
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let mut s = self.a[0];
        for k in 1..=self.cutoff() {
            let (sn, cs) = (k as f64 * theta).sin_cos();
            s += self.a[k] * cs + self.b[k] * sn;
        }
        s
    }

    pub fn synthesize(&self, grid: &ThetaGrid) -> Vec<f64> {
        let m = grid.len();
        let mut out = vec![self.a[0]; m];
        for k in 1..=self.cutoff() {
            let (ak, bk) = (self.a[k], self.b[k]);
            if ak == 0.0 && bk == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                // k·j mod M keeps the argument exact on the grid
                let idx = (k * j) % m;
                let (sn, cs) = grid.theta[idx].sin_cos();
                *o += ak * cs + bk * sn;
            }
        }
        out
    }

    /// Discrete analysis of nodal values, truncated to cutoff `k`.
    pub fn analyze(grid: &ThetaGrid, values: &[f64], k: usize) -> Result<Self> {
        let m = grid.len();
        if values.len() != m {
            return Err(StefanError::InvalidGrid(format!(
                "{} samples for a grid of {m} nodes",
                values.len()
            )));
        }
        if 2 * k >= m {
            return Err(StefanError::InvalidGrid(format!(
                "cutoff K = {k} needs more than {m} nodes"
            )));
        }
        let mut out = Self::zeros(k);
        out.a[0] = values.iter().sum::<f64>() / m as f64;
        let scale = 2.0 / m as f64;
        for kk in 1..=k {
            let (mut sa, mut sb) = (0.0, 0.0);
            for (j, v) in values.iter().enumerate() {
                let idx = (kk * j) % m;
                let (sn, cs) = grid.theta[idx].sin_cos();
                sa += v * cs;
                sb += v * sn;
            }
            out.a[kk] = sa * scale;
            out.b[kk] = sb * scale;
        }
        Ok(out)
    }

    pub fn project(&self, sel: Projection) -> Result<Self> {
        let kmax = self.cutoff();
        let mut out = Self::zeros(kmax);
        match sel {
            Projection::Mode(n) => {
                if n > kmax {
                    return Err(StefanError::CutoffExceeded { n, k: kmax });
                }
                out.a[n] = self.a[n];
                out.b[n] = self.b[n];
            }
            Projection::Tail(n) => {
                if n > kmax {
                    return Err(StefanError::CutoffExceeded { n, k: kmax });
                }
                for k in n..=kmax {
                    out.a[k] = self.a[k];
                    out.b[k] = self.b[k];
                }
            }
            Projection::MeanFree => {
                out = self.clone();
                out.a[0] = 0.0;
            }
        }
        Ok(out)
    }

    /// Exact spectral derivative of the given order.
    pub fn d_theta(&self, order: u32) -> Self {
        let mut out = Self::zeros(self.cutoff());
        for k in 1..=self.cutoff() {
            let kf = k as f64;
            let (mut a, mut b) = (self.a[k], self.b[k]);
            for _ in 0..order {
                // d/dθ (a cos + b sin) = k b cos − k a sin
                let (na, nb) = (kf * b, -kf * a);
                a = na;
                b = nb;
            }
            out.a[k] = a;
            out.b[k] = b;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            a: self.a.iter().map(|x| x * s).collect(),
            b: self.b.iter().map(|x| x * s).collect(),
        }
    }

    /// `self + s·other`; the result carries the larger cutoff.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        let k = self.cutoff().max(other.cutoff());
        let mut out = self.with_cutoff(k);
        for j in 0..=other.cutoff() {
            out.a[j] += s * other.a[j];
            out.b[j] += s * other.b[j];
        }
        out
    }

    /// `∫_{S¹} f² dθ` by Parseval.
    pub fn l2_sq(&self) -> f64 {
        let tail: f64 = (1..=self.cutoff()).map(|k| self.a[k].powi(2) + self.b[k].powi(2)).sum();
        2.0 * PI * self.a[0].powi(2) + PI * tail
    }

    /// `∫ (f_θ² + f²) dθ`.
    pub fn h1_sq(&self) -> f64 {
        self.l2_sq() + self.d_theta(1).l2_sq()
    }

    pub fn sup_norm(&self, grid: &ThetaGrid) -> f64 {
        self.synthesize(grid).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Dealiased pointwise product truncated to `k_out`.
    pub fn mul(&self, other: &Self, k_out: usize) -> Self {
        let grid = ThetaGrid::dealiased(self.cutoff().max(other.cutoff()).max(k_out), 0);
        let p: Vec<f64> = self
            .synthesize(&grid)
            .iter()
            .zip(other.synthesize(&grid))
            .map(|(x, y)| x * y)
            .collect();
        Self::analyze(&grid, &p, k_out).expect("dealiased grid resolves k_out")
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

/// Periodic trapezoid rule on the grid.
pub fn quad_circle(grid: &ThetaGrid, values: &[f64]) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(StefanError::InvalidGrid(format!(
            "{} samples for a grid of {} nodes",
            values.len(),
            grid.len()
        )));
    }
    Ok(values.iter().sum::<f64>() * grid.spacing())
}

/// `∫ |P_{2+} f_θ|² − |P_{2+} f|² dθ`, nonnegative by Wirtinger's inequality.
pub fn wirtinger_gap(f: &FourierSeries) -> f64 {
    (2..=f.cutoff())
        .map(|k| {
            let kf = k as f64;
            PI * (kf * kf - 1.0) * (f.a(k).powi(2) + f.b(k).powi(2))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cos_plus_sin2() -> FourierSeries {
        let mut f = FourierSeries::zeros(4);
        f.set(1, 2.0, 0.0);
        f.set(2, 0.0, 3.0);
        f
    }

    #[test]
    fn projections_extract_modes() {
        let f = cos_plus_sin2();
        let p1 = f.project(Projection::Mode(1)).unwrap();
        assert_eq!(p1.a(1), 2.0);
        assert_eq!(p1.b(2), 0.0);
        let tail = f.project(Projection::Tail(2)).unwrap();
        assert_eq!(tail.a(1), 0.0);
        assert_eq!(tail.b(2), 3.0);
        let c = FourierSeries::constant(3, 5.0);
        assert_eq!(c.project(Projection::Mode(0)).unwrap().a(0), 5.0);
        assert!(matches!(
            f.project(Projection::Mode(9)),
            Err(StefanError::CutoffExceeded { n: 9, k: 4 })
        ));
    }

    #[test]
    fn derivatives_have_correct_phase() {
        let f = FourierSeries::mode(3, 1, 1.0, 0.0);
        let d = f.d_theta(1);
        assert_eq!(d.b(1), -1.0);
        assert_eq!(d.a(1), 0.0);
        let g = FourierSeries::mode(3, 2, 1.0, 0.0).d_theta(4);
        assert_eq!(g.a(2), 16.0);
        assert!(FourierSeries::constant(2, 3.0).d_theta(1).l2_sq() == 0.0);
    }

    #[test]
    fn circle_quadrature() {
        let grid = ThetaGrid::new(64).unwrap();
        let c2: Vec<f64> = grid.nodes().iter().map(|t| t.cos().powi(2)).collect();
        assert_abs_diff_eq!(quad_circle(&grid, &c2).unwrap(), PI, epsilon = 1e-13);
        assert_abs_diff_eq!(quad_circle(&grid, &vec![1.0; 64]).unwrap(), 2.0 * PI, epsilon = 1e-13);
        let x0 = 0.3;
        let grid = ThetaGrid::new(256).unwrap();
        let v: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|t| (t.cos().powi(2) + x0 * t.cos()) / (1.0 + x0 * x0 + 2.0 * x0 * t.cos()))
            .collect();
        assert_abs_diff_eq!(quad_circle(&grid, &v).unwrap(), PI, epsilon = 1e-12);
    }

    #[test]
    fn wirtinger_examples() {
        assert_abs_diff_eq!(
            wirtinger_gap(&FourierSeries::mode(4, 2, 1.0, 0.0)),
            3.0 * PI,
            epsilon = 1e-14
        );
        assert_eq!(wirtinger_gap(&FourierSeries::mode(4, 1, 1.0, 0.0)), 0.0);
    }

    #[test]
    fn grid_rejects_odd_sizes() {
        assert!(ThetaGrid::new(7).is_err());
        assert!(ThetaGrid::new(16).unwrap().check_cutoff(8).is_err());
    }

    fn series_strategy(k: usize) -> impl Strategy<Value = FourierSeries> {
        (
            prop::collection::vec(-1.0..1.0f64, k + 1),
            prop::collection::vec(-1.0..1.0f64, k),
        )
            .prop_map(|(a, b)| FourierSeries::from_coeffs(a, b).unwrap())
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(f in series_strategy(16)) {
            let grid = ThetaGrid::new(64).unwrap();
            let g = FourierSeries::analyze(&grid, &f.synthesize(&grid), 16).unwrap();
            for k in 0..=16 {
                prop_assert!((g.a(k) - f.a(k)).abs() < 1e-13);
                prop_assert!((g.b(k) - f.b(k)).abs() < 1e-13);
            }
        }

        #[test]
        fn parseval_matches_quadrature(f in series_strategy(12)) {
            let grid = ThetaGrid::new(48).unwrap();
            let sq: Vec<f64> = f.synthesize(&grid).iter().map(|v| v * v).collect();
            let q = quad_circle(&grid, &sq).unwrap();
            prop_assert!((q - f.l2_sq()).abs() <= 1e-12 * q.abs().max(1.0));
        }

        #[test]
        fn wirtinger_gap_nonnegative(f in series_strategy(16)) {
            prop_assert!(wirtinger_gap(&f) >= -1e-12);
        }

        #[test]
        fn projections_idempotent_and_disjoint(f in series_strategy(6), n in 0usize..=6, m in 0usize..=6) {
            let p = f.project(Projection::Mode(n)).unwrap();
            prop_assert_eq!(p.project(Projection::Mode(n)).unwrap(), p.clone());
            let t = f.project(Projection::Tail(n)).unwrap();
            prop_assert_eq!(t.project(Projection::Tail(n)).unwrap(), t);
            if n != m {
                prop_assert_eq!(p.project(Projection::Mode(m)).unwrap().l2_sq(), 0.0);
            }
        }
    }
}
