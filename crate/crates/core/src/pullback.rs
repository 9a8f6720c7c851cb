//! The radial change of variables `x̄ = c + π(x)(x − c)` sending the interface onto the
//! unit circle, and the transformed heat operator.
//!
//! `π = 1/R(θ)` for `r_b ≤ |x − c| ≤ 1 + d`, `π = 1` for `|x − c| ≥ 1 + 2d`, joined by a C³
//! smoothstep in the radial coordinate. Inside the core `|x − c| ≤ r_a` the map is the
//! dilation by the angular mean of `1/R`, blended to `1/R(θ)` on `[r_a, r_b]`, so the
//! map is smooth at the center. Rays are preserved, so every quantity is evaluated per
//! angular node.

use crate::error::{Result, StefanError};
use crate::geometry::{metric, InterfaceState};
use crate::heat::RadialGrid;
use crate::spectral::{FourierSeries, ThetaGrid};

/// Angular profile of `P(θ) = 1/R(θ)` and its first two derivatives.
#[derive(Debug, Clone, Copy)]
struct RayProfile {
    p: f64,
    p1: f64,
    p2: f64,
}

impl RayProfile {
    fn from_r(r: f64, r1: f64, r2: f64) -> Self {
        Self {
            p: 1.0 / r,
            p1: -r1 / (r * r),
            p2: -r2 / (r * r) + 2.0 * r1 * r1 / (r * r * r),
        }
    }
}

/// `π` and its polar derivatives at a physical point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiJet {
    pub pi: f64,
    pub pr: f64,
    pub pt: f64,
    pub prr: f64,
    pub ptt: f64,
    pub prt: f64,
    /// Weight of the ray's own `1/R(θ)` in `π`.
    pub plateau: f64,
    /// Weight of the angular mean of `1/R` in `π`.
    pub core: f64,
}

/// Core radii as fractions of the smallest interface radius.
const CORE_INNER: f64 = 0.25;
const CORE_OUTER: f64 = 0.6;

/// C³ step `35s⁴ − 84s⁵ + 70s⁶ − 20s⁷` with its first two derivatives.
fn smoothstep(s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if s >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let s3 = s * s * s;
        let v = s3 * s * (35.0 + s * (-84.0 + s * (70.0 - 20.0 * s)));
        let d1 = 140.0 * s3 * (1.0 - s).powi(3);
        let d2 = 420.0 * s * s * (1.0 - s).powi(2) * (1.0 - 2.0 * s);
        (v, d1, d2)
    }
}

#[derive(Debug, Clone)]
pub struct BlendMap {
    pub d: f64,
    pub state: InterfaceState,
    theta: ThetaGrid,
    rays: Vec<RayProfile>,
    pi0: f64,
    ra: f64,
    rb: f64,
}

/// Default blend width `min(0.2, (R* − 1 − |c|)/4)`.
pub fn default_blend_width(rstar: f64, center: (f64, f64)) -> f64 {
    (0.2_f64).min((rstar - 1.0 - center.0.hypot(center.1)) / 4.0)
}

/// Build the map for `state` with blend width `d` inside a container of radius `rstar`.
pub fn build_map(state: &InterfaceState, d: f64, rstar: f64, theta: &ThetaGrid) -> Result<BlendMap> {
    if !(d > 0.0) || 1.0 + 2.0 * d >= rstar - state.center_norm() {
        return Err(StefanError::InvalidConfig(format!(
            "blend width d = {d} does not fit inside R* = {rstar}"
        )));
    }
    let s = state.samples(theta);
    let min_r = s.r.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_r > 0.0) {
        return Err(StefanError::InvalidInterface(format!("min R = {min_r:.3e}")));
    }
    let excursion = s.r.iter().fold(f64::NEG_INFINITY, |m, r| m.max(r - 1.0));
    if excursion > d {
        return Err(StefanError::RemapRequired { excursion, d });
    }
    let rays: Vec<RayProfile> = (0..theta.len())
        .map(|j| RayProfile::from_r(s.r[j], s.r1[j], s.r2[j]))
        .collect();
    let pi0 = rays.iter().map(|p| p.p).sum::<f64>() / rays.len() as f64;
    let (ra, rb) = (CORE_INNER * min_r, CORE_OUTER * min_r);
    // r π(r) must increase across both blends; the step has slope at most 35/16
    let slope = 35.0 / 16.0;
    let spread = rays.iter().fold(0.0_f64, |m, p| m.max((p.p - pi0).abs()));
    if pi0 - spread * (1.0 + slope * rb / (rb - ra)) <= 0.0 {
        return Err(StefanError::InvalidInterface(format!(
            "interface too far from a circle for the core blend (spread of 1/R = {spread:.3e})"
        )));
    }
    if rays
        .iter()
        .any(|p| p.p - (1.0 - p.p).abs() * slope * (1.0 + 2.0 * d) / d <= 0.0)
    {
        return Err(StefanError::RemapRequired { excursion, d });
    }
    Ok(BlendMap {
        d,
        state: state.clone(),
        theta: theta.clone(),
        rays,
        pi0,
        ra,
        rb,
    })
}

impl BlendMap {
    pub fn theta(&self) -> &ThetaGrid {
        &self.theta
    }

    /// Value of `π` at the center (angular mean of `1/R`).
    pub fn pi_origin(&self) -> f64 {
        self.pi0
    }

    fn jet_with(&self, r: f64, ray: RayProfile) -> PiJet {
        let d = self.d;
        if r <= 1.0 + d {
            let w = self.rb - self.ra;
            let (t, t1, t2) = smoothstep((r - self.ra) / w);
            let q = ray.p - self.pi0;
            return PiJet {
                pi: self.pi0 + q * t,
                pr: q * t1 / w,
                prr: q * t2 / (w * w),
                pt: ray.p1 * t,
                ptt: ray.p2 * t,
                prt: ray.p1 * t1 / w,
                plateau: t,
                core: 1.0 - t,
            };
        }
        let (s, s1, s2) = smoothstep((r - 1.0 - d) / d);
        let w = 1.0 - ray.p;
        PiJet {
            pi: ray.p + w * s,
            pr: w * s1 / d,
            prr: w * s2 / (d * d),
            pt: ray.p1 * (1.0 - s),
            ptt: ray.p2 * (1.0 - s),
            prt: -ray.p1 * s1 / d,
            plateau: 1.0 - s,
            core: 0.0,
        }
    }

    /// Jet at distance `r` from the center along grid ray `j`.
    pub fn jet(&self, r: f64, j: usize) -> PiJet {
        self.jet_with(r, self.rays[j])
    }

    fn ray_at(&self, theta: f64) -> RayProfile {
        let f = &self.state.f;
        RayProfile::from_r(1.0 + f.eval(theta), f.d_theta(1).eval(theta), f.d_theta(2).eval(theta))
    }

    /// Jet at an arbitrary polar position about the center.
    pub fn jet_at(&self, r: f64, theta: f64) -> PiJet {
        self.jet_with(r, self.ray_at(theta))
    }

    /// `x̄ = c + π(x)(x − c)`.
    pub fn forward(&self, x: (f64, f64)) -> (f64, f64) {
        let (cx, cy) = self.state.center;
        let (dx, dy) = (x.0 - cx, x.1 - cy);
        let r = dx.hypot(dy);
        let pi = if r == 0.0 {
            self.pi0
        } else {
            self.jet_at(r, dy.atan2(dx)).pi
        };
        (cx + pi * dx, cy + pi * dy)
    }

    fn invert_ray(&self, rbar: f64, ray: RayProfile) -> f64 {
        let d = self.d;
        if rbar <= self.ra * self.pi0 {
            return rbar / self.pi0;
        }
        let r_in = rbar / ray.p;
        if r_in >= self.rb && r_in <= 1.0 + d {
            return r_in;
        }
        if rbar >= 1.0 + 2.0 * d {
            return rbar;
        }
        // r π(r) is increasing on both blends; bracket it and bisect
        let (mut lo, mut hi) = if r_in < self.rb {
            (self.ra, self.rb)
        } else {
            (1.0 + d, 1.0 + 2.0 * d)
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * self.jet_with(mid, ray).pi < rbar {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Physical distance from the center of the point with reference radius `rbar` on ray `j`.
    pub fn inverse_radius(&self, rbar: f64, j: usize) -> f64 {
        self.invert_ray(rbar, self.rays[j])
    }

    /// `ρ(x̄)` with `x = c + ρ(x̄)(x̄ − c)`.
    pub fn rho(&self, xbar: (f64, f64)) -> f64 {
        let (cx, cy) = self.state.center;
        let (dx, dy) = (xbar.0 - cx, xbar.1 - cy);
        let rb = dx.hypot(dy);
        if rb == 0.0 {
            return 1.0 / self.pi0;
        }
        self.invert_ray(rb, self.ray_at(dy.atan2(dx))) / rb
    }

    pub fn inverse(&self, xbar: (f64, f64)) -> (f64, f64) {
        let (cx, cy) = self.state.center;
        let rho = self.rho(xbar);
        (cx + rho * (xbar.0 - cx), cy + rho * (xbar.1 - cy))
    }
}

/// Per-node map data on the reference grid.
#[derive(Debug, Clone)]
pub struct MapSamples {
    m: usize,
    /// Physical distance from the center.
    pub r_phys: Vec<f64>,
    pub jets: Vec<PiJet>,
    /// `dA_phys / dA_ref`.
    pub jacobian: Vec<f64>,
}

impl MapSamples {
    pub fn new(map: &BlendMap, grid: &RadialGrid) -> Self {
        let m = grid.m();
        let mut r_phys = Vec::with_capacity(grid.nr() * m);
        let mut jets = Vec::with_capacity(grid.nr() * m);
        let mut jacobian = Vec::with_capacity(grid.nr() * m);
        for &rb in grid.radii() {
            for j in 0..m {
                let r = map.inverse_radius(rb, j);
                let jet = if rb == 0.0 {
                    PiJet {
                        pi: map.pi0,
                        pr: 0.0,
                        pt: 0.0,
                        prr: 0.0,
                        ptt: 0.0,
                        prt: 0.0,
                        plateau: 0.0,
                        core: 1.0,
                    }
                } else {
                    map.jet(r, j)
                };
                r_phys.push(r);
                jacobian.push(1.0 / (jet.pi * (jet.pi + r * jet.pr)));
                jets.push(jet);
            }
        }
        Self {
            m,
            r_phys,
            jets,
            jacobian,
        }
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.m + j
    }
}

/// Coefficients of the transformed operator on the reference grid.
#[derive(Debug, Clone)]
pub struct PullbackCoeffs {
    m: usize,
    a: Vec<[f64; 3]>,
    b: Vec<[f64; 2]>,
    active: Vec<bool>,
    pi0: f64,
}

impl PullbackCoeffs {
    /// `(a_xx, a_xy, a_yy)` at node `(i, j)`.
    pub fn a(&self, i: usize, j: usize) -> [f64; 3] {
        self.a[i * self.m + j]
    }

    pub fn b(&self, i: usize, j: usize) -> [f64; 2] {
        self.b[i * self.m + j]
    }

    pub fn ring_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn pi_origin(&self) -> f64 {
        self.pi0
    }

    pub fn sup_abs(&self) -> f64 {
        let sa = self
            .a
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let sb = self
            .b
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        sa.max(sb)
    }

    /// Largest `|a|`, `|b|` on rings at or beyond reference radius `rbar`.
    pub fn sup_abs_beyond(&self, grid: &RadialGrid, rbar: f64) -> f64 {
        let mut s = 0.0_f64;
        for (i, &r) in grid.radii().iter().enumerate() {
            if r >= rbar {
                for j in 0..self.m {
                    let k = i * self.m + j;
                    s = s.max(
                        self.a[k]
                            .iter()
                            .chain(self.b[k].iter())
                            .fold(0.0, |m, v| m.max(v.abs())),
                    );
                }
            }
        }
        s
    }
}

/// `a_ij = (π²−1)δ_ij + π(x^jπ_i + x^iπ_j) + x^ix^j|∇π|²`, `b_i = 2π_i + Δπ x^i − π_t x^i`,
/// sampled at the reference nodes (physical point `x = ρx̄`). `f_t` enters through `π_t`.
pub fn coefficients(map: &BlendMap, samples: &MapSamples, grid: &RadialGrid, f_t: &FourierSeries) -> PullbackCoeffs {
    let m = grid.m();
    let nr = grid.nr();
    let ft = f_t.synthesize(&grid.theta);
    let rr = map.state.samples(&grid.theta).r;
    let p_t: Vec<f64> = ft.iter().zip(&rr).map(|(f, r)| -f / (r * r)).collect();
    let p_t_mean = p_t.iter().sum::<f64>() / m as f64;
    let mut a = vec![[0.0; 3]; nr * m];
    let mut b = vec![[0.0; 2]; nr * m];
    let mut active = vec![false; nr];
    for (i, &rb) in grid.radii().iter().enumerate() {
        if rb == 0.0 {
            active[i] = map.pi0 != 1.0;
            continue;
        }
        if rb >= 1.0 + 2.0 * map.d {
            continue;
        }
        for (j, &t) in grid.theta.nodes().iter().enumerate() {
            let k = samples.idx(i, j);
            let jet = samples.jets[k];
            let r = samples.r_phys[k];
            let (s, c) = t.sin_cos();
            let (x, y) = (r * c, r * s);
            let px = c * jet.pr - s * jet.pt / r;
            let py = s * jet.pr + c * jet.pt / r;
            let lap = jet.prr + jet.pr / r + jet.ptt / (r * r);
            let g2 = px * px + py * py;
            let p = jet.pi;
            let e = p * p - 1.0;
            a[k] = [
                e + 2.0 * p * x * px + x * x * g2,
                p * (y * px + x * py) + x * y * g2,
                e + 2.0 * p * y * py + y * y * g2,
            ];
            let pi_t = p_t[j] * jet.plateau + p_t_mean * jet.core;
            b[k] = [2.0 * px + (lap - pi_t) * x, 2.0 * py + (lap - pi_t) * y];
            if a[k].iter().chain(b[k].iter()).any(|v| *v != 0.0) {
                active[i] = true;
            }
        }
    }
    PullbackCoeffs {
        m,
        a,
        b,
        active,
        pi0: map.pi0,
    }
}

/// `[u_n]∘φ = (|g|/R²)[ū_n]` with `[ū_n]` taken along the reference normal.
pub fn jump_transform(raw_jump: &[f64], state: &InterfaceState, theta: &ThetaGrid) -> Result<Vec<f64>> {
    let g = metric(state, theta)?;
    let r = state.samples(theta).r;
    Ok(raw_jump
        .iter()
        .zip(g.iter().zip(&r))
        .map(|(j, (g, r))| j * g / (r * r))
        .collect())
}

/// Inverse of [`jump_transform`].
pub fn jump_transform_inverse(jump: &[f64], state: &InterfaceState, theta: &ThetaGrid) -> Result<Vec<f64>> {
    let g = metric(state, theta)?;
    let r = state.samples(theta).r;
    Ok(jump
        .iter()
        .zip(g.iter().zip(&r))
        .map(|(j, (g, r))| j * r * r / g)
        .collect())
}

/// `Ξ(f) = (1 − |g|/R²)[ū_n]`, so that `[ū_n] = [u_n]∘φ + Ξ`.
pub fn xi_correction(raw_jump: &[f64], state: &InterfaceState, theta: &ThetaGrid) -> Result<Vec<f64>> {
    let t = jump_transform(raw_jump, state, theta)?;
    Ok(raw_jump.iter().zip(&t).map(|(r, t)| r - t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn wavy(delta: f64) -> InterfaceState {
        let mut f = FourierSeries::zeros(4);
        f.set(1, 0.3 * delta, 0.0);
        f.set(2, delta, 0.5 * delta);
        f.set(0, 0.2 * delta, 0.0);
        InterfaceState::new(f)
    }

    #[test]
    fn flat_map_is_identity() {
        let th = ThetaGrid::new(16).unwrap();
        let map = build_map(&InterfaceState::circle(3), 0.1, 1.5, &th).unwrap();
        let grid = RadialGrid::new(8, 8, 16, 1.5).unwrap();
        let s = MapSamples::new(&map, &grid);
        let c = coefficients(&map, &s, &grid, &FourierSeries::zeros(3));
        assert_eq!(c.sup_abs(), 0.0);
        let x = (0.3, -0.4);
        assert_eq!(map.forward(x), x);
    }

    #[test]
    fn interface_lands_on_unit_circle() {
        let th = ThetaGrid::new(64).unwrap();
        let st = wavy(0.02);
        let map = build_map(&st, 0.1, 1.6, &th).unwrap();
        for t in [0.0, 0.7, 2.0, 4.4] {
            let r = 1.0 + st.f.eval(t);
            let xb = map.forward((r * t.cos(), r * t.sin()));
            assert_abs_diff_eq!(xb.0.hypot(xb.1), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn outside_blend_is_identity() {
        let th = ThetaGrid::new(32).unwrap();
        let map = build_map(&wavy(0.02), 0.1, 1.6, &th).unwrap();
        for j in 0..32 {
            assert_eq!(map.jet(1.0 + 0.2 + 0.1, j).pi, 1.0);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let th = ThetaGrid::new(32).unwrap();
        let map = build_map(&wavy(0.03), 0.15, 1.8, &th).unwrap();
        for &(x, y) in &[(0.2, 0.1), (0.9, 0.5), (1.1, -0.2), (-0.3, 1.2), (1.5, 0.1)] {
            let back = map.inverse(map.forward((x, y)));
            assert_abs_diff_eq!(back.0, x, epsilon = 1e-10);
            assert_abs_diff_eq!(back.1, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn excursion_beyond_blend_needs_remap() {
        let th = ThetaGrid::new(16).unwrap();
        let st = InterfaceState::new(FourierSeries::constant(2, 0.12));
        assert!(matches!(
            build_map(&st, 0.1, 1.8, &th),
            Err(StefanError::RemapRequired { .. })
        ));
    }

    #[test]
    fn jump_transform_constant_radius() {
        let th = ThetaGrid::new(8).unwrap();
        let st = InterfaceState::new(FourierSeries::constant(2, 0.25));
        let out = jump_transform(&[2.0; 8], &st, &th).unwrap();
        assert!(out.iter().all(|v| (v - 2.0 / 1.25).abs() < 1e-15));
        let flat = jump_transform(&[0.3; 8], &InterfaceState::circle(2), &th).unwrap();
        assert!(flat.iter().all(|v| *v == 0.3));
    }

    #[test]
    fn coefficients_vanish_outside_support() {
        let th = ThetaGrid::new(32).unwrap();
        let grid = RadialGrid::new(16, 16, 32, 1.8).unwrap();
        let map = build_map(&wavy(0.02), 0.1, 1.8, &th).unwrap();
        let s = MapSamples::new(&map, &grid);
        let c = coefficients(&map, &s, &grid, &FourierSeries::mode(4, 2, 0.1, 0.0));
        assert!(c.sup_abs() > 0.0);
        assert_eq!(c.sup_abs_beyond(&grid, 1.2), 0.0);
    }
}
