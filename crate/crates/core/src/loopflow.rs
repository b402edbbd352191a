//! Discrete loop-space model of the twisted Rabinowitz action functional.
//!
//! A loop is stored as `N` equally spaced samples `v_0..v_{N-1}` of
//! `v(t) = gamma(ord t)` together with the multiplier `tau`. With a
//! quadratic primitive `lambda_x(u) = x^T P u`, `P - P^T = Omega`, and an
//! antisymmetric circulant difference operator `D`, the discrete action
//!
//! `A(v, tau) = (1/ord) h sum_k v_k^T P (D v)_k - tau h sum_k (H(v_k) - k)`
//!
//! has the exact `L^2` gradient `(1/ord) Omega (D v)_k - tau grad H(v_k)` and
//! `tau`-component `-mean (H - k)`.

use std::fmt;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flow::{sample_trajectory, FlowOptions};
use crate::geometry::SymplecticSystem;
use crate::orbit::TwistedOrbit;

/// Central difference stencil for `d/dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    /// Three-point, second order.
    #[default]
    Central2,
    /// Five-point, fourth order.
    Central4,
}

impl Stencil {
    /// `(offset, c)` pairs with `(D v)_k = N sum c (v_{k+o} - v_{k-o})`.
    fn weights(self) -> &'static [(usize, f64)] {
        match self {
            Stencil::Central2 => &[(1, 0.5)],
            Stencil::Central4 => &[(1, 2.0 / 3.0), (2, -1.0 / 12.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLoop {
    /// Point-major samples: `v_k` occupies `data[k*dim..(k+1)*dim]`.
    pub data: Vec<f64>,
    pub dim: usize,
    pub tau: f64,
    /// `ord(phi)` used in the action normalization.
    pub order: usize,
    pub stencil: Stencil,
    /// Level `k`; the action uses `H - k`.
    pub energy: f64,
}

impl DiscreteLoop {
    pub fn new(points: &[Vec<f64>], tau: f64, order: usize, stencil: Stencil) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).ok_or_else(|| Error::Parameter("empty loop".into()))?;
        let min_len = 2 * stencil.weights().last().map(|w| w.0).unwrap_or(1) + 1;
        if points.len() < min_len {
            return Err(Error::Parameter(format!("loop needs at least {min_len} samples")));
        }
        if order == 0 {
            return Err(Error::Parameter("order must be positive".into()));
        }
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in points {
            check_dim(dim, p.len())?;
            data.extend_from_slice(p);
        }
        Ok(Self { data, dim, tau, order, stencil, energy: 0.0 })
    }

    pub fn with_energy(mut self, energy: f64) -> Self {
        self.energy = energy;
        self
    }

    /// Samples `v(t) = Phi_{ord tau t}(x0)` at `t = k/N`.
    pub fn from_orbit(system: &SymplecticSystem, orbit: &TwistedOrbit, n: usize, stencil: Stencil) -> Result<Self> {
        let order = orbit.order.max(1);
        let total = orbit.tau * order as f64;
        let samples = sample_trajectory(system, &orbit.x0, total, n, &FlowOptions::default().quiet())?;
        let points: Vec<Vec<f64>> = samples.into_iter().take(n).map(|s| s.x).collect();
        Ok(Self::new(&points, orbit.tau, order, stencil)?.with_energy(orbit.energy))
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    /// Adds i.i.d. normal noise of standard deviation `sigma` to every coordinate.
    pub fn perturbed(&self, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for v in &mut out.data {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
        out
    }

    fn derivative(&self) -> Vec<f64> {
        let (n, d) = (self.len(), self.dim);
        let nf = n as f64;
        let mut out = vec![0.0; n * d];
        for k in 0..n {
            for &(o, c) in self.stencil.weights() {
                let (kp, km) = ((k + o) % n, (k + n - o) % n);
                for a in 0..d {
                    out[k * d + a] += nf * c * (self.data[kp * d + a] - self.data[km * d + a]);
                }
            }
        }
        out
    }

    /// Flattened `(v, tau)`.
    fn state(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.data.len() + 1);
        s.rows_mut(0, self.data.len()).copy_from_slice(&self.data);
        s[self.data.len()] = self.tau;
        s
    }

    fn with_state(&self, s: &DVector<f64>) -> Self {
        let mut out = self.clone();
        let m = out.data.len();
        out.data.copy_from_slice(&s.as_slice()[..m]);
        out.tau = s[m];
        out
    }
}

/// Integer winding of a loop in the torus directions (zero off the torus).
pub fn loop_winding(system: &SymplecticSystem, lp: &DiscreteLoop) -> Vec<i64> {
    if !system.structure.is_torus() {
        return Vec::new();
    }
    let n = system.structure.n();
    let len = lp.len();
    (0..n)
        .map(|i| {
            (0..len)
                .map(|k| {
                    let a = lp.point(k)[i];
                    let b = lp.point((k + 1) % len)[i];
                    (b - a).round() as i64
                })
                .sum()
        })
        .collect()
}

fn check_loop(system: &SymplecticSystem, lp: &DiscreteLoop) -> Result<()> {
    check_dim(system.dim(), lp.dim)?;
    let w = loop_winding(system, lp);
    if w.iter().any(|&c| c != 0) {
        return Err(Error::NotContractible { winding: w });
    }
    let n = system.structure.n();
    if system.structure.is_torus() {
        // stored positions must be unwrapped for the quadratic primitive
        for k in 0..lp.len() {
            let a = lp.point(k);
            let b = lp.point((k + 1) % lp.len());
            if (0..n).any(|i| (b[i] - a[i]).abs() > 0.5) {
                return Err(Error::Parameter("torus loop positions must be stored unwrapped".into()));
            }
        }
    }
    Ok(())
}

/// `(1/ord) h sum v_k^T P (D v)_k - tau mean (H - k)`.
pub fn rabinowitz_action(lp: &DiscreteLoop, system: &SymplecticSystem) -> Result<f64> {
    check_loop(system, lp)?;
    let p = system.structure.primitive_matrix();
    let dv = lp.derivative();
    let (n, d) = (lp.len(), lp.dim);
    let h = 1.0 / n as f64;
    let mut area = 0.0;
    let mut mean_h = 0.0;
    for k in 0..n {
        let v = DVector::from_column_slice(lp.point(k));
        let w = DVector::from_column_slice(&dv[k * d..(k + 1) * d]);
        area += v.dot(&(&p * w));
        mean_h += system.energy(lp.point(k)) - lp.energy;
    }
    Ok(area * h / lp.order as f64 - lp.tau * mean_h * h)
}

/// `L^2` gradient of the discrete action.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopGradient {
    /// Point-major vector field along the loop.
    pub field: Vec<f64>,
    pub tau: f64,
}

impl LoopGradient {
    /// `sqrt(h sum |G_k|^2 + g_tau^2)`.
    pub fn norm(&self, points: usize) -> f64 {
        let h = 1.0 / points as f64;
        (h * self.field.iter().map(|g| g * g).sum::<f64>() + self.tau * self.tau).sqrt()
    }

    /// `L^2` pairing with a variation `(dv, dtau)`.
    pub fn pair(&self, points: usize, dv: &[f64], dtau: f64) -> f64 {
        let h = 1.0 / points as f64;
        h * self.field.iter().zip(dv).map(|(a, b)| a * b).sum::<f64>() + self.tau * dtau
    }
}

pub fn rabinowitz_gradient(lp: &DiscreteLoop, system: &SymplecticSystem) -> Result<LoopGradient> {
    check_loop(system, lp)?;
    let omega = system.structure.omega_matrix();
    let dv = lp.derivative();
    let (n, d) = (lp.len(), lp.dim);
    let inv_ord = 1.0 / lp.order as f64;
    let mut field = vec![0.0; n * d];
    let mut grad = vec![0.0; d];
    let mut mean_h = 0.0;
    for k in 0..n {
        let x = lp.point(k);
        system.hamiltonian.gradient(x, &mut grad);
        mean_h += system.energy(x) - lp.energy;
        for a in 0..d {
            let mut acc = 0.0;
            for b in 0..d {
                acc += omega[(a, b)] * dv[k * d + b];
            }
            field[k * d + a] = inv_ord * acc - lp.tau * grad[a];
        }
    }
    Ok(LoopGradient { field, tau: -mean_h / n as f64 })
}

/// Euclidean Hessian of the discrete action in the flattened `(v, tau)` coordinates.
pub fn discrete_hessian(lp: &DiscreteLoop, system: &SymplecticSystem) -> Result<DMatrix<f64>> {
    check_loop(system, lp)?;
    let (n, d) = (lp.len(), lp.dim);
    let h = 1.0 / n as f64;
    let nf = n as f64;
    let omega = system.structure.omega_matrix();
    let m = n * d;
    let mut hess = DMatrix::zeros(m + 1, m + 1);
    let scale = h / lp.order as f64;
    let mut grad = vec![0.0; d];
    for k in 0..n {
        for &(o, c) in lp.stencil.weights() {
            for (l, sign) in [((k + o) % n, 1.0), ((k + n - o) % n, -1.0)] {
                for a in 0..d {
                    for b in 0..d {
                        hess[(k * d + a, l * d + b)] += scale * omega[(a, b)] * sign * nf * c;
                    }
                }
            }
        }
        let hk = system.hamiltonian.hessian(lp.point(k));
        for a in 0..d {
            for b in 0..d {
                hess[(k * d + a, k * d + b)] -= h * lp.tau * hk[(a, b)];
            }
        }
        system.hamiltonian.gradient(lp.point(k), &mut grad);
        for a in 0..d {
            hess[(k * d + a, m)] = -h * grad[a];
            hess[(m, k * d + a)] = -h * grad[a];
        }
    }
    Ok(hess)
}

// ---------------------------------------------------------------------------
// Perturbations

/// Smooth step: 0 for `u <= 0`, 1 for `u >= 1`, all derivatives vanish at both ends.
pub fn smooth_step(u: f64) -> f64 {
    smooth_step_with_derivative(u).0
}

fn smooth_step_with_derivative(u: f64) -> (f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0);
    }
    if u >= 1.0 {
        return (1.0, 0.0);
    }
    let f = (-1.0 / u).exp();
    let g = (-1.0 / (1.0 - u)).exp();
    let df = f / (u * u);
    let dg = -g / ((1.0 - u) * (1.0 - u));
    let s = f + g;
    (f / s, (df * s - f * (df + dg)) / (s * s))
}

/// `beta_r(s)`: 0 for `|s| >= r`, 1 for `|s| <= r - 1` (when `r >= 1`), `s beta' <= 0`.
pub fn cutoff_beta(r: f64, s: f64) -> f64 {
    if r <= 0.0 || s.abs() >= r {
        return 0.0;
    }
    let shoulder = (r - 1.0).max(0.0);
    let den = r * r - shoulder * shoulder;
    smooth_step(r) * smooth_step((r * r - s * s) / den)
}

/// Normalized time bump supported in `(1/2, 1)` with unit integral.
pub fn time_bump(t: f64) -> f64 {
    static NORM: OnceLock<f64> = OnceLock::new();
    let z = *NORM.get_or_init(|| {
        // Simpson on the raw bump over (0, 1)
        let n = 20_000;
        let f = |u: f64| if u <= 0.0 || u >= 1.0 { 0.0 } else { (-1.0 / (u * (1.0 - u))).exp() };
        let h = 1.0 / n as f64;
        let mut acc = f(0.0) + f(1.0);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        acc * h / 3.0
    });
    let u = 2.0 * t - 1.0;
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        2.0 * (-1.0 / (u * (1.0 - u))).exp() / z
    }
}

/// Time-independent factor of a separable perturbation `F(t, x) = chi(t) f(x)`.
pub trait SpatialProfile: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// Box outside which `f` vanishes.
    fn support_box(&self) -> Vec<(f64, f64)>;
    /// `(min f, max f)`.
    fn range(&self) -> (f64, f64);
}

#[derive(Debug, Clone)]
pub struct ZeroProfile {
    pub dim: usize,
}

impl SpatialProfile for ZeroProfile {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn support_box(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 0.0); self.dim]
    }
    fn range(&self) -> (f64, f64) {
        (0.0, 0.0)
    }
}

/// `amplitude * (1 - step(|x - c|^2 / w^2))`.
#[derive(Debug, Clone)]
pub struct BumpProfile {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

impl SpatialProfile for BumpProfile {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        self.amplitude * (1.0 - smooth_step(r2 / (self.width * self.width)))
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let w2 = self.width * self.width;
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        let (_, ds) = smooth_step_with_derivative(r2 / w2);
        for i in 0..x.len() {
            out[i] = -self.amplitude * ds * 2.0 * (x[i] - self.center[i]) / w2;
        }
    }
    fn support_box(&self) -> Vec<(f64, f64)> {
        self.center.iter().map(|c| (c - self.width, c + self.width)).collect()
    }
    fn range(&self) -> (f64, f64) {
        if self.amplitude >= 0.0 {
            (0.0, self.amplitude)
        } else {
            (self.amplitude, 0.0)
        }
    }
}

/// Generator of the translation `x -> x + c` on the ball of radius `inner`,
/// cut off smoothly at radius `outer`: `f(x) = <Omega c, x> psi(|x|^2)`.
#[derive(Debug, Clone)]
pub struct TranslationProfile {
    pub covector: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
    peak: f64,
}

impl TranslationProfile {
    pub fn new(system: &SymplecticSystem, shift: &[f64], inner: f64, outer: f64) -> Result<Self> {
        check_dim(system.dim(), shift.len())?;
        if !(inner > 0.0 && outer > inner) {
            return Err(Error::Parameter("translation cutoff needs 0 < inner < outer".into()));
        }
        let covector = system.structure.omega_matrix() * DVector::from_column_slice(shift);
        let norm = covector.norm();
        let cut = |s: f64| 1.0 - smooth_step((s * s - inner * inner) / (outer * outer - inner * inner));
        // max of s * psi(s^2) along the covector direction
        let mut peak: f64 = 0.0;
        let steps = 20_000;
        for i in 0..=steps {
            let s = outer * i as f64 / steps as f64;
            peak = peak.max(s * cut(s));
        }
        Ok(Self { covector: covector.as_slice().to_vec(), inner, outer, peak: peak * norm })
    }

    fn cutoff(&self, r2: f64) -> (f64, f64) {
        let (i2, o2) = (self.inner * self.inner, self.outer * self.outer);
        let (s, ds) = smooth_step_with_derivative((r2 - i2) / (o2 - i2));
        (1.0 - s, -ds / (o2 - i2))
    }
}

impl SpatialProfile for TranslationProfile {
    fn dim(&self) -> usize {
        self.covector.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let l: f64 = self.covector.iter().zip(x).map(|(a, b)| a * b).sum();
        l * self.cutoff(r2).0
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let l: f64 = self.covector.iter().zip(x).map(|(a, b)| a * b).sum();
        let (psi, dpsi) = self.cutoff(r2);
        for i in 0..x.len() {
            out[i] = self.covector[i] * psi + l * dpsi * 2.0 * x[i];
        }
    }
    fn support_box(&self) -> Vec<(f64, f64)> {
        vec![(-self.outer, self.outer); self.covector.len()]
    }
    fn range(&self) -> (f64, f64) {
        (-self.peak, self.peak)
    }
}

/// `f(q, p) = <d, p> psi(|p|^2)` on a cotangent bundle of a torus.
///
/// Inside the ball `|p| < inner` its flow is `q' = d`, `p' = B d`, so on a
/// magnetic torus with invertible `B` it translates the fibres by `B d`.
#[derive(Debug, Clone)]
pub struct FiberTranslationProfile {
    pub n: usize,
    pub direction: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
    peak: f64,
}

impl FiberTranslationProfile {
    /// Profile whose core flow moves `p` by `shift`; needs `B` invertible.
    pub fn for_shift(system: &SymplecticSystem, shift: &[f64], inner: f64, outer: f64) -> Result<Self> {
        let b = system
            .structure
            .j_mag()
            .ok_or_else(|| Error::UnsupportedStructure("fibre translation needs a magnetic torus".into()))?;
        check_dim(b.nrows(), shift.len())?;
        let d = b
            .clone()
            .lu()
            .solve(&DVector::from_column_slice(shift))
            .ok_or_else(|| Error::Parameter("magnetic form is not invertible".into()))?;
        Self::new(d.as_slice().to_vec(), inner, outer)
    }

    pub fn new(direction: Vec<f64>, inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > inner) {
            return Err(Error::Parameter("fibre cutoff needs 0 < inner < outer".into()));
        }
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut p = Self { n: direction.len(), direction, inner, outer, peak: 0.0 };
        let steps = 20_000;
        let mut peak: f64 = 0.0;
        for i in 0..=steps {
            let s = outer * i as f64 / steps as f64;
            peak = peak.max(s * p.cutoff(s * s).0);
        }
        p.peak = peak * norm;
        Ok(p)
    }

    fn cutoff(&self, r2: f64) -> (f64, f64) {
        let (i2, o2) = (self.inner * self.inner, self.outer * self.outer);
        let (s, ds) = smooth_step_with_derivative((r2 - i2) / (o2 - i2));
        (1.0 - s, -ds / (o2 - i2))
    }
}

impl SpatialProfile for FiberTranslationProfile {
    fn dim(&self) -> usize {
        2 * self.n
    }
    fn value(&self, x: &[f64]) -> f64 {
        let p = &x[self.n..];
        let r2: f64 = p.iter().map(|v| v * v).sum();
        let l: f64 = self.direction.iter().zip(p).map(|(a, b)| a * b).sum();
        l * self.cutoff(r2).0
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let p = &x[n..];
        let r2: f64 = p.iter().map(|v| v * v).sum();
        let l: f64 = self.direction.iter().zip(p).map(|(a, b)| a * b).sum();
        let (psi, dpsi) = self.cutoff(r2);
        out[..n].fill(0.0);
        for i in 0..n {
            out[n + i] = self.direction[i] * psi + l * dpsi * 2.0 * p[i];
        }
    }
    fn support_box(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(0.0, 1.0); self.n];
        b.extend(std::iter::repeat((-self.outer, self.outer)).take(self.n));
        b
    }
    fn range(&self) -> (f64, f64) {
        (-self.peak, self.peak)
    }
}

/// Shear `x_1 -> x_1 + g(y_1)` that moves every chord `{y_1 = const}` of the
/// unit ball past itself; `g(y) > 2 sqrt(1 - y^2)` on `[-1, 1]`.
///
/// `f = G(y_1) c(x_1) c_2(|z'|^2)` with `G' = g` near the ball, so the
/// oscillation of `f` is `max G`, only slightly above `pi`.
#[derive(Debug, Clone)]
pub struct ChordShearProfile {
    pub n: usize,
    /// Relative excess of `g` over the chord length.
    pub excess: f64,
    /// Additive floor of `g`.
    pub floor: f64,
    table: Vec<f64>,
    y0: f64,
    dy: f64,
    g_max: f64,
    shift_max: f64,
}

const SHEAR_EPS: f64 = 0.01;
const SHEAR_SOFT: f64 = 1e-3;
const SHEAR_EDGE: f64 = 0.05;
const SHEAR_FALL: (f64, f64) = (1.5, 2.5);

impl ChordShearProfile {
    pub fn new(n: usize, excess: f64, floor: f64) -> Result<Self> {
        if n < 1 || !(excess >= 0.0) || !(floor > 0.0) {
            return Err(Error::Parameter("chord shear needs n >= 1, excess >= 0 and floor > 0".into()));
        }
        let mut p = Self { n, excess, floor, table: Vec::new(), y0: -1.0 - SHEAR_EDGE, dy: 0.0, g_max: 0.0, shift_max: 0.0 };
        let cells = 40_000;
        p.dy = 2.0 * (1.0 + SHEAR_EDGE) / cells as f64;
        p.table = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        p.table.push(0.0);
        for i in 0..cells {
            let a = p.y0 + i as f64 * p.dy;
            let (ga, gm, gb) = (p.shear(a), p.shear(a + 0.5 * p.dy), p.shear(a + p.dy));
            acc += p.dy / 6.0 * (ga + 4.0 * gm + gb);
            p.table.push(acc);
            p.shift_max = p.shift_max.max(ga).max(gm);
        }
        p.g_max = acc;
        Ok(p)
    }

    /// The shear amount `g(y)`.
    pub fn shear(&self, y: f64) -> f64 {
        let u = 1.0 - y * y;
        let soft = if u > 0.0 {
            u + SHEAR_SOFT * (-u / SHEAR_SOFT).exp().ln_1p()
        } else {
            SHEAR_SOFT * (u / SHEAR_SOFT).exp().ln_1p()
        };
        let core = 2.0 * (1.0 + self.excess) * (SHEAR_EPS * SHEAR_EPS + soft).sqrt() + self.floor;
        core * (1.0 - smooth_step((y.abs() - 1.0) / SHEAR_EDGE))
    }

    /// `max f`, which is also the Hofer norm.
    pub fn height(&self) -> f64 {
        self.g_max
    }

    /// Largest shear, i.e. the largest `x_1` displacement.
    pub fn max_shift(&self) -> f64 {
        self.shift_max
    }

    /// Primitive of the shear with the far-field fall-off: `(G, G')`.
    fn g_profile(&self, y: f64) -> (f64, f64) {
        let end = self.y0 + self.dy * (self.table.len() - 1) as f64;
        let (i_val, i_der) = if y <= self.y0 {
            (0.0, 0.0)
        } else if y >= end {
            (self.g_max, 0.0)
        } else {
            // cubic Hermite on the cumulative table with exact slopes
            let pos = (y - self.y0) / self.dy;
            let i = (pos.floor() as usize).min(self.table.len() - 2);
            let s = pos - i as f64;
            let (a, b) = (self.y0 + i as f64 * self.dy, self.y0 + (i + 1) as f64 * self.dy);
            let (fa, fb) = (self.table[i], self.table[i + 1]);
            let (da, db) = (self.shear(a) * self.dy, self.shear(b) * self.dy);
            let (s2, s3) = (s * s, s * s * s);
            let v = (2.0 * s3 - 3.0 * s2 + 1.0) * fa + (s3 - 2.0 * s2 + s) * da + (-2.0 * s3 + 3.0 * s2) * fb + (s3 - s2) * db;
            (v, self.shear(y))
        };
        let (fall, dfall) = smooth_step_with_derivative((y - SHEAR_FALL.0) / (SHEAR_FALL.1 - SHEAR_FALL.0));
        let w = 1.0 - fall;
        let dw = -dfall / (SHEAR_FALL.1 - SHEAR_FALL.0);
        (i_val * w, i_der * w + i_val * dw)
    }

    fn x_window(&self) -> ((f64, f64), (f64, f64)) {
        let hi = 1.0 + self.shift_max + 0.5;
        ((-1.5, hi), (-2.5, hi + 1.0))
    }

    fn window(u: f64, flat: (f64, f64), outer: (f64, f64)) -> (f64, f64) {
        if u < flat.0 {
            let w = flat.0 - outer.0;
            let (s, ds) = smooth_step_with_derivative((flat.0 - u) / w);
            (1.0 - s, ds / w)
        } else if u > flat.1 {
            let w = outer.1 - flat.1;
            let (s, ds) = smooth_step_with_derivative((u - flat.1) / w);
            (1.0 - s, -ds / w)
        } else {
            (1.0, 0.0)
        }
    }

    fn pieces(&self, x: &[f64]) -> [(f64, f64); 3] {
        let n = self.n;
        let (flat, outer) = self.x_window();
        let c1 = Self::window(x[0], flat, outer);
        let g = self.g_profile(x[n]);
        let rho: f64 = (1..n).map(|j| x[j] * x[j] + x[n + j] * x[n + j]).sum();
        let (s, ds) = smooth_step_with_derivative((rho - 1.2) / 0.8);
        [c1, g, (1.0 - s, -ds / 0.8)]
    }
}

impl SpatialProfile for ChordShearProfile {
    fn dim(&self) -> usize {
        2 * self.n
    }
    fn value(&self, x: &[f64]) -> f64 {
        let [c1, g, c2] = self.pieces(x);
        c1.0 * g.0 * c2.0
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let [c1, g, c2] = self.pieces(x);
        out.fill(0.0);
        out[0] = c1.1 * g.0 * c2.0;
        out[n] = c1.0 * g.1 * c2.0;
        let common = c1.0 * g.0 * c2.1 * 2.0;
        for j in 1..n {
            out[j] = common * x[j];
            out[n + j] = common * x[n + j];
        }
    }
    fn support_box(&self) -> Vec<(f64, f64)> {
        let (_, outer) = self.x_window();
        let mut b = vec![(-2.0f64.sqrt(), 2.0f64.sqrt()); 2 * self.n];
        b[0] = outer;
        b[self.n] = (self.y0, SHEAR_FALL.1);
        b
    }
    fn range(&self) -> (f64, f64) {
        (0.0, self.g_max)
    }
}

/// `F(t, x) = chi(t) f(x)` with the normalized time bump, so `F_t = 0` on `[0, 1/2]`.
#[derive(Debug, Clone)]
pub struct SeparablePerturbation {
    pub spatial: Arc<dyn SpatialProfile>,
}

impl SeparablePerturbation {
    pub fn new(spatial: Arc<dyn SpatialProfile>) -> Self {
        Self { spatial }
    }

    pub fn dim(&self) -> usize {
        self.spatial.dim()
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        let c = time_bump(t.rem_euclid(1.0));
        if c == 0.0 {
            0.0
        } else {
            c * self.spatial.value(x)
        }
    }

    pub fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let c = time_bump(t.rem_euclid(1.0));
        if c == 0.0 {
            out.fill(0.0);
            return;
        }
        self.spatial.gradient(x, out);
        for v in out.iter_mut() {
            *v *= c;
        }
    }

    /// Closed-form `(||F||_+, ||F||_-)` for the separable form.
    pub fn norm_pieces(&self) -> (f64, f64) {
        let (lo, hi) = self.spatial.range();
        (hi.max(0.0), (-lo).max(0.0))
    }

    pub fn support_box(&self) -> Vec<(f64, f64)> {
        self.spatial.support_box()
    }
}

/// A perturbation together with the cutoff radius of the family `A_r`.
#[derive(Debug, Clone)]
pub struct PerturbationProfile {
    pub radius: f64,
    pub hamiltonian: SeparablePerturbation,
    pub norm_plus: f64,
    pub norm_minus: f64,
}

impl PerturbationProfile {
    pub fn new(radius: f64, hamiltonian: SeparablePerturbation) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::Parameter("cutoff radius must be non-negative".into()));
        }
        let (norm_plus, norm_minus) = hamiltonian.norm_pieces();
        Ok(Self { radius, hamiltonian, norm_plus, norm_minus })
    }

    pub fn hofer_norm(&self) -> f64 {
        self.norm_plus + self.norm_minus
    }

    /// Quadrature `h sum_k F(t_k, v_k)`.
    pub fn loop_integral(&self, lp: &DiscreteLoop) -> f64 {
        let n = lp.len();
        (0..n).map(|k| self.hamiltonian.value(k as f64 / n as f64, lp.point(k))).sum::<f64>() / n as f64
    }
}

/// `A(v, tau) - beta_r(s) h sum F(t_k, v_k)`.
pub fn perturbed_action(lp: &DiscreteLoop, system: &SymplecticSystem, profile: &PerturbationProfile, s: f64) -> Result<f64> {
    let a = rabinowitz_action(lp, system)?;
    let beta = cutoff_beta(profile.radius, s);
    if beta == 0.0 {
        return Ok(a);
    }
    Ok(a - beta * profile.loop_integral(lp))
}

pub fn perturbed_gradient(
    lp: &DiscreteLoop,
    system: &SymplecticSystem,
    profile: Option<&PerturbationProfile>,
    s: f64,
) -> Result<LoopGradient> {
    let mut g = rabinowitz_gradient(lp, system)?;
    if let Some(p) = profile {
        let beta = cutoff_beta(p.radius, s);
        if beta != 0.0 {
            let (n, d) = (lp.len(), lp.dim);
            let mut buf = vec![0.0; d];
            for k in 0..n {
                p.hamiltonian.gradient(k as f64 / n as f64, lp.point(k), &mut buf);
                for a in 0..d {
                    g.field[k * d + a] -= beta * buf[a];
                }
            }
        }
    }
    Ok(g)
}

fn action_at(lp: &DiscreteLoop, system: &SymplecticSystem, profile: Option<&PerturbationProfile>, s: f64) -> Result<f64> {
    match profile {
        Some(p) => perturbed_action(lp, system, p, s),
        None => rabinowitz_action(lp, system),
    }
}

// ---------------------------------------------------------------------------
// Flow

/// How the descent direction is built from the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DescentMode {
    /// Steepest descent in the `L^2` metric.
    L2,
    /// Steepest descent in the metric `|Hess A(start)| + shift`, which bounds
    /// all linear growth rates by one.
    Preconditioned { shift: f64 },
    /// Damped Newton iteration towards the nearest critical point, with a
    /// pseudo-inverse on the numerical kernel. Not a descent method.
    SaddleSeeking { trust_radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentSchedule {
    pub mode: DescentMode,
    /// Flow parameter interval; `s_end` may be infinite for unperturbed runs.
    pub s_start: f64,
    pub s_end: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    /// Relative mismatch allowed between predicted and realized action drop.
    pub step_tol: f64,
    /// Keep every intermediate loop (otherwise only start and end).
    pub keep_loops: bool,
}

impl Default for DescentSchedule {
    fn default() -> Self {
        Self {
            mode: DescentMode::L2,
            s_start: 0.0,
            s_end: f64::INFINITY,
            max_steps: 10_000,
            grad_tol: 1e-6,
            initial_step: 1e-3,
            max_step: 0.05,
            step_tol: 0.02,
            keep_loops: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub s: f64,
    /// `A_r(u(s), s)`.
    pub action: f64,
    pub grad_norm: f64,
    pub tau: f64,
    /// `|du|^2 / ds` for the step that ended here (metric of the mode).
    pub step_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryStep>,
    pub loops: Vec<DiscreteLoop>,
    pub converged: bool,
    pub mode: DescentMode,
}

impl Trajectory {
    pub fn final_loop(&self) -> &DiscreteLoop {
        self.loops.last().expect("trajectory holds at least the start loop")
    }

    /// CSV with columns `step,s,action,grad_norm,tau`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Parameter(format!("csv output failed: {e}"));
        w.write_record(["step", "s", "action", "grad_norm", "tau"]).map_err(io)?;
        for (i, r) in self.records.iter().enumerate() {
            w.write_record([i.to_string(), r.s.to_string(), r.action.to_string(), r.grad_norm.to_string(), r.tau.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Parameter(format!("csv output failed: {e}")))?;
        Ok(())
    }
}

/// `integral |d_s u|^2 ds`, summed over the recorded steps.
pub fn flow_energy(trajectory: &Trajectory) -> f64 {
    trajectory.records.iter().skip(1).map(|r| r.step_energy).sum()
}

/// Flattened Euclidean gradient `(h G, g_tau)`.
fn euclidean_gradient(g: &LoopGradient, n: usize) -> DVector<f64> {
    let h = 1.0 / n as f64;
    let mut out = DVector::zeros(g.field.len() + 1);
    for (o, v) in out.iter_mut().zip(&g.field) {
        *o = h * v;
    }
    out[g.field.len()] = g.tau;
    out
}

/// Diagonal of `M^{-1/2}` for the metric `diag(h, .., h, 1)`.
fn metric_inv_sqrt(n: usize, len: usize) -> DVector<f64> {
    let mut m = DVector::from_element(len, (n as f64).sqrt());
    m[len - 1] = 1.0;
    m
}

fn metric_norm2(du: &DVector<f64>, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let last = du.len() - 1;
    h * du.rows(0, last).norm_squared() + du[last] * du[last]
}

/// Eigen-decomposition of `M^{-1/2} Hess M^{-1/2}`.
fn scaled_eigen(hess: DMatrix<f64>, minv: &DVector<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut s = hess;
    for j in 0..s.ncols() {
        for i in 0..s.nrows() {
            s[(i, j)] *= minv[i] * minv[j];
        }
    }
    s.symmetric_eigen()
}

/// `M^{-1/2} Q f(Lambda) Q^T M^{-1/2} g`.
fn apply_spectral(eig: &SymmetricEigen<f64, nalgebra::Dyn>, minv: &DVector<f64>, g: &DVector<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
    let y = g.component_mul(minv);
    let mut c = eig.eigenvectors.tr_mul(&y);
    for (ci, &l) in c.iter_mut().zip(eig.eigenvalues.iter()) {
        *ci *= f(l);
    }
    (&eig.eigenvectors * c).component_mul(minv)
}

/// Runs the loop flow from `loop0`.
///
/// With a perturbation the flow parameter sweeps `[s_start, s_end]` and the
/// gradient includes `-beta_r(s) grad F`; runs only stop early on a small
/// gradient once the cutoff has switched off for good.
pub fn descend(
    loop0: &DiscreteLoop,
    system: &SymplecticSystem,
    profile: Option<&PerturbationProfile>,
    schedule: &DescentSchedule,
) -> Result<Trajectory> {
    check_loop(system, loop0)?;
    if !(schedule.s_end > schedule.s_start) || schedule.max_step <= 0.0 || schedule.initial_step <= 0.0 {
        return Err(Error::Parameter("invalid descent schedule".into()));
    }
    let n = loop0.len();
    let mut u = loop0.clone();
    let mut s = schedule.s_start;
    let g0 = perturbed_gradient(&u, system, profile, s)?;
    let mut records = vec![TrajectoryStep {
        s,
        action: action_at(&u, system, profile, s)?,
        grad_norm: g0.norm(n),
        tau: u.tau,
        step_energy: 0.0,
    }];
    let mut loops = vec![u.clone()];
    let len = u.data.len() + 1;
    let minv = metric_inv_sqrt(n, len);
    let cutoff_done = |s: f64| profile.map_or(true, |p| s >= p.radius);

    let precond = match schedule.mode {
        DescentMode::Preconditioned { shift } => {
            if !(shift > 0.0) {
                return Err(Error::Parameter("preconditioner shift must be positive".into()));
            }
            Some((scaled_eigen(discrete_hessian(&u, system)?, &minv), shift))
        }
        DescentMode::SaddleSeeking { .. } if profile.is_some() => {
            return Err(Error::Parameter("saddle seeking runs on the unperturbed functional only".into()));
        }
        _ => None,
    };

    let mut dt = schedule.initial_step;
    let mut converged = false;
    for _ in 0..schedule.max_steps {
        let grad = perturbed_gradient(&u, system, profile, s)?;
        let gnorm = grad.norm(n);
        if gnorm < schedule.grad_tol && cutoff_done(s) {
            converged = true;
            break;
        }
        if s >= schedule.s_end {
            break;
        }
        let ge = euclidean_gradient(&grad, n);

        let (du, ds) = match (&schedule.mode, &precond) {
            (DescentMode::SaddleSeeking { trust_radius }, _) => {
                let eig = scaled_eigen(discrete_hessian(&u, system)?, &minv);
                let lmax = eig.eigenvalues.amax();
                let mut du = -apply_spectral(&eig, &minv, &ge, |l| if l.abs() > 1e-9 * lmax { 1.0 / l } else { 0.0 });
                let norm = metric_norm2(&du, n).sqrt();
                if norm > *trust_radius {
                    du *= *trust_radius / norm;
                }
                (du, 1.0)
            }
            (mode, pre) => {
                let dir = match (mode, pre) {
                    (DescentMode::Preconditioned { .. }, Some((eig, shift))) => {
                        -apply_spectral(eig, &minv, &ge, |l| 1.0 / (l.abs() + shift))
                    }
                    _ => -ge.component_mul(&minv).component_mul(&minv),
                };
                let rate = -ge.dot(&dir);
                let a_here = action_at(&u, system, profile, s)?;
                let state = u.state();
                let mut accepted = None;
                for _ in 0..60 {
                    let h = dt.min(schedule.max_step).min(schedule.s_end - s);
                    let trial = u.with_state(&(&state + &dir * h));
                    let drop = a_here - action_at(&trial, system, profile, s)?;
                    let pred = h * rate;
                    if (drop - pred).abs() <= schedule.step_tol * pred || pred == 0.0 {
                        dt = (1.5 * h).min(schedule.max_step);
                        accepted = Some((&dir * h, h));
                        break;
                    }
                    dt = 0.5 * h;
                    if dt < 1e-15 {
                        break;
                    }
                }
                match accepted {
                    Some(a) => a,
                    None => break,
                }
            }
        };
        let next = u.with_state(&(u.state() + &du));
        s += ds;
        let g_next = perturbed_gradient(&next, system, profile, s)?;
        records.push(TrajectoryStep {
            s,
            action: action_at(&next, system, profile, s)?,
            grad_norm: g_next.norm(n),
            tau: next.tau,
            step_energy: match (&schedule.mode, &precond) {
                (DescentMode::Preconditioned { .. }, Some((eig, shift))) => {
                    // |du|_G^2 with G = M^{1/2}(|S| + shift)M^{1/2}
                    let y = du.component_div(&minv);
                    let c = eig.eigenvectors.tr_mul(&y);
                    c.iter().zip(eig.eigenvalues.iter()).map(|(ci, l)| ci * ci * (l.abs() + shift)).sum::<f64>() / ds
                }
                _ => metric_norm2(&du, n) / ds,
            },
        });
        u = next;
        if schedule.keep_loops {
            loops.push(u.clone());
        }
    }
    if !converged {
        let g = perturbed_gradient(&u, system, profile, s)?;
        converged = g.norm(n) < schedule.grad_tol && cutoff_done(s);
    }
    if !schedule.keep_loops {
        loops.push(u);
    }
    Ok(Trajectory { records, loops, converged, mode: schedule.mode })
}

/// Settings for [`bounded_flow_line`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLineConfig {
    /// Metric shift `sigma` in `|Hess A(v_0)| + sigma`.
    pub shift: f64,
    pub s_start: f64,
    pub s_end: f64,
    pub slices: usize,
    pub max_iterations: usize,
    pub tol: f64,
    /// Relaxation factor of the fixed-point iteration, in `(0, 1]`.
    pub relaxation: f64,
    #[serde(default)]
    pub method: FlowLineMethod,
}

/// Solver for the bounded flow line equations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowLineMethod {
    /// Relaxed fixed-point iteration; cheap, but only contracts for weak perturbations.
    FixedPoint,
    /// Newton's method with GMRES on finite-difference Jacobian products,
    /// continued in the strength of the perturbation.
    #[default]
    NewtonKrylov,
}

impl FlowLineConfig {
    /// Window `[-r - margin, r + margin]` around the cutoff support.
    pub fn around(radius: f64, margin: f64) -> Self {
        Self {
            shift: 1.0,
            s_start: -radius - margin,
            s_end: radius + margin,
            slices: 400,
            max_iterations: 300,
            tol: 1e-10,
            relaxation: 1.0,
            method: FlowLineMethod::NewtonKrylov,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowLine {
    /// One record per slice; `step_energy` is in the flow metric.
    pub trajectory: Trajectory,
    /// Fixed-point sweeps or Newton steps taken.
    pub iterations: usize,
    /// Max-norm of the last fixed-point change or of the final Newton residual.
    pub increment: f64,
    /// Largest metric norm of `d_s u + grad A_r` over slice midpoints.
    pub equation_residual: f64,
}

/// `theta f` for the homotopy in the perturbation strength.
#[derive(Debug)]
struct ScaledProfile {
    inner: Arc<dyn SpatialProfile>,
    factor: f64,
}

impl SpatialProfile for ScaledProfile {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.factor * self.inner.value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.inner.gradient(x, out);
        out.iter_mut().for_each(|v| *v *= self.factor);
    }
    fn support_box(&self) -> Vec<(f64, f64)> {
        self.inner.support_box()
    }
    fn range(&self) -> (f64, f64) {
        let (lo, hi) = self.inner.range();
        (self.factor * lo, self.factor * hi)
    }
}

fn scaled(profile: &PerturbationProfile, theta: f64) -> PerturbationProfile {
    let spatial: Arc<dyn SpatialProfile> = Arc::new(ScaledProfile { inner: profile.hamiltonian.spatial.clone(), factor: theta });
    PerturbationProfile {
        radius: profile.radius,
        hamiltonian: SeparablePerturbation::new(spatial),
        norm_plus: theta * profile.norm_plus,
        norm_minus: theta * profile.norm_minus,
    }
}

fn non_finite(y: &DMatrix<f64>) -> bool {
    y.iter().any(|v| !v.is_finite())
}

fn fixed_point(
    mut y: DMatrix<f64>,
    map: impl Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    config: &FlowLineConfig,
) -> Result<(DMatrix<f64>, usize, f64)> {
    let mut increment = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let next = map(&y)?;
        let w = config.relaxation;
        let updated = &y * (1.0 - w) + next * w;
        if non_finite(&updated) {
            return Err(Error::NonConvergence { iterations, residual: f64::INFINITY });
        }
        increment = (&updated - &y).amax();
        y = updated;
        if increment < config.tol {
            return Ok((y, iterations, increment));
        }
    }
    Err(Error::NonConvergence { iterations, residual: increment })
}

/// Restarted GMRES for `A x = b`, started from zero. Returns `x` and the
/// relative residual reached.
fn gmres(
    mut apply: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    b: &DVector<f64>,
    rel_tol: f64,
    restart: usize,
    max_products: usize,
) -> Result<(DVector<f64>, f64)> {
    let bnorm = b.norm();
    let mut x = DVector::zeros(b.len());
    if bnorm == 0.0 {
        return Ok((x, 0.0));
    }
    let mut products = 0;
    let mut rel = 1.0;
    while products < max_products {
        let r = if products == 0 { b.clone() } else { b - apply(&x)? };
        let beta = r.norm();
        rel = beta / bnorm;
        if rel <= rel_tol {
            break;
        }
        let mut basis = vec![r / beta];
        let mut h = DMatrix::<f64>::zeros(restart + 1, restart);
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = DVector::<f64>::zeros(restart + 1);
        g[0] = beta;
        let mut used = 0;
        for j in 0..restart {
            let mut w = apply(&basis[j])?;
            products += 1;
            for (i, v) in basis.iter().enumerate() {
                h[(i, j)] = w.dot(v);
                w.axpy(-h[(i, j)], v, 1.0);
            }
            let wn = w.norm();
            h[(j + 1, j)] = wn;
            for i in 0..j {
                let t = cs[i] * h[(i, j)] + sn[i] * h[(i + 1, j)];
                h[(i + 1, j)] = -sn[i] * h[(i, j)] + cs[i] * h[(i + 1, j)];
                h[(i, j)] = t;
            }
            let d = h[(j, j)].hypot(h[(j + 1, j)]);
            if d == 0.0 {
                break;
            }
            cs[j] = h[(j, j)] / d;
            sn[j] = h[(j + 1, j)] / d;
            h[(j, j)] = d;
            h[(j + 1, j)] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            rel = g[j + 1].abs() / bnorm;
            if rel <= rel_tol || products >= max_products || wn <= 1e-14 * beta {
                break;
            }
            basis.push(w / wn);
        }
        if used == 0 {
            break;
        }
        // back substitution on the triangular block
        let mut z = DVector::<f64>::zeros(used);
        for i in (0..used).rev() {
            let mut acc = g[i];
            for k in i + 1..used {
                acc -= h[(i, k)] * z[k];
            }
            z[i] = acc / h[(i, i)];
        }
        for (k, zk) in z.iter().enumerate() {
            x.axpy(*zk, &basis[k], 1.0);
        }
        if rel <= rel_tol {
            break;
        }
    }
    Ok((x, rel))
}

fn as_vector(y: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(y.as_slice())
}

fn as_matrix(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Newton steps on `y - G(y) = 0` for one perturbation strength.
fn newton_solve(
    mut y: DMatrix<f64>,
    map: &dyn Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    tol: f64,
    max_steps: usize,
) -> Result<(DMatrix<f64>, usize, f64)> {
    let (rows, cols) = y.shape();
    let mut gy = map(&y)?;
    let mut res = &y - &gy;
    let mut merit = res.norm();
    let mut rnorm = res.amax();
    for step in 1..=max_steps {
        if rnorm < tol {
            return Ok((y, step - 1, rnorm));
        }
        let yv = as_vector(&y);
        let gv = as_vector(&gy);
        let jvp = |d: &DVector<f64>| -> Result<DVector<f64>> {
            let dn = d.norm();
            if dn == 0.0 {
                return Ok(DVector::zeros(d.len()));
            }
            let eps = 1e-7 * (1.0 + yv.norm()) / dn;
            let shifted = as_matrix(&(&yv + d * eps), rows, cols);
            let gd = (as_vector(&map(&shifted)?) - &gv) / eps;
            Ok(d - gd)
        };
        // inexact Newton: loose linear solves far from the solution
        let eta = (0.1 * rnorm).clamp(1e-4, 1e-2);
        let (delta, _) = gmres(jvp, &(-as_vector(&res)), eta, 40, 200)?;
        let delta = as_matrix(&delta, rows, cols);
        // backtracking on the L2 norm of the residual
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= 1.0 / 64.0 {
            let trial = &y + &delta * alpha;
            if !non_finite(&trial) {
                if let Ok(gt) = map(&trial) {
                    let rt = &trial - &gt;
                    let mt = rt.norm();
                    if mt.is_finite() && mt < merit {
                        y = trial;
                        gy = gt;
                        rnorm = rt.amax();
                        merit = mt;
                        res = rt;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence { iterations: step, residual: rnorm });
        }
    }
    if rnorm < tol {
        Ok((y, max_steps, rnorm))
    } else {
        Err(Error::NonConvergence { iterations: max_steps, residual: rnorm })
    }
}

/// Continues the solution from `theta = 0` (where `y = 0`) to `theta = 1`,
/// halving the step after a failed Newton solve.
fn newton_homotopy(
    rows: usize,
    cols: usize,
    profile: &PerturbationProfile,
    map: impl Fn(&DMatrix<f64>, &PerturbationProfile) -> Result<DMatrix<f64>>,
    config: &FlowLineConfig,
) -> Result<(DMatrix<f64>, usize, f64)> {
    let mut y = DMatrix::zeros(rows, cols);
    // previous accepted point, for the secant predictor
    let mut prev: Option<(f64, DMatrix<f64>)> = None;
    let mut theta = 0.0;
    let mut step: f64 = 1.0;
    let mut total = 0;
    let mut last = 0.0;
    while theta < 1.0 {
        let target = (theta + step).min(1.0);
        let prof = scaled(profile, target);
        let guess = match &prev {
            Some((tp, yp)) if theta > *tp => &y + (&y - yp) * ((target - theta) / (theta - tp)),
            _ => y.clone(),
        };
        let budget = config.max_iterations.saturating_sub(total).min(30);
        if budget == 0 {
            return Err(Error::NonConvergence { iterations: total, residual: f64::INFINITY });
        }
        match newton_solve(guess, &|v| map(v, &prof), config.tol, budget) {
            Ok((solved, its, r)) => {
                total += its.max(1);
                prev = Some((theta, std::mem::replace(&mut y, solved)));
                theta = target;
                last = r;
                step = (2.0 * step).min(1.0);
            }
            Err(e) => {
                total += budget.min(5);
                step *= 0.5;
                if step < 1.0 / 256.0 {
                    return Err(e);
                }
            }
        }
    }
    Ok((y, total, last))
}

/// Bounded solution of `d_s u = -grad_G A_r(u, s)` with `u -> v_0` as `s -> -inf`.
///
/// `v_0` must be a critical loop of the unperturbed functional. In the
/// eigenbasis of the metric-normalized Hessian at `v_0`, modes that the flow
/// contracts are integrated forward from `s_start` and expanding modes
/// backward from `s_end` (both pinned to `v_0`); the nonlinear remainder is
/// resolved by the method selected in `config`. The result stays near the critical set
/// at both ends, unlike the initial value flow which escapes along the
/// expanding modes.
pub fn bounded_flow_line(
    v0: &DiscreteLoop,
    system: &SymplecticSystem,
    profile: &PerturbationProfile,
    config: &FlowLineConfig,
) -> Result<FlowLine> {
    check_loop(system, v0)?;
    if !(config.s_end > config.s_start) || config.slices < 2 || !(config.shift > 0.0) {
        return Err(Error::Parameter("invalid flow line window".into()));
    }
    if !(config.relaxation > 0.0 && config.relaxation <= 1.0) {
        return Err(Error::Parameter("relaxation must lie in (0, 1]".into()));
    }
    let n = v0.len();
    let g0 = rabinowitz_gradient(v0, system)?.norm(n);
    if g0 > 1e-8 {
        return Err(Error::Parameter(format!("start loop is not critical (gradient norm {g0:e})")));
    }
    let len = v0.data.len() + 1;
    let minv = metric_inv_sqrt(n, len);
    let hess = discrete_hessian(v0, system)?;
    let eig = scaled_eigen(hess.clone(), &minv);
    let sigma = config.shift;
    let lam: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mu: Vec<f64> = lam.iter().map(|l| l / (l.abs() + sigma)).collect();
    let base = v0.state();
    let m = config.slices;
    let ds = (config.s_end - config.s_start) / m as f64;
    let svals: Vec<f64> = (0..=m).map(|k| config.s_start + k as f64 * ds).collect();

    // y = Q^T M^{1/2} (u - v_0), one column per slice
    let to_state = |y: &DVector<f64>| &base + (&eig.eigenvectors * y).component_mul(&minv);
    // metric-scaled nonlinear remainder of the perturbed gradient, with the
    // perturbation scaled by theta
    let scale = DVector::from_iterator(len, lam.iter().map(|l| -1.0 / (l.abs() + sigma)));
    let forcing = |y: &DMatrix<f64>, prof: &PerturbationProfile| -> Result<DMatrix<f64>> {
        let mut delta = &eig.eigenvectors * y;
        for mut col in delta.column_iter_mut() {
            col.component_mul_assign(&minv);
        }
        let mut rem = -(&hess * &delta);
        for k in 0..=m {
            let lp = v0.with_state(&(&base + delta.column(k)));
            let ge = euclidean_gradient(&perturbed_gradient(&lp, system, Some(prof), svals[k])?, n);
            let mut col = rem.column_mut(k);
            col += ge;
            col.component_mul_assign(&minv);
        }
        let mut f = eig.eigenvectors.tr_mul(&rem);
        for mut col in f.column_iter_mut() {
            col.component_mul_assign(&scale);
        }
        Ok(f)
    };
    // exponential trapezoid: contracting modes forward from s_start,
    // expanding modes backward from s_end, both starting at zero
    let integrate = |f: &DMatrix<f64>| -> DMatrix<f64> {
        let mut next = DMatrix::<f64>::zeros(len, m + 1);
        for i in 0..len {
            let e = (-mu[i] * ds).exp();
            if mu[i] >= -1e-12 {
                for k in 0..m {
                    next[(i, k + 1)] = e * next[(i, k)] + 0.5 * ds * (e * f[(i, k)] + f[(i, k + 1)]);
                }
            } else {
                let eb = (mu[i] * ds).exp();
                for k in (0..m).rev() {
                    next[(i, k)] = eb * next[(i, k + 1)] - 0.5 * ds * (f[(i, k)] + eb * f[(i, k + 1)]);
                }
            }
        }
        next
    };
    let fixed_map = |y: &DMatrix<f64>, prof: &PerturbationProfile| -> Result<DMatrix<f64>> { Ok(integrate(&forcing(y, prof)?)) };

    let (y, iterations, increment) = match config.method {
        FlowLineMethod::FixedPoint => fixed_point(DMatrix::zeros(len, m + 1), |y| fixed_map(y, profile), config)?,
        FlowLineMethod::NewtonKrylov => newton_homotopy(len, m + 1, profile, |y, p| fixed_map(y, p), config)?,
    };

    let states: Vec<DVector<f64>> = (0..=m).map(|k| to_state(&y.column(k).into_owned())).collect();
    let g_norm2 = |du: &DVector<f64>| {
        let c = eig.eigenvectors.tr_mul(&du.component_div(&minv));
        c.iter().zip(&lam).map(|(ci, l)| ci * ci * (l.abs() + sigma)).sum::<f64>()
    };
    let mut records = Vec::with_capacity(m + 1);
    let mut loops = Vec::with_capacity(m + 1);
    let mut equation_residual: f64 = 0.0;
    for k in 0..=m {
        let lp = v0.with_state(&states[k]);
        let grad = perturbed_gradient(&lp, system, Some(profile), svals[k])?;
        let step_energy = if k == 0 { 0.0 } else { g_norm2(&(&states[k] - &states[k - 1])) / ds };
        if k > 0 {
            let mid = v0.with_state(&((&states[k] + &states[k - 1]) * 0.5));
            let gm = euclidean_gradient(&perturbed_gradient(&mid, system, Some(profile), 0.5 * (svals[k] + svals[k - 1]))?, n);
            let flow = -apply_spectral(&eig, &minv, &gm, |l| 1.0 / (l.abs() + sigma));
            let rate = (&states[k] - &states[k - 1]) / ds;
            equation_residual = equation_residual.max(g_norm2(&(rate - flow)).sqrt());
        }
        records.push(TrajectoryStep {
            s: svals[k],
            action: perturbed_action(&lp, system, profile, svals[k])?,
            grad_norm: grad.norm(n),
            tau: lp.tau,
            step_energy,
        });
        loops.push(lp);
    }
    Ok(FlowLine {
        trajectory: Trajectory { records, loops, converged: true, mode: DescentMode::Preconditioned { shift: sigma } },
        iterations,
        increment,
        equation_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{make_henon_heiles, make_magnetic_torus, make_sphere};
    use crate::orbit::{newton_refine, ShootingConfig};
    use std::f64::consts::PI;

    fn circle(n: usize, tau: f64, stencil: Stencil) -> DiscreteLoop {
        // v(t) = e^{-2 pi i t} on the first complex coordinate
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                vec![t.cos(), 0.0, -t.sin(), 0.0]
            })
            .collect();
        DiscreteLoop::new(&pts, tau, 1, stencil).unwrap()
    }

    fn sphere() -> SymplecticSystem {
        make_sphere(2, 1.0, 2, &[1, 1]).unwrap().system
    }

    #[test]
    fn beta_examples() {
        assert_eq!(cutoff_beta(0.0, 0.3), 0.0);
        assert_eq!(cutoff_beta(2.0, 0.0), 1.0);
        assert_eq!(cutoff_beta(2.0, 1.0), 1.0);
        assert_eq!(cutoff_beta(2.0, 2.0), 0.0);
        assert_eq!(cutoff_beta(2.0, -2.0), 0.0);
        for r in [0.5, 1.0, 2.0, 3.5] {
            for i in -400..=400 {
                let s = i as f64 * 0.01;
                let d = (cutoff_beta(r, s + 1e-6) - cutoff_beta(r, s - 1e-6)) / 2e-6;
                assert!(s * d <= 1e-9, "r={r} s={s} d={d}");
                let b = cutoff_beta(r, s);
                assert!((0.0..=1.0).contains(&b));
            }
        }
    }

    #[test]
    fn time_bump_normalized() {
        let n = 10_000;
        let integral: f64 = (0..n).map(|i| time_bump((i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64;
        assert!((integral - 1.0).abs() < 1e-9);
        assert_eq!(time_bump(0.25), 0.0);
        assert_eq!(time_bump(0.5), 0.0);
    }

    #[test]
    fn action_examples() {
        let sys = sphere();
        let c = DiscreteLoop::new(&vec![vec![1.0, 0.0, 0.0, 0.0]; 16], 3.0, 1, Stencil::Central2).unwrap();
        assert!(rabinowitz_action(&c, &sys).unwrap().abs() < 1e-15);
        // continuous action of the great circle is pi; the stencil sees sin(2 pi/N) N / 2
        for (stencil, tol) in [(Stencil::Central2, 2e-3), (Stencil::Central4, 1e-6)] {
            let a = rabinowitz_action(&circle(256, PI, stencil), &sys).unwrap();
            assert!((a - PI).abs() < tol, "{a}");
        }
    }

    #[test]
    fn magnetic_action_is_k_tau() {
        let b = 1.0;
        let j = DMatrix::from_row_slice(2, 2, &[0.0, -b, b, 0.0]);
        let sys = make_magnetic_torus(j, None).unwrap().system;
        let k = 0.5;
        let orbit = TwistedOrbit {
            system: sys.name.clone(),
            twist: 0,
            order: 1,
            x0: vec![0.1, 0.2, 1.0, 0.0],
            tau: 2.0 * PI,
            energy: k,
            residual: 0.0,
            action: None,
            floquet: None,
            iterations: 0,
            residual_history: vec![],
            kernel_dim: 0,
        };
        let lp = DiscreteLoop::from_orbit(&sys, &orbit, 256, Stencil::Central4).unwrap();
        let a = rabinowitz_action(&lp, &sys).unwrap();
        assert!((a - k * 2.0 * PI).abs() < 1e-6, "{a}");
    }

    #[test]
    fn gradient_examples() {
        let sys = sphere();
        let x = [0.3, 0.1, -0.2, 0.4];
        let c = DiscreteLoop::new(&vec![x.to_vec(); 8], 0.0, 1, Stencil::Central2).unwrap();
        let g = rabinowitz_gradient(&c, &sys).unwrap();
        assert!((g.tau + sys.energy(&x)).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for n in [64, 128, 256, 512] {
            let gn = rabinowitz_gradient(&circle(n, PI, Stencil::Central2), &sys).unwrap().norm(n);
            if n == 256 {
                assert!(gn < 1e-3);
            }
            if prev.is_finite() {
                let ratio = prev / gn;
                assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
            }
            prev = gn;
        }
    }

    fn random_loop(n: usize, seed: u64) -> DiscreteLoop {
        let base = circle(n, PI, Stencil::Central2).perturbed(0.2, seed);
        let mut lp = base;
        lp.tau = 2.5 + 0.05 * seed as f64;
        lp
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (sys, stencil) in [(sphere(), Stencil::Central2), (make_henon_heiles().system, Stencil::Central4)] {
            for seed in 0..10 {
                let mut lp = random_loop(32, seed);
                lp.stencil = stencil;
                if sys.name == "henon-heiles" {
                    for v in &mut lp.data {
                        *v *= 0.3;
                    }
                }
                let g = rabinowitz_gradient(&lp, &sys).unwrap();
                let var = lp.perturbed(1.0, 100 + seed);
                let dv: Vec<f64> = var.data.iter().zip(&lp.data).map(|(a, b)| a - b).collect();
                let dtau = 0.7;
                let h = 1e-6;
                let shifted = |e: f64| {
                    let mut l = lp.clone();
                    for (x, d) in l.data.iter_mut().zip(&dv) {
                        *x += e * d;
                    }
                    l.tau += e * dtau;
                    rabinowitz_action(&l, &sys).unwrap()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let an = g.pair(lp.len(), &dv, dtau);
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let sys = make_henon_heiles().system;
        let mut lp = random_loop(12, 3);
        for v in &mut lp.data {
            *v *= 0.3;
        }
        let hess = discrete_hessian(&lp, &sys).unwrap();
        let n = lp.len();
        let dir = DVector::from_fn(lp.data.len() + 1, |i, _| ((i * 37 % 11) as f64 - 5.0) / 5.0);
        let h = 1e-6;
        let ge = |e: f64| euclidean_gradient(&rabinowitz_gradient(&lp.with_state(&(lp.state() + &dir * e)), &sys).unwrap(), n);
        let fd = (ge(h) - ge(-h)) / (2.0 * h);
        assert!((&hess * &dir - fd).amax() < 1e-7);
        assert!((&hess - hess.transpose()).amax() < 1e-14);
    }

    #[test]
    fn perturbed_action_examples() {
        let sys = sphere();
        let lp = circle(64, PI, Stencil::Central2);
        let shear = ChordShearProfile::new(2, 0.005, 0.02).unwrap();
        let prof = PerturbationProfile::new(0.0, SeparablePerturbation::new(Arc::new(shear.clone()))).unwrap();
        let a = rabinowitz_action(&lp, &sys).unwrap();
        assert_eq!(perturbed_action(&lp, &sys, &prof, 0.0).unwrap(), a);
        let prof2 = PerturbationProfile::new(2.0, SeparablePerturbation::new(Arc::new(shear))).unwrap();
        assert_eq!(perturbed_action(&lp, &sys, &prof2, 2.5).unwrap(), a);
        assert!(perturbed_action(&lp, &sys, &prof2, 0.0).unwrap() < a);
        let far = BumpProfile { center: vec![5.0, 5.0, 0.0, 0.0], width: 0.5, amplitude: 1.0 };
        let prof3 = PerturbationProfile::new(2.0, SeparablePerturbation::new(Arc::new(far))).unwrap();
        assert_eq!(perturbed_action(&lp, &sys, &prof3, 0.0).unwrap(), a);
    }

    #[test]
    fn profiles_gradients_and_support() {
        let sys = sphere();
        let shear = ChordShearProfile::new(2, 0.005, 0.02).unwrap();
        assert!(shear.height() > PI && shear.height() < PI + 0.1, "{}", shear.height());
        for i in 0..=200 {
            let y = -1.0 + i as f64 / 100.0;
            assert!(shear.shear(y) > 2.0 * (1.0 - y * y).max(0.0).sqrt());
        }
        let trans = TranslationProfile::new(&sys, &[2.5, 0.0, 0.0, 0.0], 1.2, 2.0).unwrap();
        let bump = BumpProfile { center: vec![0.5, 0.0, 0.0, 0.2], width: 0.7, amplitude: 0.3 };
        let profiles: Vec<Arc<dyn SpatialProfile>> = vec![Arc::new(shear), Arc::new(trans), Arc::new(bump)];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in profiles {
            let (lo, hi) = p.range();
            let bx = p.support_box();
            for _ in 0..200 {
                let x: Vec<f64> = (0..4)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (3.0 * z).clamp(-3.0, 5.0)
                    })
                    .collect();
                let v = p.value(&x);
                assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                let inside = x.iter().zip(&bx).all(|(c, b)| *c >= b.0 && *c <= b.1);
                if !inside {
                    assert_eq!(v, 0.0);
                }
                let mut g = vec![0.0; 4];
                p.gradient(&x, &mut g);
                for i in 0..4 {
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[i] += 1e-6;
                    b[i] -= 1e-6;
                    let fd = (p.value(&a) - p.value(&b)) / 2e-6;
                    assert!((fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()), "{fd} vs {}", g[i]);
                }
            }
        }
        let f = SeparablePerturbation::new(Arc::new(BumpProfile { center: vec![0.0; 4], width: 1.0, amplitude: 2.0 }));
        assert_eq!(f.value(0.3, &[0.0; 4]), 0.0);
        assert_eq!(f.norm_pieces(), (2.0, 0.0));
    }

    #[test]
    fn descent_from_critical_loop_stops() {
        let sys = sphere();
        let orbit = newton_refine(&sys, &ShootingConfig::new(0.0, 0, (1.0, 4.0)), &[1.0, 0.0, 0.0, 0.0], PI).unwrap();
        let mut lp = DiscreteLoop::from_orbit(&sys, &orbit, 64, Stencil::Central2).unwrap();
        // move tau onto the discrete critical value
        let h = 1.0 / 64.0;
        lp.tau = PI * (2.0 * PI * 2.0 * h).sin() / (2.0 * PI * 2.0 * h);
        let sched = DescentSchedule { grad_tol: 1e-9, ..DescentSchedule::default() };
        let tr = descend(&lp, &sys, None, &sched).unwrap();
        assert!(tr.converged);
        assert_eq!(tr.records.len(), 1);
        assert_eq!(flow_energy(&tr), 0.0);
    }

    #[test]
    fn l2_descent_is_monotone_with_energy_identity() {
        let sys = sphere();
        let lp = circle(32, 2.8, Stencil::Central2).perturbed(0.01, 7);
        let sched = DescentSchedule { s_end: 0.05, max_steps: 2000, ..DescentSchedule::default() };
        let tr = descend(&lp, &sys, None, &sched).unwrap();
        assert!(tr.records.len() > 5);
        for w in tr.records.windows(2) {
            assert!(w[1].action <= w[0].action + 1e-14);
        }
        let drop = tr.records[0].action - tr.records.last().unwrap().action;
        let e = flow_energy(&tr);
        assert!((e - drop).abs() <= 0.05 * drop, "E={e} drop={drop}");
        let mut csv = Vec::new();
        tr.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("step,s,action,grad_norm,tau"));
        assert_eq!(text.lines().count(), tr.records.len() + 1);
    }

    #[test]
    fn saddle_seeking_reconverges_small_loop() {
        let sys = sphere();
        let lp = circle(32, PI, Stencil::Central4).perturbed(1e-2, 1);
        let sched = DescentSchedule {
            mode: DescentMode::SaddleSeeking { trust_radius: 0.5 },
            max_steps: 30,
            grad_tol: 1e-9,
            ..DescentSchedule::default()
        };
        let tr = descend(&lp, &sys, None, &sched).unwrap();
        assert!(tr.converged, "{:?}", tr.records.last());
        let tau_n = PI * {
            let x = 2.0 * PI / 32.0;
            (8.0 * x.sin() - (2.0 * x).sin()) / (6.0 * x)
        };
        assert!((tr.final_loop().tau - tau_n).abs() < 1e-8, "{} vs {tau_n}", tr.final_loop().tau);
    }

    #[test]
    fn torus_winding_is_rejected() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let sys = make_magnetic_torus(j, None).unwrap().system;
        let pts: Vec<Vec<f64>> = (0..16).map(|k| vec![(k as f64 / 16.0).fract(), 0.0, 1.0, 0.0]).collect();
        let lp = DiscreteLoop::new(&pts, 1.0, 1, Stencil::Central2).unwrap();
        assert!(matches!(rabinowitz_action(&lp, &sys), Err(Error::NotContractible { .. })));
    }

    #[test]
    fn bounded_flow_line_respects_energy_and_action_window() {
        let sys = sphere();
        let x = 2.0 * PI / 32.0;
        let lp = circle(32, PI * x.sin() / x, Stencil::Central2);
        let a0 = rabinowitz_action(&lp, &sys).unwrap();
        let bump = BumpProfile { center: vec![1.0, 0.0, 0.0, 0.0], width: 0.8, amplitude: 1.0 };
        let prof = PerturbationProfile::new(2.0, SeparablePerturbation::new(Arc::new(bump))).unwrap();
        let fl = bounded_flow_line(&lp, &sys, &prof, &FlowLineConfig::around(2.0, 1.5)).unwrap();
        let norm = prof.hofer_norm();
        assert!(flow_energy(&fl.trajectory) <= norm);
        assert!(fl.equation_residual < 1e-3, "{}", fl.equation_residual);
        for r in &fl.trajectory.records {
            assert!(r.action >= a0 - norm && r.action <= a0 + norm);
        }
    }

    #[test]
    fn bounded_flow_line_needs_critical_start() {
        let sys = sphere();
        let lp = circle(16, 2.0, Stencil::Central2);
        let prof = PerturbationProfile::new(1.0, SeparablePerturbation::new(Arc::new(ZeroProfile { dim: 4 }))).unwrap();
        assert!(matches!(bounded_flow_line(&lp, &sys, &prof, &FlowLineConfig::around(1.0, 1.0)), Err(Error::Parameter(_))));
    }
}
