//! Time integration of Hamiltonian flows and their linearizations.
//!
//! All integrations use the Dormand–Prince 5(4) embedded pair with
//! first-same-as-last stepping and a standard PI-free step controller.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::geometry::SymplecticSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: Option<f64>,
    pub min_step: f64,
    pub max_steps: usize,
    /// Use a fixed step instead of the adaptive controller.
    pub fixed_step: Option<f64>,
    /// Project every accepted step back onto `H^{-1}(level)`.
    pub project_to_level: Option<f64>,
    /// Keep every accepted step as a sample.
    pub record_samples: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-12,
            initial_step: None,
            min_step: 1e-13,
            max_steps: 2_000_000,
            fixed_step: None,
            project_to_level: None,
            record_samples: true,
        }
    }
}

impl FlowOptions {
    pub fn with_tolerance(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, ..Self::default() }
    }

    pub fn quiet(mut self) -> Self {
        self.record_samples = false;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub final_point: DVector<f64>,
    pub samples: Vec<Sample>,
    /// `max |H(x(t)) - H(x(0))|` over the recorded samples (and the end point).
    pub energy_drift: f64,
    pub stats: StepStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonodromyResult {
    pub final_point: DVector<f64>,
    pub matrix: DMatrix<f64>,
    /// `max |M^T Omega M - Omega|`.
    pub symplecticity_defect: f64,
    pub eigenvalues: Vec<Complex64>,
    pub stats: StepStats,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// `observer` sees every accepted step and may rewrite the state (used for
/// projection); returning `false` stops the integration early.
pub fn dopri5<F, O>(
    mut f: F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    opts: &FlowOptions,
    mut observer: O,
) -> Result<(f64, Vec<f64>, StepStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &mut [f64]) -> bool,
{
    let d = y0.len();
    let mut stats = StepStats::default();
    let mut y = y0.to_vec();
    if t1 == t0 {
        return Ok((t0, y, stats));
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut t = t0;
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut k5 = vec![0.0; d];
    let mut k6 = vec![0.0; d];
    let mut k7 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    let mut ynew = vec![0.0; d];
    f(t, &y, &mut k1);
    stats.evaluations += 1;

    let mut h = match (opts.fixed_step, opts.initial_step) {
        (Some(h), _) => h.abs(),
        (None, Some(h)) => h.abs(),
        (None, None) => {
            let scale: f64 = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-3);
            let slope: f64 = k1.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
            (0.01 * scale / slope * opts.rtol.powf(0.2)).min(span)
        }
    };
    let fixed = opts.fixed_step.is_some();

    while (t1 - t) * dir > 0.0 {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::IntegrationFailure { t, reason: "step budget exhausted".into() });
        }
        let remaining = (t1 - t).abs();
        let last = h >= remaining * (1.0 - 1e-14);
        let hs = if last { remaining } else { h };
        let hd = hs * dir;

        for i in 0..d {
            tmp[i] = y[i] + hd * A21 * k1[i];
        }
        f(t + C2 * hd, &tmp, &mut k2);
        for i in 0..d {
            tmp[i] = y[i] + hd * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * hd, &tmp, &mut k3);
        for i in 0..d {
            tmp[i] = y[i] + hd * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * hd, &tmp, &mut k4);
        for i in 0..d {
            tmp[i] = y[i] + hd * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * hd, &tmp, &mut k5);
        for i in 0..d {
            tmp[i] = y[i] + hd * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + hd, &tmp, &mut k6);
        for i in 0..d {
            ynew[i] = y[i] + hd * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        let t_new = if last { t1 } else { t + hd };
        f(t_new, &ynew, &mut k7);
        stats.evaluations += 6;

        let mut err = 0.0;
        for i in 0..d {
            let e = hd * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err += (e / sc) * (e / sc);
        }
        let err = (err / d as f64).sqrt();

        if fixed || err <= 1.0 {
            stats.accepted += 1;
            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            let keep_going = observer(t, &mut y);
            if opts.project_to_level.is_some() {
                // the observer may have moved the state; refresh the FSAL stage
                f(t, &y, &mut k1);
                stats.evaluations += 1;
            } else {
                std::mem::swap(&mut k1, &mut k7);
            }
            if !keep_going {
                break;
            }
            if !fixed {
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = hs * fac;
            }
        } else {
            stats.rejected += 1;
            h = hs * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            if h < opts.min_step {
                return Err(Error::IntegrationFailure { t, reason: format!("step size underflow ({h:e})") });
            }
        }
    }
    Ok((t, y, stats))
}

fn project(system: &SymplecticSystem, level: f64, x: &mut [f64], grad: &mut [f64]) {
    for _ in 0..2 {
        let r = system.energy(x) - level;
        system.hamiltonian.gradient(x, grad);
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if g2 == 0.0 {
            return;
        }
        for (xi, gi) in x.iter_mut().zip(grad.iter()) {
            *xi -= r * gi / g2;
        }
    }
}

/// Integrates the Hamiltonian flow `Phi_T(x0)`.
pub fn integrate_flow(system: &SymplecticSystem, x0: &[f64], t_end: f64, opts: &FlowOptions) -> Result<FlowResult> {
    check_dim(system.dim(), x0.len())?;
    if !t_end.is_finite() {
        return Err(Error::Parameter("integration time must be finite".into()));
    }
    let d = system.dim();
    let h0 = system.energy(x0);
    let mut samples = vec![Sample { t: 0.0, x: x0.to_vec() }];
    let mut drift: f64 = 0.0;
    let mut grad = vec![0.0; d];
    let mut pgrad = vec![0.0; d];
    let (_, y, stats) = dopri5(
        |_, x, out| system.vector_field_into(x, &mut grad, out),
        x0,
        0.0,
        t_end,
        opts,
        |t, x| {
            if let Some(level) = opts.project_to_level {
                project(system, level, x, &mut pgrad);
            }
            drift = drift.max((system.energy(x) - h0).abs());
            if opts.record_samples {
                samples.push(Sample { t, x: x.to_vec() });
            }
            true
        },
    )?;
    Ok(FlowResult { final_point: DVector::from_vec(y), samples, energy_drift: drift, stats })
}

/// Flow map only.
pub fn flow_map(system: &SymplecticSystem, x0: &[f64], t_end: f64, opts: &FlowOptions) -> Result<DVector<f64>> {
    let quiet = FlowOptions { record_samples: false, ..opts.clone() };
    Ok(integrate_flow(system, x0, t_end, &quiet)?.final_point)
}

/// Samples the orbit at `count + 1` uniformly spaced times in `[0, t_end]`.
pub fn sample_trajectory(
    system: &SymplecticSystem,
    x0: &[f64],
    t_end: f64,
    count: usize,
    opts: &FlowOptions,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(count + 1);
    let mut x = x0.to_vec();
    out.push(Sample { t: 0.0, x: x.clone() });
    let quiet = FlowOptions { record_samples: false, ..opts.clone() };
    for i in 0..count {
        let ta = t_end * i as f64 / count as f64;
        let tb = t_end * (i + 1) as f64 / count as f64;
        x = integrate_flow(system, &x, tb - ta, &quiet)?.final_point.as_slice().to_vec();
        out.push(Sample { t: tb, x: x.clone() });
    }
    Ok(out)
}

/// Integrates the flow together with its linearization `D Phi_T(x0)`.
pub fn integrate_variational(system: &SymplecticSystem, x0: &[f64], t_end: f64, opts: &FlowOptions) -> Result<MonodromyResult> {
    check_dim(system.dim(), x0.len())?;
    let d = system.dim();
    let mut y0 = vec![0.0; d + d * d];
    y0[..d].copy_from_slice(x0);
    for i in 0..d {
        y0[d + i * d + i] = 1.0;
    }
    let omega_inv = system.structure.omega_inverse().clone();
    let mut grad = vec![0.0; d];
    let var_opts = FlowOptions { project_to_level: None, ..opts.clone() };
    let (_, y, stats) = dopri5(
        |_, s, out| {
            let x = &s[..d];
            system.vector_field_into(x, &mut grad, &mut out[..d]);
            let jac = &omega_inv * system.hamiltonian.hessian(x);
            let m = nalgebra::DMatrixView::from_slice(&s[d..], d, d);
            let prod = jac * m;
            out[d..].copy_from_slice(prod.as_slice());
        },
        &y0,
        0.0,
        t_end,
        &var_opts,
        |_, _| true,
    )?;
    let matrix = DMatrix::from_column_slice(d, d, &y[d..]);
    let omega = system.structure.omega_matrix();
    let symplecticity_defect = (matrix.transpose() * omega * &matrix - omega).amax();
    let eigenvalues = matrix.complex_eigenvalues().iter().copied().collect();
    Ok(MonodromyResult {
        final_point: DVector::from_column_slice(&y[..d]),
        matrix,
        symplecticity_defect,
        eigenvalues,
        stats,
    })
}

/// Independent flows over a batch of initial conditions, in input order.
pub fn integrate_batch(
    system: &SymplecticSystem,
    initial: &[Vec<f64>],
    t_end: f64,
    opts: &FlowOptions,
) -> Vec<Result<FlowResult>> {
    initial.par_iter().map(|x0| integrate_flow(system, x0, t_end, opts)).collect()
}

/// Affine section `{ <normal, x> = offset }`.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl Section {
    pub fn coordinate(dim: usize, index: usize, value: f64) -> Self {
        let mut normal = DVector::zeros(dim);
        normal[index] = 1.0;
        Self { normal, offset: value }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingDirection {
    Increasing,
    Decreasing,
    Either,
}

impl CrossingDirection {
    fn admits(self, before: f64, after: f64) -> bool {
        match self {
            Self::Increasing => before < 0.0 && after >= 0.0,
            Self::Decreasing => before > 0.0 && after <= 0.0,
            Self::Either => before * after < 0.0 || (before != 0.0 && after == 0.0),
        }
    }
}

/// First time `t > 0` at which the orbit crosses `section` in `direction`,
/// polished to `1e-12` in time.
pub fn section_crossing(
    system: &SymplecticSystem,
    x0: &[f64],
    section: &Section,
    direction: CrossingDirection,
    horizon: f64,
    opts: &FlowOptions,
) -> Result<(f64, DVector<f64>)> {
    check_dim(system.dim(), x0.len())?;
    let d = system.dim();
    let mut grad = vec![0.0; d];
    let mut prev_t = 0.0;
    let mut prev_x = x0.to_vec();
    let mut prev_g = section.eval(x0);
    let mut bracket: Option<(f64, Vec<f64>, f64)> = None;
    let quiet = FlowOptions { record_samples: false, ..opts.clone() };
    dopri5(
        |_, x, out| system.vector_field_into(x, &mut grad, out),
        x0,
        0.0,
        horizon,
        &quiet,
        |t, x| {
            let g = section.eval(x);
            if direction.admits(prev_g, g) {
                bracket = Some((prev_t, prev_x.clone(), t));
                return false;
            }
            prev_t = t;
            prev_x.copy_from_slice(x);
            prev_g = g;
            true
        },
    )?;
    let (ta, xa, tb) = bracket.ok_or(Error::CrossingNotFound { horizon })?;
    // Illinois regula falsi on s in [0, tb - ta], re-integrating from (ta, xa)
    let eval_at = |s: f64| -> Result<(f64, DVector<f64>)> {
        let x = flow_map(system, &xa, s, &quiet)?;
        Ok((section.eval(x.as_slice()), x))
    };
    let (mut lo, mut hi) = (0.0, tb - ta);
    let mut g_lo = section.eval(&xa);
    let (mut g_hi, mut x_hi) = eval_at(hi)?;
    if g_hi == 0.0 {
        return Ok((tb, x_hi));
    }
    let mut side = 0i32;
    for _ in 0..200 {
        let s = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
        let s = if s.is_finite() && s > lo && s < hi { s } else { 0.5 * (lo + hi) };
        let (g, x) = eval_at(s)?;
        if g == 0.0 {
            return Ok((ta + s, x));
        }
        if (g > 0.0) == (g_hi > 0.0) {
            hi = s;
            g_hi = g;
            x_hi = x;
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        } else {
            lo = s;
            g_lo = g;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        }
        if hi - lo <= 1e-13 {
            break;
        }
    }
    Ok((ta + hi, x_hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{make_henon_heiles, make_magnetic_torus, make_sphere};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn rot(b: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, -b, b, 0.0])
    }

    #[test]
    fn sphere_vector_field_pins_sign() {
        let r = 1.7;
        let sys = make_sphere(2, r, 2, &[1, 1]).unwrap().system;
        // H = |z|^2/r^2 - 1 at z_1 = r: X_H = (0, -2/r) in the (x_1, y_1) plane
        let xh = sys.ham_vector_field(&[r, 0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(xh[2], -2.0 / r, epsilon = 1e-14);
        assert!(xh[0].abs() < 1e-15);
        // i_X omega = -dH
        let x = [0.3, -0.4, 0.5, 0.1];
        let xh = sys.ham_vector_field(&x).unwrap();
        let g = sys.hamiltonian.gradient_vec(&x);
        for v in [[1.0, 0.0, 0.0, 0.0], [0.2, -0.3, 0.7, 1.1]] {
            let lhs = sys.structure.omega_eval(&x, xh.as_slice(), &v).unwrap();
            let rhs = -g.dot(&DVector::from_row_slice(&v));
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
        assert!(g.dot(&xh).abs() < 1e-14);
    }

    #[test]
    fn sphere_flow_is_rotation() {
        let r = 1.3;
        let sys = make_sphere(2, r, 2, &[1, 1]).unwrap().system;
        let z0 = [0.6, 0.2, -0.3, 0.9];
        let t = 0.77;
        let x = flow_map(&sys, &z0, t, &FlowOptions::default()).unwrap();
        let (s, c) = (-2.0 * t / (r * r)).sin_cos();
        for j in 0..2 {
            let (re, im) = (z0[j], z0[2 + j]);
            assert!((x[j] - (c * re - s * im)).abs() < 1e-8);
            assert!((x[2 + j] - (s * re + c * im)).abs() < 1e-8);
        }
        let full = integrate_flow(&sys, &[1.0, 0.0, 0.0, 0.0], PI * r * r, &FlowOptions::default()).unwrap();
        assert!((full.final_point.clone() - DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0])).amax() < 1e-10);
        assert!(full.energy_drift <= 1e-10);
        let recomputed = full
            .samples
            .iter()
            .map(|s| (sys.energy(&s.x) - sys.energy(&[1.0, 0.0, 0.0, 0.0])).abs())
            .fold(0.0, f64::max);
        assert_eq!(recomputed, full.energy_drift);
    }

    #[test]
    fn zero_time_is_exact() {
        let sys = make_henon_heiles().system;
        let x0 = [0.1, 0.2, 0.3, 0.1];
        let r = integrate_flow(&sys, &x0, 0.0, &FlowOptions::default()).unwrap();
        assert_eq!(r.final_point.as_slice(), &x0);
        let m = integrate_variational(&sys, &x0, 0.0, &FlowOptions::default()).unwrap();
        assert_eq!(m.matrix, DMatrix::identity(4, 4));
    }

    #[test]
    fn magnetic_flow_matches_matrix_exponential() {
        let b = 1.3;
        let sys = make_magnetic_torus(rot(b), None).unwrap().system;
        let x0 = [0.2, 0.7, 0.4, -0.9];
        let t = 2.9;
        let x = flow_map(&sys, &x0, t, &FlowOptions::default()).unwrap();
        let p = DVector::from_vec(vec![0.4, -0.9]);
        let pt = (rot(b) * t).exp() * &p;
        assert!((x.rows(2, 2) - &pt).amax() < 1e-10);
        // q(t) = q0 + J^{-1}(e^{tJ} - I) p
        let q = DVector::from_vec(vec![0.2, 0.7]) + rot(b).try_inverse().unwrap() * (&pt - &p);
        assert!((x.rows(0, 2) - q).amax() < 1e-10);

        let m = integrate_variational(&sys, &x0, t, &FlowOptions::default()).unwrap();
        let e = (rot(b) * t).exp();
        let qblock = rot(b).try_inverse().unwrap() * (&e - DMatrix::identity(2, 2));
        assert!((m.matrix.view((2, 2), (2, 2)) - &e).amax() < 1e-10);
        assert!((m.matrix.view((0, 2), (2, 2)) - qblock).amax() < 1e-10);
        assert!((m.matrix.view((0, 0), (2, 2)) - DMatrix::identity(2, 2)).amax() < 1e-10);
        assert!(m.symplecticity_defect < 1e-6);
    }

    #[test]
    fn variational_matches_finite_differences() {
        let sys = make_henon_heiles().system;
        let x0 = [0.1, -0.2, 0.3, 0.25];
        let t = 4.0;
        let m = integrate_variational(&sys, &x0, t, &FlowOptions::default()).unwrap();
        assert!(m.symplecticity_defect < 1e-6);
        let delta = DVector::from_vec(vec![0.3, -0.5, 0.2, 0.7]).normalize();
        let h = 1e-5;
        let plus: Vec<f64> = x0.iter().zip(delta.iter()).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = x0.iter().zip(delta.iter()).map(|(a, b)| a - h * b).collect();
        let fd = (flow_map(&sys, &plus, t, &FlowOptions::default()).unwrap()
            - flow_map(&sys, &minus, t, &FlowOptions::default()).unwrap())
            / (2.0 * h);
        let lin = &m.matrix * &delta;
        assert!((&lin - &fd).norm() <= 1e-5 * lin.norm());
    }

    #[test]
    fn flow_commutes_with_symmetry() {
        let sys = make_henon_heiles().system;
        let x0 = [0.1, -0.2, 0.3, 0.25];
        let a = flow_map(&sys, sys.symmetry.apply(&x0).as_slice(), 3.0, &FlowOptions::default()).unwrap();
        let b = sys.symmetry.apply(flow_map(&sys, &x0, 3.0, &FlowOptions::default()).unwrap().as_slice());
        assert!((a - b).amax() < 1e-8);
    }

    #[test]
    fn fixed_step_order_is_five() {
        let sys = make_sphere(2, 1.0, 2, &[1, 1]).unwrap().system;
        let x0 = [1.0, 0.0, 0.0, 0.0];
        let exact = DVector::from_vec(vec![-1.0, 0.0, 0.0, 0.0]);
        let err = |h: f64| {
            let opts = FlowOptions { fixed_step: Some(h), ..FlowOptions::default() };
            (flow_map(&sys, &x0, PI / 2.0, &opts).unwrap() - &exact).norm()
        };
        let (e1, e2) = (err(PI / 40.0), err(PI / 80.0));
        let order = (e1 / e2).log2();
        assert!(order >= 4.8, "measured order {order}");
    }

    #[test]
    fn tolerance_refinement_reduces_error() {
        let sys = make_sphere(2, 1.0, 2, &[1, 1]).unwrap().system;
        let x0 = [1.0, 0.0, 0.0, 0.0];
        let mut last = f64::INFINITY;
        for tol in [1e-6, 1e-8, 1e-10] {
            let x = flow_map(&sys, &x0, PI, &FlowOptions::with_tolerance(tol)).unwrap();
            let e = (x - DVector::from_row_slice(&x0)).norm();
            assert!(e < last);
            last = e;
        }
    }

    #[test]
    fn sphere_half_period_crossing() {
        let sys = make_sphere(2, 1.0, 2, &[1, 1]).unwrap().system;
        // y_1 is index 2; starting at (1,0) the flow e^{-2it} first returns to
        // y_1 = 0 with y_1 increasing at the antipode
        let sec = Section::coordinate(4, 2, 0.0);
        let (t, x) = section_crossing(&sys, &[1.0, 0.0, 0.0, 0.0], &sec, CrossingDirection::Increasing, 10.0, &FlowOptions::default()).unwrap();
        assert!((t - PI / 2.0).abs() < 1e-11, "{t}");
        assert!((x[0] + 1.0).abs() < 1e-10);
        let (t2, _) = section_crossing(&sys, &[1.0, 0.0, 0.0, 0.0], &sec, CrossingDirection::Either, 10.0, &FlowOptions::default()).unwrap();
        assert!(t2 > 0.0);
        assert!(matches!(
            section_crossing(&sys, &[1.0, 0.0, 0.0, 0.0], &sec, CrossingDirection::Increasing, 1.0, &FlowOptions::default()),
            Err(Error::CrossingNotFound { .. })
        ));
    }

    #[test]
    fn henon_heiles_section_crossing_self_consistent() {
        let sys = make_henon_heiles().system;
        let k: f64 = 0.125;
        // start on q_2 = 0 with p chosen on the level
        let (q1, p1): (f64, f64) = (0.1, 0.2);
        let p2 = (2.0 * k - q1 * q1 - p1 * p1).sqrt();
        let x0 = [q1, 0.0, p1, p2];
        let sec = Section::coordinate(4, 1, 0.0);
        let (t, x) = section_crossing(&sys, &x0, &sec, CrossingDirection::Increasing, 50.0, &FlowOptions::default()).unwrap();
        assert!(t > 0.0);
        assert!((sys.energy(x.as_slice()) - k).abs() < 1e-10);
        let (t_tight, _) = section_crossing(&sys, &x0, &sec, CrossingDirection::Increasing, 50.0, &FlowOptions::with_tolerance(1e-13)).unwrap();
        assert!((t - t_tight).abs() < 1e-9);
    }

    #[test]
    fn batch_preserves_order() {
        let sys = make_sphere(2, 1.0, 2, &[1, 1]).unwrap().system;
        let inits: Vec<Vec<f64>> = (0..8).map(|i| vec![0.1 * i as f64, 0.0, 0.0, 0.5]).collect();
        let out = integrate_batch(&sys, &inits, 1.0, &FlowOptions::default().quiet());
        for (x0, r) in inits.iter().zip(out) {
            let single = flow_map(&sys, x0, 1.0, &FlowOptions::default()).unwrap();
            assert_eq!(r.unwrap().final_point, single);
        }
    }

    #[test]
    fn projection_keeps_level() {
        let sys = make_henon_heiles().system;
        let x0 = [0.1, 0.05, 0.3, 0.35];
        let k = sys.energy(&x0);
        let opts = FlowOptions { project_to_level: Some(k), ..FlowOptions::with_tolerance(1e-8) };
        let r = integrate_flow(&sys, &x0, 200.0, &opts).unwrap();
        assert!(r.energy_drift < 1e-13);
    }
}
