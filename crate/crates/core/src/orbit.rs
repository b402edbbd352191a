//! Twisted periodic orbits `Phi_tau(x) = phi^j(x)` on a fixed energy level.
//!
//! Orbits are parametrized in `X_H`-time. Newton shooting works on the
//! unknowns `(x, tau)` with one energy row and one phase row; the linear
//! systems are solved in the minimum-norm least-squares sense so that
//! Morse–Bott families (round spheres, flat tori) do not stall the solver.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flow::{flow_map, integrate_variational, sample_trajectory, FlowOptions, Sample};
use crate::geometry::{gcd_usize, SymmetryAction, SymplecticSystem};

/// Linearized return data attached by the invariants module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloquetData {
    /// Eigenvalues of the reduced twisted return map as `[re, im]`.
    pub multipliers: Vec<[f64; 2]>,
    pub kernel_dim: usize,
    pub nondegenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwistedOrbit {
    pub system: String,
    /// Twist exponent `j` in `0..order`.
    pub twist: usize,
    /// Order `m` of the symmetry.
    pub order: usize,
    pub x0: Vec<f64>,
    /// Period in `X_H`-time.
    pub tau: f64,
    pub energy: f64,
    pub residual: f64,
    pub action: Option<f64>,
    pub floquet: Option<FloquetData>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Kernel dimension of the last Newton system.
    pub kernel_dim: usize,
}

impl TwistedOrbit {
    /// Number of `tau`-segments after which the orbit closes, `m / gcd(j, m)`.
    pub fn closing_factor(&self) -> usize {
        let m = self.order.max(1);
        m / gcd_usize(self.twist % m, m)
    }

    /// `X_H`-time after which the underlying loop closes.
    pub fn closed_period(&self) -> f64 {
        self.tau * self.closing_factor() as f64
    }

    /// Re-checks energy, twisted closure and closure of the full loop.
    pub fn verify(&self, system: &SymplecticSystem, tol: f64, opts: &FlowOptions) -> Result<f64> {
        let r = twisted_residual(system, self.twist, &self.x0, self.tau, self.energy, opts)?;
        let d = system.dim();
        let closure = r.rows(0, d).norm();
        let energy = r[d].abs();
        let end = flow_map(system, &self.x0, self.closed_period(), opts)?;
        let full = system.structure.difference(end.as_slice(), &self.x0).norm();
        if closure > tol || energy > 1e-10 || full > self.order.max(1) as f64 * tol {
            return Err(Error::NonConvergence { iterations: self.iterations, residual: closure.max(full) });
        }
        Ok(closure)
    }
}

/// `(Phi_tau(x) - phi^j(x), H(x) - k)`, with torus positions compared modulo `Z^n`.
pub fn twisted_residual(
    system: &SymplecticSystem,
    twist: usize,
    x: &[f64],
    tau: f64,
    energy: f64,
    opts: &FlowOptions,
) -> Result<DVector<f64>> {
    check_dim(system.dim(), x.len())?;
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("period must be positive, got {tau}")));
    }
    let d = system.dim();
    let end = flow_map(system, x, tau, opts)?;
    let target = system.symmetry.apply_power(twist as i64, x);
    let diff = system.structure.difference(end.as_slice(), target.as_slice());
    let mut r = DVector::zeros(d + 1);
    r.rows_mut(0, d).copy_from(&diff);
    r[d] = system.energy(x) - energy;
    Ok(r)
}

/// Residual and its Jacobian with respect to `(x, tau, k)`.
fn shooting_jacobian(
    system: &SymplecticSystem,
    twist: usize,
    x: &[f64],
    tau: f64,
    energy: f64,
    opts: &FlowOptions,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = system.dim();
    let mono = integrate_variational(system, x, tau, opts)?;
    let (l, _) = system.symmetry.power(twist as i64);
    let target = system.symmetry.apply_power(twist as i64, x);
    let diff = system.structure.difference(mono.final_point.as_slice(), target.as_slice());
    let mut r = DVector::zeros(d + 1);
    r.rows_mut(0, d).copy_from(&diff);
    r[d] = system.energy(x) - energy;

    let mut jac = DMatrix::zeros(d + 1, d + 2);
    jac.view_mut((0, 0), (d, d)).copy_from(&(&mono.matrix - l));
    let xe = system.ham_vector_field(mono.final_point.as_slice())?;
    jac.view_mut((0, d), (d, 1)).copy_from(&xe);
    let g = system.hamiltonian.gradient_vec(x);
    for i in 0..d {
        jac[(d, i)] = g[i];
    }
    jac[(d, d + 1)] = -1.0;
    Ok((r, jac))
}

const SVD_REL_TOL: f64 = 1e-9;

/// Minimum-norm least-squares solution of `a x = b` and the numerical
/// kernel dimension of `a`.
pub(crate) fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    let mut x = DVector::zeros(a.ncols());
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && s > rel_tol * smax {
            rank += 1;
            let coef = u.column(i).dot(b) / s;
            x += vt.row(i).transpose() * coef;
        }
    }
    (x, a.ncols() - rank)
}

/// Orthonormal basis of the numerical kernel of a square or wide matrix
/// (singular values below `rel_tol * max(sigma_max, 1)`).
pub(crate) fn kernel_basis(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = a.shape();
    let square = if r < c {
        let mut m = DMatrix::zeros(c, c);
        m.view_mut((0, 0), (r, c)).copy_from(a);
        m
    } else {
        a.clone()
    };
    let svd = square.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= rel_tol * smax.max(1.0))
        .map(|(i, _)| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(c, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SeedStrategy {
    /// Regular grid with `per_axis` points per coordinate of the sample box.
    Grid { per_axis: usize },
    /// Randomly shifted Halton points.
    QuasiRandom { count: usize, seed: u64 },
    /// Explicit ambient points (projected onto the level).
    UserList { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingConfig {
    pub energy: f64,
    pub twist: usize,
    pub seeds: SeedStrategy,
    /// Newton stops once the residual norm drops below this.
    pub newton_tol: f64,
    pub max_iterations: usize,
    pub period_bracket: (f64, f64),
    /// Per-coordinate sampling bounds; empty means `[-1.5, 1.5]` everywhere
    /// (`[0, 1]` for torus positions).
    pub sample_box: Vec<(f64, f64)>,
    /// Seeds with `|grad H|` below this are discarded.
    pub grad_floor: f64,
    pub guesses_per_seed: usize,
    /// Only near-returns closer than this are handed to Newton.
    pub return_threshold: f64,
    /// Tolerance every returned orbit must re-verify at.
    pub acceptance_tol: f64,
    pub flow: FlowOptions,
}

impl ShootingConfig {
    pub fn new(energy: f64, twist: usize, period_bracket: (f64, f64)) -> Self {
        Self {
            energy,
            twist,
            seeds: SeedStrategy::QuasiRandom { count: 32, seed: 0 },
            newton_tol: 1e-10,
            max_iterations: 25,
            period_bracket,
            sample_box: Vec::new(),
            grad_floor: 1e-6,
            guesses_per_seed: 3,
            return_threshold: 0.5,
            acceptance_tol: 1e-8,
            flow: FlowOptions::default().quiet(),
        }
    }

    pub fn validate(&self, system: &SymplecticSystem) -> Result<()> {
        let (lo, hi) = self.period_bracket;
        if !(lo > 0.0) || !(hi > lo) {
            return Err(Error::Parameter(format!("invalid period bracket [{lo}, {hi}]")));
        }
        if self.twist >= system.symmetry.order().max(1) {
            return Err(Error::Parameter(format!(
                "twist exponent {} out of range for order {}",
                self.twist,
                system.symmetry.order()
            )));
        }
        if !self.sample_box.is_empty() {
            check_dim(system.dim(), self.sample_box.len())?;
        }
        if !(self.newton_tol > 0.0) || self.max_iterations == 0 {
            return Err(Error::Parameter("Newton tolerance and iteration budget must be positive".into()));
        }
        Ok(())
    }

    fn bounds(&self, system: &SymplecticSystem) -> Vec<(f64, f64)> {
        if !self.sample_box.is_empty() {
            return self.sample_box.clone();
        }
        let n = system.structure.n();
        (0..system.dim())
            .map(|i| if system.structure.is_torus() && i < n { (0.0, 1.0) } else { (-1.5, 1.5) })
            .collect()
    }
}

/// Damped Newton refinement of a twisted orbit guess.
pub fn newton_refine(system: &SymplecticSystem, config: &ShootingConfig, x_guess: &[f64], tau_guess: f64) -> Result<TwistedOrbit> {
    check_dim(system.dim(), x_guess.len())?;
    let d = system.dim();
    let k = config.energy;
    let j = config.twist;
    let opts = &config.flow;
    let mut x = DVector::from_column_slice(x_guess);
    let mut tau = tau_guess;
    let mut history = Vec::new();
    let mut kernel_dim = 0;

    for it in 0..=config.max_iterations {
        let (r, jac) = shooting_jacobian(system, j, x.as_slice(), tau, k, opts)?;
        let res = r.norm();
        if !res.is_finite() {
            return Err(Error::NonConvergence { iterations: it, residual: res });
        }
        history.push(res);
        if res <= config.newton_tol {
            let orbit = TwistedOrbit {
                system: system.name.clone(),
                twist: j,
                order: system.symmetry.order(),
                x0: x.as_slice().to_vec(),
                tau,
                energy: k,
                residual: r.rows(0, d).norm(),
                action: None,
                floquet: None,
                iterations: it,
                residual_history: history,
                kernel_dim,
            };
            orbit.verify(system, config.acceptance_tol, opts)?;
            return Ok(orbit);
        }
        if it == config.max_iterations {
            break;
        }
        let mut a = DMatrix::zeros(d + 2, d + 1);
        a.view_mut((0, 0), (d + 1, d + 1)).copy_from(&jac.view((0, 0), (d + 1, d + 1)));
        let xh = system.ham_vector_field(x.as_slice())?;
        let xn = xh.norm();
        if xn > 0.0 {
            for i in 0..d {
                a[(d + 1, i)] = xh[i] / xn;
            }
        }
        let mut b = DVector::zeros(d + 2);
        b.rows_mut(0, d + 1).copy_from(&(-&r));
        let (step, kd) = min_norm_solve(&a, &b, SVD_REL_TOL);
        kernel_dim = kd;

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let xt = &x + step.rows(0, d) * alpha;
            let tt = tau + alpha * step[d];
            if tt > 0.0 {
                if let Ok(rt) = twisted_residual(system, j, xt.as_slice(), tt, k, opts) {
                    let rn = rt.norm();
                    if rn < (1.0 - 1e-4 * alpha) * res || rn <= config.newton_tol {
                        x = xt;
                        tau = tt;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let residual = history.last().copied().unwrap_or(f64::INFINITY);
    if kernel_dim > 0 {
        Err(Error::RankDeficient { kernel_dim })
    } else {
        Err(Error::NonConvergence { iterations: history.len().saturating_sub(1), residual })
    }
}

pub(crate) fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

pub(crate) const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Moves `x` onto `H^{-1}(k)` along `grad H` (at most 20 Newton steps).
pub fn project_to_level(system: &SymplecticSystem, x: &mut [f64], energy: f64, grad_floor: f64) -> bool {
    let mut g = vec![0.0; x.len()];
    for _ in 0..20 {
        let r = system.energy(x) - energy;
        system.hamiltonian.gradient(x, &mut g);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2.sqrt() < grad_floor || !r.is_finite() {
            return false;
        }
        if r.abs() <= 1e-13 * (1.0 + energy.abs()) {
            return true;
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= r * gi / g2;
        }
    }
    (system.energy(x) - energy).abs() <= 1e-12
}

/// Seeds on the level set; also returns how many ambient points failed to project.
pub fn level_set_seeds(system: &SymplecticSystem, config: &ShootingConfig) -> Result<(Vec<Vec<f64>>, usize)> {
    config.validate(system)?;
    let d = system.dim();
    let bounds = config.bounds(system);
    let ambient: Vec<Vec<f64>> = match &config.seeds {
        SeedStrategy::UserList { points } => {
            for p in points {
                check_dim(d, p.len())?;
            }
            points.clone()
        }
        SeedStrategy::QuasiRandom { count, seed } => {
            if d > PRIMES.len() {
                return Err(Error::Parameter("quasi-random seeding supports at most 12 coordinates".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let shift: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            (1..=*count as u64)
                .map(|i| {
                    (0..d)
                        .map(|c| {
                            let u = (radical_inverse(i, PRIMES[c]) + shift[c]).fract();
                            bounds[c].0 + u * (bounds[c].1 - bounds[c].0)
                        })
                        .collect()
                })
                .collect()
        }
        SeedStrategy::Grid { per_axis } => {
            let per = (*per_axis).max(1);
            let total = per.checked_pow(d as u32).ok_or_else(|| Error::Parameter("grid too large".into()))?;
            (0..total)
                .map(|mut idx| {
                    (0..d)
                        .map(|c| {
                            let i = idx % per;
                            idx /= per;
                            let u = (i as f64 + 0.5) / per as f64;
                            bounds[c].0 + u * (bounds[c].1 - bounds[c].0)
                        })
                        .collect()
                })
                .collect()
        }
    };
    let mut seeds = Vec::new();
    let mut discarded = 0;
    for mut p in ambient {
        if project_to_level(system, &mut p, config.energy, config.grad_floor) {
            seeds.push(p);
        } else {
            discarded += 1;
        }
    }
    Ok((seeds, discarded))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// Converged orbits sorted by `(twist, tau, x0)`.
    pub orbits: Vec<TwistedOrbit>,
    pub seeds_used: usize,
    pub seeds_discarded: usize,
    pub newton_failures: usize,
}

fn near_returns(system: &SymplecticSystem, config: &ShootingConfig, x0: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = config.period_bracket;
    let count = 400;
    let coarse = FlowOptions { record_samples: false, ..FlowOptions::with_tolerance(1e-9) };
    let traj = sample_trajectory(system, x0, hi, count, &coarse)?;
    let target = system.symmetry.apply_power(config.twist as i64, x0);
    let dist: Vec<f64> = traj
        .iter()
        .map(|s| system.structure.difference(&s.x, target.as_slice()).norm())
        .collect();
    let dt = hi / count as f64;
    let mut minima: Vec<(f64, f64)> = (1..=count)
        .filter(|&i| dist[i] <= dist[i - 1] && (i == count || dist[i] <= dist[i + 1]))
        .filter(|&i| traj[i].t >= lo - dt && dist[i] < config.return_threshold)
        .map(|i| (dist[i], traj[i].t))
        .collect();
    minima.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    Ok(minima.into_iter().take(config.guesses_per_seed).map(|(_, t)| t.max(lo)).collect())
}

fn orbit_order(a: &TwistedOrbit, b: &TwistedOrbit) -> Ordering {
    a.twist
        .cmp(&b.twist)
        .then(a.tau.partial_cmp(&b.tau).unwrap_or(Ordering::Equal))
        .then_with(|| {
            a.x0.iter()
                .zip(&b.x0)
                .map(|(p, q)| p.partial_cmp(q).unwrap_or(Ordering::Equal))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
}

/// Seeds the level set, looks for near-returns and refines each with Newton.
pub fn seed_sweep(system: &SymplecticSystem, config: &ShootingConfig) -> Result<SweepReport> {
    let (seeds, discarded) = level_set_seeds(system, config)?;
    let (lo, hi) = config.period_bracket;
    let per_seed: Vec<(Vec<TwistedOrbit>, usize)> = seeds
        .par_iter()
        .map(|x0| {
            let mut found = Vec::new();
            let mut failed = 0;
            let guesses = match near_returns(system, config, x0) {
                Ok(g) => g,
                Err(_) => return (found, 1),
            };
            for t in guesses {
                match newton_refine(system, config, x0, t) {
                    Ok(o) if o.tau >= lo - config.acceptance_tol && o.tau <= hi + config.acceptance_tol => found.push(o),
                    Ok(_) => {}
                    Err(_) => failed += 1,
                }
            }
            (found, failed)
        })
        .collect();
    let mut orbits = Vec::new();
    let mut newton_failures = 0;
    for (o, f) in per_seed {
        orbits.extend(o);
        newton_failures += f;
    }
    orbits.sort_by(orbit_order);
    Ok(SweepReport { orbits, seeds_used: seeds.len(), seeds_discarded: discarded, newton_failures })
}

/// Samples the closed loop traced by `orbit` (over its closed period).
pub fn orbit_trace(system: &SymplecticSystem, orbit: &TwistedOrbit, samples: usize, opts: &FlowOptions) -> Result<Vec<Sample>> {
    sample_trajectory(system, &orbit.x0, orbit.closed_period(), samples.max(1), opts)
}

/// One geometric orbit together with the members merged into it.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitClass {
    pub representative: TwistedOrbit,
    pub members: usize,
    /// Cover multiplicities (relative to the representative) seen among members.
    pub multiplicities: Vec<usize>,
}

const TRACE_SAMPLES: usize = 256;

/// Distance from `y` to the trace given by `samples` of the orbit through `x0`.
pub(crate) fn distance_to_trace(system: &SymplecticSystem, trace: &[Sample], y: &[f64], opts: &FlowOptions) -> Result<f64> {
    let (mut best, mut idx) = (f64::INFINITY, 0);
    for (i, s) in trace.iter().enumerate() {
        let dist = system.structure.difference(&s.x, y).norm();
        if dist < best {
            best = dist;
            idx = i;
        }
    }
    // polish the foot point: stationarity of |x(t) - y|^2 in t
    let base = &trace[idx];
    let dt = if trace.len() > 1 { (trace[1].t - trace[0].t).abs() } else { 0.0 };
    let mut s = 0.0;
    let mut x = DVector::from_column_slice(&base.x);
    for _ in 0..10 {
        let diff = system.structure.difference(x.as_slice(), y);
        let v = system.ham_vector_field(x.as_slice())?;
        let v2 = v.norm_squared();
        if v2 == 0.0 {
            break;
        }
        let next = (s - diff.dot(&v) / v2).clamp(-dt, dt);
        if (next - s).abs() < 1e-15 {
            break;
        }
        s = next;
        x = if s == 0.0 { DVector::from_column_slice(&base.x) } else { flow_map(system, &base.x, s, opts)? };
        best = best.min(system.structure.difference(x.as_slice(), y).norm());
    }
    Ok(best)
}

/// Merges orbits that agree up to time shift, symmetry and iteration.
///
/// Two orbits are identified when some `phi^i` image of one base point lies
/// within `threshold` of the other's trace and their closed periods are
/// integer multiples of each other; representatives keep the smallest period.
pub fn deduplicate_orbits(system: &SymplecticSystem, orbits: &[TwistedOrbit], threshold: f64) -> Result<Vec<OrbitClass>> {
    let opts = FlowOptions::default().quiet();
    let mut sorted: Vec<&TwistedOrbit> = orbits.iter().collect();
    sorted.sort_by(|a, b| a.closed_period().partial_cmp(&b.closed_period()).unwrap_or(Ordering::Equal).then(orbit_order(a, b)));
    let m = system.symmetry.order().max(1);
    let mut classes: Vec<OrbitClass> = Vec::new();
    let mut traces: Vec<Vec<Sample>> = Vec::new();
    'outer: for orbit in sorted {
        for (class, trace) in classes.iter_mut().zip(&traces) {
            let ratio = orbit.closed_period() / class.representative.closed_period();
            let p = ratio.round();
            if p < 1.0 || (ratio - p).abs() > 1e-6 * ratio {
                continue;
            }
            for i in 0..m {
                let y = system.symmetry.apply_power(i as i64, &orbit.x0);
                if distance_to_trace(system, trace, y.as_slice(), &opts)? <= threshold {
                    class.members += 1;
                    let p = p as usize;
                    if !class.multiplicities.contains(&p) {
                        class.multiplicities.push(p);
                        class.multiplicities.sort_unstable();
                    }
                    continue 'outer;
                }
            }
        }
        traces.push(orbit_trace(system, orbit, TRACE_SAMPLES, &opts)?);
        classes.push(OrbitClass { representative: orbit.clone(), members: 1, multiplicities: vec![1] });
    }
    Ok(classes)
}

/// `Some(p)` when `candidate` retraces `base` `p` times (as twisted loops,
/// `tau = p tau_0`), up to time shift and symmetry.
pub fn iterate_factor(
    system: &SymplecticSystem,
    base: &TwistedOrbit,
    candidate: &TwistedOrbit,
    threshold: f64,
) -> Result<Option<usize>> {
    let ratio = candidate.tau / base.tau;
    let p = ratio.round();
    if p < 1.0 || (ratio - p).abs() > 1e-6 * ratio {
        return Ok(None);
    }
    let m = system.symmetry.order().max(1);
    if (base.twist * p as usize) % m != candidate.twist % m {
        return Ok(None);
    }
    let opts = FlowOptions::default().quiet();
    let trace = orbit_trace(system, base, TRACE_SAMPLES, &opts)?;
    for i in 0..m {
        let y = system.symmetry.apply_power(i as i64, &candidate.x0);
        if distance_to_trace(system, &trace, y.as_slice(), &opts)? <= threshold {
            return Ok(Some(p as usize));
        }
    }
    Ok(None)
}

/// Search region for [`torus_closed_form`].
#[derive(Debug, Clone, PartialEq)]
pub struct TorusSearch {
    pub tau_range: (f64, f64),
    /// Integer winding vectors are enumerated in `[-winding_box, winding_box]^n`.
    pub winding_box: i64,
    pub scan_points: usize,
    /// Position used when the position condition leaves `q` free.
    pub q_base: Vec<f64>,
}

impl TorusSearch {
    pub fn new(n: usize, tau_range: (f64, f64)) -> Self {
        Self { tau_range, winding_box: 2, scan_points: 4000, q_base: vec![0.0; n] }
    }
}

fn windings(n: usize, radius: i64) -> Vec<DVector<f64>> {
    let side = (2 * radius + 1) as usize;
    (0..side.pow(n as u32))
        .map(|mut idx| {
            DVector::from_iterator(
                n,
                (0..n).map(|_| {
                    let v = (idx % side) as i64 - radius;
                    idx /= side;
                    v as f64
                }),
            )
        })
        .collect()
}

/// `(e^{tau J}, int_0^tau e^{sJ} ds)` via one augmented exponential.
fn exp_and_integral(j_mag: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = j_mag.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(j_mag * tau));
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    aug.view_mut((0, n), (n, n)).scale_mut(tau);
    let e = aug.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, n)).into_owned())
}

fn sigma_min(m: &DMatrix<f64>) -> f64 {
    m.singular_values().min()
}

/// Solves the magnetic-torus twisted orbit conditions directly:
/// `e^{tau J} p = A_j p`, `|p|^2 = 2k` and `q + int_0^tau e^{sJ} p ds = A_j q + s_j` modulo `Z^n`.
///
/// Two branches are covered: momenta in the range of `J` (found by scanning
/// `tau` for singular `e^{tau J} - A_j` there) and, when `A_j = I`, momenta in
/// `ker J`, where the position condition forces `tau p = s_j + w`.
pub fn torus_closed_form(
    j_mag: &DMatrix<f64>,
    symmetry: &SymmetryAction,
    energy: f64,
    twist: usize,
    search: &TorusSearch,
) -> Result<Vec<TwistedOrbit>> {
    let n = j_mag.nrows();
    check_dim(2 * n, symmetry.dim())?;
    check_dim(n, search.q_base.len())?;
    if !(energy > 0.0) {
        return Err(Error::Parameter("energy must be positive".into()));
    }
    let (lo, hi) = search.tau_range;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Parameter(format!("invalid period range [{lo}, {hi}]")));
    }
    let (l, c) = symmetry.power(twist as i64);
    let a = l.view((0, 0), (n, n)).into_owned();
    let s = c.rows(0, n).into_owned();
    let eye = DMatrix::<f64>::identity(n, n);
    let speed = (2.0 * energy).sqrt();

    let jsvd = j_mag.clone().svd(true, false);
    let jmax = jsvd.singular_values.max();
    let ju = jsvd.u.expect("u requested");
    let (range_cols, ker_cols): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| jsvd.singular_values[i] > 1e-12 * jmax.max(1.0));
    let range = DMatrix::from_columns(&range_cols.iter().map(|&i| ju.column(i).into_owned()).collect::<Vec<_>>());
    let kernel = if ker_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&ker_cols.iter().map(|&i| ju.column(i).into_owned()).collect::<Vec<_>>())
    };

    let mut found: Vec<(f64, DVector<f64>, DVector<f64>)> = Vec::new();
    let mut push = |tau: f64, q: DVector<f64>, p: DVector<f64>| {
        let q = q.map(|v| v.rem_euclid(1.0));
        let dup = found.iter().any(|(t, q2, p2)| {
            (t - tau).abs() < 1e-9 && (p2 - &p).amax() < 1e-9 && (q2 - &q).map(|v| v - v.round()).amax() < 1e-9
        });
        if !dup {
            found.push((tau, q, p));
        }
    };

    let solve_q = |sj: &DMatrix<f64>, p: &DVector<f64>, w: &DVector<f64>| -> Option<DVector<f64>> {
        // (I - A) q = s + w - S p
        let rhs = &s + w - sj * p;
        let lhs = &eye - &a;
        let (q0, _) = min_norm_solve(&lhs, &(&rhs - &lhs * DVector::from_column_slice(&search.q_base)), 1e-10);
        let q = q0 + DVector::from_column_slice(&search.q_base);
        ((&lhs * &q - &rhs).amax() < 1e-10).then_some(q)
    };

    // rotation branch, restricted to range(J)
    if !range_cols.is_empty() {
        let restricted = |tau: f64| {
            let (e, _) = exp_and_integral(j_mag, tau);
            range.transpose() * (e - &a) * &range
        };
        let npts = search.scan_points.max(16);
        let grid: Vec<f64> = (0..=npts).map(|i| lo + (hi - lo) * i as f64 / npts as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&t| sigma_min(&restricted(t))).collect();
        for i in 0..=npts {
            let left = if i > 0 { vals[i - 1] } else { f64::INFINITY };
            let right = if i < npts { vals[i + 1] } else { f64::INFINITY };
            if !(vals[i] <= left && vals[i] <= right && vals[i] < 1e-2) {
                continue;
            }
            // golden-section refinement of the minimum
            let h = (hi - lo) / npts as f64;
            let (mut x0, mut x1) = ((grid[i] - h).max(lo), (grid[i] + h).min(hi));
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..100 {
                let (c1, c2) = (x1 - g * (x1 - x0), x0 + g * (x1 - x0));
                if sigma_min(&restricted(c1)) < sigma_min(&restricted(c2)) {
                    x1 = c2;
                } else {
                    x0 = c1;
                }
            }
            let tau = 0.5 * (x0 + x1);
            let m = restricted(tau);
            if sigma_min(&m) > 1e-9 {
                continue;
            }
            let (_, sj) = exp_and_integral(j_mag, tau);
            let kb = kernel_basis(&m, 1e-7);
            for col in 0..kb.ncols() {
                let dir = &range * kb.column(col);
                let dir = dir.normalize();
                for sign in [1.0, -1.0] {
                    let p = &dir * (sign * speed);
                    for w in windings(n, search.winding_box) {
                        if let Some(q) = solve_q(&sj, &p, &w) {
                            push(tau, q, p.clone());
                        }
                    }
                }
            }
        }
    }

    // lattice branch: p in ker J and A_j = I
    if kernel.ncols() > 0 && (&a - &eye).amax() < 1e-12 {
        for w in windings(n, search.winding_box) {
            let v = &s + &w;
            let vn = v.norm();
            if vn == 0.0 || (j_mag * &v).amax() > 1e-12 {
                continue;
            }
            let tau = vn / speed;
            if tau < lo || tau > hi {
                continue;
            }
            let p = &v / tau;
            push(tau, DVector::from_column_slice(&search.q_base), p);
        }
    }

    let mut orbits: Vec<TwistedOrbit> = found
        .into_iter()
        .map(|(tau, q, p)| {
            let mut x0 = q.as_slice().to_vec();
            x0.extend_from_slice(p.as_slice());
            TwistedOrbit {
                system: "magnetic-torus".into(),
                twist,
                order: symmetry.order(),
                x0,
                tau,
                energy,
                residual: 0.0,
                action: None,
                floquet: None,
                iterations: 0,
                residual_history: Vec::new(),
                kernel_dim: 0,
            }
        })
        .collect();
    orbits.sort_by(orbit_order);
    Ok(orbits)
}

/// Closed-form position and momentum along a magnetic-torus orbit.
pub fn torus_closed_form_point(j_mag: &DMatrix<f64>, x0: &[f64], t: f64) -> DVector<f64> {
    let n = j_mag.nrows();
    let (e, s) = exp_and_integral(j_mag, t);
    let q = DVector::from_column_slice(&x0[..n]);
    let p = DVector::from_column_slice(&x0[n..]);
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&(q + &s * &p));
    out.rows_mut(n, n).copy_from(&(e * p));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPoint {
    pub energy: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationResult {
    pub family: Vec<TwistedOrbit>,
    pub fold: Option<FoldPoint>,
    /// Energy at which the corrector failed, with the reason.
    pub failure: Option<(f64, Error)>,
}

impl ContinuationResult {
    pub fn completed(&self) -> bool {
        self.fold.is_none() && self.failure.is_none()
    }
}

/// Follows an orbit family in energy towards `k_target` in `steps` equal steps.
///
/// Each step predicts along the family tangent (the kernel direction of the
/// bordered shooting Jacobian with the largest energy component) and corrects
/// with [`newton_refine`] at the predicted energy. A sign change of the
/// tangent's energy component is reported as a fold and halts the run.
pub fn continuation_in_energy(
    system: &SymplecticSystem,
    orbit: &TwistedOrbit,
    k_target: f64,
    steps: usize,
    config: &ShootingConfig,
) -> Result<ContinuationResult> {
    let mut family = vec![orbit.clone()];
    if steps == 0 {
        return Ok(ContinuationResult { family, fold: None, failure: None });
    }
    let (wlo, whi) = system.energy_window;
    for k in [orbit.energy, k_target] {
        if k < wlo || k > whi {
            return Err(Error::Parameter(format!("energy {k} outside the window [{wlo}, {whi}]")));
        }
    }
    let d = system.dim();
    let dk = (k_target - orbit.energy) / steps as f64;
    let mut prev_tangent: Option<DVector<f64>> = None;
    let mut current = orbit.clone();
    for _ in 0..steps {
        let (_, jac) = shooting_jacobian(system, current.twist, &current.x0, current.tau, current.energy, &config.flow)?;
        let mut a = DMatrix::zeros(d + 2, d + 2);
        a.view_mut((0, 0), (d + 1, d + 2)).copy_from(&jac);
        let xh = system.ham_vector_field(&current.x0)?;
        for i in 0..d {
            a[(d + 1, i)] = xh[i];
        }
        let mut kb = kernel_basis(&a, 1e-7);
        if kb.ncols() == 0 {
            let svd = a.clone().svd(false, true);
            let imin = svd.singular_values.imin();
            let v = svd.v_t.expect("v_t requested").row(imin).transpose();
            kb = DMatrix::from_column_slice(d + 2, 1, v.as_slice());
        }
        let mut ek = DVector::zeros(d + 2);
        ek[d + 1] = 1.0;
        let mut tangent = &kb * (kb.transpose() * &ek);
        if tangent.norm() < 1e-12 {
            tangent = kb.column(0).into_owned();
        }
        tangent.normalize_mut();
        match &prev_tangent {
            Some(prev) if prev.dot(&tangent) < 0.0 => tangent = -tangent,
            None if tangent[d + 1] * dk < 0.0 => tangent = -tangent,
            _ => {}
        }
        if tangent[d + 1] * dk <= 1e-8 * dk.abs() {
            return Ok(ContinuationResult {
                family,
                fold: Some(FoldPoint { energy: current.energy, tau: current.tau }),
                failure: None,
            });
        }
        let ds = dk / tangent[d + 1];
        let x_pred: Vec<f64> = current.x0.iter().zip(tangent.iter()).map(|(x, t)| x + ds * t).collect();
        let tau_pred = current.tau + ds * tangent[d];
        let k_next = current.energy + dk;
        let step_cfg = ShootingConfig { energy: k_next, twist: current.twist, ..config.clone() };
        match newton_refine(system, &step_cfg, &x_pred, tau_pred) {
            Ok(next) => {
                current = next;
                family.push(current.clone());
                prev_tangent = Some(tangent);
            }
            Err(e) => return Ok(ContinuationResult { family, fold: None, failure: Some((k_next, e)) }),
        }
    }
    Ok(ContinuationResult { family, fold: None, failure: None })
}
