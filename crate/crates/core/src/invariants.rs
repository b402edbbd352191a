//! Actions, Reeb time, reduced Floquet data, Hofer norms, displacement
//! certificates and the forcing-inequality checks built on them.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flow::{dopri5, integrate_variational, FlowOptions};
use crate::geometry::{StructureKind, SymplecticSystem};
use crate::loopflow::SeparablePerturbation;
use crate::orbit::{
    iterate_factor, level_set_seeds, radical_inverse, FloquetData, SeedStrategy, ShootingConfig, TwistedOrbit, PRIMES,
};

// ---------------------------------------------------------------------------
// Action and Reeb time

/// Integrates `g(x(t), X_H(x(t)))` along the orbit through `x0` for time `t_end`;
/// returns the integral, the end point and the smallest value seen at a step.
fn integrate_along<G>(system: &SymplecticSystem, x0: &[f64], t_end: f64, opts: &FlowOptions, g: G) -> Result<(f64, Vec<f64>, f64)>
where
    G: Fn(&[f64], &[f64]) -> f64,
{
    let d = system.dim();
    let mut y0 = x0.to_vec();
    y0.push(0.0);
    let mut grad = vec![0.0; d];
    let mut xh = vec![0.0; d];
    let mut min_value = f64::INFINITY;
    let quiet = FlowOptions { project_to_level: None, record_samples: false, ..opts.clone() };
    let (_, y, _) = dopri5(
        |_, s, out| {
            system.vector_field_into(&s[..d], &mut grad, &mut out[..d]);
            out[d] = g(&s[..d], &out[..d]);
        },
        &y0,
        0.0,
        t_end,
        &quiet,
        |_, s| {
            let mut gg = vec![0.0; d];
            let mut v = vec![0.0; d];
            system.vector_field_into(&s[..d], &mut gg, &mut v);
            min_value = min_value.min(g(&s[..d], &v));
            true
        },
    )?;
    system.vector_field_into(x0, &mut grad, &mut xh);
    min_value = min_value.min(g(x0, &xh));
    Ok((y[d], y[..d].to_vec(), min_value))
}

/// `(1 / ord) * integral of the primitive` over the `ord`-fold concatenation
/// of the twisted loop, i.e. over `ord * tau` in `X_H`-time.
///
/// On torus systems the closed loop must have zero winding, since the value
/// depends on a filling disc.
pub fn orbit_action(orbit: &TwistedOrbit, system: &SymplecticSystem, opts: &FlowOptions) -> Result<f64> {
    check_dim(system.dim(), orbit.x0.len())?;
    let structure = &system.structure;
    let (integral, end, _) = integrate_along(system, &orbit.x0, orbit.closed_period(), opts, |x, v| structure.primitive_raw(x, v))?;
    let winding = structure.winding(&end, &orbit.x0);
    if winding.iter().any(|w| *w != 0) {
        return Err(Error::NotContractible { winding });
    }
    // ord / closing_factor full turns of the closed loop, divided by ord
    Ok(integral / orbit.closing_factor() as f64)
}

/// Length of the orbit in Reeb time, `integral_0^tau lambda(X_H) dt` for the
/// system's stabilizing form.
pub fn reeb_time(orbit: &TwistedOrbit, system: &SymplecticSystem, opts: &FlowOptions) -> Result<f64> {
    check_dim(system.dim(), orbit.x0.len())?;
    let speed = system.ham_vector_field(&orbit.x0)?.norm();
    let (integral, _, min_value) = integrate_along(system, &orbit.x0, orbit.tau, opts, |x, v| system.stabilizing_eval(x, v))?;
    if speed < 1e-14 {
        // rest point: the loop is constant
        return Ok(0.0);
    }
    if !(min_value > 0.0) {
        return Err(Error::InvalidStabilization { min_value });
    }
    Ok(integral)
}

/// Residue `j mod m`; nonzero means noncontractible in the quotient by the symmetry.
pub fn contractibility_class(orbit: &TwistedOrbit) -> usize {
    orbit.twist % orbit.order.max(1)
}

// ---------------------------------------------------------------------------
// Floquet analysis

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloquetOptions {
    /// Singular values of `T - id` below this count as kernel.
    pub kernel_tol: f64,
    /// Largest accepted condition number of the basis `[xi | X_H | grad H]`.
    pub max_condition: f64,
    /// Radius around 1 used to count unit multipliers of the full map.
    pub unit_tol: f64,
}

impl Default for FloquetOptions {
    fn default() -> Self {
        Self { kernel_tol: 1e-6, max_condition: 1e8, unit_tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloquetReport {
    /// Eigenvalues of the twisted return map reduced to `xi`, as `[re, im]`.
    pub multipliers: Vec<[f64; 2]>,
    /// Singular values of the reduced map minus the identity, ascending.
    pub singular_values: Vec<f64>,
    pub kernel_dim: usize,
    pub nondegenerate: bool,
    pub basis_condition: f64,
    /// `max |M^T Omega M - Omega|` of the monodromy `D Phi_tau`.
    pub symplecticity_defect: f64,
    /// Eigenvalues of the full twisted map `D phi^{-j} D Phi_tau`.
    pub full_multipliers: Vec<[f64; 2]>,
    /// Number of full multipliers within `unit_tol` of 1.
    pub unit_multiplicity: usize,
}

impl FloquetReport {
    pub fn data(&self) -> FloquetData {
        FloquetData { multipliers: self.multipliers.clone(), kernel_dim: self.kernel_dim, nondegenerate: self.nondegenerate }
    }
}

fn pairs(values: &[Complex64]) -> Vec<[f64; 2]> {
    let mut v: Vec<[f64; 2]> = values.iter().map(|c| [c.re, c.im]).collect();
    v.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    v
}

/// Linearized twisted return map `D(phi^{-j} o Phi_tau)(x0)` restricted to
/// `xi`, the symplectic complement of `span{X_H, grad H}`.
///
/// Vectors are reduced by expanding in the basis `[xi | X_H | grad H]` and
/// keeping the `xi` part, which is the quotient `T Sigma / <X_H>`.
pub fn floquet_analysis(
    orbit: &TwistedOrbit,
    system: &SymplecticSystem,
    options: &FloquetOptions,
    flow: &FlowOptions,
) -> Result<FloquetReport> {
    check_dim(system.dim(), orbit.x0.len())?;
    let d = system.dim();
    let x0 = &orbit.x0;
    let mono = integrate_variational(system, x0, orbit.tau, flow)?;
    let (l, _) = system.symmetry.power(orbit.twist as i64);
    let l_inv = l.clone().try_inverse().ok_or_else(|| Error::Parameter("symmetry differential is singular".into()))?;
    let t = &l_inv * &mono.matrix;

    let xh = system.ham_vector_field(x0)?;
    let grad = system.hamiltonian.gradient_vec(x0);
    if xh.norm() < 1e-12 || grad.norm() < 1e-12 {
        return Err(Error::Conditioning { condition: f64::INFINITY });
    }
    // xi = { v : omega(X_H, v) = 0, omega(grad H, v) = 0 }
    let omega = system.structure.omega_matrix();
    let mut constraints = DMatrix::zeros(2, d);
    constraints.row_mut(0).copy_from(&(xh.transpose() * omega));
    constraints.row_mut(1).copy_from(&(grad.transpose() * omega));
    let xi = orthonormal_kernel(&constraints, d - 2)?;

    let mut frame = DMatrix::zeros(d, d);
    frame.view_mut((0, 0), (d, d - 2)).copy_from(&xi);
    frame.column_mut(d - 2).copy_from(&(&xh / xh.norm()));
    frame.column_mut(d - 1).copy_from(&(&grad / grad.norm()));
    let sv = frame.clone().svd(false, false).singular_values;
    let condition = sv.max() / sv.min();
    if !(condition <= options.max_condition) {
        return Err(Error::Conditioning { condition });
    }
    let coords = frame.lu().solve(&(&t * &xi)).ok_or(Error::Conditioning { condition })?;
    let reduced = coords.view((0, 0), (d - 2, d - 2)).into_owned();

    let multipliers: Vec<Complex64> = reduced.complex_eigenvalues().iter().copied().collect();
    let shifted = &reduced - DMatrix::identity(d - 2, d - 2);
    let mut singular: Vec<f64> = shifted.svd(false, false).singular_values.iter().copied().collect();
    singular.sort_by(f64::total_cmp);
    let kernel_dim = singular.iter().filter(|s| **s < options.kernel_tol).count();

    let full: Vec<Complex64> = t.complex_eigenvalues().iter().copied().collect();
    let unit_multiplicity = full.iter().filter(|z| (**z - 1.0).norm() < options.unit_tol).count();
    Ok(FloquetReport {
        multipliers: pairs(&multipliers),
        singular_values: singular,
        kernel_dim,
        nondegenerate: kernel_dim == 0,
        basis_condition: condition,
        symplecticity_defect: mono.symplecticity_defect,
        full_multipliers: pairs(&full),
        unit_multiplicity,
    })
}

/// Orthonormal basis of `ker a` with the expected dimension.
fn orthonormal_kernel(a: &DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>> {
    let cols = a.ncols();
    // complete the row space to a full SVD through the normal matrix
    let sym = a.transpose() * a;
    let eig = sym.symmetric_eigen();
    let mut idx: Vec<usize> = (0..cols).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let scale = eig.eigenvalues.amax().max(1e-300);
    if eig.eigenvalues[idx[dim - 1]] > 1e-10 * scale || (dim < cols && eig.eigenvalues[idx[dim]] < 1e-10 * scale) {
        return Err(Error::Conditioning { condition: scale / eig.eigenvalues[idx[dim.min(cols - 1)]].abs().max(1e-300) });
    }
    let mut basis = DMatrix::zeros(cols, dim);
    for (k, &i) in idx.iter().take(dim).enumerate() {
        basis.column_mut(k).copy_from(&eig.eigenvectors.column(i));
    }
    Ok(basis)
}

// ---------------------------------------------------------------------------
// Global optimization helpers

fn halton_points(bounds: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    (1..=count as u64)
        .map(|i| {
            (0..d)
                .map(|c| {
                    let u = (radical_inverse(i, PRIMES[c % PRIMES.len()]) + shift[c]).fract();
                    bounds[c].0 + u * (bounds[c].1 - bounds[c].0)
                })
                .collect()
        })
        .collect()
}

/// Projected gradient ascent with backtracking inside the box.
fn ascend<F, G>(value: &F, gradient: &G, bounds: &[(f64, f64)], start: Vec<f64>, iterations: usize) -> (f64, Vec<f64>)
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    let d = bounds.len();
    let width = bounds.iter().map(|(a, b)| b - a).fold(0.0, f64::max);
    let mut x = start;
    let mut fx = value(&x);
    let mut g = vec![0.0; d];
    let mut step = 0.1 * width;
    for _ in 0..iterations {
        gradient(&x, &mut g);
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-14 {
            break;
        }
        let mut improved = false;
        while step > 1e-12 * width.max(1.0) {
            let trial: Vec<f64> = (0..d).map(|i| (x[i] + step * g[i] / gn).clamp(bounds[i].0, bounds[i].1)).collect();
            let ft = value(&trial);
            if ft > fx {
                x = trial;
                fx = ft;
                improved = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (fx, x)
}

/// Multi-start maximum over a box: sample, then polish the best `starts`.
fn multistart_max<F, G>(value: &F, gradient: &G, bounds: &[(f64, f64)], samples: usize, starts: usize, seed: u64) -> (f64, Vec<f64>)
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    let mut pts: Vec<(f64, Vec<f64>)> = halton_points(bounds, samples, seed).into_iter().map(|p| (value(&p), p)).collect();
    let center: Vec<f64> = bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    pts.push((value(&center), center));
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for (_, p) in pts.into_iter().take(starts.max(1)) {
        let cand = ascend(value, gradient, bounds, p, 500);
        if cand.0 > best.0 {
            best = cand;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Hofer norm

/// A compactly supported time-dependent Hamiltonian on `[0, 1] x R^{2n}`.
pub trait TimeDependentHamiltonian: Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Box containing the spatial support for every `t`.
    fn support_box(&self) -> Vec<(f64, f64)>;
}

impl TimeDependentHamiltonian for SeparablePerturbation {
    fn dim(&self) -> usize {
        SeparablePerturbation::dim(self)
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        SeparablePerturbation::value(self, t, x)
    }
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        SeparablePerturbation::gradient(self, t, x, out)
    }
    fn support_box(&self) -> Vec<(f64, f64)> {
        SeparablePerturbation::support_box(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoferOptions {
    /// Time slices at the first level (rounded up to even for Simpson).
    pub time_slices: usize,
    /// Spatial samples per slice at the first level.
    pub spatial_samples: usize,
    /// Local ascents started from the best samples.
    pub starts: usize,
    /// Grid refinements (each doubles slices and samples).
    pub max_refinements: usize,
    /// Accepted change between successive levels.
    pub stability_tol: f64,
    pub seed: u64,
}

impl Default for HoferOptions {
    fn default() -> Self {
        Self { time_slices: 32, spatial_samples: 512, starts: 4, max_refinements: 3, stability_tol: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoferNorm {
    pub plus: f64,
    pub minus: f64,
    pub total: f64,
    /// Largest change of `plus` or `minus` at the last refinement; `None`
    /// when only one level was evaluated.
    pub change: Option<f64>,
    pub levels: usize,
    pub low_confidence: bool,
}

fn slice_extrema(f: &dyn TimeDependentHamiltonian, t: f64, bounds: &[(f64, f64)], samples: usize, starts: usize, seed: u64) -> (f64, f64) {
    let value = |x: &[f64]| f.value(t, x);
    let gradient = |x: &[f64], out: &mut [f64]| f.gradient(t, x, out);
    let (hi, _) = multistart_max(&value, &gradient, bounds, samples, starts, seed);
    let neg = |x: &[f64]| -f.value(t, x);
    let neg_grad = |x: &[f64], out: &mut [f64]| {
        f.gradient(t, x, out);
        out.iter_mut().for_each(|v| *v = -*v);
    };
    let (lo, _) = multistart_max(&neg, &neg_grad, bounds, samples, starts, seed);
    // F vanishes outside its support, so both extrema include zero
    (hi.max(0.0), (-lo).min(0.0))
}

fn simpson(values: &[f64]) -> f64 {
    let n = values.len() - 1;
    let h = 1.0 / n as f64;
    let mut acc = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

/// `||F||_+ = int max_x F_t dt`, `||F||_- = -int min_x F_t dt` and their sum,
/// by multi-start optimization per time slice and Simpson's rule in time.
/// The grids are refined until the pieces change by at most `stability_tol`.
pub fn hofer_norm(f: &dyn TimeDependentHamiltonian, options: &HoferOptions) -> Result<HoferNorm> {
    let bounds = f.support_box();
    check_dim(f.dim(), bounds.len())?;
    if options.time_slices == 0 || options.spatial_samples == 0 {
        return Err(Error::Parameter("Hofer norm needs time slices and spatial samples".into()));
    }
    if bounds.iter().all(|(a, b)| a == b) {
        return Ok(HoferNorm { plus: 0.0, minus: 0.0, total: 0.0, change: Some(0.0), levels: 1, low_confidence: false });
    }
    let mut previous: Option<(f64, f64)> = None;
    let mut change = None;
    let mut levels = 0;
    let mut current = (0.0, 0.0);
    for level in 0..=options.max_refinements {
        levels = level + 1;
        let slices = (options.time_slices << level).div_ceil(2) * 2;
        let samples = options.spatial_samples << level;
        let ext: Vec<(f64, f64)> = (0..=slices)
            .into_par_iter()
            .map(|i| slice_extrema(f, i as f64 / slices as f64, &bounds, samples, options.starts, options.seed))
            .collect();
        let hi: Vec<f64> = ext.iter().map(|e| e.0).collect();
        let lo: Vec<f64> = ext.iter().map(|e| e.1).collect();
        current = (simpson(&hi), -simpson(&lo));
        if let Some(prev) = previous {
            let delta = (current.0 - prev.0).abs().max((current.1 - prev.1).abs());
            change = Some(delta);
            if delta <= options.stability_tol {
                break;
            }
        }
        previous = Some(current);
    }
    Ok(HoferNorm {
        plus: current.0,
        minus: current.1,
        total: current.0 + current.1,
        change,
        levels,
        low_confidence: !change.is_some_and(|c| c <= options.stability_tol),
    })
}

// ---------------------------------------------------------------------------
// Displacement certificates

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateOptions {
    pub energy: f64,
    pub samples: usize,
    pub seed: u64,
    /// Required lower bound on the distance of every image to the level set.
    pub margin: f64,
    /// Ambient box for the level-set sampler; empty means the orbit-search default.
    pub sample_box: Vec<(f64, f64)>,
    /// Safety factor applied to the sampled Lipschitz bound of `|grad H|`.
    pub lipschitz_safety: f64,
}

impl CertificateOptions {
    pub fn new(energy: f64) -> Self {
        Self { energy, samples: 10_000, seed: 0, margin: 1e-3, sample_box: Vec::new(), lipschitz_safety: 1.5 }
    }
}

/// Evidence that the time-one map of `F` moves the sampled level set off itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementCertificate {
    pub profile: String,
    pub hofer_norm: f64,
    /// Upper bound on the displacement energy, `||F||`.
    pub e_upper: f64,
    pub energy: f64,
    pub sample_size: usize,
    /// Smallest lower bound `|H(phi_F(x)) - k| / L(x)` over the sample.
    pub evidence_min: f64,
    /// Smallest distance from an image to a sample point.
    pub nearest_sample_min: f64,
    /// Largest of the per-sample Lipschitz bounds `L(x)`.
    pub lipschitz_bound: f64,
    pub margin: f64,
    pub valid: bool,
}

/// Time-one map of the Hamiltonian flow of `F`.
pub fn time_one_map(system: &SymplecticSystem, f: &dyn TimeDependentHamiltonian, x0: &[f64], opts: &FlowOptions) -> Result<Vec<f64>> {
    check_dim(system.dim(), x0.len())?;
    let d = system.dim();
    let omega_inv = system.structure.omega_inverse();
    let mut g = vec![0.0; d];
    let quiet = FlowOptions { project_to_level: None, record_samples: false, ..opts.clone() };
    let (_, y, _) = dopri5(
        |t, x, out| {
            f.gradient(t, x, &mut g);
            for i in 0..d {
                out[i] = (0..d).map(|k| omega_inv[(i, k)] * g[k]).sum();
            }
        },
        x0,
        0.0,
        1.0,
        &quiet,
        |_, _| true,
    )?;
    Ok(y)
}

/// Flows a low-discrepancy sample of `H^{-1}(k)` with `F` and bounds the
/// distance of every image to the level set from below.
///
/// The bound is `|H(y) - k| / L(x)` with `L(x)` the largest `|grad H|` seen on
/// the segment from the sample `x` to its image `y`, times a safety factor.
/// This is evidence at sample resolution, not a proof.
pub fn displacement_certificate(
    system: &SymplecticSystem,
    f: &SeparablePerturbation,
    label: &str,
    options: &CertificateOptions,
) -> Result<DisplacementCertificate> {
    check_dim(system.dim(), f.dim())?;
    if !(options.margin > 0.0) || options.samples == 0 {
        return Err(Error::Parameter("certificate needs a positive margin and samples".into()));
    }
    let mut cfg = ShootingConfig::new(options.energy, 0, (1.0, 2.0));
    cfg.seeds = SeedStrategy::QuasiRandom { count: options.samples, seed: options.seed };
    cfg.sample_box = options.sample_box.clone();
    let (points, _) = level_set_seeds(system, &cfg)?;
    if points.is_empty() {
        return Err(Error::Parameter("no sample point reached the level set".into()));
    }
    let opts = FlowOptions::with_tolerance(1e-10).quiet();
    let images: Vec<Vec<f64>> = points.par_iter().map(|x| time_one_map(system, f, x, &opts)).collect::<Result<_>>()?;

    // per-image Lipschitz bound along the segment back to its sample point
    let bounds: Vec<(f64, f64)> = points
        .par_iter()
        .zip(&images)
        .map(|(x, y)| {
            let lip = (0..=8)
                .map(|i| {
                    let s = i as f64 / 8.0;
                    let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + s * (b - a)).collect();
                    system.hamiltonian.gradient_vec(&z).norm()
                })
                .fold(0.0, f64::max)
                * options.lipschitz_safety;
            ((system.energy(y) - options.energy).abs() / lip.max(1e-300), lip)
        })
        .collect();
    let evidence_min = bounds.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
    let lipschitz = bounds.iter().map(|b| b.1).fold(0.0, f64::max);
    let nearest_sample_min = images
        .par_iter()
        .map(|y| points.iter().map(|x| system.structure.difference(y, x).norm()).fold(f64::INFINITY, f64::min))
        .reduce(|| f64::INFINITY, f64::min);
    let (plus, minus) = f.norm_pieces();
    let norm = plus + minus;
    Ok(DisplacementCertificate {
        profile: label.to_string(),
        hofer_norm: norm,
        e_upper: norm,
        energy: options.energy,
        sample_size: points.len(),
        evidence_min,
        nearest_sample_min,
        lipschitz_bound: lipschitz,
        margin: options.margin,
        valid: evidence_min > options.margin,
    })
}

// ---------------------------------------------------------------------------
// Forcing checks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ForcingVerdict {
    /// The found orbit is geometrically distinct from the base.
    DistinctOrbits,
    /// The found orbit is the `p`-fold iterate of the base and `tau_0 <= e / (p - 1)` holds.
    Iterate { p: usize, bound: f64 },
    /// A checked inequality failed: a missed orbit or a bad certificate.
    InequalityViolated { reason: String },
    /// No admissible second orbit in the list.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingReport {
    pub base_tau: f64,
    pub base_x0: Vec<f64>,
    pub found_tau: Option<f64>,
    pub found_x0: Option<Vec<f64>>,
    /// `tau - tau_0`.
    pub gap: Option<f64>,
    /// `ord * (A - A_0)`, the difference of the disc integrals.
    pub action_gap: Option<f64>,
    pub order: usize,
    pub e_upper: f64,
    pub iterate: Option<usize>,
    pub verdict: ForcingVerdict,
}

/// Looks for the lowest-action orbit above the base and checks the forcing
/// inequalities against the certificate's `e_upper`.
///
/// Candidates must have `tau > tau_0`; when the base is noncontractible in the
/// quotient so must they be. The disc-integral gap `ord * (A - A_0)` is
/// compared with `ord * e_upper`, the period gap with `e_upper`, and for a
/// `p`-fold iterate `tau_0 <= e_upper / (p - 1)` is checked.
pub fn forcing_check(
    system: &SymplecticSystem,
    orbits: &[TwistedOrbit],
    base: &TwistedOrbit,
    certificate: &DisplacementCertificate,
    flow: &FlowOptions,
) -> Result<ForcingReport> {
    if !certificate.valid {
        return Err(Error::InvalidCertificate(format!(
            "evidence {:e} does not exceed margin {:e}",
            certificate.evidence_min, certificate.margin
        )));
    }
    let order = system.symmetry.order().max(1);
    let e = certificate.e_upper;
    let action_of = |o: &TwistedOrbit| -> Result<f64> {
        match o.action {
            Some(a) => Ok(a),
            None => orbit_action(o, system, flow),
        }
    };
    let a0 = action_of(base)?;
    let need_noncontractible = contractibility_class(base) != 0;
    let mut candidates = Vec::new();
    for o in orbits {
        if (o.energy - base.energy).abs() > 1e-8 {
            return Err(Error::Parameter("forcing check needs orbits on one energy level".into()));
        }
        if o.tau <= base.tau * (1.0 + 1e-9) || (need_noncontractible && contractibility_class(o) == 0) {
            continue;
        }
        candidates.push((action_of(o)?, o));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.tau.total_cmp(&b.1.tau)));
    let mut report = ForcingReport {
        base_tau: base.tau,
        base_x0: base.x0.clone(),
        found_tau: None,
        found_x0: None,
        gap: None,
        action_gap: None,
        order,
        e_upper: e,
        iterate: None,
        verdict: ForcingVerdict::Inconclusive,
    };
    let Some((a, found)) = candidates.first() else {
        return Ok(report);
    };
    let gap = found.tau - base.tau;
    let action_gap = order as f64 * (a - a0);
    report.found_tau = Some(found.tau);
    report.found_x0 = Some(found.x0.clone());
    report.gap = Some(gap);
    report.action_gap = Some(action_gap);
    let star_shaped = matches!(system.structure.kind(), StructureKind::ExactStandard);
    let slack = 1e-9 * (1.0 + e);
    let mut violations = Vec::new();
    if action_gap > order as f64 * e + slack {
        violations.push(format!("action gap {action_gap} exceeds ord * e_upper = {}", order as f64 * e));
    }
    if star_shaped && gap > e + slack {
        violations.push(format!("period gap {gap} exceeds e_upper = {e}"));
    }
    let p = iterate_factor(system, base, found, 1e-6)?;
    report.iterate = p;
    if let Some(p) = p {
        if p >= 2 {
            let bound = e / (p - 1) as f64;
            if base.tau > bound + slack {
                violations.push(format!("tau_0 = {} exceeds e_upper / (p - 1) = {bound}", base.tau));
            }
            report.verdict = ForcingVerdict::Iterate { p, bound };
        }
    } else {
        report.verdict = ForcingVerdict::DistinctOrbits;
    }
    if !violations.is_empty() {
        report.verdict = ForcingVerdict::InequalityViolated { reason: violations.join("; ") };
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Mane-type threshold

/// `max_q V(q)` for `H = 1/2 |p|^2 + V(q)` on a torus, which is the infimum
/// of energies whose level set projects onto the whole base.
pub fn e0_threshold(system: &SymplecticSystem, samples: usize, seed: u64) -> Result<f64> {
    if !system.structure.is_torus() {
        return Err(Error::UnsupportedStructure("e0 needs a cotangent bundle of a torus".into()));
    }
    let n = system.structure.n();
    // the kinetic part must be exactly 1/2 |p|^2
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..16 {
        let x: Vec<f64> = (0..2 * n).map(|i| if i < n { rng.gen::<f64>() } else { rng.gen_range(-2.0..2.0) }).collect();
        let mut base = x.clone();
        base[n..].fill(0.0);
        let kinetic = 0.5 * x[n..].iter().map(|p| p * p).sum::<f64>();
        let diff = system.energy(&x) - system.energy(&base) - kinetic;
        if diff.abs() > 1e-10 * (1.0 + kinetic) {
            return Err(Error::UnsupportedStructure("Hamiltonian is not kinetic plus potential".into()));
        }
    }
    let lift = |q: &[f64]| {
        let mut x = q.to_vec();
        x.resize(2 * n, 0.0);
        x
    };
    let value = |q: &[f64]| system.energy(&lift(q));
    let gradient = |q: &[f64], out: &mut [f64]| {
        let g = system.hamiltonian.gradient_vec(&lift(q));
        out.copy_from_slice(&g.as_slice()[..n]);
    };
    let bounds = vec![(0.0, 1.0); n];
    let (best, _) = multistart_max(&value, &gradient, &bounds, samples.max(1), 8, seed);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{make_ellipsoid, make_magnetic_torus, make_mechanical_torus, make_sphere, ConstantPotential, SineSquaredPotential};
    use crate::loopflow::{BumpProfile, ChordShearProfile, SpatialProfile, TranslationProfile, ZeroProfile};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn orbit(system: &SymplecticSystem, x0: Vec<f64>, tau: f64, twist: usize, energy: f64) -> TwistedOrbit {
        TwistedOrbit {
            system: system.name.clone(),
            twist,
            order: system.symmetry.order(),
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
    }

    fn opts() -> FlowOptions {
        FlowOptions::default().quiet()
    }

    fn planar_j() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
    }

    #[test]
    fn sphere_actions_equal_periods() {
        let sys = make_sphere(2, 1.0, 2, &[1, 1]).unwrap().system;
        let simple = orbit(&sys, vec![1.0, 0.0, 0.0, 0.0], PI, 0, 0.0);
        assert!((orbit_action(&simple, &sys, &opts()).unwrap() - PI).abs() < 1e-10);
        assert!((reeb_time(&simple, &sys, &opts()).unwrap() - PI).abs() < 1e-10);
        let twisted = orbit(&sys, vec![0.6, 0.0, 0.0, 0.8], PI / 2.0, 1, 0.0);
        assert!((orbit_action(&twisted, &sys, &opts()).unwrap() - PI / 2.0).abs() < 1e-10);
        assert_eq!(contractibility_class(&twisted), 1);
        assert_eq!(contractibility_class(&simple), 0);
    }

    #[test]
    fn rest_point_has_zero_action_and_length() {
        let sys = make_sphere(2, 1.0, 1, &[1, 1]).unwrap().system;
        let rest = orbit(&sys, vec![0.0; 4], 1.0, 0, -1.0);
        assert_eq!(orbit_action(&rest, &sys, &opts()).unwrap(), 0.0);
        assert_eq!(reeb_time(&rest, &sys, &opts()).unwrap(), 0.0);
    }

    #[test]
    fn magnetic_torus_action_and_reeb_time() {
        let sys = make_magnetic_torus(planar_j(), None).unwrap().system;
        let o = orbit(&sys, vec![0.2, 0.7, 0.0, 1.0], 2.0 * PI, 0, 0.5);
        assert!((orbit_action(&o, &sys, &opts()).unwrap() - 0.5 * 2.0 * PI).abs() < 1e-8);
        assert!((reeb_time(&o, &sys, &opts()).unwrap() - 0.5 * 2.0 * PI).abs() < 1e-8);
    }

    #[test]
    fn winding_loop_has_no_action() {
        let sys = make_mechanical_torus(2, Arc::new(ConstantPotential(0.0))).unwrap().system;
        let o = orbit(&sys, vec![0.0, 0.0, 1.0, 0.0], 1.0, 0, 0.5);
        assert!(matches!(orbit_action(&o, &sys, &opts()), Err(Error::NotContractible { winding }) if winding == vec![1, 0]));
    }

    #[test]
    fn floquet_round_sphere_and_ellipsoid() {
        let sys = make_sphere(2, 1.0, 2, &[1, 1]).unwrap().system;
        let o = orbit(&sys, vec![1.0, 0.0, 0.0, 0.0], PI, 0, 0.0);
        let rep = floquet_analysis(&o, &sys, &FloquetOptions::default(), &opts()).unwrap();
        assert_eq!(rep.kernel_dim, 2);
        assert!(!rep.nondegenerate);
        assert!(rep.unit_multiplicity >= 2);
        assert!(rep.symplecticity_defect < 1e-8);

        let ell = make_ellipsoid(&[1.0, 1.3], 1, &[0, 0]).unwrap().system;
        let o = orbit(&ell, vec![1.0, 0.0, 0.0, 0.0], PI, 0, 0.0);
        let rep = floquet_analysis(&o, &ell, &FloquetOptions::default(), &opts()).unwrap();
        assert_eq!(rep.kernel_dim, 0);
        assert!(rep.nondegenerate);
        // transverse multipliers exp(-+2 pi i / 1.3^2)
        let angle = 2.0 * PI / 1.69;
        for m in &rep.multipliers {
            assert!((m[0] - angle.cos()).abs() < 1e-8 && (m[1].abs() - angle.sin().abs()).abs() < 1e-8, "{m:?}");
        }
        assert!(rep.unit_multiplicity >= 2);
    }

    fn bump(amplitude: f64) -> SeparablePerturbation {
        SeparablePerturbation::new(Arc::new(BumpProfile { center: vec![0.3, -0.2], width: 0.5, amplitude }))
    }

    #[test]
    fn hofer_norm_of_separable_bump() {
        let h = hofer_norm(&bump(0.7), &HoferOptions::default()).unwrap();
        assert!(!h.low_confidence);
        assert!((h.plus - 0.7).abs() < 1e-4, "{h:?}");
        assert!(h.minus.abs() < 1e-12);
        let neg = hofer_norm(&bump(-0.7), &HoferOptions::default()).unwrap();
        assert!((neg.minus - h.plus).abs() < 1e-8 && (neg.plus - h.minus).abs() < 1e-8);
        let zero = SeparablePerturbation::new(Arc::new(ZeroProfile { dim: 2 }));
        assert_eq!(hofer_norm(&zero, &HoferOptions::default()).unwrap().total, 0.0);
    }

    #[test]
    fn hofer_norm_of_chord_shear_matches_height() {
        let shear = ChordShearProfile::new(2, 0.005, 0.02).unwrap();
        let height = shear.height();
        let f = SeparablePerturbation::new(Arc::new(shear));
        let opt = HoferOptions { spatial_samples: 256, max_refinements: 2, ..HoferOptions::default() };
        let h = hofer_norm(&f, &opt).unwrap();
        assert!((h.total - height).abs() < 1e-4, "{h:?} vs {height}");
        assert!(height <= PI + 0.1);
    }

    #[test]
    fn translation_certifies_sphere_and_zero_does_not() {
        let sys = make_sphere(2, 1.0, 1, &[1, 1]).unwrap().system;
        let prof = TranslationProfile::new(&sys, &[2.5, 0.0, 0.0, 0.0], 3.6, 4.5).unwrap();
        let f = SeparablePerturbation::new(Arc::new(prof.clone()));
        let mut o = CertificateOptions::new(0.0);
        o.samples = 500;
        let c = displacement_certificate(&sys, &f, "translation", &o).unwrap();
        assert!(c.valid, "{c:?}");
        assert!((c.e_upper - (prof.range().1 - prof.range().0)).abs() < 1e-12);

        let zero = SeparablePerturbation::new(Arc::new(ZeroProfile { dim: 4 }));
        let c = displacement_certificate(&sys, &zero, "zero", &o).unwrap();
        assert!(!c.valid);
        assert!(c.evidence_min < 1e-10);
    }

    fn certificate(e_upper: f64) -> DisplacementCertificate {
        DisplacementCertificate {
            profile: "fixture".into(),
            hofer_norm: e_upper,
            e_upper,
            energy: 0.0,
            sample_size: 1,
            evidence_min: 1.0,
            nearest_sample_min: 1.0,
            lipschitz_bound: 1.0,
            margin: 1e-3,
            valid: true,
        }
    }

    #[test]
    fn forcing_on_twisted_sphere() {
        let sys = make_sphere(2, 1.0, 2, &[1, 1]).unwrap().system;
        let base = orbit(&sys, vec![1.0, 0.0, 0.0, 0.0], PI / 2.0, 1, 0.0);
        let same = base.clone();
        let other = orbit(&sys, vec![0.0, 1.0, 0.0, 0.0], 1.5 * PI, 1, 0.0);
        let iterate = orbit(&sys, vec![0.0, 0.0, -1.0, 0.0], 1.5 * PI, 1, 0.0);
        let contractible = orbit(&sys, vec![0.0, 1.0, 0.0, 0.0], PI, 0, 0.0);
        let cert = certificate(PI + 0.06);

        let r = forcing_check(&sys, &[same.clone(), contractible.clone(), other], &base, &cert, &opts()).unwrap();
        assert_eq!(r.verdict, ForcingVerdict::DistinctOrbits);
        assert!((r.gap.unwrap() - PI).abs() < 1e-12);
        assert!((r.action_gap.unwrap() - 2.0 * PI).abs() < 1e-8);

        let r = forcing_check(&sys, &[iterate.clone()], &base, &cert, &opts()).unwrap();
        assert!(matches!(r.verdict, ForcingVerdict::Iterate { p: 3, .. }), "{:?}", r.verdict);

        let r = forcing_check(&sys, &[same], &base, &cert, &opts()).unwrap();
        assert_eq!(r.verdict, ForcingVerdict::Inconclusive);

        let r = forcing_check(&sys, &[iterate], &base, &certificate(1.0), &opts()).unwrap();
        assert!(matches!(r.verdict, ForcingVerdict::InequalityViolated { .. }));

        let mut bad = cert;
        bad.valid = false;
        assert!(matches!(forcing_check(&sys, &[], &base, &bad, &opts()), Err(Error::InvalidCertificate(_))));
    }

    #[test]
    fn e0_examples() {
        let mag = make_magnetic_torus(planar_j(), None).unwrap().system;
        assert_eq!(e0_threshold(&mag, 256, 0).unwrap(), 0.0);
        let flat = make_mechanical_torus(2, Arc::new(ConstantPotential(0.3))).unwrap().system;
        assert!((e0_threshold(&flat, 256, 0).unwrap() - 0.3).abs() < 1e-14);
        let sine = make_mechanical_torus(2, Arc::new(SineSquaredPotential(1.0))).unwrap().system;
        assert!((e0_threshold(&sine, 256, 0).unwrap() - 1.0).abs() < 1e-10);
        let sphere = make_sphere(2, 1.0, 1, &[1, 1]).unwrap().system;
        assert!(matches!(e0_threshold(&sphere, 16, 0), Err(Error::UnsupportedStructure(_))));
    }
}
