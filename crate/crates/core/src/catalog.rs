//! Constructors for the concrete systems: Hénon–Heiles, regularized Hill's
//! lunar problem, magnetic tori and star-shaped hypersurfaces in `C^n`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    fd_gradient, Hamiltonian, StabilizingForm, SymmetryAction, SymplecticStructure,
    SymplecticSystem,
};

/// A tagged statement about a catalog system, with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownFact {
    pub tag: String,
    pub citation: String,
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub system: SymplecticSystem,
    pub recommended_window: (f64, f64),
    pub facts: Vec<KnownFact>,
}

fn fact(tag: &str, citation: &str) -> KnownFact {
    KnownFact { tag: tag.into(), citation: citation.into() }
}

// ---------------------------------------------------------------------------
// Hamiltonians

#[derive(Debug, Clone)]
pub struct HenonHeiles;

impl Hamiltonian for HenonHeiles {
    fn dim(&self) -> usize {
        4
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        0.5 * (p1 * p1 + p2 * p2 + q1 * q1 + q2 * q2) + q1 * q1 * q2 - q2 * q2 * q2 / 3.0
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        out[0] = q1 + 2.0 * q1 * q2;
        out[1] = q2 + q1 * q1 - q2 * q2;
        out[2] = p1;
        out[3] = p2;
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let (q1, q2) = (x[0], x[1]);
        let mut h = DMatrix::identity(4, 4);
        h[(0, 0)] = 1.0 + 2.0 * q2;
        h[(0, 1)] = 2.0 * q1;
        h[(1, 0)] = 2.0 * q1;
        h[(1, 1)] = 1.0 - 2.0 * q2;
        h
    }
}

/// Levi-Civita regularized Hill's lunar Hamiltonian `K`.
#[derive(Debug, Clone)]
pub struct HillLunar;

impl Hamiltonian for HillLunar {
    fn dim(&self) -> usize {
        4
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        let r2 = q1 * q1 + q2 * q2;
        let (a2, b2) = (q1 * q1, q2 * q2);
        let sextic = a2 * a2 * a2 - 3.0 * a2 * a2 * b2 - 3.0 * a2 * b2 * b2 + b2 * b2 * b2;
        0.5 * (p1 * p1 + p2 * p2 + r2) + 2.0 * r2 * (q2 * p1 - q1 * p2) - 4.0 * sextic
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        let r2 = q1 * q1 + q2 * q2;
        let l = q2 * p1 - q1 * p2;
        let s1 = 6.0 * q1.powi(5) - 12.0 * q1.powi(3) * q2 * q2 - 6.0 * q1 * q2.powi(4);
        let s2 = -6.0 * q1.powi(4) * q2 - 12.0 * q1 * q1 * q2.powi(3) + 6.0 * q2.powi(5);
        out[0] = q1 + 4.0 * q1 * l - 2.0 * r2 * p2 - 4.0 * s1;
        out[1] = q2 + 4.0 * q2 * l + 2.0 * r2 * p1 - 4.0 * s2;
        out[2] = p1 + 2.0 * r2 * q2;
        out[3] = p2 - 2.0 * r2 * q1;
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        let r2 = q1 * q1 + q2 * q2;
        let l = q2 * p1 - q1 * p2;
        let s11 = 30.0 * q1.powi(4) - 36.0 * q1 * q1 * q2 * q2 - 6.0 * q2.powi(4);
        let s12 = -24.0 * q1.powi(3) * q2 - 24.0 * q1 * q2.powi(3);
        let s22 = -6.0 * q1.powi(4) - 36.0 * q1 * q1 * q2 * q2 + 30.0 * q2.powi(4);
        let h00 = 1.0 + 4.0 * l - 8.0 * q1 * p2 - 4.0 * s11;
        let h01 = 4.0 * q1 * p1 - 4.0 * q2 * p2 - 4.0 * s12;
        let h11 = 1.0 + 4.0 * l + 8.0 * q2 * p1 - 4.0 * s22;
        let h02 = 4.0 * q1 * q2;
        let h03 = -4.0 * q1 * q1 - 2.0 * r2;
        let h12 = 4.0 * q2 * q2 + 2.0 * r2;
        let h13 = -4.0 * q1 * q2;
        DMatrix::from_row_slice(
            4,
            4,
            &[
                h00, h01, h02, h03, //
                h01, h11, h12, h13, //
                h02, h12, 1.0, 0.0, //
                h03, h13, 0.0, 1.0,
            ],
        )
    }
}

/// A scalar potential on the torus `T^n`, given on the unit-periodic lift.
pub trait TorusPotential: Send + Sync + fmt::Debug {
    fn value(&self, q: &[f64]) -> f64;
    fn gradient(&self, q: &[f64], out: &mut [f64]);
    fn hessian(&self, q: &[f64]) -> DMatrix<f64>;
}

/// `V(q) = c`.
#[derive(Debug, Clone)]
pub struct ConstantPotential(pub f64);

impl TorusPotential for ConstantPotential {
    fn value(&self, _q: &[f64]) -> f64 {
        self.0
    }
    fn gradient(&self, _q: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn hessian(&self, q: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(q.len(), q.len())
    }
}

/// `V(q) = a sin^2(2 pi q_1)`.
#[derive(Debug, Clone)]
pub struct SineSquaredPotential(pub f64);

impl TorusPotential for SineSquaredPotential {
    fn value(&self, q: &[f64]) -> f64 {
        self.0 * (2.0 * std::f64::consts::PI * q[0]).sin().powi(2)
    }
    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        let w = 2.0 * std::f64::consts::PI;
        out.iter_mut().for_each(|o| *o = 0.0);
        out[0] = self.0 * w * (2.0 * w * q[0]).sin();
    }
    fn hessian(&self, q: &[f64]) -> DMatrix<f64> {
        let w = 2.0 * std::f64::consts::PI;
        let mut h = DMatrix::zeros(q.len(), q.len());
        h[(0, 0)] = self.0 * 2.0 * w * w * (2.0 * w * q[0]).cos();
        h
    }
}

/// `H(q, p) = 1/2 |p|^2 + V(q)` on `T^* T^n`.
#[derive(Debug, Clone)]
pub struct MechanicalTorus {
    pub n: usize,
    pub potential: Option<Arc<dyn TorusPotential>>,
}

impl Hamiltonian for MechanicalTorus {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let kin = 0.5 * x[n..].iter().map(|p| p * p).sum::<f64>();
        kin + self.potential.as_ref().map_or(0.0, |v| v.value(&x[..n]))
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        match &self.potential {
            Some(v) => v.gradient(&x[..n], &mut out[..n]),
            None => out[..n].iter_mut().for_each(|o| *o = 0.0),
        }
        out[n..].copy_from_slice(&x[n..]);
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            h[(n + i, n + i)] = 1.0;
        }
        if let Some(v) = &self.potential {
            h.view_mut((0, 0), (n, n)).copy_from(&v.hessian(&x[..n]));
        }
        h
    }
}

/// A positive function on the unit sphere, represented by its degree-0
/// homogeneous extension to `C^n \ {0}` (coordinates `(x, y)`).
pub trait SphereProfile: Send + Sync + fmt::Debug {
    fn value(&self, z: &[f64]) -> f64;
    fn gradient(&self, z: &[f64], out: &mut [f64]);
    fn hessian(&self, z: &[f64]) -> DMatrix<f64>;
}

#[derive(Debug, Clone)]
pub struct ConstantProfile(pub f64);

impl SphereProfile for ConstantProfile {
    fn value(&self, _z: &[f64]) -> f64 {
        self.0
    }
    fn gradient(&self, _z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(z.len(), z.len())
    }
}

/// `f(u) = r (1 + eps Re(u_1^m))`, invariant under any rotation of order `m`.
#[derive(Debug, Clone)]
pub struct HarmonicBumpProfile {
    pub n: usize,
    pub radius: f64,
    pub eps: f64,
    pub m: u32,
}

impl HarmonicBumpProfile {
    fn z1(&self, z: &[f64]) -> Complex64 {
        Complex64::new(z[0], z[self.n])
    }

    /// `psi = Re(z_1^m) / |z|^m` with gradient and Hessian.
    fn psi(&self, z: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let dim = 2 * self.n;
        let m = self.m as i32;
        let d = m as f64;
        let w = self.z1(z);
        let rho2: f64 = z.iter().map(|c| c * c).sum();
        let rho_d = rho2.powf(-0.5 * d);
        let p = w.powi(m).re;
        let mut gp = DVector::zeros(dim);
        let mut hp = DMatrix::zeros(dim, dim);
        let (ix, iy) = (0, self.n);
        let w1 = w.powi(m - 1) * d;
        gp[ix] = w1.re;
        gp[iy] = -w1.im;
        if m >= 2 {
            let w2 = w.powi(m - 2) * (d * (d - 1.0));
            hp[(ix, ix)] = w2.re;
            hp[(ix, iy)] = -w2.im;
            hp[(iy, ix)] = -w2.im;
            hp[(iy, iy)] = -w2.re;
        }
        let zv = DVector::from_column_slice(z);
        let psi = p * rho_d;
        let rho_d2 = rho_d / rho2;
        let grad = &gp * rho_d - &zv * (d * p * rho_d2);
        let outer = &gp * zv.transpose() + &zv * gp.transpose();
        let hess = &hp * rho_d - outer * (d * rho_d2) - DMatrix::identity(dim, dim) * (d * p * rho_d2)
            + &zv * zv.transpose() * (d * (d + 2.0) * p * rho_d2 / rho2);
        (psi, grad, hess)
    }
}

impl SphereProfile for HarmonicBumpProfile {
    fn value(&self, z: &[f64]) -> f64 {
        self.radius * (1.0 + self.eps * self.psi(z).0)
    }
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let g = self.psi(z).1 * (self.radius * self.eps);
        out.copy_from_slice(g.as_slice());
    }
    fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        self.psi(z).2 * (self.radius * self.eps)
    }
}

/// `H_f(z) = |z|^2 / f(z/|z|)^2 - 1`, so that `H_f^{-1}(0) = { f(u) u }`.
#[derive(Debug, Clone)]
pub struct StarShaped {
    pub n: usize,
    pub profile: Arc<dyn SphereProfile>,
}

impl Hamiltonian for StarShaped {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn value(&self, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().map(|c| c * c).sum();
        let f = self.profile.value(z);
        r2 / (f * f) - 1.0
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let r2: f64 = z.iter().map(|c| c * c).sum();
        let f = self.profile.value(z);
        self.profile.gradient(z, out);
        let (f2, f3) = (f * f, f * f * f);
        for (o, zi) in out.iter_mut().zip(z) {
            *o = 2.0 * zi / f2 - 2.0 * r2 * *o / f3;
        }
    }

    fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        let dim = z.len();
        let r2: f64 = z.iter().map(|c| c * c).sum();
        let f = self.profile.value(z);
        let mut g = DVector::zeros(dim);
        self.profile.gradient(z, g.as_mut_slice());
        let hf = self.profile.hessian(z);
        let zv = DVector::from_column_slice(z);
        let (f2, f3, f4) = (f * f, f * f * f, f * f * f * f);
        DMatrix::identity(dim, dim) * (2.0 / f2)
            - (&zv * g.transpose() + &g * zv.transpose()) * (4.0 / f3)
            - hf * (2.0 * r2 / f3)
            + &g * g.transpose() * (6.0 * r2 / f4)
    }
}

/// `H(z) = sum_j |z_j|^2 / r_j^2 - 1`; the star-shaped Hamiltonian of an
/// ellipsoid written in closed form.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    pub radii: Vec<f64>,
}

impl Hamiltonian for Ellipsoid {
    fn dim(&self) -> usize {
        2 * self.radii.len()
    }
    fn value(&self, z: &[f64]) -> f64 {
        let n = self.radii.len();
        (0..n)
            .map(|j| (z[j] * z[j] + z[n + j] * z[n + j]) / (self.radii[j] * self.radii[j]))
            .sum::<f64>()
            - 1.0
    }
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let n = self.radii.len();
        for j in 0..n {
            let w = 2.0 / (self.radii[j] * self.radii[j]);
            out[j] = w * z[j];
            out[n + j] = w * z[n + j];
        }
    }
    fn hessian(&self, _z: &[f64]) -> DMatrix<f64> {
        let n = self.radii.len();
        DMatrix::from_fn(2 * n, 2 * n, |i, k| {
            if i == k {
                2.0 / self.radii[i % n].powi(2)
            } else {
                0.0
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Validation

/// Checks the analytic gradient against central differences and the
/// invariance `H o phi = H` at random points of the box `[-radius, radius]^d`.
pub fn validate_system(system: &SymplecticSystem, samples: usize, radius: f64, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = system.dim();
    let h = system.hamiltonian.as_ref();
    for _ in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..radius)).collect();
        let g = h.gradient_vec(&x);
        let fd = fd_gradient(h, &x, 1e-6);
        let err = (&g - &fd).amax();
        if err > 1e-6 * g.amax().max(1.0) {
            return Err(Error::Parameter(format!(
                "{}: gradient disagrees with finite differences ({err:e})",
                system.name
            )));
        }
        let phx = system.symmetry.apply(&x);
        let dv = (h.value(phx.as_slice()) - h.value(&x)).abs();
        if dv > 1e-10 * h.value(&x).abs().max(1.0) {
            return Err(Error::Parameter(format!(
                "{}: Hamiltonian is not invariant under the symmetry ({dv:e})",
                system.name
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Constructors

pub const HENON_HEILES_SADDLE: f64 = 1.0 / 6.0;
/// Default energy for Hill's lunar problem; the small-energy regime is not
/// quantified further.
pub const HILL_DEFAULT_ENERGY: f64 = 0.01;
/// Upper end of the energy range the catalog suggests for Hill's problem.
pub const HILL_SUGGESTED_MAX: f64 = 0.05;

fn complex_planes() -> [(usize, usize); 2] {
    [(0, 1), (2, 3)]
}

pub fn make_henon_heiles() -> CatalogEntry {
    let symmetry = SymmetryAction::rotation_in_planes(4, 3, &[1, 1], &complex_planes())
        .expect("valid rotation");
    let mut system = SymplecticSystem::new(
        "henon-heiles",
        SymplecticStructure::standard(2).expect("n = 2"),
        Arc::new(HenonHeiles),
        symmetry,
    )
    .expect("consistent dimensions");
    system.energy_window = (0.0, HENON_HEILES_SADDLE);
    system.default_energy = 0.125;
    CatalogEntry {
        system,
        recommended_window: (0.0, HENON_HEILES_SADDLE),
        facts: vec![
            fact("convex sphere-like component for 0 < k < 1/6", "Example: Hénon–Heiles Hamiltonian"),
            fact("at least two Z3-symmetric periodic orbits", "Example: Hénon–Heiles Hamiltonian"),
            fact("quotient diffeomorphic to L(3,1)", "Example: Hénon–Heiles Hamiltonian"),
        ],
    }
}

pub fn make_hill_lunar_regularized(energy: f64) -> Result<CatalogEntry> {
    if !(energy > 0.0) {
        return Err(Error::Parameter("Hill's lunar energy must be positive".into()));
    }
    let symmetry = SymmetryAction::rotation_in_planes(4, 4, &[1, 1], &complex_planes())?;
    let mut system = SymplecticSystem::new(
        "hill-lunar",
        SymplecticStructure::standard(2)?,
        Arc::new(HillLunar),
        symmetry,
    )?;
    system.energy_window = (0.0, HILL_SUGGESTED_MAX);
    system.default_energy = energy;
    Ok(CatalogEntry {
        system,
        recommended_window: (0.0, HILL_SUGGESTED_MAX),
        facts: vec![
            fact("convex sphere-like component for small k > 0", "Example: Hill's lunar problem"),
            fact("quotient diffeomorphic to L(4,1)", "Example: Hill's lunar problem"),
        ],
    })
}

/// Torus isometry `q -> A q + s` of finite order, lifted to `T^* T^n`.
#[derive(Debug, Clone)]
pub struct TorusIsometry {
    pub base: DMatrix<f64>,
    pub shift: DVector<f64>,
    pub order: usize,
}

pub fn make_magnetic_torus(j_mag: DMatrix<f64>, isometry: Option<TorusIsometry>) -> Result<CatalogEntry> {
    let n = j_mag.nrows();
    if n < 2 {
        return Err(Error::Parameter("magnetic torus needs n >= 2".into()));
    }
    if j_mag.amax() == 0.0 {
        return Err(Error::Parameter("J_mag must be nonzero".into()));
    }
    let structure = SymplecticStructure::magnetic(j_mag.clone())?;
    let symmetry = match isometry {
        None => SymmetryAction::identity(2 * n),
        Some(iso) => {
            let comm = (&iso.base * &j_mag - &j_mag * &iso.base).amax();
            if comm > 1e-12 * (1.0 + j_mag.amax()) {
                return Err(Error::Parameter(format!(
                    "isometry does not commute with J_mag (defect {comm:e})"
                )));
            }
            SymmetryAction::cotangent_lift(iso.base, iso.shift, iso.order)?
        }
    };
    let mut system = SymplecticSystem::new(
        "magnetic-torus",
        structure,
        Arc::new(MechanicalTorus { n, potential: None }),
        symmetry,
    )?;
    system.stabilizing = StabilizingForm::magnetic(&j_mag)?;
    system.energy_window = (0.0, f64::INFINITY);
    system.default_energy = 0.5;
    Ok(CatalogEntry {
        system,
        recommended_window: (0.0, f64::INFINITY),
        facts: vec![
            fact("displaceable stable Hamiltonian manifold for every k > 0", "Example: Magnetic torus"),
            fact("e0 = 0", "Example after the Tonelli proposition"),
        ],
    })
}

/// `H = 1/2 |p|^2 + V(q)` on `(T^* T^n, dp ^ dq)`.
pub fn make_mechanical_torus(n: usize, potential: Arc<dyn TorusPotential>) -> Result<CatalogEntry> {
    let structure = SymplecticStructure::magnetic(DMatrix::zeros(n, n))?;
    let mut system = SymplecticSystem::new(
        "mechanical-torus",
        structure,
        Arc::new(MechanicalTorus { n, potential: Some(potential) }),
        SymmetryAction::identity(2 * n),
    )?;
    system.default_energy = 1.0;
    Ok(CatalogEntry { system, recommended_window: (f64::NEG_INFINITY, f64::INFINITY), facts: vec![] })
}

pub fn make_star_shaped(
    n: usize,
    profile: Arc<dyn SphereProfile>,
    m: usize,
    exponents: &[i64],
) -> Result<CatalogEntry> {
    if n < 2 {
        return Err(Error::Parameter("star-shaped systems need n >= 2".into()));
    }
    let symmetry = SymmetryAction::complex_rotation(n, m, exponents)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..200 {
        let z: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = profile.value(&z);
        if !(f > 1e-3) {
            return Err(Error::Parameter(format!("profile not bounded away from zero ({f})")));
        }
        let fz = profile.value(symmetry.apply(&z).as_slice());
        if (fz - f).abs() > 1e-10 * f.abs().max(1.0) {
            return Err(Error::Parameter("profile is not invariant under the rotation".into()));
        }
    }
    let mut system = SymplecticSystem::new(
        "star-shaped",
        SymplecticStructure::standard(n)?,
        Arc::new(StarShaped { n, profile }),
        symmetry,
    )?;
    system.default_energy = 0.0;
    Ok(CatalogEntry {
        system,
        recommended_window: (-0.5, 0.5),
        facts: vec![
            fact("X_H restricted to the level 0 is the Reeb field", "Example: Star-shaped hypersurfaces"),
            fact("round sphere of radius r: Reeb periods in pi r^2 Z", "Proposition: displacement energy is a capacity"),
        ],
    })
}

/// The round sphere of radius `r` in `C^n`.
pub fn make_sphere(n: usize, r: f64, m: usize, exponents: &[i64]) -> Result<CatalogEntry> {
    if !(r > 0.0) {
        return Err(Error::Parameter("radius must be positive".into()));
    }
    let mut e = make_star_shaped(n, Arc::new(ConstantProfile(r)), m, exponents)?;
    e.system.name = "sphere".into();
    Ok(e)
}

pub fn make_ellipsoid(radii: &[f64], m: usize, exponents: &[i64]) -> Result<CatalogEntry> {
    let n = radii.len();
    if n < 2 || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Parameter("ellipsoid needs n >= 2 positive radii".into()));
    }
    let symmetry = SymmetryAction::complex_rotation(n, m, exponents)?;
    let mut system = SymplecticSystem::new(
        "ellipsoid",
        SymplecticStructure::standard(n)?,
        Arc::new(Ellipsoid { radii: radii.to_vec() }),
        symmetry,
    )?;
    system.default_energy = 0.0;
    Ok(CatalogEntry { system, recommended_window: (-0.5, 0.5), facts: vec![] })
}

/// A named catalog row without a Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogStub {
    pub name: String,
    pub note: String,
}

pub fn stark_zeeman_stub() -> CatalogStub {
    CatalogStub {
        name: "stark-zeeman".into(),
        note: "Moser-regularized levels below the first critical value are S*S^n; no Hamiltonian available".into(),
    }
}

/// One line of `systems list`.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogRow {
    pub name: String,
    pub dimension: Option<usize>,
    pub symmetry_order: Option<usize>,
    pub energy_window: Option<(f64, f64)>,
    pub citations: Vec<String>,
}

pub fn list_systems(filter: &str) -> Vec<CatalogRow> {
    let mut rows = Vec::new();
    let entries = [
        make_henon_heiles(),
        make_hill_lunar_regularized(HILL_DEFAULT_ENERGY).expect("default energy"),
        make_magnetic_torus(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]), None).expect("default torus"),
        {
            let mut e = make_star_shaped(2, Arc::new(ConstantProfile(1.0)), 2, &[1, 1]).expect("unit sphere");
            e.system.name = "star-shaped".into();
            e
        },
    ];
    for e in entries {
        rows.push(CatalogRow {
            name: e.system.name.clone(),
            dimension: Some(e.system.dim()),
            symmetry_order: Some(e.system.symmetry.order()),
            energy_window: Some(e.recommended_window),
            citations: {
                let mut c: Vec<String> = Vec::new();
                for f in &e.facts {
                    if !c.contains(&f.citation) {
                        c.push(f.citation.clone());
                    }
                }
                c
            },
        });
    }
    let stub = stark_zeeman_stub();
    rows.push(CatalogRow {
        name: stub.name,
        dimension: None,
        symmetry_order: None,
        energy_window: None,
        citations: vec!["Example: Stark–Zeeman systems".into()],
    });
    rows.retain(|r| filter.is_empty() || r.name.contains(filter));
    rows
}
