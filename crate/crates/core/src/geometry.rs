//! Symplectic structures, primitives, Hamiltonian vector fields and
//! finite-order symmetries.
//!
//! Phase-space points are stored as `(x_1..x_n, y_1..y_n)` on `R^{2n}` and as
//! `(q_1..q_n, p_1..p_n)` on the magnetic cotangent bundle of the torus. In both
//! cases the symplectic form is `omega(u, v) = u^T Omega v` with
//!
//! ```text
//! Omega = [[B, -I], [I, 0]]
//! ```
//!
//! where `B = 0` for the standard structure and `B = J_mag` for the magnetic one.
//! Hamiltonian vector fields satisfy `i_{X_H} omega = -dH`, i.e.
//! `X_H = Omega^{-1} grad H`. For `H = |z|^2 / r^2` this gives the flow
//! `z -> exp(-2 i t / r^2) z`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Tolerance used when validating antisymmetry and commutation relations.
const STRUCTURE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum StructureKind {
    /// `omega = d lambda` with `lambda = 1/2 sum (y_j dx_j - x_j dy_j)`.
    ExactStandard,
    /// `omega = dp ^ dq + pi^* rho` with `rho(u, v) = <u, J_mag v>` on `T^*T^n`,
    /// primitive `p dq + 1/2 <q, J_mag dq>`.
    MagneticCotangent { j_mag: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticStructure {
    n: usize,
    kind: StructureKind,
    omega: DMatrix<f64>,
    omega_inv: DMatrix<f64>,
}

impl SymplecticStructure {
    pub fn standard(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("phase space needs n >= 1".into()));
        }
        Ok(Self::assemble(n, StructureKind::ExactStandard))
    }

    /// Magnetic cotangent bundle of `T^n`. A zero matrix gives the plain
    /// cotangent structure `dp ^ dq`.
    pub fn magnetic(j_mag: DMatrix<f64>) -> Result<Self> {
        let n = j_mag.nrows();
        if n == 0 || j_mag.ncols() != n {
            return Err(Error::Parameter("J_mag must be a non-empty square matrix".into()));
        }
        let defect = (&j_mag + j_mag.transpose()).amax();
        if defect > STRUCTURE_EPS * (1.0 + j_mag.amax()) {
            return Err(Error::Parameter(format!(
                "J_mag is not antisymmetric (defect {defect:e})"
            )));
        }
        Ok(Self::assemble(n, StructureKind::MagneticCotangent { j_mag }))
    }

    fn assemble(n: usize, kind: StructureKind) -> Self {
        let dim = 2 * n;
        let mut omega = DMatrix::zeros(dim, dim);
        let mut omega_inv = DMatrix::zeros(dim, dim);
        for i in 0..n {
            omega[(i, n + i)] = -1.0;
            omega[(n + i, i)] = 1.0;
            omega_inv[(i, n + i)] = 1.0;
            omega_inv[(n + i, i)] = -1.0;
        }
        if let StructureKind::MagneticCotangent { j_mag } = &kind {
            omega.view_mut((0, 0), (n, n)).copy_from(j_mag);
            omega_inv.view_mut((n, n), (n, n)).copy_from(j_mag);
        }
        Self { n, kind, omega, omega_inv }
    }

    /// Half dimension `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn kind(&self) -> &StructureKind {
        &self.kind
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.kind, StructureKind::MagneticCotangent { .. })
    }

    /// The constant matrix `Omega` with `omega(u, v) = u^T Omega v`.
    pub fn omega_matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn omega_inverse(&self) -> &DMatrix<f64> {
        &self.omega_inv
    }

    pub fn j_mag(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            StructureKind::MagneticCotangent { j_mag } => Some(j_mag),
            StructureKind::ExactStandard => None,
        }
    }

    pub fn omega_eval(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), u.len())?;
        check_dim(self.dim(), v.len())?;
        Ok(self.omega_raw(u, v))
    }

    pub(crate) fn omega_raw(&self, u: &[f64], v: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                let w = self.omega[(i, j)];
                if w != 0.0 {
                    row += w * v[j];
                }
            }
            acc += u[i] * row;
        }
        acc
    }

    /// The primitive one-form at `x` applied to `v`.
    pub fn primitive_eval(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), v.len())?;
        Ok(self.primitive_raw(x, v))
    }

    pub(crate) fn primitive_raw(&self, x: &[f64], v: &[f64]) -> f64 {
        let n = self.n;
        match &self.kind {
            StructureKind::ExactStandard => {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += x[n + j] * v[j] - x[j] * v[n + j];
                }
                0.5 * acc
            }
            StructureKind::MagneticCotangent { j_mag } => {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += x[n + i] * v[i];
                    let mut jv = 0.0;
                    for k in 0..n {
                        jv += j_mag[(i, k)] * v[k];
                    }
                    acc += 0.5 * x[i] * jv;
                }
                acc
            }
        }
    }

    /// Matrix `P` with `primitive_x(v) = x^T P v`; both primitives are quadratic.
    pub fn primitive_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut p = DMatrix::zeros(2 * n, 2 * n);
        match &self.kind {
            StructureKind::ExactStandard => {
                for j in 0..n {
                    p[(n + j, j)] = 0.5;
                    p[(j, n + j)] = -0.5;
                }
            }
            StructureKind::MagneticCotangent { j_mag } => {
                for i in 0..n {
                    p[(n + i, i)] = 1.0;
                }
                p.view_mut((0, 0), (n, n)).copy_from(&(j_mag * 0.5));
            }
        }
        p
    }

    /// The Liouville field `X = x / 2` of the standard primitive.
    pub fn liouville_field_eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        match self.kind {
            StructureKind::ExactStandard => Ok(DVector::from_iterator(
                x.len(),
                x.iter().map(|c| 0.5 * c),
            )),
            StructureKind::MagneticCotangent { .. } => Err(Error::UnsupportedStructure(
                "the radial Liouville field exists only on the standard structure".into(),
            )),
        }
    }

    /// `a - b`, with the torus components reduced to the nearest integer lift.
    pub fn difference(&self, a: &[f64], b: &[f64]) -> DVector<f64> {
        let mut d = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
        if self.is_torus() {
            for i in 0..self.n {
                d[i] -= d[i].round();
            }
        }
        d
    }

    /// Integer winding of `a - b` in the torus directions (empty otherwise).
    pub fn winding(&self, a: &[f64], b: &[f64]) -> Vec<i64> {
        if !self.is_torus() {
            return Vec::new();
        }
        (0..self.n).map(|i| (a[i] - b[i]).round() as i64).collect()
    }
}

/// A smooth Hamiltonian with analytic first and second derivatives.
pub trait Hamiltonian: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;

    fn gradient_vec(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        self.gradient(x, g.as_mut_slice());
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymmetryKind {
    Identity,
    /// Rotation by `exp(2 pi i k_j / m)` in each listed coordinate plane
    /// `(re, im)`.
    ComplexRotation { exponents: Vec<i64>, planes: Vec<(usize, usize)> },
    /// Cotangent lift of the torus isometry `q -> A q + s`.
    CotangentLift { base: DMatrix<f64>, shift: DVector<f64> },
}

/// A finite-order affine symplectomorphism `x -> L x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryAction {
    order: usize,
    kind: SymmetryKind,
    linear: DMatrix<f64>,
    offset: DVector<f64>,
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub(crate) fn gcd_usize(a: usize, b: usize) -> usize {
    gcd(a as i64, b as i64) as usize
}

impl SymmetryAction {
    pub fn identity(dim: usize) -> Self {
        Self {
            order: 1,
            kind: SymmetryKind::Identity,
            linear: DMatrix::identity(dim, dim),
            offset: DVector::zeros(dim),
        }
    }

    /// Rotation of `C^n` with the default planes `(x_j, y_j)`.
    pub fn complex_rotation(n: usize, order: usize, exponents: &[i64]) -> Result<Self> {
        let planes: Vec<_> = (0..n).map(|j| (j, n + j)).collect();
        Self::rotation_in_planes(2 * n, order, exponents, &planes)
    }

    /// Rotation in arbitrary disjoint coordinate planes; each plane is treated
    /// as one complex coordinate `re + i im`.
    pub fn rotation_in_planes(
        dim: usize,
        order: usize,
        exponents: &[i64],
        planes: &[(usize, usize)],
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::Parameter("symmetry order must be positive".into()));
        }
        if exponents.len() != planes.len() {
            return Err(Error::Parameter("one exponent per rotation plane required".into()));
        }
        for &k in exponents {
            if gcd(k, order as i64) != 1 {
                return Err(Error::Parameter(format!(
                    "exponent {k} is not coprime to the order {order}"
                )));
            }
        }
        let mut used = vec![false; dim];
        for &(a, b) in planes {
            if a >= dim || b >= dim || a == b || used[a] || used[b] {
                return Err(Error::Parameter("rotation planes must be disjoint and in range".into()));
            }
            used[a] = true;
            used[b] = true;
        }
        let mut linear = DMatrix::identity(dim, dim);
        for (&k, &(a, b)) in exponents.iter().zip(planes) {
            let theta = 2.0 * std::f64::consts::PI * (k as f64) / (order as f64);
            let (s, c) = theta.sin_cos();
            linear[(a, a)] = c;
            linear[(a, b)] = -s;
            linear[(b, a)] = s;
            linear[(b, b)] = c;
        }
        Ok(Self {
            order,
            kind: SymmetryKind::ComplexRotation {
                exponents: exponents.to_vec(),
                planes: planes.to_vec(),
            },
            linear,
            offset: DVector::zeros(dim),
        })
    }

    /// Cotangent lift `(q, p) -> (A q + s, A p)` of an orthogonal torus isometry
    /// (for orthogonal `A`, `(A^{-1})^T = A`).
    pub fn cotangent_lift(base: DMatrix<f64>, shift: DVector<f64>, order: usize) -> Result<Self> {
        let n = base.nrows();
        if base.ncols() != n || shift.len() != n || order == 0 {
            return Err(Error::Parameter("cotangent lift needs square base, matching shift and order > 0".into()));
        }
        let orth = (base.transpose() * &base - DMatrix::identity(n, n)).amax();
        if orth > 1e-10 {
            return Err(Error::Parameter(format!("base map is not an isometry (defect {orth:e})")));
        }
        // A must preserve the integer lattice
        if base.iter().any(|a| (a - a.round()).abs() > 1e-10) {
            return Err(Error::Parameter("base map must preserve the integer lattice".into()));
        }
        let dim = 2 * n;
        let mut linear = DMatrix::zeros(dim, dim);
        linear.view_mut((0, 0), (n, n)).copy_from(&base);
        linear.view_mut((n, n), (n, n)).copy_from(&base);
        let mut offset = DVector::zeros(dim);
        offset.rows_mut(0, n).copy_from(&shift);
        let action = Self {
            order,
            kind: SymmetryKind::CotangentLift { base, shift },
            linear,
            offset,
        };
        // the order must close up modulo the lattice
        let x = DVector::from_fn(dim, |i, _| 0.1 + 0.37 * i as f64);
        let mut back = x.clone();
        for _ in 0..order {
            back = action.apply(back.as_slice());
        }
        let mut defect: f64 = 0.0;
        for i in 0..dim {
            let mut d = back[i] - x[i];
            if i < n {
                d -= d.round();
            }
            defect = defect.max(d.abs());
        }
        if defect > 1e-10 {
            return Err(Error::Parameter(format!(
                "cotangent lift does not have order {order} (defect {defect:e})"
            )));
        }
        Ok(action)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn kind(&self) -> &SymmetryKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, x: &[f64]) -> DVector<f64> {
        &self.linear * DVector::from_column_slice(x) + &self.offset
    }

    /// `phi^j(x)`; negative powers are reduced modulo the order.
    pub fn apply_power(&self, j: i64, x: &[f64]) -> DVector<f64> {
        let (l, c) = self.power(j);
        l * DVector::from_column_slice(x) + c
    }

    /// Linear part and offset of `phi^j`.
    pub fn power(&self, j: i64) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.order as i64;
        let j = j.rem_euclid(m.max(1)) as usize;
        let dim = self.dim();
        let mut l = DMatrix::identity(dim, dim);
        let mut c = DVector::zeros(dim);
        for _ in 0..j {
            c = &self.linear * c + &self.offset;
            l = &self.linear * l;
        }
        (l, c)
    }

    /// The (constant) differential `D phi`.
    pub fn differential(&self) -> &DMatrix<f64> {
        &self.linear
    }
}

/// The stabilizing one-form used to convert X_H-time into Reeb time.
#[derive(Debug, Clone, PartialEq)]
pub enum StabilizingForm {
    /// The structure's own primitive.
    Primitive,
    /// `lambda = <pr_perp p, dq> + 1/2 <pr_par p, A pr_par dp>` with
    /// `A = (J|_{im J})^{-1}`.
    Magnetic { perp: DMatrix<f64>, par: DMatrix<f64>, a_inv: DMatrix<f64> },
}

impl StabilizingForm {
    pub fn magnetic(j_mag: &DMatrix<f64>) -> Result<Self> {
        let n = j_mag.nrows();
        let svd = j_mag.clone().svd(true, true);
        let tol = 1e-12 * (1.0 + j_mag.amax());
        let u = svd.u.as_ref().expect("u");
        let mut par = DMatrix::zeros(n, n);
        for (k, s) in svd.singular_values.iter().enumerate() {
            if *s > tol {
                let col = u.column(k);
                par += &col * col.transpose();
            }
        }
        let perp = DMatrix::identity(n, n) - &par;
        let a_inv = j_mag
            .clone()
            .pseudo_inverse(tol)
            .map_err(|e| Error::Parameter(e.to_string()))?;
        Ok(Self::Magnetic { perp, par, a_inv })
    }
}

/// A Hamiltonian system on one of the two supported structures together with
/// its symmetry.
#[derive(Debug, Clone)]
pub struct SymplecticSystem {
    pub name: String,
    pub structure: SymplecticStructure,
    pub hamiltonian: Arc<dyn Hamiltonian>,
    pub symmetry: SymmetryAction,
    pub stabilizing: StabilizingForm,
    /// Energy window in which the catalog vouches for the level set.
    pub energy_window: (f64, f64),
    pub default_energy: f64,
}

impl SymplecticSystem {
    pub fn new(
        name: impl Into<String>,
        structure: SymplecticStructure,
        hamiltonian: Arc<dyn Hamiltonian>,
        symmetry: SymmetryAction,
    ) -> Result<Self> {
        check_dim(structure.dim(), hamiltonian.dim())?;
        check_dim(structure.dim(), symmetry.dim())?;
        Ok(Self {
            name: name.into(),
            structure,
            hamiltonian,
            symmetry,
            stabilizing: StabilizingForm::Primitive,
            energy_window: (f64::NEG_INFINITY, f64::INFINITY),
            default_energy: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.structure.dim()
    }

    pub fn energy(&self, x: &[f64]) -> f64 {
        self.hamiltonian.value(x)
    }

    /// `X_H = Omega^{-1} grad H`, written into `out`.
    pub fn vector_field_into(&self, x: &[f64], grad: &mut [f64], out: &mut [f64]) {
        self.hamiltonian.gradient(x, grad);
        let n = self.structure.n();
        // Omega^{-1} = [[0, I], [-I, B]]
        for i in 0..n {
            out[i] = grad[n + i];
        }
        match self.structure.j_mag() {
            None => {
                for i in 0..n {
                    out[n + i] = -grad[i];
                }
            }
            Some(b) => {
                for i in 0..n {
                    let mut acc = -grad[i];
                    for k in 0..n {
                        acc += b[(i, k)] * grad[n + k];
                    }
                    out[n + i] = acc;
                }
            }
        }
    }

    pub fn ham_vector_field(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut g = vec![0.0; self.dim()];
        let mut out = DVector::zeros(self.dim());
        self.vector_field_into(x, &mut g, out.as_mut_slice());
        Ok(out)
    }

    /// Jacobian of `X_H`, i.e. `Omega^{-1} Hess H`.
    pub fn vector_field_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        self.structure.omega_inverse() * self.hamiltonian.hessian(x)
    }

    /// The stabilizing form at `x` applied to `v`.
    pub fn stabilizing_eval(&self, x: &[f64], v: &[f64]) -> f64 {
        match &self.stabilizing {
            StabilizingForm::Primitive => self.structure.primitive_raw(x, v),
            StabilizingForm::Magnetic { perp, par, a_inv } => {
                let n = self.structure.n();
                let p = DVector::from_column_slice(&x[n..]);
                let dq = DVector::from_column_slice(&v[..n]);
                let dp = DVector::from_column_slice(&v[n..]);
                let pp = par * &p;
                (perp * &p).dot(&dq) + 0.5 * pp.dot(&(a_inv * (par * dp)))
            }
        }
    }
}

/// Central finite-difference gradient; test oracle only.
pub fn fd_gradient(h: &dyn Hamiltonian, x: &[f64], step: f64) -> DVector<f64> {
    let mut xp = x.to_vec();
    DVector::from_fn(x.len(), |i, _| {
        let xi = xp[i];
        xp[i] = xi + step;
        let fp = h.value(&xp);
        xp[i] = xi - step;
        let fm = h.value(&xp);
        xp[i] = xi;
        (fp - fm) / (2.0 * step)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rot90() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
    }

    #[test]
    fn standard_omega_sign() {
        let s = SymplecticStructure::standard(1).unwrap();
        assert_eq!(s.omega_eval(&[0.3, 0.2], &[1.0, 0.0], &[0.0, 1.0]).unwrap(), -1.0);
        assert_eq!(s.omega_eval(&[0.3, 0.2], &[0.4, 0.1], &[0.4, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn magnetic_omega_on_q_plane() {
        let s = SymplecticStructure::magnetic(rot90()).unwrap();
        let x = [0.0, 0.0, 0.3, -0.2];
        let v = s.omega_eval(&x, &[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, -1.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = SymplecticStructure::standard(2).unwrap();
        assert!(matches!(
            s.omega_eval(&[0.0; 4], &[0.0; 3], &[0.0; 4]),
            Err(Error::DimensionMismatch { expected: 4, got: 3 })
        ));
        assert!(s.primitive_eval(&[0.0; 2], &[0.0; 4]).is_err());
    }

    #[test]
    fn non_antisymmetric_jmag_rejected() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(SymplecticStructure::magnetic(j).is_err());
    }

    #[test]
    fn primitive_examples() {
        let s = SymplecticStructure::standard(1).unwrap();
        assert_eq!(s.primitive_eval(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(s.primitive_eval(&[0.0, 0.0], &[0.7, -0.3]).unwrap(), 0.0);
        let m = SymplecticStructure::magnetic(rot90()).unwrap();
        let v = m.primitive_eval(&[0.0, 0.0, 1.0, 0.0], &[1.0, 0.0, 5.0, -2.0]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn primitive_matrix_matches_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in [
            SymplecticStructure::standard(2).unwrap(),
            SymplecticStructure::magnetic(rot90()).unwrap(),
        ] {
            let p = s.primitive_matrix();
            for _ in 0..20 {
                let x = rand_vec(&mut rng, 4);
                let v = rand_vec(&mut rng, 4);
                let quad = DVector::from_vec(x.clone()).dot(&(&p * DVector::from_vec(v.clone())));
                assert_relative_eq!(quad, s.primitive_raw(&x, &v), epsilon = 1e-14);
            }
        }
    }

    /// d lambda (u, v) = u(lambda(v)) - v(lambda(u)) for constant fields u, v.
    fn fd_curl(s: &SymplecticStructure, x: &[f64], u: &[f64], v: &[f64]) -> f64 {
        let h = 1e-6;
        let shifted = |dir: &[f64], sgn: f64| -> Vec<f64> {
            x.iter().zip(dir).map(|(a, d)| a + sgn * h * d).collect()
        };
        let du_lv = (s.primitive_raw(&shifted(u, 1.0), v) - s.primitive_raw(&shifted(u, -1.0), v)) / (2.0 * h);
        let dv_lu = (s.primitive_raw(&shifted(v, 1.0), u) - s.primitive_raw(&shifted(v, -1.0), u)) / (2.0 * h);
        du_lv - dv_lu
    }

    #[test]
    fn primitive_is_exact_and_omega_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let j3 = DMatrix::from_row_slice(3, 3, &[0.0, -0.7, 0.2, 0.7, 0.0, -1.1, -0.2, 1.1, 0.0]);
        let structures = [
            SymplecticStructure::standard(2).unwrap(),
            SymplecticStructure::standard(3).unwrap(),
            SymplecticStructure::magnetic(rot90()).unwrap(),
            SymplecticStructure::magnetic(j3).unwrap(),
        ];
        for s in &structures {
            for _ in 0..250 {
                let x = rand_vec(&mut rng, s.dim());
                let u = rand_vec(&mut rng, s.dim());
                let v = rand_vec(&mut rng, s.dim());
                let w = s.omega_eval(&x, &u, &v).unwrap();
                assert_relative_eq!(w, -s.omega_eval(&x, &v, &u).unwrap(), epsilon = 1e-14);
                let curl = fd_curl(s, &x, &u, &v);
                assert!((curl - w).abs() <= 1e-6 * w.abs().max(1.0), "{curl} vs {w}");
            }
        }
    }

    #[test]
    fn liouville_field() {
        let s = SymplecticStructure::standard(2).unwrap();
        assert_eq!(s.liouville_field_eval(&[0.0; 4]).unwrap(), DVector::zeros(4));
        assert_eq!(
            s.liouville_field_eval(&[2.0, 0.0, 0.0, 0.0]).unwrap(),
            DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0])
        );
        let m = SymplecticStructure::magnetic(rot90()).unwrap();
        assert!(matches!(m.liouville_field_eval(&[0.0; 4]), Err(Error::UnsupportedStructure(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = rand_vec(&mut rng, 4);
            let v = rand_vec(&mut rng, 4);
            let lx = s.liouville_field_eval(&x).unwrap();
            let lhs = s.primitive_eval(&x, &v).unwrap();
            let rhs = s.omega_eval(&x, lx.as_slice(), &v).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10);
        }
    }

    #[test]
    fn rotation_validation_and_examples() {
        assert!(SymmetryAction::complex_rotation(2, 4, &[1, 2]).is_err());
        let phi = SymmetryAction::complex_rotation(2, 2, &[1, 1]).unwrap();
        let y = phi.apply(&[1.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(y[0], -1.0, epsilon = 1e-15);
        assert!(y[1].abs() < 1e-15 && y[2].abs() < 1e-15);
        let id = SymmetryAction::identity(4);
        assert_eq!(id.apply(&[0.1, 0.2, 0.3, 0.4]).as_slice(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn shift_lift_example() {
        let lift = SymmetryAction::cotangent_lift(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0 / 3.0, 1.0 / 3.0]),
            3,
        )
        .unwrap();
        let y = lift.apply(&[0.1, 0.2, 0.5, -0.5]);
        assert_relative_eq!(y[0], 0.1 + 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(y[3], -0.5);
        assert!(SymmetryAction::cotangent_lift(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![0.3, 0.0]),
            3
        )
        .is_err());
    }

    #[test]
    fn symmetry_order_and_symplecticity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let std2 = SymplecticStructure::standard(2).unwrap();
        let mag = SymplecticStructure::magnetic(rot90()).unwrap();
        let cases = vec![
            (std2.clone(), SymmetryAction::complex_rotation(2, 5, &[1, 3]).unwrap()),
            (
                std2.clone(),
                SymmetryAction::rotation_in_planes(4, 3, &[1, 1], &[(0, 1), (2, 3)]).unwrap(),
            ),
            (
                mag.clone(),
                SymmetryAction::cotangent_lift(rot90(), DVector::from_vec(vec![0.5, 0.5]), 4).unwrap(),
            ),
        ];
        for (s, phi) in cases {
            let l = phi.differential();
            let defect = (l.transpose() * s.omega_matrix() * l - s.omega_matrix()).amax();
            assert!(defect <= 1e-10, "symplectic defect {defect}");
            for _ in 0..20 {
                let x = rand_vec(&mut rng, 4);
                let mut y = x.clone();
                for _ in 0..phi.order() {
                    y = phi.apply(&y).as_slice().to_vec();
                }
                assert!(s.difference(&y, &x).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn lift_commutes_with_jmag() {
        if let SymmetryKind::CotangentLift { base, .. } =
            SymmetryAction::cotangent_lift(rot90(), DVector::zeros(2), 4).unwrap().kind()
        {
            let j = rot90();
            assert!((base * &j - &j * base).amax() < 1e-15);
        }
    }

    #[test]
    fn magnetic_stabilizing_form_example() {
        let form = StabilizingForm::magnetic(&rot90()).unwrap();
        if let StabilizingForm::Magnetic { a_inv, par, .. } = &form {
            let p = DVector::from_vec(vec![1.0, 0.0]);
            let v = DVector::from_vec(vec![0.0, 1.0]);
            assert_relative_eq!(0.5 * (par * &p).dot(&(a_inv * (par * v))), 0.5, epsilon = 1e-14);
        }
    }
}
