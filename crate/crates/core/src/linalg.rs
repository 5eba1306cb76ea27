//! Dense complex matrices, density matrices and superoperators, together with
//! the trace norm, the cone gauge `m(A, B)` and the projective distance on
//! the state space.
//!
//! Eigenvalue and singular-value work is delegated to `nalgebra`; everything
//! else is plain row-major arithmetic so that superoperator composition is a
//! matrix product with a fixed, reproducible basis ordering.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{input, Error, Result};
use crate::tol;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Square complex matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self { dim, data: vec![ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from row-major entries; fails on non-square input or
    /// non-finite values.
    pub fn from_row_major(dim: usize, data: Vec<C64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return input(format!("expected {} entries for a {dim}x{dim} matrix, got {}", dim * dim, data.len()));
        }
        let m = Self { dim, data };
        if !m.is_finite() {
            return input("matrix has non-finite entries");
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Structure("matrix rows must form a square array".into()));
        }
        Self::from_row_major(dim, rows.concat())
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows.iter().map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect()).collect();
        Self::from_rows(&rows)
    }

    pub fn diagonal_from(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    /// `|v⟩⟨v|` (not normalized).
    pub fn outer(v: &[C64]) -> Self {
        Self::from_fn(v.len(), |i, j| v[i] * v[j].conj())
    }

    /// `|e_k⟩⟨e_l|`.
    pub fn unit(dim: usize, k: usize, l: usize) -> Self {
        let mut m = Self::zeros(dim);
        m[(k, l)] = ONE;
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn conj(&self) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_c(&self, s: C64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn add_assign_scaled(&mut self, other: &Self, s: f64) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    /// `V X V†` with `self = V`.
    pub fn sandwich(&self, x: &Self) -> Self {
        &(self * x) * &self.adjoint()
    }

    /// `V† X V` with `self = V`.
    pub fn dual_sandwich(&self, x: &Self) -> Self {
        &(&self.adjoint() * x) * self
    }

    /// Hilbert–Schmidt inner product `tr(A† B)`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    /// `tr(A B)`, computed without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        let d = self.dim;
        let mut acc = ZERO;
        for i in 0..d {
            for j in 0..d {
                acc += self.data[i * d + j] * other.data[j * d + i];
            }
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Largest entry of `|M − M†|`.
    pub fn hermitian_deviation(&self) -> f64 {
        let d = self.dim;
        let mut dev: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.dim, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.dim).map(|i| self[(i, i)]).collect()
    }

    pub fn diagonal_re(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self[(i, i)].re).collect()
    }

    /// Keeps only the diagonal (the dephasing map `D`).
    pub fn dephased(&self) -> Self {
        let mut m = Self::zeros(self.dim);
        for i in 0..self.dim {
            m[(i, i)] = self[(i, i)];
        }
        m
    }

    /// True when every off-diagonal entry is below `tol` in modulus.
    pub fn is_diagonal(&self, tol: f64) -> bool {
        let d = self.dim;
        (0..d).all(|i| (0..d).all(|j| i == j || self[(i, j)].norm() <= tol))
    }

    pub fn kron(&self, other: &Self) -> Self {
        let (n, m) = (self.dim, other.dim);
        let mut out = Self::zeros(n * m);
        for i in 0..n {
            for j in 0..n {
                let a = self[(i, j)];
                if a == ZERO {
                    continue;
                }
                for k in 0..m {
                    for l in 0..m {
                        out[(i * m + k, j * m + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.dim).map(|i| self[(i, j)]).collect()
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        let d = self.dim;
        (0..d).map(|i| (0..d).map(|j| self.data[i * d + j] * v[j]).sum()).collect()
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        let d = m.nrows();
        Self::from_fn(d, |i, j| m[(i, j)])
    }

    /// Eigen-decomposition of the Hermitian part: ascending eigenvalues and
    /// the matching orthonormal eigenvectors as columns.
    pub fn eigh(&self) -> (Vec<f64>, ComplexMatrix) {
        let eig = self.hermitian_part().to_nalgebra().symmetric_eigen();
        let mut order: Vec<usize> = (0..self.dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = Self::from_fn(self.dim, |i, j| eig.eigenvectors[(i, order[j])]);
        (values, vectors)
    }

    /// Ascending eigenvalues of the Hermitian part.
    pub fn eigenvalues_hermitian(&self) -> Vec<f64> {
        if self.dim == 1 {
            return vec![self.data[0].re];
        }
        if self.dim == 2 {
            // closed form keeps hot loops allocation-light
            let a = self.data[0].re;
            let c = self.data[3].re;
            let b = (self.data[1] + self.data[2].conj()) * 0.5;
            let mean = 0.5 * (a + c);
            let r = (0.25 * (a - c) * (a - c) + b.norm_sqr()).sqrt();
            return vec![mean - r, mean + r];
        }
        let mut v: Vec<f64> = self.hermitian_part().to_nalgebra().symmetric_eigenvalues().iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues_hermitian()[0]
    }

    pub fn singular_values(&self) -> Vec<f64> {
        self.to_nalgebra().singular_values().iter().copied().collect()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in product");
        let d = self.dim;
        let mut out = vec![ZERO; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == ZERO {
                    continue;
                }
                let row = &rhs.data[k * d..(k + 1) * d];
                let dst = &mut out[i * d..(i + 1) * d];
                for (o, b) in dst.iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        ComplexMatrix { dim: d, data: out }
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in sum");
        ComplexMatrix { dim: self.dim, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in difference");
        ComplexMatrix { dim: self.dim, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

/// Positive semidefinite, unit-trace matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    /// Validates Hermiticity, trace and positivity within the default tolerances.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if !m.is_finite() {
            return input("state has non-finite entries");
        }
        let herm = m.hermitian_deviation();
        if herm > tol::HERM {
            return input(format!("state is not Hermitian (deviation {herm:.3e})"));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > tol::TRACE || tr.im.abs() > tol::TRACE {
            return input(format!("state trace {tr} differs from 1"));
        }
        let min = m.min_eigenvalue();
        if min < -tol::PSD {
            return input(format!("state is not positive semidefinite (min eigenvalue {min:.3e})"));
        }
        Ok(Self(m.hermitian_part()))
    }

    /// Normalizes a positive semidefinite matrix of positive trace without
    /// re-checking positivity.
    pub(crate) fn normalized_unchecked(m: ComplexMatrix) -> Self {
        let tr = m.trace().re;
        Self(m.hermitian_part().scale(1.0 / tr))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim).scale(1.0 / dim as f64))
    }

    /// `ρ^{(i)} = |e_i⟩⟨e_i|` (zero-based index).
    pub fn basis(dim: usize, i: usize) -> Self {
        Self(ComplexMatrix::unit(dim, i, i))
    }

    pub fn diagonal(populations: &[f64]) -> Result<Self> {
        Self::new(ComplexMatrix::diagonal_from(populations))
    }

    pub fn pure(v: &[C64]) -> Result<Self> {
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return input("pure state vector must be nonzero and finite");
        }
        let u: Vec<C64> = v.iter().map(|z| z / norm).collect();
        Ok(Self(ComplexMatrix::outer(&u)))
    }

    /// Haar-distributed pure state.
    pub fn haar_pure<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let v = haar_vector(dim, rng);
        Self(ComplexMatrix::outer(&v))
    }

    /// Full-rank-almost-surely mixed state `G G† / tr(G G†)` with Ginibre `G`.
    pub fn random_mixed<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let g = ComplexMatrix::from_fn(dim, |_, _| gaussian_c64(rng));
        let m = &g * &g.adjoint();
        Self::normalized_unchecked(m)
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn populations(&self) -> Vec<f64> {
        self.0.diagonal_re().into_iter().map(|x| x.max(0.0)).collect()
    }
}

pub(crate) fn gaussian_c64<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im)
}

/// Uniform unit vector in `C^dim`.
pub fn haar_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<C64> {
    loop {
        let v: Vec<C64> = (0..dim).map(|_| gaussian_c64(rng)).collect();
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-300 {
            return v.into_iter().map(|z| z / n).collect();
        }
    }
}

/// Linear map on `d x d` matrices, stored as a `d² x d²` matrix acting on
/// row-major vectorizations (basis `E_ij` ordered `i*d + j`).
#[derive(Clone, Debug, PartialEq)]
pub struct SuperOperator {
    dim: usize,
    matrix: ComplexMatrix,
}

impl SuperOperator {
    pub fn identity(dim: usize) -> Self {
        Self { dim, matrix: ComplexMatrix::identity(dim * dim) }
    }

    pub fn from_matrix(dim: usize, matrix: ComplexMatrix) -> Result<Self> {
        if matrix.dim() != dim * dim {
            return Err(Error::Structure(format!("superoperator on {dim}x{dim} needs a {0}x{0} matrix", dim * dim)));
        }
        Ok(Self { dim, matrix })
    }

    /// `X ↦ Σ_j K_j X K_j†`.
    pub fn from_kraus(kraus: &[ComplexMatrix]) -> Self {
        let dim = kraus[0].dim();
        let mut matrix = ComplexMatrix::zeros(dim * dim);
        for k in kraus {
            matrix = &matrix + &k.kron(&k.conj());
        }
        Self { dim, matrix }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn apply(&self, x: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(x.dim(), self.dim, "superoperator dimension mismatch");
        ComplexMatrix { dim: self.dim, data: self.matrix.mul_vec(x.data()) }
    }

    /// Hilbert–Schmidt adjoint (Heisenberg picture).
    pub fn adjoint(&self) -> Self {
        Self { dim: self.dim, matrix: self.matrix.adjoint() }
    }

    pub fn apply_dual(&self, x: &ComplexMatrix) -> ComplexMatrix {
        self.adjoint().apply(x)
    }

    /// `next ∘ self`.
    pub fn then(&self, next: &SuperOperator) -> SuperOperator {
        Self { dim: self.dim, matrix: &next.matrix * &self.matrix }
    }

    /// Max entry of `|φ†(I) − I|`; zero for trace-preserving maps.
    pub fn trace_preservation_deviation(&self) -> f64 {
        let id = ComplexMatrix::identity(self.dim);
        self.apply_dual(&id).max_abs_diff(&id)
    }

    /// `φ(E_ii)` entry `(k, k)` for all `k, i`: the action on diagonal inputs,
    /// read off the diagonal outputs. Entry `[k][i]`.
    pub fn diagonal_block(&self) -> Vec<Vec<f64>> {
        let d = self.dim;
        (0..d).map(|k| (0..d).map(|i| self.matrix[(k * d + k, i * d + i)].re).collect()).collect()
    }

    /// True if every output has vanishing off-diagonal part.
    pub fn has_diagonal_output(&self, tol: f64) -> bool {
        let d = self.dim;
        for k in 0..d {
            for l in 0..d {
                if k == l {
                    continue;
                }
                let row = k * d + l;
                if (0..d * d).any(|c| self.matrix[(row, c)].norm() > tol) {
                    return false;
                }
            }
        }
        true
    }
}

/// `‖M‖₁`, the sum of singular values.
pub fn trace_norm(m: &ComplexMatrix) -> Result<f64> {
    if !m.is_finite() {
        return input("trace norm of a matrix with non-finite entries");
    }
    if m.dim() == 1 {
        return Ok(m[(0, 0)].norm());
    }
    Ok(m.singular_values().iter().sum())
}

/// `m(A, B) = sup{λ ≥ 0 : λB ≤ A}` by bisection on the positivity of `A − λB`.
pub fn cone_gauge_m(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    cone_gauge_psd(a.matrix(), b.matrix())
}

/// Same gauge for arbitrary positive semidefinite `A`, `B` with `tr B > 0`.
pub fn cone_gauge_psd(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    let psd = |lam: f64| (a - &b.scale(lam)).min_eigenvalue() >= -tol::PSD;
    let tb = b.trace().re;
    if tb <= 0.0 {
        return f64::INFINITY;
    }
    // λB ≤ A forces λ tr B ≤ tr A
    let hi0 = a.trace().re / tb;
    if psd(hi0) {
        return hi0;
    }
    let (mut lo, mut hi) = (0.0, hi0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if psd(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Projective (Hilbert-type) metric `(1 − m m') / (1 + m m')` on states.
pub fn projective_distance(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    projective_distance_psd(a.matrix(), b.matrix())
}

pub(crate) fn projective_distance_psd(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    let ta = a.trace().re;
    let tb = b.trace().re;
    let (a, b) = (a.scale(1.0 / ta), b.scale(1.0 / tb));
    let mm = cone_gauge_psd(&a, &b) * cone_gauge_psd(&b, &a);
    ((1.0 - mm) / (1.0 + mm)).clamp(0.0, 1.0)
}

/// Lower estimate of the contraction coefficient `c(φ)`: the largest
/// `d(φ·A, φ·B)` over `n_samples` Haar pure-state pairs.
pub fn contraction_coefficient_lower_bound<R: Rng + ?Sized>(phi: &SuperOperator, n_samples: usize, rng: &mut R) -> Result<f64> {
    let d = phi.dim();
    let mut best: f64 = 0.0;
    for _ in 0..n_samples {
        let a = DensityMatrix::haar_pure(d, rng);
        let b = DensityMatrix::haar_pure(d, rng);
        let fa = phi.apply(a.matrix());
        let fb = phi.apply(b.matrix());
        for f in [&fa, &fb] {
            if f.trace().re <= tol::ZERO {
                return Err(Error::Hypothesis("map annihilates a sampled state (kernel meets the state space)".into()));
            }
        }
        best = best.max(projective_distance_psd(&fa, &fb));
    }
    Ok(best)
}
