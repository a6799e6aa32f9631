//! Dense complex matrices, density matrices and the bipartite helpers shared by
//! every other module.
//!
//! Joint machine–battery operators are always laid out machine-factor-first:
//! the joint index of `|m⟩ ⊗ |l⟩` is `m * battery_dim + l` (see [`joint_index`]).

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimension of the working-fluid Hilbert space.
pub const MACHINE_DIM: usize = 2;

/// Relative Hermiticity tolerance (max-norm of `A - A†` over max-norm of `A`).
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Absolute unit-trace tolerance for density matrices.
pub const TRACE_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted as numerically non-negative.
pub const PSD_TOL: f64 = 1e-10;

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("matrix is not Hermitian (relative residual {residual:.3e})")]
    NotHermitian { residual: f64 },
    #[error("eigendecomposition failed to converge")]
    EigenFailure,
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
}

fn mismatch(expected: impl fmt::Display, found: impl fmt::Display) -> LinalgError {
    LinalgError::DimensionMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

/// Joint index of `|machine⟩ ⊗ |battery⟩`. The only place the tensor ordering is fixed.
#[inline]
pub fn joint_index(machine: usize, battery: usize, battery_dim: usize) -> usize {
    debug_assert!(machine < MACHINE_DIM && battery < battery_dim);
    machine * battery_dim + battery
}

/// Dense complex matrix in double precision.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    inner: Mat<Complex64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{}", self.rows(), self.cols())?;
        if self.rows() * self.cols() <= 64 {
            for i in 0..self.rows() {
                let row: Vec<String> = (0..self.cols())
                    .map(|j| {
                        let z = self[(i, j)];
                        format!("{:+.4}{:+.4}i", z.re, z.im)
                    })
                    .collect();
                writeln!(f, "  [{}]", row.join(", "))?;
            }
        }
        Ok(())
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            inner: Mat::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: Mat::identity(n, n),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut f = f;
        Self {
            inner: Mat::from_fn(rows, cols, |i, j| f(i, j)),
        }
    }

    /// Builds a matrix from entries listed row by row.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[Complex64]) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 || rows * cols != entries.len() {
            return Err(mismatch(
                format!("{rows}x{cols} (= {} entries)", rows * cols),
                format!("{} entries", entries.len()),
            ));
        }
        Ok(Self::from_fn(rows, cols, |i, j| entries[i * cols + j]))
    }

    pub fn from_real_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::from_fn(rows, cols, |i, j| Complex64::new(f(i, j), 0.0))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { Complex64::new(diag[i], 0.0) } else { ZERO })
    }

    pub fn from_diagonal(diag: &[Complex64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { ZERO })
    }

    /// Rank-one projector `|psi⟩⟨psi|` (not normalised).
    pub fn outer(psi: &[Complex64]) -> Self {
        let n = psi.len();
        Self::from_fn(n, n, |i, j| psi[i] * psi[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn as_faer(&self) -> MatRef<'_, Complex64> {
        self.inner.as_ref()
    }

    pub fn from_faer(inner: Mat<Complex64>) -> Self {
        Self { inner }
    }

    pub fn to_row_major(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self[(i, j)]);
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self {
            inner: self.inner.adjoint().to_owned(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            inner: self.inner.transpose().to_owned(),
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            inner: self.inner.conjugate().to_owned(),
        }
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols(), rhs.rows(), "matmul: inner dimensions differ");
        let mut out = Mat::zeros(self.rows(), rhs.cols());
        matmul(out.as_mut(), Accum::Replace, self.inner.as_ref(), rhs.inner.as_ref(), ONE, Par::Seq);
        Self { inner: out }
    }

    /// `self · rhs†`
    pub fn matmul_adjoint(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols(), rhs.cols(), "matmul_adjoint: inner dimensions differ");
        let mut out = Mat::zeros(self.rows(), rhs.rows());
        matmul(out.as_mut(), Accum::Replace, self.inner.as_ref(), rhs.inner.adjoint(), ONE, Par::Seq);
        Self { inner: out }
    }

    /// `u · self · u†`
    pub fn conjugate_by(&self, u: &Self) -> Self {
        u.matmul(self).matmul_adjoint(u)
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| self[(i, j)] * factor)
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(Complex64::new(factor, 0.0))
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows().min(self.cols())).map(|i| self[(i, i)]).sum()
    }

    /// `Tr[self · rhs]` without forming the product.
    pub fn trace_product(&self, rhs: &Self) -> Complex64 {
        assert_eq!(self.cols(), rhs.rows());
        assert_eq!(self.rows(), rhs.cols());
        let mut acc = ZERO;
        for i in 0..self.rows() {
            for k in 0..self.cols() {
                acc += self[(i, k)] * rhs[(k, i)];
            }
        }
        acc
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        (0..self.rows().min(self.cols())).map(|i| self[(i, i)]).collect()
    }

    pub fn diagonal_real(&self) -> Vec<f64> {
        self.diagonal().iter().map(|z| z.re).collect()
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.cols() {
            for i in 0..self.rows() {
                m = m.max(self[(i, j)].norm());
            }
        }
        m
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows(), self.cols()), (other.rows(), other.cols()));
        let mut m = 0.0f64;
        for j in 0..self.cols() {
            for i in 0..self.rows() {
                m = m.max((self[(i, j)] - other[(i, j)]).norm());
            }
        }
        m
    }

    /// Relative max-norm Hermiticity residual `max|A − A†| / max|A|`.
    pub fn hermiticity_residual(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let n = self.rows();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in i..n {
                m = m.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        m / scale
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_residual() <= HERMITIAN_TOL
    }

    /// `(A + A†) / 2`
    pub fn hermitian_part(&self) -> Self {
        let n = self.rows();
        Self::from_fn(n, n, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    /// `max|W†W − I|`
    pub fn unitarity_residual(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut wtw = Mat::zeros(self.cols(), self.cols());
        matmul(wtw.as_mut(), Accum::Replace, self.inner.adjoint(), self.inner.as_ref(), ONE, Par::Seq);
        let n = self.cols();
        let mut m = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let target = if i == j { ONE } else { ZERO };
                m = m.max((wtw[(i, j)] - target).norm());
            }
        }
        m
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.inner[(i, j)]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.inner[(i, j)]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows(), self.cols()), (rhs.rows(), rhs.cols()));
        ComplexMatrix {
            inner: &self.inner + &rhs.inner,
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows(), self.cols()), (rhs.rows(), rhs.cols()));
        ComplexMatrix {
            inner: &self.inner - &rhs.inner,
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

impl Serialize for ComplexMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            rows: usize,
            cols: usize,
            entries: Vec<[f64; 2]>,
        }
        Repr {
            rows: self.rows(),
            cols: self.cols(),
            entries: self.to_row_major().iter().map(|z| [z.re, z.im]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            rows: usize,
            cols: usize,
            entries: Vec<[f64; 2]>,
        }
        let r = Repr::deserialize(d)?;
        let entries: Vec<Complex64> = r.entries.iter().map(|p| Complex64::new(p[0], p[1])).collect();
        ComplexMatrix::from_row_major(r.rows, r.cols, &entries).map_err(serde::de::Error::custom)
    }
}

/// Hermitian, unit-trace, positive-semidefinite matrix.
///
/// Construction checks Hermiticity and trace. Positivity needs an
/// eigendecomposition and is checked separately by [`DensityMatrix::validate_psd`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self, LinalgError> {
        if !matrix.is_square() {
            return Err(mismatch("square matrix", format!("{}x{}", matrix.rows(), matrix.cols())));
        }
        let residual = matrix.hermiticity_residual();
        if residual > HERMITIAN_TOL {
            return Err(LinalgError::NotHermitian { residual });
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(LinalgError::InvalidState(format!("trace {tr} differs from 1")));
        }
        Ok(Self { matrix })
    }

    /// Like [`DensityMatrix::new`] but also rejects states with eigenvalues below `-PSD_TOL`.
    pub fn new_validated(matrix: ComplexMatrix) -> Result<Self, LinalgError> {
        let rho = Self::new(matrix)?;
        rho.validate_psd()?;
        Ok(rho)
    }

    /// Hermitian-symmetrises and renormalises the trace before validating.
    pub(crate) fn from_hermitian_part(matrix: &ComplexMatrix) -> Result<Self, LinalgError> {
        let h = matrix.hermitian_part();
        let tr = h.trace().re;
        if !(tr.is_finite() && tr > 0.0) {
            return Err(LinalgError::InvalidState(format!("non-positive trace {tr}")));
        }
        if (tr - 1.0).abs() > 1e-8 {
            return Err(LinalgError::InvalidState(format!("trace {tr} drifted from 1")));
        }
        Self::new(h.scale_real(1.0 / tr))
    }

    pub fn pure(psi: &[Complex64]) -> Result<Self, LinalgError> {
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm2 == 0.0 {
            return Err(LinalgError::InvalidState("zero state vector".into()));
        }
        Self::new(ComplexMatrix::outer(psi).scale_real(1.0 / norm2))
    }

    /// `|k⟩⟨k|` in a `dim`-dimensional space.
    pub fn basis_state(dim: usize, k: usize) -> Self {
        let mut m = ComplexMatrix::zeros(dim, dim);
        m[(k, k)] = ONE;
        Self { matrix: m }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64),
        }
    }

    /// Diagonal state with the given (normalised) populations.
    pub fn diagonal(populations: &[f64]) -> Result<Self, LinalgError> {
        Self::new(ComplexMatrix::from_real_diagonal(populations))
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn populations(&self) -> Vec<f64> {
        self.matrix.diagonal_real()
    }

    /// `Tr[ρ A]`, real part.
    pub fn expectation(&self, observable: &ComplexMatrix) -> f64 {
        self.matrix.trace_product(observable).re
    }

    /// Expectation of a diagonal observable given by its diagonal.
    pub fn expectation_diagonal(&self, diag: &[f64]) -> f64 {
        assert_eq!(diag.len(), self.dim());
        diag.iter().enumerate().map(|(i, d)| d * self.matrix[(i, i)].re).sum()
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>, LinalgError> {
        herm_eigenvalues(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> Result<f64, LinalgError> {
        Ok(self.eigenvalues()?.first().copied().unwrap_or(0.0))
    }

    pub fn validate_psd(&self) -> Result<(), LinalgError> {
        let min = self.min_eigenvalue()?;
        if min < -PSD_TOL {
            return Err(LinalgError::InvalidState(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    /// Clips eigenvalues in `[floor, 0)` to zero and renormalises.
    ///
    /// Returns the state unchanged when it is already PSD within [`PSD_TOL`], and
    /// an error when the most negative eigenvalue lies below `floor`.
    pub fn repair_psd(&self, floor: f64) -> Result<(Self, f64), LinalgError> {
        let eig = herm_eig(&self.matrix)?;
        let min = eig.values.first().copied().unwrap_or(0.0);
        if min >= -PSD_TOL {
            return Ok((self.clone(), min));
        }
        if min < floor {
            return Err(LinalgError::InvalidState(format!(
                "eigenvalue {min:.3e} below repair floor {floor:.1e}"
            )));
        }
        let clipped: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let weights: Vec<f64> = clipped.iter().map(|l| l / total).collect();
        let m = eig.reconstruct_with(&weights);
        Ok((Self::new(m.hermitian_part())?, min))
    }
}

/// Eigenpairs of a Hermitian matrix: ascending eigenvalues, unitary eigenvector columns.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    /// `V diag(w) V†` for arbitrary real weights.
    pub fn reconstruct_with(&self, weights: &[f64]) -> ComplexMatrix {
        let n = self.vectors.rows();
        let scaled = ComplexMatrix::from_fn(n, weights.len(), |i, j| self.vectors[(i, j)] * weights[j]);
        scaled.matmul_adjoint(&self.vectors)
    }

    /// `V diag(f(λ)) V†` for a complex-valued spectral function.
    pub fn apply_fn(&self, f: impl Fn(f64) -> Complex64) -> ComplexMatrix {
        let n = self.vectors.rows();
        let fv: Vec<Complex64> = self.values.iter().map(|&l| f(l)).collect();
        let scaled = ComplexMatrix::from_fn(n, fv.len(), |i, j| self.vectors[(i, j)] * fv[j]);
        scaled.matmul_adjoint(&self.vectors)
    }

    pub fn vector(&self, k: usize) -> Vec<Complex64> {
        (0..self.vectors.rows()).map(|i| self.vectors[(i, k)]).collect()
    }
}

fn check_hermitian(h: &ComplexMatrix) -> Result<(), LinalgError> {
    if !h.is_square() {
        return Err(mismatch("square matrix", format!("{}x{}", h.rows(), h.cols())));
    }
    let residual = h.hermiticity_residual();
    if residual > HERMITIAN_TOL {
        return Err(LinalgError::NotHermitian { residual });
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Eigenvalues ascend. Each eigenvector is rephased so that its largest-magnitude
/// component (first one on ties) is real and positive.
pub fn herm_eig(h: &ComplexMatrix) -> Result<HermitianEigen, LinalgError> {
    check_hermitian(h)?;
    let n = h.rows();
    let sym = h.hermitian_part();
    let evd = sym
        .as_faer()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| LinalgError::EigenFailure)?;
    let values: Vec<f64> = (0..n).map(|i| evd.S()[i].re).collect();
    let u = evd.U();
    let mut vectors = ComplexMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    for k in 0..n {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..n {
            let a = vectors[(i, k)].norm();
            if a > best_abs * (1.0 + 1e-12) {
                best_abs = a;
                best = i;
            }
        }
        let pivot = vectors[(best, k)];
        if best_abs > 0.0 {
            let phase = pivot.conj() / best_abs;
            for i in 0..n {
                vectors[(i, k)] *= phase;
            }
            vectors[(best, k)] = Complex64::new(vectors[(best, k)].re, 0.0);
        }
    }
    Ok(HermitianEigen { values, vectors })
}

/// Ascending eigenvalues only.
pub fn herm_eigenvalues(h: &ComplexMatrix) -> Result<Vec<f64>, LinalgError> {
    check_hermitian(h)?;
    let sym = h.hermitian_part();
    let vals = sym
        .as_faer()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| LinalgError::EigenFailure)?;
    Ok(vals)
}

/// `exp(−i h dt)` through the eigendecomposition of `h`.
pub fn expm_unitary(h: &ComplexMatrix, dt: f64) -> Result<ComplexMatrix, LinalgError> {
    let eig = herm_eig(h)?;
    Ok(eig.apply_fn(|l| Complex64::from_polar(1.0, -l * dt)))
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (br, bc) = (b.rows(), b.cols());
    ComplexMatrix::from_fn(a.rows() * br, a.cols() * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

fn check_joint(rho: &ComplexMatrix, battery_dim: usize) -> Result<(), LinalgError> {
    let n = MACHINE_DIM * battery_dim;
    if battery_dim == 0 || rho.rows() != n || rho.cols() != n {
        return Err(mismatch(
            format!("{n}x{n} joint matrix (battery dim {battery_dim})"),
            format!("{}x{}", rho.rows(), rho.cols()),
        ));
    }
    Ok(())
}

/// Battery block sum `Σ_m ⟨m|X|m⟩` of a joint operator (no state checks).
pub fn trace_out_machine(rho: &ComplexMatrix, battery_dim: usize) -> Result<ComplexMatrix, LinalgError> {
    check_joint(rho, battery_dim)?;
    Ok(ComplexMatrix::from_fn(battery_dim, battery_dim, |i, j| {
        (0..MACHINE_DIM)
            .map(|m| rho[(joint_index(m, i, battery_dim), joint_index(m, j, battery_dim))])
            .sum()
    }))
}

/// Machine block traces `Tr_B` of a joint operator (no state checks).
pub fn trace_out_battery(rho: &ComplexMatrix, battery_dim: usize) -> Result<ComplexMatrix, LinalgError> {
    check_joint(rho, battery_dim)?;
    Ok(ComplexMatrix::from_fn(MACHINE_DIM, MACHINE_DIM, |a, b| {
        (0..battery_dim)
            .map(|l| rho[(joint_index(a, l, battery_dim), joint_index(b, l, battery_dim))])
            .sum()
    }))
}

/// Reduced battery state `Tr_M[ρ]`.
pub fn partial_trace_machine(rho: &DensityMatrix, battery_dim: usize) -> Result<DensityMatrix, LinalgError> {
    let m = trace_out_machine(rho.matrix(), battery_dim)?;
    DensityMatrix::new(m.hermitian_part())
}

/// Reduced machine state `Tr_B[ρ]`.
pub fn partial_trace_battery(rho: &DensityMatrix, battery_dim: usize) -> Result<DensityMatrix, LinalgError> {
    let m = trace_out_battery(rho.matrix(), battery_dim)?;
    DensityMatrix::new(m.hermitian_part())
}

/// Product state `machine ⊗ battery`.
pub fn product_state(machine: &DensityMatrix, battery: &DensityMatrix) -> Result<DensityMatrix, LinalgError> {
    if machine.dim() != MACHINE_DIM {
        return Err(mismatch(format!("{MACHINE_DIM}x{MACHINE_DIM} machine state"), machine.dim()));
    }
    DensityMatrix::new(kron(machine.matrix(), battery.matrix()))
}

pub mod pauli {
    use super::ComplexMatrix;
    use num_complex::Complex64;

    pub fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_real_fn(2, 2, |i, j| if i != j { 1.0 } else { 0.0 })
    }

    pub fn sigma_y() -> ComplexMatrix {
        ComplexMatrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => Complex64::new(0.0, -1.0),
            (1, 0) => Complex64::new(0.0, 1.0),
            _ => Complex64::new(0.0, 0.0),
        })
    }

    pub fn sigma_z() -> ComplexMatrix {
        ComplexMatrix::from_real_diagonal(&[1.0, -1.0])
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    pub(crate) fn random_state(rng: &mut impl Rng, n: usize) -> DensityMatrix {
        let a = ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let p = a.matmul_adjoint(&a);
        let tr = p.trace().re;
        DensityMatrix::new(p.scale_real(1.0 / tr).hermitian_part()).unwrap()
    }

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> ComplexMatrix {
        let a = ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        a.hermitian_part()
    }

    #[test]
    fn kron_identity_and_diagonal() {
        let i6 = kron(&ComplexMatrix::identity(2), &ComplexMatrix::identity(3));
        assert_eq!(i6.max_abs_diff(&ComplexMatrix::identity(6)), 0.0);

        let z = kron(&pauli::sigma_z(), &ComplexMatrix::from_real_diagonal(&[0.0, 1.0]));
        let expected = ComplexMatrix::from_real_diagonal(&[0.0, 1.0, 0.0, -1.0]);
        assert_eq!(z.max_abs_diff(&expected), 0.0);
    }

    #[test]
    fn kron_sigma_x_with_two_level_position() {
        // σ_x ⊗ q for M = 2 (q = [[0,1],[1,0]]): unit couplings only on the
        // anti-diagonal of the off-diagonal blocks, i.e. |0,0⟩↔|1,1⟩ and |0,1⟩↔|1,0⟩.
        let q = ComplexMatrix::from_real_fn(2, 2, |i, j| if i != j { 1.0 } else { 0.0 });
        let k = kron(&pauli::sigma_x(), &q);
        let expected = [
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(k[(i, j)], c(expected[i][j], 0.0), "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn from_row_major_rejects_bad_length() {
        assert!(ComplexMatrix::from_row_major(2, 2, &[c(1.0, 0.0); 3]).is_err());
        let m = ComplexMatrix::from_row_major(2, 3, &(0..6).map(|k| c(k as f64, 0.0)).collect::<Vec<_>>()).unwrap();
        assert_eq!(m[(1, 0)], c(3.0, 0.0));
        assert_eq!(m.to_row_major()[4], c(4.0, 0.0));
    }

    #[test]
    fn partial_traces_of_product_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in [1usize, 2, 3, 5] {
            let tau = random_state(&mut rng, 2);
            let sigma = random_state(&mut rng, m);
            let joint = product_state(&tau, &sigma).unwrap();
            let b = partial_trace_machine(&joint, m).unwrap();
            let a = partial_trace_battery(&joint, m).unwrap();
            assert!(b.matrix().max_abs_diff(sigma.matrix()) < 1e-12);
            assert!(a.matrix().max_abs_diff(tau.matrix()) < 1e-12);
        }
    }

    #[test]
    fn partial_traces_of_maximally_mixed() {
        let joint = DensityMatrix::maximally_mixed(8);
        let b = partial_trace_machine(&joint, 4).unwrap();
        let a = partial_trace_battery(&joint, 4).unwrap();
        assert!(b.matrix().max_abs_diff(DensityMatrix::maximally_mixed(4).matrix()) < 1e-15);
        assert!(a.matrix().max_abs_diff(DensityMatrix::maximally_mixed(2).matrix()) < 1e-15);
    }

    #[test]
    fn partial_traces_match_naive_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = 4;
        let rho = random_state(&mut rng, 2 * m);
        // Reshape into a rank-4 tensor rho[a][i][b][j] and contract by hand.
        let t = |a: usize, i: usize, b: usize, j: usize| rho.matrix()[(a * m + i, b * m + j)];
        let b = partial_trace_machine(&rho, m).unwrap();
        let a = partial_trace_battery(&rho, m).unwrap();
        for i in 0..m {
            for j in 0..m {
                let mut s = c(0.0, 0.0);
                for k in 0..2 {
                    s += t(k, i, k, j);
                }
                assert!((b.matrix()[(i, j)] - s).norm() < 1e-12);
            }
        }
        for x in 0..2 {
            for y in 0..2 {
                let mut s = c(0.0, 0.0);
                for l in 0..m {
                    s += t(x, l, y, l);
                }
                assert!((a.matrix()[(x, y)] - s).norm() < 1e-12);
            }
        }
        assert!((b.matrix().trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partial_trace_dimension_mismatch() {
        let rho = DensityMatrix::maximally_mixed(6);
        assert!(matches!(
            partial_trace_machine(&rho, 2),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn herm_eig_diagonal_gives_permutation() {
        let h = ComplexMatrix::from_real_diagonal(&[3.0, 1.0, 2.0]);
        let e = herm_eig(&h).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
        // columns are |1⟩, |2⟩, |0⟩
        let perm = [1usize, 2, 0];
        for (k, &p) in perm.iter().enumerate() {
            for i in 0..3 {
                let expected = if i == p { 1.0 } else { 0.0 };
                assert!((e.vectors[(i, k)] - c(expected, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn herm_eig_sigma_x() {
        let e = herm_eig(&pauli::sigma_x()).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for k in 0..2 {
            for i in 0..2 {
                assert!((e.vectors[(i, k)].norm() - s).abs() < 1e-14);
            }
        }
        assert!(e.vectors.unitarity_residual() < 1e-14);
    }

    #[test]
    fn herm_eig_rejects_non_hermitian() {
        let a = ComplexMatrix::from_real_fn(2, 2, |i, j| (i + 2 * j) as f64);
        assert!(matches!(herm_eig(&a), Err(LinalgError::NotHermitian { .. })));
        assert!(expm_unitary(&a, 1.0).is_err());
    }

    #[test]
    fn herm_eig_phase_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_hermitian(&mut rng, 6);
        let e = herm_eig(&h).unwrap();
        for k in 0..6 {
            let v = e.vector(k);
            let (idx, _) = v
                .iter()
                .enumerate()
                .fold((0, -1.0), |(bi, bm), (i, z)| if z.norm() > bm * (1.0 + 1e-12) { (i, z.norm()) } else { (bi, bm) });
            assert_eq!(v[idx].im, 0.0);
            assert!(v[idx].re > 0.0);
        }
    }

    #[test]
    fn herm_eig_reconstruction_up_to_600() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 7, 40, 600] {
            let h = random_hermitian(&mut rng, n);
            let e = herm_eig(&h).unwrap();
            let rec = e.reconstruct_with(&e.values);
            assert!(rec.max_abs_diff(&h) < 1e-10, "n={n}");
            assert!(e.vectors.unitarity_residual() < 1e-10, "n={n}");
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn expm_known_cases() {
        let zero = ComplexMatrix::zeros(3, 3);
        assert!(expm_unitary(&zero, 0.7).unwrap().max_abs_diff(&ComplexMatrix::identity(3)) < 1e-15);

        let u = expm_unitary(&pauli::sigma_z(), std::f64::consts::PI).unwrap();
        assert!(u.max_abs_diff(&ComplexMatrix::identity(2).scale_real(-1.0)) < 1e-12);
        assert!(u.unitarity_residual() < 1e-12);
    }

    #[test]
    fn expm_integer_spectrum_full_period() {
        let hb = ComplexMatrix::from_real_diagonal(&(0..7).map(|l| l as f64).collect::<Vec<_>>());
        let u = expm_unitary(&hb, 2.0 * std::f64::consts::PI).unwrap();
        assert!(u.max_abs_diff(&ComplexMatrix::identity(7)) < 1e-12);
    }

    #[test]
    fn expm_group_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_hermitian(&mut rng, 8).scale_real(5.0);
        let (a, b) = (0.37, 1.91);
        let lhs = expm_unitary(&h, a).unwrap().matmul(&expm_unitary(&h, b).unwrap());
        let rhs = expm_unitary(&h, a + b).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-9);
        assert!(rhs.unitarity_residual() < 1e-10);
    }

    #[test]
    fn density_matrix_validation() {
        let bad_trace = ComplexMatrix::identity(2);
        assert!(DensityMatrix::new(bad_trace).is_err());
        let non_herm = ComplexMatrix::from_row_major(2, 2, &[c(0.5, 0.0), c(0.1, 0.0), c(0.0, 0.0), c(0.5, 0.0)]).unwrap();
        assert!(matches!(DensityMatrix::new(non_herm), Err(LinalgError::NotHermitian { .. })));
        let negative = ComplexMatrix::from_real_diagonal(&[1.5, -0.5]);
        assert!(DensityMatrix::new(negative.clone()).is_ok());
        assert!(DensityMatrix::new_validated(negative).is_err());
    }

    #[test]
    fn psd_repair_clips_small_negatives_only() {
        let slightly = DensityMatrix::new(ComplexMatrix::from_real_diagonal(&[1.0 + 5e-9, -5e-9])).unwrap();
        let (fixed, min) = slightly.repair_psd(-1e-8).unwrap();
        assert!(min < 0.0);
        assert!(fixed.min_eigenvalue().unwrap() >= 0.0);
        assert!((fixed.matrix().trace().re - 1.0).abs() < 1e-14);

        let badly = DensityMatrix::new(ComplexMatrix::from_real_diagonal(&[1.0 + 1e-6, -1e-6])).unwrap();
        assert!(badly.repair_psd(-1e-8).is_err());
    }

    #[test]
    fn serde_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_state(&mut rng, 3);
        let s = serde_json::to_string(&rho).unwrap();
        let back: DensityMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rho);
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn partial_trace_of_kron_is_scaled_factor(seed in any::<u64>(), m in 1usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let tau = random_state(&mut rng, 2).into_matrix().scale_real(rng.gen_range(0.1..3.0));
                let sigma = random_state(&mut rng, m);
                let joint = kron(&tau, sigma.matrix());
                let reduced = trace_out_machine(&joint, m).unwrap();
                let expected = sigma.matrix().scale(tau.trace());
                prop_assert!(reduced.max_abs_diff(&expected) < 1e-12);
            }

            #[test]
            fn expm_is_unitary(seed in any::<u64>(), n in 1usize..10, dt in -20.0f64..20.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let h = random_hermitian(&mut rng, n).scale_real(10.0);
                let u = expm_unitary(&h, dt).unwrap();
                prop_assert!(u.unitarity_residual() < 1e-10);
            }
        }
    }
}
