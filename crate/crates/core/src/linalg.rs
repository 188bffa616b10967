//! Dense complex linear algebra for small Hilbert spaces.
//!
//! Everything here works on `nalgebra` dynamic matrices of `Complex<f64>`.
//! Hermitian problems go through the eigen route; general (non-normal)
//! exponentials use Padé scaling and squaring.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{invalid, Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Absolute tolerance for the Hermiticity check on unit-scale matrices.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance for the `normalized` flag of a state vector.
pub const NORMALIZED_TOL: f64 = 1e-12;
/// Eigenvalue floor accepted for a density matrix.
pub const DENSITY_EIG_FLOOR: f64 = -1e-10;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Complex amplitude vector over a finite basis. May be unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: CVector,
    normalized: bool,
}

impl StateVector {
    pub fn new(amplitudes: CVector) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(invalid("amplitudes", "state vector must have dim >= 1"));
        }
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("amplitudes", "non-finite amplitude"));
        }
        let normalized = (amplitudes.norm_squared() - 1.0).abs() < NORMALIZED_TOL;
        Ok(Self {
            amplitudes,
            normalized,
        })
    }

    /// Builds a state and insists that it is normalized.
    pub fn normalized(amplitudes: CVector) -> Result<Self> {
        let s = Self::new(amplitudes)?;
        s.require_normalized()?;
        Ok(s)
    }

    /// Rescales arbitrary amplitudes to unit norm.
    pub fn normalize_from(amplitudes: CVector) -> Result<Self> {
        let n = amplitudes.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(invalid("amplitudes", "cannot normalize a zero or non-finite vector"));
        }
        Self::new(amplitudes.unscale(n))
    }

    pub fn from_real(amps: &[f64]) -> Result<Self> {
        Self::new(CVector::from_iterator(amps.len(), amps.iter().map(|&x| c(x, 0.0))))
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = CVector::zeros(dim);
        v[k] = c(1.0, 0.0);
        Self {
            amplitudes: v,
            normalized: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> CVector {
        self.amplitudes
    }

    pub fn norm2(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn require_normalized(&self) -> Result<()> {
        let dev = (self.norm2() - 1.0).abs();
        if dev < NORMALIZED_TOL {
            Ok(())
        } else {
            Err(Error::NotNormalized { deviation: dev })
        }
    }

    /// `<psi|M|psi>` for a Hermitian `M`, real part only.
    pub fn expectation(&self, op: &HermitianOperator) -> f64 {
        self.amplitudes.dotc(&(op.matrix() * &self.amplitudes)).re
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn outer(&self) -> CMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }
}

/// Hermitian operator on a finite basis.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: CMatrix,
}

impl HermitianOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(invalid("matrix", "operator must be square and non-empty"));
        }
        let dev = hermitian_deviation(&matrix);
        if !(dev < HERMITIAN_TOL) {
            return Err(Error::NotHermitian { deviation: dev });
        }
        Ok(Self { matrix })
    }

    /// Accepts a matrix that is Hermitian up to rounding and projects it
    /// onto its Hermitian part.
    pub(crate) fn from_hermitized(matrix: CMatrix) -> Self {
        let m = (&matrix + matrix.adjoint()) * c(0.5, 0.0);
        Self { matrix: m }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let v = CVector::from_iterator(values.len(), values.iter().map(|&x| c(x, 0.0)));
        Self {
            matrix: CMatrix::from_diagonal(&v),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            matrix: CMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            matrix: &self.matrix * c(k, 0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|z| *z == C64::default())
    }

    /// True when every off-diagonal element vanishes exactly.
    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.matrix[(i, j)] == C64::default()))
    }

    pub fn diagonal_values(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }

    pub fn pauli_x() -> Self {
        Self {
            matrix: CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]),
        }
    }

    pub fn pauli_y() -> Self {
        Self {
            matrix: CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]),
        }
    }

    pub fn pauli_z() -> Self {
        Self::diagonal(&[1.0, -1.0])
    }
}

/// Hermitian positive semidefinite matrix with its trace tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
    trace: f64,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        Self::with_floor(matrix, DENSITY_EIG_FLOOR)
    }

    /// Validates with a caller-chosen eigenvalue floor (solver outputs use a
    /// looser floor than exact constructions).
    pub fn with_floor(matrix: CMatrix, floor: f64) -> Result<Self> {
        let op = HermitianOperator::new(matrix)
            .map_err(|e| Error::InvalidDensity(e.to_string()))?;
        let eig = eig_hermitian(&op)?;
        let min = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < floor {
            return Err(Error::InvalidDensity(format!(
                "minimum eigenvalue {min:e} below floor {floor:e}"
            )));
        }
        let trace = op.matrix.trace().re;
        Ok(Self {
            matrix: op.matrix,
            trace,
        })
    }

    pub fn pure(state: &StateVector) -> Self {
        let m = state.outer();
        let trace = m.trace().re;
        Self { matrix: m, trace }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// `Tr[rho M]`.
    pub fn expectation(&self, op: &CMatrix) -> C64 {
        trace_product(&self.matrix, op)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let e = eig_hermitian(&HermitianOperator::from_hermitized(self.matrix.clone()))
            .expect("dimension already validated");
        e.values[0]
    }
}

pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// `Tr[A B]` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = C64::default();
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn frobenius_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm()
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// `[A, [A, B]]`.
pub fn double_commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    commutator(a, &commutator(a, b))
}

/// Spectral decomposition `H = V diag(values) V^dagger`, values ascending.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: DVector<f64>,
    pub vectors: CMatrix,
}

impl Eigen {
    pub fn reconstruct(&self) -> CMatrix {
        let d = CMatrix::from_diagonal(&self.values.map(|x| c(x, 0.0)));
        &self.vectors * d * self.vectors.adjoint()
    }

    /// `V diag(f(values)) V^dagger`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> C64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

pub fn eig_hermitian(h: &HermitianOperator) -> Result<Eigen> {
    let n = h.dim();
    let se = nalgebra::SymmetricEigen::new(h.matrix.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    Ok(Eigen { values, vectors })
}

/// `exp(-i H t)` through the eigen route.
pub fn unitary_propagator(h: &HermitianOperator, t: f64) -> Result<CMatrix> {
    let e = eig_hermitian(h)?;
    Ok(e.apply_fn(|x| (-I * x * t).exp()))
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;
const MAX_EXPONENT_NORM: f64 = 1e12;

fn norm1(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(z M)` by degree-13 Padé approximation with scaling and squaring.
pub fn expm_scaled(m: &CMatrix, z: C64) -> Result<CMatrix> {
    if !m.is_square() {
        return Err(invalid("m", "matrix exponential needs a square matrix"));
    }
    let n = m.nrows();
    let a = m * z;
    if a.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(invalid("m", "non-finite entries"));
    }
    let norm = norm1(&a);
    if norm > MAX_EXPONENT_NORM {
        return Err(Error::Overflow { norm });
    }
    if norm == 0.0 {
        return Ok(CMatrix::identity(n, n));
    }
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a.unscale(2f64.powi(s));
    let id = CMatrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = |k: usize| c(PADE13[k], 0.0);
    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9))
        + &a6 * b(7)
        + &a4 * b(5)
        + &a2 * b(3)
        + &id * b(1);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8))
        + &a6 * b(6)
        + &a4 * b(4)
        + &a2 * b(2)
        + &id * b(0);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Overflow { norm })?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::Overflow { norm });
    }
    Ok(r)
}

/// Heisenberg-picture operator `e^{iHt} A e^{-iHt}`.
pub fn heisenberg_op(
    a: &HermitianOperator,
    h: &HermitianOperator,
    t: f64,
) -> Result<HermitianOperator> {
    if a.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            context: "heisenberg_op: A vs H",
            expected: a.dim(),
            got: h.dim(),
        });
    }
    if t == 0.0 || h.is_zero() {
        return Ok(a.clone());
    }
    let u = unitary_propagator(h, -t)?;
    let m = &u * a.matrix() * u.adjoint();
    Ok(HermitianOperator::from_hermitized(m))
}

/// Hermitian matrix with entries uniform in the unit square.
pub fn random_hermitian(n: usize, rng: &mut impl rand::Rng) -> HermitianOperator {
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = c(rng.random_range(-1.0..1.0), 0.0);
        for j in 0..i {
            let z = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    HermitianOperator::from_hermitized(m)
}

/// Normalized state with Gaussian amplitudes.
pub fn random_state(n: usize, rng: &mut impl rand::Rng) -> StateVector {
    loop {
        let v = CVector::from_fn(n, |_, _| c(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal)));
        if let Ok(s) = StateVector::normalize_from(v) {
            return s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eig_of_diagonal_sorts_ascending() {
        let e = eig_hermitian(&HermitianOperator::diagonal(&[1.0, -2.0])).unwrap();
        assert_eq!(e.values.as_slice(), &[-2.0, 1.0]);
    }

    #[test]
    fn eig_of_pauli_x() {
        let e = eig_hermitian(&HermitianOperator::pauli_x()).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eig_reconstruction_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..1000 {
            let n = 1 + trial % 16;
            let h = random_hermitian(n, &mut rng);
            let e = eig_hermitian(&h).unwrap();
            assert!(max_abs_diff(&e.reconstruct(), h.matrix()) < 1e-10);
            assert!(e.values.as_slice().windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)]);
        assert!(matches!(
            HermitianOperator::new(m),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn expm_zero_is_identity() {
        let m = HermitianOperator::pauli_y().matrix().clone();
        let e = expm_scaled(&m, c(0.0, 0.0)).unwrap();
        assert_eq!(e, CMatrix::identity(2, 2));
    }

    #[test]
    fn expm_diagonal() {
        let m = HermitianOperator::diagonal(&[1.0, 2.0]).matrix().clone();
        let e = expm_scaled(&m, c(1.0, 0.0)).unwrap();
        let e1 = std::f64::consts::E;
        assert!((e[(0, 0)].re - e1).abs() < 1e-12 * e1);
        assert!((e[(1, 1)].re - e1 * e1).abs() < 1e-12 * e1 * e1);
        assert!(e[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn expm_pauli_x_quarter_turn() {
        // exp(i pi/2 X) = cos(pi/2) + i sin(pi/2) X = i X
        let x = HermitianOperator::pauli_x().matrix().clone();
        let e = expm_scaled(&x, c(0.0, std::f64::consts::FRAC_PI_2)).unwrap();
        let expected = &x * I;
        assert!(max_abs_diff(&e, &expected) < 1e-12);
    }

    #[test]
    fn expm_large_norm_relative_accuracy() {
        // Diagonal exponent with norm 20: compare against scalar exp.
        let m = HermitianOperator::diagonal(&[-20.0, 3.0, 20.0]).matrix().clone();
        let e = expm_scaled(&m, c(1.0, 0.0)).unwrap();
        for (k, x) in [-20.0f64, 3.0, 20.0].iter().enumerate() {
            let rel = (e[(k, k)].re - x.exp()).abs() / x.exp();
            assert!(rel < 1e-12, "k={k} rel={rel:e}");
        }
    }

    #[test]
    fn expm_against_eigen_route_for_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let h = random_hermitian(6, &mut rng);
            let t = rng.random_range(-3.0..3.0);
            let by_pade = expm_scaled(h.matrix(), c(0.0, -t)).unwrap();
            let by_eigen = unitary_propagator(&h, t).unwrap();
            assert!(max_abs_diff(&by_pade, &by_eigen) < 1e-11);
        }
    }

    #[test]
    fn expm_overflow_is_an_error() {
        let m = HermitianOperator::diagonal(&[1.0]).matrix().clone();
        assert!(matches!(
            expm_scaled(&m, c(1e6, 0.0)),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn heisenberg_trivial_cases() {
        let a = HermitianOperator::pauli_z();
        let h0 = HermitianOperator::zeros(2);
        assert_eq!(heisenberg_op(&a, &h0, 3.0).unwrap(), a);
        let h = HermitianOperator::pauli_x();
        assert_eq!(heisenberg_op(&a, &h, 0.0).unwrap(), a);
    }

    #[test]
    fn heisenberg_precession_matches_closed_form() {
        // H = w X / 2: e^{iHt} Z e^{-iHt} = cos(wt) Z + sin(wt) Y
        let w = 1.3;
        let h = HermitianOperator::pauli_x().scaled(w / 2.0);
        let z = HermitianOperator::pauli_z();
        let y = HermitianOperator::pauli_y();
        for &t in &[0.1, 0.7, 2.0, 5.5] {
            let via_eigen = heisenberg_op(&z, &h, t).unwrap();
            let u = expm_scaled(h.matrix(), c(0.0, t)).unwrap();
            let via_pade = &u * z.matrix() * u.adjoint();
            let closed = z.matrix() * c((w * t).cos(), 0.0) + y.matrix() * c((w * t).sin(), 0.0);
            assert!(max_abs_diff(via_eigen.matrix(), &closed) < 1e-12);
            assert!(max_abs_diff(&via_pade, &closed) < 1e-12);
        }
    }

    #[test]
    fn heisenberg_dim_mismatch() {
        let a = HermitianOperator::pauli_z();
        let h = HermitianOperator::zeros(3);
        assert!(matches!(
            heisenberg_op(&a, &h, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn density_validation() {
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let rho = DensityMatrix::pure(&psi);
        assert!((rho.trace() - 1.0).abs() < 1e-15);
        assert!((rho.purity() - 1.0).abs() < 1e-14);
        let bad = HermitianOperator::diagonal(&[1.5, -0.5]).matrix().clone();
        assert!(DensityMatrix::new(bad).is_err());
    }

    #[test]
    fn state_normalization_flag() {
        let s = StateVector::from_real(&[1.0, 1.0]).unwrap();
        assert!(!s.is_normalized());
        assert!(s.require_normalized().is_err());
        let n = StateVector::normalize_from(s.into_amplitudes()).unwrap();
        assert!(n.is_normalized());
    }
}
