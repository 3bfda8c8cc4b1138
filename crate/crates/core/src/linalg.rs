//! Dense complex linear algebra used throughout the crate.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`. Vectorization is column
//! stacking, which coincides with nalgebra's column-major storage, so
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)` holds for [`kron`] as defined here.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Products below this many multiply-adds go through nalgebra's generic path.
const ZGEMM_THRESHOLD: usize = 8 * 1024;

/// Complex matrix product, dispatching large products to a packed kernel.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "matmul: inner dimensions differ ({k} vs {k2})");
    if m * k * n < ZGEMM_THRESHOLD || m == 0 || n == 0 || k == 0 {
        return a * b;
    }
    let mut c = CMatrix::zeros(m, n);
    // SAFETY: Complex64 is #[repr(C)] { re, im }, layout-identical to [f64; 2].
    // All three matrices are contiguous column-major with leading dimension
    // equal to their row count, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            1,
            m as isize,
            b.as_ptr() as *const [f64; 2],
            1,
            k as isize,
            [0.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
    c
}

/// `a · b · a†`
pub fn conjugate_by(a: &CMatrix, b: &CMatrix) -> CMatrix {
    matmul(&matmul(a, b), &a.adjoint())
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Kronecker product with `(a ⊗ b)[(i·p + k, j·q + l)] = a[i,j]·b[k,l]`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Column-stacking vectorization.
pub fn vectorize(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &CVector, n: usize) -> CMatrix {
    assert_eq!(v.len(), n * n, "unvectorize: length {} is not {n}²", v.len());
    CMatrix::from_column_slice(n, n, v.as_slice())
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// `Tr(a · b)` without forming the product.
pub fn trace_of_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Real Hilbert–Schmidt pairing `Re Tr(a† b)`.
pub fn real_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entry of `m − m†` in absolute value.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Frobenius distance from `u†u` to the identity.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    (u.adjoint() * u - identity(u.nrows())).norm()
}

pub fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending.
pub fn hermitian_eigen(h: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = hermitian_part(h).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(h.nrows(), h.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn min_hermitian_eigenvalue(h: &CMatrix) -> f64 {
    hermitian_part(h)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn one_norm(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const PADE9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

// Backward-error bounds for each Padé degree (double precision).
const THETA3: f64 = 1.495_585_217_958_292e-2;
const THETA5: f64 = 2.539_398_330_063_23e-1;
const THETA7: f64 = 9.504_178_996_162_932e-1;
const THETA9: f64 = 2.097_847_961_257_068;
const THETA13: f64 = 5.371_920_351_148_152;

fn scaled(m: &CMatrix, s: f64) -> CMatrix {
    m * C64::new(s, 0.0)
}

fn add_scaled_identity(m: &mut CMatrix, s: f64) {
    for i in 0..m.nrows() {
        m[(i, i)] += C64::new(s, 0.0);
    }
}

/// Odd/even Padé parts `(U, V)` for degrees 3, 5, 7 and 9.
fn pade_low(a: &CMatrix, coeffs: &[f64]) -> (CMatrix, CMatrix) {
    let n = a.nrows();
    let a2 = matmul(a, a);
    let mut powers = vec![identity(n), a2.clone()];
    while powers.len() < coeffs.len() / 2 {
        let next = matmul(powers.last().unwrap(), &a2);
        powers.push(next);
    }
    let mut u_inner = CMatrix::zeros(n, n);
    let mut v = CMatrix::zeros(n, n);
    for (k, p) in powers.iter().enumerate() {
        v += scaled(p, coeffs[2 * k]);
        u_inner += scaled(p, coeffs[2 * k + 1]);
    }
    (matmul(a, &u_inner), v)
}

fn pade13(a: &CMatrix) -> (CMatrix, CMatrix) {
    let b = &PADE13;
    let a2 = matmul(a, a);
    let a4 = matmul(&a2, &a2);
    let a6 = matmul(&a4, &a2);
    let mut inner = scaled(&a6, b[13]) + scaled(&a4, b[11]) + scaled(&a2, b[9]);
    let mut u = matmul(&a6, &inner) + scaled(&a6, b[7]) + scaled(&a4, b[5]) + scaled(&a2, b[3]);
    add_scaled_identity(&mut u, b[1]);
    let u = matmul(a, &u);
    inner = scaled(&a6, b[12]) + scaled(&a4, b[10]) + scaled(&a2, b[8]);
    let mut v = matmul(&a6, &inner) + scaled(&a6, b[6]) + scaled(&a4, b[4]) + scaled(&a2, b[2]);
    add_scaled_identity(&mut v, b[0]);
    (u, v)
}

/// Matrix exponential by scaling and squaring with a Padé approximant of
/// degree up to 13, choosing the lowest degree whose backward-error bound
/// covers the 1-norm.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            what: "expm operand".into(),
            expected: n,
            found: a.ncols(),
        });
    }
    if !all_finite(a) {
        return Err(Error::NonFinite {
            what: "expm operand".into(),
            index: None,
        });
    }
    if n == 0 {
        return Ok(CMatrix::zeros(0, 0));
    }
    let norm = one_norm(a);
    let (u, v, squarings) = if norm <= THETA3 {
        let (u, v) = pade_low(a, &PADE3);
        (u, v, 0)
    } else if norm <= THETA5 {
        let (u, v) = pade_low(a, &PADE5);
        (u, v, 0)
    } else if norm <= THETA7 {
        let (u, v) = pade_low(a, &PADE7);
        (u, v, 0)
    } else if norm <= THETA9 {
        let (u, v) = pade_low(a, &PADE9);
        (u, v, 0)
    } else {
        let s = ((norm / THETA13).log2().ceil()).max(0.0) as i32;
        let (u, v) = pade13(&scaled(a, 2f64.powi(-s)));
        (u, v, s)
    };
    let denominator = &v - &u;
    let numerator = &v + &u;
    let mut result = denominator.lu().solve(&numerator).ok_or_else(|| Error::NonFinite {
        what: "singular Padé denominator in expm".into(),
        index: None,
    })?;
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    if !all_finite(&result) {
        return Err(Error::NonFinite {
            what: "expm result".into(),
            index: None,
        });
    }
    Ok(result)
}

/// `exp(a)` together with the Fréchet derivative `L(a, e)`, read off the
/// exponential of the block upper-triangular matrix `[[a, e], [0, a]]`.
pub fn expm_frechet(a: &CMatrix, e: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    let n = a.nrows();
    let mut block = CMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(a);
    block.view_mut((n, n), (n, n)).copy_from(a);
    block.view_mut((0, n), (n, n)).copy_from(e);
    let big = expm(&block)?;
    Ok((
        big.view((0, 0), (n, n)).into_owned(),
        big.view((0, n), (n, n)).into_owned(),
    ))
}

/// Pulls a gradient back through `Y = exp(A)`: with `dF = Re Tr(Ḡ_Y† dY)`,
/// returns `Ḡ_A = L(A†, Ḡ_Y)`.
pub fn expm_pullback(a: &CMatrix, grad_out: &CMatrix) -> Result<CMatrix> {
    Ok(expm_frechet(&a.adjoint(), grad_out)?.1)
}

/// Standard complex Gaussian (Ginibre) matrix with `E|z|² = 1`.
pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(s * re, s * im)
    })
}

/// Haar-distributed unitary: QR of a Ginibre matrix with the phases of
/// `diag(R)` moved into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let qr = ginibre(n, n, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Hermitian `G` with `exp(iG) = u`, principal branch (eigenphases in (−π, π]).
///
/// The unitary is diagonalised through the commuting Hermitian pair
/// `(u + u†)/2` and `(u − u†)/2i`; a generic combination of the two shares
/// the eigenvectors of `u`.
pub fn unitary_log_hermitian(u: &CMatrix) -> Result<CMatrix> {
    let n = u.nrows();
    let cos_part = hermitian_part(u);
    let sin_part = (u - u.adjoint()) * C64::new(0.0, -0.5);
    for mix in [0.617_231_9, 1.383_107, -2.437_52, 0.291_73, 5.123_4] {
        let combo = &cos_part + &sin_part * C64::new(mix, 0.0);
        let (_, q) = hermitian_eigen(&combo);
        let rotated = q.adjoint() * u * &q;
        let offdiag: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| rotated[(i, j)].norm())
            .fold(0.0, f64::max);
        if offdiag > 1e-9 {
            continue;
        }
        let phases = CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(rotated[(i, i)].arg(), 0.0)
            } else {
                ZERO
            }
        });
        return Ok(hermitian_part(&conjugate_by(&q, &phases)));
    }
    Err(Error::InvalidArgument(
        "matrix is not unitary to working precision; no Hermitian logarithm".into(),
    ))
}

/// Projector `|v⟩⟨v|` for a column vector.
pub fn outer(v: &CVector, w: &CVector) -> CMatrix {
    v * w.adjoint()
}

/// Block-diagonal assembly of square blocks.
pub fn block_diagonal(blocks: &[CMatrix]) -> CMatrix {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMatrix::zeros(n, n);
    let mut offset = 0;
    for b in blocks {
        let d = b.nrows();
        out.view_mut((offset, offset), (d, d)).copy_from(b);
        offset += d;
    }
    out
}

/// Text form of a complex matrix: row-major real and imaginary parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&CMatrix> for MatrixRecord {
    fn from(m: &CMatrix) -> Self {
        let (rows, cols) = m.shape();
        let mut re = Vec::with_capacity(rows * cols);
        let mut im = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                re.push(m[(r, c)].re);
                im.push(m[(r, c)].im);
            }
        }
        Self { rows, cols, re, im }
    }
}

impl TryFrom<&MatrixRecord> for CMatrix {
    type Error = Error;

    fn try_from(r: &MatrixRecord) -> Result<Self> {
        let len = r.rows * r.cols;
        if r.re.len() != len || r.im.len() != len {
            return Err(Error::Format(format!(
                "matrix record {}x{} carries {} real and {} imaginary entries",
                r.rows,
                r.cols,
                r.re.len(),
                r.im.len()
            )));
        }
        Ok(CMatrix::from_fn(r.rows, r.cols, |i, j| {
            C64::new(r.re[i * r.cols + j], r.im[i * r.cols + j])
        }))
    }
}

/// `#[serde(with = "linalg::matrix_serde")]` for [`CMatrix`] fields.
pub mod matrix_serde {
    use super::{CMatrix, MatrixRecord};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        MatrixRecord::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let r = MatrixRecord::deserialize(d)?;
        CMatrix::try_from(&r).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    /// Truncated Taylor series evaluated with repeated halving; independent
    /// of the Padé path.
    fn taylor_expm(a: &CMatrix) -> CMatrix {
        let n = a.nrows();
        let s = 12;
        let small = a * C64::new(2f64.powi(-s), 0.0);
        let mut term = identity(n);
        let mut sum = identity(n);
        for k in 1..30 {
            term = &term * &small * C64::new(1.0 / k as f64, 0.0);
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let z = CMatrix::zeros(5, 5);
        assert_eq!(expm(&z).unwrap(), identity(5));
    }

    #[test]
    fn expm_matches_taylor_across_norm_regimes() {
        let mut r = rng();
        for scale in [1e-3, 0.1, 0.5, 1.5, 4.0, 20.0] {
            let a = ginibre(6, 6, &mut r) * C64::new(scale, 0.0);
            let e = expm(&a).unwrap();
            let t = taylor_expm(&a);
            let rel = (&e - &t).norm() / t.norm();
            assert!(rel < 1e-11, "scale {scale}: rel err {rel}");
        }
    }

    #[test]
    fn expm_diagonal_is_elementwise() {
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![
            C64::new(0.3, 1.0),
            C64::new(-2.0, 0.0),
            C64::new(7.0, -3.0),
        ]));
        let e = expm(&d).unwrap();
        for i in 0..3 {
            let want = d[(i, i)].exp();
            assert!((e[(i, i)] - want).norm() < 1e-12 * want.norm());
        }
    }

    #[test]
    fn expm_rejects_non_finite() {
        let mut a = CMatrix::zeros(2, 2);
        a[(0, 1)] = C64::new(f64::NAN, 0.0);
        assert!(matches!(expm(&a), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn frechet_matches_central_difference() {
        let mut r = rng();
        let a = ginibre(4, 4, &mut r);
        let e = ginibre(4, 4, &mut r);
        let (_, l) = expm_frechet(&a, &e).unwrap();
        let h = 1e-6;
        let plus = expm(&(&a + &e * C64::new(h, 0.0))).unwrap();
        let minus = expm(&(&a - &e * C64::new(h, 0.0))).unwrap();
        let fd = (plus - minus) * C64::new(0.5 / h, 0.0);
        assert!((&l - &fd).norm() < 1e-7 * l.norm());
    }

    #[test]
    fn pullback_is_adjoint_of_frechet() {
        let mut r = rng();
        let a = ginibre(3, 3, &mut r);
        let e = ginibre(3, 3, &mut r);
        let g = ginibre(3, 3, &mut r);
        let (_, l) = expm_frechet(&a, &e).unwrap();
        let back = expm_pullback(&a, &g).unwrap();
        assert!((real_inner(&g, &l) - real_inner(&back, &e)).abs() < 1e-12);
    }

    #[test]
    fn haar_unitary_is_unitary() {
        let mut r = rng();
        for n in 1..7 {
            assert!(unitarity_defect(&haar_unitary(n, &mut r)) < 1e-12);
        }
    }

    #[test]
    fn unitary_log_round_trips() {
        let mut r = rng();
        for n in 1..6 {
            let u = haar_unitary(n, &mut r);
            let g = unitary_log_hermitian(&u).unwrap();
            assert!(hermiticity_defect(&g) < 1e-12);
            let back = expm(&(&g * I)).unwrap();
            assert!((back - &u).norm() < 1e-10, "n={n}");
        }
        // Degenerate spectrum: a permutation matrix.
        let mut p = CMatrix::zeros(4, 4);
        for (i, j) in [(0, 2), (1, 3), (2, 0), (3, 1)] {
            p[(i, j)] = ONE;
        }
        let g = unitary_log_hermitian(&p).unwrap();
        assert!((expm(&(&g * I)).unwrap() - &p).norm() < 1e-10);
    }

    #[test]
    fn zgemm_path_agrees_with_generic_product() {
        let mut r = rng();
        let a = ginibre(40, 33, &mut r);
        let b = ginibre(33, 37, &mut r);
        assert!((matmul(&a, &b) - &a * &b).norm() < 1e-11);
    }

    #[test]
    fn kron_vectorization_identity() {
        let mut r = rng();
        let a = ginibre(3, 3, &mut r);
        let x = ginibre(3, 3, &mut r);
        let b = ginibre(3, 3, &mut r);
        let lhs = vectorize(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vectorize(&x);
        assert!((lhs - rhs).norm() < 1e-12);
    }
}
