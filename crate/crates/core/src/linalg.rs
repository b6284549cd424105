//! Dense complex linear algebra used throughout the crate.
//!
//! Everything here is a pure function of its inputs. Matrices are plain
//! `nalgebra::DMatrix<Complex64>`; the helpers cover the handful of
//! operations the dynamics need: exponentials, null spaces, Moore-Penrose
//! pseudoinverses and time-ordered exponentials.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Imaginary unit.
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default relative singular-value cutoff for kernels and pseudoinverses.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn zeros(n: usize) -> CMatrix {
    CMatrix::zeros(n, n)
}

/// Build a matrix from real row-major data.
pub fn from_real_rows(n: usize, data: &[f64]) -> CMatrix {
    CMatrix::from_row_iterator(n, n, data.iter().map(|&x| real(x)))
}

pub fn diag_real(d: &[f64]) -> CMatrix {
    let mut m = zeros(d.len());
    for (k, &x) in d.iter().enumerate() {
        m[(k, k)] = real(x);
    }
    m
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn anticommutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b + b * a
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.norm()
}

/// `||A - A^dag||_F`.
pub fn hermiticity_defect(a: &CMatrix) -> f64 {
    (a - a.adjoint()).norm()
}

/// `||U^dag U - 1||_F`.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    (u.adjoint() * u - identity(u.ncols())).norm()
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * real(0.5)
}

pub fn ensure_square(a: &CMatrix) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if a.nrows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(a.nrows())
}

/// Column-wise outer product `|u><v|`.
pub fn outer(u: &CVector, v: &CVector) -> CMatrix {
    u * v.adjoint()
}

/// Eigendecomposition of the Hermitian part of `a`, eigenvalues ascending.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Smallest eigenvalue of the Hermitian part of `a`.
pub fn min_hermitian_eigenvalue(a: &CMatrix) -> f64 {
    SymmetricEigen::new(hermitian_part(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Rebuild `V f(diag) V^dag` from a Hermitian eigendecomposition.
pub fn spectral_apply(values: &[f64], vectors: &CMatrix, f: impl Fn(f64) -> Complex64) -> CMatrix {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (k, &lam) in values.iter().enumerate() {
        let w = f(lam);
        for r in 0..n {
            scaled[(r, k)] *= w;
        }
    }
    scaled * vectors.adjoint()
}

/// Eigenvalues of a general complex square matrix via the Schur form.
pub fn eigenvalues(a: &CMatrix) -> Result<Vec<Complex64>> {
    let n = ensure_square(a)?;
    if !is_finite(a) {
        return Err(Error::NonFinite { phase: f64::NAN });
    }
    if n == 1 {
        return Ok(vec![a[(0, 0)]]);
    }
    let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::InvalidParameter("Schur iteration did not converge".into()))?;
    let (_, t) = schur.unpack();
    let scale = t.norm().max(1.0);
    let mut out = Vec::with_capacity(n);
    let mut m = 0;
    while m < n {
        if m + 1 < n && t[(m + 1, m)].norm() > 1e-14 * scale {
            // Leftover 2x2 block.
            let (p, q, r, s) = (t[(m, m)], t[(m, m + 1)], t[(m + 1, m)], t[(m + 1, m + 1)]);
            let half_tr = (p + s) * 0.5;
            let det = p * s - q * r;
            let disc = (half_tr * half_tr - det).sqrt();
            out.push(half_tr + disc);
            out.push(half_tr - disc);
            m += 2;
        } else {
            out.push(t[(m, m)]);
            m += 1;
        }
    }
    Ok(out)
}

fn one_norm(a: &CMatrix) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
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

/// Scaling and squaring with a degree-13 diagonal Padé approximant.
pub fn pade_exp(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * real(0.5f64.powi(s));
    let id = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = |k: usize| real(PADE13[k]);
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
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Matrix exponential `e^A`.
///
/// Hermitian and anti-Hermitian inputs go through an eigendecomposition,
/// which keeps `exp(-iHt)` unitary to machine precision. Everything else
/// uses [`pade_exp`].
pub fn matrix_exp(a: &CMatrix) -> Result<CMatrix> {
    ensure_square(a)?;
    if !is_finite(a) {
        return Err(Error::NonFinite { phase: f64::NAN });
    }
    let scale = a.norm();
    if scale == 0.0 {
        return Ok(identity(a.nrows()));
    }
    let tol = 1e-14 * scale;
    if hermiticity_defect(a) <= tol {
        let (vals, vecs) = hermitian_eigen(a);
        return Ok(spectral_apply(&vals, &vecs, |l| real(l.exp())));
    }
    if (a + a.adjoint()).norm() <= tol {
        // A = iK with K Hermitian.
        let k = a * (-I);
        let (vals, vecs) = hermitian_eigen(&k);
        return Ok(spectral_apply(&vals, &vecs, |l| Complex64::from_polar(1.0, l)));
    }
    Ok(pade_exp(a))
}

/// Real representation `[[Re A, -Im A], [Im A, Re A]]` of a complex matrix.
///
/// The SVD runs on this embedding: nalgebra's complex SVD loses accuracy on
/// rank-deficient input, while the real algorithm stays backward stable.
fn real_embedding(a: &CMatrix) -> DMatrix<f64> {
    let n = a.nrows();
    let m = a.ncols();
    DMatrix::from_fn(2 * n, 2 * m, |i, j| {
        let z = a[(i % n, j % m)];
        match (i < n, j < m) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Orthonormal basis of the right null space of `a`: right singular vectors
/// whose singular value falls below `rel_tol * sigma_max`.
pub fn kernel_basis(a: &CMatrix, rel_tol: f64) -> Result<Vec<CVector>> {
    let n = ensure_square(a)?;
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidParameter(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
    }
    let svd = SVD::new(real_embedding(a), false, true);
    let v_t = svd.v_t.expect("requested V");
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_tol * sigma_max;
    // Each complex null vector v appears twice in the real kernel, as
    // (Re v, Im v) and (-Im v, Re v); Gram-Schmidt keeps one per pair.
    let mut out: Vec<CVector> = Vec::new();
    for k in 0..2 * n {
        if !(sigma_max == 0.0 || svd.singular_values[k] < cutoff) {
            continue;
        }
        let row = v_t.row(k);
        let mut z = CVector::from_fn(n, |i, _| c64(row[i], row[n + i]));
        for _ in 0..2 {
            for q in &out {
                let proj = q.dotc(&z);
                z -= q * proj;
            }
        }
        let norm = z.norm();
        if norm > 0.5 {
            out.push(z / real(norm));
        }
    }
    Ok(out)
}

/// Moore-Penrose pseudoinverse with a relative singular-value cutoff.
pub fn pseudo_inverse(a: &CMatrix, rel_tol: f64) -> Result<CMatrix> {
    let n = ensure_square(a)?;
    let svd = SVD::new(real_embedding(a), true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V");
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_tol * sigma_max;
    let mut pinv = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for k in 0..2 * n {
        let sv = svd.singular_values[k];
        if sigma_max == 0.0 || sv < cutoff {
            continue;
        }
        pinv += v_t.row(k).transpose() * u.column(k).transpose() * (1.0 / sv);
    }
    // The pseudoinverse of the embedding is the embedding of the pseudoinverse.
    Ok(CMatrix::from_fn(n, n, |i, j| c64(pinv[(i, j)], pinv[(n + i, j)])))
}

/// Time-ordered exponential `T exp(∫ G(s) ds)` by the midpoint product rule,
/// later phases multiplying from the left.
pub fn ordered_exponential<F>(mut generator: F, s0: f64, s1: f64, steps: usize) -> Result<CMatrix>
where
    F: FnMut(f64) -> CMatrix,
{
    if steps == 0 {
        return Err(Error::InvalidParameter("ordered_exponential needs steps >= 1".into()));
    }
    let ds = (s1 - s0) / steps as f64;
    let mut out: Option<CMatrix> = None;
    for k in 0..steps {
        let mid = s0 + (k as f64 + 0.5) * ds;
        let g = generator(mid);
        if !is_finite(&g) {
            return Err(Error::NonFinite { phase: mid });
        }
        let step = matrix_exp(&(g * real(ds)))?;
        out = Some(match out {
            None => step,
            Some(acc) => step * acc,
        });
    }
    Ok(out.expect("steps >= 1"))
}

/// Row-major vectorization: `vec(rho)[i * d + j] = rho[i, j]`.
pub fn vec_row_major(m: &CMatrix) -> CVector {
    let d = m.nrows();
    CVector::from_iterator(d * m.ncols(), (0..d).flat_map(|i| (0..m.ncols()).map(move |j| (i, j))).map(|ij| m[ij]))
}

pub fn unvec_row_major(v: &CVector, d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |i, j| v[i * d + j])
}

/// Trace distance `½||a - b||_1` for Hermitian arguments.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = hermitian_part(&(a - b));
    let eig = SymmetricEigen::new(diff);
    0.5 * eig.eigenvalues.iter().map(|x| x.abs()).sum::<f64>()
}
