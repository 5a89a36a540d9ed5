#![allow(dead_code)]

use h2bem::dense::Matrix;
use h2bem::mesh::SurfaceMesh;
use h2bem::vec3::{self, Point3};
use h2bem::Complex;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// ∫_T ∫_T 1/|x − y| for the right triangle with unit legs, evaluated from
/// the closed form for a triangle with sides a, b, c and area A:
/// (4A²/3) Σ_cyclic (1/a) ln[((a + b)² − c²) / (b² − (a − c)²)].
pub fn coulomb_self_integral(p: [Point3<f64>; 3]) -> f64 {
    let a = vec3::dist(p[1], p[2]);
    let b = vec3::dist(p[2], p[0]);
    let c = vec3::dist(p[0], p[1]);
    let area = 0.5 * vec3::norm(vec3::cross(vec3::sub(p[1], p[0]), vec3::sub(p[2], p[0])));
    let term = |a: f64, b: f64, c: f64| ((a + b).powi(2) - c * c).ln() / a - (b * b - (a - c).powi(2)).ln() / a;
    4.0 * area * area / 3.0 * (term(a, b, c) + term(b, c, a) + term(c, a, b))
}

pub const UNIT_TRIANGLE: [Point3<f64>; 3] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]];

/// Frozen value of [`coulomb_self_integral`] on [`UNIT_TRIANGLE`].
pub const UNIT_TRIANGLE_COULOMB: f64 = 1.003065884773182;

pub fn single_panel(p: [Point3<f64>; 3]) -> SurfaceMesh<f64> {
    SurfaceMesh::new(p.to_vec(), vec![[0, 1, 2]]).unwrap()
}

pub fn to_nalgebra(m: &Matrix<f64>) -> DMatrix<Complex<f64>> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

pub fn from_nalgebra(m: &DMatrix<Complex<f64>>) -> Matrix<f64> {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn frobenius(m: &DMatrix<Complex<f64>>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `Q₁ diag(σ) Q₂ᵀ` with Haar-like orthogonal factors from QR of Gaussian
/// matrices.
pub fn graded_matrix(n: usize, sigma: &[f64], seed: u64) -> DMatrix<Complex<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || {
        let u: f64 = rng.gen_range(1e-12..1.0);
        let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        (-2.0 * u.ln()).sqrt() * v.cos()
    };
    let q1 = DMatrix::<f64>::from_fn(n, n, |_, _| gauss()).qr().q();
    let q2 = DMatrix::<f64>::from_fn(n, n, |_, _| gauss()).qr().q();
    let d = DMatrix::<f64>::from_fn(n, n, |i, j| if i == j { sigma[i] } else { 0.0 });
    (q1 * d * q2.transpose()).map(|x| Complex::new(x, 0.0))
}

/// Best Frobenius error of a rank-`k` approximation, from the singular
/// values.
pub fn svd_tail(m: &DMatrix<Complex<f64>>, k: usize) -> f64 {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s.iter().skip(k).map(|x| x * x).sum::<f64>().sqrt()
}

pub fn random_vector(n: usize, seed: u64) -> Vec<Complex<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

pub fn rel_diff(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den
}
