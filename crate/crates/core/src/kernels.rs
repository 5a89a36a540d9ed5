//! Laplace and Helmholtz single/double layer kernels.
//!
//! Laplace: `g(x, y) = 1 / (4π |x - y|)`.
//! Helmholtz: `g(x, y) = exp(iκ |x - y|) / |x - y|`, without the `1/(4π)`
//! factor; the solver applies that normalisation where it needs it.
//! The double layer kernel is `∂g/∂n(y)` with the trial panel normal.

use crate::error::{Error, Result};
use crate::scalar::{Complex, Real};
use crate::vec3::{self, Point3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Equation {
    Laplace,
    Helmholtz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layer {
    Single,
    Double,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec<T> {
    pub equation: Equation,
    pub layer: Layer,
    /// Wave number, ignored for Laplace.
    pub kappa: T,
}

impl<T: Real> KernelSpec<T> {
    pub fn laplace_slp() -> Self {
        Self {
            equation: Equation::Laplace,
            layer: Layer::Single,
            kappa: T::zero(),
        }
    }

    pub fn laplace_dlp() -> Self {
        Self {
            equation: Equation::Laplace,
            layer: Layer::Double,
            kappa: T::zero(),
        }
    }

    pub fn helmholtz_slp(kappa: T) -> Self {
        Self {
            equation: Equation::Helmholtz,
            layer: Layer::Single,
            kappa,
        }
    }

    pub fn helmholtz_dlp(kappa: T) -> Self {
        Self {
            equation: Equation::Helmholtz,
            layer: Layer::Double,
            kappa,
        }
    }

    /// Same equation, single layer.
    pub fn single_layer(&self) -> Self {
        Self {
            layer: Layer::Single,
            ..*self
        }
    }

    /// Same equation, double layer.
    pub fn double_layer(&self) -> Self {
        Self {
            layer: Layer::Double,
            ..*self
        }
    }

    /// Single layer kernels satisfy `g(x, y) = g(y, x)`.
    pub fn is_symmetric(&self) -> bool {
        self.layer == Layer::Single
    }

    /// `g(x, y)` or `∂g/∂n(y)`; errors when `x == y`.
    pub fn eval(&self, x: Point3<T>, y: Point3<T>, n_y: Point3<T>) -> Result<Complex<T>> {
        if x == y {
            return Err(Error::Domain);
        }
        Ok(self.eval_unchecked(x, y, n_y))
    }

    /// Elementwise [`eval`](Self::eval) with the same arithmetic.
    pub fn eval_batch(
        &self,
        xs: &[Point3<T>],
        ys: &[Point3<T>],
        normals: &[Point3<T>],
    ) -> Result<Vec<Complex<T>>> {
        if ys.len() != xs.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                actual: ys.len(),
            });
        }
        if normals.len() != xs.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                actual: normals.len(),
            });
        }
        if xs.iter().zip(ys).any(|(x, y)| x == y) {
            return Err(Error::Domain);
        }
        let mut out = Vec::with_capacity(xs.len());
        self.eval_into(xs, ys, normals, &mut out);
        Ok(out)
    }

    pub(crate) fn eval_into(
        &self,
        xs: &[Point3<T>],
        ys: &[Point3<T>],
        normals: &[Point3<T>],
        out: &mut Vec<Complex<T>>,
    ) {
        out.extend(
            xs.iter()
                .zip(ys)
                .zip(normals)
                .map(|((x, y), n)| self.eval_unchecked(*x, *y, *n)),
        );
    }

    /// Kernel value without the coincidence check. Returns a non-finite
    /// value at `x == y`.
    #[inline(always)]
    pub(crate) fn eval_unchecked(&self, x: Point3<T>, y: Point3<T>, n_y: Point3<T>) -> Complex<T> {
        let d = vec3::sub(x, y);
        let r2 = vec3::dot(d, d);
        let r = r2.sqrt();
        match (self.equation, self.layer) {
            (Equation::Laplace, Layer::Single) => {
                Complex::new(T::FRAC_1_PI() / (T::lit(4.0) * r), T::zero())
            }
            (Equation::Laplace, Layer::Double) => {
                let dn = vec3::dot(d, n_y);
                Complex::new(T::FRAC_1_PI() * dn / (T::lit(4.0) * r2 * r), T::zero())
            }
            (Equation::Helmholtz, Layer::Single) => {
                let (s, c) = (self.kappa * r).sin_cos();
                Complex::new(c / r, s / r)
            }
            (Equation::Helmholtz, Layer::Double) => {
                let kr = self.kappa * r;
                let (s, c) = kr.sin_cos();
                let f = vec3::dot(d, n_y) / (r2 * r);
                Complex::new((c + kr * s) * f, (s - kr * c) * f)
            }
        }
    }

    /// `∂²g/∂n(y)∂n(z)` evaluated for the pair `(z, y)`. Needed for the
    /// column-side Green quadrature of double layer operators.
    #[inline]
    pub(crate) fn double_normal_derivative(
        &self,
        z: Point3<T>,
        n_z: Point3<T>,
        y: Point3<T>,
        n_y: Point3<T>,
    ) -> Complex<T> {
        let d = vec3::sub(y, z);
        let r2 = vec3::dot(d, d);
        let r = r2.sqrt();
        let dny = vec3::dot(d, n_y);
        let dnz = vec3::dot(d, n_z);
        let nn = vec3::dot(n_y, n_z);
        match self.equation {
            Equation::Laplace => {
                let v = (nn / (r2 * r) - T::lit(3.0) * dnz * dny / (r2 * r2 * r))
                    * T::FRAC_1_PI()
                    / T::lit(4.0);
                Complex::new(v, T::zero())
            }
            Equation::Helmholtz => {
                // g = h(r); q(r) = h'(r)/r, result = -(q'(r)/r <d,n_y><d,n_z> + q(r) <n_y,n_z>)
                let kr = self.kappa * r;
                let e = Complex::new(T::zero(), kr).exp();
                let q = e * Complex::new(-T::one(), kr) / (r2 * r);
                let qp = e
                    * Complex::new(T::lit(3.0) - kr * kr, -T::lit(3.0) * kr)
                    / (r2 * r2);
                -(qp * (dny * dnz / r) + q * nn)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const Z: [f64; 3] = [0.0, 0.0, 1.0];

    #[test]
    fn laplace_slp_at_unit_distance() {
        let g = KernelSpec::<f64>::laplace_slp()
            .eval([0.0; 3], [1.0, 0.0, 0.0], Z)
            .unwrap();
        assert_abs_diff_eq!(g.re, 0.0795774715459477, epsilon = 1e-15);
        assert_eq!(g.im, 0.0);
    }

    #[test]
    fn laplace_dlp_orthogonal_is_zero() {
        let g = KernelSpec::<f64>::laplace_dlp()
            .eval([0.0; 3], [1.0, 0.0, 0.0], Z)
            .unwrap();
        assert_eq!(g.re, 0.0);
    }

    #[test]
    fn helmholtz_zero_wavenumber_is_inverse_distance() {
        let g = KernelSpec::helmholtz_slp(0.0)
            .eval([0.0; 3], [0.0, 2.0, 0.0], Z)
            .unwrap();
        assert_eq!(g, Complex::new(0.5, 0.0));
    }

    #[test]
    fn coincident_points_are_a_domain_error() {
        assert!(matches!(
            KernelSpec::<f64>::laplace_slp().eval([1.0; 3], [1.0; 3], Z),
            Err(Error::Domain)
        ));
    }

    #[test]
    fn batch_matches_scalar_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let specs = [
            KernelSpec::laplace_slp(),
            KernelSpec::laplace_dlp(),
            KernelSpec::helmholtz_slp(3.0),
            KernelSpec::helmholtz_dlp(3.0),
        ];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ns = Vec::new();
        for _ in 0..1000 {
            let x: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let y = [x[0] + 1.0 + rng.gen::<f64>(), rng.gen(), rng.gen()];
            xs.push(x);
            ys.push(y);
            ns.push(vec3::normalize([rng.gen::<f64>() - 0.5, rng.gen(), 0.3]));
        }
        for spec in specs {
            let batch = spec.eval_batch(&xs, &ys, &ns).unwrap();
            for k in 0..xs.len() {
                assert_eq!(batch[k], spec.eval(xs[k], ys[k], ns[k]).unwrap());
            }
            assert_eq!(spec.eval_batch(&xs[..1], &ys[..1], &ns[..1]).unwrap()[0], batch[0]);
        }
        let spec = KernelSpec::<f64>::laplace_slp();
        assert!(spec.eval_batch(&[], &[], &[]).unwrap().is_empty());
        assert!(matches!(
            spec.eval_batch(&xs[..2], &ys[..1], &ns[..2]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_layer_is_symmetric() {
        let a = [0.1, -0.3, 0.7];
        let b = [1.2, 0.4, -0.2];
        for spec in [KernelSpec::laplace_slp(), KernelSpec::helmholtz_slp(3.0)] {
            assert_eq!(spec.eval(a, b, Z).unwrap(), spec.eval(b, a, Z).unwrap());
        }
    }

    #[test]
    fn helmholtz_modulus_is_inverse_distance() {
        let spec = KernelSpec::helmholtz_slp(3.0);
        for r in [0.1, 0.77, 1.0, 5.3] {
            let g = spec.eval([0.0; 3], [r, 0.0, 0.0], Z).unwrap();
            assert!((g.norm() - 1.0 / r).abs() <= 1e-15 / r);
        }
    }

    fn fd_laplacian(spec: &KernelSpec<f64>, x: [f64; 3], y: [f64; 3], h: f64) -> Complex<f64> {
        let g0 = spec.eval(x, y, Z).unwrap();
        let mut lap = Complex::new(0.0, 0.0);
        for k in 0..3 {
            let mut p = x;
            let mut m = x;
            p[k] += h;
            m[k] -= h;
            lap += spec.eval(p, y, Z).unwrap() + spec.eval(m, y, Z).unwrap() - g0 * 2.0;
        }
        lap / (h * h)
    }

    #[test]
    fn laplace_kernel_is_harmonic() {
        let spec = KernelSpec::laplace_slp();
        let lap = fd_laplacian(&spec, [0.6, 0.0, 0.8], [0.0; 3], 1e-3);
        assert!(lap.norm() <= 1e-5);
    }

    #[test]
    fn helmholtz_kernel_solves_helmholtz_equation() {
        let spec = KernelSpec::helmholtz_slp(3.0);
        let (x, y) = ([0.6, 0.0, 0.8], [0.0; 3]);
        let g = spec.eval(x, y, Z).unwrap();
        let res = fd_laplacian(&spec, x, y, 1e-3) + g * 9.0;
        assert!(res.norm() <= 1e-4 * g.norm());
    }

    fn fd_normal(spec: KernelSpec<f64>, x: [f64; 3], y: [f64; 3], n: [f64; 3]) -> Complex<f64> {
        let h = 1e-5;
        let yp = vec3::add(y, vec3::scale(n, h));
        let ym = vec3::sub(y, vec3::scale(n, h));
        (spec.eval(x, yp, n).unwrap() - spec.eval(x, ym, n).unwrap()) / (2.0 * h)
    }

    #[test]
    fn double_layer_is_normal_derivative_of_single_layer() {
        let x = [0.3, -0.2, 0.9];
        let y = [-0.4, 0.5, 0.1];
        let n = vec3::normalize([0.2, -0.7, 0.4]);
        for slp in [KernelSpec::laplace_slp(), KernelSpec::helmholtz_slp(3.0)] {
            let fd = fd_normal(slp, x, y, n);
            let dlp = slp.double_layer().eval(x, y, n).unwrap();
            assert!((fd - dlp).norm() <= 1e-8 * dlp.norm().max(1e-3));
        }
    }

    #[test]
    fn double_normal_derivative_matches_finite_differences() {
        let z = [0.3, -0.2, 0.9];
        let nz = vec3::normalize([0.1, 0.3, -0.9]);
        let y = [-0.4, 0.5, 0.1];
        let ny = vec3::normalize([0.2, -0.7, 0.4]);
        for spec in [KernelSpec::laplace_dlp(), KernelSpec::helmholtz_dlp(3.0)] {
            // ∂/∂n_z of ∂g/∂n_y (z, y), the DLP kernel with x := z.
            let h = 1e-5;
            let zp = vec3::add(z, vec3::scale(nz, h));
            let zm = vec3::sub(z, vec3::scale(nz, h));
            let fd = (spec.eval(zp, y, ny).unwrap() - spec.eval(zm, y, ny).unwrap()) / (2.0 * h);
            let exact = spec.double_normal_derivative(z, nz, y, ny);
            assert!((fd - exact).norm() <= 1e-7 * exact.norm(), "{fd} vs {exact}");
        }
    }
}
