//! Krylov solvers and the Laplace / Helmholtz boundary value problems.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::gca::GcaParams;
use crate::h2::{GCAMatrix, GcaSetup, SetupParams};
use crate::kernels::KernelSpec;
use crate::mesh::{SurfaceMesh, IDENTITY_PERM};
use crate::quadrature::triangle_rule;
use crate::scalar::{czero, dot_c, norm2, Complex, Real};
use crate::scheduler::{run_assembly, AssemblyStats, SchedulerConfig};
use crate::vec3::{self, Point3};

pub const DEFAULT_CG_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERATIONS: usize = 1000;
/// Triangle rule order for panel averages and right-hand sides.
pub const DATA_RULE_ORDER: usize = 3;
/// Triangle rule order for L² error integrals.
pub const ERROR_RULE_ORDER: usize = 6;

/// Square matrix applied to complex vectors.
pub trait LinearOperator<T: Real>: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[Complex<T>], y: &mut [Complex<T>]) -> Result<()>;

    fn is_hermitian(&self) -> bool {
        false
    }

    fn is_positive_definite(&self) -> bool {
        false
    }
}

/// Property flags attached to an operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OperatorFlags {
    pub hermitian: bool,
    pub positive_definite: bool,
}

impl OperatorFlags {
    pub const SPD: Self = Self {
        hermitian: true,
        positive_definite: true,
    };
}

pub struct DenseOperator<'a, T> {
    pub matrix: &'a Matrix<T>,
    pub flags: OperatorFlags,
}

impl<T: Real> LinearOperator<T> for DenseOperator<'_, T> {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn apply(&self, x: &[Complex<T>], y: &mut [Complex<T>]) -> Result<()> {
        y.iter_mut().for_each(|v| *v = czero());
        self.matrix.gemv_acc(x, y);
        Ok(())
    }

    fn is_hermitian(&self) -> bool {
        self.flags.hermitian
    }

    fn is_positive_definite(&self) -> bool {
        self.flags.positive_definite
    }
}

pub struct CompressedOperator<'a, T> {
    pub matrix: &'a GCAMatrix<T>,
    pub flags: OperatorFlags,
}

impl<T: Real> LinearOperator<T> for CompressedOperator<'_, T> {
    fn dim(&self) -> usize {
        self.matrix.num_rows()
    }

    fn apply(&self, x: &[Complex<T>], y: &mut [Complex<T>]) -> Result<()> {
        self.matrix.matvec_into(x, y)
    }

    fn is_hermitian(&self) -> bool {
        self.flags.hermitian
    }

    fn is_positive_definite(&self) -> bool {
        self.flags.positive_definite
    }
}

/// Operator given by a closure.
pub struct FnOperator<F> {
    pub dim: usize,
    pub f: F,
    pub flags: OperatorFlags,
}

impl<T, F> LinearOperator<T> for FnOperator<F>
where
    T: Real,
    F: Fn(&[Complex<T>], &mut [Complex<T>]) -> Result<()> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[Complex<T>], y: &mut [Complex<T>]) -> Result<()> {
        (self.f)(x, y)
    }

    fn is_hermitian(&self) -> bool {
        self.flags.hermitian
    }

    fn is_positive_definite(&self) -> bool {
        self.flags.positive_definite
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult<T> {
    pub x: Vec<Complex<T>>,
    pub iterations: usize,
    /// Relative Euclidean residuals, starting with the initial one.
    pub residuals: Vec<T>,
    pub converged: bool,
}

fn check_dims<T: Real>(a: &dyn LinearOperator<T>, b: &[Complex<T>]) -> Result<()> {
    if b.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Conjugate gradients from a zero initial guess. Stops when
/// `‖b − Ax‖ ≤ tol·‖b‖`; hitting `maxit` is reported, not an error.
pub fn cg_solve<T: Real>(
    a: &dyn LinearOperator<T>,
    b: &[Complex<T>],
    tol: T,
    maxit: usize,
) -> Result<SolveResult<T>> {
    check_dims(a, b)?;
    if !(a.is_hermitian() && a.is_positive_definite()) {
        return Err(Error::InvalidArgument(
            "conjugate gradients need a Hermitian positive definite operator".into(),
        ));
    }
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![czero(); n];
    if bnorm == T::zero() {
        return Ok(SolveResult {
            x,
            iterations: 0,
            residuals: vec![T::zero()],
            converged: true,
        });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![czero(); n];
    let mut rr = dot_c(&r, &r).re;
    let mut residuals = vec![T::one()];
    let mut iterations = 0;
    while iterations < maxit {
        if rr.sqrt() <= tol * bnorm {
            break;
        }
        a.apply(&p, &mut ap)?;
        let pap = dot_c(&p, &ap).re;
        if !(pap > T::zero()) {
            return Err(Error::NotPositiveDefinite(pap.as_f64()));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] = x[i] + p[i] * alpha;
            r[i] = r[i] - ap[i] * alpha;
        }
        let rr_new = dot_c(&r, &r).re;
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + p[i] * beta;
        }
        rr = rr_new;
        iterations += 1;
        residuals.push(rr.sqrt() / bnorm);
    }
    Ok(SolveResult {
        converged: rr.sqrt() <= tol * bnorm,
        x,
        iterations,
        residuals,
    })
}

/// Unrestarted GMRES from a zero initial guess with modified Gram–Schmidt
/// and Givens rotations. Fails with [`Error::Stagnation`] after `maxit`
/// steps without convergence.
pub fn gmres<T: Real>(
    a: &dyn LinearOperator<T>,
    b: &[Complex<T>],
    tol: T,
    maxit: usize,
) -> Result<SolveResult<T>> {
    check_dims(a, b)?;
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == T::zero() {
        return Ok(SolveResult {
            x: vec![czero(); n],
            iterations: 0,
            residuals: vec![T::zero()],
            converged: true,
        });
    }
    let mut basis: Vec<Vec<Complex<T>>> = vec![b.iter().map(|v| v / bnorm).collect()];
    let mut h: Vec<Vec<Complex<T>>> = Vec::new();
    let mut cs: Vec<Complex<T>> = Vec::new();
    let mut sn: Vec<Complex<T>> = Vec::new();
    let mut g = vec![Complex::new(bnorm, T::zero())];
    let mut residuals = vec![T::one()];
    let mut w = vec![czero(); n];
    let mut k = 0;
    let mut converged = false;
    while k < maxit.min(n) {
        a.apply(&basis[k], &mut w)?;
        let mut col = vec![czero(); k + 2];
        for (j, v) in basis.iter().enumerate() {
            let hij = dot_c(v, &w);
            col[j] = hij;
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi = *wi - vi * hij;
            }
        }
        let hnext = norm2(&w);
        col[k + 1] = Complex::new(hnext, T::zero());
        for j in 0..k {
            let t = cs[j] * col[j] + sn[j] * col[j + 1];
            col[j + 1] = -sn[j].conj() * col[j] + cs[j] * col[j + 1];
            col[j] = t;
        }
        let (c, s) = givens(col[k], col[k + 1]);
        col[k] = c * col[k] + s * col[k + 1];
        col[k + 1] = czero();
        cs.push(c);
        sn.push(s);
        let gk = g[k];
        g[k] = c * gk;
        g.push(-s.conj() * gk);
        h.push(col);
        k += 1;
        let res = g[k].norm() / bnorm;
        residuals.push(res);
        if res <= tol {
            converged = true;
            break;
        }
        if hnext == T::zero() {
            break;
        }
        basis.push(w.iter().map(|v| v / hnext).collect());
    }
    // Back substitution on the triangular factor.
    let mut y = vec![czero(); k];
    for i in (0..k).rev() {
        let mut acc = g[i];
        for j in i + 1..k {
            acc = acc - h[j][i] * y[j];
        }
        y[i] = acc / h[i][i];
    }
    let mut x = vec![czero(); n];
    for (j, yj) in y.iter().enumerate() {
        for (xi, vi) in x.iter_mut().zip(&basis[j]) {
            *xi = *xi + vi * yj;
        }
    }
    if !converged {
        // A happy breakdown solves the system exactly; verify before failing.
        let mut ax = vec![czero(); n];
        a.apply(&x, &mut ax)?;
        let r: Vec<_> = b.iter().zip(&ax).map(|(u, v)| u - v).collect();
        let rel = norm2(&r) / bnorm;
        if rel <= tol {
            converged = true;
        } else {
            return Err(Error::Stagnation {
                iterations: k,
                residual: rel.as_f64(),
            });
        }
    }
    Ok(SolveResult {
        x,
        iterations: k,
        residuals,
        converged,
    })
}

/// Rotation `(c, s)` with `c` real such that `[c s; -s̄ c]·[a; b] = [r; 0]`.
fn givens<T: Real>(a: Complex<T>, b: Complex<T>) -> (Complex<T>, Complex<T>) {
    let an = a.norm();
    let bn = b.norm();
    if bn == T::zero() {
        return (Complex::new(T::one(), T::zero()), czero());
    }
    if an == T::zero() {
        return (czero(), b.conj() / bn);
    }
    let r = an.hypot(bn);
    let phase = a / an;
    (Complex::new(an / r, T::zero()), phase * b.conj() / r)
}

/// CG for operators flagged Hermitian positive definite, GMRES otherwise.
pub fn solve<T: Real>(a: &dyn LinearOperator<T>, b: &[Complex<T>], tol: T, maxit: usize) -> Result<SolveResult<T>> {
    if a.is_hermitian() && a.is_positive_definite() {
        cg_solve(a, b, tol, maxit)
    } else {
        gmres(a, b, tol, maxit)
    }
}

/// Boundary data given in closed form.
pub trait AnalyticFunction<T: Real>: Sync {
    fn value(&self, x: Point3<T>) -> Complex<T>;

    fn gradient(&self, x: Point3<T>) -> [Complex<T>; 3];

    fn normal_derivative(&self, x: Point3<T>, n: Point3<T>) -> Complex<T> {
        let g = self.gradient(x);
        g[0] * n[0] + g[1] * n[1] + g[2] * n[2]
    }
}

/// Harmonic functions used as Laplace test data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Harmonic<T> {
    Constant(T),
    /// `x₁² − x₃²`.
    Quadratic,
    /// `1 / (4π |x − p|)` with the pole `p` outside the domain.
    PointSource(Point3<T>),
}

impl<T: Real> Harmonic<T> {
    /// The three standard test functions.
    pub fn standard() -> [Self; 3] {
        [
            Harmonic::Quadratic,
            Harmonic::PointSource([T::lit(1.2), T::lit(1.2), T::lit(1.2)]),
            Harmonic::PointSource([T::one(), T::lit(0.25), T::one()]),
        ]
    }
}

impl<T: Real> AnalyticFunction<T> for Harmonic<T> {
    fn value(&self, x: Point3<T>) -> Complex<T> {
        let v = match self {
            Harmonic::Constant(c) => *c,
            Harmonic::Quadratic => x[0] * x[0] - x[2] * x[2],
            Harmonic::PointSource(p) => T::FRAC_1_PI() / (T::lit(4.0) * vec3::dist(x, *p)),
        };
        Complex::new(v, T::zero())
    }

    fn gradient(&self, x: Point3<T>) -> [Complex<T>; 3] {
        let g = match self {
            Harmonic::Constant(_) => [T::zero(); 3],
            Harmonic::Quadratic => [T::lit(2.0) * x[0], T::zero(), -T::lit(2.0) * x[2]],
            Harmonic::PointSource(p) => {
                let d = vec3::sub(x, *p);
                let r = vec3::norm(d);
                vec3::scale(d, -T::FRAC_1_PI() / (T::lit(4.0) * r * r * r))
            }
        };
        g.map(|c| Complex::new(c, T::zero()))
    }
}

/// `e^{iκ|x − p|} / |x − p|`, the Helmholtz kernel without `1/(4π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HelmholtzPointSource<T> {
    pub source: Point3<T>,
    pub kappa: T,
}

impl<T: Real> AnalyticFunction<T> for HelmholtzPointSource<T> {
    fn value(&self, x: Point3<T>) -> Complex<T> {
        let r = vec3::dist(x, self.source);
        Complex::new(T::zero(), self.kappa * r).exp() / r
    }

    fn gradient(&self, x: Point3<T>) -> [Complex<T>; 3] {
        let d = vec3::sub(x, self.source);
        let r = vec3::norm(d);
        let f = Complex::new(T::zero(), self.kappa * r).exp() * Complex::new(-T::one(), self.kappa * r)
            / (r * r * r);
        d.map(|c| f * c)
    }
}

/// Panel averages `(1/|Δ_i|) ∫_{Δ_i} f` with the order-`n` triangle rule.
pub fn panel_averages<T: Real>(mesh: &SurfaceMesh<T>, n: usize, f: impl Fn(usize, Point3<T>) -> Complex<T>) -> Result<Vec<Complex<T>>> {
    let rule = triangle_rule::<T>(n)?;
    Ok((0..mesh.num_triangles())
        .map(|i| {
            let chart = mesh.chart_unchecked(i, IDENTITY_PERM);
            let mut acc = czero();
            for (&[s, t], &w) in rule.points.iter().zip(&rule.weights) {
                acc = acc + f(i, chart.map(s, t)) * w;
            }
            acc * T::lit(2.0)
        })
        .collect())
}

/// Relative `L²(Γ)` distance between the piecewise constant `coeffs` and
/// `f`, integrated with the order-`n` triangle rule.
pub fn l2_relative_error<T: Real>(
    mesh: &SurfaceMesh<T>,
    coeffs: &[Complex<T>],
    n: usize,
    f: impl Fn(usize, Point3<T>) -> Complex<T>,
) -> Result<T> {
    let rule = triangle_rule::<T>(n)?;
    let (mut num, mut den) = (T::zero(), T::zero());
    for (i, c) in coeffs.iter().enumerate() {
        let chart = mesh.chart_unchecked(i, IDENTITY_PERM);
        for (&[s, t], &w) in rule.points.iter().zip(&rule.weights) {
            let v = f(i, chart.map(s, t));
            num += (c - v).norm_sqr() * w * chart.gramian;
            den += v.norm_sqr() * w * chart.gramian;
        }
    }
    Ok((num / den).sqrt())
}

/// Relative area-weighted `ℓ²` distance between two coefficient vectors.
pub fn weighted_relative_error<T: Real>(mesh: &SurfaceMesh<T>, a: &[Complex<T>], b: &[Complex<T>]) -> T {
    let (mut num, mut den) = (T::zero(), T::zero());
    for i in 0..a.len() {
        num += (a[i] - b[i]).norm_sqr() * mesh.area(i);
        den += b[i].norm_sqr() * mesh.area(i);
    }
    (num / den).sqrt()
}

/// Distance from `p` to triangle `tri`.
pub fn point_panel_distance<T: Real>(mesh: &SurfaceMesh<T>, tri: usize, p: Point3<T>) -> T {
    let [a, b, c] = mesh.triangle_vertices(tri);
    let ab = vec3::sub(b, a);
    let ac = vec3::sub(c, a);
    let ap = vec3::sub(p, a);
    let (d1, d2) = (vec3::dot(ab, ap), vec3::dot(ac, ap));
    if d1 <= T::zero() && d2 <= T::zero() {
        return vec3::dist(p, a);
    }
    let bp = vec3::sub(p, b);
    let (d3, d4) = (vec3::dot(ab, bp), vec3::dot(ac, bp));
    if d3 >= T::zero() && d4 <= d3 {
        return vec3::dist(p, b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= T::zero() && d1 >= T::zero() && d3 <= T::zero() {
        let v = d1 / (d1 - d3);
        return vec3::dist(p, vec3::add(a, vec3::scale(ab, v)));
    }
    let cp = vec3::sub(p, c);
    let (d5, d6) = (vec3::dot(ab, cp), vec3::dot(ac, cp));
    if d6 >= T::zero() && d5 <= d6 {
        return vec3::dist(p, c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= T::zero() && d2 >= T::zero() && d6 <= T::zero() {
        let w = d2 / (d2 - d6);
        return vec3::dist(p, vec3::add(a, vec3::scale(ac, w)));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= T::zero() && (d4 - d3) >= T::zero() && (d5 - d6) >= T::zero() {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return vec3::dist(p, vec3::add(b, vec3::scale(vec3::sub(c, b), w)));
    }
    let denom = T::one() / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let q = vec3::add(a, vec3::add(vec3::scale(ab, v), vec3::scale(ac, w)));
    vec3::dist(p, q)
}

/// `Σ_j density_j ∫_{Δ_j} k(z, y) dy` at each point, order-`n` triangle
/// rule per panel. Points on the surface are rejected.
pub fn potential_eval<T: Real>(
    mesh: &SurfaceMesh<T>,
    kernel: &KernelSpec<T>,
    density: &[Complex<T>],
    points: &[Point3<T>],
    n: usize,
) -> Result<Vec<Complex<T>>> {
    if density.len() != mesh.num_triangles() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_triangles(),
            actual: density.len(),
        });
    }
    let scale = T::lit(1e-12) * mesh.total_area().sqrt();
    for &z in points {
        if (0..mesh.num_triangles()).any(|j| point_panel_distance(mesh, j, z) <= scale) {
            return Err(Error::Domain);
        }
    }
    let rule = triangle_rule::<T>(n)?;
    Ok(points
        .par_iter()
        .map(|&z| {
            let mut total = czero();
            for (j, d) in density.iter().enumerate() {
                let chart = mesh.chart_unchecked(j, IDENTITY_PERM);
                let mut acc = czero();
                for (&[s, t], &w) in rule.points.iter().zip(&rule.weights) {
                    acc = acc + kernel.eval_unchecked(z, chart.map(s, t), chart.normal) * w;
                }
                total = total + d * acc * chart.gramian;
            }
            total
        })
        .collect())
}

/// The 26 face, edge and corner directions of a cube, scaled to `radius`.
pub fn check_points<T: Real>(radius: T) -> Vec<Point3<T>> {
    let mut out = Vec::with_capacity(26);
    for a in -1i32..=1 {
        for b in -1i32..=1 {
            for c in -1i32..=1 {
                if (a, b, c) == (0, 0, 0) {
                    continue;
                }
                let d = [a, b, c].map(|v| T::lit(v as f64));
                out.push(vec3::scale(vec3::normalize(d), radius));
            }
        }
    }
    out
}

/// Settings shared by the boundary value problems.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConfig<T> {
    pub setup: SetupParams<T>,
    pub scheduler: SchedulerConfig,
    pub tol: T,
    pub maxit: usize,
}

impl<T: Real> Default for ProblemConfig<T> {
    fn default() -> Self {
        Self {
            setup: SetupParams::default(),
            scheduler: SchedulerConfig::default(),
            tol: T::lit(DEFAULT_CG_TOL),
            maxit: DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// `base · 2^{2 − level}` for levels above 2: the GCA tolerance follows the
/// O(h) discretisation error down the refinement ladder.
pub fn epsilon_for_level<T: Real>(base: T, level: usize) -> T {
    base * T::lit(0.5).powi(level.saturating_sub(2) as i32)
}

/// Assembled single and double layer operators on one mesh.
pub struct LayerOperators<T> {
    pub v: GCAMatrix<T>,
    pub k: GCAMatrix<T>,
    pub setup_time: Duration,
    pub assembly_time: Duration,
    pub v_stats: AssemblyStats,
    pub k_stats: AssemblyStats,
}

/// Builds bases and assembles `V` (mirrored) and `K` for `slp`'s equation.
pub fn assemble_layers<T: Real>(
    mesh: &SurfaceMesh<T>,
    slp: &KernelSpec<T>,
    config: &ProblemConfig<T>,
) -> Result<LayerOperators<T>> {
    let dlp = slp.double_layer();
    let slp = slp.single_layer();
    let t0 = Instant::now();
    let sv = GcaSetup::build(mesh, &slp, &config.setup)?;
    let sk = sv.for_operator(mesh, &dlp, &config.setup.gca)?;
    let setup_time = t0.elapsed();
    let t1 = Instant::now();
    let sym = SchedulerConfig {
        symmetric: true,
        ..config.scheduler.clone()
    };
    let (v, v_stats) = run_assembly(mesh, &sv, &slp, &sym)?;
    let (k, k_stats) = run_assembly(mesh, &sk, &dlp, &config.scheduler)?;
    Ok(LayerOperators {
        v,
        k,
        setup_time,
        assembly_time: t1.elapsed(),
        v_stats,
        k_stats,
    })
}

#[derive(Clone, Debug)]
pub struct LaplaceResult<T> {
    /// Panel averages of the Dirichlet data.
    pub beta: Vec<Complex<T>>,
    /// Neumann coefficients.
    pub alpha: Vec<Complex<T>>,
    pub iterations: usize,
    pub residuals: Vec<T>,
    /// Relative `L²(Γ)` error against `∇f·n` of each panel.
    pub l2_error: T,
    /// Relative area-weighted error against panel averages of `∇f·n`.
    pub average_error: T,
    pub solve_time: Duration,
}

/// Solves `V α = (½M + K) β` for the Neumann data of the interior Dirichlet
/// problem with data `f`.
pub fn laplace_solve_with<T: Real>(
    mesh: &SurfaceMesh<T>,
    ops: &LayerOperators<T>,
    f: &dyn AnalyticFunction<T>,
    config: &ProblemConfig<T>,
) -> Result<LaplaceResult<T>> {
    let t0 = Instant::now();
    let beta = panel_averages(mesh, DATA_RULE_ORDER, |_, x| f.value(x))?;
    let mut rhs = ops.k.matvec(&beta)?;
    for (i, r) in rhs.iter_mut().enumerate() {
        *r = *r + beta[i] * (T::lit(0.5) * mesh.area(i));
    }
    let op = CompressedOperator {
        matrix: &ops.v,
        flags: OperatorFlags::SPD,
    };
    let sol = cg_solve(&op, &rhs, config.tol, config.maxit)?;
    if !sol.converged {
        return Err(Error::Stagnation {
            iterations: sol.iterations,
            residual: sol.residuals.last().map_or(f64::NAN, |r| r.as_f64()),
        });
    }
    let solve_time = t0.elapsed();
    let normals = mesh.normals();
    let exact = |i: usize, x: Point3<T>| f.normal_derivative(x, normals[i]);
    let l2_error = l2_relative_error(mesh, &sol.x, ERROR_RULE_ORDER, exact)?;
    let averages = panel_averages(mesh, ERROR_RULE_ORDER, exact)?;
    let average_error = weighted_relative_error(mesh, &sol.x, &averages);
    Ok(LaplaceResult {
        beta,
        alpha: sol.x,
        iterations: sol.iterations,
        residuals: sol.residuals,
        l2_error,
        average_error,
        solve_time,
    })
}

/// Assembles the Laplace operators and solves for the Neumann data of `f`.
pub fn laplace_dirichlet_neumann<T: Real>(
    mesh: &SurfaceMesh<T>,
    f: &dyn AnalyticFunction<T>,
    config: &ProblemConfig<T>,
) -> Result<(LaplaceResult<T>, LayerOperators<T>)> {
    let ops = assemble_layers(mesh, &KernelSpec::laplace_slp(), config)?;
    let res = laplace_solve_with(mesh, &ops, f, config)?;
    Ok((res, ops))
}

#[derive(Clone, Debug)]
pub struct HelmholtzResult<T> {
    pub density: Vec<Complex<T>>,
    pub iterations: usize,
    pub residuals: Vec<T>,
    pub points: Vec<Point3<T>>,
    pub computed: Vec<Complex<T>>,
    pub exact: Vec<Complex<T>>,
    /// `‖computed − exact‖₂ / ‖exact‖₂` over the check points.
    pub relative_error: T,
    pub setup_time: Duration,
    pub assembly_time: Duration,
    pub solve_time: Duration,
}

/// Exterior Dirichlet problem by the Brakhage–Werner ansatz
/// `u = (D − iηS) w` with kernels normalised by `1/(4π)`: solves
/// `(½M + (K − iηV)/(4π)) w = ∫ f φ_i` and evaluates `u` at `points`.
pub fn helmholtz_bw_solve<T: Real>(
    mesh: &SurfaceMesh<T>,
    kappa: T,
    eta: T,
    f: &dyn AnalyticFunction<T>,
    points: &[Point3<T>],
    config: &ProblemConfig<T>,
) -> Result<HelmholtzResult<T>> {
    if !(kappa >= T::zero()) {
        return Err(Error::InvalidArgument(format!("kappa must be non-negative, got {kappa}")));
    }
    if !(eta > T::zero()) {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    let slp = KernelSpec::helmholtz_slp(kappa);
    let ops = assemble_layers(mesh, &slp, config)?;
    let t0 = Instant::now();
    let n = mesh.num_triangles();
    let inv4pi = T::FRAC_1_PI() / T::lit(4.0);
    let ieta = Complex::new(T::zero(), eta);
    let half_area: Vec<T> = (0..n).map(|i| T::lit(0.5) * mesh.area(i)).collect();
    let apply = |x: &[Complex<T>], y: &mut [Complex<T>]| -> Result<()> {
        let kx = ops.k.matvec(x)?;
        let vx = ops.v.matvec(x)?;
        for i in 0..n {
            y[i] = x[i] * half_area[i] + (kx[i] - ieta * vx[i]) * inv4pi;
        }
        Ok(())
    };
    let op = FnOperator {
        dim: n,
        f: apply,
        flags: OperatorFlags::default(),
    };
    let avg = panel_averages(mesh, DATA_RULE_ORDER, |_, x| f.value(x))?;
    let rhs: Vec<Complex<T>> = avg.iter().enumerate().map(|(i, a)| a * mesh.area(i)).collect();
    let sol = solve(&op, &rhs, config.tol, config.maxit)?;
    let d = potential_eval(mesh, &slp.double_layer(), &sol.x, points, DATA_RULE_ORDER)?;
    let s = potential_eval(mesh, &slp, &sol.x, points, DATA_RULE_ORDER)?;
    let computed: Vec<Complex<T>> = d.iter().zip(&s).map(|(a, b)| (a - ieta * b) * inv4pi).collect();
    let exact: Vec<Complex<T>> = points.iter().map(|&z| f.value(z)).collect();
    let diff: Vec<Complex<T>> = computed.iter().zip(&exact).map(|(a, b)| a - b).collect();
    let relative_error = norm2(&diff) / norm2(&exact);
    Ok(HelmholtzResult {
        density: sol.x,
        iterations: sol.iterations,
        residuals: sol.residuals,
        points: points.to_vec(),
        computed,
        exact,
        relative_error,
        setup_time: ops.setup_time,
        assembly_time: ops.assembly_time,
        solve_time: t0.elapsed(),
    })
}

/// GCA parameters with the tolerance tightened for `level`.
pub fn gca_for_level<T: Real>(base: &GcaParams<T>, level: usize) -> GcaParams<T> {
    GcaParams {
        epsilon: epsilon_for_level(base.epsilon, level),
        ..*base
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn cg_identity_one_step() {
        let m = Matrix::<f64>::identity(5);
        let op = DenseOperator {
            matrix: &m,
            flags: OperatorFlags::SPD,
        };
        let b: Vec<_> = (0..5).map(|i| c(i as f64, 1.0)).collect();
        let r = cg_solve(&op, &b, 1e-12, 10).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.x, b);
    }

    #[test]
    fn cg_diagonal_terminates() {
        let m = Matrix::from_fn(10, 10, |i, j| if i == j { c(1.0 + i as f64, 0.0) } else { czero() });
        let op = DenseOperator {
            matrix: &m,
            flags: OperatorFlags::SPD,
        };
        let r = cg_solve(&op, &vec![c(1.0, 0.0); 10], 1e-12, 50).unwrap();
        assert!(r.converged && r.iterations <= 10);
        for (i, x) in r.x.iter().enumerate() {
            assert!((x.re - 1.0 / (1.0 + i as f64)).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_detects_indefinite() {
        let m = Matrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => c(1.0, 0.0),
            (1, 1) => c(-1.0, 0.0),
            _ => czero(),
        });
        let op = DenseOperator {
            matrix: &m,
            flags: OperatorFlags::SPD,
        };
        assert!(matches!(
            cg_solve(&op, &[c(0.0, 0.0), c(1.0, 0.0)], 1e-12, 10),
            Err(Error::NotPositiveDefinite(_))
        ));
        let plain = DenseOperator {
            matrix: &m,
            flags: OperatorFlags::default(),
        };
        assert!(cg_solve(&plain, &[c(1.0, 0.0), c(1.0, 0.0)], 1e-12, 10).is_err());
    }

    #[test]
    fn gmres_non_normal_2x2() {
        let m = Matrix::from_vec(2, 2, vec![c(1.0, 1.0), c(5.0, 0.0), czero(), c(0.0, 2.0)]).unwrap();
        let op = DenseOperator {
            matrix: &m,
            flags: OperatorFlags::default(),
        };
        let b = [c(1.0, 0.0), c(0.0, -1.0)];
        let r = solve(&op, &b, 1e-14, 10).unwrap();
        let ax = m.matvec(&r.x).unwrap();
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn gmres_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 50;
        let m = Matrix::from_fn(n, n, |i, j| {
            let d = if i == j { 8.0 } else { 0.0 };
            c(d + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let b: Vec<_> = (0..n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let op = DenseOperator {
            matrix: &m,
            flags: OperatorFlags::default(),
        };
        let x = gmres(&op, &b, 1e-12, 200).unwrap().x;
        let xs = crate::dense::solve(&m, &b).unwrap();
        let diff: Vec<_> = x.iter().zip(&xs).map(|(a, b)| a - b).collect();
        assert!(norm2(&diff) / norm2(&xs) <= 1e-8);
    }

    #[test]
    fn gmres_reports_stagnation() {
        let m = Matrix::from_fn(20, 20, |i, j| {
            if (i + 1) % 20 == j {
                c(1.0, 0.0)
            } else {
                czero()
            }
        });
        let op = DenseOperator {
            matrix: &m,
            flags: OperatorFlags::default(),
        };
        let mut b = vec![czero(); 20];
        b[0] = c(1.0, 0.0);
        assert!(matches!(gmres(&op, &b, 1e-10, 5), Err(Error::Stagnation { .. })));
    }

    #[test]
    fn harmonic_gradients_match_differences() {
        let h = 1e-6;
        let x = [0.3, -0.2, 0.5];
        for f in Harmonic::<f64>::standard() {
            let g = f.gradient(x);
            for k in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (f.value(xp) - f.value(xm)) / (2.0 * h);
                assert!((fd - g[k]).norm() < 1e-6 * (1.0 + g[k].norm()));
            }
        }
        let hs = HelmholtzPointSource {
            source: [0.0, 0.0, 0.2],
            kappa: 3.0,
        };
        let g = hs.gradient(x);
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fd = (hs.value(xp) - hs.value(xm)) / (2.0 * h);
            assert!((fd - g[k]).norm() < 1e-5 * (1.0 + g[k].norm()));
        }
    }

    #[test]
    fn check_point_layout() {
        let p = check_points::<f64>(2.0);
        assert_eq!(p.len(), 26);
        assert!(p.iter().all(|q| (vec3::norm(*q) - 2.0).abs() < 1e-14));
    }

    #[test]
    fn point_panel_distance_cases() {
        let m = SurfaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]],
            vec![[0, 1, 2], [0, 3, 1]],
        )
        .unwrap();
        assert_eq!(point_panel_distance(&m, 0, [0.2, 0.2, 0.5]), 0.5);
        assert_eq!(point_panel_distance(&m, 0, [-1.0, 0.0, 0.0]), 1.0);
        assert!((point_panel_distance(&m, 0, [1.0, 1.0, 0.0]) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(point_panel_distance(&m, 0, [0.5, -2.0, 0.0]), 2.0);
    }

    #[test]
    fn epsilon_tightens_with_level() {
        assert_eq!(epsilon_for_level(1e-4, 2), 1e-4);
        assert_eq!(epsilon_for_level(1e-4, 5), 1.25e-5);
    }
}
