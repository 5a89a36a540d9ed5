//! Gauss–Legendre rules and the four Sauter–Schwab panel-pair rules.
//!
//! Every rule integrates over `Δ̂ × Δ̂`, `Δ̂ = {(s, t) : 0 <= t <= s <= 1}`,
//! and is stored fully expanded: one `(x̂, ŷ, w)` triple per point with all
//! Jacobian factors folded into `w`. Points are ordered sub-integral major,
//! then lexicographically over the tensor indices `(ξ, η₁, η₂, η₃)`.
//!
//! Sub-integral layouts (`ξ` outermost, Jacobian in brackets):
//!
//! * disjoint, `[ξ₁ ξ₃]`: `x̂ = (ξ₁, ξ₁ξ₂)`, `ŷ = (ξ₃, ξ₃ξ₄)`.
//! * vertex, `[ξ³ η₂]`, shared vertex at the origin:
//!   1. `x̂ = ξ(1, η₁)`, `ŷ = ξη₂(1, η₃)`
//!   2. the same with `x̂` and `ŷ` exchanged.
//! * edge, shared edge `(0,0)–(1,0)`:
//!   1. `[ξ³η₁²]` `x̂ = ξ(1, η₁η₃)`, `ŷ = ξ(1 - η₁η₂, η₁(1 - η₂))`
//!   2. `[ξ³η₁²η₂]` `x̂ = ξ(1, η₁)`, `ŷ = ξ(1 - η₁η₂η₃, η₁η₂(1 - η₃))`
//!   3. `[ξ³η₁²η₂]` `x̂ = ξ(1 - η₁η₂, η₁(1 - η₂))`, `ŷ = ξ(1, η₁η₂η₃)`
//!   4. `[ξ³η₁²η₂]` `x̂ = ξ(1 - η₁η₂η₃, η₁η₂(1 - η₃))`, `ŷ = ξ(1, η₁)`
//!   5. `[ξ³η₁²η₂]` `x̂ = ξ(1 - η₁η₂η₃, η₁(1 - η₂η₃))`, `ŷ = ξ(1, η₁η₂)`
//! * identical, `[ξ³η₁²η₂]`:
//!   1. `x̂ = ξ(1, 1 - η₁ + η₁η₂)`, `ŷ = ξ(1 - η₁η₂η₃, 1 - η₁)`
//!   2. sub-integral 1 with `x̂`, `ŷ` exchanged
//!   3. `x̂ = ξ(1, η₁(1 - η₂ + η₂η₃))`, `ŷ = ξ(1 - η₁η₂, η₁(1 - η₂))`
//!   4. sub-integral 3 with `x̂`, `ŷ` exchanged
//!   5. `x̂ = ξ(1 - η₁η₂η₃, η₁(1 - η₂η₃))`, `ŷ = ξ(1, η₁(1 - η₂))`
//!   6. sub-integral 5 with `x̂`, `ŷ` exchanged

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::mesh::{AffineChart, SurfaceMesh, IDENTITY_PERM};
use crate::scalar::{czero, Complex, Real};

pub const MAX_GAUSS_POINTS: usize = 32;
pub const MAX_RULE_ORDER: usize = 12;

/// Gauss–Legendre rule on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule1D<T> {
    pub points: Vec<T>,
    pub weights: Vec<T>,
}

/// `n`-point Gauss–Legendre rule mapped to `[0, 1]`.
pub fn gauss_legendre<T: Real>(n: usize) -> Result<Rule1D<T>> {
    if n == 0 || n > MAX_GAUSS_POINTS {
        return Err(Error::InvalidArgument(format!(
            "Gauss-Legendre point count {n} outside 1..={MAX_GAUSS_POINTS}"
        )));
    }
    let mut points = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        if n == 1 {
            x = 0.0;
            dp = 1.0;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // [-1, 1] -> [0, 1]; node i is the largest, mirror is the smallest.
        points[n - 1 - i] = 0.5 * (1.0 + x);
        points[i] = 0.5 * (1.0 - x);
        weights[n - 1 - i] = 0.5 * w;
        weights[i] = 0.5 * w;
    }
    Ok(Rule1D {
        points: points.into_iter().map(T::lit).collect(),
        weights: weights.into_iter().map(T::lit).collect(),
    })
}

/// Singularity class of a panel pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SingularityCase {
    Disjoint,
    Vertex,
    Edge,
    Identical,
}

impl SingularityCase {
    pub const ALL: [SingularityCase; 4] = [
        SingularityCase::Disjoint,
        SingularityCase::Vertex,
        SingularityCase::Edge,
        SingularityCase::Identical,
    ];

    /// Number of 4D sub-integrals in the transformed rule.
    pub fn sub_integrals(self) -> usize {
        match self {
            SingularityCase::Disjoint => 1,
            SingularityCase::Vertex => 2,
            SingularityCase::Edge => 5,
            SingularityCase::Identical => 6,
        }
    }

    pub fn shared_vertices(self) -> usize {
        self as usize
    }

    pub fn from_shared_vertices(v: usize) -> Option<Self> {
        Self::ALL.get(v).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SingularityCase::Disjoint => "disjoint",
            SingularityCase::Vertex => "vertex",
            SingularityCase::Edge => "edge",
            SingularityCase::Identical => "identical",
        }
    }
}

impl fmt::Display for SingularityCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fully expanded 4D rule for one singularity case and base order.
#[derive(Clone, Debug)]
pub struct QuadRule4D<T> {
    pub case: SingularityCase,
    pub order: usize,
    pub x_points: Vec<[T; 2]>,
    pub y_points: Vec<[T; 2]>,
    pub weights: Vec<T>,
}

impl<T> QuadRule4D<T> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Builds the rule for `case` with `n` Gauss points per direction.
pub fn build_rule<T: Real>(case: SingularityCase, n: usize) -> Result<QuadRule4D<T>> {
    if n == 0 || n > MAX_RULE_ORDER {
        return Err(Error::InvalidArgument(format!(
            "rule order {n} outside 1..={MAX_RULE_ORDER}"
        )));
    }
    let g = gauss_legendre::<T>(n)?;
    let total = case.sub_integrals() * n.pow(4);
    let mut rule = QuadRule4D {
        case,
        order: n,
        x_points: Vec::with_capacity(total),
        y_points: Vec::with_capacity(total),
        weights: Vec::with_capacity(total),
    };
    let one = T::one();
    for sub in 0..case.sub_integrals() {
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let (xi, e1, e2, e3) = (g.points[a], g.points[b], g.points[c], g.points[d]);
                        let w = g.weights[a] * g.weights[b] * g.weights[c] * g.weights[d];
                        let (x, y, jac) = match case {
                            SingularityCase::Disjoint => {
                                ([xi, xi * e1], [e2, e2 * e3], xi * e2)
                            }
                            SingularityCase::Vertex => {
                                let p = [xi, xi * e1];
                                let q = [xi * e2, xi * e2 * e3];
                                let jac = xi * xi * xi * e2;
                                if sub == 0 {
                                    (p, q, jac)
                                } else {
                                    (q, p, jac)
                                }
                            }
                            SingularityCase::Edge => {
                                let x3 = xi * xi * xi;
                                match sub {
                                    0 => (
                                        [xi, xi * e1 * e3],
                                        [xi * (one - e1 * e2), xi * e1 * (one - e2)],
                                        x3 * e1 * e1,
                                    ),
                                    1 => (
                                        [xi, xi * e1],
                                        [xi * (one - e1 * e2 * e3), xi * e1 * e2 * (one - e3)],
                                        x3 * e1 * e1 * e2,
                                    ),
                                    2 => (
                                        [xi * (one - e1 * e2), xi * e1 * (one - e2)],
                                        [xi, xi * e1 * e2 * e3],
                                        x3 * e1 * e1 * e2,
                                    ),
                                    3 => (
                                        [xi * (one - e1 * e2 * e3), xi * e1 * e2 * (one - e3)],
                                        [xi, xi * e1],
                                        x3 * e1 * e1 * e2,
                                    ),
                                    _ => (
                                        [xi * (one - e1 * e2 * e3), xi * e1 * (one - e2 * e3)],
                                        [xi, xi * e1 * e2],
                                        x3 * e1 * e1 * e2,
                                    ),
                                }
                            }
                            SingularityCase::Identical => {
                                let jac = xi * xi * xi * e1 * e1 * e2;
                                let (p, q) = match sub / 2 {
                                    0 => (
                                        [xi, xi * (one - e1 + e1 * e2)],
                                        [xi * (one - e1 * e2 * e3), xi * (one - e1)],
                                    ),
                                    1 => (
                                        [xi, xi * e1 * (one - e2 + e2 * e3)],
                                        [xi * (one - e1 * e2), xi * e1 * (one - e2)],
                                    ),
                                    _ => (
                                        [xi * (one - e1 * e2 * e3), xi * e1 * (one - e2 * e3)],
                                        [xi, xi * e1 * (one - e2)],
                                    ),
                                };
                                if sub % 2 == 0 {
                                    (p, q, jac)
                                } else {
                                    (q, p, jac)
                                }
                            }
                        };
                        rule.x_points.push(x);
                        rule.y_points.push(y);
                        rule.weights.push(w * jac);
                    }
                }
            }
        }
    }
    Ok(rule)
}

/// 2D rule on the reference triangle (Duffy-collapsed tensor Gauss);
/// weights sum to `1/2`.
#[derive(Clone, Debug)]
pub struct TriangleRule<T> {
    pub points: Vec<[T; 2]>,
    pub weights: Vec<T>,
}

pub fn triangle_rule<T: Real>(n: usize) -> Result<TriangleRule<T>> {
    let g = gauss_legendre::<T>(n)?;
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let s = g.points[a];
            points.push([s, s * g.points[b]]);
            weights.push(g.weights[a] * g.weights[b] * s);
        }
    }
    Ok(TriangleRule { points, weights })
}

/// Memoised rules keyed by `(case, order)`, shared across threads.
#[derive(Debug, Default)]
pub struct RuleCache<T> {
    rules: Mutex<HashMap<(SingularityCase, usize), Arc<QuadRule4D<T>>>>,
    builds: AtomicUsize,
}

impl<T: Real> RuleCache<T> {
    pub fn new() -> Self {
        Self {
            rules: Mutex::new(HashMap::new()),
            builds: AtomicUsize::new(0),
        }
    }

    pub fn get(&self, case: SingularityCase, n: usize) -> Result<Arc<QuadRule4D<T>>> {
        let mut rules = self.rules.lock().expect("rule cache poisoned");
        if let Some(r) = rules.get(&(case, n)) {
            return Ok(Arc::clone(r));
        }
        let rule = Arc::new(build_rule(case, n)?);
        self.builds.fetch_add(1, Ordering::Relaxed);
        rules.insert((case, n), Arc::clone(&rule));
        Ok(rule)
    }

    /// Number of rules constructed so far.
    pub fn builds(&self) -> usize {
        self.builds.load(Ordering::Relaxed)
    }
}

/// Singularity case plus the vertex permutations aligning both charts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairClassification {
    pub case: SingularityCase,
    pub perm_x: [usize; 3],
    pub perm_y: [usize; 3],
}

impl PairClassification {
    pub fn disjoint() -> Self {
        Self {
            case: SingularityCase::Disjoint,
            perm_x: IDENTITY_PERM,
            perm_y: IDENTITY_PERM,
        }
    }
}

/// Number of vertex indices two triangles share.
#[inline]
pub fn shared_vertex_count(a: &[usize; 3], b: &[usize; 3]) -> usize {
    a.iter().filter(|v| b.contains(v)).count()
}

/// Classifies a panel pair. Shared vertices are placed in the leading
/// permutation slots in ascending global index order, so `classify(a, b)`
/// and `classify(b, a)` differ only by swapping the permutations.
pub fn classify_pair<T: Real>(
    mesh: &SurfaceMesh<T>,
    tri_a: usize,
    tri_b: usize,
) -> Result<PairClassification> {
    let nt = mesh.num_triangles();
    if tri_a >= nt || tri_b >= nt {
        return Err(Error::InvalidArgument(format!(
            "triangle pair ({tri_a}, {tri_b}) out of range 0..{nt}"
        )));
    }
    let ta = &mesh.triangles()[tri_a];
    let tb = &mesh.triangles()[tri_b];
    if tri_a == tri_b {
        return Ok(PairClassification {
            case: SingularityCase::Identical,
            perm_x: IDENTITY_PERM,
            perm_y: IDENTITY_PERM,
        });
    }
    let mut shared: Vec<usize> = ta.iter().copied().filter(|v| tb.contains(v)).collect();
    shared.sort_unstable();
    let pos = |t: &[usize; 3], v: usize| t.iter().position(|&u| u == v).unwrap();
    let complete = |t: &[usize; 3], lead: &[usize]| -> [usize; 3] {
        let mut p = [0; 3];
        for (k, &v) in lead.iter().enumerate() {
            p[k] = pos(t, v);
        }
        match lead.len() {
            1 => {
                p[1] = (p[0] + 1) % 3;
                p[2] = (p[0] + 2) % 3;
            }
            2 => p[2] = 3 - p[0] - p[1],
            _ => {}
        }
        p
    };
    match shared.len() {
        0 => Ok(PairClassification::disjoint()),
        1 | 2 => Ok(PairClassification {
            case: SingularityCase::from_shared_vertices(shared.len()).unwrap(),
            perm_x: complete(ta, &shared),
            perm_y: complete(tb, &shared),
        }),
        _ => Err(Error::MeshInvalid(format!(
            "distinct triangles {tri_a} and {tri_b} share all three vertices"
        ))),
    }
}

impl PairClassification {
    /// Whether the pair `(tri_a, tri_b)` is integrated with the panels
    /// exchanged. The vertex and edge rules are not invariant under
    /// swapping `x̂` and `ŷ`, so for a symmetric kernel both orders of a
    /// touching pair are evaluated as the one with the lower index first.
    pub fn swaps(&self, symmetric_kernel: bool, tri_a: usize, tri_b: usize) -> bool {
        symmetric_kernel
            && matches!(self.case, SingularityCase::Vertex | SingularityCase::Edge)
            && tri_a > tri_b
    }
}

/// The `(x, y)` charts for a classified pair, exchanged when
/// [`PairClassification::swaps`] says so.
pub fn pair_charts<T: Real>(
    mesh: &SurfaceMesh<T>,
    class: &PairClassification,
    symmetric_kernel: bool,
    tri_a: usize,
    tri_b: usize,
) -> Result<(AffineChart<T>, AffineChart<T>)> {
    let cx = mesh.chart(tri_a, class.perm_x)?;
    let cy = mesh.chart(tri_b, class.perm_y)?;
    Ok(if class.swaps(symmetric_kernel, tri_a, tri_b) {
        (cy, cx)
    } else {
        (cx, cy)
    })
}

/// Galerkin integral of `kernel` over one panel pair with piecewise
/// constant test and trial functions.
pub fn integrate_pair<T: Real>(
    chart_x: &AffineChart<T>,
    chart_y: &AffineChart<T>,
    kernel: &KernelSpec<T>,
    rule: &QuadRule4D<T>,
) -> Result<Complex<T>> {
    check_rule_points(chart_x, chart_y, rule)?;
    Ok(integrate_pair_unchecked(chart_x, chart_y, kernel, rule))
}

/// As [`integrate_pair`] with test/trial functions given on the reference
/// triangle.
pub fn integrate_pair_with_basis<T, Fx, Fy>(
    chart_x: &AffineChart<T>,
    chart_y: &AffineChart<T>,
    kernel: &KernelSpec<T>,
    rule: &QuadRule4D<T>,
    basis_x: Fx,
    basis_y: Fy,
) -> Result<Complex<T>>
where
    T: Real,
    Fx: Fn(T, T) -> T,
    Fy: Fn(T, T) -> T,
{
    check_rule_points(chart_x, chart_y, rule)?;
    let mut acc = czero();
    for q in 0..rule.len() {
        let [s, t] = rule.x_points[q];
        let [u, v] = rule.y_points[q];
        let g = kernel.eval_unchecked(chart_x.map(s, t), chart_y.map(u, v), chart_y.normal);
        acc = acc + g * (rule.weights[q] * basis_x(s, t) * basis_y(u, v));
    }
    Ok(acc * (chart_x.gramian * chart_y.gramian))
}

fn check_rule_points<T: Real>(
    chart_x: &AffineChart<T>,
    chart_y: &AffineChart<T>,
    rule: &QuadRule4D<T>,
) -> Result<()> {
    for q in 0..rule.len() {
        let [s, t] = rule.x_points[q];
        let [u, v] = rule.y_points[q];
        if chart_x.map(s, t) == chart_y.map(u, v) {
            return Err(Error::RuleConstruction(rule.case.name()));
        }
    }
    Ok(())
}

/// Quadrature sum shared by every backend: fixed point order, one
/// accumulator, Gramians applied last.
#[inline]
pub(crate) fn integrate_pair_unchecked<T: Real>(
    chart_x: &AffineChart<T>,
    chart_y: &AffineChart<T>,
    kernel: &KernelSpec<T>,
    rule: &QuadRule4D<T>,
) -> Complex<T> {
    let mut acc = czero();
    for q in 0..rule.len() {
        let [s, t] = rule.x_points[q];
        let [u, v] = rule.y_points[q];
        let g = kernel.eval_unchecked(chart_x.map(s, t), chart_y.map(u, v), chart_y.normal);
        acc = acc + g * rule.weights[q];
    }
    acc * (chart_x.gramian * chart_y.gramian)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_sphere_mesh;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_small_rules() {
        let r1 = gauss_legendre::<f64>(1).unwrap();
        assert_eq!(r1.points, vec![0.5]);
        assert_eq!(r1.weights, vec![1.0]);
        let r2 = gauss_legendre::<f64>(2).unwrap();
        let h = 0.5 / 3f64.sqrt();
        assert_abs_diff_eq!(r2.points[0], 0.5 - h, epsilon = 1e-15);
        assert_abs_diff_eq!(r2.points[1], 0.5 + h, epsilon = 1e-15);
        assert_abs_diff_eq!(r2.weights[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r2.weights[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn gauss_degree_exactness() {
        for n in 1..=MAX_GAUSS_POINTS {
            let r = gauss_legendre::<f64>(n).unwrap();
            let wsum: f64 = r.weights.iter().sum();
            assert!((wsum - 1.0).abs() <= 1e-14, "n = {n}");
            assert!(r.points.windows(2).all(|p| p[0] < p[1]));
            assert!(r.points.iter().all(|&p| p > 0.0 && p < 1.0));
            for deg in 0..2 * n {
                let q: f64 = r
                    .points
                    .iter()
                    .zip(&r.weights)
                    .map(|(x, w)| w * x.powi(deg as i32))
                    .sum();
                assert!(
                    (q - 1.0 / (deg as f64 + 1.0)).abs() <= 1e-13,
                    "n = {n}, degree {deg}"
                );
            }
        }
        let r5 = gauss_legendre::<f64>(5).unwrap();
        let q: f64 = r5.points.iter().zip(&r5.weights).map(|(x, w)| w * x.powi(9)).sum();
        assert!((q - 0.1).abs() <= 1e-14);
    }

    #[test]
    fn gauss_rejects_bad_counts() {
        assert!(gauss_legendre::<f64>(0).is_err());
        assert!(gauss_legendre::<f64>(33).is_err());
    }

    #[test]
    fn rule_sizes_and_domains() {
        for case in SingularityCase::ALL {
            // n = 1 cannot integrate the ξ³ Jacobian exactly.
            for n in 2..=6 {
                let r = build_rule::<f64>(case, n).unwrap();
                assert_eq!(r.len(), n.pow(4) * case.sub_integrals());
                for p in r.x_points.iter().chain(&r.y_points) {
                    assert!(0.0 <= p[1] && p[1] <= p[0] && p[0] <= 1.0 + 1e-14);
                }
                assert!(r.weights.iter().all(|&w| w > 0.0));
                let s: f64 = r.weights.iter().sum();
                assert!((s - 0.25).abs() <= 1e-13, "{case} n={n}: {s}");
            }
        }
        assert_eq!(build_rule::<f64>(SingularityCase::Vertex, 5).unwrap().len(), 2 * 625);
        assert!(build_rule::<f64>(SingularityCase::Edge, 13).is_err());
    }

    /// The singular transforms are exact changes of variables: a polynomial
    /// in `(x̂, ŷ)` must integrate to the same value as with the tensor rule.
    #[test]
    fn singular_transforms_preserve_polynomial_integrals() {
        let f = |x: [f64; 2], y: [f64; 2]| {
            1.0 + x[0] * x[0] * y[1]
                + 3.0 * x[1] * y[0].powi(3)
                + x[0] * x[1] * y[0] * y[1] * y[1]
                + x[1].powi(3)
        };
        let apply = |r: &QuadRule4D<f64>| -> f64 {
            (0..r.len())
                .map(|q| r.weights[q] * f(r.x_points[q], r.y_points[q]))
                .sum()
        };
        let reference = apply(&build_rule(SingularityCase::Disjoint, 8).unwrap());
        for case in [SingularityCase::Vertex, SingularityCase::Edge, SingularityCase::Identical] {
            let v = apply(&build_rule(case, 8).unwrap());
            assert!((v - reference).abs() <= 1e-13, "{case}: {v} vs {reference}");
        }
    }

    #[test]
    fn rule_cache_builds_once() {
        let cache = RuleCache::<f64>::new();
        for _ in 0..5 {
            cache.get(SingularityCase::Edge, 4).unwrap();
        }
        assert_eq!(cache.builds(), 1);
        cache.get(SingularityCase::Edge, 5).unwrap();
        assert_eq!(cache.builds(), 2);
    }

    fn strip() -> SurfaceMesh<f64> {
        SurfaceMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [1.0, 1.0, 0.0],
                [5.0, 5.0, 5.0],
                [6.0, 5.0, 5.0],
            ],
            vec![[0, 1, 2], [1, 3, 2], [3, 4, 5], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn classification_examples() {
        let m = strip();
        let c = classify_pair(&m, 0, 0).unwrap();
        assert_eq!(c.case, SingularityCase::Identical);
        assert_eq!((c.perm_x, c.perm_y), (IDENTITY_PERM, IDENTITY_PERM));

        let c = classify_pair(&m, 0, 1).unwrap();
        assert_eq!(c.case, SingularityCase::Edge);
        // a = (0,1,2), b = (1,3,2): shared 1, 2
        assert_eq!(c.perm_x, [1, 2, 0]);
        assert_eq!(c.perm_y, [0, 2, 1]);

        let c = classify_pair(&m, 0, 2).unwrap();
        assert_eq!(c.case, SingularityCase::Disjoint);

        let c = classify_pair(&m, 1, 2).unwrap();
        assert_eq!(c.case, SingularityCase::Vertex);
        assert_eq!(m.triangles()[1][c.perm_x[0]], 3);
        assert_eq!(m.triangles()[2][c.perm_y[0]], 3);

        assert!(matches!(classify_pair(&m, 1, 3), Err(Error::MeshInvalid(_))));
        assert!(classify_pair(&m, 0, 9).is_err());
    }

    #[test]
    fn classification_of_spec_edge_example() {
        let m = SurfaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.2]],
            vec![[0, 1, 2], [1, 2, 3]],
        )
        .unwrap();
        let c = classify_pair(&m, 0, 1).unwrap();
        assert_eq!(c.case, SingularityCase::Edge);
        assert_eq!(c.perm_x, [1, 2, 0]);
        assert_eq!(c.perm_y, [0, 1, 2]);
    }

    #[test]
    fn classification_aligns_shared_vertices_and_is_symmetric() {
        let m = build_sphere_mesh::<f64>(2).unwrap();
        for a in 0..m.num_triangles() {
            for b in 0..m.num_triangles() {
                let c = classify_pair(&m, a, b).unwrap();
                let r = classify_pair(&m, b, a).unwrap();
                assert_eq!(c.case, r.case);
                assert_eq!((c.perm_x, c.perm_y), (r.perm_y, r.perm_x));
                let ta = m.triangles()[a];
                let tb = m.triangles()[b];
                for k in 0..c.case.shared_vertices() {
                    assert_eq!(ta[c.perm_x[k]], tb[c.perm_y[k]]);
                }
                if c.case != SingularityCase::Identical {
                    assert_eq!(c.case.shared_vertices(), shared_vertex_count(&ta, &tb));
                }
            }
        }
    }

    fn unit_chart() -> AffineChart<f64> {
        AffineChart {
            origin: [0.0; 3],
            edge1: [1.0, 0.0, 0.0],
            edge2: [-1.0, 1.0, 0.0],
            gramian: 1.0,
            normal: [0.0, 0.0, 1.0],
        }
    }

    #[test]
    fn constant_kernel_gives_quarter() {
        // A zero-wavenumber Helmholtz kernel with r fixed is not constant, so
        // use the rule weights directly through a basis.
        let cx = unit_chart();
        let mut cy = unit_chart();
        cy.origin = [0.0, 0.0, 3.0];
        for case in SingularityCase::ALL {
            let rule = build_rule::<f64>(case, 3).unwrap();
            let w: f64 = rule.weights.iter().sum();
            assert!((w * cx.gramian * cy.gramian - 0.25).abs() <= 1e-13);
        }
    }

    #[test]
    fn far_field_point_mass_limit() {
        let cx = unit_chart();
        let mut cy = unit_chart();
        cy.origin = [0.0, 0.0, 100.0];
        let rule = build_rule(SingularityCase::Disjoint, 3).unwrap();
        let v = integrate_pair(&cx, &cy, &KernelSpec::laplace_slp(), &rule).unwrap();
        let expected = 0.25 / (4.0 * std::f64::consts::PI * 100.0);
        assert!((v.re - expected).abs() <= 0.01 * expected);
    }

    #[test]
    fn disjoint_rule_is_symmetric_under_swap() {
        let m = build_sphere_mesh::<f64>(1).unwrap();
        let rule = build_rule(SingularityCase::Disjoint, 4).unwrap();
        let spec = KernelSpec::helmholtz_slp(3.0);
        let a = m.chart(0, IDENTITY_PERM).unwrap();
        let b = m.chart(30, IDENTITY_PERM).unwrap();
        let ab = integrate_pair(&a, &b, &spec, &rule).unwrap();
        let ba = integrate_pair(&b, &a, &spec, &rule).unwrap();
        assert!((ab - ba).norm() <= 1e-15 * ab.norm());
    }

    #[test]
    fn coincident_points_are_reported() {
        let c = unit_chart();
        let rule = build_rule(SingularityCase::Disjoint, 2).unwrap();
        assert!(matches!(
            integrate_pair(&c, &c, &KernelSpec::laplace_slp(), &rule),
            Err(Error::RuleConstruction("disjoint"))
        ));
    }

    #[test]
    fn basis_variant_matches_constant_basis() {
        let m = build_sphere_mesh::<f64>(1).unwrap();
        let rule = build_rule(SingularityCase::Disjoint, 3).unwrap();
        let spec = KernelSpec::laplace_dlp();
        let a = m.chart(0, IDENTITY_PERM).unwrap();
        let b = m.chart(20, IDENTITY_PERM).unwrap();
        let plain = integrate_pair(&a, &b, &spec, &rule).unwrap();
        let with = integrate_pair_with_basis(&a, &b, &spec, &rule, |_, _| 1.0, |_, _| 1.0).unwrap();
        assert!((plain - with).norm() <= 1e-15 * plain.norm());
    }

    #[test]
    fn triangle_rule_integrates_area() {
        let r = triangle_rule::<f64>(3).unwrap();
        let s: f64 = r.weights.iter().sum();
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_precision_rule() {
        let r = build_rule::<f32>(SingularityCase::Identical, 3).unwrap();
        let s: f32 = r.weights.iter().sum();
        assert!((s - 0.25).abs() < 1e-5);
    }
}
