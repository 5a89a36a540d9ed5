//! Green cross approximation: cluster bases from Green's representation
//! formula on an enlarged box, compressed by adaptive cross approximation.

use rayon::prelude::*;

use crate::cluster::{BlockTree, BoundingBox, ClusterTree};
use crate::dense::{Lu, Matrix};
use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, Layer};
use crate::mesh::{SurfaceMesh, IDENTITY_PERM};
use crate::quadrature::{gauss_legendre, triangle_rule};
use crate::scalar::{czero, Complex, Real};
use crate::vec3::Point3;

pub const DEFAULT_DELTA: f64 = 1.0;
pub const DEFAULT_SOURCES_PER_AXIS: usize = 4;
pub const DEFAULT_EPSILON: f64 = 1e-4;
/// Pivot blocks with a larger 1-norm condition estimate are rejected.
pub const MAX_PIVOT_CONDITION: f64 = 1e14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceRole {
    Monopole,
    Dipole,
}

/// Which side of a block the basis approximates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasisSide {
    Row,
    Column,
}

/// Quadrature points on the boundary of an enlarged cluster box, each
/// listed twice (monopole, then dipole).
#[derive(Clone, Debug)]
pub struct GreenSourceSet<T> {
    pub points: Vec<Point3<T>>,
    pub weights: Vec<T>,
    pub normals: Vec<Point3<T>>,
    pub roles: Vec<SourceRole>,
    /// The box the points lie on.
    pub enlarged: BoundingBox<T>,
}

impl<T> GreenSourceSet<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GcaParams<T> {
    pub delta: T,
    /// Gauss points per face axis.
    pub m: usize,
    pub epsilon: T,
    /// Order of the triangle rule used for panel integrals.
    pub order: usize,
}

impl<T: Real> Default for GcaParams<T> {
    fn default() -> Self {
        Self {
            delta: T::lit(DEFAULT_DELTA),
            m: DEFAULT_SOURCES_PER_AXIS,
            epsilon: T::lit(DEFAULT_EPSILON),
            order: 3,
        }
    }
}

/// Sources on the box grown by `delta/2 · diam` on every side, `m × m`
/// Gauss points per face. A box thinner than `1e-8 · scene_diameter` along
/// some axis is first padded to that thickness.
pub fn green_sources<T: Real>(
    bbox: &BoundingBox<T>,
    delta: T,
    m: usize,
    scene_diameter: T,
) -> Result<GreenSourceSet<T>> {
    if !(delta > T::zero()) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let c = bbox.center();
    let ext = bbox.extent();
    let floor = T::lit(1e-8) * scene_diameter;
    let mut half = [T::zero(); 3];
    for k in 0..3 {
        half[k] = ext[k].max(floor) * T::lit(0.5);
    }
    let diam = (half[0] * half[0] + half[1] * half[1] + half[2] * half[2]).sqrt() * T::lit(2.0);
    let margin = delta * T::lit(0.5) * diam;
    for h in &mut half {
        *h += margin;
    }
    let enlarged = BoundingBox::new(
        [c[0] - half[0], c[1] - half[1], c[2] - half[2]],
        [c[0] + half[0], c[1] + half[1], c[2] + half[2]],
    );
    let g = gauss_legendre::<T>(m)?;
    let n = 12 * m * m;
    let mut set = GreenSourceSet {
        points: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        roles: Vec::with_capacity(n),
        enlarged,
    };
    let two = T::lit(2.0);
    for face in 0..6 {
        let axis = face / 2;
        let sign = if face % 2 == 0 { -T::one() } else { T::one() };
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let (u, v) = (u.min(v), u.max(v));
        let area = two * half[u] * two * half[v];
        let mut normal = [T::zero(); 3];
        normal[axis] = sign;
        for a in 0..m {
            for b in 0..m {
                let mut p = c;
                p[axis] = c[axis] + sign * half[axis];
                p[u] = c[u] - half[u] + two * half[u] * g.points[a];
                p[v] = c[v] - half[v] + two * half[v] * g.points[b];
                let w = g.weights[a] * g.weights[b] * area;
                for role in [SourceRole::Monopole, SourceRole::Dipole] {
                    set.points.push(p);
                    set.weights.push(w);
                    set.normals.push(normal);
                    set.roles.push(role);
                }
            }
        }
    }
    Ok(set)
}

/// Green matrix `A[i][j] = w_j ∫_{Δ_i} k_j`, rows in cluster order.
///
/// Row side: `k_j(x)` is `g(x, z_j)` or `∂g/∂n(z_j)(x, z_j)`.
/// Column side of a double layer operator: `k_j(y)` is `∂g/∂n(y)(z_j, y)`
/// or `∂²g/∂n(y)∂n(z_j)`; the column side of a single layer operator
/// equals the row side.
pub fn build_green_matrix<T: Real>(
    mesh: &SurfaceMesh<T>,
    panels: &[usize],
    sources: &GreenSourceSet<T>,
    spec: &KernelSpec<T>,
    side: BasisSide,
    order: usize,
) -> Result<Matrix<T>> {
    let rule = triangle_rule::<T>(order)?;
    for &i in panels {
        if i >= mesh.num_triangles() {
            return Err(Error::InvalidArgument(format!("panel {i} out of range")));
        }
        for v in mesh.triangle_vertices(i) {
            if !strictly_inside(&sources.enlarged, v) {
                return Err(Error::InvalidArgument(format!(
                    "panel {i} reaches the Green source surface"
                )));
            }
        }
    }
    let slp = spec.single_layer();
    let dlp = spec.double_layer();
    let column_dlp = side == BasisSide::Column && spec.layer == Layer::Double;
    let mut a = Matrix::zeros(panels.len(), sources.len());
    let mut qp = Vec::with_capacity(rule.points.len());
    for (row, &i) in panels.iter().enumerate() {
        let chart = mesh.chart_unchecked(i, IDENTITY_PERM);
        qp.clear();
        qp.extend(rule.points.iter().map(|&[s, t]| chart.map(s, t)));
        for j in 0..sources.len() {
            let (z, nz) = (sources.points[j], sources.normals[j]);
            let mut acc = czero();
            for (x, &w) in qp.iter().zip(&rule.weights) {
                let k = match (column_dlp, sources.roles[j]) {
                    (false, SourceRole::Monopole) => slp.eval_unchecked(*x, z, nz),
                    (false, SourceRole::Dipole) => dlp.eval_unchecked(*x, z, nz),
                    (true, SourceRole::Monopole) => dlp.eval_unchecked(z, *x, chart.normal),
                    (true, SourceRole::Dipole) => {
                        dlp.double_normal_derivative(z, nz, *x, chart.normal)
                    }
                };
                acc = acc + k * w;
            }
            a[(row, j)] = acc * (chart.gramian * sources.weights[j]);
        }
    }
    Ok(a)
}

fn strictly_inside<T: Real>(b: &BoundingBox<T>, p: Point3<T>) -> bool {
    (0..3).all(|k| b.min[k] < p[k] && p[k] < b.max[k])
}

/// Outcome of partially pivoted cross approximation,
/// `A ≈ Σ_k u_k v_kᵀ`.
#[derive(Clone, Debug)]
pub struct AcaResult<T> {
    pub row_pivots: Vec<usize>,
    pub col_pivots: Vec<usize>,
    pub rank: usize,
    /// `‖u_k‖‖v_k‖` of the last accepted cross.
    pub residual_estimate: T,
    /// Frobenius norm estimate of the approximation.
    pub norm_estimate: T,
    pub u: Vec<Vec<Complex<T>>>,
    pub v: Vec<Vec<Complex<T>>>,
}

impl<T: Real> AcaResult<T> {
    pub fn reconstruct(&self, rows: usize, cols: usize) -> Matrix<T> {
        let mut m = Matrix::zeros(rows, cols);
        for (u, v) in self.u.iter().zip(&self.v) {
            for i in 0..rows {
                for j in 0..cols {
                    m[(i, j)] = m[(i, j)] + u[i] * v[j];
                }
            }
        }
        m
    }
}

/// Partially pivoted ACA. The first row is 0; each new column is the
/// largest entry of the residual row, each new row the largest entry of
/// the residual column, ties to the lowest index. A residual row that
/// vanishes is skipped in favour of the lowest unused row.
pub fn aca<T: Real>(a: &Matrix<T>, epsilon: T, max_rank: usize) -> Result<AcaResult<T>> {
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let (m, n) = (a.rows(), a.cols());
    let mut res = AcaResult {
        row_pivots: Vec::new(),
        col_pivots: Vec::new(),
        rank: 0,
        residual_estimate: T::zero(),
        norm_estimate: T::zero(),
        u: Vec::new(),
        v: Vec::new(),
    };
    if m == 0 || n == 0 {
        return Ok(res);
    }
    let mut used_row = vec![false; m];
    let mut used_col = vec![false; n];
    let mut norm2 = T::zero();
    let mut i = 0;
    let max_rank = max_rank.min(m).min(n);
    while res.rank < max_rank {
        used_row[i] = true;
        let mut row: Vec<Complex<T>> = a.row(i).to_vec();
        for (u, v) in res.u.iter().zip(&res.v) {
            for (r, vj) in row.iter_mut().zip(v) {
                *r = *r - u[i] * vj;
            }
        }
        let j = argmax_unused(&row, &used_col);
        let pivot = j.map(|j| row[j]).unwrap_or_else(czero);
        // a row that cancels down to rounding noise counts as vanished
        let scale = a.row(i).iter().fold(T::zero(), |acc, z| acc.max(z.norm()));
        if pivot.norm() <= T::lit(64.0) * T::epsilon() * scale {
            match used_row.iter().position(|&u| !u) {
                Some(next) => {
                    i = next;
                    continue;
                }
                None => break,
            }
        }
        let j = j.expect("nonzero pivot has a column");
        used_col[j] = true;
        let v: Vec<Complex<T>> = row.iter().map(|r| r / pivot).collect();
        let mut u: Vec<Complex<T>> = (0..m).map(|r| a[(r, j)]).collect();
        for (uk, vk) in res.u.iter().zip(&res.v) {
            for (ur, ukr) in u.iter_mut().zip(uk) {
                *ur = *ur - ukr * vk[j];
            }
        }
        let (nu2, nv2) = (sq_norm(&u), sq_norm(&v));
        let mut cross = T::zero();
        for (uk, vk) in res.u.iter().zip(&res.v) {
            cross += (dot_h(uk, &u) * dot_h(vk, &v)).re;
        }
        norm2 += T::lit(2.0) * cross + nu2 * nv2;
        let step = (nu2 * nv2).sqrt();
        res.row_pivots.push(i);
        res.col_pivots.push(j);
        res.u.push(u);
        res.v.push(v);
        res.rank += 1;
        res.residual_estimate = step;
        res.norm_estimate = norm2.max(T::zero()).sqrt();
        if step <= epsilon * res.norm_estimate {
            break;
        }
        match argmax_unused(res.u.last().unwrap(), &used_row) {
            Some(next) => i = next,
            None => break,
        }
    }
    Ok(res)
}

fn argmax_unused<T: Real>(v: &[Complex<T>], used: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (k, z) in v.iter().enumerate() {
        if used[k] {
            continue;
        }
        let a = z.norm();
        if best.map_or(true, |(_, b)| a > b) {
            best = Some((k, a));
        }
    }
    best.map(|(k, _)| k)
}

fn sq_norm<T: Real>(v: &[Complex<T>]) -> T {
    v.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
}

fn dot_h<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter().zip(b).fold(czero(), |acc, (x, y)| acc + x.conj() * y)
}

/// `𝔦_t = V P_t`: rows of `v` follow the cluster's index order, columns
/// follow `pivots`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationOperator<T> {
    pub cluster: usize,
    /// Pivot DoFs `t̃`, in selection order.
    pub pivots: Vec<usize>,
    /// Positions of the pivots within the cluster's index slice.
    pub pivot_positions: Vec<usize>,
    pub v: Matrix<T>,
}

impl<T: Real> InterpolationOperator<T> {
    pub fn rank(&self) -> usize {
        self.pivots.len()
    }
}

/// Builds the interpolation operator of `cluster` from its Green matrix.
pub fn build_interpolation_operator<T: Real>(
    mesh: &SurfaceMesh<T>,
    tree: &ClusterTree<T>,
    cluster: usize,
    spec: &KernelSpec<T>,
    side: BasisSide,
    params: &GcaParams<T>,
) -> Result<InterpolationOperator<T>> {
    let scene = tree.node(tree.root()).bbox.diameter();
    let sources = green_sources(&tree.node(cluster).bbox, params.delta, params.m, scene)?;
    let panels = tree.indices(cluster);
    let a = build_green_matrix(mesh, panels, &sources, spec, side, params.order)?;
    let max_rank = panels.len().min(sources.len());
    let mut eps = params.epsilon;
    let mut condition = f64::INFINITY;
    for _ in 0..2 {
        let res = aca(&a, eps, max_rank)?;
        if res.rank == 0 {
            return Ok(InterpolationOperator {
                cluster,
                pivots: Vec::new(),
                pivot_positions: Vec::new(),
                v: Matrix::zeros(panels.len(), 0),
            });
        }
        let block = a.select(&res.row_pivots, &res.col_pivots);
        let lu = match Lu::factor(&block) {
            Ok(lu) => lu,
            Err(_) => {
                eps = eps * T::lit(0.1);
                continue;
            }
        };
        condition = lu.condition_1().as_f64();
        if !(condition <= MAX_PIVOT_CONDITION) {
            eps = eps * T::lit(0.1);
            continue;
        }
        let k = res.rank;
        let mut v = Matrix::zeros(panels.len(), k);
        let mut row = vec![czero(); k];
        for r in 0..panels.len() {
            for (c, &j) in res.col_pivots.iter().enumerate() {
                row[c] = a[(r, j)];
            }
            lu.solve_transpose_in_place(&mut row);
            for c in 0..k {
                v[(r, c)] = row[c];
            }
        }
        for (c, &r) in res.row_pivots.iter().enumerate() {
            for cc in 0..k {
                v[(r, cc)] = if cc == c {
                    Complex::new(T::one(), T::zero())
                } else {
                    czero()
                };
            }
        }
        return Ok(InterpolationOperator {
            cluster,
            pivots: res.row_pivots.iter().map(|&r| panels[r]).collect(),
            pivot_positions: res.row_pivots,
            v,
        });
    }
    Err(Error::SingularPivot { cluster, condition })
}

/// Operators for every cluster that appears on `side` of an admissible
/// leaf, indexed by cluster id. Clusters are processed in parallel.
pub fn build_cluster_bases<T: Real>(
    mesh: &SurfaceMesh<T>,
    tree: &ClusterTree<T>,
    blocks: &BlockTree,
    spec: &KernelSpec<T>,
    side: BasisSide,
    params: &GcaParams<T>,
) -> Result<Vec<Option<InterpolationOperator<T>>>> {
    let mut needed = vec![false; tree.num_nodes()];
    for k in blocks.admissible_leaves() {
        let leaf = blocks.leaf(k);
        needed[match side {
            BasisSide::Row => leaf.row,
            BasisSide::Column => leaf.col,
        }] = true;
    }
    (0..tree.num_nodes())
        .into_par_iter()
        .map(|c| {
            if needed[c] {
                build_interpolation_operator(mesh, tree, c, spec, side, params).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}
