//! Cluster trees over panels and block trees over panel pairs.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;
use crate::scalar::Real;
use crate::vec3::Point3;

pub const DEFAULT_LEAF_SIZE: usize = 16;
pub const DEFAULT_ETA_ADM: f64 = 1.0;

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox<T> {
    pub min: Point3<T>,
    pub max: Point3<T>,
}

impl<T: Real> BoundingBox<T> {
    pub fn new(min: Point3<T>, max: Point3<T>) -> Self {
        Self { min, max }
    }

    /// Smallest box containing all `points`. Panics on an empty slice.
    pub fn from_points(points: &[Point3<T>]) -> Self {
        let mut b = Self::new(points[0], points[0]);
        for p in &points[1..] {
            b.include(*p);
        }
        b
    }

    pub fn include(&mut self, p: Point3<T>) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.include(other.min);
        self.include(other.max);
    }

    pub fn extent(&self) -> Point3<T> {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn center(&self) -> Point3<T> {
        let h = T::lit(0.5);
        [
            (self.min[0] + self.max[0]) * h,
            (self.min[1] + self.max[1]) * h,
            (self.min[2] + self.max[2]) * h,
        ]
    }

    pub fn diameter(&self) -> T {
        let e = self.extent();
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }

    /// Euclidean distance between two boxes; zero when they intersect.
    pub fn distance(&self, other: &Self) -> T {
        let mut d2 = T::zero();
        for k in 0..3 {
            let gap = (self.min[k] - other.max[k])
                .max(other.min[k] - self.max[k])
                .max(T::zero());
            d2 += gap * gap;
        }
        d2.sqrt()
    }

    pub fn contains(&self, p: Point3<T>) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }

    /// Index of the longest axis; ties go to the lower axis.
    pub fn longest_axis(&self) -> usize {
        let e = self.extent();
        let mut axis = 0;
        for k in 1..3 {
            if e[k] > e[axis] {
                axis = k;
            }
        }
        axis
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterNode<T> {
    /// Index range into [`ClusterTree::permutation`].
    pub begin: usize,
    pub end: usize,
    pub bbox: BoundingBox<T>,
    pub children: Option<[usize; 2]>,
    pub level: usize,
}

impl<T> ClusterNode<T> {
    pub fn size(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Binary geometric cluster tree. Nodes are stored in preorder; node 0 is
/// the root.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterTree<T> {
    nodes: Vec<ClusterNode<T>>,
    permutation: Vec<usize>,
    leaf_size: usize,
}

impl<T: Real> ClusterTree<T> {
    /// Reassembles a tree from raw parts, checking structural invariants.
    pub fn from_parts(
        nodes: Vec<ClusterNode<T>>,
        permutation: Vec<usize>,
        leaf_size: usize,
    ) -> Result<Self> {
        let n = permutation.len();
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Format("cluster permutation is not a bijection".into()));
            }
        }
        if nodes.is_empty() || nodes[0].begin != 0 || nodes[0].end != n {
            return Err(Error::Format("cluster root does not cover all indices".into()));
        }
        for (id, node) in nodes.iter().enumerate() {
            if node.begin > node.end || node.end > n {
                return Err(Error::Format(format!("cluster {id} has an invalid range")));
            }
            if let Some([a, b]) = node.children {
                let ok = a > id
                    && b > id
                    && a < nodes.len()
                    && b < nodes.len()
                    && nodes[a].begin == node.begin
                    && nodes[a].end == nodes[b].begin
                    && nodes[b].end == node.end;
                if !ok {
                    return Err(Error::Format(format!(
                        "children of cluster {id} do not partition it"
                    )));
                }
            }
        }
        Ok(Self {
            nodes,
            permutation,
            leaf_size,
        })
    }

    pub const fn root(&self) -> usize {
        0
    }

    pub fn nodes(&self) -> &[ClusterNode<T>] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &ClusterNode<T> {
        &self.nodes[id]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_indices(&self) -> usize {
        self.permutation.len()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Position-to-DoF map; every node owns a contiguous slice of it.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// DoF indices of cluster `id`.
    pub fn indices(&self, id: usize) -> &[usize] {
        let n = &self.nodes[id];
        &self.permutation[n.begin..n.end]
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }
}

/// Recursive bisection along the longest box axis at the median of the
/// triangle midpoints.
pub fn build_cluster_tree<T: Real>(mesh: &SurfaceMesh<T>, leaf_size: usize) -> Result<ClusterTree<T>> {
    if leaf_size == 0 {
        return Err(Error::InvalidArgument("leaf_size must be at least 1".into()));
    }
    let nt = mesh.num_triangles();
    if nt == 0 {
        return Err(Error::MeshInvalid("cannot cluster an empty mesh".into()));
    }
    let midpoints: Vec<Point3<T>> = (0..nt).map(|i| mesh.centroid(i)).collect();
    let boxes: Vec<BoundingBox<T>> = (0..nt)
        .map(|i| BoundingBox::from_points(&mesh.triangle_vertices(i)))
        .collect();
    let mut permutation: Vec<usize> = (0..nt).collect();
    let mut nodes = Vec::new();
    split(&mut nodes, &mut permutation, 0, nt, 0, leaf_size, &midpoints, &boxes);
    Ok(ClusterTree {
        nodes,
        permutation,
        leaf_size,
    })
}

#[allow(clippy::too_many_arguments)]
fn split<T: Real>(
    nodes: &mut Vec<ClusterNode<T>>,
    perm: &mut [usize],
    begin: usize,
    end: usize,
    level: usize,
    leaf_size: usize,
    midpoints: &[Point3<T>],
    boxes: &[BoundingBox<T>],
) -> usize {
    let mut bbox = boxes[perm[begin]];
    for &i in &perm[begin + 1..end] {
        bbox.merge(&boxes[i]);
    }
    let id = nodes.len();
    nodes.push(ClusterNode {
        begin,
        end,
        bbox,
        children: None,
        level,
    });
    if end - begin <= leaf_size {
        return id;
    }
    let axis = bbox.longest_axis();
    perm[begin..end].sort_by(|&a, &b| {
        midpoints[a][axis]
            .partial_cmp(&midpoints[b][axis])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mid = begin + (end - begin) / 2;
    let left = split(nodes, perm, begin, mid, level + 1, leaf_size, midpoints, boxes);
    let right = split(nodes, perm, mid, end, level + 1, leaf_size, midpoints, boxes);
    nodes[id].children = Some([left, right]);
    id
}

/// `max(diam t, diam s) <= eta · dist(t, s)` with a strictly positive
/// distance.
pub fn admissible<T: Real>(t: &BoundingBox<T>, s: &BoundingBox<T>, eta_adm: T) -> bool {
    let dist = t.distance(s);
    dist > T::zero() && t.diameter().max(s.diameter()) <= eta_adm * dist
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Admissible,
    Inadmissible,
    Subdivided,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockNode {
    pub row: usize,
    pub col: usize,
    pub kind: BlockKind,
    pub children: Vec<usize>,
}

/// Block tree in preorder. Leaves are numbered separately in preorder and
/// index the payload tables of the compressed matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockTree {
    nodes: Vec<BlockNode>,
    leaves: Vec<usize>,
}

impl BlockTree {
    pub fn from_nodes(nodes: Vec<BlockNode>) -> Result<Self> {
        for (id, n) in nodes.iter().enumerate() {
            let leaf = n.kind != BlockKind::Subdivided;
            if leaf != n.children.is_empty() || n.children.iter().any(|&c| c <= id || c >= nodes.len()) {
                return Err(Error::Format(format!("block node {id} is malformed")));
            }
        }
        let leaves = (0..nodes.len())
            .filter(|&i| nodes[i].kind != BlockKind::Subdivided)
            .collect();
        Ok(Self { nodes, leaves })
    }

    pub fn nodes(&self) -> &[BlockNode] {
        &self.nodes
    }

    /// Block node ids of all leaves, in preorder.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn leaf(&self, k: usize) -> &BlockNode {
        &self.nodes[self.leaves[k]]
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn admissible_leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.leaves.len()).filter(|&k| self.leaf(k).kind == BlockKind::Admissible)
    }

    pub fn dense_leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.leaves.len()).filter(|&k| self.leaf(k).kind == BlockKind::Inadmissible)
    }
}

pub fn build_block_tree<T: Real>(
    row_tree: &ClusterTree<T>,
    col_tree: &ClusterTree<T>,
    eta_adm: T,
) -> BlockTree {
    let mut nodes = Vec::new();
    descend(&mut nodes, row_tree, col_tree, row_tree.root(), col_tree.root(), eta_adm);
    BlockTree::from_nodes(nodes).expect("block tree construction is well formed")
}

fn descend<T: Real>(
    nodes: &mut Vec<BlockNode>,
    rt: &ClusterTree<T>,
    ct: &ClusterTree<T>,
    t: usize,
    s: usize,
    eta: T,
) -> usize {
    let id = nodes.len();
    let (tn, sn) = (rt.node(t), ct.node(s));
    let kind = if admissible(&tn.bbox, &sn.bbox, eta) {
        BlockKind::Admissible
    } else if tn.is_leaf() && sn.is_leaf() {
        BlockKind::Inadmissible
    } else {
        BlockKind::Subdivided
    };
    nodes.push(BlockNode {
        row: t,
        col: s,
        kind,
        children: Vec::new(),
    });
    if kind != BlockKind::Subdivided {
        return id;
    }
    let rows: Vec<usize> = tn.children.map_or(vec![t], |c| c.to_vec());
    let cols: Vec<usize> = sn.children.map_or(vec![s], |c| c.to_vec());
    let mut children = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            children.push(descend(nodes, rt, ct, r, c, eta));
        }
    }
    nodes[id].children = children;
    id
}
