//! Compressed operator `G|_{t×s} ≈ V_t S_{t,s} W_sᵀ` on admissible leaves
//! plus dense near-field leaves.

use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::cluster::{
    build_block_tree, build_cluster_tree, BlockKind, BlockNode, BlockTree, BoundingBox,
    ClusterNode, ClusterTree,
};
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::gca::{build_cluster_bases, BasisSide, GcaParams, InterpolationOperator};
use crate::kernels::{KernelSpec, Layer};
use crate::mesh::SurfaceMesh;
use crate::scalar::{czero, Complex, Real};

/// Default cap on the number of entries [`GCAMatrix::to_dense`] expands.
pub const DEFAULT_DENSE_CAP: usize = 4096 * 4096;

const MAGIC: &[u8; 8] = b"H2BEMGCA";
const FORMAT_VERSION: u32 = 1;

pub type Bases<T> = Arc<Vec<Option<InterpolationOperator<T>>>>;

/// Trees, block partition and cluster bases shared by the operators
/// assembled on one mesh.
#[derive(Clone, Debug)]
pub struct GcaSetup<T> {
    pub row_tree: Arc<ClusterTree<T>>,
    pub col_tree: Arc<ClusterTree<T>>,
    pub blocks: Arc<BlockTree>,
    pub row_bases: Bases<T>,
    pub col_bases: Bases<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetupParams<T> {
    pub leaf_size: usize,
    pub eta_adm: T,
    pub gca: GcaParams<T>,
}

impl<T: Real> Default for SetupParams<T> {
    fn default() -> Self {
        Self {
            leaf_size: crate::cluster::DEFAULT_LEAF_SIZE,
            eta_adm: T::lit(crate::cluster::DEFAULT_ETA_ADM),
            gca: GcaParams::default(),
        }
    }
}

impl<T: Real> GcaSetup<T> {
    /// Builds the shared cluster tree, the block tree and both bases.
    pub fn build(mesh: &SurfaceMesh<T>, spec: &KernelSpec<T>, params: &SetupParams<T>) -> Result<Self> {
        let tree = Arc::new(build_cluster_tree(mesh, params.leaf_size)?);
        let blocks = Arc::new(build_block_tree(&tree, &tree, params.eta_adm));
        let row_bases = Arc::new(build_cluster_bases(
            mesh,
            &tree,
            &blocks,
            spec,
            BasisSide::Row,
            &params.gca,
        )?);
        let mut setup = Self {
            row_tree: Arc::clone(&tree),
            col_tree: tree,
            blocks,
            col_bases: Arc::clone(&row_bases),
            row_bases,
        };
        setup.col_bases = setup.column_bases_for(mesh, spec, &params.gca)?;
        Ok(setup)
    }

    /// Same trees and row bases, column bases rebuilt for `spec`. Row bases
    /// only depend on the equation, so V and K can share them.
    pub fn for_operator(&self, mesh: &SurfaceMesh<T>, spec: &KernelSpec<T>, gca: &GcaParams<T>) -> Result<Self> {
        let mut s = self.clone();
        s.col_bases = self.column_bases_for(mesh, spec, gca)?;
        Ok(s)
    }

    fn column_bases_for(&self, mesh: &SurfaceMesh<T>, spec: &KernelSpec<T>, gca: &GcaParams<T>) -> Result<Bases<T>> {
        if spec.layer == Layer::Single && Arc::ptr_eq(&self.row_tree, &self.col_tree) {
            return Ok(Arc::clone(&self.row_bases));
        }
        Ok(Arc::new(build_cluster_bases(
            mesh,
            &self.col_tree,
            &self.blocks,
            spec,
            BasisSide::Column,
            gca,
        )?))
    }

    pub fn shares_bases(&self) -> bool {
        Arc::ptr_eq(&self.row_bases, &self.col_bases)
    }

    pub fn row_basis(&self, cluster: usize) -> Result<&InterpolationOperator<T>> {
        self.row_bases
            .get(cluster)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::InvalidArgument(format!("no row basis for cluster {cluster}")))
    }

    pub fn col_basis(&self, cluster: usize) -> Result<&InterpolationOperator<T>> {
        self.col_bases
            .get(cluster)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::InvalidArgument(format!("no column basis for cluster {cluster}")))
    }

    /// Row and column DoFs of leaf `k`'s payload: full cluster index sets
    /// for dense leaves, pivot sets for admissible ones.
    pub fn payload_indices(&self, k: usize) -> Result<(&[usize], &[usize])> {
        let leaf = self.blocks.leaf(k);
        match leaf.kind {
            BlockKind::Admissible => Ok((
                &self.row_basis(leaf.row)?.pivots,
                &self.col_basis(leaf.col)?.pivots,
            )),
            _ => Ok((self.row_tree.indices(leaf.row), self.col_tree.indices(leaf.col))),
        }
    }

    pub fn payload_shape(&self, k: usize) -> Result<(usize, usize)> {
        let (r, c) = self.payload_indices(k)?;
        Ok((r.len(), c.len()))
    }
}

/// Compressed Galerkin matrix. Payload `k` belongs to block-tree leaf `k`.
#[derive(Clone, Debug)]
pub struct GCAMatrix<T> {
    setup: GcaSetup<T>,
    payloads: Vec<Matrix<T>>,
}

impl<T: Real> GCAMatrix<T> {
    pub fn new(setup: GcaSetup<T>, payloads: Vec<Matrix<T>>) -> Result<Self> {
        if payloads.len() != setup.blocks.num_leaves() {
            return Err(Error::DimensionMismatch {
                expected: setup.blocks.num_leaves(),
                actual: payloads.len(),
            });
        }
        for (k, p) in payloads.iter().enumerate() {
            let (r, c) = setup.payload_shape(k)?;
            if (p.rows(), p.cols()) != (r, c) {
                return Err(Error::DimensionMismatch {
                    expected: r * c,
                    actual: p.rows() * p.cols(),
                });
            }
        }
        Ok(Self { setup, payloads })
    }

    pub fn setup(&self) -> &GcaSetup<T> {
        &self.setup
    }

    pub fn payloads(&self) -> &[Matrix<T>] {
        &self.payloads
    }

    pub fn num_rows(&self) -> usize {
        self.setup.row_tree.num_indices()
    }

    pub fn num_cols(&self) -> usize {
        self.setup.col_tree.num_indices()
    }

    /// `y = M x` in external DoF order.
    pub fn matvec(&self, x: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        let mut y = vec![czero(); self.num_rows()];
        self.matvec_into(x, &mut y)?;
        Ok(y)
    }

    pub fn matvec_into(&self, x: &[Complex<T>], y: &mut [Complex<T>]) -> Result<()> {
        if x.len() != self.num_cols() {
            return Err(Error::DimensionMismatch {
                expected: self.num_cols(),
                actual: x.len(),
            });
        }
        if y.len() != self.num_rows() {
            return Err(Error::DimensionMismatch {
                expected: self.num_rows(),
                actual: y.len(),
            });
        }
        y.iter_mut().for_each(|v| *v = czero());
        let s = &self.setup;
        let blocks = &s.blocks;
        // Forward transforms x̂_s = W_sᵀ x|_s.
        let mut xhat: Vec<Option<Vec<Complex<T>>>> = vec![None; s.col_tree.num_nodes()];
        let mut yhat: Vec<Option<Vec<Complex<T>>>> = vec![None; s.row_tree.num_nodes()];
        let mut xs = Vec::new();
        for k in blocks.admissible_leaves() {
            let leaf = blocks.leaf(k);
            if xhat[leaf.col].is_none() {
                let w = s.col_basis(leaf.col)?;
                gather(x, s.col_tree.indices(leaf.col), &mut xs);
                let mut out = vec![czero(); w.rank()];
                w.v.gemv_t_acc(&xs, &mut out);
                xhat[leaf.col] = Some(out);
            }
            if yhat[leaf.row].is_none() {
                yhat[leaf.row] = Some(vec![czero(); s.row_basis(leaf.row)?.rank()]);
            }
        }
        let mut ys = Vec::new();
        for k in 0..blocks.num_leaves() {
            let leaf = blocks.leaf(k);
            let p = &self.payloads[k];
            match leaf.kind {
                BlockKind::Admissible => {
                    let src = xhat[leaf.col].as_ref().expect("forward transform present");
                    p.gemv_acc(src, yhat[leaf.row].as_mut().expect("row accumulator present"));
                }
                _ => {
                    gather(x, s.col_tree.indices(leaf.col), &mut xs);
                    ys.clear();
                    ys.resize(p.rows(), czero());
                    p.gemv_acc(&xs, &mut ys);
                    for (&i, v) in s.row_tree.indices(leaf.row).iter().zip(&ys) {
                        y[i] = y[i] + v;
                    }
                }
            }
        }
        for (t, acc) in yhat.iter().enumerate() {
            if let Some(acc) = acc {
                let v = s.row_basis(t)?;
                ys.clear();
                ys.resize(v.v.rows(), czero());
                v.v.gemv_acc(acc, &mut ys);
                for (&i, val) in s.row_tree.indices(t).iter().zip(&ys) {
                    y[i] = y[i] + val;
                }
            }
        }
        Ok(())
    }

    /// Expands the matrix in external DoF order, refusing more than `cap`
    /// entries.
    pub fn to_dense_capped(&self, cap: usize) -> Result<Matrix<T>> {
        let (nr, nc) = (self.num_rows(), self.num_cols());
        if nr.saturating_mul(nc) > cap {
            return Err(Error::Resource(format!(
                "dense expansion of {nr}x{nc} exceeds the cap of {cap} entries"
            )));
        }
        let s = &self.setup;
        let mut out = Matrix::zeros(nr, nc);
        for k in 0..s.blocks.num_leaves() {
            let leaf = s.blocks.leaf(k);
            let rows = s.row_tree.indices(leaf.row);
            let cols = s.col_tree.indices(leaf.col);
            let block = match leaf.kind {
                BlockKind::Admissible => {
                    let v = &s.row_basis(leaf.row)?.v;
                    let w = &s.col_basis(leaf.col)?.v;
                    v.matmul(&self.payloads[k])?.matmul(&w.transpose())?
                }
                _ => self.payloads[k].clone(),
            };
            for (a, &i) in rows.iter().enumerate() {
                for (b, &j) in cols.iter().enumerate() {
                    out[(i, j)] = block[(a, b)];
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Result<Matrix<T>> {
        self.to_dense_capped(DEFAULT_DENSE_CAP)
    }

    /// Bytes held by payloads, bases and pivot lists.
    pub fn storage_bytes(&self) -> usize {
        let entry = std::mem::size_of::<Complex<T>>();
        let idx = std::mem::size_of::<usize>();
        let payload: usize = self.payloads.iter().map(|p| p.data().len() * entry).sum();
        let basis_bytes = |b: &Bases<T>| -> usize {
            b.iter()
                .flatten()
                .map(|op| op.v.data().len() * entry + 2 * op.pivots.len() * idx)
                .sum()
        };
        let mut total = payload + basis_bytes(&self.setup.row_bases);
        if !self.setup.shares_bases() {
            total += basis_bytes(&self.setup.col_bases);
        }
        total
    }

    /// Number of entries of the uncompressed matrix.
    pub fn dense_entries(&self) -> usize {
        self.num_rows() * self.num_cols()
    }

    /// SHA-256 over all payload entries (little-endian `f64` pairs) in leaf
    /// order, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.payloads {
            h.update((p.rows() as u64).to_le_bytes());
            h.update((p.cols() as u64).to_le_bytes());
            for z in p.data() {
                h.update(z.re.as_f64().to_le_bytes());
                h.update(z.im.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        let s = &self.setup;
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        let shared_tree = Arc::ptr_eq(&s.row_tree, &s.col_tree);
        w.write_u8(shared_tree as u8)?;
        write_tree(&mut w, &s.row_tree)?;
        if !shared_tree {
            write_tree(&mut w, &s.col_tree)?;
        }
        write_blocks(&mut w, &s.blocks)?;
        let shared_bases = s.shares_bases();
        w.write_u8(shared_bases as u8)?;
        write_bases(&mut w, &s.row_bases)?;
        if !shared_bases {
            write_bases(&mut w, &s.col_bases)?;
        }
        write_u64(&mut w, self.payloads.len())?;
        for p in &self.payloads {
            write_matrix(&mut w, p)?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a compressed matrix dump".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported dump version {version}")));
        }
        let shared_tree = r.read_u8()? == 1;
        let row_tree = Arc::new(read_tree(&mut r)?);
        let col_tree = if shared_tree {
            Arc::clone(&row_tree)
        } else {
            Arc::new(read_tree(&mut r)?)
        };
        let blocks = Arc::new(read_blocks(&mut r)?);
        let shared_bases = r.read_u8()? == 1;
        let row_bases = Arc::new(read_bases(&mut r)?);
        let col_bases = if shared_bases {
            Arc::clone(&row_bases)
        } else {
            Arc::new(read_bases(&mut r)?)
        };
        let n = read_len(&mut r)?;
        let mut payloads = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            payloads.push(read_matrix(&mut r)?);
        }
        let setup = GcaSetup {
            row_tree,
            col_tree,
            blocks,
            row_bases,
            col_bases,
        };
        Self::new(setup, payloads)
    }
}

fn gather<T: Real>(x: &[Complex<T>], idx: &[usize], out: &mut Vec<Complex<T>>) {
    out.clear();
    out.extend(idx.iter().map(|&i| x[i]));
}

const MAX_LEN: u64 = 1 << 40;

fn write_u64<W: Write>(w: &mut W, v: usize) -> Result<()> {
    w.write_u64::<LittleEndian>(v as u64)?;
    Ok(())
}

fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let v = r.read_u64::<LittleEndian>()?;
    if v > MAX_LEN {
        return Err(Error::Format(format!("length field {v} is implausible")));
    }
    Ok(v as usize)
}

fn write_real<W: Write, T: Real>(w: &mut W, v: T) -> Result<()> {
    w.write_f64::<LittleEndian>(v.as_f64())?;
    Ok(())
}

fn read_real<R: Read, T: Real>(r: &mut R) -> Result<T> {
    Ok(T::lit(r.read_f64::<LittleEndian>()?))
}

fn write_tree<W: Write, T: Real>(w: &mut W, t: &ClusterTree<T>) -> Result<()> {
    write_u64(w, t.leaf_size())?;
    write_u64(w, t.num_indices())?;
    for &p in t.permutation() {
        write_u64(w, p)?;
    }
    write_u64(w, t.num_nodes())?;
    for n in t.nodes() {
        write_u64(w, n.begin)?;
        write_u64(w, n.end)?;
        write_u64(w, n.level)?;
        match n.children {
            Some([a, b]) => {
                w.write_u8(1)?;
                write_u64(w, a)?;
                write_u64(w, b)?;
            }
            None => w.write_u8(0)?,
        }
        for v in n.bbox.min.iter().chain(&n.bbox.max) {
            write_real(w, *v)?;
        }
    }
    Ok(())
}

fn read_tree<R: Read, T: Real>(r: &mut R) -> Result<ClusterTree<T>> {
    let leaf_size = read_len(r)?;
    let n = read_len(r)?;
    let perm = (0..n).map(|_| read_len(r)).collect::<Result<Vec<_>>>()?;
    let nn = read_len(r)?;
    let mut nodes = Vec::with_capacity(nn.min(1 << 20));
    for _ in 0..nn {
        let begin = read_len(r)?;
        let end = read_len(r)?;
        let level = read_len(r)?;
        let children = match r.read_u8()? {
            0 => None,
            1 => Some([read_len(r)?, read_len(r)?]),
            f => return Err(Error::Format(format!("bad child flag {f}"))),
        };
        let mut c = [T::zero(); 6];
        for v in &mut c {
            *v = read_real(r)?;
        }
        nodes.push(ClusterNode {
            begin,
            end,
            bbox: BoundingBox::new([c[0], c[1], c[2]], [c[3], c[4], c[5]]),
            children,
            level,
        });
    }
    ClusterTree::from_parts(nodes, perm, leaf_size)
}

fn write_blocks<W: Write>(w: &mut W, b: &BlockTree) -> Result<()> {
    write_u64(w, b.nodes().len())?;
    for n in b.nodes() {
        write_u64(w, n.row)?;
        write_u64(w, n.col)?;
        w.write_u8(match n.kind {
            BlockKind::Admissible => 0,
            BlockKind::Inadmissible => 1,
            BlockKind::Subdivided => 2,
        })?;
        write_u64(w, n.children.len())?;
        for &c in &n.children {
            write_u64(w, c)?;
        }
    }
    Ok(())
}

fn read_blocks<R: Read>(r: &mut R) -> Result<BlockTree> {
    let nn = read_len(r)?;
    let mut nodes = Vec::with_capacity(nn.min(1 << 20));
    for _ in 0..nn {
        let row = read_len(r)?;
        let col = read_len(r)?;
        let kind = match r.read_u8()? {
            0 => BlockKind::Admissible,
            1 => BlockKind::Inadmissible,
            2 => BlockKind::Subdivided,
            k => return Err(Error::Format(format!("bad block kind {k}"))),
        };
        let nc = read_len(r)?;
        let children = (0..nc).map(|_| read_len(r)).collect::<Result<Vec<_>>>()?;
        nodes.push(BlockNode {
            row,
            col,
            kind,
            children,
        });
    }
    BlockTree::from_nodes(nodes)
}

fn write_bases<W: Write, T: Real>(w: &mut W, b: &[Option<InterpolationOperator<T>>]) -> Result<()> {
    write_u64(w, b.len())?;
    for op in b {
        match op {
            None => w.write_u8(0)?,
            Some(op) => {
                w.write_u8(1)?;
                write_u64(w, op.cluster)?;
                write_u64(w, op.pivots.len())?;
                for (&p, &q) in op.pivots.iter().zip(&op.pivot_positions) {
                    write_u64(w, p)?;
                    write_u64(w, q)?;
                }
                write_matrix(w, &op.v)?;
            }
        }
    }
    Ok(())
}

fn read_bases<R: Read, T: Real>(r: &mut R) -> Result<Vec<Option<InterpolationOperator<T>>>> {
    let n = read_len(r)?;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        match r.read_u8()? {
            0 => out.push(None),
            1 => {
                let cluster = read_len(r)?;
                let k = read_len(r)?;
                let mut pivots = Vec::with_capacity(k.min(1 << 20));
                let mut pivot_positions = Vec::with_capacity(k.min(1 << 20));
                for _ in 0..k {
                    pivots.push(read_len(r)?);
                    pivot_positions.push(read_len(r)?);
                }
                let v = read_matrix(r)?;
                out.push(Some(InterpolationOperator {
                    cluster,
                    pivots,
                    pivot_positions,
                    v,
                }));
            }
            f => return Err(Error::Format(format!("bad basis flag {f}"))),
        }
    }
    Ok(out)
}

fn write_matrix<W: Write, T: Real>(w: &mut W, m: &Matrix<T>) -> Result<()> {
    write_u64(w, m.rows())?;
    write_u64(w, m.cols())?;
    for z in m.data() {
        write_real(w, z.re)?;
        write_real(w, z.im)?;
    }
    Ok(())
}

fn read_matrix<R: Read, T: Real>(r: &mut R) -> Result<Matrix<T>> {
    let rows = read_len(r)?;
    let cols = read_len(r)?;
    let n = rows
        .checked_mul(cols)
        .filter(|&n| n as u64 <= MAX_LEN)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    let mut data = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let re = read_real(r)?;
        let im = read_real(r)?;
        data.push(Complex::new(re, im));
    }
    Matrix::from_vec(rows, cols, data)
}
