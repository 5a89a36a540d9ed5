//! Schedulerless assembly used as a verification oracle.

use rayon::prelude::*;

use crate::dense::Matrix;
use crate::error::Result;
use crate::h2::{GCAMatrix, GcaSetup};
use crate::kernels::KernelSpec;
use crate::mesh::SurfaceMesh;
use crate::quadrature::{build_rule, classify_pair, integrate_pair, pair_charts, QuadRule4D, SingularityCase};
use crate::scalar::{Complex, Real};

/// Rules for the four cases, disjoint at `disjoint_order`, the others at
/// `singular_order`.
pub struct RuleSet<T> {
    rules: Vec<QuadRule4D<T>>,
}

impl<T: Real> RuleSet<T> {
    pub fn new(disjoint_order: usize, singular_order: usize) -> Result<Self> {
        let rules = SingularityCase::ALL
            .iter()
            .map(|&c| {
                build_rule(
                    c,
                    if c == SingularityCase::Disjoint {
                        disjoint_order
                    } else {
                        singular_order
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rules })
    }

    pub fn get(&self, case: SingularityCase) -> &QuadRule4D<T> {
        &self.rules[case as usize]
    }
}

/// Galerkin entry for one panel pair, classified and integrated directly.
pub fn entry<T: Real>(
    mesh: &SurfaceMesh<T>,
    kernel: &KernelSpec<T>,
    rules: &RuleSet<T>,
    i: usize,
    j: usize,
) -> Result<Complex<T>> {
    let c = classify_pair(mesh, i, j)?;
    let (cx, cy) = pair_charts(mesh, &c, kernel.is_symmetric(), i, j)?;
    integrate_pair(&cx, &cy, kernel, rules.get(c.case))
}

/// Fills every leaf payload of `setup` pair by pair.
pub fn assemble_direct<T: Real>(
    mesh: &SurfaceMesh<T>,
    setup: &GcaSetup<T>,
    kernel: &KernelSpec<T>,
    disjoint_order: usize,
    singular_order: usize,
) -> Result<GCAMatrix<T>> {
    let rules = RuleSet::new(disjoint_order, singular_order)?;
    let payloads = (0..setup.blocks.num_leaves())
        .into_par_iter()
        .map(|k| {
            let (rows, cols) = setup.payload_indices(k)?;
            let mut m = Matrix::zeros(rows.len(), cols.len());
            for (a, &i) in rows.iter().enumerate() {
                for (b, &j) in cols.iter().enumerate() {
                    m[(a, b)] = entry(mesh, kernel, &rules, i, j)?;
                }
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    GCAMatrix::new(setup.clone(), payloads)
}

/// Full Galerkin matrix in DoF order.
pub fn assemble_dense<T: Real>(
    mesh: &SurfaceMesh<T>,
    kernel: &KernelSpec<T>,
    disjoint_order: usize,
    singular_order: usize,
) -> Result<Matrix<T>> {
    let rules = RuleSet::new(disjoint_order, singular_order)?;
    let n = mesh.num_triangles();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| entry(mesh, kernel, &rules, i, j)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_vec(n, n, rows.into_iter().flatten().collect())
}
