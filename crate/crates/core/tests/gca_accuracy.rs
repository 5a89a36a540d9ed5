mod common;

use common::*;
use h2bem::cluster::BlockKind;
use h2bem::dense::Matrix;
use h2bem::gca::{aca, GcaParams};
use h2bem::h2::{GcaSetup, SetupParams};
use h2bem::kernels::KernelSpec;
use h2bem::mesh::build_sphere_mesh;
use h2bem::reference::assemble_dense;
use h2bem::Complex;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aca_rank_one_from_floats(
        u in prop::collection::vec(0.1f64..10.0, 2..12),
        v in prop::collection::vec(-5.0f64..5.0, 2..12),
        phase in 0.0f64..6.28,
    ) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let z = Complex::from_polar(1.0, phase);
        let a = Matrix::from_fn(u.len(), v.len(), |i, j| z * u[i] * v[j]);
        let r = aca(&a, 1e-10, u.len().min(v.len())).unwrap();
        prop_assert_eq!(r.rank, 1);
        let err = r.reconstruct(a.rows(), a.cols()).sub(&a).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-14 * a.frobenius_norm());
    }

    #[test]
    fn aca_graded_spectrum_near_optimal(seed in 0u64..1000, decay in 0.15f64..0.5) {
        let eps = 1e-6;
        let sigma: Vec<f64> = (0..30).map(|k| 10f64.powf(-decay * k as f64)).collect();
        let g = graded_matrix(30, &sigma, seed);
        let gm = from_nalgebra(&g);
        let r = aca(&gm, eps, 30).unwrap();
        let err = r.reconstruct(30, 30).sub(&gm).unwrap().frobenius_norm();
        prop_assert!(err <= 10.0 * eps * frobenius(&g), "rank {} err {}", r.rank, err);
        // the cross cannot beat the truncated SVD of the same rank
        prop_assert!(svd_tail(&g, r.rank) <= err * (1.0 + 1e-9) + 1e-15);
    }
}

#[test]
fn graded_50_matches_svd_oracle() {
    for eps in [1e-4, 1e-6, 1e-8] {
        let sigma: Vec<f64> = (0..50).map(|k| 10f64.powf(-0.25 * k as f64)).collect();
        let g = graded_matrix(50, &sigma, 11);
        let r = aca(&from_nalgebra(&g), eps, 50).unwrap();
        let err = r.reconstruct(50, 50).sub(&from_nalgebra(&g)).unwrap().frobenius_norm() / frobenius(&g);
        assert!(err <= 10.0 * eps, "eps {eps}: err {err}");
        let needed = (0..=50).find(|&k| svd_tail(&g, k) <= eps * frobenius(&g)).unwrap();
        assert!(r.rank <= needed + 8, "eps {eps}: rank {} vs svd {needed}", r.rank);
    }
}

/// Each admissible block of a level-4 sphere is reproduced from its pivot
/// rows and columns to within a small multiple of epsilon.
#[test]
fn far_field_blocks_reproduced() {
    let mesh = build_sphere_mesh::<f64>(4).unwrap();
    let spec = KernelSpec::laplace_slp();
    let eps = 1e-4;
    let params = SetupParams {
        gca: GcaParams {
            epsilon: eps,
            ..GcaParams::default()
        },
        ..SetupParams::default()
    };
    let setup = GcaSetup::build(&mesh, &spec, &params).unwrap();
    let dense = assemble_dense(&mesh, &spec, 3, 5).unwrap();
    let (mut num, mut den, mut worst, mut blocks) = (0.0, 0.0, 0.0f64, 0);
    for k in setup.blocks.admissible_leaves() {
        let leaf = setup.blocks.leaf(k);
        let rows = setup.row_tree.indices(leaf.row);
        let cols = setup.col_tree.indices(leaf.col);
        let vt = &setup.row_basis(leaf.row).unwrap().v;
        let ws = &setup.col_basis(leaf.col).unwrap();
        let g = dense.select(rows, cols);
        let s = dense.select(&setup.row_basis(leaf.row).unwrap().pivots, &ws.pivots);
        let approx = vt.matmul(&s).unwrap().matmul(&ws.v.transpose()).unwrap();
        let e = approx.sub(&g).unwrap().frobenius_norm();
        let n = g.frobenius_norm();
        num += e * e;
        den += n * n;
        worst = worst.max(e / n);
        blocks += 1;
    }
    assert!(blocks > 0);
    let total = (num / den).sqrt();
    assert!(total <= 10.0 * eps, "aggregate {total:.2e}");
    assert!(worst <= 100.0 * eps, "worst block {worst:.2e}");
}

#[test]
fn dlp_far_field_two_sided() {
    let mesh = build_sphere_mesh::<f64>(4).unwrap();
    let slp = KernelSpec::laplace_slp();
    let dlp = KernelSpec::laplace_dlp();
    let params = SetupParams {
        gca: GcaParams {
            epsilon: 1e-6,
            ..GcaParams::default()
        },
        ..SetupParams::default()
    };
    let sv = GcaSetup::build(&mesh, &slp, &params).unwrap();
    let sk = sv.for_operator(&mesh, &dlp, &params.gca).unwrap();
    assert!(!sk.shares_bases());
    let h = h2bem::reference::assemble_direct(&mesh, &sk, &dlp, 3, 5).unwrap();
    let dense = assemble_dense(&mesh, &dlp, 3, 5).unwrap();
    let err = h.to_dense().unwrap().sub(&dense).unwrap().frobenius_norm() / dense.frobenius_norm();
    assert!(err <= 1e-4, "{err:.2e}");
    let far = sk
        .blocks
        .leaves()
        .iter()
        .filter(|&&b| sk.blocks.nodes()[b].kind == BlockKind::Admissible)
        .count();
    assert!(far > 0);
}
