mod common;

use common::*;
use h2bem::kernels::KernelSpec;
use h2bem::mesh::{build_sphere_mesh, SurfaceMesh, IDENTITY_PERM};
use h2bem::quadrature::{build_rule, classify_pair, integrate_pair, pair_charts, SingularityCase};
use h2bem::vec3;
use proptest::prelude::*;

#[test]
fn closed_form_oracle_is_frozen() {
    assert!((coulomb_self_integral(UNIT_TRIANGLE) - UNIT_TRIANGLE_COULOMB).abs() < 1e-14);
    // equilateral triangle of side 1: 4A²/3 · 3 · ln 3 with A = √3/4
    let eq = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 3f64.sqrt() / 2.0, 0.0]];
    let a = 3f64.sqrt() / 4.0;
    assert!((coulomb_self_integral(eq) - 4.0 * a * a * 3f64.ln()).abs() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Self-integrals of random well-shaped triangles match the closed
    /// form. Slivers converge far more slowly in n.
    #[test]
    fn identical_rule_matches_closed_form(
        bx in 0.3f64..2.0, fx in 0.2f64..0.8, fy in 0.5f64..1.2, z in -0.3f64..0.3,
    ) {
        let p = [[0.0, 0.0, 0.0], [bx, 0.0, 0.0], [fx * bx, fy * bx, z * bx]];
        let mesh = single_panel(p);
        let chart = mesh.chart(0, IDENTITY_PERM).unwrap();
        let rule = build_rule(SingularityCase::Identical, 8).unwrap();
        let v = integrate_pair(&chart, &chart, &KernelSpec::laplace_slp(), &rule).unwrap().re;
        let exact = coulomb_self_integral(p) / (4.0 * std::f64::consts::PI);
        prop_assert!((v - exact).abs() <= 1e-4 * exact, "{v} vs {exact}");
    }

    /// Rigid motions of a touching pair leave the integral unchanged.
    #[test]
    fn rigid_motion_invariance(angle in 0.0f64..6.28, shift in -3.0f64..3.0) {
        let base = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.3, 0.8, 0.0], [0.4, -0.7, 0.2]];
        let (c, s) = (angle.cos(), angle.sin());
        let moved: Vec<[f64; 3]> = base
            .iter()
            .map(|p| [c * p[0] - s * p[1] + shift, s * p[0] + c * p[1], p[2] - shift])
            .collect();
        let tris = vec![[0, 1, 2], [1, 0, 3]];
        let m0 = SurfaceMesh::new(base.to_vec(), tris.clone()).unwrap();
        let m1 = SurfaceMesh::new(moved, tris).unwrap();
        let k = KernelSpec::helmholtz_dlp(1.5);
        let val = |m: &SurfaceMesh<f64>| {
            let cl = classify_pair(m, 0, 1).unwrap();
            let (x, y) = pair_charts(m, &cl, false, 0, 1).unwrap();
            integrate_pair(&x, &y, &k, &build_rule(cl.case, 5).unwrap()).unwrap()
        };
        let (a, b) = (val(&m0), val(&m1));
        prop_assert!((a - b).norm() <= 1e-12 * a.norm());
    }

    /// Constant-kernel exactness for every case and order.
    #[test]
    fn weights_sum_to_a_quarter(case_ix in 0usize..4, n in 2usize..=12) {
        let r = build_rule::<f64>(SingularityCase::ALL[case_ix], n).unwrap();
        prop_assert_eq!(r.len(), SingularityCase::ALL[case_ix].sub_integrals() * n.pow(4));
        prop_assert!((r.weights.iter().sum::<f64>() - 0.25).abs() <= 1e-13);
    }
}

#[test]
fn edge_and_vertex_pairs_converge_monotonically() {
    let mesh = build_sphere_mesh::<f64>(1).unwrap();
    let k = KernelSpec::laplace_slp();
    let tris = mesh.triangles();
    for case in [SingularityCase::Vertex, SingularityCase::Edge] {
        let j = (1..tris.len())
            .find(|&j| classify_pair(&mesh, 0, j).unwrap().case == case)
            .unwrap();
        let cl = classify_pair(&mesh, 0, j).unwrap();
        let (x, y) = pair_charts(&mesh, &cl, true, 0, j).unwrap();
        let at = |n| integrate_pair(&x, &y, &k, &build_rule(case, n).unwrap()).unwrap().re;
        let reference = at(12);
        let errs: Vec<f64> = (3..=10).map(|n| (at(n) - reference).abs()).collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{case}: {errs:?}");
    }
}

#[test]
fn touching_pairs_are_symmetric_for_the_single_layer() {
    let mesh = build_sphere_mesh::<f64>(2).unwrap();
    let k = KernelSpec::helmholtz_slp(2.0);
    let rules = h2bem::reference::RuleSet::new(3, 5).unwrap();
    let tris = mesh.triangles();
    for i in 0..tris.len() {
        for j in 0..i {
            if h2bem::quadrature::shared_vertex_count(&tris[i], &tris[j]) == 0 {
                continue;
            }
            let a = h2bem::reference::entry(&mesh, &k, &rules, i, j).unwrap();
            let b = h2bem::reference::entry(&mesh, &k, &rules, j, i).unwrap();
            assert_eq!(a, b, "({i}, {j})");
        }
    }
}

#[test]
fn far_pair_is_a_point_mass() {
    let a = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]];
    let b: Vec<[f64; 3]> = a.iter().map(|p| vec3::add(*p, [0.0, 0.0, 100.0])).collect();
    let mut v = a.to_vec();
    v.extend(b);
    let mesh = SurfaceMesh::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
    let cl = classify_pair(&mesh, 0, 1).unwrap();
    assert_eq!(cl.case, SingularityCase::Disjoint);
    let val = integrate_pair(
        &mesh.chart(0, IDENTITY_PERM).unwrap(),
        &mesh.chart(1, IDENTITY_PERM).unwrap(),
        &KernelSpec::laplace_slp(),
        &build_rule(SingularityCase::Disjoint, 3).unwrap(),
    )
    .unwrap();
    let want = 0.25 / (4.0 * std::f64::consts::PI * 100.0);
    assert!((val.re - want).abs() < 1e-2 * want);
}
