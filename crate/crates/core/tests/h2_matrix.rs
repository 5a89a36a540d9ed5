mod common;

use common::*;
use h2bem::gca::GcaParams;
use h2bem::h2::{GCAMatrix, GcaSetup, SetupParams};
use h2bem::kernels::KernelSpec;
use h2bem::mesh::build_sphere_mesh;
use h2bem::reference::{assemble_dense, assemble_direct};
use h2bem::scheduler::{run_assembly, SchedulerConfig};
use h2bem::{Complex, Error};

fn tight() -> SetupParams<f64> {
    SetupParams {
        gca: GcaParams {
            epsilon: 1e-6,
            ..GcaParams::default()
        },
        ..SetupParams::default()
    }
}

#[test]
fn matvec_agrees_with_dense_oracle() {
    for level in [3, 4] {
        let mesh = build_sphere_mesh::<f64>(level).unwrap();
        for spec in [KernelSpec::laplace_slp(), KernelSpec::helmholtz_dlp(2.0)] {
            let setup = GcaSetup::build(&mesh, &spec, &tight()).unwrap();
            let h = assemble_direct(&mesh, &setup, &spec, 3, 5).unwrap();
            let dense = assemble_dense(&mesh, &spec, 3, 5).unwrap();
            for seed in 0..3 {
                let x = random_vector(mesh.num_triangles(), seed);
                let err = rel_diff(&h.matvec(&x).unwrap(), &dense.matvec(&x).unwrap());
                assert!(err <= 1e-4, "level {level} {spec:?}: {err:.2e}");
            }
        }
    }
}

#[test]
fn matvec_is_linear_and_matches_to_dense() {
    let mesh = build_sphere_mesh::<f64>(3).unwrap();
    let spec = KernelSpec::laplace_dlp();
    let setup = GcaSetup::build(&mesh, &spec, &SetupParams::default()).unwrap();
    let (h, _) = run_assembly(&mesh, &setup, &spec, &SchedulerConfig::default()).unwrap();
    let n = mesh.num_triangles();
    let (x, y) = (random_vector(n, 1), random_vector(n, 2));
    let (a, b) = (Complex::new(0.3, -1.2), Complex::new(-2.0, 0.5));
    let comb: Vec<_> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
    let hx = h.matvec(&x).unwrap();
    let hy = h.matvec(&y).unwrap();
    let want: Vec<_> = hx.iter().zip(&hy).map(|(p, q)| a * p + b * q).collect();
    assert!(rel_diff(&h.matvec(&comb).unwrap(), &want) <= 1e-13);
    let d = h.to_dense().unwrap();
    assert!(rel_diff(&d.matvec(&x).unwrap(), &hx) <= 1e-13);
    let zero = vec![Complex::new(0.0, 0.0); n];
    assert!(h.matvec(&zero).unwrap().iter().all(|z| *z == Complex::new(0.0, 0.0)));
}

#[test]
fn wrong_length_and_dense_cap_are_errors() {
    let mesh = build_sphere_mesh::<f64>(2).unwrap();
    let spec = KernelSpec::laplace_slp();
    let setup = GcaSetup::build(&mesh, &spec, &SetupParams::default()).unwrap();
    let h = assemble_direct(&mesh, &setup, &spec, 3, 5).unwrap();
    assert!(matches!(h.matvec(&random_vector(5, 0)), Err(Error::DimensionMismatch { .. })));
    assert!(matches!(h.to_dense_capped(100), Err(Error::Resource(_))));
}

#[test]
fn slp_is_symmetric_at_level_two() {
    let mesh = build_sphere_mesh::<f64>(2).unwrap();
    let spec = KernelSpec::laplace_slp();
    let setup = GcaSetup::build(&mesh, &spec, &SetupParams::default()).unwrap();
    let d = assemble_direct(&mesh, &setup, &spec, 3, 5).unwrap().to_dense().unwrap();
    let asym = d.sub(&d.transpose()).unwrap().max_abs();
    assert!(asym <= 1e-8 * d.max_abs(), "{asym:.2e}");
}

#[test]
fn mirrored_assembly_matches_full_assembly() {
    let mesh = build_sphere_mesh::<f64>(3).unwrap();
    let spec = KernelSpec::laplace_slp();
    let setup = GcaSetup::build(&mesh, &spec, &SetupParams::default()).unwrap();
    let full = run_assembly(&mesh, &setup, &spec, &SchedulerConfig::default()).unwrap().0;
    let cfg = SchedulerConfig {
        symmetric: true,
        ..SchedulerConfig::default()
    };
    let (mirrored, stats) = run_assembly(&mesh, &setup, &spec, &cfg).unwrap();
    assert!(stats.mirrored_leaves > 0);
    let a = full.to_dense().unwrap();
    let b = mirrored.to_dense().unwrap();
    // the mirror differs only by the quadrature asymmetry of near-field pairs
    assert!(b.sub(&a).unwrap().max_abs() <= 1e-8 * a.max_abs());
    assert!(b.sub(&b.transpose()).unwrap().max_abs() <= 1e-14 * b.max_abs());
}

#[test]
fn dump_load_round_trip() {
    let mesh = build_sphere_mesh::<f64>(3).unwrap();
    for spec in [KernelSpec::laplace_slp(), KernelSpec::helmholtz_dlp(3.0)] {
        let sv = GcaSetup::build(&mesh, &spec.single_layer(), &SetupParams::default()).unwrap();
        let setup = if spec == spec.single_layer() {
            sv
        } else {
            sv.for_operator(&mesh, &spec, &GcaParams::default()).unwrap()
        };
        let (h, _) = run_assembly(&mesh, &setup, &spec, &SchedulerConfig::default()).unwrap();
        let mut buf = Vec::new();
        h.dump(&mut buf).unwrap();
        let back = GCAMatrix::<f64>::load(buf.as_slice()).unwrap();
        assert_eq!(back.checksum(), h.checksum());
        assert_eq!(back.storage_bytes(), h.storage_bytes());
        assert_eq!(back.setup().shares_bases(), h.setup().shares_bases());
        let x = random_vector(mesh.num_triangles(), 4);
        assert_eq!(back.matvec(&x).unwrap(), h.matvec(&x).unwrap());

        let mut bad = buf.clone();
        bad[0] ^= 0xff;
        assert!(GCAMatrix::<f64>::load(bad.as_slice()).is_err());
        assert!(GCAMatrix::<f64>::load(&buf[..buf.len() / 2]).is_err());
    }
}

#[test]
fn storage_below_dense_from_level_four() {
    let mesh = build_sphere_mesh::<f64>(4).unwrap();
    let spec = KernelSpec::laplace_slp();
    let setup = GcaSetup::build(&mesh, &spec, &SetupParams::default()).unwrap();
    let (h, _) = run_assembly(&mesh, &setup, &spec, &SchedulerConfig::default()).unwrap();
    let dense_bytes = h.dense_entries() * std::mem::size_of::<Complex<f64>>();
    assert!(h.storage_bytes() < dense_bytes, "{} vs {dense_bytes}", h.storage_bytes());
}
