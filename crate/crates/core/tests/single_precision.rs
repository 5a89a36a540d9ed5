use h2bem::h2::SetupParams;
use h2bem::kernels::KernelSpec;
use h2bem::mesh::build_sphere_mesh;
use h2bem::scheduler::{run_assembly, SchedulerConfig};
use h2bem::solver::{laplace_dirichlet_neumann, Harmonic, ProblemConfig};
use h2bem::{Complex, GcaSetup32, GcaSetup64, SurfaceMesh32};

#[test]
fn f32_assembly_tracks_f64() {
    let m32: SurfaceMesh32 = build_sphere_mesh(3).unwrap();
    let m64 = build_sphere_mesh::<f64>(3).unwrap();
    let spec32 = KernelSpec::<f32>::laplace_slp();
    let spec64 = KernelSpec::<f64>::laplace_slp();
    let s32 = GcaSetup32::build(&m32, &spec32, &SetupParams::default()).unwrap();
    let s64 = GcaSetup64::build(&m64, &spec64, &SetupParams::default()).unwrap();
    let (h32, _) = run_assembly(&m32, &s32, &spec32, &SchedulerConfig::default()).unwrap();
    let (h64, _) = run_assembly(&m64, &s64, &spec64, &SchedulerConfig::default()).unwrap();
    let n = m64.num_triangles();
    let x64: Vec<Complex<f64>> = (0..n).map(|i| Complex::new((i as f64 * 0.37).sin(), 0.0)).collect();
    let x32: Vec<Complex<f32>> = x64.iter().map(|z| Complex::new(z.re as f32, z.im as f32)).collect();
    let y32 = h32.matvec(&x32).unwrap();
    let y64 = h64.matvec(&x64).unwrap();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (a, b) in y32.iter().zip(&y64) {
        num += (a.re as f64 - b.re).powi(2) + (a.im as f64 - b.im).powi(2);
        den += b.norm_sqr();
    }
    assert!((num / den).sqrt() < 1e-4);
}

#[test]
fn f32_laplace_solve_converges_to_single_precision() {
    let mesh = build_sphere_mesh::<f32>(2).unwrap();
    let cfg = ProblemConfig::<f32> {
        tol: 1e-5,
        ..ProblemConfig::default()
    };
    let (r, _) = laplace_dirichlet_neumann(&mesh, &Harmonic::Quadratic, &cfg).unwrap();
    let (r64, _) = laplace_dirichlet_neumann(&build_sphere_mesh::<f64>(2).unwrap(), &Harmonic::Quadratic, &ProblemConfig::default()).unwrap();
    assert!((r.l2_error as f64 - r64.l2_error).abs() < 1e-3 * r64.l2_error.max(1.0));
}
