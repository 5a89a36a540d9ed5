use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use h2bem::dense::Matrix;
use h2bem::gca::{build_interpolation_operator, BasisSide};
use h2bem::h2::{GCAMatrix, GcaSetup};
use h2bem::kernels::KernelSpec;
use h2bem::mesh::{build_sphere_mesh, SurfaceMesh};
use h2bem::quadrature::{build_rule, classify_pair, SingularityCase};
use h2bem::reference::{assemble_dense, assemble_direct, entry, RuleSet};
use h2bem::scheduler::{run_assembly, AssemblyStats, BackendKind, SchedulerConfig};
use h2bem::solver::{
    assemble_layers, check_points, gca_for_level, helmholtz_bw_solve, laplace_solve_with, Harmonic,
    HelmholtzPointSource,
};
use h2bem::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_levels, parse_size, ConfigError, Operators, Problem, RunConfig};
use crate::report::{sci, spread, Report};

/// Appends scheduler events to a text file, one block per assembly.
pub struct EventLog {
    out: BufWriter<File>,
}

impl EventLog {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut out = BufWriter::new(f);
        writeln!(out, "# list case items pairs bytes backend enqueue_us dequeue_us done_us")?;
        Ok(Self { out })
    }

    fn record(&mut self, label: &str, stats: &AssemblyStats) -> Result<()> {
        writeln!(self.out, "# {label}")?;
        for e in &stats.events {
            writeln!(self.out, "{}", e.to_line())?;
        }
        self.out.flush()?;
        Ok(())
    }
}

pub struct Session {
    pub cfg: RunConfig,
    pub seed: u64,
    pub events: Option<EventLog>,
}

impl Session {
    fn log(&mut self, label: &str, stats: &AssemblyStats) -> Result<()> {
        if let Some(l) = &mut self.events {
            l.record(label, stats)?;
        }
        Ok(())
    }

    fn slp(&self) -> KernelSpec<f64> {
        match self.cfg.problem {
            Problem::LaplaceDirichlet => KernelSpec::laplace_slp(),
            Problem::HelmholtzBw => KernelSpec::helmholtz_slp(self.cfg.kappa),
        }
    }

    /// The configured mesh file, or one sphere per level.
    fn meshes(&self, default_levels: &[usize]) -> Result<Vec<(String, Option<usize>, SurfaceMesh<f64>)>> {
        if let Some(p) = &self.cfg.mesh {
            let m = SurfaceMesh::load(p).with_context(|| format!("cannot load mesh {}", p.display()))?;
            return Ok(vec![(p.display().to_string(), None, m)]);
        }
        self.cfg
            .levels_or(default_levels)
            .into_iter()
            .map(|l| Ok((format!("sphere-{l}"), Some(l), build_sphere_mesh(l)?)))
            .collect()
    }

    fn assemble_one(
        &mut self,
        mesh: &SurfaceMesh<f64>,
        setup: &GcaSetup<f64>,
        kernel: &KernelSpec<f64>,
        sched: &SchedulerConfig,
        label: &str,
    ) -> Result<(GCAMatrix<f64>, AssemblyStats, Duration)> {
        let t = Instant::now();
        let (h, stats) = run_assembly(mesh, setup, kernel, sched)?;
        let el = t.elapsed();
        self.log(label, &stats)?;
        Ok((h, stats, el))
    }
}

struct OpTimings {
    setup: Vec<Duration>,
    assembly: Vec<Duration>,
    last: Option<(GCAMatrix<f64>, AssemblyStats)>,
}

impl OpTimings {
    fn new() -> Self {
        Self {
            setup: Vec::new(),
            assembly: Vec::new(),
            last: None,
        }
    }
}

fn operator_row(mesh: &str, dofs: usize, op: &str, t: &OpTimings) -> Vec<String> {
    let (h, stats) = t.last.as_ref().expect("at least one repetition");
    let mut row = vec![mesh.to_string(), dofs.to_string(), op.to_string()];
    row.extend(spread(&t.setup));
    row.extend(spread(&t.assembly));
    row.extend([
        stats.events.len().to_string(),
        h.storage_bytes().to_string(),
        (h.dense_entries() * std::mem::size_of::<Complex<f64>>()).to_string(),
        h.checksum(),
    ]);
    row
}

const ASSEMBLE_HEADER: &[&str] = &[
    "mesh",
    "dofs",
    "operator",
    "setup_min_s",
    "setup_avg_s",
    "setup_max_s",
    "assembly_min_s",
    "assembly_avg_s",
    "assembly_max_s",
    "lists",
    "storage_bytes",
    "dense_bytes",
    "checksum",
];

pub fn assemble(s: &mut Session) -> Result<Report> {
    let mut report = Report::new(ASSEMBLE_HEADER);
    let slp = s.slp();
    let dlp = slp.double_layer();
    let sched = s.cfg.scheduler();
    let params = s.cfg.setup();
    let (want_v, want_k) = match s.cfg.operators {
        Operators::V => (true, false),
        Operators::K => (false, true),
        Operators::Both => (true, true),
    };
    for (name, _, mesh) in s.meshes(&[4])? {
        let (mut tv, mut tk) = (OpTimings::new(), OpTimings::new());
        for rep in 0..s.cfg.repetitions {
            let t = Instant::now();
            let sv = GcaSetup::build(&mesh, &slp, &params)?;
            let base = t.elapsed();
            if want_v {
                tv.setup.push(base);
                let (h, st, el) = s.assemble_one(&mesh, &sv, &slp, &sched, &format!("{name} V rep {rep}"))?;
                tv.assembly.push(el);
                tv.last = Some((h, st));
            }
            if want_k {
                let t = Instant::now();
                let sk = sv.for_operator(&mesh, &dlp, &params.gca)?;
                tk.setup.push(base + t.elapsed());
                let (h, st, el) = s.assemble_one(&mesh, &sk, &dlp, &sched, &format!("{name} K rep {rep}"))?;
                tk.assembly.push(el);
                tk.last = Some((h, st));
            }
        }
        let n = mesh.num_triangles();
        if want_v {
            report.push(operator_row(&name, n, "V", &tv));
        }
        if want_k {
            report.push(operator_row(&name, n, "K", &tk));
        }
    }
    Ok(report)
}

pub fn solve(s: &mut Session) -> Result<Report> {
    match s.cfg.problem {
        Problem::LaplaceDirichlet => solve_laplace(s),
        Problem::HelmholtzBw => solve_helmholtz(s),
    }
}

fn level_config(s: &Session, level: Option<usize>) -> h2bem::solver::ProblemConfig<f64> {
    let mut pc = s.cfg.problem_config();
    if let Some(l) = level {
        pc.setup.gca = gca_for_level(&pc.setup.gca, l);
    }
    pc
}

fn solve_laplace(s: &mut Session) -> Result<Report> {
    let mut report = Report::new(&[
        "mesh",
        "dofs",
        "function",
        "iterations",
        "l2_error",
        "ratio",
        "average_error",
        "setup_s",
        "assembly_s",
        "solve_s",
    ]);
    let all = Harmonic::<f64>::standard();
    let mut prev: Vec<Option<f64>> = vec![None; 3];
    for (name, level, mesh) in s.meshes(&[2, 3, 4])? {
        let pc = level_config(s, level);
        let ops = assemble_layers(&mesh, &KernelSpec::laplace_slp(), &pc)?;
        s.log(&format!("{name} V"), &ops.v_stats)?;
        s.log(&format!("{name} K"), &ops.k_stats)?;
        for &fi in &s.cfg.functions {
            let r = laplace_solve_with(&mesh, &ops, &all[fi - 1], &pc)?;
            let ratio = prev[fi - 1].map_or(String::new(), |p| format!("{:.4}", r.l2_error / p));
            prev[fi - 1] = Some(r.l2_error);
            report.push(vec![
                name.clone(),
                mesh.num_triangles().to_string(),
                format!("f{fi}"),
                r.iterations.to_string(),
                sci(r.l2_error),
                ratio,
                sci(r.average_error),
                format!("{:.4}", ops.setup_time.as_secs_f64()),
                format!("{:.4}", ops.assembly_time.as_secs_f64()),
                format!("{:.4}", r.solve_time.as_secs_f64()),
            ]);
        }
    }
    Ok(report)
}

fn solve_helmholtz(s: &mut Session) -> Result<Report> {
    let mut report = Report::new(&[
        "mesh",
        "dofs",
        "kappa",
        "eta",
        "iterations",
        "relative_error",
        "ratio",
        "setup_s",
        "assembly_s",
        "solve_s",
    ]);
    let (kappa, eta) = (s.cfg.kappa, s.cfg.eta);
    let f = HelmholtzPointSource {
        source: [0.0, 0.0, 0.2],
        kappa,
    };
    let points = check_points(2.0);
    let mut prev = None;
    for (name, level, mesh) in s.meshes(&[2, 3, 4])? {
        let pc = level_config(s, level);
        let r = helmholtz_bw_solve(&mesh, kappa, eta, &f, &points, &pc)?;
        let ratio = prev.map_or(String::new(), |p: f64| format!("{:.4}", r.relative_error / p));
        prev = Some(r.relative_error);
        report.push(vec![
            name,
            mesh.num_triangles().to_string(),
            kappa.to_string(),
            eta.to_string(),
            r.iterations.to_string(),
            sci(r.relative_error),
            ratio,
            format!("{:.4}", r.setup_time.as_secs_f64()),
            format!("{:.4}", r.assembly_time.as_secs_f64()),
            format!("{:.4}", r.solve_time.as_secs_f64()),
        ]);
    }
    Ok(report)
}

/// Largest level `verify` accepts; the dense oracles grow as `64^level`.
pub const MAX_VERIFY_LEVEL: usize = 3;

/// Tolerance of the dense-vs-compressed check.
pub const COMPRESSION_TOL: f64 = 1e-4;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

pub fn verify(s: &mut Session) -> Result<(Report, bool)> {
    let cfg = s.cfg.clone();
    let meshes = s.meshes(&[3])?;
    let mut report = Report::new(&["mesh", "check", "status", "detail"]);
    let mut all_pass = true;
    for (name, _, mesh) in meshes {
        if mesh.num_triangles() > 8 * 4usize.pow(MAX_VERIFY_LEVEL as u32) {
            return Err(ConfigError(format!(
                "verify runs dense oracles and is limited to {} panels (sphere level {MAX_VERIFY_LEVEL})",
                8 * 4usize.pow(MAX_VERIFY_LEVEL as u32)
            ))
            .into());
        }
        let checks = run_checks(s, &cfg, &name, &mesh)?;
        for c in checks {
            all_pass &= c.pass;
            report.push(vec![
                name.clone(),
                c.name.to_string(),
                if c.pass { "PASS" } else { "FAIL" }.to_string(),
                c.detail,
            ]);
        }
    }
    Ok((report, all_pass))
}

fn run_checks(s: &mut Session, cfg: &RunConfig, name: &str, mesh: &SurfaceMesh<f64>) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let slp = s.slp();
    let sched = cfg.scheduler();
    let params = cfg.setup();

    let mut worst = 0.0f64;
    for case in SingularityCase::ALL {
        for n in [2, 3, 5] {
            let r = build_rule::<f64>(case, n)?;
            worst = worst.max((r.weights.iter().sum::<f64>() - 0.25).abs());
        }
    }
    out.push(Check {
        name: "quadrature_exactness",
        pass: worst <= 1e-13,
        detail: format!("max |sum w - 1/4| = {worst:.2e}"),
    });

    let setup = GcaSetup::build(mesh, &slp, &params)?;
    let mut worst_id = 0.0f64;
    let mut ranks = 0;
    for (spec, side) in [(slp, BasisSide::Row), (slp.double_layer(), BasisSide::Column)] {
        for c in 0..setup.row_tree.num_nodes() {
            let op = build_interpolation_operator(mesh, &setup.row_tree, c, &spec, side, &params.gca)?;
            ranks += op.rank();
            for (a, &r) in op.pivot_positions.iter().enumerate() {
                for b in 0..op.rank() {
                    let want = if a == b { 1.0 } else { 0.0 };
                    worst_id = worst_id.max((op.v[(r, b)] - Complex::new(want, 0.0)).norm());
                }
            }
        }
    }
    out.push(Check {
        name: "aca_identity",
        pass: worst_id <= 1e-12,
        detail: format!("max |V[pivots,:] - I| = {worst_id:.2e} over {ranks} pivots"),
    });

    let (h, _, _) = s.assemble_one(mesh, &setup, &slp, &sched, &format!("{name} verify V"))?;
    let dense = assemble_dense(mesh, &slp, cfg.disjoint_order, cfg.singular_order)?;
    let err = h.to_dense()?.sub(&dense)?.frobenius_norm() / dense.frobenius_norm();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut probe = 0.0f64;
    for _ in 0..10 {
        let x: Vec<Complex<f64>> = (0..mesh.num_triangles())
            .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let d = sub_norm(&h.matvec(&x)?, &dense.matvec(&x)?);
        probe = probe.max(d / (dense.frobenius_norm() * norm(&x)));
    }
    out.push(Check {
        name: "dense_vs_compressed",
        pass: err <= COMPRESSION_TOL && probe <= COMPRESSION_TOL,
        detail: format!(
            "relative Frobenius error {err:.2e}, matvec probe {probe:.2e}, {} admissible leaves",
            setup.blocks.admissible_leaves().count()
        ),
    });

    let mut sums = Vec::new();
    for workers in [0, 8] {
        for maxsize in [64 * 1024, cfg.maxsize_bytes] {
            let sc = SchedulerConfig {
                workers_per_backend: workers,
                maxsize_bytes: maxsize,
                backends: vec![BackendKind::Scalar, BackendKind::Batch],
                ..sched.clone()
            };
            let label = format!("{name} verify workers {workers} maxsize {maxsize}");
            sums.push(s.assemble_one(mesh, &setup, &slp, &sc, &label)?.0.checksum());
        }
    }
    let direct = assemble_direct(mesh, &setup, &slp, cfg.disjoint_order, cfg.singular_order)?.checksum();
    let same = sums.iter().all(|c| *c == sums[0]) && direct == sums[0];
    out.push(Check {
        name: "scheduler_determinism",
        pass: same,
        detail: format!("workers 0 vs 8, two budgets, direct oracle: checksum {}", &sums[0][..16]),
    });

    let full = h.to_dense()?;
    let rules = RuleSet::new(cfg.disjoint_order, cfg.singular_order)?;
    let (mut checked, mut wrong) = (0, 0);
    for i in 0..mesh.num_triangles() {
        for j in 0..mesh.num_triangles() {
            if classify_pair(mesh, i, j)?.case == SingularityCase::Disjoint {
                continue;
            }
            checked += 1;
            if full[(i, j)] != entry(mesh, &slp, &rules, i, j)? {
                wrong += 1;
            }
        }
    }
    out.push(Check {
        name: "overwrite_protocol",
        pass: wrong == 0,
        detail: format!("{checked} touching pairs, {wrong} differ"),
    });

    let asym = asymmetry(&full);
    out.push(Check {
        name: "slp_symmetry",
        pass: asym <= 1e-8,
        detail: format!("max |V - V^T| / max |V| = {asym:.2e}"),
    });
    Ok(out)
}

fn norm(x: &[Complex<f64>]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn sub_norm(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

fn asymmetry(m: &Matrix<f64>) -> f64 {
    m.sub(&m.transpose()).map(|d| d.max_abs() / m.max_abs()).unwrap_or(f64::INFINITY)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Maxsize,
    Workers,
    Orders,
    Epsilon,
    Levels,
}

pub fn sweep(s: &mut Session, param: SweepParam, values: &str) -> Result<Report> {
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(ConfigError("sweep needs at least one value".into()).into());
    }
    let mut report = Report::new(&[
        "param",
        "value",
        "mesh",
        "dofs",
        "operator",
        "assembly_min_s",
        "assembly_avg_s",
        "assembly_max_s",
        "lists",
        "storage_bytes",
        "checksum",
    ]);
    let base = s.cfg.clone();
    for v in values {
        let mut cfg = base.clone();
        match param {
            SweepParam::Maxsize => cfg.maxsize_bytes = parse_size(v)?,
            SweepParam::Workers => cfg.workers = v.parse().map_err(|_| ConfigError(format!("bad worker count `{v}`")))?,
            SweepParam::Orders => {
                let (d, g) = v
                    .split_once('/')
                    .ok_or_else(|| ConfigError(format!("orders are written `disjoint/singular`, got `{v}`")))?;
                cfg.disjoint_order = d.trim().parse().map_err(|_| ConfigError(format!("bad order `{d}`")))?;
                cfg.singular_order = g.trim().parse().map_err(|_| ConfigError(format!("bad order `{g}`")))?;
            }
            SweepParam::Epsilon => cfg.epsilon = v.parse().map_err(|_| ConfigError(format!("bad epsilon `{v}`")))?,
            SweepParam::Levels => cfg.levels = Some(parse_levels(v)?),
        }
        cfg.validate()?;
        s.cfg = cfg;
        let rows = assemble(s)?;
        for r in rows.rows {
            let mut row = vec![format!("{param:?}").to_lowercase(), v.to_string()];
            row.extend([&r[0], &r[1], &r[2], &r[6], &r[7], &r[8], &r[9], &r[10], &r[12]].map(String::clone));
            report.push(row);
        }
    }
    s.cfg = base;
    if report.rows.is_empty() {
        bail!("sweep produced no rows");
    }
    Ok(report)
}
