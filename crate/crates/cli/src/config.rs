use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use h2bem::gca::GcaParams;
use h2bem::h2::SetupParams;
use h2bem::quadrature::MAX_RULE_ORDER;
use h2bem::scheduler::{BackendKind, SchedulerConfig, PAIR_BYTES};
use h2bem::solver::ProblemConfig;

/// Bad user input; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Problem {
    LaplaceDirichlet,
    HelmholtzBw,
}

impl FromStr for Problem {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        <Self as ValueEnum>::from_str(s, true).map_err(|_| bad(format!("unknown problem `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Operators {
    V,
    K,
    Both,
}

impl FromStr for Operators {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        <Self as ValueEnum>::from_str(s, true).map_err(|_| bad(format!("unknown operator set `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    pub levels: Option<Vec<usize>>,
    pub mesh: Option<PathBuf>,
    pub disjoint_order: usize,
    pub singular_order: usize,
    pub maxsize_bytes: usize,
    pub workers: usize,
    pub backends: Vec<BackendKind>,
    pub delta: f64,
    pub m: usize,
    pub epsilon: f64,
    pub eta_adm: f64,
    pub leaf_size: usize,
    pub kappa: f64,
    pub eta: f64,
    pub repetitions: usize,
    pub operators: Operators,
    pub functions: Vec<usize>,
    pub tol: f64,
    pub maxit: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SchedulerConfig::default();
        let g = GcaParams::<f64>::default();
        let p = SetupParams::<f64>::default();
        Self {
            problem: Problem::LaplaceDirichlet,
            levels: None,
            mesh: None,
            disjoint_order: s.disjoint_order,
            singular_order: s.singular_order,
            maxsize_bytes: s.maxsize_bytes,
            workers: s.workers_per_backend,
            backends: s.backends,
            delta: g.delta,
            m: g.m,
            epsilon: g.epsilon,
            eta_adm: p.eta_adm,
            leaf_size: p.leaf_size,
            kappa: 3.0,
            eta: 3.0,
            repetitions: 1,
            operators: Operators::Both,
            functions: vec![1, 2, 3],
            tol: h2bem::solver::DEFAULT_CG_TOL,
            maxit: h2bem::solver::DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// Flags shared by every subcommand. Each overrides the matching config
/// file key.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Key=value config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub problem: Option<Problem>,
    /// Sphere levels: `4`, `2,3,5` or `2..5`
    #[arg(long, global = true)]
    pub levels: Option<String>,
    /// Mesh file used instead of the sphere
    #[arg(long, global = true)]
    pub mesh: Option<PathBuf>,
    #[arg(long, global = true)]
    pub disjoint_order: Option<usize>,
    #[arg(long, global = true)]
    pub singular_order: Option<usize>,
    /// List budget, e.g. `8MB`, `64KB` or plain bytes
    #[arg(long, global = true)]
    pub maxsize: Option<String>,
    /// Workers per backend; 0 runs lists on the calling thread
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Comma separated subset of `scalar,batch`
    #[arg(long, global = true)]
    pub backends: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub eta_adm: Option<f64>,
    #[arg(long, global = true)]
    pub leaf_size: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub kappa: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub eta: Option<f64>,
    #[arg(long, global = true)]
    pub repetitions: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub operators: Option<Operators>,
    /// Laplace test functions, e.g. `1,3`
    #[arg(long, global = true)]
    pub functions: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub maxit: Option<usize>,
}

pub fn parse_size(s: &str) -> Result<usize, ConfigError> {
    let t = s.trim();
    let upper = t.to_ascii_uppercase();
    let (num, mult) = if let Some(n) = upper.strip_suffix("MB") {
        (n, 1024 * 1024)
    } else if let Some(n) = upper.strip_suffix("KB") {
        (n, 1024)
    } else if let Some(n) = upper.strip_suffix('B') {
        (n, 1)
    } else {
        (upper.as_str(), 1)
    };
    let v: f64 = num.trim().parse().map_err(|_| bad(format!("bad size `{s}`")))?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err(bad(format!("bad size `{s}`")));
    }
    Ok((v * mult as f64).round() as usize)
}

pub fn parse_levels(s: &str) -> Result<Vec<usize>, ConfigError> {
    let err = || bad(format!("bad level list `{s}`; use `4`, `2,3` or `2..5`"));
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| err())?;
        let b: usize = b.trim().parse().map_err(|_| err())?;
        if a > b {
            return Err(err());
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| err()))
        .collect()
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>, ConfigError> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| bad(format!("bad {what} `{p}`"))))
        .collect()
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| bad(format!("bad value `{v}` for `{key}`")))
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key.replace('-', "_").as_str() {
            "problem" => self.problem = v.parse()?,
            "levels" | "level" => self.levels = Some(parse_levels(v)?),
            "mesh" => self.mesh = Some(PathBuf::from(v)),
            "disjoint_order" => self.disjoint_order = parse_num(key, v)?,
            "singular_order" => self.singular_order = parse_num(key, v)?,
            "maxsize" => self.maxsize_bytes = parse_size(v)?,
            "workers" => self.workers = parse_num(key, v)?,
            "backends" => {
                self.backends = parse_list::<BackendKind>(v, "backend")?;
            }
            "delta" => self.delta = parse_num(key, v)?,
            "m" => self.m = parse_num(key, v)?,
            "epsilon" => self.epsilon = parse_num(key, v)?,
            "eta_adm" => self.eta_adm = parse_num(key, v)?,
            "leaf_size" => self.leaf_size = parse_num(key, v)?,
            "kappa" => self.kappa = parse_num(key, v)?,
            "eta" => self.eta = parse_num(key, v)?,
            "repetitions" => self.repetitions = parse_num(key, v)?,
            "operators" => self.operators = v.parse()?,
            "functions" => self.functions = parse_list(v, "function")?,
            "tol" => self.tol = parse_num(key, v)?,
            "maxit" => self.maxit = parse_num(key, v)?,
            _ => return Err(bad(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_file_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
        let mut out = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("config line {}: expected `key = value`", n + 1)))?;
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        for (k, v) in Self::parse_file_text(&text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(o: &Overrides) -> Result<Self, ConfigError> {
        let mut c = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(v) = o.problem {
            c.problem = v;
        }
        if let Some(v) = &o.levels {
            c.levels = Some(parse_levels(v)?);
        }
        if let Some(v) = &o.mesh {
            c.mesh = Some(v.clone());
        }
        macro_rules! take {
            ($($f:ident => $g:ident),*) => {$(if let Some(v) = o.$f { c.$g = v; })*};
        }
        take!(disjoint_order => disjoint_order, singular_order => singular_order, workers => workers,
              delta => delta, m => m, epsilon => epsilon, eta_adm => eta_adm, leaf_size => leaf_size,
              kappa => kappa, eta => eta, repetitions => repetitions, operators => operators,
              tol => tol, maxit => maxit);
        if let Some(v) = &o.maxsize {
            c.maxsize_bytes = parse_size(v)?;
        }
        if let Some(v) = &o.backends {
            c.backends = parse_list(v, "backend")?;
        }
        if let Some(v) = &o.functions {
            c.functions = parse_list(v, "function")?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, n) in [("disjoint_order", self.disjoint_order), ("singular_order", self.singular_order)] {
            if n == 0 || n > MAX_RULE_ORDER {
                return Err(bad(format!("{name} must be in 1..={MAX_RULE_ORDER}, got {n}")));
            }
        }
        if self.maxsize_bytes < PAIR_BYTES {
            return Err(bad(format!(
                "maxsize must hold at least one {PAIR_BYTES} B pair, got {} B",
                self.maxsize_bytes
            )));
        }
        if self.backends.is_empty() {
            return Err(bad("at least one backend is required"));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(bad(format!("delta must be positive, got {}", self.delta)));
        }
        if self.m == 0 {
            return Err(bad("m must be at least 1"));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(bad(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.eta_adm >= 0.0) || !self.eta_adm.is_finite() {
            return Err(bad(format!("eta_adm must be non-negative, got {}", self.eta_adm)));
        }
        if self.leaf_size == 0 {
            return Err(bad("leaf_size must be at least 1"));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(bad(format!("kappa must be non-negative, got {}", self.kappa)));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(bad(format!("eta must be positive, got {}", self.eta)));
        }
        if self.repetitions == 0 {
            return Err(bad("repetitions must be at least 1"));
        }
        if self.functions.is_empty() || self.functions.iter().any(|&f| !(1..=3).contains(&f)) {
            return Err(bad("functions must be a list drawn from 1, 2, 3"));
        }
        if !(self.tol > 0.0) || self.maxit == 0 {
            return Err(bad("tol must be positive and maxit at least 1"));
        }
        if let Some(l) = &self.levels {
            if l.is_empty() || l.iter().any(|&x| x > h2bem::mesh::MAX_SPHERE_LEVEL) {
                return Err(bad(format!(
                    "levels must be non-empty and at most {}",
                    h2bem::mesh::MAX_SPHERE_LEVEL
                )));
            }
        }
        Ok(())
    }

    pub fn levels_or(&self, default: &[usize]) -> Vec<usize> {
        self.levels.clone().unwrap_or_else(|| default.to_vec())
    }

    pub fn gca(&self) -> GcaParams<f64> {
        GcaParams {
            delta: self.delta,
            m: self.m,
            epsilon: self.epsilon,
            ..GcaParams::default()
        }
    }

    pub fn setup(&self) -> SetupParams<f64> {
        SetupParams {
            leaf_size: self.leaf_size,
            eta_adm: self.eta_adm,
            gca: self.gca(),
        }
    }

    pub fn scheduler(&self) -> SchedulerConfig {
        SchedulerConfig {
            maxsize_bytes: self.maxsize_bytes,
            workers_per_backend: self.workers,
            backends: self.backends.clone(),
            disjoint_order: self.disjoint_order,
            singular_order: self.singular_order,
            ..SchedulerConfig::default()
        }
    }

    pub fn problem_config(&self) -> ProblemConfig<f64> {
        ProblemConfig {
            setup: self.setup(),
            scheduler: self.scheduler(),
            tol: self.tol,
            maxit: self.maxit,
        }
    }
}
