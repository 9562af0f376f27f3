//! Run specification assembled from a key-value config file and flags.

use std::path::PathBuf;
use std::str::FromStr;

use serde_json::{json, Value};

use sensorplace::lidar::{parse_key_values, LidarConfig};
use sensorplace::pipeline::KernelChoice;
use sensorplace::qp::QpOptions;
use sensorplace::sqp::SqpConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Design,
    Oracle,
    GapSweep,
    Bench,
    LidarSanity,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Design => "design",
            Command::Oracle => "oracle",
            Command::GapSweep => "gap-sweep",
            Command::Bench => "bench",
            Command::LidarSanity => "lidar-sanity",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "design" => Ok(Command::Design),
            "oracle" => Ok(Command::Oracle),
            "gap-sweep" | "gap_sweep" => Ok(Command::GapSweep),
            "bench" => Ok(Command::Bench),
            "lidar-sanity" | "lidar_sanity" => Ok(Command::LidarSanity),
            other => Err(format!(
                "unknown command {other:?} (expected design, oracle, gap-sweep, bench or lidar-sanity)"
            )),
        }
    }
}

/// Forward model: a built-in 1-D kernel on `[-1, 1]` or the LIDAR problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    Analytic(KernelChoice),
    Lidar,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Analytic(k) => k.as_str(),
            ProblemKind::Lidar => "lidar",
        }
    }
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "lidar" => Ok(ProblemKind::Lidar),
            other => other.parse().map(ProblemKind::Analytic).map_err(|e: sensorplace::Error| e.to_string()),
        }
    }
}

/// Initial state for the sanity reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SanityField {
    /// `sin(pi x) sin(pi y)`.
    SinSin,
    /// `cos(pi x / 2) cos(pi y / 2)`.
    Mode11,
    /// `(1 - x^2)(1 - y^2)`.
    Bump,
}

impl SanityField {
    pub fn as_str(self) -> &'static str {
        match self {
            SanityField::SinSin => "sin_sin",
            SanityField::Mode11 => "mode_11",
            SanityField::Bump => "bump",
        }
    }

    pub fn eval(self, x: f64, y: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            SanityField::SinSin => (PI * x).sin() * (PI * y).sin(),
            SanityField::Mode11 => (PI * x / 2.0).cos() * (PI * y / 2.0).cos(),
            SanityField::Bump => (1.0 - x * x) * (1.0 - y * y),
        }
    }
}

impl FromStr for SanityField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "sin_sin" => Ok(SanityField::SinSin),
            "mode_11" => Ok(SanityField::Mode11),
            "bump" => Ok(SanityField::Bump),
            other => Err(format!("unknown u0 {other:?} (expected sin_sin, mode_11 or bump)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunSpec {
    pub command: Command,
    pub problem: ProblemKind,
    /// Mesh size of the analytic kernels.
    pub n: usize,
    /// LIDAR settings; `r`, `alpha`, `sigma2_noise` and `criterion` also apply to analytic kernels.
    pub lidar: LidarConfig,
    pub node_constant: f64,
    pub sqp: SqpConfig,
    pub oracle_epsilon: f64,
    pub oracle_cap: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sizes: Vec<usize>,
    pub constants: Vec<f64>,
    pub repeats: usize,
    pub u0: SanityField,
    pub sanity_grid: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            command: Command::Design,
            problem: ProblemKind::Lidar,
            n: 64,
            lidar: LidarConfig::default(),
            node_constant: 8.0,
            sqp: SqpConfig::default(),
            oracle_epsilon: 1e-8,
            oracle_cap: sensorplace::objective::DEFAULT_ORACLE_CAP,
            seed: 0,
            output_dir: PathBuf::from("out"),
            sizes: Vec::new(),
            constants: Vec::new(),
            repeats: 5,
            u0: SanityField::SinSin,
            sanity_grid: 64,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.trim().parse().map_err(|_| format!("cannot parse {key} = {value:?}"))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn flag(key: &str, value: &str) -> Result<bool, String> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("cannot parse {key} = {value:?} as a boolean")),
    }
}

impl RunSpec {
    /// Applies one config entry. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "command" => self.command = value.parse()?,
            "kernel" | "problem" => self.problem = value.parse()?,
            "n" => self.n = num(key, value)?,
            "node_constant" | "c" => self.node_constant = num(key, value)?,
            "epsilon" => self.sqp.epsilon = num(key, value)?,
            "ls_c" => self.sqp.ls_c = num(key, value)?,
            "ls_xi" => self.sqp.ls_xi = num(key, value)?,
            "max_outer" => self.sqp.max_outer = num(key, value)?,
            "max_backtracks" => self.sqp.max_backtracks = num(key, value)?,
            "qp_tol" => self.sqp.qp.tol = num(key, value)?,
            "qp_max_iter" => self.sqp.qp.max_iter = num(key, value)?,
            "qp_sigma" => self.sqp.qp.sigma = num(key, value)?,
            "mehrotra" => self.sqp.qp.mehrotra = flag(key, value)?,
            "qp_polish" => self.sqp.qp.polish = flag(key, value)?,
            "oracle_epsilon" => self.oracle_epsilon = num(key, value)?,
            "oracle_cap" => self.oracle_cap = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value.trim()),
            "sizes" => self.sizes = list(key, value)?,
            "constants" => self.constants = list(key, value)?,
            "repeats" => self.repeats = num(key, value)?,
            "u0" => self.u0 = value.parse()?,
            "sanity_grid" => self.sanity_grid = num(key, value)?,
            _ => {
                if !self.lidar.set(key, value).map_err(|e| e.to_string())? {
                    return Err(format!("unknown config key {key:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut spec = Self::default();
        for (k, v) in parse_key_values(text).map_err(|e| e.to_string())? {
            spec.set(&k, &v)?;
        }
        Ok(spec)
    }

    /// Fills command-specific defaults and checks ranges.
    pub fn finish(&mut self) -> Result<(), String> {
        if self.sizes.is_empty() {
            self.sizes = match (self.command, self.problem) {
                (Command::LidarSanity, _) => vec![1, 2, 3, 4, 5],
                (_, ProblemKind::Lidar) => vec![20, 40, 60],
                _ => vec![400, 800, 1600, 3200],
            };
        }
        if self.constants.is_empty() {
            self.constants = match self.command {
                Command::GapSweep => vec![1.0, 2.0, 4.0, 8.0],
                _ => vec![self.node_constant],
            };
        }
        if matches!(self.command, Command::GapSweep | Command::Bench) && self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err("sizes must be strictly ascending".into());
        }
        if self.sizes.contains(&0) {
            return Err("sizes must be positive".into());
        }
        if self.constants.iter().chain([&self.node_constant]).any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err("node constants must be positive".into());
        }
        if self.repeats == 0 || self.sanity_grid == 0 {
            return Err("repeats and sanity_grid must be positive".into());
        }
        if !(self.oracle_epsilon > 0.0) {
            return Err("oracle_epsilon must be positive".into());
        }
        self.sqp.validate().map_err(|e| e.to_string())?;
        if self.problem == ProblemKind::Lidar || self.command == Command::LidarSanity {
            self.lidar.validate().map_err(|e| e.to_string())?;
        } else {
            self.lidar.setup().map_err(|e| e.to_string())?;
            if !(self.lidar.r > 0.0 && self.lidar.r <= 1.0) {
                return Err("r must lie in (0, 1]".into());
            }
        }
        Ok(())
    }

    pub fn oracle_sqp(&self) -> SqpConfig {
        SqpConfig {
            epsilon: self.oracle_epsilon,
            ..self.sqp.clone()
        }
    }

    /// Every setting, keyed like the config file.
    pub fn echo(&self) -> Value {
        let l = &self.lidar;
        let q: &QpOptions = &self.sqp.qp;
        let modes: Vec<String> = l.source_modes.iter().map(|(a, b, g)| format!("{a}:{b}:{g}")).collect();
        json!({
            "command": self.command.as_str(),
            "kernel": self.problem.as_str(),
            "n": self.n,
            "node_constant": self.node_constant,
            "epsilon": self.sqp.epsilon,
            "ls_c": self.sqp.ls_c,
            "ls_xi": self.sqp.ls_xi,
            "max_outer": self.sqp.max_outer,
            "max_backtracks": self.sqp.max_backtracks,
            "qp_tol": q.tol,
            "qp_max_iter": q.max_iter,
            "qp_sigma": q.sigma,
            "mehrotra": q.mehrotra,
            "qp_polish": q.polish,
            "oracle_epsilon": self.oracle_epsilon,
            "oracle_cap": self.oracle_cap,
            "seed": self.seed,
            "output_dir": self.output_dir.display().to_string(),
            "sizes": self.sizes,
            "constants": self.constants,
            "repeats": self.repeats,
            "u0": self.u0.as_str(),
            "sanity_grid": self.sanity_grid,
            "c1": l.c1,
            "c2": l.c2,
            "mu": l.mu,
            "t_final": l.t_final,
            "n_t": l.n_t,
            "p": l.p,
            "n_d": l.n_d,
            "n_r": l.n_r,
            "n_x": l.n_x,
            "radius": l.radius,
            "r": l.r,
            "alpha": l.alpha,
            "sigma2_noise": l.sigma2_noise,
            "criterion": l.criterion.as_str(),
            "source_modes": modes.join(","),
        })
    }
}
