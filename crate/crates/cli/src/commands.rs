//! Command implementations. Each returns its JSON metrics and timings and
//! writes its CSV files into the output directory.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::{Duration, Instant};

use serde_json::{json, Map, Value};

use sensorplace::lidar::{reconstruction_error, LidarProblem};
use sensorplace::objective::{BayesSetup, DenseObjective, ObjectiveFn, SurrogateObjective};
use sensorplace::pipeline::{run_design, AnalyticProblem};
use sensorplace::rounding::{write_design_csv, RoundingPlan};
use sensorplace::sqp::{solve_relaxed, SqpConfig};

use crate::spec::{ProblemKind, RunSpec};

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Solver(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "invalid_config",
            Failure::Solver(_) => "solver_failure",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Solver(m) => m,
        }
    }
}

fn solver(e: impl std::fmt::Display) -> Failure {
    Failure::Solver(e.to_string())
}

fn config(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

pub struct Report {
    pub metrics: Map<String, Value>,
    pub timings: Map<String, Value>,
}

impl Report {
    fn new() -> Self {
        Self {
            metrics: Map::new(),
            timings: Map::new(),
        }
    }

    fn metric(&mut self, key: &str, v: impl Into<Value>) {
        self.metrics.insert(key.into(), v.into());
    }

    fn time(&mut self, key: &str, d: Duration) {
        self.timings.insert(key.into(), json!(d.as_secs_f64()));
    }
}

enum Problem {
    Analytic(AnalyticProblem),
    Lidar(Box<LidarProblem>),
}

impl Problem {
    /// Builds the configured problem, with `size` replacing `n` (analytic) or `n_d = n_r = n_x` (LIDAR).
    fn new(spec: &RunSpec, size: Option<usize>) -> sensorplace::Result<Self> {
        match spec.problem {
            ProblemKind::Analytic(k) => {
                let l = &spec.lidar;
                let setup = BayesSetup::new(l.alpha, l.sigma2_noise, l.criterion)?;
                Ok(Problem::Analytic(AnalyticProblem::new(k, size.unwrap_or(spec.n), l.r, setup)?))
            }
            ProblemKind::Lidar => {
                let mut cfg = spec.lidar.clone();
                if let Some(n) = size {
                    (cfg.n_d, cfg.n_r, cfg.n_x) = (n, n, n);
                }
                Ok(Problem::Lidar(Box::new(LidarProblem::new(cfg)?)))
            }
        }
    }

    fn surrogate(&self, c: f64) -> sensorplace::Result<SurrogateObjective> {
        match self {
            Problem::Analytic(p) => p.surrogate(&p.node_budget(c)?),
            Problem::Lidar(p) => p.surrogate(&p.node_budget(c)?),
        }
    }

    fn budget(&self) -> f64 {
        match self {
            Problem::Analytic(p) => p.budget(),
            Problem::Lidar(p) => p.budget(),
        }
    }

    fn plan(&self) -> sensorplace::Result<RoundingPlan> {
        match self {
            Problem::Analytic(p) => Ok(p.rounding_plan()),
            Problem::Lidar(p) => p.rounding_plan(),
        }
    }

    fn angles(&self) -> Option<&[f64]> {
        match self {
            Problem::Analytic(_) => None,
            Problem::Lidar(p) => Some(&p.sector_angles),
        }
    }

    fn n_params(&self) -> usize {
        match self {
            Problem::Analytic(p) => p.n(),
            Problem::Lidar(p) => p.n_params(),
        }
    }

    /// Exact-`F` value oracle, or `None` above the cap.
    fn value_oracle(&self, cap: usize) -> sensorplace::Result<Option<Box<dyn ObjectiveFn + '_>>> {
        if self.n_params() > cap {
            return Ok(None);
        }
        Ok(Some(match self {
            Problem::Analytic(p) => Box::new(p.dense(cap)?),
            Problem::Lidar(p) => Box::new(p.streamed_dense(cap)?),
        }))
    }

    fn dense(&self, cap: usize) -> sensorplace::Result<DenseObjective> {
        match self {
            Problem::Analytic(p) => p.dense(cap),
            Problem::Lidar(p) => p.dense(cap),
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| solver(format!("cannot write {}: {e}", path.display())))
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |x| json!(x))
}

pub fn design(spec: &RunSpec) -> Result<Report, Failure> {
    let mut rep = Report::new();
    let start = Instant::now();
    let problem = Problem::new(spec, None).map_err(config)?;
    let sur = problem.surrogate(spec.node_constant).map_err(solver)?;
    rep.time("build_s", start.elapsed());

    let run = run_design(&sur, None, problem.budget(), &problem.plan().map_err(solver)?, &spec.sqp).map_err(solver)?;
    rep.time("solve_s", run.timings.solve);
    rep.time("round_s", run.timings.round + run.timings.gap);
    let surrogate_total = start.elapsed();

    let t = Instant::now();
    let oracle = problem.value_oracle(spec.oracle_cap).map_err(solver)?;
    let dense = match &oracle {
        Some(o) => Some((o.value(&run.w_rel.values).map_err(solver)?, o.value(&run.w_int.values).map_err(solver)?)),
        None => None,
    };
    rep.time("dense_s", t.elapsed());
    rep.time("surrogate_total_s", surrogate_total);
    rep.time("total_s", start.elapsed());

    write_design_csv(
        create(&spec.output_dir, "design.csv")?,
        &run.w_rel.values,
        &run.w_int.values,
        problem.angles(),
    )
    .map_err(solver)?;
    run.sqp.write_log_csv(create(&spec.output_dir, "sqp_log.csv")?).map_err(solver)?;

    rep.metric("n_params", problem.n_params());
    rep.metric("n_weights", run.w_rel.len());
    rep.metric("budget", problem.budget());
    rep.metric("inner_rank", sur.inner_rank());
    rep.metric("objective_relaxed", run.value_relaxed);
    rep.metric("objective_rounded", run.value_rounded);
    rep.metric("gap_surrogate", run.gap.gap_surrogate);
    rep.metric("objective_dense_relaxed", opt(dense.map(|d| d.0)));
    rep.metric("objective_dense_rounded", opt(dense.map(|d| d.1)));
    rep.metric("gap_dense", opt(dense.map(|d| d.1 - d.0)));
    rep.metric("sqp_iterations", run.sqp.iterations);
    rep.metric("sqp_status", run.sqp.status.as_str());
    rep.metric("polished", run.polished);
    rep.metric("selected", run.w_int.sum());
    Ok(rep)
}

pub fn oracle(spec: &RunSpec) -> Result<Report, Failure> {
    let mut rep = Report::new();
    let start = Instant::now();
    let problem = Problem::new(spec, None).map_err(config)?;
    let dense = problem.dense(spec.oracle_cap).map_err(solver)?;
    rep.time("build_s", start.elapsed());
    let t = Instant::now();
    let res = solve_relaxed(&dense, problem.budget(), &spec.oracle_sqp()).map_err(solver)?;
    rep.time("solve_s", t.elapsed());
    rep.time("total_s", start.elapsed());

    let mut w = csv::Writer::from_writer(create(&spec.output_dir, "oracle.csv")?);
    let angles = problem.angles();
    let header: &[&str] = if angles.is_some() { &["index", "angle", "w"] } else { &["index", "w"] };
    w.write_record(header).map_err(solver)?;
    for (i, x) in res.w_star.values.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        if let Some(a) = angles {
            rec.push(a[i].to_string());
        }
        rec.push(x.to_string());
        w.write_record(&rec).map_err(solver)?;
    }
    w.flush().map_err(solver)?;
    res.write_log_csv(create(&spec.output_dir, "sqp_log.csv")?).map_err(solver)?;

    rep.metric("n_params", problem.n_params());
    rep.metric("n_weights", res.w_star.len());
    rep.metric("budget", problem.budget());
    rep.metric("objective", res.objective());
    rep.metric("sqp_iterations", res.iterations);
    rep.metric("sqp_status", res.status.as_str());
    rep.metric("epsilon", spec.oracle_epsilon);
    Ok(rep)
}

struct Cell {
    n: usize,
    c: f64,
    gap_surrogate: Option<f64>,
    gap_dense: Option<f64>,
    time: Option<f64>,
    status: String,
}

fn sweep_cell(problem: &Problem, oracle: Option<&dyn ObjectiveFn>, c: f64, cfg: &SqpConfig) -> sensorplace::Result<(f64, Option<f64>, f64)> {
    let t = Instant::now();
    let sur = problem.surrogate(c)?;
    let run = run_design(&sur, None, problem.budget(), &problem.plan()?, cfg)?;
    let time = t.elapsed().as_secs_f64();
    let gap_dense = match oracle {
        Some(o) => Some(o.value(&run.w_int.values)? - o.value(&run.w_rel.values)?),
        None => None,
    };
    Ok((run.gap.gap_surrogate, gap_dense, time))
}

pub fn gap_sweep(spec: &RunSpec) -> Result<Report, Failure> {
    let mut rep = Report::new();
    let start = Instant::now();
    let mut cells = Vec::new();
    for &n in &spec.sizes {
        let problem = Problem::new(spec, Some(n));
        let oracle = match &problem {
            Ok(p) => p.value_oracle(spec.oracle_cap),
            Err(_) => Ok(None),
        };
        for &c in &spec.constants {
            let out = match (&problem, &oracle) {
                (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
                (Ok(p), Ok(o)) => sweep_cell(p, o.as_deref(), c, &spec.sqp).map_err(|e| e.to_string()),
            };
            cells.push(match out {
                Ok((gs, gd, t)) => Cell {
                    n,
                    c,
                    gap_surrogate: Some(gs),
                    gap_dense: gd,
                    time: Some(t),
                    status: "ok".into(),
                },
                Err(msg) => Cell {
                    n,
                    c,
                    gap_surrogate: None,
                    gap_dense: None,
                    time: None,
                    status: format!("error: {msg}"),
                },
            });
        }
    }
    rep.time("total_s", start.elapsed());

    let mut w = csv::Writer::from_writer(create(&spec.output_dir, "gap_sweep.csv")?);
    w.write_record(["n", "c", "gap_surrogate", "gap_dense", "time_s", "status"]).map_err(solver)?;
    let show = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for cell in &cells {
        w.write_record(&[
            cell.n.to_string(),
            cell.c.to_string(),
            show(cell.gap_surrogate),
            show(cell.gap_dense),
            show(cell.time),
            cell.status.clone(),
        ])
        .map_err(solver)?;
    }
    w.flush().map_err(solver)?;
    let failed = cells.iter().filter(|c| c.status != "ok").count();
    rep.metric("cells", cells.len());
    rep.metric("failed_cells", failed);
    Ok(rep)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn bench(spec: &RunSpec) -> Result<Report, Failure> {
    let mut rep = Report::new();
    let start = Instant::now();
    let mut w = csv::Writer::from_writer(create(&spec.output_dir, "bench.csv")?);
    w.write_record(["n", "c", "path", "epsilon", "time_s", "objective", "iterations"]).map_err(solver)?;
    let c = spec.node_constant;
    let mut eps_list = vec![spec.sqp.epsilon];
    if spec.sqp.epsilon != 1e-6 {
        eps_list.push(1e-6);
    }
    let mut times = Vec::new();
    for &n in &spec.sizes {
        let problem = Problem::new(spec, Some(n)).map_err(config)?;
        for &eps in &eps_list {
            let cfg = SqpConfig {
                epsilon: eps,
                ..spec.sqp.clone()
            };
            let mut samples = Vec::new();
            let mut last = None;
            for _ in 0..spec.repeats {
                let t = Instant::now();
                let sur = problem.surrogate(c).map_err(solver)?;
                let run = run_design(&sur, None, problem.budget(), &problem.plan().map_err(solver)?, &cfg)
                    .map_err(solver)?;
                samples.push(t.elapsed().as_secs_f64());
                last = Some(run);
            }
            let run = last.expect("at least one repeat");
            let t = median(samples);
            if eps == spec.sqp.epsilon {
                times.push(t);
            }
            w.write_record(&[
                n.to_string(),
                c.to_string(),
                "surrogate".into(),
                eps.to_string(),
                t.to_string(),
                run.value_relaxed.to_string(),
                run.sqp.iterations.to_string(),
            ])
            .map_err(solver)?;
        }
        if problem.n_params() <= spec.oracle_cap {
            let t = Instant::now();
            let dense = problem.dense(spec.oracle_cap).map_err(solver)?;
            let cfg = SqpConfig {
                epsilon: 1e-6,
                ..spec.sqp.clone()
            };
            let res = solve_relaxed(&dense, problem.budget(), &cfg).map_err(solver)?;
            w.write_record(&[
                n.to_string(),
                String::new(),
                "dense".into(),
                "1e-6".into(),
                t.elapsed().as_secs_f64().to_string(),
                res.objective().to_string(),
                res.iterations.to_string(),
            ])
            .map_err(solver)?;
        }
    }
    w.flush().map_err(solver)?;
    let ratios: Vec<f64> = times.windows(2).map(|t| t[1] / t[0]).collect();
    rep.metric("surrogate_median_s", json!(times));
    rep.metric("doubling_ratios", json!(ratios));
    rep.time("total_s", start.elapsed());
    Ok(rep)
}

pub fn lidar_sanity(spec: &RunSpec) -> Result<Report, Failure> {
    let mut rep = Report::new();
    let start = Instant::now();
    let mut w = csv::Writer::from_writer(create(&spec.output_dir, "lidar_sanity.csv")?);
    w.write_record(["p", "rel_l2_error"]).map_err(solver)?;
    let u0 = spec.u0;
    let mut errors = Vec::new();
    for &p in &spec.sizes {
        let e = reconstruction_error(|x, y| u0.eval(x, y), p, spec.sanity_grid).map_err(solver)?;
        w.write_record(&[p.to_string(), e.to_string()]).map_err(solver)?;
        errors.push(e);
    }
    w.flush().map_err(solver)?;
    rep.metric("errors", json!(errors));
    rep.time("total_s", start.elapsed());
    Ok(rep)
}
