//! SQP outer loop with Armijo backtracking on the design objective.

use std::io::Write;

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::objective::{DesignObjective, DesignWeights};
use crate::qp::{solve_qp, QpOptions, QpProblem};

/// Outer-loop settings.
#[derive(Clone, Debug)]
pub struct SqpConfig {
    /// Stop once an iteration decreases the objective by less than this.
    pub epsilon: f64,
    pub ls_c: f64,
    pub ls_xi: f64,
    pub max_outer: usize,
    pub max_backtracks: usize,
    pub qp: QpOptions,
}

impl Default for SqpConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            ls_c: 0.5,
            ls_xi: 1e-3,
            max_outer: 200,
            max_backtracks: 40,
            qp: QpOptions::default(),
        }
    }
}

impl SqpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ls_c > 0.0 && self.ls_c < 1.0) {
            return Err(invalid(format!("ls_c must lie in (0, 1), got {}", self.ls_c)));
        }
        if !(self.ls_xi > 0.0 && self.ls_xi < 1.0) {
            return Err(invalid(format!("ls_xi must lie in (0, 1), got {}", self.ls_xi)));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_outer == 0 {
            return Err(invalid("max_outer must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SqpStatus {
    Converged,
    MaxIter,
}

impl SqpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SqpStatus::Converged => "converged",
            SqpStatus::MaxIter => "max_iter",
        }
    }
}

/// One outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SqpLogEntry {
    pub iter: usize,
    pub objective: f64,
    pub step: f64,
    pub gtp: f64,
    pub qp_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct SqpResult {
    pub w_star: DesignWeights,
    /// Objective at the start point and after every accepted step.
    pub objective_trace: Vec<f64>,
    /// Multipliers ordered (lower box, upper box, budget).
    pub dual: DVector<f64>,
    pub iterations: usize,
    pub status: SqpStatus,
    pub log: Vec<SqpLogEntry>,
}

impl SqpResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the start value")
    }

    /// Writes `iter,objective,step,gtp,qp_iterations`.
    pub fn write_log_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "objective", "step", "gtp", "qp_iterations"])?;
        for e in &self.log {
            w.write_record(&[
                e.iter.to_string(),
                e.objective.to_string(),
                e.step.to_string(),
                e.gtp.to_string(),
                e.qp_iterations.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Uniform start `w_i = n0 / n_w`.
pub fn initial_point(n_w: usize, n0: f64) -> Result<DesignWeights> {
    if n_w == 0 {
        return Err(invalid("no weights to design"));
    }
    if !(n0 > 0.0 && n0 <= n_w as f64) {
        return Err(invalid(format!("budget {n0} must lie in (0, {n_w}]")));
    }
    DesignWeights::relaxed(vec![n0 / n_w as f64; n_w], n0)
}

/// Keeps `w` inside the box and budget after a step.
fn project(w: &mut [f64], n0: f64) {
    for x in w.iter_mut() {
        *x = x.clamp(0.0, 1.0);
    }
    let total: f64 = w.iter().sum();
    if total > n0 {
        let f = n0 / total;
        w.iter_mut().for_each(|x| *x *= f);
    }
}

/// Minimizes the relaxed design problem `min phi(w)`, `0 <= w <= 1`, `sum w <= n0`.
pub fn solve_relaxed<O: DesignObjective + ?Sized>(objective: &O, n0: f64, cfg: &SqpConfig) -> Result<SqpResult> {
    cfg.validate()?;
    let n = objective.n_weights();
    let start = initial_point(n, n0)?;
    let mut w = start.values;
    let mut dual = DVector::zeros(2 * n + 1);
    let mut trace = Vec::new();
    let mut log = Vec::new();
    let mut status = SqpStatus::MaxIter;
    let mut iterations = 0;

    for k in 0..cfg.max_outer {
        let d = objective.derivatives(&w)?;
        if trace.is_empty() {
            trace.push(d.value);
        }
        let phi = d.value;
        let g = DVector::from_vec(d.gradient);
        let scale = g.amax().max(1.0);
        let wv = DVector::from_column_slice(&w);
        let problem = QpProblem::new(
            d.hessian.scaled(1.0 / scale),
            &g / scale,
            -&wv,
            wv.map(|x| 1.0 - x),
            n0 - wv.sum(),
        )?;
        let qp = solve_qp(&problem, &cfg.qp).map_err(|e| match e {
            Error::NonConvergence { iterations, detail } => Error::NonConvergence {
                iterations,
                detail: format!("QP at SQP iteration {k}: {detail}"),
            },
            other => other,
        })?;
        let p = qp.p;
        let lam_qp = qp.lam * scale;
        let gtp = g.dot(&p);
        iterations = k + 1;
        if gtp >= -f64::EPSILON * phi.abs().max(1.0) {
            status = SqpStatus::Converged;
            log.push(SqpLogEntry {
                iter: k,
                objective: phi,
                step: 0.0,
                gtp,
                qp_iterations: qp.iterations,
            });
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let mut trial: Vec<f64> = w.iter().zip(p.iter()).map(|(a, b)| a + alpha * b).collect();
            project(&mut trial, n0);
            let val = objective.value(&trial)?;
            if val <= phi + cfg.ls_xi * alpha * gtp {
                accepted = Some((trial, val));
                break;
            }
            alpha *= cfg.ls_c;
        }
        let Some((w_new, phi_new)) = accepted else {
            log.push(SqpLogEntry {
                iter: k,
                objective: phi,
                step: 0.0,
                gtp,
                qp_iterations: qp.iterations,
            });
            break;
        };
        dual += (lam_qp - &dual) * alpha;
        w = w_new;
        trace.push(phi_new);
        log.push(SqpLogEntry {
            iter: k,
            objective: phi_new,
            step: alpha,
            gtp,
            qp_iterations: qp.iterations,
        });
        if phi - phi_new < cfg.epsilon {
            status = SqpStatus::Converged;
            break;
        }
    }

    Ok(SqpResult {
        w_star: DesignWeights::relaxed(w, n0)?,
        objective_trace: trace,
        dual,
        iterations,
        status,
        log,
    })
}
