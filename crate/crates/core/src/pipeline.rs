//! End-to-end design runs: relaxed SQP solve, sum-up rounding, vertex polish
//! and integrality gaps. Also hosts the built-in analytic test problems.

use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use crate::chebyshev::{build_lowrank, LowRankKernel, NodeBudget};
use crate::domains::{build_mesh, dense_kernel_matrix, Kernel, MeshedDomain, RectDomain};
use crate::error::{invalid, Result};
use crate::objective::{BayesSetup, DenseObjective, DesignObjective, DesignWeights, ObjectiveFn, SurrogateObjective};
use crate::rounding::{integrality_gap, sum_up_round, GapReport, RoundingPlan};
use crate::sqp::{solve_relaxed, SqpConfig, SqpResult};

/// Built-in analytic kernels on `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelChoice {
    Gaussian,
    ExpDot,
    WendlandC2,
}

impl KernelChoice {
    pub fn kernel(self) -> Kernel {
        match self {
            KernelChoice::Gaussian => Kernel::gaussian(),
            KernelChoice::ExpDot => Kernel::exp_dot(),
            KernelChoice::WendlandC2 => Kernel::wendland_c2(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KernelChoice::Gaussian => "gaussian",
            KernelChoice::ExpDot => "exp_dot",
            KernelChoice::WendlandC2 => "wendland_c2",
        }
    }
}

impl FromStr for KernelChoice {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(KernelChoice::Gaussian),
            "exp_dot" => Ok(KernelChoice::ExpDot),
            "wendland_c2" => Ok(KernelChoice::WendlandC2),
            other => Err(invalid(format!("unknown kernel {other:?}"))),
        }
    }
}

/// Kernel on `n` equispaced cell centers of `[-1, 1]` for both input and
/// output, one weight per output point.
#[derive(Clone, Debug)]
pub struct AnalyticProblem {
    pub choice: KernelChoice,
    pub kernel: Kernel,
    pub mesh: MeshedDomain,
    pub setup: BayesSetup,
    /// Fraction of points selected.
    pub r: f64,
}

impl AnalyticProblem {
    pub fn new(choice: KernelChoice, n: usize, r: f64, setup: BayesSetup) -> Result<Self> {
        if n == 0 {
            return Err(invalid("analytic problem needs n >= 1"));
        }
        if !(r > 0.0 && r <= 1.0) {
            return Err(invalid(format!("selection fraction must lie in (0, 1], got {r}")));
        }
        let mesh = build_mesh(&RectDomain::unit(1)?, &[n])?;
        Ok(Self {
            choice,
            kernel: choice.kernel(),
            mesh,
            setup,
            r,
        })
    }

    pub fn n(&self) -> usize {
        self.mesh.len()
    }

    /// `max(1, round(r n))`.
    pub fn budget(&self) -> f64 {
        (self.r * self.n() as f64).round().max(1.0)
    }

    pub fn node_budget(&self, c: f64) -> Result<NodeBudget> {
        NodeBudget::from_constant(c, self.n(), 1, 1)
    }

    pub fn lowrank(&self, budget: &NodeBudget) -> Result<LowRankKernel> {
        build_lowrank(&self.kernel, &self.mesh, &self.mesh, None, budget)
    }

    pub fn surrogate(&self, budget: &NodeBudget) -> Result<SurrogateObjective> {
        SurrogateObjective::new(&self.lowrank(budget)?, self.setup.clone(), None)
    }

    pub fn dense_matrix(&self) -> Result<DMatrix<f64>> {
        dense_kernel_matrix(&self.kernel, &self.mesh, &self.mesh, None)
    }

    pub fn dense(&self, cap: usize) -> Result<DenseObjective> {
        DenseObjective::new(self.dense_matrix()?, self.setup.clone(), None, cap)
    }

    pub fn rounding_plan(&self) -> RoundingPlan {
        RoundingPlan::natural(self.n())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    pub solve: Duration,
    pub round: Duration,
    pub gap: Duration,
}

impl Timings {
    pub fn total(&self) -> Duration {
        self.solve + self.round + self.gap
    }
}

/// Outcome of [`run_design`].
#[derive(Clone, Debug)]
pub struct DesignRun {
    pub sqp: SqpResult,
    pub w_rel: DesignWeights,
    pub w_int: DesignWeights,
    /// The rounded design replaced the SQP iterate as relaxed solution.
    pub polished: bool,
    pub value_relaxed: f64,
    pub value_rounded: f64,
    pub gap: GapReport,
    pub timings: Timings,
}

/// Replaces `w_rel` by the feasible vertex `w_int` when that does not raise
/// the objective. Returns whether the swap happened.
pub fn polish_to_vertex(
    objective: &dyn ObjectiveFn,
    w_rel: &mut DesignWeights,
    value_rel: &mut f64,
    w_int: &DesignWeights,
) -> Result<bool> {
    if w_int.values == w_rel.values || w_int.sum() > w_rel.budget {
        return Ok(false);
    }
    let v = objective.value(&w_int.values)?;
    if v <= *value_rel {
        *w_rel = DesignWeights::relaxed(w_int.values.clone(), w_rel.budget)?;
        *value_rel = v;
        return Ok(true);
    }
    Ok(false)
}

/// Solves the relaxed problem, rounds it, polishes and reports the gaps.
pub fn run_design<O: DesignObjective>(
    objective: &O,
    dense: Option<&dyn ObjectiveFn>,
    n0: f64,
    plan: &RoundingPlan,
    cfg: &SqpConfig,
) -> Result<DesignRun> {
    let t = Instant::now();
    let sqp = solve_relaxed(objective, n0, cfg)?;
    let solve = t.elapsed();

    let t = Instant::now();
    let mut w_rel = sqp.w_star.clone();
    let mut value_relaxed = sqp.objective();
    let w_int = sum_up_round(&w_rel, plan)?;
    let polished = polish_to_vertex(objective, &mut w_rel, &mut value_relaxed, &w_int)?;
    let round = t.elapsed();

    let t = Instant::now();
    let gap = integrality_gap(objective, dense, &w_rel, &w_int)?;
    let value_rounded = value_relaxed + gap.gap_surrogate;
    Ok(DesignRun {
        sqp,
        w_rel,
        w_int,
        polished,
        value_relaxed,
        value_rounded,
        gap,
        timings: Timings {
            solve,
            round,
            gap: t.elapsed(),
        },
    })
}
