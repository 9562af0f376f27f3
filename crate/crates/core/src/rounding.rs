//! Sum-up rounding of relaxed weights and integrality gaps.

use std::io::Write;

use crate::error::{invalid, Result};
use crate::objective::{DesignWeights, ObjectiveFn};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoundingScheme {
    Natural,
    ByAngle,
}

/// Order in which weights are visited by sum-up rounding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundingPlan {
    order: Vec<usize>,
    scheme: RoundingScheme,
}

impl RoundingPlan {
    pub fn natural(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            scheme: RoundingScheme::Natural,
        }
    }

    /// Visits weights by increasing angle; ties keep index order.
    pub fn by_angle(angles: &[f64]) -> Result<Self> {
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(invalid("angles must be finite"));
        }
        let mut order: Vec<usize> = (0..angles.len()).collect();
        order.sort_by(|&a, &b| angles[a].total_cmp(&angles[b]));
        Ok(Self {
            order,
            scheme: RoundingScheme::ByAngle,
        })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn scheme(&self) -> RoundingScheme {
        self.scheme
    }
}

/// Sets `w_int = 1` whenever the running relaxed sum leads the running integer sum by at least 0.5.
pub fn sum_up_round(w_rel: &DesignWeights, plan: &RoundingPlan) -> Result<DesignWeights> {
    if plan.order.len() != w_rel.len() {
        return Err(invalid(format!(
            "plan covers {} weights, design has {}",
            plan.order.len(),
            w_rel.len()
        )));
    }
    if !w_rel.is_feasible(1e-9) {
        return Err(invalid("relaxed weights are infeasible"));
    }
    let mut out = vec![0.0; w_rel.len()];
    let (mut rel, mut int) = (0.0, 0.0);
    for &i in &plan.order {
        rel += w_rel.values[i];
        if rel - int >= 0.5 {
            out[i] = 1.0;
            int += 1.0;
        }
    }
    Ok(DesignWeights {
        values: out,
        budget: w_rel.budget,
        binary: true,
    })
}

/// Largest `|sum_{k<=i} (w_rel - w_int)|` along the plan order.
pub fn max_prefix_deviation(w_rel: &[f64], w_int: &[f64], plan: &RoundingPlan) -> f64 {
    let mut acc = 0.0f64;
    let mut worst = 0.0f64;
    for &i in &plan.order {
        acc += w_rel[i] - w_int[i];
        worst = worst.max(acc.abs());
    }
    worst
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapReport {
    pub gap_surrogate: f64,
    pub gap_dense: Option<f64>,
}

/// `phi(w_int) - phi(w_rel)` for the surrogate and, when given, the dense model.
pub fn integrality_gap(
    surrogate: &dyn ObjectiveFn,
    dense: Option<&dyn ObjectiveFn>,
    w_rel: &DesignWeights,
    w_int: &DesignWeights,
) -> Result<GapReport> {
    if w_rel.len() != w_int.len() {
        return Err(invalid("relaxed and integer designs differ in length"));
    }
    let gap = |o: &dyn ObjectiveFn| -> Result<f64> { Ok(o.value(&w_int.values)? - o.value(&w_rel.values)?) };
    Ok(GapReport {
        gap_surrogate: gap(surrogate)?,
        gap_dense: dense.map(gap).transpose()?,
    })
}

/// Writes `index,[angle,]w_rel,w_int`.
pub fn write_design_csv<W: Write>(out: W, w_rel: &[f64], w_int: &[f64], angles: Option<&[f64]>) -> Result<()> {
    if w_rel.len() != w_int.len() || angles.is_some_and(|a| a.len() != w_rel.len()) {
        return Err(invalid("design columns differ in length"));
    }
    let mut w = csv::Writer::from_writer(out);
    if angles.is_some() {
        w.write_record(["index", "angle", "w_rel", "w_int"])?;
    } else {
        w.write_record(["index", "w_rel", "w_int"])?;
    }
    for i in 0..w_rel.len() {
        let mut rec = vec![i.to_string()];
        if let Some(a) = angles {
            rec.push(a[i].to_string());
        }
        rec.push(w_rel[i].to_string());
        rec.push(w_int[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
