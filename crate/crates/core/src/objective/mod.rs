//! A- and D-optimal design criteria, their derivatives, and weight groups.
//!
//! The posterior covariance is `sigma2_noise * (F^T W F + alpha I)^{-1}`;
//! every inverse in this module keeps `alpha` explicit.

mod dense;
mod spectrum;

pub use dense::{dense_objective_and_derivatives, dense_value_from_gram, DenseEvaluation, DenseObjective, DEFAULT_ORACLE_CAP};
pub use spectrum::{
    apply_posterior_inverse, objective_value, InterpolatedDerivatives, PosteriorSpectrum, SurrogateObjective,
};

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::qp::QpHessian;

/// Weights below zero by less than this are treated as round-off.
pub const NEGATIVE_WEIGHT_TOL: f64 = 1e-12;

/// Design criterion applied to the posterior covariance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    /// Trace.
    A,
    /// Log-determinant.
    D,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::A => "A",
            Criterion::D => "D",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Criterion::A),
            "D" | "d" => Ok(Criterion::D),
            other => Err(invalid(format!("unknown criterion {other:?} (expected A or D)"))),
        }
    }
}

/// Gaussian prior/noise setup.
#[derive(Clone, Debug)]
pub struct BayesSetup {
    /// `sigma2_noise / sigma2_prior`.
    pub alpha: f64,
    pub sigma2_noise: f64,
    pub criterion: Criterion,
    time_precision: Option<DMatrix<f64>>,
}

impl BayesSetup {
    pub fn new(alpha: f64, sigma2_noise: f64, criterion: Criterion) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        if !(sigma2_noise.is_finite() && sigma2_noise > 0.0) {
            return Err(invalid(format!("noise variance must be positive, got {sigma2_noise}")));
        }
        Ok(Self {
            alpha,
            sigma2_noise,
            criterion,
            time_precision: None,
        })
    }

    /// Attaches an `n_t x n_t` precision matrix shared by every location.
    pub fn with_time_precision(mut self, p: DMatrix<f64>) -> Result<Self> {
        if !p.is_square() || p.nrows() == 0 {
            return Err(invalid("time precision must be a nonempty square matrix"));
        }
        let asym = (&p - p.transpose()).amax();
        if asym > 1e-12 * p.amax().max(1.0) {
            return Err(invalid("time precision must be symmetric"));
        }
        if p.clone().cholesky().is_none() {
            return Err(invalid("time precision must be positive definite"));
        }
        self.time_precision = Some(p);
        Ok(self)
    }

    pub fn time_precision(&self) -> Option<&DMatrix<f64>> {
        self.time_precision.as_ref()
    }

    /// Lower Cholesky factor `L` of the time precision, `P = L L^T`.
    pub(crate) fn whitening_factor(&self) -> Option<DMatrix<f64>> {
        self.time_precision
            .as_ref()
            .map(|p| p.clone().cholesky().expect("checked at construction").unpack())
    }
}

/// Partition of the rows of `F` into groups that share one design weight.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightGroups {
    row_group: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl WeightGroups {
    /// Builds groups from explicit member lists; they must partition `0..n_rows`.
    pub fn from_members(members: Vec<Vec<usize>>, n_rows: usize) -> Result<Self> {
        let mut row_group = vec![usize::MAX; n_rows];
        for (g, rows) in members.iter().enumerate() {
            if rows.is_empty() {
                return Err(invalid(format!("group {g} is empty")));
            }
            for &r in rows {
                if r >= n_rows {
                    return Err(invalid(format!("group {g} names row {r} but there are {n_rows} rows")));
                }
                if row_group[r] != usize::MAX {
                    return Err(invalid(format!("row {r} belongs to more than one group")));
                }
                row_group[r] = g;
            }
        }
        if let Some(r) = row_group.iter().position(|&g| g == usize::MAX) {
            return Err(invalid(format!("row {r} is not covered by any group")));
        }
        Ok(Self { row_group, members })
    }

    /// Groups from a label per row; labels must cover `0..max+1` with no gaps.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let n_groups = labels.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); n_groups];
        for (r, &g) in labels.iter().enumerate() {
            members[g].push(r);
        }
        Self::from_members(members, labels.len())
    }

    /// `n_groups` consecutive blocks of `size` rows each.
    pub fn contiguous(n_groups: usize, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(invalid("group size must be positive"));
        }
        let labels: Vec<usize> = (0..n_groups * size).map(|r| r / size).collect();
        Self::from_labels(&labels)
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            row_group: (0..n).collect(),
            members: (0..n).map(|r| vec![r]).collect(),
        }
    }

    pub fn n_groups(&self) -> usize {
        self.members.len()
    }

    pub fn n_rows(&self) -> usize {
        self.row_group.len()
    }

    pub fn group_of(&self, row: usize) -> usize {
        self.row_group[row]
    }

    pub fn members(&self, g: usize) -> &[usize] {
        &self.members[g]
    }

    /// Per-row weights from per-group weights.
    pub fn expand(&self, w: &[f64]) -> Vec<f64> {
        self.row_group.iter().map(|&g| w[g]).collect()
    }
}

/// Sums per-row values into their groups.
pub fn group_reduce(values: &[f64], groups: &WeightGroups) -> Result<Vec<f64>> {
    if values.len() != groups.n_rows() {
        return Err(invalid(format!(
            "{} values for {} grouped rows",
            values.len(),
            groups.n_rows()
        )));
    }
    let mut out = vec![0.0; groups.n_groups()];
    for (r, v) in values.iter().enumerate() {
        out[groups.group_of(r)] += v;
    }
    Ok(out)
}

/// Sums a per-row matrix into group blocks: `H_g(a, b) = sum_{i in a, j in b} H(i, j)`.
pub fn group_reduce_matrix(h: &DMatrix<f64>, groups: &WeightGroups) -> Result<DMatrix<f64>> {
    if h.nrows() != groups.n_rows() || h.ncols() != groups.n_rows() {
        return Err(invalid("matrix does not match grouped rows"));
    }
    let ng = groups.n_groups();
    let mut cols = DMatrix::zeros(h.nrows(), ng);
    for j in 0..h.ncols() {
        let g = groups.group_of(j);
        let mut c = cols.column_mut(g);
        c += h.column(j);
    }
    let mut out = DMatrix::zeros(ng, ng);
    for i in 0..h.nrows() {
        let g = groups.group_of(i);
        let mut r = out.row_mut(g);
        r += cols.row(i);
    }
    Ok(out)
}

/// Design weights, relaxed or binary.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignWeights {
    pub values: Vec<f64>,
    pub budget: f64,
    pub binary: bool,
}

impl DesignWeights {
    /// Relaxed weights; checks `0 <= w <= 1` and `sum w <= budget` up to round-off.
    pub fn relaxed(values: Vec<f64>, budget: f64) -> Result<Self> {
        let w = Self {
            values,
            budget,
            binary: false,
        };
        if !w.is_feasible(1e-9) {
            return Err(invalid("weights violate the box or budget constraint"));
        }
        Ok(w)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.values.iter().all(|&v| v >= -tol && v <= 1.0 + tol) && self.sum() <= self.budget + tol
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Objective value with first and second derivatives in the design weights.
#[derive(Clone, Debug)]
pub struct Derivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: QpHessian,
}

/// Anything that can evaluate a design criterion over a weight vector.
pub trait ObjectiveFn: Sync {
    fn n_weights(&self) -> usize;
    fn value(&self, w: &[f64]) -> Result<f64>;
}

/// A criterion that also supplies derivatives for SQP.
pub trait DesignObjective: ObjectiveFn {
    fn derivatives(&self, w: &[f64]) -> Result<Derivatives>;
}

/// Clamps round-off negatives; rejects genuinely negative weights.
pub fn clean_weights(w: &[f64]) -> Result<Vec<f64>> {
    w.iter()
        .enumerate()
        .map(|(i, &v)| {
            if !v.is_finite() || v < -NEGATIVE_WEIGHT_TOL {
                Err(invalid(format!("weight {i} is {v}")))
            } else {
                Ok(v.max(0.0))
            }
        })
        .collect()
}

/// Applies `L^T` to each consecutive block of `n_t` columns of `c`
/// (one block per location), i.e. whitens time-correlated rows.
pub fn whiten_columns(c: &DMatrix<f64>, l: &DMatrix<f64>) -> DMatrix<f64> {
    let nt = l.nrows();
    let mut out = DMatrix::zeros(c.nrows(), c.ncols());
    for b in 0..c.ncols() / nt {
        let block = c.columns(b * nt, nt);
        out.columns_mut(b * nt, nt).copy_from(&(block * l));
    }
    out
}
