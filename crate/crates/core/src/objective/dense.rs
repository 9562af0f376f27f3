//! Exact objective and derivatives from a dense kernel matrix.

use nalgebra::DMatrix;

use super::{
    clean_weights, group_reduce, group_reduce_matrix, whiten_columns, BayesSetup, Criterion, Derivatives,
    DesignObjective, ObjectiveFn, WeightGroups,
};
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::qp::QpHessian;

/// Default largest dimension the dense oracle accepts.
pub const DEFAULT_ORACLE_CAP: usize = 2000;

/// Value, per-weight gradient and per-weight Hessian.
#[derive(Clone, Debug)]
pub struct DenseEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

/// Criterion value from `G = F^T W F` (already weighted).
pub fn dense_value_from_gram(gram: &DMatrix<f64>, setup: &BayesSetup) -> Result<f64> {
    let n = gram.nrows();
    let a = gram + DMatrix::identity(n, n) * setup.alpha;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("posterior precision is not positive definite".into()))?;
    let l = chol.l();
    Ok(match setup.criterion {
        Criterion::A => {
            let linv = l
                .solve_lower_triangular(&DMatrix::identity(n, n))
                .ok_or_else(|| Error::NumericalFailure("singular Cholesky factor".into()))?;
            setup.sigma2_noise * linv.norm_squared()
        }
        Criterion::D => {
            n as f64 * setup.sigma2_noise.ln() - 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
        }
    })
}

/// Dense validation model holding the full kernel matrix.
#[derive(Clone, Debug)]
pub struct DenseObjective {
    f: DMatrix<f64>,
    setup: BayesSetup,
    groups: WeightGroups,
    cap: usize,
}

impl DenseObjective {
    /// `f` is `rows x n`; rows follow the same location-major layout as the surrogate.
    pub fn new(f: DMatrix<f64>, setup: BayesSetup, groups: Option<WeightGroups>, cap: usize) -> Result<Self> {
        if f.ncols() > cap {
            return Err(Error::OracleCapExceeded { dim: f.ncols(), cap });
        }
        let groups = groups.unwrap_or_else(|| WeightGroups::singletons(f.nrows()));
        if groups.n_rows() != f.nrows() {
            return Err(invalid(format!("groups cover {} rows but F has {}", groups.n_rows(), f.nrows())));
        }
        let f = match setup.whitening_factor() {
            Some(l) => {
                if f.nrows() % l.nrows() != 0 {
                    return Err(invalid("rows do not split into time blocks"));
                }
                whiten_columns(&f.transpose(), &l).transpose()
            }
            None => f,
        };
        Ok(Self { f, setup, groups, cap })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn setup(&self) -> &BayesSetup {
        &self.setup
    }

    pub fn groups(&self) -> &WeightGroups {
        &self.groups
    }

    fn weighted_gram(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        if w.len() != self.groups.n_groups() {
            return Err(invalid(format!("{} weights for {} groups", w.len(), self.groups.n_groups())));
        }
        let rw = self.groups.expand(&clean_weights(w)?);
        Ok(super::spectrum::weighted_gram(&self.f.transpose(), &rw))
    }

    /// Exact value, gradient and Hessian. Above `cap` rows the grouped
    /// Hessian is accumulated per group pair instead of from row-by-row matrices.
    pub fn evaluate(&self, w: &[f64]) -> Result<DenseEvaluation> {
        let rows = self.f.nrows();
        let n = self.f.ncols();
        let gram = self.weighted_gram(w)?;
        let value = dense_value_from_gram(&gram, &self.setup)?;
        let a = gram + DMatrix::identity(n, n) * self.setup.alpha;
        let ainv = a
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("posterior precision is not positive definite".into()))?
            .inverse();
        let y = &self.f * ainv;
        let s2 = self.setup.sigma2_noise;
        let row_grad: Vec<f64> = match self.setup.criterion {
            Criterion::A => (0..rows).map(|i| -s2 * y.row(i).norm_squared()).collect(),
            Criterion::D => (0..rows).map(|i| -y.row(i).dot(&self.f.row(i))).collect(),
        };
        let gradient = group_reduce(&row_grad, &self.groups)?;
        let hessian = if rows <= self.cap {
            let h1 = &y * self.f.transpose();
            let h1 = (&h1 + h1.transpose()) * 0.5;
            let h = match self.setup.criterion {
                Criterion::A => h1.component_mul(&(&y * y.transpose())) * (2.0 * s2),
                Criterion::D => h1.component_mul(&h1),
            };
            group_reduce_matrix(&h, &self.groups)?
        } else {
            self.blockwise_hessian(&y)
        };
        Ok(DenseEvaluation {
            value,
            gradient,
            hessian,
        })
    }

    fn blockwise_hessian(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let ng = self.groups.n_groups();
        let fs: Vec<DMatrix<f64>> = (0..ng).map(|g| self.f.select_rows(self.groups.members(g))).collect();
        let ys: Vec<DMatrix<f64>> = (0..ng).map(|g| y.select_rows(self.groups.members(g))).collect();
        let s2 = self.setup.sigma2_noise;
        let rows = par::map_indices(ng, |g| {
            (g..ng)
                .map(|h| {
                    let k1 = &ys[g] * fs[h].transpose();
                    match self.setup.criterion {
                        Criterion::A => 2.0 * s2 * k1.component_mul(&(&ys[g] * ys[h].transpose())).sum(),
                        Criterion::D => {
                            let k1t = &fs[g] * ys[h].transpose();
                            let k = (&k1 + &k1t) * 0.5;
                            k.component_mul(&k).sum()
                        }
                    }
                })
                .collect::<Vec<f64>>()
        });
        let mut out = DMatrix::zeros(ng, ng);
        for (g, vals) in rows.into_iter().enumerate() {
            for (k, v) in vals.into_iter().enumerate() {
                out[(g, g + k)] = v;
                out[(g + k, g)] = v;
            }
        }
        out
    }
}

impl ObjectiveFn for DenseObjective {
    fn n_weights(&self) -> usize {
        self.groups.n_groups()
    }

    fn value(&self, w: &[f64]) -> Result<f64> {
        dense_value_from_gram(&self.weighted_gram(w)?, &self.setup)
    }
}

impl DesignObjective for DenseObjective {
    fn derivatives(&self, w: &[f64]) -> Result<Derivatives> {
        let e = self.evaluate(w)?;
        Ok(Derivatives {
            value: e.value,
            gradient: e.gradient,
            hessian: QpHessian::dense(e.hessian)?,
        })
    }
}

/// One-shot dense evaluation with the default cap.
pub fn dense_objective_and_derivatives(
    f: &DMatrix<f64>,
    w: &[f64],
    setup: &BayesSetup,
    groups: Option<WeightGroups>,
) -> Result<DenseEvaluation> {
    DenseObjective::new(f.clone(), setup.clone(), groups, DEFAULT_ORACLE_CAP)?.evaluate(w)
}
