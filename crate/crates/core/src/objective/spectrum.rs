//! Surrogate objective evaluated through a small eigenproblem.
//!
//! With `R = F_nodes C_in` and the thin SVD `R^T = U1 S1 V1^T` (rank `q`),
//! `F_s^T W F_s = U1 (S1 V1^T K V1 S1) U1^T` where `K = C_out W C_out^T`.
//! Writing `B = S1 V1^T C_out` (q x rows, computed once) the inner matrix is
//! `B W B^T`, so every evaluation costs `O(q^2 rows)`.

use nalgebra::{DMatrix, DVector};

use super::{clean_weights, whiten_columns, BayesSetup, Criterion, Derivatives, DesignObjective, ObjectiveFn, WeightGroups};
use crate::chebyshev::LowRankKernel;
use crate::error::{invalid, Error, Result};
use crate::linalg::{normalized, sym_eigen};
use crate::par;
use crate::qp::QpHessian;

/// Relative cutoff for the spectrum rank.
pub const SPECTRUM_RANK_TOL: f64 = 1e-12;
const SVD_RANK_TOL: f64 = 1e-14;
const GRAM_BLOCK: usize = 256;

/// Eigen-decomposition `F_s^T W F_s = Q diag(lambda) Q^T`.
#[derive(Clone, Debug)]
pub struct PosteriorSpectrum {
    /// `n x r`, orthonormal columns.
    pub q: DMatrix<f64>,
    /// Descending, positive.
    pub lambda: Vec<f64>,
    /// Ambient dimension `n`.
    pub ambient: usize,
}

impl PosteriorSpectrum {
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }
}

/// Criterion value from a spectrum.
pub fn objective_value(spectrum: &PosteriorSpectrum, setup: &BayesSetup) -> f64 {
    value_from_eigs(&spectrum.lambda, spectrum.ambient, setup)
}

fn value_from_eigs(lambda: &[f64], ambient: usize, setup: &BayesSetup) -> f64 {
    let (a, s2) = (setup.alpha, setup.sigma2_noise);
    let rest = (ambient - lambda.len()) as f64;
    match setup.criterion {
        Criterion::A => s2 * (rest / a + lambda.iter().map(|l| 1.0 / (a + l)).sum::<f64>()),
        Criterion::D => lambda.iter().map(|l| (s2 / (a + l)).ln()).sum::<f64>() + rest * (s2 / a).ln(),
    }
}

/// `(F_s^T W F_s + alpha I)^{-1} v`.
pub fn apply_posterior_inverse(spectrum: &PosteriorSpectrum, setup: &BayesSetup, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != spectrum.ambient {
        return Err(invalid(format!("vector has length {}, expected {}", v.len(), spectrum.ambient)));
    }
    let a = setup.alpha;
    let mut coef = spectrum.q.tr_mul(v);
    for (c, l) in coef.iter_mut().zip(&spectrum.lambda) {
        *c *= l / (a + l);
    }
    Ok((v - &spectrum.q * coef) / a)
}

/// Interpolated Hessian core and exact surrogate gradient.
#[derive(Clone, Debug)]
pub struct InterpolatedDerivatives {
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub htilde: DMatrix<f64>,
    /// Per weight (per group when grouped).
    pub gradient: Vec<f64>,
}

/// Prepared surrogate problem: the SVD of the input factor is computed once.
#[derive(Clone, Debug)]
pub struct SurrogateObjective {
    setup: BayesSetup,
    groups: WeightGroups,
    ambient: usize,
    /// `m x q`.
    u1: DMatrix<f64>,
    /// `N_out x q`, columns scaled by the singular values.
    v1s: DMatrix<f64>,
    /// `q x rows`.
    b: DMatrix<f64>,
    /// `N_out x n_w`, output coefficients summed per group.
    group_coeffs: DMatrix<f64>,
}

struct InnerEigen {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl SurrogateObjective {
    pub fn new(lowrank: &LowRankKernel, setup: BayesSetup, groups: Option<WeightGroups>) -> Result<Self> {
        let rows = lowrank.n_rows();
        let groups = groups.unwrap_or_else(|| WeightGroups::singletons(rows));
        if groups.n_rows() != rows {
            return Err(invalid(format!("groups cover {} rows but the kernel has {rows}", groups.n_rows())));
        }
        let c_out = match setup.whitening_factor() {
            Some(l) => {
                if l.nrows() != lowrank.n_times() || rows % l.nrows() != 0 {
                    return Err(invalid(format!(
                        "time precision is {}x{} but the kernel has {} times",
                        l.nrows(),
                        l.nrows(),
                        lowrank.n_times()
                    )));
                }
                whiten_columns(&lowrank.c_out, &l)
            }
            None => lowrank.c_out.clone(),
        };

        let ambient = lowrank.n_params();
        let (u1, sing, v1) = input_svd(&lowrank.node_values, &lowrank.c_in)?;
        let mut v1s = v1;
        for (k, s) in sing.iter().enumerate() {
            v1s.column_mut(k).scale_mut(*s);
        }
        let b = v1s.tr_mul(&c_out);

        let mut group_coeffs = DMatrix::zeros(c_out.nrows(), groups.n_groups());
        for r in 0..rows {
            let mut col = group_coeffs.column_mut(groups.group_of(r));
            col += c_out.column(r);
        }

        Ok(Self {
            setup,
            groups,
            ambient,
            u1,
            v1s,
            b,
            group_coeffs,
        })
    }

    pub fn setup(&self) -> &BayesSetup {
        &self.setup
    }

    pub fn groups(&self) -> &WeightGroups {
        &self.groups
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    /// Rank of the input-side factor.
    pub fn inner_rank(&self) -> usize {
        self.b.nrows()
    }

    fn row_weights(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.groups.n_groups() {
            return Err(invalid(format!("{} weights for {} groups", w.len(), self.groups.n_groups())));
        }
        Ok(self.groups.expand(&clean_weights(w)?))
    }

    fn inner_eigen(&self, w: &[f64]) -> Result<InnerEigen> {
        let rw = self.row_weights(w)?;
        let s = weighted_gram(&self.b, &rw);
        let eig = sym_eigen(&s)?;
        Ok(InnerEigen {
            values: eig.values.iter().map(|l| l.max(0.0)).collect(),
            vectors: eig.vectors,
        })
    }

    /// Spectrum of `F_s^T W F_s`, truncated at `SPECTRUM_RANK_TOL * lambda_max`.
    pub fn posterior_spectrum(&self, w: &[f64]) -> Result<PosteriorSpectrum> {
        let inner = self.inner_eigen(w)?;
        let lmax = inner.values.first().copied().unwrap_or(0.0);
        let r = inner.values.iter().take_while(|&&l| lmax > 0.0 && l > SPECTRUM_RANK_TOL * lmax).count();
        let q = &self.u1 * inner.vectors.columns(0, r);
        Ok(PosteriorSpectrum {
            q,
            lambda: inner.values[..r].to_vec(),
            ambient: self.ambient,
        })
    }

    /// `M1`, `M2`, `H~` and the surrogate gradient at `w`.
    pub fn interpolated_derivatives(&self, w: &[f64]) -> Result<(f64, InterpolatedDerivatives)> {
        let inner = self.inner_eigen(w)?;
        let (a, s2) = (self.setup.alpha, self.setup.sigma2_noise);
        let value = value_from_eigs(&inner.values, self.ambient, &self.setup);

        let d1: Vec<f64> = inner.values.iter().map(|l| 1.0 / (a + l)).collect();
        let t = &self.v1s * &inner.vectors;
        let m1 = scaled_outer(&t, &d1);
        let d2: Vec<f64> = d1.iter().map(|d| d * d).collect();
        let m2 = scaled_outer(&t, &d2);

        let g = inner.vectors.tr_mul(&self.b);
        let (dg, scale) = match self.setup.criterion {
            Criterion::A => (&d2, -s2),
            Criterion::D => (&d1, -1.0),
        };
        let row_grad = par::map_indices(g.ncols(), |i| {
            scale * g.column(i).iter().zip(dg.iter()).map(|(x, d)| d * x * x).sum::<f64>()
        });
        let gradient = super::group_reduce(&row_grad, &self.groups)?;
        let htilde = match self.setup.criterion {
            Criterion::A => m1.component_mul(&m2) * (2.0 * s2),
            Criterion::D => m1.component_mul(&m1),
        };
        Ok((
            value,
            InterpolatedDerivatives {
                m1,
                m2,
                htilde,
                gradient,
            },
        ))
    }

    /// Output coefficients summed per weight group (`N_out x n_w`).
    pub fn group_coefficients(&self) -> &DMatrix<f64> {
        &self.group_coeffs
    }
}

impl ObjectiveFn for SurrogateObjective {
    fn n_weights(&self) -> usize {
        self.groups.n_groups()
    }

    fn value(&self, w: &[f64]) -> Result<f64> {
        let inner = self.inner_eigen(w)?;
        Ok(value_from_eigs(&inner.values, self.ambient, &self.setup))
    }
}

impl DesignObjective for SurrogateObjective {
    fn derivatives(&self, w: &[f64]) -> Result<Derivatives> {
        let (value, d) = self.interpolated_derivatives(w)?;
        Ok(Derivatives {
            value,
            gradient: d.gradient,
            hessian: QpHessian::factored(self.group_coeffs.clone(), d.htilde, None)?,
        })
    }
}

/// `T diag(d) T^T`.
fn scaled_outer(t: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut td = t.clone();
    for (k, dk) in d.iter().enumerate() {
        td.column_mut(k).scale_mut(*dk);
    }
    let m = &td * t.transpose();
    (&m + m.transpose()) * 0.5
}

/// `B diag(w) B^T` accumulated over column blocks.
pub(crate) fn weighted_gram(b: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let q = b.nrows();
    let s = par::block_reduce(
        b.ncols(),
        GRAM_BLOCK,
        |range| {
            let blk = b.columns(range.start, range.len());
            let mut scaled = blk.clone_owned();
            for (k, wk) in w[range].iter().enumerate() {
                scaled.column_mut(k).scale_mut(*wk);
            }
            scaled * blk.transpose()
        },
        |x, y| x + y,
    )
    .unwrap_or_else(|| DMatrix::zeros(q, q));
    (&s + s.transpose()) * 0.5
}

/// Thin SVD of `(F_nodes C_in)^T = U1 diag(s) V1^T`, dropping null directions.
fn input_svd(node_values: &DMatrix<f64>, c_in: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let m = c_in.ncols();
    let n_in = c_in.nrows();
    let (basis, small) = if m > n_in {
        let qr = c_in.transpose().qr();
        let (qy, ry) = (qr.q(), qr.r());
        (Some(qy), ry * node_values.transpose())
    } else {
        (None, c_in.tr_mul(&node_values.transpose()))
    };
    let (small, scale) = normalized(&small);
    let svd = small
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("SVD of the input factor did not converge".into()))?;
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| smax > 0.0 && svd.singular_values[k] > SVD_RANK_TOL * smax)
        .collect();
    let u_keep = DMatrix::from_fn(u.nrows(), keep.len(), |r, c| u[(r, keep[c])]);
    let v_keep = DMatrix::from_fn(vt.ncols(), keep.len(), |r, c| vt[(keep[c], r)]);
    let sing = keep.iter().map(|&k| svd.singular_values[k] * scale).collect();
    let u1 = match basis {
        Some(qy) => qy * u_keep,
        None => u_keep,
    };
    Ok((u1, sing, v_keep))
}
