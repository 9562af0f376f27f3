//! Primal-dual interior-point solver for
//!
//! ```text
//! min  g^T p + 1/2 p^T H p   s.t.  lower <= p <= upper,  sum(p) <= budget_rhs
//! ```
//!
//! The constraints are written `A p >= b` with `A = [I; -I; -1^T]`. Each
//! iteration solves the normal equations `(H + A^T S^{-1} Lambda A) dp = rhs`,
//! where `A^T S^{-1} Lambda A = D + d_b 1 1^T`. For a factored Hessian
//! `H = C^T H~ C` the system is inverted with Woodbury on a truncated
//! eigendecomposition of `H~` followed by Sherman-Morrison for the budget row.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{invalid, Error, Result};
use crate::linalg::{normalized, sym_eigen};

/// Relative PSD slack for Hessian checks.
pub const PSD_TOL: f64 = 1e-10;
/// Eigenvalues of `H~` below this fraction of the largest are dropped.
pub const TRUNCATION_TOL: f64 = 1e-10;
const SLACK_FLOOR: f64 = 1e-14;
/// Active-set polishing is skipped above this many free variables.
const POLISH_MAX_FREE: usize = 400;

/// Normal-matrix indices with `d_i` below this multiple of `|b_i|^2` are solved densely.
const SCHUR_SPLIT: f64 = 1e-4;

/// Largest single complementarity product accepted at termination, relative to `tol`.
const PAIR_FACTOR: f64 = 10.0;

/// QP Hessian, dense or `C^T H~ C + diag(shift)`.
#[derive(Clone, Debug)]
pub enum QpHessian {
    Dense(DMatrix<f64>),
    Factored {
        /// `N x n`.
        coeffs: DMatrix<f64>,
        /// `N x N`.
        core: DMatrix<f64>,
        shift: Option<DVector<f64>>,
    },
}

impl QpHessian {
    pub fn dense(h: DMatrix<f64>) -> Result<Self> {
        if !h.is_square() {
            return Err(invalid("Hessian must be square"));
        }
        let sym = (&h + h.transpose()) * 0.5;
        Ok(QpHessian::Dense(sym))
    }

    pub fn factored(coeffs: DMatrix<f64>, core: DMatrix<f64>, shift: Option<DVector<f64>>) -> Result<Self> {
        if !core.is_square() || core.nrows() != coeffs.nrows() {
            return Err(invalid(format!(
                "core {:?} does not match coefficients {:?}",
                core.shape(),
                coeffs.shape()
            )));
        }
        if let Some(s) = &shift {
            if s.len() != coeffs.ncols() || s.iter().any(|&x| !(x >= 0.0)) {
                return Err(invalid("diagonal shift must be nonnegative with one entry per variable"));
            }
        }
        let core = (&core + core.transpose()) * 0.5;
        Ok(QpHessian::Factored { coeffs, core, shift })
    }

    pub fn dim(&self) -> usize {
        match self {
            QpHessian::Dense(h) => h.nrows(),
            QpHessian::Factored { coeffs, .. } => coeffs.ncols(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            QpHessian::Dense(h) => h * v,
            QpHessian::Factored { coeffs, core, shift } => {
                let mut out = coeffs.tr_mul(&(core * (coeffs * v)));
                if let Some(s) = shift {
                    out += s.component_mul(v);
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            QpHessian::Dense(h) => h.clone(),
            QpHessian::Factored { coeffs, core, shift } => {
                let mut h = coeffs.tr_mul(&(core * coeffs));
                h = (&h + h.transpose()) * 0.5;
                if let Some(s) = shift {
                    h.set_diagonal(&(h.diagonal() + s));
                }
                h
            }
        }
    }

    /// Rows and columns `idx` of the Hessian.
    pub fn principal_submatrix(&self, idx: &[usize]) -> DMatrix<f64> {
        match self {
            QpHessian::Dense(m) => m.select_rows(idx).select_columns(idx),
            QpHessian::Factored { coeffs, core, shift } => {
                let c = coeffs.select_columns(idx);
                let mut h = c.tr_mul(&(core * &c));
                if let Some(d) = shift {
                    for (k, &i) in idx.iter().enumerate() {
                        h[(k, k)] += d[i];
                    }
                }
                h
            }
        }
    }

    /// Multiplies the Hessian by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            QpHessian::Dense(h) => QpHessian::Dense(h * factor),
            QpHessian::Factored { coeffs, core, shift } => QpHessian::Factored {
                coeffs: coeffs.clone(),
                core: core * factor,
                shift: shift.as_ref().map(|s| s * factor),
            },
        }
    }

    /// Rejects Hessians with eigenvalues below `-PSD_TOL * scale`.
    pub fn check_psd(&self) -> Result<()> {
        let (m, label) = match self {
            QpHessian::Dense(h) => (h, "Hessian"),
            QpHessian::Factored { core, .. } => (core, "Hessian core"),
        };
        if m.nrows() == 0 {
            return Ok(());
        }
        let (m, _) = normalized(m);
        let shifted = &m + DMatrix::identity(m.nrows(), m.nrows()) * PSD_TOL;
        if shifted.cholesky().is_none() {
            return Err(invalid(format!("{label} is not positive semidefinite")));
        }
        Ok(())
    }
}

/// Box- and budget-constrained QP.
#[derive(Clone, Debug)]
pub struct QpProblem {
    pub hessian: QpHessian,
    pub gradient: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub budget_rhs: f64,
}

impl QpProblem {
    pub fn new(
        hessian: QpHessian,
        gradient: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
        budget_rhs: f64,
    ) -> Result<Self> {
        let n = gradient.len();
        if hessian.dim() != n || lower.len() != n || upper.len() != n {
            return Err(invalid("QP dimensions disagree"));
        }
        if gradient.iter().chain(lower.iter()).chain(upper.iter()).any(|x| !x.is_finite()) || !budget_rhs.is_finite()
        {
            return Err(invalid("QP data must be finite"));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(invalid("box lower bound exceeds upper bound"));
        }
        Ok(Self {
            hessian,
            gradient,
            lower,
            upper,
            budget_rhs,
        })
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, p: &DVector<f64>) -> f64 {
        self.gradient.dot(p) + 0.5 * p.dot(&self.hessian.apply(p))
    }

    /// `A p - b`, i.e. the constraint slacks at `p`.
    pub fn constraint_values(&self, p: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut c = DVector::zeros(2 * n + 1);
        for i in 0..n {
            c[i] = p[i] - self.lower[i];
            c[n + i] = self.upper[i] - p[i];
        }
        c[2 * n] = self.budget_rhs - p.sum();
        c
    }

    fn apply_a(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let total = v.sum();
        DVector::from_fn(2 * n + 1, |i, _| match i {
            i if i < n => v[i],
            i if i < 2 * n => -v[i - n],
            _ => -total,
        })
    }

    fn apply_a_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n, |i, _| v[i] - v[n + i] - v[2 * n])
    }
}

/// Interior-point state.
#[derive(Clone, Debug)]
pub struct QpIterate {
    pub p: DVector<f64>,
    pub s: DVector<f64>,
    pub lam: DVector<f64>,
    pub mu: f64,
}

/// Box center pulled toward the lower bound until the budget has slack.
pub fn starting_point(problem: &QpProblem) -> Result<QpIterate> {
    let n = problem.dim();
    if problem.lower.iter().zip(problem.upper.iter()).any(|(l, u)| l >= u) {
        return Err(invalid("box has an empty interior"));
    }
    let low_sum = problem.lower.sum();
    if problem.budget_rhs <= low_sum {
        return Err(invalid(format!(
            "budget {} leaves no interior above the lower bounds (sum {low_sum})",
            problem.budget_rhs
        )));
    }
    let center = (&problem.lower + &problem.upper) * 0.5;
    let half: f64 = (&center - &problem.lower).sum();
    let t = if half > 0.0 {
        (0.5 * (problem.budget_rhs - low_sum) / half).min(1.0)
    } else {
        1.0
    };
    let p = &problem.lower + (center - &problem.lower) * t;
    let s = problem.constraint_values(&p).map(|c| c.max(1.0));
    let lam = DVector::from_element(2 * n + 1, 1.0);
    let mu = s.dot(&lam) / (2 * n + 1) as f64;
    Ok(QpIterate { p, s, lam, mu })
}

/// How the normal equations are solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalSolve {
    /// Structured when the truncated rank is below `n`, dense otherwise.
    Auto,
    Dense,
    Structured,
}

#[derive(Clone, Debug)]
enum HessianPrep {
    Dense(DMatrix<f64>),
    /// `H ~ B^T B + diag(shift)`, `B` is `k x n`.
    LowRank { b: DMatrix<f64>, shift: DVector<f64> },
}

impl HessianPrep {
    fn new(h: &QpHessian, mode: NormalSolve) -> Result<Self> {
        h.check_psd()?;
        let n = h.dim();
        match (h, mode) {
            (QpHessian::Dense(m), NormalSolve::Structured) => Self::low_rank(&DMatrix::identity(n, n), m, None),
            (QpHessian::Factored { coeffs, core, shift }, NormalSolve::Structured | NormalSolve::Auto) => {
                let prep = Self::low_rank(coeffs, core, shift.as_ref())?;
                match (&prep, mode) {
                    (HessianPrep::LowRank { b, .. }, NormalSolve::Auto) if b.nrows() >= n => {
                        Ok(HessianPrep::Dense(h.to_dense()))
                    }
                    _ => Ok(prep),
                }
            }
            _ => Ok(HessianPrep::Dense(h.to_dense())),
        }
    }

    fn low_rank(coeffs: &DMatrix<f64>, core: &DMatrix<f64>, shift: Option<&DVector<f64>>) -> Result<Self> {
        let n = coeffs.ncols();
        let eig = sym_eigen(core)?;
        let lmax = eig.values.first().copied().unwrap_or(0.0);
        let keep = eig.values.iter().take_while(|&&l| lmax > 0.0 && l > TRUNCATION_TOL * lmax).count();
        let mut vk = DMatrix::zeros(core.nrows(), keep);
        for k in 0..keep {
            vk.set_column(k, &(eig.vectors.column(k) * eig.values[k].sqrt()));
        }
        let b = vk.tr_mul(coeffs);
        let shift = shift.cloned().unwrap_or_else(|| DVector::zeros(n));
        Ok(HessianPrep::LowRank { b, shift })
    }
}

enum NormalFactor {
    Dense(Cholesky<f64, Dyn>),
    /// Budget term folded into the factor as the row `sqrt(d_b) 1^T`.
    Woodbury(LowRankSolver),
}

/// The operator `X = H + diag(d) + d_b 1 1^T` with its inverse action.
pub struct NormalMatrix<'a> {
    prep: &'a HessianPrep,
    hessian: &'a QpHessian,
    diag: DVector<f64>,
    db: f64,
    factor: NormalFactor,
}

/// Prepared Hessian, reusable across iterations of one solve.
pub struct PreparedHessian<'a> {
    hessian: &'a QpHessian,
    prep: HessianPrep,
}

impl<'a> PreparedHessian<'a> {
    pub fn new(hessian: &'a QpHessian, mode: NormalSolve) -> Result<Self> {
        Ok(Self {
            hessian,
            prep: HessianPrep::new(hessian, mode)?,
        })
    }

    pub fn is_structured(&self) -> bool {
        matches!(self.prep, HessianPrep::LowRank { .. })
    }

    /// Normal matrix for diagonal `diag` (length `n`) and budget weight `db`.
    pub fn normal_matrix(&self, diag: DVector<f64>, db: f64) -> Result<NormalMatrix<'_>> {
        let factor = match &self.prep {
            HessianPrep::Dense(h) => {
                let n = h.nrows();
                let mut x = h.clone();
                for i in 0..n {
                    x[(i, i)] += diag[i];
                }
                x.add_scalar_mut(db);
                NormalFactor::Dense(cholesky_with_ridge(x)?)
            }
            HessianPrep::LowRank { b, shift } => {
                let d = &diag + shift;
                if d.iter().any(|&x| !(x > 0.0)) {
                    return Err(Error::NumericalFailure("normal diagonal is not positive".into()));
                }
                let solver = if db > 0.0 {
                    let k = b.nrows();
                    let mut aug = b.clone().insert_row(k, db.sqrt());
                    aug.row_mut(k).fill(db.sqrt());
                    LowRankSolver::new(&aug, &d)?
                } else {
                    LowRankSolver::new(b, &d)?
                };
                NormalFactor::Woodbury(solver)
            }
        };
        Ok(NormalMatrix {
            prep: &self.prep,
            hessian: self.hessian,
            diag,
            db,
            factor,
        })
    }
}

/// Solves `(diag(d) + B^T B) x = v`. Indices whose `d_i` is tiny next to
/// their curvature `|b_i|^2` form a dense Schur block; Woodbury handles the rest.
struct LowRankSolver {
    /// `1 / d_i` on the Woodbury part, zero on the Schur block.
    dinv: DVector<f64>,
    b: DMatrix<f64>,
    inner: Cholesky<f64, Dyn>,
    small: Vec<usize>,
    b_small: DMatrix<f64>,
    schur: Option<Cholesky<f64, Dyn>>,
}

impl LowRankSolver {
    fn new(b: &DMatrix<f64>, d: &DVector<f64>) -> Result<Self> {
        let (k, n) = b.shape();
        let small: Vec<usize> = (0..n)
            .filter(|&j| d[j] < SCHUR_SPLIT * b.column(j).norm_squared())
            .collect();
        let mut dinv = d.map(|x| 1.0 / x);
        for &j in &small {
            dinv[j] = 0.0;
        }
        let mut bd = b.clone();
        for (j, dj) in dinv.iter().enumerate() {
            bd.column_mut(j).scale_mut(dj.sqrt());
        }
        let m = DMatrix::identity(k, k) + &bd * bd.transpose();
        let inner = m
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("inner Woodbury system is singular".into()))?;
        let b_small = b.select_columns(&small);
        let schur = if small.is_empty() {
            None
        } else {
            let mut sigma = b_small.tr_mul(&inner.solve(&b_small));
            for (i, &j) in small.iter().enumerate() {
                sigma[(i, i)] += d[j];
            }
            Some(cholesky_with_ridge(sigma)?)
        };
        Ok(Self {
            dinv,
            b: b.clone(),
            inner,
            small,
            b_small,
            schur,
        })
    }

    /// `(D_L + B_L^T B_L)^{-1} v_L`, zero on the Schur block.
    fn woodbury(&self, v: &DVector<f64>) -> DVector<f64> {
        let dv = self.dinv.component_mul(v);
        let t = self.inner.solve(&(&self.b * &dv));
        dv - self.dinv.component_mul(&self.b.tr_mul(&t))
    }

    fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let Some(schur) = &self.schur else {
            return self.woodbury(v);
        };
        let y = self.inner.solve(&(&self.b * self.dinv.component_mul(v)));
        let rhs = DVector::from_fn(self.small.len(), |i, _| v[self.small[i]]) - self.b_small.tr_mul(&y);
        let xs = schur.solve(&rhs);
        let mut x = self.woodbury(&(v - self.b.tr_mul(&(&self.b_small * &xs))));
        for (i, &j) in self.small.iter().enumerate() {
            x[j] = xs[i];
        }
        x
    }
}

fn cholesky_with_ridge(x: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = x.nrows();
    let scale = x.diagonal().amax().max(1.0);
    let mut chol = x.clone().cholesky();
    let mut ridge = 1e-14 * scale;
    while chol.is_none() && ridge < 1e-6 * scale {
        chol = (&x + DMatrix::identity(n, n) * ridge).cholesky();
        ridge *= 100.0;
    }
    chol.ok_or_else(|| Error::NumericalFailure("normal matrix is not positive definite".into()))
}

impl NormalMatrix<'_> {
    /// `X v` using the Hessian the factorization was built from.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let hv = match self.prep {
            HessianPrep::Dense(h) => h * v,
            HessianPrep::LowRank { b, shift } => b.tr_mul(&(b * v)) + shift.component_mul(v),
        };
        hv + self.diag.component_mul(v) + DVector::from_element(v.len(), self.db * v.sum())
    }

    /// `X^{-1} v` with one step of iterative refinement.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut x = self.solve_once(v);
        let r = v - self.apply(&x);
        x += self.solve_once(&r);
        x
    }

    fn solve_once(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            NormalFactor::Dense(ch) => ch.solve(v),
            NormalFactor::Woodbury(solver) => solver.solve(v),
        }
    }

    /// The Hessian this operator was assembled for.
    pub fn hessian(&self) -> &QpHessian {
        self.hessian
    }
}

/// Solver settings.
#[derive(Clone, Debug)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Fixed centering parameter.
    pub sigma: f64,
    /// Adaptive centering with a corrector step.
    pub mehrotra: bool,
    pub step_fraction: f64,
    pub normal_solve: NormalSolve,
    /// Re-solve on the detected active set after convergence and keep it when it satisfies KKT.
    pub polish: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            sigma: 0.1,
            mehrotra: false,
            step_fraction: 0.995,
            normal_solve: NormalSolve::Auto,
            polish: true,
        }
    }
}

/// One row of the iteration log.
#[derive(Clone, Debug, PartialEq)]
pub struct QpLogEntry {
    pub iter: usize,
    pub mu: f64,
    pub r_dual: f64,
    pub r_primal: f64,
    pub step_primal: f64,
    pub step_dual: f64,
}

/// Converged QP solution.
#[derive(Clone, Debug)]
pub struct QpSolution {
    pub p: DVector<f64>,
    /// Multipliers ordered (lower box, upper box, budget).
    pub lam: DVector<f64>,
    pub s: DVector<f64>,
    pub iterations: usize,
    pub mu: f64,
    pub r_dual: f64,
    pub r_primal: f64,
    pub structured: bool,
    /// The active-set re-solve replaced the interior-point answer.
    pub polished: bool,
    pub log: Vec<QpLogEntry>,
}

impl QpSolution {
    /// Writes `iter,mu,r_d,r_p,step_primal,step_dual`.
    pub fn write_log_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "mu", "r_d", "r_p", "step_primal", "step_dual"])?;
        for e in &self.log {
            w.write_record(&[
                e.iter.to_string(),
                e.mu.to_string(),
                e.r_dual.to_string(),
                e.r_primal.to_string(),
                e.step_primal.to_string(),
                e.step_dual.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn boundary_step(x: &DVector<f64>, dx: &DVector<f64>, fraction: f64) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -fraction * v / d)
        .fold(1.0, f64::min)
}

struct Residuals {
    dual: DVector<f64>,
    primal: DVector<f64>,
}

fn residuals(problem: &QpProblem, it: &QpIterate) -> Residuals {
    let dual = problem.hessian.apply(&it.p) + &problem.gradient - problem.apply_a_transpose(&it.lam);
    let primal = problem.constraint_values(&it.p) - &it.s;
    Residuals { dual, primal }
}

/// Solves the QP to `max(|r_d|, |r_p|, mu) <= tol` with every `s_i lam_i <= 10 tol`.
pub fn solve_qp(problem: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    if !(opts.tol > 0.0) || !(opts.sigma > 0.0 && opts.sigma < 1.0) || !(opts.step_fraction > 0.0 && opts.step_fraction < 1.0)
    {
        return Err(invalid("QP options out of range"));
    }
    let n = problem.dim();
    let m = 2 * n + 1;
    let prepared = PreparedHessian::new(&problem.hessian, opts.normal_solve)?;
    let mut it = starting_point(problem)?;
    let mut log = Vec::new();

    for iter in 0..=opts.max_iter {
        let res = residuals(problem, &it);
        it.mu = it.s.dot(&it.lam) / m as f64;
        let (rd, rp) = (res.dual.amax(), res.primal.amax());
        let worst_pair = it.s.component_mul(&it.lam).amax();
        if rd.max(rp).max(it.mu) <= opts.tol && worst_pair <= PAIR_FACTOR * opts.tol {
            let mut sol = QpSolution {
                p: it.p,
                lam: it.lam,
                s: it.s,
                iterations: iter,
                mu: it.mu,
                r_dual: rd,
                r_primal: rp,
                structured: prepared.is_structured(),
                polished: false,
                log,
            };
            if opts.polish {
                polish(problem, &mut sol, opts.tol);
            }
            return Ok(sol);
        }
        if iter == opts.max_iter {
            return Err(Error::NonConvergence {
                iterations: iter,
                detail: format!("r_d {rd:.3e}, r_p {rp:.3e}, mu {:.3e}", it.mu),
            });
        }

        let sf = it.s.map(|x| x.max(SLACK_FLOOR));
        let d = it.lam.component_div(&sf);
        let diag = DVector::from_fn(n, |i, _| d[i] + d[n + i]);
        let normal = prepared.normal_matrix(diag, d[2 * n])?;

        let direction = |target: f64, corr: Option<&DVector<f64>>| {
            let mut rc = -it.s.component_mul(&it.lam);
            rc.add_scalar_mut(target);
            if let Some(c) = corr {
                rc -= c;
            }
            let rc_s = rc.component_div(&sf);
            let v = &rc_s - d.component_mul(&res.primal);
            let rhs = -&res.dual + problem.apply_a_transpose(&v);
            let dp = normal.solve(&rhs);
            let ds = problem.apply_a(&dp) + &res.primal;
            let dl = rc_s - d.component_mul(&ds);
            (dp, ds, dl)
        };

        let (dp, ds, dl) = if opts.mehrotra {
            let (_, ds_a, dl_a) = direction(0.0, None);
            let a = boundary_step(&it.s, &ds_a, 1.0).min(boundary_step(&it.lam, &dl_a, 1.0));
            let mu_aff = (&it.s + &ds_a * a).dot(&(&it.lam + &dl_a * a)) / m as f64;
            let sigma = (mu_aff / it.mu).powi(3).clamp(0.0, 1.0);
            let corr = ds_a.component_mul(&dl_a);
            direction(sigma * it.mu, Some(&corr))
        } else {
            direction(opts.sigma * it.mu, None)
        };

        let step_primal = boundary_step(&it.s, &ds, opts.step_fraction);
        let step_dual = boundary_step(&it.lam, &dl, opts.step_fraction);
        let step = step_primal.min(step_dual);
        it.p += &dp * step;
        it.s += &ds * step;
        it.lam += &dl * step;
        log.push(QpLogEntry {
            iter,
            mu: it.mu,
            r_dual: rd,
            r_primal: rp,
            step_primal,
            step_dual,
        });
    }
    unreachable!("loop returns on its last iteration")
}

/// Solves the equality QP on the active set read off `sol` and adopts the
/// result when it is feasible with correctly signed multipliers.
fn polish(problem: &QpProblem, sol: &mut QpSolution, tol: f64) {
    let n = problem.dim();
    let (s, lam) = (&sol.s, &sol.lam);
    let mut x = DVector::zeros(n);
    let mut state = vec![0u8; n];
    let mut free = Vec::new();
    for i in 0..n {
        let lower = s[i] < lam[i];
        let upper = s[n + i] < lam[n + i];
        if lower && (!upper || s[i] <= s[n + i]) {
            state[i] = 1;
            x[i] = problem.lower[i];
        } else if upper {
            state[i] = 2;
            x[i] = problem.upper[i];
        } else {
            free.push(i);
        }
    }
    let budget = s[2 * n] < lam[2 * n];
    let nf = free.len();
    if nf > POLISH_MAX_FREE {
        return;
    }
    let hx = problem.hessian.apply(&x);
    let dim = nf + usize::from(budget);
    let mut beta = 0.0;
    if dim > 0 {
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, 0), (nf, nf)).copy_from(&problem.hessian.principal_submatrix(&free));
        let mut rhs = DVector::from_fn(dim, |r, _| if r < nf { -problem.gradient[free[r]] - hx[free[r]] } else { 0.0 });
        if budget {
            for r in 0..nf {
                k[(r, nf)] = 1.0;
                k[(nf, r)] = 1.0;
            }
            rhs[nf] = problem.budget_rhs - x.sum();
        }
        let Some(z) = k.lu().solve(&rhs) else {
            return;
        };
        if z.iter().any(|v| !v.is_finite()) {
            return;
        }
        for (r, &i) in free.iter().enumerate() {
            x[i] = z[r];
        }
        if budget {
            beta = z[nf];
        }
    }

    let slack = problem.constraint_values(&x);
    let scale = 1.0 + problem.lower.amax().max(problem.upper.amax());
    if slack.iter().any(|&v| v < -1e-12 * scale) || beta < -tol {
        return;
    }
    let r = problem.hessian.apply(&x) + &problem.gradient + DVector::from_element(n, beta);
    let mut new_lam = DVector::zeros(2 * n + 1);
    for i in 0..n {
        match state[i] {
            1 if r[i] >= -tol => new_lam[i] = r[i].max(0.0),
            2 if r[i] <= tol => new_lam[n + i] = (-r[i]).max(0.0),
            0 if r[i].abs() <= tol => {}
            _ => return,
        }
    }
    new_lam[2 * n] = beta.max(0.0);
    let dual = r - DVector::from_element(n, beta) - problem.apply_a_transpose(&new_lam);
    let new_s = slack.map(|v| v.max(0.0));
    let r_dual = dual.amax();
    if r_dual > sol.r_dual.max(tol) {
        return;
    }
    sol.mu = new_s.dot(&new_lam) / (2 * n + 1) as f64;
    sol.r_primal = slack.iter().fold(0.0f64, |m, &v| m.max(-v));
    sol.r_dual = r_dual;
    sol.p = x;
    sol.s = new_s;
    sol.lam = new_lam;
    sol.polished = true;
}
