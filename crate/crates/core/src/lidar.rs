//! Advection-diffusion forward model for LIDAR beam design.
//!
//! On `[-1, 1]^2` with homogeneous Dirichlet conditions the substitution
//! `u = exp(c.x / 2mu - |c|^2 t / 4mu) v` turns the advection-diffusion
//! equation into the heat equation for `v`, solved by a truncated Fourier
//! series. The resulting kernel maps the initial state `u0` to `u(x, t)`.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::chebyshev::{build_lowrank, LowRankKernel, NodeBudget};
use crate::domains::{build_disk_mesh, build_mesh, dense_kernel_matrix, DiskSensorDomain, Kernel, MeshedDomain, RectDomain, Smoothness};
use crate::error::{invalid, Error, Result};
use crate::objective::{
    clean_weights, dense_value_from_gram, whiten_columns, BayesSetup, Criterion, DenseObjective, ObjectiveFn,
    SurrogateObjective, WeightGroups,
};
use crate::par;
use crate::rounding::RoundingPlan;

/// Physical, discretization and prior settings.
#[derive(Clone, Debug, PartialEq)]
pub struct LidarConfig {
    pub c1: f64,
    pub c2: f64,
    pub mu: f64,
    pub t_final: f64,
    pub n_t: usize,
    pub p: usize,
    pub n_d: usize,
    pub n_r: usize,
    pub n_x: usize,
    pub radius: f64,
    /// Fraction of sectors selected.
    pub r: f64,
    pub alpha: f64,
    pub sigma2_noise: f64,
    pub criterion: Criterion,
    /// Time-constant source modes `(k1, k2, g)` of the transformed field; they shift the data, never `F`.
    pub source_modes: Vec<(usize, usize, f64)>,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            c1: 0.1,
            c2: 0.0,
            mu: 1.0,
            t_final: 1.0,
            n_t: 5,
            p: 3,
            n_d: 30,
            n_r: 30,
            n_x: 30,
            radius: 1.0,
            r: 0.2,
            alpha: 0.01,
            sigma2_noise: 0.01,
            criterion: Criterion::A,
            source_modes: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| invalid(format!("cannot parse {key} = {value:?}")))
}

/// `k1:k2:g` triples separated by commas; empty for none.
fn parse_source_modes(value: &str) -> Result<Vec<(usize, usize, f64)>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let parts: Vec<&str> = t.split(':').collect();
            match parts.as_slice() {
                [a, b, g] => Ok((parse("source_modes", a)?, parse("source_modes", b)?, parse("source_modes", g)?)),
                _ => Err(invalid(format!("source mode {t:?} is not k1:k2:g"))),
            }
        })
        .collect()
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("n_t", self.n_t), ("p", self.p), ("n_d", self.n_d), ("n_r", self.n_r), ("n_x", self.n_x)] {
            if v == 0 {
                return Err(invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(invalid("mu must be positive"));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(invalid("t_final must be positive"));
        }
        if !(self.c1.is_finite() && self.c2.is_finite()) {
            return Err(invalid("velocities must be finite"));
        }
        if !(self.radius > 0.0 && self.radius <= 1.0) {
            return Err(invalid("radius must lie in (0, 1] so the disk fits the square"));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(invalid("r must lie in (0, 1]"));
        }
        if self.budget() < 1.0 {
            return Err(invalid("r * n_d rounds to zero sectors"));
        }
        if self.source_modes.iter().any(|&(a, b, g)| a == 0 || b == 0 || !g.is_finite()) {
            return Err(invalid("source modes start at 1 and need finite coefficients"));
        }
        BayesSetup::new(self.alpha, self.sigma2_noise, self.criterion)?;
        Ok(())
    }

    /// Number of sectors to select, `round(r * n_d)`.
    pub fn budget(&self) -> f64 {
        (self.r * self.n_d as f64).round()
    }

    /// Measurement times `s T / n_t`, `s = 1..n_t`.
    pub fn times(&self) -> Vec<f64> {
        (1..=self.n_t).map(|s| s as f64 * self.t_final / self.n_t as f64).collect()
    }

    pub fn setup(&self) -> Result<BayesSetup> {
        BayesSetup::new(self.alpha, self.sigma2_noise, self.criterion)
    }

    /// Sets one field by name; returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "c1" => self.c1 = parse(key, value)?,
            "c2" => self.c2 = parse(key, value)?,
            "mu" => self.mu = parse(key, value)?,
            "t_final" | "T" => self.t_final = parse(key, value)?,
            "n_t" => self.n_t = parse(key, value)?,
            "p" => self.p = parse(key, value)?,
            "n_d" => self.n_d = parse(key, value)?,
            "n_r" => self.n_r = parse(key, value)?,
            "n_x" => self.n_x = parse(key, value)?,
            "radius" => self.radius = parse(key, value)?,
            "r" => self.r = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "sigma2_noise" => self.sigma2_noise = parse(key, value)?,
            "criterion" => self.criterion = value.parse()?,
            "source_modes" => self.source_modes = parse_source_modes(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses `key = value` lines (`#` starts a comment); every key must be a field.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_key_values(text)? {
            if !cfg.set(&key, &value)? {
                return Err(invalid(format!("unknown key {key:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits flat `key = value` (or `key: value`) text into ordered pairs.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=').or_else(|| line.split_once(':')) else {
            return Err(invalid(format!("line {}: expected key = value", lineno + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(invalid(format!("line {}: empty key", lineno + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Which 1-D basis each axis of a mode uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeBasis {
    SinSin,
    SinCos,
    CosSin,
    CosCos,
}

/// `sin(k pi x / 2)` for even `k`, `cos(k pi x / 2)` for odd `k`.
#[inline]
pub fn basis_1d(k: usize, x: f64) -> f64 {
    let a = k as f64 * PI * x / 2.0;
    if k % 2 == 0 {
        a.sin()
    } else {
        a.cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub k1: usize,
    pub k2: usize,
    /// `mu (k1^2 + k2^2) pi^2 / 4`.
    pub decay: f64,
    pub basis: ModeBasis,
}

/// Dirichlet eigenmodes with `1 <= k1, k2 <= p`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeTable {
    pub p: usize,
    pub modes: Vec<Mode>,
}

impl ModeTable {
    pub fn new(p: usize, mu: f64) -> Self {
        let mut modes = Vec::with_capacity(p * p);
        for k1 in 1..=p {
            for k2 in 1..=p {
                let basis = match (k1 % 2 == 0, k2 % 2 == 0) {
                    (true, true) => ModeBasis::SinSin,
                    (true, false) => ModeBasis::SinCos,
                    (false, true) => ModeBasis::CosSin,
                    (false, false) => ModeBasis::CosCos,
                };
                let decay = mu * (k1 * k1 + k2 * k2) as f64 * PI * PI / 4.0;
                modes.push(Mode { k1, k2, decay, basis });
            }
        }
        Self { p, modes }
    }
}

/// Propagation kernel `f(x, y, t)` mapping `u0(y)` to `u(x, t)`.
pub fn advdiff_kernel(cfg: &LidarConfig) -> Kernel {
    let table = ModeTable::new(cfg.p, cfg.mu);
    let (c1, c2, mu) = (cfg.c1, cfg.c2, cfg.mu);
    Kernel::new(Smoothness::Analytic, move |x, y, t| {
        let t = t.unwrap_or(0.0);
        let pre = (-(c1 * c1 + c2 * c2) * t / (4.0 * mu) + (c1 * x[0] + c2 * x[1]) / (2.0 * mu)
            - (c1 * y[0] + c2 * y[1]) / (2.0 * mu))
            .exp();
        let p = table.p;
        let mut bx = [[0.0; 2]; 16];
        let mut by = [[0.0; 2]; 16];
        let (bx, by): (&mut [[f64; 2]], &mut [[f64; 2]]) = if p <= 16 {
            (&mut bx[..p], &mut by[..p])
        } else {
            return pre * series_slow(&table, x, y, t);
        };
        for k in 1..=p {
            bx[k - 1] = [basis_1d(k, x[0]), basis_1d(k, x[1])];
            by[k - 1] = [basis_1d(k, y[0]), basis_1d(k, y[1])];
        }
        let mut sum = 0.0;
        for m in &table.modes {
            let a = bx[m.k1 - 1][0] * by[m.k1 - 1][0];
            let b = bx[m.k2 - 1][1] * by[m.k2 - 1][1];
            sum += (-m.decay * t).exp() * a * b;
        }
        pre * sum
    })
}

fn series_slow(table: &ModeTable, x: &[f64], y: &[f64], t: f64) -> f64 {
    table
        .modes
        .iter()
        .map(|m| {
            (-m.decay * t).exp()
                * basis_1d(m.k1, x[0])
                * basis_1d(m.k2, x[1])
                * basis_1d(m.k1, y[0])
                * basis_1d(m.k2, y[1])
        })
        .sum()
}

/// Meshes, times and weight groups of one LIDAR instance.
#[derive(Clone, Debug)]
pub struct LidarProblem {
    pub cfg: LidarConfig,
    pub kernel: Kernel,
    pub out_mesh: MeshedDomain,
    pub in_mesh: MeshedDomain,
    pub times: Vec<f64>,
    pub groups: WeightGroups,
    pub sector_angles: Vec<f64>,
}

impl LidarProblem {
    pub fn new(cfg: LidarConfig) -> Result<Self> {
        cfg.validate()?;
        let disk = DiskSensorDomain::new(cfg.n_d, cfg.n_r, cfg.radius)?;
        let out_mesh = build_disk_mesh(&disk)?;
        let square = RectDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0])?;
        let in_mesh = build_mesh(&square, &[cfg.n_x, cfg.n_x])?;
        let times = cfg.times();
        let sectors = out_mesh.sectors().expect("disk mesh carries sectors");
        let labels: Vec<usize> = sectors.iter().flat_map(|&g| std::iter::repeat_n(g, cfg.n_t)).collect();
        let groups = WeightGroups::from_labels(&labels)?;
        let sector_angles = (0..cfg.n_d).map(|k| disk.sector_angle(k)).collect();
        Ok(Self {
            kernel: advdiff_kernel(&cfg),
            cfg,
            out_mesh,
            in_mesh,
            times,
            groups,
            sector_angles,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.out_mesh.len() * self.times.len()
    }

    pub fn n_params(&self) -> usize {
        self.in_mesh.len()
    }

    pub fn n_weights(&self) -> usize {
        self.cfg.n_d
    }

    pub fn budget(&self) -> f64 {
        self.cfg.budget()
    }

    /// Dense `F` with location-major, time-minor rows.
    pub fn dense_f(&self) -> Result<DMatrix<f64>> {
        dense_kernel_matrix(&self.kernel, &self.out_mesh, &self.in_mesh, Some(&self.times))
    }

    /// Exact separable factors `F = A B` with one column of `A` per mode.
    pub fn forward_factors(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let cfg = &self.cfg;
        let table = ModeTable::new(cfg.p, cfg.mu);
        let nt = self.times.len();
        let nm = table.modes.len();
        let cc = cfg.c1 * cfg.c1 + cfg.c2 * cfg.c2;
        let a = DMatrix::from_fn(self.n_rows(), nm, |row, k| {
            let (loc, s) = (row / nt, row % nt);
            let x = self.out_mesh.point(loc);
            let t = self.times[s];
            let m = table.modes[k];
            (-cc * t / (4.0 * cfg.mu) + (cfg.c1 * x[0] + cfg.c2 * x[1]) / (2.0 * cfg.mu) - m.decay * t).exp()
                * basis_1d(m.k1, x[0])
                * basis_1d(m.k2, x[1])
        });
        let dy = self.in_mesh.cell_measure();
        let b = DMatrix::from_fn(nm, self.n_params(), |k, j| {
            let y = self.in_mesh.point(j);
            let m = table.modes[k];
            (-(cfg.c1 * y[0] + cfg.c2 * y[1]) / (2.0 * cfg.mu)).exp() * basis_1d(m.k1, y[0]) * basis_1d(m.k2, y[1]) * dy
        });
        (a, b)
    }

    /// Data offset produced by the time-constant source; `F` is independent of it.
    pub fn source_offset(&self) -> DVector<f64> {
        let cfg = &self.cfg;
        let nt = self.times.len();
        let cc = cfg.c1 * cfg.c1 + cfg.c2 * cfg.c2;
        DVector::from_fn(self.n_rows(), |row, _| {
            let (loc, s) = (row / nt, row % nt);
            let x = self.out_mesh.point(loc);
            let t = self.times[s];
            let pre = (-cc * t / (4.0 * cfg.mu) + (cfg.c1 * x[0] + cfg.c2 * x[1]) / (2.0 * cfg.mu)).exp();
            let v: f64 = cfg
                .source_modes
                .iter()
                .map(|&(k1, k2, g)| {
                    let lam = cfg.mu * (k1 * k1 + k2 * k2) as f64 * PI * PI / 4.0;
                    g * (1.0 - (-lam * t).exp()) / lam * basis_1d(k1, x[0]) * basis_1d(k2, x[1])
                })
                .sum();
            pre * v
        })
    }

    /// `N = ceil(c ln n)` nodes with `n` the input mesh size.
    pub fn node_budget(&self, c: f64) -> Result<NodeBudget> {
        NodeBudget::from_constant(c, self.n_params(), 2, 2)
    }

    pub fn lowrank(&self, budget: &NodeBudget) -> Result<LowRankKernel> {
        build_lowrank(&self.kernel, &self.out_mesh, &self.in_mesh, Some(&self.times), budget)
    }

    pub fn surrogate(&self, budget: &NodeBudget) -> Result<SurrogateObjective> {
        SurrogateObjective::new(&self.lowrank(budget)?, self.cfg.setup()?, Some(self.groups.clone()))
    }

    /// Materialized dense model (small instances).
    pub fn dense(&self, cap: usize) -> Result<DenseObjective> {
        if self.n_params() > cap || self.n_rows() > cap.saturating_mul(cap) {
            return Err(Error::OracleCapExceeded {
                dim: self.n_params(),
                cap,
            });
        }
        DenseObjective::new(self.dense_f()?, self.cfg.setup()?, Some(self.groups.clone()), cap)
    }

    /// Dense value oracle that evaluates `F` one sector at a time.
    pub fn streamed_dense(&self, cap: usize) -> Result<StreamedDenseObjective<'_>> {
        if self.n_params() > cap {
            return Err(Error::OracleCapExceeded {
                dim: self.n_params(),
                cap,
            });
        }
        Ok(StreamedDenseObjective {
            problem: self,
            setup: self.cfg.setup()?,
        })
    }

    pub fn rounding_plan(&self) -> Result<RoundingPlan> {
        RoundingPlan::by_angle(&self.sector_angles)
    }

    /// Rows of sector `g` of the exact `F`, evaluated entry by entry.
    pub fn sector_block(&self, g: usize) -> Result<DMatrix<f64>> {
        let locs = self.groups.members(g);
        let nt = self.times.len();
        let rows = locs.len();
        let m = self.n_params();
        let dy = self.in_mesh.cell_measure();
        let mut blk = DMatrix::zeros(rows, m);
        par::try_for_each_chunk_mut(blk.as_mut_slice(), rows, |j, col| {
            let y = self.in_mesh.point(j);
            for (i, slot) in col.iter_mut().enumerate() {
                let row = locs[i];
                let v = self.kernel.eval(self.out_mesh.point(row / nt), y, Some(self.times[row % nt]));
                if !v.is_finite() {
                    return Err(Error::KernelEvaluation { row, col: j, value: v });
                }
                *slot = v * dy;
            }
            Ok(())
        })?;
        Ok(blk)
    }
}

/// Exact objective over the full `F` without storing it.
pub struct StreamedDenseObjective<'a> {
    problem: &'a LidarProblem,
    setup: BayesSetup,
}

impl StreamedDenseObjective<'_> {
    /// `F^T W F` accumulated over sectors with nonzero weight.
    pub fn gram(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let pr = self.problem;
        if w.len() != pr.n_weights() {
            return Err(invalid(format!("{} weights for {} sectors", w.len(), pr.n_weights())));
        }
        let w = clean_weights(w)?;
        let m = pr.n_params();
        let l = self.setup.whitening_factor();
        let mut gram = DMatrix::zeros(m, m);
        for (g, &wg) in w.iter().enumerate() {
            if wg == 0.0 {
                continue;
            }
            let mut blk = pr.sector_block(g)?;
            if let Some(l) = &l {
                blk = whiten_columns(&blk.transpose(), l).transpose();
            }
            gram.gemm_tr(wg, &blk, &blk, 1.0);
        }
        Ok(gram)
    }
}

impl ObjectiveFn for StreamedDenseObjective<'_> {
    fn n_weights(&self) -> usize {
        self.problem.n_weights()
    }

    fn value(&self, w: &[f64]) -> Result<f64> {
        dense_value_from_gram(&self.gram(w)?, &self.setup)
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let pk = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = pk;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Quadrature order used for Fourier coefficients of truncation `p`.
pub fn default_quadrature_order(p: usize) -> usize {
    (2 * p + 4).max(40)
}

/// `c[k1-1][k2-1] = int u0(x, y) phi_k1(x) phi_k2(y)` over `[-1, 1]^2`.
pub fn fourier_coefficients_u0<F: Fn(f64, f64) -> f64>(u0: F, p: usize, order: usize) -> Result<DMatrix<f64>> {
    if p == 0 || order == 0 {
        return Err(invalid("p and the quadrature order must be positive"));
    }
    let (x, w) = gauss_legendre(order);
    let phi = DMatrix::from_fn(p, order, |k, i| basis_1d(k + 1, x[i]) * w[i]);
    let u = DMatrix::from_fn(order, order, |i, j| u0(x[i], x[j]));
    Ok(&phi * u * phi.transpose())
}

/// Evaluates the truncated series at `points`.
pub fn reconstruct_u0(coeffs: &DMatrix<f64>, points: &[[f64; 2]]) -> Vec<f64> {
    let p = coeffs.nrows();
    points
        .iter()
        .map(|pt| {
            let bx: Vec<f64> = (1..=p).map(|k| basis_1d(k, pt[0])).collect();
            let by: Vec<f64> = (1..=p).map(|k| basis_1d(k, pt[1])).collect();
            let mut s = 0.0;
            for a in 0..p {
                for b in 0..coeffs.ncols() {
                    s += coeffs[(a, b)] * bx[a] * by[b];
                }
            }
            s
        })
        .collect()
}

/// Relative discrete L2 error of the truncated reconstruction of `u0` on an `n x n` midpoint grid.
pub fn reconstruction_error<F: Fn(f64, f64) -> f64>(u0: F, p: usize, grid: usize) -> Result<f64> {
    let coeffs = fourier_coefficients_u0(&u0, p, default_quadrature_order(p))?;
    let h = 2.0 / grid as f64;
    let pts: Vec<[f64; 2]> = (0..grid * grid)
        .map(|k| [-1.0 + h * ((k / grid) as f64 + 0.5), -1.0 + h * ((k % grid) as f64 + 0.5)])
        .collect();
    let rec = reconstruct_u0(&coeffs, &pts);
    let (mut num, mut den) = (0.0, 0.0);
    for (pt, r) in pts.iter().zip(&rec) {
        let u = u0(pt[0], pt[1]);
        num += (u - r) * (u - r);
        den += u * u;
    }
    if den == 0.0 {
        return Err(invalid("u0 vanishes on the evaluation grid"));
    }
    Ok((num / den).sqrt())
}
