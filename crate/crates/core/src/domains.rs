//! Input/output domains, their midpoint meshes and kernel callbacks.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::par;

/// Axis-aligned box in one or two dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct RectDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl RectDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() > 2 || lower.len() != upper.len() {
            return Err(invalid(format!(
                "rectangle needs 1 or 2 axes with matching bounds, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (axis, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid(format!("axis {axis}: need lower < upper, got [{lo}, {hi}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[-1, 1]^dim`.
    pub fn unit(dim: usize) -> Result<Self> {
        Self::new(vec![-1.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn measure(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).product()
    }
}

/// Unit-disk style sensing geometry: `n_d` equal sectors, `n_r` radial
/// samples along the beam through each sector's center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiskSensorDomain {
    pub n_d: usize,
    pub n_r: usize,
    pub radius: f64,
}

impl DiskSensorDomain {
    pub fn new(n_d: usize, n_r: usize, radius: f64) -> Result<Self> {
        if n_d == 0 || n_r == 0 {
            return Err(invalid("disk mesh needs n_d >= 1 and n_r >= 1"));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(invalid(format!("disk radius must be positive, got {radius}")));
        }
        Ok(Self { n_d, n_r, radius })
    }

    /// Beam angle of sector `k` (0-based).
    pub fn sector_angle(&self, k: usize) -> f64 {
        2.0 * PI * (k as f64 + 0.5) / self.n_d as f64
    }

    /// Square `[-radius, radius]^2` enclosing the disk.
    pub fn bounding_box(&self) -> RectDomain {
        RectDomain {
            lower: vec![-self.radius; 2],
            upper: vec![self.radius; 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Rect(RectDomain),
    Disk(DiskSensorDomain),
}

impl Domain {
    /// Rectangle used for interpolation (the disk embeds in its bounding square).
    pub fn bounding_box(&self) -> RectDomain {
        match self {
            Domain::Rect(r) => r.clone(),
            Domain::Disk(d) => d.bounding_box(),
        }
    }
}

/// Ordered mesh points of a domain with their quadrature weight.
///
/// Rectangular meshes are linearized row-major over axes:
/// `k = i * counts[1] + j` for the point `(x_i, x_j)`. Disk meshes are
/// linearized sector-major: `k = sector * n_r + radial`.
#[derive(Clone, Debug)]
pub struct MeshedDomain {
    domain: Domain,
    dim: usize,
    counts: Vec<usize>,
    coords: Vec<f64>,
    cell_measure: f64,
    sectors: Option<Vec<usize>>,
    angles: Option<Vec<f64>>,
}

impl MeshedDomain {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn cell_measure(&self) -> f64 {
        self.cell_measure
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }

    /// Sector index of each point (disk meshes only).
    pub fn sectors(&self) -> Option<&[usize]> {
        self.sectors.as_deref()
    }

    /// Polar angle of each point (disk meshes only).
    pub fn angles(&self) -> Option<&[f64]> {
        self.angles.as_deref()
    }

    /// Linear index of a per-axis multi-index.
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |k, (&i, &n)| k * n + i)
    }

    /// Inverse of [`linear_index`](Self::linear_index).
    pub fn multi_index(&self, mut k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.counts.len()];
        for (slot, &n) in idx.iter_mut().zip(&self.counts).rev() {
            *slot = k % n;
            k /= n;
        }
        idx
    }

    /// Writes `index, x0[, x1], value` rows where value is the cell measure.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_string()];
        header.extend((0..self.dim).map(|a| format!("x{a}")));
        if self.sectors.is_some() {
            header.push("sector".into());
        }
        header.push("value".into());
        wtr.write_record(&header)?;
        for (k, p) in self.points().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(p.iter().map(|v| v.to_string()));
            if let Some(s) = &self.sectors {
                rec.push(s[k].to_string());
            }
            rec.push(self.cell_measure.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Equally spaced cell-midpoint mesh of a rectangle.
pub fn build_mesh(domain: &RectDomain, counts: &[usize]) -> Result<MeshedDomain> {
    let dim = domain.dim();
    if counts.len() != dim {
        return Err(invalid(format!("expected {dim} counts, got {}", counts.len())));
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(invalid("mesh counts must be >= 1 on every axis"));
    }
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|a| {
            let (lo, hi, n) = (domain.lower[a], domain.upper[a], counts[a]);
            let h = (hi - lo) / n as f64;
            (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect()
        })
        .collect();
    let total: usize = counts.iter().product();
    let mut coords = Vec::with_capacity(total * dim);
    match dim {
        1 => coords.extend_from_slice(&axes[0]),
        _ => {
            for &x in &axes[0] {
                for &y in &axes[1] {
                    coords.push(x);
                    coords.push(y);
                }
            }
        }
    }
    Ok(MeshedDomain {
        domain: Domain::Rect(domain.clone()),
        dim,
        counts: counts.to_vec(),
        coords,
        cell_measure: domain.measure() / total as f64,
        sectors: None,
        angles: None,
    })
}

/// Beam mesh of a disk: sector `k` contributes `n_r` points at radial
/// midpoints along the ray at the sector's center angle.
pub fn build_disk_mesh(cfg: &DiskSensorDomain) -> Result<MeshedDomain> {
    let cfg = DiskSensorDomain::new(cfg.n_d, cfg.n_r, cfg.radius)?;
    let n = cfg.n_d * cfg.n_r;
    let mut coords = Vec::with_capacity(2 * n);
    let mut sectors = Vec::with_capacity(n);
    let mut angles = Vec::with_capacity(n);
    for k in 0..cfg.n_d {
        let theta = cfg.sector_angle(k);
        let (s, c) = theta.sin_cos();
        for j in 0..cfg.n_r {
            let r = (j as f64 + 0.5) * cfg.radius / cfg.n_r as f64;
            coords.push(r * c);
            coords.push(r * s);
            sectors.push(k);
            angles.push(theta);
        }
    }
    Ok(MeshedDomain {
        domain: Domain::Disk(cfg),
        dim: 2,
        counts: vec![cfg.n_d, cfg.n_r],
        coords,
        cell_measure: PI * cfg.radius * cfg.radius / n as f64,
        sectors: Some(sectors),
        angles: Some(angles),
    })
}

/// Regularity class of a kernel, used only for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothness {
    Analytic,
    Ck(u32),
    Unknown,
}

type KernelFn = dyn Fn(&[f64], &[f64], Option<f64>) -> f64 + Send + Sync;

/// Deterministic kernel `f(x, y, t)`; `x` is an output point, `y` an input
/// point and `t` an optional measurement time.
#[derive(Clone)]
pub struct Kernel {
    eval: Arc<KernelFn>,
    smoothness: Smoothness,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("smoothness", &self.smoothness)
            .finish_non_exhaustive()
    }
}

impl Kernel {
    pub fn new<F>(smoothness: Smoothness, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], Option<f64>) -> f64 + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(f),
            smoothness,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64], t: Option<f64>) -> f64 {
        (self.eval)(x, y, t)
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// `exp(-|x - y|^2)`.
    pub fn gaussian() -> Self {
        Self::new(Smoothness::Analytic, |x, y, _| {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2).exp()
        })
    }

    /// `exp(x . y)`.
    pub fn exp_dot() -> Self {
        Self::new(Smoothness::Analytic, |x, y, _| {
            x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>().exp()
        })
    }

    /// Wendland C2 function `(1 - r)_+^4 (4r + 1)` with `r = |x - y| / 1.5`.
    /// Its third derivative has bounded variation but jumps.
    pub fn wendland_c2() -> Self {
        Self::new(Smoothness::Ck(2), |x, y, _| {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            let r = d2.sqrt() / 1.5;
            if r >= 1.0 {
                0.0
            } else {
                (1.0 - r).powi(4) * (4.0 * r + 1.0)
            }
        })
    }
}

/// Dense discretization `F(i, j) = f(x_i, y_j[, t_s]) * dy`.
///
/// With `times`, row `i = loc * n_t + s` holds location `loc` at time `s`.
pub fn dense_kernel_matrix(
    kernel: &Kernel,
    out_mesh: &MeshedDomain,
    in_mesh: &MeshedDomain,
    times: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    if out_mesh.is_empty() || in_mesh.is_empty() {
        return Err(invalid("kernel matrix needs nonempty meshes"));
    }
    let nt = times.map_or(1, <[f64]>::len);
    if nt == 0 {
        return Err(invalid("time list is empty"));
    }
    let rows = out_mesh.len() * nt;
    let cols = in_mesh.len();
    let dy = in_mesh.cell_measure();
    let mut f = DMatrix::zeros(rows, cols);
    par::try_for_each_chunk_mut(f.as_mut_slice(), rows, |j, col| {
        let y = in_mesh.point(j);
        for (i, slot) in col.iter_mut().enumerate() {
            let (loc, s) = (i / nt, i % nt);
            let t = times.map(|ts| ts[s]);
            let v = kernel.eval(out_mesh.point(loc), y, t);
            if !v.is_finite() {
                return Err(Error::KernelEvaluation { row: i, col: j, value: v });
            }
            *slot = v * dy;
        }
        Ok(())
    })?;
    Ok(f)
}

/// Writes a matrix as `row, col, value` triples.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["row", "col", "value"])?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            wtr.write_record(&[i.to_string(), j.to_string(), m[(i, j)].to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
