//! Chebyshev nodes, Lagrange coefficient vectors and the low-rank kernel
//! surrogate `F_s = C_out^T F_nodes C_in`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;

use crate::domains::{Kernel, MeshedDomain, RectDomain};
use crate::error::{invalid, Error, Result};
use crate::par;

/// `N` Chebyshev extreme points `cos(pi i / (N - 1))`, `i = 0..N`, in
/// descending order, plus the barycentric-free Lagrange denominators.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebyshevGrid1D {
    nodes: Vec<f64>,
    denom: Vec<f64>,
}

impl ChebyshevGrid1D {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("Chebyshev grid needs at least 2 nodes, got {n}")));
        }
        // cos(pi i / (N-1)) written as a sine of a symmetric argument so that
        // mirrored nodes are exact negatives and the middle node is exactly 0
        let m = (n - 1) as f64;
        let nodes: Vec<f64> = (0..n)
            .map(|i| (PI * (m - 2.0 * i as f64) / (2.0 * m)).sin())
            .collect();
        let denom = (0..n)
            .map(|p| {
                (0..n)
                    .filter(|&k| k != p)
                    .map(|k| nodes[p] - nodes[k])
                    .product()
            })
            .collect();
        Ok(Self { nodes, denom })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Lagrange basis values `l_p(x)` written into `out`.
    pub fn coefficients_into(&self, x: f64, out: &mut [f64]) {
        let n = self.nodes.len();
        debug_assert_eq!(out.len(), n);
        for p in 0..n {
            let mut num = 1.0;
            for k in 0..n {
                if k != p {
                    num *= x - self.nodes[k];
                }
            }
            out[p] = num / self.denom[p];
        }
    }
}

/// Convenience wrapper for [`ChebyshevGrid1D::new`].
pub fn chebyshev_nodes(n: usize) -> Result<ChebyshevGrid1D> {
    ChebyshevGrid1D::new(n)
}

/// Lagrange coefficient vector `c(x)` on a 1-D grid.
pub fn lagrange_coefficients(grid: &ChebyshevGrid1D, x: f64) -> Vec<f64> {
    let mut c = vec![0.0; grid.len()];
    grid.coefficients_into(x, &mut c);
    c
}

/// Tensor-product coefficients; index `k = k1 * N2 + k2` in two dimensions.
pub fn tensor_coefficients(grids: &[ChebyshevGrid1D], point: &[f64]) -> Result<Vec<f64>> {
    if grids.len() != point.len() || grids.is_empty() {
        return Err(invalid(format!(
            "point has {} coordinates but {} grids were given",
            point.len(),
            grids.len()
        )));
    }
    let mut out = vec![1.0];
    for (g, &x) in grids.iter().zip(point) {
        let c = lagrange_coefficients(g, x);
        out = out.iter().flat_map(|a| c.iter().map(move |b| a * b)).collect();
    }
    Ok(out)
}

/// Per-axis affine map between `[a, b]` and `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl AffineMap {
    pub fn new(rect: &RectDomain) -> Self {
        Self {
            lower: rect.lower().to_vec(),
            upper: rect.upper().to_vec(),
        }
    }

    pub fn to_reference(&self, axis: usize, x: f64) -> f64 {
        2.0 * (x - self.lower[axis]) / (self.upper[axis] - self.lower[axis]) - 1.0
    }

    pub fn from_reference(&self, axis: usize, s: f64) -> f64 {
        self.lower[axis] + 0.5 * (s + 1.0) * (self.upper[axis] - self.lower[axis])
    }
}

/// Number of interpolation nodes per axis for each side of the kernel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeBudget {
    pub out_each: Vec<usize>,
    pub in_each: Vec<usize>,
}

impl NodeBudget {
    /// Total target `N = ceil(c ln n)`; each axis gets the smallest
    /// `N_each >= 2` with `N_each^dim >= N`.
    pub fn from_constant(c: f64, n: usize, out_dim: usize, in_dim: usize) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) || n < 2 {
            return Err(invalid(format!("node constant {c} with mesh size {n} is not usable")));
        }
        let total = (c * (n as f64).ln()).ceil().max(1.0) as usize;
        Ok(Self {
            out_each: vec![per_axis(total, out_dim); out_dim],
            in_each: vec![per_axis(total, in_dim); in_dim],
        })
    }

    pub fn uniform(n_each: usize, out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_each: vec![n_each; out_dim],
            in_each: vec![n_each; in_dim],
        }
    }
}

fn per_axis(total: usize, dim: usize) -> usize {
    let mut k = 2usize;
    while k.pow(dim as u32) < total {
        k += 1;
    }
    k
}

/// Coefficient matrix of a mesh: column `j` is the tensor coefficient vector
/// of mesh point `j` after mapping the bounding box to `[-1, 1]^d`.
#[derive(Clone, Debug)]
pub struct CoefficientMatrix {
    pub values: DMatrix<f64>,
    pub grids: Vec<ChebyshevGrid1D>,
    pub map: AffineMap,
}

impl CoefficientMatrix {
    pub fn build(mesh: &MeshedDomain, each: &[usize]) -> Result<Self> {
        if each.len() != mesh.dim() {
            return Err(invalid(format!(
                "node counts cover {} axes but mesh has {}",
                each.len(),
                mesh.dim()
            )));
        }
        let grids = each
            .iter()
            .map(|&k| ChebyshevGrid1D::new(k))
            .collect::<Result<Vec<_>>>()?;
        let map = AffineMap::new(&mesh.domain().bounding_box());
        let nn: usize = each.iter().product();
        let mut values = DMatrix::zeros(nn, mesh.len());
        par::for_each_chunk_mut(values.as_mut_slice(), nn, |j, col| {
            tensor_into(&grids, &map, mesh.point(j), col);
        });
        Ok(Self { values, grids, map })
    }

    /// Physical coordinates of tensor node `k`.
    pub fn node_point(&self, k: usize) -> Vec<f64> {
        let mut idx = vec![0; self.grids.len()];
        let mut rem = k;
        for (slot, g) in idx.iter_mut().zip(&self.grids).rev() {
            *slot = rem % g.len();
            rem /= g.len();
        }
        idx.iter()
            .enumerate()
            .map(|(a, &i)| self.map.from_reference(a, self.grids[a].nodes()[i]))
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["node", "point", "value"])?;
        for j in 0..self.values.ncols() {
            for k in 0..self.values.nrows() {
                wtr.write_record(&[k.to_string(), j.to_string(), self.values[(k, j)].to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn tensor_into(grids: &[ChebyshevGrid1D], map: &AffineMap, point: &[f64], out: &mut [f64]) {
    match grids.len() {
        1 => grids[0].coefficients_into(map.to_reference(0, point[0]), out),
        _ => {
            let mut a = vec![0.0; grids[0].len()];
            let mut b = vec![0.0; grids[1].len()];
            grids[0].coefficients_into(map.to_reference(0, point[0]), &mut a);
            grids[1].coefficients_into(map.to_reference(1, point[1]), &mut b);
            for (k1, ca) in a.iter().enumerate() {
                for (k2, cb) in b.iter().enumerate() {
                    out[k1 * b.len() + k2] = ca * cb;
                }
            }
        }
    }
}

/// Low-rank surrogate of the discretized kernel.
///
/// With `n_t` measurement times the output node set is (spatial node, time)
/// with index `p * n_t + s`, mirroring the row layout of the dense matrix;
/// time is sampled exactly rather than interpolated.
#[derive(Clone, Debug)]
pub struct LowRankKernel {
    /// `N_out x n_rows`.
    pub c_out: DMatrix<f64>,
    /// `N_out x N_in`, kernel values at node pairs times the input cell measure.
    pub node_values: DMatrix<f64>,
    /// `N_in x m`.
    pub c_in: DMatrix<f64>,
    n_times: usize,
}

impl LowRankKernel {
    /// Assembles the surrogate from explicit pieces (mostly for tests).
    pub fn from_parts(c_out: DMatrix<f64>, node_values: DMatrix<f64>, c_in: DMatrix<f64>) -> Result<Self> {
        if c_out.nrows() != node_values.nrows() || node_values.ncols() != c_in.nrows() {
            return Err(invalid(format!(
                "incompatible factor shapes {:?} x {:?} x {:?}",
                c_out.shape(),
                node_values.shape(),
                c_in.shape()
            )));
        }
        Ok(Self {
            c_out,
            node_values,
            c_in,
            n_times: 1,
        })
    }

    /// Declares that rows are grouped into `n_times` consecutive time samples per location.
    pub fn with_times(mut self, n_times: usize) -> Result<Self> {
        if n_times == 0 || self.n_rows() % n_times != 0 {
            return Err(invalid(format!("{} rows do not split into {n_times} times", self.n_rows())));
        }
        self.n_times = n_times;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.c_out.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.c_in.ncols()
    }

    pub fn n_out_nodes(&self) -> usize {
        self.c_out.nrows()
    }

    pub fn n_in_nodes(&self) -> usize {
        self.c_in.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// `C_out^T F_nodes C_in` as a dense matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.c_out.tr_mul(&(&self.node_values * &self.c_in))
    }
}

/// Builds the Chebyshev surrogate of `f(x, y[, t]) * dy` on the given meshes.
pub fn build_lowrank(
    kernel: &Kernel,
    out_mesh: &MeshedDomain,
    in_mesh: &MeshedDomain,
    times: Option<&[f64]>,
    budget: &NodeBudget,
) -> Result<LowRankKernel> {
    if budget.out_each.iter().chain(&budget.in_each).any(|&k| k < 2) {
        return Err(invalid("every axis needs at least 2 interpolation nodes"));
    }
    let nt = times.map_or(1, <[f64]>::len);
    if nt == 0 {
        return Err(invalid("time list is empty"));
    }
    let cx = CoefficientMatrix::build(out_mesh, &budget.out_each)?;
    let cy = CoefficientMatrix::build(in_mesh, &budget.in_each)?;
    let (nx, ny) = (cx.node_count(), cy.node_count());

    let c_out = if nt == 1 {
        cx.values.clone()
    } else {
        let rows = out_mesh.len() * nt;
        let mut c = DMatrix::zeros(nx * nt, rows);
        for loc in 0..out_mesh.len() {
            for s in 0..nt {
                for p in 0..nx {
                    c[(p * nt + s, loc * nt + s)] = cx.values[(p, loc)];
                }
            }
        }
        c
    };

    let out_nodes: Vec<Vec<f64>> = (0..nx).map(|p| cx.node_point(p)).collect();
    let in_nodes: Vec<Vec<f64>> = (0..ny).map(|q| cy.node_point(q)).collect();
    let dy = in_mesh.cell_measure();
    let mut node_values = DMatrix::zeros(nx * nt, ny);
    let rows = nx * nt;
    par::try_for_each_chunk_mut(node_values.as_mut_slice(), rows, |q, col| {
        for (i, slot) in col.iter_mut().enumerate() {
            let (p, s) = (i / nt, i % nt);
            let v = kernel.eval(&out_nodes[p], &in_nodes[q], times.map(|ts| ts[s]));
            if !v.is_finite() {
                return Err(Error::KernelEvaluation { row: i, col: q, value: v });
            }
            *slot = v * dy;
        }
        Ok(())
    })?;

    Ok(LowRankKernel {
        c_out,
        node_values,
        c_in: cy.values,
        n_times: nt,
    })
}

/// Largest `|F - F_s| / dy` over all entries.
pub fn max_scaled_error(dense: &DMatrix<f64>, lowrank: &LowRankKernel, dy: f64) -> f64 {
    let fs = lowrank.to_dense();
    dense
        .iter()
        .zip(fs.iter())
        .map(|(a, b)| (a - b).abs() / dy)
        .fold(0.0, f64::max)
}

/// Sampled lower estimate of the Lebesgue constant `max_x sum_p |l_p(x)|`
/// over `sample_count` equispaced points of `[-1, 1]`.
pub fn lebesgue_constant(grid: &ChebyshevGrid1D, sample_count: usize) -> Result<f64> {
    if sample_count < 1000 {
        return Err(invalid("Lebesgue estimate needs at least 1000 samples"));
    }
    let vals = par::map_indices(sample_count, |i| {
        let x = -1.0 + 2.0 * i as f64 / (sample_count - 1) as f64;
        let mut c = vec![0.0; grid.len()];
        grid.coefficients_into(x, &mut c);
        c.iter().map(|v| v.abs()).sum::<f64>()
    });
    Ok(vals.into_iter().fold(0.0, f64::max))
}
