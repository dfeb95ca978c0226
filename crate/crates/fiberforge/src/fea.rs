//! Voxel-grid orthotropic finite element analysis.
//!
//! Eight-node hexahedra on a regular grid, 2x2x2 Gauss quadrature, one
//! rotated constitutive matrix per element. The equilibrium system is solved
//! either by a banded Cholesky factorization (exact, reused for adjoint
//! backsolves) or by Jacobi-preconditioned conjugate gradients with warm
//! starts. Stress is recovered at element centers in the material frame.

use nalgebra::{Matrix6, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type ElementMatrix = SMatrix<f64, 24, 24>;
pub type BMatrix = SMatrix<f64, 6, 24>;

/// Regular voxel discretization of the design domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    /// Element counts per axis.
    pub dims: [usize; 3],
    /// Cubic element edge length (mm).
    pub h: f64,
    /// Minimum corner of the grid (mm).
    pub origin: [f64; 3],
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], h: f64, origin: [f64; 3]) -> Self {
        Self { dims, h, origin }
    }

    pub fn element_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn node_dims(&self) -> [usize; 3] {
        [self.dims[0] + 1, self.dims[1] + 1, self.dims[2] + 1]
    }

    pub fn node_count(&self) -> usize {
        let nd = self.node_dims();
        nd[0] * nd[1] * nd[2]
    }

    pub fn dof_count(&self) -> usize {
        3 * self.node_count()
    }

    /// Nodes are ordered x-slowest so the matrix bandwidth spans one x-slab.
    pub fn node_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let nd = self.node_dims();
        (ix * nd[1] + iy) * nd[2] + iz
    }

    pub fn node_position(&self, ix: usize, iy: usize, iz: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + ix as f64 * self.h,
            self.origin[1] + iy as f64 * self.h,
            self.origin[2] + iz as f64 * self.h,
        )
    }

    pub fn element_index(&self, ex: usize, ey: usize, ez: usize) -> usize {
        (ex * self.dims[1] + ey) * self.dims[2] + ez
    }

    pub fn element_coords(&self, e: usize) -> (usize, usize, usize) {
        let ez = e % self.dims[2];
        let ey = (e / self.dims[2]) % self.dims[1];
        let ex = e / (self.dims[1] * self.dims[2]);
        (ex, ey, ez)
    }

    pub fn element_center(&self, e: usize) -> Vector3<f64> {
        let (ex, ey, ez) = self.element_coords(e);
        Vector3::new(
            self.origin[0] + (ex as f64 + 0.5) * self.h,
            self.origin[1] + (ey as f64 + 0.5) * self.h,
            self.origin[2] + (ez as f64 + 0.5) * self.h,
        )
    }

    pub fn element_centers(&self) -> Vec<Vector3<f64>> {
        (0..self.element_count()).map(|e| self.element_center(e)).collect()
    }

    pub fn element_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    /// The 8 node indices of an element, in the local corner order
    /// (0,0,0),(1,0,0),(1,1,0),(0,1,0),(0,0,1),(1,0,1),(1,1,1),(0,1,1).
    pub fn element_nodes(&self, e: usize) -> [usize; 8] {
        let (ex, ey, ez) = self.element_coords(e);
        [
            self.node_index(ex, ey, ez),
            self.node_index(ex + 1, ey, ez),
            self.node_index(ex + 1, ey + 1, ez),
            self.node_index(ex, ey + 1, ez),
            self.node_index(ex, ey, ez + 1),
            self.node_index(ex + 1, ey, ez + 1),
            self.node_index(ex + 1, ey + 1, ez + 1),
            self.node_index(ex, ey + 1, ez + 1),
        ]
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 24] {
        let nodes = self.element_nodes(e);
        let mut dofs = [0usize; 24];
        for (i, &n) in nodes.iter().enumerate() {
            dofs[3 * i] = 3 * n;
            dofs[3 * i + 1] = 3 * n + 1;
            dofs[3 * i + 2] = 3 * n + 2;
        }
        dofs
    }

    /// Maximum |dof_i - dof_j| within any element.
    pub fn bandwidth(&self) -> usize {
        let nd = self.node_dims();
        (nd[1] * nd[2] + nd[2] + 1) * 3 + 2
    }
}

const CORNERS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Shape-function gradients of the trilinear hex at a reference point,
/// already scaled to physical coordinates for edge length `h`.
fn shape_gradients(xi: [f64; 3], h: f64) -> [[f64; 3]; 8] {
    let mut out = [[0.0; 3]; 8];
    let s = 2.0 / h; // d(xi)/d(x)
    for (i, c) in CORNERS.iter().enumerate() {
        out[i] = [
            0.125 * c[0] * (1.0 + c[1] * xi[1]) * (1.0 + c[2] * xi[2]) * s,
            0.125 * c[1] * (1.0 + c[0] * xi[0]) * (1.0 + c[2] * xi[2]) * s,
            0.125 * c[2] * (1.0 + c[0] * xi[0]) * (1.0 + c[1] * xi[1]) * s,
        ];
    }
    out
}

/// Strain-displacement matrix (engineering Voigt [xx,yy,zz,xy,yz,zx]).
fn b_matrix(xi: [f64; 3], h: f64) -> BMatrix {
    let grads = shape_gradients(xi, h);
    let mut b = BMatrix::zeros();
    for (i, g) in grads.iter().enumerate() {
        let (gx, gy, gz) = (g[0], g[1], g[2]);
        let c = 3 * i;
        b[(0, c)] = gx;
        b[(1, c + 1)] = gy;
        b[(2, c + 2)] = gz;
        b[(3, c)] = gy;
        b[(3, c + 1)] = gx;
        b[(4, c + 1)] = gz;
        b[(4, c + 2)] = gy;
        b[(5, c)] = gz;
        b[(5, c + 2)] = gx;
    }
    b
}

/// Precomputed quadrature data shared by every element of a grid.
#[derive(Debug, Clone)]
pub struct Hex8Basis {
    pub b_gauss: Vec<BMatrix>,
    pub b_center: BMatrix,
    /// Integration weight x Jacobian determinant per Gauss point.
    pub w_detj: f64,
    pub h: f64,
}

impl Hex8Basis {
    pub fn new(h: f64) -> Self {
        let g = 1.0 / 3.0f64.sqrt();
        let mut b_gauss = Vec::with_capacity(8);
        for c in CORNERS {
            b_gauss.push(b_matrix([c[0] * g, c[1] * g, c[2] * g], h));
        }
        Self {
            b_gauss,
            b_center: b_matrix([0.0, 0.0, 0.0], h),
            w_detj: (h / 2.0) * (h / 2.0) * (h / 2.0),
            h,
        }
    }

    /// Element stiffness for a design-frame constitutive matrix.
    pub fn element_stiffness(&self, c: &Matrix6<f64>) -> ElementMatrix {
        let mut k = ElementMatrix::zeros();
        for b in &self.b_gauss {
            let cb = c * b;
            k.gemm_tr(self.w_detj, b, &cb, 1.0);
        }
        k
    }

    /// Cotangent of the constitutive matrix from the adjoint contraction
    /// `lambda^T K_e(dC) u = <dC, sum_gp w (B lambda)(B u)^T>`.
    pub fn stiffness_pullback(&self, lambda_e: &SMatrix<f64, 24, 1>, u_e: &SMatrix<f64, 24, 1>) -> Matrix6<f64> {
        let mut cbar = Matrix6::zeros();
        for b in &self.b_gauss {
            let bl = b * lambda_e;
            let bu = b * u_e;
            cbar.gemm(self.w_detj, &bl, &bu.transpose(), 1.0);
        }
        cbar
    }

    /// Center strain in engineering Voigt form.
    pub fn center_strain(&self, u_e: &SMatrix<f64, 24, 1>) -> Vector6<f64> {
        self.b_center * u_e
    }
}

/// Fixed supports and applied nodal loads over a grid.
#[derive(Debug, Clone)]
pub struct BoundaryConditions {
    /// Per-dof fixed flag.
    pub fixed: Vec<bool>,
    /// Dense nodal force vector (kN).
    pub force: Vec<f64>,
}

impl BoundaryConditions {
    pub fn new(ndof: usize) -> Self {
        Self {
            fixed: vec![false; ndof],
            force: vec![0.0; ndof],
        }
    }

    pub fn fix(&mut self, dof: usize) {
        self.fixed[dof] = true;
    }

    pub fn load(&mut self, dof: usize, value: f64) {
        self.force[dof] += value;
    }

    pub fn fixed_count(&self) -> usize {
        self.fixed.iter().filter(|&&f| f).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.fixed_count() < 6 {
            return Err(Error::Config(
                "boundary conditions must fix at least 6 dofs".into(),
            ));
        }
        for (d, (&fx, &f)) in self.fixed.iter().zip(&self.force).enumerate() {
            if fx && f != 0.0 {
                return Err(Error::Config(format!(
                    "dof {d} is both fixed and loaded"
                )));
            }
        }
        Ok(())
    }

    pub fn force_norm(&self) -> f64 {
        self.force.iter().map(|f| f * f).sum::<f64>().sqrt()
    }
}

/// Symmetric banded matrix in lower-band row storage, laid out so the
/// factorization's inner dot products walk both rows forward.
pub struct BandedMatrix {
    pub n: usize,
    pub bw: usize,
    /// `data[i * (bw + 1) + bw - (i - j)]` holds `A[i][j]` for
    /// `i - bw <= j <= i`; the diagonal sits at offset `bw`.
    pub data: Vec<f64>,
    /// Row-contiguous copy of `L^T` built after factorization so the
    /// backward substitution streams instead of striding across rows.
    lt_data: Vec<f64>,
    /// Single-precision copies for preconditioner application; halves the
    /// memory traffic of the triangular solves without touching the solve
    /// tolerance (the preconditioner only shapes the search directions).
    l_f32: Vec<f32>,
    lt_f32: Vec<f32>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
            lt_data: Vec::new(),
            l_f32: Vec::new(),
            lt_f32: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i - j <= self.bw);
        self.data[i * (self.bw + 1) + self.bw - (i - j)] += v;
    }

    #[inline]
    pub fn set_diag(&mut self, i: usize, v: f64) {
        self.data[i * (self.bw + 1) + self.bw] = v;
    }

    #[inline]
    fn diag(&self, i: usize) -> f64 {
        self.data[i * (self.bw + 1) + self.bw]
    }

    /// In-place banded Cholesky. Fails on a non-positive pivot, which here
    /// means an insufficiently constrained system.
    pub fn cholesky_in_place(&mut self) -> Result<()> {
        let bw = self.bw;
        let stride = bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo;
                let len = j - klo;
                let mut sum = self.data[i * stride + bw - (i - j)];
                if len > 0 {
                    // L[i][k] at ri[(bw + k) - i], L[j][k] at rj[(bw + k) - j];
                    // both advance forward as k does.
                    let acc = if j == i {
                        crate::simd::dot_self(&self.data[i * stride + (bw + klo) - i..i * stride + bw])
                    } else {
                        let (head, tail) = self.data.split_at(i * stride);
                        let ri = &tail[(bw + klo) - i..(bw + j) - i];
                        let rj = &head[j * stride + (bw + klo) - j..j * stride + bw];
                        crate::simd::dot(ri, rj)
                    };
                    sum -= acc;
                }
                if j < i {
                    let ljj = self.data[j * stride + bw];
                    self.data[i * stride + bw - (i - j)] = sum / ljj;
                } else {
                    if sum <= 0.0 {
                        return Err(Error::Numerical(format!(
                            "non-positive pivot at dof {i}: system is singular (insufficient constraints?)"
                        )));
                    }
                    self.data[i * stride + bw] = sum.sqrt();
                }
            }
        }
        // Transposed copy for streaming backward substitution:
        // lt[i][d] = L[i + d][i], d in [0, bw].
        self.lt_data = vec![0.0; self.n * stride];
        for i in 0..self.n {
            let hi = (i + bw).min(self.n - 1);
            for k in i..=hi {
                self.lt_data[i * stride + (k - i)] = self.data[k * stride + bw - (k - i)];
            }
        }
        self.l_f32 = self.data.iter().map(|&v| v as f32).collect();
        self.lt_f32 = self.lt_data.iter().map(|&v| v as f32).collect();
        Ok(())
    }

    /// Approximate triangular solve in single precision, used only as a
    /// preconditioner application.
    pub fn apply_preconditioner(&self, b: &[f64]) -> Vec<f64> {
        let bw = self.bw;
        let stride = bw + 1;
        let mut x: Vec<f32> = b.iter().map(|&v| v as f32).collect();
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let row = &self.l_f32[i * stride + (bw + lo) - i..i * stride + bw];
            let mut acc = [0.0f32; 8];
            let xs = &x[lo..i];
            let chunks = row.len() / 8;
            for c in 0..chunks {
                for l in 0..8 {
                    acc[l] += row[c * 8 + l] * xs[c * 8 + l];
                }
            }
            let mut dot = (acc[0] + acc[1]) + (acc[2] + acc[3]) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
            for k in chunks * 8..row.len() {
                dot += row[k] * xs[k];
            }
            x[i] = (x[i] - dot) / self.l_f32[i * stride + bw];
        }
        for i in (0..self.n).rev() {
            let hi = (i + bw).min(self.n - 1);
            let len = hi - i;
            let row = &self.lt_f32[i * stride + 1..i * stride + 1 + len];
            let xs = &x[i + 1..=hi];
            let mut acc = [0.0f32; 8];
            let chunks = len / 8;
            for c in 0..chunks {
                for l in 0..8 {
                    acc[l] += row[c * 8 + l] * xs[c * 8 + l];
                }
            }
            let mut dot = (acc[0] + acc[1]) + (acc[2] + acc[3]) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
            for k in chunks * 8..len {
                dot += row[k] * xs[k];
            }
            x[i] = (x[i] - dot) / self.lt_f32[i * stride];
        }
        x.iter().map(|&v| v as f64).collect()
    }

    /// Solve `L L^T x = b` after `cholesky_in_place`.
    pub fn solve_factored(&self, b: &[f64]) -> Vec<f64> {
        let bw = self.bw;
        let stride = bw + 1;
        let mut x = b.to_vec();
        // forward: L y = b
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let row = &self.data[i * stride + (bw + lo) - i..i * stride + bw];
            let sum = x[i] - crate::simd::dot(row, &x[lo..i]);
            x[i] = sum / self.diag(i);
        }
        // backward: L^T x = y (streaming over the transposed factor)
        for i in (0..self.n).rev() {
            let hi = (i + bw).min(self.n - 1);
            let len = hi - i;
            let row = &self.lt_data[i * stride + 1..i * stride + 1 + len];
            let sum = x[i] - crate::simd::dot(row, &x[i + 1..=hi]);
            x[i] = sum / self.lt_data[i * stride];
        }
        x
    }
}

/// Compressed sparse rows with a precomputed symmetric voxel pattern.
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let mut acc = [0.0f64; 4];
            let vals = &self.values[lo..hi];
            let cols = &self.col_idx[lo..hi];
            let chunks = vals.len() / 4;
            for c in 0..chunks {
                for l in 0..4 {
                    acc[l] += vals[c * 4 + l] * x[cols[c * 4 + l] as usize];
                }
            }
            let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
            for k in chunks * 4..vals.len() {
                s += vals[k] * x[cols[k] as usize];
            }
            y[i] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] as usize == i {
                    d[i] = self.values[k];
                }
            }
        }
        d
    }
}

/// Sparse assembly helper: fixed voxel pattern plus a scatter map from
/// element-local (row, col) pairs to value slots.
pub struct CsrPattern {
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    /// For each element: 576 value-slot indices (u32::MAX for skipped pairs).
    pub scatter: Vec<u32>,
    pub n: usize,
}

impl CsrPattern {
    pub fn build(grid: &VoxelGrid, fixed: &[bool]) -> Self {
        let n = grid.dof_count();
        // Collect neighbor sets per dof from the grid stencil.
        let nd = grid.node_dims();
        let mut row_counts = vec![0usize; n + 1];
        let neighbors_of = |ix: usize, iy: usize, iz: usize| {
            let mut out = Vec::with_capacity(81);
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dz in -1i64..=1 {
                        let jx = ix as i64 + dx;
                        let jy = iy as i64 + dy;
                        let jz = iz as i64 + dz;
                        if jx < 0
                            || jy < 0
                            || jz < 0
                            || jx >= nd[0] as i64
                            || jy >= nd[1] as i64
                            || jz >= nd[2] as i64
                        {
                            continue;
                        }
                        out.push(grid.node_index(jx as usize, jy as usize, jz as usize));
                    }
                }
            }
            out.sort_unstable();
            out
        };
        let mut cols_per_node: Vec<Vec<usize>> = Vec::with_capacity(grid.node_count());
        for ix in 0..nd[0] {
            for iy in 0..nd[1] {
                for iz in 0..nd[2] {
                    cols_per_node.push(Vec::new());
                    let ni = grid.node_index(ix, iy, iz);
                    cols_per_node[ni] = neighbors_of(ix, iy, iz);
                }
            }
        }
        for node in 0..grid.node_count() {
            for a in 0..3 {
                let dof = 3 * node + a;
                row_counts[dof + 1] = if fixed[dof] {
                    1
                } else {
                    cols_per_node[node].len() * 3
                };
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            row_ptr[i + 1] = row_ptr[i] + row_counts[i + 1];
        }
        let nnz = row_ptr[n];
        let mut col_idx = vec![0u32; nnz];
        for node in 0..grid.node_count() {
            for a in 0..3 {
                let dof = 3 * node + a;
                let start = row_ptr[dof];
                if fixed[dof] {
                    col_idx[start] = dof as u32;
                } else {
                    let mut at = start;
                    for &nj in &cols_per_node[node] {
                        for b in 0..3 {
                            col_idx[at] = (3 * nj + b) as u32;
                            at += 1;
                        }
                    }
                }
            }
        }
        // Scatter map.
        let find_slot = |row: usize, col: usize| -> u32 {
            let lo = row_ptr[row];
            let hi = row_ptr[row + 1];
            let target = col as u32;
            let slice = &col_idx[lo..hi];
            match slice.binary_search(&target) {
                Ok(k) => (lo + k) as u32,
                Err(_) => u32::MAX,
            }
        };
        let mut scatter = vec![u32::MAX; grid.element_count() * 576];
        for e in 0..grid.element_count() {
            let dofs = grid.element_dofs(e);
            for (a, &da) in dofs.iter().enumerate() {
                if fixed[da] {
                    continue;
                }
                for (b, &db) in dofs.iter().enumerate() {
                    if fixed[db] {
                        continue;
                    }
                    scatter[e * 576 + a * 24 + b] = find_slot(da, db);
                }
            }
        }
        Self {
            row_ptr,
            col_idx,
            scatter,
            n,
        }
    }
}

/// Which equilibrium solver to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Banded Cholesky for small grids, conjugate gradients otherwise.
    #[default]
    Auto,
    Direct,
    Cg,
}

/// DOF-count threshold below which `Auto` picks the direct factorization.
pub const AUTO_DIRECT_MAX_DOFS: usize = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Relative residual tolerance for the iterative path.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: SolverKind::Auto,
            tolerance: 1e-8,
            max_iterations: 20_000,
        }
    }
}

/// Reusable factorization cache: a (possibly stale) banded Cholesky factor
/// serving as the preconditioner for the iterative path. The topology moves
/// slowly between iterations, so a stale factor stays an excellent
/// preconditioner for many steps.
#[derive(Default)]
pub struct FactorCache {
    pub factor: Option<std::rc::Rc<BandedMatrix>>,
    /// Diagonal of the system at factorization time; later solves wrap the
    /// factor in a Jacobi rescaling that tracks the evolving density scale.
    pub factor_diag: Vec<f64>,
    /// Set when the last solve needed enough iterations that a refresh pays.
    pub stale: bool,
}

/// Outcome of one equilibrium solve, with the factorization or assembled
/// operator retained for adjoint backsolves.
pub struct LinearSystem {
    backend: Backend,
    pub fixed: Vec<bool>,
    pub residual: f64,
    pub iterations: usize,
}

enum Backend {
    Direct(std::rc::Rc<BandedMatrix>),
    Cg {
        csr: CsrMatrix,
        diag: Vec<f64>,
        precond: Option<ScaledFactor>,
        tol: f64,
        max_iter: usize,
    },
}

/// A (possibly stale) factorization wrapped in the Jacobi rescale
/// `M = S (L L^T) S`, `S = diag(sqrt(d_old / d_new))^-1`.
pub struct ScaledFactor {
    pub factor: std::rc::Rc<BandedMatrix>,
    /// `1 / s_i = sqrt(d_old_i / d_new_i)` applied around the triangular solve.
    pub inv_scale: Vec<f64>,
}

impl ScaledFactor {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        // The plain stale factor outperforms a Jacobi-rescaled one here; the
        // scale hook stays for problems where the density drift is diagonal.
        if self.inv_scale.is_empty() {
            return self.factor.apply_preconditioner(r);
        }
        let scaled: Vec<f64> = r.iter().zip(&self.inv_scale).map(|(v, s)| v * s).collect();
        let mut z = self.factor.apply_preconditioner(&scaled);
        for (zi, s) in z.iter_mut().zip(&self.inv_scale) {
            *zi *= s;
        }
        z
    }
}

impl LinearSystem {
    /// Solve `K x = rhs` for an additional right-hand side (adjoint solves).
    pub fn solve(&mut self, rhs: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut b = rhs.to_vec();
        for (i, &fx) in self.fixed.iter().enumerate() {
            if fx {
                b[i] = 0.0;
            }
        }
        match &mut self.backend {
            Backend::Direct(f) => Ok(f.solve_factored(&b)),
            Backend::Cg { csr, diag, precond, tol, max_iter } => {
                let (x, iters, res) =
                    pcg(csr, &b, warm, diag, precond.as_ref(), *tol, *max_iter)?;
                self.iterations = self.iterations.max(iters);
                self.residual = self.residual.max(res);
                Ok(x)
            }
        }
    }
}

/// Preconditioned conjugate gradients: a banded Cholesky factor when
/// available, the Jacobi diagonal otherwise.
fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    warm: Option<&[f64]>,
    diag: &[f64],
    factor: Option<&ScaledFactor>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = a.n;
    let bnorm = crate::simd::dot_self(b).sqrt();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0, 0.0));
    }
    let apply_precond = |r: &[f64], z: &mut Vec<f64>| match factor {
        Some(f) => *z = f.apply(r),
        None => {
            z.resize(n, 0.0);
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
        }
    };
    let mut x = warm.map(|w| w.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut r = vec![0.0; n];
    a.spmv(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = Vec::new();
    apply_precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz: f64 = crate::simd::dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rn = crate::simd::dot_self(&r).sqrt();
        if rn <= tol * bnorm {
            return Ok((x, it, rn / bnorm));
        }
        a.spmv(&p, &mut ap);
        let pap: f64 = crate::simd::dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Numerical(
                "conjugate gradients hit a non-positive curvature direction (singular system?)".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        apply_precond(&r, &mut z);
        let rz_new: f64 = crate::simd::dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rn = crate::simd::dot_self(&r).sqrt();
    Err(Error::Numerical(format!(
        "conjugate gradients failed to converge: residual {:.3e} after {max_iter} iterations",
        rn / bnorm
    )))
}

/// Assemble the global system from per-element constitutive matrices and
/// solve the equilibrium equations.
///
/// Returns the displacement vector and the retained system for adjoint
/// solves.
pub fn assemble_and_solve(
    grid: &VoxelGrid,
    basis: &Hex8Basis,
    c_design: &[Matrix6<f64>],
    bc: &BoundaryConditions,
    cfg: &SolverConfig,
    pattern: Option<&CsrPattern>,
    warm: Option<&[f64]>,
) -> Result<(Vec<f64>, LinearSystem)> {
    let mut cache = FactorCache::default();
    assemble_and_solve_cached(grid, basis, c_design, bc, cfg, pattern, warm, &mut cache)
}

/// Assemble the banded matrix for the full system (fixed rows as identity).
fn assemble_band(
    grid: &VoxelGrid,
    basis: &Hex8Basis,
    c_design: &[Matrix6<f64>],
    bc: &BoundaryConditions,
) -> BandedMatrix {
    let n = grid.dof_count();
    let bw = grid.bandwidth();
    let mut band = BandedMatrix::zeros(n, bw);
    for e in 0..grid.element_count() {
        let ke = basis.element_stiffness(&c_design[e]);
        let dofs = grid.element_dofs(e);
        for (a, &da) in dofs.iter().enumerate() {
            if bc.fixed[da] {
                continue;
            }
            for (b, &db) in dofs.iter().enumerate() {
                if bc.fixed[db] || db > da {
                    continue;
                }
                band.add(da, db, ke[(a, b)]);
            }
        }
    }
    for (i, &fx) in bc.fixed.iter().enumerate() {
        if fx {
            band.set_diag(i, 1.0);
        }
    }
    // Guard genuinely empty rows (nodes with no stiffness at all).
    for i in 0..n {
        if band.diag(i) == 0.0 {
            band.set_diag(i, 1.0);
        }
    }
    band
}

/// Iterations above which the cached factor gets refreshed next call.
const FACTOR_REFRESH_ITERS: usize = 12;

/// `assemble_and_solve` with a persistent factorization cache. The `Auto`
/// kind runs conjugate gradients preconditioned by a lazily refreshed
/// banded Cholesky factor; `Direct` always refactorizes; `Cg` uses Jacobi.
pub fn assemble_and_solve_cached(
    grid: &VoxelGrid,
    basis: &Hex8Basis,
    c_design: &[Matrix6<f64>],
    bc: &BoundaryConditions,
    cfg: &SolverConfig,
    pattern: Option<&CsrPattern>,
    warm: Option<&[f64]>,
    cache: &mut FactorCache,
) -> Result<(Vec<f64>, LinearSystem)> {
    bc.validate()?;
    let n = grid.dof_count();
    assert_eq!(c_design.len(), grid.element_count());

    let mut rhs = bc.force.clone();
    for (i, &fx) in bc.fixed.iter().enumerate() {
        if fx {
            rhs[i] = 0.0;
        }
    }

    if cfg.kind == SolverKind::Direct {
        let mut band = assemble_band(grid, basis, c_design, bc);
        band.cholesky_in_place()?;
        let u = band.solve_factored(&rhs);
        return Ok((
            u,
            LinearSystem {
                backend: Backend::Direct(std::rc::Rc::new(band)),
                fixed: bc.fixed.clone(),
                residual: 0.0,
                iterations: 0,
            },
        ));
    }

    let owned_pattern;
    let pat = match pattern {
        Some(p) => p,
        None => {
            owned_pattern = CsrPattern::build(grid, &bc.fixed);
            &owned_pattern
        }
    };
    let mut values = vec![0.0; pat.col_idx.len()];
    for e in 0..grid.element_count() {
        let ke = basis.element_stiffness(&c_design[e]);
        let smap = &pat.scatter[e * 576..(e + 1) * 576];
        for a in 0..24 {
            for b in 0..24 {
                let slot = smap[a * 24 + b];
                if slot != u32::MAX {
                    values[slot as usize] += ke[(a, b)];
                }
            }
        }
    }
    let mut csr = CsrMatrix {
        n,
        row_ptr: pat.row_ptr.clone(),
        col_idx: pat.col_idx.clone(),
        values,
    };
    // Identity rows for fixed and floating dofs.
    for (i, &fx) in bc.fixed.iter().enumerate() {
        if fx {
            let k = csr.row_ptr[i];
            csr.values[k] = 1.0;
        }
    }
    let mut diag = csr.diagonal();
    for d in diag.iter_mut() {
        if *d == 0.0 {
            *d = 1.0;
        }
    }

    let use_factor_precond =
        cfg.kind == SolverKind::Auto && n <= AUTO_DIRECT_MAX_DOFS;
    if use_factor_precond && (cache.factor.is_none() || cache.stale) {
        let mut band = assemble_band(grid, basis, c_design, bc);
        band.cholesky_in_place()?;
        cache.factor = Some(std::rc::Rc::new(band));
        cache.factor_diag = diag.clone();
        cache.stale = false;
    }
    let precond = if use_factor_precond {
        cache.factor.clone().map(|factor| ScaledFactor {
            factor,
            inv_scale: Vec::new(),
        })
    } else {
        None
    };
    let (u, iters, res) = pcg(
        &csr,
        &rhs,
        warm,
        &diag,
        precond.as_ref(),
        cfg.tolerance,
        cfg.max_iterations,
    )?;
    if use_factor_precond && iters > FACTOR_REFRESH_ITERS {
        cache.stale = true;
    }
    Ok((
        u,
        LinearSystem {
            backend: Backend::Cg {
                csr,
                diag,
                precond,
                tol: cfg.tolerance,
                max_iter: cfg.max_iterations,
            },
            fixed: bc.fixed.clone(),
            residual: res,
            iterations: iters,
        },
    ))
}

/// Gather an element's displacement sub-vector.
pub fn gather_element(u: &[f64], dofs: &[usize; 24]) -> SMatrix<f64, 24, 1> {
    SMatrix::<f64, 24, 1>::from_fn(|i, _| u[dofs[i]])
}

/// Compliance `U^T F` (kN mm).
pub fn compliance(u: &[f64], force: &[f64]) -> f64 {
    u.iter().zip(force).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{bond_stress_matrix, rotated_constitutive, MaterialSpec};
    use approx::assert_relative_eq;

    fn isotropic_c(e: f64, nu: f64) -> Matrix6<f64> {
        MaterialSpec::isotropic(e, nu).stiffness_matrix().unwrap()
    }

    /// Independent quadrature oracle: assemble the unit-cube stiffness with a
    /// separately coded 3x3x3 Gauss rule and direct shape-function algebra.
    fn oracle_unit_cube_stiffness(c: &Matrix6<f64>) -> ElementMatrix {
        let pts = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
        let wts = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let mut k = ElementMatrix::zeros();
        for (ia, &xa) in pts.iter().enumerate() {
            for (ib, &xb) in pts.iter().enumerate() {
                for (ic, &xc) in pts.iter().enumerate() {
                    let w = wts[ia] * wts[ib] * wts[ic] * 0.125; // detJ = (1/2)^3
                    // shape gradients by direct differentiation, chain 2/h = 2
                    let mut b = BMatrix::zeros();
                    for (i, corner) in CORNERS.iter().enumerate() {
                        let gx = 0.25 * corner[0] * (1.0 + corner[1] * xb) * (1.0 + corner[2] * xc);
                        let gy = 0.25 * corner[1] * (1.0 + corner[0] * xa) * (1.0 + corner[2] * xc);
                        let gz = 0.25 * corner[2] * (1.0 + corner[0] * xa) * (1.0 + corner[1] * xb);
                        let col = 3 * i;
                        b[(0, col)] = gx;
                        b[(1, col + 1)] = gy;
                        b[(2, col + 2)] = gz;
                        b[(3, col)] = gy;
                        b[(3, col + 1)] = gx;
                        b[(4, col + 1)] = gz;
                        b[(4, col + 2)] = gy;
                        b[(5, col)] = gz;
                        b[(5, col + 2)] = gx;
                    }
                    let cb = c * b;
                    k.gemm_tr(w, &b, &cb, 1.0);
                }
            }
        }
        k
    }

    #[test]
    fn element_stiffness_matches_independent_quadrature() {
        let c = isotropic_c(1.0, 0.3);
        let basis = Hex8Basis::new(1.0);
        let k = basis.element_stiffness(&c);
        let oracle = oracle_unit_cube_stiffness(&c);
        assert_relative_eq!((k - oracle).norm() / oracle.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn element_stiffness_is_symmetric_with_rigid_null_space() {
        let spec = MaterialSpec::pla_cf();
        let c0 = spec.stiffness_matrix().unwrap();
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.8, 1.2).into_inner();
        let c = rotated_constitutive(&c0, &bond_stress_matrix(&r), 0.7);
        let basis = Hex8Basis::new(2.5);
        let k = basis.element_stiffness(&c);
        assert!( (k - k.transpose()).norm() < 1e-10 * k.norm() );
        // rigid translations
        for axis in 0..3 {
            let mut u = SMatrix::<f64, 24, 1>::zeros();
            for i in 0..8 {
                u[3 * i + axis] = 1.0;
            }
            assert!((k * u).norm() < 1e-10 * k.norm());
        }
        // rigid rotation about z
        let h = 2.5;
        let mut u = SMatrix::<f64, 24, 1>::zeros();
        for (i, corner) in CORNERS.iter().enumerate() {
            let x = corner[0] * h / 2.0;
            let y = corner[1] * h / 2.0;
            u[3 * i] = -y;
            u[3 * i + 1] = x;
        }
        assert!((k * u).norm() < 1e-9 * k.norm() * u.norm());
        // exactly 6 near-zero eigenvalues
        let eig = k.symmetric_eigenvalues();
        let max = eig.max();
        let near_zero = eig.iter().filter(|&&e| e.abs() < 1e-10 * max).count();
        assert_eq!(near_zero, 6);
    }

    fn single_element_setup() -> (VoxelGrid, Hex8Basis, BoundaryConditions) {
        let grid = VoxelGrid::new([1, 1, 1], 1.0, [0.0; 3]);
        let basis = Hex8Basis::new(1.0);
        let bc = BoundaryConditions::new(grid.dof_count());
        (grid, basis, bc)
    }

    /// Single solid element under uniaxial traction: Hooke's law to 1e-8.
    #[test]
    fn single_element_uniaxial_matches_hookes_law() {
        let (grid, basis, mut bc) = single_element_setup();
        let e_mod = 2.0;
        let nu = 0.3;
        let c = isotropic_c(e_mod, nu);
        // Fix x=0 face in x; pin enough to kill rigid modes without Poisson locking.
        for iy in 0..2 {
            for iz in 0..2 {
                bc.fix(3 * grid.node_index(0, iy, iz));
            }
        }
        bc.fix(3 * grid.node_index(0, 0, 0) + 1);
        bc.fix(3 * grid.node_index(0, 0, 0) + 2);
        bc.fix(3 * grid.node_index(0, 1, 0) + 2);
        // Unit traction on x=1 face: total force 1 kN over 4 nodes.
        for iy in 0..2 {
            for iz in 0..2 {
                bc.load(3 * grid.node_index(1, iy, iz), 0.25);
            }
        }
        let cfg = SolverConfig {
            kind: SolverKind::Direct,
            ..Default::default()
        };
        let (u, _) = assemble_and_solve(&grid, &basis, &[c], &bc, &cfg, None, None).unwrap();
        let strain = basis.center_strain(&gather_element(&u, &grid.element_dofs(0)));
        let sigma = c * strain;
        assert_relative_eq!(sigma[0], 1.0, epsilon = 1e-8); // sigma_x = P/A
        assert_relative_eq!(strain[0], 1.0 / e_mod, epsilon = 1e-8);
        assert_relative_eq!(strain[1], -nu / e_mod, epsilon = 1e-8);
        assert_relative_eq!(strain[2], -nu / e_mod, epsilon = 1e-8);
        for shear in 3..6 {
            assert!(sigma[shear].abs() < 1e-8);
        }
    }

    #[test]
    fn zero_force_gives_zero_displacement_and_compliance() {
        let (grid, basis, mut bc) = single_element_setup();
        for iy in 0..2 {
            for iz in 0..2 {
                for a in 0..3 {
                    bc.fix(3 * grid.node_index(0, iy, iz) + a);
                }
            }
        }
        let c = isotropic_c(1.0, 0.3);
        let cfg = SolverConfig::default();
        let (u, _) = assemble_and_solve(&grid, &basis, &[c], &bc, &cfg, None, None).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
        assert_eq!(compliance(&u, &bc.force), 0.0);
    }

    /// Uniform-strain patch test on a multi-element grid: prescribing the
    /// linear displacement field on the full boundary reproduces the uniform
    /// stress state everywhere to 1e-8.
    #[test]
    fn patch_test_reproduces_uniform_strain() {
        let grid = VoxelGrid::new([3, 2, 2], 0.8, [0.0; 3]);
        let basis = Hex8Basis::new(0.8);
        let spec = MaterialSpec::pla_cf();
        let c0 = spec.stiffness_matrix().unwrap();
        let r = nalgebra::Rotation3::from_euler_angles(0.4, 0.2, -0.7).into_inner();
        let c = rotated_constitutive(&c0, &bond_stress_matrix(&r), 1.0);
        let cs = vec![c; grid.element_count()];

        // target uniform strain (engineering)
        let eps = Vector6::new(1e-3, -2e-3, 0.5e-3, 1e-3, -0.5e-3, 0.8e-3);
        let disp = |p: &Vector3<f64>| {
            Vector3::new(
                eps[0] * p.x + 0.5 * eps[3] * p.y + 0.5 * eps[5] * p.z,
                0.5 * eps[3] * p.x + eps[1] * p.y + 0.5 * eps[4] * p.z,
                0.5 * eps[5] * p.x + 0.5 * eps[4] * p.y + eps[2] * p.z,
            )
        };

        // Solve with every boundary node prescribed: equivalent to fixing all
        // boundary dofs and applying the reaction forces; here we instead
        // verify K u = f consistency by direct evaluation of interior residual.
        let nd = grid.node_dims();
        let mut u = vec![0.0; grid.dof_count()];
        for ix in 0..nd[0] {
            for iy in 0..nd[1] {
                for iz in 0..nd[2] {
                    let p = grid.node_position(ix, iy, iz);
                    let d = disp(&p);
                    let n = grid.node_index(ix, iy, iz);
                    u[3 * n] = d.x;
                    u[3 * n + 1] = d.y;
                    u[3 * n + 2] = d.z;
                }
            }
        }
        // Every element must see the exact uniform strain and stress.
        let expected_sigma = c * eps;
        for e in 0..grid.element_count() {
            let ue = gather_element(&u, &grid.element_dofs(e));
            let strain = basis.center_strain(&ue);
            assert_relative_eq!((strain - eps).norm(), 0.0, epsilon = 1e-12);
            let sigma = c * strain;
            assert_relative_eq!((sigma - expected_sigma).norm(), 0.0, epsilon = 1e-10);
        }
        // Interior nodes carry zero residual force (equilibrium of uniform stress).
        let mut f = vec![0.0; grid.dof_count()];
        for e in 0..grid.element_count() {
            let ke = basis.element_stiffness(&cs[e]);
            let dofs = grid.element_dofs(e);
            let fe = ke * gather_element(&u, &dofs);
            for (a, &da) in dofs.iter().enumerate() {
                f[da] += fe[a];
            }
        }
        for ix in 1..nd[0] - 1 {
            for iy in 1..nd[1] - 1 {
                for iz in 1..nd[2] - 1 {
                    let n = grid.node_index(ix, iy, iz);
                    for a in 0..3 {
                        assert!(
                            f[3 * n + a].abs() < 1e-8,
                            "interior residual at node {n} axis {a}: {}",
                            f[3 * n + a]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn direct_and_cg_solvers_agree() {
        let grid = VoxelGrid::new([4, 2, 2], 1.0, [0.0; 3]);
        let basis = Hex8Basis::new(1.0);
        let c = isotropic_c(1.0, 0.3);
        let cs = vec![c; grid.element_count()];
        let mut bc = BoundaryConditions::new(grid.dof_count());
        let nd = grid.node_dims();
        for iy in 0..nd[1] {
            for iz in 0..nd[2] {
                for a in 0..3 {
                    bc.fix(3 * grid.node_index(0, iy, iz) + a);
                }
            }
        }
        for iy in 0..nd[1] {
            for iz in 0..nd[2] {
                bc.load(3 * grid.node_index(4, iy, iz) + 1, -0.01);
            }
        }
        let (u_direct, _) = assemble_and_solve(
            &grid,
            &basis,
            &cs,
            &bc,
            &SolverConfig { kind: SolverKind::Direct, ..Default::default() },
            None,
            None,
        )
        .unwrap();
        let (u_cg, sys) = assemble_and_solve(
            &grid,
            &basis,
            &cs,
            &bc,
            &SolverConfig { kind: SolverKind::Cg, tolerance: 1e-12, max_iterations: 10_000 },
            None,
            None,
        )
        .unwrap();
        let diff: f64 = u_direct
            .iter()
            .zip(&u_cg)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = u_direct.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff < 1e-8 * norm, "direct vs cg: {diff} vs {norm}");
        assert!(sys.residual <= 1e-10);
    }

    #[test]
    fn insufficient_constraints_is_a_structured_error() {
        let (grid, basis, mut bc) = single_element_setup();
        bc.fix(0);
        bc.fix(1);
        let c = isotropic_c(1.0, 0.3);
        let err = assemble_and_solve(&grid, &basis, &[c], &bc, &SolverConfig::default(), None, None);
        assert!(err.is_err());
    }

    /// Void-vs-solid compliance scaling on a 2x1x1 grid: softening every
    /// element by the SIMP floor scales compliance by the inverse factor.
    #[test]
    fn void_grid_compliance_scales_inversely_with_modulus() {
        let grid = VoxelGrid::new([2, 1, 1], 1.0, [0.0; 3]);
        let basis = Hex8Basis::new(1.0);
        let c = isotropic_c(1.0, 0.3);
        let mut bc = BoundaryConditions::new(grid.dof_count());
        let nd = grid.node_dims();
        for iy in 0..nd[1] {
            for iz in 0..nd[2] {
                for a in 0..3 {
                    bc.fix(3 * grid.node_index(0, iy, iz) + a);
                }
            }
        }
        for iy in 0..nd[1] {
            for iz in 0..nd[2] {
                bc.load(3 * grid.node_index(2, iy, iz), 0.25);
            }
        }
        let ratio = 1e-4;
        let solve_with = |scale: f64| {
            let cs = vec![c * scale; grid.element_count()];
            let (u, _) =
                assemble_and_solve(&grid, &basis, &cs, &bc, &SolverConfig::default(), None, None)
                    .unwrap();
            compliance(&u, &bc.force)
        };
        let solid = solve_with(1.0);
        let void = solve_with(ratio);
        assert_relative_eq!(void / solid, 1.0 / ratio, epsilon = 1e-6 / ratio);
    }

    /// Rotating material frames, loads, and supports together leaves the
    /// elastic response unchanged (checked on a single element via energy).
    #[test]
    fn global_frame_rotation_preserves_compliance() {
        let spec = MaterialSpec::pla_cf();
        let c0 = spec.stiffness_matrix().unwrap();
        let basis = Hex8Basis::new(1.0);
        // 90 degree rotation about z maps the x-load problem onto a y-load
        // problem with permuted supports; compare strain energies.
        let rz = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2)
            .into_inner();

        let energy = |c: &Matrix6<f64>, load_axis: usize, fix_plane: usize| -> f64 {
            let grid = VoxelGrid::new([1, 1, 1], 1.0, [0.0; 3]);
            let mut bc = BoundaryConditions::new(grid.dof_count());
            let nd = grid.node_dims();
            for ix in 0..nd[0] {
                for iy in 0..nd[1] {
                    for iz in 0..nd[2] {
                        let idx = [ix, iy, iz];
                        if idx[fix_plane] == 0 {
                            for a in 0..3 {
                                bc.fix(3 * grid.node_index(ix, iy, iz) + a);
                            }
                        }
                    }
                }
            }
            for ix in 0..nd[0] {
                for iy in 0..nd[1] {
                    for iz in 0..nd[2] {
                        let idx = [ix, iy, iz];
                        if idx[fix_plane] == 1 {
                            bc.load(3 * grid.node_index(ix, iy, iz) + load_axis, 0.25);
                        }
                    }
                }
            }
            let (u, _) = assemble_and_solve(
                &grid,
                &basis,
                &[*c],
                &bc,
                &SolverConfig::default(),
                None,
                None,
            )
            .unwrap();
            compliance(&u, &bc.force)
        };

        // material frame = identity, pull along x
        let e1 = energy(&c0, 0, 0);
        // material frame rotated by Rz, pull along y: same physics
        let c_rot = rotated_constitutive(&c0, &bond_stress_matrix(&rz), 1.0);
        let e2 = energy(&c_rot, 1, 1);
        assert_relative_eq!(e1, e2, epsilon = 1e-9 * e1.abs());
    }

    /// Slender cantilever tip deflection against beam theory.
    #[test]
    fn cantilever_matches_slender_beam_theory() {
        let nx = 32;
        let nyz = 4;
        let h = 1.0;
        let grid = VoxelGrid::new([nx, nyz, nyz], h, [0.0; 3]);
        let basis = Hex8Basis::new(h);
        let e_mod = 1.0;
        let c = isotropic_c(e_mod, 0.3);
        let cs = vec![c; grid.element_count()];
        let mut bc = BoundaryConditions::new(grid.dof_count());
        let nd = grid.node_dims();
        for iy in 0..nd[1] {
            for iz in 0..nd[2] {
                for a in 0..3 {
                    bc.fix(3 * grid.node_index(0, iy, iz) + a);
                }
            }
        }
        let p_total = 1e-4;
        let tip_nodes = nd[1] * nd[2];
        for iy in 0..nd[1] {
            for iz in 0..nd[2] {
                bc.load(
                    3 * grid.node_index(nx, iy, iz) + 1,
                    -p_total / tip_nodes as f64,
                );
            }
        }
        let (u, _) = assemble_and_solve(
            &grid,
            &basis,
            &cs,
            &bc,
            &SolverConfig { kind: SolverKind::Direct, ..Default::default() },
            None,
            None,
        )
        .unwrap();
        let mut tip = 0.0;
        for iy in 0..nd[1] {
            for iz in 0..nd[2] {
                tip += u[3 * grid.node_index(nx, iy, iz) + 1];
            }
        }
        tip /= tip_nodes as f64;
        let length = nx as f64 * h;
        let depth = nyz as f64 * h;
        let inertia = depth * depth.powi(3) / 12.0;
        let euler = -p_total * length.powi(3) / (3.0 * e_mod * inertia);
        let err = (tip - euler).abs() / euler.abs();
        assert!(
            err < 0.05,
            "tip deflection {tip} vs beam theory {euler} (err {err:.4})"
        );
    }
}
