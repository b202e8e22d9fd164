//! Uniform conforming meshes on lattice-aligned cubes, exact multilinear
//! (Q1) stiffness assembly with one constant coefficient matrix per mesh
//! cell, and a Jacobi-preconditioned conjugate gradient solver.
//!
//! All integrals are volume-normalized: energies and inner products are
//! means over the cube, not raw integrals.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::CoefficientField;
use crate::linalg::SymMat;

pub const MAX_DIM: usize = 3;

/// A cube anchored at an integer lattice corner, carrying a uniform mesh of
/// `rho` cells per unit length. Mesh cell boundaries therefore align with
/// the unit coefficient cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeGrid {
    dim: usize,
    lo: [i64; MAX_DIM],
    side: i64,
    rho: u32,
}

impl CubeGrid {
    pub fn new(dim: usize, lo: &[i64], side: i64, rho: u32) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(invalid(format!("dimension {dim} not in {{2, 3}}")));
        }
        if side < 1 {
            return Err(invalid(format!("cube side {side} must be >= 1")));
        }
        if rho < 1 {
            return Err(invalid("resolution must be a positive integer"));
        }
        if lo.len() != dim {
            return Err(invalid("corner length does not match dimension"));
        }
        let mut l = [0i64; MAX_DIM];
        l[..dim].copy_from_slice(lo);
        Ok(CubeGrid { dim, lo: l, side, rho })
    }

    /// Cube of side `3^level` anchored at the origin.
    pub fn triadic(dim: usize, level: u32, rho: u32) -> Result<Self> {
        Self::new(dim, &vec![0; dim], 3i64.pow(level), rho)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn lo(&self) -> &[i64] {
        &self.lo[..self.dim]
    }
    pub fn side(&self) -> i64 {
        self.side
    }
    pub fn rho(&self) -> u32 {
        self.rho
    }
    /// Mesh spacing 1/rho.
    pub fn h(&self) -> f64 {
        1.0 / self.rho as f64
    }
    pub fn nodes_per_side(&self) -> usize {
        (self.side * self.rho as i64 + 1) as usize
    }
    pub fn cells_per_side(&self) -> usize {
        (self.side * self.rho as i64) as usize
    }
    pub fn num_nodes(&self) -> usize {
        self.nodes_per_side().pow(self.dim as u32)
    }
    pub fn num_cells(&self) -> usize {
        self.cells_per_side().pow(self.dim as u32)
    }
    pub fn volume(&self) -> f64 {
        (self.side as f64).powi(self.dim as i32)
    }
    /// Physical center of the cube.
    pub fn center(&self) -> [f64; MAX_DIM] {
        let mut c = [0.0; MAX_DIM];
        for k in 0..self.dim {
            c[k] = self.lo[k] as f64 + 0.5 * self.side as f64;
        }
        c
    }

    #[inline]
    pub fn node_multi(&self, idx: usize) -> [usize; MAX_DIM] {
        let n = self.nodes_per_side();
        let mut m = [0usize; MAX_DIM];
        let mut rest = idx;
        for k in 0..self.dim {
            m[k] = rest % n;
            rest /= n;
        }
        m
    }

    #[inline]
    pub fn node_index(&self, m: &[usize]) -> usize {
        let n = self.nodes_per_side();
        let mut idx = 0usize;
        for k in (0..self.dim).rev() {
            idx = idx * n + m[k];
        }
        idx
    }

    #[inline]
    pub fn cell_multi(&self, idx: usize) -> [usize; MAX_DIM] {
        let n = self.cells_per_side();
        let mut m = [0usize; MAX_DIM];
        let mut rest = idx;
        for k in 0..self.dim {
            m[k] = rest % n;
            rest /= n;
        }
        m
    }

    #[inline]
    pub fn cell_index(&self, m: &[usize]) -> usize {
        let n = self.cells_per_side();
        let mut idx = 0usize;
        for k in (0..self.dim).rev() {
            idx = idx * n + m[k];
        }
        idx
    }

    /// Physical coordinates of a node.
    pub fn node_pos(&self, idx: usize) -> [f64; MAX_DIM] {
        let m = self.node_multi(idx);
        let h = self.h();
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.dim {
            x[k] = self.lo[k] as f64 + m[k] as f64 * h;
        }
        x
    }

    /// Physical coordinates of a cell midpoint.
    pub fn cell_mid(&self, idx: usize) -> [f64; MAX_DIM] {
        let m = self.cell_multi(idx);
        let h = self.h();
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.dim {
            x[k] = self.lo[k] as f64 + (m[k] as f64 + 0.5) * h;
        }
        x
    }

    /// Node index of cell corner `corner` (bit k set = high side along axis k).
    #[inline]
    pub fn cell_corner_node(&self, cell_multi: &[usize; MAX_DIM], corner: usize) -> usize {
        let n = self.nodes_per_side();
        let mut idx = 0usize;
        for k in (0..self.dim).rev() {
            idx = idx * n + cell_multi[k] + ((corner >> k) & 1);
        }
        idx
    }

    /// True on nodes of the cube boundary.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let n = self.nodes_per_side();
        (0..self.num_nodes())
            .map(|i| {
                let m = self.node_multi(i);
                (0..self.dim).any(|k| m[k] == 0 || m[k] == n - 1)
            })
            .collect()
    }

    /// Sub-grid with the same resolution; the sub-cube must be contained in
    /// this one and share its lattice alignment.
    pub fn subgrid(&self, lo: &[i64], side: i64) -> Result<CubeGrid> {
        let sub = CubeGrid::new(self.dim, lo, side, self.rho)?;
        for k in 0..self.dim {
            if sub.lo[k] < self.lo[k] || sub.lo[k] + side > self.lo[k] + self.side {
                return Err(invalid("subgrid not contained in parent"));
            }
        }
        Ok(sub)
    }

    /// Node index in the parent grid of a node of `sub`.
    pub fn node_in_parent(&self, sub: &CubeGrid, sub_idx: usize) -> usize {
        let m = sub.node_multi(sub_idx);
        let mut pm = [0usize; MAX_DIM];
        for k in 0..self.dim {
            pm[k] = m[k] + ((sub.lo[k] - self.lo[k]) * self.rho as i64) as usize;
        }
        self.node_index(&pm[..self.dim])
    }

    /// Cell index in the parent grid of a cell of `sub`.
    pub fn cell_in_parent(&self, sub: &CubeGrid, sub_idx: usize) -> usize {
        let m = sub.cell_multi(sub_idx);
        let mut pm = [0usize; MAX_DIM];
        for k in 0..self.dim {
            pm[k] = m[k] + ((sub.lo[k] - self.lo[k]) * self.rho as i64) as usize;
        }
        self.cell_index(&pm[..self.dim])
    }
}

/// Storage layout of a [`GridField`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// One value tuple per mesh node (potentials).
    Nodal,
    /// One value tuple per mesh cell (gradients, fluxes).
    PerCell,
}

/// Scalar or vector-valued data attached to a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: CubeGrid,
    pub rank: usize,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: CubeGrid, rank: usize, layout: Layout) -> Self {
        let n = match layout {
            Layout::Nodal => grid.num_nodes(),
            Layout::PerCell => grid.num_cells(),
        };
        GridField { grid, rank, layout, data: vec![0.0; n * rank] }
    }

    pub fn from_nodal_fn(grid: CubeGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut out = Self::zeros(grid, 1, Layout::Nodal);
        for i in 0..grid.num_nodes() {
            let x = grid.node_pos(i);
            out.data[i] = f(&x[..grid.dim()]);
        }
        out
    }

    /// Nodal samples of the plane x ↦ p·x.
    pub fn affine(grid: CubeGrid, p: &[f64]) -> Self {
        Self::from_nodal_fn(grid, |x| x.iter().zip(p).map(|(a, b)| a * b).sum())
    }

    #[inline]
    pub fn get(&self, entity: usize, comp: usize) -> f64 {
        self.data[entity * self.rank + comp]
    }

    #[inline]
    pub fn set(&mut self, entity: usize, comp: usize, v: f64) {
        self.data[entity * self.rank + comp] = v;
    }

    pub fn num_entities(&self) -> usize {
        self.data.len() / self.rank
    }

    /// Restriction to an aligned sub-cube (same resolution, same layout).
    pub fn restrict(&self, sub: CubeGrid) -> Result<GridField> {
        if sub.rho() != self.grid.rho() || sub.dim() != self.grid.dim() {
            return Err(invalid("restriction requires matching resolution"));
        }
        let mut out = GridField::zeros(sub, self.rank, self.layout);
        let n = out.num_entities();
        for i in 0..n {
            let parent = match self.layout {
                Layout::Nodal => self.grid.node_in_parent(&sub, i),
                Layout::PerCell => self.grid.cell_in_parent(&sub, i),
            };
            for c in 0..self.rank {
                out.set(i, c, self.get(parent, c));
            }
        }
        Ok(out)
    }
}

// Exact reference-cell integrals for the multilinear basis: along one axis
// the factors are l0 = 1-t, l1 = t with
//   ∫ l_a l_b   = 1/3 (a==b), 1/6 (a!=b)
//   ∫ l_a' l_b' = s_a s_b,  s_0 = -1, s_1 = +1
//   ∫ l_a       = 1/2
#[inline]
fn mass_1d(a: usize, b: usize) -> f64 {
    if a == b {
        1.0 / 3.0
    } else {
        1.0 / 6.0
    }
}

#[inline]
fn sgn(bit: usize) -> f64 {
    if bit == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Element stiffness for one mesh cell with constant coefficient matrix `a`,
/// already scaled for normalized (mean-integral) energies on the whole grid.
/// Exact for the multilinear trial space. Bitwise symmetric by construction.
fn element_stiffness(dim: usize, a: &SymMat, scale: f64) -> [[f64; 8]; 8] {
    let nb = 1usize << dim;
    let mut ke = [[0.0f64; 8]; 8];
    for ca in 0..nb {
        for cb in ca..nb {
            let mut acc = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    let mut term = a.get(i, j);
                    if i == j {
                        term *= sgn((ca >> i) & 1) * sgn((cb >> i) & 1);
                        for k in 0..dim {
                            if k != i {
                                term *= mass_1d((ca >> k) & 1, (cb >> k) & 1);
                            }
                        }
                    } else {
                        // ∫ ∂_i φ_a ∂_j φ_b factorizes with the ∫l = 1/2
                        // factors on axes i and j.
                        term *= sgn((ca >> i) & 1) * sgn((cb >> j) & 1) * 0.25;
                        for k in 0..dim {
                            if k != i && k != j {
                                term *= mass_1d((ca >> k) & 1, (cb >> k) & 1);
                            }
                        }
                    }
                    acc += term;
                }
            }
            ke[ca][cb] = acc * scale;
            ke[cb][ca] = ke[ca][cb];
        }
    }
    ke
}

/// Sparse symmetric matrix in CSR form over grid nodes.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    fn lattice_pattern(grid: &CubeGrid) -> CsrMatrix {
        let n = grid.num_nodes();
        let nps = grid.nodes_per_side();
        let dim = grid.dim();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols: Vec<u32> = Vec::new();
        row_ptr.push(0);
        let mut neigh: Vec<u32> = Vec::with_capacity(27);
        for i in 0..n {
            let m = grid.node_multi(i);
            neigh.clear();
            let cnt = 3usize.pow(dim as u32);
            for off in 0..cnt {
                let mut rest = off;
                let mut nm = [0usize; MAX_DIM];
                let mut ok = true;
                for k in 0..dim {
                    let dk = (rest % 3) as i64 - 1;
                    rest /= 3;
                    let v = m[k] as i64 + dk;
                    if v < 0 || v >= nps as i64 {
                        ok = false;
                        break;
                    }
                    nm[k] = v as usize;
                }
                if ok {
                    neigh.push(grid.node_index(&nm[..dim]) as u32);
                }
            }
            neigh.sort_unstable();
            cols.extend_from_slice(&neigh);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        CsrMatrix { n, row_ptr, cols, vals: vec![0.0; nnz] }
    }

    #[inline]
    fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        let pos = self.cols[lo..hi].binary_search(&(j as u32)).expect("pattern miss") + lo;
        self.vals[pos] += v;
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k] as usize];
            }
            y[i] = s;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.cols[k] as usize == i {
                    d[i] = self.vals[k];
                }
            }
        }
        d
    }

    /// xᵀ A y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let mut row = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row += self.vals[k] * y[self.cols[k] as usize];
            }
            s += x[i] * row;
        }
        s
    }

    /// Max |A[i][j] - A[j][i]|, exactly zero for our assembly.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k] as usize;
                if j > i {
                    let lo = self.row_ptr[j];
                    let hi = self.row_ptr[j + 1];
                    if let Ok(p) = self.cols[lo..hi].binary_search(&(i as u32)) {
                        worst = worst.max((self.vals[k] - self.vals[lo + p]).abs());
                    }
                }
            }
        }
        worst
    }
}

/// The discrete energy u ↦ ½ uᵀKu − bᵀu + c in normalized units.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub k: CsrMatrix,
    pub b: Vec<f64>,
    pub c: f64,
    pub grid: CubeGrid,
}

impl QuadraticForm {
    pub fn energy(&self, u: &[f64]) -> f64 {
        0.5 * self.k.bilinear(u, u) - self.b.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
            + self.c
    }
}

/// Assembles the normalized energy form fint ½ ∇v · a ∇v for the given
/// coefficient field. Coefficients are sampled at mesh-cell midpoints, so a
/// field that is constant per unit cell yields exactly one matrix per cell.
pub fn assemble(grid: &CubeGrid, field: &CoefficientField) -> Result<QuadraticForm> {
    if field.dim() != grid.dim() {
        return Err(invalid("field and grid dimensions differ"));
    }
    field.check_grid_support(grid)?;
    let dim = grid.dim();
    let h = grid.h();
    // raw element scale h^{d-2}, then divide by |cube| for mean integrals
    let scale = h.powi(dim as i32 - 2) / grid.volume();
    let mut k = CsrMatrix::lattice_pattern(grid);
    let nb = 1usize << dim;
    let mut nodes = [0usize; 8];
    for c in 0..grid.num_cells() {
        let mid = grid.cell_mid(c);
        let a = field.matrix_at(&mid[..dim]);
        let ke = element_stiffness(dim, &a, scale);
        let cm = grid.cell_multi(c);
        for (corner, slot) in nodes.iter_mut().enumerate().take(nb) {
            *slot = grid.cell_corner_node(&cm, corner);
        }
        for ca in 0..nb {
            for cb in 0..nb {
                k.add_at(nodes[ca], nodes[cb], ke[ca][cb]);
            }
        }
    }
    Ok(QuadraticForm { k, b: vec![0.0; grid.num_nodes()], c: 0.0, grid: *grid })
}

/// Stiffness of the flat Laplacian (a ≡ I) on the grid.
pub fn laplace_form(grid: &CubeGrid) -> QuadraticForm {
    let field = CoefficientField::constant(grid.dim(), SymMat::identity(grid.dim()))
        .expect("identity field");
    assemble(grid, &field).expect("laplace assembly")
}

/// Linear term b with bᵀu = fint q·∇u, exact for the trial space.
pub fn linear_term_from_slope(grid: &CubeGrid, q: &[f64]) -> Vec<f64> {
    let dim = grid.dim();
    let nb = 1usize << dim;
    // ∫_cell ∂_i u = h^{d-1} 2^{1-d} Σ_a s(a_i) u_a ; normalize by |cube|
    let w = grid.h().powi(dim as i32 - 1) * 2f64.powi(1 - dim as i32) / grid.volume();
    let mut b = vec![0.0; grid.num_nodes()];
    for c in 0..grid.num_cells() {
        let cm = grid.cell_multi(c);
        for corner in 0..nb {
            let node = grid.cell_corner_node(&cm, corner);
            let mut s = 0.0;
            for i in 0..dim {
                s += q[i] * sgn((corner >> i) & 1);
            }
            b[node] += w * s;
        }
    }
    b
}

/// Midpoint (= cell-average) gradient of the multilinear interpolant,
/// one d-vector per mesh cell.
pub fn gradient(u: &GridField) -> Result<GridField> {
    if u.layout != Layout::Nodal || u.rank != 1 {
        return Err(invalid("gradient expects a scalar nodal field"));
    }
    let grid = u.grid;
    let dim = grid.dim();
    let nb = 1usize << dim;
    let inv_h = 1.0 / grid.h();
    let w = inv_h * 2f64.powi(1 - dim as i32);
    let mut g = GridField::zeros(grid, dim, Layout::PerCell);
    for c in 0..grid.num_cells() {
        let cm = grid.cell_multi(c);
        let mut acc = [0.0f64; MAX_DIM];
        for corner in 0..nb {
            let v = u.data[grid.cell_corner_node(&cm, corner)];
            for i in 0..dim {
                acc[i] += sgn((corner >> i) & 1) * v;
            }
        }
        for i in 0..dim {
            g.set(c, i, acc[i] * w);
        }
    }
    Ok(g)
}

/// fint u v for scalar nodal fields, exact for the trial space.
pub fn mass_ip(u: &GridField, v: &GridField) -> Result<f64> {
    if u.layout != Layout::Nodal || v.layout != Layout::Nodal || u.rank != 1 || v.rank != 1 {
        return Err(invalid("mass_ip expects scalar nodal fields"));
    }
    if u.grid != v.grid {
        return Err(invalid("mass_ip fields on different grids"));
    }
    let grid = u.grid;
    let dim = grid.dim();
    let nb = 1usize << dim;
    let per_cell = 1.0 / grid.num_cells() as f64;
    let mut total = 0.0;
    for c in 0..grid.num_cells() {
        let cm = grid.cell_multi(c);
        let mut cell = 0.0;
        for ca in 0..nb {
            let ua = u.data[grid.cell_corner_node(&cm, ca)];
            for cb in 0..nb {
                let vb = v.data[grid.cell_corner_node(&cm, cb)];
                let mut m = 1.0;
                for k in 0..dim {
                    m *= mass_1d((ca >> k) & 1, (cb >> k) & 1);
                }
                cell += ua * vb * m;
            }
        }
        total += cell * per_cell;
    }
    Ok(total)
}

/// fint u, exact.
pub fn volume_mean(u: &GridField) -> Result<f64> {
    if u.layout != Layout::Nodal || u.rank != 1 {
        return Err(invalid("volume_mean expects a scalar nodal field"));
    }
    let grid = u.grid;
    let nb = 1usize << grid.dim();
    let per = 1.0 / (grid.num_cells() * nb) as f64;
    let mut s = 0.0;
    for c in 0..grid.num_cells() {
        let cm = grid.cell_multi(c);
        for corner in 0..nb {
            s += u.data[grid.cell_corner_node(&cm, corner)];
        }
    }
    Ok(s * per)
}

/// ‖u − (u)‖ in the normalized L² norm, exact.
pub fn l2_oscillation(u: &GridField) -> Result<f64> {
    let mean = volume_mean(u)?;
    let sq = mass_ip(u, u)?;
    Ok((sq - mean * mean).max(0.0).sqrt())
}

/// Mean of a per-cell vector field over the whole cube (each cell has equal
/// volume, so this is the plain average).
pub fn cell_field_mean(f: &GridField) -> Vec<f64> {
    let n = f.num_entities();
    let mut m = vec![0.0; f.rank];
    for e in 0..n {
        for c in 0..f.rank {
            m[c] += f.get(e, c);
        }
    }
    for v in &mut m {
        *v /= n as f64;
    }
    m
}

/// fint ∇u over the cube (for nodal scalar u).
pub fn mean_gradient(u: &GridField) -> Result<Vec<f64>> {
    Ok(cell_field_mean(&gradient(u)?))
}

/// fint a∇u over the cube.
pub fn mean_flux(field: &CoefficientField, u: &GridField) -> Result<Vec<f64>> {
    let g = gradient(u)?;
    let grid = u.grid;
    let dim = grid.dim();
    let mut acc = vec![0.0; dim];
    let mut av = [0.0f64; MAX_DIM];
    for c in 0..grid.num_cells() {
        let mid = grid.cell_mid(c);
        let a = field.matrix_at(&mid[..dim]);
        let gc: Vec<f64> = (0..dim).map(|i| g.get(c, i)).collect();
        a.mul_vec(&gc, &mut av[..dim]);
        for i in 0..dim {
            acc[i] += av[i];
        }
    }
    for v in &mut acc {
        *v /= grid.num_cells() as f64;
    }
    Ok(acc)
}

/// Constraint rendering the stiffness nonsingular.
#[derive(Debug, Clone)]
pub enum Constraint<'a> {
    /// Fix the masked nodes to the given values.
    Dirichlet { mask: &'a [bool], values: &'a [f64] },
    /// Pure Neumann: iterate in the zero-mean subspace.
    MeanZero,
    /// Fix a single node to zero.
    PinNode(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct SolveInfo {
    pub iterations: usize,
    pub rel_residual: f64,
}

fn project_mean_zero(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= m;
    }
}

/// Minimizes ½uᵀKu − bᵀu under the constraint, by preconditioned conjugate
/// gradients with a Jacobi preconditioner. `init` seeds the iteration.
pub fn solve_spd(
    form: &QuadraticForm,
    constraint: Constraint<'_>,
    tol: f64,
    init: Option<&[f64]>,
) -> Result<(GridField, SolveInfo)> {
    if tol <= 0.0 {
        return Err(invalid("solver tolerance must be positive"));
    }
    let n = form.k.n;
    let grid = form.grid;
    let max_iter = 50 * grid.nodes_per_side();

    let mut mean_zero = false;
    let fixed: Option<(Vec<bool>, Vec<f64>)> = match constraint {
        Constraint::Dirichlet { mask, values } => {
            if mask.len() != n || values.len() != n {
                return Err(invalid("dirichlet mask length mismatch"));
            }
            Some((mask.to_vec(), values.to_vec()))
        }
        Constraint::MeanZero => {
            mean_zero = true;
            None
        }
        Constraint::PinNode(i) => {
            if i >= n {
                return Err(invalid("pinned node out of range"));
            }
            let mut m = vec![false; n];
            m[i] = true;
            Some((m, vec![0.0; n]))
        }
    };
    let mask = fixed.as_ref().map(|(m, _)| m.as_slice());
    let values = fixed.as_ref().map(|(_, v)| v.as_slice());

    let mut x = vec![0.0; n];
    if let Some(x0) = init {
        if x0.len() != n {
            return Err(invalid("initial guess length mismatch"));
        }
        x.copy_from_slice(x0);
    }
    if let (Some(mask), Some(values)) = (mask, values) {
        for i in 0..n {
            if mask[i] {
                x[i] = values[i];
            }
        }
    }
    if mean_zero {
        project_mean_zero(&mut x);
    }

    let diag = form.k.diag();
    let mut r = vec![0.0; n];
    form.k.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = form.b[i] - r[i];
    }
    if let Some(mask) = mask {
        for i in 0..n {
            if mask[i] {
                r[i] = 0.0;
            }
        }
    }
    if mean_zero {
        project_mean_zero(&mut r);
    }

    let norm0 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let make_field = |x: Vec<f64>| GridField { grid, rank: 1, layout: Layout::Nodal, data: x };
    if norm0 == 0.0 {
        return Ok((make_field(x), SolveInfo { iterations: 0, rel_residual: 0.0 }));
    }

    let precond = |r: &[f64], z: &mut [f64]| {
        for i in 0..r.len() {
            z[i] = if diag[i] > 0.0 { r[i] / diag[i] } else { r[i] };
        }
    };

    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    if let Some(mask) = mask {
        for i in 0..n {
            if mask[i] {
                z[i] = 0.0;
            }
        }
    }
    if mean_zero {
        project_mean_zero(&mut z);
    }
    let mut p = z.clone();
    let mut rz = r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
    let mut ap = vec![0.0; n];

    for it in 1..=max_iter {
        form.k.matvec(&p, &mut ap);
        if let Some(mask) = mask {
            for i in 0..n {
                if mask[i] {
                    ap[i] = 0.0;
                }
            }
        }
        if mean_zero {
            project_mean_zero(&mut ap);
        }
        let pap = p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        if pap <= 0.0 {
            return Err(Error::SolverDiverged { residual: f64::NAN, iterations: it });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if mean_zero {
            project_mean_zero(&mut r);
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= tol * norm0 {
            if mean_zero {
                project_mean_zero(&mut x);
            }
            return Ok((make_field(x), SolveInfo { iterations: it, rel_residual: norm / norm0 }));
        }
        precond(&r, &mut z);
        if let Some(mask) = mask {
            for i in 0..n {
                if mask[i] {
                    z[i] = 0.0;
                }
            }
        }
        if mean_zero {
            project_mean_zero(&mut z);
        }
        let rz_new = r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(Error::SolverDiverged { residual: norm / norm0, iterations: max_iter })
}

/// Solution of the Dirichlet problem for the field's operator with boundary
/// data `g`, i.e. an element of the discrete solution space on this cube.
pub fn solve_dirichlet(
    grid: &CubeGrid,
    field: &CoefficientField,
    g: impl Fn(&[f64]) -> f64,
    tol: f64,
) -> Result<GridField> {
    let form = assemble(grid, field)?;
    let mask = grid.boundary_mask();
    // interpolate the data everywhere: a free warm start that makes exactly
    // representable solutions (affine data, constant coefficients) immediate
    let mut values = vec![0.0; grid.num_nodes()];
    for (i, slot) in values.iter_mut().enumerate() {
        let x = grid.node_pos(i);
        *slot = g(&x[..grid.dim()]);
    }
    let (u, _info) =
        solve_spd(&form, Constraint::Dirichlet { mask: &mask, values: &values }, tol, Some(&values))?;
    Ok(u)
}

/// Component-wise Neumann potential of a per-cell vector field F: solves
/// −Δw_i = F_i − (F_i) with natural boundary conditions and zero mean.
/// The returned nodal field w satisfies ⟨F, w⟩ = ⟨∇w, ∇w⟩ up to solver
/// tolerance, which is what the normalized H⁻¹ norm evaluation needs.
pub fn neumann_potential(f: &GridField, tol: f64) -> Result<GridField> {
    if f.layout != Layout::PerCell {
        return Err(invalid("neumann_potential expects a per-cell field"));
    }
    let grid = f.grid;
    let dim = grid.dim();
    let nb = 1usize << dim;
    let lap = laplace_form(&grid);
    let mut w = GridField::zeros(grid, f.rank, Layout::Nodal);
    // ∫_cell φ_corner = h^d / 2^d for each corner; normalized by |cube|.
    let wgt = 1.0 / (grid.num_cells() * nb) as f64;
    for comp in 0..f.rank {
        let mean: f64 =
            (0..grid.num_cells()).map(|c| f.get(c, comp)).sum::<f64>() / grid.num_cells() as f64;
        let mut b = vec![0.0; grid.num_nodes()];
        for c in 0..grid.num_cells() {
            let cm = grid.cell_multi(c);
            let fv = f.get(c, comp) - mean;
            for corner in 0..nb {
                b[grid.cell_corner_node(&cm, corner)] += wgt * fv;
            }
        }
        let form = QuadraticForm { k: lap.k.clone(), b, c: 0.0, grid };
        let (mut wi, _) = solve_spd(&form, Constraint::MeanZero, tol, None)?;
        // zero volume mean, so that ⟨F, w⟩ = ⟨∇w, ∇w⟩ holds exactly
        let vm = volume_mean(&wi)?;
        for v in &mut wi.data {
            *v -= vm;
        }
        for i in 0..grid.num_nodes() {
            w.set(i, comp, wi.data[i]);
        }
    }
    Ok(w)
}

/// The pairing fint F·η for per-cell F against the interpolant of a nodal
/// field η with the same rank, exact for piecewise-constant F.
pub fn cell_nodal_pairing(f: &GridField, eta: &GridField) -> Result<f64> {
    if f.layout != Layout::PerCell || eta.layout != Layout::Nodal || f.rank != eta.rank {
        return Err(invalid("pairing expects per-cell F and nodal eta of equal rank"));
    }
    if f.grid != eta.grid {
        return Err(invalid("pairing fields on different grids"));
    }
    let grid = f.grid;
    let nb = 1usize << grid.dim();
    let wgt = 1.0 / (grid.num_cells() * nb) as f64;
    let mut s = 0.0;
    for c in 0..grid.num_cells() {
        let cm = grid.cell_multi(c);
        for corner in 0..nb {
            let node = grid.cell_corner_node(&cm, corner);
            for comp in 0..f.rank {
                s += wgt * f.get(c, comp) * eta.get(node, comp);
            }
        }
    }
    Ok(s)
}
