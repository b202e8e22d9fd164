//! ā-harmonic polynomial spaces and mesoscopic regularity diagnostics: the
//! distance D_k(r) from a solution to the span of ā-harmonic polynomials of
//! degree ≤ k on balls of radius r.

use std::collections::BTreeMap;

use crate::error::{invalid, Error, Result};
use crate::field::CoefficientField;
use crate::grid::{solve_dirichlet, CubeGrid, GridField, Layout, MAX_DIM};
use crate::linalg::{weighted_line_fit, SymMat};

/// Sparse polynomial in up to three variables, exponents in the key.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    dim: usize,
    terms: BTreeMap<[u8; MAX_DIM], f64>,
}

impl Poly {
    pub fn zero(dim: usize) -> Self {
        Poly { dim, terms: BTreeMap::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Self::zero(dim);
        p.add_term([0; MAX_DIM], c);
        p
    }

    pub fn monomial(dim: usize, exps: &[u8], coef: f64) -> Self {
        let mut key = [0u8; MAX_DIM];
        key[..exps.len()].copy_from_slice(exps);
        let mut p = Self::zero(dim);
        p.add_term(key, coef);
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add_term(&mut self, exps: [u8; MAX_DIM], coef: f64) {
        if coef == 0.0 {
            return;
        }
        let e = self.terms.entry(exps).or_insert(0.0);
        *e += coef;
        if *e == 0.0 {
            self.terms.remove(&exps);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u8; MAX_DIM], &f64)> {
        self.terms.iter()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|k| k.iter().map(|&e| e as u32).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn max_coef_abs(&self) -> f64 {
        self.terms.values().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (exps, c) in &self.terms {
            let mut t = *c;
            for k in 0..self.dim {
                for _ in 0..exps[k] {
                    t *= x[k];
                }
            }
            s += t;
        }
        s
    }

    pub fn scale(&self, s: f64) -> Poly {
        let mut out = Self::zero(self.dim);
        for (e, c) in &self.terms {
            out.add_term(*e, c * s);
        }
        out
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(*e, *c);
        }
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Self::zero(self.dim);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let mut e = [0u8; MAX_DIM];
                for k in 0..MAX_DIM {
                    e[k] = ea[k] + eb[k];
                }
                out.add_term(e, ca * cb);
            }
        }
        out
    }

    pub fn partial(&self, axis: usize) -> Poly {
        let mut out = Self::zero(self.dim);
        for (e, c) in &self.terms {
            if e[axis] > 0 {
                let mut d = *e;
                d[axis] -= 1;
                out.add_term(d, c * e[axis] as f64);
            }
        }
        out
    }

    /// Substitutes x_i = Σ_j S[i][j]·y_j.
    pub fn compose_linear(&self, s: &SymMat) -> Poly {
        let d = self.dim;
        let mut out = Self::zero(d);
        for (e, c) in &self.terms {
            let mut term = Poly::constant(d, *c);
            for i in 0..d {
                for _ in 0..e[i] {
                    let mut lin = Poly::zero(d);
                    for j in 0..d {
                        let mut key = [0u8; MAX_DIM];
                        key[j] = 1;
                        lin.add_term(key, s.get(i, j));
                    }
                    term = term.mul(&lin);
                }
            }
            out = out.add(&term);
        }
        out
    }

    /// The polynomial ∇·(ā∇w) = Σ_ij ā_ij ∂_i∂_j w for constant ā.
    pub fn div_a_grad(&self, ahom: &SymMat) -> Poly {
        let d = self.dim;
        let mut out = Self::zero(d);
        for i in 0..d {
            let di = self.partial(i);
            for j in 0..d {
                out = out.add(&di.partial(j).scale(ahom.get(i, j)));
            }
        }
        out
    }
}

fn monomials_of_degree(dim: usize, degree: u32) -> Vec<[u8; MAX_DIM]> {
    let mut out = Vec::new();
    match dim {
        2 => {
            for e0 in 0..=degree {
                out.push([e0 as u8, (degree - e0) as u8, 0]);
            }
        }
        3 => {
            for e0 in 0..=degree {
                for e1 in 0..=(degree - e0) {
                    out.push([e0 as u8, e1 as u8, (degree - e0 - e1) as u8]);
                }
            }
        }
        _ => unreachable!(),
    }
    out
}

/// Basis of harmonic (Δ = 0) homogeneous polynomials of exact degree n, as
/// the integer null space of the Laplacian on degree-n monomials.
fn harmonic_homogeneous(dim: usize, degree: u32) -> Vec<Poly> {
    let src = monomials_of_degree(dim, degree);
    if degree < 2 {
        return src
            .iter()
            .map(|e| Poly::monomial(dim, &e[..dim], 1.0))
            .collect();
    }
    let dst = monomials_of_degree(dim, degree - 2);
    let dst_pos: BTreeMap<[u8; MAX_DIM], usize> =
        dst.iter().enumerate().map(|(i, e)| (*e, i)).collect();
    let rows = dst.len();
    let cols = src.len();
    let mut m = vec![0.0f64; rows * cols];
    for (col, e) in src.iter().enumerate() {
        for axis in 0..dim {
            if e[axis] >= 2 {
                let mut t = *e;
                t[axis] -= 2;
                let coef = (e[axis] as f64) * (e[axis] as f64 - 1.0);
                m[dst_pos[&t] * cols + col] += coef;
            }
        }
    }
    // Gaussian elimination with partial pivoting; entries are small
    // integers so this is numerically exact.
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    let mut row = 0usize;
    for col in 0..cols {
        let mut best = row;
        for r in row..rows {
            if m[r * cols + col].abs() > m[best * cols + col].abs() {
                best = r;
            }
        }
        if row >= rows || m[best * cols + col].abs() < 1e-9 {
            continue;
        }
        for c in 0..cols {
            m.swap(row * cols + c, best * cols + c);
        }
        let piv = m[row * cols + col];
        for r in 0..rows {
            if r != row && m[r * cols + col] != 0.0 {
                let f = m[r * cols + col] / piv;
                for c in 0..cols {
                    m[r * cols + c] -= f * m[row * cols + c];
                }
            }
        }
        pivots.push((row, col));
        row += 1;
        if row == rows {
            break;
        }
    }
    let pivot_cols: Vec<usize> = pivots.iter().map(|&(_, c)| c).collect();
    let mut basis = Vec::new();
    for free in 0..cols {
        if pivot_cols.contains(&free) {
            continue;
        }
        let mut coefs = vec![0.0; cols];
        coefs[free] = 1.0;
        for &(r, pc) in &pivots {
            coefs[pc] = -m[r * cols + free] / m[r * cols + pc];
        }
        let mut p = Poly::zero(dim);
        for (col, &c) in coefs.iter().enumerate() {
            if c != 0.0 {
                p.add_term(src[col], c);
            }
        }
        basis.push(p);
    }
    basis
}

/// Dimension of the space of harmonic polynomials of degree ≤ k in d
/// variables.
pub fn harmonic_space_dim(dim: usize, k: u32) -> usize {
    match dim {
        2 => (2 * k + 1) as usize,
        3 => (0..=k).map(|n| if n == 0 { 1 } else { (2 * n + 1) as usize }).sum(),
        _ => unreachable!(),
    }
}

/// Polynomials of degree ≤ k that are ā-harmonic: harmonic polynomials in
/// whitened coordinates y = ā^{-1/2} x pulled back to x.
#[derive(Debug, Clone)]
pub struct AHarmonicBasis {
    pub ahom: SymMat,
    pub degree: u32,
    pub elements: Vec<Poly>,
    whitening: SymMat,
}

impl AHarmonicBasis {
    pub fn whitening(&self) -> &SymMat {
        &self.whitening
    }
}

/// Builds the ā-harmonic basis of degree ≤ k. Errors if ā is not symmetric
/// positive definite or if a basis element fails the symbolic harmonicity
/// check.
pub fn build_basis(ahom: &SymMat, k: u32, dim: usize) -> Result<AHarmonicBasis> {
    if ahom.dim() != dim {
        return Err(invalid("ahom dimension mismatch"));
    }
    let eig = ahom.eigenvalues();
    if eig[0] <= 0.0 {
        return Err(invalid("ahom must be positive definite"));
    }
    let s = ahom.inv_sqrt()?;
    let mut elements = Vec::new();
    for n in 0..=k {
        for h in harmonic_homogeneous(dim, n) {
            let w = h.compose_linear(&s);
            let resid = w.div_a_grad(ahom);
            let scale = w.max_coef_abs().max(1.0);
            if resid.max_coef_abs() > 1e-12 * scale {
                return Err(Error::Singular(format!(
                    "basis element of degree {n} fails harmonicity: residual {}",
                    resid.max_coef_abs()
                )));
            }
            elements.push(w);
        }
    }
    if elements.len() != harmonic_space_dim(dim, k) {
        return Err(Error::Singular("harmonic space has wrong dimension".into()));
    }
    Ok(AHarmonicBasis { ahom: *ahom, degree: k, elements, whitening: s })
}

/// Cells of `grid` whose midpoints lie in the ball of radius r around
/// `center`.
pub fn ball_mask(grid: &CubeGrid, center: &[f64], r: f64) -> Vec<usize> {
    let dim = grid.dim();
    (0..grid.num_cells())
        .filter(|&c| {
            let mid = grid.cell_mid(c);
            let d2: f64 = (0..dim).map(|k| (mid[k] - center[k]).powi(2)).sum();
            d2 < r * r
        })
        .collect()
}

fn cell_center_values(v: &GridField, mask: &[usize]) -> Vec<f64> {
    let grid = v.grid;
    let nb = 1usize << grid.dim();
    mask.iter()
        .map(|&c| {
            let cm = grid.cell_multi(c);
            (0..nb).map(|corner| v.data[grid.cell_corner_node(&cm, corner)]).sum::<f64>()
                / nb as f64
        })
        .collect()
}

/// Normalized L² distance (cell-midpoint quadrature over the mask) from v
/// to the span of the basis, by modified Gram-Schmidt projection.
pub fn poly_distance(
    v: &GridField,
    center: &[f64],
    r: f64,
    basis: &AHarmonicBasis,
) -> Result<f64> {
    if v.layout != Layout::Nodal || v.rank != 1 {
        return Err(invalid("poly_distance expects a scalar nodal field"));
    }
    let grid = v.grid;
    let mask = ball_mask(&grid, center, r);
    if mask.is_empty() {
        return Err(invalid("empty ball mask"));
    }
    let m = mask.len() as f64;
    let dim = grid.dim();

    let mut columns: Vec<Vec<f64>> = basis
        .elements
        .iter()
        .map(|w| {
            mask.iter()
                .map(|&c| {
                    let mid = grid.cell_mid(c);
                    let local: Vec<f64> = (0..dim).map(|k| mid[k] - center[k]).collect();
                    w.eval(&local)
                })
                .collect()
        })
        .collect();
    let target = cell_center_values(v, &mask);

    let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / m;

    // modified Gram-Schmidt with one re-orthogonalization pass
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for col in columns.drain(..) {
        let mut w = col;
        for _pass in 0..2 {
            for q in &ortho {
                let proj = ip(&w, q);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= proj * qi;
                }
            }
        }
        let norm = ip(&w, &w).sqrt();
        if norm > 1e-13 {
            for wi in &mut w {
                *wi /= norm;
            }
            ortho.push(w);
        }
    }

    // subtract the projection in sample space (two passes); computing
    // ‖v‖² − Σ⟨v,q⟩² instead would cancel catastrophically near the span
    let mut resid = target;
    for _pass in 0..2 {
        for q in &ortho {
            let proj = ip(&resid, q);
            for (ri, qi) in resid.iter_mut().zip(q) {
                *ri -= proj * qi;
            }
        }
    }
    Ok(ip(&resid, &resid).max(0.0).sqrt())
}

/// D_k(r) over a list of radii, with ratios and a fitted log-log slope.
#[derive(Debug, Clone)]
pub struct RegularityCurve {
    pub k: u32,
    pub radii: Vec<f64>,
    /// D_k(r), normalized L² over the ball mask.
    pub values: Vec<f64>,
    /// D_k(r) / D_k(r_max).
    pub ratios: Vec<f64>,
    /// D_k(r) / ‖v‖_{L²(B_{R/2})}.
    pub normalized: Vec<f64>,
    /// Slope of log D_k vs log r, when all values are positive.
    pub slope: Option<f64>,
}

/// Produces an element of the discrete solution space on the cube by a
/// Dirichlet solve with polynomial boundary data (coordinates centered at
/// the cube center), then measures its distance to the ā-harmonic space on
/// balls of the given radii.
pub fn regularity_curve(
    grid: &CubeGrid,
    field: &CoefficientField,
    basis: &AHarmonicBasis,
    radii: &[f64],
    boundary: &Poly,
    tol: f64,
) -> Result<RegularityCurve> {
    let center = grid.center();
    let dim = grid.dim();
    let v = solve_dirichlet(
        grid,
        field,
        |x| {
            let local: Vec<f64> = (0..dim).map(|k| x[k] - center[k]).collect();
            boundary.eval(&local)
        },
        tol,
    )?;
    curve_of_field(&v, basis, radii)
}

/// Same as [`regularity_curve`] but for an already-computed field (e.g. a
/// polynomial interpolant in the constant-coefficient oracle).
pub fn curve_of_field(
    v: &GridField,
    basis: &AHarmonicBasis,
    radii: &[f64],
) -> Result<RegularityCurve> {
    let grid = v.grid;
    let center = grid.center();
    let half = 0.5 * grid.side() as f64;
    for &r in radii {
        if r * (grid.rho() as f64) < 8.0 {
            return Err(invalid(format!("radius {r} below 8 mesh cells")));
        }
        if r > half {
            return Err(invalid(format!("radius {r} exceeds half the cube side")));
        }
    }
    let mut values = Vec::with_capacity(radii.len());
    for &r in radii {
        values.push(poly_distance(v, &center[..grid.dim()], r, basis)?);
    }
    // normalization over the inscribed ball
    let mask = ball_mask(&grid, &center[..grid.dim()], half);
    let samples = cell_center_values(v, &mask);
    let vnorm =
        (samples.iter().map(|x| x * x).sum::<f64>() / mask.len() as f64).max(1e-300).sqrt();
    let dmax = *values.last().unwrap_or(&1.0);
    let ratios = values.iter().map(|d| if dmax > 0.0 { d / dmax } else { 0.0 }).collect();
    let normalized = values.iter().map(|d| d / vnorm).collect();

    let slope = if values.iter().all(|&d| d > 0.0) && radii.len() >= 2 {
        let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let ys: Vec<f64> = values.iter().map(|d| d.ln()).collect();
        let w = vec![1.0; xs.len()];
        weighted_line_fit(&xs, &ys, &w).ok().map(|(_, slope, _, _)| slope)
    } else {
        None
    };
    Ok(RegularityCurve { k: basis.degree, radii: radii.to_vec(), values, ratios, normalized, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::make_checkerboard;
    use crate::rng::Stream;

    #[test]
    fn classical_harmonics_in_2d() {
        let basis = build_basis(&SymMat::identity(2), 2, 2).unwrap();
        // span{1, x, y, xy, x² − y²}: dimension 5
        assert_eq!(basis.elements.len(), 5);
        assert_eq!(harmonic_space_dim(2, 2), 5);
        // each element is harmonic
        for w in &basis.elements {
            assert!(w.div_a_grad(&SymMat::identity(2)).max_coef_abs() < 1e-13);
        }
    }

    #[test]
    fn dimensions_in_3d() {
        assert_eq!(harmonic_space_dim(3, 0), 1);
        assert_eq!(harmonic_space_dim(3, 1), 4);
        assert_eq!(harmonic_space_dim(3, 2), 9);
        let basis = build_basis(&SymMat::diag(&[2.0, 1.0, 3.0]), 2, 3).unwrap();
        assert_eq!(basis.elements.len(), 9);
    }

    #[test]
    fn affines_are_always_harmonic() {
        let basis = build_basis(&SymMat::diag(&[4.0, 1.0]), 1, 2).unwrap();
        assert_eq!(basis.elements.len(), 3);
        for w in &basis.elements {
            assert!(w.degree() <= 1);
        }
    }

    #[test]
    fn anisotropic_basis_is_a_harmonic() {
        let ahom = SymMat::from_rows(2, &[4.0, 0.7, 0.7, 1.0]).unwrap();
        let basis = build_basis(&ahom, 3, 2).unwrap();
        assert_eq!(basis.elements.len(), 7);
        for w in &basis.elements {
            let resid = w.div_a_grad(&ahom).max_coef_abs();
            assert!(resid < 1e-12 * w.max_coef_abs().max(1.0), "residual {resid}");
        }
        assert!(build_basis(&SymMat::diag(&[1.0, -2.0]), 1, 2).is_err());
    }

    #[test]
    fn distance_vanishes_on_span() {
        let g = CubeGrid::new(2, &[0, 0], 8, 4).unwrap();
        let basis = build_basis(&SymMat::identity(2), 2, 2).unwrap();
        // v = x² − y² + 2xy + 3x − 1 around the center, an element of the span
        let center = g.center();
        let v = GridField::from_nodal_fn(g, |x| {
            let a = x[0] - center[0];
            let b = x[1] - center[1];
            a * a - b * b + 2.0 * a * b + 3.0 * a - 1.0
        });
        let d = poly_distance(&v, &center[..2], 3.0, &basis).unwrap();
        assert!(d < 1e-10, "distance {d}");
    }

    #[test]
    fn saddle_distance_matches_analytic_disc_integral() {
        // v = x² − y², k = 0: continuum D_0(r) = r²/√6; the cell-center
        // quadrature converges at rate O(h/r).
        let g = CubeGrid::new(2, &[0, 0], 12, 4).unwrap();
        let basis = build_basis(&SymMat::identity(2), 0, 2).unwrap();
        let center = g.center();
        let v = GridField::from_nodal_fn(g, |x| {
            let a = x[0] - center[0];
            let b = x[1] - center[1];
            a * a - b * b
        });
        let r = 5.0; // r·rho = 20 ≥ 16 cells
        let d = poly_distance(&v, &center[..2], r, &basis).unwrap();
        let exact = r * r / 6.0f64.sqrt();
        assert!((d - exact).abs() < 0.02 * exact, "D_0 {d} vs {exact}");
    }

    #[test]
    fn distance_decreases_in_k() {
        let g = CubeGrid::new(2, &[0, 0], 10, 4).unwrap();
        let center = g.center();
        let v = GridField::from_nodal_fn(g, |x| {
            let a = x[0] - center[0];
            let b = x[1] - center[1];
            (a * 0.8).sin() * (b * 0.5).cos()
        });
        let mut prev = f64::INFINITY;
        for k in 0..=3 {
            let basis = build_basis(&SymMat::identity(2), k, 2).unwrap();
            let d = poly_distance(&v, &center[..2], 4.0, &basis).unwrap();
            assert!(d <= prev + 1e-12, "k={k}: {d} > {prev}");
            prev = d;
        }
    }

    #[test]
    fn curve_slope_for_polynomial_inputs() {
        // v = ā-harmonic of degree k+1 → fitted slope ≈ k+1
        let ahom = SymMat::diag(&[4.0, 1.0]);
        let g = CubeGrid::new(2, &[0, 0], 48, 2).unwrap();
        let center = g.center();
        let radii = [6.0, 9.0, 13.0, 19.0];
        for k in 0..=2u32 {
            let big = build_basis(&ahom, k + 1, 2).unwrap();
            let w = big.elements.last().unwrap().clone();
            assert_eq!(w.degree(), k + 1);
            let v = GridField::from_nodal_fn(g, |x| {
                let local: Vec<f64> = (0..2).map(|i| x[i] - center[i]).collect();
                w.eval(&local)
            });
            let basis = build_basis(&ahom, k, 2).unwrap();
            let curve = curve_of_field(&v, &basis, &radii).unwrap();
            let slope = curve.slope.expect("positive distances");
            assert!(
                (slope - (k as f64 + 1.0)).abs() < 0.2,
                "k={k}: slope {slope}"
            );
        }
    }

    #[test]
    fn curve_zero_for_low_degree_inputs() {
        let ahom = SymMat::identity(2);
        let basis = build_basis(&ahom, 2, 2).unwrap();
        let g = CubeGrid::new(2, &[0, 0], 24, 2).unwrap();
        let center = g.center();
        let v = GridField::from_nodal_fn(g, |x| {
            let a = x[0] - center[0];
            let b = x[1] - center[1];
            a * b + 2.0 * a - b
        });
        let curve = curve_of_field(&v, &basis, &[5.0, 8.0]).unwrap();
        assert!(curve.values.iter().all(|&d| d < 1e-10), "{:?}", curve.values);
        assert!(curve.slope.is_none());
    }

    #[test]
    fn radius_validation() {
        let g = CubeGrid::new(2, &[0, 0], 24, 2).unwrap();
        let basis = build_basis(&SymMat::identity(2), 0, 2).unwrap();
        let v = GridField::from_nodal_fn(g, |x| x[0]);
        assert!(curve_of_field(&v, &basis, &[3.0]).is_err()); // < 8 cells
        assert!(curve_of_field(&v, &basis, &[13.0]).is_err()); // > side/2
    }

    #[test]
    fn dirichlet_solve_curve_on_checkerboard() {
        let field = make_checkerboard(2, 4.0, 0.5, 3, &[0, 0], &[24, 24]).unwrap();
        let g = CubeGrid::new(2, &[0, 0], 24, 2).unwrap();
        let basis = build_basis(&SymMat::diag(&[2.5, 2.5]), 0, 2).unwrap();
        let boundary = Poly::monomial(2, &[1, 0], 1.0);
        let curve =
            regularity_curve(&g, &field, &basis, &[4.0, 6.0, 9.0, 12.0], &boundary, 1e-9)
                .unwrap();
        assert_eq!(curve.values.len(), 4);
        assert!(curve.values.iter().all(|d| d.is_finite()));
    }

    #[test]
    fn norm_equivalence_constant_is_stable() {
        // sup_{B1} |∇^m w| ≤ C ‖w‖_{L1(B1)} on P_k: the empirical constant
        // over many normalized draws is stable across disjoint seed streams.
        let dim = 2;
        let k = 3u32;
        let mons: Vec<[u8; MAX_DIM]> =
            (0..=k).flat_map(|n| monomials_of_degree(dim, n)).collect();
        // quadrature mask over the unit ball
        let g = CubeGrid::new(2, &[-1, -1], 2, 16).unwrap();
        let mask = ball_mask(&g, &[0.0, 0.0], 1.0);
        let pts: Vec<[f64; 2]> = mask
            .iter()
            .map(|&c| {
                let m = g.cell_mid(c);
                [m[0], m[1]]
            })
            .collect();
        let empirical_max = |seed: u64| -> f64 {
            let mut stream = Stream::new(seed);
            let mut worst = 0.0f64;
            for _ in 0..10_000 {
                let mut w = Poly::zero(dim);
                for e in &mons {
                    w.add_term(*e, stream.uniform(-1.0, 1.0));
                }
                let l1: f64 =
                    pts.iter().map(|p| w.eval(p).abs()).sum::<f64>() / pts.len() as f64;
                if l1 < 1e-9 {
                    continue;
                }
                // gradient sup norm (m = 1)
                let dx = w.partial(0);
                let dy = w.partial(1);
                let sup = pts
                    .iter()
                    .map(|p| dx.eval(p).hypot(dy.eval(p)))
                    .fold(0.0f64, f64::max);
                worst = worst.max(sup / l1);
            }
            worst
        };
        let a = empirical_max(1);
        let b = empirical_max(2);
        assert!((a - b).abs() < 0.05 * a.max(b), "constants {a} vs {b}");
        assert!(a < 1e3, "constant blew up: {a}");
    }
}
