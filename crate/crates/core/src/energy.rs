//! The subadditive cell-problem quantities and the modulated energy.
//!
//! For a cube U and directions p, q:
//!   nu(U, p)  = min over v = ℓ_p on ∂U of  fint ½∇v·a∇v
//!   mu(U, q)  = min over all u of          fint (½∇u·a∇u − q·∇u)
//!   J(U, p, q) = nu − mu − p·q ≥ 0
//! J is also the maximum of the modulated functional
//!   𝒥(w) = fint (−½∇w·a∇w − p·a∇w + q·∇w)
//! over discrete solutions, attained at w = (mu minimizer) − (nu minimizer).
//! Because the discrete problems are themselves quadratic variational
//! problems on a conforming space, all the algebraic identities relating
//! these quantities hold exactly at the discrete level, up to solver
//! residuals.

use crate::error::{Error, Result};
use crate::field::{CoefficientField, FieldSpec};
use crate::grid::{
    assemble, gradient, laplace_form, linear_term_from_slope, mean_flux,
    mean_gradient, solve_spd, Constraint, CubeGrid, GridField, QuadraticForm,
};
use crate::linalg::{cholesky_solve, SymMat};
use crate::rng::{sample_key, Stream};

/// Identity-defect diagnostics for one realization.
#[derive(Debug, Clone, Copy)]
pub struct IdentityResiduals {
    /// |𝒥(u_max) − (nu − mu − p·q)|
    pub modulation: f64,
    /// |½⟨a∇u_max, ∇u_max⟩ − J|
    pub energy_form: f64,
    /// |½⟨−ap+q, ∇u_max⟩ − J|
    pub flux_form: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.modulation.max(self.energy_form).max(self.flux_form)
    }
}

/// nu, mu, J and their optimizers for one realization.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub nu: f64,
    pub mu: f64,
    pub j: f64,
    /// Minimizer of nu, equal to ℓ_p on the boundary.
    pub v_min: GridField,
    /// Minimizer of mu, zero-mean representative.
    pub u_min: GridField,
    /// Maximizer of the modulated functional: u_min − v_min.
    pub u_max: GridField,
    pub residuals: IdentityResiduals,
    /// 100 × the CG tolerance used; identity defects scale linearly with
    /// solver residuals.
    pub identity_tol: f64,
}

impl EnergyReport {
    /// Hard per-realization invariants; returns the list of violations.
    pub fn violations(&self, lambda_max: f64) -> Vec<String> {
        let mut out = Vec::new();
        if self.j < -1e-10 {
            out.push(format!("J = {} is negative", self.j));
        }
        let p2: f64 = self.p.iter().map(|x| x * x).sum();
        let q2: f64 = self.q.iter().map(|x| x * x).sum();
        if self.nu < 0.5 * p2 - self.identity_tol {
            out.push(format!("nu = {} below 0.5|p|^2 = {}", self.nu, 0.5 * p2));
        }
        if -self.mu < q2 / (2.0 * lambda_max) - self.identity_tol {
            out.push(format!("-mu = {} below |q|^2/(2Λ) = {}", -self.mu, q2 / (2.0 * lambda_max)));
        }
        if self.residuals.max() > self.identity_tol {
            out.push(format!(
                "identity defect {} above tolerance {}",
                self.residuals.max(),
                self.identity_tol
            ));
        }
        out
    }
}

fn dirichlet_plane(
    form: &QuadraticForm,
    grid: &CubeGrid,
    p: &[f64],
    tol: f64,
) -> Result<(f64, GridField)> {
    let mask = grid.boundary_mask();
    let plane = GridField::affine(*grid, p);
    let (v, _info) = solve_spd(
        form,
        Constraint::Dirichlet { mask: &mask, values: &plane.data },
        tol,
        Some(&plane.data),
    )?;
    let value = 0.5 * form.k.bilinear(&v.data, &v.data);
    Ok((value, v))
}

fn neumann_slope(
    form: &QuadraticForm,
    grid: &CubeGrid,
    q: &[f64],
    tol: f64,
) -> Result<(f64, GridField)> {
    let b = linear_term_from_slope(grid, q);
    let with_b = QuadraticForm { k: form.k.clone(), b, c: 0.0, grid: *grid };
    let (u, _info) = solve_spd(&with_b, Constraint::MeanZero, tol, None)?;
    let value = with_b.energy(&u.data);
    Ok((value, u))
}

/// The cell-problem energy: minimum of fint ½∇v·a∇v over v ∈ ℓ_p + H¹₀.
pub fn nu(grid: &CubeGrid, field: &CoefficientField, p: &[f64], tol: f64) -> Result<(f64, GridField)> {
    let form = assemble(grid, field)?;
    dirichlet_plane(&form, grid, p, tol)
}

/// The dual quantity: minimum of fint (½∇u·a∇u − q·∇u) over all u,
/// zero-mean representative returned. Always ≤ 0.
pub fn mu(grid: &CubeGrid, field: &CoefficientField, q: &[f64], tol: f64) -> Result<(f64, GridField)> {
    let form = assemble(grid, field)?;
    neumann_slope(&form, grid, q, tol)
}

/// The modulated functional 𝒥(w) = fint(−½∇w·a∇w − p·a∇w + q·∇w).
pub fn modulated_energy(
    form: &QuadraticForm,
    field: &CoefficientField,
    w: &GridField,
    p: &[f64],
    q: &[f64],
) -> Result<f64> {
    let mf = mean_flux(field, w)?;
    let mg = mean_gradient(w)?;
    let quad = 0.5 * form.k.bilinear(&w.data, &w.data);
    let lin: f64 = (0..p.len()).map(|i| q[i] * mg[i] - p[i] * mf[i]).sum();
    Ok(-quad + lin)
}

/// Computes J two ways — from the decomposition nu − mu − p·q and from the
/// modulated functional at u_max = u_min − v_min — and cross-checks the
/// energy and flux forms of the maximum.
pub fn j_quantity(
    grid: &CubeGrid,
    field: &CoefficientField,
    p: &[f64],
    q: &[f64],
    tol: f64,
) -> Result<EnergyReport> {
    let form = assemble(grid, field)?;
    let (nu_val, v_min) = dirichlet_plane(&form, grid, p, tol)?;
    let (mu_val, u_min) = neumann_slope(&form, grid, q, tol)?;
    let pq: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let j = nu_val - mu_val - pq;

    let mut u_max = u_min.clone();
    for (w, v) in u_max.data.iter_mut().zip(&v_min.data) {
        *w -= v;
    }

    let j_mod = modulated_energy(&form, field, &u_max, p, q)?;
    let j_energy = 0.5 * form.k.bilinear(&u_max.data, &u_max.data);
    let mf = mean_flux(field, &u_max)?;
    let mg = mean_gradient(&u_max)?;
    let j_flux: f64 = 0.5 * (0..p.len()).map(|i| q[i] * mg[i] - p[i] * mf[i]).sum::<f64>();

    Ok(EnergyReport {
        p: p.to_vec(),
        q: q.to_vec(),
        nu: nu_val,
        mu: mu_val,
        j,
        v_min,
        u_min,
        u_max,
        residuals: IdentityResiduals {
            modulation: (j_mod - j).abs(),
            energy_form: (j_energy - j).abs(),
            flux_form: (j_flux - j).abs(),
        },
        identity_tol: 100.0 * tol,
    })
}

/// A bank of discrete solutions with random boundary data, for testing the
/// first variation.
pub fn make_test_bank(
    grid: &CubeGrid,
    field: &CoefficientField,
    count: usize,
    seed: u64,
    tol: f64,
) -> Result<Vec<GridField>> {
    let form = assemble(grid, field)?;
    let mask = grid.boundary_mask();
    let mut bank = Vec::with_capacity(count);
    for i in 0..count {
        let mut stream = Stream::new(sample_key(seed, i as u64));
        let mut values = vec![0.0; grid.num_nodes()];
        for (n, slot) in values.iter_mut().enumerate() {
            if mask[n] {
                *slot = stream.uniform(-1.0, 1.0);
            }
        }
        let (phi, _) = solve_spd(
            &form,
            Constraint::Dirichlet { mask: &mask, values: &values },
            tol,
            Some(&values),
        )?;
        bank.push(phi);
    }
    Ok(bank)
}

/// max over test solutions φ of |⟨a∇u_max, ∇φ⟩ − ⟨−ap+q, ∇φ⟩| / ‖∇φ‖.
pub fn first_variation_residual(
    report: &EnergyReport,
    grid: &CubeGrid,
    field: &CoefficientField,
    bank: &[GridField],
) -> Result<f64> {
    let form = assemble(grid, field)?;
    let lap = laplace_form(grid);
    let mut worst = 0.0f64;
    for phi in bank {
        let lhs = form.k.bilinear(&phi.data, &report.u_max.data);
        let mg = mean_gradient(phi)?;
        let mf = mean_flux(field, phi)?;
        let rhs: f64 =
            (0..report.p.len()).map(|i| report.q[i] * mg[i] - report.p[i] * mf[i]).sum();
        let norm = lap.k.bilinear(&phi.data, &phi.data).sqrt();
        if norm > 0.0 {
            worst = worst.max((lhs - rhs).abs() / norm);
        }
    }
    Ok(worst)
}

/// Returns (J − 𝒥(u_max + φ), ½⟨∇φ, a∇φ⟩); the two agree for solutions φ.
pub fn second_variation_check(
    report: &EnergyReport,
    grid: &CubeGrid,
    field: &CoefficientField,
    phi: &GridField,
) -> Result<(f64, f64)> {
    let form = assemble(grid, field)?;
    let mut shifted = report.u_max.clone();
    for (w, v) in shifted.data.iter_mut().zip(&phi.data) {
        *w += v;
    }
    let lhs = report.j - modulated_energy(&form, field, &shifted, &report.p, &report.q)?;
    let rhs = 0.5 * form.k.bilinear(&phi.data, &phi.data);
    Ok((lhs, rhs))
}

/// Polarization and convexity diagnostics for a pair of direction pairs.
#[derive(Debug, Clone)]
pub struct PolarizationReport {
    /// |½J₁ + ½J₂ − J(mid) − ¼J(diff)|
    pub defect: f64,
    /// Gradient seminorm of u_max(mid) − ½(u_max₁ + u_max₂).
    pub maximizer_defect: f64,
    /// Λ(|Δp|² + |Δq|²) − (½J₁ + ½J₂ − J(mid)), must be ≥ −tol.
    pub upper_convexity_slack: f64,
    /// (½J₁ + ½J₂ − J(mid)) − ⅛|Δp|², when q₁ = q₂.
    pub p_convexity_slack: Option<f64>,
    /// (½J₁ + ½J₂ − J(mid)) − |Δq|²/(8Λ), when p₁ = p₂.
    pub q_convexity_slack: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn polarization_check(
    grid: &CubeGrid,
    field: &CoefficientField,
    p1: &[f64],
    q1: &[f64],
    p2: &[f64],
    q2: &[f64],
    tol: f64,
) -> Result<PolarizationReport> {
    let d = p1.len();
    let mid_p: Vec<f64> = (0..d).map(|i| 0.5 * (p1[i] + p2[i])).collect();
    let mid_q: Vec<f64> = (0..d).map(|i| 0.5 * (q1[i] + q2[i])).collect();
    let dif_p: Vec<f64> = (0..d).map(|i| p1[i] - p2[i]).collect();
    let dif_q: Vec<f64> = (0..d).map(|i| q1[i] - q2[i]).collect();

    let r1 = j_quantity(grid, field, p1, q1, tol)?;
    let r2 = j_quantity(grid, field, p2, q2, tol)?;
    let rm = j_quantity(grid, field, &mid_p, &mid_q, tol)?;
    let rd = j_quantity(grid, field, &dif_p, &dif_q, tol)?;

    let lhs = 0.5 * r1.j + 0.5 * r2.j - rm.j;
    let defect = (lhs - 0.25 * rd.j).abs();

    let lap = laplace_form(grid);
    let mut delta = rm.u_max.clone();
    for i in 0..delta.data.len() {
        delta.data[i] -= 0.5 * (r1.u_max.data[i] + r2.u_max.data[i]);
    }
    let maximizer_defect = lap.k.bilinear(&delta.data, &delta.data).max(0.0).sqrt();

    let lambda = field.band().lambda_max();
    let dp2: f64 = dif_p.iter().map(|x| x * x).sum();
    let dq2: f64 = dif_q.iter().map(|x| x * x).sum();
    let upper_convexity_slack = lambda * (dp2 + dq2) - lhs;
    let p_convexity_slack = if dif_q.iter().all(|&x| x == 0.0) {
        Some(lhs - dp2 / 8.0)
    } else {
        None
    };
    let q_convexity_slack = if dif_p.iter().all(|&x| x == 0.0) {
        Some(lhs - dq2 / (8.0 * lambda))
    } else {
        None
    };

    Ok(PolarizationReport {
        defect,
        maximizer_defect,
        upper_convexity_slack,
        p_convexity_slack,
        q_convexity_slack,
    })
}

/// Directional derivative values ∇J(p,q)(p',q') = ⟨−ap'+q', ∇u_max⟩.
pub fn gradient_of_j(
    report: &EnergyReport,
    grid: &CubeGrid,
    field: &CoefficientField,
    directions: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<f64>> {
    let _ = grid;
    let mg = mean_gradient(&report.u_max)?;
    let g = gradient(&report.u_max)?;
    let dim = report.p.len();
    // mean of a∇u_max
    let mut mf = vec![0.0; dim];
    let mut av = [0.0f64; 3];
    for c in 0..report.u_max.grid.num_cells() {
        let midp = report.u_max.grid.cell_mid(c);
        let a = field.matrix_at(&midp[..dim]);
        let gc: Vec<f64> = (0..dim).map(|i| g.get(c, i)).collect();
        a.mul_vec(&gc, &mut av[..dim]);
        for i in 0..dim {
            mf[i] += av[i];
        }
    }
    for v in &mut mf {
        *v /= report.u_max.grid.num_cells() as f64;
    }
    Ok(directions
        .iter()
        .map(|(dp, dq)| (0..dim).map(|i| dq[i] * mg[i] - dp[i] * mf[i]).sum())
        .collect())
}

/// Monte Carlo estimates of the effective matrices.
#[derive(Debug, Clone)]
pub struct EffectiveMatrices {
    /// Inverse of the quadratic-form matrix of Ê[J(□,0,q)].
    pub q_hat: SymMat,
    /// Inverse of the quadratic-form matrix of Ê[J(□,p,0)] = Ê[nu].
    pub p_hat: SymMat,
    /// 2 × quadratic-form matrix of Ê[nu(□,p)].
    pub ahom_hat: SymMat,
    /// Bootstrap standard errors, entry by entry.
    pub q_se: SymMat,
    pub p_se: SymMat,
    pub ahom_se: SymMat,
    /// max_i |∇_q Ê[J(□, P̂e_i, e_i)]|: the duality gap diagnostic.
    pub zero_qgrad_norm: f64,
    pub n_samples: usize,
}

fn quad_matrix_from_dir_values(dim: usize, dirs: &[Vec<f64>], vals: &[f64]) -> SymMat {
    // vals[k] = ½ dᵀ M d for each direction; basis dirs are e_i and e_i+e_j.
    let mut m = SymMat::zeros(dim);
    for i in 0..dim {
        m.set(i, i, 2.0 * vals[i]);
    }
    let mut k = dim;
    for i in 0..dim {
        for j in (i + 1)..dim {
            let mij = vals[k] - vals[i] - vals[j];
            m.set(i, j, mij);
            k += 1;
        }
    }
    let _ = dirs;
    m
}

fn invert_sym(m: &SymMat) -> Result<SymMat> {
    let d = m.dim();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = m.get(i, j);
        }
    }
    let mut inv = SymMat::zeros(d);
    for col in 0..d {
        let mut e = vec![0.0; d];
        e[col] = 1.0;
        let x = cholesky_solve(d, &a, &e)
            .map_err(|_| Error::Singular("effective matrix not positive definite".into()))?;
        for row in 0..d {
            if row <= col {
                inv.set(row, col, x[row]);
            }
        }
    }
    Ok(inv)
}

/// Estimates Q̂, P̂ and ā̂ by sampling J(□,0,q) and J(□,p,0) = nu at the
/// coordinate and mixed directions, with bootstrap standard errors.
pub fn estimate_effective(
    spec: &FieldSpec,
    grid: &CubeGrid,
    n_samples: usize,
    seed: u64,
    tol: f64,
) -> Result<EffectiveMatrices> {
    let dim = spec.dim;
    if n_samples == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        dirs.push(e);
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            e[j] = 1.0;
            dirs.push(e);
        }
    }
    let ndir = dirs.len();

    // per-sample rows: [nu(dir_0..), -mu(dir_0..)]
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let field = spec.realize(sample_key(seed, s as u64));
        let form = assemble(grid, &field)?;
        let mut row = Vec::with_capacity(2 * ndir);
        for d in &dirs {
            row.push(dirichlet_plane(&form, grid, d, tol)?.0);
        }
        for d in &dirs {
            row.push(-neumann_slope(&form, grid, d, tol)?.0);
        }
        rows.push(row);
    }

    let estimate = |sample_ids: &[usize]| -> Result<(SymMat, SymMat, SymMat)> {
        let mut mean = vec![0.0; 2 * ndir];
        for &s in sample_ids {
            for (k, v) in rows[s].iter().enumerate() {
                mean[k] += v;
            }
        }
        for v in &mut mean {
            *v /= sample_ids.len() as f64;
        }
        let n_bar = quad_matrix_from_dir_values(dim, &dirs, &mean[..ndir]);
        let m_bar = quad_matrix_from_dir_values(dim, &dirs, &mean[ndir..]);
        let q_hat = invert_sym(&m_bar)?;
        let p_hat = invert_sym(&n_bar)?;
        Ok((q_hat, p_hat, n_bar))
    };

    let all: Vec<usize> = (0..n_samples).collect();
    let (q_hat, p_hat, ahom_hat) = estimate(&all)?;

    // duality-gap diagnostic: ∇_q Ê[J(P̂q, q)] at q = e_i equals (M̄ − P̂)e_i
    let mean_m = {
        let mut mean = vec![0.0; ndir];
        for row in &rows {
            for k in 0..ndir {
                mean[k] += row[ndir + k];
            }
        }
        for v in &mut mean {
            *v /= n_samples as f64;
        }
        quad_matrix_from_dir_values(dim, &dirs, &mean)
    };
    let mut zero_qgrad_norm = 0.0f64;
    for i in 0..dim {
        let mut col = 0.0;
        for r in 0..dim {
            let v = mean_m.get(r, i) - p_hat.get(r, i);
            col += v * v;
        }
        zero_qgrad_norm = zero_qgrad_norm.max(col.sqrt());
    }

    // bootstrap standard errors
    let b_reps = 200;
    let mut stream = Stream::new(sample_key(seed, 0xB00_7u64));
    let mut acc_q = vec![Vec::new(); dim * dim];
    let mut acc_p = vec![Vec::new(); dim * dim];
    let mut acc_a = vec![Vec::new(); dim * dim];
    if n_samples > 1 {
        for _ in 0..b_reps {
            let ids: Vec<usize> = (0..n_samples).map(|_| stream.below(n_samples)).collect();
            if let Ok((bq, bp, ba)) = estimate(&ids) {
                for i in 0..dim {
                    for j in 0..dim {
                        acc_q[i * dim + j].push(bq.get(i, j));
                        acc_p[i * dim + j].push(bp.get(i, j));
                        acc_a[i * dim + j].push(ba.get(i, j));
                    }
                }
            }
        }
    }
    let sd = |v: &[f64]| -> f64 {
        if v.len() < 2 {
            return 0.0;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let mut q_se = SymMat::zeros(dim);
    let mut p_se = SymMat::zeros(dim);
    let mut ahom_se = SymMat::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            q_se.set(i, j, sd(&acc_q[i * dim + j]));
            p_se.set(i, j, sd(&acc_p[i * dim + j]));
            ahom_se.set(i, j, sd(&acc_a[i * dim + j]));
        }
    }

    Ok(EffectiveMatrices {
        q_hat,
        p_hat,
        ahom_hat,
        q_se,
        p_se,
        ahom_se,
        zero_qgrad_norm,
        n_samples,
    })
}
