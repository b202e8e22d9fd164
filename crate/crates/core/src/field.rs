//! Random coefficient fields: symmetric matrices with spectrum in [1, Λ],
//! constant on unit lattice cells, stationary under integer translations,
//! and independent across distinct cells.
//!
//! Each cell's matrix is a pure function of (seed, cell), produced by a
//! counter-based hash, so regeneration is bit-identical, random access is
//! O(1), and independence across cells holds by construction.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{CubeGrid, MAX_DIM};
use crate::linalg::SymMat;
use crate::rng::{cell_key, Stream};

/// Houses the ellipticity constant Λ: admissible matrices have all
/// eigenvalues in [1, Λ].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityBand {
    lambda_max: f64,
}

impl EllipticityBand {
    pub fn new(lambda_max: f64) -> Result<Self> {
        if !(lambda_max >= 1.0) {
            return Err(invalid(format!("ellipticity constant {lambda_max} must be >= 1")));
        }
        Ok(EllipticityBand { lambda_max })
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn admits(&self, a: &SymMat, tol: f64) -> bool {
        a.within_band(self.lambda_max, tol)
    }
}

/// The sampling law of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Law {
    /// Each unit cell is I with probability 1−vf and Λ·I with probability
    /// vf, independently across cells.
    Checkerboard { volume_fraction: f64 },
    /// Deterministic layers normal to a coordinate axis, alternating a1/a2
    /// with layer width period/2. Used as an analytic oracle material.
    Laminate { axis: usize, a1: SymMat, a2: SymMat, period: f64 },
    /// a(x) ≡ A.
    Constant(SymMat),
    /// Each unit cell gets an independent diagonal matrix with entries
    /// uniform in [1, Λ]; a seeded custom law for stress tests.
    DiagUniform,
}

impl Law {
    pub fn tag(&self) -> u32 {
        match self {
            Law::Checkerboard { .. } => 1,
            Law::Laminate { .. } => 2,
            Law::Constant(_) => 3,
            Law::DiagUniform => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Law::Checkerboard { .. } => "checkerboard",
            Law::Laminate { .. } => "laminate",
            Law::Constant(_) => "constant",
            Law::DiagUniform => "diag-uniform",
        }
    }
}

/// Everything needed to realize a field: dimension, band, law, support box.
/// A campaign keeps one spec and realizes it with per-sample seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub dim: usize,
    pub lambda_max: f64,
    pub law: Law,
    pub lo: Vec<i64>,
    pub extent: Vec<i64>,
}

impl FieldSpec {
    pub fn checkerboard(
        dim: usize,
        lambda_max: f64,
        volume_fraction: f64,
        lo: &[i64],
        extent: &[i64],
    ) -> Result<Self> {
        EllipticityBand::new(lambda_max)?;
        if !(0.0..=1.0).contains(&volume_fraction) {
            return Err(invalid("volume fraction must lie in [0, 1]"));
        }
        let spec = FieldSpec {
            dim,
            lambda_max,
            law: Law::Checkerboard { volume_fraction },
            lo: lo.to_vec(),
            extent: extent.to_vec(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_DIM).contains(&self.dim) {
            return Err(invalid(format!("dimension {} not in {{2, 3}}", self.dim)));
        }
        EllipticityBand::new(self.lambda_max)?;
        if self.lo.len() != self.dim || self.extent.len() != self.dim {
            return Err(invalid("support box rank does not match dimension"));
        }
        if self.extent.iter().any(|&e| e < 1) {
            return Err(invalid("support box must have positive extent"));
        }
        match &self.law {
            Law::Checkerboard { volume_fraction } => {
                if !(0.0..=1.0).contains(volume_fraction) {
                    return Err(invalid("volume fraction must lie in [0, 1]"));
                }
            }
            Law::Laminate { axis, a1, a2, period } => {
                if *axis >= self.dim {
                    return Err(invalid("laminate axis out of range"));
                }
                if !(*period > 0.0) {
                    return Err(invalid("laminate period must be positive"));
                }
                for (name, a) in [("a1", a1), ("a2", a2)] {
                    if a.dim() != self.dim {
                        return Err(invalid(format!("laminate {name} has wrong dimension")));
                    }
                    if !a.within_band(self.lambda_max, 1e-12) {
                        return Err(invalid(format!(
                            "laminate {name} violates the ellipticity band [1, {}]",
                            self.lambda_max
                        )));
                    }
                }
            }
            Law::Constant(a) => {
                if a.dim() != self.dim {
                    return Err(invalid("constant matrix has wrong dimension"));
                }
                if !a.within_band(self.lambda_max, 1e-12) {
                    return Err(invalid("constant matrix violates the ellipticity band"));
                }
            }
            Law::DiagUniform => {}
        }
        Ok(())
    }

    pub fn realize(&self, seed: u64) -> CoefficientField {
        CoefficientField {
            dim: self.dim,
            band: EllipticityBand { lambda_max: self.lambda_max },
            law: self.law.clone(),
            seed,
            lo: self.lo.clone(),
            extent: self.extent.clone(),
            shift: [0; MAX_DIM],
            stored: None,
        }
    }
}

/// A realization of a coefficient field. Immutable after construction and
/// safe to share across workers; sampling is a pure function of
/// (seed, cell).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    dim: usize,
    band: EllipticityBand,
    law: Law,
    seed: u64,
    lo: Vec<i64>,
    extent: Vec<i64>,
    /// Translation offset: queries at z sample the generator at z + shift.
    shift: [i64; MAX_DIM],
    /// Materialized cell matrices (row-major per cell) for fields loaded
    /// from disk; indexed relative to `lo`.
    stored: Option<Vec<f64>>,
}

/// Canonical checkerboard: I with probability 1−vf, Λ·I with probability vf.
pub fn make_checkerboard(
    dim: usize,
    lambda_max: f64,
    volume_fraction: f64,
    seed: u64,
    lo: &[i64],
    extent: &[i64],
) -> Result<CoefficientField> {
    Ok(FieldSpec::checkerboard(dim, lambda_max, volume_fraction, lo, extent)?.realize(seed))
}

/// Deterministic laminate with layers normal to `axis`. The spectrum of
/// both phases must lie in [1, lambda_max].
pub fn make_laminate(
    dim: usize,
    axis: usize,
    a1: SymMat,
    a2: SymMat,
    period: f64,
    lambda_max: f64,
    lo: &[i64],
    extent: &[i64],
) -> Result<CoefficientField> {
    let spec = FieldSpec {
        dim,
        lambda_max,
        law: Law::Laminate { axis, a1, a2, period },
        lo: lo.to_vec(),
        extent: extent.to_vec(),
    };
    spec.validate()?;
    Ok(spec.realize(0))
}

impl CoefficientField {
    /// Field that is A everywhere, with an effectively unbounded support.
    pub fn constant(dim: usize, a: SymMat) -> Result<CoefficientField> {
        let eig = a.eigenvalues();
        let lambda = eig[dim - 1].max(1.0);
        let spec = FieldSpec {
            dim,
            lambda_max: lambda,
            law: Law::Constant(a),
            lo: vec![i64::MIN / 4; dim],
            extent: vec![i64::MAX / 2; dim],
        };
        spec.validate()?;
        Ok(spec.realize(0))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn band(&self) -> EllipticityBand {
        self.band
    }
    pub fn law(&self) -> &Law {
        &self.law
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn support_lo(&self) -> &[i64] {
        &self.lo
    }
    pub fn support_extent(&self) -> &[i64] {
        &self.extent
    }

    pub(crate) fn from_stored(
        dim: usize,
        lambda_max: f64,
        law: Law,
        seed: u64,
        lo: Vec<i64>,
        extent: Vec<i64>,
        cells: Vec<f64>,
    ) -> Result<CoefficientField> {
        let count: i64 = extent.iter().product();
        if cells.len() as i64 != count * (dim * dim) as i64 {
            return Err(Error::Format("stored cell count mismatch".into()));
        }
        Ok(CoefficientField {
            dim,
            band: EllipticityBand::new(lambda_max)?,
            law,
            seed,
            lo,
            extent,
            shift: [0; MAX_DIM],
            stored: Some(cells),
        })
    }

    /// The matrix on the unit cell containing z (lattice coordinates).
    pub fn cell(&self, z: &[i64]) -> SymMat {
        let mut x = [0.0f64; MAX_DIM];
        for k in 0..self.dim {
            x[k] = z[k] as f64 + 0.5;
        }
        self.matrix_at(&x[..self.dim])
    }

    /// The matrix at a physical point. Random laws are constant per unit
    /// cell; the laminate varies along its axis only.
    pub fn matrix_at(&self, x: &[f64]) -> SymMat {
        if let Some(stored) = &self.stored {
            let mut idx = 0usize;
            for k in (0..self.dim).rev() {
                let z = x[k].floor() as i64 + self.shift[k];
                let rel = z - self.lo[k];
                debug_assert!(rel >= 0 && rel < self.extent[k], "query outside stored support");
                idx = idx * self.extent[k] as usize + rel as usize;
            }
            let d2 = self.dim * self.dim;
            return SymMat::from_rows(self.dim, &stored[idx * d2..(idx + 1) * d2])
                .expect("stored matrix not symmetric");
        }
        match &self.law {
            Law::Constant(a) => *a,
            Law::Laminate { axis, a1, a2, period } => {
                let t = x[*axis] + self.shift[*axis] as f64;
                let layer = (2.0 * t / period).floor() as i64;
                if layer.rem_euclid(2) == 0 {
                    *a1
                } else {
                    *a2
                }
            }
            Law::Checkerboard { volume_fraction } => {
                let mut s = self.cell_stream(x);
                if s.next_f64() < *volume_fraction {
                    SymMat::scaled_identity(self.dim, self.band.lambda_max)
                } else {
                    SymMat::identity(self.dim)
                }
            }
            Law::DiagUniform => {
                let mut s = self.cell_stream(x);
                let mut m = SymMat::zeros(self.dim);
                for i in 0..self.dim {
                    m.set(i, i, s.uniform(1.0, self.band.lambda_max));
                }
                m
            }
        }
    }

    fn cell_stream(&self, x: &[f64]) -> Stream {
        let mut z = [0i64; MAX_DIM];
        for k in 0..self.dim {
            z[k] = (x[k].floor() as i64) + self.shift[k];
        }
        Stream::new(cell_key(self.seed, &z[..self.dim]))
    }

    /// The translated field T_z a: sampling the result at cell w equals
    /// sampling `self` at w + z. The support box moves accordingly.
    pub fn translate(&self, z: &[i64]) -> CoefficientField {
        let mut out = self.clone();
        for k in 0..self.dim {
            out.shift[k] += z[k];
            out.lo[k] -= z[k];
        }
        out
    }

    /// Errors unless every mesh cell of the grid can be sampled: the grid
    /// cube must lie inside the support box, and laminate layer boundaries
    /// must fall on mesh lines.
    pub fn check_grid_support(&self, grid: &CubeGrid) -> Result<()> {
        for k in 0..self.dim {
            let lo = grid.lo()[k];
            let hi = lo + grid.side();
            if lo < self.lo[k] || hi > self.lo[k] + self.extent[k] {
                return Err(invalid(format!(
                    "grid cube [{lo}, {hi}) exceeds field support on axis {k}"
                )));
            }
        }
        if self.stored.is_none() {
            if let Law::Laminate { period, .. } = &self.law {
                let w = 0.5 * period * grid.rho() as f64;
                if (w - w.round()).abs() > 1e-9 {
                    return Err(invalid(format!(
                        "laminate layer width {} does not align with mesh spacing {}",
                        0.5 * period,
                        grid.h()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Materializes the per-unit-cell matrices over the support box,
    /// row-major with the first axis fastest. Errors for laws that vary
    /// inside a unit cell (sub-cell laminates).
    pub fn materialize_cells(&self) -> Result<Vec<f64>> {
        if let Law::Laminate { period, .. } = &self.law {
            let w: f64 = 0.5 * period;
            if self.stored.is_none() && (w - w.round()).abs() > 1e-12 {
                return Err(invalid(
                    "laminate with sub-unit layers cannot be materialized per unit cell",
                ));
            }
        }
        let count: usize = self.extent.iter().map(|&e| e as usize).product();
        let d2 = self.dim * self.dim;
        let mut out = Vec::with_capacity(count * d2);
        let mut z = vec![0i64; self.dim];
        for flat in 0..count {
            let mut rest = flat;
            for k in 0..self.dim {
                let e = self.extent[k] as usize;
                z[k] = self.lo[k] + (rest % e) as i64;
                rest /= e;
            }
            let a = self.cell(&z);
            out.extend_from_slice(a.rows());
        }
        Ok(out)
    }

    /// Empirical fraction of high-phase (Λ·I) cells over the support box.
    /// Only meaningful for the checkerboard law.
    pub fn phase_fraction(&self) -> f64 {
        let count: usize = self.extent.iter().map(|&e| e as usize).product();
        let mut high = 0usize;
        let mut z = vec![0i64; self.dim];
        for flat in 0..count {
            let mut rest = flat;
            for k in 0..self.dim {
                let e = self.extent[k] as usize;
                z[k] = self.lo[k] + (rest % e) as i64;
                rest /= e;
            }
            if self.cell(&z).get(0, 0) > 1.5 {
                high += 1;
            }
        }
        high as f64 / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contrast_one_collapses_phases() {
        let f = make_checkerboard(2, 1.0, 0.5, 123, &[0, 0], &[10, 10]).unwrap();
        for z in [[0, 0], [3, 7], [9, 9]] {
            assert!(f.cell(&z).max_abs_diff(&SymMat::identity(2)) == 0.0);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_checkerboard(2, 0.5, 0.5, 0, &[0, 0], &[4, 4]).is_err());
        assert!(make_checkerboard(2, 4.0, 1.5, 0, &[0, 0], &[4, 4]).is_err());
        assert!(make_checkerboard(4, 4.0, 0.5, 0, &[0, 0, 0, 0], &[4, 4, 4, 4]).is_err());
        let bad = SymMat::scaled_identity(2, 0.5); // below the band
        assert!(make_laminate(2, 0, SymMat::identity(2), bad, 2.0, 4.0, &[0, 0], &[4, 4])
            .is_err());
    }

    #[test]
    fn checkerboard_phase_fraction_concentrates() {
        // 81x81 cells at vf = 0.5: binomial concentration within 3/sqrt(n).
        let f = make_checkerboard(2, 4.0, 0.5, 7, &[0, 0], &[81, 81]).unwrap();
        let frac = f.phase_fraction();
        assert!((frac - 0.5).abs() < 3.0 / (81.0f64 * 81.0).sqrt(), "fraction {frac}");
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = make_checkerboard(2, 4.0, 0.3, 99, &[-5, -5], &[20, 20]).unwrap();
        let b = make_checkerboard(2, 4.0, 0.3, 99, &[-5, -5], &[20, 20]).unwrap();
        assert_eq!(a.materialize_cells().unwrap(), b.materialize_cells().unwrap());
        let c = make_checkerboard(2, 4.0, 0.3, 100, &[-5, -5], &[20, 20]).unwrap();
        assert_ne!(a.materialize_cells().unwrap(), c.materialize_cells().unwrap());
    }

    #[test]
    fn cells_pass_the_band_check() {
        let f = make_checkerboard(3, 4.0, 0.5, 5, &[0, 0, 0], &[6, 6, 6]).unwrap();
        for z0 in 0..6 {
            for z1 in 0..6 {
                for z2 in 0..6 {
                    assert!(f.band().admits(&f.cell(&[z0, z1, z2]), 1e-12));
                }
            }
        }
        let g = FieldSpec {
            dim: 2,
            lambda_max: 4.0,
            law: Law::DiagUniform,
            lo: vec![0, 0],
            extent: vec![8, 8],
        }
        .realize(17);
        for z0 in 0..8 {
            for z1 in 0..8 {
                assert!(g.band().admits(&g.cell(&[z0, z1]), 1e-12));
            }
        }
    }

    #[test]
    fn translate_identity_and_group_law() {
        let f = make_checkerboard(2, 4.0, 0.5, 11, &[-10, -10], &[30, 30]).unwrap();
        let zero = f.translate(&[0, 0]);
        let back = f.translate(&[3, -2]).translate(&[-3, 2]);
        for z in [[0i64, 0], [5, -7], [-9, 12]] {
            assert_eq!(f.cell(&z), zero.cell(&z));
            assert_eq!(f.cell(&z), back.cell(&z));
        }
    }

    #[test]
    fn translate_shifts_samples() {
        let f = make_checkerboard(2, 4.0, 0.5, 11, &[-10, -10], &[30, 30]).unwrap();
        let t = f.translate(&[4, -3]);
        for z in [[0i64, 0], [2, 2], [-6, 9]] {
            assert_eq!(t.cell(&z), f.cell(&[z[0] + 4, z[1] - 3]));
        }
    }

    #[test]
    fn laminate_alternates_layers() {
        let a1 = SymMat::identity(2);
        let a2 = SymMat::scaled_identity(2, 4.0);
        let f = make_laminate(2, 0, a1, a2, 2.0, 4.0, &[0, 0], &[8, 8]).unwrap();
        assert_eq!(f.cell(&[0, 3]), a1);
        assert_eq!(f.cell(&[1, 3]), a2);
        assert_eq!(f.cell(&[2, 0]), a1);
        // depends only on x·axis
        assert_eq!(f.cell(&[5, 0]), f.cell(&[5, 7]));
    }

    #[test]
    fn independence_of_disjoint_cells() {
        // correlation of the phase indicator between two fixed cells at
        // lattice distance >= 1, across seeds
        let n = 400;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for seed in 0..n as u64 {
            let f = make_checkerboard(2, 4.0, 0.5, seed, &[0, 0], &[4, 4]).unwrap();
            xs.push(if f.cell(&[0, 0]).get(0, 0) > 1.5 { 1.0 } else { 0.0 });
            ys.push(if f.cell(&[2, 1]).get(0, 0) > 1.5 { 1.0 } else { 0.0 });
        }
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 =
            xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n as f64;
        let sx = (xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / n as f64).sqrt();
        let sy = (ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / n as f64).sqrt();
        let corr = cov / (sx * sy);
        assert!(corr.abs() <= 3.0 / (n as f64).sqrt(), "corr {corr}");
    }
}
