//! Monte Carlo campaign driver with mergeable sample sets, log-log rate
//! fitting, flux decorrelation, and empirical log-Laplace profiles.
//!
//! Determinism contract: sample i of a campaign draws its randomness from
//! hash(seed, i) alone, observations are stored by sample index, and the
//! merge operation is associative and commutative — so results are
//! byte-identical regardless of worker count or scheduling.

use crate::energy::nu;
use crate::error::{invalid, Error, Result};
use crate::field::FieldSpec;
use crate::grid::{mean_flux, CubeGrid};
use crate::linalg::weighted_line_fit;
use crate::rng::sample_key;
#[cfg(test)]
use crate::rng::Stream;

/// Seeded scalar observations from one experiment, one per realization,
/// stored by sample index so partial sets merge exactly.
#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub tag: String,
    /// (sample index, derived seed, observation), sorted by index.
    entries: Vec<(u64, u64, f64)>,
    /// (sample index, diagnostic) for samples whose solver failed.
    pub failures: Vec<(u64, String)>,
}

impl SampleSet {
    pub fn new(tag: impl Into<String>) -> Self {
        SampleSet { tag: tag.into(), entries: Vec::new(), failures: Vec::new() }
    }

    pub fn push(&mut self, index: u64, seed: u64, obs: f64) {
        self.entries.push((index, seed, obs));
        self.entries.sort_by_key(|e| e.0);
    }

    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn observations(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.2).collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.entries.iter().map(|e| e.2 * e.2).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.count() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let n = self.count();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.entries.iter().map(|e| (e.2 - m) * (e.2 - m)).sum::<f64>() / (n - 1) as f64
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count() as f64).sqrt()
    }

    /// Merges two disjoint partial sets; statistics are identical no matter
    /// how the samples were partitioned because entries re-sort by index.
    pub fn merge(mut self, other: SampleSet) -> SampleSet {
        self.entries.extend(other.entries);
        self.entries.sort_by_key(|e| e.0);
        self.failures.extend(other.failures);
        self.failures.sort_by_key(|e| e.0);
        self
    }
}

/// Runs `n` samples of a pure per-sample function. Sample i receives the
/// derived seed hash(seed, i). Worker count affects scheduling only, never
/// results; failures are recorded and the campaign continues.
pub fn run_campaign<F>(tag: &str, n: usize, seed: u64, workers: usize, f: F) -> SampleSet
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    let mut set = SampleSet::new(tag);
    let workers = workers.max(1).min(n.max(1));
    if workers == 1 {
        for i in 0..n {
            let s = sample_key(seed, i as u64);
            match f(s) {
                Ok(v) => set.entries.push((i as u64, s, v)),
                Err(e) => set.failures.push((i as u64, e.to_string())),
            }
        }
    } else {
        let chunks: Vec<Vec<u64>> = (0..workers)
            .map(|w| (0..n as u64).filter(|i| (*i as usize) % workers == w).collect())
            .collect();
        let results: Vec<Vec<(u64, u64, std::result::Result<f64, String>)>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .iter()
                    .map(|chunk| {
                        let f = &f;
                        scope.spawn(move || {
                            chunk
                                .iter()
                                .map(|&i| {
                                    let s = sample_key(seed, i);
                                    (i, s, f(s).map_err(|e| e.to_string()))
                                })
                                .collect()
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
        for part in results {
            for (i, s, r) in part {
                match r {
                    Ok(v) => set.entries.push((i, s, v)),
                    Err(e) => set.failures.push((i, e)),
                }
            }
        }
    }
    set.entries.sort_by_key(|e| e.0);
    set.failures.sort_by_key(|e| e.0);
    set
}

/// One point of a rate experiment.
#[derive(Debug, Clone, Copy)]
pub struct RatePoint {
    /// Cube volume |□| (or any size proxy).
    pub size: f64,
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Weighted log-log regression mean ≈ C·size^{−α}.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub points: Vec<RatePoint>,
    /// Decay exponent estimate (positive means decay).
    pub alpha_hat: f64,
    /// 95% confidence interval for alpha_hat.
    pub ci95: (f64, f64),
    pub r_squared: f64,
}

/// Fits the decay exponent from ≥ 3 sizes with ≥ 8 samples each, weighting
/// by inverse delta-method variances of the log means.
pub fn fit_rate(points: &[RatePoint]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(invalid("rate fit needs at least 3 sizes"));
    }
    if points.iter().any(|p| p.n < 8) {
        return Err(invalid("rate fit needs at least 8 samples per size"));
    }
    if points.iter().any(|p| p.mean <= 0.0) {
        return Err(invalid("rate fit needs positive means"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.size.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean.ln()).collect();
    let exact = points.iter().all(|p| p.std_error == 0.0);
    let ws: Vec<f64> = if exact {
        vec![1.0; points.len()]
    } else {
        points
            .iter()
            .map(|p| {
                let se_log = (p.std_error / p.mean).max(1e-12);
                1.0 / (se_log * se_log)
            })
            .collect()
    };
    let (_, slope, se_slope, r2) = weighted_line_fit(&xs, &ys, &ws)?;
    let alpha = -slope;
    let half = 1.96 * se_slope;
    Ok(RateFit {
        points: points.to_vec(),
        alpha_hat: alpha,
        ci95: (alpha - half, alpha + half),
        r_squared: r2,
    })
}

/// Empirical correlations of cube-averaged flux components between two
/// cubes at a given edge-to-edge lattice separation.
#[derive(Debug, Clone)]
pub struct DecorrelationReport {
    pub separation: i64,
    pub n: usize,
    /// corr(F₁ᵢ, F₂ⱼ) for components i, j.
    pub corr: Vec<Vec<f64>>,
    /// max |corr| over component pairs.
    pub max_abs_corr: f64,
}

fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
    let sx = (xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / n).sqrt();
    let sy = (ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / n).sqrt();
    if sx == 0.0 || sy == 0.0 {
        return 0.0;
    }
    cov / (sx * sy)
}

fn flux_of_cube(
    spec: &FieldSpec,
    seed: u64,
    lo: &[i64],
    side: i64,
    rho: u32,
    tol: f64,
) -> Result<Vec<f64>> {
    let field = spec.realize(seed);
    let grid = CubeGrid::new(spec.dim, lo, side, rho)?;
    let mut p = vec![0.0; spec.dim];
    p[0] = 1.0;
    let (_, v) = nu(&grid, &field, &p, tol)?;
    mean_flux(&field, &v)
}

/// Correlations of fint a∇v between the cube at the origin and a cube at
/// the given edge-to-edge gap along the first axis. Separation 0 compares
/// the cube with itself; at separation ≥ 1 the unit range of dependence
/// makes the two statistically independent.
pub fn flux_decorrelation(
    spec: &FieldSpec,
    side: i64,
    separation: i64,
    n: usize,
    seed: u64,
    rho: u32,
    tol: f64,
) -> Result<DecorrelationReport> {
    if separation < 0 {
        return Err(invalid("separation must be nonnegative"));
    }
    let dim = spec.dim;
    let mut f1 = vec![Vec::with_capacity(n); dim];
    let mut f2 = vec![Vec::with_capacity(n); dim];
    let lo1 = vec![0i64; dim];
    let mut lo2 = vec![0i64; dim];
    if separation > 0 {
        lo2[0] = side + separation;
    }
    for i in 0..n {
        let s = sample_key(seed, i as u64);
        let a = flux_of_cube(spec, s, &lo1, side, rho, tol)?;
        let b = if lo2 == lo1 {
            a.clone()
        } else {
            flux_of_cube(spec, s, &lo2, side, rho, tol)?
        };
        for k in 0..dim {
            f1[k].push(a[k]);
            f2[k].push(b[k]);
        }
    }
    let mut corr = vec![vec![0.0; dim]; dim];
    let mut max_abs = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            corr[i][j] = correlation(&f1[i], &f2[j]);
            max_abs = max_abs.max(corr[i][j].abs());
        }
    }
    Ok(DecorrelationReport { separation, n, corr, max_abs_corr: max_abs })
}

/// Variance of the first flux component over a single cube vs the average
/// over `count` disjoint cubes (unit separation along the first axis).
pub fn flux_variance_reduction(
    spec: &FieldSpec,
    side: i64,
    count: usize,
    n: usize,
    seed: u64,
    rho: u32,
    tol: f64,
) -> Result<(f64, f64)> {
    let dim = spec.dim;
    let mut singles = Vec::with_capacity(n * count);
    let mut averages = Vec::with_capacity(n);
    for i in 0..n {
        let s = sample_key(seed, i as u64);
        let mut acc = 0.0;
        for c in 0..count {
            let mut lo = vec![0i64; dim];
            lo[0] = c as i64 * (side + 1);
            let f = flux_of_cube(spec, s, &lo, side, rho, tol)?;
            singles.push(f[0]);
            acc += f[0];
        }
        averages.push(acc / count as f64);
    }
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
    };
    Ok((var(&singles), var(&averages)))
}

/// Empirical log-Laplace transform of centered, |□|^β-rescaled observations.
#[derive(Debug, Clone)]
pub struct LogLaplaceProfile {
    pub beta: f64,
    pub lambdas: Vec<f64>,
    /// ψ̂(λ) = log (1/n) Σ exp(λ·|□|^β(Xᵢ − X̄)).
    pub psi: Vec<f64>,
    /// Smallest C with ψ̂(λ) ≤ C·(1+λ²) on the grid.
    pub c_fit: f64,
}

pub const DEFAULT_LAMBDAS: [f64; 8] = [-2.0, -1.0, -0.5, -0.25, 0.25, 0.5, 1.0, 2.0];
pub const DEFAULT_BETAS: [f64; 3] = [0.25, 0.4, 0.49];

pub fn log_laplace(
    samples: &SampleSet,
    box_volume: f64,
    beta: f64,
    lambdas: &[f64],
) -> Result<LogLaplaceProfile> {
    if samples.count() < 2 {
        return Err(invalid("log-Laplace needs at least two observations"));
    }
    let obs = samples.observations();
    let mean = samples.mean();
    let scale = box_volume.powf(beta);
    let scaled: Vec<f64> = obs.iter().map(|x| scale * (x - mean)).collect();
    let max_abs = scaled.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut psi = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        if lam.abs() * max_abs > 50.0 {
            return Err(Error::InvalidInput(format!(
                "overflow guard: |λ|·max|X| = {} > 50",
                lam.abs() * max_abs
            )));
        }
        let m = scaled.iter().map(|x| (lam * x).exp()).sum::<f64>() / scaled.len() as f64;
        psi.push(m.ln());
    }
    let c_fit = lambdas
        .iter()
        .zip(&psi)
        .map(|(l, p)| p / (1.0 + l * l))
        .fold(0.0f64, f64::max);
    Ok(LogLaplaceProfile { beta, lambdas: lambdas.to_vec(), psi, c_fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn campaign_is_deterministic_and_worker_independent() {
        let f = |seed: u64| -> Result<f64> {
            let mut s = Stream::new(seed);
            Ok(s.next_f64())
        };
        let a = run_campaign("t", 50, 42, 1, f);
        let b = run_campaign("t", 50, 42, 4, f);
        assert_eq!(a.observations(), b.observations());
        assert_eq!(a.seeds(), b.seeds());
        let c = run_campaign("t", 1, 7, 1, f);
        let d = run_campaign("t", 1, 7, 1, f);
        assert_eq!(c.observations(), d.observations());
    }

    #[test]
    fn merge_matches_monolithic_run_exactly() {
        let f = |seed: u64| -> Result<f64> {
            let mut s = Stream::new(seed);
            Ok(s.uniform(-1.0, 1.0))
        };
        let full = run_campaign("t", 100, 9, 1, f);
        // split 60 + 40 by index parity-of-range instead: first 60, last 40
        let mut first = SampleSet::new("t");
        let mut second = SampleSet::new("t");
        for i in 0..100u64 {
            let s = sample_key(9, i);
            let v = f(s).unwrap();
            if i < 60 {
                first.push(i, s, v);
            } else {
                second.push(i, s, v);
            }
        }
        let merged = first.clone().merge(second.clone());
        let merged_rev = second.merge(first);
        assert_eq!(merged.observations(), full.observations());
        assert_eq!(merged_rev.observations(), full.observations());
        assert_eq!(merged.sum().to_bits(), full.sum().to_bits());
        assert_eq!(merged_rev.sum_sq().to_bits(), full.sum_sq().to_bits());
    }

    #[test]
    fn constant_experiment_has_zero_variance() {
        let set = run_campaign("const", 20, 1, 1, |_| Ok(2.5));
        assert_eq!(set.variance(), 0.0);
        assert_eq!(set.mean(), 2.5);
    }

    #[test]
    fn failures_are_recorded_and_campaign_continues() {
        let set = run_campaign("flaky", 10, 3, 2, |seed| {
            if seed % 3 == 0 {
                Err(invalid("synthetic failure"))
            } else {
                Ok(1.0)
            }
        });
        assert_eq!(set.count() + set.failures.len(), 10);
    }

    #[test]
    fn planted_slope_recovered_exactly() {
        let points: Vec<RatePoint> = [9.0f64, 81.0, 729.0, 6561.0]
            .iter()
            .map(|&v| RatePoint { size: v, mean: v.powf(-0.5), std_error: 0.0, n: 16 })
            .collect();
        let fit = fit_rate(&points).unwrap();
        assert!((fit.alpha_hat - 0.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        // constant data → α = 0
        let flat: Vec<RatePoint> = [9.0f64, 81.0, 729.0]
            .iter()
            .map(|&v| RatePoint { size: v, mean: 2.0, std_error: 0.0, n: 16 })
            .collect();
        assert!(fit_rate(&flat).unwrap().alpha_hat.abs() < 1e-12);
    }

    #[test]
    fn fit_validates_inputs() {
        let two: Vec<RatePoint> = (0..2)
            .map(|i| RatePoint { size: 9.0 * (i + 1) as f64, mean: 1.0, std_error: 0.1, n: 16 })
            .collect();
        assert!(fit_rate(&two).is_err());
        let thin: Vec<RatePoint> = (0..3)
            .map(|i| RatePoint { size: 9.0 * (i + 1) as f64, mean: 1.0, std_error: 0.1, n: 4 })
            .collect();
        assert!(fit_rate(&thin).is_err());
    }

    #[test]
    fn fit_covers_planted_slope_with_noise() {
        // synthetic noisy rates: the CI should contain the planted slope in
        // most repetitions
        let mut hits = 0;
        let reps = 100;
        for rep in 0..reps {
            let mut stream = Stream::new(rep);
            let points: Vec<RatePoint> = [9.0f64, 81.0, 729.0, 6561.0]
                .iter()
                .map(|&v| {
                    let se = 0.05 * v.powf(-0.7);
                    let noise = stream.next_gaussian() * se;
                    RatePoint { size: v, mean: v.powf(-0.7) + noise, std_error: se, n: 32 }
                })
                .collect();
            if let Ok(fit) = fit_rate(&points) {
                if fit.ci95.0 <= 0.7 && 0.7 <= fit.ci95.1 {
                    hits += 1;
                }
            }
        }
        assert!(hits >= 90, "coverage {hits}/{reps}");
    }

    #[test]
    fn log_laplace_gaussian_matches_closed_form() {
        let mut set = SampleSet::new("gauss");
        let mut stream = Stream::new(123);
        for i in 0..20_000u64 {
            set.push(i, i, stream.next_gaussian());
        }
        // box_volume = 1 so the scaling is inert
        let prof = log_laplace(&set, 1.0, 0.25, &[-1.0, -0.5, 0.5, 1.0]).unwrap();
        for (lam, psi) in prof.lambdas.iter().zip(&prof.psi) {
            let expect = 0.5 * lam * lam;
            assert!((psi - expect).abs() < 0.05, "λ={lam}: ψ {psi} vs {expect}");
        }
    }

    #[test]
    fn log_laplace_degenerate_and_guard() {
        let mut set = SampleSet::new("const");
        for i in 0..10u64 {
            set.push(i, i, 3.0);
        }
        let prof = log_laplace(&set, 81.0, 0.4, &DEFAULT_LAMBDAS).unwrap();
        assert!(prof.psi.iter().all(|p| p.abs() < 1e-12));
        assert_eq!(prof.c_fit, 0.0);

        let mut wild = SampleSet::new("wild");
        wild.push(0, 0, 0.0);
        wild.push(1, 1, 1e6);
        assert!(log_laplace(&wild, 81.0, 0.49, &[2.0]).is_err());
    }

    #[test]
    fn self_correlation_is_one() {
        let spec = FieldSpec::checkerboard(2, 4.0, 0.5, &[0, 0], &[20, 20]).unwrap();
        let rep = flux_decorrelation(&spec, 3, 0, 24, 5, 2, 1e-8).unwrap();
        assert!((rep.corr[0][0] - 1.0).abs() < 1e-12);
        assert!((rep.corr[1][1] - 1.0).abs() < 1e-12);
    }
}
