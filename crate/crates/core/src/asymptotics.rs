//! Monte Carlo check of the large-sample behaviour of the within-stratum
//! sample-variance vector under simple random sampling without replacement.
//!
//! For a finite population with mean vector Ȳ, variance vector 𝕊 (divisor N) and
//! fourth cross-moments M⁴ (divisor N), the vector
//! `ϱ = (Σ_{i∈s} (y_i^j − Ȳ^j)² / (n − 1))_j` has mean `n/(n−1)·𝕊` and covariance
//! `n/(n−1)²·(M⁴ − 𝕊𝕊')`, and is approximately multivariate normal for large n.
//! [`simulate`] draws repeated samples and compares the empirical moments and the
//! Mardia normality statistics against those targets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimators::unit_moments;
use crate::normal::{normal_cdf, normal_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `params[j] = (mean, sd)`.
    Normal,
    /// `exp(N(mu, sigma²))`, `params[j] = (mu, sigma)`.
    Lognormal,
    /// `params[j] = (low, high)`.
    Uniform,
}

/// One stratum of a synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum StratumPopulation {
    /// Unit values given directly, one length-G row per unit.
    Explicit { units: Vec<Vec<f64>> },
    /// Units drawn from a Gaussian copula with the given marginals.
    Generated {
        size: usize,
        family: Family,
        params: Vec<(f64, f64)>,
        correlation: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub strata: Vec<StratumPopulation>,
    pub seed: u64,
}

/// A fully enumerated stratum population.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    units: Vec<Vec<f64>>,
}

impl FinitePopulation {
    pub fn new(units: Vec<Vec<f64>>) -> Result<Self> {
        if units.len() < 2 {
            return Err(Error::Population(format!("{} units, need at least 2", units.len())));
        }
        let g = units[0].len();
        if g == 0 || units.iter().any(|u| u.len() != g) {
            return Err(Error::Population("units must share a nonzero number of values".into()));
        }
        if units.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Population("unit values must be finite".into()));
        }
        Ok(Self { units })
    }

    pub fn units(&self) -> &[Vec<f64>] {
        &self.units
    }

    pub fn size(&self) -> usize {
        self.units.len()
    }

    pub fn characteristics(&self) -> usize {
        self.units[0].len()
    }

    /// Ȳ, 𝕊 and M⁴, all with divisor N.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
        let n = self.size() as f64;
        let m = unit_moments(&self.units, self.characteristics(), n, n);
        let s = m.cov.diagonal().iter().copied().collect();
        (m.mean, s, m.m4)
    }

    /// Population correlation matrix.
    pub fn correlation(&self) -> DMatrix<f64> {
        let n = self.size() as f64;
        let m = unit_moments(&self.units, self.characteristics(), n, n);
        let g = self.characteristics();
        DMatrix::from_fn(g, g, |k, l| m.cov[(k, l)] / (m.cov[(k, k)] * m.cov[(l, l)]).sqrt())
    }
}

fn correlation_root(corr: &[Vec<f64>], g: usize) -> Result<DMatrix<f64>> {
    if corr.len() != g || corr.iter().any(|r| r.len() != g) {
        return Err(Error::Population(format!("correlation matrix must be {g}x{g}")));
    }
    let r = DMatrix::from_fn(g, g, |k, l| corr[k][l]);
    crate::design::check_symmetric(&r)?;
    if (0..g).any(|j| (r[(j, j)] - 1.0).abs() > 1e-12) {
        return Err(Error::Population("correlation matrix needs a unit diagonal".into()));
    }
    let eig = SymmetricEigen::new(r);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(Error::NotPositiveSemidefinite(min));
    }
    let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * roots)
}

/// Builds every stratum; generated strata use stream `h` of the spec's seed.
pub fn generate_population(spec: &PopulationSpec) -> Result<Vec<FinitePopulation>> {
    spec.strata
        .iter()
        .enumerate()
        .map(|(h, stratum)| match stratum {
            StratumPopulation::Explicit { units } => FinitePopulation::new(units.clone()),
            StratumPopulation::Generated {
                size,
                family,
                params,
                correlation,
            } => {
                let g = params.len();
                if g == 0 {
                    return Err(Error::Population("no characteristics".into()));
                }
                let root = correlation_root(correlation, g)?;
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(h as u64);
                let mut units = Vec::with_capacity(*size);
                for _ in 0..*size {
                    let eps = DVector::from_fn(g, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let z = &root * eps;
                    let unit = params
                        .iter()
                        .zip(z.iter())
                        .map(|(&(a, b), &zj)| match family {
                            Family::Normal => a + b * zj,
                            Family::Lognormal => (a + b * zj).exp(),
                            Family::Uniform => a + (b - a) * normal_cdf(zj),
                        })
                        .collect();
                    units.push(unit);
                }
                FinitePopulation::new(units)
            }
        })
        .collect()
}

/// Mean `n/(n−1)·𝕊` and covariance `n/(n−1)²·(M⁴ − 𝕊𝕊')` of ϱ.
pub fn theoretical_moments(population: &FinitePopulation, n: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if n < 2 {
        return Err(Error::Population(format!("sample size {n} is below 2")));
    }
    let (_, s, m4) = population.moments();
    let nf = n as f64;
    let mean = s.iter().map(|v| nf / (nf - 1.0) * v).collect();
    let sv = DVector::from_vec(s);
    let cov = (m4 - &sv * sv.transpose()) * (nf / ((nf - 1.0) * (nf - 1.0)));
    Ok((mean, cov))
}

/// Finite-population value of the max-sum ratio whose vanishing limit is the
/// Hájek-type condition for asymptotic normality of ϱ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HajekDiagnostic {
    /// Sum of the n largest `[(y_i − Ȳ)² − S²]²` over their sum across the population.
    pub ratio: f64,
    /// `N·[m⁴ − (S²)²]`.
    pub denominator: f64,
}

pub fn hajek_diagnostic(population: &FinitePopulation, n: usize) -> Result<Vec<HajekDiagnostic>> {
    let big_n = population.size();
    if n == 0 || n > big_n {
        return Err(Error::Population(format!("sample size {n} outside [1, {big_n}]")));
    }
    let (mean, s, _) = population.moments();
    (0..population.characteristics())
        .map(|j| {
            let mut terms: Vec<f64> = population
                .units
                .iter()
                .map(|u| {
                    let a = (u[j] - mean[j]).powi(2) - s[j];
                    a * a
                })
                .collect();
            let denominator: f64 = terms.iter().sum();
            if !(denominator > 0.0) {
                return Err(Error::Population(format!(
                    "characteristic {} has degenerate squared deviations",
                    j + 1
                )));
            }
            // the largest n summands maximize the partial sum over n-subsets
            if n < big_n {
                terms.select_nth_unstable_by(big_n - n, |a, b| a.total_cmp(b));
            }
            let top: f64 = terms[big_n - n..].iter().sum();
            Ok(HajekDiagnostic {
                ratio: top / denominator,
                denominator,
            })
        })
        .collect()
}

/// Mardia's multivariate skewness and kurtosis with their asymptotic null tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mardia {
    pub skewness: f64,
    pub kurtosis: f64,
    /// `n·b1/6`, asymptotically χ² with `df` degrees of freedom.
    pub skew_statistic: f64,
    pub df: f64,
    /// `(b2 − p(p+2)) / sqrt(8p(p+2)/n)`, asymptotically standard normal.
    pub kurt_statistic: f64,
}

impl Mardia {
    /// Upper χ² quantile for the skewness statistic at `level`.
    pub fn skew_critical(&self, level: f64) -> f64 {
        ChiSquared::new(self.df).expect("df > 0").inverse_cdf(level)
    }

    /// Two-sided normal quantile for the kurtosis statistic at `level`.
    pub fn kurt_critical(&self, level: f64) -> f64 {
        normal_quantile(0.5 + 0.5 * level).expect("level in (0, 1)")
    }

    pub fn skew_within(&self, level: f64) -> bool {
        self.skew_statistic <= self.skew_critical(level)
    }

    pub fn kurt_within(&self, level: f64) -> bool {
        self.kurt_statistic.abs() <= self.kurt_critical(level)
    }
}

/// Mardia statistics of a sample of p-vectors; `None` when the sample covariance
/// is singular.
pub fn mardia(samples: &[Vec<f64>]) -> Option<Mardia> {
    let n = samples.len();
    let p = samples.first()?.len();
    if n <= p {
        return None;
    }
    let nf = n as f64;
    let mut mean = DVector::zeros(p);
    for x in samples {
        mean += DVector::from_column_slice(x);
    }
    mean /= nf;
    let mut cov = DMatrix::zeros(p, p);
    for x in samples {
        let d = DVector::from_column_slice(x) - &mean;
        cov += &d * d.transpose();
    }
    cov /= nf;
    let chol = cov.cholesky()?;
    let l = chol.l();
    // whitened deviations u_i = L⁻¹ (x_i − x̄), so d_iᵀ S⁻¹ d_j = u_i · u_j
    let whitened: Vec<DVector<f64>> = samples
        .iter()
        .map(|x| {
            let d = DVector::from_column_slice(x) - &mean;
            l.solve_lower_triangular(&d).expect("cholesky factor is invertible")
        })
        .collect();
    // Σ_ij (u_i·u_j)³ = Σ_abc (Σ_i u_ia u_ib u_ic)²
    let mut tensor = vec![0.0; p * p * p];
    let mut b2 = 0.0;
    for u in &whitened {
        for a in 0..p {
            for b in 0..p {
                let ab = u[a] * u[b];
                for c in 0..p {
                    tensor[(a * p + b) * p + c] += ab * u[c];
                }
            }
        }
        b2 += u.norm_squared().powi(2);
    }
    let b1 = tensor.iter().map(|t| t * t).sum::<f64>() / (nf * nf);
    let b2 = b2 / nf;
    let pf = p as f64;
    Some(Mardia {
        skewness: b1,
        kurtosis: b2,
        skew_statistic: nf * b1 / 6.0,
        df: pf * (pf + 1.0) * (pf + 2.0) / 6.0,
        kurt_statistic: (b2 - pf * (pf + 2.0)) / (8.0 * pf * (pf + 2.0) / nf).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub reps: usize,
    pub n: usize,
    pub population_size: usize,
    /// Mean of ϱ over replicates.
    pub empirical_mean: Vec<f64>,
    /// Covariance of ϱ over replicates (divisor reps − 1).
    pub empirical_cov: Vec<Vec<f64>>,
    /// Standard errors of `empirical_mean`.
    pub standard_errors: Vec<f64>,
    pub theoretical_mean: Vec<f64>,
    pub theoretical_cov: Vec<Vec<f64>>,
    /// Mean of the sample-variance vector 𝔰 over replicates.
    pub sample_variance_mean: Vec<f64>,
    /// Mean of |𝔰 − ϱ| per characteristic.
    pub mean_abs_gap: Vec<f64>,
    pub mardia: Option<Mardia>,
    pub hajek: Option<Vec<HajekDiagnostic>>,
}

impl SimResult {
    /// `‖empirical − theoretical‖_F / ‖theoretical‖_F` for the covariance of ϱ.
    pub fn cov_relative_error(&self) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (er, tr) in self.empirical_cov.iter().zip(&self.theoretical_cov) {
            for (e, t) in er.iter().zip(tr) {
                num += (e - t) * (e - t);
                den += t * t;
            }
        }
        if den == 0.0 {
            if num == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (num / den).sqrt()
        }
    }

    /// Largest |empirical − theoretical| mean gap in standard errors.
    pub fn max_mean_z(&self) -> f64 {
        self.empirical_mean
            .iter()
            .zip(&self.theoretical_mean)
            .zip(&self.standard_errors)
            .map(|((e, t), se)| {
                let gap = (e - t).abs();
                if gap == 0.0 {
                    0.0
                } else {
                    gap / se
                }
            })
            .fold(0.0, f64::max)
    }
}

/// One replicate: draws n distinct units by a partial Fisher–Yates shuffle of
/// `scratch`, returns (ϱ, 𝔰), and restores `scratch` to the identity.
fn replicate(
    deviations: &[Vec<f64>],
    n: usize,
    rng: &mut ChaCha8Rng,
    scratch: &mut [u32],
    swaps: &mut Vec<usize>,
) -> (Vec<f64>, Vec<f64>) {
    let big_n = scratch.len();
    let g = deviations[0].len();
    swaps.clear();
    for i in 0..n {
        let k = rng.random_range(i..big_n);
        scratch.swap(i, k);
        swaps.push(k);
    }
    let mut sum = vec![0.0; g];
    let mut sum_sq = vec![0.0; g];
    for &idx in &scratch[..n] {
        for (j, d) in deviations[idx as usize].iter().enumerate() {
            sum[j] += d;
            sum_sq[j] += d * d;
        }
    }
    for (i, &k) in swaps.iter().enumerate().rev() {
        scratch.swap(i, k);
    }
    let nf = n as f64;
    let rho: Vec<f64> = sum_sq.iter().map(|s| s / (nf - 1.0)).collect();
    let s2: Vec<f64> = sum_sq
        .iter()
        .zip(&sum)
        .map(|(sq, s)| (sq - s * s / nf) / (nf - 1.0))
        .collect();
    (rho, s2)
}

/// Draws `reps` simple random samples of size `n` and summarizes ϱ and 𝔰.
///
/// Replicate `r` uses stream `r` of `seed`, so results do not depend on the
/// number of worker threads.
pub fn simulate(population: &FinitePopulation, n: usize, reps: usize, seed: u64) -> Result<SimResult> {
    let big_n = population.size();
    if n < 2 || n > big_n {
        return Err(Error::Population(format!("sample size {n} outside [2, {big_n}]")));
    }
    if reps < 100 {
        return Err(Error::Population(format!("{reps} replicates, need at least 100")));
    }
    if big_n > u32::MAX as usize {
        return Err(Error::Population("population too large".into()));
    }
    let (mean, _, _) = population.moments();
    let g = population.characteristics();
    let deviations: Vec<Vec<f64>> = population
        .units
        .iter()
        .map(|u| u.iter().zip(&mean).map(|(y, m)| y - m).collect())
        .collect();

    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..reps)
        .into_par_iter()
        .map_init(
            || ((0..big_n as u32).collect::<Vec<u32>>(), Vec::with_capacity(n)),
            |(scratch, swaps), r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r as u64);
                replicate(&deviations, n, &mut rng, scratch, swaps)
            },
        )
        .collect();

    let rf = reps as f64;
    let mut emp_mean = vec![0.0; g];
    let mut s_mean = vec![0.0; g];
    let mut gap = vec![0.0; g];
    for (rho, s2) in &draws {
        for j in 0..g {
            emp_mean[j] += rho[j] / rf;
            s_mean[j] += s2[j] / rf;
            gap[j] += (s2[j] - rho[j]).abs() / rf;
        }
    }
    let mut emp_cov = vec![vec![0.0; g]; g];
    for (rho, _) in &draws {
        for k in 0..g {
            for l in 0..g {
                emp_cov[k][l] += (rho[k] - emp_mean[k]) * (rho[l] - emp_mean[l]) / (rf - 1.0);
            }
        }
    }
    let standard_errors = (0..g).map(|j| (emp_cov[j][j] / rf).sqrt()).collect();
    let (theoretical_mean, theo_cov) = theoretical_moments(population, n)?;
    let rhos: Vec<Vec<f64>> = draws.into_iter().map(|(r, _)| r).collect();

    Ok(SimResult {
        reps,
        n,
        population_size: big_n,
        empirical_mean: emp_mean,
        empirical_cov: emp_cov,
        standard_errors,
        theoretical_mean,
        theoretical_cov: theo_cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        sample_variance_mean: s_mean,
        mean_abs_gap: gap,
        mardia: mardia(&rhos),
        hajek: hajek_diagnostic(population, n).ok(),
    })
}
