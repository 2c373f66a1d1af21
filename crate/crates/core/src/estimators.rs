//! Plug-in formulas for the stratified mean estimator and for its estimated
//! variance treated as a random quantity.
//!
//! All functions accept real-valued sample sizes so the continuous relaxation
//! can evaluate them; integrality is the allocator's concern.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{check_symmetric, StratumSummary, SurveyDesign};
use crate::error::{Error, Result};

/// How the per-stratum weight enters the covariance of the variance vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarCoefficient {
    /// `(W_h²/n_h − W_h/N) · n_h/(n_h−1)²`, linear in the weight term.
    #[default]
    AsPaper,
    /// `(W_h²/n_h − W_h/N)² · n_h/(n_h−1)²`, the textbook variance of a weighted sum.
    Squared,
}

/// Estimated moments of the variance vector at one allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStats {
    /// V̂ar(ȳ_ST^j).
    pub vhat: Vec<f64>,
    /// Ê[V̂ar(ȳ_ST^j)].
    pub ehat: Vec<f64>,
    /// V̂ar[V̂ar(ȳ_ST^j)], the diagonal of `vcov`; absent without fourth moments.
    pub vvar: Option<Vec<f64>>,
    /// Ĉov of the variance vector, row-major.
    pub vcov: Option<Vec<Vec<f64>>>,
}

/// Relative stratum sizes W_h = N_h / N.
pub fn stratum_weights(design: &SurveyDesign) -> Vec<f64> {
    let total = design.population_size() as f64;
    design.strata().iter().map(|s| s.size() as f64 / total).collect()
}

/// Sample moments of one stratum's unit-level data.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMoments {
    pub mean: Vec<f64>,
    /// Covariances with divisor `n_h − 1`; the diagonal is s².
    pub cov: DMatrix<f64>,
    /// Fourth central cross-moments with divisor `n_h`.
    pub m4: DMatrix<f64>,
}

impl RawMoments {
    pub fn s2(&self) -> Vec<f64> {
        self.cov.diagonal().iter().copied().collect()
    }

    /// Converts to a stratum summary tagged as raw-data moments.
    pub fn into_stratum(self, id: impl Into<String>, size: usize, cost: f64) -> Result<StratumSummary> {
        StratumSummary::new(id, size, cost, self.cov)?.with_m4(self.m4, crate::design::MomentSource::Raw)
    }
}

/// Means, covariances and fourth cross-moments for each stratum's units.
///
/// `units[h][i]` is the length-G value vector of unit `i` in stratum `h`.
pub fn moments_from_raw(units: &[Vec<Vec<f64>>]) -> Result<Vec<RawMoments>> {
    let g = units
        .iter()
        .flat_map(|s| s.first())
        .map(|u| u.len())
        .next()
        .ok_or_else(|| Error::InvalidStratum {
            stratum: "1".into(),
            reason: "no units".into(),
        })?;
    units
        .iter()
        .enumerate()
        .map(|(h, stratum)| {
            let bad = |reason: String| Error::InvalidStratum {
                stratum: (h + 1).to_string(),
                reason,
            };
            if stratum.len() < 2 {
                return Err(bad(format!("{} units, need at least 2", stratum.len())));
            }
            if let Some(u) = stratum.iter().find(|u| u.len() != g) {
                return Err(bad(format!("unit has {} values, expected {g}", u.len())));
            }
            Ok(unit_moments(stratum, g, (stratum.len() - 1) as f64, stratum.len() as f64))
        })
        .collect()
}

/// Moments with explicit divisors for the covariance and the fourth moments.
pub(crate) fn unit_moments(units: &[Vec<f64>], g: usize, cov_divisor: f64, m4_divisor: f64) -> RawMoments {
    let count = units.len() as f64;
    let mut mean = vec![0.0; g];
    for u in units {
        for (m, v) in mean.iter_mut().zip(u) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);

    let mut cov = DMatrix::zeros(g, g);
    let mut m4 = DMatrix::zeros(g, g);
    let mut dev = vec![0.0; g];
    for u in units {
        for j in 0..g {
            dev[j] = u[j] - mean[j];
        }
        for k in 0..g {
            for l in k..g {
                cov[(k, l)] += dev[k] * dev[l];
                m4[(k, l)] += dev[k] * dev[k] * dev[l] * dev[l];
            }
        }
    }
    for k in 0..g {
        for l in k..g {
            cov[(k, l)] /= cov_divisor;
            m4[(k, l)] /= m4_divisor;
            cov[(l, k)] = cov[(k, l)];
            m4[(l, k)] = m4[(k, l)];
        }
    }
    RawMoments { mean, cov, m4 }
}

fn positive_sizes(design: &SurveyDesign, n: &[f64]) -> Result<()> {
    if n.len() != design.num_strata() {
        return Err(Error::AllocationLength {
            expected: design.num_strata(),
            got: n.len(),
        });
    }
    for (h, (&x, s)) in n.iter().zip(design.strata()).enumerate() {
        if !(x > 0.0) {
            return Err(Error::AllocationOutOfBounds {
                stratum: h,
                value: x,
                lower: 1.0,
                upper: s.size() as f64,
            });
        }
    }
    Ok(())
}

/// V̂ar(ȳ_ST^j) = Σ_h W_h² s²_{hj}/n_h − Σ_h W_h s²_{hj}/N for every characteristic j.
pub fn vhat(design: &SurveyDesign, n: &[f64]) -> Result<Vec<f64>> {
    positive_sizes(design, n)?;
    let w = stratum_weights(design);
    let big_n = design.population_size() as f64;
    let mut out = vec![0.0; design.characteristics()];
    for ((s, &wh), &nh) in design.strata().iter().zip(&w).zip(n) {
        // W²/n − W/N written without cancellation, so a census gives exactly 0
        let coef = wh * (s.size() as f64 - nh) / (nh * big_n);
        for (o, s2) in out.iter_mut().zip(s.s2()) {
            *o += coef * s2;
        }
    }
    Ok(out)
}

/// Ê[V̂ar(ȳ_ST^j)] = Σ_h (W_h²/n_h − W_h/N) · n_h/(n_h−1) · s²_{hj}.
pub fn ehat_vhat(design: &SurveyDesign, n: &[f64]) -> Result<Vec<f64>> {
    design.check_box(n)?;
    let terms = StratumTerms::compute(design, n, VarCoefficient::AsPaper);
    let mut out = vec![0.0; design.characteristics()];
    for (t, s) in terms.iter().zip(design.strata()) {
        for (o, s2) in out.iter_mut().zip(s.s2()) {
            *o += t.ehat * s2;
        }
    }
    Ok(out)
}

/// Ĉov of the variance vector: Σ_h coef_h(n_h) · (m̂⁴_h − 𝔰_h 𝔰_h').
pub fn covhat_vu(design: &SurveyDesign, n: &[f64], coefficient: VarCoefficient) -> Result<DMatrix<f64>> {
    design.check_box(n)?;
    let g = design.characteristics();
    let terms = StratumTerms::compute(design, n, coefficient);
    let mut out = DMatrix::zeros(g, g);
    for (t, s) in terms.iter().zip(design.strata()) {
        let excess = s.m4_excess().ok_or_else(|| Error::MissingFourthMoments {
            stratum: s.id().to_string(),
        })?;
        out += excess * t.cov;
    }
    Ok(out)
}

/// V̂ar[V̂ar(ȳ_ST^j)], the diagonal of [`covhat_vu`].
pub fn varhat_vhat(design: &SurveyDesign, n: &[f64], coefficient: VarCoefficient) -> Result<Vec<f64>> {
    Ok(covhat_vu(design, n, coefficient)?.diagonal().iter().copied().collect())
}

/// All estimator moments at `n`. The dispersion fields are filled only when every
/// stratum carries fourth moments.
pub fn estimator_stats(design: &SurveyDesign, n: &[f64], coefficient: VarCoefficient) -> Result<EstimatorStats> {
    let vcov = if design.has_m4() {
        Some(covhat_vu(design, n, coefficient)?)
    } else {
        None
    };
    Ok(EstimatorStats {
        vhat: vhat(design, n)?,
        ehat: ehat_vhat(design, n)?,
        vvar: vcov.as_ref().map(|c| c.diagonal().iter().copied().collect()),
        vcov: vcov.map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect()),
    })
}

/// Fourth cross-moments of a normal vector with covariance `cov`:
/// `m4_{kl} = cov_kk cov_ll + 2 cov_kl²`.
pub fn gaussian_m4_proxy(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(Error::Asymmetric("covariance matrix is not square".into()));
    }
    check_symmetric(cov)?;
    let g = cov.nrows();
    Ok(DMatrix::from_fn(g, g, |k, l| {
        cov[(k, k)] * cov[(l, l)] + 2.0 * cov[(k, l)] * cov[(k, l)]
    }))
}

/// Neyman allocation for characteristic `j` under `Σ n_h = total`, with sizes held in
/// `[2, N_h]`: `n_h = clamp(κ N_h s_hj, 2, N_h)` with κ chosen to meet the total.
pub fn neyman_allocation(design: &SurveyDesign, j: usize, total: f64) -> Result<Vec<f64>> {
    if j >= design.characteristics() {
        return Err(Error::InvalidModel(format!(
            "characteristic index {j} out of range for G = {}",
            design.characteristics()
        )));
    }
    let scores: Vec<f64> = design
        .strata()
        .iter()
        .map(|s| s.size() as f64 * s.cov()[(j, j)].sqrt())
        .collect();
    if scores.iter().all(|&a| a == 0.0) {
        return Err(Error::Infeasible(format!(
            "characteristic {} has zero variance in every stratum",
            j + 1
        )));
    }
    proportional_in_box(&scores, &design.lower_bounds(), &design.upper_bounds(), total)
}

/// Solves `Σ clamp(κ a_h, lo_h, hi_h) = total` for κ ≥ 0 and returns the clamped vector.
pub(crate) fn proportional_in_box(scores: &[f64], lo: &[f64], hi: &[f64], total: f64) -> Result<Vec<f64>> {
    let min_total: f64 = lo.iter().sum();
    let max_total: f64 = hi.iter().sum();
    if total < min_total - 1e-9 || total > max_total + 1e-9 {
        return Err(Error::Infeasible(format!(
            "total {total} outside [{min_total}, {max_total}]"
        )));
    }
    let place = |kappa: f64| -> Vec<f64> {
        scores
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&a, (&l, &u))| (kappa * a).clamp(l, u))
            .collect()
    };
    let sum = |v: &[f64]| v.iter().sum::<f64>();

    // bracket κ, then identify the active sets and solve the free part exactly
    let mut kappa_hi = scores
        .iter()
        .zip(hi)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &u)| u / a)
        .fold(0.0f64, f64::max);
    if sum(&place(kappa_hi)) < total {
        // strata with zero score sit at their lower bound; only reachable when
        // total exceeds what the positive-score strata can absorb
        let mut out = place(kappa_hi);
        let mut rest = total - sum(&out);
        for (x, &u) in out.iter_mut().zip(hi) {
            let add = (u - *x).min(rest);
            *x += add;
            rest -= add;
        }
        return Ok(out);
    }
    let mut kappa_lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (kappa_lo + kappa_hi);
        if sum(&place(mid)) < total {
            kappa_lo = mid;
        } else {
            kappa_hi = mid;
        }
    }
    let kappa = 0.5 * (kappa_lo + kappa_hi);
    let mut fixed = 0.0;
    let mut free_score = 0.0;
    let mut is_free = vec![false; scores.len()];
    for (h, &a) in scores.iter().enumerate() {
        let x = kappa * a;
        if a > 0.0 && x > lo[h] && x < hi[h] {
            is_free[h] = true;
            free_score += a;
        } else {
            fixed += x.clamp(lo[h], hi[h]);
        }
    }
    if free_score == 0.0 {
        return Ok(place(kappa));
    }
    let kappa = (total - fixed) / free_score;
    Ok(scores
        .iter()
        .enumerate()
        .map(|(h, &a)| if is_free[h] { kappa * a } else { (kappa_hi * a).clamp(lo[h], hi[h]) })
        .collect())
}

/// Per-stratum coefficients of the estimator moments and their derivatives in n_h.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StratumTerms {
    /// `W²/n − W/N`, multiplies s² in V̂ar.
    pub vhat: f64,
    pub d_vhat: f64,
    /// `(W²/n − W/N) n/(n−1)`, multiplies s² in Ê.
    pub ehat: f64,
    pub d_ehat: f64,
    /// Multiplies `m4 − s s'` in Ĉov.
    pub cov: f64,
    pub d_cov: f64,
}

impl StratumTerms {
    pub fn compute(design: &SurveyDesign, n: &[f64], coefficient: VarCoefficient) -> Vec<Self> {
        let big_n = design.population_size() as f64;
        stratum_weights(design)
            .iter()
            .zip(design.strata())
            .zip(n)
            .map(|((&w, s), &x)| {
                let room = s.size() as f64 - x;
                let a = w * room / (x * big_n);
                let da = -w * w / (x * x);
                let m1 = x - 1.0;
                let ehat = w * room / (m1 * big_n);
                let d_ehat = (w / big_n - w * w) / (m1 * m1);
                let b = x / (m1 * m1);
                let db = -(x + 1.0) / (m1 * m1 * m1);
                let (cov, d_cov) = match coefficient {
                    VarCoefficient::AsPaper => (a * b, da * b + a * db),
                    VarCoefficient::Squared => (a * a * b, 2.0 * a * da * b + a * a * db),
                };
                StratumTerms {
                    vhat: a,
                    d_vhat: da,
                    ehat,
                    d_ehat,
                    cov,
                    d_cov,
                }
            })
            .collect()
    }
}
