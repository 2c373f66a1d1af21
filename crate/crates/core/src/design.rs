//! Survey design description: strata summaries, the resource constraint and
//! integer allocations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{gaussian_m4_proxy, moments_from_raw};

/// Smallest admissible per-stratum sample size.
pub const MIN_STRATUM_SAMPLE: usize = 2;

/// Where a stratum's fourth-moment matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentSource {
    /// Computed from unit-level data.
    Raw,
    /// Filled in from the covariance matrix under a normality assumption.
    Proxy,
    /// Read verbatim from the design file.
    Supplied,
}

/// One stratum's population size, unit cost and second/fourth sample moments.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumSummary {
    id: String,
    size: usize,
    cost: f64,
    cov: DMatrix<f64>,
    m4: Option<DMatrix<f64>>,
    m4_source: Option<MomentSource>,
}

impl StratumSummary {
    /// Builds a stratum from its covariance matrix; the variances are its diagonal.
    pub fn new(id: impl Into<String>, size: usize, cost: f64, cov: DMatrix<f64>) -> Result<Self> {
        let id = id.into();
        let bad = |reason: String| Error::InvalidStratum {
            stratum: id.clone(),
            reason,
        };
        if size < MIN_STRATUM_SAMPLE {
            return Err(bad(format!("N_h = {size} is below {MIN_STRATUM_SAMPLE}")));
        }
        if !(cost >= 0.0 && cost.is_finite()) {
            return Err(bad(format!("unit cost {cost} must be finite and nonnegative")));
        }
        if !cov.is_square() || cov.nrows() == 0 {
            return Err(bad("covariance matrix must be square and nonempty".into()));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(bad("covariance matrix has non-finite entries".into()));
        }
        for j in 0..cov.nrows() {
            if cov[(j, j)] < 0.0 {
                return Err(bad(format!("variance of characteristic {} is negative", j + 1)));
            }
        }
        check_symmetric(&cov).map_err(|e| bad(format!("covariance: {e}")))?;
        Ok(Self {
            id,
            size,
            cost,
            cov,
            m4: None,
            m4_source: None,
        })
    }

    /// Stratum with uncorrelated characteristics.
    pub fn uncorrelated(id: impl Into<String>, size: usize, cost: f64, s2: &[f64]) -> Result<Self> {
        Self::new(id, size, cost, DMatrix::from_diagonal(&s2.to_vec().into()))
    }

    /// Attaches a fourth-moment matrix `m4[k][l]`.
    pub fn with_m4(mut self, m4: DMatrix<f64>, source: MomentSource) -> Result<Self> {
        let g = self.characteristics();
        let bad = |reason: String| Error::InvalidStratum {
            stratum: self.id.clone(),
            reason,
        };
        if m4.nrows() != g || m4.ncols() != g {
            return Err(bad(format!("fourth-moment matrix must be {g}x{g}")));
        }
        check_symmetric(&m4).map_err(|e| bad(format!("fourth moments: {e}")))?;
        for j in 0..g {
            let s2 = self.cov[(j, j)];
            // relative slack for values that went through decimal text
            if m4[(j, j)] < s2 * s2 * (1.0 - 1e-12) {
                return Err(bad(format!(
                    "m4 of characteristic {} is {} < (s2)^2 = {}",
                    j + 1,
                    m4[(j, j)],
                    s2 * s2
                )));
            }
        }
        self.m4 = Some(m4);
        self.m4_source = Some(source);
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Population unit count N_h.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Cost per sampled unit c_h.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn characteristics(&self) -> usize {
        self.cov.nrows()
    }

    /// Within-stratum variances s²_{hj}.
    pub fn s2(&self) -> Vec<f64> {
        self.cov.diagonal().iter().copied().collect()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn m4(&self) -> Option<&DMatrix<f64>> {
        self.m4.as_ref()
    }

    pub fn m4_source(&self) -> Option<MomentSource> {
        self.m4_source
    }

    /// `m4 - s2 s2'`, the fourth-moment excess driving the variance of s².
    pub(crate) fn m4_excess(&self) -> Option<DMatrix<f64>> {
        let m4 = self.m4.as_ref()?;
        let s2 = self.cov.diagonal();
        Some(m4 - &s2 * s2.transpose())
    }
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for k in 0..m.nrows() {
        for l in (k + 1)..m.ncols() {
            if (m[(k, l)] - m[(l, k)]).abs() > 1e-12 * scale {
                return Err(Error::Asymmetric(format!(
                    "entry ({k},{l}) = {} differs from ({l},{k}) = {}",
                    m[(k, l)],
                    m[(l, k)]
                )));
            }
        }
    }
    Ok(())
}

/// The resource constraint on the allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    /// `c0 + Σ c_h n_h ≤ budget`; equality is generally not attainable with integers.
    Cost { budget: f64 },
    /// `Σ n_h = n`.
    TotalSize { n: usize },
}

/// Policy for strata that lack a fourth-moment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentPolicy {
    /// Fourth moments must be present in the input.
    Supplied,
    /// Missing fourth moments are filled with [`gaussian_m4_proxy`].
    #[default]
    Proxy,
    /// Fourth moments come from unit-level data.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDesign {
    strata: Vec<StratumSummary>,
    overhead: f64,
    constraint: Constraint,
}

impl SurveyDesign {
    pub fn new(strata: Vec<StratumSummary>, constraint: Constraint) -> Result<Self> {
        Self::with_overhead(strata, 0.0, constraint)
    }

    /// Design with a fixed overhead cost `c0`.
    pub fn with_overhead(strata: Vec<StratumSummary>, overhead: f64, constraint: Constraint) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::EmptyDesign);
        }
        let g = strata[0].characteristics();
        let mut seen = std::collections::HashSet::new();
        for s in &strata {
            if s.characteristics() != g {
                return Err(Error::InvalidStratum {
                    stratum: s.id.clone(),
                    reason: format!("has {} characteristics, expected {g}", s.characteristics()),
                });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidStratum {
                    stratum: s.id.clone(),
                    reason: "duplicate stratum id".into(),
                });
            }
        }
        if !(overhead >= 0.0 && overhead.is_finite()) {
            return Err(Error::Infeasible(format!("overhead cost {overhead} must be finite and nonnegative")));
        }
        let design = Self {
            strata,
            overhead,
            constraint,
        };
        design.check_feasible()?;
        Ok(design)
    }

    fn check_feasible(&self) -> Result<()> {
        let h = self.strata.len();
        match self.constraint {
            Constraint::TotalSize { n } => {
                let lo = MIN_STRATUM_SAMPLE * h;
                let hi = self.population_size();
                if n < lo || n > hi {
                    return Err(Error::Infeasible(format!(
                        "total sample size {n} outside [{lo}, {hi}] allowed by the stratum bounds"
                    )));
                }
            }
            Constraint::Cost { budget } => {
                let need = self.overhead + self.strata.iter().map(|s| s.cost * MIN_STRATUM_SAMPLE as f64).sum::<f64>();
                if !(budget.is_finite() && budget >= need) {
                    return Err(Error::Infeasible(format!(
                        "budget {budget} is below the minimum cost {need} of two units per stratum"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn strata(&self) -> &[StratumSummary] {
        &self.strata
    }

    pub fn num_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn characteristics(&self) -> usize {
        self.strata[0].characteristics()
    }

    pub fn overhead(&self) -> f64 {
        self.overhead
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    /// Same strata under a different constraint.
    pub fn with_constraint(&self, constraint: Constraint) -> Result<Self> {
        Self::with_overhead(self.strata.clone(), self.overhead, constraint)
    }

    /// N = Σ N_h.
    pub fn population_size(&self) -> usize {
        self.strata.iter().map(|s| s.size).sum()
    }

    pub fn lower_bounds(&self) -> Vec<f64> {
        vec![MIN_STRATUM_SAMPLE as f64; self.strata.len()]
    }

    pub fn upper_bounds(&self) -> Vec<f64> {
        self.strata.iter().map(|s| s.size as f64).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.strata.iter().map(|s| s.cost).collect()
    }

    /// Total cost `c0 + Σ c_h n_h`.
    pub fn cost_of(&self, n: &[f64]) -> f64 {
        self.overhead + self.strata.iter().zip(n).map(|(s, &x)| s.cost * x).sum::<f64>()
    }

    /// True when every stratum carries a fourth-moment matrix.
    pub fn has_m4(&self) -> bool {
        self.strata.iter().all(|s| s.m4.is_some())
    }

    /// Fills missing fourth moments according to `policy`.
    ///
    /// `Raw` expects the strata to already carry raw-data moments and so behaves like
    /// `Supplied` here.
    pub fn resolve_moments(mut self, policy: MomentPolicy) -> Result<Self> {
        for s in &mut self.strata {
            if s.m4.is_some() {
                continue;
            }
            match policy {
                MomentPolicy::Proxy => {
                    let m4 = gaussian_m4_proxy(&s.cov)?;
                    s.m4 = Some(m4);
                    s.m4_source = Some(MomentSource::Proxy);
                }
                MomentPolicy::Supplied | MomentPolicy::Raw => {
                    return Err(Error::MissingFourthMoments { stratum: s.id.clone() })
                }
            }
        }
        Ok(self)
    }

    /// Fills missing fourth moments from unit-level data keyed by stratum id.
    ///
    /// Strata that already carry fourth moments keep them.
    pub fn with_raw_moments(mut self, units: &[(String, Vec<Vec<f64>>)]) -> Result<Self> {
        for (id, _) in units {
            if !self.strata.iter().any(|s| &s.id == id) {
                return Err(Error::InvalidStratum {
                    stratum: id.clone(),
                    reason: "unit data for a stratum not in the design".into(),
                });
            }
        }
        for s in &mut self.strata {
            if s.m4.is_some() {
                continue;
            }
            let Some((_, rows)) = units.iter().find(|(id, _)| *id == s.id) else {
                continue;
            };
            let m4 = moments_from_raw(std::slice::from_ref(rows))
                .map_err(|e| Error::InvalidStratum {
                    stratum: s.id.clone(),
                    reason: e.to_string(),
                })?
                .remove(0)
                .m4;
            if m4.nrows() != s.characteristics() {
                return Err(Error::InvalidStratum {
                    stratum: s.id.clone(),
                    reason: format!("unit data has {} characteristics, expected {}", m4.nrows(), s.characteristics()),
                });
            }
            s.m4 = Some(m4);
            s.m4_source = Some(MomentSource::Raw);
        }
        Ok(self)
    }

    /// Distinct moment sources across strata, in first-seen order.
    pub fn moment_sources(&self) -> Vec<MomentSource> {
        let mut out = Vec::new();
        for s in &self.strata {
            if let Some(src) = s.m4_source {
                if !out.contains(&src) {
                    out.push(src);
                }
            }
        }
        out
    }

    /// Checks a real-valued allocation against the box `2 ≤ n_h ≤ N_h`.
    pub fn check_box(&self, n: &[f64]) -> Result<()> {
        if n.len() != self.strata.len() {
            return Err(Error::AllocationLength {
                expected: self.strata.len(),
                got: n.len(),
            });
        }
        for (h, (s, &x)) in self.strata.iter().zip(n).enumerate() {
            let upper = s.size as f64;
            if !(x >= MIN_STRATUM_SAMPLE as f64 && x <= upper) {
                return Err(Error::AllocationOutOfBounds {
                    stratum: h,
                    value: x,
                    lower: MIN_STRATUM_SAMPLE as f64,
                    upper,
                });
            }
        }
        Ok(())
    }
}

/// Integer sample sizes per stratum, `2 ≤ n_h ≤ N_h`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation(Vec<usize>);

impl Allocation {
    pub fn new(n: Vec<usize>, design: &SurveyDesign) -> Result<Self> {
        let real: Vec<f64> = n.iter().map(|&v| v as f64).collect();
        design.check_box(&real)?;
        Ok(Self(n))
    }

    pub(crate) fn new_unchecked(n: Vec<usize>) -> Self {
        Self(n)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn to_real(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl std::ops::Index<usize> for Allocation {
    type Output = usize;
    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}
