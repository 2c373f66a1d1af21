//! Deterministic scalar objectives for the stochastic multiobjective allocation
//! problem.
//!
//! Every model is a function of three per-allocation quantities: the estimated
//! variances V̂ar_j, their estimated expectations Ê_j and the estimated covariance
//! matrix Ĉ of the variance vector. [`Objective`] evaluates a model and its
//! gradient in the (real-relaxed) sample sizes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{MomentSource, SurveyDesign};
use crate::error::{Error, Result};
use crate::estimators::{StratumTerms, VarCoefficient};
use crate::normal::normal_quantile;

/// Optimization direction for the probability (P) models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sense {
    #[default]
    Min,
    Max,
}

/// A scalarized allocation model. Characteristic indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Σ w_j Ê_j.
    WeightingE { w: Vec<f64> },
    /// k1 Σ w_j Ê_j + k2 sqrt(wᵀ Ĉ w).
    ModifiedE { w: Vec<f64>, k1: f64, k2: f64 },
    /// Σ w_j Ĉ_jj.
    WeightingV { w: Vec<f64> },
    /// Σ w_j (τ_j − Ê_j)/sqrt(Ĉ_jj) with per-characteristic `targets`, or
    /// (τ − Σ w_j Ê_j)/sqrt(wᵀ Ĉ w) with a pooled `tau_scalar`.
    WeightingP {
        w: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        targets: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau_scalar: Option<f64>,
        #[serde(default)]
        sense: Sense,
    },
    /// Σ w_j (Ê_j + Φ⁻¹(δ) sqrt(Ĉ_jj)).
    WeightingKataoka { w: Vec<f64>, delta: f64 },
    /// Σ w_j |V̂ar_j − t_j|.
    GoalProgramming { w: Vec<f64>, targets: Vec<f64> },
    /// Σ w_j |Ê_j + Φ⁻¹(δ) sqrt(Ĉ_jj) − τ_j|.
    GoalKataoka { w: Vec<f64>, targets: Vec<f64>, delta: f64 },
    /// V̂ar of one characteristic.
    SingleCharacteristic { characteristic: usize },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::WeightingE { .. } => "weighting-e",
            ModelSpec::ModifiedE { .. } => "modified-e",
            ModelSpec::WeightingV { .. } => "weighting-v",
            ModelSpec::WeightingP { .. } => "weighting-p",
            ModelSpec::WeightingKataoka { .. } => "weighting-kataoka",
            ModelSpec::GoalProgramming { .. } => "goal-programming",
            ModelSpec::GoalKataoka { .. } => "goal-kataoka",
            ModelSpec::SingleCharacteristic { .. } => "single-characteristic",
        }
    }

    /// Whether evaluation touches the fourth-moment matrices.
    pub fn needs_fourth_moments(&self) -> bool {
        match self {
            ModelSpec::ModifiedE { k2, .. } => *k2 != 0.0,
            ModelSpec::WeightingV { .. } | ModelSpec::WeightingP { .. } => true,
            ModelSpec::WeightingKataoka { delta, .. } | ModelSpec::GoalKataoka { delta, .. } => *delta != 0.5,
            _ => false,
        }
    }

    fn weights(&self) -> Option<&[f64]> {
        match self {
            ModelSpec::WeightingE { w }
            | ModelSpec::ModifiedE { w, .. }
            | ModelSpec::WeightingV { w }
            | ModelSpec::WeightingP { w, .. }
            | ModelSpec::WeightingKataoka { w, .. }
            | ModelSpec::GoalProgramming { w, .. }
            | ModelSpec::GoalKataoka { w, .. } => Some(w),
            ModelSpec::SingleCharacteristic { .. } => None,
        }
    }

    pub fn validate(&self, characteristics: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(format!("{}: {m}", self.name())));
        if let Some(w) = self.weights() {
            if w.len() != characteristics {
                return bad(format!("{} weights for {characteristics} characteristics", w.len()));
            }
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return bad("weights must be finite and nonnegative".into());
            }
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("weights must sum to 1".into());
            }
        }
        let targets_ok = |t: &[f64]| t.len() == characteristics && t.iter().all(|x| x.is_finite());
        match self {
            ModelSpec::ModifiedE { k1, k2, .. } => {
                if !(*k1 >= 0.0 && *k2 >= 0.0) || (k1 + k2 - 1.0).abs() > 1e-12 {
                    return bad(format!("k1 = {k1}, k2 = {k2} must be nonnegative and sum to 1"));
                }
            }
            ModelSpec::WeightingP { targets, tau_scalar, .. } => match (targets, tau_scalar) {
                (Some(t), None) if targets_ok(t) => {}
                (None, Some(tau)) if tau.is_finite() => {}
                (Some(_), Some(_)) => return bad("give either targets or tau_scalar, not both".into()),
                (None, None) => return bad("needs targets or tau_scalar".into()),
                _ => return bad(format!("targets must be {characteristics} finite values")),
            },
            ModelSpec::WeightingKataoka { delta, .. } => {
                if !(*delta > 0.0 && *delta < 1.0) {
                    return bad(format!("delta = {delta} must lie in (0, 1)"));
                }
            }
            ModelSpec::GoalProgramming { targets, .. } => {
                if !targets_ok(targets) {
                    return bad(format!("targets must be {characteristics} finite values"));
                }
            }
            ModelSpec::GoalKataoka { targets, delta, .. } => {
                if !targets_ok(targets) {
                    return bad(format!("targets must be {characteristics} finite values"));
                }
                if !(*delta > 0.0 && *delta < 1.0) {
                    return bad(format!("delta = {delta} must lie in (0, 1)"));
                }
            }
            ModelSpec::SingleCharacteristic { characteristic } if *characteristic >= characteristics => {
                return bad(format!("characteristic {characteristic} out of range"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Model parameters and moment provenance attached to an objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveMetadata {
    pub model: ModelSpec,
    pub coefficient: VarCoefficient,
    pub moment_sources: Vec<MomentSource>,
}

/// Over- and under-achievement of one goal: `plus − minus = g − τ`, `plus·minus = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalDeviation {
    pub plus: f64,
    pub minus: f64,
}

/// `d⁺ = (|g−τ| + (g−τ))/2`, `d⁻ = (|g−τ| − (g−τ))/2`.
pub fn goal_deviation(achieved: f64, target: f64) -> GoalDeviation {
    let diff = achieved - target;
    GoalDeviation {
        plus: 0.5 * (diff.abs() + diff),
        minus: 0.5 * (diff.abs() - diff),
    }
}

/// An evaluable scalar objective over allocations.
#[derive(Debug, Clone)]
pub struct Objective {
    design: SurveyDesign,
    model: ModelSpec,
    coefficient: VarCoefficient,
    quantile: f64,
}

/// Moment quantities at one point, plus their derivatives when requested.
struct Moments {
    vhat: Vec<f64>,
    ehat: Vec<f64>,
    cov: Option<DMatrix<f64>>,
}

/// Partial derivatives of a model value with respect to its moment inputs.
struct Partials {
    vhat: Vec<f64>,
    ehat: Vec<f64>,
    cov: Option<DMatrix<f64>>,
}

impl Objective {
    pub fn new(design: &SurveyDesign, model: ModelSpec, coefficient: VarCoefficient) -> Result<Self> {
        model.validate(design.characteristics())?;
        if model.needs_fourth_moments() {
            if let Some(s) = design.strata().iter().find(|s| s.m4().is_none()) {
                return Err(Error::MissingFourthMoments {
                    stratum: s.id().to_string(),
                });
            }
        }
        let quantile = match &model {
            ModelSpec::WeightingKataoka { delta, .. } | ModelSpec::GoalKataoka { delta, .. } => {
                normal_quantile(*delta)?
            }
            _ => 0.0,
        };
        Ok(Self {
            design: design.clone(),
            model,
            coefficient,
            quantile,
        })
    }

    pub fn design(&self) -> &SurveyDesign {
        &self.design
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn coefficient(&self) -> VarCoefficient {
        self.coefficient
    }

    pub fn metadata(&self) -> ObjectiveMetadata {
        ObjectiveMetadata {
            model: self.model.clone(),
            coefficient: self.coefficient,
            moment_sources: self.design.moment_sources(),
        }
    }

    /// Whether the model is differentiable; goal models are not at g = τ.
    pub fn is_smooth(&self) -> bool {
        !matches!(self.model, ModelSpec::GoalProgramming { .. } | ModelSpec::GoalKataoka { .. })
    }

    fn moments(&self, terms: &[StratumTerms]) -> Moments {
        let g = self.design.characteristics();
        let mut vhat = vec![0.0; g];
        let mut ehat = vec![0.0; g];
        for (t, s) in terms.iter().zip(self.design.strata()) {
            for (j, s2) in s.s2().into_iter().enumerate() {
                vhat[j] += t.vhat * s2;
                ehat[j] += t.ehat * s2;
            }
        }
        let cov = self.model.needs_fourth_moments().then(|| {
            let mut c = DMatrix::zeros(g, g);
            for (t, s) in terms.iter().zip(self.design.strata()) {
                c += s.m4_excess().expect("checked at construction") * t.cov;
            }
            c
        });
        Moments { vhat, ehat, cov }
    }

    /// `sqrt(x)` for a quantity that should be nonnegative; values within roundoff
    /// of `scale` below zero count as zero.
    fn root(&self, x: f64, scale: f64, n: &[f64]) -> Result<f64> {
        if x < 0.0 && x >= -1e-12 * scale {
            return Ok(0.0);
        }
        if x < 0.0 {
            return Err(Error::NegativeRadicand {
                value: x,
                allocation: n.to_vec(),
            });
        }
        Ok(x.sqrt())
    }

    /// Model value and, if `want_partials`, its partials in (V̂ar, Ê, Ĉ).
    fn value(&self, m: &Moments, n: &[f64], want_partials: bool) -> Result<(f64, Option<Partials>)> {
        let g = self.design.characteristics();
        let mut p = Partials {
            vhat: vec![0.0; g],
            ehat: vec![0.0; g],
            cov: m.cov.as_ref().map(|_| DMatrix::zeros(g, g)),
        };
        let value = match &self.model {
            ModelSpec::SingleCharacteristic { characteristic } => {
                p.vhat[*characteristic] = 1.0;
                m.vhat[*characteristic]
            }
            ModelSpec::WeightingE { w } => {
                p.ehat.copy_from_slice(w);
                dot(w, &m.ehat)
            }
            ModelSpec::ModifiedE { w, k1, k2 } => {
                let mut f = k1 * dot(w, &m.ehat);
                p.ehat.iter_mut().zip(w).for_each(|(d, wj)| *d = k1 * wj);
                if *k2 != 0.0 {
                    let c = m.cov.as_ref().expect("needs fourth moments");
                    let q = quad(w, c);
                    let sd = self.root(q, quad_abs(w, c), n)?;
                    f += k2 * sd;
                    if sd > 0.0 {
                        let pc = p.cov.as_mut().expect("allocated with cov");
                        for k in 0..g {
                            for l in 0..g {
                                pc[(k, l)] = k2 * w[k] * w[l] / (2.0 * sd);
                            }
                        }
                    }
                }
                f
            }
            ModelSpec::WeightingV { w } => {
                let c = m.cov.as_ref().expect("needs fourth moments");
                let pc = p.cov.as_mut().expect("allocated with cov");
                for j in 0..g {
                    pc[(j, j)] = w[j];
                }
                (0..g).map(|j| w[j] * c[(j, j)]).sum()
            }
            ModelSpec::WeightingP {
                w,
                targets,
                tau_scalar,
                sense,
            } => {
                let c = m.cov.as_ref().expect("needs fourth moments");
                let pc = p.cov.as_mut().expect("allocated with cov");
                let f = if let Some(tau) = tau_scalar {
                    let q = quad(w, c);
                    if !(q > 0.0) {
                        return Err(Error::DegenerateVariance {
                            characteristic: 0,
                            allocation: n.to_vec(),
                        });
                    }
                    let sd = q.sqrt();
                    let num = tau - dot(w, &m.ehat);
                    for j in 0..g {
                        p.ehat[j] = -w[j] / sd;
                    }
                    for k in 0..g {
                        for l in 0..g {
                            pc[(k, l)] = -num * w[k] * w[l] / (2.0 * q * sd);
                        }
                    }
                    num / sd
                } else {
                    let t = targets.as_ref().expect("validated");
                    let mut f = 0.0;
                    for j in 0..g {
                        let var = c[(j, j)];
                        if !(var > 0.0) {
                            return Err(Error::DegenerateVariance {
                                characteristic: j,
                                allocation: n.to_vec(),
                            });
                        }
                        let sd = var.sqrt();
                        let num = t[j] - m.ehat[j];
                        f += w[j] * num / sd;
                        p.ehat[j] = -w[j] / sd;
                        pc[(j, j)] = -w[j] * num / (2.0 * var * sd);
                    }
                    f
                };
                if *sense == Sense::Max {
                    p.ehat.iter_mut().for_each(|d| *d = -*d);
                    pc.iter_mut().for_each(|d| *d = -*d);
                    -f
                } else {
                    f
                }
            }
            ModelSpec::WeightingKataoka { w, .. } => {
                let z = self.quantile;
                p.ehat.copy_from_slice(w);
                let mut f = dot(w, &m.ehat);
                if z != 0.0 {
                    let c = m.cov.as_ref().expect("needs fourth moments");
                    let pc = p.cov.as_mut().expect("allocated with cov");
                    for j in 0..g {
                        let sd = self.root(c[(j, j)], c[(j, j)].abs(), n)?;
                        f += w[j] * z * sd;
                        if sd > 0.0 {
                            pc[(j, j)] = w[j] * z / (2.0 * sd);
                        }
                    }
                }
                f
            }
            ModelSpec::GoalProgramming { w, targets } => {
                let mut f = 0.0;
                for j in 0..g {
                    let d = goal_deviation(m.vhat[j], targets[j]);
                    f += w[j] * (d.plus + d.minus);
                }
                f
            }
            ModelSpec::GoalKataoka { w, targets, .. } => {
                let achieved = self.kataoka_levels(m, n)?;
                let mut f = 0.0;
                for j in 0..g {
                    let d = goal_deviation(achieved[j], targets[j]);
                    f += w[j] * (d.plus + d.minus);
                }
                f
            }
        };
        Ok((value, want_partials.then_some(p)))
    }

    fn kataoka_levels(&self, m: &Moments, n: &[f64]) -> Result<Vec<f64>> {
        let g = self.design.characteristics();
        let z = self.quantile;
        (0..g)
            .map(|j| {
                if z == 0.0 {
                    Ok(m.ehat[j])
                } else {
                    let c = m.cov.as_ref().expect("needs fourth moments");
                    Ok(m.ehat[j] + z * self.root(c[(j, j)], c[(j, j)].abs(), n)?)
                }
            })
            .collect()
    }

    /// Objective value at a (possibly fractional) allocation in the box `[2, N_h]`.
    pub fn evaluate(&self, n: &[f64]) -> Result<f64> {
        self.design.check_box(n)?;
        let terms = StratumTerms::compute(&self.design, n, self.coefficient);
        let m = self.moments(&terms);
        Ok(self.value(&m, n, false)?.0)
    }

    /// Gradient in n: analytic for smooth models, central differences with step
    /// `1e-4·n_h` (one-sided at the box faces) otherwise.
    pub fn gradient(&self, n: &[f64]) -> Result<Vec<f64>> {
        self.design.check_box(n)?;
        if !self.is_smooth() {
            return self.finite_difference_gradient(n);
        }
        let terms = StratumTerms::compute(&self.design, n, self.coefficient);
        let m = self.moments(&terms);
        let (_, p) = self.value(&m, n, true)?;
        let p = p.expect("partials requested");
        Ok(terms
            .iter()
            .zip(self.design.strata())
            .map(|(t, s)| {
                let s2 = s.s2();
                let mut d = t.d_vhat * dot(&p.vhat, &s2) + t.d_ehat * dot(&p.ehat, &s2);
                if let Some(pc) = &p.cov {
                    let excess = s.m4_excess().expect("checked at construction");
                    d += t.d_cov * pc.component_mul(&excess).sum();
                }
                d
            })
            .collect())
    }

    pub fn finite_difference_gradient(&self, n: &[f64]) -> Result<Vec<f64>> {
        let lo = self.design.lower_bounds();
        let hi = self.design.upper_bounds();
        let mut x = n.to_vec();
        let mut out = Vec::with_capacity(n.len());
        for h in 0..n.len() {
            let step = 1e-4 * n[h];
            let up = (n[h] + step).min(hi[h]);
            let dn = (n[h] - step).max(lo[h]);
            x[h] = up;
            let fu = self.evaluate(&x)?;
            x[h] = dn;
            let fd = self.evaluate(&x)?;
            x[h] = n[h];
            out.push(if up > dn { (fu - fd) / (up - dn) } else { 0.0 });
        }
        Ok(out)
    }

    /// Per-characteristic criterion vector underlying the scalarization, used for
    /// Pareto comparisons.
    pub fn components(&self, n: &[f64]) -> Result<Vec<f64>> {
        self.design.check_box(n)?;
        let g = self.design.characteristics();
        let terms = StratumTerms::compute(&self.design, n, self.coefficient);
        let m = self.moments(&terms);
        let diag = |j: usize| m.cov.as_ref().map(|c| c[(j, j)]).unwrap_or(0.0);
        Ok(match &self.model {
            ModelSpec::SingleCharacteristic { .. } | ModelSpec::GoalProgramming { .. } => m.vhat.clone(),
            ModelSpec::WeightingE { .. } => m.ehat.clone(),
            ModelSpec::ModifiedE { k1, k2, .. } => (0..g)
                .map(|j| Ok(k1 * m.ehat[j] + if *k2 != 0.0 { k2 * self.root(diag(j), diag(j).abs(), n)? } else { 0.0 }))
                .collect::<Result<_>>()?,
            ModelSpec::WeightingV { .. } => (0..g).map(diag).collect(),
            ModelSpec::WeightingP { targets, tau_scalar, sense, .. } => {
                let flip = if *sense == Sense::Max { -1.0 } else { 1.0 };
                (0..g)
                    .map(|j| {
                        let tau = targets.as_ref().map(|t| t[j]).or(*tau_scalar).expect("validated");
                        let var = diag(j);
                        if !(var > 0.0) {
                            return Err(Error::DegenerateVariance {
                                characteristic: j,
                                allocation: n.to_vec(),
                            });
                        }
                        Ok(flip * (tau - m.ehat[j]) / var.sqrt())
                    })
                    .collect::<Result<_>>()?
            }
            ModelSpec::WeightingKataoka { .. } | ModelSpec::GoalKataoka { .. } => self.kataoka_levels(&m, n)?,
        })
    }

    /// Goal deviations at `n` for goal-programming models, `None` otherwise.
    pub fn goal_deviations(&self, n: &[f64]) -> Result<Option<Vec<GoalDeviation>>> {
        let targets = match &self.model {
            ModelSpec::GoalProgramming { targets, .. } | ModelSpec::GoalKataoka { targets, .. } => targets,
            _ => return Ok(None),
        };
        let achieved = self.components(n)?;
        Ok(Some(
            achieved.iter().zip(targets).map(|(&g, &t)| goal_deviation(g, t)).collect(),
        ))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quad(w: &[f64], c: &DMatrix<f64>) -> f64 {
    let mut q = 0.0;
    for k in 0..w.len() {
        for l in 0..w.len() {
            q += w[k] * w[l] * c[(k, l)];
        }
    }
    q
}

fn quad_abs(w: &[f64], c: &DMatrix<f64>) -> f64 {
    let mut q = 0.0;
    for k in 0..w.len() {
        for l in 0..w.len() {
            q += (w[k] * w[l] * c[(k, l)]).abs();
        }
    }
    q
}

pub fn build_weighting_e(design: &SurveyDesign, w: Vec<f64>) -> Result<Objective> {
    Objective::new(design, ModelSpec::WeightingE { w }, VarCoefficient::AsPaper)
}

pub fn build_modified_e(
    design: &SurveyDesign,
    w: Vec<f64>,
    k1: f64,
    k2: f64,
    coefficient: VarCoefficient,
) -> Result<Objective> {
    Objective::new(design, ModelSpec::ModifiedE { w, k1, k2 }, coefficient)
}

pub fn build_weighting_v(design: &SurveyDesign, w: Vec<f64>, coefficient: VarCoefficient) -> Result<Objective> {
    Objective::new(design, ModelSpec::WeightingV { w }, coefficient)
}

/// Per-characteristic aspiration levels or a single pooled level.
#[derive(Debug, Clone, PartialEq)]
pub enum Aspiration {
    PerCharacteristic(Vec<f64>),
    Pooled(f64),
}

pub fn build_weighting_p(
    design: &SurveyDesign,
    w: Vec<f64>,
    aspiration: Aspiration,
    sense: Sense,
    coefficient: VarCoefficient,
) -> Result<Objective> {
    let (targets, tau_scalar) = match aspiration {
        Aspiration::PerCharacteristic(t) => (Some(t), None),
        Aspiration::Pooled(t) => (None, Some(t)),
    };
    Objective::new(
        design,
        ModelSpec::WeightingP {
            w,
            targets,
            tau_scalar,
            sense,
        },
        coefficient,
    )
}

pub fn build_weighting_kataoka(
    design: &SurveyDesign,
    w: Vec<f64>,
    delta: f64,
    coefficient: VarCoefficient,
) -> Result<Objective> {
    Objective::new(design, ModelSpec::WeightingKataoka { w, delta }, coefficient)
}

/// What a goal-programming model measures against its targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GoalFlavor {
    /// The estimated variances V̂ar_j.
    Variance,
    /// Kataoka levels Ê_j + Φ⁻¹(δ) sqrt(V̂ar[V̂ar_j]).
    Kataoka { delta: f64 },
}

pub fn build_goal_programming(
    design: &SurveyDesign,
    w: Vec<f64>,
    targets: Vec<f64>,
    flavor: GoalFlavor,
    coefficient: VarCoefficient,
) -> Result<Objective> {
    let model = match flavor {
        GoalFlavor::Variance => ModelSpec::GoalProgramming { w, targets },
        GoalFlavor::Kataoka { delta } => ModelSpec::GoalKataoka { w, targets, delta },
    };
    Objective::new(design, model, coefficient)
}

/// Keeps the candidates whose criterion vector no other candidate weakly
/// improves everywhere and strictly improves somewhere.
pub fn pareto_filter<T: Clone>(candidates: &[(T, Vec<f64>)]) -> Vec<(T, Vec<f64>)> {
    let dominates = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
    };
    candidates
        .iter()
        .filter(|(_, v)| !candidates.iter().any(|(_, u)| dominates(u, v)))
        .cloned()
        .collect()
}
