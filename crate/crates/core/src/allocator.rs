//! Integer allocation solver: a projected spectral-gradient solve of the
//! continuous relaxation, rounding onto the integer lattice, then steepest-descent
//! unit transfers. A brute-force enumerator serves as the oracle on small designs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{Allocation, Constraint, SurveyDesign, MIN_STRATUM_SAMPLE};
use crate::error::{Error, Result};
use crate::estimators::{estimator_stats, neyman_allocation, proportional_in_box, EstimatorStats, VarCoefficient};
use crate::scalarizers::{GoalDeviation, ModelSpec, Objective, ObjectiveMetadata};

/// Upper limit on the lattice size [`brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Number of seeded random starting points added to the deterministic ones.
    pub multistarts: usize,
    pub seed: u64,
    /// Largest unit count moved in one transfer during integer local search.
    pub neighborhood: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_iters: 10_000,
            multistarts: 8,
            seed: 0,
            neighborhood: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || self.multistarts == 0 || self.neighborhood == 0 || self.max_iters == 0 {
            return Err(Error::InvalidModel(
                "solver config needs rel_tol > 0 and positive multistarts, neighborhood and max_iters".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of the continuous relaxation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSolution {
    pub point: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Norm of the projected gradient step `P(x − ∇f) − x` at `point`.
    pub projected_gradient: f64,
    /// False only when the iteration cap was reached.
    pub converged: bool,
}

/// One accepted integer move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegerMove {
    /// Stratum giving units, or `None` for an addition funded by budget slack.
    pub from: Option<usize>,
    pub to: usize,
    pub units: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegerOrigin {
    Relaxed,
    Start,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub start_label: String,
    pub start: Vec<f64>,
    pub continuous: ContinuousSolution,
    /// Which real point was rounded: the relaxed optimum or the start itself.
    pub origin: IntegerOrigin,
    pub rounded: Vec<usize>,
    pub moves: Vec<IntegerMove>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub label: String,
    pub objective: Option<f64>,
    pub allocation: Option<Allocation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub allocation: Allocation,
    pub objective: f64,
    pub stats: EstimatorStats,
    /// Unspent budget for cost constraints, 0 for a fixed total.
    pub feasibility_slack: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal_deviations: Option<Vec<GoalDeviation>>,
    pub provenance: ObjectiveMetadata,
    pub trace: SolverTrace,
    pub starts: Vec<StartSummary>,
}

/// Per-stratum comparison of a solved allocation with a reference allocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationDiff {
    pub reference: Vec<usize>,
    pub solved: Vec<usize>,
    /// `solved − reference` per stratum.
    pub delta: Vec<i64>,
    pub max_abs_delta: u64,
    pub reference_total: usize,
    pub solved_total: usize,
}

pub fn diff_allocation(solved: &Allocation, reference: &[usize]) -> Result<AllocationDiff> {
    if solved.as_slice().len() != reference.len() {
        return Err(Error::AllocationLength {
            expected: solved.as_slice().len(),
            got: reference.len(),
        });
    }
    let delta: Vec<i64> = solved
        .as_slice()
        .iter()
        .zip(reference)
        .map(|(&s, &r)| s as i64 - r as i64)
        .collect();
    Ok(AllocationDiff {
        reference: reference.to_vec(),
        solved: solved.as_slice().to_vec(),
        max_abs_delta: delta.iter().map(|d| d.unsigned_abs()).max().unwrap_or(0),
        delta,
        reference_total: reference.iter().sum(),
        solved_total: solved.total(),
    })
}

/// Euclidean projection onto `{lo ≤ x ≤ hi, Σ c_h x_h = b}`, with c = 1 and b = n
/// for `TotalSize` and b = C − c0 for `Cost`. A budget that buys a full census
/// leaves only the box.
pub fn project(design: &SurveyDesign, y: &[f64]) -> Vec<f64> {
    let lo = design.lower_bounds();
    let hi = design.upper_bounds();
    let (weights, target, inequality) = match design.constraint() {
        Constraint::TotalSize { n } => (vec![1.0; y.len()], n as f64, false),
        Constraint::Cost { budget } => (design.costs(), budget - design.overhead(), true),
    };
    let at = |lambda: f64| -> Vec<f64> {
        y.iter()
            .zip(&weights)
            .zip(lo.iter().zip(&hi))
            .map(|((&v, &c), (&l, &u))| (v - lambda * c).clamp(l, u))
            .collect()
    };
    let load = |x: &[f64]| x.iter().zip(&weights).map(|(a, c)| a * c).sum::<f64>();

    // a budget is spent exactly unless it buys every unit, matching the maximal
    // utilization of the integer phase
    if inequality && load(&hi) <= target {
        return at(0.0);
    }
    // Σ c_h x_h(λ) is nonincreasing in λ
    let reach = y
        .iter()
        .zip(&weights)
        .zip(&hi)
        .filter(|((_, &c), _)| c > 0.0)
        .map(|((&v, &c), &u)| (v.abs() + u) / c)
        .fold(1.0f64, f64::max);
    let (mut a, mut b) = (-reach, reach);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if load(&at(mid)) > target {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= f64::EPSILON * reach {
            break;
        }
    }
    let lambda = 0.5 * (a + b);
    // exact multiplier on the identified free set
    let mut fixed = 0.0;
    let (mut cy, mut cc) = (0.0, 0.0);
    for h in 0..y.len() {
        let v = y[h] - lambda * weights[h];
        if weights[h] > 0.0 && v > lo[h] && v < hi[h] {
            cy += weights[h] * y[h];
            cc += weights[h] * weights[h];
        } else {
            fixed += weights[h] * v.clamp(lo[h], hi[h]);
        }
    }
    if cc > 0.0 {
        let exact = (cy - (target - fixed)) / cc;
        let x = at(exact);
        if (load(&x) - target).abs() <= (load(&at(lambda)) - target).abs() {
            return x;
        }
    }
    at(lambda)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projected spectral gradient with a nonmonotone Armijo search.
///
/// Stops when `‖P(x − ∇f) − x‖ ≤ rel_tol·(1 + |f|)`, when no descent step is
/// measurable in floating point, or at the iteration cap (flagged non-converged).
pub fn solve_continuous(
    objective: &Objective,
    design: &SurveyDesign,
    config: &SolverConfig,
    start: &[f64],
) -> Result<ContinuousSolution> {
    const MEMORY: usize = 10;
    const ARMIJO: f64 = 1e-4;
    const STEP_MIN: f64 = 1e-30;
    const STEP_MAX: f64 = 1e30;

    let mut x = project(design, start);
    let mut f = objective.evaluate(&x)?;
    let mut g = objective.gradient(&x)?;
    let mut history = vec![f];

    let pg_norm = |x: &[f64], g: &[f64]| {
        let trial: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        let p = project(design, &trial);
        norm(&p.iter().zip(x).map(|(a, b)| a - b).collect::<Vec<_>>())
    };
    let mut pg = pg_norm(&x, &g);
    let mut alpha = if pg > 0.0 { (1.0 / pg).clamp(STEP_MIN, STEP_MAX) } else { 1.0 };

    for iter in 0..config.max_iters {
        if pg <= config.rel_tol * (1.0 + f.abs()) {
            return Ok(ContinuousSolution {
                point: x,
                objective: f,
                iterations: iter,
                projected_gradient: pg,
                converged: true,
            });
        }
        let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - alpha * b).collect();
        let d: Vec<f64> = project(design, &trial).iter().zip(&x).map(|(a, b)| a - b).collect();
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        let f_ref = history.iter().cloned().fold(f64::MIN, f64::max);
        // tolerate roundoff in f so that gradient information keeps driving the
        // iterates once function differences are below working precision
        let noise = 1e-14 * f_ref.abs().max(f.abs());

        let mut lambda = 1.0;
        let mut accepted = None;
        while lambda > 1e-12 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + lambda * b).collect();
            if let Ok(fnew) = objective.evaluate(&xn) {
                if fnew <= f_ref + ARMIJO * lambda * slope + noise {
                    accepted = Some((xn, fnew));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            return Ok(ContinuousSolution {
                point: x,
                objective: f,
                iterations: iter,
                projected_gradient: pg,
                converged: true,
            });
        };
        let gn = objective.gradient(&xn)?;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sty: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let sts: f64 = s.iter().map(|a| a * a).sum();
        alpha = if sty > 0.0 { (sts / sty).clamp(STEP_MIN, STEP_MAX) } else { STEP_MAX.min(1e6 * alpha.max(1.0)) };

        let stalled = sts.sqrt() <= f64::EPSILON * (1.0 + norm(&x));
        x = xn;
        f = fnew;
        g = gn;
        pg = pg_norm(&x, &g);
        history.push(f);
        if history.len() > MEMORY {
            history.remove(0);
        }
        if stalled {
            return Ok(ContinuousSolution {
                point: x,
                objective: f,
                iterations: iter + 1,
                projected_gradient: pg,
                converged: true,
            });
        }
    }
    Ok(ContinuousSolution {
        point: x,
        objective: f,
        iterations: config.max_iters,
        projected_gradient: pg,
        converged: false,
    })
}

/// Objective at a lattice point; points where a ratio model is undefined score +∞
/// so that no search ever moves onto them.
fn eval_int(objective: &Objective, n: &[usize]) -> Result<f64> {
    match objective.evaluate(&n.iter().map(|&v| v as f64).collect::<Vec<_>>()) {
        Err(Error::DegenerateVariance { .. }) => Ok(f64::INFINITY),
        other => other,
    }
}

/// Rounds a relaxed allocation onto the lattice and improves it with unit transfers
/// until no transfer (of up to `neighborhood` units) lowers the objective.
pub fn integerize(real: &[f64], objective: &Objective, design: &SurveyDesign) -> Result<Allocation> {
    integerize_traced(real, objective, design, 1).map(|(a, _, _)| a)
}

fn integerize_traced(
    real: &[f64],
    objective: &Objective,
    design: &SurveyDesign,
    neighborhood: usize,
) -> Result<(Allocation, Vec<usize>, Vec<IntegerMove>)> {
    design.check_box(real)?;
    let sizes: Vec<usize> = design.strata().iter().map(|s| s.size()).collect();
    let mut n: Vec<usize> = real
        .iter()
        .zip(&sizes)
        .map(|(&x, &u)| (x.floor() as usize).clamp(MIN_STRATUM_SAMPLE, u))
        .collect();
    let mut moves = Vec::new();

    match design.constraint() {
        Constraint::TotalSize { n: total } => {
            // largest remainder, ties to the lower index
            let mut order: Vec<usize> = (0..n.len()).collect();
            order.sort_by(|&a, &b| {
                let ra = real[a] - real[a].floor();
                let rb = real[b] - real[b].floor();
                rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
            });
            let mut assigned: usize = n.iter().sum();
            while assigned < total {
                let before = assigned;
                for &h in &order {
                    if assigned == total {
                        break;
                    }
                    if n[h] < sizes[h] {
                        n[h] += 1;
                        assigned += 1;
                    }
                }
                if assigned == before {
                    return Err(Error::Infeasible("no integer point meets the total size".into()));
                }
            }
            while assigned > total {
                let before = assigned;
                for &h in order.iter().rev() {
                    if assigned == total {
                        break;
                    }
                    if n[h] > MIN_STRATUM_SAMPLE {
                        n[h] -= 1;
                        assigned -= 1;
                    }
                }
                if assigned == before {
                    return Err(Error::Infeasible("no integer point meets the total size".into()));
                }
            }
        }
        Constraint::Cost { budget } => {
            let cost = |n: &[usize]| design.cost_of(&n.iter().map(|&v| v as f64).collect::<Vec<_>>());
            if cost(&n) > budget * (1.0 + 1e-12) {
                return Err(Error::Infeasible("rounded allocation exceeds the budget".into()));
            }
        }
    }
    let rounded = n.clone();

    let mut current = eval_int(objective, &n)?;
    refill(objective, design, &mut n, &mut current, &mut moves)?;
    // steepest descent; every step strictly lowers the objective over a finite
    // lattice, so the loop terminates
    loop {
        let step = match best_transfer(objective, design, &n, current, neighborhood)? {
            Some(step) => Some(step),
            None => best_drop_refill(objective, design, &n, current)?,
        };
        let Some((next, value, step_moves)) = step else {
            break;
        };
        n = next;
        current = value;
        moves.extend(step_moves);
    }
    Ok((Allocation::new_unchecked(n), rounded, moves))
}

fn within_budget(design: &SurveyDesign, n: &[usize]) -> bool {
    match design.constraint() {
        Constraint::TotalSize { .. } => true,
        Constraint::Cost { budget } => {
            design.cost_of(&n.iter().map(|&v| v as f64).collect::<Vec<_>>()) <= budget + 1e-9 * budget.abs().max(1.0)
        }
    }
}

/// Greedily spends leftover budget one unit at a time, best objective decrease per
/// unit cost first. No-op for a fixed total size.
fn refill(
    objective: &Objective,
    design: &SurveyDesign,
    n: &mut [usize],
    current: &mut f64,
    moves: &mut Vec<IntegerMove>,
) -> Result<()> {
    if !matches!(design.constraint(), Constraint::Cost { .. }) {
        return Ok(());
    }
    let costs = design.costs();
    loop {
        let mut best: Option<(usize, f64, f64)> = None;
        for h in 0..n.len() {
            if n[h] >= design.strata()[h].size() {
                continue;
            }
            n[h] += 1;
            let ok = within_budget(design, n);
            let value = if ok { Some(eval_int(objective, n)?) } else { None };
            n[h] -= 1;
            let Some(value) = value else { continue };
            let gain = *current - value;
            let score = if costs[h] == 0.0 { f64::INFINITY } else { gain / costs[h] };
            if best.is_none_or(|(_, s, _)| score > s) {
                best = Some((h, score, value));
            }
        }
        let Some((h, _, value)) = best else {
            return Ok(());
        };
        n[h] += 1;
        *current = value;
        moves.push(IntegerMove {
            from: None,
            to: h,
            units: 1,
            objective: value,
        });
    }
}

/// Cost constraint only: removes one or two units, optionally spends the freed
/// budget on a chosen stratum first, then greedily re-spends the rest. Returns the
/// best strict improvement.
#[allow(clippy::type_complexity)]
fn best_drop_refill(
    objective: &Objective,
    design: &SurveyDesign,
    n: &[usize],
    current: f64,
) -> Result<Option<(Vec<usize>, f64, Vec<IntegerMove>)>> {
    if !matches!(design.constraint(), Constraint::Cost { .. }) {
        return Ok(None);
    }
    let h = n.len();
    let mut drops: Vec<Vec<usize>> = (0..h).map(|a| vec![a]).collect();
    for a in 0..h {
        for b in a..h {
            drops.push(vec![a, b]);
        }
    }
    // exchanges: the fewest units out of one stratum that pay for one unit of another
    if let Constraint::Cost { budget } = design.constraint() {
        let costs = design.costs();
        let spent = design.cost_of(&n.iter().map(|&v| v as f64).collect::<Vec<_>>());
        let slack = budget - spent;
        for from in 0..h {
            for to in 0..h {
                if from == to || costs[from] <= 0.0 || costs[to] <= slack {
                    continue;
                }
                let k = ((costs[to] - slack) / costs[from] - 1e-12).ceil().max(1.0) as usize;
                if k > 2 && n[from] >= MIN_STRATUM_SAMPLE + k {
                    drops.push(vec![from; k]);
                }
            }
        }
    }
    let mut best: Option<(Vec<usize>, f64, Vec<IntegerMove>)> = None;
    for drop in &drops {
        let mut base = n.to_vec();
        if drop.iter().any(|&d| {
            let ok = base[d] > MIN_STRATUM_SAMPLE;
            base[d] = base[d].saturating_sub(1);
            !ok
        }) {
            continue;
        }
        for target in std::iter::once(None).chain((0..h).map(Some)) {
            let mut trial = base.clone();
            let mut swap = Vec::new();
            if let Some(t) = target {
                if drop.contains(&t) || trial[t] >= design.strata()[t].size() {
                    continue;
                }
                trial[t] += 1;
                if !within_budget(design, &trial) {
                    continue;
                }
            }
            let mut value = eval_int(objective, &trial)?;
            if let Some(t) = target {
                swap.push(IntegerMove {
                    from: Some(drop[0]),
                    to: t,
                    units: 1,
                    objective: value,
                });
            }
            refill(objective, design, &mut trial, &mut value, &mut swap)?;
            if value < current && best.as_ref().is_none_or(|b| value < b.1) {
                if let Some(first) = swap.first_mut() {
                    first.from = Some(drop[0]);
                }
                best = Some((trial, value, swap));
            }
        }
    }
    Ok(best)
}

/// Best strictly improving transfer of `1..=radius` units, lowest indices on ties.
/// Under a cost constraint each transfer is completed by [`refill`] and judged by
/// the refilled value.
#[allow(clippy::type_complexity)]
fn best_transfer(
    objective: &Objective,
    design: &SurveyDesign,
    n: &[usize],
    current: f64,
    radius: usize,
) -> Result<Option<(Vec<usize>, f64, Vec<IntegerMove>)>> {
    let sizes: Vec<usize> = design.strata().iter().map(|s| s.size()).collect();
    let mut best: Option<(Vec<usize>, f64, Vec<IntegerMove>)> = None;
    for from in 0..n.len() {
        for to in 0..n.len() {
            if from == to {
                continue;
            }
            for units in 1..=radius {
                if n[from] < MIN_STRATUM_SAMPLE + units || n[to] + units > sizes[to] {
                    break;
                }
                let mut trial = n.to_vec();
                trial[from] -= units;
                trial[to] += units;
                if !within_budget(design, &trial) {
                    continue;
                }
                let mut value = eval_int(objective, &trial)?;
                let mut step = vec![IntegerMove {
                    from: Some(from),
                    to,
                    units,
                    objective: value,
                }];
                refill(objective, design, &mut trial, &mut value, &mut step)?;
                if value < current && best.as_ref().is_none_or(|b| value < b.1) {
                    best = Some((trial, value, step));
                }
            }
        }
    }
    Ok(best)
}

/// True if no single-unit transfer between two strata lowers the objective (under a
/// cost constraint, after re-spending any freed budget).
pub fn is_transfer_optimal(objective: &Objective, design: &SurveyDesign, n: &Allocation) -> Result<bool> {
    let current = eval_int(objective, n.as_slice())?;
    Ok(best_transfer(objective, design, n.as_slice(), current, 1)?.is_none())
}

/// Number of lattice points `brute_force` would visit (an upper bound for cost
/// constraints).
pub fn lattice_size(design: &SurveyDesign) -> u128 {
    let sizes: Vec<usize> = design.strata().iter().map(|s| s.size()).collect();
    match design.constraint() {
        Constraint::TotalSize { n } => {
            // compositions with per-part bounds, by dynamic programming
            let mut ways = vec![0u128; n + 1];
            ways[0] = 1;
            for &u in &sizes {
                let mut next = vec![0u128; n + 1];
                for (t, &w) in ways.iter().enumerate() {
                    if w == 0 {
                        continue;
                    }
                    for k in MIN_STRATUM_SAMPLE..=u {
                        if t + k > n {
                            break;
                        }
                        next[t + k] = next[t + k].saturating_add(w);
                    }
                }
                ways = next;
            }
            ways[n]
        }
        Constraint::Cost { .. } => sizes
            .iter()
            .map(|&u| (u - MIN_STRATUM_SAMPLE + 1) as u128)
            .fold(1u128, |a, b| a.saturating_mul(b)),
    }
}

/// Exhaustive search for the global minimum. Under a cost constraint only points
/// where no further unit is affordable are considered, matching the solver's
/// maximal-utilization rule. Ties go to the lexicographically smallest allocation.
pub fn brute_force(objective: &Objective, design: &SurveyDesign) -> Result<Allocation> {
    let points = lattice_size(design);
    if points > BRUTE_FORCE_LIMIT {
        return Err(Error::LatticeTooLarge {
            points,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let sizes: Vec<usize> = design.strata().iter().map(|s| s.size()).collect();
    let h = sizes.len();
    let mut n = vec![MIN_STRATUM_SAMPLE; h];
    let mut best: Option<(f64, Vec<usize>)> = None;

    let admissible = |n: &[usize]| -> bool {
        match design.constraint() {
            Constraint::TotalSize { n: total } => n.iter().sum::<usize>() == total,
            Constraint::Cost { .. } => {
                if !within_budget(design, n) {
                    return false;
                }
                let mut probe = n.to_vec();
                (0..h).all(|k| {
                    if probe[k] >= sizes[k] {
                        return true;
                    }
                    probe[k] += 1;
                    let fits = within_budget(design, &probe);
                    probe[k] -= 1;
                    !fits
                })
            }
        }
    };
    loop {
        if admissible(&n) {
            let v = eval_int(objective, &n)?;
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, n.clone()));
            }
        }
        // odometer in lexicographic order, last stratum fastest
        let mut k = h;
        loop {
            if k == 0 {
                return best
                    .map(|(_, n)| Allocation::new_unchecked(n))
                    .ok_or_else(|| Error::Infeasible("no admissible integer allocation".into()));
            }
            k -= 1;
            if n[k] < sizes[k] {
                n[k] += 1;
                for m in n.iter_mut().skip(k + 1) {
                    *m = MIN_STRATUM_SAMPLE;
                }
                break;
            }
        }
    }
}

/// Starting points: Neyman allocation per characteristic, proportional, uniform,
/// one vertex per stratum (that stratum as large as possible), then `multistarts`
/// seeded random points.
pub fn starting_points(design: &SurveyDesign, config: &SolverConfig) -> Vec<(String, Vec<f64>)> {
    let hcount = design.num_strata();
    let lo = design.lower_bounds();
    let hi = design.upper_bounds();
    let mut out = Vec::new();
    let spend = |scores: &[f64]| -> Option<Vec<f64>> {
        match design.constraint() {
            Constraint::TotalSize { n } => proportional_in_box(scores, &lo, &hi, n as f64).ok(),
            Constraint::Cost { budget } => {
                let per_cost: f64 = scores.iter().zip(design.costs()).map(|(s, c)| s * c).sum();
                let room = budget - design.overhead();
                let scale = if per_cost > 0.0 { room / per_cost } else { 1.0 };
                Some(project(design, &scores.iter().map(|s| s * scale).collect::<Vec<_>>()))
            }
        }
    };
    for j in 0..design.characteristics() {
        let start = match design.constraint() {
            Constraint::TotalSize { n } => neyman_allocation(design, j, n as f64).ok(),
            Constraint::Cost { .. } => {
                let scores: Vec<f64> = design
                    .strata()
                    .iter()
                    .map(|s| {
                        let c = s.cost().max(f64::MIN_POSITIVE);
                        s.size() as f64 * s.cov()[(j, j)].sqrt() / c.sqrt()
                    })
                    .collect();
                if scores.iter().all(|&v| v == 0.0) {
                    None
                } else {
                    spend(&scores)
                }
            }
        };
        if let Some(s) = start {
            out.push((format!("neyman-{}", j + 1), s));
        }
    }
    let sizes: Vec<f64> = design.strata().iter().map(|s| s.size() as f64).collect();
    if let Some(s) = spend(&sizes) {
        out.push(("proportional".into(), s));
    }
    if let Some(s) = spend(&vec![1.0; hcount]) {
        out.push(("uniform".into(), s));
    }
    for h in 0..hcount {
        let scores: Vec<f64> = (0..hcount).map(|i| if i == h { 1.0 } else { 0.0 }).collect();
        if let Some(s) = spend(&scores) {
            out.push((format!("vertex-{}", h + 1), s));
        }
    }
    let fixed = out.len();
    let mut k = 0u64;
    while out.len() < fixed + config.multistarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k);
        let scores: Vec<f64> = sizes.iter().map(|&s| s * rng.random_range(0.05..1.0)).collect();
        if let Some(s) = spend(&scores) {
            out.push((format!("random-{k}"), s));
        }
        k += 1;
        if k > 64 * (config.multistarts as u64 + 1) {
            break;
        }
    }
    out
}

struct StartResult {
    objective: f64,
    allocation: Allocation,
    trace: SolverTrace,
}

fn run_start(
    objective: &Objective,
    design: &SurveyDesign,
    config: &SolverConfig,
    label: &str,
    start: &[f64],
) -> Result<StartResult> {
    let continuous = solve_continuous(objective, design, config, start)?;
    let relaxed = integerize_traced(&continuous.point, objective, design, config.neighborhood)?;
    let relaxed_value = eval_int(objective, relaxed.0.as_slice())?;
    // for nonsmooth objectives the relaxation funnels every start onto the same
    // zero-deviation set, so the lattice search also runs from the start itself
    let direct = if objective.is_smooth() {
        None
    } else {
        let d = integerize_traced(&project(design, start), objective, design, config.neighborhood)?;
        let v = eval_int(objective, d.0.as_slice())?;
        Some((d, v))
    };
    let (origin, (allocation, rounded, moves), value) = match direct {
        Some((d, v)) if v < relaxed_value || (v == relaxed_value && d.0 < relaxed.0) => (IntegerOrigin::Start, d, v),
        _ => (IntegerOrigin::Relaxed, relaxed, relaxed_value),
    };
    Ok(StartResult {
        objective: value,
        allocation,
        trace: SolverTrace {
            start_label: label.to_string(),
            start: start.to_vec(),
            continuous,
            origin,
            rounded,
            moves,
        },
    })
}

/// Solves one model end to end and assembles its report.
pub fn solve(
    model: &ModelSpec,
    design: &SurveyDesign,
    config: &SolverConfig,
    coefficient: VarCoefficient,
) -> Result<SolutionReport> {
    config.validate()?;
    let objective = Objective::new(design, model.clone(), coefficient)?;
    solve_objective(&objective, config)
}

pub fn solve_objective(objective: &Objective, config: &SolverConfig) -> Result<SolutionReport> {
    let design = objective.design();
    let starts = starting_points(design, config);
    let results: Vec<Result<StartResult>> = starts
        .par_iter()
        .map(|(label, s)| run_start(objective, design, config, label, s))
        .collect();

    let summaries: Vec<StartSummary> = starts
        .iter()
        .zip(&results)
        .map(|((label, _), r)| match r {
            Ok(r) => StartSummary {
                label: label.clone(),
                objective: Some(r.objective),
                allocation: Some(r.allocation.clone()),
                error: None,
            },
            Err(e) => StartSummary {
                label: label.clone(),
                objective: None,
                allocation: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let mut first_error = None;
    let mut best: Option<StartResult> = None;
    for r in results {
        match r {
            Ok(r) => {
                let better = match &best {
                    None => true,
                    Some(b) => r.objective < b.objective || (r.objective == b.objective && r.allocation < b.allocation),
                };
                if better {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let best = match best {
        Some(b) => b,
        None => return Err(first_error.unwrap_or_else(|| Error::Infeasible("no starting point".into()))),
    };

    let real = best.allocation.to_real();
    let feasibility_slack = match design.constraint() {
        Constraint::TotalSize { .. } => 0.0,
        Constraint::Cost { budget } => budget - design.cost_of(&real),
    };
    // errors here only if every start ended on a point where the model is undefined
    let value = objective.evaluate(&real)?;
    Ok(SolutionReport {
        stats: estimator_stats(design, &real, objective.coefficient())?,
        goal_deviations: objective.goal_deviations(&real)?,
        objective: value,
        allocation: best.allocation,
        feasibility_slack,
        converged: best.trace.continuous.converged,
        provenance: objective.metadata(),
        trace: best.trace,
        starts: summaries,
    })
}
