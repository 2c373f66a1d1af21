use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use stratalloc::allocator::{is_transfer_optimal, solve_continuous, solve_objective};
use stratalloc::asymptotics::FinitePopulation;
use stratalloc::estimators::{
    covhat_vu, ehat_vhat, gaussian_m4_proxy, moments_from_raw, neyman_allocation, stratum_weights, varhat_vhat, vhat,
};
use stratalloc::io::{emit_design, parse_design};
use stratalloc::normal::{normal_cdf, normal_quantile};
use stratalloc::scalarizers::pareto_filter;
use stratalloc::{
    Constraint, MomentPolicy, MomentSource, ModelSpec, Objective, Sense, SolverConfig, StratumSummary, SurveyDesign,
    VarCoefficient,
};

/// A random 2×2 covariance matrix from variances and a correlation.
fn cov2(a: f64, b: f64, r: f64) -> DMatrix<f64> {
    let c = r * (a * b).sqrt();
    DMatrix::from_row_slice(2, 2, &[a, c, c, b])
}

prop_compose! {
    fn stratum(id: usize)(
        size in 4usize..60,
        cost in 0.5f64..4.0,
        a in 0.1f64..100.0,
        b in 0.1f64..100.0,
        r in -0.95f64..0.95,
    ) -> StratumSummary {
        StratumSummary::new(format!("s{id}"), size, cost, cov2(a, b, r)).unwrap()
    }
}

fn strata(max: usize) -> impl Strategy<Value = Vec<StratumSummary>> {
    (1..=max).prop_flat_map(|h| (0..h).map(stratum).collect::<Vec<_>>())
}

/// A design with a total-size constraint somewhere inside the feasible range.
fn design(max: usize) -> impl Strategy<Value = SurveyDesign> {
    strata(max).prop_flat_map(|s| {
        let lo = 2 * s.len();
        let hi: usize = s.iter().map(|x| x.size()).sum();
        (Just(s), lo..=hi).prop_map(|(s, n)| {
            SurveyDesign::new(s, Constraint::TotalSize { n })
                .unwrap()
                .resolve_moments(MomentPolicy::Proxy)
                .unwrap()
        })
    })
}

/// A design together with a real allocation in its box (not necessarily on the
/// constraint).
fn design_and_point(max: usize) -> impl Strategy<Value = (SurveyDesign, Vec<f64>)> {
    design(max).prop_flat_map(|d| {
        let point: Vec<_> = d.strata().iter().map(|s| 2.0..=s.size() as f64).collect();
        (Just(d), point)
    })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, max_global_rejects: 100_000, ..ProptestConfig::default() })]

    #[test]
    fn weights_sum_to_one(d in design(6)) {
        let w = stratum_weights(&d);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn variance_estimate_strictly_decreases((d, n) in design_and_point(5), h in 0usize..5) {
        let h = h % d.num_strata();
        let size = d.strata()[h].size() as f64;
        prop_assume!(n[h] + 1.0 <= size);
        let mut up = n.clone();
        up[h] += 1.0;
        let before = vhat(&d, &n).unwrap();
        let after = vhat(&d, &up).unwrap();
        for (j, s2) in d.strata()[h].s2().iter().enumerate() {
            if *s2 > 0.0 {
                prop_assert!(after[j] < before[j]);
            }
        }
    }

    #[test]
    fn census_is_zero(d in design(6)) {
        let census: Vec<f64> = d.strata().iter().map(|s| s.size() as f64).collect();
        prop_assert!(vhat(&d, &census).unwrap().iter().all(|&v| v == 0.0));
        prop_assert!(ehat_vhat(&d, &census).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dispersion_symmetric_with_matching_diagonal((d, n) in design_and_point(5), squared in any::<bool>()) {
        let coef = if squared { VarCoefficient::Squared } else { VarCoefficient::AsPaper };
        let c = covhat_vu(&d, &n, coef).unwrap();
        prop_assert_eq!(c.clone(), c.transpose());
        let diag = varhat_vhat(&d, &n, coef).unwrap();
        for (j, v) in diag.iter().enumerate() {
            prop_assert_eq!(*v, c[(j, j)]);
        }
    }

    #[test]
    fn proxy_excess_is_psd(g in 1usize..5, seed in prop::collection::vec(-3.0f64..3.0, 16)) {
        // cov = A Aᵀ is PSD by construction
        let a = DMatrix::from_fn(g, g, |i, j| seed[i * 4 + j]);
        let cov = &a * a.transpose();
        let m4 = gaussian_m4_proxy(&cov).unwrap();
        let s2 = cov.diagonal();
        let excess = m4 - &s2 * s2.transpose();
        let schur = cov.component_mul(&cov) * 2.0;
        prop_assert!((&excess - &schur).abs().max() <= 1e-12 * schur.abs().max().max(1.0));
        let min = SymmetricEigen::new(excess.clone()).eigenvalues.min();
        prop_assert!(min >= -1e-9 * excess.trace().max(1e-300));
    }

    #[test]
    fn neyman_is_stationary(d in design(6), j in 0usize..2) {
        let total = match d.constraint() { Constraint::TotalSize { n } => n as f64, _ => unreachable!() };
        let n = neyman_allocation(&d, j, total).unwrap();
        let w = stratum_weights(&d);
        let interior: Vec<f64> = d
            .strata()
            .iter()
            .zip(&n)
            .zip(&w)
            .filter(|((s, &x), _)| x > 2.0 + 1e-9 && x < s.size() as f64 - 1e-9)
            .map(|((s, &x), &wh)| wh * wh * s.s2()[j] / (x * x))
            .collect();
        prop_assume!(interior.len() >= 2);
        let max = interior.iter().cloned().fold(f64::MIN, f64::max);
        let min = interior.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!((max - min) / max <= 1e-8, "{:?}", interior);
    }

    #[test]
    fn reductions_agree_with_weighting_e((d, n) in design_and_point(5), w1 in 0.0f64..=1.0) {
        let w = vec![w1, 1.0 - w1];
        let e = Objective::new(&d, ModelSpec::WeightingE { w: w.clone() }, VarCoefficient::AsPaper).unwrap();
        let m = Objective::new(&d, ModelSpec::ModifiedE { w: w.clone(), k1: 1.0, k2: 0.0 }, VarCoefficient::AsPaper).unwrap();
        let k = Objective::new(&d, ModelSpec::WeightingKataoka { w, delta: 0.5 }, VarCoefficient::AsPaper).unwrap();
        let base = e.evaluate(&n).unwrap();
        prop_assert!(rel_close(m.evaluate(&n).unwrap(), base, 1e-12));
        prop_assert!(rel_close(k.evaluate(&n).unwrap(), base, 1e-12));
    }

    #[test]
    fn goal_deviations_are_complementary((d, n) in design_and_point(5), t in prop::collection::vec(0.0f64..5.0, 2), kataoka in any::<bool>()) {
        let w = vec![0.5, 0.5];
        let model = if kataoka {
            ModelSpec::GoalKataoka { w, targets: t.clone(), delta: 0.8 }
        } else {
            ModelSpec::GoalProgramming { w, targets: t.clone() }
        };
        let obj = Objective::new(&d, model, VarCoefficient::AsPaper).unwrap();
        let devs = obj.goal_deviations(&n).unwrap().unwrap();
        let g = obj.components(&n).unwrap();
        for j in 0..2 {
            prop_assert!(devs[j].plus >= 0.0 && devs[j].minus >= 0.0);
            prop_assert_eq!(devs[j].plus * devs[j].minus, 0.0);
            prop_assert!((devs[j].plus - devs[j].minus - (g[j] - t[j])).abs() <= 1e-12 * g[j].abs().max(t[j].abs()).max(1.0));
        }
    }

    #[test]
    fn dominating_allocation_scores_lower(
        (d, a) in design_and_point(5),
        shrink in prop::collection::vec(0.0f64..=1.0, 5),
        w1 in 0.01f64..0.99,
    ) {
        // every ehat coordinate strictly decreases in every n_h, so b ≤ a with
        // one strict entry is dominated by a
        let b: Vec<f64> = a.iter().zip(&shrink).map(|(x, u)| 2.0 + u * (x - 2.0)).collect();
        prop_assume!(a.iter().zip(&b).any(|(x, y)| y < x));
        let ea = ehat_vhat(&d, &a).unwrap();
        let eb = ehat_vhat(&d, &b).unwrap();
        prop_assert!(ea.iter().zip(&eb).all(|(x, y)| x < y));
        let e = Objective::new(&d, ModelSpec::WeightingE { w: vec![w1, 1.0 - w1] }, VarCoefficient::AsPaper).unwrap();
        prop_assert!(e.evaluate(&a).unwrap() < e.evaluate(&b).unwrap());
    }

    #[test]
    fn aspiration_model_is_affine_in_target((d, n) in design_and_point(5), t in prop::collection::vec(-10.0f64..10.0, 2), delta in -5.0f64..5.0, max in any::<bool>()) {
        let sense = if max { Sense::Max } else { Sense::Min };
        let build = |t: Vec<f64>| {
            Objective::new(
                &d,
                ModelSpec::WeightingP { w: vec![0.3, 0.7], targets: Some(t), tau_scalar: None, sense },
                VarCoefficient::AsPaper,
            )
            .unwrap()
        };
        let var = varhat_vhat(&d, &n, VarCoefficient::AsPaper).unwrap();
        prop_assume!(var[0] > 0.0 && var[1] > 0.0);
        let base = build(t.clone()).evaluate(&n).unwrap();
        let raised = build(vec![t[0] + delta, t[1]]).evaluate(&n).unwrap();
        let sign = if max { -1.0 } else { 1.0 };
        let expected = sign * 0.3 * delta / var[0].sqrt();
        prop_assert!((raised - base - expected).abs() <= 1e-9 * (base.abs() + raised.abs() + expected.abs()).max(1e-12));

        // aspiration at the expectation scores zero
        let e = ehat_vhat(&d, &n).unwrap();
        prop_assert!(build(e).evaluate(&n).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn quantile_round_trip(p in 0.001f64..=0.999) {
        let z = normal_quantile(p).unwrap();
        prop_assert!((normal_cdf(z) - p).abs() <= 1e-9);
    }

    #[test]
    fn csv_round_trip(s in strata(6), with_m4 in any::<bool>(), overhead in 0.0f64..10.0) {
        let s: Vec<StratumSummary> = if with_m4 {
            s.into_iter()
                .map(|x| {
                    let m4 = gaussian_m4_proxy(x.cov()).unwrap() * 1.5;
                    x.with_m4(m4, MomentSource::Supplied).unwrap()
                })
                .collect()
        } else {
            s
        };
        let n = 2 * s.len();
        let d = SurveyDesign::with_overhead(s, overhead, Constraint::TotalSize { n }).unwrap();
        let back = parse_design(&emit_design(&d), Constraint::TotalSize { n }, overhead).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn pareto_keeps_exactly_nondominated(points in prop::collection::vec(prop::collection::vec(0u8..5, 2), 1..12)) {
        let candidates: Vec<(usize, Vec<f64>)> =
            points.iter().enumerate().map(|(i, p)| (i, p.iter().map(|&v| v as f64).collect())).collect();
        let kept: Vec<usize> = pareto_filter(&candidates).into_iter().map(|(i, _)| i).collect();
        for (i, v) in &candidates {
            let dominated = candidates.iter().any(|(_, u)| {
                u.iter().zip(v).all(|(a, b)| a <= b) && u.iter().zip(v).any(|(a, b)| a < b)
            });
            prop_assert_eq!(kept.contains(i), !dominated);
        }
    }

    #[test]
    fn whole_population_moments_match(units in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2), 3..40)) {
        let big_n = units.len() as f64;
        let raw = &moments_from_raw(std::slice::from_ref(&units)).unwrap()[0];
        let pop = FinitePopulation::new(units).unwrap();
        let (mean, s, m4) = pop.moments();
        for j in 0..2 {
            prop_assert!(rel_close(raw.mean[j], mean[j], 1e-12) || (raw.mean[j] - mean[j]).abs() < 1e-12);
            prop_assert!(rel_close(raw.cov[(j, j)] * (big_n - 1.0) / big_n, s[j], 1e-12));
        }
        prop_assert!((&raw.m4 - &m4).abs().max() <= 1e-12 * m4.abs().max().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn solutions_are_feasible_and_locally_optimal(d in design(3), cost in any::<bool>(), budget_frac in 0.0f64..1.0) {
        let d = if cost {
            let lo: f64 = d.costs().iter().map(|c| 2.0 * c).sum();
            let hi: f64 = d.strata().iter().map(|s| s.size() as f64 * s.cost()).sum();
            d.with_constraint(Constraint::Cost { budget: lo + budget_frac * (hi - lo) }).unwrap()
        } else {
            d
        };
        let model = ModelSpec::WeightingKataoka { w: vec![0.5, 0.5], delta: 0.9 };
        let obj = Objective::new(&d, model, VarCoefficient::AsPaper).unwrap();
        let config = SolverConfig::default();
        let sol = solve_objective(&obj, &config).unwrap();
        let n = sol.allocation.to_real();
        prop_assert!(d.check_box(&n).is_ok());
        match d.constraint() {
            Constraint::TotalSize { n: total } => prop_assert_eq!(sol.allocation.total(), total),
            Constraint::Cost { .. } => {
                let affordable = d
                    .strata()
                    .iter()
                    .zip(sol.allocation.as_slice())
                    .any(|(s, &x)| x < s.size() && s.cost() <= sol.feasibility_slack);
                prop_assert!(sol.feasibility_slack >= -1e-9);
                prop_assert!(!affordable, "slack {}", sol.feasibility_slack);
            }
        }
        prop_assert!(is_transfer_optimal(&obj, &d, &sol.allocation).unwrap());
        prop_assert_eq!(sol.objective, obj.evaluate(&n).unwrap());
        prop_assert_eq!(solve_objective(&obj, &config).unwrap(), sol);

        // the expectation model is convex, so its relaxation bounds every integer point
        let convex = Objective::new(&d, ModelSpec::WeightingE { w: vec![0.5, 0.5] }, VarCoefficient::AsPaper).unwrap();
        let integer = solve_objective(&convex, &config).unwrap();
        let relaxed = solve_continuous(&convex, &d, &config, &integer.trace.start).unwrap();
        prop_assert!(integer.objective >= relaxed.objective * (1.0 - 1e-9), "{} < {}", integer.objective, relaxed.objective);
    }
}
