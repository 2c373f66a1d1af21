use stratalloc::asymptotics::{
    generate_population, hajek_diagnostic, simulate, Family, FinitePopulation, PopulationSpec, StratumPopulation,
};

fn population(size: usize, family: Family, params: Vec<(f64, f64)>) -> FinitePopulation {
    let spec = PopulationSpec {
        strata: vec![StratumPopulation::Generated {
            size,
            family,
            params,
            correlation: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        }],
        seed: 11,
    };
    generate_population(&spec).unwrap().remove(0)
}

fn normal_pop() -> FinitePopulation {
    population(20_000, Family::Normal, vec![(10.0, 2.0), (40.0, 9.0)])
}

#[test]
fn same_seed_same_result() {
    let pop = normal_pop();
    let a = simulate(&pop, 40, 500, 3).unwrap();
    let b = simulate(&pop, 40, 500, 3).unwrap();
    assert_eq!(a, b);
    let c = simulate(&pop, 40, 500, 4).unwrap();
    assert_ne!(a.empirical_mean, c.empirical_mean);
}

#[test]
fn generation_is_reproducible() {
    let a = population(500, Family::Lognormal, vec![(0.0, 0.5), (1.0, 0.25)]);
    let b = population(500, Family::Lognormal, vec![(0.0, 0.5), (1.0, 0.25)]);
    assert_eq!(a, b);
    assert!(a.units().iter().flatten().all(|&v| v > 0.0));
}

#[test]
fn uniform_marginals_stay_in_range() {
    let pop = population(2_000, Family::Uniform, vec![(-1.0, 1.0), (5.0, 6.0)]);
    for u in pop.units() {
        assert!((-1.0..=1.0).contains(&u[0]));
        assert!((5.0..=6.0).contains(&u[1]));
    }
}

#[test]
fn known_mean_gap_shrinks_with_n() {
    let pop = normal_pop();
    let small = simulate(&pop, 50, 2_000, 9).unwrap();
    let large = simulate(&pop, 200, 2_000, 9).unwrap();
    for j in 0..2 {
        assert!(large.mean_abs_gap[j] < small.mean_abs_gap[j]);
    }
}

#[test]
fn skewness_statistic_shrinks_with_n() {
    let pop = normal_pop();
    let b1 = |n| simulate(&pop, n, 4_000, 5).unwrap().mardia.unwrap().skewness;
    let (s20, s80, s320) = (b1(20), b1(80), b1(320));
    assert!(s20 > s80 && s80 > s320, "{s20} {s80} {s320}");
}

#[test]
fn hajek_ratio_grows_with_n_and_is_one_at_census() {
    let pop = normal_pop();
    let at = |n| hajek_diagnostic(&pop, n).unwrap()[0].ratio;
    assert!(at(10) < at(100));
    assert!((at(pop.size()) - 1.0).abs() < 1e-12);
}

#[test]
fn too_few_replicates_is_an_error() {
    assert!(simulate(&normal_pop(), 10, 99, 1).is_err());
    assert!(simulate(&normal_pop(), 1, 100, 1).is_err());
}
