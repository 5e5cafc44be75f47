use dcbpl::causal::units_from_cohort;
use dcbpl::scm::{presets, Simulator};

#[test]
fn observed_cell_means_match_counterfactual_values() {
    let sim = Simulator::new(presets::dominance(21)).unwrap();
    let strata = sim.strata();
    let units = units_from_cohort(&sim.simulate_cohort(50_000), strata);
    let table = sim.counterfactual_table(20_000).unwrap();
    let (mut checked, mut outside3, mut worst) = (0, 0, 0.0f64);
    for s in 0..strata.len() {
        for (j, truth) in table[s].iter().enumerate() {
            let ys: Vec<f64> = units.iter().filter(|u| u.stratum == s && u.provider == j).map(|u| u.outcome).collect();
            if ys.len() < 200 {
                continue;
            }
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let z = (mean - truth.mean) / (var / n + truth.se.powi(2)).sqrt();
            checked += 1;
            outside3 += usize::from(z.abs() > 3.0);
            worst = worst.max(z.abs());
        }
    }
    assert!(checked >= 30, "only {checked} supported cells");
    assert!(outside3 <= 1 && worst < 4.5, "{outside3}/{checked} cells beyond 3 SE, worst |z| {worst:.2}");
}

#[test]
fn cohorts_are_reproducible_per_patient() {
    let sim = Simulator::new(presets::dominance(3)).unwrap();
    let a = sim.simulate_cohort(300);
    assert_eq!(a, sim.simulate_cohort(300));
    assert_eq!(a[..100], sim.simulate_cohort(100)[..]);
    for t in a.iter().step_by(37) {
        assert_eq!(&sim.simulate_patient(t.patient_id), t);
    }
    let other = Simulator::new(presets::dominance(4)).unwrap().simulate_cohort(300);
    assert_ne!(a, other);
}

#[test]
fn replayed_outcomes_match_for_every_provider() {
    let sim = Simulator::new(presets::dominance(5)).unwrap();
    for t in sim.simulate_cohort(500) {
        for j in 0..sim.config().n_providers {
            assert_eq!(sim.replay_outcome(&t, j).unwrap(), t.outcome);
        }
    }
}

#[test]
fn forcing_a_provider_equals_running_its_action_policy() {
    let sim = Simulator::new(presets::dominance(9)).unwrap();
    let strata = sim.strata();
    for s in strata.iter().step_by(5) {
        for j in 0..sim.config().n_providers {
            let forced = sim.counterfactual_estimate(j, s, 2_000).unwrap();
            let ys = sim.policy_outcomes(
                s,
                |h, _| sim.true_action_distribution(j, h, s.complaint),
                2_000,
                (strata.index(s) as u64) << 32,
            );
            assert_eq!(forced.mean, ys.iter().sum::<f64>() / ys.len() as f64);
        }
    }
}

#[test]
fn better_action_policies_raise_the_outcome() {
    let sim = Simulator::new(presets::dominance(9)).unwrap();
    let cfg = sim.config().clone();
    let s = sim.strata().stratum(0);
    let effects: Vec<f64> = (0..cfg.n_actions).map(|a| cfg.action_effects[a][s.complaint]).collect();
    let best = (0..cfg.n_actions).max_by(|&a, &b| effects[a].total_cmp(&effects[b])).unwrap();
    let worst = (0..cfg.n_actions).min_by(|&a, &b| effects[a].total_cmp(&effects[b])).unwrap();
    let point = |a: usize| move |_: f64, _: usize| {
        let mut p = vec![0.0; cfg.n_actions];
        p[a] = 1.0;
        p
    };
    let mean = |ys: Vec<f64>| ys.iter().sum::<f64>() / ys.len() as f64;
    let hi = mean(sim.policy_outcomes(s, point(best), 2_000, 0));
    let lo = mean(sim.policy_outcomes(s, point(worst), 2_000, 0));
    assert!(hi > lo, "best-action policy {hi} vs worst-action policy {lo}");
}
