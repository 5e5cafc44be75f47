//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Pass criterion numbers as arguments
//! to run a subset.

use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use dcbpl::causal::{
    aipw_value, crossfit_value, plugin_value, units_from_cohort, CrossFit, Design, EstimatorKind, NuisanceEstimates,
    PolicyValueEstimate, Unit,
};
use dcbpl::corpus::{build_vocabulary, make_pairs, provider_subset, three_way_split, OrderSetPair, Token, BOS, N_SPECIALS, SEP};
use dcbpl::lcbm::{finetune, train, ModelHyperparams, PolicyModel, TrainConfig, TrainMode};
use dcbpl::metrics::{learned_separation, q_accuracy, rank_of, PairEval};
use dcbpl::pipeline::{estimate_rule, run_dcbpl, CausalConfig, RunConfig};
use dcbpl::scm::{presets, rule_from_table, McEstimate, ProviderRule, Simulator};
use dcbpl::seeding::stream;
use dcbpl::tensor::{grad_check_at, Tensor};
use rand::Rng;

const TMLE_SCORE_TOL: f64 = 1e-8;
const N_MC: usize = 20_000;

/// Every TMLE score equation residual seen by any criterion.
static TMLE_SCORES: Mutex<Vec<f64>> = Mutex::new(Vec::new());

fn record_score(e: &PolicyValueEstimate) {
    if let Some(s) = e.score {
        TMLE_SCORES.lock().unwrap().push(s);
    }
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn z(e: &PolicyValueEstimate, truth: &McEstimate) -> f64 {
    (e.value - truth.mean) / (e.std_error.powi(2) + truth.se.powi(2)).sqrt()
}

fn dominance_units(seed: u64, n: usize) -> (Simulator, Vec<Unit>, Design) {
    let sim = Simulator::new(presets::dominance(seed)).unwrap();
    let units = units_from_cohort(&sim.simulate_cohort(n), sim.strata());
    let design = Design { strata: sim.strata(), n_providers: sim.config().n_providers };
    (sim, units, design)
}

fn oracle(sim: &Simulator) -> (Vec<Vec<McEstimate>>, ProviderRule) {
    let table = sim.counterfactual_table(N_MC).unwrap();
    let rule = rule_from_table(sim.strata(), &table);
    (table, rule)
}

fn c1_rule_recovery() -> Verdict {
    let start = Instant::now();
    let (sim, units, design) = dominance_units(7, 50_000);
    let (_, oracle_rule) = oracle(&sim);
    let causal = CausalConfig::default();
    let fit = estimate_rule(&units, &design, &causal, 7).unwrap();
    let eligible: Vec<usize> = (0..design.n_strata()).filter(|&s| fit.support[s].iter().all(|&c| c >= 200)).collect();
    let agree = eligible.iter().filter(|&&s| fit.rule.provider_at(s) == oracle_rule.provider_at(s)).count();
    let cf = CrossFit { folds: causal.folds, seed: 7, delta: causal.delta };
    let value = crossfit_value(&units, &fit.rule, &design, &cf, EstimatorKind::Tmle).unwrap();
    record_score(&value);
    let truth = sim.rule_value(&oracle_rule, N_MC).unwrap();
    let elapsed = start.elapsed();
    let frac = agree as f64 / eligible.len().max(1) as f64;
    verdict(
        !eligible.is_empty() && frac >= 0.95 && elapsed < Duration::from_secs(120),
        format!(
            "{agree}/{} supported strata match the oracle ({:.1}%); cross-fitted TMLE value of the learned rule {:.4} (se {:.4}) vs oracle {:.4}",
            eligible.len(),
            100.0 * frac,
            value.value,
            value.std_error,
            truth.mean
        ),
    )
}

fn c2_calibration() -> Verdict {
    let start = Instant::now();
    let sim = Simulator::new(presets::dominance(11)).unwrap();
    let (_, rule) = oracle(&sim);
    let truth = sim.rule_value(&rule, N_MC).unwrap();
    let (mut aipw_ok, mut tmle_ok) = (0, 0);
    for r in 0..20u64 {
        let (_, units, design) = dominance_units(2000 + r, 10_000);
        let cf = CrossFit { folds: 5, seed: r, delta: 0.01 };
        let a = crossfit_value(&units, &rule, &design, &cf, EstimatorKind::Aipw).unwrap();
        let t = crossfit_value(&units, &rule, &design, &cf, EstimatorKind::Tmle).unwrap();
        record_score(&t);
        aipw_ok += usize::from(z(&a, &truth).abs() <= 3.0);
        tmle_ok += usize::from(z(&t, &truth).abs() <= 3.0);
    }
    let elapsed = start.elapsed();
    verdict(
        aipw_ok >= 18 && tmle_ok >= 18 && elapsed < Duration::from_secs(180),
        format!(
            "within 3 combined SE of the oracle value {:.4}: A-IPW {aipw_ok}/20, TMLE {tmle_ok}/20",
            truth.mean
        ),
    )
}

fn c3_double_robustness() -> Verdict {
    let (sim, units, design) = dominance_units(13, 50_000);
    let (_, rule) = oracle(&sim);
    let truth = sim.rule_value(&rule, N_MC).unwrap();
    let fitted = NuisanceEstimates::fit(&units, &design, 0.01).unwrap();
    let k = design.n_strata();
    let jn = design.n_providers;
    let g_true: Vec<Vec<f64>> = (0..k).map(|s| sim.assignment_probabilities(design.strata.stratum(s).complaint)).collect();
    let y_bar = units.iter().map(|u| u.outcome).sum::<f64>() / units.len() as f64;
    let arm_a = NuisanceEstimates { g_hat: g_true, q_hat: vec![vec![y_bar; jn]; k], support: fitted.support.clone() };
    let arm_b = NuisanceEstimates { g_hat: vec![vec![1.0 / jn as f64; jn]; k], q_hat: fitted.q_hat.clone(), support: fitted.support };
    let za = z(&aipw_value(&units, &rule, &arm_a).unwrap(), &truth);
    let zb = z(&aipw_value(&units, &rule, &arm_b).unwrap(), &truth);
    let zp = z(&plugin_value(&units, &rule, &arm_a).unwrap(), &truth);
    verdict(
        za.abs() < 3.0 && zb.abs() < 3.0 && zp.abs() >= 3.0,
        format!("A-IPW bias/SE: true g + constant Q {za:.2}, saturated Q + uniform g {zb:.2}; plug-in with constant Q {zp:.1} (must fail)"),
    )
}

fn c4_tmle_score() -> Verdict {
    for r in 0..10u64 {
        let (_, units, design) = dominance_units(3000 + r, 5_000);
        let nuis = NuisanceEstimates::fit(&units, &design, 0.01).unwrap();
        for j in 0..design.n_providers {
            let rule = ProviderRule::constant(design.strata, j);
            record_score(&dcbpl::causal::tmle_value(&units, &rule, &nuis).unwrap());
        }
        let mixed = ProviderRule::new(design.strata, (0..design.n_strata()).map(|s| s % design.n_providers).collect());
        let cf = CrossFit { folds: 5, seed: r, delta: 0.01 };
        record_score(&crossfit_value(&units, &mixed, &design, &cf, EstimatorKind::Tmle).unwrap());
    }
    let scores = TMLE_SCORES.lock().unwrap();
    let worst = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    verdict(
        scores.iter().all(|s| s.abs() < TMLE_SCORE_TOL),
        format!("max |mean H(Y - Q*)| = {worst:.2e} over {} TMLE fits", scores.len()),
    )
}

fn fixture_pairs() -> Vec<OrderSetPair> {
    let specs: [(&[Token], &[Token]); 8] = [
        (&[BOS, 3, SEP], &[4]),
        (&[BOS, 4, SEP], &[5, 6]),
        (&[BOS, 5, SEP], &[7]),
        (&[BOS, 6, 7, SEP], &[3, 8]),
        (&[BOS, 3, SEP, 4, SEP], &[9]),
        (&[BOS, 8, SEP], &[10, 11]),
        (&[BOS, 9, SEP, 10, SEP], &[12]),
        (&[BOS, 11, SEP], &[3]),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(i, (p, t))| OrderSetPair { encounter_id: i as u64, provider: 0, prefix: p.to_vec(), target: t.to_vec(), context_len: p.len() })
        .collect()
}

fn c5_gradients() -> Verdict {
    let hp = ModelHyperparams { h: 2, m: 4, d: 8, r: 16, layers: 1, context: 16, vocab_size: 13 };
    let pairs = fixture_pairs();
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let model = PolicyModel::<f64>::init(hp, seed).unwrap();
        let pair = &pairs[(seed as usize * 3) % pairs.len()];
        let mut params = model.params().to_vec();
        let sizes: Vec<usize> = params.iter().map(Tensor::numel).collect();
        let total: usize = sizes.iter().sum();
        let mut rng = stream(seed, 0x7000, 0);
        let probes: Vec<(usize, usize)> = (0..64)
            .map(|_| {
                let (mut k, mut i) = (rng.random_range(0..total), 0);
                while k >= sizes[i] {
                    k -= sizes[i];
                    i += 1;
                }
                (i, k)
            })
            .collect();
        let report = grad_check_at(|tape, vars| Ok(model.pair_loss_on(tape, vars, pair).unwrap().0), &mut params, &probes, 1e-3).unwrap();
        worst = worst.max(report.max_rel_error);
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} over 5 seeds x 64 coordinates (f64, eps 1e-3)"))
}

fn c6_memorization() -> Verdict {
    let pairs = fixture_pairs();
    let hp = ModelHyperparams { h: 2, m: 8, d: 16, r: 32, layers: 1, context: 16, vocab_size: 13 };
    let cfg = TrainConfig { learning_rate: 1.0, batch_size: 8, epochs: 200, seed: 1, mode: TrainMode::Pretrain };
    let (model, trace) = train(&PolicyModel::<f32>::init(hp, 1).unwrap(), &pairs, &cfg).unwrap();
    let ln_v = (hp.vocab_size as f64).ln();
    let first_gap = (trace[0] - ln_v).abs() / ln_v;
    let final_ce = model.mean_loss(&pairs).unwrap();
    verdict(
        final_ce < 0.1 && first_gap <= 0.02,
        format!("epoch-1 loss {:.4} vs ln V {ln_v:.4} ({:.2}% off); mean CE after 200 epochs {final_ce:.4}", trace[0], 100.0 * first_gap),
    )
}

fn c7_specialization() -> Verdict {
    let mut passes = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let sim = Simulator::new(presets::signature(seed, 6, 6)).unwrap();
        let cohort = sim.simulate_cohort(800);
        let vocab = build_vocabulary(&cohort, 64).unwrap();
        let hp = ModelHyperparams { h: 2, m: 16, d: 32, r: 64, layers: 1, context: 32, vocab_size: vocab.size() };
        let split = three_way_split(&make_pairs(&cohort, &vocab, hp.context), 0.2, 0.2, seed);
        let cfg = TrainConfig { learning_rate: 0.15, batch_size: 16, epochs: 40, seed, mode: TrainMode::Pretrain };
        let (pre, _) = train(&PolicyModel::<f32>::init(hp, seed).unwrap(), &split.pretrain, &cfg).unwrap();
        let mut ok = true;
        for j in 0..2 {
            let (pj, _) = finetune(&pre, &provider_subset(&split.finetune, j), &cfg.for_finetune()).unwrap();
            let hold = provider_subset(&split.test, j);
            let sig = vocab.token_of(j).unwrap();
            let (pos, neg): (Vec<_>, Vec<_>) = hold.iter().cloned().partition(|p| p.target.contains(&sig));
            let d_pre = learned_separation(&pre, &pos, &neg, sig, seed).unwrap().delta;
            let d_ft = learned_separation(&pj, &pos, &neg, sig, seed).unwrap().delta;
            let (ce_pre, ce_ft) = (pre.mean_loss(&hold).unwrap(), pj.mean_loss(&hold).unwrap());
            ok &= ce_ft < ce_pre && d_ft > d_pre;
            lines.push(format!("s{seed}/p{j} CE {ce_pre:.3}->{ce_ft:.3} delta {d_pre:.3}->{d_ft:.3}"));
        }
        passes += usize::from(ok);
    }
    verdict(passes >= 4, format!("{passes}/5 seeds specialize for both providers [{}]", lines.join(", ")))
}

fn brute_rank(dist: &[f64], a: usize) -> usize {
    let mut order: Vec<usize> = (N_SPECIALS as usize..dist.len()).collect();
    for i in 0..order.len() {
        for j in 0..order.len() - 1 - i {
            let (x, y) = (order[j], order[j + 1]);
            if dist[y] > dist[x] || (dist[y] == dist[x] && y < x) {
                order.swap(j, j + 1);
            }
        }
    }
    order.iter().position(|&b| b == a).unwrap()
}

fn c8_metric_oracles() -> Verdict {
    let mut rng = stream(8, 0x7001, 0);
    let mut mismatches = 0;
    for case in 0..1000 {
        let n_actions = rng.random_range(1..=12usize);
        let levels = [0.05, 0.1, 0.2, 0.3];
        let mut dist: Vec<f64> = (0..N_SPECIALS as usize).map(|_| rng.random::<f64>()).collect();
        dist.extend((0..n_actions).map(|_| if rng.random_bool(0.4) { levels[rng.random_range(0..4)] } else { rng.random::<f64>() }));
        let total: f64 = dist.iter().sum();
        dist.iter_mut().for_each(|p| *p /= total);
        let mut target: Vec<Token> =
            (N_SPECIALS..(N_SPECIALS + n_actions as Token)).filter(|_| rng.random_bool(0.3)).collect();
        if target.is_empty() {
            target.push(N_SPECIALS + rng.random_range(0..n_actions) as Token);
        }
        let pair = OrderSetPair { encounter_id: case, provider: 0, prefix: vec![BOS], target: target.clone(), context_len: 0 };
        let eval = PairEval::from_distribution(&dist, &pair).unwrap();
        let ranks: Vec<usize> = target.iter().map(|&a| brute_rank(&dist, a as usize)).collect();
        let mean_rank = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
        let min_rank = *ranks.iter().min().unwrap();
        let q = ranks.iter().map(|&r| 1.0 - r as f64 / n_actions as f64).sum::<f64>() / ranks.len() as f64;
        let k = rng.random_range(1..=15usize);
        let same = ranks == eval.ranks
            && target.iter().zip(&ranks).all(|(&a, &r)| rank_of(&dist, a).unwrap() == r && q_accuracy(r, n_actions) == 1.0 - r as f64 / n_actions as f64)
            && eval.mean_top_k(k) == (mean_rank <= k as f64)
            && eval.min_top_k(k) == (min_rank <= k)
            && eval.q_accuracy() == q;
        mismatches += usize::from(!same);
    }
    verdict(mismatches == 0, format!("{mismatches} mismatches against a sort-based reimplementation on 1000 random distributions"))
}

fn report_rows(dir: &Path, model: &str) -> Vec<serde_json::Value> {
    let text = std::fs::read_to_string(dir.join(format!("reports/{model}/topk.json"))).unwrap();
    let reports: Vec<serde_json::Value> = serde_json::from_str(&text).unwrap();
    reports
        .into_iter()
        .flat_map(|r| {
            let strat = r["stratification"].as_str().unwrap().to_string();
            r["rows"].as_array().unwrap().iter().map(move |row| {
                let mut row = row.clone();
                row["stratification"] = strat.clone().into();
                row
            }).collect::<Vec<_>>()
        })
        .collect()
}

fn c9_monotonicity() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.scm = presets::dominance_sized(0, 40);
    cfg.n_patients = 2000;
    cfg.train.epochs = 10;
    run_dcbpl(&cfg, dir.path()).unwrap();
    let rows = report_rows(dir.path(), "pre");
    let top10: Vec<f64> = rows
        .iter()
        .filter(|r| r["stratification"] == "delta_decile" && r["k"] == 10)
        .map(|r| r["mean_top_k"].as_f64().unwrap())
        .collect();
    let inversions: Vec<f64> = top10.windows(2).filter(|w| w[1] < w[0]).map(|w| w[0] - w[1]).collect();
    let monotone = top10.len() == 9 && (inversions.is_empty() || (inversions.len() == 1 && inversions[0] <= 0.02));
    let mut min_ge_mean = true;
    let mut checked = 0;
    for model in ["pre", "provider_0", "provider_1", "provider_2"] {
        for r in report_rows(dir.path(), model) {
            if let (Some(min), Some(mean)) = (r["min_top_k"].as_f64(), r["mean_top_k"].as_f64()) {
                min_ge_mean &= min >= mean;
                checked += 1;
            }
        }
    }
    let shown: Vec<String> = top10.iter().map(|v| format!("{v:.3}")).collect();
    verdict(
        monotone && min_ge_mean,
        format!("mean-top-10 over Q1..Q9 [{}] with {} inversion(s); min >= mean on all {checked} rows: {min_ge_mean}", shown.join(" "), inversions.len()),
    )
}

fn c10_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.n_patients = 600;
    cfg.train.epochs = 3;
    cfg.run_seed = 42;
    let a = run_dcbpl(&cfg, &dir.path().join("a")).unwrap();
    let b = run_dcbpl(&cfg, &dir.path().join("b")).unwrap();
    let compared: Vec<&String> =
        a.manifest.artifacts.keys().filter(|k| *k == "rule.json" || (k.starts_with("reports/") && k.ends_with(".csv"))).collect();
    let identical = compared.iter().all(|k| {
        std::fs::read(dir.path().join("a").join(k)).unwrap() == std::fs::read(dir.path().join("b").join(k)).unwrap()
    });
    verdict(
        identical && a.manifest == b.manifest,
        format!("{} rule and metric files byte-identical: {identical}; manifests equal: {}", compared.len(), a.manifest == b.manifest),
    )
}

type Criterion = (usize, &'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "oracle rule recovery", c1_rule_recovery),
        (2, "estimator calibration", c2_calibration),
        (3, "double robustness", c3_double_robustness),
        (4, "TMLE score equation", c4_tmle_score),
        (5, "gradient correctness", c5_gradients),
        (6, "training sanity", c6_memorization),
        (7, "fine-tune specialization", c7_specialization),
        (8, "metric oracles", c8_metric_oracles),
        (9, "monotonicity", c9_monotonicity),
        (10, "determinism", c10_determinism),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let start = Instant::now();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = check();
        failed += usize::from(!v.pass);
        println!("{} {id:>2} {name}: {} [{:.1}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {failed} failed, total {:.1}s", start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
