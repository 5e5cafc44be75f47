use std::fs;
use std::path::Path;

use dcbpl::lcbm::argmax;
use dcbpl::pipeline::{
    self, encode_prefix, load_manifest, load_model, load_vocab, provider_dir, query_optimal_policy, run_dcbpl, PipelineError,
    ReportKind, RunConfig, FAILED_FILE, MANIFEST_FILE, RULE_FILE,
};
use dcbpl::scm::Stratum;

fn small() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.n_patients = 400;
    cfg.train.epochs = 2;
    cfg.run_seed = 9;
    cfg
}

#[test]
fn single_provider_world_gives_a_constant_rule() {
    let mut cfg = small();
    cfg.scm.n_providers = 1;
    cfg.scm.skill.truncate(1);
    cfg.scm.provider_style.truncate(1);
    cfg.scm.assignment_bias.iter_mut().for_each(|row| row.truncate(1));
    let dir = tempfile::tempdir().unwrap();
    let run = run_dcbpl(&cfg, dir.path()).unwrap();
    assert!(run.rule.assignment().iter().all(|&j| j == 0));
    assert_eq!(run.per_provider.len(), 1);
}

#[test]
fn stages_run_separately_match_the_full_run() {
    let cfg = small();
    let root = tempfile::tempdir().unwrap();
    let (full, staged) = (root.path().join("full"), root.path().join("staged"));
    let run = run_dcbpl(&cfg, &full).unwrap();
    fs::create_dir_all(&staged).unwrap();
    pipeline::stage_simulate(&cfg, &staged).unwrap();
    pipeline::stage_prepare(&cfg, &staged).unwrap();
    pipeline::stage_pretrain(&cfg, &staged).unwrap();
    for j in (0..cfg.scm.n_providers).rev() {
        pipeline::stage_finetune(&cfg, &staged, j).unwrap();
    }
    pipeline::stage_rule(&cfg, &staged).unwrap();
    pipeline::stage_estimate(&cfg, &staged).unwrap();
    pipeline::stage_evaluate(&cfg, &staged, ReportKind::All).unwrap();
    assert_eq!(pipeline::write_manifest(&cfg, &staged).unwrap(), run.manifest);
}

#[test]
fn later_stages_need_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let err = pipeline::stage_pretrain(&small(), dir.path()).unwrap_err();
    assert!(matches!(err, PipelineError::Missing(_)), "{err}");
}

#[test]
fn failed_runs_leave_a_marker_and_no_manifest() {
    let mut cfg = small();
    cfg.train.learning_rate = 1e12;
    let dir = tempfile::tempdir().unwrap();
    assert!(run_dcbpl(&cfg, dir.path()).is_err());
    assert!(dir.path().join(FAILED_FILE).exists());
    assert!(!dir.path().join(MANIFEST_FILE).exists());
}

fn known_run(dir: &Path) -> RunConfig {
    let cfg = small();
    run_dcbpl(&cfg, dir).unwrap();
    cfg
}

#[test]
fn query_uses_the_rule_and_the_provider_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = known_run(dir.path());
    let rule = pipeline::load_rule(dir.path()).unwrap();
    let vocab = load_vocab(dir.path()).unwrap();
    let prefix = vec![vec![vocab.actions()[0]], vec![vocab.actions()[1], vocab.actions()[2]]];
    for s in pipeline::known_strata(dir.path(), &rule).unwrap() {
        let q = query_optimal_policy(dir.path(), s, &prefix, 5).unwrap();
        assert_eq!(q.provider, rule.provider_for(s));
        assert_eq!(q.actions.len(), 5);
        assert!(q.actions.windows(2).all(|w| w[0].probability >= w[1].probability));
        let model = load_model(dir.path(), &provider_dir(q.provider)).unwrap();
        let dist = model.next_distribution(&encode_prefix(&prefix, &vocab).unwrap()).unwrap();
        let best = argmax(&dist[vocab.action_tokens().start as usize..]) + vocab.action_tokens().start as usize;
        let top1 = query_optimal_policy(dir.path(), s, &prefix, 1).unwrap();
        assert_eq!(top1.actions[0].token as usize, best);
        assert_eq!(top1.actions[0].action, vocab.action_of(best as u32).unwrap());
    }
    let bad = Stratum::new(cfg.scm.n_complaints + 3, 0);
    assert!(matches!(query_optimal_policy(dir.path(), bad, &[], 3), Err(PipelineError::UnknownStratum { .. })));
    assert!(matches!(query_optimal_policy(dir.path(), Stratum::new(0, 0), &[vec![9999]], 3), Err(PipelineError::Config(_))));
}

#[test]
fn tampered_or_missing_artifacts_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = known_run(dir.path());
    let s = Stratum::new(0, 0);
    assert!(load_manifest(dir.path()).unwrap().artifacts.keys().any(|k| k.starts_with(&provider_dir(0))));

    let rule_path = dir.path().join(RULE_FILE);
    let original = fs::read(&rule_path).unwrap();
    fs::write(&rule_path, [original.as_slice(), b" "].concat()).unwrap();
    assert!(matches!(query_optimal_policy(dir.path(), s, &[], 3), Err(PipelineError::Tampered(p)) if p == RULE_FILE));
    fs::write(&rule_path, &original).unwrap();
    assert!(query_optimal_policy(dir.path(), s, &[], 3).is_ok());

    for j in 0..cfg.scm.n_providers {
        fs::remove_dir_all(dir.path().join(provider_dir(j))).unwrap();
    }
    let err = query_optimal_policy(dir.path(), s, &[], 3).unwrap_err();
    assert!(matches!(err, PipelineError::Missing(_)), "{err}");
}
