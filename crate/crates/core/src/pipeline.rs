//! End-to-end runs: simulate, build the corpus, pretrain, fine-tune per
//! provider, learn the provider rule, evaluate, and record every artifact
//! in a hashed manifest.
//!
//! Each stage reads the files written by the previous one, so running the
//! stages one by one over the same directory reproduces a full run.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::causal::{
    crossfit_value, select_rule_cv, units_from_cohort, ConstantLearner, CrossFit, Design, EstimatorKind, NuisanceEstimates,
    PolicyValueEstimate, PseudoBlipLearner, RuleLearner, Unit,
};
use crate::corpus::{
    build_vocabulary, make_pairs, pairs_from_jsonl, pairs_to_jsonl, provider_subset, target_frequencies, three_way_split,
    OrderSetPair, Token, Vocabulary, BOS, SEP,
};
use crate::lcbm::{finetune, train, ModelHyperparams, PolicyModel, TrainConfig, TrainMode};
use crate::metrics::{
    delta_by_token, evaluate_pairs, qacc_csv, reports_to_csv, separation_csv, separation_table, stratified_report,
    MetricsReport, Stratification,
};
use crate::scm::{cohort_from_jsonl, cohort_to_jsonl, presets, ProviderRule, ScmConfig, Simulator, Stratum, StratumSpace, Trajectory};

pub const CONFIG_FILE: &str = "config.json";
pub const COHORT_FILE: &str = "cohort.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const RULE_FILE: &str = "rule.json";
pub const SUPPORT_FILE: &str = "causal/support.json";
pub const SELECTION_FILE: &str = "causal/selection.json";
pub const ESTIMATES_FILE: &str = "causal/estimates.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_FILE: &str = "FAILED";
pub const PRETRAINED_DIR: &str = "models/pre";

/// Pipeline stages, in run order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Prepare,
    Pretrain,
    Finetune,
    Rule,
    Estimate,
    Evaluate,
    Manifest,
    Query,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Simulate => "simulate",
            Stage::Prepare => "prepare",
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Rule => "rule",
            Stage::Estimate => "estimate",
            Stage::Evaluate => "evaluate",
            Stage::Manifest => "manifest",
            Stage::Query => "query",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {msg}")]
    Stage { stage: Stage, msg: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing artifact {0}; run the earlier stages first")]
    Missing(PathBuf),
    #[error("artifact {0} does not match its manifest hash")]
    Tampered(String),
    #[error("unknown stratum {stratum}; known strata: {known}")]
    UnknownStratum { stratum: String, known: String },
}

impl PipelineError {
    fn stage(stage: Stage, e: impl fmt::Display) -> Self {
        PipelineError::Stage { stage, msg: e.to_string() }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Transformer shape without the vocabulary size, which comes from data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub h: usize,
    pub m: usize,
    pub d: usize,
    pub r: usize,
    pub layers: usize,
    pub context: usize,
}

impl ModelSpec {
    pub fn hyperparams(&self, vocab_size: usize) -> ModelHyperparams {
        ModelHyperparams {
            h: self.h,
            m: self.m,
            d: self.d,
            r: self.r,
            layers: self.layers,
            context: self.context,
            vocab_size,
        }
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { h: 2, m: 16, d: 32, r: 64, layers: 1, context: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub finetune_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { finetune_fraction: 0.2, test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RuleMethod {
    #[default]
    PseudoBlip,
    CvSelect,
}

impl std::str::FromStr for RuleMethod {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudo-blip" => Ok(RuleMethod::PseudoBlip),
            "cv-select" => Ok(RuleMethod::CvSelect),
            _ => Err(PipelineError::Config(format!("unknown rule method '{s}' (expected pseudo-blip or cv-select)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalConfig {
    pub folds: usize,
    pub delta: f64,
    pub support_min: usize,
    pub estimator: EstimatorKind,
    pub method: RuleMethod,
}

impl Default for CausalConfig {
    fn default() -> Self {
        CausalConfig { folds: 5, delta: 0.01, support_min: 20, estimator: EstimatorKind::Tmle, method: RuleMethod::PseudoBlip }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub ks: Vec<usize>,
    /// Ascending context-length bin edges.
    pub context_edges: Vec<usize>,
    pub frequency_groups: usize,
    pub delta_groups: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { ks: vec![1, 5, 10, 15, 20], context_edges: vec![3, 6, 10], frequency_groups: 4, delta_groups: 4 }
    }
}

/// Everything a run depends on. `run_seed` overrides every seed below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scm: ScmConfig,
    pub n_patients: usize,
    pub max_actions: usize,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub causal: CausalConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub run_seed: u64,
    /// Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scm: presets::dominance(0),
            n_patients: 2000,
            max_actions: 256,
            split: SplitConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig { learning_rate: 0.15, batch_size: 16, epochs: 10, seed: 0, mode: TrainMode::Pretrain },
            causal: CausalConfig::default(),
            metrics: MetricsConfig::default(),
            run_seed: 0,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Copy with every component seed set to `run_seed` and no output dir.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.scm.seed = c.run_seed;
        c.train.seed = c.run_seed;
        c.train.mode = TrainMode::Pretrain;
        c.output_dir = None;
        c
    }

    /// SHA-256 of the resolved config's JSON.
    pub fn hash(&self) -> String {
        sha256_hex(self.resolved().to_json().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        Simulator::new(self.scm.clone()).map_err(|e| PipelineError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.model.hyperparams(3 + self.max_actions.max(1)).validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let s = self.split;
        if !(s.finetune_fraction > 0.0 && s.test_fraction > 0.0 && s.finetune_fraction + s.test_fraction < 1.0) {
            return Err(PipelineError::Config(format!(
                "split fractions finetune={} test={} must be positive and sum below 1",
                s.finetune_fraction, s.test_fraction
            )));
        }
        if self.n_patients < 3 {
            return Err(PipelineError::Config("n_patients must be at least 3".into()));
        }
        if self.max_actions == 0 {
            return Err(PipelineError::Config("max_actions must be positive".into()));
        }
        if self.causal.folds < 2 {
            return Err(PipelineError::Config("causal.folds must be at least 2".into()));
        }
        if self.metrics.ks.is_empty() || self.metrics.ks.contains(&0) {
            return Err(PipelineError::Config("metrics.ks must be non-empty and positive".into()));
        }
        Ok(())
    }

    fn design(&self) -> Design {
        Design {
            strata: StratumSpace { n_complaints: self.scm.n_complaints, n_severities: self.scm.n_severities },
            n_providers: self.scm.n_providers,
        }
    }

    fn crossfit(&self) -> CrossFit {
        CrossFit { folds: self.causal.folds, seed: self.run_seed, delta: self.causal.delta }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(PipelineError::Missing(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn write(dir: &Path, rel: &str, contents: &str) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| PipelineError::Io { path: parent.to_path_buf(), source })?;
    }
    fs::write(&path, contents).map_err(|source| PipelineError::Io { path, source })
}

pub fn provider_dir(j: usize) -> String {
    format!("models/provider_{j}")
}

fn pairs_file(part: &str) -> String {
    format!("pairs/{part}.jsonl")
}

fn loss_csv(trace: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    out
}

fn load_pairs(dir: &Path, part: &str) -> Result<Vec<OrderSetPair>> {
    pairs_from_jsonl(&read(&dir.join(pairs_file(part)))?).map_err(|e| PipelineError::stage(Stage::Prepare, e))
}

pub fn load_cohort(dir: &Path) -> Result<Vec<Trajectory>> {
    cohort_from_jsonl(&read(&dir.join(COHORT_FILE))?).map_err(|e| PipelineError::stage(Stage::Simulate, e))
}

pub fn load_vocab(dir: &Path) -> Result<Vocabulary> {
    Vocabulary::from_json(&read(&dir.join(VOCAB_FILE))?).map_err(|e| PipelineError::stage(Stage::Prepare, e))
}

pub fn load_model(dir: &Path, rel: &str) -> Result<PolicyModel<f32>> {
    let path = dir.join(rel);
    if !path.exists() {
        return Err(PipelineError::Missing(path));
    }
    PolicyModel::load_checkpoint(&path).map_err(|e| PipelineError::stage(Stage::Pretrain, e))
}

pub fn load_rule(dir: &Path) -> Result<ProviderRule> {
    ProviderRule::from_json(&read(&dir.join(RULE_FILE))?).map_err(|e| PipelineError::stage(Stage::Rule, e))
}

/// Writes the resolved config and the simulated cohort.
pub fn stage_simulate(cfg: &RunConfig, dir: &Path) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let sim = Simulator::new(cfg.scm.clone()).map_err(|e| PipelineError::stage(Stage::Simulate, e))?;
    let cohort = sim.simulate_cohort(cfg.n_patients);
    write(dir, CONFIG_FILE, &cfg.to_json())?;
    write(dir, COHORT_FILE, &cohort_to_jsonl(&cohort))?;
    Ok(cohort)
}

/// Vocabulary plus pretrain/finetune/test pairs, split by encounter.
pub fn stage_prepare(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let cohort = load_cohort(dir)?;
    let vocab = build_vocabulary(&cohort, cfg.max_actions).map_err(|e| PipelineError::stage(Stage::Prepare, e))?;
    let pairs = make_pairs(&cohort, &vocab, cfg.model.context);
    if pairs.is_empty() {
        return Err(PipelineError::stage(Stage::Prepare, "cohort yields no order-set pairs (horizon 1?)"));
    }
    let split = three_way_split(&pairs, cfg.split.finetune_fraction, cfg.split.test_fraction, cfg.run_seed);
    write(dir, VOCAB_FILE, &vocab.to_json())?;
    write(dir, &pairs_file("pretrain"), &pairs_to_jsonl(&split.pretrain))?;
    write(dir, &pairs_file("finetune"), &pairs_to_jsonl(&split.finetune))?;
    write(dir, &pairs_file("test"), &pairs_to_jsonl(&split.test))?;
    Ok(())
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig { seed: cfg.run_seed, mode: TrainMode::Pretrain, ..cfg.train }
}

pub fn stage_pretrain(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let vocab = load_vocab(dir)?;
    let pairs = load_pairs(dir, "pretrain")?;
    let hp = cfg.model.hyperparams(vocab.size());
    let init = PolicyModel::<f32>::init(hp, cfg.run_seed).map_err(|e| PipelineError::stage(Stage::Pretrain, e))?;
    let (model, trace) = train(&init, &pairs, &train_config(cfg)).map_err(|e| PipelineError::stage(Stage::Pretrain, e))?;
    model.save_checkpoint(&dir.join(PRETRAINED_DIR)).map_err(|e| PipelineError::stage(Stage::Pretrain, e))?;
    write(dir, "loss/pretrain.csv", &loss_csv(&trace))
}

/// Fine-tunes provider `j` on its slice of the fine-tune partition.
pub fn stage_finetune(cfg: &RunConfig, dir: &Path, j: usize) -> Result<()> {
    if j >= cfg.scm.n_providers {
        return Err(PipelineError::stage(
            Stage::Finetune,
            format!("provider {j} out of range (config has {})", cfg.scm.n_providers),
        ));
    }
    let pre = load_model(dir, PRETRAINED_DIR)?;
    let pairs = provider_subset(&load_pairs(dir, "finetune")?, j);
    let (model, trace) =
        finetune(&pre, &pairs, &train_config(cfg).for_finetune()).map_err(|e| PipelineError::stage(Stage::Finetune, e))?;
    model.save_checkpoint(&dir.join(provider_dir(j))).map_err(|e| PipelineError::stage(Stage::Finetune, e))?;
    write(dir, &format!("loss/provider_{j}.csv"), &loss_csv(&trace))
}

fn units(cfg: &RunConfig, dir: &Path) -> Result<Vec<Unit>> {
    Ok(units_from_cohort(&load_cohort(dir)?, cfg.design().strata))
}

/// Learned rule with the learner names and cross-validated values behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleFit {
    pub rule: ProviderRule,
    pub support: Vec<Vec<usize>>,
    pub learners: Vec<String>,
    pub cv_values: Vec<f64>,
    pub chosen: usize,
}

/// The rule estimate on analysis units, shared by the pipeline and by
/// direct callers that skip the model stages.
pub fn estimate_rule(units: &[Unit], design: &Design, causal: &CausalConfig, seed: u64) -> Result<RuleFit> {
    let nuis = NuisanceEstimates::fit(units, design, causal.delta).map_err(|e| PipelineError::stage(Stage::Rule, e))?;
    let blip = PseudoBlipLearner { delta: causal.delta, support_min: causal.support_min };
    let (rule, learners, cv_values, chosen) = match causal.method {
        RuleMethod::PseudoBlip => {
            let rule = blip.learn(units, design).map_err(|e| PipelineError::stage(Stage::Rule, e))?;
            (rule, vec![blip.name()], Vec::new(), 0)
        }
        RuleMethod::CvSelect => {
            let constants: Vec<ConstantLearner> = (0..design.n_providers).map(ConstantLearner).collect();
            let mut learners: Vec<&dyn RuleLearner> = vec![&blip];
            learners.extend(constants.iter().map(|c| c as &dyn RuleLearner));
            let cf = CrossFit { folds: causal.folds, seed, delta: causal.delta };
            let sel = select_rule_cv(units, &learners, design, &cf).map_err(|e| PipelineError::stage(Stage::Rule, e))?;
            (sel.rule, learners.iter().map(|l| l.name()).collect(), sel.cv_values, sel.chosen)
        }
    };
    Ok(RuleFit { rule, support: nuis.support, learners, cv_values, chosen })
}

pub fn stage_rule(cfg: &RunConfig, dir: &Path) -> Result<RuleFit> {
    let fit = estimate_rule(&units(cfg, dir)?, &cfg.design(), &cfg.causal, cfg.run_seed)?;
    write(dir, RULE_FILE, &fit.rule.to_json())?;
    write(dir, SUPPORT_FILE, &serde_json::to_string_pretty(&fit.support).expect("support serializes"))?;
    let selection = serde_json::json!({
        "method": cfg.causal.method,
        "learners": fit.learners,
        "cv_values": fit.cv_values,
        "chosen": fit.chosen,
    });
    write(dir, SELECTION_FILE, &serde_json::to_string_pretty(&selection).expect("selection serializes"))?;
    Ok(fit)
}

/// Cross-fitted values of every single-provider rule and, when a rule has
/// been learned, of that rule.
pub fn stage_estimate(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let units = units(cfg, dir)?;
    let design = cfg.design();
    let cf = cfg.crossfit();
    let kind = cfg.causal.estimator;
    let est = |rule: &ProviderRule| -> Result<PolicyValueEstimate> {
        crossfit_value(&units, rule, &design, &cf, kind).map_err(|e| PipelineError::stage(Stage::Estimate, e))
    };
    let per_provider = (0..design.n_providers)
        .map(|j| {
            let mut v = est(&ProviderRule::constant(design.strata, j))?.to_json_value();
            let obj = v.as_object_mut().expect("estimate is an object");
            obj.remove("rule");
            obj.insert("provider".into(), j.into());
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    let rule_path = dir.join(RULE_FILE);
    let rule_value = if rule_path.exists() { Some(est(&load_rule(dir)?)?.to_json_value()) } else { None };
    let out = serde_json::json!({
        "estimator": kind,
        "crossfit_folds": cf.folds,
        "delta": cf.delta,
        "per_provider": per_provider,
        "optimal_rule": rule_value,
    });
    write(dir, ESTIMATES_FILE, &serde_json::to_string_pretty(&out).expect("estimates serialize"))?;
    Ok(out)
}

/// Report families written by the evaluate stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    TopK,
    Separation,
    QAcc,
    All,
}

impl std::str::FromStr for ReportKind {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topk" => Ok(ReportKind::TopK),
            "separation" => Ok(ReportKind::Separation),
            "qacc" => Ok(ReportKind::QAcc),
            "all" => Ok(ReportKind::All),
            _ => Err(PipelineError::Config(format!("unknown report '{s}' (expected topk, separation, qacc or all)"))),
        }
    }
}

/// Reports for one model on one evaluation set. Δ strata use separation
/// measured on `calibration`, which must not overlap `eval`.
pub fn model_reports(
    model: &PolicyModel<f32>,
    eval: &[OrderSetPair],
    calibration: &[OrderSetPair],
    frequencies: &[usize],
    metrics: &MetricsConfig,
    seed: u64,
) -> Result<ModelReports> {
    let m = |e| PipelineError::stage(Stage::Evaluate, e);
    let vocab_size = model.hyperparams().vocab_size;
    let separation = separation_table(model, calibration, seed).map_err(m)?;
    let deltas = delta_by_token(&separation, vocab_size);
    let evals = evaluate_pairs(model, eval).map_err(m)?;
    let strats = [
        Stratification::All,
        Stratification::ContextBins(metrics.context_edges.clone()),
        Stratification::DeltaDeciles { deltas: deltas.clone() },
        Stratification::FrequencyGroups { groups: metrics.frequency_groups, frequencies: frequencies.to_vec() },
        Stratification::DeltaGroups { groups: metrics.delta_groups, deltas },
    ];
    let reports =
        strats.iter().map(|s| stratified_report(&evals, eval, s, &metrics.ks)).collect::<std::result::Result<Vec<_>, _>>().map_err(m)?;
    let eval_separation = if eval.is_empty() { Vec::new() } else { separation_table(model, eval, seed).map_err(m)? };
    Ok(ModelReports { reports, calibration_separation: separation, eval_separation })
}

pub struct ModelReports {
    /// All, context bins, Δ deciles, frequency groups, Δ groups.
    pub reports: Vec<MetricsReport>,
    pub calibration_separation: Vec<crate::metrics::SeparationStat>,
    pub eval_separation: Vec<crate::metrics::SeparationStat>,
}

fn write_reports(dir: &Path, name: &str, r: &ModelReports, kind: ReportKind) -> Result<()> {
    let base = format!("reports/{name}");
    if matches!(kind, ReportKind::TopK | ReportKind::All) {
        let topk: Vec<MetricsReport> = r.reports[..3].to_vec();
        write(dir, &format!("{base}/topk.csv"), &reports_to_csv(&topk))?;
        write(dir, &format!("{base}/topk.json"), &serde_json::to_string_pretty(&topk).expect("report serializes"))?;
    }
    if matches!(kind, ReportKind::QAcc | ReportKind::All) {
        let q = [r.reports[0].clone(), r.reports[1].clone(), r.reports[3].clone(), r.reports[4].clone()];
        write(dir, &format!("{base}/qacc.csv"), &qacc_csv(&q))?;
    }
    if matches!(kind, ReportKind::Separation | ReportKind::All) {
        write(dir, &format!("{base}/separation.csv"), &separation_csv(&r.eval_separation))?;
        write(dir, &format!("{base}/separation_calibration.csv"), &separation_csv(&r.calibration_separation))?;
    }
    Ok(())
}

/// Reports for the pretrained model on all test pairs and for each
/// provider model on that provider's test pairs. The fine-tune partition
/// is the Δ calibration set.
pub fn stage_evaluate(cfg: &RunConfig, dir: &Path, kind: ReportKind) -> Result<()> {
    let vocab = load_vocab(dir)?;
    let test = load_pairs(dir, "test")?;
    let calibration = load_pairs(dir, "finetune")?;
    let frequencies = target_frequencies(&load_pairs(dir, "pretrain")?, &vocab);
    let pre = load_model(dir, PRETRAINED_DIR)?;
    let r = model_reports(&pre, &test, &calibration, &frequencies, &cfg.metrics, cfg.run_seed)?;
    write_reports(dir, "pre", &r, kind)?;
    for j in 0..cfg.scm.n_providers {
        let model = load_model(dir, &provider_dir(j))?;
        let r = model_reports(&model, &provider_subset(&test, j), &calibration, &frequencies, &cfg.metrics, cfg.run_seed)?;
        write_reports(dir, &format!("provider_{j}"), &r, kind)?;
    }
    Ok(())
}

/// Content hashes of every file in the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub artifacts: BTreeMap<String, String>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    for entry in entries {
        let path = entry.map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("inside root").to_string_lossy().replace('\\', "/");
            if rel != MANIFEST_FILE && rel != FAILED_FILE {
                out.push(rel);
            }
        }
    }
    Ok(())
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    Ok(sha256_hex(&bytes))
}

pub fn write_manifest(cfg: &RunConfig, dir: &Path) -> Result<Manifest> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let artifacts = files.into_iter().map(|rel| Ok((rel.clone(), hash_file(&dir.join(&rel))?))).collect::<Result<_>>()?;
    let manifest = Manifest { version: env!("CARGO_PKG_VERSION").to_string(), config_hash: cfg.hash(), artifacts };
    write(dir, MANIFEST_FILE, &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    serde_json::from_str(&read(&dir.join(MANIFEST_FILE))?).map_err(|e| PipelineError::stage(Stage::Manifest, e))
}

/// Re-hashes every listed artifact (or only those under `only` prefixes).
pub fn verify_manifest(dir: &Path, only: &[&str]) -> Result<Manifest> {
    let manifest = load_manifest(dir)?;
    for (rel, hash) in &manifest.artifacts {
        if !only.is_empty() && !only.iter().any(|p| rel.starts_with(p)) {
            continue;
        }
        let path = dir.join(rel);
        if !path.exists() {
            return Err(PipelineError::Missing(path));
        }
        if &hash_file(&path)? != hash {
            return Err(PipelineError::Tampered(rel.clone()));
        }
    }
    Ok(manifest)
}

/// Paths of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct DcbplArtifacts {
    pub dir: PathBuf,
    pub pretrained: PathBuf,
    pub per_provider: BTreeMap<usize, PathBuf>,
    pub rule: ProviderRule,
    pub estimates: serde_json::Value,
    pub manifest: Manifest,
}

fn run_stages(cfg: &RunConfig, dir: &Path) -> Result<DcbplArtifacts> {
    stage_simulate(cfg, dir)?;
    stage_prepare(cfg, dir)?;
    stage_pretrain(cfg, dir)?;
    for j in 0..cfg.scm.n_providers {
        stage_finetune(cfg, dir, j)?;
    }
    let fit = stage_rule(cfg, dir)?;
    let estimates = stage_estimate(cfg, dir)?;
    stage_evaluate(cfg, dir, ReportKind::All)?;
    let manifest = write_manifest(cfg, dir)?;
    Ok(DcbplArtifacts {
        dir: dir.to_path_buf(),
        pretrained: dir.join(PRETRAINED_DIR),
        per_provider: (0..cfg.scm.n_providers).map(|j| (j, dir.join(provider_dir(j)))).collect(),
        rule: fit.rule,
        estimates,
        manifest,
    })
}

/// Writes the failure marker for `err`, keeping whatever was written.
pub fn mark_failed(dir: &Path, err: &PipelineError) {
    if dir.exists() {
        let _ = fs::write(dir.join(FAILED_FILE), format!("{err}\n"));
    }
}

/// The full procedure: pretrain on everyone, fine-tune per provider,
/// learn the provider rule, evaluate, and write the manifest.
pub fn run_dcbpl(cfg: &RunConfig, dir: &Path) -> Result<DcbplArtifacts> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    let _ = fs::remove_file(dir.join(FAILED_FILE));
    run_stages(cfg, dir).inspect_err(|e| mark_failed(dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedAction {
    pub action: usize,
    pub token: Token,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub stratum: String,
    pub provider: usize,
    pub actions: Vec<RankedAction>,
}

/// Strata that appear in the cohort the rule was learned from.
pub fn known_strata(dir: &Path, rule: &ProviderRule) -> Result<Vec<Stratum>> {
    let support: Vec<Vec<usize>> =
        serde_json::from_str(&read(&dir.join(SUPPORT_FILE))?).map_err(|e| PipelineError::stage(Stage::Query, e))?;
    let strata = rule.strata();
    Ok(strata.iter().filter(|&s| support.get(strata.index(s)).is_some_and(|row| row.iter().sum::<usize>() > 0)).collect())
}

/// Encodes action-id sets as a model prefix `BOS S_0 SEP S_1 SEP ..`.
pub fn encode_prefix(sets: &[Vec<usize>], vocab: &Vocabulary) -> Result<Vec<Token>> {
    let mut out = vec![BOS];
    for set in sets {
        let mut toks = set
            .iter()
            .map(|&a| vocab.token_of(a).ok_or_else(|| PipelineError::Config(format!("action {a} is not in the vocabulary"))))
            .collect::<Result<Vec<_>>>()?;
        toks.sort_unstable();
        toks.dedup();
        out.extend(toks);
        out.push(SEP);
    }
    Ok(out)
}

/// Looks up the learned provider for `stratum` and returns that provider
/// model's `k` most likely next actions after `prefix`.
pub fn query_optimal_policy(dir: &Path, stratum: Stratum, prefix: &[Vec<usize>], k: usize) -> Result<QueryResult> {
    if k == 0 {
        return Err(PipelineError::Config("k must be at least 1".into()));
    }
    verify_manifest(dir, &[RULE_FILE, SUPPORT_FILE, VOCAB_FILE])?;
    let rule = load_rule(dir)?;
    let known = known_strata(dir, &rule)?;
    if !known.contains(&stratum) {
        let list: Vec<String> = known.iter().map(|s| format!("({s})")).collect();
        return Err(PipelineError::UnknownStratum { stratum: stratum.to_string(), known: list.join(" ") });
    }
    let provider = rule.provider_for(stratum);
    let model_rel = provider_dir(provider);
    verify_manifest(dir, &[model_rel.as_str()])?;
    let vocab = load_vocab(dir)?;
    let model = load_model(dir, &model_rel)?;
    let tokens = encode_prefix(prefix, &vocab)?;
    let context = model.hyperparams().context;
    let tokens = &tokens[tokens.len().saturating_sub(context)..];
    let dist = model.next_distribution(tokens).map_err(|e| PipelineError::stage(Stage::Query, e))?;
    let mut ranked: Vec<RankedAction> = vocab
        .action_tokens()
        .map(|t| RankedAction { action: vocab.action_of(t).expect("action token"), token: t, probability: dist[t as usize] })
        .collect();
    ranked.sort_by(|a, b| b.probability.total_cmp(&a.probability).then(a.token.cmp(&b.token)));
    ranked.truncate(k);
    Ok(QueryResult { stratum: stratum.to_string(), provider, actions: ranked })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_hash_ignores_output_dir() {
        let mut cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let h = cfg.hash();
        cfg.output_dir = Some("elsewhere".into());
        assert_eq!(cfg.hash(), h);
        cfg.run_seed = 9;
        assert_ne!(cfg.hash(), h);
    }

    #[test]
    fn rejects_bad_split() {
        let mut cfg = RunConfig::default();
        cfg.split.test_fraction = 0.9;
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn parses_methods_and_reports() {
        assert_eq!("cv-select".parse::<RuleMethod>().unwrap(), RuleMethod::CvSelect);
        assert!("best".parse::<RuleMethod>().is_err());
        assert_eq!("qacc".parse::<ReportKind>().unwrap(), ReportKind::QAcc);
    }

    #[test]
    fn prefix_encoding() {
        let vocab = Vocabulary::from_actions(vec![7, 2, 5]);
        assert_eq!(encode_prefix(&[], &vocab).unwrap(), vec![BOS]);
        assert_eq!(encode_prefix(&[vec![5, 7], vec![2]], &vocab).unwrap(), vec![BOS, 3, 5, SEP, 4, SEP]);
        assert!(encode_prefix(&[vec![9]], &vocab).is_err());
    }
}
