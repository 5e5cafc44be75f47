//! Provider-rule learning and policy-value estimation on point-treatment
//! data: a baseline stratum, the assigned provider and a bounded outcome.
//!
//! Nuisances are saturated: the provider mechanism is a smoothed, floored
//! frequency table per stratum and the outcome regression is a table of
//! cell means. Value estimators are A-IPW, a logistic-fluctuation TMLE and
//! the plain plug-in, each optionally cross-fitted.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scm::{ProviderRule, ScmError, StratumSpace, Trajectory};
use crate::seeding::{domain, stream};

/// Pseudo-count added to every provider when estimating assignment rates.
pub const G_PSEUDO_COUNT: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 0.01;
pub const Q_CLIP: (f64, f64) = (0.005, 0.995);
pub const TMLE_TOL: f64 = 1e-10;
pub const TMLE_MAX_ITER: usize = 100;

#[derive(Debug, Error)]
pub enum CausalError {
    #[error("no units to estimate from")]
    NoUnits,
    #[error("unit {unit}: {msg}")]
    InvalidUnit { unit: usize, msg: String },
    #[error("unit {unit}: zero propensity for provider {provider}")]
    ZeroPropensity { unit: usize, provider: usize },
    #[error("fluctuation did not converge after {iterations} iterations (mean score {score:e})")]
    NonConvergence { iterations: usize, score: f64 },
    #[error("folds: {0}")]
    Folds(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Scm(#[from] ScmError),
}

/// One encounter reduced to baseline stratum, provider and outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub stratum: usize,
    pub provider: usize,
    pub outcome: f64,
}

pub fn units_from_cohort(cohort: &[Trajectory], strata: StratumSpace) -> Vec<Unit> {
    cohort
        .iter()
        .map(|t| Unit { stratum: strata.index(t.baseline), provider: t.provider, outcome: t.outcome })
        .collect()
}

/// Sizes of the stratum and provider spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Design {
    pub strata: StratumSpace,
    pub n_providers: usize,
}

impl Design {
    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn check_units(&self, units: &[Unit]) -> Result<(), CausalError> {
        for (i, u) in units.iter().enumerate() {
            let msg = if u.stratum >= self.n_strata() {
                format!("stratum {} out of range", u.stratum)
            } else if u.provider >= self.n_providers {
                format!("provider {} out of range", u.provider)
            } else if !(0.0..=1.0).contains(&u.outcome) {
                format!("outcome {} outside [0, 1]", u.outcome)
            } else {
                continue;
            };
            return Err(CausalError::InvalidUnit { unit: i, msg });
        }
        Ok(())
    }
}

/// Raises entries below `delta` to `delta` and rescales the others so the
/// vector still sums to one; repeats until no rescaled entry drops below.
pub fn floor_and_renormalize(p: &mut [f64], delta: f64) {
    let mut floored = vec![false; p.len()];
    loop {
        let mut changed = false;
        for (x, f) in p.iter_mut().zip(floored.iter_mut()) {
            if !*f && *x < delta {
                *f = true;
                changed = true;
            }
        }
        let n_floor = floored.iter().filter(|&&f| f).count();
        let free_mass: f64 = p.iter().zip(&floored).filter(|(_, &f)| !f).map(|(x, _)| *x).sum();
        let target = 1.0 - n_floor as f64 * delta;
        for (x, &f) in p.iter_mut().zip(&floored) {
            *x = if f { delta } else { *x * target / free_mass };
        }
        if !changed {
            break;
        }
    }
}

/// `[stratum][provider]` assignment probabilities: counts plus
/// [`G_PSEUDO_COUNT`], normalized, then floored at `delta`. Empty strata
/// get the uniform vector.
pub fn fit_provider_mechanism(units: &[Unit], design: &Design, delta: f64) -> Result<Vec<Vec<f64>>, CausalError> {
    let m = design.n_providers;
    if !(0.0..1.0 / m as f64).contains(&delta) {
        return Err(CausalError::Invalid(format!("floor {delta} outside [0, 1/{m})")));
    }
    design.check_units(units)?;
    let counts = cell_counts(units, design);
    Ok(counts
        .iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            if n == 0 {
                return vec![1.0 / m as f64; m];
            }
            let total = n as f64 + G_PSEUDO_COUNT * m as f64;
            let mut p: Vec<f64> = row.iter().map(|&c| (c as f64 + G_PSEUDO_COUNT) / total).collect();
            floor_and_renormalize(&mut p, delta);
            p
        })
        .collect())
}

fn cell_counts(units: &[Unit], design: &Design) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0usize; design.n_providers]; design.n_strata()];
    for u in units {
        counts[u.stratum][u.provider] += 1;
    }
    counts
}

/// `[stratum][provider]` cell means of the outcome. Empty cells fall back
/// to the stratum mean, then to the global mean.
pub fn fit_outcome_regression(units: &[Unit], design: &Design) -> Result<Vec<Vec<f64>>, CausalError> {
    if units.is_empty() {
        return Err(CausalError::NoUnits);
    }
    design.check_units(units)?;
    let (s, m) = (design.n_strata(), design.n_providers);
    let mut sum = vec![vec![0.0; m]; s];
    let mut count = vec![vec![0usize; m]; s];
    for u in units {
        sum[u.stratum][u.provider] += u.outcome;
        count[u.stratum][u.provider] += 1;
    }
    let global = units.iter().map(|u| u.outcome).sum::<f64>() / units.len() as f64;
    Ok((0..s)
        .map(|si| {
            let n: usize = count[si].iter().sum();
            let stratum_mean = if n > 0 { sum[si].iter().sum::<f64>() / n as f64 } else { global };
            (0..m)
                .map(|j| if count[si][j] > 0 { sum[si][j] / count[si][j] as f64 } else { stratum_mean })
                .collect()
        })
        .collect())
}

/// Fitted ĝ and Q̄ tables with the cell counts they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceEstimates {
    /// `[stratum][provider]` assignment probabilities.
    pub g_hat: Vec<Vec<f64>>,
    /// `[stratum][provider]` outcome regression.
    pub q_hat: Vec<Vec<f64>>,
    /// `[stratum][provider]` units behind each cell.
    pub support: Vec<Vec<usize>>,
}

impl NuisanceEstimates {
    pub fn fit(units: &[Unit], design: &Design, delta: f64) -> Result<Self, CausalError> {
        Ok(NuisanceEstimates {
            g_hat: fit_provider_mechanism(units, design, delta)?,
            q_hat: fit_outcome_regression(units, design)?,
            support: cell_counts(units, design),
        })
    }

    pub fn g(&self, stratum: usize, provider: usize) -> f64 {
        self.g_hat[stratum][provider]
    }

    pub fn q(&self, stratum: usize, provider: usize) -> f64 {
        self.q_hat[stratum][provider]
    }
}

/// `q(j') - q(j)` within one stratum's row of Q̄.
pub fn pairwise_blip(q_row: &[f64], j_prime: usize, j: usize) -> f64 {
    q_row[j_prime] - q_row[j]
}

/// `q(j')` minus the provider-average of `q` within one stratum's row.
pub fn pseudo_blip(q_row: &[f64], j_prime: usize) -> f64 {
    q_row[j_prime] - q_row.iter().sum::<f64>() / q_row.len() as f64
}

/// Per stratum, the provider with the largest pseudo-blip among those
/// with at least `support_min` units; ties go to the lowest id. Strata
/// where nobody meets the threshold use all providers and are listed in
/// the rule's `fallback`.
pub fn rule_from_pseudo_blip(nuisances: &NuisanceEstimates, strata: StratumSpace, support_min: usize) -> ProviderRule {
    let mut fallback = Vec::new();
    let assignment = nuisances
        .q_hat
        .iter()
        .enumerate()
        .map(|(s, row)| {
            let eligible: Vec<usize> = (0..row.len()).filter(|&j| nuisances.support[s][j] >= support_min).collect();
            let candidates = if eligible.is_empty() {
                fallback.push(s);
                (0..row.len()).collect()
            } else {
                eligible
            };
            let mut best = candidates[0];
            for &j in &candidates[1..] {
                if pseudo_blip(row, j) > pseudo_blip(row, best) {
                    best = j;
                }
            }
            best
        })
        .collect();
    let mut rule = ProviderRule::new(strata, assignment);
    rule.fallback = fallback;
    rule
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Aipw,
    Tmle,
    Plugin,
}

impl std::str::FromStr for EstimatorKind {
    type Err = CausalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aipw" => Ok(EstimatorKind::Aipw),
            "tmle" => Ok(EstimatorKind::Tmle),
            "plugin" => Ok(EstimatorKind::Plugin),
            other => Err(CausalError::Invalid(format!("unknown estimator {other}"))),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Aipw => "aipw",
            EstimatorKind::Tmle => "tmle",
            EstimatorKind::Plugin => "plugin",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValueEstimate {
    pub value: f64,
    pub std_error: f64,
    pub estimator: EstimatorKind,
    pub rule: ProviderRule,
    pub n: usize,
    /// Fitted fluctuation parameter (TMLE only).
    pub epsilon: Option<f64>,
    /// Mean of `H (Y - Q*)` after fluctuation (TMLE only).
    pub score: Option<f64>,
}

impl PolicyValueEstimate {
    pub fn to_json_value(&self) -> serde_json::Value {
        let rule: serde_json::Value = serde_json::from_str(&self.rule.to_json()).expect("rule json");
        let mut v = serde_json::json!({
            "value": self.value,
            "se": self.std_error,
            "estimator": self.estimator,
            "n": self.n,
            "rule": rule,
        });
        if let Some(e) = self.epsilon {
            v["epsilon"] = e.into();
        }
        if let Some(s) = self.score {
            v["score"] = s.into();
        }
        v
    }
}

/// Nuisance values each estimator needs for one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Terms {
    follows: bool,
    y: f64,
    g_obs: f64,
    g_rule: f64,
    q_obs: f64,
    q_rule: f64,
}

fn unit_terms(units: &[Unit], idx: &[usize], rule: &ProviderRule, nuis: &NuisanceEstimates) -> Result<Vec<Terms>, CausalError> {
    idx.iter()
        .map(|&i| {
            let u = &units[i];
            let d = rule.provider_at(u.stratum);
            let g_obs = nuis.g(u.stratum, u.provider);
            if g_obs <= 0.0 {
                return Err(CausalError::ZeroPropensity { unit: i, provider: u.provider });
            }
            Ok(Terms {
                follows: u.provider == d,
                y: u.outcome,
                g_obs,
                g_rule: nuis.g(u.stratum, d),
                q_obs: nuis.q(u.stratum, u.provider),
                q_rule: nuis.q(u.stratum, d),
            })
        })
        .collect()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct Fit {
    value: f64,
    se: f64,
    epsilon: Option<f64>,
    score: Option<f64>,
}

fn aipw_fit(terms: &[Terms]) -> Fit {
    let phi: Vec<f64> = terms
        .iter()
        .map(|t| {
            let w = if t.follows { 1.0 / t.g_obs } else { 0.0 };
            w * (t.y - t.q_obs) + t.q_rule
        })
        .collect();
    let (value, se) = mean_se(&phi);
    Fit { value, se, epsilon: None, score: None }
}

fn plugin_fit(terms: &[Terms]) -> Fit {
    let q: Vec<f64> = terms.iter().map(|t| t.q_rule).collect();
    let (value, se) = mean_se(&q);
    Fit { value, se, epsilon: None, score: None }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(x: f64) -> f64 {
    crate::scm::logistic(x)
}

fn clip_q(q: f64) -> f64 {
    q.clamp(Q_CLIP.0, Q_CLIP.1)
}

fn tmle_fit(terms: &[Terms]) -> Result<Fit, CausalError> {
    let n = terms.len() as f64;
    // (clever covariate, offset, outcome) for units that follow the rule.
    let active: Vec<(f64, f64, f64)> =
        terms.iter().filter(|t| t.follows).map(|t| (1.0 / t.g_obs, logit(clip_q(t.q_obs)), t.y)).collect();
    let score_at = |eps: f64| active.iter().map(|&(h, off, y)| h * (y - expit(off + eps * h))).sum::<f64>();
    let loglik_at = |eps: f64| {
        active
            .iter()
            .map(|&(h, off, y)| {
                let p = expit(off + eps * h).clamp(1e-300, 1.0 - 1e-16);
                y * p.ln() + (1.0 - y) * (1.0 - p).ln()
            })
            .sum::<f64>()
    };

    let mut eps = 0.0;
    let mut score = score_at(eps);
    let mut iterations = 0;
    while (score / n).abs() >= TMLE_TOL {
        if iterations == TMLE_MAX_ITER {
            return Err(CausalError::NonConvergence { iterations, score: score / n });
        }
        let info: f64 = active
            .iter()
            .map(|&(h, off, _)| {
                let p = expit(off + eps * h);
                h * h * p * (1.0 - p)
            })
            .sum();
        if info <= 0.0 || !info.is_finite() {
            return Err(CausalError::NonConvergence { iterations, score: score / n });
        }
        let base = loglik_at(eps);
        let slack = 1e-12 * base.abs().max(1.0);
        let mut step = score / info;
        let mut next = eps + step;
        for _ in 0..60 {
            if loglik_at(next) >= base - slack {
                break;
            }
            step /= 2.0;
            next = eps + step;
        }
        eps = next;
        score = score_at(eps);
        iterations += 1;
    }

    let q_star_rule: Vec<f64> =
        terms.iter().map(|t| expit(logit(clip_q(t.q_rule)) + eps / t.g_rule)).collect();
    let value = q_star_rule.iter().sum::<f64>() / n;
    let eic: Vec<f64> = terms
        .iter()
        .zip(&q_star_rule)
        .map(|(t, &qd)| {
            let resid = if t.follows { (t.y - expit(logit(clip_q(t.q_obs)) + eps / t.g_obs)) / t.g_obs } else { 0.0 };
            resid + qd - value
        })
        .collect();
    let (_, se) = mean_se(&eic);
    Ok(Fit { value, se, epsilon: Some(eps), score: Some(score / n) })
}

fn estimate(terms: &[Terms], kind: EstimatorKind, rule: &ProviderRule) -> Result<PolicyValueEstimate, CausalError> {
    if terms.is_empty() {
        return Err(CausalError::NoUnits);
    }
    let fit = match kind {
        EstimatorKind::Aipw => aipw_fit(terms),
        EstimatorKind::Tmle => tmle_fit(terms)?,
        EstimatorKind::Plugin => plugin_fit(terms),
    };
    Ok(PolicyValueEstimate {
        value: fit.value,
        std_error: fit.se,
        estimator: kind,
        rule: rule.clone(),
        n: terms.len(),
        epsilon: fit.epsilon,
        score: fit.score,
    })
}

fn all_indices(units: &[Unit]) -> Vec<usize> {
    (0..units.len()).collect()
}

/// Value of `rule` with fixed nuisances.
pub fn value(units: &[Unit], rule: &ProviderRule, nuisances: &NuisanceEstimates, kind: EstimatorKind) -> Result<PolicyValueEstimate, CausalError> {
    estimate(&unit_terms(units, &all_indices(units), rule, nuisances)?, kind, rule)
}

/// Augmented inverse-probability-weighted value of `rule`.
pub fn aipw_value(units: &[Unit], rule: &ProviderRule, nuisances: &NuisanceEstimates) -> Result<PolicyValueEstimate, CausalError> {
    value(units, rule, nuisances, EstimatorKind::Aipw)
}

/// Targeted (logistic-fluctuation) value of `rule`.
pub fn tmle_value(units: &[Unit], rule: &ProviderRule, nuisances: &NuisanceEstimates) -> Result<PolicyValueEstimate, CausalError> {
    value(units, rule, nuisances, EstimatorKind::Tmle)
}

/// Mean of `Q̄(d(s_i), s_i)` over units.
pub fn plugin_value(units: &[Unit], rule: &ProviderRule, nuisances: &NuisanceEstimates) -> Result<PolicyValueEstimate, CausalError> {
    value(units, rule, nuisances, EstimatorKind::Plugin)
}

/// Balanced seeded assignment of `n` units to `folds` folds.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>, CausalError> {
    if folds < 2 {
        return Err(CausalError::Folds(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(CausalError::Folds(format!("{n} units cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, domain::FOLDS, 0));
    let mut fold_of = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        fold_of[i] = rank % folds;
    }
    Ok(fold_of)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossFit {
    pub folds: usize,
    pub seed: u64,
    pub delta: f64,
}

impl Default for CrossFit {
    fn default() -> Self {
        CrossFit { folds: 5, seed: 0, delta: DEFAULT_DELTA }
    }
}

fn fold_members(fold_of: &[usize]) -> Result<Vec<Vec<usize>>, CausalError> {
    let folds = fold_of.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); folds];
    for (i, &f) in fold_of.iter().enumerate() {
        members[f].push(i);
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(CausalError::Folds(format!("fold {empty} has no units")));
    }
    if members.len() < 2 {
        return Err(CausalError::Folds("need at least 2 folds".into()));
    }
    Ok(members)
}

/// Cross-fitted value with an explicit fold map: nuisances for fold `v`
/// are fit on every other fold, terms are pooled across folds, and TMLE
/// fits one fluctuation over the pooled terms.
pub fn crossfit_value_with_folds(
    units: &[Unit],
    rule: &ProviderRule,
    design: &Design,
    fold_of: &[usize],
    delta: f64,
    kind: EstimatorKind,
) -> Result<PolicyValueEstimate, CausalError> {
    if fold_of.len() != units.len() {
        return Err(CausalError::Folds(format!("{} fold labels for {} units", fold_of.len(), units.len())));
    }
    design.check_units(units)?;
    let members = fold_members(fold_of)?;
    let per_fold: Vec<Vec<Terms>> = members
        .par_iter()
        .enumerate()
        .map(|(v, idx)| {
            let train: Vec<Unit> = units.iter().zip(fold_of).filter(|(_, &f)| f != v).map(|(u, _)| *u).collect();
            let nuis = NuisanceEstimates::fit(&train, design, delta)?;
            unit_terms(units, idx, rule, &nuis)
        })
        .collect::<Result<_, CausalError>>()?;
    let terms: Vec<Terms> = per_fold.into_iter().flatten().collect();
    estimate(&terms, kind, rule)
}

/// [`crossfit_value_with_folds`] with seeded balanced folds.
pub fn crossfit_value(
    units: &[Unit],
    rule: &ProviderRule,
    design: &Design,
    cf: &CrossFit,
    kind: EstimatorKind,
) -> Result<PolicyValueEstimate, CausalError> {
    let fold_of = fold_assignment(units.len(), cf.folds, cf.seed)?;
    crossfit_value_with_folds(units, rule, design, &fold_of, cf.delta, kind)
}

/// Something that maps training units to a provider rule.
pub trait RuleLearner: Send + Sync {
    fn name(&self) -> String;
    fn learn(&self, units: &[Unit], design: &Design) -> Result<ProviderRule, CausalError>;
}

/// Pseudo-blip argmax over saturated nuisances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoBlipLearner {
    pub delta: f64,
    pub support_min: usize,
}

impl RuleLearner for PseudoBlipLearner {
    fn name(&self) -> String {
        format!("pseudo-blip(support>={})", self.support_min)
    }

    fn learn(&self, units: &[Unit], design: &Design) -> Result<ProviderRule, CausalError> {
        let nuis = NuisanceEstimates::fit(units, design, self.delta)?;
        Ok(rule_from_pseudo_blip(&nuis, design.strata, self.support_min))
    }
}

/// Sends every stratum to one provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantLearner(pub usize);

impl RuleLearner for ConstantLearner {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }

    fn learn(&self, _units: &[Unit], design: &Design) -> Result<ProviderRule, CausalError> {
        Ok(ProviderRule::constant(design.strata, self.0))
    }
}

/// Ignores the data and returns a given rule.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedRuleLearner {
    pub label: String,
    pub rule: ProviderRule,
}

impl RuleLearner for FixedRuleLearner {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn learn(&self, _units: &[Unit], _design: &Design) -> Result<ProviderRule, CausalError> {
        Ok(self.rule.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSelection {
    pub rule: ProviderRule,
    pub chosen: usize,
    /// Cross-validated mean A-IPW value of each learner.
    pub cv_values: Vec<f64>,
}

/// Discrete cross-validated selector: each learner is fit on the training
/// folds, its rule scored by A-IPW on the held-out fold with nuisances from
/// the training folds, and the best mean wins (earliest on ties). The
/// winner is refit on all units.
pub fn select_rule_cv(
    units: &[Unit],
    learners: &[&dyn RuleLearner],
    design: &Design,
    cf: &CrossFit,
) -> Result<CvSelection, CausalError> {
    if learners.is_empty() {
        return Err(CausalError::Invalid("no rule learners".into()));
    }
    if learners.len() == 1 {
        return Ok(CvSelection { rule: learners[0].learn(units, design)?, chosen: 0, cv_values: vec![f64::NAN] });
    }
    design.check_units(units)?;
    let fold_of = fold_assignment(units.len(), cf.folds, cf.seed)?;
    let members = fold_members(&fold_of)?;
    let per_fold: Vec<Vec<f64>> = members
        .par_iter()
        .enumerate()
        .map(|(v, idx)| {
            let train: Vec<Unit> = units.iter().zip(&fold_of).filter(|(_, &f)| f != v).map(|(u, _)| *u).collect();
            let nuis = NuisanceEstimates::fit(&train, design, cf.delta)?;
            learners
                .iter()
                .map(|l| {
                    let rule = l.learn(&train, design)?;
                    Ok(aipw_fit(&unit_terms(units, idx, &rule, &nuis)?).value)
                })
                .collect::<Result<Vec<f64>, CausalError>>()
        })
        .collect::<Result<_, CausalError>>()?;
    let k = members.len() as f64;
    let cv_values: Vec<f64> =
        (0..learners.len()).map(|l| per_fold.iter().map(|row| row[l]).sum::<f64>() / k).collect();
    let mut chosen = 0;
    for (l, &v) in cv_values.iter().enumerate() {
        if v > cv_values[chosen] {
            chosen = l;
        }
    }
    Ok(CvSelection { rule: learners[chosen].learn(units, design)?, chosen, cv_values })
}
