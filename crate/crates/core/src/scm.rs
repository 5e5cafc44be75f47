//! Structural causal model simulator for provider-driven action paths.
//!
//! A patient arrives with a baseline stratum `(complaint, severity)`, is
//! assigned a provider from a floored softmax over the complaint's
//! assignment logits, and then receives `horizon` action sets drawn from
//! that provider's policy. Latent health moves additively with the effects
//! of the chosen actions plus Gaussian noise; the outcome is the logistic
//! of terminal health.
//!
//! The provider enters the data only through the action policy. The state
//! transition never sees the provider id, so replaying a trajectory's
//! actions under any other provider reproduces its outcome exactly.
//!
//! Each patient draws from four independent counter-based streams
//! (baseline, assignment, actions, states), which makes cohorts
//! bit-reproducible and lets the simulator run in parallel.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{domain, stream};

/// Lower bound on every provider's assignment probability in every stratum.
pub const ASSIGNMENT_FLOOR: f64 = 0.01;

/// Initial latent health is `-SEVERITY_SLOPE * severity`.
pub const SEVERITY_SLOPE: f64 = 0.5;

/// Action-set sizes are drawn uniformly from `1..=MAX_SET_SIZE`.
pub const MAX_SET_SIZE: usize = 3;

/// Default Monte Carlo size for the oracle rule.
pub const DEFAULT_ORACLE_MC: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid provider {provider} (config has {n_providers})")]
    UnknownProvider { provider: usize, n_providers: usize },
    #[error("invalid stratum (complaint {complaint}, severity {severity})")]
    UnknownStratum { complaint: usize, severity: usize },
}

/// Parameters of one synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmConfig {
    pub n_providers: usize,
    pub n_actions: usize,
    pub n_complaints: usize,
    pub n_severities: usize,
    /// Steps per encounter.
    pub horizon: usize,
    /// `[provider][complaint]` competence: scales how strongly a provider
    /// steers toward helpful actions for that complaint.
    pub skill: Vec<Vec<f64>>,
    /// `[action][complaint]` increments to latent health.
    pub action_effects: Vec<Vec<f64>>,
    /// `[provider][action]` action-logit biases.
    pub provider_style: Vec<Vec<f64>>,
    /// `[complaint][provider]` assignment logits.
    pub assignment_bias: Vec<Vec<f64>>,
    pub noise_sd: f64,
    pub seed: u64,
}

fn check_matrix(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<(), ScmError> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        let got_cols = m.first().map_or(0, Vec::len);
        return Err(ScmError::Config(format!(
            "{name} must be {rows}x{cols}, got {}x{got_cols}",
            m.len()
        )));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ScmError::Config(format!("{name} has non-finite entries")));
    }
    Ok(())
}

impl ScmConfig {
    pub fn validate(&self) -> Result<(), ScmError> {
        if self.horizon == 0 {
            return Err(ScmError::Config("horizon must be >= 1".into()));
        }
        if self.n_providers == 0 {
            return Err(ScmError::Config("n_providers must be >= 1".into()));
        }
        if self.n_providers as f64 * ASSIGNMENT_FLOOR >= 1.0 {
            return Err(ScmError::Config(format!(
                "n_providers must be < {} for the assignment floor",
                (1.0 / ASSIGNMENT_FLOOR) as usize
            )));
        }
        if self.n_actions == 0 {
            return Err(ScmError::Config("n_actions must be >= 1".into()));
        }
        if self.n_complaints == 0 || self.n_severities == 0 {
            return Err(ScmError::Config("stratum space must be non-empty".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(ScmError::Config("noise_sd must be finite and >= 0".into()));
        }
        check_matrix("skill", &self.skill, self.n_providers, self.n_complaints)?;
        check_matrix("action_effects", &self.action_effects, self.n_actions, self.n_complaints)?;
        check_matrix("provider_style", &self.provider_style, self.n_providers, self.n_actions)?;
        check_matrix("assignment_bias", &self.assignment_bias, self.n_complaints, self.n_providers)?;
        Ok(())
    }

    pub fn strata(&self) -> StratumSpace {
        StratumSpace { n_complaints: self.n_complaints, n_severities: self.n_severities }
    }

    /// A world with every matrix zero: uniform policies, no effects.
    pub fn zeros(
        n_providers: usize,
        n_actions: usize,
        n_complaints: usize,
        n_severities: usize,
        horizon: usize,
    ) -> Self {
        ScmConfig {
            n_providers,
            n_actions,
            n_complaints,
            n_severities,
            horizon,
            skill: vec![vec![0.0; n_complaints]; n_providers],
            action_effects: vec![vec![0.0; n_complaints]; n_actions],
            provider_style: vec![vec![0.0; n_actions]; n_providers],
            assignment_bias: vec![vec![0.0; n_providers]; n_complaints],
            noise_sd: 0.0,
            seed: 0,
        }
    }
}

/// Baseline covariates at provider assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stratum {
    pub complaint: usize,
    pub severity: usize,
}

impl Stratum {
    pub fn new(complaint: usize, severity: usize) -> Self {
        Stratum { complaint, severity }
    }
}

impl std::fmt::Display for Stratum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.complaint, self.severity)
    }
}

impl std::str::FromStr for Stratum {
    type Err = ScmError;

    /// Parses `"complaint,severity"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScmError::Config(format!("stratum '{s}' is not of the form complaint,severity"));
        let (c, v) = s.split_once(',').ok_or_else(bad)?;
        Ok(Stratum::new(c.trim().parse().map_err(|_| bad())?, v.trim().parse().map_err(|_| bad())?))
    }
}

/// Dense indexing of the finite stratum grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumSpace {
    pub n_complaints: usize,
    pub n_severities: usize,
}

impl StratumSpace {
    pub fn len(&self) -> usize {
        self.n_complaints * self.n_severities
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, s: Stratum) -> bool {
        s.complaint < self.n_complaints && s.severity < self.n_severities
    }

    pub fn index(&self, s: Stratum) -> usize {
        s.complaint * self.n_severities + s.severity
    }

    pub fn stratum(&self, index: usize) -> Stratum {
        Stratum { complaint: index / self.n_severities, severity: index % self.n_severities }
    }

    pub fn iter(&self) -> impl Iterator<Item = Stratum> + '_ {
        (0..self.len()).map(move |i| self.stratum(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Sorted, distinct action ids.
    pub actions: Vec<usize>,
    /// Realized change in latent health over this step.
    pub delta: f64,
}

/// One encounter. Serializes to the cohort JSONL line format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(rename = "pid")]
    pub patient_id: u64,
    #[serde(flatten)]
    pub baseline: Stratum,
    pub provider: usize,
    pub steps: Vec<Step>,
    #[serde(rename = "y")]
    pub outcome: f64,
}

/// Deterministic stratum-to-provider map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderRule {
    strata: StratumSpace,
    assignment: Vec<usize>,
    /// Strata where no provider met the support threshold when the rule
    /// was learned.
    pub fallback: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RuleEntry {
    complaint: usize,
    severity: usize,
    provider: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    fallback: bool,
}

#[derive(Serialize, Deserialize)]
struct RuleWire {
    n_complaints: usize,
    n_severities: usize,
    rule: Vec<RuleEntry>,
}

impl ProviderRule {
    pub fn new(strata: StratumSpace, assignment: Vec<usize>) -> Self {
        assert_eq!(assignment.len(), strata.len(), "rule must cover every stratum");
        ProviderRule { strata, assignment, fallback: Vec::new() }
    }

    pub fn constant(strata: StratumSpace, provider: usize) -> Self {
        Self::new(strata, vec![provider; strata.len()])
    }

    pub fn strata(&self) -> StratumSpace {
        self.strata
    }

    pub fn provider_for(&self, s: Stratum) -> usize {
        self.assignment[self.strata.index(s)]
    }

    pub fn provider_at(&self, stratum_index: usize) -> usize {
        self.assignment[stratum_index]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn providers(&self) -> std::collections::BTreeSet<usize> {
        self.assignment.iter().copied().collect()
    }

    pub fn validate(&self, n_providers: usize) -> Result<(), ScmError> {
        match self.assignment.iter().find(|&&j| j >= n_providers) {
            Some(&provider) => Err(ScmError::UnknownProvider { provider, n_providers }),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        let wire = RuleWire {
            n_complaints: self.strata.n_complaints,
            n_severities: self.strata.n_severities,
            rule: self
                .assignment
                .iter()
                .enumerate()
                .map(|(i, &provider)| {
                    let s = self.strata.stratum(i);
                    RuleEntry {
                        complaint: s.complaint,
                        severity: s.severity,
                        provider,
                        fallback: self.fallback.contains(&i),
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&wire).expect("rule serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScmError> {
        let wire: RuleWire =
            serde_json::from_str(text).map_err(|e| ScmError::Config(format!("rule json: {e}")))?;
        let strata = StratumSpace { n_complaints: wire.n_complaints, n_severities: wire.n_severities };
        let mut assignment = vec![usize::MAX; strata.len()];
        let mut fallback = Vec::new();
        for e in wire.rule {
            let s = Stratum::new(e.complaint, e.severity);
            if !strata.contains(s) {
                return Err(ScmError::UnknownStratum { complaint: e.complaint, severity: e.severity });
            }
            let i = strata.index(s);
            assignment[i] = e.provider;
            if e.fallback {
                fallback.push(i);
            }
        }
        if let Some(i) = assignment.iter().position(|&j| j == usize::MAX) {
            let s = strata.stratum(i);
            return Err(ScmError::Config(format!("rule does not cover stratum {s}")));
        }
        Ok(ProviderRule { strata, assignment, fallback })
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl McEstimate {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        McEstimate { mean, se, n }
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Immutable generator; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: ScmConfig,
}

impl Simulator {
    pub fn new(config: ScmConfig) -> Result<Self, ScmError> {
        config.validate()?;
        Ok(Simulator { config })
    }

    pub fn config(&self) -> &ScmConfig {
        &self.config
    }

    pub fn strata(&self) -> StratumSpace {
        self.config.strata()
    }

    fn check_provider(&self, j: usize) -> Result<(), ScmError> {
        if j >= self.config.n_providers {
            return Err(ScmError::UnknownProvider { provider: j, n_providers: self.config.n_providers });
        }
        Ok(())
    }

    fn check_stratum(&self, s: Stratum) -> Result<(), ScmError> {
        if !self.strata().contains(s) {
            return Err(ScmError::UnknownStratum { complaint: s.complaint, severity: s.severity });
        }
        Ok(())
    }

    pub fn initial_health(&self, severity: usize) -> f64 {
        -SEVERITY_SLOPE * severity as f64
    }

    /// Assignment distribution for a complaint: `floor + (1 - m*floor) * softmax`.
    pub fn assignment_probabilities(&self, complaint: usize) -> Vec<f64> {
        let m = self.config.n_providers as f64;
        let mut p = self.config.assignment_bias[complaint].clone();
        softmax_in_place(&mut p);
        p.iter_mut().for_each(|x| *x = ASSIGNMENT_FLOOR + (1.0 - m * ASSIGNMENT_FLOOR) * *x);
        p
    }

    /// The exact action policy the generator samples from.
    ///
    /// `logit[a] = style[j][a] + skill[j][c] * effect[a][c] * 2σ(-h)`: skilled
    /// providers lean toward helpful actions, more so for sicker patients.
    pub fn true_action_distribution(&self, j: usize, latent_state: f64, complaint: usize) -> Vec<f64> {
        let cfg = &self.config;
        let urgency = 2.0 * logistic(-latent_state);
        let skill = cfg.skill[j][complaint];
        let mut logits: Vec<f64> = (0..cfg.n_actions)
            .map(|a| cfg.provider_style[j][a] + skill * cfg.action_effects[a][complaint] * urgency)
            .collect();
        softmax_in_place(&mut logits);
        logits
    }

    /// Health increment of an action set, excluding noise.
    pub fn transition_mean(&self, actions: &[usize], complaint: usize) -> f64 {
        actions.iter().map(|&a| self.config.action_effects[a][complaint]).sum()
    }

    fn draw_action_set(&self, probs: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
        let support = probs.iter().filter(|&&p| p > 0.0).count();
        let k = rng.random_range(1..=MAX_SET_SIZE).min(support).max(1);
        let mut remaining: Vec<f64> = probs.to_vec();
        let mut chosen = Vec::with_capacity(k);
        for _ in 0..k {
            let mass: f64 = remaining.iter().sum();
            let u = rng.random::<f64>() * mass;
            let mut acc = 0.0;
            let mut pick = None;
            for (a, &p) in remaining.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                acc += p;
                pick = Some(a);
                if u < acc {
                    break;
                }
            }
            let a = pick.expect("positive mass remains");
            remaining[a] = 0.0;
            chosen.push(a);
        }
        chosen.sort_unstable();
        chosen
    }

    /// Runs the state/action loop for one patient under an arbitrary action
    /// policy `policy(h, t)`. The provider id never reaches the transition.
    fn rollout<P>(
        &self,
        baseline: Stratum,
        policy: P,
        actions_rng: &mut ChaCha8Rng,
        states_rng: &mut ChaCha8Rng,
    ) -> (Vec<Step>, f64)
    where
        P: Fn(f64, usize) -> Vec<f64>,
    {
        let mut h = self.initial_health(baseline.severity);
        let mut steps = Vec::with_capacity(self.config.horizon);
        for t in 0..self.config.horizon {
            let probs = policy(h, t);
            let actions = self.draw_action_set(&probs, actions_rng);
            let delta = self.transition(&actions, baseline.complaint, states_rng);
            h += delta;
            steps.push(Step { actions, delta });
        }
        (steps, logistic(h))
    }

    fn transition(&self, actions: &[usize], complaint: usize, states_rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = states_rng.sample(StandardNormal);
        self.transition_mean(actions, complaint) + self.config.noise_sd * z
    }

    pub fn simulate_patient(&self, patient_id: u64) -> Trajectory {
        let seed = self.config.seed;
        let strata = self.strata();
        let mut baseline_rng = stream(seed, domain::BASELINE, patient_id);
        let baseline = strata.stratum(baseline_rng.random_range(0..strata.len()));

        let mut assign_rng = stream(seed, domain::ASSIGNMENT, patient_id);
        let provider = categorical(&self.assignment_probabilities(baseline.complaint), &mut assign_rng);

        let mut actions_rng = stream(seed, domain::ACTIONS, patient_id);
        let mut states_rng = stream(seed, domain::STATES, patient_id);
        let (steps, outcome) = self.rollout(
            baseline,
            |h, _| self.true_action_distribution(provider, h, baseline.complaint),
            &mut actions_rng,
            &mut states_rng,
        );
        Trajectory { patient_id, baseline, provider, steps, outcome }
    }

    /// Patients `0..n_patients`, generated in parallel from per-patient streams.
    pub fn simulate_cohort(&self, n_patients: usize) -> Vec<Trajectory> {
        (0..n_patients as u64).into_par_iter().map(|pid| self.simulate_patient(pid)).collect()
    }

    /// Recomputes a trajectory's outcome from its recorded action sets and
    /// its patient's state-noise stream, attributing it to `provider`.
    ///
    /// The provider argument is accepted and ignored by the transition; the
    /// result is the same for every provider.
    pub fn replay_outcome(&self, trajectory: &Trajectory, provider: usize) -> Result<f64, ScmError> {
        self.check_provider(provider)?;
        let mut states_rng = stream(self.config.seed, domain::STATES, trajectory.patient_id);
        let mut h = self.initial_health(trajectory.baseline.severity);
        for step in &trajectory.steps {
            h += self.transition(&step.actions, trajectory.baseline.complaint, &mut states_rng);
        }
        Ok(logistic(h))
    }

    /// Monte Carlo outcomes when actions follow `policy(h, t)` in `stratum`.
    ///
    /// Draws use the counterfactual streams, disjoint from cohort streams.
    /// Replicate `r` uses the same random numbers for every policy, so
    /// comparisons across policies share noise.
    pub fn policy_outcomes<P>(&self, stratum: Stratum, policy: P, n_mc: usize, stream_offset: u64) -> Vec<f64>
    where
        P: Fn(f64, usize) -> Vec<f64> + Sync,
    {
        let seed = self.config.seed;
        (0..n_mc as u64)
            .into_par_iter()
            .map(|r| {
                let mut actions_rng = stream(seed, domain::COUNTERFACTUAL | domain::ACTIONS, r + stream_offset);
                let mut states_rng = stream(seed, domain::COUNTERFACTUAL | domain::STATES, r + stream_offset);
                self.rollout(stratum, &policy, &mut actions_rng, &mut states_rng).1
            })
            .collect()
    }

    /// Mean outcome with the provider forced to `j`, with its MC standard error.
    ///
    /// Providers share random numbers within a stratum; strata are independent.
    pub fn counterfactual_estimate(&self, j: usize, stratum: Stratum, n_mc: usize) -> Result<McEstimate, ScmError> {
        self.check_provider(j)?;
        self.check_stratum(stratum)?;
        if n_mc == 0 {
            return Err(ScmError::Config("n_mc must be >= 1".into()));
        }
        let ys = self.policy_outcomes(
            stratum,
            |h, _| self.true_action_distribution(j, h, stratum.complaint),
            n_mc,
            (self.strata().index(stratum) as u64) << 32,
        );
        Ok(McEstimate::from_samples(&ys))
    }

    pub fn counterfactual_value(&self, j: usize, stratum: Stratum, n_mc: usize) -> Result<f64, ScmError> {
        Ok(self.counterfactual_estimate(j, stratum, n_mc)?.mean)
    }

    /// `[stratum][provider]` table of counterfactual estimates.
    pub fn counterfactual_table(&self, n_mc: usize) -> Result<Vec<Vec<McEstimate>>, ScmError> {
        self.strata()
            .iter()
            .map(|s| (0..self.config.n_providers).map(|j| self.counterfactual_estimate(j, s, n_mc)).collect())
            .collect()
    }

    /// Per-stratum argmax of the counterfactual value, ties to the lowest id.
    pub fn oracle_optimal_rule(&self, n_mc: usize) -> Result<ProviderRule, ScmError> {
        let table = self.counterfactual_table(n_mc)?;
        Ok(rule_from_table(self.strata(), &table))
    }

    /// Oracle value of a rule under the uniform baseline distribution.
    pub fn rule_value(&self, rule: &ProviderRule, n_mc: usize) -> Result<McEstimate, ScmError> {
        rule.validate(self.config.n_providers)?;
        let strata = self.strata();
        let per: Vec<McEstimate> = strata
            .iter()
            .map(|s| self.counterfactual_estimate(rule.provider_for(s), s, n_mc))
            .collect::<Result<_, _>>()?;
        let k = per.len() as f64;
        let mean = per.iter().map(|e| e.mean).sum::<f64>() / k;
        let se = (per.iter().map(|e| e.se * e.se).sum::<f64>()).sqrt() / k;
        Ok(McEstimate { mean, se, n: n_mc * per.len() })
    }
}

/// Argmax per stratum of a `[stratum][provider]` table; ties to the lowest id.
pub fn rule_from_table(strata: StratumSpace, table: &[Vec<McEstimate>]) -> ProviderRule {
    let assignment = table
        .iter()
        .map(|row| {
            let mut best = 0;
            for (j, e) in row.iter().enumerate() {
                if e.mean > row[best].mean {
                    best = j;
                }
            }
            best
        })
        .collect();
    ProviderRule::new(strata, assignment)
}

fn categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn simulate_cohort(config: &ScmConfig, n_patients: usize) -> Result<Vec<Trajectory>, ScmError> {
    Ok(Simulator::new(config.clone())?.simulate_cohort(n_patients))
}

pub fn counterfactual_value(config: &ScmConfig, j: usize, stratum: Stratum, n_mc: usize) -> Result<f64, ScmError> {
    Simulator::new(config.clone())?.counterfactual_value(j, stratum, n_mc)
}

pub fn oracle_optimal_rule(config: &ScmConfig, n_mc: usize) -> Result<ProviderRule, ScmError> {
    Simulator::new(config.clone())?.oracle_optimal_rule(n_mc)
}

pub fn true_action_distribution(
    config: &ScmConfig,
    j: usize,
    latent_state: f64,
    complaint: usize,
) -> Result<Vec<f64>, ScmError> {
    let sim = Simulator::new(config.clone())?;
    sim.check_provider(j)?;
    if complaint >= config.n_complaints {
        return Err(ScmError::UnknownStratum { complaint, severity: 0 });
    }
    Ok(sim.true_action_distribution(j, latent_state, complaint))
}

pub fn cohort_to_jsonl(cohort: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in cohort {
        out.push_str(&serde_json::to_string(t).expect("trajectory serializes"));
        out.push('\n');
    }
    out
}

pub fn cohort_from_jsonl(text: &str) -> Result<Vec<Trajectory>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Named example worlds used by tests, the CLI defaults and the acceptance suite.
pub mod presets {
    use super::ScmConfig;

    /// Three providers over six complaints and three severities. Each
    /// provider is the most skilled for two complaints, and provider
    /// styles differ, so the optimal rule varies across strata.
    pub fn dominance(seed: u64) -> ScmConfig {
        dominance_sized(seed, 12)
    }

    /// [`dominance`] over `n_actions >= 1` actions.
    pub fn dominance_sized(seed: u64, n_actions: usize) -> ScmConfig {
        let n_providers = 3;
        let n_complaints = 6;
        let mut cfg = ScmConfig::zeros(n_providers, n_actions, n_complaints, 3, 6);
        for j in 0..n_providers {
            for c in 0..n_complaints {
                cfg.skill[j][c] = if c % n_providers == j { 2.5 } else { 0.3 };
            }
        }
        for a in 0..n_actions {
            for c in 0..n_complaints {
                // Two helpful actions per complaint, the rest mildly harmful.
                let helpful = a == (2 * c) % n_actions || a == (2 * c + 5) % n_actions;
                cfg.action_effects[a][c] = if helpful { 0.6 } else { -0.15 };
            }
        }
        for j in 0..n_providers {
            for a in 0..n_actions {
                cfg.provider_style[j][a] = if a % n_providers == j { 0.4 } else { 0.0 };
            }
        }
        for c in 0..n_complaints {
            for j in 0..n_providers {
                cfg.assignment_bias[c][j] = if (c + j) % n_providers == 0 { 0.6 } else { 0.0 };
            }
        }
        cfg.noise_sd = 0.5;
        cfg.seed = seed;
        cfg
    }

    /// Two providers with disjoint signature actions. Provider `j` orders
    /// action `j` once its patient has deteriorated, and never orders the
    /// other provider's signature. The remaining actions are shared and
    /// mildly harmful, so early prefixes say little about the provider.
    /// Requires `n_actions >= 3`.
    pub fn signature(seed: u64, n_actions: usize, horizon: usize) -> ScmConfig {
        let mut cfg = ScmConfig::zeros(2, n_actions, 2, 2, horizon);
        for a in 0..n_actions {
            cfg.action_effects[a] = match a {
                0 | 1 => vec![2.5, 2.5],
                _ => (0..2).map(|c| 0.1 * ((a + c) % 3) as f64 - 0.5).collect(),
            };
        }
        for j in 0..2 {
            cfg.skill[j] = vec![2.0, 2.0];
            for a in 2..n_actions {
                cfg.provider_style[j][a] = 0.2 * ((a * 7 + j * 3) % 5) as f64 - 0.4;
            }
            cfg.provider_style[j][j] = -8.0;
            cfg.provider_style[j][1 - j] = -20.0;
        }
        cfg.noise_sd = 0.3;
        cfg.seed = seed;
        cfg
    }
}
