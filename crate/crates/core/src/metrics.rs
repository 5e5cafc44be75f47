//! Ranking metrics on raw next-token distributions: learned separation,
//! mean/min top-k accuracy, q-accuracy and stratified report tables.
//!
//! Ranks are 0-based over action tokens only; special tokens never take a
//! rank. Ties go to the lower token id.

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::corpus::{OrderSetPair, Token, N_SPECIALS};
use crate::lcbm::PolicyModel;
use crate::scalar::Scalar;
use crate::seeding::{domain, stream};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("token {0} is a special token and has no rank")]
    SpecialToken(Token),
    #[error("token {token} outside a distribution over {size} tokens")]
    OutOfRange { token: Token, size: usize },
    #[error("empty sample: {0}")]
    Empty(String),
    #[error("model: {0}")]
    Model(String),
    #[error("{0}")]
    Invalid(String),
}

/// Anything that yields a next-token distribution for a prefix.
pub trait NextActionModel: Sync {
    fn next_distribution(&self, prefix: &[Token]) -> Result<Vec<f64>, MetricsError>;
}

impl<T: Scalar> NextActionModel for PolicyModel<T> {
    fn next_distribution(&self, prefix: &[Token]) -> Result<Vec<f64>, MetricsError> {
        PolicyModel::next_distribution(self, prefix).map_err(|e| MetricsError::Model(e.to_string()))
    }
}

/// Wraps a closure as a model.
pub struct FnModel<F>(pub F);

impl<F: Fn(&[Token]) -> Vec<f64> + Sync> NextActionModel for FnModel<F> {
    fn next_distribution(&self, prefix: &[Token]) -> Result<Vec<f64>, MetricsError> {
        Ok((self.0)(prefix))
    }
}

/// Number of ranked action tokens in a distribution over the vocabulary.
pub fn n_actions(dist: &[f64]) -> usize {
    dist.len().saturating_sub(N_SPECIALS as usize)
}

/// 0-based rank of action token `a` by descending probability among
/// action tokens.
pub fn rank_of(dist: &[f64], a: Token) -> Result<usize, MetricsError> {
    if a < N_SPECIALS {
        return Err(MetricsError::SpecialToken(a));
    }
    let ai = a as usize;
    if ai >= dist.len() {
        return Err(MetricsError::OutOfRange { token: a, size: dist.len() });
    }
    let pa = dist[ai];
    Ok((N_SPECIALS as usize..dist.len()).filter(|&b| dist[b] > pa || (dist[b] == pa && b < ai)).count())
}

/// `1 - rank / |actions|`.
pub fn q_accuracy(rank: usize, n_actions: usize) -> f64 {
    1.0 - rank as f64 / n_actions as f64
}

/// Ranks of one pair's target actions.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEval {
    pub ranks: Vec<usize>,
    /// Predicted probability of each target action.
    pub probs: Vec<f64>,
    pub n_actions: usize,
    pub context_len: usize,
}

impl PairEval {
    pub fn from_distribution(dist: &[f64], pair: &OrderSetPair) -> Result<Self, MetricsError> {
        if pair.target.is_empty() {
            return Err(MetricsError::Empty(format!("encounter {} has no target", pair.encounter_id)));
        }
        let ranks = pair.target.iter().map(|&a| rank_of(dist, a)).collect::<Result<_, _>>()?;
        Ok(PairEval {
            ranks,
            probs: pair.target.iter().map(|&a| dist[a as usize]).collect(),
            n_actions: n_actions(dist),
            context_len: pair.context_len,
        })
    }

    pub fn mean_rank(&self) -> f64 {
        self.ranks.iter().sum::<usize>() as f64 / self.ranks.len() as f64
    }

    pub fn min_rank(&self) -> usize {
        *self.ranks.iter().min().expect("non-empty target")
    }

    pub fn mean_top_k(&self, k: usize) -> bool {
        self.mean_rank() <= k as f64
    }

    pub fn min_top_k(&self, k: usize) -> bool {
        self.min_rank() <= k
    }

    /// Mean q-accuracy over the target set.
    pub fn q_accuracy(&self) -> f64 {
        self.ranks.iter().map(|&r| q_accuracy(r, self.n_actions)).sum::<f64>() / self.ranks.len() as f64
    }
}

/// Scores every pair against `model`, in parallel, preserving order.
pub fn evaluate_pairs<M: NextActionModel + ?Sized>(model: &M, pairs: &[OrderSetPair]) -> Result<Vec<PairEval>, MetricsError> {
    pairs
        .par_iter()
        .map(|p| PairEval::from_distribution(&model.next_distribution(&p.prefix)?, p))
        .collect()
}

fn fraction(evals: &[PairEval], f: impl Fn(&PairEval) -> bool) -> Result<f64, MetricsError> {
    if evals.is_empty() {
        return Err(MetricsError::Empty("no pairs".into()));
    }
    Ok(evals.iter().filter(|e| f(e)).count() as f64 / evals.len() as f64)
}

fn check_k(k: usize) -> Result<(), MetricsError> {
    if k == 0 {
        return Err(MetricsError::Invalid("k must be at least 1".into()));
    }
    Ok(())
}

/// Fraction of pairs whose mean target rank is at most `k`.
pub fn mean_top_k_of(evals: &[PairEval], k: usize) -> Result<f64, MetricsError> {
    check_k(k)?;
    fraction(evals, |e| e.mean_top_k(k))
}

/// Fraction of pairs whose best-ranked target is at most `k`.
pub fn min_top_k_of(evals: &[PairEval], k: usize) -> Result<f64, MetricsError> {
    check_k(k)?;
    fraction(evals, |e| e.min_top_k(k))
}

pub fn mean_top_k<M: NextActionModel + ?Sized>(model: &M, pairs: &[OrderSetPair], k: usize) -> Result<f64, MetricsError> {
    mean_top_k_of(&evaluate_pairs(model, pairs)?, k)
}

pub fn min_top_k<M: NextActionModel + ?Sized>(model: &M, pairs: &[OrderSetPair], k: usize) -> Result<f64, MetricsError> {
    min_top_k_of(&evaluate_pairs(model, pairs)?, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QSummary {
    pub mean: f64,
    pub median: f64,
}

/// Mean and median of per-pair q-accuracy.
pub fn q_accuracy_summary(evals: &[PairEval]) -> Result<QSummary, MetricsError> {
    if evals.is_empty() {
        return Err(MetricsError::Empty("no pairs".into()));
    }
    let q: Vec<f64> = evals.iter().map(PairEval::q_accuracy).collect();
    Ok(QSummary { mean: q.iter().sum::<f64>() / q.len() as f64, median: quantile(&q, 0.5) })
}

/// Linear-interpolation sample quantile (`p` in `[0, 1]`).
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparationStat {
    pub action: Token,
    pub delta: f64,
    pub mean_p1: f64,
    pub mean_p0: f64,
    pub n1: usize,
    pub n0: usize,
    pub p_value: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { f64::NAN };
    (mean, var)
}

/// Two-sided unequal-variance mean test. Undefined cases (a side with one
/// observation) give 1.
pub fn welch_p_value(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if !(va.is_finite() && vb.is_finite()) {
        return 1.0;
    }
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

fn downsample(xs: &[f64], size: usize, seed: u64, action: Token) -> Vec<f64> {
    if xs.len() <= size {
        return xs.to_vec();
    }
    let mut rng = stream(seed, domain::DOWNSAMPLE, action as u64);
    let mut picked = index::sample(&mut rng, xs.len(), size).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| xs[i]).collect()
}

/// Learned separation of `action` from predicted probabilities when it is
/// (`pos`) and is not (`neg`) in the target set. The larger side is
/// down-sampled to the size of the smaller by a draw keyed on
/// `(seed, action)`.
pub fn separation_from_samples(action: Token, pos: &[f64], neg: &[f64], seed: u64) -> Result<SeparationStat, MetricsError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricsError::Empty(format!("action {action}: one side of the separation has no pairs")));
    }
    let size = pos.len().min(neg.len());
    let p1 = downsample(pos, size, seed, action);
    let p0 = downsample(neg, size, seed, action);
    let (mean_p1, _) = mean_var(&p1);
    let (mean_p0, _) = mean_var(&p0);
    Ok(SeparationStat {
        action,
        delta: mean_p1 - mean_p0,
        mean_p1,
        mean_p0,
        n1: p1.len(),
        n0: p0.len(),
        p_value: welch_p_value(&p1, &p0),
    })
}

pub fn learned_separation<M: NextActionModel + ?Sized>(
    model: &M,
    pairs_pos: &[OrderSetPair],
    pairs_neg: &[OrderSetPair],
    action: Token,
    seed: u64,
) -> Result<SeparationStat, MetricsError> {
    let probs = |pairs: &[OrderSetPair]| -> Result<Vec<f64>, MetricsError> {
        pairs
            .par_iter()
            .map(|p| {
                let d = model.next_distribution(&p.prefix)?;
                d.get(action as usize).copied().ok_or(MetricsError::OutOfRange { token: action, size: d.len() })
            })
            .collect()
    };
    separation_from_samples(action, &probs(pairs_pos)?, &probs(pairs_neg)?, seed)
}

/// Separation of every action token that appears in some targets and is
/// absent from others.
pub fn separation_table<M: NextActionModel + ?Sized>(model: &M, pairs: &[OrderSetPair], seed: u64) -> Result<Vec<SeparationStat>, MetricsError> {
    let dists: Vec<Vec<f64>> = pairs.par_iter().map(|p| model.next_distribution(&p.prefix)).collect::<Result<_, _>>()?;
    let vocab = dists.first().map_or(0, Vec::len);
    (N_SPECIALS..vocab as Token)
        .into_par_iter()
        .filter_map(|a| {
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            for (p, d) in pairs.iter().zip(&dists) {
                if p.target.contains(&a) { pos.push(d[a as usize]) } else { neg.push(d[a as usize]) }
            }
            (!pos.is_empty() && !neg.is_empty()).then(|| separation_from_samples(a, &pos, &neg, seed))
        })
        .collect()
}

/// `action,delta,p_value,n1,n0,mean_p1,mean_p0`.
pub fn separation_csv(stats: &[SeparationStat]) -> String {
    let mut out = String::from("action,delta,p_value,n1,n0,mean_p1,mean_p0\n");
    for s in stats {
        out.push_str(&format!("{},{},{},{},{},{},{}\n", s.action, s.delta, s.p_value, s.n1, s.n0, s.mean_p1, s.mean_p0));
    }
    out
}

/// Δ by token id, 0 for tokens without a separation estimate.
pub fn delta_by_token(stats: &[SeparationStat], vocab_size: usize) -> Vec<f64> {
    let mut out = vec![0.0; vocab_size];
    for s in stats {
        if (s.action as usize) < vocab_size {
            out[s.action as usize] = s.delta;
        }
    }
    out
}

/// How pairs are grouped in a report.
#[derive(Debug, Clone, PartialEq)]
pub enum Stratification {
    All,
    /// Context-length bins split at the given ascending edges.
    ContextBins(Vec<usize>),
    /// Equal-probability groups of mean training frequency over the target.
    FrequencyGroups { groups: usize, frequencies: Vec<usize> },
    /// Equal-probability groups of mean Δ over the target.
    DeltaGroups { groups: usize, deltas: Vec<f64> },
    /// Cumulative rows Q1..Q9: pairs whose mean Δ over the target exceeds
    /// the q-th decile of that statistic.
    DeltaDeciles { deltas: Vec<f64> },
}

impl Stratification {
    pub fn name(&self) -> &'static str {
        match self {
            Stratification::All => "all",
            Stratification::ContextBins(_) => "context",
            Stratification::FrequencyGroups { .. } => "frequency",
            Stratification::DeltaGroups { .. } => "delta_group",
            Stratification::DeltaDeciles { .. } => "delta_decile",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub stratum: String,
    pub k: usize,
    pub n: usize,
    pub mean_top_k: Option<f64>,
    pub min_top_k: Option<f64>,
    pub q_acc_mean: Option<f64>,
    pub q_acc_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub stratification: String,
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("stratum,k,n,mean_top_k,min_top_k,q_acc_mean,q_acc_median\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.stratum,
                r.k,
                r.n,
                f(r.mean_top_k),
                f(r.min_top_k),
                f(r.q_acc_mean),
                f(r.q_acc_median)
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Rows for one `k`, in stratum order.
    pub fn rows_for_k(&self, k: usize) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.k == k).collect()
    }
}

/// Several reports in one table with a leading `stratification` column.
pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("stratification,");
    let mut header_done = false;
    for r in reports {
        let csv = r.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if !header_done {
            out.push_str(header);
            out.push('\n');
            header_done = true;
        }
        for line in lines {
            out.push_str(&r.stratification);
            out.push(',');
            out.push_str(line);
            out.push('\n');
        }
    }
    if !header_done {
        out.push_str("stratum,k,n,mean_top_k,min_top_k,q_acc_mean,q_acc_median\n");
    }
    out
}

/// q-accuracy by stratum, one row per stratum (`k` is irrelevant).
pub fn qacc_csv(reports: &[MetricsReport]) -> String {
    let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from("stratification,stratum,n,q_acc_mean,q_acc_median\n");
    for r in reports {
        let mut seen = std::collections::BTreeSet::new();
        for row in &r.rows {
            if seen.insert(row.stratum.clone()) {
                out.push_str(&format!("{},{},{},{},{}\n", r.stratification, row.stratum, row.n, f(row.q_acc_mean), f(row.q_acc_median)));
            }
        }
    }
    out
}

fn mean_over_target(pair: &OrderSetPair, per_token: impl Fn(usize) -> f64) -> f64 {
    pair.target.iter().map(|&t| per_token(t as usize)).sum::<f64>() / pair.target.len() as f64
}

fn group_index(x: f64, cuts: &[f64]) -> usize {
    cuts.iter().position(|&c| x <= c).unwrap_or(cuts.len())
}

fn group_cuts(values: &[f64], groups: usize) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    (1..groups).map(|g| quantile(values, g as f64 / groups as f64)).collect()
}

/// Membership lists `(label, pair indices)` for each stratum.
fn strata_members(pairs: &[OrderSetPair], strat: &Stratification) -> Result<Vec<(String, Vec<usize>)>, MetricsError> {
    let all: Vec<usize> = (0..pairs.len()).collect();
    Ok(match strat {
        Stratification::All => vec![("all".to_string(), all)],
        Stratification::ContextBins(edges) => {
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(MetricsError::Invalid(format!("context bin edges {edges:?} must be strictly ascending")));
            }
            let mut labels = Vec::with_capacity(edges.len() + 1);
            for i in 0..=edges.len() {
                labels.push(match (i.checked_sub(1).map(|j| edges[j]), edges.get(i)) {
                    (None, Some(hi)) => format!("t<{hi}"),
                    (Some(lo), Some(hi)) => format!("{lo}<=t<{hi}"),
                    (Some(lo), None) => format!("t>={lo}"),
                    (None, None) => "all".to_string(),
                });
            }
            let mut members = vec![Vec::new(); labels.len()];
            for (i, p) in pairs.iter().enumerate() {
                members[edges.iter().position(|&e| p.context_len < e).unwrap_or(edges.len())].push(i);
            }
            labels.into_iter().zip(members).collect()
        }
        Stratification::FrequencyGroups { groups, frequencies } => {
            let feature: Vec<f64> =
                pairs.iter().map(|p| mean_over_target(p, |t| frequencies.get(t).copied().unwrap_or(0) as f64)).collect();
            disjoint_groups(&feature, *groups)?
        }
        Stratification::DeltaGroups { groups, deltas } => {
            let feature: Vec<f64> = pairs.iter().map(|p| mean_over_target(p, |t| deltas.get(t).copied().unwrap_or(0.0))).collect();
            disjoint_groups(&feature, *groups)?
        }
        Stratification::DeltaDeciles { deltas } => {
            let feature: Vec<f64> = pairs.iter().map(|p| mean_over_target(p, |t| deltas.get(t).copied().unwrap_or(0.0))).collect();
            let cuts = group_cuts(&feature, 10);
            (1..=9)
                .map(|q| {
                    let members = match cuts.get(q - 1) {
                        Some(&c) => (0..pairs.len()).filter(|&i| feature[i] > c).collect(),
                        None => Vec::new(),
                    };
                    (format!("Q{q}"), members)
                })
                .collect()
        }
    })
}

fn disjoint_groups(feature: &[f64], groups: usize) -> Result<Vec<(String, Vec<usize>)>, MetricsError> {
    if groups == 0 {
        return Err(MetricsError::Invalid("at least one group required".into()));
    }
    let cuts = group_cuts(feature, groups);
    let mut members = vec![Vec::new(); groups];
    for (i, &x) in feature.iter().enumerate() {
        members[group_index(x, &cuts)].push(i);
    }
    Ok(members.into_iter().enumerate().map(|(g, m)| (format!("Q{}", g + 1), m)).collect())
}

/// One row per (stratum, k). `evals[i]` must score `pairs[i]`.
pub fn stratified_report(
    evals: &[PairEval],
    pairs: &[OrderSetPair],
    strat: &Stratification,
    ks: &[usize],
) -> Result<MetricsReport, MetricsError> {
    if evals.len() != pairs.len() {
        return Err(MetricsError::Invalid(format!("{} evaluations for {} pairs", evals.len(), pairs.len())));
    }
    for &k in ks {
        check_k(k)?;
    }
    let mut rows = Vec::new();
    for (label, members) in strata_members(pairs, strat)? {
        let subset: Vec<PairEval> = members.iter().map(|&i| evals[i].clone()).collect();
        let q = q_accuracy_summary(&subset).ok();
        for &k in ks {
            rows.push(ReportRow {
                stratum: label.clone(),
                k,
                n: subset.len(),
                mean_top_k: mean_top_k_of(&subset, k).ok(),
                min_top_k: min_top_k_of(&subset, k).ok(),
                q_acc_mean: q.map(|s| s.mean),
                q_acc_median: q.map(|s| s.median),
            });
        }
    }
    Ok(MetricsReport { stratification: strat.name().to_string(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BOS;

    /// Distribution with zero mass on specials and `action_probs` on tokens 3...
    fn dist(action_probs: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; N_SPECIALS as usize];
        d.extend_from_slice(action_probs);
        d
    }

    fn pair(target: &[Token], t: usize) -> OrderSetPair {
        OrderSetPair { encounter_id: 0, provider: 0, prefix: vec![BOS], target: target.to_vec(), context_len: t }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of(&dist(&[0.5, 0.3, 0.2]), 3).unwrap(), 0);
        assert_eq!(rank_of(&dist(&[0.2, 0.5, 0.3]), 5).unwrap(), 1);
        let uniform = dist(&[0.25; 4]);
        assert_eq!(rank_of(&uniform, 6).unwrap(), 3);
        assert!(matches!(rank_of(&uniform, 2), Err(MetricsError::SpecialToken(2))));
    }

    #[test]
    fn specials_do_not_take_ranks() {
        let mut d = dist(&[0.1, 0.2]);
        d[0] = 0.7;
        assert_eq!(rank_of(&d, 4).unwrap(), 0);
    }

    #[test]
    fn top_k_examples() {
        let d = dist(&[0.5, 0.2, 0.15, 0.1, 0.05]);
        let e = PairEval::from_distribution(&d, &pair(&[6], 0)).unwrap();
        assert_eq!(e.ranks, vec![3]);
        assert_eq!(mean_top_k_of(std::slice::from_ref(&e), 5).unwrap(), 1.0);
        assert_eq!(mean_top_k_of(std::slice::from_ref(&e), 1).unwrap(), 0.0);
        assert_eq!(mean_top_k_of(std::slice::from_ref(&e), 5).unwrap(), min_top_k_of(std::slice::from_ref(&e), 5).unwrap());

        let spread = PairEval { ranks: vec![0, 500], probs: vec![0.0; 2], n_actions: 600, context_len: 0 };
        assert!(spread.min_top_k(10));
        assert!(!spread.mean_top_k(10));
    }

    #[test]
    fn q_accuracy_examples() {
        assert_eq!(q_accuracy(0, 10), 1.0);
        assert!((q_accuracy(9, 10) - 0.1).abs() < 1e-15);
        assert!((q_accuracy(95, 882) - 0.8923).abs() < 5e-5);
    }

    #[test]
    fn separation_hand_fixture_and_antisymmetry() {
        let s = separation_from_samples(5, &[0.4, 0.6], &[0.1, 0.1], 0).unwrap();
        assert!((s.delta - 0.4).abs() < 1e-15);
        assert!(s.p_value > 0.0 && s.p_value < 1.0);
        let r = separation_from_samples(5, &[0.1, 0.1], &[0.4, 0.6], 0).unwrap();
        assert_eq!(r.delta, -s.delta);
        assert!(separation_from_samples(5, &[], &[0.1], 0).is_err());
    }

    #[test]
    fn separation_downsamples_reproducibly() {
        let neg: Vec<f64> = (0..50).map(|i| i as f64 / 100.0).collect();
        let a = separation_from_samples(7, &[0.9, 0.8, 0.7], &neg, 11).unwrap();
        let b = separation_from_samples(7, &[0.9, 0.8, 0.7], &neg, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.n1, a.n0), (3, 3));
        let swapped = separation_from_samples(7, &neg, &[0.9, 0.8, 0.7], 11).unwrap();
        assert_eq!(swapped.delta, -a.delta);
    }

    #[test]
    fn constant_model_has_zero_separation() {
        let m = FnModel(|_: &[Token]| dist(&[0.4, 0.3, 0.2, 0.1]));
        let pairs = vec![pair(&[3], 1), pair(&[4, 5], 2), pair(&[3, 6], 3), pair(&[5], 4)];
        for s in separation_table(&m, &pairs, 1).unwrap() {
            assert_eq!(s.delta, 0.0);
        }
    }

    #[test]
    fn single_stratum_equals_pooled_and_bins_average() {
        let m = FnModel(|_: &[Token]| dist(&[0.4, 0.3, 0.2, 0.1]));
        let pairs: Vec<OrderSetPair> = (0..12).map(|i| pair(&[3 + (i % 4) as Token], i as usize)).collect();
        let evals = evaluate_pairs(&m, &pairs).unwrap();
        let all = stratified_report(&evals, &pairs, &Stratification::All, &[1, 2]).unwrap();
        assert_eq!(all.rows[0].mean_top_k, Some(mean_top_k_of(&evals, 1).unwrap()));
        let bins = stratified_report(&evals, &pairs, &Stratification::ContextBins(vec![5]), &[1]).unwrap();
        let (a, b) = (&bins.rows[0], &bins.rows[1]);
        let pooled = (a.mean_top_k.unwrap() * a.n as f64 + b.mean_top_k.unwrap() * b.n as f64) / 12.0;
        assert!((pooled - all.rows[0].mean_top_k.unwrap()).abs() < 1e-15);
        assert_eq!(a.stratum, "t<5");
        assert_eq!(b.stratum, "t>=5");
    }

    #[test]
    fn empty_stratum_has_null_metrics() {
        let pairs = vec![pair(&[3], 1)];
        let evals = vec![PairEval::from_distribution(&dist(&[0.5, 0.5]), &pairs[0]).unwrap()];
        let r = stratified_report(&evals, &pairs, &Stratification::ContextBins(vec![5, 10]), &[1]).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.rows[1].n, 0);
        assert_eq!(r.rows[1].mean_top_k, None);
        assert!(r.to_csv().lines().nth(2).unwrap().ends_with(",,,,"));
    }

    #[test]
    fn delta_deciles_are_nested() {
        let pairs: Vec<OrderSetPair> = (0..40).map(|i| pair(&[3 + (i % 6) as Token], i)).collect();
        let evals: Vec<PairEval> = pairs.iter().map(|p| PairEval::from_distribution(&dist(&[0.2; 6]), p).unwrap()).collect();
        let deltas = vec![0.0, 0.0, 0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06];
        let r = stratified_report(&evals, &pairs, &Stratification::DeltaDeciles { deltas }, &[1]).unwrap();
        assert_eq!(r.rows.len(), 9);
        assert!(r.rows.windows(2).all(|w| w[0].n >= w[1].n));
    }
}
