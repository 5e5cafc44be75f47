//! Tokenized training data: vocabulary, order-set pairs, encounter splits.
//!
//! An encounter with action sets `S_0, S_1, ..` becomes the token stream
//! `BOS S_0 SEP S_1 SEP ..` with each set in ascending token order. Pair `t`
//! has the stream through `S_t` as its prefix and `S_{t+1}` as its target.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scm::Trajectory;
use crate::seeding::{derive_seed, domain, mix64};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const SEP: u32 = 2;
pub const N_SPECIALS: u32 = 3;

pub type Token = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("cannot build a vocabulary from an empty cohort")]
    EmptyCohort,
    #[error("malformed vocabulary: {0}")]
    BadVocabulary(String),
    #[error("token {0} is not an action token")]
    NotAnAction(Token),
}

/// Action-id to token-id map. Specials occupy tokens `0..3`; actions follow
/// in descending training frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    /// `actions[i]` is the action id behind token `N_SPECIALS + i`.
    actions: Vec<usize>,
    index: HashMap<usize, Token>,
}

#[derive(Serialize, Deserialize)]
struct Specials {
    pad: Token,
    bos: Token,
    sep: Token,
}

#[derive(Serialize, Deserialize)]
struct VocabWire {
    actions: BTreeMap<usize, Token>,
    specials: Specials,
}

impl Vocabulary {
    pub fn from_actions(actions: Vec<usize>) -> Self {
        let index = actions.iter().enumerate().map(|(i, &a)| (a, i as Token + N_SPECIALS)).collect();
        Vocabulary { actions, index }
    }

    /// Number of tokens including specials.
    pub fn size(&self) -> usize {
        self.actions.len() + N_SPECIALS as usize
    }

    /// Number of action tokens, `|A|`.
    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    /// Action ids in token order.
    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn token_of(&self, action: usize) -> Option<Token> {
        self.index.get(&action).copied()
    }

    pub fn action_of(&self, token: Token) -> Option<usize> {
        token.checked_sub(N_SPECIALS).and_then(|i| self.actions.get(i as usize).copied())
    }

    pub fn is_special(token: Token) -> bool {
        token < N_SPECIALS
    }

    pub fn action_tokens(&self) -> std::ops::Range<Token> {
        N_SPECIALS..self.size() as Token
    }

    pub fn to_json(&self) -> String {
        let wire = VocabWire {
            actions: self.index.iter().map(|(&a, &t)| (a, t)).collect(),
            specials: Specials { pad: PAD, bos: BOS, sep: SEP },
        };
        serde_json::to_string_pretty(&wire).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let wire: VocabWire = serde_json::from_str(text).map_err(|e| CorpusError::BadVocabulary(e.to_string()))?;
        if (wire.specials.pad, wire.specials.bos, wire.specials.sep) != (PAD, BOS, SEP) {
            return Err(CorpusError::BadVocabulary("unexpected special token ids".into()));
        }
        let n = wire.actions.len();
        let mut actions = vec![usize::MAX; n];
        for (a, t) in wire.actions {
            let slot = t.checked_sub(N_SPECIALS).map(|i| i as usize).filter(|&i| i < n);
            match slot {
                Some(i) if actions[i] == usize::MAX => actions[i] = a,
                _ => return Err(CorpusError::BadVocabulary(format!("token {t} out of range or repeated"))),
            }
        }
        Ok(Self::from_actions(actions))
    }
}

/// Ranks actions by descending frequency (ties by ascending id) and keeps
/// the first `max_actions`.
pub fn build_vocabulary(cohort: &[Trajectory], max_actions: usize) -> Result<Vocabulary, CorpusError> {
    if cohort.is_empty() {
        return Err(CorpusError::EmptyCohort);
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for t in cohort {
        for s in &t.steps {
            for &a in &s.actions {
                *counts.entry(a).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(Vocabulary::from_actions(ranked.into_iter().take(max_actions).map(|(a, _)| a).collect()))
}

/// A prefix and the action set that follows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderSetPair {
    #[serde(rename = "eid")]
    pub encounter_id: u64,
    pub provider: usize,
    pub prefix: Vec<Token>,
    /// Ascending action tokens.
    pub target: Vec<Token>,
    /// Action tokens in the full (untruncated) history before the target.
    #[serde(rename = "t")]
    pub context_len: usize,
}

/// Vocabulary-filtered action sets of a trajectory; steps left empty by
/// the filter are dropped.
pub fn encode_sets(trajectory: &Trajectory, vocab: &Vocabulary) -> Vec<Vec<Token>> {
    trajectory
        .steps
        .iter()
        .map(|s| {
            let mut set: Vec<Token> = s.actions.iter().filter_map(|&a| vocab.token_of(a)).collect();
            set.sort_unstable();
            set.dedup();
            set
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Full token stream `BOS S_0 SEP S_1 SEP ..`.
pub fn encode_trajectory(trajectory: &Trajectory, vocab: &Vocabulary) -> Vec<Token> {
    let mut out = vec![BOS];
    for set in encode_sets(trajectory, vocab) {
        out.extend(set);
        out.push(SEP);
    }
    out
}

/// Inverse of [`encode_trajectory`]: action-id sets in time order.
pub fn decode_tokens(tokens: &[Token], vocab: &Vocabulary) -> Result<Vec<BTreeSet<usize>>, CorpusError> {
    let mut sets = Vec::new();
    let mut current = BTreeSet::new();
    for &t in tokens {
        match t {
            BOS | PAD => {}
            SEP => sets.push(std::mem::take(&mut current)),
            _ => {
                current.insert(vocab.action_of(t).ok_or(CorpusError::NotAnAction(t))?);
            }
        }
    }
    if !current.is_empty() {
        sets.push(current);
    }
    Ok(sets)
}

/// One pair per consecutive step transition; prefixes longer than
/// `max_context` keep their most recent tokens.
pub fn make_pairs(cohort: &[Trajectory], vocab: &Vocabulary, max_context: usize) -> Vec<OrderSetPair> {
    let mut pairs = Vec::new();
    for traj in cohort {
        let sets = encode_sets(traj, vocab);
        let mut stream = vec![BOS];
        let mut n_action_tokens = 0;
        for w in sets.windows(2) {
            stream.extend_from_slice(&w[0]);
            stream.push(SEP);
            n_action_tokens += w[0].len();
            let start = stream.len().saturating_sub(max_context);
            pairs.push(OrderSetPair {
                encounter_id: traj.patient_id,
                provider: traj.provider,
                prefix: stream[start..].to_vec(),
                target: w[1].clone(),
                context_len: n_action_tokens,
            });
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

fn encounter_order(pairs: &[OrderSetPair], seed: u64) -> Vec<u64> {
    let key = derive_seed(seed, domain::SPLIT);
    let ids: BTreeSet<u64> = pairs.iter().map(|p| p.encounter_id).collect();
    let mut ids: Vec<u64> = ids.into_iter().collect();
    ids.sort_by_key(|&e| (mix64(e ^ key), e));
    ids
}

/// Number of test encounters: `round(fraction * n)`, clamped to
/// `[1, n - 1]` whenever there are at least two encounters so both sides
/// are non-empty. A single encounter always goes to training.
pub fn test_count(n_encounters: usize, fraction: f64) -> usize {
    if n_encounters < 2 {
        return 0;
    }
    let raw = (fraction.clamp(0.0, 1.0) * n_encounters as f64).round() as usize;
    raw.clamp(1, n_encounters - 1)
}

/// Encounter-level split. Encounters are ordered by a keyed hash of their
/// id; the first [`test_count`] go to test.
pub fn split_encounters(pairs: &[OrderSetPair], spec: SplitSpec) -> (Vec<OrderSetPair>, Vec<OrderSetPair>) {
    let order = encounter_order(pairs, spec.seed);
    let n_test = test_count(order.len(), spec.test_fraction);
    let test: BTreeSet<u64> = order[..n_test].iter().copied().collect();
    pairs.iter().cloned().partition(|p| !test.contains(&p.encounter_id))
}

/// Pretraining, fine-tuning and test partitions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThreeWaySplit {
    pub pretrain: Vec<OrderSetPair>,
    pub finetune: Vec<OrderSetPair>,
    pub test: Vec<OrderSetPair>,
}

/// Like [`split_encounters`] with a second held-out slice for fine-tuning.
pub fn three_way_split(pairs: &[OrderSetPair], finetune_fraction: f64, test_fraction: f64, seed: u64) -> ThreeWaySplit {
    let order = encounter_order(pairs, seed);
    let n = order.len();
    let n_test = (test_fraction.clamp(0.0, 1.0) * n as f64).round() as usize;
    let n_ft = ((finetune_fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n - n_test.min(n));
    let n_test = n_test.min(n);
    let side: HashMap<u64, u8> = order
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, if i < n_test { 2 } else if i < n_test + n_ft { 1 } else { 0 }))
        .collect();
    let mut out = ThreeWaySplit::default();
    for p in pairs {
        match side[&p.encounter_id] {
            2 => out.test.push(p.clone()),
            1 => out.finetune.push(p.clone()),
            _ => out.pretrain.push(p.clone()),
        }
    }
    out
}

/// The pairs of provider `j`, in order.
pub fn provider_subset(pairs: &[OrderSetPair], j: usize) -> Vec<OrderSetPair> {
    pairs.iter().filter(|p| p.provider == j).cloned().collect()
}

pub fn pairs_to_jsonl(pairs: &[OrderSetPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pair serializes"));
        out.push('\n');
    }
    out
}

pub fn pairs_from_jsonl(text: &str) -> Result<Vec<OrderSetPair>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Occurrence counts of each action token among pair targets.
pub fn target_frequencies(pairs: &[OrderSetPair], vocab: &Vocabulary) -> Vec<usize> {
    let mut counts = vec![0; vocab.size()];
    for p in pairs {
        for &t in &p.target {
            counts[t as usize] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{Step, Stratum};

    fn traj(pid: u64, provider: usize, sets: &[&[usize]]) -> Trajectory {
        Trajectory {
            patient_id: pid,
            baseline: Stratum::new(0, 0),
            provider,
            steps: sets.iter().map(|s| Step { actions: s.to_vec(), delta: 0.0 }).collect(),
            outcome: 0.5,
        }
    }

    /// Action 0 occurs 5 times and action 1 nine times across three
    /// trajectories.
    fn fixture() -> Vec<Trajectory> {
        vec![
            traj(0, 0, &[&[0, 1], &[1], &[1]]),
            traj(1, 1, &[&[0, 1], &[0, 1], &[1]]),
            traj(2, 0, &[&[1], &[0, 1], &[0, 1]]),
        ]
    }

    #[test]
    fn vocabulary_ranks_by_frequency() {
        let v = build_vocabulary(&fixture(), 2).unwrap();
        assert_eq!(v.actions(), &[1, 0]);
        assert_eq!(v.token_of(1), Some(3));
        assert_eq!(v.token_of(0), Some(4));
        let v = build_vocabulary(&fixture(), 1).unwrap();
        assert_eq!(v.actions(), &[1]);
    }

    #[test]
    fn vocabulary_edge_cases() {
        assert_eq!(build_vocabulary(&[], 5), Err(CorpusError::EmptyCohort));
        let v = build_vocabulary(&fixture(), 100).unwrap();
        assert_eq!(v.n_actions(), 2);
        let single = vec![traj(0, 0, &[&[7], &[7]])];
        let v = build_vocabulary(&single, 10).unwrap();
        assert_eq!(v.size(), 4);
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let v = build_vocabulary(&fixture(), 10).unwrap();
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert!(Vocabulary::from_json(r#"{"actions":{"0":9},"specials":{"pad":0,"bos":1,"sep":2}}"#).is_err());
    }

    #[test]
    fn pair_construction() {
        let t = traj(4, 1, &[&[5, 2], &[9]]);
        let v = Vocabulary::from_actions(vec![2, 5, 9]);
        let pairs = make_pairs(&[t], &v, 64);
        assert_eq!(pairs.len(), 1);
        let (a, b, c) = (v.token_of(2).unwrap(), v.token_of(5).unwrap(), v.token_of(9).unwrap());
        assert_eq!(pairs[0].prefix, vec![BOS, a, b, SEP]);
        assert_eq!(pairs[0].target, vec![c]);
        assert_eq!(pairs[0].context_len, 2);
        assert_eq!(pairs[0].provider, 1);
    }

    #[test]
    fn pair_counts() {
        let v = build_vocabulary(&fixture(), 10).unwrap();
        assert_eq!(make_pairs(&fixture()[..1], &v, 64).len(), 2);
        let single = vec![traj(0, 0, &[&[1], &[0], &[1], &[0], &[1]])];
        let pairs = make_pairs(&single, &v, 64);
        assert_eq!(pairs.len(), 4);
        assert!(pairs.iter().all(|p| p.target.len() == 1));
    }

    #[test]
    fn long_prefixes_keep_recent_tokens() {
        let t = traj(0, 0, &[&[0], &[1], &[2], &[3]]);
        let v = Vocabulary::from_actions(vec![0, 1, 2, 3]);
        let pairs = make_pairs(&[t], &v, 4);
        let last = pairs.last().unwrap();
        assert_eq!(last.prefix, vec![4, SEP, 5, SEP]);
        assert_eq!(last.context_len, 3);
        assert!(pairs.iter().all(|p| p.prefix.len() <= 4));
    }

    #[test]
    fn dropped_actions_vanish_from_pairs() {
        let t = traj(0, 0, &[&[0, 1], &[1], &[0]]);
        let v = Vocabulary::from_actions(vec![0]);
        let pairs = make_pairs(&[t], &v, 64);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].prefix, vec![BOS, 3, SEP]);
        assert_eq!(pairs[0].target, vec![3]);
    }

    #[test]
    fn split_rules() {
        let v = build_vocabulary(&fixture(), 10).unwrap();
        let pairs = make_pairs(&fixture()[..2], &v, 64);
        let (train, test) = split_encounters(&pairs, SplitSpec { test_fraction: 0.5, seed: 3 });
        let ids = |ps: &[OrderSetPair]| ps.iter().map(|p| p.encounter_id).collect::<BTreeSet<_>>();
        assert_eq!(ids(&train).len(), 1);
        assert_eq!(ids(&test).len(), 1);
        assert!(ids(&train).is_disjoint(&ids(&test)));

        let (train0, test0) = split_encounters(&pairs, SplitSpec { test_fraction: 0.0, seed: 3 });
        assert_eq!(ids(&test0).len(), 1, "zero fraction is clamped to one test encounter");
        assert_eq!(ids(&train0).len(), 1);

        let again = split_encounters(&pairs, SplitSpec { test_fraction: 0.5, seed: 3 });
        assert_eq!(again, (train, test));
    }

    #[test]
    fn provider_subsets() {
        let v = build_vocabulary(&fixture(), 10).unwrap();
        let pairs = make_pairs(&fixture(), &v, 64);
        assert!(provider_subset(&pairs, 7).is_empty());
        // Provider 0 owns trajectories 0 and 2 (2 transitions each).
        assert_eq!(provider_subset(&pairs, 0).len(), 4);
        assert_eq!(provider_subset(&pairs, 1).len(), 2);
    }

    #[test]
    fn round_trip_encoding() {
        let t = traj(0, 0, &[&[3, 1], &[2], &[1, 2, 3]]);
        let v = Vocabulary::from_actions(vec![2, 3, 1]);
        let sets = decode_tokens(&encode_trajectory(&t, &v), &v).unwrap();
        let expected: Vec<BTreeSet<usize>> = t.steps.iter().map(|s| s.actions.iter().copied().collect()).collect();
        assert_eq!(sets, expected);
    }
}
