//! Statistical policy analysis: binarization, class association-rule mining,
//! empirical calibration of rule probabilities, pruning and rescaling.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FounderRecord;
use crate::policy::{CalibrationStatus, Direction, Literal, Policy, Rule};

/// Pruning floors: success rules below 0.1 and failure rules below 0.9 are dropped.
pub const SUCCESS_PRUNE_FLOOR: f64 = 0.1;
pub const FAILURE_PRUNE_FLOOR: f64 = 0.9;
/// Target band of [`rescale_probabilities`].
pub const RESCALE_BAND: (f64, f64) = (0.1, 0.9);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no transactions to mine")]
    EmptyTransactions,
    #[error("invalid mining parameter: {0}")]
    Parameter(String),
    #[error("calibration report has no entry for {direction} rule {body}")]
    MissingReportEntry { direction: Direction, body: String },
    #[error("no records to calibrate against")]
    EmptyRecords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub min_support: f64,
    pub min_confidence_success: f64,
    pub min_confidence_failure: f64,
    pub max_len: usize,
    pub top_success_hints: usize,
    pub top_failure_hints: usize,
    /// A hint is kept over a more general rule only if its confidence beats
    /// the general rule's by this many standard errors.
    pub hint_improvement_z: f64,
    pub sample_size: usize,
    pub min_samples: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            min_support: 0.02,
            min_confidence_success: 0.3,
            min_confidence_failure: 0.9,
            max_len: 3,
            top_success_hints: 3,
            top_failure_hints: 1,
            hint_improvement_z: 2.33,
            sample_size: 1000,
            min_samples: 20,
        }
    }
}

/// The binarized view of one record: which literals hold, plus its label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub items: BTreeSet<Literal>,
    pub label: Direction,
}

impl Transaction {
    pub fn matches(&self, body: &[Literal]) -> bool {
        body.iter().all(|l| self.items.contains(l))
    }
}

/// Per-feature medians of normalized training data. A feature "is present"
/// when its value is strictly above the median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binarizer {
    pub medians: IndexMap<String, f64>,
}

impl Binarizer {
    pub fn fit(training: &[FounderRecord]) -> Result<Self, StatsError> {
        let first = training.first().ok_or(StatsError::EmptyRecords)?;
        let medians = first
            .features
            .keys()
            .map(|name| {
                let mut values: Vec<f64> = training.iter().map(|r| r.features[name]).collect();
                values.sort_by(f64::total_cmp);
                let mid = values.len() / 2;
                let median = if values.len() % 2 == 1 {
                    values[mid]
                } else {
                    (values[mid - 1] + values[mid]) / 2.0
                };
                (name.clone(), median)
            })
            .collect();
        Ok(Binarizer { medians })
    }

    pub fn has_trait(&self, record: &FounderRecord, atom: &str) -> bool {
        match (record.features.get(atom), self.medians.get(atom)) {
            (Some(v), Some(m)) => v > m,
            _ => false,
        }
    }

    pub fn transaction(&self, record: &FounderRecord) -> Transaction {
        let items = self
            .medians
            .iter()
            .map(|(name, m)| Literal {
                atom: name.clone(),
                negated: record.features.get(name).is_none_or(|v| v <= m),
            })
            .collect();
        Transaction {
            items,
            label: record.label,
        }
    }
}

/// One transaction per record: item `f` when the value exceeds the training
/// median of `f`, item `not_f` otherwise.
pub fn binarize(records: &[FounderRecord], binarizer: &Binarizer) -> Vec<Transaction> {
    records.iter().map(|r| binarizer.transaction(r)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedRule {
    pub antecedent: Vec<Literal>,
    pub consequent: Direction,
    pub support: f64,
    pub confidence: f64,
    /// Transactions matching the antecedent.
    pub count: usize,
    /// Transactions matching the antecedent and the consequent.
    pub hits: usize,
}

impl MinedRule {
    pub fn to_rule(&self) -> Rule {
        Rule {
            direction: self.consequent,
            body: self.antecedent.clone(),
            probability: self.confidence,
            calibration: CalibrationStatus::Uncalibrated,
        }
    }

    pub fn body_text(&self) -> String {
        self.antecedent
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" AND ")
    }
}

/// A frequent itemset of the form `antecedent ∪ {class}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassItemset {
    pub antecedent: Vec<Literal>,
    pub class: Direction,
    pub antecedent_count: usize,
    pub count: usize,
}

#[derive(Clone)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn and(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }
    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }
    fn and_count(&self, other: &Bits) -> usize {
        self.0.iter().zip(&other.0).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }
}

fn check_params(min_support: f64, min_confidence: f64, max_len: usize) -> Result<(), StatsError> {
    if !(min_support > 0.0 && min_support <= 1.0) {
        return Err(StatsError::Parameter(format!("min_support {min_support} not in (0, 1]")));
    }
    if !(min_confidence > 0.0 && min_confidence <= 1.0) {
        return Err(StatsError::Parameter(format!("min_confidence {min_confidence} not in (0, 1]")));
    }
    if !(1..=4).contains(&max_len) {
        return Err(StatsError::Parameter(format!("max_len {max_len} not in 1..=4")));
    }
    Ok(())
}

fn is_frequent(count: usize, n: usize, min_support: f64) -> bool {
    count as f64 / n as f64 >= min_support - 1e-12
}

/// Level-wise Apriori over itemsets `X ∪ {class}` with `|X| <= max_len`.
///
/// Candidates of size k are joined from frequent (k-1)-antecedents sharing a
/// (k-2)-prefix and dropped when any (k-1)-subset is infrequent for the same
/// class. Supports are counted with transaction bitsets.
pub fn frequent_class_itemsets(
    transactions: &[Transaction],
    min_support: f64,
    max_len: usize,
) -> Result<Vec<ClassItemset>, StatsError> {
    if transactions.is_empty() {
        return Err(StatsError::EmptyTransactions);
    }
    check_params(min_support, 1.0, max_len)?;
    let n = transactions.len();
    let items: Vec<Literal> = transactions
        .iter()
        .flat_map(|t| t.items.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&Literal, usize> = items.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let mut tidsets = vec![Bits::new(n); items.len()];
    let mut class_bits = [Bits::new(n), Bits::new(n)];
    for (t, tx) in transactions.iter().enumerate() {
        for item in &tx.items {
            tidsets[index[item]].set(t);
        }
        class_bits[class_slot(tx.label)].set(t);
    }

    let mut out = Vec::new();
    for class in [Direction::Success, Direction::Failure] {
        let cbits = &class_bits[class_slot(class)];
        // frequent antecedents of the current level with their tidsets
        let mut level: Vec<(Vec<usize>, Bits)> = Vec::new();
        for (i, bits) in tidsets.iter().enumerate() {
            let count = bits.and_count(cbits);
            if is_frequent(count, n, min_support) {
                out.push(ClassItemset {
                    antecedent: vec![items[i].clone()],
                    class,
                    antecedent_count: bits.count(),
                    count,
                });
                level.push((vec![i], bits.clone()));
            }
        }
        for _ in 2..=max_len {
            let known: BTreeSet<&[usize]> = level.iter().map(|(s, _)| s.as_slice()).collect();
            let mut next = Vec::new();
            for a in 0..level.len() {
                for b in a + 1..level.len() {
                    let (xa, ba) = &level[a];
                    let (xb, _) = &level[b];
                    let k = xa.len();
                    if xa[..k - 1] != xb[..k - 1] {
                        // levels are sorted, so no later b shares the prefix either
                        break;
                    }
                    let mut cand = xa.clone();
                    cand.push(xb[k - 1]);
                    let all_subsets_frequent = (0..cand.len() - 2).all(|drop| {
                        let sub: Vec<usize> = cand
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != drop)
                            .map(|(_, v)| *v)
                            .collect();
                        known.contains(sub.as_slice())
                    });
                    if !all_subsets_frequent {
                        continue;
                    }
                    let bits = ba.and(&tidsets[xb[k - 1]]);
                    let count = bits.and_count(cbits);
                    if is_frequent(count, n, min_support) {
                        out.push(ClassItemset {
                            antecedent: cand.iter().map(|&i| items[i].clone()).collect(),
                            class,
                            antecedent_count: bits.count(),
                            count,
                        });
                        next.push((cand, bits));
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            level = next;
        }
    }
    Ok(out)
}

fn class_slot(d: Direction) -> usize {
    match d {
        Direction::Success => 0,
        Direction::Failure => 1,
    }
}

/// Total order used for mined rules: confidence desc, support desc, antecedent asc.
pub fn rule_order(a: &MinedRule, b: &MinedRule) -> std::cmp::Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(b.support.total_cmp(&a.support))
        .then_with(|| a.antecedent.cmp(&b.antecedent))
        .then(a.consequent.cmp(&b.consequent))
}

/// Rules `X => success|failure` from frequent class itemsets with confidence
/// of at least `min_confidence`, sorted by [`rule_order`].
pub fn mine_rules(
    transactions: &[Transaction],
    min_support: f64,
    min_confidence: f64,
    max_len: usize,
) -> Result<Vec<MinedRule>, StatsError> {
    check_params(min_support, min_confidence, max_len)?;
    let n = transactions.len() as f64;
    let mut rules: Vec<MinedRule> = frequent_class_itemsets(transactions, min_support, max_len)?
        .into_iter()
        .filter_map(|s| {
            let confidence = s.count as f64 / s.antecedent_count as f64;
            (confidence >= min_confidence - 1e-12).then(|| MinedRule {
                antecedent: s.antecedent,
                consequent: s.class,
                support: s.count as f64 / n,
                confidence,
                count: s.antecedent_count,
                hits: s.count,
            })
        })
        .collect();
    rules.sort_by(rule_order);
    Ok(rules)
}

/// Mined rules handed to the reflection step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Hints {
    pub success: Vec<MinedRule>,
    pub failure: Vec<MinedRule>,
}

impl Hints {
    pub fn get(&self, direction: Direction) -> &[MinedRule] {
        match direction {
            Direction::Success => &self.success,
            Direction::Failure => &self.failure,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.success.is_empty() && self.failure.is_empty()
    }
}

fn confidence_of(transactions: &[Transaction], body: &[Literal], direction: Direction) -> Option<f64> {
    let (mut matched, mut hits) = (0usize, 0usize);
    for t in transactions.iter().filter(|t| t.matches(body)) {
        matched += 1;
        hits += (t.label == direction) as usize;
    }
    (matched > 0).then(|| hits as f64 / matched as f64)
}

/// Whether `rule` improves significantly on every more general body.
fn is_productive(rule: &MinedRule, transactions: &[Transaction], z: f64) -> bool {
    let k = rule.antecedent.len();
    (1..(1u32 << k) - 1).all(|mask| {
        let sub: Vec<Literal> = (0..k)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| rule.antecedent[i].clone())
            .collect();
        match confidence_of(transactions, &sub, rule.consequent) {
            Some(general) => {
                let se = (general * (1.0 - general) / rule.count as f64).sqrt();
                rule.confidence - general > z * se
            }
            None => true,
        }
    })
}

/// Top success and failure hints under the per-direction confidence floors,
/// skipping rules that do not improve on a more general body.
pub fn mine_hints(transactions: &[Transaction], cfg: &StatsConfig) -> Result<Hints, StatsError> {
    let floor = cfg.min_confidence_success.min(cfg.min_confidence_failure);
    let rules = mine_rules(transactions, cfg.min_support, floor, cfg.max_len)?;
    let mut hints = Hints::default();
    for rule in rules {
        let (list, min_conf, cap) = match rule.consequent {
            Direction::Success => (&mut hints.success, cfg.min_confidence_success, cfg.top_success_hints),
            Direction::Failure => (&mut hints.failure, cfg.min_confidence_failure, cfg.top_failure_hints),
        };
        if list.len() >= cap || rule.confidence < min_conf {
            continue;
        }
        if is_productive(&rule, transactions, cfg.hint_improvement_z) {
            list.push(rule);
        }
    }
    Ok(hints)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCalibration {
    pub direction: Direction,
    pub body: String,
    pub prior_probability: f64,
    pub matched: usize,
    pub hits: usize,
    pub empirical: Option<f64>,
    pub status: CalibrationStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub sample_size: usize,
    pub min_samples: usize,
    pub seed: u64,
    pub rules: Vec<RuleCalibration>,
}

impl CalibrationReport {
    pub fn entry(&self, rule: &Rule) -> Option<&RuleCalibration> {
        let key = rule.body_key();
        self.rules.iter().find(|e| {
            e.direction == rule.direction
                && crate::policy::parse_rule_line(&format!("{},0", e.body), e.direction)
                    .map(|r| r.body_key() == key)
                    .unwrap_or(false)
        })
    }
}

/// Seeded draw of `min(sample_size, n)` transactions without replacement, in data order.
pub fn draw_sample(transactions: &[Transaction], sample_size: usize, seed: u64) -> Vec<&Transaction> {
    if transactions.len() <= sample_size {
        return transactions.iter().collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, transactions.len(), sample_size).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| &transactions[i]).collect()
}

/// Replaces each rule's probability with the empirical proportion of its
/// direction among sampled transactions matching its body. Rules with fewer
/// than `min_samples` matches keep their probability and are flagged.
pub fn calibrate_policy(
    policy: &Policy,
    transactions: &[Transaction],
    sample_size: usize,
    min_samples: usize,
    seed: u64,
) -> Result<(Policy, CalibrationReport), StatsError> {
    if transactions.is_empty() {
        return Err(StatsError::EmptyRecords);
    }
    let min_samples = min_samples.max(1);
    let sample = draw_sample(transactions, sample_size, seed);
    let mut calibrated = policy.clone();
    let mut entries = Vec::with_capacity(policy.len());
    for direction in [Direction::Success, Direction::Failure] {
        for rule in calibrated.rules_mut(direction) {
            let (mut matched, mut hits) = (0usize, 0usize);
            for t in sample.iter().filter(|t| t.matches(&rule.body)) {
                matched += 1;
                hits += (t.label == direction) as usize;
            }
            let prior = rule.probability;
            let empirical = (matched > 0).then(|| hits as f64 / matched as f64);
            if matched >= min_samples {
                rule.probability = hits as f64 / matched as f64;
                rule.calibration = CalibrationStatus::Calibrated;
            } else {
                rule.calibration = CalibrationStatus::InsufficientSamples;
            }
            entries.push(RuleCalibration {
                direction,
                body: rule.body_text(),
                prior_probability: prior,
                matched,
                hits,
                empirical,
                status: rule.calibration,
            });
        }
    }
    Ok((
        calibrated,
        CalibrationReport {
            sample_size: sample.len(),
            min_samples,
            seed,
            rules: entries,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub policy: Policy,
    pub removed: Vec<String>,
    /// Set when pruning removed every rule.
    pub emptied: bool,
}

/// Drops success rules below 0.1, failure rules below 0.9 (strict) and every
/// rule flagged with insufficient samples. Survivors keep their order.
pub fn prune_policy(policy: &Policy, report: &CalibrationReport) -> Result<PruneOutcome, StatsError> {
    let mut out = policy.clone();
    let mut removed = Vec::new();
    for direction in [Direction::Success, Direction::Failure] {
        let floor = match direction {
            Direction::Success => SUCCESS_PRUNE_FLOOR,
            Direction::Failure => FAILURE_PRUNE_FLOOR,
        };
        let mut kept = Vec::new();
        for rule in policy.rules(direction) {
            let entry = report.entry(rule).ok_or_else(|| StatsError::MissingReportEntry {
                direction,
                body: rule.body_text(),
            })?;
            if entry.status == CalibrationStatus::InsufficientSamples || rule.probability < floor {
                removed.push(format!("{direction}: {rule}"));
            } else {
                kept.push(rule.clone());
            }
        }
        *out.rules_mut(direction) = kept;
    }
    let emptied = out.is_empty() && !policy.is_empty();
    Ok(PruneOutcome {
        policy: out,
        removed,
        emptied,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledPolicy {
    pub policy: Policy,
    /// Probabilities before rescaling, aligned with `policy.success_rules`.
    pub original_success: Vec<f64>,
    /// Probabilities before rescaling, aligned with `policy.failure_rules`.
    pub original_failure: Vec<f64>,
}

fn rescale_list(rules: &mut [Rule]) -> Vec<f64> {
    let originals: Vec<f64> = rules.iter().map(|r| r.probability).collect();
    let lo = originals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = originals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = RESCALE_BAND;
    for rule in rules.iter_mut() {
        rule.probability = if hi > lo {
            a + (rule.probability - lo) / (hi - lo) * (b - a)
        } else {
            0.5
        };
    }
    originals
}

/// Affine map of each direction's probabilities from their observed range onto
/// [0.1, 0.9]; a single rule or a constant range maps to 0.5.
pub fn rescale_probabilities(policy: &Policy) -> RescaledPolicy {
    let mut out = policy.clone();
    let original_success = rescale_list(&mut out.success_rules);
    let original_failure = rescale_list(&mut out.failure_rules);
    RescaledPolicy {
        policy: out,
        original_success,
        original_failure,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::parse_policy;

    fn tx(items: &[&str], label: Direction) -> Transaction {
        Transaction {
            items: items.iter().map(|t| Literal::parse(t).unwrap()).collect(),
            label,
        }
    }

    fn five() -> Vec<Transaction> {
        use Direction::*;
        vec![
            tx(&["a", "b"], Success),
            tx(&["a", "b"], Success),
            tx(&["a", "not_b"], Failure),
            tx(&["not_a", "b"], Failure),
            tx(&["a", "b"], Success),
        ]
    }

    #[test]
    fn binarize_uses_strict_median() {
        let rec = |v: f64| FounderRecord {
            id: "r".into(),
            features: [("f".to_string(), v)].into_iter().collect(),
            label: Direction::Failure,
        };
        let train = vec![rec(0.0), rec(0.5), rec(1.0)];
        let b = Binarizer::fit(&train).unwrap();
        assert_eq!(b.medians["f"], 0.5);
        let txs = binarize(&[rec(0.9), rec(0.5)], &b);
        assert_eq!(txs.len(), 2);
        assert!(txs[0].items.contains(&Literal::positive("f")));
        assert!(txs[1].items.contains(&Literal::negative("f")));
    }

    #[test]
    fn mines_the_planted_pair() {
        let rules = mine_rules(&five(), 0.4, 0.9, 3).unwrap();
        let ab = vec![Literal::positive("a"), Literal::positive("b")];
        let r = rules.iter().find(|r| r.antecedent == ab).expect("a,b => success");
        assert_eq!(r.consequent, Direction::Success);
        assert!((r.support - 0.6).abs() < 1e-12);
        assert_eq!(r.confidence, 1.0);
        assert_eq!((r.count, r.hits), (3, 3));
        // nothing else reaches confidence 0.9 at support 0.4
        assert_eq!(rules.len(), 1, "{rules:?}");
    }

    #[test]
    fn full_support_keeps_only_universal_itemsets() {
        let sets = frequent_class_itemsets(&five(), 1.0, 3).unwrap();
        assert!(sets.is_empty());
        let mut txs = five();
        for t in &mut txs {
            t.items.insert(Literal::positive("z"));
            t.label = Direction::Success;
        }
        let sets = frequent_class_itemsets(&txs, 1.0, 3).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].antecedent, vec![Literal::positive("z")]);
    }

    #[test]
    fn parameter_validation() {
        assert!(matches!(mine_rules(&[], 0.1, 0.5, 2), Err(StatsError::EmptyTransactions)));
        assert!(mine_rules(&five(), 0.0, 0.5, 2).is_err());
        assert!(mine_rules(&five(), 0.5, 1.5, 2).is_err());
        assert!(mine_rules(&five(), 0.5, 0.5, 5).is_err());
    }

    #[test]
    fn calibration_flags_and_proportions() {
        let policy = parse_policy("Success rules:\na AND b,0.2\nnot_a AND not_b,0.7\nFailure rules:\na,0.5\n").unwrap();
        let (cal, report) = calibrate_policy(&policy, &five(), 1000, 1, 0).unwrap();
        assert_eq!(cal.success_rules[0].probability, 1.0);
        assert_eq!(cal.success_rules[0].calibration, CalibrationStatus::Calibrated);
        // empty match keeps its probability
        assert_eq!(cal.success_rules[1].probability, 0.7);
        assert_eq!(cal.success_rules[1].calibration, CalibrationStatus::InsufficientSamples);
        assert_eq!(report.rules[1].matched, 0);
        assert_eq!(cal.failure_rules[0].probability, 0.25);
        assert_eq!(report.sample_size, 5);
    }

    #[test]
    fn calibration_sample_is_seeded() {
        let txs: Vec<Transaction> = (0..5000)
            .map(|i| tx(if i % 3 == 0 { &["a"] } else { &["not_a"] }, if i % 7 == 0 { Direction::Success } else { Direction::Failure }))
            .collect();
        let policy = parse_policy("Success rules:\na,0.5\n").unwrap();
        let (a, ra) = calibrate_policy(&policy, &txs, 1000, 20, 11).unwrap();
        let (b, rb) = calibrate_policy(&policy, &txs, 1000, 20, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.sample_size, 1000);
        let e = &ra.rules[0];
        assert_eq!(a.success_rules[0].probability, e.hits as f64 / e.matched as f64);
    }

    fn calibrated(text: &str) -> (Policy, CalibrationReport) {
        let p = parse_policy(text).unwrap();
        let report = CalibrationReport {
            sample_size: 100,
            min_samples: 20,
            seed: 0,
            rules: p
                .all_rules()
                .map(|r| RuleCalibration {
                    direction: r.direction,
                    body: r.body_text(),
                    prior_probability: r.probability,
                    matched: 50,
                    hits: 0,
                    empirical: Some(r.probability),
                    status: CalibrationStatus::Calibrated,
                })
                .collect(),
        };
        (p, report)
    }

    #[test]
    fn pruning_thresholds_are_strict() {
        let (p, report) = calibrated("Success rules:\na,0.09\nb,0.10\nFailure rules:\nnot_a,0.89\nnot_b,0.90\n");
        let out = prune_policy(&p, &report).unwrap();
        assert_eq!(crate::policy::serialize_policy(&out.policy), "Success rules:\nb,0.10\n\nFailure rules:\nnot_b,0.90\n");
        assert_eq!(out.removed.len(), 2);
        assert!(!out.emptied);
    }

    #[test]
    fn pruning_removes_insufficient_and_can_empty() {
        let (p, mut report) = calibrated("Success rules:\na,0.95\n");
        report.rules[0].status = CalibrationStatus::InsufficientSamples;
        let out = prune_policy(&p, &report).unwrap();
        assert!(out.policy.is_empty());
        assert!(out.emptied);
        let other = parse_policy("Success rules:\nz,0.5\n").unwrap();
        assert!(matches!(prune_policy(&other, &report), Err(StatsError::MissingReportEntry { .. })));
    }

    #[test]
    fn rescale_band_map() {
        let p = parse_policy("Success rules:\na,0.10\nb,0.20\nc,0.30\nFailure rules:\nnot_a,0.95\n").unwrap();
        let r = rescale_probabilities(&p);
        let probs: Vec<f64> = r.policy.success_rules.iter().map(|r| r.probability).collect();
        for (got, want) in probs.iter().zip([0.1, 0.5, 0.9]) {
            assert!((got - want).abs() < 1e-12, "{probs:?}");
        }
        assert_eq!(r.policy.failure_rules[0].probability, 0.5);
        assert_eq!(r.original_success, vec![0.10, 0.20, 0.30]);
        assert_eq!(r.original_failure, vec![0.95]);
        let single = rescale_probabilities(&parse_policy("Success rules:\na,0.25\n").unwrap());
        assert_eq!(single.policy.success_rules[0].probability, 0.5);
    }
}
