//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use llmar::evaluation::{f_beta, Score};
use llmar::inference::{Clause, ProbProgram};
use llmar::statistics::Transaction;
use llmar::{Direction, Literal};
use rand::Rng;

/// Sums the weight of every joint assignment of facts and clause switches.
/// A head holds when some switched-on clause has a satisfied body.
pub fn brute_force(program: &ProbProgram) -> (f64, f64) {
    let facts: Vec<(&String, f64)> = program.facts.iter().map(|(k, &v)| (k, v)).collect();
    let nf = facts.len();
    let nc = program.clauses.len();
    let (mut ps, mut pf) = (0.0, 0.0);
    for world in 0u64..(1 << nf) {
        let mut w_world = 1.0;
        let mut truth = BTreeMap::new();
        for (i, (name, p)) in facts.iter().enumerate() {
            let on = world >> i & 1 == 1;
            w_world *= if on { *p } else { 1.0 - *p };
            truth.insert(name.as_str(), on);
        }
        if w_world == 0.0 {
            continue;
        }
        for switches in 0u64..(1 << nc) {
            let mut w = w_world;
            let (mut s, mut f) = (false, false);
            for (j, c) in program.clauses.iter().enumerate() {
                let on = switches >> j & 1 == 1;
                w *= if on { c.probability } else { 1.0 - c.probability };
                if on && c.body.iter().all(|l| truth[l.atom.as_str()] != l.negated) {
                    match c.head {
                        Direction::Success => s = true,
                        Direction::Failure => f = true,
                    }
                }
            }
            if s {
                ps += w;
            }
            if f {
                pf += w;
            }
        }
    }
    (ps, pf)
}

fn random_probability(rng: &mut impl Rng) -> f64 {
    match rng.gen_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen::<f64>(),
    }
}

/// A random program with at most `max_choices` facts plus clauses.
pub fn random_program(rng: &mut impl Rng, max_choices: usize) -> ProbProgram {
    let n_facts = rng.gen_range(1..=(max_choices - 1).min(7));
    let n_clauses = rng.gen_range(0..=(max_choices - n_facts));
    let atoms: Vec<String> = (0..n_facts).map(|i| format!("t{i}")).collect();
    let facts = atoms.iter().map(|a| (a.clone(), random_probability(rng))).collect();
    let clauses = (0..n_clauses)
        .map(|_| {
            let len = rng.gen_range(1..=n_facts.min(3));
            let mut picked: Vec<usize> = (0..n_facts).collect();
            for i in 0..len {
                let j = rng.gen_range(i..n_facts);
                picked.swap(i, j);
            }
            Clause {
                head: if rng.gen_bool(0.5) { Direction::Success } else { Direction::Failure },
                body: picked[..len]
                    .iter()
                    .map(|&i| Literal {
                        atom: atoms[i].clone(),
                        negated: rng.gen_bool(0.3),
                    })
                    .collect(),
                probability: random_probability(rng),
            }
        })
        .collect();
    ProbProgram { facts, clauses }
}

/// Every itemset of at most `max_len` items, counted against each class.
/// Key: (sorted antecedent, class); value: (antecedent count, itemset count).
pub fn exhaustive_class_itemsets(
    transactions: &[Transaction],
    min_support: f64,
    max_len: usize,
) -> BTreeMap<(Vec<Literal>, Direction), (usize, usize)> {
    let items: Vec<Literal> = transactions
        .iter()
        .flat_map(|t| t.items.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = transactions.len();
    let mut out = BTreeMap::new();
    for mask in 1u32..(1 << items.len()) {
        if mask.count_ones() as usize > max_len {
            continue;
        }
        let body: Vec<Literal> = (0..items.len()).filter(|i| mask >> i & 1 == 1).map(|i| items[i].clone()).collect();
        let matching: Vec<&Transaction> = transactions.iter().filter(|t| body.iter().all(|l| t.items.contains(l))).collect();
        for class in [Direction::Success, Direction::Failure] {
            let count = matching.iter().filter(|t| t.label == class).count();
            if count as f64 / n as f64 >= min_support - 1e-12 {
                out.insert((body.clone(), class), (matching.len(), count));
            }
        }
    }
    out
}

pub fn random_transactions(rng: &mut impl Rng, n_items: usize, n_tx: usize) -> Vec<Transaction> {
    let density: f64 = rng.gen_range(0.2..0.8);
    (0..n_tx)
        .map(|_| Transaction {
            items: (0..n_items).filter(|_| rng.gen_bool(density)).map(|i| Literal::positive(format!("i{i:02}"))).collect(),
            label: if rng.gen_bool(0.3) { Direction::Success } else { Direction::Failure },
        })
        .collect()
}

/// Full-grid maximum of F-beta with the tie rule applied after the fact:
/// among maximal pairs, the largest θs, then the smallest θf.
pub fn naive_threshold_search(scores: &[Score], beta: f64, steps: usize) -> (f64, f64, f64) {
    let mut all = Vec::new();
    for i in 0..=steps {
        for j in 0..=steps {
            let ts = i as f64 / steps as f64;
            let tf = j as f64 / steps as f64;
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for s in scores {
                let pred = s.p_success > ts && s.p_failure < tf;
                match (pred, s.label) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
            let r = if tp + fneg > 0 { tp as f64 / (tp + fneg) as f64 } else { 0.0 };
            all.push((f_beta(beta, p, r), ts, tf));
        }
    }
    let best = all.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
    let mut ties: Vec<_> = all.into_iter().filter(|x| x.0 == best).collect();
    ties.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.total_cmp(&b.2)));
    ties[0]
}

/// (precision %, recall %, printed F0.25) for every validation and test cell
/// of a reference 12-partition results table, partition by partition.
pub const TABLE1: [(f64, f64, f64); 24] = [
    (64.3, 9.0, 47.2),
    (58.3, 7.0, 40.7),
    (71.4, 5.0, 40.1),
    (66.7, 9.0, 48.4),
    (80.0, 8.0, 52.3),
    (52.4, 16.5, 46.5),
    (45.0, 9.0, 36.4),
    (59.0, 11.5, 47.5),
    (59.3, 16.0, 51.2),
    (65.4, 8.5, 46.9),
    (60.0, 12.0, 48.6),
    (62.1, 9.0, 46.1),
    (72.7, 8.0, 49.3),
    (83.3, 2.5, 28.7),
    (50.0, 6.0, 34.9),
    (56.3, 9.0, 43.0),
    (66.7, 8.0, 46.6),
    (57.9, 5.5, 37.1),
    (77.3, 17.0, 64.0),
    (47.1, 12.0, 40.2),
    (58.8, 10.0, 45.7),
    (50.0, 8.5, 38.8),
    (88.9, 8.0, 55.7),
    (55.6, 5.0, 34.9),
];

/// Printed averages of its validation and test F0.25 columns.
pub const TABLE1_AVERAGE_F: (f64, f64) = (47.7, 41.6);

/// (β, precision %, recall %, printed F_β) rows of a reference β sweep.
pub const TABLE5: [(f64, f64, f64, f64); 6] = [
    (4.0, 12.5, 92.0, 66.9),
    (2.0, 15.9, 72.0, 42.2),
    (1.0, 30.6, 36.0, 33.1),
    (0.5, 43.5, 20.0, 35.2),
    (0.25, 59.3, 8.0, 43.0),
    (0.125, 100.0, 2.0, 57.0),
];

/// Two biased coin features `a`, `b` and a noise feature `c`, with
/// P(success | a ∧ b) planted at 0.6.
pub fn planted_pair_config(n: usize) -> llmar::dataset::GeneratorConfig {
    use llmar::dataset::{FeatureMarginal, GeneratorConfig, PlantedRule};
    let coin = |name: &str| FeatureMarginal {
        name: name.into(),
        levels: vec![0.0, 1.0],
        weights: vec![0.55, 0.45],
    };
    GeneratorConfig {
        n,
        prevalence: 0.3,
        id_prefix: "f".into(),
        features: vec![coin("a"), coin("b"), coin("c")],
        planted: vec![PlantedRule {
            direction: Direction::Success,
            body: vec!["a".into(), "b".into()],
            probability: 0.6,
        }],
    }
}
