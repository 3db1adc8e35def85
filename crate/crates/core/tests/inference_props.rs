mod support;

use std::collections::BTreeMap;

use llmar::inference::{infer_exact, infer_sampled, Clause, ProbProgram};
use llmar::policy::{emit_problog_program, Policy, Rule};
use llmar::{Direction, Literal};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn exact_matches_brute_force_on_random_programs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let program = support::random_program(&mut rng, 12);
        let exact = infer_exact(&program, 22).unwrap();
        let (ps, pf) = support::brute_force(&program);
        assert!((exact.p_success - ps).abs() <= 1e-9, "case {case}: {} vs {ps}", exact.p_success);
        assert!((exact.p_failure - pf).abs() <= 1e-9, "case {case}: {} vs {pf}", exact.p_failure);
    }
}

#[test]
fn sampled_tracks_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..5 {
        let program = support::random_program(&mut rng, 10);
        let exact = infer_exact(&program, 22).unwrap();
        let sampled = infer_sampled(&program, 100_000, case).unwrap();
        assert!((exact.p_success - sampled.p_success).abs() <= 0.01);
        assert!((exact.p_failure - sampled.p_failure).abs() <= 0.01);
    }
}

fn atom_pool() -> Vec<&'static str> {
    vec!["education", "vision", "grit", "reach", "vc_experience"]
}

fn literal() -> impl Strategy<Value = Literal> {
    (0..5usize, any::<bool>()).prop_map(|(i, negated)| Literal {
        atom: atom_pool()[i].to_string(),
        negated,
    })
}

fn policy() -> impl Strategy<Value = Policy> {
    let rule = (any::<bool>(), prop::collection::vec(literal(), 1..4), 0..=100u32);
    prop::collection::vec(rule, 0..6).prop_map(|rules| {
        let mut p = Policy::default();
        for (success, body, pct) in rules {
            let dir = if success { Direction::Success } else { Direction::Failure };
            let mut body: Vec<Literal> = body;
            body.sort();
            body.dedup_by(|a, b| a.atom == b.atom);
            if let Ok(rule) = Rule::new(dir, body, pct as f64 / 100.0) {
                let _ = p.push(rule);
            }
        }
        p
    })
}

fn traits() -> impl Strategy<Value = BTreeMap<String, f64>> {
    prop::collection::vec(0.05..=0.95f64, 5).prop_map(|v| atom_pool().iter().map(|a| a.to_string()).zip(v).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn emitted_program_parses_to_the_same_program(p in policy(), t in traits()) {
        let text = emit_problog_program(&p, &t).unwrap();
        let parsed = ProbProgram::parse(&text).unwrap();
        prop_assert_eq!(parsed, ProbProgram::from_policy(&p, &t).unwrap());
    }

    #[test]
    fn probabilities_are_bounded(p in policy(), t in traits()) {
        let res = infer_exact(&ProbProgram::from_policy(&p, &t).unwrap(), 22).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&res.p_success));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&res.p_failure));
    }

    #[test]
    fn positive_programs_are_monotone_in_fact_probabilities(
        bodies in prop::collection::vec(prop::collection::btree_set(0..4usize, 1..3), 1..4),
        probs in prop::collection::vec(0.0..=1.0f64, 4),
        rule_p in 0.0..=1.0f64,
        which in 0..4usize,
        bump in 0.0..=1.0f64,
    ) {
        let atoms: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let mut program = ProbProgram {
            facts: atoms.iter().cloned().zip(probs.iter().copied()).collect(),
            clauses: bodies
                .iter()
                .map(|b| Clause {
                    head: Direction::Success,
                    body: b.iter().map(|&i| Literal::positive(atoms[i].clone())).collect(),
                    probability: rule_p,
                })
                .collect(),
        };
        let before = infer_exact(&program, 22).unwrap().p_success;
        let f = program.facts.get_mut(&atoms[which]).unwrap();
        *f = (*f + bump * (1.0 - *f)).min(1.0);
        let after = infer_exact(&program, 22).unwrap().p_success;
        prop_assert!(after >= before - 1e-12, "{before} -> {after}");
    }
}
