//! Query probabilities for ground probabilistic programs under the
//! distribution semantics.
//!
//! Every fact and every clause is an independent Boolean choice. A query
//! (`success` or `failure`) holds in a world when some clause with that head is
//! switched on and its body is satisfied by the facts of the world. Negated body
//! literals succeed when the fact is false (negation as failure).
//!
//! Exact inference enumerates the truth assignments of the facts relevant to a
//! query and sums out the clause switches in closed form: given a fact world,
//! the query fails only if every applicable clause is switched off. Sampling
//! draws whole worlds from a seeded ChaCha stream.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{Direction, Literal, Policy};

pub const DEFAULT_EXACT_LIMIT: usize = 22;
pub const DEFAULT_SAMPLES: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("program has {choices} probabilistic choices, above the exact limit of {limit}; use sampling")]
    Capacity { choices: usize, limit: usize },
    #[error("sample count must be at least 1")]
    InvalidSampleCount,
    #[error("facts missing for atoms: {}", .0.join(", "))]
    MissingFacts(Vec<String>),
    #[error("probability {value} for {what} outside [0, 1]")]
    Probability { what: String, value: f64 },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub head: Direction,
    pub body: Vec<Literal>,
    pub probability: f64,
}

/// A ground program: probabilistic facts plus clauses whose heads are the two queries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbProgram {
    pub facts: BTreeMap<String, f64>,
    pub clauses: Vec<Clause>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub p_success: f64,
    pub p_failure: f64,
    pub mode: InferenceMode,
    pub samples: usize,
}

impl InferenceResult {
    pub fn probability(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Success => self.p_success,
            Direction::Failure => self.p_failure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub exact_limit: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            exact_limit: DEFAULT_EXACT_LIMIT,
            samples: DEFAULT_SAMPLES,
            seed: 0,
        }
    }
}

impl ProbProgram {
    /// Builds the program a policy induces for one founder: one fact per
    /// referenced atom, one clause per rule.
    pub fn from_policy(policy: &Policy, traits: &BTreeMap<String, f64>) -> Result<Self, InferenceError> {
        let atoms = policy.atoms();
        let missing: Vec<String> = atoms.iter().filter(|a| !traits.contains_key(*a)).cloned().collect();
        if !missing.is_empty() {
            return Err(InferenceError::MissingFacts(missing));
        }
        let facts = atoms.into_iter().map(|a| {
            let p = traits[&a];
            (a, p)
        });
        let clauses = policy
            .all_rules()
            .map(|r| Clause {
                head: r.direction,
                body: r.body.clone(),
                probability: r.probability,
            })
            .collect();
        let program = ProbProgram {
            facts: facts.collect(),
            clauses,
        };
        program.validate()?;
        Ok(program)
    }

    pub fn choice_count(&self) -> usize {
        self.facts.len() + self.clauses.len()
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        for (atom, &p) in &self.facts {
            if !(0.0..=1.0).contains(&p) {
                return Err(InferenceError::Probability {
                    what: format!("fact {atom}"),
                    value: p,
                });
            }
        }
        let mut missing = Vec::new();
        for (i, clause) in self.clauses.iter().enumerate() {
            if !(0.0..=1.0).contains(&clause.probability) {
                return Err(InferenceError::Probability {
                    what: format!("clause {}", i + 1),
                    value: clause.probability,
                });
            }
            for lit in &clause.body {
                if !self.facts.contains_key(&lit.atom) && !missing.contains(&lit.atom) {
                    missing.push(lit.atom.clone());
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            missing.sort();
            Err(InferenceError::MissingFacts(missing))
        }
    }

    /// Parses the fact/clause/query text produced by
    /// [`emit_problog_program`](crate::policy::emit_problog_program).
    ///
    /// Accepted lines: `p::atom.`, `atom.`, `p::success :- a,\+b.`,
    /// `failure :- a.`, `query(success).`, blank lines and `%` comments.
    pub fn parse(text: &str) -> Result<Self, InferenceError> {
        let mut program = ProbProgram::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let syntax = |message: String| InferenceError::Syntax {
                line: line_no,
                message,
            };
            let line = raw.split('%').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let stmt = line
                .strip_suffix('.')
                .ok_or_else(|| syntax("statement must end with '.'".into()))?
                .trim();
            if let Some(q) = stmt.strip_prefix("query(").and_then(|s| s.strip_suffix(')')) {
                match q.trim() {
                    "success" | "failure" => continue,
                    other => return Err(syntax(format!("unsupported query {other:?}"))),
                }
            }
            let (probability, rest) = match stmt.split_once("::") {
                Some((p, rest)) => {
                    let p: f64 = p
                        .trim()
                        .parse()
                        .map_err(|_| syntax(format!("invalid probability {:?}", p.trim())))?;
                    (p, rest.trim())
                }
                None => (1.0, stmt),
            };
            if !(0.0..=1.0).contains(&probability) {
                return Err(syntax(format!("probability {probability} outside [0, 1]")));
            }
            match rest.split_once(":-") {
                Some((head, body)) => {
                    let head = match head.trim() {
                        "success" => Direction::Success,
                        "failure" => Direction::Failure,
                        other => return Err(syntax(format!("unsupported clause head {other:?}"))),
                    };
                    let body = body
                        .split(',')
                        .map(|tok| {
                            let tok = tok.trim();
                            let (atom, negated) = match tok.strip_prefix("\\+") {
                                Some(a) => (a.trim(), true),
                                None => (tok, false),
                            };
                            if is_plain_atom(atom) {
                                Ok(Literal {
                                    atom: atom.to_string(),
                                    negated,
                                })
                            } else {
                                Err(syntax(format!("invalid body literal {tok:?}")))
                            }
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    program.clauses.push(Clause {
                        head,
                        body,
                        probability,
                    });
                }
                None => {
                    if !is_plain_atom(rest) {
                        return Err(syntax(format!("invalid fact {rest:?}")));
                    }
                    if program.facts.insert(rest.to_string(), probability).is_some() {
                        return Err(syntax(format!("duplicate fact {rest}")));
                    }
                }
            }
        }
        program.validate()?;
        Ok(program)
    }
}

fn is_plain_atom(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A clause body compiled against a fact ordering: the clause applies in a world
/// `w` (bit i set = fact i true) iff `w & pos == pos && w & neg == 0`.
#[derive(Debug, Clone, Copy)]
struct CompiledClause {
    pos: u64,
    neg: u64,
    probability: f64,
}

/// Facts relevant to one query, with their clauses compiled to bit masks.
struct QueryPlan {
    fact_probs: Vec<f64>,
    clauses: Vec<CompiledClause>,
}

impl QueryPlan {
    fn new(program: &ProbProgram, head: Direction) -> Self {
        let clauses: Vec<&Clause> = program.clauses.iter().filter(|c| c.head == head).collect();
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for clause in &clauses {
            for lit in &clause.body {
                index.entry(lit.atom.as_str()).or_insert(0);
            }
        }
        let mut fact_probs = Vec::with_capacity(index.len());
        for (i, (atom, slot)) in index.iter_mut().enumerate() {
            *slot = i;
            fact_probs.push(program.facts[*atom]);
        }
        let compiled = clauses
            .iter()
            .filter_map(|clause| {
                let mut pos = 0u64;
                let mut neg = 0u64;
                for lit in &clause.body {
                    let bit = 1u64 << index[lit.atom.as_str()];
                    if lit.negated {
                        neg |= bit;
                    } else {
                        pos |= bit;
                    }
                }
                // a body demanding both a and not a never applies
                (pos & neg == 0).then_some(CompiledClause {
                    pos,
                    neg,
                    probability: clause.probability,
                })
            })
            .collect();
        QueryPlan {
            fact_probs,
            clauses: compiled,
        }
    }

    fn probability(&self) -> f64 {
        if self.clauses.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        self.walk(0, 0, 1.0, &mut total);
        total.clamp(0.0, 1.0)
    }

    fn walk(&self, depth: usize, world: u64, weight: f64, total: &mut f64) {
        if weight == 0.0 {
            return;
        }
        if depth == self.fact_probs.len() {
            let mut none_fire = 1.0;
            for c in &self.clauses {
                if world & c.pos == c.pos && world & c.neg == 0 {
                    none_fire *= 1.0 - c.probability;
                }
            }
            *total += weight * (1.0 - none_fire);
            return;
        }
        let p = self.fact_probs[depth];
        self.walk(depth + 1, world | (1 << depth), weight * p, total);
        self.walk(depth + 1, world, weight * (1.0 - p), total);
    }
}

/// Exact query probabilities. Fails with a capacity error when the program has
/// more than `exact_limit` probabilistic choices.
pub fn infer_exact(program: &ProbProgram, exact_limit: usize) -> Result<InferenceResult, InferenceError> {
    program.validate()?;
    let choices = program.choice_count();
    if choices > exact_limit || program.facts.len() > 63 {
        return Err(InferenceError::Capacity {
            choices,
            limit: exact_limit,
        });
    }
    Ok(InferenceResult {
        p_success: QueryPlan::new(program, Direction::Success).probability(),
        p_failure: QueryPlan::new(program, Direction::Failure).probability(),
        mode: InferenceMode::Exact,
        samples: 0,
    })
}

/// Monte Carlo estimate over `samples` independently drawn worlds.
///
/// Each world draws every fact (in atom order) and then every clause switch (in
/// program order) from a ChaCha8 stream seeded with `seed`, so identical inputs
/// give bit-identical estimates.
pub fn infer_sampled(program: &ProbProgram, samples: usize, seed: u64) -> Result<InferenceResult, InferenceError> {
    if samples == 0 {
        return Err(InferenceError::InvalidSampleCount);
    }
    program.validate()?;
    let atoms: Vec<&str> = program.facts.keys().map(String::as_str).collect();
    let fact_probs: Vec<f64> = program.facts.values().copied().collect();
    let clauses: Vec<(Direction, Vec<(usize, bool)>, f64)> = program
        .clauses
        .iter()
        .map(|c| {
            let body = c
                .body
                .iter()
                .map(|l| (atoms.binary_search(&l.atom.as_str()).expect("validated"), l.negated))
                .collect();
            (c.head, body, c.probability)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = vec![false; fact_probs.len()];
    let (mut n_success, mut n_failure) = (0usize, 0usize);
    for _ in 0..samples {
        for (slot, &p) in world.iter_mut().zip(&fact_probs) {
            *slot = rng.gen::<f64>() < p;
        }
        let (mut success, mut failure) = (false, false);
        for (head, body, p) in &clauses {
            let switched_on = rng.gen::<f64>() < *p;
            if switched_on && body.iter().all(|&(i, negated)| world[i] != negated) {
                match head {
                    Direction::Success => success = true,
                    Direction::Failure => failure = true,
                }
            }
        }
        n_success += success as usize;
        n_failure += failure as usize;
    }
    Ok(InferenceResult {
        p_success: n_success as f64 / samples as f64,
        p_failure: n_failure as f64 / samples as f64,
        mode: InferenceMode::Sampled,
        samples,
    })
}

/// Exact inference when the program fits under the configured limit, sampling otherwise.
pub fn infer(program: &ProbProgram, cfg: &InferenceConfig) -> Result<InferenceResult, InferenceError> {
    if program.choice_count() <= cfg.exact_limit {
        infer_exact(program, cfg.exact_limit)
    } else {
        infer_sampled(program, cfg.samples, cfg.seed)
    }
}

/// Success and failure probabilities of one founder under a policy.
pub fn query_founder(
    policy: &Policy,
    traits: &BTreeMap<String, f64>,
    cfg: &InferenceConfig,
) -> Result<InferenceResult, InferenceError> {
    let program = ProbProgram::from_policy(policy, traits)?;
    infer(&program, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{emit_problog_program, parse_policy};

    fn listing_program() -> ProbProgram {
        ProbProgram::parse(
            "0.7::education.\n0.2::work_experience.\n\n0.6::success :- education,work_experience.\n\nquery(success).\n",
        )
        .unwrap()
    }

    #[test]
    fn listing_program_is_0_084() {
        let r = infer_exact(&listing_program(), DEFAULT_EXACT_LIMIT).unwrap();
        assert!((r.p_success - 0.084).abs() < 1e-12, "{}", r.p_success);
        assert_eq!(r.p_failure, 0.0);
        assert_eq!(r.mode, InferenceMode::Exact);
        assert_eq!(r.samples, 0);
    }

    #[test]
    fn shared_atom_is_not_noisy_or() {
        let program = ProbProgram::parse(
            "0.5::a.\n0.5::b.\n0.8::success :- a.\n0.8::success :- a,b.\n",
        )
        .unwrap();
        let r = infer_exact(&program, 22).unwrap();
        assert!((r.p_success - 0.44).abs() < 1e-12, "{}", r.p_success);
    }

    #[test]
    fn no_clauses_means_nothing_derivable() {
        let program = ProbProgram::parse("0.5::a.\n").unwrap();
        let r = infer_exact(&program, 22).unwrap();
        assert_eq!((r.p_success, r.p_failure), (0.0, 0.0));
    }

    #[test]
    fn capacity_error_above_limit() {
        let mut program = ProbProgram::default();
        for i in 0..23 {
            program.facts.insert(format!("f{i}"), 0.5);
        }
        assert_eq!(
            infer_exact(&program, 22).unwrap_err(),
            InferenceError::Capacity { choices: 23, limit: 22 }
        );
        // the dispatcher falls back to sampling
        let r = infer(&program, &InferenceConfig { samples: 10, ..Default::default() }).unwrap();
        assert_eq!(r.mode, InferenceMode::Sampled);
    }

    #[test]
    fn sampling_degenerate_probabilities() {
        let program = ProbProgram::parse("1.0::a.\n1.0::success :- a.\n").unwrap();
        for seed in [0, 1, 99] {
            let r = infer_sampled(&program, 1000, seed).unwrap();
            assert_eq!(r.p_success, 1.0);
            assert_eq!(r.p_failure, 0.0);
        }
    }

    #[test]
    fn sampling_is_reproducible_and_close() {
        let program = listing_program();
        let a = infer_sampled(&program, 100_000, 7).unwrap();
        let b = infer_sampled(&program, 100_000, 7).unwrap();
        assert_eq!(a.p_success.to_bits(), b.p_success.to_bits());
        assert!((a.p_success - 0.084).abs() <= 0.005, "{}", a.p_success);
        assert_eq!(a.samples, 100_000);
        assert_eq!(infer_sampled(&program, 0, 7).unwrap_err(), InferenceError::InvalidSampleCount);
    }

    #[test]
    fn query_founder_on_example_policy() {
        let policy = parse_policy(
            "Success rules:\nnum_acquisitions AND career_growth,0.40\nperseverance AND vision,0.32\n\nFailure rules:\nnot_career_growth AND not_num_acquisitions,0.96\nnot_education_level AND not_education_institution,0.89\n",
        )
        .unwrap();
        let traits: BTreeMap<String, f64> = policy.atoms().into_iter().map(|a| (a, 1.0)).collect();
        let r = query_founder(&policy, &traits, &InferenceConfig::default()).unwrap();
        assert!((r.p_success - 0.592).abs() < 1e-12);
        assert_eq!(r.p_failure, 0.0);

        let empty = query_founder(&Policy::default(), &BTreeMap::new(), &InferenceConfig::default()).unwrap();
        assert_eq!((empty.p_success, empty.p_failure), (0.0, 0.0));

        let mut partial = traits.clone();
        partial.remove("vision");
        assert_eq!(
            query_founder(&policy, &partial, &InferenceConfig::default()).unwrap_err(),
            InferenceError::MissingFacts(vec!["vision".into()])
        );
    }

    #[test]
    fn emitted_text_parses_back() {
        let policy = parse_policy("Success rules:\na AND not_b,0.6\nFailure rules:\nnot_a,0.9\n").unwrap();
        let facts = BTreeMap::from([("a".to_string(), 0.3), ("b".to_string(), 0.25)]);
        let text = emit_problog_program(&policy, &facts).unwrap();
        let parsed = ProbProgram::parse(&text).unwrap();
        assert_eq!(parsed, ProbProgram::from_policy(&policy, &facts).unwrap());
        let r = infer_exact(&parsed, 22).unwrap();
        assert!((r.p_success - 0.3 * 0.75 * 0.6).abs() < 1e-12);
        assert!((r.p_failure - 0.7 * 0.9).abs() < 1e-12);
    }

    #[test]
    fn contradictory_body_never_fires() {
        let program = ProbProgram::parse("0.5::a.\n1.0::success :- a,\\+a.\n").unwrap();
        assert_eq!(infer_exact(&program, 22).unwrap().p_success, 0.0);
        assert_eq!(infer_sampled(&program, 500, 3).unwrap().p_success, 0.0);
    }

    #[test]
    fn parser_rejects_bad_lines() {
        for text in ["0.5::a", "1.5::a.", "x::a.", "0.5::Foo.", "0.5::other :- a.\n0.5::a.", "0.5::a.\n0.5::a."] {
            assert!(ProbProgram::parse(text).is_err(), "{text}");
        }
        assert!(matches!(
            ProbProgram::parse("0.5::success :- a.").unwrap_err(),
            InferenceError::MissingFacts(_)
        ));
    }
}
