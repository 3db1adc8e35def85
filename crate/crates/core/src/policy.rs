//! Policies: named sets of probabilistic success and failure rules.
//!
//! The textual policy format is line oriented:
//!
//! ```text
//! Success rules:
//! num_acquisitions AND career_growth,0.40
//! perseverance AND vision,0.32
//!
//! Failure rules:
//! not_career_growth AND not_num_acquisitions,0.96
//! ```
//!
//! A `not_` prefix marks a negated literal. Probabilities are written with two
//! decimals but any decimal precision is accepted on input.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of literals in a rule body.
pub const MAX_BODY_LEN: usize = 8;

const NEGATION_PREFIX: &str = "not_";
const SUCCESS_HEADER: &str = "success rules:";
const FAILURE_HEADER: &str = "failure rules:";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("facts missing for atoms: {}", .0.join(", "))]
    MissingFacts(Vec<String>),
}

/// Head of a rule: which query the rule contributes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Success,
    Failure,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Success => "success",
            Direction::Failure => "failure",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationStatus {
    #[default]
    Uncalibrated,
    Calibrated,
    InsufficientSamples,
}

/// A possibly negated reference to a feature atom.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub atom: String,
    pub negated: bool,
}

impl Literal {
    pub fn positive(atom: impl Into<String>) -> Self {
        Literal {
            atom: atom.into(),
            negated: false,
        }
    }

    pub fn negative(atom: impl Into<String>) -> Self {
        Literal {
            atom: atom.into(),
            negated: true,
        }
    }

    /// Parses the serialized token form, where `not_x` is the negation of `x`.
    pub fn parse(token: &str) -> Result<Self, String> {
        let token = token.trim();
        let (atom, negated) = match token.strip_prefix(NEGATION_PREFIX) {
            Some(rest) => (rest, true),
            None => (token, false),
        };
        if !is_identifier(atom) {
            return Err(format!("invalid feature name {token:?}"));
        }
        Ok(Literal {
            atom: atom.to_string(),
            negated,
        })
    }

    /// Truth of the literal given the truth of its atom.
    pub fn holds(&self, atom_true: bool) -> bool {
        atom_true != self.negated
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "{NEGATION_PREFIX}{}", self.atom)
        } else {
            f.write_str(&self.atom)
        }
    }
}

/// Lowercase snake case identifier that does not itself carry the negation prefix.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        && !s.starts_with(NEGATION_PREFIX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub direction: Direction,
    pub body: Vec<Literal>,
    pub probability: f64,
    #[serde(default)]
    pub calibration: CalibrationStatus,
}

impl Rule {
    pub fn new(direction: Direction, body: Vec<Literal>, probability: f64) -> Result<Self, PolicyError> {
        let rule = Rule {
            direction,
            body,
            probability,
            calibration: CalibrationStatus::Uncalibrated,
        };
        rule.validate().map_err(PolicyError::InvalidRule)?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.body.is_empty() {
            return Err("empty rule body".into());
        }
        if self.body.len() > MAX_BODY_LEN {
            return Err(format!(
                "rule body has {} literals, at most {MAX_BODY_LEN} allowed",
                self.body.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(format!("probability {} outside [0, 1]", self.probability));
        }
        let mut seen = BTreeSet::new();
        for lit in &self.body {
            if !is_identifier(&lit.atom) {
                return Err(format!("invalid feature name {:?}", lit.atom));
            }
            if !seen.insert(lit) {
                return Err(format!("duplicate literal {lit} in rule body"));
            }
        }
        Ok(())
    }

    /// Order-insensitive identity of the body, used for set semantics.
    pub fn body_key(&self) -> BTreeSet<Literal> {
        self.body.iter().cloned().collect()
    }

    /// Body rendered in the policy format, e.g. `a AND not_b`.
    pub fn body_text(&self) -> String {
        self.body
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" AND ")
    }

    pub fn atoms(&self) -> impl Iterator<Item = &str> {
        self.body.iter().map(|l| l.atom.as_str())
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{:.2}", self.body_text(), self.probability)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub id: String,
    pub iteration: u32,
    pub success_rules: Vec<Rule>,
    pub failure_rules: Vec<Rule>,
}

impl Default for Policy {
    fn default() -> Self {
        Policy::empty("policy")
    }
}

impl Policy {
    pub fn empty(id: impl Into<String>) -> Self {
        Policy {
            id: id.into(),
            iteration: 0,
            success_rules: Vec::new(),
            failure_rules: Vec::new(),
        }
    }

    pub fn rules(&self, direction: Direction) -> &[Rule] {
        match direction {
            Direction::Success => &self.success_rules,
            Direction::Failure => &self.failure_rules,
        }
    }

    pub fn rules_mut(&mut self, direction: Direction) -> &mut Vec<Rule> {
        match direction {
            Direction::Success => &mut self.success_rules,
            Direction::Failure => &mut self.failure_rules,
        }
    }

    pub fn all_rules(&self) -> impl Iterator<Item = &Rule> {
        self.success_rules.iter().chain(self.failure_rules.iter())
    }

    pub fn len(&self) -> usize {
        self.success_rules.len() + self.failure_rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distinct atoms referenced anywhere in the policy, sorted.
    pub fn atoms(&self) -> BTreeSet<String> {
        self.all_rules()
            .flat_map(|r| r.atoms().map(str::to_string))
            .collect()
    }

    /// Appends a rule to the list matching its direction, enforcing set semantics.
    pub fn push(&mut self, rule: Rule) -> Result<(), PolicyError> {
        rule.validate().map_err(PolicyError::InvalidRule)?;
        let key = rule.body_key();
        let list = self.rules_mut(rule.direction);
        if list.iter().any(|r| r.body_key() == key) {
            return Err(PolicyError::InvalidRule(format!(
                "duplicate {} rule body {}",
                rule.direction,
                rule.body_text()
            )));
        }
        list.push(rule);
        Ok(())
    }

    /// Checks every structural invariant of a policy.
    pub fn validate(&self) -> Result<(), PolicyError> {
        for direction in [Direction::Success, Direction::Failure] {
            let mut keys = BTreeSet::new();
            for rule in self.rules(direction) {
                if rule.direction != direction {
                    return Err(PolicyError::InvalidRule(format!(
                        "{} rule {} stored in the {direction} list",
                        rule.direction,
                        rule.body_text()
                    )));
                }
                rule.validate().map_err(PolicyError::InvalidRule)?;
                if !keys.insert(rule.body_key()) {
                    return Err(PolicyError::InvalidRule(format!(
                        "duplicate {direction} rule body {}",
                        rule.body_text()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Union of `self` and `other`; rules of `other` replace rules of `self`
    /// with the same body and direction, new rules are appended in order.
    pub fn merged_with(&self, other: &Policy) -> Policy {
        let mut out = self.clone();
        for rule in other.all_rules() {
            let key = rule.body_key();
            let list = out.rules_mut(rule.direction);
            match list.iter_mut().find(|r| r.body_key() == key) {
                Some(existing) => *existing = rule.clone(),
                None => list.push(rule.clone()),
            }
        }
        out
    }
}

/// One rule line of the policy format, without the section context.
pub fn parse_rule_line(line: &str, direction: Direction) -> Result<Rule, String> {
    let (body, prob) = line
        .rsplit_once(',')
        .ok_or_else(|| "missing ',<probability>' suffix".to_string())?;
    let prob = prob.trim();
    let probability: f64 = prob
        .parse()
        .map_err(|_| format!("invalid probability {prob:?}"))?;
    if !(0.0..=1.0).contains(&probability) {
        return Err(format!("probability {prob} outside [0, 1]"));
    }
    if body.trim().is_empty() {
        return Err("empty rule body".into());
    }
    let body = body
        .split(" AND ")
        .map(Literal::parse)
        .collect::<Result<Vec<_>, _>>()?;
    let rule = Rule {
        direction,
        body,
        probability,
        calibration: CalibrationStatus::Uncalibrated,
    };
    rule.validate()?;
    Ok(rule)
}

fn section_header(line: &str) -> Option<Direction> {
    match line.trim().to_ascii_lowercase().as_str() {
        SUCCESS_HEADER => Some(Direction::Success),
        FAILURE_HEADER => Some(Direction::Failure),
        _ => None,
    }
}

/// Parses the two-section policy format. Line numbers in errors are 1-based.
pub fn parse_policy(text: &str) -> Result<Policy, PolicyError> {
    let mut policy = Policy::default();
    let mut section: Option<Direction> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(dir) = section_header(line) {
            section = Some(dir);
            continue;
        }
        let direction = section.ok_or_else(|| PolicyError::Parse {
            line: line_no,
            message: "rule line before any section header".into(),
        })?;
        let rule = parse_rule_line(line, direction).map_err(|message| PolicyError::Parse {
            line: line_no,
            message,
        })?;
        let key = rule.body_key();
        if policy.rules(direction).iter().any(|r| r.body_key() == key) {
            return Err(PolicyError::Validation {
                line: line_no,
                message: format!("duplicate {direction} rule body {}", rule.body_text()),
            });
        }
        policy.rules_mut(direction).push(rule);
    }
    Ok(policy)
}

pub fn serialize_policy(policy: &Policy) -> String {
    let mut out = String::from("Success rules:\n");
    for rule in &policy.success_rules {
        out.push_str(&rule.to_string());
        out.push('\n');
    }
    out.push_str("\nFailure rules:\n");
    for rule in &policy.failure_rules {
        out.push_str(&rule.to_string());
        out.push('\n');
    }
    out
}

/// Renders a policy as a probabilistic logic program.
///
/// Only atoms referenced by the policy get a fact line; `facts` must cover all
/// of them. Negated literals become negation as failure (`\+atom`) of the fact.
pub fn emit_problog_program(
    policy: &Policy,
    facts: &BTreeMap<String, f64>,
) -> Result<String, PolicyError> {
    let atoms = policy.atoms();
    let missing: Vec<String> = atoms
        .iter()
        .filter(|a| !facts.contains_key(*a))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(PolicyError::MissingFacts(missing));
    }
    let mut out = String::new();
    for atom in &atoms {
        out.push_str(&format!("{}::{}.\n", facts[atom], atom));
    }
    out.push('\n');
    for rule in policy.all_rules() {
        let body = rule
            .body
            .iter()
            .map(|l| {
                if l.negated {
                    format!("\\+{}", l.atom)
                } else {
                    l.atom.clone()
                }
            })
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&format!("{}::{} :- {}.\n", rule.probability, rule.direction, body));
    }
    out.push_str("\nquery(success).\nquery(failure).\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE_POLICY: &str = "Success rules:
num_acquisitions AND career_growth,0.40
perseverance AND vision,0.32

Failure rules:
not_career_growth AND not_num_acquisitions,0.96
not_education_level AND not_education_institution,0.89
";

    #[test]
    fn parses_example_policy() {
        let p = parse_policy(SAMPLE_POLICY).unwrap();
        assert_eq!(p.success_rules.len(), 2);
        assert_eq!(p.failure_rules.len(), 2);
        let probs: Vec<f64> = p.all_rules().map(|r| r.probability).collect();
        assert_eq!(probs, vec![0.40, 0.32, 0.96, 0.89]);
        assert_eq!(
            p.failure_rules[0].body,
            vec![Literal::negative("career_growth"), Literal::negative("num_acquisitions")]
        );
        assert_eq!(p.success_rules[1].body[1], Literal::positive("vision"));
    }

    #[test]
    fn empty_sections_parse_to_empty_policy() {
        let p = parse_policy("Success rules:\n").unwrap();
        assert!(p.is_empty());
        let p = parse_policy("Success rules:\n\nFailure rules:\n").unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn duplicate_literal_rejected() {
        let err = parse_policy("Success rules:\nperseverance AND perseverance,0.5\n").unwrap_err();
        assert!(matches!(err, PolicyError::Parse { line: 2, .. }), "{err:?}");
        assert!(err.to_string().contains("duplicate literal"));
    }

    #[test]
    fn duplicate_body_in_section_rejected() {
        let text = "Success rules:\na AND b,0.5\nb AND a,0.3\n";
        let err = parse_policy(text).unwrap_err();
        assert_eq!(
            err,
            PolicyError::Validation {
                line: 3,
                message: "duplicate success rule body b AND a".into()
            }
        );
        // the same body in different sections is fine
        parse_policy("Success rules:\na AND b,0.5\nFailure rules:\na AND b,0.9\n").unwrap();
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        for (line, expected) in [
            ("a AND b 0.5", "missing"),
            ("a AND b,1.5", "outside"),
            (",0.5", "empty rule body"),
            ("a AND B,0.5", "invalid feature"),
            ("a AND not_,0.5", "invalid feature"),
            ("a,abc", "invalid probability"),
            ("a,NaN", "outside"),
        ] {
            let text = format!("Success rules:\n\n{line}\n");
            match parse_policy(&text) {
                Err(PolicyError::Parse { line: 3, message }) => {
                    assert!(message.contains(expected), "{line}: {message}")
                }
                other => panic!("{line}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn rule_before_header_is_an_error() {
        let err = parse_policy("a,0.5\n").unwrap_err();
        assert!(matches!(err, PolicyError::Parse { line: 1, .. }));
    }

    #[test]
    fn any_decimal_precision_accepted() {
        let p = parse_policy("Success rules:\na,0.123456\nb,1\n").unwrap();
        assert_eq!(p.success_rules[0].probability, 0.123456);
        assert_eq!(p.success_rules[1].probability, 1.0);
    }

    #[test]
    fn serialize_round_trip_and_negation() {
        let p = parse_policy(SAMPLE_POLICY).unwrap();
        let text = serialize_policy(&p);
        assert!(text.contains("not_education_level AND not_education_institution,0.89"));
        assert_eq!(parse_policy(&text).unwrap(), p);
        assert_eq!(text, SAMPLE_POLICY);
    }

    #[test]
    fn serialize_empty_policy() {
        let text = serialize_policy(&Policy::default());
        assert_eq!(text, "Success rules:\n\nFailure rules:\n");
    }

    #[test]
    fn body_length_capped() {
        let body: Vec<Literal> = (0..9).map(|i| Literal::positive(format!("f{i}"))).collect();
        assert!(Rule::new(Direction::Success, body.clone(), 0.5).is_err());
        assert!(Rule::new(Direction::Success, body[..8].to_vec(), 0.5).is_ok());
    }

    #[test]
    fn emits_program_listing() {
        let mut p = Policy::default();
        p.push(
            Rule::new(
                Direction::Success,
                vec![Literal::positive("education"), Literal::positive("work_experience")],
                0.6,
            )
            .unwrap(),
        )
        .unwrap();
        let facts = BTreeMap::from([("education".to_string(), 0.7), ("work_experience".to_string(), 0.2)]);
        let text = emit_problog_program(&p, &facts).unwrap();
        assert_eq!(
            text,
            "0.7::education.\n0.2::work_experience.\n\n0.6::success :- education,work_experience.\n\nquery(success).\nquery(failure).\n"
        );
    }

    #[test]
    fn emit_reports_missing_facts() {
        let p = parse_policy("Success rules:\nperseverance AND vision,0.32\n").unwrap();
        let facts = BTreeMap::from([("perseverance".to_string(), 0.5)]);
        assert_eq!(
            emit_problog_program(&p, &facts).unwrap_err(),
            PolicyError::MissingFacts(vec!["vision".into()])
        );
    }

    #[test]
    fn emit_negates_fact_atoms() {
        let p = parse_policy(SAMPLE_POLICY).unwrap();
        let facts = p.atoms().into_iter().map(|a| (a, 0.5)).collect();
        let text = emit_problog_program(&p, &facts).unwrap();
        assert!(text.contains("0.96::failure :- \\+career_growth,\\+num_acquisitions."));
    }

    #[test]
    fn merge_prefers_other_on_duplicates() {
        let a = parse_policy("Success rules:\na AND b,0.5\nc,0.2\n").unwrap();
        let b = parse_policy("Success rules:\nb AND a,0.7\nd,0.3\nFailure rules:\nnot_a,0.9\n").unwrap();
        let m = a.merged_with(&b);
        assert_eq!(serialize_policy(&m), "Success rules:\nb AND a,0.70\nc,0.20\nd,0.30\n\nFailure rules:\nnot_a,0.90\n");
    }
}
