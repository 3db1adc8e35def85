//! Founder records and everything needed to turn them into model inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{Direction, Literal};

/// Trait probabilities are clipped to this range so no world is unreachable.
pub const TRAIT_CLIP: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}, column {column}: non-numeric value {value:?}")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("row {row}: label must be 0 or 1, got {value:?}")]
    Label { row: usize, value: String },
    #[error("empty training set")]
    EmptyTraining,
    #[error("unsupported fold count {0}; only 4 folds are supported")]
    FoldCount(usize),
    #[error("insufficient records: {0}")]
    Insufficient(String),
    #[error("invalid generator config: {0}")]
    Generator(String),
    #[error("unreachable prevalence: {0}")]
    UnreachablePrevalence(String),
}

/// Ordered list of feature names every record must carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary(Vec<String>);

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Result<Self, DataError> {
        let mut seen = std::collections::BTreeSet::new();
        for n in &names {
            if !crate::policy::is_identifier(n) {
                return Err(DataError::Schema(format!("invalid feature name {n:?}")));
            }
            if !seen.insert(n) {
                return Err(DataError::Schema(format!("duplicate feature {n}")));
            }
        }
        Ok(Vocabulary(names))
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.iter().any(|n| n == name)
    }

    /// Vocabulary taken from the header of a dataset file (`id,label,...`).
    pub fn from_csv_header(path: &Path) -> Result<Self, DataError> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let mut cols = headers.iter();
        if cols.next() != Some("id") || cols.next() != Some("label") {
            return Err(DataError::Schema("header must start with id,label".into()));
        }
        Vocabulary::new(cols.map(str::to_string).collect())
    }
}

/// The 52-feature vocabulary shipped as the default configuration.
pub fn default_vocabulary() -> Vocabulary {
    const NAMES: [&str; 52] = [
        "education_level",
        "education_institution",
        "number_of_work_experience",
        "vc_experience",
        "perseverance",
        "risk_tolerance",
        "num_acquisitions",
        "career_growth",
        "vision",
        "ceo_experience",
        "years_of_experience",
        "big_tech_experience",
        "startup_experience",
        "num_prior_startups",
        "prior_exit",
        "technical_background",
        "industry_expertise",
        "leadership_experience",
        "management_experience",
        "international_experience",
        "languages",
        "board_experience",
        "advisor_roles",
        "patents",
        "publications",
        "awards",
        "media_presence",
        "network_strength",
        "investor_connections",
        "accelerator_participation",
        "stem_degree",
        "mba",
        "top_university",
        "elite_employer",
        "consulting_experience",
        "finance_experience",
        "sales_experience",
        "marketing_experience",
        "product_management",
        "engineering_lead",
        "research_experience",
        "government_experience",
        "military_service",
        "nonprofit_experience",
        "athletic_achievement",
        "open_source_contributions",
        "social_media_presence",
        "speaking_engagements",
        "team_building",
        "communication_skills",
        "adaptability",
        "domain_switches",
    ];
    Vocabulary(NAMES.iter().map(|s| s.to_string()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FounderRecord {
    pub id: String,
    pub features: IndexMap<String, f64>,
    pub label: Direction,
}

impl FounderRecord {
    pub fn is_success(&self) -> bool {
        self.label == Direction::Success
    }
}

fn label_code(label: Direction) -> &'static str {
    match label {
        Direction::Success => "1",
        Direction::Failure => "0",
    }
}

/// Reads `id,label,<features...>` rows; columns must match `vocab` exactly (any order).
pub fn read_dataset<R: Read>(reader: R, vocab: &Vocabulary) -> Result<Vec<FounderRecord>, DataError> {
    let mut reader = csv::Reader::from_reader(reader);
    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 2 || cols[0] != "id" || cols[1] != "label" {
        return Err(DataError::Schema("header must start with id,label".into()));
    }
    let feature_cols = &cols[2..];
    let missing: Vec<&str> = vocab
        .names()
        .iter()
        .map(String::as_str)
        .filter(|n| !feature_cols.contains(n))
        .collect();
    if !missing.is_empty() {
        return Err(DataError::Schema(format!("missing columns: {}", missing.join(", "))));
    }
    let extra: Vec<&str> = feature_cols.iter().copied().filter(|c| !vocab.contains(c)).collect();
    if !extra.is_empty() {
        return Err(DataError::Schema(format!("unexpected columns: {}", extra.join(", "))));
    }
    if feature_cols.len() != vocab.len() {
        return Err(DataError::Schema("duplicate feature columns".into()));
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        // 1-based data row number, excluding the header
        let row_no = i + 1;
        let label = match row.get(1).map(str::trim) {
            Some("1") => Direction::Success,
            Some("0") => Direction::Failure,
            other => {
                return Err(DataError::Label {
                    row: row_no,
                    value: other.unwrap_or("").to_string(),
                })
            }
        };
        let mut values = BTreeMap::new();
        for (col, cell) in feature_cols.iter().zip(row.iter().skip(2)) {
            let v: f64 = cell.trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                DataError::NonNumeric {
                    row: row_no,
                    column: col.to_string(),
                    value: cell.to_string(),
                }
            })?;
            values.insert(*col, v);
        }
        let features = vocab.names().iter().map(|n| (n.clone(), values[n.as_str()])).collect();
        records.push(FounderRecord {
            id: row.get(0).unwrap_or("").to_string(),
            features,
            label,
        });
    }
    Ok(records)
}

pub fn load_dataset(path: &Path, vocab: &Vocabulary) -> Result<Vec<FounderRecord>, DataError> {
    read_dataset(std::fs::File::open(path)?, vocab)
}

pub fn write_dataset<W: Write>(writer: W, records: &[FounderRecord], vocab: &Vocabulary) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend(vocab.names().iter().cloned());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.id.clone(), label_code(r.label).to_string()];
        for name in vocab.names() {
            let v = r
                .features
                .get(name)
                .ok_or_else(|| DataError::Schema(format!("record {} lacks feature {name}", r.id)))?;
            row.push(v.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-feature (min, max) observed on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTable {
    pub ranges: IndexMap<String, (f64, f64)>,
}

impl NormalizationTable {
    pub fn fit(training: &[FounderRecord]) -> Result<Self, DataError> {
        let first = training.first().ok_or(DataError::EmptyTraining)?;
        let mut ranges: IndexMap<String, (f64, f64)> =
            first.features.iter().map(|(k, &v)| (k.clone(), (v, v))).collect();
        for r in &training[1..] {
            for (k, range) in ranges.iter_mut() {
                let v = *r
                    .features
                    .get(k)
                    .ok_or_else(|| DataError::Schema(format!("record {} lacks feature {k}", r.id)))?;
                range.0 = range.0.min(v);
                range.1 = range.1.max(v);
            }
        }
        Ok(NormalizationTable { ranges })
    }

    /// Min-max scaling into [0, 1], clipped; constant features map to 0.5.
    pub fn normalize_value(&self, feature: &str, value: f64) -> f64 {
        match self.ranges.get(feature) {
            Some(&(lo, hi)) if hi > lo => ((value - lo) / (hi - lo)).clamp(0.0, 1.0),
            Some(_) => 0.5,
            None => value.clamp(0.0, 1.0),
        }
    }

    pub fn apply(&self, record: &FounderRecord) -> FounderRecord {
        FounderRecord {
            id: record.id.clone(),
            features: record
                .features
                .iter()
                .map(|(k, &v)| (k.clone(), self.normalize_value(k, v)))
                .collect(),
            label: record.label,
        }
    }
}

/// Fits the table on `training` and applies it to `records`.
pub fn normalize_features(
    records: &[FounderRecord],
    training: &[FounderRecord],
) -> Result<(Vec<FounderRecord>, NormalizationTable), DataError> {
    let table = NormalizationTable::fit(training)?;
    Ok((records.iter().map(|r| table.apply(r)).collect(), table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitProfile {
    pub probabilities: BTreeMap<String, f64>,
}

/// Trait probability of a normalized feature value.
pub fn trait_probability(normalized: f64) -> f64 {
    normalized.clamp(TRAIT_CLIP.0, TRAIT_CLIP.1)
}

pub fn trait_probabilities(record: &FounderRecord) -> TraitProfile {
    TraitProfile {
        probabilities: record
            .features
            .iter()
            .map(|(k, &v)| (k.clone(), trait_probability(v)))
            .collect(),
    }
}

/// Assignment of the four folds to training, validation and test roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub train_folds: [usize; 2],
    pub validation_fold: usize,
    pub test_fold: usize,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let mut roles = vec![self.train_folds[0], self.train_folds[1], self.validation_fold, self.test_fold];
        roles.sort_unstable();
        if roles != [0, 1, 2, 3] {
            return Err(DataError::Schema(format!("partition {self} does not cover folds 0..3 exactly once")));
        }
        Ok(())
    }
}

impl fmt::Display for PartitionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "train={}+{} val={} test={}",
            self.train_folds[0], self.train_folds[1], self.validation_fold, self.test_fold
        )
    }
}

/// All 12 ways to pick two training folds, then a validation fold among the rest.
pub fn enumerate_partitions(n_folds: usize) -> Result<Vec<PartitionSpec>, DataError> {
    if n_folds != 4 {
        return Err(DataError::FoldCount(n_folds));
    }
    let mut out = Vec::with_capacity(12);
    for a in 0..n_folds {
        for b in a + 1..n_folds {
            let rest: Vec<usize> = (0..n_folds).filter(|f| *f != a && *f != b).collect();
            for (v, t) in [(rest[0], rest[1]), (rest[1], rest[0])] {
                out.push(PartitionSpec {
                    train_folds: [a, b],
                    validation_fold: v,
                    test_fold: t,
                });
            }
        }
    }
    Ok(out)
}

/// Stratified fold assignment: each label class is shuffled and dealt round robin.
pub fn assign_folds(records: &[FounderRecord], n_folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; records.len()];
    let mut cursor = 0;
    for label in [Direction::Success, Direction::Failure] {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == label).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            folds[i] = cursor % n_folds;
            cursor += 1;
        }
    }
    folds
}

/// Records with a fixed fold assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedDataset {
    pub records: Vec<FounderRecord>,
    pub folds: Vec<usize>,
    pub n_folds: usize,
}

impl FoldedDataset {
    pub fn new(records: Vec<FounderRecord>, n_folds: usize, seed: u64) -> Result<Self, DataError> {
        if n_folds != 4 {
            return Err(DataError::FoldCount(n_folds));
        }
        let folds = assign_folds(&records, n_folds, seed);
        Ok(FoldedDataset { records, folds, n_folds })
    }

    /// Records of fold `k` in data order.
    pub fn fold(&self, k: usize) -> Vec<FounderRecord> {
        self.records
            .iter()
            .zip(&self.folds)
            .filter(|(_, &f)| f == k)
            .map(|(r, _)| r.clone())
            .collect()
    }

    /// A view that logs which folds were read through it.
    pub fn view(&self) -> FoldView<'_> {
        FoldView {
            data: self,
            accessed: Mutex::new(BTreeSet::new()),
        }
    }
}

/// Access-logging window onto a [`FoldedDataset`].
#[derive(Debug)]
pub struct FoldView<'a> {
    data: &'a FoldedDataset,
    accessed: Mutex<BTreeSet<usize>>,
}

impl FoldView<'_> {
    pub fn fold(&self, k: usize) -> Vec<FounderRecord> {
        self.accessed.lock().expect("fold log poisoned").insert(k);
        self.data.fold(k)
    }

    pub fn folds(&self, ks: &[usize]) -> Vec<FounderRecord> {
        ks.iter().flat_map(|&k| self.fold(k)).collect()
    }

    pub fn accessed(&self) -> BTreeSet<usize> {
        self.accessed.lock().expect("fold log poisoned").clone()
    }
}

/// Splits `records` into prevalence-preserving batches for one epoch.
///
/// Every batch holds `round(batch_size * prevalence)` positives; the number of
/// batches is limited by whichever class runs out first. Returned values are
/// indices into `records`.
pub fn sample_batches(
    records: &[FounderRecord],
    batch_size: usize,
    prevalence: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size == 0 || !(0.0..=1.0).contains(&prevalence) {
        return Err(DataError::Insufficient(format!(
            "invalid batch size {batch_size} or prevalence {prevalence}"
        )));
    }
    let n_pos = (batch_size as f64 * prevalence).round() as usize;
    let n_neg = batch_size - n_pos;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..records.len()).filter(|&i| records[i].is_success()).collect();
    let mut neg: Vec<usize> = (0..records.len()).filter(|&i| !records[i].is_success()).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let by_pos = pos.len().checked_div(n_pos).unwrap_or(usize::MAX);
    let by_neg = neg.len().checked_div(n_neg).unwrap_or(usize::MAX);
    let n_batches = by_pos.min(by_neg);
    if n_batches == 0 || n_batches == usize::MAX {
        return Err(DataError::Insufficient(format!(
            "need {n_pos} positives and {n_neg} negatives per batch, have {} and {}",
            pos.len(),
            neg.len()
        )));
    }
    Ok((0..n_batches)
        .map(|b| {
            let mut batch: Vec<usize> = pos[b * n_pos..(b + 1) * n_pos]
                .iter()
                .chain(&neg[b * n_neg..(b + 1) * n_neg])
                .copied()
                .collect();
            batch.shuffle(&mut rng);
            batch
        })
        .collect())
}

/// Categorical marginal of one synthetic feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMarginal {
    pub name: String,
    pub levels: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FeatureMarginal {
    fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| DataError::Generator(format!("feature {}: {m}", self.name));
        if self.levels.is_empty() || self.levels.len() != self.weights.len() {
            return Err(bad("levels and weights must be nonempty and of equal length"));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(bad("weights must be nonnegative with a positive sum"));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("levels must be strictly increasing"));
        }
        Ok(())
    }

    /// Level at which the cumulative weight first reaches one half.
    pub fn median(&self) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let mut acc = 0.0;
        for (level, w) in self.levels.iter().zip(&self.weights) {
            acc += w / total;
            if acc >= 0.5 {
                return *level;
            }
        }
        *self.levels.last().expect("validated")
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (level, w) in self.levels.iter().zip(&self.weights) {
            if u < *w {
                return *level;
            }
            u -= w;
        }
        *self.levels.last().expect("validated")
    }
}

/// A rule planted in synthetic data. A literal holds when the feature value
/// lies strictly above the marginal's median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub direction: Direction,
    pub body: Vec<String>,
    pub probability: f64,
}

impl PlantedRule {
    pub fn literals(&self) -> Result<Vec<Literal>, DataError> {
        self.body
            .iter()
            .map(|t| Literal::parse(t).map_err(DataError::Generator))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub prevalence: f64,
    #[serde(default = "default_id_prefix")]
    pub id_prefix: String,
    pub features: Vec<FeatureMarginal>,
    #[serde(default)]
    pub planted: Vec<PlantedRule>,
}

fn default_id_prefix() -> String {
    "founder".into()
}

impl GeneratorConfig {
    pub fn vocabulary(&self) -> Result<Vocabulary, DataError> {
        Vocabulary::new(self.features.iter().map(|f| f.name.clone()).collect())
    }

    /// 52 features matching [`default_vocabulary`], with two planted success
    /// rules and one planted failure rule.
    pub fn default_founders(n: usize) -> Self {
        let vocab = default_vocabulary();
        let features = vocab
            .names()
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let (levels, weights) = match name.as_str() {
                    "vc_experience" | "num_acquisitions" | "career_growth" => (vec![0.0, 1.0], vec![0.75, 0.25]),
                    "perseverance" => (vec![0.0, 1.0, 2.0, 3.0], vec![0.45, 0.30, 0.15, 0.10]),
                    "education_level" => (vec![0.0, 1.0, 2.0, 3.0], vec![0.15, 0.45, 0.28, 0.12]),
                    _ => match i % 3 {
                        0 => (vec![0.0, 1.0], vec![0.7, 0.3]),
                        1 => (vec![0.0, 1.0, 2.0], vec![0.3, 0.4, 0.3]),
                        _ => (vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![0.1, 0.2, 0.4, 0.2, 0.1]),
                    },
                };
                FeatureMarginal {
                    name: name.clone(),
                    levels,
                    weights,
                }
            })
            .collect();
        let planted = vec![
            PlantedRule {
                direction: Direction::Success,
                body: vec!["vc_experience".into(), "num_acquisitions".into()],
                probability: 0.7,
            },
            PlantedRule {
                direction: Direction::Success,
                body: vec!["perseverance".into(), "career_growth".into()],
                probability: 0.6,
            },
            PlantedRule {
                direction: Direction::Failure,
                body: vec!["not_vc_experience".into(), "not_perseverance".into()],
                probability: 1.0,
            },
        ];
        GeneratorConfig {
            n,
            prevalence: 0.10,
            id_prefix: default_id_prefix(),
            features,
            planted,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.n == 0 {
            return Err(DataError::Generator("n must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.prevalence) {
            return Err(DataError::Generator(format!("prevalence {} outside [0, 1]", self.prevalence)));
        }
        self.vocabulary()?;
        for f in &self.features {
            f.validate()?;
        }
        for rule in &self.planted {
            if !(0.0..=1.0).contains(&rule.probability) {
                return Err(DataError::Generator(format!("planted probability {} outside [0, 1]", rule.probability)));
            }
            let lits = rule.literals()?;
            if lits.is_empty() {
                return Err(DataError::Generator("planted rule with empty body".into()));
            }
            for l in &lits {
                if !self.features.iter().any(|f| f.name == l.atom) {
                    return Err(DataError::Generator(format!("planted rule references unknown feature {}", l.atom)));
                }
            }
        }
        Ok(())
    }
}

/// Generated records together with the config that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub config: GeneratorConfig,
    pub seed: u64,
    /// Success probability of records matched by no planted success rule,
    /// solved so the expected prevalence equals the target.
    pub leak_rate: f64,
    pub label_attempts: usize,
    #[serde(skip)]
    pub records: Vec<FounderRecord>,
}

const MAX_LABEL_ATTEMPTS: usize = 10_000;

/// Samples features from their marginals, then labels.
///
/// A record's success probability is the noisy-OR of the planted success rules
/// it matches (a leak rate when it matches none), scaled by `1 - q` for every
/// matching failure rule of probability `q`. The leak rate is solved so the
/// expected prevalence hits the target, and label draws are repeated until the
/// realized prevalence is within half a percentage point of it.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<SyntheticDataset, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let medians: Vec<f64> = config.features.iter().map(FeatureMarginal::median).collect();
    let width = config.n.to_string().len();

    let mut records = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let features: IndexMap<String, f64> = config
            .features
            .iter()
            .map(|f| (f.name.clone(), f.sample(&mut rng)))
            .collect();
        records.push(FounderRecord {
            id: format!("{}_{:0width$}", config.id_prefix, i + 1),
            features,
            label: Direction::Failure,
        });
    }

    let planted: Vec<(Direction, Vec<(usize, bool)>, f64)> = config
        .planted
        .iter()
        .map(|r| {
            let body = r
                .literals()?
                .into_iter()
                .map(|l| {
                    let idx = config.features.iter().position(|f| f.name == l.atom).expect("validated");
                    (idx, l.negated)
                })
                .collect();
            Ok((r.direction, body, r.probability))
        })
        .collect::<Result<_, DataError>>()?;

    // success probability per record as (matched, value, failure multiplier)
    let parts: Vec<(bool, f64, f64)> = records
        .iter()
        .map(|rec| {
            let values: Vec<f64> = rec.features.values().copied().collect();
            let mut none_fire = 1.0;
            let mut matched = false;
            let mut keep = 1.0;
            for (dir, body, p) in &planted {
                let fires = body.iter().all(|&(i, neg)| (values[i] > medians[i]) != neg);
                if !fires {
                    continue;
                }
                match dir {
                    Direction::Success => {
                        matched = true;
                        none_fire *= 1.0 - p;
                    }
                    Direction::Failure => keep *= 1.0 - p,
                }
            }
            (matched, 1.0 - none_fire, keep)
        })
        .collect();

    let n = config.n as f64;
    let fixed: f64 = parts.iter().filter(|p| p.0).map(|p| p.1 * p.2).sum::<f64>() / n;
    let slope: f64 = parts.iter().filter(|p| !p.0).map(|p| p.2).sum::<f64>() / n;
    let leak_rate = if slope > 0.0 {
        (config.prevalence - fixed) / slope
    } else if (fixed - config.prevalence).abs() <= 0.005 {
        0.0
    } else {
        f64::NAN
    };
    if !(-1e-12..=1.0 + 1e-12).contains(&leak_rate) {
        return Err(DataError::UnreachablePrevalence(format!(
            "planted rules give an expected prevalence between {:.4} and {:.4}, target {}",
            fixed,
            fixed + slope,
            config.prevalence
        )));
    }
    let leak_rate = leak_rate.clamp(0.0, 1.0);
    let probs: Vec<f64> = parts
        .iter()
        .map(|&(matched, q, keep)| if matched { q * keep } else { leak_rate * keep })
        .collect();

    let target = config.prevalence * n;
    let tolerance = (0.005 * n).max(0.5);
    for attempt in 1..=MAX_LABEL_ATTEMPTS {
        let draws: Vec<bool> = probs.iter().map(|&p| rng.gen::<f64>() < p).collect();
        let positives = draws.iter().filter(|d| **d).count() as f64;
        if (positives - target).abs() <= tolerance {
            for (rec, success) in records.iter_mut().zip(draws) {
                rec.label = if success { Direction::Success } else { Direction::Failure };
            }
            return Ok(SyntheticDataset {
                config: config.clone(),
                seed,
                leak_rate,
                label_attempts: attempt,
                records,
            });
        }
    }
    Err(DataError::UnreachablePrevalence(format!(
        "no label draw within ±0.5 percentage points of {} after {MAX_LABEL_ATTEMPTS} attempts",
        config.prevalence
    )))
}

fn humanize(name: &str) -> String {
    name.replace('_', " ")
}

fn number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

fn feature_phrase(name: &str, value: f64) -> String {
    match name {
        "education_level" => match value.round() as i64 {
            i64::MIN..=0 => "has no university degree".into(),
            1 => "holds a bachelor's degree".into(),
            2 => "holds a master's degree".into(),
            _ => "holds a doctoral degree".into(),
        },
        "vc_experience" if value <= 0.0 => "has no venture capital experience".into(),
        "vc_experience" => format!("has venture capital experience (level {})", number(value)),
        "number_of_work_experience" => format!("has held {} prior positions", number(value)),
        "num_acquisitions" if value <= 0.0 => "has not been involved in any acquisitions".into(),
        "num_acquisitions" => format!("has been involved in {} acquisitions", number(value)),
        "num_prior_startups" => format!("has founded {} prior startups", number(value)),
        _ => format!("{} rated {}", humanize(name), number(value)),
    }
}

/// Anonymous textual profile: one phrase per feature, in record order. The id is never included.
pub fn render_profile(record: &FounderRecord) -> String {
    let mut out = String::new();
    for (name, &value) in &record.features {
        out.push_str("- ");
        out.push_str(&feature_phrase(name, value));
        out.push('\n');
    }
    out
}
