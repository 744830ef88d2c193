//! Label-conditional conformal calibration and set prediction.
//!
//! The conformity score of label `y` for document `x` is `1 - p(y | x)`.
//! For each label, the threshold is the `ceil((n_y + 1)(1 - alpha))`-th
//! smallest validation score among points whose true label is `y`, or `+inf`
//! when that rank exceeds `n_y`. A label enters the prediction set when its
//! score is at or below its threshold, which gives per-label coverage of at
//! least `1 - alpha` under exchangeability.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::ProbPair;
use crate::corpus::Class;
use crate::error::{Error, Result};

/// Slack for `(n + 1)(1 - alpha)` landing a rounding error above an integer.
const RANK_EPS: f64 = 1e-9;

/// Score assigned to a document whose prediction set is empty.
pub const EMPTY_SET_SCORE: f64 = 1.0;

pub fn conformity_score(probs: &ProbPair, cls: Class) -> f64 {
    1.0 - probs.get(cls)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub yes: Vec<f64>,
    pub no: Vec<f64>,
}

impl CalibrationSet {
    /// Scores each validation point against its own true label.
    pub fn from_predictions<I>(points: I) -> Self
    where
        I: IntoIterator<Item = (ProbPair, Class)>,
    {
        let mut cal = Self::default();
        for (p, y) in points {
            cal.push(y, conformity_score(&p, y));
        }
        cal
    }

    pub fn push(&mut self, cls: Class, score: f64) {
        match cls {
            Class::Yes => self.yes.push(score),
            Class::No => self.no.push(score),
        }
    }

    pub fn scores(&self, cls: Class) -> &[f64] {
        match cls {
            Class::Yes => &self.yes,
            Class::No => &self.no,
        }
    }

    pub fn count(&self, cls: Class) -> usize {
        self.scores(cls).len()
    }
}

/// 1-based rank of the conformal quantile among `n` scores; `n + 1` means `+inf`.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    ((x - RANK_EPS).ceil().max(1.0) as usize).min(n + 1)
}

/// The `(1 - alpha)` empirical quantile of `scores ∪ {+inf}`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> f64 {
    let k = conformal_rank(scores.len(), alpha);
    if k > scores.len() {
        return f64::INFINITY;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[k - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub alpha: f64,
    #[serde(with = "extended_f64")]
    pub yes: f64,
    #[serde(with = "extended_f64")]
    pub no: f64,
}

impl Thresholds {
    pub fn get(&self, cls: Class) -> f64 {
        match cls {
            Class::Yes => self.yes,
            Class::No => self.no,
        }
    }

    /// Thresholds that admit every label.
    pub fn permissive(alpha: f64) -> Self {
        Self {
            alpha,
            yes: f64::INFINITY,
            no: f64::INFINITY,
        }
    }
}

pub fn calibrate(cal: &CalibrationSet, alpha: f64) -> Result<Thresholds> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(Thresholds {
        alpha,
        yes: conformal_quantile(&cal.yes, alpha),
        no: conformal_quantile(&cal.no, alpha),
    })
}

/// Subset of `{yes, no}`; serialized as a list of class names.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Class>", into = "Vec<Class>")]
pub struct PredictionSet {
    yes: bool,
    no: bool,
}

impl PredictionSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn both() -> Self {
        Self { yes: true, no: true }
    }

    pub fn insert(&mut self, cls: Class) {
        match cls {
            Class::Yes => self.yes = true,
            Class::No => self.no = true,
        }
    }

    pub fn contains(&self, cls: Class) -> bool {
        match cls {
            Class::Yes => self.yes,
            Class::No => self.no,
        }
    }

    pub fn len(&self) -> usize {
        self.yes as usize + self.no as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_subset(&self, other: &PredictionSet) -> bool {
        Class::ALL
            .iter()
            .all(|&c| !self.contains(c) || other.contains(c))
    }

    pub fn iter(&self) -> impl Iterator<Item = Class> + '_ {
        Class::ALL.into_iter().filter(|&c| self.contains(c))
    }
}

impl From<Vec<Class>> for PredictionSet {
    fn from(v: Vec<Class>) -> Self {
        let mut s = Self::empty();
        for c in v {
            s.insert(c);
        }
        s
    }
}

impl From<PredictionSet> for Vec<Class> {
    fn from(s: PredictionSet) -> Self {
        s.iter().collect()
    }
}

pub fn prediction_set(probs: &ProbPair, th: &Thresholds) -> PredictionSet {
    let mut set = PredictionSet::empty();
    for cls in Class::ALL {
        if conformity_score(probs, cls) <= th.get(cls) {
            set.insert(cls);
        }
    }
    set
}

/// Mean conformity score over the labels in the set; an empty set scores 1.0.
pub fn uncertainty_score(probs: &ProbPair, set: &PredictionSet) -> f64 {
    if set.is_empty() {
        return EMPTY_SET_SCORE;
    }
    set.iter().map(|c| conformity_score(probs, c)).sum::<f64>() / set.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub probs: ProbPair,
    pub set: PredictionSet,
    pub s_x: f64,
}

impl PredictionRecord {
    pub fn new(doc_id: impl Into<String>, probs: ProbPair, th: &Thresholds) -> Self {
        let set = prediction_set(&probs, th);
        Self {
            doc_id: doc_id.into(),
            s_x: uncertainty_score(&probs, &set),
            probs,
            set,
        }
    }
}

/// Per-class fraction of records whose set contains the true label.
/// Classes without any true instance are absent from the result.
pub fn empirical_coverage(records: &[(PredictionRecord, Class)]) -> BTreeMap<Class, f64> {
    let mut hits: BTreeMap<Class, (usize, usize)> = BTreeMap::new();
    for (rec, truth) in records {
        let e = hits.entry(*truth).or_default();
        e.1 += 1;
        if rec.set.contains(*truth) {
            e.0 += 1;
        }
    }
    hits.into_iter()
        .map(|(c, (h, n))| (c, h as f64 / n as f64))
        .collect()
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"` and `"nan"`.
pub mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("invalid float {other:?}"))),
            },
        }
    }
}
