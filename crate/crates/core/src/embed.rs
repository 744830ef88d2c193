//! TF-IDF vectorization.
//!
//! Tokens are maximal runs of Unicode letters or digits, at least two
//! characters long. Weights are `count * idf` with smoothed
//! `idf = ln((1 + N) / (1 + df)) + 1`, then the vector is L2-normalized.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfidfParams {
    pub min_df: usize,
    pub max_features: usize,
    pub lowercase: bool,
}

impl Default for TfidfParams {
    fn default() -> Self {
        Self {
            min_df: 2,
            max_features: 50_000,
            lowercase: true,
        }
    }
}

pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().nth(1).is_some())
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn new(dim: usize, entries: Vec<(u32, f64)>) -> Result<Self> {
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            if (i as usize) >= dim {
                return Err(Error::Invalid(format!("index {i} out of range for dim {dim}")));
            }
            if indices.last().is_some_and(|&last| last >= i) {
                return Err(Error::Invalid("indices must be strictly increasing".into()));
            }
            if !v.is_finite() {
                return Err(Error::Invalid("weights must be finite".into()));
            }
            indices.push(i);
            values.push(v);
        }
        Ok(Self {
            dim,
            indices,
            values,
        })
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .collect();
        Self::new(values.len(), entries).expect("dense input is well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    /// Squared Euclidean distance to a dense point whose squared norm is known.
    pub fn sq_dist_dense(&self, dense: &[f64], dense_sq_norm: f64) -> f64 {
        let mut d = dense_sq_norm;
        for (i, v) in self.iter() {
            let c = dense[i];
            d += (v - c) * (v - c) - c * c;
        }
        d.max(0.0)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    params: TfidfParams,
    n_docs: usize,
    terms: Vec<String>,
    df: Vec<usize>,
    idf: Vec<f64>,
    lookup: HashMap<String, u32>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.n_docs == other.n_docs
            && self.terms == other.terms
            && self.df == other.df
            && self.idf == other.idf
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    params: TfidfParams,
    n_docs: usize,
    terms: Vec<String>,
    df: Vec<usize>,
    idf: Vec<f64>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let lookup = r
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            params: r.params,
            n_docs: r.n_docs,
            terms: r.terms,
            df: r.df,
            idf: r.idf,
            lookup,
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self {
            params: v.params,
            n_docs: v.n_docs,
            terms: v.terms,
            df: v.df,
            idf: v.idf,
        }
    }
}

impl Vocabulary {
    pub fn fit<'a, I>(texts: I, params: TfidfParams) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for text in texts {
            n_docs += 1;
            let mut tokens = tokenize(text, params.lowercase);
            tokens.sort_unstable();
            tokens.dedup();
            for t in tokens {
                *df.entry(t).or_default() += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::Invalid("cannot fit a vocabulary on an empty corpus".into()));
        }

        let mut kept: Vec<(String, usize)> =
            df.into_iter().filter(|(_, d)| *d >= params.min_df).collect();
        // BTreeMap order makes the stable sort break df ties lexicographically.
        kept.sort_by_key(|&(_, d)| std::cmp::Reverse(d));
        kept.truncate(params.max_features);
        kept.sort_by(|a, b| a.0.cmp(&b.0));

        let n = n_docs as f64;
        let idf = kept
            .iter()
            .map(|(_, d)| ((1.0 + n) / (1.0 + *d as f64)).ln() + 1.0)
            .collect();
        let repr = VocabularyRepr {
            params,
            n_docs,
            df: kept.iter().map(|(_, d)| *d).collect(),
            terms: kept.into_iter().map(|(t, _)| t).collect(),
            idf,
        };
        Ok(repr.into())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn params(&self) -> TfidfParams {
        self.params
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.lookup.get(term).map(|&i| i as usize)
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        self.terms.get(index).map(String::as_str)
    }

    pub fn df(&self, term: &str) -> Option<usize> {
        self.index_of(term).map(|i| self.df[i])
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.idf[i])
    }

    pub fn transform(&self, text: &str) -> SparseVector {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for tok in tokenize(text, self.params.lowercase) {
            if let Some(&i) = self.lookup.get(&tok) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(u32, f64)> = counts
            .into_iter()
            .map(|(i, c)| (i, c * self.idf[i as usize]))
            .collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut entries {
                *w /= norm;
            }
        }
        SparseVector {
            dim: self.len(),
            indices: entries.iter().map(|(i, _)| *i).collect(),
            values: entries.into_iter().map(|(_, w)| w).collect(),
        }
    }
}
