//! L2-regularized logistic regression over sparse TF-IDF vectors.
//!
//! Training is deterministic full-batch gradient descent from a zero start
//! with step `1/L`, where `L` bounds the Lipschitz constant of the gradient,
//! so the objective never increases between epochs.

use serde::{Deserialize, Serialize};

use crate::corpus::Class;
use crate::embed::SparseVector;
use crate::error::{Error, Result};

/// Probability floor/ceiling for single-class training sets.
pub const PRIOR_CLIP: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbPair {
    pub p_yes: f64,
    pub p_no: f64,
}

impl ProbPair {
    pub fn from_yes(p_yes: f64) -> Self {
        Self {
            p_yes,
            p_no: 1.0 - p_yes,
        }
    }

    pub fn get(&self, cls: Class) -> f64 {
        match cls {
            Class::Yes => self.p_yes,
            Class::No => self.p_no,
        }
    }

    pub fn argmax(&self) -> Class {
        if self.p_yes >= 0.5 {
            Class::Yes
        } else {
            Class::No
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub l2: f64,
    pub max_epochs: usize,
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_epochs: 400,
            class_weighting: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 > 0.0 && self.l2.is_finite()) {
            return Err(Error::Invalid("l2 must be a positive finite number".into()));
        }
        Ok(())
    }
}

/// Anything that can score a document and expose the vector it clusters on.
pub trait ProbabilisticClassifier {
    fn predict_proba(&self, x: &SparseVector) -> Result<ProbPair>;
    fn embedding(&self, x: &SparseVector) -> SparseVector;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: TrainConfig,
    pub version: u64,
    /// Set when training saw a single class; the model then emits this prior.
    pub constant_p_yes: Option<f64>,
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ln(1 + exp(z)) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Per-class example weights `N / (2 N_y)`, or 1 when weighting is off.
pub fn class_weights(examples: &[(&SparseVector, Class)], weighting: bool) -> (f64, f64) {
    if !weighting {
        return (1.0, 1.0);
    }
    let n = examples.len() as f64;
    let n_yes = examples.iter().filter(|(_, c)| c.is_yes()).count() as f64;
    let n_no = n - n_yes;
    let w = |k: f64| if k > 0.0 { n / (2.0 * k) } else { 0.0 };
    (w(n_yes), w(n_no))
}

/// Weighted mean log-loss plus `l2/2 * |w|^2` (bias unpenalized), with its gradient.
pub fn objective(
    examples: &[(&SparseVector, Class)],
    weights: &[f64],
    bias: f64,
    l2: f64,
    class_weights: (f64, f64),
) -> (f64, Vec<f64>, f64) {
    let mut grad = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    let mut loss = 0.0;
    let mut total = 0.0;
    for (x, cls) in examples {
        let c = if cls.is_yes() {
            class_weights.0
        } else {
            class_weights.1
        };
        let z = x.dot_dense(weights) + bias;
        let (target, signed) = if cls.is_yes() { (1.0, -z) } else { (0.0, z) };
        loss += c * softplus(signed);
        let r = c * (logistic(z) - target);
        for (i, v) in x.iter() {
            grad[i] += r * v;
        }
        grad_b += r;
        total += c;
    }
    if total > 0.0 {
        loss /= total;
        grad_b /= total;
        for g in &mut grad {
            *g /= total;
        }
    }
    let mut penalty = 0.0;
    for (g, w) in grad.iter_mut().zip(weights) {
        *g += l2 * w;
        penalty += w * w;
    }
    (loss + 0.5 * l2 * penalty, grad, grad_b)
}

impl Model {
    pub fn train(
        examples: &[(&SparseVector, Class)],
        dim: usize,
        config: &TrainConfig,
        version: u64,
    ) -> Result<Self> {
        Self::train_with_history(examples, dim, config, version).map(|(m, _)| m)
    }

    /// Trains and also returns the objective value before each epoch and after the last.
    pub fn train_with_history(
        examples: &[(&SparseVector, Class)],
        dim: usize,
        config: &TrainConfig,
        version: u64,
    ) -> Result<(Self, Vec<f64>)> {
        config.validate()?;
        if let Some((x, _)) = examples.iter().find(|(x, _)| x.dim() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                actual: x.dim(),
            });
        }
        let n_yes = examples.iter().filter(|(_, c)| c.is_yes()).count();
        if n_yes == 0 || n_yes == examples.len() {
            let prior = if examples.is_empty() {
                0.5
            } else {
                n_yes as f64 / examples.len() as f64
            };
            let p = prior.clamp(PRIOR_CLIP.0, PRIOR_CLIP.1);
            let model = Model {
                weights: vec![0.0; dim],
                bias: (p / (1.0 - p)).ln(),
                config: *config,
                version,
                constant_p_yes: Some(p),
            };
            return Ok((model, Vec::new()));
        }

        let cw = class_weights(examples, config.class_weighting);
        let max_sq = examples
            .iter()
            .map(|(x, _)| x.norm().powi(2) + 1.0)
            .fold(0.0, f64::max);
        let step = 1.0 / (0.25 * max_sq + config.l2);

        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let mut history = Vec::with_capacity(config.max_epochs + 1);
        for _ in 0..config.max_epochs {
            let (loss, grad, grad_b) = objective(examples, &w, b, config.l2, cw);
            history.push(loss);
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi -= step * gi;
            }
            b -= step * grad_b;
        }
        history.push(objective(examples, &w, b, config.l2, cw).0);

        let model = Model {
            weights: w,
            bias: b,
            config: *config,
            version,
            constant_p_yes: None,
        };
        Ok((model, history))
    }

    pub fn is_degenerate(&self) -> bool {
        self.constant_p_yes.is_some()
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &SparseVector) -> Result<f64> {
        if x.dim() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                actual: x.dim(),
            });
        }
        Ok(x.dot_dense(&self.weights) + self.bias)
    }
}

impl ProbabilisticClassifier for Model {
    fn predict_proba(&self, x: &SparseVector) -> Result<ProbPair> {
        let z = self.decision(x)?;
        Ok(ProbPair::from_yes(self.constant_p_yes.unwrap_or_else(|| logistic(z))))
    }

    /// The TF-IDF input is the embedding for this model family.
    fn embedding(&self, x: &SparseVector) -> SparseVector {
        x.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(dense: &[f64]) -> SparseVector {
        SparseVector::from_dense(dense)
    }

    #[test]
    fn separable_points_are_fit() {
        let xs = [v(&[1.0, 0.0]), v(&[0.9, 0.1]), v(&[0.0, 1.0]), v(&[0.1, 0.9])];
        let ys = [Class::Yes, Class::Yes, Class::No, Class::No];
        let ex: Vec<_> = xs.iter().zip(ys).collect();
        let m = Model::train(&ex, 2, &TrainConfig::default(), 1).unwrap();
        for (x, y) in &ex {
            assert_eq!(m.predict_proba(x).unwrap().argmax(), *y);
        }
        assert!(!m.is_degenerate());
    }

    #[test]
    fn single_class_is_degenerate_prior() {
        let xs = [v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let ex: Vec<_> = xs.iter().map(|x| (x, Class::Yes)).collect();
        let m = Model::train(&ex, 2, &TrainConfig::default(), 1).unwrap();
        assert!(m.is_degenerate());
        let p = m.predict_proba(&xs[0]).unwrap();
        assert_eq!(p.p_yes, 0.99);
        assert!((p.p_yes + p.p_no - 1.0).abs() < 1e-12);

        let empty = Model::train(&[], 2, &TrainConfig::default(), 1).unwrap();
        assert_eq!(empty.predict_proba(&xs[0]).unwrap().p_yes, 0.5);
    }

    #[test]
    fn duplicated_examples_give_same_decision_function() {
        let xs = [
            v(&[1.0, 0.0, 0.0]),
            v(&[0.6, 0.8, 0.0]),
            v(&[0.0, 0.0, 1.0]),
            v(&[0.0, 0.6, 0.8]),
            v(&[0.8, 0.0, 0.6]),
        ];
        let ys = [Class::Yes, Class::Yes, Class::No, Class::No, Class::No];
        let once: Vec<_> = xs.iter().zip(ys).collect();
        let twice: Vec<_> = once.iter().chain(once.iter()).copied().collect();
        let cfg = TrainConfig::default();
        let a = Model::train(&once, 3, &cfg, 1).unwrap();
        let b = Model::train(&twice, 3, &cfg, 1).unwrap();
        for i in 0..=4 {
            for j in 0..=4 {
                let probe = v(&[i as f64 / 4.0, j as f64 / 4.0, 0.5]);
                let za = a.decision(&probe).unwrap();
                let zb = b.decision(&probe).unwrap();
                assert!((za - zb).abs() < 1e-6, "{za} vs {zb}");
            }
        }
    }

    #[test]
    fn predict_proba_values() {
        let zero = Model {
            weights: vec![0.0; 3],
            bias: 0.0,
            config: TrainConfig::default(),
            version: 0,
            constant_p_yes: None,
        };
        assert_eq!(zero.predict_proba(&v(&[1.0, 2.0, 3.0])).unwrap().p_yes, 0.5);
        let ten = Model {
            bias: 10.0,
            ..zero.clone()
        };
        let p = ten.predict_proba(&SparseVector::zeros(3)).unwrap();
        // 1 / (1 + e^-10)
        assert!((p.p_yes - 0.999_954_602_131_297_6).abs() < 1e-15);
        assert!(zero.predict_proba(&SparseVector::zeros(2)).is_err());
    }

    #[test]
    fn embedding_is_identity() {
        let m = Model::train(&[], 4, &TrainConfig::default(), 0).unwrap();
        let x = v(&[0.0, 0.6, 0.0, 0.8]);
        assert_eq!(m.embedding(&x), x);
        assert_eq!(m.embedding(&SparseVector::zeros(4)), SparseVector::zeros(4));
        assert_eq!(m.embedding(&x).dim(), 4);
    }

    #[test]
    fn loss_never_increases() {
        let xs: Vec<_> = (0..20)
            .map(|i| {
                let a = (i as f64 * 0.7).sin().abs();
                let b = (i as f64 * 1.3).cos().abs();
                let n = (a * a + b * b).sqrt().max(1e-9);
                v(&[a / n, b / n])
            })
            .collect();
        let ex: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (x, if i % 3 == 0 { Class::Yes } else { Class::No }))
            .collect();
        let (_, hist) = Model::train_with_history(&ex, 2, &TrainConfig::default(), 0).unwrap();
        assert!(hist.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let xs = [v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[0.7, 0.7])];
        let ex: Vec<_> = xs.iter().zip([Class::Yes, Class::No, Class::Yes]).collect();
        let a = Model::train(&ex, 2, &TrainConfig::default(), 3).unwrap();
        let b = Model::train(&ex, 2, &TrainConfig::default(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            l2: 0.0,
            ..TrainConfig::default()
        };
        assert!(Model::train(&[], 1, &cfg, 0).is_err());
    }
}
