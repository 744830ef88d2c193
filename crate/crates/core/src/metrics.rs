//! Evaluation metrics and per-cycle convergence series.
//!
//! Error bars are one standard deviation over seeded bootstrap resamples of
//! the evaluation set. AUC-ROC uses the Mann-Whitney formulation with ties
//! counted as one half; a single-class evaluation set reports `0.5 ± 0.5`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::Thresholds;
use crate::corpus::Class;
use crate::error::{Error, Result};
use crate::seeding;

pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// No positive predictions; precision reported as 0.
    pub precision_undefined: bool,
    /// No positive truths; recall reported as 0.
    pub recall_undefined: bool,
}

pub fn binary_metrics(predicted: &[Class], truth: &[Class]) -> Result<BinaryMetrics> {
    if predicted.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "length mismatch: {} predictions, {} truths",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Invalid("no evaluation points".into()));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (p, t) in predicted.iter().zip(truth) {
        match (p, t) {
            (Class::Yes, Class::Yes) => tp += 1,
            (Class::Yes, Class::No) => fp += 1,
            (Class::No, Class::Yes) => fneg += 1,
            (Class::No, Class::No) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(BinaryMetrics {
        accuracy: ratio(tp + tn, truth.len()),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        precision_undefined: tp + fp == 0,
        recall_undefined: tp + fneg == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Auc {
    pub value: f64,
    pub degenerate: bool,
}

/// Probability that a random positive outscores a random negative.
pub fn auc_roc(scores: &[f64], truth: &[Class]) -> Result<Auc> {
    if scores.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "length mismatch: {} scores, {} truths",
            scores.len(),
            truth.len()
        )));
    }
    let n_pos = truth.iter().filter(|c| c.is_yes()).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(Auc {
            value: 0.5,
            degenerate: true,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of midranks (1-based) of the positives; tied blocks share a rank.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let positives = order[i..=j].iter().filter(|&&k| truth[k].is_yes()).count();
        rank_sum += midrank * positives as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Auc {
        value: u / (n_pos as f64 * n_neg as f64),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
}

impl Estimate {
    pub const DEGENERATE: Estimate = Estimate {
        mean: 0.5,
        half_width: 0.5,
    };
}

/// Mean and population standard deviation of resampled metric values.
pub fn uncertainty(values: &[f64]) -> Estimate {
    match values.len() {
        0 => Estimate::DEGENERATE,
        1 => Estimate {
            mean: values[0],
            half_width: 0.5,
        },
        _ if values.iter().all(|&v| v == values[0]) => Estimate {
            mean: values[0],
            half_width: 0.0,
        },
        n => {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            Estimate {
                mean,
                half_width: var.sqrt().min(0.5),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: Estimate,
    pub precision: Estimate,
    pub recall: Estimate,
    pub auc_roc: Estimate,
    pub yes_count: usize,
    pub no_count: usize,
    pub degenerate_auc: bool,
    pub n_eval: usize,
}

/// Bootstrapped report for probability scores `p_yes` against `truth`;
/// `yes_count`/`no_count` echo the labeled class balance.
pub fn evaluate(
    p_yes: &[f64],
    truth: &[Class],
    yes_count: usize,
    no_count: usize,
    seed: u64,
) -> Result<MetricReport> {
    evaluate_with(p_yes, truth, yes_count, no_count, seed, BOOTSTRAP_RESAMPLES)
}

pub fn evaluate_with(
    p_yes: &[f64],
    truth: &[Class],
    yes_count: usize,
    no_count: usize,
    seed: u64,
    resamples: usize,
) -> Result<MetricReport> {
    if p_yes.len() != truth.len() {
        return Err(Error::Invalid("length mismatch".into()));
    }
    if truth.is_empty() {
        return Err(Error::Invalid("no evaluation points".into()));
    }
    let full_auc = auc_roc(p_yes, truth)?;
    let n = truth.len();
    let mut rng = seeding::rng(seed, &[seeding::stream::METRICS]);
    let (mut acc, mut prec, mut rec, mut aucs) = (vec![], vec![], vec![], vec![]);
    let mut sample_scores = vec![0.0; n];
    let mut sample_truth = vec![Class::No; n];
    let mut sample_pred = vec![Class::No; n];
    for _ in 0..resamples {
        for k in 0..n {
            let i = rng.random_range(0..n);
            sample_scores[k] = p_yes[i];
            sample_truth[k] = truth[i];
            sample_pred[k] = if p_yes[i] >= 0.5 { Class::Yes } else { Class::No };
        }
        let m = binary_metrics(&sample_pred, &sample_truth)?;
        acc.push(m.accuracy);
        prec.push(m.precision);
        rec.push(m.recall);
        let a = auc_roc(&sample_scores, &sample_truth)?;
        if !a.degenerate {
            aucs.push(a.value);
        }
    }
    let auc_roc = if full_auc.degenerate {
        Estimate::DEGENERATE
    } else {
        uncertainty(&aucs)
    };
    Ok(MetricReport {
        accuracy: uncertainty(&acc),
        precision: uncertainty(&prec),
        recall: uncertainty(&rec),
        auc_roc,
        yes_count,
        no_count,
        degenerate_auc: full_auc.degenerate,
        n_eval: n,
    })
}

/// What the engine records after every completed cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub cycle_index: u64,
    pub labels_used: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub model_version: u64,
    pub degenerate_model: bool,
    pub thresholds: Thresholds,
    /// Validation-split AUC of the freshly trained model.
    pub auc: Auc,
    pub report: Option<MetricReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub cycle: u64,
    pub labels: usize,
    pub auc: f64,
}

pub fn convergence_series(history: &[CycleMetrics]) -> Vec<ConvergencePoint> {
    history
        .iter()
        .map(|m| ConvergencePoint {
            cycle: m.cycle_index,
            labels: m.labels_used,
            auc: m.auc.value,
        })
        .collect()
}

pub fn series_to_csv(series: &[ConvergencePoint]) -> String {
    let mut out = String::from("cycle,labels,auc\n");
    for p in series {
        out.push_str(&format!("{},{},{}\n", p.cycle, p.labels, p.auc));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Class::{No as N, Yes as Y};

    #[test]
    fn binary_examples() {
        let m = binary_metrics(&[Y, N, Y], &[Y, N, Y]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall), (1.0, 1.0, 1.0));

        let m = binary_metrics(&[N, N, N, N], &[Y, Y, N, N]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.precision, 0.0);
        assert!(m.precision_undefined);
        assert_eq!(m.recall, 0.0);
        assert!(!m.recall_undefined);

        let m = binary_metrics(&[Y, Y, N, N], &[Y, N, Y, N]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall), (0.5, 0.5, 0.5));

        assert!(binary_metrics(&[Y], &[Y, N]).is_err());
    }

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.3, 0.2];
        assert_eq!(auc_roc(&s, &[Y, Y, N, N]).unwrap().value, 1.0);
        assert_eq!(auc_roc(&s, &[Y, N, Y, N]).unwrap().value, 0.75);
        let d = auc_roc(&s, &[N, N, N, N]).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.value, 0.5);
        assert_eq!(auc_roc(&[0.5, 0.5], &[Y, N]).unwrap().value, 0.5);
    }

    #[test]
    fn uncertainty_examples() {
        let c = uncertainty(&[0.7; 10]);
        assert_eq!((c.mean, c.half_width), (0.7, 0.0));
        let two = uncertainty(&[0.8, 1.0]);
        assert!((two.mean - 0.9).abs() < 1e-15);
        assert!((two.half_width - 0.1).abs() < 1e-15);
        assert_eq!(uncertainty(&[]), Estimate::DEGENERATE);
    }

    #[test]
    fn degenerate_report() {
        let r = evaluate(&[0.1, 0.2, 0.3], &[N, N, N], 0, 3, 1).unwrap();
        assert!(r.degenerate_auc);
        assert_eq!(r.auc_roc, Estimate::DEGENERATE);
        assert_eq!(r.accuracy.mean, 1.0);
    }

    #[test]
    fn report_is_seeded() {
        let s = [0.9, 0.2, 0.6, 0.4, 0.7, 0.1];
        let t = [Y, N, Y, N, N, N];
        let a = evaluate(&s, &t, 2, 4, 5).unwrap();
        let b = evaluate(&s, &t, 2, 4, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.auc_roc.half_width <= 0.5);
        assert!((0.0..=1.0).contains(&a.auc_roc.mean));
    }

    #[test]
    fn series_csv() {
        assert!(convergence_series(&[]).is_empty());
        let pts = [
            ConvergencePoint { cycle: 1, labels: 10, auc: 0.5 },
            ConvergencePoint { cycle: 2, labels: 16, auc: 0.75 },
            ConvergencePoint { cycle: 3, labels: 22, auc: 0.8 },
        ];
        assert_eq!(
            series_to_csv(&pts),
            "cycle,labels,auc\n1,10,0.5\n2,16,0.75\n3,22,0.8\n"
        );
    }

    fn confusion_oracle(p: &[Class], t: &[Class]) -> (f64, f64, f64) {
        let mut m = [[0usize; 2]; 2];
        for (a, b) in p.iter().zip(t) {
            m[a.is_yes() as usize][b.is_yes() as usize] += 1;
        }
        let tp = m[1][1] as f64;
        let acc = (m[1][1] + m[0][0]) as f64 / p.len() as f64;
        let prec = if m[1][0] + m[1][1] == 0 { 0.0 } else { tp / (m[1][0] + m[1][1]) as f64 };
        let rec = if m[0][1] + m[1][1] == 0 { 0.0 } else { tp / (m[0][1] + m[1][1]) as f64 };
        (acc, prec, rec)
    }

    fn classes(n: usize) -> impl Strategy<Value = Vec<Class>> {
        prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { Y } else { N }), n)
    }

    proptest! {
        #[test]
        fn binary_matches_confusion_oracle((p, t) in (1usize..=100).prop_flat_map(|n| (classes(n), classes(n)))) {
            let m = binary_metrics(&p, &t).unwrap();
            let (a, pr, r) = confusion_oracle(&p, &t);
            prop_assert_eq!((m.accuracy, m.precision, m.recall), (a, pr, r));
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            (s, t) in (2usize..60).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), classes(n)))
        ) {
            let a = auc_roc(&s, &t).unwrap();
            let transformed: Vec<f64> = s.iter().map(|x| (x * 0.7).exp() + 3.0).collect();
            let b = auc_roc(&transformed, &t).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-12);
        }

        #[test]
        fn auc_flip_complements(
            (s, t) in (2usize..60).prop_flat_map(|n| (prop::collection::hash_set(-1_000_000i64..1_000_000, n), classes(n)))
        ) {
            let s: Vec<f64> = s.into_iter().map(|x| x as f64).collect();
            let flipped: Vec<Class> = t.iter().map(|c| c.flip()).collect();
            let a = auc_roc(&s, &t).unwrap();
            let b = auc_roc(&s, &flipped).unwrap();
            if !a.degenerate {
                prop_assert!((a.value + b.value - 1.0).abs() < 1e-12);
            }
        }
    }
}
