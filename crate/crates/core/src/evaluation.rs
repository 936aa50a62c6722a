//! Per-class, per-domain precision/recall/F1 reporting plus the
//! prediction-probability statistical tests (two-sample t-test and
//! Kruskal-Wallis H-test).
//!
//! Metrics come from exact confusion counts. The zero-division convention
//! sets precision/recall/F1 to 0 and flags the event. Test p-values use the
//! Student-t and chi-square CDFs (regularized incomplete beta/gamma).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::corpus::Domain;
use crate::trainer::{EncodedItem, Model, TrainError};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("contract violation: {0}")]
    Contract(String),
}

// ---------------------------------------------------------------------------
// Classification report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// True when a zero denominator forced any metric to 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionReport {
    /// rows: truth (0 = fake, 1 = true); cols: prediction.
    pub confusion: [[usize; 2]; 2],
    /// Metrics for class 0 (fake) and class 1 (true).
    pub classes: [ClassMetrics; 2],
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainReport {
    pub domain: Domain,
    #[serde(flatten)]
    pub report: ConfusionReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub article_id: String,
    pub domain: Domain,
    pub label: u8,
    pub predicted: u8,
    /// Max-softmax probability of the predicted label, in [0.5, 1].
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub pooled: ConfusionReport,
    pub domains: Vec<DomainReport>,
    pub predictions: Vec<PredictionRecord>,
}

fn confusion_report(confusion: [[usize; 2]; 2]) -> ConfusionReport {
    let mut classes = Vec::with_capacity(2);
    for c in 0..2 {
        let tp = confusion[c][c];
        let fp = confusion[1 - c][c];
        let fn_ = confusion[c][1 - c];
        let support = tp + fn_;
        let mut zero_division = false;
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            zero_division = true;
            0.0
        };
        let recall = if support > 0 {
            tp as f64 / support as f64
        } else {
            zero_division = true;
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            zero_division = true;
            0.0
        };
        classes.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
            zero_division,
        });
    }
    let classes: [ClassMetrics; 2] = [classes[0].clone(), classes[1].clone()];
    let macro_f1 = (classes[0].f1 + classes[1].f1) / 2.0;
    ConfusionReport {
        confusion,
        classes,
        macro_f1,
    }
}

/// Evaluate a model over encoded articles: exact confusion counts per
/// domain and pooled, plus per-article predictions. Deterministic.
pub fn evaluate(model: &Model, items: &[EncodedItem]) -> Result<EvalReport, TrainError> {
    let mut predictions = Vec::with_capacity(items.len());
    let mut pooled = [[0usize; 2]; 2];
    let mut by_domain: Vec<(Domain, [[usize; 2]; 2])> = Vec::new();
    for item in items {
        let (probs, _) = model.predict(&item.article)?;
        let predicted: u8 = if probs[1] >= probs[0] { 1 } else { 0 };
        let probability = probs[predicted as usize];
        pooled[item.label as usize][predicted as usize] += 1;
        match by_domain.iter_mut().find(|(d, _)| *d == item.domain) {
            Some((_, m)) => m[item.label as usize][predicted as usize] += 1,
            None => {
                let mut m = [[0usize; 2]; 2];
                m[item.label as usize][predicted as usize] += 1;
                by_domain.push((item.domain, m));
            }
        }
        predictions.push(PredictionRecord {
            article_id: item.article_id.clone(),
            domain: item.domain,
            label: item.label,
            predicted,
            probability,
        });
    }
    by_domain.sort_by_key(|(d, _)| *d);
    Ok(EvalReport {
        pooled: confusion_report(pooled),
        domains: by_domain
            .into_iter()
            .map(|(domain, m)| DomainReport {
                domain,
                report: confusion_report(m),
            })
            .collect(),
        predictions,
    })
}

impl EvalReport {
    /// One CSV row per evaluation, columns `domain_class_metric`, shaped
    /// like the published per-domain results tables.
    pub fn table_csv(&self, model_name: &str, setup_name: &str) -> String {
        let mut header = String::from("model,setup");
        let mut row = format!("{model_name},{setup_name}");
        for d in &self.domains {
            for (class, label) in [(0usize, "fake"), (1, "true")] {
                for metric in ["precision", "recall", "f1"] {
                    header.push_str(&format!(",{}_{label}_{metric}", d.domain.name()));
                    let m = &d.report.classes[class];
                    let value = match metric {
                        "precision" => m.precision,
                        "recall" => m.recall,
                        _ => m.f1,
                    };
                    row.push_str(&format!(",{value:.6}"));
                }
            }
        }
        format!("{header}\n{row}\n")
    }
}

/// Max-softmax probabilities of the predicted labels, optionally filtered
/// by domain; one value per article, each in [0.5, 1].
pub fn probability_distribution(
    model: &Model,
    items: &[EncodedItem],
    domain: Option<Domain>,
) -> Result<Vec<f64>, TrainError> {
    let mut out = Vec::new();
    for item in items {
        if let Some(d) = domain {
            if item.domain != d {
                continue;
            }
        }
        let (probs, _) = model.predict(&item.article)?;
        out.push(if probs[1] >= probs[0] { probs[1] } else { probs[0] });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Statistical tests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestVariant {
    /// Pooled-variance Student t-test (equal variances assumed).
    Pooled,
    /// Welch's t-test (unequal variances).
    Welch,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Two-sample t-test with a two-sided p-value from the Student-t CDF.
pub fn two_sample_t_test(
    a: &[f64],
    b: &[f64],
    variant: TTestVariant,
) -> Result<TestResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::Contract(
            "t-test needs at least 2 observations per sample".into(),
        ));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (m1, m2) = (mean(a), mean(b));
    let (v1, v2) = (sample_variance(a, m1), sample_variance(b, m2));
    let (t, df) = match variant {
        TTestVariant::Pooled => {
            let df = n1 + n2 - 2.0;
            let pooled = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / df;
            if pooled <= 0.0 {
                if m1 == m2 {
                    return Ok(TestResult {
                        statistic: 0.0,
                        p_value: 1.0,
                        df,
                    });
                }
                return Ok(TestResult {
                    statistic: (m1 - m2).signum() * f64::INFINITY,
                    p_value: 0.0,
                    df,
                });
            }
            ((m1 - m2) / (pooled * (1.0 / n1 + 1.0 / n2)).sqrt(), df)
        }
        TTestVariant::Welch => {
            let se2 = v1 / n1 + v2 / n2;
            if se2 <= 0.0 {
                if m1 == m2 {
                    return Ok(TestResult {
                        statistic: 0.0,
                        p_value: 1.0,
                        df: n1 + n2 - 2.0,
                    });
                }
                return Ok(TestResult {
                    statistic: (m1 - m2).signum() * f64::INFINITY,
                    p_value: 0.0,
                    df: n1 + n2 - 2.0,
                });
            }
            let df = se2 * se2
                / ((v1 / n1) * (v1 / n1) / (n1 - 1.0) + (v2 / n2) * (v2 / n2) / (n2 - 1.0));
            ((m1 - m2) / se2.sqrt(), df)
        }
    };
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid degrees of freedom");
    let p = (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0);
    Ok(TestResult {
        statistic: t,
        p_value: p,
        df,
    })
}

/// Midranks of the pooled sample, tie-aware.
fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Kruskal-Wallis H-test for two samples with midrank ties and tie
/// correction; the p-value comes from the chi-square CDF with df = 1.
pub fn kruskal_wallis(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() || a.len() + b.len() < 3 {
        return Err(StatsError::Contract(
            "Kruskal-Wallis needs non-empty samples totalling at least 3".into(),
        ));
    }
    let n = a.len() + b.len();
    let mut pooled: Vec<f64> = Vec::with_capacity(n);
    pooled.extend_from_slice(a);
    pooled.extend_from_slice(b);
    let ranks = midranks(&pooled);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let r2: f64 = ranks[a.len()..].iter().sum();
    let nf = n as f64;
    let h_raw = 12.0 / (nf * (nf + 1.0))
        * (r1 * r1 / a.len() as f64 + r2 * r2 / b.len() as f64)
        - 3.0 * (nf + 1.0);
    // tie correction: 1 - sum(t^3 - t) / (N^3 - N)
    let mut sorted = pooled.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    let correction = 1.0 - tie_sum / (nf * nf * nf - nf);
    let h = if correction <= 0.0 {
        // every value identical
        0.0
    } else {
        h_raw / correction
    };
    let h = h.max(0.0);
    let dist = ChiSquared::new(1.0).expect("df 1");
    let p = (1.0 - dist.cdf(h)).clamp(0.0, 1.0);
    Ok(TestResult {
        statistic: h,
        p_value: p,
        df: 1.0,
    })
}
