//! Task-independent reliability metrics: set accuracy, run-to-run consistency
//! and character error rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("character error rate needs a nonempty reference")]
    EmptyReference,
    #[error("consistency needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub matched: usize,
    pub predicted: usize,
    pub truth: usize,
    /// Nothing was predicted; precision is reported as 0.
    pub precision_undefined: bool,
    /// The truth set is empty; recall is reported as 0.
    pub recall_undefined: bool,
}

/// Precision, recall and Jaccard-style accuracy under a task-supplied
/// equivalence. Each predicted item claims the first unclaimed truth item
/// it matches.
pub fn set_metrics<P, T>(predicted: &[P], truth: &[T], matcher: impl Fn(&P, &T) -> bool) -> SetMetrics {
    let mut claimed = vec![false; truth.len()];
    let mut matched = 0;
    for p in predicted {
        if let Some(j) = (0..truth.len()).find(|&j| !claimed[j] && matcher(p, &truth[j])) {
            claimed[j] = true;
            matched += 1;
        }
    }
    SetMetrics::from_counts(matched, predicted.len(), truth.len())
}

impl SetMetrics {
    /// Metrics from raw counts; `matched` may not exceed either side.
    pub fn from_counts(matched: usize, predicted: usize, truth: usize) -> SetMetrics {
        assert!(matched <= predicted && matched <= truth, "matched exceeds a side");
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        if predicted == 0 && truth == 0 {
            return SetMetrics {
                precision: 1.0,
                recall: 1.0,
                accuracy: 1.0,
                matched: 0,
                predicted: 0,
                truth: 0,
                precision_undefined: false,
                recall_undefined: false,
            };
        }
        SetMetrics {
            precision: ratio(matched, predicted),
            recall: ratio(matched, truth),
            accuracy: ratio(matched, predicted + truth - matched),
            matched,
            predicted,
            truth,
            precision_undefined: predicted == 0,
            recall_undefined: truth == 0,
        }
    }

    /// Pools counts, so larger pages weigh more.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a SetMetrics>) -> SetMetrics {
        let (m, p, t) = parts
            .into_iter()
            .fold((0, 0, 0), |(m, p, t), x| (m + x.matched, p + x.predicted, t + x.truth));
        SetMetrics::from_counts(m, p, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport<T> {
    pub key: String,
    pub values: Vec<T>,
    /// Share of runs holding the modal value.
    pub agreement: f64,
    pub majority: T,
    /// Several values shared the top count; the smallest was chosen.
    pub tie: bool,
}

pub fn consistency<T: Ord + Clone>(key: impl Into<String>, values: &[T]) -> Result<ConsistencyReport<T>, EvalError> {
    if values.len() < 2 {
        return Err(EvalError::TooFewRuns(values.len()));
    }
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let top = *counts.values().max().expect("nonempty");
    let mut modal = counts.iter().filter(|(_, &c)| c == top).map(|(v, _)| *v);
    let majority = modal.next().expect("some value reaches the maximum").clone();
    let tie = modal.next().is_some();
    Ok(ConsistencyReport {
        key: key.into(),
        values: values.to_vec(),
        agreement: top as f64 / values.len() as f64,
        majority,
        tie,
    })
}

/// Share of reports where every run agreed.
pub fn full_agreement_fraction<T>(reports: &[ConsistencyReport<T>]) -> f64 {
    if reports.is_empty() {
        return 1.0;
    }
    reports.iter().filter(|r| r.agreement == 1.0).count() as f64 / reports.len() as f64
}

/// Edit distance over Unicode scalar values with unit costs.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance from candidate to reference over the reference length in
/// characters. Not symmetric, and may exceed 1.
pub fn character_error_rate(candidate: &str, reference: &str) -> Result<f64, EvalError> {
    let n = reference.chars().count();
    if n == 0 {
        return Err(EvalError::EmptyReference);
    }
    Ok(levenshtein(candidate, reference) as f64 / n as f64)
}
