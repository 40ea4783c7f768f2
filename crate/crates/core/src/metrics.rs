//! Answer-comparison metrics for label construction and evaluation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, MetricChoice};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{got} selections for {want} examples")]
    SelectionCount { got: usize, want: usize },
    #[error("example {qid}: selected slot {slot} is absent")]
    AbsentSelection { qid: String, slot: usize },
    #[error("example {qid}: selected slot {slot} out of range ({len} agents)")]
    SlotOutOfRange { qid: String, slot: usize, len: usize },
}

/// Lowercase, strip punctuation, drop the articles a/an/the, and collapse
/// whitespace. The comparison form used by every metric here.
pub fn normalize(text: &str) -> String {
    let lower = text.to_lowercase();
    let stripped: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn norm_tokens(text: &str) -> Vec<String> {
    normalize(text)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Bag-of-tokens F1 over normalized token multisets. Both sides empty is a
/// perfect match; exactly one empty scores zero.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = norm_tokens(pred);
    let g = norm_tokens(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &g {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut common = 0i64;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// 1.0 iff the normalized strings are equal.
pub fn exact_match(pred: &str, gold: &str) -> f64 {
    if normalize(pred) == normalize(gold) {
        1.0
    } else {
        0.0
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let m = b.len();
    let mut prev = vec![0usize; m + 1];
    let mut curr = vec![0usize; m + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}

/// LCS F-measure (harmonic mean of LCS precision and recall) on normalized
/// token sequences.
pub fn rouge_l(pred: &str, gold: &str) -> f64 {
    let p = norm_tokens(pred);
    let g = norm_tokens(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&p, &g) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / p.len() as f64;
    let recall = lcs / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn metric_score(metric: MetricChoice, pred: &str, gold: &str) -> f64 {
    match metric {
        MetricChoice::TokenF1 => token_f1(pred, gold),
        MetricChoice::ExactMatch | MetricChoice::Accuracy => exact_match(pred, gold),
        MetricChoice::RougeL => rouge_l(pred, gold),
    }
}

/// Best score over all gold answers (SQuAD convention for multiple golds).
pub fn max_over_golds(metric: MetricChoice, pred: &str, golds: &[String]) -> f64 {
    golds
        .iter()
        .map(|g| metric_score(metric, pred, g))
        .fold(0.0, f64::max)
}

/// Whether a candidate answer counts as correct under the F1 threshold
/// (strictly greater, so a score exactly at theta is incorrect).
pub fn is_correct(answer: &str, golds: &[String], theta: f64) -> bool {
    max_over_golds(MetricChoice::TokenF1, answer, golds) > theta
}

/// One aggregation row: macro-averages over the examples it covers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub count: usize,
    pub token_f1: f64,
    pub exact_match: f64,
    /// Fraction of examples whose selected candidate clears the correctness
    /// threshold.
    pub accuracy: f64,
    pub rouge_l: f64,
    /// The domain's configured metric (token F1 unless overridden).
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: MetricsRow,
    pub per_dataset: BTreeMap<String, MetricsRow>,
}

#[derive(Default)]
struct RowAccum {
    count: usize,
    token_f1: f64,
    exact_match: f64,
    accuracy: f64,
    rouge_l: f64,
    score: f64,
}

impl RowAccum {
    fn push(&mut self, f1: f64, em: f64, acc: f64, rouge: f64, score: f64) {
        self.count += 1;
        self.token_f1 += f1;
        self.exact_match += em;
        self.accuracy += acc;
        self.rouge_l += rouge;
        self.score += score;
    }

    fn finish(&self) -> MetricsRow {
        let n = self.count.max(1) as f64;
        MetricsRow {
            count: self.count,
            token_f1: self.token_f1 / n,
            exact_match: self.exact_match / n,
            accuracy: self.accuracy / n,
            rouge_l: self.rouge_l / n,
            score: self.score / n,
        }
    }
}

/// Score one selected slot per example and aggregate per dataset id plus
/// overall. `theta` is the correctness threshold behind the accuracy column.
pub fn evaluate(
    dataset: &Dataset,
    selections: &[usize],
    metric_by_domain: &BTreeMap<String, MetricChoice>,
    theta: f64,
) -> Result<MetricsReport, MetricsError> {
    if selections.len() != dataset.len() {
        return Err(MetricsError::SelectionCount {
            got: selections.len(),
            want: dataset.len(),
        });
    }
    let mut overall = RowAccum::default();
    let mut per: BTreeMap<String, RowAccum> = BTreeMap::new();
    for (ex, &slot) in dataset.examples.iter().zip(selections) {
        if slot >= ex.candidates.len() {
            return Err(MetricsError::SlotOutOfRange {
                qid: ex.qid.clone(),
                slot,
                len: ex.candidates.len(),
            });
        }
        let cand = &ex.candidates[slot];
        if !cand.present {
            return Err(MetricsError::AbsentSelection {
                qid: ex.qid.clone(),
                slot,
            });
        }
        let f1 = max_over_golds(MetricChoice::TokenF1, &cand.answer, &ex.gold_answers);
        let em = max_over_golds(MetricChoice::ExactMatch, &cand.answer, &ex.gold_answers);
        let rouge = max_over_golds(MetricChoice::RougeL, &cand.answer, &ex.gold_answers);
        let acc = if f1 > theta { 1.0 } else { 0.0 };
        let metric = metric_by_domain
            .get(&ex.dataset_id)
            .copied()
            .unwrap_or_default();
        let score = max_over_golds(metric, &cand.answer, &ex.gold_answers);
        overall.push(f1, em, acc, rouge, score);
        per.entry(ex.dataset_id.clone())
            .or_default()
            .push(f1, em, acc, rouge, score);
    }
    Ok(MetricsReport {
        overall: overall.finish(),
        per_dataset: per.iter().map(|(k, v)| (k.clone(), v.finish())).collect(),
    })
}
