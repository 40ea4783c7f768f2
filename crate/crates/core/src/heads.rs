//! Task heads, label construction, and the joint loss.
//!
//! k independent agent-selection heads (AgSeN) read the `[CLS]` state and
//! predict whether the question is in-domain for each agent. The answer
//! selection head (AnsSel) reads every candidate's `[ANS]` state concatenated
//! with its agent-selection score and produces one logit per slot. The joint
//! loss is `alpha1/k * sum_j BCE(agsen_j) + alpha2 * CE(softmax(logits))`,
//! where the CE term is dropped for examples with no correct candidate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Example;
use crate::metrics::is_correct;
use crate::tensor::{NodeId, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum HeadsError {
    #[error("no selectable slot: every candidate is absent")]
    NoSelectableSlot,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Loss mixing weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha1: 0.5,
            alpha2: 1.0,
        }
    }
}

/// Correctness threshold for answer labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    /// A candidate is correct when its best token F1 against the golds is
    /// strictly greater than theta.
    pub theta: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig { theta: 0.7 }
    }
}

/// Per-slot training labels for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    /// 1 when the candidate clears the correctness threshold.
    pub anssel: Vec<u8>,
    /// 1 when the question comes from the agent's home domain.
    pub agsen: Vec<u8>,
    /// Uniform distribution over correct slots; absent when there are none.
    pub anssel_target: Option<Vec<f64>>,
}

/// One agent-selection head: an affine map from the hidden size to a single
/// logit, squashed by a sigmoid at use sites.
#[derive(Debug, Clone, PartialEq)]
pub struct AgSeNHead {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadsWeights {
    /// Exactly one head per registered agent.
    pub agsen: Vec<AgSeNHead>,
    /// AnsSel: one affine map from k*(hidden+1) features to k logits.
    pub anssel_w: Tensor,
    pub anssel_b: Tensor,
}

impl HeadsWeights {
    pub fn init(hidden: usize, agents: usize, seed: u64) -> HeadsWeights {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::rng::stream(seed, &["heads-init"]);
        let mut randn = |shape: Vec<usize>| {
            let numel: usize = shape.iter().product();
            let data = (0..numel)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * 0.02
                })
                .collect();
            Tensor::from_shape(shape, data)
        };
        HeadsWeights {
            agsen: (0..agents)
                .map(|_| AgSeNHead {
                    w: randn(vec![hidden, 1]),
                    b: Tensor::zeros(vec![1]),
                })
                .collect(),
            anssel_w: randn(vec![agents * (hidden + 1), agents]),
            anssel_b: Tensor::zeros(vec![agents]),
        }
    }

    pub fn agents(&self) -> usize {
        self.agsen.len()
    }

    pub fn for_each(&self, mut f: impl FnMut(String, &Tensor)) {
        for (j, h) in self.agsen.iter().enumerate() {
            f(format!("agsen.{j}.w"), &h.w);
            f(format!("agsen.{j}.b"), &h.b);
        }
        f("anssel.w".into(), &self.anssel_w);
        f("anssel.b".into(), &self.anssel_b);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(String, &mut Tensor)) {
        for (j, h) in self.agsen.iter_mut().enumerate() {
            f(format!("agsen.{j}.w"), &mut h.w);
            f(format!("agsen.{j}.b"), &mut h.b);
        }
        f("anssel.w".into(), &mut self.anssel_w);
        f("anssel.b".into(), &mut self.anssel_b);
    }
}

#[derive(Debug, Clone)]
pub struct BoundHeads {
    pub agsen: Vec<(NodeId, NodeId)>,
    pub anssel_w: NodeId,
    pub anssel_b: NodeId,
}

impl BoundHeads {
    pub fn bind(tape: &mut Tape, w: &HeadsWeights) -> BoundHeads {
        BoundHeads {
            agsen: w
                .agsen
                .iter()
                .map(|h| {
                    (
                        tape.leaf(h.w.clone().with_grad()),
                        tape.leaf(h.b.clone().with_grad()),
                    )
                })
                .collect(),
            anssel_w: tape.leaf(w.anssel_w.clone().with_grad()),
            anssel_b: tape.leaf(w.anssel_b.clone().with_grad()),
        }
    }
}

/// Sigmoid agent-selection scores, one per head, from the `[CLS]` state.
/// The heads are independent binary classifiers, not softmax-normalized.
pub fn agsen_scores(
    tape: &mut Tape,
    heads: &BoundHeads,
    cls: NodeId,
) -> Result<Vec<NodeId>, TensorError> {
    let mut probs = Vec::with_capacity(heads.agsen.len());
    for (w, b) in &heads.agsen {
        let z = tape.matmul(cls, *w)?;
        let z = tape.add_row(z, *b)?;
        probs.push(tape.sigmoid(z));
    }
    Ok(probs)
}

/// AnsSel logits over all k slots. Each present slot contributes its `[ANS]`
/// vector concatenated with its agent-selection score; absent slots
/// contribute zeros and have their output logit masked to negative infinity.
///
/// `detach_scores` feeds the selection scores as constants so no gradient
/// flows back into the AgSeN heads (used when alpha1 = 0).
pub fn anssel_logits(
    tape: &mut Tape,
    heads: &BoundHeads,
    hidden: usize,
    ans_vecs: &[(usize, NodeId)],
    agsen_probs: &[NodeId],
    present: &[bool],
    detach_scores: bool,
) -> Result<NodeId, HeadsError> {
    let k = present.len();
    assert_eq!(agsen_probs.len(), k, "one agent-selection score per slot");
    if !present.iter().any(|p| *p) {
        return Err(HeadsError::NoSelectableSlot);
    }
    let mut parts = Vec::with_capacity(k);
    for slot in 0..k {
        if present[slot] {
            let vec = ans_vecs
                .iter()
                .find(|(s, _)| *s == slot)
                .map(|(_, id)| *id)
                .expect("present slot has an [ANS] vector");
            let score = if detach_scores {
                let v = tape.value(agsen_probs[slot]).clone();
                tape.constant(v)
            } else {
                agsen_probs[slot]
            };
            parts.push(tape.concat_cols(&[vec, score])?);
        } else {
            parts.push(tape.constant(Tensor::zeros(vec![1, hidden + 1])));
        }
    }
    let features = tape.concat_cols(&parts)?;
    let logits = tape.matmul(features, heads.anssel_w)?;
    let logits = tape.add_row(logits, heads.anssel_b)?;
    let mask: Vec<f64> = present
        .iter()
        .map(|p| if *p { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    let mask = tape.constant(Tensor::row(mask));
    Ok(tape.add(logits, mask)?)
}

/// Build training labels for one example. `agent_domains` is the home domain
/// per slot, in registry order.
pub fn make_labels(example: &Example, agent_domains: &[&str], cfg: &LabelConfig) -> Labels {
    assert_eq!(example.candidates.len(), agent_domains.len());
    let anssel: Vec<u8> = example
        .candidates
        .iter()
        .map(|c| {
            (c.present && is_correct(&c.answer, &example.gold_answers, cfg.theta)) as u8
        })
        .collect();
    let agsen: Vec<u8> = agent_domains
        .iter()
        .map(|d| (example.dataset_id == *d) as u8)
        .collect();
    let positives = anssel.iter().filter(|&&v| v == 1).count();
    let anssel_target = (positives > 0).then(|| {
        anssel
            .iter()
            .map(|&v| {
                if v == 1 {
                    1.0 / positives as f64
                } else {
                    0.0
                }
            })
            .collect()
    });
    Labels {
        anssel,
        agsen,
        anssel_target,
    }
}

/// Per-head losses, the answer-selection loss, and the combined total.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub agsen_losses: Vec<f64>,
    pub anssel_loss: Option<f64>,
    pub total: f64,
}

/// The joint loss: `alpha1/k * sum BCE + alpha2 * CE`, with the CE term
/// dropped when the example has no correct candidate.
pub fn total_loss(
    tape: &mut Tape,
    agsen_probs: &[NodeId],
    anssel_logits: NodeId,
    labels: &Labels,
    cfg: &LossConfig,
) -> Result<(NodeId, LossBreakdown), TensorError> {
    let k = agsen_probs.len();
    assert_eq!(labels.agsen.len(), k);

    let mut agsen_losses = Vec::with_capacity(k);
    let mut bce_total: Option<NodeId> = None;
    for (prob, &y) in agsen_probs.iter().zip(&labels.agsen) {
        let target = Tensor::from_shape(vec![1, 1], vec![y as f64]);
        let loss = tape.bce_sum(*prob, &target)?;
        agsen_losses.push(tape.scalar_value(loss));
        bce_total = Some(match bce_total {
            Some(acc) => tape.add(acc, loss)?,
            None => loss,
        });
    }
    let agsen_term = tape.scale(bce_total.expect("at least one head"), cfg.alpha1 / k as f64);

    let (total, anssel_loss) = match &labels.anssel_target {
        Some(target) => {
            let ce = tape.ce_logits(anssel_logits, &Tensor::row(target.clone()))?;
            let ce_value = tape.scalar_value(ce);
            let ce_term = tape.scale(ce, cfg.alpha2);
            (tape.add(agsen_term, ce_term)?, Some(ce_value))
        }
        None => (agsen_term, None),
    };

    Ok((
        total,
        LossBreakdown {
            agsen_losses,
            anssel_loss,
            total: tape.scalar_value(total),
        },
    ))
}

/// Argmax slot with ties broken toward the lowest index. Masked (absent)
/// slots carry negative infinity and are never selected.
pub fn select_answer(logits: &[f64]) -> Result<usize, HeadsError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in logits.iter().enumerate() {
        if v == f64::NEG_INFINITY {
            continue;
        }
        if best.map(|(_, b)| v > b).unwrap_or(true) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i).ok_or(HeadsError::NoSelectableSlot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AnswerCandidate;

    fn sigmoid(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    fn heads_with(agsen: Vec<(Vec<f64>, f64)>, w: Tensor, b: Tensor) -> HeadsWeights {
        HeadsWeights {
            agsen: agsen
                .into_iter()
                .map(|(w, b)| AgSeNHead {
                    w: Tensor::from_shape(vec![w.len(), 1], w),
                    b: Tensor::vector(vec![b]),
                })
                .collect(),
            anssel_w: w,
            anssel_b: b,
        }
    }

    #[test]
    fn agsen_zero_weights_score_half() {
        let weights = heads_with(
            vec![(vec![0.0, 0.0], 0.0), (vec![0.0, 0.0], 0.0)],
            Tensor::zeros(vec![6, 2]),
            Tensor::zeros(vec![2]),
        );
        let mut tape = Tape::new();
        let bound = BoundHeads::bind(&mut tape, &weights);
        let cls = tape.constant(Tensor::row(vec![3.0, -1.0]));
        let probs = agsen_scores(&mut tape, &bound, cls).unwrap();
        for p in probs {
            assert_eq!(tape.scalar_value(p), 0.5);
        }
    }

    #[test]
    fn agsen_large_bias_saturates() {
        let weights = heads_with(
            vec![(vec![0.0], 50.0)],
            Tensor::zeros(vec![2, 1]),
            Tensor::zeros(vec![1]),
        );
        let mut tape = Tape::new();
        let bound = BoundHeads::bind(&mut tape, &weights);
        let cls = tape.constant(Tensor::row(vec![0.0]));
        let probs = agsen_scores(&mut tape, &bound, cls).unwrap();
        assert!(tape.scalar_value(probs[0]) > 1.0 - 1e-12);
    }

    #[test]
    fn agsen_matches_hand_sigmoid() {
        let weights = heads_with(
            vec![(vec![0.2, 0.4], 0.1)],
            Tensor::zeros(vec![3, 1]),
            Tensor::zeros(vec![1]),
        );
        let mut tape = Tape::new();
        let bound = BoundHeads::bind(&mut tape, &weights);
        let cls = tape.constant(Tensor::row(vec![0.5, -1.0]));
        let probs = agsen_scores(&mut tape, &bound, cls).unwrap();
        let expect = sigmoid(0.5 * 0.2 + (-1.0) * 0.4 + 0.1);
        assert!((tape.scalar_value(probs[0]) - expect).abs() < 1e-15);
    }

    fn run_anssel(
        weights: &HeadsWeights,
        ans: Vec<(usize, Vec<f64>)>,
        probs: Vec<f64>,
        present: Vec<bool>,
    ) -> Result<Vec<f64>, HeadsError> {
        let mut tape = Tape::new();
        let bound = BoundHeads::bind(&mut tape, weights);
        let hidden = weights.agsen[0].w.shape()[0];
        let ans_vecs: Vec<(usize, NodeId)> = ans
            .into_iter()
            .map(|(slot, v)| (slot, tape.constant(Tensor::row(v))))
            .collect();
        let prob_nodes: Vec<NodeId> = probs
            .into_iter()
            .map(|p| tape.constant(Tensor::scalar(p)))
            .collect();
        let logits = anssel_logits(
            &mut tape, &bound, hidden, &ans_vecs, &prob_nodes, &present, false,
        )?;
        Ok(tape.value(logits).data().to_vec())
    }

    #[test]
    fn anssel_zero_weights_tie_break_to_lowest_slot() {
        let weights = heads_with(
            vec![(vec![0.0], 0.0), (vec![0.0], 0.0)],
            Tensor::zeros(vec![4, 2]),
            Tensor::zeros(vec![2]),
        );
        let logits = run_anssel(
            &weights,
            vec![(0, vec![1.0]), (1, vec![2.0])],
            vec![0.5, 0.5],
            vec![true, true],
        )
        .unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);
        assert_eq!(select_answer(&logits).unwrap(), 0);
    }

    #[test]
    fn anssel_masks_absent_slot() {
        let weights = heads_with(
            vec![(vec![0.0], 0.0), (vec![0.0], 0.0)],
            Tensor::zeros(vec![4, 2]),
            Tensor::zeros(vec![2]),
        );
        let logits = run_anssel(
            &weights,
            vec![(0, vec![1.0])],
            vec![0.5, 0.5],
            vec![true, false],
        )
        .unwrap();
        assert_eq!(logits[1], f64::NEG_INFINITY);
        assert_eq!(select_answer(&logits).unwrap(), 0);
    }

    #[test]
    fn anssel_hand_arithmetic_k2_d1() {
        // Features in slot order: [ans0, p0, ans1, p1] = [2.0, 0.8, 3.0, 0.6]
        let w = Tensor::from_shape(
            vec![4, 2],
            vec![
                1.0, 0.0, // ans0
                1.0, 0.0, // p0
                0.0, 1.0, // ans1
                0.0, 1.0, // p1
            ],
        );
        let b = Tensor::vector(vec![0.5, -0.5]);
        let weights = heads_with(vec![(vec![0.0], 0.0), (vec![0.0], 0.0)], w, b);
        let logits = run_anssel(
            &weights,
            vec![(0, vec![2.0]), (1, vec![3.0])],
            vec![0.8, 0.6],
            vec![true, true],
        )
        .unwrap();
        assert!((logits[0] - 3.3).abs() < 1e-15);
        assert!((logits[1] - 3.1).abs() < 1e-15);
    }

    #[test]
    fn anssel_all_absent_is_error() {
        let weights = heads_with(
            vec![(vec![0.0], 0.0), (vec![0.0], 0.0)],
            Tensor::zeros(vec![4, 2]),
            Tensor::zeros(vec![2]),
        );
        let err = run_anssel(&weights, vec![], vec![0.5, 0.5], vec![false, false]).unwrap_err();
        assert!(matches!(err, HeadsError::NoSelectableSlot));
    }

    fn example(golds: Vec<&str>, answers: Vec<&str>, domain: &str) -> Example {
        Example {
            qid: "q".into(),
            question: "who".into(),
            dataset_id: domain.into(),
            gold_answers: golds.into_iter().map(String::from).collect(),
            candidates: answers
                .into_iter()
                .enumerate()
                .map(|(i, a)| AnswerCandidate::new(format!("a{i}"), a, 0.5))
                .collect(),
        }
    }

    #[test]
    fn labels_use_strict_threshold() {
        // Four of five tokens shared: F1 = 0.8 > 0.7.
        let ex = example(
            vec!["red blue green gold pink"],
            vec!["red blue green gold slim"],
            "d0",
        );
        let labels = make_labels(&ex, &["d0"], &LabelConfig { theta: 0.7 });
        assert_eq!(labels.anssel, vec![1]);

        // Three of four tokens shared: F1 = 0.75 exactly; strict comparison
        // keeps the label at zero.
        let ex = example(
            vec!["red blue green gold"],
            vec!["red blue green slim"],
            "d0",
        );
        let labels = make_labels(&ex, &["d0"], &LabelConfig { theta: 0.75 });
        assert_eq!(labels.anssel, vec![0]);
        assert!(labels.anssel_target.is_none());
    }

    #[test]
    fn agsen_labels_mark_home_domain() {
        let ex = example(vec!["x"], vec!["x", "y", "z", "w"], "d2");
        let labels = make_labels(&ex, &["d0", "d1", "d2", "d3"], &LabelConfig::default());
        assert_eq!(labels.agsen, vec![0, 0, 1, 0]);
    }

    #[test]
    fn labels_invariant_to_gold_order_and_case() {
        let a = example(vec!["Tony Gazzo", "rocky"], vec!["ROCKY"], "d0");
        let b = example(vec!["rocky", "tony gazzo"], vec!["rocky"], "d0");
        let la = make_labels(&a, &["d0"], &LabelConfig::default());
        let lb = make_labels(&b, &["d0"], &LabelConfig::default());
        assert_eq!(la.anssel, lb.anssel);
    }

    #[test]
    fn absent_candidates_never_label_correct() {
        let mut ex = example(vec!["x"], vec!["x", "x"], "d0");
        ex.candidates[1] = AnswerCandidate::nulled("a1");
        let labels = make_labels(&ex, &["d0", "d0"], &LabelConfig::default());
        assert_eq!(labels.anssel, vec![1, 0]);
        assert_eq!(labels.anssel_target, Some(vec![1.0, 0.0]));
    }

    #[test]
    fn multi_positive_target_is_uniform() {
        let ex = example(vec!["x"], vec!["x", "y", "x"], "d0");
        let labels = make_labels(&ex, &["d0"; 3], &LabelConfig::default());
        assert_eq!(labels.anssel_target, Some(vec![0.5, 0.0, 0.5]));
    }

    fn loss_setup(
        probs: Vec<f64>,
        logits: Vec<f64>,
        labels: &Labels,
        cfg: &LossConfig,
    ) -> LossBreakdown {
        let mut tape = Tape::new();
        let prob_nodes: Vec<NodeId> = probs
            .into_iter()
            .map(|p| tape.constant(Tensor::scalar(p)))
            .collect();
        let logit_node = tape.constant(Tensor::row(logits));
        let (_, breakdown) = total_loss(&mut tape, &prob_nodes, logit_node, labels, cfg).unwrap();
        breakdown
    }

    #[test]
    fn loss_hand_example() {
        // k = 2, both BCE terms ln 2 (prob 0.5), CE ln 2 (two equal logits).
        let labels = Labels {
            anssel: vec![1, 0],
            agsen: vec![1, 0],
            anssel_target: Some(vec![1.0, 0.0]),
        };
        let b = loss_setup(
            vec![0.5, 0.5],
            vec![0.0, 0.0],
            &labels,
            &LossConfig::default(),
        );
        let ln2 = std::f64::consts::LN_2;
        assert!((b.total - 1.0397).abs() < 1e-4, "{}", b.total);
        assert!((b.total - 1.5 * ln2).abs() < 1e-12);
        assert_eq!(b.agsen_losses.len(), 2);
        assert!((b.agsen_losses[0] - ln2).abs() < 1e-12);
        assert!((b.anssel_loss.unwrap() - ln2).abs() < 1e-12);
    }

    #[test]
    fn loss_vanishes_for_perfect_heads() {
        let labels = Labels {
            anssel: vec![1, 0],
            agsen: vec![1, 0],
            anssel_target: Some(vec![1.0, 0.0]),
        };
        let b = loss_setup(
            vec![1.0 - 1e-12, 1e-12],
            vec![60.0, 0.0],
            &labels,
            &LossConfig::default(),
        );
        assert!(b.total < 1e-9, "{}", b.total);
    }

    #[test]
    fn alpha1_zero_leaves_only_the_ce_term() {
        let labels = Labels {
            anssel: vec![1, 0],
            agsen: vec![1, 0],
            anssel_target: Some(vec![1.0, 0.0]),
        };
        let cfg = LossConfig {
            alpha1: 0.0,
            alpha2: 1.0,
        };
        let b = loss_setup(vec![0.9, 0.1], vec![0.0, 0.0], &labels, &cfg);
        assert!((b.total - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(b.anssel_loss, Some(b.total));
    }

    #[test]
    fn ce_term_dropped_without_positives() {
        let labels = Labels {
            anssel: vec![0, 0],
            agsen: vec![1, 0],
            anssel_target: None,
        };
        let b = loss_setup(
            vec![0.5, 0.5],
            vec![1.0, -1.0],
            &labels,
            &LossConfig::default(),
        );
        assert_eq!(b.anssel_loss, None);
        assert!((b.total - 0.5 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_independent_recomputation() {
        let mut rng = crate::rng::stream(41, &["loss-oracle"]);
        use rand::Rng;
        for _ in 0..50 {
            let k = 3;
            let probs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..0.99)).collect();
            let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let agsen: Vec<u8> = (0..k).map(|_| rng.gen_range(0..2) as u8).collect();
            let anssel: Vec<u8> = vec![1, 0, rng.gen_range(0..2) as u8];
            let positives = anssel.iter().filter(|&&v| v == 1).count();
            let target: Vec<f64> = anssel
                .iter()
                .map(|&v| if v == 1 { 1.0 / positives as f64 } else { 0.0 })
                .collect();
            let labels = Labels {
                anssel: anssel.clone(),
                agsen: agsen.clone(),
                anssel_target: Some(target.clone()),
            };
            let cfg = LossConfig {
                alpha1: 0.5,
                alpha2: 1.0,
            };
            let b = loss_setup(probs.clone(), logits.clone(), &labels, &cfg);

            // Independent scalar recomputation.
            let bce: f64 = probs
                .iter()
                .zip(&agsen)
                .map(|(&p, &y)| {
                    let y = y as f64;
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let ce: f64 = logits
                .iter()
                .zip(&target)
                .filter(|(_, &t)| t > 0.0)
                .map(|(&l, &t)| {
                    let p = (l - max).exp() / z;
                    -t * p.ln()
                })
                .sum();
            let expect = cfg.alpha1 / k as f64 * bce + cfg.alpha2 * ce;
            assert!((b.total - expect).abs() < 1e-12, "{} vs {expect}", b.total);
        }
    }

    #[test]
    fn select_answer_cases() {
        assert_eq!(select_answer(&[1.0, 2.0, 0.5]).unwrap(), 1);
        assert_eq!(select_answer(&[3.0, 3.0]).unwrap(), 0);
        assert_eq!(select_answer(&[f64::NEG_INFINITY, 0.1]).unwrap(), 1);
        assert!(matches!(
            select_answer(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            Err(HeadsError::NoSelectableSlot)
        ));
    }

    #[test]
    fn select_answer_invariant_to_constant_shift() {
        let logits = [0.2, -1.0, f64::NEG_INFINITY, 0.9];
        let shifted: Vec<f64> = logits
            .iter()
            .map(|&v| if v == f64::NEG_INFINITY { v } else { v + 123.0 })
            .collect();
        assert_eq!(
            select_answer(&logits).unwrap(),
            select_answer(&shifted).unwrap()
        );
    }
}
