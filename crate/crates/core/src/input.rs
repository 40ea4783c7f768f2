//! Encoder input assembly.
//!
//! Layout: `[CLS] question [SEP] [ANS] answer1 [ANS] answer2 ...`, padded to
//! a fixed length. Segment ids are 0 through `[SEP]` and 1 across the
//! candidate region; the confidence channel carries each candidate's score
//! over its whole span (including the `[ANS]` marker) and zero elsewhere.
//! Absent candidates contribute no tokens and no span.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::data::{Example, Vocab, ANS, CLS, PAD, SEP};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("question needs {needed} positions but max_len is {max}")]
    QuestionTooLong { needed: usize, max: usize },
    #[error("candidates need {needed} positions even fully truncated but max_len is {max}")]
    CandidatesOverflow { needed: usize, max: usize },
}

/// Half-open position range of one candidate: `[start, end)`, starting at
/// its `[ANS]` token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn positions(&self) -> impl Iterator<Item = usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub token_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
    /// 0 over `[CLS] question [SEP]`, 1 over the candidate region.
    pub segment_ids: Vec<usize>,
    pub confidence_values: Vec<f64>,
    /// 1.0 on live positions, 0.0 on padding.
    pub attention_mask: Vec<f64>,
    pub cls_index: usize,
    /// One entry per agent slot; absent candidates have no span.
    pub ans_spans: Vec<Option<Span>>,
    /// Live (unpadded) length.
    pub length: usize,
    pub max_len: usize,
}

impl EncoderInput {
    /// Copy with padding trimmed to `new_max` positions (used to pad batches
    /// to their longest member instead of the global maximum).
    pub fn shrunk(&self, new_max: usize) -> EncoderInput {
        assert!(new_max >= self.length && new_max <= self.max_len);
        EncoderInput {
            token_ids: self.token_ids[..new_max].to_vec(),
            position_ids: self.position_ids[..new_max].to_vec(),
            segment_ids: self.segment_ids[..new_max].to_vec(),
            confidence_values: self.confidence_values[..new_max].to_vec(),
            attention_mask: self.attention_mask[..new_max].to_vec(),
            cls_index: self.cls_index,
            ans_spans: self.ans_spans.clone(),
            length: self.length,
            max_len: new_max,
        }
    }

    pub fn present_slots(&self) -> Vec<usize> {
        self.ans_spans
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|_| i))
            .collect()
    }
}

/// Position indices covered by each present candidate's `[ANS] answer` span.
pub type AnsSpanIndex = BTreeMap<usize, Vec<usize>>;

/// Build the encoder input for one example.
///
/// When the candidate region overflows, the longest answer loses tokens
/// first, one at a time; `[ANS]` markers are never dropped and the question
/// is never truncated.
pub fn assemble(
    example: &Example,
    vocab: &Vocab,
    max_len: usize,
) -> Result<EncoderInput, AssemblyError> {
    assert!(max_len >= 8, "max_len must be at least 8");
    assert!(
        !example.candidates.is_empty(),
        "example must carry at least one candidate slot"
    );

    let question_ids = vocab.encode(&example.question);
    let base = 2 + question_ids.len(); // [CLS] ... [SEP]
    if base > max_len {
        return Err(AssemblyError::QuestionTooLong {
            needed: base,
            max: max_len,
        });
    }

    let mut answer_ids: Vec<Option<Vec<usize>>> = example
        .candidates
        .iter()
        .map(|c| c.present.then(|| vocab.encode(&c.answer)))
        .collect();

    let mut total = base
        + answer_ids
            .iter()
            .flatten()
            .map(|ids| 1 + ids.len())
            .sum::<usize>();
    while total > max_len {
        // Longest answer first, lowest slot on ties.
        let victim = answer_ids
            .iter()
            .enumerate()
            .filter_map(|(i, ids)| ids.as_ref().map(|ids| (i, ids.len())))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .filter(|(_, len)| *len > 0);
        match victim {
            Some((slot, _)) => {
                answer_ids[slot].as_mut().expect("present slot").pop();
                total -= 1;
            }
            None => {
                return Err(AssemblyError::CandidatesOverflow {
                    needed: total,
                    max: max_len,
                })
            }
        }
    }

    let mut token_ids = Vec::with_capacity(max_len);
    let mut segment_ids = Vec::with_capacity(max_len);
    let mut confidence_values = Vec::with_capacity(max_len);

    token_ids.push(CLS);
    token_ids.extend(&question_ids);
    token_ids.push(SEP);
    segment_ids.resize(token_ids.len(), 0);
    confidence_values.resize(token_ids.len(), 0.0);

    let mut ans_spans: Vec<Option<Span>> = vec![None; example.candidates.len()];
    for (slot, ids) in answer_ids.iter().enumerate() {
        let Some(ids) = ids else { continue };
        let start = token_ids.len();
        token_ids.push(ANS);
        token_ids.extend(ids);
        let end = token_ids.len();
        segment_ids.resize(end, 1);
        let conf = example.candidates[slot].confidence;
        confidence_values.resize(end, conf);
        ans_spans[slot] = Some(Span { start, end });
    }

    let length = token_ids.len();
    token_ids.resize(max_len, PAD);
    segment_ids.resize(max_len, 0);
    confidence_values.resize(max_len, 0.0);
    let mut attention_mask = vec![1.0; length];
    attention_mask.resize(max_len, 0.0);

    Ok(EncoderInput {
        token_ids,
        position_ids: (0..max_len).collect(),
        segment_ids,
        confidence_values,
        attention_mask,
        cls_index: 0,
        ans_spans,
        length,
        max_len,
    })
}

/// Exact position lists per present agent slot.
pub fn ans_index_map(input: &EncoderInput) -> AnsSpanIndex {
    input
        .ans_spans
        .iter()
        .enumerate()
        .filter_map(|(slot, span)| span.map(|s| (slot, s.positions().collect())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AnswerCandidate, Example, ANS};

    fn example(cands: Vec<AnswerCandidate>) -> Example {
        Example {
            qid: "q".into(),
            question: "who won".into(),
            dataset_id: "d".into(),
            gold_answers: vec!["rocky".into()],
            candidates: cands,
        }
    }

    fn vocab() -> Vocab {
        Vocab::build(["who won rocky apollo creed of the fifteenth round"], 64)
    }

    #[test]
    fn assembles_reference_layout() {
        let ex = example(vec![
            AnswerCandidate::new("a1", "rocky", 0.9),
            AnswerCandidate::new("a2", "apollo", 0.2),
        ]);
        let v = vocab();
        let input = assemble(&ex, &v, 8).unwrap();
        let expect: Vec<usize> = vec![
            CLS,
            v.id("who"),
            v.id("won"),
            crate::data::SEP,
            ANS,
            v.id("rocky"),
            ANS,
            v.id("apollo"),
        ];
        assert_eq!(input.token_ids, expect);
        assert_eq!(input.segment_ids, [0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(
            input.confidence_values,
            [0.0, 0.0, 0.0, 0.0, 0.9, 0.9, 0.2, 0.2]
        );
        assert_eq!(input.cls_index, 0);
        assert_eq!(input.length, 8);
        assert_eq!(input.ans_spans[0], Some(Span { start: 4, end: 6 }));
        assert_eq!(input.ans_spans[1], Some(Span { start: 6, end: 8 }));
    }

    #[test]
    fn absent_candidate_contributes_nothing() {
        let ex = example(vec![
            AnswerCandidate::new("a1", "rocky", 0.9),
            AnswerCandidate::nulled("a2"),
        ]);
        let input = assemble(&ex, &vocab(), 8).unwrap();
        assert_eq!(input.length, 6); // [CLS] who won [SEP] [ANS] rocky
        assert_eq!(input.ans_spans[1], None);
        assert_eq!(input.token_ids[6], PAD);
    }

    #[test]
    fn padding_and_mask() {
        let ex = example(vec![
            AnswerCandidate::new("a1", "rocky", 0.9),
            AnswerCandidate::new("a2", "apollo", 0.2),
        ]);
        let input = assemble(&ex, &vocab(), 10).unwrap();
        assert_eq!(input.token_ids[8..], [PAD, PAD]);
        assert_eq!(input.attention_mask[7..], [1.0, 0.0, 0.0]);
        assert_eq!(input.position_ids, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn index_map_reference_case() {
        let ex = example(vec![
            AnswerCandidate::new("a1", "rocky", 0.9),
            AnswerCandidate::new("a2", "apollo", 0.2),
        ]);
        let input = assemble(&ex, &vocab(), 8).unwrap();
        let map = ans_index_map(&input);
        assert_eq!(map[&0], vec![4, 5]);
        assert_eq!(map[&1], vec![6, 7]);
    }

    #[test]
    fn empty_answer_span_is_marker_only() {
        let ex = example(vec![AnswerCandidate::new("a1", "", 0.4)]);
        let input = assemble(&ex, &vocab(), 8).unwrap();
        let map = ans_index_map(&input);
        assert_eq!(map[&0], vec![4]);
    }

    #[test]
    fn all_absent_yields_empty_map() {
        let ex = example(vec![
            AnswerCandidate::nulled("a1"),
            AnswerCandidate::nulled("a2"),
        ]);
        let input = assemble(&ex, &vocab(), 8).unwrap();
        assert!(ans_index_map(&input).is_empty());
        assert_eq!(input.length, 4);
    }

    #[test]
    fn question_never_truncated() {
        let mut ex = example(vec![AnswerCandidate::new("a1", "rocky", 0.9)]);
        ex.question = "who won the fifteenth round of the creed fight".into();
        match assemble(&ex, &vocab(), 8) {
            Err(AssemblyError::QuestionTooLong { needed, max }) => {
                assert!(needed > max);
            }
            other => panic!("expected QuestionTooLong, got {other:?}"),
        }
    }

    #[test]
    fn truncation_trims_longest_answer_first() {
        let ex = example(vec![
            AnswerCandidate::new("a1", "rocky", 0.9),
            AnswerCandidate::new("a2", "apollo creed of philadelphia", 0.2),
        ]);
        // live would be 4 + 2 + 5 = 11; cap at 9 trims two tokens from a2.
        let v = vocab();
        let input = assemble(&ex, &v, 9).unwrap();
        assert_eq!(input.length, 9);
        assert_eq!(input.ans_spans[0], Some(Span { start: 4, end: 6 }));
        assert_eq!(input.ans_spans[1], Some(Span { start: 6, end: 9 }));
        assert_eq!(input.token_ids[6], ANS);
        assert_eq!(input.token_ids[7], v.id("apollo"));
        assert_eq!(input.token_ids[8], v.id("creed"));
    }

    #[test]
    fn overflow_with_bare_markers_is_an_error() {
        let cands: Vec<AnswerCandidate> = (0..6)
            .map(|i| AnswerCandidate::new(format!("a{i}"), "rocky", 0.5))
            .collect();
        let ex = example(cands);
        // base 4 + six [ANS] markers = 10 > 8 even with empty answers.
        match assemble(&ex, &vocab(), 8) {
            Err(AssemblyError::CandidatesOverflow { needed, max }) => {
                assert_eq!(needed, 10);
                assert_eq!(max, 8);
            }
            other => panic!("expected CandidatesOverflow, got {other:?}"),
        }
    }

    #[test]
    fn assembly_is_deterministic() {
        let ex = example(vec![
            AnswerCandidate::new("a1", "rocky", 0.9),
            AnswerCandidate::new("a2", "apollo", 0.2),
        ]);
        let a = assemble(&ex, &vocab(), 16).unwrap();
        let b = assemble(&ex, &vocab(), 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nonzero_confidence_only_inside_spans() {
        let ex = example(vec![
            AnswerCandidate::new("a1", "rocky balboa", 0.9),
            AnswerCandidate::nulled("a2"),
            AnswerCandidate::new("a3", "apollo", 0.7),
        ]);
        let input = assemble(&ex, &vocab(), 20).unwrap();
        let map = ans_index_map(&input);
        let covered: Vec<usize> = map.values().flatten().copied().collect();
        for (i, &c) in input.confidence_values.iter().enumerate() {
            if c != 0.0 {
                assert!(covered.contains(&i), "position {i} outside any span");
            }
        }
        let markers = input
            .token_ids[..input.length]
            .iter()
            .filter(|&&t| t == ANS)
            .count();
        assert_eq!(markers, 2);
    }

    #[test]
    fn shrunk_keeps_live_region() {
        let ex = example(vec![AnswerCandidate::new("a1", "rocky", 0.9)]);
        let input = assemble(&ex, &vocab(), 32).unwrap();
        let small = input.shrunk(8);
        assert_eq!(small.max_len, 8);
        assert_eq!(small.token_ids[..6], input.token_ids[..6]);
        assert_eq!(small.length, input.length);
    }
}
