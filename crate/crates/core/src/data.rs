//! Domain records, tokenizer, vocabulary, and the prediction-file format.
//!
//! A prediction file is UTF-8 JSON lines. The first line is a header naming
//! the format version and the registered agents (id plus home domain, in the
//! order that fixes candidate slots everywhere downstream); it may also carry
//! the per-domain evaluation metric. Every following line is one example:
//! qid, question, dataset id, gold answers, and one candidate per agent.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: &str = "metaqa-preds/1";

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const ANS: usize = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[ANS]"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: invalid json: {msg}")]
    Json { line: usize, msg: String },
    #[error("line 1: bad header: {0}")]
    BadHeader(String),
    #[error("line {line}: confidence {value} outside [0, 1]")]
    BadConfidence { line: usize, value: f64 },
    #[error("line {line}: missing candidate for agent {agent}")]
    MissingAgent { line: usize, agent: String },
    #[error("line {line}: candidate for unregistered agent {agent}")]
    UnknownAgent { line: usize, agent: String },
    #[error("line {line}: duplicate candidate for agent {agent}")]
    DuplicateAgent { line: usize, agent: String },
    #[error("line {line}: duplicate qid {qid}")]
    DuplicateQid { line: usize, qid: String },
    #[error("line {line}: gold_answers must be nonempty")]
    EmptyGolds { line: usize },
    #[error("line {line}: nulled candidate for agent {agent} must carry an empty answer and zero confidence")]
    BadNulled { line: usize, agent: String },
}

/// Which official metric scores a domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricChoice {
    TokenF1,
    ExactMatch,
    /// Multiple-choice accuracy: exact match on the option text.
    Accuracy,
    RougeL,
}

impl Default for MetricChoice {
    fn default() -> Self {
        MetricChoice::TokenF1
    }
}

/// Lowercase a text and split it into word and single-character punctuation
/// tokens. Alphanumeric runs stay together; every other non-whitespace
/// character becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Token table with fixed special ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocab {
    /// Build from a corpus: specials first, then tokens by descending
    /// frequency with lexicographic tie-breaks, truncated to `max_size`.
    pub fn build<I, S>(corpus: I, max_size: usize) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        assert!(max_size > SPECIAL_TOKENS.len(), "vocab size must exceed the specials");
        let mut freq: HashMap<String, u64> = HashMap::new();
        for text in corpus {
            for tok in tokenize(text.as_ref()) {
                *freq.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(
            ranked
                .into_iter()
                .take(max_size - SPECIAL_TOKENS.len())
                .map(|(t, _)| t),
        );
        Vocab::from_tokens(id_to_token).expect("built vocab is well formed")
    }

    /// Reconstruct from an id-ordered token list (checkpoint reload).
    pub fn from_tokens(id_to_token: Vec<String>) -> Result<Vocab, String> {
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if id_to_token.get(i).map(|t| t.as_str()) != Some(*s) {
                return Err(format!("special token {s} missing at id {i}"));
            }
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(format!("duplicate token {t}"));
            }
        }
        Ok(Vocab {
            id_to_token,
            token_to_id,
        })
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Tokenize and map to ids (unseen tokens become `[UNK]`).
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }
}

/// One agent's prediction for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub agent_id: String,
    pub answer: String,
    pub confidence: f64,
    /// False when the prediction has been nulled (leave-one-out ablation).
    pub present: bool,
}

impl AnswerCandidate {
    pub fn new(agent_id: impl Into<String>, answer: impl Into<String>, confidence: f64) -> Self {
        AnswerCandidate {
            agent_id: agent_id.into(),
            answer: answer.into(),
            confidence,
            present: true,
        }
    }

    /// The nulled form: empty answer, zero confidence, absent.
    pub fn nulled(agent_id: impl Into<String>) -> Self {
        AnswerCandidate {
            agent_id: agent_id.into(),
            answer: String::new(),
            confidence: 0.0,
            present: false,
        }
    }
}

/// The atomic training/evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub qid: String,
    pub question: String,
    pub dataset_id: String,
    pub gold_answers: Vec<String>,
    /// Exactly one candidate per registered agent, in agent slot order.
    pub candidates: Vec<AnswerCandidate>,
}

/// A registered agent: id plus the domain it was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRef {
    pub id: String,
    pub domain: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// An ordered collection of examples sharing one agent registry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub agents: Vec<AgentRef>,
    pub metrics: BTreeMap<String, MetricChoice>,
    pub split: Option<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn agent_ids(&self) -> Vec<&str> {
        self.agents.iter().map(|a| a.id.as_str()).collect()
    }

    pub fn agent_index(&self, id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    /// Home domain per agent slot.
    pub fn agent_domains(&self) -> Vec<&str> {
        self.agents.iter().map(|a| a.domain.as_str()).collect()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    format: String,
    agents: Vec<AgentRef>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metrics: BTreeMap<String, MetricChoice>,
}

#[derive(Serialize, Deserialize)]
struct CandidateLine {
    agent: String,
    answer: String,
    confidence: f64,
    #[serde(default = "default_present", skip_serializing_if = "is_true")]
    present: bool,
}

fn default_present() -> bool {
    true
}

#[allow(clippy::trivially_copy_pass_by_ref)]
fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Serialize, Deserialize)]
struct ExampleLine {
    qid: String,
    question: String,
    dataset: String,
    gold_answers: Vec<String>,
    candidates: Vec<CandidateLine>,
}

/// Load and validate a prediction file. Candidate order within a line is
/// free; slots are re-sorted to header order and frozen.
pub fn load_predictions(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_predictions_str(&text)
}

pub fn load_predictions_str(text: &str) -> Result<Dataset, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| DataError::BadHeader("empty file".into()))?;
    let header: HeaderLine = serde_json::from_str(header_line)
        .map_err(|e| DataError::BadHeader(e.to_string()))?;
    if header.format != FORMAT_VERSION {
        return Err(DataError::BadHeader(format!(
            "unsupported format {:?}, expected {FORMAT_VERSION:?}",
            header.format
        )));
    }
    if header.agents.is_empty() {
        return Err(DataError::BadHeader("no agents registered".into()));
    }
    let mut ids = HashSet::new();
    for a in &header.agents {
        if !ids.insert(a.id.as_str()) {
            return Err(DataError::BadHeader(format!("duplicate agent id {}", a.id)));
        }
    }
    let slot_of: HashMap<&str, usize> = header
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id.as_str(), i))
        .collect();

    let mut examples = Vec::new();
    let mut seen_qids = HashSet::new();
    for (idx, raw) in lines {
        let line = idx + 1; // 1-based for messages
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: ExampleLine = serde_json::from_str(raw).map_err(|e| DataError::Json {
            line,
            msg: e.to_string(),
        })?;
        if parsed.gold_answers.is_empty() {
            return Err(DataError::EmptyGolds { line });
        }
        if !seen_qids.insert(parsed.qid.clone()) {
            return Err(DataError::DuplicateQid {
                line,
                qid: parsed.qid,
            });
        }
        let mut slots: Vec<Option<AnswerCandidate>> = vec![None; header.agents.len()];
        for c in parsed.candidates {
            let Some(&slot) = slot_of.get(c.agent.as_str()) else {
                return Err(DataError::UnknownAgent {
                    line,
                    agent: c.agent,
                });
            };
            if slots[slot].is_some() {
                return Err(DataError::DuplicateAgent {
                    line,
                    agent: c.agent,
                });
            }
            if !(0.0..=1.0).contains(&c.confidence) {
                return Err(DataError::BadConfidence {
                    line,
                    value: c.confidence,
                });
            }
            if !c.present && (!c.answer.is_empty() || c.confidence != 0.0) {
                return Err(DataError::BadNulled {
                    line,
                    agent: c.agent,
                });
            }
            slots[slot] = Some(AnswerCandidate {
                agent_id: c.agent,
                answer: c.answer,
                confidence: c.confidence,
                present: c.present,
            });
        }
        let mut candidates = Vec::with_capacity(slots.len());
        for (slot, c) in slots.into_iter().enumerate() {
            match c {
                Some(c) => candidates.push(c),
                None => {
                    return Err(DataError::MissingAgent {
                        line,
                        agent: header.agents[slot].id.clone(),
                    })
                }
            }
        }
        examples.push(Example {
            qid: parsed.qid,
            question: parsed.question,
            dataset_id: parsed.dataset,
            gold_answers: parsed.gold_answers,
            candidates,
        });
    }
    Ok(Dataset {
        examples,
        agents: header.agents,
        metrics: header.metrics,
        split: None,
    })
}

/// Serialize a dataset back to the prediction-file format. Deterministic:
/// identical datasets produce identical bytes.
pub fn predictions_to_string(dataset: &Dataset) -> String {
    let header = HeaderLine {
        format: FORMAT_VERSION.to_string(),
        agents: dataset.agents.clone(),
        metrics: dataset.metrics.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for ex in &dataset.examples {
        let line = ExampleLine {
            qid: ex.qid.clone(),
            question: ex.question.clone(),
            dataset: ex.dataset_id.clone(),
            gold_answers: ex.gold_answers.clone(),
            candidates: ex
                .candidates
                .iter()
                .map(|c| CandidateLine {
                    agent: c.agent_id.clone(),
                    answer: c.answer.clone(),
                    confidence: c.confidence,
                    present: c.present,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("example serializes"));
        out.push('\n');
    }
    out
}

pub fn save_predictions(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let text = predictions_to_string(dataset);
    let mut f = fs::File::create(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
