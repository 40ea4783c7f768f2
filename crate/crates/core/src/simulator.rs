//! Synthetic multi-domain benchmarks with simulated expert agents.
//!
//! Each domain owns a disjoint pseudo-word vocabulary, split into answer
//! entities (a unique leading key token plus body tokens), question style
//! tokens, and filler. Questions are templated around the gold entity's key
//! token, so the gold is recoverable from the question surface and domains
//! are distinguishable by style. Agents answer with the gold (possibly
//! boundary-perturbed) or an in-domain distractor, and report a confidence
//! from a per-agent calibration model — which may be arbitrarily
//! miscalibrated, the whole point of learning from confidence instead of
//! trusting it.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    AgentRef, AnswerCandidate, Dataset, Example, MetricChoice, Split,
};
use crate::metrics::is_correct;
use crate::rng::stream;

const ENTITY_POOL: usize = 40;
const BODY_POOL: usize = 60;
const STYLE_POOL: usize = 12;
const FILLER_POOL: usize = 24;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("benchmark spec declares no domains")]
    EmptyDomains,
    #[error("benchmark spec declares no agents")]
    EmptyAgents,
    #[error("duplicate {what} id {id}")]
    DuplicateId { what: &'static str, id: String },
    #[error("agent {agent}: home domain {domain} is not declared")]
    UnknownHomeDomain { agent: String, domain: String },
    #[error("agent {agent}: no accuracy entry for domain {domain}")]
    MissingAccuracy { agent: String, domain: String },
    #[error("{what} = {value} outside [0, 1]")]
    BadProbability { what: String, value: f64 },
    #[error("domain {domain}: answer length range {min}..={max} must sit inside 1..=6")]
    BadAnswerLen {
        domain: String,
        min: usize,
        max: usize,
    },
}

/// Where the gold entity's key token sits inside the question template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateFamily {
    KeyEarly,
    KeyMiddle,
    KeyLate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: String,
    pub template_family: TemplateFamily,
    pub vocab_seed: u64,
    /// Gold answer length range in tokens, inside 1..=6.
    pub answer_len_min: usize,
    pub answer_len_max: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
}

/// Confidence model: sigmoid(slope * z + bias) with z = +1 on a correct
/// draw and -1 otherwise, plus uniform jitter, clamped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub slope: f64,
    pub bias: f64,
    pub jitter: f64,
}

impl Calibration {
    pub fn confidence(&self, correct: bool, rng: &mut ChaCha8Rng) -> f64 {
        let z = if correct { 1.0 } else { -1.0 };
        let base = 1.0 / (1.0 + (-(self.slope * z + self.bias)).exp());
        let jitter = if self.jitter > 0.0 {
            rng.gen_range(-self.jitter..=self.jitter)
        } else {
            0.0
        };
        (base + jitter).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: String,
    pub home_domain: String,
    /// Probability of answering with the gold, per domain.
    pub accuracy: BTreeMap<String, f64>,
    /// Probability that a correct answer is truncated or extended by one
    /// token (imprecise answer boundaries).
    pub boundary_noise: f64,
    pub calibration: Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub domains: Vec<DomainSpec>,
    pub agents: Vec<AgentProfile>,
    #[serde(default)]
    pub metrics: BTreeMap<String, MetricChoice>,
    pub seed: u64,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.domains.is_empty() {
            return Err(SimError::EmptyDomains);
        }
        if self.agents.is_empty() {
            return Err(SimError::EmptyAgents);
        }
        let mut seen = HashSet::new();
        for d in &self.domains {
            if !seen.insert(&d.id) {
                return Err(SimError::DuplicateId {
                    what: "domain",
                    id: d.id.clone(),
                });
            }
            if d.answer_len_min < 1 || d.answer_len_max > 6 || d.answer_len_min > d.answer_len_max
            {
                return Err(SimError::BadAnswerLen {
                    domain: d.id.clone(),
                    min: d.answer_len_min,
                    max: d.answer_len_max,
                });
            }
        }
        let mut seen = HashSet::new();
        for a in &self.agents {
            if !seen.insert(&a.id) {
                return Err(SimError::DuplicateId {
                    what: "agent",
                    id: a.id.clone(),
                });
            }
            if !self.domains.iter().any(|d| d.id == a.home_domain) {
                return Err(SimError::UnknownHomeDomain {
                    agent: a.id.clone(),
                    domain: a.home_domain.clone(),
                });
            }
            for d in &self.domains {
                match a.accuracy.get(&d.id) {
                    None => {
                        return Err(SimError::MissingAccuracy {
                            agent: a.id.clone(),
                            domain: d.id.clone(),
                        })
                    }
                    Some(&p) if !(0.0..=1.0).contains(&p) => {
                        return Err(SimError::BadProbability {
                            what: format!("accuracy[{}] of agent {}", d.id, a.id),
                            value: p,
                        })
                    }
                    _ => {}
                }
            }
            for (what, v) in [
                ("boundary_noise", a.boundary_noise),
                ("jitter", a.calibration.jitter),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(SimError::BadProbability {
                        what: format!("{what} of agent {}", a.id),
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn agent_refs(&self) -> Vec<AgentRef> {
        self.agents
            .iter()
            .map(|a| AgentRef {
                id: a.id.clone(),
                domain: a.home_domain.clone(),
            })
            .collect()
    }
}

/// Pre-generated word pools for one domain.
#[derive(Debug, Clone)]
pub struct DomainWorld {
    pub entities: Vec<Vec<String>>,
    pub bodies: Vec<String>,
    pub styles: Vec<String>,
    pub fillers: Vec<String>,
}

fn pseudo_word(prefix: &str, rng: &mut ChaCha8Rng) -> String {
    const CONSONANTS: [&str; 14] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
    ];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let syllables = rng.gen_range(2..=3);
    let mut w = String::from(prefix);
    for _ in 0..syllables {
        w.push_str(CONSONANTS[rng.gen_range(0..CONSONANTS.len())]);
        w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    w
}

impl DomainWorld {
    pub fn build(domain: &DomainSpec) -> DomainWorld {
        let prefix: String = domain
            .id
            .to_lowercase()
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect();
        let mut rng = stream(domain.vocab_seed, &["words", &domain.id]);
        let mut words = Vec::new();
        let mut seen = HashSet::new();
        while words.len() < ENTITY_POOL + BODY_POOL + STYLE_POOL + FILLER_POOL {
            let w = pseudo_word(&prefix, &mut rng);
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let keys: Vec<String> = words[..ENTITY_POOL].to_vec();
        let bodies: Vec<String> = words[ENTITY_POOL..ENTITY_POOL + BODY_POOL].to_vec();
        let styles: Vec<String> =
            words[ENTITY_POOL + BODY_POOL..ENTITY_POOL + BODY_POOL + STYLE_POOL].to_vec();
        let fillers: Vec<String> = words[ENTITY_POOL + BODY_POOL + STYLE_POOL..].to_vec();

        let mut rng = stream(domain.vocab_seed, &["entities", &domain.id]);
        let entities = keys
            .into_iter()
            .map(|key| {
                let len = rng.gen_range(domain.answer_len_min..=domain.answer_len_max);
                let mut toks = vec![key];
                for _ in 1..len {
                    toks.push(bodies[rng.gen_range(0..bodies.len())].clone());
                }
                toks
            })
            .collect();
        DomainWorld {
            entities,
            bodies,
            styles,
            fillers,
        }
    }

    fn entity_text(&self, idx: usize) -> String {
        self.entities[idx].join(" ")
    }
}

/// Deterministic benchmark generator: one instance per spec.
pub struct Generator {
    spec: BenchmarkSpec,
    worlds: BTreeMap<String, DomainWorld>,
}

#[derive(Debug, Clone)]
pub struct GeneratedBenchmark {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

impl GeneratedBenchmark {
    pub fn splits(&self) -> [(&'static str, &Dataset); 3] {
        [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
        ]
    }
}

impl Generator {
    pub fn new(spec: BenchmarkSpec) -> Result<Generator, SimError> {
        spec.validate()?;
        let worlds = spec
            .domains
            .iter()
            .map(|d| (d.id.clone(), DomainWorld::build(d)))
            .collect();
        Ok(Generator { spec, worlds })
    }

    pub fn spec(&self) -> &BenchmarkSpec {
        &self.spec
    }

    /// One agent's candidate for one example, from the candidate's own
    /// substream so nulling one agent never shifts another's draws.
    pub fn simulate_agent(
        &self,
        profile: &AgentProfile,
        example: &Example,
        gold_entity: usize,
        rng: &mut ChaCha8Rng,
    ) -> AnswerCandidate {
        let world = &self.worlds[&example.dataset_id];
        let accuracy = profile.accuracy[&example.dataset_id];
        let correct = rng.gen::<f64>() < accuracy;
        let answer = if correct {
            let mut toks = world.entities[gold_entity].clone();
            if profile.boundary_noise > 0.0 && rng.gen::<f64>() < profile.boundary_noise {
                let extend = toks.len() < 2 || rng.gen::<bool>();
                if extend {
                    toks.push(world.bodies[rng.gen_range(0..world.bodies.len())].clone());
                } else {
                    toks.pop();
                }
            }
            toks.join(" ")
        } else {
            let mut pick = rng.gen_range(0..world.entities.len() - 1);
            if pick >= gold_entity {
                pick += 1;
            }
            world.entity_text(pick)
        };
        let confidence = profile.calibration.confidence(correct, rng);
        AnswerCandidate::new(profile.id.clone(), answer, confidence)
    }

    fn question(&self, domain: &DomainSpec, gold_key: &str, rng: &mut ChaCha8Rng) -> String {
        let world = &self.worlds[&domain.id];
        let style1 = &world.styles[rng.gen_range(0..world.styles.len())];
        let style2 = &world.styles[rng.gen_range(0..world.styles.len())];
        let fill1 = &world.fillers[rng.gen_range(0..world.fillers.len())];
        let fill2 = &world.fillers[rng.gen_range(0..world.fillers.len())];
        let toks: Vec<&str> = match domain.template_family {
            TemplateFamily::KeyEarly => vec![style1, gold_key, style2, fill1, fill2],
            TemplateFamily::KeyMiddle => vec![style1, fill1, gold_key, style2, fill2],
            TemplateFamily::KeyLate => vec![style1, fill1, style2, fill2, gold_key],
        };
        format!("{} ?", toks.join(" "))
    }

    fn generate_split(&self, split: Split, label: &str) -> Dataset {
        let mut examples = Vec::new();
        for domain in &self.spec.domains {
            let world = &self.worlds[&domain.id];
            let size = match split {
                Split::Train => domain.train_size,
                Split::Dev => domain.dev_size,
                Split::Test => domain.test_size,
            };
            for i in 0..size {
                let qid = format!("{}-{}-{:05}", domain.id, label, i);
                let mut qrng = stream(self.spec.seed, &["question", &domain.id, label, &qid]);
                let gold_entity = qrng.gen_range(0..world.entities.len());
                let question = self.question(domain, &world.entities[gold_entity][0], &mut qrng);
                let mut example = Example {
                    qid: qid.clone(),
                    question,
                    dataset_id: domain.id.clone(),
                    gold_answers: vec![world.entity_text(gold_entity)],
                    candidates: Vec::with_capacity(self.spec.agents.len()),
                };
                for profile in &self.spec.agents {
                    let mut arng = stream(self.spec.seed, &["agent-sim", &profile.id, &qid]);
                    let candidate =
                        self.simulate_agent(profile, &example, gold_entity, &mut arng);
                    example.candidates.push(candidate);
                }
                examples.push(example);
            }
        }
        Dataset {
            examples,
            agents: self.spec.agent_refs(),
            metrics: self.spec.metrics.clone(),
            split: Some(split),
        }
    }

    pub fn generate(&self) -> GeneratedBenchmark {
        GeneratedBenchmark {
            train: self.generate_split(Split::Train, "train"),
            dev: self.generate_split(Split::Dev, "dev"),
            test: self.generate_split(Split::Test, "test"),
        }
    }
}

/// Convenience: validate, build, and generate in one call.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<GeneratedBenchmark, SimError> {
    Ok(Generator::new(spec.clone())?.generate())
}

/// Per-domain and overall unsolvable statistics: the fraction of examples
/// where no candidate clears the correctness threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub count: usize,
    pub unsolvable_count: usize,
    pub unsolvable_rate: f64,
    pub per_domain: BTreeMap<String, DomainOracle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainOracle {
    pub count: usize,
    pub unsolvable_count: usize,
    pub unsolvable_rate: f64,
}

/// Lowest slot whose present candidate clears the threshold.
pub fn first_correct_slot(example: &Example, theta: f64) -> Option<usize> {
    example
        .candidates
        .iter()
        .position(|c| c.present && is_correct(&c.answer, &example.gold_answers, theta))
}

pub fn describe_oracle(dataset: &Dataset, theta: f64) -> OracleReport {
    let mut per: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut unsolvable = 0usize;
    for ex in &dataset.examples {
        let entry = per.entry(ex.dataset_id.clone()).or_insert((0, 0));
        entry.0 += 1;
        if first_correct_slot(ex, theta).is_none() {
            entry.1 += 1;
            unsolvable += 1;
        }
    }
    OracleReport {
        count: dataset.len(),
        unsolvable_count: unsolvable,
        unsolvable_rate: unsolvable as f64 / dataset.len().max(1) as f64,
        per_domain: per
            .into_iter()
            .map(|(k, (count, u))| {
                (
                    k,
                    DomainOracle {
                        count,
                        unsolvable_count: u,
                        unsolvable_rate: u as f64 / count.max(1) as f64,
                    },
                )
            })
            .collect(),
    }
}

/// The reference synthetic benchmark with `n >= 4` domains, one agent per
/// domain:
///
/// - agents `a0` and `a1` are honest: strong at home (0.9), confidence
///   tracks correctness;
/// - agent `a3` is the minority-domain story: weak at home (0.4),
///   boundary-imprecise, and overconfident regardless of correctness, while
///   the out-of-domain agent `a1` covers `d3` at 0.7 with honest
///   confidence;
/// - every other agent is strong at home but reports an uninformative
///   constant confidence, so routing its domain must come from the question
///   surface rather than the scores.
pub fn standard_benchmark_n(
    n_domains: usize,
    train_per_domain: usize,
    dev_per_domain: usize,
    test_per_domain: usize,
    seed: u64,
) -> BenchmarkSpec {
    assert!(n_domains >= 4, "the reference benchmark needs >= 4 domains");
    let families = [
        TemplateFamily::KeyEarly,
        TemplateFamily::KeyMiddle,
        TemplateFamily::KeyLate,
    ];
    let domains: Vec<DomainSpec> = (0..n_domains)
        .map(|i| DomainSpec {
            id: format!("d{i}"),
            template_family: families[i % families.len()],
            vocab_seed: seed.wrapping_add(i as u64),
            answer_len_min: 1,
            answer_len_max: if i == 3 { 4 } else { 3 },
            train_size: train_per_domain,
            dev_size: dev_per_domain,
            test_size: test_per_domain,
        })
        .collect();

    let honest = Calibration {
        slope: 5.0,
        bias: -2.5,
        jitter: 0.03,
    };
    let flat = Calibration {
        slope: 0.0,
        bias: 0.0,
        jitter: 0.03,
    };
    let agents: Vec<AgentProfile> = (0..n_domains)
        .map(|i| {
            let mut accuracy = BTreeMap::new();
            for d in 0..n_domains {
                let p = match (i, d) {
                    _ if i == d && i == 3 => 0.4,
                    _ if i == d => 0.9,
                    (1, 3) => 0.7,
                    _ if i == 3 => 0.05,
                    _ => 0.07,
                };
                accuracy.insert(format!("d{d}"), p);
            }
            AgentProfile {
                id: format!("a{i}"),
                home_domain: format!("d{i}"),
                accuracy,
                boundary_noise: if i == 3 { 0.25 } else { 0.05 },
                calibration: match i {
                    0 | 1 => honest,
                    3 => Calibration {
                        slope: 0.3,
                        bias: 2.2,
                        jitter: 0.03,
                    },
                    _ => flat,
                },
            }
        })
        .collect();

    let mut metrics = BTreeMap::new();
    for i in 0..n_domains {
        let metric = match i {
            2 => MetricChoice::Accuracy,
            3 => MetricChoice::RougeL,
            _ => MetricChoice::TokenF1,
        };
        metrics.insert(format!("d{i}"), metric);
    }

    BenchmarkSpec {
        domains,
        agents,
        metrics,
        seed,
    }
}

/// Four-domain form of [`standard_benchmark_n`].
pub fn standard_benchmark(
    train_per_domain: usize,
    dev_per_domain: usize,
    test_per_domain: usize,
    seed: u64,
) -> BenchmarkSpec {
    standard_benchmark_n(4, train_per_domain, dev_per_domain, test_per_domain, seed)
}
