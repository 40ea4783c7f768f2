//! Evaluation, leave-one-out ablation, and the non-learned baselines.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::EvalError;
use crate::data::{Dataset, Example, Vocab};
use crate::heads::select_answer;
use crate::input::assemble;
use crate::metrics::{self, MetricsReport};
use crate::model::{run_example, ModelConfig, ModelWeights};
use crate::simulator::first_correct_slot;

/// Everything one evaluation reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metrics: MetricsReport,
    /// Fraction of examples whose selected candidate is correct.
    pub selection_accuracy: f64,
    /// Fraction of questions routed to their home-domain agent.
    pub in_domain_selection_rate: f64,
    pub per_domain_in_domain_rate: BTreeMap<String, f64>,
    pub per_agent_chosen_rate: BTreeMap<String, f64>,
    pub loss_curve: Vec<f64>,
    /// Hardware-dependent, excluded from serialized reports so fixed seeds
    /// give byte-identical files.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Null the listed agents' predictions on every example (no retraining).
pub fn apply_ablation(data: &Dataset, ablated: &BTreeSet<String>) -> Dataset {
    let mut out = data.clone();
    if ablated.is_empty() {
        return out;
    }
    for ex in &mut out.examples {
        for c in &mut ex.candidates {
            if ablated.contains(&c.agent_id) {
                *c = crate::data::AnswerCandidate::nulled(c.agent_id.clone());
            }
        }
    }
    out
}

/// Model forward over a whole dataset: the selected slot and the agent
/// selection probabilities per example. With `workers > 1` examples fan out
/// to a thread pool; results merge in example order either way.
pub fn model_selections(
    weights: &ModelWeights,
    cfg: &ModelConfig,
    vocab: &Vocab,
    data: &Dataset,
    workers: usize,
) -> Result<Vec<(usize, Vec<f64>)>, EvalError> {
    let run_one = |ex: &Example| -> Result<(usize, Vec<f64>), EvalError> {
        let input = assemble(ex, vocab, cfg.encoder.max_len).map_err(|source| {
            EvalError::Assembly {
                qid: ex.qid.clone(),
                source,
            }
        })?;
        let input = input.shrunk(input.length);
        let (probs, logits) =
            run_example(weights, cfg, &input).map_err(|source| EvalError::Forward {
                qid: ex.qid.clone(),
                source,
            })?;
        let slot = select_answer(&logits).map_err(|source| EvalError::Forward {
            qid: ex.qid.clone(),
            source,
        })?;
        Ok((slot, probs))
    };
    if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| EvalError::Workers(e.to_string()))?;
        pool.install(|| data.examples.par_iter().map(run_one).collect())
    } else {
        data.examples.iter().map(run_one).collect()
    }
}

fn build_report(
    data: &Dataset,
    selections: &[usize],
    theta: f64,
    loss_curve: Vec<f64>,
    started: Instant,
) -> Result<RunReport, EvalError> {
    let metrics = metrics::evaluate(data, selections, &data.metrics, theta)?;
    let n = data.len().max(1) as f64;

    let mut in_domain = 0usize;
    let mut per_domain: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut chosen: BTreeMap<String, usize> = data
        .agents
        .iter()
        .map(|a| (a.id.clone(), 0usize))
        .collect();
    for (ex, &slot) in data.examples.iter().zip(selections) {
        let agent = &data.agents[slot];
        *chosen.get_mut(&agent.id).expect("registered agent") += 1;
        let entry = per_domain.entry(ex.dataset_id.clone()).or_insert((0, 0));
        entry.0 += 1;
        if agent.domain == ex.dataset_id {
            entry.1 += 1;
            in_domain += 1;
        }
    }
    Ok(RunReport {
        selection_accuracy: metrics.overall.accuracy,
        in_domain_selection_rate: in_domain as f64 / n,
        per_domain_in_domain_rate: per_domain
            .into_iter()
            .map(|(d, (count, hits))| (d, hits as f64 / count.max(1) as f64))
            .collect(),
        per_agent_chosen_rate: chosen
            .into_iter()
            .map(|(a, c)| (a, c as f64 / n))
            .collect(),
        metrics,
        loss_curve,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

fn check_registry(ckpt: &Checkpoint, data: &Dataset) -> Result<(), EvalError> {
    if ckpt.model_cfg.agents != data.agents {
        return Err(EvalError::RegistryMismatch);
    }
    Ok(())
}

/// Evaluate a checkpoint, optionally with some agents' predictions nulled.
/// Ablation happens at the input: the checkpoint is untouched and no
/// retraining occurs.
pub fn evaluate(
    ckpt: &Checkpoint,
    data: &Dataset,
    ablated: &BTreeSet<String>,
    workers: usize,
) -> Result<RunReport, EvalError> {
    let started = Instant::now();
    check_registry(ckpt, data)?;
    for agent in ablated {
        if ckpt.model_cfg.agents.iter().all(|a| &a.id != agent) {
            return Err(EvalError::UnknownAgent(agent.clone()));
        }
    }
    if ablated.len() >= ckpt.model_cfg.agents.len() {
        return Err(EvalError::AllAgentsAblated);
    }
    let data = apply_ablation(data, ablated);
    let selections: Vec<usize> =
        model_selections(&ckpt.weights, &ckpt.model_cfg, &ckpt.vocab, &data, workers)?
            .into_iter()
            .map(|(slot, _)| slot)
            .collect();
    build_report(
        &data,
        &selections,
        ckpt.theta(),
        ckpt.meta.loss_curve.clone(),
        started,
    )
}

/// Dev-set metrics during training (no report machinery).
pub(crate) fn quick_metrics(
    weights: &ModelWeights,
    cfg: &ModelConfig,
    vocab: &Vocab,
    data: &Dataset,
    theta: f64,
) -> Result<MetricsReport, super::TrainError> {
    let selections: Vec<usize> = model_selections(weights, cfg, vocab, data, 1)
        .map_err(|e| super::TrainError::DevEval(e.to_string()))?
        .into_iter()
        .map(|(slot, _)| slot)
        .collect();
    metrics::evaluate(data, &selections, &data.metrics, theta)
        .map_err(|e| super::TrainError::DevEval(e.to_string()))
}

/// Selection strategies that need no trained answer-selection model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    /// Picks a labeled-correct candidate whenever one exists; its accuracy
    /// is exactly one minus the unsolvable rate.
    Oracle,
    /// Trusts the reported confidences: argmax confidence.
    ConfArgmax,
    /// Router: argmax agent-selection probability, ignoring the answers and
    /// confidences entirely.
    RouterOnly,
    /// Always the one agent (falls back to the lowest present slot when it
    /// is ablated).
    FixedAgent(String),
}

impl Strategy {
    /// Parse a CLI name: oracle | conf_argmax | router_only | fixed:<agent>.
    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "oracle" => Some(Strategy::Oracle),
            "conf_argmax" => Some(Strategy::ConfArgmax),
            "router_only" => Some(Strategy::RouterOnly),
            _ => s.strip_prefix("fixed:").map(|a| Strategy::FixedAgent(a.to_string())),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Strategy::Oracle => "oracle".into(),
            Strategy::ConfArgmax => "conf_argmax".into(),
            Strategy::RouterOnly => "router_only".into(),
            Strategy::FixedAgent(a) => format!("fixed:{a}"),
        }
    }
}

fn first_present(example: &Example) -> Result<usize, EvalError> {
    example
        .candidates
        .iter()
        .position(|c| c.present)
        .ok_or(EvalError::AllAgentsAblated)
}

/// One strategy decision for one example. Router scores come from the
/// caller when the strategy needs them.
pub fn baseline_select(
    strategy: &Strategy,
    example: &Example,
    theta: f64,
    agsen_probs: Option<&[f64]>,
) -> Result<usize, EvalError> {
    match strategy {
        Strategy::Oracle => match first_correct_slot(example, theta) {
            Some(slot) => Ok(slot),
            None => first_present(example),
        },
        Strategy::ConfArgmax => {
            let mut best: Option<(usize, f64)> = None;
            for (i, c) in example.candidates.iter().enumerate() {
                if c.present && best.map(|(_, b)| c.confidence > b).unwrap_or(true) {
                    best = Some((i, c.confidence));
                }
            }
            best.map(|(i, _)| i).ok_or(EvalError::AllAgentsAblated)
        }
        Strategy::RouterOnly => {
            let probs = agsen_probs.ok_or(EvalError::MissingRouterCheckpoint)?;
            let mut best: Option<(usize, f64)> = None;
            for (i, c) in example.candidates.iter().enumerate() {
                if c.present && best.map(|(_, b)| probs[i] > b).unwrap_or(true) {
                    best = Some((i, probs[i]));
                }
            }
            best.map(|(i, _)| i).ok_or(EvalError::AllAgentsAblated)
        }
        Strategy::FixedAgent(id) => {
            let slot = example
                .candidates
                .iter()
                .position(|c| &c.agent_id == id)
                .ok_or_else(|| EvalError::UnknownAgent(id.clone()))?;
            if example.candidates[slot].present {
                Ok(slot)
            } else {
                first_present(example)
            }
        }
    }
}

/// Evaluate one baseline strategy over a dataset. `router_ckpt` supplies the
/// agent-selection scores for the router strategy.
pub fn run_baseline(
    strategy: &Strategy,
    data: &Dataset,
    theta: f64,
    router_ckpt: Option<&Checkpoint>,
    workers: usize,
) -> Result<RunReport, EvalError> {
    let started = Instant::now();
    let probs: Option<Vec<Vec<f64>>> = match strategy {
        Strategy::RouterOnly => {
            let ckpt = router_ckpt.ok_or(EvalError::MissingRouterCheckpoint)?;
            check_registry(ckpt, data)?;
            Some(
                model_selections(&ckpt.weights, &ckpt.model_cfg, &ckpt.vocab, data, workers)?
                    .into_iter()
                    .map(|(_, p)| p)
                    .collect(),
            )
        }
        _ => None,
    };
    let mut selections = Vec::with_capacity(data.len());
    for (i, ex) in data.examples.iter().enumerate() {
        let p = probs.as_ref().map(|p| p[i].as_slice());
        selections.push(baseline_select(strategy, ex, theta, p)?);
    }
    build_report(data, &selections, theta, Vec::new(), started)
}

/// Leave-one-out sweep: the full evaluation plus one evaluation per agent
/// with that agent's predictions nulled, all from the same checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateSweepReport {
    pub full: RunReport,
    pub ablated: BTreeMap<String, RunReport>,
}

pub fn ablate_sweep(
    ckpt: &Checkpoint,
    data: &Dataset,
    workers: usize,
) -> Result<AblateSweepReport, EvalError> {
    let full = evaluate(ckpt, data, &BTreeSet::new(), workers)?;
    let mut ablated = BTreeMap::new();
    for agent in &ckpt.model_cfg.agents {
        let set: BTreeSet<String> = [agent.id.clone()].into();
        ablated.insert(agent.id.clone(), evaluate(ckpt, data, &set, workers)?);
    }
    Ok(AblateSweepReport { full, ablated })
}
