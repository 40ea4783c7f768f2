//! Experiment machinery: training, evaluation, ablations, baselines,
//! data-efficiency sweeps, and significance testing.

mod checkpoint;
mod eval;
mod gradcheck_run;
mod optim;
mod stats;
mod sweep;
mod train;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointError, TrainMeta, CHECKPOINT_VERSION,
};
pub use gradcheck_run::{run_gradcheck, GradCheckRunConfig};
pub use eval::{
    ablate_sweep, apply_ablation, baseline_select, evaluate, model_selections, run_baseline,
    AblateSweepReport, RunReport, Strategy,
};
pub use stats::{compare_runs, StatsError, TTestResult, SIGNIFICANCE_LEVEL};
pub use sweep::{efficiency_sweep, subsample, SweepError, SweepRow};
pub use train::{train, TrainConfig};

use thiserror::Error;

use crate::heads::HeadsError;
use crate::input::AssemblyError;
use crate::metrics::MetricsError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at step {step} (lr {lr:.3e}); batch qids {qids:?}")]
    NanLoss {
        step: usize,
        lr: f64,
        qids: Vec<String>,
    },
    #[error("train/dev agent registries differ")]
    RegistryMismatch,
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("example {qid}: {source}")]
    Assembly {
        qid: String,
        #[source]
        source: AssemblyError,
    },
    #[error("example {qid}: {source}")]
    Forward {
        qid: String,
        #[source]
        source: HeadsError,
    },
    #[error("dev evaluation failed: {0}")]
    DevEval(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("cannot ablate every agent")]
    AllAgentsAblated,
    #[error("dataset agent registry does not match the checkpoint")]
    RegistryMismatch,
    #[error("example {qid}: {source}")]
    Assembly {
        qid: String,
        #[source]
        source: AssemblyError,
    },
    #[error("example {qid}: {source}")]
    Forward {
        qid: String,
        #[source]
        source: HeadsError,
    },
    #[error("router_only needs a checkpoint for its agent-selection scores")]
    MissingRouterCheckpoint,
    #[error("worker pool: {0}")]
    Workers(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
