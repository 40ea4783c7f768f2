//! Answer selection over pools of expert question-answering agents.
//!
//! Given a question and one (answer, confidence) candidate per agent, a small
//! transformer encoder with a learned confidence embedding scores every
//! candidate and picks the best one. Two heads are trained jointly: per-agent
//! in-domain classifiers on the `[CLS]` state and an answer-selection head
//! over the `[ANS]` states. The crate also ships a synthetic benchmark
//! generator (simulated agents with controllable accuracy and calibration)
//! and the experiment harness used to train, evaluate, ablate, and compare
//! models.

pub mod data;
pub mod encoder;
pub mod input;
pub mod harness;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod tensor;
