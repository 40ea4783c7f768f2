//! Central-difference gradient checking.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;

use super::{NodeId, Tape, Tensor, TensorError};
use crate::rng::stream;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central difference step.
    pub step: f64,
    /// Relative error tolerance for a pass.
    pub tolerance: f64,
    /// Number of scalar parameters to sample.
    pub samples: usize,
    pub seed: u64,
    /// Test hook: offset added to the first sampled analytic gradient so
    /// failure handling can be exercised end to end.
    pub tamper: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            tolerance: 1e-4,
            samples: 200,
            seed: 0,
            tamper: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    /// The entry with the worst relative error, if any.
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compare analytic gradients of a scalar-valued forward function against
/// central finite differences on randomly sampled parameter coordinates.
///
/// `forward` must be deterministic for fixed parameters; it is evaluated
/// twice at the initial point and any difference is an error.
pub fn grad_check<F>(
    params: &[(String, Tensor)],
    forward: F,
    cfg: &GradCheckConfig,
) -> Result<GradReport, TensorError>
where
    F: Fn(&mut Tape, &BTreeMap<String, NodeId>) -> Result<NodeId, TensorError>,
{
    assert!(cfg.step > 0.0, "grad_check step must be positive");

    let eval = |current: &[(String, Tensor)]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let mut map = BTreeMap::new();
        for (name, t) in current {
            map.insert(name.clone(), tape.constant(t.clone()));
        }
        let loss = forward(&mut tape, &map)?;
        if !tape.value(loss).is_scalar() {
            return Err(TensorError::NotScalar {
                shape: tape.value(loss).shape().to_vec(),
            });
        }
        Ok(tape.scalar_value(loss))
    };

    let base = eval(params)?;
    let again = eval(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(TensorError::NonDeterministicForward {
            first: base,
            second: again,
        });
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let mut map = BTreeMap::new();
    for (name, t) in params {
        map.insert(name.clone(), tape.leaf(t.clone().with_grad()));
    }
    let loss = forward(&mut tape, &map)?;
    tape.backward(loss)?;
    let analytic: BTreeMap<String, Vec<f64>> = params
        .iter()
        .map(|(name, _)| {
            let g = tape
                .grad(map[name])
                .expect("leaf with grad always has a gradient after backward")
                .to_vec();
            (name.clone(), g)
        })
        .collect();

    // Sample coordinates without replacement (all of them if few enough).
    let total: usize = params.iter().map(|(_, t)| t.numel()).sum();
    let count = cfg.samples.min(total);
    let mut rng = stream(cfg.seed, &["grad-check"]);
    let mut picked: Vec<usize> = if count == total {
        (0..total).collect()
    } else {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let c = rng.gen_range(0..total);
            if seen.insert(c) {
                out.push(c);
            }
        }
        out
    };
    picked.sort_unstable();

    let locate = |flat: usize| -> (usize, usize) {
        let mut off = flat;
        for (pi, (_, t)) in params.iter().enumerate() {
            if off < t.numel() {
                return (pi, off);
            }
            off -= t.numel();
        }
        unreachable!("flat coordinate within total")
    };

    let mut entries = Vec::with_capacity(count);
    let mut scratch: Vec<(String, Tensor)> = params.to_vec();
    for (k, &flat) in picked.iter().enumerate() {
        let (pi, idx) = locate(flat);
        let original = scratch[pi].1.data()[idx];

        scratch[pi].1.data_mut()[idx] = original + cfg.step;
        let plus = eval(&scratch)?;
        scratch[pi].1.data_mut()[idx] = original - cfg.step;
        let minus = eval(&scratch)?;
        scratch[pi].1.data_mut()[idx] = original;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let mut a = analytic[&scratch[pi].0][idx];
        if k == 0 {
            if let Some(delta) = cfg.tamper {
                a += delta;
            }
        }
        entries.push(GradCheckEntry {
            param: scratch[pi].0.clone(),
            index: idx,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }

    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradReport {
        checked: entries.len(),
        max_rel_error,
        tolerance: cfg.tolerance,
        passed: max_rel_error <= cfg.tolerance,
        entries,
    })
}
