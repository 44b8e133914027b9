//! SGD with momentum and decoupled-from-bias weight decay.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::nn::{Gradients, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Velocity per trainable slice, in [`Parameters::trainable_mut`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &Parameters) -> Self {
        Self {
            velocity: params
                .trainable()
                .iter()
                .map(|s| vec![0.0; s.len()])
                .collect(),
            step: 0,
        }
    }
}

/// `v ← μv + g + wd·p`, `p ← p − lr·v`; the decay term only applies to
/// convolution kernels.
pub fn sgd_step(
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut OptimizerState,
    cfg: &SgdConfig,
) -> Result<(), TrainError> {
    let g = grads.slices();
    let mut p = params.trainable_mut();
    if g.len() != p.len() || state.velocity.len() != p.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} parameter slices, {} gradient slices, {} velocity slices",
            p.len(),
            g.len(),
            state.velocity.len()
        )));
    }
    for (((ps, decays), gs), vs) in p.iter_mut().zip(&g).zip(&mut state.velocity) {
        if ps.len() != gs.len() || ps.len() != vs.len() {
            return Err(TrainError::ShapeMismatch("slice length".into()));
        }
        let wd = if *decays { cfg.weight_decay } else { 0.0 };
        for ((x, &gr), v) in ps.iter_mut().zip(gs.iter()).zip(vs.iter_mut()) {
            *v = cfg.momentum * *v + gr + wd * *x;
            *x -= cfg.learning_rate * *v;
        }
    }
    state.step += 1;
    Ok(())
}
