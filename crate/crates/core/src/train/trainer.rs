//! Deterministic mini-batch training with per-epoch validation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::sgd::{sgd_step, OptimizerState, SgdConfig};
use super::TrainError;
use crate::features::{SamplePair, INPUT_CHANNELS, TIER};
use crate::nn::{
    backward, forward, update_running_stats, Mode, NetworkSpec, NnError, Parameters, Tensor4,
};
use crate::objective::{batch_loss, LossConfig};
use crate::raster::format_sig9;
use crate::rng::{derive_seed, rng_from_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Feed the tier channel; when off the network sees only the two sections.
    pub tier_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        Self {
            learning_rate: sgd.learning_rate,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            batch_size: 5,
            epochs: 500,
            seed: 0,
            loss: LossConfig::default(),
            tier_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config(format!(
                "learning_rate {} batch_size {} epochs {}",
                self.learning_rate, self.batch_size, self.epochs
            )));
        }
        self.loss.validate()?;
        Ok(())
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn input_channels(&self) -> usize {
        if self.tier_enabled {
            INPUT_CHANNELS
        } else {
            INPUT_CHANNELS - 1
        }
    }
}

/// Network for this configuration's input channel count.
pub fn network_for(
    cfg: &TrainConfig,
    widths: &[usize],
    residual_blocks: usize,
) -> Result<NetworkSpec, TrainError> {
    Ok(NetworkSpec::ersinvnet(
        cfg.input_channels(),
        widths,
        residual_blocks,
    )?)
}

/// Stacks samples into input and target tensors; the tier channel is dropped
/// when `tier_enabled` is false.
pub fn batch_tensors(
    samples: &[&SamplePair],
    tier_enabled: bool,
) -> Result<(Tensor4, Tensor4), TrainError> {
    let first = samples
        .first()
        .ok_or_else(|| TrainError::ShapeMismatch("empty batch".into()))?;
    let (h, w) = first.dims();
    let channels: Vec<usize> = (0..INPUT_CHANNELS)
        .filter(|&c| tier_enabled || c != TIER)
        .collect();
    let mut x = Vec::with_capacity(samples.len() * channels.len() * h * w);
    let mut y = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.dims() != (h, w) {
            return Err(TrainError::ShapeMismatch(format!(
                "sample {} has dims {:?}",
                s.meta.index,
                s.dims()
            )));
        }
        for &c in &channels {
            x.extend_from_slice(s.input[c].as_slice());
        }
        y.extend_from_slice(s.target.as_slice());
    }
    Ok((
        Tensor4::from_vec([samples.len(), channels.len(), h, w], x)?,
        Tensor4::from_vec([samples.len(), 1, h, w], y)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    /// Eval-mode mean loss on the validation split, if there is one.
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    /// Parameters after the epoch with the lowest validation loss (training
    /// loss when there is no validation split).
    pub best_params: Parameters,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
    pub steps: u64,
}

impl TrainOutcome {
    pub fn curve_csv(&self) -> String {
        curve_csv(&self.curve)
    }
}

pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,valid_loss\n");
    for r in curve {
        s.push_str(&format!(
            "{},{},{}\n",
            r.epoch,
            format_sig9(r.train_loss),
            r.valid_loss.map(format_sig9).unwrap_or_default()
        ));
    }
    s
}

/// Mean eval-mode loss over `samples`.
pub fn mean_loss(
    spec: &NetworkSpec,
    params: &Parameters,
    samples: &[SamplePair],
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Config("mean loss over no samples".into()));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(cfg.batch_size.max(1)) {
        let refs: Vec<&SamplePair> = chunk.iter().collect();
        let (x, y) = batch_tensors(&refs, cfg.tier_enabled)?;
        let (pred, _) = forward(spec, params, &x, Mode::Eval)?;
        total += batch_loss(&pred, &y, &cfg.loss)?.0 * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

fn nan_context(epoch: usize, step: usize, e: NnError) -> TrainError {
    match e {
        NnError::NaNDetected { layer } => TrainError::NaNDetected {
            epoch,
            step,
            detail: format!("forward pass, layer {layer}"),
        },
        other => TrainError::Nn(other),
    }
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
///
/// The sample order of epoch `e` is a shuffle drawn from
/// `derive_seed(derive_seed(seed, EPOCH), e)`, so runs are reproducible bit
/// for bit.
pub fn train(
    train_set: &[SamplePair],
    valid_set: &[SamplePair],
    spec: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with_progress(train_set, valid_set, spec, cfg, &mut |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    train_set: &[SamplePair],
    valid_set: &[SamplePair],
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    if spec.input_channels != cfg.input_channels() {
        return Err(TrainError::ShapeMismatch(format!(
            "network takes {} channels, configuration feeds {}",
            spec.input_channels,
            cfg.input_channels()
        )));
    }
    let (h, w) = train_set[0].dims();
    spec.output_dims(h, w)?;

    let sgd = cfg.sgd();
    let mut params = Parameters::init(spec, cfg.seed);
    let mut state = OptimizerState::new(&params);
    let mut best: Option<(f64, usize, Parameters)> = None;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let epoch_stream = derive_seed(cfg.seed, stream::EPOCH);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(epoch_stream, epoch as u64)));
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let refs: Vec<&SamplePair> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (x, y) = batch_tensors(&refs, cfg.tier_enabled)?;
            let (pred, cache) =
                forward(spec, &params, &x, Mode::Train).map_err(|e| nan_context(epoch, step, e))?;
            let (loss, grad) = batch_loss(&pred, &y, &cfg.loss)?;
            if !loss.is_finite() {
                return Err(TrainError::NaNDetected {
                    epoch,
                    step,
                    detail: "loss".into(),
                });
            }
            let (grads, _) = backward(spec, &params, &cache, &grad)?;
            if !grads.all_finite() {
                return Err(TrainError::NaNDetected {
                    epoch,
                    step,
                    detail: "gradients".into(),
                });
            }
            sgd_step(&mut params, &grads, &mut state, &sgd)?;
            update_running_stats(&mut params, &cache);
            if !params.all_finite() {
                return Err(TrainError::NaNDetected {
                    epoch,
                    step,
                    detail: "parameters after update".into(),
                });
            }
            sum += loss * chunk.len() as f64;
        }
        let train_loss = sum / train_set.len() as f64;
        let valid_loss = if valid_set.is_empty() {
            None
        } else {
            Some(
                mean_loss(spec, &params, valid_set, cfg).map_err(|e| match e {
                    TrainError::Nn(n) => nan_context(epoch, step, n),
                    other => other,
                })?,
            )
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            valid_loss,
        };
        let score = valid_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, params.clone()));
        }
        progress(&record);
        curve.push(record);
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        best_params,
        best_epoch,
        curve,
        steps: state.step,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::SampleMeta;
    use crate::model::FamilyType;
    use crate::raster::Raster;

    pub(crate) fn toy_samples(n: usize, h: usize, w: usize) -> Vec<SamplePair> {
        (0..n)
            .map(|k| {
                let target =
                    Raster::from_fn(h, w, |i, j| if (i + j + k) % 5 == 0 { 0.2 } else { 0.7 });
                let blur = Raster::from_fn(h, w, |i, j| 0.5 + 0.1 * ((i + 2 * j + k) % 3) as f64);
                SamplePair {
                    input: [
                        blur.clone(),
                        blur,
                        Raster::from_fn(h, w, |i, _| i as f64 / (h - 1) as f64),
                    ],
                    target,
                    meta: SampleMeta {
                        family: FamilyType::I,
                        seed: k as u64,
                        index: k as u64,
                        anomalies: vec![],
                    },
                }
            })
            .collect()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 3,
            learning_rate: 0.01,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn tier_channel_selection() {
        let s = toy_samples(2, 4, 4);
        let refs: Vec<&SamplePair> = s.iter().collect();
        let (x, y) = batch_tensors(&refs, true).unwrap();
        assert_eq!((x.shape(), y.shape()), ([2, 3, 4, 4], [2, 1, 4, 4]));
        assert_eq!(x.channel(1, 2), s[1].input[TIER].as_slice());
        let (x2, _) = batch_tensors(&refs, false).unwrap();
        assert_eq!(x2.c, 2);
        assert_eq!(x2.channel(0, 1), s[0].input[1].as_slice());
    }

    #[test]
    fn step_count_and_determinism() {
        let data = toy_samples(7, 4, 4);
        let cfg = TrainConfig {
            epochs: 1,
            ..small_cfg()
        };
        let spec = network_for(&cfg, &[2, 4], 1).unwrap();
        let a = train(&data, &data[..2], &spec, &cfg).unwrap();
        assert_eq!(a.steps, 3);
        let cfg2 = small_cfg();
        let b = train(&data, &data[..2], &spec, &cfg2).unwrap();
        let c = train(&data, &data[..2], &spec, &cfg2).unwrap();
        assert_eq!(b.curve_csv(), c.curve_csv());
        assert_eq!(b.params, c.params);
        assert_eq!(b.curve[0], a.curve[0]);
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let data = toy_samples(3, 4, 4);
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let spec = network_for(&small_cfg(), &[2, 4], 1).unwrap();
        assert!(matches!(
            train(&data, &[], &spec, &cfg),
            Err(TrainError::Config(_))
        ));
        let no_tier = TrainConfig {
            tier_enabled: false,
            ..small_cfg()
        };
        assert!(matches!(
            train(&data, &[], &spec, &no_tier),
            Err(TrainError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn divergence_aborts_with_context() {
        let data = toy_samples(4, 4, 4);
        let cfg = TrainConfig {
            learning_rate: 1e200,
            epochs: 3,
            ..small_cfg()
        };
        let spec = network_for(&cfg, &[2, 4], 1).unwrap();
        match train(&data, &[], &spec, &cfg) {
            Err(TrainError::NaNDetected { epoch, step, .. }) => assert!(epoch >= 1 && step >= 1),
            other => panic!("expected NaN abort, got {:?}", other.map(|o| o.curve)),
        }
    }
}
