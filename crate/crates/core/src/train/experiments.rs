//! Tier/loss ablation grid and the noise-robustness study.

use serde::{Deserialize, Serialize};

use super::metrics::{predictions, report_for, EvalReport};
use super::trainer::{network_for, train, TrainConfig, TrainOutcome};
use super::TrainError;
use crate::dataset::Dataset;
use crate::features::{noisy_sample, NoiseSpec, SamplePair};
use crate::nn::{NetworkSpec, Parameters};
use crate::objective::LossPreset;
use crate::raster::format_sig9;
use crate::rng::{derive_seed, rng_from_seed, stream};

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub tier_enabled: bool,
    pub preset: LossPreset,
    pub config: TrainConfig,
    /// Best-validation checkpoint evaluated on the validation split.
    pub report: EvalReport,
    pub outcome: TrainOutcome,
    pub spec: NetworkSpec,
}

/// Trains and evaluates each `(tier_enabled, preset)` pair with otherwise
/// identical settings and seed.
pub fn run_ablation_configs(
    dataset: &Dataset,
    base: &TrainConfig,
    widths: &[usize],
    residual_blocks: usize,
    grid: &[(bool, LossPreset)],
) -> Result<Vec<AblationRow>, TrainError> {
    grid.iter()
        .map(|&(tier_enabled, preset)| {
            let config = TrainConfig {
                tier_enabled,
                loss: preset.config(),
                ..base.clone()
            };
            let spec = network_for(&config, widths, residual_blocks)?;
            let outcome = train(&dataset.train, &dataset.valid, &spec, &config)?;
            let report = super::metrics::evaluate(
                &spec,
                &outcome.best_params,
                &dataset.valid,
                tier_enabled,
            )?;
            Ok(AblationRow {
                tier_enabled,
                preset,
                config,
                report,
                outcome,
                spec,
            })
        })
        .collect()
}

/// The full `{tier on, tier off} × {SD, OS, OD, NA}` grid.
pub fn run_ablation(
    dataset: &Dataset,
    base: &TrainConfig,
    widths: &[usize],
    residual_blocks: usize,
) -> Result<Vec<AblationRow>, TrainError> {
    let grid: Vec<(bool, LossPreset)> = [true, false]
        .iter()
        .flat_map(|&t| LossPreset::ALL.iter().map(move |&p| (t, p)))
        .collect();
    run_ablation_configs(dataset, base, widths, residual_blocks, &grid)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "tier,loss,alpha,beta,lambda,seed,best_epoch,valid_wmse,valid_wr,wr_excluded\n",
    );
    for r in rows {
        let l = r.config.loss;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            if r.tier_enabled { "on" } else { "off" },
            r.preset.name(),
            l.alpha,
            l.beta,
            l.lambda,
            r.config.seed,
            r.outcome.best_epoch,
            format_sig9(r.report.wmse),
            format_sig9(r.report.wr),
            r.report.wr_excluded
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    /// `-inf` for the clean evaluation.
    pub level_dbw: f64,
    pub report: EvalReport,
}

impl NoiseRow {
    pub fn label(&self) -> String {
        if self.level_dbw == f64::NEG_INFINITY {
            "clean".into()
        } else {
            format!("{} dBw", self.level_dbw)
        }
    }
}

/// Evaluates `params` on clean inputs and at each noise level. Level `k`
/// draws its noise from `derive_seed(derive_seed(seed, NOISE), k)`, sample
/// by sample in order.
pub fn run_noise_eval(
    spec: &NetworkSpec,
    params: &Parameters,
    samples: &[SamplePair],
    tier_enabled: bool,
    levels: &[f64],
    seed: u64,
) -> Result<Vec<NoiseRow>, TrainError> {
    let noise_stream = derive_seed(seed, stream::NOISE);
    levels
        .iter()
        .enumerate()
        .map(|(k, &level_dbw)| {
            let spec_noise = NoiseSpec::new(level_dbw);
            let mut rng = rng_from_seed(derive_seed(noise_stream, k as u64));
            let noisy: Vec<SamplePair> = samples
                .iter()
                .map(|s| noisy_sample(s, &spec_noise, &mut rng))
                .collect();
            let t0 = std::time::Instant::now();
            let preds = predictions(spec, params, &noisy, tier_enabled)?;
            let per = t0.elapsed().as_secs_f64() / samples.len().max(1) as f64;
            Ok(NoiseRow {
                level_dbw,
                report: report_for(&preds, &noisy, tier_enabled, per)?,
            })
        })
        .collect()
}

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut s = String::from("level,wmse,wr,wr_excluded\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.label(),
            format_sig9(r.report.wmse),
            format_sig9(r.report.wr),
            r.report.wr_excluded
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::NormalizationSpec;
    use crate::train::trainer::tests::toy_samples;

    fn toy_dataset() -> Dataset {
        let all = toy_samples(8, 4, 4);
        Dataset {
            train: all[..6].to_vec(),
            valid: all[6..].to_vec(),
            test: Vec::new(),
            normalization: NormalizationSpec::default(),
        }
    }

    #[test]
    fn grid_has_eight_rows_and_exact_presets() {
        let base = TrainConfig {
            epochs: 1,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let rows = run_ablation(&toy_dataset(), &base, &[2, 2], 1).unwrap();
        assert_eq!(rows.len(), 8);
        let csv = ablation_csv(&rows);
        assert_eq!(csv.lines().count(), 9);
        let na = rows.iter().find(|r| r.preset == LossPreset::NA).unwrap();
        let sd = rows.iter().find(|r| r.preset == LossPreset::SD).unwrap();
        let zeroed = crate::objective::LossConfig {
            alpha: 0.0,
            beta: 0.0,
            ..sd.config.loss
        };
        assert_eq!(na.config.loss.digest(), zeroed.digest());
        assert_eq!(rows.iter().filter(|r| !r.tier_enabled).count(), 4);
        assert!(rows
            .iter()
            .filter(|r| !r.tier_enabled)
            .all(|r| r.spec.input_channels == 2));
    }

    #[test]
    fn clean_level_reproduces_clean_evaluation() {
        let data = toy_dataset();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let spec = network_for(&cfg, &[2, 2], 1).unwrap();
        let params = Parameters::init(&spec, 1);
        let clean = super::super::metrics::evaluate(&spec, &params, &data.train, true).unwrap();
        let rows = run_noise_eval(
            &spec,
            &params,
            &data.train,
            true,
            &[f64::NEG_INFINITY, 3.0],
            9,
        )
        .unwrap();
        assert_eq!(rows[0].report.per_sample_wmse, clean.per_sample_wmse);
        assert_eq!(rows[0].label(), "clean");
        assert_ne!(rows[1].report.per_sample_wmse, clean.per_sample_wmse);
        assert_eq!(noise_csv(&rows).lines().count(), 3);
    }
}
