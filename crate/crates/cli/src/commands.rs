//! One function per verb. Each resolves its inputs, delegates to the
//! library and records what it wrote in a run manifest.

use std::path::Path;
use std::time::Instant;

use ersinv::dataset::{
    generate_dataset, load_dataset_dir, write_dataset_dir, Dataset, DatasetConfig, MANIFEST_FILE,
};
use ersinv::features::SamplePair;
use ersinv::forward::ForwardSolver;
use ersinv::model::ResistivityModel;
use ersinv::nn::checkpoint;
use ersinv::nn::{receptive_field, NetworkSpec, Parameters};
use ersinv::objective::LossPreset;
use ersinv::profile::{ProfileName, RunProfile};
use ersinv::raster::{format_sig9, Raster};
use ersinv::train::{
    ablation_csv, evaluate, metric_weights_for_target, noise_csv, run_ablation, run_noise_eval,
    train_with_progress, wmse, wr,
};

use crate::error::{read_failed, CliError};
use crate::manifest::Run;
use crate::render;

/// Receptive field reported for the full-size network.
pub const PAPER_RF: usize = 238;

pub const BEST_CHECKPOINT: &str = "best.ersw";
pub const LAST_CHECKPOINT: &str = "last.ersw";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn pick(self, d: &Dataset) -> &[SamplePair] {
        match self {
            Self::Train => &d.train,
            Self::Valid => &d.valid,
            Self::Test => &d.test,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Valid => "valid",
            Self::Test => "test",
        }
    }
}

pub struct Env<'a> {
    pub profile: RunProfile,
    pub out: &'a Path,
    pub threads: usize,
}

impl Env<'_> {
    fn run(&self, command: &str) -> Result<Run, CliError> {
        Run::new(command, self.out, &self.profile, self.threads)
    }
}

pub fn gen(env: &Env, samples: Option<usize>) -> Result<(), CliError> {
    let mut profile = env.profile.clone();
    if let Some(n) = samples {
        profile.dataset.families = DatasetConfig::desk(n, 0).families;
        profile.name = ProfileName::Custom;
        profile.dataset.validate()?;
    }
    let cfg = &profile.dataset;
    let mut run = Run::new("gen", env.out, &profile, env.threads)?;
    let t0 = Instant::now();
    let (data, manifest) = generate_dataset(cfg)?;
    let elapsed = t0.elapsed().as_secs_f64();
    let manifest = write_dataset_dir(&data, &manifest, run.dir())?;
    for name in manifest.files.keys() {
        run.record(name)?;
    }
    run.record(MANIFEST_FILE)?;
    for (family, count) in &manifest.family_counts {
        println!("family {family:?}: {count}");
    }
    println!(
        "split: {} train / {} valid / {} test",
        data.train.len(),
        data.valid.len(),
        data.test.len()
    );
    println!(
        "generated {} samples in {elapsed:.1} s ({:.3} s per sample)",
        cfg.total(),
        elapsed / cfg.total() as f64
    );
    run.finish()?;
    Ok(())
}

pub fn fwd(env: &Env, model_path: &Path) -> Result<(), CliError> {
    let mut run = env.run("fwd")?;
    let bytes = run.read_input(model_path)?;
    let text = String::from_utf8(bytes).map_err(|e| read_failed(model_path, e))?;
    let values = Raster::from_csv(&text).map_err(|e| read_failed(model_path, e))?;
    let model = ResistivityModel::from_raster(values, env.profile.dataset.grid.cell_size)
        .map_err(|e| CliError::Usage(format!("{}: {e}", model_path.display())))?;
    let solver = ForwardSolver::new(model.grid, env.profile.dataset.forward)?;
    let t0 = Instant::now();
    let (wenner, ws) = solver.sections(&model)?;
    println!(
        "{} electrodes, levels {} (Wenner) / {} (Wenner-Schlumberger), {:.2} s",
        solver.layout().len(),
        wenner.max_level,
        ws.max_level,
        t0.elapsed().as_secs_f64()
    );
    for (stem, r) in [
        ("model", &model.values),
        ("wenner", &wenner.values),
        ("ws", &ws.values),
    ] {
        if stem != "model" {
            run.write(&format!("{stem}.csv"), r.to_csv().as_bytes())?;
        }
        let png = render::png(r, true).map_err(|e| CliError::Failed(e.to_string()))?;
        let name = render::legend_name(stem, r);
        run.write(&name, &png)?;
        println!("{name}");
    }
    run.finish()?;
    Ok(())
}

fn load_data(run: &mut Run, dir: &Path) -> Result<Dataset, CliError> {
    let (data, manifest) = load_dataset_dir(dir).map_err(|e| read_failed(dir, e))?;
    for (name, digest) in manifest.files {
        run.input_digest(dir.join(name).display().to_string(), digest);
    }
    run.arg("data", dir.display());
    Ok(data)
}

fn check_dims(spec: &NetworkSpec, data: &Dataset) -> Result<(), CliError> {
    if let Some(s) = data
        .train
        .iter()
        .chain(&data.valid)
        .chain(&data.test)
        .next()
    {
        let (h, w) = s.dims();
        spec.output_dims(h, w)
            .map_err(|e| CliError::Usage(format!("network does not fit {h}×{w} samples: {e}")))?;
    }
    Ok(())
}

fn load_params(run: &mut Run, spec: &NetworkSpec, path: &Path) -> Result<Parameters, CliError> {
    let bytes = run.read_input(path)?;
    run.arg("checkpoint", path.display());
    checkpoint::decode(spec, &bytes)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn train(env: &Env, data_dir: &Path) -> Result<(), CliError> {
    let mut run = env.run("train")?;
    let data = load_data(&mut run, data_dir)?;
    let spec = env
        .profile
        .network_spec()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    check_dims(&spec, &data)?;
    let cfg = &env.profile.train;
    eprintln!(
        "training {} parameters on {} samples ({} validation), {} epochs",
        Parameters::init(&spec, 0).num_trainable(),
        data.train.len(),
        data.valid.len(),
        cfg.epochs
    );
    let t0 = Instant::now();
    let outcome = train_with_progress(&data.train, &data.valid, &spec, cfg, &mut |r| {
        let valid = r.valid_loss.map(format_sig9).unwrap_or_else(|| "-".into());
        eprintln!(
            "epoch {:>4}  train {}  valid {}  ({:.0} s)",
            r.epoch,
            format_sig9(r.train_loss),
            valid,
            t0.elapsed().as_secs_f64()
        );
    })?;
    run.write(
        BEST_CHECKPOINT,
        &checkpoint::encode(&spec, &outcome.best_params),
    )?;
    run.write(LAST_CHECKPOINT, &checkpoint::encode(&spec, &outcome.params))?;
    run.write("curve.csv", outcome.curve_csv().as_bytes())?;
    println!(
        "best epoch {} of {}",
        outcome.best_epoch,
        outcome.curve.len()
    );
    run.finish()?;
    Ok(())
}

pub struct EvalArgs<'a> {
    pub data: Option<&'a Path>,
    pub checkpoint: Option<&'a Path>,
    pub split: Split,
    pub pred: Option<&'a Path>,
    pub target: Option<&'a Path>,
}

pub fn eval(env: &Env, args: &EvalArgs) -> Result<(), CliError> {
    let mut run = env.run("eval")?;
    match (args.pred, args.target, args.data, args.checkpoint) {
        (Some(pred), Some(target), None, None) => {
            let mut raster = |p: &Path| -> Result<Raster, CliError> {
                let text = String::from_utf8(run.read_input(p)?).map_err(|e| read_failed(p, e))?;
                Raster::from_csv(&text).map_err(|e| read_failed(p, e))
            };
            let (p, t) = (raster(pred)?, raster(target)?);
            let weights = [metric_weights_for_target(&t)];
            let m = wmse(std::slice::from_ref(&p), std::slice::from_ref(&t), &weights)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            // WR is undefined when either raster is constant.
            let r = match wr(&[p], &[t], &weights) {
                Ok(s) if s.excluded == 0 => format_sig9(s.mean),
                _ => "excluded".to_string(),
            };
            println!("WMSE {}", format_sig9(m));
            println!("WR {r}");
            run.write(
                "metrics.csv",
                format!("wmse,wr\n{},{r}\n", format_sig9(m)).as_bytes(),
            )?;
        }
        (None, None, Some(data_dir), Some(ckpt)) => {
            let data = load_data(&mut run, data_dir)?;
            let spec = env
                .profile
                .network_spec()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            check_dims(&spec, &data)?;
            let params = load_params(&mut run, &spec, ckpt)?;
            let samples = args.split.pick(&data);
            if samples.is_empty() {
                return Err(CliError::Usage(format!(
                    "the {} split is empty",
                    args.split.name()
                )));
            }
            run.arg("split", args.split.name());
            let report = evaluate(&spec, &params, samples, env.profile.train.tier_enabled)?;
            println!("WMSE {}", format_sig9(report.wmse));
            println!(
                "WR {} ({} excluded)",
                format_sig9(report.wr),
                report.wr_excluded
            );
            println!("{:.4} s per sample", report.seconds_per_sample);
            run.write("metrics.csv", report.to_csv().as_bytes())?;
        }
        _ => {
            return Err(CliError::Usage(
                "eval takes either --pred and --target, or --data and --checkpoint".into(),
            ))
        }
    }
    run.finish()?;
    Ok(())
}

pub fn ablate(env: &Env, data_dir: &Path) -> Result<(), CliError> {
    let mut run = env.run("ablate")?;
    let data = load_data(&mut run, data_dir)?;
    let net = &env.profile.network;
    let spec = env
        .profile
        .network_spec()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    check_dims(&spec, &data)?;
    eprintln!(
        "{} configurations of {} epochs",
        2 * LossPreset::ALL.len(),
        env.profile.train.epochs
    );
    let rows = run_ablation(&data, &env.profile.train, &net.widths, net.residual_blocks)?;
    let csv = ablation_csv(&rows);
    print!("{csv}");
    run.write("ablation.csv", csv.as_bytes())?;
    run.finish()?;
    Ok(())
}

/// Comma-separated noise levels in dBw; `clean` (or `-inf`) is the
/// noise-free evaluation.
pub fn parse_levels(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| match t.trim() {
            "clean" | "-inf" => Ok(f64::NEG_INFINITY),
            v => v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::Usage(format!("bad noise level `{v}`"))),
        })
        .collect()
}

pub fn noise(
    env: &Env,
    data_dir: &Path,
    ckpt: &Path,
    split: Split,
    levels: &str,
) -> Result<(), CliError> {
    let mut run = env.run("noise")?;
    let levels = parse_levels(levels)?;
    let data = load_data(&mut run, data_dir)?;
    let spec = env
        .profile
        .network_spec()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    check_dims(&spec, &data)?;
    let params = load_params(&mut run, &spec, ckpt)?;
    let samples = split.pick(&data);
    if samples.is_empty() {
        return Err(CliError::Usage(format!(
            "the {} split is empty",
            split.name()
        )));
    }
    run.arg("split", split.name());
    let seed = env.profile.train.seed;
    let rows = run_noise_eval(
        &spec,
        &params,
        samples,
        env.profile.train.tier_enabled,
        &levels,
        seed,
    )?;
    let csv = noise_csv(&rows);
    print!("{csv}");
    run.write("noise.csv", csv.as_bytes())?;
    run.finish()?;
    Ok(())
}

pub fn rf(env: &Env) -> Result<(), CliError> {
    let mut run = env.run("rf")?;
    let spec = env
        .profile
        .network_spec()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let report = receptive_field(&spec);
    let diff = report.final_rf as i64 - PAPER_RF as i64;
    let text = format!(
        "{}computed {} vs reference {PAPER_RF} (difference {diff:+})\n",
        report.table(),
        report.final_rf
    );
    print!("{text}");
    run.write("rf.txt", text.as_bytes())?;
    run.finish()?;
    Ok(())
}

pub fn plot(env: &Env, input: &Path, log: bool) -> Result<(), CliError> {
    let mut run = env.run("plot")?;
    let text = String::from_utf8(run.read_input(input)?).map_err(|e| read_failed(input, e))?;
    let r = Raster::from_csv(&text).map_err(|e| read_failed(input, e))?;
    if log && r.min() <= 0.0 {
        return Err(CliError::Usage(format!(
            "{}: log scale needs positive values",
            input.display()
        )));
    }
    let stem = input
        .file_stem()
        .map_or("plot".into(), |s| s.to_string_lossy().into_owned());
    let name = render::legend_name(&stem, &r);
    let png = render::png(&r, log).map_err(|e| CliError::Failed(e.to_string()))?;
    run.arg("log", log);
    run.write(&name, &png)?;
    println!("{name}");
    run.finish()?;
    Ok(())
}
