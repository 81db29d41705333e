//! One function per subcommand. Each resolves the effective config, writes
//! its artifacts into a staged run directory and commits it last.

use std::path::{Path, PathBuf};

use log::info;
use ncsim::baseline_pp::PurePursuit;
use ncsim::config::ExperimentConfig;
use ncsim::evaluation::{
    car_metrics, cartpole_metrics, histogram, max_speed_factor_search, run_car, run_cartpole, CarController,
    CarEpisode, CarMetrics, CarRunConfig, CartpoleController, CartpoleMetrics, Histogram, SpeedFactorSearch,
};
use ncsim::imitation::{
    augment_cartpole, collect_car, collect_cartpole, replay_car, replay_cartpole, Dataset, PlantKind,
};
use ncsim::neuralnet::{
    evaluate_mse, layers_for, path_deviations, summarize_deviations, train, DeviationSummary, EpochStats,
    InferencePath, NcCar, NcCartpole, QMlpModel, QuantConfig,
};
use ncsim::nmpc::{CarMpc, CartpoleMpc};
use ncsim::plants::SensorModel;
use ncsim::raceline::{builtin, Raceline, BUILTIN_TRACKS};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::logs::{car_csv, cartpole_csv, parse_cartpole_csv};
use crate::output::{file_digest, read_json, InputFile, Manifest, RunDir, MANIFEST, REPORT};
use crate::{CarControllerArg, CarControllerArgs, CartpoleControllerArg, Cli, Command, InferenceArg, PlantArg, SplitArgs};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Replay { run, samples } => replay(run, *samples),
        cmd => {
            let out = cli
                .global
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs").join(cmd.name()));
            let dir = RunDir::create(&out, cli.global.force)?;
            match execute(cmd, &cfg, &dir) {
                Ok(inputs) => {
                    let manifest = Manifest {
                        tool: env!("CARGO_PKG_NAME").into(),
                        version: env!("CARGO_PKG_VERSION").into(),
                        command: cmd.name().into(),
                        args: std::env::args().skip(1).collect(),
                        seed: cfg.seed,
                        config_sha256: cfg.digest()?,
                        config: cfg.clone(),
                        inputs,
                    };
                    dir.write("config.toml", cfg.to_toml_string()?)?;
                    dir.write_json(MANIFEST, &manifest)?;
                    let done = dir.commit()?;
                    println!("{}", done.display());
                    Ok(())
                }
                Err(e) => {
                    dir.abandon();
                    Err(e)
                }
            }
        }
    }
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let cfg = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    Ok(match cli.global.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

/// Runs a producing subcommand; returns the input files it read.
fn execute(cmd: &Command, cfg: &ExperimentConfig, dir: &RunDir) -> Result<Vec<InputFile>> {
    match cmd {
        Command::Collect { plant, duration, track } => collect(cfg, dir, *plant, *duration, track.as_deref()),
        Command::Train {
            data,
            sparsity,
            epochs,
            qat_epochs,
            split,
        } => train_cmd(cfg, dir, data, *sparsity, *epochs, *qat_epochs, split),
        Command::EvalModel { model, data, split } => eval_model(cfg, dir, model, data, split),
        Command::Race { car, speed_factor } => race(cfg, dir, car, *speed_factor, false),
        Command::SearchF { car } => race(cfg, dir, car, None, true),
        Command::Swingup {
            controller,
            model,
            inference,
            rate,
            duration,
        } => swingup(cfg, dir, *controller, model.as_deref(), *inference, *rate, *duration),
        Command::Replay { .. } => unreachable!("replay writes no run directory"),
    }
}

/// A bundled track name, else a race line CSV path.
fn load_track(spec: &str) -> Result<(Raceline, Option<InputFile>)> {
    if BUILTIN_TRACKS.contains(&spec) {
        return Ok((builtin(spec)?, None));
    }
    let path = Path::new(spec);
    let digest = file_digest(path)?;
    Ok((Raceline::load(path)?, Some(digest)))
}

fn inference_path(arg: InferenceArg) -> InferencePath {
    match arg {
        InferenceArg::Fixed => InferencePath::Fixed,
        InferenceArg::Float => InferencePath::Float,
    }
}

fn require_model(model: Option<&Path>) -> Result<(QMlpModel, InputFile)> {
    let path = model.ok_or_else(|| CliError::Usage("--model is required for the nc controller".into()))?;
    let digest = file_digest(path)?;
    Ok((QMlpModel::load(path)?, digest))
}

#[derive(Debug, Serialize, Deserialize)]
struct CollectSummary {
    plant: PlantKind,
    samples: usize,
    episodes: usize,
    crashed_episodes: usize,
}

fn collect(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    plant: PlantArg,
    duration: Option<f64>,
    track: Option<&str>,
) -> Result<Vec<InputFile>> {
    let mut inputs = Vec::new();
    let ds = match plant {
        PlantArg::Cartpole => {
            let mut c = cfg.cartpole_collect();
            c.duration = duration.unwrap_or(c.duration);
            info!("collecting {} s of cartpole demonstrations", c.duration);
            collect_cartpole(&c, &cfg.cartpole.plant)?
        }
        PlantArg::Car => {
            let mut c = cfg.car_collect();
            c.duration = duration.unwrap_or(c.duration);
            let name = track.unwrap_or(&cfg.car.train_track);
            let (line, digest) = load_track(name)?;
            inputs.extend(digest);
            info!("collecting {} s per speed factor on {name}", c.duration);
            collect_car(&c, &line, name, &cfg.car.plant)?
        }
    };
    ds.save(dir.path("dataset.csv"))?;
    dir.write_json(
        "summary.json",
        &CollectSummary {
            plant: ds.plant,
            samples: ds.len(),
            episodes: ds.episodes.len(),
            crashed_episodes: ds.episodes.iter().filter(|e| e.crashed).count(),
        },
    )?;
    Ok(inputs)
}

/// Training and validation sets exactly as `train` builds them.
fn prepare(cfg: &ExperimentConfig, data: &Path, split: &SplitArgs) -> Result<(Dataset, Dataset, InputFile)> {
    let digest = file_digest(data)?;
    let ds = Dataset::load(data)?;
    let seed = match ds.plant {
        PlantKind::Cartpole => cfg.cartpole.train.seed,
        PlantKind::Car => cfg.car.train.seed,
    };
    let ds = if ds.plant == PlantKind::Cartpole && !split.no_augment {
        let sensor = cfg.cartpole.collect.sensor.clone().unwrap_or_else(SensorModel::ideal);
        augment_cartpole(&ds, &sensor)?
    } else {
        ds
    };
    let (tr, va) = ds.split(split.val_fraction, seed)?;
    Ok((tr, va, digest))
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelSummary {
    plant: Option<PlantKind>,
    sizes: Vec<usize>,
    params: usize,
    sparsity: f64,
    /// Multiply-accumulates of one fixed-point inference; pruned weights are skipped.
    macs: usize,
}

fn model_summary(model: &QMlpModel) -> ModelSummary {
    ModelSummary {
        plant: model.plant(),
        sizes: model.sizes(),
        params: model.param_count(),
        sparsity: model.sparsity(),
        macs: model.mac_count(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainReport {
    model: ModelSummary,
    train_samples: usize,
    validation_samples: usize,
    initial_validation_mse: Option<f64>,
    /// Float-path validation MSE of the saved model, in normalized units; none without validation data.
    validation_mse: Option<f64>,
    history: Vec<EpochStats>,
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    data: &Path,
    sparsity: Option<f64>,
    epochs: Option<usize>,
    qat_epochs: Option<usize>,
    split: &SplitArgs,
) -> Result<Vec<InputFile>> {
    let (tr, va, digest) = prepare(cfg, data, split)?;
    let mut tc = match tr.plant {
        PlantKind::Cartpole => cfg.cartpole.train.clone(),
        PlantKind::Car => cfg.car.train.clone(),
    };
    tc.target_sparsity = sparsity.unwrap_or(tc.target_sparsity);
    tc.float_epochs = epochs.unwrap_or(tc.float_epochs);
    tc.qat_epochs = qat_epochs.unwrap_or(tc.qat_epochs);
    tc.validate()?;
    info!("training on {} samples, validating on {}", tr.len(), va.len());
    let validation = (!va.is_empty()).then_some(&va);
    let out = train(&tr, validation, layers_for(tr.plant), QuantConfig::for_plant(tr.plant), &tc)?;
    out.model.save(dir.path("model.json"))?;
    let mut csv = String::from("epoch,phase,train_loss,validation_loss,sparsity\n");
    for h in &out.history {
        let phase = serde_json::to_value(h.phase).ok().and_then(|v| v.as_str().map(str::to_owned));
        let val = h.validation_loss.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{val},{}\n",
            h.epoch,
            phase.unwrap_or_default(),
            h.train_loss,
            h.sparsity
        ));
    }
    dir.write("history.csv", csv)?;
    let validation_mse = validation.map(|v| evaluate_mse(&out.model, v)).transpose()?;
    dir.write_json(
        REPORT,
        &TrainReport {
            model: model_summary(&out.model),
            train_samples: tr.len(),
            validation_samples: va.len(),
            initial_validation_mse: out.initial_validation_loss,
            validation_mse,
            history: out.history,
        },
    )?;
    Ok(vec![digest])
}

/// Actuator range of each model output, in physical units.
fn output_bounds(plant: PlantKind, cfg: &ExperimentConfig) -> Vec<(f64, f64)> {
    match plant {
        PlantKind::Cartpole => vec![(-1.0, 1.0)],
        PlantKind::Car => {
            let p = &cfg.car.plant;
            vec![(0.0, p.max_speed), (-p.max_steer, p.max_steer)]
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalReport {
    model: ModelSummary,
    validation_samples: usize,
    validation_mse: Option<f64>,
    /// Per-sample fixed-vs-float gap after clamping to the actuator range.
    deviation: DeviationSummary,
    /// The gaps are identical with and without worker threads.
    deviation_thread_independent: bool,
}

fn eval_model(cfg: &ExperimentConfig, dir: &RunDir, model: &Path, data: &Path, split: &SplitArgs) -> Result<Vec<InputFile>> {
    let model_digest = file_digest(model)?;
    let m = QMlpModel::load(model)?;
    let (_, va, data_digest) = prepare(cfg, data, split)?;
    if m.plant().is_some_and(|p| p != va.plant) {
        return Err(ncsim::Error::Dataset(format!("model is for {:?}, data for {:?}", m.plant(), va.plant)).into());
    }
    let bounds = output_bounds(va.plant, cfg);
    let gaps = path_deviations(&m, &va.samples, &bounds, true)?;
    let sequential = path_deviations(&m, &va.samples, &bounds, false)?;
    dir.write_json(
        REPORT,
        &EvalReport {
            model: model_summary(&m),
            validation_samples: va.len(),
            validation_mse: (!va.is_empty()).then(|| evaluate_mse(&m, &va)).transpose()?,
            deviation: summarize_deviations(&gaps),
            deviation_thread_independent: gaps == sequential,
        },
    )?;
    Ok(vec![model_digest, data_digest])
}

#[derive(Debug, Serialize, Deserialize)]
struct RaceReport {
    controller: String,
    track: String,
    laps: usize,
    speed_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    search: Option<SpeedFactorSearch>,
    metrics: CarMetrics,
    histogram: Histogram,
}

fn car_controller(
    cfg: &ExperimentConfig,
    args: &CarControllerArgs,
    inputs: &mut Vec<InputFile>,
) -> Result<Box<dyn CarController>> {
    Ok(match args.controller {
        CarControllerArg::Nmpc => Box::new(CarMpc::new(cfg.car.mpc.clone(), cfg.car.plant.clone())?),
        CarControllerArg::Pp => Box::new(PurePursuit::new(cfg.car.pp.clone())?),
        CarControllerArg::Nc => {
            let (m, digest) = require_model(args.model.as_deref())?;
            inputs.push(digest);
            Box::new(NcCar::new(m, inference_path(args.inference))?)
        }
    })
}

fn controller_name(arg: CarControllerArg) -> &'static str {
    match arg {
        CarControllerArg::Nmpc => "nmpc",
        CarControllerArg::Nc => "nc",
        CarControllerArg::Pp => "pp",
    }
}

fn race(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    args: &CarControllerArgs,
    speed_factor: Option<f64>,
    search: bool,
) -> Result<Vec<InputFile>> {
    let mut inputs = Vec::new();
    let name = args.track.as_deref().unwrap_or(&cfg.car.eval_track);
    let (line, digest) = load_track(name)?;
    inputs.extend(digest);
    let mut controller = car_controller(cfg, args, &mut inputs)?;
    let mut run = CarRunConfig {
        laps: args.laps.unwrap_or(cfg.car.run.laps),
        speed_factor: speed_factor.unwrap_or(cfg.car.run.speed_factor),
        ..cfg.car.run.clone()
    };
    let found = if search {
        let s = max_speed_factor_search(controller.as_mut(), &line, &cfg.car.plant, &run)?;
        info!("speed factor search: {s:?}");
        run.speed_factor = s.factor;
        Some(s)
    } else {
        None
    };
    let episode = run_car(controller.as_mut(), &line, &cfg.car.plant, &run)?;
    let report = race_report(&episode, controller_name(args.controller), name, &run, found, args.bin_width)?;
    dir.write("log.csv", car_csv(&episode.log))?;
    dir.write_json("episode.json", &episode)?;
    dir.write("histogram.csv", report.histogram.to_csv_string())?;
    dir.write_json(REPORT, &report)?;
    Ok(inputs)
}

fn race_report(
    episode: &CarEpisode,
    controller: &str,
    track: &str,
    run: &CarRunConfig,
    search: Option<SpeedFactorSearch>,
    bin_width: f64,
) -> Result<RaceReport> {
    let d: Vec<f64> = episode.log.iter().map(|r| r.d).collect();
    Ok(RaceReport {
        controller: controller.into(),
        track: track.into(),
        laps: run.laps,
        speed_factor: run.speed_factor,
        search,
        metrics: car_metrics(episode, run.laps),
        histogram: histogram(&d, bin_width)?,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SwingupReport {
    controller: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inference: Option<String>,
    rate: f64,
    duration: f64,
    metrics: CartpoleMetrics,
}

fn swingup(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    controller: CartpoleControllerArg,
    model: Option<&Path>,
    inference: InferenceArg,
    rate: Option<f64>,
    duration: Option<f64>,
) -> Result<Vec<InputFile>> {
    let mut inputs = Vec::new();
    let c = &cfg.cartpole;
    let (mut ctrl, name, path): (Box<dyn CartpoleController>, _, _) = match controller {
        CartpoleControllerArg::Nmpc => (Box::new(CartpoleMpc::new(c.mpc.clone(), c.plant.clone())?), "nmpc", None),
        CartpoleControllerArg::Nc => {
            let (m, digest) = require_model(model)?;
            inputs.push(digest);
            let path = match inference {
                InferenceArg::Fixed => "fixed",
                InferenceArg::Float => "float",
            };
            (Box::new(NcCartpole::new(m, inference_path(inference))?), "nc", Some(path.to_owned()))
        }
    };
    let mut run = c.run.clone();
    run.control_rate = rate.unwrap_or(run.control_rate);
    run.duration = duration.unwrap_or(run.duration);
    info!("{name} at {} Hz for {} s", run.control_rate, run.duration);
    let log = run_cartpole(ctrl.as_mut(), &c.plant, &c.schedule, &run)?;
    dir.write("log.csv", cartpole_csv(&log))?;
    dir.write_json(
        REPORT,
        &SwingupReport {
            controller: name.into(),
            inference: path,
            rate: run.control_rate,
            duration: run.duration,
            metrics: cartpole_metrics(&log, &c.plant),
        },
    )?;
    Ok(inputs)
}

/// Compares `recomputed` with the `metrics` entry of a stored report, as JSON values.
fn compare<T: Serialize>(report: &serde_json::Value, key: &str, recomputed: &T) -> Result<()> {
    let fresh = serde_json::to_value(recomputed).map_err(|e| CliError::Usage(e.to_string()))?;
    match report.get(key) {
        Some(stored) if *stored == fresh => Ok(()),
        Some(stored) => Err(CliError::Mismatch(format!("{key}: report has {stored}, log gives {fresh}"))),
        None => Err(CliError::Mismatch(format!("report has no {key:?} entry"))),
    }
}

fn replay(run: &Path, samples: usize) -> Result<()> {
    let manifest: Manifest = read_json(&run.join(MANIFEST))?;
    let cfg = &manifest.config;
    match manifest.command.as_str() {
        "swingup" => {
            let report: serde_json::Value = read_json(&run.join(REPORT))?;
            let log_path = run.join("log.csv");
            let text = std::fs::read_to_string(&log_path).map_err(|e| CliError::io(&log_path, e))?;
            let log = parse_cartpole_csv(&text)?;
            compare(&report, "metrics", &cartpole_metrics(&log, &cfg.cartpole.plant))?;
            println!("replay ok: {} log rows reproduce the metrics", log.len());
        }
        "race" | "search-f" => {
            let report: serde_json::Value = read_json(&run.join(REPORT))?;
            let stored: RaceReport = serde_json::from_value(report.clone())
                .map_err(|e| CliError::Mismatch(format!("unreadable report: {e}")))?;
            let episode: CarEpisode = read_json(&run.join("episode.json"))?;
            let fresh = race_report(
                &episode,
                &stored.controller,
                &stored.track,
                &CarRunConfig {
                    laps: stored.laps,
                    speed_factor: stored.speed_factor,
                    ..cfg.car.run.clone()
                },
                stored.search,
                stored.histogram.bin_width,
            )?;
            compare(&report, "metrics", &fresh.metrics)?;
            compare(&report, "histogram", &fresh.histogram)?;
            println!("replay ok: {} log rows reproduce the metrics and histogram", episode.log.len());
        }
        "collect" => {
            let ds = Dataset::load(run.join("dataset.csv"))?;
            let mut checked = 0;
            let mut worst = 0.0f64;
            for e in ds.episodes.iter().filter(|e| e.augmented_from.is_none()) {
                if checked >= samples {
                    break;
                }
                let r = match ds.plant {
                    PlantKind::Cartpole => {
                        replay_cartpole(&ds, e.id, samples - checked, &cfg.cartpole.mpc, &cfg.cartpole.plant)?
                    }
                    PlantKind::Car => {
                        let track = e.track.as_deref().unwrap_or(&cfg.car.train_track);
                        let (line, _) = load_track(track)?;
                        replay_car(&ds, e.id, samples - checked, &cfg.car.mpc, &cfg.car.plant, &line)?
                    }
                };
                checked += r.checked;
                worst = worst.max(r.max_abs_diff);
            }
            if worst != 0.0 {
                return Err(CliError::Mismatch(format!(
                    "teacher labels differ by up to {worst} over {checked} samples"
                )));
            }
            println!("replay ok: {checked} teacher labels reproduced exactly");
        }
        other => {
            return Err(CliError::Usage(format!(
                "{other} runs have no episode log to replay; replay a collect, race, search-f or swingup run"
            )))
        }
    }
    Ok(())
}
