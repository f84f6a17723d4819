//! Subcommand implementations. Every artifact goes through atomic writes,
//! and every metrics report embeds the exact invocation, the seeds in
//! play, and checksums of the checkpoint and dataset manifest involved.

use std::path::{Path, PathBuf};
use std::time::Instant;

use photongest_core::data::{import_released, load_dataset, save_dataset, split, synth_generate, DatasetManifest, SyntheticGestureConfig};
use photongest_core::error::Error;
use photongest_core::fsutil::{sha256_file, write_atomic_str};
use photongest_core::imaging::Frame;
use photongest_core::models::{builtin_spec, load_checkpoint, save_checkpoint, ArchitectureSpec, CheckpointMeta, Network};
use photongest_core::profiling::build_report;
use photongest_core::rng::{derive_seed, stream, tag};
use photongest_core::training::{evaluate, history_to_csv, train, ConfusionMatrix, EvalOptions, TrainConfig};
use serde::Serialize;

use crate::run_config::{pick, RunConfig};
use crate::{EvalArgs, ImportArgs, ProfileArgs, SynthArgs, TrainArgs};

#[derive(Serialize)]
struct Checksums {
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset_manifest: Option<String>,
}

fn join_invocation(argv: &[String]) -> String {
    argv.join(" ")
}

fn load_arch(name_or_path: &str) -> Result<ArchitectureSpec, Error> {
    if let Some(spec) = builtin_spec(name_or_path) {
        return Ok(spec);
    }
    let path = Path::new(name_or_path);
    if !path.is_file() {
        return Err(Error::Data(format!(
            "architecture {name_or_path:?} is neither a builtin (cnn, scnn, smlp) nor a config file"
        )));
    }
    ArchitectureSpec::from_toml_str(&std::fs::read_to_string(path)?)
}

fn load_checked_dataset(
    dir: &Path,
    num_classes: usize,
) -> Result<(Vec<Frame>, DatasetManifest), Error> {
    let (frames, manifest) = load_dataset(dir)?;
    if manifest.num_classes() != num_classes {
        return Err(Error::Validation(format!(
            "dataset {} has {} classes, model expects {num_classes}",
            dir.display(),
            manifest.num_classes()
        )));
    }
    Ok((frames, manifest))
}

/// Dotted-key flattening of a metrics structure for `--csv` mode.
fn flatten_toml(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) {
    match value {
        toml::Value::Table(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_toml(&key, v, out);
            }
        }
        toml::Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten_toml(&format!("{prefix}.{i}"), v, out);
            }
        }
        toml::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Writes `metrics.toml`, or `metrics.csv` as key,value rows with `--csv`.
fn write_metrics<T: Serialize>(out_dir: &Path, name: &str, csv: bool, metrics: &T) -> Result<PathBuf, Error> {
    if csv {
        let value = toml::Value::try_from(metrics)
            .map_err(|e| Error::Format(format!("metrics encode: {e}")))?;
        let mut pairs = Vec::new();
        flatten_toml("", &value, &mut pairs);
        let mut text = String::from("key,value\n");
        for (k, v) in pairs {
            let quoted = if v.contains(',') || v.contains('"') {
                format!("\"{}\"", v.replace('"', "\"\""))
            } else {
                v
            };
            text.push_str(&format!("{k},{quoted}\n"));
        }
        let path = out_dir.join(format!("{name}.csv"));
        write_atomic_str(&path, &text)?;
        Ok(path)
    } else {
        let text = toml::to_string(metrics)
            .map_err(|e| Error::Format(format!("metrics encode: {e}")))?;
        let path = out_dir.join(format!("{name}.toml"));
        write_atomic_str(&path, &text)?;
        Ok(path)
    }
}

pub fn cmd_synth(args: SynthArgs, _argv: &[String]) -> Result<(), Error> {
    let rc = RunConfig::load(args.common.config.as_deref())?;
    let out = rc.resolve_out(args.common.out.clone());
    let defaults = SyntheticGestureConfig::default();
    let cfg = SyntheticGestureConfig {
        rotation_deg: pick(args.rotation, rc.synth.rotation_deg, defaults.rotation_deg),
        photon_budget: pick(args.budget, rc.synth.photon_budget, defaults.photon_budget),
        background_rate: pick(args.background, rc.synth.background_rate, defaults.background_rate),
        render_size: pick(args.render_size, rc.synth.render_size, defaults.render_size),
        seed: pick(args.seed, rc.seed, 0),
    };
    let per_class = pick(args.per_class, rc.synth.per_class, 100);
    let (frames, manifest) = synth_generate(&cfg, per_class)?;
    save_dataset(&out, &frames, &manifest)?;
    println!(
        "wrote {} frames ({} classes x {per_class}) to {}",
        frames.len(),
        manifest.num_classes(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics {
    invocation: String,
    arch: String,
    dataset: String,
    #[serde(with = "photongest_core::serde_seed")]
    seed: u64,
    train_frames: usize,
    val_frames: usize,
    epochs_run: usize,
    best_epoch: usize,
    best_val_accuracy: f64,
    wall_secs: f64,
    checksums: Checksums,
}

pub fn cmd_train(args: TrainArgs, argv: &[String]) -> Result<(), Error> {
    let rc = RunConfig::load(args.common.config.as_deref())?;
    let out = rc.resolve_out(args.common.out.clone());
    let seed = pick(args.seed, rc.seed, 0);

    let arch_name = args
        .arch
        .clone()
        .or_else(|| rc.arch.clone())
        .unwrap_or_else(|| "scnn".to_string());
    let mut spec = load_arch(&arch_name)?;

    let mut cfg = TrainConfig::default();
    let tt = &rc.training;
    cfg.lr = pick(args.lr, tt.lr, cfg.lr);
    cfg.beta1 = tt.beta1.unwrap_or(cfg.beta1);
    cfg.beta2 = tt.beta2.unwrap_or(cfg.beta2);
    cfg.eps_adam = tt.eps_adam.unwrap_or(cfg.eps_adam);
    cfg.batch_size = pick(args.batch_size, tt.batch_size, cfg.batch_size);
    cfg.max_epochs = pick(args.max_epochs, tt.max_epochs, cfg.max_epochs);
    cfg.patience = pick(args.patience, tt.patience, cfg.patience);
    cfg.seed = seed;
    cfg.timesteps = pick(
        args.timesteps,
        tt.timesteps,
        spec.timesteps.unwrap_or(cfg.timesteps),
    );
    if spec.is_spiking() {
        spec.timesteps = Some(cfg.timesteps);
        spec.validate()?;
    }
    cfg.validate()?;

    let (frames, _manifest) = load_checked_dataset(&args.data, spec.num_classes)?;
    let val_ratio = pick(args.val_ratio, rc.val_ratio, 0.1);
    if !(val_ratio > 0.0 && val_ratio < 1.0) {
        return Err(Error::Domain(format!(
            "val ratio {val_ratio} must lie in (0, 1)"
        )));
    }
    let (train_set, val_set) = split(&frames, 1.0 - val_ratio, derive_seed(seed, &[tag("train-val")]))?;

    let mut init_rng = stream(seed, &[tag("init")]);
    let mut net: Network<f32> = Network::build(&spec, &mut init_rng)?;
    let started = Instant::now();
    let outcome = train(&mut net, &train_set, &val_set, &cfg)?;
    let wall_secs = started.elapsed().as_secs_f64();

    let ckpt_path = out.join("checkpoint.ckpt");
    save_checkpoint(
        &ckpt_path,
        &outcome.best,
        &CheckpointMeta {
            epoch: outcome.best_epoch,
            seed,
            val_accuracy: outcome.best_val_acc,
        },
    )?;
    write_atomic_str(&out.join("history.csv"), &history_to_csv(&outcome.history))?;

    let metrics = TrainMetrics {
        invocation: join_invocation(argv),
        arch: spec.name.clone(),
        dataset: args.data.display().to_string(),
        seed,
        train_frames: train_set.len(),
        val_frames: val_set.len(),
        epochs_run: outcome.stopped_epoch,
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_val_acc,
        wall_secs,
        checksums: Checksums {
            checkpoint: Some(sha256_file(&ckpt_path)?),
            dataset_manifest: Some(sha256_file(&args.data.join("manifest"))?),
        },
    };
    write_metrics(&out, "metrics", args.common.csv, &metrics)?;
    println!(
        "trained {} for {} epochs: best val accuracy {:.4} at epoch {} ({:.1}s)",
        spec.name, outcome.stopped_epoch, outcome.best_val_acc, outcome.best_epoch, wall_secs
    );
    Ok(())
}

#[derive(Serialize)]
struct ConditionMetrics {
    accuracies: Vec<f64>,
    mean: f64,
    min: f64,
    max: f64,
    secs_per_image: f64,
}

#[derive(Serialize)]
struct AmbientMetrics {
    lambda_bg: f64,
    accuracies: Vec<f64>,
    mean: f64,
    min: f64,
    max: f64,
    secs_per_image: f64,
}

#[derive(Serialize)]
struct EvalMetrics {
    invocation: String,
    checkpoint: String,
    dataset: String,
    #[serde(with = "photongest_core::serde_seed")]
    base_seed: u64,
    #[serde(with = "photongest_core::serde_seed::vec")]
    encoder_seeds: Vec<u64>,
    samples: usize,
    checkpoint_epoch: usize,
    #[serde(with = "photongest_core::serde_seed")]
    checkpoint_seed: u64,
    checkpoint_val_accuracy: f64,
    clean: ConditionMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    ambient: Option<AmbientMetrics>,
    checksums: Checksums,
}

fn summarize(accs: &[f64]) -> (f64, f64, f64) {
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

fn run_condition(
    net: &mut Network<f32>,
    frames: &[Frame],
    seeds: &[u64],
    ambient: Option<f64>,
    batch_size: usize,
) -> Result<(Vec<f64>, ConfusionMatrix, f64), Error> {
    let mut accs = Vec::with_capacity(seeds.len());
    let mut first: Option<(ConfusionMatrix, f64)> = None;
    for &encoder_seed in seeds {
        let report = evaluate(
            net,
            frames,
            &EvalOptions {
                encoder_seed,
                ambient,
                record_spikes: false,
                batch_size,
            },
        )?;
        accs.push(report.accuracy);
        if first.is_none() {
            first = Some((report.confusion, report.secs_per_image));
        }
    }
    let (confusion, secs) = first.expect("at least one seed");
    Ok((accs, confusion, secs))
}

pub fn cmd_eval(args: EvalArgs, argv: &[String]) -> Result<(), Error> {
    let rc = RunConfig::load(args.common.config.as_deref())?;
    let out = rc.resolve_out(args.common.out.clone());
    let (mut net, meta): (Network<f32>, CheckpointMeta) = load_checkpoint(&args.checkpoint)?;
    let (frames, _manifest) = load_checked_dataset(&args.data, net.spec.num_classes)?;

    let base_seed = pick(args.seed, rc.seed, 0);
    let n_seeds = pick(args.seeds, rc.seeds, 1);
    if n_seeds == 0 {
        return Err(Error::Domain("--seeds must be >= 1".into()));
    }
    let ambient = args.ambient.or(rc.ambient);
    if let Some(rate) = ambient {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::Domain(format!(
                "ambient rate {rate} must be a finite non-negative number"
            )));
        }
    }
    let batch_size = pick(args.batch_size, rc.training.batch_size, 32);
    let encoder_seeds: Vec<u64> = (0..n_seeds)
        .map(|i| derive_seed(base_seed, &[tag("eval-encode"), i as u64]))
        .collect();

    let (clean_accs, clean_conf, clean_secs) =
        run_condition(&mut net, &frames, &encoder_seeds, None, batch_size)?;
    write_atomic_str(&out.join("confusion.csv"), &clean_conf.to_csv())?;
    let (clean_mean, clean_min, clean_max) = summarize(&clean_accs);

    let ambient_metrics = match ambient {
        Some(lambda_bg) => {
            let (accs, conf, secs) =
                run_condition(&mut net, &frames, &encoder_seeds, Some(lambda_bg), batch_size)?;
            write_atomic_str(&out.join("confusion_ambient.csv"), &conf.to_csv())?;
            let (mean, min, max) = summarize(&accs);
            println!(
                "ambient (lambda_bg {lambda_bg}) accuracy mean {:.4} over {} seed(s)",
                mean,
                accs.len()
            );
            Some(AmbientMetrics {
                lambda_bg,
                accuracies: accs,
                mean,
                min,
                max,
                secs_per_image: secs,
            })
        }
        None => None,
    };

    let metrics = EvalMetrics {
        invocation: join_invocation(argv),
        checkpoint: args.checkpoint.display().to_string(),
        dataset: args.data.display().to_string(),
        base_seed,
        encoder_seeds,
        samples: frames.len(),
        checkpoint_epoch: meta.epoch,
        checkpoint_seed: meta.seed,
        checkpoint_val_accuracy: meta.val_accuracy,
        clean: ConditionMetrics {
            accuracies: clean_accs.clone(),
            mean: clean_mean,
            min: clean_min,
            max: clean_max,
            secs_per_image: clean_secs,
        },
        ambient: ambient_metrics,
        checksums: Checksums {
            checkpoint: Some(sha256_file(&args.checkpoint)?),
            dataset_manifest: Some(sha256_file(&args.data.join("manifest"))?),
        },
    };
    write_metrics(&out, "metrics", args.common.csv, &metrics)?;
    println!(
        "clean accuracy mean {clean_mean:.4} over {} seed(s) on {} frames",
        clean_accs.len(),
        frames.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct ProfileMetrics {
    invocation: String,
    checkpoint: String,
    dataset: String,
    #[serde(with = "photongest_core::serde_seed")]
    encoder_seed: u64,
    samples: usize,
    accuracy: f64,
    flops_cnn: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    flops_snn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reduction_percent: Option<f64>,
    secs_per_image: f64,
    checksums: Checksums,
}

pub fn cmd_profile(args: ProfileArgs, argv: &[String]) -> Result<(), Error> {
    let rc = RunConfig::load(args.common.config.as_deref())?;
    let out = rc.resolve_out(args.common.out.clone());
    let (mut net, _meta): (Network<f32>, CheckpointMeta) = load_checkpoint(&args.checkpoint)?;
    let (frames, _manifest) = load_checked_dataset(&args.data, net.spec.num_classes)?;

    let base_seed = pick(args.seed, rc.seed, 0);
    let batch_size = pick(args.batch_size, rc.training.batch_size, 32);
    let encoder_seed = derive_seed(base_seed, &[tag("profile-encode")]);

    let eval_report = evaluate(
        &mut net,
        &frames,
        &EvalOptions {
            encoder_seed,
            ambient: None,
            record_spikes: true,
            batch_size,
        },
    )?;
    let report = build_report(
        &net.spec,
        eval_report.spike_rates.as_deref(),
        eval_report.secs_per_image,
    )?;

    let mut csv = String::from("layer,slots,r,flops\n");
    for row in &report.layers {
        let r = row.rate.map(|r| format!("{r:.6}")).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{:.3}\n", row.name, row.slots, r, row.flops));
    }
    write_atomic_str(&out.join("profile_layers.csv"), &csv)?;

    let metrics = ProfileMetrics {
        invocation: join_invocation(argv),
        checkpoint: args.checkpoint.display().to_string(),
        dataset: args.data.display().to_string(),
        encoder_seed,
        samples: eval_report.samples,
        accuracy: eval_report.accuracy,
        flops_cnn: report.flops_cnn,
        flops_snn: report.flops_snn,
        reduction_percent: report.reduction_percent,
        secs_per_image: report.secs_per_image,
        checksums: Checksums {
            checkpoint: Some(sha256_file(&args.checkpoint)?),
            dataset_manifest: Some(sha256_file(&args.data.join("manifest"))?),
        },
    };
    write_metrics(&out, "profile", args.common.csv, &metrics)?;
    match (report.flops_snn, report.reduction_percent) {
        (Some(snn), Some(red)) => println!(
            "profiled {}: {} CNN FLOPs vs {snn:.1} spiking FLOPs ({red:.1}% reduction)",
            net.spec.name, report.flops_cnn
        ),
        _ => println!(
            "profiled {}: {} FLOPs per inference",
            net.spec.name, report.flops_cnn
        ),
    }
    Ok(())
}

pub fn cmd_import(args: ImportArgs, _argv: &[String]) -> Result<(), Error> {
    let rc = RunConfig::load(args.common.config.as_deref())?;
    let out = rc.resolve_out(args.common.out.clone());
    let (frames, manifest) = import_released(&args.src)?;
    save_dataset(&out, &frames, &manifest)?;
    let counts: Vec<String> = manifest
        .classes
        .iter()
        .zip(&manifest.frame_counts)
        .map(|(c, n)| format!("{c}={n}"))
        .collect();
    println!(
        "imported {} frames into {} ({})",
        frames.len(),
        out.display(),
        counts.join(", ")
    );
    Ok(())
}
