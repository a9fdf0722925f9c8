//! The five subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use iahvae::experiments::{
    available_cores, bench_depth, deblur, denoise, inverse_study, thread_count, BenchConfig,
    InverseTask, BENCH_CSV_HEADER,
};
use iahvae::inference::{infer as run_inference, InferenceConfig, Mode, ReconLoss};
use iahvae::model::{parse_layers, Hierarchy, InitScheme, ModelConfig, HALF_LN_TAU};
use iahvae::spectral::{decompose as split_scales, recompose_scale, ScalePartition};
use iahvae::tensor::Tensor;
use iahvae::training::{
    generate_synthetic, load_raw, save_pgm, save_raw, train as run_training, Checkpoint,
    DatasetKind, DatasetSpec, Normalization, TrainConfig,
};

use crate::config::RunConfig;
use crate::CliError;

const MEAN_KEY: &str = "data.mean";
const STD_KEY: &str = "data.std";

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(cfg.raw("out"));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.lock"), cfg.lock_text())?;
    Ok(dir)
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    match cfg.raw("checkpoint") {
        "" => Path::new(cfg.raw("out")).join("model.iahc"),
        p => PathBuf::from(p),
    }
}

fn data_spec(cfg: &RunConfig) -> Result<DatasetSpec, CliError> {
    let kind = cfg.raw("data.kind");
    Ok(DatasetSpec {
        kind: DatasetKind::parse(kind)
            .ok_or_else(|| CliError::Config(format!("unknown data.kind {kind:?}")))?,
        resolution: cfg.get("data.resolution")?,
        count: cfg.get("data.count")?,
        seed: cfg.get("data.seed")?,
    })
}

fn model_config(cfg: &RunConfig, resolution: usize) -> Result<ModelConfig, CliError> {
    let layers = cfg.raw("model.layers_per_scale");
    let init = cfg.raw("model.init");
    let mc = ModelConfig {
        resolution,
        layers_per_scale: parse_layers(layers, resolution).ok_or_else(|| {
            CliError::Config(format!("invalid model.layers_per_scale {layers:?}"))
        })?,
        width_factor: cfg.get("model.width_factor")?,
        blocks_per_scale: cfg.get("model.blocks_per_scale")?,
        init: InitScheme::parse(init)
            .ok_or_else(|| CliError::Config(format!("unknown model.init {init:?}")))?,
        seed: cfg.get("seed")?,
    };
    mc.validate()?;
    Ok(mc)
}

fn inference_config(cfg: &RunConfig, iterations_key: &str) -> Result<InferenceConfig, CliError> {
    let mode = cfg.raw("infer.mode");
    let loss = cfg.raw("infer.loss");
    let mode = Mode::parse(mode)
        .ok_or_else(|| CliError::Config(format!("unknown infer.mode {mode:?}")))?;
    let ic = InferenceConfig {
        mode,
        // N does not apply to a single encoder pass.
        iterations: if mode == Mode::Amortized {
            0
        } else {
            cfg.get(iterations_key)?
        },
        step_size: cfg.get("infer.step_size")?,
        beta: cfg.get("infer.beta")?,
        loss: ReconLoss::parse(loss)
            .ok_or_else(|| CliError::Config(format!("unknown infer.loss {loss:?}")))?,
        seed: cfg.get("seed")?,
        ..InferenceConfig::default()
    };
    ic.validate()?;
    Ok(ic)
}

fn load_model(cfg: &RunConfig) -> Result<(Hierarchy, Normalization), CliError> {
    let path = checkpoint_path(cfg);
    if !path.is_file() {
        return Err(CliError::Config(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    let ck = Checkpoint::load(&path)?;
    let stat = |k: &str, default: f64| -> Result<f64, CliError> {
        ck.extra.get(k).map_or(Ok(default), |v| {
            v.parse()
                .map_err(|_| CliError::Config(format!("checkpoint has invalid {k} {v:?}")))
        })
    };
    let norm = Normalization {
        mean: stat(MEAN_KEY, 0.0)?,
        std: stat(STD_KEY, 1.0)?,
    };
    Ok((ck.restore()?, norm))
}

/// `count` normalized evaluation images: from a raw file when `input_key` is
/// set, else the held-out split of the configured synthetic data.
fn eval_images(
    cfg: &RunConfig,
    input_key: &str,
    count: usize,
    resolution: usize,
    norm: &Normalization,
) -> Result<Vec<Tensor>, CliError> {
    let raw = match cfg.raw(input_key) {
        "" => {
            let spec = data_spec(cfg)?;
            let test_count: usize = cfg.get("data.test_count")?;
            if count > test_count {
                return Err(CliError::Config(format!(
                    "{count} images requested but data.test_count is {test_count}"
                )));
            }
            let all = generate_synthetic(&DatasetSpec {
                count: spec.count + test_count,
                resolution,
                ..spec
            })?;
            all[spec.count..spec.count + count].to_vec()
        }
        path => split_stack(&load_raw(Path::new(path))?)?,
    };
    for x in &raw {
        if x.shape() != [resolution, resolution] {
            return Err(CliError::Config(format!(
                "input image has shape {:?}, model expects {resolution}x{resolution}",
                x.shape()
            )));
        }
    }
    Ok(raw.iter().map(|x| norm.apply(x)).collect())
}

/// Accepts one `[n, n]` image or a `[k, n, n]` stack.
fn split_stack(t: &Tensor) -> Result<Vec<Tensor>, CliError> {
    match *t.shape() {
        [_, _] => Ok(vec![t.clone()]),
        [k, h, w] => Ok((0..k)
            .map(|i| Tensor::new(vec![h, w], t.data()[i * h * w..(i + 1) * h * w].to_vec()))
            .collect::<Result<_, _>>()?),
        _ => Err(CliError::Config(format!(
            "input must be 2-D or 3-D, got {:?}",
            t.shape()
        ))),
    }
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = data_spec(cfg)?;
    let model_cfg = model_config(cfg, spec.resolution)?;
    let train_cfg = TrainConfig {
        epochs: cfg.get("train.epochs")?,
        batch_size: cfg.get("train.batch_size")?,
        learning_rate: cfg.get("train.learning_rate")?,
        clip_norm: cfg.get("train.clip_norm")?,
        seed: cfg.get("seed")?,
    };
    train_cfg.validate()?;
    let dir = out_dir(cfg)?;
    let raw = generate_synthetic(&spec)?;
    let norm = Normalization::fit(&raw);
    let data: Vec<Tensor> = raw.iter().map(|x| norm.apply(x)).collect();

    let mut model = Hierarchy::new(model_cfg)?;
    let start = Instant::now();
    let outcome = run_training(&mut model, &data, &train_cfg)?;
    for e in &outcome.epochs {
        println!(
            "epoch {:>3}  loss {:.6}  recon {:.6}  kl {:.6}",
            e.epoch, e.loss, e.recon, e.kl
        );
    }
    let mut ck = Checkpoint::capture(&model, Some(train_cfg), outcome.rng_state, outcome.step);
    ck.extra.insert(MEAN_KEY.into(), format!("{:?}", norm.mean));
    ck.extra.insert(STD_KEY.into(), format!("{:?}", norm.std));
    let path = checkpoint_path(cfg);
    ck.save(&path)?;
    fs::write(dir.join("loss.csv"), outcome.to_csv())?;
    println!(
        "trained {} steps in {:.1}s; checkpoint {}",
        outcome.step,
        start.elapsed().as_secs_f64(),
        path.display()
    );
    Ok(())
}

pub fn infer(cfg: &RunConfig) -> Result<(), CliError> {
    let base = inference_config(cfg, "infer.N")?;
    let (model, norm) = load_model(cfg)?;
    let images = eval_images(
        cfg,
        "infer.input",
        cfg.get("infer.images")?,
        model.config().resolution,
        &norm,
    )?;
    let dir = out_dir(cfg)?;
    let d = model.pixels() as f64;
    let mut metrics = String::from("image,mode,N,mse,nll_nats_per_dim,time_s\n");
    for (i, x) in images.iter().enumerate() {
        let ic = InferenceConfig {
            seed: base.seed.wrapping_add(i as u64),
            ..base.clone()
        };
        let start = Instant::now();
        let r = run_inference(&model, x, &ic)?;
        let time_s = start.elapsed().as_secs_f64();
        let mse = x.mse(&r.image)?;
        let nll = (0.5 * mse * d + r.kl_init) / d + HALF_LN_TAU;
        let _ = writeln!(
            metrics,
            "{i},{},{},{mse:.8e},{nll:.8e},{time_s:.6e}",
            ic.mode.as_str(),
            ic.iterations
        );
        let recon = norm.invert(&r.image);
        save_raw(&recon, &dir.join(format!("recon_{i}.iaht")))?;
        save_pgm(&recon, &dir.join(format!("recon_{i}.pgm")))?;
        save_pgm(&norm.invert(x), &dir.join(format!("input_{i}.pgm")))?;
        fs::write(dir.join(format!("trace_{i}.csv")), r.trace.to_csv())?;
        println!("image {i}: mse {mse:.6}  nll {nll:.6} nats/dim  {time_s:.3}s");
    }
    fs::write(dir.join("metrics.csv"), metrics)?;
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Result<(), CliError> {
    let bc = BenchConfig {
        resolution: cfg.get("bench.resolution")?,
        depths: cfg.list("bench.depths")?,
        iterations: cfg.get("bench.N")?,
        warmup: cfg.get("bench.warmup")?,
        repetitions: cfg.get("bench.repetitions")?,
        width_factor: cfg.get("bench.width_factor")?,
        seed: cfg.get("seed")?,
    };
    if bc.resolution < 2 || !bc.resolution.is_power_of_two() {
        return Err(CliError::Config(format!(
            "bench.resolution {} must be a power of two ≥ 2",
            bc.resolution
        )));
    }
    let dir = out_dir(cfg)?;
    let mut csv = format!("{BENCH_CSV_HEADER}\n");
    for &depth in &bc.depths {
        let rows = bench_depth(&BenchConfig {
            depths: vec![depth],
            ..bc.clone()
        })?;
        for row in rows {
            println!(
                "depth {:>3}: subset {:.4}s  full-path {:.4}s  ratio {:.2}",
                row.depth, row.subset_s, row.vanilla_s, row.ratio
            );
            csv.push_str(&row.csv_line());
            csv.push('\n');
        }
    }
    fs::write(dir.join("bench.csv"), csv)?;
    Ok(())
}

/// Converts a cutoff in pixels (side of the measured block) to a scale index.
fn cutoff_scale(pixels: usize, partition: &ScalePartition) -> Result<usize, CliError> {
    if pixels == 0 || !pixels.is_power_of_two() || pixels > partition.size() {
        return Err(CliError::Config(format!(
            "cutoff {pixels} must be a power of two no larger than {}",
            partition.size()
        )));
    }
    Ok(pixels.trailing_zeros() as usize)
}

pub fn inverse(cfg: &RunConfig) -> Result<(), CliError> {
    let base = inference_config(cfg, "inverse.N")?;
    let (model, norm) = load_model(cfg)?;
    let task = match cfg.raw("inverse.task") {
        "deblur" => InverseTask::Deblur {
            cutoff_scale: cutoff_scale(cfg.get("inverse.cutoff")?, model.partition())?,
        },
        "denoise" => {
            let sigma: f64 = cfg.get("inverse.sigma")?;
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(CliError::Config(format!(
                    "inverse.sigma {sigma} must be non-negative"
                )));
            }
            InverseTask::Denoise { sigma }
        }
        other => return Err(CliError::Config(format!("unknown inverse.task {other:?}"))),
    };
    let images = eval_images(
        cfg,
        "infer.input",
        cfg.get("inverse.images")?,
        model.config().resolution,
        &norm,
    )?;
    let dir = out_dir(cfg)?;
    let summary = inverse_study(
        &model,
        &images,
        task,
        &base,
        thread_count(available_cores()),
    )?;
    let (name, metric) = match task {
        InverseTask::Deblur { .. } => ("deblur", "consistency_l1"),
        InverseTask::Denoise { .. } => ("denoise", "mse"),
    };
    let mut csv = String::from("task,N,images,metric,hybrid,amortized,input_mse\n");
    let _ = writeln!(
        csv,
        "{name},{},{},{metric},{:.8e},{:.8e},{}",
        summary.iterations,
        images.len(),
        summary.hybrid,
        summary.amortized,
        summary
            .input_mse
            .map_or(String::new(), |v| format!("{v:.8e}"))
    );
    fs::write(dir.join("summary.csv"), csv)?;
    println!(
        "{name} over {} images: {metric} hybrid {:.6}  amortized {:.6}",
        images.len(),
        summary.hybrid,
        summary.amortized
    );

    // Images for the first example.
    let x = &images[0];
    let ic = |mode: Mode| InferenceConfig {
        mode,
        iterations: if mode == Mode::Amortized {
            0
        } else {
            base.iterations
        },
        ..base.clone()
    };
    save_pgm(&norm.invert(x), &dir.join("clean.pgm"))?;
    for mode in [Mode::Hybrid, Mode::Amortized] {
        let tag = mode.as_str();
        match task {
            InverseTask::Deblur { cutoff_scale } => {
                let o = deblur(&model, x, cutoff_scale, &ic(mode))?;
                save_pgm(&norm.invert(&o.observed), &dir.join("observed.pgm"))?;
                save_pgm(&o.observed_spectrum, &dir.join("observed_spectrum.pgm"))?;
                save_pgm(
                    &norm.invert(&o.result.image),
                    &dir.join(format!("{tag}.pgm")),
                )?;
                save_pgm(
                    &o.reconstructed_spectrum,
                    &dir.join(format!("{tag}_spectrum.pgm")),
                )?;
            }
            InverseTask::Denoise { sigma } => {
                let o = denoise(&model, x, sigma, &ic(mode))?;
                save_pgm(&norm.invert(&o.noisy), &dir.join("observed.pgm"))?;
                save_pgm(
                    &norm.invert(&o.result.image),
                    &dir.join(format!("{tag}.pgm")),
                )?;
            }
        }
    }
    Ok(())
}

pub fn decompose(cfg: &RunConfig) -> Result<(), CliError> {
    let image = match cfg.raw("decompose.input") {
        "" => {
            let spec = data_spec(cfg)?;
            generate_synthetic(&DatasetSpec { count: 1, ..spec })?.remove(0)
        }
        path => {
            let t = load_raw(Path::new(path))?;
            if t.rank() != 2 {
                return Err(CliError::Config(format!(
                    "decompose needs a 2-D image, got {:?}",
                    t.shape()
                )));
            }
            t
        }
    };
    let [h, w] = *image.shape() else {
        unreachable!()
    };
    let partition = ScalePartition::new(h, w).map_err(|e| CliError::Config(e.to_string()))?;
    let dir = out_dir(cfg)?;
    let spectra = split_scales(&image, &partition).map_err(|e| CliError::Config(e.to_string()))?;
    let mut csv = String::from("scale,side,bins,energy\n");
    for spec in &spectra {
        let k = spec.scale;
        let dofs = spec.to_dofs(&partition);
        let energy: f64 = dofs
            .iter()
            .zip(partition.dof_energy_weights(k))
            .map(|(d, wgt)| wgt * d * d)
            .sum();
        let _ = writeln!(
            csv,
            "{k},{},{},{energy:.10e}",
            partition.scale_side(k),
            partition.count(k)
        );
        let part = recompose_scale(spec, &partition).map_err(|e| CliError::Other(e.to_string()))?;
        save_raw(&part, &dir.join(format!("scale_{k}.iaht")))?;
        save_pgm(&part, &dir.join(format!("scale_{k}.pgm")))?;
    }
    save_pgm(&image, &dir.join("input.pgm"))?;
    fs::write(dir.join("energies.csv"), csv)?;
    println!("{} scales written to {}", spectra.len(), dir.display());
    Ok(())
}
