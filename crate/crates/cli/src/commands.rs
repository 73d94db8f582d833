//! Command implementations. Each validates its inputs before doing any
//! work, so validation problems surface as usage failures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ric_core::data::{build_rotated_test, load_split, Dataset};
use ric_core::geometry::offset_field;
use ric_core::metrics::{
    angle_sweep_accuracy, benchmark_fps, equivariance_curves, mre_angles, write_accuracy_csv, write_bench_csv,
    write_mre_csv, AngleAccuracy, BenchResult, MreCurve,
};
use ric_core::nn::{build_baseline, Network, BASELINE_HEIGHT};
use ric_core::optim::{train as train_network, write_epoch_log, EpochRecord};
use ric_core::{ConvMode, GridConfig, Scalar};

use crate::args::{BenchArgs, Cli, Command, EquivarianceArgs, EvalArgs, OffsetsArgs, TrainArgs, DEFAULT_DATA_DIR};
use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, Precision};
use crate::{usage_error, Classify, Failure};

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Offsets(a) => offsets(&a).map(|_| ()),
        Command::Train(a) => train(&a).map(|_| ()),
        Command::Eval(a) => eval(&a).map(|_| ()),
        Command::Equivariance(a) => equivariance(&a).map(|_| ()),
        Command::Bench(a) => bench(&a).map(|_| ()),
    }
}

/// Parses an inclusive `start:stop:step` range of angles in degrees.
pub fn parse_angles(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [start, stop, step] = parts[..] else {
        return Err(usage_error(format!("angles must be start:stop:step, got `{spec}`")));
    };
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| usage_error(format!("bad number `{s}` in angles `{spec}`")))
    };
    let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
    if stop < start || step <= 0.0 {
        return Err(usage_error(format!(
            "angles `{spec}` need stop >= start and a positive step"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

/// `--data-dir` (or its environment default), then the config, then
/// `data/mnist`.
pub fn resolve_data_dir(flag: Option<&Path>, config: Option<&Path>) -> Result<PathBuf, Failure> {
    let dir = flag
        .or(config)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
    if !dir.is_dir() {
        return Err(usage_error(format!(
            "MNIST directory {} not found; pass --data-dir or set RIC_DATA_DIR",
            dir.display()
        )));
    }
    Ok(dir)
}

fn check_output(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(usage_error(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

/// Writes to `path`, or to stdout when absent.
fn emit(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), Failure> {
    match path {
        Some(p) => {
            let mut buf = Vec::new();
            body(&mut buf).runtime()?;
            fs::write(p, buf)
                .with_context(|| format!("writing {}", p.display()))
                .runtime()
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock).runtime()
        }
    }
}

fn load_test<T: Scalar>(dir: &Path) -> Result<Dataset<T>, Failure> {
    load_split::<T>(dir, "t10k")
        .with_context(|| format!("loading the MNIST test split from {}", dir.display()))
        .usage()
}

/// Writes the offset CSV and returns the number of data rows.
pub fn offsets(args: &OffsetsArgs) -> Result<usize, Failure> {
    let config = GridConfig::new(args.n, args.height).usage()?;
    if let Some(p) = &args.out {
        check_output(p)?;
    }
    let field = offset_field(config).runtime()?;
    emit(args.out.as_deref(), |w| {
        field.write_csv(w).map_err(std::io::Error::other)
    })?;
    Ok(args.height * args.height * config.slots())
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub parameters: usize,
    pub records: Vec<EpochRecord>,
}

pub fn train(args: &TrainArgs) -> Result<TrainSummary, Failure> {
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::load(p).usage()?,
        None => ExperimentConfig::default(),
    };
    config.validate().usage()?;
    let data_dir = resolve_data_dir(args.data.data_dir.as_deref(), config.data_dir.as_deref())?;
    config.data_dir = Some(data_dir.clone());
    let checkpoint = match &args.out {
        Some(p) => p.clone(),
        None => {
            let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
            fs::create_dir_all(&dir)
                .with_context(|| format!("creating {}", dir.display()))
                .usage()?;
            dir.join(format!("{}.ckpt", args.arch.tag()))
        }
    };
    let log = args.log.clone().unwrap_or_else(|| checkpoint.with_extension("csv"));
    check_output(&checkpoint)?;
    check_output(&log)?;
    let records = match config.precision {
        Precision::F32 => train_with::<f32>(args.arch, &config, &data_dir, &checkpoint, &log)?,
        Precision::F64 => train_with::<f64>(args.arch, &config, &data_dir, &checkpoint, &log)?,
    };
    Ok(TrainSummary {
        checkpoint,
        log,
        parameters: records.0,
        records: records.1,
    })
}

fn train_with<T: Scalar>(
    arch: ConvMode,
    config: &ExperimentConfig,
    data_dir: &Path,
    checkpoint: &Path,
    log_path: &Path,
) -> Result<(usize, Vec<EpochRecord>), Failure> {
    let train_config = config.train_config().usage()?;
    let full = load_split::<T>(data_dir, "train")
        .with_context(|| format!("loading the MNIST training split from {}", data_dir.display()))
        .usage()?;
    if config.val_size >= full.len() {
        return Err(usage_error(format!(
            "val_size {} leaves no training images out of {}",
            config.val_size,
            full.len()
        )));
    }
    let (train_set, val_set) = if config.val_size > 0 {
        let (t, v) = full.split_validation(config.val_size, config.seed).runtime()?;
        (t, Some(v))
    } else {
        (full, None)
    };
    let mut net = build_baseline::<T>(arch, BASELINE_HEIGHT, config.seed).runtime()?;
    let parameters = net.parameter_count();
    println!("arch {} precision {} parameters {}", arch.tag(), T::NAME, parameters);
    let mut seen = Vec::new();
    let records = train_network(&mut net, &train_set, val_set.as_ref(), &train_config, |r| {
        let val = r.val_acc.map(|v| format!(" val_acc {v:.4}")).unwrap_or_default();
        println!(
            "epoch {} lr {:.3e} loss {:.4} train_acc {:.4}{val}",
            r.epoch, r.lr, r.train_loss, r.train_acc
        );
        seen.push(r.clone());
        if let Err(e) = fs::File::create(log_path).and_then(|f| write_epoch_log(f, &seen)) {
            log::warn!("could not update {}: {e}", log_path.display());
        }
    })
    .runtime()?;
    emit(Some(log_path), |w| write_epoch_log(w, &records))?;
    Checkpoint::from_network(&net, config.seed, config.to_json())
        .save(checkpoint)
        .runtime()?;
    println!("saved {}", checkpoint.display());
    Ok((parameters, records))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    if !path.is_file() {
        return Err(usage_error(format!("model file {} not found", path.display())));
    }
    Checkpoint::load(path).usage()
}

pub fn eval(args: &EvalArgs) -> Result<AngleAccuracy, Failure> {
    let ckpt = load_checkpoint(&args.model)?;
    let angles = parse_angles(&args.angles)?;
    if args.batch == 0 || args.limit == Some(0) {
        return Err(usage_error("batch and limit must be positive"));
    }
    if let Some(p) = &args.out {
        check_output(p)?;
    }
    let data_dir = resolve_data_dir(args.data.data_dir.as_deref(), None)?;
    let result = if ckpt.width == 4 {
        eval_with::<f32>(&ckpt, &angles, &data_dir, args)?
    } else {
        eval_with::<f64>(&ckpt, &angles, &data_dir, args)?
    };
    emit(args.out.as_deref(), |w| {
        write_accuracy_csv(w, std::slice::from_ref(&result))
    })?;
    if args.out.is_some() {
        println!("clean {:.4} aggregate {:.4}", result.points[0].1, result.aggregate());
    }
    Ok(result)
}

fn eval_with<T: Scalar>(
    ckpt: &Checkpoint,
    angles: &[f64],
    data_dir: &Path,
    args: &EvalArgs,
) -> Result<AngleAccuracy, Failure> {
    let net = ckpt.to_network::<T>().usage()?;
    let mut test = load_test::<T>(data_dir)?;
    if let Some(limit) = args.limit {
        test = test.head(limit.min(test.len())).runtime()?;
    }
    let rotated = build_rotated_test(&test, angles).usage()?;
    angle_sweep_accuracy(ckpt.arch.tag(), &net, &rotated, args.batch).runtime()
}

pub fn equivariance(args: &EquivarianceArgs) -> Result<Vec<MreCurve>, Failure> {
    let source = match &args.model {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    if let Some(p) = &args.out {
        check_output(p)?;
    }
    let data_dir = resolve_data_dir(args.data.data_dir.as_deref(), None)?;
    let test = load_test::<f64>(&data_dir)?;
    if args.image_index >= test.len() {
        return Err(usage_error(format!(
            "image index {} out of range for {} test images",
            args.image_index,
            test.len()
        )));
    }
    let net: Network<f64> = match &source {
        Some(ckpt) => ckpt.to_network().usage()?,
        None => {
            let mut net = build_baseline(args.arch, BASELINE_HEIGHT, args.seed).runtime()?;
            net.eval();
            net
        }
    };
    let curves = equivariance_curves(&net, &test.image(args.image_index), &mre_angles()).runtime()?;
    emit(args.out.as_deref(), |w| write_mre_csv(w, &curves))?;
    Ok(curves)
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub results: Vec<BenchResult>,
    /// Ric throughput divided by standard throughput, when both ran.
    pub ratio: Option<f64>,
}

pub fn bench(args: &BenchArgs) -> Result<BenchReport, Failure> {
    if args.batch == 0 || args.iters == 0 {
        return Err(usage_error("batch and iters must be positive"));
    }
    if let Some(p) = &args.out {
        check_output(p)?;
    }
    let archs = match args.arch {
        Some(a) => vec![a],
        None => vec![ConvMode::Standard, ConvMode::Ric],
    };
    let results = archs
        .iter()
        .map(|&arch| match args.precision {
            Precision::F32 => bench_with::<f32>(arch, args),
            Precision::F64 => bench_with::<f64>(arch, args),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let fps = |mode: ConvMode| results.iter().find(|r| r.model == mode.tag()).map(|r| r.fps);
    let ratio = fps(ConvMode::Ric).zip(fps(ConvMode::Standard)).map(|(r, s)| r / s);
    emit(args.out.as_deref(), |w| write_bench_csv(w, &results))?;
    if let Some(ratio) = ratio {
        println!("fps ratio ric/standard: {ratio:.4}");
    }
    Ok(BenchReport { results, ratio })
}

fn bench_with<T: Scalar>(arch: ConvMode, args: &BenchArgs) -> Result<BenchResult, Failure> {
    let net = build_baseline::<T>(arch, BASELINE_HEIGHT, 0).runtime()?;
    benchmark_fps(arch.tag(), &net, args.batch, args.iters, args.warmup).runtime()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_ranges() {
        assert_eq!(parse_angles("0:350:10").unwrap().len(), 36);
        assert_eq!(parse_angles("0:0:1").unwrap(), vec![0.0]);
        assert_eq!(parse_angles("0:330:30").unwrap().last(), Some(&330.0));
        assert_eq!(parse_angles("0:0.3:0.1").unwrap().len(), 4);
        for bad in ["0:10", "10:0:5", "0:10:0", "a:1:1", "0:10:-1"] {
            assert_eq!(parse_angles(bad).unwrap_err().exit_code(), crate::EXIT_USAGE, "{bad}");
        }
    }

    #[test]
    fn odd_height_is_a_usage_error() {
        let err = offsets(&OffsetsArgs {
            n: 1,
            height: 5,
            out: None,
        })
        .unwrap_err();
        assert_eq!(err.exit_code(), crate::EXIT_USAGE);
        assert!(err.to_string().contains("even"), "{err}");
    }
}
