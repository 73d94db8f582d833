//! Acceptance run: one PASS/FAIL line per criterion, details indented
//! below it. `RIC_ACCEPTANCE=1,4,9` selects a subset. MNIST is read from
//! `RIC_DATA_DIR`, falling back to `data/mnist` in the workspace.
//!
//! Failures are reported but only change the exit status when
//! `RIC_ACCEPTANCE_STRICT` is set, so the rest of the test suite still runs.

use std::cell::OnceCell;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ric_cli::args::BenchArgs;
use ric_cli::commands::bench;
use ric_cli::{Checkpoint, Precision};
use ric_core::conv::{conv_backward, conv_forward};
use ric_core::data::{build_rotated_test, load_mnist, load_split, Dataset};
use ric_core::geometry::{offset_field, GridConfig};
use ric_core::metrics::{angle_sweep_accuracy, count_parameters, equivariance_curves, mre, mre_angles, AngleAccuracy};
use ric_core::nn::{build_baseline, rotate_feature_map, Network};
use ric_core::optim::{train, TrainConfig};
use ric_core::{ConvMode, ConvSpec, Tensor};

type Outcome = Result<Vec<String>, Vec<String>>;

fn data_dir() -> PathBuf {
    std::env::var_os("RIC_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist")))
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn verdict(ok: bool, lines: Vec<String>) -> Outcome {
    if ok {
        Ok(lines)
    } else {
        Err(lines)
    }
}

/// Sample-point offsets evaluated straight from the circle construction:
/// ring points sorted by polar angle, rotated to the radial direction.
fn oracle_offset(n: usize, h: usize, row: usize, col: usize, kh: usize, kw: usize) -> (f64, f64) {
    let c = (h as f64 - 1.0) / 2.0;
    let phi = (c - row as f64).atan2(col as f64 - c);
    let (px, py) = (kw as i64 - n as i64, n as i64 - kh as i64);
    let r = px.abs().max(py.abs());
    if r == 0 {
        return (0.0, 0.0);
    }
    let angle = |(a, b): (i64, i64)| (b as f64).atan2(a as f64).rem_euclid(2.0 * PI);
    let mut ring: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|a| (-r..=r).map(move |b| (a, b)))
        .filter(|&(a, b)| a.abs().max(b.abs()) == r)
        .collect();
    ring.sort_by(|&p, &q| angle(p).total_cmp(&angle(q)));
    let i = ring.iter().position(|&p| p == (px, py)).unwrap();
    let t = phi + 2.0 * PI * i as f64 / (8 * r) as f64;
    (r as f64 * t.cos() - px as f64, r as f64 * t.sin() - py as f64)
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in [1, 2] {
        for h in [4, 8, 32] {
            let field = offset_field(GridConfig::new(n, h).unwrap()).unwrap();
            let k = 2 * n + 1;
            for row in 0..h {
                for col in 0..h {
                    for slot in 0..k * k {
                        let got = field.offset_cartesian(row, col, slot);
                        let (ex, ey) = oracle_offset(n, h, row, col, slot / k, slot % k);
                        worst = worst.max((got.x - ex).abs()).max((got.y - ey).abs());
                    }
                }
            }
        }
    }
    verdict(worst < 1e-12, vec![format!("max abs error {worst:.3e} (gate < 1e-12)")])
}

/// Anticlockwise quarter turns of every `[h, h]` plane by index permutation.
fn quarter_turn(x: &Tensor<f64>, turns: usize) -> Tensor<f64> {
    let h = x.shape()[x.ndim() - 1];
    let mut out = x.clone();
    for _ in 0..turns {
        let src = out.clone();
        for (dst, plane) in out.data_mut().chunks_mut(h * h).zip(src.data().chunks(h * h)) {
            for row in 0..h {
                for col in 0..h {
                    dst[(h - 1 - col) * h + row] = plane[row * h + col];
                }
            }
        }
    }
    out
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_ric, mut min_ratio, mut trials) = (0.0f64, f64::INFINITY, 0);
    let mut control_ok = true;
    for size in [8, 16, 32] {
        for _ in 0..4 {
            let ric = ConvSpec::new(3, 4, 1, ConvMode::Ric);
            let std = ConvSpec::new(3, 4, 1, ConvMode::Standard);
            let w = random(&mut rng, &ric.weight_shape());
            let b = random(&mut rng, &[4]);
            let x = random(&mut rng, &[1, 3, size, size]);
            for turns in 1..=3 {
                let discrepancy = |spec: &ConvSpec| {
                    let base = conv_forward(spec, &w, Some(&b), &x, None).unwrap();
                    let turned = conv_forward(spec, &w, Some(&b), &quarter_turn(&x, turns), None).unwrap();
                    turned.max_abs_diff(&quarter_turn(&base, turns)).unwrap()
                };
                let (d_ric, d_std) = (discrepancy(&ric), discrepancy(&std));
                worst_ric = worst_ric.max(d_ric);
                control_ok &= d_std > 10.0 * d_ric;
                min_ratio = min_ratio.min(d_std / d_ric.max(f64::MIN_POSITIVE));
                trials += 1;
            }
        }
    }
    verdict(
        worst_ric < 1e-9 && control_ok,
        vec![
            format!("ric max discrepancy {worst_ric:.3e} over {trials} trials (gate < 1e-9)"),
            format!("standard/ric discrepancy ratio min {min_ratio:.3e} (gate > 10 on every trial)"),
        ],
    )
}

const FD_STEP: f64 = 1e-5;
/// Relative-error denominator floor; a bias feeding a training-mode batch
/// norm has an exactly zero gradient.
const FD_FLOOR: f64 = 1e-4;

fn fd_check(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    probe: &Tensor<f64>,
    mut f: impl FnMut(&Tensor<f64>) -> Tensor<f64>,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_STEP;
        let diff = f(&plus).sub(&f(&minus)).unwrap();
        let numeric: f64 = diff.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>() / (2.0 * FD_STEP);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR));
    }
    worst
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = ConvSpec::new(3, 4, 1, ConvMode::Ric);
    let w = random(&mut rng, &spec.weight_shape());
    let b = random(&mut rng, &[4]);
    let x = random(&mut rng, &[2, 3, 8, 8]);
    let probe = random(&mut rng, &[2, 4, 8, 8]);
    let out = |w: &Tensor<f64>, b: &Tensor<f64>, x: &Tensor<f64>| conv_forward(&spec, w, Some(b), x, None).unwrap();
    let g = conv_backward(&spec, &w, &x, None, &probe).unwrap();
    let ew = fd_check(&w, &g.weight, &probe, |w| out(w, &b, &x));
    let eb = fd_check(&b, &g.bias, &probe, |b| out(&w, b, &x));
    let ex = fd_check(&x, &g.input, &probe, |x| out(&w, &b, x));
    let mut lines = vec![format!("ric layer: weight {ew:.2e} bias {eb:.2e} input {ex:.2e}")];
    let mut worst = ew.max(eb).max(ex);

    let mut net = build_baseline::<f64>(ConvMode::Ric, 32, 3).unwrap().prefix(4);
    let x = random(&mut rng, &[1, 1, 8, 8]);
    let probe = random(&mut rng, &[1, 32, 8, 8]);
    net.zero_grad();
    net.forward(&x).unwrap();
    let gx = net.backward(&probe).unwrap();
    let mut scratch = net.clone();
    let mut net_worst = fd_check(&x, &gx, &probe, |x| scratch.forward(x).unwrap());
    for p in net.params() {
        let e = fd_check(&p.value, &p.grad, &probe, |v| {
            let mut n = net.clone();
            n.params_mut().into_iter().find(|q| q.name == p.name).unwrap().value = v.clone();
            n.forward(&x).unwrap()
        });
        net_worst = net_worst.max(e);
    }
    lines.push(format!("4-layer ric network on [1,1,8,8]: {net_worst:.2e}"));
    worst = worst.max(net_worst);
    lines.push(format!("max relative error {worst:.2e} (gate < 1e-5)"));
    verdict(worst < 1e-5, lines)
}

fn criterion_4() -> Outcome {
    let std = count_parameters(&build_baseline::<f64>(ConvMode::Standard, 32, 0).unwrap());
    let ric = count_parameters(&build_baseline::<f64>(ConvMode::Ric, 32, 0).unwrap());
    verdict(
        std == 288_618 && ric == 288_618,
        vec![format!("standard {std}, ric {ric} (gate: both 288618)")],
    )
}

fn test_set() -> Result<Dataset<f64>, Vec<String>> {
    load_split::<f64>(&data_dir(), "t10k").map_err(|e| vec![format!("MNIST test split unavailable: {e}")])
}

fn criterion_5() -> Outcome {
    let test = test_set()?;
    let image = test.image(0);
    let mut net = build_baseline::<f64>(ConvMode::Ric, 32, 0).unwrap();
    net.eval();
    let curves = equivariance_curves(&net, &image, &mre_angles()).unwrap();
    let maxima: Vec<f64> = curves.iter().map(|c| c.max()).collect();
    let layer1 = &curves[0];
    let quarter = [90.0, 180.0, 270.0].map(|d| layer1.at(d).unwrap());
    let monotone = maxima.windows(2).all(|w| w[1] >= w[0]);
    let (worst_angle, worst) = layer1
        .points
        .iter()
        .copied()
        .fold((0.0, 0.0), |a, p| if p.1 > a.1 { p } else { a });
    let floor = mre_angles()
        .iter()
        .map(|&t| {
            let back = rotate_feature_map(&rotate_feature_map(&image, t).unwrap(), -t).unwrap();
            mre(&back, &image).unwrap()
        })
        .fold(0.0, f64::max);
    let ok_max = worst <= 10.0;
    let ok_quarter = quarter.iter().all(|&q| q <= 0.1);
    let fmt = |v: &[f64]| v.iter().map(|m| format!("{m:.2}")).collect::<Vec<_>>().join(", ");
    verdict(
        ok_max && ok_quarter && monotone,
        vec![
            format!(
                "layer 1 max {worst:.2}% at {worst_angle}° (gate <= 10%): {}",
                if ok_max { "pass" } else { "fail" }
            ),
            format!(
                "layer 1 at 90/180/270: {:.1e}, {:.1e}, {:.1e} (gate <= 0.1%): {}",
                quarter[0],
                quarter[1],
                quarter[2],
                if ok_quarter { "pass" } else { "fail" }
            ),
            format!(
                "max MRE by layer 1..6: {} (gate non-decreasing): {}",
                fmt(&maxima),
                if monotone { "pass" } else { "fail" }
            ),
            format!("diagnostic: rotate-and-back MRE of the input image alone reaches {floor:.2}%"),
        ],
    )
}

/// Results shared by criteria 6 and 7.
struct DeskRun {
    log: Vec<String>,
    clean: [f64; 2],
    sweeps: [AngleAccuracy; 2],
}

fn desk_run() -> Result<DeskRun, Vec<String>> {
    let (train_all, test) = load_mnist::<f32>(&data_dir()).map_err(|e| vec![format!("MNIST unavailable: {e}")])?;
    let (train_pool, val) = train_all.split_validation(10_000, 0).unwrap();
    let val = val.head(1000).unwrap();
    let config = TrainConfig {
        epochs: 10,
        batch_size: 100,
        lr0: 1e-4,
        lr_decay: 0.8,
        decay_every: 10,
        seed: 0,
        subset_size: Some(10_000),
        ..TrainConfig::default()
    };
    let angles: Vec<f64> = (0..12).map(|i| 30.0 * i as f64).collect();
    let rotated = build_rotated_test(&test, &angles).unwrap();
    let mut log = Vec::new();
    let mut clean = [0.0; 2];
    let mut sweeps = Vec::new();
    for (i, mode) in [ConvMode::Ric, ConvMode::Standard].into_iter().enumerate() {
        let started = Instant::now();
        let mut net: Network<f32> = build_baseline(mode, 32, 0).unwrap();
        train(&mut net, &train_pool, Some(&val), &config, |r| {
            eprintln!(
                "    {} epoch {} loss {:.4} train_acc {:.4} val_acc {:.4} ({:.0}s)",
                mode.tag(),
                r.epoch,
                r.train_loss,
                r.train_acc,
                r.val_acc.unwrap_or(f64::NAN),
                started.elapsed().as_secs_f64()
            )
        })
        .map_err(|e| vec![format!("{} training failed: {e}", mode.tag())])?;
        let sweep = angle_sweep_accuracy(mode.tag(), &net, &rotated, 200).unwrap();
        clean[i] = sweep.at(0.0).unwrap();
        log.push(format!(
            "{}: trained and evaluated in {:.0}s; accuracy by angle 0..330 step 30: {}",
            mode.tag(),
            started.elapsed().as_secs_f64(),
            sweep
                .points
                .iter()
                .map(|p| format!("{:.4}", p.1))
                .collect::<Vec<_>>()
                .join(" ")
        ));
        if mode == ConvMode::Ric {
            let curves = equivariance_curves(&net, &test.image(0), &mre_angles()).unwrap();
            log.push(format!(
                "diagnostic, not gated: trained ric max MRE by layer 1..6 on test image 0: {}",
                curves
                    .iter()
                    .map(|c| format!("{:.2}", c.max()))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        sweeps.push(sweep);
    }
    let sweeps: [AngleAccuracy; 2] = sweeps.try_into().unwrap();
    Ok(DeskRun { log, clean, sweeps })
}

fn criterion_6(run: &Result<DeskRun, Vec<String>>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let [clean_ric, clean_std] = run.clean;
    let (agg_ric, agg_std) = (run.sweeps[0].aggregate(), run.sweeps[1].aggregate());
    let gap = agg_ric - agg_std;
    let mut lines = run.log.clone();
    lines.push(format!(
        "clean accuracy ric {:.2}% standard {:.2}% (gate >= 95% both)",
        100.0 * clean_ric,
        100.0 * clean_std
    ));
    lines.push(format!(
        "rotated aggregate ric {:.2}% (gate >= 75%) standard {:.2}% (gate <= 65%) gap {:.2}pp (gate >= 20pp)",
        100.0 * agg_ric,
        100.0 * agg_std,
        100.0 * gap
    ));
    verdict(
        clean_ric >= 0.95 && clean_std >= 0.95 && agg_ric >= 0.75 && agg_std <= 0.65 && gap >= 0.20,
        lines,
    )
}

fn criterion_7(run: &Result<DeskRun, Vec<String>>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let sweep = &run.sweeps[0];
    let mut worst: f64 = 0.0;
    for &(angle, acc) in &sweep.points {
        if let Some(other) = sweep.at((angle + 90.0) % 360.0) {
            worst = worst.max((acc - other).abs());
        }
    }
    verdict(
        worst <= 0.05,
        vec![format!(
            "max |acc(θ) - acc(θ+90°)| = {:.2}pp (gate <= 5pp)",
            100.0 * worst
        )],
    )
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let report = bench(&BenchArgs {
        arch: None,
        batch: 100,
        iters: 10,
        warmup: 2,
        precision: Precision::F32,
        out: Some(out.clone()),
    })
    .map_err(|e| vec![format!("bench failed: {e}")])?;
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines: Vec<String> = csv.lines().map(|l| format!("csv: {l}")).collect();
    let ratio = report.ratio.unwrap_or(f64::NAN);
    lines.push(format!("fps ratio ric/standard {ratio:.4} (gate in (0, 1])"));
    verdict(ratio > 0.0 && ratio <= 1.0 && report.results.len() == 2, lines)
}

fn criterion_9() -> Outcome {
    let dir = data_dir();
    let train_set = load_split::<f64>(&dir, "train")
        .and_then(|d| d.head(200))
        .map_err(|e| vec![format!("MNIST unavailable: {e}")])?;
    let test = test_set()?.head(100).unwrap();
    let mut net = build_baseline::<f64>(ConvMode::Ric, 32, 9).unwrap();
    let config = TrainConfig {
        epochs: 1,
        batch_size: 50,
        seed: 9,
        ..TrainConfig::default()
    };
    train(&mut net, &train_set, None, &config, |_| {}).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let (first, second) = (tmp.path().join("a.ckpt"), tmp.path().join("b.ckpt"));
    Checkpoint::from_network(&net, 9, "{}".into()).save(&first).unwrap();
    let loaded: Network<f64> = Checkpoint::load(&first).unwrap().to_network().unwrap();
    Checkpoint::from_network(&loaded, 9, "{}".into()).save(&second).unwrap();
    let (a, b) = (std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    let identical = a == b;
    let logits = net.infer(test.images()).unwrap();
    let reloaded = loaded.infer(test.images()).unwrap();
    let diff = logits.max_abs_diff(&reloaded).unwrap();
    verdict(
        identical && diff <= 1e-12,
        vec![
            format!("save→load→save byte-identical: {identical} ({} bytes)", a.len()),
            format!("max logit difference on 100 test images {diff:.3e} (gate <= 1e-12)"),
        ],
    )
}

const TITLES: [&str; 9] = [
    "offset field matches brute-force oracle",
    "exact invariance at quarter turns with negative control",
    "finite-difference gradients",
    "parameter parity and count",
    "equivariance curves with random weights",
    "desk-scale accuracy under rotation",
    "90° period of the ric accuracy series",
    "throughput report",
    "checkpoint round trip",
];

fn main() -> ExitCode {
    let selected: Vec<usize> = match std::env::var("RIC_ACCEPTANCE") {
        Ok(s) if !s.trim().is_empty() => s.split(',').filter_map(|v| v.trim().parse().ok()).collect(),
        _ => (1..=9).collect(),
    };
    let desk: OnceCell<Result<DeskRun, Vec<String>>> = OnceCell::new();
    let mut failed = Vec::new();
    for id in 1..=9 {
        if !selected.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = match id {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(desk.get_or_init(desk_run)),
            7 => criterion_7(desk.get_or_init(desk_run)),
            8 => criterion_8(),
            _ => criterion_9(),
        };
        let (status, lines) = match outcome {
            Ok(lines) => ("PASS", lines),
            Err(lines) => {
                failed.push(id);
                ("FAIL", lines)
            }
        };
        println!(
            "criterion {id}: {status} - {} [{:.1}s]",
            TITLES[id - 1],
            started.elapsed().as_secs_f64()
        );
        for line in lines {
            println!("    {line}");
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria pass");
        return ExitCode::SUCCESS;
    }
    println!("acceptance: failing criteria {failed:?}");
    if std::env::var_os("RIC_ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
