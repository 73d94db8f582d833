//! Accuracy sweeps, equivariance curves, parameter counts and throughput.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::RotatedTestSet;
use crate::error::{Error, Result};
use crate::nn::{rotate_feature_map, Network};
use crate::optim::accuracy;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `|x - y| / (|x| + |y|)` in percent, with `0/0` taken as 0.
pub fn relative_error(x: f64, y: f64) -> f64 {
    let denom = x.abs() + y.abs();
    if denom == 0.0 {
        0.0
    } else {
        // |x - y| <= |x| + |y|; the clamp only absorbs rounding
        (100.0 * (x - y).abs() / denom).min(100.0)
    }
}

/// Mean [`relative_error`] over all entries of two equally shaped maps.
pub fn mre<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
            context: "mre",
        });
    }
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| relative_error(x.to_f64_lossy(), y.to_f64_lossy()))
        .sum();
    Ok(total / a.len() as f64)
}

/// MRE of one convolution layer's output against rotation angle.
#[derive(Debug, Clone, PartialEq)]
pub struct MreCurve {
    /// One-based convolution layer index.
    pub layer: usize,
    /// `(angle in degrees, MRE in percent)`.
    pub points: Vec<(f64, f64)>,
}

impl MreCurve {
    pub fn max(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    pub fn at(&self, degrees: f64) -> Option<f64> {
        self.points.iter().find(|p| p.0 == degrees).map(|p| p.1)
    }
}

/// The 35 nonzero angles `10°, 20°, …, 350°`.
pub fn mre_angles() -> Vec<f64> {
    (1..36).map(|a| 10.0 * a as f64).collect()
}

/// For every convolution layer `l` and angle `θ`: the layer output on the
/// image rotated by `θ`, rotated back by `-θ`, compared by [`mre`] with
/// the layer output on the original image. `image` is `[1, 1, H, H]`.
pub fn equivariance_curves<T: Scalar>(net: &Network<T>, image: &Tensor<T>, angles: &[f64]) -> Result<Vec<MreCurve>> {
    let base = net.conv_feature_maps(image)?;
    let mut curves: Vec<MreCurve> = (1..=base.len())
        .map(|layer| MreCurve {
            layer,
            points: Vec::with_capacity(angles.len()),
        })
        .collect();
    for &theta in angles {
        let turned = rotate_feature_map(image, theta)?;
        let maps = net.conv_feature_maps(&turned)?;
        for ((curve, map), reference) in curves.iter_mut().zip(&maps).zip(&base) {
            let back = rotate_feature_map(map, -theta)?;
            curve.points.push((theta, mre(&back, reference)?));
        }
    }
    Ok(curves)
}

pub fn write_mre_csv<W: Write>(mut out: W, curves: &[MreCurve]) -> std::io::Result<()> {
    writeln!(out, "layer,angle_deg,mre_percent")?;
    for c in curves {
        for &(angle, value) in &c.points {
            writeln!(out, "{},{},{}", c.layer, angle, value)?;
        }
    }
    Ok(())
}

/// Per-angle test accuracy of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleAccuracy {
    pub model: String,
    /// `(angle in degrees, accuracy in [0, 1])`, angles increasing.
    pub points: Vec<(f64, f64)>,
}

impl AngleAccuracy {
    /// Accuracy over the union of all rotated copies. Every copy has the
    /// same size, so this is the mean over angles.
    pub fn aggregate(&self) -> f64 {
        self.points.iter().map(|p| p.1).sum::<f64>() / self.points.len() as f64
    }

    pub fn at(&self, degrees: f64) -> Option<f64> {
        self.points.iter().find(|p| p.0 == degrees).map(|p| p.1)
    }
}

pub fn angle_sweep_accuracy<T: Scalar>(
    model: &str,
    net: &Network<T>,
    rotated: &RotatedTestSet<'_, T>,
    batch: usize,
) -> Result<AngleAccuracy> {
    let mut points = Vec::with_capacity(rotated.len());
    for (angle, set) in rotated.iter() {
        let acc = accuracy(net, &set?, batch)?;
        log::info!("{model} {angle}° accuracy {acc:.4}");
        points.push((angle, acc));
    }
    Ok(AngleAccuracy {
        model: model.to_string(),
        points,
    })
}

pub fn write_accuracy_csv<W: Write>(mut out: W, series: &[AngleAccuracy]) -> std::io::Result<()> {
    writeln!(out, "model,angle_deg,accuracy")?;
    for s in series {
        for &(angle, acc) in &s.points {
            writeln!(out, "{},{},{}", s.model, angle, acc)?;
        }
    }
    Ok(())
}

pub fn count_parameters<T: Scalar>(net: &Network<T>) -> usize {
    net.parameter_count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub model: String,
    pub batch: usize,
    /// Median images per second over the timed iterations.
    pub fps: f64,
    pub params: usize,
}

/// Steady-state eval-mode forward throughput on random inputs.
pub fn benchmark_fps<T: Scalar>(
    model: &str,
    net: &Network<T>,
    batch: usize,
    iters: usize,
    warmup: usize,
) -> Result<BenchResult> {
    if batch == 0 || iters == 0 {
        return Err(Error::InvalidConfig("batch and iters must be positive".into()));
    }
    let h = net.height;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_vec(
        &[batch, 1, h, h],
        (0..batch * h * h)
            .map(|_| T::from_f64_lossy(rng.gen_range(0.0..1.0)))
            .collect(),
    )?;
    for _ in 0..warmup {
        net.infer(&x)?;
    }
    let mut rates: Vec<f64> = (0..iters)
        .map(|_| {
            let t = Instant::now();
            net.infer(&x).map(|_| batch as f64 / t.elapsed().as_secs_f64())
        })
        .collect::<Result<_>>()?;
    rates.sort_by(f64::total_cmp);
    let mid = rates.len() / 2;
    let fps = if rates.len() % 2 == 1 {
        rates[mid]
    } else {
        0.5 * (rates[mid - 1] + rates[mid])
    };
    Ok(BenchResult {
        model: model.to_string(),
        batch,
        fps,
        params: net.parameter_count(),
    })
}

pub fn write_bench_csv<W: Write>(mut out: W, results: &[BenchResult]) -> std::io::Result<()> {
    writeln!(out, "model,batch,fps,params")?;
    for r in results {
        writeln!(out, "{},{},{},{}", r.model, r.batch, r.fps, r.params)?;
    }
    Ok(())
}
