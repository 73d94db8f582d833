//! Same-size, stride-1 sampled convolution.
//!
//! Standard convolution reads the regular `(2n+1)²` lattice around each
//! output pixel. Rotation-invariant coordinate convolution (RIC mode) reads
//! the same slots displaced by a constant [`OffsetField`], interpolating
//! bilinearly. Both share the gather-then-GEMM kernel below; the weights
//! and parameter count are identical across modes.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{cached_offset_field, OffsetField};
use crate::sampler::{rotate_planes, SamplingPlan};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Images per weight-gradient accumulation group. Fixed so that results do
/// not depend on the number of worker threads.
const GRAD_GROUP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvMode {
    Standard,
    Ric,
}

impl ConvMode {
    pub fn tag(self) -> &'static str {
        match self {
            ConvMode::Standard => "standard",
            ConvMode::Ric => "ric",
        }
    }
}

impl std::str::FromStr for ConvMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "standard" => Ok(ConvMode::Standard),
            "ric" => Ok(ConvMode::Ric),
            other => Err(format!("unknown architecture `{other}` (expected standard or ric)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel half-size; the kernel is `(2n+1) × (2n+1)`.
    pub n: usize,
    pub mode: ConvMode,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, n: usize, mode: ConvMode) -> Self {
        Self {
            in_channels,
            out_channels,
            n,
            mode,
            bias: true,
        }
    }

    pub fn kernel_size(&self) -> usize {
        2 * self.n + 1
    }

    pub fn slots(&self) -> usize {
        self.kernel_size() * self.kernel_size()
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let k = self.kernel_size();
        [self.out_channels, self.in_channels, k, k]
    }

    pub fn parameter_count(&self) -> usize {
        self.out_channels * self.in_channels * self.slots() + if self.bias { self.out_channels } else { 0 }
    }
}

/// Sampling plan for `spec` on an `H × H` input.
///
/// RIC mode uses `offsets` when given (it must match `(n, H)`), otherwise
/// the cached rotation-invariant field. Standard mode takes no offsets.
pub fn sampling_plan<T: Scalar>(
    spec: &ConvSpec,
    height: usize,
    offsets: Option<&OffsetField>,
) -> Result<SamplingPlan<T>> {
    match (spec.mode, offsets) {
        (ConvMode::Standard, None) => Ok(SamplingPlan::lattice(spec.n, height)),
        (ConvMode::Standard, Some(_)) => Err(Error::InvalidConfig(
            "offset field supplied to a standard convolution".into(),
        )),
        (ConvMode::Ric, Some(field)) => {
            let cfg = field.config();
            if cfg.height() != height || cfg.n() != spec.n {
                return Err(Error::InvalidConfig(format!(
                    "offset field is for n={}, H={} but convolution has n={}, H={height}",
                    cfg.n(),
                    cfg.height(),
                    spec.n
                )));
            }
            Ok(SamplingPlan::from_offsets(field))
        }
        (ConvMode::Ric, None) => {
            let field: Arc<OffsetField> = cached_offset_field(spec.n, height)?;
            Ok(SamplingPlan::from_offsets(&field))
        }
    }
}

fn check_input<T: Scalar>(spec: &ConvSpec, input: &Tensor<T>) -> Result<(usize, usize)> {
    match *input.shape() {
        [b, c, h, w] if c == spec.in_channels && h == w => Ok((b, h)),
        _ => Err(Error::InvalidShape {
            shape: input.shape().to_vec(),
            reason: format!("expected [B, {}, H, H]", spec.in_channels),
        }),
    }
}

fn check_weight<T: Scalar>(spec: &ConvSpec, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<()> {
    if weight.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch {
            left: weight.shape().to_vec(),
            right: spec.weight_shape().to_vec(),
            context: "convolution weight",
        });
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(Error::ShapeMismatch {
                left: b.shape().to_vec(),
                right: vec![spec.out_channels],
                context: "convolution bias",
            });
        }
    }
    Ok(())
}

pub fn conv_forward<T: Scalar>(
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    input: &Tensor<T>,
    offsets: Option<&OffsetField>,
) -> Result<Tensor<T>> {
    let (_, h) = check_input(spec, input)?;
    let plan = sampling_plan(spec, h, offsets)?;
    forward_with_plan(&plan, spec, weight, bias, input)
}

/// Forward pass with a prebuilt plan.
pub fn forward_with_plan<T: Scalar>(
    plan: &SamplingPlan<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (batch, h) = check_input(spec, input)?;
    check_weight(spec, weight, bias)?;
    check_plan(plan, spec, h)?;
    let plane = h * h;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let depth = cin * spec.slots();
    let wp = slot_major(weight.data(), cout, cin, spec.slots());
    let mut out = vec![T::zero(); batch * cout * plane];
    out.par_chunks_mut(cout * plane)
        .zip(input.data().par_chunks(cin * plane))
        .for_each_init(
            || (vec![T::zero(); cin * plane], vec![T::zero(); depth * plane]),
            |(xt, cols), (y, x)| {
                to_channels_last(x, cin, plane, xt);
                plan.gather_hwc(xt, cin, cols);
                // y = W' · cols, with cols stored pixel-major
                T::gemm(
                    cout,
                    depth,
                    plane,
                    T::one(),
                    &wp,
                    depth as isize,
                    1,
                    cols,
                    1,
                    depth as isize,
                    T::zero(),
                    y,
                    plane as isize,
                    1,
                );
                if let Some(b) = bias {
                    for (o, row) in y.chunks_mut(plane).enumerate() {
                        let bo = b.data()[o];
                        row.iter_mut().for_each(|v| *v += bo);
                    }
                }
            },
        );
    Tensor::from_vec(&[batch, cout, h, h], out)
}

fn check_plan<T: Scalar>(plan: &SamplingPlan<T>, spec: &ConvSpec, h: usize) -> Result<()> {
    if plan.height() != h || plan.slots() != spec.slots() {
        return Err(Error::InvalidConfig(format!(
            "sampling plan for H={} does not fit input with H={h}",
            plan.height()
        )));
    }
    Ok(())
}

/// `[C, P]` to `[P, C]`.
fn to_channels_last<T: Scalar>(src: &[T], channels: usize, plane: usize, dst: &mut [T]) {
    for (c, row) in src.chunks(plane).enumerate() {
        for (p, &v) in row.iter().enumerate() {
            dst[p * channels + c] = v;
        }
    }
}

/// `[P, C]` to `[C, P]`.
fn to_channels_first<T: Scalar>(src: &[T], channels: usize, plane: usize, dst: &mut [T]) {
    for (c, row) in dst.chunks_mut(plane).enumerate() {
        for (p, v) in row.iter_mut().enumerate() {
            *v = src[p * channels + c];
        }
    }
}

/// Reorders `[O, C, slots]` weights to `[O, slots, C]`.
fn slot_major<T: Scalar>(w: &[T], cout: usize, cin: usize, slots: usize) -> Vec<T> {
    let mut out = vec![T::zero(); w.len()];
    for o in 0..cout {
        for c in 0..cin {
            for s in 0..slots {
                out[(o * slots + s) * cin + c] = w[(o * cin + c) * slots + s];
            }
        }
    }
    out
}

/// Inverse of [`slot_major`].
fn channel_major<T: Scalar>(w: &[T], cout: usize, cin: usize, slots: usize) -> Vec<T> {
    let mut out = vec![T::zero(); w.len()];
    for o in 0..cout {
        for c in 0..cin {
            for s in 0..slots {
                out[(o * cin + c) * slots + s] = w[(o * slots + s) * cin + c];
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ConvGradients<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub input: Tensor<T>,
}

pub fn conv_backward<T: Scalar>(
    spec: &ConvSpec,
    weight: &Tensor<T>,
    input: &Tensor<T>,
    offsets: Option<&OffsetField>,
    upstream: &Tensor<T>,
) -> Result<ConvGradients<T>> {
    let (_, h) = check_input(spec, input)?;
    let plan = sampling_plan(spec, h, offsets)?;
    backward_with_plan(&plan, spec, weight, input, upstream)
}

/// Backward pass with a prebuilt plan. The offsets are constants, so only
/// weights, bias and input receive gradients.
pub fn backward_with_plan<T: Scalar>(
    plan: &SamplingPlan<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    input: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGradients<T>> {
    let (batch, h) = check_input(spec, input)?;
    check_weight(spec, weight, None)?;
    check_plan(plan, spec, h)?;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    if upstream.shape() != [batch, cout, h, h] {
        return Err(Error::ShapeMismatch {
            left: upstream.shape().to_vec(),
            right: vec![batch, cout, h, h],
            context: "convolution upstream gradient",
        });
    }
    let plane = h * h;
    let depth = cin * spec.slots();
    let wlen = cout * depth;
    let wp = slot_major(weight.data(), cout, cin, spec.slots());

    let mut grad_input = vec![T::zero(); batch * cin * plane];
    let group_grads: Vec<(Vec<T>, Vec<T>)> = grad_input
        .par_chunks_mut(GRAD_GROUP * cin * plane)
        .zip(input.data().par_chunks(GRAD_GROUP * cin * plane))
        .zip(upstream.data().par_chunks(GRAD_GROUP * cout * plane))
        .map(|((gx_group, x_group), dy_group)| {
            let mut gw = vec![T::zero(); wlen];
            let mut gb = vec![T::zero(); cout];
            let mut xt = vec![T::zero(); cin * plane];
            let mut gxt = vec![T::zero(); cin * plane];
            let mut cols = vec![T::zero(); depth * plane];
            let mut dcols = vec![T::zero(); depth * plane];
            for ((gx, x), dy) in gx_group
                .chunks_mut(cin * plane)
                .zip(x_group.chunks(cin * plane))
                .zip(dy_group.chunks(cout * plane))
            {
                to_channels_last(x, cin, plane, &mut xt);
                plan.gather_hwc(&xt, cin, &mut cols);
                // gw' += dy · colsᵀ
                T::gemm(
                    cout,
                    plane,
                    depth,
                    T::one(),
                    dy,
                    plane as isize,
                    1,
                    &cols,
                    depth as isize,
                    1,
                    T::one(),
                    &mut gw,
                    depth as isize,
                    1,
                );
                for (o, row) in dy.chunks(plane).enumerate() {
                    gb[o] += row.iter().copied().sum::<T>();
                }
                // dcols = W'ᵀ · dy, stored pixel-major
                T::gemm(
                    depth,
                    cout,
                    plane,
                    T::one(),
                    &wp,
                    1,
                    depth as isize,
                    dy,
                    plane as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    1,
                    depth as isize,
                );
                gxt.fill(T::zero());
                plan.scatter_hwc(&dcols, cin, &mut gxt);
                to_channels_first(&gxt, cin, plane, gx);
            }
            (gw, gb)
        })
        .collect();

    let mut gw = vec![T::zero(); wlen];
    let mut gb = vec![T::zero(); cout];
    for (w, b) in &group_grads {
        gw.iter_mut().zip(w).for_each(|(a, &v)| *a += v);
        gb.iter_mut().zip(b).for_each(|(a, &v)| *a += v);
    }
    Ok(ConvGradients {
        weight: Tensor::from_vec(&spec.weight_shape(), channel_major(&gw, cout, cin, spec.slots()))?,
        bias: Tensor::from_vec(&[cout], gb)?,
        input: Tensor::from_vec(input.shape(), grad_input)?,
    })
}

/// Largest disagreement between the feature map of the rotated input and
/// the rotated feature map of the original input, i.e.
/// `max |Φ(R·X0, G) − Φ(X0, F)|` with `G` the input rotated by `degrees`.
pub fn rotation_discrepancy<T: Scalar>(
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    input: &Tensor<T>,
    degrees: f64,
) -> Result<T> {
    let (batch, h) = check_input(spec, input)?;
    let rotated_input = Tensor::from_vec(
        input.shape(),
        rotate_planes(input.data(), batch * spec.in_channels, h, degrees)?,
    )?;
    let plan = sampling_plan(spec, h, None)?;
    let base = forward_with_plan(&plan, spec, weight, bias, input)?;
    let turned = forward_with_plan(&plan, spec, weight, bias, &rotated_input)?;
    let base_rotated = Tensor::from_vec(
        base.shape(),
        rotate_planes(base.data(), batch * spec.out_channels, h, degrees)?,
    )?;
    turned.max_abs_diff(&base_rotated)
}

/// Whether the standard convolution's rotation discrepancy exceeds ten
/// times that of the RIC convolution with the same weights.
pub fn negative_control<T: Scalar>(
    standard: &ConvSpec,
    weight: &Tensor<T>,
    input: &Tensor<T>,
    degrees: f64,
) -> Result<bool> {
    let ric = ConvSpec {
        mode: ConvMode::Ric,
        ..*standard
    };
    let std_spec = ConvSpec {
        mode: ConvMode::Standard,
        ..*standard
    };
    let d_std = rotation_discrepancy(&std_spec, weight, None, input, degrees)?;
    let d_ric = rotation_discrepancy(&ric, weight, None, input, degrees)?;
    Ok(d_std > T::from_f64_lossy(10.0) * d_ric)
}
