//! Bilinear sampling at fractional raster coordinates with zero padding,
//! its adjoint, and the precomputed sampling plans used by convolutions.

use crate::error::{Error, Result};
use crate::geometry::{center_of, to_cartesian, to_raster, OffsetField, RasterPoint};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Up to four neighbours and their bilinear weights within one `H × W`
/// plane. Out-of-bounds neighbours carry weight zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Taps<T> {
    pub index: [usize; 4],
    pub weight: [T; 4],
}

pub fn bilinear_taps<T: Scalar>(row: f64, col: f64, height: usize, width: usize) -> Taps<T> {
    let mut taps = Taps {
        index: [0; 4],
        weight: [T::zero(); 4],
    };
    if !(row > -1.0 && col > -1.0 && row < height as f64 && col < width as f64) {
        return taps;
    }
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let corners = [
        (r0, c0, (1.0 - fr) * (1.0 - fc)),
        (r0, c0 + 1.0, (1.0 - fr) * fc),
        (r0 + 1.0, c0, fr * (1.0 - fc)),
        (r0 + 1.0, c0 + 1.0, fr * fc),
    ];
    for (t, &(r, c, w)) in corners.iter().enumerate() {
        if r >= 0.0 && c >= 0.0 && (r as usize) < height && (c as usize) < width {
            taps.index[t] = r as usize * width + c as usize;
            taps.weight[t] = T::from_f64_lossy(w);
        }
    }
    taps
}

fn plane_dims<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::InvalidShape {
            shape: image.shape().to_vec(),
            reason: "expected a [C, H, W] image".into(),
        }),
    }
}

/// Interpolated value of every channel of a `[C, H, W]` image at `point`.
pub fn bilinear<T: Scalar>(image: &Tensor<T>, point: RasterPoint) -> Result<Vec<T>> {
    let (channels, h, w) = plane_dims(image)?;
    let taps = bilinear_taps::<T>(point.row, point.col, h, w);
    Ok((0..channels)
        .map(|c| {
            let plane = &image.data()[c * h * w..(c + 1) * h * w];
            (0..4).map(|t| taps.weight[t] * plane[taps.index[t]]).sum()
        })
        .collect())
}

/// Gradient of `bilinear` with respect to the image, as flat
/// `(index, value)` pairs into the `[C, H, W]` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGradient<T> {
    pub entries: Vec<(usize, T)>,
}

impl<T: Scalar> SparseGradient<T> {
    pub fn scatter_into(&self, buffer: &mut [T]) {
        for &(i, v) in &self.entries {
            buffer[i] += v;
        }
    }

    pub fn to_dense(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let mut t = Tensor::zeros(shape)?;
        self.scatter_into(t.data_mut());
        Ok(t)
    }
}

pub fn bilinear_adjoint<T: Scalar>(
    image_shape: &[usize],
    point: RasterPoint,
    upstream: &[T],
) -> Result<SparseGradient<T>> {
    let &[channels, h, w] = image_shape else {
        return Err(Error::InvalidShape {
            shape: image_shape.to_vec(),
            reason: "expected a [C, H, W] image".into(),
        });
    };
    if upstream.len() != channels {
        return Err(Error::ShapeMismatch {
            left: image_shape.to_vec(),
            right: vec![upstream.len()],
            context: "bilinear_adjoint upstream",
        });
    }
    let taps = bilinear_taps::<T>(point.row, point.col, h, w);
    let mut entries = Vec::with_capacity(4 * channels);
    for (c, &u) in upstream.iter().enumerate() {
        for t in 0..4 {
            if taps.weight[t] != T::zero() {
                entries.push((c * h * w + taps.index[t], u * taps.weight[t]));
            }
        }
    }
    Ok(SparseGradient { entries })
}

const CHANNEL_BLOCK: usize = 8;

/// Precomputed gather pattern of a stride-1, same-size sampled convolution
/// on an `H × H` plane: for every kernel slot and output pixel, a fixed
/// number of `(input pixel, weight)` taps.
///
/// Lattice plans use a single tap per sample (plain reads); offset plans
/// use the four bilinear taps.
#[derive(Debug, Clone)]
pub struct SamplingPlan<T> {
    slots: usize,
    height: usize,
    taps: usize,
    index: Vec<u32>,
    weight: Vec<T>,
}

impl<T: Scalar> SamplingPlan<T> {
    /// Regular-grid sampling with zero padding `n`.
    pub fn lattice(n: usize, height: usize) -> Self {
        let k = 2 * n + 1;
        let plane = height * height;
        let mut index = vec![0u32; k * k * plane];
        let mut weight = vec![T::zero(); k * k * plane];
        for slot in 0..k * k {
            let (dy, dx) = ((slot / k) as isize - n as isize, (slot % k) as isize - n as isize);
            for row in 0..height {
                for col in 0..height {
                    let (r, c) = (row as isize + dy, col as isize + dx);
                    if r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < height {
                        let at = slot * plane + row * height + col;
                        index[at] = (r as usize * height + c as usize) as u32;
                        weight[at] = T::one();
                    }
                }
            }
        }
        Self {
            slots: k * k,
            height,
            taps: 1,
            index,
            weight,
        }
    }

    /// Bilinear sampling at the regular grid displaced by `field`.
    pub fn from_offsets(field: &OffsetField) -> Self {
        let height = field.height();
        let slots = field.config().slots();
        let plane = height * height;
        let mut index = vec![0u32; slots * plane * 4];
        let mut weight = vec![T::zero(); slots * plane * 4];
        for slot in 0..slots {
            for row in 0..height {
                for col in 0..height {
                    let p = field.sample_position(row, col, slot);
                    let taps = bilinear_taps::<T>(p.row, p.col, height, height);
                    let at = (slot * plane + row * height + col) * 4;
                    for t in 0..4 {
                        index[at + t] = taps.index[t] as u32;
                        weight[at + t] = taps.weight[t];
                    }
                }
            }
        }
        Self {
            slots,
            height,
            taps: 4,
            index,
            weight,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn taps_per_sample(&self) -> usize {
        self.taps
    }

    /// Gathers `[C, H·H]` planes into columns `[C·slots, H·H]`.
    pub fn gather(&self, input: &[T], channels: usize, cols: &mut [T]) {
        let plane = self.height * self.height;
        debug_assert_eq!(input.len(), channels * plane);
        debug_assert_eq!(cols.len(), channels * self.slots * plane);
        if self.taps == 1 {
            for c in 0..channels {
                let src = &input[c * plane..(c + 1) * plane];
                for slot in 0..self.slots {
                    let dst = &mut cols[(c * self.slots + slot) * plane..][..plane];
                    let idx = &self.index[slot * plane..(slot + 1) * plane];
                    let wts = &self.weight[slot * plane..(slot + 1) * plane];
                    for ((d, &i), &w) in dst.iter_mut().zip(idx).zip(wts) {
                        *d = w * src[i as usize];
                    }
                }
            }
            return;
        }
        // Channels are processed in blocks so each tap entry is loaded once
        // per block rather than once per channel.
        let stride = self.slots * plane;
        for c0 in (0..channels).step_by(CHANNEL_BLOCK) {
            let cb = CHANNEL_BLOCK.min(channels - c0);
            for slot in 0..self.slots {
                let base = slot * plane * 4;
                for p in 0..plane {
                    let i = &self.index[base + p * 4..base + p * 4 + 4];
                    let w = &self.weight[base + p * 4..base + p * 4 + 4];
                    let (i0, i1, i2, i3) = (i[0] as usize, i[1] as usize, i[2] as usize, i[3] as usize);
                    for c in c0..c0 + cb {
                        let src = &input[c * plane..(c + 1) * plane];
                        cols[c * stride + slot * plane + p] =
                            w[0] * src[i0] + w[1] * src[i1] + w[2] * src[i2] + w[3] * src[i3];
                    }
                }
            }
        }
    }

    /// Channels-last variant of [`gather`](Self::gather): `input` is
    /// `[H·H, C]` and `cols` is `[H·H, slots·C]` with the channel index
    /// fastest, so every tap is a contiguous run over channels.
    pub fn gather_hwc(&self, input: &[T], channels: usize, cols: &mut [T]) {
        let plane = self.height * self.height;
        let depth = self.slots * channels;
        debug_assert_eq!(input.len(), channels * plane);
        debug_assert_eq!(cols.len(), depth * plane);
        for slot in 0..self.slots {
            let base = slot * plane * self.taps;
            for p in 0..plane {
                let dst = &mut cols[p * depth + slot * channels..][..channels];
                dst.fill(T::zero());
                let at = base + p * self.taps;
                for (&i, &w) in self.index[at..at + self.taps]
                    .iter()
                    .zip(&self.weight[at..at + self.taps])
                {
                    if w != T::zero() {
                        let src = &input[i as usize * channels..][..channels];
                        dst.iter_mut().zip(src).for_each(|(d, &v)| *d += w * v);
                    }
                }
            }
        }
    }

    /// Adjoint of [`gather_hwc`](Self::gather_hwc).
    pub fn scatter_hwc(&self, cols: &[T], channels: usize, grad_input: &mut [T]) {
        let plane = self.height * self.height;
        let depth = self.slots * channels;
        debug_assert_eq!(grad_input.len(), channels * plane);
        for slot in 0..self.slots {
            let base = slot * plane * self.taps;
            for p in 0..plane {
                let src = &cols[p * depth + slot * channels..][..channels];
                let at = base + p * self.taps;
                for (&i, &w) in self.index[at..at + self.taps]
                    .iter()
                    .zip(&self.weight[at..at + self.taps])
                {
                    if w != T::zero() {
                        let dst = &mut grad_input[i as usize * channels..][..channels];
                        dst.iter_mut().zip(src).for_each(|(d, &g)| *d += w * g);
                    }
                }
            }
        }
    }

    /// Adjoint of [`gather`](Self::gather): accumulates column gradients
    /// back into `[C, H·H]` planes.
    pub fn scatter(&self, cols: &[T], channels: usize, grad_input: &mut [T]) {
        let plane = self.height * self.height;
        debug_assert_eq!(grad_input.len(), channels * plane);
        if self.taps == 1 {
            for c in 0..channels {
                let dst = &mut grad_input[c * plane..(c + 1) * plane];
                for slot in 0..self.slots {
                    let src = &cols[(c * self.slots + slot) * plane..][..plane];
                    let idx = &self.index[slot * plane..(slot + 1) * plane];
                    let wts = &self.weight[slot * plane..(slot + 1) * plane];
                    for ((&g, &i), &w) in src.iter().zip(idx).zip(wts) {
                        dst[i as usize] += w * g;
                    }
                }
            }
            return;
        }
        let stride = self.slots * plane;
        for c0 in (0..channels).step_by(CHANNEL_BLOCK) {
            let cb = CHANNEL_BLOCK.min(channels - c0);
            for slot in 0..self.slots {
                let base = slot * plane * 4;
                for p in 0..plane {
                    let i = &self.index[base + p * 4..base + p * 4 + 4];
                    let w = &self.weight[base + p * 4..base + p * 4 + 4];
                    for c in c0..c0 + cb {
                        let g = cols[c * stride + slot * plane + p];
                        let dst = &mut grad_input[c * plane..(c + 1) * plane];
                        dst[i[0] as usize] += w[0] * g;
                        dst[i[1] as usize] += w[1] * g;
                        dst[i[2] as usize] += w[2] * g;
                        dst[i[3] as usize] += w[3] * g;
                    }
                }
            }
        }
    }
}

/// Rotates each `H × H` plane anticlockwise by `degrees` about the grid
/// center by inverse mapping with bilinear interpolation and zero fill.
/// Multiples of 90° are exact pixel permutations.
pub fn rotate_planes<T: Scalar>(planes: &[T], channels: usize, height: usize, degrees: f64) -> Result<Vec<T>> {
    let plane = height * height;
    if planes.len() != channels * plane {
        return Err(Error::InvalidShape {
            shape: vec![channels, height, height],
            reason: format!("buffer holds {} elements", planes.len()),
        });
    }
    let turns = degrees.rem_euclid(360.0);
    let quarter = [0.0, 90.0, 180.0, 270.0].iter().position(|&q| q == turns);
    let mut out = vec![T::zero(); planes.len()];
    let last = height - 1;
    if let Some(q) = quarter {
        for c in 0..channels {
            let src = &planes[c * plane..(c + 1) * plane];
            let dst = &mut out[c * plane..(c + 1) * plane];
            for row in 0..height {
                for col in 0..height {
                    let (r, s) = match q {
                        0 => (row, col),
                        1 => (col, last - row),
                        2 => (last - row, last - col),
                        _ => (last - col, row),
                    };
                    dst[row * height + col] = src[r * height + s];
                }
            }
        }
        return Ok(out);
    }
    let center = center_of(height)?;
    let theta = -degrees.to_radians();
    for row in 0..height {
        for col in 0..height {
            let source = to_raster(to_cartesian(row as f64, col as f64, center).rotated(theta), center);
            let taps = bilinear_taps::<T>(source.row, source.col, height, height);
            for c in 0..channels {
                let src = &planes[c * plane..(c + 1) * plane];
                out[c * plane + row * height + col] = (0..4).map(|t| taps.weight[t] * src[taps.index[t]]).sum();
            }
        }
    }
    Ok(out)
}
