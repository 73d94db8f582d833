//! Layers and the six-convolution MNIST baseline in standard and RIC form.

mod layers;

pub use layers::{AvgPool, BatchNorm2d, Conv2d, Flatten, Layer, Linear, MaxPool2x2, Param, Relu};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::{ConvMode, ConvSpec};
use crate::error::{Error, Result};
use crate::sampler::rotate_planes;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Input resolution of the baseline architecture.
pub const BASELINE_HEIGHT: usize = 32;
/// Output widths of the six convolutions.
pub const BASELINE_WIDTHS: [usize; 6] = [32, 32, 64, 64, 128, 128];
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone)]
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
    pub mode: ConvMode,
    pub height: usize,
    training: bool,
    forwarded: bool,
}

/// conv(1→32) BN ReLU conv(32→32) BN ReLU maxpool conv(32→64) BN ReLU
/// conv(64→64) BN ReLU maxpool conv(64→128) BN ReLU conv(128→128) BN ReLU
/// avgpool(8) flatten linear(128→10). Every convolution is 3×3 in `mode`.
pub fn build_baseline<T: Scalar>(mode: ConvMode, height: usize, seed: u64) -> Result<Network<T>> {
    if height != BASELINE_HEIGHT {
        return Err(Error::InvalidConfig(format!(
            "baseline architecture is defined for {BASELINE_HEIGHT}x{BASELINE_HEIGHT} inputs, got {height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut in_ch = 1;
    let mut h = height;
    for (i, &out_ch) in BASELINE_WIDTHS.iter().enumerate() {
        let idx = i + 1;
        let mut conv = Conv2d::new(&format!("conv{idx}"), ConvSpec::new(in_ch, out_ch, 1, mode), &mut rng);
        conv.prepare(h)?;
        layers.push(Layer::Conv(conv));
        layers.push(Layer::BatchNorm(BatchNorm2d::new(&format!("bn{idx}"), out_ch)));
        layers.push(Layer::Relu(Relu::default()));
        if idx == 2 || idx == 4 {
            layers.push(Layer::MaxPool(MaxPool2x2::default()));
            h /= 2;
        }
        in_ch = out_ch;
    }
    layers.push(Layer::AvgPool(AvgPool::new(8)));
    layers.push(Layer::Flatten(Flatten::default()));
    layers.push(Layer::Linear(Linear::new("fc", in_ch, NUM_CLASSES, &mut rng)));
    Ok(Network {
        layers,
        mode,
        height,
        training: true,
        forwarded: false,
    })
}

impl<T: Scalar> Network<T> {
    pub fn from_layers(layers: Vec<Layer<T>>, mode: ConvMode, height: usize) -> Self {
        Self {
            layers,
            mode,
            height,
            training: true,
            forwarded: false,
        }
    }

    /// The first `count` layers as a standalone network.
    pub fn prefix(&self, count: usize) -> Self {
        Self::from_layers(
            self.layers[..count.min(self.layers.len())].to_vec(),
            self.mode,
            self.height,
        )
    }

    pub fn train(&mut self) {
        self.training = true;
    }

    pub fn eval(&mut self) {
        self.training = false;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        let training = self.training;
        for layer in &mut self.layers {
            h = layer.forward(&h, training)?;
        }
        self.forwarded = true;
        Ok(h)
    }

    /// Propagates `upstream` (gradient of the loss w.r.t. the last forward
    /// output), accumulating parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        if !self.forwarded {
            return Err(Error::BackwardBeforeForward("network".into()));
        }
        self.forwarded = false;
        let mut g = upstream.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Eval-mode forward pass that leaves the network untouched.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Eval-mode outputs of every layer, in order.
    pub fn infer_all(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
            outs.push(h.clone());
        }
        Ok(outs)
    }

    /// Eval-mode outputs of the convolution layers only.
    pub fn conv_feature_maps(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let outs = self.infer_all(x)?;
        Ok(self
            .layers
            .iter()
            .zip(outs)
            .filter(|(l, _)| matches!(l, Layer::Conv(_)))
            .map(|(_, o)| o)
            .collect())
    }

    /// The pooled feature vector fed to the classifier.
    pub fn pooled_features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let end = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Flatten(_)))
            .unwrap_or(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers[..end] {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self.infer(x)?.argmax_lastaxis())
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn conv_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Conv(_))).count()
    }

    /// Named tensors that fully determine inference: every parameter plus
    /// batch-norm running statistics, in layer order.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for p in layer.params() {
                out.push((p.name.clone(), p.value.clone()));
            }
            if let Layer::BatchNorm(bn) = layer {
                let c = bn.channels();
                out.push((
                    format!("{}.running_mean", bn.name),
                    Tensor::from_vec(&[c], bn.running_mean.clone()).expect("channels are positive"),
                ));
                out.push((
                    format!("{}.running_var", bn.name),
                    Tensor::from_vec(&[c], bn.running_var.clone()).expect("channels are positive"),
                ));
            }
        }
        out
    }

    /// Restores tensors produced by [`state`](Self::state). Every name must
    /// be present with a matching shape.
    pub fn load_state(&mut self, state: &[(String, Tensor<T>)]) -> Result<()> {
        let lookup = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let (_, t) = state
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::InvalidShape {
                    shape: shape.to_vec(),
                    reason: format!("missing tensor `{name}`"),
                })?;
            if t.shape() != shape {
                return Err(Error::ShapeMismatch {
                    left: t.shape().to_vec(),
                    right: shape.to_vec(),
                    context: "load_state",
                });
            }
            Ok(t.clone())
        };
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.value = lookup(&p.name, p.value.shape())?;
            }
            if let Layer::BatchNorm(bn) = layer {
                let c = bn.channels();
                bn.running_mean = lookup(&format!("{}.running_mean", bn.name), &[c])?.into_data();
                bn.running_var = lookup(&format!("{}.running_var", bn.name), &[c])?.into_data();
            }
        }
        Ok(())
    }
}

/// Rotates every channel of a `[C, h, h]` map anticlockwise by `degrees`
/// about its center (bilinear, zero fill; exact for multiples of 90°).
pub fn rotate_feature_map<T: Scalar>(map: &Tensor<T>, degrees: f64) -> Result<Tensor<T>> {
    let (c, h) = match *map.shape() {
        [c, h, w] if h == w => (c, h),
        [b, c, h, w] if h == w => (b * c, h),
        _ => {
            return Err(Error::InvalidShape {
                shape: map.shape().to_vec(),
                reason: "expected a square [C, h, h] or [B, C, h, h] map".into(),
            })
        }
    };
    Tensor::from_vec(map.shape(), rotate_planes(map.data(), c, h, degrees)?)
}
