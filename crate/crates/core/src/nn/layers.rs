use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::conv::{backward_with_plan, forward_with_plan, sampling_plan, ConvSpec};
use crate::error::{Error, Result};
use crate::sampler::SamplingPlan;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape()).expect("value shape is valid");
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }

    fn accumulate(&mut self, g: &Tensor<T>) {
        self.grad
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, &b)| *a += b);
    }
}

fn kaiming_uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

fn missing_forward(name: &str) -> Error {
    Error::BackwardBeforeForward(name.to_string())
}

fn dims4<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match *x.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("{what} expects a [B, C, H, W] input"),
        }),
    }
}

/// Convolution layer in either sampling mode. Sampling plans are built per
/// input resolution and reused.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub spec: ConvSpec,
    pub weight: Param<T>,
    pub bias: Param<T>,
    plans: HashMap<usize, Arc<SamplingPlan<T>>>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(name: &str, spec: ConvSpec, rng: &mut R) -> Self {
        let fan_in = spec.in_channels * spec.slots();
        Self {
            spec,
            weight: Param::new(
                format!("{name}.weight"),
                kaiming_uniform(rng, &spec.weight_shape(), fan_in),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor::zeros(&[spec.out_channels]).expect("positive channels"),
            ),
            plans: HashMap::new(),
            input: None,
        }
    }

    /// Builds and caches the plan for `height` ahead of use.
    pub fn prepare(&mut self, height: usize) -> Result<()> {
        self.plan_mut(height).map(|_| ())
    }

    fn plan_mut(&mut self, height: usize) -> Result<Arc<SamplingPlan<T>>> {
        if let Some(p) = self.plans.get(&height) {
            return Ok(Arc::clone(p));
        }
        let plan = Arc::new(sampling_plan(&self.spec, height, None)?);
        self.plans.insert(height, Arc::clone(&plan));
        Ok(plan)
    }

    fn plan(&self, height: usize) -> Result<Arc<SamplingPlan<T>>> {
        match self.plans.get(&height) {
            Some(p) => Ok(Arc::clone(p)),
            None => Ok(Arc::new(sampling_plan(&self.spec, height, None)?)),
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, _, h, _] = dims4(x, "conv")?;
        let bias = self.spec.bias.then_some(&self.bias.value);
        forward_with_plan(&*self.plan(h)?, &self.spec, &self.weight.value, bias, x)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, _, h, _] = dims4(x, "conv")?;
        let plan = self.plan_mut(h)?;
        let bias = self.spec.bias.then_some(&self.bias.value);
        let y = forward_with_plan(&plan, &self.spec, &self.weight.value, bias, x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_forward(&self.weight.name))?;
        let [_, _, h, _] = dims4(&x, "conv")?;
        let plan = self.plan_mut(h)?;
        let g = backward_with_plan(&plan, &self.spec, &self.weight.value, &x, grad)?;
        self.weight.accumulate(&g.weight);
        if self.spec.bias {
            self.bias.accumulate(&g.bias);
        }
        Ok(g.input)
    }
}

/// Per-channel batch normalization over `(B, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub name: String,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
enum BnCache<T> {
    Train {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        shape: [usize; 4],
    },
    Eval {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        shape: [usize; 4],
    },
}

impl<T: Scalar> BatchNorm2d<T> {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
            gamma: Param::new(
                format!("{name}.gamma"),
                Tensor::fill(&[channels], T::one()).expect("positive channels"),
            ),
            beta: Param::new(
                format!("{name}.beta"),
                Tensor::zeros(&[channels]).expect("positive channels"),
            ),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<[usize; 4]> {
        let d = dims4(x, "batch norm")?;
        if d[1] != self.channels() {
            return Err(Error::ShapeMismatch {
                left: x.shape().to_vec(),
                right: vec![d[0], self.channels(), d[2], d[3]],
                context: "batch norm channels",
            });
        }
        Ok(d)
    }

    fn eval_inv_std(&self) -> Vec<T> {
        let eps = T::from_f64_lossy(self.eps);
        self.running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect()
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, c, h, w] = self.check(x)?;
        let inv_std = self.eval_inv_std();
        let plane = h * w;
        let mut out = x.data().to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let ch = i % c;
            let scale = self.gamma.value.data()[ch] * inv_std[ch];
            let shift = self.beta.value.data()[ch] - self.running_mean[ch] * scale;
            chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
        }
        Tensor::from_vec(x.shape(), out)
    }

    pub fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let shape = self.check(x)?;
        if !training {
            let inv_std = self.eval_inv_std();
            let plane = shape[2] * shape[3];
            let mut xhat = x.data().to_vec();
            for (i, chunk) in xhat.chunks_mut(plane).enumerate() {
                let ch = i % shape[1];
                chunk
                    .iter_mut()
                    .for_each(|v| *v = (*v - self.running_mean[ch]) * inv_std[ch]);
            }
            self.cache = Some(BnCache::Eval { xhat, inv_std, shape });
            return self.infer(x);
        }
        let [b, c, h, w] = shape;
        let plane = h * w;
        let count = b * plane;
        if count < 2 {
            return Err(Error::BatchNormSingleValue(self.name.clone()));
        }
        let nf = T::from_usize(count).expect("count fits the scalar");
        let eps = T::from_f64_lossy(self.eps);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for (i, chunk) in x.data().chunks(plane).enumerate() {
            mean[i % c] += chunk.iter().copied().sum::<T>();
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        for (i, chunk) in x.data().chunks(plane).enumerate() {
            let m = mean[i % c];
            var[i % c] += chunk.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
        }
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut xhat = x.data().to_vec();
        let mut out = vec![T::zero(); xhat.len()];
        for (i, (xc, yc)) in xhat.chunks_mut(plane).zip(out.chunks_mut(plane)).enumerate() {
            let ch = i % c;
            let (g, bt) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            for (xv, yv) in xc.iter_mut().zip(yc.iter_mut()) {
                *xv = (*xv - mean[ch]) * inv_std[ch];
                *yv = g * *xv + bt;
            }
        }

        let m = T::from_f64_lossy(self.momentum);
        let unbias = nf / (nf - T::one());
        for ch in 0..c {
            self.running_mean[ch] = (T::one() - m) * self.running_mean[ch] + m * mean[ch];
            self.running_var[ch] = (T::one() - m) * self.running_var[ch] + m * var[ch] * unbias;
        }
        self.cache = Some(BnCache::Train { xhat, inv_std, shape });
        Tensor::from_vec(x.shape(), out)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_forward(&self.name))?;
        match cache {
            BnCache::Eval { xhat, inv_std, shape } => {
                let [_, c, h, w] = shape;
                let plane = h * w;
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); xhat.len()];
                for (i, ((dc, gc), xc)) in dx
                    .chunks_mut(plane)
                    .zip(grad.data().chunks(plane))
                    .zip(xhat.chunks(plane))
                    .enumerate()
                {
                    let ch = i % c;
                    let scale = self.gamma.value.data()[ch] * inv_std[ch];
                    for ((d, &g), &xv) in dc.iter_mut().zip(gc).zip(xc) {
                        dbeta[ch] += g;
                        dgamma[ch] += g * xv;
                        *d = g * scale;
                    }
                }
                self.gamma.accumulate(&Tensor::from_vec(&[c], dgamma)?);
                self.beta.accumulate(&Tensor::from_vec(&[c], dbeta)?);
                Tensor::from_vec(&shape, dx)
            }
            BnCache::Train { xhat, inv_std, shape } => {
                let [b, c, h, w] = shape;
                let plane = h * w;
                let nf = T::from_usize(b * plane).expect("count fits the scalar");
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for (i, (gc, xc)) in grad.data().chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                    let ch = i % c;
                    for (&g, &xv) in gc.iter().zip(xc) {
                        sum_dy[ch] += g;
                        sum_dy_xhat[ch] += g * xv;
                    }
                }
                let mut dx = vec![T::zero(); xhat.len()];
                for (i, ((dc, gc), xc)) in dx
                    .chunks_mut(plane)
                    .zip(grad.data().chunks(plane))
                    .zip(xhat.chunks(plane))
                    .enumerate()
                {
                    let ch = i % c;
                    let k = self.gamma.value.data()[ch] * inv_std[ch] / nf;
                    for ((d, &g), &xv) in dc.iter_mut().zip(gc).zip(xc) {
                        *d = k * (nf * g - sum_dy[ch] - xv * sum_dy_xhat[ch]);
                    }
                }
                self.gamma.accumulate(&Tensor::from_vec(&[c], sum_dy_xhat)?);
                self.beta.accumulate(&Tensor::from_vec(&[c], sum_dy)?);
                Tensor::from_vec(&shape, dx)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.map(|v| v.max(T::zero())))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.input = Some(x.clone());
        self.infer(x)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_forward("relu"))?;
        let data = grad
            .data()
            .iter()
            .zip(x.data())
            .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
            .collect();
        Tensor::from_vec(grad.shape(), data)
    }
}

/// 2×2 max pooling with stride 2. Ties resolve to the first element of the
/// window in row-major order.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2x2 {
    argmax: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2x2 {
    fn pool<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let [b, c, h, w] = dims4(x, "max pool")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: "max pool needs even spatial extents".into(),
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut idx = Vec::with_capacity(b * c * oh * ow);
        for (p, plane) in x.data().chunks(h * w).enumerate() {
            for r in 0..oh {
                for s in 0..ow {
                    let mut best = (2 * r) * w + 2 * s;
                    for (dr, ds) in [(0, 1), (1, 0), (1, 1)] {
                        let j = (2 * r + dr) * w + 2 * s + ds;
                        if plane[j] > plane[best] {
                            best = j;
                        }
                    }
                    out.push(plane[best]);
                    idx.push(p * h * w + best);
                }
            }
        }
        Ok((Tensor::from_vec(&[b, c, oh, ow], out)?, idx))
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Self::pool(x)?.0)
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, idx) = Self::pool(x)?;
        self.argmax = Some((idx, x.shape().to_vec()));
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (idx, shape) = self.argmax.take().ok_or_else(|| missing_forward("maxpool"))?;
        let mut dx = Tensor::zeros(&shape)?;
        for (&i, &g) in idx.iter().zip(grad.data()) {
            dx.data_mut()[i] += g;
        }
        Ok(dx)
    }
}

/// `k × k` average pooling with stride `k`.
#[derive(Debug, Clone)]
pub struct AvgPool {
    pub k: usize,
    shape: Option<Vec<usize>>,
}

impl AvgPool {
    pub fn new(k: usize) -> Self {
        Self { k, shape: None }
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, h, w] = dims4(x, "average pool")?;
        let k = self.k;
        if h % k != 0 || w % k != 0 {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: format!("average pool {k}x{k} needs extents divisible by {k}"),
            });
        }
        let (oh, ow) = (h / k, w / k);
        let norm = T::from_usize(k * k).expect("window fits the scalar");
        let mut out = vec![T::zero(); b * c * oh * ow];
        for (p, plane) in x.data().chunks(h * w).enumerate() {
            for r in 0..h {
                for s in 0..w {
                    out[p * oh * ow + (r / k) * ow + s / k] += plane[r * w + s];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= norm);
        Tensor::from_vec(&[b, c, oh, ow], out)
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.shape = Some(x.shape().to_vec());
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.shape.take().ok_or_else(|| missing_forward("avgpool"))?;
        let (h, w, k) = (shape[2], shape[3], self.k);
        let (oh, ow) = (h / k, w / k);
        let norm = T::from_usize(k * k).expect("window fits the scalar");
        let mut dx = Tensor::zeros(&shape)?;
        for (p, plane) in dx.data_mut().chunks_mut(h * w).enumerate() {
            for r in 0..h {
                for s in 0..w {
                    plane[r * w + s] = grad.data()[p * oh * ow + (r / k) * ow + s / k] / norm;
                }
            }
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = x.shape()[0];
        x.clone().reshape(&[b, x.len() / b])
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.shape = Some(x.shape().to_vec());
        self.infer(x)
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.shape.take().ok_or_else(|| missing_forward("flatten"))?;
        grad.clone().reshape(&shape)
    }
}

/// Fully connected layer, `y = x · Wᵀ + b` with `W` shaped `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                kaiming_uniform(rng, &[outputs, inputs], inputs),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor::zeros(&[outputs]).expect("positive width"),
            ),
            input: None,
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.weight.value.shape()[0], self.weight.value.shape()[1])
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (outputs, inputs) = self.dims();
        let b = match *x.shape() {
            [b, i] if i == inputs => b,
            _ => {
                return Err(Error::ShapeMismatch {
                    left: x.shape().to_vec(),
                    right: vec![x.shape()[0], inputs],
                    context: "linear input",
                })
            }
        };
        let mut out = Vec::with_capacity(b * outputs);
        for _ in 0..b {
            out.extend_from_slice(self.bias.value.data());
        }
        T::gemm(
            b,
            inputs,
            outputs,
            T::one(),
            x.data(),
            inputs as isize,
            1,
            self.weight.value.data(),
            1,
            inputs as isize,
            T::one(),
            &mut out,
            outputs as isize,
            1,
        );
        Tensor::from_vec(&[b, outputs], out)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_forward(&self.weight.name))?;
        let (outputs, inputs) = self.dims();
        let b = x.shape()[0];
        let mut gw = vec![T::zero(); outputs * inputs];
        T::gemm(
            outputs,
            b,
            inputs,
            T::one(),
            grad.data(),
            1,
            outputs as isize,
            x.data(),
            inputs as isize,
            1,
            T::zero(),
            &mut gw,
            inputs as isize,
            1,
        );
        let mut gb = vec![T::zero(); outputs];
        for row in grad.data().chunks(outputs) {
            gb.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
        }
        let mut dx = vec![T::zero(); b * inputs];
        T::gemm(
            b,
            outputs,
            inputs,
            T::one(),
            grad.data(),
            outputs as isize,
            1,
            self.weight.value.data(),
            inputs as isize,
            1,
            T::zero(),
            &mut dx,
            inputs as isize,
            1,
        );
        self.weight.accumulate(&Tensor::from_vec(&[outputs, inputs], gw)?);
        self.bias.accumulate(&Tensor::from_vec(&[outputs], gb)?);
        Tensor::from_vec(&[b, inputs], dx)
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu(Relu<T>),
    MaxPool(MaxPool2x2),
    AvgPool(AvgPool),
    Flatten(Flatten),
    Linear(Linear<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::AvgPool(_) => "avgpool",
            Layer::Flatten(_) => "flatten",
            Layer::Linear(_) => "linear",
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::Relu(l) => l.infer(x),
            Layer::MaxPool(l) => l.infer(x),
            Layer::AvgPool(l) => l.infer(x),
            Layer::Flatten(l) => l.infer(x),
            Layer::Linear(l) => l.infer(x),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, training),
            Layer::Relu(l) => l.forward(x),
            Layer::MaxPool(l) => l.forward(x),
            Layer::AvgPool(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::MaxPool(l) => l.backward(grad),
            Layer::AvgPool(l) => l.backward(grad),
            Layer::Flatten(l) => l.backward(grad),
            Layer::Linear(l) => l.backward(grad),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(l) if l.spec.bias => vec![&l.weight, &l.bias],
            Layer::Conv(l) => vec![&l.weight],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(l) => {
                if l.spec.bias {
                    vec![&mut l.weight, &mut l.bias]
                } else {
                    vec![&mut l.weight]
                }
            }
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }
}
