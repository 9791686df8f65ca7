//! Stateful layers: each caches what its backward pass needs during a
//! recorded forward pass and accumulates parameter gradients on backward.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::activation::{prelu_bwd, prelu_fwd};
use super::adam::Param;
use super::conv::{conv3d_bwd, conv3d_fwd, conv_transpose3d_bwd, conv_transpose3d_fwd, ConvSpec};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Per-pass switches plus the random state used by dropout.
pub struct Ctx<'a> {
    /// Dropout active.
    pub train: bool,
    /// Keep activations for a backward pass.
    pub record: bool,
    pub rng: &'a mut ChaCha8Rng,
}

pub trait Layer<T: Real> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>>;
    /// Propagates `grad` (w.r.t. the last recorded output) and accumulates
    /// parameter gradients.
    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>>;
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));
}

fn cached<'a, T>(cache: &'a Option<Tensor<T>>, layer: &str) -> Result<&'a Tensor<T>> {
    cache.as_ref().ok_or_else(|| Error::shape("cache", format!("{layer}: backward without a recorded forward")))
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<T: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

pub struct Conv3d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub spec: ConvSpec,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv3d<T> {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: [usize; 3],
        spec: ConvSpec,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let taps: usize = kernel.iter().product();
        let w = glorot_uniform(&[out_c, in_c, kernel[0], kernel[1], kernel[2]], in_c * taps, out_c * taps, rng);
        Conv3d {
            weight: Param::new(format!("{name}.weight"), w),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[out_c]))),
            spec,
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<T: Real> Layer<T> for Conv3d<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let y = conv3d_fwd(x, &self.weight.value, self.bias.as_ref().map(|b| b.value.data()), self.spec)?;
        self.input = ctx.record.then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = cached(&self.input, &self.weight.name)?;
        let g = conv3d_bwd(grad, x, &self.weight.value, self.bias.is_some(), self.spec)?;
        self.weight.accumulate(g.grad_w.data());
        if let (Some(b), Some(gb)) = (self.bias.as_mut(), g.grad_bias) {
            b.accumulate(&gb);
        }
        Ok(g.grad_x)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

pub struct ConvTranspose3d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub spec: ConvSpec,
    input: Option<Tensor<T>>,
}

impl<T: Real> ConvTranspose3d<T> {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: [usize; 3],
        spec: ConvSpec,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let taps: usize = kernel.iter().product();
        let w = glorot_uniform(&[in_c, out_c, kernel[0], kernel[1], kernel[2]], in_c * taps, out_c * taps, rng);
        ConvTranspose3d {
            weight: Param::new(format!("{name}.weight"), w),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[out_c]))),
            spec,
            input: None,
        }
    }
}

impl<T: Real> Layer<T> for ConvTranspose3d<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let y = conv_transpose3d_fwd(x, &self.weight.value, self.bias.as_ref().map(|b| b.value.data()), self.spec)?;
        self.input = ctx.record.then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = cached(&self.input, &self.weight.name)?;
        let g = conv_transpose3d_bwd(grad, x, &self.weight.value, self.bias.is_some(), self.spec)?;
        self.weight.accumulate(g.grad_w.data());
        if let (Some(b), Some(gb)) = (self.bias.as_mut(), g.grad_bias) {
            b.accumulate(&gb);
        }
        Ok(g.grad_x)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Per-channel trainable `scale · x + shift`; stands in for batch
/// normalization without batch statistics.
pub struct ChannelAffine<T> {
    pub scale: Param<T>,
    pub shift: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> ChannelAffine<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        ChannelAffine {
            scale: Param::new(format!("{name}.scale"), Tensor::full(&[channels], T::one())),
            shift: Param::new(format!("{name}.shift"), Tensor::zeros(&[channels])),
            input: None,
        }
    }
}

impl<T: Real> Layer<T> for ChannelAffine<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let c = self.scale.value.len();
        if x.shape().get(1) != Some(&c) {
            return Err(Error::shape("channel", format!("{}: expected {c} channels, got {:?}", self.scale.name, x.shape())));
        }
        let mut y = x.clone();
        let s = x.spatial_len();
        let (sc, sh) = (self.scale.value.data(), self.shift.value.data());
        for (chunk, ch) in y.data_mut().chunks_mut(s).zip((0..c).cycle()) {
            let (a, b) = (sc[ch], sh[ch]);
            chunk.iter_mut().for_each(|v| *v = *v * a + b);
        }
        self.input = ctx.record.then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = cached(&self.input, &self.scale.name)?;
        let c = self.scale.value.len();
        let s = x.spatial_len();
        let mut gx = grad.clone();
        let mut gs = vec![T::zero(); c];
        let mut gb = vec![T::zero(); c];
        let sc = self.scale.value.data();
        for ((g, xin), ch) in gx.data_mut().chunks_mut(s).zip(x.data().chunks(s)).zip((0..c).cycle()) {
            let mut acc_s = T::zero();
            let mut acc_b = T::zero();
            for (gv, &xv) in g.iter_mut().zip(xin) {
                acc_s += *gv * xv;
                acc_b += *gv;
                *gv *= sc[ch];
            }
            gs[ch] += acc_s;
            gb[ch] += acc_b;
        }
        self.scale.accumulate(&gs);
        self.shift.accumulate(&gb);
        Ok(gx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.scale);
        f(&self.shift);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.scale);
        f(&mut self.shift);
    }
}

/// Parametric ReLU with one learned slope per channel.
pub struct PRelu<T> {
    pub slope: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> PRelu<T> {
    pub fn new(name: &str, channels: usize, init: f64) -> Self {
        PRelu { slope: Param::new(format!("{name}.slope"), Tensor::full(&[channels], T::lit(init))), input: None }
    }
}

impl<T: Real> Layer<T> for PRelu<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let c = self.slope.value.len();
        if x.shape().get(1) != Some(&c) {
            return Err(Error::shape("channel", format!("{}: expected {c} channels, got {:?}", self.slope.name, x.shape())));
        }
        let y = prelu_fwd(x, self.slope.value.data());
        self.input = ctx.record.then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = cached(&self.input, &self.slope.name)?;
        let (gx, gs) = prelu_bwd(grad, x, self.slope.value.data());
        self.slope.accumulate(&gs);
        Ok(gx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.slope);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.slope);
    }
}

/// Channel-wise (spatial) dropout with inverted scaling.
pub struct Dropout<T> {
    pub p: f64,
    mask: Option<Vec<T>>,
}

impl<T: Real> Dropout<T> {
    pub fn new(p: f64) -> Self {
        Dropout { p, mask: None }
    }
}

impl<T: Real> Layer<T> for Dropout<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        if !ctx.train || self.p == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let planes = x.shape()[0] * x.shape()[1];
        let keep = T::lit(1.0 / (1.0 - self.p));
        let mask: Vec<T> =
            (0..planes).map(|_| if ctx.rng.random::<f64>() < self.p { T::zero() } else { keep }).collect();
        let mut y = x.clone();
        let s = x.spatial_len();
        for (chunk, &m) in y.data_mut().chunks_mut(s).zip(&mask) {
            chunk.iter_mut().for_each(|v| *v *= m);
        }
        self.mask = ctx.record.then_some(mask);
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(mask) = &self.mask else { return Ok(grad.clone()) };
        let mut g = grad.clone();
        let s = g.spatial_len();
        for (chunk, &m) in g.data_mut().chunks_mut(s).zip(mask) {
            chunk.iter_mut().for_each(|v| *v *= m);
        }
        Ok(g)
    }

    fn visit(&self, _: &mut dyn FnMut(&Param<T>)) {}

    fn visit_mut(&mut self, _: &mut dyn FnMut(&mut Param<T>)) {}
}
