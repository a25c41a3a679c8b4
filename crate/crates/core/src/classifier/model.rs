use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{avg_pool2, avg_pool2_backward, Conv2d, ParamSet};
use crate::tensor::LatentTensor;

/// Binary image classifier producing one logit.
pub trait Backbone: Send + Sync {
    fn id(&self) -> String;

    fn logit(&self, image: &LatentTensor) -> Result<f32>;
}

/// How the last feature map reaches the logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Global average pooling, then a linear layer: translation invariant.
    GlobalAverage,
    /// A linear layer over the whole flattened feature map, one weight per position.
    Dense,
}

/// Three 3x3 conv + ReLU stages (the first two followed by 2x2 average
/// pooling) and a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallCnn {
    pub head_kind: Head,
    pub convs: Vec<Conv2d>,
    pub head: Vec<f32>,
    pub head_bias: Vec<f32>,
}

pub struct CnnTrace {
    dims: Vec<(usize, usize)>,
    inputs: Vec<Vec<f32>>,
    pre: Vec<Vec<f32>>,
    features: Vec<f32>,
}

impl ParamSet for SmallCnn {
    fn visit(&self, f: &mut dyn FnMut(&[f32])) {
        for c in &self.convs {
            c.visit(f);
        }
        f(&self.head);
        f(&self.head_bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f32])) {
        for c in &mut self.convs {
            c.visit_mut(f);
        }
        f(&mut self.head);
        f(&mut self.head_bias);
    }
}

impl SmallCnn {
    pub const WIDTHS: [usize; 3] = [8, 16, 16];

    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self::with_head(channels, Head::GlobalAverage, (0, 0), rng)
    }

    /// `input` is the image `(height, width)`; only the dense head depends on it.
    pub fn with_head<R: Rng + ?Sized>(channels: usize, head_kind: Head, input: (usize, usize), rng: &mut R) -> Self {
        let w = Self::WIDTHS;
        let convs = vec![
            Conv2d::init(channels, w[0], 3, 1, 1.0, rng),
            Conv2d::init(w[0], w[1], 3, 1, 1.0, rng),
            Conv2d::init(w[1], w[2], 3, 1, 1.0, rng),
        ];
        let n_features = match head_kind {
            Head::GlobalAverage => w[2],
            Head::Dense => w[2] * (input.0 / 4) * (input.1 / 4),
        };
        let scale = 1.0 / (n_features as f32).sqrt();
        let head = (0..n_features).map(|_| scale * rng.sample::<f32, _>(StandardNormal)).collect();
        Self {
            head_kind,
            convs,
            head,
            head_bias: vec![0.0],
        }
    }

    pub fn channels(&self) -> usize {
        self.convs[0].in_channels
    }

    pub fn forward_trace(&self, image: &LatentTensor) -> Result<(f32, CnnTrace)> {
        let s = image.shape();
        if s.channels != self.channels() {
            return Err(Error::invalid(format!(
                "classifier expects {} channels, got {}",
                self.channels(),
                s.channels
            )));
        }
        if s.height < 4 || s.width < 4 {
            return Err(Error::invalid("classifier input must be at least 4x4"));
        }
        let (mut h, mut w) = (s.height, s.width);
        let mut x = image.data().to_vec();
        let mut dims = Vec::new();
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        for (l, conv) in self.convs.iter().enumerate() {
            let mut z = vec![0.0; conv.out_channels * h * w];
            conv.forward(&x, h, w, &mut z);
            let a: Vec<f32> = z.iter().map(|&v| v.max(0.0)).collect();
            dims.push((h, w));
            inputs.push(std::mem::replace(&mut x, Vec::new()));
            pre.push(z);
            if l + 1 < self.convs.len() {
                x = avg_pool2(&a, conv.out_channels, h, w);
                h /= 2;
                w /= 2;
            } else {
                x = a;
            }
        }
        let plane = h * w;
        let features: Vec<f32> = match self.head_kind {
            Head::GlobalAverage => x.chunks_exact(plane).map(|p| p.iter().sum::<f32>() / plane as f32).collect(),
            Head::Dense => x,
        };
        if features.len() != self.head.len() {
            return Err(Error::invalid(format!(
                "classifier head expects {} features, got {}",
                self.head.len(),
                features.len()
            )));
        }
        let logit = self.head_bias[0] + features.iter().zip(&self.head).map(|(a, b)| a * b).sum::<f32>();
        Ok((
            logit,
            CnnTrace {
                dims,
                inputs,
                pre,
                features,
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d logit = grad_logit`.
    pub fn backward(&self, trace: &CnnTrace, grad_logit: f32, grads: &mut SmallCnn) {
        grads.head_bias[0] += grad_logit;
        for (g, p) in grads.head.iter_mut().zip(&trace.features) {
            *g += grad_logit * p;
        }
        let n = self.convs.len();
        let (h, w) = trace.dims[n - 1];
        let plane = h * w;
        let mut grad: Vec<f32> = match self.head_kind {
            Head::GlobalAverage => self
                .head
                .iter()
                .flat_map(|&k| std::iter::repeat(grad_logit * k / plane as f32).take(plane))
                .collect(),
            Head::Dense => self.head.iter().map(|&k| grad_logit * k).collect(),
        };
        for l in (0..n).rev() {
            let conv = &self.convs[l];
            let (h, w) = trace.dims[l];
            if l + 1 < n {
                grad = avg_pool2_backward(&grad, conv.out_channels, h, w);
            }
            for (g, &z) in grad.iter_mut().zip(&trace.pre[l]) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
            let gc = &mut grads.convs[l];
            conv.backward_params(&trace.inputs[l], &grad, h, w, &mut gc.weight, &mut gc.bias);
            if l > 0 {
                let mut gi = vec![0.0; conv.in_channels * h * w];
                conv.backward_input(&grad, h, w, &mut gi);
                grad = gi;
            }
        }
    }
}

impl Backbone for SmallCnn {
    fn id(&self) -> String {
        let head = match self.head_kind {
            Head::GlobalAverage => "gap",
            Head::Dense => "dense",
        };
        format!("small-cnn-{}-{head}", Self::WIDTHS.map(|w| w.to_string()).join("-"))
    }

    fn logit(&self, image: &LatentTensor) -> Result<f32> {
        self.forward_trace(image).map(|(l, _)| l)
    }
}

/// A backbone the harness can train with backpropagation.
pub trait Trainable: Backbone + ParamSet + Clone {
    type Trace;

    fn forward_trace(&self, image: &LatentTensor) -> Result<(f32, Self::Trace)>;

    /// Accumulates parameter gradients for `d loss / d logit = grad_logit` into `grads`.
    fn backward(&self, trace: &Self::Trace, grad_logit: f32, grads: &mut Self);
}

impl Trainable for SmallCnn {
    type Trace = CnnTrace;

    fn forward_trace(&self, image: &LatentTensor) -> Result<(f32, CnnTrace)> {
        SmallCnn::forward_trace(self, image)
    }

    fn backward(&self, trace: &CnnTrace, grad_logit: f32, grads: &mut Self) {
        SmallCnn::backward(self, trace, grad_logit, grads)
    }
}

/// One hidden ReLU layer over raw pixels. No built-in translation
/// invariance, so it needs many examples to generalise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelMlp {
    pub inputs: usize,
    pub hidden: usize,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

pub struct MlpTrace {
    input: Vec<f32>,
    pre: Vec<f32>,
}

impl PixelMlp {
    pub const HIDDEN: usize = 32;

    pub fn new<R: Rng + ?Sized>(inputs: usize, rng: &mut R) -> Self {
        let hidden = Self::HIDDEN;
        let s1 = (2.0 / inputs as f32).sqrt();
        let s2 = (1.0 / hidden as f32).sqrt();
        Self {
            inputs,
            hidden,
            w1: (0..hidden * inputs).map(|_| s1 * rng.sample::<f32, _>(StandardNormal)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| s2 * rng.sample::<f32, _>(StandardNormal)).collect(),
            b2: vec![0.0],
        }
    }
}

impl ParamSet for PixelMlp {
    fn visit(&self, f: &mut dyn FnMut(&[f32])) {
        f(&self.w1);
        f(&self.b1);
        f(&self.w2);
        f(&self.b2);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f32])) {
        f(&mut self.w1);
        f(&mut self.b1);
        f(&mut self.w2);
        f(&mut self.b2);
    }
}

impl Trainable for PixelMlp {
    type Trace = MlpTrace;

    fn forward_trace(&self, image: &LatentTensor) -> Result<(f32, MlpTrace)> {
        let x = image.data();
        if x.len() != self.inputs {
            return Err(Error::invalid(format!(
                "pixel MLP expects {} inputs, got {}",
                self.inputs,
                x.len()
            )));
        }
        let pre: Vec<f32> = self
            .w1
            .chunks_exact(self.inputs)
            .zip(&self.b1)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>())
            .collect();
        let logit = self.b2[0] + pre.iter().zip(&self.w2).map(|(z, w)| z.max(0.0) * w).sum::<f32>();
        Ok((
            logit,
            MlpTrace {
                input: x.to_vec(),
                pre,
            },
        ))
    }

    fn backward(&self, trace: &MlpTrace, grad_logit: f32, grads: &mut Self) {
        grads.b2[0] += grad_logit;
        for j in 0..self.hidden {
            let z = trace.pre[j];
            if z <= 0.0 {
                continue;
            }
            grads.w2[j] += grad_logit * z;
            let g = grad_logit * self.w2[j];
            grads.b1[j] += g;
            let row = &mut grads.w1[j * self.inputs..(j + 1) * self.inputs];
            for (r, &v) in row.iter_mut().zip(&trace.input) {
                *r += g * v;
            }
        }
    }
}

impl Backbone for PixelMlp {
    fn id(&self) -> String {
        format!("pixel-mlp-{}", self.hidden)
    }

    fn logit(&self, image: &LatentTensor) -> Result<f32> {
        self.forward_trace(image).map(|(l, _)| l)
    }
}

/// Numerically stable `log(1 + exp(-y * logit))` style binary cross-entropy
/// and its derivative with respect to the logit.
pub fn bce_with_logit(logit: f32, positive: bool) -> (f32, f32) {
    let y = if positive { 1.0 } else { 0.0 };
    let loss = logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p();
    let grad = crate::nn::sigmoid(logit) - y;
    (loss, grad)
}
