use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ConditioningVector;
use crate::error::{Error, Result};
use crate::nn::{silu, silu_grad, Conv2d, ParamSet};
use crate::tensor::{LatentTensor, Shape};

/// A noise-predicting network: `predict(x_sigma, sigma, context) -> eps_hat`.
pub trait DenoiserBackbone: Send + Sync {
    /// Dimension of the conditioning vectors this backbone accepts.
    fn cond_dim(&self) -> usize;

    /// Number of latent channels the backbone operates on.
    fn channels(&self) -> usize;

    fn predict(&self, noisy: &LatentTensor, sigma: f32, context: &ConditioningVector) -> Result<LatentTensor>;

    /// Hash of every learnable parameter, used to verify freezing.
    fn parameter_hash(&self) -> String;

    fn is_frozen(&self) -> bool;

    fn check_inputs(&self, noisy: &LatentTensor, context: &ConditioningVector) -> Result<()> {
        if context.dim() != self.cond_dim() {
            return Err(Error::invalid(format!(
                "conditioning dim {} does not match backbone dim {}",
                context.dim(),
                self.cond_dim()
            )));
        }
        if noisy.shape().channels != self.channels() {
            let s = noisy.shape();
            return Err(Error::ShapeMismatch {
                expected: Shape::new(self.channels(), s.height, s.width),
                got: s,
            });
        }
        Ok(())
    }
}

/// Backbones that can pull a loss gradient back onto the conditioning vector.
pub trait ConditionGradient: DenoiserBackbone {
    /// Runs `predict`, asks `loss_grad` for `dL/d eps_hat`, and returns the
    /// prediction with `dL/d context`.
    fn predict_with_context_grad(
        &self,
        noisy: &LatentTensor,
        sigma: f32,
        context: &ConditioningVector,
        loss_grad: &mut dyn FnMut(&LatentTensor) -> LatentTensor,
    ) -> Result<(LatentTensor, Vec<f32>)>;
}

impl<T: DenoiserBackbone + ?Sized> DenoiserBackbone for &T {
    fn cond_dim(&self) -> usize {
        (**self).cond_dim()
    }
    fn channels(&self) -> usize {
        (**self).channels()
    }
    fn predict(&self, noisy: &LatentTensor, sigma: f32, context: &ConditioningVector) -> Result<LatentTensor> {
        (**self).predict(noisy, sigma, context)
    }
    fn parameter_hash(&self) -> String {
        (**self).parameter_hash()
    }
    fn is_frozen(&self) -> bool {
        (**self).is_frozen()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDenoiserConfig {
    pub channels: usize,
    pub hidden: usize,
    pub cond_dim: usize,
    /// One dilation per conv layer; the last layer maps back to `channels`.
    pub dilations: Vec<usize>,
    /// Assumed data standard deviation for input/output preconditioning.
    pub sigma_data: f32,
    /// Feed normalised `y`/`x` coordinate planes to the first layer.
    #[serde(default)]
    pub coord_channels: bool,
    /// Fixed gain applied to the conditioning vector before projection.
    #[serde(default = "unit")]
    pub context_scale: f32,
}

fn unit() -> f32 {
    1.0
}

impl ToyDenoiserConfig {
    /// Channels seen by the first conv layer.
    pub fn input_planes(&self) -> usize {
        self.channels + 1 + if self.coord_channels { 2 } else { 0 }
    }
}

impl Default for ToyDenoiserConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            hidden: 16,
            cond_dim: 16,
            dilations: vec![1, 2, 4, 1],
            sigma_data: 0.5,
            coord_channels: true,
            context_scale: 1.0,
        }
    }
}

/// Learnable tensors of [`ToyDenoiser`]; also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub convs: Vec<Conv2d>,
    /// Per hidden layer, `hidden x cond_dim` projection of the context into channel biases.
    pub cond_proj: Vec<Vec<f32>>,
    /// Per hidden layer, per-channel gain on the log-sigma feature.
    pub sigma_proj: Vec<Vec<f32>>,
}

impl ParamSet for ToyParams {
    fn visit(&self, f: &mut dyn FnMut(&[f32])) {
        for c in &self.convs {
            c.visit(f);
        }
        for p in &self.cond_proj {
            f(p);
        }
        for p in &self.sigma_proj {
            f(p);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f32])) {
        for c in &mut self.convs {
            c.visit_mut(f);
        }
        for p in &mut self.cond_proj {
            f(p);
        }
        for p in &mut self.sigma_proj {
            f(p);
        }
    }
}

/// Small dilated convolutional noise predictor.
///
/// Input is `[c_in * x, log(sigma)/4]`, optionally followed by `y`/`x`
/// coordinate planes in `[-1, 1]`. Each hidden layer adds a per-channel
/// bias `W_l c + u_l * log(sigma)/4` before SiLU. The raw output `F` is mapped
/// to a noise estimate with the variance-preserving preconditioning
/// `eps_hat = sigma c_in^2 x - sigma_data c_in F`, `c_in = 1/sqrt(sigma^2 + sigma_data^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDenoiser {
    config: ToyDenoiserConfig,
    params: ToyParams,
    frozen: bool,
}

/// Forward activations kept for the backward pass.
pub struct ToyTrace {
    shape: Shape,
    sigma_feat: f32,
    c_in: f32,
    /// Inputs to each conv layer.
    inputs: Vec<Vec<f32>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f32>>,
}

impl ToyDenoiser {
    pub fn new<R: Rng + ?Sized>(config: ToyDenoiserConfig, rng: &mut R) -> Result<Self> {
        if config.dilations.len() < 2 {
            return Err(Error::invalid("toy denoiser needs at least two conv layers"));
        }
        if config.channels == 0 || config.hidden == 0 || config.cond_dim == 0 {
            return Err(Error::invalid("toy denoiser dimensions must be positive"));
        }
        let n = config.dilations.len();
        let mut convs = Vec::with_capacity(n);
        for (l, &d) in config.dilations.iter().enumerate() {
            let cin = if l == 0 { config.input_planes() } else { config.hidden };
            let (cout, gain) = if l + 1 == n {
                (config.channels, 0.5)
            } else {
                (config.hidden, 1.0)
            };
            convs.push(Conv2d::init(cin, cout, 3, d, gain, rng));
        }
        let scale = 1.0 / (config.cond_dim as f32).sqrt();
        let cond_proj = (0..n - 1)
            .map(|_| {
                (0..config.hidden * config.cond_dim)
                    .map(|_| scale * rng.sample::<f32, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let sigma_proj = (0..n - 1)
            .map(|_| (0..config.hidden).map(|_| 0.5 * rng.sample::<f32, _>(StandardNormal)).collect())
            .collect();
        Ok(Self {
            config,
            params: ToyParams {
                convs,
                cond_proj,
                sigma_proj,
            },
            frozen: false,
        })
    }

    pub fn config(&self) -> &ToyDenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ToyParams {
        &self.params
    }

    /// Mutable parameter access; refused once the backbone is frozen.
    pub fn params_mut(&mut self) -> Result<&mut ToyParams> {
        if self.frozen {
            return Err(Error::invalid("denoiser parameters are frozen"));
        }
        Ok(&mut self.params)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn zero_grads(&self) -> ToyParams {
        let mut g = self.params.clone();
        g.zero();
        g
    }

    fn sigma_terms(&self, sigma: f32) -> (f32, f32) {
        let sd = self.config.sigma_data;
        let c_in = 1.0 / (sigma * sigma + sd * sd).sqrt();
        let feat = sigma.max(1e-4).ln() / 4.0;
        (c_in, feat)
    }

    /// Forward pass recording activations.
    pub fn forward_trace(
        &self,
        noisy: &LatentTensor,
        sigma: f32,
        context: &ConditioningVector,
    ) -> Result<(LatentTensor, ToyTrace)> {
        self.check_inputs(noisy, context)?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be finite and non-negative, got {sigma}")));
        }
        let shape = noisy.shape();
        let (h, w) = (shape.height, shape.width);
        let plane = shape.plane();
        let (c_in, feat) = self.sigma_terms(sigma);
        let ctx = context.as_slice();
        let gain = self.config.context_scale;
        let hidden = self.config.hidden;
        let n = self.params.convs.len();

        let mut input = Vec::with_capacity(self.config.input_planes() * plane);
        input.extend(noisy.data().iter().map(|&v| v * c_in));
        input.extend(std::iter::repeat(feat).take(plane));
        if self.config.coord_channels {
            input.extend((0..plane).map(|i| ((i / w) as f32 + 0.5) / h as f32 * 2.0 - 1.0));
            input.extend((0..plane).map(|i| ((i % w) as f32 + 0.5) / w as f32 * 2.0 - 1.0));
        }

        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n - 1);
        let mut current = input;
        for l in 0..n - 1 {
            let conv = &self.params.convs[l];
            let mut z = vec![0.0; hidden * plane];
            conv.forward(&current, h, w, &mut z);
            let proj = &self.params.cond_proj[l];
            for ch in 0..hidden {
                let row = &proj[ch * ctx.len()..(ch + 1) * ctx.len()];
                let extra = gain * row.iter().zip(ctx).map(|(a, b)| a * b).sum::<f32>()
                    + self.params.sigma_proj[l][ch] * feat;
                for v in &mut z[ch * plane..(ch + 1) * plane] {
                    *v += extra;
                }
            }
            let act: Vec<f32> = z.iter().map(|&v| silu(v)).collect();
            inputs.push(current);
            pre.push(z);
            current = act;
        }
        let last = &self.params.convs[n - 1];
        let mut raw = vec![0.0; shape.channels * plane];
        last.forward(&current, h, w, &mut raw);
        inputs.push(current);

        let a = sigma * c_in * c_in;
        let b = self.config.sigma_data * c_in;
        let eps: Vec<f32> = noisy
            .data()
            .iter()
            .zip(&raw)
            .map(|(&x, &f)| a * x - b * f)
            .collect();
        let out = LatentTensor::from_vec(shape, eps)?;
        Ok((
            out,
            ToyTrace {
                shape,
                sigma_feat: feat,
                c_in,
                inputs,
                pre,
            },
        ))
    }

    /// Backward pass from `dL/d eps_hat`. Returns the conditioning gradient and,
    /// when `param_grads` is given, accumulates parameter gradients into it.
    pub fn backward(
        &self,
        trace: &ToyTrace,
        context: &ConditioningVector,
        grad_eps: &LatentTensor,
        mut param_grads: Option<&mut ToyParams>,
    ) -> Result<Vec<f32>> {
        grad_eps.ensure_shape(trace.shape)?;
        let shape = trace.shape;
        let (h, w) = (shape.height, shape.width);
        let plane = shape.plane();
        let hidden = self.config.hidden;
        let n = self.params.convs.len();
        let ctx = context.as_slice();
        let cd = ctx.len();
        let gain = self.config.context_scale;

        let b = self.config.sigma_data * trace.c_in;
        let mut grad: Vec<f32> = grad_eps.data().iter().map(|&g| -b * g).collect();
        let mut cond_grad = vec![0.0f32; cd];

        for l in (0..n).rev() {
            let conv = &self.params.convs[l];
            let input = &trace.inputs[l];
            if let Some(g) = param_grads.as_deref_mut() {
                let gc = &mut g.convs[l];
                conv.backward_params(input, &grad, h, w, &mut gc.weight, &mut gc.bias);
            }
            if l == 0 {
                break;
            }
            // Through conv l into the activation of hidden layer l-1.
            let mut grad_act = vec![0.0; hidden * plane];
            conv.backward_input(&grad, h, w, &mut grad_act);
            let z = &trace.pre[l - 1];
            for (g, &zv) in grad_act.iter_mut().zip(z) {
                *g *= silu_grad(zv);
            }
            let proj = &self.params.cond_proj[l - 1];
            for ch in 0..hidden {
                let s: f32 = grad_act[ch * plane..(ch + 1) * plane].iter().sum();
                let row = &proj[ch * cd..(ch + 1) * cd];
                for (cg, &r) in cond_grad.iter_mut().zip(row) {
                    *cg += gain * s * r;
                }
                if let Some(g) = param_grads.as_deref_mut() {
                    let grow = &mut g.cond_proj[l - 1][ch * cd..(ch + 1) * cd];
                    for (gr, &c) in grow.iter_mut().zip(ctx) {
                        *gr += gain * s * c;
                    }
                    g.sigma_proj[l - 1][ch] += s * trace.sigma_feat;
                }
            }
            grad = grad_act;
        }
        Ok(cond_grad)
    }
}

impl DenoiserBackbone for ToyDenoiser {
    fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    fn channels(&self) -> usize {
        self.config.channels
    }

    fn predict(&self, noisy: &LatentTensor, sigma: f32, context: &ConditioningVector) -> Result<LatentTensor> {
        self.forward_trace(noisy, sigma, context).map(|(out, _)| out)
    }

    fn parameter_hash(&self) -> String {
        self.params.param_hash()
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }
}

impl ConditionGradient for ToyDenoiser {
    fn predict_with_context_grad(
        &self,
        noisy: &LatentTensor,
        sigma: f32,
        context: &ConditioningVector,
        loss_grad: &mut dyn FnMut(&LatentTensor) -> LatentTensor,
    ) -> Result<(LatentTensor, Vec<f32>)> {
        let (out, trace) = self.forward_trace(noisy, sigma, context)?;
        let g = loss_grad(&out);
        let cg = self.backward(&trace, context, &g, None)?;
        Ok((out, cg))
    }
}
