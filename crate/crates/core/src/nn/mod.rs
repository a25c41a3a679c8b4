//! Minimal neural-network building blocks with hand-written backward passes.

mod adam;
mod conv;

pub use adam::{Adam, AdamConfig};
pub use conv::Conv2d;

use sha2::{Digest, Sha256};

/// Anything owning learnable parameter buffers, visited in a fixed order.
pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&[f32]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f32]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |p| out.extend_from_slice(p));
        out
    }

    fn zero(&mut self) {
        self.visit_mut(&mut |p| p.fill(0.0));
    }

    /// SHA-256 over the little-endian bytes of every parameter, hex encoded.
    fn param_hash(&self) -> String {
        let mut hasher = Sha256::new();
        self.visit(&mut |p| {
            for v in p {
                hasher.update(v.to_le_bytes());
            }
        });
        hex(&hasher.finalize())
    }
}

impl ParamSet for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&[f32])) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f32])) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f32) -> f32 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f32) -> f32 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// 2x2 average pooling; odd trailing rows/columns are dropped.
pub fn avg_pool2(input: &[f32], channels: usize, height: usize, width: usize) -> Vec<f32> {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        let src = &input[c * height * width..];
        for y in 0..oh {
            for x in 0..ow {
                let i = 2 * y * width + 2 * x;
                out[(c * oh + y) * ow + x] =
                    0.25 * (src[i] + src[i + 1] + src[i + width] + src[i + width + 1]);
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool2`].
pub fn avg_pool2_backward(grad_out: &[f32], channels: usize, height: usize, width: usize) -> Vec<f32> {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = vec![0.0; channels * height * width];
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                let g = 0.25 * grad_out[(c * oh + y) * ow + x];
                let i = c * height * width + 2 * y * width + 2 * x;
                out[i] += g;
                out[i + 1] += g;
                out[i + width] += g;
                out[i + width + 1] += g;
            }
        }
    }
    out
}
