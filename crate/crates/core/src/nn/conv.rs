use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Stride-1 "same" convolution with a square odd kernel and optional dilation.
///
/// Weights are laid out `[out][in][ky][kx]`. Planes are passed as flat
/// row-major slices of `channels * height * width` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Row and column windows where a kernel tap hits valid input.
struct Tap {
    w_index: usize,
    dy: isize,
    dx: isize,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        assert!(dilation >= 1);
        Self {
            in_channels,
            out_channels,
            kernel,
            dilation,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// He-style normal init scaled by `gain`.
    pub fn init<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        gain: f32,
        rng: &mut R,
    ) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, kernel, dilation);
        let fan_in = (in_channels * kernel * kernel) as f32;
        let std = gain * (2.0 / fan_in).sqrt();
        for w in &mut conv.weight {
            *w = std * rng.sample::<f32, _>(StandardNormal);
        }
        conv
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn pad(&self) -> isize {
        (self.dilation * (self.kernel - 1) / 2) as isize
    }

    fn taps(&self, o: usize, i: usize) -> impl Iterator<Item = Tap> + '_ {
        let k = self.kernel;
        let d = self.dilation as isize;
        let pad = self.pad();
        let base = (o * self.in_channels + i) * k * k;
        (0..k * k).map(move |t| Tap {
            w_index: base + t,
            dy: (t / k) as isize * d - pad,
            dx: (t % k) as isize * d - pad,
        })
    }

    #[inline]
    fn span(len: usize, delta: isize) -> (usize, usize) {
        let lo = (-delta).max(0) as usize;
        let hi = (len as isize - delta).clamp(0, len as isize) as usize;
        (lo.min(hi), hi)
    }

    /// `out = conv(input) + bias`; `out` is overwritten.
    pub fn forward(&self, input: &[f32], height: usize, width: usize, out: &mut [f32]) {
        let plane = height * width;
        debug_assert_eq!(input.len(), self.in_channels * plane);
        debug_assert_eq!(out.len(), self.out_channels * plane);
        for o in 0..self.out_channels {
            let out_plane = &mut out[o * plane..(o + 1) * plane];
            out_plane.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let in_plane = &input[i * plane..(i + 1) * plane];
                for tap in self.taps(o, i) {
                    let w = self.weight[tap.w_index];
                    let (y0, y1) = Self::span(height, tap.dy);
                    let (x0, x1) = Self::span(width, tap.dx);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + tap.dy) as usize;
                        let sx0 = (x0 as isize + tap.dx) as usize;
                        let dst = &mut out_plane[y * width + x0..y * width + x1];
                        let src = &in_plane[sy * width + sx0..sy * width + sx0 + (x1 - x0)];
                        for (a, &b) in dst.iter_mut().zip(src) {
                            *a += w * b;
                        }
                    }
                }
            }
        }
    }

    /// Accumulates `d loss / d input` into `grad_in` given `d loss / d out`.
    pub fn backward_input(&self, grad_out: &[f32], height: usize, width: usize, grad_in: &mut [f32]) {
        let plane = height * width;
        for o in 0..self.out_channels {
            let g_plane = &grad_out[o * plane..(o + 1) * plane];
            for i in 0..self.in_channels {
                let gi_plane = &mut grad_in[i * plane..(i + 1) * plane];
                for tap in self.taps(o, i) {
                    let w = self.weight[tap.w_index];
                    let (y0, y1) = Self::span(height, tap.dy);
                    let (x0, x1) = Self::span(width, tap.dx);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + tap.dy) as usize;
                        let sx0 = (x0 as isize + tap.dx) as usize;
                        let src = &g_plane[y * width + x0..y * width + x1];
                        let dst = &mut gi_plane[sy * width + sx0..sy * width + sx0 + (x1 - x0)];
                        for (a, &b) in dst.iter_mut().zip(src) {
                            *a += w * b;
                        }
                    }
                }
            }
        }
    }

    /// Accumulates weight and bias gradients.
    pub fn backward_params(
        &self,
        input: &[f32],
        grad_out: &[f32],
        height: usize,
        width: usize,
        grad_weight: &mut [f32],
        grad_bias: &mut [f32],
    ) {
        let plane = height * width;
        for o in 0..self.out_channels {
            let g_plane = &grad_out[o * plane..(o + 1) * plane];
            grad_bias[o] += g_plane.iter().sum::<f32>();
            for i in 0..self.in_channels {
                let in_plane = &input[i * plane..(i + 1) * plane];
                for tap in self.taps(o, i) {
                    let (y0, y1) = Self::span(height, tap.dy);
                    let (x0, x1) = Self::span(width, tap.dx);
                    if x0 >= x1 {
                        continue;
                    }
                    let mut acc = 0.0f32;
                    for y in y0..y1 {
                        let sy = (y as isize + tap.dy) as usize;
                        let sx0 = (x0 as isize + tap.dx) as usize;
                        let g = &g_plane[y * width + x0..y * width + x1];
                        let src = &in_plane[sy * width + sx0..sy * width + sx0 + (x1 - x0)];
                        acc += dot(g, src);
                    }
                    grad_weight[tap.w_index] += acc;
                }
            }
        }
    }
}

/// Dot product with independent lane accumulators so the loop vectorises.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    lanes.iter().sum::<f32>() + tail
}
