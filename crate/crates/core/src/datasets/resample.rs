//! Interpolation, cropping and intensity helpers shared by the preprocessors.

use ndarray::{Array2, Array3, ArrayView1, ArrayViewMut1, Axis, Zip};

use crate::error::{Error, Result};

/// Voxels covering `extent_mm` at `spacing_mm`, rounded to nearest.
pub fn voxel_count(len: usize, spacing: f32, target_spacing: f32) -> usize {
    ((len as f64 * spacing as f64 / target_spacing as f64).round() as usize).max(1)
}

/// Source coordinate (in input voxels) of output sample `i` for a
/// centre-aligned grid with step `ratio` = input voxels per output voxel.
fn source_coord(i: usize, ratio: f64) -> f64 {
    (i as f64 + 0.5) * ratio - 0.5
}

fn lerp_line(src: ArrayView1<f32>, mut dst: ArrayViewMut1<f32>, ratio: f64) {
    let last = src.len() - 1;
    for (i, d) in dst.iter_mut().enumerate() {
        let s = source_coord(i, ratio).clamp(0.0, last as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(last);
        let t = (s - i0 as f64) as f32;
        *d = if t == 0.0 { src[i0] } else { src[i0] * (1.0 - t) + src[i1] * t };
    }
}

fn linear_axis(input: &Array3<f32>, axis: usize, out_len: usize) -> Array3<f32> {
    let mut shape = input.raw_dim();
    let ratio = shape[axis] as f64 / out_len as f64;
    shape[axis] = out_len;
    let mut out = Array3::zeros(shape);
    Zip::from(input.lanes(Axis(axis)))
        .and(out.lanes_mut(Axis(axis)))
        .for_each(|s, d| lerp_line(s, d, ratio));
    out
}

/// Separable linear resize of a `(d, h, w)` array (trilinear when all three change).
pub fn resize_linear3(input: &Array3<f32>, out: [usize; 3]) -> Array3<f32> {
    let mut cur = input.clone();
    for (axis, &n) in out.iter().enumerate() {
        if cur.shape()[axis] != n {
            cur = linear_axis(&cur, axis, n);
        }
    }
    cur
}

/// Nearest-neighbour resize, for label volumes.
pub fn resize_nearest3(input: &Array3<u8>, out: [usize; 3]) -> Array3<u8> {
    let idx = |axis: usize| -> Vec<usize> {
        let n_in = input.shape()[axis];
        let ratio = n_in as f64 / out[axis] as f64;
        (0..out[axis])
            .map(|i| (((i as f64 + 0.5) * ratio).floor() as usize).min(n_in - 1))
            .collect()
    };
    let (iz, iy, ix) = (idx(0), idx(1), idx(2));
    Array3::from_shape_fn(out, |(z, y, x)| input[[iz[z], iy[y], ix[x]]])
}

/// Bilinear resize of a 2-D image with centre-aligned pixels. Same-size
/// resizes are the identity.
pub fn resize_bilinear(input: &Array2<f32>, height: usize, width: usize) -> Array2<f32> {
    let v = input.view().insert_axis(Axis(0)).to_owned();
    resize_linear3(&v, [1, height, width]).index_axis_move(Axis(0), 0)
}

/// Low/high split of `total` with the extra unit on the high side.
pub fn split_remainder(total: usize) -> (usize, usize) {
    (total / 2, total - total / 2)
}

/// Centre crop or zero-pad each axis to `out`.
pub fn center_crop_pad<T: Clone + Default>(input: &Array3<T>, out: [usize; 3]) -> Array3<T> {
    let shape = input.shape();
    // Per axis: (source start, destination start, copy length).
    let plan: Vec<(usize, usize, usize)> = (0..3)
        .map(|a| {
            if shape[a] >= out[a] {
                (split_remainder(shape[a] - out[a]).0, 0, out[a])
            } else {
                (0, split_remainder(out[a] - shape[a]).0, shape[a])
            }
        })
        .collect();
    let mut result = Array3::from_elem(out, T::default());
    for z in 0..plan[0].2 {
        for y in 0..plan[1].2 {
            for x in 0..plan[2].2 {
                result[[plan[0].1 + z, plan[1].1 + y, plan[2].1 + x]] =
                    input[[plan[0].0 + z, plan[1].0 + y, plan[2].0 + x]].clone();
            }
        }
    }
    result
}

/// Linear-interpolated percentile of `values` (0..=100).
pub fn percentile(values: &[f32], p: f64) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::Empty("percentile input"));
    }
    let mut v: Vec<f32> = values.to_vec();
    v.sort_by(f32::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    Ok((v[lo] as f64 * (1.0 - t) + v[hi] as f64 * t) as f32)
}

/// Clips to the `[lo_pct, hi_pct]` percentiles and rescales to `[0, 255]`.
/// A constant input maps to all zeros.
pub fn percentile_normalize(values: &[f32], lo_pct: f64, hi_pct: f64) -> Result<Vec<f32>> {
    let lo = percentile(values, lo_pct)?;
    let hi = percentile(values, hi_pct)?;
    if hi <= lo {
        return Ok(vec![0.0; values.len()]);
    }
    let scale = 255.0 / (hi - lo);
    Ok(values.iter().map(|&v| (v.clamp(lo, hi) - lo) * scale).collect())
}

pub fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
