use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

/// Result of a pooling pass. `indices` (max pooling only) holds, per output
/// element, the linear spatial index of the winning input voxel within its
/// `(batch, channel)` plane.
#[derive(Clone, Debug)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub indices: Option<Vec<usize>>,
}

/// Non-overlapping pooling with `window == stride`.
pub fn pool3d<T: Real>(x: &Tensor<T>, kind: PoolKind, window: usize) -> Result<Pooled<T>> {
    let [b, c, nx, ny, nz] = x.dims5()?;
    for (a, &n) in ["x", "y", "z"].iter().zip([nx, ny, nz].iter()) {
        if window == 0 || n % window != 0 {
            return Err(Error::shape(*a, format!("extent {n} not divisible by pooling stride {window}")));
        }
    }
    let (ox, oy, oz) = (nx / window, ny / window, nz / window);
    let n_out = ox * oy * oz;
    let mut out = Vec::with_capacity(b * c * n_out);
    let mut indices = (kind == PoolKind::Max).then(|| Vec::with_capacity(b * c * n_out));
    let inv = T::one() / T::lit((window * window * window) as f64);
    for plane in x.data().chunks(nx * ny * nz) {
        for i in 0..ox {
            for j in 0..oy {
                for k in 0..oz {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0;
                    let mut sum = T::zero();
                    for a in 0..window {
                        for bb in 0..window {
                            let row = ((i * window + a) * ny + j * window + bb) * nz + k * window;
                            for (cz, &v) in plane[row..row + window].iter().enumerate() {
                                if v > best {
                                    best = v;
                                    best_idx = row + cz;
                                }
                                sum += v;
                            }
                        }
                    }
                    match kind {
                        PoolKind::Max => {
                            out.push(best);
                            indices.as_mut().expect("max indices").push(best_idx);
                        }
                        PoolKind::Avg => out.push(sum * inv),
                    }
                }
            }
        }
    }
    Ok(Pooled { output: Tensor::from_vec(&[b, c, ox, oy, oz], out)?, indices })
}

pub fn avg_pool3d_bwd<T: Real>(grad_out: &Tensor<T>, input_shape: &[usize], window: usize) -> Result<Tensor<T>> {
    let [b, c, nx, ny, nz] = <[usize; 5]>::try_from(input_shape).map_err(|_| Error::shape("rank", "need 5D shape"))?;
    let [_, _, ox, oy, oz] = grad_out.dims5()?;
    if [ox * window, oy * window, oz * window] != [nx, ny, nz] {
        return Err(Error::shape("grad_out", format!("{:?} does not pool {input_shape:?}", grad_out.shape())));
    }
    let inv = T::one() / T::lit((window * window * window) as f64);
    let mut gx = Tensor::zeros(&[b, c, nx, ny, nz]);
    for (plane, g) in gx.data_mut().chunks_mut(nx * ny * nz).zip(grad_out.data().chunks(ox * oy * oz)) {
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    plane[(i * ny + j) * nz + k] = g[((i / window) * oy + j / window) * oz + k / window] * inv;
                }
            }
        }
    }
    Ok(gx)
}

/// Scatters `x` to the recorded argmax positions of a grid of `out_shape`,
/// zeros elsewhere. Also the backward pass of max pooling.
pub fn unpool3d<T: Real>(x: &Tensor<T>, indices: &[usize], out_shape: &[usize]) -> Result<Tensor<T>> {
    let [b, c, ..] = x.dims5()?;
    let out_dims = <[usize; 5]>::try_from(out_shape).map_err(|_| Error::shape("rank", "need 5D output shape"))?;
    if out_dims[0] != b || out_dims[1] != c {
        return Err(Error::shape("channel", format!("unpool {:?} into {out_shape:?}", x.shape())));
    }
    if indices.len() != x.len() {
        return Err(Error::shape("indices", format!("{} indices for {} values", indices.len(), x.len())));
    }
    let plane_out: usize = out_dims[2..].iter().product();
    let plane_in = x.spatial_len();
    let mut out = Tensor::zeros(out_shape);
    for (p, (vals, idx)) in x.data().chunks(plane_in).zip(indices.chunks(plane_in)).enumerate() {
        let dst = &mut out.data_mut()[p * plane_out..(p + 1) * plane_out];
        for (&v, &i) in vals.iter().zip(idx) {
            if i >= plane_out {
                return Err(Error::IndexOutOfRange { index: i, len: plane_out });
            }
            dst[i] += v;
        }
    }
    Ok(out)
}

/// Backward of [`unpool3d`]: gathers the gradient at the recorded positions.
pub fn unpool3d_bwd<T: Real>(grad_out: &Tensor<T>, indices: &[usize], input_shape: &[usize]) -> Result<Tensor<T>> {
    let plane_out = grad_out.spatial_len();
    let plane_in: usize = input_shape[2..].iter().product();
    let mut g = Vec::with_capacity(indices.len());
    for (p, idx) in indices.chunks(plane_in).enumerate() {
        let src = &grad_out.data()[p * plane_out..(p + 1) * plane_out];
        for &i in idx {
            g.push(*src.get(i).ok_or(Error::IndexOutOfRange { index: i, len: plane_out })?);
        }
    }
    Tensor::from_vec(input_shape, g)
}
