//! 3D cross-correlation (no kernel flip) and its transpose, lowered to GEMM
//! through an im2col buffer.

use serde::{Deserialize, Serialize};

use super::real::{gemm, Strides};
use super::{Real, Tensor};
use crate::error::{Error, Result};

const AXES: [&str; 3] = ["x", "y", "z"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub stride: [usize; 3],
    pub dilation: [usize; 3],
    pub padding: [usize; 3],
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec { stride: [1; 3], dilation: [1; 3], padding: [0; 3] }
    }
}

impl ConvSpec {
    /// Stride 1 with the padding that preserves spatial extent for odd kernels.
    pub fn same(kernel: [usize; 3], dilation: [usize; 3]) -> Self {
        ConvSpec {
            stride: [1; 3],
            dilation,
            padding: [0, 1, 2].map(|a| dilation[a] * (kernel[a] - 1) / 2),
        }
    }

    pub fn strided(stride: usize, padding: usize) -> Self {
        ConvSpec { stride: [stride; 3], dilation: [1; 3], padding: [padding; 3] }
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, dilation: usize, pad: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    (input + 2 * pad >= span && stride > 0).then(|| (input + 2 * pad - span) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    pad: usize,
) -> Option<usize> {
    ((input - 1) * stride + dilation * (kernel - 1) + 1).checked_sub(2 * pad).filter(|&n| n > 0)
}

/// Channel products up to this use the direct kernels.
const DIRECT_MAX_CHANNEL_PRODUCT: usize = 64;

/// Eight independent partial sums so the compiler can vectorize.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    lanes.iter().fold(T::zero(), |s, &v| s + v) + tail
}

/// Shape bookkeeping for one convolution, seen from the forward
/// (large input → output) direction.
#[derive(Clone, Debug)]
struct Geometry {
    ci: usize,
    co: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    spec: ConvSpec,
}

impl Geometry {
    fn k(&self) -> usize {
        self.ci * self.kernel.iter().product::<usize>()
    }

    fn n_in(&self) -> usize {
        self.input.iter().product()
    }

    fn n_out(&self) -> usize {
        self.output.iter().product()
    }

    fn pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.spec.stride == [1; 3] && self.spec.padding == [0; 3]
    }

    /// For each axis: `table[t * out + o]` = input index read by tap `t` at
    /// output `o`, or -1 when it falls in the zero padding.
    fn tap_tables(&self) -> [Vec<isize>; 3] {
        [0, 1, 2].map(|a| {
            let (k, o_n, n) = (self.kernel[a], self.output[a], self.input[a] as isize);
            let (s, d, p) = (self.spec.stride[a] as isize, self.spec.dilation[a] as isize, self.spec.padding[a] as isize);
            let mut t = Vec::with_capacity(k * o_n);
            for tap in 0..k as isize {
                for o in 0..o_n as isize {
                    let i = o * s + tap * d - p;
                    t.push(if (0..n).contains(&i) { i } else { -1 });
                }
            }
            t
        })
    }

    fn im2col<T: Real>(&self, x: &[T], col: &mut [T], tables: &[Vec<isize>; 3]) {
        let runs = self.z_runs(tables);
        let sz = self.spec.stride[2];
        let [kx, ky, kz] = self.kernel;
        let [ox, oy, oz] = self.output;
        let [_, ny, nz] = self.input;
        let n_out = self.n_out();
        let mut row = 0;
        for c in 0..self.ci {
            let xc = &x[c * self.n_in()..(c + 1) * self.n_in()];
            for a in 0..kx {
                let tx = &tables[0][a * ox..(a + 1) * ox];
                for b in 0..ky {
                    let ty = &tables[1][b * oy..(b + 1) * oy];
                    for cz in 0..kz {
                        let dst = &mut col[row * n_out..(row + 1) * n_out];
                        for (i, &ix) in tx.iter().enumerate() {
                            let plane = &mut dst[i * oy * oz..(i + 1) * oy * oz];
                            if ix < 0 {
                                plane.fill(T::zero());
                                continue;
                            }
                            for (j, &iy) in ty.iter().enumerate() {
                                let line = &mut plane[j * oz..(j + 1) * oz];
                                if iy < 0 {
                                    line.fill(T::zero());
                                    continue;
                                }
                                let src = &xc[(ix as usize * ny + iy as usize) * nz..][..nz];
                                let (lo, hi, i0) = runs[cz];
                                line[..lo].fill(T::zero());
                                line[hi..].fill(T::zero());
                                if sz == 1 {
                                    line[lo..hi].copy_from_slice(&src[i0..i0 + (hi - lo)]);
                                } else {
                                    for (v, &s) in line[lo..hi].iter_mut().zip(src[i0..].iter().step_by(sz)) {
                                        *v = s;
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Scatter-adds a column buffer back onto the input grid.
    fn col2im<T: Real>(&self, col: &[T], gx: &mut [T], tables: &[Vec<isize>; 3]) {
        let runs = self.z_runs(tables);
        let sz = self.spec.stride[2];
        let [kx, ky, kz] = self.kernel;
        let [ox, oy, oz] = self.output;
        let [_, ny, nz] = self.input;
        let n_out = self.n_out();
        let n_in = self.n_in();
        let mut row = 0;
        for c in 0..self.ci {
            let gc = &mut gx[c * n_in..(c + 1) * n_in];
            for a in 0..kx {
                let tx = &tables[0][a * ox..(a + 1) * ox];
                for b in 0..ky {
                    let ty = &tables[1][b * oy..(b + 1) * oy];
                    for cz in 0..kz {
                        let src = &col[row * n_out..(row + 1) * n_out];
                        for (i, &ix) in tx.iter().enumerate() {
                            if ix < 0 {
                                continue;
                            }
                            for (j, &iy) in ty.iter().enumerate() {
                                if iy < 0 {
                                    continue;
                                }
                                let dst = &mut gc[(ix as usize * ny + iy as usize) * nz..][..nz];
                                let (lo, hi, i0) = runs[cz];
                                let line = &src[(i * oy + j) * oz + lo..][..hi - lo];
                                for (d, &v) in dst[i0..].iter_mut().step_by(sz).zip(line) {
                                    *d += v;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Small channel products are faster as line-wise multiply-adds than as
    /// skinny GEMMs over a large im2col buffer.
    fn prefer_direct(&self) -> bool {
        self.ci * self.co <= DIRECT_MAX_CHANNEL_PRODUCT && self.spec.stride == [1; 3]
    }

    fn forward<T: Real>(&self, x: &[T], batch: usize, w: &[T]) -> Vec<T> {
        if self.pointwise() {
            self.pointwise_forward(x, batch, w)
        } else if self.prefer_direct() {
            self.direct_forward(x, batch, w)
        } else {
            self.gemm_forward(x, batch, w)
        }
    }

    fn input_grad<T: Real>(&self, gy: &[T], batch: usize, w: &[T]) -> Vec<T> {
        if self.pointwise() {
            self.pointwise_input_grad(gy, batch, w)
        } else if self.prefer_direct() {
            self.direct_input_grad(gy, batch, w)
        } else {
            self.gemm_input_grad(gy, batch, w)
        }
    }

    fn weight_grad<T: Real>(&self, x: &[T], gy: &[T], batch: usize) -> Vec<T> {
        if self.pointwise() {
            self.pointwise_weight_grad(x, gy, batch)
        } else if self.prefer_direct() {
            self.direct_weight_grad(x, gy, batch)
        } else {
            self.gemm_weight_grad(x, gy, batch)
        }
    }

    /// 1³ kernels: whole-plane multiply-adds.
    fn pointwise_forward<T: Real>(&self, x: &[T], batch: usize, w: &[T]) -> Vec<T> {
        let n = self.n_out();
        let mut y = vec![T::zero(); batch * self.co * n];
        for b in 0..batch {
            for co in 0..self.co {
                let dst = &mut y[(b * self.co + co) * n..][..n];
                for ci in 0..self.ci {
                    let wv = w[co * self.ci + ci];
                    for (d, &v) in dst.iter_mut().zip(&x[(b * self.ci + ci) * n..][..n]) {
                        *d += wv * v;
                    }
                }
            }
        }
        y
    }

    fn pointwise_input_grad<T: Real>(&self, gy: &[T], batch: usize, w: &[T]) -> Vec<T> {
        let n = self.n_out();
        let mut gx = vec![T::zero(); batch * self.ci * n];
        for b in 0..batch {
            for ci in 0..self.ci {
                let dst = &mut gx[(b * self.ci + ci) * n..][..n];
                for co in 0..self.co {
                    let wv = w[co * self.ci + ci];
                    for (d, &v) in dst.iter_mut().zip(&gy[(b * self.co + co) * n..][..n]) {
                        *d += wv * v;
                    }
                }
            }
        }
        gx
    }

    fn pointwise_weight_grad<T: Real>(&self, x: &[T], gy: &[T], batch: usize) -> Vec<T> {
        let n = self.n_out();
        let mut gw = vec![T::zero(); self.co * self.ci];
        for b in 0..batch {
            for co in 0..self.co {
                let g = &gy[(b * self.co + co) * n..][..n];
                for ci in 0..self.ci {
                    gw[co * self.ci + ci] += dot(g, &x[(b * self.ci + ci) * n..][..n]);
                }
            }
        }
        gw
    }

    /// Per z-tap: the valid output range `[lo, hi)` and the input index read
    /// at `lo`; consecutive outputs step by the z stride.
    fn z_runs(&self, tables: &[Vec<isize>; 3]) -> Vec<(usize, usize, usize)> {
        let oz = self.output[2];
        (0..self.kernel[2])
            .map(|cz| {
                let t = &tables[2][cz * oz..(cz + 1) * oz];
                match t.iter().position(|&i| i >= 0) {
                    Some(lo) => {
                        let hi = lo + t[lo..].iter().take_while(|&&i| i >= 0).count();
                        (lo, hi, t[lo] as usize)
                    }
                    None => (0, 0, 0),
                }
            })
            .collect()
    }

    fn direct_forward<T: Real>(&self, x: &[T], batch: usize, w: &[T]) -> Vec<T> {
        let [kx, ky, kz] = self.kernel;
        let [ox, oy, oz] = self.output;
        let [_, ny, nz] = self.input;
        let (n_in, n_out, taps) = (self.n_in(), self.n_out(), kx * ky * kz);
        let tables = self.tap_tables();
        let runs = self.z_runs(&tables);
        let s = self.spec.stride[2];
        let mut y = vec![T::zero(); batch * self.co * n_out];
        for b in 0..batch {
            for co in 0..self.co {
                let yc = &mut y[(b * self.co + co) * n_out..][..n_out];
                for i in 0..ox {
                    for j in 0..oy {
                        let line = &mut yc[(i * oy + j) * oz..][..oz];
                        for ci in 0..self.ci {
                            let xc = &x[(b * self.ci + ci) * n_in..][..n_in];
                            let wk = &w[(co * self.ci + ci) * taps..][..taps];
                            for a in 0..kx {
                                let ix = tables[0][a * ox + i];
                                if ix < 0 {
                                    continue;
                                }
                                for bb in 0..ky {
                                    let iy = tables[1][bb * oy + j];
                                    if iy < 0 {
                                        continue;
                                    }
                                    let src = &xc[(ix as usize * ny + iy as usize) * nz..][..nz];
                                    for (cz, &(lo, hi, i0)) in runs.iter().enumerate() {
                                        let wv = wk[(a * ky + bb) * kz + cz];
                                        let dst = &mut line[lo..hi];
                                        if s == 1 {
                                            for (d, &v) in dst.iter_mut().zip(&src[i0..i0 + (hi - lo)]) {
                                                *d += wv * v;
                                            }
                                        } else {
                                            for (d, &v) in dst.iter_mut().zip(src[i0..].iter().step_by(s)) {
                                                *d += wv * v;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn direct_input_grad<T: Real>(&self, gy: &[T], batch: usize, w: &[T]) -> Vec<T> {
        let [kx, ky, kz] = self.kernel;
        let [ox, oy, oz] = self.output;
        let [_, ny, nz] = self.input;
        let (n_in, n_out, taps) = (self.n_in(), self.n_out(), kx * ky * kz);
        let tables = self.tap_tables();
        let runs = self.z_runs(&tables);
        let s = self.spec.stride[2];
        let mut gx = vec![T::zero(); batch * self.ci * n_in];
        for b in 0..batch {
            for ci in 0..self.ci {
                let gc = &mut gx[(b * self.ci + ci) * n_in..][..n_in];
                for i in 0..ox {
                    for j in 0..oy {
                        for co in 0..self.co {
                            let line = &gy[(b * self.co + co) * n_out + (i * oy + j) * oz..][..oz];
                            let wk = &w[(co * self.ci + ci) * taps..][..taps];
                            for a in 0..kx {
                                let ix = tables[0][a * ox + i];
                                if ix < 0 {
                                    continue;
                                }
                                for bb in 0..ky {
                                    let iy = tables[1][bb * oy + j];
                                    if iy < 0 {
                                        continue;
                                    }
                                    let dst = &mut gc[(ix as usize * ny + iy as usize) * nz..][..nz];
                                    for (cz, &(lo, hi, i0)) in runs.iter().enumerate() {
                                        let wv = wk[(a * ky + bb) * kz + cz];
                                        let src = &line[lo..hi];
                                        if s == 1 {
                                            for (d, &v) in dst[i0..i0 + (hi - lo)].iter_mut().zip(src) {
                                                *d += wv * v;
                                            }
                                        } else {
                                            for (d, &v) in dst[i0..].iter_mut().step_by(s).zip(src) {
                                                *d += wv * v;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    fn direct_weight_grad<T: Real>(&self, x: &[T], gy: &[T], batch: usize) -> Vec<T> {
        let [kx, ky, kz] = self.kernel;
        let [ox, oy, oz] = self.output;
        let [_, ny, nz] = self.input;
        let (n_in, n_out, taps) = (self.n_in(), self.n_out(), kx * ky * kz);
        let tables = self.tap_tables();
        let runs = self.z_runs(&tables);
        let s = self.spec.stride[2];
        let mut gw = vec![T::zero(); self.co * self.ci * taps];
        for b in 0..batch {
            for co in 0..self.co {
                for ci in 0..self.ci {
                    let xc = &x[(b * self.ci + ci) * n_in..][..n_in];
                    let acc = &mut gw[(co * self.ci + ci) * taps..][..taps];
                    for i in 0..ox {
                        for j in 0..oy {
                            let line = &gy[(b * self.co + co) * n_out + (i * oy + j) * oz..][..oz];
                            for a in 0..kx {
                                let ix = tables[0][a * ox + i];
                                if ix < 0 {
                                    continue;
                                }
                                for bb in 0..ky {
                                    let iy = tables[1][bb * oy + j];
                                    if iy < 0 {
                                        continue;
                                    }
                                    let src = &xc[(ix as usize * ny + iy as usize) * nz..][..nz];
                                    for (cz, &(lo, hi, i0)) in runs.iter().enumerate() {
                                        let g = &line[lo..hi];
                                        let dot = if s == 1 {
                                            dot(g, &src[i0..i0 + (hi - lo)])
                                        } else {
                                            g.iter().zip(src[i0..].iter().step_by(s)).fold(T::zero(), |a, (&u, &v)| a + u * v)
                                        };
                                        acc[(a * ky + bb) * kz + cz] += dot;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        gw
    }

    /// `y[b] = W · col(x[b])`
    fn gemm_forward<T: Real>(&self, x: &[T], batch: usize, w: &[T]) -> Vec<T> {
        let (k, n_in, n_out) = (self.k(), self.n_in(), self.n_out());
        let mut y = vec![T::zero(); batch * self.co * n_out];
        let tables = self.tap_tables();
        let mut col = if self.pointwise() { Vec::new() } else { vec![T::zero(); k * n_out] };
        for b in 0..batch {
            let xb = &x[b * self.ci * n_in..(b + 1) * self.ci * n_in];
            let cols: &[T] = if self.pointwise() {
                xb
            } else {
                self.im2col(xb, &mut col, &tables);
                &col
            };
            let yb = &mut y[b * self.co * n_out..(b + 1) * self.co * n_out];
            gemm(self.co, k, n_out, w, Strides(k, 1), cols, Strides(n_out, 1), T::zero(), yb, Strides(n_out, 1));
        }
        y
    }

    /// `gx[b] = col2im(Wᵀ · gy[b])`
    fn gemm_input_grad<T: Real>(&self, gy: &[T], batch: usize, w: &[T]) -> Vec<T> {
        let (k, n_in, n_out) = (self.k(), self.n_in(), self.n_out());
        let mut gx = vec![T::zero(); batch * self.ci * n_in];
        let tables = self.tap_tables();
        let mut col = if self.pointwise() { Vec::new() } else { vec![T::zero(); k * n_out] };
        for b in 0..batch {
            let gyb = &gy[b * self.co * n_out..(b + 1) * self.co * n_out];
            let gxb = &mut gx[b * self.ci * n_in..(b + 1) * self.ci * n_in];
            if self.pointwise() {
                gemm(k, self.co, n_out, w, Strides(1, k), gyb, Strides(n_out, 1), T::zero(), gxb, Strides(n_out, 1));
            } else {
                gemm(k, self.co, n_out, w, Strides(1, k), gyb, Strides(n_out, 1), T::zero(), &mut col, Strides(n_out, 1));
                self.col2im(&col, gxb, &tables);
            }
        }
        gx
    }

    /// `gw = Σ_b gy[b] · col(x[b])ᵀ`
    fn gemm_weight_grad<T: Real>(&self, x: &[T], gy: &[T], batch: usize) -> Vec<T> {
        let (k, n_in, n_out) = (self.k(), self.n_in(), self.n_out());
        let mut gw = vec![T::zero(); self.co * k];
        let tables = self.tap_tables();
        let mut col = if self.pointwise() { Vec::new() } else { vec![T::zero(); k * n_out] };
        for b in 0..batch {
            let xb = &x[b * self.ci * n_in..(b + 1) * self.ci * n_in];
            let cols: &[T] = if self.pointwise() {
                xb
            } else {
                self.im2col(xb, &mut col, &tables);
                &col
            };
            let gyb = &gy[b * self.co * n_out..(b + 1) * self.co * n_out];
            gemm(self.co, n_out, k, gyb, Strides(n_out, 1), cols, Strides(1, n_out), T::one(), &mut gw, Strides(k, 1));
        }
        gw
    }
}

fn check_kernel(w: &[usize; 5], input_channels: usize, which: &str) -> Result<()> {
    if w[1] != input_channels {
        return Err(Error::shape(
            "channel",
            format!("{which} input has {input_channels} channels, weight expects {}", w[1]),
        ));
    }
    Ok(())
}

fn check_bias<T>(bias: Option<&[T]>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => {
            Err(Error::shape("channel", format!("bias has {} entries for {channels} output channels", b.len())))
        }
        _ => Ok(()),
    }
}

fn conv_geometry(x: [usize; 5], w: [usize; 5], spec: ConvSpec) -> Result<Geometry> {
    check_kernel(&w, x[1], "conv3d")?;
    let mut output = [0; 3];
    for a in 0..3 {
        output[a] = conv_out_extent(x[2 + a], w[2 + a], spec.stride[a], spec.dilation[a], spec.padding[a])
            .ok_or_else(|| {
                Error::shape(
                    AXES[a],
                    format!(
                        "input extent {} with padding {} is smaller than the dilated kernel span {}",
                        x[2 + a],
                        spec.padding[a],
                        spec.dilation[a] * (w[2 + a] - 1) + 1
                    ),
                )
            })?;
    }
    Ok(Geometry { ci: x[1], co: w[0], input: [x[2], x[3], x[4]], output, kernel: [w[2], w[3], w[4]], spec })
}

fn add_bias<T: Real>(y: &mut [T], bias: &[T], per_channel: usize) {
    for (chunk, c) in y.chunks_mut(per_channel).zip((0..bias.len()).cycle()) {
        chunk.iter_mut().for_each(|v| *v += bias[c]);
    }
}

fn bias_grad<T: Real>(gy: &Tensor<T>) -> Vec<T> {
    let c = gy.shape()[1];
    let mut gb = vec![T::zero(); c];
    for (chunk, ch) in gy.data().chunks(gy.spatial_len()).zip((0..c).cycle()) {
        gb[ch] += chunk.iter().copied().sum();
    }
    gb
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_bias: Option<Vec<T>>,
}

/// Cross-correlation: `x (b, ci, X, Y, Z)`, `w (co, ci, kx, ky, kz)`.
pub fn conv3d_fwd<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&[T]>, spec: ConvSpec) -> Result<Tensor<T>> {
    let g = conv_geometry(x.dims5()?, w.dims5()?, spec)?;
    check_bias(bias, g.co)?;
    let batch = x.shape()[0];
    let mut y = g.forward(x.data(), batch, w.data());
    if let Some(b) = bias {
        add_bias(&mut y, b, g.n_out());
    }
    let [ox, oy, oz] = g.output;
    Tensor::from_vec(&[batch, g.co, ox, oy, oz], y)
}

pub fn conv3d_bwd<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    spec: ConvSpec,
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(x.dims5()?, w.dims5()?, spec)?;
    let [ox, oy, oz] = g.output;
    let batch = x.shape()[0];
    if grad_out.shape() != [batch, g.co, ox, oy, oz] {
        return Err(Error::shape("grad_out", format!("expected {:?}, got {:?}", [batch, g.co, ox, oy, oz], grad_out.shape())));
    }
    let grad_x = Tensor::from_vec(x.shape(), g.input_grad(grad_out.data(), batch, w.data()))?;
    let grad_w = Tensor::from_vec(w.shape(), g.weight_grad(x.data(), grad_out.data(), batch))?;
    Ok(ConvGrads { grad_x, grad_w, grad_bias: with_bias.then(|| bias_grad(grad_out)) })
}

fn transpose_geometry(x: [usize; 5], w: [usize; 5], spec: ConvSpec) -> Result<Geometry> {
    if w[0] != x[1] {
        return Err(Error::shape(
            "channel",
            format!("conv_transpose3d input has {} channels, weight expects {}", x[1], w[0]),
        ));
    }
    let mut big = [0; 3];
    for a in 0..3 {
        big[a] = conv_transpose_out_extent(x[2 + a], w[2 + a], spec.stride[a], spec.dilation[a], spec.padding[a])
            .ok_or_else(|| Error::shape(AXES[a], "padding exceeds transposed output extent"))?;
    }
    Ok(Geometry { ci: w[1], co: w[0], input: big, output: [x[2], x[3], x[4]], kernel: [w[2], w[3], w[4]], spec })
}

/// Transposed convolution (adjoint of [`conv3d_fwd`]): `x (b, ci, ...)`,
/// `w (ci, co, kx, ky, kz)`.
pub fn conv_transpose3d_fwd<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&[T]>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = transpose_geometry(x.dims5()?, w.dims5()?, spec)?;
    check_bias(bias, g.ci)?;
    let batch = x.shape()[0];
    let mut y = g.input_grad(x.data(), batch, w.data());
    if let Some(b) = bias {
        add_bias(&mut y, b, g.n_in());
    }
    let [bx, by, bz] = g.input;
    Tensor::from_vec(&[batch, g.ci, bx, by, bz], y)
}

pub fn conv_transpose3d_bwd<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    spec: ConvSpec,
) -> Result<ConvGrads<T>> {
    let g = transpose_geometry(x.dims5()?, w.dims5()?, spec)?;
    let batch = x.shape()[0];
    let [bx, by, bz] = g.input;
    if grad_out.shape() != [batch, g.ci, bx, by, bz] {
        return Err(Error::shape("grad_out", format!("expected {:?}, got {:?}", [batch, g.ci, bx, by, bz], grad_out.shape())));
    }
    let grad_x = Tensor::from_vec(x.shape(), g.forward(grad_out.data(), batch, w.data()))?;
    let grad_w = Tensor::from_vec(w.shape(), g.weight_grad(grad_out.data(), x.data(), batch))?;
    Ok(ConvGrads { grad_x, grad_w, grad_bias: with_bias.then(|| bias_grad(grad_out)) })
}
