use super::{Real, Tensor};

/// `max(x, 0) + slope_c · min(x, 0)` with one slope per channel. ReLU is a
/// zero slope; a slope of one is the identity.
pub fn prelu_fwd<T: Real>(x: &Tensor<T>, slopes: &[T]) -> Tensor<T> {
    let mut y = x.clone();
    let c = slopes.len();
    let s = x.spatial_len();
    for (chunk, ch) in y.data_mut().chunks_mut(s).zip((0..c).cycle()) {
        let a = slopes[ch];
        chunk.iter_mut().for_each(|v| {
            if *v < T::zero() {
                *v *= a
            }
        });
    }
    y
}

/// Returns `(grad_x, grad_slopes)`.
pub fn prelu_bwd<T: Real>(grad_out: &Tensor<T>, x: &Tensor<T>, slopes: &[T]) -> (Tensor<T>, Vec<T>) {
    let c = slopes.len();
    let s = x.spatial_len();
    let mut gx = grad_out.clone();
    let mut gs = vec![T::zero(); c];
    for ((g, xin), ch) in gx.data_mut().chunks_mut(s).zip(x.data().chunks(s)).zip((0..c).cycle()) {
        let a = slopes[ch];
        let mut acc = T::zero();
        for (gv, &xv) in g.iter_mut().zip(xin) {
            if xv < T::zero() {
                acc += *gv * xv;
                *gv *= a;
            }
        }
        gs[ch] += acc;
    }
    (gx, gs)
}
