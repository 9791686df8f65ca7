use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Mean over voxels of `-log softmax(logits)[label]`, with its gradient.
/// `labels` holds one class index per `(batch, voxel)`.
pub fn softmax_xent_loss<T: Real>(logits: &Tensor<T>, labels: &[u8]) -> Result<(f64, Tensor<T>)> {
    let [b, c, ..] = logits.dims5()?;
    let s = logits.spatial_len();
    if labels.len() != b * s {
        return Err(Error::shape("labels", format!("{} labels for {} voxels", labels.len(), b * s)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(Error::LabelOutOfRange { label: bad as usize, classes: c });
    }
    let n = (b * s) as f64;
    let inv_n = T::lit(1.0 / n);
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0f64;
    let x = logits.data();
    let g = grad.data_mut();
    let mut probs = vec![0f64; c];
    for bi in 0..b {
        let base = bi * c * s;
        for v in 0..s {
            let at = |ch: usize| base + ch * s + v;
            let max = (0..c).map(|ch| x[at(ch)].f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (ch, p) in probs.iter_mut().enumerate() {
                *p = (x[at(ch)].f64() - max).exp();
                z += *p;
            }
            let label = labels[bi * s + v] as usize;
            total += -((x[at(label)].f64() - max) - z.ln());
            for (ch, p) in probs.iter().enumerate() {
                let onehot = if ch == label { 1.0 } else { 0.0 };
                g[at(ch)] = T::lit(p / z - onehot) * inv_n;
            }
        }
    }
    Ok((total / n, grad))
}

/// Squared error over the unmasked channels, normalized by
/// `unmasked channels × voxels per channel`. `mask` holds one flag per
/// `(batch, channel)`, or one per channel shared across the batch. Masked
/// channels get exactly zero gradient; with every channel masked the loss is 0.
pub fn masked_l2_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, mask: &[bool]) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("target", format!("pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let [b, c, ..] = pred.dims5()?;
    let flag = |bi: usize, ch: usize| -> bool {
        if mask.len() == c {
            mask[ch]
        } else {
            mask[bi * c + ch]
        }
    };
    if mask.len() != c && mask.len() != b * c {
        return Err(Error::shape("mask", format!("{} flags for {b}×{c} channels", mask.len())));
    }
    let s = pred.spatial_len();
    let active = (0..b).flat_map(|bi| (0..c).map(move |ch| (bi, ch))).filter(|&(bi, ch)| flag(bi, ch)).count();
    let mut grad = Tensor::zeros(pred.shape());
    if active == 0 {
        return Ok((0.0, grad));
    }
    let denom = (active * s) as f64;
    let scale = T::lit(2.0 / denom);
    let mut total = 0.0f64;
    for bi in 0..b {
        for ch in 0..c {
            if !flag(bi, ch) {
                continue;
            }
            let (p, t) = (pred.channel(bi, ch), target.channel(bi, ch));
            let g = grad.channel_mut(bi, ch);
            for ((gv, &pv), &tv) in g.iter_mut().zip(p).zip(t) {
                let d = pv - tv;
                total += d.f64() * d.f64();
                *gv = d * scale;
            }
        }
    }
    Ok((total / denom, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::conv::tests::random_tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xent_uniform_and_confident() {
        let logits = Tensor::<f64>::zeros(&[1, 2, 2, 2, 2]);
        let (l, _) = softmax_xent_loss(&logits, &[0, 1, 0, 1, 1, 1, 0, 0]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let mut strong = Tensor::<f64>::zeros(&[1, 2, 1, 1, 1]);
        strong.data_mut()[1] = 40.0;
        let (l, _) = softmax_xent_loss(&strong, &[1]).unwrap();
        assert!(l < 1e-15);
        assert!(matches!(softmax_xent_loss(&strong, &[2]), Err(Error::LabelOutOfRange { label: 2, classes: 2 })));
    }

    #[test]
    fn xent_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = random_tensor(&[2, 3, 2, 1, 2], &mut rng);
        let labels: Vec<u8> = (0..8).map(|_| rng.random_range(0..3)).collect();
        let (l, _) = softmax_xent_loss(&logits, &labels).unwrap();
        let mut oracle = 0.0;
        for b in 0..2 {
            for v in 0..4 {
                let z: f64 = (0..3).map(|c| logits.data()[(b * 3 + c) * 4 + v].exp()).sum();
                let lab = labels[b * 4 + v] as usize;
                oracle += -(logits.data()[(b * 3 + lab) * 4 + v].exp() / z).ln();
            }
        }
        assert!((l - oracle / 8.0).abs() < 1e-12);
    }

    #[test]
    fn l2_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_tensor(&[1, 6, 2, 2, 2], &mut rng);
        assert_eq!(masked_l2_loss(&p, &p, &[true; 6]).unwrap().0, 0.0);
        let (l, g) = masked_l2_loss(&p, &random_tensor(&[1, 6, 2, 2, 2], &mut rng), &[false; 6]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let t = p.map(|v| v - 0.75);
        let mask = [false, false, true, false, false, false];
        let (l, g) = masked_l2_loss(&p, &t, &mask).unwrap();
        assert!((l - 0.5625).abs() < 1e-15);
        for ch in 0..6 {
            assert!(g.channel(0, ch).iter().all(|&v| (v != 0.0) == (ch == 2)));
        }
    }
}
