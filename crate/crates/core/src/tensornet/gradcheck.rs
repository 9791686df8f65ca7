//! Central-difference verification of analytic backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Ctx, Layer};
use super::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps near-zero components from
/// dominating.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: usize,
    pub passed: bool,
}

/// Central difference of a scalar function of a flat vector at `indices`,
/// compared against `analytic`. Returns the worst relative error.
pub fn check_scalar_fn(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
) -> f64 {
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for &i in indices {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_error(analytic[i], (up - down) / (2.0 * step)));
    }
    worst
}

fn param_count(layer: &dyn Layer<f64>) -> Vec<usize> {
    let mut sizes = Vec::new();
    layer.visit(&mut |p| sizes.push(p.value.len()));
    sizes
}

fn nudge(layer: &mut dyn Layer<f64>, which: usize, elem: usize, to: f64) {
    let mut i = 0;
    layer.visit_mut(&mut |p| {
        if i == which {
            p.value.data_mut()[elem] = to;
        }
        i += 1;
    });
}

fn param_value(layer: &dyn Layer<f64>, which: usize, elem: usize) -> f64 {
    let (mut i, mut v) = (0, 0.0);
    layer.visit(&mut |p| {
        if i == which {
            v = p.value.data()[elem];
        }
        i += 1;
    });
    v
}

fn param_grad(layer: &dyn Layer<f64>, which: usize, elem: usize) -> f64 {
    let (mut i, mut v) = (0, 0.0);
    layer.visit(&mut |p| {
        if i == which {
            v = p.grad.data()[elem];
        }
        i += 1;
    });
    v
}

/// Checks a layer's input and parameter gradients against central
/// differences of `L = Σ r ⊙ layer(x)` for a fixed random `r`, probing up to
/// `probes` input entries and `probes` parameter entries. Runs with dropout
/// disabled.
pub fn grad_check(
    layer: &mut dyn Layer<f64>,
    input: &Tensor<f64>,
    tolerance: f64,
    probes: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    let y = layer.forward(input, &mut Ctx { train: false, record: true, rng: &mut scratch })?;
    let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let upstream = Tensor::from_vec(y.shape(), r.clone())?;
    layer.visit_mut(&mut |p| p.zero_grad());
    let gx = layer.backward(&upstream)?;

    let mut loss = |layer: &mut dyn Layer<f64>, x: &Tensor<f64>| -> Result<f64> {
        let y = layer.forward(x, &mut Ctx { train: false, record: false, rng: &mut scratch })?;
        Ok(y.data().iter().zip(&r).map(|(a, b)| a * b).sum())
    };

    let mut worst = 0.0f64;
    let mut count = 0;
    let mut x = input.clone();
    for _ in 0..probes.min(input.len()) {
        let i = rng.random_range(0..input.len());
        let orig = x.data()[i];
        x.data_mut()[i] = orig + DEFAULT_STEP;
        let up = loss(layer, &x)?;
        x.data_mut()[i] = orig - DEFAULT_STEP;
        let down = loss(layer, &x)?;
        x.data_mut()[i] = orig;
        worst = worst.max(rel_error(gx.data()[i], (up - down) / (2.0 * DEFAULT_STEP)));
        count += 1;
    }

    let sizes = param_count(layer);
    let total: usize = sizes.iter().sum();
    for _ in 0..probes.min(total) {
        let mut flat = rng.random_range(0..total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let orig = param_value(layer, which, flat);
        let analytic = param_grad(layer, which, flat);
        nudge(layer, which, flat, orig + DEFAULT_STEP);
        let up = loss(layer, input)?;
        nudge(layer, which, flat, orig - DEFAULT_STEP);
        let down = loss(layer, input)?;
        nudge(layer, which, flat, orig);
        worst = worst.max(rel_error(analytic, (up - down) / (2.0 * DEFAULT_STEP)));
        count += 1;
    }
    Ok(GradCheckReport { max_rel_error: worst, probes: count, passed: worst <= tolerance })
}
