//! A 3D ENet: early downsampling, a long dilated/asymmetric middle section and
//! a short expanding path back to input resolution.
//!
//! Layout for `f = initial_filters` and stage widths `f, m1·f, m2·f`:
//!
//! | stage | blocks | output |
//! |---|---|---|
//! | initial | strided 3³ conv (f−1 ch) ‖ 2³ pool of the input | f @ ½ |
//! | 1 | downsample + `n_stage1_bottlenecks` regular | m1·f @ ¼ |
//! | 2 | downsample + `n_stage2_repeats` × [reg, dil 2, asym, dil 4, reg, dil 8, asym, dil 8] | m2·f @ ⅛ |
//! | 4 | upsample + 2 regular | m1·f @ ¼ |
//! | 5 | upsample + 1 regular | f @ ½ |
//! | head | 2³ stride-2 transposed conv | out_channels @ 1 |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugConfig;
use crate::error::{Error, Result};
use crate::tensornet::{
    avg_pool3d_bwd, pool3d, unpool3d, unpool3d_bwd, AdamConfig, ChannelAffine, Conv3d, ConvSpec, ConvTranspose3d, Ctx,
    Dropout, Layer, PRelu, Param, PoolKind, Real, Tensor,
};

/// Every architecture and training knob explored by the hyperparameter search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub initial_filters: usize,
    /// Odd extent `n` of the 1×1×n / 1×n×1 / n×1×1 convolutions.
    pub asym_kernel: usize,
    pub n_stage1_bottlenecks: usize,
    pub n_stage2_repeats: usize,
    pub pool_kind: PoolKind,
    /// Bottleneck internal width is `max(in, out) / projection_scale`.
    pub projection_scale: usize,
    /// Stage 1 uses a tenth of this.
    pub dropout: f64,
    pub lr: f64,
    pub out_channels: usize,
    /// Width multipliers of stages 1 and 2 relative to `initial_filters`.
    pub stage_multipliers: [usize; 2],
    /// Initializer seed.
    pub seed: u64,
    pub aug: AugConfig,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            initial_filters: 8,
            asym_kernel: 5,
            n_stage1_bottlenecks: 2,
            n_stage2_repeats: 1,
            pool_kind: PoolKind::Max,
            projection_scale: 4,
            dropout: 0.1,
            lr: 3e-3,
            out_channels: 6,
            stage_multipliers: [4, 8],
            seed: 0,
            aug: AugConfig::default(),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_filters < 1 {
            return Err(Error::config("initial_filters", "must be ≥ 1"));
        }
        if self.asym_kernel < 3 || self.asym_kernel.is_multiple_of(2) {
            return Err(Error::config("asym_kernel", format!("must be odd and ≥ 3, got {}", self.asym_kernel)));
        }
        if self.projection_scale < 1 {
            return Err(Error::config("projection_scale", "must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", format!("must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("must be positive, got {}", self.lr)));
        }
        if self.out_channels < 1 {
            return Err(Error::config("out_channels", "must be ≥ 1"));
        }
        if self.stage_multipliers.iter().any(|&m| m < 1) || self.stage_multipliers[0] > self.stage_multipliers[1] {
            return Err(Error::config("stage_multipliers", "must satisfy 1 ≤ m1 ≤ m2"));
        }
        self.aug.validate()
    }

    pub fn stage_channels(&self) -> [usize; 3] {
        let f = self.initial_filters;
        [f, f * self.stage_multipliers[0], f * self.stage_multipliers[1]]
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BottleneckKind {
    Regular,
    Dilated(usize),
    Asymmetric(usize),
    Downsample,
    Upsample,
}

/// A chain of layers run in order.
struct Sequential<T> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Real + 'static> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, ctx)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.layers.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }
}

enum Skip<T> {
    Identity,
    /// Pool, then zero-pad channels up to the block width.
    Pool { kind: PoolKind, in_c: usize },
    /// 1³ conv + affine, then max-unpool with the paired downsample's indices.
    Unpool { conv: Conv3d<T>, aff: ChannelAffine<T> },
    /// 2³ stride-2 transposed conv + affine.
    Transposed { conv: ConvTranspose3d<T>, aff: ChannelAffine<T> },
}

/// A residual block: 1³ projection, main conv, 1³ expansion, dropout, added
/// to the skip path and passed through a PReLU.
pub struct Bottleneck<T> {
    pub kind: BottleneckKind,
    label: String,
    trace: String,
    in_c: usize,
    out_c: usize,
    main: Sequential<T>,
    skip: Skip<T>,
    act: PRelu<T>,
    /// Argmax positions of the last max-pooling skip pass.
    indices: Option<Vec<usize>>,
    /// Indices used by the last unpooling pass, with the unpooled input shape.
    unpool_cache: Option<(Vec<usize>, Vec<usize>)>,
    in_shape: Vec<usize>,
}

impl<T: Real + 'static> Bottleneck<T> {
    pub fn new(
        label: &str,
        kind: BottleneckKind,
        in_c: usize,
        out_c: usize,
        cfg: &NetConfig,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let wide = in_c.max(out_c);
        if !wide.is_multiple_of(cfg.projection_scale) {
            return Err(Error::config(
                "projection_scale",
                format!("{label}: {wide} channels not divisible by {}", cfg.projection_scale),
            ));
        }
        let mid = wide / cfg.projection_scale;
        if matches!(kind, BottleneckKind::Regular | BottleneckKind::Dilated(_) | BottleneckKind::Asymmetric(_))
            && in_c != out_c
        {
            return Err(Error::config("stage_multipliers", format!("{label}: a {kind:?} block cannot change width")));
        }
        if kind == BottleneckKind::Downsample && out_c < in_c {
            return Err(Error::config("stage_multipliers", format!("{label}: downsampling cannot narrow")));
        }
        let name = |s: &str| format!("{label}.{s}");
        let mut layers: Vec<Box<dyn Layer<T>>> = vec![
            Box::new(Conv3d::new(&name("proj"), in_c, mid, [1; 3], ConvSpec::default(), false, rng)),
            Box::new(ChannelAffine::new(&name("proj_norm"), mid)),
            Box::new(PRelu::new(&name("proj_act"), mid, 0.25)),
        ];
        let main_desc = match kind {
            BottleneckKind::Regular | BottleneckKind::Dilated(_) => {
                let d = if let BottleneckKind::Dilated(d) = kind { d } else { 1 };
                let spec = ConvSpec::same([3; 3], [d; 3]);
                layers.push(Box::new(Conv3d::new(&name("main"), mid, mid, [3; 3], spec, true, rng)));
                if d == 1 { "3x3x3".to_string() } else { format!("3x3x3 dil{d}") }
            }
            BottleneckKind::Asymmetric(n) => {
                for (i, k) in [[1, 1, n], [1, n, 1], [n, 1, 1]].into_iter().enumerate() {
                    let spec = ConvSpec::same(k, [1; 3]);
                    layers.push(Box::new(Conv3d::new(&name(&format!("main{i}")), mid, mid, k, spec, i == 2, rng)));
                }
                format!("1x1x{n}|1x{n}x1|{n}x1x1")
            }
            BottleneckKind::Downsample => {
                layers.push(Box::new(Conv3d::new(&name("main"), mid, mid, [3; 3], ConvSpec::strided(2, 1), true, rng)));
                "3x3x3/s2".to_string()
            }
            BottleneckKind::Upsample => {
                let spec = ConvSpec::strided(2, 0);
                layers.push(Box::new(ConvTranspose3d::new(&name("main"), mid, mid, [2; 3], spec, true, rng)));
                "convT 2x2x2/s2".to_string()
            }
        };
        layers.push(Box::new(ChannelAffine::new(&name("main_norm"), mid)));
        layers.push(Box::new(PRelu::new(&name("main_act"), mid, 0.25)));
        layers.push(Box::new(Conv3d::new(&name("expand"), mid, out_c, [1; 3], ConvSpec::default(), false, rng)));
        layers.push(Box::new(ChannelAffine::new(&name("expand_norm"), out_c)));
        layers.push(Box::new(Dropout::new(dropout)));

        let (skip, skip_desc) = match kind {
            BottleneckKind::Downsample => (Skip::Pool { kind: cfg.pool_kind, in_c }, format!("{:?}pool+pad", cfg.pool_kind)),
            BottleneckKind::Upsample => match cfg.pool_kind {
                PoolKind::Max => (
                    Skip::Unpool {
                        conv: Conv3d::new(&name("skip"), in_c, out_c, [1; 3], ConvSpec::default(), false, rng),
                        aff: ChannelAffine::new(&name("skip_norm"), out_c),
                    },
                    "1x1x1+unpool".to_string(),
                ),
                PoolKind::Avg => (
                    Skip::Transposed {
                        conv: ConvTranspose3d::new(&name("skip"), in_c, out_c, [2; 3], ConvSpec::strided(2, 0), false, rng),
                        aff: ChannelAffine::new(&name("skip_norm"), out_c),
                    },
                    "convT 2x2x2/s2".to_string(),
                ),
            },
            _ => (Skip::Identity, "identity".to_string()),
        };
        let trace = format!("{label} {kind:?} {in_c}->{mid}->{out_c} main[{main_desc}] skip[{skip_desc}] drop {dropout}");
        Ok(Bottleneck {
            kind,
            label: label.to_string(),
            trace,
            in_c,
            out_c,
            main: Sequential { layers },
            skip,
            act: PRelu::new(&name("out_act"), out_c, 0.25),
            indices: None,
            unpool_cache: None,
            in_shape: Vec::new(),
        })
    }

    /// `pair` supplies the pooling indices of the matching downsample block
    /// for max-unpooling upsample blocks.
    pub fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx, pair: Option<&[usize]>) -> Result<Tensor<T>> {
        let [b, c, nx, ny, nz] = x.dims5()?;
        if c != self.in_c {
            return Err(Error::shape("channel", format!("{}: expected {} channels, got {c}", self.label, self.in_c)));
        }
        self.in_shape = x.shape().to_vec();
        let mut h = self.main.forward(x, ctx)?;
        let skip = match &mut self.skip {
            Skip::Identity => x.clone(),
            Skip::Pool { kind, in_c } => {
                let pooled = pool3d(x, *kind, 2)?;
                self.indices = pooled.indices;
                let pad = self.out_c - *in_c;
                if pad == 0 {
                    pooled.output
                } else {
                    let zeros = Tensor::zeros(&[b, pad, nx / 2, ny / 2, nz / 2]);
                    Tensor::concat_channels(&[&pooled.output, &zeros])?
                }
            }
            Skip::Unpool { conv, aff } => {
                let idx = pair.ok_or_else(|| {
                    Error::shape("indices", format!("{}: unpooling needs the paired downsample indices", self.label))
                })?;
                let s = aff.forward(&conv.forward(x, ctx)?, ctx)?;
                let out = unpool3d(&s, idx, &[b, self.out_c, nx * 2, ny * 2, nz * 2])?;
                self.unpool_cache = ctx.record.then(|| (idx.to_vec(), s.shape().to_vec()));
                out
            }
            Skip::Transposed { conv, aff } => aff.forward(&conv.forward(x, ctx)?, ctx)?,
        };
        if h.shape() != skip.shape() {
            return Err(Error::shape("spatial", format!("{}: main {:?} vs skip {:?}", self.label, h.shape(), skip.shape())));
        }
        h.add_assign(&skip);
        self.act.forward(&h, ctx)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.act.backward(grad)?;
        let mut gx = self.main.backward(&g)?;
        let g_skip = match &mut self.skip {
            Skip::Identity => g,
            Skip::Pool { kind, in_c } => {
                let g = if self.out_c == *in_c { g } else { g.split_channels(*in_c)?.0 };
                match kind {
                    PoolKind::Max => {
                        let idx = self.indices.as_ref().ok_or_else(|| Error::shape("indices", "no pooling recorded"))?;
                        unpool3d(&g, idx, &self.in_shape)?
                    }
                    PoolKind::Avg => avg_pool3d_bwd(&g, &self.in_shape, 2)?,
                }
            }
            Skip::Unpool { conv, aff } => {
                let (idx, shape) = self
                    .unpool_cache
                    .as_ref()
                    .ok_or_else(|| Error::shape("cache", format!("{}: backward without a recorded forward", self.label)))?;
                let g = unpool3d_bwd(&g, idx, shape)?;
                conv.backward(&aff.backward(&g)?)?
            }
            Skip::Transposed { conv, aff } => conv.backward(&aff.backward(&g)?)?,
        };
        gx.add_assign(&g_skip);
        Ok(gx)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.main.visit(f);
        match &self.skip {
            Skip::Unpool { conv, aff } => {
                conv.visit(f);
                aff.visit(f);
            }
            Skip::Transposed { conv, aff } => {
                conv.visit(f);
                aff.visit(f);
            }
            _ => {}
        }
        self.act.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.main.visit_mut(f);
        match &mut self.skip {
            Skip::Unpool { conv, aff } => {
                conv.visit_mut(f);
                aff.visit_mut(f);
            }
            Skip::Transposed { conv, aff } => {
                conv.visit_mut(f);
                aff.visit_mut(f);
            }
            _ => {}
        }
        self.act.visit_mut(f);
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.value.len());
        n
    }
}

/// Strided conv concatenated with a pooled copy of the input.
struct InitialBlock<T> {
    conv: Option<Conv3d<T>>,
    kind: PoolKind,
    aff: ChannelAffine<T>,
    act: PRelu<T>,
    indices: Option<Vec<usize>>,
    in_shape: Vec<usize>,
}

impl<T: Real + 'static> InitialBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        self.in_shape = x.shape().to_vec();
        let pooled = pool3d(x, self.kind, 2)?;
        self.indices = pooled.indices;
        let h = match &mut self.conv {
            Some(conv) => Tensor::concat_channels(&[&conv.forward(x, ctx)?, &pooled.output])?,
            None => pooled.output,
        };
        let h = self.aff.forward(&h, ctx)?;
        self.act.forward(&h, ctx)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.aff.backward(&self.act.backward(grad)?)?;
        let conv_c = self.conv.as_ref().map_or(0, |c| c.out_channels());
        let (g_conv, g_pool) = if conv_c == 0 { (None, g) } else {
            let (a, b) = g.split_channels(conv_c)?;
            (Some(a), b)
        };
        let mut gx = match self.kind {
            PoolKind::Max => unpool3d(&g_pool, self.indices.as_ref().expect("max indices"), &self.in_shape)?,
            PoolKind::Avg => avg_pool3d_bwd(&g_pool, &self.in_shape, 2)?,
        };
        if let (Some(conv), Some(gc)) = (self.conv.as_mut(), g_conv) {
            gx.add_assign(&conv.backward(&gc)?);
        }
        Ok(gx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        if let Some(c) = &self.conv {
            c.visit(f);
        }
        self.aff.visit(f);
        self.act.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(c) = &mut self.conv {
            c.visit_mut(f);
        }
        self.aff.visit_mut(f);
        self.act.visit_mut(f);
    }
}

/// The assembled network. Implements [`Layer`], so the generic training,
/// gradient-check and checkpoint code applies to it directly.
pub struct Enet<T> {
    cfg: NetConfig,
    initial: InitialBlock<T>,
    blocks: Vec<Bottleneck<T>>,
    /// For each block, the index of the downsample block whose pooling
    /// indices it unpools with.
    pairs: Vec<Option<usize>>,
    /// Index of the first expanding-path block.
    expand_from: usize,
    head: ConvTranspose3d<T>,
    trace: Vec<String>,
}

/// Downsampling factor between input and the deepest features.
pub const TOTAL_STRIDE: usize = 8;

pub fn build_net<T: Real + 'static>(cfg: &NetConfig) -> Result<Enet<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let [c0, c1, c2] = cfg.stage_channels();
    let mut trace = Vec::new();

    if c0 % cfg.projection_scale != 0 {
        return Err(Error::config(
            "projection_scale",
            format!("initial_filters {c0} not divisible by projection_scale {}", cfg.projection_scale),
        ));
    }
    let conv = (c0 > 1).then(|| Conv3d::new("initial.conv", 1, c0 - 1, [3; 3], ConvSpec::strided(2, 1), false, &mut rng));
    trace.push(format!("initial conv 3x3x3/s2 1->{} ‖ {:?}pool -> {c0}", c0 - 1, cfg.pool_kind));
    let initial = InitialBlock {
        conv,
        kind: cfg.pool_kind,
        aff: ChannelAffine::new("initial.norm", c0),
        act: PRelu::new("initial.act", c0, 0.25),
        indices: None,
        in_shape: Vec::new(),
    };

    let mut blocks = Vec::new();
    let mut pairs = Vec::new();
    let mut push = |b: Bottleneck<T>, pair: Option<usize>, blocks: &mut Vec<Bottleneck<T>>| {
        trace.push(b.trace.clone());
        blocks.push(b);
        pairs.push(pair);
    };
    let p1 = cfg.dropout / 10.0;
    let p = cfg.dropout;
    let down1 = blocks.len();
    push(Bottleneck::new("s1.0", BottleneckKind::Downsample, c0, c1, cfg, p1, &mut rng)?, None, &mut blocks);
    for i in 0..cfg.n_stage1_bottlenecks {
        let b = Bottleneck::new(&format!("s1.{}", i + 1), BottleneckKind::Regular, c1, c1, cfg, p1, &mut rng)?;
        push(b, None, &mut blocks);
    }
    let down2 = blocks.len();
    push(Bottleneck::new("s2.0", BottleneckKind::Downsample, c1, c2, cfg, p, &mut rng)?, None, &mut blocks);
    let n = cfg.asym_kernel;
    let schedule = [
        BottleneckKind::Regular,
        BottleneckKind::Dilated(2),
        BottleneckKind::Asymmetric(n),
        BottleneckKind::Dilated(4),
        BottleneckKind::Regular,
        BottleneckKind::Dilated(8),
        BottleneckKind::Asymmetric(n),
        BottleneckKind::Dilated(8),
    ];
    for r in 0..cfg.n_stage2_repeats {
        for (i, kind) in schedule.iter().enumerate() {
            let b = Bottleneck::new(&format!("s{}.{}", r + 2, i + 1), *kind, c2, c2, cfg, p, &mut rng)?;
            push(b, None, &mut blocks);
        }
    }
    let expand_from = blocks.len();
    let max_pair = |d: usize| (cfg.pool_kind == PoolKind::Max).then_some(d);
    push(Bottleneck::new("s4.0", BottleneckKind::Upsample, c2, c1, cfg, p, &mut rng)?, max_pair(down2), &mut blocks);
    for i in 0..2 {
        let b = Bottleneck::new(&format!("s4.{}", i + 1), BottleneckKind::Regular, c1, c1, cfg, p, &mut rng)?;
        push(b, None, &mut blocks);
    }
    push(Bottleneck::new("s5.0", BottleneckKind::Upsample, c1, c0, cfg, p, &mut rng)?, max_pair(down1), &mut blocks);
    push(Bottleneck::new("s5.1", BottleneckKind::Regular, c0, c0, cfg, p, &mut rng)?, None, &mut blocks);

    let head = ConvTranspose3d::new("head", c0, cfg.out_channels, [2; 3], ConvSpec::strided(2, 0), true, &mut rng);
    trace.push(format!("head convT 2x2x2/s2 {c0}->{}", cfg.out_channels));
    Ok(Enet { cfg: cfg.clone(), initial, blocks, pairs, expand_from, head, trace })
}

impl<T: Real + 'static> Enet<T> {
    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// One line per block describing its structure.
    pub fn describe(&self) -> &[String] {
        &self.trace
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.value.len());
        n
    }

    /// Parameters of the initial block and stages 1–2.
    pub fn contracting_param_count(&self) -> usize {
        let mut n = 0;
        self.initial.visit(&mut |p| n += p.value.len());
        n + self.blocks[..self.expand_from].iter().map(|b| b.param_count()).sum::<usize>()
    }

    /// Parameters of stages 4–5 and the head.
    pub fn expanding_param_count(&self) -> usize {
        self.param_count() - self.contracting_param_count()
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    pub fn step(&mut self, adam: &AdamConfig) {
        self.visit_mut(&mut |p| p.step(adam));
    }

    /// Convenience wrapper: eval mode runs without dropout and without
    /// recording; train mode records for a subsequent backward pass.
    pub fn run(&mut self, x: &Tensor<T>, train_mode: bool, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        self.forward(x, &mut Ctx { train: train_mode, record: train_mode, rng })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, nx, ny, nz] = x.dims5()?;
        if c != 1 {
            return Err(Error::shape("channel", format!("network input must have 1 channel, got {c}")));
        }
        for (axis, n) in ["x", "y", "z"].into_iter().zip([nx, ny, nz]) {
            if n == 0 || n % TOTAL_STRIDE != 0 {
                return Err(Error::shape(axis, format!("extent {n} is not a positive multiple of {TOTAL_STRIDE}")));
            }
        }
        Ok(())
    }
}

impl<T: Real + 'static> Layer<T> for Enet<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.initial.forward(x, ctx)?;
        for i in 0..self.blocks.len() {
            let (done, rest) = self.blocks.split_at_mut(i);
            let pair = self.pairs[i].and_then(|d| done[d].indices.as_deref());
            h = rest[0].forward(&h, ctx, pair)?;
        }
        self.head.forward(&h, ctx)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.head.backward(grad)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        self.initial.backward(&g)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.initial.visit(f);
        self.blocks.iter().for_each(|b| b.visit(f));
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.initial.visit_mut(f);
        self.blocks.iter_mut().for_each(|b| b.visit_mut(f));
        self.head.visit_mut(f);
    }
}
