//! U-shaped encoder-decoder built from [`crate::layers`].
//!
//! Encoder stage `s` runs two conv-norm-activation units at `f(s)` features,
//! keeps the result as a skip, then downsamples with a stride-2 unit to
//! `f(s + 1)`. Two units form the bottleneck. Each decoder stage upsamples with
//! a 2×2(×2) transpose convolution, concatenates the skip and runs two more
//! units. A pointwise convolution and a sigmoid give one probability map per
//! class.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    conv_backward, conv_forward, instance_norm_backward, instance_norm_forward, leaky_relu, leaky_relu_grad,
    sigmoid, tconv_backward, tconv_forward, ConvGeom, NormCache, LEAKY_SLOPE,
};
use crate::real::Real;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimensionality {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

impl Dimensionality {
    pub fn default_max_features(self) -> usize {
        match self {
            Dimensionality::TwoD => 512,
            Dimensionality::ThreeD => 320,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub dimensionality: Dimensionality,
    pub in_channels: usize,
    pub stages: usize,
    pub base_features: usize,
    pub max_features: usize,
    pub out_channels: usize,
}

impl NetworkConfig {
    pub fn new(dimensionality: Dimensionality, in_channels: usize, stages: usize) -> Self {
        NetworkConfig {
            dimensionality,
            in_channels,
            stages,
            base_features: 32,
            max_features: dimensionality.default_max_features(),
            out_channels: NUM_CLASSES,
        }
    }

    pub fn with_features(mut self, base: usize, max: usize) -> Self {
        self.base_features = base;
        self.max_features = max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.stages < 1 {
            return bad("stages must be at least 1");
        }
        if self.in_channels == 0 || self.base_features == 0 || self.max_features == 0 {
            return bad("channel counts must be positive");
        }
        if self.out_channels != NUM_CLASSES {
            return bad("out_channels must be 4");
        }
        if self.stages > 12 {
            return bad("too many stages");
        }
        Ok(())
    }

    /// Feature width at stage `s` (the bottleneck is stage `stages`).
    pub fn features(&self, s: usize) -> usize {
        (self.base_features << s).min(self.max_features)
    }

    fn conv3(&self) -> ConvGeom {
        match self.dimensionality {
            Dimensionality::TwoD => ConvGeom { kernel: [1, 3, 3], stride: [1; 3], pad: [0, 1, 1] },
            Dimensionality::ThreeD => ConvGeom { kernel: [3; 3], stride: [1; 3], pad: [1; 3] },
        }
    }

    fn down(&self) -> ConvGeom {
        ConvGeom {
            stride: self.factor(),
            ..self.conv3()
        }
    }

    fn factor(&self) -> [usize; 3] {
        match self.dimensionality {
            Dimensionality::TwoD => [1, 2, 2],
            Dimensionality::ThreeD => [2; 3],
        }
    }

    /// Per-axis divisor every input extent must be a multiple of.
    pub fn divisor(&self) -> [usize; 3] {
        self.factor().map(|f| f.pow(self.stages as u32))
    }

    pub fn check_input(&self, channels: usize, spatial: [usize; 3]) -> Result<()> {
        if channels != self.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.in_channels,
                found: channels,
            });
        }
        if self.dimensionality == Dimensionality::TwoD && spatial[0] != 1 {
            return Err(Error::Shape(format!("2D network given depth {}", spatial[0])));
        }
        let div = self.divisor();
        if (0..3).any(|a| spatial[a] == 0 || !spatial[a].is_multiple_of(div[a])) {
            return Err(Error::NotDivisible { dims: spatial, factor: div });
        }
        Ok(())
    }
}

/// Smallest in-plane extent kept at the bottleneck.
pub const MIN_BOTTLENECK: usize = 6;

/// Number of downsampling stages for an input: the largest `s` that keeps the
/// in-plane bottleneck (last two axes) at least 6 voxels wide. Every axis must
/// be at least 8, and at least one stage must fit.
pub fn configure_stages(spatial_dims: &[usize]) -> Result<usize> {
    let err = || Error::DimsTooSmall {
        dims: spatial_dims.to_vec(),
        min: 8,
    };
    if spatial_dims.len() < 2 || spatial_dims.iter().any(|&d| d < 8) {
        return Err(err());
    }
    let in_plane = spatial_dims[spatial_dims.len() - 2..].iter().copied().min().expect("two axes");
    let mut s = 0;
    while in_plane >> (s + 1) >= MIN_BOTTLENECK {
        s += 1;
    }
    if s == 0 {
        return Err(Error::DimsTooSmall {
            dims: spatial_dims.to_vec(),
            min: 2 * MIN_BOTTLENECK,
        });
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Kernel,
    Bias,
    NormScale,
    NormShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// All trainable tensors of one network, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub config: NetworkConfig,
    pub params: Vec<Param<T>>,
}

#[derive(Debug, Clone, Copy)]
enum Block {
    Unit { ci: usize, co: usize, down: bool },
    Up { ci: usize, co: usize },
    Head { ci: usize },
}

fn blocks(cfg: &NetworkConfig) -> Vec<Block> {
    let mut out = Vec::new();
    let mut ci = cfg.in_channels;
    for s in 0..cfg.stages {
        let f = cfg.features(s);
        out.push(Block::Unit { ci, co: f, down: false });
        out.push(Block::Unit { ci: f, co: f, down: false });
        out.push(Block::Unit { ci: f, co: cfg.features(s + 1), down: true });
        ci = cfg.features(s + 1);
    }
    out.push(Block::Unit { ci, co: ci, down: false });
    out.push(Block::Unit { ci, co: ci, down: false });
    for s in (0..cfg.stages).rev() {
        let f = cfg.features(s);
        out.push(Block::Up { ci, co: f });
        out.push(Block::Unit { ci: 2 * f, co: f, down: false });
        out.push(Block::Unit { ci: f, co: f, down: false });
        ci = f;
    }
    out.push(Block::Head { ci });
    out
}

/// Kind, shape and fan-in of every parameter tensor.
fn param_specs(cfg: &NetworkConfig) -> Vec<(ParamKind, Vec<usize>, usize)> {
    let k = cfg.conv3().kernel.to_vec();
    let taps = cfg.conv3().taps();
    let f = cfg.factor().to_vec();
    let mut out = Vec::new();
    for b in blocks(cfg) {
        match b {
            Block::Unit { ci, co, .. } => {
                out.push((ParamKind::Kernel, [vec![co, ci], k.clone()].concat(), ci * taps));
                out.push((ParamKind::Bias, vec![co], 0));
                out.push((ParamKind::NormScale, vec![co], 0));
                out.push((ParamKind::NormShift, vec![co], 0));
            }
            Block::Up { ci, co } => {
                // Stride equals kernel, so each output sees one tap per input channel.
                out.push((ParamKind::Kernel, [vec![ci, co], f.clone()].concat(), ci));
                out.push((ParamKind::Bias, vec![co], 0));
            }
            Block::Head { ci } => {
                out.push((ParamKind::Kernel, vec![cfg.out_channels, ci, 1, 1, 1], ci));
                out.push((ParamKind::Bias, vec![cfg.out_channels], 0));
            }
        }
    }
    out
}

impl<T: Real> Weights<T> {
    /// He-normal kernels (fan-in, leaky slope aware), zero biases, unit norm
    /// scales and zero shifts.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_specs(config)
            .into_iter()
            .map(|(kind, shape, fan_in)| {
                let n: usize = shape.iter().product();
                let data = match kind {
                    ParamKind::Kernel => {
                        let std = (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64)).sqrt();
                        let normal = Normal::new(0.0, std).expect("positive std");
                        (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect()
                    }
                    ParamKind::NormScale => vec![T::one(); n],
                    ParamKind::Bias | ParamKind::NormShift => vec![T::zero(); n],
                };
                Param { kind, shape, data }
            })
            .collect();
        Ok(Weights {
            config: config.clone(),
            params,
        })
    }

    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let params = param_specs(config)
            .into_iter()
            .map(|(kind, shape, _)| Param {
                kind,
                data: vec![T::zero(); shape.iter().product()],
                shape,
            })
            .collect();
        Ok(Weights {
            config: config.clone(),
            params,
        })
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Gradients<T> {
        Gradients(self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> Weights<U> {
        Weights {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    kind: p.kind,
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::lit(v.f64())).collect(),
                })
                .collect(),
        }
    }

    /// Checks that parameter shapes agree with the config.
    pub fn check_shapes(&self) -> Result<()> {
        let want = param_specs(&self.config);
        if want.len() != self.params.len()
            || want
                .iter()
                .zip(&self.params)
                .any(|((k, s, _), p)| *k != p.kind || *s != p.shape || p.data.len() != s.iter().product::<usize>())
        {
            return Err(Error::Shape("weights do not match their network config".into()));
        }
        Ok(())
    }
}

/// Gradients laid out like [`Weights::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T>(pub Vec<Vec<T>>);

impl<T: Real> Gradients<T> {
    pub fn scale(&mut self, k: T) {
        self.0.iter_mut().flatten().for_each(|g| *g *= k);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt()
    }
}

struct UnitCache<T> {
    x: Tensor<T>,
    norm: NormCache<T>,
    p: usize,
    co: usize,
    geom: ConvGeom,
}

enum Cache<T> {
    Unit(UnitCache<T>),
    Up { x: Tensor<T>, p: usize, skip_channels: usize },
    Head { x: Tensor<T>, p: usize },
}

/// Everything backward needs from one forward pass.
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
    probs: Tensor<T>,
}

impl<T> Tape<T> {
    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }
}

fn unit_forward<T: Real>(w: &Weights<T>, x: Tensor<T>, p: usize, co: usize, geom: ConvGeom) -> Result<(Tensor<T>, UnitCache<T>)> {
    let ps = &w.params;
    let c = conv_forward(&x, &ps[p].data, &ps[p + 1].data, co, &geom)?;
    let (mut y, norm) = instance_norm_forward(&c, &ps[p + 2].data, &ps[p + 3].data);
    y.data_mut().iter_mut().for_each(|v| *v = leaky_relu(*v));
    Ok((y, UnitCache { x, norm, p, co, geom }))
}

fn unit_backward<T: Real>(w: &Weights<T>, c: &UnitCache<T>, mut dy: Tensor<T>, g: &mut Gradients<T>, need_dx: bool) -> Option<Tensor<T>> {
    let ps = &w.params;
    let (gamma, beta) = (&ps[c.p + 2].data, &ps[c.p + 3].data);
    for ch in 0..dy.channels() {
        let xh = c.norm.xhat.channel(ch);
        for (d, &h) in dy.channel_mut(ch).iter_mut().zip(xh) {
            *d *= leaky_relu_grad(gamma[ch] * h + beta[ch]);
        }
    }
    let (gk, rest) = g.0[c.p..].split_at_mut(1);
    let (gb, rest) = rest.split_at_mut(1);
    let (gs, gt) = rest.split_at_mut(1);
    let dc = instance_norm_backward(&c.norm, gamma, &dy, &mut gs[0], &mut gt[0]);
    conv_backward(&c.x, &ps[c.p].data, c.co, &c.geom, &dc, &mut gk[0], &mut gb[0], need_dx)
}

/// Runs the network on one instance, recording what backward needs.
pub fn forward_tape<T: Real>(w: &Weights<T>, x: &Tensor<T>) -> Result<Tape<T>> {
    let cfg = &w.config;
    cfg.check_input(x.channels(), x.spatial())?;
    let mut caches = Vec::new();
    let mut skips = Vec::new();
    let mut h = x.clone();
    let mut p = 0;
    for b in blocks(cfg) {
        match b {
            Block::Unit { co, down, .. } => {
                let geom = if down { cfg.down() } else { cfg.conv3() };
                if down {
                    skips.push(h.clone());
                }
                let (y, c) = unit_forward(w, h, p, co, geom)?;
                caches.push(Cache::Unit(c));
                h = y;
                p += 4;
            }
            Block::Up { co, .. } => {
                let u = tconv_forward(&h, &w.params[p].data, &w.params[p + 1].data, co, cfg.factor())?;
                let skip = skips.pop().expect("one skip per stage");
                let skip_channels = skip.channels();
                caches.push(Cache::Up { x: h, p, skip_channels });
                h = Tensor::concat(&u, &skip);
                p += 2;
            }
            Block::Head { .. } => {
                let geom = ConvGeom { kernel: [1; 3], stride: [1; 3], pad: [0; 3] };
                let z = conv_forward(&h, &w.params[p].data, &w.params[p + 1].data, cfg.out_channels, &geom)?;
                caches.push(Cache::Head { x: h, p });
                let probs = z.map(sigmoid);
                return Ok(Tape { caches, probs });
            }
        }
    }
    unreachable!("block list ends with the head")
}

pub fn forward<T: Real>(w: &Weights<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(forward_tape(w, x)?.probs)
}

/// Backpropagates `dprobs` (gradient of the loss w.r.t. the output
/// probabilities), accumulating parameter gradients into `grads`. The input
/// gradient is computed only when `need_input_grad` is set.
pub fn backward<T: Real>(
    w: &Weights<T>,
    tape: Tape<T>,
    dprobs: &Tensor<T>,
    grads: &mut Gradients<T>,
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let Tape { mut caches, probs } = tape;
    let mut dh = dprobs.clone();
    for (d, &p) in dh.data_mut().iter_mut().zip(probs.data()) {
        *d *= p * (T::one() - p);
    }
    let head = ConvGeom { kernel: [1; 3], stride: [1; 3], pad: [0; 3] };
    // Decoder-side gradients of the skip tensors, deepest last.
    let mut dskips: Vec<Tensor<T>> = Vec::new();
    while let Some(c) = caches.pop() {
        let need_dx = need_input_grad || !caches.is_empty();
        match c {
            Cache::Head { x, p } => {
                let (gk, gb) = grads.0[p..].split_at_mut(1);
                dh = conv_backward(&x, &w.params[p].data, w.config.out_channels, &head, &dh, &mut gk[0], &mut gb[0], true)?;
            }
            Cache::Up { x, p, skip_channels } => {
                let up_channels = dh.channels() - skip_channels;
                let (du, ds) = dh.split(up_channels);
                dskips.push(ds);
                let (gk, gb) = grads.0[p..].split_at_mut(1);
                dh = tconv_backward(&x, &w.params[p].data, w.config.factor(), &du, &mut gk[0], &mut gb[0]);
            }
            Cache::Unit(u) => {
                let mut dx = unit_backward(w, &u, dh, grads, need_dx)?;
                if u.geom.stride != [1; 3] {
                    dx.add_assign(&dskips.pop().expect("skip gradient per stage"));
                }
                dh = dx;
            }
        }
    }
    Some(dh)
}

/// Per-voxel argmax over class channels; ties go to the lower class index.
pub fn predict_labels<T: Real>(probs: &Tensor<T>) -> Vec<u8> {
    let n = probs.voxels();
    let mut out = vec![0u8; n];
    let mut best: Vec<T> = probs.channel(0).to_vec();
    for c in 1..probs.channels() {
        for ((o, b), &v) in out.iter_mut().zip(best.iter_mut()).zip(probs.channel(c)) {
            if v > *b {
                *b = v;
                *o = c as u8;
            }
        }
    }
    out
}

/// One-hot encoding of a label map into `classes` channels.
pub fn one_hot<T: Real>(labels: &[u8], spatial: [usize; 3], classes: usize) -> Result<Tensor<T>> {
    let n = spatial.iter().product::<usize>();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for grid {spatial:?}", labels.len())));
    }
    let mut t = Tensor::zeros(classes, spatial);
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= classes {
            return Err(Error::Shape(format!("label {l} outside 0..{classes}")));
        }
        t.data_mut()[l * n + i] = T::one();
    }
    Ok(t)
}

/// Analytic parameter and multiply-accumulate counts for one forward pass.
///
/// Convolutions cost `co·ci·taps` MACs per output voxel and transpose
/// convolutions `co·ci` per output voxel; instance norm costs one MAC per
/// element (the affine scale-and-shift). Biases and activations are free.
pub fn count_params_macs(cfg: &NetworkConfig, spatial: [usize; 3]) -> Result<(u64, u64)> {
    cfg.validate()?;
    let div = cfg.divisor();
    if (0..3).any(|a| spatial[a] == 0 || !spatial[a].is_multiple_of(div[a])) {
        return Err(Error::NotDivisible { dims: spatial, factor: div });
    }
    let taps = cfg.conv3().taps() as u64;
    let f = cfg.factor();
    let mut dims = spatial;
    let vox = |d: [usize; 3]| d.iter().product::<usize>() as u64;
    let (mut params, mut macs) = (0u64, 0u64);
    let mut level = Vec::new();
    for b in blocks(cfg) {
        match b {
            Block::Unit { ci, co, down } => {
                if down {
                    level.push(dims);
                    dims = [dims[0] / f[0], dims[1] / f[1], dims[2] / f[2]];
                }
                let (ci, co) = (ci as u64, co as u64);
                params += co * ci * taps + co + 2 * co;
                macs += co * ci * taps * vox(dims) + co * vox(dims);
            }
            Block::Up { ci, co } => {
                dims = level.pop().expect("matching encoder level");
                let (ci, co) = (ci as u64, co as u64);
                let up = f.iter().product::<usize>() as u64;
                params += ci * co * up + co;
                macs += co * ci * vox(dims);
            }
            Block::Head { ci } => {
                let (ci, co) = (ci as u64, cfg.out_channels as u64);
                params += co * ci + co;
                macs += co * ci * vox(dims);
            }
        }
    }
    Ok((params, macs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stage_configuration_examples() {
        assert_eq!(configure_stages(&[64, 192, 192]).unwrap(), 5);
        assert_eq!(configure_stages(&[384, 384]).unwrap(), 6);
        assert_eq!(configure_stages(&[128, 128]).unwrap(), 4);
        assert_eq!(configure_stages(&[112, 128, 112]).unwrap(), 4);
        assert!(configure_stages(&[7, 64, 64]).is_err());
        assert!(configure_stages(&[8, 8]).is_err());
        assert_eq!(configure_stages(&[12, 12]).unwrap(), 1);
    }

    #[test]
    fn features_double_then_saturate() {
        let c = NetworkConfig::new(Dimensionality::ThreeD, 1, 5);
        let f: Vec<_> = (0..=5).map(|s| c.features(s)).collect();
        assert_eq!(f, [32, 64, 128, 256, 320, 320]);
        let c = NetworkConfig::new(Dimensionality::TwoD, 1, 6);
        assert_eq!(c.features(6), 512);
    }

    fn tiny(dim: Dimensionality, stages: usize) -> NetworkConfig {
        NetworkConfig::new(dim, 2, stages).with_features(2, 8)
    }

    #[test]
    fn zero_weights_give_one_half() {
        let cfg = tiny(Dimensionality::ThreeD, 2);
        let w = Weights::<f64>::zeros(&cfg).unwrap();
        let x = Tensor::from_vec(2, [4, 8, 4], (0..256).map(|i| i as f64).collect()).unwrap();
        let p = forward(&w, &x).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_shape_and_range() {
        for (dim, s) in [(Dimensionality::TwoD, [1, 16, 8]), (Dimensionality::ThreeD, [4, 8, 12])] {
            let w = Weights::<f32>::init(&tiny(dim, 2), 3).unwrap();
            let x = Tensor::from_vec(2, s, (0..2 * s.iter().product::<usize>()).map(|i| (i as f32 * 0.1).sin()).collect()).unwrap();
            let p = forward(&w, &x).unwrap();
            assert_eq!((p.channels(), p.spatial()), (4, s));
            assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn input_contract_enforced() {
        let w = Weights::<f32>::init(&tiny(Dimensionality::TwoD, 2), 0).unwrap();
        assert!(matches!(forward(&w, &Tensor::zeros(3, [1, 8, 8])), Err(Error::ChannelMismatch { .. })));
        assert!(matches!(forward(&w, &Tensor::zeros(2, [1, 8, 6])), Err(Error::NotDivisible { .. })));
        assert!(forward(&w, &Tensor::zeros(2, [2, 8, 8])).is_err());
    }

    #[test]
    fn param_count_matches_closed_form() {
        for cfg in [tiny(Dimensionality::TwoD, 3), NetworkConfig::new(Dimensionality::ThreeD, 7, 4)] {
            let w = Weights::<f32>::zeros(&cfg).unwrap();
            let s = if cfg.dimensionality == Dimensionality::TwoD { [1, 64, 64] } else { [16, 16, 16] };
            assert_eq!(count_params_macs(&cfg, s).unwrap().0, w.count() as u64);
        }
    }

    #[test]
    fn single_conv_costs() {
        // 1 -> 1 channel, 3x3 kernel, padded 8x8 input.
        let g = ConvGeom { kernel: [1, 3, 3], stride: [1; 3], pad: [0, 1, 1] };
        let out = g.out_dims([1, 8, 8]).unwrap();
        let (params, macs) = (9 + 1, 9 * out.iter().product::<usize>());
        assert_eq!((params, macs), (10, 576));
    }

    #[test]
    fn params_independent_of_size_and_macs_linear() {
        let cfg = tiny(Dimensionality::ThreeD, 2);
        let (p1, m1) = count_params_macs(&cfg, [4, 8, 8]).unwrap();
        let (p2, m2) = count_params_macs(&cfg, [8, 8, 8]).unwrap();
        let (p3, m3) = count_params_macs(&cfg, [8, 16, 16]).unwrap();
        assert_eq!((p1, p1), (p2, p3));
        assert_eq!((m2, m3), (2 * m1, 8 * m1));
    }

    #[test]
    fn cropped_configs_are_cheaper() {
        let a = NetworkConfig::new(Dimensionality::ThreeD, 1, configure_stages(&[64, 192, 192]).unwrap());
        let b = NetworkConfig::new(Dimensionality::ThreeD, 7, configure_stages(&[112, 128, 112]).unwrap());
        let (pa, ma) = count_params_macs(&a, [64, 192, 192]).unwrap();
        let (pb, mb) = count_params_macs(&b, [112, 128, 112]).unwrap();
        assert!(pb < pa && mb < ma);
        let c = NetworkConfig::new(Dimensionality::TwoD, 1, configure_stages(&[384, 384]).unwrap());
        let d = NetworkConfig::new(Dimensionality::TwoD, 4, configure_stages(&[128, 128]).unwrap());
        let (pc, mc) = count_params_macs(&c, [1, 384, 384]).unwrap();
        let (pd, md) = count_params_macs(&d, [1, 128, 128]).unwrap();
        assert!(pd < pc && md < mc);
    }

    #[test]
    fn predict_labels_rules() {
        let s = [1, 1, 3];
        let mut p = Tensor::<f32>::zeros(4, s);
        // voxel 0: one-hot MYO; voxel 1: all equal; voxel 2: RV maximal
        p.channel_mut(2)[0] = 1.0;
        for c in 0..4 {
            p.channel_mut(c)[1] = 0.3;
            p.channel_mut(c)[2] = 0.2;
        }
        p.channel_mut(3)[2] = 0.9;
        assert_eq!(predict_labels(&p), vec![2, 0, 3]);
        let all_rv = Tensor::from_vec(4, s, [vec![0.1; 9], vec![0.8; 3]].concat()).unwrap();
        assert_eq!(predict_labels(&all_rv), vec![3; 3]);
    }

    #[test]
    fn one_hot_round_trips_through_argmax() {
        let labels = vec![0, 1, 2, 3, 3, 1];
        let t = one_hot::<f64>(&labels, [1, 2, 3], 4).unwrap();
        assert_eq!(predict_labels(&t), labels);
        assert!(one_hot::<f64>(&[4], [1, 1, 1], 4).is_err());
    }

    // Scalar oracle for a one-stage 2D network on an 8×8 input.
    mod reference {
        pub type Img = Vec<Vec<Vec<f64>>>; // [c][y][x]

        pub fn conv(x: &Img, w: &[f64], b: &[f64], co: usize, k: usize, stride: usize) -> Img {
            let ci = x.len();
            let (h, wd) = (x[0].len(), x[0][0].len());
            let pad = k / 2;
            let (oh, ow) = ((h + 2 * pad - k) / stride + 1, (wd + 2 * pad - k) / stride + 1);
            let mut y = vec![vec![vec![0.0; ow]; oh]; co];
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[o];
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as i64 - pad as i64;
                                    let ix = (ox * stride + kx) as i64 - pad as i64;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w[((o * ci + c) * k + ky) * k + kx] * x[c][iy as usize][ix as usize];
                                    }
                                }
                            }
                        }
                        y[o][oy][ox] = acc;
                    }
                }
            }
            y
        }

        pub fn norm_act(x: &Img, g: &[f64], b: &[f64]) -> Img {
            x.iter()
                .enumerate()
                .map(|(c, ch)| {
                    let vals: Vec<f64> = ch.iter().flatten().copied().collect();
                    let n = vals.len() as f64;
                    let m = vals.iter().sum::<f64>() / n;
                    let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
                    ch.iter()
                        .map(|row| {
                            row.iter()
                                .map(|&a| {
                                    let t = g[c] * (a - m) / (v + 1e-5).sqrt() + b[c];
                                    if t > 0.0 { t } else { 0.01 * t }
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        }

        pub fn up(x: &Img, w: &[f64], b: &[f64], co: usize) -> Img {
            let ci = x.len();
            let (h, wd) = (x[0].len(), x[0][0].len());
            let mut y = vec![vec![vec![0.0; 2 * wd]; 2 * h]; co];
            for o in 0..co {
                for yy in 0..2 * h {
                    for xx in 0..2 * wd {
                        let mut acc = b[o];
                        for c in 0..ci {
                            acc += x[c][yy / 2][xx / 2] * w[((c * co + o) * 2 + yy % 2) * 2 + xx % 2];
                        }
                        y[o][yy][xx] = acc;
                    }
                }
            }
            y
        }
    }

    #[test]
    fn one_stage_2d_matches_scalar_reference() {
        use reference::*;
        let cfg = NetworkConfig::new(Dimensionality::TwoD, 2, 1).with_features(3, 8);
        let w = Weights::<f64>::init(&cfg, 11).unwrap();
        let mut w = w;
        // Non-trivial biases and norm affine terms so every parameter matters.
        for (i, p) in w.params.iter_mut().enumerate() {
            if p.kind != ParamKind::Kernel {
                for (j, v) in p.data.iter_mut().enumerate() {
                    *v += 0.1 * ((i * 7 + j) as f64).sin();
                }
            }
        }
        let xs: Vec<f64> = (0..128).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect();
        let x = Tensor::from_vec(2, [1, 8, 8], xs.clone()).unwrap();
        let img: Img = (0..2).map(|c| (0..8).map(|y| (0..8).map(|xx| xs[c * 64 + y * 8 + xx]).collect()).collect()).collect();
        let p = |i: usize| w.params[i].data.as_slice();
        let unit = |x: &Img, i: usize, co: usize, stride: usize| norm_act(&conv(x, p(i), p(i + 1), co, 3, stride), p(i + 2), p(i + 3));
        let (f0, f1) = (3, 6);
        let a = unit(&img, 0, f0, 1);
        let skip = unit(&a, 4, f0, 1);
        let d = unit(&skip, 8, f1, 2);
        let b1 = unit(&d, 12, f1, 1);
        let b2 = unit(&b1, 16, f1, 1);
        let mut u = up(&b2, p(20), p(21), f0);
        u.extend(skip.iter().cloned());
        let c1 = unit(&u, 22, f0, 1);
        let c2 = unit(&c1, 26, f0, 1);
        let z = conv(&c2, p(30), p(31), 4, 1, 1);
        assert_eq!(w.params.len(), 32);
        let got = forward(&w, &x).unwrap();
        for c in 0..4 {
            for y in 0..8 {
                for xx in 0..8 {
                    let want = 1.0 / (1.0 + (-z[c][y][xx]).exp());
                    let v = got.channel(c)[y * 8 + xx];
                    assert!((v - want).abs() < 1e-12, "{c},{y},{xx}: {v} vs {want}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn shape_contract(stages in 1usize..3, d in 1usize..3, h in 1usize..3, wd in 1usize..3, seed in 0u64..100) {
            let cfg = tiny(Dimensionality::ThreeD, stages);
            let div = cfg.divisor();
            let s = [d * div[0], h * div[1], wd * div[2]];
            let w = Weights::<f32>::init(&cfg, seed).unwrap();
            let n = 2 * s.iter().product::<usize>();
            let x = Tensor::from_vec(2, s, (0..n).map(|i| ((i as u64 * 31 + seed) % 7) as f32).collect()).unwrap();
            let p = forward(&w, &x).unwrap();
            prop_assert_eq!(p.spatial(), s);
            prop_assert_eq!(p.channels(), 4);
            prop_assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
