//! Training-time augmentation. Geometric transforms move every channel and the
//! labels together; the leading intensity channels are interpolated linearly
//! while label-like channels (priors) and labels use nearest neighbour.
//! Photometric transforms touch intensity channels only.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub p_rotation: f64,
    /// In-plane rotation range, ± degrees.
    pub rotation_deg: f64,
    pub p_scale: f64,
    pub scale_range: (f64, f64),
    /// Flip each eligible axis with probability 1/2.
    pub mirror: bool,
    pub p_brightness: f64,
    pub brightness_range: (f64, f64),
    pub p_contrast: f64,
    pub contrast_range: (f64, f64),
    pub p_gamma: f64,
    pub gamma_range: (f64, f64),
    pub p_noise: f64,
    pub noise_sigma_max: f64,
    pub p_blur: f64,
    pub blur_sigma_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_rotation: 0.2,
            rotation_deg: 15.0,
            p_scale: 0.2,
            scale_range: (0.85, 1.15),
            mirror: true,
            p_brightness: 0.15,
            brightness_range: (0.75, 1.25),
            p_contrast: 0.15,
            contrast_range: (0.75, 1.25),
            p_gamma: 0.15,
            gamma_range: (0.7, 1.5),
            p_noise: 0.1,
            noise_sigma_max: 0.1,
            p_blur: 0.1,
            blur_sigma_range: (0.5, 1.0),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            p_rotation: 0.0,
            p_scale: 0.0,
            mirror: false,
            p_brightness: 0.0,
            p_contrast: 0.0,
            p_gamma: 0.0,
            p_noise: 0.0,
            p_blur: 0.0,
            ..Default::default()
        }
    }

    pub fn mirror_only() -> Self {
        AugmentConfig {
            mirror: true,
            ..Self::disabled()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.p_rotation,
            self.p_scale,
            self.p_brightness,
            self.p_contrast,
            self.p_gamma,
            self.p_noise,
            self.p_blur,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidTrainConfig("augmentation probabilities must lie in [0, 1]".into()));
        }
        let ranges = [
            self.scale_range,
            self.brightness_range,
            self.contrast_range,
            self.gamma_range,
            self.blur_sigma_range,
        ];
        if ranges.iter().any(|&(a, b)| !(a > 0.0 && a <= b)) || self.noise_sigma_max < 0.0 || self.rotation_deg < 0.0 {
            return Err(Error::InvalidTrainConfig("augmentation ranges must be positive and ordered".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (a, b): (f64, f64)) -> f64 {
    if a == b {
        a
    } else {
        rng.random_range(a..b)
    }
}

/// Applies a random augmentation. The first `intensity_channels` channels of
/// `input` are images; the remaining channels and `labels` are categorical.
pub fn augment<T: Real>(
    input: &Tensor<T>,
    labels: &[u8],
    intensity_channels: usize,
    rng: &mut impl Rng,
    cfg: &AugmentConfig,
) -> (Tensor<T>, Vec<u8>) {
    assert_eq!(labels.len(), input.voxels(), "labels and image differ in size");
    let spatial = input.spatial();
    let mut x = input.clone();
    let mut y = labels.to_vec();

    let angle = if rng.random_bool(cfg.p_rotation) {
        rng.random_range(-cfg.rotation_deg..=cfg.rotation_deg).to_radians()
    } else {
        0.0
    };
    let scale = if rng.random_bool(cfg.p_scale) {
        uniform(rng, cfg.scale_range)
    } else {
        1.0
    };
    if angle != 0.0 || scale != 1.0 {
        (x, y) = warp(&x, &y, intensity_channels, angle, scale);
    }

    if cfg.mirror {
        for axis in 0..3 {
            if spatial[axis] > 1 && rng.random_bool(0.5) {
                x = mirror_tensor(&x, axis);
                y = mirror_labels(&y, spatial, axis);
            }
        }
    }

    for c in 0..intensity_channels.min(x.channels()) {
        let ch = x.channel_mut(c);
        if rng.random_bool(cfg.p_brightness) {
            let f = T::lit(uniform(rng, cfg.brightness_range));
            ch.iter_mut().for_each(|v| *v *= f);
        }
        if rng.random_bool(cfg.p_contrast) {
            let f = uniform(rng, cfg.contrast_range);
            contrast(ch, f);
        }
        if rng.random_bool(cfg.p_gamma) {
            let g = uniform(rng, cfg.gamma_range);
            gamma(ch, g);
        }
        if rng.random_bool(cfg.p_noise) {
            let sigma = rng.random_range(0.0..=cfg.noise_sigma_max);
            if sigma > 0.0 {
                let n = Normal::new(0.0, sigma).expect("positive sigma");
                ch.iter_mut().for_each(|v| *v += T::lit(n.sample(rng)));
            }
        }
        if rng.random_bool(cfg.p_blur) {
            let s = uniform(rng, cfg.blur_sigma_range);
            blur(ch, spatial, s);
        }
    }
    (x, y)
}

fn offset(s: [usize; 3], z: usize, yy: usize, x: usize) -> usize {
    (z * s[1] + yy) * s[2] + x
}

pub fn mirror_tensor<T: Real>(t: &Tensor<T>, axis: usize) -> Tensor<T> {
    let s = t.spatial();
    let mut out = Tensor::zeros(t.channels(), s);
    for c in 0..t.channels() {
        let (src, dst) = (t.channel(c), out.channel_mut(c));
        flip_into(src, dst, s, axis);
    }
    out
}

pub fn mirror_labels(l: &[u8], s: [usize; 3], axis: usize) -> Vec<u8> {
    let mut out = vec![0; l.len()];
    flip_into(l, &mut out, s, axis);
    out
}

fn flip_into<V: Copy>(src: &[V], dst: &mut [V], s: [usize; 3], axis: usize) {
    for z in 0..s[0] {
        for yy in 0..s[1] {
            for x in 0..s[2] {
                let mut q = [z, yy, x];
                q[axis] = s[axis] - 1 - q[axis];
                dst[offset(s, q[0], q[1], q[2])] = src[offset(s, z, yy, x)];
            }
        }
    }
}

/// Rotation about the depth axis and isotropic scaling about the grid centre.
/// Depth is scaled too unless the grid is a single slice.
fn warp<T: Real>(x: &Tensor<T>, labels: &[u8], intensity_channels: usize, angle: f64, scale: f64) -> (Tensor<T>, Vec<u8>) {
    let s = x.spatial();
    let c = s.map(|n| (n as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let zs = if s[0] > 1 { scale } else { 1.0 };
    let mut out = Tensor::zeros(x.channels(), s);
    let mut out_l = vec![0u8; labels.len()];
    for z in 0..s[0] {
        for yy in 0..s[1] {
            for xx in 0..s[2] {
                let (dy, dx) = (yy as f64 - c[1], xx as f64 - c[2]);
                // inverse map: rotate by -angle, divide by scale
                let src = [
                    c[0] + (z as f64 - c[0]) / zs,
                    c[1] + (cos * dy + sin * dx) / scale,
                    c[2] + (-sin * dy + cos * dx) / scale,
                ];
                let o = offset(s, z, yy, xx);
                let near = nearest_index(s, src);
                out_l[o] = near.map_or(0, |i| labels[i]);
                for ch in 0..x.channels() {
                    out.channel_mut(ch)[o] = if ch < intensity_channels {
                        trilinear(x.channel(ch), s, src)
                    } else {
                        near.map_or(T::zero(), |i| x.channel(ch)[i])
                    };
                }
            }
        }
    }
    (out, out_l)
}

fn nearest_index(s: [usize; 3], p: [f64; 3]) -> Option<usize> {
    let mut q = [0usize; 3];
    for a in 0..3 {
        let r = p[a].round();
        if r < 0.0 || r >= s[a] as f64 {
            return None;
        }
        q[a] = r as usize;
    }
    Some(offset(s, q[0], q[1], q[2]))
}

fn trilinear<T: Real>(v: &[T], s: [usize; 3], p: [f64; 3]) -> T {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut f = [0.0; 3];
    for a in 0..3 {
        let q = p[a].clamp(0.0, (s[a] - 1) as f64);
        lo[a] = q.floor() as usize;
        hi[a] = (lo[a] + 1).min(s[a] - 1);
        f[a] = q - lo[a] as f64;
    }
    let mut acc = 0.0;
    for (dz, wz) in [(lo[0], 1.0 - f[0]), (hi[0], f[0])] {
        for (dy, wy) in [(lo[1], 1.0 - f[1]), (hi[1], f[1])] {
            for (dx, wx) in [(lo[2], 1.0 - f[2]), (hi[2], f[2])] {
                let w = wz * wy * wx;
                if w != 0.0 {
                    acc += w * v[offset(s, dz, dy, dx)].f64();
                }
            }
        }
    }
    T::lit(acc)
}

fn min_max<T: Real>(v: &[T]) -> (T, T) {
    v.iter().fold((T::infinity(), T::neg_infinity()), |(a, b), &x| (a.min(x), b.max(x)))
}

fn contrast<T: Real>(v: &mut [T], f: f64) {
    let (lo, hi) = min_max(v);
    let mean = T::lit(v.iter().map(|x| x.f64()).sum::<f64>() / v.len() as f64);
    let f = T::lit(f);
    v.iter_mut().for_each(|x| *x = ((*x - mean) * f + mean).max(lo).min(hi));
}

fn gamma<T: Real>(v: &mut [T], g: f64) {
    let (lo, hi) = min_max(v);
    let range = hi - lo;
    if range <= T::zero() {
        return;
    }
    let g = T::lit(g);
    v.iter_mut().for_each(|x| *x = ((*x - lo) / range).powf(g) * range + lo);
}

fn blur<T: Real>(v: &mut [T], s: [usize; 3], sigma: f64) {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|w| w / norm).collect();
    for axis in 0..3 {
        if s[axis] == 1 {
            continue;
        }
        let src: Vec<f64> = v.iter().map(|x| x.f64()).collect();
        for z in 0..s[0] {
            for yy in 0..s[1] {
                for x in 0..s[2] {
                    let p = [z, yy, x];
                    let mut acc = 0.0;
                    for (j, w) in k.iter().enumerate() {
                        let mut q = p;
                        let i = p[axis] as isize + j as isize - r;
                        q[axis] = i.clamp(0, s[axis] as isize - 1) as usize;
                        acc += w * src[offset(s, q[0], q[1], q[2])];
                    }
                    v[offset(s, z, yy, x)] = T::lit(acc);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (Tensor<f32>, Vec<u8>) {
        let s = [3, 8, 10];
        let n = 240;
        let img: Vec<f32> = (0..n).map(|i| ((i * 13) % 29) as f32 / 7.0).collect();
        let labels: Vec<u8> = (0..n).map(|i| if (i % 10) > 5 && (i / 10) % 8 > 3 { 1 + (i % 3) as u8 } else { 0 }).collect();
        let prior: Vec<f32> = labels.iter().map(|&l| (l == 2) as u8 as f32).collect();
        (Tensor::from_vec(2, s, [img, prior].concat()).unwrap(), labels)
    }

    #[test]
    fn disabled_is_identity() {
        let (x, l) = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x2, l2) = augment(&x, &l, 1, &mut rng, &AugmentConfig::disabled());
        assert_eq!((x2, l2), (x, l));
    }

    #[test]
    fn mirror_only_permutes_labels_with_image() {
        let (x, l) = sample();
        for seed in 0..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x2, l2) = augment(&x, &l, 1, &mut rng, &AugmentConfig::mirror_only());
            for c in 1..4 {
                assert_eq!(l.iter().filter(|&&v| v == c).count(), l2.iter().filter(|&&v| v == c).count());
            }
            // prior channel still marks exactly the MYO voxels
            for (p, &lab) in x2.channel(1).iter().zip(&l2) {
                assert_eq!(*p == 1.0, lab == 2);
            }
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (x, l) = sample();
        let cfg = AugmentConfig {
            p_rotation: 1.0,
            p_scale: 1.0,
            p_brightness: 1.0,
            p_contrast: 1.0,
            p_gamma: 1.0,
            p_noise: 1.0,
            p_blur: 1.0,
            ..Default::default()
        };
        let a = augment(&x, &l, 1, &mut ChaCha8Rng::seed_from_u64(9), &cfg);
        let b = augment(&x, &l, 1, &mut ChaCha8Rng::seed_from_u64(9), &cfg);
        assert_eq!(a, b);
        assert_ne!(a.0, x);
        assert!(a.0.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mirroring_commutes_with_augmentation() {
        let (x, l) = sample();
        let s = x.spatial();
        for axis in 0..3 {
            for seed in 0..4 {
                let (mx, ml) = (mirror_tensor(&x, axis), mirror_labels(&l, s, axis));
                let a = augment(&mx, &ml, 1, &mut ChaCha8Rng::seed_from_u64(seed), &AugmentConfig::mirror_only());
                let b = augment(&x, &l, 1, &mut ChaCha8Rng::seed_from_u64(seed), &AugmentConfig::mirror_only());
                assert_eq!(a.0, mirror_tensor(&b.0, axis));
                assert_eq!(a.1, mirror_labels(&b.1, s, axis));
            }
        }
    }

    #[test]
    fn label_channels_stay_categorical_under_warp() {
        let (x, l) = sample();
        let cfg = AugmentConfig {
            p_rotation: 1.0,
            p_scale: 1.0,
            ..AugmentConfig::disabled()
        };
        let (x2, l2) = augment(&x, &l, 1, &mut ChaCha8Rng::seed_from_u64(3), &cfg);
        assert!(x2.channel(1).iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(l2.iter().all(|&v| v < 4));
    }

    #[test]
    fn zero_angle_unit_scale_warp_is_identity() {
        let (x, l) = sample();
        let (x2, l2) = warp(&x, &l, 1, 0.0, 1.0);
        assert_eq!((x2, l2), (x, l));
    }
}
