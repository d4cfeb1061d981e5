//! Central finite-difference checks of every analytic gradient, run in f64.
//!
//! Each layer is wrapped in a scalar objective `Σ r ⊙ y` with fixed random
//! weights `r`; the loss terms are checked directly. The reported error is
//! `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖)` over the
//! concatenation of all inputs and parameters of the layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{
    conv_backward, conv_forward, instance_norm_backward, instance_norm_forward, leaky_relu, leaky_relu_grad,
    sigmoid, tconv_backward, tconv_forward, ConvGeom,
};
use crate::loss::{bce, loss, soft_dice};
use crate::net::{backward, forward, forward_tape, one_hot, Dimensionality, NetworkConfig, Weights};
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub layer: &'static str,
    pub shape: String,
    pub rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_err <= TOLERANCE
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let up = f(&x);
            x[i] = orig - STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Values bounded away from zero so kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn t(c: usize, s: [usize; 3], v: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(c, s, v).expect("consistent test shape")
}

fn check_conv(rng: &mut ChaCha8Rng, ci: usize, co: usize, s: [usize; 3], g: ConvGeom) -> GradCheck {
    let nx = ci * s.iter().product::<usize>();
    let nw = co * ci * g.taps();
    let x0 = randn(rng, nx);
    let w0 = randn(rng, nw);
    let b0 = randn(rng, co);
    let out = g.out_dims(s).expect("valid conv shape");
    let r = randn(rng, co * out.iter().product::<usize>());
    let all: Vec<f64> = [x0.clone(), w0.clone(), b0.clone()].concat();
    let f = |v: &[f64]| {
        let y = conv_forward(&t(ci, s, v[..nx].to_vec()), &v[nx..nx + nw], &v[nx + nw..], co, &g).expect("conv");
        dot(y.data(), &r)
    };
    let num = numeric_grad(f, &all);
    let x = t(ci, s, x0);
    let mut dw = vec![0.0; nw];
    let mut db = vec![0.0; co];
    let dx = conv_backward(&x, &w0, co, &g, &t(co, out, r.clone()), &mut dw, &mut db, true).expect("dx");
    let ana = [dx.into_data(), dw, db].concat();
    GradCheck {
        layer: "conv",
        shape: format!("{ci}->{co} {s:?} k{:?} s{:?}", g.kernel, g.stride),
        rel_err: relative_error(&ana, &num),
    }
}

fn check_tconv(rng: &mut ChaCha8Rng, ci: usize, co: usize, s: [usize; 3], f: [usize; 3]) -> GradCheck {
    let nx = ci * s.iter().product::<usize>();
    let nw = ci * co * f.iter().product::<usize>();
    let x0 = randn(rng, nx);
    let w0 = randn(rng, nw);
    let b0 = randn(rng, co);
    let out = [s[0] * f[0], s[1] * f[1], s[2] * f[2]];
    let r = randn(rng, co * out.iter().product::<usize>());
    let all: Vec<f64> = [x0.clone(), w0.clone(), b0].concat();
    let obj = |v: &[f64]| {
        let y = tconv_forward(&t(ci, s, v[..nx].to_vec()), &v[nx..nx + nw], &v[nx + nw..], co, f).expect("tconv");
        dot(y.data(), &r)
    };
    let num = numeric_grad(obj, &all);
    let mut dw = vec![0.0; nw];
    let mut db = vec![0.0; co];
    let dx = tconv_backward(&t(ci, s, x0), &w0, f, &t(co, out, r.clone()), &mut dw, &mut db);
    GradCheck {
        layer: "transpose_conv",
        shape: format!("{ci}->{co} {s:?} x{f:?}"),
        rel_err: relative_error(&[dx.into_data(), dw, db].concat(), &num),
    }
}

fn check_norm(rng: &mut ChaCha8Rng, c: usize, s: [usize; 3]) -> GradCheck {
    let nx = c * s.iter().product::<usize>();
    let x0: Vec<f64> = randn(rng, nx).iter().map(|v| 3.0 * v + 0.5).collect();
    let g0: Vec<f64> = randn(rng, c).iter().map(|v| 1.0 + 0.5 * v).collect();
    let b0 = randn(rng, c);
    let r = randn(rng, nx);
    let all = [x0.clone(), g0.clone(), b0].concat();
    let obj = |v: &[f64]| {
        let (y, _) = instance_norm_forward(&t(c, s, v[..nx].to_vec()), &v[nx..nx + c], &v[nx + c..]);
        dot(y.data(), &r)
    };
    let num = numeric_grad(obj, &all);
    let (_, cache) = instance_norm_forward(&t(c, s, x0), &g0, &all[nx + c..]);
    let mut dg = vec![0.0; c];
    let mut db = vec![0.0; c];
    let dx = instance_norm_backward(&cache, &g0, &t(c, s, r.clone()), &mut dg, &mut db);
    GradCheck {
        layer: "instance_norm",
        shape: format!("{c}x{s:?}"),
        rel_err: relative_error(&[dx.into_data(), dg, db].concat(), &num),
    }
}

fn check_pointwise(
    rng: &mut ChaCha8Rng,
    layer: &'static str,
    n: usize,
    f: fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
) -> GradCheck {
    let x0 = away_from_zero(rng, n).iter().map(|v| 3.0 * v).collect::<Vec<_>>();
    let r = randn(rng, n);
    let num = numeric_grad(|v| v.iter().zip(&r).map(|(&a, &b)| f(a) * b).sum(), &x0);
    let ana: Vec<f64> = x0.iter().zip(&r).map(|(&a, &b)| df(a) * b).collect();
    GradCheck {
        layer,
        shape: format!("{n}"),
        rel_err: relative_error(&ana, &num),
    }
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.05..0.95)).collect()
}

fn random_target(rng: &mut ChaCha8Rng, s: [usize; 3]) -> Tensor<f64> {
    let labels: Vec<u8> = (0..s.iter().product::<usize>()).map(|_| rng.random_range(0..4)).collect();
    one_hot(&labels, s, 4).expect("labels in range")
}

type LossFn = fn(&Tensor<f64>, &Tensor<f64>) -> crate::error::Result<(f64, Tensor<f64>)>;

fn check_loss(rng: &mut ChaCha8Rng, layer: &'static str, s: [usize; 3], f: LossFn) -> GradCheck {
    let n = 4 * s.iter().product::<usize>();
    let p0 = random_probs(rng, n);
    let q = random_target(rng, s);
    let num = numeric_grad(|v| f(&t(4, s, v.to_vec()), &q).expect("loss").0, &p0);
    let (_, g) = f(&t(4, s, p0), &q).expect("loss");
    GradCheck {
        layer,
        shape: format!("4x{s:?}"),
        rel_err: relative_error(g.data(), &num),
    }
}

fn check_network(rng: &mut ChaCha8Rng, cfg: NetworkConfig, s: [usize; 3], seed: u64) -> GradCheck {
    let mut w = Weights::<f64>::init(&cfg, seed).expect("valid config");
    // Perturb affine norm terms so they are not at their trivial init.
    for p in w.params.iter_mut() {
        for v in p.data.iter_mut() {
            *v += 0.05 * rng.random_range(-1.0..1.0);
        }
    }
    let nx = cfg.in_channels * s.iter().product::<usize>();
    let x0 = randn(rng, nx);
    let q = random_target(rng, s);
    let x = t(cfg.in_channels, s, x0.clone());
    let tape = forward_tape(&w, &x).expect("forward");
    let (_, dp) = loss(tape.probs(), &q).expect("loss");
    let mut grads = w.zeros_like();
    let dx = backward(&w, tape, &dp, &mut grads, true).expect("input grad");
    let ana: Vec<f64> = grads.0.iter().flatten().copied().chain(dx.into_data()).collect();

    let sizes: Vec<usize> = w.params.iter().map(|p| p.data.len()).collect();
    let flat: Vec<f64> = w.params.iter().flat_map(|p| p.data.clone()).chain(x0).collect();
    let obj = |v: &[f64]| {
        let mut wv = w.clone();
        let mut off = 0;
        for (p, &n) in wv.params.iter_mut().zip(&sizes) {
            p.data.copy_from_slice(&v[off..off + n]);
            off += n;
        }
        let probs = forward(&wv, &t(cfg.in_channels, s, v[off..].to_vec())).expect("forward");
        loss(&probs, &q).expect("loss").0.total()
    };
    let num = numeric_grad(obj, &flat);
    GradCheck {
        layer: "network",
        shape: format!("{:?} in{} stages{} {s:?}", cfg.dimensionality, cfg.in_channels, cfg.stages),
        rel_err: relative_error(&ana, &num),
    }
}

/// Every layer and both loss terms on at least five random shapes each.
pub fn check_all(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let c2 = |stride| ConvGeom { kernel: [1, 3, 3], stride: [1, stride, stride], pad: [0, 1, 1] };
    let c3 = |stride| ConvGeom { kernel: [3; 3], stride: [stride; 3], pad: [1; 3] };
    let point = ConvGeom { kernel: [1; 3], stride: [1; 3], pad: [0; 3] };
    for (ci, co, s, g) in [
        (1, 2, [1, 5, 6], c2(1)),
        (2, 3, [1, 6, 4], c2(2)),
        (2, 2, [3, 4, 5], c3(1)),
        (3, 2, [4, 4, 2], c3(2)),
        (3, 4, [2, 3, 3], point),
        (2, 1, [1, 7, 3], c2(2)),
    ] {
        out.push(check_conv(&mut rng, ci, co, s, g));
    }
    for (ci, co, s, f) in [
        (2, 3, [1, 2, 3], [1, 2, 2]),
        (3, 1, [1, 3, 3], [1, 2, 2]),
        (1, 2, [2, 2, 2], [2, 2, 2]),
        (2, 2, [1, 3, 2], [2, 2, 2]),
        (4, 3, [2, 1, 2], [2, 2, 2]),
    ] {
        out.push(check_tconv(&mut rng, ci, co, s, f));
    }
    for (c, s) in [(1, [1, 4, 4]), (2, [1, 3, 5]), (3, [2, 3, 2]), (2, [3, 3, 3]), (4, [1, 2, 7])] {
        out.push(check_norm(&mut rng, c, s));
    }
    for n in [3, 8, 17, 32, 65] {
        out.push(check_pointwise(&mut rng, "leaky_relu", n, leaky_relu, leaky_relu_grad));
        out.push(check_pointwise(&mut rng, "sigmoid", n, sigmoid, |v| sigmoid(v) * (1.0 - sigmoid(v))));
    }
    for s in [[1, 3, 3], [1, 4, 6], [2, 3, 4], [3, 3, 3], [1, 1, 9]] {
        out.push(check_loss(&mut rng, "soft_dice", s, soft_dice::<f64>));
        out.push(check_loss(&mut rng, "bce", s, bce::<f64>));
    }
    for (k, (dim, ci, stages, s)) in [
        (Dimensionality::TwoD, 1, 1, [1, 4, 4]),
        (Dimensionality::TwoD, 4, 2, [1, 8, 4]),
        (Dimensionality::ThreeD, 2, 1, [2, 2, 4]),
        (Dimensionality::ThreeD, 7, 1, [2, 4, 2]),
        (Dimensionality::TwoD, 2, 1, [1, 6, 2]),
    ]
    .into_iter()
    .enumerate()
    {
        let cfg = NetworkConfig::new(dim, ci, stages).with_features(2, 4);
        out.push(check_network(&mut rng, cfg, s, seed + k as u64));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_gradient_matches_finite_differences() {
        let checks = check_all(17);
        let layers = ["conv", "transpose_conv", "instance_norm", "leaky_relu", "sigmoid", "soft_dice", "bce", "network"];
        for l in layers {
            assert!(checks.iter().filter(|c| c.layer == l).count() >= 5, "{l}");
        }
        for c in &checks {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn relative_error_of_identical_vectors_is_zero() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
