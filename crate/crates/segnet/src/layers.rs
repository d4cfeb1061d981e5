//! Layer primitives on single-instance tensors. Each backward pass
//! accumulates parameter gradients into caller-provided buffers so a
//! minibatch can be summed without extra allocation.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const NORM_EPS: f64 = 1e-5;

/// Kernel, stride and zero padding per spatial axis `[D, H, W]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }

    pub fn out_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = input[a] + 2 * self.pad[a];
            if span < self.kernel[a] || self.stride[a] == 0 {
                return Err(Error::Shape(format!(
                    "input {input:?} too small for kernel {:?} with padding {:?}",
                    self.kernel, self.pad
                )));
            }
            out[a] = (span - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

/// Valid output positions `lo..hi` along one axis for kernel tap `k`.
fn valid_range(n_in: usize, n_out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // input index i = o*stride + k - pad must lie in [0, n_in)
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if n_in + pad > k {
        ((n_in + pad - k - 1) / stride + 1).min(n_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Row `((c*kd + a)*kh + b)*kw + e` of the column matrix holds the input
/// value seen by tap `(a, b, e)` of channel `c` at every output voxel.
fn im2col<T: Real>(x: &Tensor<T>, g: &ConvGeom, out: [usize; 3]) -> Vec<T> {
    let [d, h, w] = x.spatial();
    let [od, oh, ow] = out;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let n_out = od * oh * ow;
    let mut cols = vec![T::zero(); x.channels() * g.taps() * n_out];
    let mut row = 0;
    for c in 0..x.channels() {
        let xc = x.channel(c);
        for a in 0..kd {
            let (z0, z1) = valid_range(d, od, a, sd, pd);
            for b in 0..kh {
                let (y0, y1) = valid_range(h, oh, b, sh, ph);
                for e in 0..kw {
                    let (x0, x1) = valid_range(w, ow, e, sw, pw);
                    let dst = &mut cols[row * n_out..(row + 1) * n_out];
                    for oz in z0..z1 {
                        let iz = oz * sd + a - pd;
                        for oy in y0..y1 {
                            let iy = oy * sh + b - ph;
                            let src = (iz * h + iy) * w;
                            let o = (oz * oh + oy) * ow;
                            if sw == 1 {
                                let ix0 = x0 + e - pw;
                                dst[o + x0..o + x1].copy_from_slice(&xc[src + ix0..src + ix0 + (x1 - x0)]);
                            } else {
                                for ox in x0..x1 {
                                    dst[o + ox] = xc[src + ox * sw + e - pw];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto the input grid.
fn col2im<T: Real>(cols: &[T], channels: usize, input: [usize; 3], g: &ConvGeom, out: [usize; 3]) -> Tensor<T> {
    let [d, h, w] = input;
    let [od, oh, ow] = out;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let n_out = od * oh * ow;
    let mut dx = Tensor::zeros(channels, input);
    let mut row = 0;
    for c in 0..channels {
        let xc = dx.channel_mut(c);
        for a in 0..kd {
            let (z0, z1) = valid_range(d, od, a, sd, pd);
            for b in 0..kh {
                let (y0, y1) = valid_range(h, oh, b, sh, ph);
                for e in 0..kw {
                    let (x0, x1) = valid_range(w, ow, e, sw, pw);
                    let src = &cols[row * n_out..(row + 1) * n_out];
                    for oz in z0..z1 {
                        let iz = oz * sd + a - pd;
                        for oy in y0..y1 {
                            let iy = oy * sh + b - ph;
                            let dst = (iz * h + iy) * w;
                            let o = (oz * oh + oy) * ow;
                            for ox in x0..x1 {
                                xc[dst + ox * sw + e - pw] += src[o + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    dx
}

fn axpy<T: Real>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Dot product with eight independent partial sums so it vectorises.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = acc.iter().fold(T::zero(), |s, &v| s + v);
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// Zero-bordered layout for stride-1 convolution. With `pad` voxels of zeros
/// on every side, each kernel tap is a constant shift of the flat index, so a
/// whole channel is one multiply-add over the span of interior voxels.
struct Bordered {
    dims: [usize; 3],
    pad: [usize; 3],
    padded: [usize; 3],
    /// Flat range from the first to the last interior voxel.
    span: std::ops::Range<usize>,
}

impl Bordered {
    fn new(dims: [usize; 3], pad: [usize; 3]) -> Self {
        let padded = [0, 1, 2].map(|a| dims[a] + 2 * pad[a]);
        let at = |z: usize, y: usize, x: usize| (z * padded[1] + y) * padded[2] + x;
        let first = at(pad[0], pad[1], pad[2]);
        let last = at(pad[0] + dims[0] - 1, pad[1] + dims[1] - 1, pad[2] + dims[2] - 1);
        Bordered {
            dims,
            pad,
            padded,
            span: first..last + 1,
        }
    }

    fn len(&self) -> usize {
        self.padded.iter().product()
    }

    /// Flat offset of tap `t` relative to the output voxel, shifted by the
    /// padding so it is never negative.
    fn tap_offset(&self, t: [usize; 3]) -> usize {
        (t[0] * self.padded[1] + t[1]) * self.padded[2] + t[2]
    }

    fn origin_offset(&self) -> usize {
        self.tap_offset(self.pad)
    }

    fn embed<T: Real>(&self, x: &Tensor<T>) -> Vec<Vec<T>> {
        let [d, h, w] = self.dims;
        (0..x.channels())
            .map(|c| {
                let mut buf = vec![T::zero(); self.len()];
                let xc = x.channel(c);
                for z in 0..d {
                    for y in 0..h {
                        let dst = ((z + self.pad[0]) * self.padded[1] + y + self.pad[1]) * self.padded[2] + self.pad[2];
                        buf[dst..dst + w].copy_from_slice(&xc[(z * h + y) * w..(z * h + y + 1) * w]);
                    }
                }
                buf
            })
            .collect()
    }

    fn extract<T: Real>(&self, buf: &[T], dst: &mut [T]) {
        let [d, h, w] = self.dims;
        for z in 0..d {
            for y in 0..h {
                let src = ((z + self.pad[0]) * self.padded[1] + y + self.pad[1]) * self.padded[2] + self.pad[2];
                dst[(z * h + y) * w..(z * h + y + 1) * w].copy_from_slice(&buf[src..src + w]);
            }
        }
    }
}

fn taps_of(g: &ConvGeom) -> impl Iterator<Item = [usize; 3]> {
    let [kd, kh, kw] = g.kernel;
    (0..kd).flat_map(move |a| (0..kh).flat_map(move |b| (0..kw).map(move |e| [a, b, e])))
}

/// Output voxels per tile of the direct kernels; a tile of accumulators
/// stays in L1 while every input channel and tap is added into it.
const TILE: usize = 512;
/// Output span (in voxels) whose gradient stays in L1 while the weight
/// gradient sweeps every input channel and tap.
const DW_CHUNK: usize = 2048;

/// `out[i] = Σ_j Σ_t k(j, t) · src[j][i + offs[t] - back]` over the span.
/// `back` keeps the index arithmetic unsigned.
fn gather<T: Real>(out: &mut [T], span: std::ops::Range<usize>, srcs: &[Vec<T>], k: impl Fn(usize, usize) -> T, offs: &[usize], back: usize) {
    let mut i = span.start;
    while i < span.end {
        let n = TILE.min(span.end - i);
        let tile = &mut out[i..i + n];
        tile.fill(T::zero());
        for (j, src) in srcs.iter().enumerate() {
            for (t, &off) in offs.iter().enumerate() {
                let from = i + off - back;
                axpy(tile, k(j, t), &src[from..from + n]);
            }
        }
        i += n;
    }
}

/// Stride-1 "same" convolution by shifted multiply-adds in the bordered
/// layout; adds into `y`.
fn direct_forward<T: Real>(x: &Tensor<T>, w: &[T], co: usize, g: &ConvGeom, y: &mut Tensor<T>) {
    let ci = x.channels();
    let taps = g.taps();
    let lay = Bordered::new(x.spatial(), g.pad);
    let xs = lay.embed(x);
    let shift = lay.origin_offset();
    let offs: Vec<usize> = taps_of(g).map(|t| lay.tap_offset(t)).collect();
    let mut acc = vec![T::zero(); lay.len()];
    let mut plane = vec![T::zero(); x.voxels()];
    for o in 0..co {
        let wo = &w[o * ci * taps..(o + 1) * ci * taps];
        gather(&mut acc, lay.span.clone(), &xs, |c, t| wo[c * taps + t], &offs, shift);
        lay.extract(&acc, &mut plane);
        for (v, &p) in y.channel_mut(o).iter_mut().zip(&plane) {
            *v += p;
        }
    }
}

fn direct_backward<T: Real>(x: &Tensor<T>, w: &[T], g: &ConvGeom, dy: &Tensor<T>, dw: &mut [T], dx: Option<&mut Tensor<T>>) {
    let ci = x.channels();
    let taps = g.taps();
    let lay = Bordered::new(x.spatial(), g.pad);
    let xs = lay.embed(x);
    let dys = lay.embed(dy);
    let span = lay.span.clone();
    let shift = lay.origin_offset();
    let offs: Vec<usize> = taps_of(g).map(|t| lay.tap_offset(t)).collect();
    for (o, dyc) in dys.iter().enumerate() {
        let dwo = &mut dw[o * ci * taps..(o + 1) * ci * taps];
        let mut i = span.start;
        while i < span.end {
            let n = DW_CHUNK.min(span.end - i);
            let g_out = &dyc[i..i + n];
            for (c, xc) in xs.iter().enumerate() {
                for (t, &off) in offs.iter().enumerate() {
                    dwo[c * taps + t] += dot(g_out, &xc[i + off - shift..i + off - shift + n]);
                }
            }
            i += n;
        }
    }
    if let Some(dx) = dx {
        // Transposed taps: dx[i] gathers dy[i + shift - off], i.e. offsets
        // mirrored about the kernel centre.
        let mirrored: Vec<usize> = offs.iter().map(|&off| 2 * shift - off).collect();
        let mut acc = vec![T::zero(); lay.len()];
        for c in 0..ci {
            gather(&mut acc, span.clone(), &dys, |o, t| w[(o * ci + c) * taps + t], &mirrored, shift);
            lay.extract(&acc, dx.channel_mut(c));
        }
    }
}

/// Direct convolution pays off for "same" stride-1 kernels with few channels
/// on large grids; elsewhere im2col feeds a better-shaped matrix product.
fn use_direct(g: &ConvGeom, ci: usize, co: usize, spatial: [usize; 3]) -> bool {
    let same = (0..3).all(|a| g.kernel[a] == 2 * g.pad[a] + 1);
    g.stride == [1; 3] && !g.is_pointwise() && same && ci * co <= 1024 && spatial.iter().product::<usize>() >= 4096
}

/// Convolution with weights `[co, ci, kd, kh, kw]` and bias `[co]`.
pub fn conv_forward<T: Real>(x: &Tensor<T>, w: &[T], b: &[T], co: usize, g: &ConvGeom) -> Result<Tensor<T>> {
    let ci = x.channels();
    let k = ci * g.taps();
    if w.len() != co * k || b.len() != co {
        return Err(Error::Shape(format!(
            "conv weights {}+{} do not match {co}x{ci}x{:?}",
            w.len(),
            b.len(),
            g.kernel
        )));
    }
    let out = g.out_dims(x.spatial())?;
    let n = out.iter().product::<usize>();
    let mut y = Tensor::zeros(co, out);
    for (o, &bias) in b.iter().enumerate() {
        y.channel_mut(o).fill(bias);
    }
    if use_direct(g, ci, co, x.spatial()) {
        direct_forward(x, w, co, g, &mut y);
        return Ok(y);
    }
    let owned;
    let cols: &[T] = if g.is_pointwise() {
        x.data()
    } else {
        owned = im2col(x, g, out);
        &owned
    };
    T::gemm(co, k, n, T::one(), w, k as isize, 1, cols, n as isize, 1, T::one(), y.data_mut(), n as isize, 1);
    Ok(y)
}

/// Returns `dx` when `need_dx`; `dw` and `db` are accumulated.
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    co: usize,
    g: &ConvGeom,
    dy: &Tensor<T>,
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Tensor<T>> {
    let ci = x.channels();
    let k = ci * g.taps();
    let out = dy.spatial();
    let n = dy.voxels();
    for (o, acc) in db.iter_mut().enumerate() {
        *acc += dy.channel(o).iter().copied().sum::<T>();
    }
    if use_direct(g, ci, dy.channels(), x.spatial()) {
        let mut dx = need_dx.then(|| Tensor::zeros(ci, x.spatial()));
        direct_backward(x, w, g, dy, dw, dx.as_mut());
        return dx;
    }
    let owned;
    let cols: &[T] = if g.is_pointwise() {
        x.data()
    } else {
        owned = im2col(x, g, out);
        &owned
    };
    // dw[co, k] += dy[co, n] * cols[k, n]^T
    T::gemm(co, n, k, T::one(), dy.data(), n as isize, 1, cols, 1, n as isize, T::one(), dw, k as isize, 1);
    if !need_dx {
        return None;
    }
    // dcols[k, n] = w[co, k]^T * dy[co, n]
    let mut dcols = vec![T::zero(); k * n];
    T::gemm(k, co, n, T::one(), w, 1, k as isize, dy.data(), n as isize, 1, T::zero(), &mut dcols, n as isize, 1);
    if g.is_pointwise() {
        return Some(Tensor::from_vec(ci, x.spatial(), dcols).expect("pointwise shape"));
    }
    Some(col2im(&dcols, ci, x.spatial(), g, out))
}

/// Transposed convolution whose kernel equals its stride (no overlap), with
/// weights `[ci, co, fd, fh, fw]` and bias `[co]`.
pub fn tconv_forward<T: Real>(x: &Tensor<T>, w: &[T], b: &[T], co: usize, factor: [usize; 3]) -> Result<Tensor<T>> {
    let ci = x.channels();
    let taps: usize = factor.iter().product();
    if w.len() != ci * co * taps || b.len() != co {
        return Err(Error::Shape(format!(
            "transpose conv weights {}+{} do not match {ci}x{co}x{factor:?}",
            w.len(),
            b.len()
        )));
    }
    let [d, h, wd] = x.spatial();
    let n = d * h * wd;
    let m = co * taps;
    let mut ycols = vec![T::zero(); m * n];
    T::gemm(m, ci, n, T::one(), w, 1, m as isize, x.data(), n as isize, 1, T::zero(), &mut ycols, n as isize, 1);
    let out = [d * factor[0], h * factor[1], wd * factor[2]];
    let mut y = Tensor::zeros(co, out);
    scatter_blocks(&ycols, co, [d, h, wd], factor, |dst, v| *dst = v, &mut y);
    for (o, &bias) in b.iter().enumerate() {
        y.channel_mut(o).iter_mut().for_each(|v| *v += bias);
    }
    Ok(y)
}

fn scatter_blocks<T: Real>(
    cols: &[T],
    co: usize,
    input: [usize; 3],
    f: [usize; 3],
    op: impl Fn(&mut T, T),
    y: &mut Tensor<T>,
) {
    let [d, h, w] = input;
    let n = d * h * w;
    let (oh, ow) = (h * f[1], w * f[2]);
    let mut row = 0;
    for o in 0..co {
        let yc = y.channel_mut(o);
        for a in 0..f[0] {
            for b in 0..f[1] {
                for e in 0..f[2] {
                    let src = &cols[row * n..(row + 1) * n];
                    for z in 0..d {
                        for yy in 0..h {
                            let base = ((z * f[0] + a) * oh + yy * f[1] + b) * ow + e;
                            let s = (z * h + yy) * w;
                            for x in 0..w {
                                op(&mut yc[base + x * f[2]], src[s + x]);
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn gather_blocks<T: Real>(dy: &Tensor<T>, input: [usize; 3], f: [usize; 3]) -> Vec<T> {
    let [d, h, w] = input;
    let n = d * h * w;
    let co = dy.channels();
    let (oh, ow) = (h * f[1], w * f[2]);
    let taps: usize = f.iter().product();
    let mut cols = vec![T::zero(); co * taps * n];
    let mut row = 0;
    for o in 0..co {
        let yc = dy.channel(o);
        for a in 0..f[0] {
            for b in 0..f[1] {
                for e in 0..f[2] {
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for z in 0..d {
                        for yy in 0..h {
                            let base = ((z * f[0] + a) * oh + yy * f[1] + b) * ow + e;
                            let s = (z * h + yy) * w;
                            for x in 0..w {
                                dst[s + x] = yc[base + x * f[2]];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    cols
}

pub fn tconv_backward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    factor: [usize; 3],
    dy: &Tensor<T>,
    dw: &mut [T],
    db: &mut [T],
) -> Tensor<T> {
    let ci = x.channels();
    let co = dy.channels();
    let m = co * factor.iter().product::<usize>();
    let n = x.voxels();
    for (o, acc) in db.iter_mut().enumerate() {
        *acc += dy.channel(o).iter().copied().sum::<T>();
    }
    let dcols = gather_blocks(dy, x.spatial(), factor);
    // dw[ci, m] += x[ci, n] * dcols[m, n]^T
    T::gemm(ci, n, m, T::one(), x.data(), n as isize, 1, &dcols, 1, n as isize, T::one(), dw, m as isize, 1);
    let mut dx = Tensor::zeros(ci, x.spatial());
    T::gemm(ci, m, n, T::one(), w, m as isize, 1, &dcols, n as isize, 1, T::zero(), dx.data_mut(), n as isize, 1);
    dx
}

/// Normalised activations and per-channel `1/sqrt(var + eps)`.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

pub fn instance_norm_forward<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> (Tensor<T>, NormCache<T>) {
    let n = x.voxels() as f64;
    let mut xhat = Tensor::zeros(x.channels(), x.spatial());
    let mut y = Tensor::zeros(x.channels(), x.spatial());
    let mut inv_std = Vec::with_capacity(x.channels());
    for c in 0..x.channels() {
        let xc = x.channel(c);
        let mean = xc.iter().map(|v| v.f64()).sum::<f64>() / n;
        let var = xc.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        let (m, s) = (T::lit(mean), T::lit(is));
        for (h, &v) in xhat.channel_mut(c).iter_mut().zip(xc) {
            *h = (v - m) * s;
        }
        for (o, &h) in y.channel_mut(c).iter_mut().zip(xhat.channel(c)) {
            *o = gamma[c] * h + beta[c];
        }
        inv_std.push(s);
    }
    (y, NormCache { xhat, inv_std })
}

pub fn instance_norm_backward<T: Real>(
    cache: &NormCache<T>,
    gamma: &[T],
    dy: &Tensor<T>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Tensor<T> {
    let n = dy.voxels();
    let nf = T::lit(n as f64);
    let mut dx = Tensor::zeros(dy.channels(), dy.spatial());
    for c in 0..dy.channels() {
        let (g, xh) = (dy.channel(c), cache.xhat.channel(c));
        let sum_g = g.iter().map(|v| v.f64()).sum::<f64>();
        let sum_gx = g.iter().zip(xh).map(|(a, b)| a.f64() * b.f64()).sum::<f64>();
        dgamma[c] += T::lit(sum_gx);
        dbeta[c] += T::lit(sum_g);
        // dxhat = g * gamma; dx = inv_std/N * (N dxhat - sum dxhat - xhat sum(dxhat xhat))
        let (sg, sgx) = (T::lit(sum_g) * gamma[c], T::lit(sum_gx) * gamma[c]);
        let k = cache.inv_std[c] / nf;
        for ((o, &gi), &h) in dx.channel_mut(c).iter_mut().zip(g).zip(xh) {
            *o = k * (nf * gi * gamma[c] - sg - h * sgx);
        }
    }
    dx
}

pub fn leaky_relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * T::lit(LEAKY_SLOPE)
    }
}

pub fn leaky_relu_grad<T: Real>(pre: T) -> T {
    if pre > T::zero() {
        T::one()
    } else {
        T::lit(LEAKY_SLOPE)
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor<f64>, w: &[f64], b: &[f64], co: usize, g: &ConvGeom) -> Tensor<f64> {
        let [d, h, wd] = x.spatial();
        let out = g.out_dims(x.spatial()).unwrap();
        let mut y = Tensor::zeros(co, out);
        let [kd, kh, kw] = g.kernel;
        for o in 0..co {
            for oz in 0..out[0] {
                for oy in 0..out[1] {
                    for ox in 0..out[2] {
                        let mut acc = b[o];
                        for c in 0..x.channels() {
                            for a in 0..kd {
                                for bb in 0..kh {
                                    for e in 0..kw {
                                        let iz = (oz * g.stride[0] + a) as isize - g.pad[0] as isize;
                                        let iy = (oy * g.stride[1] + bb) as isize - g.pad[1] as isize;
                                        let ix = (ox * g.stride[2] + e) as isize - g.pad[2] as isize;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        let xv = x.channel(c)[(iz as usize * h + iy as usize) * wd + ix as usize];
                                        acc += w[(((o * x.channels() + c) * kd + a) * kh + bb) * kw + e] * xv;
                                    }
                                }
                            }
                        }
                        y.channel_mut(o)[(oz * out[1] + oy) * out[2] + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(c: usize, s: [usize; 3], k: f64) -> Tensor<f64> {
        let n = c * s.iter().product::<usize>();
        Tensor::from_vec(c, s, (0..n).map(|i| ((i as f64) * k).sin()).collect()).unwrap()
    }

    #[test]
    fn conv_matches_naive_loops() {
        let cases = [
            (ConvGeom { kernel: [3; 3], stride: [1; 3], pad: [1; 3] }, [4, 5, 6]),
            (ConvGeom { kernel: [3; 3], stride: [2; 3], pad: [1; 3] }, [4, 6, 8]),
            (ConvGeom { kernel: [1, 3, 3], stride: [1, 2, 2], pad: [0, 1, 1] }, [1, 7, 6]),
            (ConvGeom { kernel: [1; 3], stride: [1; 3], pad: [0; 3] }, [2, 3, 3]),
        ];
        for (g, s) in cases {
            let x = ramp(2, s, 0.3);
            let co = 3;
            let w: Vec<f64> = (0..co * 2 * g.taps()).map(|i| (i as f64 * 0.7).cos()).collect();
            let b = [0.1, -0.2, 0.3];
            let y = conv_forward(&x, &w, &b, co, &g).unwrap();
            let want = naive_conv(&x, &w, &b, co, &g);
            assert_eq!(y.spatial(), want.spatial());
            for (p, q) in y.data().iter().zip(want.data()) {
                assert!((p - q).abs() < 1e-12, "{g:?}");
            }
        }
    }

    #[test]
    fn direct_path_matches_naive_and_im2col() {
        for (g, s) in [
            (ConvGeom { kernel: [3; 3], stride: [1; 3], pad: [1; 3] }, [3, 5, 4]),
            (ConvGeom { kernel: [1, 3, 3], stride: [1; 3], pad: [0, 1, 1] }, [1, 6, 9]),
        ] {
            let (ci, co) = (2, 3);
            let x = ramp(ci, s, 0.3);
            let w: Vec<f64> = (0..co * ci * g.taps()).map(|i| (i as f64 * 0.7).cos()).collect();
            let dy = ramp(co, s, 0.11);
            let mut y = Tensor::zeros(co, s);
            direct_forward(&x, &w, co, &g, &mut y);
            let want_y = naive_conv(&x, &w, &[0.0; 3], co, &g);
            for (p, q) in y.data().iter().zip(want_y.data()) {
                assert!((p - q).abs() < 1e-10);
            }
            let mut dw = vec![0.0; w.len()];
            let mut dx = Tensor::zeros(ci, s);
            direct_backward(&x, &w, &g, &dy, &mut dw, Some(&mut dx));

            let n = dy.voxels();
            let k = ci * g.taps();
            let cols = im2col(&x, &g, s);
            let mut dcols = vec![0.0; k * n];
            for r in 0..k {
                for o in 0..co {
                    let want: f64 = (0..n).map(|v| dy.channel(o)[v] * cols[r * n + v]).sum();
                    assert!((dw[o * k + r] - want).abs() < 1e-10);
                    for v in 0..n {
                        dcols[r * n + v] += w[o * k + r] * dy.channel(o)[v];
                    }
                }
            }
            let want_dx = col2im(&dcols, ci, s, &g, s);
            for (p, q) in dx.data().iter().zip(want_dx.data()) {
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dispatched_conv_matches_naive_on_large_grid() {
        let g = ConvGeom { kernel: [3; 3], stride: [1; 3], pad: [1; 3] };
        let s = [9, 23, 25];
        let (ci, co) = (3, 4);
        assert!(use_direct(&g, ci, co, s));
        let x = ramp(ci, s, 0.37);
        let w: Vec<f64> = (0..co * ci * g.taps()).map(|i| (i as f64 * 0.71).cos()).collect();
        let b = [0.1, -0.2, 0.3, 0.0];
        let y = conv_forward(&x, &w, &b, co, &g).unwrap();
        let want = naive_conv(&x, &w, &b, co, &g);
        for (p, q) in y.data().iter().zip(want.data()) {
            assert!((p - q).abs() < 1e-9);
        }

        let dy = ramp(co, s, 0.13);
        let (mut dw, mut db) = (vec![0.0; w.len()], vec![0.0; co]);
        let dx = conv_backward(&x, &w, co, &g, &dy, &mut dw, &mut db, true).unwrap();
        let n = dy.voxels();
        let k = ci * g.taps();
        let cols = im2col(&x, &g, s);
        let mut dcols = vec![0.0; k * n];
        for o in 0..co {
            assert!((db[o] - dy.channel(o).iter().sum::<f64>()).abs() < 1e-9);
            for r in 0..k {
                let want: f64 = (0..n).map(|v| dy.channel(o)[v] * cols[r * n + v]).sum();
                assert!((dw[o * k + r] - want).abs() < 1e-8);
                for v in 0..n {
                    dcols[r * n + v] += w[o * k + r] * dy.channel(o)[v];
                }
            }
        }
        let want_dx = col2im(&dcols, ci, s, &g, s);
        for (p, q) in dx.data().iter().zip(want_dx.data()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn single_conv_output_shape_halves_with_stride() {
        let g = ConvGeom { kernel: [3; 3], stride: [2; 3], pad: [1; 3] };
        assert_eq!(g.out_dims([8, 16, 6]).unwrap(), [4, 8, 3]);
    }

    #[test]
    fn tconv_places_each_input_into_its_block() {
        let x = Tensor::from_vec(1, [1, 1, 2], vec![1.0, 2.0]).unwrap();
        let w = [10.0, 20.0, 30.0, 40.0];
        let y = tconv_forward(&x, &w, &[0.5], 1, [1, 2, 2]).unwrap();
        assert_eq!(y.spatial(), [1, 2, 4]);
        assert_eq!(y.data(), &[10.5, 20.5, 20.5, 40.5, 30.5, 40.5, 60.5, 80.5]);
    }

    #[test]
    fn instance_norm_standardises_each_channel() {
        let x = ramp(3, [2, 4, 5], 1.3).map(|v| 5.0 * v + 2.0);
        let (_, cache) = instance_norm_forward(&x, &[1.0; 3], &[0.0; 3]);
        for c in 0..3 {
            let h = cache.xhat.channel(c);
            let n = h.len() as f64;
            let mean = h.iter().sum::<f64>() / n;
            let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn activations() {
        assert_eq!(leaky_relu(2.0), 2.0);
        assert_eq!(leaky_relu(-2.0), -0.02);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) <= 1.0);
    }
}
