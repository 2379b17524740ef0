//! Layers with explicit forward/backward passes. Each layer caches what its
//! backward pass needs when called with `train = true`; gradients accumulate
//! into the layer's [`Param`]s.

use rand_distr::{Distribution, StandardNormal};

use super::tensor::{join, matmul, Param, Parameters, Real, Tensor};
use crate::rng;

fn normal_init<T: Real>(len: usize, std: f64, seed: u64) -> Vec<T> {
    let mut r = rng::rng(seed);
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            T::from_f64(z * std)
        })
        .collect()
}

/// Weight initialization seed for the parameter at `path`.
pub(crate) fn init_seed(root: u64, path: &str) -> u64 {
    rng::substream(root, path)
}

fn im2col3<T: Real>(x: &[T], cin: usize, dims: [usize; 3], col: &mut [T]) {
    let [d, h, w] = dims;
    let s = d * h * w;
    for ci in 0..cin {
        let xc = &x[ci * s..(ci + 1) * s];
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut col[(ci * 27 + kz * 9 + ky * 3 + kx) * s..][..s];
                    for z in 0..d {
                        let zz = z as isize + kz as isize - 1;
                        for y in 0..h {
                            let yy = y as isize + ky as isize - 1;
                            let out = &mut row[(z * h + y) * w..][..w];
                            if zz < 0 || zz >= d as isize || yy < 0 || yy >= h as isize {
                                out.fill(T::zero());
                                continue;
                            }
                            let src = &xc[(zz as usize * h + yy as usize) * w..][..w];
                            match kx {
                                0 => {
                                    out[0] = T::zero();
                                    out[1..].copy_from_slice(&src[..w - 1]);
                                }
                                1 => out.copy_from_slice(src),
                                _ => {
                                    out[..w - 1].copy_from_slice(&src[1..]);
                                    out[w - 1] = T::zero();
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im3<T: Real>(col: &[T], cin: usize, dims: [usize; 3], dx: &mut [T]) {
    let [d, h, w] = dims;
    let s = d * h * w;
    dx.fill(T::zero());
    for ci in 0..cin {
        let xc = &mut dx[ci * s..(ci + 1) * s];
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &col[(ci * 27 + kz * 9 + ky * 3 + kx) * s..][..s];
                    for z in 0..d {
                        let zz = z as isize + kz as isize - 1;
                        if zz < 0 || zz >= d as isize {
                            continue;
                        }
                        for y in 0..h {
                            let yy = y as isize + ky as isize - 1;
                            if yy < 0 || yy >= h as isize {
                                continue;
                            }
                            let g = &row[(z * h + y) * w..][..w];
                            let dst = &mut xc[(zz as usize * h + yy as usize) * w..][..w];
                            let (dst, g) = match kx {
                                0 => (&mut dst[..w - 1], &g[1..]),
                                1 => (&mut dst[..], g),
                                _ => (&mut dst[1..], &g[..w - 1]),
                            };
                            for (a, &b) in dst.iter_mut().zip(g) {
                                *a = *a + b;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3D convolution with cubic kernel 1 or 3, stride 1 and same padding.
#[derive(Debug, Clone)]
pub struct Conv3d<T> {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
    scratch: Vec<T>,
}

impl<T: Real> Conv3d<T> {
    /// He-normal weights (or `gain`-scaled), zero bias.
    pub fn new(cin: usize, cout: usize, kernel: usize, gain: f64, seed: u64) -> Self {
        assert!(kernel == 1 || kernel == 3, "kernel must be 1 or 3");
        let fan_in = cin * kernel.pow(3);
        let std = (gain / fan_in as f64).sqrt();
        Conv3d {
            cin,
            cout,
            kernel,
            weight: Param::new(&[cout, fan_in], normal_init(cout * fan_in, std, seed)),
            bias: Param::new(&[cout], vec![T::zero(); cout]),
            input: None,
            scratch: Vec::new(),
        }
    }

    fn taps(&self) -> usize {
        self.kernel.pow(3)
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        assert_eq!(x.channels(), self.cin, "conv input channels");
        let dims = x.spatial();
        let s: usize = dims.iter().product();
        let rows = self.cin * self.taps();
        let mut y = Tensor::zeros(&[x.batch(), self.cout, dims[0], dims[1], dims[2]]);
        if self.kernel == 3 {
            self.scratch.resize(rows * s, T::zero());
        }
        for n in 0..x.batch() {
            let col: &[T] = if self.kernel == 3 {
                im2col3(x.sample(n), self.cin, dims, &mut self.scratch);
                &self.scratch
            } else {
                x.sample(n)
            };
            let out = y.sample_mut(n);
            for (co, chunk) in out.chunks_mut(s).enumerate() {
                chunk.fill(self.bias.value[co]);
            }
            matmul(self.cout, rows, s, &self.weight.value, false, col, false, out, T::one());
        }
        self.input = train.then(|| x.clone());
        y
    }

    /// Accumulates parameter gradients; returns the input gradient when `need_dx`.
    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let x = self.input.take().expect("conv backward without cached forward");
        let dims = x.spatial();
        let s: usize = dims.iter().product();
        let rows = self.cin * self.taps();
        let mut dx = need_dx.then(|| Tensor::zeros(&x.shape));
        let mut dcol = vec![T::zero(); if need_dx && self.kernel == 3 { rows * s } else { 0 }];
        if self.kernel == 3 {
            self.scratch.resize(rows * s, T::zero());
        }
        for n in 0..x.batch() {
            let g = dy.sample(n);
            for (co, chunk) in g.chunks(s).enumerate() {
                let sum = chunk.iter().fold(T::zero(), |a, &b| a + b);
                self.bias.grad[co] = self.bias.grad[co] + sum;
            }
            let col: &[T] = if self.kernel == 3 {
                im2col3(x.sample(n), self.cin, dims, &mut self.scratch);
                &self.scratch
            } else {
                x.sample(n)
            };
            matmul(self.cout, s, rows, g, false, col, true, &mut self.weight.grad, T::one());
            if let Some(dx) = dx.as_mut() {
                if self.kernel == 3 {
                    matmul(rows, self.cout, s, &self.weight.value, true, g, false, &mut dcol, T::zero());
                    col2im3(&dcol, self.cin, dims, dx.sample_mut(n));
                } else {
                    matmul(rows, self.cout, s, &self.weight.value, true, g, false, dx.sample_mut(n), T::zero());
                }
            }
        }
        dx
    }
}

impl<T: Real> Parameters<T> for Conv3d<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Group normalization with per-channel affine parameters; groups hold up to
/// eight channels.
#[derive(Debug, Clone)]
pub struct GroupNorm<T> {
    pub channels: usize,
    pub groups: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    eps: f64,
    cache: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> GroupNorm<T> {
    pub fn new(channels: usize) -> Self {
        let per_group = channels.min(8);
        let groups = if channels % per_group == 0 { channels / per_group } else { 1 };
        GroupNorm {
            channels,
            groups,
            gamma: Param::new(&[channels], vec![T::one(); channels]),
            beta: Param::new(&[channels], vec![T::zero(); channels]),
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        assert_eq!(x.channels(), self.channels);
        let s: usize = x.spatial().iter().product();
        let cpg = self.channels / self.groups;
        let m = cpg * s;
        let mut y = x.clone();
        let mut xhat = if train { vec![T::zero(); x.data.len()] } else { Vec::new() };
        let mut inv_stds = Vec::with_capacity(x.batch() * self.groups);
        let eps = T::from_f64(self.eps);
        for n in 0..x.batch() {
            let base = n * x.sample_len();
            for g in 0..self.groups {
                let range = base + g * m..base + (g + 1) * m;
                let xs = &x.data[range.clone()];
                let mean = xs.iter().fold(T::zero(), |a, &b| a + b) / T::from_f64(m as f64);
                let var = xs.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / T::from_f64(m as f64);
                let inv_std = T::one() / (var + eps).sqrt();
                inv_stds.push(inv_std);
                let ys = &mut y.data[range.clone()];
                for (ci, (ychunk, xchunk)) in ys.chunks_mut(s).zip(xs.chunks(s)).enumerate() {
                    let c = g * cpg + ci;
                    let (ga, be) = (self.gamma.value[c], self.beta.value[c]);
                    for (yv, &xv) in ychunk.iter_mut().zip(xchunk) {
                        *yv = (xv - mean) * inv_std * ga + be;
                    }
                }
                if train {
                    for (h, &xv) in xhat[range].iter_mut().zip(xs) {
                        *h = (xv - mean) * inv_std;
                    }
                }
            }
        }
        self.cache = train.then_some((xhat, inv_stds));
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (xhat, inv_stds) = self.cache.take().expect("group norm backward without cached forward");
        let s: usize = dy.spatial().iter().product();
        let cpg = self.channels / self.groups;
        let m = cpg * s;
        let mf = T::from_f64(m as f64);
        let mut dx = Tensor::zeros(&dy.shape);
        for n in 0..dy.batch() {
            let base = n * dy.sample_len();
            for g in 0..self.groups {
                let inv_std = inv_stds[n * self.groups + g];
                let range = base + g * m..base + (g + 1) * m;
                let (mut sum_dxhat, mut sum_dxhat_xhat) = (T::zero(), T::zero());
                for ci in 0..cpg {
                    let c = g * cpg + ci;
                    let off = range.start + ci * s;
                    let (mut dg, mut db) = (T::zero(), T::zero());
                    for i in off..off + s {
                        let d = dy.data[i];
                        db = db + d;
                        dg = dg + d * xhat[i];
                        let dh = d * self.gamma.value[c];
                        sum_dxhat = sum_dxhat + dh;
                        sum_dxhat_xhat = sum_dxhat_xhat + dh * xhat[i];
                    }
                    self.gamma.grad[c] = self.gamma.grad[c] + dg;
                    self.beta.grad[c] = self.beta.grad[c] + db;
                }
                for ci in 0..cpg {
                    let c = g * cpg + ci;
                    let off = range.start + ci * s;
                    for i in off..off + s {
                        let dh = dy.data[i] * self.gamma.value[c];
                        dx.data[i] = inv_std / mf * (mf * dh - sum_dxhat - xhat[i] * sum_dxhat_xhat);
                    }
                }
            }
        }
        dx
    }
}

impl<T: Real> Parameters<T> for GroupNorm<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
        self.mask = train.then(|| x.data.iter().map(|&v| v > T::zero()).collect());
        y
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mask = self.mask.take().expect("relu backward without cached forward");
        let mut dx = dy.clone();
        for (d, m) in dx.data.iter_mut().zip(mask) {
            if !m {
                *d = T::zero();
            }
        }
        dx
    }
}

/// 2×2×2 max pooling with stride 2.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    cache: Option<(Vec<usize>, Vec<u32>)>,
}

impl MaxPool2 {
    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let [d, h, w] = x.spatial();
        let (od, oh, ow) = (d / 2, h / 2, w / 2);
        assert!(od > 0 && oh > 0 && ow > 0, "max pool on too small input");
        let planes = x.batch() * x.channels();
        let mut y = Tensor::zeros(&[x.batch(), x.channels(), od, oh, ow]);
        let mut arg = if train { vec![0u32; y.data.len()] } else { Vec::new() };
        let (si, so) = (d * h * w, od * oh * ow);
        for p in 0..planes {
            let xin = &x.data[p * si..(p + 1) * si];
            for z in 0..od {
                for yy in 0..oh {
                    for xx in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_i = 0;
                        for a in 0..2 {
                            for b in 0..2 {
                                for c in 0..2 {
                                    let i = ((2 * z + a) * h + 2 * yy + b) * w + 2 * xx + c;
                                    if xin[i] > best {
                                        best = xin[i];
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        let o = p * so + (z * oh + yy) * ow + xx;
                        y.data[o] = best;
                        if train {
                            arg[o] = best_i as u32;
                        }
                    }
                }
            }
        }
        self.cache = train.then(|| (x.shape.clone(), arg));
        y
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (shape, arg) = self.cache.take().expect("max pool backward without cached forward");
        let mut dx = Tensor::zeros(&shape);
        let si: usize = shape[2..].iter().product();
        let so: usize = dy.spatial().iter().product();
        for (o, (&g, &i)) in dy.data.iter().zip(&arg).enumerate() {
            let plane = o / so;
            let k = plane * si + i as usize;
            dx.data[k] = dx.data[k] + g;
        }
        dx
    }
}

/// Transposed convolution with kernel 2 and stride 2 (doubles each axis).
#[derive(Debug, Clone)]
pub struct UpConv2<T> {
    pub cin: usize,
    pub cout: usize,
    /// Rows are `(out_channel, kz, ky, kx)`, columns input channels.
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> UpConv2<T> {
    pub fn new(cin: usize, cout: usize, seed: u64) -> Self {
        let std = (2.0 / cin as f64).sqrt();
        UpConv2 {
            cin,
            cout,
            weight: Param::new(&[cout * 8, cin], normal_init(cout * 8 * cin, std, seed)),
            bias: Param::new(&[cout], vec![T::zero(); cout]),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        assert_eq!(x.channels(), self.cin);
        let [d, h, w] = x.spatial();
        let s = d * h * w;
        let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
        let so = od * oh * ow;
        let mut y = Tensor::zeros(&[x.batch(), self.cout, od, oh, ow]);
        let mut z = vec![T::zero(); self.cout * 8 * s];
        for n in 0..x.batch() {
            matmul(self.cout * 8, self.cin, s, &self.weight.value, false, x.sample(n), false, &mut z, T::zero());
            let out = y.sample_mut(n);
            for co in 0..self.cout {
                let b = self.bias.value[co];
                for k in 0..8 {
                    let (a, bb, c) = (k >> 2, (k >> 1) & 1, k & 1);
                    let zr = &z[(co * 8 + k) * s..][..s];
                    for zz in 0..d {
                        for yy in 0..h {
                            let row = &zr[(zz * h + yy) * w..][..w];
                            let base = co * so + ((2 * zz + a) * oh + 2 * yy + bb) * ow + c;
                            for (xx, &v) in row.iter().enumerate() {
                                out[base + 2 * xx] = v + b;
                            }
                        }
                    }
                }
            }
        }
        self.input = train.then(|| x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("upconv backward without cached forward");
        let [d, h, w] = x.spatial();
        let s = d * h * w;
        let (oh, ow) = (2 * h, 2 * w);
        let so = 2 * d * oh * ow;
        let mut dx = Tensor::zeros(&x.shape);
        let mut dz = vec![T::zero(); self.cout * 8 * s];
        for n in 0..x.batch() {
            let g = dy.sample(n);
            for co in 0..self.cout {
                let sum = g[co * so..(co + 1) * so].iter().fold(T::zero(), |a, &b| a + b);
                self.bias.grad[co] = self.bias.grad[co] + sum;
                for k in 0..8 {
                    let (a, bb, c) = (k >> 2, (k >> 1) & 1, k & 1);
                    let zr = &mut dz[(co * 8 + k) * s..][..s];
                    for zz in 0..d {
                        for yy in 0..h {
                            let row = &mut zr[(zz * h + yy) * w..][..w];
                            let base = co * so + ((2 * zz + a) * oh + 2 * yy + bb) * ow + c;
                            for (xx, v) in row.iter_mut().enumerate() {
                                *v = g[base + 2 * xx];
                            }
                        }
                    }
                }
            }
            matmul(self.cout * 8, s, self.cin, &dz, false, x.sample(n), true, &mut self.weight.grad, T::one());
            matmul(self.cin, self.cout * 8, s, &self.weight.value, true, &dz, false, dx.sample_mut(n), T::zero());
        }
        dx
    }
}

impl<T: Real> Parameters<T> for UpConv2<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Fully connected layer on `[N, F]` inputs.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(fan_in: usize, fan_out: usize, gain: f64, seed: u64) -> Self {
        let std = (gain / fan_in as f64).sqrt();
        Linear {
            fan_in,
            fan_out,
            weight: Param::new(&[fan_out, fan_in], normal_init(fan_out * fan_in, std, seed)),
            bias: Param::new(&[fan_out], vec![T::zero(); fan_out]),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        assert_eq!(x.shape[1], self.fan_in, "linear input width");
        let n = x.batch();
        let mut y = Tensor::zeros(&[n, self.fan_out]);
        for row in y.data.chunks_mut(self.fan_out) {
            row.copy_from_slice(&self.bias.value);
        }
        matmul(n, self.fan_in, self.fan_out, &x.data, false, &self.weight.value, true, &mut y.data, T::one());
        self.input = train.then(|| x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("linear backward without cached forward");
        let n = x.batch();
        for row in dy.data.chunks(self.fan_out) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g = *g + d;
            }
        }
        matmul(self.fan_out, n, self.fan_in, &dy.data, true, &x.data, false, &mut self.weight.grad, T::one());
        let mut dx = Tensor::zeros(&[n, self.fan_in]);
        matmul(n, self.fan_out, self.fan_in, &dy.data, false, &self.weight.value, false, &mut dx.data, T::zero());
        dx
    }
}

impl<T: Real> Parameters<T> for Linear<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Mean over the spatial axes: `[N, C, D, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s: usize = x.spatial().iter().product();
    let inv = T::from_f64(1.0 / s as f64);
    let data = x.data.chunks(s).map(|c| c.iter().fold(T::zero(), |a, &b| a + b) * inv).collect();
    Tensor::from_vec(&[x.batch(), x.channels()], data)
}

pub fn global_avg_pool_backward<T: Real>(dy: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let s: usize = input_shape[2..].iter().product();
    let inv = T::from_f64(1.0 / s as f64);
    let mut dx = Tensor::zeros(input_shape);
    for (chunk, &g) in dx.data.chunks_mut(s).zip(&dy.data) {
        chunk.fill(g * inv);
    }
    dx
}

/// Concatenates along channels.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.batch(), b.batch());
    assert_eq!(a.spatial(), b.spatial());
    let mut shape = a.shape.clone();
    shape[1] += b.channels();
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    for n in 0..a.batch() {
        data.extend_from_slice(a.sample(n));
        data.extend_from_slice(b.sample(n));
    }
    Tensor::from_vec(&shape, data)
}

/// Inverse of [`concat_channels`] for gradients: splits off the first `ca` channels.
pub fn split_channels<T: Real>(x: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let s: usize = x.spatial().iter().product();
    let cb = x.channels() - ca;
    let [d, h, w] = x.spatial();
    let mut a = Tensor::zeros(&[x.batch(), ca, d, h, w]);
    let mut b = Tensor::zeros(&[x.batch(), cb, d, h, w]);
    for n in 0..x.batch() {
        let src = x.sample(n);
        a.sample_mut(n).copy_from_slice(&src[..ca * s]);
        b.sample_mut(n).copy_from_slice(&src[ca * s..]);
    }
    (a, b)
}

/// conv → norm → relu, twice.
#[derive(Debug, Clone)]
pub struct ConvBlock<T> {
    pub conv1: Conv3d<T>,
    pub norm1: GroupNorm<T>,
    relu1: Relu,
    pub conv2: Conv3d<T>,
    pub norm2: GroupNorm<T>,
    relu2: Relu,
}

impl<T: Real> ConvBlock<T> {
    pub fn new(cin: usize, cout: usize, seed: u64, path: &str) -> Self {
        ConvBlock {
            conv1: Conv3d::new(cin, cout, 3, 2.0, init_seed(seed, &join(path, "conv1"))),
            norm1: GroupNorm::new(cout),
            relu1: Relu::default(),
            conv2: Conv3d::new(cout, cout, 3, 2.0, init_seed(seed, &join(path, "conv2"))),
            norm2: GroupNorm::new(cout),
            relu2: Relu::default(),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let h = self.conv1.forward(x, train);
        let h = self.norm1.forward(&h, train);
        let h = self.relu1.forward(&h, train);
        let h = self.conv2.forward(&h, train);
        let h = self.norm2.forward(&h, train);
        self.relu2.forward(&h, train)
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let g = self.relu2.backward(dy);
        let g = self.norm2.backward(&g);
        let g = self.conv2.backward(&g, true).expect("inner gradient");
        let g = self.relu1.backward(&g);
        let g = self.norm1.backward(&g);
        self.conv1.backward(&g, need_dx)
    }
}

impl<T: Real> Parameters<T> for ConvBlock<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.conv1.params(&join(prefix, "conv1"), out);
        self.norm1.params(&join(prefix, "norm1"), out);
        self.conv2.params(&join(prefix, "conv2"), out);
        self.norm2.params(&join(prefix, "norm2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        self.conv1.params_mut(&join(prefix, "conv1"), out);
        self.norm1.params_mut(&join(prefix, "norm1"), out);
        self.conv2.params_mut(&join(prefix, "conv2"), out);
        self.norm2.params_mut(&join(prefix, "norm2"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv3(x: &[f64], cin: usize, dims: [usize; 3], w: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
        let [d, h, wd] = dims;
        let mut y = vec![0.0; cout * d * h * wd];
        for co in 0..cout {
            for z in 0..d {
                for yy in 0..h {
                    for xx in 0..wd {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for kz in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let (sz, sy, sx) =
                                            (z as isize + kz - 1, yy as isize + ky - 1, xx as isize + kx - 1);
                                        if sz < 0
                                            || sy < 0
                                            || sx < 0
                                            || sz >= d as isize
                                            || sy >= h as isize
                                            || sx >= wd as isize
                                        {
                                            continue;
                                        }
                                        let xi = ((ci * d + sz as usize) * h + sy as usize) * wd + sx as usize;
                                        let wi = co * cin * 27 + ci * 27 + (kz * 9 + ky * 3 + kx) as usize;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        y[((co * d + z) * h + yy) * wd + xx] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv3_matches_direct_loops() {
        let dims = [3, 4, 5];
        let (cin, cout) = (2, 3);
        let mut conv = Conv3d::<f64>::new(cin, cout, 3, 2.0, 1);
        conv.bias.value = vec![0.1, -0.2, 0.3];
        let x: Vec<f64> = (0..2 * cin * 60).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let t = Tensor::from_vec(&[2, cin, 3, 4, 5], x.clone());
        let y = conv.forward(&t, false);
        for n in 0..2 {
            let want = naive_conv3(
                &x[n * cin * 60..(n + 1) * cin * 60],
                cin,
                dims,
                &conv.weight.value,
                &conv.bias.value,
                cout,
            );
            for (a, b) in y.sample(n).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upconv_doubles_each_axis() {
        let mut up = UpConv2::<f32>::new(4, 2, 3);
        let x = Tensor::zeros(&[1, 4, 2, 3, 1]);
        let y = up.forward(&x, false);
        assert_eq!(y.shape, vec![1, 2, 4, 6, 2]);
    }

    #[test]
    fn maxpool_picks_block_max() {
        let x = Tensor::from_vec(&[1, 1, 2, 2, 2], vec![0.1f32, 0.9, 0.3, 0.2, 0.5, 0.4, 0.0, 0.8]);
        let mut p = MaxPool2::default();
        let y = p.forward(&x, true);
        assert_eq!(y.data, vec![0.9]);
        let dx = p.backward(&Tensor::from_vec(&[1, 1, 1, 1, 1], vec![2.0f32]));
        assert_eq!(dx.data, vec![0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
