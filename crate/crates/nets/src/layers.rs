//! Layers with explicit forward/backward passes. A layer caches what its
//! backward pass needs only when the forward pass runs in training mode.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use refinegan_core::pbn::{bn_forward, bn_stats, BnParams, ChannelStats, DEFAULT_EPSILON};

use crate::error::{NetError, Result};
use crate::scalar::{gemm, Op, Scalar};
use crate::tensor::Tensor;

/// Rows of im2col scratch are processed in chunks of whole slices holding at
/// most this many values (at least one slice per chunk).
const COL_BUDGET: usize = 1 << 22;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(shape: Vec<usize>, value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Self { shape, value, grad }
    }

    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![v; n])
    }

    pub fn normal<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let value = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
        Self::new(shape, value)
    }

    pub fn uniform<R: Rng>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound);
        let n = shape.iter().product();
        let value = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
        Self::new(shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// 2-D convolution over each slice, optionally reading its input through a
/// nearest-neighbour ×2 resize so the enlarged map is never materialized.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub cin: usize,
    pub cout: usize,
    pub upsample: bool,
    /// `(kernel * kernel * cin) x cout`, row index `(ky * kernel + kx) * cin + ci`.
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        kernel: usize,
        stride: usize,
        pad: usize,
        cin: usize,
        cout: usize,
        upsample: bool,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel * kernel * cin;
        let weight = Param::normal(vec![fan_in, cout], (gain / fan_in as f64).sqrt(), rng);
        let bias = bias.then(|| Param::filled(vec![cout], T::zero()));
        Self { kernel, stride, pad, cin, cout, upsample, weight, bias, cache: None }
    }

    fn in_dims(&self, x: &Tensor<T>) -> (usize, usize) {
        let f = if self.upsample { 2 } else { 1 };
        (x.height() * f, x.width() * f)
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let f = if self.upsample { 2 } else { 1 };
        let o = |d: usize| (d * f + 2 * self.pad - self.kernel) / self.stride + 1;
        (o(h), o(w))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0 && !self.upsample
    }

    fn chunk_slices(&self, oh: usize, ow: usize) -> usize {
        let per = oh * ow * self.kernel * self.kernel * self.cin;
        (COL_BUDGET / per.max(1)).max(1)
    }

    /// Source pixel feeding output `(oy, ox)` at kernel tap `(ky, kx)`.
    fn tap(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        if i < 0 || i as usize >= limit {
            None
        } else if self.upsample {
            Some(i as usize / 2)
        } else {
            Some(i as usize)
        }
    }

    fn im2col(&self, x: &Tensor<T>, n0: usize, n1: usize, col: &mut Vec<T>) {
        let (ih, iw) = self.in_dims(x);
        let (oh, ow) = self.out_dims(x.height(), x.width());
        let (k, cin) = (self.kernel, self.cin);
        let kk = k * k * cin;
        col.clear();
        col.resize((n1 - n0) * oh * ow * kk, T::zero());
        let xd = x.data();
        let (h, w) = (x.height(), x.width());
        let mut row = 0;
        for n in n0..n1 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let dst = &mut col[row * kk..(row + 1) * kk];
                    for ky in 0..k {
                        let Some(sy) = self.tap(oy, ky, ih) else { continue };
                        for kx in 0..k {
                            let Some(sx) = self.tap(ox, kx, iw) else { continue };
                            let src = ((n * h + sy) * w + sx) * cin;
                            let at = (ky * k + kx) * cin;
                            dst[at..at + cin].copy_from_slice(&xd[src..src + cin]);
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, dcol: &[T], n0: usize, n1: usize, dx: &mut Tensor<T>) {
        let (ih, iw) = self.in_dims(dx);
        let (oh, ow) = self.out_dims(dx.height(), dx.width());
        let (k, cin) = (self.kernel, self.cin);
        let kk = k * k * cin;
        let (h, w) = (dx.height(), dx.width());
        let dxd = dx.data_mut();
        let mut row = 0;
        for n in n0..n1 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let src = &dcol[row * kk..(row + 1) * kk];
                    for ky in 0..k {
                        let Some(sy) = self.tap(oy, ky, ih) else { continue };
                        for kx in 0..k {
                            let Some(sx) = self.tap(ox, kx, iw) else { continue };
                            let dst = ((n * h + sy) * w + sx) * cin;
                            let at = (ky * k + kx) * cin;
                            for c in 0..cin {
                                dxd[dst + c] = dxd[dst + c] + src[at + c];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        if x.channels() != self.cin {
            return Err(NetError::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.cin,
                x.channels()
            )));
        }
        let (oh, ow) = self.out_dims(x.height(), x.width());
        let n = x.batch();
        let mut out = Tensor::zeros([n, oh, ow, self.cout]);
        let per_out = oh * ow;
        let kk = self.kernel * self.kernel * self.cin;
        if self.is_pointwise() {
            gemm(n * per_out, kk, self.cout, x.data(), Op::N, &self.weight.value, Op::N, out.data_mut(), false);
        } else {
            let chunk = self.chunk_slices(oh, ow);
            let mut col = Vec::new();
            let mut n0 = 0;
            while n0 < n {
                let n1 = (n0 + chunk).min(n);
                self.im2col(x, n0, n1, &mut col);
                let rows = (n1 - n0) * per_out;
                let dst = &mut out.data_mut()[n0 * per_out * self.cout..n1 * per_out * self.cout];
                gemm(rows, kk, self.cout, &col, Op::N, &self.weight.value, Op::N, dst, false);
                n0 = n1;
            }
        }
        if let Some(b) = &self.bias {
            for px in out.data_mut().chunks_exact_mut(self.cout) {
                for (v, &bb) in px.iter_mut().zip(&b.value) {
                    *v = *v + bb;
                }
            }
        }
        self.cache = train.then(|| x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(NetError::NoCache)?;
        let (oh, ow) = self.out_dims(x.height(), x.width());
        if dy.shape() != [x.batch(), oh, ow, self.cout] {
            return Err(NetError::ShapeMismatch(format!("conv gradient shape {:?}", dy.shape())));
        }
        let n = x.batch();
        let per_out = oh * ow;
        let kk = self.kernel * self.kernel * self.cin;
        let mut dx = Tensor::zeros(x.shape());
        if self.is_pointwise() {
            let rows = n * per_out;
            gemm(kk, rows, self.cout, x.data(), Op::T, dy.data(), Op::N, &mut self.weight.grad, true);
            gemm(rows, self.cout, kk, dy.data(), Op::N, &self.weight.value, Op::T, dx.data_mut(), false);
        } else {
            let chunk = self.chunk_slices(oh, ow);
            let mut col = Vec::new();
            let mut dcol = Vec::new();
            let mut n0 = 0;
            while n0 < n {
                let n1 = (n0 + chunk).min(n);
                let rows = (n1 - n0) * per_out;
                self.im2col(&x, n0, n1, &mut col);
                let dyc = &dy.data()[n0 * per_out * self.cout..n1 * per_out * self.cout];
                gemm(kk, rows, self.cout, &col, Op::T, dyc, Op::N, &mut self.weight.grad, true);
                dcol.clear();
                dcol.resize(rows * kk, T::zero());
                gemm(rows, self.cout, kk, dyc, Op::N, &self.weight.value, Op::T, &mut dcol, false);
                self.col2im(&dcol, n0, n1, &mut dx);
                n0 = n1;
            }
        }
        if let Some(b) = &mut self.bias {
            let mut acc = vec![0.0f64; self.cout];
            for px in dy.data().chunks_exact(self.cout) {
                for (a, v) in acc.iter_mut().zip(px) {
                    *a += v.as_f64();
                }
            }
            for (g, a) in b.grad.iter_mut().zip(acc) {
                *g = *g + T::lit(a);
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }
}

#[derive(Debug, Clone)]
struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

/// Patient-wise batch normalization. Statistics come either from the batch
/// itself (all slices of one patient) or are supplied by the caller; no
/// running averages are kept.
#[derive(Debug, Clone)]
pub struct PatientNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
    cache: Option<NormCache<T>>,
}

impl<T: Scalar> PatientNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(vec![channels], T::one()),
            beta: Param::filled(vec![channels], T::zero()),
            eps: DEFAULT_EPSILON,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes `x`; returns the output and the statistics used.
    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        fixed: Option<&ChannelStats<T>>,
        train: bool,
    ) -> Result<(Tensor<T>, ChannelStats<T>)> {
        let c = self.channels();
        if x.channels() != c {
            return Err(NetError::ShapeMismatch(format!("norm expects {c} channels, got {}", x.channels())));
        }
        let stats = match fixed {
            Some(s) if s.channels() != c => {
                return Err(NetError::ShapeMismatch(format!(
                    "supplied statistics have {} channels, layer has {c}",
                    s.channels()
                )))
            }
            Some(s) => s.clone(),
            None => bn_stats(x.data(), c)?,
        };
        let params = BnParams { gamma: self.gamma.value.clone(), beta: self.beta.value.clone(), eps: self.eps };
        let y = Tensor::new(x.shape(), bn_forward(x.data(), &params, &stats)?)?;
        self.cache = if train {
            let eps = T::lit(self.eps);
            let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mut xhat = Vec::with_capacity(x.len());
            for px in x.data().chunks_exact(c) {
                for ch in 0..c {
                    xhat.push((px[ch] - stats.mean[ch]) * inv_std[ch]);
                }
            }
            Some(NormCache { xhat, inv_std, batch_stats: fixed.is_none() })
        } else {
            None
        };
        Ok((y, stats))
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(NetError::NoCache)?;
        let c = self.channels();
        if dy.len() != cache.xhat.len() {
            return Err(NetError::ShapeMismatch("norm gradient size".into()));
        }
        let m = dy.len() / c;
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for (g, xh) in dy.data().chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for ch in 0..c {
                sum_dy[ch] += g[ch].as_f64();
                sum_dy_xhat[ch] += (g[ch] * xh[ch]).as_f64();
            }
        }
        for ch in 0..c {
            self.gamma.grad[ch] = self.gamma.grad[ch] + T::lit(sum_dy_xhat[ch]);
            self.beta.grad[ch] = self.beta.grad[ch] + T::lit(sum_dy[ch]);
        }
        let scale: Vec<T> = (0..c).map(|ch| self.gamma.value[ch] * cache.inv_std[ch]).collect();
        let mut dx = Vec::with_capacity(dy.len());
        if cache.batch_stats {
            let mean_dy: Vec<T> = sum_dy.iter().map(|s| T::lit(s / m as f64)).collect();
            let mean_dyx: Vec<T> = sum_dy_xhat.iter().map(|s| T::lit(s / m as f64)).collect();
            for (g, xh) in dy.data().chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
                for ch in 0..c {
                    dx.push(scale[ch] * (g[ch] - mean_dy[ch] - xh[ch] * mean_dyx[ch]));
                }
            }
        } else {
            for g in dy.data().chunks_exact(c) {
                for ch in 0..c {
                    dx.push(scale[ch] * g[ch]);
                }
            }
        }
        Tensor::new(dy.shape(), dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }
}

/// Leaky rectifier; `slope == 0` gives the plain rectifier.
#[derive(Debug, Clone)]
pub struct Rectifier<T> {
    pub slope: f64,
    cache: Option<Vec<bool>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Rectifier<T> {
    pub fn new(slope: f64) -> Self {
        Self { slope, cache: None, _marker: std::marker::PhantomData }
    }

    pub fn forward(&mut self, mut x: Tensor<T>, train: bool) -> Tensor<T> {
        let s = T::lit(self.slope);
        if train {
            self.cache = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        }
        for v in x.data_mut() {
            if *v <= T::zero() {
                *v = *v * s;
            }
        }
        x
    }

    pub fn backward(&mut self, mut dy: Tensor<T>) -> Result<Tensor<T>> {
        let pos = self.cache.take().ok_or(NetError::NoCache)?;
        let s = T::lit(self.slope);
        for (g, p) in dy.data_mut().iter_mut().zip(pos) {
            if !p {
                *g = *g * s;
            }
        }
        Ok(dy)
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Per-pixel softmax over channels.
pub fn softmax<T: Scalar>(mut x: Tensor<T>) -> Tensor<T> {
    let c = x.channels();
    for px in x.data_mut().chunks_exact_mut(c) {
        let max = px.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for v in px.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in px.iter_mut() {
            *v = *v / sum;
        }
    }
    x
}

/// Gradient through softmax given its output `p`.
pub fn softmax_backward<T: Scalar>(p: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let c = p.channels();
    let mut dx = dy.clone();
    for (g, pp) in dx.data_mut().chunks_exact_mut(c).zip(p.data().chunks_exact(c)) {
        let dot: T = g.iter().zip(pp).map(|(&a, &b)| a * b).sum();
        for (gv, &pv) in g.iter_mut().zip(pp) {
            *gv = pv * (*gv - dot);
        }
    }
    dx
}

pub fn sigmoid_tensor<T: Scalar>(x: Tensor<T>) -> Tensor<T> {
    x.map(sigmoid)
}

/// Gradient through the logistic function given its output `p`.
pub fn sigmoid_backward<T: Scalar>(p: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &pv) in dx.data_mut().iter_mut().zip(p.data()) {
        *g = *g * pv * (T::one() - pv);
    }
    dx
}

#[derive(Debug, Clone)]
struct StepCache<T> {
    /// Activated gates `[i | f | g | o]`, `pixels x 4 hidden`.
    gates: Vec<T>,
    c_prev: Vec<T>,
    tanh_c: Vec<T>,
    h_prev: Vec<T>,
}

/// One direction of an LSTM that runs independently at every pixel, with the
/// slice index as time.
#[derive(Debug, Clone)]
pub struct LstmDirection<T> {
    pub hidden: usize,
    pub input: usize,
    /// `input x 4 hidden`
    pub wx: Param<T>,
    /// `hidden x 4 hidden`
    pub wh: Param<T>,
    pub b: Param<T>,
    cache: Option<Vec<StepCache<T>>>,
}

impl<T: Scalar> LstmDirection<T> {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut b = Param::filled(vec![4 * hidden], T::zero());
        b.value[hidden..2 * hidden].iter_mut().for_each(|v| *v = T::one());
        Self {
            hidden,
            input,
            wx: Param::uniform(vec![input, 4 * hidden], bound, rng),
            wh: Param::uniform(vec![hidden, 4 * hidden], bound, rng),
            b,
            cache: None,
        }
    }

    /// Runs over time steps in `order`, writing hidden states into channel
    /// block `offset..offset + hidden` of `out`.
    fn forward(&mut self, x: &Tensor<T>, order: &[usize], out: &mut Tensor<T>, offset: usize, train: bool) {
        let hd = self.hidden;
        let p = x.height() * x.width();
        let cin = x.channels();
        let cout = out.channels();
        let mut h = vec![T::zero(); p * hd];
        let mut c = vec![T::zero(); p * hd];
        let mut steps = Vec::new();
        let mut z = vec![T::zero(); p * 4 * hd];
        for &t in order {
            let xt = &x.data()[t * p * cin..(t + 1) * p * cin];
            gemm(p, cin, 4 * hd, xt, Op::N, &self.wx.value, Op::N, &mut z, false);
            gemm(p, hd, 4 * hd, &h, Op::N, &self.wh.value, Op::N, &mut z, true);
            let c_prev = c.clone();
            let h_prev = std::mem::take(&mut h);
            h = vec![T::zero(); p * hd];
            let mut tanh_c = vec![T::zero(); p * hd];
            for px in 0..p {
                let zr = &mut z[px * 4 * hd..(px + 1) * 4 * hd];
                for (v, &bb) in zr.iter_mut().zip(&self.b.value) {
                    *v = *v + bb;
                }
                for j in 0..hd {
                    let i = sigmoid(zr[j]);
                    let f = sigmoid(zr[hd + j]);
                    let g = zr[2 * hd + j].tanh();
                    let o = sigmoid(zr[3 * hd + j]);
                    zr[j] = i;
                    zr[hd + j] = f;
                    zr[2 * hd + j] = g;
                    zr[3 * hd + j] = o;
                    let cn = f * c[px * hd + j] + i * g;
                    c[px * hd + j] = cn;
                    let tc = cn.tanh();
                    tanh_c[px * hd + j] = tc;
                    h[px * hd + j] = o * tc;
                }
            }
            let od = out.data_mut();
            for px in 0..p {
                let dst = (t * p + px) * cout + offset;
                od[dst..dst + hd].copy_from_slice(&h[px * hd..(px + 1) * hd]);
            }
            if train {
                steps.push(StepCache { gates: z.clone(), c_prev, tanh_c, h_prev });
            }
        }
        self.cache = train.then_some(steps);
    }

    fn backward(&mut self, x: &Tensor<T>, order: &[usize], dy: &Tensor<T>, offset: usize, dx: &mut Tensor<T>) -> Result<()> {
        let steps = self.cache.take().ok_or(NetError::NoCache)?;
        let hd = self.hidden;
        let p = x.height() * x.width();
        let cin = x.channels();
        let cout = dy.channels();
        let mut dh_next = vec![T::zero(); p * hd];
        let mut dc_next = vec![T::zero(); p * hd];
        let mut dz = vec![T::zero(); p * 4 * hd];
        let mut dxt = vec![T::zero(); p * cin];
        for (s, &t) in steps.iter().zip(order).rev() {
            for px in 0..p {
                let src = (t * p + px) * cout + offset;
                let dyr = &dy.data()[src..src + hd];
                let gr = &s.gates[px * 4 * hd..(px + 1) * 4 * hd];
                let dzr = &mut dz[px * 4 * hd..(px + 1) * 4 * hd];
                for j in 0..hd {
                    let k = px * hd + j;
                    let (i, f, g, o) = (gr[j], gr[hd + j], gr[2 * hd + j], gr[3 * hd + j]);
                    let tc = s.tanh_c[k];
                    let dh = dyr[j] + dh_next[k];
                    let d_o = dh * tc;
                    let dc = dh * o * (T::one() - tc * tc) + dc_next[k];
                    let di = dc * g;
                    let dg = dc * i;
                    let df = dc * s.c_prev[k];
                    dc_next[k] = dc * f;
                    dzr[j] = di * i * (T::one() - i);
                    dzr[hd + j] = df * f * (T::one() - f);
                    dzr[2 * hd + j] = dg * (T::one() - g * g);
                    dzr[3 * hd + j] = d_o * o * (T::one() - o);
                }
            }
            let xt = &x.data()[t * p * cin..(t + 1) * p * cin];
            gemm(cin, p, 4 * hd, xt, Op::T, &dz, Op::N, &mut self.wx.grad, true);
            gemm(hd, p, 4 * hd, &s.h_prev, Op::T, &dz, Op::N, &mut self.wh.grad, true);
            let mut db = vec![0.0f64; 4 * hd];
            for row in dz.chunks_exact(4 * hd) {
                for (a, v) in db.iter_mut().zip(row) {
                    *a += v.as_f64();
                }
            }
            for (g, a) in self.b.grad.iter_mut().zip(db) {
                *g = *g + T::lit(a);
            }
            gemm(p, 4 * hd, cin, &dz, Op::N, &self.wx.value, Op::T, &mut dxt, false);
            let dxd = &mut dx.data_mut()[t * p * cin..(t + 1) * p * cin];
            for (a, &b) in dxd.iter_mut().zip(&dxt) {
                *a = *a + b;
            }
            gemm(p, 4 * hd, hd, &dz, Op::N, &self.wh.value, Op::T, &mut dh_next, false);
        }
        Ok(())
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.wx, &mut self.wh, &mut self.b]
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.wx, &self.wh, &self.b]
    }
}

/// Bidirectional LSTM over the slice axis. Output channels are the forward
/// hidden state followed by the backward one.
#[derive(Debug, Clone)]
pub struct BiLstm<T> {
    pub forward_dir: LstmDirection<T>,
    pub backward_dir: LstmDirection<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> BiLstm<T> {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let forward_dir = LstmDirection::new(input, hidden, rng);
        let backward_dir = LstmDirection::new(input, hidden, rng);
        Self { forward_dir, backward_dir, cache: None }
    }

    pub fn output_channels(&self) -> usize {
        self.forward_dir.hidden + self.backward_dir.hidden
    }

    /// Exchanges the parameters of the two directions.
    pub fn swap_directions(&mut self) {
        std::mem::swap(&mut self.forward_dir, &mut self.backward_dir);
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        if x.channels() != self.forward_dir.input {
            return Err(NetError::ShapeMismatch(format!(
                "recurrent layer expects {} channels, got {}",
                self.forward_dir.input,
                x.channels()
            )));
        }
        let n = x.batch();
        let [_, h, w, _] = x.shape();
        let mut out = Tensor::zeros([n, h, w, self.output_channels()]);
        let fwd: Vec<usize> = (0..n).collect();
        let bwd: Vec<usize> = (0..n).rev().collect();
        let hf = self.forward_dir.hidden;
        self.forward_dir.forward(x, &fwd, &mut out, 0, train);
        self.backward_dir.forward(x, &bwd, &mut out, hf, train);
        self.cache = train.then(|| x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(NetError::NoCache)?;
        let n = x.batch();
        let fwd: Vec<usize> = (0..n).collect();
        let bwd: Vec<usize> = (0..n).rev().collect();
        let hf = self.forward_dir.hidden;
        let mut dx = Tensor::zeros(x.shape());
        self.forward_dir.backward(&x, &fwd, dy, 0, &mut dx)?;
        self.backward_dir.backward(&x, &bwd, dy, hf, &mut dx)?;
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.forward_dir.params_mut();
        v.extend(self.backward_dir.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.forward_dir.params();
        v.extend(self.backward_dir.params());
        v
    }
}
