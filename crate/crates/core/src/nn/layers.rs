use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{gemm, BnUpdate, Ctx, Grads, ParamId, ParamKind, Params, Tensor};

fn normal_init(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f32> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| dist.sample(rng) as f32).collect()
}

/// 2D convolution with square kernels, lowered to im2col + GEMM.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: ParamId,
    bias: Option<ParamId>,
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    /// He-normal initialized convolution; biases start at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut Params,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_c * k * k;
        let w = normal_init(rng, out_c * fan_in, (2.0 / fan_in as f64).sqrt());
        let weight = params.add(
            &format!("{name}.weight"),
            &[out_c, in_c, k, k],
            ParamKind::Weight,
            w,
        );
        let bias = bias.then(|| {
            params.add(
                &format!("{name}.bias"),
                &[out_c],
                ParamKind::Weight,
                vec![0.0; out_c],
            )
        });
        Self {
            weight,
            bias,
            in_c,
            out_c,
            k,
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_c
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, ho: usize, wo: usize, col: &mut [f32]) {
        let (k, s, p) = (self.k, self.stride as isize, self.pad as isize);
        let plane = ho * wo;
        for ci in 0..self.in_c {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let iy = oy as isize * s + ky as isize - p;
                        let line = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            *d = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                srow[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [f32]) {
        let (k, s, p) = (self.k, self.stride as isize, self.pad as isize);
        let plane = ho * wo;
        for ci in 0..self.in_c {
            let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, params: &Params, x: &Tensor) -> Tensor {
        assert_eq!(x.c(), self.in_c, "conv input channels");
        let (n, h, w) = (x.n(), x.h(), x.w());
        let (ho, wo) = self.out_hw(h, w);
        let kk = self.in_c * self.k * self.k;
        let plane = ho * wo;
        let weight = params.get(self.weight);
        let mut out = Tensor::zeros([n, self.out_c, ho, wo]);
        let mut col = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; kk * plane]
        };
        for i in 0..n {
            let xs = x.sample(i);
            let cols: &[f32] = if self.is_pointwise() {
                xs
            } else {
                self.im2col(xs, h, w, ho, wo, &mut col);
                &col
            };
            gemm(self.out_c, kk, plane, weight, false, cols, false, out.sample_mut(i), 0.0);
        }
        if let Some(b) = self.bias {
            let bias = params.get(b);
            for i in 0..n {
                for (c, plane_out) in out.sample_mut(i).chunks_mut(plane).enumerate() {
                    plane_out.iter_mut().for_each(|v| *v += bias[c]);
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `need_dx` is set.
    pub fn backward(
        &self,
        params: &Params,
        grads: &mut Grads,
        x: &Tensor,
        dy: &Tensor,
        need_dx: bool,
    ) -> Option<Tensor> {
        let (n, h, w) = (x.n(), x.h(), x.w());
        let (ho, wo) = (dy.h(), dy.w());
        let kk = self.in_c * self.k * self.k;
        let plane = ho * wo;
        let mut col = vec![0.0; if self.is_pointwise() { 0 } else { kk * plane }];
        let mut dcol = vec![0.0; kk * plane];
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        let weight = params.get(self.weight);
        for i in 0..n {
            let xs = x.sample(i);
            let dys = dy.sample(i);
            let cols: &[f32] = if self.is_pointwise() {
                xs
            } else {
                self.im2col(xs, h, w, ho, wo, &mut col);
                &col
            };
            // dW += dY · colᵀ
            gemm(
                self.out_c,
                plane,
                kk,
                dys,
                false,
                cols,
                true,
                grads.get_mut(self.weight),
                1.0,
            );
            if let Some(dx) = dx.as_mut() {
                // dcol = Wᵀ · dY
                if self.is_pointwise() {
                    gemm(kk, self.out_c, plane, weight, true, dys, false, dx.sample_mut(i), 0.0);
                } else {
                    gemm(kk, self.out_c, plane, weight, true, dys, false, &mut dcol, 0.0);
                    self.col2im(&dcol, h, w, ho, wo, dx.sample_mut(i));
                }
            }
        }
        if let Some(b) = self.bias {
            let gb = grads.get_mut(b);
            for i in 0..n {
                for (c, p) in dy.sample(i).chunks(plane).enumerate() {
                    gb[c] += p.iter().sum::<f32>();
                }
            }
        }
        dx
    }
}

/// Batch normalization over `N×H×W` per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    c: usize,
    eps: f32,
    momentum: f32,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(params: &mut Params, name: &str, c: usize) -> Self {
        Self {
            gamma: params.add(&format!("{name}.gamma"), &[c], ParamKind::Weight, vec![1.0; c]),
            beta: params.add(&format!("{name}.beta"), &[c], ParamKind::Weight, vec![0.0; c]),
            running_mean: params.add(
                &format!("{name}.running_mean"),
                &[c],
                ParamKind::Buffer,
                vec![0.0; c],
            ),
            running_var: params.add(
                &format!("{name}.running_var"),
                &[c],
                ParamKind::Buffer,
                vec![1.0; c],
            ),
            c,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, params: &Params, x: &Tensor, ctx: &mut Ctx) -> (Tensor, BnCache) {
        assert_eq!(x.c(), self.c, "batch-norm channels");
        let (n, plane) = (x.n(), x.h() * x.w());
        let m = n * plane;
        let (mean, var) = if ctx.train {
            let mut mean = vec![0.0f32; self.c];
            let mut var = vec![0.0f32; self.c];
            for c in 0..self.c {
                let mut s = 0.0f64;
                for i in 0..n {
                    s += x.sample(i)[c * plane..(c + 1) * plane]
                        .iter()
                        .map(|&v| v as f64)
                        .sum::<f64>();
                }
                let mu = s / m as f64;
                let mut ss = 0.0f64;
                for i in 0..n {
                    ss += x.sample(i)[c * plane..(c + 1) * plane]
                        .iter()
                        .map(|&v| (v as f64 - mu).powi(2))
                        .sum::<f64>();
                }
                mean[c] = mu as f32;
                var[c] = (ss / m as f64) as f32;
            }
            let unbiased = m as f32 / (m.max(2) - 1) as f32;
            ctx.bn_updates.push(BnUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                batch_mean: mean.clone(),
                batch_var: var.iter().map(|v| v * unbiased).collect(),
                momentum: self.momentum,
            });
            (mean, var)
        } else {
            (
                params.get(self.running_mean).to_vec(),
                params.get(self.running_var).to_vec(),
            )
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let gamma = params.get(self.gamma);
        let beta = params.get(self.beta);
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for i in 0..n {
            let xs = x.sample(i);
            let xh = xhat.sample_mut(i);
            for c in 0..self.c {
                for j in c * plane..(c + 1) * plane {
                    xh[j] = (xs[j] - mean[c]) * inv_std[c];
                }
            }
            let xh = xhat.sample(i);
            let yo = y.sample_mut(i);
            for c in 0..self.c {
                for j in c * plane..(c + 1) * plane {
                    yo[j] = gamma[c] * xh[j] + beta[c];
                }
            }
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn backward(&self, params: &Params, grads: &mut Grads, cache: &BnCache, dy: &Tensor, train: bool) -> Tensor {
        let (n, plane) = (dy.n(), dy.h() * dy.w());
        let m = (n * plane) as f32;
        let gamma = params.get(self.gamma).to_vec();
        let mut sum_dy = vec![0.0f64; self.c];
        let mut sum_dy_xhat = vec![0.0f64; self.c];
        for i in 0..n {
            let (d, xh) = (dy.sample(i), cache.xhat.sample(i));
            for c in 0..self.c {
                for j in c * plane..(c + 1) * plane {
                    sum_dy[c] += d[j] as f64;
                    sum_dy_xhat[c] += (d[j] * xh[j]) as f64;
                }
            }
        }
        for c in 0..self.c {
            grads.get_mut(self.gamma)[c] += sum_dy_xhat[c] as f32;
            grads.get_mut(self.beta)[c] += sum_dy[c] as f32;
        }
        let mut dx = Tensor::zeros(dy.shape());
        for i in 0..n {
            let (d, xh) = (dy.sample(i), cache.xhat.sample(i));
            let out = dx.sample_mut(i);
            for c in 0..self.c {
                let k = gamma[c] * cache.inv_std[c];
                if train {
                    let (sd, sdx) = (sum_dy[c] as f32, sum_dy_xhat[c] as f32);
                    for j in c * plane..(c + 1) * plane {
                        out[j] = k / m * (m * d[j] - sd - xh[j] * sdx);
                    }
                } else {
                    for j in c * plane..(c + 1) * plane {
                        out[j] = k * d[j];
                    }
                }
            }
        }
        dx
    }
}

/// Fully connected layer, `y = x·Wᵀ + b` on flattened samples.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    in_f: usize,
    out_f: usize,
}

impl Linear {
    pub fn new(
        params: &mut Params,
        name: &str,
        in_f: usize,
        out_f: usize,
        init_std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = normal_init(rng, in_f * out_f, init_std);
        Self {
            weight: params.add(&format!("{name}.weight"), &[out_f, in_f], ParamKind::Weight, w),
            bias: params.add(
                &format!("{name}.bias"),
                &[out_f],
                ParamKind::Weight,
                vec![0.0; out_f],
            ),
            in_f,
            out_f,
        }
    }

    pub fn forward(&self, params: &Params, x: &Tensor) -> Tensor {
        assert_eq!(x.sample_len(), self.in_f, "linear input features");
        let n = x.n();
        let mut y = Tensor::zeros([n, self.out_f, 1, 1]);
        gemm(
            n,
            self.in_f,
            self.out_f,
            x.data(),
            false,
            params.get(self.weight),
            true,
            y.data_mut(),
            0.0,
        );
        let b = params.get(self.bias);
        for row in y.data_mut().chunks_mut(self.out_f) {
            row.iter_mut().zip(b).for_each(|(v, b)| *v += b);
        }
        y
    }

    pub fn backward(&self, params: &Params, grads: &mut Grads, x: &Tensor, dy: &Tensor) -> Tensor {
        let n = x.n();
        gemm(
            self.out_f,
            n,
            self.in_f,
            dy.data(),
            true,
            x.data(),
            false,
            grads.get_mut(self.weight),
            1.0,
        );
        let gb = grads.get_mut(self.bias);
        for row in dy.data().chunks(self.out_f) {
            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            n,
            self.out_f,
            self.in_f,
            dy.data(),
            false,
            params.get(self.weight),
            false,
            dx.data_mut(),
            0.0,
        );
        dx
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Gradient of ReLU given its *output*.
pub fn relu_backward(out: &Tensor, dy: &Tensor) -> Tensor {
    let data = out
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &d)| if o > 0.0 { d } else { 0.0 })
        .collect();
    Tensor::from_vec(dy.shape(), data).expect("same shape")
}

/// Inverted dropout. Returns the output and the scaling mask (empty in eval
/// mode or when `rate` is zero).
pub fn dropout(x: &Tensor, rate: f32, ctx: &mut Ctx) -> (Tensor, Vec<f32>) {
    if !ctx.train || rate <= 0.0 {
        return (x.clone(), Vec::new());
    }
    let rng = ctx.rng.as_deref_mut().expect("training context needs an rng");
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f32> = (0..x.data().len())
        .map(|_| if rng.random::<f32>() < rate { 0.0 } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    (Tensor::from_vec(x.shape(), data).expect("same shape"), mask)
}

pub fn dropout_backward(mask: &[f32], dy: &Tensor) -> Tensor {
    if mask.is_empty() {
        return dy.clone();
    }
    let data = dy.data().iter().zip(mask).map(|(d, m)| d * m).collect();
    Tensor::from_vec(dy.shape(), data).expect("same shape")
}

pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let plane = x.h() * x.w();
    let data = x
        .data()
        .chunks(plane)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
        .collect();
    Tensor::from_vec([x.n(), x.c(), 1, 1], data).expect("pooled shape")
}

pub fn global_avg_pool_backward(input_shape: [usize; 4], dy: &Tensor) -> Tensor {
    let plane = input_shape[2] * input_shape[3];
    let scale = 1.0 / plane as f32;
    let data = dy
        .data()
        .iter()
        .flat_map(|&d| std::iter::repeat_n(d * scale, plane))
        .collect();
    Tensor::from_vec(input_shape, data).expect("unpooled shape")
}

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    input_shape: [usize; 4],
    argmax: Vec<usize>,
}

/// 3×3 max pooling with stride 2 and padding 1 (the ResNet stem pool).
pub fn max_pool_3x3s2(x: &Tensor) -> (Tensor, MaxPoolCache) {
    let (n, c, h, w) = (x.n(), x.c(), x.h(), x.w());
    let (ho, wo) = ((h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for i in 0..n {
        let xs = x.sample(i);
        let os = out.sample_mut(i);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_j = usize::MAX;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let j = (ch * h + iy as usize) * w + ix as usize;
                            if xs[j] > best {
                                best = xs[j];
                                best_j = j;
                            }
                        }
                    }
                    os[(ch * ho + oy) * wo + ox] = best;
                    argmax.push(best_j);
                }
            }
        }
    }
    (
        out,
        MaxPoolCache {
            input_shape: x.shape(),
            argmax,
        },
    )
}

pub fn max_pool_backward(cache: &MaxPoolCache, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(cache.input_shape);
    let per = dy.sample_len();
    for i in 0..dy.n() {
        let d = dy.sample(i);
        let idx = &cache.argmax[i * per..(i + 1) * per];
        let out = dx.sample_mut(i);
        for (g, &j) in d.iter().zip(idx) {
            out[j] += g;
        }
    }
    dx
}

/// ResNet basic block: two 3×3 conv/BN pairs plus an identity or projected
/// shortcut, followed by ReLU.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
}

#[derive(Debug, Clone)]
pub struct BasicBlockCache {
    x: Tensor,
    bn1: BnCache,
    r1: Tensor,
    bn2: BnCache,
    bn_sc: Option<BnCache>,
    out: Tensor,
}

impl BasicBlock {
    pub fn new(
        params: &mut Params,
        name: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let conv1 = Conv2d::new(params, &format!("{name}.conv1"), in_c, out_c, 3, stride, 1, false, rng);
        let bn1 = BatchNorm2d::new(params, &format!("{name}.bn1"), out_c);
        let conv2 = Conv2d::new(params, &format!("{name}.conv2"), out_c, out_c, 3, 1, 1, false, rng);
        let bn2 = BatchNorm2d::new(params, &format!("{name}.bn2"), out_c);
        let shortcut = (stride != 1 || in_c != out_c).then(|| {
            (
                Conv2d::new(params, &format!("{name}.proj"), in_c, out_c, 1, stride, 0, false, rng),
                BatchNorm2d::new(params, &format!("{name}.proj_bn"), out_c),
            )
        });
        Self {
            conv1,
            bn1,
            conv2,
            bn2,
            shortcut,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels()
    }

    pub fn forward(&self, params: &Params, x: &Tensor, ctx: &mut Ctx) -> (Tensor, BasicBlockCache) {
        let a = self.conv1.forward(params, x);
        let (b, bn1) = self.bn1.forward(params, &a, ctx);
        let r1 = relu(&b);
        let c = self.conv2.forward(params, &r1);
        let (mut e, bn2) = self.bn2.forward(params, &c, ctx);
        let bn_sc = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(params, x);
                let (s, cache) = bn.forward(params, &s, ctx);
                e.add_assign(&s);
                Some(cache)
            }
            None => {
                e.add_assign(x);
                None
            }
        };
        let out = relu(&e);
        let cache = BasicBlockCache {
            x: x.clone(),
            bn1,
            r1,
            bn2,
            bn_sc,
            out: out.clone(),
        };
        (out, cache)
    }

    pub fn backward(
        &self,
        params: &Params,
        grads: &mut Grads,
        cache: &BasicBlockCache,
        dy: &Tensor,
        train: bool,
    ) -> Tensor {
        let de = relu_backward(&cache.out, dy);
        let dc = self.bn2.backward(params, grads, &cache.bn2, &de, train);
        let dr1 = self
            .conv2
            .backward(params, grads, &cache.r1, &dc, true)
            .expect("dx requested");
        let db = relu_backward(&cache.r1, &dr1);
        let da = self.bn1.backward(params, grads, &cache.bn1, &db, train);
        let mut dx = self
            .conv1
            .backward(params, grads, &cache.x, &da, true)
            .expect("dx requested");
        match (&self.shortcut, &cache.bn_sc) {
            (Some((conv, bn)), Some(bc)) => {
                let ds = bn.backward(params, grads, bc, &de, train);
                let dxs = conv
                    .backward(params, grads, &cache.x, &ds, true)
                    .expect("dx requested");
                dx.add_assign(&dxs);
            }
            _ => dx.add_assign(&de),
        }
        dx
    }
}
