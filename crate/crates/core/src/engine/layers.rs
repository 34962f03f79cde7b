//! Forward and backward kernels for each layer kind, on whole batches.

use crate::netspec::PoolMethod;
use crate::shapecheck::{conv_out_len, pool_out_len};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub fn conv_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, win: Window) -> Tensor {
    let [n, c, h, w] = x.shape();
    let [out, wc, k, _] = weight.shape();
    assert_eq!(wc, c, "convolution weight expects {wc} input channels, got {c}");
    assert_eq!(k, win.kernel);
    let oh = conv_out_len(h, k, win.stride, win.pad).expect("output height");
    let ow = conv_out_len(w, k, win.stride, win.pad).expect("output width");
    let mut y = Tensor::zeros([n, out, oh, ow]);
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    let yd = y.data_mut();
    let pad = win.pad as isize;
    for ni in 0..n {
        for o in 0..out {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bd[o];
                    for ci in 0..c {
                        for ki in 0..k {
                            let hi = (i * win.stride + ki) as isize - pad;
                            if hi < 0 || hi >= h as isize {
                                continue;
                            }
                            let xrow = ((ni * c + ci) * h + hi as usize) * w;
                            let wrow = ((o * c + ci) * k + ki) * k;
                            for kj in 0..k {
                                let wi = (j * win.stride + kj) as isize - pad;
                                if wi < 0 || wi >= w as isize {
                                    continue;
                                }
                                acc += wd[wrow + kj] * xd[xrow + wi as usize];
                            }
                        }
                    }
                    yd[((ni * out + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    y
}

/// Returns (dx, dweight, dbias).
pub fn conv_backward(x: &Tensor, weight: &Tensor, dy: &Tensor, win: Window) -> (Tensor, Tensor, Tensor) {
    let [n, c, h, w] = x.shape();
    let [out, _, k, _] = weight.shape();
    let [_, _, oh, ow] = dy.shape();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros([out, 1, 1, 1]);
    let (xd, wd, dyd) = (x.data(), weight.data(), dy.data());
    let pad = win.pad as isize;
    {
        let dxd = dx.data_mut();
        let dwd = dw.data_mut();
        let dbd = db.data_mut();
        for ni in 0..n {
            for o in 0..out {
                for i in 0..oh {
                    for j in 0..ow {
                        let g = dyd[((ni * out + o) * oh + i) * ow + j];
                        dbd[o] += g;
                        if g == 0.0 {
                            continue;
                        }
                        for ci in 0..c {
                            for ki in 0..k {
                                let hi = (i * win.stride + ki) as isize - pad;
                                if hi < 0 || hi >= h as isize {
                                    continue;
                                }
                                let xrow = ((ni * c + ci) * h + hi as usize) * w;
                                let wrow = ((o * c + ci) * k + ki) * k;
                                for kj in 0..k {
                                    let wi = (j * win.stride + kj) as isize - pad;
                                    if wi < 0 || wi >= w as isize {
                                        continue;
                                    }
                                    dwd[wrow + kj] += g * xd[xrow + wi as usize];
                                    dxd[xrow + wi as usize] += g * wd[wrow + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Pooling windows clipped the same way as the shape rule. For AVE the
/// divisor counts padding cells inside the padded extent.
struct PoolWindow {
    h0: usize,
    h1: usize,
    w0: usize,
    w1: usize,
    area: usize,
}

fn pool_windows(len: usize, out: usize, win: Window) -> Vec<(usize, usize, usize)> {
    (0..out)
        .map(|i| {
            let start = (i * win.stride) as isize - win.pad as isize;
            let end = (start + win.kernel as isize).min((len + win.pad) as isize);
            let extent = (end - start) as usize;
            let lo = start.max(0) as usize;
            let hi = (end.max(0) as usize).min(len);
            (lo, hi.max(lo), extent)
        })
        .collect()
}

fn windows_2d(h: usize, w: usize, oh: usize, ow: usize, win: Window) -> Vec<PoolWindow> {
    let rows = pool_windows(h, oh, win);
    let cols = pool_windows(w, ow, win);
    let mut out = Vec::with_capacity(oh * ow);
    for &(h0, h1, he) in &rows {
        for &(w0, w1, we) in &cols {
            out.push(PoolWindow { h0, h1, w0, w1, area: he * we });
        }
    }
    out
}

/// Pooling cache: for MAX, the flat input index each output was taken from
/// (`usize::MAX` for windows that only cover padding).
#[derive(Debug, Clone, Default)]
pub struct PoolCache {
    pub argmax: Vec<usize>,
}

pub fn pool_forward(x: &Tensor, method: PoolMethod, win: Window) -> (Tensor, PoolCache) {
    let [n, c, h, w] = x.shape();
    let oh = pool_out_len(h, win.kernel, win.stride, win.pad).expect("output height");
    let ow = pool_out_len(w, win.kernel, win.stride, win.pad).expect("output width");
    let windows = windows_2d(h, w, oh, ow, win);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut cache = PoolCache::default();
    if method == PoolMethod::Max {
        cache.argmax = vec![usize::MAX; y.len()];
    }
    let xd = x.data();
    let yd = y.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for (o, win) in windows.iter().enumerate() {
            let yi = plane * oh * ow + o;
            match method {
                PoolMethod::Max => {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = usize::MAX;
                    for hi in win.h0..win.h1 {
                        for wi in win.w0..win.w1 {
                            let idx = base + hi * w + wi;
                            if xd[idx] > best {
                                best = xd[idx];
                                arg = idx;
                            }
                        }
                    }
                    yd[yi] = if arg == usize::MAX { 0.0 } else { best };
                    cache.argmax[yi] = arg;
                }
                PoolMethod::Ave => {
                    let mut sum = 0.0;
                    for hi in win.h0..win.h1 {
                        for wi in win.w0..win.w1 {
                            sum += xd[base + hi * w + wi];
                        }
                    }
                    yd[yi] = sum / win.area as f64;
                }
            }
        }
    }
    (y, cache)
}

pub fn pool_backward(x: &Tensor, dy: &Tensor, method: PoolMethod, win: Window, cache: &PoolCache) -> Tensor {
    let [n, c, h, w] = x.shape();
    let [_, _, oh, ow] = dy.shape();
    let mut dx = Tensor::zeros(x.shape());
    let dyd = dy.data();
    let dxd = dx.data_mut();
    match method {
        PoolMethod::Max => {
            for (yi, &arg) in cache.argmax.iter().enumerate() {
                if arg != usize::MAX {
                    dxd[arg] += dyd[yi];
                }
            }
        }
        PoolMethod::Ave => {
            let windows = windows_2d(h, w, oh, ow, win);
            for plane in 0..n * c {
                let base = plane * h * w;
                for (o, win) in windows.iter().enumerate() {
                    let g = dyd[plane * oh * ow + o] / win.area as f64;
                    for hi in win.h0..win.h1 {
                        for wi in win.w0..win.w1 {
                            dxd[base + hi * w + wi] += g;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `y = W·x + b` per sample, with x flattened to c·h·w.
pub fn inner_product_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let n = x.shape()[0];
    let d = x.sample_len();
    let out = weight.shape()[0];
    assert_eq!(weight.sample_len(), d, "inner product expects {} inputs, got {d}", weight.sample_len());
    let mut y = Tensor::zeros([n, out, 1, 1]);
    let (wd, bd) = (weight.data(), bias.data());
    for ni in 0..n {
        let xs = x.sample(ni);
        let ys = y.sample_mut(ni);
        for o in 0..out {
            let row = &wd[o * d..(o + 1) * d];
            ys[o] = bd[o] + row.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    y
}

pub fn inner_product_backward(x: &Tensor, weight: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let n = x.shape()[0];
    let d = x.sample_len();
    let out = weight.shape()[0];
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros([out, 1, 1, 1]);
    let wd = weight.data();
    for ni in 0..n {
        let xs = x.sample(ni);
        let gs = dy.sample(ni);
        for (o, &g) in gs.iter().enumerate() {
            db.data_mut()[o] += g;
            let dwrow = &mut dw.data_mut()[o * d..(o + 1) * d];
            for (acc, xv) in dwrow.iter_mut().zip(xs) {
                *acc += g * xv;
            }
        }
        let dxs = dx.sample_mut(ni);
        for (o, &g) in gs.iter().enumerate() {
            let row = &wd[o * d..(o + 1) * d];
            for (acc, wv) in dxs.iter_mut().zip(row) {
                *acc += g * wv;
            }
        }
    }
    (dx, dw, db)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (g, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// Softmax over the channel axis at each (n, h, w).
pub fn softmax_forward(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor::zeros(x.shape());
    let plane = h * w;
    let xd = x.data();
    let yd = y.data_mut();
    for ni in 0..n {
        for p in 0..plane {
            let at = |ci: usize| (ni * c + ci) * plane + p;
            let max = (0..c).map(|ci| xd[at(ci)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for ci in 0..c {
                let e = (xd[at(ci)] - max).exp();
                yd[at(ci)] = e;
                sum += e;
            }
            for ci in 0..c {
                yd[at(ci)] /= sum;
            }
        }
    }
    y
}

pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let [n, c, h, w] = y.shape();
    let plane = h * w;
    let mut dx = Tensor::zeros(y.shape());
    let (yd, dyd) = (y.data(), dy.data());
    let dxd = dx.data_mut();
    for ni in 0..n {
        for p in 0..plane {
            let at = |ci: usize| (ni * c + ci) * plane + p;
            let dot: f64 = (0..c).map(|ci| yd[at(ci)] * dyd[at(ci)]).sum();
            for ci in 0..c {
                dxd[at(ci)] = yd[at(ci)] * (dyd[at(ci)] - dot);
            }
        }
    }
    dx
}

/// Mean cross-entropy of softmax(logits) against `labels`, and its
/// gradient with respect to the logits. Logits are (n, K, 1, 1).
pub fn softmax_loss(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let n = logits.shape()[0];
    let k = logits.sample_len();
    assert_eq!(labels.len(), n);
    let mut grad = softmax_forward(&logits.clone().reshape([n, k, 1, 1]).expect("same length"));
    let mut loss = 0.0;
    for (ni, &label) in labels.iter().enumerate() {
        let z = logits.sample(ni);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[label];
        grad.sample_mut(ni)[label] -= 1.0;
    }
    let scale = 1.0 / n as f64;
    grad.data_mut().iter_mut().for_each(|g| *g *= scale);
    (loss * scale, grad.reshape(logits.shape()).expect("same length"))
}

/// Fraction of samples whose argmax (lowest index on ties) equals the label.
pub fn accuracy(scores: &Tensor, labels: &[usize]) -> f64 {
    let n = scores.shape()[0];
    let correct = (0..n).filter(|&i| argmax(scores.sample(i)) == labels[i]).count();
    correct as f64 / n as f64
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
