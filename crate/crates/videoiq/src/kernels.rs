//! Dense numeric kernels shared by the autodiff graph and the inference-mode
//! forward paths. All loops accumulate sequentially so repeated runs are
//! bit-identical.

use crate::tensor::Tensor;

/// C = A (m,k) * B (k,n), row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// C += A^T (k,m) * B (k,n) accumulated into (m,n). Used for weight grads.
pub fn matmul_at_b_acc(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// C += A (m,k) * B^T (n,k) accumulated into (m,n). Used for input grads.
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2dGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k_h) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k_w) / self.stride + 1
    }
}

/// Direct 2-D convolution (cross-correlation). Input (N,Cin,H,W), kernel
/// (Cout,Cin,Kh,Kw), output (N,Cout,Ho,Wo).
pub fn conv2d(x: &[f64], w: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; g.batch * g.out_ch * oh * ow];
    let in_plane = g.in_h * g.in_w;
    let out_plane = oh * ow;
    for n in 0..g.batch {
        let xb = &x[n * g.in_ch * in_plane..];
        let ob = &mut out[n * g.out_ch * out_plane..(n + 1) * g.out_ch * out_plane];
        for co in 0..g.out_ch {
            let oc = &mut ob[co * out_plane..(co + 1) * out_plane];
            for ci in 0..g.in_ch {
                let xp = &xb[ci * in_plane..ci * in_plane + in_plane];
                let wk = &w[(co * g.in_ch + ci) * g.k_h * g.k_w..];
                for kh in 0..g.k_h {
                    for kw in 0..g.k_w {
                        let wv = wk[kh * g.k_w + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.in_h as isize {
                                continue;
                            }
                            let xrow = &xp[iy as usize * g.in_w..iy as usize * g.in_w + g.in_w];
                            let orow = &mut oc[oy * ow..oy * ow + ow];
                            for ox in 0..ow {
                                let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                                if ix < 0 || ix >= g.in_w as isize {
                                    continue;
                                }
                                orow[ox] += wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of conv2d w.r.t. input and kernel, accumulated into the
/// provided buffers.
pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &Conv2dGeom,
    dx: &mut [f64],
    dw: &mut [f64],
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let in_plane = g.in_h * g.in_w;
    let out_plane = oh * ow;
    for n in 0..g.batch {
        let xb = &x[n * g.in_ch * in_plane..];
        let dxb = &mut dx[n * g.in_ch * in_plane..(n + 1) * g.in_ch * in_plane];
        let dyb = &dy[n * g.out_ch * out_plane..];
        for co in 0..g.out_ch {
            let dyc = &dyb[co * out_plane..co * out_plane + out_plane];
            for ci in 0..g.in_ch {
                let xp = &xb[ci * in_plane..ci * in_plane + in_plane];
                let dxp = &mut dxb[ci * in_plane..ci * in_plane + in_plane];
                let wbase = (co * g.in_ch + ci) * g.k_h * g.k_w;
                for kh in 0..g.k_h {
                    for kw in 0..g.k_w {
                        let wv = w[wbase + kh * g.k_w + kw];
                        let mut wacc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.in_h as isize {
                                continue;
                            }
                            let row = iy as usize * g.in_w;
                            let dyrow = &dyc[oy * ow..oy * ow + ow];
                            for ox in 0..ow {
                                let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                                if ix < 0 || ix >= g.in_w as isize {
                                    continue;
                                }
                                let gy = dyrow[ox];
                                dxp[row + ix as usize] += wv * gy;
                                wacc += xp[row + ix as usize] * gy;
                            }
                        }
                        dw[wbase + kh * g.k_w + kw] += wacc;
                    }
                }
            }
        }
    }
}

/// Row-wise softmax over the last axis of a (rows, cols) buffer.
pub fn softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let xi = &x[r * cols..(r + 1) * cols];
        let oi = &mut out[r * cols..(r + 1) * cols];
        let m = xi.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut z = 0.0;
        for (o, &v) in oi.iter_mut().zip(xi) {
            *o = (v - m).exp();
            z += *o;
        }
        for o in oi.iter_mut() {
            *o /= z;
        }
    }
    out
}

pub fn log_softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let xi = &x[r * cols..(r + 1) * cols];
        let oi = &mut out[r * cols..(r + 1) * cols];
        let m = xi.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let z: f64 = xi.iter().fold(0.0, |a, &v| a + (v - m).exp());
        let lz = z.ln() + m;
        for (o, &v) in oi.iter_mut().zip(xi) {
            *o = v - lz;
        }
    }
    out
}

/// Global average pool (N,C,H,W) -> (N,C).
pub fn global_avg_pool(x: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        for ch in 0..c {
            let p = &x[(i * c + ch) * plane..(i * c + ch + 1) * plane];
            out[i * c + ch] = p.iter().fold(0.0, |a, &v| a + v) / plane as f64;
        }
    }
    out
}

/// Channelwise affine normalization of (N,C,H,W) with given per-channel
/// mean/var: the inference form of batch norm.
pub fn batchnorm_inference(
    x: &[f64],
    n: usize,
    c: usize,
    plane: usize,
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        for ch in 0..c {
            let s = gamma[ch] / (var[ch] + eps).sqrt();
            let b = beta[ch] - mean[ch] * s;
            let base = (i * c + ch) * plane;
            for j in 0..plane {
                out[base + j] = x[base + j] * s + b;
            }
        }
    }
    out
}

/// Per-channel batch statistics of (N,C,H,W): (mean, biased variance).
pub fn batch_stats(x: &[f64], n: usize, c: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (n * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for j in 0..plane {
                acc += x[base + j];
            }
        }
        mean[ch] = acc / count;
        let mut vacc = 0.0;
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for j in 0..plane {
                let d = x[base + j] - mean[ch];
                vacc += d * d;
            }
        }
        var[ch] = vacc / count;
    }
    (mean, var)
}

/// 2x2 (or general k) box downsample of a single-channel (H,W) image.
pub fn box_downsample(x: &[f64], h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![0.0; oh * ow];
    let inv = 1.0 / (factor * factor) as f64;
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += x[(oy * factor + dy) * w + ox * factor + dx];
                }
            }
            out[oy * ow + ox] = acc * inv;
        }
    }
    out
}

/// Elementwise helpers over whole tensors.
pub fn unary(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    t.map(f)
}
