//! Forward kernels and their hand-written adjoints.
//!
//! Spatial tensors are laid out `[channels, rows, cols]`.

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a · bᵀ`
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let brow = b.row(j);
            out[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ · b`
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim("matmul_tn", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &api) in arow.iter().enumerate() {
            if api == T::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + api * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = x.dims2()?;
    let d = x.data();
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = x.dims2()?;
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in softmax input".into()));
    }
    let mut out = x.data().to_vec();
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Tensor::new(vec![r, c], out)
}

/// Given softmax output `y` and upstream `g`: `y ⊙ (g − Σ g⊙y)` per row.
pub fn softmax_rows_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = y.dims2()?;
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        let yr = y.row(i);
        let gr = g.row(i);
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for j in 0..c {
            out[i * c + j] = yr[j] * (gr[j] - dot);
        }
    }
    Tensor::new(vec![r, c], out)
}

fn spatial3(x: &Tensor<impl Real>, op: &'static str) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[c, h, w] => Ok((c, h, w)),
        other => Err(Error::InvalidInput(format!(
            "{op}: expected [channels, rows, cols], got {other:?}"
        ))),
    }
}

fn kernel_dims(k: &Tensor<impl Real>) -> Result<(usize, usize)> {
    match k.shape() {
        &[c, d, 3, 3] => Ok((c, d)),
        other => Err(Error::InvalidInput(format!(
            "conv2d_3x3: kernel must be [C, D, 3, 3], got {other:?}"
        ))),
    }
}

/// 3×3 convolution, stride 1, zero padding 1 (cross-correlation, as in
/// every deep-learning framework).
pub fn conv2d_3x3<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, h, w) = spatial3(input, "conv2d_3x3")?;
    let (c, kd) = kernel_dims(kernel)?;
    if kd != d {
        return Err(Error::dim("conv2d_3x3", input.shape(), kernel.shape()));
    }
    let (x, k) = (input.data(), kernel.data());
    let mut out = vec![T::zero(); c * h * w];
    for co in 0..c {
        let plane = &mut out[co * h * w..(co + 1) * h * w];
        for ci in 0..d {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            let kk = &k[(co * d + ci) * 9..(co * d + ci + 1) * 9];
            for (tap, &kv) in kk.iter().enumerate() {
                if kv == T::zero() {
                    continue;
                }
                let (dy, dx) = (tap / 3, tap % 3);
                for i in 0..h {
                    let si = i + dy;
                    if si < 1 || si > h {
                        continue;
                    }
                    let srow = &src[(si - 1) * w..si * w];
                    let orow = &mut plane[i * w..(i + 1) * w];
                    // output col j reads input col j + dx - 1
                    let j_lo = 1usize.saturating_sub(dx);
                    let j_hi = (w + 1 - dx).min(w);
                    for j in j_lo..j_hi {
                        orow[j] = orow[j] + kv * srow[j + dx - 1];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Returns `(d_input, d_kernel)`.
pub fn conv2d_3x3_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (d, h, w) = spatial3(input, "conv2d_3x3")?;
    let (c, _) = kernel_dims(kernel)?;
    let (x, k, g) = (input.data(), kernel.data(), grad.data());
    let mut dx_all = vec![T::zero(); d * h * w];
    let mut dk = vec![T::zero(); c * d * 9];
    for co in 0..c {
        let gplane = &g[co * h * w..(co + 1) * h * w];
        for ci in 0..d {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            let dsrc = &mut dx_all[ci * h * w..(ci + 1) * h * w];
            let base = (co * d + ci) * 9;
            for tap in 0..9 {
                let (dy, dxo) = (tap / 3, tap % 3);
                let kv = k[base + tap];
                let mut acc = T::zero();
                for i in 0..h {
                    let si = i + dy;
                    if si < 1 || si > h {
                        continue;
                    }
                    let j_lo = 1usize.saturating_sub(dxo);
                    let j_hi = (w + 1 - dxo).min(w);
                    for j in j_lo..j_hi {
                        let gi = gplane[i * w + j];
                        let s = (si - 1) * w + j + dxo - 1;
                        acc = acc + gi * src[s];
                        dsrc[s] = dsrc[s] + gi * kv;
                    }
                }
                dk[base + tap] = dk[base + tap] + acc;
            }
        }
    }
    Ok((
        Tensor::new(vec![d, h, w], dx_all)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
    ))
}

/// Kernel-3 convolution along the token axis of a `[D, N]` input with a
/// `[C, D, 3]` kernel, zero padding 1. Output `[C, N]`.
pub fn conv1d_k3<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, n) = input.dims2()?;
    let c = match kernel.shape() {
        &[c, kd, 3] if kd == d => c,
        _ => return Err(Error::dim("conv1d_k3", input.shape(), kernel.shape())),
    };
    let (x, k) = (input.data(), kernel.data());
    let mut out = vec![T::zero(); c * n];
    for co in 0..c {
        for ci in 0..d {
            let kk = &k[(co * d + ci) * 3..(co * d + ci) * 3 + 3];
            let src = &x[ci * n..(ci + 1) * n];
            for t in 0..n {
                let mut acc = T::zero();
                for (tap, &kv) in kk.iter().enumerate() {
                    let s = t + tap;
                    if s >= 1 && s <= n {
                        acc = acc + kv * src[s - 1];
                    }
                }
                out[co * n + t] = out[co * n + t] + acc;
            }
        }
    }
    Tensor::new(vec![c, n], out)
}

pub fn conv1d_k3_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (d, n) = input.dims2()?;
    let c = kernel.shape()[0];
    let (x, k, g) = (input.data(), kernel.data(), grad.data());
    let mut dx = vec![T::zero(); d * n];
    let mut dk = vec![T::zero(); c * d * 3];
    for co in 0..c {
        for ci in 0..d {
            for tap in 0..3 {
                let kv = k[(co * d + ci) * 3 + tap];
                let mut acc = T::zero();
                for t in 0..n {
                    let s = t + tap;
                    if s >= 1 && s <= n {
                        let gv = g[co * n + t];
                        acc = acc + gv * x[ci * n + s - 1];
                        dx[ci * n + s - 1] = dx[ci * n + s - 1] + gv * kv;
                    }
                }
                dk[(co * d + ci) * 3 + tap] = acc;
            }
        }
    }
    Ok((
        Tensor::new(vec![d, n], dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
    ))
}

/// Saved quantities of a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes over the trailing axis.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = *x.shape().last().unwrap();
    if gamma.len() != d || beta.len() != d {
        return Err(Error::dim("layer_norm", x.shape(), gamma.shape()));
    }
    if eps <= T::zero() {
        return Err(Error::InvalidInput(
            "layer_norm eps must be positive".into(),
        ));
    }
    let rows = x.len() / d;
    let dn = T::lit(d as f64);
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    let (gd, bd) = (gamma.data(), beta.data());
    for r in 0..rows {
        let src = &x.data()[r * d..(r + 1) * d];
        let mean = src.iter().copied().sum::<T>() / dn;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let nv = (src[j] - mean) * is;
            xhat[r * d + j] = nv;
            out[r * d + j] = nv * gd[j] + bd[j];
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        LayerNormCache {
            normalized: Tensor::new(x.shape().to_vec(), xhat)?,
            inv_std,
        },
    ))
}

/// Returns `(d_x, d_gamma, d_beta)`.
pub fn layer_norm_backward<T: Real>(
    cache: &LayerNormCache<T>,
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = gamma.len();
    let rows = grad.len() / d;
    let dn = T::lit(d as f64);
    let xhat = cache.normalized.data();
    let g = grad.data();
    let gd = gamma.data();
    let mut dx = vec![T::zero(); grad.len()];
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    for r in 0..rows {
        let xr = &xhat[r * d..(r + 1) * d];
        let gr = &g[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dgamma[j] = dgamma[j] + gr[j] * xr[j];
            dbeta[j] = dbeta[j] + gr[j];
            let dxh = gr[j] * gd[j];
            mean_dxhat = mean_dxhat + dxh;
            mean_dxhat_xhat = mean_dxhat_xhat + dxh * xr[j];
        }
        mean_dxhat = mean_dxhat / dn;
        mean_dxhat_xhat = mean_dxhat_xhat / dn;
        let is = cache.inv_std[r];
        for j in 0..d {
            let dxh = gr[j] * gd[j];
            dx[r * d + j] = is * (dxh - mean_dxhat - xr[j] * mean_dxhat_xhat);
        }
    }
    (
        Tensor::new(grad.shape().to_vec(), dx).unwrap(),
        Tensor::new(gamma.shape().to_vec(), dgamma).unwrap(),
        Tensor::new(gamma.shape().to_vec(), dbeta).unwrap(),
    )
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu<T: Real>(v: T) -> T {
    let (c, a) = (T::lit(GELU_C), T::lit(GELU_A));
    let half = T::lit(0.5);
    half * v * (T::one() + (c * (v + a * v * v * v)).tanh())
}

pub fn gelu_grad<T: Real>(v: T) -> T {
    let (c, a) = (T::lit(GELU_C), T::lit(GELU_A));
    let half = T::lit(0.5);
    let u = c * (v + a * v * v * v);
    let th = u.tanh();
    let du = c * (T::one() + T::lit(3.0) * a * v * v);
    half * (T::one() + th) + half * v * (T::one() - th * th) * du
}

/// Numerically stable `log Σ exp`.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    max + xs.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

/// Softmax of a flat vector.
pub fn softmax<T: Real>(xs: &[T]) -> Vec<T> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&v| (v - lse).exp()).collect()
}
