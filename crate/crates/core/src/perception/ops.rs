//! Forward and backward kernels over row-major slices.

use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type of predictor parameters and activations.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

const LANES: usize = 8;

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// `out[n, o] = b[o] + Σ_i inp[n, i] · w[o, i]`
pub fn linear<T: Real>(out: &mut [T], inp: &[T], w: &[T], b: &[T], in_dim: usize, out_dim: usize) {
    for (orow, irow) in out.chunks_exact_mut(out_dim).zip(inp.chunks_exact(in_dim)) {
        for ((o, wrow), &bias) in orow.iter_mut().zip(w.chunks_exact(in_dim)).zip(b) {
            *o = bias + dot(irow, wrow);
        }
    }
}

/// Accumulates the gradients of [`linear`]. `dinp` is accumulated into when given.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    dinp: Option<&mut [T]>,
    dw: &mut [T],
    db: &mut [T],
    dout: &[T],
    inp: &[T],
    w: &[T],
    in_dim: usize,
    out_dim: usize,
) {
    for (drow, irow) in dout.chunks_exact(out_dim).zip(inp.chunks_exact(in_dim)) {
        for ((&g, dwrow), dbias) in drow.iter().zip(dw.chunks_exact_mut(in_dim)).zip(db.iter_mut()) {
            if g != T::zero() {
                axpy(dwrow, g, irow);
                *dbias += g;
            }
        }
    }
    if let Some(dinp) = dinp {
        for (drow, dirow) in dout.chunks_exact(out_dim).zip(dinp.chunks_exact_mut(in_dim)) {
            for (&g, wrow) in drow.iter().zip(w.chunks_exact(in_dim)) {
                if g != T::zero() {
                    axpy(dirow, g, wrow);
                }
            }
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

pub fn layernorm<T: Real>(out: &mut [T], mean: &mut [T], rstd: &mut [T], inp: &[T], g: &[T], b: &[T], d: usize) {
    let inv_d = T::of(1.0 / d as f64);
    for (n, (orow, irow)) in out.chunks_exact_mut(d).zip(inp.chunks_exact(d)).enumerate() {
        let m = irow.iter().copied().sum::<T>() * inv_d;
        let v = irow.iter().map(|&x| (x - m) * (x - m)).sum::<T>() * inv_d;
        let r = T::one() / (v + T::of(LN_EPS)).sqrt();
        for (((o, &x), &gi), &bi) in orow.iter_mut().zip(irow).zip(g).zip(b) {
            *o = (x - m) * r * gi + bi;
        }
        mean[n] = m;
        rstd[n] = r;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward<T: Real>(
    dinp: &mut [T],
    dg: &mut [T],
    db: &mut [T],
    dout: &[T],
    inp: &[T],
    mean: &[T],
    rstd: &[T],
    g: &[T],
    d: usize,
) {
    let inv_d = T::of(1.0 / d as f64);
    for (n, ((direw, drow), irow)) in dinp
        .chunks_exact_mut(d)
        .zip(dout.chunks_exact(d))
        .zip(inp.chunks_exact(d))
        .enumerate()
    {
        if drow.iter().all(|&x| x == T::zero()) {
            continue;
        }
        let (m, r) = (mean[n], rstd[n]);
        let mut dnorm_mean = T::zero();
        let mut dnorm_norm_mean = T::zero();
        for ((&dy, &x), &gi) in drow.iter().zip(irow).zip(g) {
            let norm = (x - m) * r;
            let dnorm = dy * gi;
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean = dnorm_mean * inv_d;
        dnorm_norm_mean = dnorm_norm_mean * inv_d;
        for i in 0..d {
            let norm = (irow[i] - m) * r;
            let dnorm = drow[i] * g[i];
            dg[i] += drow[i] * norm;
            db[i] += drow[i];
            direw[i] += r * (dnorm - dnorm_mean - norm * dnorm_norm_mean);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu<T: Real>(out: &mut [T], inp: &[T]) {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    for (o, &x) in out.iter_mut().zip(inp) {
        let t = (c * (x + a * x * x * x)).tanh();
        *o = half * x * (T::one() + t);
    }
}

pub fn gelu_backward<T: Real>(dinp: &mut [T], inp: &[T], dout: &[T]) {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    let three = T::of(3.0);
    for ((di, &x), &dy) in dinp.iter_mut().zip(inp).zip(dout) {
        let t = (c * (x + a * x * x * x)).tanh();
        let dt = (T::one() - t * t) * c * (T::one() + three * a * x * x);
        *di = dy * (half * (T::one() + t) + half * x * dt);
    }
}

/// Full (unmasked) multi-head self-attention.
///
/// `qkv` is `[s, 3d]` holding queries, keys and values; `att` receives the
/// `[heads, s, s]` attention weights; `out` is `[s, d]`.
pub fn attention<T: Real>(out: &mut [T], att: &mut [T], qkv: &[T], s: usize, d: usize, heads: usize) {
    let hd = d / heads;
    let scale = T::of(1.0 / libm::sqrt(hd as f64));
    let mut kh = alloc::vec![T::zero(); s * hd];
    for h in 0..heads {
        for j in 0..s {
            kh[j * hd..(j + 1) * hd].copy_from_slice(&qkv[j * 3 * d + d + h * hd..][..hd]);
        }
        for i in 0..s {
            let q = &qkv[i * 3 * d + h * hd..][..hd];
            let row = &mut att[(h * s + i) * s..][..s];
            let mut max = T::neg_infinity();
            for (j, a) in row.iter_mut().enumerate() {
                *a = dot(q, &kh[j * hd..(j + 1) * hd]) * scale;
                max = max.max(*a);
            }
            let mut sum = T::zero();
            for a in row.iter_mut() {
                *a = (*a - max).exp();
                sum += *a;
            }
            let inv = T::one() / sum;
            let o = &mut out[i * d + h * hd..][..hd];
            o.iter_mut().for_each(|x| *x = T::zero());
            for (j, a) in row.iter_mut().enumerate() {
                *a *= inv;
                axpy(o, *a, &qkv[j * 3 * d + 2 * d + h * hd..][..hd]);
            }
        }
    }
}

/// Accumulates `dqkv` from `dout`; `att` holds the forward weights.
pub fn attention_backward<T: Real>(
    dqkv: &mut [T],
    dout: &[T],
    qkv: &[T],
    att: &[T],
    s: usize,
    d: usize,
    heads: usize,
) {
    let hd = d / heads;
    let scale = T::of(1.0 / libm::sqrt(hd as f64));
    let mut datt = alloc::vec![T::zero(); s];
    for h in 0..heads {
        for i in 0..s {
            let a = &att[(h * s + i) * s..][..s];
            let dout_i = &dout[i * d + h * hd..][..hd];
            // d(att) then softmax backward
            let mut weighted = T::zero();
            for j in 0..s {
                let v = &qkv[j * 3 * d + 2 * d + h * hd..][..hd];
                datt[j] = dot(dout_i, v);
                weighted += a[j] * datt[j];
                let dv = &mut dqkv[j * 3 * d + 2 * d + h * hd..][..hd];
                axpy(dv, a[j], dout_i);
            }
            for j in 0..s {
                let ds = a[j] * (datt[j] - weighted) * scale;
                if ds == T::zero() {
                    continue;
                }
                let (qi, kj) = (i * 3 * d + h * hd, j * 3 * d + d + h * hd);
                for k in 0..hd {
                    let (q, kk) = (qkv[qi + k], qkv[kj + k]);
                    dqkv[qi + k] += ds * kk;
                    dqkv[kj + k] += ds * q;
                }
            }
        }
    }
}
