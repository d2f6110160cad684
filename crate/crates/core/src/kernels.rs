//! Raw NHWC compute kernels with their adjoints. No bookkeeping here; the
//! tape in [`crate::autodiff`] decides which adjoints are needed.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::tensor::{Real, Shape, Tensor};

/// Depthwise `k x k` convolution, stride 1, zero 'same' padding.
/// `kernel` has shape `(1, k, k, c)`.
pub fn depthwise_conv<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let [_, k, _, c] = kernel.shape().0;
    let (h, w) = (s.h(), s.w());
    let p = k / 2;
    let mut out = Tensor::zeros(s);
    let xd = x.data();
    let kd = kernel.data();
    let od = out.data_mut();
    for n in 0..s.n() {
        for y in 0..h {
            for xx in 0..w {
                let o = ((n * h + y) * w + xx) * c;
                let orow = &mut od[o..o + c];
                for ky in 0..k {
                    let iy = y + ky;
                    if iy < p || iy - p >= h {
                        continue;
                    }
                    let iy = iy - p;
                    for kx in 0..k {
                        let ix = xx + kx;
                        if ix < p || ix - p >= w {
                            continue;
                        }
                        let ix = ix - p;
                        let i = ((n * h + iy) * w + ix) * c;
                        let irow = &xd[i..i + c];
                        let krow = &kd[(ky * k + kx) * c..(ky * k + kx + 1) * c];
                        for ((o, &a), &b) in orow.iter_mut().zip(irow).zip(krow) {
                            *o += a * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`depthwise_conv`]: returns `(dx, dkernel)`.
pub fn depthwise_conv_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>) {
    let s = x.shape();
    let [_, k, _, c] = kernel.shape().0;
    let (h, w) = (s.h(), s.w());
    let p = k / 2;
    let mut dx = need_dx.then(|| Tensor::zeros(s));
    let mut dk = Tensor::zeros(kernel.shape());
    let xd = x.data();
    let kd = kernel.data();
    let gd = grad.data();
    {
        let dkd = dk.data_mut();
        for n in 0..s.n() {
            for y in 0..h {
                for xx in 0..w {
                    let o = ((n * h + y) * w + xx) * c;
                    let grow = &gd[o..o + c];
                    for ky in 0..k {
                        let iy = y + ky;
                        if iy < p || iy - p >= h {
                            continue;
                        }
                        let iy = iy - p;
                        for kx in 0..k {
                            let ix = xx + kx;
                            if ix < p || ix - p >= w {
                                continue;
                            }
                            let ix = ix - p;
                            let i = ((n * h + iy) * w + ix) * c;
                            let kk = (ky * k + kx) * c;
                            let irow = &xd[i..i + c];
                            let dkrow = &mut dkd[kk..kk + c];
                            for ((d, &g), &a) in dkrow.iter_mut().zip(grow).zip(irow) {
                                *d += g * a;
                            }
                            if let Some(dx) = dx.as_mut() {
                                let krow = &kd[kk..kk + c];
                                let dxrow = &mut dx.data_mut()[i..i + c];
                                for ((d, &g), &b) in dxrow.iter_mut().zip(grow).zip(krow) {
                                    *d += g * b;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk)
}

/// Pointwise (1x1) convolution / dense layer: `out = x @ w + b` on the
/// `(rows, c_in)` view of `x`. `w` has shape `(c_in, 1, 1, c_out)`,
/// `b` has shape `(1, 1, 1, c_out)`.
pub fn pointwise<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
    let s = x.shape();
    let cin = s.c();
    let cout = w.shape().c();
    let m = s.rows();
    let mut out = Tensor::zeros(s.with_c(cout));
    unsafe {
        T::gemm(
            m,
            cin,
            cout,
            T::ONE,
            x.data().as_ptr(),
            cin as isize,
            1,
            w.data().as_ptr(),
            cout as isize,
            1,
            T::ZERO,
            out.data_mut().as_mut_ptr(),
            cout as isize,
            1,
        );
    }
    if let Some(b) = b {
        let bd = b.data();
        for row in out.data_mut().chunks_exact_mut(cout) {
            for (o, &bb) in row.iter_mut().zip(bd) {
                *o += bb;
            }
        }
    }
    out
}

/// Adjoint of [`pointwise`]: `(dx, dw, db)`.
pub fn pointwise_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let s = x.shape();
    let cin = s.c();
    let cout = w.shape().c();
    let m = s.rows();
    let dx = need_dx.then(|| {
        let mut dx = Tensor::zeros(s);
        unsafe {
            T::gemm(
                m,
                cout,
                cin,
                T::ONE,
                grad.data().as_ptr(),
                cout as isize,
                1,
                w.data().as_ptr(),
                1,
                cout as isize,
                T::ZERO,
                dx.data_mut().as_mut_ptr(),
                cin as isize,
                1,
            );
        }
        dx
    });
    let mut dw = Tensor::zeros(w.shape());
    unsafe {
        T::gemm(
            cin,
            m,
            cout,
            T::ONE,
            x.data().as_ptr(),
            1,
            cin as isize,
            grad.data().as_ptr(),
            cout as isize,
            1,
            T::ZERO,
            dw.data_mut().as_mut_ptr(),
            cout as isize,
            1,
        );
    }
    let mut db = Tensor::zeros(Shape::new(1, 1, 1, cout));
    {
        let dbd = db.data_mut();
        for row in grad.data().chunks_exact(cout) {
            for (d, &g) in dbd.iter_mut().zip(row) {
                *d += g;
            }
        }
    }
    (dx, dw, db)
}

/// Per-channel batch statistics `(mean, biased variance)` over all rows.
pub fn channel_stats<T: Real>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let c = x.shape().c();
    let m = T::from_f64(x.shape().rows() as f64);
    let mut mean = vec![T::ZERO; c];
    for row in x.data().chunks_exact(c) {
        for (a, &v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= m;
    }
    let mut var = vec![T::ZERO; c];
    for row in x.data().chunks_exact(c) {
        for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - mu;
            *a += d * d;
        }
    }
    for a in &mut var {
        *a /= m;
    }
    (mean, var)
}

/// `out[r, ch] = (x[r, ch] - shift[ch]) * mul[ch] * gamma[ch] + beta[ch]`
pub fn affine_normalize<T: Real>(
    x: &Tensor<T>,
    shift: &[T],
    mul: &[T],
    gamma: &[T],
    beta: &[T],
) -> Tensor<T> {
    let c = x.shape().c();
    let mut out = Tensor::zeros(x.shape());
    for (orow, irow) in out.data_mut().chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
        for ch in 0..c {
            orow[ch] = (irow[ch] - shift[ch]) * mul[ch] * gamma[ch] + beta[ch];
        }
    }
    out
}

/// Adjoint of training-mode batch normalisation. Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_train_backward<T: Real>(
    x: &Tensor<T>,
    mean: &[T],
    invstd: &[T],
    gamma: &[T],
    grad: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let c = x.shape().c();
    let m = T::from_f64(x.shape().rows() as f64);
    let mut dgamma = vec![T::ZERO; c];
    let mut dbeta = vec![T::ZERO; c];
    for (grow, irow) in grad.data().chunks_exact(c).zip(x.data().chunks_exact(c)) {
        for ch in 0..c {
            let xhat = (irow[ch] - mean[ch]) * invstd[ch];
            dgamma[ch] += grow[ch] * xhat;
            dbeta[ch] += grow[ch];
        }
    }
    // mean(dxhat) = gamma * dbeta / m ; mean(dxhat * xhat) = gamma * dgamma / m
    let mut dx = Tensor::zeros(x.shape());
    for ((drow, grow), irow) in dx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(grad.data().chunks_exact(c))
        .zip(x.data().chunks_exact(c))
    {
        for ch in 0..c {
            let xhat = (irow[ch] - mean[ch]) * invstd[ch];
            let dxhat = grow[ch] * gamma[ch];
            drow[ch] = invstd[ch]
                * (dxhat - gamma[ch] * dbeta[ch] / m - xhat * gamma[ch] * dgamma[ch] / m);
        }
    }
    (dx, dgamma, dbeta)
}

/// 2x2 stride-2 max pooling. Returns the output and the flat argmax index of
/// every output element.
pub fn max_pool2<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let s = x.shape();
    let (h, w, c) = (s.h(), s.w(), s.c());
    let (oh, ow) = (h / 2, w / 2);
    let os = Shape::new(s.n(), oh, ow, c);
    let mut out = Tensor::zeros(os);
    let mut arg = vec![0u32; os.numel()];
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..s.n() {
        for y in 0..oh {
            for xx in 0..ow {
                let o = ((n * oh + y) * ow + xx) * c;
                for ch in 0..c {
                    let mut best = T::ZERO;
                    let mut bi = usize::MAX;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ((n * h + 2 * y + dy) * w + 2 * xx + dx) * c + ch;
                            if bi == usize::MAX || xd[i] > best {
                                best = xd[i];
                                bi = i;
                            }
                        }
                    }
                    od[o + ch] = best;
                    arg[o + ch] = bi as u32;
                }
            }
        }
    }
    (out, arg)
}

/// 3x3 stride-1 max pooling with 'same' extent (out-of-bounds taps ignored).
pub fn max_pool3_same<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let s = x.shape();
    let (h, w, c) = (s.h(), s.w(), s.c());
    let mut out = Tensor::zeros(s);
    let mut arg = vec![0u32; s.numel()];
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..s.n() {
        for y in 0..h {
            for xx in 0..w {
                let o = ((n * h + y) * w + xx) * c;
                let y0 = y.saturating_sub(1);
                let y1 = (y + 1).min(h - 1);
                let x0 = xx.saturating_sub(1);
                let x1 = (xx + 1).min(w - 1);
                for ch in 0..c {
                    let mut bi = o + ch;
                    let mut best = xd[bi];
                    for iy in y0..=y1 {
                        for ix in x0..=x1 {
                            let i = ((n * h + iy) * w + ix) * c + ch;
                            if xd[i] > best {
                                best = xd[i];
                                bi = i;
                            }
                        }
                    }
                    od[o + ch] = best;
                    arg[o + ch] = bi as u32;
                }
            }
        }
    }
    (out, arg)
}

/// Routes output gradients back to argmax positions.
pub fn scatter_argmax<T: Real>(input_shape: Shape, arg: &[u32], grad: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in arg.iter().zip(grad.data()) {
        d[i as usize] += g;
    }
    dx
}

/// Real/imaginary parts of the `m x len` operator mapping a length-`len`
/// signal to its low-pass version at length `m = len / 2`: forward DFT, keep
/// the centred `m` lowest frequencies, inverse DFT of size `m`. The `1/len`
/// factor makes the operator preserve constants.
pub struct SpectralOperator {
    pub m: usize,
    pub len: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl SpectralOperator {
    fn build(len: usize) -> Self {
        let m = len / 2;
        let k_lo = -((m / 2) as i64);
        let k_hi = (m as i64 + 1) / 2 - 1;
        let mut re = vec![0.0; m * len];
        let mut im = vec![0.0; m * len];
        for i in 0..m {
            for t in 0..len {
                let (mut sr, mut si) = (0.0, 0.0);
                for k in k_lo..=k_hi {
                    let theta = 2.0 * PI * k as f64 * (i as f64 / m as f64 - t as f64 / len as f64);
                    sr += theta.cos();
                    si += theta.sin();
                }
                re[i * len + t] = sr / len as f64;
                im[i * len + t] = si / len as f64;
            }
        }
        SpectralOperator { m, len, re, im }
    }

    /// Cached operator for a given signal length.
    pub fn get(len: usize) -> Arc<SpectralOperator> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<SpectralOperator>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("spectral cache poisoned");
        guard
            .entry(len)
            .or_insert_with(|| Arc::new(SpectralOperator::build(len)))
            .clone()
    }

    fn cast<T: Real>(&self) -> (Vec<T>, Vec<T>) {
        (
            self.re.iter().map(|&v| T::from_f64(v)).collect(),
            self.im.iter().map(|&v| T::from_f64(v)).collect(),
        )
    }
}

/// Spectral pooling to half resolution:
/// `Y = Re(P X Q^T) = Pr X Qr^T - Pi X Qi^T` per (image, channel).
pub fn spectral_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (n, h, w, c) = (s.n(), s.h(), s.w(), s.c());
    let ph = SpectralOperator::get(h);
    let pw = SpectralOperator::get(w);
    let (mh, mw) = (ph.m, pw.m);
    let (pr, pi) = ph.cast::<T>();
    let (qr, qi) = pw.cast::<T>();
    // Along W: tr[n,y] (mw x c) = Qr (mw x w) @ x[n,y] (w x c)
    let tshape = Shape::new(n, h, mw, c);
    let mut tr = Tensor::zeros(tshape);
    let mut ti = Tensor::zeros(tshape);
    let xd = x.data();
    for row in 0..n * h {
        let xo = row * w * c;
        let to = row * mw * c;
        unsafe {
            T::gemm(
                mw, w, c, T::ONE,
                qr.as_ptr(), w as isize, 1,
                xd[xo..].as_ptr(), c as isize, 1,
                T::ZERO,
                tr.data_mut()[to..].as_mut_ptr(), c as isize, 1,
            );
            T::gemm(
                mw, w, c, T::ONE,
                qi.as_ptr(), w as isize, 1,
                xd[xo..].as_ptr(), c as isize, 1,
                T::ZERO,
                ti.data_mut()[to..].as_mut_ptr(), c as isize, 1,
            );
        }
    }
    // Along H: y[n] (mh x mw*c) = Pr @ tr[n] - Pi @ ti[n]
    let mut out = Tensor::zeros(Shape::new(n, mh, mw, c));
    let cols = mw * c;
    for b in 0..n {
        let to = b * h * cols;
        let oo = b * mh * cols;
        unsafe {
            T::gemm(
                mh, h, cols, T::ONE,
                pr.as_ptr(), h as isize, 1,
                tr.data()[to..].as_ptr(), cols as isize, 1,
                T::ZERO,
                out.data_mut()[oo..].as_mut_ptr(), cols as isize, 1,
            );
            T::gemm(
                mh, h, cols, -T::ONE,
                pi.as_ptr(), h as isize, 1,
                ti.data()[to..].as_ptr(), cols as isize, 1,
                T::ONE,
                out.data_mut()[oo..].as_mut_ptr(), cols as isize, 1,
            );
        }
    }
    out
}

/// Adjoint of [`spectral_pool`].
pub fn spectral_pool_backward<T: Real>(input_shape: Shape, grad: &Tensor<T>) -> Tensor<T> {
    let (n, h, w, c) = (
        input_shape.n(),
        input_shape.h(),
        input_shape.w(),
        input_shape.c(),
    );
    let ph = SpectralOperator::get(h);
    let pw = SpectralOperator::get(w);
    let (mh, mw) = (ph.m, pw.m);
    let (pr, pi) = ph.cast::<T>();
    let (qr, qi) = pw.cast::<T>();
    let cols = mw * c;
    let tshape = Shape::new(n, h, mw, c);
    let mut dtr = Tensor::zeros(tshape);
    let mut dti = Tensor::zeros(tshape);
    for b in 0..n {
        let go = b * mh * cols;
        let to = b * h * cols;
        unsafe {
            // dtr = Pr^T (h x mh) @ g (mh x cols)
            T::gemm(
                h, mh, cols, T::ONE,
                pr.as_ptr(), 1, h as isize,
                grad.data()[go..].as_ptr(), cols as isize, 1,
                T::ZERO,
                dtr.data_mut()[to..].as_mut_ptr(), cols as isize, 1,
            );
            T::gemm(
                h, mh, cols, -T::ONE,
                pi.as_ptr(), 1, h as isize,
                grad.data()[go..].as_ptr(), cols as isize, 1,
                T::ZERO,
                dti.data_mut()[to..].as_mut_ptr(), cols as isize, 1,
            );
        }
    }
    let mut dx = Tensor::zeros(input_shape);
    for row in 0..n * h {
        let xo = row * w * c;
        let to = row * mw * c;
        unsafe {
            // dx[n,y] (w x c) = Qr^T (w x mw) @ dtr[n,y] + Qi^T @ dti[n,y]
            T::gemm(
                w, mw, c, T::ONE,
                qr.as_ptr(), 1, w as isize,
                dtr.data()[to..].as_ptr(), c as isize, 1,
                T::ZERO,
                dx.data_mut()[xo..].as_mut_ptr(), c as isize, 1,
            );
            T::gemm(
                w, mw, c, T::ONE,
                qi.as_ptr(), 1, w as isize,
                dti.data()[to..].as_ptr(), c as isize, 1,
                T::ONE,
                dx.data_mut()[xo..].as_mut_ptr(), c as isize, 1,
            );
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (h, w, c) = (s.h(), s.w(), s.c());
    let os = Shape::new(s.n(), 2 * h, 2 * w, c);
    let mut out = Tensor::zeros(os);
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..s.n() {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                let o = ((n * 2 * h + y) * 2 * w + xx) * c;
                let i = ((n * h + y / 2) * w + xx / 2) * c;
                od[o..o + c].copy_from_slice(&xd[i..i + c]);
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(input_shape: Shape, grad: &Tensor<T>) -> Tensor<T> {
    let (h, w, c) = (input_shape.h(), input_shape.w(), input_shape.c());
    let mut dx = Tensor::zeros(input_shape);
    let gd = grad.data();
    let d = dx.data_mut();
    for n in 0..input_shape.n() {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                let o = ((n * 2 * h + y) * 2 * w + xx) * c;
                let i = ((n * h + y / 2) * w + xx / 2) * c;
                for ch in 0..c {
                    d[i + ch] += gd[o + ch];
                }
            }
        }
    }
    dx
}

/// Picks every second pixel (even rows/cols): the sampling step of a
/// stride-2 1x1 convolution.
pub fn subsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (h, w, c) = (s.h(), s.w(), s.c());
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(Shape::new(s.n(), oh, ow, c));
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..s.n() {
        for y in 0..oh {
            for xx in 0..ow {
                let o = ((n * oh + y) * ow + xx) * c;
                let i = ((n * h + 2 * y) * w + 2 * xx) * c;
                od[o..o + c].copy_from_slice(&xd[i..i + c]);
            }
        }
    }
    out
}

pub fn subsample2_backward<T: Real>(input_shape: Shape, grad: &Tensor<T>) -> Tensor<T> {
    let (h, w, c) = (input_shape.h(), input_shape.w(), input_shape.c());
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Tensor::zeros(input_shape);
    let gd = grad.data();
    let d = dx.data_mut();
    for n in 0..input_shape.n() {
        for y in 0..oh {
            for xx in 0..ow {
                let o = ((n * oh + y) * ow + xx) * c;
                let i = ((n * h + 2 * y) * w + 2 * xx) * c;
                d[i..i + c].copy_from_slice(&gd[o..o + c]);
            }
        }
    }
    dx
}

/// Channel-wise concatenation.
pub fn concat_channels<T: Real>(xs: &[&Tensor<T>]) -> Tensor<T> {
    let s0 = xs[0].shape();
    let total: usize = xs.iter().map(|t| t.shape().c()).sum();
    let mut out = Tensor::zeros(s0.with_c(total));
    let rows = s0.rows();
    let od = out.data_mut();
    let mut off = 0;
    for t in xs {
        let c = t.shape().c();
        for (r, src) in t.data().chunks_exact(c).enumerate().take(rows) {
            od[r * total + off..r * total + off + c].copy_from_slice(src);
        }
        off += c;
    }
    out
}

/// Splits a channel-concatenated gradient back into its parts.
pub fn split_channels<T: Real>(grad: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let s = grad.shape();
    let total = s.c();
    let mut off = 0;
    let mut parts = Vec::with_capacity(widths.len());
    for &c in widths {
        let mut t = Tensor::zeros(s.with_c(c));
        for (r, dst) in t.data_mut().chunks_exact_mut(c).enumerate() {
            dst.copy_from_slice(&grad.data()[r * total + off..r * total + off + c]);
        }
        off += c;
        parts.push(t);
    }
    parts
}

/// Global average pooling `(n,h,w,c) -> (n,1,1,c)`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let c = s.c();
    let hw = s.h() * s.w();
    let inv = T::from_f64(1.0 / hw as f64);
    let mut out = Tensor::zeros(Shape::new(s.n(), 1, 1, c));
    for n in 0..s.n() {
        let orow = &mut out.data_mut()[n * c..(n + 1) * c];
        for irow in x.data()[n * hw * c..(n + 1) * hw * c].chunks_exact(c) {
            for (o, &v) in orow.iter_mut().zip(irow) {
                *o += v;
            }
        }
        for o in orow {
            *o *= inv;
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Real>(input_shape: Shape, grad: &Tensor<T>) -> Tensor<T> {
    let c = input_shape.c();
    let hw = input_shape.h() * input_shape.w();
    let inv = T::from_f64(1.0 / hw as f64);
    let mut dx = Tensor::zeros(input_shape);
    for n in 0..input_shape.n() {
        let grow = &grad.data()[n * c..(n + 1) * c];
        for drow in dx.data_mut()[n * hw * c..(n + 1) * hw * c].chunks_exact_mut(c) {
            for (d, &g) in drow.iter_mut().zip(grow) {
                *d = g * inv;
            }
        }
    }
    dx
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn max_pool_patch() {
        let x = t(Shape::new(1, 2, 2, 1), &[1.0, 5.0, 3.0, 2.0]);
        let (y, arg) = max_pool2(&x);
        assert_eq!(y.data(), &[5.0]);
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn spectral_pool_preserves_constants() {
        let x = Tensor::full(Shape::new(2, 8, 8, 3), 2.5f64);
        let y = spectral_pool(&x);
        assert_eq!(y.shape(), Shape::new(2, 4, 4, 3));
        for v in y.data() {
            assert!((v - 2.5).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn spectral_pool_of_two_pixels_is_their_mean() {
        let x = t(Shape::new(1, 2, 2, 1), &[1.0, 3.0, 5.0, 7.0]);
        let y = spectral_pool(&x);
        assert!((y.data()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn upsample_then_adjoint_sums_blocks() {
        let x = t(Shape::new(1, 1, 2, 1), &[1.0, 2.0]);
        let u = upsample2(&x);
        assert_eq!(u.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let g = Tensor::full(u.shape(), 1.0);
        assert_eq!(upsample2_backward(x.shape(), &g).data(), &[4.0, 4.0]);
    }

    #[test]
    fn concat_split_inverse() {
        let a = t(Shape::new(1, 1, 2, 1), &[1.0, 2.0]);
        let b = t(Shape::new(1, 1, 2, 2), &[3.0, 4.0, 5.0, 6.0]);
        let c = concat_channels(&[&a, &b]);
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let parts = split_channels(&c, &[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn pointwise_matches_naive() {
        let x = t(Shape::new(1, 1, 2, 3), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = t(Shape::new(3, 1, 1, 2), &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = t(Shape::new(1, 1, 1, 2), &[0.5, -0.5]);
        let y = pointwise(&x, &w, Some(&b));
        assert_eq!(y.data(), &[4.5, 4.5, 10.5, 10.5]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
