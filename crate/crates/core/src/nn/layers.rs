//! Layer kernels. Each forward function has a matching backward function;
//! all batch reductions run in sample order so results are independent of
//! the thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, gemm, Real, Tensor4, View};
use crate::error::{Error, Result};

/// Zero padding added before and after each spatial axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub before: usize,
    pub after: usize,
}

impl Padding {
    pub const fn symmetric(p: usize) -> Self {
        Padding {
            before: p,
            after: p,
        }
    }

    /// Padding that keeps the spatial size for a stride-1 kernel of side `k`.
    /// Even kernels put the extra row/column after.
    pub const fn same(k: usize) -> Self {
        Padding {
            before: (k - 1) / 2,
            after: k / 2,
        }
    }

    fn total(&self) -> usize {
        self.before + self.after
    }
}

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
    hp: usize,
    wp: usize,
    ho: usize,
    wo: usize,
}

fn conv_dims<T: Real>(
    x: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: &[T],
    pad: Padding,
    layer: &str,
) -> Result<ConvDims> {
    let [n, c, h, w] = x.shape();
    let [f, wc, kh, kw] = weights.shape();
    let err = |detail: String| Error::Shape {
        layer: layer.to_string(),
        detail,
    };
    if wc != c {
        return Err(err(format!("input has {c} channels, filters expect {wc}")));
    }
    if kh != kw {
        return Err(err(format!("non-square kernel {kh}×{kw}")));
    }
    if bias.len() != f {
        return Err(err(format!("{} biases for {f} filters", bias.len())));
    }
    let (hp, wp) = (h + pad.total(), w + pad.total());
    if hp < kh || wp < kw {
        return Err(err(format!(
            "kernel {kh}×{kw} larger than padded input {hp}×{wp}"
        )));
    }
    Ok(ConvDims {
        n,
        c,
        h,
        w,
        f,
        k: kh,
        hp,
        wp,
        ho: hp - kh + 1,
        wo: wp - kw + 1,
    })
}

fn pad_sample<T: Real>(src: &[T], d: &ConvDims, pad: Padding) -> Vec<T> {
    if pad.total() == 0 {
        return src.to_vec();
    }
    let mut out = vec![T::zero(); d.c * d.hp * d.wp];
    for ch in 0..d.c {
        for y in 0..d.h {
            let s = &src[(ch * d.h + y) * d.w..][..d.w];
            let o = (ch * d.hp + y + pad.before) * d.wp + pad.before;
            out[o..o + d.w].copy_from_slice(s);
        }
    }
    out
}

/// Output pixels (`oy * wo + ox`) whose receptive field holds a non-zero
/// input value; every other output pixel equals the bias.
fn active_pixels<T: Real>(xp: &[T], d: &ConvDims) -> Vec<u32> {
    let mut nz = vec![false; d.hp * d.wp];
    for plane in xp.chunks_exact(d.hp * d.wp) {
        for (m, v) in nz.iter_mut().zip(plane) {
            *m |= !v.is_zero();
        }
    }
    // OR over the k×k window: first along rows, then along columns.
    let mut rows = vec![false; d.hp * d.wo];
    for y in 0..d.hp {
        for ox in 0..d.wo {
            rows[y * d.wo + ox] = nz[y * d.wp + ox..y * d.wp + ox + d.k].iter().any(|&b| b);
        }
    }
    let mut out = Vec::new();
    for oy in 0..d.ho {
        for ox in 0..d.wo {
            if (oy..oy + d.k).any(|y| rows[y * d.wo + ox]) {
                out.push((oy * d.wo + ox) as u32);
            }
        }
    }
    out
}

/// im2col restricted to `pixels`: row `(ch, ky, kx)`, one column per pixel.
fn gather_columns<T: Real>(xp: &[T], d: &ConvDims, pixels: &[u32]) -> Vec<T> {
    let n = pixels.len();
    let mut cols = vec![T::zero(); d.c * d.k * d.k * n];
    let mut row = 0;
    for ch in 0..d.c {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let dst = &mut cols[row * n..(row + 1) * n];
                for (v, &p) in dst.iter_mut().zip(pixels) {
                    let (oy, ox) = (p as usize / d.wo, p as usize % d.wo);
                    *v = xp[(ch * d.hp + oy + ky) * d.wp + ox + kx];
                }
                row += 1;
            }
        }
    }
    cols
}

/// Stride-1 cross-correlation with zero padding.
///
/// `weights` has shape `(filters, channels, k, k)`. Each output pixel is the
/// bias plus the `(channel, ky, kx)` products of its receptive field.
pub fn conv_forward<T: Real>(
    x: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: &[T],
    pad: Padding,
) -> Result<Tensor4<T>> {
    conv_forward_opts(x, weights, bias, pad, false)
}

/// [`conv_forward`] with an optional fast path that skips output pixels
/// whose receptive field is entirely zero. Every computed pixel goes through
/// the same product with the same operands on both paths, so they agree
/// exactly.
pub fn conv_forward_opts<T: Real>(
    x: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: &[T],
    pad: Padding,
    sparse: bool,
) -> Result<Tensor4<T>> {
    let d = conv_dims(x, weights, bias, pad, "conv")?;
    let out_plane = d.ho * d.wo;
    let kernel = d.c * d.k * d.k;
    let mut out = vec![T::zero(); d.n * d.f * out_plane];
    let w = weights.data();
    out.par_chunks_mut(d.f * out_plane)
        .enumerate()
        .for_each(|(i, out_n)| {
            let xp = pad_sample(x.sample(i), &d, pad);
            let pixels: Vec<u32> = if sparse {
                active_pixels(&xp, &d)
            } else {
                (0..out_plane as u32).collect()
            };
            let cols = gather_columns(&xp, &d, &pixels);
            let n = pixels.len();
            let mut prod = vec![T::zero(); d.f * n];
            gemm(
                d.f,
                kernel,
                n,
                View::rows(w, kernel),
                View::rows(&cols, n),
                T::zero(),
                &mut prod,
            );
            for (fi, o) in out_n.chunks_exact_mut(out_plane).enumerate() {
                o.fill(bias[fi]);
                for (&p, &v) in pixels.iter().zip(&prod[fi * n..(fi + 1) * n]) {
                    o[p as usize] = bias[fi] + v;
                }
            }
        });
    Tensor4::from_vec([d.n, d.f, d.ho, d.wo], out)
}

/// Gradients of a convolution.
pub struct ConvGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub input: Option<Tensor4<T>>,
}

/// Backward pass of [`conv_forward`]. The input gradient is only computed
/// when `need_input` is set. Only output pixels with a non-zero gradient take
/// part; per-sample weight gradients are summed in sample order.
pub fn conv_backward<T: Real>(
    x: &Tensor4<T>,
    weights: &Tensor4<T>,
    pad: Padding,
    dout: &Tensor4<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let f = weights.shape()[0];
    let zeros = vec![T::zero(); f];
    let d = conv_dims(x, weights, &zeros, pad, "conv backward")?;
    if dout.shape() != [d.n, d.f, d.ho, d.wo] {
        return Err(Error::Shape {
            layer: "conv backward".into(),
            detail: format!(
                "output gradient {:?}, expected {:?}",
                dout.shape(),
                [d.n, d.f, d.ho, d.wo]
            ),
        });
    }
    let out_plane = d.ho * d.wo;
    let kernel = d.c * d.k * d.k;
    let w = weights.data();

    // (dW, db, dX) of every sample
    type Partial<T> = (Vec<T>, Vec<T>, Option<Vec<T>>);
    let per_sample: Vec<Partial<T>> = (0..d.n)
        .into_par_iter()
        .map(|i| {
            let g = dout.sample(i);
            let pixels: Vec<u32> = (0..out_plane)
                .filter(|&p| (0..d.f).any(|fi| !g[fi * out_plane + p].is_zero()))
                .map(|p| p as u32)
                .collect();
            let n = pixels.len();
            let mut gc = vec![T::zero(); d.f * n];
            for fi in 0..d.f {
                for (v, &p) in gc[fi * n..(fi + 1) * n].iter_mut().zip(&pixels) {
                    *v = g[fi * out_plane + p as usize];
                }
            }
            let db: Vec<T> = gc
                .chunks_exact(n.max(1))
                .take(d.f)
                .map(|row| row.iter().fold(T::zero(), |a, &v| a + v))
                .collect();
            let db = if n == 0 { vec![T::zero(); d.f] } else { db };

            let xp = pad_sample(x.sample(i), &d, pad);
            let cols = gather_columns(&xp, &d, &pixels);
            let mut dw = vec![T::zero(); d.f * kernel];
            gemm(
                d.f,
                n,
                kernel,
                View::rows(&gc, n),
                View::transposed(&cols, n),
                T::zero(),
                &mut dw,
            );

            let dx = need_input.then(|| {
                let mut dcols = vec![T::zero(); kernel * n];
                gemm(
                    kernel,
                    d.f,
                    n,
                    View::transposed(w, kernel),
                    View::rows(&gc, n),
                    T::zero(),
                    &mut dcols,
                );
                let mut dxp = vec![T::zero(); d.c * d.hp * d.wp];
                let mut row = 0;
                for ch in 0..d.c {
                    for ky in 0..d.k {
                        for kx in 0..d.k {
                            for (&v, &p) in dcols[row * n..(row + 1) * n].iter().zip(&pixels) {
                                let (oy, ox) = (p as usize / d.wo, p as usize % d.wo);
                                let at = (ch * d.hp + oy + ky) * d.wp + ox + kx;
                                dxp[at] = dxp[at] + v;
                            }
                            row += 1;
                        }
                    }
                }
                let mut dx = vec![T::zero(); d.c * d.h * d.w];
                for ch in 0..d.c {
                    for y in 0..d.h {
                        let s = (ch * d.hp + y + pad.before) * d.wp + pad.before;
                        dx[(ch * d.h + y) * d.w..][..d.w].copy_from_slice(&dxp[s..s + d.w]);
                    }
                }
                dx
            });
            (dw, db, dx)
        })
        .collect();

    let mut dweights = vec![T::zero(); d.f * kernel];
    let mut dbias = vec![T::zero(); d.f];
    let mut dx_all = need_input.then(|| Vec::with_capacity(d.n * d.c * d.h * d.w));
    for (dw, db, dx) in per_sample {
        axpy(T::one(), &dw, &mut dweights);
        axpy(T::one(), &db, &mut dbias);
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend(dx);
        }
    }
    let input = match dx_all {
        Some(v) => Some(Tensor4::from_vec([d.n, d.c, d.h, d.w], v)?),
        None => None,
    };
    Ok(ConvGrads {
        weights: dweights,
        bias: dbias,
        input,
    })
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, per output
/// value, the flat input index of the chosen maximum (first in window order
/// on ties).
pub fn maxpool_forward<T: Real>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape {
            layer: "maxpool".into(),
            detail: format!("spatial size {h}×{w} is not even"),
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let planes = n * c;
    let mut out = vec![T::zero(); planes * ho * wo];
    let mut arg = vec![0u32; planes * ho * wo];
    let data = x.data();
    out.par_chunks_mut(ho * wo)
        .zip(arg.par_chunks_mut(ho * wo))
        .enumerate()
        .for_each(|(p, (o, a))| {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for idx in [best + 1, best + w, best + w + 1] {
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    o[oy * wo + ox] = data[best];
                    a[oy * wo + ox] = best as u32;
                }
            }
        });
    Ok((Tensor4::from_vec([n, c, ho, wo], out)?, arg))
}

pub fn maxpool_backward<T: Real>(
    input_shape: [usize; 4],
    argmax: &[u32],
    dout: &Tensor4<T>,
) -> Tensor4<T> {
    let mut dx = Tensor4::zeros(input_shape);
    let d = dx.data_mut();
    for (&a, &g) in argmax.iter().zip(dout.data()) {
        d[a as usize] = d[a as usize] + g;
    }
    dx
}

pub fn relu_forward<T: Real>(x: &mut Tensor4<T>) {
    x.data_mut()
        .par_iter_mut()
        .for_each(|v| *v = v.max(T::zero()));
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<T: Real>(output: &Tensor4<T>, dout: &mut Tensor4<T>) {
    dout.data_mut()
        .par_iter_mut()
        .zip(output.data())
        .for_each(|(g, &y)| {
            if y <= T::zero() {
                *g = T::zero();
            }
        });
}

/// Inverted-dropout mask: each unit is kept with probability `1 - p` and
/// scaled by `1 / (1 - p)`.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - p));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

pub fn apply_mask<T: Real>(x: &mut [T], mask: &[T]) {
    for (v, &m) in x.iter_mut().zip(mask) {
        *v = *v * m;
    }
}

/// Fully connected layer on flattened samples: `y = W x + b` with `W` stored
/// row-major as `(out, in)`.
pub fn dense_forward<T: Real>(
    x: &Tensor4<T>,
    weights: &[T],
    bias: &[T],
    outputs: usize,
) -> Result<Tensor4<T>> {
    let inputs = x.sample_len();
    if weights.len() != inputs * outputs || bias.len() != outputs {
        return Err(Error::Shape {
            layer: "dense".into(),
            detail: format!(
                "input width {inputs}, {} weights and {} biases for {outputs} outputs",
                weights.len(),
                bias.len()
            ),
        });
    }
    let n = x.batch();
    let mut out = vec![T::zero(); n * outputs];
    gemm(
        n,
        inputs,
        outputs,
        View::rows(x.data(), inputs),
        View::transposed(weights, inputs),
        T::zero(),
        &mut out,
    );
    for row in out.chunks_exact_mut(outputs) {
        for (y, &b) in row.iter_mut().zip(bias) {
            *y = *y + b;
        }
    }
    Tensor4::from_vec([n, outputs, 1, 1], out)
}

pub struct DenseGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub input: Option<Tensor4<T>>,
}

pub fn dense_backward<T: Real>(
    x: &Tensor4<T>,
    weights: &[T],
    dout: &Tensor4<T>,
    need_input: bool,
) -> DenseGrads<T> {
    let inputs = x.sample_len();
    let outputs = dout.sample_len();
    let n = x.batch();
    let g = dout.data();
    let mut dw = vec![T::zero(); outputs * inputs];
    gemm(
        outputs,
        n,
        inputs,
        View::transposed(g, outputs),
        View::rows(x.data(), inputs),
        T::zero(),
        &mut dw,
    );
    let db = (0..outputs)
        .map(|o| (0..n).fold(T::zero(), |a, i| a + g[i * outputs + o]))
        .collect();
    let input = need_input.then(|| {
        let mut dx = vec![T::zero(); n * inputs];
        gemm(
            n,
            outputs,
            inputs,
            View::rows(g, outputs),
            View::rows(weights, inputs),
            T::zero(),
            &mut dx,
        );
        Tensor4::from_vec(x.shape(), dx).expect("input shape")
    });
    DenseGrads {
        weights: dw,
        bias: db,
        input,
    }
}

/// Row-wise softmax of `(batch, classes)` logits.
pub fn softmax<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(classes) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean cross-entropy of softmax probabilities and its gradient with respect
/// to the logits, `(p - onehot) / batch`.
pub fn softmax_cross_entropy<T: Real>(
    logits: &[T],
    labels: &[usize],
    classes: usize,
) -> (T, Vec<T>) {
    let probs = softmax(logits, classes);
    let n = labels.len();
    let scale = T::from_f64(1.0 / n as f64);
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        let p = probs[i * classes + label];
        loss = loss - p.max(T::min_positive_value()).ln();
        grad[i * classes + label] = grad[i * classes + label] - T::one();
    }
    for g in grad.iter_mut() {
        *g = *g * scale;
    }
    (loss * scale, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor4<f64> {
        let mut rng = stream(seed, Purpose::Init, 0);
        let n = shape.iter().product();
        Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        let m = a.abs().max(b.abs());
        if m < 1e-7 {
            (a - b).abs() / 1e-7
        } else {
            (a - b).abs() / m
        }
    }

    #[test]
    fn conv_of_ones() {
        let x = Tensor4::from_vec([1, 1, 3, 3], vec![1.0f64; 9]).unwrap();
        let w = Tensor4::from_vec([1, 1, 3, 3], vec![1.0f64; 9]).unwrap();
        let y = conv_forward(&x, &w, &[0.5], Padding::symmetric(0)).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.5]);
    }

    #[test]
    fn identity_kernel_with_padding() {
        let x = random_tensor([2, 1, 5, 4], 1);
        let mut k = vec![0.0f64; 9];
        k[4] = 1.0;
        let w = Tensor4::from_vec([1, 1, 3, 3], k).unwrap();
        let y = conv_forward(&x, &w, &[0.0], Padding::symmetric(1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let x = random_tensor([2, 3, 6, 6], 2);
        let w = random_tensor([4, 3, 2, 2], 3);
        let b = [0.0; 4];
        let y = conv_forward(&x, &w, &b, Padding::same(2)).unwrap();
        let mut x2 = x.clone();
        x2.data_mut().iter_mut().for_each(|v| *v *= 2.5);
        let y2 = conv_forward(&x2, &w, &b, Padding::same(2)).unwrap();
        for (a, b) in y.data().iter().zip(y2.data()) {
            assert!((2.5 * a - b).abs() < 1e-12);
        }
        assert_eq!(y.shape(), [2, 4, 6, 6]);
    }

    #[test]
    fn conv_shape_errors_name_the_layer() {
        let x = random_tensor([1, 2, 4, 4], 4);
        let w = random_tensor([3, 1, 3, 3], 5);
        let err = conv_forward(&x, &w, &[0.0; 3], Padding::symmetric(1)).unwrap_err();
        assert!(err.to_string().contains("conv"), "{err}");
    }

    #[test]
    fn sparse_path_is_bit_identical() {
        let mut x = Tensor4::<f32>::zeros([3, 2, 24, 24]);
        let mut rng = stream(11, Purpose::Init, 0);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            let (y, xx) = ((i / 24) % 24, i % 24);
            if (8..15).contains(&y) && (5..19).contains(&xx) && rng.random_bool(0.4) {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        for k in [2, 3] {
            let n = 5 * 2 * k * k;
            let w = Tensor4::from_vec(
                [5, 2, k, k],
                (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            )
            .unwrap();
            let b: Vec<f32> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dense = conv_forward_opts(&x, &w, &b, Padding::same(k), false).unwrap();
            let sparse = conv_forward_opts(&x, &w, &b, Padding::same(k), true).unwrap();
            let bits = |t: &Tensor4<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&dense), bits(&sparse));
        }
    }

    #[test]
    fn maxpool_basics() {
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let c = Tensor4::from_vec([1, 2, 4, 6], vec![7.0f64; 48]).unwrap();
        let (y, _) = maxpool_forward(&c).unwrap();
        assert_eq!(y.shape(), [1, 2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert!(maxpool_forward(&Tensor4::<f64>::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = random_tensor([4, 7, 1, 1], 6);
        let p = softmax(logits.data(), 7);
        for row in p.chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    /// Central-difference check of `f` at `x` against `analytic`.
    fn check(mut x: Vec<f64>, analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) {
        let eps = 1e-5;
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + eps;
            let up = f(&x);
            x[i] = orig - eps;
            let down = f(&x);
            x[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            assert!(
                rel_err(analytic[i], numeric) < 1e-4,
                "index {i}: {} vs {numeric}",
                analytic[i]
            );
        }
    }

    /// Scalar objective: weighted sum of outputs with fixed random weights.
    fn probe(len: usize) -> Vec<f64> {
        let mut rng = stream(99, Purpose::Init, len as u64);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_gradients() {
        for (k, pad) in [
            (3, Padding::same(3)),
            (2, Padding::same(2)),
            (3, Padding::symmetric(0)),
        ] {
            let x = random_tensor([2, 2, 5, 5], 7);
            let w = random_tensor([3, 2, k, k], 8);
            let b = vec![0.1, -0.2, 0.3];
            let y = conv_forward(&x, &w, &b, pad).unwrap();
            let r = probe(y.data().len());
            let dout = Tensor4::from_vec(y.shape(), r.clone()).unwrap();
            let g = conv_backward(&x, &w, pad, &dout, true).unwrap();
            let obj = |y: &Tensor4<f64>| y.data().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
            check(w.data().to_vec(), &g.weights, |wv| {
                obj(&conv_forward(
                    &x,
                    &Tensor4::from_vec(w.shape(), wv.to_vec()).unwrap(),
                    &b,
                    pad,
                )
                .unwrap())
            });
            check(b.clone(), &g.bias, |bv| {
                obj(&conv_forward(&x, &w, bv, pad).unwrap())
            });
            check(x.data().to_vec(), g.input.as_ref().unwrap().data(), |xv| {
                obj(&conv_forward(
                    &Tensor4::from_vec(x.shape(), xv.to_vec()).unwrap(),
                    &w,
                    &b,
                    pad,
                )
                .unwrap())
            });
        }
    }

    #[test]
    fn maxpool_gradient() {
        let x = random_tensor([2, 3, 4, 6], 9);
        let (y, arg) = maxpool_forward(&x).unwrap();
        let r = probe(y.data().len());
        let dout = Tensor4::from_vec(y.shape(), r.clone()).unwrap();
        let dx = maxpool_backward(x.shape(), &arg, &dout);
        check(x.data().to_vec(), dx.data(), |xv| {
            let (y, _) =
                maxpool_forward(&Tensor4::from_vec(x.shape(), xv.to_vec()).unwrap()).unwrap();
            y.data().iter().zip(&r).map(|(a, b)| a * b).sum()
        });
    }

    #[test]
    fn relu_gradient() {
        // keep inputs away from the kink
        let mut x = random_tensor([2, 2, 3, 3], 10);
        x.data_mut().iter_mut().for_each(|v| {
            if v.abs() < 0.05 {
                *v += 0.1
            }
        });
        let mut y = x.clone();
        relu_forward(&mut y);
        let r = probe(y.data().len());
        let mut dx = Tensor4::from_vec(y.shape(), r.clone()).unwrap();
        relu_backward(&y, &mut dx);
        check(x.data().to_vec(), dx.data(), |xv| {
            let mut t = Tensor4::from_vec(x.shape(), xv.to_vec()).unwrap();
            relu_forward(&mut t);
            t.data().iter().zip(&r).map(|(a, b)| a * b).sum()
        });
    }

    #[test]
    fn dense_gradients() {
        let x = random_tensor([3, 2, 2, 2], 12);
        let w = probe(5 * 8);
        let b = vec![0.0, 0.1, 0.2, 0.3, 0.4];
        let y = dense_forward(&x, &w, &b, 5).unwrap();
        let r = probe(y.data().len() + 1)[..15].to_vec();
        let dout = Tensor4::from_vec(y.shape(), r.clone()).unwrap();
        let g = dense_backward(&x, &w, &dout, true);
        let obj = |y: Tensor4<f64>| y.data().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        check(w.clone(), &g.weights, |wv| {
            obj(dense_forward(&x, wv, &b, 5).unwrap())
        });
        check(b.clone(), &g.bias, |bv| {
            obj(dense_forward(&x, &w, bv, 5).unwrap())
        });
        check(x.data().to_vec(), g.input.unwrap().data(), |xv| {
            obj(dense_forward(
                &Tensor4::from_vec(x.shape(), xv.to_vec()).unwrap(),
                &w,
                &b,
                5,
            )
            .unwrap())
        });
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let logits = random_tensor([4, 5, 1, 1], 13).into_data();
        let labels = [0, 3, 4, 1];
        let (_, grad) = softmax_cross_entropy(&logits, &labels, 5);
        check(logits, &grad, |l| softmax_cross_entropy(l, &labels, 5).0);
    }

    #[test]
    fn dropout_with_fixed_mask_gradient() {
        let x = random_tensor([2, 3, 2, 2], 14).into_data();
        let mask: Vec<f64> = dropout_mask(x.len(), 0.4, &mut stream(1, Purpose::Dropout, 0));
        let r = probe(x.len());
        let mut dx = r.clone();
        apply_mask(&mut dx, &mask);
        check(x, &dx, |xv| {
            let mut t = xv.to_vec();
            apply_mask(&mut t, &mask);
            t.iter().zip(&r).map(|(a, b)| a * b).sum()
        });
    }

    #[test]
    fn dropout_rate_and_scaling() {
        // binomial test: 200k units at p = 0.3, 4.5 sigma band
        let n = 200_000;
        let p = 0.3;
        let mask: Vec<f64> = dropout_mask(n, p, &mut stream(5, Purpose::Dropout, 0));
        let zeros = mask.iter().filter(|&&m| m == 0.0).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((zeros - n as f64 * p).abs() < 4.5 * sigma, "{zeros}");
        let mean = mask.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 4.5 * sigma / n as f64 / (1.0 - p));
        assert!(mask
            .iter()
            .all(|&m| m == 0.0 || (m - 1.0 / 0.7).abs() < 1e-12));
    }
}
