//! Layer kernels. Feature maps are single samples in HWC order; convolution
//! weights are `[filters, k, k, channels]`, dense weights `[out, in]`.
//!
//! Convolution lowers to a matrix product over an im2col buffer:
//! `out[P×F] = cols[P×KKC] · Wᵀ`, where `P` counts output positions.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `c = a·b + beta·c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: a too short");
        assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: b too short");
    }
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm: c too short");
    // SAFETY: every index the kernel touches is bounded by the asserts above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Geometry of one valid-padding, stride-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
    pub f: usize,
}

impl ConvShape {
    fn of(input: &Tensor, weights: &Tensor, bias: Option<&Tensor>) -> Result<Self> {
        input.expect_rank(3, "conv input")?;
        weights.expect_rank(4, "conv weights")?;
        let [h, w, c] = input.shape()[..] else { unreachable!() };
        let [f, k, k2, wc] = weights.shape()[..] else { unreachable!() };
        if k != k2 || k == 0 {
            return Err(Error::Shape(format!("kernel must be square, got {k}x{k2}")));
        }
        if wc != c {
            return Err(Error::Shape(format!(
                "input has {c} channels, weights expect {wc}"
            )));
        }
        if h < k || w < k {
            return Err(Error::Shape(format!("{h}x{w} input smaller than {k}x{k} kernel")));
        }
        if let Some(b) = bias {
            if b.shape() != [f] {
                return Err(Error::Shape(format!("bias shape {:?}, expected [{f}]", b.shape())));
            }
        }
        Ok(ConvShape { h, w, c, k, f })
    }

    pub fn out_h(&self) -> usize {
        self.h - self.k + 1
    }

    pub fn out_w(&self) -> usize {
        self.w - self.k + 1
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn patch_len(&self) -> usize {
        self.k * self.k * self.c
    }
}

pub(crate) fn im2col(s: ConvShape, input: &[f64], cols: &mut Vec<f64>) {
    let (ow, kc) = (s.out_w(), s.k * s.c);
    cols.clear();
    cols.reserve(s.positions() * s.patch_len());
    for oy in 0..s.out_h() {
        for ox in 0..ow {
            for ky in 0..s.k {
                let start = ((oy + ky) * s.w + ox) * s.c;
                cols.extend_from_slice(&input[start..start + kc]);
            }
        }
    }
}

fn col2im_add(s: ConvShape, dcols: &[f64], dinput: &mut [f64]) {
    let (ow, kc, pl) = (s.out_w(), s.k * s.c, s.patch_len());
    for oy in 0..s.out_h() {
        for ox in 0..ow {
            let row = &dcols[(oy * ow + ox) * pl..][..pl];
            for ky in 0..s.k {
                let start = ((oy + ky) * s.w + ox) * s.c;
                for (d, g) in dinput[start..start + kc].iter_mut().zip(&row[ky * kc..][..kc]) {
                    *d += g;
                }
            }
        }
    }
}

pub(crate) fn conv_forward_raw(s: ConvShape, cols: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let (p, pl, f) = (s.positions(), s.patch_len(), s.f);
    for row in out.chunks_exact_mut(f) {
        row.copy_from_slice(bias);
    }
    gemm(p, pl, f, cols, (pl, 1), weights, (1, pl), 1.0, out, (f, 1));
}

/// Accumulates weight and bias gradients into `dw`/`db` and, when asked,
/// writes the input gradient.
pub(crate) fn conv_backward_raw(
    s: ConvShape,
    cols: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dinput: Option<&mut [f64]>,
) {
    let (p, pl, f) = (s.positions(), s.patch_len(), s.f);
    gemm(f, p, pl, grad_out, (1, f), cols, (pl, 1), 1.0, dw, (pl, 1));
    for row in grad_out.chunks_exact(f) {
        for (b, g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    if let Some(dinput) = dinput {
        let mut dcols = vec![0.0; p * pl];
        gemm(p, f, pl, grad_out, (f, 1), weights, (pl, 1), 0.0, &mut dcols, (pl, 1));
        dinput.fill(0.0);
        col2im_add(s, &dcols, dinput);
    }
}

/// Valid-padding, stride-1 convolution: `[h, w, c]` to `[h-k+1, w-k+1, f]`.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let s = ConvShape::of(input, weights, Some(bias))?;
    let mut cols = Vec::new();
    im2col(s, input.data(), &mut cols);
    let mut out = vec![0.0; s.positions() * s.f];
    conv_forward_raw(s, &cols, weights.data(), bias.data(), &mut out);
    Tensor::new(vec![s.out_h(), s.out_w(), s.f], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let s = ConvShape::of(input, weights, None)?;
    if grad_out.shape() != [s.out_h(), s.out_w(), s.f] {
        return Err(Error::Shape(format!(
            "output gradient {:?}, expected [{}, {}, {}]",
            grad_out.shape(),
            s.out_h(),
            s.out_w(),
            s.f
        )));
    }
    let mut cols = Vec::new();
    im2col(s, input.data(), &mut cols);
    let mut dw = Tensor::zeros(weights.shape());
    let mut db = Tensor::zeros(&[s.f]);
    let mut dx = Tensor::zeros(input.shape());
    conv_backward_raw(
        s,
        &cols,
        weights.data(),
        grad_out.data(),
        dw.data_mut(),
        db.data_mut(),
        Some(dx.data_mut()),
    );
    Ok(ConvGrads {
        input: dx,
        weights: dw,
        bias: db,
    })
}

/// Output side of a 2×2 pool; an odd trailing row or column is dropped.
pub(crate) fn pooled(side: usize) -> usize {
    side / 2
}

/// Max over 2×2 windows, plus the flat input index each output came from.
/// Ties go to the first position in row-major window order.
pub(crate) fn maxpool_raw(h: usize, w: usize, c: usize, input: &[f64], out: &mut [f64], argmax: &mut [usize]) {
    let (oh, ow) = (pooled(h), pooled(w));
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_i = ((2 * oy) * w + 2 * ox) * c + ch;
                let mut best = input[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out[o] = best;
                argmax[o] = best_i;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutput {
    pub output: Tensor,
    /// Flat input index selected for each output element.
    pub argmax: Vec<usize>,
}

pub fn maxpool2x2_forward(input: &Tensor) -> Result<PoolOutput> {
    input.expect_rank(3, "pool input")?;
    let [h, w, c] = input.shape()[..] else { unreachable!() };
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("{h}x{w} map too small to pool")));
    }
    let n = pooled(h) * pooled(w) * c;
    let (mut out, mut argmax) = (vec![0.0; n], vec![0; n]);
    maxpool_raw(h, w, c, input.data(), &mut out, &mut argmax);
    Ok(PoolOutput {
        output: Tensor::new(vec![pooled(h), pooled(w), c], out)?,
        argmax,
    })
}

pub fn maxpool2x2_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::Shape(format!(
            "{} output gradients for {} pooled values",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let len = dx.len();
    for (&i, g) in argmax.iter().zip(grad_out.data()) {
        if i >= len {
            return Err(Error::Shape(format!("argmax {i} outside input of {len}")));
        }
        dx.data_mut()[i] += g;
    }
    Ok(dx)
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| relu(v)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Gradient through ReLU given the pre-activation; zero at the kink.
pub fn relu_backward(grad_out: &Tensor, pre_activation: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != pre_activation.shape() {
        return Err(Error::Shape("relu gradient and input differ in shape".into()));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(pre_activation.data())
        .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}

fn dense_shape(input: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    weights.expect_rank(2, "dense weights")?;
    let [out, inp] = weights.shape()[..] else { unreachable!() };
    if input.len() != inp {
        return Err(Error::Shape(format!(
            "dense layer takes {inp} inputs, got {}",
            input.len()
        )));
    }
    Ok((out, inp))
}

/// `W·x + b`; `input` is flattened whatever its shape.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (out, _) = dense_shape(input, weights)?;
    if bias.shape() != [out] {
        return Err(Error::Shape(format!("bias shape {:?}, expected [{out}]", bias.shape())));
    }
    let y = weights
        .data()
        .chunks_exact(input.len())
        .zip(bias.data())
        .map(|(row, b)| b + row.iter().zip(input.data()).map(|(w, x)| w * x).sum::<f64>())
        .collect();
    Tensor::new(vec![out], y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    let (out, inp) = dense_shape(input, weights)?;
    if grad_out.len() != out {
        return Err(Error::Shape(format!("{} output gradients for {out} outputs", grad_out.len())));
    }
    let mut dx = vec![0.0; inp];
    let mut dw = Vec::with_capacity(out * inp);
    for (row, &g) in weights.data().chunks_exact(inp).zip(grad_out.data()) {
        dw.extend(input.data().iter().map(|x| g * x));
        for (d, w) in dx.iter_mut().zip(row) {
            *d += g * w;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: Tensor::new(vec![out, inp], dw)?,
        bias: grad_out.clone(),
    })
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−ln softmax(logits)[target]`, computed through log-sum-exp.
pub fn cross_entropy_loss(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Gradient of the fused softmax plus cross-entropy w.r.t. the logits:
/// probabilities minus the one-hot target.
pub fn softmax_cross_entropy_grad(logits: &[f64], target: usize) -> Vec<f64> {
    let mut p = softmax(logits);
    p[target] -= 1.0;
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = seeded(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central difference of `f` at each coordinate of `x`.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
        let eps = 1e-4;
        (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += eps;
                let mut m = x.clone();
                m.data_mut()[i] -= eps;
                (f(&p) - f(&m)) / (2.0 * eps)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64) {
        assert_eq!(analytic.len(), numeric.len());
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(rel < tol, "coordinate {i}: analytic {a} numeric {n} rel {rel}");
        }
    }

    /// Weighted sum so every output position gets a distinct upstream
    /// gradient.
    fn probe(t: &Tensor, weights: &Tensor) -> f64 {
        t.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn identity_kernel() {
        let x = random(&[4, 5, 1], 1);
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let x = random(&[5, 5, 3], 2);
        let y = conv2d_forward(&x, &Tensor::zeros(&[2, 3, 3, 3]), &Tensor::new(vec![2], vec![0.7, -2.0]).unwrap()).unwrap();
        assert_eq!(y.shape(), [3, 3, 2]);
        for px in y.data().chunks_exact(2) {
            assert_eq!(px, [0.7, -2.0]);
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = random(&[5, 6, 2], 3);
        let w = random(&[3, 2, 2, 2], 4);
        let b = random(&[3], 5);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        let at = |t: &Tensor, i: [usize; 3]| t.data()[(i[0] * t.shape()[1] + i[1]) * t.shape()[2] + i[2]];
        for oy in 0..4 {
            for ox in 0..5 {
                for f in 0..3 {
                    let mut s = b.data()[f];
                    for ky in 0..2 {
                        for kx in 0..2 {
                            for c in 0..2 {
                                s += w.data()[((f * 2 + ky) * 2 + kx) * 2 + c] * at(&x, [oy + ky, ox + kx, c]);
                            }
                        }
                    }
                    assert!((at(&y, [oy, ox, f]) - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let x = random(&[6, 6, 3], 10);
        let w = random(&[2, 3, 3, 3], 11);
        let b = random(&[2], 12);
        let up = random(&[4, 4, 2], 13);
        let g = conv2d_backward(&x, &w, &up).unwrap();
        assert_close(g.input.data(), &numeric_grad(&x, |x| probe(&conv2d_forward(x, &w, &b).unwrap(), &up)), 1e-4);
        assert_close(g.weights.data(), &numeric_grad(&w, |w| probe(&conv2d_forward(&x, w, &b).unwrap(), &up)), 1e-4);
        assert_close(g.bias.data(), &numeric_grad(&b, |b| probe(&conv2d_forward(&x, &w, b).unwrap(), &up)), 1e-4);
    }

    #[test]
    fn conv_shape_errors() {
        let x = random(&[4, 4, 3], 1);
        assert!(matches!(conv2d_forward(&x, &Tensor::zeros(&[1, 3, 3, 2]), &Tensor::zeros(&[1])), Err(Error::Shape(_))));
        assert!(matches!(conv2d_forward(&x, &Tensor::zeros(&[1, 5, 5, 3]), &Tensor::zeros(&[1])), Err(Error::Shape(_))));
        assert!(matches!(conv2d_forward(&x, &Tensor::zeros(&[2, 3, 3, 3]), &Tensor::zeros(&[1])), Err(Error::Shape(_))));
    }

    #[test]
    fn pool_basics() {
        let x = Tensor::new(vec![2, 2, 1], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(maxpool2x2_forward(&x).unwrap().output.data(), [4.0]);

        let x = Tensor::filled(&[4, 4, 1], 3.0);
        let p = maxpool2x2_forward(&x).unwrap();
        assert_eq!(p.output, Tensor::filled(&[2, 2, 1], 3.0));
        let dx = maxpool2x2_backward(&Tensor::filled(&[2, 2, 1], 1.0), &p.argmax, x.shape()).unwrap();
        for (i, v) in dx.data().iter().enumerate() {
            let (y, x) = (i / 4, i % 4);
            assert_eq!(*v, if y % 2 == 0 && x % 2 == 0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn pool_drops_odd_edge() {
        let x = random(&[5, 7, 2], 4);
        let p = maxpool2x2_forward(&x).unwrap();
        assert_eq!(p.output.shape(), [2, 3, 2]);
        // The last row and column never win.
        assert!(p.argmax.iter().all(|&i| i / (7 * 2) < 4 && (i / 2) % 7 < 6));
    }

    #[test]
    fn pool_gradient_matches_finite_differences() {
        let x = random(&[8, 8, 2], 20);
        let up = random(&[4, 4, 2], 21);
        let p = maxpool2x2_forward(&x).unwrap();
        let dx = maxpool2x2_backward(&up, &p.argmax, x.shape()).unwrap();
        let numeric = numeric_grad(&x, |x| probe(&maxpool2x2_forward(x).unwrap().output, &up));
        for (a, n) in dx.data().iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6 * (1.0 + a.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn relu_values() {
        assert_eq!((relu(-1.0), relu(2.0)), (0.0, 2.0));
        let z = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = relu_backward(&Tensor::filled(&[3], 5.0), &z).unwrap();
        assert_eq!(g.data(), [0.0, 0.0, 5.0]);
        assert_eq!(relu_forward(&z).data(), [0.0, 0.0, 2.0]);
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let x = random(&[2, 2, 3], 30);
        let w = random(&[2, 12], 31);
        let b = random(&[2], 32);
        let up = random(&[2], 33);
        let g = dense_backward(&x, &w, &up).unwrap();
        assert_close(g.input.data(), &numeric_grad(&x, |x| probe(&dense_forward(x, &w, &b).unwrap(), &up)), 1e-6);
        assert_close(g.weights.data(), &numeric_grad(&w, |w| probe(&dense_forward(&x, w, &b).unwrap(), &up)), 1e-6);
        assert_eq!(g.bias, up);
    }

    #[test]
    fn softmax_and_loss_at_zero() {
        assert_eq!(softmax(&[0.0, 0.0]), [0.5, 0.5]);
        for t in 0..2 {
            assert!((cross_entropy_loss(&[0.0, 0.0], t) - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn fused_gradient_matches_finite_differences() {
        let z = random(&[2], 40);
        for t in 0..2 {
            let g = softmax_cross_entropy_grad(z.data(), t);
            let n = numeric_grad(&z, |z| cross_entropy_loss(z.data(), t));
            for (a, b) in g.iter().zip(&n) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let l = cross_entropy_loss(&[1000.0, -1000.0], 1);
        assert!((l - 2000.0).abs() < 1e-9);
        assert_eq!(softmax(&[1000.0, -1000.0]), [1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(a in -50.0..50.0f64, b in -50.0..50.0f64, t in 0usize..2) {
            let p = softmax(&[a, b]);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(cross_entropy_loss(&[a, b], t) >= 0.0);
        }
    }
}
