//! The three-stage convolutional classifier.

use rand::Rng as _;

use super::layers::{
    conv_backward_raw, conv_forward_raw, cross_entropy_loss, im2col, maxpool_raw, pooled, softmax,
    softmax_cross_entropy_grad, ConvShape,
};
use super::tensor::Tensor;
use crate::dataset::{Label, Sample};
use crate::error::{Error, Result};
use crate::imaging::ImagePatch;
use crate::rng::seeded;

pub const INPUT_CHANNELS: usize = 3;
pub const NUM_CLASSES: usize = 2;

/// `(filters, kernel side)` per convolution stage. Each stage is
/// conv, ReLU, 2×2 max pool; a dense layer maps the last map to the classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelArchitecture {
    pub input_side: u32,
    pub conv: [(u32, u32); 3],
    pub classes: u32,
}

/// Spatial side and channels entering each stage, plus the dense width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageDims {
    pub input: [(usize, usize); 3],
    pub dense_in: usize,
}

impl ModelArchitecture {
    pub fn new(input_side: u32) -> Self {
        ModelArchitecture {
            input_side,
            conv: [(32, 3), (32, 3), (64, 3)],
            classes: NUM_CLASSES as u32,
        }
    }

    pub fn dims(&self) -> Result<StageDims> {
        if self.classes as usize != NUM_CLASSES {
            return Err(Error::Architecture(format!("{} classes, expected 2", self.classes)));
        }
        let mut side = self.input_side as usize;
        let mut channels = INPUT_CHANNELS;
        let mut input = [(0, 0); 3];
        for (i, &(f, k)) in self.conv.iter().enumerate() {
            input[i] = (side, channels);
            if f == 0 || k == 0 || side < k as usize || pooled(side - k as usize + 1) == 0 {
                return Err(Error::Architecture(format!(
                    "input side {} too small for stage {} ({f} filters, {k}x{k})",
                    self.input_side,
                    i + 1
                )));
            }
            side = pooled(side - k as usize + 1);
            channels = f as usize;
        }
        Ok(StageDims {
            input,
            dense_in: side * side * channels,
        })
    }

    /// Parameter tensor shapes in storage order: three (weights, bias)
    /// conv pairs, then dense weights and bias.
    pub fn parameter_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let dims = self.dims()?;
        let mut shapes = Vec::with_capacity(8);
        for (&(f, k), &(_, c)) in self.conv.iter().zip(&dims.input) {
            shapes.push(vec![f as usize, k as usize, k as usize, c]);
            shapes.push(vec![f as usize]);
        }
        shapes.push(vec![NUM_CLASSES, dims.dense_in]);
        shapes.push(vec![NUM_CLASSES]);
        Ok(shapes)
    }

    fn conv_shape(&self, dims: &StageDims, stage: usize) -> ConvShape {
        let (side, c) = dims.input[stage];
        let (f, k) = self.conv[stage];
        ConvShape {
            h: side,
            w: side,
            c,
            k: k as usize,
            f: f as usize,
        }
    }
}

impl Default for ModelArchitecture {
    fn default() -> Self {
        ModelArchitecture::new(crate::imaging::DEFAULT_INPUT_SIDE)
    }
}

/// Parameters plus the optimizer's velocity for each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: ModelArchitecture,
    dims: StageDims,
    params: Vec<Tensor>,
    velocity: Vec<Tensor>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    cols: [Vec<f64>; 3],
    pre: [Vec<f64>; 3],
    argmax: [Vec<usize>; 3],
    features: Vec<f64>,
    logits: [f64; NUM_CLASSES],
}

impl Model {
    /// He-uniform weights, `U(±sqrt(6 / fan_in))`, drawn in parameter order
    /// from a SplitMix64 stream; zero biases and velocities.
    pub fn new(arch: ModelArchitecture, seed: u64) -> Result<Self> {
        let dims = arch.dims()?;
        let shapes = arch.parameter_shapes()?;
        let mut rng = seeded(seed);
        let params = shapes
            .iter()
            .map(|shape| {
                if shape.len() == 1 {
                    return Tensor::zeros(shape);
                }
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| bound * (2.0 * rng.random::<f64>() - 1.0)).collect();
                Tensor::new(shape.clone(), data).expect("shape from architecture")
            })
            .collect();
        let velocity = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Ok(Model {
            arch,
            dims,
            params,
            velocity,
        })
    }

    /// Rebuilds a model from stored tensors, checking every shape.
    pub fn from_parts(arch: ModelArchitecture, params: Vec<Tensor>, velocity: Vec<Tensor>) -> Result<Self> {
        let dims = arch.dims()?;
        let shapes = arch.parameter_shapes()?;
        for (what, tensors) in [("parameter", &params), ("velocity", &velocity)] {
            if tensors.len() != shapes.len() {
                return Err(Error::Architecture(format!(
                    "{} {what} tensors, expected {}",
                    tensors.len(),
                    shapes.len()
                )));
            }
            for (i, (t, s)) in tensors.iter().zip(&shapes).enumerate() {
                if t.shape() != s.as_slice() {
                    return Err(Error::Architecture(format!(
                        "{what} tensor {i} has shape {:?}, expected {s:?}",
                        t.shape()
                    )));
                }
            }
        }
        Ok(Model {
            arch,
            dims,
            params,
            velocity,
        })
    }

    pub fn architecture(&self) -> &ModelArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub(crate) fn params_and_velocity_mut(&mut self) -> (&mut [Tensor], &mut [Tensor]) {
        (&mut self.params, &mut self.velocity)
    }

    pub fn reset_velocity(&mut self) {
        for v in &mut self.velocity {
            v.data_mut().fill(0.0);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn input_len(&self) -> usize {
        let s = self.arch.input_side as usize;
        s * s * INPUT_CHANNELS
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "model takes {0}x{0}x3 inputs ({1} values), got {2}",
                self.arch.input_side,
                self.input_len(),
                x.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Trace {
        let mut cols: [Vec<f64>; 3] = Default::default();
        let mut pre: [Vec<f64>; 3] = Default::default();
        let mut argmax: [Vec<usize>; 3] = Default::default();
        let mut act = x.to_vec();
        for stage in 0..3 {
            let s = self.arch.conv_shape(&self.dims, stage);
            im2col(s, &act, &mut cols[stage]);
            let mut z = vec![0.0; s.positions() * s.f];
            conv_forward_raw(s, &cols[stage], self.params[2 * stage].data(), self.params[2 * stage + 1].data(), &mut z);
            let a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            let (oh, ow) = (s.out_h(), s.out_w());
            let n = pooled(oh) * pooled(ow) * s.f;
            let mut pooled_out = vec![0.0; n];
            argmax[stage] = vec![0; n];
            maxpool_raw(oh, ow, s.f, &a, &mut pooled_out, &mut argmax[stage]);
            pre[stage] = z;
            act = pooled_out;
        }
        let (w, b) = (self.params[6].data(), self.params[7].data());
        let mut logits = [0.0; NUM_CLASSES];
        for (o, l) in logits.iter_mut().enumerate() {
            *l = b[o] + w[o * act.len()..][..act.len()].iter().zip(&act).map(|(w, x)| w * x).sum::<f64>();
        }
        Trace {
            cols,
            pre,
            argmax,
            features: act,
            logits,
        }
    }

    /// Adds `scale ×` the loss gradient for one sample into `grads`.
    fn backward(&self, t: &Trace, target: usize, scale: f64, grads: &mut [Tensor]) {
        let g_logits: Vec<f64> = softmax_cross_entropy_grad(&t.logits, target)
            .into_iter()
            .map(|g| g * scale)
            .collect();
        let n = t.features.len();
        let mut g_act = vec![0.0; n];
        {
            let w = self.params[6].data();
            let (dw, db) = grads[6..8].split_at_mut(1);
            for (o, &g) in g_logits.iter().enumerate() {
                for ((d, x), (ga, wv)) in dw[0].data_mut()[o * n..][..n]
                    .iter_mut()
                    .zip(&t.features)
                    .zip(g_act.iter_mut().zip(&w[o * n..][..n]))
                {
                    *d += g * x;
                    *ga += g * wv;
                }
                db[0].data_mut()[o] += g;
            }
        }
        for stage in (0..3).rev() {
            let s = self.arch.conv_shape(&self.dims, stage);
            let mut g_z = vec![0.0; s.positions() * s.f];
            for (&i, g) in t.argmax[stage].iter().zip(&g_act) {
                g_z[i] += g;
            }
            for (g, &z) in g_z.iter_mut().zip(&t.pre[stage]) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
            let mut g_in = (stage > 0).then(|| vec![0.0; s.h * s.w * s.c]);
            let (dw, db) = grads[2 * stage..2 * stage + 2].split_at_mut(1);
            conv_backward_raw(
                s,
                &t.cols[stage],
                self.params[2 * stage].data(),
                &g_z,
                dw[0].data_mut(),
                db[0].data_mut(),
                g_in.as_deref_mut(),
            );
            if let Some(g) = g_in {
                g_act = g;
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<[f64; NUM_CLASSES]> {
        self.check_input(x)?;
        Ok(self.forward(x).logits)
    }

    /// Hash of which ReLUs are active and which pool inputs win for `x`.
    /// Two parameter settings with the same signature lie on the same
    /// piecewise-smooth region, where finite differences are valid.
    pub fn activation_signature(&self, x: &[f64]) -> Result<u64> {
        use std::hash::{Hash, Hasher};
        self.check_input(x)?;
        let t = self.forward(x);
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for stage in 0..3 {
            for &z in &t.pre[stage] {
                (z > 0.0).hash(&mut h);
            }
            t.argmax[stage].hash(&mut h);
        }
        Ok(h.finish())
    }

    pub fn predict_proba(&self, patch: &ImagePatch) -> Result<[f64; NUM_CLASSES]> {
        let p = softmax(&self.logits(&patch.to_f64())?);
        Ok([p[0], p[1]])
    }

    /// Argmax class; ties go to `Empty`.
    pub fn predict(&self, patch: &ImagePatch) -> Result<Label> {
        let l = self.logits(&patch.to_f64())?;
        Ok(if l[1] > l[0] { Label::Occupied } else { Label::Empty })
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, batch: &[(Vec<f64>, Label)]) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in batch {
            self.check_input(x)?;
            total += cross_entropy_loss(&self.forward(x).logits, y.index());
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean loss, gradients of the mean loss for every parameter, and the
    /// number of correct argmax predictions.
    pub fn loss_and_gradients(&self, batch: &[(Vec<f64>, Label)]) -> Result<(f64, Vec<Tensor>, usize)> {
        if batch.is_empty() {
            return Err(Error::Protocol("empty batch".into()));
        }
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let scale = 1.0 / batch.len() as f64;
        let (mut total, mut correct) = (0.0, 0);
        for (x, y) in batch {
            self.check_input(x)?;
            let t = self.forward(x);
            total += cross_entropy_loss(&t.logits, y.index());
            let predicted = usize::from(t.logits[1] > t.logits[0]);
            correct += usize::from(predicted == y.index());
            self.backward(&t, y.index(), scale, &mut grads);
        }
        Ok((total * scale, grads, correct))
    }
}

/// Pairs of flattened patches and labels, the form the training loop uses.
pub fn as_batch(samples: &[Sample]) -> Vec<(Vec<f64>, Label)> {
    samples.iter().map(|s| (s.patch.to_f64(), s.label)).collect()
}
