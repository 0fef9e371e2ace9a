//! Deterministic small-network engine: forward pass, cross-entropy backprop,
//! SGD training, per-example logit gradients and checkpoint I/O.
//!
//! Parameters carry 32-bit float semantics (what a checkpoint stores); every
//! forward/backward pass and every update is computed in `f64` and rounded
//! back through `f32` on write. A network plus a seed fully determines the
//! trained weights, bit for bit.

mod checkpoint;
mod layer;

pub use checkpoint::{
    checkpoint_from_json_value, checkpoint_to_json_value, load_checkpoint, save_checkpoint,
    LayerDesc,
};
pub use layer::{Layer, Shape};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Shape,
    layers: Vec<Layer>,
    class_count: usize,
    /// Activation shapes at each layer boundary; `boundaries[0]` is the input.
    boundaries: Vec<Shape>,
    /// Prefix sums of per-layer parameter counts; last entry is `q`.
    param_offsets: Vec<usize>,
}

impl Network {
    /// Builds a network, validating that consecutive layer shapes are
    /// compatible and that the final layer is a softmax over `class_count`
    /// logits.
    pub fn new(input_shape: Shape, layers: Vec<Layer>, class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::InvalidArgument("class_count must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        let mut boundaries = Vec::with_capacity(layers.len() + 1);
        let mut param_offsets = Vec::with_capacity(layers.len() + 1);
        boundaries.push(input_shape);
        param_offsets.push(0);
        for (i, layer) in layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) && i + 1 != layers.len() {
                return Err(Error::InvalidArgument(
                    "softmax is only valid as the final layer".into(),
                ));
            }
            let shape = layer.out_shape(*boundaries.last().unwrap())?;
            boundaries.push(shape);
            param_offsets.push(param_offsets.last().unwrap() + layer.param_count());
        }
        if !matches!(layers.last(), Some(Layer::Softmax)) {
            return Err(Error::InvalidArgument("final layer must be softmax".into()));
        }
        let out = *boundaries.last().unwrap();
        if out.len() != class_count {
            return Err(Error::ShapeMismatch(format!(
                "output produces {} values but class_count is {}",
                out.len(),
                class_count
            )));
        }
        Ok(Network {
            input_shape,
            layers,
            class_count,
            boundaries,
            param_offsets,
        })
    }

    /// MLP with ReLU hidden layers and a softmax head, He-uniform init.
    pub fn mlp(input_dim: usize, hidden: &[usize], class_count: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::seeded(seed);
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &width in hidden {
            layers.push(he_dense(prev, width, &mut rng));
            layers.push(Layer::Relu);
            prev = width;
        }
        layers.push(he_dense(prev, class_count, &mut rng));
        layers.push(Layer::Softmax);
        Network::new(Shape::flat(input_dim), layers, class_count)
    }

    /// conv -> relu -> flatten -> dense softmax head, He-uniform init.
    pub fn small_cnn(
        input_shape: Shape,
        conv_channels: usize,
        kernel: usize,
        class_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng::seeded(seed);
        let conv = he_conv(input_shape.c, conv_channels, kernel, kernel, 1, &mut rng);
        let conv_out = conv.out_shape(input_shape)?;
        let layers = vec![
            conv,
            Layer::Relu,
            Layer::Flatten,
            he_dense(conv_out.len(), class_count, &mut rng),
            Layer::Softmax,
        ];
        Network::new(input_shape, layers, class_count)
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn boundary_shapes(&self) -> &[Shape] {
        &self.boundaries
    }

    /// Total scalar parameter count `q`.
    pub fn param_count(&self) -> usize {
        *self.param_offsets.last().unwrap()
    }

    pub fn arch(&self) -> Vec<LayerDesc> {
        checkpoint::describe(self)
    }

    pub fn same_arch(&self, other: &Network) -> bool {
        self.class_count == other.class_count && self.arch() == other.arch()
    }

    /// FNV-1a hash over architecture and parameter bits; stable id for a
    /// specific weight state.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u64| {
            for i in 0..8 {
                h ^= (b >> (8 * i)) & 0xff;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        };
        eat(self.class_count as u64);
        eat(self.input_shape.len() as u64);
        for w in self.flatten_weights() {
            eat(w.to_bits() as u64);
        }
        format!("{h:016x}")
    }

    /// All parameters as one flat `f32` vector, layer order, weights before
    /// bias within a layer, row-major.
    pub fn flatten_weights(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            let (w, b) = layer.params();
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Inverse of [`Network::flatten_weights`]; returns a new network with the
    /// given parameters. Exact bijection: `unflatten(flatten(net))` is
    /// bit-identical to `net`.
    pub fn unflatten_weights(&self, params: &[f32]) -> Result<Network> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut net = self.clone();
        let mut offset = 0;
        for layer in &mut net.layers {
            let (w, b) = layer.params_mut();
            w.copy_from_slice(&params[offset..offset + w.len()]);
            offset += w.len();
            b.copy_from_slice(&params[offset..offset + b.len()]);
            offset += b.len();
        }
        Ok(net)
    }

    /// Forward pass over a row-major batch; returns `n x C` probabilities.
    pub fn forward(&self, batch: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_len();
        if d == 0 || batch.len() % d != 0 {
            return Err(Error::ShapeMismatch(format!(
                "batch of {} values is not a multiple of input dimension {}",
                batch.len(),
                d
            )));
        }
        let n = batch.len() / d;
        let mut out = Vec::with_capacity(n * self.class_count);
        for row in 0..n {
            out.extend_from_slice(&self.forward_one(&batch[row * d..(row + 1) * d])?);
        }
        Ok(out)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let acts = self.forward_cached(x);
        Ok(acts.last().unwrap().clone())
    }

    /// Pre-softmax output for one sample.
    pub fn logits_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let acts = self.forward_cached(x);
        Ok(acts[acts.len() - 2].clone())
    }

    /// Mean cross-entropy loss and its gradient (flat, length `q`) over a
    /// labeled batch.
    pub fn loss_and_grad(&self, batch: &[f64], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        let d = self.input_len();
        if labels.is_empty() || batch.len() != labels.len() * d {
            return Err(Error::ShapeMismatch(format!(
                "batch of {} values does not match {} labels of dimension {}",
                batch.len(),
                labels.len(),
                d
            )));
        }
        for &y in labels {
            if y >= self.class_count {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    class_count: self.class_count,
                });
            }
        }
        let n = labels.len();
        let mut grad = vec![0.0; self.param_count()];
        let mut loss = 0.0;
        let scale = 1.0 / n as f64;
        for (row, &y) in labels.iter().enumerate() {
            let acts = self.forward_cached(&batch[row * d..(row + 1) * d]);
            let probs = acts.last().unwrap();
            loss -= probs[y].max(1e-300).ln();
            let logits_idx = acts.len() - 2;
            let mut d_logits = probs.clone();
            d_logits[y] -= 1.0;
            for g in d_logits.iter_mut() {
                *g *= scale;
            }
            self.backward_from_logits(&acts[..=logits_idx], &d_logits, &mut grad);
        }
        Ok((loss * scale, grad))
    }

    /// Gradient of the pre-softmax logit `logit_class` with respect to all
    /// parameters: the tangent feature map row for one input.
    pub fn per_example_gradient(&self, x: &[f64], logit_class: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if logit_class >= self.class_count {
            return Err(Error::LabelOutOfRange {
                label: logit_class,
                class_count: self.class_count,
            });
        }
        let acts = self.forward_cached(x);
        let logits_idx = acts.len() - 2;
        let mut d_logits = vec![0.0; self.class_count];
        d_logits[logit_class] = 1.0;
        let mut grad = vec![0.0; self.param_count()];
        self.backward_from_logits(&acts[..=logits_idx], &d_logits, &mut grad);
        Ok(grad)
    }

    /// In-place SGD step `w -= lr * grad`, rounding each parameter back to f32.
    pub fn apply_sgd_step(&mut self, grad: &[f64], lr: f64) {
        debug_assert_eq!(grad.len(), self.param_count());
        let mut offset = 0;
        for layer in &mut self.layers {
            let (w, b) = layer.params_mut();
            for v in w.iter_mut() {
                *v = (*v as f64 - lr * grad[offset]) as f32;
                offset += 1;
            }
            for v in b.iter_mut() {
                *v = (*v as f64 - lr * grad[offset]) as f32;
                offset += 1;
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "input of {} values, network expects {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Activations at every layer boundary; index 0 is the input itself.
    pub fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        Ok(self.forward_cached(x))
    }

    pub(crate) fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; self.boundaries[i + 1].len()];
            layer.forward(&acts[i], self.boundaries[i], &mut out);
            acts.push(out);
        }
        acts
    }

    /// Backpropagates a gradient at the pre-softmax boundary down to the
    /// parameters, accumulating into `grad`.
    fn backward_from_logits(&self, acts: &[Vec<f64>], d_logits: &[f64], grad: &mut [f64]) {
        let last = acts.len() - 1; // index of the logits boundary
        let mut d_cur = d_logits.to_vec();
        for li in (0..last).rev() {
            let mut d_prev = vec![0.0; self.boundaries[li].len()];
            self.layers[li].backward(
                &acts[li],
                &acts[li + 1],
                &d_cur,
                self.boundaries[li],
                &mut d_prev,
                &mut grad[self.param_offsets[li]..self.param_offsets[li + 1]],
            );
            d_cur = d_prev;
        }
    }
}

fn he_dense<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Layer {
    let limit = (6.0 / in_dim as f64).sqrt();
    Layer::Dense {
        in_dim,
        out_dim,
        weights: (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit) as f32)
            .collect(),
        bias: vec![0.0; out_dim],
    }
}

fn he_conv<R: Rng>(
    in_ch: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    rng: &mut R,
) -> Layer {
    let fan_in = (in_ch * kh * kw) as f64;
    let limit = (6.0 / fan_in).sqrt();
    Layer::Conv2d {
        in_ch,
        out_ch,
        kh,
        kw,
        stride,
        weights: (0..out_ch * in_ch * kh * kw)
            .map(|_| rng.gen_range(-limit..limit) as f32)
            .collect(),
        bias: vec![0.0; out_ch],
    }
}

/// Training hyper-parameters for one SGD run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Plain SGD over shuffled mini-batches. Returns the trained network and the
/// per-epoch mean loss / full-dataset accuracy history. Deterministic from
/// the initial weights, the data order and `cfg.seed`.
pub fn sgd_train(
    net: &Network,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochStats>)> {
    cfg.validate()?;
    if data.len() == 0 {
        return Err(Error::EmptyDataset("sgd_train needs at least one sample".into()));
    }
    if data.input_dim() != net.input_len() {
        return Err(Error::ShapeMismatch(format!(
            "dataset dimension {} does not match network input {}",
            data.input_dim(),
            net.input_len()
        )));
    }
    let mut net = net.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = rng::seeded(cfg.seed);
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut grad = vec![0.0; net.param_count()];
    for _epoch in 0..cfg.max_epochs {
        if cfg.shuffle {
            fisher_yates(&mut order, &mut rng);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let x = data.input(idx);
                let y = data.label(idx);
                if y >= net.class_count() {
                    return Err(Error::LabelOutOfRange {
                        label: y,
                        class_count: net.class_count(),
                    });
                }
                let acts = net.forward_cached(x);
                let probs = acts.last().unwrap();
                epoch_loss -= probs[y].max(1e-300).ln();
                let logits_idx = acts.len() - 2;
                let mut d_logits = probs.clone();
                d_logits[y] -= 1.0;
                for g in d_logits.iter_mut() {
                    *g *= scale;
                }
                net.backward_from_logits(&acts[..=logits_idx], &d_logits, &mut grad);
            }
            net.apply_sgd_step(&grad, cfg.learning_rate);
        }
        let accuracy = evaluate_accuracy(&net, data)?;
        history.push(EpochStats {
            loss: epoch_loss / data.len() as f64,
            accuracy,
        });
    }
    Ok((net, history))
}

/// Fraction of samples whose argmax prediction matches the label; argmax ties
/// resolve to the lowest class index.
pub fn evaluate_accuracy(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.len() == 0 {
        return Err(Error::EmptyDataset("cannot evaluate on an empty dataset".into()));
    }
    if data.input_dim() != net.input_len() {
        return Err(Error::ShapeMismatch(format!(
            "dataset dimension {} does not match network input {}",
            data.input_dim(),
            net.input_len()
        )));
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        let probs = net.forward_one(data.input(i))?;
        if argmax(&probs) == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Index of the largest value; first occurrence wins on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn fisher_yates<R: Rng>(order: &mut [usize], rng: &mut R) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledDataset;

    fn toy_dataset() -> LabeledDataset {
        // Two linearly separable clusters in 2-D.
        let inputs = vec![
            0.9, 0.1, //
            0.8, 0.2, //
            0.1, 0.9, //
            0.2, 0.8,
        ];
        LabeledDataset::from_flat(inputs, vec![0, 0, 1, 1], 2, Shape::flat(2)).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let net = Network::mlp(4, &[6], 10, 0).unwrap();
        let net = net.unflatten_weights(&vec![0.0; net.param_count()]).unwrap();
        let probs = net.forward(&[0.3, -1.0, 0.5, 2.0]).unwrap();
        for &p in &probs {
            assert!((p - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_dense_softmax_hand_value() {
        // W = I2, b = 0, input (3, 0): softmax -> (e^3/(e^3+1), 1/(e^3+1)).
        let layers = vec![Layer::dense_zeroed(2, 2), Layer::Softmax];
        let net = Network::new(Shape::flat(2), layers, 2).unwrap();
        let net = net.unflatten_weights(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let probs = net.forward_one(&[3.0, 0.0]).unwrap();
        let e3 = 3.0f64.exp();
        assert!((probs[0] - e3 / (e3 + 1.0)).abs() < 1e-12);
        assert!((probs[1] - 1.0 / (e3 + 1.0)).abs() < 1e-12);
        assert!((probs[0] - 0.9526).abs() < 1e-4);
    }

    #[test]
    fn forward_preserves_batch_rows() {
        let net = Network::mlp(3, &[5], 4, 1).unwrap();
        let batch = vec![0.1; 3 * 7];
        let out = net.forward(&batch).unwrap();
        assert_eq!(out.len(), 7 * 4);
        // Softmax rows sum to one.
        for row in out.chunks(4) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let net = Network::mlp(3, &[5], 4, 1).unwrap();
        assert!(net.forward(&[0.0; 4]).is_err());
        assert!(net.forward_one(&[0.0; 2]).is_err());
    }

    #[test]
    fn loss_and_grad_rejects_bad_labels() {
        let net = Network::mlp(2, &[3], 2, 1).unwrap();
        let err = net.loss_and_grad(&[0.0, 0.0], &[2]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { .. }));
    }

    #[test]
    fn duplicated_samples_leave_mean_gradient_unchanged() {
        let net = Network::mlp(2, &[4], 3, 5).unwrap();
        let batch = vec![0.2, 0.7, 0.9, 0.1];
        let labels = vec![1usize, 2];
        let (loss1, g1) = net.loss_and_grad(&batch, &labels).unwrap();
        let mut doubled = batch.clone();
        doubled.extend_from_slice(&batch);
        let mut labels2 = labels.clone();
        labels2.extend_from_slice(&labels);
        let (loss2, g2) = net.loss_and_grad(&doubled, &labels2).unwrap();
        assert!((loss1 - loss2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_logits_give_vanishing_gradient() {
        // Dense with W = 10*I on a one-hot input produces logits 10*onehot.
        let c = 10;
        let layers = vec![Layer::dense_zeroed(c, c), Layer::Softmax];
        let net = Network::new(Shape::flat(c), layers, c).unwrap();
        let mut params = vec![0.0f32; net.param_count()];
        for i in 0..c {
            params[i * c + i] = 10.0;
        }
        let net = net.unflatten_weights(&params).unwrap();
        let mut x = vec![0.0; c];
        x[0] = 1.0;
        let (_, grad) = net.loss_and_grad(&x, &[0]).unwrap();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "gradient norm {norm}");
    }

    #[test]
    fn per_example_gradient_length_and_determinism() {
        let net = Network::mlp(3, &[4], 2, 9).unwrap();
        let g1 = net.per_example_gradient(&[0.1, 0.2, 0.3], 1).unwrap();
        let g2 = net.per_example_gradient(&[0.1, 0.2, 0.3], 1).unwrap();
        assert_eq!(g1.len(), net.param_count());
        assert_eq!(g1, g2);
        assert!(net.per_example_gradient(&[0.1, 0.2], 1).is_err());
        assert!(net.per_example_gradient(&[0.1, 0.2, 0.3], 2).is_err());
    }

    #[test]
    fn per_example_gradient_of_linear_model_is_input() {
        // Single dense layer: logit_k = w_k . x + b_k, so the gradient in the
        // w_k block is x itself, independent of the anchor weights.
        let layers = vec![Layer::dense_zeroed(3, 2), Layer::Softmax];
        let base = Network::new(Shape::flat(3), layers, 2).unwrap();
        for seed in [1u64, 2] {
            let mut rng = crate::rng::seeded(seed);
            let params: Vec<f32> = (0..base.param_count())
                .map(|_| rng.gen_range(-1.0..1.0f64) as f32)
                .collect();
            let net = base.unflatten_weights(&params).unwrap();
            let x = [0.4, -0.2, 0.9];
            let g = net.per_example_gradient(&x, 1).unwrap();
            // Layout: w row 0 (3), w row 1 (3), bias (2).
            assert_eq!(&g[0..3], &[0.0, 0.0, 0.0]);
            for (gi, xi) in g[3..6].iter().zip(&x) {
                assert!((gi - xi).abs() < 1e-12);
            }
            assert_eq!(&g[6..8], &[0.0, 1.0]);
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let net = Network::mlp(2, &[3], 2, 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: 2,
            max_epochs: 0,
            seed: 0,
            shuffle: true,
        };
        let (out, history) = sgd_train(&net, &toy_dataset(), &cfg).unwrap();
        assert!(history.is_empty());
        assert_eq!(out.flatten_weights(), net.flatten_weights());
    }

    #[test]
    fn training_rejects_empty_dataset() {
        let net = Network::mlp(2, &[3], 2, 3).unwrap();
        let empty = LabeledDataset::from_flat(vec![], vec![], 2, Shape::flat(2)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: 2,
            max_epochs: 1,
            seed: 0,
            shuffle: true,
        };
        assert!(matches!(
            sgd_train(&net, &empty, &cfg),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn separable_blobs_reach_full_accuracy() {
        let data = crate::data::synth_blobs(2, 100, 4, 4.0, 17).unwrap();
        let net = Network::mlp(4, &[8], 2, 4).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            batch_size: 16,
            max_epochs: 50,
            seed: 2,
            shuffle: true,
        };
        let (trained, history) = sgd_train(&net, &data, &cfg).unwrap();
        assert!(history.len() <= 50);
        let acc = evaluate_accuracy(&trained, &data).unwrap();
        assert!(acc >= 1.0 - 1e-12, "train accuracy {acc}");
    }

    #[test]
    fn accuracy_tie_break_uses_lowest_class() {
        // Zero weights -> identical logits -> argmax picks class 0, so
        // accuracy equals the share of class-0 samples.
        let net = Network::mlp(2, &[3], 2, 0).unwrap();
        let net = net.unflatten_weights(&vec![0.0; net.param_count()]).unwrap();
        let data = toy_dataset();
        let acc = evaluate_accuracy(&net, &data).unwrap();
        assert!((acc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hand_built_two_of_three_accuracy() {
        let layers = vec![Layer::dense_zeroed(2, 2), Layer::Softmax];
        let net = Network::new(Shape::flat(2), layers, 2).unwrap();
        let net = net.unflatten_weights(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let data = LabeledDataset::from_flat(
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
            vec![0, 1, 1],
            2,
            Shape::flat(2),
        )
        .unwrap();
        let acc = evaluate_accuracy(&net, &data).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn flatten_unflatten_roundtrip_is_exact() {
        let net = Network::mlp(5, &[7, 3], 4, 42).unwrap();
        let w = net.flatten_weights();
        let rebuilt = net.unflatten_weights(&w).unwrap();
        assert_eq!(w, rebuilt.flatten_weights());
        assert_eq!(net.fingerprint(), rebuilt.fingerprint());
    }

    #[test]
    fn identical_seeds_train_identically() {
        let data = toy_dataset();
        let cfg = TrainConfig {
            learning_rate: 0.3,
            batch_size: 2,
            max_epochs: 10,
            seed: 77,
            shuffle: true,
        };
        let net = Network::mlp(2, &[4], 2, 1).unwrap();
        let (a, _) = sgd_train(&net, &data, &cfg).unwrap();
        let (b, _) = sgd_train(&net, &data, &cfg).unwrap();
        assert_eq!(a.flatten_weights(), b.flatten_weights());
    }
}
