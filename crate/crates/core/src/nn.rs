//! Fixed-topology dense networks in 32-bit floats: batched forward pass,
//! reverse-mode gradients, Adam, and the JSON checkpoint format.
//!
//! Matrices are row-major. A layer's weight matrix has shape
//! `(outputs, inputs)`; batches are `(batch, features)`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("expected {expected} activations for {layers} layers")]
    ActivationCount { expected: usize, layers: usize },
    #[error("network needs at least one layer with non-zero sizes")]
    EmptyNetwork,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("cache was produced by a different parameter state")]
    StaleCache,
    #[error("parameter shape mismatch")]
    Shape,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: f32) -> f32 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation and the activation.
    fn derivative(self, z: f32, a: f32) -> f32 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// Row-major `(outputs, inputs)`.
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// A multilayer perceptron; the parameter container shared by every learner.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
    version: u64,
    /// Lazily built `inputs x outputs` copies of each weight matrix for batched passes.
    transposed: Vec<OnceLock<Vec<f32>>>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Intermediate values from a forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    batch: usize,
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Vec<f32>>,
    pre_activations: Vec<Vec<f32>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn pre_activations(&self, layer: usize) -> &[f32] {
        &self.pre_activations[layer]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// Gradient with respect to the network input, `(batch, inputs)`.
    pub input: Vec<f32>,
}

/// `c (m x n) = a (m x k) * b (k x n) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
/// Dot product with independent partial sums so it vectorizes.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 16;
    let mut acc = [0.0f32; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f32>() + tail
}

fn empty_cache(layers: usize) -> Vec<OnceLock<Vec<f32>>> {
    (0..layers).map(|_| OnceLock::new()).collect()
}

/// Row-major `rows x cols` to row-major `cols x rows`, in tiles.
fn transpose(m: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    const TILE: usize = 64;
    let mut out = vec![0.0f32; m.len()];
    for r0 in (0..rows).step_by(TILE) {
        let r1 = (r0 + TILE).min(rows);
        for c0 in (0..cols).step_by(TILE) {
            for c in c0..(c0 + TILE).min(cols) {
                let dst = &mut out[c * rows + r0..c * rows + r1];
                for (d, r) in dst.iter_mut().zip(r0..r1) {
                    *d = m[r * cols + c];
                }
            }
        }
    }
    out
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (isize, isize),
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices cover every index reached by the given shapes and strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

impl Mlp {
    /// He-uniform weights for ReLU layers, Xavier-uniform otherwise, zero biases.
    pub fn new(layer_sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(NnError::EmptyNetwork);
        }
        let layers = layer_sizes.len() - 1;
        if activations.len() != layers {
            return Err(NnError::ActivationCount {
                expected: layers,
                layers,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<Dense> = layer_sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (inputs, outputs) = (w[0], w[1]);
                let limit = match activation {
                    Activation::Relu => (6.0 / inputs as f64).sqrt(),
                    Activation::Tanh | Activation::Linear => (6.0 / (inputs + outputs) as f64).sqrt(),
                } as f32;
                let weights = (0..inputs * outputs)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Dense {
                    inputs,
                    outputs,
                    activation,
                    weights,
                    biases: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self {
            transposed: empty_cache(layers.len()),
            layers,
            version: fresh_version(),
        })
    }

    /// Builds a network from explicit layers. Adjacent layers must chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::EmptyNetwork);
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.inputs == 0
                || layer.outputs == 0
                || layer.weights.len() != layer.inputs * layer.outputs
                || layer.biases.len() != layer.outputs
            {
                return Err(NnError::Shape);
            }
            if i > 0 && layers[i - 1].outputs != layer.inputs {
                return Err(NnError::Shape);
            }
        }
        Ok(Self {
            transposed: empty_cache(layers.len()),
            layers,
            version: fresh_version(),
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to the parameters. Outstanding caches become stale.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.invalidate();
        &mut self.layers
    }

    fn invalidate(&mut self) {
        self.version = fresh_version();
        self.transposed = empty_cache(self.layers.len());
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn batch_of(&self, input: &[f32]) -> Result<usize, NnError> {
        let n = self.input_size();
        if input.is_empty() || input.len() % n != 0 {
            return Err(NnError::Dimension {
                expected: n,
                got: input.len(),
            });
        }
        Ok(input.len() / n)
    }

    fn affine(&self, index: usize, input: &[f32], batch: usize) -> Vec<f32> {
        let layer = &self.layers[index];
        let mut z = Vec::with_capacity(batch * layer.outputs);
        for _ in 0..batch {
            z.extend_from_slice(&layer.biases);
        }
        if batch == 1 {
            for (zo, row) in z.iter_mut().zip(layer.weights.chunks_exact(layer.inputs)) {
                *zo += dot(row, input);
            }
            return z;
        }
        // sgemm packs a transposed right operand slowly, so keep a transposed copy.
        let wt = self.transposed[index].get_or_init(|| transpose(&layer.weights, layer.outputs, layer.inputs));
        let (k, nout) = (layer.inputs as isize, layer.outputs as isize);
        gemm(
            batch,
            layer.inputs,
            layer.outputs,
            input,
            (k, 1),
            wt,
            (nout, 1),
            1.0,
            &mut z,
            (nout, 1),
        );
        z
    }

    /// Forward pass over a row-major batch; the batch size is inferred.
    pub fn forward(&self, input: &[f32]) -> Result<(Vec<f32>, ForwardCache), NnError> {
        let batch = self.batch_of(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = self.affine(i, activations.last().expect("input pushed"), batch);
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre_activations.push(z);
            activations.push(a);
        }
        let output = activations.last().expect("at least one layer").clone();
        Ok((
            output,
            ForwardCache {
                version: self.version,
                batch,
                activations,
                pre_activations,
            },
        ))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, input: &[f32]) -> Result<Vec<f32>, NnError> {
        let batch = self.batch_of(input)?;
        let mut current: Vec<f32> = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = self.affine(i, &current, batch);
            for v in &mut z {
                *v = layer.activation.apply(*v);
            }
            current = z;
        }
        Ok(current)
    }

    /// Gradients of `sum(output * grad_output)` with respect to every parameter and the input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f32]) -> Result<Gradients, NnError> {
        if cache.version != self.version || cache.activations.len() != self.layers.len() + 1 {
            return Err(NnError::StaleCache);
        }
        let batch = cache.batch;
        let expected = batch * self.output_size();
        if grad_output.len() != expected {
            return Err(NnError::Dimension {
                expected,
                got: grad_output.len(),
            });
        }

        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_output.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[i];
            let a = &cache.activations[i + 1];
            let prev = &cache.activations[i];
            for ((g, &zv), &av) in upstream.iter_mut().zip(z).zip(a) {
                *g *= layer.activation.derivative(zv, av);
            }
            let delta = upstream;
            let (nin, nout) = (layer.inputs as isize, layer.outputs as isize);

            let mut dw = vec![0.0f32; layer.outputs * layer.inputs];
            gemm(
                layer.outputs,
                batch,
                layer.inputs,
                &delta,
                (1, nout),
                prev,
                (nin, 1),
                0.0,
                &mut dw,
                (nin, 1),
            );
            let mut db = vec![0.0f32; layer.outputs];
            for row in delta.chunks_exact(layer.outputs) {
                for (b, &d) in db.iter_mut().zip(row) {
                    *b += d;
                }
            }
            let mut dx = vec![0.0f32; batch * layer.inputs];
            gemm(
                batch,
                layer.outputs,
                layer.inputs,
                &delta,
                (nout, 1),
                &layer.weights,
                (nin, 1),
                0.0,
                &mut dx,
                (nin, 1),
            );
            grads.push(LayerGrad { weights: dw, biases: db });
            upstream = dx;
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            input: upstream,
        })
    }

    /// `self = tau * source + (1 - tau) * self`, elementwise.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f32) -> Result<(), NnError> {
        if !self.same_shape(source) {
            return Err(NnError::Shape);
        }
        let keep = 1.0 - tau;
        for (dst, src) in self.layers_mut().iter_mut().zip(&source.layers) {
            for (d, &s) in dst.weights.iter_mut().zip(&src.weights) {
                *d = tau * s + keep * *d;
            }
            for (d, &s) in dst.biases.iter_mut().zip(&src.biases) {
                *d = tau * s + keep * *d;
            }
        }
        Ok(())
    }

    /// Hard copy of another network's parameters.
    pub fn copy_from(&mut self, source: &Mlp) -> Result<(), NnError> {
        if !self.same_shape(source) {
            return Err(NnError::Shape);
        }
        self.layers.clone_from(&source.layers);
        self.invalidate();
        self.transposed.clone_from(&source.transposed);
        Ok(())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs && a.activation == b.activation)
    }

    pub fn to_checkpoint(&self, algo: &str, episode: u64, train_config_digest: &str) -> NetworkCheckpoint {
        NetworkCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            algo: algo.to_string(),
            layer_sizes: self.layer_sizes(),
            activations: self.activations(),
            weights: self.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: self.layers.iter().map(|l| l.biases.clone()).collect(),
            episode,
            train_config_digest: train_config_digest.to_string(),
        }
    }

    pub fn from_checkpoint(ck: &NetworkCheckpoint) -> Result<Self, NnError> {
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported format_version {}",
                ck.format_version
            )));
        }
        let layers = ck.layer_sizes.len().saturating_sub(1);
        if layers == 0 || ck.activations.len() != layers || ck.weights.len() != layers || ck.biases.len() != layers {
            return Err(NnError::Checkpoint("layer count mismatch".into()));
        }
        let dense = (0..layers)
            .map(|i| Dense {
                inputs: ck.layer_sizes[i],
                outputs: ck.layer_sizes[i + 1],
                activation: ck.activations[i],
                weights: ck.weights[i].clone(),
                biases: ck.biases[i].clone(),
            })
            .collect::<Vec<_>>();
        if dense
            .iter()
            .any(|l| l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()))
        {
            return Err(NnError::Checkpoint("non-finite parameter".into()));
        }
        Mlp::from_layers(dense).map_err(|_| NnError::Checkpoint("parameter shapes do not match layer_sizes".into()))
    }
}

/// On-disk form of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCheckpoint {
    pub format_version: u32,
    pub algo: String,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
    pub episode: u64,
    pub train_config_digest: String,
}

/// Mean squared error over all elements and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f32], target: &[f32]) -> Result<(f32, Vec<f32>), NnError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NnError::Dimension {
            expected: pred.len(),
            got: target.len(),
        });
    }
    let n = pred.len() as f32;
    let mut loss = 0.0f32;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f32) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    first_moment: Vec<LayerMoments>,
    second_moment: Vec<LayerMoments>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerMoments {
    weights: Vec<f32>,
    biases: Vec<f32>,
}

impl Adam {
    pub fn new(params: &Mlp, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .layers()
                .iter()
                .map(|l| LayerMoments {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    pub fn matches(&self, params: &Mlp) -> bool {
        self.first_moment.len() == params.layers().len()
            && self.second_moment.len() == params.layers().len()
            && params.layers().iter().zip(&self.first_moment).zip(&self.second_moment).all(|((l, m), v)| {
                m.weights.len() == l.weights.len()
                    && m.biases.len() == l.biases.len()
                    && v.weights.len() == l.weights.len()
                    && v.biases.len() == l.biases.len()
            })
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        if !self.matches(params)
            || grads.layers.len() != params.layers().len()
            || params
                .layers()
                .iter()
                .zip(&grads.layers)
                .any(|(l, g)| l.weights.len() != g.weights.len() || l.biases.len() != g.biases.len())
        {
            return Err(NnError::Shape);
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = (1.0 - f64::from(beta1).powi(t)) as f32;
        let c2 = (1.0 - f64::from(beta2).powi(t)) as f32;
        let update = |p: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        };
        let layers = params.layers_mut();
        for (i, layer) in layers.iter_mut().enumerate() {
            let g = &grads.layers[i];
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> Mlp {
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        Mlp::from_layers(vec![Dense {
            inputs: n,
            outputs: n,
            activation: Activation::Linear,
            weights,
            biases: vec![0.0; n],
        }])
        .unwrap()
    }

    #[test]
    fn default_shapes() {
        use Activation::*;
        let dqn = Mlp::new(&[12, 1024, 512, 2], &[Relu, Relu, Linear], 0).unwrap();
        assert_eq!(dqn.layer_sizes(), vec![12, 1024, 512, 2]);
        assert_eq!(dqn.layers()[1].weights.len(), 512 * 1024);
        let actor = Mlp::new(&[12, 64, 64, 32, 1], &[Relu, Relu, Relu, Tanh], 0).unwrap();
        assert_eq!(actor.output_size(), 1);
        assert!(matches!(
            Mlp::new(&[12, 4, 2], &[Relu], 0),
            Err(NnError::ActivationCount { .. })
        ));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        use Activation::*;
        let a = Mlp::new(&[12, 64, 1], &[Relu, Tanh], 9).unwrap();
        let b = Mlp::new(&[12, 64, 1], &[Relu, Tanh], 9).unwrap();
        let c = Mlp::new(&[12, 64, 1], &[Relu, Tanh], 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let he = (6.0f32 / 12.0).sqrt();
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() <= he));
        let xavier = (6.0f32 / 65.0).sqrt();
        assert!(a.layers()[1].weights.iter().all(|w| w.abs() <= xavier));
        assert!(a.layers().iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn identity_linear_is_passthrough() {
        let net = identity(3);
        let (out, _) = net.forward(&[1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        assert_eq!(out, vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]);
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        let mut net = identity(3);
        net.layers_mut()[0].activation = Activation::Relu;
        let (out, _) = net.forward(&[-1.0, -0.5, -3.0]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn dimension_errors() {
        let net = identity(3);
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(NnError::Dimension { .. })));
        let (_, cache) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0]), Err(NnError::Dimension { .. })));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = identity(2);
        let (_, cache) = net.forward(&[1.0, 2.0]).unwrap();
        net.layers_mut()[0].biases[0] = 0.5;
        assert_eq!(net.backward(&cache, &[1.0, 1.0]), Err(NnError::StaleCache));
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let net = Mlp::from_layers(vec![Dense {
            inputs: 3,
            outputs: 1,
            activation: Activation::Linear,
            weights: vec![0.3, -0.2, 0.7],
            biases: vec![0.1],
        }])
        .unwrap();
        let x = [2.0, -1.0, 0.5];
        let (_, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.layers[0].weights, x.to_vec());
        assert_eq!(g.layers[0].biases, vec![1.0]);
        assert_eq!(g.input, vec![0.3, -0.2, 0.7]);
    }

    #[test]
    fn tanh_at_zero_passes_gradient_through() {
        let net = Mlp::from_layers(vec![Dense {
            inputs: 1,
            outputs: 1,
            activation: Activation::Tanh,
            weights: vec![1.0],
            biases: vec![0.0],
        }])
        .unwrap();
        let (out, cache) = net.forward(&[0.0]).unwrap();
        assert_eq!(out, vec![0.0]);
        let g = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.input, vec![1.0]);
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr_leave_params() {
        use Activation::*;
        let mut net = Mlp::new(&[4, 8, 2], &[Relu, Linear], 1).unwrap();
        let before = net.clone();
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let zero = net.backward(&cache, &[0.0, 0.0]).unwrap();
        let mut adam = Adam::new(&net, AdamConfig::with_learning_rate(1e-3));
        adam.step(&mut net, &zero).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.step, 1);

        let (_, cache) = net.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = net.backward(&cache, &[1.0, -1.0]).unwrap();
        let mut frozen = Adam::new(&net, AdamConfig::with_learning_rate(0.0));
        for _ in 0..5 {
            frozen.step(&mut net, &g).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // At t = 1 the bias-corrected update is lr * g / (|g| + eps).
        let mut net = Mlp::from_layers(vec![Dense {
            inputs: 2,
            outputs: 1,
            activation: Activation::Linear,
            weights: vec![0.5, -0.5],
            biases: vec![0.0],
        }])
        .unwrap();
        let grads = Gradients {
            layers: vec![LayerGrad {
                weights: vec![0.3, -2.0],
                biases: vec![1e-3],
            }],
            input: vec![],
        };
        let lr = 1e-2f32;
        let mut adam = Adam::new(&net, AdamConfig::with_learning_rate(lr));
        adam.step(&mut net, &grads).unwrap();
        let expect = |p: f64, g: f64| p - f64::from(lr) * g / (g.abs() + 1e-8);
        let l = &net.layers()[0];
        assert!((f64::from(l.weights[0]) - expect(0.5, 0.3)).abs() < 1e-6);
        assert!((f64::from(l.weights[1]) - expect(-0.5, -2.0)).abs() < 1e-6);
        assert!((f64::from(l.biases[0]) - expect(0.0, 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn adam_is_deterministic_and_shape_checked() {
        use Activation::*;
        let net = Mlp::new(&[3, 5, 1], &[Tanh, Linear], 2).unwrap();
        let (_, cache) = net.forward(&[1.0, 0.0, -1.0]).unwrap();
        let g = net.backward(&cache, &[1.0]).unwrap();
        let adam = Adam::new(&net, AdamConfig::with_learning_rate(1e-3));
        let run = || {
            let (mut n, mut a) = (net.clone(), adam.clone());
            a.step(&mut n, &g).unwrap();
            (n, a)
        };
        assert_eq!(run(), run());
        let other = Mlp::new(&[3, 4, 1], &[Tanh, Linear], 2).unwrap();
        let mut bad = Adam::new(&other, AdamConfig::with_learning_rate(1e-3));
        assert_eq!(bad.step(&mut net.clone(), &g), Err(NnError::Shape));
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, vec![0.0, 0.0]));
        assert_eq!(mse_loss(&[1.0], &[0.0]).unwrap(), (1.0, vec![2.0]));
        let pred = [0.5f32, -1.0, 2.0, 3.0];
        let target = [1.0f32, 1.0, 1.0, 1.0];
        let (loss, grad) = mse_loss(&pred, &target).unwrap();
        let mut oracle = 0.0f64;
        for i in 0..4 {
            let d = f64::from(pred[i]) - f64::from(target[i]);
            oracle += d * d / 4.0;
            assert!((f64::from(grad[i]) - d / 2.0).abs() < 1e-7);
        }
        assert!((f64::from(loss) - oracle).abs() < 1e-6);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn soft_update_is_exact_convex_mix() {
        use Activation::*;
        let online = Mlp::new(&[3, 4, 1], &[Relu, Linear], 1).unwrap();
        let mut target = Mlp::new(&[3, 4, 1], &[Relu, Linear], 2).unwrap();
        let old = target.clone();
        target.soft_update_from(&online, 0.005).unwrap();
        for ((t, o), s) in target.layers().iter().zip(old.layers()).zip(online.layers()) {
            for ((&t, &o), &s) in t.weights.iter().zip(&o.weights).zip(&s.weights) {
                assert_eq!(t, 0.005 * s + (1.0 - 0.005) * o);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        use Activation::*;
        let net = Mlp::new(&[12, 64, 64, 32, 1], &[Relu, Relu, Relu, Tanh], 5).unwrap();
        let ck = net.to_checkpoint("td3", 500, "abc");
        let text = serde_json::to_string(&ck).unwrap();
        let back = Mlp::from_checkpoint(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, net);
        let x: Vec<f32> = (0..12).map(|i| i as f32 * 0.37 - 2.0).collect();
        assert_eq!(back.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn checkpoint_rejects_bad_shapes() {
        use Activation::*;
        let net = Mlp::new(&[2, 3, 1], &[Relu, Linear], 5).unwrap();
        let mut ck = net.to_checkpoint("dqn", 0, "");
        ck.weights[0].pop();
        assert!(Mlp::from_checkpoint(&ck).is_err());
        let mut ck = net.to_checkpoint("dqn", 0, "");
        ck.format_version = 2;
        assert!(Mlp::from_checkpoint(&ck).is_err());
    }
}
