//! Patch-wise embedder `g`, global average pooling and the softmax
//! classifier `f`, with hand-written reverse passes.
//!
//! The embedder applies the same stack of affine + ReLU layers to every patch
//! independently, so the `K` spatial positions of the input survive into the
//! latent grid.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid::PatchGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    /// Raw features per input patch.
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Latent channels `C`.
    pub channels: usize,
    /// Number of affine + ReLU layers in the embedder.
    pub layers: usize,
    pub classes: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            input_dim: 4,
            hidden_dim: 16,
            channels: 8,
            layers: 2,
            classes: 5,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.channels == 0 || self.layers == 0 {
            return Err(Error::Config(
                "model dims: input_dim, channels and layers must be >= 1".into(),
            ));
        }
        if self.layers > 1 && self.hidden_dim == 0 {
            return Err(Error::Config("model dims: hidden_dim must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("model dims: classes must be >= 2".into()));
        }
        Ok(())
    }

    /// `(in, out)` for each embedder layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let fan_in = if l == 0 { self.input_dim } else { self.hidden_dim };
                let fan_out = if l + 1 == self.layers { self.channels } else { self.hidden_dim };
                (fan_in, fan_out)
            })
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON form; checkpoints carry it.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("dims serialize");
        hex::encode(Sha256::digest(&json))
    }
}

/// Affine map `x -> W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn gaussian(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        });
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// Anything mapping a pooled embedding to class probabilities.
pub trait Classifier {
    fn class_count(&self) -> usize;
    fn predict_proba(&self, pooled: ArrayView1<f64>) -> Array1<f64>;
}

/// Parameters of `g` and `f`. Gradient buffers use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub embedder: Vec<Dense>,
    pub classifier: Dense,
}

/// Activations kept by [`ModelParams::embed_with_cache`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct EmbedCache {
    /// Input to each layer (`K x in`).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer (`K x out`).
    pre: Vec<Array2<f64>>,
}

impl ModelParams {
    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedder = dims
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Dense::gaussian(i, o, &mut rng))
            .collect();
        let classifier = Dense::gaussian(dims.channels, dims.classes, &mut rng);
        Ok(Self {
            dims,
            embedder,
            classifier,
        })
    }

    /// All-zero parameters with the given shapes.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            embedder: dims
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
            classifier: Dense::zeros(dims.channels, dims.classes),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims,
            embedder: self.embedder.iter().map(Dense::zeros_like).collect(),
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.1.fill(0.0);
        }
    }

    /// Named flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (l, d) in self.embedder.iter().enumerate() {
            out.push((
                format!("embedder.{l}.weight"),
                d.weight.shape().to_vec(),
                d.weight.as_slice().expect("standard layout"),
            ));
            out.push((
                format!("embedder.{l}.bias"),
                d.bias.shape().to_vec(),
                d.bias.as_slice().expect("standard layout"),
            ));
        }
        out.push((
            "classifier.weight".into(),
            self.classifier.weight.shape().to_vec(),
            self.classifier.weight.as_slice().expect("standard layout"),
        ));
        out.push((
            "classifier.bias".into(),
            self.classifier.bias.shape().to_vec(),
            self.classifier.bias.as_slice().expect("standard layout"),
        ));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (l, d) in self.embedder.iter_mut().enumerate() {
            out.push((
                format!("embedder.{l}.weight"),
                d.weight.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("embedder.{l}.bias"),
                d.bias.as_slice_mut().expect("standard layout"),
            ));
        }
        out.push((
            "classifier.weight".into(),
            self.classifier.weight.as_slice_mut().expect("standard layout"),
        ));
        out.push((
            "classifier.bias".into(),
            self.classifier.bias.as_slice_mut().expect("standard layout"),
        ));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    /// Applies `g` patch-wise.
    pub fn embed(&self, raw: &PatchGrid) -> Result<PatchGrid> {
        self.embed_with_cache(raw).map(|(g, _)| g)
    }

    pub fn embed_with_cache(&self, raw: &PatchGrid) -> Result<(PatchGrid, EmbedCache)> {
        if raw.channels() != self.dims.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.dims.input_dim,
                found: raw.channels(),
            });
        }
        let mut inputs = Vec::with_capacity(self.embedder.len());
        let mut pre = Vec::with_capacity(self.embedder.len());
        let mut act = raw.patches().clone();
        for layer in &self.embedder {
            let z = act.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(act);
            act = z.mapv(|x| x.max(0.0));
            pre.push(z);
        }
        Ok((PatchGrid::new(act)?, EmbedCache { inputs, pre }))
    }

    /// Accumulates parameter gradients for `d_out = dL/d(embedded grid)`.
    pub fn backward_embed(&self, cache: &EmbedCache, d_out: &Array2<f64>, grads: &mut ModelParams) {
        let mut d = d_out.clone();
        for l in (0..self.embedder.len()).rev() {
            // Through the ReLU.
            ndarray::Zip::from(&mut d)
                .and(&cache.pre[l])
                .for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            grads.embedder[l].weight += &d.t().dot(&cache.inputs[l]);
            grads.embedder[l].bias += &d.sum_axis(Axis(0));
            if l > 0 {
                d = d.dot(&self.embedder[l].weight);
            }
        }
    }

    pub fn logits(&self, pooled: ArrayView1<f64>) -> Array1<f64> {
        self.classifier.weight.dot(&pooled) + &self.classifier.bias
    }

    /// Softmax over the classifier applied to the mean patch of `grid`.
    pub fn pool_and_classify(&self, grid: &PatchGrid) -> Array1<f64> {
        self.predict_proba(grid.mean().view())
    }

    /// Accumulates classifier gradients for `d_logits` at input `pooled` and
    /// returns `dL/d pooled`.
    pub fn backward_classifier(
        &self,
        pooled: ArrayView1<f64>,
        d_logits: ArrayView1<f64>,
        grads: &mut ModelParams,
    ) -> Array1<f64> {
        let outer = d_logits
            .insert_axis(Axis(1))
            .dot(&pooled.insert_axis(Axis(0)));
        grads.classifier.weight += &outer;
        grads.classifier.bias += &d_logits;
        self.classifier.weight.t().dot(&d_logits)
    }

    /// Class with the highest probability for a raw sample.
    pub fn predict(&self, raw: &PatchGrid) -> Result<usize> {
        let probs = self.pool_and_classify(&self.embed(raw)?);
        Ok(argmax(probs.view()))
    }
}

impl Classifier for ModelParams {
    fn class_count(&self) -> usize {
        self.dims.classes
    }

    fn predict_proba(&self, pooled: ArrayView1<f64>) -> Array1<f64> {
        softmax(self.logits(pooled).view())
    }
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.mapv(|x| (x - max).exp());
    let s = e.sum();
    e / s
}

/// First index of the maximum.
pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Probability floor applied before taking logs in cross-entropy.
pub const CE_CLAMP: f64 = 1e-12;

/// `-log max(p[label], CE_CLAMP)`.
pub fn cross_entropy(probs: ArrayView1<f64>, label: usize) -> f64 {
    -probs[label].max(CE_CLAMP).ln()
}

/// `d CE / d logits` for softmax probabilities `probs`; zero when the clamp
/// is active.
pub fn cross_entropy_logit_grad(probs: ArrayView1<f64>, label: usize) -> Array1<f64> {
    if probs[label] < CE_CLAMP {
        return Array1::zeros(probs.len());
    }
    let mut g = probs.to_owned();
    g[label] -= 1.0;
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dims() -> ModelDims {
        ModelDims {
            input_dim: 3,
            hidden_dim: 5,
            channels: 4,
            layers: 2,
            classes: 3,
        }
    }

    fn sample() -> PatchGrid {
        PatchGrid::new(array![[0.2, -1.0, 0.5], [1.5, 0.3, -0.2], [0.0, 0.7, 0.9], [-0.4, 0.1, 0.2]]).unwrap()
    }

    #[test]
    fn zero_params_embed_to_zero() {
        let p = ModelParams::zeros(dims()).unwrap();
        let z = p.embed(&sample()).unwrap();
        assert_eq!(z.patch_count(), 4);
        assert_eq!(z.channels(), 4);
        assert!(z.patches().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn identity_layer_passes_positive_input() {
        let d = ModelDims {
            input_dim: 3,
            hidden_dim: 3,
            channels: 3,
            layers: 1,
            classes: 2,
        };
        let mut p = ModelParams::zeros(d).unwrap();
        p.embedder[0].weight = Array2::eye(3);
        let raw = PatchGrid::new(array![[0.1, 0.2, 0.3], [1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(p.embed(&raw).unwrap(), raw);
    }

    #[test]
    fn embed_is_deterministic_for_a_seed() {
        let a = ModelParams::init(dims(), 9).unwrap();
        let b = ModelParams::init(dims(), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.embed(&sample()).unwrap(), b.embed(&sample()).unwrap());
        assert_ne!(a, ModelParams::init(dims(), 10).unwrap());
    }

    #[test]
    fn embed_rejects_wrong_input_dim() {
        let p = ModelParams::init(dims(), 1).unwrap();
        let raw = PatchGrid::new(Array2::zeros((2, 5))).unwrap();
        assert!(matches!(p.embed(&raw), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn final_layer_homogeneity_without_biases() {
        let p = ModelParams::init(dims(), 4).unwrap();
        let mut q = p.clone();
        q.embedder[1].weight *= 2.5;
        let z = p.embed(&sample()).unwrap();
        let zq = q.embed(&sample()).unwrap();
        for (x, y) in z.patches().iter().zip(zq.patches().iter()) {
            assert!((2.5 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn classifier_outputs() {
        let mut p = ModelParams::init(dims(), 2).unwrap();
        let z = p.embed(&sample()).unwrap();
        let probs = p.pool_and_classify(&z);
        assert!((probs.sum() - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|x| *x > 0.0));

        let doubled = PatchGrid::new(ndarray::concatenate![Axis(0), *z.patches(), *z.patches()]).unwrap();
        let pd = p.pool_and_classify(&doubled);
        for (x, y) in probs.iter().zip(pd.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let rev = z.permuted(&[3, 2, 1, 0]).unwrap();
        let pr = p.pool_and_classify(&rev);
        for (x, y) in probs.iter().zip(pr.iter()) {
            assert!((x - y).abs() < 1e-12);
        }

        p.classifier = Dense::zeros(4, 3);
        let u = p.pool_and_classify(&z);
        for x in u.iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_clamps() {
        let probs = array![1.0, 0.0];
        assert_eq!(cross_entropy(probs.view(), 0), 0.0);
        assert!((cross_entropy(probs.view(), 1) - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(cross_entropy_logit_grad(probs.view(), 1).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn config_hash_tracks_dims() {
        let d = dims();
        let mut e = d;
        e.channels = 9;
        assert_eq!(d.config_hash(), dims().config_hash());
        assert_ne!(d.config_hash(), e.config_hash());
    }
}
