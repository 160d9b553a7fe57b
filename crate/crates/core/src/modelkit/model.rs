//! The dual-head classifier: one shared backbone feeding a primary head and
//! an auxiliary pseudo-label head with independent parameters.

use ndarray::{Array2, Array4, Axis, Ix2};
use serde::{Deserialize, Serialize};

use super::nn::{Cache, Conv2d, Dense, Layer, Sequential};
use crate::datagen::batch::eval_batches;
use crate::error::{Error, Result};
use crate::parallel;
use crate::seeding::{derive_rng, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackboneSpec {
    /// Optional `pool x pool` average-pool downsampling, then ReLU dense layers.
    Mlp { pool: usize, hidden: Vec<usize> },
    /// Conv3x3 + ReLU + 2x2 max-pool per entry of `channels`, then a dense
    /// ReLU layer of width `feature_dim`.
    Cnn { channels: Vec<usize>, feature_dim: usize },
}

impl BackboneSpec {
    /// Small CPU-friendly MLP over 8x8-downsampled 32x32 images.
    pub fn desk_mlp() -> Self {
        BackboneSpec::Mlp { pool: 4, hidden: vec![256, 128] }
    }

    /// Four conv blocks and a 512-wide feature layer, about 0.9M parameters.
    pub fn small_cnn() -> Self {
        BackboneSpec::Cnn { channels: vec![32, 64, 128, 256], feature_dim: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `(channels, height, width)` of the input views.
    pub input: (usize, usize, usize),
    pub num_classes: usize,
    pub backbone: BackboneSpec,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 || self.num_classes < 2 {
            return Err(Error::invalid("model", "empty input or fewer than two classes"));
        }
        match &self.backbone {
            BackboneSpec::Mlp { pool, hidden } => {
                if *pool == 0 || h % pool != 0 || w % pool != 0 {
                    return Err(Error::invalid("pool", format!("{pool} must divide {h}x{w}")));
                }
                if hidden.is_empty() || hidden.contains(&0) {
                    return Err(Error::invalid("hidden", "need at least one non-empty hidden layer"));
                }
            }
            BackboneSpec::Cnn { channels, feature_dim } => {
                let div = 1usize << channels.len();
                if channels.is_empty() || channels.contains(&0) || *feature_dim == 0 {
                    return Err(Error::invalid("channels", "need at least one conv block"));
                }
                if h % div != 0 || w % div != 0 {
                    return Err(Error::invalid("channels", format!("{h}x{w} not divisible by {div}")));
                }
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        match &self.backbone {
            BackboneSpec::Mlp { hidden, .. } => *hidden.last().expect("validated"),
            BackboneSpec::Cnn { feature_dim, .. } => *feature_dim,
        }
    }

    fn build_backbone(&self, rng: &mut crate::seeding::Rng) -> Sequential {
        let (c, h, w) = self.input;
        let mut layers = Vec::new();
        match &self.backbone {
            BackboneSpec::Mlp { pool, hidden } => {
                if *pool > 1 {
                    layers.push(Layer::AvgPool(*pool));
                }
                layers.push(Layer::Flatten);
                let mut width = c * (h / pool) * (w / pool);
                for &hdim in hidden {
                    layers.push(Layer::Dense(Dense::new(width, hdim, rng)));
                    layers.push(Layer::Relu);
                    width = hdim;
                }
            }
            BackboneSpec::Cnn { channels, feature_dim } => {
                let mut ch = c;
                for &out in channels {
                    layers.push(Layer::Conv(Conv2d::new(ch, out, rng)));
                    layers.push(Layer::Relu);
                    layers.push(Layer::MaxPool2);
                    ch = out;
                }
                let div = 1usize << channels.len();
                layers.push(Layer::Flatten);
                layers.push(Layer::Dense(Dense::new(ch * (h / div) * (w / div), *feature_dim, rng)));
                layers.push(Layer::Relu);
            }
        }
        Sequential::new(layers)
    }
}

/// Selects which parameter groups an optimizer step touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamGroups {
    pub backbone: bool,
    pub head: bool,
    pub aux_head: bool,
}

impl ParamGroups {
    pub const ALL: ParamGroups = ParamGroups { backbone: true, head: true, aux_head: true };
    /// Backbone and primary head: plain supervised training.
    pub const PRIMARY: ParamGroups = ParamGroups { backbone: true, head: true, aux_head: false };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualHeadClassifier {
    pub spec: ModelSpec,
    pub backbone: Sequential,
    pub head: Dense,
    pub aux_head: Dense,
}

/// Gradients share the model's layout: a zero-initialized clone accumulates them.
pub type Gradients = DualHeadClassifier;

/// Activations kept from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Array2<f64>,
    pub aux_logits: Array2<f64>,
    features: Array2<f64>,
    caches: Vec<Cache>,
}

impl DualHeadClassifier {
    /// Randomly initialized network; `seed` selects the initialization.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = derive_rng(seed, &[stream::INIT]);
        let backbone = spec.build_backbone(&mut rng);
        let f = spec.feature_dim();
        let head = Dense::new(f, spec.num_classes, &mut rng);
        let aux_head = Dense::new(f, spec.num_classes, &mut rng);
        Ok(Self { spec, backbone, head, aux_head })
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if (c, h, w) != self.spec.input {
            return Err(Error::shape(format!("N x {:?}", self.spec.input), format!("{:?}", x.shape())));
        }
        Ok(())
    }

    fn features(&self, x: &Array4<f64>) -> Array2<f64> {
        self.backbone
            .forward(x.clone().into_dyn())
            .into_dimensionality::<Ix2>()
            .expect("backbone emits rank-2 features")
    }

    /// `(primary logits, auxiliary logits)` from one backbone pass.
    pub fn forward(&self, x: &Array4<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(x)?;
        let f = self.features(x);
        Ok((self.head.forward(&f), self.aux_head.forward(&f)))
    }

    /// Primary-head logits only. Inference never reads the auxiliary head.
    pub fn predict(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.head.forward(&self.features(x)))
    }

    pub fn forward_train(&self, x: &Array4<f64>) -> Result<ForwardPass> {
        self.check_input(x)?;
        let (f, caches) = self.backbone.forward_cached(x.clone().into_dyn());
        let features = f.into_dimensionality::<Ix2>().expect("rank-2 features");
        Ok(ForwardPass {
            logits: self.head.forward(&features),
            aux_logits: self.aux_head.forward(&features),
            features,
            caches,
        })
    }

    /// Accumulates gradients for the given logit gradients into `grads`.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        d_logits: Option<&Array2<f64>>,
        d_aux: Option<&Array2<f64>>,
        grads: &mut Gradients,
    ) {
        let mut d_feat: Option<Array2<f64>> = None;
        let mut add = |d: Array2<f64>| match &mut d_feat {
            Some(acc) => *acc += &d,
            None => d_feat = Some(d),
        };
        if let Some(d) = d_logits {
            add(self.head.backward(&pass.features, d, &mut grads.head, true).expect("input grad"));
        }
        if let Some(d) = d_aux {
            add(self.aux_head.backward(&pass.features, d, &mut grads.aux_head, true).expect("input grad"));
        }
        if let Some(d) = d_feat {
            self.backbone.backward(&pass.caches, d.into_dyn(), &mut grads.backbone);
        }
    }

    pub fn zero_grads(&self) -> Gradients {
        Self {
            spec: self.spec.clone(),
            backbone: self.backbone.zeros_like(),
            head: self.head.zeros_like(),
            aux_head: self.aux_head.zeros_like(),
        }
    }

    /// Parameter tensors grouped as `(backbone, head, aux_head)`.
    pub fn grouped_params(&self) -> [Vec<&[f64]>; 3] {
        fn dense(d: &Dense) -> Vec<&[f64]> {
            vec![d.weight.as_slice().expect("contiguous"), d.bias.as_slice().expect("contiguous")]
        }
        [self.backbone.param_slices(), dense(&self.head), dense(&self.aux_head)]
    }

    pub fn grouped_params_mut(&mut self) -> [Vec<&mut [f64]>; 3] {
        let Self { backbone, head, aux_head, .. } = self;
        [
            backbone.param_slices_mut(),
            vec![head.weight.as_slice_mut().expect("contiguous"), head.bias.as_slice_mut().expect("contiguous")],
            vec![aux_head.weight.as_slice_mut().expect("contiguous"), aux_head.bias.as_slice_mut().expect("contiguous")],
        ]
    }

    /// All parameters flattened in `(backbone, head, aux_head)` order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.grouped_params().iter().flat_map(|g| g.iter().flat_map(|s| s.iter().copied())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.grouped_params().iter().flatten().map(|s| s.len()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for group in self.grouped_params_mut() {
            for s in group {
                s.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) {
        for (mine, theirs) in self.grouped_params_mut().into_iter().zip(other.grouped_params()) {
            for (a, b) in mine.into_iter().zip(theirs) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
    }

    /// Primary-head logits for every image, unaugmented, in index order.
    pub fn predict_images(&self, images: &Array4<u8>, batch_size: usize) -> Result<Array2<f64>> {
        let batches: Vec<_> = eval_batches(images, batch_size).collect();
        let parts = parallel::map_slice(&batches, |(_, x)| self.predict(x));
        concat_rows(parts, self.num_classes())
    }

    /// Primary-head logits for a set of prepared views, evaluated in chunks.
    pub fn predict_chunked(&self, views: &Array4<f64>, chunk: usize) -> Result<Array2<f64>> {
        let n = views.len_of(Axis(0));
        let chunk = chunk.max(1);
        let parts = parallel::map_range(n.div_ceil(chunk), |k| {
            let lo = k * chunk;
            let hi = (lo + chunk).min(n);
            self.predict(&views.slice(ndarray::s![lo..hi, .., .., ..]).to_owned())
        });
        concat_rows(parts, self.num_classes())
    }
}

pub(crate) fn concat_rows(parts: Vec<Result<Array2<f64>>>, cols: usize) -> Result<Array2<f64>> {
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        return Ok(Array2::zeros((0, cols)));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape("stackable logits", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        ModelSpec {
            input: (3, 8, 8),
            num_classes: 4,
            backbone: BackboneSpec::Mlp { pool: 2, hidden: vec![16, 8] },
        }
    }

    fn batch(n: usize) -> Array4<f64> {
        Array4::from_shape_fn((n, 3, 8, 8), |(i, c, y, x)| ((i * 31 + c * 7 + y * 3 + x) as f64 * 0.13).sin())
    }

    #[test]
    fn heads_have_identical_shapes() {
        let net = DualHeadClassifier::new(spec(), 1).unwrap();
        let (h, ap) = net.forward(&batch(5)).unwrap();
        assert_eq!(h.dim(), (5, 4));
        assert_eq!(h.dim(), ap.dim());
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = DualHeadClassifier::new(spec(), 1).unwrap();
        assert!(net.forward(&Array4::zeros((2, 3, 4, 4))).is_err());
    }

    #[test]
    fn aux_perturbation_leaves_primary_logits() {
        let net = DualHeadClassifier::new(spec(), 1).unwrap();
        let mut other = net.clone();
        other.aux_head.weight.mapv_inplace(|w| w + 0.5);
        let x = batch(3);
        assert_eq!(net.forward(&x).unwrap().0, other.forward(&x).unwrap().0);
        assert_ne!(net.forward(&x).unwrap().1, other.forward(&x).unwrap().1);
    }

    #[test]
    fn duplicated_rows_give_identical_logits() {
        let net = DualHeadClassifier::new(spec(), 2).unwrap();
        let one = batch(1);
        let x = ndarray::concatenate(Axis(0), &[one.view(), one.view()]).unwrap();
        let (h, ap) = net.forward(&x).unwrap();
        assert_eq!(h.row(0), h.row(1));
        assert_eq!(ap.row(0), ap.row(1));
    }

    #[test]
    fn different_seeds_differ() {
        let a = DualHeadClassifier::new(spec(), 1).unwrap();
        let b = DualHeadClassifier::new(spec(), 2).unwrap();
        assert_ne!(a.flat_params(), b.flat_params());
        assert_eq!(a.num_params(), b.num_params());
    }

    #[test]
    fn head_gradient_never_reaches_aux_head() {
        let net = DualHeadClassifier::new(spec(), 3).unwrap();
        let pass = net.forward_train(&batch(4)).unwrap();
        let mut g = net.zero_grads();
        net.backward(&pass, Some(&Array2::ones((4, 4))), None, &mut g);
        assert!(g.aux_head.weight.iter().all(|&v| v == 0.0));
        assert!(g.head.weight.iter().any(|&v| v != 0.0));
        let mut g = net.zero_grads();
        net.backward(&pass, None, Some(&Array2::ones((4, 4))), &mut g);
        assert!(g.head.weight.iter().all(|&v| v == 0.0));
        assert!(g.backbone.param_slices().iter().any(|s| s.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn cnn_builds_and_runs() {
        let s = ModelSpec {
            input: (3, 8, 8),
            num_classes: 3,
            backbone: BackboneSpec::Cnn { channels: vec![4, 6], feature_dim: 10 },
        };
        let net = DualHeadClassifier::new(s, 0).unwrap();
        assert_eq!(net.forward(&batch(2)).unwrap().0.dim(), (2, 3));
        assert!(BackboneSpec::small_cnn() != BackboneSpec::desk_mlp());
    }
}
