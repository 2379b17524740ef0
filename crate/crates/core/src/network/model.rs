//! The dual-head network: a 3D U-Net style encoder-decoder with skip
//! connections, a sigmoid restoration output, and a classification head fed by
//! the globally pooled bottleneck. Also the sub-models used for transfer.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{
    concat_channels, global_avg_pool, global_avg_pool_backward, init_seed, split_channels, Conv3d, ConvBlock, Linear,
    MaxPool2, Relu,
};
use super::tensor::{join, Param, Parameters, Real, Tensor};
use crate::error::{Error, Result};
use crate::types::Shape3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_shape: Shape3,
    /// Number of downsampling stages.
    pub depth: usize,
    /// Channels of the first stage; doubles per stage.
    pub base_width: usize,
    pub num_classes: usize,
    /// Widths of the fully connected stack; the last equals `num_classes`.
    pub fc_widths: Vec<usize>,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(input_shape: Shape3, num_classes: usize) -> Self {
        ModelConfig { input_shape, depth: 4, base_width: 16, num_classes, fc_widths: vec![1024, num_classes], seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1usize << self.depth;
        const AXES: [&str; 3] = ["depth", "height", "width"];
        for (a, &len) in self.input_shape.0.iter().enumerate() {
            if len == 0 || len % div != 0 {
                return Err(Error::config(
                    format!("model.input_shape.{}", AXES[a]),
                    format!("axis {a} ({len}) is not divisible by 2^{} = {div}", self.depth),
                ));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::config("model.num_classes", "C must be ≥ 2"));
        }
        if self.base_width == 0 {
            return Err(Error::config("model.base_width", "must be ≥ 1"));
        }
        if self.fc_widths.last() != Some(&self.num_classes) || self.fc_widths.contains(&0) {
            return Err(Error::config("model.fc_widths", "must be non-zero and end with the class count"));
        }
        Ok(())
    }

    pub fn width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    pub fn bottleneck_shape(&self) -> Shape3 {
        self.input_shape.halved(self.depth)
    }

    /// SHA-256 over the architecture fields (the seed is excluded).
    pub fn config_hash(&self) -> String {
        let arch = serde_json::json!({
            "input_shape": self.input_shape,
            "depth": self.depth,
            "base_width": self.base_width,
            "num_classes": self.num_classes,
            "fc_widths": self.fc_widths,
        });
        hex(&Sha256::digest(arch.to_string().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct Encoder<T> {
    pub blocks: Vec<ConvBlock<T>>,
    pools: Vec<MaxPool2>,
}

impl<T: Real> Encoder<T> {
    fn new(cfg: &ModelConfig) -> Self {
        let blocks = (0..=cfg.depth)
            .map(|i| {
                let cin = if i == 0 { 1 } else { cfg.width(i - 1) };
                ConvBlock::new(cin, cfg.width(i), cfg.seed, &format!("encoder.{i}"))
            })
            .collect();
        Encoder { blocks, pools: vec![MaxPool2::default(); cfg.depth] }
    }

    /// Returns the skip features (finest first) and the bottleneck.
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> (Vec<Tensor<T>>, Tensor<T>) {
        let depth = self.pools.len();
        let mut skips = Vec::with_capacity(depth);
        let mut h = x.clone();
        for i in 0..depth {
            let f = self.blocks[i].forward(&h, train);
            h = self.pools[i].forward(&f, train);
            skips.push(f);
        }
        let bottleneck = self.blocks[depth].forward(&h, train);
        (skips, bottleneck)
    }

    pub fn backward(&mut self, d_bottleneck: &Tensor<T>, d_skips: Option<Vec<Tensor<T>>>) {
        let depth = self.pools.len();
        let mut g = self.blocks[depth].backward(d_bottleneck, depth > 0);
        let mut d_skips = d_skips.map(|v| v.into_iter().map(Some).collect::<Vec<_>>());
        for i in (0..depth).rev() {
            let mut h = self.pools[i].backward(&g.take().expect("gradient"));
            if let Some(ds) = d_skips.as_mut().and_then(|v| v[i].take()) {
                h.add_assign(&ds);
            }
            g = self.blocks[i].backward(&h, i > 0);
        }
    }
}

impl<T: Real> Parameters<T> for Encoder<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&join(prefix, &i.to_string()), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<T> {
    /// Index `i` upsamples stage `i + 1` to stage `i`.
    pub ups: Vec<super::layers::UpConv2<T>>,
    pub blocks: Vec<ConvBlock<T>>,
}

impl<T: Real> Decoder<T> {
    fn new(cfg: &ModelConfig) -> Self {
        let ups = (0..cfg.depth)
            .map(|i| {
                super::layers::UpConv2::new(
                    cfg.width(i + 1),
                    cfg.width(i),
                    init_seed(cfg.seed, &format!("decoder.up.{i}")),
                )
            })
            .collect();
        let blocks = (0..cfg.depth)
            .map(|i| ConvBlock::new(2 * cfg.width(i), cfg.width(i), cfg.seed, &format!("decoder.block.{i}")))
            .collect();
        Decoder { ups, blocks }
    }

    pub fn forward(&mut self, bottleneck: &Tensor<T>, skips: &[Tensor<T>], train: bool) -> Tensor<T> {
        let mut h = bottleneck.clone();
        for i in (0..self.blocks.len()).rev() {
            let u = self.ups[i].forward(&h, train);
            h = self.blocks[i].forward(&concat_channels(&u, &skips[i]), train);
        }
        h
    }

    /// Returns the bottleneck gradient and the skip gradients (finest first).
    pub fn backward(&mut self, dy: &Tensor<T>) -> (Tensor<T>, Vec<Tensor<T>>) {
        let depth = self.blocks.len();
        let mut d_skips = Vec::with_capacity(depth);
        let mut g = dy.clone();
        for i in 0..depth {
            let dcat = self.blocks[i].backward(&g, true).expect("gradient");
            let (du, ds) = split_channels(&dcat, self.ups[i].cout);
            d_skips.push(ds);
            g = self.ups[i].backward(&du);
        }
        (g, d_skips)
    }
}

impl<T: Real> Parameters<T> for Decoder<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        for (i, u) in self.ups.iter().enumerate() {
            u.params(&join(prefix, &format!("up.{i}")), out);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&join(prefix, &format!("block.{i}")), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        for (i, u) in self.ups.iter_mut().enumerate() {
            u.params_mut(&join(prefix, &format!("up.{i}")), out);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&join(prefix, &format!("block.{i}")), out);
        }
    }
}

/// 1×1×1 convolution to a single channel followed by a sigmoid.
#[derive(Debug, Clone)]
pub struct VoxelOutput<T> {
    pub conv: Conv3d<T>,
    output: Option<Tensor<T>>,
}

impl<T: Real> VoxelOutput<T> {
    fn new(cin: usize, seed: u64) -> Self {
        VoxelOutput { conv: Conv3d::new(cin, 1, 1, 1.0, seed), output: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let mut y = self.conv.forward(x, train);
        y.data.iter_mut().for_each(|v| *v = T::one() / (T::one() + (-*v).exp()));
        self.output = train.then(|| y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let y = self.output.take().expect("output backward without cached forward");
        let mut g = dy.clone();
        for (d, &s) in g.data.iter_mut().zip(&y.data) {
            *d = *d * s * (T::one() - s);
        }
        self.conv.backward(&g, true).expect("gradient")
    }
}

impl<T: Real> Parameters<T> for VoxelOutput<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.conv.params(prefix, out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        self.conv.params_mut(prefix, out);
    }
}

/// Global average pool followed by a ReLU-separated fully connected stack.
#[derive(Debug, Clone)]
pub struct ClassHead<T> {
    pub layers: Vec<Linear<T>>,
    relus: Vec<Relu>,
    input_shape: Option<Vec<usize>>,
}

impl<T: Real> ClassHead<T> {
    pub fn new(fan_in: usize, widths: &[usize], seed: u64, path: &str) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = fan_in;
        for (i, &w) in widths.iter().enumerate() {
            let gain = if i + 1 == widths.len() { 1.0 } else { 2.0 };
            layers.push(Linear::new(prev, w, gain, init_seed(seed, &format!("{path}.{i}"))));
            prev = w;
        }
        let relus = vec![Relu::default(); widths.len().saturating_sub(1)];
        ClassHead { layers, relus, input_shape: None }
    }

    pub fn forward(&mut self, bottleneck: &Tensor<T>, train: bool) -> Tensor<T> {
        let mut h = global_avg_pool(bottleneck);
        for i in 0..self.layers.len() {
            h = self.layers[i].forward(&h, train);
            if i < self.relus.len() {
                h = self.relus[i].forward(&h, train);
            }
        }
        self.input_shape = train.then(|| bottleneck.shape.clone());
        h
    }

    pub fn backward(&mut self, d_logits: &Tensor<T>) -> Tensor<T> {
        let shape = self.input_shape.take().expect("head backward without cached forward");
        let mut g = d_logits.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.relus.len() {
                g = self.relus[i].backward(&g);
            }
            g = self.layers[i].backward(&g);
        }
        global_avg_pool_backward(&g, &shape)
    }
}

impl<T: Real> Parameters<T> for ClassHead<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&join(prefix, &i.to_string()), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.params_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

/// How the decoder participates in a training forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderMode {
    /// Not evaluated.
    Skip,
    /// Evaluated without caching; receives no gradient.
    Eval,
    /// Evaluated and cached for backpropagation.
    Train,
}

#[derive(Debug, Clone)]
pub struct Outputs<T> {
    pub reconstruction: Option<Tensor<T>>,
    pub logits: Tensor<T>,
    pub bottleneck: Tensor<T>,
}

/// The pretraining network.
#[derive(Debug, Clone)]
pub struct SemanticGenesisNet<T> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    pub output: VoxelOutput<T>,
    pub head: ClassHead<T>,
    decoder_cached: bool,
}

impl<T: Real> SemanticGenesisNet<T> {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(SemanticGenesisNet {
            encoder: Encoder::new(config),
            decoder: Decoder::new(config),
            output: VoxelOutput::new(config.base_width, init_seed(config.seed, "output")),
            head: ClassHead::new(config.width(config.depth), &config.fc_widths, config.seed, "head"),
            config: config.clone(),
            decoder_cached: false,
        })
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.config.input_shape.0;
        if x.shape.len() != 5 || x.shape[1] != 1 || x.shape[2..] != s || x.shape[0] == 0 {
            return Err(Error::ShapeMismatch(format!(
                "expected batch of shape (N, 1, {}, {}, {}), got {:?}",
                s[0], s[1], s[2], x.shape
            )));
        }
        Ok(())
    }

    /// Inference: reconstruction, logits and bottleneck, nothing cached.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Outputs<T>> {
        self.check_input(x)?;
        let (skips, bottleneck) = self.encoder.forward(x, false);
        let feat = self.decoder.forward(&bottleneck, &skips, false);
        let recon = self.output.forward(&feat, false);
        let logits = self.head.forward(&bottleneck, false);
        Ok(Outputs { reconstruction: Some(recon), logits, bottleneck })
    }

    /// Training pass; caches activations for [`Self::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>, decoder: DecoderMode) -> Result<Outputs<T>> {
        self.check_input(x)?;
        let (skips, bottleneck) = self.encoder.forward(x, true);
        let logits = self.head.forward(&bottleneck, true);
        let reconstruction = match decoder {
            DecoderMode::Skip => None,
            DecoderMode::Eval | DecoderMode::Train => {
                let train = decoder == DecoderMode::Train;
                let feat = self.decoder.forward(&bottleneck, &skips, train);
                Some(self.output.forward(&feat, train))
            }
        };
        self.decoder_cached = decoder == DecoderMode::Train;
        Ok(Outputs { reconstruction, logits, bottleneck })
    }

    /// Backpropagates gradients of the loss with respect to the reconstruction
    /// (post-sigmoid) and the logits.
    pub fn backward(&mut self, d_recon: Option<&Tensor<T>>, d_logits: &Tensor<T>) {
        let mut d_bottleneck = self.head.backward(d_logits);
        let mut d_skips = None;
        if let Some(dr) = d_recon {
            assert!(self.decoder_cached, "reconstruction gradient without a cached decoder pass");
            let d_feat = self.output.backward(dr);
            let (db, ds) = self.decoder.backward(&d_feat);
            d_bottleneck.add_assign(&db);
            d_skips = Some(ds);
        }
        self.decoder_cached = false;
        self.encoder.backward(&d_bottleneck, d_skips);
    }

    /// Parameter names owned by the decoder and the voxel output layer.
    pub fn decoder_param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.decoder.params("decoder", &mut out);
        self.output.params("output", &mut out);
        out.into_iter().map(|(n, _)| n).collect()
    }

    pub fn split_for_target(self, task: TargetKind, seed: u64) -> Result<TargetModel<T>> {
        split_for_target(self, task, seed)
    }
}

impl<T: Real> Parameters<T> for SemanticGenesisNet<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.encoder.params(&join(prefix, "encoder"), out);
        self.decoder.params(&join(prefix, "decoder"), out);
        self.output.params(&join(prefix, "output"), out);
        self.head.params(&join(prefix, "head"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        self.encoder.params_mut(&join(prefix, "encoder"), out);
        self.decoder.params_mut(&join(prefix, "decoder"), out);
        self.output.params_mut(&join(prefix, "output"), out);
        self.head.params_mut(&join(prefix, "head"), out);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum TargetKind {
    /// Encoder plus a fresh head with the given widths (last = class count).
    Classification {
        head_widths: Vec<usize>,
    },
    Segmentation,
}

/// Encoder with a fresh classification head.
#[derive(Debug, Clone)]
pub struct ClassifierNet<T> {
    pub input_shape: Shape3,
    pub encoder: Encoder<T>,
    pub head: ClassHead<T>,
}

impl<T: Real> ClassifierNet<T> {
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let (_, bottleneck) = self.encoder.forward(x, train);
        self.head.forward(&bottleneck, train)
    }

    pub fn backward(&mut self, d_logits: &Tensor<T>) {
        let d = self.head.backward(d_logits);
        self.encoder.backward(&d, None);
    }
}

impl<T: Real> Parameters<T> for ClassifierNet<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.encoder.params(&join(prefix, "encoder"), out);
        self.head.params(&join(prefix, "head"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        self.encoder.params_mut(&join(prefix, "encoder"), out);
        self.head.params_mut(&join(prefix, "head"), out);
    }
}

/// Encoder and decoder with a fresh one-channel sigmoid output.
#[derive(Debug, Clone)]
pub struct SegmenterNet<T> {
    pub input_shape: Shape3,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    pub output: VoxelOutput<T>,
}

impl<T: Real> SegmenterNet<T> {
    /// Per-voxel foreground probabilities, shape `(N, 1, D, H, W)`.
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let (skips, bottleneck) = self.encoder.forward(x, train);
        let feat = self.decoder.forward(&bottleneck, &skips, train);
        self.output.forward(&feat, train)
    }

    pub fn backward(&mut self, d_prob: &Tensor<T>) {
        let d_feat = self.output.backward(d_prob);
        let (db, ds) = self.decoder.backward(&d_feat);
        self.encoder.backward(&db, Some(ds));
    }
}

impl<T: Real> Parameters<T> for SegmenterNet<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.encoder.params(&join(prefix, "encoder"), out);
        self.decoder.params(&join(prefix, "decoder"), out);
        self.output.params(&join(prefix, "output"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        self.encoder.params_mut(&join(prefix, "encoder"), out);
        self.decoder.params_mut(&join(prefix, "decoder"), out);
        self.output.params_mut(&join(prefix, "output"), out);
    }
}

#[derive(Debug, Clone)]
pub enum TargetModel<T> {
    Classifier(ClassifierNet<T>),
    Segmenter(SegmenterNet<T>),
}

/// Builds the transfer sub-model. Transferred parameters move over unchanged;
/// the new head or output layer is initialized from `seed`.
pub fn split_for_target<T: Real>(model: SemanticGenesisNet<T>, task: TargetKind, seed: u64) -> Result<TargetModel<T>> {
    let cfg = model.config;
    match task {
        TargetKind::Classification { head_widths } => {
            if head_widths.is_empty() || head_widths.contains(&0) {
                return Err(Error::config("head_widths", "need at least one non-zero width"));
            }
            Ok(TargetModel::Classifier(ClassifierNet {
                input_shape: cfg.input_shape,
                encoder: model.encoder,
                head: ClassHead::new(cfg.width(cfg.depth), &head_widths, seed, "target_head"),
            }))
        }
        TargetKind::Segmentation => Ok(TargetModel::Segmenter(SegmenterNet {
            input_shape: cfg.input_shape,
            encoder: model.encoder,
            decoder: model.decoder,
            output: VoxelOutput::new(cfg.base_width, init_seed(seed, "target_output")),
        })),
    }
}

/// SHA-256 over parameter names, shapes and little-endian `f64` values.
pub fn params_checksum<T: Real>(params: &[(String, &Param<T>)]) -> String {
    let mut h = Sha256::new();
    for (name, p) in params {
        h.update(name.as_bytes());
        for d in &p.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in &p.value {
            h.update(v.as_f64().to_le_bytes());
        }
    }
    hex(&h.finalize())
}

/// Checksum of the parameters whose names start with `prefix`.
pub fn checksum_with_prefix<T: Real, M: Parameters<T>>(model: &M, prefix: &str) -> String {
    let params: Vec<_> = model.named_params().into_iter().filter(|(n, _)| n.starts_with(prefix)).collect();
    params_checksum(&params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(shape: Shape3, c: usize) -> ModelConfig {
        ModelConfig { fc_widths: vec![32, c], ..ModelConfig::new(shape, c) }
    }

    #[test]
    fn output_shapes_follow_the_contract() {
        let cfg = ModelConfig { base_width: 4, ..cfg(Shape3::new(32, 32, 16), 6) };
        let mut m = SemanticGenesisNet::<f32>::build(&cfg).unwrap();
        let x = Tensor::from_vec(&[2, 1, 32, 32, 16], vec![0.5; 2 * 32 * 32 * 16]);
        let out = m.forward(&x).unwrap();
        assert_eq!(out.reconstruction.unwrap().shape, vec![2, 1, 32, 32, 16]);
        assert_eq!(out.logits.shape, vec![2, 6]);
        assert_eq!(out.bottleneck.shape, vec![2, 64, 2, 2, 1]);
        assert_eq!(cfg.bottleneck_shape(), Shape3::new(2, 2, 1));
    }

    #[test]
    fn indivisible_axis_is_named() {
        let err = SemanticGenesisNet::<f32>::build(&cfg(Shape3::new(32, 30, 16), 6)).unwrap_err().to_string();
        assert!(err.contains("height"), "{err}");
        assert!(SemanticGenesisNet::<f32>::build(&cfg(Shape3::new(32, 32, 16), 1)).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let c = ModelConfig { base_width: 2, depth: 2, ..cfg(Shape3::new(8, 8, 4), 3) };
        let a = SemanticGenesisNet::<f32>::build(&c).unwrap();
        let b = SemanticGenesisNet::<f32>::build(&c).unwrap();
        assert_eq!(params_checksum(&a.named_params()), params_checksum(&b.named_params()));
        let other = SemanticGenesisNet::<f32>::build(&ModelConfig { seed: 1, ..c }).unwrap();
        assert_ne!(params_checksum(&a.named_params()), params_checksum(&other.named_params()));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let c = ModelConfig { base_width: 2, depth: 2, ..cfg(Shape3::new(8, 8, 4), 3) };
        let mut m = SemanticGenesisNet::<f32>::build(&c).unwrap();
        assert!(m.forward(&Tensor::zeros(&[1, 1, 8, 8, 8])).is_err());
    }

    #[test]
    fn splits_keep_the_right_parts() {
        let c = ModelConfig { base_width: 2, depth: 2, ..cfg(Shape3::new(8, 8, 4), 3) };
        let m = SemanticGenesisNet::<f32>::build(&c).unwrap();
        let enc = checksum_with_prefix(&m, "encoder.");
        let dec = checksum_with_prefix(&m, "decoder.");
        let TargetModel::Segmenter(mut seg) = m.clone().split_for_target(TargetKind::Segmentation, 9).unwrap() else {
            panic!("expected segmenter")
        };
        assert_eq!(checksum_with_prefix(&seg, "encoder."), enc);
        assert_eq!(checksum_with_prefix(&seg, "decoder."), dec);
        let y = seg.forward(&Tensor::zeros(&[2, 1, 8, 8, 4]), false);
        assert_eq!(y.shape, vec![2, 1, 8, 8, 4]);

        let TargetModel::Classifier(cls) =
            m.split_for_target(TargetKind::Classification { head_widths: vec![5, 2] }, 9).unwrap()
        else {
            panic!("expected classifier")
        };
        assert_eq!(checksum_with_prefix(&cls, "encoder."), enc);
        assert!(cls.named_params().iter().all(|(n, _)| !n.starts_with("decoder") && !n.starts_with("output")));
        assert_eq!(cls.head.layers.last().unwrap().fan_out, 2);
    }
}
