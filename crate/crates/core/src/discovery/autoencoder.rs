use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::layers::{init_seed, Conv3d, ConvBlock, Linear, MaxPool2, UpConv2};
use crate::network::tensor::join;
use crate::network::{Adam, Param, Parameters, Tensor};
use crate::rng;
use crate::types::{LatentVector, Shape3, Volume};

/// Convolutional auto-encoder used to embed whole patient volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    /// Volumes are resampled to this shape before encoding.
    pub input_shape: Shape3,
    /// Channel width of each downsampling stage.
    pub channels: Vec<usize>,
    pub latent_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            input_shape: Shape3::new(64, 64, 32),
            channels: vec![8, 16, 32, 64],
            latent_width: 256,
            epochs: 40,
            batch_size: 2,
            learning_rate: 5e-3,
        }
    }
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config("autoencoder.channels", "need at least one stage of positive width"));
        }
        let div = 1usize << self.channels.len();
        for (a, name) in ["depth", "height", "width"].iter().enumerate() {
            if self.input_shape.0[a] == 0 || self.input_shape.0[a] % div != 0 {
                return Err(Error::config(
                    "autoencoder.input_shape",
                    format!("{name} {} is not divisible by {div}", self.input_shape.0[a]),
                ));
            }
        }
        if self.latent_width == 0 {
            return Err(Error::config("autoencoder.latent_width", "must be ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("autoencoder.batch_size", "must be ≥ 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::config("autoencoder.learning_rate", "must be > 0"));
        }
        Ok(())
    }

    fn bottleneck(&self) -> [usize; 4] {
        let s = self.input_shape.halved(self.channels.len());
        [*self.channels.last().unwrap(), s.0[0], s.0[1], s.0[2]]
    }
}

#[derive(Debug, Clone)]
pub struct AutoEncoder {
    pub config: AeConfig,
    down: Vec<(ConvBlock<f32>, MaxPool2)>,
    to_latent: Linear<f32>,
    from_latent: Linear<f32>,
    up: Vec<(UpConv2<f32>, ConvBlock<f32>)>,
    out: Conv3d<f32>,
}

impl AutoEncoder {
    pub fn new(config: AeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ch = &config.channels;
        let mut down = Vec::new();
        let mut cin = 1;
        for (i, &c) in ch.iter().enumerate() {
            down.push((ConvBlock::new(cin, c, seed, &format!("ae.down.{i}")), MaxPool2::default()));
            cin = c;
        }
        let flat: usize = config.bottleneck().iter().product();
        let to_latent = Linear::new(flat, config.latent_width, 1.0, init_seed(seed, "ae.to_latent"));
        let from_latent = Linear::new(config.latent_width, flat, 1.0, init_seed(seed, "ae.from_latent"));
        let mut up = Vec::new();
        for i in (0..ch.len()).rev() {
            let cout = if i == 0 { ch[0] } else { ch[i - 1] };
            let upc = UpConv2::new(ch[i], cout, init_seed(seed, &format!("ae.up.{i}")));
            up.push((upc, ConvBlock::new(cout, cout, seed, &format!("ae.up.{i}.block"))));
        }
        let out = Conv3d::new(ch[0], 1, 1, 1.0, init_seed(seed, "ae.out"));
        Ok(AutoEncoder { config, down, to_latent, from_latent, up, out })
    }

    fn encode(&mut self, x: &Tensor<f32>, train: bool) -> Tensor<f32> {
        let mut h = x.clone();
        for (block, pool) in &mut self.down {
            h = block.forward(&h, train);
            h = pool.forward(&h, train);
        }
        let n = h.batch();
        let flat = Tensor::from_vec(&[n, h.sample_len()], h.data);
        self.to_latent.forward(&flat, train)
    }

    fn decode(&mut self, z: &Tensor<f32>, train: bool) -> Tensor<f32> {
        let n = z.batch();
        let h = self.from_latent.forward(z, train);
        let [c, d, hh, w] = self.config.bottleneck();
        let mut h = Tensor::from_vec(&[n, c, d, hh, w], h.data);
        for (upc, block) in &mut self.up {
            h = upc.forward(&h, train);
            h = block.forward(&h, train);
        }
        let mut y = self.out.forward(&h, train);
        // linear output while training, clamped to the intensity range otherwise
        if !train {
            y.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor<f32>, train: bool) -> Tensor<f32> {
        let z = self.encode(x, train);
        self.decode(&z, train)
    }

    /// Backpropagates the gradient with respect to the reconstruction.
    fn backward(&mut self, d_recon: &Tensor<f32>) {
        let mut g = self.out.backward(d_recon, true).expect("inner gradient");
        for (upc, block) in self.up.iter_mut().rev() {
            g = block.backward(&g, true).expect("inner gradient");
            g = upc.backward(&g);
        }
        let n = g.batch();
        let g = Tensor::from_vec(&[n, g.sample_len()], g.data);
        let g = self.from_latent.backward(&g);
        let g = self.to_latent.backward(&g);
        let [c, d, h, w] = self.config.bottleneck();
        let mut g = Tensor::from_vec(&[n, c, d, h, w], g.data);
        for (i, (block, pool)) in self.down.iter_mut().enumerate().rev() {
            g = pool.backward(&g);
            if let Some(dx) = block.backward(&g, i > 0) {
                g = dx;
            }
        }
    }

    fn prepare(&self, v: &Volume) -> Vec<f32> {
        super::resize_volume(v, self.config.input_shape).into_voxels()
    }

    fn batch(&self, vols: &[&Vec<f32>]) -> Tensor<f32> {
        let s = self.config.input_shape.0;
        let data = vols.iter().flat_map(|v| v.iter().copied()).collect();
        Tensor::from_vec(&[vols.len(), 1, s[0], s[1], s[2]], data)
    }

    /// Mean squared reconstruction error per voxel over the given volumes.
    pub fn reconstruction_error(&mut self, volumes: &[Volume]) -> f64 {
        let prepared: Vec<Vec<f32>> = volumes.iter().map(|v| self.prepare(v)).collect();
        self.mse(&prepared)
    }

    fn mse(&mut self, prepared: &[Vec<f32>]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in prepared.chunks(self.config.batch_size) {
            let refs: Vec<&Vec<f32>> = chunk.iter().collect();
            let x = self.batch(&refs);
            let y = self.forward(&x, false);
            total += x.data.iter().zip(&y.data).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum::<f64>();
            count += x.data.len();
        }
        total / count as f64
    }

    /// Reconstruction of one volume at the input shape.
    pub fn reconstruct(&mut self, v: &Volume) -> Volume {
        let x = self.batch(&[&self.prepare(v)]);
        let y = self.forward(&x, false);
        Volume::from_parts_unchecked(self.config.input_shape, y.data)
    }

    /// Latent vector of one patient volume, resampled to the input shape.
    pub fn embed(&mut self, patient_id: &str, v: &Volume) -> Result<LatentVector> {
        let x = self.batch(&[&self.prepare(v)]);
        let z = self.encode(&x, false);
        if z.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("non-finite latent for {patient_id}")));
        }
        Ok(LatentVector { patient_id: patient_id.to_string(), values: z.data })
    }

    /// Embeds a volume already at the input shape; other shapes are rejected.
    pub fn embed_exact(&mut self, patient_id: &str, v: &Volume) -> Result<LatentVector> {
        if v.shape() != self.config.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "auto-encoder expects {}, got {}",
                self.config.input_shape,
                v.shape()
            )));
        }
        self.embed(patient_id, v)
    }
}

impl Parameters<f32> for AutoEncoder {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<f32>)>) {
        for (i, (c, _)) in self.down.iter().enumerate() {
            c.params(&join(prefix, &format!("down.{i}")), out);
        }
        self.to_latent.params(&join(prefix, "to_latent"), out);
        self.from_latent.params(&join(prefix, "from_latent"), out);
        for (i, (u, c)) in self.up.iter().enumerate() {
            u.params(&join(prefix, &format!("up.{i}")), out);
            c.params(&join(prefix, &format!("up.{i}.block")), out);
        }
        self.out.params(&join(prefix, "out"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<f32>)>) {
        for (i, (c, _)) in self.down.iter_mut().enumerate() {
            c.params_mut(&join(prefix, &format!("down.{i}")), out);
        }
        self.to_latent.params_mut(&join(prefix, "to_latent"), out);
        self.from_latent.params_mut(&join(prefix, "from_latent"), out);
        for (i, (u, c)) in self.up.iter_mut().enumerate() {
            u.params_mut(&join(prefix, &format!("up.{i}")), out);
            c.params_mut(&join(prefix, &format!("up.{i}.block")), out);
        }
        self.out.params_mut(&join(prefix, "out"), out);
    }
}

/// Per-epoch mean squared error, starting with the value at initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeHistory {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl AeHistory {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&self.initial_loss)
    }
}

/// Trains an auto-encoder to reproduce each volume, minimizing the mean
/// squared error per voxel.
pub fn train_autoencoder(volumes: &[Volume], config: &AeConfig, seed: u64) -> Result<(AutoEncoder, AeHistory)> {
    if volumes.is_empty() {
        return Err(Error::Invalid("cannot train the auto-encoder on an empty corpus".into()));
    }
    let mut ae = AutoEncoder::new(config.clone(), rng::substream(seed, rng::INIT))?;
    let prepared: Vec<Vec<f32>> = volumes.iter().map(|v| ae.prepare(v)).collect();
    let initial_loss = ae.mse(&prepared);
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::rng(rng::derive(rng::substream(seed, rng::SHUFFLING), &[epoch as u64])));
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&Vec<f32>> = chunk.iter().map(|&i| &prepared[i]).collect();
            let x = ae.batch(&refs);
            ae.zero_grads();
            let y = ae.forward(&x, true);
            let scale = 2.0 / x.data.len() as f32;
            let d = Tensor::from_vec(&y.shape, y.data.iter().zip(&x.data).map(|(&a, &b)| scale * (a - b)).collect());
            ae.backward(&d);
            adam.step(ae.named_params_mut());
        }
        let loss = ae.mse(&prepared);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        epoch_losses.push(loss);
    }
    Ok((ae, AeHistory { initial_loss, epoch_losses }))
}
