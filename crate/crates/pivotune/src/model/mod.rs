//! Compact time-conditional 1D U-Net with self- and cross-attention, plus
//! the toy text encoder that produces its condition sequence.

pub mod attention;
pub mod registry;
pub mod text;

pub use attention::{attention, AttentionLayer};
pub use registry::{AttnKind, AttnRole, AttnTag, ParamEntry, Registry};
pub use text::{TextCondition, TextEncoder, Vocab};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};
use crate::rng;

const LN_EPS: f64 = 1e-5;

/// Per-row layer normalization with affine parameters.
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        LayerNorm {
            gamma: Tensor::ones(&[width]),
            beta: Tensor::zeros(&[width]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layernorm_rows(&self.gamma, &self.beta, LN_EPS)
    }

    pub fn register(&self, registry: &mut Registry, prefix: &str) {
        registry.register(&format!("{prefix}.gamma"), &self.gamma);
        registry.register(&format!("{prefix}.beta"), &self.beta);
    }
}

pub struct Linear {
    pub weight: Tensor, // in x out
    pub bias: Tensor,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Linear {
            weight: Tensor::rand_uniform(&[d_in, d_out], bound, rng),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_row_broadcast(&self.bias)
    }

    pub fn register(&self, registry: &mut Registry, prefix: &str) {
        registry.register(&format!("{prefix}.weight"), &self.weight);
        registry.register(&format!("{prefix}.bias"), &self.bias);
    }
}

pub struct Conv1d {
    pub weight: Tensor, // c_out x c_in x 3
    pub bias: Tensor,
}

impl Conv1d {
    pub fn new(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((c_in * 3) as f64).sqrt();
        Conv1d {
            weight: Tensor::rand_uniform(&[c_out, c_in, 3], bound, rng),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv1d_k3(&self.weight, &self.bias)
    }

    pub fn register(&self, registry: &mut Registry, prefix: &str) {
        registry.register(&format!("{prefix}.weight"), &self.weight);
        registry.register(&format!("{prefix}.bias"), &self.bias);
    }
}

/// Residual conv block with a per-channel time injection.
pub struct ResBlock {
    pub norm: LayerNorm,
    pub conv1: Conv1d,
    pub time_proj: Linear,
    pub conv2: Conv1d,
}

impl ResBlock {
    pub fn new(width: usize, time_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            norm: LayerNorm::new(width),
            conv1: Conv1d::new(width, width, rng),
            time_proj: Linear::new(time_dim, width, rng),
            conv2: Conv1d::new(width, width, rng),
        }
    }

    pub fn forward(&self, x: &Tensor, t_emb: &Tensor) -> Result<Tensor> {
        let mut h = self.conv1.forward(&self.norm.forward(x)?.silu())?;
        let width = h.shape()[1];
        let time_bias = self.time_proj.forward(t_emb)?.reshape(&[width])?;
        h = h.add_row_broadcast(&time_bias)?;
        h = self.conv2.forward(&h.silu())?;
        x.add(&h)
    }

    pub fn register(&self, registry: &mut Registry, prefix: &str) {
        self.norm.register(registry, &format!("{prefix}.norm"));
        self.conv1.register(registry, &format!("{prefix}.conv1"));
        self.time_proj.register(registry, &format!("{prefix}.time"));
        self.conv2.register(registry, &format!("{prefix}.conv2"));
    }
}

struct DownStage {
    res: ResBlock,
    self_attn: AttentionLayer,
    cross_attn: AttentionLayer,
    downsample: Option<Conv1d>,
}

struct UpStage {
    upconv: Conv1d,
    res: ResBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub latent_len: usize,
    pub latent_channels: usize,
    /// Channel width per resolution; the downsampling factor is
    /// `2^(widths.len()-1)`.
    pub widths: Vec<usize>,
    pub d_text: usize,
    pub time_dim: usize,
    pub max_text_len: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            latent_len: 256,
            latent_channels: 8,
            widths: vec![32, 64, 128],
            d_text: 64,
            time_dim: 64,
            max_text_len: 24,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Config("unet: widths must be non-empty".to_string()));
        }
        let factor = 1usize << (self.widths.len() - 1);
        if self.latent_len % factor != 0 {
            return Err(Error::Config(format!(
                "unet: latent_len {} not divisible by downsampling factor {factor}",
                self.latent_len
            )));
        }
        if self.latent_channels == 0 || self.d_text == 0 || self.time_dim == 0 {
            return Err(Error::Config("unet: zero dimension".to_string()));
        }
        Ok(())
    }
}

/// ε-prediction network. One self-attention and one cross-attention block
/// per resolution on the down path; the up path mirrors with additive skips.
pub struct UNet {
    pub config: UNetConfig,
    pub text: TextEncoder,
    time_lin1: Linear,
    time_lin2: Linear,
    stem: Conv1d,
    down: Vec<DownStage>,
    up: Vec<UpStage>,
    head_norm: LayerNorm,
    head_conv: Conv1d,
    registry: Registry,
}

impl UNet {
    pub fn new(config: UNetConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "model-init", 0);
        let text = TextEncoder::new(vocab, config.d_text, config.max_text_len, &mut rng);
        let time_lin1 = Linear::new(config.time_dim, config.time_dim, &mut rng);
        let time_lin2 = Linear::new(config.time_dim, config.time_dim, &mut rng);
        let stem = Conv1d::new(config.latent_channels, config.widths[0], &mut rng);

        let stages = config.widths.len();
        let mut attn_index = 0;
        let mut down = Vec::with_capacity(stages);
        for (i, &width) in config.widths.iter().enumerate() {
            let self_attn = AttentionLayer::new(attn_index, AttnKind::SelfAttn, width, width, &mut rng);
            attn_index += 1;
            let cross_attn =
                AttentionLayer::new(attn_index, AttnKind::CrossAttn, width, config.d_text, &mut rng);
            attn_index += 1;
            let downsample = (i + 1 < stages)
                .then(|| Conv1d::new(width, config.widths[i + 1], &mut rng));
            down.push(DownStage {
                res: ResBlock::new(width, config.time_dim, &mut rng),
                self_attn,
                cross_attn,
                downsample,
            });
        }
        let mut up = Vec::with_capacity(stages.saturating_sub(1));
        for i in (0..stages - 1).rev() {
            up.push(UpStage {
                upconv: Conv1d::new(config.widths[i + 1], config.widths[i], &mut rng),
                res: ResBlock::new(config.widths[i], config.time_dim, &mut rng),
            });
        }
        let head_norm = LayerNorm::new(config.widths[0]);
        let head_conv = Conv1d::new(config.widths[0], config.latent_channels, &mut rng);

        let mut model = UNet {
            config,
            text,
            time_lin1,
            time_lin2,
            stem,
            down,
            up,
            head_norm,
            head_conv,
            registry: Registry::new(),
        };
        model.build_registry();
        Ok(model)
    }

    fn build_registry(&mut self) {
        let mut registry = Registry::new();
        self.text.register(&mut registry);
        self.time_lin1.register(&mut registry, "unet.time.lin1");
        self.time_lin2.register(&mut registry, "unet.time.lin2");
        self.stem.register(&mut registry, "unet.stem");
        for (i, stage) in self.down.iter().enumerate() {
            stage.res.register(&mut registry, &format!("unet.down{i}.res"));
            stage
                .self_attn
                .register(&mut registry, &format!("unet.down{i}.self_attn"));
            stage
                .cross_attn
                .register(&mut registry, &format!("unet.down{i}.cross_attn"));
            if let Some(conv) = &stage.downsample {
                conv.register(&mut registry, &format!("unet.down{i}.downsample"));
            }
        }
        for (slot, stage) in self.up.iter().enumerate() {
            stage.upconv.register(&mut registry, &format!("unet.up{slot}.upconv"));
            stage.res.register(&mut registry, &format!("unet.up{slot}.res"));
        }
        self.head_norm.register(&mut registry, "unet.head.norm");
        self.head_conv.register(&mut registry, "unet.head.conv");
        self.registry = registry;
    }

    /// Stable, deterministic enumeration of every trainable parameter.
    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Registry paths of every self-attention value projection in the U-Net,
    /// in layer order. These are the pivotal-selection targets.
    pub fn self_attn_value_paths(&self) -> Vec<String> {
        self.registry
            .attn_params(AttnKind::SelfAttn, AttnRole::Value)
            .iter()
            .map(|e| e.path.clone())
            .collect()
    }

    /// Install or clear multiplicative masks over self-attention value
    /// projections, keyed by registry path.
    pub fn set_value_overlay(&self, path: &str, overlay: Option<Tensor>) -> Result<()> {
        for (i, stage) in self.down.iter().enumerate() {
            if path == format!("unet.down{i}.self_attn.w_v") {
                stage.self_attn.set_v_overlay(overlay);
                return Ok(());
            }
        }
        Err(Error::Usage(format!(
            "`{path}` is not a self-attention value projection"
        )))
    }

    pub fn clear_value_overlays(&self) {
        for stage in &self.down {
            stage.self_attn.set_v_overlay(None);
        }
    }

    fn sinusoidal_time(&self, t: usize) -> Tensor {
        let d = self.config.time_dim;
        let mut data = vec![0.0; d];
        let half = d / 2;
        for i in 0..half {
            let freq = 10_000f64.powf(-(i as f64) / half as f64);
            data[2 * i] = ((t as f64) * freq).sin();
            data[2 * i + 1] = ((t as f64) * freq).cos();
        }
        Tensor::from_vec(&[1, d], data).expect("time embedding shape")
    }

    fn time_embedding(&self, t: usize) -> Result<Tensor> {
        let base = self.sinusoidal_time(t);
        self.time_lin2.forward(&self.time_lin1.forward(&base)?.silu())
    }

    /// Predicted ε for a latent `x_t` at timestep `t` under a post-encoder
    /// condition. Output shape equals the input latent shape.
    pub fn forward(&self, x_t: &Tensor, t: usize, condition: &Tensor) -> Result<Tensor> {
        let shape = x_t.shape();
        if shape != [self.config.latent_len, self.config.latent_channels] {
            return Err(Error::Dim(format!(
                "unet: latent {:?} vs configured {:?}",
                shape,
                [self.config.latent_len, self.config.latent_channels]
            )));
        }
        if condition.shape().len() != 2 || condition.shape()[1] != self.config.d_text {
            return Err(Error::Dim(format!(
                "unet: condition {:?} vs d_text {}",
                condition.shape(),
                self.config.d_text
            )));
        }
        let t_emb = self.time_embedding(t)?;
        let mut h = self.stem.forward(x_t)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for stage in &self.down {
            h = stage.res.forward(&h, &t_emb)?;
            h = stage.self_attn.forward(&h, None)?;
            h = stage.cross_attn.forward(&h, Some(condition))?;
            skips.push(h.clone());
            if let Some(conv) = &stage.downsample {
                h = conv.forward(&h.avgpool2_rows()?)?;
            }
        }
        for (slot, stage) in self.up.iter().enumerate() {
            let skip = &skips[self.down.len() - 2 - slot];
            h = stage.upconv.forward(&h.upsample2_rows()?)?;
            h = h.add(skip)?;
            h = stage.res.forward(&h, &t_emb)?;
        }
        self.head_conv.forward(&self.head_norm.forward(&h)?.silu())
    }
}

impl NoisePredictor for UNet {
    fn predict(&self, x_t: &Tensor, t: usize, condition: Option<&Tensor>) -> Result<Tensor> {
        match condition {
            Some(cond) => self.forward(x_t, t, cond),
            None => {
                let null = self.text.encode_tokens(&[])?;
                self.forward(x_t, t, &null.embeddings)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::finite_diff_check;
    use crate::diffusion;

    pub(crate) fn tiny_config() -> UNetConfig {
        UNetConfig {
            latent_len: 8,
            latent_channels: 2,
            widths: vec![4, 6],
            d_text: 6,
            time_dim: 8,
            max_text_len: 8,
        }
    }

    fn tiny_model(seed: u64) -> UNet {
        let vocab = Vocab::new(&["bright", "mellow", "tones"]);
        UNet::new(tiny_config(), vocab, seed).unwrap()
    }

    #[test]
    fn forward_shape_and_reproducibility() {
        let model = tiny_model(1);
        let mut rng = rng::stream(2, "unet-test", 0);
        let x = Tensor::randn(&[8, 2], 1.0, &mut rng);
        let cond = model.text.encode_text("bright tones").unwrap();
        let a = model.forward(&x, 3, &cond.embeddings).unwrap();
        assert_eq!(a.shape(), vec![8, 2]);
        let b = model.forward(&x, 3, &cond.embeddings).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
        assert!(a.all_finite());
    }

    #[test]
    fn different_timesteps_differ() {
        let model = tiny_model(1);
        let mut rng = rng::stream(3, "unet-test", 1);
        let x = Tensor::randn(&[8, 2], 1.0, &mut rng);
        let cond = model.text.encode_text("mellow").unwrap();
        let a = model.forward(&x, 0, &cond.embeddings).unwrap();
        let b = model.forward(&x, 7, &cond.embeddings).unwrap();
        assert_ne!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn wrong_latent_shape_rejected() {
        let model = tiny_model(1);
        let x = Tensor::zeros(&[8, 3]);
        let cond = model.text.encode_text("").unwrap();
        assert!(matches!(
            model.forward(&x, 0, &cond.embeddings),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn registry_names_unique_and_stable() {
        let a = tiny_model(5);
        let b = tiny_model(5);
        let paths_a: Vec<&str> = a.registry().paths().collect();
        let paths_b: Vec<&str> = b.registry().paths().collect();
        assert_eq!(paths_a, paths_b);
        let mut sorted = paths_a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), paths_a.len(), "duplicate registry paths");
    }

    #[test]
    fn one_value_matrix_per_self_attention_layer() {
        let model = tiny_model(5);
        let values = model.registry().attn_params(AttnKind::SelfAttn, AttnRole::Value);
        assert_eq!(values.len(), model.config.widths.len());
        let mut layer_indices: Vec<usize> =
            values.iter().map(|e| e.attn.unwrap().layer_index).collect();
        layer_indices.dedup();
        assert_eq!(layer_indices.len(), values.len());
        // text-encoder attention never shows up in the U-Net filter
        assert!(values.iter().all(|e| e.path.starts_with("unet.")));
    }

    #[test]
    fn every_self_attn_value_gets_gradient() {
        let model = tiny_model(7);
        model.registry().set_all_requires_grad(true);
        let mut rng = rng::stream(8, "unet-grad", 0);
        let x = Tensor::randn(&[8, 2], 1.0, &mut rng);
        let cond = model.text.encode_text("bright mellow").unwrap();
        let out = model.forward(&x, 2, &cond.embeddings).unwrap();
        out.sum().backward().unwrap();
        for entry in model.registry().attn_params(AttnKind::SelfAttn, AttnRole::Value) {
            let grad = entry.tensor.grad().expect("value grad missing");
            assert!(grad.iter().any(|g| g.abs() > 0.0), "zero grad for {}", entry.path);
        }
    }

    #[test]
    fn end_to_end_loss_gradcheck_on_subsample() {
        let model = tiny_model(9);
        model.registry().set_all_requires_grad(true);
        let schedule = diffusion::build_schedule(10, 1e-3, 0.1).unwrap();
        let mut rng = rng::stream(10, "unet-fd", 0);
        let x0 = Tensor::randn(&[8, 2], 0.5, &mut rng);
        let eps = Tensor::randn(&[8, 2], 1.0, &mut rng);
        // pin (t, eps) so the loss is a deterministic function of the weights;
        // the text encoding runs inside the closure so encoder parameters are
        // probe-able too
        let f = {
            let model = &model;
            let (x0, eps, schedule) = (&x0, &eps, &schedule);
            move || {
                let cond = model.text.encode_text("tones")?;
                let x_t = diffusion::q_sample(x0, 4, eps, schedule)?;
                model.forward(&x_t, 4, &cond.embeddings)?.mse(eps)
            }
        };
        // probe a handful of parameters spread across the registry
        let probe: Vec<Tensor> = model
            .registry()
            .entries()
            .iter()
            .step_by(11)
            .take(4)
            .map(|e| e.tensor.clone())
            .collect();
        let err = finite_diff_check(&f, &probe, 1e-5).unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }
}
