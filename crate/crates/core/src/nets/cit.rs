use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gray_batch, tag_batch, NetworkConfig, CIT_PREFIX};
use crate::blocks::{squeeze, Excite};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::lineart::{extract, XdogParams};
use crate::losses::bce_sum;
use crate::nn::{global_avg_pool, scalar, sigmoid, Conv2d, ConvSpec, Linear, ParamPath, ParamStore};
use crate::synthdata::{Dataset, SampleRecord};

/// conv3×3 → ReLU → conv3×3 → channel excitation → residual sum → ReLU.
#[derive(Debug, Clone)]
struct SeResidual {
    conv1: Conv2d,
    conv2: Conv2d,
    se: Excite,
}

impl SeResidual {
    fn new(p: &ParamPath, c: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(&p.pp("conv1"), c, c, ConvSpec::SAME3)?,
            conv2: Conv2d::new(&p.pp("conv2"), c, c, ConvSpec::SAME3)?,
            se: Excite::new(&p.pp("se"), c, 0)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = x.dims4()?;
        let r = self.conv1.forward(x)?.relu()?;
        let r = self.conv2.forward(&r)?;
        let s = self.se.forward(&squeeze(&r)?, None)?;
        let r = r.broadcast_mul(&s.reshape((b, c, 1, 1))?)?;
        Ok((x + r)?.relu()?)
    }
}

#[derive(Debug, Clone)]
struct Stage {
    down: Conv2d,
    res: SeResidual,
}

impl Stage {
    fn new(p: &ParamPath, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            down: Conv2d::new(&p.pp("down"), cin, cout, ConvSpec::DOWN3)?,
            res: SeResidual::new(&p.pp("res"), cout)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.res.forward(&self.down.forward(x)?.relu()?)
    }
}

/// Output of the frozen extractor; `pretrained` is false when the weights
/// are still at initialization.
#[derive(Debug, Clone)]
pub struct CitFeatures {
    pub features: Tensor,
    pub pretrained: bool,
}

/// Four-stage SE-residual classifier over line arts. The first three stages
/// (down to 1/8 resolution) form the trunk whose activations feed the
/// generator; the fourth stage and the linear head exist for pretraining.
#[derive(Debug, Clone)]
pub struct CitExtractor {
    image_size: usize,
    stem: Conv2d,
    trunk: Vec<Stage>,
    tail: Stage,
    head: Linear,
    pretrained: Arc<AtomicBool>,
}

impl CitExtractor {
    pub fn new(p: &ParamPath, cfg: &NetworkConfig) -> Result<Self> {
        let b = cfg.base_channels;
        let widths = [b, b, 2 * b, cfg.cit_channels()];
        let trunk = (0..3)
            .map(|i| Stage::new(&p.pp(format!("stage{}", i + 1)), widths[i], widths[i + 1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            image_size: cfg.image_size,
            stem: Conv2d::new(&p.pp("stem"), 1, b, ConvSpec::SAME3)?,
            trunk,
            tail: Stage::new(&p.pp("stage4"), cfg.cit_channels(), cfg.cit_channels())?,
            head: Linear::new(&p.pp("head"), cfg.cit_channels(), cfg.cit_count)?,
            pretrained: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained.load(Ordering::SeqCst)
    }

    pub fn set_pretrained(&self, v: bool) {
        self.pretrained.store(v, Ordering::SeqCst)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 || h != self.image_size || w != self.image_size {
            return Err(Error::shape(format!(
                "CIT extractor expects (B, 1, {s}, {s}), got {:?}",
                x.dims(),
                s = self.image_size
            )));
        }
        Ok(())
    }

    /// `(B, 1, S, S)` line art → `(B, cit_channels, S/8, S/8)`, non-negative.
    pub fn trunk(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = self.stem.forward(x)?.relu()?;
        for stage in &self.trunk {
            h = stage.forward(&h)?;
        }
        Ok(h)
    }

    /// Trunk activations cut from the autograd graph.
    pub fn extract(&self, x: &Tensor) -> Result<CitFeatures> {
        Ok(CitFeatures {
            features: self.trunk(x)?.detach(),
            pretrained: self.is_pretrained(),
        })
    }

    /// Per-tag probabilities `(B, cit_count)`.
    pub fn classify(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.tail.forward(&self.trunk(x)?)?;
        sigmoid(&self.head.forward(&global_avg_pool(&h)?)?)
    }

    /// Color-sensitive embedding for Fréchet distances: the trunk applied to
    /// each RGB plane as if it were a line art, globally pooled, concatenated.
    /// `(B, 3, S, S)` → `(B, 3 · cit_channels)`.
    pub fn color_embedding(&self, rgb: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = rgb.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("expected RGB input, got {c} channels")));
        }
        let planes = rgb.reshape((b * 3, 1, h, w))?;
        let pooled = global_avg_pool(&self.trunk(&planes)?.detach())?;
        let d = pooled.dim(1)?;
        Ok(pooled.reshape((b, 3 * d))?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CitTagMetrics {
    pub tag: String,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CitPretrainReport {
    /// Mean loss over a fixed probe subset of the training split, before
    /// training and after each epoch.
    pub init_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub per_tag: Vec<CitTagMetrics>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CitPretrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for CitPretrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

const PROBE_SIZE: usize = 256;

fn probe_loss(cit: &CitExtractor, probe: &[&SampleRecord], dtype: DType, device: &Device) -> Result<f64> {
    let mut total = 0.0;
    for chunk in probe.chunks(64) {
        let arts: Vec<&GrayImage> = chunk.iter().map(|r| &r.line_art).collect();
        let tags: Vec<_> = chunk.iter().map(|r| &r.cit).collect();
        let x = gray_batch(&arts, dtype, device)?;
        let t = tag_batch(&tags, dtype, device)?;
        total += scalar(&bce_sum(&cit.classify(&x)?, &t)?)? * chunk.len() as f64;
    }
    Ok(total / probe.len() as f64)
}

/// Trains the extractor as a multi-label CIT classifier with per-tag binary
/// cross-entropy on per-epoch jittered line arts, then scores it on the test
/// split at threshold 0.5.
pub fn pretrain_cit(
    cit: &CitExtractor,
    store: &ParamStore,
    dataset: &Dataset,
    opts: &CitPretrainOptions,
) -> Result<CitPretrainReport> {
    let CitPretrainOptions {
        epochs,
        batch_size,
        lr,
        seed,
    } = *opts;
    let train = dataset.train();
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training records for CIT pretraining".into()));
    }
    let dtype = store.dtype();
    let device = store.device().clone();
    let vars: Vec<_> = store.vars_with_prefix(CIT_PREFIX).into_iter().map(|(_, v)| v).collect();
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = XdogParams::sprite_default(dataset.size());
    let probe: Vec<&SampleRecord> = train.iter().take(PROBE_SIZE).copied().collect();
    let init_loss = probe_loss(cit, &probe, dtype, &device)?;
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size.max(1)) {
            let arts = chunk
                .iter()
                .map(|&i| extract(&train[i].color_image, &base.jittered(&mut rng)))
                .collect::<Result<Vec<_>>>()?;
            let art_refs: Vec<&GrayImage> = arts.iter().collect();
            let tags: Vec<_> = chunk.iter().map(|&i| &train[i].cit).collect();
            let x = gray_batch(&art_refs, dtype, &device)?;
            let t = tag_batch(&tags, dtype, &device)?;
            let loss = bce_sum(&cit.classify(&x)?, &t)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iter: epoch as u64,
                    last_checkpoint: None,
                });
            }
            opt.backward_step(&loss)?;
        }
        let l = probe_loss(cit, &probe, dtype, &device)?;
        tracing::info!(epoch = epoch + 1, loss = l, "cit pretrain");
        epoch_losses.push(l);
    }
    cit.set_pretrained(true);

    let test = dataset.test();
    let names = dataset.vocab.cit_names();
    let mut counts = vec![[0usize; 4]; names.len()]; // tp, fp, fn, tn
    for chunk in test.chunks(64) {
        let arts: Vec<&GrayImage> = chunk.iter().map(|r| &r.line_art).collect();
        let probs: Vec<Vec<f32>> = cit.classify(&gray_batch(&arts, dtype, &device)?)?.to_dtype(DType::F32)?.to_vec2()?;
        for (rec, p) in chunk.iter().zip(probs) {
            for (j, c) in counts.iter_mut().enumerate() {
                let pred = p[j] >= 0.5;
                let truth = rec.cit.values[j] >= 0.5;
                c[match (pred, truth) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                }] += 1;
            }
        }
    }
    // A ratio with an empty denominator counts as perfect (nothing to get wrong).
    let ratio = |a: usize, b: usize| if a + b == 0 { 1.0 } else { a as f64 / (a + b) as f64 };
    let per_tag: Vec<CitTagMetrics> = names
        .iter()
        .zip(&counts)
        .map(|(name, c)| CitTagMetrics {
            tag: name.clone(),
            precision: ratio(c[0], c[1]),
            recall: ratio(c[0], c[2]),
            accuracy: ratio(c[0] + c[3], c[1] + c[2]),
        })
        .collect();
    let mean_accuracy = per_tag.iter().map(|m| m.accuracy).sum::<f64>() / per_tag.len().max(1) as f64;
    Ok(CitPretrainReport {
        init_loss,
        epoch_losses,
        per_tag,
        mean_accuracy,
    })
}
