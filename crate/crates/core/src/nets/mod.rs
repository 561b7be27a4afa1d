//! Generator, discriminator, tag encoders and the CIT feature extractor.
//!
//! All parameters live in one [`ParamStore`] under the prefixes `cit.`,
//! `gen.` and `disc.`, so one safetensors file holds a whole model.

mod cit;
mod cvt;
mod discriminator;
mod generator;

pub use cit::{pretrain_cit, CitExtractor, CitFeatures, CitPretrainOptions, CitPretrainReport, CitTagMetrics};
pub use cvt::CvtEncoder;
pub use discriminator::{Discriminator, DiscriminatorOutput};
pub use generator::{Generator, GeneratorOutput};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::blocks::BlockKind;
use crate::error::{Error, Result};
use crate::imaging::{ColorImage, GrayImage};
use crate::nn::ParamStore;
use crate::tagspace::{TagVector, TagVocabulary};

pub const CIT_PREFIX: &str = "cit.";
pub const GEN_PREFIX: &str = "gen.";
pub const DISC_PREFIX: &str = "disc.";
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub image_size: usize,
    pub base_channels: usize,
    pub block_kind: BlockKind,
    pub style_dim: usize,
    pub cardinality: usize,
    pub cvt_count: usize,
    pub cit_count: usize,
}

impl NetworkConfig {
    /// 64 px sprites, base width 16.
    pub fn toy(vocab: &TagVocabulary, block_kind: BlockKind) -> Self {
        Self {
            image_size: 64,
            base_channels: 16,
            block_kind,
            style_dim: 64,
            cardinality: 8,
            cvt_count: vocab.cvt_count(),
            cit_count: vocab.cit_count(),
        }
    }

    /// 16 px, base width 8; for gradient checks.
    pub fn miniature(vocab: &TagVocabulary, block_kind: BlockKind) -> Self {
        Self {
            image_size: 16,
            base_channels: 8,
            ..Self::toy(vocab, block_kind)
        }
    }

    pub fn fusion_spatial(&self) -> usize {
        self.image_size / 8
    }

    pub fn encoder_channels(&self) -> usize {
        4 * self.base_channels
    }

    pub fn cit_channels(&self) -> usize {
        4 * self.base_channels
    }

    pub fn cvt_spatial_channels(&self) -> usize {
        self.base_channels
    }

    pub fn fusion_depth(&self) -> usize {
        9 * self.base_channels
    }

    /// Channel width inside each of the three decoder blocks.
    pub fn decoder_widths(&self) -> [usize; 3] {
        let b = self.base_channels;
        [4 * b, 2 * b, b]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.image_size < 16 || !self.image_size.is_power_of_two() {
            return bad(format!("image_size {} must be a power of two >= 16", self.image_size));
        }
        if self.base_channels == 0 || self.base_channels % 2 != 0 {
            return bad(format!("base_channels {} must be even and positive", self.base_channels));
        }
        if self.cardinality == 0 || self.decoder_widths().iter().any(|w| w % self.cardinality != 0) {
            return bad(format!(
                "cardinality {} must divide decoder widths {:?}",
                self.cardinality,
                self.decoder_widths()
            ));
        }
        if self.block_kind == BlockKind::ConcatAll && self.style_dim % self.cardinality != 0 {
            return bad(format!(
                "style_dim {} must be divisible by cardinality {} for concat_all",
                self.style_dim, self.cardinality
            ));
        }
        if self.block_kind.uses_style() && self.style_dim == 0 {
            return bad(format!("{} blocks need style_dim > 0", self.block_kind));
        }
        if self.cvt_count == 0 || self.cit_count == 0 {
            return bad("vocabulary must have at least one CVT and one CIT".into());
        }
        if self.encoder_channels() + self.cit_channels() + self.cvt_spatial_channels() != self.fusion_depth() {
            return bad("fusion depth bookkeeping".into());
        }
        Ok(())
    }

    pub fn check_vocab(&self, vocab: &TagVocabulary) -> Result<()> {
        if vocab.cvt_count() != self.cvt_count || vocab.cit_count() != self.cit_count {
            return Err(Error::InvalidParam(format!(
                "network expects {} CVTs / {} CITs, vocabulary has {} / {}",
                self.cvt_count,
                self.cit_count,
                vocab.cvt_count(),
                vocab.cit_count()
            )));
        }
        Ok(())
    }
}

/// All three networks, built in a fixed order so a seed fully determines the
/// initial weights.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: NetworkConfig,
    pub store: ParamStore,
    pub cit: CitExtractor,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl Model {
    pub fn new(config: NetworkConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new(seed, dtype);
        let root = store.root();
        let cit = CitExtractor::new(&root.pp("cit"), &config)?;
        let generator = Generator::new(&root.pp("gen"), &config, cit.clone())?;
        let discriminator = Discriminator::new(&root.pp("disc"), &config)?;
        Ok(Self {
            config,
            store,
            cit,
            generator,
            discriminator,
        })
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }
}

/// Line arts in `[0, 1]` to a `(B, 1, H, W)` tensor in `[-1, 1]`.
pub fn gray_batch(images: &[&GrayImage], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::shape("empty batch"))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.width != w || img.height != h {
            return Err(Error::shape(format!(
                "batch mixes {}x{} and {w}x{h} images",
                img.width, img.height
            )));
        }
        data.extend(img.data.iter().map(|v| v * 2.0 - 1.0));
    }
    Ok(Tensor::from_vec(data, (images.len(), 1, h, w), device)?.to_dtype(dtype)?)
}

/// Color images in `[0, 1]` to a `(B, 3, H, W)` tensor in `[-1, 1]`.
pub fn color_batch(images: &[&ColorImage], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::shape("empty batch"))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.width != w || img.height != h {
            return Err(Error::shape(format!(
                "batch mixes {}x{} and {w}x{h} images",
                img.width, img.height
            )));
        }
        data.extend(img.data.iter().map(|v| v * 2.0 - 1.0));
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), device)?.to_dtype(dtype)?)
}

pub fn tag_batch(tags: &[&TagVector], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = tags.first().ok_or_else(|| Error::shape("empty batch"))?;
    let n = first.len();
    let mut data = Vec::with_capacity(tags.len() * n);
    for t in tags {
        if t.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: t.len() });
        }
        data.extend_from_slice(&t.values);
    }
    Ok(Tensor::from_vec(data, (tags.len(), n), device)?.to_dtype(dtype)?)
}

/// `(B, 3, H, W)` tensor in `[-1, 1]` back to images in `[0, 1]`.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<ColorImage>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {c}")));
    }
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let per = 3 * h * w;
    (0..b)
        .map(|i| ColorImage::from_signed(w, h, &flat[i * per..(i + 1) * per]))
        .collect()
}

#[cfg(test)]
mod tests;
