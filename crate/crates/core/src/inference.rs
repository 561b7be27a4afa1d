//! One-shot colorization from a saved checkpoint.

use std::path::Path;

use candle_core::DType;

use crate::blocks::BlockKind;
use crate::checkpoint::load_checkpoint;
use crate::error::{Error, Result};
use crate::imaging::{ColorImage, GrayImage};
use crate::lineart::brightness_scale;
use crate::nets::{gray_batch, tag_batch, tensor_to_images, Model};
use crate::tagspace::{TagKind, TagVocabulary};

/// Brightness factor applied to hand-drawn inputs. It is the mean of the
/// fine-tuning range `U(1, 7)`, so a real sketch lands in the middle of the
/// line strengths the generator saw.
pub const REAL_SKETCH_BRIGHTNESS: f32 = 4.0;

#[derive(Debug, Clone)]
pub struct Colorization {
    pub image: ColorImage,
    pub guide: ColorImage,
}

/// Inference-only view of a trained model. Weights cannot be changed
/// through it, so one instance can be shared across threads.
#[derive(Debug, Clone)]
pub struct Colorizer {
    model: Model,
    vocab: TagVocabulary,
    id: String,
}

impl Colorizer {
    pub fn load(dir: &Path) -> Result<Self> {
        let ck = load_checkpoint(dir, None, DType::F32)?;
        Ok(Self {
            model: ck.model,
            vocab: ck.vocab,
            id: ck.meta.id,
        })
    }

    pub fn from_model(model: Model, vocab: TagVocabulary) -> Result<Self> {
        model.config.check_vocab(&vocab)?;
        let id = model.store.hash("")?[..12].to_string();
        Ok(Self { model, vocab, id })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn vocab(&self) -> &TagVocabulary {
        &self.vocab
    }

    pub fn block_kind(&self) -> BlockKind {
        self.model.config.block_kind
    }

    pub fn image_size(&self) -> usize {
        self.model.config.image_size
    }

    /// Colorize `line_art` (any size; letterboxed onto white and resized to
    /// the model size) with the given CVT names. With `real_sketch` the
    /// input is first lightened by [`REAL_SKETCH_BRIGHTNESS`].
    pub fn colorize<S: AsRef<str>>(&self, line_art: &GrayImage, tags: &[S], real_sketch: bool) -> Result<Colorization> {
        if line_art.width == 0 || line_art.height == 0 {
            return Err(Error::InvalidParam("empty input image".into()));
        }
        let cvt = self.vocab.encode(tags, TagKind::Cvt)?;
        let mut x = line_art.fit_square(self.image_size());
        if real_sketch {
            x = brightness_scale(&x, REAL_SKETCH_BRIGHTNESS)?;
        }
        let dtype = self.model.dtype();
        let device = self.model.device();
        let out = self
            .model
            .generator
            .forward(&gray_batch(&[&x], dtype, device)?, &tag_batch(&[&cvt], dtype, device)?)?;
        let mut image = tensor_to_images(&out.full.detach())?;
        let mut guide = tensor_to_images(&out.guide.detach())?;
        Ok(Colorization {
            image: image.remove(0),
            guide: guide.remove(0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::save_checkpoint;
    use crate::nets::NetworkConfig;

    fn colorizer() -> Colorizer {
        let v = TagVocabulary::sprite_default();
        let m = Model::new(NetworkConfig::miniature(&v, BlockKind::Secat), 2, DType::F32).unwrap();
        Colorizer::from_model(m, v).unwrap()
    }

    #[test]
    fn output_is_model_size_for_any_input() {
        let c = colorizer();
        let wide = GrayImage::filled(40, 10, 0.5);
        let r = c.colorize(&wide, &["blue_hair", "red_eyes"], false).unwrap();
        assert_eq!((r.image.width, r.image.height), (16, 16));
        assert_eq!((r.guide.width, r.guide.height), (16, 16));
        assert!(r.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn unknown_tag_is_named() {
        let c = colorizer();
        match c.colorize(&GrayImage::filled(16, 16, 1.0), &["green_tail"], false) {
            Err(Error::UnknownTag(t)) => assert_eq!(t, "green_tail"),
            other => panic!("expected unknown tag, got {other:?}"),
        }
        // CIT names are not valid color tags either.
        let cit = c.vocab().cit_names()[0].clone();
        assert!(matches!(c.colorize(&GrayImage::filled(16, 16, 1.0), &[cit], false), Err(Error::UnknownTag(_))));
    }

    #[test]
    fn repeatable_and_real_sketch_changes_input() {
        let c = colorizer();
        let mut art = GrayImage::filled(16, 16, 1.0);
        for i in 0..16 {
            art.set(i, 8, 0.1);
            art.set(8, i, 0.1);
        }
        let a = c.colorize(&art, &["blue_hair"], false).unwrap();
        let b = c.colorize(&art, &["blue_hair"], false).unwrap();
        assert_eq!(a.image, b.image);
        let r = c.colorize(&art, &["blue_hair"], true).unwrap();
        assert_ne!(a.image, r.image);
    }

    #[test]
    fn loads_from_checkpoint() {
        let c = colorizer();
        let dir = tempfile::tempdir().unwrap();
        let meta = save_checkpoint(dir.path(), &c.model, c.vocab(), None).unwrap();
        let loaded = Colorizer::load(dir.path()).unwrap();
        assert_eq!(loaded.id(), meta.id);
        assert_eq!(loaded.id(), c.id());
        let art = GrayImage::filled(16, 16, 0.7);
        assert_eq!(
            loaded.colorize(&art, &["red_eyes"], false).unwrap().image,
            c.colorize(&art, &["red_eyes"], false).unwrap().image
        );
    }
}
