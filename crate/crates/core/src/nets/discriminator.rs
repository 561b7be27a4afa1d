use candle_core::Tensor;

use super::{NetworkConfig, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, leaky_relu, sigmoid, Conv2d, ConvSpec, Linear, ParamPath};

#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    /// `(B,)` probability that the input is real.
    pub adv: Tensor,
    /// `(B, cvt_count)` per-tag probabilities.
    pub cvt: Tensor,
    /// `(B, cit_count)` per-tag probabilities.
    pub cit: Tensor,
}

/// Five stride-2 stages, global average pooling, and three sigmoid heads.
#[derive(Debug, Clone)]
pub struct Discriminator {
    image_size: usize,
    convs: Vec<Conv2d>,
    adv: Linear,
    cvt: Linear,
    cit: Linear,
}

impl Discriminator {
    pub fn new(p: &ParamPath, cfg: &NetworkConfig) -> Result<Self> {
        let b = cfg.base_channels;
        let widths = [3, b, 2 * b, 4 * b, 8 * b, 8 * b];
        let convs = (0..5)
            .map(|i| Conv2d::new(&p.pp(format!("conv{i}")), widths[i], widths[i + 1], ConvSpec::DOWN3))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            image_size: cfg.image_size,
            convs,
            adv: Linear::new(&p.pp("adv_head"), 8 * b, 1)?,
            cvt: Linear::new(&p.pp("cvt_head"), 8 * b, cfg.cvt_count)?,
            cit: Linear::new(&p.pp("cit_head"), 8 * b, cfg.cit_count)?,
        })
    }

    /// Parameter-name prefixes (relative to `disc.`) of the tag heads.
    pub const CLS_HEADS: [&'static str; 2] = ["cvt_head.", "cit_head."];

    fn trunk(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h != self.image_size || w != self.image_size {
            return Err(Error::shape(format!(
                "discriminator expects (B, 3, {s}, {s}), got {:?}",
                x.dims(),
                s = self.image_size
            )));
        }
        let mut h = x.clone();
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h)?, LEAKY_SLOPE)?;
        }
        global_avg_pool(&h)
    }

    pub fn forward(&self, image: &Tensor) -> Result<DiscriminatorOutput> {
        let f = self.trunk(image)?;
        Ok(DiscriminatorOutput {
            adv: sigmoid(&self.adv.forward(&f)?)?.squeeze(1)?,
            cvt: sigmoid(&self.cvt.forward(&f)?)?,
            cit: sigmoid(&self.cit.forward(&f)?)?,
        })
    }

    /// Only the adversarial head; used where tag predictions are not part of
    /// the loss.
    pub fn forward_adv(&self, image: &Tensor) -> Result<Tensor> {
        Ok(sigmoid(&self.adv.forward(&self.trunk(image)?)?)?.squeeze(1)?)
    }
}
