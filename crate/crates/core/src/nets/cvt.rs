use candle_core::Tensor;

use super::NetworkConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvSpec, Linear, ParamPath};

/// Embeds a CVT multi-hot vector two ways: a spatial map joined into the
/// fusion tensor, and a dense style vector consumed by the decoder blocks.
/// The style path is only built for block kinds that read it.
#[derive(Debug, Clone)]
pub struct CvtEncoder {
    cvt_count: usize,
    spatial: usize,
    style: Option<(Linear, Linear)>,
    sp_fc: Linear,
    sp_conv1: Conv2d,
    sp_conv2: Conv2d,
}

impl CvtEncoder {
    pub fn new(p: &ParamPath, cfg: &NetworkConfig) -> Result<Self> {
        let s = cfg.fusion_spatial();
        let ch = cfg.cvt_spatial_channels();
        let style = if cfg.block_kind.uses_style() {
            Some((
                Linear::new(&p.pp("style1"), cfg.cvt_count, cfg.style_dim)?,
                Linear::new(&p.pp("style2"), cfg.style_dim, cfg.style_dim)?,
            ))
        } else {
            None
        };
        Ok(Self {
            cvt_count: cfg.cvt_count,
            spatial: s,
            style,
            sp_fc: Linear::new(&p.pp("spatial_fc"), cfg.cvt_count, s * s)?,
            sp_conv1: Conv2d::new(&p.pp("spatial_conv1"), 1, ch, ConvSpec::SAME3)?,
            sp_conv2: Conv2d::new(&p.pp("spatial_conv2"), ch, ch, ConvSpec::SAME3)?,
        })
    }

    /// `(B, cvt_count)` → (`(B, cvt_spatial_channels, S/8, S/8)`, optional
    /// `(B, style_dim)`).
    pub fn forward(&self, cvt: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let (b, n) = cvt.dims2()?;
        if n != self.cvt_count {
            return Err(Error::LengthMismatch {
                expected: self.cvt_count,
                got: n,
            });
        }
        let style = match &self.style {
            Some((fc1, fc2)) => Some(fc2.forward(&fc1.forward(cvt)?.relu()?)?),
            None => None,
        };
        let m = self.sp_fc.forward(cvt)?.relu()?.reshape((b, 1, self.spatial, self.spatial))?;
        let m = self.sp_conv1.forward(&m)?.relu()?;
        let m = self.sp_conv2.forward(&m)?;
        Ok((m, style))
    }
}
