//! Decoder residual blocks and the squeeze/excitation primitives.
//!
//! Six block kinds share one aggregated-residual body (1×1, grouped 3×3,
//! 1×1). They differ in how, and whether, the 64-d tag style vector enters.

use std::fmt;
use std::str::FromStr;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, instance_norm, sigmoid, tile_spatial, Conv2d, ConvSpec, Linear, ParamPath};

pub const SE_REDUCTION: usize = 16;
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Resnext,
    SeResnext,
    ConcatFront,
    ConcatAll,
    Adain,
    Secat,
}

impl BlockKind {
    pub const ALL: [BlockKind; 6] = [
        BlockKind::Resnext,
        BlockKind::SeResnext,
        BlockKind::ConcatFront,
        BlockKind::ConcatAll,
        BlockKind::Adain,
        BlockKind::Secat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Resnext => "resnext",
            BlockKind::SeResnext => "se_resnext",
            BlockKind::ConcatFront => "concat_front",
            BlockKind::ConcatAll => "concat_all",
            BlockKind::Adain => "adain",
            BlockKind::Secat => "secat",
        }
    }

    /// Whether the block consumes the style vector.
    pub fn uses_style(self) -> bool {
        !matches!(self, BlockKind::Resnext | BlockKind::SeResnext)
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidParam(format!(
                    "unknown block kind `{s}` (expected one of resnext, se_resnext, concat_front, concat_all, adain, secat)"
                ))
            })
    }
}

/// `(B, C, H, W) -> (B, C)` channel descriptor.
pub fn squeeze(features: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = features.dims4()?;
    if h == 0 || w == 0 {
        return Err(Error::shape("squeeze: empty spatial extent"));
    }
    global_avg_pool(features)
}

/// Two-layer bottleneck producing per-channel scales in (0, 1). With a
/// nonzero `style_dim` the style vector is appended to the pooled descriptor.
#[derive(Debug, Clone)]
pub struct Excite {
    fc1: Linear,
    fc2: Linear,
    channels: usize,
    style_dim: usize,
}

impl Excite {
    pub fn new(p: &ParamPath, channels: usize, style_dim: usize) -> Result<Self> {
        let hidden = Self::hidden(channels, style_dim);
        Ok(Self {
            fc1: Linear::new(&p.pp("fc1"), channels + style_dim, hidden)?,
            fc2: Linear::new(&p.pp("fc2"), hidden, channels)?,
            channels,
            style_dim,
        })
    }

    pub fn hidden(channels: usize, style_dim: usize) -> usize {
        ((channels + style_dim) / SE_REDUCTION).max(1)
    }

    pub fn forward(&self, pooled: &Tensor, style: Option<&Tensor>) -> Result<Tensor> {
        let (b, c) = pooled.dims2()?;
        if c != self.channels {
            return Err(Error::LengthMismatch {
                expected: self.channels,
                got: c,
            });
        }
        let input = if self.style_dim == 0 {
            pooled.clone()
        } else {
            let style = style.ok_or_else(|| Error::shape("excite: style vector required"))?;
            let (sb, sd) = style.dims2()?;
            if sd != self.style_dim {
                return Err(Error::LengthMismatch {
                    expected: self.style_dim,
                    got: sd,
                });
            }
            if sb != b {
                return Err(Error::shape(format!("excite: batch {b} vs style batch {sb}")));
            }
            Tensor::cat(&[pooled, style], 1)?
        };
        let h = self.fc1.forward(&input)?.relu()?;
        sigmoid(&self.fc2.forward(&h)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub kind: BlockKind,
    pub channels: usize,
    pub inner: usize,
    pub cardinality: usize,
    pub style_dim: usize,
}

impl BlockConfig {
    pub fn new(kind: BlockKind, channels: usize, style_dim: usize) -> Self {
        Self {
            kind,
            channels,
            inner: channels,
            cardinality: 8,
            style_dim,
        }
    }
}

/// A residual block `relu(x + f(x))`; spatial size is preserved.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    cfg: BlockConfig,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    excite: Option<Excite>,
    affine: Option<Linear>,
}

impl DecoderBlock {
    pub fn new(p: &ParamPath, cfg: BlockConfig) -> Result<Self> {
        let (c, d, s) = (cfg.channels, cfg.inner, cfg.style_dim);
        let front = if matches!(cfg.kind, BlockKind::ConcatFront | BlockKind::ConcatAll) { s } else { 0 };
        let every = if cfg.kind == BlockKind::ConcatAll { s } else { 0 };
        let conv1 = Conv2d::new(&p.pp("conv1"), c + front, d, ConvSpec::POINTWISE)?;
        let conv2 = Conv2d::new(&p.pp("conv2"), d + every, d, ConvSpec::SAME3.grouped(cfg.cardinality))?;
        let conv3 = Conv2d::new(&p.pp("conv3"), d + every, c, ConvSpec::POINTWISE)?;
        let excite = match cfg.kind {
            BlockKind::SeResnext => Some(Excite::new(&p.pp("se"), c, 0)?),
            BlockKind::Secat => Some(Excite::new(&p.pp("se"), c, s)?),
            _ => None,
        };
        let affine = match cfg.kind {
            BlockKind::Adain => Some(Linear::new(&p.pp("affine"), s, 2 * c)?),
            _ => None,
        };
        Ok(Self {
            cfg,
            conv1,
            conv2,
            conv3,
            excite,
            affine,
        })
    }

    pub fn config(&self) -> &BlockConfig {
        &self.cfg
    }

    /// `x`: `(B, C, H, W)`; `style`: `(B, style_dim)`, ignored by kinds that
    /// do not use it.
    pub fn forward(&self, x: &Tensor, style: Option<&Tensor>) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.cfg.channels {
            return Err(Error::shape(format!(
                "{} block expects {} channels, got {c}",
                self.cfg.kind, self.cfg.channels
            )));
        }
        let style_map = if self.cfg.kind.uses_style() && self.cfg.style_dim > 0 {
            let s = style.ok_or_else(|| Error::shape(format!("{} block needs a style vector", self.cfg.kind)))?;
            let (sb, sd) = s.dims2()?;
            if sb != b || sd != self.cfg.style_dim {
                return Err(Error::shape(format!(
                    "style shape ({sb}, {sd}), expected ({b}, {})",
                    self.cfg.style_dim
                )));
            }
            Some(s)
        } else {
            None
        };
        let tiled = match (self.cfg.kind, style_map) {
            (BlockKind::ConcatFront | BlockKind::ConcatAll, Some(s)) => Some(tile_spatial(s, h, w)?),
            _ => None,
        };
        let with_style = |t: Tensor, every: bool| -> Result<Tensor> {
            match &tiled {
                Some(m) if every => Ok(Tensor::cat(&[&t, m], 1)?),
                _ => Ok(t),
            }
        };
        let all = self.cfg.kind == BlockKind::ConcatAll;

        let r = self.conv1.forward(&with_style(x.clone(), true)?)?.relu()?;
        let r = self.conv2.forward(&with_style(r, all)?)?.relu()?;
        let mut r = self.conv3.forward(&with_style(r, all)?)?;

        if let Some(se) = &self.excite {
            let scales = se.forward(&squeeze(&r)?, style_map)?;
            r = r.broadcast_mul(&scales.reshape((b, c, 1, 1))?)?;
        }
        if let (Some(affine), Some(s)) = (&self.affine, style_map) {
            let ab = affine.forward(s)?;
            let scale = (ab.narrow(1, 0, c)? + 1.0)?.reshape((b, c, 1, 1))?;
            let bias = ab.narrow(1, c, c)?.reshape((b, c, 1, 1))?;
            r = instance_norm(&r, INSTANCE_NORM_EPS)?
                .broadcast_mul(&scale)?
                .broadcast_add(&bias)?;
        }
        Ok((x + r)?.relu()?)
    }
}

/// Closed-form trainable scalar count for one block.
pub fn block_param_count(cfg: &BlockConfig) -> usize {
    let (c, d, s, g) = (cfg.channels, cfg.inner, cfg.style_dim, cfg.cardinality);
    let conv = |i: usize, o: usize, k: usize, g: usize| o * (i / g) * k * k + o;
    let fc = |i: usize, o: usize| i * o + o;
    let front = if matches!(cfg.kind, BlockKind::ConcatFront | BlockKind::ConcatAll) { s } else { 0 };
    let every = if cfg.kind == BlockKind::ConcatAll { s } else { 0 };
    let body = conv(c + front, d, 1, 1) + conv(d + every, d, 3, g) + conv(d + every, c, 1, 1);
    let extra = match cfg.kind {
        BlockKind::SeResnext => {
            let hd = Excite::hidden(c, 0);
            fc(c, hd) + fc(hd, c)
        }
        BlockKind::Secat => {
            let hd = Excite::hidden(c, s);
            fc(c + s, hd) + fc(hd, c)
        }
        BlockKind::Adain => fc(s, 2 * c),
        _ => 0,
    };
    body + extra
}
