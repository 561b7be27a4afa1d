use candle_core::Tensor;

use super::{CitExtractor, CvtEncoder, NetworkConfig, LEAKY_SLOPE};
use crate::blocks::{BlockConfig, DecoderBlock};
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, pixel_shuffle, upsample_nearest, Conv2d, ConvSpec, ParamPath};

#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    /// `(B, 3, S, S)` in `[-1, 1]`.
    pub full: Tensor,
    /// Guide decoder output, same shape and range.
    pub guide: Tensor,
}

/// entry conv → decoder block → conv to 4·out → pixel shuffle ×2.
#[derive(Debug, Clone)]
struct DecoderStage {
    entry: Conv2d,
    block: DecoderBlock,
    up: Conv2d,
}

impl DecoderStage {
    fn new(p: &ParamPath, cin: usize, width: usize, cout: usize, block: BlockConfig) -> Result<Self> {
        Ok(Self {
            entry: Conv2d::new(&p.pp("entry"), cin, width, ConvSpec::SAME3)?,
            block: DecoderBlock::new(&p.pp("block"), block)?,
            up: Conv2d::new(&p.pp("up"), width, 4 * cout, ConvSpec::SAME3)?,
        })
    }

    fn forward(&self, x: &Tensor, style: Option<&Tensor>) -> Result<Tensor> {
        let h = leaky_relu(&self.entry.forward(x)?, LEAKY_SLOPE)?;
        let h = self.block.forward(&h, style)?;
        let h = leaky_relu(&self.up.forward(&h)?, LEAKY_SLOPE)?;
        pixel_shuffle(&h, 2)
    }
}

/// U-Net colorizer. The CIT extractor is held by reference to the shared
/// weights and its output is detached, so generator gradients never reach it.
#[derive(Debug, Clone)]
pub struct Generator {
    config: NetworkConfig,
    cit: CitExtractor,
    cvt: CvtEncoder,
    enc: [Conv2d; 4],
    stages: [DecoderStage; 3],
    out: Conv2d,
    guide: [Conv2d; 3],
}

impl Generator {
    pub fn new(p: &ParamPath, cfg: &NetworkConfig, cit: CitExtractor) -> Result<Self> {
        cfg.validate()?;
        let b = cfg.base_channels;
        let cvt = CvtEncoder::new(&p.pp("cvt"), cfg)?;
        let enc = [
            Conv2d::new(&p.pp("enc0"), 1, b, ConvSpec::SAME3)?,
            Conv2d::new(&p.pp("enc1"), b, 2 * b, ConvSpec::DOWN3)?,
            Conv2d::new(&p.pp("enc2"), 2 * b, 4 * b, ConvSpec::DOWN3)?,
            Conv2d::new(&p.pp("enc3"), 4 * b, cfg.encoder_channels(), ConvSpec::DOWN3)?,
        ];
        let widths = cfg.decoder_widths();
        let outs = [2 * b, b, b];
        let ins = [cfg.fusion_depth(), 2 * b + 4 * b, b + 2 * b];
        let stage = |i: usize| {
            let mut bc = BlockConfig::new(cfg.block_kind, widths[i], cfg.style_dim);
            bc.cardinality = cfg.cardinality;
            DecoderStage::new(&p.pp(format!("dec{i}")), ins[i], widths[i], outs[i], bc)
        };
        let stages = [stage(0)?, stage(1)?, stage(2)?];
        let out = Conv2d::new(&p.pp("out"), 2 * b, 3, ConvSpec::SAME3)?;
        let guide = [
            Conv2d::new(&p.pp("guide0"), 2 * b, b, ConvSpec::SAME3)?,
            Conv2d::new(&p.pp("guide1"), b, b / 2, ConvSpec::SAME3)?,
            Conv2d::new(&p.pp("guide_out"), b / 2, 3, ConvSpec::SAME3)?,
        ];
        Ok(Self {
            config: cfg.clone(),
            cit,
            cvt,
            enc,
            stages,
            out,
            guide,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn cit(&self) -> &CitExtractor {
        &self.cit
    }

    /// `line_art`: `(B, 1, S, S)` in `[-1, 1]`; `cvt`: `(B, cvt_count)`.
    pub fn forward(&self, line_art: &Tensor, cvt: &Tensor) -> Result<GeneratorOutput> {
        let (b, c, h, w) = line_art.dims4()?;
        let s = self.config.image_size;
        if c != 1 || h != s || w != s {
            return Err(Error::shape(format!(
                "generator expects (B, 1, {s}, {s}), got {:?}",
                line_art.dims()
            )));
        }
        if cvt.dims2()?.0 != b {
            return Err(Error::shape(format!("batch {b} with {} tag vectors", cvt.dims2()?.0)));
        }
        let e0 = leaky_relu(&self.enc[0].forward(line_art)?, LEAKY_SLOPE)?;
        let e1 = leaky_relu(&self.enc[1].forward(&e0)?, LEAKY_SLOPE)?;
        let e2 = leaky_relu(&self.enc[2].forward(&e1)?, LEAKY_SLOPE)?;
        let e3 = leaky_relu(&self.enc[3].forward(&e2)?, LEAKY_SLOPE)?;
        let cit = self.cit.extract(line_art)?.features;
        let (cvt_map, style) = self.cvt.forward(cvt)?;
        let fusion = Tensor::cat(&[&e3, &cit, &cvt_map], 1)?;
        let depth = fusion.dim(1)?;
        if depth != self.config.fusion_depth() {
            return Err(Error::shape(format!(
                "fusion depth {depth}, config declares {}",
                self.config.fusion_depth()
            )));
        }
        let style = style.as_ref();

        let d0 = self.stages[0].forward(&fusion, style)?;
        let guide = self.guide_forward(&d0)?;
        let d1 = self.stages[1].forward(&Tensor::cat(&[&d0, &e2], 1)?, style)?;
        let d2 = self.stages[2].forward(&Tensor::cat(&[&d1, &e1], 1)?, style)?;
        let full = self.out.forward(&Tensor::cat(&[&d2, &e0], 1)?)?.tanh()?;
        Ok(GeneratorOutput { full, guide })
    }

    fn guide_forward(&self, d0: &Tensor) -> Result<Tensor> {
        let g = leaky_relu(&self.guide[0].forward(&upsample_nearest(d0, 2)?)?, LEAKY_SLOPE)?;
        let g = leaky_relu(&self.guide[1].forward(&upsample_nearest(&g, 2)?)?, LEAKY_SLOPE)?;
        Ok(self.guide[2].forward(&g)?.tanh()?)
    }
}
