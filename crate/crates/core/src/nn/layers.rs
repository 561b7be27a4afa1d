use candle_core::{DType, Tensor};

use super::conv::conv2d;
use super::params::{Init, ParamPath};
use crate::error::{Error, Result};

/// Fully connected layer, `y = x Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(p: &ParamPath, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        Ok(Self {
            weight: p.param("weight", &[out_dim, in_dim], Init::Uniform(bound))?,
            bias: p.param("bias", &[out_dim], Init::Uniform(bound))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }

    pub fn out_dim(&self) -> usize {
        self.bias.dims()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// 3×3, stride 1, same padding.
    pub const SAME3: ConvSpec = ConvSpec {
        kernel: 3,
        stride: 1,
        padding: 1,
        groups: 1,
    };
    /// 3×3, stride 2: halves the spatial size.
    pub const DOWN3: ConvSpec = ConvSpec {
        kernel: 3,
        stride: 2,
        padding: 1,
        groups: 1,
    };
    pub const POINTWISE: ConvSpec = ConvSpec {
        kernel: 1,
        stride: 1,
        padding: 0,
        groups: 1,
    };

    pub fn grouped(self, groups: usize) -> Self {
        Self { groups, ..self }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    spec: ConvSpec,
}

impl Conv2d {
    pub fn new(p: &ParamPath, in_ch: usize, out_ch: usize, spec: ConvSpec) -> Result<Self> {
        if in_ch % spec.groups != 0 || out_ch % spec.groups != 0 {
            return Err(Error::shape(format!(
                "{}: {in_ch}->{out_ch} channels not divisible by {} groups",
                p.prefix(),
                spec.groups
            )));
        }
        let fan_in = in_ch / spec.groups * spec.kernel * spec.kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            weight: p.param(
                "weight",
                &[out_ch, in_ch / spec.groups, spec.kernel, spec.kernel],
                Init::Uniform(bound),
            )?,
            bias: p.param("bias", &[out_ch], Init::Uniform(bound))?,
            spec,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(
            x,
            &self.weight,
            Some(&self.bias),
            self.spec.stride,
            self.spec.padding,
            self.spec.groups,
        )
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// `(B, C, H, W) -> (B, C)` spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean((2, 3))?)
}

/// Per-sample, per-channel normalization over the spatial dimensions.
pub fn instance_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim((2, 3))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((2, 3))?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

/// Sub-pixel rearrangement `(B, C·r², H, W) -> (B, C, H·r, W·r)` with
/// `out[c, r·y+dy, r·x+dx] = in[c·r² + dy·r + dx, y, x]`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::shape(format!(
            "pixel_shuffle: {c} channels not divisible by {r}²"
        )));
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let oc = c / (r * r);
    Ok(x.reshape((b, oc, r, r, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .contiguous()?
        .reshape((b, oc, h * r, w * r))?)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, factor, w, factor))?
        .contiguous()?
        .reshape((b, c, h * factor, w * factor))?)
}

/// Broadcast a `(B, D)` vector to a `(B, D, H, W)` constant map.
pub fn tile_spatial(v: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, d) = v.dims2()?;
    Ok(v.reshape((b, d, 1, 1))?.broadcast_as((b, d, h, w))?.contiguous()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn pixel_shuffle_single_pixel() {
        let x = Tensor::from_vec(vec![1f32, 2., 3., 4.], (1, 4, 1, 1), &Device::Cpu).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        let v: Vec<Vec<f32>> = y.squeeze(0).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        assert_eq!(v, vec![vec![1., 2.], vec![3., 4.]]);
    }

    #[test]
    fn pixel_shuffle_matches_index_oracle() {
        let (b, c, h, w, r) = (2, 8, 4, 4, 2);
        let n = b * c * h * w;
        let data: Vec<f32> = (0..n).map(|i| ((i * 7919) % 1000) as f32).collect();
        let x = Tensor::from_vec(data.clone(), (b, c, h, w), &Device::Cpu).unwrap();
        let y: Vec<f32> = pixel_shuffle(&x, r).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let oc = c / (r * r);
        for bi in 0..b {
            for ch in 0..oc {
                for yy in 0..h {
                    for xx in 0..w {
                        for dy in 0..r {
                            for dx in 0..r {
                                let src = data[((bi * c + ch * r * r + dy * r + dx) * h + yy) * w + xx];
                                let dst = y[((bi * oc + ch) * h * r + yy * r + dy) * w * r + xx * r + dx];
                                assert_eq!(src, dst);
                            }
                        }
                    }
                }
            }
        }
        let ident = pixel_shuffle(&x, 1).unwrap();
        assert_eq!(ident.flatten_all().unwrap().to_vec1::<f32>().unwrap(), data);
        assert!(pixel_shuffle(&Tensor::zeros((1, 6, 2, 2), DType::F32, &Device::Cpu).unwrap(), 2).is_err());
    }

    #[test]
    fn upsample_and_tile() {
        let x = Tensor::from_vec(vec![1f32, 2., 3., 4.], (1, 1, 2, 2), &Device::Cpu).unwrap();
        let y: Vec<Vec<f32>> = upsample_nearest(&x, 2).unwrap().squeeze(0).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        assert_eq!(y[0], vec![1., 1., 2., 2.]);
        assert_eq!(y[3], vec![3., 3., 4., 4.]);
        let v = Tensor::from_vec(vec![5f32, 6.], (1, 2), &Device::Cpu).unwrap();
        let t = tile_spatial(&v, 3, 2).unwrap();
        assert_eq!(t.dims(), &[1, 2, 3, 2]);
        assert_eq!(scalar(&t.sum_all().unwrap()).unwrap(), 66.0);
    }

    #[test]
    fn instance_norm_statistics() {
        let x = Tensor::from_vec((0..32).map(|i| (i * i) as f64).collect::<Vec<_>>(), (1, 2, 4, 4), &Device::Cpu).unwrap();
        let y = instance_norm(&x, 0.0).unwrap();
        let m: Vec<f64> = y.mean((2, 3)).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let v: Vec<f64> = y.sqr().unwrap().mean((2, 3)).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for i in 0..2 {
            assert!(m[i].abs() < 1e-12);
            assert!((v[i] - 1.0).abs() < 1e-12);
        }
    }
}
