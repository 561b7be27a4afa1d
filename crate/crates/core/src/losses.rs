//! Loss terms and their step-dependent composition.
//!
//! Step 1 (segmentation) trains on adversarial and reconstruction losses
//! only; later steps add the tag-classification loss to both players.

use std::fmt;
use std::str::FromStr;

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_cls: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rec: 1000.0,
            lambda_cls: 1.0,
            beta: 0.9,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_rec", self.lambda_rec),
            ("lambda_cls", self.lambda_cls),
            ("beta", self.beta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingStep {
    Segmentation,
    Colorization,
    BrightnessFinetune,
}

impl TrainingStep {
    pub fn name(self) -> &'static str {
        match self {
            TrainingStep::Segmentation => "segmentation",
            TrainingStep::Colorization => "colorization",
            TrainingStep::BrightnessFinetune => "brightness_finetune",
        }
    }

    pub fn uses_cls(self) -> bool {
        self != TrainingStep::Segmentation
    }
}

impl fmt::Display for TrainingStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainingStep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            TrainingStep::Segmentation,
            TrainingStep::Colorization,
            TrainingStep::BrightnessFinetune,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::InvalidParam(format!("unknown training step `{s}`")))
    }
}

pub fn clamp_probs(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)?)
}

/// `mean log D(y) + mean log(1 - D(G))`; at most 0.
pub fn adv_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    let real = clamp_probs(d_real)?.log()?.mean_all()?;
    let fake = clamp_probs(d_fake)?.affine(-1.0, 1.0)?.log()?.mean_all()?;
    Ok((real + fake)?)
}

/// Generator-side adversarial term. The minimax form equals [`adv_loss`];
/// the non-saturating form swaps `log(1 - D(G))` for `-log D(G)`.
pub fn gen_adv_loss(d_real: &Tensor, d_fake: &Tensor, non_saturating: bool) -> Result<Tensor> {
    if !non_saturating {
        return adv_loss(d_real, d_fake);
    }
    let real = clamp_probs(d_real)?.log()?.mean_all()?;
    let fake = clamp_probs(d_fake)?.log()?.mean_all()?;
    Ok((real - fake)?)
}

/// `mean|y - g_f| + beta · mean|y - g_g|`.
pub fn rec_loss(y: &Tensor, g_full: &Tensor, g_guide: &Tensor, beta: f64) -> Result<Tensor> {
    if y.dims() != g_full.dims() || y.dims() != g_guide.dims() {
        return Err(Error::shape(format!(
            "rec_loss: target {:?}, outputs {:?} / {:?}",
            y.dims(),
            g_full.dims(),
            g_guide.dims()
        )));
    }
    let full = (y - g_full)?.abs()?.mean_all()?;
    let guide = (y - g_guide)?.abs()?.mean_all()?;
    Ok((full + (guide * beta)?)?)
}

/// Per-tag binary cross-entropy, summed over tags, averaged over the batch.
pub fn bce_sum(probs: &Tensor, target: &Tensor) -> Result<Tensor> {
    if probs.dims() != target.dims() {
        let (got, expected) = (probs.dims(), target.dims());
        return Err(Error::LengthMismatch {
            expected: expected.last().copied().unwrap_or(0),
            got: got.last().copied().unwrap_or(0),
        });
    }
    let p = clamp_probs(probs)?;
    let pos = target.mul(&p.log()?)?;
    let neg = target.affine(-1.0, 1.0)?.mul(&p.affine(-1.0, 1.0)?.log()?)?;
    Ok((pos + neg)?.neg()?.sum(D::Minus1)?.mean_all()?)
}

/// CVT and CIT classification loss for one set of images.
pub fn cls_loss(cvt_probs: &Tensor, cit_probs: &Tensor, cvt_target: &Tensor, cit_target: &Tensor) -> Result<Tensor> {
    Ok((bce_sum(cvt_probs, cvt_target)? + bce_sum(cit_probs, cit_target)?)?)
}

/// Discriminator objective: `-L_adv`, plus `λ_cls · L_cls` after step 1.
pub fn discriminator_objective(step: TrainingStep, adv: &Tensor, cls: Option<&Tensor>, w: &LossWeights) -> Result<Tensor> {
    let base = adv.neg()?;
    match (step.uses_cls(), cls) {
        (false, _) => Ok(base),
        (true, Some(c)) => Ok((base + (c * w.lambda_cls)?)?),
        (true, None) => Err(Error::InvalidParam(format!("{step} step needs a classification loss"))),
    }
}

/// Generator objective: `L_adv + λ_rec · L_rec`, plus `λ_cls · L_cls` after
/// step 1.
pub fn generator_objective(
    step: TrainingStep,
    adv: &Tensor,
    rec: &Tensor,
    cls: Option<&Tensor>,
    w: &LossWeights,
) -> Result<Tensor> {
    let base = (adv + (rec * w.lambda_rec)?)?;
    match (step.uses_cls(), cls) {
        (false, _) => Ok(base),
        (true, Some(c)) => Ok((base + (c * w.lambda_cls)?)?),
        (true, None) => Err(Error::InvalidParam(format!("{step} step needs a classification loss"))),
    }
}

/// Both objectives from one set of parts.
pub fn compose_losses(
    step: TrainingStep,
    adv: &Tensor,
    rec: &Tensor,
    cls: Option<&Tensor>,
    w: &LossWeights,
) -> Result<(Tensor, Tensor)> {
    Ok((
        discriminator_objective(step, adv, cls, w)?,
        generator_objective(step, adv, rec, cls, w)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::scalar;
    use candle_core::{DType, Device, Var};
    use proptest::prelude::*;

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    fn s(x: f64) -> Tensor {
        Tensor::new(x, &Device::Cpu).unwrap()
    }

    #[test]
    fn adv_examples() {
        let v = scalar(&adv_loss(&t(&[0.5], &[1]), &t(&[0.5], &[1])).unwrap()).unwrap();
        assert!((v - (-1.3862943611198906)).abs() < 1e-6);
        let v = scalar(&adv_loss(&t(&[1.0], &[1]), &t(&[0.0], &[1])).unwrap()).unwrap();
        assert!(v <= 0.0 && v > -1e-6);
        let one = scalar(&adv_loss(&t(&[0.7], &[1]), &t(&[0.2], &[1])).unwrap()).unwrap();
        let two = scalar(&adv_loss(&t(&[0.7, 0.7], &[2]), &t(&[0.2, 0.2], &[2])).unwrap()).unwrap();
        assert!((one - two).abs() < 1e-12);
        assert!((one - (0.7f64.ln() + 0.8f64.ln())).abs() < 1e-6);
    }

    #[test]
    fn non_saturating_generator_term() {
        let v = scalar(&gen_adv_loss(&t(&[0.5], &[1]), &t(&[0.25], &[1]), true).unwrap()).unwrap();
        assert!((v - (0.5f64.ln() - 0.25f64.ln())).abs() < 1e-9);
        let m = scalar(&gen_adv_loss(&t(&[0.5], &[1]), &t(&[0.25], &[1]), false).unwrap()).unwrap();
        assert!((m - (0.5f64.ln() + 0.75f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn rec_examples() {
        let y = Tensor::ones((1, 3, 2, 2), DType::F64, &Device::Cpu).unwrap();
        let z = y.zeros_like().unwrap();
        assert_eq!(scalar(&rec_loss(&y, &y, &y, 0.9).unwrap()).unwrap(), 0.0);
        assert!((scalar(&rec_loss(&y, &z, &y, 0.9).unwrap()).unwrap() - 1.0).abs() < 1e-6);
        assert!((scalar(&rec_loss(&y, &y, &z, 0.9).unwrap()).unwrap() - 0.9).abs() < 1e-6);
        assert!(rec_loss(&y, &Tensor::ones((1, 3, 2, 1), DType::F64, &Device::Cpu).unwrap(), &y, 0.9).is_err());
    }

    #[test]
    fn cls_examples() {
        let v = scalar(&bce_sum(&t(&[0.5], &[1, 1]), &t(&[1.0], &[1, 1])).unwrap()).unwrap();
        assert!((v - 0.6931471805599453).abs() < 1e-6);
        let v = scalar(&bce_sum(&t(&[1.0, 0.0], &[1, 2]), &t(&[1.0, 0.0], &[1, 2])).unwrap()).unwrap();
        assert!(v.abs() < 1e-6);
        let a = scalar(&bce_sum(&t(&[0.3], &[1, 1]), &t(&[1.0], &[1, 1])).unwrap()).unwrap();
        let b = scalar(&bce_sum(&t(&[0.8], &[1, 1]), &t(&[0.0], &[1, 1])).unwrap()).unwrap();
        let ab = scalar(&bce_sum(&t(&[0.3, 0.8], &[1, 2]), &t(&[1.0, 0.0], &[1, 2])).unwrap()).unwrap();
        assert!((a + b - ab).abs() < 1e-12);
        assert!((a - -(0.3f64.ln())).abs() < 1e-6);
        let both = scalar(
            &cls_loss(&t(&[0.3], &[1, 1]), &t(&[0.8], &[1, 1]), &t(&[1.0], &[1, 1]), &t(&[0.0], &[1, 1])).unwrap(),
        )
        .unwrap();
        assert!((both - ab).abs() < 1e-12);
        assert!(bce_sum(&t(&[0.5, 0.5], &[1, 2]), &t(&[1.0], &[1, 1])).is_err());
    }

    #[test]
    fn compose_examples() {
        let w = LossWeights::default();
        let (ld, lg) = compose_losses(TrainingStep::Segmentation, &s(0.5), &s(0.001), None, &w).unwrap();
        assert!((scalar(&lg).unwrap() - 1.5).abs() < 1e-6);
        assert!((scalar(&ld).unwrap() + 0.5).abs() < 1e-12);
        let (_, lg2) = compose_losses(TrainingStep::Colorization, &s(0.5), &s(0.001), Some(&s(0.2)), &w).unwrap();
        assert!((scalar(&lg2).unwrap() - scalar(&lg).unwrap() - 0.2).abs() < 1e-6);
        let (ld3, _) =
            compose_losses(TrainingStep::BrightnessFinetune, &s(0.5), &s(0.001), Some(&s(0.2)), &w).unwrap();
        assert!((scalar(&ld3).unwrap() - (-0.5 + 0.2)).abs() < 1e-12);
        assert!(compose_losses(TrainingStep::Colorization, &s(0.5), &s(0.001), None, &w).is_err());
    }

    #[test]
    fn segmentation_step_has_no_cls_gradient() {
        let head = Var::from_tensor(&s(0.3)).unwrap();
        let cls = (head.as_tensor() * 2.0).unwrap();
        let adv = Var::from_tensor(&s(-1.0)).unwrap();
        let (_, lg) =
            compose_losses(TrainingStep::Segmentation, adv.as_tensor(), &s(0.01), Some(&cls), &LossWeights::default())
                .unwrap();
        let grads = lg.backward().unwrap();
        assert!(grads.get(head.as_tensor()).is_none());
        assert!(grads.get(adv.as_tensor()).is_some());
    }

    proptest! {
        #[test]
        fn rec_loss_jointly_convex(
            y in proptest::collection::vec(-1.0f64..1.0, 8),
            a in proptest::collection::vec(-1.0f64..1.0, 16),
            b in proptest::collection::vec(-1.0f64..1.0, 16),
        ) {
            let y = t(&y, &[8]);
            let (g1, h1) = (t(&a[..8], &[8]), t(&a[8..], &[8]));
            let (g2, h2) = (t(&b[..8], &[8]), t(&b[8..], &[8]));
            let mid = |p: &Tensor, q: &Tensor| ((p + q).unwrap() * 0.5).unwrap();
            let lm = scalar(&rec_loss(&y, &mid(&g1, &g2), &mid(&h1, &h2), 0.9).unwrap()).unwrap();
            let l1 = scalar(&rec_loss(&y, &g1, &h1, 0.9).unwrap()).unwrap();
            let l2 = scalar(&rec_loss(&y, &g2, &h2, 0.9).unwrap()).unwrap();
            prop_assert!(lm <= 0.5 * (l1 + l2) + 1e-12);
        }

        #[test]
        fn signs_and_finiteness(r in 0.0f64..=1.0, f in 0.0f64..=1.0, p in 0.0f64..=1.0, tgt in 0u8..2) {
            let adv = scalar(&adv_loss(&t(&[r], &[1]), &t(&[f], &[1])).unwrap()).unwrap();
            prop_assert!(adv <= 0.0 && adv.is_finite());
            let cls = bce_sum(&t(&[p], &[1, 1]), &t(&[tgt as f64], &[1, 1])).unwrap();
            let c = scalar(&cls).unwrap();
            prop_assert!(c >= 0.0 && c.is_finite());
            let (_, lg) = compose_losses(TrainingStep::Colorization, &s(adv), &s(0.3), Some(&cls), &LossWeights::default()).unwrap();
            prop_assert!(scalar(&lg).unwrap().is_finite());
        }
    }
}
