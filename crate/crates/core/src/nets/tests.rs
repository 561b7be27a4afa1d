use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};

use super::*;
use crate::blocks::{block_param_count, BlockConfig, BlockKind, Excite};
use crate::nn::{gradcheck, scalar, Init};

fn vocab() -> TagVocabulary {
    TagVocabulary::sprite_default()
}

fn rand_tensor(seed: u64, shape: &[usize], dtype: DType) -> Tensor {
    let s = ParamStore::new(seed, dtype);
    s.root().param("x", shape, Init::Uniform(1.0)).unwrap()
}

fn cvt_for(v: &TagVocabulary, names: &[&str], dtype: DType) -> Tensor {
    let t = v.encode(names, crate::tagspace::TagKind::Cvt).unwrap();
    tag_batch(&[&t], dtype, &Device::Cpu).unwrap()
}

fn max_abs(t: &Tensor) -> f64 {
    scalar(&t.abs().unwrap().max_all().unwrap()).unwrap()
}

#[test]
fn fusion_split_is_four_four_one() {
    let c = NetworkConfig::toy(&vocab(), BlockKind::Secat);
    c.validate().unwrap();
    assert_eq!(c.fusion_spatial(), 8);
    assert_eq!((c.encoder_channels(), c.cit_channels(), c.cvt_spatial_channels()), (64, 64, 16));
    assert_eq!(c.fusion_depth(), 144);
    assert!(NetworkConfig { image_size: 48, ..c.clone() }.validate().is_err());
    assert!(NetworkConfig { cardinality: 3, ..c.clone() }.validate().is_err());
}

#[test]
fn batch_conversion_roundtrip() {
    let img = ColorImage::filled(4, 2, [0.0, 0.5, 1.0]);
    let t = color_batch(&[&img, &img], DType::F32, &Device::Cpu).unwrap();
    assert_eq!(t.dims(), &[2, 3, 2, 4]);
    let back = tensor_to_images(&t).unwrap();
    assert_eq!(back[1].get(3, 1), [0.0, 0.5, 1.0]);
    let g = GrayImage::filled(4, 4, 1.0);
    let small = GrayImage::filled(2, 2, 1.0);
    assert!(gray_batch(&[&g, &small], DType::F32, &Device::Cpu).is_err());
}

#[test]
fn generator_shapes_range_and_conditioning() {
    let v = vocab();
    let m = Model::new(NetworkConfig::toy(&v, BlockKind::Secat), 1, DType::F32).unwrap();
    let x = rand_tensor(2, &[1, 1, 64, 64], DType::F32);
    let a = m.generator.forward(&x, &cvt_for(&v, &["blue_hair", "red_eyes", "white_shirt"], DType::F32)).unwrap();
    assert_eq!(a.full.dims(), &[1, 3, 64, 64]);
    assert_eq!(a.guide.dims(), &[1, 3, 64, 64]);
    for t in [&a.full, &a.guide] {
        let vals: Vec<f32> = t.flatten_all().unwrap().to_vec1().unwrap();
        assert!(vals.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
    }
    let b = m.generator.forward(&x, &cvt_for(&v, &["red_hair", "green_eyes", "navy_shirt"], DType::F32)).unwrap();
    assert!(max_abs(&(&a.full - &b.full).unwrap()) > 0.0);
    // Inference is a pure function of weights and inputs.
    let again = m.generator.forward(&x, &cvt_for(&v, &["blue_hair", "red_eyes", "white_shirt"], DType::F32)).unwrap();
    assert_eq!(max_abs(&(&a.full - &again.full).unwrap()), 0.0);
    assert!(m.generator.forward(&rand_tensor(3, &[1, 1, 32, 32], DType::F32), &cvt_for(&v, &[], DType::F32)).is_err());
}

#[test]
fn every_block_kind_builds_and_runs() {
    let v = vocab();
    let x = rand_tensor(2, &[2, 1, 16, 16], DType::F32);
    let cvt = Tensor::cat(&[cvt_for(&v, &["blue_hair"], DType::F32), cvt_for(&v, &["red_hair"], DType::F32)], 0).unwrap();
    for k in BlockKind::ALL {
        let m = Model::new(NetworkConfig::miniature(&v, k), 1, DType::F32).unwrap();
        assert_eq!(m.generator.forward(&x, &cvt).unwrap().full.dims(), &[2, 3, 16, 16], "{k}");
    }
}

#[test]
fn cit_extractor_contract() {
    let v = vocab();
    let m = Model::new(NetworkConfig::toy(&v, BlockKind::Secat), 4, DType::F32).unwrap();
    let x = rand_tensor(5, &[2, 1, 64, 64], DType::F32);
    let f = m.cit.extract(&x).unwrap();
    assert!(!f.pretrained);
    assert_eq!(f.features.dims(), &[2, 64, 8, 8]);
    let vals: Vec<f32> = f.features.flatten_all().unwrap().to_vec1().unwrap();
    assert!(vals.iter().all(|v| *v >= 0.0));
    let g = m.cit.extract(&x).unwrap();
    assert_eq!(max_abs(&(&f.features - &g.features).unwrap()), 0.0);
    assert_eq!(m.cit.classify(&x).unwrap().dims(), &[2, 6]);
    assert_eq!(m.cit.color_embedding(&rand_tensor(6, &[3, 3, 64, 64], DType::F32)).unwrap().dims(), &[3, 192]);
    assert!(m.cit.extract(&rand_tensor(5, &[1, 3, 64, 64], DType::F32)).is_err());
}

#[test]
fn cvt_encoder_contract() {
    let v = vocab();
    let cfg = NetworkConfig::toy(&v, BlockKind::Secat);
    let store = ParamStore::new(8, DType::F64);
    let enc = CvtEncoder::new(&store.root().pp("cvt"), &cfg).unwrap();
    let zero = Tensor::zeros((1, 12), DType::F64, &Device::Cpu).unwrap();
    let (m1, s1) = enc.forward(&zero).unwrap();
    let (m2, s2) = enc.forward(&zero).unwrap();
    assert_eq!(m1.dims(), &[1, 16, 8, 8]);
    let (s1, s2) = (s1.unwrap(), s2.unwrap());
    assert_eq!(s1.dims(), &[1, 64]);
    assert_eq!(max_abs(&(&m1 - &m2).unwrap()), 0.0);
    assert_eq!(max_abs(&(&s1 - &s2).unwrap()), 0.0);
    assert!(max_abs(&s1).is_finite());
    assert!(enc.forward(&Tensor::zeros((1, 11), DType::F64, &Device::Cpu).unwrap()).is_err());

    // Every pair of distinct one-color-per-category tag sets maps to distinct styles.
    let hair = v.colors_for(crate::tagspace::Region::Hair);
    let eyes = v.colors_for(crate::tagspace::Region::Eyes);
    let garm = v.colors_for(crate::tagspace::Region::Garment);
    let mut styles = Vec::new();
    for &h in &hair {
        for &e in &eyes {
            for &g in &garm {
                let names = [v.name_at(crate::tagspace::TagKind::Cvt, h).unwrap(), v.name_at(crate::tagspace::TagKind::Cvt, e).unwrap(), v.name_at(crate::tagspace::TagKind::Cvt, g).unwrap()];
                let (_, s) = enc.forward(&cvt_for(&v, &names, DType::F64)).unwrap();
                styles.push(s.unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap());
            }
        }
    }
    assert_eq!(styles.len(), 64);
    for i in 0..styles.len() {
        for j in i + 1..styles.len() {
            assert_ne!(styles[i], styles[j], "style collision {i} {j}");
        }
    }
}

#[test]
fn discriminator_contract() {
    let v = vocab();
    let m = Model::new(NetworkConfig::toy(&v, BlockKind::Secat), 9, DType::F32).unwrap();
    let x = candle_core::Var::from_tensor(&rand_tensor(10, &[3, 3, 64, 64], DType::F32)).unwrap();
    let out = m.discriminator.forward(x.as_tensor()).unwrap();
    assert_eq!(out.adv.dims(), &[3]);
    assert_eq!(out.cvt.dims(), &[3, 12]);
    assert_eq!(out.cit.dims(), &[3, 6]);
    for t in [&out.adv, &out.cvt, &out.cit] {
        let vals: Vec<f32> = t.flatten_all().unwrap().to_vec1().unwrap();
        assert!(vals.iter().all(|p| *p > 0.0 && *p < 1.0));
    }
    let grads = out.adv.sum_all().unwrap().backward().unwrap();
    let g = grads.get(x.as_tensor()).expect("input gradient");
    let gv: Vec<f32> = g.flatten_all().unwrap().to_vec1().unwrap();
    assert!(gv.iter().all(|v| v.is_finite()) && gv.iter().any(|v| *v != 0.0));
}

#[test]
fn generator_does_not_backprop_into_cit() {
    let v = vocab();
    let m = Model::new(NetworkConfig::miniature(&v, BlockKind::Secat), 11, DType::F32).unwrap();
    let x = rand_tensor(12, &[1, 1, 16, 16], DType::F32);
    let out = m.generator.forward(&x, &cvt_for(&v, &["blue_hair"], DType::F32)).unwrap();
    let grads = out.full.sqr().unwrap().sum_all().unwrap().backward().unwrap();
    for (name, var) in m.store.vars_with_prefix(CIT_PREFIX) {
        assert!(grads.get(var.as_tensor()).is_none(), "{name} received a gradient");
    }
    let (_, enc) = &m.store.vars_with_prefix("gen.enc0.")[0];
    assert!(grads.get(enc.as_tensor()).is_some());
}

#[test]
fn same_seed_same_weights() {
    let v = vocab();
    let a = Model::new(NetworkConfig::miniature(&v, BlockKind::Adain), 3, DType::F32).unwrap();
    let b = Model::new(NetworkConfig::miniature(&v, BlockKind::Adain), 3, DType::F32).unwrap();
    assert_eq!(a.store.hash("").unwrap(), b.store.hash("").unwrap());
}

fn generator_counts(cfg_of: impl Fn(BlockKind) -> NetworkConfig) -> BTreeMap<BlockKind, usize> {
    BlockKind::ALL
        .into_iter()
        .map(|k| {
            let m = Model::new(cfg_of(k), 0, DType::F32).unwrap();
            (k, m.store.count(GEN_PREFIX))
        })
        .collect()
}

#[test]
fn generator_param_ordering_and_se_branch_size() {
    let v = vocab();
    let counts = generator_counts(|k| NetworkConfig::toy(&v, k));
    let c = |k| counts[&k];
    assert!(c(BlockKind::Resnext) < c(BlockKind::SeResnext));
    assert!(c(BlockKind::SeResnext) <= c(BlockKind::Secat));
    assert!(c(BlockKind::Secat) < c(BlockKind::ConcatFront));
    assert!(c(BlockKind::ConcatFront) < c(BlockKind::ConcatAll));

    // secat − resnext: one style-conditioned excitation per block plus the
    // style MLP, all in closed form.
    let fc = |i: usize, o: usize| i * o + o;
    let se: usize = [64usize, 32, 16]
        .iter()
        .map(|&ch| {
            let h = Excite::hidden(ch, 64);
            fc(ch + 64, h) + fc(h, ch)
        })
        .sum();
    let mlp = fc(12, 64) + fc(64, 64);
    assert_eq!(c(BlockKind::Secat) - c(BlockKind::Resnext), se + mlp);

    // Per-block counts agree with the closed-form block formula.
    for k in BlockKind::ALL {
        let m = Model::new(NetworkConfig::toy(&v, k), 0, DType::F32).unwrap();
        for (i, w) in [64usize, 32, 16].into_iter().enumerate() {
            let n = m.store.count(&format!("gen.dec{i}.block."));
            assert_eq!(n, block_param_count(&BlockConfig::new(k, w, 64)), "{k} dec{i}");
        }
    }
    assert_eq!(counts, generator_counts(|k| NetworkConfig::toy(&v, k)));
}

#[test]
fn end_to_end_gradient_check_miniature() {
    let v = vocab();
    for kind in [BlockKind::Secat, BlockKind::Adain] {
        let m = Model::new(NetworkConfig::miniature(&v, kind), 13, DType::F64).unwrap();
        let x = rand_tensor(14, &[2, 1, 16, 16], DType::F64);
        let cvt = Tensor::cat(
            &[cvt_for(&v, &["blue_hair", "red_eyes"], DType::F64), cvt_for(&v, &["black_hair", "pink_shirt"], DType::F64)],
            0,
        )
        .unwrap();
        let loss = || m.generator.forward(&x, &cvt).unwrap().full.sqr().unwrap().sum_all().unwrap();
        let coords = gradcheck::sample_coords(&m.store, GEN_PREFIX, 10, 15);
        let report = gradcheck::check(&m.store, &coords, loss, 1e-3, 1e-2);
        assert!(report.failures.is_empty(), "{kind}: {:#?}", report.failures);
        assert!(report.checked >= 8, "{kind}: {report:?}");
    }
}
