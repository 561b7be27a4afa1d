//! Image-set metrics: a Fréchet distance over learned features, and two
//! mask-based color scores that use the synthetic region labels.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use candle_core::DType;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::blocks::BlockKind;
use crate::error::{Error, IoContext, Result};
use crate::imaging::{ColorImage, MaskImage};
use crate::nets::{color_batch, CitExtractor, Discriminator};
use crate::synthdata::{region_mean, SampleRecord, SpriteSpec};
use crate::tagspace::{Region, TagKind, TagVocabulary};

/// Negative eigenvalues above `-EIG_CLIP` are treated as zero.
pub const EIG_CLIP: f64 = 1e-6;

/// Maps images to fixed-length feature vectors.
pub trait FeatureExtractor {
    fn dim(&self) -> usize;
    /// Side length images are resized to before embedding.
    fn input_size(&self) -> usize;
    fn embed(&self, images: &[&ColorImage]) -> Result<Vec<Vec<f64>>>;
}

/// The CIT trunk applied per color plane, globally pooled.
#[derive(Debug, Clone)]
pub struct CitColorFeatures {
    pub cit: CitExtractor,
    pub image_size: usize,
    pub channels: usize,
    pub dtype: DType,
}

impl FeatureExtractor for CitColorFeatures {
    fn dim(&self) -> usize {
        3 * self.channels
    }

    fn input_size(&self) -> usize {
        self.image_size
    }

    fn embed(&self, images: &[&ColorImage]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let x = color_batch(chunk, self.dtype, &candle_core::Device::Cpu)?;
            let e = self.cit.color_embedding(&x)?.to_dtype(DType::F64)?;
            out.extend(e.to_vec2::<f64>()?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
}

impl FeatureStats {
    /// Mean and covariance (denominator `n - 1`) of the rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidParam(format!(
                "feature statistics need at least 2 samples, got {}",
                rows.len()
            )));
        }
        let d = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::LengthMismatch { expected: d, got: r.len() });
        }
        let n = rows.len();
        let m = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mu = DVector::from_fn(d, |j, _| m.column(j).mean());
        let mut centered = m;
        for j in 0..d {
            let mj = mu[j];
            centered.column_mut(j).add_scalar_mut(-mj);
        }
        let mut sigma = centered.transpose() * &centered / (n - 1) as f64;
        sigma = (&sigma + sigma.transpose()) * 0.5;
        Ok(Self { mu, sigma, n })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

pub fn feature_stats(images: &[&ColorImage], extractor: &dyn FeatureExtractor) -> Result<FeatureStats> {
    if images.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "feature statistics need at least 2 images, got {}",
            images.len()
        )));
    }
    let size = extractor.input_size();
    let resized: Vec<ColorImage>;
    let inputs: Vec<&ColorImage> = if images.iter().all(|i| i.width == size && i.height == size) {
        images.to_vec()
    } else {
        resized = images.iter().map(|i| i.resized(size, size)).collect();
        resized.iter().collect()
    };
    FeatureStats::from_rows(&extractor.embed(&inputs)?)
}

/// PSD square root of a symmetric matrix; eigenvalues in `(-EIG_CLIP, 0)`
/// are clipped to zero, more negative ones are an error.
fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -EIG_CLIP * scale {
            return Err(Error::InvalidParam(format!("{what} is not positive semidefinite (eigenvalue {v})")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^½)`, with the cross term computed as
/// the trace of `(√Σa Σb √Σa)^½`.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::LengthMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let diff = &a.mu - &b.mu;
    let sa = psd_sqrt(&a.sigma, "first covariance")?;
    let inner = &sa * &b.sigma * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = psd_sqrt(&inner, "covariance product")?.trace();
    let d = diff.dot(&diff) + a.sigma.trace() + b.sigma.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

pub fn fid_between(a: &[&ColorImage], b: &[&ColorImage], extractor: &dyn FeatureExtractor) -> Result<f64> {
    frechet_distance(&feature_stats(a, extractor)?, &feature_stats(b, extractor)?)
}

/// PNG files directly inside `dir`, sorted by name.
pub fn load_png_dir(dir: &Path) -> Result<Vec<ColorImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset(format!("no PNG images in {}", dir.display())));
    }
    paths.iter().map(|p| ColorImage::load_png(p)).collect()
}

/// Fréchet distance between the PNG sets of two directories.
pub fn fid_toy(generated_dir: &Path, reference_dir: &Path, extractor: &dyn FeatureExtractor) -> Result<f64> {
    let a = load_png_dir(generated_dir)?;
    let b = load_png_dir(reference_dir)?;
    fid_between(&a.iter().collect::<Vec<_>>(), &b.iter().collect::<Vec<_>>(), extractor)
}

fn dist2(a: [f32; 3], b: [f32; 3]) -> f32 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Index into `candidates` of the color nearest to `rgb`; ties go to the
/// earliest candidate.
fn nearest(vocab: &TagVocabulary, candidates: &[usize], rgb: [f32; 3]) -> usize {
    let tags = vocab.cvt_tags();
    let mut best = candidates[0];
    let mut best_d = f32::INFINITY;
    for &c in candidates {
        let d = dist2(tags[c].rgb, rgb);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn check_aligned(images: &[&ColorImage], specs: &[&SpriteSpec], masks: &[&MaskImage]) -> Result<()> {
    if images.len() != specs.len() || images.len() != masks.len() {
        return Err(Error::InvalidParam(format!(
            "{} images, {} specs, {} masks",
            images.len(),
            specs.len(),
            masks.len()
        )));
    }
    for (i, (img, m)) in images.iter().zip(masks).enumerate() {
        if img.width != m.width || img.height != m.height {
            return Err(Error::shape(format!(
                "image {i} is {}x{}, mask {}x{}",
                img.width, img.height, m.width, m.height
            )));
        }
    }
    Ok(())
}

/// Fraction of (image, colorable region) pairs whose mean color is nearest,
/// within the region's category, to the requested color.
pub fn tag_fidelity(
    images: &[&ColorImage],
    specs: &[&SpriteSpec],
    masks: &[&MaskImage],
    vocab: &TagVocabulary,
) -> Result<f64> {
    check_aligned(images, specs, masks)?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for ((img, spec), mask) in images.iter().zip(specs).zip(masks) {
        for region in Region::COLORABLE {
            let Some(mean) = region_mean(img, mask, region) else {
                continue;
            };
            let want_name = spec
                .color_for(region)
                .ok_or_else(|| Error::InvalidParam(format!("spec has no {} color", region.name())))?;
            let want = vocab
                .index_of(TagKind::Cvt, want_name)
                .ok_or_else(|| Error::UnknownTag(want_name.to_string()))?;
            let candidates = vocab.colors_for(region);
            total += 1;
            if nearest(vocab, &candidates, mean) == want {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidParam("no colorable regions in the masks".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Fraction of eye and garment pixels whose nearest color over the whole
/// table is the requested hair color.
pub fn color_bleed(
    images: &[&ColorImage],
    masks: &[&MaskImage],
    vocab: &TagVocabulary,
    specs: &[&SpriteSpec],
) -> Result<f64> {
    check_aligned(images, specs, masks)?;
    let all: Vec<usize> = (0..vocab.cvt_count()).collect();
    let mut bled = 0usize;
    let mut total = 0usize;
    for ((img, spec), mask) in images.iter().zip(specs).zip(masks) {
        let hair = vocab
            .index_of(TagKind::Cvt, &spec.hair_color)
            .ok_or_else(|| Error::UnknownTag(spec.hair_color.clone()))?;
        for y in 0..img.height {
            for x in 0..img.width {
                if matches!(mask.get(x, y), Region::Eyes | Region::Garment) {
                    total += 1;
                    if nearest(vocab, &all, img.get(x, y)) == hair {
                        bled += 1;
                    }
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidParam("no eye or garment pixels in the masks".into()));
    }
    Ok(bled as f64 / total as f64)
}

/// Mean per-tag binary accuracy (threshold 0.5) of the discriminator's CVT
/// head on real images.
pub fn discriminator_cvt_accuracy(disc: &Discriminator, records: &[&SampleRecord], dtype: DType) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("no records to score".into()));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for chunk in records.chunks(64) {
        let imgs: Vec<&ColorImage> = chunk.iter().map(|r| &r.color_image).collect();
        let probs: Vec<Vec<f32>> = disc
            .forward(&color_batch(&imgs, dtype, &candle_core::Device::Cpu)?)?
            .cvt
            .to_dtype(DType::F32)?
            .to_vec2()?;
        for (rec, p) in chunk.iter().zip(probs) {
            for (j, pj) in p.iter().enumerate() {
                total += 1;
                if (*pj >= 0.5) == (rec.cvt.values[j] >= 0.5) {
                    correct += 1;
                }
            }
        }
    }
    Ok(correct as f64 / total as f64)
}

/// One trained variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub kind: BlockKind,
    pub seed: u64,
    pub fid_toy: f64,
    pub tag_fidelity: f64,
    pub color_bleed: f64,
    pub params: usize,
    /// Epoch whose snapshot the metrics come from.
    pub epoch: usize,
    pub checkpoint: Option<PathBuf>,
    /// Set when the variant failed; metrics are then NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schedule_hash: String,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Fixed columns: kind, fid_toy, tag_fidelity, color_bleed, params.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<14} {:>10} {:>13} {:>12} {:>10}\n",
            "kind", "fid_toy", "tag_fidelity", "color_bleed", "params"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<14} {:>10.4} {:>13.4} {:>12.4} {:>10}{}",
                r.kind.name(),
                r.fid_toy,
                r.tag_fidelity,
                r.color_bleed,
                r.params,
                r.error.as_ref().map(|e| format!("  (failed: {e})")).unwrap_or_default()
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{render_sprite, sample_spec};
    use proptest::prelude::*;

    fn stats_1d(mu: f64, var: f64) -> FeatureStats {
        FeatureStats {
            mu: DVector::from_vec(vec![mu]),
            sigma: DMatrix::from_vec(1, 1, vec![var]),
            n: 2,
        }
    }

    #[test]
    fn stats_examples() {
        let s = FeatureStats::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(s.mu[0], 1.0);
        assert_eq!(s.sigma[(0, 0)], 2.0);
        let same = FeatureStats::from_rows(&vec![vec![1.0, -2.0, 3.0]; 5]).unwrap();
        assert!(same.sigma.iter().all(|v| *v == 0.0));
        assert!(FeatureStats::from_rows(&[vec![1.0]]).is_err());
        assert!(FeatureStats::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn frechet_examples() {
        let d = frechet_distance(&stats_1d(0.0, 1.0), &stats_1d(1.0, 4.0)).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        assert_eq!(frechet_distance(&stats_1d(3.0, 2.0), &stats_1d(3.0, 2.0)).unwrap(), 0.0);
        let three = FeatureStats {
            mu: DVector::zeros(3),
            sigma: DMatrix::identity(3, 3),
            n: 2,
        };
        assert!(frechet_distance(&stats_1d(0.0, 1.0), &three).is_err());
        let bad = FeatureStats {
            mu: DVector::zeros(2),
            sigma: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            n: 2,
        };
        assert!(frechet_distance(&bad, &bad).is_err());
    }

    #[test]
    fn frechet_diagonal_oracle() {
        let mut rng_state = 7u64;
        let mut next = || {
            rng_state = crate::synthdata::mix64(rng_state);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let d = 6;
            let (ma, mb): (Vec<f64>, Vec<f64>) = (0..d).map(|_| (next() * 4.0 - 2.0, next() * 4.0 - 2.0)).unzip();
            let (va, vb): (Vec<f64>, Vec<f64>) = (0..d).map(|_| (next() * 3.0, next() * 3.0)).unzip();
            let a = FeatureStats {
                mu: DVector::from_vec(ma.clone()),
                sigma: DMatrix::from_diagonal(&DVector::from_vec(va.clone())),
                n: 2,
            };
            let b = FeatureStats {
                mu: DVector::from_vec(mb.clone()),
                sigma: DMatrix::from_diagonal(&DVector::from_vec(vb.clone())),
                n: 2,
            };
            let oracle: f64 = (0..d)
                .map(|i| (ma[i] - mb[i]).powi(2) + (va[i].sqrt() - vb[i].sqrt()).powi(2))
                .sum();
            let got = frechet_distance(&a, &b).unwrap();
            assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
        }
    }

    fn random_psd(seed: u64, d: usize) -> FeatureStats {
        let mut s = seed;
        let mut next = || {
            s = crate::synthdata::mix64(s);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let rows: Vec<Vec<f64>> = (0..d + 3).map(|_| (0..d).map(|_| next()).collect()).collect();
        FeatureStats::from_rows(&rows).unwrap()
    }

    proptest! {
        #[test]
        fn frechet_identity_symmetry_nonnegativity(s1 in 0u64..10_000, s2 in 0u64..10_000, d in 1usize..6) {
            let a = random_psd(s1, d);
            let b = random_psd(s2, d);
            prop_assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
            for e in SymmetricEigen::new(a.sigma.clone()).eigenvalues.iter() {
                prop_assert!(*e >= -1e-8);
            }
        }
    }

    struct MeanColor;

    impl FeatureExtractor for MeanColor {
        fn dim(&self) -> usize {
            3
        }
        fn input_size(&self) -> usize {
            64
        }
        fn embed(&self, images: &[&ColorImage]) -> Result<Vec<Vec<f64>>> {
            Ok(images
                .iter()
                .map(|i| {
                    let n = i.plane_len();
                    (0..3).map(|c| i.data[c * n..(c + 1) * n].iter().map(|v| *v as f64).sum::<f64>() / n as f64).collect()
                })
                .collect())
        }
    }

    fn sprites(n: usize, seed: u64) -> (TagVocabulary, Vec<(SpriteSpec, ColorImage, MaskImage)>) {
        let v = TagVocabulary::sprite_default();
        let out = (0..n)
            .map(|i| {
                let spec = sample_spec(seed + i as u64, &v).unwrap();
                let (img, mask) = render_sprite(&spec, &v, 64).unwrap();
                (spec, img, mask)
            })
            .collect();
        (v, out)
    }

    #[test]
    fn fid_protocol_on_files() {
        let (_, s) = sprites(10, 100);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        for (i, (_, img, _)) in s.iter().enumerate() {
            img.save_png(&dir_a.path().join(format!("{i:03}.png"))).unwrap();
            // Reverse order in the second directory.
            img.save_png(&dir_b.path().join(format!("{:03}.png", 9 - i))).unwrap();
        }
        let ex = MeanColor;
        assert!(fid_toy(dir_a.path(), dir_a.path(), &ex).unwrap().abs() < 1e-9);
        assert!(fid_toy(dir_a.path(), dir_b.path(), &ex).unwrap().abs() < 1e-9);
        let noise = ColorImage::new(64, 64, (0..3 * 64 * 64).map(|i| ((i * 2654435761usize) % 1000) as f32 / 1000.0).collect()).unwrap();
        noise.save_png(&dir_b.path().join("000.png")).unwrap();
        let ab = fid_toy(dir_a.path(), dir_b.path(), &ex).unwrap();
        let ba = fid_toy(dir_b.path(), dir_a.path(), &ex).unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-9 * (1.0 + ab));
        assert!(fid_toy(tempfile::tempdir().unwrap().path(), dir_a.path(), &ex).is_err());
    }

    #[test]
    fn fidelity_and_bleed_on_ground_truth() {
        let (v, s) = sprites(40, 200);
        let imgs: Vec<&ColorImage> = s.iter().map(|x| &x.1).collect();
        let specs: Vec<&SpriteSpec> = s.iter().map(|x| &x.0).collect();
        let masks: Vec<&MaskImage> = s.iter().map(|x| &x.2).collect();
        assert_eq!(tag_fidelity(&imgs, &specs, &masks, &v).unwrap(), 1.0);
        assert_eq!(color_bleed(&imgs, &masks, &v, &specs).unwrap(), 0.0);

        let hair_filled: Vec<ColorImage> = specs
            .iter()
            .map(|sp| ColorImage::filled(64, 64, v.cvt(&sp.hair_color).unwrap().rgb))
            .collect();
        let hf: Vec<&ColorImage> = hair_filled.iter().collect();
        assert_eq!(color_bleed(&hf, &masks, &v, &specs).unwrap(), 1.0);
        assert!(tag_fidelity(&imgs, &specs[..3], &masks, &v).is_err());
    }

    #[test]
    fn fidelity_on_gray_is_near_chance() {
        let (v, s) = sprites(400, 300);
        let gray: Vec<ColorImage> = (0..s.len()).map(|_| ColorImage::filled(64, 64, [0.5; 3])).collect();
        let imgs: Vec<&ColorImage> = gray.iter().collect();
        let specs: Vec<&SpriteSpec> = s.iter().map(|x| &x.0).collect();
        let masks: Vec<&MaskImage> = s.iter().map(|x| &x.2).collect();
        let f = tag_fidelity(&imgs, &specs, &masks, &v).unwrap();
        assert!((f - 0.25).abs() < 0.05, "{f}");
    }

    #[test]
    fn counting_examples() {
        let v = TagVocabulary::sprite_default();
        let spec = SpriteSpec {
            hair_color: "blue_hair".into(),
            eye_color: "red_eyes".into(),
            garment_color: "white_shirt".into(),
            cit_attrs: Default::default(),
            geometry_seed: 0,
        };
        // Left column hair, then four eye pixels, four garment pixels.
        let mut mask = MaskImage::filled(3, 4, Region::Background);
        let mut img = ColorImage::filled(3, 4, [1.0; 3]);
        let blue = v.cvt("blue_hair").unwrap().rgb;
        let green = v.cvt("green_eyes").unwrap().rgb;
        let navy = v.cvt("navy_shirt").unwrap().rgb;
        for y in 0..4 {
            mask.set(0, y, Region::Hair);
            img.set(0, y, blue);
            mask.set(1, y, Region::Eyes);
            img.set(1, y, if y < 2 { blue } else { green });
            mask.set(2, y, Region::Garment);
            img.set(2, y, navy);
        }
        let f = tag_fidelity(&[&img], &[&spec], &[&mask], &v).unwrap();
        assert!((f - 1.0 / 3.0).abs() < 1e-12);
        let b = color_bleed(&[&img], &[&mask], &v, &[&spec]).unwrap();
        assert!((b - 0.25).abs() < 1e-12);
    }

    #[test]
    fn report_table_columns() {
        let r = EvalReport {
            schedule_hash: "x".into(),
            rows: vec![EvalRow {
                kind: BlockKind::Secat,
                seed: 1,
                fid_toy: 1.5,
                tag_fidelity: 0.75,
                color_bleed: 0.01,
                params: 1234,
                epoch: 3,
                checkpoint: None,
                error: None,
            }],
        };
        let t = r.to_table();
        let header: Vec<&str> = t.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["kind", "fid_toy", "tag_fidelity", "color_bleed", "params"]);
        assert!(t.contains("secat"));
    }
}
