//! On-disk sprite datasets.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json     format version, vocabulary hash, seed, size, split, entries
//! vocab.txt         the vocabulary manifest the dataset was generated with
//! img/{id}.png      RGB illustration
//! mask/{id}.png     8-bit single channel, pixel value = region label
//! tags/{id}.txt     `cvt: a,b,c` / `cit: x,y` lines
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::render::{render_sprite, sample_spec, SpriteSpec};
use crate::error::{Error, IoContext, Result};
use crate::imaging::{ColorImage, GrayImage, MaskImage};
use crate::lineart::{self, XdogParams};
use crate::tagspace::{TagVector, TagVocabulary};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub img: String,
    pub mask: String,
    pub tags: String,
    pub spec: SpriteSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// False when generation failed part-way; loaders refuse such datasets.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub vocab_hash: String,
    pub seed: u64,
    pub size: usize,
    pub n: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).at(&path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Other(format!("{}: missing format_version", path.display())))?;
        if version != DATASET_FORMAT_VERSION as u64 {
            return Err(Error::UnsupportedVersion {
                what: "dataset manifest",
                found: version as u32,
                supported: DATASET_FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// One paired training unit.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub id: String,
    pub split: Split,
    pub spec: SpriteSpec,
    pub line_art: GrayImage,
    pub color_image: ColorImage,
    pub cvt: TagVector,
    pub cit: TagVector,
    pub masks: MaskImage,
}

/// 64-bit mixing function (splitmix64 finalizer).
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn record_seed(seed: u64, index: usize) -> u64 {
    mix64(seed ^ mix64(index as u64))
}

/// Exactly `n / 10` test indices: the ones with the smallest index hashes.
pub fn split_assignment(n: usize, seed: u64) -> Vec<Split> {
    let test_count = n / 10;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (mix64(seed.rotate_left(17) ^ (i as u64).wrapping_mul(0xA24B_AED4_963E_E407)), i));
    let mut split = vec![Split::Train; n];
    for &i in &order[..test_count] {
        split[i] = Split::Test;
    }
    split
}

/// Render `n` sprites into `out_dir` and write the manifest last.
pub fn build_dataset(
    n: usize,
    size: usize,
    seed: u64,
    vocab: &TagVocabulary,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidParam("dataset needs at least one sample".into()));
    }
    for sub in ["img", "mask", "tags"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).at(&d)?;
    }
    vocab.save(&out_dir.join(VOCAB_FILE))?;
    let splits = split_assignment(n, seed);
    let mut manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        complete: false,
        error: None,
        vocab_hash: vocab.hash(),
        seed,
        size,
        n,
        train_count: splits.iter().filter(|&&s| s == Split::Train).count(),
        test_count: splits.iter().filter(|&&s| s == Split::Test).count(),
        entries: Vec::with_capacity(n),
    };
    let result = (0..n).try_for_each(|i| -> Result<()> {
        let spec = sample_spec(record_seed(seed, i), vocab)?;
        let (img, mask) = render_sprite(&spec, vocab, size)?;
        let id = format!("{i:06}");
        let entry = ManifestEntry {
            img: format!("img/{id}.png"),
            mask: format!("mask/{id}.png"),
            tags: format!("tags/{id}.txt"),
            split: splits[i],
            spec,
            id,
        };
        img.save_png(&out_dir.join(&entry.img))?;
        mask.save_png(&out_dir.join(&entry.mask))?;
        let tags_path = out_dir.join(&entry.tags);
        let cits: Vec<&str> = entry.spec.cit_attrs.iter().map(String::as_str).collect();
        let text = format!(
            "cvt: {}\ncit: {}\n",
            entry.spec.color_tags().join(","),
            cits.join(",")
        );
        fs::write(&tags_path, text).at(&tags_path)?;
        manifest.entries.push(entry);
        Ok(())
    });
    if let Err(e) = result {
        manifest.error = Some(e.to_string());
        let path = out_dir.join(MANIFEST_FILE);
        // best effort: mark the partial output as invalid
        let _ = manifest.to_json().map(|j| fs::write(&path, j));
        return Err(e);
    }
    manifest.complete = true;
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()?).at(&path)?;
    Ok(manifest)
}

/// An in-memory dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub vocab: TagVocabulary,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    /// Load a dataset, checking its version, completeness and vocabulary.
    ///
    /// With `expected_vocab`, the dataset must have been generated with
    /// that exact vocabulary.
    pub fn load(dir: &Path, expected_vocab: Option<&TagVocabulary>) -> Result<Self> {
        let manifest = DatasetManifest::load(dir)?;
        if !manifest.complete {
            return Err(Error::Other(format!(
                "{}: dataset generation did not complete ({})",
                dir.display(),
                manifest.error.as_deref().unwrap_or("no error recorded")
            )));
        }
        let vocab = TagVocabulary::load(&dir.join(VOCAB_FILE))?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(Error::VocabHashMismatch {
                expected: manifest.vocab_hash.clone(),
                found: vocab.hash(),
            });
        }
        if let Some(v) = expected_vocab {
            if v.hash() != manifest.vocab_hash {
                return Err(Error::VocabHashMismatch {
                    expected: v.hash(),
                    found: manifest.vocab_hash.clone(),
                });
            }
        }
        let xdog = XdogParams::sprite_default(manifest.size);
        let records = manifest
            .entries
            .iter()
            .map(|e| {
                let color_image = ColorImage::load_png(&dir.join(&e.img))?;
                let masks = MaskImage::load_png(&dir.join(&e.mask))?;
                if color_image.width != manifest.size || masks.width != manifest.size {
                    return Err(Error::shape(format!("{}: size differs from manifest", e.id)));
                }
                Ok(SampleRecord {
                    id: e.id.clone(),
                    split: e.split,
                    line_art: lineart::extract(&color_image, &xdog)?,
                    cvt: e.spec.cvt_vector(&vocab)?,
                    cit: e.spec.cit_vector(&vocab)?,
                    spec: e.spec.clone(),
                    color_image,
                    masks,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            root: dir.to_path_buf(),
            manifest,
            vocab,
            records,
        })
    }

    /// Render a dataset directly in memory, without touching disk.
    pub fn synthesize(n: usize, size: usize, seed: u64, vocab: &TagVocabulary) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParam("dataset needs at least one sample".into()));
        }
        let splits = split_assignment(n, seed);
        let xdog = XdogParams::sprite_default(size);
        let mut entries = Vec::with_capacity(n);
        let mut records = Vec::with_capacity(n);
        for (i, &split) in splits.iter().enumerate() {
            let spec = sample_spec(record_seed(seed, i), vocab)?;
            let (color_image, masks) = render_sprite(&spec, vocab, size)?;
            let id = format!("{i:06}");
            entries.push(ManifestEntry {
                img: format!("img/{id}.png"),
                mask: format!("mask/{id}.png"),
                tags: format!("tags/{id}.txt"),
                split,
                spec: spec.clone(),
                id: id.clone(),
            });
            records.push(SampleRecord {
                id,
                split,
                line_art: lineart::extract(&color_image, &xdog)?,
                cvt: spec.cvt_vector(vocab)?,
                cit: spec.cit_vector(vocab)?,
                spec,
                color_image,
                masks,
            });
        }
        let test_count = n / 10;
        Ok(Self {
            root: PathBuf::new(),
            manifest: DatasetManifest {
                format_version: DATASET_FORMAT_VERSION,
                complete: true,
                error: None,
                vocab_hash: vocab.hash(),
                seed,
                size,
                n,
                train_count: n - test_count,
                test_count,
                entries,
            },
            vocab: vocab.clone(),
            records,
        })
    }

    pub fn size(&self) -> usize {
        self.manifest.size
    }

    pub fn split(&self, split: Split) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn train(&self) -> Vec<&SampleRecord> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> Vec<&SampleRecord> {
        self.split(Split::Test)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}
