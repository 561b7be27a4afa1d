//! Tag vocabulary and multi-hot tag encodings.
//!
//! Two alphabets condition the networks: color-variant tags (CVTs, e.g.
//! `blue_hair`), which a user supplies, and color-invariant tags (CITs,
//! e.g. `hat`), which describe shape and are inferred from the line art.
//! Every CVT belongs to exactly one colorable [`Region`] and carries a
//! canonical RGB value used by the synthetic renderer and the metrics.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

/// Current version of the text manifest format.
pub const VOCAB_MANIFEST_VERSION: u32 = 1;

/// Per-pixel region labels. The discriminant is the value stored in mask PNGs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Region {
    Background = 0,
    Skin = 1,
    Hair = 2,
    Eyes = 3,
    Garment = 4,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::Background,
        Region::Skin,
        Region::Hair,
        Region::Eyes,
        Region::Garment,
    ];

    /// Regions whose color is chosen by a CVT, in canonical order.
    pub const COLORABLE: [Region; 3] = [Region::Hair, Region::Eyes, Region::Garment];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Option<Region> {
        Region::ALL.get(label as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Background => "background",
            Region::Skin => "skin",
            Region::Hair => "hair",
            Region::Eyes => "eyes",
            Region::Garment => "garment",
        }
    }

    fn parse_colorable(s: &str) -> Option<Region> {
        Region::COLORABLE.into_iter().find(|r| r.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagKind {
    Cvt,
    Cit,
}

/// A color-variant tag: name, the region it colors, and its canonical color.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorTag {
    pub name: String,
    pub region: Region,
    pub rgb: [f32; 3],
}

/// Ordered CVT and CIT symbol tables.
///
/// Immutable once built; share it behind an `Arc` freely.
#[derive(Debug, Clone)]
pub struct TagVocabulary {
    cvt: Vec<ColorTag>,
    cit_names: Vec<String>,
    cvt_index: HashMap<String, usize>,
    cit_index: HashMap<String, usize>,
}

impl PartialEq for TagVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.cvt == other.cvt && self.cit_names == other.cit_names
    }
}

impl TagVocabulary {
    pub fn new(cvt: Vec<ColorTag>, cit_names: Vec<String>) -> Result<Self> {
        let mut cvt_index = HashMap::with_capacity(cvt.len());
        for (i, tag) in cvt.iter().enumerate() {
            validate_name(&tag.name)?;
            if cvt_index.insert(tag.name.clone(), i).is_some() {
                return Err(Error::InvalidParam(format!("duplicate CVT `{}`", tag.name)));
            }
            if tag.rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::InvalidParam(format!(
                    "canonical color of `{}` outside [0,1]",
                    tag.name
                )));
            }
        }
        let mut cit_index = HashMap::with_capacity(cit_names.len());
        for (i, name) in cit_names.iter().enumerate() {
            validate_name(name)?;
            if cvt_index.contains_key(name) {
                return Err(Error::InvalidParam(format!(
                    "`{name}` appears in both CVT and CIT lists"
                )));
            }
            if cit_index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidParam(format!("duplicate CIT `{name}`")));
            }
        }
        Ok(Self {
            cvt,
            cit_names,
            cvt_index,
            cit_index,
        })
    }

    /// The built-in desk-scale vocabulary: 4 hair, 4 eye and 4 garment colors, 6 CITs.
    pub fn sprite_default() -> Self {
        Self::from_manifest_str(DEFAULT_MANIFEST).expect("built-in vocabulary manifest is valid")
    }

    pub fn cvt_tags(&self) -> &[ColorTag] {
        &self.cvt
    }

    pub fn cvt_names(&self) -> impl Iterator<Item = &str> {
        self.cvt.iter().map(|t| t.name.as_str())
    }

    pub fn cit_names(&self) -> &[String] {
        &self.cit_names
    }

    pub fn cvt_count(&self) -> usize {
        self.cvt.len()
    }

    pub fn cit_count(&self) -> usize {
        self.cit_names.len()
    }

    pub fn len(&self, kind: TagKind) -> usize {
        match kind {
            TagKind::Cvt => self.cvt.len(),
            TagKind::Cit => self.cit_names.len(),
        }
    }

    pub fn index_of(&self, kind: TagKind, name: &str) -> Option<usize> {
        match kind {
            TagKind::Cvt => self.cvt_index.get(name).copied(),
            TagKind::Cit => self.cit_index.get(name).copied(),
        }
    }

    pub fn name_at(&self, kind: TagKind, index: usize) -> Option<&str> {
        match kind {
            TagKind::Cvt => self.cvt.get(index).map(|t| t.name.as_str()),
            TagKind::Cit => self.cit_names.get(index).map(String::as_str),
        }
    }

    pub fn cvt(&self, name: &str) -> Option<&ColorTag> {
        self.cvt_index.get(name).map(|&i| &self.cvt[i])
    }

    /// Indices (into the CVT table) of the colors available for `region`.
    pub fn colors_for(&self, region: Region) -> Vec<usize> {
        self.cvt
            .iter()
            .enumerate()
            .filter(|(_, t)| t.region == region)
            .map(|(i, _)| i)
            .collect()
    }

    /// Encode a set of tag names as a multi-hot vector.
    pub fn encode<S: AsRef<str>>(&self, tags: &[S], kind: TagKind) -> Result<TagVector> {
        let mut values = vec![0.0; self.len(kind)];
        for tag in tags {
            let tag = tag.as_ref();
            let i = self
                .index_of(kind, tag)
                .ok_or_else(|| Error::UnknownTag(tag.to_string()))?;
            values[i] = 1.0;
        }
        Ok(TagVector { values, kind })
    }

    /// Inverse of [`TagVocabulary::encode`].
    pub fn decode(&self, vec: &TagVector) -> Result<BTreeSet<String>> {
        let expected = self.len(vec.kind);
        if vec.values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: vec.values.len(),
            });
        }
        Ok(vec
            .values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.5)
            .map(|(i, _)| self.name_at(vec.kind, i).unwrap().to_string())
            .collect())
    }

    pub fn to_manifest_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "version = {VOCAB_MANIFEST_VERSION}");
        out.push_str("[cvt]\n");
        for t in &self.cvt {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                t.name,
                t.region.name(),
                t.rgb[0],
                t.rgb[1],
                t.rgb[2]
            );
        }
        out.push_str("[cit]\n");
        for name in &self.cit_names {
            let _ = writeln!(out, "{name}");
        }
        out
    }

    /// Parse the text manifest: a `version = N` line, then one tag per line
    /// under `[cvt]` (`name region r g b`) and `[cit]` (`name`) headers.
    /// `#` starts a comment.
    pub fn from_manifest_str(text: &str) -> Result<Self> {
        #[derive(PartialEq)]
        enum Section {
            Preamble,
            Cvt,
            Cit,
        }
        let mut section = Section::Preamble;
        let mut version = None;
        let mut cvt = Vec::new();
        let mut cit = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::VocabParse {
                line: lineno + 1,
                msg,
            };
            match line {
                "[cvt]" => {
                    section = Section::Cvt;
                    continue;
                }
                "[cit]" => {
                    section = Section::Cit;
                    continue;
                }
                _ => {}
            }
            match section {
                Section::Preamble => {
                    let value = line
                        .strip_prefix("version")
                        .and_then(|r| r.trim_start().strip_prefix('='))
                        .ok_or_else(|| err(format!("expected `version = N`, got `{line}`")))?;
                    let v: u32 = value
                        .trim()
                        .parse()
                        .map_err(|_| err(format!("bad version `{}`", value.trim())))?;
                    if v != VOCAB_MANIFEST_VERSION {
                        return Err(Error::UnsupportedVersion {
                            what: "vocabulary manifest",
                            found: v,
                            supported: VOCAB_MANIFEST_VERSION,
                        });
                    }
                    version = Some(v);
                }
                Section::Cvt => {
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    if fields.len() != 5 {
                        return Err(err(format!(
                            "CVT line needs `name region r g b`, got `{line}`"
                        )));
                    }
                    let region = Region::parse_colorable(fields[1])
                        .ok_or_else(|| err(format!("unknown region `{}`", fields[1])))?;
                    let mut rgb = [0f32; 3];
                    for (c, f) in rgb.iter_mut().zip(&fields[2..]) {
                        *c = f.parse().map_err(|_| err(format!("bad color value `{f}`")))?;
                    }
                    cvt.push(ColorTag {
                        name: fields[0].to_string(),
                        region,
                        rgb,
                    });
                }
                Section::Cit => {
                    if line.split_whitespace().count() != 1 {
                        return Err(err(format!("CIT line must be a single name, got `{line}`")));
                    }
                    cit.push(line.to_string());
                }
            }
        }
        if version.is_none() {
            return Err(Error::VocabParse {
                line: 0,
                msg: "missing `version = N` line".into(),
            });
        }
        Self::new(cvt, cit)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_manifest_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_manifest_string()).at(path)
    }

    /// SHA-256 (hex) of the canonical manifest text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_manifest_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(|c: char| c.is_whitespace() || c == ',' || c == '#') {
        return Err(Error::InvalidParam(format!("invalid tag name `{name}`")));
    }
    Ok(())
}

/// Dense 0/1 vector over one tag alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagVector {
    pub values: Vec<f32>,
    pub kind: TagKind,
}

impl TagVector {
    pub fn zeros(len: usize, kind: TagKind) -> Self {
        Self {
            values: vec![0.0; len],
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.5).count()
    }
}

const DEFAULT_MANIFEST: &str = "\
# desk-scale sprite vocabulary
version = 1
[cvt]
blonde_hair hair 0.95 0.82 0.35
blue_hair hair 0.2 0.3 0.9
red_hair hair 0.8 0.15 0.15
black_hair hair 0.12 0.1 0.14
red_eyes eyes 0.95 0.1 0.4
blue_eyes eyes 0.1 0.6 0.95
green_eyes eyes 0.15 0.75 0.25
purple_eyes eyes 0.6 0.25 0.8
white_shirt garment 0.95 0.95 0.95
pink_shirt garment 1 0.62 0.78
green_shirt garment 0.35 0.6 0.3
navy_shirt garment 0.15 0.2 0.45
[cit]
hat
ribbon
twintails
short_hair
skirt
open_mouth
";

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> TagVocabulary {
        let tag = |name: &str, region| ColorTag {
            name: name.into(),
            region,
            rgb: [0.5; 3],
        };
        TagVocabulary::new(
            vec![
                tag("blue_hair", Region::Hair),
                tag("red_eyes", Region::Eyes),
                tag("blonde_hair", Region::Hair),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn encode_multi_hot() {
        let v = toy();
        let e = v.encode(&["blue_hair", "red_eyes"], TagKind::Cvt).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 0.0]);
        let empty: [&str; 0] = [];
        assert_eq!(v.encode(&empty, TagKind::Cvt).unwrap().values, vec![0.0; 3]);
    }

    #[test]
    fn encode_rejects_unknown() {
        match toy().encode(&["green_hair"], TagKind::Cvt) {
            Err(Error::UnknownTag(t)) => assert_eq!(t, "green_hair"),
            other => panic!("expected unknown tag, got {other:?}"),
        }
    }

    #[test]
    fn decode_inverse_and_length_check() {
        let v = toy();
        let set = v
            .decode(&TagVector {
                values: vec![1.0, 1.0, 0.0],
                kind: TagKind::Cvt,
            })
            .unwrap();
        assert_eq!(
            set,
            BTreeSet::from(["blue_hair".to_string(), "red_eyes".to_string()])
        );
        assert!(v.decode(&TagVector::zeros(3, TagKind::Cvt)).unwrap().is_empty());
        assert!(matches!(
            v.decode(&TagVector::zeros(2, TagKind::Cvt)),
            Err(Error::LengthMismatch {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn default_vocabulary_shape() {
        let v = TagVocabulary::sprite_default();
        assert_eq!(v.cvt_count(), 12);
        assert_eq!(v.cit_count(), 6);
        for r in Region::COLORABLE {
            assert_eq!(v.colors_for(r).len(), 4);
        }
    }

    #[test]
    fn manifest_rejects_bad_input() {
        assert!(matches!(
            TagVocabulary::from_manifest_str("version = 2\n[cvt]\n"),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
        assert!(TagVocabulary::from_manifest_str("[cvt]\nx hair 0 0 0\n").is_err());
        let dup = "version = 1\n[cvt]\nx hair 0 0 0\n[cit]\nx\n";
        assert!(TagVocabulary::from_manifest_str(dup).is_err());
        let region = "version = 1\n[cvt]\nx tail 0 0 0\n";
        assert!(matches!(
            TagVocabulary::from_manifest_str(region),
            Err(Error::VocabParse { line: 3, .. })
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = TagVocabulary::sprite_default();
        let text = a.to_manifest_string().replace("0.95 0.82 0.35", "0.9 0.8 0.3");
        let b = TagVocabulary::from_manifest_str(&text).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), TagVocabulary::sprite_default().hash());
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(mask in proptest::collection::vec(any::<bool>(), 12)) {
            let v = TagVocabulary::sprite_default();
            let names: Vec<&str> = v
                .cvt_names()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(n, _)| n)
                .collect();
            let enc = v.encode(&names, TagKind::Cvt).unwrap();
            prop_assert_eq!(enc.count_ones(), names.len());
            let dec = v.decode(&enc).unwrap();
            let expected: BTreeSet<String> = names.iter().map(|s| s.to_string()).collect();
            prop_assert_eq!(dec, expected);
        }

        #[test]
        fn manifest_roundtrip(cit_mask in proptest::collection::vec(any::<bool>(), 6)) {
            let base = TagVocabulary::sprite_default();
            let cits: Vec<String> = base
                .cit_names()
                .iter()
                .zip(&cit_mask)
                .filter(|(_, &m)| m)
                .map(|(n, _)| n.clone())
                .collect();
            let v = TagVocabulary::new(base.cvt_tags().to_vec(), cits).unwrap();
            let back = TagVocabulary::from_manifest_str(&v.to_manifest_string()).unwrap();
            prop_assert_eq!(&back, &v);
            for (i, n) in back.cit_names().iter().enumerate() {
                prop_assert_eq!(back.index_of(TagKind::Cit, n), Some(i));
            }
        }
    }
}
