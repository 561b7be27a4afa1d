//! Procedural character sprites with exact per-region ground truth.

use std::collections::BTreeSet;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ColorImage, MaskImage};
use crate::tagspace::{Region, TagKind, TagVector, TagVocabulary};

pub const SUPPORTED_SIZES: [usize; 3] = [64, 128, 256];

pub const SKIN_RGB: [f32; 3] = [1.0, 0.88, 0.78];
pub const BACKGROUND_RGB: [f32; 3] = [1.0, 1.0, 1.0];
const MOUTH_RGB: [f32; 3] = [0.6, 0.15, 0.2];
const HAIR_SHADE: f32 = 0.88;
const FOLD_SHADE: f32 = 0.85;

/// What to draw: one color per region plus a set of shape attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpriteSpec {
    pub hair_color: String,
    pub eye_color: String,
    pub garment_color: String,
    pub cit_attrs: BTreeSet<String>,
    pub geometry_seed: u64,
}

impl SpriteSpec {
    pub fn color_for(&self, region: Region) -> Option<&str> {
        match region {
            Region::Hair => Some(&self.hair_color),
            Region::Eyes => Some(&self.eye_color),
            Region::Garment => Some(&self.garment_color),
            _ => None,
        }
    }

    pub fn color_tags(&self) -> [&str; 3] {
        [&self.hair_color, &self.eye_color, &self.garment_color]
    }

    pub fn has(&self, attr: &str) -> bool {
        self.cit_attrs.contains(attr)
    }

    pub fn cvt_vector(&self, vocab: &TagVocabulary) -> Result<TagVector> {
        vocab.encode(&self.color_tags(), TagKind::Cvt)
    }

    pub fn cit_vector(&self, vocab: &TagVocabulary) -> Result<TagVector> {
        let attrs: Vec<&str> = self.cit_attrs.iter().map(String::as_str).collect();
        vocab.encode(&attrs, TagKind::Cit)
    }

    /// Check the spec against a vocabulary: one valid color per region and
    /// only known attributes.
    pub fn validate(&self, vocab: &TagVocabulary) -> Result<()> {
        for region in Region::COLORABLE {
            let name = self.color_for(region).unwrap();
            let tag = vocab
                .cvt(name)
                .ok_or_else(|| Error::UnknownTag(name.to_string()))?;
            if tag.region != region {
                return Err(Error::InvalidParam(format!(
                    "`{name}` colors {}, not {}",
                    tag.region.name(),
                    region.name()
                )));
            }
        }
        for a in &self.cit_attrs {
            if vocab.index_of(TagKind::Cit, a).is_none() {
                return Err(Error::UnknownTag(a.clone()));
            }
        }
        Ok(())
    }
}

/// Draw a spec: uniform color per region, each CIT independently with p = 0.5.
pub fn sample_spec(seed: u64, vocab: &TagVocabulary) -> Result<SpriteSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |region: Region| -> Result<String> {
        let options = vocab.colors_for(region);
        if options.is_empty() {
            return Err(Error::InvalidParam(format!(
                "vocabulary has no {} colors",
                region.name()
            )));
        }
        let i = options[rng.random_range(0..options.len())];
        Ok(vocab.cvt_tags()[i].name.clone())
    };
    let hair_color = pick(Region::Hair)?;
    let eye_color = pick(Region::Eyes)?;
    let garment_color = pick(Region::Garment)?;
    let cit_attrs = vocab
        .cit_names()
        .iter()
        .filter(|_| rng.random_bool(0.5))
        .cloned()
        .collect();
    Ok(SpriteSpec {
        hair_color,
        eye_color,
        garment_color,
        cit_attrs,
        geometry_seed: rng.next_u64(),
    })
}

/// Shape parameters in unit coordinates (x right, y down, frame = [0,1]²).
struct Geometry {
    cx: f32,
    cy: f32,
    head_r: f32,
    eye_dx: f32,
    eye_rx: f32,
    eye_ry: f32,
    hair_bottom: f32,
    torso_half: f32,
}

impl Geometry {
    fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eye_rx = rng.random_range(0.028..0.036);
        Self {
            cx: 0.5 + rng.random_range(-0.03..0.03),
            cy: 0.36 + rng.random_range(-0.02..0.02),
            head_r: rng.random_range(0.15..0.18),
            eye_dx: rng.random_range(0.062..0.078),
            eye_rx,
            eye_ry: eye_rx * rng.random_range(1.2..1.5),
            hair_bottom: rng.random_range(0.6..0.8),
            torso_half: rng.random_range(0.17..0.21),
        }
    }
}

#[inline]
fn in_ellipse(x: f32, y: f32, cx: f32, cy: f32, rx: f32, ry: f32) -> bool {
    let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
    dx * dx + dy * dy <= 1.0
}

/// Inside the trapezoid spanning `y0..y1` whose half-width grows linearly.
#[inline]
fn in_trapezoid(x: f32, y: f32, cx: f32, y0: f32, y1: f32, half0: f32, half1: f32) -> bool {
    if y < y0 || y > y1 {
        return false;
    }
    let t = (y - y0) / (y1 - y0);
    (x - cx).abs() <= half0 + t * (half1 - half0)
}

/// Triangle bow wing: apex at `(ax, ay)`, opening toward `dir` (±1).
#[inline]
fn in_bow_wing(x: f32, y: f32, ax: f32, ay: f32, size: f32, dir: f32) -> bool {
    let u = (x - ax) * dir;
    u >= 0.0 && u <= size && (y - ay).abs() <= u * 0.8
}

/// Render a sprite. Returns the color illustration and its region mask.
pub fn render_sprite(
    spec: &SpriteSpec,
    vocab: &TagVocabulary,
    size: usize,
) -> Result<(ColorImage, MaskImage)> {
    if !SUPPORTED_SIZES.contains(&size) {
        return Err(Error::InvalidParam(format!(
            "unsupported sprite size {size}; expected one of {SUPPORTED_SIZES:?}"
        )));
    }
    spec.validate(vocab)?;
    let rgb = |name: &str| vocab.cvt(name).unwrap().rgb;
    let hair = rgb(&spec.hair_color);
    let eyes = rgb(&spec.eye_color);
    let garment = rgb(&spec.garment_color);
    let g = Geometry::sample(spec.geometry_seed);

    let short = spec.has("short_hair");
    let hair_r = g.head_r + 0.035;
    let hair_cy = g.cy - 0.01;
    let eye_y = g.cy + 0.02;
    let neck_top = g.cy + g.head_r - 0.03;
    let torso_top = g.cy + g.head_r + 0.03;
    let hat_base = g.cy - g.head_r + 0.03;
    let tail_dx = g.head_r + 0.07;

    let mut img = ColorImage::filled(size, size, BACKGROUND_RGB);
    let mut mask = MaskImage::filled(size, size, Region::Background);
    let inv = 1.0 / size as f32;
    for py in 0..size {
        for px in 0..size {
            let x = (px as f32 + 0.5) * inv;
            let y = (py as f32 + 0.5) * inv;
            let mut paint: Option<(Region, [f32; 3])> = None;

            // back hair
            let back = in_ellipse(x, y, g.cx, hair_cy, hair_r, hair_r)
                || (!short
                    && (x - g.cx).abs() <= hair_r
                    && y >= hair_cy
                    && (y <= g.hair_bottom - 0.05
                        || in_ellipse(x, y, g.cx, g.hair_bottom - 0.05, hair_r, 0.05)));
            let tails = spec.has("twintails")
                && (in_ellipse(x, y, g.cx - tail_dx, g.cy + 0.12, 0.05, 0.16)
                    || in_ellipse(x, y, g.cx + tail_dx, g.cy + 0.12, 0.05, 0.16));
            if back || tails {
                paint = Some((Region::Hair, hair));
            }
            // torso and skirt
            let torso = in_trapezoid(x, y, g.cx, torso_top, 1.0, g.torso_half, g.torso_half + 0.08);
            let skirt = spec.has("skirt")
                && in_trapezoid(x, y, g.cx, 0.8, 1.0, g.torso_half + 0.06, g.torso_half + 0.2);
            if torso || skirt {
                let fold = (x - (g.cx + 0.07)).abs() < 0.012;
                paint = Some((Region::Garment, if fold { shade(garment, FOLD_SHADE) } else { garment }));
            }
            // neck and head
            if ((x - g.cx).abs() <= 0.045 && y >= neck_top && y <= torso_top + 0.01)
                || in_ellipse(x, y, g.cx, g.cy, g.head_r, g.head_r)
            {
                paint = Some((Region::Skin, SKIN_RGB));
            }
            // bangs
            let fringe = g.cy - 0.055 + 0.012 * (x * 60.0).sin();
            if in_ellipse(x, y, g.cx, hair_cy, hair_r, hair_r) && y < fringe {
                paint = Some((Region::Hair, hair));
            }
            // eyes
            if in_ellipse(x, y, g.cx - g.eye_dx, eye_y, g.eye_rx, g.eye_ry)
                || in_ellipse(x, y, g.cx + g.eye_dx, eye_y, g.eye_rx, g.eye_ry)
            {
                paint = Some((Region::Eyes, eyes));
            }
            // mouth (skin region, no CVT)
            let mouth = if spec.has("open_mouth") {
                in_ellipse(x, y, g.cx, g.cy + 0.1, 0.03, 0.02)
            } else {
                (x - g.cx).abs() <= 0.025 && (y - (g.cy + 0.1)).abs() <= 0.004
            };
            if mouth {
                paint = Some((Region::Skin, MOUTH_RGB));
            }
            // hat: dome plus brim
            if spec.has("hat")
                && ((y <= hat_base && in_ellipse(x, y, g.cx, hat_base, hair_r + 0.01, 0.13))
                    || ((x - g.cx).abs() <= hair_r + 0.07 && y > hat_base - 0.025 && y <= hat_base))
            {
                paint = Some((Region::Garment, garment));
            }
            // ribbon bow
            if spec.has("ribbon") {
                let (ax, ay) = (g.cx + g.head_r * 0.75, g.cy - g.head_r * 0.8);
                if in_bow_wing(x, y, ax, ay, 0.06, 1.0) || in_bow_wing(x, y, ax, ay, 0.06, -1.0) {
                    paint = Some((Region::Garment, garment));
                }
            }

            if let Some((region, mut color)) = paint {
                if region == Region::Hair && (x - g.cx) + (y - g.cy) > 0.2 {
                    color = shade(color, HAIR_SHADE);
                }
                img.set(px, py, color);
                mask.set(px, py, region);
            }
        }
    }
    Ok((img, mask))
}

fn shade(c: [f32; 3], f: f32) -> [f32; 3] {
    [c[0] * f, c[1] * f, c[2] * f]
}

/// Mean color of `img` over pixels labelled `region`, if any.
pub fn region_mean(img: &ColorImage, mask: &MaskImage, region: Region) -> Option<[f32; 3]> {
    let mut acc = [0f64; 3];
    let mut n = 0usize;
    for y in 0..img.height {
        for x in 0..img.width {
            if mask.get(x, y) == region {
                let p = img.get(x, y);
                for c in 0..3 {
                    acc[c] += p[c] as f64;
                }
                n += 1;
            }
        }
    }
    (n > 0).then(|| acc.map(|a| (a / n as f64) as f32))
}
