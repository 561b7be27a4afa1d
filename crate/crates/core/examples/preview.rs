//! Render a contact sheet of sprites and their line arts.
use image::{ImageBuffer, Rgb};
use tagpaint_core::lineart::{extract, XdogParams};
use tagpaint_core::synthdata::{render_sprite, sample_spec};
use tagpaint_core::TagVocabulary;

fn main() -> tagpaint_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let size: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let out = args.get(2).cloned().unwrap_or_else(|| "preview.png".into());
    let mut xp = XdogParams::sprite_default(size);
    if let Some(t) = args.get(3).and_then(|s| s.parse().ok()) { xp.tau = t; }
    if let Some(t) = args.get(4).and_then(|s| s.parse().ok()) { xp.eps = t; }
    if let Some(t) = args.get(5).and_then(|s| s.parse().ok()) { xp.sigma = t; }
    let vocab = TagVocabulary::sprite_default();
    let n = 8;
    let mut sheet = ImageBuffer::from_pixel((n * size) as u32, (2 * size) as u32, Rgb([0u8, 0, 0]));
    for i in 0..n {
        let spec = sample_spec(i as u64, &vocab)?;
        let (img, _) = render_sprite(&spec, &vocab, size)?;
        let line = extract(&img, &xp)?;
        let (c, g) = (img.to_png(), line.to_png());
        for y in 0..size as u32 {
            for x in 0..size as u32 {
                sheet.put_pixel(i as u32 * size as u32 + x, y, *c.get_pixel(x, y));
                let v = g.get_pixel(x, y).0[0];
                sheet.put_pixel(i as u32 * size as u32 + x, size as u32 + y, Rgb([v, v, v]));
            }
        }
        println!("{i}: {:?} {:?}", spec.color_tags(), spec.cit_attrs);
    }
    sheet.save(&out)?;
    Ok(())
}
