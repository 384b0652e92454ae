//! Synthetic scene-text images with exact word boxes, used for tests,
//! training the shipped model, and offline benchmarking.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, Result};
use crate::geom::BBox;
use crate::imageio::{save_png, RgbImage};

/// 5x7 glyphs for A..Z; each row is 5 bits, MSB on the left.
const GLYPHS: [[u8; 7]; 26] = [
    [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11], // A
    [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E], // B
    [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E], // C
    [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E], // D
    [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F], // E
    [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10], // F
    [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F], // G
    [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11], // H
    [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E], // I
    [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C], // J
    [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11], // K
    [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F], // L
    [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11], // M
    [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11], // N
    [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E], // O
    [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10], // P
    [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D], // Q
    [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11], // R
    [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E], // S
    [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04], // T
    [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E], // U
    [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04], // V
    [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A], // W
    [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11], // X
    [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04], // Y
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F], // Z
];

pub const DEFAULT_WIDTH: usize = 640;
pub const DEFAULT_HEIGHT: usize = 480;

#[derive(Clone, Debug)]
pub struct SyntheticImage {
    pub image: RgbImage,
    /// Tight inclusive word boxes.
    pub words: Vec<BBox>,
    pub transcriptions: Vec<String>,
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, c: [f64; 3]) {
        for y in y0..y1.min(self.h) {
            for x in x0..x1.min(self.w) {
                self.px[y * self.w + x] = c;
            }
        }
    }

    fn fill_disc(&mut self, cx: f64, cy: f64, r: f64, c: [f64; 3]) {
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize + 1).min(self.w));
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize + 1).min(self.h));
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.px[y * self.w + x] = c;
                }
            }
        }
    }
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random_range(0.0..256.0), rng.random_range(0.0..256.0), rng.random_range(0.0..256.0)]
}

/// A text color differing from the background by at least 100 in every
/// channel flagged in `strong`; other channels are arbitrary.
fn contrasting(rng: &mut impl Rng, bg: [f64; 3], strong: [bool; 3]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for k in 0..3 {
        if !strong[k] {
            c[k] = (bg[k] + rng.random_range(-40.0..40.0)).clamp(0.0, 255.0);
            continue;
        }
        let lo_ok = bg[k] >= 100.0;
        let hi_ok = bg[k] <= 155.0;
        let dark = match (lo_ok, hi_ok) {
            (true, true) => rng.random_bool(0.5),
            (true, false) => true,
            _ => false,
        };
        c[k] = if dark {
            rng.random_range(0.0..=(bg[k] - 100.0))
        } else {
            rng.random_range((bg[k] + 100.0)..=255.0)
        };
    }
    c
}

fn overlaps(a: &BBox, b: &BBox, margin: f64) -> bool {
    a.xmin - margin <= b.xmax && b.xmin - margin <= a.xmax && a.ymin - margin <= b.ymax && b.ymin - margin <= a.ymax
}

fn draw_word(canvas: &mut Canvas, text: &[u8], x0: usize, y0: usize, scale: usize, gap: usize, c: [f64; 3]) -> BBox {
    let mut b: Option<BBox> = None;
    for (i, &ch) in text.iter().enumerate() {
        let glyph = &GLYPHS[(ch - b'A') as usize];
        let gx = x0 + i * (5 * scale + gap);
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..5 {
                if bits & (0x10 >> col) != 0 {
                    let (px, py) = (gx + col * scale, y0 + row * scale);
                    canvas.fill_rect(px, py, px + scale, py + scale, c);
                    let cell = BBox::new(px as f64, py as f64, (px + scale - 1) as f64, (py + scale - 1) as f64);
                    b = Some(b.map_or(cell, |u| u.union(&cell)));
                }
            }
        }
    }
    b.expect("words are nonempty")
}

/// Generates one image deterministically from `seed`.
pub fn synthetic_image(seed: u64, width: usize, height: usize) -> Result<SyntheticImage> {
    if width < 64 || height < 64 {
        return arg_err("synthetic images must be at least 64x64");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = random_color(&mut rng);
    let tilt = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)];
    let mut canvas = Canvas {
        w: width,
        h: height,
        px: Vec::with_capacity(width * height),
    };
    for y in 0..height {
        for x in 0..width {
            let shade = tilt[0] * (x as f64 - width as f64 / 2.0) + tilt[1] * (y as f64 - height as f64 / 2.0);
            canvas.px.push([bg[0] + shade, bg[1] + shade, bg[2] + shade]);
        }
    }

    let mut occupied: Vec<BBox> = Vec::new();
    for _ in 0..rng.random_range(3..=6) {
        let c = random_color(&mut rng);
        let (cx, cy) = (rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64));
        if rng.random_bool(0.5) {
            canvas.fill_disc(cx, cy, rng.random_range(8.0..40.0), c);
        } else {
            let (w, h) = (rng.random_range(10..90), rng.random_range(10..90));
            canvas.fill_rect(cx as usize, cy as usize, cx as usize + w, cy as usize + h, c);
        }
    }

    let mut words = Vec::new();
    let mut transcriptions = Vec::new();
    let target = rng.random_range(2..=5);
    let mut attempts = 0;
    while words.len() < target && attempts < 200 {
        attempts += 1;
        let len = rng.random_range(2..=8usize);
        let scale = rng.random_range(3..=7usize);
        let gap = scale.max(2);
        let ww = len * 5 * scale + (len - 1) * gap;
        let wh = 7 * scale;
        if ww + 8 >= width || wh + 8 >= height {
            continue;
        }
        let x0 = rng.random_range(4..width - ww - 4);
        let y0 = rng.random_range(4..height - wh - 4);
        let probe = BBox::new(x0 as f64, y0 as f64, (x0 + ww - 1) as f64, (y0 + wh - 1) as f64);
        if occupied.iter().any(|o| overlaps(o, &probe, 2.0 * scale as f64)) {
            continue;
        }
        let text: Vec<u8> = (0..len).map(|_| b'A' + rng.random_range(0..26u8)).collect();
        // plain backing so contrast holds over distractors
        let plate = bg;
        canvas.fill_rect(
            x0.saturating_sub(scale),
            y0.saturating_sub(scale),
            x0 + ww + scale,
            y0 + wh + scale,
            plate,
        );
        let color = if rng.random_bool(0.3) && bg.iter().all(|&v| v >= 100.0) {
            [0.0; 3]
        } else if rng.random_bool(0.3) && bg.iter().all(|&v| v <= 155.0) {
            [255.0; 3]
        } else {
            let mut strong = [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5)];
            if !strong.contains(&true) {
                strong[rng.random_range(0..3)] = true;
            }
            contrasting(&mut rng, bg, strong)
        };
        let b = draw_word(&mut canvas, &text, x0, y0, scale, gap, color);
        occupied.push(probe);
        words.push(b);
        transcriptions.push(String::from_utf8(text).expect("ascii"));
    }

    let noise = Normal::new(0.0, 3.0).expect("valid sigma");
    let mut rgb = Vec::with_capacity(width * height * 3);
    for p in &canvas.px {
        for v in p {
            rgb.push((v + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(SyntheticImage {
        image: RgbImage::from_interleaved(width, height, &rgb)?,
        words,
        transcriptions,
    })
}

/// `count` images at the default 640x480 size, seeded `seed, seed+1, ...`.
pub fn synthetic_dataset(seed: u64, count: usize) -> Result<Vec<SyntheticImage>> {
    (0..count as u64)
        .map(|i| synthetic_image(seed.wrapping_add(i), DEFAULT_WIDTH, DEFAULT_HEIGHT))
        .collect()
}

/// Image id used for the `i`-th image of a written corpus.
pub fn corpus_id(i: usize) -> String {
    format!("synth_{i:04}")
}

/// Writes PNGs plus a plain-boxes `gt.csv` (`image,xmin,ymin,xmax,ymax`).
pub fn write_corpus(images: &[SyntheticImage], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut gt = String::from("image,xmin,ymin,xmax,ymax\n");
    for (i, s) in images.iter().enumerate() {
        let id = corpus_id(i);
        save_png(&s.image, dir.join(format!("{id}.png")))?;
        for b in &s.words {
            gt.push_str(&format!("{id},{},{},{},{}\n", b.xmin, b.ymin, b.xmax, b.ymax));
        }
    }
    fs::write(dir.join("gt.csv"), gt)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = synthetic_image(3, 200, 150).unwrap();
        let b = synthetic_image(3, 200, 150).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.words, b.words);
    }

    #[test]
    fn words_do_not_overlap() {
        for seed in 0..10 {
            let s = synthetic_image(seed, DEFAULT_WIDTH, DEFAULT_HEIGHT).unwrap();
            assert!(!s.words.is_empty());
            for (i, a) in s.words.iter().enumerate() {
                for b in &s.words[i + 1..] {
                    assert!(!overlaps(a, b, 0.0));
                }
            }
        }
    }

    #[test]
    fn contrast_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let bg = random_color(&mut rng);
            let strong = [rng.random_bool(0.5), true, rng.random_bool(0.5)];
            let c = contrasting(&mut rng, bg, strong);
            for k in 0..3 {
                assert!(!strong[k] || (c[k] - bg[k]).abs() >= 100.0);
            }
        }
    }

    #[test]
    fn too_small_rejected() {
        assert!(synthetic_image(0, 10, 10).is_err());
    }
}
