#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use cbir::encode_png;
use cbir_core::index::IndexOptions;
use cbir_core::{build_index, CorpusEntry, FeatureIndex, RasterImage, Rgb};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const SIDE: usize = 24;

const PALETTE: [(u8, u8, u8); 10] = [
    (200, 40, 40),
    (40, 170, 60),
    (50, 70, 200),
    (220, 200, 60),
    (150, 60, 170),
    (60, 190, 190),
    (230, 130, 40),
    (110, 110, 110),
    (240, 230, 220),
    (90, 50, 20),
];

fn clamp(v: i32) -> u8 {
    v.clamp(0, 255) as u8
}

/// One image of `class`: a tinted background with a class-specific stripe
/// pattern, plus a bright patch at a random position. `seed` varies jitter.
pub fn class_image(class: usize, seed: u64, side: usize) -> RasterImage {
    class_image_tinted(class, class, seed, side)
}

/// Like [`class_image`] but with the tint of palette entry `tint`.
pub fn class_image_tinted(class: usize, tint: usize, seed: u64, side: usize) -> RasterImage {
    let mut rng = StdRng::seed_from_u64(seed ^ ((class as u64) << 32));
    let (r, g, b) = PALETTE[tint % PALETTE.len()];
    let jitter: [i32; 3] = std::array::from_fn(|_| rng.gen_range(-10..=10));
    let period = 2 + (class / 4) * 2;
    let orientation = class % 4;
    let phase = rng.gen_range(0..period);
    let amp = 30 + 5 * (class as i32 % 3);
    let patch = 3 + class % 5;
    let (px, py) = (rng.gen_range(0..side - patch), rng.gen_range(0..side - patch));
    let noise: Vec<i32> = (0..side * side).map(|_| rng.gen_range(-4..=4)).collect();
    RasterImage::from_fn(side, side, |x, y| {
        let t = match orientation {
            0 => y,
            1 => x,
            2 => x + y,
            _ => x / 2 + y / 2,
        } + phase;
        let s = if (t / (period / 2).max(1)).is_multiple_of(2) {
            amp
        } else {
            -amp
        };
        let lift = if (px..px + patch).contains(&x) && (py..py + patch).contains(&y) {
            50
        } else {
            0
        };
        let n = noise[y * side + x];
        Rgb::new(
            clamp(r as i32 + jitter[0] + s + lift + n),
            clamp(g as i32 + jitter[1] + s + lift + n),
            clamp(b as i32 + jitter[2] + s + lift + n),
        )
    })
    .expect("non-empty image")
}

pub fn class_label(class: usize) -> String {
    format!("class{}", class + 1)
}

pub fn image_id(class: usize, k: usize) -> String {
    format!("{}/{}", class_label(class), k)
}

/// In-memory labeled entries, `per_class` images for each of `classes`.
pub fn entries(classes: usize, per_class: usize, side: usize) -> Vec<CorpusEntry> {
    let mut out = Vec::new();
    for c in 0..classes {
        for k in 0..per_class {
            let id = image_id(c, k);
            out.push(CorpusEntry {
                path: format!("{id}.png"),
                class_label: Some(class_label(c)),
                image: class_image(c, k as u64, side),
                id,
            });
        }
    }
    out
}

pub fn synthetic_index(classes: usize, per_class: usize) -> FeatureIndex {
    build_index(entries(classes, per_class, SIDE), &IndexOptions::default()).expect("index builds")
}

/// Classes that share all tints, cycling through them image by image.
pub fn confusable_index(classes: usize, per_class: usize) -> FeatureIndex {
    let mut out = Vec::new();
    for c in 0..classes {
        for k in 0..per_class {
            let id = image_id(c, k);
            let tint = (c + k) % classes;
            out.push(CorpusEntry {
                path: format!("{id}.png"),
                class_label: Some(class_label(c)),
                image: class_image_tinted(c, tint, k as u64, SIDE),
                id,
            });
        }
    }
    build_index(out, &IndexOptions::default()).expect("index builds")
}

/// Writes `class<N>/<k>.png` files under `dir`; returns their paths in id order.
pub fn write_corpus(dir: &Path, classes: usize, per_class: usize, side: usize) -> Vec<PathBuf> {
    let mut paths = Vec::new();
    for e in entries(classes, per_class, side) {
        let path = dir.join(format!("{}.png", e.id));
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, encode_png(&e.image)).unwrap();
        paths.push(path);
    }
    paths
}

/// Random image with side lengths in `min..=max` and uniformly drawn pixels.
pub fn noise_image(rng: &mut impl Rng, min: usize, max: usize) -> RasterImage {
    let (width, height) = (rng.gen_range(min..=max), rng.gen_range(min..=max));
    let bytes: Vec<u8> = (0..width * height * 3).map(|_| rng.gen()).collect();
    RasterImage::from_rgb_bytes(width, height, &bytes).unwrap()
}
