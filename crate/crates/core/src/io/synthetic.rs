use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{LabeledDataset, Split};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Smallest side length that still renders recognizable glyphs.
pub const MIN_IMAGE_SIZE: usize = 8;

const SHAPES: usize = 10;

/// Colored glyphs on noisy backgrounds. Class `c` draws shape `c mod 10`.
/// With up to ten classes the hue is free; beyond that each group of ten
/// classes gets its own band of the hue circle. Position, size, saturation
/// and background are jittered per sample. Classes are interleaved
/// (`label = i mod n_classes`).
pub fn generate_synthetic_dataset(
    n_classes: usize,
    samples_per_class: usize,
    image_size: usize,
    seed: u64,
    split: Split,
) -> Result<LabeledDataset> {
    if n_classes < 2 {
        return Err(invalid(format!("need at least 2 classes, got {n_classes}")));
    }
    if n_classes > u16::MAX as usize {
        return Err(invalid("too many classes"));
    }
    if image_size < MIN_IMAGE_SIZE {
        return Err(invalid(format!(
            "image size {image_size} is below the minimum of {MIN_IMAGE_SIZE} for glyph rendering"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n_classes * samples_per_class;
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let class = i % n_classes;
        images.push(render(&mut rng, class, n_classes, image_size));
        labels.push(class);
    }
    LabeledDataset::new(images, labels, n_classes, split)
}

fn render(rng: &mut ChaCha8Rng, class: usize, n_classes: usize, size: usize) -> Tensor<f32> {
    let s = size as f64;
    let base: f64 = rng.gen_range(0.05..0.45);
    let tint: [f64; 3] = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];
    let groups = n_classes.div_ceil(SHAPES);
    let band = 360.0 / groups as f64;
    let hue = (class / SHAPES) as f64 * band + rng.gen_range(0.0..band);
    let color = hsv_to_rgb(hue, rng.gen_range(0.5..1.0), rng.gen_range(0.75..1.0));
    let half = s * rng.gen_range(0.55..0.75) / 2.0;
    let cy = rng.gen_range(half..=s - half);
    let cx = rng.gen_range(half..=s - half);
    let shape = class % SHAPES;

    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let v = (y as f64 + 0.5 - cy) / half;
            let u = (x as f64 + 0.5 - cx) / half;
            let inside = covers(shape, u, v);
            for ch in 0..3 {
                let noise: f64 = rng.gen_range(-0.08..0.08);
                let value = if inside { color[ch] } else { base + tint[ch] };
                data.push((value + noise).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Tensor::new(vec![size, size, 3], data).expect("rendered image has the declared shape")
}

/// Whether normalized coordinates `(u, v)` in `[-1, 1]²` fall inside `shape`.
fn covers(shape: usize, u: f64, v: f64) -> bool {
    let (au, av) = (u.abs(), v.abs());
    if au > 1.0 || av > 1.0 {
        return false;
    }
    let r2 = u * u + v * v;
    match shape {
        0 => true,
        1 => r2 <= 1.0,
        2 => au <= (v + 1.0) / 2.0,
        3 => au <= 0.35 || av <= 0.35,
        4 => (0.2025..=1.0).contains(&r2),
        5 => au + av <= 1.0,
        6 => au <= (1.0 - v) / 2.0,
        7 => (u - v).abs() <= 0.45 || (u + v).abs() <= 0.45,
        8 => au >= 0.55 || av >= 0.55,
        _ => (av - 0.6).abs() <= 0.3,
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}
