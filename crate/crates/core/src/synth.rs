//! Seeded synthetic stain-like patches used by fixtures, pretraining demos and
//! tests. Each class has its own hue and stripe texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::downstream::Bag;
use crate::slide::RgbImage;

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// Patch of `side x side` pixels for `class` out of `n_classes`. `strength`
/// in `[0, 1]` blends the class signature over a neutral pink background, so
/// 0 gives class-free tissue.
pub fn class_patch(class: usize, n_classes: usize, side: u32, strength: f64, rng: &mut impl Rng) -> RgbImage {
    let n = n_classes.max(1) as f64;
    let hue = 0.55 + 0.9 * class as f64 / n;
    let freq = 2.0 + (class % 5) as f64 * 1.5;
    let angle = std::f64::consts::PI * (class % 3) as f64 / 3.0;
    let base = hsv_to_rgb(hue, 0.55, 0.75);
    let neutral = [214.0, 160.0, 190.0];
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut data = Vec::with_capacity((side * side * 3) as usize);
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 * ca + y as f64 * sa) / side as f64;
            let wave = (std::f64::consts::TAU * freq * u + phase).sin();
            for c in 0..3 {
                let sig = base[c] * (1.0 + 0.25 * wave);
                let v = strength * sig + (1.0 - strength) * neutral[c] + rng.random_range(-12.0..12.0);
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::new(side, side, data).expect("sized buffer")
}

/// `n` patches drawn alternately from two classes, deterministic per seed.
pub fn two_cluster_patches(n: usize, side: u32, seed: u64) -> Vec<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| class_patch(i % 2, 2, side, 1.0, &mut rng)).collect()
}

/// Feature dimension of [`signal_bags`] instances.
pub const SIGNAL_BAG_DIM: usize = 16;
/// Leading coordinates shifted on signal instances.
const SIGNAL_COORDS: usize = 4;

/// Bags of 5 to 10 standard-normal instances. Odd-indexed bags are positive
/// and start with 1 to 3 signal instances whose first coordinates are shifted
/// by `shift`. Returns the bags and each bag's signal count.
pub fn signal_bags(n: usize, shift: f64, seed: u64) -> (Vec<Bag>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bags = Vec::with_capacity(n);
    let mut signal = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let size = rng.random_range(5..=10);
        let k = if label == 1 { rng.random_range(1..=3) } else { 0 };
        let instances = (0..size)
            .map(|j| {
                (0..SIGNAL_BAG_DIM)
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        if j < k && c < SIGNAL_COORDS {
                            z + shift
                        } else {
                            z
                        }
                    })
                    .collect()
            })
            .collect();
        bags.push(Bag { id: format!("bag{seed}_{i:04}"), instances, label });
        signal.push(k);
    }
    (bags, signal)
}
