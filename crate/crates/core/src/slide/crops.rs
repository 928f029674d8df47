//! Multi-crop view generation with a replayable augmentation log.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RgbImage, SlideError};

pub const MIN_SOURCE_SIDE: u32 = 96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewConfig {
    pub count: usize,
    pub size: u32,
    pub scale: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropConfig {
    pub global: ViewConfig,
    pub local: ViewConfig,
    /// Aspect-ratio range for random resized crops.
    pub ratio: (f64, f64),
    pub hflip_p: f64,
    pub jitter_p: f64,
    pub jitter_strength: f64,
    pub grayscale_p: f64,
    /// Blur probability for the first global view.
    pub blur_p_first: f64,
    /// Blur probability for every other view.
    pub blur_p_other: f64,
    pub blur_sigma: (f64, f64),
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            global: ViewConfig { count: 2, size: 224, scale: (0.48, 1.0) },
            local: ViewConfig { count: 8, size: 96, scale: (0.16, 0.48) },
            ratio: (3.0 / 4.0, 4.0 / 3.0),
            hflip_p: 0.5,
            jitter_p: 0.8,
            jitter_strength: 0.4,
            grayscale_p: 0.2,
            blur_p_first: 0.5,
            blur_p_other: 0.1,
            blur_sigma: (0.1, 2.0),
        }
    }
}

impl CropConfig {
    /// Same geometry with every photometric and flip probability zeroed.
    pub fn without_augmentation(mut self) -> Self {
        self.hflip_p = 0.0;
        self.jitter_p = 0.0;
        self.grayscale_p = 0.0;
        self.blur_p_first = 0.0;
        self.blur_p_other = 0.0;
        self
    }
}

/// One applied augmentation step, in application order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum AugOp {
    Crop { x: u32, y: u32, w: u32, h: u32 },
    Resize { size: u32 },
    Hflip,
    ColorJitter { brightness: f64, contrast: f64, saturation: f64 },
    Grayscale,
    Blur { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub image: RgbImage,
    pub log: Vec<AugOp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSet {
    pub globals: Vec<View>,
    pub locals: Vec<View>,
}

impl CropSet {
    /// Globals first, then locals.
    pub fn views(&self) -> impl Iterator<Item = &View> {
        self.globals.iter().chain(&self.locals)
    }
}

fn random_resized_box(
    src: &RgbImage,
    scale: (f64, f64),
    ratio: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> (u32, u32, u32, u32) {
    let (w, h) = (src.width() as f64, src.height() as f64);
    let area = w * h;
    let (lr0, lr1) = (ratio.0.ln(), ratio.1.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, scale.0, scale.1);
        let r = uniform(rng, lr0, lr1).exp();
        let cw = (target * r).sqrt().round();
        let ch = (target / r).sqrt().round();
        if cw >= 1.0 && ch >= 1.0 && cw <= w && ch <= h {
            let x = rng.random_range(0..=(w - cw) as u32);
            let y = rng.random_range(0..=(h - ch) as u32);
            return (x, y, cw as u32, ch as u32);
        }
    }
    // Fallback: largest centered box whose aspect ratio is within range.
    let in_ratio = w / h;
    let (cw, ch) = if in_ratio < ratio.0 {
        (w, (w / ratio.0).round())
    } else if in_ratio > ratio.1 {
        ((h * ratio.1).round(), h)
    } else {
        (w, h)
    };
    (((w - cw) / 2.0) as u32, ((h - ch) / 2.0) as u32, cw as u32, ch as u32)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn coin(rng: &mut ChaCha8Rng, p: f64) -> bool {
    // Always draw so the stream position does not depend on `p`.
    let u: f64 = rng.random();
    u < p
}

fn make_view(
    src: &RgbImage,
    view: &ViewConfig,
    blur_p: f64,
    cfg: &CropConfig,
    rng: &mut ChaCha8Rng,
) -> Result<View, SlideError> {
    let mut log = Vec::new();
    let (x, y, w, h) = random_resized_box(src, view.scale, cfg.ratio, rng);
    log.push(AugOp::Crop { x, y, w, h });
    let mut img = src.crop(x, y, w, h)?.resize_bilinear(view.size, view.size)?;
    log.push(AugOp::Resize { size: view.size });
    if coin(rng, cfg.hflip_p) {
        img = img.hflip();
        log.push(AugOp::Hflip);
    }
    let s = cfg.jitter_strength;
    let factors = (uniform(rng, 1.0 - s, 1.0 + s), uniform(rng, 1.0 - s, 1.0 + s), uniform(rng, 1.0 - s, 1.0 + s));
    if coin(rng, cfg.jitter_p) {
        img = img.color_jitter(factors.0, factors.1, factors.2);
        log.push(AugOp::ColorJitter { brightness: factors.0, contrast: factors.1, saturation: factors.2 });
    }
    if coin(rng, cfg.grayscale_p) {
        img = img.grayscale();
        log.push(AugOp::Grayscale);
    }
    let sigma = uniform(rng, cfg.blur_sigma.0, cfg.blur_sigma.1);
    if coin(rng, blur_p) {
        img = img.gaussian_blur(sigma);
        log.push(AugOp::Blur { sigma });
    }
    Ok(View { image: img, log })
}

/// Global and local views of `src`, fully determined by `seed`.
pub fn make_crop_set(src: &RgbImage, cfg: &CropConfig, seed: u64) -> Result<CropSet, SlideError> {
    if src.width() < MIN_SOURCE_SIDE || src.height() < MIN_SOURCE_SIDE {
        return Err(SlideError::SourceTooSmall { width: src.width(), height: src.height(), min: MIN_SOURCE_SIDE });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let globals = (0..cfg.global.count)
        .map(|i| {
            let p = if i == 0 { cfg.blur_p_first } else { cfg.blur_p_other };
            make_view(src, &cfg.global, p, cfg, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    let locals = (0..cfg.local.count)
        .map(|_| make_view(src, &cfg.local, cfg.blur_p_other, cfg, &mut rng))
        .collect::<Result<_, _>>()?;
    Ok(CropSet { globals, locals })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(side: u32) -> RgbImage {
        RgbImage::from_fn(side, side, |x, y| [(x % 256) as u8, (y % 256) as u8, ((x * y) % 251) as u8]).unwrap()
    }

    #[test]
    fn default_config_emits_table_counts_and_sizes() {
        let set = make_crop_set(&source(256), &CropConfig::default(), 3).unwrap();
        assert_eq!(set.globals.len(), 2);
        assert_eq!(set.locals.len(), 8);
        assert!(set.globals.iter().all(|v| v.image.width() == 224 && v.image.height() == 224));
        assert!(set.locals.iter().all(|v| v.image.width() == 96 && v.image.height() == 96));
    }

    #[test]
    fn same_seed_same_views() {
        let cfg = CropConfig::default();
        let a = make_crop_set(&source(128), &cfg, 11).unwrap();
        let b = make_crop_set(&source(128), &cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_crop_set(&source(128), &cfg, 12).unwrap());
    }

    #[test]
    fn no_augmentation_at_full_scale_gives_resized_copies() {
        let mut cfg = CropConfig::default().without_augmentation();
        cfg.global.scale = (1.0, 1.0);
        let src = source(200);
        let set = make_crop_set(&src, &cfg, 5).unwrap();
        let expected = src.resize_bilinear(224, 224).unwrap();
        for g in &set.globals {
            assert_eq!(g.image, expected);
            assert_eq!(g.log, vec![AugOp::Crop { x: 0, y: 0, w: 200, h: 200 }, AugOp::Resize { size: 224 }]);
        }
    }

    #[test]
    fn crops_respect_scale_range() {
        let cfg = CropConfig::default();
        let set = make_crop_set(&source(300), &cfg, 2).unwrap();
        for (views, (lo, hi)) in [(&set.globals, cfg.global.scale), (&set.locals, cfg.local.scale)] {
            for v in views {
                let AugOp::Crop { w, h, .. } = v.log[0] else { panic!("crop first") };
                let frac = (w * h) as f64 / (300.0 * 300.0);
                assert!(frac >= lo - 0.02 && frac <= hi + 0.02, "{frac}");
            }
        }
    }

    #[test]
    fn small_source_is_rejected() {
        assert!(matches!(
            make_crop_set(&source(95), &CropConfig::default(), 0),
            Err(SlideError::SourceTooSmall { .. })
        ));
    }
}
