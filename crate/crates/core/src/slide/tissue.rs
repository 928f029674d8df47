//! Tile-level tissue detection and seeded patch sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::container::Magnification;
use super::{SlideContainer, SlideError};

/// A pixel counts as tissue when its HSV saturation is at least
/// `min_saturation` and its luma (in `[0, 1]`) is at most `max_luminance`; a
/// tile is tissue when at least `min_fraction` of its pixels are.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueParams {
    pub min_saturation: f64,
    pub max_luminance: f64,
    pub min_fraction: f64,
}

impl Default for TissueParams {
    fn default() -> Self {
        Self { min_saturation: 0.05, max_luminance: 0.9, min_fraction: 0.10 }
    }
}

/// One flag per tile, row-major over the tile grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TissueMask {
    pub cols: u32,
    pub rows: u32,
    pub tile_size: u32,
    pub tissue: Vec<bool>,
}

impl TissueMask {
    pub fn is_tissue(&self, tx: u32, ty: u32) -> bool {
        self.tissue[(ty * self.cols + tx) as usize]
    }

    pub fn count(&self) -> usize {
        self.tissue.iter().filter(|&&t| t).count()
    }
}

fn is_tissue_pixel(p: &[u8], params: &TissueParams) -> bool {
    let max = p[0].max(p[1]).max(p[2]) as f64;
    let min = p[0].min(p[1]).min(p[2]) as f64;
    let saturation = if max == 0.0 { 0.0 } else { (max - min) / max };
    let luminance = super::image::luma(p[0], p[1], p[2]) / 255.0;
    saturation >= params.min_saturation && luminance <= params.max_luminance
}

pub fn tissue_mask(slide: &SlideContainer, params: &TissueParams) -> TissueMask {
    let (cols, rows) = slide.grid();
    let tissue = (0..cols * rows)
        .into_par_iter()
        .map(|i| {
            let tile = slide.tile(i % cols, i / cols).expect("index within grid");
            let n = tile.len() / 3;
            let hits = tile.chunks_exact(3).filter(|p| is_tissue_pixel(p, params)).count();
            hits as f64 >= params.min_fraction * n as f64
        })
        .collect();
    TissueMask { cols, rows, tile_size: slide.tile_size(), tissue }
}

/// Reference to a square patch on a slide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRef {
    pub id: String,
    pub slide: String,
    pub x: u32,
    pub y: u32,
    pub side: u32,
    pub mag: Magnification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl PatchRef {
    /// True when the two squares share no pixel.
    pub fn disjoint(&self, other: &PatchRef) -> bool {
        self.slide != other.slide
            || self.x + self.side <= other.x
            || other.x + other.side <= self.x
            || self.y + self.side <= other.y
            || other.y + other.side <= self.y
    }
}

/// Selects up to `cap` patches uniformly without replacement from the
/// `side`-sized grid cells that lie entirely on tissue tiles. Output is in
/// grid order and depends only on the inputs and `seed`.
pub fn sample_patches(
    slide: &SlideContainer,
    slide_id: &str,
    mask: &TissueMask,
    cap: usize,
    side: u32,
    seed: u64,
) -> Result<Vec<PatchRef>, SlideError> {
    let ts = slide.tile_size();
    if side == 0 || (!ts.is_multiple_of(side) && !side.is_multiple_of(ts)) {
        return Err(SlideError::IncompatiblePatchSide { side, tile_size: ts });
    }
    let (cols, rows) = (slide.width() / side, slide.height() / side);
    let span = side.div_ceil(ts);
    let eligible: Vec<(u32, u32)> = (0..rows)
        .flat_map(|cy| (0..cols).map(move |cx| (cx, cy)))
        .filter(|&(cx, cy)| {
            let (tx0, ty0) = (cx * side / ts, cy * side / ts);
            (ty0..ty0 + span).all(|ty| (tx0..tx0 + span).all(|tx| mask.is_tissue(tx, ty)))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = cap.min(eligible.len());
    let mut chosen = rand::seq::index::sample(&mut rng, eligible.len(), take).into_vec();
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .map(|i| {
            let (cx, cy) = eligible[i];
            let (x, y) = (cx * side, cy * side);
            PatchRef {
                id: format!("{slide_id}_{x}_{y}_{side}"),
                slide: slide_id.to_string(),
                x,
                y,
                side,
                mag: slide.magnification(),
                label: None,
            }
        })
        .collect())
}
