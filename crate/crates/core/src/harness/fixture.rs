//! Seeded synthetic inputs for each task family.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HarnessError, Protocol, TaskDescriptor};
use crate::metrics::{BBox, Detection, GroundTruth, ImageDetections, Mask, Region};
use crate::slide::RgbImage;
use crate::synth::class_patch;

/// Patch side for every image fixture.
pub const PATCH_SIDE: u32 = 32;
/// Canvas side of detection fixtures.
pub const CANVAS: usize = 64;
/// Grid side of segmentation fixtures.
pub const SEG_SIDE: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureFamily {
    RoiPatches,
    WsiBags,
    RetrievalCorpus,
    GeneTable,
    Detections,
    Segmentations,
}

impl FixtureFamily {
    pub fn for_protocol(p: Protocol) -> Option<Self> {
        match p {
            Protocol::LinearProbe => Some(FixtureFamily::RoiPatches),
            Protocol::Abmil => Some(FixtureFamily::WsiBags),
            Protocol::Knn => Some(FixtureFamily::RetrievalCorpus),
            Protocol::Ridge => Some(FixtureFamily::GeneTable),
            Protocol::DetectionMetricsOnly => Some(FixtureFamily::Detections),
            Protocol::SegmentationMetricsOnly => Some(FixtureFamily::Segmentations),
            Protocol::Report => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureOptions {
    /// Class signal blended into image patches, in `[0, 1]`.
    pub strength: f64,
    /// Items (patches, bags) per class.
    pub per_class: usize,
    /// Metrics-only fixtures carry predictions equal to the ground truth.
    pub perfect: bool,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self { strength: 0.1, per_class: 20, perfect: false }
    }
}

/// Everything that determines a fixture; its hash is the fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureParams {
    pub family: FixtureFamily,
    pub task_id: u32,
    pub seed: u64,
    pub classes: usize,
    pub options: FixtureOptions,
    pub grouped: bool,
    pub patients: Option<usize>,
}

impl FixtureParams {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("params serialize");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBag {
    pub id: String,
    pub patches: Vec<RgbImage>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FixtureData {
    RoiPatches {
        images: Vec<RgbImage>,
        labels: Vec<usize>,
        groups: Option<Vec<String>>,
    },
    WsiBags {
        bags: Vec<ImageBag>,
    },
    RetrievalCorpus {
        images: Vec<RgbImage>,
        labels: Vec<usize>,
    },
    GeneTable {
        images: Vec<RgbImage>,
        expression: Vec<Vec<f64>>,
        patients: Vec<String>,
    },
    /// The same objects as boxes and as masks.
    Detections {
        boxes: Vec<ImageDetections>,
        masks: Vec<ImageDetections>,
    },
    Segmentations {
        classes: usize,
        truth: Vec<Vec<usize>>,
        pred: Vec<Vec<usize>>,
    },
}

impl FixtureData {
    pub fn family(&self) -> FixtureFamily {
        match self {
            FixtureData::RoiPatches { .. } => FixtureFamily::RoiPatches,
            FixtureData::WsiBags { .. } => FixtureFamily::WsiBags,
            FixtureData::RetrievalCorpus { .. } => FixtureFamily::RetrievalCorpus,
            FixtureData::GeneTable { .. } => FixtureFamily::GeneTable,
            FixtureData::Detections { .. } => FixtureFamily::Detections,
            FixtureData::Segmentations { .. } => FixtureFamily::Segmentations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub params: FixtureParams,
    pub fingerprint: String,
    pub data: FixtureData,
}

/// Spots per patient in gene fixtures.
const SPOTS_PER_PATIENT: usize = 16;
/// Genes measured per spot.
pub const GENE_COUNT: usize = 120;
const LATENT: usize = 3;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn roi(p: &FixtureParams, rng: &mut ChaCha8Rng) -> FixtureData {
    let (c, n) = (p.classes, p.options.per_class);
    let mut images = Vec::with_capacity(c * n);
    let mut labels = Vec::with_capacity(c * n);
    let mut groups = Vec::with_capacity(c * n);
    for k in 0..n {
        for y in 0..c {
            images.push(class_patch(y, c, PATCH_SIDE, p.options.strength, rng));
            labels.push(y);
            // four patches per slide, each slide of one class
            groups.push(format!("slide{y:02}_{:03}", k / 4));
        }
    }
    FixtureData::RoiPatches { images, labels, groups: p.grouped.then_some(groups) }
}

fn bags(p: &FixtureParams, rng: &mut ChaCha8Rng) -> FixtureData {
    let (c, n) = (p.classes, p.options.per_class);
    let mut out = Vec::with_capacity(c * n);
    for k in 0..n {
        for y in 0..c {
            let size = rng.random_range(4..=8);
            let signal = rng.random_range(1..=3);
            let patches = (0..size)
                .map(|j| {
                    if j < signal {
                        class_patch(y, c, PATCH_SIDE, p.options.strength, rng)
                    } else {
                        class_patch(0, 1, PATCH_SIDE, 0.0, rng)
                    }
                })
                .collect();
            out.push(ImageBag { id: format!("t{}_bag{:04}", p.task_id, k * c + y), patches, label: y });
        }
    }
    FixtureData::WsiBags { bags: out }
}

fn retrieval(p: &FixtureParams, rng: &mut ChaCha8Rng) -> FixtureData {
    let FixtureData::RoiPatches { images, labels, .. } = roi(p, rng) else { unreachable!() };
    FixtureData::RetrievalCorpus { images, labels }
}

/// Spots share latent factors that tint the image and drive log-expression.
fn genes(p: &FixtureParams, rng: &mut ChaCha8Rng) -> Result<FixtureData, HarnessError> {
    let patients = p.patients.unwrap_or(2);
    let loading = Normal::new(0.0, 0.7).expect("valid sd");
    let a: Vec<[f64; LATENT]> = (0..GENE_COUNT).map(|_| std::array::from_fn(|_| loading.sample(rng))).collect();
    let b: Vec<f64> = (0..GENE_COUNT).map(|_| rng.random_range(0.0..3.0)).collect();
    let (mut images, mut expression, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for pat in 0..patients {
        let offset: [f64; LATENT] = std::array::from_fn(|_| 0.3 * normal(rng));
        for _ in 0..SPOTS_PER_PATIENT {
            let z: [f64; LATENT] = std::array::from_fn(|i| offset[i] + normal(rng));
            let base = [214.0 + 30.0 * z[0], 160.0 + 30.0 * z[1], 190.0 + 30.0 * z[2]];
            let noise: Vec<f64> = (0..PATCH_SIDE * PATCH_SIDE * 3).map(|_| rng.random_range(-10.0..10.0)).collect();
            let data =
                noise.iter().enumerate().map(|(i, e)| (base[i % 3] + e).round().clamp(0.0, 255.0) as u8).collect();
            images.push(RgbImage::new(PATCH_SIDE, PATCH_SIDE, data)?);
            let row = (0..GENE_COUNT)
                .map(|g| {
                    let mu = (b[g] + (0..LATENT).map(|i| a[g][i] * z[i]).sum::<f64>()).exp().min(1e6);
                    Poisson::new(mu).map(|d| d.sample(rng)).unwrap_or(0.0)
                })
                .collect();
            expression.push(row);
            ids.push(format!("patient{pat:02}"));
        }
    }
    Ok(FixtureData::GeneTable { images, expression, patients: ids })
}

fn ellipse(b: &BBox) -> Result<Mask, HarnessError> {
    let (cx, cy) = ((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0);
    let (rx, ry) = ((b.x2 - b.x1) / 2.0, (b.y2 - b.y1) / 2.0);
    let bits = (0..CANVAS * CANVAS)
        .map(|i| {
            let (x, y) = ((i % CANVAS) as f64 + 0.5, (i / CANVAS) as f64 + 0.5);
            ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
        })
        .collect();
    Ok(Mask::new(CANVAS, CANVAS, bits)?)
}

fn random_box(rng: &mut ChaCha8Rng) -> Result<BBox, HarnessError> {
    let (w, h) = (rng.random_range(8.0..18.0f64).round(), rng.random_range(8.0..18.0f64).round());
    let x = rng.random_range(0.0..(CANVAS as f64 - w)).round();
    let y = rng.random_range(0.0..(CANVAS as f64 - h)).round();
    Ok(BBox::new(x, y, x + w, y + h)?)
}

fn jitter(b: &BBox, rng: &mut ChaCha8Rng) -> Result<BBox, HarnessError> {
    let lim = CANVAS as f64;
    let mut d = || rng.random_range(-1.5..1.5f64).round();
    let (x1, y1) = ((b.x1 + d()).clamp(0.0, lim - 2.0), (b.y1 + d()).clamp(0.0, lim - 2.0));
    let (x2, y2) = ((b.x2 + d()).clamp(x1 + 1.0, lim), (b.y2 + d()).clamp(y1 + 1.0, lim));
    Ok(BBox::new(x1, y1, x2, y2)?)
}

const DETECTION_IMAGES: usize = 12;

fn detections(p: &FixtureParams, rng: &mut ChaCha8Rng) -> Result<FixtureData, HarnessError> {
    let (mut boxes, mut masks) = (Vec::new(), Vec::new());
    for _ in 0..DETECTION_IMAGES {
        let (mut ib, mut im) = (ImageDetections::default(), ImageDetections::default());
        let add_pred = |class: usize, confidence: f64, bx: BBox, ib: &mut ImageDetections, im: &mut ImageDetections| {
            let m = ellipse(&bx)?;
            ib.predictions.push(Detection { class, confidence, region: Region::Box(bx) });
            im.predictions.push(Detection { class, confidence, region: Region::Mask(m) });
            Ok::<_, HarnessError>(())
        };
        for _ in 0..rng.random_range(2..=4) {
            let class = rng.random_range(0..p.classes);
            let gt = random_box(rng)?;
            ib.ground_truth.push(GroundTruth { class, region: Region::Box(gt) });
            im.ground_truth.push(GroundTruth { class, region: Region::Mask(ellipse(&gt)?) });
            if p.options.perfect {
                add_pred(class, 1.0, gt, &mut ib, &mut im)?;
            } else if rng.random_bool(0.85) {
                let conf = rng.random_range(0.4..1.0);
                let bx = jitter(&gt, rng)?;
                add_pred(class, conf, bx, &mut ib, &mut im)?;
            }
        }
        if !p.options.perfect && rng.random_bool(0.5) {
            let class = rng.random_range(0..p.classes);
            let conf = rng.random_range(0.0..0.7);
            let bx = random_box(rng)?;
            add_pred(class, conf, bx, &mut ib, &mut im)?;
        }
        boxes.push(ib);
        masks.push(im);
    }
    Ok(FixtureData::Detections { boxes, masks })
}

const SEG_IMAGES: usize = 8;

/// Nearest-seed label maps with every class seeded in each image.
fn segmentations(p: &FixtureParams, rng: &mut ChaCha8Rng) -> FixtureData {
    let c = p.classes;
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for _ in 0..SEG_IMAGES {
        // distinct pixel sites, so each seed owns at least its own pixel
        let seeds: Vec<(f64, f64, usize)> = sample(rng, SEG_SIDE * SEG_SIDE, c + 4)
            .into_iter()
            .enumerate()
            .map(|(i, at)| ((at % SEG_SIDE) as f64, (at / SEG_SIDE) as f64, i % c))
            .collect();
        let t: Vec<usize> = (0..SEG_SIDE * SEG_SIDE)
            .map(|i| {
                let (x, y) = ((i % SEG_SIDE) as f64, (i / SEG_SIDE) as f64);
                let d = |s: &(f64, f64, usize)| (s.0 - x).powi(2) + (s.1 - y).powi(2);
                seeds.iter().min_by(|a, b| d(a).total_cmp(&d(b))).expect("seeds").2
            })
            .collect();
        let q = if p.options.perfect {
            t.clone()
        } else {
            t.iter().map(|&v| if rng.random_bool(0.08) { rng.random_range(0..c) } else { v }).collect()
        };
        truth.push(t);
        pred.push(q);
    }
    FixtureData::Segmentations { classes: c, truth, pred }
}

/// Builds the fixture for `task` from its generator parameters.
pub fn generate_fixture(task: &TaskDescriptor, seed: u64, options: FixtureOptions) -> Result<Fixture, HarnessError> {
    let family = FixtureFamily::for_protocol(task.protocol)
        .ok_or_else(|| HarnessError::Unsupported(format!("no fixture family for {}", task.protocol)))?;
    if !(0.0..=1.0).contains(&options.strength) || options.per_class == 0 {
        return Err(HarnessError::Unsupported(format!("fixture options {options:?}")));
    }
    let params = FixtureParams {
        family,
        task_id: task.id,
        seed,
        classes: task.classes.len(),
        options,
        grouped: task.split.grouped,
        patients: task.patients,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = match family {
        FixtureFamily::RoiPatches => roi(&params, &mut rng),
        FixtureFamily::WsiBags => bags(&params, &mut rng),
        FixtureFamily::RetrievalCorpus => retrieval(&params, &mut rng),
        FixtureFamily::GeneTable => genes(&params, &mut rng)?,
        FixtureFamily::Detections => detections(&params, &mut rng)?,
        FixtureFamily::Segmentations => segmentations(&params, &mut rng),
    };
    Ok(Fixture { fingerprint: params.fingerprint(), params, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::load_registry;

    #[test]
    fn fixtures_are_deterministic_and_fingerprinted() {
        let reg = load_registry().unwrap();
        for id in [1, 13, 22, 28, 49, 103] {
            let t = &reg[id - 1];
            let a = generate_fixture(t, 5, FixtureOptions::default()).unwrap();
            let b = generate_fixture(t, 5, FixtureOptions::default()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.fingerprint.len(), 64);
            let c = generate_fixture(t, 6, FixtureOptions::default()).unwrap();
            assert_ne!(a.fingerprint, c.fingerprint);
            assert_eq!(Some(a.data.family()), FixtureFamily::for_protocol(t.protocol));
        }
    }

    #[test]
    fn perfect_detections_mirror_ground_truth() {
        let reg = load_registry().unwrap();
        let f = generate_fixture(&reg[27], 1, FixtureOptions { perfect: true, ..Default::default() }).unwrap();
        let FixtureData::Detections { boxes, masks } = f.data else { panic!() };
        for im in boxes.iter().chain(&masks) {
            assert_eq!(im.ground_truth.len(), im.predictions.len());
            for (g, p) in im.ground_truth.iter().zip(&im.predictions) {
                assert_eq!(g.region, p.region);
            }
        }
    }

    #[test]
    fn every_segmentation_class_appears() {
        let reg = load_registry().unwrap();
        let f = generate_fixture(&reg[21], 2, FixtureOptions::default()).unwrap();
        let FixtureData::Segmentations { classes, truth, .. } = f.data else { panic!() };
        for t in &truth {
            for k in 0..classes {
                assert!(t.contains(&k), "class {k} missing");
            }
        }
    }
}
