//! Protocol dispatch from a descriptor and fixture to a metric map.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    generate_fixture, split_dataset, Fixture, FixtureData, FixtureFamily, FixtureOptions, HarnessError, TaskDescriptor,
};
use crate::downstream::{
    argmax, gene_pipeline, train_abmil, train_linear_probe, AbmilConfig, Bag, KnnIndex, ProbeConfig,
};
use crate::metrics::{
    acc_at_k, accuracy, balanced_accuracy, majority_vote_acc, mean_ap, pearson_mean, roc_auc, segmentation_stats,
    weighted_f1, MetricMap, RetrievalResult,
};
use crate::slide::RgbImage;
use crate::ssl::{extract_features, SslState};

/// Settings applied where a descriptor prints none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub probe: ProbeConfig,
    pub abmil: AbmilConfig,
    pub ridge_lambda: f64,
    pub top_genes: usize,
    pub fixture: FixtureOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            abmil: AbmilConfig::default(),
            ridge_lambda: 1.0,
            top_genes: 50,
            fixture: FixtureOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task_id: u32,
    pub metrics: MetricMap,
    pub wall_time_ms: u64,
    pub seed: u64,
    pub fingerprint: String,
}

/// Per-task seed derived from the run seed (SplitMix64 finalizer).
pub fn task_seed(seed: u64, task_id: u32) -> u64 {
    let mut z = seed ^ (task_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce5_e4b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn features(state: &SslState, images: &[RgbImage]) -> Result<Vec<Vec<f64>>, HarnessError> {
    let t = extract_features(state, images)?;
    let (n, d) = t.dims2();
    Ok((0..n).map(|i| t.data()[i * d..(i + 1) * d].to_vec()).collect())
}

/// Column mean and spread over `fit` rows, applied to every row; constant
/// columns are only centred.
fn standardize(rows: &mut [Vec<f64>], fit: &[usize]) {
    let Some(d) = rows.first().map(Vec::len) else { return };
    let n = fit.len() as f64;
    for j in 0..d {
        let mean = fit.iter().map(|&i| rows[i][j]).sum::<f64>() / n;
        let var = fit.iter().map(|&i| (rows[i][j] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 1e-24 { var.sqrt() } else { 1.0 };
        for r in rows.iter_mut() {
            r[j] = (r[j] - mean) / sd;
        }
    }
}

fn pick<T: Clone>(rows: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| rows[i].clone()).collect()
}

fn classification_metrics(probs: &[Vec<f64>], truth: &[usize]) -> Result<MetricMap, HarnessError> {
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let mut m = MetricMap::new();
    m.insert("accuracy".into(), accuracy(truth, &pred)?);
    m.insert("balanced_accuracy".into(), balanced_accuracy(truth, &pred)?);
    m.insert("weighted_f1".into(), weighted_f1(truth, &pred)?);
    m.insert("auc".into(), roc_auc(probs, truth)?);
    Ok(m)
}

fn probe_config(task: &TaskDescriptor, cfg: &RunConfig) -> ProbeConfig {
    ProbeConfig { max_iters: task.hyper.max_iters.unwrap_or(cfg.probe.max_iters), ..cfg.probe }
}

fn abmil_config(task: &TaskDescriptor, cfg: &RunConfig, seed: u64) -> AbmilConfig {
    let h = task.hyper;
    AbmilConfig {
        epochs: h.epochs.unwrap_or(cfg.abmil.epochs),
        lr: h.lr.unwrap_or(cfg.abmil.lr),
        batch: h.batch.unwrap_or(cfg.abmil.batch),
        seed,
        ..cfg.abmil
    }
}

fn run_probe(
    task: &TaskDescriptor,
    state: &SslState,
    cfg: &RunConfig,
    seed: u64,
    images: &[RgbImage],
    labels: &[usize],
    groups: Option<&[String]>,
) -> Result<MetricMap, HarnessError> {
    let split = split_dataset(labels, groups, &task.split, seed)?;
    let mut x = features(state, images)?;
    standardize(&mut x, split.train());
    let probe = train_linear_probe(
        &pick(&x, split.train()),
        &pick(labels, split.train()),
        task.classes.len(),
        &probe_config(task, cfg),
    )?;
    classification_metrics(&probe.predict_proba(&pick(&x, split.test()))?, &pick(labels, split.test()))
}

fn run_abmil(
    task: &TaskDescriptor,
    state: &SslState,
    cfg: &RunConfig,
    seed: u64,
    bags: &[super::ImageBag],
) -> Result<MetricMap, HarnessError> {
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    let split = split_dataset(&labels, None, &task.split, seed)?;
    let patches: Vec<RgbImage> = bags.iter().flat_map(|b| b.patches.iter().cloned()).collect();
    let mut x = features(state, &patches)?;
    let mut owner = Vec::with_capacity(x.len());
    let mut starts = Vec::with_capacity(bags.len() + 1);
    starts.push(0);
    for (k, b) in bags.iter().enumerate() {
        owner.extend(std::iter::repeat_n(k, b.patches.len()));
        starts.push(starts[k] + b.patches.len());
    }
    let train_rows: Vec<usize> = split.train().iter().flat_map(|&k| starts[k]..starts[k + 1]).collect();
    standardize(&mut x, &train_rows);
    let as_bag = |k: usize| Bag {
        id: bags[k].id.clone(),
        instances: x[starts[k]..starts[k + 1]].to_vec(),
        label: bags[k].label,
    };
    let train: Vec<Bag> = split.train().iter().map(|&k| as_bag(k)).collect();
    let model = train_abmil(&train, task.classes.len(), &abmil_config(task, cfg, seed))?;
    let test = split.test();
    let probs =
        test.iter().map(|&k| model.predict_bag(&as_bag(k).instances).map(|(_, p)| p)).collect::<Result<Vec<_>, _>>()?;
    classification_metrics(&probs, &pick(&labels, test))
}

fn run_knn(
    task: &TaskDescriptor,
    state: &SslState,
    seed: u64,
    images: &[RgbImage],
    labels: &[usize],
) -> Result<MetricMap, HarnessError> {
    let split = split_dataset(labels, None, &task.split, seed)?;
    let x = features(state, images)?;
    let ids: Vec<String> = split.train().iter().map(|i| format!("item{i:05}")).collect();
    let index = KnnIndex::new(&pick(&x, split.train()), ids, pick(labels, split.train()))?;
    let results = split
        .test()
        .iter()
        .map(|&i| {
            let nn = index.query(&x[i], 5)?;
            Ok(RetrievalResult { query_label: labels[i], neighbor_labels: nn.iter().map(|n| n.label).collect() })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut m = MetricMap::new();
    for k in [1, 3, 5] {
        m.insert(format!("acc@{k}"), acc_at_k(&results, k)?);
    }
    m.insert("mvacc@5".into(), majority_vote_acc(&results, 5)?);
    Ok(m)
}

/// Executes the descriptor's protocol on the fixture. The checkpoint is only
/// read; splits and training draw from `seed`.
pub fn run_task(
    task: &TaskDescriptor,
    fixture: &Fixture,
    state: &SslState,
    cfg: &RunConfig,
    seed: u64,
) -> Result<RunResult, HarnessError> {
    let want = FixtureFamily::for_protocol(task.protocol);
    if want != Some(fixture.data.family()) || fixture.params.task_id != task.id {
        return Err(HarnessError::FixtureMismatch {
            task: task.id,
            protocol: task.protocol.to_string(),
            family: format!("{:?} for task {}", fixture.data.family(), fixture.params.task_id),
        });
    }
    let start = Instant::now();
    let metrics = match &fixture.data {
        FixtureData::RoiPatches { images, labels, groups } => {
            run_probe(task, state, cfg, seed, images, labels, groups.as_deref())?
        }
        FixtureData::WsiBags { bags } => run_abmil(task, state, cfg, seed, bags)?,
        FixtureData::RetrievalCorpus { images, labels } => run_knn(task, state, seed, images, labels)?,
        FixtureData::GeneTable { images, expression, patients } => {
            let mut x = features(state, images)?;
            let all: Vec<usize> = (0..x.len()).collect();
            standardize(&mut x, &all);
            let eval = gene_pipeline(&x, expression, patients, cfg.top_genes, cfg.ridge_lambda)?;
            MetricMap::from([("pearson_mean".to_string(), pearson_mean(&eval.predictions, &eval.targets)?)])
        }
        FixtureData::Detections { boxes, masks } => {
            let mut m = MetricMap::new();
            for t in [0.5, 0.75] {
                m.insert(format!("map_bbox@{t}"), mean_ap(boxes, t)?);
                m.insert(format!("map_seg@{t}"), mean_ap(masks, t)?);
            }
            m
        }
        FixtureData::Segmentations { classes, truth, pred } => {
            let t: Vec<usize> = truth.concat();
            let p: Vec<usize> = pred.concat();
            let s = segmentation_stats(&p, &t, *classes)?;
            MetricMap::from([
                ("mpa".to_string(), s.mpa),
                ("miou".to_string(), s.miou),
                ("mean_dice".to_string(), s.mean_dice),
                ("precision".to_string(), s.macro_precision),
                ("recall".to_string(), s.macro_recall),
            ])
        }
    };
    let mut out = MetricMap::new();
    for name in &task.metrics {
        let v =
            *metrics.get(name).ok_or_else(|| HarnessError::MissingMetric { task: task.id, metric: name.clone() })?;
        if !v.is_finite() {
            return Err(HarnessError::NonFinite { task: task.id, metric: name.clone() });
        }
        out.insert(name.clone(), v);
    }
    Ok(RunResult {
        task_id: task.id,
        metrics: out,
        wall_time_ms: start.elapsed().as_millis() as u64,
        seed,
        fingerprint: fixture.fingerprint.clone(),
    })
}

/// Generates each task's fixture from `task_seed(seed, id)` and runs it.
/// Tasks run on the current rayon pool; output is ordered by task id.
pub fn run_suite(
    tasks: &[TaskDescriptor],
    state: &SslState,
    cfg: &RunConfig,
    seed: u64,
) -> Vec<(u32, Result<RunResult, HarnessError>)> {
    let mut out: Vec<(u32, Result<RunResult, HarnessError>)> = tasks
        .par_iter()
        .map(|t| {
            let s = task_seed(seed, t.id);
            let res = generate_fixture(t, s, cfg.fixture).and_then(|f| run_task(t, &f, state, cfg, s));
            match &res {
                Ok(r) => log::info!("task {:>3} done in {} ms", t.id, r.wall_time_ms),
                Err(e) => log::warn!("task {:>3} failed: {e}", t.id),
            }
            (t.id, res)
        })
        .collect();
    out.sort_by_key(|(id, _)| *id);
    out
}
