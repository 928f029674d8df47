//! One function per subcommand. Inputs are validated before any compute and
//! never written to.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use porc_core::downstream::{
    gene_pipeline, train_abmil, train_linear_probe, write_predictions, write_retrieval, Abmil, Bag, KnnIndex,
};
use porc_core::harness::{aggregate, generate_fixture, load_registry, run_suite, run_task, task_seed, write_outputs};
use porc_core::metrics::{
    acc_at_k, accuracy, balanced_accuracy, majority_vote_acc, pearson_mean, roc_auc, weighted_f1, MetricMap,
    RetrievalResult,
};
use porc_core::report::{
    agreement, compose_colorectal, compose_lymphoma, Grade, IhcCall, LymphomaReport, LymphomaSubtype, Malignancy,
    PanelSpec, Polyp, Report,
};
use porc_core::slide::{sample_patches, tissue_mask, write_manifest, SlideContainer};
use porc_core::ssl::{extract_features, load_checkpoint, pretrain, save_checkpoint, SslState};
use serde::Deserialize;

use crate::config::CliConfig;
use crate::error::CliError;
use crate::io::{
    field, list_images, parse_field, prepare_output, read_image, read_labels, read_records, require_dir, require_file,
    write_json, write_png, FeatureTable, Labelled, Split,
};

fn ensure_finite(what: &str, values: &[Vec<f64>]) -> Result<(), CliError> {
    if values.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("{what} contain non-finite values")))
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Slide image (png or ppm).
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Slide id; defaults to the input file stem.
    #[arg(long)]
    pub slide_id: Option<String>,
    /// Also write each sampled patch as `patches/<id>.png`.
    #[arg(long)]
    pub export_patches: bool,
}

/// Writes `<id>.pths` and `<id>.patches.jsonl`.
pub fn ingest(a: &IngestArgs, cfg: &CliConfig) -> Result<(), CliError> {
    require_file(&a.input)?;
    let id = match &a.slide_id {
        Some(s) => s.clone(),
        None => a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("slide").to_string(),
    };
    fs::create_dir_all(&a.output)?;
    let ic = &cfg.ingest;
    let slide = SlideContainer::from_image(&read_image(&a.input)?, ic.tile_size, ic.magnification)?;
    slide.write_to(&a.output.join(format!("{id}.pths")))?;
    let mask = tissue_mask(&slide, &ic.tissue);
    let patches = sample_patches(&slide, &id, &mask, ic.cap, ic.patch_side, cfg.seed)?;
    log::info!("{id}: {} tissue tiles, {} patches", mask.count(), patches.len());
    let mut out = BufWriter::new(File::create(a.output.join(format!("{id}.patches.jsonl")))?);
    write_manifest(&mut out, &patches)?;
    out.flush()?;
    if a.export_patches {
        let dir = a.output.join("patches");
        fs::create_dir_all(&dir)?;
        for p in &patches {
            write_png(&slide.region(p.x, p.y, p.side, p.side)?, &dir.join(format!("{}.png", p.id)))?;
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Directory of training images.
    #[arg(long)]
    pub images: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Optimizer steps; defaults to epochs x steps_per_epoch.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Optional JSON-lines log of per-step metrics.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

pub fn pretrain_cmd(a: &PretrainArgs, cfg: &CliConfig) -> Result<(), CliError> {
    require_dir(&a.images)?;
    prepare_output(&a.output)?;
    let images = list_images(&a.images)?.iter().map(|(_, p)| read_image(p)).collect::<Result<Vec<_>, _>>()?;
    let mut state = SslState::new(cfg.ssl.clone())?;
    let steps = a.steps.unwrap_or_else(|| cfg.ssl.total_steps());
    let log = pretrain(&mut state, &images, steps)?;
    if let Some(last) = log.last() {
        log::info!("step {}: loss {:.4}, teacher entropy {:.4}", last.step, last.total_loss, last.teacher_entropy);
    }
    save_checkpoint(&state, &a.output)?;
    if let Some(path) = &a.log {
        prepare_output(path)?;
        let mut w = BufWriter::new(File::create(path)?);
        for m in &log {
            writeln!(w, "{}", serde_json::to_string(m)?)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of images; ids are file stems.
    #[arg(long)]
    pub images: PathBuf,
    /// Feature CSV `id,f0,...` to write.
    #[arg(long)]
    pub output: PathBuf,
}

pub fn extract(a: &ExtractArgs) -> Result<(), CliError> {
    require_file(&a.checkpoint)?;
    require_dir(&a.images)?;
    prepare_output(&a.output)?;
    let state = load_checkpoint(&a.checkpoint)?;
    let listed = list_images(&a.images)?;
    let images = listed.iter().map(|(_, p)| read_image(p)).collect::<Result<Vec<_>, _>>()?;
    let feats = extract_features(&state, &images)?;
    let rows: Vec<Vec<f64>> = (0..images.len()).map(|i| feats.row(i).to_vec()).collect();
    ensure_finite("features", &rows)?;
    FeatureTable::new(listed.into_iter().map(|(id, _)| id).collect(), rows)?.write(&a.output)
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// CSV `id,label,split` with split one of train, val, test.
    #[arg(long)]
    pub labels: PathBuf,
    /// Predictions CSV for the test rows.
    #[arg(long)]
    pub output: PathBuf,
    /// Class count; defaults to the largest label plus one.
    #[arg(long)]
    pub classes: Option<usize>,
}

fn class_count(labels: &[usize], given: Option<usize>) -> usize {
    given.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1))
}

/// Ids, feature rows and labels, aligned.
type LabelledRows = (Vec<String>, Vec<Vec<f64>>, Vec<usize>);

fn rows_for<'a>(feats: &FeatureTable, rows: impl Iterator<Item = &'a Labelled>) -> Result<LabelledRows, CliError> {
    let (mut ids, mut x, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for r in rows {
        ids.push(r.id.clone());
        x.push(feats.get(&r.id)?.to_vec());
        y.push(r.label);
    }
    Ok((ids, x, y))
}

fn split_rows<'a>(labels: &'a [Labelled], split: Split, path: &Path) -> Result<Vec<&'a Labelled>, CliError> {
    let rows: Vec<&Labelled> = labels.iter().filter(|l| l.split == split).collect();
    if rows.is_empty() {
        return Err(CliError::data(path.display(), format!("no {split:?} rows").to_lowercase()));
    }
    Ok(rows)
}

pub fn probe(a: &ProbeArgs, cfg: &CliConfig) -> Result<(), CliError> {
    require_file(&a.features)?;
    require_file(&a.labels)?;
    prepare_output(&a.output)?;
    let feats = FeatureTable::read(&a.features)?;
    let labels = read_labels(&a.labels)?;
    let (_, xtr, ytr) = rows_for(&feats, split_rows(&labels, Split::Train, &a.labels)?.into_iter())?;
    let (ids, xte, yte) = rows_for(&feats, split_rows(&labels, Split::Test, &a.labels)?.into_iter())?;
    let classes = class_count(&labels.iter().map(|l| l.label).collect::<Vec<_>>(), a.classes);
    let model = train_linear_probe(&xtr, &ytr, classes, &cfg.run.probe)?;
    log::info!("probe stopped after {} iterations, loss {:.6}", model.iterations, model.final_loss);
    let scores = model.predict_proba(&xte)?;
    ensure_finite("probe scores", &scores)?;
    write_predictions(File::create(&a.output)?, &ids, &yte, &scores)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct MilArgs {
    /// Instance features `id,f0,...`.
    #[arg(long)]
    pub features: PathBuf,
    /// CSV `instance,bag,label,split`; label and split repeat per bag.
    #[arg(long)]
    pub bags: PathBuf,
    /// Bag-level predictions CSV for the test bags.
    #[arg(long)]
    pub output: PathBuf,
    /// Optional CSV `bag,instance,weight` of test-bag attention.
    #[arg(long)]
    pub attention: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
}

pub fn mil(a: &MilArgs, cfg: &CliConfig) -> Result<(), CliError> {
    require_file(&a.features)?;
    require_file(&a.bags)?;
    prepare_output(&a.output)?;
    let feats = FeatureTable::read(&a.features)?;
    let mut bags: BTreeMap<String, (Bag, Split, Vec<String>)> = BTreeMap::new();
    for r in read_records(&a.bags)? {
        let bag_id = field(&r, "bag", &a.bags)?.to_string();
        let inst = field(&r, "instance", &a.bags)?.to_string();
        let label: usize = parse_field(&r, "label", &a.bags)?;
        let split: Split = field(&r, "split", &a.bags)?.parse()?;
        let entry = bags
            .entry(bag_id.clone())
            .or_insert_with(|| (Bag { id: bag_id.clone(), instances: Vec::new(), label }, split, Vec::new()));
        if entry.0.label != label || entry.1 != split {
            return Err(CliError::data(a.bags.display(), format!("bag {bag_id} mixes labels or splits")));
        }
        entry.0.instances.push(feats.get(&inst)?.to_vec());
        entry.2.push(inst);
    }
    let train: Vec<Bag> = bags.values().filter(|b| b.1 == Split::Train).map(|b| b.0.clone()).collect();
    let test: Vec<&(Bag, Split, Vec<String>)> = bags.values().filter(|b| b.1 == Split::Test).collect();
    if train.is_empty() || test.is_empty() {
        return Err(CliError::data(a.bags.display(), "need both train and test bags"));
    }
    let labels: Vec<usize> = bags.values().map(|b| b.0.label).collect();
    let abmil_cfg = porc_core::downstream::AbmilConfig { seed: cfg.seed, ..cfg.run.abmil };
    let model: Abmil = train_abmil(&train, class_count(&labels, a.classes), &abmil_cfg)?;
    let (mut ids, mut truth, mut scores, mut attn) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (bag, _, inst) in test {
        let (w, p) = model.predict_bag(&bag.instances)?;
        ids.push(bag.id.clone());
        truth.push(bag.label);
        scores.push(p);
        attn.extend(inst.iter().zip(w).map(|(i, w)| (bag.id.clone(), i.clone(), w)));
    }
    ensure_finite("bag scores", &scores)?;
    write_predictions(File::create(&a.output)?, &ids, &truth, &scores)?;
    if let Some(path) = &a.attention {
        prepare_output(path)?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bag", "instance", "weight"])?;
        for (b, i, v) in attn {
            w.write_record([b, i, v.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct KnnArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// CSV `id,label,split`: train rows are indexed, test rows are queries.
    #[arg(long)]
    pub labels: PathBuf,
    /// Retrieval CSV `query_id,rank,neighbor_id,label,distance`.
    #[arg(long)]
    pub output: PathBuf,
    /// Optional JSON of acc@1/3/5 and mvacc@5.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

pub fn knn(a: &KnnArgs) -> Result<(), CliError> {
    require_file(&a.features)?;
    require_file(&a.labels)?;
    prepare_output(&a.output)?;
    let feats = FeatureTable::read(&a.features)?;
    let labels = read_labels(&a.labels)?;
    let (tr_ids, xtr, ytr) = rows_for(&feats, split_rows(&labels, Split::Train, &a.labels)?.into_iter())?;
    let (te_ids, xte, yte) = rows_for(&feats, split_rows(&labels, Split::Test, &a.labels)?.into_iter())?;
    let index = KnnIndex::new(&xtr, tr_ids, ytr)?;
    let mut results = Vec::with_capacity(te_ids.len());
    for (id, x) in te_ids.iter().zip(&xte) {
        results.push((id.clone(), index.query(x, a.k)?));
    }
    write_retrieval(File::create(&a.output)?, &results)?;
    if let Some(path) = &a.metrics {
        prepare_output(path)?;
        let rr: Vec<RetrievalResult> = results
            .iter()
            .zip(&yte)
            .map(|((_, n), &q)| RetrievalResult {
                query_label: q,
                neighbor_labels: n.iter().map(|x| x.label).collect(),
            })
            .collect();
        let mut m = MetricMap::new();
        for k in [1, 3, 5].into_iter().filter(|&k| k <= a.k) {
            m.insert(format!("acc@{k}"), acc_at_k(&rr, k)?);
        }
        if a.k >= 5 {
            m.insert("mvacc@5".into(), majority_vote_acc(&rr, 5)?);
        }
        write_json(&m, Some(path))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct GenesArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// CSV `id,patient,<gene>...` of raw counts.
    #[arg(long)]
    pub expression: PathBuf,
    /// Long-format CSV `id,patient,gene,target,prediction`.
    #[arg(long)]
    pub output: PathBuf,
    /// Optional JSON holding the mean per-gene Pearson correlation.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

pub fn genes(a: &GenesArgs, cfg: &CliConfig) -> Result<(), CliError> {
    require_file(&a.features)?;
    require_file(&a.expression)?;
    prepare_output(&a.output)?;
    let feats = FeatureTable::read(&a.features)?;
    let mut r = csv::Reader::from_path(&a.expression).map_err(|e| CliError::data(a.expression.display(), e))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[0] != "id" || header[1] != "patient" {
        return Err(CliError::data(a.expression.display(), "header must be id,patient,<gene>..."));
    }
    let (mut ids, mut patients, mut x, mut expr) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        patients.push(rec[1].to_string());
        x.push(feats.get(&rec[0])?.to_vec());
        let row = rec.iter().skip(2).map(|v| v.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>();
        expr.push(row.map_err(|e| CliError::data(a.expression.display(), e))?);
    }
    let eval = gene_pipeline(&x, &expr, &patients, cfg.run.top_genes, cfg.run.ridge_lambda)?;
    ensure_finite("gene predictions", &eval.predictions)?;
    let mut w = csv::Writer::from_path(&a.output)?;
    w.write_record(["id", "patient", "gene", "target", "prediction"])?;
    for (i, (t, p)) in eval.targets.iter().zip(&eval.predictions).enumerate() {
        for (j, &g) in eval.genes.iter().enumerate() {
            w.write_record([&ids[i], &patients[i], &header[g + 2], &t[j].to_string(), &p[j].to_string()])?;
        }
    }
    w.flush()?;
    if let Some(path) = &a.metrics {
        prepare_output(path)?;
        let m = MetricMap::from([("pearson_mean".to_string(), pearson_mean(&eval.predictions, &eval.targets)?)]);
        write_json(&m, Some(path))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Predictions CSV `id,true_label,score_0,...`.
    #[arg(long)]
    pub pred: PathBuf,
    /// JSON output; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn classification_metrics(path: &Path) -> Result<MetricMap, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::data(path.display(), e))?;
    let header = r.headers()?.clone();
    if header.len() < 4 || &header[0] != "id" || &header[1] != "true_label" {
        return Err(CliError::data(path.display(), "header must be id,true_label,score_0,score_1,..."));
    }
    let (mut truth, mut scores) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |e: &dyn std::fmt::Display| CliError::data(format!("{} row {}", path.display(), i + 1), e);
        truth.push(rec[1].trim().parse::<usize>().map_err(|e| bad(&e))?);
        scores.push(
            rec.iter().skip(2).map(|v| v.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|e| bad(&e))?,
        );
    }
    ensure_finite("scores", &scores)?;
    let pred: Vec<usize> = scores.iter().map(|s| porc_core::downstream::argmax(s)).collect();
    Ok(MetricMap::from([
        ("accuracy".to_string(), accuracy(&truth, &pred)?),
        ("balanced_accuracy".to_string(), balanced_accuracy(&truth, &pred)?),
        ("weighted_f1".to_string(), weighted_f1(&truth, &pred)?),
        ("auc".to_string(), roc_auc(&scores, &truth)?),
    ]))
}

pub fn metrics(a: &MetricsArgs) -> Result<(), CliError> {
    require_file(&a.pred)?;
    if let Some(p) = &a.output {
        prepare_output(p)?;
    }
    write_json(&classification_metrics(&a.pred)?, a.output.as_deref())
}

#[derive(Debug, Args)]
pub struct RunTaskArgs {
    /// Registry task id.
    #[arg(long)]
    pub task: u32,
    /// Directory receiving `results/<id>.json`.
    #[arg(long)]
    pub output: PathBuf,
    /// Encoder checkpoint; a freshly initialised encoder when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn encoder(checkpoint: Option<&Path>, cfg: &CliConfig) -> Result<SslState, CliError> {
    match checkpoint {
        Some(p) => Ok(load_checkpoint(p)?),
        None => Ok(SslState::new(cfg.ssl.clone())?),
    }
}

pub fn run_task_cmd(a: &RunTaskArgs, cfg: &CliConfig) -> Result<(), CliError> {
    if let Some(p) = &a.checkpoint {
        require_file(p)?;
    }
    let registry = load_registry()?;
    let task = registry
        .iter()
        .find(|t| t.id == a.task)
        .ok_or_else(|| CliError::Usage(format!("task {} is not in the registry", a.task)))?;
    let state = encoder(a.checkpoint.as_deref(), cfg)?;
    let seed = task_seed(cfg.seed, task.id);
    let fixture = generate_fixture(task, seed, cfg.run.fixture)?;
    let result = run_task(task, &fixture, &state, &cfg.run, seed)?;
    let dir = a.output.join("results");
    fs::create_dir_all(&dir)?;
    write_json(&result, Some(&dir.join(format!("{}.json", task.id))))
}

#[derive(Debug, Args)]
pub struct RunSuiteArgs {
    /// Directory receiving `results/`, `summary.csv` and `summary.json`.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated subset of task ids; all tasks when absent.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<u32>,
}

/// Writes every successful result, then fails with the first task error.
pub fn run_suite_cmd(a: &RunSuiteArgs, cfg: &CliConfig) -> Result<(), CliError> {
    if let Some(p) = &a.checkpoint {
        require_file(p)?;
    }
    let registry = load_registry()?;
    let wanted: BTreeSet<u32> = a.tasks.iter().copied().collect();
    if let Some(bad) = wanted.iter().find(|id| !registry.iter().any(|t| t.id == **id)) {
        return Err(CliError::Usage(format!("task {bad} is not in the registry")));
    }
    let tasks: Vec<_> = registry.iter().filter(|t| wanted.is_empty() || wanted.contains(&t.id)).cloned().collect();
    fs::create_dir_all(&a.output)?;
    let state = encoder(a.checkpoint.as_deref(), cfg)?;
    let (mut ok, mut failed) = (Vec::new(), None);
    for (id, r) in run_suite(&tasks, &state, &cfg.run, cfg.seed) {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => {
                log::error!("task {id}: {e}");
                failed.get_or_insert(e);
            }
        }
    }
    if !ok.is_empty() {
        let summary = aggregate(&ok, &registry)?;
        write_outputs(&a.output, &ok, &summary, &registry)?;
        log::info!("{} tasks written, {} missing", ok.len(), summary.missing.len());
    }
    match failed {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON array of per-patient subtask predictions.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON array of composed reports.
    #[arg(long)]
    pub output: PathBuf,
    /// Panel definitions; the shipped panels when absent.
    #[arg(long)]
    pub panels: Option<PathBuf>,
    /// Reference reports to score lymphoma stains against.
    #[arg(long, requires = "agreement")]
    pub truth: Option<PathBuf>,
    /// Agreement CSV `patient,marker,model,truth,cell`.
    #[arg(long, requires = "truth")]
    pub agreement: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "disease", rename_all = "lowercase", deny_unknown_fields)]
enum Case {
    Lymphoma { patient: String, subtype: LymphomaSubtype, ihc: BTreeMap<String, IhcCall> },
    Colorectal { patient: String, malignancy: Malignancy, grade: Option<Grade>, polyp: Option<Polyp> },
}

fn lymphoma_only(reports: Vec<Report>) -> Vec<LymphomaReport> {
    reports
        .into_iter()
        .filter_map(|r| match r {
            Report::Lymphoma(l) => Some(l),
            Report::Colorectal(_) => None,
        })
        .collect()
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    require_file(&a.input)?;
    for p in a.panels.iter().chain(&a.truth) {
        require_file(p)?;
    }
    prepare_output(&a.output)?;
    let panels = match &a.panels {
        Some(p) => PanelSpec::from_json(&fs::read_to_string(p)?)?,
        None => PanelSpec::shipped(),
    };
    let cases: Vec<Case> =
        serde_json::from_str(&fs::read_to_string(&a.input)?).map_err(|e| CliError::data(a.input.display(), e))?;
    let reports = cases
        .into_iter()
        .map(|c| match c {
            Case::Lymphoma { patient, subtype, ihc } => {
                compose_lymphoma(&patient, subtype, &ihc, &panels).map(Report::Lymphoma)
            }
            Case::Colorectal { patient, malignancy, grade, polyp } => {
                compose_colorectal(&patient, malignancy, grade, polyp).map(Report::Colorectal)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let values: Vec<serde_json::Value> = reports.iter().map(Report::to_value).collect();
    write_json(&values, Some(&a.output))?;
    if let (Some(truth), Some(out)) = (&a.truth, &a.agreement) {
        prepare_output(out)?;
        let raw: Vec<serde_json::Value> =
            serde_json::from_str(&fs::read_to_string(truth)?).map_err(|e| CliError::data(truth.display(), e))?;
        let truth_reports = raw.into_iter().map(Report::from_value).collect::<Result<Vec<_>, _>>()?;
        let m = agreement(&lymphoma_only(reports), &lymphoma_only(truth_reports))?;
        match m.rate() {
            Some(r) => log::info!("stain agreement {r:.4} over {} comparable cells", m.agree + m.disagree),
            None => log::warn!("no comparable stain cells"),
        }
        fs::write(out, m.to_csv()?)?;
    }
    Ok(())
}
