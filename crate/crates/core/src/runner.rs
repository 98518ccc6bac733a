//! Pipeline commands behind the `longtail` binary.
//!
//! Output layout under the configured directory:
//!
//! ```text
//! dataset/manifest.csv  dataset/features.idx
//! dataset/test_features.idx  dataset/test_labels.idx
//! <variant>/trace.csv  <variant>/model.json
//! analysis/report_<variant>.csv  analysis/box_<variant>.svg
//! analysis/comparison.csv  analysis/summary.csv
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::analysis::{self, SeparationReport};
use crate::augmentation::Regime;
use crate::config::{ExperimentConfig, Source};
use crate::csvio::meta;
use crate::dataset::{
    build_frequency_noise, build_score_noise, generate_gaussian_clusters, load_idx, read_idx,
    read_manifest, typicality_score_oracle, write_idx_f64, write_idx_labels, write_manifest,
    Example, LabeledDataset, Recipe, StratifiedDataset, Tag,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tracking::{read_trace, MspTrace, TraceFile};
use crate::trainer::{evaluate, train};

/// Where each artifact lives under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dataset_dir().join("manifest.csv")
    }
    pub fn features(&self) -> PathBuf {
        self.dataset_dir().join("features.idx")
    }
    pub fn test_features(&self) -> PathBuf {
        self.dataset_dir().join("test_features.idx")
    }
    pub fn test_labels(&self) -> PathBuf {
        self.dataset_dir().join("test_labels.idx")
    }
    pub fn trace(&self, variant: Regime) -> PathBuf {
        self.root.join(variant.as_str()).join("trace.csv")
    }
    pub fn model(&self, variant: Regime) -> PathBuf {
        self.root.join(variant.as_str()).join("model.json")
    }
    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut out = create_file(path)?;
    f(&mut out)
        .and_then(|()| out.flush())
        .map_err(|e| Error::io(path, e))
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn pairs<const N: usize>(items: [(&str, String); N]) -> Vec<(String, String)> {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Builds the stratified training set and the held-out test set in memory.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<(StratifiedDataset, LabeledDataset)> {
    let d = &cfg.dataset;
    let (source, test) = match d.source {
        Source::Synthetic => {
            let per = d.per_class + d.test_per_class;
            let all = generate_gaussian_clusters(d.classes, d.dim, per, d.separation, d.seed)?;
            let (mut train_x, mut train_y, mut test_x, mut test_y) = (vec![], vec![], vec![], vec![]);
            for (i, (x, y)) in all.features.into_iter().zip(all.labels).enumerate() {
                if i % per < d.per_class {
                    train_x.push(x);
                    train_y.push(y);
                } else {
                    test_x.push(x);
                    test_y.push(y);
                }
            }
            (
                LabeledDataset::new(train_x, train_y, d.classes)?,
                LabeledDataset::new(test_x, test_y, d.classes)?,
            )
        }
        Source::Idx => {
            let [ti, tl, vi, vl] = d.idx_paths()?;
            let mut train = load_idx(ti, tl)?;
            let mut test = load_idx(vi, vl)?;
            let classes = train.class_count.max(test.class_count);
            train.class_count = classes;
            test.class_count = classes;
            if train.feature_shape() != test.feature_shape() {
                return Err(Error::Dimension {
                    op: "train/test features",
                    left: train.feature_shape().unwrap_or_default().to_vec(),
                    right: test.feature_shape().unwrap_or_default().to_vec(),
                });
            }
            (train, test)
        }
    };
    let stratified = match d.recipe() {
        Recipe::FrequencyNoise(c) => build_frequency_noise(&source, &c)?,
        Recipe::ScoreNoise(c) => {
            let scores = typicality_score_oracle(&source, d.score_neighbors)?;
            build_score_noise(&source, &scores, &c)?
        }
    };
    Ok((stratified, test))
}

/// IDX dims for `n` examples of `shape`: vectors are stored as `1 × d` images.
fn idx_dims(n: usize, shape: &[usize]) -> Vec<usize> {
    let mut dims = vec![n];
    match shape {
        [d] => dims.extend([1, *d]),
        [1, h, w] => dims.extend([*h, *w]),
        s => dims.extend_from_slice(s),
    }
    dims
}

fn write_features(path: &Path, features: &[&Tensor]) -> Result<()> {
    let shape = features
        .first()
        .map(|t| t.shape().to_vec())
        .ok_or_else(|| Error::contract("no features to write"))?;
    let data: Vec<f64> = features.iter().flat_map(|t| t.data().iter().copied()).collect();
    write_idx_f64(path, &idx_dims(features.len(), &shape), &data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub n: usize,
    pub class_count: usize,
    pub counts: [(Tag, usize); 3],
    pub test_size: usize,
    pub manifest: PathBuf,
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{} examples, {} classes, {} test examples", self.n, self.class_count, self.test_size)?;
        for (tag, count) in self.counts {
            writeln!(
                f,
                "  {tag:<9} {count:>6} ({:.1}%)",
                100.0 * count as f64 / self.n as f64
            )?;
        }
        write!(f, "manifest: {}", self.manifest.display())
    }
}

/// Writes the manifest, the training feature blob and the test pair.
pub fn cmd_build_dataset(cfg: &ExperimentConfig) -> Result<DatasetSummary> {
    let layout = Layout::new(&cfg.output_dir);
    let (data, test) = build_dataset(cfg)?;
    create_dir(&layout.dataset_dir())?;

    let features: Vec<&Tensor> = data.examples.iter().map(|e| &e.features).collect();
    write_features(&layout.features(), &features)?;
    write_features(&layout.test_features(), &test.features.iter().collect::<Vec<_>>())?;
    write_idx_labels(&layout.test_labels(), &test.labels)?;

    let counts = Tag::ALL.map(|t| (t, data.count(t)));
    let mut metadata = pairs([
        ("config_hash", cfg.hash()),
        ("class_count", data.class_count.to_string()),
        ("features_sha256", file_sha256(&layout.features())?),
        ("test_features_sha256", file_sha256(&layout.test_features())?),
        ("test_labels_sha256", file_sha256(&layout.test_labels())?),
        (
            "recipe",
            serde_json::to_string(&data.recipe).expect("recipe serializes"),
        ),
    ]);
    metadata.extend(counts.iter().map(|(t, c)| (format!("count_{t}"), c.to_string())));
    write_with(&layout.manifest(), |out| {
        write_manifest(out, &metadata, &data.manifest())
    })?;

    Ok(DatasetSummary {
        n: data.len(),
        class_count: data.class_count,
        counts,
        test_size: test.len(),
        manifest: layout.manifest(),
    })
}

/// The dataset as written by [`cmd_build_dataset`], with the hash of its manifest.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: StratifiedDataset,
    pub test: LabeledDataset,
    pub manifest_sha256: String,
}

fn read_features(path: &Path) -> Result<Vec<Tensor>> {
    let what = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let arr = read_idx(&bytes, &what)?;
    let shape: Vec<usize> = match arr.dims[..] {
        [_, h, w] => vec![1, h, w],
        [_, c, h, w] => vec![c, h, w],
        _ => return Err(Error::format(what, "expected a 3-d or 4-d feature array")),
    };
    let per = shape.iter().product();
    arr.data
        .chunks_exact(per)
        .map(|px| Tensor::new(shape.clone(), px.to_vec()))
        .collect()
}

/// Reads back a built dataset, refusing one built from a different config.
pub fn load_prepared(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let layout = Layout::new(&cfg.output_dir);
    let manifest_path = layout.manifest();
    let file = File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let (metadata, records) = read_manifest(BufReader::new(file))?;
    let hash = cfg.hash();
    if meta(&metadata, "config_hash") != Some(hash.as_str()) {
        return Err(Error::config(format!(
            "{} was built from a different config (hash {}, expected {hash}); rerun build-dataset",
            manifest_path.display(),
            meta(&metadata, "config_hash").unwrap_or("missing")
        )));
    }
    for (key, path) in [
        ("features_sha256", layout.features()),
        ("test_features_sha256", layout.test_features()),
        ("test_labels_sha256", layout.test_labels()),
    ] {
        if meta(&metadata, key) != Some(file_sha256(&path)?.as_str()) {
            return Err(Error::format(
                path.display().to_string(),
                "contents do not match the manifest checksum",
            ));
        }
    }
    let class_count: usize = meta(&metadata, "class_count")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format("manifest", "missing class_count"))?;

    let features = read_features(&layout.features())?;
    if features.len() != records.len() {
        return Err(Error::format(
            "manifest",
            format!("{} rows but {} feature vectors", records.len(), features.len()),
        ));
    }
    let examples = records
        .iter()
        .zip(features)
        .map(|(r, features)| Example {
            id: r.id,
            features,
            original_label: r.original_label,
            assigned_label: r.assigned_label,
            tag: r.tag,
            source_index: r.source_index,
        })
        .collect();
    let test_features = read_features(&layout.test_features())?;
    let test_labels = crate::dataset::read_labels(&layout.test_labels())?;
    Ok(PreparedData {
        train: StratifiedDataset {
            examples,
            class_count,
            recipe: cfg.dataset.recipe(),
        },
        test: LabeledDataset::new(test_features, test_labels, class_count)?,
        manifest_sha256: file_sha256(&manifest_path)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub variant: Regime,
    pub epochs: usize,
    pub trace_rows: usize,
    pub test_accuracy: f64,
    pub trace: PathBuf,
}

impl std::fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} epochs, {} trace rows, test accuracy {:.4}\ntrace: {}",
            self.variant,
            self.epochs,
            self.trace_rows,
            self.test_accuracy,
            self.trace.display()
        )
    }
}

/// Trains one variant on the built dataset and writes its trace and model.
pub fn cmd_train(cfg: &ExperimentConfig, variant: Regime) -> Result<TrainSummary> {
    let data = load_prepared(cfg)?;
    train_variant(cfg, &data, variant)
}

/// [`cmd_train`] on an already loaded dataset.
pub fn train_variant(cfg: &ExperimentConfig, data: &PreparedData, variant: Regime) -> Result<TrainSummary> {
    let layout = Layout::new(&cfg.output_dir);
    let shape = data
        .train
        .feature_shape()
        .ok_or_else(|| Error::contract("empty dataset"))?
        .to_vec();
    let spec = cfg.model.spec(shape, data.train.class_count);
    let policy = cfg.policy(variant);
    let mut tracker = MspTrace::for_dataset(&data.train);
    let outcome = train(&data.train, &spec, &cfg.training, &policy, &mut tracker);

    let mut metadata = pairs([
        ("config_hash", cfg.hash()),
        ("manifest_sha256", data.manifest_sha256.clone()),
        ("variant", variant.to_string()),
        ("dataset_seed", cfg.dataset.seed.to_string()),
        ("init_seed", cfg.model.init_seed.to_string()),
        ("training_seed", cfg.training.seed.to_string()),
        ("schedule", json(&cfg.training)),
        ("policy", json(&policy)),
        ("model", json(&spec)),
        ("epochs_completed", tracker.rows().len().to_string()),
    ]);
    let trace_path = layout.trace(variant);
    create_dir(trace_path.parent().expect("trace has a parent"))?;
    let model = match outcome {
        Ok(model) => model,
        Err(err) => {
            metadata.push(("status".into(), "diverged".into()));
            metadata.push(("error".into(), err.to_string()));
            write_with(&trace_path, |out| tracker.write_csv(out, &metadata))?;
            return Err(err);
        }
    };
    let test_accuracy = evaluate(&model, &data.test)?;
    metadata.push(("status".into(), "complete".into()));
    metadata.push(("test_accuracy".into(), format!("{test_accuracy:.6}")));
    write_with(&trace_path, |out| tracker.write_csv(out, &metadata))?;

    let params: Vec<_> = model
        .params
        .iter()
        .map(|p| {
            serde_json::json!({
                "name": p.name,
                "shape": p.value.shape(),
                "data": p.value.data(),
            })
        })
        .collect();
    let doc = serde_json::json!({
        "config_hash": cfg.hash(),
        "variant": variant.as_str(),
        "spec": spec,
        "parameters": params,
    });
    write_with(&layout.model(variant), |out| {
        serde_json::to_writer(&mut *out, &doc).map_err(std::io::Error::other)?;
        writeln!(out)
    })?;

    Ok(TrainSummary {
        variant,
        epochs: tracker.rows().len(),
        trace_rows: tracker.rows().len() * tracker.tags().len(),
        test_accuracy,
        trace: trace_path,
    })
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("metadata serializes")
}

/// One analysed trace.
#[derive(Debug, Clone)]
pub struct VariantReport {
    pub variant: String,
    pub trace: TraceFile,
    pub report: SeparationReport,
}

pub fn read_trace_file(path: &Path) -> Result<TraceFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(BufReader::new(file))
}

/// Separation reports, box plots and a comparison table for `traces`,
/// written under `out/analysis`. All traces must share a config hash and
/// a manifest.
pub fn cmd_analyze(out: &Path, traces: &[PathBuf]) -> Result<Vec<VariantReport>> {
    if traces.is_empty() {
        return Err(Error::contract("no traces to analyze"));
    }
    let mut reports: Vec<VariantReport> = Vec::with_capacity(traces.len());
    for path in traces {
        let trace = read_trace_file(path)?;
        if trace.ranks.epochs.is_empty() {
            return Err(Error::format(path.display().to_string(), "trace has no epochs"));
        }
        if let Some(first) = reports.first() {
            for key in ["config_hash", "manifest_sha256"] {
                if trace.meta(key) != first.trace.meta(key) {
                    return Err(Error::contract(format!(
                        "{} has {key} {:?} but {} has {:?}; refusing to mix runs",
                        path.display(),
                        trace.meta(key),
                        traces[0].display(),
                        first.trace.meta(key)
                    )));
                }
            }
            if trace.tags != first.trace.tags {
                return Err(Error::contract(format!(
                    "{} was recorded on a different dataset",
                    path.display()
                )));
            }
        }
        let variant = trace
            .meta("variant")
            .map(str::to_string)
            .unwrap_or_else(|| {
                path.parent()
                    .and_then(Path::file_name)
                    .map_or_else(|| "trace".to_string(), |s| s.to_string_lossy().into_owned())
            });
        if reports.iter().any(|r| r.variant == variant) {
            return Err(Error::contract(format!("variant {variant} given twice")));
        }
        let report = analysis::separation_report(&trace.ranks, &trace.tags)?;
        reports.push(VariantReport {
            variant,
            trace,
            report,
        });
    }

    let dir = out.join("analysis");
    create_dir(&dir)?;
    let hash = reports[0].trace.meta("config_hash").unwrap_or("").to_string();
    for r in &reports {
        let metadata = pairs([("config_hash", hash.clone()), ("variant", r.variant.clone())]);
        write_with(&dir.join(format!("report_{}.csv", r.variant)), |out| {
            r.report.write_csv(out, &metadata)
        })?;
        let svg = r
            .report
            .to_svg(&format!("MSP rank by epoch: {} augmentation", r.variant))
            .replacen('\n', &format!("\n<!-- config_hash={hash} -->\n"), 1);
        fs::write(dir.join(format!("box_{}.svg", r.variant)), svg)
            .map_err(|e| Error::io(dir.join(format!("box_{}.svg", r.variant)), e))?;
    }
    let table: Vec<(String, SeparationReport)> = reports
        .iter()
        .map(|r| (r.variant.clone(), r.report.clone()))
        .collect();
    write_with(&dir.join("comparison.csv"), |out| {
        analysis::write_comparison(out, &pairs([("config_hash", hash.clone())]), &table)
    })?;
    Ok(reports)
}

pub const SUMMARY_HEADER: &str =
    "variant,test_accuracy,final_auroc,final_iqr_overlap,noisy_msp_end_of_warmup,noisy_msp_final_quarter";

/// Builds the dataset, trains every configured variant, analyses the
/// traces and writes `analysis/summary.csv`. With `parallel`, variants
/// train on separate threads; outputs are identical either way.
pub fn cmd_report(cfg: &ExperimentConfig, parallel: bool) -> Result<Vec<VariantReport>> {
    cmd_build_dataset(cfg)?;
    let data = load_prepared(cfg)?;
    let variants = &cfg.augmentation.variants;
    let results: Vec<Result<TrainSummary>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = variants
                .iter()
                .map(|&v| s.spawn({
                    let data = &data;
                    move || train_variant(cfg, data, v)
                }))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect()
        })
    } else {
        variants.iter().map(|&v| train_variant(cfg, &data, v)).collect()
    };
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;

    let layout = Layout::new(&cfg.output_dir);
    let traces: Vec<PathBuf> = variants.iter().map(|&v| layout.trace(v)).collect();
    let reports = cmd_analyze(&cfg.output_dir, &traces)?;

    let warmup = cfg.augmentation.warmup_epochs;
    let path = layout.analysis_dir().join("summary.csv");
    let mut rows = Vec::with_capacity(reports.len());
    for (r, s) in reports.iter().zip(&summaries) {
        let (early, late) = analysis::noisy_msp_trend(&r.trace.msp, &r.trace.tags, warmup)?;
        let last = r.report.final_row();
        rows.push(format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.variant, s.test_accuracy, last.auroc, last.iqr_overlap, early, late
        ));
    }
    write_with(&path, |out| {
        writeln!(out, "# config_hash={}", cfg.hash())?;
        writeln!(out, "{SUMMARY_HEADER}")?;
        rows.iter().try_for_each(|row| writeln!(out, "{row}"))
    })?;
    Ok(reports)
}
