use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use longtail::augmentation::Regime;
use longtail::config::{ArchitectureKind, ExperimentConfig, Source};
use longtail::dataset::{write_idx_f64, write_idx_labels};
use longtail::runner::{cmd_analyze, cmd_build_dataset, cmd_report, cmd_train, Layout};

fn small(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = out.to_path_buf();
    cfg.dataset.classes = 3;
    cfg.dataset.dim = 6;
    cfg.dataset.per_class = 40;
    cfg.dataset.test_per_class = 10;
    cfg.dataset.separation = 2.0;
    cfg.model.hidden = vec![12];
    cfg.training.epochs = 5;
    cfg.training.decay_epochs = vec![4];
    cfg.training.batch_size = 16;
    cfg
}

fn trace_body(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

fn all_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn empty_transforms_make_standard_equal_none() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.augmentation.transforms = Some(vec![]);
    cmd_build_dataset(&cfg).unwrap();
    cmd_train(&cfg, Regime::NoAugmentation).unwrap();
    cmd_train(&cfg, Regime::Standard).unwrap();
    let layout = Layout::new(dir.path());
    assert_eq!(
        trace_body(&layout.trace(Regime::NoAugmentation)),
        trace_body(&layout.trace(Regime::Standard))
    );
}

#[test]
fn targeted_within_warmup_augments_everything() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.training.epochs = 3;
    cfg.training.decay_epochs = vec![];
    cmd_build_dataset(&cfg).unwrap();
    cmd_train(&cfg, Regime::Standard).unwrap();
    cmd_train(&cfg, Regime::Targeted).unwrap();
    let layout = Layout::new(dir.path());
    let (s, t) = (
        trace_body(&layout.trace(Regime::Standard)),
        trace_body(&layout.trace(Regime::Targeted)),
    );
    assert_eq!(s, t);
    cmd_train(&cfg, Regime::NoAugmentation).unwrap();
    assert_ne!(trace_body(&layout.trace(Regime::NoAugmentation)), t);
}

/// Independent reading of the trace and report CSVs: brute-force pair
/// counts and sorted-index quartiles.
#[test]
fn report_matches_recomputation_from_raw_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.training.epochs = 3;
    cfg.training.decay_epochs = vec![];
    cmd_build_dataset(&cfg).unwrap();
    cmd_train(&cfg, Regime::Targeted).unwrap();
    let layout = Layout::new(dir.path());
    cmd_analyze(dir.path(), &[layout.trace(Regime::Targeted)]).unwrap();

    let mut by_epoch: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for line in trace_body(&layout.trace(Regime::Targeted)).lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let epoch: usize = f[0].parse().unwrap();
        let rank: f64 = f[4].parse().unwrap();
        let entry = by_epoch.entry(epoch).or_default();
        match f[2] {
            "atypical" => entry.0.push(rank),
            "noisy" => entry.1.push(rank),
            _ => {}
        }
    }
    let n = 120.0;
    let quartile = |v: &[f64], q: f64| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let pos = q * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
    };
    let report = trace_body(&dir.path().join("analysis/report_targeted.csv"));
    let lines: Vec<&str> = report.lines().skip(1).collect();
    assert_eq!(lines.len(), 3);
    for (line, (epoch, (a, b))) in lines.iter().zip(&by_epoch) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f[0] as usize, *epoch);
        let wins: f64 = a
            .iter()
            .flat_map(|x| b.iter().map(move |y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }))
            .sum();
        let auroc = wins / (a.len() * b.len()) as f64;
        assert!((f[1] - auroc).abs() < 5e-7, "auroc {} vs {auroc}", f[1]);
        let (aq1, aq3, bq1, bq3) = (quartile(a, 0.25), quartile(a, 0.75), quartile(b, 0.25), quartile(b, 0.75));
        let overlap = (aq3.min(bq3) - aq1.max(bq1)).max(0.0) / n;
        assert!((f[2] - overlap).abs() < 5e-7);
        let expect = [aq1, quartile(a, 0.5), aq3, bq1, quartile(b, 0.5), bq3];
        for (got, want) in f[3..].iter().zip(expect) {
            assert!((got - want).abs() < 5e-3, "{got} vs {want}");
        }
    }
}

#[test]
fn pipeline_is_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_report(&small(a.path()), false).unwrap();
    cmd_report(&small(b.path()), true).unwrap();
    let (fa, fb) = (all_files(a.path()), all_files(b.path()));
    assert!(fa.len() >= 14, "{:?}", fa.keys());
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs");
    }

    // analyze alone, twice
    let layout = Layout::new(a.path());
    let traces: Vec<_> = Regime::ALL.iter().map(|&v| layout.trace(v)).collect();
    let before = all_files(&a.path().join("analysis"));
    cmd_analyze(a.path(), &traces).unwrap();
    let after = all_files(&a.path().join("analysis"));
    for (name, bytes) in &after {
        if name != "summary.csv" {
            assert!(bytes == &before[name], "{name} changed on re-analysis");
        }
    }
}

/// Two-class 8×8 images: a bright top half or a bright bottom half.
fn write_image_pair(dir: &Path, name: &str, n: usize, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut data = Vec::with_capacity(n * 64);
    let mut labels = Vec::with_capacity(n);
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut noise = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 40) as f64 / (1u64 << 24) as f64 * 0.4
    };
    for i in 0..n {
        let label = i % 2;
        for row in 0..8 {
            for _col in 0..8 {
                let bright = (row < 4) == (label == 0);
                data.push(if bright { 0.6 } else { 0.0 } + noise());
            }
        }
        labels.push(label);
    }
    let (img, lbl) = (dir.join(format!("{name}-images.idx")), dir.join(format!("{name}-labels.idx")));
    write_idx_f64(&img, &[n, 8, 8], &data).unwrap();
    write_idx_labels(&lbl, &labels).unwrap();
    (img, lbl)
}

#[test]
fn idx_images_train_a_small_cnn() {
    let dir = tempfile::tempdir().unwrap();
    let (ti, tl) = write_image_pair(dir.path(), "train", 100, 1);
    let (vi, vl) = write_image_pair(dir.path(), "test", 40, 2);
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = dir.path().join("run");
    cfg.dataset.source = Source::Idx;
    cfg.dataset.train_images = Some(ti);
    cfg.dataset.train_labels = Some(tl);
    cfg.dataset.test_images = Some(vi);
    cfg.dataset.test_labels = Some(vl);
    cfg.model.architecture = ArchitectureKind::SmallCnn;
    cfg.model.conv_channels = 4;
    cfg.model.dense_width = 16;
    cfg.training.epochs = 6;
    cfg.training.decay_epochs = vec![];
    cfg.training.batch_size = 10;
    cfg.training.base_lr = 0.05;
    cfg.validate().unwrap();

    let summary = cmd_build_dataset(&cfg).unwrap();
    assert_eq!((summary.n, summary.class_count, summary.test_size), (100, 2, 40));
    let run = cmd_train(&cfg, Regime::Targeted).unwrap();
    assert_eq!(run.trace_rows, 600);
    assert!(run.test_accuracy > 0.6, "accuracy {}", run.test_accuracy);
}
