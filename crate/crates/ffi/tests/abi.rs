use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use longtail_ffi::*;

const SMALL: &str = r#"
[dataset]
classes = 3
dim = 6
per_class = 40
test_per_class = 10
separation = 2.0

[model]
hidden = [12]

[training]
epochs = 4
decay_epochs = [3]
batch_size = 16
"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lt_last_error_message()) }.to_string_lossy().into_owned()
}

fn experiment(out: &Path) -> *mut LtExperiment {
    let toml = CString::new(SMALL).unwrap();
    let dir = CString::new(out.to_str().unwrap()).unwrap();
    let mut exp = ptr::null_mut();
    let status = unsafe { lt_experiment_from_toml(toml.as_ptr(), dir.as_ptr(), &mut exp) };
    assert_eq!(status, LtStatus::Ok, "{}", last_error());
    exp
}

#[test]
fn auroc_matches_pair_count() {
    // atypical ranks {1, 3} against noisy {0, 2}: 3 of 4 pairs won
    let ranks = [0usize, 1, 2, 3, 4];
    let tags = [LT_TAG_NOISY, LT_TAG_ATYPICAL, LT_TAG_NOISY, LT_TAG_ATYPICAL, LT_TAG_TYPICAL];
    let mut out = 0.0;
    assert_eq!(unsafe { lt_auroc(ranks.as_ptr(), tags.as_ptr(), 5, &mut out) }, LtStatus::Ok);
    assert_eq!(out, 0.75);

    let bad = [7u8; 5];
    assert_eq!(
        unsafe { lt_auroc(ranks.as_ptr(), bad.as_ptr(), 5, &mut out) },
        LtStatus::InvalidArgument
    );
    assert!(last_error().contains("tag code"));
    let no_noisy = [LT_TAG_ATYPICAL; 5];
    assert_eq!(
        unsafe { lt_auroc(ranks.as_ptr(), no_noisy.as_ptr(), 5, &mut out) },
        LtStatus::Contract
    );
}

#[test]
fn null_pointers_are_reported() {
    let mut out = 0.0;
    assert_eq!(unsafe { lt_auroc(ptr::null(), ptr::null(), 3, &mut out) }, LtStatus::NullPointer);
    assert!(last_error().contains("ranks"));
    assert_eq!(
        unsafe { lt_learning_rate(0.1, 0.5, ptr::null(), 0, 5, 1, ptr::null_mut()) },
        LtStatus::NullPointer
    );
    assert_eq!(unsafe { lt_experiment_load(ptr::null(), &mut ptr::null_mut()) }, LtStatus::NullPointer);
    unsafe {
        lt_experiment_free(ptr::null_mut());
        lt_trace_free(ptr::null_mut());
    }
}

#[test]
fn learning_rate_steps() {
    let decay = [10usize, 20];
    let mut lr = 0.0;
    for (epoch, want) in [(1, 0.1), (9, 0.1), (10, 0.02), (19, 0.02), (20, 0.004), (30, 0.004)] {
        let s = unsafe { lt_learning_rate(0.1, 0.2, decay.as_ptr(), 2, 30, epoch, &mut lr) };
        assert_eq!(s, LtStatus::Ok);
        assert!((lr - want).abs() < 1e-15, "epoch {epoch}: {lr}");
    }
    let s = unsafe { lt_learning_rate(0.1, 0.2, decay.as_ptr(), 2, 30, 31, &mut lr) };
    assert_ne!(s, LtStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn select_targets_warmup_then_lowest_msp() {
    let msp = [0.9, 0.1, 0.5, 0.1, 0.8, 0.3, 0.95, 0.7, 0.6, 0.4];
    let mut ids = [usize::MAX; 10];
    let mut len = 0;
    let s = unsafe { lt_select_targets(2, 0.2, 2, ptr::null(), 10, ids.as_mut_ptr(), 10, &mut len) };
    assert_eq!(s, LtStatus::Ok);
    assert_eq!(&ids[..len], &(0..10).collect::<Vec<_>>()[..]);

    let s = unsafe { lt_select_targets(2, 0.2, 3, msp.as_ptr(), 10, ids.as_mut_ptr(), 10, &mut len) };
    assert_eq!(s, LtStatus::Ok);
    assert_eq!(&ids[..len], &[1, 3]);

    // too small an output buffer still reports the needed length
    let s = unsafe { lt_select_targets(2, 0.2, 1, ptr::null(), 10, ids.as_mut_ptr(), 4, &mut len) };
    assert_eq!(s, LtStatus::BufferTooSmall);
    assert_eq!(len, 10);

    let s = unsafe { lt_select_targets(2, 0.2, 3, ptr::null(), 10, ids.as_mut_ptr(), 10, &mut len) };
    assert_eq!(s, LtStatus::Contract);
}

#[test]
fn invalid_config_leaves_handle_null() {
    let toml = CString::new("[dataset]\nnoisy_fraction = 0.7\nduplicated_fraction = 0.5\n").unwrap();
    let mut exp = ptr::null_mut();
    let s = unsafe { lt_experiment_from_toml(toml.as_ptr(), ptr::null(), &mut exp) };
    assert_eq!(s, LtStatus::Config);
    assert!(exp.is_null());
    let garbage = CString::new("[dataset").unwrap();
    let s = unsafe { lt_experiment_from_toml(garbage.as_ptr(), ptr::null(), &mut exp) };
    assert_eq!(s, LtStatus::Config);
}

#[test]
fn experiment_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path());
    unsafe {
        let mut hash = [0 as std::ffi::c_char; 65];
        assert_eq!(lt_experiment_config_hash(exp, hash.as_mut_ptr(), 65), LtStatus::Ok);
        let hash = CStr::from_ptr(hash.as_ptr()).to_str().unwrap().to_string();
        assert_eq!(hash.len(), 64);
        assert!(hash.bytes().all(|b| b.is_ascii_hexdigit()));

        let mut counts = [0usize; 3];
        assert_eq!(lt_experiment_build_dataset(exp, counts.as_mut_ptr()), LtStatus::Ok, "{}", last_error());
        assert_eq!(counts.iter().sum::<usize>(), 120);
        assert_eq!(counts, [72, 24, 24]);

        let mut acc = -1.0;
        assert_eq!(lt_experiment_train(exp, LtRegime::Targeted, &mut acc), LtStatus::Ok, "{}", last_error());
        assert!((0.0..=1.0).contains(&acc));

        let mut trace = ptr::null_mut();
        assert_eq!(lt_experiment_open_trace(exp, LtRegime::Targeted, &mut trace), LtStatus::Ok);
        let (mut epochs, mut n) = (0, 0);
        assert_eq!(lt_trace_dims(trace, &mut epochs, &mut n), LtStatus::Ok);
        assert_eq!((epochs, n), (4, 120));

        let mut tags = vec![0u8; n];
        assert_eq!(lt_trace_tags(trace, tags.as_mut_ptr(), n), LtStatus::Ok);
        let mut ranks = vec![0usize; n];
        let mut msp = vec![0.0; n];
        for row in 0..epochs {
            let mut epoch = 0;
            assert_eq!(lt_trace_epoch(trace, row, &mut epoch), LtStatus::Ok);
            assert_eq!(epoch, row + 1);
            assert_eq!(lt_trace_rank_row(trace, row, ranks.as_mut_ptr(), n), LtStatus::Ok);
            assert_eq!(lt_trace_msp_row(trace, row, msp.as_mut_ptr(), n), LtStatus::Ok);
            let mut sorted = ranks.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            // rank 0 carries the lowest MSP
            let lowest = ranks.iter().position(|&r| r == 0).unwrap();
            assert!(msp.iter().all(|&m| m >= msp[lowest]));

            let (mut via_trace, mut via_arrays) = (0.0, 0.0);
            assert_eq!(lt_trace_auroc(trace, row, &mut via_trace), LtStatus::Ok);
            assert_eq!(lt_auroc(ranks.as_ptr(), tags.as_ptr(), n, &mut via_arrays), LtStatus::Ok);
            assert_eq!(via_trace, via_arrays);
        }
        let mut epoch = 0;
        assert_eq!(lt_trace_epoch(trace, epochs, &mut epoch), LtStatus::Index);
        assert_eq!(lt_trace_rank_row(trace, 0, ranks.as_mut_ptr(), n - 1), LtStatus::BufferTooSmall);
        lt_trace_free(trace);

        // a different seed no longer matches the built dataset
        assert_eq!(lt_experiment_set_seed(exp, 77), LtStatus::Ok);
        let s = lt_experiment_train(exp, LtRegime::None, &mut acc);
        assert_eq!(s, LtStatus::Config);
        assert!(last_error().contains("different config"));
        lt_experiment_free(exp);
    }
}

#[test]
fn trace_open_reports_missing_file() {
    let path = CString::new("/nonexistent/trace.csv").unwrap();
    let mut trace = ptr::null_mut();
    assert_eq!(unsafe { lt_trace_open(path.as_ptr(), &mut trace) }, LtStatus::Io);
    assert!(trace.is_null());
    assert!(last_error().contains("/nonexistent/trace.csv"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/longtail.h")).unwrap();
    let source = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct LtExperiment LtExperiment;"));
    assert!(header.contains("LT_STATUS_BUFFER_TOO_SMALL = 3"));
}

/// Compiles the C smoke test against the static library and runs it.
#[test]
fn c_program_links_against_staticlib() {
    let profile_dir: PathBuf = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("liblongtail_ffi.a");
    assert!(lib.is_file(), "{} not built", lib.display());
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".to_string());
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = Path::new(env!("CARGO_TARGET_TMPDIR")).join("longtail_smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok 0.1.0"));
}
