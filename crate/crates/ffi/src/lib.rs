//! C ABI over `longtail`.
//!
//! Every fallible function returns an [`LtStatus`]. On failure a message is
//! kept per thread and can be read with [`lt_last_error_message`]. Handles
//! are opaque and must be released with their `_free` function. Output
//! buffers are caller-owned; functions that fill one take its capacity and
//! fail with `LT_STATUS_BUFFER_TOO_SMALL` when it is short.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;
use std::slice;

use longtail::analysis;
use longtail::augmentation::{self, AugmentationPolicy, Regime};
use longtail::config::ExperimentConfig;
use longtail::dataset::Tag;
use longtail::runner;
use longtail::tracking::TraceFile;
use longtail::trainer::{self, TrainingSchedule};
use longtail::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Dimension = 4,
    Index = 5,
    Contract = 6,
    Config = 7,
    Format = 8,
    Divergence = 9,
    Io = 10,
    Panic = 11,
}

/// Augmentation variant.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtRegime {
    None = 0,
    Standard = 1,
    Targeted = 2,
}

impl From<LtRegime> for Regime {
    fn from(r: LtRegime) -> Self {
        match r {
            LtRegime::None => Regime::NoAugmentation,
            LtRegime::Standard => Regime::Standard,
            LtRegime::Targeted => Regime::Targeted,
        }
    }
}

/// Stratum tag as stored in tag arrays.
pub const LT_TAG_TYPICAL: u8 = 0;
pub const LT_TAG_ATYPICAL: u8 = 1;
pub const LT_TAG_NOISY: u8 = 2;

/// A validated experiment config.
pub struct LtExperiment {
    config: ExperimentConfig,
}

/// A trace CSV read into memory.
pub struct LtTrace {
    trace: TraceFile,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

struct Failure(LtStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let status = match err {
            Error::Dimension { .. } => LtStatus::Dimension,
            Error::Index { .. } => LtStatus::Index,
            Error::Contract(_) => LtStatus::Contract,
            Error::Config(_) => LtStatus::Config,
            Error::Format { .. } => LtStatus::Format,
            Error::Divergence { .. } => LtStatus::Divergence,
            Error::Io { .. } => LtStatus::Io,
        };
        Failure(status, err.to_string())
    }
}

fn fail(status: LtStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, translating errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LtStatus::Panic
        }
    }
}

unsafe fn nonnull<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(LtStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn nonnull_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(LtStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn input_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(LtStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output_slice<'a, T>(p: *mut T, cap: usize, need: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if cap < need {
        return Err(fail(
            LtStatus::BufferTooSmall,
            format!("{what} holds {cap} elements, {need} needed"),
        ));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(LtStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(slice::from_raw_parts_mut(p, need))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(LtStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LtStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn tag_code(tag: Tag) -> u8 {
    match tag {
        Tag::Typical => LT_TAG_TYPICAL,
        Tag::Atypical => LT_TAG_ATYPICAL,
        Tag::Noisy => LT_TAG_NOISY,
    }
}

fn tag_from_code(code: u8) -> Result<Tag, Failure> {
    match code {
        LT_TAG_TYPICAL => Ok(Tag::Typical),
        LT_TAG_ATYPICAL => Ok(Tag::Atypical),
        LT_TAG_NOISY => Ok(Tag::Noisy),
        _ => Err(fail(LtStatus::InvalidArgument, format!("unknown tag code {code}"))),
    }
}

/// Message for the most recent failure on this thread; empty after a
/// success. Valid until the next `lt_` call on the same thread.
#[no_mangle]
pub extern "C" fn lt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Step-decayed learning rate for a 1-based `epoch`.
///
/// # Safety
/// `decay_epochs` must point to `n_decay` values (or be NULL when zero);
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_learning_rate(
    base_lr: f64,
    decay_factor: f64,
    decay_epochs: *const usize,
    n_decay: usize,
    total_epochs: usize,
    epoch: usize,
    out: *mut f64,
) -> LtStatus {
    guard(|| {
        let out = nonnull_mut(out, "out")?;
        let schedule = TrainingSchedule {
            epochs: total_epochs,
            base_lr,
            decay_factor,
            decay_epochs: input_slice(decay_epochs, n_decay, "decay_epochs")?.to_vec(),
            ..TrainingSchedule::default()
        };
        schedule.validate()?;
        *out = trainer::learning_rate(&schedule, epoch)?;
        Ok(())
    })
}

/// Ids to augment in `epoch` under a targeted policy. `msp` holds the
/// previous epoch's MSP per id and may be NULL during warmup. Writes the
/// sorted ids to `out_ids` and their count to `out_len`.
///
/// # Safety
/// `msp` must hold `n` values when non-NULL; `out_ids` must hold `out_cap`.
#[no_mangle]
pub unsafe extern "C" fn lt_select_targets(
    warmup_epochs: usize,
    target_fraction: f64,
    epoch: usize,
    msp: *const f64,
    n: usize,
    out_ids: *mut usize,
    out_cap: usize,
    out_len: *mut usize,
) -> LtStatus {
    guard(|| {
        let out_len = nonnull_mut(out_len, "out_len")?;
        let policy = AugmentationPolicy {
            warmup_epochs,
            target_fraction,
            ..AugmentationPolicy::new(Regime::Targeted, vec![])
        };
        policy.validate()?;
        let table: Option<Vec<(usize, f64)>> = if msp.is_null() {
            None
        } else {
            Some(input_slice(msp, n, "msp")?.iter().copied().enumerate().collect())
        };
        let ids = augmentation::select_targets(&policy, epoch, n, table.as_deref())?;
        *out_len = ids.len();
        output_slice(out_ids, out_cap, ids.len(), "out_ids")?.copy_from_slice(&ids);
        Ok(())
    })
}

/// Exact AUROC of atypical over noisy ranks. `tags` uses the `LT_TAG_*` codes.
///
/// # Safety
/// `ranks` and `tags` must each hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_auroc(ranks: *const usize, tags: *const u8, n: usize, out: *mut f64) -> LtStatus {
    guard(|| {
        let out = nonnull_mut(out, "out")?;
        let ranks = input_slice(ranks, n, "ranks")?;
        let tags = input_slice(tags, n, "tags")?
            .iter()
            .map(|&c| tag_from_code(c))
            .collect::<Result<Vec<_>, _>>()?;
        *out = analysis::auroc(ranks, &tags)?;
        Ok(())
    })
}

fn new_experiment(config: ExperimentConfig, out: &mut *mut LtExperiment) {
    *out = Box::into_raw(Box::new(LtExperiment { config }));
}

/// Parses and validates a TOML config from a string. `output_dir` may be
/// NULL to keep the config's own.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_experiment_from_toml(
    toml: *const c_char,
    output_dir: *const c_char,
    out: *mut *mut LtExperiment,
) -> LtStatus {
    guard(|| {
        let out = nonnull_mut(out, "out")?;
        *out = ptr::null_mut();
        let mut config = ExperimentConfig::parse(c_str(toml, "toml")?)?;
        if !output_dir.is_null() {
            config.output_dir = PathBuf::from(c_str(output_dir, "output_dir")?);
        }
        config.validate()?;
        new_experiment(config, out);
        Ok(())
    })
}

/// Loads and validates a config file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_experiment_load(path: *const c_char, out: *mut *mut LtExperiment) -> LtStatus {
    guard(|| {
        let out = nonnull_mut(out, "out")?;
        *out = ptr::null_mut();
        let config = ExperimentConfig::load(Path::new(c_str(path, "path")?))?;
        new_experiment(config, out);
        Ok(())
    })
}

/// Releases an experiment. NULL is ignored.
///
/// # Safety
/// `exp` must come from `lt_experiment_*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lt_experiment_free(exp: *mut LtExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Replaces every seed in the experiment.
///
/// # Safety
/// `exp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lt_experiment_set_seed(exp: *mut LtExperiment, seed: u64) -> LtStatus {
    guard(|| {
        nonnull_mut(exp, "exp")?.config.override_seed(seed);
        Ok(())
    })
}

/// Writes the 64-hex-digit config hash plus a NUL into `buf` (capacity >= 65).
///
/// # Safety
/// `exp` must be a live handle; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn lt_experiment_config_hash(exp: *const LtExperiment, buf: *mut c_char, cap: usize) -> LtStatus {
    guard(|| {
        let hash = nonnull(exp, "exp")?.config.hash();
        let out = output_slice(buf.cast::<u8>(), cap, hash.len() + 1, "buf")?;
        out[..hash.len()].copy_from_slice(hash.as_bytes());
        out[hash.len()] = 0;
        Ok(())
    })
}

/// Builds and writes the stratified dataset. `counts` receives the number
/// of typical, atypical and noisy examples, in that order.
///
/// # Safety
/// `exp` must be a live handle; `counts` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn lt_experiment_build_dataset(exp: *const LtExperiment, counts: *mut usize) -> LtStatus {
    guard(|| {
        let exp = nonnull(exp, "exp")?;
        let out = output_slice(counts, 3, 3, "counts")?;
        let summary = runner::cmd_build_dataset(&exp.config)?;
        for (slot, (_, count)) in out.iter_mut().zip(summary.counts) {
            *slot = count;
        }
        Ok(())
    })
}

/// Trains one variant on the built dataset, writing its trace and model.
/// On divergence the partial trace is kept and `LT_STATUS_DIVERGENCE` returned.
///
/// # Safety
/// `exp` must be a live handle; `test_accuracy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_experiment_train(
    exp: *const LtExperiment,
    variant: LtRegime,
    test_accuracy: *mut f64,
) -> LtStatus {
    guard(|| {
        let exp = nonnull(exp, "exp")?;
        let acc = nonnull_mut(test_accuracy, "test_accuracy")?;
        *acc = runner::cmd_train(&exp.config, variant.into())?.test_accuracy;
        Ok(())
    })
}

/// Opens the trace written for `variant` under the experiment's output directory.
///
/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_experiment_open_trace(
    exp: *const LtExperiment,
    variant: LtRegime,
    out: *mut *mut LtTrace,
) -> LtStatus {
    guard(|| {
        let exp = nonnull(exp, "exp")?;
        let out = nonnull_mut(out, "out")?;
        *out = ptr::null_mut();
        let path = runner::Layout::new(&exp.config.output_dir).trace(variant.into());
        let trace = runner::read_trace_file(&path)?;
        *out = Box::into_raw(Box::new(LtTrace { trace }));
        Ok(())
    })
}

/// Reads a trace CSV.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_trace_open(path: *const c_char, out: *mut *mut LtTrace) -> LtStatus {
    guard(|| {
        let out = nonnull_mut(out, "out")?;
        *out = ptr::null_mut();
        let trace = runner::read_trace_file(Path::new(c_str(path, "path")?))?;
        *out = Box::into_raw(Box::new(LtTrace { trace }));
        Ok(())
    })
}

/// Releases a trace. NULL is ignored.
///
/// # Safety
/// `trace` must come from `lt_trace_open` or `lt_experiment_open_trace`.
#[no_mangle]
pub unsafe extern "C" fn lt_trace_free(trace: *mut LtTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of recorded epochs and of examples per epoch.
///
/// # Safety
/// `trace` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_trace_dims(trace: *const LtTrace, epochs: *mut usize, examples: *mut usize) -> LtStatus {
    guard(|| {
        let t = &nonnull(trace, "trace")?.trace;
        *nonnull_mut(epochs, "epochs")? = t.msp.len();
        *nonnull_mut(examples, "examples")? = t.tags.len();
        Ok(())
    })
}

fn row_index(t: &TraceFile, row: usize) -> Result<(), Failure> {
    if row >= t.msp.len() {
        return Err(Error::Index {
            what: "trace rows",
            index: row,
            len: t.msp.len(),
        }
        .into());
    }
    Ok(())
}

/// The 1-based epoch number stored in row `row`.
///
/// # Safety
/// `trace` must be a live handle; `epoch` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_trace_epoch(trace: *const LtTrace, row: usize, epoch: *mut usize) -> LtStatus {
    guard(|| {
        let t = &nonnull(trace, "trace")?.trace;
        row_index(t, row)?;
        *nonnull_mut(epoch, "epoch")? = t.msp[row].epoch;
        Ok(())
    })
}

/// MSP of every example in row `row`, indexed by example id.
///
/// # Safety
/// `trace` must be a live handle; `out` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn lt_trace_msp_row(trace: *const LtTrace, row: usize, out: *mut f64, cap: usize) -> LtStatus {
    guard(|| {
        let t = &nonnull(trace, "trace")?.trace;
        row_index(t, row)?;
        let src = &t.msp[row].msp;
        output_slice(out, cap, src.len(), "out")?.copy_from_slice(src);
        Ok(())
    })
}

/// Rank of every example in row `row` (0 = lowest MSP).
///
/// # Safety
/// `trace` must be a live handle; `out` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn lt_trace_rank_row(trace: *const LtTrace, row: usize, out: *mut usize, cap: usize) -> LtStatus {
    guard(|| {
        let t = &nonnull(trace, "trace")?.trace;
        row_index(t, row)?;
        let src = &t.ranks.ranks[row];
        output_slice(out, cap, src.len(), "out")?.copy_from_slice(src);
        Ok(())
    })
}

/// `LT_TAG_*` code of every example.
///
/// # Safety
/// `trace` must be a live handle; `out` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn lt_trace_tags(trace: *const LtTrace, out: *mut u8, cap: usize) -> LtStatus {
    guard(|| {
        let t = &nonnull(trace, "trace")?.trace;
        let out = output_slice(out, cap, t.tags.len(), "out")?;
        for (slot, &tag) in out.iter_mut().zip(&t.tags) {
            *slot = tag_code(tag);
        }
        Ok(())
    })
}

/// AUROC of atypical over noisy ranks in row `row`.
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_trace_auroc(trace: *const LtTrace, row: usize, out: *mut f64) -> LtStatus {
    guard(|| {
        let t = &nonnull(trace, "trace")?.trace;
        row_index(t, row)?;
        *nonnull_mut(out, "out")? = analysis::auroc(&t.ranks.ranks[row], &t.tags)?;
        Ok(())
    })
}
