//! C ABI over the dynaprune engine.
//!
//! Every fallible function returns a [`DpStatus`]. On failure a message is
//! available from [`dp_last_error_message`] on the same thread until the next
//! call into this library. Objects cross the boundary as opaque handles that
//! the caller releases with the matching `*_free` function; results are
//! returned through out-pointers and copied into caller-owned buffers.
//!
//! Panics never unwind into C: they are caught and reported as
//! `DP_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dynaprune::baselines::{baseline_scores, BaselineParams};
use dynaprune::scoring::{ce_delta, kl_delta, select_top_m, tdds_scores, DeltaKind, TddsParams, DEFAULT_EPSILON};
use dynaprune::trajlog::{
    load_coreset, load_scores, save_coreset, save_scores, Coreset, FileFormat, Method, PayloadKind, ProbMatrix,
    RecordingMode, ScoreParams, ScoreTable, TrajectoryHeader, TrajectoryReader, TrajectoryWriter,
};
use dynaprune::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A path was not valid UTF-8.
    InvalidUtf8 = 2,
    Io = 3,
    /// Malformed file: bad magic, checksum, truncation, or header.
    Format = 4,
    /// Well-formed input with invalid values (row sums, non-finite numbers).
    Data = 5,
    Param = 6,
    Range = 7,
    Shape = 8,
    /// A caller buffer is too small, or an engine size limit was exceeded.
    Capacity = 9,
    Training = 10,
    Panic = 11,
}

pub const DP_DELTA_KL: u32 = 0;
pub const DP_DELTA_CE: u32 = 1;

pub const DP_PAYLOAD_FULL_PROBS: u32 = 0;
pub const DP_PAYLOAD_DELTA_MAGNITUDES: u32 = 1;

pub const DP_RECORDING_TRAIN_TIME: u32 = 0;
pub const DP_RECORDING_EVAL_TIME: u32 = 1;

pub const DP_FORMAT_BINARY: u32 = 0;
pub const DP_FORMAT_CSV: u32 = 1;

pub const DP_METHOD_TDDS: u32 = 0;
pub const DP_METHOD_RANDOM: u32 = 1;
pub const DP_METHOD_ENTROPY: u32 = 2;
pub const DP_METHOD_FORGETTING: u32 = 3;
pub const DP_METHOD_EL2N: u32 = 4;
pub const DP_METHOD_AUM: u32 = 5;
pub const DP_METHOD_DYNUNC: u32 = 6;

/// Header fields of an open trajectory log.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DpTrajectoryInfo {
    pub n_samples: u64,
    pub n_classes: u32,
    pub n_epochs: u32,
    /// Values per block returned by `dp_trajectory_read_epoch`.
    pub block_len: u64,
    /// Blocks stored: `n_epochs` for full probabilities, `n_epochs - 1` for deltas.
    pub block_count: u32,
    pub payload_kind: u32,
    pub recording_mode: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DpTddsParams {
    /// Leading epochs to score; 0 means the whole log.
    pub epochs: u32,
    pub window: u32,
    pub beta: f64,
    pub delta_kind: u32,
    pub signed_deltas: bool,
    /// Probability floor before logarithms; 0 selects the default.
    pub epsilon: f64,
}

/// An open, checksum-verified trajectory log.
pub struct DpTrajectory {
    reader: TrajectoryReader<BufReader<File>>,
}

/// A trajectory log being written one epoch at a time.
pub struct DpTrajectoryWriter {
    writer: TrajectoryWriter<BufWriter<File>>,
    epoch: usize,
}

pub struct DpScoreTable {
    table: ScoreTable,
}

pub struct DpCoreset {
    coreset: Coreset,
}

enum Failure {
    Null(&'static str),
    Utf8,
    Capacity {
        what: &'static str,
        needed: usize,
        given: usize,
    },
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn status(&self) -> DpStatus {
        match self {
            Failure::Null(_) => DpStatus::NullPointer,
            Failure::Utf8 => DpStatus::InvalidUtf8,
            Failure::Capacity { .. } => DpStatus::Capacity,
            Failure::Core(e) => match e {
                Error::Io(_) => DpStatus::Io,
                Error::Format(_) => DpStatus::Format,
                Error::Data(_) => DpStatus::Data,
                Error::Range { .. } => DpStatus::Range,
                Error::Shape(_) => DpStatus::Shape,
                Error::Param(_) => DpStatus::Param,
                Error::Capacity(_) => DpStatus::Capacity,
                Error::Training { .. } => DpStatus::Training,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Null(what) => format!("{what} is NULL"),
            Failure::Utf8 => "path is not valid UTF-8".into(),
            Failure::Capacity { what, needed, given } => {
                format!("{what} holds {given} values, {needed} needed")
            }
            Failure::Core(e) => e.to_string(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard<F>(f: F) -> DpStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(failure.message());
            failure.status()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            DpStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, capacity: usize, needed: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if needed == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    if capacity < needed {
        return Err(Failure::Capacity {
            what,
            needed,
            given: capacity,
        });
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| Failure::Utf8)
}

unsafe fn emit<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn format_code(code: u32) -> Result<FileFormat, Failure> {
    match code {
        DP_FORMAT_BINARY => Ok(FileFormat::Binary),
        DP_FORMAT_CSV => Ok(FileFormat::Csv),
        other => Err(Error::Param(format!("unknown format code {other}")).into()),
    }
}

fn method_code(code: u32) -> Result<Method, Failure> {
    let code = u16::try_from(code).map_err(|_| Error::Param(format!("unknown method code {code}")))?;
    Method::from_code(code).map_err(|_| Error::Param(format!("unknown method code {code}")).into())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the last failed call on this thread, or NULL if the last
/// call succeeded. Valid until the next call into this library.
#[no_mangle]
pub extern "C" fn dp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Opens a trajectory log and verifies its checksum.
#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_open(path: *const c_char, out: *mut *mut DpTrajectory) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let reader = TrajectoryReader::open(path_arg(path)?)?;
        emit(out, DpTrajectory { reader });
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_info(traj: *const DpTrajectory, out: *mut DpTrajectoryInfo) -> DpStatus {
    guard(|| {
        let h = handle(traj, "trajectory")?.reader.header();
        let out = handle_mut(out, "out")?;
        *out = DpTrajectoryInfo {
            n_samples: h.n_samples as u64,
            n_classes: h.n_classes as u32,
            n_epochs: h.n_epochs as u32,
            block_len: h.block_len() as u64,
            block_count: h.block_count() as u32,
            payload_kind: match h.payload_kind {
                PayloadKind::FullProbs => DP_PAYLOAD_FULL_PROBS,
                PayloadKind::DeltaMagnitudes => DP_PAYLOAD_DELTA_MAGNITUDES,
            },
            recording_mode: match h.recording_mode {
                RecordingMode::TrainTime => DP_RECORDING_TRAIN_TIME,
                RecordingMode::EvalTime => DP_RECORDING_EVAL_TIME,
            },
        };
        Ok(())
    })
}

/// Copies the `n_samples` labels into `out`.
#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_labels(traj: *const DpTrajectory, out: *mut u32, capacity: usize) -> DpStatus {
    guard(|| {
        let labels = &handle(traj, "trajectory")?.reader.header().labels;
        output(out, capacity, labels.len(), "label buffer")?.copy_from_slice(labels);
        Ok(())
    })
}

/// Copies block `epoch` (row-major `n_samples × n_classes` probabilities, or
/// `n_samples` delta magnitudes) into `out`.
#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_read_epoch(
    traj: *mut DpTrajectory,
    epoch: u32,
    out: *mut f32,
    capacity: usize,
) -> DpStatus {
    guard(|| {
        let reader = &mut handle_mut(traj, "trajectory")?.reader;
        let block = match reader.header().payload_kind {
            PayloadKind::FullProbs => reader.read_epoch(epoch as usize)?.data,
            PayloadKind::DeltaMagnitudes => reader.read_deltas(epoch as usize)?,
        };
        output(out, capacity, block.len(), "epoch buffer")?.copy_from_slice(&block);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_free(traj: *mut DpTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Creates a full-probability trajectory log at `path` expecting exactly
/// `n_epochs` epochs. `labels` holds `n_samples` class indices.
#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_writer_create(
    path: *const c_char,
    n_samples: u64,
    n_classes: u32,
    n_epochs: u32,
    recording_mode: u32,
    labels: *const u32,
    out: *mut *mut DpTrajectoryWriter,
) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = path_arg(path)?;
        let n = usize::try_from(n_samples).map_err(|_| Error::Param("sample count exceeds address space".into()))?;
        let recording_mode = match recording_mode {
            DP_RECORDING_TRAIN_TIME => RecordingMode::TrainTime,
            DP_RECORDING_EVAL_TIME => RecordingMode::EvalTime,
            other => return Err(Error::Param(format!("unknown recording mode {other}")).into()),
        };
        let header = TrajectoryHeader {
            n_samples: n,
            n_classes: n_classes as usize,
            n_epochs: n_epochs as usize,
            payload_kind: PayloadKind::FullProbs,
            recording_mode,
            labels: input(labels, n, "labels")?.to_vec(),
        };
        header.validate()?;
        let file = File::create(path).map_err(Error::from)?;
        let writer = TrajectoryWriter::new(header, BufWriter::new(file))?;
        emit(out, DpTrajectoryWriter { writer, epoch: 0 });
        Ok(())
    })
}

unsafe fn push_epoch(writer: *mut DpTrajectoryWriter, block: Vec<f32>) -> Result<(), Failure> {
    let w = handle_mut(writer, "writer")?;
    let c = w.writer.header().n_classes;
    let matrix = ProbMatrix::new(w.epoch, c, block)?;
    w.writer.push_probs(&matrix)?;
    w.epoch += 1;
    Ok(())
}

/// Appends one epoch of `n_samples × n_classes` row-major probabilities.
#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_writer_push_epoch(
    writer: *mut DpTrajectoryWriter,
    probs: *const f32,
    len: usize,
) -> DpStatus {
    guard(|| push_epoch(writer, input(probs, len, "probs")?.to_vec()))
}

/// Like `dp_trajectory_writer_push_epoch`, narrowing each value to the
/// nearest `float`.
#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_writer_push_epoch_f64(
    writer: *mut DpTrajectoryWriter,
    probs: *const f64,
    len: usize,
) -> DpStatus {
    guard(|| push_epoch(writer, input(probs, len, "probs")?.iter().map(|&p| p as f32).collect()))
}

/// Writes the checksum and closes the file. Always releases the handle.
#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_writer_finish(writer: *mut DpTrajectoryWriter) -> DpStatus {
    guard(|| {
        if writer.is_null() {
            return Err(Failure::Null("writer"));
        }
        let w = Box::from_raw(writer);
        let (mut sink, _) = w.writer.finish()?;
        sink.flush().map_err(Error::from)?;
        Ok(())
    })
}

/// Releases a writer without finishing it; the partial file is left invalid.
#[no_mangle]
pub unsafe extern "C" fn dp_trajectory_writer_free(writer: *mut DpTrajectoryWriter) {
    if !writer.is_null() {
        drop(Box::from_raw(writer));
    }
}

fn epsilon_or_default(epsilon: f64) -> f64 {
    if epsilon == 0.0 {
        DEFAULT_EPSILON
    } else {
        epsilon
    }
}

/// KL divergence of `next` from `prev`, each of length `n_classes`.
#[no_mangle]
pub unsafe extern "C" fn dp_kl_delta(
    next: *const f64,
    prev: *const f64,
    n_classes: usize,
    epsilon: f64,
    out: *mut f64,
) -> DpStatus {
    guard(|| {
        let out = handle_mut(out, "out")?;
        *out = kl_delta(
            input(next, n_classes, "next")?,
            input(prev, n_classes, "prev")?,
            epsilon_or_default(epsilon),
        )?;
        Ok(())
    })
}

/// Log-ratio of the target-class probabilities, `ln next[target] - ln prev[target]`.
#[no_mangle]
pub unsafe extern "C" fn dp_ce_delta(
    next: *const f64,
    prev: *const f64,
    n_classes: usize,
    target: u32,
    epsilon: f64,
    out: *mut f64,
) -> DpStatus {
    guard(|| {
        let out = handle_mut(out, "out")?;
        *out = ce_delta(
            input(next, n_classes, "next")?,
            input(prev, n_classes, "prev")?,
            target as usize,
            epsilon_or_default(epsilon),
        )?;
        Ok(())
    })
}

/// Fills `out` with the default scoring parameters (whole log, window 10,
/// beta 0.9, KL deltas).
#[no_mangle]
pub unsafe extern "C" fn dp_tdds_params_default(out: *mut DpTddsParams) -> DpStatus {
    guard(|| {
        *handle_mut(out, "out")? = DpTddsParams {
            epochs: 0,
            window: 10,
            beta: 0.9,
            delta_kind: DP_DELTA_KL,
            signed_deltas: false,
            epsilon: DEFAULT_EPSILON,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dp_tdds_scores(
    traj: *mut DpTrajectory,
    params: *const DpTddsParams,
    out: *mut *mut DpScoreTable,
) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let reader = &mut handle_mut(traj, "trajectory")?.reader;
        let p = handle(params, "params")?;
        let delta_kind = match p.delta_kind {
            DP_DELTA_KL => DeltaKind::Kl,
            DP_DELTA_CE => DeltaKind::Ce,
            other => return Err(Error::Param(format!("unknown delta kind {other}")).into()),
        };
        let params = TddsParams {
            epochs: if p.epochs == 0 {
                reader.header().n_epochs
            } else {
                p.epochs as usize
            },
            window: p.window as usize,
            beta: p.beta,
            delta_kind,
            epsilon: epsilon_or_default(p.epsilon),
            signed: p.signed_deltas,
        };
        let table = tdds_scores(reader, &params)?;
        emit(out, DpScoreTable { table });
        Ok(())
    })
}

/// Scores a full-probability log with one of the baseline methods.
#[no_mangle]
pub unsafe extern "C" fn dp_baseline_scores(
    traj: *mut DpTrajectory,
    method: u32,
    el2n_epochs: u32,
    dynunc_window: u32,
    seed: u64,
    out: *mut *mut DpScoreTable,
) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let reader = &mut handle_mut(traj, "trajectory")?.reader;
        let params = BaselineParams {
            el2n_epochs: el2n_epochs as usize,
            dynunc_window: dynunc_window as usize,
            seed,
        };
        let table = baseline_scores(reader, method_code(method)?, &params)?;
        emit(out, DpScoreTable { table });
        Ok(())
    })
}

/// Wraps externally computed scores so they can be saved or selected from.
#[no_mangle]
pub unsafe extern "C" fn dp_score_table_from_values(
    method: u32,
    scores: *const f64,
    n: usize,
    out: *mut *mut DpScoreTable,
) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let table = ScoreTable {
            method: method_code(method)?,
            params: ScoreParams {
                epochs: 0,
                window: 0,
                beta: 0.0,
            },
            scores: input(scores, n, "scores")?.to_vec(),
        };
        table.validate()?;
        emit(out, DpScoreTable { table });
        Ok(())
    })
}

/// Loads a score table, binary or CSV.
#[no_mangle]
pub unsafe extern "C" fn dp_score_table_load(path: *const c_char, out: *mut *mut DpScoreTable) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let table = load_scores(path_arg(path)?)?;
        emit(out, DpScoreTable { table });
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dp_score_table_save(table: *const DpScoreTable, path: *const c_char, format: u32) -> DpStatus {
    guard(|| {
        let t = handle(table, "table")?;
        save_scores(&t.table, path_arg(path)?, format_code(format)?)?;
        Ok(())
    })
}

/// Number of scores, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn dp_score_table_len(table: *const DpScoreTable) -> usize {
    table.as_ref().map_or(0, |t| t.table.scores.len())
}

/// Method code of the table, or `UINT32_MAX` for NULL.
#[no_mangle]
pub unsafe extern "C" fn dp_score_table_method(table: *const DpScoreTable) -> u32 {
    table.as_ref().map_or(u32::MAX, |t| u32::from(t.table.method.code()))
}

#[no_mangle]
pub unsafe extern "C" fn dp_score_table_copy(table: *const DpScoreTable, out: *mut f64, capacity: usize) -> DpStatus {
    guard(|| {
        let scores = &handle(table, "table")?.table.scores;
        output(out, capacity, scores.len(), "score buffer")?.copy_from_slice(scores);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dp_score_table_free(table: *mut DpScoreTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Keeps the `max(1, round((1 - rate) * n))` highest scores; ties go to the
/// lower index.
#[no_mangle]
pub unsafe extern "C" fn dp_select_top_m(table: *const DpScoreTable, rate: f64, out: *mut *mut DpCoreset) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let coreset = select_top_m(&handle(table, "table")?.table, rate)?;
        emit(out, DpCoreset { coreset });
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dp_coreset_load(path: *const c_char, out: *mut *mut DpCoreset) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let coreset = load_coreset(path_arg(path)?)?;
        emit(out, DpCoreset { coreset });
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dp_coreset_save(coreset: *const DpCoreset, path: *const c_char, format: u32) -> DpStatus {
    guard(|| {
        let c = handle(coreset, "coreset")?;
        save_coreset(&c.coreset, path_arg(path)?, format_code(format)?)?;
        Ok(())
    })
}

/// Number of kept samples, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn dp_coreset_len(coreset: *const DpCoreset) -> usize {
    coreset.as_ref().map_or(0, |c| c.coreset.indices.len())
}

/// Size of the dataset the coreset was selected from, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn dp_coreset_total(coreset: *const DpCoreset) -> u64 {
    coreset.as_ref().map_or(0, |c| c.coreset.n_total)
}

/// Copies kept indices (ascending) and their weights. Either buffer may be
/// NULL to skip it.
#[no_mangle]
pub unsafe extern "C" fn dp_coreset_copy(
    coreset: *const DpCoreset,
    indices: *mut u64,
    weights: *mut f64,
    capacity: usize,
) -> DpStatus {
    guard(|| {
        let c = &handle(coreset, "coreset")?.coreset;
        if !indices.is_null() {
            output(indices, capacity, c.indices.len(), "index buffer")?.copy_from_slice(&c.indices);
        }
        if !weights.is_null() {
            output(weights, capacity, c.weights.len(), "weight buffer")?.copy_from_slice(&c.weights);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dp_coreset_free(coreset: *mut DpCoreset) {
    if !coreset.is_null() {
        drop(Box::from_raw(coreset));
    }
}
