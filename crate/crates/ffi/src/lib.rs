//! C ABI over the protogan library.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `pg_*_new`/`pg_*_load`/`pg_*_train` call and released with the matching
//! `pg_*_free`. Functions return a [`PgStatus`]; on failure the message is
//! available from [`pg_last_error`] on the same thread until the next call.
//! Panics are caught at the boundary and reported as `PG_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use protogan::classify::{Strategy, TaskMode};
use protogan::config::Config;
use protogan::cptn::train_cptn;
use protogan::data::{
    generate_benchmark, load_features, save_features, Dataset, FeatureFormat,
    SyntheticBenchmarkSpec,
};
use protogan::diffcore::MlpNet;
use protogan::evalharness::{run_protocol, run_seed_list, write_report_files, RunReport};
use protogan::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Shape = 6,
    Numerical = 7,
    Contract = 8,
    Panic = 9,
}

/// Loaded or generated feature set.
pub struct PgDataset(Dataset);

/// Pipeline configuration.
pub struct PgConfig(Config);

/// Reports of one evaluation, one per (protocol, strategy, shots).
pub struct PgReport(Vec<RunReport>);

/// A feed-forward network, e.g. a trained prototype network.
pub struct PgNet(MlpNet);

/// Summary of one report entry. Missing metrics (seen accuracy and the
/// harmonic mean under the few-shot protocol, synthesis quality for the
/// base strategy) are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgSummary {
    /// 0 = generalized few-shot, 1 = few-shot.
    pub mode: u32,
    /// 0 = base, 1 = heuristic, 2 = sample, 3 = learned.
    pub strategy: u32,
    pub shots: u32,
    pub runs: u32,
    pub seen_mean: f64,
    pub seen_std: f64,
    pub novel_mean: f64,
    pub novel_std: f64,
    pub harmonic_mean: f64,
    pub harmonic_std: f64,
    pub quality_mean: f64,
    pub quality_std: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PgStatus {
    match e {
        Error::Shape(_) => PgStatus::Shape,
        Error::Contract(_) => PgStatus::Contract,
        Error::Config(_) => PgStatus::Config,
        Error::Ingestion { .. } | Error::Format { .. } => PgStatus::Format,
        Error::Numerical(_) => PgStatus::Numerical,
        Error::Io { .. } => PgStatus::Io,
        Error::Run { source, .. } => status_of(source),
    }
}

struct Fail(PgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PgStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PgStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PgStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            PgStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PgStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    text(p, "path").map(PathBuf::from)
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default configuration.
#[no_mangle]
pub unsafe extern "C" fn pg_config_new(out: *mut *mut PgConfig) -> PgStatus {
    guard(|| emit(out, PgConfig(Config::default())))
}

/// Configuration read from a `key = value` file.
#[no_mangle]
pub unsafe extern "C" fn pg_config_load(file: *const c_char, out: *mut *mut PgConfig) -> PgStatus {
    guard(|| {
        let cfg = Config::load(&path(file)?)?;
        emit(out, PgConfig(cfg))
    })
}

/// Sets one configuration key from its text form.
#[no_mangle]
pub unsafe extern "C" fn pg_config_set(
    cfg: *mut PgConfig,
    key: *const c_char,
    value: *const c_char,
) -> PgStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("config"))?;
        cfg.0.set(text(key, "key")?, text(value, "value")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pg_config_free(cfg: *mut PgConfig) {
    release(cfg)
}

/// Loads a feature file; `.csv` is read as CSV, anything else as binary.
#[no_mangle]
pub unsafe extern "C" fn pg_dataset_load(file: *const c_char, out: *mut *mut PgDataset) -> PgStatus {
    guard(|| {
        let p = path(file)?;
        let ds = load_features(&p, FeatureFormat::from_path(&p))?;
        emit(out, PgDataset(ds))
    })
}

/// Writes the dataset; the extension picks the format as in `pg_dataset_load`.
#[no_mangle]
pub unsafe extern "C" fn pg_dataset_save(ds: *const PgDataset, file: *const c_char) -> PgStatus {
    guard(|| {
        let ds = borrow(ds, "dataset")?;
        let p = path(file)?;
        save_features(&p, &ds.0, FeatureFormat::from_path(&p))?;
        Ok(())
    })
}

/// Gaussian-cluster benchmark with default shape parameters apart from the
/// given sizes and seed.
#[no_mangle]
pub unsafe extern "C" fn pg_dataset_generate(
    classes: u32,
    dim: u32,
    per_class: u32,
    seed: u64,
    out: *mut *mut PgDataset,
) -> PgStatus {
    guard(|| {
        let spec = SyntheticBenchmarkSpec {
            num_classes: classes as usize,
            dim: dim as usize,
            samples_per_class: per_class as usize,
            seed,
            ..SyntheticBenchmarkSpec::default()
        };
        emit(out, PgDataset(generate_benchmark(&spec)?))
    })
}

/// Number of records, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pg_dataset_len(ds: *const PgDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Feature dimension, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pg_dataset_dim(ds: *const PgDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.dim())
}

/// Number of distinct classes, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pg_dataset_num_classes(ds: *const PgDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.num_classes())
}

#[no_mangle]
pub unsafe extern "C" fn pg_dataset_free(ds: *mut PgDataset) {
    release(ds)
}

/// Runs the evaluation described by the configuration's `run.*` keys.
#[no_mangle]
pub unsafe extern "C" fn pg_run(
    ds: *const PgDataset,
    cfg: *const PgConfig,
    jobs: u32,
    out: *mut *mut PgReport,
) -> PgStatus {
    guard(|| {
        let ds = &borrow(ds, "dataset")?.0;
        let cfg = &borrow(cfg, "config")?.0;
        cfg.validate()?;
        let seeds = run_seed_list(cfg.run.seed, cfg.run.runs);
        let mut reports = Vec::new();
        for &k in &cfg.run.shots {
            reports.extend(run_protocol(
                ds,
                cfg,
                k,
                &cfg.run.modes,
                &cfg.run.strategies,
                &seeds,
                jobs.max(1) as usize,
            )?);
        }
        emit(out, PgReport(reports))
    })
}

/// Number of entries, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pg_report_len(report: *const PgReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.len())
}

fn pair(s: Option<protogan::evalharness::Stat>) -> (f64, f64) {
    s.map_or((f64::NAN, f64::NAN), |s| (s.mean, s.std))
}

/// Summary of entry `index`.
#[no_mangle]
pub unsafe extern "C" fn pg_report_get(
    report: *const PgReport,
    index: usize,
    out: *mut PgSummary,
) -> PgStatus {
    guard(|| {
        let report = borrow(report, "report")?;
        let out = out.as_mut().ok_or_else(|| null("output pointer"))?;
        let r = report.0.get(index).ok_or_else(|| {
            Fail(
                PgStatus::InvalidArgument,
                format!("index {index} out of range for {} entries", report.0.len()),
            )
        })?;
        let (seen_mean, seen_std) = pair(r.aggregate.seen);
        let (harmonic_mean, harmonic_std) = pair(r.aggregate.harmonic);
        let (quality_mean, quality_std) = pair(r.aggregate.synth_quality);
        *out = PgSummary {
            mode: match r.mode {
                TaskMode::Gfsl => 0,
                TaskMode::Fsl => 1,
            },
            strategy: match r.strategy {
                Strategy::Base => 0,
                Strategy::Heuristic => 1,
                Strategy::Sample => 2,
                Strategy::Learned => 3,
            },
            shots: r.k as u32,
            runs: r.runs.len() as u32,
            seen_mean,
            seen_std,
            novel_mean: r.aggregate.novel.mean,
            novel_std: r.aggregate.novel.std,
            harmonic_mean,
            harmonic_std,
            quality_mean,
            quality_std,
        };
        Ok(())
    })
}

/// Writes the table, CSV, JSONL and JSON report files under `dir`, one set
/// per protocol.
#[no_mangle]
pub unsafe extern "C" fn pg_report_write(report: *const PgReport, dir: *const c_char) -> PgStatus {
    guard(|| {
        let report = borrow(report, "report")?;
        let dir = path(dir)?;
        for mode in [TaskMode::Gfsl, TaskMode::Fsl] {
            let of_mode: Vec<RunReport> =
                report.0.iter().filter(|r| r.mode == mode).cloned().collect();
            if !of_mode.is_empty() {
                write_report_files(&dir, &mode.to_string(), &of_mode)?;
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pg_report_free(report: *mut PgReport) {
    release(report)
}

/// Trains a prototype network on every class of the dataset.
#[no_mangle]
pub unsafe extern "C" fn pg_net_train_cptn(
    ds: *const PgDataset,
    cfg: *const PgConfig,
    seed: u64,
    out: *mut *mut PgNet,
) -> PgStatus {
    guard(|| {
        let ds = &borrow(ds, "dataset")?.0;
        let cfg = &borrow(cfg, "config")?.0;
        let model = train_cptn(ds.records(), &cfg.aggregation, &cfg.cptn, seed)?;
        emit(out, PgNet(model.net))
    })
}

/// Reads a network file.
#[no_mangle]
pub unsafe extern "C" fn pg_net_load(file: *const c_char, out: *mut *mut PgNet) -> PgStatus {
    guard(|| {
        let p = path(file)?;
        let bytes = std::fs::read(&p).map_err(|e| Fail(PgStatus::Io, format!("{}: {e}", p.display())))?;
        emit(out, PgNet(MlpNet::read_from(&mut bytes.as_slice())?))
    })
}

/// Writes a network file.
#[no_mangle]
pub unsafe extern "C" fn pg_net_save(net: *const PgNet, file: *const c_char) -> PgStatus {
    guard(|| {
        let net = borrow(net, "network")?;
        let p = path(file)?;
        std::fs::write(&p, net.0.to_bytes())
            .map_err(|e| Fail(PgStatus::Io, format!("{}: {e}", p.display())))
    })
}

/// Input width, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pg_net_in_dim(net: *const PgNet) -> usize {
    net.as_ref().map_or(0, |n| n.0.in_dim())
}

/// Output width, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pg_net_out_dim(net: *const PgNet) -> usize {
    net.as_ref().map_or(0, |n| n.0.out_dim())
}

/// Evaluates the network on one row. `input_len` must equal the input width
/// and `output_len` the output width.
#[no_mangle]
pub unsafe extern "C" fn pg_net_forward(
    net: *const PgNet,
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_len: usize,
) -> PgStatus {
    guard(|| {
        let net = &borrow(net, "network")?.0;
        if input.is_null() || output.is_null() {
            return Err(null("buffer"));
        }
        if input_len != net.in_dim() || output_len != net.out_dim() {
            return Err(Fail(
                PgStatus::InvalidArgument,
                format!(
                    "buffers are {input_len} -> {output_len}, network is {} -> {}",
                    net.in_dim(),
                    net.out_dim()
                ),
            ));
        }
        let x = std::slice::from_raw_parts(input, input_len);
        let y = net.forward_row(x)?;
        ptr::copy_nonoverlapping(y.as_ptr(), output, output_len);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pg_net_free(net: *mut PgNet) {
    release(net)
}
