//! C ABI over the label taxonomy and the evaluation metrics.
//!
//! Every fallible call returns an [`SdohStatus`]; on failure the message is
//! kept per thread and read with [`sdoh_last_error_message`]. Strings handed
//! out by this library must be released with [`sdoh_string_free`], handles
//! with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sdoh_pipeline::metrics::{self, ConfusionMatrix, MetricsError};
use sdoh_pipeline::taxonomy::{self, SdohLabel, Taxonomy};

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdohStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Taxonomy = 4,
    Metrics = 5,
    OutOfRange = 6,
    Panic = 99,
}

/// Parsed label taxonomy.
pub struct SdohTaxonomy {
    inner: Taxonomy,
}

/// Confusion matrix over a fixed label set plus the out-of-set column.
pub struct SdohMatrix {
    inner: ConfusionMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SdohStatus, String);

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure(SdohStatus::Metrics, e.to_string())
    }
}

impl From<taxonomy::TaxonomyError> for Failure {
    fn from(e: taxonomy::TaxonomyError) -> Self {
        Failure(SdohStatus::Taxonomy, e.to_string())
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SdohStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            SdohStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SdohStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SdohStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SdohStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn owned(s: &str) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

unsafe fn matrix<'a>(m: *const SdohMatrix) -> Result<&'a ConfusionMatrix, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("matrix"))
}

/// Message for the last failed call on this thread, or null. Free with
/// `sdoh_string_free`.
#[no_mangle]
pub extern "C" fn sdoh_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sdoh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------- taxonomy

/// The built-in fourteen-label taxonomy. Never null.
#[no_mangle]
pub extern "C" fn sdoh_taxonomy_builtin() -> *mut SdohTaxonomy {
    Box::into_raw(Box::new(SdohTaxonomy {
        inner: Taxonomy::builtin(),
    }))
}

/// Parses a taxonomy from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_taxonomy_from_toml(toml: *const c_char, out: *mut *mut SdohTaxonomy) -> SdohStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Taxonomy::from_toml_str(text(toml, "toml")?)?;
        write_out(out, Box::into_raw(Box::new(SdohTaxonomy { inner })), "out")
    })
}

/// # Safety
/// `t` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sdoh_taxonomy_free(t: *mut SdohTaxonomy) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of label definitions.
///
/// # Safety
/// `t` must be a live taxonomy handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_taxonomy_len(t: *const SdohTaxonomy, out: *mut usize) -> SdohStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("taxonomy"))?;
        write_out(out, t.inner.definitions().count(), "out")
    })
}

/// Canonical name of the `index`-th definition, e.g. `t3_Eviction_pending`.
///
/// # Safety
/// `t` must be a live taxonomy handle; `out` must be writable. The returned
/// string is freed with `sdoh_string_free`.
#[no_mangle]
pub unsafe extern "C" fn sdoh_taxonomy_label_name(
    t: *const SdohTaxonomy,
    index: usize,
    out: *mut *mut c_char,
) -> SdohStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("taxonomy"))?;
        let def = t
            .inner
            .definitions()
            .nth(index)
            .ok_or_else(|| Failure(SdohStatus::OutOfRange, format!("no label at index {index}")))?;
        write_out(out, owned(def.label.canonical_name()), "out")
    })
}

/// Parses a label token (canonical or short name). Writes 1 to
/// `out_eviction` when the label belongs to the eviction family.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out_canonical` and
/// `out_eviction` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_label_parse(
    name: *const c_char,
    out_canonical: *mut *mut c_char,
    out_eviction: *mut i32,
) -> SdohStatus {
    guard(|| {
        let label: SdohLabel = taxonomy::parse_label(text(name, "name")?)?;
        write_out(out_eviction, i32::from(label.is_eviction_related()), "out_eviction")?;
        write_out(out_canonical, owned(label.canonical_name()), "out_canonical")
    })
}

// ---------------------------------------------------------------- metrics

/// Creates an empty matrix over `n_labels` distinct label strings.
///
/// # Safety
/// `labels` must point to `n_labels` NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_matrix_new(
    labels: *const *const c_char,
    n_labels: usize,
    out: *mut *mut SdohMatrix,
) -> SdohStatus {
    guard(|| {
        if labels.is_null() || out.is_null() {
            return Err(null(if labels.is_null() { "labels" } else { "out" }));
        }
        let names = std::slice::from_raw_parts(labels, n_labels)
            .iter()
            .map(|&p| text(p, "label"))
            .collect::<Result<Vec<_>, _>>()?;
        let inner = ConfusionMatrix::new(&names)?;
        write_out(out, Box::into_raw(Box::new(SdohMatrix { inner })), "out")
    })
}

/// # Safety
/// `m` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sdoh_matrix_free(m: *mut SdohMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Records one (gold, predicted) pair. A prediction outside the label set
/// lands in the reserved column; a gold outside it is an error.
///
/// # Safety
/// `m` must be a live matrix handle; `gold` and `pred` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sdoh_matrix_add(m: *mut SdohMatrix, gold: *const c_char, pred: *const c_char) -> SdohStatus {
    guard(|| {
        let m = m.as_mut().ok_or_else(|| null("matrix"))?;
        m.inner.add(text(gold, "gold")?, text(pred, "pred")?)?;
        Ok(())
    })
}

/// # Safety
/// `m` must be a live matrix handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_matrix_total(m: *const SdohMatrix, out: *mut u64) -> SdohStatus {
    guard(|| write_out(out, matrix(m)?.total(), "out"))
}

/// # Safety
/// `m` must be a live matrix handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_matrix_micro_f1(m: *const SdohMatrix, out: *mut f64) -> SdohStatus {
    guard(|| write_out(out, metrics::micro_f1(matrix(m)?)?, "out"))
}

/// # Safety
/// `m` must be a live matrix handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_matrix_macro_f1(m: *const SdohMatrix, out: *mut f64) -> SdohStatus {
    guard(|| write_out(out, metrics::macro_f1(matrix(m)?)?, "out"))
}

/// Multiclass Matthews correlation.
///
/// # Safety
/// `m` must be a live matrix handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_matrix_mcc(m: *const SdohMatrix, out: *mut f64) -> SdohStatus {
    guard(|| write_out(out, metrics::mcc_multiclass(matrix(m)?)?, "out"))
}

/// One-vs-rest F1 for a single label.
///
/// # Safety
/// `m` must be a live matrix handle; `label` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_matrix_f1_for(m: *const SdohMatrix, label: *const c_char, out: *mut f64) -> SdohStatus {
    guard(|| write_out(out, metrics::f1_for(matrix(m)?, text(label, "label")?)?, "out"))
}

/// 95% Student-t interval over per-run scores.
///
/// # Safety
/// `scores` must point to `n` doubles; the three outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_ci95(
    scores: *const f64,
    n: usize,
    out_mean: *mut f64,
    out_lower: *mut f64,
    out_upper: *mut f64,
) -> SdohStatus {
    guard(|| {
        if scores.is_null() {
            return Err(null("scores"));
        }
        let ci = metrics::ci95(std::slice::from_raw_parts(scores, n))?;
        write_out(out_mean, ci.mean, "out_mean")?;
        write_out(out_lower, ci.lower, "out_lower")?;
        write_out(out_upper, ci.upper, "out_upper")
    })
}
