//! C ABI over the curation library.
//!
//! Every fallible function returns a [`CqaStatus`]; on failure the message is
//! available from [`cqa_last_error`] on the same thread. Objects are opaque
//! handles released with their matching `*_free` function. Output pointers are
//! written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use changeqa::calibrate::{roc_sweep, Direction, Label, LabeledScore};
use changeqa::config::Config;
use changeqa::judge::{acceptance_probability, preference_distribution, PreferenceModel};
use changeqa::patch::{keep_unit_pixels, PatchDecision, PatchFilterConfig, RejectReason};
use changeqa::pipeline::{load_manifest, Pipeline};
use changeqa::raster::{diff_mask, BinaryMask, SemanticMask};
use changeqa::regions::{connected_components, extract_candidates, ChangeRegion, Connectivity, IouDirection, RegionThresholds};
use changeqa::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CqaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Schema = 4,
    Format = 5,
    Contract = 6,
    Config = 7,
    Io = 8,
    Backend = 9,
    DegenerateData = 10,
    Other = 11,
    Panic = 12,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> CqaStatus {
    match e {
        Error::Shape(_) => CqaStatus::Shape,
        Error::Schema(_) | Error::Json(_) => CqaStatus::Schema,
        Error::Format(_) => CqaStatus::Format,
        Error::Contract(_) | Error::EmptyRegion(_) | Error::UndefinedSimilarity(_) => CqaStatus::Contract,
        Error::Config(_) => CqaStatus::Config,
        Error::Io { .. } => CqaStatus::Io,
        Error::Backend(_) | Error::Protocol(_) | Error::Generation(_) => CqaStatus::Backend,
        Error::DegenerateData(_) => CqaStatus::DegenerateData,
        _ => CqaStatus::Other,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (CqaStatus, String)>) -> CqaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CqaStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CqaStatus::Panic
        }
    }
}

fn lib<T>(r: changeqa::Result<T>) -> Result<T, (CqaStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (CqaStatus, String) {
    (CqaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (CqaStatus, String) {
    (CqaStatus::InvalidArgument, msg.into())
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (CqaStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn str_in<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CqaStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn cqa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Semantic label raster.
pub struct CqaMask(SemanticMask);

/// Binary raster.
pub struct CqaBinaryMask(BinaryMask);

/// Extracted candidate regions.
pub struct CqaRegionList(Vec<ChangeRegion>);

/// Creates a mask from `width*height` row-major labels, each below `num_classes`.
///
/// # Safety
/// `labels` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cqa_mask_new(
    width: u32,
    height: u32,
    num_classes: u32,
    labels: *const u8,
    len: usize,
    out: *mut *mut CqaMask,
) -> CqaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let l = slice_in(labels, len, "labels")?;
        let m = lib(SemanticMask::new(width, height, num_classes as usize, l.to_vec()))?;
        *out = Box::into_raw(Box::new(CqaMask(m)));
        Ok(())
    })
}

/// # Safety
/// `mask` must come from [`cqa_mask_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cqa_mask_free(mask: *mut CqaMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Pixels whose labels differ between the two masks.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cqa_diff_mask(
    before: *const CqaMask,
    after: *const CqaMask,
    out: *mut *mut CqaBinaryMask,
) -> CqaStatus {
    guard(|| {
        let (b, a) = (before.as_ref().ok_or_else(|| null("before"))?, after.as_ref().ok_or_else(|| null("after"))?);
        if out.is_null() {
            return Err(null("out"));
        }
        let d = lib(diff_mask(&b.0, &a.0))?;
        *out = Box::into_raw(Box::new(CqaBinaryMask(d)));
        Ok(())
    })
}

/// Creates a binary mask from `width*height` bytes (nonzero = set).
///
/// # Safety
/// `bits` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cqa_binary_mask_new(
    width: u32,
    height: u32,
    bits: *const u8,
    len: usize,
    out: *mut *mut CqaBinaryMask,
) -> CqaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let b = slice_in(bits, len, "bits")?;
        let m = lib(BinaryMask::new(width, height, b.iter().map(|&v| v != 0).collect()))?;
        *out = Box::into_raw(Box::new(CqaBinaryMask(m)));
        Ok(())
    })
}

/// # Safety
/// `mask` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cqa_binary_mask_count(mask: *const CqaBinaryMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.count_ones())
}

/// # Safety
/// `mask` must not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cqa_binary_mask_free(mask: *mut CqaBinaryMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Labels connected components: `labels_out[y*width+x]` is 0 off the mask and
/// `1 + component index` on it, components ordered by first pixel in row-major
/// order. `connectivity` is 4 or 8.
///
/// # Safety
/// `labels_out` must hold `len >= width*height` writable values.
#[no_mangle]
pub unsafe extern "C" fn cqa_connected_components(
    mask: *const CqaBinaryMask,
    connectivity: u8,
    labels_out: *mut u32,
    len: usize,
    n_components: *mut usize,
) -> CqaStatus {
    guard(|| {
        let m = mask.as_ref().ok_or_else(|| null("mask"))?;
        let conn = Connectivity::try_from(connectivity).map_err(|e| invalid(e.to_string()))?;
        let w = m.0.width() as usize;
        let total = w * m.0.height() as usize;
        if len < total {
            return Err(invalid(format!("labels_out holds {len}, need {total}")));
        }
        if labels_out.is_null() && total > 0 {
            return Err(null("labels_out"));
        }
        let comps = connected_components(&m.0, conn);
        if total > 0 {
            let out = slice::from_raw_parts_mut(labels_out, total);
            out.fill(0);
            for (i, c) in comps.iter().enumerate() {
                for &(x, y) in c {
                    out[y as usize * w + x as usize] = i as u32 + 1;
                }
            }
        }
        if !n_components.is_null() {
            *n_components = comps.len();
        }
        Ok(())
    })
}

/// Uniform gate parameters for [`cqa_extract_candidates`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CqaThresholds {
    pub min_size: usize,
    pub changed_threshold: f64,
    pub iou_threshold: f64,
    /// 0 rejects IoU below the threshold, 1 rejects IoU above it.
    pub reject_above: u8,
    /// 4 or 8.
    pub connectivity: u8,
}

/// One candidate region.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct CqaRegion {
    pub class_id: u32,
    pub size: usize,
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
    pub iou: f64,
    pub changed_ratio: f64,
}

/// Runs region extraction with the same gates for every class.
///
/// # Safety
/// Handles and `th` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cqa_extract_candidates(
    before: *const CqaMask,
    after: *const CqaMask,
    th: *const CqaThresholds,
    out: *mut *mut CqaRegionList,
) -> CqaStatus {
    guard(|| {
        let b = before.as_ref().ok_or_else(|| null("before"))?;
        let a = after.as_ref().ok_or_else(|| null("after"))?;
        let t = th.as_ref().ok_or_else(|| null("th"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = if t.reject_above != 0 { IouDirection::RejectAbove } else { IouDirection::RejectBelow };
        let mut gates = RegionThresholds::uniform(
            b.0.num_classes(),
            t.min_size,
            t.changed_threshold,
            t.iou_threshold,
            dir,
        );
        gates.connectivity = Connectivity::try_from(t.connectivity).map_err(|e| invalid(e.to_string()))?;
        let d = lib(diff_mask(&b.0, &a.0))?;
        let regions = lib(extract_candidates(&b.0, &a.0, &d, &gates))?;
        *out = Box::into_raw(Box::new(CqaRegionList(regions)));
        Ok(())
    })
}

/// # Safety
/// `list` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cqa_region_list_len(list: *const CqaRegionList) -> usize {
    list.as_ref().map_or(0, |l| l.0.len())
}

/// # Safety
/// `list` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cqa_region_list_get(list: *const CqaRegionList, index: usize, out: *mut CqaRegion) -> CqaStatus {
    guard(|| {
        let l = list.as_ref().ok_or_else(|| null("list"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        let r = l.0.get(index).ok_or_else(|| invalid(format!("index {index} out of range")))?;
        *o = CqaRegion {
            class_id: r.class_id as u32,
            size: r.size,
            x0: r.bbox.x0,
            y0: r.bbox.y0,
            w: r.bbox.w,
            h: r.bbox.h,
            iou: r.iou,
            changed_ratio: r.changed_ratio,
        };
        Ok(())
    })
}

/// # Safety
/// `list` must not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cqa_region_list_free(list: *mut CqaRegionList) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

/// Patch filter outcome.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CqaPatchDecision {
    Keep = 0,
    RejectUniformity = 1,
    RejectSaturation = 2,
    RejectVegetation = 3,
}

/// Applies the appearance filters to `n_pixels` unit-scale RGB triples.
///
/// # Safety
/// `rgb` must hold `3*n_pixels` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cqa_keep_patch(
    rgb: *const f64,
    n_pixels: usize,
    tau_std: f64,
    tau_sat: f64,
    tau_exg: f64,
    out: *mut CqaPatchDecision,
) -> CqaStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        let v = slice_in(rgb, n_pixels * 3, "rgb")?;
        let px: Vec<[f64; 3]> = v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let cfg = PatchFilterConfig {
            enabled: true,
            tau_std,
            tau_sat,
            tau_exg,
            ..Default::default()
        };
        *o = match lib(keep_unit_pixels(&px, &cfg))? {
            PatchDecision::Keep => CqaPatchDecision::Keep,
            PatchDecision::Reject(RejectReason::Uniformity) => CqaPatchDecision::RejectUniformity,
            PatchDecision::Reject(RejectReason::Saturation) => CqaPatchDecision::RejectSaturation,
            PatchDecision::Reject(RejectReason::Vegetation) => CqaPatchDecision::RejectVegetation,
        };
        Ok(())
    })
}

/// `1 − (1 − p)^n`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cqa_acceptance_probability(p: f64, n: u32, out: *mut f64) -> CqaStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = lib(acceptance_probability(p, n))?;
        Ok(())
    })
}

/// Reward-tilted distribution `∝ reference · exp(reward / beta)` written to `out[0..n]`.
///
/// # Safety
/// All arrays must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn cqa_preference_distribution(
    reference: *const f64,
    reward: *const f64,
    n: usize,
    beta: f64,
    out: *mut f64,
) -> CqaStatus {
    guard(|| {
        let pm = PreferenceModel {
            reference: slice_in(reference, n, "reference")?.to_vec(),
            reward: slice_in(reward, n, "reward")?.to_vec(),
            beta,
        };
        let d = lib(preference_distribution(&pm))?;
        if out.is_null() {
            return Err(null("out"));
        }
        slice::from_raw_parts_mut(out, n).copy_from_slice(&d);
        Ok(())
    })
}

/// ROC summary of `n` scores with labels (nonzero = positive).
///
/// # Safety
/// Arrays must hold `n` values; outputs may be null when not wanted.
#[no_mangle]
pub unsafe extern "C" fn cqa_roc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    lower_is_positive: u8,
    auc: *mut f64,
    best_threshold: *mut f64,
    youden_j: *mut f64,
) -> CqaStatus {
    guard(|| {
        let s = slice_in(scores, n, "scores")?;
        let l = slice_in(labels, n, "labels")?;
        let data: Vec<LabeledScore> = s
            .iter()
            .zip(l)
            .enumerate()
            .map(|(i, (&v, &y))| LabeledScore::new(i.to_string(), v, if y != 0 { Label::Pos } else { Label::Neg }))
            .collect();
        let dir = if lower_is_positive != 0 { Direction::LowerIsPositive } else { Direction::HigherIsPositive };
        let r = lib(roc_sweep(&data, dir))?;
        for (p, v) in [(auc, r.auc), (best_threshold, r.best_threshold), (youden_j, r.youden_j)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Counters of a finished run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct CqaRunSummary {
    pub pairs_total: usize,
    pub pairs_failed: usize,
    pub total_candidates: usize,
    pub kept: usize,
    pub change_rows: usize,
    pub no_change_rows: usize,
}

/// Runs the pipeline described by a TOML config over a pairs manifest and
/// writes the dataset, candidate trails and stats into `out_dir`.
///
/// # Safety
/// Strings must be NUL-terminated UTF-8; `summary` may be null.
#[no_mangle]
pub unsafe extern "C" fn cqa_run_pipeline(
    config_path: *const c_char,
    manifest_path: *const c_char,
    out_dir: *const c_char,
    summary: *mut CqaRunSummary,
) -> CqaStatus {
    guard(|| {
        let cfg = lib(Config::load(str_in(config_path, "config_path")?))?;
        let pairs = lib(load_manifest(str_in(manifest_path, "manifest_path")?))?;
        let out = str_in(out_dir, "out_dir")?;
        let pipeline = lib(Pipeline::from_config(cfg))?;
        let run = pipeline.run(&pairs);
        lib(run.write(Path::new(out)))?;
        if let Some(s) = summary.as_mut() {
            *s = CqaRunSummary {
                pairs_total: run.stats.pairs_total,
                pairs_failed: run.stats.pairs_failed,
                total_candidates: run.stats.total_candidates,
                kept: run.stats.kept(),
                change_rows: run.stats.change_rows,
                no_change_rows: run.stats.no_change_rows,
            };
        }
        Ok(())
    })
}
