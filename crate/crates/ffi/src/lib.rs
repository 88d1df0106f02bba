//! C ABI over the pieforge core.
//!
//! Every fallible call returns a [`PfStatus`]; on failure the message is
//! available from [`pf_last_error`] on the same thread until the next call.
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Array views returned by accessors
//! borrow from their handle and stay valid until it is freed or mutated.
//!
//! Layouts: points are `n x 4` `float` (x, y, z, intensity); boxes are
//! `n x 7` `double` (cx, cy, cz, l, w, h, yaw) in the LiDAR frame.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pieforge::augment::{build_bank, inject_from_semidb, FrameInput, SemiDb};
use pieforge::classes::Category;
use pieforge::ema::{cema_update, Checkpoint, Tensor};
use pieforge::fusion::{fuse_batch, PseudoLabel, TeacherOutput};
use pieforge::geometry::{Box3D, Detection, Point, PointCloud};
use pieforge::io::PipelineConfig;
use pieforge::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    InvalidArgument = 1,
    Shape = 2,
    Config = 3,
    Format = 4,
    Io = 5,
    NullPointer = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfCategory {
    Vehicle = 0,
    Pedestrian = 1,
    Cyclist = 2,
}

impl From<PfCategory> for Category {
    fn from(c: PfCategory) -> Self {
        match c {
            PfCategory::Vehicle => Category::Vehicle,
            PfCategory::Pedestrian => Category::Pedestrian,
            PfCategory::Cyclist => Category::Cyclist,
        }
    }
}

/// Per-frame compensation counters.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PfCompensationStats {
    pub pies: usize,
    pub pie_pairs: usize,
    pub compensated: usize,
    pub points_added: usize,
    pub skipped_empty_donors: usize,
    pub leftover_objects: usize,
}

/// Borrowed view of one frame's pseudo-labels. `teacher_ids` holds
/// `UINT32_MAX` where no teacher is recorded.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PfLabelView {
    pub boxes: *const f64,
    pub classes: *const u32,
    pub cls_scores: *const f64,
    pub iou_scores: *const f64,
    pub teacher_ids: *const u32,
    pub ambiguous: *const bool,
    pub len: usize,
}

/// Borrowed view of one checkpoint tensor.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PfTensorView {
    pub name: *const c_char,
    pub dims: *const u32,
    pub ndims: usize,
    pub data: *const f32,
    pub len: usize,
}

pub struct PfConfig(PipelineConfig);

pub struct PfSemiDb(SemiDb);

pub struct PfFrame {
    points: Vec<f32>,
    boxes: Vec<f64>,
    classes: Vec<u32>,
}

pub struct PfFuser {
    config: PipelineConfig,
    frames: Vec<Vec<TeacherOutput>>,
}

struct LabelColumns {
    boxes: Vec<f64>,
    classes: Vec<u32>,
    cls_scores: Vec<f64>,
    iou_scores: Vec<f64>,
    teacher_ids: Vec<u32>,
    ambiguous: Vec<bool>,
}

pub struct PfLabels(Vec<LabelColumns>);

pub struct PfCheckpoint {
    inner: Checkpoint,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn status_of(e: &Error) -> PfStatus {
    match e {
        Error::InvalidArgument(_) => PfStatus::InvalidArgument,
        Error::Shape { .. } => PfStatus::Shape,
        Error::Config(_) => PfStatus::Config,
        Error::Format { .. } => PfStatus::Format,
        Error::Io { .. } => PfStatus::Io,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> PfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PfStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            PfStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            PfStatus::Panic
        }
    }
}

unsafe fn href<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn hmut<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Failure::Null(what))
}

/// A slice from a pointer and element count; null is allowed when empty.
unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn string(p: *const c_char, what: &'static str) -> FfiResult<String> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Error::InvalidArgument(format!("{what} is not valid UTF-8")).into())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

unsafe fn points_from(points: *const f32, n_points: usize) -> FfiResult<Vec<Point>> {
    let len = n_points
        .checked_mul(4)
        .ok_or_else(|| Error::InvalidArgument(format!("{n_points} points overflow the buffer size")))?;
    let raw = slice(points, len, "points")?;
    Ok(raw.chunks_exact(4).map(|c| Point::new(c[0], c[1], c[2], c[3])).collect())
}

unsafe fn labels_from(
    boxes: *const f64,
    classes: *const u32,
    scores: *const f64,
    n: usize,
) -> FfiResult<Vec<Detection>> {
    let len = n
        .checked_mul(7)
        .ok_or_else(|| Error::InvalidArgument(format!("{n} boxes overflow the buffer size")))?;
    let raw = slice(boxes, len, "boxes")?;
    let classes = slice(classes, n, "classes")?;
    let scores = if scores.is_null() { None } else { Some(slice(scores, n, "scores")?) };
    raw.chunks_exact(7)
        .enumerate()
        .map(|(i, c)| {
            let bbox = Box3D::from_array(c.try_into().expect("chunks of 7"))
                .map_err(|e| Error::InvalidArgument(format!("box {i}: {e}")))?;
            let mut d = Detection::ground_truth(bbox, classes[i]);
            if let Some(s) = scores {
                d.cls_score = s[i];
                d.iou_score = s[i];
            }
            Ok(d)
        })
        .collect()
}

/// Message of the last failed call on this thread, or null.
#[no_mangle]
pub extern "C" fn pf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- config

#[no_mangle]
pub unsafe extern "C" fn pf_config_default(out: *mut *mut PfConfig) -> PfStatus {
    guard(|| put(out, PfConfig(PipelineConfig::default())))
}

#[no_mangle]
pub unsafe extern "C" fn pf_config_load(path: *const c_char, out: *mut *mut PfConfig) -> PfStatus {
    guard(|| {
        let path = string(path, "path")?;
        put(out, PfConfig(PipelineConfig::load(Path::new(&path))?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_config_from_toml(text: *const c_char, out: *mut *mut PfConfig) -> PfStatus {
    guard(|| {
        let text = string(text, "text")?;
        put(out, PfConfig(PipelineConfig::from_toml_str(&text, Path::new("<ffi>"))?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_config_set_seed(config: *mut PfConfig, seed: u64) -> PfStatus {
    guard(|| {
        hmut(config, "config")?.0.seed = seed;
        Ok(())
    })
}

/// Sets the sector width; rejected unless it divides 360.
#[no_mangle]
pub unsafe extern "C" fn pf_config_set_deg(config: *mut PfConfig, deg: f64) -> PfStatus {
    guard(|| {
        let c = hmut(config, "config")?;
        let mut next = c.0.clone();
        next.deg = deg;
        next.validate()?;
        c.0 = next;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_config_free(config: *mut PfConfig) {
    free(config)
}

// ---------------------------------------------------------------- semi-DB

#[no_mangle]
pub unsafe extern "C" fn pf_semidb_new(out: *mut *mut PfSemiDb) -> PfStatus {
    guard(|| put(out, PfSemiDb(SemiDb::new())))
}

#[no_mangle]
pub unsafe extern "C" fn pf_semidb_load(path: *const c_char, out: *mut *mut PfSemiDb) -> PfStatus {
    guard(|| {
        let path = string(path, "path")?;
        put(out, PfSemiDb(SemiDb::read(Path::new(&path))?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_semidb_save(db: *const PfSemiDb, path: *const c_char) -> PfStatus {
    guard(|| {
        let db = href(db, "semidb")?;
        let path = string(path, "path")?;
        Ok(db.0.write(Path::new(&path))?)
    })
}

/// Partitions one labeled frame into sectors, compensates it, and appends
/// the resulting objects to `db`. `scores` may be null (all 1). `stats` may
/// be null.
#[no_mangle]
pub unsafe extern "C" fn pf_semidb_add_frame(
    db: *mut PfSemiDb,
    frame_id: *const c_char,
    points: *const f32,
    n_points: usize,
    boxes: *const f64,
    classes: *const u32,
    scores: *const f64,
    n_boxes: usize,
    deg: f64,
    stats: *mut PfCompensationStats,
) -> PfStatus {
    guard(|| {
        let db = hmut(db, "semidb")?;
        let frame_id = string(frame_id, "frame_id")?;
        let cloud = PointCloud::new(frame_id, points_from(points, n_points)?);
        let labels = labels_from(boxes, classes, scores, n_boxes)?;
        let (part, s) = build_bank(&[FrameInput { cloud, labels, labeled: true }], deg)?;
        db.0.extend(part);
        if let Some(out) = stats.as_mut() {
            let s = &s[0];
            *out = PfCompensationStats {
                pies: s.pies,
                pie_pairs: s.pie_pairs,
                compensated: s.compensated,
                points_added: s.points_added,
                skipped_empty_donors: s.skipped_empty_donors,
                leftover_objects: s.leftover_objects,
            };
        }
        Ok(())
    })
}

/// Number of entries; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pf_semidb_len(db: *const PfSemiDb) -> usize {
    db.as_ref().map_or(0, |d| d.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn pf_semidb_free(db: *mut PfSemiDb) {
    free(db)
}

// ---------------------------------------------------------------- injection

/// Pastes semi-DB samples into a frame. `quota_classes[i]` receives up to
/// `quotas[i]` samples.
#[no_mangle]
pub unsafe extern "C" fn pf_inject(
    db: *const PfSemiDb,
    points: *const f32,
    n_points: usize,
    boxes: *const f64,
    classes: *const u32,
    scores: *const f64,
    n_boxes: usize,
    quota_classes: *const u32,
    quotas: *const usize,
    n_quotas: usize,
    seed: u64,
    out: *mut *mut PfFrame,
) -> PfStatus {
    guard(|| {
        let db = href(db, "semidb")?;
        let cloud = PointCloud::new("ffi", points_from(points, n_points)?);
        let labels = labels_from(boxes, classes, scores, n_boxes)?;
        let ids = slice(quota_classes, n_quotas, "quota_classes")?;
        let qs = slice(quotas, n_quotas, "quotas")?;
        let mut quota_map = BTreeMap::new();
        for (&c, &q) in ids.iter().zip(qs) {
            if quota_map.insert(c, q).is_some() {
                return Err(Error::InvalidArgument(format!("class {c} has two quotas")).into());
            }
        }
        let inj = inject_from_semidb(&cloud, &labels, &db.0, &quota_map, seed);
        put(
            out,
            PfFrame {
                points: inj.cloud.points.iter().flat_map(|p| [p.x, p.y, p.z, p.intensity]).collect(),
                boxes: inj.labels.iter().flat_map(|d| d.bbox.to_array()).collect(),
                classes: inj.labels.iter().map(|d| d.class_id).collect(),
            },
        )
    })
}

/// `n x 4` points of an injected frame.
#[no_mangle]
pub unsafe extern "C" fn pf_frame_points(frame: *const PfFrame, points: *mut *const f32, n_points: *mut usize) -> PfStatus {
    guard(|| {
        let f = href(frame, "frame")?;
        *hmut(points, "points")? = f.points.as_ptr();
        *hmut(n_points, "n_points")? = f.points.len() / 4;
        Ok(())
    })
}

/// `n x 7` boxes and `n` class ids of an injected frame.
#[no_mangle]
pub unsafe extern "C" fn pf_frame_boxes(
    frame: *const PfFrame,
    boxes: *mut *const f64,
    classes: *mut *const u32,
    n_boxes: *mut usize,
) -> PfStatus {
    guard(|| {
        let f = href(frame, "frame")?;
        *hmut(boxes, "boxes")? = f.boxes.as_ptr();
        *hmut(classes, "classes")? = f.classes.as_ptr();
        *hmut(n_boxes, "n_boxes")? = f.classes.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_frame_free(frame: *mut PfFrame) {
    free(frame)
}

// ---------------------------------------------------------------- fusion

/// A fuser using the config's classes, NMS and threshold settings.
#[no_mangle]
pub unsafe extern "C" fn pf_fuser_new(config: *const PfConfig, out: *mut *mut PfFuser) -> PfStatus {
    guard(|| {
        let config = href(config, "config")?.0.clone();
        put(out, PfFuser { config, frames: Vec::new() })
    })
}

/// Starts a new frame; later teacher outputs go to it.
#[no_mangle]
pub unsafe extern "C" fn pf_fuser_begin_frame(fuser: *mut PfFuser) -> PfStatus {
    guard(|| {
        hmut(fuser, "fuser")?.frames.push(Vec::new());
        Ok(())
    })
}

/// Adds one teacher's detections to the current frame.
#[no_mangle]
pub unsafe extern "C" fn pf_fuser_add_teacher(
    fuser: *mut PfFuser,
    teacher_id: u32,
    category: PfCategory,
    boxes: *const f64,
    classes: *const u32,
    cls_scores: *const f64,
    iou_scores: *const f64,
    n: usize,
) -> PfStatus {
    guard(|| {
        let f = hmut(fuser, "fuser")?;
        let mut detections = labels_from(boxes, classes, ptr::null(), n)?;
        let cls = slice(cls_scores, n, "cls_scores")?;
        let iou = slice(iou_scores, n, "iou_scores")?;
        for (i, d) in detections.iter_mut().enumerate() {
            d.cls_score = cls[i];
            d.iou_score = iou[i];
        }
        let frame = f
            .frames
            .last_mut()
            .ok_or_else(|| Error::InvalidArgument("pf_fuser_begin_frame was never called".into()))?;
        frame.push(TeacherOutput { teacher_id, category: category.into(), detections });
        Ok(())
    })
}

fn columns(labels: &[PseudoLabel]) -> LabelColumns {
    LabelColumns {
        boxes: labels.iter().flat_map(|l| l.detection.bbox.to_array()).collect(),
        classes: labels.iter().map(|l| l.detection.class_id).collect(),
        cls_scores: labels.iter().map(|l| l.detection.cls_score).collect(),
        iou_scores: labels.iter().map(|l| l.detection.iou_score).collect(),
        teacher_ids: labels.iter().map(|l| l.detection.teacher_id.unwrap_or(u32::MAX)).collect(),
        ambiguous: labels.iter().map(|l| l.ambiguous).collect(),
    }
}

/// Fuses every frame added so far. Dynamic thresholds are calibrated over
/// the whole batch.
#[no_mangle]
pub unsafe extern "C" fn pf_fuser_run(fuser: *const PfFuser, out: *mut *mut PfLabels) -> PfStatus {
    guard(|| {
        let f = href(fuser, "fuser")?;
        let c = &f.config;
        let (labels, _) = fuse_batch(&f.frames, &c.threshold_policy()?, c.thresholds.min_samples, &c.nms, &c.classes)?;
        put(out, PfLabels(labels.iter().map(|l| columns(l)).collect()))
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_fuser_free(fuser: *mut PfFuser) {
    free(fuser)
}

/// Number of frames; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pf_labels_frame_count(labels: *const PfLabels) -> usize {
    labels.as_ref().map_or(0, |l| l.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn pf_labels_frame(labels: *const PfLabels, frame: usize, out: *mut PfLabelView) -> PfStatus {
    guard(|| {
        let l = href(labels, "labels")?;
        let c = l
            .0
            .get(frame)
            .ok_or_else(|| Error::InvalidArgument(format!("frame {frame} out of range ({} frames)", l.0.len())))?;
        *hmut(out, "out")? = PfLabelView {
            boxes: c.boxes.as_ptr(),
            classes: c.classes.as_ptr(),
            cls_scores: c.cls_scores.as_ptr(),
            iou_scores: c.iou_scores.as_ptr(),
            teacher_ids: c.teacher_ids.as_ptr(),
            ambiguous: c.ambiguous.as_ptr(),
            len: c.classes.len(),
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_labels_free(labels: *mut PfLabels) {
    free(labels)
}

// ---------------------------------------------------------------- checkpoints

fn wrap(inner: Checkpoint) -> PfCheckpoint {
    let names = inner
        .iter()
        .map(|(n, _)| CString::new(n.as_str()).unwrap_or_else(|_| CString::new(n.replace('\0', " ")).expect("no NULs")))
        .collect();
    PfCheckpoint { inner, names }
}

#[no_mangle]
pub unsafe extern "C" fn pf_checkpoint_new(out: *mut *mut PfCheckpoint) -> PfStatus {
    guard(|| put(out, wrap(Checkpoint::new())))
}

#[no_mangle]
pub unsafe extern "C" fn pf_checkpoint_load(path: *const c_char, out: *mut *mut PfCheckpoint) -> PfStatus {
    guard(|| {
        let path = string(path, "path")?;
        put(out, wrap(Checkpoint::read(Path::new(&path))?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_checkpoint_save(ckpt: *const PfCheckpoint, path: *const c_char) -> PfStatus {
    guard(|| {
        let c = href(ckpt, "checkpoint")?;
        let path = string(path, "path")?;
        Ok(c.inner.write(Path::new(&path))?)
    })
}

/// Appends a tensor; names must be unique and `len` must equal the product
/// of `dims`.
#[no_mangle]
pub unsafe extern "C" fn pf_checkpoint_insert(
    ckpt: *mut PfCheckpoint,
    name: *const c_char,
    dims: *const u32,
    ndims: usize,
    data: *const f32,
    len: usize,
) -> PfStatus {
    guard(|| {
        let c = hmut(ckpt, "checkpoint")?;
        let name = string(name, "name")?;
        let tensor = Tensor::new(slice(dims, ndims, "dims")?.to_vec(), slice(data, len, "data")?.to_vec())?;
        c.inner.insert(name.clone(), tensor)?;
        c.names.push(CString::new(name).expect("came from a C string"));
        Ok(())
    })
}

/// Number of tensors; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pf_checkpoint_len(ckpt: *const PfCheckpoint) -> usize {
    ckpt.as_ref().map_or(0, |c| c.inner.len())
}

/// The `index`-th tensor in file order.
#[no_mangle]
pub unsafe extern "C" fn pf_checkpoint_entry(ckpt: *const PfCheckpoint, index: usize, out: *mut PfTensorView) -> PfStatus {
    guard(|| {
        let c = href(ckpt, "checkpoint")?;
        let (_, t) = c
            .inner
            .iter()
            .nth(index)
            .ok_or_else(|| Error::InvalidArgument(format!("tensor {index} out of range ({} tensors)", c.inner.len())))?;
        *hmut(out, "out")? = PfTensorView {
            name: c.names[index].as_ptr(),
            dims: t.dims.as_ptr(),
            ndims: t.dims.len(),
            data: t.data.as_ptr(),
            len: t.data.len(),
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_checkpoint_free(ckpt: *mut PfCheckpoint) {
    free(ckpt)
}

/// Category-wise EMA step: blends `student` into `teacher` for `category`
/// with momentum `alpha`, using the config's class layout and anchor
/// patterns. A negative `alpha` uses the configured momentum.
#[no_mangle]
pub unsafe extern "C" fn pf_cema_blend(
    config: *const PfConfig,
    teacher: *const PfCheckpoint,
    student: *const PfCheckpoint,
    category: PfCategory,
    alpha: f64,
    out: *mut *mut PfCheckpoint,
) -> PfStatus {
    guard(|| {
        let cfg = &href(config, "config")?.0;
        let t = &href(teacher, "teacher")?.inner;
        let s = &href(student, "student")?.inner;
        let alpha = if alpha < 0.0 { cfg.ema.alpha } else { alpha };
        let blended = cema_update(t, s, alpha, &cfg.layout()?, category.into(), &cfg.ema.anchor_patterns)?;
        put(out, wrap(blended))
    })
}

/// File-to-file form of [`pf_cema_blend`].
#[no_mangle]
pub unsafe extern "C" fn pf_cema_blend_files(
    config: *const PfConfig,
    teacher_path: *const c_char,
    student_path: *const c_char,
    category: PfCategory,
    alpha: f64,
    out_path: *const c_char,
) -> PfStatus {
    guard(|| {
        let cfg = &href(config, "config")?.0;
        let t = Checkpoint::read(Path::new(&string(teacher_path, "teacher_path")?))?;
        let s = Checkpoint::read(Path::new(&string(student_path, "student_path")?))?;
        let out = string(out_path, "out_path")?;
        let alpha = if alpha < 0.0 { cfg.ema.alpha } else { alpha };
        let blended = cema_update(&t, &s, alpha, &cfg.layout()?, category.into(), &cfg.ema.anchor_patterns)?;
        Ok(blended.write(Path::new(&out))?)
    })
}
