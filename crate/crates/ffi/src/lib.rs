//! C ABI over the mgfd core: opaque handles for datasets, teachers and
//! students, integer status codes, and a thread-local last-error message.
//!
//! Every function returns an `i32` status. Outputs are written through
//! caller-provided pointers and only on success. Handles created by
//! `*_load` / `*_generate` must be released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mgfd::checkpoint::Checkpoint;
use mgfd::distill::Student;
use mgfd::mgraph::{count_fetched_nodes, load_dataset, GeneratorSpec, MultiplexGraph};
use mgfd::numkit::Matrix;
use mgfd::teacher::{teacher_forward, TeacherModel};

pub const MGFD_OK: i32 = 0;
/// A required pointer argument was null.
pub const MGFD_ERR_NULL: i32 = 1;
/// Bad argument, shape mismatch, malformed file or configuration.
pub const MGFD_ERR_INVALID: i32 = 2;
/// Filesystem failure.
pub const MGFD_ERR_IO: i32 = 3;
/// Any other failure inside the library.
pub const MGFD_ERR_RUNTIME: i32 = 4;
/// A Rust panic was caught at the boundary.
pub const MGFD_ERR_PANIC: i32 = 5;

/// A loaded multiplex graph with features and labels.
pub struct MgfdGraph {
    graph: MultiplexGraph,
}

/// A trained multiplex GNN teacher.
pub struct MgfdTeacher {
    model: TeacherModel,
}

/// A trained graph-free MLP student.
pub struct MgfdStudent {
    student: Student,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(i32, String);

impl From<mgfd::Error> for Failure {
    fn from(e: mgfd::Error) -> Self {
        let code = match &e {
            mgfd::Error::Io { .. } => MGFD_ERR_IO,
            mgfd::Error::Graph(
                mgfd::mgraph::GraphError::Io { .. } | mgfd::mgraph::GraphError::MissingFile(_),
            ) => MGFD_ERR_IO,
            e if e.is_validation() => MGFD_ERR_INVALID,
            _ => MGFD_ERR_RUNTIME,
        };
        Failure(code, e.to_string())
    }
}

impl From<mgfd::mgraph::GraphError> for Failure {
    fn from(e: mgfd::mgraph::GraphError) -> Self {
        mgfd::Error::from(e).into()
    }
}

impl From<mgfd::numkit::NumError> for Failure {
    fn from(e: mgfd::numkit::NumError) -> Self {
        mgfd::Error::from(e).into()
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MGFD_ERR_INVALID, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_last_error();
            MGFD_OK
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(_) => {
            set_last_error("panic inside mgfd".into());
            MGFD_ERR_PANIC
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(MGFD_ERR_NULL, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_slice<'a, T>(ptr: *mut T, len: usize, need: usize) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(null("output buffer"));
    }
    if len < need {
        return Err(invalid(format!("output buffer holds {len}, need {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, need))
}

unsafe fn features_arg(x: *const f64, rows: usize, cols: usize) -> Result<Matrix, Failure> {
    if x.is_null() {
        return Err(null("features"));
    }
    let n = rows.checked_mul(cols).ok_or_else(|| invalid("feature size overflows"))?;
    let data = std::slice::from_raw_parts(x, n).to_vec();
    Ok(Matrix::from_vec(rows, cols, data)?)
}

fn write_labels(out: &mut [u32], labels: &[usize]) {
    for (o, &l) in out.iter_mut().zip(labels) {
        *o = l as u32;
    }
}

/// Status text for the most recent failure on this thread, or null when the
/// last call succeeded. The pointer stays valid until the next mgfd call on
/// the same thread.
#[no_mangle]
pub extern "C" fn mgfd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Load a dataset directory.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mgfd_graph_load(path: *const c_char, out: *mut *mut MgfdGraph) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (graph, _) = load_dataset(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(MgfdGraph { graph }));
        Ok(())
    })
}

/// Build a synthetic dataset from a JSON generator spec.
///
/// # Safety
/// `spec_json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mgfd_graph_generate(
    spec_json: *const c_char,
    out: *mut *mut MgfdGraph,
) -> i32 {
    guard(|| {
        if spec_json.is_null() {
            return Err(null("spec_json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(spec_json).to_str().map_err(|_| invalid("spec is not UTF-8"))?;
        let spec: GeneratorSpec =
            serde_json::from_str(text).map_err(|e| invalid(format!("generator spec: {e}")))?;
        let (graph, _) = spec.generate()?;
        *out = Box::into_raw(Box::new(MgfdGraph { graph }));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from `mgfd_graph_load`/`mgfd_graph_generate` or be null.
#[no_mangle]
pub unsafe extern "C" fn mgfd_graph_free(graph: *mut MgfdGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Write node count, view count, feature dimension and class count.
///
/// # Safety
/// `graph` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn mgfd_graph_shape(
    graph: *const MgfdGraph,
    num_nodes: *mut usize,
    num_views: *mut usize,
    feature_dim: *mut usize,
    num_classes: *mut usize,
) -> i32 {
    guard(|| {
        let g = &graph.as_ref().ok_or_else(|| null("graph"))?.graph;
        for (p, v) in [
            (num_nodes, g.num_nodes()),
            (num_views, g.num_views()),
            (feature_dim, g.feature_dim()),
            (num_classes, g.num_classes()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copy the row-major feature matrix (`num_nodes * feature_dim` values).
///
/// # Safety
/// `graph` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mgfd_graph_features(
    graph: *const MgfdGraph,
    out: *mut f64,
    len: usize,
) -> i32 {
    guard(|| {
        let g = &graph.as_ref().ok_or_else(|| null("graph"))?.graph;
        let src = g.features().data();
        out_slice(out, len, src.len())?.copy_from_slice(src);
        Ok(())
    })
}

/// Number of distinct nodes a `layers`-deep multiplex GNN reads to infer
/// the given targets.
///
/// # Safety
/// `graph` must be a live handle, `targets` must hold `num_targets` entries.
#[no_mangle]
pub unsafe extern "C" fn mgfd_graph_fetch_count(
    graph: *const MgfdGraph,
    targets: *const u32,
    num_targets: usize,
    layers: usize,
    out: *mut usize,
) -> i32 {
    guard(|| {
        let g = &graph.as_ref().ok_or_else(|| null("graph"))?.graph;
        if out.is_null() {
            return Err(null("out"));
        }
        if targets.is_null() && num_targets > 0 {
            return Err(null("targets"));
        }
        let t: Vec<usize> = if num_targets == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(targets, num_targets).iter().map(|&v| v as usize).collect()
        };
        if let Some(&v) = t.iter().find(|&&v| v >= g.num_nodes()) {
            return Err(invalid(format!("target {v} out of range")));
        }
        *out = count_fetched_nodes(g, &t, layers);
        Ok(())
    })
}

/// Load a teacher checkpoint.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mgfd_teacher_load(path: *const c_char, out: *mut *mut MgfdTeacher) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = Checkpoint::load(path_arg(path)?)?;
        let model = TeacherModel::from_checkpoint(&ck)?;
        *out = Box::into_raw(Box::new(MgfdTeacher { model }));
        Ok(())
    })
}

/// # Safety
/// `teacher` must come from `mgfd_teacher_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn mgfd_teacher_free(teacher: *mut MgfdTeacher) {
    if !teacher.is_null() {
        drop(Box::from_raw(teacher));
    }
}

/// Integrated teacher class predictions for every node of `graph`.
///
/// # Safety
/// Handles must be live; `out` must hold `len >= num_nodes` entries.
#[no_mangle]
pub unsafe extern "C" fn mgfd_teacher_predict(
    teacher: *const MgfdTeacher,
    graph: *const MgfdGraph,
    out: *mut u32,
    len: usize,
) -> i32 {
    guard(|| {
        let t = &teacher.as_ref().ok_or_else(|| null("teacher"))?.model;
        let g = &graph.as_ref().ok_or_else(|| null("graph"))?.graph;
        let pred = teacher_forward(t, g)?.integrated_logits.argmax_rows();
        write_labels(out_slice(out, len, pred.len())?, &pred);
        Ok(())
    })
}

/// Load a student checkpoint.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mgfd_student_load(path: *const c_char, out: *mut *mut MgfdStudent) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = Checkpoint::load(path_arg(path)?)?;
        let student = Student::from_checkpoint(&ck)?;
        *out = Box::into_raw(Box::new(MgfdStudent { student }));
        Ok(())
    })
}

/// # Safety
/// `student` must come from `mgfd_student_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn mgfd_student_free(student: *mut MgfdStudent) {
    if !student.is_null() {
        drop(Box::from_raw(student));
    }
}

/// Expected feature dimension and number of output classes.
///
/// # Safety
/// `student` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn mgfd_student_shape(
    student: *const MgfdStudent,
    feature_dim: *mut usize,
    num_classes: *mut usize,
) -> i32 {
    guard(|| {
        let s = &student.as_ref().ok_or_else(|| null("student"))?.student;
        if !feature_dim.is_null() {
            *feature_dim = s.mlp.in_dim();
        }
        if !num_classes.is_null() {
            *num_classes = s.mlp.out_dim();
        }
        Ok(())
    })
}

/// Graph-free class predictions from a row-major `rows x cols` feature block.
///
/// # Safety
/// `student` must be live, `x` must hold `rows * cols` doubles and `out`
/// must hold `len >= rows` entries.
#[no_mangle]
pub unsafe extern "C" fn mgfd_student_predict(
    student: *const MgfdStudent,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut u32,
    len: usize,
) -> i32 {
    guard(|| {
        let s = &student.as_ref().ok_or_else(|| null("student"))?.student;
        let x = features_arg(x, rows, cols)?;
        let pred = s.predict(&x)?.argmax_rows();
        write_labels(out_slice(out, len, rows)?, &pred);
        Ok(())
    })
}

/// Node-wise ensemble coefficients (row-major `rows x num_teachers`) for an
/// MGFNN+ student. `num_teachers` receives the column count.
///
/// # Safety
/// `student` must be live, `x` must hold `rows * cols` doubles and `out`
/// must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mgfd_student_coefficients(
    student: *const MgfdStudent,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    len: usize,
    num_teachers: *mut usize,
) -> i32 {
    guard(|| {
        let s = &student.as_ref().ok_or_else(|| null("student"))?.student;
        let x = features_arg(x, rows, cols)?;
        let c = s.coefficients_for(&x)?;
        out_slice(out, len, c.data().len())?.copy_from_slice(c.data());
        if !num_teachers.is_null() {
            *num_teachers = c.cols();
        }
        Ok(())
    })
}
