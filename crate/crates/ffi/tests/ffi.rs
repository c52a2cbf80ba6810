use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use mgfd::distill::{train_student, DistillConfig, DistillMode};
use mgfd::mgraph::{save_dataset, GeneratorSpec, HeteroSpec};
use mgfd::teacher::{soft_labels_from_output, teacher_forward, train_teacher, TeacherConfig};
use mgfd_ffi::*;

fn spec() -> GeneratorSpec {
    GeneratorSpec::Heterophilous(HeteroSpec {
        n: 120,
        k: 3,
        d: 8,
        signal: 2.0,
        p_in: 0.2,
        p_out: 0.01,
        p_rand: 0.01,
        group_a_frac: 0.5,
        group_signal: 2.0,
        seed: 3,
        train_frac: 0.2,
        val_frac: 0.2,
    })
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = mgfd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Dataset dir plus trained teacher and MGFNN+ student checkpoints.
fn artifacts(dir: &Path) {
    let (g, split) = spec().generate().unwrap();
    save_dataset(&g, &split, dir.join("data")).unwrap();
    let tcfg = TeacherConfig { epochs: 20, hidden: 16, ..TeacherConfig::default() };
    let (teacher, _) = train_teacher(&g, &split, &tcfg).unwrap();
    teacher.to_checkpoint().save(dir.join("teacher.json")).unwrap();
    let out = teacher_forward(&teacher, &g).unwrap();
    let all: Vec<usize> = (0..g.num_nodes()).collect();
    let bundle = soft_labels_from_output(&out, &all).unwrap();
    let scfg = DistillConfig {
        mode: DistillMode::MgfnnPlus,
        epochs: 20,
        hidden: 16,
        ..DistillConfig::default()
    };
    let (student, _) =
        train_student(g.features(), g.labels(), g.num_classes(), &split, &bundle, &scfg).unwrap();
    student.to_checkpoint().save(dir.join("student.json")).unwrap();
}

#[test]
fn round_trip_through_handles() {
    let tmp = tempfile::tempdir().unwrap();
    artifacts(tmp.path());
    unsafe {
        let mut g: *mut MgfdGraph = ptr::null_mut();
        assert_eq!(mgfd_graph_load(cstr(&tmp.path().join("data")).as_ptr(), &mut g), MGFD_OK);
        assert!(mgfd_last_error().is_null());
        let (mut n, mut r, mut d, mut k) = (0usize, 0usize, 0usize, 0usize);
        assert_eq!(mgfd_graph_shape(g, &mut n, &mut r, &mut d, &mut k), MGFD_OK);
        assert_eq!((n, r, d, k), (120, 2, 8, 3));

        let mut x = vec![0.0; n * d];
        assert_eq!(mgfd_graph_features(g, x.as_mut_ptr(), x.len()), MGFD_OK);

        let mut t: *mut MgfdTeacher = ptr::null_mut();
        assert_eq!(mgfd_teacher_load(cstr(&tmp.path().join("teacher.json")).as_ptr(), &mut t), MGFD_OK);
        let mut tp = vec![u32::MAX; n];
        assert_eq!(mgfd_teacher_predict(t, g, tp.as_mut_ptr(), n), MGFD_OK);
        assert!(tp.iter().all(|&c| (c as usize) < k));

        let mut s: *mut MgfdStudent = ptr::null_mut();
        assert_eq!(mgfd_student_load(cstr(&tmp.path().join("student.json")).as_ptr(), &mut s), MGFD_OK);
        let (mut sd, mut sk) = (0usize, 0usize);
        assert_eq!(mgfd_student_shape(s, &mut sd, &mut sk), MGFD_OK);
        assert_eq!((sd, sk), (d, k));
        let mut sp = vec![u32::MAX; n];
        assert_eq!(mgfd_student_predict(s, x.as_ptr(), n, d, sp.as_mut_ptr(), n), MGFD_OK);
        assert!(sp.iter().all(|&c| (c as usize) < k));

        let mut c = vec![0.0; n * 3];
        let mut m = 0usize;
        assert_eq!(
            mgfd_student_coefficients(s, x.as_ptr(), n, d, c.as_mut_ptr(), c.len(), &mut m),
            MGFD_OK
        );
        assert_eq!(m, 3);
        for row in c.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        let targets = [0u32, 5, 9];
        let (mut f1, mut f2) = (0usize, 0usize);
        assert_eq!(mgfd_graph_fetch_count(g, targets.as_ptr(), 3, 1, &mut f1), MGFD_OK);
        assert_eq!(mgfd_graph_fetch_count(g, targets.as_ptr(), 3, 2, &mut f2), MGFD_OK);
        assert!(f1 >= 3 && f2 >= f1);

        mgfd_student_free(s);
        mgfd_teacher_free(t);
        mgfd_graph_free(g);
    }
}

#[test]
fn generate_from_json_matches_core() {
    let json = CString::new(serde_json::to_string(&spec()).unwrap()).unwrap();
    unsafe {
        let mut g: *mut MgfdGraph = ptr::null_mut();
        assert_eq!(mgfd_graph_generate(json.as_ptr(), &mut g), MGFD_OK);
        let mut x = vec![0.0; 120 * 8];
        assert_eq!(mgfd_graph_features(g, x.as_mut_ptr(), x.len()), MGFD_OK);
        let (core, _) = spec().generate().unwrap();
        assert_eq!(x.as_slice(), core.features().data());
        mgfd_graph_free(g);
    }
}

#[test]
fn errors_set_codes_and_messages() {
    unsafe {
        let mut g: *mut MgfdGraph = ptr::null_mut();
        assert_eq!(mgfd_graph_load(ptr::null(), &mut g), MGFD_ERR_NULL);
        assert!(last_error().contains("null"));
        assert!(g.is_null());

        let missing = CString::new("/nonexistent/mgfd/data").unwrap();
        assert_eq!(mgfd_graph_load(missing.as_ptr(), &mut g), MGFD_ERR_IO);
        assert!(!last_error().is_empty());

        let bad = CString::new(r#"{"kind":"heterophilous","n":10}"#).unwrap();
        assert_eq!(mgfd_graph_generate(bad.as_ptr(), &mut g), MGFD_ERR_INVALID);

        let mut spec_bad = match spec() {
            GeneratorSpec::Heterophilous(h) => h,
            _ => unreachable!(),
        };
        spec_bad.p_in = 1.5;
        let json = CString::new(
            serde_json::to_string(&GeneratorSpec::Heterophilous(spec_bad)).unwrap(),
        )
        .unwrap();
        assert_eq!(mgfd_graph_generate(json.as_ptr(), &mut g), MGFD_ERR_INVALID);
        assert!(last_error().contains("1.5"));

        let ok = CString::new(serde_json::to_string(&spec()).unwrap()).unwrap();
        assert_eq!(mgfd_graph_generate(ok.as_ptr(), &mut g), MGFD_OK);
        assert!(mgfd_last_error().is_null());
        let mut small = [0.0f64; 4];
        assert_eq!(mgfd_graph_features(g, small.as_mut_ptr(), small.len()), MGFD_ERR_INVALID);
        let t = [500u32];
        let mut out = 0usize;
        assert_eq!(mgfd_graph_fetch_count(g, t.as_ptr(), 1, 2, &mut out), MGFD_ERR_INVALID);
        mgfd_graph_free(g);

        mgfd_graph_free(ptr::null_mut());
        mgfd_teacher_free(ptr::null_mut());
        mgfd_student_free(ptr::null_mut());
    }
}

#[test]
fn student_rejects_wrong_feature_width() {
    let tmp = tempfile::tempdir().unwrap();
    artifacts(tmp.path());
    unsafe {
        let mut s: *mut MgfdStudent = ptr::null_mut();
        assert_eq!(mgfd_student_load(cstr(&tmp.path().join("student.json")).as_ptr(), &mut s), MGFD_OK);
        let x = vec![0.0; 4 * 5];
        let mut out = [0u32; 4];
        assert_eq!(mgfd_student_predict(s, x.as_ptr(), 4, 5, out.as_mut_ptr(), 4), MGFD_ERR_INVALID);
        assert!(!last_error().is_empty());
        let mut t: *mut MgfdTeacher = ptr::null_mut();
        assert_eq!(
            mgfd_teacher_load(cstr(&tmp.path().join("student.json")).as_ptr(), &mut t),
            MGFD_ERR_INVALID
        );
        mgfd_student_free(s);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mgfd.h")).unwrap();
    for sym in [
        "mgfd_last_error",
        "mgfd_graph_load",
        "mgfd_graph_generate",
        "mgfd_graph_free",
        "mgfd_graph_shape",
        "mgfd_graph_features",
        "mgfd_graph_fetch_count",
        "mgfd_teacher_load",
        "mgfd_teacher_free",
        "mgfd_teacher_predict",
        "mgfd_student_load",
        "mgfd_student_free",
        "mgfd_student_shape",
        "mgfd_student_predict",
        "mgfd_student_coefficients",
        "typedef struct MgfdGraph MgfdGraph",
        "MGFD_ERR_PANIC",
    ] {
        assert!(header.contains(sym), "header missing {sym}");
    }
}
