use std::ffi::{c_char, CString};
use std::io::Write;
use std::process::Command;
use std::ptr;

use pepnet::model::{Model, ModelConfig};
use pepnet::point_ops::{farthest_point_order, knn_indices, random_cloud};
use pepnet_ffi::*;

fn last_error() -> String {
    let len = unsafe { pep_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; len + 1];
    unsafe { pep_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..len].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn flat(cloud: &[[f64; 3]]) -> Vec<f64> {
    cloud.iter().flatten().copied().collect()
}

fn tiny_checkpoint(dir: &tempfile::TempDir) -> (Model<f32>, CString) {
    let model = Model::<f32>::new(ModelConfig::tiny(), 3).unwrap();
    let path = dir.path().join("tiny.pepw");
    model.save(&path).unwrap();
    (model, CString::new(path.to_str().unwrap()).unwrap())
}

#[test]
fn predict_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = tiny_checkpoint(&dir);
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { pep_model_load(path.as_ptr(), &mut h) }, PepStatus::Ok);
    let n = unsafe { pep_model_input_points(h) };
    assert_eq!(n, model.config().n_points);
    assert_eq!(unsafe { pep_model_parameter_count(h) }, model.parameter_count());

    let cloud = random_cloud(n, 11);
    let mut pose = [0.0; 6];
    assert_eq!(unsafe { pep_model_predict(h, flat(&cloud).as_ptr(), n, pose.as_mut_ptr()) }, PepStatus::Ok);
    let want = model.predict(&[&model.plan(&cloud).unwrap()]).unwrap()[0];
    assert_eq!(&pose[..3], &want.p_hat);
    assert_eq!(&pose[3..], &want.q_hat);

    let mut written = 0;
    let status = unsafe { pep_model_attention(h, flat(&cloud).as_ptr(), n, ptr::null_mut(), 0, &mut written) };
    assert_eq!(status, PepStatus::BufferTooSmall);
    let mut trace = vec![0.0; written];
    let status = unsafe { pep_model_attention(h, flat(&cloud).as_ptr(), n, trace.as_mut_ptr(), written, &mut written) };
    assert_eq!(status, PepStatus::Ok);
    assert!((trace.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    unsafe { pep_model_free(h) };
}

#[test]
fn errors_are_reported() {
    let missing = CString::new("/nonexistent/model.pepw").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { pep_model_load(missing.as_ptr(), &mut h) }, PepStatus::Io);
    assert!(h.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { pep_model_load(ptr::null(), &mut h) }, PepStatus::NullPointer);
    assert_eq!(last_error(), "path is null");

    let dir = tempfile::tempdir().unwrap();
    let (_, path) = tiny_checkpoint(&dir);
    assert_eq!(unsafe { pep_model_load(path.as_ptr(), &mut h) }, PepStatus::Ok);
    assert_eq!(last_error(), "");
    let cloud = random_cloud(10, 1);
    let mut pose = [0.0; 6];
    let status = unsafe { pep_model_predict(h, flat(&cloud).as_ptr(), 10, pose.as_mut_ptr()) };
    assert_eq!(status, PepStatus::InvalidArgument);
    unsafe { pep_model_free(h) };
    unsafe { pep_model_free(ptr::null_mut()) };
}

#[test]
fn kernels_match_library() {
    let cloud = random_cloud(200, 5);
    let mut fps = vec![0usize; 32];
    assert_eq!(unsafe { pep_fps(flat(&cloud).as_ptr(), 200, 32, fps.as_mut_ptr()) }, PepStatus::Ok);
    assert_eq!(fps, farthest_point_order(&cloud, 32).unwrap());

    let mut knn = vec![0usize; 32 * 8];
    let status = unsafe { pep_knn(flat(&cloud).as_ptr(), 200, fps.as_ptr(), 32, 8, knn.as_mut_ptr()) };
    assert_eq!(status, PepStatus::Ok);
    assert_eq!(knn, knn_indices(&cloud, &fps, 8).unwrap());

    let bad = [500usize];
    let status = unsafe { pep_knn(flat(&cloud).as_ptr(), 200, bad.as_ptr(), 1, 8, knn.as_mut_ptr()) };
    assert_eq!(status, PepStatus::InvalidArgument);
    let status = unsafe { pep_fps(flat(&cloud).as_ptr(), 200, 300, fps.as_mut_ptr()) };
    assert_eq!(status, PepStatus::InvalidArgument);

    assert!((pep_t_plus_r(0.0212, 5.96) - (2.12 + 596.0 * std::f64::consts::PI / 180.0)).abs() < 1e-9);
}

#[test]
fn events_to_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.txt");
    let mut f = std::fs::File::create(&path).unwrap();
    for i in 0..3000u64 {
        writeln!(f, "{} {} {} {}", i, i % 240, (i / 240) % 180, i % 2).unwrap();
    }
    drop(f);
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut ev = ptr::null_mut();
    assert_eq!(unsafe { pep_events_load(cpath.as_ptr(), 240, 180, true, &mut ev) }, PepStatus::Ok);
    assert_eq!(unsafe { pep_events_len(ev) }, 3000);

    let mut win = ptr::null_mut();
    assert_eq!(unsafe { pep_windows_segment(ev, 1000, 512, &mut win) }, PepStatus::Ok);
    assert_eq!(unsafe { pep_windows_len(win) }, 3);
    let (mut t0, mut t1) = (0, 0);
    assert_eq!(unsafe { pep_windows_span(win, 1, &mut t0, &mut t1) }, PepStatus::Ok);
    assert_eq!((t0, t1), (1000, 1999));

    let mut cloud = vec![0.0; 512 * 3];
    assert_eq!(unsafe { pep_windows_cloud(win, 0, 512, 9, 240, 180, cloud.as_mut_ptr()) }, PepStatus::Ok);
    assert!(cloud.iter().all(|v| (0.0..=1.0).contains(v)));
    let t: Vec<f64> = cloud.chunks(3).map(|r| r[2]).collect();
    assert!(t.windows(2).all(|w| w[0] <= w[1]));
    let status = unsafe { pep_windows_cloud(win, 7, 512, 9, 240, 180, cloud.as_mut_ptr()) };
    assert_eq!(status, PepStatus::InvalidArgument);
    unsafe {
        pep_windows_free(win);
        pep_events_free(ev);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/pepnet.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"pepnet.h\"\nint main(void) { return pep_t_plus_r(0.0, 0.0) == 0.0 ? PEP_STATUS_OK : 1; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(std::path::Path::new(header).parent().unwrap())
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
