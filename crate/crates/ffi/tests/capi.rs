use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use nwsr_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(nwsr_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn generated(radius: f64, spacing: f64, seed: u64) -> *mut NwsrLayout {
    let mut l = ptr::null_mut();
    assert_eq!(unsafe { nwsr_layout_generate(radius, spacing, seed, &mut l) }, NwsrStatus::Ok);
    assert!(!l.is_null());
    l
}

#[test]
fn layout_round_trip() {
    let l = generated(20.0, 3.0, 7);
    unsafe {
        let n = nwsr_layout_len(l);
        assert!(n > 50);
        let side = nwsr_layout_side(l);
        assert!(side >= 40);
        let mut xy = vec![0.0; 2 * n];
        assert_eq!(nwsr_layout_centres(l, xy.as_mut_ptr(), xy.len()), NwsrStatus::Ok);
        assert_eq!(
            nwsr_layout_centres(l, xy.as_mut_ptr(), xy.len() - 1),
            NwsrStatus::BufferTooSmall
        );

        let (mut cx, mut cy, mut r) = (0.0, 0.0, 0.0);
        assert_eq!(nwsr_layout_fov(l, &mut cx, &mut cy, &mut r), NwsrStatus::Ok);
        assert_eq!(r, 20.0);
        let mut again = ptr::null_mut();
        let st = nwsr_layout_from_centres(xy.as_ptr(), n, cx, cy, r, &mut again);
        assert_eq!(st, NwsrStatus::Ok, "{}", last_error());
        assert_eq!(nwsr_layout_len(again), n);
        nwsr_layout_free(again);
        nwsr_layout_free(l);
    }
}

#[test]
fn null_and_bad_arguments_report_codes() {
    unsafe {
        assert_eq!(nwsr_layout_generate(20.0, 3.0, 1, ptr::null_mut()), NwsrStatus::NullPointer);
        let mut l = ptr::null_mut();
        assert_eq!(nwsr_layout_generate(2.0, 3.0, 1, &mut l), NwsrStatus::Layout);
        assert!(l.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(nwsr_layout_len(ptr::null()), 0);
        nwsr_layout_free(ptr::null_mut());
        nwsr_model_free(ptr::null_mut());
        assert_eq!(nwsr_model_is_sparse(ptr::null()), -1);
    }
}

#[test]
fn reconstructions_reproduce_constant_signal() {
    let l = generated(16.0, 3.0, 3);
    unsafe {
        let n = nwsr_layout_len(l);
        let side = nwsr_layout_side(l);
        let signals = vec![0.25; n];
        let mut out = vec![0.0; side * side];
        let st = nwsr_reconstruct_delaunay(l, signals.as_ptr(), n, side, side, out.as_mut_ptr(), out.len());
        assert_eq!(st, NwsrStatus::Ok, "{}", last_error());
        let c = side / 2;
        assert!((out[c * side + c] - 0.25).abs() < 1e-12);
        assert!(out.iter().all(|&v| v == 0.0 || (v - 0.25).abs() < 1e-12));

        let st = nwsr_reconstruct_nw_gauss(l, signals.as_ptr(), n, 0.0, side, side, out.as_mut_ptr(), out.len());
        assert_eq!(st, NwsrStatus::Ok, "{}", last_error());
        assert!((out[c * side + c] - 0.25).abs() < 1e-12);

        let st = nwsr_reconstruct_delaunay(l, signals.as_ptr(), n - 1, side, side, out.as_mut_ptr(), out.len());
        assert_eq!(st, NwsrStatus::Shape);
        nwsr_layout_free(l);
    }
}

#[test]
fn downsample_of_flat_image_is_flat() {
    let l = generated(16.0, 3.0, 4);
    unsafe {
        let n = nwsr_layout_len(l);
        let side = nwsr_layout_side(l);
        let hr = vec![0.6; side * side];
        let mut sig = vec![0.0; n];
        let st = nwsr_voronoi_downsample(l, hr.as_ptr(), side, side, sig.as_mut_ptr(), n);
        assert_eq!(st, NwsrStatus::Ok, "{}", last_error());
        assert!(sig.iter().all(|&s| (s - 0.6).abs() < 1e-12));
        nwsr_layout_free(l);
    }
}

#[test]
fn metrics_match_closed_forms() {
    let (w, h) = (16, 16);
    let a = vec![0.0; w * h];
    let b = vec![0.5; w * h];
    let mut v = 0.0;
    unsafe {
        assert_eq!(nwsr_psnr(a.as_ptr(), b.as_ptr(), w, h, 1.0, &mut v), NwsrStatus::Ok);
        assert!((v - 6.020599913279624).abs() < 1e-9);
        assert_eq!(nwsr_ssim(b.as_ptr(), b.as_ptr(), w, h, 1.0, &mut v), NwsrStatus::Ok);
        assert_eq!(v, 1.0);
        assert_eq!(nwsr_ssim(a.as_ptr(), b.as_ptr(), 0, h, 1.0, &mut v), NwsrStatus::InvalidArgument);
    }
}

#[test]
fn model_load_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let mut net = nwsr::network::build_nwnet_sr(1, 4, 2, 5).unwrap();
    net.zero_output_weights();
    net.set_output_bias(0.125);
    nwsr::checkpoint::save(&net, &path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(nwsr_model_load(cpath.as_ptr(), &mut m), NwsrStatus::Ok, "{}", last_error());
        assert_eq!(nwsr_model_is_sparse(m), 1);
        let (w, h) = (12, 10);
        let s = vec![0.3; w * h];
        let mask = vec![1.0; w * h];
        let mut out = vec![0.0; w * h];
        let st = nwsr_model_predict(m, s.as_ptr(), ptr::null(), w, h, out.as_mut_ptr(), out.len());
        assert_eq!(st, NwsrStatus::NullPointer);
        let st = nwsr_model_predict(m, s.as_ptr(), mask.as_ptr(), w, h, out.as_mut_ptr(), out.len());
        assert_eq!(st, NwsrStatus::Ok, "{}", last_error());
        assert!(out.iter().all(|&y| (y - 0.125).abs() < 1e-12));
        nwsr_model_free(m);

        let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(nwsr_model_load(missing.as_ptr(), &mut m), NwsrStatus::Io);
        assert!(m.is_null());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/nwsr.h")).unwrap();
    let lib = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = lib
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .collect();
    assert!(exports.len() >= 15);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        return;
    };
    if !cc.status.success() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"nwsr.h\"\nint main(void) { NwsrLayout *l = 0; return nwsr_layout_generate(20.0, 3.0, 1, &l) == NWSR_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
