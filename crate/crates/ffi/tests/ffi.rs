use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use rote_ffi::*;

fn last_error() -> String {
    let p = rote_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn decompose_anchors_and_pre_epoch() {
    let mut t = RoteTriplet::default();
    unsafe {
        assert_eq!(rote_decompose_timestamp(31_536_000, &mut t), RoteStatus::Ok);
        assert_eq!((t.year, t.month, t.day), (1, 12, 365));
        assert_eq!(rote_decompose_timestamp(946_684_800, &mut t), RoteStatus::Ok);
        assert_eq!((t.year, t.month, t.day), (30, 360, 10957));
        assert_eq!(rote_decompose_timestamp(-1, &mut t), RoteStatus::PreEpoch);
        assert!(last_error().contains("-1"));
        assert_eq!(rote_decompose_timestamp(0, ptr::null_mut()), RoteStatus::NullPointer);
    }
}

#[test]
fn spectrum_and_buffer_sizes() {
    let mut out = [0.0; 2];
    unsafe {
        assert_eq!(rote_inverse_frequencies(100.0, 4, out.as_mut_ptr(), 2), RoteStatus::Ok);
        assert_eq!(out[0], 1.0);
        assert!((out[1] - 0.1).abs() < 1e-15);
        assert_eq!(rote_inverse_frequencies(100.0, 8, out.as_mut_ptr(), 2), RoteStatus::BufferTooSmall);
        assert_eq!(rote_inverse_frequencies(100.0, 3, out.as_mut_ptr(), 2), RoteStatus::InvalidArgument);
    }
}

#[test]
fn rotary_and_fusion() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let angles = [std::f64::consts::FRAC_PI_2, std::f64::consts::PI];
    let mut y = [0.0; 4];
    unsafe {
        assert_eq!(rote_apply_rotary(x.as_ptr(), 4, angles.as_ptr(), 2, y.as_mut_ptr()), RoteStatus::Ok);
        for (a, b) in y.iter().zip([-2.0, 1.0, -3.0, -4.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(
            rote_apply_rotary(x.as_ptr(), 4, angles.as_ptr(), 1, y.as_mut_ptr()),
            RoteStatus::InvalidArgument
        );
        let zero = RoteTriplet::default();
        assert_eq!(rote_fuse_levels(x.as_ptr(), 4, zero, ptr::null(), y.as_mut_ptr()), RoteStatus::Ok);
        assert_eq!(y, [3.0, 6.0, 9.0, 12.0]);
        let only_year = RoteLevels {
            base_year: 1e6,
            base_month: 1e4,
            base_day: 1e2,
            alpha_year: 1.0,
            alpha_month: 0.0,
            alpha_day: 0.0,
        };
        let t = RoteTriplet { year: 7, month: 90, day: 2600 };
        assert_eq!(rote_fuse_levels(x.as_ptr(), 4, t, &only_year, y.as_mut_ptr()), RoteStatus::Ok);
        let expect = rote::rotary::apply_rotary(&x, &[7.0, 7.0 * 1e-3]).unwrap();
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn model_handle_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let mut m: *mut RoteModel = ptr::null_mut();
    let mut pe: *mut RoteModel = ptr::null_mut();
    unsafe {
        assert_eq!(rote_model_new(20, RoteMode::YearMonthDay, 3, &mut m), RoteStatus::Ok);
        assert_eq!(rote_model_new(20, RoteMode::Positional, 3, &mut pe), RoteStatus::Ok);
        let (mut n, mut n_pe, mut v) = (0usize, 0usize, 0usize);
        assert_eq!(rote_model_param_count(m, &mut n), RoteStatus::Ok);
        assert_eq!(rote_model_param_count(pe, &mut n_pe), RoteStatus::Ok);
        assert_eq!(n_pe - n, 50 * 32);
        assert_eq!(rote_model_vocab_size(m, &mut v), RoteStatus::Ok);
        assert_eq!(v, 20);

        let items = [3usize, 5, 7];
        let ts = [1_600_000_000i64, 1_600_086_400, 1_610_000_000];
        let mut scores = vec![0.0; 20];
        assert_eq!(
            rote_model_score_next(m, items.as_ptr(), ts.as_ptr(), 3, scores.as_mut_ptr(), 20),
            RoteStatus::Ok
        );
        assert_eq!(scores[0], f64::NEG_INFINITY);
        assert!(scores[1..].iter().all(|s| s.is_finite()));
        let bad = [0usize, 5, 7];
        assert_eq!(
            rote_model_score_next(m, bad.as_ptr(), ts.as_ptr(), 3, scores.as_mut_ptr(), 20),
            RoteStatus::InvalidArgument
        );
        assert_eq!(
            rote_model_score_next(m, items.as_ptr(), ts.as_ptr(), 3, scores.as_mut_ptr(), 5),
            RoteStatus::BufferTooSmall
        );

        assert_eq!(rote_model_save(m, path.as_ptr()), RoteStatus::Ok);
        let mut back: *mut RoteModel = ptr::null_mut();
        assert_eq!(rote_model_load(path.as_ptr(), &mut back), RoteStatus::Ok);
        let mut again = vec![0.0; 20];
        let mut first = vec![0.0; 20];
        rote_model_score_next(m, items.as_ptr(), ts.as_ptr(), 3, first.as_mut_ptr(), 20);
        rote_model_score_next(back, items.as_ptr(), ts.as_ptr(), 3, again.as_mut_ptr(), 20);
        assert_eq!(first, again);

        let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
        let mut none: *mut RoteModel = ptr::null_mut();
        assert_eq!(rote_model_load(missing.as_ptr(), &mut none), RoteStatus::Io);
        assert!(none.is_null());
        assert!(last_error().contains("none.ckpt"));

        rote_model_free(back);
        rote_model_free(pe);
        rote_model_free(m);
        rote_model_free(ptr::null_mut());
        assert_eq!(rote_model_param_count(ptr::null(), &mut n), RoteStatus::NullPointer);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(rote_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/rote.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["rote_model_new", "rote_model_free", "rote_last_error", "rote_fuse_levels"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler found; syntax check skipped");
        return;
    };
    assert!(status.success());
}
