use std::ffi::{CStr, CString};
use std::ptr;

use vitcx_ffi::*;

fn gradient(h: usize, w: usize) -> Vec<f32> {
    (0..h * w * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect()
}

fn last_error() -> String {
    let p = vcx_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn open_toy() -> *mut VcxOracle {
    let spec = CString::new("builtin-toy").unwrap();
    let mut oracle = ptr::null_mut();
    assert_eq!(unsafe { vcx_oracle_open(spec.as_ptr(), &mut oracle) }, VcxStatus::Ok);
    assert!(!oracle.is_null());
    oracle
}

#[test]
fn explain_round_trip() {
    let oracle = open_toy();
    let mut info = VcxOracleInfo::default();
    assert_eq!(unsafe { vcx_oracle_info(oracle, &mut info) }, VcxStatus::Ok);
    assert_eq!((info.input_height, info.input_width, info.channels), (32, 32, 3));
    assert_eq!((info.num_classes, info.num_blocks), (10, 2));

    let pixels = gradient(32, 32);
    let mut cfg = vcx_explain_config_default();
    cfg.target_class = 3;
    cfg.seed = 17;
    let mut e = ptr::null_mut();
    let status = unsafe { vcx_explain(oracle, pixels.as_ptr(), 32, 32, 3, &cfg, &mut e) };
    assert_eq!(status, VcxStatus::Ok);

    let (mut data, mut h, mut w) = (ptr::null(), 0, 0);
    assert_eq!(
        unsafe { vcx_explanation_saliency(e, &mut data, &mut h, &mut w) },
        VcxStatus::Ok
    );
    assert_eq!((h, w), (32, 32));
    let map = unsafe { std::slice::from_raw_parts(data, h * w) };
    assert!(map.iter().all(|v| (0.0..=1.0).contains(v)));

    let (mut target, mut k, mut mu) = (0, 0, 0.0);
    assert_eq!(
        unsafe { vcx_explanation_summary(e, &mut target, &mut k, &mut mu) },
        VcxStatus::Ok
    );
    assert_eq!(target, 3);
    assert!(k >= 1);
    let (mut scores, mut n) = (ptr::null(), 0);
    assert_eq!(unsafe { vcx_explanation_scores(e, &mut scores, &mut n) }, VcxStatus::Ok);
    assert_eq!(n, k);
    let scores = unsafe { std::slice::from_raw_parts(scores, n) };
    assert!((scores.iter().sum::<f64>() / n as f64 - mu).abs() < 1e-12);

    // Same inputs through the Rust API give the same map.
    let image = vitcx::Image::new(32, 32, 3, pixels.clone()).unwrap();
    let direct = vitcx::explain(
        &vitcx::ToyVit::new(vitcx::ToyVitConfig::default()).unwrap(),
        &image,
        &vitcx::ExplainConfig {
            target_class: Some(3),
            seed: 17,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(direct.saliency.values(), map);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.vcx");
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { vcx_explanation_write_vcx1(e, c_path.as_ptr()) }, VcxStatus::Ok);
    let raw = vitcx::raster::read_vcx1(&path).unwrap();
    assert_eq!(raw.values, map);

    unsafe {
        vcx_explanation_free(e);
        vcx_oracle_free(oracle);
    }
}

#[test]
fn null_config_uses_defaults() {
    let oracle = open_toy();
    let pixels = gradient(32, 32);
    let mut e = ptr::null_mut();
    assert_eq!(
        unsafe { vcx_explain(oracle, pixels.as_ptr(), 32, 32, 3, ptr::null(), &mut e) },
        VcxStatus::Ok
    );
    unsafe {
        vcx_explanation_free(e);
        vcx_oracle_free(oracle);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut oracle = ptr::null_mut();
    let bad = CString::new("carrier-pigeon").unwrap();
    assert_eq!(
        unsafe { vcx_oracle_open(bad.as_ptr(), &mut oracle) },
        VcxStatus::InvalidArgument
    );
    assert!(oracle.is_null());
    assert!(last_error().contains("carrier-pigeon"));

    let missing = CString::new("subprocess:/nonexistent/oracle").unwrap();
    assert_eq!(
        unsafe { vcx_oracle_open(missing.as_ptr(), &mut oracle) },
        VcxStatus::Oracle
    );

    assert_eq!(
        unsafe { vcx_oracle_open(ptr::null(), &mut oracle) },
        VcxStatus::NullPointer
    );
    assert_eq!(
        unsafe { vcx_oracle_open(bad.as_ptr(), ptr::null_mut()) },
        VcxStatus::NullPointer
    );

    let toy = open_toy();
    let mut e = ptr::null_mut();
    let wrong_size = gradient(16, 16);
    assert_eq!(
        unsafe { vcx_explain(toy, wrong_size.as_ptr(), 16, 16, 3, ptr::null(), &mut e) },
        VcxStatus::InvalidArgument
    );
    assert!(e.is_null());
    let out_of_range = vec![2.0f32; 32 * 32 * 3];
    assert_eq!(
        unsafe { vcx_explain(toy, out_of_range.as_ptr(), 32, 32, 3, ptr::null(), &mut e) },
        VcxStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { vcx_explain(toy, ptr::null(), 32, 32, 3, ptr::null(), &mut e) },
        VcxStatus::NullPointer
    );
    let mut info = VcxOracleInfo::default();
    assert_eq!(
        unsafe { vcx_oracle_info(ptr::null(), &mut info) },
        VcxStatus::NullPointer
    );
    unsafe {
        vcx_oracle_free(toy);
        vcx_oracle_free(ptr::null_mut());
        vcx_explanation_free(ptr::null_mut());
    }
}

#[test]
fn scalar_helpers() {
    assert!((vcx_debiased_score(0.005, 0.998, 0.991) - 0.012).abs() < 1e-9);
    assert!((vcx_debiased_score(0.981, 0.998, 0.986) - 0.993).abs() < 1e-9);

    let f = [0.0, 0.5, 1.0];
    let s = [1.0, 1.0, 0.0];
    let mut area = 0.0;
    assert_eq!(unsafe { vcx_auc(f.as_ptr(), s.as_ptr(), 3, &mut area) }, VcxStatus::Ok);
    assert!((area - 0.75).abs() < 1e-12);
    let bad = [0.0, 0.5];
    assert_eq!(
        unsafe { vcx_auc(bad.as_ptr(), s.as_ptr(), 2, &mut area) },
        VcxStatus::InvalidArgument
    );

    let map = [0.1f32, 0.9, 0.2, 0.3, 0.0, 0.4];
    let hit_box = VcxBox {
        x0: 1,
        y0: 0,
        x1: 2,
        y1: 1,
    };
    let miss_box = VcxBox {
        x0: 0,
        y0: 1,
        x1: 3,
        y1: 2,
    };
    let mut hit = false;
    assert_eq!(
        unsafe { vcx_pointing_game(map.as_ptr(), 2, 3, &hit_box, 1, &mut hit) },
        VcxStatus::Ok
    );
    assert!(hit);
    assert_eq!(
        unsafe { vcx_pointing_game(map.as_ptr(), 2, 3, &miss_box, 1, &mut hit) },
        VcxStatus::Ok
    );
    assert!(!hit);
    let outside = VcxBox {
        x0: 0,
        y0: 0,
        x1: 4,
        y1: 1,
    };
    assert_eq!(
        unsafe { vcx_pointing_game(map.as_ptr(), 2, 3, &outside, 1, &mut hit) },
        VcxStatus::InvalidArgument
    );

    let version = unsafe { CStr::from_ptr(vcx_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn errors_are_per_thread() {
    let bad = CString::new("nope").unwrap();
    let mut oracle = ptr::null_mut();
    unsafe { vcx_oracle_open(bad.as_ptr(), &mut oracle) };
    assert!(last_error().contains("nope"));
    std::thread::spawn(|| assert!(vcx_last_error_message().is_null()))
        .join()
        .unwrap();
}
