use outfitsynth_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn last_error() -> String {
    unsafe { CStr::from_ptr(os_last_error()) }.to_string_lossy().into_owned()
}

fn tiny_config() -> *mut OsConfig {
    let json = CString::new(
        r#"{"image_size": 32, "generator.widths": [2,3,4,4], "generator.res_blocks": 1, "sam.channels": 3}"#,
    )
    .unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { os_config_from_json(json.as_ptr(), &mut cfg) }, OsStatus::Ok);
    cfg
}

#[test]
fn config_handles_and_errors() {
    let cfg = tiny_config();
    let mut buf = [0 as std::ffi::c_char; 65];
    assert_eq!(unsafe { os_config_hash(cfg, buf.as_mut_ptr(), buf.len()) }, OsStatus::Ok);
    let hash = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    assert_eq!(hash.len(), 64);
    assert_eq!(unsafe { os_config_hash(cfg, buf.as_mut_ptr(), 10) }, OsStatus::BufferTooSmall);

    let (k, v) = (CString::new("seed").unwrap(), CString::new("5").unwrap());
    assert_eq!(unsafe { os_config_set(cfg, k.as_ptr(), v.as_ptr()) }, OsStatus::Ok);
    let bad = CString::new("no.such.key").unwrap();
    assert_eq!(unsafe { os_config_set(cfg, bad.as_ptr(), v.as_ptr()) }, OsStatus::InvalidArgument);
    assert!(last_error().contains("no.such.key"));

    assert_eq!(unsafe { os_config_set(ptr::null_mut(), k.as_ptr(), v.as_ptr()) }, OsStatus::NullPointer);
    let junk = CString::new("[1, 2]").unwrap();
    let mut other = ptr::null_mut();
    assert_eq!(unsafe { os_config_from_json(junk.as_ptr(), &mut other) }, OsStatus::InvalidArgument);
    assert!(other.is_null());
    unsafe { os_config_free(cfg) };
    unsafe { os_config_free(ptr::null_mut()) };
}

#[test]
fn generate_through_handles() {
    let cfg = tiny_config();
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { os_generator_new(cfg, &mut g) }, OsStatus::Ok);
    let s = unsafe { os_generator_image_size(g) };
    let n = unsafe { os_generator_num_items(g) };
    assert_eq!((s, n), (32, 4));
    let given = vec![0.25f32; 3 * s * s];
    let masks = vec![1.0f32; 3 * s * s];
    let mut out = vec![0.0f32; n * 3 * s * s];
    let st = unsafe { os_generator_generate(g, given.as_ptr(), given.len(), masks.as_ptr(), masks.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(st, OsStatus::Ok, "{}", last_error());
    assert_eq!(&out[..3 * s * s], &given[..]);
    assert!(out.iter().all(|v| (-1.0..=1.0).contains(v)));

    let st = unsafe { os_generator_generate(g, given.as_ptr(), given.len(), masks.as_ptr(), 2 * s * s, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, OsStatus::InvalidArgument);
    let st = unsafe { os_generator_generate(g, given.as_ptr(), given.len(), masks.as_ptr(), masks.len(), out.as_mut_ptr(), 10) };
    assert_eq!(st, OsStatus::BufferTooSmall);
    let bad_mask = vec![0.5f32; 3 * s * s];
    let st = unsafe { os_generator_generate(g, given.as_ptr(), given.len(), bad_mask.as_ptr(), bad_mask.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(st, OsStatus::InvalidArgument);
    unsafe { os_generator_free(g) };
    unsafe { os_config_free(cfg) };
}

#[test]
fn missing_checkpoint_is_io() {
    let path = CString::new("/nonexistent/dir/model.ckpt").unwrap();
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { os_generator_load(path.as_ptr(), ptr::null(), 0, &mut g) }, OsStatus::Io);
    assert!(g.is_null());
}

#[test]
fn metrics_and_corpus() {
    let mut v = 0.0;
    let (p, n) = ([3.0, 1.0, 5.0, 2.0], [2.0; 4]);
    assert_eq!(unsafe { os_fcts(p.as_ptr(), n.as_ptr(), 4, &mut v) }, OsStatus::Ok);
    assert_eq!(v, 0.5);
    let img = vec![0.1f32; 3 * 16 * 16];
    assert_eq!(unsafe { os_ssim(img.as_ptr(), img.as_ptr(), 16, &mut v) }, OsStatus::Ok);
    assert!((v - 1.0).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let d = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { os_corpus_generate(10, 1, 32, d.as_ptr()) }, OsStatus::Ok);
    assert!(dir.path().join("index.jsonl").exists());
    assert_eq!(unsafe { os_corpus_generate(3, 1, 32, d.as_ptr()) }, OsStatus::InvalidArgument);
}

#[test]
fn header_declares_the_surface() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/outfitsynth.h")).unwrap();
    for sym in ["os_last_error", "os_config_from_json", "os_generator_generate", "os_generator_free", "OS_STATUS_OK", "typedef struct OsGenerator OsGenerator"] {
        assert!(h.contains(sym), "header lacks {sym}");
    }
    assert!(unsafe { CStr::from_ptr(os_version()) }.to_str().unwrap().starts_with("0."));
}
