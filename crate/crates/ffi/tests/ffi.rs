use std::ffi::{c_char, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use wgqed_ffi::*;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/configs")
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { wgqed_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take(n.min(255)).map(|c| *c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn load(name: &str, overrides: &[&str]) -> (WgqedStatus, *mut WgqedConfig) {
    let path = CString::new(configs().join(name).to_str().unwrap()).unwrap();
    let ov: Vec<CString> = overrides.iter().map(|s| CString::new(*s).unwrap()).collect();
    let ptrs: Vec<*const c_char> = ov.iter().map(|c| c.as_ptr()).collect();
    let mut cfg = ptr::null_mut();
    let st = unsafe { wgqed_config_load(path.as_ptr(), ptrs.as_ptr(), ptrs.len(), &mut cfg) };
    (st, cfg)
}

#[test]
fn config_handle_and_transmission() {
    let (st, cfg) = load("table_s1.cfg", &["select=[1]", "diffusion.kind=\"none\"", "drive.mean_photons=0.001"]);
    assert_eq!(st, WgqedStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { wgqed_config_emitter_count(cfg) }, 1);
    let delta = [-80.0, 0.3, 80.0];
    let mut t = [0.0; 3];
    let st = unsafe { wgqed_transmission(cfg, delta.as_ptr(), 3, t.as_mut_ptr()) };
    assert_eq!(st, WgqedStatus::Ok, "{}", last_error());
    assert!((t[0] - 1.0).abs() < 1e-3 && (t[2] - 1.0).abs() < 1e-3, "{t:?}");
    assert!(t[1] < 0.5, "{t:?}");
    unsafe { wgqed_config_free(cfg) };
}

#[test]
fn g1_fills_the_time_grid() {
    let (st, cfg) = load("fig_s11.cfg", &[]);
    assert_eq!(st, WgqedStatus::Ok);
    let n = unsafe { wgqed_config_time_grid_len(cfg) };
    let mut t = vec![0.0; n];
    let mut g = vec![0.0; n];
    let st = unsafe { wgqed_g1(cfg, WgqedDirection::Forward as i32, t.as_mut_ptr(), g.as_mut_ptr(), n) };
    assert_eq!(st, WgqedStatus::Ok, "{}", last_error());
    assert!(g.iter().all(|v| *v >= 0.0) && g.iter().cloned().fold(0.0, f64::max) > 0.0);
    assert!(t.windows(2).all(|w| w[1] > w[0]));
    let st = unsafe { wgqed_g1(cfg, 0, ptr::null_mut(), g.as_mut_ptr(), n - 1) };
    assert_eq!(st, WgqedStatus::BufferTooSmall);
    let st = unsafe { wgqed_g1(cfg, 7, ptr::null_mut(), g.as_mut_ptr(), n) };
    assert_eq!(st, WgqedStatus::InvalidArgument);
    assert!(last_error().contains("direction"));
    unsafe { wgqed_config_free(cfg) };
}

#[test]
fn errors_are_reported() {
    let (st, cfg) = load("table_s1.cfg", &["emitters[0].beta=1.5"]);
    assert_eq!(st, WgqedStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("emitters[0].beta"), "{}", last_error());
    let (st, _) = load("missing.cfg", &[]);
    assert_eq!(st, WgqedStatus::Io);
    let st = unsafe { wgqed_config_load(ptr::null(), ptr::null(), 0, &mut ptr::null_mut()) };
    assert_eq!(st, WgqedStatus::NullPointer);
    let mut v = 0.0;
    let st = unsafe { wgqed_g2_zero_delay(ptr::null(), 0, 1, &mut v) };
    assert_eq!(st, WgqedStatus::NullPointer);
}

#[test]
fn tags_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("tags.txt");
    std::fs::write(&p, "# n_pulses=3\n0,1,-12\n2,4,40\n").unwrap();
    let cp = CString::new(p.to_str().unwrap()).unwrap();
    let mut tags = ptr::null_mut();
    assert_eq!(unsafe { wgqed_tags_read(cp.as_ptr(), &mut tags) }, WgqedStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { wgqed_tags_len(tags) }, 2);
    let (mut pulse, mut time, mut ch) = (0u64, 0i64, 0u8);
    assert_eq!(unsafe { wgqed_tags_get(tags, 1, &mut pulse, &mut time, &mut ch) }, WgqedStatus::Ok);
    assert_eq!((pulse, time, ch), (2, 40, 4));
    assert_eq!(
        unsafe { wgqed_tags_get(tags, 2, &mut pulse, &mut time, &mut ch) },
        WgqedStatus::InvalidArgument
    );
    unsafe { wgqed_tags_free(tags) };
}

#[test]
fn header_links_from_c() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../include");
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().unwrap().parent().unwrap().join("libwgqed_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C toolchain or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let cfg = configs().join("fig_s11.cfg");
    std::fs::write(
        &src,
        format!(
            r#"#include <stdio.h>
#include "wgqed.h"
int main(void) {{
    WgqedConfig *cfg = NULL;
    if (wgqed_config_load("{}", NULL, 0, &cfg) != WGQED_STATUS_OK) return 1;
    size_t n = wgqed_config_time_grid_len(cfg);
    if (wgqed_config_emitter_count(cfg) != 2 || n == 0) return 2;
    char buf[128];
    if (wgqed_tags_read("/nonexistent", NULL) != WGQED_STATUS_NULL_POINTER) return 3;
    if (wgqed_last_error(buf, sizeof buf) == 0) return 4;
    wgqed_config_free(cfg);
    printf("%s\n", wgqed_version());
    return 0;
}}
"#,
            cfg.display()
        ),
    )
    .unwrap();
    let bin = dir.path().join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
