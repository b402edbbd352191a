use std::ffi::{c_char, CStr, CString};
use std::f64::consts::PI;
use std::ptr;

use twisted_reeb_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        tr_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn sphere_orbit_round_trip() {
    unsafe {
        let mut sys: *mut TrSystem = ptr::null_mut();
        assert_eq!(tr_system_sphere(2, 1.0, 2, &mut sys), TrStatus::Ok);
        assert_eq!(tr_system_dim(sys), 4);
        assert_eq!(tr_system_symmetry_order(sys), 2);

        let mut list: *mut TrOrbitList = ptr::null_mut();
        assert_eq!(tr_orbit_search(sys, 0.0, 1, 1.0, 2.0, 4, 7, &mut list), TrStatus::Ok);
        assert!(tr_orbit_list_len(list) >= 1);
        let mut orbit: *mut TrOrbit = ptr::null_mut();
        assert_eq!(tr_orbit_list_get(list, 0, &mut orbit), TrStatus::Ok);
        let mut info = TrOrbitInfo::default();
        assert_eq!(tr_orbit_info(orbit, &mut info), TrStatus::Ok);
        assert!((info.tau - PI / 2.0).abs() < 1e-8);
        assert_eq!(info.closing_factor, 2);

        let mut x0 = [0.0; 4];
        assert_eq!(tr_orbit_point(orbit, x0.as_mut_ptr(), 4), TrStatus::Ok);
        let mut h = f64::NAN;
        assert_eq!(tr_system_energy(sys, x0.as_ptr(), 4, &mut h), TrStatus::Ok);
        assert!(h.abs() < 1e-10);

        // The twisted orbit is contractible in the sphere: its action is tau.
        let mut action = 0.0;
        assert_eq!(tr_orbit_action(sys, orbit, &mut action), TrStatus::Ok);
        assert!((action - info.tau).abs() < 1e-8);

        let mut mult = [0.0; 8];
        let mut count = 0usize;
        assert_eq!(tr_orbit_floquet(sys, orbit, mult.as_mut_ptr(), mult.len(), &mut count), TrStatus::Ok);
        assert_eq!(count, 2);

        tr_orbit_free(orbit);
        tr_orbit_list_free(list);
        tr_system_free(sys);
    }
}

#[test]
fn errors_are_reported_with_messages() {
    unsafe {
        let mut sys: *mut TrSystem = ptr::null_mut();
        assert_eq!(tr_system_henon_heiles(&mut sys), TrStatus::Ok);
        let x = [0.1, 0.0, 0.0];
        let mut h = 0.0;
        assert_eq!(tr_system_energy(sys, x.as_ptr(), 3, &mut h), TrStatus::DimensionMismatch);
        assert!(last_error().contains("expected 4"));

        let mut out = [0.0; 2];
        let y = [0.1, 0.0, 0.0, 0.3];
        assert_eq!(tr_system_flow(sys, y.as_ptr(), 4, 1.0, out.as_mut_ptr(), 2), TrStatus::BufferTooSmall);
        assert_eq!(tr_system_energy(ptr::null(), y.as_ptr(), 4, &mut h), TrStatus::NullPointer);

        let mut orbit: *mut TrOrbit = ptr::null_mut();
        assert_eq!(tr_orbit_refine(sys, y.as_ptr(), 4, -1.0, 0.1, 0, &mut orbit), TrStatus::InvalidParameter);
        assert!(orbit.is_null());
        tr_system_free(sys);
        tr_system_free(ptr::null_mut());
    }
}

#[test]
fn systems_from_toml() {
    unsafe {
        let spec = CString::new("kind = \"magnetic-torus\"\nj_mag = [[0.0, -1.0], [1.0, 0.0]]").unwrap();
        let mut sys: *mut TrSystem = ptr::null_mut();
        assert_eq!(tr_system_from_toml(spec.as_ptr(), &mut sys), TrStatus::Ok);
        assert_eq!(tr_system_dim(sys), 4);
        let mut k = 0.0;
        assert_eq!(tr_system_default_energy(sys, &mut k), TrStatus::Ok);
        assert_eq!(k, 0.5);
        tr_system_free(sys);

        let bad = CString::new("kind = \"torus-of-doom\"").unwrap();
        let mut sys: *mut TrSystem = ptr::null_mut();
        assert_eq!(tr_system_from_toml(bad.as_ptr(), &mut sys), TrStatus::InvalidText);
        assert!(sys.is_null());
        assert!(!last_error().is_empty());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/twisted_reeb.h")).unwrap();
    for name in [
        "typedef struct TrSystem TrSystem;",
        "typedef struct TrOrbit TrOrbit;",
        "TR_STATUS_OK = 0",
        "TrStatus tr_orbit_refine(",
        "void tr_system_free(struct TrSystem *system);",
        "size_t tr_last_error(char *buf, size_t len);",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let version = unsafe { CStr::from_ptr(tr_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn c_program_links_against_static_library() {
    use std::path::PathBuf;
    use std::process::Command;
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libtwisted_reeb_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let exe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("tr_c_smoke");
    let status = Command::new(cc)
        .arg(manifest.join("tests/c_smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).contains("tau=3.14159265"));
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
