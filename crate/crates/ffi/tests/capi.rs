// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ctdiff_ffi::*;

fn last_error() -> String {
    let p = ctdiff_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn fixture(name: &str) -> *mut CtdiffProgram {
    let name = CString::new(name).unwrap();
    let mut program = ptr::null_mut();
    let status = unsafe { ctdiff_program_fixture(name.as_ptr(), &mut program) };
    assert_eq!(status, CtdiffStatus::Ok);
    program
}

unsafe fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    ctdiff_string_free(p);
    s
}

#[test]
fn collect_and_analyze_leaky_fixture() {
    unsafe {
        let program = fixture("cmovznz_addr_leaky");
        let mut set = ptr::null_mut();
        assert_eq!(
            ctdiff_trace_set_collect(program, 8, &mut set),
            CtdiffStatus::Ok
        );
        assert_eq!(ctdiff_trace_set_len(set), 8);

        let mut report = ptr::null_mut();
        assert_eq!(
            ctdiff_analyze(set, program, 8, 4096, ptr::null(), &mut report),
            CtdiffStatus::Ok
        );
        let mut class = CtdiffClassification::None;
        assert_eq!(
            ctdiff_report_classification(report, &mut class),
            CtdiffStatus::Ok
        );
        assert_eq!(class, CtdiffClassification::MemOnly);
        let mut n = 0;
        assert_eq!(
            ctdiff_report_finding_count(report, false, &mut n),
            CtdiffStatus::Ok
        );
        assert_eq!(n, 1);

        let mut json = ptr::null_mut();
        assert_eq!(ctdiff_report_to_json(report, &mut json), CtdiffStatus::Ok);
        let json = take_string(json);
        assert!(json.contains("\"function_name\": \"cmovznz4\""), "{json}");

        ctdiff_report_free(report);
        ctdiff_trace_set_free(set);
        ctdiff_program_free(program);
    }
}

#[test]
fn known_issues_filter_through_the_boundary() {
    unsafe {
        let program = fixture("select_leaky");
        let mut set = ptr::null_mut();
        assert_eq!(
            ctdiff_trace_set_collect(program, 8, &mut set),
            CtdiffStatus::Ok
        );
        let known = CString::new("fn select\n").unwrap();
        let mut report = ptr::null_mut();
        assert_eq!(
            ctdiff_analyze(set, program, 8, 4096, known.as_ptr(), &mut report),
            CtdiffStatus::Ok
        );
        let mut class = CtdiffClassification::Both;
        ctdiff_report_classification(report, &mut class);
        assert_eq!(class, CtdiffClassification::None);
        let (mut all, mut open) = (0, 0);
        ctdiff_report_finding_count(report, true, &mut all);
        ctdiff_report_finding_count(report, false, &mut open);
        assert_eq!((all, open), (1, 0));
        ctdiff_report_free(report);
        ctdiff_trace_set_free(set);
        ctdiff_program_free(program);
    }
}

#[test]
fn traces_round_trip_through_text() {
    unsafe {
        let program = fixture("split_cond_leaky");
        let mut collected = ptr::null_mut();
        ctdiff_trace_set_collect(program, 4, &mut collected);
        let mut pushed = ptr::null_mut();
        assert_eq!(ctdiff_trace_set_new(&mut pushed), CtdiffStatus::Ok);
        for i in 0..ctdiff_trace_set_len(collected) {
            let mut text = ptr::null_mut();
            assert_eq!(
                ctdiff_trace_set_encode(collected, i, &mut text),
                CtdiffStatus::Ok
            );
            let status = ctdiff_trace_set_push(pushed, text);
            ctdiff_string_free(text);
            assert_eq!(status, CtdiffStatus::Ok);
        }
        let mut text = ptr::null_mut();
        assert_eq!(
            ctdiff_trace_set_encode(collected, 4, &mut text),
            CtdiffStatus::InvalidArgument
        );

        let analyze = |set| {
            let mut report = ptr::null_mut();
            assert_eq!(
                ctdiff_analyze(set, program, 8, 4096, ptr::null(), &mut report),
                CtdiffStatus::Ok
            );
            let mut json = ptr::null_mut();
            ctdiff_report_to_json(report, &mut json);
            ctdiff_report_free(report);
            findings_block(&take_string(json))
        };
        assert_eq!(analyze(collected), analyze(pushed));

        ctdiff_trace_set_free(collected);
        ctdiff_trace_set_free(pushed);
        ctdiff_program_free(program);
    }
}

// The program id differs between the two sets; compare only the findings.
fn findings_block(json: &str) -> String {
    let start = json.find("\"findings\"").unwrap();
    let end = json.find("\"trace_stats\"").unwrap();
    json[start..end].to_owned()
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut program = ptr::null_mut();
        let src = CString::new("main:\n  frob r1\n").unwrap();
        assert_eq!(
            ctdiff_program_assemble(src.as_ptr(), &mut program),
            CtdiffStatus::Assemble
        );
        assert!(program.is_null());
        assert!(last_error().contains("frob"), "{}", last_error());

        assert_eq!(
            ctdiff_program_assemble(ptr::null(), &mut program),
            CtdiffStatus::NullPointer
        );
        let bad = [0xffu8, 0];
        assert_eq!(
            ctdiff_program_assemble(bad.as_ptr().cast(), &mut program),
            CtdiffStatus::InvalidUtf8
        );
        let name = CString::new("nope").unwrap();
        assert_eq!(
            ctdiff_program_fixture(name.as_ptr(), &mut program),
            CtdiffStatus::InvalidArgument
        );

        let p = fixture("select_ct");
        let mut set = ptr::null_mut();
        assert_eq!(
            ctdiff_trace_set_collect(p, 1, &mut set),
            CtdiffStatus::InvalidArgument
        );
        ctdiff_trace_set_collect(p, 2, &mut set);
        let mut report = ptr::null_mut();
        assert_eq!(
            ctdiff_analyze(set, p, 0, 4096, ptr::null(), &mut report),
            CtdiffStatus::InvalidArgument
        );
        let text = CString::new("#trace v2\n").unwrap();
        assert_eq!(
            ctdiff_trace_set_push(set, text.as_ptr()),
            CtdiffStatus::Trace
        );
        assert_eq!(ctdiff_trace_set_len(set), 2);

        // a successful call clears the message
        assert_eq!(
            ctdiff_analyze(set, p, 8, 4096, ptr::null(), &mut report),
            CtdiffStatus::Ok
        );
        assert!(ctdiff_last_error().is_null());

        ctdiff_report_free(report);
        ctdiff_trace_set_free(set);
        ctdiff_program_free(p);
        ctdiff_program_free(ptr::null_mut());
        ctdiff_string_free(ptr::null_mut());
        assert_eq!(ctdiff_trace_set_len(ptr::null()), 0);
    }
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(ctdiff_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/ctdiff.h")).unwrap();
    let source = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing");
    }
    assert!(header.contains("typedef struct CtdiffProgram CtdiffProgram;"));
}

// Compiles a C program against the generated header and the static
// library. Skipped when no C compiler is installed.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/capi-<hash> -> target/<profile>
    let profile_dir: PathBuf = std::env::current_exe()
        .unwrap()
        .parent()
        .and_then(Path::parent)
        .unwrap()
        .to_owned();
    let lib = profile_dir.join("libctdiff_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let out = tempfile_path("ctdiff_smoke");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(dir.join("include"))
        .arg(dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&out).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(
        run.status.success(),
        "{:?} {}",
        run.status,
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc.to_owned());
        }
    }
    Err(())
}

fn tempfile_path(stem: &str) -> PathBuf {
    std::env::temp_dir().join(format!("{stem}-{}", std::process::id()))
}
