//! Builds a small C program against the generated header and the shared
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "acs.h"

int main(void) {
    AcsConfig *cfg = NULL;
    AcsAxisModel *model = NULL;
    AcsEditor *ed = NULL;
    if (acs_config_new(&cfg) != ACS_STATUS_OK) return 10;
    if (acs_config_set(cfg, "edit.target_mode=axis") != ACS_STATUS_OK) return 11;
    if (acs_axis_load("/no/such/axis.json", &model) != ACS_STATUS_MISSING_FILE) return 12;
    if (strstr(acs_last_error(), "/no/such/axis.json") == NULL) return 13;
    if (acs_axis_fit(cfg, &model) != ACS_STATUS_OK) return 14;
    if (acs_editor_new(cfg, model, NULL, &ed) != ACS_STATUS_OK) return 15;
    AcsStep rec;
    for (int i = 0; i < 3; i++) {
        if (acs_editor_step(ed, &rec) != ACS_STATUS_OK) return 16;
    }
    unsigned char px[8 * 8 * 4];
    size_t needed = 0;
    if (acs_editor_render_rgba(ed, 8, px, sizeof px, &needed) != ACS_STATUS_OK) return 17;
    printf("%zu %zu %.6f\n", rec.step, needed, rec.coord);
    acs_editor_free(ed);
    acs_axis_free(model);
    acs_config_free(cfg);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let lib_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    assert!(lib_dir.join("libacs_ffi.so").exists(), "no shared library in {}", lib_dir.display());

    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("main.c");
    let exe = work.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg(format!("-I{}", manifest.join("include").display()))
        .arg(format!("-L{}", lib_dir.display()))
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-lacs_ffi")
        .status()
        .expect("C compiler");
    assert!(status.success());

    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(fields[..2], ["3", "256"]);
    assert!(fields[2].parse::<f64>().unwrap().is_finite());
}
