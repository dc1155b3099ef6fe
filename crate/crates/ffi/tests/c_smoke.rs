//! Compiles a small C program against the generated header and the static
//! library, then runs it. Skipped when no C compiler is available.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "scenir.h"

int main(void) {
    ScenirTable *t = NULL;
    if (scenir_table_synth(3, 6, 2, 4, &t) != SCENIR_STATUS_OK) return 10;
    if (scenir_table_dim(t) != 4) return 11;
    if (scenir_table_load(NULL, &t) != SCENIR_STATUS_NULL_ARGUMENT) return 12;
    if (strlen(scenir_last_error_message()) == 0) return 13;
    scenir_table_free(t);
    printf("%s\n", scenir_version());
    return 0;
}
"#;

fn lib_dir() -> PathBuf {
    // target/<profile>/deps/<test-binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let lib = lib_dir().join("libscenir_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        env!("CARGO_PKG_VERSION")
    );
}
