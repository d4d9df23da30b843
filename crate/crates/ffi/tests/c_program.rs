use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "dynaprune.h"

int main(int argc, char **argv) {
    if (argc != 3) return 10;
    DpTrajectory *t = NULL;
    if (dp_trajectory_open(argv[2], &t) != DP_STATUS_OK) return 11;
    DpTrajectoryInfo info;
    if (dp_trajectory_info(t, &info) != DP_STATUS_OK) return 12;

    float small[1];
    if (dp_trajectory_read_epoch(t, 0, small, 1) != DP_STATUS_CAPACITY) return 13;
    if (dp_last_error_message() == NULL) return 14;

    DpTddsParams params;
    dp_tdds_params_default(&params);
    params.window = 1;
    DpScoreTable *scores = NULL;
    if (dp_tdds_scores(t, &params, &scores) != DP_STATUS_OK) return 15;
    DpCoreset *kept = NULL;
    if (dp_select_top_m(scores, 0.5, &kept) != DP_STATUS_OK) return 16;
    uint64_t idx[1];
    if (dp_coreset_len(kept) != 1) return 17;
    if (dp_coreset_copy(kept, idx, NULL, 1) != DP_STATUS_OK) return 18;

    DpTrajectoryWriter *w = NULL;
    uint32_t labels[2] = {0, 1};
    double e0[4] = {0.5, 0.5, 0.25, 0.75};
    double e1[4] = {0.9, 0.1, 0.125, 0.875};
    if (dp_trajectory_writer_create(argv[1], 2, 2, 2, DP_RECORDING_TRAIN_TIME, labels, &w) != DP_STATUS_OK) return 19;
    if (dp_trajectory_writer_push_epoch_f64(w, e0, 4) != DP_STATUS_OK) return 20;
    if (dp_trajectory_writer_push_epoch_f64(w, e1, 4) != DP_STATUS_OK) return 21;
    if (dp_trajectory_writer_finish(w) != DP_STATUS_OK) return 22;

    printf("%s %llu %llu\n", dp_version(), (unsigned long long)info.n_samples, (unsigned long long)idx[0]);
    dp_coreset_free(kept);
    dp_score_table_free(scores);
    dp_trajectory_free(t);
    return 0;
}
"#;

fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = lib_dir();
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler on PATH; skipping");
        return;
    }
    if !lib.join("libdynaprune_ffi.so").exists() && !lib.join("libdynaprune_ffi.dylib").exists() {
        eprintln!("shared library not found in {}; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    let exe = dir.path().join("probe");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror"])
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg("-o")
        .arg(&exe)
        .arg("-L")
        .arg(&lib)
        .arg("-ldynaprune_ffi")
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");

    let written = dir.path().join("out.tdlg");
    let golden = manifest.join("../core/tests/data/golden/fixed_2x2x2.tdlg");
    let out = Command::new(&exe)
        .arg(&written)
        .arg(&golden)
        .env("LD_LIBRARY_PATH", &lib)
        .env("DYLD_LIBRARY_PATH", &lib)
        .output()
        .unwrap();
    assert!(out.status.success(), "probe exited with {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.trim(), format!("{} 2 0", env!("CARGO_PKG_VERSION")));
    assert_eq!(std::fs::read(written).unwrap(), std::fs::read(golden).unwrap());
}
