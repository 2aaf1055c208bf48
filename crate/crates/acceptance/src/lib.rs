//! Support for the acceptance checks in `tests/acceptance.rs`.
//!
//! The checks live in their own package so that the rest of the workspace
//! test suite runs before them.

use std::path::{Path, PathBuf};
use std::process::Command;

/// Path of the `inpaint` binary in the running profile's target directory,
/// rebuilt first so it matches the library under test.
pub fn inpaint_binary() -> PathBuf {
    let exe = std::env::current_exe().expect("test executable path");
    let profile_dir = exe
        .parent()
        .and_then(Path::parent)
        .expect("test executable lives in <profile>/deps");
    let cargo = std::env::var_os("CARGO").unwrap_or_else(|| "cargo".into());
    let mut build = Command::new(cargo);
    build.args(["build", "--quiet", "-p", "simgraph-inpaint", "--bin", "inpaint"]);
    if profile_dir.file_name().is_some_and(|n| n == "release") {
        build.arg("--release");
    }
    let status = build.status().expect("cargo runs");
    assert!(status.success(), "building inpaint failed");
    profile_dir.join(format!("inpaint{}", std::env::consts::EXE_SUFFIX))
}
