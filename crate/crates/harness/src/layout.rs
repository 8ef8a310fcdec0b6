//! Artifact paths under an output directory.

use std::path::{Path, PathBuf};

pub const SPLIT_FILE: &str = "split.json";
pub const SAMPLES_DIR: &str = "samples";
pub const EVAL_DIR: &str = "eval";
pub const REPORT_DIR: &str = "report";

pub fn split_path(out: &Path) -> PathBuf {
    out.join(SPLIT_FILE)
}

/// Outer-loop run directory of an arm (`soar` or `intrinsic`).
pub fn run_dir(out: &Path, arm: &str, teacher_seed: u64) -> PathBuf {
    out.join(arm).join(format!("teacher_{teacher_seed}"))
}

pub fn sample_path(out: &Path, arm: &str, teacher_seed: u64) -> PathBuf {
    out.join(SAMPLES_DIR)
        .join(arm)
        .join(format!("teacher_{teacher_seed}.json"))
}

/// Evaluation record of a labelled source. Inference-only records have no
/// student seed.
pub fn eval_path(out: &Path, label: &str, teacher_seed: u64, student_seed: Option<u64>) -> PathBuf {
    let name = match student_seed {
        Some(ss) => format!("t{teacher_seed}_s{ss}.json"),
        None => format!("t{teacher_seed}.json"),
    };
    out.join(EVAL_DIR).join(label).join(name)
}

pub fn report_dir(out: &Path) -> PathBuf {
    out.join(REPORT_DIR)
}
