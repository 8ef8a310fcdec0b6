//! Aggregation of evaluation records, diversity summaries and promotion
//! timelines into CSV tables and a plot-data JSONL file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use soar_core::outer::StepReport;

use crate::arms::{diversity, EvalRecord, TeacherSampleRecord};
use crate::config::{RunConfig, SeedRoster};
use crate::error::{HarnessError, Result};
use crate::layout::{self, EVAL_DIR, SAMPLES_DIR};
use crate::soar::{load_manifest, load_pq, load_reports};
use crate::store;

pub const HARD_ONLY: &str = "hard-only";
pub const PASSK_CSV: &str = "passk.csv";
pub const DELTA_CSV: &str = "delta.csv";
pub const DIVERSITY_CSV: &str = "diversity.csv";
pub const TIMELINE_CSV: &str = "promotions.csv";
pub const PLOT_JSONL: &str = "plot.jsonl";

/// Median, averaging the two middle values of an even-length input.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample standard deviation; zero for a single value.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassRow {
    pub label: String,
    pub k: usize,
    pub median: f64,
    pub std: f64,
    pub runs: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub label: String,
    pub k: usize,
    /// Median pass@k minus the hard-only median.
    pub delta: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityRow {
    pub arm: String,
    pub teacher_seed: u64,
    pub items: usize,
    pub vendi_mean: f64,
    pub vendi_std: f64,
    pub cosine_div: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineRow {
    pub arm: String,
    pub teacher_seed: u64,
    pub step: usize,
    pub mean_reward: f64,
    pub window_mean: f64,
    pub promoted: bool,
    pub stage: usize,
    pub vendi: f64,
    pub cosine_div: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub passk: Vec<PassRow>,
    pub deltas: Vec<DeltaRow>,
    pub diversity: Vec<DiversityRow>,
    pub timeline: Vec<TimelineRow>,
}

/// Median and sample std of pass@k per label and k, labels in sorted order.
pub fn aggregate(records: &[EvalRecord]) -> Result<Vec<PassRow>> {
    let mut groups: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.label.as_str()).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (label, group) in groups {
        let ks = group[0].k_list();
        if group.iter().any(|r| r.k_list() != ks) {
            return Err(HarnessError::Report(format!(
                "records of {label} use different k lists"
            )));
        }
        for (i, &k) in ks.iter().enumerate() {
            let v: Vec<f64> = group.iter().map(|r| r.pass_at_k()[i]).collect();
            rows.push(PassRow {
                label: label.to_string(),
                k,
                median: median(&v),
                std: sample_std(&v),
                runs: v.len(),
                config_hash: group[0].config_hash.clone(),
            });
        }
    }
    Ok(rows)
}

/// Differences of every label's medians to the hard-only medians.
pub fn deltas(rows: &[PassRow]) -> Vec<DeltaRow> {
    let base: BTreeMap<usize, f64> = rows
        .iter()
        .filter(|r| r.label == HARD_ONLY)
        .map(|r| (r.k, r.median))
        .collect();
    rows.iter()
        .filter(|r| r.label != HARD_ONLY)
        .filter_map(|r| {
            base.get(&r.k).map(|b| DeltaRow {
                label: r.label.clone(),
                k: r.k,
                delta: r.median - b,
                config_hash: r.config_hash.clone(),
            })
        })
        .collect()
}

/// Every label must cover exactly the configured seed grid: all
/// teacher x student cells, or every teacher seed for inference records.
pub fn check_roster(records: &[EvalRecord], roster: &SeedRoster) -> Result<()> {
    let mut by_label: BTreeMap<&str, BTreeSet<(u64, Option<u64>)>> = BTreeMap::new();
    for r in records {
        if !by_label
            .entry(&r.label)
            .or_default()
            .insert((r.teacher_seed, r.student_seed))
        {
            return Err(HarnessError::Report(format!(
                "{} has duplicate records for {}",
                r.label,
                cell_name(r.teacher_seed, r.student_seed)
            )));
        }
    }
    let mut problems = Vec::new();
    for (label, got) in by_label {
        let inference = got.iter().all(|(_, s)| s.is_none());
        let expected: BTreeSet<(u64, Option<u64>)> = if inference {
            roster.teacher.iter().map(|&t| (t, None)).collect()
        } else {
            roster
                .teacher
                .iter()
                .flat_map(|&t| roster.student.iter().map(move |&s| (t, Some(s))))
                .collect()
        };
        let missing: Vec<String> = expected.difference(&got).map(|&(t, s)| cell_name(t, s)).collect();
        let extra: Vec<String> = got.difference(&expected).map(|&(t, s)| cell_name(t, s)).collect();
        if !missing.is_empty() {
            problems.push(format!("{label} is missing {}", missing.join(", ")));
        }
        if !extra.is_empty() {
            problems.push(format!("{label} has runs outside the roster: {}", extra.join(", ")));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Report(format!(
            "seed roster mismatch: {}",
            problems.join("; ")
        )))
    }
}

fn cell_name(t: u64, s: Option<u64>) -> String {
    match s {
        Some(s) => format!("t{t}_s{s}"),
        None => format!("t{t}"),
    }
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn check_hash(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(HarnessError::Report(format!(
            "{} was produced under config {found}, not the current {expected}",
            path.display()
        )))
    }
}

/// Reads every evaluation record under `out`, sorted by label and cell.
pub fn load_eval_records(out: &Path, hash: &str) -> Result<Vec<EvalRecord>> {
    let mut records = Vec::new();
    for dir in subdirs(&out.join(EVAL_DIR))? {
        for file in json_files(&dir)? {
            let r: EvalRecord = store::read_json(&file)?;
            check_hash(&file, &r.config_hash, hash)?;
            records.push(r);
        }
    }
    records.sort_by(|a, b| {
        (a.label.as_str(), a.teacher_seed, a.student_seed).cmp(&(b.label.as_str(), b.teacher_seed, b.student_seed))
    });
    Ok(records)
}

/// Builds every table from the artifacts under `out` and writes them to
/// the report directory.
pub fn build_report(out: &Path, cfg: &RunConfig) -> Result<Report> {
    let hash = cfg.hash();
    let records = load_eval_records(out, &hash)?;
    check_roster(&records, &cfg.seeds)?;
    let passk = aggregate(&records)?;
    let deltas = deltas(&passk);

    let e = &cfg.eval;
    let mut div = Vec::new();
    for dir in subdirs(&out.join(SAMPLES_DIR))? {
        for file in json_files(&dir)? {
            let rec: TeacherSampleRecord = store::read_json(&file)?;
            check_hash(&file, &rec.config_hash, &hash)?;
            let d = diversity(
                &rec.sample.items,
                e.vendi_subsample,
                e.vendi_iterations,
                rec.sample.teacher_seed,
            )?;
            div.push(DiversityRow {
                arm: rec.arm.clone(),
                teacher_seed: rec.sample.teacher_seed,
                items: d.items,
                vendi_mean: d.vendi_mean,
                vendi_std: d.vendi_std,
                cosine_div: d.cosine_div,
                config_hash: hash.clone(),
            });
        }
    }

    let mut timeline = Vec::new();
    let mut plot: Vec<serde_json::Value> = Vec::new();
    for arm in ["soar", "intrinsic"] {
        for &ts in &cfg.seeds.teacher {
            let dir = layout::run_dir(out, arm, ts);
            if !dir.exists() {
                continue;
            }
            let manifest = load_manifest(&dir)?;
            check_hash(&dir, &manifest.config_hash, &hash)?;
            let reports: Vec<StepReport> = load_reports(&dir)?;
            for r in &reports {
                let mean_reward = r.rewards.iter().sum::<f64>() / r.rewards.len().max(1) as f64;
                timeline.push(TimelineRow {
                    arm: arm.into(),
                    teacher_seed: ts,
                    step: r.step,
                    mean_reward,
                    window_mean: r.window_mean,
                    promoted: r.promoted,
                    stage: r.stage,
                    vendi: r.vendi,
                    cosine_div: r.cosine_div,
                    config_hash: hash.clone(),
                });
                plot.push(serde_json::json!({
                    "series": "outer",
                    "arm": arm,
                    "teacher_seed": ts,
                    "step": r.step,
                    "mean_reward": mean_reward,
                    "window_mean": r.window_mean,
                    "vendi": r.vendi,
                    "config_hash": hash,
                }));
            }
            let pq = load_pq(&dir)?;
            let items: Vec<_> = pq.datasets.iter().flat_map(|d| d.items.clone()).collect();
            if items.len() >= 2 {
                let d = diversity(&items, e.vendi_subsample, e.vendi_iterations, ts)?;
                div.push(DiversityRow {
                    arm: format!("{arm}-promoted"),
                    teacher_seed: ts,
                    items: d.items,
                    vendi_mean: d.vendi_mean,
                    vendi_std: d.vendi_std,
                    cosine_div: d.cosine_div,
                    config_hash: hash.clone(),
                });
            }
        }
    }
    div.sort_by(|a, b| (a.arm.as_str(), a.teacher_seed).cmp(&(b.arm.as_str(), b.teacher_seed)));

    for r in &records {
        if let crate::arms::EvalResult::Trained(ev) = &r.result {
            for p in &ev.test {
                plot.push(serde_json::json!({
                    "series": "test",
                    "label": r.label,
                    "teacher_seed": r.teacher_seed,
                    "student_seed": r.student_seed,
                    "step": p.step,
                    "k_list": ev.k_list,
                    "pass_at_k": p.pass_at_k,
                    "greedy": p.greedy,
                    "config_hash": hash,
                }));
            }
        }
    }

    let report = Report {
        passk,
        deltas,
        diversity: div,
        timeline,
    };
    let dir = layout::report_dir(out);
    store::ensure_dir(&dir)?;
    write_csv(&dir.join(PASSK_CSV), &report.passk)?;
    write_csv(&dir.join(DELTA_CSV), &report.deltas)?;
    write_csv(&dir.join(DIVERSITY_CSV), &report.diversity)?;
    write_csv(&dir.join(TIMELINE_CSV), &report.timeline)?;
    let mut lines = String::new();
    for v in &plot {
        lines.push_str(&v.to_string());
        lines.push('\n');
    }
    store::write_atomic(&dir.join(PLOT_JSONL), lines.as_bytes())?;
    Ok(report)
}

/// Writes rows as CSV with a header derived from the field names. Empty
/// tables produce an empty file.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| HarnessError::artifact(path, e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| HarnessError::artifact(path, e.to_string()))?;
    store::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arms::{EvalResult, InferenceEval};

    fn record(label: &str, t: u64, s: Option<u64>, p: [f64; 2]) -> EvalRecord {
        EvalRecord {
            label: label.into(),
            config_hash: "h".into(),
            teacher_seed: t,
            student_seed: s,
            result: EvalResult::Inference(InferenceEval {
                k_list: vec![1, 32],
                pass_at_k: p.to_vec(),
                greedy: 0.0,
            }),
        }
    }

    #[test]
    fn median_and_std_basics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(sample_std(&[5.0]), 0.0);
        assert!((sample_std(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_run_has_zero_std() {
        let rows = aggregate(&[record("a", 1, None, [0.2, 0.5])]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.std == 0.0 && r.runs == 1));
        assert_eq!(rows[1].median, 0.5);
    }

    #[test]
    fn duplicated_runs_have_identical_medians_and_zero_std() {
        let recs: Vec<_> = (1..=4).map(|t| record("a", t, None, [0.3, 0.7])).collect();
        let rows = aggregate(&recs).unwrap();
        assert_eq!(rows[0].median, 0.3);
        assert_eq!(rows[1].median, 0.7);
        assert!(rows.iter().all(|r| r.std == 0.0));
    }

    #[test]
    fn deltas_are_relative_to_hard_only() {
        let recs = vec![
            record(HARD_ONLY, 1, None, [0.1, 0.2]),
            record("pq", 1, None, [0.3, 0.5]),
        ];
        let d = deltas(&aggregate(&recs).unwrap());
        assert_eq!(d.len(), 2);
        assert!((d[1].delta - 0.3).abs() < 1e-15);
    }

    #[test]
    fn roster_mismatch_names_missing_cells() {
        let roster = SeedRoster {
            teacher: vec![1, 2],
            student: vec![7],
        };
        let ok = vec![record("x", 1, Some(7), [0.0; 2]), record("x", 2, Some(7), [0.0; 2])];
        check_roster(&ok, &roster).unwrap();
        let err = check_roster(&ok[..1], &roster).unwrap_err().to_string();
        assert!(err.contains("t2_s7"), "{err}");
        let extra = vec![
            record("ps", 1, None, [0.0; 2]),
            record("ps", 2, None, [0.0; 2]),
            record("ps", 9, None, [0.0; 2]),
        ];
        assert!(check_roster(&extra, &roster).unwrap_err().to_string().contains("t9"));
    }
}
