//! Command-line front end: argument parsing and the subcommand bodies.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use soar_core::outer::{TeacherReward, TeacherState};
use soar_core::tasklab::QaPair;

use crate::arms::{evaluate_fresh, evaluate_inference, sample_teacher, EvalRecord, EvalResult, TeacherSampleRecord};
use crate::bridge::{BridgeProcess, SampleRequest};
use crate::config::{Mixing, Profile, RunConfig};
use crate::error::{HarnessError, Result};
use crate::layout;
use crate::report::{build_report, HARD_ONLY};
use crate::soar::{load_pq, load_ps, load_teacher, OuterRunner};
use crate::split::{filter_and_split, FilterSummary, TaskSetSplit};
use crate::store;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    /// The built-in task environment.
    Toy,
    /// An external worker over the line-delimited JSON protocol.
    Bridge,
}

#[derive(Debug, Parser)]
#[command(name = "soar", about = "Teacher-student curriculum simulator", version)]
pub struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Restrict the teacher seed roster to this seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the configured one.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Step-budget profile applied on top of the configuration.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    #[arg(long, global = true, value_enum, default_value = "toy")]
    pub backend: Backend,
    /// Worker command line for the bridge backend.
    #[arg(long, global = true)]
    pub bridge_cmd: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the hard task pool and its train/test split.
    Filter,
    /// Run the grounded-reward outer loop for every teacher seed.
    TrainSoar(RunArgs),
    /// Run one of the comparison arms.
    TrainBaseline {
        #[arg(long, value_enum)]
        arm: BaselineArm,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train and evaluate fresh students for every seed cell.
    EvalStudent {
        #[arg(long, value_enum)]
        source: Source,
        /// Mixing strategy; defaults to the configured one.
        #[arg(long, value_enum)]
        strategy: Option<Mixing>,
        /// Teacher arm whose samples the `sampled` source uses.
        #[arg(long, value_enum, default_value = "base")]
        arm: SampleArm,
    },
    /// Sample well-formed pairs from a teacher.
    SampleTeacher {
        #[arg(long, value_enum, default_value = "soar")]
        arm: SampleArm,
        /// Use the teacher snapshot after this many outer steps instead of
        /// the latest one.
        #[arg(long)]
        checkpoint_step: Option<usize>,
        /// Pairs per teacher; defaults to the base-teacher sample size.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Aggregate evaluation records into tables.
    Report,
}

#[derive(Debug, Clone, Copy, Default, Args)]
pub struct RunArgs {
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Stop before this outer step.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArm {
    HardOnly,
    Intrinsic,
    BaseTeacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Source {
    /// Promotion questions of the SOAR run.
    Pq,
    /// A teacher sample written by `sample-teacher` or the base-teacher arm.
    Sampled,
    /// No synthetic data.
    None,
    /// Direct inference with the promoted student.
    Ps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SampleArm {
    Base,
    Soar,
    Intrinsic,
}

impl SampleArm {
    pub fn name(self) -> &'static str {
        match self {
            SampleArm::Base => "base",
            SampleArm::Soar => "soar",
            SampleArm::Intrinsic => "intrinsic",
        }
    }
}

fn mixing_name(m: Mixing) -> &'static str {
    match m {
        Mixing::Curriculum => "curriculum",
        Mixing::Mixed => "mixed",
    }
}

/// The persisted split with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitArtifact {
    pub config_hash: String,
    pub summary: FilterSummary,
    pub split: TaskSetSplit,
}

/// Completions returned by an external teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeSampleRecord {
    pub config_hash: String,
    pub teacher_seed: u64,
    pub prompt: String,
    pub completions: Vec<String>,
}

const BRIDGE_TEACHER_PROMPT: &str =
    "Write one new, self-contained problem with a single verifiable answer. Put the problem between <question> \
     and </question> and the final answer between <answer> and </answer>, boxed.";

/// Resolved configuration and output location for one invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub backend: Backend,
    pub bridge_cmd: Option<String>,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = cli.profile {
            cfg.apply_profile(p);
        }
        if let Some(s) = cli.seed {
            cfg.seeds.teacher = vec![s];
        }
        cfg.validate()?;
        let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        Ok(Context {
            cfg,
            out,
            backend: cli.backend,
            bridge_cmd: cli.bridge_cmd.clone(),
        })
    }

    fn require_toy(&self, what: &str) -> Result<()> {
        match self.backend {
            Backend::Toy => Ok(()),
            Backend::Bridge => Err(HarnessError::Config(format!(
                "{what} runs on the toy backend only; the bridge backend drives sample-teacher"
            ))),
        }
    }
}

/// Executes a parsed command line and returns the lines to print.
pub fn run(cli: &Cli) -> Result<Vec<String>> {
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::Filter => {
            ctx.require_toy("filter")?;
            cmd_filter(&ctx).map(|a| vec![filter_line(&a.summary)])
        }
        Command::TrainSoar(args) => {
            ctx.require_toy("train-soar")?;
            cmd_train_outer(&ctx, TeacherReward::Grounded, *args)
        }
        Command::TrainBaseline { arm, run } => {
            ctx.require_toy("train-baseline")?;
            match arm {
                BaselineArm::HardOnly => cmd_eval(&ctx, Source::None, Mixing::Mixed, SampleArm::Base),
                BaselineArm::Intrinsic => cmd_train_outer(&ctx, TeacherReward::Learnability, *run),
                BaselineArm::BaseTeacher => cmd_sample(&ctx, SampleArm::Base, None, None),
            }
        }
        Command::EvalStudent { source, strategy, arm } => {
            ctx.require_toy("eval-student")?;
            cmd_eval(&ctx, *source, strategy.unwrap_or(ctx.cfg.eval.strategy), *arm)
        }
        Command::SampleTeacher {
            arm,
            checkpoint_step,
            count,
        } => match ctx.backend {
            Backend::Toy => cmd_sample(&ctx, *arm, *checkpoint_step, *count),
            Backend::Bridge => cmd_bridge_sample(&ctx, *count),
        },
        Command::Report => {
            ctx.require_toy("report")?;
            let r = build_report(&ctx.out, &ctx.cfg)?;
            Ok(vec![format!(
                "report: {} pass@k rows, {} delta rows, {} diversity rows, {} timeline rows in {}",
                r.passk.len(),
                r.deltas.len(),
                r.diversity.len(),
                r.timeline.len(),
                layout::report_dir(&ctx.out).display()
            )])
        }
    }
}

fn filter_line(s: &FilterSummary) -> String {
    format!(
        "filter: kept {:?} per level of {}; train {} / test {}",
        s.retained_per_level, s.pool_size, s.train, s.test
    )
}

/// Builds and persists the split.
pub fn cmd_filter(ctx: &Context) -> Result<SplitArtifact> {
    let (split, summary) = filter_and_split(&ctx.cfg.env, &ctx.cfg.pool)?;
    let art = SplitArtifact {
        config_hash: ctx.cfg.hash(),
        summary,
        split,
    };
    store::ensure_dir(&ctx.out)?;
    store::write_json(&layout::split_path(&ctx.out), &art)?;
    Ok(art)
}

/// The persisted split when it matches the configuration, otherwise a
/// freshly built one.
pub fn load_or_filter(ctx: &Context) -> Result<SplitArtifact> {
    let path = layout::split_path(&ctx.out);
    if path.exists() {
        let art: SplitArtifact = store::read_json(&path)?;
        if art.config_hash == ctx.cfg.hash() {
            return Ok(art);
        }
    }
    cmd_filter(ctx)
}

fn cmd_train_outer(ctx: &Context, reward: TeacherReward, args: RunArgs) -> Result<Vec<String>> {
    let art = load_or_filter(ctx)?;
    let results: Vec<Result<String>> = ctx
        .cfg
        .seeds
        .teacher
        .par_iter()
        .map(|&ts| {
            let runner = OuterRunner {
                cfg: &ctx.cfg,
                split: &art.split,
                teacher_seed: ts,
                reward,
                dir: None,
            };
            let arm = runner.arm_name();
            let runner = OuterRunner {
                dir: Some(layout::run_dir(&ctx.out, arm, ts)),
                ..runner
            };
            let run = runner.run(args.resume, args.stop_after)?;
            let steps: Vec<usize> = run.ledger.history().iter().map(|p| p.step).collect();
            Ok(format!(
                "{arm} teacher {ts}: {} steps, {} promotions at {:?}, stage {}",
                run.reports.last().map_or(0, |r| r.step + 1),
                steps.len(),
                steps,
                run.ledger.stage()
            ))
        })
        .collect();
    results.into_iter().collect()
}

fn cells(cfg: &RunConfig) -> Vec<(u64, u64)> {
    cfg.seeds
        .teacher
        .iter()
        .flat_map(|&t| cfg.seeds.student.iter().map(move |&s| (t, s)))
        .collect()
}

fn synthetic_for(ctx: &Context, source: Source, arm: SampleArm, ts: u64) -> Result<Vec<QaPair>> {
    match source {
        Source::None | Source::Ps => Ok(Vec::new()),
        Source::Pq => {
            let dir = layout::run_dir(&ctx.out, "soar", ts);
            if !dir.exists() {
                return Err(HarnessError::Config(format!(
                    "no SOAR run for teacher {ts} in {}; run train-soar first",
                    dir.display()
                )));
            }
            let pq = load_pq(&dir)?;
            Ok(pq.datasets.into_iter().flat_map(|d| d.items).collect())
        }
        Source::Sampled => {
            let path = layout::sample_path(&ctx.out, arm.name(), ts);
            if !path.exists() {
                return Err(HarnessError::Config(format!(
                    "no {} sample for teacher {ts} at {}; run sample-teacher first",
                    arm.name(),
                    path.display()
                )));
            }
            let rec: TeacherSampleRecord = store::read_json(&path)?;
            Ok(rec.sample.items)
        }
    }
}

fn eval_label(source: Source, strategy: Mixing, arm: SampleArm) -> String {
    match source {
        Source::None => HARD_ONLY.to_string(),
        Source::Ps => "ps".to_string(),
        Source::Pq => format!("pq-{}", mixing_name(strategy)),
        Source::Sampled => format!("sampled-{}-{}", arm.name(), mixing_name(strategy)),
    }
}

fn cmd_eval(ctx: &Context, source: Source, strategy: Mixing, arm: SampleArm) -> Result<Vec<String>> {
    let art = load_or_filter(ctx)?;
    let hash = ctx.cfg.hash();
    let label = eval_label(source, strategy, arm);
    let records: Vec<Result<EvalRecord>> = if source == Source::Ps {
        ctx.cfg
            .seeds
            .teacher
            .par_iter()
            .map(|&ts| {
                let dir = layout::run_dir(&ctx.out, "soar", ts);
                if !dir.exists() {
                    return Err(HarnessError::Config(format!(
                        "no SOAR run for teacher {ts} in {}; run train-soar first",
                        dir.display()
                    )));
                }
                let fresh = soar_core::tasklab::StudentState::fresh(&ctx.cfg.env);
                let ps = load_ps(&dir)?;
                let student = ps.as_ref().map_or(&fresh, |p| &p.student);
                Ok(EvalRecord {
                    label: label.clone(),
                    config_hash: hash.clone(),
                    teacher_seed: ts,
                    student_seed: None,
                    result: EvalResult::Inference(evaluate_inference(&ctx.cfg, &art.split, student, ts)?),
                })
            })
            .collect()
    } else {
        cells(&ctx.cfg)
            .par_iter()
            .map(|&(ts, ss)| {
                let synthetic = synthetic_for(ctx, source, arm, ts)?;
                let ev = evaluate_fresh(&ctx.cfg, &art.split, &synthetic, strategy, ts, ss)?;
                Ok(EvalRecord {
                    label: label.clone(),
                    config_hash: hash.clone(),
                    teacher_seed: ts,
                    student_seed: Some(ss),
                    result: EvalResult::Trained(ev),
                })
            })
            .collect()
    };
    let mut lines = Vec::new();
    for r in records {
        let r = r?;
        let path = layout::eval_path(&ctx.out, &r.label, r.teacher_seed, r.student_seed);
        store::write_json(&path, &r)?;
        let k = r.k_list().last().copied().unwrap_or(1);
        lines.push(format!(
            "{} {}: pass@{k} {:.4}, greedy {:.4}",
            r.label,
            path.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default(),
            r.pass_at_k().last().copied().unwrap_or(0.0),
            r.greedy()
        ));
    }
    Ok(lines)
}

fn teacher_for(ctx: &Context, arm: SampleArm, ts: u64, checkpoint: Option<usize>) -> Result<TeacherState> {
    match arm {
        SampleArm::Base => Ok(TeacherState::base(&ctx.cfg.env, &ctx.cfg.outer)?),
        SampleArm::Soar | SampleArm::Intrinsic => {
            let dir = layout::run_dir(&ctx.out, arm.name(), ts);
            if !dir.exists() {
                return Err(HarnessError::Config(format!(
                    "no {} run for teacher {ts} in {}",
                    arm.name(),
                    dir.display()
                )));
            }
            load_teacher(&dir, checkpoint)
        }
    }
}

fn cmd_sample(ctx: &Context, arm: SampleArm, checkpoint: Option<usize>, count: Option<usize>) -> Result<Vec<String>> {
    let count = count.unwrap_or(ctx.cfg.eval.base_teacher_samples);
    let hash = ctx.cfg.hash();
    let mut lines = Vec::new();
    for &ts in &ctx.cfg.seeds.teacher {
        let teacher = teacher_for(ctx, arm, ts, checkpoint)?;
        let sample = sample_teacher(&teacher, &ctx.cfg.env, count, ctx.cfg.outer.max_tries, ts)?;
        let path = layout::sample_path(&ctx.out, arm.name(), ts);
        lines.push(format!(
            "{} teacher {ts}: {} pairs, {} format retries, levels {:?}",
            arm.name(),
            sample.items.len(),
            sample.retries,
            sample.level_hist
        ));
        store::write_json(
            &path,
            &TeacherSampleRecord {
                arm: arm.name().to_string(),
                config_hash: hash.clone(),
                checkpoint_step: match arm {
                    SampleArm::Base => None,
                    _ => Some(checkpoint.unwrap_or(teacher.steps_taken())),
                },
                sample,
            },
        )?;
    }
    Ok(lines)
}

fn cmd_bridge_sample(ctx: &Context, count: Option<usize>) -> Result<Vec<String>> {
    let cmdline = ctx
        .bridge_cmd
        .as_deref()
        .ok_or_else(|| HarnessError::Config("the bridge backend needs --bridge-cmd".into()))?;
    let mut parts = cmdline.split_whitespace().map(str::to_string);
    let program = parts
        .next()
        .ok_or_else(|| HarnessError::Config("--bridge-cmd is empty".into()))?;
    let args: Vec<String> = parts.collect();
    let count = count.unwrap_or(ctx.cfg.eval.base_teacher_samples);
    let mut worker = BridgeProcess::spawn(&program, &args)?;
    let mut lines = Vec::new();
    for &ts in &ctx.cfg.seeds.teacher {
        let res = worker.client.sample(&SampleRequest {
            prompts: vec![BRIDGE_TEACHER_PROMPT.to_string()],
            n: count,
            temperature: 1.0,
            max_tokens: 512,
            seed: ts,
        })?;
        let completions = res.completions.into_iter().next().unwrap_or_default();
        lines.push(format!("bridge teacher {ts}: {} completions", completions.len()));
        store::write_json(
            &bridge_sample_path(&ctx.out, ts),
            &BridgeSampleRecord {
                config_hash: ctx.cfg.hash(),
                teacher_seed: ts,
                prompt: BRIDGE_TEACHER_PROMPT.to_string(),
                completions,
            },
        )?;
    }
    worker.shutdown()?;
    Ok(lines)
}

pub fn bridge_sample_path(out: &Path, teacher_seed: u64) -> PathBuf {
    out.join("bridge").join(format!("teacher_{teacher_seed}.json"))
}
