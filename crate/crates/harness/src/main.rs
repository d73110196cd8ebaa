use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coe_core::dataset::DistractorPolicy;
use coe_core::metrics::BoxCoverage;
use coe_harness::commands;
use coe_harness::config::Phase;
use coe_harness::{Result, RunConfig};

/// Evidence-chain QA harness: datasets, candidate sets, training data,
/// evaluation and scoring.
#[derive(Debug, Parser)]
#[command(name = "coe", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pool: Option<PathBuf>,
    #[arg(long, global = true)]
    candidates: Option<PathBuf>,
    #[arg(long, global = true)]
    predictions: Option<PathBuf>,
    #[arg(long, short = 'o', global = true)]
    output_dir: Option<PathBuf>,
    /// Run seed for candidate sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short = 'k', global = true)]
    k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    #[arg(long, global = true)]
    iou_threshold: Option<f64>,
    /// Disable the predicted-center-inside-gold alternative.
    #[arg(long, global = true)]
    no_center_rule: bool,
    /// Require IoU strictly above the threshold.
    #[arg(long, global = true)]
    exclusive_threshold: bool,
    #[arg(long, global = true, value_enum)]
    coverage: Option<CoverageArg>,
    /// Chat endpoint base URL (requests go to <url>/chat/completions).
    #[arg(long, global = true)]
    endpoint_url: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    max_retries: Option<u32>,
    #[arg(long, global = true)]
    timeout_secs: Option<f64>,
    #[arg(long, global = true)]
    webdriver_url: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    SameGroup,
    GlobalPool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CoverageArg {
    AllGold,
    AnyGold,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PhaseArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Capture pages (optional) and ground supporting facts into a dataset.
    Build {
        #[arg(long)]
        pending: Option<PathBuf>,
        #[arg(long)]
        snapshots: Option<PathBuf>,
        /// Tab-separated doc_id and URL per line, captured before annotating.
        #[arg(long)]
        urls: Option<PathBuf>,
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long)]
        split_seed: Option<u64>,
    },
    /// Build seeded top-k candidate sets.
    Candidates,
    /// Emit phase-1 / phase-2 training samples.
    EmitTraining {
        #[arg(long, value_enum)]
        phase: Option<PhaseArg>,
        #[arg(long)]
        training_seed: Option<u64>,
        /// Shuffle candidate order in phase-2 samples.
        #[arg(long)]
        permute: bool,
        /// Turn geometric augmentation off.
        #[arg(long)]
        no_augment: bool,
        /// Extra phase-2 variants at these longest sides.
        #[arg(long = "resolution")]
        resolutions: Vec<u32>,
    },
    /// Query the model endpoint and score its answers.
    Evaluate,
    /// Re-score stored predictions.
    Score,
    /// Dataset statistics.
    Stats,
    /// Draw gold and predicted boxes for one question.
    Overlay {
        #[arg(long)]
        question_id: String,
    },
}

fn apply(cfg: &mut RunConfig, c: Common) {
    macro_rules! set {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value {
                $field = v;
            }
        };
    }
    if c.dataset.is_some() {
        cfg.dataset = c.dataset;
    }
    if c.pool.is_some() {
        cfg.pool = c.pool;
    }
    if c.candidates.is_some() {
        cfg.candidates = c.candidates;
    }
    if c.predictions.is_some() {
        cfg.predictions = c.predictions;
    }
    set!(cfg.output_dir, c.output_dir);
    set!(cfg.candidate_seed, c.seed);
    set!(cfg.k, c.k);
    set!(
        cfg.policy,
        c.policy.map(|p| match p {
            PolicyArg::SameGroup => DistractorPolicy::SameGroup,
            PolicyArg::GlobalPool => DistractorPolicy::GlobalPool,
        })
    );
    set!(cfg.concurrency, c.concurrency);
    set!(cfg.matching.iou_threshold, c.iou_threshold);
    if c.no_center_rule {
        cfg.matching.center_rule_enabled = false;
    }
    if c.exclusive_threshold {
        cfg.matching.threshold_inclusive = false;
    }
    set!(
        cfg.matching.coverage,
        c.coverage.map(|v| match v {
            CoverageArg::AllGold => BoxCoverage::AllGold,
            CoverageArg::AnyGold => BoxCoverage::AnyGold,
        })
    );
    set!(cfg.endpoint.base_url, c.endpoint_url);
    set!(cfg.endpoint.model, c.model);
    set!(cfg.endpoint.max_retries, c.max_retries);
    set!(cfg.endpoint.timeout_secs, c.timeout_secs);
    set!(cfg.capture.webdriver_url, c.webdriver_url);
}

fn run(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply(&mut cfg, cli.common);
    let out = cfg.output_dir.display().to_string();
    match cli.command {
        Command::Build {
            pending,
            snapshots,
            urls,
            test_fraction,
            split_seed,
        } => {
            let b = &mut cfg.build;
            b.pending = pending.or(b.pending.take());
            b.snapshots = snapshots.or(b.snapshots.take());
            b.urls = urls.or(b.urls.take());
            b.test_fraction = test_fraction.or(b.test_fraction);
            b.split_seed = split_seed.unwrap_or(b.split_seed);
            let r = commands::cmd_build(&cfg)?;
            Ok(format!(
                "captured {} ({} failed); accepted {} records, rejected {}; wrote {out}",
                r.captured, r.capture_failures, r.accepted, r.rejected
            ))
        }
        Command::Candidates => {
            let n = commands::cmd_candidates(&cfg)?;
            Ok(format!("wrote {n} candidate sets to {out}/candidates.jsonl"))
        }
        Command::EmitTraining {
            phase,
            training_seed,
            permute,
            no_augment,
            resolutions,
        } => {
            if let Some(p) = phase {
                cfg.training.phase = match p {
                    PhaseArg::One => Phase::One,
                    PhaseArg::Two => Phase::Two,
                    PhaseArg::Both => Phase::Both,
                };
            }
            cfg.training.seed = training_seed.unwrap_or(cfg.training.seed);
            if permute {
                cfg.augment.permute_candidates = true;
            }
            if no_augment {
                let keep = cfg.augment.clone();
                cfg.augment = coe_core::augment::AugConfig {
                    permute_candidates: keep.permute_candidates,
                    image_dir: keep.image_dir,
                    ..coe_core::augment::AugConfig::none()
                };
            }
            if !resolutions.is_empty() {
                cfg.training.resolutions = resolutions;
            }
            let samples = commands::cmd_emit_training(&cfg)?;
            Ok(format!("wrote {} samples to {out}/training.jsonl", samples.len()))
        }
        Command::Evaluate => {
            let report = commands::cmd_evaluate(&cfg)?;
            Ok(report.summary())
        }
        Command::Score => {
            let run = commands::cmd_score(&cfg)?;
            let mut text = run.report.summary();
            if !run.unknown_questions.is_empty() {
                text.push_str(&format!(
                    "\n{} predictions name unknown questions (see {out}/unknown_questions.txt)\n",
                    run.unknown_questions.len()
                ));
            }
            Ok(text)
        }
        Command::Stats => {
            let stats = commands::cmd_stats(&cfg)?;
            Ok(commands::stats_table(&stats))
        }
        Command::Overlay { question_id } => {
            let paths = commands::cmd_overlay(&cfg, &question_id)?;
            Ok(format!("wrote {} hop overlays for {question_id} under {out}", paths.len()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
