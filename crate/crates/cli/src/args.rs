use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use swapmix_core::augment::AugmentConfig;
use swapmix_core::context::{ContextMode, DEFAULT_IOU_THRESHOLD};
use swapmix_core::pipeline::{PipelineOptions, VisualMode};
use swapmix_core::swapplan::{PlanOptions, DEFAULT_K, DEFAULT_SIMILARITY_THRESHOLD};

#[derive(Debug, Parser)]
#[command(
    name = "swapmix",
    version,
    about = "Measure (and train away) a VQA model's reliance on visual context"
)]
pub struct Cli {
    /// Print the effective configuration as canonical JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan, perturb, answer and score in one run; writes report.{json,txt,csv}, plans.jsonl, answers.jsonl.
    Diagnose(RunArgs),
    /// Write plans.jsonl.
    Plan(RunArgs),
    /// Write SMFX dumps ({question_id}.{pert_id}.smfx) and skipped.jsonl for the plans.
    Perturb(RunArgs),
    /// Score a built-in model on SMFX dumps, or an external answers.jsonl (--answers).
    Evaluate(RunArgs),
    /// Write one augmented SMFX per question plus manifest.jsonl.
    Augment(RunArgs),
    /// Write a bridge job directory for an external model.
    ExportBridge(RunArgs),
    /// Validate a bridge job's answers.jsonl and score it.
    ImportBridge(RunArgs),
    /// Write the synthetic fixture datasets and the golden SMFX file.
    GenFixtures(FixtureArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Diagnose(_) => "diagnose",
            Command::Plan(_) => "plan",
            Command::Perturb(_) => "perturb",
            Command::Evaluate(_) => "evaluate",
            Command::Augment(_) => "augment",
            Command::ExportBridge(_) => "export-bridge",
            Command::ImportBridge(_) => "import-bridge",
            Command::GenFixtures(_) => "gen-fixtures",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Frcnn,
    Perfect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContextArg {
    Paper,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Symbolic,
    Baseline,
    Bridge,
}

impl ModelArg {
    pub fn name(self) -> &'static str {
        match self {
            ModelArg::Symbolic => "symbolic",
            ModelArg::Baseline => "baseline",
            ModelArg::Bridge => "bridge",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scene graph JSON file.
    #[arg(long, value_name = "FILE")]
    pub scene_graphs: Option<PathBuf>,
    /// Question JSON file.
    #[arg(long, value_name = "FILE")]
    pub questions: Option<PathBuf>,
    /// Directory of detector features, one {image_id}.smfx per image (required with --mode frcnn).
    #[arg(long, value_name = "DIR")]
    pub features: Option<PathBuf>,
    /// Word embeddings, one "word v1 v2 ..." per line.
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Swap candidates per context object and kind.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Minimum embedding cosine for a class candidate.
    #[arg(long, default_value_t = DEFAULT_SIMILARITY_THRESHOLD, allow_negative_numbers = true)]
    pub sim_threshold: f64,
    /// Minimum IoU for matching a detection to an annotated object.
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou_threshold: f64,
    /// Root of all randomness.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Visual input: detector features or perfect-sight encodings.
    #[arg(long, value_enum, default_value_t = ModeArg::Frcnn)]
    pub mode: ModeArg,
    /// Which objects count as question-relevant.
    #[arg(long, value_enum, default_value_t = ContextArg::Paper)]
    pub context_def: ContextArg,
    /// Model to diagnose.
    #[arg(long, value_enum, default_value_t = ModelArg::Symbolic)]
    pub model: ModelArg,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "swapmix-out")]
    pub out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Directory of SMFX dumps: written by diagnose and perturb, read by evaluate (perturb and evaluate default to --out).
    #[arg(long, value_name = "DIR")]
    pub dump_features: Option<PathBuf>,
    /// Augmentation: probability of swapping each context object.
    #[arg(long, default_value_t = 0.5)]
    pub p_swap: f64,
    /// Augmentation: probability that a swap is a class swap.
    #[arg(long, default_value_t = 0.5)]
    pub p_class: f64,
    /// Augmentation epoch.
    #[arg(long, default_value_t = 0)]
    pub epoch: u64,
    /// plans.jsonl from the plan stage (perturb, evaluate, export-bridge; planned afresh when omitted by perturb/export-bridge).
    #[arg(long, value_name = "FILE")]
    pub plans: Option<PathBuf>,
    /// External answers.jsonl for evaluate.
    #[arg(long, value_name = "FILE")]
    pub answers: Option<PathBuf>,
    /// Bridge job directory (export-bridge defaults to --out).
    #[arg(long, value_name = "DIR")]
    pub job_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "fixtures")]
    pub out: PathBuf,
}

impl Default for RunArgs {
    fn default() -> Self {
        RunArgs::parse_defaults()
    }
}

impl RunArgs {
    fn parse_defaults() -> Self {
        #[derive(Parser)]
        struct Wrapper {
            #[command(flatten)]
            args: RunArgs,
        }
        Wrapper::parse_from(["swapmix"]).args
    }

    pub fn visual(&self) -> VisualMode {
        match self.mode {
            ModeArg::Frcnn => VisualMode::Frcnn,
            ModeArg::Perfect => VisualMode::Perfect,
        }
    }

    pub fn context_mode(&self) -> ContextMode {
        match self.context_def {
            ContextArg::Paper => ContextMode::Paper,
            ContextArg::Strict => ContextMode::Strict,
        }
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            plan: PlanOptions {
                k: self.k,
                threshold: self.sim_threshold,
                seed: self.seed,
                mode: self.context_mode(),
            },
            iou_threshold: self.iou_threshold,
            visual: self.visual(),
            ..PipelineOptions::default()
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            p_swap: self.p_swap,
            p_class: self.p_class,
            k: self.k,
            threshold: self.sim_threshold,
            seed: self.seed,
            epoch: self.epoch,
        }
    }

    /// Range checks clap cannot express.
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("--k must be at least 1".into());
        }
        if !(-1.0..=1.0).contains(&self.sim_threshold) {
            return Err(format!(
                "--sim-threshold must be in [-1, 1], got {}",
                self.sim_threshold
            ));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) || self.iou_threshold == 0.0 {
            return Err(format!(
                "--iou-threshold must be in (0, 1], got {}",
                self.iou_threshold
            ));
        }
        for (flag, p) in [("--p-swap", self.p_swap), ("--p-class", self.p_class)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{flag} must be in [0, 1], got {p}"));
            }
        }
        Ok(())
    }

    pub fn config_json(&self) -> Value {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        json!({
            "scene_graphs": path(&self.scene_graphs),
            "questions": path(&self.questions),
            "features": path(&self.features),
            "embeddings": path(&self.embeddings),
            "k": self.k,
            "sim_threshold": self.sim_threshold,
            "iou_threshold": self.iou_threshold,
            "seed": self.seed,
            "mode": self.visual().to_string(),
            "context_def": self.context_mode().to_string(),
            "model": self.model.name(),
            "out": self.out.display().to_string(),
            "jobs": self.jobs,
            "dump_features": path(&self.dump_features),
            "p_swap": self.p_swap,
            "p_class": self.p_class,
            "epoch": self.epoch,
            "plans": path(&self.plans),
            "answers": path(&self.answers),
            "job_dir": path(&self.job_dir),
        })
    }
}

/// Canonical JSON: sorted keys, two-space indent, trailing newline.
pub fn print_config(command: Option<&Command>) -> String {
    let config = match command {
        None => {
            let mut v = RunArgs::default().config_json();
            v["command"] = Value::Null;
            v
        }
        Some(Command::GenFixtures(f)) => {
            json!({ "command": "gen-fixtures", "out": f.out.display().to_string() })
        }
        Some(
            c @ (Command::Diagnose(a)
            | Command::Plan(a)
            | Command::Perturb(a)
            | Command::Evaluate(a)
            | Command::Augment(a)
            | Command::ExportBridge(a)
            | Command::ImportBridge(a)),
        ) => {
            let mut v = a.config_json();
            v["command"] = json!(c.name());
            v
        }
    };
    let mut s = serde_json::to_string_pretty(&config).expect("config serializes");
    s.push('\n');
    s
}
