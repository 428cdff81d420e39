//! Command-line entry point.
//!
//! Each command reads an optional JSON config (unknown keys rejected),
//! applies flag overrides, validates everything, runs, and only then writes
//! its outputs, including `resolved_config.json`, under `--out`. Exit codes:
//! 0 success, 1 invalid input or usage, 2 runtime failure.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::curriculum::{run_stage1, run_stage2, StageCfg, TrainError, TrainLog};
use crate::eval::{
    correlations, evaluate_heldout, evaluate_zero_shot, resolve_prompts, score_pair, EvalError,
    HeldOutEval,
};
use crate::linalg::Matrix;
use crate::model::{
    gradcheck_suite, load_checkpoint, save_checkpoint, ClspModel, LossKind, ModelError,
    CHECKPOINT_VERSION,
};
use crate::store::{
    generate_synthetic, load_manifest, prompt_table, validate_dataset, write_manifest, Dataset,
    StoreError, SynthConfig, MANIFEST_VERSION,
};
use crate::sweep::{
    default_stage1, default_stage2, run_sweep, HoldoutSpec, ModelSpec, StagePlan, SweepError,
    SweepSpec, REPORT_VERSION,
};
use crate::verify::{
    read_corpus, verify_corpus, write_decisions, HttpJudge, Item, Judge, RuleSet, Verdict,
    VerifyError, RULES_VERSION,
};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, config or input data; exit code 1.
    Invalid(String),
    /// Failure while running; exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn invalid(e: impl Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { .. } => runtime(e),
            _ => invalid(e),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io { .. } => runtime(e),
            _ => invalid(e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => invalid(e),
            TrainError::Store(s) => s.into(),
            TrainError::Model(m) => m.into(),
            _ => runtime(e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        invalid(e)
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Io { .. } | VerifyError::Judge(_) => runtime(e),
            _ => invalid(e),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Config(_) => invalid(e),
            SweepError::Train { ref source, .. } => match CliError::from_train_ref(source) {
                1 => invalid(e),
                _ => runtime(e),
            },
            SweepError::Eval { .. } => runtime(e),
        }
    }
}

impl CliError {
    fn from_train_ref(e: &TrainError) -> i32 {
        match e {
            TrainError::Config(_) | TrainError::Model(_) => 1,
            TrainError::Store(StoreError::Io { .. }) => 2,
            TrainError::Store(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "clsp",
    about = "Contrastive speech/style-caption training, evaluation and caption verification",
    disable_version_flag = true
)]
struct Cli {
    /// Print the program and file format versions.
    #[arg(long)]
    version: bool,
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic manifest.
    Synth(SynthArgs),
    /// Load a manifest and report task eligibility.
    Validate(ValidateArgs),
    /// Train projection heads.
    Train(TrainArgs),
    /// Held-out retrieval metrics for a checkpoint.
    EvalRetrieval(RetrievalArgs),
    /// Zero-shot classification with caption prompts.
    EvalZeroshot(ZeroShotArgs),
    /// Pearson, Spearman and Kendall tau-b between two score lists.
    EvalCorrelation(CorrelationArgs),
    /// Similarity of one clip and one caption.
    Score(ScoreArgs),
    /// Run the caption verification rules over a JSONL corpus.
    Verify(VerifyArgs),
    /// Train and evaluate a grid of configurations.
    Sweep(SweepArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    clips_per_cluster: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    plan: Option<PlanArg>,
    #[arg(long)]
    stage1_steps: Option<usize>,
    #[arg(long)]
    stage2_steps: Option<usize>,
    /// Batch size for both stages.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlanArg {
    Stage1Only,
    Stage2Only,
    Both,
}

impl From<PlanArg> for StagePlan {
    fn from(p: PlanArg) -> Self {
        match p {
            PlanArg::Stage1Only => StagePlan::Stage1Only,
            PlanArg::Stage2Only => StagePlan::Stage2Only,
            PlanArg::Both => StagePlan::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Split {
    Heldout,
    All,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Evaluate on the held-out split or on every sample.
    #[arg(long, value_enum, default_value = "heldout")]
    split: Split,
    #[arg(long, default_value = "cluster")]
    holdout_tag: String,
    #[arg(long, default_value_t = 0.2)]
    holdout_fraction: f64,
}

#[derive(Debug, Args)]
struct RetrievalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Debug, Args)]
struct ZeroShotArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `label -> [prompt text]` JSON; defaults to `prompts.json` in the manifest directory.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Sample tag holding the gold label.
    #[arg(long, default_value = "cluster")]
    tag: String,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Debug, Args)]
struct CorrelationArgs {
    /// JSON object with equal-length arrays `x` and `y`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    clip_id: String,
    /// Caption row index in the text features.
    #[arg(long, conflicts_with = "caption")]
    caption_row: Option<usize>,
    /// Caption text, matched exactly against the manifest captions.
    #[arg(long)]
    caption: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Rule file (TOML); the built-in rules are used when omitted.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Forward rule-retained captions to this judge endpoint.
    #[arg(long)]
    judge_url: Option<String>,
    #[arg(long, default_value_t = 30)]
    judge_timeout_secs: u64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "stage1")]
    loss: LossArg,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Number of random seeds, starting at `--seed` (default 0).
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Stage1,
    Stage2,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp => 0,
                _ => 1,
            };
        }
    };
    if cli.version {
        print!("{}", version_text());
        return 0;
    }
    let Some(command) = cli.command else {
        eprintln!("no command given; run with --help for usage");
        return 1;
    };
    match run(command, cli.seed) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn version_text() -> String {
    format!(
        "clsp {}\nmanifest format {MANIFEST_VERSION}\ncheckpoint format {CHECKPOINT_VERSION}\nreport format {REPORT_VERSION}\nrule file format {RULES_VERSION}\n",
        env!("CARGO_PKG_VERSION")
    )
}

fn run(command: Command, seed: Option<u64>) -> CliResult {
    match command {
        Command::Synth(a) => synth(a, seed),
        Command::Validate(a) => validate(a),
        Command::Train(a) => train_cmd(a, seed),
        Command::EvalRetrieval(a) => eval_retrieval(a),
        Command::EvalZeroshot(a) => eval_zeroshot(a),
        Command::EvalCorrelation(a) => eval_correlation(a),
        Command::Score(a) => score(a),
        Command::Verify(a) => verify(a),
        Command::Sweep(a) => sweep(a, seed),
        Command::Gradcheck(a) => gradcheck(a, seed),
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn create_out(out: &Path) -> CliResult {
    fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SynthRun {
    seed: u64,
    synth: SynthConfig,
}

fn synth(a: SynthArgs, seed: Option<u64>) -> CliResult {
    let mut cfg: SynthRun = read_config(a.config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = a.clusters {
        cfg.synth.n_clusters = v;
    }
    if let Some(v) = a.clips_per_cluster {
        cfg.synth.clips_per_cluster = v;
    }
    if let Some(v) = a.sigma {
        cfg.synth.noise_sigma = v;
    }
    let d = generate_synthetic(&cfg.synth, cfg.seed)?;
    write_manifest(&d, &a.out)?;
    write_json(&a.out.join("prompts.json"), &prompt_table(&cfg.synth))?;
    write_json(&a.out.join(RESOLVED_CONFIG), &cfg)?;
    println!(
        "wrote {} clips ({} speech rows, {} text rows) to {}",
        d.len(),
        d.speech_features().rows(),
        d.text_features().rows(),
        a.out.display()
    );
    Ok(())
}

// ------------------------------------------------------------- validate

fn validate(a: ValidateArgs) -> CliResult {
    let d = load_manifest(&a.manifest)?;
    let report = validate_dataset(&d);
    print_json(&report);
    if let Some(out) = a.out {
        create_out(&out)?;
        write_json(&out.join("validation.json"), &report)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainRun {
    plan: StagePlan,
    model: ModelSpec,
    stage1: StageCfg,
    stage2: StageCfg,
    /// Train on the split's training side and evaluate on its held-out side.
    holdout: Option<HoldoutSpec>,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self {
            plan: StagePlan::Both,
            model: ModelSpec::default(),
            stage1: default_stage1(),
            stage2: default_stage2(),
            holdout: None,
        }
    }
}

fn apply_seed(model: &mut ModelSpec, stage1: &mut StageCfg, stage2: &mut StageCfg, seed: u64) {
    model.seed = seed;
    stage1.seed = seed;
    stage2.seed = seed.wrapping_add(1);
}

fn check_model_spec(m: &ModelSpec) -> CliResult {
    if m.hidden == 0 || m.d == 0 {
        return Err(invalid("model.hidden and model.d must be >= 1"));
    }
    Ok(())
}

fn check_holdout(h: &HoldoutSpec) -> CliResult {
    if !(h.fraction > 0.0 && h.fraction < 1.0) {
        return Err(invalid("holdout fraction must be in (0, 1)"));
    }
    Ok(())
}

fn train_cmd(a: TrainArgs, seed: Option<u64>) -> CliResult {
    let mut cfg: TrainRun = read_config(a.config.as_deref())?;
    if let Some(p) = a.plan {
        cfg.plan = p.into();
    }
    if let Some(s) = seed {
        apply_seed(&mut cfg.model, &mut cfg.stage1, &mut cfg.stage2, s);
    }
    if let Some(v) = a.stage1_steps {
        cfg.stage1.steps = v;
    }
    if let Some(v) = a.stage2_steps {
        cfg.stage2.steps = v;
    }
    if let Some(v) = a.batch_size {
        cfg.stage1.batch_size = v;
        cfg.stage2.batch_size = v;
    }
    if let Some(v) = a.lambda {
        cfg.stage2.lambda = v;
    }
    check_model_spec(&cfg.model)?;
    if cfg.plan != StagePlan::Stage2Only {
        cfg.stage1.validate()?;
    }
    if cfg.plan != StagePlan::Stage1Only {
        cfg.stage2.validate()?;
    }
    if let Some(h) = &cfg.holdout {
        check_holdout(h)?;
    }

    let d = load_manifest(&a.manifest)?;
    let (train_set, held) = match &cfg.holdout {
        Some(h) => {
            let (tr, held) = d.holdout_split(&h.tag, h.fraction);
            (d.subset(&tr), Some(held))
        }
        None => (d.clone(), None),
    };
    let init = cfg.model.init(&d)?;
    let mut log = TrainLog::default();
    let mut stage1_model = None;
    let model = match cfg.plan {
        StagePlan::Stage1Only => run_stage1(init, &train_set, &cfg.stage1).map(|(m, l)| {
            log.extend(l);
            m
        })?,
        StagePlan::Stage2Only => run_stage2(init, &train_set, &cfg.stage2).map(|(m, l)| {
            log.extend(l);
            m
        })?,
        StagePlan::Both => {
            let (m1, l1) = run_stage1(init, &train_set, &cfg.stage1)?;
            log.extend(l1);
            stage1_model = Some(m1.clone());
            let (m2, l2) = run_stage2(m1, &train_set, &cfg.stage2)?;
            log.extend(l2);
            m2
        }
    };
    let heldout = match &held {
        Some(h) => Some(evaluate_heldout(&model, &d, h).map_err(runtime)?),
        None => None,
    };

    create_out(&a.out)?;
    if let Some(m1) = &stage1_model {
        save_checkpoint(m1, a.out.join("stage1.ckpt"))?;
    }
    save_checkpoint(&model, a.out.join("model.ckpt"))?;
    log.write_jsonl(a.out.join("train_log.jsonl"))?;
    if let Some(e) = &heldout {
        write_json(&a.out.join("heldout_eval.json"), e)?;
        print!("{}", heldout_table(e));
    }
    write_json(&a.out.join(RESOLVED_CONFIG), &cfg)?;
    println!(
        "trained {} steps, final tau {:.5}, outputs in {}",
        log.len(),
        model.tau(),
        a.out.display()
    );
    Ok(())
}

// ----------------------------------------------------------- evaluation

fn load_model_for(path: &Path, d: &Dataset) -> CliResult<ClspModel> {
    let m = load_checkpoint(path, None)?;
    let dims = m.dims();
    if dims.d_in_speech != d.speech_features().dim() || dims.d_in_text != d.text_features().dim() {
        return Err(invalid(format!(
            "checkpoint expects feature dims {}/{}, manifest has {}/{}",
            dims.d_in_speech,
            dims.d_in_text,
            d.speech_features().dim(),
            d.text_features().dim()
        )));
    }
    Ok(m)
}

fn select(d: &Dataset, s: &SplitArgs) -> CliResult<Vec<usize>> {
    match s.split {
        Split::All => Ok((0..d.len()).collect()),
        Split::Heldout => {
            check_holdout(&HoldoutSpec {
                tag: s.holdout_tag.clone(),
                fraction: s.holdout_fraction,
            })?;
            Ok(d.holdout_split(&s.holdout_tag, s.holdout_fraction).1)
        }
    }
}

fn heldout_table(e: &HeldOutEval) -> String {
    let mut out = String::from("pool    direction  R@1     R@5     R@10    mAP@10\n");
    for (pool, r) in [
        ("global", &e.global_s2t),
        ("global", &e.global_t2s),
        ("fine", &e.fine_s2t),
        ("fine", &e.fine_t2s),
    ] {
        let dir = match r.direction {
            crate::eval::Direction::SpeechToText => "s2t",
            crate::eval::Direction::TextToSpeech => "t2s",
        };
        out.push_str(&format!(
            "{pool:<7} {dir:<10} {:<7.4} {:<7.4} {:<7.4} {:.4}\n",
            r.recall(1),
            r.recall(5),
            r.recall(10),
            r.map_at_10
        ));
    }
    out.push_str(&format!("average mAP@10 {:.4}\n", e.average_map()));
    out
}

#[derive(Serialize)]
struct RetrievalOutput<'a> {
    split: Split,
    n_samples: usize,
    average_map_at_10: f64,
    eval: &'a HeldOutEval,
}

fn eval_retrieval(a: RetrievalArgs) -> CliResult {
    let d = load_manifest(&a.manifest)?;
    let model = load_model_for(&a.model, &d)?;
    let idx = select(&d, &a.split)?;
    let e = evaluate_heldout(&model, &d, &idx)?;
    create_out(&a.out)?;
    write_json(
        &a.out.join("retrieval.json"),
        &RetrievalOutput {
            split: a.split.split,
            n_samples: idx.len(),
            average_map_at_10: e.average_map(),
            eval: &e,
        },
    )?;
    print!("{}", heldout_table(&e));
    Ok(())
}

fn eval_zeroshot(a: ZeroShotArgs) -> CliResult {
    let d = load_manifest(&a.manifest)?;
    let model = load_model_for(&a.model, &d)?;
    let prompts_path = a.prompts.unwrap_or_else(|| a.manifest.join("prompts.json"));
    let table: BTreeMap<String, Vec<String>> = read_json(&prompts_path)?;
    let (rows, labels) = resolve_prompts(&d, &table)?;
    let idx = select(&d, &a.split)?;
    let report = evaluate_zero_shot(&model, &d, &idx, &a.tag, &rows, &labels)?;
    create_out(&a.out)?;
    write_json(&a.out.join("zeroshot.json"), &report)?;
    println!("WA {:.4}  UA {:.4}  n {}", report.wa, report.ua, report.n);
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrelationInput {
    x: Vec<f64>,
    y: Vec<f64>,
}

fn eval_correlation(a: CorrelationArgs) -> CliResult {
    let input: CorrelationInput = read_json(&a.input)?;
    let c = correlations(&input.x, &input.y)?;
    create_out(&a.out)?;
    write_json(&a.out.join("correlation.json"), &c)?;
    println!(
        "pearson {:.4}  spearman {:.4}  kendall_tau_b {:.4}  n {}",
        c.pearson, c.spearman, c.kendall_tau_b, c.n
    );
    Ok(())
}

#[derive(Serialize)]
struct ScoreOutput {
    clip_id: String,
    caption_row: usize,
    caption: Option<String>,
    cosine: f64,
    tau: f64,
    logit: f64,
}

fn score(a: ScoreArgs) -> CliResult {
    let d = load_manifest(&a.manifest)?;
    let model = load_model_for(&a.model, &d)?;
    let sample = d
        .sample_by_id(&a.clip_id)
        .ok_or_else(|| invalid(format!("unknown clip_id {:?}", a.clip_id)))?;
    let row = match (a.caption_row, &a.caption) {
        (Some(r), _) => {
            if r >= d.text_features().rows() {
                return Err(invalid(format!(
                    "caption row {r} out of range ({} rows)",
                    d.text_features().rows()
                )));
            }
            r
        }
        (None, Some(text)) => d
            .caption_texts()
            .iter()
            .find(|(_, t)| *t == text)
            .map(|(&r, _)| r)
            .ok_or_else(|| invalid(format!("caption {text:?} not found in the manifest")))?,
        (None, None) => return Err(invalid("give --caption-row or --caption")),
    };
    let s: Matrix = model.embed_speech(&d.speech_features().gather(&[sample.speech_row]))?;
    let t: Matrix = model.embed_text(&d.text_features().gather(&[row]))?;
    let cosine = score_pair(s.row(0), t.row(0))?;
    let out = ScoreOutput {
        clip_id: a.clip_id,
        caption_row: row,
        caption: d.caption_texts().get(&row).cloned(),
        cosine,
        tau: model.tau(),
        logit: cosine / model.tau(),
    };
    print_json(&out);
    if let Some(dir) = a.out {
        create_out(&dir)?;
        write_json(&dir.join("score.json"), &out)?;
    }
    Ok(())
}

// --------------------------------------------------------------- verify

#[derive(Serialize)]
struct VerifySummary {
    captions: usize,
    retained: usize,
    filtered: usize,
    clips: usize,
    clips_filtered: usize,
    /// Captions violating each item.
    by_item: BTreeMap<Item, usize>,
}

fn verify(a: VerifyArgs) -> CliResult {
    let rules = match &a.rules {
        Some(p) => RuleSet::from_toml(
            &fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        )?,
        None => RuleSet::default(),
    };
    let records = read_corpus(&a.corpus)?;
    let judge = a
        .judge_url
        .as_deref()
        .map(|u| HttpJudge::new(u, Duration::from_secs(a.judge_timeout_secs)));
    let decisions = verify_corpus(&records, &rules, judge.as_ref().map(|j| j as &dyn Judge))?;

    let mut by_item = BTreeMap::new();
    let mut clips: BTreeMap<&str, bool> = BTreeMap::new();
    for d in &decisions {
        for i in &d.violated_items {
            *by_item.entry(*i).or_insert(0) += 1;
        }
        *clips.entry(d.clip_id.as_str()).or_insert(false) |= d.violated_items.contains(&Item::Clip);
    }
    let retained = decisions.iter().filter(|d| d.verdict == Verdict::Retain).count();
    let summary = VerifySummary {
        captions: decisions.len(),
        retained,
        filtered: decisions.len() - retained,
        clips: clips.len(),
        clips_filtered: clips.values().filter(|f| **f).count(),
        by_item,
    };
    create_out(&a.out)?;
    write_decisions(&a.out.join("decisions.jsonl"), &decisions)?;
    write_json(&a.out.join("summary.json"), &summary)?;
    write_text(&a.out.join("rules.toml"), &rules.to_config().to_toml())?;
    println!(
        "{} captions: {} retained, {} filtered",
        summary.captions, summary.retained, summary.filtered
    );
    Ok(())
}

// ---------------------------------------------------------------- sweep

fn sweep(a: SweepArgs, seed: Option<u64>) -> CliResult {
    let mut spec: SweepSpec = read_json(&a.spec)?;
    if let Some(s) = seed {
        apply_seed(&mut spec.model, &mut spec.stage1, &mut spec.stage2, s);
    }
    check_model_spec(&spec.model)?;
    spec.configurations()?;
    let d = load_manifest(&a.manifest)?;
    let report = run_sweep(&spec, &d)?;
    let table = report.render_table();
    create_out(&a.out)?;
    write_json(&a.out.join("sweep_report.json"), &report)?;
    write_text(&a.out.join("sweep_report.txt"), &table)?;
    write_json(&a.out.join(RESOLVED_CONFIG), &spec)?;
    print!("{table}");
    Ok(())
}

// ------------------------------------------------------------ gradcheck

#[derive(Serialize)]
struct GradcheckOutput {
    loss: &'static str,
    seeds: Vec<u64>,
    max_relative_error: f64,
    worst_seed: u64,
    worst_parameter: String,
    tolerance: f64,
}

fn gradcheck(a: GradcheckArgs, seed: Option<u64>) -> CliResult {
    if a.seeds == 0 {
        return Err(invalid("--seeds must be >= 1"));
    }
    let (kind, name) = match a.loss {
        LossArg::Stage1 => (LossKind::Stage1, "stage1"),
        LossArg::Stage2 => {
            if !(0.0..=1.0).contains(&a.lambda) {
                return Err(invalid(format!("lambda must be in [0, 1], got {}", a.lambda)));
            }
            (LossKind::Stage2 { lambda: a.lambda }, "stage2")
        }
    };
    let base = seed.unwrap_or(0);
    let seeds: Vec<u64> = (0..a.seeds).map(|k| base.wrapping_add(k)).collect();
    let reports = gradcheck_suite(kind, &seeds, a.n, a.dim, a.h)?;
    let (worst, r) = reports
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.max_relative_error.total_cmp(&y.1.max_relative_error))
        .expect("at least one seed");
    let out = GradcheckOutput {
        loss: name,
        max_relative_error: r.max_relative_error,
        worst_seed: seeds[worst],
        worst_parameter: r.worst_parameter.clone(),
        seeds,
        tolerance: a.tolerance,
    };
    println!(
        "max relative error {:.3e} ({} at seed {})",
        out.max_relative_error, out.worst_parameter, out.worst_seed
    );
    if let Some(dir) = &a.out {
        create_out(dir)?;
        write_json(&dir.join("gradcheck.json"), &out)?;
    }
    if out.max_relative_error >= a.tolerance {
        return Err(runtime(format!(
            "gradient check failed: {:.3e} >= {:.1e}",
            out.max_relative_error, a.tolerance
        )));
    }
    Ok(())
}
