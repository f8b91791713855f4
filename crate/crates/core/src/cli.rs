//! The `lrlm` command line.
//!
//! Every subcommand resolves one JSON configuration from three layers, later
//! layers winning key by key: built-in defaults, an optional `--config` file,
//! then command-line flags. Flags map onto configuration keys one to one (for
//! example `--epochs` sets `train.epochs`). The resolved configuration is
//! stored in the `manifest.json` each command writes to its output directory,
//! and a manifest is itself accepted as a `--config` file, so any run can be
//! repeated from its manifest alone.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! failures while running.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::error::{Error, Result};
use crate::eval::{
    align_affine, ced_to_csv, evaluate_model, format_table, predict_landmarks, write_summaries, CanonicalTemplate,
    Normalizer, SCHEMA_LINE,
};
use crate::networks::{Profile, UNet};
use crate::synth::io::{annotation_line, export_dataset, list_pngs, load_dataset, load_image_resized, load_images, load_split};
use crate::synth::{derive_seed, generate_dataset, subsampled_split, FaceSample, SynthConfig};
use crate::tensor::Tensor;
use crate::training::{
    generate_lr_split, load_g1, load_g2, run_ablation, train_high_to_low, train_landmarks, AblationConfig, LandmarkData,
    RunOptions, Setting, TrainConfig,
};
use crate::viz::draw_landmarks;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

/// Name of the manifest every command writes into its output directory.
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "lrlm", version, about = "Low-resolution facial landmark detection: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic face benchmark.
    Synth(SynthArgs),
    /// Train the high-to-low GAN (`h2l`) or a landmark network (`lm`).
    Train(TrainArgs),
    /// Evaluate a landmark checkpoint on a labelled split.
    Eval(EvalArgs),
    /// Run the S1–S4 ablation end to end.
    Ablate(AblateArgs),
    /// Predict landmarks for images and draw overlays.
    Infer(InferArgs),
    /// Detect landmarks and warp images onto a canonical template.
    Align(AlignArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON configuration file (or a manifest of an earlier run).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<Profile>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Labelled training faces.
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    /// Size of the unlabelled real-LR pool.
    #[arg(long)]
    pub real_lr: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// High-to-low generator and its discriminator.
    H2l,
    /// Landmark networks of one setting.
    Lm,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub stage: Option<Stage>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Benchmark root written by `lrlm synth` (reads `train/` and `val/`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// s1, s2, s3, s4 or hrld (landmark stage only).
    #[arg(long)]
    pub setting: Option<Setting>,
    /// Directory of unlabelled real LR images (h2l and s4).
    #[arg(long)]
    pub real_lr: Option<PathBuf>,
    /// Stage-1 checkpoint (s2, s3, s4).
    #[arg(long)]
    pub g1: Option<PathBuf>,
    /// Continue from this checkpoint of the same run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many iterations in total.
    #[arg(long)]
    pub stop_after: Option<u64>,
    #[arg(long)]
    pub profile: Option<Profile>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Iterations between intermediate checkpoints (0: only at the end).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub augment: Option<bool>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Landmark checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Labelled split directory (images plus `annotations.txt`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// bbox or interpupil.
    #[arg(long)]
    pub normalizer: Option<Normalizer>,
    /// Row label in the metrics table (default: the checkpoint's setting).
    #[arg(long)]
    pub setting: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Benchmark root written by `lrlm synth`; generated in memory when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<Profile>,
    /// Seed of the data and both stages.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    /// Size of the unlabelled real-LR pool.
    #[arg(long)]
    pub real_lr: Option<usize>,
    #[arg(long)]
    pub normalizer: Option<Normalizer>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Image files or directories of PNGs.
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Side of the aligned crops (default: the model's input size).
    #[arg(long)]
    pub template_size: Option<usize>,
    /// Image files or directories of PNGs.
    pub inputs: Vec<PathBuf>,
}

/// Resolved configuration of `lrlm synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRun {
    pub out: PathBuf,
    pub synth: SynthConfig,
}

/// Resolved configuration of `lrlm train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub stage: Stage,
    pub out: PathBuf,
    pub data: PathBuf,
    #[serde(default)]
    pub setting: Option<Setting>,
    #[serde(default)]
    pub real_lr: Option<PathBuf>,
    #[serde(default)]
    pub g1: Option<PathBuf>,
    #[serde(default)]
    pub resume: Option<PathBuf>,
    #[serde(default)]
    pub stop_after: Option<u64>,
    pub train: TrainConfig,
}

/// Resolved configuration of `lrlm eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub out: PathBuf,
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub normalizer: Normalizer,
    #[serde(default)]
    pub setting: Option<String>,
}

/// Resolved configuration of `lrlm ablate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateRun {
    pub out: PathBuf,
    #[serde(default)]
    pub data: Option<PathBuf>,
    pub ablation: AblationConfig,
}

/// Resolved configuration of `lrlm infer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferRun {
    pub out: PathBuf,
    pub checkpoint: PathBuf,
    pub inputs: Vec<PathBuf>,
}

/// Resolved configuration of `lrlm align`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignRun {
    pub out: PathBuf,
    pub checkpoint: PathBuf,
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub template_size: Option<usize>,
}

/// Record of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub command: String,
    /// The fully resolved configuration; feed it back with `--config`.
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 over the bytes of every input file, in path order.
    pub input_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<PathBuf>,
    /// Set when the command failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Parses `args` (program name first), runs the command and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    ExitCode::from(run_code(args))
}

/// As [`run`], returning the raw exit code.
pub fn run_code<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

fn execute(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Synth(a) => dispatch("synth", resolve_synth(&a), |r| run_synth(r)),
        Command::Train(a) => dispatch("train", resolve_train(&a), |r| run_train(r)),
        Command::Eval(a) => dispatch("eval", resolve_eval(&a), |r| run_eval(r)),
        Command::Ablate(a) => dispatch("ablate", resolve_ablate(&a), |r| run_ablate(r)),
        Command::Infer(a) => dispatch("infer", resolve_infer(&a), |r| run_infer(r)),
        Command::Align(a) => dispatch("align", resolve_align(&a), |r| run_align(r)),
    }
}

/// What a finished command reports for its manifest.
#[derive(Default)]
struct Report {
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

trait HasOut {
    fn out(&self) -> &Path;
}

macro_rules! has_out {
    ($($t:ty),*) => {$(impl HasOut for $t { fn out(&self) -> &Path { &self.out } })*};
}
has_out!(SynthRun, TrainRun, EvalRun, AblateRun, InferRun, AlignRun);

fn dispatch<R: Serialize + HasOut>(
    command: &str,
    resolved: Result<R>,
    body: impl FnOnce(&R) -> Result<Report>,
) -> std::result::Result<(), Failure> {
    let run = resolved.map_err(Failure::Usage)?;
    let config = serde_json::to_value(&run).map_err(|e| Failure::Usage(e.into()))?;
    let out = run.out().to_path_buf();
    fs::create_dir_all(&out).map_err(|e| Failure::Runtime(Error::io(&out, e)))?;
    let started = unix_now();
    let (report, error) = match body(&run) {
        Ok(r) => (r, None),
        Err(e) => (Report::default(), Some(e)),
    };
    let manifest = RunManifest {
        schema: 1,
        command: command.to_string(),
        config,
        seeds: report.seeds,
        input_hash: hash_inputs(&report.inputs).map_err(Failure::Runtime)?,
        started_unix: started,
        finished_unix: unix_now(),
        outputs: report.outputs,
        error: error.as_ref().map(|e| e.to_string()),
    };
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::Runtime(e.into()))?;
    write_atomic(&out.join(MANIFEST), &bytes).map_err(Failure::Runtime)?;
    error.map_or(Ok(()), |e| Err(Failure::Runtime(e)))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// SHA-256 over `(path, bytes)` of every file under `inputs`, sorted by path.
pub fn hash_inputs(inputs: &[PathBuf]) -> Result<String> {
    let mut files = Vec::new();
    for p in inputs {
        collect_files(p, &mut files)?;
    }
    files.sort();
    files.dedup();
    let mut h = Sha256::new();
    for f in &files {
        let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
        h.update(f.to_string_lossy().as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(p: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if p.is_dir() {
        for e in fs::read_dir(p).map_err(|e| Error::io(p, e))? {
            collect_files(&e.map_err(|e| Error::io(p, e))?.path(), out)?;
        }
    } else if p.is_file() {
        out.push(p.to_path_buf());
    }
    Ok(())
}

// ---- configuration layers ----

/// Recursively overlays `top` onto `base`; objects merge key by key, anything else replaces.
pub fn merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, t) => *b = t.clone(),
    }
}

/// A configuration file, or the `config` of a manifest.
pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
    }
    match (v.get("schema"), v.get("command"), v.get("config")) {
        (Some(_), Some(_), Some(c)) => Ok(c.clone()),
        _ => Ok(v),
    }
}

/// Flag values as a sparse JSON object; `None` flags are left out.
#[derive(Default)]
struct Flags(Map<String, Value>);

impl Flags {
    fn set<T: Serialize>(&mut self, path: &str, v: &Option<T>) -> Result<()> {
        if let Some(v) = v {
            let mut node = &mut self.0;
            let keys: Vec<&str> = path.split('.').collect();
            for k in &keys[..keys.len() - 1] {
                node = node
                    .entry(k.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("only objects on the path");
            }
            node.insert(keys[keys.len() - 1].to_string(), serde_json::to_value(v)?);
        }
        Ok(())
    }

    fn value(self) -> Value {
        Value::Object(self.0)
    }
}

fn lookup<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(v, |node, k| node.get(k))
}

/// Profile from the flags, else the file, else desk.
fn profile_of(flags: &Value, file: &Value, path: &str) -> Result<Profile> {
    match lookup(flags, path).or_else(|| lookup(file, path)) {
        Some(v) => Ok(serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("{path}: {e}")))?),
        None => Ok(Profile::Desk),
    }
}

fn layered<T: DeserializeOwned>(defaults: Value, file: &Value, flags: &Value) -> Result<T> {
    let mut v = defaults;
    merge(&mut v, file);
    merge(&mut v, flags);
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}

fn file_layer(path: &Option<PathBuf>) -> Result<Value> {
    match path {
        Some(p) => read_config_file(p),
        None => Ok(json!({})),
    }
}

pub fn resolve_synth(a: &SynthArgs) -> Result<SynthRun> {
    let file = file_layer(&a.config)?;
    let mut f = Flags::default();
    f.set("out", &a.out)?;
    f.set("synth.profile", &a.profile)?;
    f.set("synth.seed", &a.seed)?;
    f.set("synth.train", &a.train)?;
    f.set("synth.val", &a.val)?;
    f.set("synth.test", &a.test)?;
    f.set("synth.real_lr", &a.real_lr)?;
    let flags = f.value();
    let profile = profile_of(&flags, &file, "synth.profile")?;
    let run: SynthRun = layered(json!({ "synth": SynthConfig::for_profile(profile) }), &file, &flags)?;
    run.synth.validate()?;
    Ok(run)
}

pub fn resolve_train(a: &TrainArgs) -> Result<TrainRun> {
    let file = file_layer(&a.config)?;
    let mut f = Flags::default();
    f.set("stage", &a.stage)?;
    f.set("out", &a.out)?;
    f.set("data", &a.data)?;
    f.set("setting", &a.setting)?;
    f.set("real_lr", &a.real_lr)?;
    f.set("g1", &a.g1)?;
    f.set("resume", &a.resume)?;
    f.set("stop_after", &a.stop_after)?;
    f.set("train.profile", &a.profile)?;
    f.set("train.seed", &a.seed)?;
    f.set("train.epochs", &a.epochs)?;
    f.set("train.batch_size", &a.batch_size)?;
    f.set("train.checkpoint_every", &a.checkpoint_every)?;
    f.set("train.augment", &a.augment)?;
    let flags = f.value();
    let profile = profile_of(&flags, &file, "train.profile")?;
    let run: TrainRun = layered(json!({ "train": TrainConfig::for_profile(profile) }), &file, &flags)?;
    run.train.validate()?;
    match run.stage {
        Stage::H2l if run.setting.is_some() => {
            return Err(Error::Config("--setting only applies to `train lm`".into()));
        }
        Stage::Lm if run.setting.is_none() => {
            return Err(Error::Config("`train lm` needs --setting (s1, s2, s3, s4 or hrld)".into()));
        }
        _ => {}
    }
    Ok(run)
}

pub fn resolve_eval(a: &EvalArgs) -> Result<EvalRun> {
    let file = file_layer(&a.config)?;
    let mut f = Flags::default();
    f.set("out", &a.out)?;
    f.set("checkpoint", &a.checkpoint)?;
    f.set("data", &a.data)?;
    f.set("normalizer", &a.normalizer)?;
    f.set("setting", &a.setting)?;
    layered(json!({ "normalizer": Normalizer::Bbox }), &file, &f.value())
}

pub fn resolve_ablate(a: &AblateArgs) -> Result<AblateRun> {
    let file = file_layer(&a.config)?;
    let mut f = Flags::default();
    f.set("out", &a.out)?;
    f.set("data", &a.data)?;
    f.set("ablation.synth.profile", &a.profile)?;
    f.set("ablation.stage1.profile", &a.profile)?;
    f.set("ablation.stage2.profile", &a.profile)?;
    f.set("ablation.synth.seed", &a.seed)?;
    f.set("ablation.stage1.seed", &a.seed)?;
    f.set("ablation.stage2.seed", &a.seed)?;
    f.set("ablation.stage1.epochs", &a.stage1_epochs)?;
    f.set("ablation.stage2.epochs", &a.stage2_epochs)?;
    f.set("ablation.synth.train", &a.train)?;
    f.set("ablation.synth.val", &a.val)?;
    f.set("ablation.synth.test", &a.test)?;
    f.set("ablation.synth.real_lr", &a.real_lr)?;
    f.set("ablation.normalizer", &a.normalizer)?;
    let flags = f.value();
    let profile = profile_of(&flags, &file, "ablation.synth.profile")?;
    let run: AblateRun = layered(json!({ "ablation": AblationConfig::for_profile(profile) }), &file, &flags)?;
    run.ablation.validate()?;
    Ok(run)
}

fn inputs_layer(inputs: &[PathBuf]) -> Option<Vec<PathBuf>> {
    (!inputs.is_empty()).then(|| inputs.to_vec())
}

pub fn resolve_infer(a: &InferArgs) -> Result<InferRun> {
    let file = file_layer(&a.config)?;
    let mut f = Flags::default();
    f.set("out", &a.out)?;
    f.set("checkpoint", &a.checkpoint)?;
    f.set("inputs", &inputs_layer(&a.inputs))?;
    let run: InferRun = layered(json!({}), &file, &f.value())?;
    if run.inputs.is_empty() {
        return Err(Error::Config("no input images given".into()));
    }
    Ok(run)
}

pub fn resolve_align(a: &AlignArgs) -> Result<AlignRun> {
    let file = file_layer(&a.config)?;
    let mut f = Flags::default();
    f.set("out", &a.out)?;
    f.set("checkpoint", &a.checkpoint)?;
    f.set("template_size", &a.template_size)?;
    f.set("inputs", &inputs_layer(&a.inputs))?;
    let run: AlignRun = layered(json!({}), &file, &f.value())?;
    if run.inputs.is_empty() {
        return Err(Error::Config("no input images given".into()));
    }
    if run.template_size.is_some_and(|s| s < 2) {
        return Err(Error::Config("template size must be at least 2".into()));
    }
    Ok(run)
}

// ---- commands ----

fn run_synth(r: &SynthRun) -> Result<Report> {
    let data = generate_dataset(&r.synth)?;
    export_dataset(&r.out, &data)?;
    log::info!(
        "wrote {} train, {} val, {} test faces and {} real LR images to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.real_lr.len(),
        r.out.display()
    );
    Ok(Report {
        seeds: BTreeMap::from([("synth".to_string(), r.synth.seed)]),
        inputs: Vec::new(),
        outputs: crate::synth::io::SPLITS.iter().map(|s| r.out.join(s)).collect(),
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Missing(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::load(path)
}

fn run_train(r: &TrainRun) -> Result<Report> {
    let resume = r.resume.as_deref().map(load_checkpoint).transpose()?;
    let opts = RunOptions {
        out_dir: Some(r.out.clone()),
        resume,
        stop_after: r.stop_after,
        ..Default::default()
    };
    let mut inputs = vec![r.data.join("train")];
    inputs.extend(r.resume.clone());
    let seeds = BTreeMap::from([("train".to_string(), r.train.seed)]);
    match r.stage {
        Stage::H2l => {
            let real_dir = r
                .real_lr
                .as_ref()
                .ok_or_else(|| Error::Missing("high-to-low training needs unlabelled real LR images (--real-lr)".into()))?;
            let hr: Vec<Tensor<f32>> = load_split(&r.data.join("train"))?.into_iter().map(|s| s.image).collect();
            let real = load_images(real_dir)?;
            train_high_to_low(&r.train, &hr, &real, &opts)?;
            inputs.push(real_dir.clone());
            Ok(Report {
                seeds,
                inputs,
                outputs: vec![r.out.join("stage1.ckpt"), r.out.join("stage1_log.csv")],
            })
        }
        Stage::Lm => {
            let setting = r.setting.expect("checked while resolving");
            // prerequisites first, before any data is read
            if setting.uses_d3() && r.real_lr.is_none() {
                return Err(Error::Missing(format!("setting {setting} needs unlabelled real LR images (--real-lr)")));
            }
            let mut g1 = match (setting, &r.g1) {
                (Setting::S1 | Setting::HrLd, _) => None,
                (_, Some(p)) => {
                    inputs.push(p.clone());
                    Some(load_g1(&load_checkpoint(p)?)?)
                }
                (_, None) => {
                    return Err(Error::Missing(format!(
                        "setting {setting} trains on generated LR images and needs a stage-1 checkpoint (--g1)"
                    )))
                }
            };
            let train = load_split(&r.data.join("train"))?;
            let val_dir = r.data.join("val");
            let val = if val_dir.join(crate::synth::io::ANNOTATIONS).exists() {
                inputs.push(val_dir.clone());
                load_split(&val_dir)?
            } else {
                Vec::new()
            };
            let factor = r.train.profile.factor();
            let (labelled, monitor) = match (setting, g1.as_mut()) {
                (Setting::S1, _) => (subsampled_split(&train, factor)?, subsampled_split(&val, factor)?),
                (Setting::HrLd, _) => (train, val),
                (_, Some(g1)) => (
                    generate_lr_split(g1, &train, derive_seed(r.train.seed, 20, 0))?,
                    generate_lr_split(g1, &val, derive_seed(r.train.seed, 20, 1))?,
                ),
                (_, None) => unreachable!("generator loaded above"),
            };
            let real = match (&r.real_lr, setting.uses_d3()) {
                (Some(dir), true) => {
                    inputs.push(dir.clone());
                    load_images(dir)?
                }
                _ => Vec::new(),
            };
            let data = LandmarkData {
                labelled: &labelled,
                real_lr: &real,
                monitor: (!monitor.is_empty()).then_some(&monitor[..]),
            };
            train_landmarks(&r.train, setting, data, &opts)?;
            let stem = setting.name().to_ascii_lowercase();
            Ok(Report {
                seeds,
                inputs,
                outputs: vec![r.out.join(format!("{stem}.ckpt")), r.out.join(format!("{stem}_log.csv"))],
            })
        }
    }
}

fn checkpoint_setting(ck: &Checkpoint) -> String {
    ck.metadata["setting"]
        .as_str()
        .and_then(|s| s.parse::<Setting>().ok())
        .map(|s| s.name().to_string())
        .unwrap_or_else(|| "model".to_string())
}

fn run_eval(r: &EvalRun) -> Result<Report> {
    let ck = load_checkpoint(&r.checkpoint)?;
    let mut g2 = load_g2(&ck)?;
    let samples = load_split(&r.data)?;
    let label = r.setting.clone().unwrap_or_else(|| checkpoint_setting(&ck));
    let e = evaluate_model(&mut g2, &samples, r.normalizer, &label)?;
    print!("{}", format_table(std::slice::from_ref(&e.summary)));
    let metrics = r.out.join("metrics.csv");
    let ced = r.out.join("ced.csv");
    write_summaries(&metrics, std::slice::from_ref(&e.summary))?;
    write_atomic(&ced, ced_to_csv(&e.ced).as_bytes())?;
    Ok(Report {
        seeds: BTreeMap::new(),
        inputs: vec![r.checkpoint.clone(), r.data.clone()],
        outputs: vec![metrics, ced],
    })
}

/// Overlays drawn per setting by `lrlm ablate`.
const ABLATION_OVERLAYS: usize = 8;

fn run_ablate(r: &AblateRun) -> Result<Report> {
    let cfg = &r.ablation;
    let data = match &r.data {
        Some(root) => load_dataset(root)?,
        None => generate_dataset(&cfg.synth)?,
    };
    let mut outcome = run_ablation(cfg, &data, Some(&r.out))?;
    print!("generated LR test split\n{}", format_table(&outcome.report.generated));
    print!("real LR test split\n{}", format_table(&outcome.report.real_lr));
    let mut outputs = vec![r.out.join("ablation.csv"), r.out.join("ablation_real_lr.csv")];
    let shown = &outcome.generated_test[..ABLATION_OVERLAYS.min(outcome.generated_test.len())];
    let images: Vec<Tensor<f32>> = shown.iter().map(|s| s.image.clone()).collect();
    for m in &mut outcome.models {
        let dir = r.out.join("overlays").join(m.setting.name().to_ascii_lowercase());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let k = m.keypoints();
        for (i, pred) in predict_landmarks(&mut m.g2, &images, k)?.iter().enumerate() {
            let pts: Vec<[f64; 2]> = pred.iter().map(|d| d.point).collect();
            let vis: Vec<bool> = pred.iter().map(|d| d.visible).collect();
            let path = dir.join(format!("{i:05}.png"));
            draw_landmarks(&images[i], &pts, &vis)?.save(&path)?;
        }
        outputs.push(dir);
    }
    let mut seeds = BTreeMap::from([
        ("synth".to_string(), cfg.synth.seed),
        ("stage1".to_string(), cfg.stage1.seed),
    ]);
    for s in Setting::LADDER {
        seeds.insert(s.name().to_string(), cfg.stage2.seed);
    }
    Ok(Report {
        seeds,
        inputs: r.data.iter().cloned().collect(),
        outputs,
    })
}

/// Input images in command-line order, directories expanded to their sorted PNGs.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(list_pngs(p)?);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Unique output stems: `face`, `face-1`, … for repeated file stems.
fn output_stems(paths: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
            let n = seen.entry(stem.clone()).or_insert(0);
            let name = if *n == 0 { stem.clone() } else { format!("{stem}-{n}") };
            *n += 1;
            name
        })
        .collect()
}

struct Loaded {
    stems: Vec<String>,
    images: Vec<Tensor<f32>>,
}

/// Decodes every input at the model's input size, skipping undecodable files with a warning.
fn load_inputs(paths: &[PathBuf], side: usize) -> Result<Loaded> {
    let stems = output_stems(paths);
    let mut loaded = Loaded {
        stems: Vec::new(),
        images: Vec::new(),
    };
    for (p, stem) in paths.iter().zip(stems) {
        match load_image_resized(p, side) {
            Ok(t) => {
                loaded.stems.push(stem);
                loaded.images.push(t);
            }
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    if loaded.images.is_empty() {
        return Err(Error::Input("none of the input images could be decoded".into()));
    }
    Ok(loaded)
}

fn model_and_inputs(checkpoint: &Path, inputs: &[PathBuf]) -> Result<(UNet<f32>, Vec<PathBuf>, Loaded)> {
    let g2 = load_g2(&load_checkpoint(checkpoint)?)?;
    let paths = expand_inputs(inputs)?;
    let loaded = load_inputs(&paths, g2.spec.size)?;
    Ok((g2, paths, loaded))
}

fn run_infer(r: &InferRun) -> Result<Report> {
    let (mut g2, paths, loaded) = model_and_inputs(&r.checkpoint, &r.inputs)?;
    let k = g2.spec.out_channels - 1;
    let preds = predict_landmarks(&mut g2, &loaded.images, k)?;
    let overlays = r.out.join("overlays");
    fs::create_dir_all(&overlays).map_err(|e| Error::io(&overlays, e))?;
    let side = g2.spec.size as f64;
    let mut text = String::new();
    for ((stem, img), pred) in loaded.stems.iter().zip(&loaded.images).zip(&preds) {
        let sample = FaceSample {
            image: img.clone(),
            landmarks: pred.iter().map(|d| d.point).collect(),
            visible: pred.iter().map(|d| d.visible).collect(),
            bbox: [0.0, 0.0, side, side],
        };
        let name = format!("{stem}.png");
        crate::synth::io::save_png(&r.out.join(&name), img)?;
        draw_landmarks(img, &sample.landmarks, &sample.visible)?.save(overlays.join(&name))?;
        text.push_str(&annotation_line(&name, &sample));
        text.push('\n');
    }
    let ann = r.out.join(crate::synth::io::ANNOTATIONS);
    write_atomic(&ann, text.as_bytes())?;
    log::info!("predicted {} of {} images", preds.len(), paths.len());
    Ok(Report {
        seeds: BTreeMap::new(),
        inputs: std::iter::once(r.checkpoint.clone()).chain(paths).collect(),
        outputs: vec![ann, overlays],
    })
}

/// Header of the per-image transform sidecar written by `lrlm align`.
pub const TRANSFORM_HEADER: &str = "file,a11,a12,a13,a21,a22,a23,residual";

fn run_align(r: &AlignRun) -> Result<Report> {
    let (mut g2, paths, loaded) = model_and_inputs(&r.checkpoint, &r.inputs)?;
    let k = g2.spec.out_channels - 1;
    let template = CanonicalTemplate::average_face(k, r.template_size.unwrap_or(g2.spec.size))?;
    let preds = predict_landmarks(&mut g2, &loaded.images, k)?;
    let mut csv = format!("{SCHEMA_LINE}\n{TRANSFORM_HEADER}\n");
    let mut written = 0;
    for ((stem, img), pred) in loaded.stems.iter().zip(&loaded.images).zip(&preds) {
        let pts: Vec<[f64; 2]> = pred.iter().map(|d| d.point).collect();
        let vis: Vec<bool> = pred.iter().map(|d| d.visible).collect();
        let a = match align_affine(img, &pts, &vis, &template) {
            Ok(a) => a,
            Err(e @ Error::Degenerate(_)) => {
                log::warn!("not aligning {stem}: {e}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let name = format!("{stem}.png");
        crate::synth::io::save_png(&r.out.join(&name), &a.image)?;
        let m = a.transform;
        csv.push_str(&format!(
            "{name},{},{},{},{},{},{},{}\n",
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], a.residual
        ));
        written += 1;
    }
    let sidecar = r.out.join("transforms.csv");
    write_atomic(&sidecar, csv.as_bytes())?;
    log::info!("aligned {written} of {} images", paths.len());
    Ok(Report {
        seeds: BTreeMap::new(),
        inputs: std::iter::once(r.checkpoint.clone()).chain(paths).collect(),
        outputs: vec![sidecar],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("lrlm").chain(args.iter().copied())).unwrap().command
    }

    #[test]
    fn merge_is_recursive_and_later_wins() {
        let mut a = json!({"x": 1, "n": {"a": 1, "b": 2}});
        merge(&mut a, &json!({"n": {"b": 3}, "y": [1]}));
        assert_eq!(a, json!({"x": 1, "n": {"a": 1, "b": 3}, "y": [1]}));
    }

    #[test]
    fn defaults_then_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"synth": {"seed": 5, "train": 10}, "out": "from-file"}"#).unwrap();
        let Command::Synth(a) = parse(&["synth", "--config", cfg.to_str().unwrap(), "--train", "7"]) else {
            panic!()
        };
        let r = resolve_synth(&a).unwrap();
        assert_eq!(r.synth.seed, 5);
        assert_eq!(r.synth.train, 7);
        assert_eq!(r.synth.test, 400);
        assert_eq!(r.out, PathBuf::from("from-file"));
    }

    #[test]
    fn default_split_sizes() {
        let Command::Synth(a) = parse(&["synth", "--out", "x"]) else { panic!() };
        let r = resolve_synth(&a).unwrap();
        assert_eq!((r.synth.train, r.synth.val, r.synth.test), (2000, 200, 400));
    }

    #[test]
    fn profile_flag_switches_every_default() {
        let Command::Synth(a) = parse(&["synth", "--out", "x", "--profile", "full"]) else {
            panic!()
        };
        let r = resolve_synth(&a).unwrap();
        assert_eq!(r.synth.face.size, 128);
        let Command::Train(a) = parse(&["train", "lm", "--setting", "s1", "--out", "o", "--data", "d", "--profile", "full"]) else {
            panic!()
        };
        assert_eq!(resolve_train(&a).unwrap().train.batch_size, 32);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"out": "o", "synth": {"sed": 1}}"#).unwrap();
        let Command::Synth(a) = parse(&["synth", "--config", cfg.to_str().unwrap()]) else {
            panic!()
        };
        assert!(matches!(resolve_synth(&a), Err(Error::Config(_))));
    }

    #[test]
    fn landmark_training_needs_a_setting() {
        let Command::Train(a) = parse(&["train", "lm", "--out", "o", "--data", "d"]) else { panic!() };
        assert!(resolve_train(&a).is_err());
        let Command::Train(a) = parse(&["train", "h2l", "--out", "o", "--data", "d"]) else { panic!() };
        assert_eq!(resolve_train(&a).unwrap().stage, Stage::H2l);
    }

    #[test]
    fn manifest_config_is_accepted_as_a_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            schema: 1,
            command: "synth".into(),
            config: json!({"out": "o", "synth": {"seed": 9}}),
            seeds: BTreeMap::new(),
            input_hash: String::new(),
            started_unix: 0,
            finished_unix: 0,
            outputs: vec![],
            error: None,
        };
        let p = dir.path().join(MANIFEST);
        fs::write(&p, serde_json::to_vec(&m).unwrap()).unwrap();
        assert_eq!(read_config_file(&p).unwrap(), m.config);
    }

    #[test]
    fn repeated_stems_get_suffixes() {
        let p = [PathBuf::from("a/x.png"), PathBuf::from("b/x.png"), PathBuf::from("y.jpg")];
        assert_eq!(output_stems(&p), ["x", "x-1", "y"]);
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run_code(["lrlm", "bogus"]), EXIT_USAGE);
        assert_eq!(run_code(["lrlm", "synth"]), EXIT_USAGE);
        assert_eq!(run_code(["lrlm", "--help"]), 0);
    }

    #[test]
    fn input_hash_depends_on_content() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        fs::write(&f, "one").unwrap();
        let h1 = hash_inputs(&[dir.path().to_path_buf()]).unwrap();
        fs::write(&f, "two").unwrap();
        let h2 = hash_inputs(&[dir.path().to_path_buf()]).unwrap();
        assert_ne!(h1, h2);
        assert_eq!(h1.len(), 64);
    }
}
