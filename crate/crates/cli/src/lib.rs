//! `tagpaint` command-line front end.
//!
//! Every subcommand reads its settings from three layers: built-in
//! defaults, then the `[<subcommand>]` table of the `--config` TOML file,
//! then explicit flags. Config keys are the flag names with `-` replaced by
//! `_`. The resolved settings are echoed to stderr before any work starts.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime
//! failure.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use candle_core::DType;
use clap::{ArgAction, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tagpaint_core::blocks::BlockKind;
use tagpaint_core::checkpoint::{load_checkpoint, save_checkpoint};
use tagpaint_core::eval::{fid_toy, CitColorFeatures};
use tagpaint_core::imaging::{ColorImage, GrayImage};
use tagpaint_core::inference::Colorizer;
use tagpaint_core::lineart::{brightness_scale, extract, XdogParams};
use tagpaint_core::nets::{pretrain_cit, CitPretrainOptions, Model, NetworkConfig};
use tagpaint_core::synthdata::{build_dataset, Dataset};
use tagpaint_core::training::{self, TrainOptions, TrainSchedule};
use tagpaint_core::TagVocabulary;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config, or input files.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] tagpaint_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use tagpaint_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Core(e) => match e {
                E::UnknownTag(_)
                | E::LengthMismatch { .. }
                | E::InvalidParam(_)
                | E::VocabParse { .. }
                | E::VocabHashMismatch { .. }
                | E::UnsupportedVersion { .. }
                | E::EmptyDataset(_)
                | E::Image(_) => 1,
                _ => 2,
            },
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tagpaint", version, about = "Tag-conditioned line-art colorization")]
struct Cli {
    /// TOML file with one table per subcommand, e.g. `[train]`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log filter (overrides RUST_LOG), e.g. `debug`.
    #[arg(long, global = true)]
    log: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic sprite dataset.
    Dataset(DatasetArgs),
    /// Extract an XDoG line art from a color PNG.
    Lineart(LineartArgs),
    /// Pretrain the attribute-tag extractor and save it as a checkpoint.
    PretrainCit(PretrainArgs),
    /// Train a colorizer with the two-step curriculum.
    Train(TrainArgs),
    /// Train one colorizer per decoder block kind and compare them.
    Ablate(AblateArgs),
    /// Two-step versus single-step training over several seeds.
    CompareCurricula(CurriculaArgs),
    /// Metrics of a checkpoint on a dataset's test split, or FID between two PNG folders.
    Eval(EvalArgs),
    /// Colorize one line art.
    Colorize(ColorizeArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Dataset(_) => "dataset",
            Command::Lineart(_) => "lineart",
            Command::PretrainCit(_) => "pretrain-cit",
            Command::Train(_) => "train",
            Command::Ablate(_) => "ablate",
            Command::CompareCurricula(_) => "compare-curricula",
            Command::Eval(_) => "eval",
            Command::Colorize(_) => "colorize",
            Command::Serve(_) => "serve",
        }
    }
}

const SECTIONS: [&str; 9] = [
    "dataset",
    "lineart",
    "pretrain-cit",
    "train",
    "ablate",
    "compare-curricula",
    "eval",
    "colorize",
    "serve",
];

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetArgs {
    /// Number of sprites [default: 2000].
    #[arg(long)]
    n: Option<usize>,
    /// Image side in pixels [default: 64].
    #[arg(long)]
    size: Option<usize>,
    /// Random seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (required).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Vocabulary manifest [default: built-in sprite vocabulary].
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineartArgs {
    /// Input color PNG (required).
    #[arg(long = "in")]
    #[serde(rename = "in")]
    input: Option<PathBuf>,
    /// Output grayscale PNG (required).
    #[arg(long)]
    out: Option<PathBuf>,
    /// XDoG preset, scaled to the input width [default: sprite-default].
    #[arg(long)]
    preset: Option<String>,
    /// Narrow Gaussian radius in pixels [default: from preset].
    #[arg(long)]
    sigma: Option<f32>,
    /// Wide/narrow Gaussian ratio, > 1 [default: from preset].
    #[arg(long)]
    k: Option<f32>,
    /// Wide Gaussian weight [default: from preset].
    #[arg(long)]
    tau: Option<f32>,
    /// DoG threshold [default: from preset].
    #[arg(long)]
    eps: Option<f32>,
    /// Threshold sharpness [default: from preset].
    #[arg(long)]
    phi: Option<f32>,
    /// Brightness factor >= 1 applied after extraction [default: 1].
    #[arg(long)]
    brightness: Option<f32>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PretrainArgs {
    /// Dataset directory (required).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint directory to write (required).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Epochs [default: 10].
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size [default: 32].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for weights and shuffling [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Base channel width [default: 16].
    #[arg(long)]
    base_channels: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainArgs {
    /// Dataset directory (required).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pretrained extractor checkpoint from `pretrain-cit` (required).
    #[arg(long)]
    cit: Option<PathBuf>,
    /// Run directory for logs and per-epoch checkpoints (required).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Schedule TOML; the flags below override its fields.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Decoder block kind [default: secat].
    #[arg(long)]
    block_kind: Option<String>,
    /// Base channel width; must match the extractor checkpoint [default: 16].
    #[arg(long)]
    base_channels: Option<usize>,
    /// Epochs of adversarial + reconstruction training [default: 10].
    #[arg(long)]
    step1_epochs: Option<usize>,
    /// Epochs with classification losses added [default: 10].
    #[arg(long)]
    step2_epochs: Option<usize>,
    /// Brightness fine-tuning epochs [default: 3].
    #[arg(long)]
    finetune_epochs: Option<usize>,
    /// Batch size [default: 16].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.0002].
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for weights and sampling [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Test images per evaluation [default: 256].
    #[arg(long)]
    eval_limit: Option<usize>,
    /// Skip per-epoch evaluation.
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    no_eval: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AblateArgs {
    /// Dataset directory (required).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pretrained extractor checkpoint (required).
    #[arg(long)]
    cit: Option<PathBuf>,
    /// Output directory for runs and `report.json` (required).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated block kinds [default: all six].
    #[arg(long)]
    kinds: Option<String>,
    /// Schedule TOML; the flags below override its fields.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Base channel width [default: 16].
    #[arg(long)]
    base_channels: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    step1_epochs: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    step2_epochs: Option<usize>,
    /// [default: 3]
    #[arg(long)]
    finetune_epochs: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 0.0002]
    #[arg(long)]
    lr: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Test images per evaluation [default: 256].
    #[arg(long)]
    eval_limit: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurriculaArgs {
    /// Dataset directory (required).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pretrained extractor checkpoint (required).
    #[arg(long)]
    cit: Option<PathBuf>,
    /// Where to write `report.json` [default: print only].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds [default: 0,1,2].
    #[arg(long)]
    seeds: Option<String>,
    /// Decoder block kind [default: secat].
    #[arg(long)]
    block_kind: Option<String>,
    /// Schedule TOML; the flags below override its fields.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Base channel width [default: 16].
    #[arg(long)]
    base_channels: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    step1_epochs: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    step2_epochs: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 0.0002]
    #[arg(long)]
    lr: Option<f64>,
    /// Test images per evaluation [default: 256].
    #[arg(long)]
    eval_limit: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalArgs {
    /// Checkpoint directory (required).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Dataset directory; evaluates the checkpoint on its test split.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Folder of generated PNGs; with --reference computes FID only.
    #[arg(long)]
    generated: Option<PathBuf>,
    /// Folder of reference PNGs.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Test images to use [default: 256].
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColorizeArgs {
    /// Checkpoint directory (required).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Line-art PNG (required).
    #[arg(long = "in")]
    #[serde(rename = "in")]
    input: Option<PathBuf>,
    /// Comma-separated color tags, e.g. blue_hair,red_eyes.
    #[arg(long)]
    tags: Option<String>,
    /// Output PNG (required).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the guide decoder output here.
    #[arg(long)]
    guide_out: Option<PathBuf>,
    /// Lighten a hand-drawn sketch before inference.
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    real_sketch: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServeArgs {
    /// Checkpoint directory, optionally `name=dir`; repeat for variants (required).
    #[arg(long)]
    ckpt: Option<Vec<String>>,
    /// Bind address [default: 127.0.0.1].
    #[arg(long, env = "TAGPAINT_HOST")]
    host: Option<String>,
    /// Port [default: 8080].
    #[arg(long, env = "TAGPAINT_PORT")]
    port: Option<u16>,
    /// Largest accepted image side in pixels [default: 1024].
    #[arg(long, env = "TAGPAINT_MAX_IMAGE_DIM")]
    max_image_dim: Option<u32>,
    /// Largest accepted request body in bytes [default: 8388608].
    #[arg(long)]
    max_body_bytes: Option<usize>,
}

fn to_table<T: Serialize>(v: &T) -> Result<toml::Table> {
    match toml::Value::try_from(v).map_err(|e| CliError::Runtime(e.to_string()))? {
        toml::Value::Table(t) => Ok(t),
        _ => Err(CliError::Runtime("settings did not serialize to a table".into())),
    }
}

/// defaults < config section < flags.
fn resolve<A: Serialize + DeserializeOwned>(section: &str, defaults: A, file: Option<&toml::Table>, flags: &A) -> Result<A> {
    let mut table = to_table(&defaults)?;
    if let Some(sec) = file.and_then(|f| f.get(section)) {
        let sec = sec
            .as_table()
            .ok_or_else(|| usage(format!("config: `{section}` must be a table")))?;
        let _: A = toml::Value::Table(sec.clone())
            .try_into()
            .map_err(|e: toml::de::Error| usage(format!("config [{section}]: {}", e.message())))?;
        table.extend(sec.clone());
    }
    table.extend(to_table(flags)?);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| usage(format!("{section}: {}", e.message())))
}

fn echo<A: Serialize>(section: &str, resolved: &A) -> Result<()> {
    let mut root = toml::Table::new();
    root.insert(section.to_string(), toml::Value::Table(to_table(resolved)?));
    let text = toml::to_string(&root).map_err(|e| CliError::Runtime(e.to_string()))?;
    eprintln!("# resolved config\n{text}");
    Ok(())
}

fn load_config(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("--config {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("--config {}: {}", path.display(), e.message())))?;
    for key in table.keys() {
        if !SECTIONS.contains(&key.as_str()) {
            return Err(usage(format!("--config {}: unknown section [{key}]", path.display())));
        }
    }
    Ok(table)
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| usage(format!("missing required --{flag}")))
}

fn existing_file<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    let p = required(v, flag)?;
    if !p.is_file() {
        return Err(usage(format!("--{flag}: {} does not exist or is not a file", p.display())));
    }
    Ok(p)
}

fn existing_dir<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    let p = required(v, flag)?;
    if !p.is_dir() {
        return Err(usage(format!("--{flag}: {} does not exist or is not a directory", p.display())));
    }
    Ok(p)
}

fn parse_kind(s: &str, flag: &str) -> Result<BlockKind> {
    s.trim().parse().map_err(|e: tagpaint_core::Error| usage(format!("--{flag}: {e}")))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string(v).map_err(|e| CliError::Runtime(e.to_string()))?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

struct ScheduleFlags<'a> {
    path: &'a Option<PathBuf>,
    step1: Option<usize>,
    step2: Option<usize>,
    finetune: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
}

fn build_schedule(f: ScheduleFlags) -> Result<TrainSchedule> {
    let mut s = match f.path {
        Some(p) => {
            if !p.is_file() {
                return Err(usage(format!("--schedule: {} does not exist or is not a file", p.display())));
            }
            TrainSchedule::load(p).map_err(|e| usage(format!("--schedule {}: {e}", p.display())))?
        }
        None => TrainSchedule::default(),
    };
    if let Some(v) = f.step1 {
        s.step1_epochs = v;
    }
    if let Some(v) = f.step2 {
        s.step2_epochs = v;
    }
    if let Some(v) = f.finetune {
        s.finetune_epochs = v;
    }
    if let Some(v) = f.batch_size {
        s.batch_size = v;
    }
    if let Some(v) = f.lr {
        s.lr = v;
    }
    if let Some(v) = f.seed {
        s.seed = v;
    }
    s.validate()?;
    eprintln!("# resolved schedule (hash {})\n{}", s.hash(), s.to_toml()?);
    Ok(s)
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Ok(Dataset::load(dir, None)?)
}

/// Extractor weights (and its config) from a `pretrain-cit` checkpoint.
fn load_cit(path: &Path, dataset: &Dataset, base_channels: usize) -> Result<Model> {
    let ck = load_checkpoint(path, Some(&dataset.vocab), DType::F32)?;
    if !ck.model.cit.is_pretrained() {
        return Err(usage(format!("--cit {}: checkpoint holds an untrained extractor", path.display())));
    }
    if ck.model.config.base_channels != base_channels || ck.model.config.image_size != dataset.size() {
        return Err(usage(format!(
            "--cit {}: extractor was built for {} px / base_channels {}, run uses {} px / {}",
            path.display(),
            ck.model.config.image_size,
            ck.model.config.base_channels,
            dataset.size(),
            base_channels
        )));
    }
    Ok(ck.model)
}

fn network(dataset: &Dataset, kind: BlockKind, base_channels: usize) -> Result<NetworkConfig> {
    let cfg = NetworkConfig {
        image_size: dataset.size(),
        base_channels,
        ..NetworkConfig::toy(&dataset.vocab, kind)
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_dataset(a: DatasetArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let vocab = match &a.vocab {
        Some(p) => {
            existing_file(&a.vocab, "vocab")?;
            TagVocabulary::load(p)?
        }
        None => TagVocabulary::sprite_default(),
    };
    let m = build_dataset(a.n.unwrap(), a.size.unwrap(), a.seed.unwrap(), &vocab, out)?;
    print_json(&serde_json::json!({
        "out": out,
        "n": m.n,
        "train": m.train_count,
        "test": m.test_count,
        "vocab_hash": m.vocab_hash,
    }))
}

fn cmd_lineart(a: LineartArgs) -> Result<()> {
    let input = existing_file(&a.input, "in")?;
    let out = required(&a.out, "out")?;
    let img = ColorImage::load_png(input)?;
    let mut p = XdogParams::preset(a.preset.as_deref().unwrap(), img.width)
        .map_err(|e| usage(format!("--preset: {e}")))?;
    p.sigma = a.sigma.unwrap_or(p.sigma);
    p.k = a.k.unwrap_or(p.k);
    p.tau = a.tau.unwrap_or(p.tau);
    p.eps = a.eps.unwrap_or(p.eps);
    p.phi = a.phi.unwrap_or(p.phi);
    let line = brightness_scale(&extract(&img, &p)?, a.brightness.unwrap())?;
    line.save_png(out)?;
    print_json(&serde_json::json!({ "out": out, "params": p }))
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let data = existing_dir(&a.data, "data")?;
    let out = required(&a.out, "out")?;
    let ds = load_dataset(data)?;
    let cfg = network(&ds, BlockKind::Secat, a.base_channels.unwrap())?;
    let seed = a.seed.unwrap();
    let model = Model::new(cfg, seed, DType::F32)?;
    let opts = CitPretrainOptions {
        epochs: a.epochs.unwrap(),
        batch_size: a.batch_size.unwrap(),
        lr: a.lr.unwrap(),
        seed,
    };
    let report = pretrain_cit(&model.cit, &model.store, &ds, &opts)?;
    let meta = save_checkpoint(out, &model, &ds.vocab, None)?;
    write_json(&out.join("cit_report.json"), &report)?;
    print_json(&serde_json::json!({
        "checkpoint": out,
        "id": meta.id,
        "init_loss": report.init_loss,
        "final_loss": report.epoch_losses.last(),
        "mean_accuracy": report.mean_accuracy,
    }))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let schedule = build_schedule(ScheduleFlags {
        path: &a.schedule,
        step1: a.step1_epochs,
        step2: a.step2_epochs,
        finetune: a.finetune_epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
    })?;
    let data = existing_dir(&a.data, "data")?;
    let cit_path = existing_dir(&a.cit, "cit")?;
    let out = required(&a.out, "out")?;
    let kind = parse_kind(a.block_kind.as_deref().unwrap(), "block-kind")?;
    let ds = load_dataset(data)?;
    let base = a.base_channels.unwrap();
    let cit = load_cit(cit_path, &ds, base)?;
    let model = training::model_with_cit(network(&ds, kind, base)?, schedule.seed, DType::F32, &cit.store)?;
    let log = training::train(
        &ds,
        &model,
        &schedule,
        &TrainOptions {
            run_dir: Some(out.clone()),
            eval_every_epoch: !a.no_eval,
            eval_limit: a.eval_limit.unwrap(),
            require_pretrained_cit: true,
        },
    )
    .map_err(|e| match e {
        tagpaint_core::Error::NonFiniteLoss { .. } => CliError::Runtime(e.to_string()),
        other => other.into(),
    })?;
    write_json(&out.join("run_log.json"), &log)?;
    for e in &log.epochs {
        print_json(e)?;
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let schedule = build_schedule(ScheduleFlags {
        path: &a.schedule,
        step1: a.step1_epochs,
        step2: a.step2_epochs,
        finetune: a.finetune_epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
    })?;
    let data = existing_dir(&a.data, "data")?;
    let cit_path = existing_dir(&a.cit, "cit")?;
    let out = required(&a.out, "out")?;
    let kinds: Vec<BlockKind> = match &a.kinds {
        Some(s) => s.split(',').filter(|k| !k.trim().is_empty()).map(|k| parse_kind(k, "kinds")).collect::<Result<_>>()?,
        None => BlockKind::ALL.to_vec(),
    };
    let ds = load_dataset(data)?;
    let base = a.base_channels.unwrap();
    let cit = load_cit(cit_path, &ds, base)?;
    let report = training::ablate(
        &ds,
        &network(&ds, BlockKind::Secat, base)?,
        &kinds,
        &schedule,
        &cit.store,
        Some(out),
        &TrainOptions {
            eval_limit: a.eval_limit.unwrap(),
            ..TrainOptions::default()
        },
    )?;
    write_json(&out.join("report.json"), &report)?;
    print!("{}", report.to_table());
    let failed: Vec<String> = report
        .rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.kind)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("some block kinds failed: {}", failed.join("; "))))
    }
}

fn cmd_curricula(a: CurriculaArgs) -> Result<()> {
    let data = existing_dir(&a.data, "data")?;
    let cit_path = existing_dir(&a.cit, "cit")?;
    let kind = parse_kind(a.block_kind.as_deref().unwrap(), "block-kind")?;
    let seeds: Vec<u64> = a
        .seeds
        .as_deref()
        .unwrap()
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| usage(format!("--seeds: `{s}` is not an integer"))))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(usage("--seeds: need at least one seed"));
    }
    let schedule = build_schedule(ScheduleFlags {
        path: &a.schedule,
        step1: a.step1_epochs,
        step2: a.step2_epochs,
        finetune: Some(0),
        batch_size: a.batch_size,
        lr: a.lr,
        seed: None,
    })?;
    let ds = load_dataset(data)?;
    let base = a.base_channels.unwrap();
    let cit = load_cit(cit_path, &ds, base)?;
    let report = training::compare_curricula(
        &ds,
        &network(&ds, kind, base)?,
        &schedule,
        &seeds,
        &cit.store,
        &TrainOptions {
            eval_limit: a.eval_limit.unwrap(),
            ..TrainOptions::default()
        },
    )?;
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
        write_json(&out.join("report.json"), &report)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ckpt = existing_dir(&a.ckpt, "ckpt")?;
    let ck = load_checkpoint(ckpt, None, DType::F32)?;
    let metric = |name: &str, value: f64| print_json(&serde_json::json!({ "metric": name, "value": value, "checkpoint": ck.meta.id }));
    match (&a.generated, &a.reference) {
        (Some(_), Some(_)) => {
            let g = existing_dir(&a.generated, "generated")?;
            let r = existing_dir(&a.reference, "reference")?;
            let extractor = CitColorFeatures {
                cit: ck.model.cit.clone(),
                image_size: ck.model.config.image_size,
                channels: ck.model.config.cit_channels(),
                dtype: DType::F32,
            };
            metric("fid_toy", fid_toy(g, r, &extractor)?)
        }
        (None, None) => {
            let data = existing_dir(&a.data, "data")?;
            let ds = Dataset::load(data, Some(&ck.vocab))?;
            let test: Vec<_> = ds.test().into_iter().take(a.limit.unwrap()).collect();
            if test.len() < 2 {
                return Err(usage(format!("--data {}: test split needs at least 2 images", data.display())));
            }
            let snap = training::evaluate(&ck.model, &ds, &test)?;
            metric("fid_toy", snap.fid_toy)?;
            metric("tag_fidelity", snap.tag_fidelity)?;
            metric("color_bleed", snap.color_bleed)?;
            metric("d_cvt_accuracy", snap.d_cvt_accuracy)?;
            metric("params", ck.model.store.count(tagpaint_core::nets::GEN_PREFIX) as f64)
        }
        _ => Err(usage("--generated and --reference must be given together")),
    }
}

fn cmd_colorize(a: ColorizeArgs) -> Result<()> {
    let ckpt = existing_dir(&a.ckpt, "ckpt")?;
    let input = existing_file(&a.input, "in")?;
    let out = required(&a.out, "out")?;
    let tags: Vec<&str> = a
        .tags
        .as_deref()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .collect();
    let c = Colorizer::load(ckpt)?;
    let line = GrayImage::load_png(input)?;
    let r = c
        .colorize(&line, &tags, a.real_sketch)
        .map_err(|e| match e {
            tagpaint_core::Error::UnknownTag(t) => usage(format!("--tags: unknown tag `{t}`")),
            other => other.into(),
        })?;
    r.image.save_png(out)?;
    if let Some(g) = &a.guide_out {
        r.guide.save_png(g)?;
    }
    print_json(&serde_json::json!({
        "out": out,
        "size": r.image.width,
        "checkpoint": c.id(),
        "block_kind": c.block_kind().name(),
    }))
}

fn parse_ckpt_spec(s: &str) -> (Option<String>, PathBuf) {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !name.contains('/') => (Some(name.to_string()), PathBuf::from(path)),
        _ => (None, PathBuf::from(s)),
    }
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let specs = required(&a.ckpt, "ckpt")?;
    if specs.is_empty() {
        return Err(usage("missing required --ckpt"));
    }
    let checkpoints: Vec<_> = specs.iter().map(|s| parse_ckpt_spec(s)).collect();
    for (_, p) in &checkpoints {
        if !p.is_dir() {
            return Err(usage(format!("--ckpt: {} does not exist or is not a directory", p.display())));
        }
    }
    let host = a.host.as_deref().unwrap();
    let addr: SocketAddr = format!("{host}:{}", a.port.unwrap())
        .parse()
        .map_err(|e| usage(format!("--host/--port: {e}")))?;
    let cfg = tagpaint_service::ServiceConfig {
        checkpoints,
        max_image_dim: a.max_image_dim.unwrap(),
        max_body_bytes: a.max_body_bytes.unwrap(),
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(tagpaint_service::serve(addr, cfg))
        .map_err(|e| CliError::Runtime(format!("server: {e}")))
}

fn init_logging(filter: Option<&str>) {
    let filter = match filter {
        Some(f) => tracing_subscriber::EnvFilter::new(f),
        None => tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
    };
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = cli.config.as_deref().map(load_config).transpose()?;
    let file = file.as_ref();
    let section = cli.command.name();
    macro_rules! go {
        ($args:expr, $defaults:expr, $f:ident) => {{
            let resolved = resolve(section, $defaults, file, &$args)?;
            echo(section, &resolved)?;
            $f(resolved)
        }};
    }
    match cli.command {
        Command::Dataset(a) => go!(
            a,
            DatasetArgs {
                n: Some(2000),
                size: Some(64),
                seed: Some(0),
                ..Default::default()
            },
            cmd_dataset
        ),
        Command::Lineart(a) => go!(
            a,
            LineartArgs {
                preset: Some("sprite-default".into()),
                brightness: Some(1.0),
                ..Default::default()
            },
            cmd_lineart
        ),
        Command::PretrainCit(a) => {
            let d = CitPretrainOptions::default();
            go!(
                a,
                PretrainArgs {
                    epochs: Some(d.epochs),
                    batch_size: Some(d.batch_size),
                    lr: Some(d.lr),
                    seed: Some(d.seed),
                    base_channels: Some(16),
                    ..Default::default()
                },
                cmd_pretrain
            )
        }
        Command::Train(a) => go!(
            a,
            TrainArgs {
                block_kind: Some("secat".into()),
                base_channels: Some(16),
                eval_limit: Some(256),
                ..Default::default()
            },
            cmd_train
        ),
        Command::Ablate(a) => go!(
            a,
            AblateArgs {
                base_channels: Some(16),
                eval_limit: Some(256),
                ..Default::default()
            },
            cmd_ablate
        ),
        Command::CompareCurricula(a) => go!(
            a,
            CurriculaArgs {
                seeds: Some("0,1,2".into()),
                block_kind: Some("secat".into()),
                base_channels: Some(16),
                eval_limit: Some(256),
                ..Default::default()
            },
            cmd_curricula
        ),
        Command::Eval(a) => go!(
            a,
            EvalArgs {
                limit: Some(256),
                ..Default::default()
            },
            cmd_eval
        ),
        Command::Colorize(a) => go!(a, ColorizeArgs::default(), cmd_colorize),
        Command::Serve(a) => go!(
            a,
            ServeArgs {
                host: Some("127.0.0.1".into()),
                port: Some(8080),
                max_image_dim: Some(1024),
                max_body_bytes: Some(8 << 20),
                ..Default::default()
            },
            cmd_serve
        ),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.log.as_deref());
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
