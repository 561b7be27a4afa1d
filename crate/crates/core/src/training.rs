//! Adversarial training with the two-step curriculum, brightness fine-tuning,
//! and the harnesses built on it (block ablation, curriculum comparison).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blocks::BlockKind;
use crate::checkpoint::{save_checkpoint, ScheduleState};
use crate::error::{Error, IoContext, Result};
use crate::eval::{
    color_bleed, discriminator_cvt_accuracy, fid_between, tag_fidelity, CitColorFeatures, EvalReport, EvalRow,
};
use crate::imaging::{ColorImage, GrayImage, MaskImage};
use crate::lineart::{brightness_scale, extract, XdogParams};
use crate::losses::{
    adv_loss, cls_loss, discriminator_objective, gen_adv_loss, generator_objective, rec_loss, LossWeights,
    TrainingStep,
};
use crate::nets::{color_batch, gray_batch, tag_batch, tensor_to_images, Model, NetworkConfig, DISC_PREFIX, GEN_PREFIX};
use crate::nn::{scalar, ParamStore};
use crate::synthdata::{Dataset, SampleRecord, SpriteSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub step1_epochs: usize,
    pub step2_epochs: usize,
    pub finetune_epochs: usize,
    pub weights: LossWeights,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Line-art brightness factors for fine-tuning are drawn from
    /// `U(brightness_range[0], brightness_range[1])`, once per batch.
    pub brightness_range: [f32; 2],
    /// Generator adversarial term `-log D(G)` instead of `log(1 - D(G))`.
    pub non_saturating: bool,
    /// Re-extract line arts every epoch with per-sample jittered XDoG.
    pub jitter_line_art: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            step1_epochs: 10,
            step2_epochs: 10,
            finetune_epochs: 3,
            weights: LossWeights::default(),
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 16,
            seed: 0,
            brightness_range: [1.0, 7.0],
            non_saturating: false,
            jitter_line_art: true,
        }
    }
}

impl TrainSchedule {
    pub fn with_epochs(step1: usize, step2: usize, finetune: usize) -> Self {
        Self {
            step1_epochs: step1,
            step2_epochs: step2,
            finetune_epochs: finetune,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.total_epochs() == 0 {
            return bad("schedule has no epochs".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (n, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{n} must be in [0, 1), got {b}"));
            }
        }
        let [lo, hi] = self.brightness_range;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("brightness_range [{lo}, {hi}] must satisfy 1 <= lo <= hi"));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.step1_epochs + self.step2_epochs + self.finetune_epochs
    }

    /// Step for a 0-based epoch index.
    pub fn step_for_epoch(&self, epoch: usize) -> TrainingStep {
        if epoch < self.step1_epochs {
            TrainingStep::Segmentation
        } else if epoch < self.step1_epochs + self.step2_epochs {
            TrainingStep::Colorization
        } else {
            TrainingStep::BrightnessFinetune
        }
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("schedule serializes");
        Sha256::digest(json.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Other(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::InvalidParam(format!("schedule: {}", e.message())))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).at(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: u64,
    pub epoch: usize,
    pub step: TrainingStep,
    pub l_adv: f64,
    pub l_rec: f64,
    pub l_cls: Option<f64>,
    pub l_d: f64,
    pub l_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub fid_toy: f64,
    pub tag_fidelity: f64,
    pub color_bleed: f64,
    pub d_cvt_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    /// 1-based.
    pub epoch: usize,
    pub step: TrainingStep,
    pub mean_adv: f64,
    pub mean_rec: f64,
    pub mean_cls: Option<f64>,
    pub mean_d: f64,
    pub mean_g: f64,
    pub seconds: f64,
    pub eval: Option<EvalSnapshot>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub block_kind: BlockKind,
    pub schedule_hash: String,
    pub records: Vec<LossRecord>,
    pub epochs: Vec<EpochSummary>,
    pub checkpoints: Vec<PathBuf>,
    pub total_seconds: f64,
}

impl RunLog {
    /// Snapshot with the lowest FID, if any epoch was evaluated.
    pub fn best_fid_epoch(&self) -> Option<&EpochSummary> {
        self.epochs
            .iter()
            .filter(|e| e.eval.is_some())
            .min_by(|a, b| {
                let fa = a.eval.as_ref().unwrap().fid_toy;
                let fb = b.eval.as_ref().unwrap().fid_toy;
                fa.total_cmp(&fb)
            })
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogEvent<'a> {
    Iter(&'a LossRecord),
    Epoch(&'a EpochSummary),
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Where `config.toml`, `schedule.toml`, `log.jsonl` and `ckpt/` go.
    pub run_dir: Option<PathBuf>,
    pub eval_every_epoch: bool,
    /// Cap on test images used per evaluation.
    pub eval_limit: usize,
    /// Refuse to train with an extractor that was never pretrained.
    pub require_pretrained_cit: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            run_dir: None,
            eval_every_epoch: true,
            eval_limit: 256,
            require_pretrained_cit: true,
        }
    }
}

struct Batch {
    x: Tensor,
    y: Tensor,
    cvt: Tensor,
    cit: Tensor,
}

fn line_arts_for_epoch(records: &[&SampleRecord], base: &XdogParams, jitter: bool, rng: &mut ChaCha8Rng) -> Result<Vec<GrayImage>> {
    records
        .iter()
        .map(|r| {
            if jitter {
                extract(&r.color_image, &base.jittered(rng))
            } else {
                Ok(r.line_art.clone())
            }
        })
        .collect()
}

fn optimizer(store: &ParamStore, prefix: &str, s: &TrainSchedule) -> Result<AdamW> {
    let vars: Vec<Var> = store.vars_with_prefix(prefix).into_iter().map(|(_, v)| v).collect();
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr: s.lr,
            beta1: s.beta1,
            beta2: s.beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

/// Generated images for `records`, driven by their stored line arts and tags.
pub fn generate(model: &Model, records: &[&SampleRecord]) -> Result<Vec<ColorImage>> {
    let dtype = model.dtype();
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(32) {
        let arts: Vec<&GrayImage> = chunk.iter().map(|r| &r.line_art).collect();
        let tags: Vec<_> = chunk.iter().map(|r| &r.cvt).collect();
        let g = model
            .generator
            .forward(&gray_batch(&arts, dtype, model.device())?, &tag_batch(&tags, dtype, model.device())?)?;
        out.extend(tensor_to_images(&g.full)?);
    }
    Ok(out)
}

/// Metrics of the current weights on (a prefix of) `records`.
pub fn evaluate(model: &Model, dataset: &Dataset, records: &[&SampleRecord]) -> Result<EvalSnapshot> {
    let generated = generate(model, records)?;
    let gen_refs: Vec<&ColorImage> = generated.iter().collect();
    let real: Vec<&ColorImage> = records.iter().map(|r| &r.color_image).collect();
    let specs: Vec<&SpriteSpec> = records.iter().map(|r| &r.spec).collect();
    let masks: Vec<&MaskImage> = records.iter().map(|r| &r.masks).collect();
    let extractor = CitColorFeatures {
        cit: model.cit.clone(),
        image_size: model.config.image_size,
        channels: model.config.cit_channels(),
        dtype: model.dtype(),
    };
    Ok(EvalSnapshot {
        fid_toy: fid_between(&gen_refs, &real, &extractor)?,
        tag_fidelity: tag_fidelity(&gen_refs, &specs, &masks, &dataset.vocab)?,
        color_bleed: color_bleed(&gen_refs, &masks, &dataset.vocab, &specs)?,
        d_cvt_accuracy: discriminator_cvt_accuracy(&model.discriminator, records, model.dtype())?,
    })
}

struct RunFiles {
    dir: PathBuf,
    log: BufWriter<File>,
}

impl RunFiles {
    fn create(dir: &Path, config: &NetworkConfig, schedule: &TrainSchedule) -> Result<Self> {
        std::fs::create_dir_all(dir.join("ckpt")).at(dir)?;
        let cfg_path = dir.join("config.toml");
        let cfg = toml::to_string(config).map_err(|e| Error::Other(e.to_string()))?;
        std::fs::write(&cfg_path, cfg).at(&cfg_path)?;
        let sched_path = dir.join("schedule.toml");
        std::fs::write(&sched_path, schedule.to_toml()?).at(&sched_path)?;
        let log_path = dir.join("log.jsonl");
        Ok(Self {
            dir: dir.to_path_buf(),
            log: BufWriter::new(File::create(&log_path).at(&log_path)?),
        })
    }

    fn write(&mut self, ev: &LogEvent) -> Result<()> {
        let line = serde_json::to_string(ev)?;
        writeln!(self.log, "{line}").at(&self.dir.join("log.jsonl"))?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.log.flush().at(&self.dir.join("log.jsonl"))
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Trains `model` in place on the training split.
///
/// Each batch runs one discriminator update (generated images detached) and
/// then one generator update. The classification heads only enter the
/// losses from the colorization step on, so during step 1 they receive no
/// gradient and the optimizer leaves them untouched. A checkpoint is written
/// at every epoch boundary when `opts.run_dir` is set.
pub fn train(dataset: &Dataset, model: &Model, schedule: &TrainSchedule, opts: &TrainOptions) -> Result<RunLog> {
    schedule.validate()?;
    model.config.check_vocab(&dataset.vocab)?;
    if model.config.image_size != dataset.size() {
        return Err(Error::InvalidParam(format!(
            "network image_size {} but dataset images are {}px",
            model.config.image_size,
            dataset.size()
        )));
    }
    if opts.require_pretrained_cit && !model.cit.is_pretrained() {
        return Err(Error::InvalidParam("CIT extractor has not been pretrained".into()));
    }
    let train_set = dataset.train();
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    let test_set: Vec<&SampleRecord> = dataset.test().into_iter().take(opts.eval_limit).collect();
    let dtype = model.dtype();
    let device = model.device().clone();
    let mut files = match &opts.run_dir {
        Some(d) => Some(RunFiles::create(d, &model.config, schedule)?),
        None => None,
    };
    let mut opt_d = optimizer(&model.store, DISC_PREFIX, schedule)?;
    let mut opt_g = optimizer(&model.store, GEN_PREFIX, schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let base = XdogParams::sprite_default(dataset.size());
    let w = schedule.weights;
    let started = Instant::now();
    let mut log = RunLog {
        block_kind: model.config.block_kind,
        schedule_hash: schedule.hash(),
        records: Vec::new(),
        epochs: Vec::new(),
        checkpoints: Vec::new(),
        total_seconds: 0.0,
    };
    let mut iter: u64 = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..schedule.total_epochs() {
        let step = schedule.step_for_epoch(epoch);
        let epoch_start = Instant::now();
        let arts = line_arts_for_epoch(&train_set, &base, schedule.jitter_line_art, &mut rng)?;
        order.shuffle(&mut rng);
        let first_record = log.records.len();

        for chunk in order.chunks(schedule.batch_size) {
            let factor = if step == TrainingStep::BrightnessFinetune {
                let [lo, hi] = schedule.brightness_range;
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            } else {
                1.0
            };
            let inputs: Vec<GrayImage> = chunk
                .iter()
                .map(|&i| if factor > 1.0 { brightness_scale(&arts[i], factor) } else { Ok(arts[i].clone()) })
                .collect::<Result<_>>()?;
            let batch = Batch {
                x: gray_batch(&inputs.iter().collect::<Vec<_>>(), dtype, &device)?,
                y: color_batch(&chunk.iter().map(|&i| &train_set[i].color_image).collect::<Vec<_>>(), dtype, &device)?,
                cvt: tag_batch(&chunk.iter().map(|&i| &train_set[i].cvt).collect::<Vec<_>>(), dtype, &device)?,
                cit: tag_batch(&chunk.iter().map(|&i| &train_set[i].cit).collect::<Vec<_>>(), dtype, &device)?,
            };
            iter += 1;
            let rec = train_step(model, &batch, step, schedule, &w, &mut opt_d, &mut opt_g, iter, epoch + 1)?;
            if [rec.l_adv, rec.l_rec, rec.l_d, rec.l_g].iter().chain(rec.l_cls.iter()).any(|v| !v.is_finite()) {
                if let Some(f) = files.as_mut() {
                    f.write(&LogEvent::Iter(&rec))?;
                    f.flush()?;
                }
                return Err(Error::NonFiniteLoss {
                    iter,
                    last_checkpoint: log.checkpoints.last().cloned(),
                });
            }
            if let Some(f) = files.as_mut() {
                f.write(&LogEvent::Iter(&rec))?;
            }
            log.records.push(rec);
        }

        let recs = &log.records[first_record..];
        let eval = if opts.eval_every_epoch && test_set.len() >= 2 {
            Some(evaluate(model, dataset, &test_set)?)
        } else {
            None
        };
        let checkpoint = match &files {
            Some(f) => {
                let dir = f.dir.join("ckpt").join(format!("epoch_{}", epoch + 1));
                save_checkpoint(
                    &dir,
                    model,
                    &dataset.vocab,
                    Some(ScheduleState {
                        schedule: schedule.clone(),
                        epoch: epoch + 1,
                        step,
                        iter,
                    }),
                )?;
                log.checkpoints.push(dir.clone());
                Some(dir)
            }
            None => None,
        };
        let summary = EpochSummary {
            epoch: epoch + 1,
            step,
            mean_adv: mean(recs.iter().map(|r| r.l_adv)),
            mean_rec: mean(recs.iter().map(|r| r.l_rec)),
            mean_cls: step.uses_cls().then(|| mean(recs.iter().filter_map(|r| r.l_cls))),
            mean_d: mean(recs.iter().map(|r| r.l_d)),
            mean_g: mean(recs.iter().map(|r| r.l_g)),
            seconds: epoch_start.elapsed().as_secs_f64(),
            eval,
            checkpoint,
        };
        tracing::info!(
            epoch = summary.epoch,
            step = %step,
            l_rec = summary.mean_rec,
            l_adv = summary.mean_adv,
            seconds = summary.seconds,
            fid = summary.eval.as_ref().map(|e| e.fid_toy),
            tag_fidelity = summary.eval.as_ref().map(|e| e.tag_fidelity),
            "epoch done"
        );
        if let Some(f) = files.as_mut() {
            f.write(&LogEvent::Epoch(&summary))?;
            f.flush()?;
        }
        log.epochs.push(summary);
    }
    log.total_seconds = started.elapsed().as_secs_f64();
    Ok(log)
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &Model,
    b: &Batch,
    step: TrainingStep,
    schedule: &TrainSchedule,
    w: &LossWeights,
    opt_d: &mut AdamW,
    opt_g: &mut AdamW,
    iter: u64,
    epoch: usize,
) -> Result<LossRecord> {
    let disc = &model.discriminator;
    let g = model.generator.forward(&b.x, &b.cvt)?;
    let fake = g.full.detach();

    // Discriminator update.
    let (adv_d, cls_d) = if step.uses_cls() {
        let real = disc.forward(&b.y)?;
        let fk = disc.forward(&fake)?;
        let cls = (cls_loss(&real.cvt, &real.cit, &b.cvt, &b.cit)? + cls_loss(&fk.cvt, &fk.cit, &b.cvt, &b.cit)?)?;
        (adv_loss(&real.adv, &fk.adv)?, Some(cls))
    } else {
        (adv_loss(&disc.forward_adv(&b.y)?, &disc.forward_adv(&fake)?)?, None)
    };
    let l_d = discriminator_objective(step, &adv_d, cls_d.as_ref(), w)?;
    opt_d.backward_step(&l_d)?;

    // Generator update against the updated discriminator. The real-image
    // terms are constants here; they are included so L_G has its full value.
    let rec = rec_loss(&b.y, &g.full, &g.guide, w.beta)?;
    let (adv_g, cls_g) = if step.uses_cls() {
        let real = disc.forward(&b.y)?;
        let fk = disc.forward(&g.full)?;
        let cls = (cls_loss(&real.cvt.detach(), &real.cit.detach(), &b.cvt, &b.cit)?
            + cls_loss(&fk.cvt, &fk.cit, &b.cvt, &b.cit)?)?;
        (gen_adv_loss(&real.adv.detach(), &fk.adv, schedule.non_saturating)?, Some(cls))
    } else {
        let real = disc.forward_adv(&b.y)?.detach();
        (gen_adv_loss(&real, &disc.forward_adv(&g.full)?, schedule.non_saturating)?, None)
    };
    let l_g = generator_objective(step, &adv_g, &rec, cls_g.as_ref(), w)?;
    opt_g.backward_step(&l_g)?;

    Ok(LossRecord {
        iter,
        epoch,
        step,
        l_adv: scalar(&adv_d)?,
        l_rec: scalar(&rec)?,
        l_cls: cls_d.as_ref().map(scalar).transpose()?,
        l_d: scalar(&l_d)?,
        l_g: scalar(&l_g)?,
    })
}

/// A model for `config` whose CIT extractor holds the pretrained weights of
/// `cit_source`.
pub fn model_with_cit(config: NetworkConfig, seed: u64, dtype: DType, cit_source: &ParamStore) -> Result<Model> {
    let model = Model::new(config, seed, dtype)?;
    model.store.copy_from(cit_source, crate::nets::CIT_PREFIX)?;
    model.cit.set_pretrained(true);
    Ok(model)
}

/// Trains one generator per block kind with identical seed and schedule and
/// reports, per kind, the metrics of its lowest-FID epoch. A failing kind
/// yields a row with its error and NaN metrics; the other kinds still run.
pub fn ablate(
    dataset: &Dataset,
    base: &NetworkConfig,
    kinds: &[BlockKind],
    schedule: &TrainSchedule,
    cit_source: &ParamStore,
    run_root: Option<&Path>,
    opts: &TrainOptions,
) -> Result<EvalReport> {
    if kinds.is_empty() {
        return Err(Error::InvalidParam("ablation needs at least one block kind".into()));
    }
    let mut rows = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let config = NetworkConfig {
            block_kind: kind,
            ..base.clone()
        };
        let run_opts = TrainOptions {
            run_dir: run_root.map(|r| r.join(kind.name())),
            eval_every_epoch: true,
            ..opts.clone()
        };
        let outcome = model_with_cit(config, schedule.seed, cit_source.dtype(), cit_source).and_then(|m| {
            let params = m.store.count(GEN_PREFIX);
            train(dataset, &m, schedule, &run_opts).map(|log| (params, log))
        });
        let row = match outcome {
            Ok((params, log)) => {
                let best = log
                    .best_fid_epoch()
                    .ok_or_else(|| Error::InvalidParam("no evaluated epochs (test split too small?)".into()))?;
                let ev = best.eval.as_ref().unwrap();
                EvalRow {
                    kind,
                    seed: schedule.seed,
                    fid_toy: ev.fid_toy,
                    tag_fidelity: ev.tag_fidelity,
                    color_bleed: ev.color_bleed,
                    params,
                    epoch: best.epoch,
                    checkpoint: best.checkpoint.clone(),
                    error: None,
                }
            }
            Err(e) => {
                tracing::warn!(kind = %kind, error = %e, "ablation arm failed");
                EvalRow {
                    kind,
                    seed: schedule.seed,
                    fid_toy: f64::NAN,
                    tag_fidelity: f64::NAN,
                    color_bleed: f64::NAN,
                    params: 0,
                    epoch: 0,
                    checkpoint: None,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.push(row);
    }
    Ok(EvalReport {
        schedule_hash: schedule.hash(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumArm {
    TwoStep,
    SingleStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumRow {
    pub arm: CurriculumArm,
    pub seed: u64,
    pub color_bleed: f64,
    pub tag_fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumReport {
    pub epochs: usize,
    pub rows: Vec<CurriculumRow>,
    /// Seeds where the two-step arm bled no more than the single-step arm.
    pub two_step_bleeds_less: usize,
    /// True when that holds for a majority of seeds. Informational only.
    pub direction_observed: bool,
}

impl CurriculumReport {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12} {:>6} {:>12} {:>13}\n", "arm", "seed", "color_bleed", "tag_fidelity");
        for r in &self.rows {
            let arm = match r.arm {
                CurriculumArm::TwoStep => "two_step",
                CurriculumArm::SingleStep => "single_step",
            };
            s.push_str(&format!("{:<12} {:>6} {:>12.4} {:>13.4}\n", arm, r.seed, r.color_bleed, r.tag_fidelity));
        }
        s.push_str(&format!(
            "two-step bleeds less in {}/{} seeds: direction {}\n",
            self.two_step_bleeds_less,
            self.rows.len() / 2,
            if self.direction_observed { "observed" } else { "not observed" }
        ));
        s
    }
}

/// Two-step (`schedule` as given) versus single-step (colorization losses
/// from epoch 0 for the same number of epochs), one pair of runs per seed.
/// Metrics are taken after the final epoch on the test split.
pub fn compare_curricula(
    dataset: &Dataset,
    config: &NetworkConfig,
    schedule: &TrainSchedule,
    seeds: &[u64],
    cit_source: &ParamStore,
    opts: &TrainOptions,
) -> Result<CurriculumReport> {
    let epochs = schedule.step1_epochs + schedule.step2_epochs;
    if epochs == 0 {
        return Err(Error::InvalidParam("curriculum comparison needs step1 + step2 epochs > 0".into()));
    }
    let test: Vec<&SampleRecord> = dataset.test().into_iter().take(opts.eval_limit).collect();
    if test.len() < 2 {
        return Err(Error::EmptyDataset("test split needs at least 2 records".into()));
    }
    let mut rows = Vec::new();
    let mut wins = 0;
    for &seed in seeds {
        let two = TrainSchedule {
            seed,
            finetune_epochs: 0,
            ..schedule.clone()
        };
        let single = TrainSchedule {
            step1_epochs: 0,
            step2_epochs: epochs,
            ..two.clone()
        };
        let mut pair = Vec::new();
        for (arm, s) in [(CurriculumArm::TwoStep, two), (CurriculumArm::SingleStep, single)] {
            let model = model_with_cit(config.clone(), seed, cit_source.dtype(), cit_source)?;
            let run_opts = TrainOptions {
                eval_every_epoch: false,
                run_dir: None,
                ..opts.clone()
            };
            train(dataset, &model, &s, &run_opts)?;
            let ev = evaluate(&model, dataset, &test)?;
            pair.push(ev.color_bleed);
            rows.push(CurriculumRow {
                arm,
                seed,
                color_bleed: ev.color_bleed,
                tag_fidelity: ev.tag_fidelity,
            });
        }
        if pair[0] <= pair[1] {
            wins += 1;
        }
    }
    Ok(CurriculumReport {
        epochs,
        rows,
        two_step_bleeds_less: wins,
        direction_observed: 2 * wins > seeds.len(),
    })
}
