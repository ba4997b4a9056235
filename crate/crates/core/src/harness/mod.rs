//! Experiment driver: pretraining, post-training variants, evaluation and
//! the ablation table, with reproducible seeding and per-run output
//! directories.

pub mod config;
mod manifest;

pub use config::{DataConfig, EvalConfig, ExperimentConfig, ModelConfig, OptimizerConfig, PosttrainConfig, PretrainConfig};
pub use manifest::{RunDir, RunManifest};

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arcloss::{arc_step, gen_half_step, rf_loss, rf_loss_with, AdversarialKind, ArcState, LossConfig, RfDraw, StepStats};
use crate::evalkit::{
    adherence_score, ccds, coverage, frechet_distance, random_directions, recall, sliced_wasserstein_with,
    time_per_sample, EmbeddingFn, IdentityEmbedding, MetricReport, MlpClassifier, METRIC_SCHEMA_VERSION,
};
use crate::flowcore::{euler_sample, NoiseLevel};
use crate::nets::{checkpoint, init_from_pretrained, NetParams, VelocityNet};
use crate::optim::AdamW;
use crate::pingpong::{make_schedule, pingpong_batch};
use crate::seeds::{derive, derive_index, rng};
use crate::toydata::{sample_balanced, sample_batch, write_sample_csv, ConditionalMixtureSpec, LabeledBatch, Prompt};
use crate::{Error, Result};

fn divergence(iteration: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(reason) => Error::Divergence { iteration, reason },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Pretraining

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainLog {
    /// `(iteration, training loss)` every `log_every` iterations.
    pub train: Vec<(usize, f64)>,
    /// `(iteration, validation loss)` on a fixed batch and noise draw.
    pub validation: Vec<(usize, f64)>,
    pub best_iteration: usize,
    pub best: Option<NetParams>,
}

impl PretrainLog {
    pub fn initial_validation(&self) -> Option<f64> {
        self.validation.first().map(|v| v.1)
    }

    pub fn final_validation(&self) -> Option<f64> {
        self.validation.last().map(|v| v.1)
    }
}

pub fn init_velocity(cfg: &ExperimentConfig) -> Result<VelocityNet> {
    VelocityNet::new(cfg.topology(), &mut rng(derive(cfg.seed, "pretrain-init")))
}

/// Cosine interpolation from `lr` at step 0 to `final_lr` at the last step.
pub fn cosine_lr(lr: f64, final_lr: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr;
    }
    let frac = step as f64 / (total - 1) as f64;
    final_lr + 0.5 * (lr - final_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Runs the rectified-flow loop in place. On divergence `net` holds the
/// last good parameters.
pub fn train_velocity(cfg: &ExperimentConfig, net: &mut VelocityNet) -> Result<PretrainLog> {
    let spec = cfg.data.spec()?;
    let p = &cfg.pretrain;
    let range = p.gen_range;
    let mut vrng = rng(derive(cfg.seed, "pretrain-validation"));
    let val = sample_batch(&spec, p.validation_size, &mut vrng)?;
    let val_draw = RfDraw::sample(val.len(), val.dim(), &range, &mut vrng);
    let data_seed = derive(cfg.seed, "pretrain-data");
    let noise_seed = derive(cfg.seed, "pretrain-noise");
    let mut opt = AdamW::new(cfg.optimizer.adamw(p.lr), net.params());
    let mut log = PretrainLog::default();
    let validate = |net: &VelocityNet, i: usize, log: &mut PretrainLog| -> Result<()> {
        let (l, _) = rf_loss_with(net, &val, &val_draw).map_err(divergence(i))?;
        if log.validation.iter().all(|&(_, b)| l < b) {
            log.best_iteration = i;
            log.best = Some(net.params().clone());
        }
        log.validation.push((i, l));
        info!("pretrain {i:>6}  validation loss {l:.5}");
        Ok(())
    };
    validate(net, 0, &mut log)?;
    for i in 0..p.iterations {
        let batch = sample_batch(&spec, p.batch_size, &mut rng(derive_index(data_seed, i as u64)))?;
        let mut noise = rng(derive_index(noise_seed, i as u64));
        let (loss, grads) = rf_loss(net, &batch, &mut noise, &range).map_err(divergence(i))?;
        opt.set_lr(cosine_lr(p.lr, p.final_lr, i, p.iterations));
        opt.step(net.params_mut(), &grads).map_err(divergence(i))?;
        let done = i + 1;
        if done % p.log_every == 0 {
            log.train.push((done, loss));
            info!("pretrain {done:>6}  loss {loss:.5}");
        }
        if done % p.validate_every == 0 || done == p.iterations {
            validate(net, done, &mut log)?;
        }
    }
    Ok(log)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub log: PretrainLog,
}

/// Pretrains and writes `pretrain_final.ckpt`, `pretrain_best.ckpt` and
/// `pretrain_loss.csv`. A divergence writes `pretrain_last_good.ckpt`.
pub fn pretrain(cfg: &ExperimentConfig, run: &RunDir, manifest: &mut RunManifest) -> Result<PretrainOutcome> {
    let seed = derive(cfg.seed, "pretrain-init");
    for label in ["pretrain-init", "pretrain-data", "pretrain-noise", "pretrain-validation"] {
        manifest.seeds.insert(label.into(), derive(cfg.seed, label));
    }
    manifest.write(run)?;
    let mut net = init_velocity(cfg)?;
    let log = match train_velocity(cfg, &mut net) {
        Ok(log) => log,
        Err(e) => {
            let path = run.checkpoint("pretrain_last_good.ckpt");
            checkpoint::save_velocity(&net, seed, &path)?;
            manifest.checkpoints.push(run.relative(&path));
            return Err(e);
        }
    };
    let final_path = run.checkpoint("pretrain_final.ckpt");
    checkpoint::save_velocity(&net, seed, &final_path)?;
    let mut best = net.clone();
    if let Some(p) = &log.best {
        best.params_mut().load_values(p.data().to_vec())?;
    }
    let best_path = run.checkpoint("pretrain_best.ckpt");
    checkpoint::save_velocity(&best, seed, &best_path)?;
    write_loss_csv(&run.file("pretrain_loss.csv"), &log)?;
    manifest.checkpoints.push(run.relative(&final_path));
    manifest.checkpoints.push(run.relative(&best_path));
    manifest.write(run)?;
    Ok(PretrainOutcome {
        final_checkpoint: final_path,
        best_checkpoint: best_path,
        log,
    })
}

fn write_loss_csv(path: &Path, log: &PretrainLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kind", "iteration", "loss"])?;
    for (kind, rows) in [("train", &log.train), ("validation", &log.validation)] {
        for (i, l) in rows {
            w.write_record([kind.to_string(), i.to_string(), format!("{l:e}")])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Post-training

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Arc,
    NoContrastive,
    LeastSquares,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Arc, Variant::NoContrastive, Variant::LeastSquares];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Arc => "arc",
            Variant::NoContrastive => "no_contrastive",
            Variant::LeastSquares => "least_squares",
        }
    }

    pub fn loss_config(self, base: &LossConfig) -> LossConfig {
        let mut c = *base;
        match self {
            Variant::Arc => {}
            Variant::NoContrastive => c.lambda_c = 0.0,
            Variant::LeastSquares => c.adversarial = AdversarialKind::LeastSquares,
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?} (arc, no_contrastive, least_squares)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct UpdateCounters {
    pub gen_updates: usize,
    pub disc_updates: usize,
    pub contrastive_evaluations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PosttrainLog {
    pub counters: UpdateCounters,
    pub logged: Vec<(usize, StepStats)>,
    /// The most recent steps, kept for divergence dumps.
    pub recent: VecDeque<(usize, StepStats)>,
}

const RECENT_STEPS: usize = 32;

pub fn init_arc_state(cfg: &ExperimentConfig, pretrained: &VelocityNet) -> Result<ArcState> {
    let mut head_rng = rng(derive(cfg.seed, "posttrain-head"));
    let (gen, disc) = init_from_pretrained(pretrained, cfg.model.head_width, &mut head_rng)?;
    Ok(ArcState {
        gen_opt: AdamW::new(cfg.optimizer.adamw(cfg.posttrain.gen_lr), gen.params()),
        disc_opt: AdamW::new(cfg.optimizer.adamw(cfg.posttrain.disc_lr), disc.params()),
        gen,
        disc,
    })
}

/// Alternating updates in place. Every variant sees the same data and noise
/// streams, so variants differ only in their losses.
pub fn train_arc(cfg: &ExperimentConfig, state: &mut ArcState, variant: Variant, log: &mut PosttrainLog) -> Result<()> {
    let spec = cfg.data.spec()?;
    let p = &cfg.posttrain;
    let loss = variant.loss_config(&cfg.loss);
    let gen_data = derive(cfg.seed, "posttrain-data-gen");
    let disc_data = derive(cfg.seed, "posttrain-data-disc");
    let noise_seed = derive(cfg.seed, "posttrain-noise");
    let extra = p.gen_steps_per_disc - 1;
    for i in 0..p.iterations {
        let mut noise = rng(derive_index(noise_seed, i as u64));
        for j in 0..extra {
            let idx = (i * p.gen_steps_per_disc + j + 1) as u64;
            let b = sample_batch(&spec, p.batch_size, &mut rng(derive_index(gen_data, idx)))?;
            gen_half_step(state, &b, &loss, &mut noise).map_err(divergence(i))?;
            log.counters.gen_updates += 1;
        }
        let idx = (i * p.gen_steps_per_disc) as u64;
        let bg = sample_batch(&spec, p.batch_size, &mut rng(derive_index(gen_data, idx)))?;
        let bd = sample_batch(&spec, p.batch_size, &mut rng(derive_index(disc_data, i as u64)))?;
        let stats = arc_step(state, &bg, &bd, &loss, p.order, &mut noise).map_err(divergence(i))?;
        log.counters.gen_updates += 1;
        log.counters.disc_updates += 1;
        if stats.contrastive_loss.is_some() {
            log.counters.contrastive_evaluations += 1;
        }
        if log.recent.len() == RECENT_STEPS {
            log.recent.pop_front();
        }
        log.recent.push_back((i, stats));
        let done = i + 1;
        if done % p.log_every == 0 {
            log.logged.push((done, stats));
            info!(
                "{variant} {done:>6}  G {:.4}  D {:.4}  C {}  D_gen {:.3}  D_real {:.3}",
                stats.gen_loss,
                stats.disc_adversarial_loss,
                stats.contrastive_loss.map_or("-".into(), |c| format!("{c:.4}")),
                stats.mean_delta_gen,
                stats.mean_delta_real
            );
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PosttrainOutcome {
    pub generator_checkpoint: PathBuf,
    pub discriminator_checkpoint: PathBuf,
    pub log: PosttrainLog,
}

#[derive(Serialize)]
struct DivergenceDump<'a> {
    variant: Variant,
    error: String,
    counters: UpdateCounters,
    recent: Vec<&'a (usize, StepStats)>,
}

/// Post-trains one variant and writes `<variant>_gen.ckpt` and
/// `<variant>_disc.ckpt`. On divergence the last good networks are saved
/// as `<variant>_last_good_*.ckpt` next to `<variant>_diagnostics.json`.
pub fn posttrain(
    cfg: &ExperimentConfig,
    pretrained: &VelocityNet,
    variant: Variant,
    run: &RunDir,
    manifest: &mut RunManifest,
) -> Result<PosttrainOutcome> {
    for label in ["posttrain-head", "posttrain-data-gen", "posttrain-data-disc", "posttrain-noise"] {
        manifest.seeds.insert(label.into(), derive(cfg.seed, label));
    }
    manifest.write(run)?;
    let seed = derive(cfg.seed, "posttrain-head");
    let mut state = init_arc_state(cfg, pretrained)?;
    let mut log = PosttrainLog::default();
    if let Err(e) = train_arc(cfg, &mut state, variant, &mut log) {
        let dump = DivergenceDump {
            variant,
            error: e.to_string(),
            counters: log.counters,
            recent: log.recent.iter().collect(),
        };
        let path = run.file(&format!("{variant}_diagnostics.json"));
        let text = serde_json::to_string_pretty(&dump).expect("dump serializes");
        fs::write(&path, text).map_err(|err| Error::io(&path, err))?;
        let g = run.checkpoint(&format!("{variant}_last_good_gen.ckpt"));
        let d = run.checkpoint(&format!("{variant}_last_good_disc.ckpt"));
        checkpoint::save_velocity(&state.gen, seed, &g)?;
        checkpoint::save_discriminator(&state.disc, seed, &d)?;
        manifest.checkpoints.push(run.relative(&g));
        manifest.checkpoints.push(run.relative(&d));
        return Err(e);
    }
    let g = run.checkpoint(&format!("{variant}_gen.ckpt"));
    let d = run.checkpoint(&format!("{variant}_disc.ckpt"));
    checkpoint::save_velocity(&state.gen, seed, &g)?;
    checkpoint::save_discriminator(&state.disc, seed, &d)?;
    manifest.checkpoints.push(run.relative(&g));
    manifest.checkpoints.push(run.relative(&d));
    manifest.write(run)?;
    Ok(PosttrainOutcome {
        generator_checkpoint: g,
        discriminator_checkpoint: d,
        log,
    })
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Euler(usize),
    PingPong(usize),
}

impl Sampler {
    pub fn steps(self) -> usize {
        match self {
            Sampler::Euler(n) | Sampler::PingPong(n) => n,
        }
    }

    pub fn kind(self) -> &'static str {
        match self {
            Sampler::Euler(_) => "euler",
            Sampler::PingPong(_) => "pingpong",
        }
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.kind(), self.steps())
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown sampler {s:?} (expected euler_N or pingpong_N)"));
        let (kind, n) = s.rsplit_once('_').ok_or_else(bad)?;
        let n: usize = n.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        match kind {
            "euler" => Ok(Sampler::Euler(n)),
            "pingpong" => Ok(Sampler::PingPong(n)),
            _ => Err(bad()),
        }
    }
}

/// Generates one sample per prompt. Item `i` takes its initial noise (and,
/// for ping-pong, its re-noising draws) from a stream seeded by
/// `derive_index(seed, i)`, so every sampler starts from the same noise.
pub fn generate(
    gen: &VelocityNet,
    cfg: &ExperimentConfig,
    sampler: Sampler,
    prompts: &[Prompt],
    seed: u64,
) -> Result<Array2<f64>> {
    let dim = gen.topology().dim;
    match sampler {
        Sampler::Euler(steps) => {
            let mut x = Array2::zeros((prompts.len(), dim));
            for (i, mut row) in x.rows_mut().into_iter().enumerate() {
                let mut r = rng(derive_index(seed, i as u64));
                row.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
            }
            euler_sample(gen, x.view(), prompts, steps, NoiseLevel::NOISE, cfg.eval.euler_grid)
        }
        Sampler::PingPong(steps) => {
            let schedule = make_schedule(steps, &cfg.loss.gen_range, cfg.eval.schedule_grid)?;
            pingpong_batch(gen, &schedule, prompts, dim, seed, None)
        }
    }
}

/// Fixed evaluation material shared by every configuration of a run.
pub struct EvalContext {
    pub spec: ConditionalMixtureSpec,
    pub classifier: MlpClassifier,
    /// Reference set for recall, coverage and Frechet distance.
    pub reference: LabeledBatch,
    /// Independent ground-truth draw for sliced Wasserstein.
    pub ground_truth: LabeledBatch,
    pub directions: Array2<f64>,
    pub prompts: Vec<Prompt>,
    pub sample_seed: u64,
}

impl EvalContext {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = cfg.data.spec()?;
        let e = &cfg.eval;
        let classifier = MlpClassifier::fit(&spec, &e.classifier, &mut rng(derive(cfg.seed, "eval-classifier")))?;
        let reference = sample_balanced(&spec, e.samples_per_class, &mut rng(derive(cfg.seed, "eval-reference")))?;
        let ground_truth = sample_balanced(&spec, e.samples_per_class, &mut rng(derive(cfg.seed, "eval-ground-truth")))?;
        let directions = random_directions(e.sw_projections, spec.dim(), &mut rng(derive(cfg.seed, "eval-directions")));
        let prompts = reference.prompts().to_vec();
        Ok(EvalContext {
            spec,
            classifier,
            reference,
            ground_truth,
            directions,
            prompts,
            sample_seed: derive(cfg.seed, "eval-samples"),
        })
    }
}

/// Metadata copied into a report.
#[derive(Debug, Clone, Default)]
pub struct ReportMeta {
    pub label: String,
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint: String,
    pub samples: String,
}

fn class_rows(batch: &LabeledBatch, prompt: Prompt) -> Array2<f64> {
    let idx: Vec<usize> = batch
        .prompts()
        .iter()
        .enumerate()
        .filter(|(_, p)| **p == prompt)
        .map(|(i, _)| i)
        .collect();
    batch.samples().select(Axis(0), &idx)
}

/// Per-class metrics averaged over classes, CCDS over consecutive groups of
/// `ccds_group_size` generations per class, adherence over all samples.
pub fn score(cfg: &ExperimentConfig, ctx: &EvalContext, generated: &LabeledBatch) -> Result<[f64; 7]> {
    let e = &cfg.eval;
    let k = ctx.spec.num_classes() as f64;
    let (mut rec, mut cov, mut fd, mut sw) = (0.0, 0.0, 0.0, 0.0);
    let mut id_groups = Vec::new();
    let mut feat_groups = Vec::new();
    for p in ctx.spec.prompts() {
        let g = class_rows(generated, p);
        let r = class_rows(&ctx.reference, p);
        let t = class_rows(&ctx.ground_truth, p);
        rec += recall(r.view(), g.view(), e.k)?;
        cov += coverage(r.view(), g.view(), e.k)?;
        fd += frechet_distance(r.view(), g.view())?;
        sw += sliced_wasserstein_with(t.view(), g.view(), ctx.directions.view())?;
        let groups = g.nrows() / e.ccds_group_size;
        for j in 0..groups {
            let chunk = g.slice(s![j * e.ccds_group_size..(j + 1) * e.ccds_group_size, ..]);
            id_groups.push(IdentityEmbedding.embed(chunk)?);
            feat_groups.push(ctx.classifier.embed(chunk)?);
        }
    }
    let adherence = adherence_score(generated, &ctx.classifier)?;
    Ok([
        ccds(&id_groups)?,
        ccds(&feat_groups)?,
        rec / k,
        cov / k,
        fd / k,
        sw / k,
        adherence,
    ])
}

/// Generates the evaluation set with `sampler` and scores it.
pub fn evaluate(
    gen: &VelocityNet,
    cfg: &ExperimentConfig,
    sampler: Sampler,
    ctx: &EvalContext,
    meta: &ReportMeta,
) -> Result<(MetricReport, LabeledBatch)> {
    let x = generate(gen, cfg, sampler, &ctx.prompts, ctx.sample_seed)?;
    let generated = LabeledBatch::new(x, ctx.prompts.clone())?;
    let [ccds, ccds_features, recall, coverage, fd, sw, adherence] = score(cfg, ctx, &generated)?;
    let wall = if cfg.eval.measure_time {
        let n = cfg.eval.timing_samples;
        let prompts: Vec<Prompt> = (0..n).map(|i| ctx.prompts[i % ctx.prompts.len()]).collect();
        time_per_sample(
            || generate(gen, cfg, sampler, &prompts, ctx.sample_seed).map(|x| x.nrows()),
            cfg.eval.timing_warmup,
            cfg.eval.timing_runs,
        )?
    } else {
        0.0
    };
    let report = MetricReport {
        schema_version: METRIC_SCHEMA_VERSION,
        label: meta.label.clone(),
        sampler: sampler.to_string(),
        steps: sampler.steps(),
        seed: meta.seed,
        config_hash: meta.config_hash.clone(),
        checkpoint: meta.checkpoint.clone(),
        ccds,
        ccds_features,
        recall,
        coverage,
        fd,
        sw,
        adherence,
        wall_seconds_per_sample: wall,
        samples: meta.samples.clone(),
    };
    report.validate()?;
    Ok((report, generated))
}

/// Loads a velocity checkpoint and sweeps the configured step counts.
/// Samplers that do not match the checkpoint kind are evaluated with a
/// warning.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    ckpt: &Path,
    run: &RunDir,
    manifest: &mut RunManifest,
) -> Result<Vec<MetricReport>> {
    let (gen, _) = checkpoint::load_velocity(ckpt)?;
    if *gen.topology() != cfg.topology() {
        warn!("checkpoint topology differs from the config; using the checkpoint's");
    }
    let name = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let pretrained = name.starts_with("pretrain");
    let ctx = EvalContext::new(cfg)?;
    let mut samplers: Vec<Sampler> = cfg.eval.euler_steps.iter().map(|&n| Sampler::Euler(n)).collect();
    samplers.extend(cfg.eval.pingpong_steps.iter().map(|&n| Sampler::PingPong(n)));
    let mut reports = Vec::new();
    for sampler in samplers {
        if pretrained != matches!(sampler, Sampler::Euler(_)) {
            warn!("evaluating {name} with {sampler}, which does not match how it was trained");
        }
        let label = format!("{name}@{sampler}");
        let samples = run.samples(&format!("{name}_{sampler}.csv"));
        let meta = ReportMeta {
            label,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            checkpoint: ckpt.display().to_string(),
            samples: run.relative(&samples),
        };
        let (report, batch) = evaluate(&gen, cfg, sampler, &ctx, &meta)?;
        write_sample_csv(&samples, &batch, Some(ctx.sample_seed))?;
        reports.push(report);
    }
    write_reports(&reports, run, manifest)?;
    Ok(reports)
}

fn write_reports(reports: &[MetricReport], run: &RunDir, manifest: &mut RunManifest) -> Result<()> {
    let csv = run.file("metrics.csv");
    let json = run.file("metrics.json");
    MetricReport::write_csv(reports, &csv)?;
    MetricReport::write_json(reports, &json)?;
    for p in [&csv, &json] {
        let rel = run.relative(p);
        if !manifest.metric_reports.contains(&rel) {
            manifest.metric_reports.push(rel);
        }
    }
    manifest.write(run)
}

// ---------------------------------------------------------------------------
// Ablation table

/// The seven table rows: `(label, network, sampler)`.
pub fn ablation_rows() -> [(&'static str, Option<Variant>, Sampler); 7] {
    [
        ("pretrained@50", None, Sampler::Euler(50)),
        ("pretrained@8", None, Sampler::Euler(8)),
        ("arc@8", Some(Variant::Arc), Sampler::PingPong(8)),
        ("arc@4", Some(Variant::Arc), Sampler::PingPong(4)),
        ("arc@1", Some(Variant::Arc), Sampler::PingPong(1)),
        ("no_contrastive@8", Some(Variant::NoContrastive), Sampler::PingPong(8)),
        ("least_squares@8", Some(Variant::LeastSquares), Sampler::PingPong(8)),
    ]
}

/// Pretrains, post-trains all three variants, and evaluates the seven
/// table rows into `metrics.csv` / `metrics.json`. Rows finished before a
/// failure are still written.
pub fn ablation_table(cfg: &ExperimentConfig, run: &RunDir, manifest: &mut RunManifest) -> Result<Vec<MetricReport>> {
    let mut reports = Vec::new();
    let result = ablation_rows_into(cfg, run, manifest, &mut reports);
    let written = write_reports(&reports, run, manifest);
    result?;
    written?;
    Ok(reports)
}

fn ablation_rows_into(
    cfg: &ExperimentConfig,
    run: &RunDir,
    manifest: &mut RunManifest,
    reports: &mut Vec<MetricReport>,
) -> Result<()> {
    let pre = pretrain(cfg, run, manifest)?;
    let (pretrained, _) = checkpoint::load_velocity(&pre.final_checkpoint)?;
    let ctx = EvalContext::new(cfg)?;
    for label in ["eval-classifier", "eval-reference", "eval-ground-truth", "eval-directions", "eval-samples"] {
        manifest.seeds.insert(label.into(), derive(cfg.seed, label));
    }
    let mut current: Option<(Variant, VelocityNet, PathBuf)> = None;
    for (label, variant, sampler) in ablation_rows() {
        let (net, ckpt) = match variant {
            None => (&pretrained, pre.final_checkpoint.clone()),
            Some(v) => {
                if current.as_ref().map(|c| c.0) != Some(v) {
                    info!("post-training {v}");
                    let out = posttrain(cfg, &pretrained, v, run, manifest)?;
                    let (g, _) = checkpoint::load_velocity(&out.generator_checkpoint)?;
                    current = Some((v, g, out.generator_checkpoint));
                }
                let c = current.as_ref().expect("just set");
                (&c.1, c.2.clone())
            }
        };
        let samples = run.samples(&format!("{}.csv", label.replace('@', "_")));
        let meta = ReportMeta {
            label: label.into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            checkpoint: run.relative(&ckpt),
            samples: run.relative(&samples),
        };
        let (report, batch) = evaluate(net, cfg, sampler, &ctx, &meta)?;
        write_sample_csv(&samples, &batch, Some(ctx.sample_seed))?;
        info!("{label:<18} sw {:.4}  adherence {:.4}  ccds {:.4}", report.sw, report.adherence, report.ccds);
        reports.push(report);
    }
    Ok(())
}
