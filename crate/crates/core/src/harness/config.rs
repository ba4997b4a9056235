use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arcloss::{LossConfig, UpdateOrder};
use crate::evalkit::ClassifierConfig;
use crate::flowcore::{EulerGrid, LogSnrRange};
use crate::nets::Topology;
use crate::optim::AdamWConfig;
use crate::pingpong::ScheduleGrid;
use crate::toydata::ConditionalMixtureSpec;
use crate::{Error, Result};

/// Ring-of-Gaussians data set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub modes_per_class: usize,
    pub radius: f64,
    pub std: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            classes: 4,
            modes_per_class: 2,
            radius: 4.0,
            std: 0.25,
        }
    }
}

impl DataConfig {
    pub fn spec(&self) -> Result<ConditionalMixtureSpec> {
        ConditionalMixtureSpec::ring(self.classes, self.modes_per_class, self.radius, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub time_freqs: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub head_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 16,
            time_freqs: 16,
            width: 128,
            hidden_layers: 6,
            head_width: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine-annealing end point; equal to `lr` for a constant rate.
    pub final_lr: f64,
    pub log_every: usize,
    pub validate_every: usize,
    pub validation_size: usize,
    /// Log-SNR range of the pretraining noise levels.
    pub gen_range: LogSnrRange,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iterations: 20_000,
            batch_size: 128,
            lr: 1e-3,
            final_lr: 1e-5,
            log_every: 1000,
            validate_every: 1000,
            validation_size: 2048,
            gen_range: LogSnrRange::new(-10.0, 10.0).expect("valid range"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosttrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub order: UpdateOrder,
    pub gen_steps_per_disc: usize,
    pub log_every: usize,
}

impl Default for PosttrainConfig {
    fn default() -> Self {
        PosttrainConfig {
            iterations: 5_000,
            batch_size: 128,
            gen_lr: 1e-4,
            disc_lr: 1e-4,
            order: UpdateOrder::GenThenDisc,
            gen_steps_per_disc: 1,
            log_every: 500,
        }
    }
}

/// Moment and decay settings shared by every optimizer; learning rates
/// live with each phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn adamw(&self, lr: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub samples_per_class: usize,
    /// Step counts swept by `eval`.
    pub euler_steps: Vec<usize>,
    pub pingpong_steps: Vec<usize>,
    pub k: usize,
    pub ccds_group_size: usize,
    pub sw_projections: usize,
    pub euler_grid: EulerGrid,
    pub schedule_grid: ScheduleGrid,
    /// Disable to make reports reproducible bit for bit.
    pub measure_time: bool,
    pub timing_samples: usize,
    pub timing_warmup: usize,
    pub timing_runs: usize,
    pub classifier: ClassifierConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples_per_class: 4096,
            euler_steps: vec![50, 8],
            pingpong_steps: vec![8, 4, 1],
            k: 5,
            ccds_group_size: 24,
            sw_projections: 128,
            euler_grid: EulerGrid::UniformT,
            schedule_grid: ScheduleGrid::LogSnr,
            measure_time: true,
            timing_samples: 256,
            timing_warmup: 1,
            timing_runs: 3,
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub posttrain: PosttrainConfig,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{name} must be positive")));
    }
    Ok(())
}

fn finite_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn topology(&self) -> Topology {
        Topology {
            dim: 2,
            classes: self.data.classes,
            embed_dim: self.model.embed_dim,
            time_freqs: self.model.time_freqs,
            width: self.model.width,
            hidden_layers: self.model.hidden_layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // TOML integers are signed 64-bit
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must be at most {}", i64::MAX)));
        }
        let d = &self.data;
        positive("data.classes", d.classes)?;
        positive("data.modes_per_class", d.modes_per_class)?;
        if d.modes_per_class < 2 {
            return Err(Error::Config("data.modes_per_class must be at least 2".into()));
        }
        if !(d.radius.is_finite() && d.radius > 0.0 && d.std.is_finite() && d.std > 0.0) {
            return Err(Error::Config("data.radius and data.std must be positive".into()));
        }
        let m = &self.model;
        positive("model.embed_dim", m.embed_dim)?;
        positive("model.time_freqs", m.time_freqs)?;
        positive("model.width", m.width)?;
        positive("model.hidden_layers", m.hidden_layers)?;
        positive("model.head_width", m.head_width)?;
        let p = &self.pretrain;
        positive("pretrain.batch_size", p.batch_size)?;
        positive("pretrain.log_every", p.log_every)?;
        positive("pretrain.validate_every", p.validate_every)?;
        positive("pretrain.validation_size", p.validation_size)?;
        finite_nonneg("pretrain.lr", p.lr)?;
        finite_nonneg("pretrain.final_lr", p.final_lr)?;
        let q = &self.posttrain;
        if q.batch_size < 2 {
            return Err(Error::Config("posttrain.batch_size must be at least 2".into()));
        }
        positive("posttrain.gen_steps_per_disc", q.gen_steps_per_disc)?;
        positive("posttrain.log_every", q.log_every)?;
        finite_nonneg("posttrain.gen_lr", q.gen_lr)?;
        finite_nonneg("posttrain.disc_lr", q.disc_lr)?;
        let o = &self.optimizer;
        for (name, v) in [("optimizer.beta1", o.beta1), ("optimizer.beta2", o.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(o.eps.is_finite() && o.eps > 0.0) {
            return Err(Error::Config("optimizer.eps must be positive".into()));
        }
        finite_nonneg("optimizer.weight_decay", o.weight_decay)?;
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        for (name, r) in [("loss.gen_range", self.loss.gen_range), ("pretrain.gen_range", p.gen_range)] {
            LogSnrRange::new(r.lo(), r.hi()).map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        let s = &self.loss.disc_spec;
        crate::flowcore::LogitNormalSpec::new(s.mean(), s.std(), s.shift())
            .map_err(|e| Error::Config(format!("loss.disc_spec: {e}")))?;
        let e = &self.eval;
        positive("eval.k", e.k)?;
        if e.euler_steps.contains(&0) || e.pingpong_steps.contains(&0) {
            return Err(Error::Config("eval step counts must be positive".into()));
        }
        positive("eval.sw_projections", e.sw_projections)?;
        positive("eval.timing_samples", e.timing_samples)?;
        if e.ccds_group_size < 2 {
            return Err(Error::Config("eval.ccds_group_size must be at least 2".into()));
        }
        if e.samples_per_class < e.ccds_group_size.max(e.k + 1).max(3) {
            return Err(Error::Config(
                "eval.samples_per_class must cover one CCDS group and k + 1 neighbours".into(),
            ));
        }
        if e.timing_runs < 3 {
            return Err(Error::Config("eval.timing_runs must be at least 3".into()));
        }
        let c = &e.classifier;
        positive("eval.classifier.width", c.width)?;
        positive("eval.classifier.hidden_layers", c.hidden_layers)?;
        positive("eval.classifier.train_samples", c.train_samples)?;
        positive("eval.classifier.batch_size", c.batch_size)?;
        finite_nonneg("eval.classifier.lr", c.lr)?;
        Ok(())
    }
}
