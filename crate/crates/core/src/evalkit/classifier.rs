use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{normalize_rows, EmbeddingFn};
use crate::nets::layers::{silu, silu_backward, Affine};
use crate::nets::{Gradients, NetParams};
use crate::optim::{AdamW, AdamWConfig};
use crate::toydata::{sample_batch, ConditionalMixtureSpec, LabeledBatch};
use crate::{Error, Result};

/// Class-probability model used to score prompt adherence.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn is_trained(&self) -> bool;
    /// Row-wise class probabilities.
    fn probabilities(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

/// Predicts `1/K` for every class.
#[derive(Debug, Clone, Copy)]
pub struct UniformClassifier {
    pub classes: usize,
}

impl Classifier for UniformClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn is_trained(&self) -> bool {
        true
    }

    fn probabilities(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(Array2::from_elem((x.nrows(), self.classes), 1.0 / self.classes as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub width: usize,
    pub hidden_layers: usize,
    pub train_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            width: 32,
            hidden_layers: 2,
            train_samples: 8192,
            epochs: 20,
            batch_size: 128,
            lr: 3e-3,
        }
    }
}

/// SiLU MLP with a softmax read-out.
#[derive(Debug, Clone)]
pub struct MlpClassifier {
    params: NetParams,
    hidden: Vec<Affine>,
    out: Affine,
    dim: usize,
    classes: usize,
    trained: bool,
}

struct Tape {
    acts: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

impl MlpClassifier {
    pub fn new<R: Rng + ?Sized>(dim: usize, classes: usize, cfg: &ClassifierConfig, rng: &mut R) -> Result<Self> {
        if dim == 0 || classes < 2 || cfg.width == 0 || cfg.hidden_layers == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid classifier shape: dim {dim}, classes {classes}, {cfg:?}"
            )));
        }
        let mut params = NetParams::new();
        let mut fan_in = dim;
        let mut hidden = Vec::new();
        for i in 0..cfg.hidden_layers {
            hidden.push(Affine::declare(&mut params, &format!("hidden.{i}"), fan_in, cfg.width));
            fan_in = cfg.width;
        }
        let out = Affine::declare(&mut params, "out", fan_in, classes);
        for a in hidden.iter().chain([&out]) {
            let bound = (6.0 / a.fan_in(&params) as f64).sqrt();
            a.init_uniform(&mut params, bound, rng);
        }
        Ok(MlpClassifier {
            params,
            hidden,
            out,
            dim,
            classes,
            trained: false,
        })
    }

    /// Trains a fresh classifier on samples drawn from the mixture.
    pub fn fit<R: Rng + ?Sized>(spec: &ConditionalMixtureSpec, cfg: &ClassifierConfig, rng: &mut R) -> Result<Self> {
        let mut clf = Self::new(spec.dim(), spec.num_classes(), cfg, rng)?;
        let data = sample_batch(spec, cfg.train_samples, rng)?;
        clf.train(&data, cfg, rng)?;
        Ok(clf)
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Tape)> {
        Error::check_dim(self.dim, x.ncols())?;
        let mut acts = vec![x.to_owned()];
        let mut pre = Vec::new();
        for a in &self.hidden {
            let z = a.forward(&self.params, &acts.last().unwrap().view());
            acts.push(silu(&z));
            pre.push(z);
        }
        let logits = self.out.forward(&self.params, &acts.last().unwrap().view());
        Ok((logits, Tape { acts, pre }))
    }

    /// Minibatch cross-entropy training with AdamW.
    pub fn train<R: Rng + ?Sized>(&mut self, data: &LabeledBatch, cfg: &ClassifierConfig, rng: &mut R) -> Result<()> {
        Error::check_dim(self.dim, data.dim())?;
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: cfg.lr,
                weight_decay: 0.0,
                ..Default::default()
            },
            &self.params,
        );
        let mut order: Vec<usize> = (0..data.len()).collect();
        let bs = cfg.batch_size.max(1);
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(bs) {
                let x = data.samples().select(Axis(0), chunk);
                let (logits, tape) = self.forward(x.view())?;
                let mut d = softmax_rows(logits);
                for (r, &i) in chunk.iter().enumerate() {
                    d[[r, data.prompts()[i].class_id()]] -= 1.0;
                }
                d /= chunk.len() as f64;
                let mut g = Gradients::zeros_like(&self.params);
                let mut da = self
                    .out
                    .backward(&self.params, &tape.acts.last().unwrap().view(), &d, Some(&mut g), true)
                    .unwrap();
                for (i, a) in self.hidden.iter().enumerate().rev() {
                    let dz = silu_backward(&tape.pre[i], &da);
                    da = a
                        .backward(&self.params, &tape.acts[i].view(), &dz, Some(&mut g), i > 0)
                        .unwrap_or_default();
                }
                opt.step(&mut self.params, &g)?;
            }
        }
        self.trained = true;
        Ok(())
    }

    /// Fraction of rows whose most probable class is the labelled one.
    pub fn accuracy(&self, data: &LabeledBatch) -> Result<f64> {
        let p = self.probabilities(data.samples())?;
        let correct = p
            .rows()
            .into_iter()
            .zip(data.prompts())
            .filter(|(row, c)| {
                let best = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i);
                best == Some(c.class_id())
            })
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    /// Last hidden layer activations.
    pub fn features(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (_, mut tape) = self.forward(x)?;
        Ok(tape.acts.pop().expect("at least one layer"))
    }
}

impl Classifier for MlpClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn is_trained(&self) -> bool {
        self.trained
    }

    fn probabilities(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (logits, _) = self.forward(x)?;
        Ok(softmax_rows(logits))
    }
}

/// Penultimate classifier features, L2-normalized.
impl EmbeddingFn for MlpClassifier {
    fn embed(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(normalize_rows(self.features(x)?))
    }
}

/// Mean probability the classifier assigns to each sample's requested
/// class.
pub fn adherence_score(gen: &LabeledBatch, classifier: &dyn Classifier) -> Result<f64> {
    if !classifier.is_trained() {
        return Err(Error::UntrainedClassifier);
    }
    let p = classifier.probabilities(gen.samples())?;
    let mut sum = 0.0;
    for (row, c) in p.rows().into_iter().zip(gen.prompts()) {
        if c.class_id() >= classifier.num_classes() {
            return Err(Error::PromptOutOfRange {
                class_id: c.class_id(),
                classes: classifier.num_classes(),
            });
        }
        sum += row[c.class_id()];
    }
    Ok(sum / gen.len() as f64)
}
