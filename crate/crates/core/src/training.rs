//! Target sequences, the joint negative log-likelihood, the optimizer loop and
//! finite-difference gradient checks.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, AnnotatedSentence, EmbeddingTable, EncodedSentence, Vocabulary};
use crate::error::{PasteError, Result};
use crate::inference::{evaluate, Prf};
use crate::model::{DecoderStepOutput, ModelConfig, PasteModel, StepNodes};
use crate::tape::{lit, Gradients, Graph, NodeId, ParamStore, Real, PROB_FLOOR};
use crate::triplet::{sort_targets, GenerationDirection, OpinionTriplet, SentimentLabel, TripletError};

/// Pointer index used by steps that carry no span.
pub const SENTINEL: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetStep {
    pub aspect_start: usize,
    pub aspect_end: usize,
    pub opinion_start: usize,
    pub opinion_end: usize,
    pub sentiment: SentimentLabel,
    /// False exactly when `sentiment` is NONE.
    pub pointer_loss_mask: bool,
}

impl TargetStep {
    pub fn from_triplet(t: &OpinionTriplet) -> Self {
        TargetStep {
            aspect_start: t.aspect.start,
            aspect_end: t.aspect.end,
            opinion_start: t.opinion.start,
            opinion_end: t.opinion.end,
            sentiment: t.sentiment,
            pointer_loss_mask: true,
        }
    }

    pub fn none() -> Self {
        TargetStep {
            aspect_start: SENTINEL,
            aspect_end: SENTINEL,
            opinion_start: SENTINEL,
            opinion_end: SENTINEL,
            sentiment: SentimentLabel::None,
            pointer_loss_mask: false,
        }
    }
}

/// Targets in the given order, then NONE up to length `j`.
pub fn target_sequence_in_order(ordered: &[OpinionTriplet], j: usize) -> Result<Vec<TargetStep>> {
    if ordered.is_empty() {
        return Err(TripletError::NoTriplets.into());
    }
    if j < ordered.len() + 1 {
        return Err(PasteError::Config(format!(
            "target length {j} cannot hold {} triplets plus a NONE step",
            ordered.len()
        )));
    }
    if let Some(t) = ordered.iter().find(|t| t.sentiment == SentimentLabel::None) {
        return Err(PasteError::Config(format!("gold triplet {:?} carries NONE", t.as_tuple())));
    }
    let mut out: Vec<TargetStep> = ordered.iter().map(TargetStep::from_triplet).collect();
    out.resize(j, TargetStep::none());
    Ok(out)
}

pub fn build_target_sequence(gold: &[OpinionTriplet], dir: GenerationDirection, j: usize) -> Result<Vec<TargetStep>> {
    target_sequence_in_order(&sort_targets(gold, dir), j)
}

/// Number of steps that contribute to the loss: up to and including the
/// first NONE.
pub fn live_steps(targets: &[TargetStep]) -> usize {
    targets
        .iter()
        .position(|t| t.sentiment == SentimentLabel::None)
        .map_or(targets.len(), |i| i + 1)
}

fn neg_log<F: Real>(p: F) -> f64 {
    -p.to_f64().unwrap_or(f64::NAN).max(PROB_FLOOR).ln()
}

fn check_index(i: usize, n: usize) -> Result<usize> {
    if i >= n {
        return Err(PasteError::Shape(format!("target index {i} outside a {n}-token sentence")));
    }
    Ok(i)
}

/// Unnormalized negative log-likelihood of one sentence.
pub fn sentence_nll<F: Real>(outputs: &[DecoderStepOutput<F>], targets: &[TargetStep]) -> Result<f64> {
    if outputs.len() != targets.len() {
        return Err(PasteError::Shape(format!(
            "{} decoder steps for {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (out, tgt) in outputs.iter().zip(&targets[..live_steps(targets)]) {
        if tgt.pointer_loss_mask {
            let n = out.aspect_start.len();
            total += neg_log(out.aspect_start[check_index(tgt.aspect_start, n)?]);
            total += neg_log(out.aspect_end[check_index(tgt.aspect_end, n)?]);
            total += neg_log(out.opinion_start[check_index(tgt.opinion_start, n)?]);
            total += neg_log(out.opinion_end[check_index(tgt.opinion_end, n)?]);
        }
        total += neg_log(out.sentiment[tgt.sentiment.index()]);
    }
    Ok(total)
}

/// Mean per-step loss over a batch: the summed NLL divided by `M · J`.
///
/// Every target list must share the batch length `J`.
pub fn compute_loss<F: Real>(batch: &[(&[DecoderStepOutput<F>], &[TargetStep])]) -> Result<f64> {
    let m = batch.len();
    if m == 0 {
        return Err(PasteError::Empty("loss over an empty batch".into()));
    }
    let j = batch[0].1.len();
    if j == 0 || batch.iter().any(|(_, t)| t.len() != j) {
        return Err(PasteError::Shape("target sequences in a batch must share a positive length".into()));
    }
    let mut total = 0.0;
    for (out, tgt) in batch {
        total += sentence_nll(out, tgt)?;
    }
    Ok(total / (m * j) as f64)
}

/// Graph form of [`sentence_nll`] over the live steps of `targets`.
pub fn sentence_nll_graph<F: Real>(g: &mut Graph<'_, F>, steps: &[StepNodes], targets: &[TargetStep]) -> Result<NodeId> {
    let live = live_steps(targets);
    if steps.len() < live {
        return Err(PasteError::Shape(format!("{} decoder steps for {live} live targets", steps.len())));
    }
    let mut terms = Vec::new();
    for (step, tgt) in steps.iter().zip(&targets[..live]) {
        if tgt.pointer_loss_mask {
            let n = g.shape(step.pointers.aspect.start).0;
            let p = &step.pointers;
            for (node, idx) in [
                (p.aspect.start, tgt.aspect_start),
                (p.aspect.end, tgt.aspect_end),
                (p.opinion.start, tgt.opinion_start),
                (p.opinion.end, tgt.opinion_end),
            ] {
                terms.push(g.nll_pick(node, check_index(idx, n)?));
            }
        }
        terms.push(g.nll_pick(step.sentiment, tgt.sentiment.index()));
    }
    Ok(g.sum(&terms))
}

/// Loss value and gradients for one sentence, scaled by `scale`.
///
/// Dropout is active when `dropout_seed` is given.
pub fn sentence_objective<F: Real>(
    model: &PasteModel<F>,
    sentence: &EncodedSentence,
    targets: &[TargetStep],
    scale: F,
    dropout_seed: Option<u64>,
) -> Result<(F, Gradients<F>)> {
    let mut g = Graph::new(&model.params);
    let net = model.network();
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let steps = net.forward(&mut g, sentence, live_steps(targets), rng.as_mut())?;
    let nll = sentence_nll_graph(&mut g, &steps, targets)?;
    let loss = g.scale(nll, scale);
    Ok((g.value(loss)[[0, 0]], g.backward(loss)))
}

fn sentence_loss_value<F: Real>(model: &PasteModel<F>, sentence: &EncodedSentence, targets: &[TargetStep], scale: F) -> Result<F> {
    let mut g = Graph::new(&model.params);
    let steps = model
        .network()
        .forward(&mut g, sentence, live_steps(targets), None::<&mut ChaCha8Rng>)?;
    let nll = sentence_nll_graph(&mut g, &steps, targets)?;
    let loss = g.scale(nll, scale);
    Ok(g.value(loss)[[0, 0]])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub runs: usize,
    /// Shuffle each sentence's targets every epoch instead of sorting them.
    pub random_order: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            epochs: 100,
            batch_size: 10,
            seed: 13,
            runs: 5,
            random_order: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PasteError::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.runs == 0 {
            return fail("epochs, batch size and runs must be positive".into());
        }
        Ok(())
    }
}

/// Adam with coupled L2 weight decay.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: i32,
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &ParamStore<F>, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| Array2::zeros(t.dim())).collect();
        Adam {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &Gradients<F>) {
        self.steps += 1;
        let (b1, b2) = (lit::<F>(self.beta1), lit::<F>(self.beta2));
        let (one, wd, eps) = (F::one(), lit::<F>(self.weight_decay), lit::<F>(self.eps));
        let step_size = lit::<F>(self.learning_rate / (1.0 - self.beta1.powi(self.steps)));
        let bc2 = lit::<F>((1.0 - self.beta2.powi(self.steps)).sqrt());
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let p = params.get_mut(id);
            let g = grads.dense(id, p.dim());
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            ndarray::Zip::from(p).and(&g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g + wd * *p;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() / bc2 + eps);
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev F1.
    pub model: PasteModel<f32>,
    pub vocab: Vocabulary,
    pub best_epoch: usize,
    pub best_dev: Prf,
    pub history: Vec<EpochLog>,
}

/// Largest gold count in `sentences` plus two.
pub fn default_max_steps(sentences: &[AnnotatedSentence]) -> usize {
    sentences.iter().map(|s| s.gold.len()).max().unwrap_or(0) + 2
}

fn norms_summary<F: Real>(params: &ParamStore<F>) -> String {
    params
        .norms()
        .iter()
        .map(|(n, v)| format!("{n}={v:.4e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// What the training loop does after an epoch callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    Stop,
}

/// Trains one model.
///
/// `on_epoch` sees every epoch's log line and, when dev F1 improved, the
/// current model.
pub fn train(
    train: &[AnnotatedSentence],
    dev: &[AnnotatedSentence],
    model_config: &ModelConfig,
    config: &TrainConfig,
    embeddings: Option<&EmbeddingTable>,
    mut on_epoch: impl FnMut(&EpochLog, Option<(&PasteModel<f32>, &Vocabulary)>) -> Result<EpochControl>,
) -> Result<TrainOutcome> {
    model_config.validate()?;
    config.validate()?;
    if dev.is_empty() {
        return Err(PasteError::Empty("development split has no sentences".into()));
    }
    let vocab = build_vocab(train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let word_init = vocab.word_embedding_init(embeddings, model_config.d_w, &mut rng)?;
    let mut model = PasteModel::<f32>::initialize(model_config.clone(), &vocab, word_init, &mut rng)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed.rotate_left(32) ^ 0x5eed);
    let encoded = train.iter().map(|s| vocab.encode(s)).collect::<Result<Vec<_>>>()?;
    let sorted: Vec<_> = train.iter().map(|s| sort_targets(&s.gold, model_config.direction)).collect();
    let mut adam = Adam::new(&model.params, config.learning_rate, config.weight_decay);
    let dropout_on = model_config.dropout > 0.0;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, Prf, ParamStore<f32>)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let golds: Vec<Vec<OpinionTriplet>> = chunk
                .iter()
                .map(|&i| {
                    if config.random_order {
                        let mut g = train[i].gold.clone();
                        g.shuffle(&mut order_rng);
                        g
                    } else {
                        sorted[i].clone()
                    }
                })
                .collect();
            let j = golds.iter().map(Vec::len).max().unwrap_or(0) + 1;
            let targets = golds
                .iter()
                .map(|g| target_sequence_in_order(g, j))
                .collect::<Result<Vec<_>>>()?;
            let seeds: Vec<u64> = chunk.iter().map(|_| rng.gen()).collect();
            let scale = 1.0 / (chunk.len() * j) as f32;
            let model_ref = &model;
            let parts = chunk
                .par_iter()
                .zip(&targets)
                .zip(&seeds)
                .map(|((&i, t), &seed)| sentence_objective(model_ref, &encoded[i], t, scale, dropout_on.then_some(seed)))
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Gradients::zeros(model.params.len());
            let mut loss = 0.0f64;
            for (l, g) in &parts {
                loss += *l as f64;
                grads.accumulate(g);
            }
            if !loss.is_finite() || !grads.is_finite() {
                return Err(PasteError::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    norms: norms_summary(&model.params),
                });
            }
            adam.step(&mut model.params, &grads);
            loss_sum += loss;
            batches += 1;
        }
        let (report, _) = evaluate(&model, &vocab, dev, model_config.max_steps)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            dev_p: report.overall.precision,
            dev_r: report.overall.recall,
            dev_f1: report.overall.f1,
        };
        let improved = best.as_ref().is_none_or(|(_, p, _)| report.overall.f1 > p.f1);
        if improved {
            best = Some((epoch, report.overall, model.params.clone()));
        }
        let control = on_epoch(&log, improved.then_some((&model, &vocab)))?;
        log::info!(
            "epoch {epoch}: loss {:.5} dev P {:.4} R {:.4} F1 {:.4}",
            log.train_loss,
            log.dev_p,
            log.dev_r,
            log.dev_f1
        );
        history.push(log);
        if control == EpochControl::Stop {
            break;
        }
    }
    let (best_epoch, best_dev, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainOutcome {
        model,
        vocab,
        best_epoch,
        best_dev,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Largest element-wise [`relative_error`].
    pub max_relative_error: f64,
    /// Largest `||a - n|| / max(||a||, ||n||, floor)` over tensors.
    pub max_tensor_relative_error: f64,
    pub max_absolute_error: f64,
    /// Worst element-wise relative error per parameter tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub checked: usize,
}

/// Denominator floor of [`relative_error`]. Central differences with step
/// 1e-5 on a loss of order 1 carry roundoff near 1e-10, so gradients below
/// this magnitude are effectively compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares analytic gradients of the one-sentence loss against central
/// differences with step `h`, for every element of every parameter tensor.
pub fn gradient_check(
    model: &PasteModel<f64>,
    sentence: &EncodedSentence,
    gold: &[OpinionTriplet],
    h: f64,
) -> Result<GradCheckReport> {
    let targets = build_target_sequence(gold, model.config.direction, gold.len() + 1)?;
    let scale = 1.0 / targets.len() as f64;
    let (_, grads) = sentence_objective(model, sentence, &targets, scale, None)?;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_tensor_relative_error: 0.0,
        max_absolute_error: 0.0,
        per_tensor: Vec::new(),
        checked: 0,
    };
    for id in model.params.ids().collect::<Vec<_>>() {
        let shape = model.params.get(id).dim();
        let analytic = grads.dense(id, shape);
        let mut worst = 0.0f64;
        let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = probe.params.get(id)[[r, c]];
                probe.params.get_mut(id)[[r, c]] = orig + h;
                let plus = sentence_loss_value(&probe, sentence, &targets, scale)?;
                probe.params.get_mut(id)[[r, c]] = orig - h;
                let minus = sentence_loss_value(&probe, sentence, &targets, scale)?;
                probe.params.get_mut(id)[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[[r, c]];
                worst = worst.max(relative_error(a, numeric));
                report.max_absolute_error = report.max_absolute_error.max((a - numeric).abs());
                diff_sq += (a - numeric).powi(2);
                a_sq += a * a;
                n_sq += numeric * numeric;
                report.checked += 1;
            }
        }
        let norm = a_sq.sqrt().max(n_sq.sqrt()).max(GRAD_CHECK_FLOOR);
        report.max_tensor_relative_error = report.max_tensor_relative_error.max(diff_sq.sqrt() / norm);
        report.max_relative_error = report.max_relative_error.max(worst);
        report.per_tensor.push((model.params.name(id).to_string(), worst));
    }
    Ok(report)
}
