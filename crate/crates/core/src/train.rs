//! Training loop, evaluation at IoU > 0.5 and the prediction dump.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use pfos_tensor::{AdamState, Grads, Graph, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::{Category, Sample};
use crate::error::{io_err, PfosError, Result};
use crate::localization::{build_target, decode, iou, loss_graph, BBox, HeadOutput, LossBreakdown};
use crate::model::{Pfos, SampleRef};

pub const METRICS_HEADER: &str = "epoch,lr,loss_total,loss_cls,loss_off,loss_rgr,loss_giou,val_acc";
pub const PREDICTIONS_HEADER: &str = "sample_id,x_t,y_t,w_t,h_t,score";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DIVERGENCE_DUMP: &str = "nonfinite_batch.txt";
/// Localization counts as correct when IoU exceeds this (strictly).
pub const IOU_THRESHOLD: f64 = 0.5;

pub fn is_correct(iou: f64) -> bool {
    iou > IOU_THRESHOLD
}

/// Model plus optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Pfos,
    pub adam: AdamState,
    pub steps: u64,
}

impl Trainer {
    pub fn new(model: Pfos) -> Self {
        let adam = AdamState::new(&model.store, model.cfg.lr);
        Trainer { model, adam, steps: 0 }
    }

    /// Mean loss over the batch, its gradient, and one Adam step at `lr`.
    /// Batch-norm running statistics are updated from the batch. A non-finite
    /// loss or gradient aborts without touching the model.
    pub fn step(&mut self, batch: &[&Sample], lr: f64) -> Result<LossBreakdown> {
        let cfg = self.model.cfg.clone();
        let targets = batch.iter().map(|s| build_target(&s.target, &cfg)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<SampleRef<'_>> = batch.iter().map(|s| SampleRef { image: &s.image, tokens: &s.tokens }).collect();
        let scale = 1.0 / batch.len() as f64;
        let mut grads = Grads::zeros_like(&self.model.store);
        let (mean, stats) = {
            let mut g = Graph::new();
            let trace = self.model.forward_batch(&mut g, &refs, true)?;
            let mut mean = LossBreakdown::default();
            let mut totals = Vec::with_capacity(batch.len());
            let mut per_sample = Vec::with_capacity(batch.len());
            for (s, t) in trace.samples.iter().zip(&targets) {
                let nodes = loss_graph(&mut g, s.head, t, &cfg)?;
                let v = nodes.values(&g);
                mean.add_scaled(&v, scale);
                per_sample.push(v);
                totals.push(nodes.total);
            }
            if !mean.total.is_finite() {
                return Err(PfosError::NonFinite(divergence_report(batch, &per_sample, self.steps)));
            }
            let mut sum = totals[0];
            for &t in &totals[1..] {
                sum = g.add(sum, t)?;
            }
            let loss = g.scale(sum, scale);
            g.backward(loss)?;
            g.accumulate_param_grads(&mut grads, 1.0);
            (mean, trace.bn_stats)
        };
        if cfg.grad_clip > 0.0 {
            let norm = grads.norm();
            if norm > cfg.grad_clip {
                grads.scale(cfg.grad_clip / norm);
            }
        }
        self.adam.lr = lr;
        match self.adam.step(&mut self.model.store, &grads) {
            Ok(()) => {}
            Err(TensorError::NonFinite { name }) => {
                let mut msg = divergence_report(batch, &[], self.steps);
                let _ = writeln!(msg, "non-finite gradient in `{name}`");
                return Err(PfosError::NonFinite(msg));
            }
            Err(e) => return Err(e.into()),
        }
        if let Some(stats) = stats {
            self.model.bn.update(&stats);
        }
        self.steps += 1;
        Ok(mean)
    }
}

fn divergence_report(batch: &[&Sample], losses: &[LossBreakdown], step: u64) -> String {
    let mut out = format!("non-finite loss at step {step}\nsample_id\tseed\tcategory\ttext\tloss\n");
    for (i, s) in batch.iter().enumerate() {
        let l = losses.get(i).map_or("-".to_string(), |l| format!("{l:?}"));
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{l}", s.id, s.seed, s.category, s.tokens.text);
    }
    out
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub val_acc: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.6}",
            self.epoch, self.lr, l.total, l.cls, l.off, l.rgr, l.giou, self.val_acc
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation accuracy.
    pub best: Pfos,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

/// Trains `cfg.epochs` epochs on `train`, halving the learning rate on
/// schedule and keeping the parameters with the best accuracy on `val`
/// (earliest epoch wins ties). With `out_dir`, writes the metrics CSV after
/// every epoch and the best checkpoint whenever it improves.
pub fn train(
    cfg: &ModelConfig,
    vocab_size: usize,
    train: &[Sample],
    val: &[Sample],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(PfosError::Dataset("training needs non-empty train and val splits".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut trainer = Trainer::new(Pfos::new(cfg, vocab_size)?);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Pfos)> = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let l = match trainer.step(&batch, lr) {
                Err(PfosError::NonFinite(msg)) => {
                    if let Some(dir) = out_dir {
                        let p = dir.join(DIVERGENCE_DUMP);
                        fs::write(&p, &msg).map_err(io_err(&p))?;
                    }
                    return Err(PfosError::NonFinite(format!("epoch {epoch}: {msg}")));
                }
                r => r?,
            };
            sum.add_scaled(&l, 1.0);
            batches += 1;
        }
        let mut mean = LossBreakdown::default();
        mean.add_scaled(&sum, 1.0 / batches as f64);
        let report = evaluate(&trainer.model, val)?;
        let row = EpochMetrics { epoch, lr, loss: mean, val_acc: report.accuracy };
        log::info!("{}", row.csv_row());
        metrics.push(row);
        if best.as_ref().is_none_or(|(acc, _, _)| report.accuracy > *acc) {
            if let Some(dir) = out_dir {
                trainer.model.save(&dir.join(BEST_CHECKPOINT))?;
            }
            best = Some((report.accuracy, epoch, trainer.model.clone()));
        }
        if let Some(dir) = out_dir {
            let p = dir.join(METRICS_FILE);
            fs::write(&p, metrics_csv(&metrics)).map_err(io_err(&p))?;
        }
    }
    let (_, best_epoch, best) = best.ok_or_else(|| PfosError::Config("epochs must be at least 1".into()))?;
    Ok(TrainOutcome { best, best_epoch, metrics })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub sample_id: usize,
    pub category: Category,
    pub bbox: BBox,
    pub score: f64,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryScore {
    pub category: Category,
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub count: usize,
    pub accuracy: f64,
    pub mean_iou: f64,
    pub per_category: Vec<CategoryScore>,
    /// Absolute + attribute queries.
    pub easy_accuracy: f64,
    /// Relation + compare queries.
    pub hard_accuracy: f64,
    pub ms_per_sample: f64,
    pub predictions: Vec<Prediction>,
}

fn fraction(preds: &[&Prediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().filter(|p| is_correct(p.iou)).count() as f64 / preds.len() as f64
}

/// Scores precomputed predictions.
pub fn score_predictions(predictions: Vec<Prediction>, ms_per_sample: f64) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(PfosError::Dataset("nothing to evaluate".into()));
    }
    let all: Vec<&Prediction> = predictions.iter().collect();
    let per_category = Category::ALL
        .into_iter()
        .filter_map(|c| {
            let sel: Vec<&Prediction> = all.iter().copied().filter(|p| p.category == c).collect();
            (!sel.is_empty()).then(|| CategoryScore { category: c, count: sel.len(), accuracy: fraction(&sel) })
        })
        .collect();
    let easy: Vec<&Prediction> = all.iter().copied().filter(|p| p.category.is_easy()).collect();
    let hard: Vec<&Prediction> = all.iter().copied().filter(|p| !p.category.is_easy()).collect();
    Ok(EvalReport {
        count: predictions.len(),
        accuracy: fraction(&all),
        mean_iou: predictions.iter().map(|p| p.iou).sum::<f64>() / predictions.len() as f64,
        per_category,
        easy_accuracy: fraction(&easy),
        hard_accuracy: fraction(&hard),
        ms_per_sample,
        predictions,
    })
}

pub fn predict_sample(model: &Pfos, s: &Sample) -> Result<(HeadOutput, Prediction)> {
    let out = model.predict(&s.image, &s.tokens)?;
    let d = decode(&out, &model.cfg);
    let p = Prediction { sample_id: s.id, category: s.category, bbox: d.bbox, score: d.score, iou: iou(&d.bbox, &s.target) };
    Ok((out, p))
}

pub fn evaluate(model: &Pfos, samples: &[Sample]) -> Result<EvalReport> {
    let start = Instant::now();
    let preds = samples.iter().map(|s| predict_sample(model, s).map(|(_, p)| p)).collect::<Result<Vec<_>>>()?;
    let ms = start.elapsed().as_secs_f64() * 1e3 / samples.len().max(1) as f64;
    score_predictions(preds, ms)
}

pub fn predictions_csv(preds: &[Prediction]) -> String {
    let mut out = format!("{PREDICTIONS_HEADER}\n");
    for p in preds {
        let b = &p.bbox;
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6},{:.6},{:.6}", p.sample_id, b.cx, b.cy, b.w, b.h, p.score);
    }
    out
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples          {}", self.count);
        let _ = writeln!(out, "accuracy@0.5     {:.4}", self.accuracy);
        let _ = writeln!(out, "mean IoU         {:.4}", self.mean_iou);
        let _ = writeln!(out, "absolute+attr    {:.4}", self.easy_accuracy);
        let _ = writeln!(out, "relation+compare {:.4}", self.hard_accuracy);
        for c in &self.per_category {
            let _ = writeln!(out, "  {:<14} {:.4} ({} samples)", c.category.as_str(), c.accuracy, c.count);
        }
        let _ = writeln!(out, "ms/sample        {:.3}", self.ms_per_sample);
        out
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "count,{}", self.count);
        let _ = writeln!(out, "accuracy,{:.6}", self.accuracy);
        let _ = writeln!(out, "mean_iou,{:.6}", self.mean_iou);
        let _ = writeln!(out, "accuracy_absolute_attribute,{:.6}", self.easy_accuracy);
        let _ = writeln!(out, "accuracy_relation_compare,{:.6}", self.hard_accuracy);
        for c in &self.per_category {
            let _ = writeln!(out, "accuracy_{},{:.6}", c.category.as_str(), c.accuracy);
        }
        let _ = writeln!(out, "ms_per_sample,{:.6}", self.ms_per_sample);
        out
    }
}
