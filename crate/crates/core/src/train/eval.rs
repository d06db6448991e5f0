use std::path::Path;

use scd_autograd::{Graph, ParamStore, Tensor};

use super::batch::{check_labels, images};
use crate::data::{BiTemporalSample, SampleSource};
use crate::error::Result;
use crate::metrics::report::{emit_report, write_transitions, MetricsJson};
use crate::metrics::{Evaluation, TransitionMatrix};
use crate::model::ScdModel;
use crate::nn::Ctx;

/// Hard per-pixel predictions for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub change: Vec<bool>,
    pub sem_t1: Vec<u8>,
    pub sem_t2: Vec<u8>,
}

pub trait Predictor {
    fn predict(&self, samples: &[BiTemporalSample]) -> Result<Vec<Prediction>>;
}

/// Channel argmax of a `(B, C, H, W)` tensor, one map per batch item.
pub fn argmax_channels(t: &Tensor) -> Vec<Vec<u8>> {
    let (b, c, h, w) = t.dims4();
    let n = h * w;
    let d = t.data();
    (0..b)
        .map(|bi| {
            (0..n)
                .map(|p| {
                    let mut best = 0;
                    for k in 1..c {
                        if d[(bi * c + k) * n + p] > d[(bi * c + best) * n + p] {
                            best = k;
                        }
                    }
                    best as u8
                })
                .collect()
        })
        .collect()
}

/// Network inference in eval mode.
pub struct ModelPredictor<'a> {
    pub model: &'a ScdModel,
    pub store: &'a ParamStore,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, samples: &[BiTemporalSample]) -> Result<Vec<Prediction>> {
        let (a, b) = images(samples)?;
        let graph = Graph::new();
        let ctx = Ctx::inference(&graph, self.store);
        let out = self.model.forward(&ctx, ctx.constant(a), ctx.constant(b))?;
        let change = argmax_channels(&out.bcd.value());
        let s1 = argmax_channels(&out.sem_t1.value());
        let s2 = argmax_channels(&out.sem_t2.value());
        Ok(change
            .into_iter()
            .zip(s1)
            .zip(s2)
            .map(|((c, sem_t1), sem_t2)| Prediction {
                change: c.into_iter().map(|v| v == 1).collect(),
                sem_t1,
                sem_t2,
            })
            .collect())
    }
}

/// Test hook that predicts the ground truth.
pub struct GroundTruthPredictor;

impl Predictor for GroundTruthPredictor {
    fn predict(&self, samples: &[BiTemporalSample]) -> Result<Vec<Prediction>> {
        Ok(samples
            .iter()
            .map(|s| Prediction {
                change: s.change.clone(),
                sem_t1: s.sem_t1.clone(),
                sem_t2: s.sem_t2.clone(),
            })
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub evaluation: Evaluation,
    pub predicted_transitions: TransitionMatrix,
    pub gt_transitions: TransitionMatrix,
}

/// Adds one prediction to the accumulators.
pub fn accumulate(out: &mut EvalOutput, pred: &Prediction, gt: &BiTemporalSample) -> Result<()> {
    let ev = &mut out.evaluation;
    ev.t1.accumulate(&pred.sem_t1, &pred.change, &gt.sem_t1, &gt.change, &gt.void)?;
    ev.t2.accumulate(&pred.sem_t2, &pred.change, &gt.sem_t2, &gt.change, &gt.void)?;
    for p in 0..gt.pixels() {
        if !gt.void[p] {
            ev.bcd.add(pred.change[p] as usize, gt.change[p] as usize);
        }
    }
    ev.changed_accuracy.accumulate(&pred.sem_t1, &gt.sem_t1, &gt.change, &gt.void);
    ev.changed_accuracy.accumulate(&pred.sem_t2, &gt.sem_t2, &gt.change, &gt.void);
    out.predicted_transitions
        .accumulate(&pred.sem_t1, &pred.sem_t2, &pred.change, &gt.void)?;
    out.gt_transitions.accumulate(&gt.sem_t1, &gt.sem_t2, &gt.change, &gt.void)?;
    Ok(())
}

/// Scores every sample of `source` in order, `batch_size` at a time.
pub fn evaluate(
    predictor: &dyn Predictor,
    source: &dyn SampleSource,
    num_classes: usize,
    batch_size: usize,
) -> Result<EvalOutput> {
    let k = num_classes - 1;
    let mut out = EvalOutput {
        evaluation: Evaluation::new(num_classes),
        predicted_transitions: TransitionMatrix::new(k),
        gt_transitions: TransitionMatrix::new(k),
    };
    let mut start = 0;
    while start < source.len() {
        let end = (start + batch_size.max(1)).min(source.len());
        let samples = (start..end).map(|i| source.get(i)).collect::<Result<Vec<_>>>()?;
        for s in &samples {
            check_labels(s, num_classes)?;
        }
        let preds = predictor.predict(&samples)?;
        for (p, s) in preds.iter().zip(&samples) {
            accumulate(&mut out, p, s)?;
        }
        start = end;
    }
    Ok(out)
}

/// `metrics.json`, confusion matrices, predicted transitions
/// (`transitions.*`) and ground-truth transitions (`transitions_gt.*`).
pub fn write_report(dir: &Path, out: &EvalOutput) -> Result<MetricsJson> {
    let json = emit_report(dir, &out.evaluation, Some(&out.predicted_transitions))?;
    write_transitions(dir, "transitions_gt", &out.gt_transitions)?;
    Ok(json)
}
