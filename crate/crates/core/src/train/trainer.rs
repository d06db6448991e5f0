use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::mpsc::sync_channel;

use scd_autograd::{Graph, ParamStore};
use serde::Serialize;

use super::batch::{batch_plan, mix_seed, Batch};
use super::checkpoint::{self, Checkpoint};
use super::optim::AdamW;
use crate::config::RunConfig;
use crate::data::{augment, SampleSource};
use crate::error::{Result, ScdError};
use crate::loss::{total_loss, LossBreakdown};
use crate::model::ScdModel;
use crate::nn::{apply_bn_updates, Ctx, Mode};

/// Returned by the interval callback of [`Trainer::run`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Parameter accounting written next to the config echo.
#[derive(Clone, Debug, Serialize)]
pub struct ModelSummary {
    pub trainable_parameters: usize,
    pub encoder_parameters: usize,
    pub bcd_parameters: usize,
    pub scd_t1_parameters: usize,
    pub scd_t2_parameters: usize,
    /// Input channels of each fusion block's 1x1 compression.
    pub fusion_concat_widths: [usize; 4],
}

impl ModelSummary {
    pub fn new(cfg: &RunConfig, store: &ParamStore) -> Self {
        let k = cfg.model.fusion_width_factor();
        Self {
            trainable_parameters: store.num_trainable(),
            encoder_parameters: store.num_trainable_with_prefix("encoder."),
            bcd_parameters: store.num_trainable_with_prefix("bcd."),
            scd_t1_parameters: store.num_trainable_with_prefix("scd_t1."),
            scd_t2_parameters: store.num_trainable_with_prefix("scd_t2."),
            fusion_concat_widths: cfg.model.stage_channels.map(|c| k * c),
        }
    }
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: ScdModel,
    pub store: ParamStore,
    pub optimizer: AdamW,
    /// Completed optimisation steps.
    pub iteration: usize,
    last_finite: Option<LossBreakdown>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (model, store) = ScdModel::new(&config.model)?;
        let mut optimizer = AdamW::new(config.optim.lr, config.optim.weight_decay);
        optimizer.grad_clip = config.optim.grad_clip;
        Ok(Self {
            config,
            model,
            store,
            optimizer,
            iteration: 0,
            last_finite: None,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        Self {
            config: ck.config,
            model: ck.model,
            store: ck.store,
            optimizer: ck.optimizer,
            iteration: ck.iteration,
            last_finite: None,
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, self.iteration, &self.config, &self.store, &self.optimizer)
    }

    /// One forward/backward/update. A non-finite loss aborts before any
    /// parameter is touched.
    pub fn step(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let cfg = &self.config;
        let graph = Graph::new();
        let ctx = Ctx::new(&graph, &self.store, Mode::Train);
        let out = self
            .model
            .forward(&ctx, ctx.constant(batch.img_t1.clone()), ctx.constant(batch.img_t2.clone()))?;
        let (loss, breakdown) = total_loss(&out, &batch.targets, &cfg.loss, cfg.model.ablation.use_sek_loss)?;
        if !breakdown.is_finite() {
            return Err(ScdError::NonFiniteLoss {
                iteration: self.iteration + 1,
                last_finite: self
                    .last_finite
                    .map_or_else(|| "none".to_string(), |b| b.csv_row(self.iteration)),
            });
        }
        let bn = ctx.take_bn_updates();
        drop(ctx);
        let grads = graph.backward(loss).into_params();
        self.optimizer.step(&mut self.store, &grads);
        apply_bn_updates(&mut self.store, &bn);
        self.iteration += 1;
        self.last_finite = Some(breakdown);
        Ok(breakdown)
    }

    /// Sample-weighted mean objective over `source` in eval mode, without
    /// augmentation or parameter updates.
    pub fn dataset_loss(&self, source: &dyn SampleSource) -> Result<LossBreakdown> {
        let cfg = &self.config;
        let bs = cfg.optim.batch_size;
        let mut acc = LossBreakdown::default();
        let mut start = 0;
        while start < source.len() {
            let end = (start + bs).min(source.len());
            let samples = (start..end).map(|i| source.get(i)).collect::<Result<Vec<_>>>()?;
            let batch = Batch::from_samples(&samples, cfg.model.num_classes)?;
            let graph = Graph::new();
            let ctx = Ctx::inference(&graph, &self.store);
            let out = self
                .model
                .forward(&ctx, ctx.constant(batch.img_t1), ctx.constant(batch.img_t2))?;
            let (_, b) = total_loss(&out, &batch.targets, &cfg.loss, cfg.model.ablation.use_sek_loss)?;
            let w = (end - start) as f64 / source.len() as f64;
            acc.ce_bcd += w * b.ce_bcd;
            acc.ce_t1 += w * b.ce_t1;
            acc.ce_t2 += w * b.ce_t2;
            acc.miou_loss += w * b.miou_loss;
            acc.sek_loss += w * b.sek_loss;
            acc.total += w * b.total;
            start = end;
        }
        Ok(acc)
    }

    /// Trains up to `config.optim.iterations`, resuming from `self.iteration`.
    ///
    /// A worker thread loads, augments and stacks batches ahead of the
    /// optimiser through a bounded queue. With `out` set, writes `config.toml`,
    /// `model.json`, `loss.csv`, periodic `checkpoint_<it>.bin` and a final
    /// `checkpoint.bin`. `on_interval` runs every `eval_interval` steps and
    /// after the last one.
    pub fn run(
        &mut self,
        source: &dyn SampleSource,
        out: Option<&Path>,
        mut on_interval: impl FnMut(&Trainer) -> Result<Control>,
    ) -> Result<Vec<LossBreakdown>> {
        if source.is_empty() {
            return Err(ScdError::data("dataset", "no samples to train on"));
        }
        let total = self.config.optim.iterations;
        let seed = self.config.model.seed;
        let plan = batch_plan(source.len(), self.config.optim.batch_size, total, seed);
        let start = self.iteration.min(total);
        let mut csv = match out {
            Some(dir) => Some(self.prepare_dir(dir)?),
            None => None,
        };
        let augment_on = self.config.data.augment;
        let classes = self.config.model.num_classes;
        let mut losses = Vec::new();
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = sync_channel::<Result<Batch>>(2);
            let plan = &plan;
            scope.spawn(move || {
                for (it, indices) in plan.iter().enumerate().skip(start) {
                    let batch = indices
                        .iter()
                        .enumerate()
                        .map(|(slot, &i)| {
                            let s = source.get(i)?;
                            Ok(if augment_on {
                                augment(&s, mix_seed(seed, (it * 1024 + slot) as u64))
                            } else {
                                s
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                        .and_then(|s| Batch::from_samples(&s, classes));
                    let failed = batch.is_err();
                    if tx.send(batch).is_err() || failed {
                        return;
                    }
                }
            });
            for batch in rx.iter() {
                let b = self.step(&batch?)?;
                let it = self.iteration;
                if let Some((w, _)) = csv.as_mut() {
                    writeln!(w, "{}", b.csv_row(it)).map_err(|e| ScdError::io("loss.csv", e))?;
                }
                losses.push(b);
                let interval = self.config.eval_interval > 0 && it % self.config.eval_interval == 0;
                if interval && it < total {
                    if let Some((_, dir)) = &csv {
                        self.save_checkpoint(&dir.join(format!("checkpoint_{it:06}.bin")))?;
                    }
                }
                if (interval || it == total) && on_interval(self)? == Control::Stop {
                    break;
                }
            }
            Ok(())
        })?;
        if let Some((mut w, dir)) = csv {
            w.flush().map_err(|e| ScdError::io(dir.join("loss.csv"), e))?;
            self.save_checkpoint(&dir.join("checkpoint.bin"))?;
        }
        Ok(losses)
    }

    fn prepare_dir(&self, dir: &Path) -> Result<(BufWriter<File>, std::path::PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| ScdError::io(dir, e))?;
        self.config.save(&dir.join("config.toml"))?;
        let summary = ModelSummary::new(&self.config, &self.store);
        let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
        let path = dir.join("model.json");
        std::fs::write(&path, json).map_err(|e| ScdError::io(&path, e))?;
        let path = dir.join("loss.csv");
        let resume = self.iteration > 0 && path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(resume)
            .write(true)
            .truncate(!resume)
            .open(&path)
            .map_err(|e| ScdError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        if !resume {
            writeln!(w, "{}", LossBreakdown::CSV_HEADER).map_err(|e| ScdError::io(&path, e))?;
        }
        Ok((w, dir.to_path_buf()))
    }
}
