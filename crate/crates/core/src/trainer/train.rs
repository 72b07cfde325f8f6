use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    adagrad_step, evaluate, save_checkpoint, Checkpoint, OptimizerState, Seeds, TrainConfig,
    TrainError,
};
use crate::data::{make_batches, semi_sort, Batch, Example};
use crate::embeddings::{EmbeddingTable, Vocab};
use crate::model::{forward, param_gradients_into, Mode, ModelConfig, ModelParams};
use crate::numerics::{mix_seed, Exec, Matrix};

const SHUFFLE_SALT: u64 = 1;
const DROPOUT_SALT: u64 = 2;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    /// Mean batch loss since the previous record.
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_accuracy: Option<f64>,
}

pub struct TrainInputs<'a> {
    pub train: &'a [Example],
    /// Used for model selection; may be empty, in which case the last
    /// evaluated state is kept.
    pub dev: &'a [Example],
    pub vocab: Arc<Vocab>,
    pub embeddings: Arc<EmbeddingTable>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The state with the highest dev accuracy (earliest on ties).
    pub best: Checkpoint,
    pub steps: u64,
    pub log: Vec<LogRecord>,
    /// Whether `target_accuracy` was reached before `max_steps`.
    pub reached_target: bool,
}

/// Mean loss and mean gradient of a batch, each pair run in train mode
/// with a dropout seed derived from `seed` and its position. Pairs are
/// spread over `exec` and summed in batch order, so the result does not
/// depend on the worker count.
pub fn batch_gradients(
    params: &ModelParams,
    config: &ModelConfig,
    embeddings: &EmbeddingTable,
    batch: &Batch,
    seed: u64,
    exec: &Exec,
) -> Result<(f64, ModelParams), TrainError> {
    let mut buffers = GradientBuffers::default();
    let loss = buffers.accumulate(params, config, embeddings, batch, seed, exec)?;
    Ok((loss, buffers.pairs.swap_remove(0)))
}

/// Per-pair gradient buffers reused from step to step, so that a training
/// step does not allocate fresh parameter-sized memory.
#[derive(Debug, Default)]
pub struct GradientBuffers {
    pairs: Vec<ModelParams>,
}

impl GradientBuffers {
    /// Same as [`batch_gradients`]; the mean gradient is left in
    /// [`GradientBuffers::mean`].
    pub fn accumulate(
        &mut self,
        params: &ModelParams,
        config: &ModelConfig,
        embeddings: &EmbeddingTable,
        batch: &Batch,
        seed: u64,
        exec: &Exec,
    ) -> Result<f64, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyDataset("batch".into()));
        }
        if self
            .pairs
            .first()
            .is_some_and(|g| g.intra.is_some() != params.intra.is_some())
        {
            self.pairs.clear();
        }
        while self.pairs.len() < batch.len() {
            self.pairs.push(params.zeros_like());
        }
        let seq = Exec::sequential();
        let losses = exec.map_mut(&mut self.pairs[..batch.len()], |i, grads| {
            grads.fill_zero();
            let mode = Mode::Train {
                seed: mix_seed(seed, i as u64),
            };
            let trace = forward(params, config, embeddings, &batch.pair(i), mode, &seq)?;
            Ok::<_, TrainError>(param_gradients_into(
                params,
                &trace,
                batch.labels[i].index(),
                grads,
            )?)
        });
        let mut total_loss = 0.0;
        for loss in losses {
            total_loss += loss?;
        }
        let (first, rest) = self.pairs.split_first_mut().expect("batch is not empty");
        for g in &rest[..batch.len() - 1] {
            first.add_assign(g)?;
        }
        let n = batch.len() as f64;
        first.scale(1.0 / n);
        Ok(total_loss / n)
    }

    /// Mean gradient of the last [`GradientBuffers::accumulate`].
    pub fn mean(&self) -> Option<&ModelParams> {
        self.pairs.first()
    }
}

/// Batch order: each epoch is a fresh seeded semi-sort of the training set.
struct Schedule<'a> {
    examples: &'a [Example],
    batch_size: usize,
    seed: u64,
    batches_per_epoch: u64,
    epoch: Option<(u64, Vec<Batch>)>,
}

impl<'a> Schedule<'a> {
    fn new(examples: &'a [Example], batch_size: usize, seed: u64) -> Self {
        Self {
            examples,
            batch_size,
            seed: mix_seed(seed, SHUFFLE_SALT),
            batches_per_epoch: examples.len().div_ceil(batch_size) as u64,
            epoch: None,
        }
    }

    fn batch(&mut self, step: u64) -> &Batch {
        let epoch = step / self.batches_per_epoch;
        if self.epoch.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let order = semi_sort(self.examples, mix_seed(self.seed, epoch));
            self.epoch = Some((epoch, make_batches(&order, self.batch_size)));
        }
        let (_, batches) = self.epoch.as_ref().expect("filled above");
        &batches[(step % self.batches_per_epoch) as usize]
    }
}

/// Log aggregation, evaluation bookkeeping and best-state selection.
struct Monitor<'a> {
    cfg: &'a TrainConfig,
    loss_sum: f64,
    loss_count: u64,
    log: Vec<LogRecord>,
    on_log: &'a mut (dyn FnMut(&LogRecord) + Send),
    best: Option<Checkpoint>,
    reached_target: bool,
}

impl<'a> Monitor<'a> {
    fn record_loss(&mut self, loss: f64) {
        self.loss_sum += loss;
        self.loss_count += 1;
    }

    fn emit(&mut self, step: u64, dev_accuracy: Option<f64>) {
        let train_loss = if self.loss_count == 0 {
            self.log.last().map_or(f64::NAN, |r| r.train_loss)
        } else {
            self.loss_sum / self.loss_count as f64
        };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        let record = LogRecord {
            step,
            train_loss,
            dev_accuracy,
        };
        (self.on_log)(&record);
        self.log.push(record);
    }

    /// Takes an evaluated state into account; true when it became the best.
    fn consider(&mut self, ckpt: Checkpoint) -> Result<bool, TrainError> {
        let improved = match (&self.best, ckpt.dev_accuracy) {
            (None, _) => true,
            (Some(_), None) => true,
            (Some(b), Some(acc)) => b.dev_accuracy.is_none_or(|best| acc > best),
        };
        if let (Some(target), Some(acc)) = (self.cfg.target_accuracy, ckpt.dev_accuracy) {
            if acc >= target {
                self.reached_target = true;
            }
        }
        if improved {
            if let Some(dir) = &self.cfg.checkpoint_dir {
                save_checkpoint(&ckpt, &dir.join("best.danli"))?;
            }
            log::info!(
                "step {}: new best dev accuracy {:?}",
                ckpt.step,
                ckpt.dev_accuracy
            );
            self.best = Some(ckpt);
        }
        Ok(improved)
    }

    fn diverged(&mut self, step: u64, what: &str) -> TrainError {
        TrainError::Diverged {
            step,
            what: what.to_string(),
            best: self.best.take().map(Box::new),
        }
    }
}

fn save_periodic(cfg: &TrainConfig, ckpt: &Checkpoint) -> Result<(), TrainError> {
    if let Some(dir) = &cfg.checkpoint_dir {
        save_checkpoint(ckpt, &dir.join(format!("step-{:010}.danli", ckpt.step)))?;
    }
    Ok(())
}

fn prepare_dir(dir: Option<&Path>) -> Result<(), TrainError> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|source| {
            TrainError::Checkpoint(super::CheckpointError::Io {
                path: dir.to_path_buf(),
                source,
            })
        })?;
    }
    Ok(())
}

/// Trains from a fresh initialization and returns the best checkpoint.
///
/// Dev accuracy is measured every `eval_every` steps and after the last
/// step. `on_log` sees every log record as it is produced.
pub fn train(
    cfg: &TrainConfig,
    model: &ModelConfig,
    inputs: &TrainInputs<'_>,
    on_log: &mut (dyn FnMut(&LogRecord) + Send),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model.validate()?;
    if inputs.train.is_empty() {
        return Err(TrainError::EmptyDataset("training set".into()));
    }
    if inputs.embeddings.dim() != model.embed_dim {
        return Err(TrainError::Config(format!(
            "embeddings have {} dimensions, model expects {}",
            inputs.embeddings.dim(),
            model.embed_dim
        )));
    }
    prepare_dir(cfg.checkpoint_dir.as_deref())?;
    let params = ModelParams::init(model, cfg.init_seed)?;
    let optimizer = OptimizerState::new(&params, cfg.learning_rate);
    let monitor = Monitor {
        cfg,
        loss_sum: 0.0,
        loss_count: 0,
        log: Vec::new(),
        on_log,
        best: None,
        reached_target: false,
    };
    if cfg.workers > 1 && !cfg.deterministic {
        train_async(cfg, model, inputs, params, optimizer, monitor)
    } else {
        train_sequential(cfg, model, inputs, params, optimizer, monitor)
    }
}

fn snapshot(
    cfg: &TrainConfig,
    model: &ModelConfig,
    inputs: &TrainInputs<'_>,
    params: ModelParams,
    optimizer: OptimizerState,
    step: u64,
) -> Checkpoint {
    Checkpoint {
        config: *model,
        vocab: Arc::clone(&inputs.vocab),
        embeddings: Arc::clone(&inputs.embeddings),
        params,
        optimizer,
        step,
        seeds: Seeds {
            init: cfg.init_seed,
            train: cfg.seed,
        },
        dev_accuracy: None,
    }
}

fn dev_accuracy(
    ckpt: &Checkpoint,
    inputs: &TrainInputs<'_>,
    exec: &Exec,
) -> Result<Option<f64>, TrainError> {
    if inputs.dev.is_empty() {
        return Ok(None);
    }
    let report = evaluate(
        &ckpt.params,
        &ckpt.config,
        &ckpt.embeddings,
        inputs.dev,
        exec,
    )?;
    Ok(Some(report.accuracy))
}

fn train_sequential(
    cfg: &TrainConfig,
    model: &ModelConfig,
    inputs: &TrainInputs<'_>,
    mut params: ModelParams,
    mut optimizer: OptimizerState,
    mut monitor: Monitor<'_>,
) -> Result<TrainOutcome, TrainError> {
    let exec = if cfg.workers > 1 {
        Exec::with_workers(cfg.workers)
    } else {
        Exec::sequential()
    };
    let mut schedule = Schedule::new(inputs.train, cfg.batch_size, cfg.seed);
    let dropout_seed = mix_seed(cfg.seed, DROPOUT_SALT);
    let mut buffers = GradientBuffers::default();
    let mut done = 0;
    while done < cfg.max_steps {
        let step = done;
        let batch = schedule.batch(step);
        let loss = buffers.accumulate(
            &params,
            model,
            &inputs.embeddings,
            batch,
            mix_seed(dropout_seed, step),
            &exec,
        )?;
        let grads = buffers.mean().expect("accumulated");
        if !loss.is_finite() {
            return Err(monitor.diverged(step, "loss"));
        }
        match optimizer.step(&mut params, grads) {
            Err(TrainError::NonFinite(what)) => return Err(monitor.diverged(step, &what)),
            other => other?,
        }
        done += 1;
        monitor.record_loss(loss);

        let eval_now = done.is_multiple_of(cfg.eval_every) || done == cfg.max_steps;
        let save_now = done.is_multiple_of(cfg.checkpoint_every);
        if eval_now || save_now {
            let mut ckpt = snapshot(cfg, model, inputs, params.clone(), optimizer.clone(), done);
            if save_now {
                save_periodic(cfg, &ckpt)?;
            }
            if eval_now {
                ckpt.dev_accuracy = dev_accuracy(&ckpt, inputs, &exec)?;
                monitor.emit(done, ckpt.dev_accuracy);
                monitor.consider(ckpt)?;
                if monitor.reached_target {
                    break;
                }
                continue;
            }
        }
        if done.is_multiple_of(cfg.log_every) {
            monitor.emit(done, None);
        }
    }
    Ok(TrainOutcome {
        best: monitor
            .best
            .take()
            .expect("the last step is always evaluated"),
        steps: done,
        log: monitor.log,
        reached_target: monitor.reached_target,
    })
}

struct Slot {
    param: Matrix,
    accum: Matrix,
}

/// Asynchronous training: every worker pulls the next step, computes its
/// batch gradient against a snapshot of the current parameters, and applies
/// Adagrad tensor by tensor, each under that tensor's own lock. Updates
/// from different workers interleave across tensors.
fn train_async(
    cfg: &TrainConfig,
    model: &ModelConfig,
    inputs: &TrainInputs<'_>,
    params: ModelParams,
    optimizer: OptimizerState,
    monitor: Monitor<'_>,
) -> Result<TrainOutcome, TrainError> {
    let lr = optimizer.learning_rate;
    let template = params.clone();
    let slots: Vec<Mutex<Slot>> = params
        .tensors()
        .into_iter()
        .zip(optimizer.accumulators)
        .map(|(p, a)| {
            Mutex::new(Slot {
                param: p.clone(),
                accum: a,
            })
        })
        .collect();
    let schedule = Mutex::new(Schedule::new(inputs.train, cfg.batch_size, cfg.seed));
    let dropout_seed = mix_seed(cfg.seed, DROPOUT_SALT);
    let next = AtomicU64::new(0);
    let completed = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let monitor = Mutex::new(monitor);
    let failure: Mutex<Option<TrainError>> = Mutex::new(None);

    let read_params = || {
        let mut p = template.clone();
        for (dst, slot) in p.tensors_mut().into_iter().zip(&slots) {
            dst.clone_from(&slot.lock().expect("slot lock").param);
        }
        p
    };
    let read_state = || {
        let mut p = template.clone();
        let mut accumulators = Vec::with_capacity(slots.len());
        for (dst, slot) in p.tensors_mut().into_iter().zip(&slots) {
            let s = slot.lock().expect("slot lock");
            dst.clone_from(&s.param);
            accumulators.push(s.accum.clone());
        }
        (
            p,
            OptimizerState {
                accumulators,
                learning_rate: lr,
            },
        )
    };

    let worker = || -> Result<(), TrainError> {
        let seq = Exec::sequential();
        let mut buffers = GradientBuffers::default();
        loop {
            if stop.load(Ordering::SeqCst) {
                return Ok(());
            }
            let step = next.fetch_add(1, Ordering::SeqCst);
            if step >= cfg.max_steps {
                return Ok(());
            }
            let batch = schedule.lock().expect("schedule lock").batch(step).clone();
            let current = read_params();
            let loss = buffers.accumulate(
                &current,
                model,
                &inputs.embeddings,
                &batch,
                mix_seed(dropout_seed, step),
                &seq,
            )?;
            let grads = buffers.mean().expect("accumulated").tensors();
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                let what = if loss.is_finite() { "gradient" } else { "loss" };
                return Err(monitor.lock().expect("monitor lock").diverged(step, what));
            }
            for (slot, g) in slots.iter().zip(grads) {
                let mut s = slot.lock().expect("slot lock");
                let Slot { param, accum } = &mut *s;
                adagrad_step(param, g, accum, lr)?;
            }
            let done = completed.fetch_add(1, Ordering::SeqCst) + 1;
            monitor.lock().expect("monitor lock").record_loss(loss);

            let eval_now = done.is_multiple_of(cfg.eval_every) || done == cfg.max_steps;
            let save_now = done.is_multiple_of(cfg.checkpoint_every);
            if eval_now || save_now {
                let (p, o) = read_state();
                let mut ckpt = snapshot(cfg, model, inputs, p, o, done);
                if save_now {
                    save_periodic(cfg, &ckpt)?;
                }
                if eval_now {
                    ckpt.dev_accuracy = dev_accuracy(&ckpt, inputs, &seq)?;
                    let mut m = monitor.lock().expect("monitor lock");
                    m.emit(done, ckpt.dev_accuracy);
                    m.consider(ckpt)?;
                    if m.reached_target {
                        stop.store(true, Ordering::SeqCst);
                    }
                    continue;
                }
            }
            if done.is_multiple_of(cfg.log_every) {
                monitor.lock().expect("monitor lock").emit(done, None);
            }
        }
    };

    std::thread::scope(|scope| {
        for _ in 0..cfg.workers {
            scope.spawn(|| {
                if let Err(e) = worker() {
                    stop.store(true, Ordering::SeqCst);
                    failure.lock().expect("failure lock").get_or_insert(e);
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }

    let mut monitor = monitor.into_inner().expect("monitor lock");
    let steps = completed.load(Ordering::SeqCst);
    if monitor.best.is_none() {
        let (p, o) = read_state();
        let mut ckpt = snapshot(cfg, model, inputs, p, o, steps);
        ckpt.dev_accuracy = dev_accuracy(&ckpt, inputs, &Exec::sequential())?;
        monitor.emit(steps, ckpt.dev_accuracy);
        monitor.consider(ckpt)?;
    }
    Ok(TrainOutcome {
        best: monitor.best.take().expect("evaluated at least once"),
        steps,
        log: monitor.log,
        reached_target: monitor.reached_target,
    })
}
