//! SGD with momentum, weight decay and a step-decay learning-rate schedule.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;

use crate::error::{check_len, Error, Result};
use crate::model::{accuracy_on, loss_and_grad, LossContext, ParamVector};
use crate::numerics::{DenseVector, RngStream};
use crate::pruning::Mask;

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub rewind_step: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            epochs: 60,
            batch_size: 32,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_epochs: vec![30, 45],
            decay_factor: 0.1,
            rewind_step: 200,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be > 0, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return bad(format!("decay_factor must be > 0, got {}", self.decay_factor));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad("decay_epochs must be strictly increasing".into());
        }
        if self.decay_epochs.iter().any(|&e| e >= self.epochs) {
            return bad("decay_epochs must be < epochs".into());
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, n_samples: usize) -> usize {
        self.epochs * self.steps_per_epoch(n_samples)
    }

    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        let passed = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.lr0 * self.decay_factor.powi(passed as i32)
    }
}

/// Learning rate at a global optimizer step; a decay boundary takes effect
/// at the first step of its epoch.
pub fn lr_at(hp: &Hyperparams, step: usize, steps_per_epoch: usize) -> f64 {
    hp.lr_for_epoch(step / steps_per_epoch.max(1))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Global epoch index of each entry.
    pub epochs: Vec<usize>,
    /// Sample-weighted mean minibatch loss over the epoch.
    pub train_loss: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    /// Learning rate in effect at the epoch's last step.
    pub lr: Vec<f64>,
    pub steps: usize,
    /// Not serialized, so records stay byte-stable across runs.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// How a particular training call is started.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Global step the run starts at: the run executes steps
    /// `schedule_offset..total_steps` of the learning-rate schedule.
    pub schedule_offset: usize,
    /// Selects the data-order stream (re-seeded per IMP level/variant).
    pub data_stream: u64,
    /// Replaces the schedule with a constant learning rate for a fixed
    /// number of epochs (fine-tuning).
    pub constant_lr: Option<(f64, usize)>,
    /// Keep a parameter snapshot at the end of every epoch.
    pub keep_trajectory: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_params: ParamVector,
    /// Parameters after `hp.rewind_step` optimizer steps of this call.
    pub rewind: ParamVector,
    pub record: TrainRecord,
    pub trajectory: Vec<ParamVector>,
}

/// Momentum SGD state. Updates follow
/// `buf = μ·buf + (g + λ·w)`, `w -= lr·buf`, with masked coordinates held at
/// exactly zero.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    buf: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(dim: usize, momentum: f64, weight_decay: f64) -> Self {
        SgdMomentum {
            momentum,
            weight_decay,
            buf: vec![0.0; dim],
        }
    }

    pub fn step(&mut self, w: &mut [f64], grad: &[f64], lr: f64, mask: &Mask) {
        debug_assert_eq!(w.len(), grad.len());
        for (i, &on) in mask.bits().iter().enumerate() {
            if !on {
                w[i] = 0.0;
                self.buf[i] = 0.0;
                continue;
            }
            let g = grad[i] + self.weight_decay * w[i];
            self.buf[i] = self.momentum * self.buf[i] + g;
            w[i] -= lr * self.buf[i];
        }
    }
}

/// Row order of one epoch, chunked into minibatches (short final batch kept).
pub fn epoch_order(n: usize, batch_size: usize, epoch: usize, rng: RngStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng.child(epoch as u64).rng());
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Trains `start` on `ctx` (the full training context) with minibatch SGD.
///
/// Data order for global epoch `e` is the permutation of
/// `(hp.seed, opts.data_stream)` at epoch `e`, so a run started at a
/// schedule offset sees the same epochs it would have in an uninterrupted
/// run with the same stream.
pub fn train(
    ctx: &LossContext,
    test: &LossContext,
    start: &ParamVector,
    mask: &Mask,
    hp: &Hyperparams,
    opts: &RunOptions,
) -> Result<TrainOutcome> {
    hp.validate()?;
    check_len(ctx.spec().param_count(), start.len())?;
    check_len(start.len(), mask.len())?;
    if start
        .as_slice()
        .iter()
        .zip(mask.bits())
        .any(|(&x, &on)| !on && x != 0.0)
    {
        return Err(Error::Precondition(
            "start vector is nonzero at masked coordinates".into(),
        ));
    }
    let n = ctx.n_samples();
    let spe = hp.steps_per_epoch(n);
    let (first_step, end_step, lr_of): (usize, usize, Box<dyn Fn(usize) -> f64>) =
        match opts.constant_lr {
            Some((lr, epochs)) => {
                if !(lr > 0.0 && lr.is_finite()) || epochs == 0 {
                    return Err(Error::Config("constant learning rate run needs lr > 0 and epochs > 0".into()));
                }
                (0, epochs * spe, Box::new(move |_| lr))
            }
            None => {
                let total = hp.total_steps(n);
                if opts.schedule_offset >= total {
                    return Err(Error::Precondition(format!(
                        "schedule offset {} is past the last step {}",
                        opts.schedule_offset,
                        total - 1
                    )));
                }
                (
                    opts.schedule_offset,
                    total,
                    Box::new(move |s| lr_at(hp, s, spe)),
                )
            }
        };

    let timer = Instant::now();
    let data_rng = RngStream::new(hp.seed, opts.data_stream);
    let mut w = start.as_slice().to_vec();
    let mut opt = SgdMomentum::new(w.len(), hp.momentum, hp.weight_decay);
    let mut rewind = if hp.rewind_step == 0 { Some(w.clone()) } else { None };
    let mut record = TrainRecord::default();
    let mut trajectory = Vec::new();

    let mut step = first_step;
    let mut local = 0usize;
    while step < end_step {
        let epoch = step / spe;
        let epoch_batches = epoch_order(n, hp.batch_size, epoch, data_rng);
        let skip = step - epoch * spe;
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        let mut lr = lr_of(step);
        for batch in epoch_batches.iter().skip(skip) {
            if step >= end_step {
                break;
            }
            lr = lr_of(step);
            let bctx = ctx.subset(batch);
            let wv = DenseVector::from_vec(w.clone());
            let gr = match loss_and_grad(&bctx, &wv, mask) {
                Ok(g) => g,
                Err(Error::NumericalFailure(_)) => {
                    return Err(Error::Divergence {
                        level: None,
                        step,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            if !(gr.loss <= DIVERGENCE_LOSS) {
                return Err(Error::Divergence {
                    level: None,
                    step,
                    loss: gr.loss,
                });
            }
            loss_sum += gr.loss * batch.len() as f64;
            count += batch.len();
            opt.step(&mut w, gr.gradient.as_slice(), lr, mask);
            if let Some(i) = w.iter().position(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    level: None,
                    step,
                    loss: w[i],
                });
            }
            step += 1;
            local += 1;
            if local == hp.rewind_step {
                rewind = Some(w.clone());
            }
        }
        let wv = DenseVector::from_vec(w.clone());
        record.epochs.push(epoch);
        record.train_loss.push(loss_sum / count.max(1) as f64);
        record.test_accuracy.push(accuracy_on(test, &wv, mask)?);
        record.lr.push(lr);
        if opts.keep_trajectory {
            trajectory.push(wv);
        }
    }
    record.steps = local;
    record.wall_time_secs = timer.elapsed().as_secs_f64();
    let final_params = DenseVector::from_vec(w);
    let rewind = rewind
        .map(DenseVector::from_vec)
        .unwrap_or_else(|| final_params.clone());
    Ok(TrainOutcome {
        final_params,
        rewind,
        record,
        trajectory,
    })
}
