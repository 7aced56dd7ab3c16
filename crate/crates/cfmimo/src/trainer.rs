//! Centralized offline training and distributed-deployment evaluation.
//!
//! Training minimizes the negative mean sum rate with Adam over per-sample
//! tapes; batch members run in parallel and their gradients are reduced in
//! sample order, so results do not depend on thread scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_realization, ChannelRealization, SimRng, SystemConfig};
use crate::error::{Error, Result};
use crate::gnn::{bind_model, forward, forward_bs, forward_on_tape, GnnConfig, GnnModel, LocalCsi};
use crate::numerics::tape::Tape;
use crate::numerics::RealTensor;
use crate::rate::{sum_rate, sum_rate_on_tape, BeamformingSolution};

/// Training-loop hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience_epochs: usize,
    /// Initial learning rate.
    pub lr0: f64,
    /// Multiplier applied to the learning rate on a fixed step schedule.
    pub decay_factor: f64,
    pub decay_every_steps: usize,
    /// Size of the fixed validation set drawn once per run.
    pub validation_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            samples_per_epoch: 60_000,
            batch_size: 600,
            max_epochs: 2000,
            patience_epochs: 10,
            lr0: 0.01,
            decay_factor: 0.995,
            decay_every_steps: 100,
            validation_size: 600,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_epoch == 0
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.patience_epochs == 0
            || self.decay_every_steps == 0
            || self.validation_size == 0
        {
            return Err(Error::Config("training counts must be positive".into()));
        }
        if !self.samples_per_epoch.is_multiple_of(self.batch_size) {
            return Err(Error::Config(format!(
                "batch_size {} must divide samples_per_epoch {}",
                self.batch_size, self.samples_per_epoch
            )));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config("lr0 must be finite and >= 0".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Adam optimizer state with a stepped learning-rate decay schedule.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<RealTensor>,
    second_moment: Vec<RealTensor>,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    decay_factor: f64,
    decay_every_steps: u64,
    /// Steps rejected because a gradient was not finite.
    pub skipped_steps: usize,
}

/// What a single optimizer step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    SkippedNonFinite,
}

impl AdamState {
    pub fn new(model: &GnnModel, cfg: &TrainConfig) -> Self {
        let shapes: Vec<RealTensor> = model
            .named_params()
            .iter()
            .map(|(_, t)| RealTensor::zeros(t.shape().to_vec()))
            .collect();
        Self {
            first_moment: shapes.clone(),
            second_moment: shapes,
            step: 0,
            lr: cfg.lr0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_factor: cfg.decay_factor,
            decay_every_steps: cfg.decay_every_steps as u64,
            skipped_steps: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One Adam update over all parameters. A non-finite gradient anywhere
    /// skips the whole step (counted, parameters untouched).
    pub fn apply(&mut self, mut params: Vec<&mut RealTensor>, grads: &[RealTensor]) -> StepOutcome {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if grads.iter().any(|g| !g.all_finite()) {
            self.skipped_steps += 1;
            return StepOutcome::SkippedNonFinite;
        }
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, param) in params.iter_mut().enumerate() {
            let g = grads[idx].data();
            let m = self.first_moment[idx].data_mut();
            let v = self.second_moment[idx].data_mut();
            for ((p, &g), (m, v)) in param
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        if self.step.is_multiple_of(self.decay_every_steps) {
            self.lr *= self.decay_factor;
        }
        StepOutcome::Applied
    }
}

/// Negative mean sum rate (bits) of the model over a batch.
pub fn batch_loss(model: &GnnModel, batch: &[ChannelRealization], cfg: &SystemConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let p_max = cfg.p_max_linear();
    let noise = cfg.noise_linear();
    let rates: Result<Vec<f64>> = batch
        .par_iter()
        .map(|real| {
            let sol = forward(model, real, p_max)?;
            Ok(sum_rate(real, &sol, noise))
        })
        .collect();
    let rates = rates?;
    Ok(-rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Loss and parameter gradients of a single sample via one tape.
pub fn sample_loss_and_grads(
    model: &GnnModel,
    real: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<(f64, Vec<RealTensor>)> {
    let mut tape = Tape::new();
    let tmodel = bind_model(&mut tape, model);
    let tsol = forward_on_tape(&mut tape, &tmodel, model, real, cfg.p_max_linear())?;
    let rate = sum_rate_on_tape(&mut tape, real, &tsol, cfg.noise_linear());
    let loss = tape.scale(rate, -1.0);
    tape.backward(loss)?;
    let grads = tmodel
        .param_vars
        .iter()
        .map(|v| tape.adjoint(*v).clone())
        .collect();
    Ok((tape.value(loss).data()[0], grads))
}

/// Per-epoch training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean validation sum rate in bit/s/Hz (the negated validation loss).
    pub mean_sum_rate: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model at the best validation loss seen during the run.
    pub model: GnnModel,
    pub history: Vec<EpochRecord>,
    pub skipped_steps: usize,
}

/// Optional per-step observer (step index, batch loss, learning rate).
pub type StepObserver<'a> = &'a mut dyn FnMut(u64, f64, f64);

/// Offline training: fresh realizations every epoch, Adam updates per batch,
/// early stopping on a fixed validation set.
pub fn train(
    cfg: &SystemConfig,
    gnn_cfg: &GnnConfig,
    tcfg: &TrainConfig,
    mut step_observer: Option<StepObserver>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    gnn_cfg.validate(cfg.bs_count)?;
    tcfg.validate()?;

    let mut init_rng = SimRng::from_seed(tcfg.seed ^ 0x494e_4954); // "INIT"
    let mut val_rng = SimRng::from_seed(tcfg.seed ^ 0x0056_414c); // "VAL"
    let mut data_rng = SimRng::from_seed(tcfg.seed ^ 0x4441_5441); // "DATA"

    let mut model = init_model_checked(cfg, gnn_cfg, &mut init_rng)?;
    let mut adam = AdamState::new(&model, tcfg);

    let validation: Vec<ChannelRealization> = (0..tcfg.validation_size)
        .map(|_| sample_realization(cfg, &mut val_rng))
        .collect();

    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_model = model.clone();
    let mut epochs_since_improvement = 0usize;

    for epoch in 1..=tcfg.max_epochs {
        let samples: Vec<ChannelRealization> = (0..tcfg.samples_per_epoch)
            .map(|_| sample_realization(cfg, &mut data_rng))
            .collect();

        let mut epoch_loss_sum = 0.0;
        for batch in samples.chunks(tcfg.batch_size) {
            let per_sample: Result<Vec<(f64, Vec<RealTensor>)>> = batch
                .par_iter()
                .map(|real| sample_loss_and_grads(&model, real, cfg))
                .collect();
            let per_sample = per_sample?;

            // Deterministic reduction in sample order.
            let mut mean_grads: Vec<RealTensor> = per_sample[0].1.clone();
            for (_, grads) in per_sample.iter().skip(1) {
                for (acc, g) in mean_grads.iter_mut().zip(grads) {
                    for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += x;
                    }
                }
            }
            let inv = 1.0 / per_sample.len() as f64;
            for t in &mut mean_grads {
                for x in t.data_mut() {
                    *x *= inv;
                }
            }
            let batch_loss_value =
                per_sample.iter().map(|(l, _)| l).sum::<f64>() * inv;
            epoch_loss_sum += batch_loss_value * per_sample.len() as f64;

            adam.apply(model.params_mut(), &mean_grads);
            if let Some(observer) = step_observer.as_mut() {
                observer(adam.steps_taken(), batch_loss_value, adam.lr());
            }
        }
        let train_loss = epoch_loss_sum / tcfg.samples_per_epoch as f64;

        let val_loss = batch_loss(&model, &validation, cfg)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            mean_sum_rate: -val_loss,
            lr: adam.lr(),
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_model = model.clone();
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= tcfg.patience_epochs {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        history,
        skipped_steps: adam.skipped_steps,
    })
}

fn init_model_checked(
    cfg: &SystemConfig,
    gnn_cfg: &GnnConfig,
    rng: &mut SimRng,
) -> Result<GnnModel> {
    crate::gnn::init_model(cfg, gnn_cfg, rng)
}

/// Result of comparing analytic gradients against finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params_checked: usize,
    pub max_rel_error: f64,
    /// Canonical name of the worst parameter tensor.
    pub worst_param: String,
}

/// Compare the end-to-end loss gradient of every model parameter against
/// central finite differences (step 1e-5) on one random instance.
///
/// The discrepancy is measured relative to `max(|analytic|, |fd|, 1e-4)`, so
/// vanishing gradients are compared at an absolute floor instead of blowing
/// up the ratio.
pub fn gradient_check(
    cfg: &SystemConfig,
    gnn_cfg: &GnnConfig,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = SimRng::from_seed(seed);
    let model = crate::gnn::init_model(cfg, gnn_cfg, &mut rng)?;
    let real = sample_realization(cfg, &mut rng);

    let mut tape = Tape::new();
    let tmodel = bind_model(&mut tape, &model);
    let tsol = forward_on_tape(&mut tape, &tmodel, &model, &real, cfg.p_max_linear())?;
    let rate = sum_rate_on_tape(&mut tape, &real, &tsol, cfg.noise_linear());
    let loss = tape.scale(rate, -1.0);
    tape.backward(loss)?;

    let names: Vec<String> = model
        .named_params()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    let loss_of = |m: &GnnModel| -> Result<f64> {
        let sol = forward(m, &real, cfg.p_max_linear())?;
        Ok(-sum_rate(&real, &sol, cfg.noise_linear()))
    };

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut worst_param = String::new();
    let mut checked = 0usize;
    for (tensor_idx, name) in names.iter().enumerate() {
        let len = model.named_params()[tensor_idx].1.len();
        for entry in 0..len {
            let mut plus = model.clone();
            plus.params_mut()[tensor_idx].data_mut()[entry] += h;
            let mut minus = model.clone();
            minus.params_mut()[tensor_idx].data_mut()[entry] -= h;
            let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
            let analytic = tape.adjoint(tmodel.param_vars[tensor_idx]).data()[entry];
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-4);
            if rel > worst {
                worst = rel;
                worst_param = format!("{name}[{entry}]");
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        params_checked: checked,
        max_rel_error: worst,
        worst_param,
    })
}

/// Mean/std of the deployed sum rate over fresh trials.
#[derive(Debug, Clone)]
pub struct DeployStats {
    pub mean_sum_rate: f64,
    pub std_sum_rate: f64,
    pub per_trial: Vec<f64>,
}

/// Distributed-deployment evaluation: every BS runs its network on its own
/// [`LocalCsi`] view only; the controlling BS contributes the reflection
/// vector; the assembled solution is scored with full knowledge.
pub fn deploy_eval(
    model: &GnnModel,
    cfg: &SystemConfig,
    trials: usize,
    rng: &mut SimRng,
) -> Result<DeployStats> {
    model.check_compatible(cfg)?;
    let p_max = cfg.p_max_linear();
    let noise = cfg.noise_linear();
    let mut per_trial = Vec::with_capacity(trials);
    for _ in 0..trials {
        let real = sample_realization(cfg, rng);
        let sol = deploy_forward(model, &real, p_max)?;
        per_trial.push(sum_rate(&real, &sol, noise));
    }
    let (mean, std) = mean_and_std(&per_trial);
    Ok(DeployStats {
        mean_sum_rate: mean,
        std_sum_rate: std,
        per_trial,
    })
}

/// Assemble a solution from isolated per-BS inferences.
pub fn deploy_forward(
    model: &GnnModel,
    real: &ChannelRealization,
    p_max_linear: f64,
) -> Result<BeamformingSolution> {
    let mut w = Vec::with_capacity(model.per_bs.len());
    let mut v = None;
    for (i, net) in model.per_bs.iter().enumerate() {
        let local = LocalCsi::of(real, i);
        let (beams, maybe_v) = forward_bs(net, &local, p_max_linear, model.dims.feature_scale)?;
        w.push(beams);
        if maybe_v.is_some() {
            v = maybe_v;
        }
    }
    let v = v.ok_or_else(|| Error::Degenerate("no BS produced a reflection vector".into()))?;
    Ok(BeamformingSolution { w, v })
}

/// Sample mean and (n-1)-normalized standard deviation; a single value has
/// zero deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n > 0);
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
