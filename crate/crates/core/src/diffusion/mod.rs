//! Diffusion schedule, forward corruption, conditional training step and
//! reverse sampler.
//!
//! The forward process corrupts a clean sample in one shot,
//! `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) z`, then conditional values
//! are restored on masked channels before the network sees the tensor.
//! The loss compares predicted noise against the injected noise over the
//! generation channels. The reverse sampler removes the per-step noise
//! portion and re-imposes the conditional values at every step.

pub mod conditions;
mod train;

pub use conditions::{
    encode_conditions, ConditionInputs, ConditionMode, ConditionSet, DailyStats,
};
pub use train::{train, EpochLoss, TrainConfig, TrainItem, TrainOutcome, TrainingObjective};

use crate::denoiser::DenoiserNet;
use crate::nn::{Graph, Tensor, VarId};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("diffusion step {t} outside (0, {total}]")]
    StepOutOfRange { t: usize, total: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("all channels are conditioned; nothing to generate")]
    NothingToGenerate,
    #[error("unsupported conditioning mask: {0}")]
    UnsupportedMask(String),
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("non-finite values during sampling at step {step}")]
    Divergence { step: usize },
    #[error("weather required to condition {0} but missing")]
    MissingWeather(chrono::NaiveDate),
    #[error("daily statistics required to condition {0} but missing")]
    MissingStats(chrono::NaiveDate),
}

/// Linear beta schedule with its alpha and cumulative-product sequences.
/// Step indices are 1-based: `t` in `(0, T]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Defaults: T = 200, beta in [1e-4, 0.02].
    pub fn default_linear() -> Self {
        Self::linear(200, 1e-4, 0.02).expect("default schedule is valid")
    }

    /// Betas interpolate `beta0..beta1` inclusive over `t_steps` points.
    pub fn linear(t_steps: usize, beta0: f64, beta1: f64) -> Result<Self, DiffusionError> {
        if t_steps < 1 {
            return Err(DiffusionError::InvalidSchedule("T must be >= 1".into()));
        }
        if !(beta0 > 0.0 && beta0 <= beta1 && beta1 < 1.0) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "need 0 < beta0 <= beta1 < 1, got beta0={beta0}, beta1={beta1}"
            )));
        }
        let beta: Vec<f64> = if t_steps == 1 {
            vec![beta0]
        } else {
            (0..t_steps)
                .map(|i| beta0 + (beta1 - beta0) * i as f64 / (t_steps - 1) as f64)
                .collect()
        };
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(t_steps);
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t < 1 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange { t, total: self.steps() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// Posterior standard deviation `sigma_t = sqrt(beta_tilde_t)` with
    /// `sigma_1 = 0`.
    pub fn sigma(&self, t: usize) -> f64 {
        if t == 1 {
            return 0.0;
        }
        let beta_tilde =
            (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t);
        beta_tilde.sqrt()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// One-shot forward corruption at step `t`.
pub fn corrupt(
    x0: &Array2<f64>,
    t: usize,
    noise: &Array2<f64>,
    schedule: &DiffusionSchedule,
) -> Result<Array2<f64>, DiffusionError> {
    schedule.check_step(t)?;
    if x0.dim() != noise.dim() {
        return Err(DiffusionError::ShapeMismatch {
            expected: format!("{:?}", x0.dim()),
            got: format!("{:?}", noise.dim()),
        });
    }
    let ab = schedule.alpha_bar(t);
    Ok(x0.mapv(|v| ab.sqrt() * v) + noise.mapv(|v| (1.0 - ab).sqrt() * v))
}

/// One reverse-transition step from `x_t` to `x_{t-1}`.
pub fn reverse_step(
    xt: &Array2<f64>,
    t: usize,
    eps_pred: &Array2<f64>,
    schedule: &DiffusionSchedule,
    noise: &Array2<f64>,
) -> Result<Array2<f64>, DiffusionError> {
    schedule.check_step(t)?;
    if xt.dim() != eps_pred.dim() || xt.dim() != noise.dim() {
        return Err(DiffusionError::ShapeMismatch {
            expected: format!("{:?}", xt.dim()),
            got: format!("{:?} / {:?}", eps_pred.dim(), noise.dim()),
        });
    }
    let alpha = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    let coef = (1.0 - alpha) / (1.0 - ab).sqrt();
    let sigma = schedule.sigma(t);
    let mut out = Array2::zeros(xt.dim());
    ndarray::Zip::from(&mut out)
        .and(xt)
        .and(eps_pred)
        .and(noise)
        .for_each(|o, &x, &e, &z| {
            *o = (x - coef * e) / alpha.sqrt() + sigma * z;
        });
    Ok(out)
}

/// A noise predictor over the full channel stack. `x` is
/// `(batch, channels, len)` with conditions restored, `cond` is the
/// concatenation of the masked clean signal and the mask, and `steps`
/// carries one 1-based diffusion step per batch item.
pub trait NoisePredictor {
    fn predict(&self, x: &Tensor, cond: &Tensor, steps: &[usize]) -> Tensor;
}

impl NoisePredictor for DenoiserNet {
    fn predict(&self, x: &Tensor, cond: &Tensor, steps: &[usize]) -> Tensor {
        self.denoiser_forward(x, cond, steps)
            .expect("diffusion pipeline pre-validates denoiser inputs")
    }
}

/// A minibatch of clean scaled signals with their conditions, sampled
/// noise and step indices.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    /// `(batch, 2, len)` clean scaled generation channels.
    pub x0: Tensor,
    pub conditions: Vec<ConditionSet>,
    /// Standard normal, same shape as `x0`.
    pub noise: Tensor,
    /// 1-based step indices, uniform over `(0, T]`.
    pub steps: Vec<usize>,
}

impl TrainingBatch {
    /// Draw noise and steps for the given signals.
    pub fn draw(
        x0: Tensor,
        conditions: Vec<ConditionSet>,
        schedule: &DiffusionSchedule,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let noise = Tensor::from_shape_fn(x0.dim(), |_| rng.sample(StandardNormal));
        let steps = (0..x0.dim().0)
            .map(|_| rng.gen_range(1..=schedule.steps()))
            .collect();
        Self { x0, conditions, noise, steps }
    }

    fn validate(&self, schedule: &DiffusionSchedule) -> Result<(), DiffusionError> {
        let (b, ch, l) = self.x0.dim();
        if ch != 2 {
            return Err(DiffusionError::ShapeMismatch {
                expected: "(B, 2, L) signals".into(),
                got: format!("{:?}", self.x0.dim()),
            });
        }
        if self.noise.dim() != (b, ch, l) {
            return Err(DiffusionError::ShapeMismatch {
                expected: format!("{:?}", self.x0.dim()),
                got: format!("{:?}", self.noise.dim()),
            });
        }
        if self.conditions.len() != b || self.steps.len() != b {
            return Err(DiffusionError::ShapeMismatch {
                expected: format!("{b} conditions and steps"),
                got: format!("{} / {}", self.conditions.len(), self.steps.len()),
            });
        }
        for t in &self.steps {
            schedule.check_step(*t)?;
        }
        let cond_ch = self.conditions[0].channels.nrows();
        for c in &self.conditions {
            c.validate(l)?;
            if c.channels.nrows() != cond_ch {
                return Err(DiffusionError::ShapeMismatch {
                    expected: format!("{cond_ch} condition channels"),
                    got: format!("{}", c.channels.nrows()),
                });
            }
        }
        Ok(())
    }
}

/// Assembled network inputs for one batch: the corrupted sample with
/// conditional values restored, the conditioning input and the clean
/// full stack.
pub struct AssembledBatch {
    /// `(B, K, L)` — corrupted generation channels, restored conditions.
    pub x_bar: Tensor,
    /// `(B, 2K, L)` — concat of masked clean signal and mask.
    pub cond_input: Tensor,
    /// `(B, K, L)` clean full stack.
    pub x0_full: Tensor,
    pub mask: Vec<u8>,
}

/// Corrupt the full sample, then restore conditional values on masked
/// channels, and build the conditioning input `[x0 * M, M]`.
pub fn assemble_training_input(
    batch: &TrainingBatch,
    schedule: &DiffusionSchedule,
) -> Result<AssembledBatch, DiffusionError> {
    batch.validate(schedule)?;
    let (b, _, l) = batch.x0.dim();
    let mask = batch.conditions[0].mask.clone();
    let k = mask.len();

    let mut x0_full = Tensor::zeros((b, k, l));
    for bi in 0..b {
        for ch in 0..2 {
            for t in 0..l {
                x0_full[[bi, ch, t]] = batch.x0[[bi, ch, t]];
            }
        }
        for (ci, row) in batch.conditions[bi].channels.rows().into_iter().enumerate() {
            for t in 0..l {
                x0_full[[bi, 2 + ci, t]] = row[t];
            }
        }
    }

    // corrupt every channel, then restore the masked (conditional) ones
    let mut x_bar = Tensor::zeros((b, k, l));
    for bi in 0..b {
        let ab = schedule.alpha_bar(batch.steps[bi]);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        for ch in 0..k {
            for t in 0..l {
                // channels beyond the signal have no drawn noise; they are
                // overwritten by the restoration below
                let z = if ch < 2 { batch.noise[[bi, ch, t]] } else { 0.0 };
                x_bar[[bi, ch, t]] = sa * x0_full[[bi, ch, t]] + sn * z;
            }
        }
        for ch in 0..k {
            if mask[ch] == 1 {
                for t in 0..l {
                    x_bar[[bi, ch, t]] = x0_full[[bi, ch, t]];
                }
            }
        }
    }

    let mut cond_input = Tensor::zeros((b, 2 * k, l));
    for bi in 0..b {
        for ch in 0..k {
            let m = mask[ch] as f64;
            for t in 0..l {
                cond_input[[bi, ch, t]] = x0_full[[bi, ch, t]] * m;
                cond_input[[bi, k + ch, t]] = m;
            }
        }
    }

    Ok(AssembledBatch { x_bar, cond_input, x0_full, mask })
}

/// Mean squared error between predicted and injected noise over the
/// generation channels. Evaluation path; no gradients.
pub fn training_step<N: NoisePredictor>(
    batch: &TrainingBatch,
    net: &N,
    schedule: &DiffusionSchedule,
) -> Result<f64, DiffusionError> {
    let assembled = assemble_training_input(batch, schedule)?;
    let pred = net.predict(&assembled.x_bar, &assembled.cond_input, &batch.steps);
    let (b, _, l) = batch.x0.dim();
    let mut acc = 0.0;
    for bi in 0..b {
        for ch in 0..2 {
            for t in 0..l {
                let d = pred[[bi, ch, t]] - batch.noise[[bi, ch, t]];
                acc += d * d;
            }
        }
    }
    Ok(acc / (b * 2 * l) as f64)
}

/// Training loss on a graph, with gradients flowing to the bound network
/// parameters only. Returns `(loss node, parameter leaf ids)`.
pub fn training_loss_graph(
    g: &mut Graph,
    net: &DenoiserNet,
    batch: &TrainingBatch,
    schedule: &DiffusionSchedule,
    objective: TrainingObjective,
) -> Result<(VarId, Vec<VarId>), DiffusionError> {
    let assembled = assemble_training_input(batch, schedule)?;
    let x_id = g.leaf(assembled.x_bar.clone());
    let c_id = g.leaf(assembled.cond_input.clone());
    let bound = net.forward_graph(g, x_id, c_id, &batch.steps);

    let loss = match objective {
        TrainingObjective::NoiseOnGeneration => {
            let pred_gen = g.slice_channels(bound.output, 0, 2);
            let target = g.leaf(batch.noise.clone());
            let diff = g.sub(pred_gen, target);
            let sq = g.square(diff);
            g.mean_all(sq)
        }
        // Ablation: compare the raw prediction to the clean signal over
        // the conditioned channels, as printed in the original recipe.
        TrainingObjective::SignalOnConditions => {
            let k = assembled.mask.len();
            let (b, _, l) = batch.x0.dim();
            let mut mask_t = Tensor::zeros((1, k, 1));
            for (ch, &m) in assembled.mask.iter().enumerate() {
                mask_t[[0, ch, 0]] = m as f64;
            }
            let cond_count = assembled.mask.iter().filter(|&&m| m == 1).count().max(1);
            let m_id = g.leaf(mask_t);
            let x0_id = g.leaf(assembled.x0_full.clone());
            let diff = g.sub(bound.output, x0_id);
            let masked = g.mul(diff, m_id);
            let sq = g.square(masked);
            let sum0 = g.sum_axis(sq, 0);
            let sum1 = g.sum_axis(sum0, 1);
            let sum = g.sum_axis(sum1, 2);
            g.scale(sum, 1.0 / (b * cond_count * l) as f64)
        }
    };
    Ok((loss, bound.param_ids))
}

/// Observer hook: called with `(t, state)` after every reverse step, the
/// state already carrying re-imposed conditional values.
pub fn sample_with_observer<N: NoisePredictor>(
    net: &N,
    conditions: &ConditionSet,
    schedule: &DiffusionSchedule,
    seed: u64,
    seq_len: usize,
    mut observer: impl FnMut(usize, &Array2<f64>),
) -> Result<Array2<f64>, DiffusionError> {
    conditions.validate(seq_len)?;
    let k = conditions.total_channels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::from_shape_fn((k, seq_len), |_| rng.sample::<f64, _>(StandardNormal));

    let restore = |x: &mut Array2<f64>| {
        for (ci, row) in conditions.channels.rows().into_iter().enumerate() {
            for t in 0..seq_len {
                x[[2 + ci, t]] = row[t];
            }
        }
    };
    restore(&mut x);

    let mut cond_input = Tensor::zeros((1, 2 * k, seq_len));
    for ch in 0..k {
        let m = conditions.mask[ch] as f64;
        for t in 0..seq_len {
            if ch >= 2 {
                cond_input[[0, ch, t]] = conditions.channels[[ch - 2, t]] * m;
            }
            cond_input[[0, k + ch, t]] = m;
        }
    }

    for t in (1..=schedule.steps()).rev() {
        let mut xt = Tensor::zeros((1, k, seq_len));
        xt.slice_mut(ndarray::s![0, .., ..]).assign(&x);
        let eps = net.predict(&xt, &cond_input, &[t]);
        let eps2 = eps.slice(ndarray::s![0, .., ..]).to_owned();
        let z = Array2::from_shape_fn((k, seq_len), |_| rng.sample::<f64, _>(StandardNormal));
        x = reverse_step(&x, t, &eps2, schedule, &z)?;
        restore(&mut x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::Divergence { step: t });
        }
        observer(t, &x);
    }
    Ok(x.slice(ndarray::s![0..2, ..]).to_owned())
}

/// Generate one scaled profile `(2, seq_len)` for the given conditions.
/// Deterministic under `seed`.
pub fn sample<N: NoisePredictor>(
    net: &N,
    conditions: &ConditionSet,
    schedule: &DiffusionSchedule,
    seed: u64,
    seq_len: usize,
) -> Result<Array2<f64>, DiffusionError> {
    sample_with_observer(net, conditions, schedule, seed, seq_len, |_, _| {})
}
