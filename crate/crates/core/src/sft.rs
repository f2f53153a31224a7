//! Pretrained initialization with a planted group bias, supervised
//! fine-tuning, and adaptation to a teacher's outputs under the objective
//! `L_item + lambda1 * L_group + lambda2 * L_KL`.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution as _, Normal};

use crate::catalog::Catalog;
use crate::data::{Example, InteractionDataset};
use crate::error::{Error, Result};
use crate::math;
use crate::policy::{accumulate_group_logit_grad, Gradient, PolicyParams};
use crate::rng;

/// Planted pretraining bias.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PretrainSpec {
    /// Planted bias per group.
    pub group_bias: Vec<f64>,
    /// Standard deviation of the per-item noise added to the item bias.
    pub item_noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Optimizer {
    #[default]
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 5,
            batch_size: 32,
            lambda1: 1.0,
            lambda2: 0.1,
            seed: 0,
            optimizer: Optimizer::GradientDescent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return Err(Error::Config("lambda1 and lambda2 must be >= 0".into()));
        }
        Ok(())
    }
}

/// `a_g = b^p(g)`, `b_i = b^p(g(i)) + eps_i`, `A = B = 0`.
pub fn init_pretrained(catalog: &Catalog, spec: &PretrainSpec) -> Result<PolicyParams> {
    if spec.group_bias.len() != catalog.n_groups() {
        return Err(Error::Config(format!(
            "group_bias has {} entries for {} groups",
            spec.group_bias.len(),
            catalog.n_groups()
        )));
    }
    if spec.group_bias.iter().any(|b| !b.is_finite())
        || !(spec.item_noise_sigma >= 0.0)
        || !spec.item_noise_sigma.is_finite()
    {
        return Err(Error::Config("pretrain spec must be finite with sigma >= 0".into()));
    }
    let mut params = PolicyParams::zeros(catalog);
    params.group_bias_mut().copy_from_slice(&spec.group_bias);
    let mut rng = rng::substream(spec.seed, "pretrain");
    let noise =
        Normal::new(0.0, spec.item_noise_sigma).map_err(|e| Error::Config(format!("item noise: {e}")))?;
    for i in catalog.items() {
        let eps = if spec.item_noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        params.item_bias_mut()[i.index()] = spec.group_bias[catalog.group_of(i).index()] + eps;
    }
    Ok(params)
}

/// Mean batch loss and its gradient.
///
/// `teacher_group_log_probs[k]` is `log pi_orig(. | s_k)` over groups for the
/// `k`-th batch example; it is required when `lambda2 > 0`.
pub fn sft_loss(
    params: &PolicyParams,
    catalog: &Catalog,
    batch: &[&Example],
    lambda1: f64,
    lambda2: f64,
    teacher_group_log_probs: Option<&[&[f64]]>,
) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if lambda2 > 0.0 {
        match teacher_group_log_probs {
            None => return Err(Error::Config("lambda2 > 0 needs teacher group distributions".into())),
            Some(t) if t.len() != batch.len() => {
                return Err(Error::Config("one teacher distribution per example required".into()))
            }
            _ => {}
        }
    }
    let mut grad = params.zeros_like();
    let mut total = 0.0;
    let mut group_coef = alloc::vec![0.0; catalog.n_groups()];
    for (k, ex) in batch.iter().enumerate() {
        let phi = catalog.features(&ex.seq);
        let ev = params.evaluate(catalog, &phi)?;
        let g = catalog.group_of(ex.target);
        total -= ev.item_log_cond[ex.target.index()] + lambda1 * ev.group_log_probs[g.index()];

        // item NLL: only the item head
        let dim = phi.len();
        for &m in catalog.members(g) {
            let mut w = math::exp(ev.item_log_cond[m.index()]);
            if m == ex.target {
                w -= 1.0;
            }
            grad.item_bias_mut()[m.index()] += w;
            let row = &mut grad.item_weights_mut()[m.index() * dim..(m.index() + 1) * dim];
            for (r, f) in row.iter_mut().zip(&phi) {
                *r += w * f;
            }
        }

        // group NLL and KL(pi_theta(.|s) || teacher(.|s)) on the group logits
        for (h, c) in group_coef.iter_mut().enumerate() {
            *c = lambda1 * math::exp(ev.group_log_probs[h]);
        }
        group_coef[g.index()] -= lambda1;
        if lambda2 > 0.0 {
            let teacher = teacher_group_log_probs.expect("checked above")[k];
            let lp = &ev.group_log_probs;
            let kl = crate::mixture::kl_log(lp, teacher);
            total += lambda2 * kl;
            for (h, c) in group_coef.iter_mut().enumerate() {
                *c += lambda2 * math::exp(lp[h]) * (lp[h] - teacher[h] - kl);
            }
        }
        accumulate_group_logit_grad(&group_coef, &phi, &mut grad);
    }
    let n = batch.len() as f64;
    grad.scale(1.0 / n);
    Ok((total / n, grad))
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    /// Full-set loss before training followed by one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

fn full_loss(
    params: &PolicyParams,
    catalog: &Catalog,
    examples: &[Example],
    lambda1: f64,
    lambda2: f64,
    teacher: Option<&[Vec<f64>]>,
) -> Result<f64> {
    let refs: Vec<&Example> = examples.iter().collect();
    let t: Option<Vec<&[f64]>> = teacher.map(|t| t.iter().map(Vec::as_slice).collect());
    Ok(sft_loss(params, catalog, &refs, lambda1, lambda2, t.as_deref())?.0)
}

fn run_gradient_descent(
    init: &PolicyParams,
    catalog: &Catalog,
    examples: &[Example],
    teacher: Option<&[Vec<f64>]>,
    config: &TrainConfig,
    stream: &str,
) -> Result<TrainOutcome> {
    config.validate()?;
    init.check_catalog(catalog)?;
    if examples.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    let lambda2 = if teacher.is_some() { config.lambda2 } else { 0.0 };
    let mut params = init.clone();
    let mut epoch_losses =
        alloc::vec![full_loss(&params, catalog, examples, config.lambda1, lambda2, teacher)?];
    let mut rng = rng::substream(config.seed, stream);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&j| &examples[j]).collect();
            let t: Option<Vec<&[f64]>> = teacher.map(|t| chunk.iter().map(|&j| t[j].as_slice()).collect());
            let (loss, grad) = sft_loss(&params, catalog, &batch, config.lambda1, lambda2, t.as_deref())
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged { epoch, batch: b },
                    other => other,
                })?;
            if !loss.is_finite() || grad.first_non_finite().is_some() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            params.axpy(-config.learning_rate, &grad);
        }
        let loss = full_loss(&params, catalog, examples, config.lambda1, lambda2, teacher)
            .map_err(|_| Error::Diverged { epoch, batch: order.len().div_ceil(config.batch_size) })?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, batch: order.len().div_ceil(config.batch_size) });
        }
        epoch_losses.push(loss);
    }
    Ok(TrainOutcome { params, epoch_losses })
}

/// Seeded mini-batch gradient descent on the item and group NLL terms.
///
/// The KL term needs a teacher and is therefore inactive here regardless of
/// `config.lambda2`; see [`adapt_to_teacher`].
pub fn train_sft(
    params: &PolicyParams,
    catalog: &Catalog,
    train: &InteractionDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    run_gradient_descent(params, catalog, train.examples(), None, config, "sft")
}

/// Re-train `params` to reproduce `teacher`: targets are teacher samples at
/// each training state and the group head is pulled towards the teacher's
/// group distribution through the KL term.
pub fn adapt_to_teacher(
    params: &PolicyParams,
    catalog: &Catalog,
    data: &InteractionDataset,
    teacher: &PolicyParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    teacher.check_catalog(catalog)?;
    let (examples, group_lp) = teacher_targets(teacher, catalog, data, config.seed)?;
    run_gradient_descent(params, catalog, &examples, Some(&group_lp), config, "adapt")
}

/// Teacher-relabelled examples and the teacher's group log-probabilities.
pub fn teacher_targets(
    teacher: &PolicyParams,
    catalog: &Catalog,
    data: &InteractionDataset,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Vec<f64>>)> {
    let mut rng = rng::substream(seed, "adapt-targets");
    let mut examples = Vec::with_capacity(data.len());
    let mut group_lp = Vec::with_capacity(data.len());
    for ex in data.examples() {
        let ev = teacher.evaluate_seq(catalog, &ex.seq)?;
        let target = ev.sample(catalog, &mut rng);
        examples.push(Example { seq: ex.seq.clone(), target });
        group_lp.push(ev.group_log_probs);
    }
    Ok((examples, group_lp))
}
