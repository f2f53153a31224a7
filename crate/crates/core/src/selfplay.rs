//! Self-play fairness alignment.
//!
//! Each iteration builds the mixture reference `pi_r` from the current
//! policy and the frozen SFT anchor, pairs dataset targets (the fair proxy)
//! with items generated by `pi_r`, and takes gradient steps on the logistic
//! pairwise loss over `beta`-scaled log-ratios against `pi_r`.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::catalog::{Catalog, ItemId};
use crate::data::{InteractionDataset, InteractionSequence};
use crate::error::{Error, Result};
use crate::math;
use crate::metrics::{self, AccuracyReport, FairnessReport};
use crate::mixture::MixtureReference;
use crate::policy::{Gradient, PolicyParams};
use crate::rng;

/// `(s, i_fair, i_gen)`: a dataset target and a reference sample at `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub seq: InteractionSequence,
    pub i_fair: ItemId,
    pub i_gen: ItemId,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct UfoConfig {
    pub beta: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub inner_epochs: usize,
    pub learning_rate: f64,
    /// Triplets per gradient step; `None` takes one full-batch step per epoch.
    pub batch_size: Option<usize>,
    pub sample_fraction: f64,
    pub seed: u64,
    /// Stop once HR falls more than `early_stop_threshold` (relative) below
    /// its running maximum, keeping the previous iteration's policy.
    pub early_stop: bool,
    pub early_stop_threshold: f64,
}

impl Default for UfoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            alpha: 0.4,
            iterations: 4,
            inner_epochs: 1,
            learning_rate: 0.6,
            batch_size: Some(64),
            sample_fraction: 0.5,
            seed: 0,
            early_stop: false,
            early_stop_threshold: 0.05,
        }
    }
}

impl UfoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad("beta must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be >= 0");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad("sample_fraction must lie in (0, 1]");
        }
        if !(self.early_stop_threshold >= 0.0) {
            return bad("early_stop_threshold must be >= 0");
        }
        Ok(())
    }
}

/// Number of examples drawn for `fraction` of `m`.
pub fn sample_size(m: usize, fraction: f64) -> usize {
    (libm::ceil(fraction * m as f64 - 1e-9) as usize).clamp(1, m)
}

/// Sample `ceil(fraction * m)` examples without replacement and pair each
/// target with an item drawn from `reference`.
pub fn generate_triplets<R: Rng + ?Sized>(
    data: &InteractionDataset,
    reference: &MixtureReference,
    catalog: &Catalog,
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    if data.is_empty() {
        return Err(Error::Config("self-play needs nonempty data".into()));
    }
    let n = sample_size(data.len(), fraction);
    let picks = index::sample(rng, data.len(), n);
    picks
        .iter()
        .map(|j| {
            let ex = &data.examples()[j];
            let i_gen = reference.sample(catalog, &ex.seq, rng)?;
            Ok(Triplet { seq: ex.seq.clone(), i_fair: ex.target, i_gen })
        })
        .collect()
}

/// A triplet with features and reference log-probabilities cached; the
/// reference is constant while a step optimizes against it.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTriplet {
    pub features: Vec<f64>,
    pub i_fair: ItemId,
    pub i_gen: ItemId,
    pub ref_fair: f64,
    pub ref_gen: f64,
}

pub fn prepare(
    triplets: &[Triplet],
    reference: &MixtureReference,
    catalog: &Catalog,
) -> Result<Vec<PreparedTriplet>> {
    triplets
        .iter()
        .map(|t| {
            let features = catalog.features(&t.seq);
            let ev = reference.evaluate(catalog, &features)?;
            Ok(PreparedTriplet {
                ref_fair: ev.log_probs[t.i_fair.index()],
                ref_gen: ev.log_probs[t.i_gen.index()],
                features,
                i_fair: t.i_fair,
                i_gen: t.i_gen,
            })
        })
        .collect()
}

/// Mean of `softplus(-t)` with
/// `t = beta * (log pi(i)/pi_r(i) - log pi(i')/pi_r(i'))`, and its gradient.
pub fn ufo_loss(
    theta: &PolicyParams,
    reference: &MixtureReference,
    catalog: &Catalog,
    triplets: &[Triplet],
    beta: f64,
) -> Result<(f64, Gradient)> {
    ufo_loss_prepared(theta, catalog, &prepare(triplets, reference, catalog)?, beta)
}

pub fn ufo_loss_prepared(
    theta: &PolicyParams,
    catalog: &Catalog,
    triplets: &[PreparedTriplet],
    beta: f64,
) -> Result<(f64, Gradient)> {
    if triplets.is_empty() {
        return Err(Error::Config("ufo loss needs at least one triplet".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    let mut grad = theta.zeros_like();
    let mut total = 0.0;
    for (k, t) in triplets.iter().enumerate() {
        let ev = theta.evaluate(catalog, &t.features)?;
        let margin = beta
            * ((ev.log_marginal(catalog, t.i_fair) - t.ref_fair)
                - (ev.log_marginal(catalog, t.i_gen) - t.ref_gen));
        let loss = math::logistic_loss(margin);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("ufo loss at triplet {k}")));
        }
        total += loss;
        let coef = -math::sigmoid(-margin) * beta;
        if t.i_fair != t.i_gen {
            ev.accumulate_log_prob_grad(catalog, &t.features, t.i_fair, coef, &mut grad);
            ev.accumulate_log_prob_grad(catalog, &t.features, t.i_gen, -coef, &mut grad);
        }
    }
    let n = triplets.len() as f64;
    grad.scale(1.0 / n);
    if let Some(loc) = grad.first_non_finite() {
        return Err(Error::NonFinite(format!("ufo gradient at {loc}")));
    }
    Ok((total / n, grad))
}

/// `beta * (log pi_theta(i|s) - log pi_r(i|s))`: the implicit judger score up
/// to an additive constant that depends on `s` only.
pub fn judger_margin(
    theta: &PolicyParams,
    reference: &MixtureReference,
    catalog: &Catalog,
    s: &InteractionSequence,
    i: ItemId,
    beta: f64,
) -> Result<f64> {
    Ok(beta * (theta.log_prob(catalog, s, i)? - reference.log_prob(catalog, s, i)?))
}

/// Fairness and accuracy of one policy.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Snapshot {
    pub fairness: FairnessReport,
    pub accuracy: AccuracyReport,
}

/// Produces a [`Snapshot`] for a policy; lets callers plug in a parallel
/// implementation.
pub trait Evaluator {
    fn snapshot(&self, params: &PolicyParams) -> Result<Snapshot>;
}

/// Single-threaded evaluation on a held-out split.
pub struct HeldOut<'a> {
    pub catalog: &'a Catalog,
    pub data: &'a InteractionDataset,
    pub hist_ratio: &'a [f64],
    pub fairness_k: usize,
    pub accuracy_k: usize,
}

impl Evaluator for HeldOut<'_> {
    fn snapshot(&self, params: &PolicyParams) -> Result<Snapshot> {
        let lists = metrics::recommend(params, self.catalog, self.data, self.fairness_k)?;
        Ok(Snapshot {
            fairness: metrics::fairness_report(&lists, self.hist_ratio, self.catalog, self.fairness_k)?,
            accuracy: metrics::accuracy_report(params, self.catalog, self.data, self.accuracy_k)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    /// 1-based; iteration 0 is the starting policy.
    pub iteration: usize,
    pub n_triplets: usize,
    /// Triplet loss at the start of the iteration.
    pub initial_loss: f64,
    /// Triplet loss after the iteration's updates.
    pub loss: f64,
    pub snapshot: Snapshot,
}

/// Triplets of iteration `t` (1-based), drawn from the iteration's stream.
pub fn iteration_triplets(
    theta: &PolicyParams,
    anchor: &PolicyParams,
    data: &InteractionDataset,
    catalog: &Catalog,
    config: &UfoConfig,
    t: usize,
) -> Result<(MixtureReference, Vec<Triplet>)> {
    let reference = MixtureReference::new(theta.clone(), anchor.clone(), config.alpha)?;
    let mut rng = rng::substream(config.seed, &format!("ufo-iteration-{t}"));
    let triplets = generate_triplets(data, &reference, catalog, config.sample_fraction, &mut rng)?;
    Ok((reference, triplets))
}

/// One game iteration starting from `theta`.
pub fn ufo_step(
    theta: &PolicyParams,
    anchor: &PolicyParams,
    data: &InteractionDataset,
    catalog: &Catalog,
    config: &UfoConfig,
    t: usize,
    evaluator: &dyn Evaluator,
) -> Result<(PolicyParams, IterationRecord)> {
    config.validate()?;
    theta.check_catalog(catalog)?;
    anchor.check_catalog(catalog)?;
    let (reference, triplets) = iteration_triplets(theta, anchor, data, catalog, config, t)?;
    let prepared = prepare(&triplets, &reference, catalog)?;
    let beta = config.beta;
    let (initial_loss, _) = ufo_loss_prepared(theta, catalog, &prepared, beta)?;

    let mut params = theta.clone();
    let mut rng = rng::substream(config.seed, &format!("ufo-iteration-{t}-order"));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let batch = config.batch_size.unwrap_or(prepared.len());
    let mut chunk = Vec::with_capacity(batch);
    for _ in 0..config.inner_epochs {
        if config.batch_size.is_some() {
            order.shuffle(&mut rng);
        }
        for idx in order.chunks(batch) {
            chunk.clear();
            chunk.extend(idx.iter().map(|&j| prepared[j].clone()));
            let (_, grad) = ufo_loss_prepared(&params, catalog, &chunk, beta)?;
            params.axpy(-config.learning_rate, &grad);
        }
    }
    if let Some(loc) = params.first_non_finite() {
        return Err(Error::NonFinite(format!("policy after iteration {t} at {loc}")));
    }
    let (loss, _) = ufo_loss_prepared(&params, catalog, &prepared, beta)?;
    let snapshot = evaluator.snapshot(&params)?;
    Ok((params, IterationRecord { iteration: t, n_triplets: prepared.len(), initial_loss, loss, snapshot }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EarlyStopEvent {
    /// Iteration whose HR triggered the stop; its policy is discarded.
    pub iteration: usize,
    pub hr: f64,
    pub running_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UfoOutcome {
    pub params: PolicyParams,
    pub baseline: Snapshot,
    pub records: Vec<IterationRecord>,
    /// Iteration whose policy is returned (0 = the SFT policy).
    pub kept_iteration: usize,
    pub early_stop: Option<EarlyStopEvent>,
}

/// Failure mid-run, carrying the last policy that completed an iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct UfoFailure {
    pub error: Error,
    pub last_good: PolicyParams,
    pub last_good_iteration: usize,
    pub records: Vec<IterationRecord>,
}

/// Chain `config.iterations` steps from the SFT policy, which stays frozen as
/// the anchor. `observer` sees every completed iteration before the next one
/// starts.
pub fn run_ufo(
    sft_policy: &PolicyParams,
    data: &InteractionDataset,
    catalog: &Catalog,
    config: &UfoConfig,
    evaluator: &dyn Evaluator,
    mut observer: impl FnMut(&IterationRecord, &PolicyParams) -> Result<()>,
) -> core::result::Result<UfoOutcome, UfoFailure> {
    let fail = |error, last_good: &PolicyParams, it, records: &Vec<IterationRecord>| UfoFailure {
        error,
        last_good: last_good.clone(),
        last_good_iteration: it,
        records: records.clone(),
    };
    let mut records = Vec::new();
    if let Err(e) = config.validate() {
        return Err(fail(e, sft_policy, 0, &records));
    }
    let baseline = evaluator.snapshot(sft_policy).map_err(|e| fail(e, sft_policy, 0, &records))?;
    let mut running_max = baseline.accuracy.hr;
    let mut current = sft_policy.clone();
    let mut kept = 0;
    let mut early_stop = None;
    for t in 1..=config.iterations {
        let (next, record) = ufo_step(&current, sft_policy, data, catalog, config, t, evaluator)
            .map_err(|e| fail(e, &current, kept, &records))?;
        observer(&record, &next).map_err(|e| fail(e, &current, kept, &records))?;
        let hr = record.snapshot.accuracy.hr;
        records.push(record);
        if config.early_stop && hr < running_max * (1.0 - config.early_stop_threshold) {
            early_stop = Some(EarlyStopEvent { iteration: t, hr, running_max });
            break;
        }
        running_max = running_max.max(hr);
        current = next;
        kept = t;
    }
    Ok(UfoOutcome { params: current, baseline, records, kept_iteration: kept, early_stop })
}
