//! Geometric mixture reference `pi_r ∝ pi_t^(1-alpha) * pi_sft^alpha`.
//!
//! The normalizer is enumerated exactly over the whole item space in log
//! space.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::catalog::{Catalog, ItemId};
use crate::data::InteractionSequence;
use crate::error::{Error, Result};
use crate::math;
use crate::policy::PolicyParams;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureReference {
    pub current: PolicyParams,
    pub anchor: PolicyParams,
    pub alpha: f64,
}

/// Mixture log-probabilities at one state together with the log-normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureEval {
    pub log_probs: Vec<f64>,
    pub log_normalizer: f64,
}

impl MixtureReference {
    pub fn new(current: PolicyParams, anchor: PolicyParams, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {alpha}")));
        }
        if current.shape() != anchor.shape() {
            return Err(Error::Structure("mixture policies have different shapes".into()));
        }
        Ok(Self { current, anchor, alpha })
    }

    pub fn evaluate(&self, catalog: &Catalog, features: &[f64]) -> Result<MixtureEval> {
        let cur = self.current.evaluate(catalog, features)?.log_marginals(catalog);
        let anc = self.anchor.evaluate(catalog, features)?.log_marginals(catalog);
        Ok(geometric_mix(&cur, &anc, self.alpha))
    }

    pub fn evaluate_seq(&self, catalog: &Catalog, s: &InteractionSequence) -> Result<MixtureEval> {
        self.evaluate(catalog, &catalog.features(s))
    }

    pub fn log_prob(&self, catalog: &Catalog, s: &InteractionSequence, i: ItemId) -> Result<f64> {
        Ok(self.evaluate_seq(catalog, s)?.log_probs[i.index()])
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        catalog: &Catalog,
        s: &InteractionSequence,
        rng: &mut R,
    ) -> Result<ItemId> {
        let ev = self.evaluate_seq(catalog, s)?;
        Ok(ItemId(math::inverse_cdf_log(&ev.log_probs, rng.random()) as u32))
    }
}

/// Normalized `(1 - alpha) * log_a + alpha * log_b`. Weights of exactly zero
/// drop their term so that `-inf` entries never produce `0 * -inf`.
pub fn geometric_mix(log_a: &[f64], log_b: &[f64], alpha: f64) -> MixtureEval {
    let term = |w: f64, x: f64| if w == 0.0 { 0.0 } else { w * x };
    let mut log_probs: Vec<f64> =
        log_a.iter().zip(log_b).map(|(&a, &b)| term(1.0 - alpha, a) + term(alpha, b)).collect();
    let log_normalizer = math::log_sum_exp(&log_probs);
    log_probs.iter_mut().for_each(|x| *x -= log_normalizer);
    MixtureEval { log_probs, log_normalizer }
}

/// `KL(p || q)` for distributions given as log-probabilities.
pub fn kl_log(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p
        .iter()
        .zip(log_q)
        .filter(|(&lp, _)| lp > f64::NEG_INFINITY)
        .map(|(&lp, &lq)| math::exp(lp) * (lp - lq))
        .sum()
}

/// `KL(pi || pi_r)` split as `(1 - alpha) KL(pi || pi_t) + alpha KL(pi || pi_sft) + c(s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlDecomposition {
    pub lhs: f64,
    /// `(1 - alpha) * KL(pi || pi_t)`.
    pub weighted_current: f64,
    /// `alpha * KL(pi || pi_sft)`.
    pub weighted_anchor: f64,
    /// Residual; equals the mixture log-normalizer and does not depend on `pi`.
    pub c_s: f64,
}

pub fn kl_decomposition_check(
    test_policy: &PolicyParams,
    reference: &MixtureReference,
    catalog: &Catalog,
    s: &InteractionSequence,
) -> Result<KlDecomposition> {
    let phi = catalog.features(s);
    let pi = test_policy.evaluate(catalog, &phi)?.log_marginals(catalog);
    let cur = reference.current.evaluate(catalog, &phi)?.log_marginals(catalog);
    let anc = reference.anchor.evaluate(catalog, &phi)?.log_marginals(catalog);
    let mix = geometric_mix(&cur, &anc, reference.alpha);
    let lhs = kl_log(&pi, &mix.log_probs);
    let weighted_current = (1.0 - reference.alpha) * kl_log(&pi, &cur);
    let weighted_anchor = reference.alpha * kl_log(&pi, &anc);
    Ok(KlDecomposition {
        lhs,
        weighted_current,
        weighted_anchor,
        c_s: lhs - weighted_current - weighted_anchor,
    })
}
