//! Interaction sequences, datasets and the synthetic world they are drawn
//! from.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::catalog::{Catalog, GroupId, ItemId};
use crate::error::{Error, Result};
use crate::math;
use crate::rng;

/// Ordered item history `s = (i_1, ..., i_L)`, `L >= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InteractionSequence(Vec<ItemId>);

impl InteractionSequence {
    pub fn new(items: Vec<ItemId>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Validation("interaction sequence must not be empty".into()));
        }
        Ok(Self(items))
    }

    pub fn items(&self) -> &[ItemId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub seq: InteractionSequence,
    pub target: ItemId,
}

/// `(sequence, target)` pairs plus the historical group ratio of the
/// sequence items (targets are not counted).
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    examples: Vec<Example>,
    hist_ratio: Vec<f64>,
}

impl InteractionDataset {
    pub fn new(examples: Vec<Example>, catalog: &Catalog) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Validation("dataset has no examples".into()));
        }
        let mut counts = alloc::vec![0u64; catalog.n_groups()];
        for (k, ex) in examples.iter().enumerate() {
            if !catalog.contains(ex.target) {
                return Err(Error::Validation(format!("example {k}: target {} outside catalog", ex.target)));
            }
            for &item in ex.seq.items() {
                if !catalog.contains(item) {
                    return Err(Error::Validation(format!("example {k}: sequence {item} outside catalog")));
                }
                counts[catalog.group_of(item).index()] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        let hist_ratio = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self { examples, hist_ratio })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Historical ratio per group, indexed by `GroupId::index`.
    pub fn hist_ratio(&self) -> &[f64] {
        &self.hist_ratio
    }

    /// Empirical target frequency per item.
    pub fn target_frequencies(&self, n_items: usize) -> Vec<f64> {
        let mut freq = alloc::vec![0.0; n_items];
        for ex in &self.examples {
            freq[ex.target.index()] += 1.0;
        }
        let n = self.examples.len() as f64;
        freq.iter_mut().for_each(|f| *f /= n);
        freq
    }

    /// Seeded shuffle followed by a floor-then-distribute split: each split
    /// gets `floor(ratio * n)` examples and the leftovers are handed out one
    /// at a time in declaration order.
    pub fn split(&self, ratios: [f64; 3], seed: u64, catalog: &Catalog) -> Result<[Self; 3]> {
        if ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
        }
        let sum: f64 = ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
        }
        let n = self.examples.len();
        let mut sizes = ratios.map(|r| libm::floor(r * n as f64 + 1e-9) as usize);
        let mut leftover = n - sizes.iter().sum::<usize>();
        let mut k = 0;
        while leftover > 0 {
            sizes[k % 3] += 1;
            leftover -= 1;
            k += 1;
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!(
                "split {k} would be empty for {n} examples at ratios {ratios:?}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::substream(seed, "split"));
        let mut cursor = 0;
        let mut parts = sizes.map(|size| {
            let part: Vec<Example> =
                order[cursor..cursor + size].iter().map(|&j| self.examples[j].clone()).collect();
            cursor += size;
            part
        });
        let [a, b, c] = core::mem::take(&mut parts);
        Ok([Self::new(a, catalog)?, Self::new(b, catalog)?, Self::new(c, catalog)?])
    }
}

/// Synthetic world model. Each example picks an archetype from
/// `archetype_prior` (uniform unless set) and then draws every item i.i.d.
/// from
/// `p(i | a) ∝ group_skew(g(i)) * archetype_weight(a, g(i)) * exp(item_quality(i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthModel {
    archetype_weights: Vec<Vec<f64>>,
    item_quality: Vec<f64>,
    group_skew: Vec<f64>,
    archetype_prior: Vec<f64>,
}

impl GroundTruthModel {
    pub fn new(
        archetype_weights: Vec<Vec<f64>>,
        item_quality: Vec<f64>,
        group_skew: Vec<f64>,
        catalog: &Catalog,
    ) -> Result<Self> {
        let n_groups = catalog.n_groups();
        if archetype_weights.is_empty() {
            return Err(Error::Config("ground truth needs at least one archetype".into()));
        }
        for (a, w) in archetype_weights.iter().enumerate() {
            if w.len() != n_groups || w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::Config(format!("archetype {a} must have {n_groups} nonnegative weights")));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("archetype {a} weights sum to {s}, not 1")));
            }
        }
        if item_quality.len() != catalog.n_items() || item_quality.iter().any(|q| !q.is_finite()) {
            return Err(Error::Config("item_quality must be finite, one per item".into()));
        }
        if group_skew.len() != n_groups || group_skew.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Config("group_skew must be positive, one per group".into()));
        }
        let n = archetype_weights.len();
        Ok(Self {
            archetype_weights,
            item_quality,
            group_skew,
            archetype_prior: alloc::vec![1.0 / n as f64; n],
        })
    }

    /// Replace the uniform archetype prior; `weights` are positive and get
    /// normalized.
    pub fn with_archetype_prior(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_archetypes() || weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!(
                "archetype prior needs {} positive weights",
                self.n_archetypes()
            )));
        }
        let z: f64 = weights.iter().sum();
        self.archetype_prior = weights.into_iter().map(|w| w / z).collect();
        Ok(self)
    }

    /// One archetype per group, each placing `focus` of its mass on its own
    /// group and spreading the rest evenly. Item qualities are seeded
    /// `Normal(0, quality_sigma^2)`.
    pub fn archetypes(
        catalog: &Catalog,
        focus: f64,
        quality_sigma: f64,
        group_skew: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let n = catalog.n_groups();
        if !(0.0..=1.0).contains(&focus) {
            return Err(Error::Config(format!("archetype focus must be in [0,1], got {focus}")));
        }
        let rest = (1.0 - focus) / (n - 1) as f64;
        let weights = (0..n).map(|a| (0..n).map(|g| if g == a { focus } else { rest }).collect()).collect();
        let mut rng = rng::substream(seed, "truth-quality");
        let quality =
            (0..catalog.n_items()).map(|_| quality_sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        Self::new(weights, quality, group_skew, catalog)
    }

    /// Single archetype with the given group weights, unit skew and equal
    /// item quality.
    pub fn single(group_weights: Vec<f64>, catalog: &Catalog) -> Result<Self> {
        let n = catalog.n_groups();
        Self::new(
            alloc::vec![group_weights],
            alloc::vec![0.0; catalog.n_items()],
            alloc::vec![1.0; n],
            catalog,
        )
    }

    pub fn uniform(catalog: &Catalog) -> Result<Self> {
        let n = catalog.n_groups();
        Self::single(alloc::vec![1.0 / n as f64; n], catalog)
    }

    pub fn n_archetypes(&self) -> usize {
        self.archetype_weights.len()
    }

    pub fn group_skew(&self) -> &[f64] {
        &self.group_skew
    }

    pub fn archetype_prior(&self) -> &[f64] {
        &self.archetype_prior
    }

    /// `p(i | archetype)` over all items.
    pub fn item_distribution(&self, archetype: usize, catalog: &Catalog) -> Vec<f64> {
        let w = &self.archetype_weights[archetype];
        let mut p: Vec<f64> = catalog
            .items()
            .map(|i| {
                let g = catalog.group_of(i).index();
                self.group_skew[g] * w[g] * math::exp(self.item_quality[i.index()])
            })
            .collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        p
    }

    /// Exact next-item conditional `p(i | s)` under the archetype prior.
    /// Test oracle only; trained policies never see it.
    pub fn true_conditional(&self, seq: &InteractionSequence, catalog: &Catalog) -> Vec<f64> {
        let dists: Vec<Vec<f64>> =
            (0..self.n_archetypes()).map(|a| self.item_distribution(a, catalog)).collect();
        let mut log_post: Vec<f64> = dists
            .iter()
            .zip(&self.archetype_prior)
            .map(|(p, &w)| math::ln(w) + seq.items().iter().map(|i| math::ln(p[i.index()])).sum::<f64>())
            .collect();
        math::log_softmax_in_place(&mut log_post);
        let mut out = alloc::vec![0.0; catalog.n_items()];
        for (lp, p) in log_post.iter().zip(&dists) {
            let w = math::exp(*lp);
            for (o, x) in out.iter_mut().zip(p) {
                *o += w * x;
            }
        }
        out
    }

    fn check_catalog(&self, catalog: &Catalog) -> Result<()> {
        if self.item_quality.len() != catalog.n_items() || self.group_skew.len() != catalog.n_groups() {
            return Err(Error::Config("ground truth does not match catalog".into()));
        }
        Ok(())
    }
}

/// Draw `n_examples` sequences of length `seq_len` plus one target each.
pub fn generate_dataset(
    catalog: &Catalog,
    truth: &GroundTruthModel,
    n_examples: usize,
    seq_len: usize,
    seed: u64,
) -> Result<InteractionDataset> {
    truth.check_catalog(catalog)?;
    if n_examples == 0 || seq_len == 0 {
        return Err(Error::Config("n_examples and seq_len must be positive".into()));
    }
    let cdfs: Vec<Vec<f64>> = (0..truth.n_archetypes())
        .map(|a| {
            let mut acc = 0.0;
            truth
                .item_distribution(a, catalog)
                .into_iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect()
        })
        .collect();
    let prior_cdf: Vec<f64> = truth
        .archetype_prior
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let draw = |cdf: &[f64], u: f64| -> ItemId {
        let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        ItemId(k as u32)
    };
    let mut rng = rng::substream(seed, "dataset");
    let examples = (0..n_examples)
        .map(|_| {
            let a = draw(&prior_cdf, rng.random()).index();
            let cdf = &cdfs[a];
            let items = (0..seq_len).map(|_| draw(cdf, rng.random())).collect();
            let target = draw(cdf, rng.random());
            Example { seq: InteractionSequence(items), target }
        })
        .collect();
    InteractionDataset::new(examples, catalog)
}

/// Group-level marginal implied by a per-item distribution.
pub fn group_marginal(item_probs: &[f64], catalog: &Catalog) -> Vec<f64> {
    let mut out = alloc::vec![0.0; catalog.n_groups()];
    for i in catalog.items() {
        out[catalog.group_of(i).index()] += item_probs[i.index()];
    }
    out
}

pub fn group_ids(n: usize) -> impl Iterator<Item = GroupId> {
    (0..n as u32).map(GroupId)
}
