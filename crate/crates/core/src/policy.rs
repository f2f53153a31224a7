//! Distributional next-item policy.
//!
//! Two softmax heads over the state features `phi(s)` (mean item embedding):
//!
//! * group head: `pi(g | s) = softmax(A phi + a)_g`
//! * item head:  `pi(i | g, s) = softmax over members of g of (B phi + b)_i`
//!
//! Every item belongs to exactly one group, so the marginal
//! `pi(i | s) = sum_g pi(i | g, s) pi(g | s)` collapses to
//! `pi(g(i) | s) * pi(i | g(i), s)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::catalog::{Catalog, GroupId, ItemId};
use crate::data::InteractionSequence;
use crate::error::{Error, Result};
use crate::math;

/// Block sizes of a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n_groups: usize,
    pub n_items: usize,
    pub dim: usize,
}

impl Shape {
    pub fn of(catalog: &Catalog) -> Self {
        Self { n_groups: catalog.n_groups(), n_items: catalog.n_items(), dim: catalog.dim() }
    }

    fn len(&self) -> usize {
        self.n_groups * self.dim + self.n_groups + self.n_items * self.dim + self.n_items
    }

    fn offsets(&self) -> [usize; 4] {
        let a = self.n_groups * self.dim;
        let big_b = a + self.n_groups;
        let b = big_b + self.n_items * self.dim;
        [0, a, big_b, b]
    }
}

/// Policy parameters, stored flat as `[A | a | B | b]` (row-major matrices).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: Shape,
    values: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradient = PolicyParams;

/// Position of a scalar inside [`PolicyParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamLocation {
    GroupWeight { group: usize, col: usize },
    GroupBias { group: usize },
    ItemWeight { item: usize, col: usize },
    ItemBias { item: usize },
}

impl fmt::Display for ParamLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamLocation::GroupWeight { group, col } => write!(f, "A[{group}][{col}]"),
            ParamLocation::GroupBias { group } => write!(f, "a[{group}]"),
            ParamLocation::ItemWeight { item, col } => write!(f, "B[{item}][{col}]"),
            ParamLocation::ItemBias { item } => write!(f, "b[{item}]"),
        }
    }
}

impl PolicyParams {
    pub fn zeros(catalog: &Catalog) -> Self {
        Self::zeros_with_shape(Shape::of(catalog))
    }

    pub fn zeros_with_shape(shape: Shape) -> Self {
        Self { shape, values: alloc::vec![0.0; shape.len()] }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros_with_shape(self.shape)
    }

    /// Assemble from the four blocks; lengths must match `shape`.
    pub fn from_blocks(
        shape: Shape,
        group_weights: &[f64],
        group_bias: &[f64],
        item_weights: &[f64],
        item_bias: &[f64],
    ) -> Result<Self> {
        let expect = [shape.n_groups * shape.dim, shape.n_groups, shape.n_items * shape.dim, shape.n_items];
        let got = [group_weights.len(), group_bias.len(), item_weights.len(), item_bias.len()];
        if expect != got {
            return Err(Error::Structure(format!(
                "parameter block sizes {got:?} do not match expected {expect:?}"
            )));
        }
        let mut values = Vec::with_capacity(shape.len());
        values.extend_from_slice(group_weights);
        values.extend_from_slice(group_bias);
        values.extend_from_slice(item_weights);
        values.extend_from_slice(item_bias);
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn block(&self, k: usize) -> &[f64] {
        let o = self.shape.offsets();
        let end = if k == 3 { self.values.len() } else { o[k + 1] };
        &self.values[o[k]..end]
    }

    fn block_mut(&mut self, k: usize) -> &mut [f64] {
        let o = self.shape.offsets();
        let end = if k == 3 { self.values.len() } else { o[k + 1] };
        &mut self.values[o[k]..end]
    }

    /// `A`, `n_groups x dim`.
    pub fn group_weights(&self) -> &[f64] {
        self.block(0)
    }
    /// `a`, one per group.
    pub fn group_bias(&self) -> &[f64] {
        self.block(1)
    }
    /// `B`, `n_items x dim`.
    pub fn item_weights(&self) -> &[f64] {
        self.block(2)
    }
    /// `b`, one per item.
    pub fn item_bias(&self) -> &[f64] {
        self.block(3)
    }
    pub fn group_weights_mut(&mut self) -> &mut [f64] {
        self.block_mut(0)
    }
    pub fn group_bias_mut(&mut self) -> &mut [f64] {
        self.block_mut(1)
    }
    pub fn item_weights_mut(&mut self) -> &mut [f64] {
        self.block_mut(2)
    }
    pub fn item_bias_mut(&mut self) -> &mut [f64] {
        self.block_mut(3)
    }

    pub fn locate(&self, index: usize) -> ParamLocation {
        let s = self.shape;
        let o = s.offsets();
        if index < o[1] {
            ParamLocation::GroupWeight { group: index / s.dim, col: index % s.dim }
        } else if index < o[2] {
            ParamLocation::GroupBias { group: index - o[1] }
        } else if index < o[3] {
            let k = index - o[2];
            ParamLocation::ItemWeight { item: k / s.dim, col: k % s.dim }
        } else {
            ParamLocation::ItemBias { item: index - o[3] }
        }
    }

    pub fn first_non_finite(&self) -> Option<ParamLocation> {
        self.values.iter().position(|v| !v.is_finite()).map(|k| self.locate(k))
    }

    pub fn check_catalog(&self, catalog: &Catalog) -> Result<()> {
        if self.shape != Shape::of(catalog) {
            return Err(Error::Structure(format!(
                "parameters shaped {:?} do not match catalog {:?}",
                self.shape,
                Shape::of(catalog)
            )));
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += alpha * y;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.values.iter().map(|x| x * x).sum())
    }

    /// Evaluate both heads at one state.
    pub fn evaluate(&self, catalog: &Catalog, features: &[f64]) -> Result<StateEval> {
        let s = self.shape;
        let mut group_lp: Vec<f64> = (0..s.n_groups)
            .map(|g| {
                let row = &self.group_weights()[g * s.dim..(g + 1) * s.dim];
                math::dot(row, features) + self.group_bias()[g]
            })
            .collect();
        if let Some(g) = group_lp.iter().position(|z| !z.is_finite()) {
            return Err(self.non_finite_error(g, features, true));
        }
        math::log_softmax_in_place(&mut group_lp);

        let mut item_lp: Vec<f64> = (0..s.n_items)
            .map(|i| {
                let row = &self.item_weights()[i * s.dim..(i + 1) * s.dim];
                math::dot(row, features) + self.item_bias()[i]
            })
            .collect();
        if let Some(i) = item_lp.iter().position(|z| !z.is_finite()) {
            return Err(self.non_finite_error(i, features, false));
        }
        let mut scratch = Vec::new();
        for g in catalog.groups() {
            let members = catalog.members(g);
            scratch.clear();
            scratch.extend(members.iter().map(|m| item_lp[m.index()]));
            let lse = math::log_sum_exp(&scratch);
            for m in members {
                item_lp[m.index()] -= lse;
            }
        }
        Ok(StateEval { group_log_probs: group_lp, item_log_cond: item_lp })
    }

    fn non_finite_error(&self, row: usize, features: &[f64], group_head: bool) -> Error {
        let s = self.shape;
        let (w_block, b_block) = if group_head { (0, 1) } else { (2, 3) };
        let o = s.offsets();
        let candidates = (o[w_block] + row * s.dim..o[w_block] + (row + 1) * s.dim)
            .chain(core::iter::once(o[b_block] + row));
        for k in candidates {
            if !self.values[k].is_finite() {
                return Error::NonFinite(format!("parameter {}", self.locate(k)));
            }
        }
        let head = if group_head { "group" } else { "item" };
        if let Some(c) = features.iter().position(|v| !v.is_finite()) {
            return Error::NonFinite(format!("state feature {c}"));
        }
        Error::NonFinite(format!("{head} logit {row} (overflow)"))
    }

    pub fn evaluate_seq(&self, catalog: &Catalog, s: &InteractionSequence) -> Result<StateEval> {
        self.evaluate(catalog, &catalog.features(s))
    }

    /// `pi(. | s)` over groups.
    pub fn group_dist(&self, catalog: &Catalog, s: &InteractionSequence) -> Result<Distribution<GroupId>> {
        let ev = self.evaluate_seq(catalog, s)?;
        Ok(Distribution { support: catalog.groups().collect(), log_probs: ev.group_log_probs })
    }

    /// `pi(. | g, s)`, supported exactly on the members of `g`.
    pub fn item_dist_given_group(
        &self,
        catalog: &Catalog,
        s: &InteractionSequence,
        g: GroupId,
    ) -> Result<Distribution<ItemId>> {
        if g.index() >= catalog.n_groups() {
            return Err(Error::Structure(format!("{g} is not in the catalog")));
        }
        let members = catalog.members(g);
        if members.is_empty() {
            return Err(Error::Structure(format!("{g} has no items")));
        }
        let ev = self.evaluate_seq(catalog, s)?;
        Ok(Distribution {
            support: members.to_vec(),
            log_probs: members.iter().map(|m| ev.item_log_cond[m.index()]).collect(),
        })
    }

    /// `log pi(i | s)`.
    pub fn log_prob(&self, catalog: &Catalog, s: &InteractionSequence, i: ItemId) -> Result<f64> {
        Ok(self.evaluate_seq(catalog, s)?.log_marginal(catalog, i))
    }

    /// Draw a group, then an item inside it.
    pub fn sample_next<R: Rng + ?Sized>(
        &self,
        catalog: &Catalog,
        s: &InteractionSequence,
        rng: &mut R,
    ) -> Result<ItemId> {
        Ok(self.evaluate_seq(catalog, s)?.sample(catalog, rng))
    }

    /// Items by descending marginal probability; ties by ascending id.
    pub fn top_k(&self, catalog: &Catalog, s: &InteractionSequence, k: usize) -> Result<Vec<ItemId>> {
        if k == 0 || k > catalog.n_items() {
            return Err(Error::Config(format!("K must be in 1..={}, got {k}", catalog.n_items())));
        }
        Ok(self.evaluate_seq(catalog, s)?.top_k(catalog, k))
    }

    /// Gradient of `log pi(i | s)` with respect to all parameters.
    pub fn grad_log_prob(&self, catalog: &Catalog, s: &InteractionSequence, i: ItemId) -> Result<Gradient> {
        let phi = catalog.features(s);
        let ev = self.evaluate(catalog, &phi)?;
        let mut grad = self.zeros_like();
        ev.accumulate_log_prob_grad(catalog, &phi, i, 1.0, &mut grad);
        Ok(grad)
    }
}

/// Both heads evaluated at one state, in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEval {
    /// `log pi(g | s)` for every group.
    pub group_log_probs: Vec<f64>,
    /// `log pi(i | g(i), s)` for every item.
    pub item_log_cond: Vec<f64>,
}

impl StateEval {
    pub fn log_marginal(&self, catalog: &Catalog, i: ItemId) -> f64 {
        self.group_log_probs[catalog.group_of(i).index()] + self.item_log_cond[i.index()]
    }

    pub fn log_marginals(&self, catalog: &Catalog) -> Vec<f64> {
        catalog.items().map(|i| self.log_marginal(catalog, i)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, catalog: &Catalog, rng: &mut R) -> ItemId {
        let g = GroupId(math::inverse_cdf_log(&self.group_log_probs, rng.random()) as u32);
        let members = catalog.members(g);
        let lp: Vec<f64> = members.iter().map(|m| self.item_log_cond[m.index()]).collect();
        members[math::inverse_cdf_log(&lp, rng.random())]
    }

    pub fn top_k(&self, catalog: &Catalog, k: usize) -> Vec<ItemId> {
        let lp = self.log_marginals(catalog);
        top_k_by_score(&lp, k)
    }

    /// `grad += coef * d log pi(item | s) / d params`.
    pub fn accumulate_log_prob_grad(
        &self,
        catalog: &Catalog,
        features: &[f64],
        item: ItemId,
        coef: f64,
        grad: &mut Gradient,
    ) {
        let g = catalog.group_of(item);
        let mut group_coef: Vec<f64> = self.group_log_probs.iter().map(|&lp| -coef * math::exp(lp)).collect();
        group_coef[g.index()] += coef;
        accumulate_group_logit_grad(&group_coef, features, grad);
        let dim = features.len();
        for &m in catalog.members(g) {
            let mut w = -coef * math::exp(self.item_log_cond[m.index()]);
            if m == item {
                w += coef;
            }
            grad.item_bias_mut()[m.index()] += w;
            let row = &mut grad.item_weights_mut()[m.index() * dim..(m.index() + 1) * dim];
            for (r, f) in row.iter_mut().zip(features) {
                *r += w * f;
            }
        }
    }
}

/// `grad += d/dparams of sum_h coef_h * z_h` where `z = A phi + a`.
pub(crate) fn accumulate_group_logit_grad(coef: &[f64], features: &[f64], grad: &mut Gradient) {
    let dim = features.len();
    for (h, &w) in coef.iter().enumerate() {
        grad.group_bias_mut()[h] += w;
        let row = &mut grad.group_weights_mut()[h * dim..(h + 1) * dim];
        for (r, f) in row.iter_mut().zip(features) {
            *r += w * f;
        }
    }
}

/// Indices of the `k` largest scores; ties broken by ascending index.
pub fn top_k_by_score(scores: &[f64], k: usize) -> Vec<ItemId> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
    order.truncate(k);
    order.into_iter().map(|i| ItemId(i as u32)).collect()
}

/// Finite distribution kept in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<Id> {
    pub support: Vec<Id>,
    pub log_probs: Vec<f64>,
}

impl<Id: Copy + PartialEq> Distribution<Id> {
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|&lp| math::exp(lp)).collect()
    }

    /// `None` for ids outside the support; an out-of-support id has no
    /// log-probability rather than a numeric `-inf`.
    pub fn log_prob(&self, id: Id) -> Option<f64> {
        self.support.iter().position(|&s| s == id).map(|k| self.log_probs[k])
    }

    pub fn prob(&self, id: Id) -> f64 {
        self.log_prob(id).map_or(0.0, math::exp)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} groups x {} items x dim {}", self.n_groups, self.n_items, self.dim)
    }
}

/// Human-readable label for diagnostics.
pub fn describe(params: &PolicyParams) -> String {
    format!("policy({})", params.shape())
}
