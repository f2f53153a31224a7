//! Item universe and its one-group-per-item partition.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::InteractionSequence;
use crate::error::{Error, Result};
use crate::math;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ItemId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct GroupId(pub u32);

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl GroupId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "item {}", self.0)
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "group {}", self.0)
    }
}

/// Items, their groups and fixed feature embeddings.
///
/// Embeddings are never stored on disk: they are a pure function of
/// `(n_items, dim, embed_seed)` and are regenerated on load.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    n_groups: usize,
    dim: usize,
    embed_seed: u64,
    group_of: Vec<GroupId>,
    members: Vec<Vec<ItemId>>,
    embeddings: Vec<f64>,
}

impl Catalog {
    /// Contiguous, balanced partition: group sizes differ by at most one and
    /// the remainder goes to the lowest group indices.
    pub fn generate(n_items: usize, n_groups: usize, dim: usize, seed: u64) -> Result<Self> {
        if n_groups < 2 || n_items < n_groups {
            return Err(Error::Config(format!(
                "need n_items >= n_groups >= 2, got n_items={n_items}, n_groups={n_groups}"
            )));
        }
        let base = n_items / n_groups;
        let extra = n_items % n_groups;
        let mut group_of = Vec::with_capacity(n_items);
        for g in 0..n_groups {
            let size = base + usize::from(g < extra);
            group_of.extend(core::iter::repeat_n(GroupId(g as u32), size));
        }
        Self::from_assignment(group_of, n_groups, dim, seed)
    }

    /// Rebuild a catalog from an explicit assignment, regenerating embeddings.
    pub fn from_assignment(
        group_of: Vec<GroupId>,
        n_groups: usize,
        dim: usize,
        embed_seed: u64,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("embedding dimension must be >= 2, got {dim}")));
        }
        if n_groups < 2 {
            return Err(Error::Config(format!("need at least 2 groups, got {n_groups}")));
        }
        if group_of.len() < n_groups {
            return Err(Error::Config(format!("{} items cannot cover {n_groups} groups", group_of.len())));
        }
        let mut members = alloc::vec![Vec::new(); n_groups];
        for (i, g) in group_of.iter().enumerate() {
            if g.index() >= n_groups {
                return Err(Error::Structure(format!("item {i} assigned to unknown {g}")));
            }
            members[g.index()].push(ItemId(i as u32));
        }
        if let Some(g) = members.iter().position(Vec::is_empty) {
            return Err(Error::Structure(format!("group {g} has no items")));
        }
        let n_items = group_of.len();
        let mut rng = rng::substream(embed_seed, "catalog-embeddings");
        let scale = 1.0 / math::sqrt(dim as f64);
        let embeddings = (0..n_items * dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
        Ok(Self { n_groups, dim, embed_seed, group_of, members, embeddings })
    }

    pub fn n_items(&self) -> usize {
        self.group_of.len()
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_seed(&self) -> u64 {
        self.embed_seed
    }

    pub fn group_of(&self, item: ItemId) -> GroupId {
        self.group_of[item.index()]
    }

    pub fn assignment(&self) -> &[GroupId] {
        &self.group_of
    }

    pub fn members(&self, group: GroupId) -> &[ItemId] {
        &self.members[group.index()]
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn embedding(&self, item: ItemId) -> &[f64] {
        let start = item.index() * self.dim;
        &self.embeddings[start..start + self.dim]
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        (0..self.n_items() as u32).map(ItemId)
    }

    pub fn groups(&self) -> impl Iterator<Item = GroupId> + '_ {
        (0..self.n_groups as u32).map(GroupId)
    }

    pub fn contains(&self, item: ItemId) -> bool {
        item.index() < self.n_items()
    }

    /// State features: the mean embedding of the sequence's items.
    pub fn features(&self, seq: &InteractionSequence) -> Vec<f64> {
        let mut phi = alloc::vec![0.0; self.dim];
        for &item in seq.items() {
            for (acc, e) in phi.iter_mut().zip(self.embedding(item)) {
                *acc += e;
            }
        }
        let inv = 1.0 / seq.len() as f64;
        for v in &mut phi {
            *v *= inv;
        }
        phi
    }
}
