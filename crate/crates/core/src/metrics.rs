//! Group fairness and top-K accuracy metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::catalog::{Catalog, GroupId, ItemId};
use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::math;
use crate::policy::PolicyParams;

/// Pooled share of each group over every recommended slot.
pub fn group_proportions(rec_lists: &[Vec<ItemId>], catalog: &Catalog) -> Result<Vec<f64>> {
    let k = rec_lists.first().map(Vec::len).unwrap_or(0);
    if k == 0 {
        return Err(Error::Evaluation("no recommendations to tally".into()));
    }
    let mut counts = alloc::vec![0usize; catalog.n_groups()];
    for (n, list) in rec_lists.iter().enumerate() {
        if list.len() != k {
            return Err(Error::Evaluation(format!("list {n} has length {} but K = {k}", list.len())));
        }
        for &i in list {
            if !catalog.contains(i) {
                return Err(Error::Evaluation(format!("unknown {i} in list {n}")));
            }
            counts[catalog.group_of(i).index()] += 1;
        }
    }
    let total = (k * rec_lists.len()) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FairnessReport {
    pub k: usize,
    pub gh: Vec<f64>,
    pub gp: Vec<f64>,
    pub gu: Vec<f64>,
    pub mgu: f64,
    pub dgu: f64,
    /// Largest pairwise gap between `gp / gh` intensities.
    pub epsilon_star: f64,
    /// `gp / gh`, absent where `gh = 0`.
    pub intensity: Vec<Option<f64>>,
    /// Groups with zero history, left out of `epsilon_star`.
    pub excluded_groups: Vec<GroupId>,
}

pub fn fairness_report(
    rec_lists: &[Vec<ItemId>],
    hist_ratio: &[f64],
    catalog: &Catalog,
    k: usize,
) -> Result<FairnessReport> {
    if rec_lists.iter().any(|l| l.len() != k) {
        return Err(Error::Evaluation(format!("every list must hold exactly K = {k} items")));
    }
    let gp = group_proportions(rec_lists, catalog)?;
    fairness_from_proportions(gp, hist_ratio.to_vec(), k)
}

pub fn fairness_from_proportions(gp: Vec<f64>, gh: Vec<f64>, k: usize) -> Result<FairnessReport> {
    if gp.len() != gh.len() || gp.is_empty() {
        return Err(Error::Evaluation("gp and gh must cover the same groups".into()));
    }
    for (name, v) in [("gp", &gp), ("gh", &gh)] {
        let s: f64 = v.iter().sum();
        if v.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Evaluation(format!("{name} is not a distribution (sum = {s})")));
        }
    }
    let gu: Vec<f64> = gp.iter().zip(&gh).map(|(p, h)| p - h).collect();
    let mgu = gu.iter().map(|x| x.abs()).sum::<f64>() / gu.len() as f64;
    let max = gu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = gu.iter().copied().fold(f64::INFINITY, f64::min);
    let intensity: Vec<Option<f64>> = gp.iter().zip(&gh).map(|(&p, &h)| (h > 0.0).then(|| p / h)).collect();
    let excluded_groups =
        intensity.iter().enumerate().filter(|(_, r)| r.is_none()).map(|(g, _)| GroupId(g as u32)).collect();
    let defined: Vec<f64> = intensity.iter().flatten().copied().collect();
    let epsilon_star =
        match (defined.iter().copied().reduce(f64::max), defined.iter().copied().reduce(f64::min)) {
            (Some(hi), Some(lo)) => hi - lo,
            _ => 0.0,
        };
    Ok(FairnessReport { k, gh, gp, gu, mgu, dgu: max - min, epsilon_star, intensity, excluded_groups })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AccuracyReport {
    pub k: usize,
    pub ndcg: f64,
    pub hr: f64,
    pub n_evaluated: usize,
}

/// Top-K list for every example of `data`.
pub fn recommend(
    policy: &PolicyParams,
    catalog: &Catalog,
    data: &InteractionDataset,
    k: usize,
) -> Result<Vec<Vec<ItemId>>> {
    data.examples().iter().map(|ex| policy.top_k(catalog, &ex.seq, k)).collect()
}

/// HR@K and single-target NDCG@K over precomputed lists.
pub fn accuracy_from_lists(lists: &[Vec<ItemId>], targets: &[ItemId], k: usize) -> Result<AccuracyReport> {
    if lists.is_empty() {
        return Err(Error::Evaluation("empty test set".into()));
    }
    if lists.len() != targets.len() {
        return Err(Error::Evaluation("one target per list required".into()));
    }
    let (mut hits, mut gain) = (0usize, 0.0);
    for (list, target) in lists.iter().zip(targets) {
        if let Some(pos) = list.iter().take(k).position(|i| i == target) {
            hits += 1;
            gain += 1.0 / math::log2(pos as f64 + 2.0);
        }
    }
    let n = lists.len() as f64;
    Ok(AccuracyReport { k, ndcg: gain / n, hr: hits as f64 / n, n_evaluated: lists.len() })
}

pub fn accuracy_report(
    policy: &PolicyParams,
    catalog: &Catalog,
    test: &InteractionDataset,
    k: usize,
) -> Result<AccuracyReport> {
    if test.is_empty() {
        return Err(Error::Evaluation("empty test set".into()));
    }
    let lists = recommend(policy, catalog, test, k)?;
    let targets: Vec<ItemId> = test.examples().iter().map(|ex| ex.target).collect();
    accuracy_from_lists(&lists, &targets, k)
}

/// `100 (candidate - baseline) / baseline`.
pub fn relative_improvement(candidate: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok(100.0 * (candidate - baseline) / baseline)
}

/// One decimal with explicit sign: `-5.1%`, `+4.1%`, `0.0%`.
pub fn format_improvement(percent: f64) -> String {
    let rounded = libm::round(percent * 10.0) / 10.0;
    if rounded == 0.0 {
        String::from("0.0%")
    } else {
        format!("{rounded:+.1}%")
    }
}
