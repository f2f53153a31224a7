//! Rayon-parallel evaluation. Work is split per example and gathered in
//! input order; every reduction then runs sequentially in core, so results do
//! not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ufo_core::bias::ScoreTable;
use ufo_core::metrics::{accuracy_from_lists, fairness_report, AccuracyReport, FairnessReport};
use ufo_core::selfplay::{Evaluator, Snapshot};
use ufo_core::{Catalog, InteractionDataset, ItemId, PolicyParams};

pub fn recommend(
    params: &PolicyParams,
    catalog: &Catalog,
    data: &InteractionDataset,
    k: usize,
) -> ufo_core::Result<Vec<Vec<ItemId>>> {
    data.examples().par_iter().map(|ex| params.top_k(catalog, &ex.seq, k)).collect()
}

pub fn score_table(
    params: &PolicyParams,
    catalog: &Catalog,
    data: &InteractionDataset,
) -> ufo_core::Result<ScoreTable> {
    let rows: Vec<Vec<f64>> = data
        .examples()
        .par_iter()
        .map(|ex| Ok(params.evaluate_seq(catalog, &ex.seq)?.log_marginals(catalog)))
        .collect::<ufo_core::Result<_>>()?;
    Ok(ScoreTable {
        n_items: catalog.n_items(),
        scores: rows.concat(),
        targets: data.examples().iter().map(|ex| ex.target.index()).collect(),
    })
}

fn truncated(lists: &[Vec<ItemId>], k: usize) -> Vec<Vec<ItemId>> {
    lists.iter().map(|l| l[..k].to_vec()).collect()
}

/// Fairness and accuracy at each K, from a single ranking pass.
pub fn sweep(
    params: &PolicyParams,
    catalog: &Catalog,
    data: &InteractionDataset,
    hist_ratio: &[f64],
    ks: &[usize],
) -> ufo_core::Result<Vec<(FairnessReport, AccuracyReport)>> {
    let k_max = ks.iter().copied().max().unwrap_or(1);
    let lists = recommend(params, catalog, data, k_max)?;
    let targets: Vec<ItemId> = data.examples().iter().map(|ex| ex.target).collect();
    ks.iter()
        .map(|&k| {
            let top = truncated(&lists, k);
            Ok((fairness_report(&top, hist_ratio, catalog, k)?, accuracy_from_lists(&top, &targets, k)?))
        })
        .collect()
}

pub struct ParallelHeldOut<'a> {
    pub catalog: &'a Catalog,
    pub data: &'a InteractionDataset,
    pub hist_ratio: &'a [f64],
    pub fairness_k: usize,
    pub accuracy_k: usize,
}

impl Evaluator for ParallelHeldOut<'_> {
    fn snapshot(&self, params: &PolicyParams) -> ufo_core::Result<Snapshot> {
        let ks = [self.fairness_k, self.accuracy_k];
        let mut out = sweep(params, self.catalog, self.data, self.hist_ratio, &ks)?;
        let (_, accuracy) = out.pop().expect("two cut-offs");
        let (fairness, _) = out.pop().expect("two cut-offs");
        Ok(Snapshot { fairness, accuracy })
    }
}

/// One evaluation report at a single K, flat so that reports from different
/// runs can be compared field by field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// SHA-256 of the test split.
    pub dataset: String,
    pub k: usize,
    pub mgu: Option<f64>,
    pub dgu: Option<f64>,
    pub epsilon_star: Option<f64>,
    pub ndcg: Option<f64>,
    pub hr: Option<f64>,
    #[serde(default)]
    pub epsilon_threshold: Option<f64>,
    #[serde(default)]
    pub satisfies_epsilon_if: Option<bool>,
    #[serde(default)]
    pub fairness: Option<FairnessReport>,
    #[serde(default)]
    pub n_evaluated: Option<usize>,
}

impl EvalReport {
    pub fn new(
        method: &str,
        dataset: &str,
        fairness: FairnessReport,
        accuracy: AccuracyReport,
        epsilon_threshold: f64,
    ) -> Self {
        Self {
            method: method.to_owned(),
            dataset: dataset.to_owned(),
            k: fairness.k,
            mgu: Some(fairness.mgu),
            dgu: Some(fairness.dgu),
            epsilon_star: Some(fairness.epsilon_star),
            ndcg: Some(accuracy.ndcg),
            hr: Some(accuracy.hr),
            epsilon_threshold: Some(epsilon_threshold),
            satisfies_epsilon_if: Some(fairness.epsilon_star <= epsilon_threshold),
            n_evaluated: Some(accuracy.n_evaluated),
            fairness: Some(fairness),
        }
    }
}

/// Flat row shared by the evaluation CSV and the run log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow<'a> {
    pub method: &'a str,
    pub dataset: &'a str,
    #[serde(rename = "K")]
    pub k: usize,
    pub mgu: Option<f64>,
    pub dgu: Option<f64>,
    pub epsilon_star: Option<f64>,
    pub ndcg: Option<f64>,
    pub hr: Option<f64>,
}

impl<'a> From<&'a EvalReport> for MetricRow<'a> {
    fn from(r: &'a EvalReport) -> Self {
        Self {
            method: &r.method,
            dataset: &r.dataset,
            k: r.k,
            mgu: r.mgu,
            dgu: r.dgu,
            epsilon_star: r.epsilon_star,
            ndcg: r.ndcg,
            hr: r.hr,
        }
    }
}
