//! Calibration-based estimation of composite group bias.
//!
//! A calibration vector `q` on the item simplex is fitted so that the
//! adjusted scores `f(s, .) - log q` minimize validation NLL. Its logarithm
//! is the item-level bias; applying the same estimate to a fine-tuned policy
//! gives the bias shift. Item values are aggregated to groups with in-group
//! weights and decomposed into centered pretraining and shift components.

use alloc::format;
use alloc::vec::Vec;

use crate::catalog::{Catalog, GroupId, ItemId};
use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::math;
use crate::policy::PolicyParams;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverOptions {
    /// Stop once the tangent-space gradient norm falls to this value.
    pub tol: f64,
    pub max_iters: usize,
    /// Lower bound on every `q_i`, keeps `log q` finite.
    pub q_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 10_000, q_floor: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    /// Line search could no longer find a non-increasing step.
    Stalled,
}

/// Point on the item simplex.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct CalibrationVector(pub Vec<f64>);

impl CalibrationVector {
    pub fn uniform(n: usize) -> Self {
        Self(alloc::vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub q: CalibrationVector,
    pub status: SolverStatus,
    pub iterations: usize,
    pub objective: f64,
    pub grad_norm: f64,
    /// Objective after every accepted step, starting at the uniform point.
    pub objective_trace: Vec<f64>,
    /// Items never observed as a validation target; their optimum lies on
    /// the boundary of the simplex.
    pub unseen_targets: Vec<ItemId>,
}

impl Calibration {
    pub fn converged(&self) -> bool {
        self.status == SolverStatus::Converged
    }
}

/// Row-major score matrix plus targets; the input of the simplex solver.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub n_items: usize,
    pub scores: Vec<f64>,
    pub targets: Vec<usize>,
}

impl ScoreTable {
    /// Scores `f(s, i) = log pi(i | s)` of `policy` on every validation state.
    pub fn from_policy(
        policy: &PolicyParams,
        catalog: &Catalog,
        validation: &InteractionDataset,
    ) -> Result<Self> {
        let n_items = catalog.n_items();
        let mut scores = Vec::with_capacity(validation.len() * n_items);
        let mut targets = Vec::with_capacity(validation.len());
        for ex in validation.examples() {
            scores.extend(policy.evaluate_seq(catalog, &ex.seq)?.log_marginals(catalog));
            targets.push(ex.target.index());
        }
        Ok(Self { n_items, scores, targets })
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.scores.chunks(self.n_items).zip(self.targets.iter().copied())
    }

    /// Mean NLL of `softmax(f - log q)` at the targets, the mean adjusted
    /// probability of every item, and the per-state adjusted probabilities.
    fn objective(&self, log_q: &[f64]) -> Objective {
        let n = self.n_items;
        let mut probs = Vec::with_capacity(self.scores.len());
        let mut mean_prob = alloc::vec![0.0; n];
        let mut total = math::CompensatedSum::default();
        for (row, t) in self.rows() {
            let start = probs.len();
            probs.extend(row.iter().zip(log_q).map(|(f, lq)| f - lq));
            let adjusted = &mut probs[start..];
            let lse = math::log_sum_exp(adjusted);
            total.add(lse - adjusted[t]);
            for (m, a) in mean_prob.iter_mut().zip(adjusted.iter_mut()) {
                *a = math::exp(*a - lse);
                *m += *a;
            }
        }
        let m = self.targets.len() as f64;
        mean_prob.iter_mut().for_each(|x| *x /= m);
        Objective { value: total.value() / m, mean_prob, probs }
    }
}

struct Objective {
    value: f64,
    mean_prob: Vec<f64>,
    probs: Vec<f64>,
}

impl Objective {
    /// Diagonal of `H = mean_s [diag(P_s) - P_s P_s^T]`, the Hessian in
    /// `log q` coordinates.
    fn hessian_diag(&self, n: usize) -> Vec<f64> {
        let mut diag = alloc::vec![0.0; n];
        let mut states = 0usize;
        for p in self.probs.chunks(n) {
            for (d, &pi) in diag.iter_mut().zip(p) {
                *d += pi * (1.0 - pi);
            }
            states += 1;
        }
        diag.iter_mut().for_each(|d| *d /= states as f64);
        diag
    }

    /// `(H + gauge * 11^T / n) v`. The rank-one term removes the flat
    /// direction along which `q` only changes scale.
    fn hessian_vec(&self, v: &[f64], gauge: f64, out: &mut [f64]) {
        let n = v.len();
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut states = 0usize;
        for p in self.probs.chunks(n) {
            let pv = math::dot(p, v);
            for ((o, &pi), &vi) in out.iter_mut().zip(p).zip(v) {
                *o += pi * (vi - pv);
            }
            states += 1;
        }
        let shift = gauge * v.iter().sum::<f64>() / n as f64;
        for o in out.iter_mut() {
            *o = *o / states as f64 + shift;
        }
    }

    /// Jacobi-preconditioned conjugate-gradient solve of
    /// `(H + gauge * 11^T / n) d = -g`.
    fn newton_direction(&self, g: &[f64]) -> Vec<f64> {
        let n = g.len();
        let diag = self.hessian_diag(n);
        let gauge = diag.iter().sum::<f64>() / n as f64;
        let precond: Vec<f64> =
            diag.iter().map(|d| 1.0 / (d + gauge / n as f64).max(f64::MIN_POSITIVE)).collect();
        let mut x = alloc::vec![0.0; n];
        let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut hp = alloc::vec![0.0; n];
        let mut rz = math::dot(&r, &z);
        let target = 1e-28 * math::dot(&r, &r);
        for _ in 0..10 * n {
            self.hessian_vec(&p, gauge, &mut hp);
            let curvature = math::dot(&p, &hp);
            if !(curvature > 0.0) {
                break;
            }
            let step = rz / curvature;
            for k in 0..n {
                x[k] += step * p[k];
                r[k] -= step * hp[k];
            }
            if math::dot(&r, &r) <= target {
                break;
            }
            for k in 0..n {
                z[k] = r[k] * precond[k];
            }
            let rz_next = math::dot(&r, &z);
            for k in 0..n {
                p[k] = z[k] + rz_next / rz * p[k];
            }
            rz = rz_next;
        }
        if x.iter().all(|&v| v == 0.0) || x.iter().any(|v| !v.is_finite()) {
            return g.iter().map(|v| -v).collect();
        }
        x
    }
}

/// Fit `q` for `policy` on `validation`.
pub fn calibrate(
    policy: &PolicyParams,
    catalog: &Catalog,
    validation: &InteractionDataset,
    options: &SolverOptions,
) -> Result<Calibration> {
    calibrate_scores(&ScoreTable::from_policy(policy, catalog, validation)?, options)
}

/// Exponentiated-gradient (mirror) descent on the simplex with backtracking.
///
/// Each step is `q <- q * exp(eta * d)` followed by renormalization, where
/// `d` is the gradient preconditioned by the Hessian of the objective in
/// `log q` coordinates (solved by conjugate gradients). A step is accepted
/// if it lowers the objective; once objective differences are at rounding
/// level it must lower the gradient norm instead. Rejected steps halve `eta`,
/// accepted ones double it up to 1. Stops when the simplex-projected
/// gradient norm reaches `tol`.
pub fn calibrate_scores(table: &ScoreTable, options: &SolverOptions) -> Result<Calibration> {
    let n = table.n_items;
    if table.targets.is_empty() || n == 0 {
        return Err(Error::Validation("calibration needs a nonempty validation set".into()));
    }
    if !(options.tol > 0.0) {
        return Err(Error::Config(format!("solver tolerance must be positive, got {}", options.tol)));
    }
    let mut freq = alloc::vec![0.0; n];
    for &t in &table.targets {
        freq[t] += 1.0;
    }
    let m = table.targets.len() as f64;
    freq.iter_mut().for_each(|f| *f /= m);
    let unseen_targets = (0..n).filter(|&i| freq[i] == 0.0).map(|i| ItemId(i as u32)).collect();

    let grad_norm_at = |q: &[f64], prob: &[f64]| -> f64 {
        let g: Vec<f64> = (0..n).map(|i| (freq[i] - prob[i]) / q[i]).collect();
        tangent_norm(&g)
    };
    let mut q = alloc::vec![1.0 / n as f64; n];
    let mut current = table.objective(&alloc::vec![math::ln(q[0]); n]);
    let mut grad_norm = grad_norm_at(&q, &current.mean_prob);
    let mut trace = alloc::vec![current.value];
    let mut eta = 1.0;
    let mut status = SolverStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < options.max_iters {
        if grad_norm <= options.tol {
            status = SolverStatus::Converged;
            break;
        }
        let grad_u: Vec<f64> = freq.iter().zip(&current.mean_prob).map(|(c, p)| c - p).collect();
        let direction = current.newton_direction(&grad_u);
        let obj = current.value;
        let slack = 4.0 * f64::EPSILON * obj.abs().max(1.0);
        let mut accepted = None;
        while eta > 1e-20 {
            let mut cand: Vec<f64> = q
                .iter()
                .zip(&direction)
                .map(|(&qi, &d)| qi * math::exp((eta * d).clamp(-50.0, 50.0)))
                .collect();
            normalize_with_floor(&mut cand, options.q_floor);
            let log_cand: Vec<f64> = cand.iter().map(|&x| math::ln(x)).collect();
            let next = table.objective(&log_cand);
            let next_norm = grad_norm_at(&cand, &next.mean_prob);
            if next.value < obj - slack || (next.value <= obj + slack && next_norm < grad_norm) {
                accepted = Some((cand, next, next_norm));
                break;
            }
            eta *= 0.5;
        }
        let Some((cand, next, next_norm)) = accepted else {
            status = SolverStatus::Stalled;
            break;
        };
        q = cand;
        current = next;
        grad_norm = next_norm;
        trace.push(current.value);
        iterations += 1;
        eta = (eta * 2.0).min(1.0);
    }
    if status == SolverStatus::MaxIterations && grad_norm <= options.tol {
        status = SolverStatus::Converged;
    }
    Ok(Calibration {
        q: CalibrationVector(q),
        status,
        iterations,
        objective: current.value,
        grad_norm,
        objective_trace: trace,
        unseen_targets,
    })
}

/// Norm of the gradient projected onto the simplex tangent space.
fn tangent_norm(grad: &[f64]) -> f64 {
    let mean = grad.iter().sum::<f64>() / grad.len() as f64;
    math::sqrt(grad.iter().map(|g| (g - mean) * (g - mean)).sum())
}

fn normalize_with_floor(q: &mut [f64], floor: f64) {
    let z: f64 = q.iter().sum();
    for x in q.iter_mut() {
        *x = (*x / z).max(floor);
    }
}

/// `b^p(i) = log q_i`.
pub fn item_bias(q: &CalibrationVector) -> Vec<f64> {
    q.0.iter().map(|&x| math::ln(x)).collect()
}

/// `delta(i) = log q_ft,i - b^p(i)`.
pub fn bias_shift(b_p_item: &[f64], q_ft: &CalibrationVector) -> Result<Vec<f64>> {
    if b_p_item.len() != q_ft.0.len() {
        return Err(Error::Structure("bias and calibration vectors differ in length".into()));
    }
    Ok(q_ft.0.iter().zip(b_p_item).map(|(&q, &b)| math::ln(q) - b).collect())
}

/// Per-group weighted mean `sum_{i in G} w_i * value_i`; within each group
/// the weights must be nonnegative and sum to 1.
pub fn aggregate_group(values: &[f64], weights: &[f64], catalog: &Catalog) -> Result<Vec<f64>> {
    if values.len() != catalog.n_items() || weights.len() != catalog.n_items() {
        return Err(Error::Structure("one value and one weight per item required".into()));
    }
    catalog
        .groups()
        .map(|g| {
            let members = catalog.members(g);
            let sum: f64 = members.iter().map(|i| weights[i.index()]).sum();
            if members.iter().any(|i| !(weights[i.index()] >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "weights of {g} must be nonnegative and sum to 1 (sum = {sum})"
                )));
            }
            Ok(members.iter().map(|i| weights[i.index()] * values[i.index()]).sum())
        })
        .collect()
}

/// How in-group weights are derived from the validation data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum WeightsMode {
    /// Frequency of the item among validation targets.
    #[default]
    ValidationFrequency,
    /// Frequency of the item among validation history items.
    HistExposure,
}

/// In-group weights plus the items that received zero weight.
pub fn group_weights(
    validation: &InteractionDataset,
    catalog: &Catalog,
    mode: WeightsMode,
) -> Result<(Vec<f64>, Vec<ItemId>)> {
    let mut counts = alloc::vec![0.0; catalog.n_items()];
    for ex in validation.examples() {
        match mode {
            WeightsMode::ValidationFrequency => counts[ex.target.index()] += 1.0,
            WeightsMode::HistExposure => ex.seq.items().iter().for_each(|i| counts[i.index()] += 1.0),
        }
    }
    let mut weights = alloc::vec![0.0; catalog.n_items()];
    for g in catalog.groups() {
        let members = catalog.members(g);
        let total: f64 = members.iter().map(|i| counts[i.index()]).sum();
        if total == 0.0 {
            return Err(Error::Validation(format!("{g} has no weight in the validation data")));
        }
        for i in members {
            weights[i.index()] = counts[i.index()] / total;
        }
    }
    let zero = catalog.items().filter(|i| weights[i.index()] == 0.0).collect();
    Ok((weights, zero))
}

/// Centered components and their hist-weighted second moments.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Decomposition {
    pub delta_p_centered: Vec<f64>,
    pub delta_d_centered: Vec<f64>,
    pub var_p: f64,
    pub var_d: f64,
    pub cov: f64,
    /// `var_p + var_d + 2 cov`.
    pub var_log_r_pred: f64,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("{what} is not a distribution (sum = {s})")));
    }
    Ok(())
}

fn weighted_mean(values: &[f64], w: &[f64]) -> f64 {
    values.iter().zip(w).map(|(v, w)| v * w).sum()
}

pub fn decompose(b_p_group: &[f64], delta_group: &[f64], hist_ratio: &[f64]) -> Result<Decomposition> {
    check_distribution(hist_ratio, "hist_ratio")?;
    if b_p_group.len() != hist_ratio.len() || delta_group.len() != hist_ratio.len() {
        return Err(Error::Structure("group vectors differ in length".into()));
    }
    let center = |v: &[f64]| -> Vec<f64> {
        let m = weighted_mean(v, hist_ratio);
        v.iter().map(|x| x - m).collect()
    };
    let dp = center(b_p_group);
    let dd = center(delta_group);
    let moment =
        |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(hist_ratio).map(|((x, y), w)| w * x * y).sum() };
    let var_p = moment(&dp, &dp);
    let var_d = moment(&dd, &dd);
    let cov = moment(&dp, &dd);
    Ok(Decomposition {
        var_log_r_pred: var_p + var_d + 2.0 * cov,
        delta_p_centered: dp,
        delta_d_centered: dd,
        var_p,
        var_d,
        cov,
    })
}

/// Softmax exposure model:
/// `rec(G) = hist(G) exp(b(G)) / sum_m hist(G_m) exp(b(G_m))`.
pub fn expected_rec_ratio(hist_ratio: &[f64], b_total: &[f64]) -> Result<Vec<f64>> {
    check_distribution(hist_ratio, "hist_ratio")?;
    if b_total.len() != hist_ratio.len() || b_total.iter().any(|b| !b.is_finite()) {
        return Err(Error::Validation("b_total must be finite, one per group".into()));
    }
    // equal biases cancel exactly
    if b_total.iter().all(|&b| b == b_total[0]) {
        return Ok(hist_ratio.to_vec());
    }
    let max = b_total.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = hist_ratio.iter().zip(b_total).map(|(h, b)| h * math::exp(b - max)).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// Relative recommendation intensity `R(G) = rec(G) / hist(G)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Intensity {
    pub ratio: Vec<f64>,
    /// `log R(G_a) - log R(G_b)` at `[a][b]`.
    pub log_ratio: Vec<Vec<f64>>,
}

pub fn intensity_ratio(rec_ratio: &[f64], hist_ratio: &[f64]) -> Result<Intensity> {
    if rec_ratio.len() != hist_ratio.len() {
        return Err(Error::Structure("rec and hist ratios differ in length".into()));
    }
    if let Some(g) = hist_ratio.iter().position(|&h| !(h > 0.0)) {
        return Err(Error::UndefinedIntensity(GroupId(g as u32)));
    }
    let log_r: Vec<f64> =
        rec_ratio.iter().zip(hist_ratio).map(|(&r, &h)| math::ln(r) - math::ln(h)).collect();
    let ratio = rec_ratio.iter().zip(hist_ratio).map(|(r, h)| r / h).collect();
    let log_ratio = log_r.iter().map(|a| log_r.iter().map(|b| a - b).collect()).collect();
    Ok(Intensity { ratio, log_ratio })
}

/// Summary of one calibration run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverSummary {
    pub status: SolverStatus,
    pub iterations: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub unseen_targets: Vec<ItemId>,
}

impl From<&Calibration> for SolverSummary {
    fn from(c: &Calibration) -> Self {
        Self {
            status: c.status,
            iterations: c.iterations,
            objective: c.objective,
            grad_norm: c.grad_norm,
            unseen_targets: c.unseen_targets.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BiasReport {
    pub weights_mode: WeightsMode,
    pub hist_ratio: Vec<f64>,
    pub b_p_item: Vec<f64>,
    pub delta_item: Vec<f64>,
    pub b_p_group: Vec<f64>,
    pub delta_group: Vec<f64>,
    pub delta_p_centered: Vec<f64>,
    pub delta_d_centered: Vec<f64>,
    pub var_p: f64,
    pub var_d: f64,
    pub cov: f64,
    pub var_log_r_pred: f64,
    /// Hist-weighted variance of `log R` under the exposure model driven by
    /// the estimated total bias.
    pub var_log_r: f64,
    /// Hist-weighted mean of `(log R)^2`: dispersion around parity `R = 1`.
    pub log_r_mean_square: f64,
    /// Variance of each item's score across validation states, pre and post.
    pub pre_item_score_variance: Vec<f64>,
    pub post_item_score_variance: Vec<f64>,
    pub zero_weight_items: Vec<ItemId>,
    pub pre_solver: SolverSummary,
    pub post_solver: SolverSummary,
}

impl BiasReport {
    pub fn converged(&self) -> bool {
        self.pre_solver.status == SolverStatus::Converged
            && self.post_solver.status == SolverStatus::Converged
    }
}

fn score_variance(table: &ScoreTable) -> Vec<f64> {
    let n = table.targets.len() as f64;
    let mut mean = alloc::vec![0.0; table.n_items];
    let mut sq = alloc::vec![0.0; table.n_items];
    for (row, _) in table.rows() {
        for (k, &f) in row.iter().enumerate() {
            mean[k] += f;
            sq[k] += f * f;
        }
    }
    mean.iter().zip(&sq).map(|(m, s)| (s / n - (m / n) * (m / n)).max(0.0)).collect()
}

/// Log-intensity dispersion of the exposure model for a total group bias.
pub fn log_intensity_moments(hist_ratio: &[f64], b_total: &[f64]) -> Result<(f64, f64)> {
    let rec = expected_rec_ratio(hist_ratio, b_total)?;
    let intensity = intensity_ratio(&rec, hist_ratio)?;
    let log_r: Vec<f64> = intensity.ratio.iter().map(|&r| math::ln(r)).collect();
    let mean = weighted_mean(&log_r, hist_ratio);
    let var = log_r.iter().zip(hist_ratio).map(|(l, h)| h * (l - mean) * (l - mean)).sum();
    let mean_square = log_r.iter().zip(hist_ratio).map(|(l, h)| h * l * l).sum();
    Ok((var, mean_square))
}

/// Calibrate both policies and assemble the full report. Calibrations that
/// do not converge are reported through the solver summaries, never hidden.
pub fn full_bias_report(
    pre: &PolicyParams,
    post: &PolicyParams,
    catalog: &Catalog,
    validation: &InteractionDataset,
    weights_mode: WeightsMode,
    options: &SolverOptions,
) -> Result<BiasReport> {
    let pre_table = ScoreTable::from_policy(pre, catalog, validation)?;
    let post_table = ScoreTable::from_policy(post, catalog, validation)?;
    let pre_cal = calibrate_scores(&pre_table, options)?;
    let post_cal = calibrate_scores(&post_table, options)?;
    assemble_report(catalog, validation, weights_mode, &pre_table, &post_table, &pre_cal, &post_cal)
}

/// Report from already-computed calibrations (lets callers run the two
/// solves concurrently).
pub fn assemble_report(
    catalog: &Catalog,
    validation: &InteractionDataset,
    weights_mode: WeightsMode,
    pre_table: &ScoreTable,
    post_table: &ScoreTable,
    pre_cal: &Calibration,
    post_cal: &Calibration,
) -> Result<BiasReport> {
    let b_p_item = item_bias(&pre_cal.q);
    let delta_item = bias_shift(&b_p_item, &post_cal.q)?;
    let (weights, zero_weight_items) = group_weights(validation, catalog, weights_mode)?;
    let b_p_group = aggregate_group(&b_p_item, &weights, catalog)?;
    let delta_group = aggregate_group(&delta_item, &weights, catalog)?;
    let hist = validation.hist_ratio();
    let d = decompose(&b_p_group, &delta_group, hist)?;
    let b_total: Vec<f64> = b_p_group.iter().zip(&delta_group).map(|(a, b)| a + b).collect();
    let (var_log_r, log_r_mean_square) = log_intensity_moments(hist, &b_total)?;
    Ok(BiasReport {
        weights_mode,
        hist_ratio: hist.to_vec(),
        b_p_item,
        delta_item,
        b_p_group,
        delta_group,
        delta_p_centered: d.delta_p_centered,
        delta_d_centered: d.delta_d_centered,
        var_p: d.var_p,
        var_d: d.var_d,
        cov: d.cov,
        var_log_r_pred: d.var_log_r_pred,
        var_log_r,
        log_r_mean_square,
        pre_item_score_variance: score_variance(pre_table),
        post_item_score_variance: score_variance(post_table),
        zero_weight_items,
        pre_solver: pre_cal.into(),
        post_solver: post_cal.into(),
    })
}
