//! Pipeline stages behind the subcommands. Every stage reads and writes
//! under one workdir; see [`Layout`] for the file names.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use ufo_core::bias::{assemble_report, calibrate_scores, BiasReport};
use ufo_core::data::generate_dataset;
use ufo_core::metrics::{format_improvement, relative_improvement};
use ufo_core::selfplay::{run_ufo, EarlyStopEvent, Evaluator, IterationRecord, Snapshot};
use ufo_core::sft::{init_pretrained, train_sft};
use ufo_core::{InteractionDataset, PolicyParams};

use crate::config::{derive_seed, BiasReference, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::eval::{self, EvalReport, MetricRow, ParallelHeldOut};
use crate::io::{self, Checkpoint, LoadedCatalog};
use crate::manifest::{stage_timestamp, LineageEntry, Manifest, StageRecord};

/// File names under the workdir.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn catalog(&self) -> PathBuf {
        self.root.join("catalog.json")
    }

    /// `train`, `valid`, `test` or `calib`.
    pub fn split(&self, name: &str) -> PathBuf {
        self.root.join("data").join(format!("{name}.jsonl"))
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.json"))
    }

    pub fn sft_curve(&self) -> PathBuf {
        self.root.join("sft_curve.csv")
    }

    pub fn bias_report(&self, ext: &str) -> PathBuf {
        self.root.join(format!("bias_report.{ext}"))
    }

    pub fn ufo_log(&self) -> PathBuf {
        self.root.join("ufo_log.jsonl")
    }

    pub fn ufo_report(&self) -> PathBuf {
        self.root.join("ufo_report.json")
    }

    pub fn eval_dir(&self, label: &str) -> PathBuf {
        self.root.join("eval").join(label)
    }

    pub fn compare(&self) -> PathBuf {
        self.root.join("compare.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    /// Path relative to the workdir with `/` separators, as stored in
    /// artifacts so that they do not depend on where the workdir lives.
    pub fn rel(&self, path: &Path) -> String {
        let p = path.strip_prefix(&self.root).unwrap_or(path);
        p.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
    }
}

pub struct Context {
    pub layout: Layout,
    pub config: ExperimentConfig,
}

/// Completed command; non-empty `warnings` map to the warning exit status.
#[derive(Debug, Default)]
pub struct Outcome {
    pub warnings: Vec<String>,
}

struct Stage<'a> {
    ctx: &'a Context,
    name: String,
    outputs: BTreeMap<String, String>,
    lineage: Vec<LineageEntry>,
    forget: Option<&'static str>,
}

impl<'a> Stage<'a> {
    fn new(ctx: &'a Context, name: impl Into<String>) -> Self {
        Self { ctx, name: name.into(), outputs: BTreeMap::new(), lineage: Vec::new(), forget: None }
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<String> {
        let sha = io::write_bytes(path, bytes)?;
        self.outputs.insert(self.ctx.layout.rel(path), sha.clone());
        Ok(sha)
    }

    fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<String> {
        self.write(path, &io::to_json(value))
    }

    fn checkpoint(
        &mut self,
        name: &str,
        params: &PolicyParams,
        catalog: &LoadedCatalog,
        parent: Option<String>,
    ) -> Result<String> {
        let path = self.ctx.layout.checkpoint(name);
        let ck = Checkpoint::new(params, &catalog.checksum, parent.clone());
        let sha = self.write_json(&path, &ck)?;
        self.lineage.push(LineageEntry {
            name: name.to_owned(),
            path: self.ctx.layout.rel(&path),
            sha256: sha.clone(),
            parent,
        });
        Ok(sha)
    }

    fn finish(self) -> Result<()> {
        let path = self.ctx.layout.manifest();
        let mut m = Manifest::load_or_default(&path)?;
        m.record_stage(StageRecord {
            stage: self.name,
            config_checksum: self.ctx.config.checksum(),
            seed: self.ctx.config.seed,
            timestamp: stage_timestamp(),
            outputs: self.outputs,
        });
        if let Some(prefix) = self.forget {
            m.forget_checkpoints(prefix);
        }
        for e in self.lineage {
            m.record_checkpoint(e);
        }
        io::write_json(&path, &m)?;
        Ok(())
    }
}

impl Context {
    fn catalog(&self) -> Result<LoadedCatalog> {
        io::load_catalog(&self.layout.catalog())
    }

    fn dataset(&self, split: &str, catalog: &LoadedCatalog) -> Result<InteractionDataset> {
        io::load_dataset(&self.layout.split(split), &catalog.catalog)
    }

    pub fn gen_data(&self) -> Result<Outcome> {
        self.config.validate()?;
        let root = self.layout.root();
        if !root.exists() {
            std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
            log::info!("created workdir {}", root.display());
        }
        let cfg = &self.config;
        let w = &cfg.world;
        let catalog = cfg.catalog()?;
        let truth = cfg.truth(&catalog)?;
        let all =
            generate_dataset(&catalog, &truth, w.n_sequences, w.seq_len, derive_seed(cfg.seed, "data"))?;
        let splits = all.split(w.split, derive_seed(cfg.seed, "split"), &catalog)?;
        let calib = generate_dataset(
            &catalog,
            &cfg.calib_truth(&catalog)?,
            w.calib_sequences,
            w.seq_len,
            derive_seed(cfg.seed, "calib"),
        )?;

        let mut stage = Stage::new(self, "gen-data");
        stage.write_json(&self.layout.catalog(), &io::CatalogFile::from(&catalog))?;
        for (name, data) in ["train", "valid", "test"].into_iter().zip(&splits) {
            stage.write(&self.layout.split(name), &io::dataset_jsonl(data))?;
        }
        stage.write(&self.layout.split("calib"), &io::dataset_jsonl(&calib))?;
        log::info!(
            "wrote {} / {} / {} examples and {} calibration examples",
            splits[0].len(),
            splits[1].len(),
            splits[2].len(),
            calib.len()
        );
        stage.finish()?;
        Ok(Outcome::default())
    }

    pub fn sft(&self) -> Result<Outcome> {
        self.config.validate()?;
        let catalog = self.catalog()?;
        let train = self.dataset("train", &catalog)?;
        let pre = init_pretrained(&catalog.catalog, &self.config.pretrain_spec())?;
        let out = train_sft(&pre, &catalog.catalog, &train, &self.config.train_config())?;

        #[derive(Serialize)]
        struct CurveRow {
            epoch: usize,
            loss: f64,
        }
        let curve: Vec<CurveRow> =
            out.epoch_losses.iter().enumerate().map(|(epoch, &loss)| CurveRow { epoch, loss }).collect();

        let mut stage = Stage::new(self, "sft");
        let pre_sha = stage.checkpoint("pretrained", &pre, &catalog, None)?;
        stage.checkpoint("sft", &out.params, &catalog, Some(pre_sha))?;
        stage.write(&self.layout.sft_curve(), &io::csv_bytes(&curve))?;
        log::info!("sft loss {:?}", out.epoch_losses);
        stage.finish()?;
        Ok(Outcome::default())
    }

    pub fn estimate_bias(&self, pre: Option<&Path>, post: Option<&Path>) -> Result<Outcome> {
        self.config.validate()?;
        let catalog = self.catalog()?;
        let reference = match self.config.bias.reference {
            BiasReference::Calib => self.dataset("calib", &catalog)?,
            BiasReference::Validation => self.dataset("valid", &catalog)?,
        };
        let default_pre = self.layout.checkpoint("pretrained");
        let default_post = self.layout.checkpoint("sft");
        let pre = io::load_checkpoint(pre.unwrap_or(&default_pre), &catalog)?;
        let post = io::load_checkpoint(post.unwrap_or(&default_post), &catalog)?;
        let c = &catalog.catalog;
        let opts = self.config.solver_options();

        let pre_table = eval::score_table(&pre.params, c, &reference)?;
        let post_table = eval::score_table(&post.params, c, &reference)?;
        let (pre_cal, post_cal) =
            rayon::join(|| calibrate_scores(&pre_table, &opts), || calibrate_scores(&post_table, &opts));
        let (pre_cal, post_cal) = (pre_cal?, post_cal?);
        let report = assemble_report(
            c,
            &reference,
            self.config.bias.weights_mode,
            &pre_table,
            &post_table,
            &pre_cal,
            &post_cal,
        )?;

        let mut stage = Stage::new(self, "estimate-bias");
        stage.write_json(&self.layout.bias_report("json"), &report)?;
        stage.write(&self.layout.bias_report("csv"), &io::csv_bytes(&bias_rows(&report)))?;
        stage.finish()?;

        let mut outcome = Outcome::default();
        if !report.converged() {
            outcome.warnings.push(format!(
                "calibration did not converge (pre: {:?}, post: {:?}); report written anyway",
                report.pre_solver.status, report.post_solver.status
            ));
        }
        log::info!("cov(delta_p, delta_d) = {:e}", report.cov);
        Ok(outcome)
    }

    pub fn ufo(&self, sft: Option<&Path>) -> Result<Outcome> {
        self.config.validate()?;
        let catalog = self.catalog()?;
        let train = self.dataset("train", &catalog)?;
        let test = self.dataset("test", &catalog)?;
        let default_sft = self.layout.checkpoint("sft");
        let sft = io::load_checkpoint(sft.unwrap_or(&default_sft), &catalog)?;
        let config = self.config.ufo_config();
        let c = &catalog.catalog;
        let evaluator = ParallelHeldOut {
            catalog: c,
            data: &test,
            hist_ratio: test.hist_ratio(),
            fairness_k: self.config.eval.fairness_k,
            accuracy_k: self.config.eval.accuracy_k,
        };

        let mut stage = Stage::new(self, "ufo");
        stage.forget = Some("ufo-");
        let mut log_bytes = Vec::new();
        io::write_bytes(&self.layout.ufo_log(), &log_bytes)?;
        let mut shas = vec![sft.checksum.clone()];
        let mut io_error = None;
        let result = run_ufo(&sft.params, &train, c, &config, &evaluator, |record, params| {
            let mut step = || -> Result<()> {
                let name = format!("ufo-iter-{}", record.iteration);
                let sha = stage.checkpoint(&name, params, &catalog, shas.last().cloned())?;
                shas.push(sha);
                let line = LogLine::new(record, self.layout.rel(&self.layout.checkpoint(&name)));
                serde_json::to_writer(&mut log_bytes, &line).expect("log line serializes");
                log_bytes.push(b'\n');
                io::write_bytes(&self.layout.ufo_log(), &log_bytes)?;
                log::info!(
                    "iteration {}: loss {:.6} mgu@{} {:.4} hr@{} {:.4}",
                    record.iteration,
                    record.loss,
                    record.snapshot.fairness.k,
                    record.snapshot.fairness.mgu,
                    record.snapshot.accuracy.k,
                    record.snapshot.accuracy.hr
                );
                Ok(())
            };
            step().map_err(|e| {
                let msg = e.to_string();
                io_error = Some(e);
                ufo_core::Error::Evaluation(msg)
            })
        });
        if let Some(e) = io_error {
            return Err(e);
        }
        stage.outputs.insert(self.layout.rel(&self.layout.ufo_log()), io::sha256_hex(&log_bytes));

        match result {
            Ok(out) => {
                let parent = shas[out.kept_iteration].clone();
                stage.checkpoint("ufo-final", &out.params, &catalog, Some(parent))?;
                let report = UfoReport {
                    baseline: Some(out.baseline),
                    records: out.records,
                    kept_iteration: out.kept_iteration,
                    early_stop: out.early_stop,
                    final_checkpoint: self.layout.rel(&self.layout.checkpoint("ufo-final")),
                    error: None,
                };
                stage.write_json(&self.layout.ufo_report(), &report)?;
                stage.finish()?;
                if let Some(ev) = report.early_stop {
                    log::info!(
                        "early stop at iteration {} (hr {:.4} vs running max {:.4}); kept iteration {}",
                        ev.iteration,
                        ev.hr,
                        ev.running_max,
                        report.kept_iteration
                    );
                }
                Ok(Outcome::default())
            }
            Err(fail) => {
                let parent = shas[fail.last_good_iteration].clone();
                stage.checkpoint("ufo-last-good", &fail.last_good, &catalog, Some(parent))?;
                let report = UfoReport {
                    baseline: evaluator.snapshot(&sft.params).ok(),
                    records: fail.records,
                    kept_iteration: fail.last_good_iteration,
                    early_stop: None,
                    final_checkpoint: self.layout.rel(&self.layout.checkpoint("ufo-last-good")),
                    error: Some(fail.error.to_string()),
                };
                stage.write_json(&self.layout.ufo_report(), &report)?;
                stage.finish()?;
                Err(fail.error.into())
            }
        }
    }

    pub fn eval(&self, checkpoint: &Path, ks: Option<&[usize]>, label: Option<&str>) -> Result<Outcome> {
        self.config.validate()?;
        let catalog = self.catalog()?;
        let test_path = self.layout.split("test");
        let test = io::load_dataset(&test_path, &catalog.catalog)?;
        let dataset = io::sha256_hex(&io::read_bytes(&test_path)?);
        let ck = io::load_checkpoint(checkpoint, &catalog)?;
        let ks = ks.unwrap_or(&self.config.eval.ks);
        if ks.is_empty() || ks.iter().any(|&k| k == 0 || k > catalog.catalog.n_items()) {
            return Err(CliError::Config(format!("K values must lie in 1..={}", catalog.catalog.n_items())));
        }
        let label = match label {
            Some(l) => l.to_owned(),
            None => checkpoint
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".into()),
        };
        let results = eval::sweep(&ck.params, &catalog.catalog, &test, test.hist_ratio(), ks)?;
        let threshold = self.config.eval.epsilon_threshold;
        let reports: Vec<EvalReport> =
            results.into_iter().map(|(f, a)| EvalReport::new(&label, &dataset, f, a, threshold)).collect();

        #[derive(Serialize)]
        struct SweepRow {
            #[serde(rename = "K")]
            k: usize,
            mgu: Option<f64>,
            dgu: Option<f64>,
        }
        let dir = self.layout.eval_dir(&label);
        let mut stage = Stage::new(self, format!("eval:{label}"));
        for r in &reports {
            stage.write_json(&dir.join(format!("k{}.json", r.k)), r)?;
        }
        let sweep: Vec<SweepRow> =
            reports.iter().map(|r| SweepRow { k: r.k, mgu: r.mgu, dgu: r.dgu }).collect();
        stage.write(&dir.join("sweep.csv"), &io::csv_bytes(&sweep))?;
        let rows: Vec<MetricRow> = reports.iter().map(MetricRow::from).collect();
        stage.write(&dir.join("metrics.csv"), &io::csv_bytes(&rows))?;
        stage.finish()?;
        Ok(Outcome::default())
    }

    /// Writes the comparison CSV and returns the rendered table.
    pub fn compare(
        &self,
        candidate: &Path,
        baseline: &Path,
        out: Option<&Path>,
    ) -> Result<(Outcome, String)> {
        let a: EvalReport = io::read_json(candidate)?;
        let b: EvalReport = io::read_json(baseline)?;
        let cmp = compare_reports(&a, &b)?;
        let default_out = self.layout.compare();
        let out = out.unwrap_or(&default_out);
        let mut stage = Stage::new(self, "compare");
        stage.write(out, &io::csv_bytes(&cmp.rows))?;
        stage.finish()?;
        Ok((Outcome { warnings: cmp.warnings }, cmp.table))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRow {
    pub group_id: usize,
    pub b_p: f64,
    pub delta: f64,
    pub delta_p_centered: f64,
    pub delta_d_centered: f64,
}

pub fn bias_rows(r: &BiasReport) -> Vec<BiasRow> {
    (0..r.b_p_group.len())
        .map(|g| BiasRow {
            group_id: g,
            b_p: r.b_p_group[g],
            delta: r.delta_group[g],
            delta_p_centered: r.delta_p_centered[g],
            delta_d_centered: r.delta_d_centered[g],
        })
        .collect()
}

/// One line of `ufo_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogLine {
    pub iter: usize,
    pub loss: f64,
    pub initial_loss: f64,
    pub n_triplets: usize,
    pub mgu: f64,
    pub dgu: f64,
    pub epsilon_star: f64,
    pub ndcg: f64,
    pub hr: f64,
    pub checkpoint: String,
}

impl LogLine {
    fn new(r: &IterationRecord, checkpoint: String) -> Self {
        let s = &r.snapshot;
        Self {
            iter: r.iteration,
            loss: r.loss,
            initial_loss: r.initial_loss,
            n_triplets: r.n_triplets,
            mgu: s.fairness.mgu,
            dgu: s.fairness.dgu,
            epsilon_star: s.fairness.epsilon_star,
            ndcg: s.accuracy.ndcg,
            hr: s.accuracy.hr,
            checkpoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UfoReport {
    /// Metrics of the SFT policy, iteration 0.
    pub baseline: Option<Snapshot>,
    pub records: Vec<IterationRecord>,
    pub kept_iteration: usize,
    pub early_stop: Option<EarlyStopEvent>,
    pub final_checkpoint: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub metric: &'static str,
    /// `lower` for fairness metrics, `higher` for accuracy.
    pub better: &'static str,
    pub candidate: Option<f64>,
    pub baseline: Option<f64>,
    /// Formatted relative improvement, or `absent` when either side lacks
    /// the metric.
    pub relative_improvement: String,
}

pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub table: String,
    pub warnings: Vec<String>,
}

pub fn compare_reports(candidate: &EvalReport, baseline: &EvalReport) -> Result<Comparison> {
    if candidate.k != baseline.k {
        return Err(CliError::Config(format!(
            "cannot compare reports at K = {} and K = {}",
            candidate.k, baseline.k
        )));
    }
    if candidate.dataset != baseline.dataset {
        return Err(CliError::Config("reports were computed on different test sets".into()));
    }
    let metrics: [(&'static str, &'static str, Option<f64>, Option<f64>); 5] = [
        ("mgu", "lower", candidate.mgu, baseline.mgu),
        ("dgu", "lower", candidate.dgu, baseline.dgu),
        ("epsilon_star", "lower", candidate.epsilon_star, baseline.epsilon_star),
        ("ndcg", "higher", candidate.ndcg, baseline.ndcg),
        ("hr", "higher", candidate.hr, baseline.hr),
    ];
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    for (metric, better, c, b) in metrics {
        let relative_improvement = match (c, b) {
            (Some(c), Some(b)) => match relative_improvement(c, b) {
                Ok(p) => format_improvement(p),
                Err(e) => {
                    warnings.push(format!("{metric}: {e}"));
                    "undefined".to_owned()
                }
            },
            _ => {
                warnings.push(format!("{metric} is missing from one report"));
                "absent".to_owned()
            }
        };
        rows.push(CompareRow { metric, better, candidate: c, baseline: b, relative_improvement });
    }
    let cell = |v: Option<f64>| v.map_or_else(|| "absent".to_owned(), |x| format!("{x:.4}"));
    let mut table = format!(
        "| metric (K={}) | {} | {} |\n|---|---|---|\n",
        candidate.k, baseline.method, candidate.method
    );
    for r in &rows {
        let arrow = if r.better == "lower" { "↓" } else { "↑" };
        table.push_str(&format!(
            "| {}{} | {} | {} ({}) |\n",
            r.metric,
            arrow,
            cell(r.baseline),
            cell(r.candidate),
            r.relative_improvement
        ));
    }
    Ok(Comparison { rows, table, warnings })
}
