//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use ufo_core::bias::{
    aggregate_group, calibrate_scores, decompose, expected_rec_ratio, group_weights, intensity_ratio,
    item_bias, ScoreTable, SolverOptions, WeightsMode,
};
use ufo_core::data::{generate_dataset, GroundTruthModel};
use ufo_core::metrics::{
    accuracy_from_lists, fairness_from_proportions, format_improvement, group_proportions,
    relative_improvement,
};
use ufo_core::mixture::{kl_decomposition_check, MixtureReference};
use ufo_core::rng::substream;
use ufo_core::selfplay::{iteration_triplets, run_ufo, ufo_loss, HeldOut, Triplet, UfoConfig};
use ufo_core::sft::{init_pretrained, sft_loss, train_sft, PretrainSpec, TrainConfig};
use ufo_core::{Catalog, Example, GroupId, InteractionSequence, ItemId, PolicyParams};

type Verdict = (bool, String);
type Criterion = (&'static str, fn() -> Verdict);

fn random_params(c: &Catalog, rng: &mut impl Rng, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::zeros(c);
    p.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    p
}

fn random_seq(rng: &mut impl Rng, n_items: usize) -> InteractionSequence {
    let len = rng.random_range(1..=6);
    InteractionSequence::new((0..len).map(|_| ItemId(rng.random_range(0..n_items) as u32)).collect()).unwrap()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

// 1 -------------------------------------------------------------------------

fn worst_fd_error(f: impl Fn(&PolicyParams) -> f64, at: &PolicyParams, analytic: &PolicyParams) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for j in 0..at.values().len() {
        let (mut plus, mut minus) = (at.clone(), at.clone());
        plus.values_mut()[j] += h;
        minus.values_mut()[j] -= h;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let a = analytic.values()[j];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
    }
    worst
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let (mut lp, mut sft, mut ufo) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..20 {
        let c = Catalog::generate(30, 3, 8, seed).unwrap();
        let mut rng = substream(seed, "acceptance-1");
        let p = random_params(&c, &mut rng, 1.0);

        let s = random_seq(&mut rng, 30);
        let i = ItemId(rng.random_range(0..30));
        let g = p.grad_log_prob(&c, &s, i).unwrap();
        lp = lp.max(worst_fd_error(|q| q.log_prob(&c, &s, i).unwrap(), &p, &g));

        let examples: Vec<Example> = (0..5)
            .map(|_| Example { seq: random_seq(&mut rng, 30), target: ItemId(rng.random_range(0..30)) })
            .collect();
        let batch: Vec<&Example> = examples.iter().collect();
        let teacher_policy = random_params(&c, &mut rng, 1.0);
        let teacher: Vec<Vec<f64>> = examples
            .iter()
            .map(|ex| teacher_policy.evaluate_seq(&c, &ex.seq).unwrap().group_log_probs)
            .collect();
        let t: Vec<&[f64]> = teacher.iter().map(Vec::as_slice).collect();
        let (l1, l2) = (0.5 + seed as f64 / 20.0, 0.1 * (seed % 3) as f64);
        let (_, g) = sft_loss(&p, &c, &batch, l1, l2, Some(&t)).unwrap();
        sft = sft.max(worst_fd_error(|q| sft_loss(q, &c, &batch, l1, l2, Some(&t)).unwrap().0, &p, &g));

        let reference = MixtureReference::new(
            random_params(&c, &mut rng, 1.0),
            random_params(&c, &mut rng, 1.0),
            rng.random(),
        )
        .unwrap();
        let triplets: Vec<Triplet> = (0..6)
            .map(|_| Triplet {
                seq: random_seq(&mut rng, 30),
                i_fair: ItemId(rng.random_range(0..30)),
                i_gen: ItemId(rng.random_range(0..30)),
            })
            .collect();
        let beta = [0.1, 1.0, 3.0][seed as usize % 3];
        let (_, g) = ufo_loss(&p, &reference, &c, &triplets, beta).unwrap();
        ufo = ufo.max(worst_fd_error(|q| ufo_loss(q, &reference, &c, &triplets, beta).unwrap().0, &p, &g));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = lp <= 1e-4 && sft <= 1e-4 && ufo <= 1e-4 && secs < 60.0;
    (pass, format!("20 instances; worst relative error log_prob {lp:.1e}, sft_loss {sft:.1e}, ufo_loss {ufo:.1e}; {secs:.1}s"))
}

// 2 -------------------------------------------------------------------------

fn criterion_2() -> Verdict {
    let c = Catalog::generate(30, 3, 8, 2).unwrap();
    let mut rng = substream(2, "acceptance-2");
    let (mut worst_var, mut worst_gap) = (0.0f64, 0.0f64);
    for alpha in [0.3, 0.7] {
        let reference =
            MixtureReference::new(random_params(&c, &mut rng, 1.5), random_params(&c, &mut rng, 1.5), alpha)
                .unwrap();
        for _ in 0..5 {
            let s = random_seq(&mut rng, 30);
            let cs: Vec<f64> = (0..10)
                .map(|_| {
                    kl_decomposition_check(&random_params(&c, &mut rng, 1.5), &reference, &c, &s).unwrap().c_s
                })
                .collect();
            let mean = cs.iter().sum::<f64>() / cs.len() as f64;
            let var = cs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (cs.len() - 1) as f64;
            // log of sum_i pi_t(i)^(1-alpha) pi_sft(i)^alpha, summed in probability space
            let cur = reference.current.evaluate_seq(&c, &s).unwrap().log_marginals(&c);
            let anc = reference.anchor.evaluate_seq(&c, &s).unwrap().log_marginals(&c);
            let z: f64 =
                cur.iter().zip(&anc).map(|(a, b)| a.exp().powf(1.0 - alpha) * b.exp().powf(alpha)).sum();
            worst_var = worst_var.max(var);
            worst_gap = worst_gap.max(cs.iter().map(|x| (x - z.ln()).abs()).fold(0.0, f64::max));
        }
    }
    (
        worst_var <= 1e-10 && worst_gap <= 1e-12,
        format!("alpha 0.3 / 0.7, 5 states x 10 policies; max var(c) {worst_var:.1e}, max |c - log Z| {worst_gap:.1e}"),
    )
}

// 3 -------------------------------------------------------------------------

fn criterion_3() -> Verdict {
    let mut endpoint: f64 = 0.0;
    for seed in 0..10 {
        let c = Catalog::generate(30, 3, 8, seed).unwrap();
        let mut rng = substream(seed, "acceptance-3");
        let (t, s) = (random_params(&c, &mut rng, 1.5), random_params(&c, &mut rng, 1.5));
        let seq = random_seq(&mut rng, 30);
        for (alpha, base) in [(0.0, &t), (1.0, &s)] {
            let r = MixtureReference::new(t.clone(), s.clone(), alpha).unwrap();
            for i in c.items() {
                let gap = (r.log_prob(&c, &seq, i).unwrap() - base.log_prob(&c, &seq, i).unwrap()).abs();
                endpoint = endpoint.max(gap);
            }
        }
    }

    // alpha = 1 keeps the reference at the SFT policy in every iteration
    let c = Catalog::generate(30, 3, 8, 3).unwrap();
    let truth = GroundTruthModel::archetypes(&c, 0.7, 0.5, vec![1.0; 3], 3).unwrap();
    let data = generate_dataset(&c, &truth, 400, 5, 3).unwrap();
    let mut rng = substream(3, "acceptance-3-policy");
    let sft = random_params(&c, &mut rng, 0.5);
    let config = UfoConfig {
        alpha: 1.0,
        iterations: 3,
        learning_rate: 0.5,
        batch_size: Some(32),
        seed: 3,
        ..Default::default()
    };
    let eval =
        HeldOut { catalog: &c, data: &data, hist_ratio: data.hist_ratio(), fairness_k: 1, accuracy_k: 5 };
    let mut policies = vec![sft.clone()];
    let out = run_ufo(&sft, &data, &c, &config, &eval, |_, p| {
        policies.push(p.clone());
        Ok(())
    })
    .unwrap();
    let dual = |theta: &PolicyParams, triplets: &[Triplet]| -> f64 {
        let total: f64 = triplets
            .iter()
            .map(|t| {
                let ratio = |i| theta.log_prob(&c, &t.seq, i).unwrap() - sft.log_prob(&c, &t.seq, i).unwrap();
                softplus(-config.beta * (ratio(t.i_fair) - ratio(t.i_gen)))
            })
            .sum();
        total / triplets.len() as f64
    };
    let mut loss_gap: f64 = 0.0;
    for r in &out.records {
        let t = r.iteration;
        let (_, triplets) = iteration_triplets(&policies[t - 1], &sft, &data, &c, &config, t).unwrap();
        loss_gap = loss_gap.max((r.initial_loss - dual(&policies[t - 1], &triplets)).abs());
        loss_gap = loss_gap.max((r.loss - dual(&policies[t], &triplets)).abs());
    }
    (
        endpoint <= 1e-12 && loss_gap <= 1e-12 && out.records.len() == 3,
        format!("max endpoint gap {endpoint:.1e} over 10 instances; alpha=1 loss vs fixed-reference implementation {loss_gap:.1e}"),
    )
}

// 4 -------------------------------------------------------------------------

fn criterion_4() -> Verdict {
    let mut rng = substream(4, "acceptance-4");
    let mut worst: f64 = 0.0;
    let mut equal_exact = true;
    for _ in 0..100 {
        let n = rng.random_range(2..8);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let hist: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let rec = expected_rec_ratio(&hist, &b).unwrap();
        let r = intensity_ratio(&rec, &hist).unwrap();
        for a in 0..n {
            for c in 0..n {
                worst =
                    worst.max((r.ratio[a] / r.ratio[c] - (b[a] - b[c]).exp()).abs() / (b[a] - b[c]).exp());
                worst = worst.max((r.log_ratio[a][c] - (b[a] - b[c])).abs());
            }
        }
        let flat = vec![b[0]; n];
        equal_exact &= expected_rec_ratio(&hist, &flat).unwrap() == hist;
    }
    (
        worst <= 1e-12 && equal_exact,
        format!("100 bias vectors; max deviation from exp(b_a - b_b) {worst:.1e}; equal biases return hist exactly: {equal_exact}"),
    )
}

// 5 -------------------------------------------------------------------------

fn hist_moments(v: &[f64], w: &[f64]) -> (f64, f64) {
    let mean: f64 = v.iter().zip(w).map(|(x, w)| x * w).sum();
    let var = v.iter().zip(w).map(|(x, w)| w * (x - mean) * (x - mean)).sum();
    let ms = v.iter().zip(w).map(|(x, w)| w * x * x).sum();
    (var, ms)
}

fn criterion_5() -> Verdict {
    let mut rng = substream(5, "acceptance-5");
    let (mut var_err, mut ms_err, mut identity): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for trial in 0..200 {
        let n = 5;
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let hist: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let scale = if trial < 100 { 0.05 } else { 3.0 };
        let bp: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let dec = decompose(&bp, &d, &hist).unwrap();
        let total: Vec<f64> = bp.iter().zip(&d).map(|(a, b)| a + b).collect();
        identity = identity.max((dec.var_log_r_pred - hist_moments(&total, &hist).0).abs());
        if scale <= 0.05 {
            let rec = expected_rec_ratio(&hist, &total).unwrap();
            let log_r: Vec<f64> = rec.iter().zip(&hist).map(|(r, h)| (r / h).ln()).collect();
            let (var, ms) = hist_moments(&log_r, &hist);
            var_err = var_err.max((var - dec.var_log_r_pred).abs() / dec.var_log_r_pred);
            ms_err = ms_err.max((ms - dec.var_log_r_pred).abs() / dec.var_log_r_pred);
        }
    }
    (
        var_err <= 0.05 && identity <= 1e-12,
        format!(
            "|delta| <= 0.05: Var[log R] vs prediction rel. error {var_err:.1e} (mean square {ms_err:.1e}); identity gap at any scale {identity:.1e}"
        ),
    )
}

// 6 -------------------------------------------------------------------------

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let mut rng = substream(6, "acceptance-6");
    let mut grid_gap: f64 = 0.0;
    for _ in 0..3 {
        let (mut scores, mut exp_rows, mut targets) = (Vec::new(), Vec::new(), Vec::new());
        let skew = [0.6, 0.0, -0.6];
        for _ in 0..120 {
            let logits: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let z = log_sum_exp(&logits);
            let row: Vec<f64> = logits.iter().map(|l| l - z).collect();
            let adj: Vec<f64> = row.iter().zip(&skew).map(|(r, s)| r - s).collect();
            let za = log_sum_exp(&adj);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let t = (0..3)
                .find(|&k| {
                    acc += (adj[k] - za).exp();
                    u < acc
                })
                .unwrap_or(2);
            exp_rows.push([row[0].exp(), row[1].exp(), row[2].exp()]);
            scores.extend(row);
            targets.push(t);
        }
        let cal = calibrate_scores(
            &ScoreTable { n_items: 3, scores, targets: targets.clone() },
            &SolverOptions::default(),
        )
        .unwrap();
        let objective = |q: [f64; 3]| -> f64 {
            exp_rows
                .iter()
                .zip(&targets)
                .map(|(e, &t)| (e[0] / q[0] + e[1] / q[1] + e[2] / q[2]).ln() - (e[t] / q[t]).ln())
                .sum()
        };
        let mut best = (f64::INFINITY, [0.0; 3]);
        for a in 1..999 {
            for b in 1..(1000 - a) {
                let q = [a as f64 / 1000.0, b as f64 / 1000.0, (1000 - a - b) as f64 / 1000.0];
                let v = objective(q);
                if v < best.0 {
                    best = (v, q);
                }
            }
        }
        for k in 0..3 {
            grid_gap = grid_gap.max((cal.q.0[k] - best.1[k]).abs());
        }
    }

    let c = Catalog::generate(50, 5, 8, 11).unwrap();
    let truth = GroundTruthModel::archetypes(&c, 0.6, 0.5, vec![1.0; 5], 11).unwrap();
    let validation = generate_dataset(&c, &truth, 10_000, 6, 12).unwrap();
    let planted_group = [0.5, 0.2, 0.0, -0.3, -0.4];
    let planted: Vec<f64> =
        c.items().map(|i| planted_group[c.group_of(i).index()] + rng.random_range(-0.05..0.05)).collect();
    let mut scores = Vec::new();
    for ex in validation.examples() {
        let biased: Vec<f64> =
            truth.true_conditional(&ex.seq, &c).iter().zip(&planted).map(|(p, b)| p.ln() + b).collect();
        let z = log_sum_exp(&biased);
        scores.extend(biased.iter().map(|x| x - z));
    }
    let targets = validation.examples().iter().map(|ex| ex.target.index()).collect();
    let cal =
        calibrate_scores(&ScoreTable { n_items: 50, scores, targets }, &SolverOptions::default()).unwrap();
    let (w, _) = group_weights(&validation, &c, WeightsMode::ValidationFrequency).unwrap();
    let hist = validation.hist_ratio();
    let center = |v: Vec<f64>| -> Vec<f64> {
        let m: f64 = v.iter().zip(hist).map(|(a, b)| a * b).sum();
        v.into_iter().map(|x| x - m).collect()
    };
    let est = center(aggregate_group(&item_bias(&cal.q), &w, &c).unwrap());
    let want = center(aggregate_group(&planted, &w, &c).unwrap());
    let recovery = est.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    (
        grid_gap <= 2e-3 && recovery <= 0.05 && secs < 120.0,
        format!("3-item solver vs grid max gap {grid_gap:.1e}; 50-item centered group bias error {recovery:.3}; {secs:.1}s"),
    )
}

// 7 -------------------------------------------------------------------------

fn ufo_bin(workdir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ufo"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env("RUST_LOG", "warn")
        .output()
        .expect("ufo binary runs")
}

fn read_json(path: PathBuf) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path().join("work");
    for stage in ["gen-data", "sft", "estimate-bias", "ufo"] {
        let out = ufo_bin(&work, &["--threads", "1", stage]);
        if out.status.code() != Some(0) {
            return (
                false,
                format!(
                    "{stage} exited with {:?}: {}",
                    out.status.code(),
                    String::from_utf8_lossy(&out.stderr)
                ),
            );
        }
    }
    let cov = read_json(work.join("bias_report.json"))["cov"].as_f64().unwrap();
    let report = read_json(work.join("ufo_report.json"));
    let snap = |s: &serde_json::Value| {
        (s["fairness"]["mgu"].as_f64().unwrap(), s["accuracy"]["hr"].as_f64().unwrap())
    };
    let mut curve = vec![snap(&report["baseline"])];
    curve.extend(report["records"].as_array().unwrap().iter().map(|r| snap(&r["snapshot"])));
    let mgu: Vec<f64> = curve.iter().map(|c| c.0).collect();
    let (hr0, hr_t) = (curve[0].1, curve.last().unwrap().1);
    let monotone = mgu[..4].windows(2).all(|w| w[1] <= w[0]);
    let secs = start.elapsed().as_secs_f64();
    let pass = cov > 0.0
        && mgu.len() == 5
        && *mgu.last().unwrap() <= 0.6 * mgu[0]
        && hr_t >= 0.95 * hr0
        && monotone
        && secs < 600.0;
    let fmt: Vec<String> = mgu.iter().map(|m| format!("{m:.4}")).collect();
    (
        pass,
        format!(
            "cov {cov:.4}; MGU@1 [{}] (final/start {:.2}); HR@5 {hr0:.4} -> {hr_t:.4}; {secs:.1}s single-threaded",
            fmt.join(", "),
            mgu.last().unwrap() / mgu[0]
        ),
    )
}

// 8 -------------------------------------------------------------------------

fn criterion_8() -> Verdict {
    let seed = 0;
    let c = Catalog::generate(50, 5, 8, seed).unwrap();
    // every archetype spreads evenly over the groups: the fair conditional is
    // state-independent and therefore realizable by the item biases
    let truth = GroundTruthModel::archetypes(&c, 0.2, 1.0, vec![1.0; 5], seed).unwrap();
    let all = generate_dataset(&c, &truth, 8000, 10, seed).unwrap();
    let [train, _, test] = all.split([0.8, 0.1, 0.1], seed, &c).unwrap();
    let fair = train.target_frequencies(50);
    let held_out: Vec<&Example> = test.examples().iter().take(500).collect();
    let tv = |p: &PolicyParams| -> f64 {
        let total: f64 = held_out
            .iter()
            .map(|e| {
                let lp = p.evaluate_seq(&c, &e.seq).unwrap().log_marginals(&c);
                0.5 * lp.iter().zip(&fair).map(|(l, f)| (l.exp() - f).abs()).sum::<f64>()
            })
            .sum();
        total / held_out.len() as f64
    };
    let pre = init_pretrained(&c, &PretrainSpec { group_bias: vec![0.0; 5], item_noise_sigma: 0.05, seed })
        .unwrap();
    let tc = TrainConfig {
        learning_rate: 0.01,
        epochs: 1,
        batch_size: 32,
        lambda1: 1.0,
        lambda2: 0.0,
        seed,
        ..Default::default()
    };
    let sft = train_sft(&pre, &c, &train, &tc).unwrap().params;
    let eval =
        HeldOut { catalog: &c, data: &test, hist_ratio: test.hist_ratio(), fairness_k: 1, accuracy_k: 5 };

    let mut runs = Vec::new();
    for alpha in [0.4, 0.0] {
        let config =
            UfoConfig { alpha, learning_rate: 0.5, batch_size: Some(64), seed, ..Default::default() };
        let mut tvs = vec![tv(&sft)];
        let out = run_ufo(&sft, &train, &c, &config, &eval, |_, p| {
            tvs.push(tv(p));
            Ok(())
        })
        .unwrap();
        runs.push((tvs, out.records.last().unwrap().snapshot.accuracy.hr));
    }
    let decreasing = |v: &[f64]| v[..4].windows(2).all(|w| w[1] < w[0]);
    let pass = decreasing(&runs[0].0) && decreasing(&runs[1].0) && runs[0].1 >= runs[1].1;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    (
        pass,
        format!(
            "TV alpha=0.4 [{}], alpha=0 [{}]; HR@5 alpha=0.4 {:.4} vs alpha=0 {:.4}",
            fmt(&runs[0].0),
            fmt(&runs[1].0),
            runs[0].1,
            runs[1].1
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-15
}

fn criterion_9() -> Verdict {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_owned());
        }
    };
    let c = Catalog::from_assignment(vec![GroupId(0), GroupId(0), GroupId(1), GroupId(1)], 2, 2, 0).unwrap();
    let one_hot = group_proportions(&[vec![ItemId(0), ItemId(1)], vec![ItemId(1), ItemId(0)]], &c).unwrap();
    check(one_hot == [1.0, 0.0], "one-hot proportions");
    check(
        group_proportions(&[vec![ItemId(0)], vec![ItemId(2)]], &c).unwrap() == [0.5, 0.5],
        "two-list proportions",
    );

    let same = fairness_from_proportions(vec![0.4, 0.6], vec![0.4, 0.6], 1).unwrap();
    check(same.mgu == 0.0 && same.dgu == 0.0 && same.epsilon_star == 0.0, "perfect fairness");
    let r = fairness_from_proportions(vec![0.3, 0.7], vec![0.5, 0.5], 1).unwrap();
    check(close(r.gu[0], -0.2) && close(r.gu[1], 0.2), "gu");
    check(close(r.mgu, 0.2) && close(r.dgu, 0.4) && close(r.epsilon_star, 0.8), "mgu / dgu / epsilon");
    let swapped = fairness_from_proportions(vec![0.7, 0.3], vec![0.5, 0.5], 1).unwrap();
    check(
        swapped.gu == [r.gu[1], r.gu[0]]
            && swapped.mgu == r.mgu
            && swapped.dgu == r.dgu
            && swapped.epsilon_star == r.epsilon_star,
        "label permutation",
    );

    let targets = vec![ItemId(3), ItemId(1)];
    let first =
        accuracy_from_lists(&[vec![ItemId(3), ItemId(0)], vec![ItemId(1), ItemId(2)]], &targets, 2).unwrap();
    check(first.hr == 1.0 && first.ndcg == 1.0, "target first");
    let lists = vec![
        vec![ItemId(0), ItemId(3), ItemId(1), ItemId(2), ItemId(4)],
        vec![ItemId(0), ItemId(1), ItemId(2), ItemId(3), ItemId(4)],
    ];
    let second = accuracy_from_lists(&lists, &targets, 5).unwrap();
    check(second.hr == 1.0 && close(second.ndcg, 1.0 / 3f64.log2()), "target at rank 2");
    let never = accuracy_from_lists(&[vec![ItemId(0)], vec![ItemId(0)]], &targets, 1).unwrap();
    check(never.hr == 0.0 && never.ndcg == 0.0, "target never recommended");

    let down = format_improvement(relative_improvement(0.0596, 0.0628).unwrap());
    let up = format_improvement(relative_improvement(0.0329, 0.0316).unwrap());
    let flat = format_improvement(relative_improvement(0.07, 0.07).unwrap());
    check(down == "-5.1%" && up == "+4.1%" && flat == "0.0%", "relative improvement");
    let pass = failures.is_empty();
    let detail = if pass {
        format!("hand examples reproduced; (0.0596, 0.0628) -> {down}, (0.0329, 0.0316) -> {up}")
    } else {
        format!("failed: {}", failures.join(", "))
    };
    (pass, detail)
}

// 10 ------------------------------------------------------------------------

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_owned(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn criterion_10() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.toml");
    fs::write(&config, "[world]\nn_sequences = 4000\ncalib_sequences = 2000\n\n[ufo]\niterations = 2\n")
        .unwrap();
    let cfg = config.to_str().unwrap();
    let run = |name: &str, threads: &str| -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        let work = tmp.path().join(name);
        let ck = |n: &str| work.join("checkpoints").join(n).to_string_lossy().into_owned();
        let report = |l: &str| work.join("eval").join(l).join("k1.json").to_string_lossy().into_owned();
        let commands: Vec<Vec<String>> = vec![
            vec!["gen-data".into()],
            vec!["sft".into()],
            vec!["estimate-bias".into()],
            vec!["ufo".into()],
            vec!["eval".into(), "--checkpoint".into(), ck("ufo-final.json"), "--label".into(), "ufo".into()],
            vec!["eval".into(), "--checkpoint".into(), ck("sft.json"), "--label".into(), "sft".into()],
            vec!["compare".into(), report("ufo"), report("sft")],
        ];
        for cmd in commands {
            let mut args = vec!["--config", cfg, "--threads", threads];
            args.extend(cmd.iter().map(String::as_str));
            let out = ufo_bin(&work, &args);
            if out.status.code() != Some(0) {
                return Err(format!("{} exited with {:?}", cmd[0], out.status.code()));
            }
        }
        Ok(tree(&work))
    };
    let (a, b, c) = match (run("a", "1"), run("b", "1"), run("c", "4")) {
        (Ok(a), Ok(b), Ok(c)) => (a, b, c),
        (a, b, c) => {
            let err = [a.err(), b.err(), c.err()].into_iter().flatten().next().unwrap();
            return (false, err);
        }
    };
    let rerun_diff: Vec<_> =
        a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.display().to_string()).collect();
    let thread_diff: Vec<_> =
        a.iter().filter(|(k, v)| c.get(*k) != Some(v)).map(|(k, _)| k.display().to_string()).collect();
    let pass = rerun_diff.is_empty() && thread_diff.is_empty() && a.len() == c.len();
    let detail = if pass {
        format!("all 7 commands; {} artifacts byte-identical across reruns and --threads 1 / 4", a.len())
    } else {
        format!("differs on rerun: {rerun_diff:?}; differs across threads: {thread_diff:?}")
    };
    (pass, detail)
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", criterion_1),
        ("KL decomposition residual", criterion_2),
        ("mixture endpoints", criterion_3),
        ("exposure law", criterion_4),
        ("small-bias linkage", criterion_5),
        ("calibration recovery", criterion_6),
        ("end-to-end UFO", criterion_7),
        ("convergence to the fair conditional", criterion_8),
        ("metrics exactness", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = Vec::new();
    for (n, (name, f)) in criteria.iter().enumerate() {
        let (pass, detail) = f();
        println!("criterion {:>2} {:<36} {}  {detail}", n + 1, name, if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(n + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
