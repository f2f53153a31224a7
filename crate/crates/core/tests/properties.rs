use proptest::prelude::*;
use rand_distr::{Distribution, Normal};
use ufo_core::bias::{decompose, expected_rec_ratio, intensity_ratio};
use ufo_core::metrics::{fairness_from_proportions, relative_improvement};
use ufo_core::mixture::{kl_log, MixtureReference};
use ufo_core::policy::top_k_by_score;
use ufo_core::rng::substream;
use ufo_core::selfplay::sample_size;
use ufo_core::{Catalog, InteractionSequence, ItemId, PolicyParams};

fn params(c: &Catalog, seed: u64, scale: f64) -> PolicyParams {
    let mut rng = substream(seed, "prop");
    let n = Normal::new(0.0, scale).unwrap();
    let mut p = PolicyParams::zeros(c);
    p.values_mut().iter_mut().for_each(|v| *v = n.sample(&mut rng));
    p
}

fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, len).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn sequence() -> impl Strategy<Value = InteractionSequence> {
    prop::collection::vec(0u32..20, 1..8)
        .prop_map(|v| InteractionSequence::new(v.into_iter().map(ItemId).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixture_is_normalized(seed in 0u64..1000, alpha in 0.0f64..=1.0, s in sequence()) {
        let c = Catalog::generate(20, 4, 5, seed).unwrap();
        let r = MixtureReference::new(params(&c, seed, 2.0), params(&c, seed + 1, 2.0), alpha).unwrap();
        let total: f64 = r.evaluate_seq(&c, &s).unwrap().log_probs.iter().map(|x| x.exp()).sum();
        prop_assert!((total - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn anchor_divergence_shrinks_with_alpha(seed in 0u64..1000, s in sequence()) {
        let c = Catalog::generate(20, 4, 5, seed).unwrap();
        let (cur, anc) = (params(&c, seed, 1.0), params(&c, seed + 7, 1.0));
        let anchor = anc.evaluate_seq(&c, &s).unwrap().log_marginals(&c);
        let kls: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&a| {
                let r = MixtureReference::new(cur.clone(), anc.clone(), a).unwrap();
                kl_log(&anchor, &r.evaluate_seq(&c, &s).unwrap().log_probs)
            })
            .collect();
        for w in kls.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{kls:?}");
        }
    }

    #[test]
    fn exposure_follows_bias_differences(hist in distribution(6), b in prop::collection::vec(-3.0f64..3.0, 6)) {
        let rec = expected_rec_ratio(&hist, &b).unwrap();
        prop_assert!((rec.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let r = intensity_ratio(&rec, &hist).unwrap();
        for a in 0..6 {
            for c in 0..6 {
                prop_assert!((r.log_ratio[a][c] - (b[a] - b[c])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn decomposition_identity(hist in distribution(5), bp in prop::collection::vec(-2.0f64..2.0, 5), d in prop::collection::vec(-2.0f64..2.0, 5)) {
        let out = decompose(&bp, &d, &hist).unwrap();
        let mean = |v: &[f64]| v.iter().zip(&hist).map(|(x, w)| x * w).sum::<f64>();
        prop_assert!(mean(&out.delta_p_centered).abs() <= 1e-9);
        prop_assert!(mean(&out.delta_d_centered).abs() <= 1e-9);
        let total: Vec<f64> = bp.iter().zip(&d).map(|(a, b)| a + b).collect();
        let m = mean(&total);
        let var: f64 = total.iter().zip(&hist).map(|(x, w)| w * (x - m) * (x - m)).sum();
        prop_assert!((out.var_log_r_pred - var).abs() <= 1e-12 * var.max(1.0));
    }

    #[test]
    fn fairness_bounds(gp in distribution(5), gh in distribution(5)) {
        let r = fairness_from_proportions(gp.clone(), gh.clone(), 1).unwrap();
        prop_assert!(r.mgu >= 0.0 && r.mgu <= r.dgu + 1e-15);
        prop_assert!(r.epsilon_star >= 0.0);
        prop_assert!((r.gu.iter().sum::<f64>()).abs() <= 1e-12);
        let same = fairness_from_proportions(gh.clone(), gh, 1).unwrap();
        prop_assert_eq!(same.mgu, 0.0);
    }

    #[test]
    fn top_k_is_sorted_and_distinct(scores in prop::collection::vec(-5.0f64..5.0, 1..40), k in 1usize..40) {
        let k = k.min(scores.len());
        let top = top_k_by_score(&scores, k);
        prop_assert_eq!(top.len(), k);
        for w in top.windows(2) {
            prop_assert!(scores[w[0].index()] >= scores[w[1].index()]);
        }
        let mut seen = top.clone();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), k);
        let worst = scores[top[k - 1].index()];
        prop_assert!(scores.iter().enumerate().all(|(i, &s)| top.contains(&ItemId(i as u32)) || s <= worst));
    }

    #[test]
    fn improvement_sign(c in 0.01f64..10.0, b in 0.01f64..10.0) {
        let r = relative_improvement(c, b).unwrap();
        prop_assert_eq!(r > 0.0, c > b);
        prop_assert!((b * (1.0 + r / 100.0) - c).abs() <= 1e-12 * c.max(1.0));
    }

    #[test]
    fn sample_size_is_a_ceiling(m in 1usize..100_000, f in 0.001f64..=1.0) {
        let n = sample_size(m, f);
        prop_assert!(n >= 1 && n <= m);
        prop_assert!(n as f64 >= f * m as f64 - 1e-6);
        prop_assert!(n == 1 || ((n - 1) as f64) < f * m as f64);
    }
}
