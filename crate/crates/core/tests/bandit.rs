use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use typebandit::bandit::{
    allocate_budget, argmax, normalize_rewards, policy_distribution, reward_proxy, sample_representatives,
    step_size, update_weights, PolicyState, WithinType,
};
use typebandit::kernel::Tensor;

// Frozen from a 40-digit mpmath evaluation of the closed forms.
const ETA_DEFAULT: f64 = 0.006_450_379_267_008_249;
const POST_UPDATE_P: [f64; 3] = [0.333_584_240_704_389_7, 0.333_283_093_608_786_4, 0.333_132_665_686_823_9];

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn default_step_size() {
    assert!((step_size(0.1, 20, 3, 60).unwrap() - ETA_DEFAULT).abs() < 1e-15);
    assert!(step_size(0.1, 1, 3, 60).is_err());
}

#[test]
fn distribution_examples() {
    assert!(close(&policy_distribution(&[1.0, 1.0, 1.0], 0.1).unwrap(), &[1.0 / 3.0; 3], 1e-12));
    assert!(close(&policy_distribution(&[2.0, 1.0, 1.0], 0.1).unwrap(), &[0.45, 0.275, 0.275], 1e-12));
    assert!(close(&policy_distribution(&[3.0, 1.0], 0.0).unwrap(), &[0.75, 0.25], 1e-15));
    assert!(policy_distribution(&[1.0, 1.0, 1.0], 1.0 / 3.0).is_err());
    assert!(policy_distribution(&[1.0, 0.0], 0.1).is_err());
}

#[test]
fn one_update_from_uniform() {
    let w = vec![1.0; 3];
    let p = policy_distribution(&w, 0.1).unwrap();
    let w2 = update_weights(&w, &[0.5, 0.3, 0.2], &p, ETA_DEFAULT).unwrap();
    let p2 = policy_distribution(&w2, 0.1).unwrap();
    assert!(close(&p2, &POST_UPDATE_P, 1e-9), "{p2:?}");
    assert_eq!(argmax(&p2), 0);
    assert!((w2.iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

#[test]
fn uniform_update_is_a_fixed_point() {
    let w = vec![1.0 / 3.0; 3];
    let p = policy_distribution(&w, 0.1).unwrap();
    let w2 = update_weights(&w, &[0.25; 3], &p, 0.3).unwrap();
    assert!(close(&policy_distribution(&w2, 0.1).unwrap(), &p, 1e-15));
    assert!(update_weights(&w, &[0.1; 3], &[0.5, 0.5, 0.0], 0.1).is_err());
}

#[test]
fn budget_examples() {
    assert_eq!(allocate_budget(&[0.5, 0.3, 0.2], 20, &[100, 100, 100]), vec![30, 18, 12]);
    assert_eq!(allocate_budget(&[0.5, 0.3, 0.2], 20, &[100, 100, 10]), vec![30, 18, 10]);
    assert_eq!(allocate_budget(&[0.99, 0.01, 0.0], 10, &[100, 100, 100]), vec![30, 0, 0]);
    // Half rounds away from zero.
    assert_eq!(allocate_budget(&[0.25, 0.75], 1, &[5, 5]), vec![1, 2]);
}

#[test]
fn reward_examples() {
    let zero = Tensor::zeros(3, 2);
    assert_eq!(reward_proxy(&[&zero, &zero]), vec![0.0, 0.0]);
    let r = normalize_rewards(&[2.0, 3.0, 5.0]);
    assert!(close(&r, &[0.2, 0.3, 0.5], 1e-8));
    let empty = Tensor::zeros(0, 2);
    let one = Tensor::full(2, 2, 1.0);
    assert_eq!(reward_proxy(&[&empty, &one])[0], 0.0);
}

#[test]
fn dominant_norm_wins_single_draw() {
    let mut norms = vec![1.0; 20];
    norms[7] = 1e6;
    let mut hits = 0;
    for seed in 0..10_000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if sample_representatives(&norms, 1, WithinType::Norm, &mut rng).unwrap() == vec![7] {
            hits += 1;
        }
    }
    assert!(hits >= 9_990, "{hits}");
}

#[test]
fn sampling_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let norms = [0.5, 0.0, 2.0, 1.0];
    for mode in [WithinType::Norm, WithinType::Uniform] {
        assert_eq!(sample_representatives(&norms, 4, mode, &mut rng).unwrap(), vec![0, 1, 2, 3]);
        assert!(sample_representatives(&norms, 0, mode, &mut rng).unwrap().is_empty());
        assert!(sample_representatives(&norms, 5, mode, &mut rng).is_err());
    }
    // The zero-norm node is taken only after every positive-norm node.
    assert_eq!(sample_representatives(&norms, 3, WithinType::Norm, &mut rng).unwrap(), vec![0, 2, 3]);
    let zeros = [0.0; 6];
    assert_eq!(sample_representatives(&zeros, 2, WithinType::Norm, &mut rng).unwrap().len(), 2);
}

fn weights(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3f64..10.0, k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn distribution_is_floored((w, frac) in (2usize..6).prop_flat_map(|k| (weights(k), 0.0f64..0.999))) {
        let k = w.len();
        let p_min = frac / k as f64;
        let p = policy_distribution(&w, p_min).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= p_min - 1e-15));
    }

    #[test]
    fn permuting_arms_permutes_outputs(
        (w, r, rot) in (2usize..6).prop_flat_map(|k| (weights(k), prop::collection::vec(0.0f64..1.0, k), 0..k))
    ) {
        let k = w.len();
        let perm = |v: &[f64]| -> Vec<f64> { (0..k).map(|i| v[(i + rot) % k]).collect() };
        let p = policy_distribution(&w, 0.05).unwrap();
        let pp = policy_distribution(&perm(&w), 0.05).unwrap();
        prop_assert!(close(&pp, &perm(&p), 1e-14));
        let u = update_weights(&w, &r, &p, 0.05).unwrap();
        let up = update_weights(&perm(&w), &perm(&r), &pp, 0.05).unwrap();
        prop_assert!(close(&up, &perm(&u), 1e-14));
    }

    #[test]
    fn distribution_preserves_weight_order((w, i, j) in (2usize..6).prop_flat_map(|k| (weights(k), 0..k, 0..k))) {
        let p = policy_distribution(&w, 0.1 / w.len() as f64).unwrap();
        if w[i] > w[j] {
            prop_assert!(p[i] > p[j]);
        }
    }

    #[test]
    fn higher_reward_gains_share(
        (r, i, j, eta) in (2usize..6).prop_flat_map(|k| (prop::collection::vec(0.0f64..1.0, k), 0..k, 0..k, 1e-3f64..1.0))
    ) {
        // From uniform weights the update ranks arms exactly by reward.
        let k = r.len();
        let w = vec![1.0 / k as f64; k];
        let p = policy_distribution(&w, 0.1 / k as f64).unwrap();
        let w2 = update_weights(&w, &r, &p, eta).unwrap();
        prop_assert!((w2.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        if r[i] > r[j] {
            prop_assert!(w2[i] >= w2[j]);
        }
        // A reward shift common to every arm cancels on renormalization.
        let shifted: Vec<f64> = r.iter().map(|x| x + 0.7).collect();
        prop_assert!(close(&update_weights(&w, &shifted, &p, eta).unwrap(), &w2, 1e-12));
    }

    #[test]
    fn budgets_are_clipped(
        (p, sizes, n) in (2usize..6).prop_flat_map(|k| (weights(k), prop::collection::vec(0usize..50, k), 0usize..40))
    ) {
        let probs = policy_distribution(&p, 0.0).unwrap();
        let b = allocate_budget(&probs, n, &sizes);
        for (t, (&bt, &s)) in b.iter().zip(&sizes).enumerate() {
            prop_assert!(bt <= s);
            let target = (probs.len() * n) as f64 * probs[t];
            prop_assert!(bt == s || (bt as f64 - target).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn samples_are_distinct_and_seeded(
        (norms, frac, seed) in (prop::collection::vec(0.0f64..5.0, 1..40), 0.0f64..=1.0, any::<u64>())
    ) {
        let budget = (frac * norms.len() as f64) as usize;
        for mode in [WithinType::Norm, WithinType::Uniform] {
            let a = sample_representatives(&norms, budget, mode, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = sample_representatives(&norms, budget, mode, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), budget);
            prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(a.last().is_none_or(|&i| i < norms.len()));
        }
    }

    #[test]
    fn rewards_are_scale_invariant(
        (rows, c) in (prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 6), 0.01f64..100.0)
    ) {
        let a = Tensor::from_rows(&rows[..3]).unwrap();
        let b = Tensor::from_rows(&rows[3..]).unwrap();
        let r = reward_proxy(&[&a, &b]);
        let rs = reward_proxy(&[&a.scale(c), &b.scale(c)]);
        let total: f64 = typebandit::bandit::raw_rewards(&[&a, &b]).iter().sum();
        prop_assume!(total > 1e-3);
        prop_assert!(close(&r, &rs, 1e-6));
    }
}

#[test]
fn policy_state_tracks_updates() {
    let mut s = PolicyState::new(3, 0.1, 20, 60).unwrap();
    assert!((s.eta - ETA_DEFAULT).abs() < 1e-15);
    s.update(&[0.5, 0.3, 0.2]).unwrap();
    assert_eq!(s.updates, 1);
    assert!(close(&s.probs, &POST_UPDATE_P, 1e-9));
    assert!(close(&s.scaling(), &POST_UPDATE_P.map(|p| p + 0.5), 1e-9));
}
