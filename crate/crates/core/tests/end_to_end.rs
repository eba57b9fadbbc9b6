mod common;

use typebandit::bandit::PolicyState;
use typebandit::kernel::Tape;
use typebandit::model::{Model, PassOptions, PassRngs, Prepared};
use typebandit::{train, TrainConfig, Variant};

use common::toy_dataset;

fn small_config() -> TrainConfig {
    TrainConfig { hidden_dim: 8, max_epochs: 12, patience: 100, pretrain_epochs: 5, ..TrainConfig::default() }
}

#[test]
fn whole_model_gradients_match_finite_differences() {
    let ds = toy_dataset(10, 3);
    assert_eq!(ds.graph.num_nodes(), 30);
    let config = small_config();
    let data = Prepared::new(&ds, &config).unwrap();
    let model = Model::init(&ds, &config, 11);
    let mut policy = PolicyState::new(3, config.p_min, config.base_budget, config.scheduled_rounds()).unwrap();
    policy.update(&[0.5, 0.3, 0.2]).unwrap();
    let report = model.gradient_check(&data, &config, &policy, 1, 1e-5, 1e-4).unwrap();
    for g in &report.groups {
        assert!(g.passed, "{}: relative error {:.3e}", g.name, g.max_rel_error);
    }
    assert_eq!(report.groups.len(), model.store.len());
}

#[test]
fn sampling_context_off_equals_zero_budgets() {
    let ds = toy_dataset(20, 1);
    let full = small_config();
    let off = Variant::WoSamplingContext.apply(&full);
    let data = Prepared::new(&ds, &full).unwrap();
    let model = Model::init(&ds, &full, 5);
    let policy = PolicyState::new(3, full.p_min, full.base_budget, full.scheduled_rounds()).unwrap();
    let zeros = [0usize; 3];

    let run = |config: &TrainConfig, budgets: Option<&[usize]>| {
        let mut tape = Tape::new();
        let mut rngs = PassRngs::train(full.seed, 3);
        let pass = model
            .forward(&mut tape, &data, config, &policy, PassOptions { train: true, with_loss: true, budgets }, &mut rngs)
            .unwrap();
        let hidden: Vec<_> = pass.hidden.iter().map(|&h| tape.value(h).clone()).collect();
        (tape.value(pass.logits).clone(), hidden, tape.value(pass.total_loss.unwrap()).item())
    };
    let (la, ha, ta) = run(&full, Some(&zeros));
    let (lb, hb, tb) = run(&off, None);
    assert!(la.bit_eq(&lb));
    assert!(ha.iter().zip(&hb).all(|(a, b)| a.bit_eq(b)));
    assert_eq!(ta.to_bits(), tb.to_bits());

    // With a positive budget the context does change the pass.
    let (lc, _, _) = run(&full, None);
    assert!(!la.bit_eq(&lc));
}

#[test]
fn zero_lambda_matches_completion_off() {
    let ds = toy_dataset(20, 2);
    let base = small_config();
    let zero = train(&ds, &TrainConfig { lambda: 0.0, ..base.clone() }, Variant::Full).unwrap();
    let off = train(&ds, &TrainConfig { completion: false, ..base.clone() }, Variant::Full).unwrap();
    let named = train(&ds, &base, Variant::WoCompletion).unwrap();
    for other in [&off, &named] {
        assert_eq!(zero.model.store, other.model.store);
        assert_eq!(zero.record.final_weights, other.record.final_weights);
        assert_eq!(zero.record.test_macro_f1, other.record.test_macro_f1);
        assert_eq!(zero.record.epochs.len(), other.record.epochs.len());
        for (a, b) in zero.record.epochs.iter().zip(&other.record.epochs) {
            assert_eq!((a.prediction_loss, a.total_loss, a.val_macro_f1), (b.prediction_loss, b.total_loss, b.val_macro_f1));
        }
    }
}

#[test]
fn reruns_are_identical() {
    let ds = toy_dataset(20, 4);
    let config = TrainConfig { deterministic: true, seed: 7, ..small_config() };
    let a = train(&ds, &config, Variant::Full).unwrap().record;
    let b = train(&ds, &config, Variant::Full).unwrap().record;
    assert!(a.timing.is_none());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = train(&ds, &TrainConfig { seed: 8, ..config }, Variant::Full).unwrap().record;
    assert_ne!(a.final_weights, c.final_weights);
}

#[test]
fn policy_updates_follow_the_schedule() {
    let ds = toy_dataset(20, 5);
    let one = train(&ds, &TrainConfig { max_epochs: 1, ..small_config() }, Variant::Full).unwrap().record;
    assert_eq!(one.policy_updates, 0);
    assert_eq!(one.final_weights, vec![1.0 / 3.0; 3]);
    let twelve = train(&ds, &small_config(), Variant::Full).unwrap().record;
    assert_eq!(twelve.epochs.len(), 12);
    assert_eq!(twelve.policy_updates, 12 / 5);
    assert!((twelve.final_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let stopped = train(&ds, &TrainConfig { patience: 2, max_epochs: 40, ..small_config() }, Variant::Full)
        .unwrap()
        .record;
    assert_eq!(stopped.policy_updates, stopped.epochs.len() / 5);
    assert!(stopped.best_epoch >= 1 && stopped.best_epoch <= stopped.epochs.len());
}

#[test]
fn every_variant_trains() {
    let ds = toy_dataset(20, 6);
    let config = TrainConfig { max_epochs: 3, ..small_config() };
    for v in Variant::ALL {
        let r = train(&ds, &config, v).unwrap().record;
        assert_eq!(r.variant, v);
        assert!(r.epochs.iter().all(|e| e.total_loss.is_finite()), "{v}");
        assert_eq!(r.pretrain_losses.is_empty(), matches!(v, Variant::WoPretrain | Variant::TopologyOnly | Variant::BackboneOnly), "{v}");
    }
}

#[test]
fn pretraining_reduces_its_loss() {
    let ds = toy_dataset(40, 8);
    let config = TrainConfig { max_epochs: 1, pretrain_epochs: 50, ..small_config() };
    let r = train(&ds, &config, Variant::Full).unwrap().record;
    assert_eq!(r.pretrain_losses.len(), 50);
    assert!(r.pretrain_losses[49] < r.pretrain_losses[0]);
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut ds = toy_dataset(20, 9);
    let config = small_config();
    assert!(train(&ds, &TrainConfig { p_min: 0.5, ..config.clone() }, Variant::Full).is_err());
    ds.splits.val.push(ds.splits.train[0]);
    assert!(train(&ds, &config, Variant::Full).is_err());
}
