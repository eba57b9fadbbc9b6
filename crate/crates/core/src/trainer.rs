//! The training loop: Stage-1 pretraining, per-epoch optimization, scheduled
//! policy updates, early stopping on validation Macro-F1, and a single test
//! evaluation at the selected checkpoint.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bandit::{self, PolicyState};
use crate::config::{Frontend, TrainConfig, Variant};
use crate::dataset::Dataset;
use crate::kernel::{Tape, Tensor};
use crate::metrics::{self, mean_std};
use crate::model::{Model, PassOptions, PassRngs, Prepared};
use crate::optim::AdamW;
use crate::topo;
use crate::Error;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub prediction_loss: f64,
    /// Zero when completion is disabled.
    pub completion_loss: f64,
    pub total_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub epochs: usize,
    /// Mean wall-clock seconds of forward, backward and optimizer step.
    pub epoch_mean_s: f64,
    pub epoch_std_s: f64,
    pub pretrain_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub variant: Variant,
    pub seed: u64,
    pub config_hash: String,
    pub config: TrainConfig,
    pub type_names: Vec<String>,
    pub pretrain_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub test_macro_f1: f64,
    pub test_micro_f1: f64,
    pub eta: f64,
    pub policy_updates: usize,
    pub final_weights: Vec<f64>,
    pub final_probs: Vec<f64>,
    /// Normalized reward of the last policy update.
    pub final_rewards: Option<Vec<f64>>,
    pub num_params: usize,
    /// Largest tape plus four copies of the parameters (values, gradients,
    /// two moment buffers), in bytes.
    pub peak_memory_bytes: usize,
    /// Wall-clock statistics; absent for deterministic runs.
    pub timing: Option<Timing>,
}

/// A finished run: the record plus wall-clock figures that are kept even
/// when the record omits them.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub timing: Timing,
    pub model: Model,
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Kernel(source) => Error::Diverged { epoch, source },
        other => other,
    }
}

/// Projected features with the warm start on missing types, then anchored
/// propagation: the fixed regression target of Stage 1.
fn stage1_targets(model: &Model, data: &Prepared<'_>, config: &TrainConfig) -> Result<Vec<Tensor>, Error> {
    let plain = TrainConfig { frontend: Frontend::Full, ..config.clone() };
    let policy = PolicyState::new(data.num_types(), plain.p_min, plain.base_budget, plain.scheduled_rounds())?;
    let mut tape = Tape::inference();
    let mut rngs = PassRngs::eval(plain.seed, 0);
    let budgets = vec![0; data.num_types()];
    let pass = model.forward(
        &mut tape,
        data,
        &plain,
        &policy,
        PassOptions { train: false, with_loss: false, budgets: Some(&budgets) },
        &mut rngs,
    )?;
    let initial = Tensor::vstack(&pass.projected.iter().map(|&v| tape.value(v)).collect::<Vec<_>>())?;
    let propagated = data.propagator.states(&initial).pop().expect("at least one state");
    Ok(topo::type_blocks(&data.dataset.graph, &propagated))
}

fn evaluate(
    model: &Model,
    data: &Prepared<'_>,
    config: &TrainConfig,
    policy: &PolicyState,
    epoch: usize,
) -> Result<(Vec<usize>, Vec<Tensor>, usize), Error> {
    let mut tape = Tape::inference();
    let mut rngs = PassRngs::eval(config.seed, epoch);
    let pass = model.forward(&mut tape, data, config, policy, PassOptions::default(), &mut rngs)?;
    let preds = metrics::argmax_rows(tape.value(pass.logits));
    let hidden = pass.hidden.iter().map(|&h| tape.value(h).clone()).collect();
    Ok((preds, hidden, tape.value_bytes()))
}

fn split_scores(preds: &[usize], dataset: &Dataset, nodes: &[usize]) -> Result<(f64, f64), Error> {
    let p: Vec<usize> = nodes.iter().map(|&n| preds[n]).collect();
    Ok(metrics::macro_micro_f1(&p, &dataset.split_labels(nodes), dataset.num_classes)?)
}

/// Trains `variant` of `config` on `dataset` with `config.seed`.
pub fn train(dataset: &Dataset, config: &TrainConfig, variant: Variant) -> Result<RunOutcome, Error> {
    let config = variant.apply(config);
    let k = dataset.graph.num_types();
    config.validate_for_types(k)?;
    let report = dataset.validate();
    if !report.is_clean() {
        return Err(crate::dataset::DatasetError::Invalid(report.violations).into());
    }
    if dataset.splits.val.is_empty() || dataset.splits.test.is_empty() {
        return Err(crate::dataset::DatasetError::Invalid(vec!["validation and test splits must be nonempty".into()]).into());
    }
    let data = Prepared::new(dataset, &config)?;
    let mut model = Model::init(dataset, &config, config.seed);

    let pretrain_start = Instant::now();
    let mut pretrain_losses = Vec::new();
    if config.frontend == Frontend::Full && config.pretrain_method.uses_degree() && config.pretrain_epochs > 0 {
        let targets = stage1_targets(&model, &data, &config)?;
        pretrain_losses = topo::pretrain_stage1(
            &mut model.store,
            &model.topo,
            &data.descriptors,
            &targets,
            config.pretrain_epochs,
            config.learning_rate,
            config.weight_decay,
        )
        .map_err(|e| diverged(0)(e.into()))?;
    }
    let pretrain_s = pretrain_start.elapsed().as_secs_f64();

    let mut policy = PolicyState::new(k, config.p_min, config.base_budget, config.scheduled_rounds())?;
    let mut opt = AdamW::new(&model.store, config.learning_rate, config.weight_decay);
    let param_bytes = model.store.scalar_count() * 8;
    let mut peak_tape = 0usize;

    let mut epochs = Vec::new();
    let mut step_times = Vec::new();
    let mut best: Option<(usize, f64, crate::kernel::ParamStore, PolicyState)> = None;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let mut tape = Tape::new();
        let mut rngs = PassRngs::train(config.seed, epoch);
        let pass = model
            .forward(
                &mut tape,
                &data,
                &config,
                &policy,
                PassOptions { train: true, with_loss: true, budgets: None },
                &mut rngs,
            )
            .map_err(diverged(epoch))?;
        let total = pass.total_loss.expect("losses requested");
        let grads = tape
            .backward(total, &model.store)
            .map_err(|source| Error::Diverged { epoch, source })?;
        opt.step(&mut model.store, &grads);
        step_times.push(start.elapsed().as_secs_f64());
        peak_tape = peak_tape.max(tape.value_bytes());

        let value = |v: Option<crate::kernel::Var>| v.map_or(0.0, |v| tape.value(v).item());
        let prediction_loss = value(pass.prediction_loss);
        let completion_loss = value(pass.completion_loss);
        let total_loss = value(pass.total_loss);
        drop(tape);

        let (preds, hidden, eval_bytes) = evaluate(&model, &data, &config, &policy, epoch).map_err(diverged(epoch))?;
        peak_tape = peak_tape.max(eval_bytes);
        let (val_macro_f1, _) = split_scores(&preds, dataset, &dataset.splits.val)?;
        epochs.push(EpochRecord { epoch, prediction_loss, completion_loss, total_loss, val_macro_f1 });

        if best.as_ref().is_none_or(|b| val_macro_f1 > b.1) {
            best = Some((epoch, val_macro_f1, model.store.clone(), policy.clone()));
        }
        if epoch % config.update_period == 0 {
            let blocks: Vec<&Tensor> = hidden.iter().collect();
            policy.update(&bandit::reward_proxy(&blocks))?;
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if epoch - best_epoch >= config.patience {
            break;
        }
    }

    let (best_epoch, best_val, best_store, best_policy) = best.expect("at least one epoch ran");
    let checkpoint = Model { store: best_store, ..model.clone() };
    let (preds, _, _) = evaluate(&checkpoint, &data, &config, &best_policy, best_epoch)?;
    let (test_macro_f1, test_micro_f1) = split_scores(&preds, dataset, &dataset.splits.test)?;

    let stats = mean_std(&step_times);
    let timing = Timing { epochs: step_times.len(), epoch_mean_s: stats.mean, epoch_std_s: stats.std, pretrain_s };
    let g = &dataset.graph;
    let record = RunRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        variant,
        seed: config.seed,
        config_hash: config.hash(),
        type_names: g.type_ids().map(|t| g.node_type(t).name.clone()).collect(),
        pretrain_losses,
        epochs,
        best_epoch,
        best_val_macro_f1: best_val,
        test_macro_f1,
        test_micro_f1,
        eta: policy.eta,
        policy_updates: policy.updates,
        final_weights: policy.weights.clone(),
        final_probs: policy.probs.clone(),
        final_rewards: policy.last_reward.clone(),
        num_params: model.store.scalar_count(),
        peak_memory_bytes: peak_tape + 4 * param_bytes,
        timing: if config.deterministic { None } else { Some(timing.clone()) },
        config,
    };
    Ok(RunOutcome { record, timing, model: checkpoint })
}
