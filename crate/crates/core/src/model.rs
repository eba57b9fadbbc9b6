//! The full model: parameters of every stage and the forward pass that wires
//! front end, bandit context, backbone, heads and losses onto one tape.

use std::rc::Rc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{self, BackboneParams};
use crate::bandit::{self, ContextParams, PolicyState};
use crate::config::{Frontend, TrainConfig};
use crate::dataset::Dataset;
use crate::fusion::{self, FusionParams};
use crate::graph::TypeId;
use crate::kernel::{finite_difference_check, FdReport, ParamStore, Tape, Tensor, Var};
use crate::topo::{self, Propagator, TopoParams};
use crate::Error;

/// Independent random streams, so that e.g. drawing a completion mask never
/// shifts the dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Dropout = 2,
    Sampling = 3,
    Mask = 4,
    EvalSampling = 5,
}

/// The generator for one purpose at one epoch of one seed.
pub fn stream(seed: u64, purpose: Stream, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) | epoch as u64);
    rng
}

/// Random streams consumed by one forward pass.
#[derive(Debug, Clone)]
pub struct PassRngs {
    pub dropout: ChaCha8Rng,
    pub sampling: ChaCha8Rng,
    pub mask: ChaCha8Rng,
}

impl PassRngs {
    pub fn train(seed: u64, epoch: usize) -> Self {
        Self {
            dropout: stream(seed, Stream::Dropout, epoch),
            sampling: stream(seed, Stream::Sampling, epoch),
            mask: stream(seed, Stream::Mask, epoch),
        }
    }

    /// Eval passes use no dropout; only context sampling draws randomness.
    pub fn eval(seed: u64, epoch: usize) -> Self {
        Self {
            dropout: stream(seed, Stream::Dropout, epoch),
            sampling: stream(seed, Stream::EvalSampling, epoch),
            mask: stream(seed, Stream::Mask, epoch),
        }
    }
}

/// Dataset-derived constants shared by every pass.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub dataset: &'a Dataset,
    /// Standardized log-degree descriptors, one block per type.
    pub descriptors: Vec<Tensor>,
    pub propagator: Propagator,
    pub sizes: Vec<usize>,
    pub attributed: Vec<TypeId>,
    pub train_nodes: Rc<[usize]>,
    pub train_labels: Rc<[usize]>,
}

impl<'a> Prepared<'a> {
    pub fn new(dataset: &'a Dataset, config: &TrainConfig) -> Result<Self, Error> {
        let g = &dataset.graph;
        if dataset.splits.train.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let descriptors = topo::type_blocks(g, &topo::degree_descriptors(g));
        Ok(Self {
            dataset,
            descriptors,
            propagator: Propagator::for_attributed_types(g, config.propagation_hops)?,
            sizes: g.type_ids().map(|t| g.type_count(t)).collect(),
            attributed: dataset.attributed_types().collect(),
            train_nodes: dataset.splits.train.clone().into(),
            train_labels: dataset.split_labels(&dataset.splits.train).into(),
        })
    }

    pub fn num_types(&self) -> usize {
        self.sizes.len()
    }
}

/// What a pass should do beyond computing embeddings and logits.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassOptions<'b> {
    /// Dropout active.
    pub train: bool,
    /// Build the prediction and completion losses.
    pub with_loss: bool,
    /// Replaces the policy's budget allocation.
    pub budgets: Option<&'b [usize]>,
}

/// Handles into the tape for one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Projected features (warm start on missing types); empty for the
    /// topology-only front end.
    pub projected: Vec<Var>,
    /// Gated initial representations `h^(0)` before context fusion.
    pub initial: Vec<Var>,
    /// Backbone inputs `z^(0)`.
    pub inputs: Vec<Var>,
    /// Final-layer embeddings `h^(L)`.
    pub hidden: Vec<Var>,
    pub logits: Var,
    pub budgets: Vec<usize>,
    pub samples: Vec<Vec<usize>>,
    pub prediction_loss: Option<Var>,
    pub completion_loss: Option<Var>,
    pub total_loss: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub store: ParamStore,
    pub topo: TopoParams,
    pub fusion: FusionParams,
    pub context: ContextParams,
    pub backbone: BackboneParams,
}

impl Model {
    /// Parameters are created in one fixed order for every variant, so runs
    /// sharing a seed share their initialization.
    pub fn init(dataset: &Dataset, config: &TrainConfig, seed: u64) -> Self {
        let g = &dataset.graph;
        let d = config.hidden_dim;
        let mut rng = stream(seed, Stream::Init, 0);
        let mut store = ParamStore::new();
        let topo = TopoParams::init(&mut store, g, d, config.rho, config.propagation_hops, &mut rng);
        let dims: Vec<Option<usize>> = g.type_ids().map(|t| dataset.feature_dim(t)).collect();
        let fusion = FusionParams::init(&mut store, g, &dims, d, &mut rng);
        let context = ContextParams::init(&mut store, g, d, &mut rng);
        let backbone = BackboneParams::init(&mut store, g, d, config.num_layers, dataset.num_classes, &mut rng);
        Self { store, topo, fusion, context, backbone }
    }

    /// Projected features for attributed types and the pooled warm start for
    /// the rest.
    fn project(&self, tape: &mut Tape, data: &Prepared<'_>) -> Result<Vec<Var>, Error> {
        let mut blocks: Vec<Option<Var>> = vec![None; data.num_types()];
        for &t in &data.attributed {
            let x = data.dataset.features[t.0].as_ref().expect("attributed types carry features");
            let x = tape.constant(x.clone());
            blocks[t.0] = Some(fusion::project_features(tape, &self.store, &self.fusion, t, x)?);
        }
        let observed: Vec<Var> = blocks.iter().flatten().copied().collect();
        let mean = fusion::warm_start(tape, &observed)?;
        let mut out = Vec::with_capacity(blocks.len());
        for (t, b) in blocks.into_iter().enumerate() {
            out.push(match b {
                Some(v) => v,
                None => fusion::broadcast_row(tape, mean, data.sizes[t])?,
            });
        }
        Ok(out)
    }

    fn degree_priors(&self, tape: &mut Tape, data: &Prepared<'_>) -> Result<Vec<Var>, Error> {
        let mut out = Vec::with_capacity(data.num_types());
        for (t, s) in data.descriptors.iter().enumerate() {
            let s = tape.constant(s.clone());
            out.push(topo::degree_embed(tape, &self.store, &self.topo, TypeId(t), s)?);
        }
        Ok(out)
    }

    fn propagated_priors(&self, tape: &mut Tape, data: &Prepared<'_>, projected: &[Var]) -> Result<Vec<Var>, Error> {
        let initial = tape.concat_rows(projected)?;
        let state = data.propagator.propagate(tape, initial)?;
        let mut out = Vec::with_capacity(projected.len());
        let mut start = 0;
        for &n in &data.sizes {
            out.push(tape.slice_rows(state, start, n)?);
            start += n;
        }
        Ok(out)
    }

    /// Topology prior `t` per type under `method`.
    fn priors(
        &self,
        tape: &mut Tape,
        data: &Prepared<'_>,
        config: &TrainConfig,
        projected: &[Var],
    ) -> Result<Vec<Var>, Error> {
        let method = config.pretrain_method;
        let deg = if method.uses_degree() { Some(self.degree_priors(tape, data)?) } else { None };
        let prop = if method.uses_propagation() {
            Some(self.propagated_priors(tape, data, projected)?)
        } else {
            None
        };
        Ok(match (deg, prop) {
            (Some(d), Some(p)) => {
                let mut out = Vec::with_capacity(d.len());
                for (t, (a, b)) in d.into_iter().zip(p).enumerate() {
                    out.push(topo::hybrid_mix(tape, a, b, self.topo.rho[t])?);
                }
                out
            }
            (Some(d), None) => d,
            (None, Some(p)) => p,
            (None, None) => data
                .sizes
                .iter()
                .map(|&n| tape.constant(Tensor::zeros(n, config.hidden_dim)))
                .collect(),
        })
    }

    /// Everything up to the backbone input `h^(0)`, plus the projected
    /// features used as completion targets.
    fn front_end(
        &self,
        tape: &mut Tape,
        data: &Prepared<'_>,
        config: &TrainConfig,
    ) -> Result<(Vec<Var>, Vec<Var>), Error> {
        match config.frontend {
            Frontend::Full => {
                let projected = self.project(tape, data)?;
                let priors = self.priors(tape, data, config, &projected)?;
                let mut initial = Vec::with_capacity(projected.len());
                for (t, (&x, &p)) in projected.iter().zip(&priors).enumerate() {
                    initial.push(fusion::gated_fuse(tape, &self.store, &self.fusion, TypeId(t), x, p)?);
                }
                Ok((projected, initial))
            }
            Frontend::TopologyOnly => Ok((Vec::new(), self.degree_priors(tape, data)?)),
            Frontend::BackboneOnly => {
                let projected = self.project(tape, data)?;
                let mut initial = Vec::with_capacity(projected.len());
                for (t, &x) in projected.iter().enumerate() {
                    initial.push(if data.dataset.graph.node_type(TypeId(t)).attributed {
                        x
                    } else {
                        tape.constant(Tensor::zeros(data.sizes[t], config.hidden_dim))
                    });
                }
                Ok((projected, initial))
            }
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        data: &Prepared<'_>,
        config: &TrainConfig,
        policy: &PolicyState,
        options: PassOptions<'_>,
        rngs: &mut PassRngs,
    ) -> Result<ForwardPass, Error> {
        let k = data.num_types();
        let (projected, initial) = self.front_end(tape, data, config)?;
        let bandit_on = config.frontend != Frontend::BackboneOnly;

        let budgets = match options.budgets {
            Some(b) => b.to_vec(),
            None if bandit_on && config.sampling_context => {
                policy.budgets(config.sampling_mode, &data.sizes, &mut rngs.sampling)
            }
            None => vec![0; k],
        };
        let alphas = if bandit_on && config.policy_scaling { policy.scaling() } else { vec![1.0; k] };

        let mut samples = vec![Vec::new(); k];
        let mut inputs = Vec::with_capacity(k);
        for t in 0..k {
            let ty = TypeId(t);
            let mut h = initial[t];
            if bandit_on {
                if config.sampling_context && budgets[t] > 0 {
                    let norms = tape.value(h).row_norms();
                    samples[t] = bandit::sample_representatives(
                        &norms,
                        budgets[t].min(norms.len()),
                        config.sampling_mode.within_type(),
                        &mut rngs.sampling,
                    )?;
                    let c = bandit::type_context(tape, h, &samples[t])?;
                    h = bandit::fuse_context(tape, &self.store, &self.context, ty, h, Some(c))?;
                }
                h = bandit::apply_policy_scaling(
                    tape,
                    &self.store,
                    &self.context,
                    ty,
                    h,
                    alphas[t],
                    config.dropout,
                    options.train,
                    &mut rngs.dropout,
                )?;
            } else {
                h = tape.dropout(h, config.dropout, options.train, &mut rngs.dropout)?;
            }
            inputs.push(h);
        }

        let hidden = backbone::rgcn_forward(tape, &self.store, &data.dataset.graph, &self.backbone, inputs.clone())?;
        let logits = backbone::classify(tape, &self.store, &self.backbone, hidden[data.dataset.target.0])?;

        let mut pass = ForwardPass {
            projected,
            initial,
            inputs,
            hidden,
            logits,
            budgets,
            samples,
            prediction_loss: None,
            completion_loss: None,
            total_loss: None,
        };
        if options.with_loss {
            self.losses(tape, data, config, &mut pass, &mut rngs.mask)?;
        }
        Ok(pass)
    }

    /// Central differences of the total loss against the tape gradient for
    /// every parameter, with dropout off. Every evaluation replays the
    /// sampling and mask streams of `epoch`, so the loss is a fixed function
    /// of the parameters.
    pub fn gradient_check(
        &self,
        data: &Prepared<'_>,
        config: &TrainConfig,
        policy: &PolicyState,
        epoch: usize,
        step: f64,
        tolerance: f64,
    ) -> Result<FdReport, Error> {
        finite_difference_check(&self.store, step, tolerance, |tape, store| {
            let probe = Model {
                store: store.clone(),
                topo: self.topo.clone(),
                fusion: self.fusion.clone(),
                context: self.context.clone(),
                backbone: self.backbone.clone(),
            };
            let mut rngs = PassRngs::eval(config.seed, epoch);
            let options = PassOptions { train: false, with_loss: true, budgets: None };
            let pass = probe.forward(tape, data, config, policy, options, &mut rngs)?;
            Ok(pass.total_loss.expect("losses requested"))
        })
    }

    fn losses(
        &self,
        tape: &mut Tape,
        data: &Prepared<'_>,
        config: &TrainConfig,
        pass: &mut ForwardPass,
        mask_rng: &mut ChaCha8Rng,
    ) -> Result<(), Error> {
        let train_logits = tape.gather_rows(pass.logits, Rc::clone(&data.train_nodes))?;
        let pred = tape.softmax_cross_entropy(train_logits, Rc::clone(&data.train_labels))?;
        pass.prediction_loss = Some(pred);
        pass.total_loss = Some(pred);
        if !config.completion || pass.projected.is_empty() {
            return Ok(());
        }
        let mut recon = Vec::with_capacity(data.attributed.len());
        let mut targets = Vec::with_capacity(data.attributed.len());
        for &t in &data.attributed {
            recon.push(backbone::decode(tape, &self.store, &self.backbone, t, pass.hidden[t.0])?);
            targets.push(pass.projected[t.0]);
        }
        let recon = tape.concat_rows(&recon)?;
        let targets = tape.concat_rows(&targets)?;
        let mask = completion_mask(tape.shape(recon).0, config.mask_ratio, mask_rng);
        let comp = tape.masked_mse(recon, targets, mask)?;
        pass.completion_loss = Some(comp);
        if config.lambda > 0.0 {
            let weighted = tape.scale(comp, config.lambda)?;
            pass.total_loss = Some(tape.add(pred, weighted)?);
        }
        Ok(())
    }
}

/// `max(1, floor(ratio·n))` distinct rows of `0..n`, ascending.
pub fn completion_mask(n: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let count = ((ratio * n as f64).floor() as usize).clamp(1, n.max(1)).min(n);
    let mut rows = index::sample(rng, n, count).into_vec();
    rows.sort_unstable();
    rows
}
