//! Topology priors: degree descriptors and their per-type embedding, anchored
//! feature propagation, the hybrid mix, and the Stage-1 pretraining pass that
//! fits the degree projection before the bandit starts.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{HeteroGraph, TypeId};
use crate::kernel::{KernelError, ParamId, ParamStore, SparseMatrix, SparseOp, Tape, Tensor, Var};
use crate::optim::AdamW;

/// Variance guard of the per-type standardization.
pub const NORMALIZE_EPS: f64 = 1e-8;

/// Which topology prior feeds the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainMethod {
    Degree,
    FeatureProp,
    Hybrid,
    None,
}

impl PretrainMethod {
    pub fn uses_degree(self) -> bool {
        matches!(self, Self::Degree | Self::Hybrid)
    }

    pub fn uses_propagation(self) -> bool {
        matches!(self, Self::FeatureProp | Self::Hybrid)
    }
}

/// Standardizes every column to zero mean and unit variance:
/// `(x − μ)/sqrt(σ² + eps)` with population variance.
pub fn standardize_columns(x: &Tensor, eps: f64) -> Tensor {
    let (rows, cols) = x.shape();
    let mut out = x.clone();
    if rows == 0 {
        return out;
    }
    for c in 0..cols {
        let mean = (0..rows).map(|r| x.get(r, c)).sum::<f64>() / rows as f64;
        let var = (0..rows).map(|r| (x.get(r, c) - mean).powi(2)).sum::<f64>() / rows as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for r in 0..rows {
            out.set(r, c, (x.get(r, c) - mean) * inv);
        }
    }
    out
}

/// `log(1 + deg_r(v))` for every node (rows in global order) and relation.
pub fn log_degrees(graph: &HeteroGraph) -> Tensor {
    let m = graph.num_relations();
    let mut out = Tensor::zeros(graph.num_nodes(), m);
    for side in graph.relation_sides() {
        let base = graph.type_offset(side.node_type);
        for i in 0..side.adjacency.rows() {
            out.set(base + i, side.relation.0, (1.0 + side.adjacency.degree(i) as f64).ln());
        }
    }
    out
}

/// Log-degree profiles standardized within each node type; `|V| × m`.
pub fn degree_descriptors(graph: &HeteroGraph) -> Tensor {
    let raw = log_degrees(graph);
    let blocks: Vec<Tensor> = type_blocks(graph, &raw)
        .iter()
        .map(|b| standardize_columns(b, NORMALIZE_EPS))
        .collect();
    Tensor::vstack(&blocks.iter().collect::<Vec<_>>()).expect("blocks share a width")
}

/// Splits a global-order matrix into per-type row blocks.
pub fn type_blocks(graph: &HeteroGraph, x: &Tensor) -> Vec<Tensor> {
    graph
        .type_ids()
        .map(|t| {
            let start = graph.type_offset(t);
            let idx: Vec<usize> = (start..start + graph.type_count(t)).collect();
            x.gather_rows(&idx)
        })
        .collect()
}

/// Symmetric normalization `D̄^{−1/2} Ā D̄^{−1/2}` of the relation-collapsed
/// adjacency. Isolated nodes have empty rows.
pub fn normalized_adjacency(graph: &HeteroGraph) -> SparseMatrix {
    let n = graph.num_nodes();
    let pairs = graph.collapsed_incidence();
    let mut degree = vec![0usize; n];
    for &(u, _) in &pairs {
        degree[u] += 1;
    }
    let triplets: Vec<(usize, usize, f64)> = pairs
        .iter()
        .map(|&(u, v)| (u, v, 1.0 / ((degree[u] * degree[v]) as f64).sqrt()))
        .collect();
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// Anchored propagation `U^(h+1) = M U^(0) + (I − M) S̄ U^(h)` as two
/// constant sparse operators: the anchor selector `M` and the step
/// `(I − M) S̄`.
#[derive(Debug, Clone)]
pub struct Propagator {
    anchor: Rc<SparseOp>,
    step: Rc<SparseOp>,
    hops: usize,
}

impl Propagator {
    /// `attributed[v]` marks the hard anchors, indexed globally.
    pub fn new(graph: &HeteroGraph, attributed: &[bool], hops: usize) -> Result<Self, KernelError> {
        if hops == 0 {
            return Err(KernelError::InvalidArgument {
                op: "anchored_propagation",
                detail: "propagation depth must be at least 1".into(),
            });
        }
        let n = graph.num_nodes();
        if attributed.len() != n {
            return Err(KernelError::InvalidArgument {
                op: "anchored_propagation",
                detail: format!("{} anchor flags for {n} nodes", attributed.len()),
            });
        }
        let diag: Vec<(usize, usize, f64)> = (0..n)
            .filter(|&v| attributed[v])
            .map(|v| (v, v, 1.0))
            .collect();
        let s_bar = normalized_adjacency(graph);
        let mut step = Vec::with_capacity(s_bar.nnz());
        for v in (0..n).filter(|&v| !attributed[v]) {
            step.extend(s_bar.row(v).map(|(u, w)| (v, u, w)));
        }
        Ok(Self {
            anchor: Rc::new(SparseOp::new(SparseMatrix::from_triplets(n, n, &diag))),
            step: Rc::new(SparseOp::new(SparseMatrix::from_triplets(n, n, &step))),
            hops,
        })
    }

    /// Anchors derived from which types carry features.
    pub fn for_attributed_types(graph: &HeteroGraph, hops: usize) -> Result<Self, KernelError> {
        let mut flags = Vec::with_capacity(graph.num_nodes());
        for t in graph.type_ids() {
            flags.extend(std::iter::repeat_n(graph.node_type(t).attributed, graph.type_count(t)));
        }
        Self::new(graph, &flags, hops)
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    /// `U^(H)` from the initial state `U^(0)` (|V| × d, global order).
    pub fn propagate(&self, tape: &mut Tape, initial: Var) -> Result<Var, KernelError> {
        let anchored = tape.spmm(&self.anchor, initial)?;
        let mut state = initial;
        for _ in 0..self.hops {
            let spread = tape.spmm(&self.step, state)?;
            state = tape.add(anchored, spread)?;
        }
        Ok(state)
    }

    /// Every state `U^(0), …, U^(H)` for a constant initial state.
    pub fn states(&self, initial: &Tensor) -> Vec<Tensor> {
        let anchored = self.anchor.matrix().mul_dense(initial);
        let mut out = vec![initial.clone()];
        for h in 0..self.hops {
            let mut next = anchored.clone();
            next.add_assign(&self.step.matrix().mul_dense(&out[h]));
            out.push(next);
        }
        out
    }
}

/// `ρ·t_deg + (1 − ρ)·t_prop` with `ρ` clamped to `[0, 1]`.
pub fn hybrid_mix(tape: &mut Tape, degree: Var, propagated: Var, rho: f64) -> Result<Var, KernelError> {
    let rho = rho.clamp(0.0, 1.0);
    let a = tape.scale(degree, rho)?;
    let b = tape.scale(propagated, 1.0 - rho)?;
    tape.add(a, b)
}

/// Per-type degree projections and mixing coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoParams {
    pub weight: Vec<ParamId>,
    pub bias: Vec<ParamId>,
    pub rho: Vec<f64>,
    pub hops: usize,
}

impl TopoParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        graph: &HeteroGraph,
        hidden: usize,
        rho: f64,
        hops: usize,
        rng: &mut R,
    ) -> Self {
        let m = graph.num_relations();
        let mut weight = Vec::new();
        let mut bias = Vec::new();
        for t in graph.type_ids() {
            let name = &graph.node_type(t).name;
            weight.push(store.add_uniform(format!("topo.{name}.weight"), m, hidden, rng));
            bias.push(store.add_filled(format!("topo.{name}.bias"), 1, hidden, 0.0));
        }
        Self {
            weight,
            bias,
            rho: vec![rho.clamp(0.0, 1.0); graph.num_types()],
            hops,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.weight.iter().chain(&self.bias).copied().collect()
    }
}

/// `s W_topo + b_topo` for one type's descriptor rows, before normalization.
pub fn degree_projection(
    tape: &mut Tape,
    store: &ParamStore,
    params: &TopoParams,
    ty: TypeId,
    descriptors: Var,
) -> Result<Var, KernelError> {
    let w = tape.param(store, params.weight[ty.0]);
    let b = tape.param(store, params.bias[ty.0]);
    let xw = tape.matmul(descriptors, w)?;
    tape.add(xw, b)
}

/// Degree prior of one type: the projection standardized per column.
pub fn degree_embed(
    tape: &mut Tape,
    store: &ParamStore,
    params: &TopoParams,
    ty: TypeId,
    descriptors: Var,
) -> Result<Var, KernelError> {
    let z = degree_projection(tape, store, params, ty, descriptors)?;
    tape.standardize_columns(z, NORMALIZE_EPS)
}

/// Fits the degree projections so that `s_v W_topo + b_topo` regresses a
/// fixed per-node target (the propagated feature prior) by mean squared error
/// over all nodes. Returns the loss before each step.
pub fn pretrain_stage1(
    store: &mut ParamStore,
    params: &TopoParams,
    descriptor_blocks: &[Tensor],
    target_blocks: &[Tensor],
    epochs: usize,
    lr: f64,
    weight_decay: f64,
) -> Result<Vec<f64>, KernelError> {
    let mut opt = AdamW::for_params(store, params.param_ids(), lr, weight_decay);
    let target = Tensor::vstack(&target_blocks.iter().collect::<Vec<_>>())?;
    let rows: Rc<[usize]> = (0..target.rows()).collect();
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let mut preds = Vec::with_capacity(descriptor_blocks.len());
        for (t, s) in descriptor_blocks.iter().enumerate() {
            let s = tape.constant(s.clone());
            preds.push(degree_projection(&mut tape, store, params, TypeId(t), s)?);
        }
        let pred = tape.concat_rows(&preds)?;
        let y = tape.constant(target.clone());
        let loss = tape.masked_mse(pred, y, Rc::clone(&rows))?;
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss, store)?;
        opt.step(store, &grads);
    }
    Ok(losses)
}
