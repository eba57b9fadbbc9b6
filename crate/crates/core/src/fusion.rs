//! Front end: projection of observed features into the shared latent space,
//! the warm start for attribute-missing types, and the gated fusion of
//! feature and topology priors.

use rand::Rng;

use crate::graph::{HeteroGraph, TypeId};
use crate::kernel::{KernelError, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// Projection per type; `None` for attribute-missing types.
    pub proj_weight: Vec<Option<ParamId>>,
    pub proj_bias: Vec<Option<ParamId>>,
    /// Gate from `[x̃ ∥ t]` (2d) to d logits, one per type.
    pub gate_weight: Vec<ParamId>,
    pub gate_bias: Vec<ParamId>,
}

impl FusionParams {
    /// `feature_dims[t]` is `Some(d_t)` exactly for attributed types.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        graph: &HeteroGraph,
        feature_dims: &[Option<usize>],
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self {
            proj_weight: Vec::new(),
            proj_bias: Vec::new(),
            gate_weight: Vec::new(),
            gate_bias: Vec::new(),
        };
        for t in graph.type_ids() {
            let name = &graph.node_type(t).name;
            match feature_dims[t.0] {
                Some(d_in) => {
                    p.proj_weight.push(Some(store.add_uniform(format!("proj.{name}.weight"), d_in, hidden, rng)));
                    p.proj_bias.push(Some(store.add_filled(format!("proj.{name}.bias"), 1, hidden, 0.0)));
                }
                None => {
                    p.proj_weight.push(None);
                    p.proj_bias.push(None);
                }
            }
            p.gate_weight.push(store.add_uniform(format!("gate.{name}.weight"), 2 * hidden, hidden, rng));
            p.gate_bias.push(store.add_filled(format!("gate.{name}.bias"), 1, hidden, 0.0));
        }
        p
    }
}

/// `X_o W_proj + b_proj` for an attributed type.
pub fn project_features(
    tape: &mut Tape,
    store: &ParamStore,
    params: &FusionParams,
    ty: TypeId,
    features: Var,
) -> Result<Var, KernelError> {
    let (Some(w), Some(b)) = (params.proj_weight[ty.0], params.proj_bias[ty.0]) else {
        return Err(KernelError::InvalidArgument {
            op: "project_features",
            detail: format!("type {} has no observed features", ty.0),
        });
    };
    let w = tape.param(store, w);
    let b = tape.param(store, b);
    let xw = tape.matmul(features, w)?;
    tape.add(xw, b)
}

/// Mean over every attributed node's projected row (pooled, not per-type
/// averaged), as a `1 × d` row.
pub fn warm_start(tape: &mut Tape, projected: &[Var]) -> Result<Var, KernelError> {
    if projected.is_empty() {
        return Err(KernelError::InvalidArgument {
            op: "warm_start",
            detail: "no attributed types".into(),
        });
    }
    let all = tape.concat_rows(projected)?;
    let n = tape.shape(all).0;
    tape.segment_mean(all, vec![0, n])
}

/// Repeats a `1 × d` row `count` times.
pub fn broadcast_row(tape: &mut Tape, row: Var, count: usize) -> Result<Var, KernelError> {
    tape.gather_rows(row, vec![0; count])
}

/// `h = g ⊙ x̃ + (1 − g) ⊙ t` with `g = σ([x̃ ∥ t] W_g + b_g)`, computed as
/// `t + g ⊙ (x̃ − t)`.
pub fn gated_fuse(
    tape: &mut Tape,
    store: &ParamStore,
    params: &FusionParams,
    ty: TypeId,
    projected: Var,
    prior: Var,
) -> Result<Var, KernelError> {
    let w = tape.param(store, params.gate_weight[ty.0]);
    let b = tape.param(store, params.gate_bias[ty.0]);
    let joined = tape.concat_cols(&[projected, prior])?;
    let logits = tape.matmul(joined, w)?;
    let logits = tape.add(logits, b)?;
    let gate = tape.sigmoid(logits)?;
    let diff = tape.sub(projected, prior)?;
    let moved = tape.mul(gate, diff)?;
    tape.add(prior, moved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeType, Relation, Schema};
    use crate::kernel::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph() -> HeteroGraph {
        let schema = Schema {
            node_types: vec![
                NodeType { name: "m".into(), count: 2, attributed: false },
                NodeType { name: "a".into(), count: 3, attributed: true },
            ],
            relations: vec![Relation { name: "ma".into(), src: TypeId(0), dst: TypeId(1) }],
        };
        HeteroGraph::build(schema, vec![vec![(0, 0), (1, 2)]]).unwrap()
    }

    fn setup(hidden: usize) -> (ParamStore, FusionParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = FusionParams::init(&mut store, &graph(), &[None, Some(hidden)], hidden, &mut rng);
        (store, p)
    }

    #[test]
    fn zero_weight_projection_is_bias() {
        let (mut store, p) = setup(2);
        *store.value_mut(p.proj_weight[1].unwrap()) = Tensor::zeros(2, 2);
        *store.value_mut(p.proj_bias[1].unwrap()) = Tensor::row_vector(&[3.0, -1.0]);
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![5.0, 6.0], vec![0.0, 0.0]]).unwrap());
        let out = project_features(&mut tape, &store, &p, TypeId(1), x).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(out).row(r), &[3.0, -1.0]);
        }
    }

    #[test]
    fn identity_projection_keeps_features() {
        let (mut store, p) = setup(2);
        *store.value_mut(p.proj_weight[1].unwrap()) = Tensor::identity(2);
        let x = Tensor::from_rows(&[vec![1.5, 2.0], vec![5.0, -6.0], vec![0.25, 0.0]]).unwrap();
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let out = project_features(&mut tape, &store, &p, TypeId(1), xv).unwrap();
        assert!(tape.value(out).bit_eq(&x));
    }

    #[test]
    fn missing_type_cannot_be_projected() {
        let (store, p) = setup(2);
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::zeros(2, 2));
        assert!(project_features(&mut tape, &store, &p, TypeId(0), x).is_err());
    }

    #[test]
    fn warm_start_pools_rows_across_types() {
        let mut tape = Tape::inference();
        let a = tape.constant(Tensor::from_rows(&[vec![4.0]]).unwrap());
        let b = tape.constant(Tensor::from_rows(&[vec![0.0], vec![0.0], vec![0.0]]).unwrap());
        let mean = warm_start(&mut tape, &[a, b]).unwrap();
        assert_eq!(tape.value(mean).item(), 1.0);
        let row = tape_row(&mut tape, &[2.0, 4.0]);
        let single = warm_start(&mut tape, &[row]).unwrap();
        let rows = broadcast_row(&mut tape, single, 3).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(rows).row(r), &[2.0, 4.0]);
        }
        assert!(warm_start(&mut tape, &[]).is_err());
    }

    fn tape_row(tape: &mut Tape, v: &[f64]) -> Var {
        tape.constant(Tensor::row_vector(v))
    }

    #[test]
    fn saturated_gates_select_an_input() {
        let (mut store, p) = setup(2);
        let mut tape = Tape::inference();
        let x = tape_row(&mut tape, &[1.0, -2.0]);
        let t = tape_row(&mut tape, &[-3.0, 0.5]);
        *store.value_mut(p.gate_bias[0]) = Tensor::row_vector(&[20.0, 20.0]);
        let h = gated_fuse(&mut tape, &store, &p, TypeId(0), x, t).unwrap();
        assert!(tape.value(h).max_abs_diff(tape.value(x)) < 1e-6);
        *store.value_mut(p.gate_bias[0]) = Tensor::row_vector(&[-20.0, -20.0]);
        let h = gated_fuse(&mut tape, &store, &p, TypeId(0), x, t).unwrap();
        assert!(tape.value(h).max_abs_diff(tape.value(t)) < 1e-6);
    }
}
