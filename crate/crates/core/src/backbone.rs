//! R-GCN message passing, the classifier head and the completion decoders.
//!
//! One layer computes, for every node `v` of type `o`,
//! `σ(h_v W_o + Σ_r mean_{u ∈ N_r(v)} h_u W_r)`, where a relation with no
//! neighbors at `v` contributes nothing. Each relation owns one transform
//! shared by both traversal directions.

use rand::Rng;

use crate::graph::{HeteroGraph, TypeId};
use crate::kernel::{KernelError, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Leaves pre-activations untouched; used to test the aggregation alone.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub self_weight: Vec<ParamId>,
    pub relation_weight: Vec<ParamId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub layers: Vec<LayerParams>,
    pub classifier_weight: ParamId,
    pub classifier_bias: ParamId,
    /// Decoder per type; `None` for attribute-missing types.
    pub decoder_weight: Vec<Option<ParamId>>,
    pub decoder_bias: Vec<Option<ParamId>>,
}

impl BackboneParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        graph: &HeteroGraph,
        hidden: usize,
        num_layers: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| LayerParams {
                self_weight: graph
                    .type_ids()
                    .map(|t| {
                        let name = &graph.node_type(t).name;
                        store.add_uniform(format!("rgcn{l}.self.{name}"), hidden, hidden, rng)
                    })
                    .collect(),
                relation_weight: graph
                    .relation_ids()
                    .map(|r| {
                        let name = &graph.relation(r).name;
                        store.add_uniform(format!("rgcn{l}.rel.{name}"), hidden, hidden, rng)
                    })
                    .collect(),
            })
            .collect();
        let classifier_weight = store.add_uniform("classifier.weight", hidden, num_classes, rng);
        let classifier_bias = store.add_filled("classifier.bias", 1, num_classes, 0.0);
        let mut decoder_weight = Vec::new();
        let mut decoder_bias = Vec::new();
        for t in graph.type_ids() {
            let nt = graph.node_type(t);
            if nt.attributed {
                decoder_weight.push(Some(store.add_uniform(format!("decoder.{}.weight", nt.name), hidden, hidden, rng)));
                decoder_bias.push(Some(store.add_filled(format!("decoder.{}.bias", nt.name), 1, hidden, 0.0)));
            } else {
                decoder_weight.push(None);
                decoder_bias.push(None);
            }
        }
        Self { layers, classifier_weight, classifier_bias, decoder_weight, decoder_bias }
    }
}

/// One message-passing layer over per-type input blocks.
pub fn rgcn_layer(
    tape: &mut Tape,
    store: &ParamStore,
    graph: &HeteroGraph,
    layer: &LayerParams,
    inputs: &[Var],
    activation: Activation,
) -> Result<Vec<Var>, KernelError> {
    let mut out = Vec::with_capacity(inputs.len());
    for t in graph.type_ids() {
        let w_self = tape.param(store, layer.self_weight[t.0]);
        let mut acc = tape.matmul(inputs[t.0], w_self)?;
        for side in graph.sides_for(t) {
            if side.adjacency.targets().is_empty() {
                continue;
            }
            let gathered = tape.gather_rows(inputs[side.neighbor_type.0], side.adjacency.targets())?;
            let mean = tape.segment_mean(gathered, side.adjacency.offsets())?;
            let w_rel = tape.param(store, layer.relation_weight[side.relation.0]);
            let msg = tape.matmul(mean, w_rel)?;
            acc = tape.add(acc, msg)?;
        }
        out.push(match activation {
            Activation::Relu => tape.relu(acc)?,
            Activation::Identity => acc,
        });
    }
    Ok(out)
}

/// All layers with ReLU.
pub fn rgcn_forward(
    tape: &mut Tape,
    store: &ParamStore,
    graph: &HeteroGraph,
    params: &BackboneParams,
    inputs: Vec<Var>,
) -> Result<Vec<Var>, KernelError> {
    let mut h = inputs;
    for layer in &params.layers {
        h = rgcn_layer(tape, store, graph, layer, &h, Activation::Relu)?;
    }
    Ok(h)
}

/// `H_tar W_cls + b_cls`.
pub fn classify(tape: &mut Tape, store: &ParamStore, params: &BackboneParams, h: Var) -> Result<Var, KernelError> {
    let w = tape.param(store, params.classifier_weight);
    let b = tape.param(store, params.classifier_bias);
    let z = tape.matmul(h, w)?;
    tape.add(z, b)
}

/// `H W_dec + b_dec` for an attributed type.
pub fn decode(
    tape: &mut Tape,
    store: &ParamStore,
    params: &BackboneParams,
    ty: TypeId,
    h: Var,
) -> Result<Var, KernelError> {
    let (Some(w), Some(b)) = (params.decoder_weight[ty.0], params.decoder_bias[ty.0]) else {
        return Err(KernelError::InvalidArgument {
            op: "decode",
            detail: format!("type {} has no decoder", ty.0),
        });
    };
    let w = tape.param(store, w);
    let b = tape.param(store, b);
    let z = tape.matmul(h, w)?;
    tape.add(z, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeType, Relation, Schema};
    use crate::kernel::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(edges: Vec<(usize, usize)>) -> HeteroGraph {
        let schema = Schema {
            node_types: vec![
                NodeType { name: "a".into(), count: 3, attributed: true },
                NodeType { name: "b".into(), count: 2, attributed: false },
            ],
            relations: vec![Relation { name: "ab".into(), src: TypeId(0), dst: TypeId(1) }],
        };
        HeteroGraph::build(schema, vec![edges]).unwrap()
    }

    fn params(g: &HeteroGraph, hidden: usize) -> (ParamStore, BackboneParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = BackboneParams::init(&mut store, g, hidden, 1, 2, &mut rng);
        (store, p)
    }

    #[test]
    fn edgeless_layer_is_a_dense_transform() {
        let g = graph(vec![]);
        let (store, p) = params(&g, 2);
        let xa = Tensor::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0], vec![-3.0, 0.0]]).unwrap();
        let xb = Tensor::from_rows(&[vec![0.2, 0.1], vec![1.0, 1.0]]).unwrap();
        let mut tape = Tape::inference();
        let inputs = vec![tape.constant(xa.clone()), tape.constant(xb)];
        let out = rgcn_layer(&mut tape, &store, &g, &p.layers[0], &inputs, Activation::Relu).unwrap();
        let expect = xa.matmul(store.value(p.layers[0].self_weight[0])).unwrap().map(|x| x.max(0.0));
        assert!(tape.value(out[0]).bit_eq(&expect));
    }

    #[test]
    fn identity_relation_gives_neighbor_means() {
        let g = graph(vec![(0, 0), (1, 0), (2, 1)]);
        let (mut store, p) = params(&g, 2);
        for &w in &p.layers[0].self_weight {
            *store.value_mut(w) = Tensor::zeros(2, 2);
        }
        *store.value_mut(p.layers[0].relation_weight[0]) = Tensor::identity(2);
        let xa = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![4.0, 4.0]]).unwrap();
        let xb = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 6.0]]).unwrap();
        let mut tape = Tape::inference();
        let inputs = vec![tape.constant(xa), tape.constant(xb)];
        let out = rgcn_layer(&mut tape, &store, &g, &p.layers[0], &inputs, Activation::Identity).unwrap();
        assert_eq!(tape.value(out[1]).row(0), &[0.5, 0.5]);
        assert_eq!(tape.value(out[1]).row(1), &[4.0, 4.0]);
        assert_eq!(tape.value(out[0]).row(2), &[0.0, 6.0]);
    }

    #[test]
    fn classifier_and_decoder_shapes() {
        let g = graph(vec![(0, 0)]);
        let (mut store, p) = params(&g, 2);
        *store.value_mut(p.classifier_weight) = Tensor::zeros(2, 2);
        *store.value_mut(p.classifier_bias) = Tensor::row_vector(&[0.5, -0.5]);
        let mut tape = Tape::inference();
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let logits = classify(&mut tape, &store, &p, h).unwrap();
        assert_eq!(tape.shape(logits), (2, 2));
        assert_eq!(tape.value(logits).row(1), &[0.5, -0.5]);
        assert!(decode(&mut tape, &store, &p, TypeId(1), h).is_err());
        let ha = tape.constant(Tensor::zeros(3, 2));
        let decoded = decode(&mut tape, &store, &p, TypeId(0), ha).unwrap();
        assert_eq!(tape.shape(decoded), (3, 2));
    }
}
