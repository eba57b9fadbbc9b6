#![allow(dead_code)]

use proptest::prelude::*;
use typebandit::graph::{NodeType, Relation};
use typebandit::{generate_synthetic, Dataset, HeteroGraph, Schema, SynthSpec, TypeId};

/// Schema and edge lists of a small random heterogeneous graph. Relations
/// join distinct types and carry no duplicate edges.
pub fn graph_parts() -> impl Strategy<Value = (Schema, Vec<Vec<(usize, usize)>>)> {
    (2usize..=4)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(1usize..=8, k),
                prop::collection::vec(any::<bool>(), k),
                prop::collection::vec((0..k, 1..k), 1..=4),
            )
        })
        .prop_flat_map(|(counts, attributed, pairs)| {
            let k = counts.len();
            let relations: Vec<Relation> = pairs
                .iter()
                .enumerate()
                .map(|(i, &(src, shift))| Relation {
                    name: format!("r{i}"),
                    src: TypeId(src),
                    dst: TypeId((src + shift) % k),
                })
                .collect();
            let edge_sets: Vec<_> = relations
                .iter()
                .map(|r| {
                    let (a, b) = (counts[r.src.0], counts[r.dst.0]);
                    prop::collection::btree_set((0..a, 0..b), 0..=a * b)
                })
                .collect();
            let node_types: Vec<NodeType> = (0..k)
                .map(|t| NodeType { name: format!("t{t}"), count: counts[t], attributed: attributed[t] })
                .collect();
            (Just(Schema { node_types, relations }), edge_sets)
        })
        .prop_map(|(schema, sets)| (schema, sets.into_iter().map(|s| s.into_iter().collect()).collect()))
}

pub fn random_graph() -> impl Strategy<Value = HeteroGraph> {
    graph_parts().prop_map(|(schema, edges)| HeteroGraph::build(schema, edges).expect("valid by construction"))
}

/// Three-type synthetic dataset with `per_type` nodes of each type.
pub fn toy_dataset(per_type: usize, seed: u64) -> Dataset {
    let spec = SynthSpec {
        target_count: per_type,
        signal_count: per_type,
        distractor_count: per_type,
        signal_degree: 3,
        distractor_degree: 2,
        feature_dim: 4,
        num_classes: 3,
        seed,
        ..SynthSpec::default()
    };
    generate_synthetic(&spec).expect("valid spec").dataset
}
