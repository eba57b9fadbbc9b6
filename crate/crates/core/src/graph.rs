//! Immutable heterogeneous graphs with typed nodes and per-relation adjacency.
//!
//! Nodes are addressed per type: a [`NodeRef`] is a type plus a 0-based index
//! inside that type. Globally, types are laid out as consecutive blocks in
//! declaration order, which is the row order used by every dense matrix in the
//! model.
//!
//! Relations are undirected for neighborhood purposes: an edge `(u, v)` of
//! relation `r` makes `v` a neighbor of `u` and `u` a neighbor of `v`, and
//! increments `deg_r` at both endpoints. Parallel edges are kept with
//! multiplicity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub ty: TypeId,
    pub index: usize,
}

impl NodeRef {
    pub fn new(ty: usize, index: usize) -> Self {
        Self { ty: TypeId(ty), index }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeType {
    pub name: String,
    pub count: usize,
    pub attributed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub src: TypeId,
    pub dst: TypeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schema {
    pub node_types: Vec<NodeType>,
    pub relations: Vec<Relation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("a heterogeneous graph needs at least 2 node types, got {0}")]
    TooFewTypes(usize),
    #[error("duplicate node type name `{0}`")]
    DuplicateType(String),
    #[error("duplicate relation name `{0}`")]
    DuplicateRelation(String),
    #[error("relation `{relation}` references undeclared node type {ty}")]
    RelationEndpoint { relation: String, ty: usize },
    #[error("expected edge lists for {expected} relations, got {got}")]
    EdgeListCount { expected: usize, got: usize },
    #[error("relation `{relation}` edge #{edge} ({src}, {dst}) is out of range for types of size ({src_count}, {dst_count})")]
    EdgeOutOfRange {
        relation: String,
        edge: usize,
        src: usize,
        dst: usize,
        src_count: usize,
        dst_count: usize,
    },
    #[error("invalid node {ty}:{index}")]
    InvalidNode { ty: usize, index: usize },
}

/// Compressed adjacency for one node type: neighbors of node `i` are
/// `targets[offsets[i]..offsets[i + 1]]`, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    fn build(rows: usize, pairs: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); rows];
        for (a, b) in pairs {
            lists[a].push(b);
        }
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut list in lists {
            list.sort_unstable();
            targets.extend(list);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }
}

/// The view of one relation from one of its endpoint types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSide {
    pub relation: RelationId,
    /// Type whose nodes own the neighbor lists.
    pub node_type: TypeId,
    /// Type of the listed neighbors.
    pub neighbor_type: TypeId,
    pub adjacency: Csr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeteroGraph {
    schema: Schema,
    type_offsets: Vec<usize>,
    edges: Vec<Vec<(usize, usize)>>,
    /// One side per relation when both endpoints share a type, two otherwise.
    sides: Vec<Vec<RelationSide>>,
}

impl HeteroGraph {
    /// Validates the schema and edges and builds both-direction adjacency.
    pub fn build(schema: Schema, edges: Vec<Vec<(usize, usize)>>) -> Result<Self, GraphError> {
        let k = schema.node_types.len();
        if k < 2 {
            return Err(GraphError::TooFewTypes(k));
        }
        for (i, t) in schema.node_types.iter().enumerate() {
            if schema.node_types[..i].iter().any(|o| o.name == t.name) {
                return Err(GraphError::DuplicateType(t.name.clone()));
            }
        }
        for (i, r) in schema.relations.iter().enumerate() {
            if schema.relations[..i].iter().any(|o| o.name == r.name) {
                return Err(GraphError::DuplicateRelation(r.name.clone()));
            }
            for ty in [r.src, r.dst] {
                if ty.0 >= k {
                    return Err(GraphError::RelationEndpoint {
                        relation: r.name.clone(),
                        ty: ty.0,
                    });
                }
            }
        }
        if edges.len() != schema.relations.len() {
            return Err(GraphError::EdgeListCount {
                expected: schema.relations.len(),
                got: edges.len(),
            });
        }
        for (r, list) in schema.relations.iter().zip(&edges) {
            let src_count = schema.node_types[r.src.0].count;
            let dst_count = schema.node_types[r.dst.0].count;
            for (e, &(s, d)) in list.iter().enumerate() {
                if s >= src_count || d >= dst_count {
                    return Err(GraphError::EdgeOutOfRange {
                        relation: r.name.clone(),
                        edge: e,
                        src: s,
                        dst: d,
                        src_count,
                        dst_count,
                    });
                }
            }
        }

        let mut type_offsets = Vec::with_capacity(k + 1);
        type_offsets.push(0);
        for t in &schema.node_types {
            type_offsets.push(type_offsets.last().unwrap() + t.count);
        }

        let sides = schema
            .relations
            .iter()
            .zip(&edges)
            .enumerate()
            .map(|(ri, (r, list))| {
                let relation = RelationId(ri);
                if r.src == r.dst {
                    let n = schema.node_types[r.src.0].count;
                    let pairs = list.iter().flat_map(|&(s, d)| [(s, d), (d, s)]);
                    vec![RelationSide {
                        relation,
                        node_type: r.src,
                        neighbor_type: r.src,
                        adjacency: Csr::build(n, pairs),
                    }]
                } else {
                    let ns = schema.node_types[r.src.0].count;
                    let nd = schema.node_types[r.dst.0].count;
                    vec![
                        RelationSide {
                            relation,
                            node_type: r.src,
                            neighbor_type: r.dst,
                            adjacency: Csr::build(ns, list.iter().copied()),
                        },
                        RelationSide {
                            relation,
                            node_type: r.dst,
                            neighbor_type: r.src,
                            adjacency: Csr::build(nd, list.iter().map(|&(s, d)| (d, s))),
                        },
                    ]
                }
            })
            .collect();

        Ok(Self {
            schema,
            type_offsets,
            edges,
            sides,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_types(&self) -> usize {
        self.schema.node_types.len()
    }

    pub fn num_relations(&self) -> usize {
        self.schema.relations.len()
    }

    pub fn num_nodes(&self) -> usize {
        *self.type_offsets.last().unwrap()
    }

    pub fn node_type(&self, ty: TypeId) -> &NodeType {
        &self.schema.node_types[ty.0]
    }

    pub fn type_count(&self, ty: TypeId) -> usize {
        self.schema.node_types[ty.0].count
    }

    pub fn relation(&self, r: RelationId) -> &Relation {
        &self.schema.relations[r.0]
    }

    pub fn type_ids(&self) -> impl Iterator<Item = TypeId> {
        (0..self.num_types()).map(TypeId)
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = RelationId> {
        (0..self.num_relations()).map(RelationId)
    }

    pub fn type_by_name(&self, name: &str) -> Option<TypeId> {
        self.schema
            .node_types
            .iter()
            .position(|t| t.name == name)
            .map(TypeId)
    }

    /// First global row of type `ty`.
    pub fn type_offset(&self, ty: TypeId) -> usize {
        self.type_offsets[ty.0]
    }

    pub fn global_index(&self, v: NodeRef) -> usize {
        self.type_offsets[v.ty.0] + v.index
    }

    pub fn node_at(&self, global: usize) -> NodeRef {
        let ty = self.type_offsets.partition_point(|&o| o <= global) - 1;
        NodeRef::new(ty, global - self.type_offsets[ty])
    }

    /// Edge list of relation `r` as given at build time.
    pub fn edges(&self, r: RelationId) -> &[(usize, usize)] {
        &self.edges[r.0]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Every endpoint view of every relation.
    pub fn relation_sides(&self) -> impl Iterator<Item = &RelationSide> {
        self.sides.iter().flatten()
    }

    /// Endpoint views whose owning type is `ty`.
    pub fn sides_for(&self, ty: TypeId) -> impl Iterator<Item = &RelationSide> {
        self.relation_sides().filter(move |s| s.node_type == ty)
    }

    fn check(&self, v: NodeRef) -> Result<(), GraphError> {
        if v.ty.0 >= self.num_types() || v.index >= self.type_count(v.ty) {
            return Err(GraphError::InvalidNode {
                ty: v.ty.0,
                index: v.index,
            });
        }
        Ok(())
    }

    /// Opposite endpoints of `r`-edges at `v`, ascending, with multiplicity.
    /// Neighbor indices are local to the relation's other endpoint type.
    pub fn relation_neighbors(&self, v: NodeRef, r: RelationId) -> Result<&[usize], GraphError> {
        self.check(v)?;
        Ok(self.sides[r.0]
            .iter()
            .find(|s| s.node_type == v.ty)
            .map_or(&[][..], |s| s.adjacency.neighbors(v.index)))
    }

    /// `deg_r(v)` for every relation, in relation order.
    pub fn degree_profile(&self, v: NodeRef) -> Result<Vec<usize>, GraphError> {
        self.check(v)?;
        Ok(self
            .sides
            .iter()
            .map(|sides| {
                sides
                    .iter()
                    .find(|s| s.node_type == v.ty)
                    .map_or(0, |s| s.adjacency.degree(v.index))
            })
            .collect())
    }

    /// Relation-collapsed undirected adjacency as global-index pairs, one
    /// entry per directed incidence (so each edge appears twice).
    pub fn collapsed_incidence(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.num_edges());
        for side in self.relation_sides() {
            let base = self.type_offset(side.node_type);
            let nbase = self.type_offset(side.neighbor_type);
            for i in 0..side.adjacency.rows() {
                for &j in side.adjacency.neighbors(i) {
                    out.push((base + i, nbase + j));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_type_schema(a: usize, p: usize) -> Schema {
        Schema {
            node_types: vec![
                NodeType { name: "A".into(), count: a, attributed: false },
                NodeType { name: "P".into(), count: p, attributed: true },
            ],
            relations: vec![Relation { name: "AP".into(), src: TypeId(0), dst: TypeId(1) }],
        }
    }

    #[test]
    fn degrees_on_tiny_graph() {
        let g = HeteroGraph::build(two_type_schema(2, 2), vec![vec![(0, 0), (1, 1)]]).unwrap();
        assert_eq!(g.degree_profile(NodeRef::new(0, 0)).unwrap(), vec![1]);
        assert_eq!(g.degree_profile(NodeRef::new(1, 1)).unwrap(), vec![1]);
    }

    #[test]
    fn empty_relation_is_valid() {
        let g = HeteroGraph::build(two_type_schema(2, 3), vec![vec![]]).unwrap();
        for ty in 0..2 {
            for i in 0..g.type_count(TypeId(ty)) {
                assert_eq!(g.degree_profile(NodeRef::new(ty, i)).unwrap(), vec![0]);
                assert!(g.relation_neighbors(NodeRef::new(ty, i), RelationId(0)).unwrap().is_empty());
            }
        }
    }

    #[test]
    fn out_of_range_edge() {
        let err = HeteroGraph::build(two_type_schema(2, 2), vec![vec![(5, 0)]]).unwrap_err();
        assert!(matches!(err, GraphError::EdgeOutOfRange { src: 5, .. }));
    }

    #[test]
    fn distinct_validation_failures() {
        let mut s = two_type_schema(2, 2);
        s.relations.push(s.relations[0].clone());
        assert_eq!(
            HeteroGraph::build(s, vec![vec![], vec![]]).unwrap_err(),
            GraphError::DuplicateRelation("AP".into())
        );
        let mut s = two_type_schema(2, 2);
        s.relations[0].dst = TypeId(7);
        assert!(matches!(
            HeteroGraph::build(s, vec![vec![]]).unwrap_err(),
            GraphError::RelationEndpoint { ty: 7, .. }
        ));
        let mut s = two_type_schema(2, 2);
        s.node_types.pop();
        s.relations.clear();
        assert_eq!(HeteroGraph::build(s, vec![]).unwrap_err(), GraphError::TooFewTypes(1));
    }

    #[test]
    fn neighbors_sorted_with_multiplicity() {
        let g = HeteroGraph::build(two_type_schema(1, 5), vec![vec![(0, 3), (0, 1), (0, 3)]]).unwrap();
        let v = NodeRef::new(0, 0);
        assert_eq!(g.relation_neighbors(v, RelationId(0)).unwrap(), &[1, 3, 3]);
        assert_eq!(g.degree_profile(v).unwrap(), vec![3]);
        assert_eq!(g.relation_neighbors(NodeRef::new(1, 3), RelationId(0)).unwrap(), &[0, 0]);
    }

    #[test]
    fn same_type_relation_counts_both_roles() {
        let schema = Schema {
            node_types: vec![
                NodeType { name: "P".into(), count: 3, attributed: true },
                NodeType { name: "V".into(), count: 1, attributed: false },
            ],
            relations: vec![Relation { name: "cites".into(), src: TypeId(0), dst: TypeId(0) }],
        };
        let g = HeteroGraph::build(schema, vec![vec![(0, 1), (2, 0), (1, 1)]]).unwrap();
        assert_eq!(g.relation_neighbors(NodeRef::new(0, 0), RelationId(0)).unwrap(), &[1, 2]);
        assert_eq!(g.relation_neighbors(NodeRef::new(0, 1), RelationId(0)).unwrap(), &[0, 1, 1]);
        assert_eq!(g.degree_profile(NodeRef::new(1, 0)).unwrap(), vec![0]);
    }

    #[test]
    fn invalid_node_rejected() {
        let g = HeteroGraph::build(two_type_schema(2, 2), vec![vec![]]).unwrap();
        assert!(g.degree_profile(NodeRef::new(0, 2)).is_err());
        assert!(g.relation_neighbors(NodeRef::new(3, 0), RelationId(0)).is_err());
    }

    #[test]
    fn global_indexing_round_trips() {
        let g = HeteroGraph::build(two_type_schema(3, 4), vec![vec![]]).unwrap();
        for global in 0..g.num_nodes() {
            assert_eq!(g.global_index(g.node_at(global)), global);
        }
        assert_eq!(g.node_at(3), NodeRef::new(1, 0));
    }
}
