//! Datasets: a heterogeneous graph, observed features for the attributed
//! types, labels for the target type, and fixed train/val/test splits.
//!
//! On disk a dataset is a directory:
//!
//! | file | contents |
//! |------|----------|
//! | `schema.json` | `node_types: [{name, count, attributed, feature_dim}]`, `relations: [{name, src, dst}]`, `target_type`, `num_classes` |
//! | `edges_<relation>.csv` | one `src,dst` pair per line, 0-based within each type |
//! | `features_<type>.csv` | `count` rows of `feature_dim` comma-separated reals |
//! | `labels_<target>.csv` | `node_id,label` lines |
//! | `splits.json` | `{"train": [...], "val": [...], "test": [...]}` |
//!
//! Text is UTF-8 with LF line endings and `.` as the decimal separator.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, HeteroGraph, NodeType, Relation, Schema, TypeId};
use crate::kernel::Tensor;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{file}: expected {expected} rows, found {found}")]
    RowCount {
        file: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{file}:{line}: non-finite feature value `{value}`")]
    NonFinite {
        file: PathBuf,
        line: usize,
        value: String,
    },
    #[error("{file}:{line}: label {label} outside [0, {num_classes})")]
    LabelOutOfRange {
        file: PathBuf,
        line: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("{file}: node {node} appears in both `{first}` and `{second}` splits")]
    OverlappingSplits {
        file: PathBuf,
        node: usize,
        first: &'static str,
        second: &'static str,
    },
    #[error("schema.json: {0}")]
    Schema(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("dataset failed validation: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    fn named(&self) -> [(&'static str, &[usize]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: HeteroGraph,
    /// Observed features per type; `Some` exactly for attributed types.
    pub features: Vec<Option<Tensor>>,
    pub target: TypeId,
    pub num_classes: usize,
    /// Label per target-type node, `None` when unlabeled.
    pub labels: Vec<Option<usize>>,
    pub splits: Splits,
}

/// Outcome of [`Dataset::validate`]: an empty list means clean.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_clean() {
            return write!(f, "clean");
        }
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

impl Dataset {
    pub fn attributed_types(&self) -> impl Iterator<Item = TypeId> + '_ {
        self.graph
            .type_ids()
            .filter(|&t| self.graph.node_type(t).attributed)
    }

    pub fn feature_dim(&self, ty: TypeId) -> Option<usize> {
        self.features[ty.0].as_ref().map(Tensor::cols)
    }

    /// Label of a split member; callers rely on `validate` having passed.
    pub fn label(&self, node: usize) -> usize {
        self.labels[node].expect("split members are labeled")
    }

    pub fn split_labels(&self, nodes: &[usize]) -> Vec<usize> {
        nodes.iter().map(|&n| self.label(n)).collect()
    }

    /// Re-checks every dataset invariant and lists what is violated.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let g = &self.graph;
        if self.attributed_types().next().is_none() {
            v.push("no attributed types".to_string());
        }
        if self.features.len() != g.num_types() {
            v.push(format!(
                "feature table has {} entries for {} types",
                self.features.len(),
                g.num_types()
            ));
        }
        for ty in g.type_ids() {
            let t = g.node_type(ty);
            match (t.attributed, self.features.get(ty.0).and_then(Option::as_ref)) {
                (true, None) => v.push(format!("attributed type `{}` has no features", t.name)),
                (false, Some(_)) => {
                    v.push(format!("attribute-missing type `{}` carries features", t.name))
                }
                (true, Some(x)) => {
                    if x.rows() != t.count {
                        v.push(format!(
                            "type `{}` has {} feature rows for {} nodes",
                            t.name,
                            x.rows(),
                            t.count
                        ));
                    }
                    if x.cols() == 0 {
                        v.push(format!("type `{}` has zero feature columns", t.name));
                    }
                    if !x.is_finite() {
                        v.push(format!("type `{}` has non-finite features", t.name));
                    }
                }
                (false, None) => {}
            }
        }
        if self.target.0 >= g.num_types() {
            v.push(format!("target type {} is not declared", self.target.0));
            return ValidationReport { violations: v };
        }
        if self.num_classes == 0 {
            v.push("zero classes".to_string());
        }
        let n_target = g.type_count(self.target);
        if self.labels.len() != n_target {
            v.push(format!(
                "{} labels for {} target nodes",
                self.labels.len(),
                n_target
            ));
        }
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(l) = l {
                if *l >= self.num_classes {
                    v.push(format!("node {i} has label {l} outside [0, {})", self.num_classes));
                }
            }
        }
        let mut seen: HashMap<usize, &'static str> = HashMap::new();
        for (name, ids) in self.splits.named() {
            for &id in ids {
                if id >= n_target {
                    v.push(format!("{name} split node {id} is out of range"));
                    continue;
                }
                if self.labels.get(id).copied().flatten().is_none() {
                    v.push(format!("{name} split node {id} has no label"));
                }
                if let Some(prev) = seen.insert(id, name) {
                    if prev == name {
                        v.push(format!("node {id} listed twice in {name} split"));
                    } else {
                        v.push(format!("node {id} is in both {prev} and {name} splits"));
                    }
                }
            }
        }
        ValidationReport { violations: v }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    node_types: Vec<NodeTypeFile>,
    relations: Vec<RelationFile>,
    target_type: String,
    num_classes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeTypeFile {
    name: String,
    count: usize,
    attributed: bool,
    #[serde(default)]
    feature_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationFile {
    name: String,
    src: String,
    dst: String,
}

fn read(path: &Path) -> Result<String, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), DatasetError> {
    fs::write(path, contents).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_usize(file: &Path, line: usize, field: &str) -> Result<usize, DatasetError> {
    field.trim().parse().map_err(|_| DatasetError::Parse {
        file: file.to_path_buf(),
        line,
        message: format!("expected a non-negative integer, found `{}`", field.trim()),
    })
}

fn parse_pair(file: &Path, line: usize, text: &str) -> Result<(usize, usize), DatasetError> {
    let mut it = text.split(',');
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => Ok((parse_usize(file, line, a)?, parse_usize(file, line, b)?)),
        _ => Err(DatasetError::Parse {
            file: file.to_path_buf(),
            line,
            message: format!("expected two comma-separated fields, found `{text}`"),
        }),
    }
}

fn load_features(path: &Path, count: usize, dim: usize) -> Result<Tensor, DatasetError> {
    let text = read(path)?;
    let mut data = Vec::with_capacity(count * dim);
    let mut rows = 0;
    for (line, row) in lines(&text) {
        let before = data.len();
        for field in row.split(',') {
            let field = field.trim();
            let value: f64 = field.parse().map_err(|_| DatasetError::Parse {
                file: path.to_path_buf(),
                line,
                message: format!("expected a real number, found `{field}`"),
            })?;
            if !value.is_finite() {
                return Err(DatasetError::NonFinite {
                    file: path.to_path_buf(),
                    line,
                    value: field.to_string(),
                });
            }
            data.push(value);
        }
        if data.len() - before != dim {
            return Err(DatasetError::Parse {
                file: path.to_path_buf(),
                line,
                message: format!("expected {dim} columns, found {}", data.len() - before),
            });
        }
        rows += 1;
    }
    if rows != count {
        return Err(DatasetError::RowCount {
            file: path.to_path_buf(),
            expected: count,
            found: rows,
        });
    }
    Ok(Tensor::from_vec(count, dim, data).expect("row and column counts checked"))
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let dir = dir.as_ref();
    let schema_path = dir.join("schema.json");
    let schema: SchemaFile = serde_json::from_str(&read(&schema_path)?)
        .map_err(|e| DatasetError::Schema(e.to_string()))?;

    let type_index = |name: &str| {
        schema
            .node_types
            .iter()
            .position(|t| t.name == name)
            .map(TypeId)
            .ok_or_else(|| DatasetError::Schema(format!("unknown node type `{name}`")))
    };
    let relations = schema
        .relations
        .iter()
        .map(|r| {
            Ok(Relation {
                name: r.name.clone(),
                src: type_index(&r.src)?,
                dst: type_index(&r.dst)?,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let target = type_index(&schema.target_type)?;

    let mut edges = Vec::with_capacity(relations.len());
    for r in &relations {
        let path = dir.join(format!("edges_{}.csv", r.name));
        let text = read(&path)?;
        let list = lines(&text)
            .map(|(line, l)| parse_pair(&path, line, l))
            .collect::<Result<Vec<_>, _>>()?;
        edges.push(list);
    }

    let mut features = Vec::with_capacity(schema.node_types.len());
    for t in &schema.node_types {
        if t.attributed {
            if t.feature_dim == 0 {
                return Err(DatasetError::Schema(format!(
                    "attributed type `{}` declares feature_dim 0",
                    t.name
                )));
            }
            let path = dir.join(format!("features_{}.csv", t.name));
            features.push(Some(load_features(&path, t.count, t.feature_dim)?));
        } else {
            features.push(None);
        }
    }

    let graph_schema = Schema {
        node_types: schema
            .node_types
            .iter()
            .map(|t| NodeType {
                name: t.name.clone(),
                count: t.count,
                attributed: t.attributed,
            })
            .collect(),
        relations,
    };
    let graph = HeteroGraph::build(graph_schema, edges)?;

    let n_target = graph.type_count(target);
    let labels_path = dir.join(format!("labels_{}.csv", schema.target_type));
    let text = read(&labels_path)?;
    let mut labels = vec![None; n_target];
    for (line, l) in lines(&text) {
        let (node, label) = parse_pair(&labels_path, line, l)?;
        if node >= n_target {
            return Err(DatasetError::Parse {
                file: labels_path.clone(),
                line,
                message: format!("node {node} outside target type of size {n_target}"),
            });
        }
        if label >= schema.num_classes {
            return Err(DatasetError::LabelOutOfRange {
                file: labels_path.clone(),
                line,
                label,
                num_classes: schema.num_classes,
            });
        }
        labels[node] = Some(label);
    }

    let splits_path = dir.join("splits.json");
    let splits: Splits = serde_json::from_str(&read(&splits_path)?).map_err(|e| DatasetError::Parse {
        file: splits_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut owner: HashMap<usize, &'static str> = HashMap::new();
    for (name, ids) in splits.named() {
        for &id in ids {
            if let Some(prev) = owner.insert(id, name) {
                if prev != name {
                    return Err(DatasetError::OverlappingSplits {
                        file: splits_path,
                        node: id,
                        first: prev,
                        second: name,
                    });
                }
            }
        }
    }

    let dataset = Dataset {
        graph,
        features,
        target,
        num_classes: schema.num_classes,
        labels,
        splits,
    };
    let report = dataset.validate();
    if !report.is_clean() {
        return Err(DatasetError::Invalid(report.violations));
    }
    Ok(dataset)
}

/// Writes `dataset` in the directory format read by [`load_dataset`].
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let g = &dataset.graph;
    let type_name = |t: TypeId| g.node_type(t).name.clone();
    let schema = SchemaFile {
        node_types: g
            .type_ids()
            .map(|t| {
                let nt = g.node_type(t);
                NodeTypeFile {
                    name: nt.name.clone(),
                    count: nt.count,
                    attributed: nt.attributed,
                    feature_dim: dataset.feature_dim(t).unwrap_or(0),
                }
            })
            .collect(),
        relations: g
            .relation_ids()
            .map(|r| {
                let rel = g.relation(r);
                RelationFile {
                    name: rel.name.clone(),
                    src: type_name(rel.src),
                    dst: type_name(rel.dst),
                }
            })
            .collect(),
        target_type: type_name(dataset.target),
        num_classes: dataset.num_classes,
    };
    let json = serde_json::to_string_pretty(&schema).expect("schema serializes");
    write(&dir.join("schema.json"), &(json + "\n"))?;

    for r in g.relation_ids() {
        let mut out = String::new();
        for (s, d) in g.edges(r) {
            let _ = writeln!(out, "{s},{d}");
        }
        write(&dir.join(format!("edges_{}.csv", g.relation(r).name)), &out)?;
    }
    for t in g.type_ids() {
        if let Some(x) = &dataset.features[t.0] {
            let mut out = String::new();
            for r in 0..x.rows() {
                let row: Vec<String> = x.row(r).iter().map(|v| v.to_string()).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            write(&dir.join(format!("features_{}.csv", g.node_type(t).name)), &out)?;
        }
    }
    let mut out = String::new();
    for (i, l) in dataset.labels.iter().enumerate() {
        if let Some(l) = l {
            let _ = writeln!(out, "{i},{l}");
        }
    }
    write(&dir.join(format!("labels_{}.csv", type_name(dataset.target))), &out)?;
    let splits = serde_json::to_string(&dataset.splits).expect("splits serialize");
    write(&dir.join("splits.json"), &(splits + "\n"))?;
    Ok(())
}
