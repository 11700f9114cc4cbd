use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::op::{infer_output, param_count, Attrs, OpKind};
use super::shape::TensorShape;
use crate::error::{Error, Result, ValidationKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphInput {
    pub id: String,
    pub shape: TensorShape,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorNode {
    pub id: String,
    pub op_kind: OpKind,
    pub attrs: Attrs,
    pub inputs: Vec<String>,
    pub output_shape: TensorShape,
}

/// A validated model graph. Nodes are held in topological order and every
/// node carries its inferred output shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelGraph {
    name: String,
    inputs: Vec<GraphInput>,
    nodes: Vec<OperatorNode>,
    params_count: u64,
}

/// On-disk MGF document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MgfDocument {
    pub name: String,
    pub inputs: Vec<GraphInput>,
    pub nodes: Vec<NodeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: String,
    pub op: OpKind,
    #[serde(default)]
    pub attrs: Attrs,
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_shape: Option<TensorShape>,
}

/// Parses and validates an MGF document.
pub fn load_model(bytes: &[u8]) -> Result<ModelGraph> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    let doc: MgfDocument = serde_json::from_str(text)?;
    ModelGraph::from_document(doc)
}

/// Canonical MGF serialization: topological node order, every `out_shape`
/// present, pretty-printed with a trailing newline.
pub fn save_model(g: &ModelGraph) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&g.to_document()).expect("MGF is always serializable");
    out.push(b'\n');
    out
}

/// Recomputes every output shape from the graph inputs. Idempotent.
pub fn infer_shapes(g: &ModelGraph) -> Result<ModelGraph> {
    let mut doc = g.to_document();
    for n in &mut doc.nodes {
        n.out_shape = None;
    }
    ModelGraph::from_document(doc)
}

impl ModelGraph {
    pub fn from_document(doc: MgfDocument) -> Result<Self> {
        let mut seen = HashSet::new();
        for gi in &doc.inputs {
            if !seen.insert(gi.id.as_str()) {
                return Err(Error::validation(&gi.id, ValidationKind::DuplicateId));
            }
            if !gi.shape.is_valid() {
                return Err(Error::validation(
                    &gi.id,
                    ValidationKind::ShapeMismatch(format!("invalid input shape {}", gi.shape)),
                ));
            }
        }
        for n in &doc.nodes {
            if !seen.insert(n.id.as_str()) {
                return Err(Error::validation(&n.id, ValidationKind::DuplicateId));
            }
        }
        for n in &doc.nodes {
            n.attrs
                .check(n.op)
                .map_err(|m| Error::validation(&n.id, ValidationKind::IllegalAttrs(m)))?;
            if let Some(missing) = n.inputs.iter().find(|i| !seen.contains(i.as_str())) {
                return Err(Error::validation(
                    &n.id,
                    ValidationKind::DanglingInput(missing.clone()),
                ));
            }
        }

        let order = topo_order(&doc)?;

        let mut shapes: HashMap<&str, TensorShape> = doc
            .inputs
            .iter()
            .map(|gi| (gi.id.as_str(), gi.shape.clone()))
            .collect();
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        let mut params_count = 0;
        for &i in &order {
            let n = &doc.nodes[i];
            let ins: Vec<&TensorShape> = n.inputs.iter().map(|id| &shapes[id.as_str()]).collect();
            let out = infer_output(n.op, &n.attrs, &ins)
                .map_err(|m| Error::validation(&n.id, ValidationKind::ShapeMismatch(m)))?;
            if let Some(declared) = &n.out_shape {
                if *declared != out {
                    return Err(Error::validation(
                        &n.id,
                        ValidationKind::ShapeMismatch(format!(
                            "declared {declared}, inferred {out}"
                        )),
                    ));
                }
            }
            params_count += param_count(n.op, &n.attrs, &ins);
            shapes.insert(n.id.as_str(), out.clone());
            nodes.push(OperatorNode {
                id: n.id.clone(),
                op_kind: n.op,
                attrs: n.attrs.clone(),
                inputs: n.inputs.clone(),
                output_shape: out,
            });
        }

        Ok(ModelGraph {
            name: doc.name,
            inputs: doc.inputs,
            nodes,
            params_count,
        })
    }

    pub fn to_document(&self) -> MgfDocument {
        MgfDocument {
            name: self.name.clone(),
            inputs: self.inputs.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.id.clone(),
                    op: n.op_kind,
                    attrs: n.attrs.clone(),
                    inputs: n.inputs.clone(),
                    out_shape: Some(n.output_shape.clone()),
                })
                .collect(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &[GraphInput] {
        &self.inputs
    }

    /// Nodes in topological order.
    pub fn nodes(&self) -> &[OperatorNode] {
        &self.nodes
    }

    pub fn params_count(&self) -> u64 {
        self.params_count
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Shape of a graph input or node output.
    pub fn shape_of(&self, id: &str) -> Option<&TensorShape> {
        self.nodes
            .iter()
            .find(|n| n.id == id)
            .map(|n| &n.output_shape)
            .or_else(|| self.inputs.iter().find(|i| i.id == id).map(|i| &i.shape))
    }

    /// Operator kinds in topological order; the ground truth an attack is scored against.
    pub fn op_sequence(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op_kind).collect()
    }

    /// Consumers of each node id, in topological order of the consumer.
    pub fn consumers(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for inp in &n.inputs {
                let entry = map.entry(inp.as_str()).or_default();
                if !entry.contains(&i) {
                    entry.push(i);
                }
            }
        }
        map
    }
}

/// Stable Kahn ordering: among ready nodes, the earliest in document order goes first,
/// so an already-sorted document keeps its order.
fn topo_order(doc: &MgfDocument) -> Result<Vec<usize>> {
    let index: HashMap<&str, usize> = doc
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut indegree = vec![0usize; doc.nodes.len()];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); doc.nodes.len()];
    for (i, n) in doc.nodes.iter().enumerate() {
        for inp in &n.inputs {
            if let Some(&p) = index.get(inp.as_str()) {
                indegree[i] += 1;
                succ[p].push(i);
            }
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| Reverse(i))
        .collect();
    let mut order = Vec::with_capacity(doc.nodes.len());
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &s in &succ[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push(Reverse(s));
            }
        }
    }
    if order.len() != doc.nodes.len() {
        let stuck = indegree.iter().position(|&d| d > 0).unwrap_or(0);
        return Err(Error::validation(
            &doc.nodes[stuck].id,
            ValidationKind::Cycle,
        ));
    }
    Ok(order)
}

/// Incremental graph construction with eager shape inference.
#[derive(Debug)]
pub struct GraphBuilder {
    doc: MgfDocument,
    shapes: HashMap<String, TensorShape>,
    counter: usize,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        GraphBuilder {
            doc: MgfDocument {
                name: name.into(),
                inputs: Vec::new(),
                nodes: Vec::new(),
            },
            shapes: HashMap::new(),
            counter: 0,
        }
    }

    pub fn input(&mut self, id: &str, dims: impl Into<Vec<u64>>) -> String {
        let shape = TensorShape::new(dims);
        self.shapes.insert(id.to_string(), shape.clone());
        self.doc.inputs.push(GraphInput {
            id: id.to_string(),
            shape,
        });
        id.to_string()
    }

    pub fn op(&mut self, kind: OpKind, attrs: Attrs, inputs: &[&str]) -> Result<String> {
        let id = format!("n{:03}_{}", self.counter, kind.name());
        self.counter += 1;
        attrs
            .check(kind)
            .map_err(|m| Error::validation(&id, ValidationKind::IllegalAttrs(m)))?;
        let ins: Vec<&TensorShape> = inputs
            .iter()
            .map(|i| {
                self.shapes.get(*i).ok_or_else(|| {
                    Error::validation(&id, ValidationKind::DanglingInput(i.to_string()))
                })
            })
            .collect::<Result<_>>()?;
        let out = infer_output(kind, &attrs, &ins)
            .map_err(|m| Error::validation(&id, ValidationKind::ShapeMismatch(m)))?;
        self.shapes.insert(id.clone(), out);
        self.doc.nodes.push(NodeDoc {
            id: id.clone(),
            op: kind,
            attrs,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            out_shape: None,
        });
        Ok(id)
    }

    pub fn shape(&self, id: &str) -> &TensorShape {
        &self.shapes[id]
    }

    pub fn finish(self) -> Result<ModelGraph> {
        ModelGraph::from_document(self.doc)
    }
}
