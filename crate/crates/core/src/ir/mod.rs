//! Model graphs: operator vocabulary, shape rules, the MGF document format
//! and the miniature model generators.

mod generate;
mod graph;
mod op;
mod shape;

pub use generate::{generate_model, Family};
pub use graph::{
    infer_shapes, load_model, save_model, GraphBuilder, GraphInput, MgfDocument, ModelGraph,
    NodeDoc, OperatorNode,
};
pub use op::{infer_output, param_count, Attrs, OpKind};
pub use shape::{TensorShape, DEFAULT_DTYPE_BYTES};
