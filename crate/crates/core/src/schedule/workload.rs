use std::collections::BTreeMap;
use std::fmt;

use crate::ir::{Attrs, ModelGraph, OpKind, OperatorNode, TensorShape};

/// A deduplicated tuning task: two nodes with the same op kind, attributes
/// and shapes share one workload and therefore one schedule.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Workload {
    pub op_kind: OpKind,
    pub attrs: Attrs,
    pub inputs: Vec<TensorShape>,
    pub output: TensorShape,
    key: String,
}

/// GEMM view of a reduction op. `a_bytes` is the M-side operand, `b_bytes`
/// the N-side operand; both are read once per tile on the opposite axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GemmExtents {
    pub batch: u64,
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub a_bytes: u64,
    pub b_bytes: u64,
}

impl Workload {
    pub fn new(
        op_kind: OpKind,
        attrs: Attrs,
        inputs: Vec<TensorShape>,
        output: TensorShape,
    ) -> Self {
        let attrs_text = serde_json::to_string(&attrs).expect("attrs serialize");
        let ins: Vec<String> = inputs.iter().map(|s| s.to_string()).collect();
        let key = format!("{op_kind}{attrs_text}({})->{output}", ins.join(","));
        Workload {
            op_kind,
            attrs,
            inputs,
            output,
            key,
        }
    }

    pub fn of(g: &ModelGraph, node: &OperatorNode) -> Self {
        let inputs = node
            .inputs
            .iter()
            .map(|i| g.shape_of(i).expect("validated graph").clone())
            .collect();
        Workload::new(
            node.op_kind,
            node.attrs.clone(),
            inputs,
            node.output_shape.clone(),
        )
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn is_reduction(&self) -> bool {
        self.op_kind.is_reduction()
    }

    /// Elementwise ops that may be absorbed into their producer's kernel.
    pub fn is_epilogue(&self) -> bool {
        match self.op_kind {
            OpKind::Relu | OpKind::BatchNorm => true,
            OpKind::Add => self.inputs.len() == 1,
            _ => false,
        }
    }

    fn dtype(&self) -> u64 {
        self.output.dtype_bytes
    }

    pub fn gemm(&self) -> Option<GemmExtents> {
        let x = &self.inputs[0];
        let out = &self.output;
        match self.op_kind {
            OpKind::Conv2d => {
                let [kh, kw] = self.attrs.kernel.unwrap_or([1, 1]);
                let cin = x.last();
                let cout = out.last();
                let k = kh * kw * cin;
                Some(GemmExtents {
                    batch: 1,
                    m: out.elements() / cout,
                    n: cout,
                    k,
                    a_bytes: x.bytes(),
                    b_bytes: k * cout * self.dtype(),
                })
            }
            OpKind::Dense => {
                let k = x.last();
                let n = out.last();
                Some(GemmExtents {
                    batch: 1,
                    m: x.elements() / k,
                    n,
                    k,
                    a_bytes: x.bytes(),
                    b_bytes: k * n * self.dtype(),
                })
            }
            OpKind::AttentionMatmul => {
                let b = &self.inputs[1];
                let r = x.rank();
                let (m, k) = (x.dims[r - 2], x.dims[r - 1]);
                let n = out.dims[r - 1];
                Some(GemmExtents {
                    batch: x.dims[..r - 2].iter().product(),
                    m,
                    n,
                    k,
                    a_bytes: x.bytes(),
                    b_bytes: b.bytes(),
                })
            }
            _ => None,
        }
    }

    pub fn flops(&self) -> u64 {
        if let Some(g) = self.gemm() {
            return 2 * g.batch * g.m * g.n * g.k;
        }
        let e = self.output.elements();
        match self.op_kind {
            OpKind::Relu | OpKind::Add => e,
            OpKind::BatchNorm => 2 * e,
            OpKind::Softmax => 5 * e,
            OpKind::LayerNorm => 8 * e,
            OpKind::PoolMax | OpKind::PoolAvg => {
                if self.attrs.global.unwrap_or(false) {
                    self.inputs[0].elements()
                } else {
                    let [kh, kw] = self.attrs.kernel.unwrap_or([1, 1]);
                    e * kh * kw
                }
            }
            _ => 0,
        }
    }

    /// Bytes of activation tensors entering the op (weights excluded).
    pub fn activation_input_bytes(&self) -> u64 {
        self.inputs.iter().map(TensorShape::bytes).sum()
    }

    /// Ideal (cold, no-redundancy) reads: one entry per activation input,
    /// followed by any parameter reads.
    pub fn read_operands(&self) -> Vec<u64> {
        let mut reads: Vec<u64> = self.inputs.iter().map(TensorShape::bytes).collect();
        if let Some(b) = self.window_read_bytes() {
            reads[0] = b;
        }
        let dt = self.dtype();
        let c = self.output.last();
        match self.op_kind {
            OpKind::Conv2d | OpKind::Dense => {
                reads.push(self.gemm().expect("reduction").b_bytes);
            }
            // scale and shift
            OpKind::BatchNorm | OpKind::LayerNorm => reads.extend([c * dt, c * dt]),
            OpKind::Add if self.inputs.len() == 1 => reads.push(c * dt),
            OpKind::EmbeddingLookup => reads.push(self.output.bytes()),
            _ => {}
        }
        reads
    }

    /// Input bytes fetched by a windowed pool that loads each
    /// `POOL_TILE x POOL_TILE` output tile's input window, halo included and
    /// clipped to the padded extent. Overlapping windows re-read the halo.
    fn window_read_bytes(&self) -> Option<u64> {
        if !matches!(self.op_kind, OpKind::PoolMax | OpKind::PoolAvg)
            || self.attrs.global.unwrap_or(false)
        {
            return None;
        }
        let x = &self.inputs[0];
        let [kh, kw] = self.attrs.kernel.unwrap_or([1, 1]);
        let stride = self.attrs.stride.unwrap_or(kh);
        let pad = self.attrs.pad.unwrap_or(0);
        let span = |inp: u64, out: u64, k: u64| {
            let t = POOL_TILE.min(out).max(1);
            let window = ((t - 1) * stride + k).min(inp + 2 * pad);
            out.div_ceil(t) * window
        };
        let rows = span(x.dims[1], self.output.dims[1], kh);
        let cols = span(x.dims[2], self.output.dims[2], kw);
        let covered = x.dims[0] * rows * cols * x.last() * x.dtype_bytes;
        Some(covered.max(x.bytes()))
    }

    pub fn ideal_read_bytes(&self) -> u64 {
        self.read_operands().iter().sum()
    }

    pub fn output_bytes(&self) -> u64 {
        self.output.bytes()
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key)
    }
}

/// Output tile edge of windowed pooling kernels.
pub const POOL_TILE: u64 = 8;

/// Deduplicated workloads of a graph, keyed by [`Workload::key`].
pub fn workloads(g: &ModelGraph) -> BTreeMap<String, Workload> {
    g.nodes()
        .iter()
        .map(|n| {
            let w = Workload::of(g, n);
            (w.key().to_string(), w)
        })
        .collect()
}
