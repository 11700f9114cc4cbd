use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::shape::TensorShape;

/// Operator vocabulary. Declaration order is the tie-break order used by the
/// attack decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv2d,
    Dense,
    Relu,
    Add,
    Concat,
    PoolMax,
    PoolAvg,
    BatchNorm,
    Softmax,
    LayerNorm,
    AttentionMatmul,
    EmbeddingLookup,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::Conv2d,
        OpKind::Dense,
        OpKind::Relu,
        OpKind::Add,
        OpKind::Concat,
        OpKind::PoolMax,
        OpKind::PoolAvg,
        OpKind::BatchNorm,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::AttentionMatmul,
        OpKind::EmbeddingLookup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::Dense => "dense",
            OpKind::Relu => "relu",
            OpKind::Add => "add",
            OpKind::Concat => "concat",
            OpKind::PoolMax => "pool_max",
            OpKind::PoolAvg => "pool_avg",
            OpKind::BatchNorm => "batch_norm",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::AttentionMatmul => "attention_matmul",
            OpKind::EmbeddingLookup => "embedding_lookup",
        }
    }

    /// Ops lowered as a GEMM-like loop nest with an M/N/K reduction.
    pub fn is_reduction(self) -> bool {
        matches!(
            self,
            OpKind::Conv2d | OpKind::Dense | OpKind::AttentionMatmul
        )
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown op `{s}`"))
    }
}

/// Kind-specific attributes. Which fields are legal depends on the op;
/// see [`Attrs::check`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attrs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[u64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pad: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub units: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transpose_b: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<u64>,
}

impl Attrs {
    pub fn conv(kernel: u64, stride: u64, out_channels: u64) -> Self {
        Attrs {
            kernel: Some([kernel, kernel]),
            stride: Some(stride),
            pad: Some(kernel / 2),
            out_channels: Some(out_channels),
            ..Attrs::default()
        }
    }

    pub fn dense(units: u64) -> Self {
        Attrs {
            units: Some(units),
            ..Attrs::default()
        }
    }

    pub fn concat(axis: u64) -> Self {
        Attrs {
            axis: Some(axis),
            ..Attrs::default()
        }
    }

    pub fn pool(kernel: u64, stride: u64, pad: u64) -> Self {
        Attrs {
            kernel: Some([kernel, kernel]),
            stride: Some(stride),
            pad: Some(pad),
            ..Attrs::default()
        }
    }

    pub fn global_pool() -> Self {
        Attrs {
            global: Some(true),
            ..Attrs::default()
        }
    }

    pub fn matmul(transpose_b: bool) -> Self {
        Attrs {
            transpose_b: Some(transpose_b),
            ..Attrs::default()
        }
    }

    pub fn embedding(vocab: u64, dim: u64) -> Self {
        Attrs {
            vocab: Some(vocab),
            dim: Some(dim),
            ..Attrs::default()
        }
    }

    fn present(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        macro_rules! field {
            ($($f:ident),*) => {$( if self.$f.is_some() { v.push(stringify!($f)); } )*};
        }
        field!(
            kernel,
            stride,
            pad,
            in_channels,
            out_channels,
            units,
            axis,
            global,
            transpose_b,
            vocab,
            dim
        );
        v
    }

    /// Checks that only fields legal for `op` are present and that required
    /// fields are set.
    pub fn check(&self, op: OpKind) -> Result<(), String> {
        let (allowed, required): (&[&str], &[&str]) = match op {
            OpKind::Conv2d => (
                &["kernel", "stride", "pad", "in_channels", "out_channels"],
                &["kernel", "out_channels"],
            ),
            OpKind::Dense => (&["units"], &["units"]),
            OpKind::Concat => (&["axis"], &["axis"]),
            OpKind::PoolMax | OpKind::PoolAvg => (&["kernel", "stride", "pad", "global"], &[]),
            OpKind::AttentionMatmul => (&["transpose_b"], &[]),
            OpKind::EmbeddingLookup => (&["vocab", "dim"], &["vocab", "dim"]),
            OpKind::Relu
            | OpKind::Add
            | OpKind::BatchNorm
            | OpKind::Softmax
            | OpKind::LayerNorm => (&[], &[]),
        };
        let present = self.present();
        if let Some(bad) = present.iter().find(|f| !allowed.contains(f)) {
            return Err(format!("`{bad}` is not an attribute of {op}"));
        }
        if let Some(missing) = required.iter().find(|f| !present.contains(f)) {
            return Err(format!("{op} requires `{missing}`"));
        }
        let positive = [
            ("stride", self.stride),
            ("out_channels", self.out_channels),
            ("in_channels", self.in_channels),
            ("units", self.units),
            ("vocab", self.vocab),
            ("dim", self.dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == Some(0)) {
            return Err(format!("`{name}` must be positive"));
        }
        if let Some([kh, kw]) = self.kernel {
            if kh == 0 || kw == 0 {
                return Err("`kernel` must be positive".into());
            }
        }
        if matches!(op, OpKind::PoolMax | OpKind::PoolAvg) {
            let global = self.global.unwrap_or(false);
            if global && (self.kernel.is_some() || self.stride.is_some() || self.pad.is_some()) {
                return Err("global pooling takes no window attributes".into());
            }
            if !global && self.kernel.is_none() {
                return Err("windowed pooling requires `kernel`".into());
            }
        }
        Ok(())
    }
}

fn window_out(extent: u64, kernel: u64, stride: u64, pad: u64) -> Result<u64, String> {
    let padded = extent + 2 * pad;
    if padded < kernel {
        return Err(format!(
            "window {kernel} larger than padded extent {padded}"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Applies the shape rule of `op` to its input shapes.
pub fn infer_output(
    op: OpKind,
    attrs: &Attrs,
    inputs: &[&TensorShape],
) -> Result<TensorShape, String> {
    let arity_ok = match op {
        OpKind::Add => (1..=2).contains(&inputs.len()),
        OpKind::Concat => inputs.len() >= 2,
        OpKind::AttentionMatmul => inputs.len() == 2,
        _ => inputs.len() == 1,
    };
    if !arity_ok {
        return Err(format!("{op} cannot take {} inputs", inputs.len()));
    }
    let x = inputs[0];
    match op {
        OpKind::Relu | OpKind::BatchNorm | OpKind::Softmax | OpKind::LayerNorm => Ok(x.clone()),
        OpKind::Add => {
            if inputs.iter().any(|s| s.dims != x.dims) {
                return Err(format!(
                    "add operands differ: {}",
                    inputs
                        .iter()
                        .map(|s| s.to_string())
                        .collect::<Vec<_>>()
                        .join(" vs ")
                ));
            }
            Ok(x.clone())
        }
        OpKind::Conv2d => {
            let [n, h, w, c] = rank4(x)?;
            if let Some(ic) = attrs.in_channels {
                if ic != c {
                    return Err(format!("in_channels {ic} but input has {c} channels"));
                }
            }
            let [kh, kw] = attrs.kernel.unwrap_or([1, 1]);
            let stride = attrs.stride.unwrap_or(1);
            let pad = attrs.pad.unwrap_or(kh / 2);
            let oh = window_out(h, kh, stride, pad)?;
            let ow = window_out(w, kw, stride, pad)?;
            Ok(TensorShape {
                dims: vec![n, oh, ow, attrs.out_channels.unwrap_or(1)],
                dtype_bytes: x.dtype_bytes,
            })
        }
        OpKind::PoolMax | OpKind::PoolAvg => {
            let [n, h, w, c] = rank4(x)?;
            if attrs.global.unwrap_or(false) {
                return Ok(TensorShape {
                    dims: vec![n, 1, 1, c],
                    dtype_bytes: x.dtype_bytes,
                });
            }
            let [kh, kw] = attrs.kernel.unwrap_or([1, 1]);
            let stride = attrs.stride.unwrap_or(kh);
            let pad = attrs.pad.unwrap_or(0);
            Ok(TensorShape {
                dims: vec![
                    n,
                    window_out(h, kh, stride, pad)?,
                    window_out(w, kw, stride, pad)?,
                    c,
                ],
                dtype_bytes: x.dtype_bytes,
            })
        }
        OpKind::Dense => {
            if x.rank() < 2 {
                return Err("dense needs rank >= 2 input".into());
            }
            Ok(x.with_last(attrs.units.unwrap_or(1)))
        }
        OpKind::Concat => {
            let axis = attrs.axis.unwrap_or(0) as usize;
            if axis >= x.rank() {
                return Err(format!("axis {axis} out of range for rank {}", x.rank()));
            }
            let mut dims = x.dims.clone();
            dims[axis] = 0;
            for s in inputs {
                if s.rank() != x.rank() {
                    return Err("concat operands differ in rank".into());
                }
                for (i, (&a, &b)) in s.dims.iter().zip(&x.dims).enumerate() {
                    if i != axis && a != b {
                        return Err(format!("concat operands differ on axis {i}: {a} vs {b}"));
                    }
                }
                dims[axis] += s.dims[axis];
            }
            Ok(TensorShape {
                dims,
                dtype_bytes: x.dtype_bytes,
            })
        }
        OpKind::AttentionMatmul => {
            let b = inputs[1];
            if x.rank() < 2 || x.rank() != b.rank() {
                return Err("attention_matmul operands need equal rank >= 2".into());
            }
            let r = x.rank();
            if x.dims[..r - 2] != b.dims[..r - 2] {
                return Err("attention_matmul batch dims differ".into());
            }
            let (m, k) = (x.dims[r - 2], x.dims[r - 1]);
            let (kb, n) = if attrs.transpose_b.unwrap_or(false) {
                (b.dims[r - 1], b.dims[r - 2])
            } else {
                (b.dims[r - 2], b.dims[r - 1])
            };
            if k != kb {
                return Err(format!("contraction mismatch {k} vs {kb}"));
            }
            let mut dims = x.dims[..r - 2].to_vec();
            dims.extend([m, n]);
            Ok(TensorShape {
                dims,
                dtype_bytes: x.dtype_bytes,
            })
        }
        OpKind::EmbeddingLookup => {
            let mut dims = x.dims.clone();
            dims.push(attrs.dim.unwrap_or(1));
            Ok(TensorShape {
                dims,
                dtype_bytes: x.dtype_bytes,
            })
        }
    }
}

fn rank4(s: &TensorShape) -> Result<[u64; 4], String> {
    match s.dims.as_slice() {
        &[n, h, w, c] => Ok([n, h, w, c]),
        _ => Err(format!("expected NHWC input, got {s}")),
    }
}

/// Learned parameter count of one node.
pub fn param_count(op: OpKind, attrs: &Attrs, inputs: &[&TensorShape]) -> u64 {
    let x = inputs.first().map(|s| s.last()).unwrap_or(0);
    match op {
        OpKind::Conv2d => {
            let [kh, kw] = attrs.kernel.unwrap_or([1, 1]);
            let co = attrs.out_channels.unwrap_or(0);
            kh * kw * x * co + co
        }
        OpKind::Dense => {
            let u = attrs.units.unwrap_or(0);
            x * u + u
        }
        OpKind::BatchNorm | OpKind::LayerNorm => 2 * x,
        OpKind::EmbeddingLookup => attrs.vocab.unwrap_or(0) * attrs.dim.unwrap_or(0),
        _ => 0,
    }
}
