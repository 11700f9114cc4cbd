//! Miniature victim-model generators for four architectural families.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::graph::{GraphBuilder, ModelGraph};
use super::op::{Attrs, OpKind};
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ResnetMini,
    DensenetMini,
    YoloMini,
    TransformerMini,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::ResnetMini,
        Family::DensenetMini,
        Family::YoloMini,
        Family::TransformerMini,
    ];

    pub const CONV: [Family; 3] = [Family::ResnetMini, Family::DensenetMini, Family::YoloMini];

    pub fn name(self) -> &'static str {
        match self {
            Family::ResnetMini => "resnet_mini",
            Family::DensenetMini => "densenet_mini",
            Family::YoloMini => "yolo_mini",
            Family::TransformerMini => "transformer_mini",
        }
    }

    pub fn scale_range(self) -> RangeInclusive<u32> {
        match self {
            Family::TransformerMini => 1..=6,
            _ => 1..=3,
        }
    }

    pub fn is_conv(self) -> bool {
        self != Family::TransformerMini
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family `{s}`")))
    }
}

/// Builds a deterministic miniature model of `family`.
pub fn generate_model(family: Family, scale: u32, seed: u64) -> Result<ModelGraph> {
    if !family.scale_range().contains(&scale) {
        return Err(Error::Config(format!(
            "scale {scale} outside {:?} for {family}",
            family.scale_range()
        )));
    }
    let name = format!("{family}_s{scale}_{seed}");
    let mut rng = rng_for(seed, "generate", family.name());
    let mut pick = |xs: &[u64]| *xs.choose(&mut rng).expect("non-empty choice");
    match family {
        Family::ResnetMini => resnet(name, scale, pick(&[24, 28, 32]), pick(&[8, 12, 16])),
        Family::DensenetMini => densenet(name, scale, pick(&[24, 28, 32]), pick(&[4, 6, 8])),
        Family::YoloMini => yolo(name, scale, pick(&[32, 40, 48]), pick(&[8, 12, 16])),
        Family::TransformerMini => {
            transformer(name, scale, pick(&[128, 192, 256]), pick(&[256, 384, 512]))
        }
    }
}

const CLASSES: u64 = 10;

fn channels(b: &GraphBuilder, id: &str) -> u64 {
    b.shape(id).last()
}

/// conv -> batch_norm -> relu
fn cbr(b: &mut GraphBuilder, x: &str, out: u64, k: u64, stride: u64) -> Result<String> {
    let c = b.op(OpKind::Conv2d, Attrs::conv(k, stride, out), &[x])?;
    let n = b.op(OpKind::BatchNorm, Attrs::default(), &[&c])?;
    b.op(OpKind::Relu, Attrs::default(), &[&n])
}

fn classifier(b: &mut GraphBuilder, x: &str) -> Result<String> {
    let p = b.op(OpKind::PoolAvg, Attrs::global_pool(), &[x])?;
    let d = b.op(OpKind::Dense, Attrs::dense(CLASSES), &[&p])?;
    b.op(OpKind::Softmax, Attrs::default(), &[&d])
}

fn resnet(name: String, scale: u32, res: u64, width: u64) -> Result<ModelGraph> {
    let mut b = GraphBuilder::new(name);
    let x = b.input("image", [1, res, res, 3]);
    let s = cbr(&mut b, &x, width, 3, 1)?;
    let mut x = b.op(OpKind::PoolMax, Attrs::pool(2, 2, 0), &[&s])?;
    for stage in 0..3u32 {
        let out = width << stage;
        for block in 0..scale {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let h = cbr(&mut b, &x, out, 3, stride)?;
            let h = b.op(OpKind::Conv2d, Attrs::conv(3, 1, out), &[&h])?;
            let h = b.op(OpKind::BatchNorm, Attrs::default(), &[&h])?;
            let shortcut = if stride != 1 || channels(&b, &x) != out {
                let p = b.op(OpKind::Conv2d, Attrs::conv(1, stride, out), &[&x])?;
                b.op(OpKind::BatchNorm, Attrs::default(), &[&p])?
            } else {
                x.clone()
            };
            let sum = b.op(OpKind::Add, Attrs::default(), &[&h, &shortcut])?;
            x = b.op(OpKind::Relu, Attrs::default(), &[&sum])?;
        }
    }
    classifier(&mut b, &x)?;
    b.finish()
}

fn densenet(name: String, scale: u32, res: u64, growth: u64) -> Result<ModelGraph> {
    let mut b = GraphBuilder::new(name);
    let x = b.input("image", [1, res, res, 3]);
    let mut x = cbr(&mut b, &x, 2 * growth, 3, 1)?;
    let layers = scale + 1;
    for block in 0..3 {
        for _ in 0..layers {
            let n = b.op(OpKind::BatchNorm, Attrs::default(), &[&x])?;
            let r = b.op(OpKind::Relu, Attrs::default(), &[&n])?;
            let c = b.op(OpKind::Conv2d, Attrs::conv(3, 1, growth), &[&r])?;
            x = b.op(OpKind::Concat, Attrs::concat(3), &[&x, &c])?;
        }
        if block < 2 {
            let n = b.op(OpKind::BatchNorm, Attrs::default(), &[&x])?;
            let r = b.op(OpKind::Relu, Attrs::default(), &[&n])?;
            let half = (channels(&b, &r) / 2).max(1);
            let c = b.op(OpKind::Conv2d, Attrs::conv(1, 1, half), &[&r])?;
            x = b.op(OpKind::PoolAvg, Attrs::pool(2, 2, 0), &[&c])?;
        }
    }
    let n = b.op(OpKind::BatchNorm, Attrs::default(), &[&x])?;
    let r = b.op(OpKind::Relu, Attrs::default(), &[&n])?;
    classifier(&mut b, &r)?;
    b.finish()
}

/// Cross-stage-partial stage: two 1x1 branches, residual bottlenecks on one,
/// concat and a 1x1 merge.
fn csp_stage(b: &mut GraphBuilder, x: &str, out: u64, depth: u32) -> Result<String> {
    let half = out / 2;
    let a = cbr(b, x, half, 1, 1)?;
    let mut h = cbr(b, x, half, 1, 1)?;
    for _ in 0..depth {
        let t = cbr(b, &h, half, 1, 1)?;
        let t = cbr(b, &t, half, 3, 1)?;
        h = b.op(OpKind::Add, Attrs::default(), &[&t, &h])?;
    }
    let cat = b.op(OpKind::Concat, Attrs::concat(3), &[&a, &h])?;
    cbr(b, &cat, out, 1, 1)
}

fn yolo(name: String, scale: u32, res: u64, width: u64) -> Result<ModelGraph> {
    let mut b = GraphBuilder::new(name);
    let x = b.input("image", [1, res, res, 3]);
    let x = cbr(&mut b, &x, width, 3, 1)?;
    let x = cbr(&mut b, &x, 2 * width, 3, 2)?;
    let x = csp_stage(&mut b, &x, 2 * width, scale)?;
    let x = cbr(&mut b, &x, 4 * width, 3, 2)?;
    let x = csp_stage(&mut b, &x, 4 * width, scale)?;
    // spatial pyramid pooling
    let p5 = b.op(OpKind::PoolMax, Attrs::pool(5, 1, 2), &[&x])?;
    let p9 = b.op(OpKind::PoolMax, Attrs::pool(9, 1, 4), &[&x])?;
    let p13 = b.op(OpKind::PoolMax, Attrs::pool(13, 1, 6), &[&x])?;
    let cat = b.op(OpKind::Concat, Attrs::concat(3), &[&x, &p5, &p9, &p13])?;
    let x = cbr(&mut b, &cat, 4 * width, 1, 1)?;
    // 3 anchors x (box + objectness + 1 class)
    b.op(OpKind::Conv2d, Attrs::conv(1, 1, 18), &[&x])?;
    b.finish()
}

fn transformer(name: String, layers: u32, seq: u64, d_model: u64) -> Result<ModelGraph> {
    const VOCAB: u64 = 1000;
    let mut b = GraphBuilder::new(name);
    let tokens = b.input("tokens", [seq]);
    let positions = b.input("positions", [seq]);
    let t = b.op(
        OpKind::EmbeddingLookup,
        Attrs::embedding(VOCAB, d_model),
        &[&tokens],
    )?;
    let p = b.op(
        OpKind::EmbeddingLookup,
        Attrs::embedding(seq, d_model),
        &[&positions],
    )?;
    let x = b.op(OpKind::Add, Attrs::default(), &[&t, &p])?;
    let mut x = b.op(OpKind::LayerNorm, Attrs::default(), &[&x])?;
    for _ in 0..layers {
        let q = b.op(OpKind::Dense, Attrs::dense(d_model), &[&x])?;
        let k = b.op(OpKind::Dense, Attrs::dense(d_model), &[&x])?;
        let v = b.op(OpKind::Dense, Attrs::dense(d_model), &[&x])?;
        let s = b.op(OpKind::AttentionMatmul, Attrs::matmul(true), &[&q, &k])?;
        let s = b.op(OpKind::Softmax, Attrs::default(), &[&s])?;
        let ctx = b.op(OpKind::AttentionMatmul, Attrs::matmul(false), &[&s, &v])?;
        let o = b.op(OpKind::Dense, Attrs::dense(d_model), &[&ctx])?;
        let r = b.op(OpKind::Add, Attrs::default(), &[&x, &o])?;
        let h = b.op(OpKind::LayerNorm, Attrs::default(), &[&r])?;
        let f = b.op(OpKind::Dense, Attrs::dense(4 * d_model), &[&h])?;
        let f = b.op(OpKind::Relu, Attrs::default(), &[&f])?;
        let f = b.op(OpKind::Dense, Attrs::dense(d_model), &[&f])?;
        let r = b.op(OpKind::Add, Attrs::default(), &[&h, &f])?;
        x = b.op(OpKind::LayerNorm, Attrs::default(), &[&r])?;
    }
    let logits = b.op(OpKind::Dense, Attrs::dense(VOCAB), &[&x])?;
    b.op(OpKind::Softmax, Attrs::default(), &[&logits])?;
    b.finish()
}
