//! Architecture extraction from kernel metrics.
//!
//! Each kernel is scored against per-operator signatures (z-normalized
//! distance over log-scaled metrics), the most likely operator sequence is
//! decoded with Viterbi over a transition prior, and positions that sit
//! further than the unknown threshold from every signature are reported as
//! `UNKNOWN`.

mod fidelity;
mod signature;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use fidelity::{edit_counts, fidelity, fidelity_of_sequences, EditCounts, FidelityScore};
pub use signature::{
    build_signature_db, ClassSignature, DbOptions, SignatureDB, DEFAULT_TAU_QUANTILE, STD_FLOOR,
};

use crate::ir::OpKind;
use crate::sidechannel::{AttackerView, ViewRecord};

pub const FEATURE_DIMS: usize = 5;
/// Weight of log transition probabilities relative to emission scores.
pub const DEFAULT_TRANSITION_WEIGHT: f64 = 0.25;

/// `[ln duration, ln(1+reads), ln(1+writes), ln(1+input), ln(1+output)]`
pub type Feature = [f64; FEATURE_DIMS];

pub fn record_features(r: &ViewRecord) -> Feature {
    let l = |v: u64| (1.0 + v as f64).ln();
    [
        (r.duration_ns.max(1) as f64).ln(),
        l(r.l2_read_bytes),
        l(r.l2_write_bytes),
        l(r.input_bytes),
        l(r.output_bytes),
    ]
}

pub fn features(v: &AttackerView) -> Vec<Feature> {
    v.records.iter().map(record_features).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Op(OpKind),
    Unknown,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Op(k) => f.write_str(k.name()),
            Label::Unknown => f.write_str("UNKNOWN"),
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "UNKNOWN" {
            Ok(Label::Unknown)
        } else {
            s.parse().map(Label::Op)
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPrediction {
    pub sequence: Vec<Label>,
    /// Negative distance of each kernel to its decoded class.
    pub confidences: Vec<f64>,
}

impl AttackPrediction {
    pub fn unknown_fraction(&self) -> f64 {
        if self.sequence.is_empty() {
            return 0.0;
        }
        let n = self
            .sequence
            .iter()
            .filter(|l| **l == Label::Unknown)
            .count();
        n as f64 / self.sequence.len() as f64
    }
}

pub fn predict_architecture(v: &AttackerView, db: &SignatureDB) -> AttackPrediction {
    predict_with_weight(v, db, DEFAULT_TRANSITION_WEIGHT)
}

/// Viterbi decode maximizing `sum(-distance) + weight * sum(ln P(transition))`.
/// Ties go to the class earlier in op-kind order.
pub fn predict_with_weight(v: &AttackerView, db: &SignatureDB, weight: f64) -> AttackPrediction {
    let xs = features(v);
    let n = db.classes.len();
    if xs.is_empty() || n == 0 {
        return AttackPrediction {
            sequence: Vec::new(),
            confidences: Vec::new(),
        };
    }
    let dist: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| db.classes.iter().map(|c| c.distance(x)).collect())
        .collect();
    let log_t: Vec<Vec<f64>> = db
        .transitions
        .iter()
        .map(|row| row.iter().map(|p| weight * p.ln()).collect())
        .collect();

    let mut score: Vec<f64> = dist[0].iter().map(|d| -d).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(xs.len());
    for d in &dist[1..] {
        let mut next = vec![f64::NEG_INFINITY; n];
        let mut from = vec![0usize; n];
        for j in 0..n {
            for i in 0..n {
                let s = score[i] + log_t[i][j];
                if s > next[j] {
                    next[j] = s;
                    from[j] = i;
                }
            }
            next[j] -= d[j];
        }
        back.push(from);
        score = next;
    }
    let mut state = 0;
    for j in 1..n {
        if score[j] > score[state] {
            state = j;
        }
    }
    let mut path = vec![state; xs.len()];
    for t in (1..xs.len()).rev() {
        state = back[t - 1][state];
        path[t - 1] = state;
    }

    let mut sequence = Vec::with_capacity(xs.len());
    let mut confidences = Vec::with_capacity(xs.len());
    for (t, &c) in path.iter().enumerate() {
        let nearest = dist[t].iter().copied().fold(f64::INFINITY, f64::min);
        sequence.push(if nearest > db.unknown_threshold {
            Label::Unknown
        } else {
            Label::Op(db.classes[c].op_kind)
        });
        confidences.push(-dist[t][c]);
    }
    AttackPrediction {
        sequence,
        confidences,
    }
}
