use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{features, Feature, FEATURE_DIMS};
use crate::error::{Error, Result};
use crate::ir::{ModelGraph, OpKind};
use crate::perfsim::{run_inference, DeviceProfile};
use crate::schedule::{lower, ScheduleAssignment};
use crate::seed::derive_seed;
use crate::sidechannel::attacker_view;

/// Floor applied to every per-dimension standard deviation.
pub const STD_FLOOR: f64 = 1e-6;
/// Quantile of within-class distances used as the unknown-operator threshold.
pub const DEFAULT_TAU_QUANTILE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub op_kind: OpKind,
    pub samples: usize,
    pub mean: Feature,
    pub std: Feature,
}

impl ClassSignature {
    /// z-normalized Euclidean distance of `x` to this class.
    pub fn distance(&self, x: &Feature) -> f64 {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| ((v - m) / s).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// The attacker's prior knowledge: per-operator metric signatures measured on
/// library-default compilations, an operator transition prior, and the
/// distance beyond which a kernel is declared unfamiliar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureDB {
    pub device: String,
    /// Sorted by op kind.
    pub classes: Vec<ClassSignature>,
    /// Row-stochastic; `transitions[i][j]` is P(class j follows class i).
    pub transitions: Vec<Vec<f64>>,
    pub unknown_threshold: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SignatureDB {
    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("db serializes");
        v.push(b'\n');
        v
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let db: SignatureDB = serde_json::from_slice(bytes)?;
        let n = db.classes.len();
        if n == 0 {
            return Err(Error::Attack("signature db has no classes".into()));
        }
        if db.transitions.len() != n || db.transitions.iter().any(|r| r.len() != n) {
            return Err(Error::Attack(
                "transition matrix does not match classes".into(),
            ));
        }
        Ok(db)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    pub fn class_index(&self, op: OpKind) -> Option<usize> {
        self.classes.iter().position(|c| c.op_kind == op)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbOptions {
    pub noise_sigma: f64,
    /// One simulated inference per corpus graph per seed.
    pub seeds: Vec<u64>,
    pub tau_quantile: f64,
}

impl Default for DbOptions {
    fn default() -> Self {
        DbOptions {
            noise_sigma: 0.0,
            seeds: vec![0],
            tau_quantile: DEFAULT_TAU_QUANTILE,
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    // nearest rank
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Profiles every corpus graph under library-default schedules and
/// aggregates per-operator signatures. Default schedules never fuse or split,
/// so each kernel maps to exactly one operator.
pub fn build_signature_db(
    corpus: &[ModelGraph],
    d: &DeviceProfile,
    opts: &DbOptions,
) -> Result<SignatureDB> {
    if corpus.is_empty() {
        return Err(Error::Attack("signature corpus is empty".into()));
    }
    if opts.seeds.is_empty() {
        return Err(Error::Attack(
            "signature corpus needs at least one seed".into(),
        ));
    }
    let mut samples: BTreeMap<OpKind, Vec<Feature>> = BTreeMap::new();
    let mut pairs: Vec<(OpKind, OpKind)> = Vec::new();
    for g in corpus {
        let compiled = lower(g, &ScheduleAssignment::defaults(g))?;
        let truth = g.op_sequence();
        if compiled.kernels.len() != truth.len() {
            return Err(Error::Attack(format!(
                "default compilation of `{}` is not one kernel per op",
                g.name()
            )));
        }
        for &seed in &opts.seeds {
            let trace = run_inference(
                &compiled,
                d,
                opts.noise_sigma,
                derive_seed(seed, "corpus", g.name()),
            );
            for (op, f) in truth.iter().zip(features(&attacker_view(&trace))) {
                samples.entry(*op).or_default().push(f);
            }
        }
        pairs.extend(truth.windows(2).map(|w| (w[0], w[1])));
    }

    let mut warnings = Vec::new();
    let classes: Vec<ClassSignature> = samples
        .iter()
        .map(|(&op, xs)| {
            let n = xs.len() as f64;
            let mut mean = [0.0; FEATURE_DIMS];
            for x in xs {
                for (m, v) in mean.iter_mut().zip(x) {
                    *m += v / n;
                }
            }
            let mut std = [STD_FLOOR; FEATURE_DIMS];
            if xs.len() >= 2 {
                for (k, s) in std.iter_mut().enumerate() {
                    let var = xs.iter().map(|x| (x[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0);
                    *s = var.sqrt().max(STD_FLOOR);
                }
            } else {
                warnings.push(format!("{op}: fewer than 2 samples, variance floored"));
            }
            ClassSignature {
                op_kind: op,
                samples: xs.len(),
                mean,
                std,
            }
        })
        .collect();

    let index: BTreeMap<OpKind, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.op_kind, i))
        .collect();
    let n = classes.len();
    let mut counts = vec![vec![1.0; n]; n];
    for (a, b) in pairs {
        counts[index[&a]][index[&b]] += 1.0;
    }
    let transitions = counts
        .into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            row.into_iter().map(|c| c / total).collect()
        })
        .collect();

    let mut within: Vec<f64> = classes
        .iter()
        .flat_map(|c| samples[&c.op_kind].iter().map(move |x| c.distance(x)))
        .collect();
    within.sort_by(f64::total_cmp);

    Ok(SignatureDB {
        device: d.name.clone(),
        classes,
        transitions,
        unknown_threshold: quantile(&within, opts.tau_quantile),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::load_model;

    fn conv_relu() -> ModelGraph {
        load_model(
            br#"{"name":"cr","inputs":[{"id":"x","shape":[1,8,8,3]}],"nodes":[
            {"id":"conv","op":"conv2d","attrs":{"kernel":[3,3],"out_channels":16},"inputs":["x"]},
            {"id":"relu","op":"relu","inputs":["conv"]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn single_graph_noise_free() {
        let g = conv_relu();
        let d = DeviceProfile::a100_like();
        let db = build_signature_db(std::slice::from_ref(&g), &d, &DbOptions::default()).unwrap();
        assert_eq!(db.classes.len(), 2);
        let c = lower(&g, &ScheduleAssignment::defaults(&g)).unwrap();
        let exact = features(&attacker_view(&run_inference(&c, &d, 0.0, 0)));
        assert_eq!(db.classes[0].op_kind, OpKind::Conv2d);
        assert_eq!(db.classes[0].mean, exact[0]);
        assert_eq!(db.classes[1].mean, exact[1]);
        assert!(db
            .classes
            .iter()
            .all(|c| c.std.iter().all(|&s| s == STD_FLOOR)));
        assert_eq!(db.warnings.len(), 2);
        assert_eq!(db.unknown_threshold, 0.0);
    }

    #[test]
    fn transition_prior_add_one() {
        let db = build_signature_db(
            &[conv_relu()],
            &DeviceProfile::a100_like(),
            &DbOptions::default(),
        )
        .unwrap();
        // conv row: counts [0+1, 1+1]; relu row: [1, 1]
        assert_eq!(db.transitions[0], vec![1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(db.transitions[1], vec![0.5, 0.5]);
        for row in &db.transitions {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_and_serializable() {
        let d = DeviceProfile::a100_like();
        let opts = DbOptions {
            noise_sigma: 0.05,
            seeds: vec![1, 2, 3],
            ..DbOptions::default()
        };
        let a = build_signature_db(&[conv_relu()], &d, &opts).unwrap();
        let b = build_signature_db(&[conv_relu()], &d, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(SignatureDB::from_json(&a.to_json()).unwrap(), a);
        assert!(a
            .classes
            .iter()
            .all(|c| c.std.iter().all(|&s| s >= STD_FLOOR)));
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(
            build_signature_db(&[], &DeviceProfile::a100_like(), &DbOptions::default()).is_err()
        );
    }

    #[test]
    fn nearest_rank_quantile() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile(&xs, 0.99), 99.0);
        assert_eq!(quantile(&xs, 1.0), 100.0);
        assert_eq!(quantile(&[3.0], 0.99), 3.0);
    }
}
