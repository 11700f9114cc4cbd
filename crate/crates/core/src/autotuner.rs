//! Simulated-annealing schedule search guided by an online pairwise ranker.
//!
//! Each round proposes `batch_size` one-step neighbours of the current
//! schedule, measures the one the ranker likes best (a random one during
//! warm-up) and applies the Metropolis rule. One measurement is one trial.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::ModelGraph;
use crate::perfsim::{simulate_kernel, DeviceProfile};
use crate::schedule::{
    lower_workload, workloads, Schedule, ScheduleAssignment, ScheduleSpace, Workload,
};
use crate::seed::{derive_seed, rng_for};

/// Length of the vector returned by [`featurize`].
pub const FEATURES: usize = 9;
/// Perceptron step size.
pub const RANK_LEARNING_RATE: f64 = 0.1;

pub type Features = [f64; FEATURES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    /// Measurement budget per workload.
    pub trials: u32,
    pub batch_size: u32,
    /// `None` means a quarter of the default schedule's cost.
    pub initial_temperature: Option<f64>,
    pub cooling_rate: f64,
    pub surrogate_warmup: u32,
    pub seed: u64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            trials: 0,
            batch_size: 8,
            initial_temperature: None,
            cooling_rate: 0.98,
            surrogate_warmup: 16,
            seed: 0,
        }
    }
}

impl TunerConfig {
    pub fn with_trials(trials: u32, seed: u64) -> Self {
        TunerConfig {
            trials,
            seed,
            ..TunerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cooling_rate > 0.0 && self.cooling_rate < 1.0) {
            return Err(Error::Config("cooling_rate must be in (0, 1)".into()));
        }
        if let Some(t) = self.initial_temperature {
            if t.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::Config("initial_temperature must be positive".into()));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `[log2 tile_m, log2 tile_n, log2 tile_k, log2 unroll, log2 vector,
/// log2 split_k, fuse, ln flops, ln(ideal reads + output bytes)]`.
pub fn featurize(s: &Schedule, w: &Workload) -> Features {
    let l2 = |v: u32| (v.max(1) as f64).log2();
    let ideal = w.ideal_read_bytes() + w.output_bytes();
    [
        l2(s.tile_m),
        l2(s.tile_n),
        l2(s.tile_k),
        l2(s.unroll),
        l2(s.vector_width),
        l2(s.split_k),
        s.fuse_epilogue as u8 as f64,
        (w.flops().max(1) as f64).ln(),
        (ideal.max(1) as f64).ln(),
    ]
}

/// Linear scorer; a higher score predicts a cheaper schedule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ranker {
    pub weights: Features,
}

impl Ranker {
    pub fn score(&self, f: &Features) -> f64 {
        self.weights.iter().zip(f).map(|(w, x)| w * x).sum()
    }

    /// Perceptron step on one pair. Pairs of equal cost carry no ordering and
    /// are ignored. Returns whether the weights moved.
    pub fn update(&mut self, a: (&Features, f64), b: (&Features, f64)) -> bool {
        if a.1 == b.1 {
            return false;
        }
        let (cheap, costly) = if a.1 < b.1 { (a.0, b.0) } else { (b.0, a.0) };
        if self.score(cheap) > self.score(costly) {
            return false;
        }
        for (w, (c, x)) in self.weights.iter_mut().zip(cheap.iter().zip(costly)) {
            *w += RANK_LEARNING_RATE * (c - x);
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schedule: Schedule,
    pub cost_ns: f64,
    pub best_cost_ns: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerState {
    pub best_schedule: Schedule,
    pub best_cost: f64,
    pub default_cost: f64,
    pub trials_used: u32,
    pub temperature: f64,
    pub history: Vec<TrialRecord>,
    pub ranker: Ranker,
}

impl TunerState {
    pub fn rank_update(mut self, a: (&Features, f64), b: (&Features, f64)) -> Self {
        self.ranker.update(a, b);
        self
    }
}

/// Tunes `w` over its full schedule space.
pub fn tune_workload(
    w: &Workload,
    cost_oracle: impl FnMut(&Schedule) -> f64,
    cfg: &TunerConfig,
) -> (Schedule, TunerState) {
    tune_in_space(w, &ScheduleSpace::for_workload(w), cost_oracle, cfg)
}

/// Tunes `w` over `space`, starting from the space's base schedule.
pub fn tune_in_space(
    w: &Workload,
    space: &ScheduleSpace,
    mut cost_oracle: impl FnMut(&Schedule) -> f64,
    cfg: &TunerConfig,
) -> (Schedule, TunerState) {
    let start = space.base();
    let default_cost = cost_oracle(&start);
    let initial_temp = cfg
        .initial_temperature
        .unwrap_or(0.25 * default_cost)
        .max(f64::MIN_POSITIVE);
    let mut st = TunerState {
        best_schedule: start,
        best_cost: default_cost,
        default_cost,
        trials_used: 0,
        temperature: initial_temp,
        history: Vec::new(),
        ranker: Ranker::default(),
    };
    if cfg.trials == 0 {
        return (start, st);
    }

    let mut rng = rng_for(cfg.seed, "tune-workload", w.key());
    let mut current = start;
    let mut current_cost = default_cost;
    let mut measured: HashSet<Schedule> = HashSet::from([start]);
    let mut hist_features: Vec<Features> = Vec::new();

    while st.trials_used < cfg.trials {
        let proposals: Vec<Schedule> = (0..cfg.batch_size)
            .map(|_| space.mutate(&current, &mut rng))
            .collect();
        let mut fresh: Vec<Schedule> = Vec::new();
        for p in &proposals {
            if !measured.contains(p) && !fresh.contains(p) {
                fresh.push(*p);
            }
        }
        let pool = if fresh.is_empty() { proposals } else { fresh };

        let pick = if st.history.len() >= cfg.surrogate_warmup as usize {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, p) in pool.iter().enumerate() {
                let sc = st.ranker.score(&featurize(p, w));
                if sc > best_score {
                    best = i;
                    best_score = sc;
                }
            }
            pool[best]
        } else {
            pool[rng.gen_range(0..pool.len())]
        };

        let cost = cost_oracle(&pick);
        st.trials_used += 1;
        let delta = cost - current_cost;
        let accept = delta <= 0.0 || rng.gen::<f64>() < (-delta / st.temperature).exp();
        if accept {
            current = pick;
            current_cost = cost;
        }
        if cost < st.best_cost {
            st.best_cost = cost;
            st.best_schedule = pick;
        }

        let f = featurize(&pick, w);
        if !st.history.is_empty() {
            let j = rng.gen_range(0..st.history.len());
            st.ranker
                .update((&f, cost), (&hist_features[j], st.history[j].cost_ns));
        }
        st.history.push(TrialRecord {
            schedule: pick,
            cost_ns: cost,
            best_cost_ns: st.best_cost,
            temperature: st.temperature,
        });
        hist_features.push(f);
        measured.insert(pick);
        st.temperature *= cfg.cooling_rate;
    }
    (st.best_schedule, st)
}

/// Cost of a workload compiled on its own, used as the tuning objective.
///
/// An epilogue scheduled for fusion runs inside its producer's kernel, so its
/// cost is the in-register compute only: no launch and no memory traffic.
pub fn standalone_cost(w: &Workload, s: &Schedule, d: &DeviceProfile) -> f64 {
    if w.is_epilogue() && s.fuse_epilogue {
        return d.busy_ns(w.flops(), 0, d.efficiency(s.unroll, s.vector_width));
    }
    lower_workload(w, s, "standalone")
        .iter()
        .map(|k| simulate_kernel(k, d).duration_ns as f64)
        .sum()
}

#[derive(Debug, Clone)]
pub struct ModelTuning {
    pub assignment: ScheduleAssignment,
    pub states: BTreeMap<String, TunerState>,
}

impl ModelTuning {
    /// JSON-lines tuning log, one record per trial, workloads in key order.
    pub fn log_lines(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            workload_key: &'a str,
            trial_index: usize,
            schedule: &'a Schedule,
            cost_ns: f64,
            best_cost_ns: f64,
            temperature: f64,
        }
        let mut out = String::new();
        for (key, st) in &self.states {
            for (i, t) in st.history.iter().enumerate() {
                let line = Line {
                    workload_key: key,
                    trial_index: i,
                    schedule: &t.schedule,
                    cost_ns: t.cost_ns,
                    best_cost_ns: t.best_cost_ns,
                    temperature: t.temperature,
                };
                out.push_str(&serde_json::to_string(&line).expect("log line serializes"));
                out.push('\n');
            }
        }
        out
    }
}

/// Tunes every distinct workload of `g` independently with `cfg.trials`
/// measurements each. Workload seeds derive from `(cfg.seed, workload key)`.
pub fn tune_model(g: &ModelGraph, d: &DeviceProfile, cfg: &TunerConfig) -> Result<ModelTuning> {
    cfg.validate()?;
    let tasks: Vec<(String, Workload)> = workloads(g).into_iter().collect();
    let results: Vec<(String, Schedule, TunerState)> = tasks
        .par_iter()
        .map(|(key, w)| {
            let sub = TunerConfig {
                seed: derive_seed(cfg.seed, "tune-model", key),
                ..cfg.clone()
            };
            let (best, st) = tune_workload(w, |s| standalone_cost(w, s, d), &sub);
            (key.clone(), best, st)
        })
        .collect();
    let mut assignment = ScheduleAssignment::default();
    let mut states = BTreeMap::new();
    for (key, best, st) in results {
        assignment.insert(key.clone(), best);
        states.insert(key, st);
    }
    Ok(ModelTuning { assignment, states })
}
