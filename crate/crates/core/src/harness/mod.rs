//! Experiment orchestration: the trials sweep over victim models, its
//! per-cell artifacts, aggregates across seeds and the CSV/SVG report.
//!
//! A cell is one `(model, trials, seed)` triple. The seed drives both the
//! tuner (through per-workload sub-seeds) and the inference noise stream, so
//! a cell can be replayed stage by stage from files with identical results.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{fidelity_svg, latency_svg, report, sweep_csv, CSV_COLUMNS};

use crate::attack::{
    build_signature_db, fidelity, predict_with_weight, AttackPrediction, DbOptions, EditCounts,
    FidelityScore, Label, SignatureDB, DEFAULT_TAU_QUANTILE, DEFAULT_TRANSITION_WEIGHT,
};
use crate::autotuner::{tune_model, ModelTuning, TunerConfig};
use crate::error::{Error, Result};
use crate::ir::{generate_model, load_model, save_model, Family, ModelGraph};
use crate::perfsim::{run_inference, total_latency, DeviceProfile, Trace};
use crate::schedule::{lower, workloads, CompiledModel};
use crate::sidechannel::{attacker_view, export_trace_csv};

/// `0, 1, 2, 4, ..., 512`.
pub fn default_trial_grid() -> Vec<u32> {
    std::iter::once(0).chain((0..10).map(|i| 1 << i)).collect()
}

/// A victim or corpus model: either a builtin generator call or an MGF file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Generated {
        family: Family,
        scale: u32,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

impl ModelSpec {
    pub fn load(&self) -> Result<ModelGraph> {
        match self {
            ModelSpec::Generated {
                family,
                scale,
                seed,
            } => generate_model(*family, *scale, *seed),
            ModelSpec::File { path } => {
                let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                load_model(&bytes)
            }
        }
    }
}

/// Which graphs the attacker's signature database is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub families: Vec<Family>,
    /// `None` uses each family's full scale range.
    pub scales: Option<Vec<u32>>,
    pub seeds: Vec<u64>,
    /// Extra MGF files added after the generated graphs.
    pub paths: Vec<PathBuf>,
    /// One noisy profiling run per corpus graph per seed.
    pub noise_seeds: Vec<u64>,
    pub tau_quantile: f64,
    /// When set, corpus graphs sharing more than this fraction of any
    /// victim's distinct workloads are dropped.
    pub max_victim_overlap: Option<f64>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            families: Family::CONV.to_vec(),
            scales: None,
            seeds: vec![0, 1, 2, 3],
            paths: Vec::new(),
            noise_seeds: vec![0, 1, 2],
            tau_quantile: DEFAULT_TAU_QUANTILE,
            max_victim_overlap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub models: Vec<ModelSpec>,
    pub trial_grid: Vec<u32>,
    pub seeds: Vec<u64>,
    pub noise_sigma: f64,
    /// Device profile JSON; `None` is the builtin a100-like profile.
    pub device: Option<PathBuf>,
    pub corpus: CorpusSpec,
    /// Search settings. `trials` and `seed` are replaced per cell.
    pub tuner: TunerConfig,
    pub transition_weight: f64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            models: Family::ALL
                .iter()
                .map(|&family| ModelSpec::Generated {
                    family,
                    scale: 2,
                    seed: 0,
                })
                .collect(),
            trial_grid: default_trial_grid(),
            seeds: (0..5).collect(),
            noise_sigma: 0.05,
            device: None,
            corpus: CorpusSpec::default(),
            tuner: TunerConfig::default(),
            transition_weight: DEFAULT_TRANSITION_WEIGHT,
            out_dir: PathBuf::from("sweep-out"),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Parses and validates a config. Relative paths inside it are taken
    /// relative to `base`.
    pub fn from_json(bytes: &[u8], base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))?;
        for m in &mut cfg.models {
            if let ModelSpec::File { path } = m {
                rebase(base, path);
            }
        }
        if let Some(d) = &mut cfg.device {
            rebase(base, d);
        }
        for p in &mut cfg.corpus.paths {
            rebase(base, p);
        }
        rebase(base, &mut cfg.out_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_json(&bytes, base)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.models.is_empty() {
            return bad("models must not be empty");
        }
        if self.trial_grid.first() != Some(&0) {
            return bad("trial_grid must start at 0");
        }
        if self.trial_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("trial_grid must be strictly ascending");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be a finite non-negative number");
        }
        if !(self.transition_weight.is_finite() && self.transition_weight >= 0.0) {
            return bad("transition_weight must be a finite non-negative number");
        }
        let c = &self.corpus;
        if !(c.tau_quantile > 0.0 && c.tau_quantile <= 1.0) {
            return bad("corpus.tau_quantile must be in (0, 1]");
        }
        if c.noise_seeds.is_empty() {
            return bad("corpus.noise_seeds must not be empty");
        }
        if let Some(f) = c.max_victim_overlap {
            if !(0.0..=1.0).contains(&f) {
                return bad("corpus.max_victim_overlap must be in [0, 1]");
            }
        }
        self.tuner.validate()
    }

    pub fn device_profile(&self) -> Result<DeviceProfile> {
        match &self.device {
            Some(p) => DeviceProfile::load(p),
            None => Ok(DeviceProfile::a100_like()),
        }
    }

    pub fn tuner_for(&self, trials: u32, seed: u64) -> TunerConfig {
        TunerConfig {
            trials,
            seed,
            ..self.tuner.clone()
        }
    }
}

/// Loads every victim; names must be distinct because they key output paths.
pub fn load_victims(cfg: &ExperimentConfig) -> Result<Vec<ModelGraph>> {
    let graphs: Vec<ModelGraph> = cfg
        .models
        .iter()
        .map(ModelSpec::load)
        .collect::<Result<_>>()?;
    let mut seen = BTreeSet::new();
    for g in &graphs {
        if !seen.insert(g.name()) {
            return Err(Error::Config(format!(
                "duplicate model name `{}`",
                g.name()
            )));
        }
    }
    Ok(graphs)
}

/// Fraction of `victim`'s distinct workloads that also occur in `corpus`.
pub fn victim_overlap(victim: &ModelGraph, corpus: &[ModelGraph]) -> f64 {
    let keys: BTreeSet<String> = workloads(victim).into_keys().collect();
    if keys.is_empty() {
        return 0.0;
    }
    let seen: BTreeSet<String> = corpus
        .iter()
        .flat_map(|g| workloads(g).into_keys())
        .collect();
    keys.intersection(&seen).count() as f64 / keys.len() as f64
}

/// Corpus graphs named by `spec`, after the optional victim-overlap filter.
pub fn corpus_graphs(spec: &CorpusSpec, victims: &[ModelGraph]) -> Result<Vec<ModelGraph>> {
    let mut graphs = Vec::new();
    for &family in &spec.families {
        let scales: Vec<u32> = match &spec.scales {
            Some(s) => s
                .iter()
                .copied()
                .filter(|s| family.scale_range().contains(s))
                .collect(),
            None => family.scale_range().collect(),
        };
        for scale in scales {
            for &seed in &spec.seeds {
                graphs.push(generate_model(family, scale, seed)?);
            }
        }
    }
    for p in &spec.paths {
        graphs.push(ModelSpec::File { path: p.clone() }.load()?);
    }
    if let Some(limit) = spec.max_victim_overlap {
        graphs.retain(|g| {
            victims
                .iter()
                .all(|v| victim_overlap(v, std::slice::from_ref(g)) <= limit)
        });
    }
    if graphs.is_empty() {
        return Err(Error::Config("signature corpus is empty".into()));
    }
    Ok(graphs)
}

pub fn build_corpus_db(
    cfg: &ExperimentConfig,
    d: &DeviceProfile,
    victims: &[ModelGraph],
) -> Result<(SignatureDB, Vec<ModelGraph>)> {
    let corpus = corpus_graphs(&cfg.corpus, victims)?;
    let opts = DbOptions {
        noise_sigma: cfg.noise_sigma,
        seeds: cfg.corpus.noise_seeds.clone(),
        tau_quantile: cfg.corpus.tau_quantile,
    };
    let db = build_signature_db(&corpus, d, &opts)?;
    Ok((db, corpus))
}

/// What the `attack` stage writes: the prediction, plus a score when the true
/// model is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub sequence: Vec<Label>,
    pub confidences: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edits: Option<EditCounts>,
}

impl PredictionFile {
    pub fn new(p: &AttackPrediction, score: Option<FidelityScore>) -> Self {
        PredictionFile {
            sequence: p.sequence.clone(),
            confidences: p.confidences.clone(),
            fidelity: score.map(|s| s.value),
            edits: score.map(|s| s.edits),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("prediction serializes");
        v.push(b'\n');
        v
    }
}

/// Every intermediate product of one sweep cell.
#[derive(Debug, Clone)]
pub struct CellArtifacts {
    pub tuning: ModelTuning,
    pub compiled: CompiledModel,
    pub trace: Trace,
    pub prediction: AttackPrediction,
    pub score: FidelityScore,
}

/// tune -> lower -> profile -> attack -> score, in process.
pub fn run_cell(
    g: &ModelGraph,
    trials: u32,
    seed: u64,
    cfg: &ExperimentConfig,
    d: &DeviceProfile,
    db: &SignatureDB,
) -> Result<CellArtifacts> {
    let tuning = tune_model(g, d, &cfg.tuner_for(trials, seed))?;
    let compiled = lower(g, &tuning.assignment)?;
    let trace = run_inference(&compiled, d, cfg.noise_sigma, seed);
    let prediction = predict_with_weight(&attacker_view(&trace), db, cfg.transition_weight);
    let score = fidelity(&prediction, g)?;
    Ok(CellArtifacts {
        tuning,
        compiled,
        trace,
        prediction,
        score,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: String,
    pub trials: u32,
    pub seed: u64,
    pub kernels: usize,
    pub fidelity: f64,
    pub unknown_fraction: f64,
    pub latency_ns: u64,
}

/// Aggregates of one `(model, trials)` point over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub trials: u32,
    pub seeds: usize,
    pub fidelity_mean: f64,
    pub fidelity_min: f64,
    pub fidelity_max: f64,
    pub unknown_mean: f64,
    pub latency_mean_ns: f64,
    /// Relative to the trials = 0 row; `None` when that baseline is 0.
    pub fidelity_change: Option<f64>,
    pub latency_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub device: String,
    pub noise_sigma: f64,
    pub transition_weight: f64,
    pub unknown_threshold: f64,
    pub corpus: Vec<String>,
    /// Per victim: fraction of its distinct workloads present in the corpus.
    pub victim_overlap: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub metadata: SweepMetadata,
    pub rows: Vec<SweepRow>,
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn row(&self, model: &str, trials: u32) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.trials == trials)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("sweep result serializes");
        v.push(b'\n');
        v
    }
}

/// `(value - baseline) / baseline`, undefined for a zero baseline.
pub fn relative_change(value: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (value - baseline) / baseline)
}

/// One-decimal percentage, e.g. `-39.6%`.
pub fn format_percent(change: f64) -> String {
    format!("{:.1}%", change * 100.0)
}

/// Groups cells into rows, in the order models and trial counts first appear.
pub fn aggregate(cells: &[CellResult]) -> Vec<SweepRow> {
    let mut order: Vec<(String, u32)> = Vec::new();
    for c in cells {
        let key = (c.model.clone(), c.trials);
        if !order.contains(&key) {
            order.push(key);
        }
    }
    let mut rows: Vec<SweepRow> = order
        .into_iter()
        .map(|(model, trials)| {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.model == model && c.trials == trials)
                .collect();
            let n = group.len() as f64;
            let fid: Vec<f64> = group.iter().map(|c| c.fidelity).collect();
            SweepRow {
                seeds: group.len(),
                fidelity_mean: fid.iter().sum::<f64>() / n,
                fidelity_min: fid.iter().copied().fold(f64::INFINITY, f64::min),
                fidelity_max: fid.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                unknown_mean: group.iter().map(|c| c.unknown_fraction).sum::<f64>() / n,
                latency_mean_ns: group.iter().map(|c| c.latency_ns as f64).sum::<f64>() / n,
                fidelity_change: None,
                latency_change: None,
                model,
                trials,
            }
        })
        .collect();
    let baselines: BTreeMap<String, (f64, f64)> = rows
        .iter()
        .filter(|r| r.trials == 0)
        .map(|r| (r.model.clone(), (r.fidelity_mean, r.latency_mean_ns)))
        .collect();
    for r in &mut rows {
        if let Some(&(f0, l0)) = baselines.get(&r.model) {
            r.fidelity_change = relative_change(r.fidelity_mean, f0);
            r.latency_change = relative_change(r.latency_mean_ns, l0);
        }
    }
    rows
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Directory holding one cell's artifacts, relative to the output root.
pub fn cell_dir(model: &str, trials: u32, seed: u64) -> PathBuf {
    PathBuf::from("cells")
        .join(model)
        .join(format!("t{trials:04}_s{seed}"))
}

/// Runs every cell of `cfg` and writes, under `cfg.out_dir`:
/// `models/<model>.json`, `db.json`, `sweep.json` and, per cell,
/// `cells/<model>/t<trials>_s<seed>/{schedule.json, trace.csv, prediction.json}`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let d = cfg.device_profile()?;
    let victims = load_victims(cfg)?;
    let (db, corpus) = build_corpus_db(cfg, &d, &victims)?;
    let out = &cfg.out_dir;

    for g in &victims {
        write_file(
            &out.join("models").join(format!("{}.json", g.name())),
            &save_model(g),
        )?;
    }
    write_file(&out.join("db.json"), &db.to_json())?;

    let jobs: Vec<(&ModelGraph, u32, u64)> = victims
        .iter()
        .flat_map(|g| {
            cfg.trial_grid
                .iter()
                .flat_map(move |&t| cfg.seeds.iter().map(move |&s| (g, t, s)))
        })
        .collect();
    let outcomes: Vec<Result<CellResult>> = jobs
        .par_iter()
        .map(|&(g, trials, seed)| {
            let wrap = |e: Error| Error::Cell {
                model: g.name().to_string(),
                trials,
                seed,
                source: Box::new(e),
            };
            let a = run_cell(g, trials, seed, cfg, &d, &db).map_err(wrap)?;
            let dir = out.join(cell_dir(g.name(), trials, seed));
            write_file(&dir.join("schedule.json"), &a.tuning.assignment.to_json()).map_err(wrap)?;
            write_file(&dir.join("trace.csv"), &export_trace_csv(&a.trace)).map_err(wrap)?;
            let pred = PredictionFile::new(&a.prediction, Some(a.score));
            write_file(&dir.join("prediction.json"), &pred.to_json()).map_err(wrap)?;
            Ok(CellResult {
                model: g.name().to_string(),
                trials,
                seed,
                kernels: a.trace.records.len(),
                fidelity: a.score.value,
                unknown_fraction: a.prediction.unknown_fraction(),
                latency_ns: total_latency(&a.trace),
            })
        })
        .collect();
    let cells: Vec<CellResult> = outcomes.into_iter().collect::<Result<_>>()?;

    let result = SweepResult {
        metadata: SweepMetadata {
            device: d.name.clone(),
            noise_sigma: cfg.noise_sigma,
            transition_weight: cfg.transition_weight,
            unknown_threshold: db.unknown_threshold,
            corpus: corpus.iter().map(|g| g.name().to_string()).collect(),
            victim_overlap: victims
                .iter()
                .map(|v| (v.name().to_string(), victim_overlap(v, &corpus)))
                .collect(),
        },
        rows: aggregate(&cells),
        cells,
    };
    write_file(&out.join("sweep.json"), &result.to_json())?;
    Ok(result)
}

/// [`run_sweep`] followed by [`report`] into the same directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let r = run_sweep(cfg)?;
    report(&r, &cfg.out_dir)?;
    Ok(r)
}
