//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any fails. Built with `harness = false`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use compdef::attack::{edit_counts, fidelity_of_sequences, Label};
use compdef::autotuner::{standalone_cost, tune_in_space, tune_workload, TunerConfig};
use compdef::harness::{run_experiment, ExperimentConfig, SweepResult};
use compdef::ir::{generate_model, load_model, save_model, Attrs, GraphBuilder};
use compdef::perfsim::{DeviceProfile, KernelRecord, Trace};
use compdef::schedule::{lower, workloads, Knob, Schedule, ScheduleAssignment, ScheduleSpace};
use compdef::sidechannel::{export_trace_csv, parse_trace_csv};
use compdef::{Family, ModelGraph, OpKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const CONV: [&str; 3] = ["resnet_mini_s2_0", "densenet_mini_s2_0", "yolo_mini_s2_0"];
const TRANSFORMER: &str = "transformer_mini_s2_0";
const MAX_TRIALS: u32 = 512;

// Pinned thresholds.
const MIN_DECREASE: f64 = 0.25;
const MIN_FAMILIES_DECREASED: usize = 2;
const SWEEP_BUDGET: Duration = Duration::from_secs(300);
const BASELINE_WITH_SHAPES: f64 = 0.85;
const BASELINE_HELD_OUT: f64 = 0.6;
const TRANSFORMER_MAX_FIDELITY: f64 = 0.3;
const TRANSFORMER_MIN_UNKNOWN: f64 = 0.5;
const MAX_LATENCY_RATIO: f64 = 0.85;
const FIDELITY_PAIRS: usize = 100_000;
const ROUND_TRIP_TRACES: usize = 1_000;
const CONSERVATION_GRAPHS: usize = 1_000;
const MONOTONE_RUNS: usize = 200;

type Outcome = Result<String, String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sweep_into(config: &str, out: &Path) -> (SweepResult, Duration) {
    let mut cfg = ExperimentConfig::load(&configs_dir().join(config)).expect("config loads");
    cfg.out_dir = out.to_path_buf();
    let start = Instant::now();
    let r = run_experiment(&cfg).expect("sweep runs");
    (r, start.elapsed())
}

fn fid(r: &SweepResult, model: &str, trials: u32) -> f64 {
    r.row(model, trials).expect("row present").fidelity_mean
}

fn c1_defense(r: &SweepResult, elapsed: Duration) -> Outcome {
    let mut parts = Vec::new();
    let mut decreased = 0;
    let mut all_lower = true;
    for m in CONV {
        let (f0, f1) = (fid(r, m, 0), fid(r, m, MAX_TRIALS));
        let change = (f1 - f0) / f0;
        all_lower &= f1 < f0;
        if -change >= MIN_DECREASE {
            decreased += 1;
        }
        parts.push(format!("{m} {f0:.3}->{f1:.3} ({:+.1}%)", 100.0 * change));
    }
    let msg = format!("{}; {:.1}s", parts.join(", "), elapsed.as_secs_f64());
    if all_lower && decreased >= MIN_FAMILIES_DECREASED && elapsed < SWEEP_BUDGET {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c2_baseline(with: &SweepResult, held_out: &SweepResult) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for m in CONV {
        let (a, b) = (fid(with, m, 0), fid(held_out, m, 0));
        ok &= a >= BASELINE_WITH_SHAPES && b >= BASELINE_HELD_OUT;
        parts.push(format!("{m} with {a:.3} held-out {b:.3}"));
    }
    let msg = parts.join(", ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c3_transformer(runs: &[&SweepResult]) -> Outcome {
    let mut worst_fid: f64 = 0.0;
    let mut worst_unknown: f64 = 1.0;
    for r in runs {
        for row in r.rows.iter().filter(|row| row.model == TRANSFORMER) {
            worst_fid = worst_fid.max(row.fidelity_max);
            worst_unknown = worst_unknown.min(row.unknown_mean);
        }
    }
    let msg = format!("max fidelity {worst_fid:.3}, min UNKNOWN fraction {worst_unknown:.3}");
    if worst_fid <= TRANSFORMER_MAX_FIDELITY && worst_unknown >= TRANSFORMER_MIN_UNKNOWN {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c4_latency(r: &SweepResult) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for m in CONV {
        let a = r.row(m, 0).unwrap().latency_mean_ns;
        let b = r.row(m, MAX_TRIALS).unwrap().latency_mean_ns;
        ok &= b <= MAX_LATENCY_RATIO * a;
        parts.push(format!("{m} {:.2}x", b / a));
    }
    let msg = parts.join(", ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c5_tuner() -> Outcome {
    let d = DeviceProfile::a100_like();
    let g = generate_model(Family::ResnetMini, 2, 0).unwrap();
    let wls: Vec<_> = workloads(&g).into_values().collect();

    let mut exact = 0;
    let mut restricted = 0;
    for w in wls.iter().filter(|w| w.op_kind == OpKind::Conv2d) {
        let full = ScheduleSpace::for_workload(w);
        let space = full
            .restrict(&[Knob::TileM, Knob::TileN, Knob::Unroll])
            .with_values(Knob::TileM, vec![8, 16, 32, 64])
            .with_values(Knob::TileN, vec![8, 16, 32, 64]);
        if space.size() != 64 {
            return Err(format!("restricted space has {} members", space.size()));
        }
        let cost = |s: &Schedule| standalone_cost(w, s, &d);
        let brute = space.iter().map(|s| cost(&s)).fold(f64::INFINITY, f64::min);
        let (best, st) = tune_in_space(w, &space, cost, &TunerConfig::with_trials(256, 11));
        if !space.contains(&best) {
            return Err(format!("{}: best schedule escaped the space", w.key()));
        }
        restricted += 1;
        if st.best_cost == brute && cost(&best) == brute {
            exact += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pool: Vec<_> = Vec::new();
    for f in Family::ALL {
        pool.extend(workloads(&generate_model(f, 1, 0).unwrap()).into_values());
    }
    let mut monotone = 0;
    for run in 0..MONOTONE_RUNS {
        let w = pool.choose(&mut rng).unwrap();
        let cfg = TunerConfig::with_trials(rng.gen_range(1..=64), run as u64);
        let (_, st) = tune_workload(w, |s| standalone_cost(w, s, &d), &cfg);
        let mut best = st.default_cost;
        let ok = st.history.iter().all(|t| {
            let fine = t.best_cost_ns <= best && t.best_cost_ns == best.min(t.cost_ns);
            best = t.best_cost_ns;
            fine
        });
        if ok && st.best_cost == best {
            monotone += 1;
        }
    }
    let msg = format!(
        "global minimum found on {exact}/{restricted} restricted 64-member spaces; \
         best-so-far monotone in {monotone}/{MONOTONE_RUNS} runs"
    );
    if restricted > 0 && exact == restricted && monotone == MONOTONE_RUNS {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Memoized recursive Levenshtein distance where `UNKNOWN` matches nothing.
fn oracle(p: &[Label], a: &[OpKind], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if p.is_empty() {
        return a.len();
    }
    if a.is_empty() {
        return p.len();
    }
    if let Some(&v) = memo.get(&(p.len(), a.len())) {
        return v;
    }
    let cost = usize::from(p[0] != Label::Op(a[0]));
    let v = (oracle(&p[1..], &a[1..], memo) + cost)
        .min(oracle(&p[1..], a, memo) + 1)
        .min(oracle(p, &a[1..], memo) + 1);
    memo.insert((p.len(), a.len()), v);
    v
}

fn c6_fidelity() -> Outcome {
    const ALPHABET: [OpKind; 4] = [OpKind::Conv2d, OpKind::Relu, OpKind::Add, OpKind::BatchNorm];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let label = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.2) {
            Label::Unknown
        } else {
            Label::Op(*ALPHABET.choose(rng).unwrap())
        }
    };
    for i in 0..FIDELITY_PAIRS {
        let p: Vec<Label> = (0..rng.gen_range(0..=8)).map(|_| label(&mut rng)).collect();
        let a: Vec<OpKind> = (0..rng.gen_range(1..=8))
            .map(|_| *ALPHABET.choose(&mut rng).unwrap())
            .collect();
        let want = oracle(&p, &a, &mut HashMap::new());
        let got = fidelity_of_sequences(&p, &a).unwrap();
        let expect = 1.0 - want as f64 / p.len().max(a.len()) as f64;
        if got.edits.distance() != want || got.value != expect {
            return Err(format!(
                "pair {i}: {p:?} vs {a:?}: got {}, oracle {want}",
                got.edits.distance()
            ));
        }
        if !(0.0..=1.0).contains(&got.value) {
            return Err(format!("pair {i}: fidelity {} out of bounds", got.value));
        }
        let same: Vec<Label> = a.iter().map(|&o| Label::Op(o)).collect();
        if fidelity_of_sequences(&same, &a).unwrap().value != 1.0 {
            return Err(format!("pair {i}: identity below 1"));
        }
        let unknown = vec![Label::Unknown; rng.gen_range(0..=8)];
        if fidelity_of_sequences(&unknown, &a).unwrap().value != 0.0 {
            return Err(format!("pair {i}: all-UNKNOWN above 0"));
        }
        let e = edit_counts(&p, &a, |x, y| *x == Label::Op(*y));
        if e.insertions + e.substitutions > p.len() || e.deletions + e.substitutions > a.len() {
            return Err(format!("pair {i}: inconsistent edit script {e:?}"));
        }
    }
    Ok(format!(
        "{FIDELITY_PAIRS} pairs match the oracle; bounds, identity and all-UNKNOWN hold"
    ))
}

fn tree_hash(root: &Path) -> (String, usize) {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut h = Sha256::new();
    for (name, bytes) in &files {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    (hex, files.len())
}

fn c7_determinism(a: &Path, b: &Path) -> Outcome {
    let (ha, na) = tree_hash(a);
    let (hb, nb) = tree_hash(b);
    let msg = format!(
        "{na} files, sha256 {}.. vs {nb} files, sha256 {}..",
        &ha[..16],
        &hb[..16]
    );
    if ha == hb && na == nb {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_trace(rng: &mut ChaCha8Rng) -> Trace {
    const NAME: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_";
    let n = rng.gen_range(0..40);
    let records = (0..n)
        .map(|i| KernelRecord {
            index: i,
            kernel_name: (0..rng.gen_range(1..24))
                .map(|_| *NAME.choose(rng).unwrap() as char)
                .collect(),
            duration_ns: rng.gen(),
            l2_read_bytes: rng.gen(),
            l2_write_bytes: rng.gen(),
            input_bytes: rng.gen(),
            output_bytes: rng.gen(),
        })
        .collect();
    Trace::from_records(records)
}

fn c8_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..ROUND_TRIP_TRACES {
        let t = random_trace(&mut rng);
        let csv = export_trace_csv(&t);
        let back = parse_trace_csv(&csv).map_err(|e| format!("trace {i}: {e}"))?;
        if back != t || export_trace_csv(&back) != csv {
            return Err(format!("trace {i} changed on round trip"));
        }
    }
    let mut graphs = 0;
    for f in Family::ALL {
        for scale in f.scale_range() {
            for seed in 0..3 {
                let g = generate_model(f, scale, seed).unwrap();
                let bytes = save_model(&g);
                let back = load_model(&bytes).map_err(|e| format!("{}: {e}", g.name()))?;
                if back != g || save_model(&back) != bytes {
                    return Err(format!("{} changed on round trip", g.name()));
                }
                graphs += 1;
            }
        }
    }
    Ok(format!(
        "{ROUND_TRIP_TRACES} traces and {graphs} generated graphs round-trip"
    ))
}

/// A random NHWC graph mixing conv/dense producers, epilogue chains and
/// branches that block fusion.
fn random_graph(rng: &mut ChaCha8Rng, i: usize) -> ModelGraph {
    let mut b = GraphBuilder::new(format!("rand{i}"));
    let hw = *[4u64, 8, 16].choose(rng).unwrap();
    let mut x = b.input("x", [1, hw, hw, rng.gen_range(1..=8)]);
    let mut live: Vec<String> = vec![x.clone()];
    for _ in 0..rng.gen_range(2..16) {
        let pick = rng.gen_range(0..9);
        let next = match pick {
            0 | 1 => b.op(
                OpKind::Conv2d,
                Attrs::conv(*[1, 3].choose(rng).unwrap(), 1, rng.gen_range(1..=24)),
                &[&x],
            ),
            2 => b.op(OpKind::BatchNorm, Attrs::default(), &[&x]),
            3 | 4 => b.op(OpKind::Relu, Attrs::default(), &[&x]),
            5 => b.op(OpKind::Add, Attrs::default(), &[&x]),
            6 => {
                let shape = b.shape(&x).clone();
                match live.iter().rev().find(|o| **o != x && *b.shape(o) == shape) {
                    Some(o) => b.op(OpKind::Add, Attrs::default(), &[&x, &o.clone()]),
                    None => b.op(OpKind::Relu, Attrs::default(), &[&x]),
                }
            }
            // a second consumer of the current tail blocks its fusion
            7 => {
                let side = b.op(OpKind::Relu, Attrs::default(), &[&x]).unwrap();
                live.push(side);
                b.op(OpKind::BatchNorm, Attrs::default(), &[&x])
            }
            _ => b.op(OpKind::Dense, Attrs::dense(rng.gen_range(1..=32)), &[&x]),
        };
        x = next.unwrap();
        live.push(x.clone());
    }
    b.finish().unwrap()
}

fn random_assignment(g: &ModelGraph, rng: &mut ChaCha8Rng) -> ScheduleAssignment {
    let mut a = ScheduleAssignment::default();
    for (key, w) in workloads(g) {
        let space = ScheduleSpace::for_workload(&w);
        a.insert(key, space.member(rng.gen_range(0..space.size())));
    }
    a
}

fn c9_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut fused_ops = 0usize;
    for i in 0..CONSERVATION_GRAPHS {
        let g = random_graph(&mut rng, i);
        let fused = random_assignment(&g, &mut rng);
        let mut plain = fused.clone();
        for s in plain.0.values_mut() {
            s.fuse_epilogue = false;
        }
        let cf = lower(&g, &fused).unwrap();
        let cp = lower(&g, &plain).unwrap();
        let intermediate: u64 = cf
            .kernels
            .iter()
            .flat_map(|k| k.op_ids[..k.op_ids.len() - 1].iter())
            .map(|id| g.shape_of(id).unwrap().bytes())
            .sum();
        fused_ops += cf.kernels.iter().map(|k| k.op_ids.len() - 1).sum::<usize>();
        if cf.total_flops() != cp.total_flops() {
            return Err(format!(
                "graph {i}: flops {} vs {}",
                cf.total_flops(),
                cp.total_flops()
            ));
        }
        if cp.total_traffic() != cf.total_traffic() + 2 * intermediate {
            return Err(format!(
                "graph {i}: traffic {} - {} != 2 x {intermediate}",
                cp.total_traffic(),
                cf.total_traffic()
            ));
        }
    }
    Ok(format!(
        "{CONSERVATION_GRAPHS} graphs, {fused_ops} absorbed epilogues"
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let (with, elapsed) = sweep_into("sweep.json", &tmp.path().join("a"));
    let (held_out, _) = sweep_into("sweep-heldout.json", &tmp.path().join("h"));
    let _ = sweep_into("sweep.json", &tmp.path().join("b"));

    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "defense effect", c1_defense(&with, elapsed)),
        (2, "baseline efficacy", c2_baseline(&with, &held_out)),
        (3, "transformer effect", c3_transformer(&[&with, &held_out])),
        (4, "latency tradeoff", c4_latency(&with)),
        (5, "tuner correctness", c5_tuner()),
        (6, "fidelity metric", c6_fidelity()),
        (
            7,
            "determinism",
            c7_determinism(&tmp.path().join("a"), &tmp.path().join("b")),
        ),
        (8, "round trips", c8_round_trips()),
        (9, "fusion conservation", c9_conservation()),
    ];
    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(msg) => println!("criterion {n} ({name}): PASS  {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL  {msg}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
