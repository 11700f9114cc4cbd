//! Analytical device model: turns lowered kernels into the per-kernel metrics
//! a GPU profiler would report.
//!
//! Latency follows a roofline, `launch + streams * stream_latency +
//! max(compute, memory) * efficiency`, where `streams` counts the non-empty
//! operand and output tensors a kernel touches and efficiency rewards
//! unroll/vector settings near the device's sweet spot. L2 reads are the kernel's operand bytes times their tiling
//! redundancy; a working set larger than L2 doubles every redundant stream.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{CompiledModel, Kernel, UNROLL_VALUES, VECTOR_VALUES};
use crate::seed::rng_for;

/// Lowest efficiency multiplier, reached exactly at the sweet spot.
pub const MIN_EFFICIENCY: f64 = 0.55;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub name: String,
    /// flop/s
    pub peak_flops: f64,
    /// bytes/s
    pub mem_bandwidth: f64,
    pub launch_overhead_ns: u64,
    /// Exposed memory latency paid once per tensor stream a kernel touches.
    #[serde(default)]
    pub stream_latency_ns: u64,
    pub l2_capacity: u64,
    pub sweet_unroll: u32,
    pub sweet_vector: u32,
}

impl DeviceProfile {
    /// Ampere-class datacenter part: fp32 peak, HBM bandwidth, 40 MiB L2.
    pub fn a100_like() -> Self {
        DeviceProfile {
            name: "a100-like".into(),
            peak_flops: 19.5e12,
            mem_bandwidth: 1.555e12,
            launch_overhead_ns: 1000,
            stream_latency_ns: 1000,
            l2_capacity: 40 << 20,
            sweet_unroll: 4,
            sweet_vector: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.peak_flops > 0.0
            && self.mem_bandwidth > 0.0
            && self.launch_overhead_ns > 0
            && self.l2_capacity > 0
            && UNROLL_VALUES.contains(&self.sweet_unroll)
            && VECTOR_VALUES.contains(&self.sweet_vector);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "device profile `{}` is not valid",
                self.name
            )))
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let d: DeviceProfile = serde_json::from_slice(bytes)?;
        d.validate()?;
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    /// Multiplier in `[MIN_EFFICIENCY, 1]`; 1 for `unroll = vector = 1` with the
    /// shipped sweet spots, decreasing as both knobs approach the sweet spot in log2 distance.
    pub fn efficiency(&self, unroll: u32, vector_width: u32) -> f64 {
        let closeness = |v: u32, sweet: u32, values: &[u32]| {
            let lv = (v.max(1) as f64).log2();
            let ls = (sweet as f64).log2();
            let span = values
                .iter()
                .map(|&x| ((x as f64).log2() - ls).abs())
                .fold(0.0, f64::max);
            if span == 0.0 {
                1.0
            } else {
                (1.0 - (lv - ls).abs() / span).clamp(0.0, 1.0)
            }
        };
        let c = 0.5
            * (closeness(unroll, self.sweet_unroll, &UNROLL_VALUES)
                + closeness(vector_width, self.sweet_vector, &VECTOR_VALUES));
        1.0 - (1.0 - MIN_EFFICIENCY) * c
    }

    /// Unrounded latency of a work item, in nanoseconds, excluding launch overhead.
    pub fn busy_ns(&self, flops: u64, bytes: u64, efficiency: f64) -> f64 {
        let compute = flops as f64 / self.peak_flops * 1e9;
        let memory = bytes as f64 / self.mem_bandwidth * 1e9;
        compute.max(memory) * efficiency
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub index: u64,
    pub kernel_name: String,
    pub duration_ns: u64,
    pub l2_read_bytes: u64,
    pub l2_write_bytes: u64,
    pub input_bytes: u64,
    pub output_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub model: String,
    pub device: String,
    pub noise_sigma: f64,
    pub seed: u64,
    pub records: Vec<KernelRecord>,
}

impl Trace {
    /// A trace with metadata left blank, as recovered from a CSV export.
    pub fn from_records(records: Vec<KernelRecord>) -> Self {
        Trace {
            model: String::new(),
            device: String::new(),
            noise_sigma: 0.0,
            seed: 0,
            records,
        }
    }
}

/// L2 read bytes of `k` on `d`, including the capacity penalty.
pub fn l2_reads(k: &Kernel, d: &DeviceProfile) -> u64 {
    let spill = k.work.footprint() > d.l2_capacity;
    k.work
        .reads
        .iter()
        .map(|r| {
            let red = if spill && r.redundancy > 1 {
                2 * r.redundancy
            } else {
                r.redundancy
            };
            r.bytes * red
        })
        .sum()
}

/// Noise-free metrics of one kernel. `index` is left at 0.
pub fn simulate_kernel(k: &Kernel, d: &DeviceProfile) -> KernelRecord {
    let reads = l2_reads(k, d);
    let writes = k.work.write_bytes;
    let eff = d.efficiency(k.unroll, k.vector_width);
    let busy = d.busy_ns(k.work.flops, reads + writes, eff);
    let streams = k.work.streams();
    KernelRecord {
        index: 0,
        kernel_name: k.name.clone(),
        duration_ns: d.launch_overhead_ns + streams * d.stream_latency_ns + busy.floor() as u64,
        l2_read_bytes: reads,
        l2_write_bytes: writes,
        input_bytes: k.work.input_bytes,
        output_bytes: k.work.output_bytes,
    }
}

#[derive(Debug, Clone, Copy)]
enum Metric {
    Duration = 0,
    Reads = 1,
    Writes = 2,
    Input = 3,
    Output = 4,
}

fn lognormal_factor(seed: u64, index: usize, metric: Metric, sigma: f64) -> f64 {
    let mut rng = rng_for(
        seed,
        "inference-noise",
        &format!("{index}:{}", metric as u8),
    );
    let z: f64 = rng.sample(StandardNormal);
    (sigma * z).exp()
}

/// Simulates one inference of `c` on `d`, perturbing every metric by an
/// independent lognormal factor `exp(sigma * z)`. The factor for a metric is
/// keyed by `(seed, kernel index, metric)` so traces are reproducible in any
/// evaluation order. Durations never drop below the launch overhead.
pub fn run_inference(c: &CompiledModel, d: &DeviceProfile, noise_sigma: f64, seed: u64) -> Trace {
    let records = c
        .kernels
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let mut r = simulate_kernel(k, d);
            r.index = i as u64;
            if noise_sigma > 0.0 {
                let scale = |v: u64, m: Metric| {
                    (v as f64 * lognormal_factor(seed, i, m, noise_sigma)).round() as u64
                };
                let dur =
                    r.duration_ns as f64 * lognormal_factor(seed, i, Metric::Duration, noise_sigma);
                r.duration_ns = (dur.floor() as u64).max(d.launch_overhead_ns);
                r.l2_read_bytes = scale(r.l2_read_bytes, Metric::Reads);
                r.l2_write_bytes = scale(r.l2_write_bytes, Metric::Writes);
                r.input_bytes = scale(r.input_bytes, Metric::Input);
                r.output_bytes = scale(r.output_bytes, Metric::Output);
            }
            r
        })
        .collect();
    Trace {
        model: c.graph_name.clone(),
        device: d.name.clone(),
        noise_sigma,
        seed,
        records,
    }
}

pub fn total_latency(t: &Trace) -> u64 {
    t.records.iter().map(|r| r.duration_ns).sum()
}
