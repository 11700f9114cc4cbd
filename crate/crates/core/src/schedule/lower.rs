use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::space::{default_schedule, Schedule};
use super::workload::{workloads, Workload};
use crate::error::{Error, Result};
use crate::ir::ModelGraph;
use crate::seed::short_hash;

/// Workload key -> schedule. Serialized as a JSON object in key order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScheduleAssignment(pub BTreeMap<String, Schedule>);

impl ScheduleAssignment {
    /// Library defaults for every workload of `g`.
    pub fn defaults(g: &ModelGraph) -> Self {
        ScheduleAssignment(
            workloads(g)
                .into_iter()
                .map(|(k, w)| (k, default_schedule(&w)))
                .collect(),
        )
    }

    pub fn get(&self, key: &str) -> Option<&Schedule> {
        self.0.get(key)
    }

    pub fn insert(&mut self, key: String, s: Schedule) {
        self.0.insert(key, s);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("assignment serializes");
        v.push(b'\n');
        v
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelRole {
    Main,
    ReducePartials,
}

/// One read stream: `bytes` of data fetched `redundancy` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperandRead {
    pub bytes: u64,
    pub redundancy: u64,
}

impl OperandRead {
    pub fn once(bytes: u64) -> Self {
        OperandRead {
            bytes,
            redundancy: 1,
        }
    }
}

/// What a kernel computes and moves, independent of the device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Work {
    pub flops: u64,
    pub reads: Vec<OperandRead>,
    pub write_bytes: u64,
    pub input_bytes: u64,
    pub output_bytes: u64,
}

impl Work {
    pub fn ideal_read_bytes(&self) -> u64 {
        self.reads.iter().map(|r| r.bytes).sum()
    }

    pub fn actual_read_bytes(&self) -> u64 {
        self.reads.iter().map(|r| r.bytes * r.redundancy).sum()
    }

    /// Non-empty tensors touched: read operands plus the output.
    pub fn streams(&self) -> u64 {
        let reads = self.reads.iter().filter(|r| r.bytes > 0).count() as u64;
        reads + u64::from(self.write_bytes > 0)
    }

    /// Bytes that must stay resident for the reuse implied by tiling to hold.
    pub fn footprint(&self) -> u64 {
        self.ideal_read_bytes() + self.write_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Kernel {
    pub name: String,
    pub op_ids: Vec<String>,
    pub role: KernelRole,
    pub work: Work,
    pub unroll: u32,
    pub vector_width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledModel {
    pub graph_name: String,
    pub kernels: Vec<Kernel>,
    pub assignment: ScheduleAssignment,
}

impl CompiledModel {
    pub fn total_flops(&self) -> u64 {
        self.kernels.iter().map(|k| k.work.flops).sum()
    }

    /// Noise-free summed reads + writes, before any cache-capacity penalty.
    pub fn total_traffic(&self) -> u64 {
        self.kernels
            .iter()
            .map(|k| k.work.actual_read_bytes() + k.work.write_bytes)
            .sum()
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b.max(1))
}

/// Main-kernel work of a workload under `s`, with operand reads in the order
/// of [`Workload::read_operands`].
fn main_work(w: &Workload, s: &Schedule) -> Work {
    let operands = w.read_operands();
    let out = w.output_bytes();
    let split = if w.is_reduction() {
        s.split_k.max(1) as u64
    } else {
        1
    };
    let reads = match w.gemm() {
        Some(g) => {
            let red_a = ceil_div(g.n.next_power_of_two(), s.tile_n as u64).max(1);
            let red_b = ceil_div(g.m.next_power_of_two(), s.tile_m as u64).max(1);
            vec![
                OperandRead {
                    bytes: g.a_bytes,
                    redundancy: red_a,
                },
                OperandRead {
                    bytes: g.b_bytes,
                    redundancy: red_b,
                },
            ]
        }
        None => operands.iter().map(|&b| OperandRead::once(b)).collect(),
    };
    Work {
        flops: w.flops(),
        reads,
        write_bytes: out * split,
        input_bytes: w.activation_input_bytes(),
        output_bytes: out * split,
    }
}

fn reduce_work(w: &Workload, split: u64) -> Work {
    let out = w.output_bytes();
    Work {
        flops: w.output.elements() * (split - 1),
        reads: vec![OperandRead::once(out * split)],
        write_bytes: out,
        input_bytes: out * split,
        output_bytes: out,
    }
}

fn mangle(parts: &[(&Workload, &Schedule)], role: KernelRole) -> String {
    let mut text: Vec<String> = parts
        .iter()
        .map(|(w, s)| format!("{}|{}", w.key(), s))
        .collect();
    text.push(format!("{role:?}"));
    let refs: Vec<&str> = text.iter().map(String::as_str).collect();
    format!("k_{}", short_hash(&refs))
}

/// Kernels a workload lowers to when compiled on its own: the main kernel,
/// plus a partial-sum reduction when split-K is active.
pub fn lower_workload(w: &Workload, s: &Schedule, op_id: &str) -> Vec<Kernel> {
    let mut out = vec![Kernel {
        name: mangle(&[(w, s)], KernelRole::Main),
        op_ids: vec![op_id.to_string()],
        role: KernelRole::Main,
        work: main_work(w, s),
        unroll: s.unroll,
        vector_width: s.vector_width,
    }];
    if w.is_reduction() && s.split_k > 1 {
        out.push(Kernel {
            name: mangle(&[(w, s)], KernelRole::ReducePartials),
            op_ids: vec![op_id.to_string()],
            role: KernelRole::ReducePartials,
            work: reduce_work(w, s.split_k as u64),
            unroll: s.unroll,
            vector_width: s.vector_width,
        });
    }
    out
}

/// Lowers `g` into a kernel sequence under `schedules`.
///
/// Nodes are visited in topological order. An elementwise epilogue whose
/// only variable input is the tail of the kernel being built, and which is
/// that tail's sole consumer, is absorbed when its own schedule sets
/// `fuse_epilogue`. Absorption drops the intermediate write and read.
pub fn lower(g: &ModelGraph, schedules: &ScheduleAssignment) -> Result<CompiledModel> {
    let nodes = g.nodes();
    let wls: Vec<Workload> = nodes.iter().map(|n| Workload::of(g, n)).collect();
    let scheds: Vec<Schedule> = wls
        .iter()
        .map(|w| {
            schedules
                .get(w.key())
                .copied()
                .ok_or_else(|| Error::MissingSchedule(w.key().to_string()))
        })
        .collect::<Result<_>>()?;
    let consumers = g.consumers();
    let mut absorbed = vec![false; nodes.len()];
    let mut kernels = Vec::new();

    for i in 0..nodes.len() {
        if absorbed[i] {
            continue;
        }
        let mut group = lower_workload(&wls[i], &scheds[i], &nodes[i].id);
        let mut members = vec![i];
        let mut tail = i;
        loop {
            let next = match consumers.get(nodes[tail].id.as_str()) {
                Some(c) if c.len() == 1 => c[0],
                _ => break,
            };
            let fusable = wls[next].is_epilogue()
                && scheds[next].fuse_epilogue
                && nodes[next].inputs.len() == 1
                && nodes[next].inputs[0] == nodes[tail].id;
            if !fusable {
                break;
            }
            let k = group.last_mut().expect("at least one kernel");
            let ew = main_work(&wls[next], &scheds[next]);
            k.op_ids.push(nodes[next].id.clone());
            k.work.flops += ew.flops;
            // first operand is the intermediate; the rest are parameters
            k.work.reads.extend(ew.reads.into_iter().skip(1));
            k.work.write_bytes = ew.write_bytes;
            k.work.output_bytes = ew.output_bytes;
            absorbed[next] = true;
            members.push(next);
            tail = next;
        }
        if members.len() > 1 {
            let parts: Vec<(&Workload, &Schedule)> =
                members.iter().map(|&m| (&wls[m], &scheds[m])).collect();
            let k = group.last_mut().expect("at least one kernel");
            k.name = mangle(&parts, k.role);
        }
        kernels.extend(group);
    }

    Ok(CompiledModel {
        graph_name: g.name().to_string(),
        kernels,
        assignment: schedules.clone(),
    })
}
