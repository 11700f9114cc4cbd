use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::workload::Workload;

/// Largest tile factor offered on any axis.
pub const MAX_TILE: u32 = 64;
/// Tile used by the library-default schedule when the extent allows it.
pub const DEFAULT_TILE: u32 = 16;

pub const UNROLL_VALUES: [u32; 4] = [1, 2, 4, 8];
pub const VECTOR_VALUES: [u32; 3] = [1, 2, 4];
pub const SPLIT_K_VALUES: [u32; 3] = [1, 2, 4];

/// One concrete knob assignment for a workload. Tile fields are 1 for
/// workloads without a reduction loop nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub tile_m: u32,
    pub tile_n: u32,
    pub tile_k: u32,
    pub unroll: u32,
    pub vector_width: u32,
    pub split_k: u32,
    pub fuse_epilogue: bool,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t{}x{}x{}_u{}_v{}_s{}{}",
            self.tile_m,
            self.tile_n,
            self.tile_k,
            self.unroll,
            self.vector_width,
            self.split_k,
            if self.fuse_epilogue { "_f" } else { "" }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    TileM,
    TileN,
    TileK,
    Unroll,
    VectorWidth,
    SplitK,
    FuseEpilogue,
}

impl Knob {
    pub const ALL: [Knob; 7] = [
        Knob::TileM,
        Knob::TileN,
        Knob::TileK,
        Knob::Unroll,
        Knob::VectorWidth,
        Knob::SplitK,
        Knob::FuseEpilogue,
    ];

    pub fn get(self, s: &Schedule) -> u32 {
        match self {
            Knob::TileM => s.tile_m,
            Knob::TileN => s.tile_n,
            Knob::TileK => s.tile_k,
            Knob::Unroll => s.unroll,
            Knob::VectorWidth => s.vector_width,
            Knob::SplitK => s.split_k,
            Knob::FuseEpilogue => s.fuse_epilogue as u32,
        }
    }

    pub fn set(self, s: &mut Schedule, v: u32) {
        match self {
            Knob::TileM => s.tile_m = v,
            Knob::TileN => s.tile_n = v,
            Knob::TileK => s.tile_k = v,
            Knob::Unroll => s.unroll = v,
            Knob::VectorWidth => s.vector_width = v,
            Knob::SplitK => s.split_k = v,
            Knob::FuseEpilogue => s.fuse_epilogue = v != 0,
        }
    }
}

/// Powers of two up to the padded extent, capped at [`MAX_TILE`].
pub fn tile_values(extent: u64) -> Vec<u32> {
    let padded = extent.max(1).next_power_of_two();
    let cap = padded.min(MAX_TILE as u64) as u32;
    std::iter::successors(Some(1u32), |&t| Some(t * 2))
        .take_while(|&t| t <= cap)
        .collect()
}

/// The library-default schedule every victim of a workload shares when no
/// tuning is done: mid-range tiles, no unrolling, vectorization, split-K or fusion.
pub fn default_schedule(w: &Workload) -> Schedule {
    let tile = |extent: u64| {
        tile_values(extent)
            .into_iter()
            .filter(|&t| t <= DEFAULT_TILE)
            .max()
            .unwrap_or(1)
    };
    let (tm, tn, tk) = match w.gemm() {
        Some(g) => (tile(g.m), tile(g.n), tile(g.k)),
        None => (1, 1, 1),
    };
    Schedule {
        tile_m: tm,
        tile_n: tn,
        tile_k: tk,
        unroll: 1,
        vector_width: 1,
        split_k: 1,
        fuse_epilogue: false,
    }
}

/// Enumerable knob space. Knobs not listed are pinned to their value in `base`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleSpace {
    base: Schedule,
    knobs: Vec<(Knob, Vec<u32>)>,
}

impl ScheduleSpace {
    pub fn for_workload(w: &Workload) -> Self {
        let mut knobs = Vec::new();
        if let Some(g) = w.gemm() {
            knobs.push((Knob::TileM, tile_values(g.m)));
            knobs.push((Knob::TileN, tile_values(g.n)));
            knobs.push((Knob::TileK, tile_values(g.k)));
        }
        knobs.push((Knob::Unroll, UNROLL_VALUES.to_vec()));
        knobs.push((Knob::VectorWidth, VECTOR_VALUES.to_vec()));
        if w.is_reduction() {
            knobs.push((Knob::SplitK, SPLIT_K_VALUES.to_vec()));
        }
        knobs.push((Knob::FuseEpilogue, vec![0, 1]));
        // single-valued knobs are not search dimensions
        knobs.retain(|(_, vals)| vals.len() > 1);
        ScheduleSpace {
            base: default_schedule(w),
            knobs,
        }
    }

    /// Keeps only `keep`; every other knob is pinned to the base value.
    pub fn restrict(&self, keep: &[Knob]) -> Self {
        ScheduleSpace {
            base: self.base,
            knobs: self
                .knobs
                .iter()
                .filter(|(k, _)| keep.contains(k))
                .cloned()
                .collect(),
        }
    }

    /// Replaces the value list of one knob (for tests and ablations).
    pub fn with_values(mut self, knob: Knob, values: Vec<u32>) -> Self {
        match self.knobs.iter_mut().find(|(k, _)| *k == knob) {
            Some((_, v)) => *v = values,
            None => self.knobs.push((knob, values)),
        }
        self
    }

    pub fn base(&self) -> Schedule {
        self.base
    }

    pub fn knobs(&self) -> &[(Knob, Vec<u32>)] {
        &self.knobs
    }

    pub fn values(&self, knob: Knob) -> Option<&[u32]> {
        self.knobs
            .iter()
            .find(|(k, _)| *k == knob)
            .map(|(_, v)| v.as_slice())
    }

    pub fn size(&self) -> u64 {
        self.knobs.iter().map(|(_, v)| v.len() as u64).product()
    }

    pub fn contains(&self, s: &Schedule) -> bool {
        Knob::ALL.iter().all(|&k| match self.values(k) {
            Some(vals) => vals.contains(&k.get(s)),
            None => k.get(s) == k.get(&self.base),
        })
    }

    /// The `index`-th member in mixed-radix order (last knob fastest).
    pub fn member(&self, mut index: u64) -> Schedule {
        let mut s = self.base;
        for (k, vals) in self.knobs.iter().rev() {
            let n = vals.len() as u64;
            k.set(&mut s, vals[(index % n) as usize]);
            index /= n;
        }
        s
    }

    pub fn iter(&self) -> impl Iterator<Item = Schedule> + '_ {
        (0..self.size()).map(|i| self.member(i))
    }

    /// One-step neighbour: a uniformly chosen knob moves to an adjacent value
    /// in its ordered list (inward at the boundaries).
    pub fn mutate<R: Rng + ?Sized>(&self, s: &Schedule, rng: &mut R) -> Schedule {
        let movable: Vec<&(Knob, Vec<u32>)> =
            self.knobs.iter().filter(|(_, v)| v.len() > 1).collect();
        if movable.is_empty() {
            return *s;
        }
        let (knob, vals) = movable[rng.gen_range(0..movable.len())];
        let cur = knob.get(s);
        let pos = vals.iter().position(|&v| v == cur).unwrap_or(0);
        let next = if pos == 0 {
            1
        } else if pos + 1 == vals.len() {
            pos - 1
        } else if rng.gen_bool(0.5) {
            pos + 1
        } else {
            pos - 1
        };
        let mut out = *s;
        knob.set(&mut out, vals[next]);
        out
    }
}

/// One-step neighbour of `s` in the full space of `w`.
pub fn mutate<R: Rng + ?Sized>(s: &Schedule, w: &Workload, rng: &mut R) -> Schedule {
    ScheduleSpace::for_workload(w).mutate(s, rng)
}
