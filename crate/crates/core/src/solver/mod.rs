//! Joint constant selection and product decomposition.
//!
//! Given the weight vectors of every neuron, pick a multiset of multiplier
//! constants (at most `multiplier_budget` of them) and, per neuron, a
//! cycle-by-cycle assignment of weight fragments to multiplier slots such that
//!
//! - every weight equals the sum of `count × constant` over its fragments,
//! - no cycle uses more slots of a constant than were instantiated,
//!
//! while minimizing the summed neuron latency. Neurons only interact through
//! the shared selection, so the search is two-level: an outer search over
//! selections and an exact per-neuron scheduler ([`min_cycles_for_neuron`]).

mod brute;
mod neuron;
mod search;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NeuronId, QuantizedMlp};

pub use brute::brute_force_solve;
pub use neuron::{min_cycles_for_neuron, NeuronSchedule};
pub use search::solve;

/// Largest constant magnitude accepted in a candidate set.
pub const MAX_CONSTANT_MAGNITUDE: i32 = 255;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolveError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("time budget exhausted before any valid schedule was found")]
    TimeBudgetExceeded,
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),
}

/// Replication count per constant. Only constants with a nonzero count are stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Selection {
    counts: BTreeMap<i32, u32>,
}

impl Selection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts<I: IntoIterator<Item = (i32, u32)>>(counts: I) -> Self {
        let mut s = Self::new();
        for (c, k) in counts {
            s.add(c, k);
        }
        s
    }

    /// Builds a selection from a flat list of constants, one entry per multiplier.
    pub fn from_multiset(constants: &[i32]) -> Self {
        Self::from_counts(constants.iter().map(|&c| (c, 1)))
    }

    pub fn add(&mut self, constant: i32, count: u32) {
        if count > 0 {
            *self.counts.entry(constant).or_insert(0) += count;
        }
    }

    pub fn count(&self, constant: i32) -> u32 {
        self.counts.get(&constant).copied().unwrap_or(0)
    }

    /// Total number of multipliers.
    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `(constant, count)` in ascending constant order.
    pub fn iter(&self) -> impl Iterator<Item = (i32, u32)> + '_ {
        self.counts.iter().map(|(&c, &k)| (c, k))
    }

    /// Flat ascending list with replicas adjacent.
    pub fn to_multiset(&self) -> Vec<i32> {
        self.iter().flat_map(|(c, k)| std::iter::repeat_n(c, k as usize)).collect()
    }
}

/// One nonzero `d` entry: `count` slots of `constant` fed with weight `i`'s activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    #[serde(rename = "i")]
    pub weight_index: usize,
    #[serde(rename = "c")]
    pub constant: i32,
    pub count: u32,
}

pub type Cycle = Vec<Assignment>;

/// Per-neuron cycle lists in model order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InferenceSchedule {
    pub neurons: Vec<NeuronSchedule>,
}

impl InferenceSchedule {
    pub fn total_latency(&self) -> u64 {
        self.neurons.iter().map(|n| n.latency() as u64).sum()
    }

    pub fn get(&self, id: NeuronId) -> Option<&NeuronSchedule> {
        self.neurons.iter().find(|n| n.id == id)
    }

    /// Most slots of each constant used in any single cycle.
    pub fn peak_usage(&self) -> Selection {
        let mut peak: BTreeMap<i32, u32> = BTreeMap::new();
        for cycle in self.neurons.iter().flat_map(|n| &n.cycles) {
            let mut used: BTreeMap<i32, u32> = BTreeMap::new();
            for a in cycle {
                *used.entry(a.constant).or_insert(0) += a.count;
            }
            for (c, u) in used {
                let p = peak.entry(c).or_insert(0);
                *p = (*p).max(u);
            }
        }
        Selection::from_counts(peak)
    }
}

impl Serialize for InferenceSchedule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<NeuronId, &Vec<Cycle>> =
            self.neurons.iter().map(|n| (n.id, &n.cycles)).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for InferenceSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map: BTreeMap<NeuronId, Vec<Cycle>> = BTreeMap::deserialize(d)?;
        Ok(Self {
            neurons: map.into_iter().map(|(id, cycles)| NeuronSchedule { id, cycles }).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub neurons: Vec<(NeuronId, Vec<i32>)>,
    /// Candidate constants, sorted ascending without duplicates.
    pub candidates: Vec<i32>,
    pub multiplier_budget: u32,
    /// Maximum cycles per neuron.
    pub horizon: u32,
}

/// Default candidate set for a weight width: the full signed range.
pub fn default_candidates(weight_bits: u32) -> Vec<i32> {
    let (lo, hi) = crate::model::signed_range(weight_bits);
    (lo..=hi).collect()
}

/// Default multiplier budget: as many `activation_bits`-wide slots as fit in 64 bits.
pub fn default_budget(activation_bits: u32) -> u32 {
    crate::codegen::REGISTER_BITS / activation_bits
}

impl ProblemInstance {
    pub fn new(
        neurons: Vec<(NeuronId, Vec<i32>)>,
        candidates: &[i32],
        multiplier_budget: u32,
        horizon: u32,
    ) -> Self {
        let mut candidates = candidates.to_vec();
        candidates.sort_unstable();
        candidates.dedup();
        Self { neurons, candidates, multiplier_budget, horizon }
    }

    /// Flattens a model layer by layer. Without an explicit horizon the
    /// feasibility horizon is used when ±1 are candidates, otherwise a bound
    /// long enough for any representable weight to be decomposed one slot at
    /// a time.
    pub fn from_model(
        model: &QuantizedMlp,
        candidates: &[i32],
        multiplier_budget: u32,
        horizon: Option<u32>,
    ) -> Self {
        let neurons = model.neurons().map(|(id, w)| (id, w.to_vec())).collect();
        let mut inst = Self::new(neurons, candidates, multiplier_budget, 1);
        inst.horizon = horizon.unwrap_or_else(|| inst.default_horizon());
        inst
    }

    pub fn default_horizon(&self) -> u32 {
        let h = match feasibility_guard(self) {
            Ok(h) => h,
            Err(_) => {
                // A minimal decomposition of w over constants bounded by m in
                // magnitude never needs more than |w| + 2m parts.
                let m = self.candidates.iter().map(|c| c.unsigned_abs()).max().unwrap_or(1);
                self.neurons
                    .iter()
                    .map(|(_, w)| {
                        w.iter().filter(|&&x| x != 0).map(|x| x.unsigned_abs() + 2 * m).sum::<u32>()
                    })
                    .max()
                    .unwrap_or(0)
            }
        };
        h.max(1)
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: String| Err(SolveError::InvalidInstance(m));
        if self.candidates.is_empty() {
            return bad("candidate set is empty".into());
        }
        if let Some(c) = self.candidates.iter().find(|c| c.abs() > MAX_CONSTANT_MAGNITUDE) {
            return bad(format!("candidate {c} exceeds ±{MAX_CONSTANT_MAGNITUDE}"));
        }
        if self.candidates.windows(2).any(|w| w[0] >= w[1]) {
            return bad("candidates must be sorted and distinct".into());
        }
        if self.multiplier_budget == 0 {
            return bad("multiplier budget must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if let Some((id, w)) = self
            .neurons
            .iter()
            .find(|(_, w)| w.iter().any(|x| x.abs() > MAX_CONSTANT_MAGNITUDE))
        {
            return bad(format!("neuron {id} has a weight beyond ±{MAX_CONSTANT_MAGNITUDE}: {w:?}"));
        }
        Ok(())
    }

    /// Σ over neurons of ⌈nonzero weights / budget⌉, a bound no selection can beat.
    pub fn latency_lower_bound(&self) -> u64 {
        let m = u64::from(self.multiplier_budget.max(1));
        self.neurons
            .iter()
            .map(|(_, w)| (w.iter().filter(|&&x| x != 0).count() as u64).div_ceil(m))
            .sum()
    }
}

fn abs_sum_horizon(neurons: &[(NeuronId, Vec<i32>)]) -> u32 {
    neurons
        .iter()
        .map(|(_, w)| w.iter().map(|x| x.unsigned_abs()).sum::<u32>())
        .max()
        .unwrap_or(0)
}

/// Horizon under which one `+1` and one `-1` multiplier always suffice:
/// the largest per-neuron `Σ|w|`.
pub fn feasibility_guard(instance: &ProblemInstance) -> Result<u32, SolveError> {
    if !(instance.candidates.contains(&1) && instance.candidates.contains(&-1)) {
        return Err(SolveError::InvalidInstance(
            "feasibility guarantee needs both +1 and -1 among the candidates".into(),
        ));
    }
    Ok(abs_sum_horizon(&instance.neurons))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Exact,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimality {
    ProvedOptimal,
    Heuristic,
    TimedOutBest,
}

/// Stopping rules for the exact search. `work_limit` counts search nodes and
/// selection evaluations, so it gives reproducible cut-offs where a wall-clock
/// limit cannot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveBudget {
    pub time_limit: Option<Duration>,
    pub work_limit: Option<u64>,
}

impl SolveBudget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn time(limit: Duration) -> Self {
        Self { time_limit: Some(limit), work_limit: None }
    }

    pub fn work(limit: u64) -> Self {
        Self { time_limit: None, work_limit: Some(limit) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes: u64,
    pub selections_evaluated: u64,
    pub neuron_solves: u64,
    pub cache_hits: u64,
    /// Omitted from reproducible runs.
    pub wall_time_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub selection: Selection,
    pub schedule: InferenceSchedule,
    pub objective: u64,
    pub optimality: Optimality,
    pub stats: SolveStats,
}

impl SolveOutcome {
    pub fn to_json(&self) -> String {
        crate::canonical_json(self)
    }
}

/// A broken constraint found by [`validate_outcome`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Budget { total: u32, budget: u32 },
    NotACandidate(i32),
    MissingNeuron(NeuronId),
    UnknownNeuron(NeuronId),
    Decomposition { neuron: NeuronId, weight_index: usize, expected: i64, got: i64 },
    WeightIndex { neuron: NeuronId, weight_index: usize },
    Capacity { neuron: NeuronId, cycle: usize, constant: i32, used: u32, available: u32 },
    ZeroCount { neuron: NeuronId, cycle: usize },
    TrailingEmptyCycle { neuron: NeuronId },
    Horizon { neuron: NeuronId, latency: usize },
    Objective { reported: u64, actual: u64 },
}

/// Re-checks a solution against the raw constraints: budget, per-weight
/// decomposition equality, per-cycle capacity and the latency sum.
pub fn validate_outcome(
    instance: &ProblemInstance,
    outcome: &SolveOutcome,
) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let sel = &outcome.selection;
    let total: u32 = sel.iter().map(|(_, k)| k).sum();
    if total > instance.multiplier_budget {
        v.push(Violation::Budget { total, budget: instance.multiplier_budget });
    }
    for (c, _) in sel.iter() {
        if !instance.candidates.contains(&c) {
            v.push(Violation::NotACandidate(c));
        }
    }
    for ns in &outcome.schedule.neurons {
        if !instance.neurons.iter().any(|(id, _)| *id == ns.id) {
            v.push(Violation::UnknownNeuron(ns.id));
        }
    }
    let mut actual = 0u64;
    for (id, weights) in &instance.neurons {
        let Some(ns) = outcome.schedule.neurons.iter().find(|n| n.id == *id) else {
            v.push(Violation::MissingNeuron(*id));
            continue;
        };
        let mut sums = vec![0i64; weights.len()];
        for (t, cycle) in ns.cycles.iter().enumerate() {
            let mut used: BTreeMap<i32, u32> = BTreeMap::new();
            for a in cycle {
                if a.count == 0 {
                    v.push(Violation::ZeroCount { neuron: *id, cycle: t });
                }
                match sums.get_mut(a.weight_index) {
                    Some(s) => *s += i64::from(a.count) * i64::from(a.constant),
                    None => v.push(Violation::WeightIndex { neuron: *id, weight_index: a.weight_index }),
                }
                *used.entry(a.constant).or_insert(0) += a.count;
            }
            for (c, u) in used {
                let available = sel.count(c);
                if u > available {
                    v.push(Violation::Capacity { neuron: *id, cycle: t, constant: c, used: u, available });
                }
            }
        }
        for (i, (&w, &s)) in weights.iter().zip(&sums).enumerate() {
            if i64::from(w) != s {
                v.push(Violation::Decomposition { neuron: *id, weight_index: i, expected: w.into(), got: s });
            }
        }
        if ns.cycles.last().is_some_and(|c| c.is_empty()) {
            v.push(Violation::TrailingEmptyCycle { neuron: *id });
        }
        if ns.cycles.len() > instance.horizon as usize {
            v.push(Violation::Horizon { neuron: *id, latency: ns.cycles.len() });
        }
        actual += ns.cycles.len() as u64;
    }
    if actual != outcome.objective {
        v.push(Violation::Objective { reported: outcome.objective, actual });
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(weights: Vec<Vec<i32>>, cands: &[i32], budget: u32, horizon: u32) -> ProblemInstance {
        let neurons = weights.into_iter().enumerate().map(|(n, w)| (NeuronId::new(0, n), w)).collect();
        ProblemInstance::new(neurons, cands, budget, horizon)
    }

    #[test]
    fn guard_horizons() {
        let ones = [-1, 1];
        assert_eq!(feasibility_guard(&inst(vec![vec![7, -8]], &ones, 2, 1)), Ok(15));
        assert_eq!(feasibility_guard(&inst(vec![vec![0, 0]], &ones, 2, 1)), Ok(0));
        let all: Vec<i32> = (-8..=7).collect();
        assert_eq!(feasibility_guard(&inst(vec![all], &ones, 2, 1)), Ok(64));
        assert!(feasibility_guard(&inst(vec![vec![1]], &[1, 2], 2, 1)).is_err());
    }

    #[test]
    fn instance_validation() {
        assert!(inst(vec![vec![1]], &[], 1, 1).validate().is_err());
        assert!(inst(vec![vec![1]], &[1], 0, 1).validate().is_err());
        assert!(inst(vec![vec![1]], &[1], 1, 0).validate().is_err());
        assert!(inst(vec![vec![1]], &[1000], 1, 1).validate().is_err());
        assert!(inst(vec![vec![1]], &[3, 1, 1], 1, 1).validate().is_ok());
    }

    #[test]
    fn selection_multiset_views() {
        let s = Selection::from_multiset(&[15, 3, 3]);
        assert_eq!(s.total(), 3);
        assert_eq!(s.to_multiset(), vec![3, 3, 15]);
        assert_eq!(s.count(3), 2);
        assert_eq!(s.count(4), 0);
    }

    #[test]
    fn validator_catches_broken_schedules() {
        let instance = inst(vec![vec![6]], &[3], 1, 4);
        let good = SolveOutcome {
            selection: Selection::from_counts([(3, 1)]),
            schedule: InferenceSchedule {
                neurons: vec![NeuronSchedule {
                    id: NeuronId::new(0, 0),
                    cycles: vec![
                        vec![Assignment { weight_index: 0, constant: 3, count: 1 }],
                        vec![Assignment { weight_index: 0, constant: 3, count: 1 }],
                    ],
                }],
            },
            objective: 2,
            optimality: Optimality::Heuristic,
            stats: SolveStats::default(),
        };
        assert_eq!(validate_outcome(&instance, &good), Ok(()));

        let mut over = good.clone();
        over.schedule.neurons[0].cycles =
            vec![vec![Assignment { weight_index: 0, constant: 3, count: 2 }]];
        over.objective = 1;
        let errs = validate_outcome(&instance, &over).unwrap_err();
        assert!(matches!(errs[0], Violation::Capacity { used: 2, available: 1, .. }));

        let mut wrong = good.clone();
        wrong.schedule.neurons[0].cycles.pop();
        let errs = validate_outcome(&instance, &wrong).unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, Violation::Decomposition { got: 3, .. })));
        assert!(errs.iter().any(|e| matches!(e, Violation::Objective { .. })));

        let mut budget = good;
        budget.selection = Selection::from_counts([(3, 2)]);
        assert!(validate_outcome(&instance, &budget).is_err());
    }

    #[test]
    fn schedule_json_shape() {
        let s = InferenceSchedule {
            neurons: vec![NeuronSchedule {
                id: NeuronId::new(0, 0),
                cycles: vec![vec![Assignment { weight_index: 0, constant: 3, count: 1 }]],
            }],
        };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, r#"{"L0N0":[[{"i":0,"c":3,"count":1}]]}"#);
        let back: InferenceSchedule = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
