//! Exact minimum-latency scheduling of one neuron on a fixed multiplier bank.
//!
//! Cycles are interchangeable: the capacity constraint only bounds how many
//! slots of each constant a cycle may use, so a neuron fits in `T` cycles iff
//! its per-weight decompositions use at most `T·k_c` slots of every constant
//! `c` in total. The slot uses are then dealt out to cycles in order.
//!
//! Feasibility of a given `T` is decided in two steps:
//!
//! 1. Direct products first. If weight value `v` is itself a constant, giving
//!    as many `v`-weights as possible their own `v` slot never hurts: any
//!    solution where a `v`-slot serves some other weight's multi-slot
//!    decomposition while a `v`-weight is decomposed can swap the two at
//!    equal slot usage.
//! 2. The remaining ("excess") weights need decompositions of two or more
//!    slots. Only zero-sum-free decompositions are considered (no nonempty
//!    sub-multiset sums to zero); any other decomposition contains a removable
//!    zero-sum part. Their length is bounded by `max(M, v) - min(1 - M, v)`
//!    with `M` the largest constant magnitude, because an interleaved ordering
//!    keeps all prefix sums distinct inside that window. A depth-first search
//!    with failure memoization then assigns decompositions to excess weights.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::rc::Rc;
use std::time::Instant;

use super::{Assignment, Cycle, Selection, SolveError};
use crate::model::NeuronId;

/// The cycle list of one neuron. Its latency is the number of cycles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronSchedule {
    pub id: NeuronId,
    pub cycles: Vec<Cycle>,
}

impl NeuronSchedule {
    pub fn latency(&self) -> u32 {
        self.cycles.len() as u32
    }
}

/// Histogram of a neuron's nonzero weight values, ascending by value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct Profile {
    pub entries: Vec<(i32, u32)>,
}

impl Profile {
    pub fn of(weights: &[i32]) -> Self {
        let mut hist: BTreeMap<i32, u32> = BTreeMap::new();
        for &w in weights.iter().filter(|&&w| w != 0) {
            *hist.entry(w).or_insert(0) += 1;
        }
        Self { entries: hist.into_iter().collect() }
    }

    pub fn nonzero(&self) -> u32 {
        self.entries.iter().map(|&(_, m)| m).sum()
    }
}

/// Nonzero constants of a selection with their replication, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct Bank {
    pub constants: Vec<i32>,
    pub counts: Vec<u32>,
}

impl Bank {
    pub fn of(selection: &Selection) -> Self {
        let (constants, counts) = selection.iter().filter(|&(c, k)| c != 0 && k > 0).unzip();
        Self { constants, counts }
    }

    fn total(&self) -> u64 {
        self.counts.iter().map(|&k| u64::from(k)).sum()
    }

    fn index_of(&self, c: i32) -> Option<usize> {
        self.constants.binary_search(&c).ok()
    }
}

/// A decomposition: `counts[j]` slots of `bank.constants[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Pattern {
    counts: Vec<u32>,
    len: u32,
}

/// Per-value part of a plan, aligned with [`Profile::entries`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ValuePlan {
    pub direct: u32,
    /// One decomposition per excess weight, as `(constant, count)` lists.
    pub decompositions: Vec<Vec<(i32, u32)>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Plan {
    pub latency: u32,
    pub values: Vec<ValuePlan>,
}

/// What a (possibly partially decided) bank can offer, for lower bounds.
pub(crate) struct Capacity<F: Fn(i32) -> Option<u64>> {
    /// Multipliers in the bank.
    pub total: u64,
    /// Upper bounds on `Σ k_c·c` over positive and `Σ k_c·|c|` over negative constants.
    pub pos_mass: i64,
    pub neg_mass: i64,
    /// Replication of the constant equal to a weight value, `None` if still undecided.
    pub direct: F,
}

/// Latency bound from slot counting (a weight without a direct slot costs at
/// least two slots) and sign mass (positive weights need at least their value
/// in positive constant mass, likewise for negatives). `None` when no latency
/// up to `horizon` satisfies it.
pub(crate) fn capacity_lower_bound<F: Fn(i32) -> Option<u64>>(
    profile: &Profile,
    cap: &Capacity<F>,
    horizon: u32,
) -> Option<u32> {
    let nnz = u64::from(profile.nonzero());
    if nnz == 0 {
        return Some(0);
    }
    if cap.total == 0 {
        return None;
    }
    let pos_demand: i64 = profile.entries.iter().filter(|e| e.0 > 0).map(|&(v, m)| i64::from(v) * i64::from(m)).sum();
    let neg_demand: i64 = profile.entries.iter().filter(|e| e.0 < 0).map(|&(v, m)| -i64::from(v) * i64::from(m)).sum();
    if (pos_demand > 0 && cap.pos_mass == 0) || (neg_demand > 0 && cap.neg_mass == 0) {
        return None;
    }
    let direct: Vec<Option<u64>> = profile.entries.iter().map(|&(v, _)| (cap.direct)(v)).collect();
    let mut t = nnz.div_ceil(cap.total).max(1);
    if cap.pos_mass > 0 {
        t = t.max((pos_demand as u64).div_ceil(cap.pos_mass as u64));
    }
    if cap.neg_mass > 0 {
        t = t.max((neg_demand as u64).div_ceil(cap.neg_mass as u64));
    }
    while t <= u64::from(horizon) {
        let need: u64 = profile
            .entries
            .iter()
            .zip(&direct)
            .map(|(&(_, m), k)| {
                let m = u64::from(m);
                let d = k.map_or(m, |k| m.min(t * k));
                d + 2 * (m - d)
            })
            .sum();
        if need <= t * cap.total {
            return Some(t as u32);
        }
        t += 1;
    }
    None
}

/// [`capacity_lower_bound`] for a fully decided bank.
pub(crate) fn latency_lower_bound(profile: &Profile, bank: &Bank, horizon: u32) -> Option<u32> {
    let mass = |positive: bool| -> i64 {
        bank.constants
            .iter()
            .zip(&bank.counts)
            .filter(|e| (*e.0 > 0) == positive)
            .map(|(&c, &k)| i64::from(c.unsigned_abs()) * i64::from(k))
            .sum()
    };
    let cap = Capacity {
        total: bank.total(),
        pos_mass: mass(true),
        neg_mass: mass(false),
        direct: |v| Some(bank.index_of(v).map_or(0, |j| u64::from(bank.counts[j]))),
    };
    capacity_lower_bound(profile, &cap, horizon)
}

/// Nonempty subset sums of a multiset, as a bitset over a symmetric window.
#[derive(Clone)]
struct SumSet {
    bits: Vec<u64>,
    offset: i64,
}

impl SumSet {
    fn new(radius: i64) -> Self {
        let size = (2 * radius + 1) as usize;
        Self { bits: vec![0; size.div_ceil(64)], offset: radius }
    }

    fn contains(&self, x: i64) -> bool {
        let i = x + self.offset;
        if i < 0 || i as usize >= self.bits.len() * 64 {
            return false;
        }
        self.bits[i as usize / 64] >> (i as usize % 64) & 1 == 1
    }

    fn insert(&mut self, x: i64) {
        let i = (x + self.offset) as usize;
        self.bits[i / 64] |= 1 << (i % 64);
    }

    /// Adds one element `c`; returns `false` (leaving `self` unchanged) if that
    /// would create a zero-sum subset.
    fn push(&mut self, c: i64) -> bool {
        if self.contains(-c) {
            return false;
        }
        let src = self.bits.clone();
        let n = src.len();
        let (words, rem) = ((c.unsigned_abs() / 64) as usize, (c.unsigned_abs() % 64) as u32);
        for i in 0..n {
            let v = if c >= 0 {
                let lo = i.checked_sub(words).map_or(0, |k| src[k]);
                let lo2 = i.checked_sub(words + 1).map_or(0, |k| src[k]);
                if rem == 0 { lo } else { lo << rem | lo2 >> (64 - rem) }
            } else {
                let hi = src.get(i + words).copied().unwrap_or(0);
                let hi2 = src.get(i + words + 1).copied().unwrap_or(0);
                if rem == 0 { hi } else { hi >> rem | hi2 << (64 - rem) }
            };
            self.bits[i] |= v;
        }
        self.insert(c);
        true
    }
}

/// Longest zero-sum-free decomposition of `v` over constants of magnitude ≤ `m`.
fn max_decomposition_len(v: i64, m: i64) -> i64 {
    m.max(v) - (1 - m).min(v)
}

/// All zero-sum-free decompositions of `v` over the bank's constants, shortest first.
fn enumerate_patterns(v: i32, constants: &[i32]) -> Vec<Pattern> {
    let m = constants.iter().map(|c| i64::from(c.unsigned_abs())).max().unwrap_or(0);
    let mut out = Vec::new();
    if m == 0 || v == 0 {
        return out;
    }
    let max_len = max_decomposition_len(i64::from(v), m);
    let mut counts = vec![0u32; constants.len()];
    let sums = SumSet::new(max_len * m);
    enumerate_rec(i64::from(v), constants, 0, 0, 0, max_len, &mut counts, sums, &mut out);
    out.sort_by_key(|p| p.len);
    out
}

#[allow(clippy::too_many_arguments)]
fn enumerate_rec(
    target: i64,
    constants: &[i32],
    j: usize,
    sum: i64,
    len: i64,
    max_len: i64,
    counts: &mut Vec<u32>,
    sums: SumSet,
    out: &mut Vec<Pattern>,
) {
    if j == constants.len() {
        if sum == target && len > 0 {
            out.push(Pattern { counts: counts.clone(), len: len as u32 });
        }
        return;
    }
    let c = i64::from(constants[j]);
    let last = i64::from(*constants.last().unwrap());
    let mut sums = sums;
    let mut k = 0;
    loop {
        let rl = max_len - len - k;
        // constants are ascending, so c is the smallest still available
        let lo = rl * c.min(0);
        let hi = rl * last.max(0);
        let gap = target - sum - k * c;
        if gap >= lo && gap <= hi {
            counts[j] = k as u32;
            enumerate_rec(target, constants, j + 1, sum + k * c, len + k, max_len, counts, sums.clone(), out);
        }
        if rl == 0 || !sums.push(c) {
            break;
        }
        k += 1;
    }
    counts[j] = 0;
}

/// Exact scheduler with a decomposition cache shared across calls.
#[derive(Default)]
pub(crate) struct NeuronScheduler {
    patterns: HashMap<(i32, Vec<i32>), Rc<Vec<Pattern>>>,
    /// Work units spent so far; callers may add their own.
    pub work: u64,
    pub work_limit: Option<u64>,
    pub deadline: Option<Instant>,
}

/// The scheduler ran out of work or time before reaching an answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Aborted;

struct Group {
    entry: usize,
    value: i32,
    excess: u32,
    patterns: Vec<Rc<Pattern>>,
    min_len: u64,
}

impl NeuronScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    fn patterns_for(&mut self, v: i32, bank: &Bank) -> Rc<Vec<Pattern>> {
        self.patterns
            .entry((v, bank.constants.clone()))
            .or_insert_with(|| Rc::new(enumerate_patterns(v, &bank.constants)))
            .clone()
    }

    pub fn exhausted(&self) -> bool {
        self.work_limit.is_some_and(|l| self.work > l) || self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    /// Minimum-latency plan, or `Infeasible` when none fits in `horizon` cycles.
    /// Running out of budget yields `TimeBudgetExceeded`.
    pub fn solve(&mut self, profile: &Profile, bank: &Bank, horizon: u32) -> Result<Plan, SolveError> {
        if profile.nonzero() == 0 {
            return Ok(Plan {
                latency: 0,
                values: Vec::new(),
            });
        }
        for &(v, _) in &profile.entries {
            if bank.index_of(v).is_none() && self.patterns_for(v, bank).is_empty() {
                return Err(SolveError::Infeasible(format!(
                    "weight {v} cannot be composed from constants {:?}",
                    bank.constants
                )));
            }
        }
        let infeasible = || {
            SolveError::Infeasible(format!(
                "neuron needs more than {horizon} cycles on constants {:?} x {:?}",
                bank.constants, bank.counts
            ))
        };
        let lb = latency_lower_bound(profile, bank, horizon).ok_or_else(infeasible)?;
        let aborted = |_| SolveError::TimeBudgetExceeded;
        if let Some(values) = self.feasible(profile, bank, lb).map_err(aborted)? {
            return Ok(Plan { latency: lb, values });
        }
        // gallop, then bisect between the last infeasible and first feasible latency
        let (mut lo, mut step) = (lb, 1u32);
        let (mut hi, mut best) = loop {
            if lo >= horizon {
                return Err(infeasible());
            }
            let t = lo.saturating_add(step).min(horizon);
            if let Some(values) = self.feasible(profile, bank, t).map_err(aborted)? {
                break (t, values);
            }
            lo = t;
            step = step.saturating_mul(2);
        };
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            match self.feasible(profile, bank, mid).map_err(aborted)? {
                Some(values) => {
                    hi = mid;
                    best = values;
                }
                None => lo = mid,
            }
        }
        Ok(Plan { latency: hi, values: best })
    }

    /// Decomposition plan using at most `t·k_c` slots of each constant, if one exists.
    fn feasible(&mut self, profile: &Profile, bank: &Bank, t: u32) -> Result<Option<Vec<ValuePlan>>, Aborted> {
        self.work += 1;
        if self.exhausted() {
            return Err(Aborted);
        }
        let n = bank.constants.len();
        let mut caps: Vec<u32> = bank.counts.iter().map(|&k| k.saturating_mul(t)).collect();
        let mut values: Vec<ValuePlan> = Vec::with_capacity(profile.entries.len());
        let mut groups: Vec<Group> = Vec::new();
        for (e, &(v, m)) in profile.entries.iter().enumerate() {
            let direct = bank.index_of(v).map_or(0, |j| {
                let d = m.min(caps[j]);
                caps[j] -= d;
                d
            });
            values.push(ValuePlan { direct, decompositions: Vec::new() });
            if m > direct {
                groups.push(Group { entry: e, value: v, excess: m - direct, patterns: Vec::new(), min_len: 0 });
            }
        }
        if groups.is_empty() {
            return Ok(Some(values));
        }
        let residual: u64 = caps.iter().map(|&c| u64::from(c)).sum();
        let excess: u64 = groups.iter().map(|g| u64::from(g.excess)).sum();
        if 2 * excess > residual {
            return Ok(None);
        }
        let len_cap = residual - 2 * (excess - 1);
        for g in &mut groups {
            let all = self.patterns_for(g.value, bank);
            g.patterns = all
                .iter()
                .filter(|p| u64::from(p.len) <= len_cap && p.counts.iter().zip(&caps).all(|(a, b)| a <= b))
                .map(|p| Rc::new(p.clone()))
                .collect();
            if g.patterns.is_empty() {
                return Ok(None);
            }
            g.min_len = u64::from(g.patterns[0].len);
        }
        if groups.iter().map(|g| u64::from(g.excess) * g.min_len).sum::<u64>() > residual {
            return Ok(None);
        }
        groups.sort_by_key(|g| (g.patterns.len(), g.value));

        let chosen = match greedy(&groups, &caps) {
            Some(chosen) => chosen,
            None => {
                let mut search = Search {
                    groups: &groups,
                    constants: &bank.constants,
                    failed: HashSet::new(),
                    chosen: Vec::new(),
                    work: self.work,
                    work_limit: self.work_limit,
                    deadline: self.deadline,
                    aborted: false,
                };
                let ok = search.run(0, 0, groups[0].excess, &mut caps.clone());
                self.work = search.work;
                if search.aborted {
                    return Err(Aborted);
                }
                if !ok {
                    return Ok(None);
                }
                search.chosen.reverse();
                search.chosen
            }
        };

        for (g, p) in chosen {
            let group = &groups[g];
            let decomposition = (0..n)
                .filter(|&j| group.patterns[p].counts[j] > 0)
                .map(|j| (bank.constants[j], group.patterns[p].counts[j]))
                .collect();
            values[group.entry].decompositions.push(decomposition);
        }
        Ok(Some(values))
    }
}

/// First-fit with shortest decompositions; returns `(group, pattern)` per excess weight.
fn greedy(groups: &[Group], caps: &[u32]) -> Option<Vec<(usize, usize)>> {
    let mut caps = caps.to_vec();
    let mut out = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        for _ in 0..group.excess {
            let p = group
                .patterns
                .iter()
                .position(|p| p.counts.iter().zip(&caps).all(|(a, b)| a <= b))?;
            for (c, a) in caps.iter_mut().zip(&group.patterns[p].counts) {
                *c -= a;
            }
            out.push((g, p));
        }
    }
    Some(out)
}

struct Search<'a> {
    groups: &'a [Group],
    constants: &'a [i32],
    failed: HashSet<(usize, usize, u32, Vec<u32>)>,
    /// Filled in reverse on success.
    chosen: Vec<(usize, usize)>,
    work: u64,
    work_limit: Option<u64>,
    deadline: Option<Instant>,
    aborted: bool,
}

impl Search<'_> {
    /// Assigns the remaining `left` items of group `g` (pattern index ≥ `from`,
    /// so identical items are placed in non-decreasing pattern order) and all
    /// later groups.
    fn run(&mut self, g: usize, from: usize, left: u32, caps: &mut Vec<u32>) -> bool {
        self.work += 1;
        if self.work_limit.is_some_and(|l| self.work > l)
            || (self.work.is_multiple_of(1024) && self.deadline.is_some_and(|d| Instant::now() >= d))
        {
            self.aborted = true;
        }
        if self.aborted {
            return false;
        }
        if left == 0 {
            return match self.groups.get(g + 1) {
                None => true,
                Some(next) => self.run(g + 1, 0, next.excess, caps),
            };
        }
        if !self.bound_ok(g, left, caps) {
            return false;
        }
        let key = (g, from, left, caps.clone());
        if self.failed.contains(&key) {
            return false;
        }
        let group = &self.groups[g];
        for (p, pat) in group.patterns.iter().enumerate().skip(from) {
            if !pat.counts.iter().zip(caps.iter()).all(|(a, b)| a <= b) {
                continue;
            }
            for (c, a) in caps.iter_mut().zip(&pat.counts) {
                *c -= a;
            }
            let ok = self.run(g, p, left - 1, caps);
            for (c, a) in caps.iter_mut().zip(&pat.counts) {
                *c += a;
            }
            if ok {
                self.chosen.push((g, p));
                return true;
            }
            if self.aborted {
                return false;
            }
        }
        self.failed.insert(key);
        false
    }

    fn bound_ok(&self, g: usize, left: u32, caps: &[u32]) -> bool {
        let remaining = std::iter::once((&self.groups[g], left))
            .chain(self.groups[g + 1..].iter().map(|gr| (gr, gr.excess)));
        let (mut slots, mut pos, mut neg) = (0u64, 0i64, 0i64);
        for (gr, count) in remaining {
            slots += gr.min_len * u64::from(count);
            let mass = i64::from(gr.value) * i64::from(count);
            if mass > 0 {
                pos += mass;
            } else {
                neg -= mass;
            }
        }
        let (mut cap_slots, mut cap_pos, mut cap_neg) = (0u64, 0i64, 0i64);
        for (&c, &k) in self.constants.iter().zip(caps) {
            cap_slots += u64::from(k);
            if c > 0 {
                cap_pos += i64::from(c) * i64::from(k);
            } else {
                cap_neg -= i64::from(c) * i64::from(k);
            }
        }
        slots <= cap_slots && pos <= cap_pos && neg <= cap_neg
    }
}

/// Deals each weight's decomposition out to cycles, filling every constant's
/// slots in weight-index order.
pub(crate) fn build_cycles(weights: &[i32], profile: &Profile, plan: &Plan, bank: &Bank) -> Vec<Cycle> {
    let mut decomps: Vec<Vec<(i32, u32)>> = vec![Vec::new(); weights.len()];
    for (&(v, _), vp) in profile.entries.iter().zip(&plan.values) {
        let mut idx = weights.iter().enumerate().filter(|&(_, &w)| w == v).map(|(i, _)| i);
        for i in idx.by_ref().take(vp.direct as usize) {
            decomps[i] = vec![(v, 1)];
        }
        for (i, d) in idx.zip(&vp.decompositions) {
            decomps[i] = d.clone();
        }
    }
    let mut slots: BTreeMap<(usize, i32, usize), u32> = BTreeMap::new();
    for (&c, &k) in bank.constants.iter().zip(&bank.counts) {
        let mut pos = 0u32;
        for (i, d) in decomps.iter().enumerate() {
            for &(_, mut cnt) in d.iter().filter(|(dc, _)| *dc == c) {
                while cnt > 0 {
                    let t = pos / k;
                    let take = (k - pos % k).min(cnt);
                    *slots.entry((t as usize, c, i)).or_insert(0) += take;
                    pos += take;
                    cnt -= take;
                }
            }
        }
    }
    let len = slots.keys().map(|&(t, _, _)| t + 1).max().unwrap_or(0);
    let mut cycles: Vec<Cycle> = vec![Vec::new(); len];
    for ((t, c, i), count) in slots {
        cycles[t].push(Assignment { weight_index: i, constant: c, count });
    }
    cycles
}

/// Provably minimal cycle count for one neuron on `selection`, with a witness schedule.
pub fn min_cycles_for_neuron(
    weights: &[i32],
    selection: &Selection,
    horizon: u32,
) -> Result<(u32, Vec<Cycle>), SolveError> {
    if horizon == 0 {
        return Err(SolveError::InvalidInstance("horizon must be at least 1".into()));
    }
    let profile = Profile::of(weights);
    let bank = Bank::of(selection);
    let plan = NeuronScheduler::new().solve(&profile, &bank, horizon)?;
    let cycles = build_cycles(weights, &profile, &plan, &bank);
    debug_assert_eq!(cycles.len() as u32, plan.latency);
    Ok((plan.latency, cycles))
}
