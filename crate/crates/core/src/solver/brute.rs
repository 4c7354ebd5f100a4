//! Exhaustive reference solver for tiny instances.
//!
//! Enumerates every selection of at most `multiplier_budget` constants and,
//! per neuron, every cycle-by-cycle assignment of multiplier slots to weights.
//! It shares no code with the main search and exists to check it.

use std::collections::HashMap;

use super::{
    Assignment, Cycle, InferenceSchedule, NeuronSchedule, Optimality, ProblemInstance, Selection, SolveError,
    SolveOutcome, SolveStats,
};

pub const MAX_NEURONS: usize = 3;
pub const MAX_WEIGHTS: usize = 4;
pub const MAX_CANDIDATES: usize = 5;
pub const MAX_BUDGET: u32 = 4;
pub const MAX_HORIZON: u32 = 6;

/// The true optimum by exhaustive search over every selection, largest
/// first. Ties keep the first selection found.
pub fn brute_force_solve(instance: &ProblemInstance) -> Result<SolveOutcome, SolveError> {
    instance.validate()?;
    let too_large = |what: String| Err(SolveError::InstanceTooLarge(what));
    if instance.neurons.len() > MAX_NEURONS {
        return too_large(format!("{} neurons (max {MAX_NEURONS})", instance.neurons.len()));
    }
    if let Some((id, w)) = instance.neurons.iter().find(|(_, w)| w.len() > MAX_WEIGHTS) {
        return too_large(format!("neuron {id} has {} weights (max {MAX_WEIGHTS})", w.len()));
    }
    if instance.candidates.len() > MAX_CANDIDATES {
        return too_large(format!("{} candidates (max {MAX_CANDIDATES})", instance.candidates.len()));
    }
    if instance.multiplier_budget > MAX_BUDGET {
        return too_large(format!("budget {} (max {MAX_BUDGET})", instance.multiplier_budget));
    }
    if instance.horizon > MAX_HORIZON {
        return too_large(format!("horizon {} (max {MAX_HORIZON})", instance.horizon));
    }

    let mut selections = Vec::new();
    multisets(&instance.candidates, instance.multiplier_budget as usize, 0, &mut Vec::new(), &mut selections);

    // larger selections first: they tend to schedule faster and tighten the cut-off early
    selections.sort_by_key(|s| std::cmp::Reverse(s.len()));

    let mut nodes = 0u64;
    let mut best: Option<(u64, Selection, Vec<Vec<Cycle>>)> = None;
    'sel: for picked in &selections {
        let selection = Selection::from_multiset(picked);
        let slots: Vec<(i32, u32)> = selection.iter().filter(|&(c, _)| c != 0).collect();
        let mut total = 0u64;
        let mut witnesses = Vec::new();
        for (_, weights) in &instance.neurons {
            // only strictly better totals are of interest
            let cap = match &best {
                Some((b, _, _)) if *b <= total => continue 'sel,
                Some((b, _, _)) => (b - total - 1).min(u64::from(instance.horizon)) as u32,
                None => instance.horizon,
            };
            let mut memo = HashMap::new();
            let found = (0..=cap).find_map(|t| {
                let mut cycles = Vec::new();
                reach(weights.iter().map(|&w| i64::from(w)).collect(), t, &slots, &mut memo, &mut cycles, &mut nodes)
                    .then_some(cycles)
            });
            match found {
                Some(cycles) => {
                    total += cycles.len() as u64;
                    witnesses.push(cycles);
                }
                None => continue 'sel,
            }
        }
        if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
            best = Some((total, selection, witnesses));
        }
    }

    let (objective, selection, witnesses) = best.ok_or_else(|| {
        SolveError::Infeasible(format!(
            "no selection of at most {} constants schedules every neuron within {} cycles",
            instance.multiplier_budget, instance.horizon
        ))
    })?;
    let neurons = instance
        .neurons
        .iter()
        .zip(witnesses)
        .map(|((id, _), cycles)| NeuronSchedule { id: *id, cycles })
        .collect();
    Ok(SolveOutcome {
        selection,
        schedule: InferenceSchedule { neurons },
        objective,
        optimality: Optimality::ProvedOptimal,
        stats: SolveStats { nodes, selections_evaluated: selections.len() as u64, ..SolveStats::default() },
    })
}

/// All multisets of size `0..=max` drawn from `items`, as sorted lists.
fn multisets(items: &[i32], max: usize, from: usize, cur: &mut Vec<i32>, out: &mut Vec<Vec<i32>>) {
    out.push(cur.clone());
    if cur.len() == max {
        return;
    }
    for i in from..items.len() {
        cur.push(items[i]);
        multisets(items, max, i, cur, out);
        cur.pop();
    }
}

/// Can `residual` be driven to zero within `cycles` cycles? On success the
/// cycles used are appended to `out` in order. `memo` holds, per residual,
/// the largest cycle count already shown to be insufficient.
fn reach(
    residual: Vec<i64>,
    cycles: u32,
    slots: &[(i32, u32)],
    memo: &mut HashMap<Vec<i64>, u32>,
    out: &mut Vec<Cycle>,
    nodes: &mut u64,
) -> bool {
    *nodes += 1;
    if residual.iter().all(|&r| r == 0) {
        return true;
    }
    if cycles == 0 || slots_needed(&residual, slots).is_none_or(|n| n > slots_per_cycle(slots) * u64::from(cycles)) {
        return false;
    }
    if memo.get(&residual).is_some_and(|&c| c >= cycles) {
        return false;
    }
    let mut choice = Vec::new();
    let ok = each_cycle(&residual, slots, 0, &mut choice, &mut |assigns, next| {
        let mut rest = Vec::new();
        if reach(next, cycles - 1, slots, memo, &mut rest, nodes) {
            let mut cycle: Cycle = assigns.to_vec();
            cycle.sort_by_key(|a| (a.constant, a.weight_index));
            out.push(cycle);
            out.extend(rest);
            true
        } else {
            false
        }
    });
    if !ok {
        let e = memo.entry(residual).or_insert(0);
        *e = (*e).max(cycles);
    }
    ok
}

fn slots_per_cycle(slots: &[(i32, u32)]) -> u64 {
    slots.iter().map(|&(_, k)| u64::from(k)).sum()
}

/// A positive residual r takes at least ⌈r / largest positive constant⌉
/// slot uses, since negative constants only add distance; likewise for
/// negative residuals. `None` when some residual has no constant of its sign.
fn slots_needed(residual: &[i64], slots: &[(i32, u32)]) -> Option<u64> {
    let pos = slots.iter().map(|&(c, _)| i64::from(c)).filter(|&c| c > 0).max();
    let neg = slots.iter().map(|&(c, _)| -i64::from(c)).filter(|&c| c > 0).max();
    residual.iter().try_fold(0u64, |acc, &r| {
        let need = match r {
            0 => 0,
            r if r > 0 => (r as u64).div_ceil(pos? as u64),
            r => ((-r) as u64).div_ceil(neg? as u64),
        };
        Some(acc + need)
    })
}

/// Calls `f` with every nonempty way to hand out this cycle's slots
/// (the slots of one constant are interchangeable, so only per-weight counts
/// matter), stopping at the first `true`.
fn each_cycle(
    residual: &[i64],
    slots: &[(i32, u32)],
    s: usize,
    choice: &mut Vec<Assignment>,
    f: &mut dyn FnMut(&[Assignment], Vec<i64>) -> bool,
) -> bool {
    if s == slots.len() {
        if choice.is_empty() {
            return false;
        }
        let mut next = residual.to_vec();
        for a in choice.iter() {
            next[a.weight_index] -= i64::from(a.count) * i64::from(a.constant);
        }
        return f(choice, next);
    }
    let (c, k) = slots[s];
    split(residual, slots, s, c, k, 0, choice, f)
}

#[allow(clippy::too_many_arguments)]
fn split(
    residual: &[i64],
    slots: &[(i32, u32)],
    s: usize,
    c: i32,
    left: u32,
    weight: usize,
    choice: &mut Vec<Assignment>,
    f: &mut dyn FnMut(&[Assignment], Vec<i64>) -> bool,
) -> bool {
    if weight == residual.len() {
        return each_cycle(residual, slots, s + 1, choice, f);
    }
    for count in 0..=left {
        if count > 0 {
            choice.push(Assignment { weight_index: weight, constant: c, count });
        }
        let hit = split(residual, slots, s, c, left - count, weight + 1, choice, f);
        if count > 0 {
            choice.pop();
        }
        if hit {
            return true;
        }
    }
    false
}
