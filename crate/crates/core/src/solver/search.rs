//! Outer search over constant selections.
//!
//! Neurons with the same weight histogram have the same latency under every
//! selection, so they are merged into one profile with a multiplicity. Only
//! selections that use the whole budget are enumerated: adding a multiplier
//! never lengthens a schedule. The returned selection is trimmed afterwards to
//! the per-cycle peak usage of the schedule.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;
use std::time::Instant;

use super::neuron::{build_cycles, capacity_lower_bound, latency_lower_bound, Bank, Capacity, NeuronScheduler, Plan, Profile};
use super::{
    InferenceSchedule, NeuronSchedule, Optimality, ProblemInstance, Selection, SolveBudget, SolveError, SolveMode,
    SolveOutcome, SolveStats,
};

const CACHE_CAP: usize = 1 << 18;
const FILLERS: [i32; 4] = [1, -1, 2, -2];

/// Budget ran out.
struct Stop;

struct Incumbent {
    counts: Vec<u32>,
    objective: u64,
    /// Found by the ordered enumeration, so ties no longer replace it.
    in_order: bool,
}

struct Searcher<'a> {
    instance: &'a ProblemInstance,
    profiles: Vec<Profile>,
    multiplicity: Vec<u64>,
    neuron_profile: Vec<usize>,
    /// Per profile entry, the index of its value in `constants`.
    entry_const: Vec<Vec<Option<usize>>>,
    constants: Vec<i32>,
    budget: u32,
    scheduler: NeuronScheduler,
    cache: HashMap<(usize, Bank), Result<Rc<Plan>, SolveError>>,
    selections_evaluated: u64,
    neuron_solves: u64,
    cache_hits: u64,
    best: Option<Incumbent>,
    global_lb: u64,
}

/// Solves the instance. Exact mode proves optimality when the search space
/// is exhausted within `budget`; otherwise it returns the best schedule found.
/// Heuristic mode returns the frequency-greedy selection with optimal
/// per-neuron schedules.
pub fn solve(instance: &ProblemInstance, mode: SolveMode, budget: SolveBudget) -> Result<SolveOutcome, SolveError> {
    instance.validate()?;
    let start = Instant::now();
    let mut s = Searcher::new(instance, budget, start);
    // the seed selection is always completed so a limited run still has an incumbent
    let (work_limit, deadline) = (s.scheduler.work_limit.take(), s.scheduler.deadline.take());
    let seeded = s.heuristic().is_ok();
    s.scheduler.work_limit = work_limit;
    s.scheduler.deadline = deadline;
    let finished = match mode {
        SolveMode::Heuristic => seeded,
        SolveMode::Exact => seeded && s.local_search().and_then(|_| s.branch_and_bound()).is_ok(),
    };
    let Some(best) = s.best.take() else {
        return Err(if finished {
            SolveError::Infeasible(format!(
                "no selection of {} multipliers schedules every neuron within {} cycles",
                instance.multiplier_budget, instance.horizon
            ))
        } else {
            SolveError::TimeBudgetExceeded
        });
    };
    let optimality = match (mode, finished) {
        (_, false) => Optimality::TimedOutBest,
        (SolveMode::Heuristic, true) => Optimality::Heuristic,
        (SolveMode::Exact, true) => Optimality::ProvedOptimal,
    };
    let schedule = s.materialize(&best.counts)?;
    debug_assert_eq!(schedule.total_latency(), best.objective);
    Ok(SolveOutcome {
        selection: schedule.peak_usage(),
        objective: schedule.total_latency(),
        schedule,
        optimality,
        stats: SolveStats {
            nodes: s.scheduler.work,
            selections_evaluated: s.selections_evaluated,
            neuron_solves: s.neuron_solves,
            cache_hits: s.cache_hits,
            wall_time_ms: Some(start.elapsed().as_millis() as u64),
        },
    })
}

impl<'a> Searcher<'a> {
    fn new(instance: &'a ProblemInstance, budget: SolveBudget, start: Instant) -> Self {
        let mut index: BTreeMap<Profile, usize> = BTreeMap::new();
        let (mut profiles, mut multiplicity, mut neuron_profile) = (Vec::new(), Vec::new(), Vec::new());
        for (_, w) in &instance.neurons {
            let p = Profile::of(w);
            let i = *index.entry(p.clone()).or_insert_with(|| {
                profiles.push(p);
                multiplicity.push(0);
                profiles.len() - 1
            });
            multiplicity[i] += 1;
            neuron_profile.push(i);
        }
        let constants: Vec<i32> = instance.candidates.iter().copied().filter(|&c| c != 0).collect();
        let entry_const = profiles
            .iter()
            .map(|p| p.entries.iter().map(|(v, _)| constants.binary_search(v).ok()).collect())
            .collect();
        let mut scheduler = NeuronScheduler::new();
        scheduler.work_limit = budget.work_limit;
        scheduler.deadline = budget.time_limit.map(|d| start + d);
        Self {
            instance,
            profiles,
            multiplicity,
            neuron_profile,
            entry_const,
            constants,
            budget: instance.multiplier_budget,
            scheduler,
            cache: HashMap::new(),
            selections_evaluated: 0,
            neuron_solves: 0,
            cache_hits: 0,
            best: None,
            global_lb: instance.latency_lower_bound(),
        }
    }

    fn bank(&self, counts: &[u32]) -> Bank {
        Bank::of(&Selection::from_counts(self.constants.iter().copied().zip(counts.iter().copied())))
    }

    fn tick(&mut self) -> Result<(), Stop> {
        self.scheduler.work += 1;
        if self.scheduler.exhausted() {
            Err(Stop)
        } else {
            Ok(())
        }
    }

    fn plan(&mut self, profile: usize, bank: &Bank) -> Result<Rc<Plan>, SolveError> {
        let key = (profile, bank.clone());
        if let Some(r) = self.cache.get(&key) {
            self.cache_hits += 1;
            return r.clone();
        }
        self.neuron_solves += 1;
        let r = self.scheduler.solve(&self.profiles[profile], bank, self.instance.horizon).map(Rc::new);
        if r != Err(SolveError::TimeBudgetExceeded) {
            if self.cache.len() >= CACHE_CAP {
                self.cache.clear();
            }
            self.cache.insert(key, r.clone());
        }
        r
    }

    /// Objective under `counts`, or `None` if infeasible or above `cutoff`.
    fn evaluate(&mut self, counts: &[u32], cutoff: Option<u64>) -> Result<Option<u64>, Stop> {
        self.tick()?;
        self.selections_evaluated += 1;
        let bank = self.bank(counts);
        let mut lbs = Vec::with_capacity(self.profiles.len());
        for p in &self.profiles {
            match latency_lower_bound(p, &bank, self.instance.horizon) {
                Some(lb) => lbs.push(u64::from(lb)),
                None => return Ok(None),
            }
        }
        let mut total: u64 = lbs.iter().zip(&self.multiplicity).map(|(l, m)| l * m).sum();
        let over = |t: u64| cutoff.is_some_and(|c| t > c);
        if over(total) {
            return Ok(None);
        }
        for (p, lb) in lbs.into_iter().enumerate() {
            let latency = match self.plan(p, &bank) {
                Ok(plan) => u64::from(plan.latency),
                Err(SolveError::TimeBudgetExceeded) => return Err(Stop),
                Err(_) => return Ok(None),
            };
            total += (latency - lb) * self.multiplicity[p];
            if over(total) {
                return Ok(None);
            }
        }
        Ok(Some(total))
    }

    /// Largest objective a new candidate may have to be accepted.
    fn cutoff(&self) -> Option<u64> {
        self.best.as_ref().map(|b| if b.in_order { b.objective.saturating_sub(1) } else { b.objective })
    }

    fn accepts(&self, objective: u64, in_order: bool) -> bool {
        match &self.best {
            None => true,
            Some(b) => objective < b.objective || (in_order && !b.in_order && objective == b.objective),
        }
    }

    fn offer(&mut self, counts: &[u32], objective: u64, in_order: bool) {
        if self.accepts(objective, in_order) {
            self.best = Some(Incumbent { counts: counts.to_vec(), objective, in_order });
        }
    }

    /// Largest-remainder allocation of slots to weight values by frequency,
    /// reserving `fillers` slots for ±1/±2 so every weight stays composable.
    /// Each filler count is tried and the best is kept.
    fn heuristic(&mut self) -> Result<(), Stop> {
        let mut freq: BTreeMap<usize, u64> = BTreeMap::new();
        for (p, prof) in self.profiles.iter().enumerate() {
            for (&(_, m), j) in prof.entries.iter().zip(&self.entry_const[p]) {
                if let Some(j) = j {
                    *freq.entry(*j).or_insert(0) += u64::from(m) * self.multiplicity[p];
                }
            }
        }
        let fillers: Vec<usize> = FILLERS.iter().filter_map(|f| self.constants.binary_search(f).ok()).collect();
        if self.constants.is_empty() {
            return self.evaluate(&[], None).map(|o| {
                if let Some(obj) = o {
                    self.offer(&[], obj, false);
                }
            });
        }
        let m = self.budget as usize;
        for f in 0..=fillers.len().min(m) {
            let mut counts = vec![0u32; self.constants.len()];
            for &j in &fillers[..f] {
                counts[j] += 1;
            }
            for _ in f..m {
                // D'Hondt quotient freq / (k + 1); ties go to the smaller constant
                let pick = freq
                    .iter()
                    .max_by(|(&a, &fa), (&b, &fb)| {
                        let (ka, kb) = (u64::from(counts[a]) + 1, u64::from(counts[b]) + 1);
                        (fa * kb).cmp(&(fb * ka)).then(b.cmp(&a))
                    })
                    .map(|(&j, _)| j);
                let j = pick.or_else(|| fillers.first().copied()).unwrap_or(0);
                counts[j] += 1;
            }
            let cutoff = self.best.as_ref().map(|b| b.objective.saturating_sub(1));
            if let Some(obj) = self.evaluate(&counts, cutoff)? {
                self.offer(&counts, obj, false);
            }
        }
        Ok(())
    }

    /// First-improvement descent moving one multiplier between constants.
    fn local_search(&mut self) -> Result<(), Stop> {
        let Some(mut counts) = self.best.as_ref().map(|b| b.counts.clone()) else {
            return Ok(());
        };
        let n = self.constants.len();
        'descent: loop {
            if self.best.as_ref().is_some_and(|b| b.objective <= self.global_lb) {
                return Ok(());
            }
            let target = self.best.as_ref().map(|b| b.objective - 1);
            for a in 0..n {
                if counts[a] == 0 {
                    continue;
                }
                for b in (0..n).filter(|&b| b != a) {
                    counts[a] -= 1;
                    counts[b] += 1;
                    if let Some(obj) = self.evaluate(&counts, target)? {
                        self.offer(&counts, obj, false);
                        continue 'descent;
                    }
                    counts[b] -= 1;
                    counts[a] += 1;
                }
            }
            return Ok(());
        }
    }

    /// Enumerates full-budget multisets in lexicographic order (more copies of
    /// smaller constants first) with a per-profile relaxation bound.
    fn branch_and_bound(&mut self) -> Result<(), Stop> {
        let mut counts = vec![0u32; self.constants.len()];
        self.bnb(0, self.budget, &mut counts)
    }

    fn done(&self) -> bool {
        self.best.as_ref().is_some_and(|b| b.in_order && b.objective <= self.global_lb)
    }

    fn bnb(&mut self, j: usize, rem: u32, counts: &mut Vec<u32>) -> Result<(), Stop> {
        self.tick()?;
        let n = self.constants.len();
        if j + 1 >= n {
            if j < n {
                counts[j] = rem;
            }
            let cutoff = self.cutoff();
            if let Some(obj) = self.evaluate(counts, cutoff)? {
                self.offer(counts, obj, true);
            }
            if j < n {
                counts[j] = 0;
            }
            return Ok(());
        }
        match (self.node_bound(j, rem, counts), self.cutoff()) {
            (None, _) => return Ok(()),
            (Some(lb), Some(c)) if lb > c => return Ok(()),
            _ => {}
        }
        for k in (0..=rem).rev() {
            counts[j] = k;
            self.bnb(j + 1, rem - k, counts)?;
            if self.done() {
                break;
            }
        }
        counts[j] = 0;
        Ok(())
    }

    /// Lower bound on the objective of every completion where constants
    /// `j..` share the remaining `rem` multipliers. `None` if none is feasible.
    fn node_bound(&self, j: usize, rem: u32, counts: &[u32]) -> Option<u64> {
        let (mut pos, mut neg) = (0i64, 0i64);
        for (i, &c) in self.constants.iter().enumerate().take(j) {
            let m = i64::from(c.unsigned_abs()) * i64::from(counts[i]);
            if c > 0 {
                pos += m;
            } else {
                neg += m;
            }
        }
        let open = &self.constants[j..];
        let rem_i = i64::from(rem);
        pos += rem_i * open.iter().copied().max().map_or(0, |c| i64::from(c.max(0)));
        neg += rem_i * open.iter().copied().min().map_or(0, |c| i64::from((-c).max(0)));
        let mut total = 0u64;
        for (p, prof) in self.profiles.iter().enumerate() {
            let cap = Capacity {
                total: u64::from(self.budget),
                pos_mass: pos,
                neg_mass: neg,
                direct: |v: i32| match self.constants.binary_search(&v) {
                    Ok(i) if i < j => Some(u64::from(counts[i])),
                    Ok(_) => None,
                    Err(_) => Some(0),
                },
            };
            total += u64::from(capacity_lower_bound(prof, &cap, self.instance.horizon)?) * self.multiplicity[p];
        }
        Some(total)
    }

    fn materialize(&mut self, counts: &[u32]) -> Result<InferenceSchedule, SolveError> {
        self.scheduler.work_limit = None;
        self.scheduler.deadline = None;
        let bank = self.bank(counts);
        let mut neurons = Vec::with_capacity(self.instance.neurons.len());
        for (n, (id, weights)) in self.instance.neurons.iter().enumerate() {
            let p = self.neuron_profile[n];
            let plan = self.plan(p, &bank)?;
            neurons.push(NeuronSchedule { id: *id, cycles: build_cycles(weights, &self.profiles[p], &plan, &bank) });
        }
        Ok(InferenceSchedule { neurons })
    }
}
