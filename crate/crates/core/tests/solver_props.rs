//! Invariants of the constant-selection solver on random instances.

use bespoke_forge::model::NeuronId;
use bespoke_forge::solver::{
    min_cycles_for_neuron, validate_outcome, Optimality, ProblemInstance, Selection,
    SolveBudget, SolveError, SolveMode,
};
use bespoke_forge::solve;
use proptest::prelude::*;
use std::collections::HashSet;

/// Fewest cycles turning `w` into zeros, each cycle adding any one weight per
/// slot times the slot's constant; `None` past `horizon`.
fn breadth_first(w: &[i32], slots: &[i32], horizon: u32) -> Option<u32> {
    let mut frontier: HashSet<Vec<i32>> = HashSet::from([w.to_vec()]);
    for t in 0..=horizon {
        if frontier.iter().any(|r| r.iter().all(|&x| x == 0)) {
            return Some(t);
        }
        let mut next = HashSet::new();
        for r in &frontier {
            // each slot is idle (index len) or feeds one weight
            let choices = (w.len() + 1).pow(slots.len() as u32);
            for mut code in 0..choices {
                let mut r2 = r.clone();
                for &c in slots {
                    let i = code % (w.len() + 1);
                    code /= w.len() + 1;
                    if i < w.len() {
                        r2[i] -= c;
                    }
                }
                if r2.iter().all(|x| x.abs() <= 64) {
                    next.insert(r2);
                }
            }
        }
        frontier = next;
    }
    None
}

fn neurons(max_neurons: usize, max_weights: usize) -> impl Strategy<Value = Vec<(NeuronId, Vec<i32>)>> {
    prop::collection::vec(prop::collection::vec(-8i32..=7, 1..=max_weights), 1..=max_neurons).prop_map(|ws| {
        ws.into_iter().enumerate().map(|(n, w)| (NeuronId::new(0, n), w)).collect()
    })
}

fn candidates(max: usize) -> impl Strategy<Value = Vec<i32>> {
    prop::collection::btree_set(-8i32..=7, 1..=max).prop_map(|s| s.into_iter().collect())
}

fn with_default_horizon(inst: ProblemInstance) -> ProblemInstance {
    let horizon = inst.default_horizon();
    ProblemInstance { horizon, ..inst }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn outcomes_pass_the_validator(ns in neurons(4, 8), cands in candidates(6), budget in 1u32..=6, exact in any::<bool>()) {
        let inst = with_default_horizon(ProblemInstance::new(ns, &cands, budget, 1));
        let mode = if exact { SolveMode::Exact } else { SolveMode::Heuristic };
        match solve(&inst, mode, SolveBudget::work(50_000)) {
            Ok(out) => {
                prop_assert_eq!(validate_outcome(&inst, &out), Ok(()));
                prop_assert!(out.objective >= inst.latency_lower_bound());
                prop_assert!(out.selection.total() <= budget);
            }
            Err(e) => prop_assert!(matches!(e, SolveError::Infeasible(_)), "{e}"),
        }
    }

    #[test]
    fn heuristic_never_beats_exact(ns in neurons(3, 6), cands in candidates(5), budget in 1u32..=5) {
        let inst = with_default_horizon(ProblemInstance::new(ns, &cands, budget, 1));
        let exact = solve(&inst, SolveMode::Exact, SolveBudget::unlimited());
        let heuristic = solve(&inst, SolveMode::Heuristic, SolveBudget::unlimited());
        match (exact, heuristic) {
            (Ok(e), Ok(h)) => {
                prop_assert_eq!(e.optimality, Optimality::ProvedOptimal);
                prop_assert!(e.objective <= h.objective);
            }
            (Ok(_), Err(SolveError::Infeasible(_))) | (Err(SolveError::Infeasible(_)), Err(SolveError::Infeasible(_))) => {}
            (e, h) => prop_assert!(false, "exact {:?} heuristic {:?}", e.err(), h.err()),
        }
    }

    #[test]
    fn optimum_is_monotone_in_budget(ns in neurons(3, 6), cands in candidates(5), budget in 1u32..=5) {
        let small = with_default_horizon(ProblemInstance::new(ns, &cands, budget, 1));
        let large = ProblemInstance { multiplier_budget: budget + 1, ..small.clone() };
        let a = solve(&small, SolveMode::Exact, SolveBudget::unlimited());
        let b = solve(&large, SolveMode::Exact, SolveBudget::unlimited());
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!(b.objective <= a.objective),
            (Err(SolveError::Infeasible(_)), _) => {}
            (Ok(_), Err(e)) => prop_assert!(false, "larger budget failed: {e}"),
            (Err(e), _) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn units_always_suffice(ns in neurons(4, 12)) {
        let mut inst = ProblemInstance::new(ns, &[-1, 1], 2, 1);
        inst.horizon = bespoke_forge::solver::feasibility_guard(&inst).unwrap().max(1);
        let out = solve(&inst, SolveMode::Exact, SolveBudget::unlimited()).unwrap();
        prop_assert_eq!(validate_outcome(&inst, &out), Ok(()));
        // one +1 and one -1 need max(Σ positive, Σ |negative|) cycles; a better pair may exist
        let witness: u64 = inst.neurons.iter().map(|(_, w)| {
            let pos: u64 = w.iter().filter(|&&x| x > 0).map(|&x| x as u64).sum();
            let neg: u64 = w.iter().filter(|&&x| x < 0).map(|&x| (-x) as u64).sum();
            pos.max(neg)
        }).sum();
        prop_assert!(out.objective <= witness);
    }

    #[test]
    fn per_neuron_minimum_matches_breadth_first(w in prop::collection::vec(-8i32..=7, 1..=3), multiset in prop::collection::vec(-8i32..=7, 1..=3)) {
        let selection = Selection::from_multiset(&multiset);
        let fixed = min_cycles_for_neuron(&w, &selection, 6);
        match (fixed, breadth_first(&w, &multiset, 6)) {
            (Ok((l, cycles)), Some(b)) => {
                prop_assert_eq!(l as usize, cycles.len());
                prop_assert_eq!(l, b);
            }
            (Err(SolveError::Infeasible(_)), None) => {}
            (f, b) => prop_assert!(false, "per-neuron {:?} breadth-first {:?}", f, b),
        }
    }
}

#[test]
fn exact_search_respects_a_work_limit() {
    let ns = (0..6).map(|n| (NeuronId::new(0, n), (0..20).map(|i| ((n * 7 + i * 5) % 16) as i32 - 8).collect())).collect();
    let inst = with_default_horizon(ProblemInstance::new(ns, &(-8..=7).collect::<Vec<_>>(), 8, 1));
    let out = solve(&inst, SolveMode::Exact, SolveBudget::work(10)).unwrap();
    assert_eq!(validate_outcome(&inst, &out), Ok(()));
    assert_ne!(out.optimality, Optimality::ProvedOptimal);
}
