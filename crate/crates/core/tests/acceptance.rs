//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::fs;
use std::path::Path;
use std::time::Instant;

use bespoke_forge::cli::{cmd_compile, CompileArgs, ModeArg, SolverArgs};
use bespoke_forge::codegen::{build_config, emit_call_program, max_slots, DEFAULT_ACCUMULATOR_BITS};
use bespoke_forge::cost::{bespoke_mult_cost, conventional_mult_cost, monte_carlo, MonteCarloConfig};
use bespoke_forge::model::{generate_sample_model, random_input, NeuronId, SampleSpec, REFERENCE_TOPOLOGIES};
use bespoke_forge::sim::{run_inference, simulate_baseline, MachineConfig};
use bespoke_forge::solver::{
    brute_force_solve, feasibility_guard, validate_outcome, ProblemInstance, Selection, SolveBudget, SolveError,
    SolveMode,
};
use bespoke_forge::{mac_count, reference_inference, solve};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn instance(rng: &mut ChaCha8Rng, max_neurons: usize, max_weights: usize) -> Vec<(NeuronId, Vec<i32>)> {
    let neurons = rng.gen_range(1..=max_neurons);
    (0..neurons)
        .map(|n| {
            let len = rng.gen_range(1..=max_weights);
            (NeuronId::new(0, n), (0..len).map(|_| rng.gen_range(-8..=7)).collect())
        })
        .collect()
}

fn criterion_1() -> Check {
    let expected = [594, 2610, 360, 576, 435, 3969, 702, 675, 891];
    for ((name, topo, bits), want) in REFERENCE_TOPOLOGIES.iter().zip(expected) {
        let model = generate_sample_model(&SampleSpec::new(topo, *bits, 1)).map_err(|e| e.to_string())?;
        let by_hand: usize = topo.windows(2).map(|d| d[0] * d[1]).sum();
        let got = mac_count(&model);
        if got != want || by_hand != want {
            return Err(format!("{name}: mac_count {got}, pairwise product sum {by_hand}, expected {want}"));
        }
    }
    Ok("nine MAC counts exact".into())
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut solved, mut infeasible) = (0, 0);
    for k in 0..500 {
        let neurons = instance(&mut rng, 4, 10);
        let mut pool: Vec<i32> = (-8..=7).filter(|&c| c != 0).collect();
        pool.shuffle(&mut rng);
        let mut cands = pool[..rng.gen_range(2..=8)].to_vec();
        if rng.gen_bool(0.5) {
            cands.extend([1, -1]);
        }
        let budget = rng.gen_range(1..=8);
        let inst = ProblemInstance::new(neurons, &cands, budget, 1);
        let inst = ProblemInstance { horizon: inst.default_horizon(), ..inst };
        let mode = if k % 2 == 0 { SolveMode::Exact } else { SolveMode::Heuristic };
        match solve(&inst, mode, SolveBudget::work(200_000)) {
            Ok(out) => {
                validate_outcome(&inst, &out).map_err(|v| format!("instance {k}: {v:?}"))?;
                solved += 1;
            }
            Err(SolveError::Infeasible(_)) => infeasible += 1,
            Err(e) => return Err(format!("instance {k}: {e}")),
        }
    }
    if solved < 250 {
        return Err(format!("only {solved} of 500 instances produced a schedule"));
    }
    Ok(format!("{solved} outcomes valid, {infeasible} infeasible"))
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut feasible, mut infeasible, mut tried) = (0, 0, 0);
    while feasible < 200 {
        tried += 1;
        if tried > 2000 {
            return Err(format!("only {feasible} feasible instances after 2000 draws"));
        }
        let neurons = instance(&mut rng, 3, 4);
        let mut pool: Vec<i32> = (-8..=7).collect();
        pool.shuffle(&mut rng);
        let cands = &pool[..rng.gen_range(1..=5)];
        let inst = ProblemInstance::new(neurons, cands, rng.gen_range(1..=4), rng.gen_range(1..=6));
        let brute = brute_force_solve(&inst);
        let exact = solve(&inst, SolveMode::Exact, SolveBudget::unlimited());
        match (brute, exact) {
            (Ok(b), Ok(e)) => {
                if b.objective != e.objective {
                    return Err(format!("{inst:?}: exact {} vs brute force {}", e.objective, b.objective));
                }
                validate_outcome(&inst, &e).map_err(|v| format!("{inst:?}: {v:?}"))?;
                feasible += 1;
            }
            (Err(SolveError::Infeasible(_)), Err(SolveError::Infeasible(_))) => infeasible += 1,
            (b, e) => return Err(format!("{inst:?}: brute force {:?} vs exact {:?}", b.err(), e.err())),
        }
    }
    Ok(format!("{feasible} optimal objectives match, {infeasible} agreed infeasible"))
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..200 {
        let neurons = instance(&mut rng, 5, 16);
        let mut inst = ProblemInstance::new(neurons, &[1, -1], 2, 1);
        inst.horizon = feasibility_guard(&inst).map_err(|e| e.to_string())?.max(1);
        let out = solve(&inst, SolveMode::Exact, SolveBudget::unlimited()).map_err(|e| format!("instance {k}: {e}"))?;
        validate_outcome(&inst, &out).map_err(|v| format!("instance {k}: {v:?}"))?;
    }
    Ok("200 instances feasible with one +1 and one -1".into())
}

fn criterion_5() -> Check {
    let inst = ProblemInstance::new(vec![(NeuronId::new(0, 0), vec![18])], &[3, 15], 2, 4);
    let out = solve(&inst, SolveMode::Exact, SolveBudget::unlimited()).map_err(|e| e.to_string())?;
    let cycles = &out.schedule.neurons[0].cycles;
    let used: Vec<(usize, i32, u32)> = cycles[0].iter().map(|a| (a.weight_index, a.constant, a.count)).collect();
    if out.objective != 1 || cycles.len() != 1 || used != [(0, 3, 1), (0, 15, 1)] {
        return Err(format!("schedule {cycles:?} with L = {}", out.objective));
    }
    let config = build_config(&Selection::from_multiset(&[3, 15]), 4, DEFAULT_ACCUMULATOR_BITS).map_err(|e| e.to_string())?;
    let x = 5;
    let (a, b) = config.pack(&[x, x]).map_err(|e| e.to_string())?;
    if (a, b) != (0x55, 0) || config.unpack(a, b) != [x, x] {
        return Err(format!("operand words {a:#x} {b:#x}"));
    }
    Ok("18 = 3 + 15 in one cycle, x in both slots".into())
}

fn criterion_6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..100u64 {
        let bits = if k % 2 == 0 { 4 } else { 5 };
        let topo = [rng.gen_range(2..=24), rng.gen_range(1..=8), rng.gen_range(1..=6)];
        let model = generate_sample_model(&SampleSpec::new(&topo, bits, 1000 + k)).map_err(|e| e.to_string())?;
        let inst = ProblemInstance::from_model(&model, &(-8..=7).collect::<Vec<_>>(), max_slots(bits), None);
        let out = solve(&inst, SolveMode::Exact, SolveBudget::work(100_000)).map_err(|e| format!("pair {k}: {e}"))?;
        let config = build_config(&out.selection, bits, DEFAULT_ACCUMULATOR_BITS).map_err(|e| e.to_string())?;
        let input = random_input(&model, &mut rng);
        let program = emit_call_program(&out.schedule, &config, &model, &input).map_err(|e| e.to_string())?;
        let report = run_inference(&model, &program, &MachineConfig::ours(config), &input).map_err(|e| e.to_string())?;
        let reference = reference_inference(&model, &input).map_err(|e| e.to_string())?;
        if report.outputs != reference.outputs {
            return Err(format!("pair {k}: {:?} vs reference {:?}", report.outputs, reference.outputs));
        }
        if report.coproc_calls != out.objective {
            return Err(format!("pair {k}: {} calls, L = {}", report.coproc_calls, out.objective));
        }
    }
    Ok("100 pairs bit-exact, calls equal L".into())
}

fn criterion_7() -> Check {
    for (bits, fits) in [(4u32, 16usize), (5, 12)] {
        let ok = build_config(&Selection::from_multiset(&vec![1; fits]), bits, DEFAULT_ACCUMULATOR_BITS);
        let over = build_config(&Selection::from_multiset(&vec![1; fits + 1]), bits, DEFAULT_ACCUMULATOR_BITS);
        if ok.is_err() || over.is_ok() || (fits as u32 * bits) > 64 {
            return Err(format!("{bits}-bit: {fits} slots -> {ok:?}, {} -> {over:?}", fits + 1));
        }
    }
    Ok("16 slots at 4 bits, 12 at 5 bits".into())
}

fn criterion_8() -> Check {
    let mut ratios = Vec::new();
    for (name, topo, bits) in REFERENCE_TOPOLOGIES {
        let model = generate_sample_model(&SampleSpec::new(topo, bits, 1)).map_err(|e| e.to_string())?;
        let inst = ProblemInstance::from_model(&model, &(-8..=7).collect::<Vec<_>>(), max_slots(bits), None);
        let out = solve(&inst, SolveMode::Exact, SolveBudget::work(3_000_000)).map_err(|e| format!("{name}: {e}"))?;
        let config = build_config(&out.selection, bits, DEFAULT_ACCUMULATOR_BITS).map_err(|e| e.to_string())?;
        let input = random_input(&model, &mut ChaCha8Rng::seed_from_u64(8));
        let program = emit_call_program(&out.schedule, &config, &model, &input).map_err(|e| e.to_string())?;
        let ours = run_inference(&model, &program, &MachineConfig::ours(config), &input).map_err(|e| e.to_string())?;
        let semi = simulate_baseline(&model, &MachineConfig::semibespoke(bits), &input).map_err(|e| e.to_string())?;
        let flex = simulate_baseline(&model, &MachineConfig::flexrv(), &input).map_err(|e| e.to_string())?;
        let (b, s, f) = (ours.coproc_calls, semi.coproc_calls, flex.coproc_calls);
        let ratio = f as f64 / b as f64;
        if !(b <= s && s <= f) || !(2.0..=4.0).contains(&ratio) {
            return Err(format!("{name}: bespoke {b}, semibespoke {s}, flexrv {f}, ratio {ratio:.3}"));
        }
        ratios.push(format!("{name} {ratio:.2}"));
    }
    Ok(format!("flexrv/bespoke calls: {}", ratios.join(", ")))
}

fn criterion_9() -> Check {
    let conventional = conventional_mult_cost(4, 4).area_units;
    let bespoke: f64 = (-8..=7).map(|c| bespoke_mult_cost(c, 4).area_units).sum::<f64>() / 16.0;
    let ratio = conventional / bespoke;
    if ratio < 2.0 {
        return Err(format!("conventional {conventional} vs mean bespoke {bespoke}: ratio {ratio:.3}"));
    }
    let report = monte_carlo(&MonteCarloConfig::default());
    for pair in report.summaries.windows(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        if lo.area.median >= hi.area.median || lo.power.median >= hi.power.median {
            return Err(format!("medians not increasing from {} to {}", lo.multipliers, hi.multipliers));
        }
        if lo.area.q3 >= hi.area.q1 {
            return Err(format!(
                "interquartile ranges overlap between {} ({}) and {} ({})",
                lo.multipliers, lo.area.q3, hi.multipliers, hi.area.q1
            ));
        }
    }
    Ok(format!("area ratio {ratio:.2}, medians monotone, IQRs disjoint"))
}

fn compile_once(model: &Path, out: &Path) -> Result<(), String> {
    let args = CompileArgs {
        model: model.to_path_buf(),
        solver: SolverArgs {
            budget: None,
            candidates: None,
            mode: ModeArg::Exact,
            time_limit: None,
            work_limit: None,
            horizon: None,
            accumulator_bits: DEFAULT_ACCUMULATOR_BITS,
        },
        budget_sweep: None,
        seed: 0,
        reproducible: true,
        out_dir: out.to_path_buf(),
    };
    cmd_compile(&args).map_err(|e| e.to_json())
}

fn criterion_10() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (name, topo, bits) = REFERENCE_TOPOLOGIES[0];
    let model = generate_sample_model(&SampleSpec::new(topo, bits, 1)).map_err(|e| e.to_string())?;
    let path = dir.path().join(format!("{name}.json"));
    fs::write(&path, model.to_canonical_json()).map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    compile_once(&path, &a)?;
    compile_once(&path, &b)?;
    let files = ["solution.json", "coproc.v", "coproc_manifest.json", "program.json", "core_program.c", "manifest.json"];
    for f in files {
        let (x, y) = (fs::read(a.join(f)).map_err(|e| e.to_string())?, fs::read(b.join(f)).map_err(|e| e.to_string())?);
        if x != y {
            return Err(format!("{f} differs between runs"));
        }
    }
    Ok(format!("{} artifacts byte-identical", files.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("MAC counts", criterion_1),
        ("validator on random instances", criterion_2),
        ("exact matches brute force", criterion_3),
        ("+1/-1 feasibility", criterion_4),
        ("18 from {3, 15}", criterion_5),
        ("functional equivalence", criterion_6),
        ("budget geometry", criterion_7),
        ("call-count ordering", criterion_8),
        ("cost-model trends", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.2}s)", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({secs:.2}s)", n + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
