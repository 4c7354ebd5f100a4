//! The simulated machines agree with reference inference.

use bespoke_forge::codegen::{build_config, emit_call_program, DEFAULT_ACCUMULATOR_BITS};
use bespoke_forge::model::{generate_sample_model, random_input, SampleSpec};
use bespoke_forge::sim::{compare, run_inference, simulate_baseline, MachineConfig, Op};
use bespoke_forge::solver::{ProblemInstance, SolveBudget, SolveMode};
use bespoke_forge::{reference_inference, solve};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_machine_matches_the_reference(
        topo in (2usize..=16, 1usize..=6, 1usize..=4),
        bits in prop::sample::select(vec![3u32, 4, 5]),
        seed in any::<u64>(),
    ) {
        let model = generate_sample_model(&SampleSpec::new(&[topo.0, topo.1, topo.2], bits, seed)).unwrap();
        let budget = 64 / bits;
        let inst = ProblemInstance::from_model(&model, &(-8..=7).collect::<Vec<_>>(), budget, None);
        let out = solve(&inst, SolveMode::Heuristic, SolveBudget::unlimited()).unwrap();
        let config = build_config(&out.selection, bits, DEFAULT_ACCUMULATOR_BITS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let bound = random_input(&model, &mut rng);
        let program = emit_call_program(&out.schedule, &config, &model, &bound).unwrap();
        // a program replays on inputs other than the one it was packed for
        for input in [bound.clone(), random_input(&model, &mut rng)] {
            let reference = reference_inference(&model, &input).unwrap();
            let ours = run_inference(&model, &program, &MachineConfig::ours(config.clone()), &input).unwrap();
            prop_assert_eq!(&ours.outputs, &reference.outputs);
            prop_assert_eq!(ours.coproc_calls, out.objective);
            prop_assert_eq!(ours.per_neuron_cycles.values().sum::<u64>() <= ours.total_cycles, true);
            let calls = ours.op_counts.get(&Op::CoprocCall).copied().unwrap_or(0);
            prop_assert_eq!(calls, out.objective);
            for machine in [MachineConfig::flexrv(), MachineConfig::semibespoke(bits), MachineConfig::serv_only()] {
                let r = simulate_baseline(&model, &machine, &input).unwrap();
                prop_assert_eq!(&r.outputs, &reference.outputs);
            }
        }
    }
}

#[test]
fn doubling_memory_latency_never_speeds_up() {
    let model = generate_sample_model(&SampleSpec::new(&[20, 6, 3], 4, 9)).unwrap();
    let input = random_input(&model, &mut ChaCha8Rng::seed_from_u64(9));
    for base in [MachineConfig::flexrv(), MachineConfig::serv_only()] {
        let mut slow = base.clone();
        slow.mem_read_cycles *= 2;
        let fast = simulate_baseline(&model, &base, &input).unwrap();
        let slow = simulate_baseline(&model, &slow, &input).unwrap();
        assert!(slow.total_cycles > fast.total_cycles);
        assert_eq!(slow.outputs, fast.outputs);
    }
}

#[test]
fn comparison_is_relative_to_the_first_report() {
    let model = generate_sample_model(&SampleSpec::new(&[12, 4, 2], 4, 3)).unwrap();
    let input = random_input(&model, &mut ChaCha8Rng::seed_from_u64(3));
    let flex = simulate_baseline(&model, &MachineConfig::flexrv(), &input).unwrap();
    let serv = simulate_baseline(&model, &MachineConfig::serv_only(), &input).unwrap();
    let table = compare(&[flex.clone(), serv.clone()]).unwrap();
    let expected = serv.wall_time_s / flex.wall_time_s;
    assert!((table.rows[1].speedup - expected).abs() < 1e-12);
    assert_eq!(table.rows[0].speedup, 1.0);
}
