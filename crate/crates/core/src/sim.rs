//! Functional co-processor simulation with a parametric host cycle model.
//!
//! The host is a bit-serial core whose every instruction costs
//! `core_cycles_per_instruction` cycles and whose memory accesses go through
//! a slow serial interface. Cycle costs are parameters, not measurements: the
//! defaults are uncalibrated and only ratios and bounds are meaningful.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::{CallProgram, CodegenError, CoprocConfig, InstId};
use crate::cost::{coproc_cost, CoprocSpec};
use crate::model::{signed_range, Activation, ModelError, NeuronId, QuantizedMlp};

pub const DEFAULT_CLOCK_HZ: u64 = 150_000;
pub const DEFAULT_MEM_READ_CYCLES: u64 = 46;
pub const DEFAULT_MEM_WRITE_CYCLES: u64 = 47;
pub const DEFAULT_CORE_CPI: u64 = 32;
pub const DEFAULT_HANDSHAKE_CYCLES: u64 = 1;
/// Power proxy of the host core, in the cost model's units.
pub const CORE_POWER_UNITS: f64 = 100.0;
/// Width of the host's general-purpose registers.
const CORE_BITS: u32 = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("program/config mismatch: {0}")]
    ProgramConfigMismatch(String),
    #[error("accumulator overflow in neuron {neuron}: {value} does not fit {bits} bits")]
    AccumulatorOverflow { neuron: NeuronId, value: i64, bits: u32 },
    #[error("machine {0} has no co-processor of the required kind")]
    WrongMachine(String),
    #[error("reports cover different models: {0} vs {1}")]
    MismatchedModels(String, String),
    #[error("comparison needs at least two reports")]
    TooFewReports,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<CodegenError> for SimError {
    fn from(e: CodegenError) -> Self {
        match e {
            CodegenError::Model(m) => SimError::Model(m),
            other => SimError::ProgramConfigMismatch(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coproc {
    Bespoke(CoprocConfig),
    ConventionalMac { multipliers: Vec<(u32, u32)>, accumulator_bits: u32 },
    /// No co-processor: products are computed by shift-and-add on the core.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub name: String,
    pub coproc: Coproc,
    pub clock_hz: u64,
    pub mem_read_cycles: u64,
    pub mem_write_cycles: u64,
    pub core_cycles_per_instruction: u64,
    pub coproc_handshake_cycles: u64,
    pub calibration: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    MemRead,
    MemWrite,
    AluOp,
    CoprocCall,
    Branch,
}

pub fn serv_cost_model(op: Op, machine: &MachineConfig) -> u64 {
    match op {
        Op::MemRead => machine.mem_read_cycles,
        Op::MemWrite => machine.mem_write_cycles,
        Op::AluOp | Op::Branch => machine.core_cycles_per_instruction,
        Op::CoprocCall => machine.core_cycles_per_instruction + machine.coproc_handshake_cycles,
    }
}

/// Flex-RV style bank: two 8x4 and two 4x4 multipliers.
pub fn flexrv_multipliers() -> Vec<(u32, u32)> {
    vec![(8, 4), (8, 4), (4, 4), (4, 4)]
}

/// Semi-bespoke bank: eight 4x4 multipliers at 4-bit activations, seven 5x4 otherwise.
pub fn semibespoke_multipliers(activation_bits: u32) -> Vec<(u32, u32)> {
    if activation_bits <= 4 {
        vec![(4, 4); 8]
    } else {
        vec![(activation_bits, 4); 7]
    }
}

impl MachineConfig {
    fn with(name: &str, coproc: Coproc) -> Self {
        Self {
            name: name.into(),
            coproc,
            clock_hz: DEFAULT_CLOCK_HZ,
            mem_read_cycles: DEFAULT_MEM_READ_CYCLES,
            mem_write_cycles: DEFAULT_MEM_WRITE_CYCLES,
            core_cycles_per_instruction: DEFAULT_CORE_CPI,
            coproc_handshake_cycles: DEFAULT_HANDSHAKE_CYCLES,
            calibration: "uncalibrated".into(),
        }
    }

    pub fn ours(config: CoprocConfig) -> Self {
        Self::with("ours", Coproc::Bespoke(config))
    }

    pub fn flexrv() -> Self {
        Self::with(
            "flexrv",
            Coproc::ConventionalMac {
                multipliers: flexrv_multipliers(),
                accumulator_bits: crate::codegen::DEFAULT_ACCUMULATOR_BITS,
            },
        )
    }

    pub fn semibespoke(activation_bits: u32) -> Self {
        Self::with(
            "semibespoke",
            Coproc::ConventionalMac {
                multipliers: semibespoke_multipliers(activation_bits),
                accumulator_bits: crate::codegen::DEFAULT_ACCUMULATOR_BITS,
            },
        )
    }

    pub fn serv_only() -> Self {
        Self::with("serv-only", Coproc::None)
    }

    /// Co-processor power proxy; zero without a co-processor.
    pub fn coproc_power(&self) -> f64 {
        match &self.coproc {
            Coproc::Bespoke(cfg) => coproc_cost(&CoprocSpec::Bespoke(cfg.clone())).power_units,
            Coproc::ConventionalMac { multipliers, accumulator_bits } => {
                coproc_cost(&CoprocSpec::Conventional {
                    multipliers: multipliers.clone(),
                    accumulator_bits: *accumulator_bits,
                })
                .power_units
            }
            Coproc::None => 0.0,
        }
    }
}

/// MACs one conventional call performs: bounded by the multipliers and by how
/// many weight/activation pairs fit the operand registers.
pub fn macs_per_call(multipliers: usize, weight_bits: u32, activation_bits: u32) -> usize {
    multipliers.min((crate::codegen::REGISTER_BITS / (weight_bits + activation_bits)) as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub machine: MachineConfig,
    pub model: String,
    pub input: Vec<i32>,
    pub coproc_calls: u64,
    pub total_cycles: u64,
    /// `total_cycles / clock_hz`, the correctly rounded quotient of the two integers.
    pub wall_time_s: f64,
    pub per_neuron_cycles: BTreeMap<NeuronId, u64>,
    pub op_counts: BTreeMap<Op, u64>,
    pub power_proxy: f64,
    pub energy_proxy: f64,
    pub outputs: Vec<i32>,
    pub argmax: usize,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        crate::canonical_json(self)
    }
}

struct Meter<'a> {
    machine: &'a MachineConfig,
    cycles: u64,
    ops: BTreeMap<Op, u64>,
}

impl<'a> Meter<'a> {
    fn new(machine: &'a MachineConfig) -> Self {
        Self { machine, cycles: 0, ops: BTreeMap::new() }
    }

    fn charge(&mut self, op: Op, times: u64) {
        *self.ops.entry(op).or_insert(0) += times;
        self.cycles += serv_cost_model(op, self.machine) * times;
    }

    /// Bias, shift, two clamp compares, optional ReLU and the store.
    fn postprocess(&mut self, activation: Activation) {
        let alu = 4 + u64::from(activation == Activation::Relu);
        self.charge(Op::AluOp, alu);
        self.charge(Op::MemWrite, 1);
    }
}

fn check_width(neuron: NeuronId, value: i64, bits: u32) -> Result<(), SimError> {
    let (lo, hi) = (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1);
    if value < lo || value > hi {
        Err(SimError::AccumulatorOverflow { neuron, value, bits })
    } else {
        Ok(())
    }
}

fn finish(
    machine: &MachineConfig,
    model: &QuantizedMlp,
    input: &[i32],
    meter: Meter<'_>,
    calls: u64,
    per_neuron: BTreeMap<NeuronId, u64>,
    outputs: Vec<i32>,
) -> SimReport {
    let wall_time_s = meter.cycles as f64 / machine.clock_hz as f64;
    let power_proxy = CORE_POWER_UNITS + machine.coproc_power();
    SimReport {
        machine: machine.clone(),
        model: model.name.clone(),
        input: input.to_vec(),
        coproc_calls: calls,
        total_cycles: meter.cycles,
        wall_time_s,
        per_neuron_cycles: per_neuron,
        op_counts: meter.ops,
        power_proxy,
        energy_proxy: power_proxy * wall_time_s,
        argmax: crate::model::argmax(&outputs),
        outputs,
    }
}

/// Runs a call program on a bespoke machine. Register words are rebuilt from
/// the program's bindings for this input; when the input is the one the
/// program was emitted for, they must equal the stored words.
pub fn run_inference(
    model: &QuantizedMlp,
    program: &CallProgram,
    machine: &MachineConfig,
    input: &[i32],
) -> Result<SimReport, SimError> {
    let Coproc::Bespoke(cfg) = &machine.coproc else {
        return Err(SimError::WrongMachine(machine.name.clone()));
    };
    program.check_config(cfg)?;
    model.validate()?;
    model.validate_input(input)?;
    let order: Vec<NeuronId> = model.neurons().map(|(id, _)| id).collect();
    if program.boundaries.iter().map(|b| b.neuron).collect::<Vec<_>>() != order {
        return Err(SimError::ProgramConfigMismatch("neuron boundaries do not follow the model".into()));
    }
    if let Some(b) = program.boundaries.iter().find(|b| b.start + b.len > program.calls.len()) {
        return Err(SimError::ProgramConfigMismatch(format!("neuron {} runs past the last call", b.neuron)));
    }
    let same_input = input == program.input.as_slice();
    let mut meter = Meter::new(machine);
    let mut per_neuron = BTreeMap::new();
    let mut cur_sum: i64 = 0;
    let mut acts: Vec<i32> = input.to_vec();
    let mut bounds = program.boundaries.iter();
    for (l, layer) in model.layers.iter().enumerate() {
        let mut next = Vec::with_capacity(layer.out_dim());
        for n in 0..layer.out_dim() {
            let b = bounds.next().expect("boundaries checked against the model");
            let before = meter.cycles;
            let mut acc = 0i64;
            for c in b.start..b.start + b.len {
                let call = &program.calls[c];
                let (a, w) = program.repack(cfg, c, &acts)?;
                if same_input && (a, w) != (call.a, call.b) {
                    return Err(SimError::ProgramConfigMismatch(format!(
                        "call {c} words 0x{:08x}/0x{:08x} differ from bindings 0x{a:08x}/0x{w:08x}",
                        call.a, call.b
                    )));
                }
                let bound = &program.bindings[c];
                let mut fresh: Vec<usize> = bound.iter().flatten().copied().collect();
                fresh.sort_unstable();
                fresh.dedup();
                meter.charge(Op::MemRead, fresh.len() as u64);
                meter.charge(Op::AluOp, bound.iter().flatten().count() as u64);
                meter.charge(Op::CoprocCall, 1);

                let products: i64 = cfg
                    .unpack(a, w)
                    .iter()
                    .zip(&cfg.slots)
                    .map(|(&v, s)| i64::from(v) * i64::from(s.constant))
                    .sum();
                let base = if call.id == InstId::StartNewSum { 0 } else { cur_sum };
                cur_sum = base + products;
                check_width(b.neuron, cur_sum, cfg.accumulator_bits)?;
                acc = cur_sum;
            }
            let pre = acc + i64::from(layer.biases[n]);
            check_width(b.neuron, pre, CORE_BITS)?;
            meter.postprocess(layer.activation);
            next.push(model.activate(l, pre));
            per_neuron.insert(b.neuron, meter.cycles - before);
        }
        acts = next;
    }
    Ok(finish(machine, model, input, meter, program.calls.len() as u64, per_neuron, acts))
}

/// Runs the model on a conventional-MAC machine (weights and activations both
/// shipped per call, zero weights skipped) or on the bare core.
pub fn simulate_baseline(model: &QuantizedMlp, machine: &MachineConfig, input: &[i32]) -> Result<SimReport, SimError> {
    let (per_call, acc_bits) = match &machine.coproc {
        Coproc::ConventionalMac { multipliers, accumulator_bits } => {
            (Some(macs_per_call(multipliers.len(), model.weight_bits, model.activation_bits)), *accumulator_bits)
        }
        Coproc::None => (None, CORE_BITS),
        Coproc::Bespoke(_) => return Err(SimError::WrongMachine(machine.name.clone())),
    };
    if per_call == Some(0) {
        return Err(SimError::WrongMachine(format!("{} has no multipliers", machine.name)));
    }
    model.validate()?;
    model.validate_input(input)?;
    let mut meter = Meter::new(machine);
    let mut per_neuron = BTreeMap::new();
    let mut calls = 0u64;
    let mut acts: Vec<i32> = input.to_vec();
    for (l, layer) in model.layers.iter().enumerate() {
        let mut next = Vec::with_capacity(layer.out_dim());
        for (n, row) in layer.weights.iter().enumerate() {
            let id = NeuronId::new(l, n);
            let before = meter.cycles;
            let macs: Vec<(i32, i32)> = row.iter().zip(&acts).filter(|(&w, _)| w != 0).map(|(&w, &a)| (w, a)).collect();
            let mut acc = 0i64;
            match per_call {
                Some(k) => {
                    for chunk in macs.chunks(k) {
                        meter.charge(Op::MemRead, 2 * chunk.len() as u64);
                        meter.charge(Op::AluOp, 2 * chunk.len() as u64);
                        meter.charge(Op::CoprocCall, 1);
                        calls += 1;
                        acc += chunk.iter().map(|&(w, a)| i64::from(w) * i64::from(a)).sum::<i64>();
                        check_width(id, acc, acc_bits)?;
                    }
                }
                None => {
                    for &(w, a) in &macs {
                        meter.charge(Op::MemRead, 2);
                        // shift-and-add over the weight bits, then the accumulate
                        meter.charge(Op::AluOp, 2 * u64::from(model.weight_bits) + 1);
                        meter.charge(Op::Branch, u64::from(model.weight_bits));
                        acc += i64::from(w) * i64::from(a);
                        check_width(id, acc, acc_bits)?;
                    }
                }
            }
            let pre = acc + i64::from(layer.biases[n]);
            check_width(id, pre, CORE_BITS)?;
            meter.postprocess(layer.activation);
            next.push(model.activate(l, pre));
            per_neuron.insert(id, meter.cycles - before);
        }
        acts = next;
    }
    Ok(finish(machine, model, input, meter, calls, per_neuron, acts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub machine: String,
    pub coproc_calls: u64,
    pub total_cycles: u64,
    pub wall_time_s: f64,
    pub energy_proxy: f64,
    /// How many times faster the reference (first) machine is than this one.
    pub speedup: f64,
    pub energy_ratio: f64,
    /// Calls of this machine per reference call; absent when either side makes none.
    pub call_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineAverage {
    pub machine: String,
    pub mean_speedup: f64,
    pub mean_energy_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
    pub averages: Vec<MachineAverage>,
    pub machines: Vec<MachineConfig>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == den {
        1.0
    } else {
        num / den
    }
}

/// Ratios of every report against the first, which must all share a model.
pub fn compare(reports: &[SimReport]) -> Result<ComparisonTable, SimError> {
    combine(&[reports.to_vec()])
}

/// Per-model comparisons plus per-machine averages over models. Each group
/// holds the reports of one model; the first report is its reference.
pub fn combine(groups: &[Vec<SimReport>]) -> Result<ComparisonTable, SimError> {
    let mut rows = Vec::new();
    let mut machines: Vec<MachineConfig> = Vec::new();
    let mut sums: Vec<(String, f64, f64, u32)> = Vec::new();
    let mut reference_name = None;
    for group in groups {
        let [first, ..] = group.as_slice() else {
            return Err(SimError::TooFewReports);
        };
        if group.len() < 2 {
            return Err(SimError::TooFewReports);
        }
        reference_name.get_or_insert_with(|| first.machine.name.clone());
        for r in group {
            if r.model != first.model {
                return Err(SimError::MismatchedModels(first.model.clone(), r.model.clone()));
            }
            let speedup = ratio(r.total_cycles as f64, first.total_cycles as f64);
            let energy_ratio = ratio(r.energy_proxy, first.energy_proxy);
            let call_ratio = (r.coproc_calls > 0 && first.coproc_calls > 0)
                .then(|| ratio(r.coproc_calls as f64, first.coproc_calls as f64));
            rows.push(ComparisonRow {
                model: r.model.clone(),
                machine: r.machine.name.clone(),
                coproc_calls: r.coproc_calls,
                total_cycles: r.total_cycles,
                wall_time_s: r.wall_time_s,
                energy_proxy: r.energy_proxy,
                speedup,
                energy_ratio,
                call_ratio,
            });
            match sums.iter_mut().find(|s| s.0 == r.machine.name) {
                Some(s) => {
                    s.1 += speedup;
                    s.2 += energy_ratio;
                    s.3 += 1;
                }
                None => sums.push((r.machine.name.clone(), speedup, energy_ratio, 1)),
            }
            if !machines.iter().any(|m| m.name == r.machine.name) {
                machines.push(r.machine.clone());
            }
        }
    }
    let averages = sums
        .into_iter()
        .map(|(machine, s, e, n)| MachineAverage {
            machine,
            mean_speedup: s / f64::from(n),
            mean_energy_ratio: e / f64::from(n),
        })
        .collect();
    Ok(ComparisonTable { reference: reference_name.unwrap_or_default(), rows, averages, machines })
}

impl ComparisonTable {
    pub fn to_json(&self) -> String {
        crate::canonical_json(self)
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let header = ["model", "machine", "calls", "cycles", "wall_time_s", "energy_proxy", "speedup", "energy_ratio"];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            cells.push(vec![
                r.model.clone(),
                r.machine.clone(),
                r.coproc_calls.to_string(),
                r.total_cycles.to_string(),
                format!("{:.6}", r.wall_time_s),
                format!("{:.4}", r.energy_proxy),
                format!("{:.3}", r.speedup),
                format!("{:.3}", r.energy_ratio),
            ]);
        }
        let widths: Vec<usize> = (0..header.len()).map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| if c < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "mean over models (reference: {}):", self.reference);
        for a in &self.averages {
            let _ = writeln!(out, "  {:<12} speedup {:.3}  energy_ratio {:.3}", a.machine, a.mean_speedup, a.mean_energy_ratio);
        }
        out
    }
}

/// Output range check helper for tests and callers: every output lies in the
/// activation range.
pub fn outputs_in_range(model: &QuantizedMlp, outputs: &[i32]) -> bool {
    let (lo, hi) = signed_range(model.activation_bits);
    outputs.iter().all(|&o| o >= lo && o <= hi)
}
