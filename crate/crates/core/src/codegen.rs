//! Co-processor configuration, call programs, HDL and host source emission.
//!
//! Slot `k` reads bits `[k·l, (k+1)·l)` of the 64-bit operand image
//! `regB ∥ regA` (regA is the low word, passed in `rs1`). Slots are ordered by
//! ascending constant with replicas adjacent. A call packs, per slot, the
//! activation of the weight bound to it or 0.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{reference_inference, Activation, ModelError, NeuronId, QuantizedMlp, SUPPORTED_ACTIVATION_BITS};
use crate::solver::{Assignment, Cycle, InferenceSchedule, NeuronSchedule, Selection};

/// Operand bits per call: two 32-bit source registers.
pub const REGISTER_BITS: u32 = 64;
pub const DEFAULT_ACCUMULATOR_BITS: u32 = 24;
pub const HDL_MODULE: &str = "bespoke_mac";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodegenError {
    #[error("BudgetExceeded: {slots} slots of {activation_bits} bits need {} bits, only {register_bits} available", slots * activation_bits)]
    BudgetExceeded { slots: u32, activation_bits: u32, register_bits: u32 },
    #[error("unsupported activation width {0}")]
    UnsupportedActivationBits(u32),
    #[error("accumulator width {0} outside 2..=64")]
    UnsupportedAccumulatorBits(u32),
    #[error("neuron {neuron} cycle {cycle} needs {needed} slots of x{constant}, config has {available}")]
    SlotOverflow { neuron: NeuronId, cycle: usize, constant: i32, needed: u32, available: u32 },
    #[error("activation {value} does not fit in {bits} bits")]
    ActivationOutOfRange { value: i32, bits: u32 },
    #[error("program/config mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub index: usize,
    pub constant: i32,
    /// Lowest bit of the slot in the 64-bit operand image.
    pub lsb: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoprocConfig {
    pub slots: Vec<Slot>,
    pub activation_bits: u32,
    pub accumulator_bits: u32,
    pub register_bits: u32,
}

pub fn build_config(
    selection: &Selection,
    activation_bits: u32,
    accumulator_bits: u32,
) -> Result<CoprocConfig, CodegenError> {
    if !SUPPORTED_ACTIVATION_BITS.contains(&activation_bits) {
        return Err(CodegenError::UnsupportedActivationBits(activation_bits));
    }
    if !(2..=64).contains(&accumulator_bits) {
        return Err(CodegenError::UnsupportedAccumulatorBits(accumulator_bits));
    }
    let slots = selection.total();
    if u64::from(slots) * u64::from(activation_bits) > u64::from(REGISTER_BITS) {
        return Err(CodegenError::BudgetExceeded { slots, activation_bits, register_bits: REGISTER_BITS });
    }
    let slots = selection
        .to_multiset()
        .into_iter()
        .enumerate()
        .map(|(index, constant)| Slot { index, constant, lsb: index as u32 * activation_bits })
        .collect();
    Ok(CoprocConfig { slots, activation_bits, accumulator_bits, register_bits: REGISTER_BITS })
}

/// Largest slot count that fits the operand registers at this activation width.
pub fn max_slots(activation_bits: u32) -> u32 {
    REGISTER_BITS / activation_bits
}

impl CoprocConfig {
    pub fn selection(&self) -> Selection {
        Selection::from_multiset(&self.slots.iter().map(|s| s.constant).collect::<Vec<_>>())
    }

    pub fn used_bits(&self) -> u32 {
        self.slots.len() as u32 * self.activation_bits
    }

    pub fn padding_bits(&self) -> u32 {
        self.register_bits - self.used_bits()
    }

    /// Slot indices holding `constant`.
    pub fn slots_of(&self, constant: i32) -> Range<usize> {
        let start = self.slots.partition_point(|s| s.constant < constant);
        let end = self.slots.partition_point(|s| s.constant <= constant);
        start..end
    }

    fn mask(&self) -> u64 {
        (1u64 << self.activation_bits) - 1
    }

    /// Packs one value per slot into `(regA, regB)`.
    pub fn pack(&self, values: &[i32]) -> Result<(u32, u32), CodegenError> {
        let (lo, hi) = crate::model::signed_range(self.activation_bits);
        let mut image = 0u64;
        for (slot, &v) in self.slots.iter().zip(values) {
            if v < lo || v > hi {
                return Err(CodegenError::ActivationOutOfRange { value: v, bits: self.activation_bits });
            }
            image |= (v as u64 & self.mask()) << slot.lsb;
        }
        Ok((image as u32, (image >> 32) as u32))
    }

    /// Sign-extended value of every slot of `(regA, regB)`.
    pub fn unpack(&self, a: u32, b: u32) -> Vec<i32> {
        let image = u64::from(a) | u64::from(b) << 32;
        let shift = 64 - self.activation_bits;
        self.slots
            .iter()
            .map(|s| ((((image >> s.lsb) & self.mask()) << shift) as i64 >> shift) as i32)
            .collect()
    }

    /// Bits outside every slot.
    pub fn padding_mask(&self) -> u64 {
        if self.used_bits() >= 64 {
            0
        } else {
            !0u64 << self.used_bits()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstId {
    StartNewSum = 0,
    Accumulate = 1,
}

impl Serialize for InstId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for InstId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Self::StartNewSum),
            1 => Ok(Self::Accumulate),
            x => Err(serde::de::Error::custom(format!("inst_id {x} is neither 0 nor 1"))),
        }
    }
}

mod hex32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u32, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{v:08x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
        let s = String::deserialize(d)?;
        let digits = s.strip_prefix("0x").ok_or_else(|| serde::de::Error::custom("expected 0x prefix"))?;
        u32::from_str_radix(digits, 16).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Call {
    #[serde(with = "hex32")]
    pub a: u32,
    #[serde(with = "hex32")]
    pub b: u32,
    pub id: InstId,
}

/// The calls `start..start + len` compute neuron `neuron`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    pub neuron: NeuronId,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallProgram {
    pub activation_bits: u32,
    /// Constant of each slot, for consistency checks against a config.
    pub slot_constants: Vec<i32>,
    pub calls: Vec<Call>,
    /// Per call and slot, the index of the weight (and so the layer-input
    /// activation) packed there; `None` for a zero filler.
    pub bindings: Vec<Vec<Option<usize>>>,
    pub boundaries: Vec<Boundary>,
    /// Model input the concrete register words were packed for.
    pub input: Vec<i32>,
}

/// Packs the schedule against the activations reference inference produces
/// for `input`. Cycle `t` of a neuron becomes one call; its assignments take
/// the lowest free slots of their constant.
pub fn emit_call_program(
    schedule: &InferenceSchedule,
    config: &CoprocConfig,
    model: &QuantizedMlp,
    input: &[i32],
) -> Result<CallProgram, CodegenError> {
    if config.activation_bits != model.activation_bits {
        return Err(CodegenError::Mismatch(format!(
            "config has {}-bit slots, model uses {}-bit activations",
            config.activation_bits, model.activation_bits
        )));
    }
    let reference = reference_inference(model, input)?;
    let mut program = CallProgram {
        activation_bits: config.activation_bits,
        slot_constants: config.slots.iter().map(|s| s.constant).collect(),
        calls: Vec::new(),
        bindings: Vec::new(),
        boundaries: Vec::new(),
        input: input.to_vec(),
    };
    if schedule.neurons.len() != model.neuron_count() {
        return Err(CodegenError::Mismatch(format!(
            "schedule has {} neurons, model has {}",
            schedule.neurons.len(),
            model.neuron_count()
        )));
    }
    for (id, weights) in model.neurons() {
        let ns = schedule
            .get(id)
            .ok_or_else(|| CodegenError::Mismatch(format!("schedule lacks neuron {id}")))?;
        let acts = &reference.layer_inputs[id.layer];
        let start = program.calls.len();
        for (t, cycle) in ns.cycles.iter().enumerate() {
            let binding = bind_cycle(config, id, t, cycle, weights.len())?;
            let values: Vec<i32> = binding.iter().map(|b| b.map_or(0, |i| acts[i])).collect();
            let (a, b) = config.pack(&values)?;
            let id = if t == 0 { InstId::StartNewSum } else { InstId::Accumulate };
            program.calls.push(Call { a, b, id });
            program.bindings.push(binding);
        }
        program.boundaries.push(Boundary { neuron: id, start, len: ns.cycles.len() });
    }
    Ok(program)
}

fn bind_cycle(
    config: &CoprocConfig,
    neuron: NeuronId,
    cycle: usize,
    assignments: &[Assignment],
    fan_in: usize,
) -> Result<Vec<Option<usize>>, CodegenError> {
    let mut binding = vec![None; config.slots.len()];
    for a in assignments {
        if a.weight_index >= fan_in {
            return Err(CodegenError::Mismatch(format!(
                "neuron {neuron} cycle {cycle} refers to weight {} of {fan_in}",
                a.weight_index
            )));
        }
        let range = config.slots_of(a.constant);
        let available = range.len() as u32;
        let free: Vec<usize> = range.filter(|&k| binding[k].is_none()).collect();
        for n in 0..a.count as usize {
            let Some(&k) = free.get(n) else {
                let needed = assignments.iter().filter(|x| x.constant == a.constant).map(|x| x.count).sum();
                return Err(CodegenError::SlotOverflow { neuron, cycle, constant: a.constant, needed, available });
            };
            binding[k] = Some(a.weight_index);
        }
    }
    Ok(binding)
}

impl CallProgram {
    pub fn to_json(&self) -> String {
        crate::canonical_json(self)
    }

    pub fn check_config(&self, config: &CoprocConfig) -> Result<(), CodegenError> {
        let constants: Vec<i32> = config.slots.iter().map(|s| s.constant).collect();
        if constants != self.slot_constants || config.activation_bits != self.activation_bits {
            return Err(CodegenError::Mismatch(format!(
                "program built for slots {:?} at {} bits, machine has {:?} at {} bits",
                self.slot_constants, self.activation_bits, constants, config.activation_bits
            )));
        }
        if self.bindings.len() != self.calls.len() || self.bindings.iter().any(|b| b.len() != constants.len()) {
            return Err(CodegenError::Mismatch("bindings do not match calls and slots".into()));
        }
        Ok(())
    }

    /// Register words of call `index` for the given layer-input activations.
    pub fn repack(&self, config: &CoprocConfig, index: usize, acts: &[i32]) -> Result<(u32, u32), CodegenError> {
        let values: Vec<i32> = self.bindings[index]
            .iter()
            .map(|b| match b {
                None => Ok(0),
                Some(i) => acts
                    .get(*i)
                    .copied()
                    .ok_or_else(|| CodegenError::Mismatch(format!("binding to activation {i} of {}", acts.len()))),
            })
            .collect::<Result<_, _>>()?;
        config.pack(&values)
    }

    /// Rebuilds the schedule from the bindings.
    pub fn to_schedule(&self, config: &CoprocConfig) -> InferenceSchedule {
        let neurons = self
            .boundaries
            .iter()
            .map(|b| {
                let cycles = (b.start..b.start + b.len)
                    .map(|c| {
                        let mut counts: std::collections::BTreeMap<(i32, usize), u32> = Default::default();
                        for (slot, bound) in config.slots.iter().zip(&self.bindings[c]) {
                            if let Some(i) = bound {
                                *counts.entry((slot.constant, *i)).or_insert(0) += 1;
                            }
                        }
                        counts
                            .into_iter()
                            .map(|((constant, weight_index), count)| Assignment { weight_index, constant, count })
                            .collect::<Cycle>()
                    })
                    .collect();
                NeuronSchedule { id: b.neuron, cycles }
            })
            .collect();
        InferenceSchedule { neurons }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub direction: String,
    pub width: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HdlManifest {
    pub module: String,
    pub parameters: std::collections::BTreeMap<String, u32>,
    pub ports: Vec<Port>,
    pub slots: Vec<Slot>,
    /// Shift-add form of each slot's product, as `(shift, ±1)` terms.
    pub csd: Vec<Vec<(u32, i8)>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HdlArtifact {
    pub text: String,
    pub manifest: HdlManifest,
}

const PORTS: [(&str, &str, &str); 9] = [
    ("clk", "input", "1"),
    ("rst_n", "input", "1"),
    ("in_valid", "input", "1"),
    ("in_ready", "output", "1"),
    ("rs1", "input", "32"),
    ("rs2", "input", "32"),
    ("inst_id", "input", "1"),
    ("out_valid", "output", "1"),
    ("rd", "output", "ACC_BITS"),
];

fn product_expr(x: &str, constant: i32) -> String {
    let digits = crate::cost::csd_digits(i64::from(constant));
    if digits.is_empty() {
        return "{ACC_BITS{1'b0}}".into();
    }
    let mut out = String::new();
    for (n, &(pos, d)) in digits.iter().rev().enumerate() {
        let term = if pos == 0 { x.to_string() } else { format!("({x} <<< {pos})") };
        match (n, d) {
            (0, 1) => out += &term,
            (0, _) => out += &format!("-{term}"),
            (_, 1) => out += &format!(" + {term}"),
            _ => out += &format!(" - {term}"),
        }
    }
    out
}

/// Verilog for the configured bank: sign-extended slot inputs, one shift-add
/// product per slot, a balanced adder tree, the start/accumulate mux and the
/// `cur_sum` register written on a valid request.
pub fn emit_hdl(config: &CoprocConfig) -> HdlArtifact {
    let l = config.activation_bits;
    let n = config.slots.len();
    let mut v = String::new();
    let w = &mut v;
    let _ = writeln!(w, "// {HDL_MODULE}: {n} bespoke multiplier slot(s), {l}-bit activations");
    for s in &config.slots {
        let _ = writeln!(w, "//   I{} = x{} at operand bits [{}:{}]", s.index, s.constant, s.lsb + l - 1, s.lsb);
    }
    let _ = writeln!(w, "module {HDL_MODULE} #(");
    let _ = writeln!(w, "    parameter ACT_BITS = {l},");
    let _ = writeln!(w, "    parameter ACC_BITS = {},", config.accumulator_bits);
    let _ = writeln!(w, "    parameter NUM_SLOTS = {n}");
    let _ = writeln!(w, ") (");
    let _ = writeln!(w, "    input  wire                       clk,");
    let _ = writeln!(w, "    input  wire                       rst_n,");
    let _ = writeln!(w, "    input  wire                       in_valid,");
    let _ = writeln!(w, "    output wire                       in_ready,");
    let _ = writeln!(w, "    input  wire [31:0]                rs1,");
    let _ = writeln!(w, "    input  wire [31:0]                rs2,");
    let _ = writeln!(w, "    input  wire                       inst_id,");
    let _ = writeln!(w, "    output reg                        out_valid,");
    let _ = writeln!(w, "    output wire signed [ACC_BITS-1:0] rd");
    let _ = writeln!(w, ");");
    let _ = writeln!(w, "    wire [63:0] operands = {{rs2, rs1}};");
    let _ = writeln!(w, "    reg signed [ACC_BITS-1:0] cur_sum;");
    let _ = writeln!(w);
    for s in &config.slots {
        let k = s.index;
        let (hi, lo) = (s.lsb + l - 1, s.lsb);
        let _ = writeln!(
            w,
            "    wire signed [ACC_BITS-1:0] x{k} = {{{{(ACC_BITS-ACT_BITS){{operands[{hi}]}}}}, operands[{hi}:{lo}]}};"
        );
        let _ = writeln!(w, "    wire signed [ACC_BITS-1:0] p{k} = {};", product_expr(&format!("x{k}"), s.constant));
    }
    if n > 0 {
        let _ = writeln!(w);
    }
    let mut level: Vec<String> = (0..n).map(|k| format!("p{k}")).collect();
    let mut depth = 0;
    while level.len() > 1 {
        depth += 1;
        let mut next = Vec::new();
        for (j, pair) in level.chunks(2).enumerate() {
            if let [a, b] = pair {
                let name = format!("s{depth}_{j}");
                let _ = writeln!(w, "    wire signed [ACC_BITS-1:0] {name} = {a} + {b};");
                next.push(name);
            } else {
                next.push(pair[0].clone());
            }
        }
        level = next;
    }
    let products = level.pop().unwrap_or_else(|| "{ACC_BITS{1'b0}}".into());
    let _ = writeln!(w, "    wire signed [ACC_BITS-1:0] products = {products};");
    let _ = writeln!(w, "    wire signed [ACC_BITS-1:0] base = inst_id ? cur_sum : {{ACC_BITS{{1'b0}}}};");
    let _ = writeln!(w, "    wire signed [ACC_BITS-1:0] next_sum = base + products;");
    let _ = writeln!(w);
    let _ = writeln!(w, "    assign in_ready = 1'b1;");
    let _ = writeln!(w, "    assign rd = cur_sum;");
    let _ = writeln!(w);
    let _ = writeln!(w, "    always @(posedge clk or negedge rst_n) begin");
    let _ = writeln!(w, "        if (!rst_n) begin");
    let _ = writeln!(w, "            cur_sum <= {{ACC_BITS{{1'b0}}}};");
    let _ = writeln!(w, "            out_valid <= 1'b0;");
    let _ = writeln!(w, "        end else begin");
    let _ = writeln!(w, "            out_valid <= in_valid;");
    let _ = writeln!(w, "            if (in_valid) cur_sum <= next_sum;");
    let _ = writeln!(w, "        end");
    let _ = writeln!(w, "    end");
    let _ = writeln!(w, "endmodule");

    let parameters = [
        ("ACT_BITS".to_string(), l),
        ("ACC_BITS".to_string(), config.accumulator_bits),
        ("NUM_SLOTS".to_string(), n as u32),
    ]
    .into_iter()
    .collect();
    let ports = PORTS
        .iter()
        .map(|&(name, direction, width)| Port { name: name.into(), direction: direction.into(), width: width.into() })
        .collect();
    let csd = config.slots.iter().map(|s| crate::cost::csd_digits(i64::from(s.constant))).collect();
    HdlArtifact { text: v, manifest: HdlManifest { module: HDL_MODULE.into(), parameters, ports, slots: config.slots.clone(), csd } }
}

/// C source for the host core: pack macros, inline-assembly stubs for the
/// custom instruction (funct3 0 starts a sum, 1 accumulates) and per-neuron
/// bias, shift, clamp and activation.
pub fn emit_core_program(program: &CallProgram, model: &QuantizedMlp) -> String {
    let l = program.activation_bits;
    let (lo, hi) = model.activation_range();
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "/* Host program for model \"{}\": {} co-processor calls. */", model.name.escape_default(), program.calls.len());
    let _ = writeln!(w, "#include <stdint.h>");
    let _ = writeln!(w);
    let _ = writeln!(w, "#define ACT_BITS {l}");
    let _ = writeln!(w, "#define ACT_MIN ({lo})");
    let _ = writeln!(w, "#define ACT_MAX ({hi})");
    let _ = writeln!(w, "#define PACK(v, slot) ((uint64_t)((uint32_t)(v) & ((1u << ACT_BITS) - 1u)) << ((slot) * ACT_BITS))");
    let _ = writeln!(w, "#define LO(x) ((uint32_t)(x))");
    let _ = writeln!(w, "#define HI(x) ((uint32_t)((x) >> 32))");
    let _ = writeln!(w);
    let _ = writeln!(w, "/* Custom R-type instruction; opcode and funct3 values are placeholders. */");
    let _ = writeln!(w, "static inline int32_t mac_start(uint32_t a, uint32_t b) {{");
    let _ = writeln!(w, "    int32_t rd;");
    let _ = writeln!(w, "    __asm__ volatile(\".insn r 0x0b, 0, 0, %0, %1, %2\" : \"=r\"(rd) : \"r\"(a), \"r\"(b));");
    let _ = writeln!(w, "    return rd;");
    let _ = writeln!(w, "}}");
    let _ = writeln!(w);
    let _ = writeln!(w, "static inline int32_t mac_acc(uint32_t a, uint32_t b) {{");
    let _ = writeln!(w, "    int32_t rd;");
    let _ = writeln!(w, "    __asm__ volatile(\".insn r 0x0b, 1, 0, %0, %1, %2\" : \"=r\"(rd) : \"r\"(a), \"r\"(b));");
    let _ = writeln!(w, "    return rd;");
    let _ = writeln!(w, "}}");
    let _ = writeln!(w);
    let _ = writeln!(w, "static inline int8_t requant(int32_t acc, int shift, int relu) {{");
    let _ = writeln!(w, "    int32_t v = acc >> shift;");
    let _ = writeln!(w, "    if (v < ACT_MIN) v = ACT_MIN;");
    let _ = writeln!(w, "    if (v > ACT_MAX) v = ACT_MAX;");
    let _ = writeln!(w, "    if (relu && v < 0) v = 0;");
    let _ = writeln!(w, "    return (int8_t)v;");
    let _ = writeln!(w, "}}");
    let _ = writeln!(w);
    let _ = writeln!(w, "void infer(const int8_t *in, int8_t *out) {{");
    if !program.boundaries.is_empty() {
        for (k, layer) in model.layers.iter().enumerate().take(model.layers.len() - 1) {
            let _ = writeln!(w, "    int8_t act{}[{}];", k + 1, layer.out_dim());
        }
        let _ = writeln!(w, "    uint64_t x;");
        let _ = writeln!(w, "    int32_t acc;");
    }
    let last = model.layers.len().saturating_sub(1);
    for b in &program.boundaries {
        let layer = &model.layers[b.neuron.layer];
        let src = if b.neuron.layer == 0 { "in".to_string() } else { format!("act{}", b.neuron.layer) };
        let dst = if b.neuron.layer == last { "out".to_string() } else { format!("act{}", b.neuron.layer + 1) };
        let _ = writeln!(w);
        let _ = writeln!(w, "    /* {}: {} call(s) */", b.neuron, b.len);
        if b.len == 0 {
            let _ = writeln!(w, "    acc = 0;");
        }
        for c in b.start..b.start + b.len {
            let packs: Vec<String> = program.bindings[c]
                .iter()
                .enumerate()
                .filter_map(|(slot, bound)| bound.map(|i| format!("PACK({src}[{i}], {slot})")))
                .collect();
            let packs = if packs.is_empty() { "0".to_string() } else { packs.join(" | ") };
            let _ = writeln!(w, "    x = {packs};");
            let f = if program.calls[c].id == InstId::StartNewSum { "mac_start" } else { "mac_acc" };
            let _ = writeln!(w, "    acc = {f}(LO(x), HI(x));");
        }
        let relu = u8::from(layer.activation == Activation::Relu);
        let _ = writeln!(
            w,
            "    {dst}[{}] = requant(acc + ({}), {}, {relu});",
            b.neuron.neuron, layer.biases[b.neuron.neuron], layer.requant_shift
        );
    }
    let _ = writeln!(w, "}}");
    s
}

/// Number of custom-instruction invocations in emitted host source.
pub fn count_call_stubs(source: &str) -> usize {
    source.matches("= mac_start(").count() + source.matches("= mac_acc(").count()
}
