//! Dimensionless area and power proxies.
//!
//! A bespoke multiplier by `c` is a shift-add network with one adder per
//! extra nonzero digit of the canonical signed-digit form of `|c|`, each as
//! wide as the shifted product. A conventional `m×n` array multiplier costs
//! its partial-product AND gates (a quarter unit each) plus `m` rows of
//! `n`-bit adders. Summands entering the adder tree cost their active width
//! plus the growth of the tree depth. Power is area times a fixed activity.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codegen::CoprocConfig;

/// Power units per area unit.
pub const ACTIVITY: f64 = 0.5;
const FLOP_UNITS: f64 = 1.5;
const MUX_UNITS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub area_units: f64,
    pub power_units: f64,
    /// Area per component; sums to `area_units`.
    pub breakdown: BTreeMap<String, f64>,
}

impl CostEstimate {
    fn from_parts<I: IntoIterator<Item = (&'static str, f64)>>(parts: I) -> Self {
        let breakdown: BTreeMap<String, f64> = parts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let area_units = breakdown.values().sum();
        Self { area_units, power_units: area_units * ACTIVITY, breakdown }
    }
}

/// Non-adjacent form of `c`: `(position, ±1)` pairs, least significant first,
/// with `Σ digit·2^position = c` and the fewest nonzero digits of any
/// signed-binary representation.
pub fn csd_digits(c: i64) -> Vec<(u32, i8)> {
    let mut digits = Vec::new();
    let mut n = i128::from(c);
    let mut pos = 0;
    while n != 0 {
        if n & 1 == 1 {
            let d: i8 = if n.rem_euclid(4) == 1 { 1 } else { -1 };
            digits.push((pos, d));
            n -= i128::from(d);
        }
        n >>= 1;
        pos += 1;
    }
    digits
}

pub fn csd_nonzero_digits(c: i64) -> u32 {
    csd_digits(c).len() as u32
}

/// Adders in the shift-add network for `×c`; zero for 0 and ±2^k.
pub fn csd_adder_count(c: i64) -> u32 {
    csd_nonzero_digits(c.abs()).saturating_sub(1)
}

fn bit_len(x: u32) -> u32 {
    u32::BITS - x.leading_zeros()
}

pub fn bespoke_mult_cost(constant: i32, activation_bits: u32) -> CostEstimate {
    let a = constant.unsigned_abs();
    let area = f64::from(csd_adder_count(i64::from(constant)) * (activation_bits + bit_len(a)));
    CostEstimate::from_parts([("shift_add", area)])
}

pub fn conventional_mult_cost(m: u32, n: u32) -> CostEstimate {
    CostEstimate::from_parts([
        ("partial_products", f64::from(m * n) * 0.25),
        ("adders", f64::from((m.max(1) - 1) * n + n)),
    ])
}

/// Adder tree over the given product widths plus the accumulator input.
fn adder_tree_area(widths: &[u32]) -> f64 {
    let active: Vec<u32> = widths.iter().copied().filter(|&w| w > 0).collect();
    let inputs = active.len() as u32 + 1;
    let depth = if inputs > 1 { bit_len(inputs - 1) } else { 0 };
    active.iter().map(|&w| f64::from(w + depth)).sum()
}

fn register_parts(accumulator_bits: u32) -> [(&'static str, f64); 2] {
    [
        ("registers", f64::from(accumulator_bits) * FLOP_UNITS),
        ("mux", f64::from(accumulator_bits) * MUX_UNITS),
    ]
}

/// Bespoke bank with one multiplier per listed constant.
pub fn bespoke_bank_cost(constants: &[i32], activation_bits: u32, accumulator_bits: u32) -> CostEstimate {
    let mults: f64 = constants.iter().map(|&c| bespoke_mult_cost(c, activation_bits).area_units).sum();
    let widths: Vec<u32> = constants
        .iter()
        .map(|&c| {
            let a = c.unsigned_abs();
            if a == 0 {
                0
            } else {
                activation_bits + bit_len(a) - a.trailing_zeros()
            }
        })
        .collect();
    let [r, m] = register_parts(accumulator_bits);
    CostEstimate::from_parts([("multipliers", mults), ("adder_tree", adder_tree_area(&widths)), r, m])
}

/// Conventional co-processor with `(m, n)` array multipliers.
pub fn conventional_bank_cost(multipliers: &[(u32, u32)], accumulator_bits: u32) -> CostEstimate {
    let mults: f64 = multipliers.iter().map(|&(m, n)| conventional_mult_cost(m, n).area_units).sum();
    let widths: Vec<u32> = multipliers.iter().map(|&(m, n)| m + n).collect();
    let [r, m] = register_parts(accumulator_bits);
    CostEstimate::from_parts([("multipliers", mults), ("adder_tree", adder_tree_area(&widths)), r, m])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoprocSpec {
    Bespoke(CoprocConfig),
    Conventional { multipliers: Vec<(u32, u32)>, accumulator_bits: u32 },
}

pub fn coproc_cost(spec: &CoprocSpec) -> CostEstimate {
    match spec {
        CoprocSpec::Bespoke(cfg) => {
            let constants: Vec<i32> = cfg.slots.iter().map(|s| s.constant).collect();
            bespoke_bank_cost(&constants, cfg.activation_bits, cfg.accumulator_bits)
        }
        CoprocSpec::Conventional { multipliers, accumulator_bits } => {
            conventional_bank_cost(multipliers, *accumulator_bits)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub counts: Vec<u32>,
    pub samples: u32,
    pub seed: u64,
    pub activation_bits: u32,
    pub accumulator_bits: u32,
    /// Inclusive range the random constants are drawn from.
    pub constant_range: (i32, i32),
    /// Conventional co-processor reported alongside for comparison.
    pub reference: Vec<(u32, u32)>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            counts: vec![4, 8, 12, 16],
            samples: 200,
            seed: 1,
            activation_bits: 4,
            accumulator_bits: crate::codegen::DEFAULT_ACCUMULATOR_BITS,
            constant_range: (-8, 7),
            reference: vec![(4, 4); 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Stats {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "statistics of an empty sample");
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub multipliers: u32,
    pub area: Stats,
    pub power: Stats,
    /// Share of samples no larger than the reference co-processor.
    pub at_most_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: MonteCarloConfig,
    pub reference: CostEstimate,
    pub summaries: Vec<CountSummary>,
}

impl MonteCarloReport {
    pub fn to_json(&self) -> String {
        crate::canonical_json(self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("multipliers,metric,min,q1,median,q3,max,mean\n");
        for s in &self.summaries {
            for (metric, st) in [("area", &s.area), ("power", &s.power)] {
                out += &format!(
                    "{},{metric},{},{},{},{},{},{}\n",
                    s.multipliers, st.min, st.q1, st.median, st.q3, st.max, st.mean
                );
            }
        }
        out
    }
}

/// Constants for sample `index` at multiplier count `count`, from an
/// independent stream so results do not depend on evaluation order.
fn sample_constants(cfg: &MonteCarloConfig, count: u32, index: u32) -> Vec<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream((u64::from(count) << 32) | u64::from(index));
    let (lo, hi) = cfg.constant_range;
    (0..count).map(|_| rng.gen_range(lo..=hi)).collect()
}

pub fn monte_carlo(cfg: &MonteCarloConfig) -> MonteCarloReport {
    let reference = conventional_bank_cost(&cfg.reference, cfg.accumulator_bits);
    let summaries = cfg
        .counts
        .iter()
        .map(|&count| {
            let costs: Vec<CostEstimate> = (0..cfg.samples.max(1))
                .into_par_iter()
                .map(|i| bespoke_bank_cost(&sample_constants(cfg, count, i), cfg.activation_bits, cfg.accumulator_bits))
                .collect();
            let area: Vec<f64> = costs.iter().map(|c| c.area_units).collect();
            let power: Vec<f64> = costs.iter().map(|c| c.power_units).collect();
            let within = area.iter().filter(|&&a| a <= reference.area_units).count();
            CountSummary {
                multipliers: count,
                area: Stats::of(&area),
                power: Stats::of(&power),
                at_most_reference: within as f64 / area.len() as f64,
            }
        })
        .collect();
    MonteCarloReport { config: cfg.clone(), reference, summaries }
}
