//! Classically simulated quantum subroutines: angle encoding, swap-test
//! similarity and the magnitude comparator.
//!
//! Every routine has an exact form. Swap tests also have a finite-shot form
//! that draws measurement outcomes from the exact outcome probabilities, and
//! the comparator has a fixed-point form that runs a reversible comparator
//! circuit on quantized register values.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_BITS: u32 = 16;

/// Bits per feature (`t_a`) and data dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingParams {
    pub bits: u32,
    pub dim: usize,
}

impl EncodingParams {
    pub fn new(bits: u32, dim: usize) -> Result<Self> {
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(Error::InvalidBits(bits));
        }
        Ok(Self { bits, dim })
    }

    /// Largest encodable feature value, `2^bits - 1`.
    pub fn max_value(&self) -> u64 {
        (1u64 << self.bits) - 1
    }
}

/// Exponents `v` of the controlled rotations `pi / 2^v` that fire for `value`.
///
/// The most significant of the `bits` data qubits drives `v = 2`, the least
/// significant drives `v = bits + 1`.
pub fn rotation_schedule(value: u64, bits: u32) -> impl Iterator<Item = u32> {
    (0..bits).filter_map(move |k| {
        let position = bits - 1 - k;
        (value >> position & 1 == 1).then_some(k + 2)
    })
}

/// Rotation angle for one feature value.
///
/// Rotations are accumulated as whole multiples of the smallest step
/// `pi / 2^(bits+1)` so the sum is exact before the single conversion.
pub fn encode_angle<S: Scalar>(value: u64, params: &EncodingParams) -> Result<S> {
    let max = params.max_value();
    if value > max {
        return Err(Error::Unencodable { value, max });
    }
    let steps: u64 = rotation_schedule(value, params.bits)
        .map(|v| 1u64 << (params.bits + 1 - v))
        .sum();
    let denom = (1u64 << (params.bits + 1)) as usize;
    Ok(S::PI() * S::from_count(steps as usize) / S::from_count(denom))
}

/// Per-dimension rotation angles of an encoded point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleState<S> {
    pub angles: Vec<S>,
}

impl<S: Scalar> AngleState<S> {
    pub fn new(angles: Vec<S>) -> Self {
        Self { angles }
    }

    pub fn dim(&self) -> usize {
        self.angles.len()
    }
}

pub fn encode_point<S: Scalar>(point: &[u32], params: &EncodingParams) -> Result<AngleState<S>> {
    if point.len() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            got: point.len(),
        });
    }
    point
        .iter()
        .map(|&v| encode_angle(u64::from(v), params))
        .collect::<Result<Vec<_>>>()
        .map(AngleState::new)
}

fn check_dims<S>(a: &AngleState<S>, b: &AngleState<S>) -> Result<()> {
    if a.angles.len() != b.angles.len() {
        return Err(Error::DimensionMismatch {
            expected: a.angles.len(),
            got: b.angles.len(),
        });
    }
    Ok(())
}

/// Squared overlap of two product states, `prod_j cos^2(a_j - b_j)`.
pub fn exact_similarity<S: Scalar>(a: &AngleState<S>, b: &AngleState<S>) -> Result<S> {
    check_dims(a, b)?;
    Ok(fidelity(a, b))
}

fn fidelity<S: Scalar>(a: &AngleState<S>, b: &AngleState<S>) -> S {
    a.angles
        .iter()
        .zip(&b.angles)
        .map(|(&x, &y)| {
            let c = (x - y).cos();
            c * c
        })
        .fold(S::one(), |acc, t| acc * t)
}

/// Probability of reading 1 on the swap-test ancilla.
pub fn swap_test_p1<S: Scalar>(similarity: S) -> S {
    let half = S::from_f64_lossy(0.5);
    half - half * similarity
}

fn draw_ones<R: Rng + ?Sized>(p1: f64, shots: u64, rng: &mut R) -> u64 {
    let p1 = p1.clamp(0.0, 1.0);
    Binomial::new(shots, p1)
        .expect("probability clamped to [0, 1]")
        .sample(rng)
}

/// Finite-shot swap-test estimate of the similarity, clamped to `[0, 1]`.
pub fn sampled_similarity<S: Scalar, R: Rng + ?Sized>(
    a: &AngleState<S>,
    b: &AngleState<S>,
    shots: u64,
    rng: &mut R,
) -> Result<S> {
    if shots == 0 {
        return Err(Error::ZeroShots);
    }
    check_dims(a, b)?;
    let p1 = swap_test_p1(fidelity(a, b)).as_f64();
    let ones = draw_ones(p1, shots, rng);
    let estimate = 1.0 - 2.0 * (ones as f64 / shots as f64);
    Ok(S::from_f64_lossy(estimate.clamp(0.0, 1.0)))
}

/// How swap tests are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SimilarityBackend {
    #[default]
    Exact,
    Sampled {
        shots: u64,
    },
}

impl SimilarityBackend {
    pub fn validate(&self) -> Result<()> {
        match self {
            SimilarityBackend::Sampled { shots: 0 } => Err(Error::ZeroShots),
            _ => Ok(()),
        }
    }

    pub fn similarity<S: Scalar, R: Rng + ?Sized>(
        &self,
        a: &AngleState<S>,
        b: &AngleState<S>,
        rng: &mut R,
    ) -> Result<S> {
        match *self {
            SimilarityBackend::Exact => exact_similarity(a, b),
            SimilarityBackend::Sampled { shots } => sampled_similarity(a, b, shots, rng),
        }
    }

    /// Swap-test `p(1)` for the pair, exact or estimated.
    pub fn dissimilarity<S: Scalar, R: Rng + ?Sized>(
        &self,
        a: &AngleState<S>,
        b: &AngleState<S>,
        rng: &mut R,
    ) -> Result<S> {
        self.similarity(a, b, rng).map(swap_test_p1)
    }
}

/// Oracle-call accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    /// Individual swap-test evaluations.
    pub similarity_evals: u64,
    /// Comparator invocations.
    pub comparisons: u64,
    /// Nominal QRAM addressing cost: `ceil(log2 n)` per load of `n` items.
    pub qram_depth: u64,
}

impl Cost {
    pub fn add(&mut self, other: &Cost) {
        self.similarity_evals += other.similarity_evals;
        self.comparisons += other.comparisons;
        self.qram_depth += other.qram_depth;
    }
}

fn address_bits(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        u64::from(usize::BITS - (n - 1).leading_zeros())
    }
}

/// A scored candidate: swap-test dissimilarity `p(1)` and candidate id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored<S> {
    pub dissimilarity: S,
    pub id: usize,
}

/// Runs one swap test per candidate against `query`, preserving input order.
///
/// Candidates are `(id, state)` pairs; pass `states.iter().enumerate()` to
/// score by position.
pub fn similarity_batch<'a, S, I, R>(
    candidates: I,
    query: &AngleState<S>,
    backend: &SimilarityBackend,
    rng: &mut R,
    cost: &mut Cost,
) -> Result<Vec<Scored<S>>>
where
    S: Scalar,
    I: IntoIterator<Item = (usize, &'a AngleState<S>)>,
    R: Rng + ?Sized,
{
    let mut out = Vec::new();
    for (id, state) in candidates {
        let dissimilarity = backend.dissimilarity(state, query, rng)?;
        out.push(Scored { dissimilarity, id });
    }
    cost.similarity_evals += out.len() as u64;
    cost.qram_depth += address_bits(out.len());
    Ok(out)
}

/// How the comparator reads its operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Comparator {
    /// Compare reals directly.
    Exact,
    /// Quantize to `bits` fractional bits and run the comparator circuit.
    FixedPoint { bits: u32 },
}

impl Comparator {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Comparator::FixedPoint { bits } if !(1..=63).contains(&bits) => Err(
                Error::InvalidParameter(format!("comparator bits must be in 1..=63, got {bits}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Outcome of one comparator run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison<S> {
    /// The flag qubit: `true` (c = 1) iff `a < b`.
    pub less: bool,
    /// `b` when c = 0, otherwise `a`.
    pub min: S,
}

/// Fixed-point register value for `x` with `bits` fractional bits, saturating.
pub fn quantize_fraction<S: Scalar>(x: S, bits: u32) -> u64 {
    let max = (1u64 << bits) - 1;
    let scaled = (x.as_f64() * (1u64 << bits) as f64).round();
    if scaled.is_nan() || scaled <= 0.0 {
        0
    } else if scaled >= max as f64 {
        max
    } else {
        scaled as u64
    }
}

pub fn quantum_compare<S: Scalar>(a: S, b: S, comparator: &Comparator) -> Comparison<S> {
    let less = match *comparator {
        Comparator::Exact => a < b,
        Comparator::FixedPoint { bits } => {
            ComparatorCircuit::new(bits).run(quantize_fraction(a, bits), quantize_fraction(b, bits))
        }
    };
    Comparison {
        less,
        min: if less { a } else { b },
    }
}

/// Picks the minimum-dissimilarity candidate by iterated comparison.
///
/// A candidate replaces the running minimum only when the comparator says it
/// is strictly smaller, so ties keep the earlier entry.
pub fn select_min<S: Scalar>(
    scored: &[Scored<S>],
    comparator: &Comparator,
    cost: &mut Cost,
) -> Option<Scored<S>> {
    let (first, rest) = scored.split_first()?;
    let mut best = *first;
    for s in rest {
        cost.comparisons += 1;
        if quantum_compare(s.dissimilarity, best.dissimilarity, comparator).less {
            best = *s;
        }
    }
    Some(best)
}

/// Basis-state gate: flip `target` when every control matches its polarity.
#[derive(Debug, Clone)]
struct Gate {
    controls: Vec<(usize, bool)>,
    target: usize,
}

/// Reversible `q`-bit magnitude comparator, `|a>|b>|0..0>|0> -> |a>|b>|0..0>|c>`.
///
/// Wire layout: `a` in `0..q`, `b` in `q..2q` (both most significant bit
/// first), one "decided" ancilla per bit in `2q..3q`, and the flag `c` at
/// `3q`. Bit `i` sets the flag when `a_i = 0, b_i = 1` and no higher bit has
/// decided the comparison. The ancillas are uncomputed at the end.
#[derive(Debug, Clone)]
pub struct ComparatorCircuit {
    bits: u32,
    /// Flag and ancilla gates, bit by bit from the most significant.
    forward: Vec<Gate>,
    /// Ancilla gates only, reversed.
    uncompute: Vec<Gate>,
}

impl ComparatorCircuit {
    pub fn new(bits: u32) -> Self {
        let q = bits as usize;
        let a = |i: usize| i;
        let b = |i: usize| q + i;
        let decided = |i: usize| 2 * q + i;
        let flag = 3 * q;

        let mut forward = Vec::new();
        let mut ancilla = Vec::new();
        for i in 0..q {
            let mut lt = vec![(a(i), false), (b(i), true)];
            let mut gt = vec![(a(i), true), (b(i), false)];
            let mut carry = None;
            if i > 0 {
                lt.push((decided(i - 1), false));
                gt.push((decided(i - 1), false));
                carry = Some(Gate {
                    controls: vec![(decided(i - 1), true)],
                    target: decided(i),
                });
            }
            forward.push(Gate {
                controls: lt.clone(),
                target: flag,
            });
            let bit_gates = carry.into_iter().chain([
                Gate {
                    controls: lt,
                    target: decided(i),
                },
                Gate {
                    controls: gt,
                    target: decided(i),
                },
            ]);
            for g in bit_gates {
                forward.push(g.clone());
                ancilla.push(g);
            }
        }
        ancilla.reverse();
        Self {
            bits,
            forward,
            uncompute: ancilla,
        }
    }

    pub fn gate_count(&self) -> usize {
        self.forward.len() + self.uncompute.len()
    }

    fn apply(wires: &mut [bool], gate: &Gate) {
        if gate.controls.iter().all(|&(w, on)| wires[w] == on) {
            wires[gate.target] = !wires[gate.target];
        }
    }

    /// Full register after the circuit runs on basis inputs `a`, `b`.
    pub fn run_register(&self, a: u64, b: u64) -> Vec<bool> {
        let q = self.bits as usize;
        let mut wires = vec![false; 3 * q + 1];
        for i in 0..q {
            let shift = q - 1 - i;
            wires[i] = a >> shift & 1 == 1;
            wires[q + i] = b >> shift & 1 == 1;
        }
        for g in self.forward.iter().chain(&self.uncompute) {
            Self::apply(&mut wires, g);
        }
        wires
    }

    /// The flag `c`: `true` iff `a < b`.
    pub fn run(&self, a: u64, b: u64) -> bool {
        self.run_register(a, b)[3 * self.bits as usize]
    }
}
