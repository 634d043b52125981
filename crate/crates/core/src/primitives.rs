//! Finite-alphabet primitives: distributions, sequences, empirical types,
//! typicality and distortion tests, and log-domain counting helpers.
//!
//! Symbols are stored as `u8` indices, so every alphabet has at most 256
//! letters. Everything here is a pure function of its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for `Σ w = 1` on probability vectors.
pub const PMF_TOLERANCE: f64 = 1e-12;

/// Absolute slack (in units of counts) when comparing an empirical count
/// against `n·(p ± ε)`. Keeps boundary cases such as `0.55` vs `0.5 + 0.05`
/// inclusive despite binary rounding.
const TYPICALITY_SLACK: f64 = 1e-9;

/// Relative slack for `Σ d ≤ n·D`.
const BUDGET_SLACK: f64 = 1e-12;

/// Largest supported alphabet.
pub const MAX_ALPHABET: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Alphabet(usize);

impl Alphabet {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || size > MAX_ALPHABET {
            return Err(Error::InvalidSequence(format!(
                "alphabet size must be in 1..={MAX_ALPHABET}, got {size}"
            )));
        }
        Ok(Alphabet(size))
    }

    pub fn size(self) -> usize {
        self.0
    }
}

/// A probability vector over `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PmfRepr", into = "PmfRepr")]
pub struct Pmf {
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PmfRepr {
    weights: Vec<f64>,
}

impl TryFrom<PmfRepr> for Pmf {
    type Error = Error;
    fn try_from(r: PmfRepr) -> Result<Self> {
        Pmf::new(r.weights)
    }
}

impl From<Pmf> for PmfRepr {
    fn from(p: Pmf) -> Self {
        PmfRepr { weights: p.weights }
    }
}

impl Pmf {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() > MAX_ALPHABET {
            return Err(Error::InvalidPmf(format!(
                "length must be in 1..={MAX_ALPHABET}, got {}",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidPmf(format!(
                "entry {w} is negative or not finite"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::InvalidPmf(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Pmf { weights })
    }

    /// Rescales non-negative weights to sum to one.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        let total: f64 = raw.iter().sum();
        if total.is_nan() || total <= 0.0 || raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidPmf("cannot normalize".into()));
        }
        Pmf::new(raw.iter().map(|w| w / total).collect())
    }

    pub fn uniform(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidPmf("empty alphabet".into()));
        }
        Pmf::new(vec![1.0 / size as f64; size])
    }

    pub fn bernoulli(one: f64) -> Result<Self> {
        Pmf::new(vec![1.0 - one, one])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn alphabet(&self) -> Alphabet {
        Alphabet(self.weights.len())
    }

    pub fn get(&self, s: usize) -> f64 {
        self.weights[s]
    }
}

/// A block of symbols from a finite alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sequence {
    symbols: Vec<u8>,
}

impl Sequence {
    pub fn new(symbols: Vec<u8>, alphabet: Alphabet) -> Result<Self> {
        if let Some(s) = symbols.iter().find(|s| (**s as usize) >= alphabet.size()) {
            return Err(Error::InvalidSequence(format!(
                "symbol {s} outside alphabet of size {}",
                alphabet.size()
            )));
        }
        Ok(Sequence { symbols })
    }

    pub fn from_indices(symbols: &[usize], alphabet: Alphabet) -> Result<Self> {
        let mut out = Vec::with_capacity(symbols.len());
        for &s in symbols {
            if s >= alphabet.size() {
                return Err(Error::InvalidSequence(format!(
                    "symbol {s} outside alphabet of size {}",
                    alphabet.size()
                )));
            }
            out.push(s as u8);
        }
        Ok(Sequence { symbols: out })
    }

    /// Wraps symbols already known to be in range.
    pub(crate) fn from_raw(symbols: Vec<u8>) -> Self {
        Sequence { symbols }
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn into_symbols(self) -> Vec<u8> {
        self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn max_symbol(&self) -> Option<usize> {
        self.symbols.iter().max().map(|s| *s as usize)
    }
}

/// Symbol counts of a length-`n` sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TypeVector {
    counts: Vec<usize>,
    n: usize,
}

impl TypeVector {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(Error::InvalidSequence("type with zero block length".into()));
        }
        Ok(TypeVector { counts, n })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn to_pmf(&self) -> Pmf {
        let n = self.n as f64;
        let weights: Vec<f64> = self.counts.iter().map(|c| *c as f64 / n).collect();
        // Rounding can push the sum a few ulps away from 1; renormalize.
        let total: f64 = weights.iter().sum();
        Pmf {
            weights: weights.into_iter().map(|w| w / total).collect(),
        }
    }

    /// The lexicographically smallest sequence of this type.
    pub fn canonical_sequence(&self) -> Sequence {
        let mut symbols = Vec::with_capacity(self.n);
        for (s, &c) in self.counts.iter().enumerate() {
            symbols.extend(std::iter::repeat_n(s as u8, c));
        }
        Sequence { symbols }
    }
}

/// Distortion matrix `d(x, y)` with a budget `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistortionRepr", into = "DistortionRepr")]
pub struct DistortionSpec {
    matrix: Vec<Vec<f64>>,
    budget: f64,
    // Row-major copy for hot loops.
    flat: Vec<f64>,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistortionRepr {
    matrix: Vec<Vec<f64>>,
    budget: f64,
}

impl TryFrom<DistortionRepr> for DistortionSpec {
    type Error = Error;
    fn try_from(r: DistortionRepr) -> Result<Self> {
        DistortionSpec::new(r.matrix, r.budget)
    }
}

impl From<DistortionSpec> for DistortionRepr {
    fn from(d: DistortionSpec) -> Self {
        DistortionRepr {
            matrix: d.matrix,
            budget: d.budget,
        }
    }
}

impl DistortionSpec {
    pub fn new(matrix: Vec<Vec<f64>>, budget: f64) -> Result<Self> {
        let rows = matrix.len();
        if rows == 0 || rows > MAX_ALPHABET {
            return Err(Error::InvalidDistortion("matrix needs 1..=256 rows".into()));
        }
        let cols = matrix[0].len();
        if cols == 0 || cols > MAX_ALPHABET {
            return Err(Error::InvalidDistortion(
                "matrix needs 1..=256 columns".into(),
            ));
        }
        if matrix.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidDistortion("ragged matrix".into()));
        }
        if matrix.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDistortion(
                "entries must be finite and non-negative".into(),
            ));
        }
        if !budget.is_finite() || budget < 0.0 {
            return Err(Error::InvalidDistortion(format!(
                "budget {budget} must be non-negative"
            )));
        }
        let flat = matrix.iter().flatten().copied().collect();
        Ok(DistortionSpec {
            matrix,
            budget,
            flat,
            cols,
        })
    }

    /// Hamming distortion on a `size`-letter alphabet.
    pub fn hamming(size: usize, budget: f64) -> Result<Self> {
        let matrix = (0..size)
            .map(|a| (0..size).map(|b| if a == b { 0.0 } else { 1.0 }).collect())
            .collect();
        DistortionSpec::new(matrix, budget)
    }

    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        DistortionSpec::new(self.matrix.clone(), budget)
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn rows(&self) -> usize {
        self.matrix.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.flat[x * self.cols + y]
    }

    pub fn max_entry(&self) -> f64 {
        self.flat.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.flat.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `Σ_i d(x_i, y_i)` with early exit once `limit` is exceeded.
    #[inline]
    pub(crate) fn total_up_to(&self, x: &[u8], y: &[u8], limit: f64) -> f64 {
        let mut total = 0.0;
        for (a, b) in x.iter().zip(y) {
            total += self.flat[*a as usize * self.cols + *b as usize];
            if total > limit {
                break;
            }
        }
        total
    }

    /// True when `Σ d(x_i, y_i) ≤ n·D` (inclusive).
    #[inline]
    pub(crate) fn fits(&self, x: &[u8], y: &[u8]) -> bool {
        let limit = budget_limit(x.len(), self.budget);
        self.total_up_to(x, y, limit) <= limit
    }
}

/// Largest admissible total distortion for a block of length `n`.
#[inline]
pub fn budget_limit(n: usize, budget: f64) -> f64 {
    let nd = budget * n as f64;
    nd + BUDGET_SLACK * (1.0 + nd)
}

/// Inclusive test `total ≤ n·D`.
#[inline]
pub fn within_budget(total: f64, n: usize, budget: f64) -> bool {
    total <= budget_limit(n, budget)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypicalityParams {
    epsilon: f64,
}

impl TypicalityParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::InvalidPmf(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(TypicalityParams { epsilon })
    }

    pub fn epsilon(self) -> f64 {
        self.epsilon
    }
}

impl Default for TypicalityParams {
    fn default() -> Self {
        TypicalityParams { epsilon: 0.02 }
    }
}

pub fn empirical_type(x: &Sequence, alphabet: Alphabet) -> Result<TypeVector> {
    if x.is_empty() {
        return Err(Error::InvalidSequence("empty sequence".into()));
    }
    let mut counts = vec![0usize; alphabet.size()];
    for &s in x.symbols() {
        let s = s as usize;
        if s >= counts.len() {
            return Err(Error::InvalidSequence(format!(
                "symbol {s} outside alphabet of size {}",
                alphabet.size()
            )));
        }
        counts[s] += 1;
    }
    TypeVector::new(counts)
}

/// Strong typicality of a count vector: `|c_s/n − p_s| ≤ ε` for every `s`,
/// and `c_s = 0` wherever `p_s = 0`.
#[inline]
pub fn counts_typical(counts: &[usize], n: usize, p: &Pmf, eps: TypicalityParams) -> bool {
    let nf = n as f64;
    let slack = eps.epsilon() * nf + TYPICALITY_SLACK;
    counts.iter().zip(p.weights()).all(|(&c, &w)| {
        if w == 0.0 {
            c == 0
        } else {
            (c as f64 - w * nf).abs() <= slack
        }
    })
}

pub fn is_typical(x: &Sequence, p: &Pmf, eps: TypicalityParams) -> Result<bool> {
    let t = empirical_type(x, p.alphabet())?;
    Ok(counts_typical(t.counts(), t.n(), p, eps))
}

/// Fast typicality check for symbols already known to lie in range.
pub(crate) fn symbols_typical(x: &[u8], p: &Pmf, eps: TypicalityParams) -> bool {
    let mut counts = [0usize; MAX_ALPHABET];
    for &s in x {
        counts[s as usize] += 1;
    }
    counts_typical(&counts[..p.len()], x.len(), p, eps)
}

pub fn avg_distortion(x: &Sequence, y: &Sequence, d: &DistortionSpec) -> Result<f64> {
    check_pair(x, y, d)?;
    let total = d.total_up_to(x.symbols(), y.symbols(), f64::INFINITY);
    Ok(total / x.len() as f64)
}

fn check_pair(x: &Sequence, y: &Sequence, d: &DistortionSpec) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::InvalidSequence("empty sequence".into()));
    }
    if x.max_symbol().unwrap_or(0) >= d.rows() {
        return Err(Error::AlphabetMismatch {
            expected: d.rows(),
            got: x.max_symbol().unwrap_or(0) + 1,
        });
    }
    if y.max_symbol().unwrap_or(0) >= d.cols() {
        return Err(Error::AlphabetMismatch {
            expected: d.cols(),
            got: y.max_symbol().unwrap_or(0) + 1,
        });
    }
    Ok(())
}

/// `x` is ε-typical for `p` and `(1/n) Σ d(x_i, y_i) ≤ D`.
pub fn jointly_typical(
    x: &Sequence,
    y: &Sequence,
    p: &Pmf,
    d: &DistortionSpec,
    eps: TypicalityParams,
) -> Result<bool> {
    check_pair(x, y, d)?;
    if p.len() != d.rows() {
        return Err(Error::AlphabetMismatch {
            expected: d.rows(),
            got: p.len(),
        });
    }
    Ok(symbols_typical(x.symbols(), p, eps) && d.fits(x.symbols(), y.symbols()))
}

/// `ln k!`.
#[inline]
pub fn log_factorial(k: usize) -> f64 {
    if k < 2 {
        0.0
    } else {
        libm::lgamma(k as f64 + 1.0)
    }
}

/// `ln (n! / Π c_s!)`.
pub fn log_multinomial(t: &TypeVector) -> f64 {
    log_multinomial_counts(t.counts())
}

pub fn log_multinomial_counts(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let (imax, &cmax) = match counts.iter().enumerate().max_by_key(|(_, c)| **c) {
        Some(v) => v,
        None => return 0.0,
    };
    // ln(n!/cmax!) by direct summation when short; cancellation in the
    // lgamma difference would otherwise cost relative accuracy.
    let head = if n - cmax <= 10_000 {
        ((cmax + 1)..=n).map(|k| (k as f64).ln()).sum::<f64>()
    } else {
        log_factorial(n) - log_factorial(cmax)
    };
    let tail: f64 = counts
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != imax)
        .map(|(_, c)| log_factorial(*c))
        .sum();
    head - tail
}

/// Table of `ln k!` for `k ≤ max`.
#[derive(Debug, Clone)]
pub struct LogFactorials {
    table: Vec<f64>,
}

impl LogFactorials {
    pub fn new(max: usize) -> Self {
        LogFactorials {
            table: (0..=max).map(log_factorial).collect(),
        }
    }

    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        self.table[k]
    }

    pub fn max(&self) -> usize {
        self.table.len() - 1
    }
}

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let mut acc = LogSumExp::default();
    for v in values {
        acc.add(*v);
    }
    acc.value()
}

/// Streaming log-sum-exp with a running maximum.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }
}

impl LogSumExp {
    #[inline]
    pub fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v <= self.max {
            self.scaled += (v - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    pub fn merge(&mut self, other: LogSumExp) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if self.max == f64::NEG_INFINITY {
            *self = other;
            return;
        }
        if other.max <= self.max {
            self.scaled += other.scaled * (other.max - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - other.max).exp() + other.scaled;
            self.max = other.max;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}
