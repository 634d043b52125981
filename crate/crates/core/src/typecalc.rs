//! Exact covering/collision probabilities by enumeration over joint types.
//!
//! Two probabilities are computed for a reconstruction type `q_Y`:
//!
//! * channel side: `Pr[(Z, y) jointly typical]` for a fixed `y` of type `q_Y`
//!   and `Z` i.i.d. `p_X` (a non-transmitted codeword colliding with `y`);
//! * source side: `Pr[(x, Y) within distortion]` for a fixed `x` of type
//!   `≈ p_X` and `Y` uniform over the type class of `q_Y` (a codeword
//!   covering `x`).
//!
//! Both depend on the sequences only through their joint type, so the sums
//! run over joint types weighted by type-class sizes. Everything stays in
//! natural-log space. [`brute`] recomputes the same numbers by summing over
//! sequences and is the correctness oracle for small `n`.
//!
//! On top of these sit exponent extrapolation, the sweep over `q_Y`, and the
//! survival curve `(1 − F)^{2^{nR}}` of a whole random codebook.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codecs::quantize_type;
use crate::error::{Error, Result};
use crate::primitives::{
    budget_limit, counts_typical, log_multinomial_counts, DistortionSpec, LogFactorials, LogSumExp,
    Pmf, TypeVector, TypicalityParams,
};

pub mod brute;

/// Natural log of a probability; `-inf` encodes zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO: LogProb = LogProb(f64::NEG_INFINITY);
    pub const ONE: LogProb = LogProb(0.0);

    /// Values slightly above zero (rounding) are clamped to zero.
    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value > 1e-9 {
            return Err(Error::InvalidPmf(format!(
                "log-probability {value} exceeds 0"
            )));
        }
        Ok(LogProb(value.min(0.0)))
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn log2(self) -> f64 {
        self.0 / std::f64::consts::LN_2
    }

    pub fn prob(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

/// Enumeration bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeCalcLimits {
    /// Maximum `|X|·|Y|`.
    pub max_cells: usize,
    pub max_n: usize,
}

impl Default for TypeCalcLimits {
    fn default() -> Self {
        TypeCalcLimits {
            max_cells: 9,
            max_n: 2000,
        }
    }
}

impl TypeCalcLimits {
    fn check(&self, n: usize, d: &DistortionSpec) -> Result<()> {
        let cells = d.rows() * d.cols();
        if cells > self.max_cells {
            return Err(Error::ResourceLimit(format!(
                "|X|·|Y| = {cells} exceeds the enumeration limit {}",
                self.max_cells
            )));
        }
        if n > self.max_n {
            return Err(Error::ResourceLimit(format!(
                "block length {n} exceeds the enumeration limit {}",
                self.max_n
            )));
        }
        Ok(())
    }
}

fn check_counts(label: &str, t: &TypeVector, len: usize) -> Result<()> {
    if t.len() != len {
        return Err(Error::AlphabetMismatch {
            expected: len,
            got: t.len(),
        });
    }
    if t.n() == 0 {
        return Err(Error::InvalidSequence(format!(
            "{label} has zero block length"
        )));
    }
    Ok(())
}

/// Channel-side probability: `y` has type `qy_counts`, `Z` is i.i.d. `p`.
pub fn exact_f_chan(
    qy_counts: &TypeVector,
    p: &Pmf,
    d: &DistortionSpec,
    eps: TypicalityParams,
) -> Result<LogProb> {
    exact_f_chan_with(qy_counts, p, d, eps, TypeCalcLimits::default())
}

pub fn exact_f_chan_with(
    qy_counts: &TypeVector,
    p: &Pmf,
    d: &DistortionSpec,
    eps: TypicalityParams,
    limits: TypeCalcLimits,
) -> Result<LogProb> {
    check_counts("qY", qy_counts, d.cols())?;
    if p.len() != d.rows() {
        return Err(Error::AlphabetMismatch {
            expected: d.rows(),
            got: p.len(),
        });
    }
    let n = qy_counts.n();
    limits.check(n, d)?;
    let xs = d.rows();
    let nf = n as f64;
    let upper: Vec<usize> = p
        .weights()
        .iter()
        .map(|&w| {
            if w == 0.0 {
                0
            } else {
                ((w + eps.epsilon()) * nf + 1e-9).floor().min(nf) as usize
            }
        })
        .collect();
    let log_p: Vec<f64> = p.weights().iter().map(|w| w.ln()).collect();
    let mut e = ChanEnum {
        lf: LogFactorials::new(n),
        m: qy_counts.counts(),
        xs,
        d,
        log_p: &log_p,
        upper: &upper,
        limit: budget_limit(n, d.budget()),
        p,
        eps,
        n,
        z: vec![0; xs],
        acc: LogSumExp::default(),
    };
    e.column(0, 0.0, 0.0);
    LogProb::new(e.acc.value())
}

struct ChanEnum<'a> {
    lf: LogFactorials,
    m: &'a [usize],
    xs: usize,
    d: &'a DistortionSpec,
    log_p: &'a [f64],
    upper: &'a [usize],
    limit: f64,
    p: &'a Pmf,
    eps: TypicalityParams,
    n: usize,
    z: Vec<usize>,
    acc: LogSumExp,
}

impl ChanEnum<'_> {
    /// Starts column `b` (output symbol `b`).
    fn column(&mut self, b: usize, dist: f64, logw: f64) {
        if b == self.m.len() {
            if counts_typical(&self.z, self.n, self.p, self.eps) {
                self.acc.add(logw);
            }
            return;
        }
        let head = self.lf.get(self.m[b]);
        self.cell(b, 0, self.m[b], dist, logw + head);
    }

    /// Chooses `k[a][b]`; the last row of a column takes the remainder.
    fn cell(&mut self, b: usize, a: usize, remaining: usize, dist: f64, logw: f64) {
        let last = a + 1 == self.xs;
        let (lo, hi) = if last {
            (remaining, remaining)
        } else {
            (0, remaining)
        };
        let room = self.upper[a].saturating_sub(self.z[a]);
        let dab = self.d.entry(a, b);
        for k in lo..=hi.min(room) {
            let nd = dist + k as f64 * dab;
            if nd > self.limit {
                break;
            }
            if k > 0 && self.log_p[a] == f64::NEG_INFINITY {
                break;
            }
            let term = if k == 0 {
                0.0
            } else {
                k as f64 * self.log_p[a]
            };
            let lw = logw + term - self.lf.get(k);
            self.z[a] += k;
            if last {
                self.column(b + 1, nd, lw);
            } else {
                self.cell(b, a + 1, remaining - k, nd, lw);
            }
            self.z[a] -= k;
        }
    }
}

/// Source-side probability: `x` has type `x_counts`, `Y` is uniform over the
/// type class of `qy_counts`.
pub fn exact_f_src(
    x_counts: &TypeVector,
    qy_counts: &TypeVector,
    d: &DistortionSpec,
) -> Result<LogProb> {
    exact_f_src_with(x_counts, qy_counts, d, TypeCalcLimits::default())
}

pub fn exact_f_src_with(
    x_counts: &TypeVector,
    qy_counts: &TypeVector,
    d: &DistortionSpec,
    limits: TypeCalcLimits,
) -> Result<LogProb> {
    check_counts("x", x_counts, d.rows())?;
    check_counts("qY", qy_counts, d.cols())?;
    if x_counts.n() != qy_counts.n() {
        return Err(Error::LengthMismatch {
            left: x_counts.n(),
            right: qy_counts.n(),
        });
    }
    let n = x_counts.n();
    limits.check(n, d)?;
    let mut e = SrcEnum {
        lf: LogFactorials::new(n),
        c: x_counts.counts(),
        ys: d.cols(),
        d,
        limit: budget_limit(n, d.budget()),
        col: qy_counts.counts().to_vec(),
        acc: LogSumExp::default(),
    };
    e.row(0, 0.0, 0.0);
    let total = log_multinomial_counts(qy_counts.counts());
    LogProb::new(e.acc.value() - total)
}

struct SrcEnum<'a> {
    lf: LogFactorials,
    c: &'a [usize],
    ys: usize,
    d: &'a DistortionSpec,
    limit: f64,
    col: Vec<usize>,
    acc: LogSumExp,
}

impl SrcEnum<'_> {
    fn row(&mut self, a: usize, dist: f64, logw: f64) {
        if a == self.c.len() {
            self.acc.add(logw);
            return;
        }
        let head = self.lf.get(self.c[a]);
        if a + 1 == self.c.len() {
            // The last row is forced to the remaining column capacities.
            let mut nd = dist;
            let mut lw = logw + head;
            for b in 0..self.ys {
                nd += self.col[b] as f64 * self.d.entry(a, b);
                lw -= self.lf.get(self.col[b]);
            }
            if nd <= self.limit {
                self.acc.add(lw);
            }
            return;
        }
        self.cell(a, 0, self.c[a], dist, logw + head);
    }

    fn cell(&mut self, a: usize, b: usize, remaining: usize, dist: f64, logw: f64) {
        let last = b + 1 == self.ys;
        let (lo, hi) = if last {
            (remaining, remaining)
        } else {
            (0, remaining)
        };
        let dab = self.d.entry(a, b);
        for k in lo..=hi.min(self.col[b]) {
            let nd = dist + k as f64 * dab;
            if nd > self.limit {
                break;
            }
            let lw = logw - self.lf.get(k);
            self.col[b] -= k;
            if last {
                self.row(a + 1, nd, lw);
            } else {
                self.cell(a, b + 1, remaining - k, nd, lw);
            }
            self.col[b] += k;
        }
    }
}

/// A way of turning a reconstruction type into a covering/collision
/// probability. Registered by name so sweeps can select the side at runtime.
pub trait CoverSide: Send + Sync {
    fn name(&self) -> &'static str;
    fn log_f(&self, qy_counts: &TypeVector) -> Result<LogProb>;
    /// How `q_Y` is chosen over the grid: both sides keep the largest `F`
    /// (worst case for decoding errors, best case for covering).
    fn prefers(&self, candidate: LogProb, incumbent: LogProb) -> bool {
        candidate.ln() > incumbent.ln()
    }
}

pub struct ChannelSide {
    pub p: Pmf,
    pub d: DistortionSpec,
    pub eps: TypicalityParams,
    pub limits: TypeCalcLimits,
}

impl CoverSide for ChannelSide {
    fn name(&self) -> &'static str {
        "channel"
    }

    fn log_f(&self, qy_counts: &TypeVector) -> Result<LogProb> {
        exact_f_chan_with(qy_counts, &self.p, &self.d, self.eps, self.limits)
    }
}

/// The source sequence takes the quantized type of `p` at each block length.
pub struct SourceSide {
    pub p: Pmf,
    pub d: DistortionSpec,
    pub limits: TypeCalcLimits,
}

impl CoverSide for SourceSide {
    fn name(&self) -> &'static str {
        "source"
    }

    fn log_f(&self, qy_counts: &TypeVector) -> Result<LogProb> {
        let x = quantize_type(&self.p, qy_counts.n())?;
        exact_f_src_with(&x, qy_counts, &self.d, self.limits)
    }
}

type SideBuilder =
    fn(&Pmf, &DistortionSpec, TypicalityParams, TypeCalcLimits) -> Box<dyn CoverSide>;

const COVER_SIDES: &[(&str, SideBuilder)] = &[
    ("channel", |p, d, eps, limits| {
        Box::new(ChannelSide {
            p: p.clone(),
            d: d.clone(),
            eps,
            limits,
        })
    }),
    ("source", |p, d, _eps, limits| {
        Box::new(SourceSide {
            p: p.clone(),
            d: d.clone(),
            limits,
        })
    }),
];

pub fn cover_side_names() -> Vec<&'static str> {
    COVER_SIDES.iter().map(|(n, _)| *n).collect()
}

pub fn cover_side(
    name: &str,
    p: &Pmf,
    d: &DistortionSpec,
    eps: TypicalityParams,
    limits: TypeCalcLimits,
) -> Result<Box<dyn CoverSide>> {
    COVER_SIDES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, build)| build(p, d, eps, limits))
        .ok_or_else(|| {
            Error::config(
                "side",
                format!(
                    "unknown side `{name}`; expected one of {:?}",
                    cover_side_names()
                ),
            )
        })
}

/// Decay rate of `F(n)` in bits per symbol: minus the least-squares slope of
/// `log₂ F(n)` against `n` over the three largest block lengths.
pub fn exponent_estimate(points: &[(usize, LogProb)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 block lengths, got {}",
            points.len()
        )));
    }
    let mut pts = points.to_vec();
    pts.sort_by_key(|(n, _)| *n);
    let tail = &pts[pts.len() - 3..];
    if tail.iter().any(|(_, f)| f.is_zero()) {
        return Err(Error::DegenerateFit(
            "F(n) = 0 at a fitted block length".into(),
        ));
    }
    let xs: Vec<f64> = tail.iter().map(|(n, _)| *n as f64).collect();
    let ys: Vec<f64> = tail.iter().map(|(_, f)| f.log2()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit(
            "block lengths are not distinct".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    // A growing F has no decay rate; slight growth from the typicality
    // factor approaching one is tolerated and reads as zero.
    if slope > GROWTH_TOLERANCE {
        return Err(Error::DegenerateFit(format!(
            "log2 F grows with n (slope {slope:.4})"
        )));
    }
    Ok((-slope).max(0.0))
}

const GROWTH_TOLERANCE: f64 = 1e-2;

/// Result of the sweep over `q_Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    /// Channel-side (worst-case) exponent, bits/symbol.
    pub alpha: f64,
    pub alpha_channel: f64,
    pub alpha_source: f64,
    pub qy_star: Pmf,
    pub qy_star_source: Pmf,
    pub log_f_channel: f64,
    pub log_f_source: f64,
    pub grid_step: f64,
    pub grid_points: usize,
    pub n: usize,
    pub block_lengths: Vec<usize>,
    /// `|alpha_channel − alpha_source|`.
    pub gap: f64,
    /// `2·grid_step·log₂|Y|` plus a finite-ε allowance of `2ε·log₂|X|`.
    pub tolerance: f64,
    pub sides_agree: bool,
}

/// Points of the simplex over `k` symbols whose coordinates are multiples
/// of `1/⌈1/step⌉`.
pub fn simplex_grid(k: usize, step: f64) -> Result<Vec<Pmf>> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::InvalidGrid(format!(
            "grid step {step} outside (0, 0.5]"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidGrid("empty alphabet".into()));
    }
    let parts = (1.0 / step - 1e-9).ceil() as usize;
    let mut out = Vec::new();
    let mut cur = vec![0usize; k];
    fn rec(i: usize, left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Pmf>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            let w: Vec<f64> = cur.iter().map(|c| *c as f64 / parts as f64).collect();
            out.push(Pmf::normalized(&w).expect("grid point"));
            return;
        }
        for c in 0..=left {
            cur[i] = c;
            rec(i + 1, left - c, parts, cur, out);
        }
    }
    rec(0, parts, parts, &mut cur, &mut out);
    if out.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    Ok(out)
}

/// Block lengths used for exponent fits at target `n`.
pub fn fit_block_lengths(n: usize) -> Vec<usize> {
    vec![(n / 4).max(1), (n / 2).max(2), n.max(3)]
}

fn best_on_grid(side: &dyn CoverSide, grid: &[Pmf], n: usize) -> Result<(Pmf, LogProb)> {
    let values: Vec<(usize, LogProb)> = grid
        .par_iter()
        .enumerate()
        .map(|(i, q)| Ok((i, side.log_f(&quantize_type(q, n)?)?)))
        .collect::<Result<_>>()?;
    let mut best: Option<(usize, LogProb)> = None;
    for (i, f) in values {
        match best {
            Some((_, b)) if !side.prefers(f, b) => {}
            _ => best = Some((i, f)),
        }
    }
    let (i, f) = best.ok_or_else(|| Error::InvalidGrid("grid is empty".into()))?;
    Ok((grid[i].clone(), f))
}

fn side_exponent(side: &dyn CoverSide, q: &Pmf, lengths: &[usize]) -> Result<f64> {
    let pts: Vec<(usize, LogProb)> = lengths
        .iter()
        .map(|&m| Ok((m, side.log_f(&quantize_type(q, m)?)?)))
        .collect::<Result<_>>()?;
    exponent_estimate(&pts)
}

/// Sweeps `q_Y` over a simplex grid at block length `n`, keeps the `q_Y`
/// with the largest `F` on each side, and extrapolates each side's decay
/// exponent from `n/4`, `n/2`, `n`.
pub fn optimize_qy(
    p: &Pmf,
    d: &DistortionSpec,
    eps: TypicalityParams,
    n: usize,
    grid_step: f64,
) -> Result<ThresholdEstimate> {
    optimize_qy_with(p, d, eps, n, grid_step, TypeCalcLimits::default())
}

pub fn optimize_qy_with(
    p: &Pmf,
    d: &DistortionSpec,
    eps: TypicalityParams,
    n: usize,
    grid_step: f64,
    limits: TypeCalcLimits,
) -> Result<ThresholdEstimate> {
    let grid = simplex_grid(d.cols(), grid_step)?;
    let chan = ChannelSide {
        p: p.clone(),
        d: d.clone(),
        eps,
        limits,
    };
    let src = SourceSide {
        p: p.clone(),
        d: d.clone(),
        limits,
    };
    let lengths = fit_block_lengths(n);
    let (q_chan, f_chan) = best_on_grid(&chan, &grid, n)?;
    let (q_src, f_src) = best_on_grid(&src, &grid, n)?;
    let alpha_channel = side_exponent(&chan, &q_chan, &lengths)?;
    let alpha_source = side_exponent(&src, &q_src, &lengths)?;
    let gap = (alpha_channel - alpha_source).abs();
    let tolerance =
        2.0 * grid_step * (d.cols() as f64).log2() + 2.0 * eps.epsilon() * (d.rows() as f64).log2();
    Ok(ThresholdEstimate {
        alpha: alpha_channel,
        alpha_channel,
        alpha_source,
        qy_star: q_chan,
        qy_star_source: q_src,
        log_f_channel: f_chan.ln(),
        log_f_source: f_src.ln(),
        grid_step,
        grid_points: grid.len(),
        n,
        block_lengths: lengths,
        gap,
        tolerance,
        sides_agree: gap <= tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rate: f64,
    pub survival: f64,
}

/// `ln(−ln(1 − e^F))`, accurate for tiny `F`.
fn log_neg_log1m(log_f: f64) -> f64 {
    if log_f < -20.0 {
        // −ln(1−u) = u(1 + u/2 + u²/3 + …)
        let u = log_f.exp();
        log_f + (u / 2.0 + u * u / 3.0).ln_1p()
    } else {
        (-(-log_f.exp()).ln_1p()).ln()
    }
}

/// `(1 − F)^{2^{nR}}` for each rate.
pub fn phase_transition_curve(n: usize, rates: &[f64], log_f: LogProb) -> Vec<CurvePoint> {
    rates
        .iter()
        .map(|&rate| {
            let survival = if log_f.is_zero() {
                1.0
            } else if log_f.ln() >= 0.0 {
                0.0
            } else {
                let g = log_neg_log1m(log_f.ln());
                let exponent = n as f64 * rate * std::f64::consts::LN_2 + g;
                // overflow guard: e^{exponent} beyond ~1e300 means survival 0
                if exponent > 700.0 {
                    0.0
                } else {
                    (-exponent.exp()).exp()
                }
            };
            CurvePoint {
                rate,
                survival: survival.clamp(0.0, 1.0),
            }
        })
        .collect()
}

/// The rate with `2^{nR}·F = ln 2`, where the survival curve crosses ½.
pub fn midpoint_rate(n: usize, log_f: LogProb) -> f64 {
    (std::f64::consts::LN_2.ln() - log_f.ln()) / (n as f64 * std::f64::consts::LN_2)
}

/// Evenly spaced rates from `start` to `stop` inclusive.
pub fn rate_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || stop < start {
        return Err(Error::InvalidGrid(format!(
            "bad rate grid {start}..{stop} step {step}"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| start + i as f64 * step).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tv(c: &[usize]) -> TypeVector {
        TypeVector::new(c.to_vec()).unwrap()
    }

    fn eps(e: f64) -> TypicalityParams {
        TypicalityParams::new(e).unwrap()
    }

    #[test]
    fn chan_n2_hand_example() {
        // n=2, uniform Z, y of type (1,1), D=1/2: any z within one mismatch.
        // z=(0,0),(1,1) have one mismatch against y=(0,1); (0,1) none;
        // (1,0) two. Probability 3/4.
        let p = Pmf::uniform(2).unwrap();
        let d = DistortionSpec::hamming(2, 0.5).unwrap();
        let f = exact_f_chan(&tv(&[1, 1]), &p, &d, eps(0.5)).unwrap();
        assert!((f.prob() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn chan_vacuous_constraints_give_one() {
        let p = Pmf::new(vec![0.2, 0.3, 0.5]).unwrap();
        let d =
            DistortionSpec::new(vec![vec![0.0, 1.0], vec![2.0, 0.0], vec![1.0, 1.0]], 2.0).unwrap();
        let f = exact_f_chan(&tv(&[4, 3]), &p, &d, eps(1.0)).unwrap();
        assert!(f.ln().abs() < 1e-12);
    }

    #[test]
    fn chan_empty_event() {
        // Distortion matrix with min entry 1 and D = 0.5: no z qualifies.
        let p = Pmf::uniform(2).unwrap();
        let d = DistortionSpec::new(vec![vec![1.0, 2.0], vec![1.0, 3.0]], 0.5).unwrap();
        assert!(exact_f_chan(&tv(&[3, 2]), &p, &d, eps(0.5))
            .unwrap()
            .is_zero());
    }

    #[test]
    fn src_n2_examples() {
        let d = DistortionSpec::hamming(2, 0.5).unwrap();
        let f = exact_f_src(&tv(&[2, 0]), &tv(&[1, 1]), &d).unwrap();
        assert!((f.prob() - 1.0).abs() < 1e-12);
        let d = DistortionSpec::hamming(2, 0.4).unwrap();
        assert!(exact_f_src(&tv(&[2, 0]), &tv(&[1, 1]), &d)
            .unwrap()
            .is_zero());
        let d = DistortionSpec::hamming(3, 1.0).unwrap();
        let f = exact_f_src(&tv(&[2, 3, 1]), &tv(&[1, 1, 4]), &d).unwrap();
        assert!(f.ln().abs() < 1e-12);
    }

    #[test]
    fn limits_enforced() {
        let p = Pmf::uniform(4).unwrap();
        let d = DistortionSpec::hamming(4, 0.5).unwrap();
        assert!(matches!(
            exact_f_chan(&tv(&[1, 1, 1, 1]), &p, &d, eps(0.1)),
            Err(Error::ResourceLimit(_))
        ));
        let p = Pmf::uniform(2).unwrap();
        let d = DistortionSpec::hamming(2, 0.5).unwrap();
        assert!(matches!(
            exact_f_chan(&tv(&[1500, 1500]), &p, &d, eps(0.1)),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn exponent_of_exact_geometric_decay() {
        let c = 0.37;
        let pts: Vec<(usize, LogProb)> = [10usize, 20, 40, 80]
            .iter()
            .map(|&n| {
                (
                    n,
                    LogProb::new(-c * n as f64 * std::f64::consts::LN_2).unwrap(),
                )
            })
            .collect();
        assert!((exponent_estimate(&pts).unwrap() - c).abs() < 1e-12);
        let ones: Vec<(usize, LogProb)> = [10usize, 20, 40]
            .iter()
            .map(|&n| (n, LogProb::ONE))
            .collect();
        assert_eq!(exponent_estimate(&ones).unwrap(), 0.0);
    }

    #[test]
    fn exponent_rejects_bad_input() {
        let two = [(10, LogProb::ONE), (20, LogProb::ONE)];
        assert!(matches!(
            exponent_estimate(&two),
            Err(Error::DegenerateFit(_))
        ));
        let growing: Vec<(usize, LogProb)> = [10usize, 20, 40]
            .iter()
            .map(|&n| (n, LogProb::new(-100.0 / n as f64).unwrap()))
            .collect();
        assert!(matches!(
            exponent_estimate(&growing),
            Err(Error::DegenerateFit(_))
        ));
        let zero = [(10, LogProb::ONE), (20, LogProb::ZERO), (30, LogProb::ONE)];
        assert!(exponent_estimate(&zero).is_err());
    }

    #[test]
    fn curve_limits_and_midpoint() {
        let n = 100;
        let log_f = LogProb::new(-40.0 * std::f64::consts::LN_2).unwrap();
        let r_mid = midpoint_rate(n, log_f);
        let pts = phase_transition_curve(n, &[0.0, r_mid, 1.0], log_f);
        assert!(pts[0].survival > 1.0 - 1e-9);
        assert!((pts[1].survival - 0.5).abs() < 1e-6);
        assert!(pts[2].survival < 1e-9);
        assert_eq!(
            phase_transition_curve(n, &[0.5], LogProb::ZERO)[0].survival,
            1.0
        );
        assert_eq!(
            phase_transition_curve(n, &[0.5], LogProb::ONE)[0].survival,
            0.0
        );
    }

    #[test]
    fn curve_is_monotone() {
        let log_f = LogProb::new(-3.0).unwrap();
        let rates = rate_grid(0.0, 1.0, 0.01).unwrap();
        let pts = phase_transition_curve(20, &rates, log_f);
        assert!(pts.windows(2).all(|w| w[1].survival <= w[0].survival));
    }

    #[test]
    fn grid_shapes() {
        assert_eq!(simplex_grid(2, 0.5).unwrap().len(), 3);
        assert_eq!(simplex_grid(3, 0.25).unwrap().len(), 15);
        assert!(matches!(simplex_grid(2, 0.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(simplex_grid(2, 0.6), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn symmetric_problem_picks_uniform_qy() {
        let p = Pmf::uniform(2).unwrap();
        let d = DistortionSpec::hamming(2, 0.2).unwrap();
        let t = optimize_qy(&p, &d, eps(0.05), 120, 0.1).unwrap();
        assert!((t.qy_star.get(0) - 0.5).abs() < 1e-9, "{t:?}");
        assert!((t.qy_star_source.get(0) - 0.5).abs() < 1e-9, "{t:?}");
    }

    #[test]
    fn large_budget_has_zero_threshold() {
        let p = Pmf::uniform(2).unwrap();
        let d = DistortionSpec::hamming(2, 0.5).unwrap();
        let t = optimize_qy(&p, &d, eps(0.02), 200, 0.25).unwrap();
        assert!(t.alpha_channel < 0.01 && t.alpha_source < 0.01, "{t:?}");
    }

    #[test]
    fn side_registry() {
        let p = Pmf::uniform(2).unwrap();
        let d = DistortionSpec::hamming(2, 0.3).unwrap();
        let lim = TypeCalcLimits::default();
        assert_eq!(
            cover_side("channel", &p, &d, eps(0.1), lim).unwrap().name(),
            "channel"
        );
        assert_eq!(
            cover_side("source", &p, &d, eps(0.1), lim).unwrap().name(),
            "source"
        );
        assert!(cover_side("nope", &p, &d, eps(0.1), lim).is_err());
    }
}
