//! Sequence-level enumeration of the same probabilities as the parent
//! module. Exponential in `n`; kept as an independent check.

use crate::error::{Error, Result};
use crate::primitives::{
    counts_typical, log_sum_exp, DistortionSpec, Pmf, TypeVector, TypicalityParams,
};

use super::LogProb;

/// Largest number of sequences either enumeration will visit.
pub const MAX_SEQUENCES: u64 = 10_000_000;

fn sequence_count(k: usize, n: usize) -> Result<u64> {
    let mut total: u64 = 1;
    for _ in 0..n {
        total = total
            .checked_mul(k as u64)
            .filter(|t| *t <= MAX_SEQUENCES)
            .ok_or_else(|| {
                Error::ResourceLimit(format!("{k}^{n} sequences exceed {MAX_SEQUENCES}"))
            })?;
    }
    Ok(total)
}

/// Advances `seq` as a base-`k` odometer; false once it wraps.
fn next(seq: &mut [u8], k: usize) -> bool {
    for s in seq.iter_mut() {
        if (*s as usize) + 1 < k {
            *s += 1;
            return true;
        }
        *s = 0;
    }
    false
}

fn counts_of(seq: &[u8], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &s in seq {
        c[s as usize] += 1;
    }
    c
}

/// Sums `Pr[Z = z]` over every `z ∈ X^n` jointly typical with a fixed `y`
/// of type `qy_counts`.
pub fn brute_force_f_chan(
    qy_counts: &TypeVector,
    p: &Pmf,
    d: &DistortionSpec,
    eps: TypicalityParams,
) -> Result<LogProb> {
    let n = qy_counts.n();
    let xs = d.rows();
    sequence_count(xs, n)?;
    let y = qy_counts.canonical_sequence();
    let mut z = vec![0u8; n];
    let mut terms = Vec::new();
    loop {
        if d.fits(&z, y.symbols()) && counts_typical(&counts_of(&z, xs), n, p, eps) {
            terms.push(z.iter().map(|&s| p.get(s as usize).ln()).sum::<f64>());
        }
        if !next(&mut z, xs) {
            break;
        }
    }
    LogProb::new(log_sum_exp(&terms))
}

/// Fraction of sequences `y` of type `qy_counts` within distortion of a
/// fixed `x` of type `x_counts`.
pub fn brute_force_f_src(
    x_counts: &TypeVector,
    qy_counts: &TypeVector,
    d: &DistortionSpec,
) -> Result<LogProb> {
    let n = qy_counts.n();
    if x_counts.n() != n {
        return Err(Error::LengthMismatch {
            left: x_counts.n(),
            right: n,
        });
    }
    let ys = d.cols();
    sequence_count(ys, n)?;
    let x = x_counts.canonical_sequence();
    let mut y = vec![0u8; n];
    let (mut hits, mut total) = (0u64, 0u64);
    loop {
        if counts_of(&y, ys) == qy_counts.counts() {
            total += 1;
            if d.fits(x.symbols(), &y) {
                hits += 1;
            }
        }
        if !next(&mut y, ys) {
            break;
        }
    }
    if hits == 0 {
        return Ok(LogProb::ZERO);
    }
    LogProb::new((hits as f64 / total as f64).ln())
}
