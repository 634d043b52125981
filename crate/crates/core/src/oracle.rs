//! Reference values for the rate-distortion function.
//!
//! [`blahut_arimoto`] computes `R(D)` for a memoryless source by the
//! alternating minimization over test channels, with a bisection on the
//! slope parameter to hit a target distortion. [`brute_force_operational_rd`]
//! finds the smallest codebook that covers a target probability at a tiny
//! block length by trying every subset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::{within_budget, DistortionSpec, Pmf};

const MAX_INNER_ITERATIONS: usize = 200_000;
const MAX_BISECTION_STEPS: usize = 200;
const MAX_SLOPE: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub distortion: f64,
    /// Bits per symbol.
    pub rate: f64,
    /// Total inner iterations across the bisection.
    pub iterations: usize,
    /// Upper minus lower bound on the rate at the final slope, bits.
    pub gap: f64,
    /// `−dR/dD` in nats per unit distortion.
    pub slope: f64,
}

/// Smallest achievable expected distortion: each `x` maps to its cheapest `y`.
pub fn min_distortion(p: &Pmf, d: &DistortionSpec) -> f64 {
    (0..d.rows())
        .map(|x| {
            let best = (0..d.cols())
                .map(|y| d.entry(x, y))
                .fold(f64::INFINITY, f64::min);
            p.get(x) * best
        })
        .sum()
}

/// Distortion at rate zero: the best single reconstruction symbol.
pub fn max_distortion(p: &Pmf, d: &DistortionSpec) -> f64 {
    (0..d.cols())
        .map(|y| (0..d.rows()).map(|x| p.get(x) * d.entry(x, y)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

struct SlopeSolution {
    distortion: f64,
    rate_nats: f64,
    gap_nats: f64,
    iterations: usize,
}

/// Runs the alternating updates at a fixed slope `s` until the rate bounds
/// meet within `tol_nats`.
fn solve_at_slope(p: &Pmf, d: &DistortionSpec, s: f64, tol_nats: f64) -> Result<SlopeSolution> {
    let (xs, ys) = (d.rows(), d.cols());
    let kernel: Vec<f64> = (0..xs)
        .flat_map(|x| (0..ys).map(move |y| (x, y)))
        .map(|(x, y)| (-s * d.entry(x, y)).exp())
        .collect();
    let mut q = vec![1.0 / ys as f64; ys];
    let mut z = vec![0.0; xs];
    let mut c = vec![0.0; ys];
    let mut gap = f64::INFINITY;
    for it in 1..=MAX_INNER_ITERATIONS {
        for x in 0..xs {
            z[x] = (0..ys).map(|y| q[y] * kernel[x * ys + y]).sum();
        }
        for y in 0..ys {
            c[y] = (0..xs)
                .filter(|&x| p.get(x) > 0.0)
                .map(|x| p.get(x) * kernel[x * ys + y] / z[x])
                .sum();
        }
        // q·c is the output marginal of the current test channel. The
        // duality gap is max ln c − E_{q·c}[ln c].
        let max_log_c = (0..ys)
            .filter(|&y| q[y] > 0.0)
            .map(|y| c[y].ln())
            .fold(f64::NEG_INFINITY, f64::max);
        let mean_log_c: f64 = (0..ys)
            .filter(|&y| q[y] > 0.0)
            .map(|y| q[y] * c[y] * c[y].ln())
            .sum();
        gap = max_log_c - mean_log_c;
        if gap < tol_nats {
            let mut distortion = 0.0;
            let mut rate = 0.0;
            for x in 0..xs {
                if p.get(x) == 0.0 {
                    continue;
                }
                for y in 0..ys {
                    let cond = q[y] * kernel[x * ys + y] / z[x];
                    if cond > 0.0 {
                        distortion += p.get(x) * cond * d.entry(x, y);
                        rate += p.get(x) * cond * (cond / (q[y] * c[y])).ln();
                    }
                }
            }
            return Ok(SlopeSolution {
                distortion,
                rate_nats: rate.max(0.0),
                gap_nats: gap.max(0.0),
                iterations: it,
            });
        }
        for y in 0..ys {
            q[y] *= c[y];
        }
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= total);
    }
    Err(Error::NoConvergence {
        iterations: MAX_INNER_ITERATIONS,
        gap: gap / std::f64::consts::LN_2,
    })
}

/// `R(D)` in bits per symbol, accurate to about `tol` bits.
///
/// Targets below the minimum achievable distortion are clamped to it (with a
/// warning); targets at or above the zero-rate distortion return rate zero.
pub fn blahut_arimoto(p: &Pmf, d: &DistortionSpec, distortion: f64, tol: f64) -> Result<RdPoint> {
    if p.len() != d.rows() {
        return Err(Error::AlphabetMismatch {
            expected: d.rows(),
            got: p.len(),
        });
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::config(
            "tol",
            format!("tolerance must be positive, got {tol}"),
        ));
    }
    let d_max = max_distortion(p, d);
    let d_min = min_distortion(p, d);
    if distortion >= d_max {
        return Ok(RdPoint {
            distortion,
            rate: 0.0,
            iterations: 0,
            gap: 0.0,
            slope: 0.0,
        });
    }
    let mut target = distortion;
    if target < d_min {
        log::warn!("distortion {target} below the minimum {d_min}; clamping");
        target = d_min;
    }
    let tol_nats = tol * std::f64::consts::LN_2 / 4.0;
    let mut iterations = 0;
    let mut solve = |s: f64| -> Result<SlopeSolution> {
        let sol = solve_at_slope(p, d, s, tol_nats)?;
        iterations += sol.iterations;
        Ok(sol)
    };

    // Expected distortion falls as the slope grows; find a slope past the
    // target, then bisect.
    let mut hi = 1.0;
    let mut hi_sol = solve(hi)?;
    while hi_sol.distortion > target && hi < MAX_SLOPE {
        hi *= 2.0;
        hi_sol = solve(hi)?;
    }
    let mut lo = 0.0;
    let mut best = (hi, hi_sol);
    if best.1.distortion > target {
        // Only reachable at (or numerically next to) the minimum distortion.
        log::warn!("slope cap reached at distortion {}", best.1.distortion);
    } else {
        for _ in 0..MAX_BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            let sol = solve(mid)?;
            if sol.distortion > target {
                lo = mid;
            } else {
                hi = mid;
                best = (mid, sol);
            }
            if (best.1.distortion - target).abs() < 1e-10 || hi - lo < 1e-12 * hi.max(1.0) {
                break;
            }
        }
    }
    let (s, sol) = best;
    // First-order correction along the supporting line of slope −s.
    let rate_nats = (sol.rate_nats - s * (target - sol.distortion)).max(0.0);
    Ok(RdPoint {
        distortion: target,
        rate: rate_nats / std::f64::consts::LN_2,
        iterations,
        gap: sol.gap_nats / std::f64::consts::LN_2,
        slope: s,
    })
}

/// `R(D)` at each distortion in `grid`.
pub fn rd_curve(p: &Pmf, d: &DistortionSpec, grid: &[f64], tol: f64) -> Result<Vec<RdPoint>> {
    grid.iter().map(|&v| blahut_arimoto(p, d, v, tol)).collect()
}

/// Smallest codebook at block length `n` covering source probability at
/// least `1 − delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationalRd {
    pub n: usize,
    pub codewords: usize,
    /// `log₂(codewords)/n`.
    pub rate: f64,
    pub coverage: f64,
}

/// Largest `|Y|^n` the subset search accepts.
pub const MAX_RECONSTRUCTIONS: usize = 4096;
/// Largest `|X|^n` the subset search accepts.
pub const MAX_SOURCES: usize = 1 << 16;

fn all_sequences(k: usize, n: usize, cap: usize) -> Result<Vec<Vec<u8>>> {
    let count = (k as u128).pow(n as u32);
    if count > cap as u128 {
        return Err(Error::ResourceLimit(format!(
            "{k}^{n} sequences exceed {cap}"
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut cur = vec![0u8; n];
    loop {
        out.push(cur.clone());
        let mut i = 0;
        loop {
            if i == n {
                return Ok(out);
            }
            if (cur[i] as usize) + 1 < k {
                cur[i] += 1;
                break;
            }
            cur[i] = 0;
            i += 1;
        }
    }
}

/// Exhaustive search over `k`-subsets of `Y^n`, for `k = 1..=max_codewords`.
pub fn brute_force_operational_rd(
    p: &Pmf,
    d: &DistortionSpec,
    budget: f64,
    n: usize,
    delta: f64,
    max_codewords: usize,
) -> Result<OperationalRd> {
    if p.len() != d.rows() {
        return Err(Error::AlphabetMismatch {
            expected: d.rows(),
            got: p.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidSequence(
            "block length must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::config(
            "delta",
            format!("delta must lie in [0, 1), got {delta}"),
        ));
    }
    let sources = all_sequences(d.rows(), n, MAX_SOURCES)?;
    let words = all_sequences(d.cols(), n, MAX_RECONSTRUCTIONS)?;
    let probs: Vec<f64> = sources
        .iter()
        .map(|x| x.iter().map(|&s| p.get(s as usize)).product())
        .collect();
    let blocks = sources.len().div_ceil(64);
    let mut covers: Vec<Vec<u64>> = words
        .iter()
        .map(|y| {
            let mut bits = vec![0u64; blocks];
            for (i, x) in sources.iter().enumerate() {
                let total: f64 = x
                    .iter()
                    .zip(y)
                    .map(|(&a, &b)| d.entry(a as usize, b as usize))
                    .sum();
                if within_budget(total, n, budget) {
                    bits[i / 64] |= 1 << (i % 64);
                }
            }
            bits
        })
        .collect();
    covers.sort();
    covers.dedup();
    let target = 1.0 - delta - 1e-12;
    let mass = |bits: &[u64]| -> f64 {
        let mut m = 0.0;
        for (bi, &w) in bits.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                let t = w.trailing_zeros() as usize;
                m += probs[bi * 64 + t];
                w &= w - 1;
            }
        }
        m
    };
    for k in 1..=max_codewords.min(covers.len()) {
        if let Some(coverage) = best_k_subset(&covers, k, target, &mass) {
            let codewords = k;
            return Ok(OperationalRd {
                n,
                codewords,
                rate: (codewords as f64).log2() / n as f64,
                coverage,
            });
        }
    }
    Err(Error::ResourceLimit(format!(
        "no codebook of at most {max_codewords} words reaches coverage {}",
        1.0 - delta
    )))
}

/// First `k`-subset whose union reaches `target`, with its coverage.
fn best_k_subset(
    covers: &[Vec<u64>],
    k: usize,
    target: f64,
    mass: &dyn Fn(&[u64]) -> f64,
) -> Option<f64> {
    let blocks = covers[0].len();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut union = vec![0u64; blocks];
    loop {
        union.iter_mut().for_each(|w| *w = 0);
        for &i in &idx {
            for (u, c) in union.iter_mut().zip(&covers[i]) {
                *u |= c;
            }
        }
        let m = mass(&union);
        if m >= target {
            return Some(m);
        }
        // next combination in lexicographic order
        let mut pos = k;
        loop {
            if pos == 0 {
                return None;
            }
            pos -= 1;
            if idx[pos] < covers.len() - (k - pos) {
                break;
            }
        }
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Binary entropy in bits.
pub fn binary_entropy(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    -t * t.log2() - (1.0 - t) * (1.0 - t).log2()
}
