//! General block channels, channel sets, and the excess-distortion
//! membership estimator.
//!
//! A channel is anything that maps a length-`n` input block and a noise seed
//! to a length-`n` output block. No memorylessness or causality is assumed;
//! [`BurstChannel`] and [`SourceCodeChannel`] are deliberately non-memoryless.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::codecs::{
    default_reconstruction_pmf, draw_iid, gen_source_codebook, source_encode, Codebook,
    CodebookKind, Encoded,
};
use crate::error::{Error, Result};
use crate::primitives::{Alphabet, DistortionSpec, Pmf, Sequence, TypicalityParams};
use crate::randomness::{child_seed, rng_from, CommonRandomness};

/// JSON-serializable identity of a channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDescriptor {
    pub kind: String,
    pub label: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// A block channel `⟨c^n⟩`: for every block length, a stochastic map from
/// input blocks to output blocks. The seed carries all channel randomness.
pub trait GeneralChannel: Send + Sync {
    fn descriptor(&self) -> ChannelDescriptor;
    fn input_alphabet(&self) -> Alphabet;
    fn output_alphabet(&self) -> Alphabet;
    fn transmit(&self, x: &Sequence, seed: u64) -> Result<Sequence>;
}

fn check_input(c: &dyn GeneralChannel, x: &Sequence) -> Result<()> {
    if x.is_empty() {
        return Err(Error::InvalidSequence("empty input block".into()));
    }
    let k = c.input_alphabet().size();
    if x.max_symbol().unwrap_or(0) >= k {
        return Err(Error::AlphabetMismatch {
            expected: k,
            got: x.max_symbol().unwrap_or(0) + 1,
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct IdentityChannel {
    alphabet: Alphabet,
}

impl IdentityChannel {
    pub fn new(alphabet: Alphabet) -> Self {
        IdentityChannel { alphabet }
    }
}

impl GeneralChannel for IdentityChannel {
    fn descriptor(&self) -> ChannelDescriptor {
        ChannelDescriptor {
            kind: "identity".into(),
            label: "identity".into(),
            params: json!({ "alphabet": self.alphabet.size() }),
        }
    }

    fn input_alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn output_alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn transmit(&self, x: &Sequence, _seed: u64) -> Result<Sequence> {
        check_input(self, x)?;
        Ok(x.clone())
    }
}

/// Row-stochastic matrix `w[x][y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || cols == 0 {
            return Err(Error::InvalidChannel("empty transition matrix".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::InvalidChannel(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            Pmf::new(r.clone()).map_err(|e| Error::InvalidChannel(format!("row {i}: {e}")))?;
        }
        Ok(TransitionMatrix { rows })
    }

    pub fn identity(k: usize) -> Result<Self> {
        TransitionMatrix::new(
            (0..k)
                .map(|a| (0..k).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    /// Symmetric channel: keeps a symbol with probability `1 − flip`, else
    /// moves it uniformly to one of the other `k − 1` letters.
    pub fn symmetric(k: usize, flip: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&flip) {
            return Err(Error::InvalidChannel(format!(
                "flip probability {flip} outside [0,1]"
            )));
        }
        if k == 1 {
            return TransitionMatrix::identity(1);
        }
        let off = flip / (k - 1) as f64;
        TransitionMatrix::new(
            (0..k)
                .map(|a| {
                    (0..k)
                        .map(|b| if a == b { 1.0 - flip } else { off })
                        .collect()
                })
                .collect(),
        )
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn inputs(&self) -> usize {
        self.rows.len()
    }

    pub fn outputs(&self) -> usize {
        self.rows[0].len()
    }
}

/// Discrete memoryless channel.
#[derive(Debug, Clone)]
pub struct Dmc {
    w: TransitionMatrix,
    samplers: Vec<WeightedIndex<f64>>,
    label: String,
}

impl Dmc {
    pub fn new(w: TransitionMatrix) -> Result<Self> {
        let samplers = w
            .rows()
            .iter()
            .map(|r| {
                WeightedIndex::new(r.iter().copied())
                    .map_err(|e| Error::InvalidChannel(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dmc {
            label: format!("dmc{}x{}", w.inputs(), w.outputs()),
            w,
            samplers,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn matrix(&self) -> &TransitionMatrix {
        &self.w
    }
}

impl GeneralChannel for Dmc {
    fn descriptor(&self) -> ChannelDescriptor {
        ChannelDescriptor {
            kind: "dmc".into(),
            label: self.label.clone(),
            params: json!({ "matrix": self.w.rows() }),
        }
    }

    fn input_alphabet(&self) -> Alphabet {
        Alphabet::new(self.w.inputs()).expect("validated")
    }

    fn output_alphabet(&self) -> Alphabet {
        Alphabet::new(self.w.outputs()).expect("validated")
    }

    fn transmit(&self, x: &Sequence, seed: u64) -> Result<Sequence> {
        check_input(self, x)?;
        let mut rng = rng_from(seed);
        Ok(Sequence::from_raw(
            x.symbols()
                .iter()
                .map(|s| self.samplers[*s as usize].sample(&mut rng) as u8)
                .collect(),
        ))
    }
}

/// One-shot memoryless transmission through `w`.
pub fn dmc_transmit(x: &Sequence, w: &TransitionMatrix, seed: u64) -> Result<Sequence> {
    Dmc::new(w.clone())?.transmit(x, seed)
}

/// Emits the same symbol in every position.
#[derive(Debug, Clone)]
pub struct ConstantChannel {
    input: Alphabet,
    output: Alphabet,
    symbol: u8,
}

impl ConstantChannel {
    pub fn new(input: Alphabet, output: Alphabet, symbol: usize) -> Result<Self> {
        if symbol >= output.size() {
            return Err(Error::InvalidChannel(format!(
                "symbol {symbol} outside output alphabet"
            )));
        }
        Ok(ConstantChannel {
            input,
            output,
            symbol: symbol as u8,
        })
    }
}

impl GeneralChannel for ConstantChannel {
    fn descriptor(&self) -> ChannelDescriptor {
        ChannelDescriptor {
            kind: "constant".into(),
            label: format!("constant{}", self.symbol),
            params: json!({ "symbol": self.symbol }),
        }
    }

    fn input_alphabet(&self) -> Alphabet {
        self.input
    }

    fn output_alphabet(&self) -> Alphabet {
        self.output
    }

    fn transmit(&self, x: &Sequence, _seed: u64) -> Result<Sequence> {
        check_input(self, x)?;
        Ok(Sequence::from_raw(vec![self.symbol; x.len()]))
    }
}

/// Corrupts one contiguous (cyclic) run of `⌊fraction·n⌋` positions, starting
/// at a seed-chosen offset, by shifting each symbol to its successor mod `k`.
/// Under Hamming distortion every block lands at exactly `⌊fraction·n⌋/n`.
#[derive(Debug, Clone)]
pub struct BurstChannel {
    alphabet: Alphabet,
    fraction: f64,
}

impl BurstChannel {
    pub fn new(alphabet: Alphabet, fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidChannel(format!(
                "burst fraction {fraction} outside [0,1]"
            )));
        }
        Ok(BurstChannel { alphabet, fraction })
    }
}

impl GeneralChannel for BurstChannel {
    fn descriptor(&self) -> ChannelDescriptor {
        ChannelDescriptor {
            kind: "burst".into(),
            label: format!("burst{}", self.fraction),
            params: json!({ "fraction": self.fraction }),
        }
    }

    fn input_alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn output_alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn transmit(&self, x: &Sequence, seed: u64) -> Result<Sequence> {
        check_input(self, x)?;
        let n = x.len();
        let len = (self.fraction * n as f64 + 1e-9).floor() as usize;
        let start = rng_from(seed).gen_range(0..n);
        let k = self.alphabet.size() as u8;
        let mut out = x.symbols().to_vec();
        if k > 1 {
            for i in 0..len {
                let pos = (start + i) % n;
                out[pos] = (out[pos] + 1) % k;
            }
        }
        Ok(Sequence::from_raw(out))
    }
}

/// How a [`SourceCodeChannel`] obtains its codebook for block length `n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceCodeSpec {
    pub rate: f64,
    pub q: Pmf,
    pub max_words: usize,
    pub randomness: CommonRandomness,
}

enum CodebookSource {
    Fixed(Arc<Codebook>),
    PerBlockLength {
        spec: SourceCodeSpec,
        cache: Mutex<HashMap<usize, Arc<Codebook>>>,
    },
}

/// A lossy source code seen as a channel: the input block is encoded to the
/// first jointly typical reconstruction, and the reconstruction is the
/// output. Encoder failures emit codeword 0. The output range is the
/// codebook, so at most `⌈2^{nR}⌉` distinct blocks ever appear.
pub struct SourceCodeChannel {
    source: CodebookSource,
    p: Pmf,
    d: DistortionSpec,
    eps: TypicalityParams,
}

impl std::fmt::Debug for SourceCodeChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceCodeChannel")
            .field("descriptor", &self.descriptor())
            .finish()
    }
}

impl SourceCodeChannel {
    pub fn from_codebook(
        codebook: Arc<Codebook>,
        p: Pmf,
        d: DistortionSpec,
        eps: TypicalityParams,
    ) -> Result<Self> {
        if codebook.kind() != CodebookKind::SourceCode {
            return Err(Error::InvalidChannel(
                "source-code channel needs a source codebook".into(),
            ));
        }
        if codebook.is_empty() {
            return Err(Error::InvalidChannel("empty codebook".into()));
        }
        check_alphabets(&p, &d, codebook.alphabet())?;
        Ok(SourceCodeChannel {
            source: CodebookSource::Fixed(codebook),
            p,
            d,
            eps,
        })
    }

    /// A source code for every block length, generated on first use.
    pub fn random(
        spec: SourceCodeSpec,
        p: Pmf,
        d: DistortionSpec,
        eps: TypicalityParams,
    ) -> Result<Self> {
        check_alphabets(&p, &d, spec.q.alphabet())?;
        Ok(SourceCodeChannel {
            source: CodebookSource::PerBlockLength {
                spec,
                cache: Mutex::new(HashMap::new()),
            },
            p,
            d,
            eps,
        })
    }

    /// Rate-`rate` random source code whose composition defaults to `p`.
    pub fn with_rate(
        rate: f64,
        p: Pmf,
        d: DistortionSpec,
        eps: TypicalityParams,
        randomness: CommonRandomness,
        max_words: usize,
    ) -> Result<Self> {
        let q = default_reconstruction_pmf(&p, d.cols())?;
        SourceCodeChannel::random(
            SourceCodeSpec {
                rate,
                q,
                max_words,
                randomness,
            },
            p,
            d,
            eps,
        )
    }

    pub fn codebook(&self, n: usize) -> Result<Arc<Codebook>> {
        match &self.source {
            CodebookSource::Fixed(cb) => {
                if cb.n() != n {
                    return Err(Error::LengthMismatch {
                        left: n,
                        right: cb.n(),
                    });
                }
                Ok(cb.clone())
            }
            CodebookSource::PerBlockLength { spec, cache } => {
                let mut guard = cache.lock().expect("codebook cache poisoned");
                if let Some(cb) = guard.get(&n) {
                    return Ok(cb.clone());
                }
                let cb = Arc::new(gen_source_codebook(
                    n,
                    spec.rate,
                    &spec.q,
                    &spec.randomness.derive(format!("n={n}")),
                    spec.max_words,
                )?);
                guard.insert(n, cb.clone());
                Ok(cb)
            }
        }
    }

    pub fn codebook_len(&self, n: usize) -> Result<usize> {
        Ok(self.codebook(n)?.len())
    }

    pub fn encode(&self, x: &Sequence) -> Result<Encoded> {
        let cb = self.codebook(x.len())?;
        source_encode(x, &cb, &self.d, &self.p, self.eps)
    }
}

fn check_alphabets(p: &Pmf, d: &DistortionSpec, reconstruction: Alphabet) -> Result<()> {
    if p.len() != d.rows() {
        return Err(Error::AlphabetMismatch {
            expected: d.rows(),
            got: p.len(),
        });
    }
    if reconstruction.size() != d.cols() {
        return Err(Error::AlphabetMismatch {
            expected: d.cols(),
            got: reconstruction.size(),
        });
    }
    Ok(())
}

impl GeneralChannel for SourceCodeChannel {
    fn descriptor(&self) -> ChannelDescriptor {
        let params = match &self.source {
            CodebookSource::Fixed(cb) => json!({
                "n": cb.n(),
                "rate": cb.rate(),
                "codewords": cb.len(),
                "seed": cb.seed(),
                "budget": self.d.budget(),
            }),
            CodebookSource::PerBlockLength { spec, .. } => json!({
                "rate": spec.rate,
                "qY": spec.q.weights(),
                "seed": spec.randomness.seed(),
                "budget": self.d.budget(),
            }),
        };
        let rate = params["rate"].as_f64().unwrap_or(0.0);
        ChannelDescriptor {
            kind: "source_code".into(),
            label: format!("source_code_r{rate:.3}"),
            params,
        }
    }

    fn input_alphabet(&self) -> Alphabet {
        self.p.alphabet()
    }

    fn output_alphabet(&self) -> Alphabet {
        Alphabet::new(self.d.cols()).expect("validated")
    }

    fn transmit(&self, x: &Sequence, _seed: u64) -> Result<Sequence> {
        check_input(self, x)?;
        let cb = self.codebook(x.len())?;
        let j = match source_encode(x, &cb, &self.d, &self.p, self.eps)? {
            Encoded::Index(j) => j,
            Encoded::SourceAtypical | Encoded::NoCover => 0,
        };
        Ok(cb.word(j).clone())
    }
}

/// Builds the source-code channel for a fixed codebook.
pub fn source_code_channel(
    codebook: Arc<Codebook>,
    p: Pmf,
    d: DistortionSpec,
    eps: TypicalityParams,
) -> Result<SourceCodeChannel> {
    SourceCodeChannel::from_codebook(codebook, p, d, eps)
}

/// A finite, non-empty list of channels over shared alphabets.
#[derive(Clone)]
pub struct ChannelSet {
    members: Vec<Arc<dyn GeneralChannel>>,
}

impl ChannelSet {
    pub fn new(members: Vec<Arc<dyn GeneralChannel>>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidChannel("channel set is empty".into()))?;
        let (i, o) = (first.input_alphabet(), first.output_alphabet());
        for m in &members {
            if m.input_alphabet() != i || m.output_alphabet() != o {
                return Err(Error::InvalidChannel(format!(
                    "channel {} does not share the set's alphabets",
                    m.descriptor().label
                )));
            }
        }
        Ok(ChannelSet { members })
    }

    pub fn members(&self) -> &[Arc<dyn GeneralChannel>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn descriptors(&self) -> Vec<ChannelDescriptor> {
        self.members.iter().map(|m| m.descriptor()).collect()
    }
}

impl std::fmt::Debug for ChannelSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.descriptors().iter().map(|d| &d.label))
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipRow {
    pub n: usize,
    pub p_hat: f64,
    pub ci: f64,
    pub trials: usize,
}

/// Estimated excess-distortion probability per block length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub channel: ChannelDescriptor,
    pub budget: f64,
    pub rows: Vec<MembershipRow>,
}

impl MembershipReport {
    /// `p̂_n` never increases along the tested block lengths.
    pub fn non_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].p_hat <= w[0].p_hat)
    }

    /// `p̂_n` strictly decreases along the tested block lengths.
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].p_hat < w[0].p_hat)
    }

    /// The finite surrogate for "→ 0": non-increasing and at most
    /// `threshold` at the largest block length.
    pub fn passes(&self, threshold: f64) -> bool {
        self.non_increasing() && self.rows.last().is_some_and(|r| r.p_hat <= threshold)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,p_hat,ci,trials\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{}\n",
                r.n, r.p_hat, r.ci, r.trials
            ));
        }
        out
    }
}

/// Half-width of the 95% Wilson score interval.
pub fn wilson_half_width(successes: usize, trials: usize) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let z = 1.959_963_984_540_054_f64;
    let t = trials as f64;
    let ph = successes as f64 / t;
    let denom = 1.0 + z * z / t;
    z * (ph * (1.0 - ph) / t + z * z / (4.0 * t * t)).sqrt() / denom
}

/// Estimates `Pr((1/n) Σ d(X_i, Y_i) > D)` for i.i.d. `p` inputs, for each
/// block length in `ns`.
pub fn estimate_membership(
    c: &dyn GeneralChannel,
    p: &Pmf,
    d: &DistortionSpec,
    ns: &[usize],
    trials: usize,
    seed: u64,
) -> Result<MembershipReport> {
    if trials == 0 {
        return Err(Error::InvalidSequence("trials must be at least 1".into()));
    }
    check_alphabets(p, d, c.output_alphabet())?;
    if c.input_alphabet().size() != p.len() {
        return Err(Error::AlphabetMismatch {
            expected: p.len(),
            got: c.input_alphabet().size(),
        });
    }
    let source_root = CommonRandomness::new(seed)
        .derive("membership-source")
        .seed();
    let noise_root = CommonRandomness::new(seed)
        .derive("membership-noise")
        .seed();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        if n == 0 {
            return Err(Error::InvalidSequence(
                "block length must be positive".into(),
            ));
        }
        let src = child_seed(source_root, n as u64);
        let noise = child_seed(noise_root, n as u64);
        let excess: Result<Vec<bool>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let x = draw_iid(p, n, &mut rng_from(child_seed(src, t as u64)))?;
                let y = c.transmit(&x, child_seed(noise, t as u64))?;
                if y.len() != n {
                    return Err(Error::InvalidChannel(
                        "channel changed the block length".into(),
                    ));
                }
                Ok(!d.fits(x.symbols(), y.symbols()))
            })
            .collect();
        let hits = excess?.into_iter().filter(|e| *e).count();
        rows.push(MembershipRow {
            n,
            p_hat: hits as f64 / trials as f64,
            ci: wilson_half_width(hits, trials),
            trials,
        });
    }
    Ok(MembershipReport {
        channel: c.descriptor(),
        budget: d.budget(),
        rows,
    })
}
