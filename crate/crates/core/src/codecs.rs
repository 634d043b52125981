//! Random-coding constructions and their Monte Carlo harnesses.
//!
//! Two codebook ensembles are provided:
//!
//! * channel codebooks: `⌈2^{nR}⌉` words with i.i.d. `p_X` symbols, decoded by
//!   searching for the *unique* jointly typical codeword;
//! * source codebooks: `⌈2^{nR}⌉` words drawn uniformly from one exact type
//!   class, used by an encoder that picks the *first* jointly typical word.
//!
//! Codewords are addressable by index: word `j` is a pure function of the
//! codebook seed and `j` (a dedicated ChaCha stream per word). The trial
//! harnesses exploit this to generate words lazily, which is what makes
//! `2^{nR}`-sized ensembles affordable when the search stops early.

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::GeneralChannel;
use crate::error::{Error, Result};
use crate::primitives::{
    symbols_typical, Alphabet, DistortionSpec, Pmf, Sequence, TypeVector, TypicalityParams,
};
use crate::randomness::{child_seed, rng_from, CommonRandomness};

/// Default ceiling on `⌈2^{nR}⌉`.
pub const DEFAULT_MAX_WORDS: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookKind {
    ChannelCode,
    SourceCode,
}

/// `⌈2^{nR}⌉`, treating `nR` within 1e-9 of an integer as that integer.
pub fn codebook_size(n: usize, rate: f64, max_words: usize) -> Result<usize> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(Error::InvalidSequence(format!(
            "rate must be non-negative, got {rate}"
        )));
    }
    let bits = n as f64 * rate;
    let rounded = bits.round();
    let size = if (bits - rounded).abs() < 1e-9 {
        if rounded >= 63.0 {
            f64::INFINITY
        } else {
            (1u64 << rounded as u32) as f64
        }
    } else {
        bits.exp2().ceil()
    };
    if size > max_words as f64 {
        return Err(Error::ResourceLimit(format!(
            "2^(nR) = 2^{bits:.3} codewords exceeds the cap of {max_words}"
        )));
    }
    Ok(size as usize)
}

/// Largest-remainder rounding of `n·q`; ties go to the lowest symbol index.
pub fn quantize_type(q: &Pmf, n: usize) -> Result<TypeVector> {
    if n == 0 {
        return Err(Error::InvalidSequence(
            "block length must be positive".into(),
        ));
    }
    let scaled: Vec<f64> = q.weights().iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut deficit = n.saturating_sub(assigned);
    // Fractions compared at 1e-9 resolution so that float noise does not
    // break ties that are exact in the rationals.
    let mut order: Vec<(i64, usize)> = scaled
        .iter()
        .enumerate()
        .map(|(s, v)| {
            let key = if q.get(s) == 0.0 {
                -1
            } else {
                ((v - v.floor()) * 1e9).round() as i64
            };
            (key, s)
        })
        .collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, s) in order {
        if deficit == 0 {
            break;
        }
        counts[s] += 1;
        deficit -= 1;
    }
    TypeVector::new(counts)
}

#[derive(Debug, Clone)]
enum WordSampler {
    Iid {
        dist: WeightedIndex<f64>,
    },
    ConstantComposition {
        base: Vec<u8>,
        composition: TypeVector,
    },
}

/// A codebook described by its seed; words are generated on demand.
#[derive(Debug, Clone)]
pub struct RandomCodebook {
    kind: CodebookKind,
    n: usize,
    rate: f64,
    size: usize,
    seed: u64,
    alphabet: Alphabet,
    sampler: WordSampler,
    base_rng: ChaCha8Rng,
}

impl RandomCodebook {
    /// i.i.d. `p` codewords.
    pub fn channel(n: usize, rate: f64, p: &Pmf, seed: u64, max_words: usize) -> Result<Self> {
        check_block_length(n)?;
        let size = codebook_size(n, rate, max_words)?;
        let dist = WeightedIndex::new(p.weights().iter().copied())
            .map_err(|e| Error::InvalidPmf(e.to_string()))?;
        Ok(RandomCodebook {
            kind: CodebookKind::ChannelCode,
            n,
            rate,
            size,
            seed,
            alphabet: p.alphabet(),
            sampler: WordSampler::Iid { dist },
            base_rng: rng_from(seed),
        })
    }

    /// Codewords uniform over the type class of `quantize_type(q, n)`.
    pub fn source(n: usize, rate: f64, q: &Pmf, seed: u64, max_words: usize) -> Result<Self> {
        check_block_length(n)?;
        let size = codebook_size(n, rate, max_words)?;
        let composition = quantize_type(q, n)?;
        Ok(RandomCodebook {
            kind: CodebookKind::SourceCode,
            n,
            rate,
            size,
            seed,
            alphabet: q.alphabet(),
            sampler: WordSampler::ConstantComposition {
                base: composition.canonical_sequence().into_symbols(),
                composition,
            },
            base_rng: rng_from(seed),
        })
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn composition(&self) -> Option<&TypeVector> {
        match &self.sampler {
            WordSampler::ConstantComposition { composition, .. } => Some(composition),
            WordSampler::Iid { .. } => None,
        }
    }

    /// Writes word `j` into `buf`.
    pub fn word_into(&self, j: usize, buf: &mut Vec<u8>) {
        let mut rng = self.base_rng.clone();
        rng.set_stream(j as u64);
        buf.clear();
        match &self.sampler {
            WordSampler::Iid { dist } => {
                buf.extend((0..self.n).map(|_| dist.sample(&mut rng) as u8));
            }
            WordSampler::ConstantComposition { base, .. } => {
                buf.extend_from_slice(base);
                buf.shuffle(&mut rng);
            }
        }
    }

    pub fn word(&self, j: usize) -> Sequence {
        let mut buf = Vec::with_capacity(self.n);
        self.word_into(j, &mut buf);
        Sequence::from_raw(buf)
    }

    pub fn materialize(&self) -> Codebook {
        let words = (0..self.size)
            .into_par_iter()
            .map(|j| self.word(j))
            .collect();
        Codebook {
            kind: self.kind,
            n: self.n,
            rate: self.rate,
            seed: self.seed,
            alphabet: self.alphabet,
            composition: self.composition().cloned(),
            words,
        }
    }
}

fn check_block_length(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidSequence(
            "block length must be positive".into(),
        ));
    }
    Ok(())
}

/// A materialized codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    kind: CodebookKind,
    n: usize,
    rate: f64,
    seed: u64,
    alphabet: Alphabet,
    composition: Option<TypeVector>,
    words: Vec<Sequence>,
}

impl Codebook {
    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn composition(&self) -> Option<&TypeVector> {
        self.composition.as_ref()
    }

    pub fn words(&self) -> &[Sequence] {
        &self.words
    }

    pub fn word(&self, j: usize) -> &Sequence {
        &self.words[j]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Builds a codebook from explicit words. Used by tests and hand-built
    /// examples; the rate is derived from the word count.
    pub fn from_words(
        kind: CodebookKind,
        words: Vec<Sequence>,
        alphabet: Alphabet,
    ) -> Result<Self> {
        let n = words.first().map(Sequence::len).unwrap_or(0);
        check_block_length(n)?;
        for w in &words {
            if w.len() != n {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: w.len(),
                });
            }
            if w.max_symbol().unwrap_or(0) >= alphabet.size() {
                return Err(Error::AlphabetMismatch {
                    expected: alphabet.size(),
                    got: w.max_symbol().unwrap_or(0) + 1,
                });
            }
        }
        Ok(Codebook {
            kind,
            n,
            rate: (words.len() as f64).log2() / n as f64,
            seed: 0,
            alphabet,
            composition: None,
            words,
        })
    }
}

pub fn gen_channel_codebook(
    n: usize,
    rate: f64,
    p: &Pmf,
    cr: &CommonRandomness,
    max_words: usize,
) -> Result<Codebook> {
    Ok(RandomCodebook::channel(n, rate, p, cr.seed(), max_words)?.materialize())
}

pub fn gen_source_codebook(
    n: usize,
    rate: f64,
    q: &Pmf,
    cr: &CommonRandomness,
    max_words: usize,
) -> Result<Codebook> {
    Ok(RandomCodebook::source(n, rate, q, cr.seed(), max_words)?.materialize())
}

/// Result of unique-joint-typicality decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoded {
    Message(usize),
    NoMatch,
    /// The first two matching indices.
    Ambiguous(usize, usize),
}

/// Result of first-match joint-typicality encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoded {
    Index(usize),
    SourceAtypical,
    NoCover,
}

fn check_code_inputs(
    seq: &Sequence,
    n: usize,
    symbol_alphabet: usize,
    p: &Pmf,
    d: &DistortionSpec,
) -> Result<()> {
    if seq.len() != n {
        return Err(Error::LengthMismatch {
            left: seq.len(),
            right: n,
        });
    }
    if p.len() != d.rows() {
        return Err(Error::AlphabetMismatch {
            expected: d.rows(),
            got: p.len(),
        });
    }
    if seq.max_symbol().unwrap_or(0) >= symbol_alphabet {
        return Err(Error::AlphabetMismatch {
            expected: symbol_alphabet,
            got: seq.max_symbol().unwrap_or(0) + 1,
        });
    }
    Ok(())
}

fn require_kind(actual: CodebookKind, wanted: CodebookKind) -> Result<()> {
    if actual != wanted {
        return Err(Error::InvalidSequence(format!(
            "codebook kind {actual:?} where {wanted:?} is required"
        )));
    }
    Ok(())
}

/// Scans `words` for codewords `z` with `(z, y)` jointly typical; stops at
/// the second hit.
fn unique_match<'a>(
    y: &[u8],
    words: impl Iterator<Item = (usize, &'a [u8])>,
    p: &Pmf,
    d: &DistortionSpec,
    eps: TypicalityParams,
) -> Decoded {
    let mut first = None;
    for (j, z) in words {
        if d.fits(z, y) && symbols_typical(z, p, eps) {
            match first {
                None => first = Some(j),
                Some(i) => return Decoded::Ambiguous(i, j),
            }
        }
    }
    first.map_or(Decoded::NoMatch, Decoded::Message)
}

pub fn channel_decode(
    y: &Sequence,
    cb: &Codebook,
    p: &Pmf,
    d: &DistortionSpec,
    eps: TypicalityParams,
) -> Result<Decoded> {
    require_kind(cb.kind(), CodebookKind::ChannelCode)?;
    check_code_inputs(y, cb.n(), d.cols(), p, d)?;
    Ok(unique_match(
        y.symbols(),
        cb.words().iter().map(Sequence::symbols).enumerate(),
        p,
        d,
        eps,
    ))
}

/// Decoding against a lazily generated codebook.
pub fn channel_decode_lazy(
    y: &Sequence,
    cb: &RandomCodebook,
    p: &Pmf,
    d: &DistortionSpec,
    eps: TypicalityParams,
) -> Result<Decoded> {
    require_kind(cb.kind(), CodebookKind::ChannelCode)?;
    check_code_inputs(y, cb.n(), d.cols(), p, d)?;
    let mut buf = Vec::with_capacity(cb.n());
    let mut first = None;
    for j in 0..cb.len() {
        cb.word_into(j, &mut buf);
        if d.fits(&buf, y.symbols()) && symbols_typical(&buf, p, eps) {
            match first {
                None => first = Some(j),
                Some(i) => return Ok(Decoded::Ambiguous(i, j)),
            }
        }
    }
    Ok(first.map_or(Decoded::NoMatch, Decoded::Message))
}

pub fn source_encode(
    x: &Sequence,
    cb: &Codebook,
    d: &DistortionSpec,
    p: &Pmf,
    eps: TypicalityParams,
) -> Result<Encoded> {
    require_kind(cb.kind(), CodebookKind::SourceCode)?;
    check_code_inputs(x, cb.n(), d.rows(), p, d)?;
    if !symbols_typical(x.symbols(), p, eps) {
        return Ok(Encoded::SourceAtypical);
    }
    Ok(cb
        .words()
        .iter()
        .position(|w| d.fits(x.symbols(), w.symbols()))
        .map_or(Encoded::NoCover, Encoded::Index))
}

pub fn source_encode_lazy(
    x: &Sequence,
    cb: &RandomCodebook,
    d: &DistortionSpec,
    p: &Pmf,
    eps: TypicalityParams,
) -> Result<Encoded> {
    require_kind(cb.kind(), CodebookKind::SourceCode)?;
    check_code_inputs(x, cb.n(), d.rows(), p, d)?;
    if !symbols_typical(x.symbols(), p, eps) {
        return Ok(Encoded::SourceAtypical);
    }
    let mut buf = Vec::with_capacity(cb.n());
    for j in 0..cb.len() {
        cb.word_into(j, &mut buf);
        if d.fits(x.symbols(), &buf) {
            return Ok(Encoded::Index(j));
        }
    }
    Ok(Encoded::NoCover)
}

/// Draws an i.i.d. `p` block.
pub fn draw_iid(p: &Pmf, n: usize, rng: &mut impl Rng) -> Result<Sequence> {
    let dist = WeightedIndex::new(p.weights().iter().copied())
        .map_err(|e| Error::InvalidPmf(e.to_string()))?;
    Ok(Sequence::from_raw(
        (0..n).map(|_| dist.sample(rng) as u8).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeTag {
    Success,
    #[serde(rename = "E1_not_jointly_typical")]
    E1NotJointlyTypical,
    #[serde(rename = "E2_ambiguous")]
    E2Ambiguous,
    #[serde(rename = "F1_source_atypical")]
    F1SourceAtypical,
    #[serde(rename = "F2_no_cover")]
    F2NoCover,
}

impl OutcomeTag {
    pub const ALL: [OutcomeTag; 5] = [
        OutcomeTag::Success,
        OutcomeTag::E1NotJointlyTypical,
        OutcomeTag::E2Ambiguous,
        OutcomeTag::F1SourceAtypical,
        OutcomeTag::F2NoCover,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeTag::Success => "Success",
            OutcomeTag::E1NotJointlyTypical => "E1_not_jointly_typical",
            OutcomeTag::E2Ambiguous => "E2_ambiguous",
            OutcomeTag::F1SourceAtypical => "F1_source_atypical",
            OutcomeTag::F2NoCover => "F2_no_cover",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub tag: OutcomeTag,
    pub detail: Option<usize>,
}

impl TrialOutcome {
    fn new(tag: OutcomeTag, detail: Option<usize>) -> Self {
        TrialOutcome { tag, detail }
    }
}

/// Counts per outcome tag. Merging is commutative and associative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    counts: [u64; 5],
}

impl Histogram {
    pub fn record(&mut self, tag: OutcomeTag) {
        self.counts[tag.slot()] += 1;
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }

    pub fn count(&self, tag: OutcomeTag) -> u64 {
        self.counts[tag.slot()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn fraction(&self, tag: OutcomeTag) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.count(tag) as f64 / t as f64
        }
    }

    pub fn success_fraction(&self) -> f64 {
        self.fraction(OutcomeTag::Success)
    }

    pub fn error_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            1.0 - self.success_fraction()
        }
    }

    /// `tag,count,fraction` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tag,count,fraction\n");
        for tag in OutcomeTag::ALL {
            out.push_str(&format!(
                "{},{},{:.6}\n",
                tag.as_str(),
                self.count(tag),
                self.fraction(tag)
            ));
        }
        out
    }
}

impl FromIterator<TrialOutcome> for Histogram {
    fn from_iter<I: IntoIterator<Item = TrialOutcome>>(iter: I) -> Self {
        let mut h = Histogram::default();
        for o in iter {
            h.record(o.tag);
        }
        h
    }
}

/// Parameters shared by the channel-coding harnesses.
#[derive(Debug, Clone)]
pub struct ChannelTrialConfig {
    pub n: usize,
    pub rate: f64,
    pub p: Pmf,
    pub d: DistortionSpec,
    pub eps: TypicalityParams,
    pub trials: usize,
    pub max_words: usize,
}

#[derive(Debug, Clone)]
pub struct SourceTrialConfig {
    pub n: usize,
    pub rate: f64,
    pub p: Pmf,
    pub q: Pmf,
    pub d: DistortionSpec,
    pub eps: TypicalityParams,
    pub trials: usize,
    pub max_words: usize,
}

/// One channel-coding trial with the received block retained.
#[derive(Debug, Clone)]
pub struct ChannelTrialRecord {
    pub message: usize,
    pub outcome: TrialOutcome,
    pub sent: Sequence,
    pub received: Sequence,
}

/// Per-trial randomness: a fresh codebook, a uniform message and channel
/// noise, each from its own branch of `cr`.
#[derive(Debug, Clone, Copy)]
struct TrialSeeds {
    codebook: u64,
    message: u64,
    noise: u64,
}

impl TrialSeeds {
    fn roots(cr: &CommonRandomness) -> Self {
        TrialSeeds {
            codebook: cr.derive("codebook").seed(),
            message: cr.derive("message").seed(),
            noise: cr.derive("noise").seed(),
        }
    }

    fn at(self, t: usize) -> Self {
        TrialSeeds {
            codebook: child_seed(self.codebook, t as u64),
            message: child_seed(self.message, t as u64),
            noise: child_seed(self.noise, t as u64),
        }
    }
}

fn validate_channel_config(c: &dyn GeneralChannel, cfg: &ChannelTrialConfig) -> Result<()> {
    check_block_length(cfg.n)?;
    if cfg.p.len() != cfg.d.rows() {
        return Err(Error::AlphabetMismatch {
            expected: cfg.d.rows(),
            got: cfg.p.len(),
        });
    }
    if c.input_alphabet().size() != cfg.p.len() {
        return Err(Error::AlphabetMismatch {
            expected: cfg.p.len(),
            got: c.input_alphabet().size(),
        });
    }
    if c.output_alphabet().size() != cfg.d.cols() {
        return Err(Error::AlphabetMismatch {
            expected: cfg.d.cols(),
            got: c.output_alphabet().size(),
        });
    }
    Ok(())
}

/// Runs the trials and keeps each received block.
pub fn run_channel_trials_detailed(
    c: &dyn GeneralChannel,
    cfg: &ChannelTrialConfig,
    cr: &CommonRandomness,
) -> Result<Vec<ChannelTrialRecord>> {
    validate_channel_config(c, cfg)?;
    let size = codebook_size(cfg.n, cfg.rate, cfg.max_words)?;
    let roots = TrialSeeds::roots(cr);
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let seeds = roots.at(t);
            let cb =
                RandomCodebook::channel(cfg.n, cfg.rate, &cfg.p, seeds.codebook, cfg.max_words)?;
            let message = rng_from(seeds.message).gen_range(0..size);
            let x = cb.word(message);
            let y = c.transmit(&x, seeds.noise)?;
            if y.len() != x.len() {
                return Err(Error::InvalidChannel(format!(
                    "channel {} changed the block length",
                    c.descriptor().label
                )));
            }
            let sent_ok = symbols_typical(x.symbols(), &cfg.p, cfg.eps)
                && cfg.d.fits(x.symbols(), y.symbols());
            let decoded = channel_decode_lazy(&y, &cb, &cfg.p, &cfg.d, cfg.eps)?;
            let outcome = match decoded {
                Decoded::Message(m) if m == message => {
                    TrialOutcome::new(OutcomeTag::Success, Some(m))
                }
                Decoded::Message(m) => TrialOutcome::new(OutcomeTag::E1NotJointlyTypical, Some(m)),
                Decoded::NoMatch => TrialOutcome::new(OutcomeTag::E1NotJointlyTypical, None),
                Decoded::Ambiguous(i, j) => {
                    let other = if i == message { j } else { i };
                    if sent_ok {
                        TrialOutcome::new(OutcomeTag::E2Ambiguous, Some(other))
                    } else {
                        TrialOutcome::new(OutcomeTag::E1NotJointlyTypical, Some(other))
                    }
                }
            };
            Ok(ChannelTrialRecord {
                message,
                outcome,
                sent: x,
                received: y,
            })
        })
        .collect()
}

/// Random channel coding over `c`: each trial draws a fresh i.i.d. `p`
/// codebook from common randomness, sends a uniform message and decodes by
/// unique joint typicality.
pub fn run_channel_trials(
    c: &dyn GeneralChannel,
    cfg: &ChannelTrialConfig,
    cr: &CommonRandomness,
) -> Result<Histogram> {
    Ok(run_channel_trials_detailed(c, cfg, cr)?
        .into_iter()
        .map(|r| r.outcome)
        .collect())
}

/// Random source coding: i.i.d. `p` sources against fresh constant-composition
/// codebooks of type `quantize_type(q, n)`.
pub fn run_source_trials(cfg: &SourceTrialConfig, cr: &CommonRandomness) -> Result<Histogram> {
    check_block_length(cfg.n)?;
    if cfg.p.len() != cfg.d.rows() || cfg.q.len() != cfg.d.cols() {
        return Err(Error::AlphabetMismatch {
            expected: cfg.d.rows(),
            got: cfg.p.len(),
        });
    }
    codebook_size(cfg.n, cfg.rate, cfg.max_words)?;
    let codebook_root = cr.derive("codebook").seed();
    let source_root = cr.derive("source").seed();
    let outcomes: Result<Vec<TrialOutcome>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let cb = RandomCodebook::source(
                cfg.n,
                cfg.rate,
                &cfg.q,
                child_seed(codebook_root, t as u64),
                cfg.max_words,
            )?;
            let x = draw_iid(
                &cfg.p,
                cfg.n,
                &mut rng_from(child_seed(source_root, t as u64)),
            )?;
            Ok(
                match source_encode_lazy(&x, &cb, &cfg.d, &cfg.p, cfg.eps)? {
                    Encoded::Index(j) => TrialOutcome::new(OutcomeTag::Success, Some(j)),
                    Encoded::SourceAtypical => {
                        TrialOutcome::new(OutcomeTag::F1SourceAtypical, None)
                    }
                    Encoded::NoCover => TrialOutcome::new(OutcomeTag::F2NoCover, None),
                },
            )
        })
        .collect();
    Ok(outcomes?.into_iter().collect())
}

#[derive(Debug, Clone)]
pub struct ConverseConfig {
    pub source_rate: f64,
    pub attack_rate: f64,
    pub n: usize,
    pub p: Pmf,
    /// Composition of the inner source code; defaults to `p` when the
    /// reconstruction alphabet matches the source alphabet, else uniform.
    pub q: Option<Pmf>,
    pub d: DistortionSpec,
    pub eps: TypicalityParams,
    pub trials: usize,
    pub max_words: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConverseReport {
    pub error_fraction: f64,
    pub histogram: Histogram,
    pub messages: usize,
    pub inner_codewords: usize,
    pub distinct_outputs_observed: usize,
    /// `max(0, 1 − inner_codewords / messages)`.
    pub pigeonhole_bound: f64,
    /// Three binomial standard deviations at the observed error rate.
    pub three_sigma: f64,
    /// Fraction of inputs the inner source code failed to encode.
    pub inner_failure_fraction: f64,
}

pub(crate) fn default_reconstruction_pmf(p: &Pmf, cols: usize) -> Result<Pmf> {
    if p.len() == cols {
        Ok(p.clone())
    } else {
        Pmf::uniform(cols)
    }
}

/// Channel coding at `attack_rate` over a rate-`source_rate` source code
/// viewed as a channel. The inner code has at most `2^{n·source_rate}`
/// outputs, so for `attack_rate > source_rate` most messages must collide.
pub fn run_converse_experiment(
    cfg: &ConverseConfig,
    cr: &CommonRandomness,
) -> Result<ConverseReport> {
    let q = match &cfg.q {
        Some(q) => q.clone(),
        None => default_reconstruction_pmf(&cfg.p, cfg.d.cols())?,
    };
    let inner_cb = gen_source_codebook(
        cfg.n,
        cfg.source_rate,
        &q,
        &cr.derive("inner"),
        cfg.max_words,
    )?;
    let inner = crate::channels::SourceCodeChannel::from_codebook(
        Arc::new(inner_cb),
        cfg.p.clone(),
        cfg.d.clone(),
        cfg.eps,
    )?;
    let trial_cfg = ChannelTrialConfig {
        n: cfg.n,
        rate: cfg.attack_rate,
        p: cfg.p.clone(),
        d: cfg.d.clone(),
        eps: cfg.eps,
        trials: cfg.trials,
        max_words: cfg.max_words,
    };
    let records = run_channel_trials_detailed(&inner, &trial_cfg, &cr.derive("outer"))?;
    let histogram: Histogram = records.iter().map(|r| r.outcome).collect();
    let distinct: std::collections::HashSet<&Sequence> =
        records.iter().map(|r| &r.received).collect();
    let messages = codebook_size(cfg.n, cfg.attack_rate, cfg.max_words)?;
    let inner_codewords = inner.codebook_len(cfg.n)?;
    let err = histogram.error_fraction();
    let trials = histogram.total().max(1) as f64;
    let mut failures = 0usize;
    for r in &records {
        if !matches!(inner.encode(&r.sent)?, Encoded::Index(_)) {
            failures += 1;
        }
    }
    Ok(ConverseReport {
        error_fraction: err,
        histogram,
        messages,
        inner_codewords,
        distinct_outputs_observed: distinct.len(),
        pigeonhole_bound: (1.0 - inner_codewords as f64 / messages as f64).max(0.0),
        three_sigma: 3.0 * (err * (1.0 - err) / trials).sqrt(),
        inner_failure_fraction: failures as f64 / trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::IdentityChannel;
    use crate::primitives::{empirical_type, jointly_typical};

    fn eps(e: f64) -> TypicalityParams {
        TypicalityParams::new(e).unwrap()
    }

    #[test]
    fn sizes() {
        assert_eq!(codebook_size(4, 0.5, DEFAULT_MAX_WORDS).unwrap(), 4);
        assert_eq!(codebook_size(20, 0.15, DEFAULT_MAX_WORDS).unwrap(), 8);
        assert_eq!(codebook_size(10, 0.0, DEFAULT_MAX_WORDS).unwrap(), 1);
        assert_eq!(codebook_size(3, 0.5, DEFAULT_MAX_WORDS).unwrap(), 3);
        assert!(matches!(
            codebook_size(100, 0.5, DEFAULT_MAX_WORDS),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn quantize_examples() {
        let q = Pmf::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(quantize_type(&q, 4).unwrap().counts(), &[2, 2]);
        let q = Pmf::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(quantize_type(&q, 4).unwrap().counts(), &[1, 3]);
        let q = Pmf::new(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert_eq!(quantize_type(&q, 4).unwrap().counts(), &[2, 1, 1]);
        let q = Pmf::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(quantize_type(&q, 7).unwrap().counts(), &[7, 0]);
    }

    #[test]
    fn channel_codebook_shape_and_determinism() {
        let p = Pmf::uniform(2).unwrap();
        let cr = CommonRandomness::new(11);
        let a = gen_channel_codebook(4, 0.5, &p, &cr, DEFAULT_MAX_WORDS).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.words().iter().all(|w| w.len() == 4));
        let b = gen_channel_codebook(4, 0.5, &p, &cr, DEFAULT_MAX_WORDS).unwrap();
        assert_eq!(a, b);
        let c = gen_channel_codebook(4, 0.5, &p, &CommonRandomness::new(12), DEFAULT_MAX_WORDS)
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn channel_codebook_symbol_frequency() {
        // 2^12 words of length 40: pooled count of 0 is Binomial(163840, 1/2).
        let p = Pmf::uniform(2).unwrap();
        let cb = gen_channel_codebook(40, 0.3, &p, &CommonRandomness::new(3), DEFAULT_MAX_WORDS)
            .unwrap();
        assert_eq!(cb.len(), 4096);
        let total = (cb.len() * 40) as f64;
        let zeros = cb
            .words()
            .iter()
            .flat_map(|w| w.symbols())
            .filter(|s| **s == 0)
            .count() as f64;
        let sigma = (total * 0.25).sqrt();
        assert!((zeros - total / 2.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn source_codebook_exact_composition() {
        let q = Pmf::uniform(2).unwrap();
        let cb =
            gen_source_codebook(4, 1.0, &q, &CommonRandomness::new(5), DEFAULT_MAX_WORDS).unwrap();
        assert_eq!(cb.len(), 16);
        for w in cb.words() {
            let t = empirical_type(w, Alphabet::new(2).unwrap()).unwrap();
            assert_eq!(t.counts(), &[2, 2]);
        }
        assert_eq!(cb.composition().unwrap().counts(), &[2, 2]);
    }

    #[test]
    fn source_codebook_is_uniform_over_type_class() {
        // n=4, q=(1/2,1/2): six equally likely arrangements. Chi-square with
        // 5 degrees of freedom; 20.5 is the 0.999 quantile.
        let q = Pmf::uniform(2).unwrap();
        let cb = RandomCodebook::source(4, 3.0, &q, 99, DEFAULT_MAX_WORDS).unwrap();
        let draws = cb.len();
        assert_eq!(draws, 4096);
        let mut counts = std::collections::HashMap::new();
        for j in 0..draws {
            *counts.entry(cb.word(j)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts
            .values()
            .map(|c| (*c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 20.5, "chi2 = {chi2}");
        let sigma = (draws as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for c in counts.values() {
            assert!((*c as f64 - expected).abs() < 3.0 * sigma + 1.0);
        }
    }

    #[test]
    fn lazy_and_materialized_words_agree() {
        let p = Pmf::new(vec![0.2, 0.3, 0.5]).unwrap();
        let cb = RandomCodebook::channel(9, 0.5, &p, 42, DEFAULT_MAX_WORDS).unwrap();
        let m = cb.materialize();
        for j in 0..cb.len() {
            assert_eq!(&cb.word(j), m.word(j));
        }
    }

    fn hand_codebook(kind: CodebookKind, words: &[&[usize]]) -> Codebook {
        let a = Alphabet::new(2).unwrap();
        Codebook::from_words(
            kind,
            words
                .iter()
                .map(|w| Sequence::from_indices(w, a).unwrap())
                .collect(),
            a,
        )
        .unwrap()
    }

    #[test]
    fn decode_uniqueness_rule() {
        let p = Pmf::uniform(2).unwrap();
        let d = DistortionSpec::hamming(2, 0.0).unwrap();
        let e = eps(0.5);
        let words: Vec<&[usize]> = vec![
            &[0, 0, 1, 1],
            &[1, 1, 0, 0],
            &[1, 0, 1, 0],
            &[0, 1, 0, 1],
            &[0, 1, 1, 0],
            &[0, 1, 0, 1],
        ];
        let cb = hand_codebook(CodebookKind::ChannelCode, &words);
        let a = Alphabet::new(2).unwrap();
        let y = Sequence::from_indices(&[0, 1, 1, 0], a).unwrap();
        assert_eq!(
            channel_decode(&y, &cb, &p, &d, e).unwrap(),
            Decoded::Message(4)
        );
        let y = Sequence::from_indices(&[1, 1, 1, 1], a).unwrap();
        assert_eq!(
            channel_decode(&y, &cb, &p, &d, e).unwrap(),
            Decoded::NoMatch
        );
        let y = Sequence::from_indices(&[0, 1, 0, 1], a).unwrap();
        assert_eq!(
            channel_decode(&y, &cb, &p, &d, e).unwrap(),
            Decoded::Ambiguous(3, 5)
        );
        // kind check
        let src = hand_codebook(CodebookKind::SourceCode, &words);
        assert!(channel_decode(&y, &src, &p, &d, e).is_err());
    }

    #[test]
    fn encode_smallest_index_and_failures() {
        let p = Pmf::uniform(2).unwrap();
        let d = DistortionSpec::hamming(2, 0.25).unwrap();
        let e = eps(0.3);
        let words: Vec<&[usize]> = vec![
            &[1, 1, 1, 1],
            &[1, 1, 0, 0],
            &[0, 0, 1, 0],
            &[1, 1, 1, 0],
            &[0, 0, 0, 0],
            &[0, 1, 1, 1],
        ];
        let cb = hand_codebook(CodebookKind::SourceCode, &words);
        let a = Alphabet::new(2).unwrap();
        let x = Sequence::from_indices(&[0, 0, 1, 1], a).unwrap();
        // words 2 and 5 are within one mismatch; 1 is not
        assert_eq!(
            source_encode(&x, &cb, &d, &p, e).unwrap(),
            Encoded::Index(2)
        );
        let xa = Sequence::from_indices(&[0, 0, 0, 0], a).unwrap();
        assert_eq!(
            source_encode(&xa, &cb, &d, &p, e).unwrap(),
            Encoded::SourceAtypical
        );
        let small = hand_codebook(CodebookKind::SourceCode, &[&[1, 1, 0, 0]]);
        assert_eq!(
            source_encode(&x, &small, &d, &p, e).unwrap(),
            Encoded::NoCover
        );
    }

    #[test]
    fn decode_success_is_unique_and_jointly_typical() {
        let p = Pmf::uniform(2).unwrap();
        let d = DistortionSpec::hamming(2, 0.2).unwrap();
        let e = eps(0.25);
        let cb = gen_channel_codebook(10, 0.6, &p, &CommonRandomness::new(1), DEFAULT_MAX_WORDS)
            .unwrap();
        let mut rng = rng_from(5);
        for _ in 0..300 {
            let y = draw_iid(&p, 10, &mut rng).unwrap();
            if let Decoded::Message(m) = channel_decode(&y, &cb, &p, &d, e).unwrap() {
                let hits: Vec<usize> = (0..cb.len())
                    .filter(|j| jointly_typical(cb.word(*j), &y, &p, &d, e).unwrap())
                    .collect();
                assert_eq!(hits, vec![m]);
            }
        }
    }

    #[test]
    fn single_message_never_errs() {
        let p = Pmf::uniform(2).unwrap();
        let d = DistortionSpec::hamming(2, 0.5).unwrap();
        let ch = IdentityChannel::new(Alphabet::new(2).unwrap());
        let cfg = ChannelTrialConfig {
            n: 12,
            rate: 0.0,
            p,
            d,
            eps: eps(0.5),
            trials: 50,
            max_words: DEFAULT_MAX_WORDS,
        };
        let h = run_channel_trials(&ch, &cfg, &CommonRandomness::new(1)).unwrap();
        assert_eq!(h.count(OutcomeTag::Success), 50);
    }

    #[test]
    fn identity_channel_small_rate_pilot() {
        let p = Pmf::uniform(2).unwrap();
        let d = DistortionSpec::hamming(2, 0.05).unwrap();
        let ch = IdentityChannel::new(Alphabet::new(2).unwrap());
        let cfg = ChannelTrialConfig {
            n: 40,
            rate: 0.2,
            p,
            d,
            eps: eps(0.2),
            trials: 400,
            max_words: DEFAULT_MAX_WORDS,
        };
        let cr = CommonRandomness::new(9);
        let h = run_channel_trials(&ch, &cfg, &cr).unwrap();
        assert!(h.error_fraction() < 0.1, "{h:?}");
        assert_eq!(h, run_channel_trials(&ch, &cfg, &cr).unwrap());
    }

    #[test]
    fn source_trials_trivial_budget_always_succeeds() {
        let p = Pmf::uniform(2).unwrap();
        let cfg = SourceTrialConfig {
            n: 16,
            rate: 0.1,
            p: p.clone(),
            q: p,
            d: DistortionSpec::hamming(2, 1.0).unwrap(),
            eps: eps(1.0),
            trials: 100,
            max_words: DEFAULT_MAX_WORDS,
        };
        let h = run_source_trials(&cfg, &CommonRandomness::new(2)).unwrap();
        assert_eq!(h.success_fraction(), 1.0);
    }

    #[test]
    fn histogram_merge_and_csv() {
        let mut a = Histogram::default();
        a.record(OutcomeTag::Success);
        a.record(OutcomeTag::F2NoCover);
        let mut b = Histogram::default();
        b.record(OutcomeTag::Success);
        let mut ab = a;
        ab.merge(&b);
        let mut ba = b;
        ba.merge(&a);
        assert_eq!(ab, ba);
        assert_eq!(ab.total(), 3);
        let csv = ab.to_csv();
        assert!(csv.starts_with("tag,count,fraction\nSuccess,2,0.666667\n"));
    }
}
