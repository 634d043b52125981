//! Layered codecs around a channel.
//!
//! A [`Layer`] is an encoder/decoder pair defined for every block length.
//! A [`LayerStack`] lists layers outermost first; [`Composite`] runs the
//! encoders outside-in, the inner transport, then the decoders inside-out.
//! A composite with symbol endpoints is itself a [`GeneralChannel`], so
//! stacks nest.
//!
//! Two builders cover the two directions of the equivalence: a source codec
//! under a channel codec (separation), and a channel codec on top of any
//! system that delivers reconstructions within distortion (reliable
//! transport on a lossy guarantee).

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::channels::{
    estimate_membership, wilson_half_width, ChannelDescriptor, ChannelSet, GeneralChannel,
    MembershipReport, SourceCodeChannel, SourceCodeSpec,
};
use crate::codecs::{codebook_size, draw_iid, gen_channel_codebook, Codebook, Encoded};
use crate::error::{Error, Result};
use crate::primitives::{
    symbols_typical, Alphabet, DistortionSpec, Pmf, Sequence, TypicalityParams,
};
use crate::randomness::{child_seed, rng_from, CommonRandomness};

/// What travels between layers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Message(usize),
    Block(Sequence),
    /// A decoder declined to pick a message.
    Erased,
}

/// The kind of payload a layer boundary carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Messages,
    Symbols(Alphabet),
    /// Accepts whatever its neighbour produces.
    Any,
}

impl Domain {
    fn connects(self, other: Domain) -> bool {
        match (self, other) {
            (Domain::Any, _) | (_, Domain::Any) => true,
            (a, b) => a == b,
        }
    }
}

/// Boundary signature of a layer or transport: what goes in on the way down
/// and what comes back out on the way up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ports {
    pub input: Domain,
    pub output: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub kind: String,
    pub label: String,
    pub rate: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: serde_json::Value,
}

pub trait Layer: Send + Sync {
    fn descriptor(&self) -> LayerDescriptor;
    /// Outer side: `encode` input, `decode` output.
    fn outer(&self) -> Ports;
    /// Inner side: `encode` output, `decode` input.
    fn inner(&self) -> Ports;
    fn encode(&self, n: usize, input: &Payload) -> Result<Payload>;
    fn decode(&self, n: usize, received: &Payload) -> Result<Payload>;
}

fn unexpected(layer: &str, what: &str, got: &Payload) -> Error {
    let kind = match got {
        Payload::Message(_) => "a message",
        Payload::Block(_) => "a block",
        Payload::Erased => "an erasure",
    };
    Error::CompositionError(format!("layer {layer} expected {what}, got {kind}"))
}

/// Passes payloads through unchanged.
#[derive(Debug, Clone)]
pub struct IdentityLayer {
    label: String,
}

impl IdentityLayer {
    pub fn new(label: impl Into<String>) -> Self {
        IdentityLayer {
            label: label.into(),
        }
    }
}

impl Layer for IdentityLayer {
    fn descriptor(&self) -> LayerDescriptor {
        LayerDescriptor {
            kind: "identity".into(),
            label: self.label.clone(),
            rate: None,
            seed: None,
            params: serde_json::Value::Null,
        }
    }

    fn outer(&self) -> Ports {
        Ports {
            input: Domain::Any,
            output: Domain::Any,
        }
    }

    fn inner(&self) -> Ports {
        self.outer()
    }

    fn encode(&self, _n: usize, input: &Payload) -> Result<Payload> {
        Ok(input.clone())
    }

    fn decode(&self, _n: usize, received: &Payload) -> Result<Payload> {
        Ok(received.clone())
    }
}

/// Source block in, codeword index out; index in, reconstruction out.
/// Encoder failures send index 0, and unknown indices or erasures decode
/// to codeword 0.
pub struct SourceCodecLayer {
    code: SourceCodeChannel,
    label: String,
    rate: f64,
    seed: u64,
    failures: AtomicU64,
}

impl SourceCodecLayer {
    pub fn new(
        rate: f64,
        p: Pmf,
        q: Pmf,
        d: DistortionSpec,
        eps: TypicalityParams,
        cr: CommonRandomness,
        max_words: usize,
    ) -> Result<Self> {
        let seed = cr.seed();
        let spec = SourceCodeSpec {
            rate,
            q,
            max_words,
            randomness: cr,
        };
        Ok(SourceCodecLayer {
            code: SourceCodeChannel::random(spec, p, d, eps)?,
            label: format!("source_codec_r{rate:.3}"),
            rate,
            seed,
            failures: AtomicU64::new(0),
        })
    }

    /// Encoder failures since construction, over all block lengths.
    pub fn encoder_failures(&self) -> u64 {
        self.failures.load(Ordering::Relaxed)
    }

    pub fn codebook(&self, n: usize) -> Result<Arc<Codebook>> {
        self.code.codebook(n)
    }
}

impl Layer for SourceCodecLayer {
    fn descriptor(&self) -> LayerDescriptor {
        LayerDescriptor {
            kind: "source_codec".into(),
            label: self.label.clone(),
            rate: Some(self.rate),
            seed: Some(self.seed),
            params: self.code.descriptor().params,
        }
    }

    fn outer(&self) -> Ports {
        Ports {
            input: Domain::Symbols(self.code.input_alphabet()),
            output: Domain::Symbols(self.code.output_alphabet()),
        }
    }

    fn inner(&self) -> Ports {
        Ports {
            input: Domain::Messages,
            output: Domain::Messages,
        }
    }

    fn encode(&self, _n: usize, input: &Payload) -> Result<Payload> {
        let Payload::Block(x) = input else {
            return Err(unexpected(&self.label, "a source block", input));
        };
        Ok(match self.code.encode(x)? {
            Encoded::Index(j) => Payload::Message(j),
            Encoded::SourceAtypical | Encoded::NoCover => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                Payload::Message(0)
            }
        })
    }

    fn decode(&self, n: usize, received: &Payload) -> Result<Payload> {
        let cb = self.code.codebook(n)?;
        let j = match received {
            Payload::Message(j) if *j < cb.len() => *j,
            Payload::Message(_) | Payload::Erased => 0,
            Payload::Block(_) => return Err(unexpected(&self.label, "an index", received)),
        };
        Ok(Payload::Block(cb.word(j).clone()))
    }
}

/// A channel code for one block length, with codeword typicality cached.
struct ChannelCode {
    codebook: Codebook,
    typical: Vec<bool>,
}

/// Message in, i.i.d. codeword out; received block in, the unique jointly
/// typical codeword's index out (else an erasure). Messages beyond the
/// codebook wrap around. A one-word code always decodes to message 0.
pub struct ChannelCodecLayer {
    rate: f64,
    p: Pmf,
    d: DistortionSpec,
    eps: TypicalityParams,
    cr: CommonRandomness,
    max_words: usize,
    label: String,
    cache: Mutex<HashMap<usize, Arc<ChannelCode>>>,
}

impl ChannelCodecLayer {
    pub fn new(
        rate: f64,
        p: Pmf,
        d: DistortionSpec,
        eps: TypicalityParams,
        cr: CommonRandomness,
        max_words: usize,
    ) -> Result<Self> {
        if p.len() != d.rows() {
            return Err(Error::AlphabetMismatch {
                expected: d.rows(),
                got: p.len(),
            });
        }
        Ok(ChannelCodecLayer {
            rate,
            p,
            d,
            eps,
            cr,
            max_words,
            label: format!("channel_codec_r{rate:.3}"),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn messages(&self, n: usize) -> Result<usize> {
        codebook_size(n, self.rate, self.max_words)
    }

    fn code(&self, n: usize) -> Result<Arc<ChannelCode>> {
        let mut guard = self.cache.lock().expect("codebook cache poisoned");
        if let Some(c) = guard.get(&n) {
            return Ok(c.clone());
        }
        let codebook = gen_channel_codebook(
            n,
            self.rate,
            &self.p,
            &self.cr.derive(format!("n={n}")),
            self.max_words,
        )?;
        let typical = codebook
            .words()
            .iter()
            .map(|w| symbols_typical(w.symbols(), &self.p, self.eps))
            .collect();
        let code = Arc::new(ChannelCode { codebook, typical });
        guard.insert(n, code.clone());
        Ok(code)
    }
}

impl Layer for ChannelCodecLayer {
    fn descriptor(&self) -> LayerDescriptor {
        LayerDescriptor {
            kind: "channel_codec".into(),
            label: self.label.clone(),
            rate: Some(self.rate),
            seed: Some(self.cr.seed()),
            params: json!({
                "pX": self.p.weights(),
                "budget": self.d.budget(),
                "eps": self.eps.epsilon(),
            }),
        }
    }

    fn outer(&self) -> Ports {
        Ports {
            input: Domain::Messages,
            output: Domain::Messages,
        }
    }

    fn inner(&self) -> Ports {
        Ports {
            input: Domain::Symbols(self.p.alphabet()),
            output: Domain::Symbols(Alphabet::new(self.d.cols()).expect("validated")),
        }
    }

    fn encode(&self, n: usize, input: &Payload) -> Result<Payload> {
        let Payload::Message(m) = input else {
            return Err(unexpected(&self.label, "a message", input));
        };
        let code = self.code(n)?;
        Ok(Payload::Block(
            code.codebook.word(m % code.codebook.len()).clone(),
        ))
    }

    fn decode(&self, n: usize, received: &Payload) -> Result<Payload> {
        let y = match received {
            Payload::Block(y) => y,
            Payload::Erased => return Ok(Payload::Erased),
            Payload::Message(_) => return Err(unexpected(&self.label, "a block", received)),
        };
        if y.len() != n {
            return Err(Error::LengthMismatch {
                left: y.len(),
                right: n,
            });
        }
        let code = self.code(n)?;
        if code.codebook.len() == 1 {
            return Ok(Payload::Message(0));
        }
        let mut found = None;
        for (j, w) in code.codebook.words().iter().enumerate() {
            if code.typical[j] && self.d.fits(w.symbols(), y.symbols()) {
                if found.is_some() {
                    return Ok(Payload::Erased);
                }
                found = Some(j);
            }
        }
        Ok(found.map_or(Payload::Erased, Payload::Message))
    }
}

/// Layers, outermost first.
#[derive(Clone, Default)]
pub struct LayerStack {
    layers: Vec<Arc<dyn Layer>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackDescriptor {
    pub layers: Vec<LayerDescriptor>,
}

impl LayerStack {
    pub fn new(layers: Vec<Arc<dyn Layer>>) -> Result<Self> {
        for w in layers.windows(2) {
            check_link(
                &w[0].descriptor().label,
                w[0].inner(),
                &w[1].descriptor().label,
                w[1].outer(),
            )?;
        }
        Ok(LayerStack { layers })
    }

    /// `outer` stacked on top of `inner`.
    pub fn concat(outer: &LayerStack, inner: &LayerStack) -> Result<Self> {
        LayerStack::new(outer.layers.iter().chain(&inner.layers).cloned().collect())
    }

    pub fn layers(&self) -> &[Arc<dyn Layer>] {
        &self.layers
    }

    pub fn describe(&self) -> StackDescriptor {
        StackDescriptor {
            layers: self.layers.iter().map(|l| l.descriptor()).collect(),
        }
    }

    /// Ports seen from outside, or `None` for an empty stack.
    pub fn ports(&self) -> Option<Ports> {
        self.layers.first().map(|l| l.outer())
    }
}

/// `upper`'s inner side must meet `lower`'s outer side in both directions.
fn check_link(upper: &str, up: Ports, lower: &str, low: Ports) -> Result<()> {
    if !up.input.connects(low.input) || !low.output.connects(up.output) {
        return Err(Error::CompositionError(format!(
            "{upper} ({:?} down, {:?} up) does not fit {lower} ({:?} down, {:?} up)",
            up.input, up.output, low.input, low.output
        )));
    }
    Ok(())
}

/// Anything that carries a payload for block length `n` given a noise seed.
pub trait Transport: Send + Sync {
    fn ports(&self) -> Ports;
    fn carry(&self, n: usize, input: &Payload, seed: u64) -> Result<Payload>;
    fn describe(&self) -> serde_json::Value;
}

/// A [`GeneralChannel`] as a transport of blocks.
pub struct ChannelTransport(pub Arc<dyn GeneralChannel>);

impl Transport for ChannelTransport {
    fn ports(&self) -> Ports {
        Ports {
            input: Domain::Symbols(self.0.input_alphabet()),
            output: Domain::Symbols(self.0.output_alphabet()),
        }
    }

    fn carry(&self, n: usize, input: &Payload, seed: u64) -> Result<Payload> {
        match input {
            Payload::Block(x) if x.len() == n => Ok(Payload::Block(self.0.transmit(x, seed)?)),
            Payload::Block(x) => Err(Error::LengthMismatch {
                left: x.len(),
                right: n,
            }),
            other => Err(unexpected(&self.0.descriptor().label, "a block", other)),
        }
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::to_value(self.0.descriptor()).unwrap_or_default()
    }
}

/// A stack wrapped around a transport.
#[derive(Clone)]
pub struct Composite {
    stack: LayerStack,
    inner: Arc<dyn Transport>,
}

impl Composite {
    pub fn over(stack: LayerStack, inner: Arc<dyn Transport>) -> Result<Self> {
        if let Some(last) = stack.layers.last() {
            let label = last.descriptor().label;
            check_link(&label, last.inner(), "inner transport", inner.ports())?;
        }
        Ok(Composite { stack, inner })
    }

    pub fn stack(&self) -> &LayerStack {
        &self.stack
    }

    /// Encoders outside-in, the transport, decoders inside-out. The seed
    /// reaches the innermost channel unchanged; layers are deterministic.
    pub fn run(&self, n: usize, input: &Payload, seed: u64) -> Result<Payload> {
        let mut payload = input.clone();
        for layer in &self.stack.layers {
            payload = layer.encode(n, &payload)?;
        }
        payload = self.inner.carry(n, &payload, seed)?;
        for layer in self.stack.layers.iter().rev() {
            payload = layer.decode(n, &payload)?;
        }
        Ok(payload)
    }

    /// The composite as a channel, when both ends carry symbols.
    pub fn into_channel(self) -> Result<ComposedChannel> {
        let ports = Transport::ports(&self);
        match (ports.input, ports.output) {
            (Domain::Symbols(i), Domain::Symbols(o)) => Ok(ComposedChannel {
                composite: self,
                input: i,
                output: o,
            }),
            _ => Err(Error::CompositionError(format!(
                "composite endpoints {:?} → {:?} are not symbol blocks",
                ports.input, ports.output
            ))),
        }
    }
}

impl Transport for Composite {
    fn ports(&self) -> Ports {
        let inner = self.inner.ports();
        match self.stack.ports() {
            None => inner,
            Some(outer) => Ports {
                input: if outer.input == Domain::Any {
                    inner.input
                } else {
                    outer.input
                },
                output: if outer.output == Domain::Any {
                    inner.output
                } else {
                    outer.output
                },
            },
        }
    }

    fn carry(&self, n: usize, input: &Payload, seed: u64) -> Result<Payload> {
        self.run(n, input, seed)
    }

    fn describe(&self) -> serde_json::Value {
        json!({
            "layers": self.stack.describe().layers,
            "inner": self.inner.describe(),
        })
    }
}

/// `d ∘ c ∘ e` with symbol endpoints, usable anywhere a channel is.
#[derive(Clone)]
pub struct ComposedChannel {
    composite: Composite,
    input: Alphabet,
    output: Alphabet,
}

impl ComposedChannel {
    pub fn composite(&self) -> &Composite {
        &self.composite
    }
}

impl GeneralChannel for ComposedChannel {
    fn descriptor(&self) -> ChannelDescriptor {
        let labels: Vec<String> = self
            .composite
            .stack
            .layers
            .iter()
            .map(|l| l.descriptor().label)
            .collect();
        ChannelDescriptor {
            kind: "composite".into(),
            label: labels.join("+"),
            params: self.composite.describe(),
        }
    }

    fn input_alphabet(&self) -> Alphabet {
        self.input
    }

    fn output_alphabet(&self) -> Alphabet {
        self.output
    }

    fn transmit(&self, x: &Sequence, seed: u64) -> Result<Sequence> {
        match self
            .composite
            .run(x.len(), &Payload::Block(x.clone()), seed)?
        {
            Payload::Block(y) => Ok(y),
            other => Err(unexpected("composite", "a block", &other)),
        }
    }
}

/// Wraps `c` in `stack`.
pub fn compose(stack: &LayerStack, c: Arc<dyn GeneralChannel>) -> Result<Composite> {
    Composite::over(stack.clone(), Arc::new(ChannelTransport(c)))
}

/// [`compose`], returning a channel.
pub fn compose_channel(stack: &LayerStack, c: Arc<dyn GeneralChannel>) -> Result<ComposedChannel> {
    compose(stack, c)?.into_channel()
}

/// Parameters of the reliability layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelCodeParams {
    /// Codeword symbol distribution.
    pub p: Pmf,
    /// Decoding distortion; the budget is the decoder's slack.
    pub d: DistortionSpec,
    pub eps: TypicalityParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationParams {
    pub p: Pmf,
    /// Source distortion with the target budget `D`.
    pub d: DistortionSpec,
    pub eps: TypicalityParams,
    pub source_rate: f64,
    pub channel_rate: f64,
    /// Source-code composition; defaults to `p` or uniform.
    pub q: Option<Pmf>,
    pub channel_code: ChannelCodeParams,
    pub max_words: usize,
}

/// Source codec inside a channel codec. The channel codec's message set
/// has `⌈2^{nR}⌉` entries; source indices beyond it wrap around.
pub fn build_separation_system(
    params: &SeparationParams,
    cr: &CommonRandomness,
) -> Result<LayerStack> {
    let q = match &params.q {
        Some(q) => q.clone(),
        None => crate::codecs::default_reconstruction_pmf(&params.p, params.d.cols())?,
    };
    let source = SourceCodecLayer::new(
        params.source_rate,
        params.p.clone(),
        q,
        params.d.clone(),
        params.eps,
        cr.derive("source-codec"),
        params.max_words,
    )?;
    let cc = &params.channel_code;
    let channel = ChannelCodecLayer::new(
        params.channel_rate,
        cc.p.clone(),
        cc.d.clone(),
        cc.eps,
        cr.derive("channel-codec"),
        params.max_words,
    )?;
    LayerStack::new(vec![Arc::new(source), Arc::new(channel)])
}

/// Membership check applied before wrapping a lossy system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipCheck {
    pub ns: Vec<usize>,
    pub trials: usize,
    pub threshold: f64,
}

pub struct ReliableOnLossy {
    pub stack: LayerStack,
    pub composite: Composite,
    pub membership: MembershipReport,
    pub precondition_met: bool,
}

/// A rate-`rate` channel codec with i.i.d. `p` codewords, decoded by joint
/// typicality against `(p, d)`, on top of `lossy`. The lossy system is first
/// checked for membership at `(p, D)`; a failed check is logged and the
/// build proceeds.
#[allow(clippy::too_many_arguments)]
pub fn build_reliable_on_lossy(
    lossy: Arc<dyn GeneralChannel>,
    p: &Pmf,
    d: &DistortionSpec,
    eps: TypicalityParams,
    rate: f64,
    check: &MembershipCheck,
    cr: &CommonRandomness,
    max_words: usize,
) -> Result<ReliableOnLossy> {
    let membership = estimate_membership(
        lossy.as_ref(),
        p,
        d,
        &check.ns,
        check.trials,
        cr.derive("membership").seed(),
    )?;
    let precondition_met = membership.passes(check.threshold);
    if !precondition_met {
        log::warn!(
            "lossy system {} fails the membership check at D = {}; building anyway",
            lossy.descriptor().label,
            d.budget()
        );
    }
    let layer = ChannelCodecLayer::new(
        rate,
        p.clone(),
        d.clone(),
        eps,
        cr.derive("reliable-codec"),
        max_words,
    )?;
    let stack = LayerStack::new(vec![Arc::new(layer)])?;
    let composite = compose(&stack, lossy)?;
    Ok(ReliableOnLossy {
        stack,
        composite,
        membership,
        precondition_met,
    })
}

/// What counts as a failure in an end-to-end run.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    /// Source blocks i.i.d. `p`; failure when the reconstruction exceeds `D`.
    Distortion { p: Pmf, d: DistortionSpec },
    /// Uniform messages among `⌈2^{n·rate}⌉`; failure on any decoding error
    /// or erasure.
    MessageError { rate: f64 },
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Distortion { .. } => "excess_distortion",
            Metric::MessageError { .. } => "message_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndRow {
    pub channel: String,
    pub n: usize,
    pub failures: usize,
    pub trials: usize,
    pub fraction: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndReport {
    pub metric: String,
    pub stack: StackDescriptor,
    pub rows: Vec<EndToEndRow>,
}

impl EndToEndReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel,n,failures,trials,fraction,ci\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6}\n",
                r.channel, r.n, r.failures, r.trials, r.fraction, r.ci
            ));
        }
        out
    }

    pub fn max_fraction(&self) -> f64 {
        self.rows.iter().map(|r| r.fraction).fold(0.0, f64::max)
    }
}

/// Runs `stack` over every member of `set` at each block length. Layer
/// randomness is shared by all members; source/message draws and noise
/// seeds depend only on the trial index, not on the channel.
pub fn evaluate_end_to_end(
    stack: &LayerStack,
    set: &ChannelSet,
    metric: &Metric,
    ns: &[usize],
    trials: usize,
    cr: &CommonRandomness,
) -> Result<EndToEndReport> {
    if trials == 0 {
        return Err(Error::InvalidSequence("trials must be at least 1".into()));
    }
    let input_root = cr.derive("input").seed();
    let noise_root = cr.derive("noise").seed();
    let mut rows = Vec::new();
    for member in set.members() {
        let composite = compose(stack, member.clone())?;
        for &n in ns {
            if let Metric::Distortion { p, .. } = metric {
                if Transport::ports(&composite).input != Domain::Symbols(p.alphabet()) {
                    return Err(Error::CompositionError(
                        "stack does not accept source blocks".into(),
                    ));
                }
            }
            let fails: Result<Vec<bool>> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let input_seed = child_seed(child_seed(input_root, n as u64), t as u64);
                    let noise = child_seed(child_seed(noise_root, n as u64), t as u64);
                    match metric {
                        Metric::Distortion { p, d } => {
                            let x = draw_iid(p, n, &mut rng_from(input_seed))?;
                            Ok(match composite.run(n, &Payload::Block(x.clone()), noise)? {
                                Payload::Block(y) => !d.fits(x.symbols(), y.symbols()),
                                _ => true,
                            })
                        }
                        Metric::MessageError { rate } => {
                            let messages = codebook_size(n, *rate, usize::MAX)?;
                            let m = rng_from(input_seed).gen_range(0..messages);
                            Ok(composite.run(n, &Payload::Message(m), noise)?
                                != Payload::Message(m))
                        }
                    }
                })
                .collect();
            let failures = fails?.into_iter().filter(|f| *f).count();
            rows.push(EndToEndRow {
                channel: member.descriptor().label,
                n,
                failures,
                trials,
                fraction: failures as f64 / trials as f64,
                ci: wilson_half_width(failures, trials),
            });
        }
    }
    Ok(EndToEndReport {
        metric: metric.name().into(),
        stack: stack.describe(),
        rows,
    })
}

/// The asymmetric ternary source of the demo: probabilities in ratio 6:3:2.
/// Reading `P(a) = 2P(b) = 3P(c) = 1/6` literally gives weights summing to
/// `11/36`, so the demo normalizes proportionally.
pub fn ternary_demo_source() -> Pmf {
    Pmf::normalized(&[6.0, 3.0, 2.0]).expect("positive weights")
}

pub const TERNARY_DEMO_NOTE: &str =
    "ternary source P(a)=2P(b)=3P(c)=1/6 sums to 11/36; using proportional normalization (6/11,3/11,2/11)";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{Dmc, IdentityChannel, TransitionMatrix};
    use crate::codecs::DEFAULT_MAX_WORDS;
    use std::collections::HashSet;

    fn eps(e: f64) -> TypicalityParams {
        TypicalityParams::new(e).unwrap()
    }

    fn bsc(flip: f64) -> Arc<dyn GeneralChannel> {
        Arc::new(Dmc::new(TransitionMatrix::symmetric(2, flip).unwrap()).unwrap())
    }

    fn bin() -> Alphabet {
        Alphabet::new(2).unwrap()
    }

    fn random_block(n: usize, seed: u64) -> Sequence {
        draw_iid(&Pmf::uniform(2).unwrap(), n, &mut rng_from(seed)).unwrap()
    }

    #[test]
    fn identity_layers_leave_the_channel_unchanged() {
        let c = bsc(0.2);
        let stack = LayerStack::new(vec![
            Arc::new(IdentityLayer::new("a")),
            Arc::new(IdentityLayer::new("b")),
        ])
        .unwrap();
        let composite = compose_channel(&stack, c.clone()).unwrap();
        for s in 0..50 {
            let x = random_block(30, s);
            assert_eq!(
                composite.transmit(&x, s + 100).unwrap(),
                c.transmit(&x, s + 100).unwrap()
            );
        }
    }

    fn source_layer(rate: f64, seed: u64) -> Arc<dyn Layer> {
        let p = Pmf::uniform(2).unwrap();
        Arc::new(
            SourceCodecLayer::new(
                rate,
                p.clone(),
                p,
                DistortionSpec::hamming(2, 0.3).unwrap(),
                eps(0.2),
                CommonRandomness::new(seed),
                DEFAULT_MAX_WORDS,
            )
            .unwrap(),
        )
    }

    fn channel_layer(rate: f64, seed: u64) -> Arc<dyn Layer> {
        Arc::new(
            ChannelCodecLayer::new(
                rate,
                Pmf::uniform(2).unwrap(),
                DistortionSpec::hamming(2, 0.1).unwrap(),
                eps(0.3),
                CommonRandomness::new(seed),
                DEFAULT_MAX_WORDS,
            )
            .unwrap(),
        )
    }

    #[test]
    fn composition_is_associative() {
        let c = bsc(0.02);
        let lb = LayerStack::new(vec![source_layer(0.4, 1)]).unwrap();
        let la = LayerStack::new(vec![channel_layer(0.4, 2)]).unwrap();
        let flat = compose(&LayerStack::concat(&lb, &la).unwrap(), c.clone()).unwrap();
        let nested_inner = compose(&la, c).unwrap();
        let nested = Composite::over(lb, Arc::new(nested_inner)).unwrap();
        for s in 0..40 {
            let x = Payload::Block(random_block(20, s));
            assert_eq!(flat.run(20, &x, s).unwrap(), nested.run(20, &x, s).unwrap());
        }
    }

    #[test]
    fn incompatible_layers_are_rejected() {
        // Two source codecs: the outer emits messages, the inner wants blocks.
        assert!(matches!(
            LayerStack::new(vec![source_layer(0.4, 1), source_layer(0.4, 2)]),
            Err(Error::CompositionError(_))
        ));
        // A channel codec over a ternary channel.
        let ternary: Arc<dyn GeneralChannel> =
            Arc::new(IdentityChannel::new(Alphabet::new(3).unwrap()));
        let stack = LayerStack::new(vec![channel_layer(0.3, 1)]).unwrap();
        assert!(matches!(
            compose(&stack, ternary),
            Err(Error::CompositionError(_))
        ));
        // Message endpoints are not a channel.
        assert!(compose_channel(&stack, bsc(0.1)).is_err());
    }

    #[test]
    fn output_range_is_bounded_by_the_source_codebook() {
        let p = Pmf::uniform(2).unwrap();
        let inner = SourceCodeChannel::with_rate(
            0.25,
            p.clone(),
            DistortionSpec::hamming(2, 0.3).unwrap(),
            eps(0.2),
            CommonRandomness::new(5),
            DEFAULT_MAX_WORDS,
        )
        .unwrap();
        let stack = LayerStack::new(vec![Arc::new(IdentityLayer::new("outer"))]).unwrap();
        let composite = compose_channel(&stack, Arc::new(inner)).unwrap();
        let n = 16;
        let outputs: HashSet<Sequence> = (0..400)
            .map(|s| composite.transmit(&random_block(n, s), s).unwrap())
            .collect();
        assert!(outputs.len() <= codebook_size(n, 0.25, DEFAULT_MAX_WORDS).unwrap());
    }

    fn separation(rate: f64) -> SeparationParams {
        let p = Pmf::uniform(2).unwrap();
        SeparationParams {
            p: p.clone(),
            d: DistortionSpec::hamming(2, 0.3).unwrap(),
            eps: eps(0.2),
            source_rate: rate,
            channel_rate: rate,
            q: None,
            channel_code: ChannelCodeParams {
                p,
                d: DistortionSpec::hamming(2, 0.1).unwrap(),
                eps: eps(0.3),
            },
            max_words: DEFAULT_MAX_WORDS,
        }
    }

    #[test]
    fn noiseless_channel_leaves_only_source_failures() {
        let params = separation(0.3);
        let cr = CommonRandomness::new(9);
        let stack = build_separation_system(&params, &cr).unwrap();
        let set = ChannelSet::new(vec![Arc::new(IdentityChannel::new(bin()))]).unwrap();
        let metric = Metric::Distortion {
            p: params.p.clone(),
            d: params.d.clone(),
        };
        let n = 20;
        let report = evaluate_end_to_end(&stack, &set, &metric, &[n], 300, &cr).unwrap();
        // Replay the evaluation's source blocks through the source layer alone.
        let source = &stack.layers()[0];
        let input_root = child_seed(cr.derive("input").seed(), n as u64);
        let mut failures = 0;
        for t in 0..300u64 {
            let x = draw_iid(&params.p, n, &mut rng_from(child_seed(input_root, t))).unwrap();
            let block = Payload::Block(x.clone());
            let alone = source
                .decode(n, &source.encode(n, &block).unwrap())
                .unwrap();
            let composite = compose(&stack, Arc::new(IdentityChannel::new(bin()))).unwrap();
            assert_eq!(composite.run(n, &block, t).unwrap(), alone);
            let Payload::Block(y) = alone else {
                panic!("source layer returned a non-block")
            };
            if !params.d.fits(x.symbols(), y.symbols()) {
                failures += 1;
            }
        }
        assert_eq!(report.rows[0].failures, failures);
    }

    #[test]
    fn separation_fails_over_a_very_noisy_channel() {
        let params = separation(0.3);
        let cr = CommonRandomness::new(10);
        let stack = build_separation_system(&params, &cr).unwrap();
        let set = ChannelSet::new(vec![bsc(0.4)]).unwrap();
        let metric = Metric::Distortion {
            p: params.p.clone(),
            d: params.d.clone(),
        };
        let report = evaluate_end_to_end(&stack, &set, &metric, &[40], 300, &cr).unwrap();
        assert!(report.rows[0].fraction > 0.5, "{report:?}");
    }

    #[test]
    fn end_to_end_is_deterministic() {
        let params = separation(0.3);
        let run = || {
            let cr = CommonRandomness::new(11);
            let stack = build_separation_system(&params, &cr).unwrap();
            let set =
                ChannelSet::new(vec![bsc(0.01), Arc::new(IdentityChannel::new(bin()))]).unwrap();
            let metric = Metric::Distortion {
                p: params.p.clone(),
                d: params.d.clone(),
            };
            evaluate_end_to_end(&stack, &set, &metric, &[20, 30], 200, &cr)
                .unwrap()
                .to_csv()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_message_never_errs() {
        let p = Pmf::uniform(2).unwrap();
        let d = DistortionSpec::hamming(2, 0.2).unwrap();
        let lossy = bsc(0.45);
        let check = MembershipCheck {
            ns: vec![10],
            trials: 20,
            threshold: 0.1,
        };
        let cr = CommonRandomness::new(3);
        let built =
            build_reliable_on_lossy(lossy.clone(), &p, &d, eps(0.2), 0.0, &check, &cr, 16).unwrap();
        assert!(!built.precondition_met);
        let set = ChannelSet::new(vec![lossy]).unwrap();
        let report = evaluate_end_to_end(
            &built.stack,
            &set,
            &Metric::MessageError { rate: 0.0 },
            &[10],
            100,
            &cr,
        )
        .unwrap();
        assert_eq!(report.rows[0].failures, 0);
    }

    #[test]
    fn stack_describes_itself() {
        let stack = build_separation_system(&separation(0.3), &CommonRandomness::new(1)).unwrap();
        let desc = serde_json::to_value(stack.describe()).unwrap();
        assert_eq!(desc["layers"][0]["kind"], "source_codec");
        assert_eq!(desc["layers"][1]["kind"], "channel_codec");
        assert_eq!(desc["layers"][1]["rate"], 0.3);
    }

    #[test]
    fn ternary_demo_source_is_normalized() {
        let p = ternary_demo_source();
        assert!((p.get(0) - 6.0 / 11.0).abs() < 1e-12);
        assert!((p.get(0) - 2.0 * p.get(1)).abs() < 1e-12);
        assert!((p.get(0) - 3.0 * p.get(2)).abs() < 1e-12);
    }
}
