//! Channels by name.
//!
//! A [`ChannelRegistry`] maps a kind string to a builder that turns JSON
//! parameters into a channel. Experiments describe channel sets as lists of
//! [`ChannelSpec`]s and never name concrete types.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::channels::{
    BurstChannel, ChannelSet, ConstantChannel, Dmc, GeneralChannel, IdentityChannel,
    SourceCodeChannel, SourceCodeSpec, TransitionMatrix,
};
use crate::codecs::default_reconstruction_pmf;
use crate::error::{Error, Result};
use crate::primitives::{Alphabet, DistortionSpec, Pmf, TypicalityParams};
use crate::randomness::CommonRandomness;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub kind: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// What builders may draw on besides their own parameters.
#[derive(Debug, Clone)]
pub struct ChannelContext {
    pub p: Pmf,
    pub d: DistortionSpec,
    pub eps: TypicalityParams,
    pub randomness: CommonRandomness,
    pub max_words: usize,
    /// Config path of the spec being built, for error messages.
    pub path: String,
}

pub trait ChannelBuilder: Send + Sync {
    fn build(
        &self,
        params: &serde_json::Value,
        ctx: &ChannelContext,
    ) -> Result<Arc<dyn GeneralChannel>>;
}

impl<F> ChannelBuilder for F
where
    F: Fn(&serde_json::Value, &ChannelContext) -> Result<Arc<dyn GeneralChannel>> + Send + Sync,
{
    fn build(
        &self,
        params: &serde_json::Value,
        ctx: &ChannelContext,
    ) -> Result<Arc<dyn GeneralChannel>> {
        self(params, ctx)
    }
}

pub struct ChannelRegistry {
    builders: BTreeMap<String, Box<dyn ChannelBuilder>>,
}

impl Default for ChannelRegistry {
    fn default() -> Self {
        ChannelRegistry::with_builtins()
    }
}

impl ChannelRegistry {
    pub fn empty() -> Self {
        ChannelRegistry {
            builders: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = ChannelRegistry::empty();
        r.register("identity", build_identity);
        r.register("bsc", build_bsc);
        r.register("dmc", build_dmc);
        r.register("constant", build_constant);
        r.register("burst", build_burst);
        r.register("source_code", build_source_code);
        r
    }

    /// Adds or replaces a builder.
    pub fn register(&mut self, kind: impl Into<String>, builder: impl ChannelBuilder + 'static) {
        self.builders.insert(kind.into(), Box::new(builder));
    }

    pub fn kinds(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn build(
        &self,
        spec: &ChannelSpec,
        ctx: &ChannelContext,
    ) -> Result<Arc<dyn GeneralChannel>> {
        let builder = self.builders.get(&spec.kind).ok_or_else(|| {
            Error::config(
                format!("{}.kind", ctx.path),
                format!(
                    "unknown channel kind `{}`; known: {}",
                    spec.kind,
                    self.kinds().join(", ")
                ),
            )
        })?;
        builder.build(&spec.params, ctx)
    }

    /// Builds every spec; member `i` sees `ctx.path` as `<path>[i]` and
    /// derives its randomness from label `channel-i`.
    pub fn build_set(&self, specs: &[ChannelSpec], ctx: &ChannelContext) -> Result<ChannelSet> {
        let members = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let member_ctx = ChannelContext {
                    randomness: ctx.randomness.derive(format!("channel-{i}")),
                    path: format!("{}[{i}]", ctx.path),
                    ..ctx.clone()
                };
                self.build(spec, &member_ctx)
            })
            .collect::<Result<Vec<_>>>()?;
        ChannelSet::new(members).map_err(|e| Error::config(ctx.path.clone(), e.to_string()))
    }
}

fn params<T: DeserializeOwned>(value: &serde_json::Value, ctx: &ChannelContext) -> Result<T> {
    let value = if value.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        value.clone()
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." {
            format!("{}.params", ctx.path)
        } else {
            format!("{}.params.{inner}", ctx.path)
        };
        Error::config(path, e.into_inner().to_string())
    })
}

fn in_context(ctx: &ChannelContext, field: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } | Error::ResourceLimit(_) => e,
        other => Error::config(format!("{}.params.{field}", ctx.path), other.to_string()),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphabetParams {
    alphabet: Option<usize>,
}

fn build_identity(
    value: &serde_json::Value,
    ctx: &ChannelContext,
) -> Result<Arc<dyn GeneralChannel>> {
    let p: AlphabetParams = params(value, ctx)?;
    let k = Alphabet::new(p.alphabet.unwrap_or(ctx.p.len()))
        .map_err(|e| in_context(ctx, "alphabet", e))?;
    Ok(Arc::new(IdentityChannel::new(k)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlipParams {
    flip: f64,
    alphabet: Option<usize>,
}

/// Symmetric channel; binary unless `alphabet` says otherwise.
fn build_bsc(value: &serde_json::Value, ctx: &ChannelContext) -> Result<Arc<dyn GeneralChannel>> {
    let p: FlipParams = params(value, ctx)?;
    let k = p.alphabet.unwrap_or(2);
    let w = TransitionMatrix::symmetric(k, p.flip).map_err(|e| in_context(ctx, "flip", e))?;
    Ok(Arc::new(Dmc::new(w)?.with_label(format!("bsc_{}", p.flip))))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DmcParams {
    matrix: Vec<Vec<f64>>,
    label: Option<String>,
}

fn build_dmc(value: &serde_json::Value, ctx: &ChannelContext) -> Result<Arc<dyn GeneralChannel>> {
    let p: DmcParams = params(value, ctx)?;
    let w = TransitionMatrix::new(p.matrix).map_err(|e| in_context(ctx, "matrix", e))?;
    let dmc = Dmc::new(w)?;
    Ok(Arc::new(match p.label {
        Some(l) => dmc.with_label(l),
        None => dmc,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantParams {
    symbol: usize,
    input: Option<usize>,
    output: Option<usize>,
}

fn build_constant(
    value: &serde_json::Value,
    ctx: &ChannelContext,
) -> Result<Arc<dyn GeneralChannel>> {
    let p: ConstantParams = params(value, ctx)?;
    let input =
        Alphabet::new(p.input.unwrap_or(ctx.p.len())).map_err(|e| in_context(ctx, "input", e))?;
    let output = Alphabet::new(p.output.unwrap_or(ctx.d.cols()))
        .map_err(|e| in_context(ctx, "output", e))?;
    let c =
        ConstantChannel::new(input, output, p.symbol).map_err(|e| in_context(ctx, "symbol", e))?;
    Ok(Arc::new(c))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BurstParams {
    fraction: f64,
    alphabet: Option<usize>,
}

fn build_burst(value: &serde_json::Value, ctx: &ChannelContext) -> Result<Arc<dyn GeneralChannel>> {
    let p: BurstParams = params(value, ctx)?;
    let k = Alphabet::new(p.alphabet.unwrap_or(ctx.p.len()))
        .map_err(|e| in_context(ctx, "alphabet", e))?;
    let c = BurstChannel::new(k, p.fraction).map_err(|e| in_context(ctx, "fraction", e))?;
    Ok(Arc::new(c))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceCodeParams {
    rate: f64,
    #[serde(rename = "qY")]
    q: Option<Vec<f64>>,
    /// Overrides the experiment's distortion budget.
    #[serde(rename = "D")]
    budget: Option<f64>,
    eps: Option<f64>,
}

/// A random source code generated per block length from the context's
/// randomness, encoding against the context's `(p, d)`.
fn build_source_code(
    value: &serde_json::Value,
    ctx: &ChannelContext,
) -> Result<Arc<dyn GeneralChannel>> {
    let p: SourceCodeParams = params(value, ctx)?;
    let q = match p.q {
        Some(w) => Pmf::new(w).map_err(|e| in_context(ctx, "qY", e))?,
        None => default_reconstruction_pmf(&ctx.p, ctx.d.cols())?,
    };
    let d = match p.budget {
        Some(b) => ctx.d.with_budget(b).map_err(|e| in_context(ctx, "D", e))?,
        None => ctx.d.clone(),
    };
    let eps = match p.eps {
        Some(e) => TypicalityParams::new(e).map_err(|e| in_context(ctx, "eps", e))?,
        None => ctx.eps,
    };
    let spec = SourceCodeSpec {
        rate: p.rate,
        q,
        max_words: ctx.max_words,
        randomness: ctx.randomness.clone(),
    };
    let c = SourceCodeChannel::random(spec, ctx.p.clone(), d, eps)
        .map_err(|e| in_context(ctx, "qY", e))?;
    Ok(Arc::new(c))
}
