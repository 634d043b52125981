//! Command-line driver.
//!
//! Each subcommand reads a JSON config, validates it completely, runs, and
//! writes `<command>.csv` (one `#` metadata line, then a header row and
//! data) plus `<command>.json` with the same content and a summary. Bodies
//! depend only on the config and seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::channels::{estimate_membership, GeneralChannel};
use crate::codecs::{
    quantize_type, run_channel_trials, run_converse_experiment, run_source_trials,
    ChannelTrialConfig, ConverseConfig, SourceTrialConfig, DEFAULT_MAX_WORDS,
};
use crate::error::{Error, Result};
use crate::oracle::rd_curve;
use crate::primitives::{DistortionSpec, Pmf, TypicalityParams};
use crate::randomness::CommonRandomness;
use crate::registry::{ChannelContext, ChannelRegistry, ChannelSpec};
use crate::stack::{
    build_separation_system, evaluate_end_to_end, ChannelCodeParams, ChannelCodecLayer, LayerStack,
    Metric, SeparationParams,
};
use crate::typecalc::{
    exact_f_chan, midpoint_rate, optimize_qy, phase_transition_curve, rate_grid, simplex_grid,
};

#[derive(Debug, Parser)]
#[command(
    name = "rdsep",
    version,
    about = "Random-coding experiments on distortion-constrained channels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// R(D) over a distortion grid.
    Rd,
    /// Threshold over reconstruction types and the survival curve.
    Sweep,
    /// Monte-Carlo channel, source, or converse trials.
    Trials,
    /// Excess-distortion membership of a channel set.
    Membership,
    /// Layered systems evaluated end to end over a channel set.
    Separate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Rd => "rd",
            Command::Sweep => "sweep",
            Command::Trials => "trials",
            Command::Membership => "membership",
            Command::Separate => "separate",
        }
    }
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        Error::ResourceLimit(_) => 3,
        Error::NoConvergence { .. } => 4,
        _ => 1,
    }
}

/// A finished experiment: one CSV body and its JSON mirror.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub command: &'static str,
    pub header: String,
    pub csv_body: String,
    pub summary: Value,
}

impl Output {
    pub fn csv(&self) -> String {
        format!("# {}\n{}", self.header, self.csv_body)
    }

    /// Writes `<command>.csv` and `<command>.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.command));
        let json_path = dir.join(format!("{}.json", self.command));
        fs::write(&csv_path, self.csv())?;
        let mut doc = self.summary.clone();
        doc["header"] = Value::String(self.header.clone());
        doc["rows"] = csv_rows(&self.csv_body);
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(&json_path, text + "\n")?;
        Ok((csv_path, json_path))
    }
}

/// CSV body as a list of objects keyed by the header row; numeric cells
/// become numbers.
fn csv_rows(body: &str) -> Value {
    let mut lines = body.lines();
    let Some(head) = lines.next() else {
        return Value::Array(vec![]);
    };
    let keys: Vec<&str> = head.split(',').collect();
    Value::Array(
        lines
            .map(|line| {
                let obj = keys
                    .iter()
                    .zip(line.split(','))
                    .map(|(k, v)| {
                        let cell = v
                            .parse::<f64>()
                            .ok()
                            .and_then(serde_json::Number::from_f64)
                            .map_or_else(|| Value::String(v.to_string()), Value::Number);
                        (k.to_string(), cell)
                    })
                    .collect();
                Value::Object(obj)
            })
            .collect(),
    )
}

/// Parses the command line and runs; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::config("--config", "a config file is required"))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
    let job = || -> Result<()> {
        let out = run_config(cli.command, &text, cli.seed)?;
        let (csv, json) = out.write(&cli.out)?;
        log::info!("wrote {} and {}", csv.display(), json.display());
        Ok(())
    };
    match cli.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::config("--threads", e.to_string()))?
            .install(job),
        None => job(),
    }
}

/// Runs one subcommand on config text; nothing is written.
pub fn run_config(command: Command, config: &str, seed: Option<u64>) -> Result<Output> {
    match command {
        Command::Rd => cmd_rd(parse(config)?, seed),
        Command::Sweep => cmd_sweep(parse(config)?, seed),
        Command::Trials => cmd_trials(parse(config)?, seed),
        Command::Membership => cmd_membership(parse(config)?, seed),
        Command::Separate => cmd_separate(parse(config)?, seed),
    }
}

fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })
}

fn pmf(path: &str, w: &[f64]) -> Result<Pmf> {
    Pmf::new(w.to_vec()).map_err(|e| Error::config(path, e.to_string()))
}

fn distortion(path: &str, m: &[Vec<f64>], budget: f64) -> Result<DistortionSpec> {
    DistortionSpec::new(m.to_vec(), budget).map_err(|e| Error::config(path, e.to_string()))
}

fn typicality(path: &str, eps: Option<f64>) -> Result<TypicalityParams> {
    match eps {
        Some(e) => TypicalityParams::new(e).map_err(|err| Error::config(path, err.to_string())),
        None => Ok(TypicalityParams::default()),
    }
}

fn source_model(p: &[f64], m: &[Vec<f64>], budget: f64) -> Result<(Pmf, DistortionSpec)> {
    let p = pmf("pX", p)?;
    let d = distortion("distortion", m, budget)?;
    if p.len() != d.rows() {
        return Err(Error::config(
            "pX",
            format!(
                "{} symbols but the distortion matrix has {} rows",
                p.len(),
                d.rows()
            ),
        ));
    }
    Ok((p, d))
}

fn positive(path: &str, v: usize) -> Result<usize> {
    if v == 0 {
        return Err(Error::config(path, "must be at least 1"));
    }
    Ok(v)
}

fn block_lengths(path: &str, ns: &[usize]) -> Result<Vec<usize>> {
    if ns.is_empty() {
        return Err(Error::config(path, "at least one block length is required"));
    }
    for (i, &n) in ns.iter().enumerate() {
        positive(&format!("{path}[{i}]"), n)?;
    }
    Ok(ns.to_vec())
}

fn header(command: &str, seed: u64, extra: &[(&str, String)]) -> String {
    let mut h = format!("rdsep {command} v{} seed={seed}", env!("CARGO_PKG_VERSION"));
    for (k, v) in extra {
        h.push_str(&format!(" {k}={v}"));
    }
    h
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdConfig {
    #[serde(rename = "pX")]
    pub p: Vec<f64>,
    pub distortion: Vec<Vec<f64>>,
    #[serde(rename = "D_grid")]
    pub grid: Vec<f64>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
}

fn cmd_rd(cfg: RdConfig, seed: Option<u64>) -> Result<Output> {
    let (p, d) = source_model(&cfg.p, &cfg.distortion, 0.0)?;
    if cfg.grid.is_empty() {
        return Err(Error::config(
            "D_grid",
            "at least one distortion value is required",
        ));
    }
    for (i, v) in cfg.grid.iter().enumerate() {
        if !(v.is_finite() && *v >= 0.0) {
            return Err(Error::config(
                format!("D_grid[{i}]"),
                "must be finite and non-negative",
            ));
        }
    }
    let tol = cfg.tol.unwrap_or(1e-6);
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::config("tol", "must be positive"));
    }
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let points = rd_curve(&p, &d, &cfg.grid, tol)?;
    let mut body = String::from("D,R,iterations,gap\n");
    for pt in &points {
        body.push_str(&format!(
            "{:.6},{:.6},{},{:.3e}\n",
            pt.distortion, pt.rate, pt.iterations, pt.gap
        ));
    }
    Ok(Output {
        command: "rd",
        header: header("rd", seed, &[("tol", format!("{tol:e}"))]),
        csv_body: body,
        summary: json!({
            "command": "rd",
            "seed": seed,
            "pX": p.weights(),
            "d_min": crate::oracle::min_distortion(&p, &d),
            "d_max": crate::oracle::max_distortion(&p, &d),
        }),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateGridConfig {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "pX")]
    pub p: Vec<f64>,
    pub distortion: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub budget: f64,
    pub eps: Option<f64>,
    pub n: usize,
    pub grid_step: Option<f64>,
    /// Fixes `q_Y` instead of optimizing; no exponent is fitted then.
    #[serde(rename = "qY")]
    pub q: Option<Vec<f64>>,
    #[serde(rename = "R_grid")]
    pub rates: RateGridConfig,
    pub seed: Option<u64>,
}

fn cmd_sweep(cfg: SweepConfig, seed: Option<u64>) -> Result<Output> {
    let (p, d) = source_model(&cfg.p, &cfg.distortion, cfg.budget)?;
    let eps = typicality("eps", cfg.eps)?;
    let n = positive("n", cfg.n)?;
    let step = cfg.grid_step.unwrap_or(0.05);
    simplex_grid(d.cols(), step).map_err(|e| Error::config("grid_step", e.to_string()))?;
    let rates = rate_grid(cfg.rates.start, cfg.rates.stop, cfg.rates.step)
        .map_err(|e| Error::config("R_grid", e.to_string()))?;
    let fixed_q = match &cfg.q {
        Some(w) => {
            let q = pmf("qY", w)?;
            if q.len() != d.cols() {
                return Err(Error::config(
                    "qY",
                    "length must match the distortion matrix columns",
                ));
            }
            Some(q)
        }
        None => None,
    };
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let (q, threshold) = match fixed_q {
        Some(q) => (q, Value::Null),
        None => {
            let t = optimize_qy(&p, &d, eps, n, step)?;
            (
                t.qy_star.clone(),
                serde_json::to_value(&t).map_err(|e| Error::Io(e.to_string()))?,
            )
        }
    };
    let log_f = exact_f_chan(&quantize_type(&q, n)?, &p, &d, eps)?;
    let curve = phase_transition_curve(n, &rates, log_f);
    let mut body = String::from("R,survival\n");
    for pt in &curve {
        body.push_str(&format!("{:.6},{:.9}\n", pt.rate, pt.survival));
    }
    let alpha = threshold.get("alpha").and_then(Value::as_f64);
    Ok(Output {
        command: "sweep",
        header: header(
            "sweep",
            seed,
            &[
                ("n", n.to_string()),
                ("D", d.budget().to_string()),
                ("eps", eps.epsilon().to_string()),
                ("alpha", alpha.map_or("none".into(), |a| format!("{a:.6}"))),
            ],
        ),
        csv_body: body,
        summary: json!({
            "command": "sweep",
            "seed": seed,
            "n": n,
            "qY": q.weights(),
            "log2_F": log_f.log2(),
            "midpoint_rate": midpoint_rate(n, log_f),
            "threshold": threshold,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    Channel,
    Source,
    Converse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialsConfig {
    pub mode: TrialMode,
    #[serde(rename = "pX")]
    pub p: Vec<f64>,
    pub distortion: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub budget: f64,
    pub eps: Option<f64>,
    pub n: usize,
    /// Code rate; the attacking channel-code rate in converse mode.
    #[serde(rename = "R")]
    pub rate: f64,
    #[serde(rename = "qY")]
    pub q: Option<Vec<f64>>,
    pub trials: usize,
    pub seed: Option<u64>,
    /// Channel mode only; defaults to identity.
    pub channel: Option<ChannelSpec>,
    /// Converse mode only: rate of the inner source code.
    pub source_rate: Option<f64>,
    pub max_words: Option<usize>,
}

fn channel_context(
    p: &Pmf,
    d: &DistortionSpec,
    eps: TypicalityParams,
    cr: &CommonRandomness,
    max_words: usize,
    path: &str,
) -> ChannelContext {
    ChannelContext {
        p: p.clone(),
        d: d.clone(),
        eps,
        randomness: cr.derive("channels"),
        max_words,
        path: path.into(),
    }
}

fn cmd_trials(cfg: TrialsConfig, seed: Option<u64>) -> Result<Output> {
    let (p, d) = source_model(&cfg.p, &cfg.distortion, cfg.budget)?;
    let eps = typicality("eps", cfg.eps)?;
    let n = positive("n", cfg.n)?;
    let trials = positive("trials", cfg.trials)?;
    if !(cfg.rate >= 0.0 && cfg.rate.is_finite()) {
        return Err(Error::config("R", "must be finite and non-negative"));
    }
    let q = match &cfg.q {
        Some(w) => Some(pmf("qY", w)?),
        None => None,
    };
    let max_words = cfg.max_words.unwrap_or(DEFAULT_MAX_WORDS);
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let cr = CommonRandomness::new(seed);
    let mut extra = vec![
        ("mode", format!("{:?}", cfg.mode).to_lowercase()),
        ("n", n.to_string()),
        ("R", cfg.rate.to_string()),
        ("D", d.budget().to_string()),
    ];
    let (hist, summary) = match cfg.mode {
        TrialMode::Channel => {
            let spec = cfg.channel.clone().unwrap_or(ChannelSpec {
                kind: "identity".into(),
                params: Value::Null,
            });
            let ctx = channel_context(&p, &d, eps, &cr, max_words, "channel");
            let c = ChannelRegistry::with_builtins().build(&spec, &ctx)?;
            extra.push(("channel", c.descriptor().label));
            let tc = ChannelTrialConfig {
                n,
                rate: cfg.rate,
                p: p.clone(),
                d: d.clone(),
                eps,
                trials,
                max_words,
            };
            let h = run_channel_trials(c.as_ref(), &tc, &cr.derive("trials"))?;
            (h, json!({"channel": c.descriptor()}))
        }
        TrialMode::Source => {
            let q = match q {
                Some(q) => q,
                None => crate::codecs::default_reconstruction_pmf(&p, d.cols())?,
            };
            if q.len() != d.cols() {
                return Err(Error::config(
                    "qY",
                    "length must match the distortion matrix columns",
                ));
            }
            let sc = SourceTrialConfig {
                n,
                rate: cfg.rate,
                p: p.clone(),
                q: q.clone(),
                d: d.clone(),
                eps,
                trials,
                max_words,
            };
            let h = run_source_trials(&sc, &cr.derive("trials"))?;
            (h, json!({"qY": q.weights()}))
        }
        TrialMode::Converse => {
            let source_rate = cfg
                .source_rate
                .ok_or_else(|| Error::config("source_rate", "required in converse mode"))?;
            extra.push(("source_rate", source_rate.to_string()));
            let cc = ConverseConfig {
                source_rate,
                attack_rate: cfg.rate,
                n,
                p: p.clone(),
                q,
                d: d.clone(),
                eps,
                trials,
                max_words,
            };
            let r = run_converse_experiment(&cc, &cr.derive("trials"))?;
            let summary = json!({
                "messages": r.messages,
                "inner_codewords": r.inner_codewords,
                "distinct_outputs_observed": r.distinct_outputs_observed,
                "pigeonhole_bound": r.pigeonhole_bound,
                "three_sigma": r.three_sigma,
                "inner_failure_fraction": r.inner_failure_fraction,
            });
            (r.histogram, summary)
        }
    };
    let mut summary = summary;
    summary["command"] = json!("trials");
    summary["seed"] = json!(seed);
    summary["error_fraction"] = json!(hist.error_fraction());
    summary["success_fraction"] = json!(hist.success_fraction());
    Ok(Output {
        command: "trials",
        header: header("trials", seed, &extra),
        csv_body: hist.to_csv(),
        summary,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipConfig {
    #[serde(rename = "pX")]
    pub p: Vec<f64>,
    pub distortion: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub budget: f64,
    pub eps: Option<f64>,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub seed: Option<u64>,
    pub channels: Vec<ChannelSpec>,
    /// Largest acceptable `p̂` at the largest block length.
    pub threshold: Option<f64>,
    pub max_words: Option<usize>,
}

fn cmd_membership(cfg: MembershipConfig, seed: Option<u64>) -> Result<Output> {
    let (p, d) = source_model(&cfg.p, &cfg.distortion, cfg.budget)?;
    let eps = typicality("eps", cfg.eps)?;
    let ns = block_lengths("ns", &cfg.ns)?;
    let trials = positive("trials", cfg.trials)?;
    let threshold = cfg.threshold.unwrap_or(0.05);
    let max_words = cfg.max_words.unwrap_or(DEFAULT_MAX_WORDS);
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let cr = CommonRandomness::new(seed);
    let ctx = channel_context(&p, &d, eps, &cr, max_words, "channels");
    let set = ChannelRegistry::with_builtins().build_set(&cfg.channels, &ctx)?;
    let mut body = String::from("channel,n,p_hat,ci,trials\n");
    let mut verdicts = Vec::new();
    for c in set.members() {
        let report = estimate_membership(
            c.as_ref(),
            &p,
            &d,
            &ns,
            trials,
            cr.derive("membership").seed(),
        )?;
        for r in &report.rows {
            body.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                report.channel.label, r.n, r.p_hat, r.ci, r.trials
            ));
        }
        verdicts.push(json!({
            "channel": report.channel,
            "non_increasing": report.non_increasing(),
            "passes": report.passes(threshold),
        }));
    }
    Ok(Output {
        command: "membership",
        header: header(
            "membership",
            seed,
            &[
                ("D", d.budget().to_string()),
                ("threshold", threshold.to_string()),
            ],
        ),
        csv_body: body,
        summary: json!({
            "command": "membership",
            "seed": seed,
            "channels": verdicts,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparateMode {
    /// Source codec under a channel codec; metric is excess distortion.
    Separation,
    /// A channel codec over each (lossy) channel of the set; metric is
    /// message error.
    ReliableOnLossy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelCodeConfig {
    #[serde(rename = "pX")]
    pub p: Option<Vec<f64>>,
    pub distortion: Option<Vec<Vec<f64>>>,
    #[serde(rename = "D")]
    pub budget: f64,
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparateConfig {
    pub mode: SeparateMode,
    #[serde(rename = "pX")]
    pub p: Vec<f64>,
    pub distortion: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub budget: f64,
    pub eps: Option<f64>,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub seed: Option<u64>,
    pub channels: Vec<ChannelSpec>,
    /// Separation: source-code rate.
    pub source_rate: Option<f64>,
    /// Separation: channel-code rate (defaults to `source_rate`). Reliable
    /// transport: the outer code rate.
    #[serde(rename = "R")]
    pub rate: Option<f64>,
    #[serde(rename = "qY")]
    pub q: Option<Vec<f64>>,
    /// Separation: the reliability layer's decoder.
    pub channel_code: Option<ChannelCodeConfig>,
    /// Copied into the CSV header.
    pub note: Option<String>,
    pub max_words: Option<usize>,
}

fn cmd_separate(cfg: SeparateConfig, seed: Option<u64>) -> Result<Output> {
    let (p, d) = source_model(&cfg.p, &cfg.distortion, cfg.budget)?;
    let eps = typicality("eps", cfg.eps)?;
    let ns = block_lengths("ns", &cfg.ns)?;
    let trials = positive("trials", cfg.trials)?;
    let max_words = cfg.max_words.unwrap_or(DEFAULT_MAX_WORDS);
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let cr = CommonRandomness::new(seed);
    let ctx = channel_context(&p, &d, eps, &cr, max_words, "channels");
    let q = match &cfg.q {
        Some(w) => Some(pmf("qY", w)?),
        None => None,
    };
    let mut extra = vec![
        ("mode", format!("{:?}", cfg.mode)),
        ("D", d.budget().to_string()),
    ];
    if let Some(note) = &cfg.note {
        extra.push(("note", format!("\"{}\"", note.replace('"', "'"))));
    }
    let (stack, metric, set) = match cfg.mode {
        SeparateMode::Separation => {
            let source_rate = cfg
                .source_rate
                .ok_or_else(|| Error::config("source_rate", "required in separation mode"))?;
            let channel_rate = cfg.rate.unwrap_or(source_rate);
            let cc = cfg
                .channel_code
                .as_ref()
                .ok_or_else(|| Error::config("channel_code", "required in separation mode"))?;
            let cc_p = match &cc.p {
                Some(w) => pmf("channel_code.pX", w)?,
                None => Pmf::uniform(2)?,
            };
            let cc_d = match &cc.distortion {
                Some(m) => distortion("channel_code.distortion", m, cc.budget)?,
                None => DistortionSpec::hamming(cc_p.len(), cc.budget)
                    .map_err(|e| Error::config("channel_code.D", e.to_string()))?,
            };
            let params = SeparationParams {
                p: p.clone(),
                d: d.clone(),
                eps,
                source_rate,
                channel_rate,
                q,
                channel_code: ChannelCodeParams {
                    p: cc_p.clone(),
                    d: cc_d,
                    eps: typicality("channel_code.eps", cc.eps)?,
                },
                max_words,
            };
            let channel_ctx = ChannelContext {
                p: cc_p.clone(),
                d: params.channel_code.d.clone(),
                ..ctx
            };
            let set = ChannelRegistry::with_builtins().build_set(&cfg.channels, &channel_ctx)?;
            let stack = build_separation_system(&params, &cr.derive("stack"))?;
            extra.push(("source_rate", source_rate.to_string()));
            extra.push(("channel_rate", channel_rate.to_string()));
            (
                stack,
                Metric::Distortion {
                    p: p.clone(),
                    d: d.clone(),
                },
                set,
            )
        }
        SeparateMode::ReliableOnLossy => {
            let rate = cfg
                .rate
                .ok_or_else(|| Error::config("R", "required in reliable_on_lossy mode"))?;
            let set = ChannelRegistry::with_builtins().build_set(&cfg.channels, &ctx)?;
            let layer = ChannelCodecLayer::new(
                rate,
                p.clone(),
                d.clone(),
                eps,
                cr.derive("stack").derive("reliable-codec"),
                max_words,
            )?;
            let stack = LayerStack::new(vec![Arc::new(layer)])?;
            extra.push(("R", rate.to_string()));
            (stack, Metric::MessageError { rate }, set)
        }
    };
    let report = evaluate_end_to_end(&stack, &set, &metric, &ns, trials, &cr.derive("evaluate"))?;
    let membership = if cfg.mode == SeparateMode::ReliableOnLossy {
        set.members()
            .iter()
            .map(|c: &Arc<dyn GeneralChannel>| {
                let r = estimate_membership(c.as_ref(), &p, &d, &ns, trials, cr.derive("membership").seed())?;
                Ok(json!({"channel": r.channel.label, "rows": r.rows, "non_increasing": r.non_increasing()}))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(Output {
        command: "separate",
        header: header("separate", seed, &extra),
        csv_body: report.to_csv(),
        summary: json!({
            "command": "separate",
            "seed": seed,
            "metric": report.metric,
            "stack": report.stack,
            "max_fraction": report.max_fraction(),
            "membership": membership,
            "note": cfg.note,
        }),
    })
}
