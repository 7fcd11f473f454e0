//! The `qkdsim` command-line front end.
//!
//! Every subcommand builds a [`RunConfig`] (defaults, then `--config FILE`,
//! then `--set KEY=VALUE` and the subcommand's own flags), runs the owning
//! module and writes CSV to `--out` or standard output. Output is produced in
//! memory first, so a failing run never leaves a partial file behind.
//!
//! Exit codes: 0 success, 1 usage, 2 domain or data error, 3 non-convergence.
//! Failures print one `error: <code>: <message>` line on stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{parse_f64, RunConfig};
use crate::correlate::{self, FitOptions, TimestampSeries, DEFAULT_SIDE_PEAKS};
use crate::error::{Error, Result};
use crate::keyrate::{self, IeModel, KeyRateInput, KeyRateReport};
use crate::optics::{pmd_polarization_qber, Basis};
use crate::protocol::{self, SiftedResult};
use crate::simulate::{self, ProtocolMode, TallySet};
use crate::source::coherence_time_ps;

#[derive(Parser, Debug)]
#[command(name = "qkdsim", version, about = "Single-photon QKD link simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo run of the link; writes the tally CSV
    Simulate(SimulateArgs),
    /// Secure key rate from explicit gains/errors or from a tally file
    Keyrate(KeyrateArgs),
    /// Key rate versus loss for several block sizes
    Sweep(SweepArgs),
    /// Coincidence histogram, g2 fit and pulsed g2(0) from time tags
    G2(G2Args),
    /// Free-running RFI analysis of a sliced tally file
    Rfi(RfiArgs),
    /// Background correction of gains and error rates
    Correct(CorrectArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat `key = value` config file
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output CSV path (default: standard output)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Cap on worker threads
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    pulses: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long = "loss-db")]
    loss_db: Option<String>,
    #[arg(long = "background-cps")]
    background_cps: Option<String>,
    /// Emit this many consecutive slices (adds a `slice` column)
    #[arg(long)]
    slices: Option<String>,
    /// Total phase drift over the run, spread linearly across slices
    #[arg(long = "drift-rad")]
    drift_rad: Option<String>,
    /// Write the JSON summary here instead of standard error
    #[arg(long, value_name = "FILE")]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct KeyrateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    qz: Option<String>,
    #[arg(long)]
    ez: Option<String>,
    #[arg(long)]
    ex: Option<String>,
    #[arg(long)]
    ey: Option<String>,
    /// RFI correlation quantity; rebuilt from E_x when omitted
    #[arg(long)]
    c: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    g2: Option<String>,
    #[arg(long)]
    fec: Option<String>,
    /// Sifted Z block length, or `inf`
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    protocol: Option<String>,
    /// Take Q and E from a tally CSV instead
    #[arg(long, value_name = "FILE", conflicts_with_all = ["qz", "ez", "ex", "ey"])]
    tally: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "loss-start")]
    loss_start: Option<String>,
    #[arg(long = "loss-stop")]
    loss_stop: Option<String>,
    #[arg(long = "loss-step")]
    loss_step: Option<String>,
    /// Comma-separated block sizes in pulses, e.g. `1e10,1e12,inf`
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long)]
    protocol: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct G2Args {
    #[command(flatten)]
    common: Common,
    /// Timestamp file (`#channels=<k> #unit=ps`, then `channel,time_ps`)
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    #[arg(long = "bin-ps")]
    bin_ps: Option<String>,
    #[arg(long = "window-ps")]
    window_ps: Option<String>,
    /// Pulse period; enables the pulsed g2(0) estimate
    #[arg(long = "rep-ps")]
    rep_ps: Option<String>,
    #[arg(long = "half-width-ps")]
    half_width_ps: Option<String>,
    #[arg(long = "side-peaks")]
    side_peaks: Option<String>,
    /// Fit the bunching/antibunching model
    #[arg(long)]
    fit: bool,
}

#[derive(Args, Debug, Clone)]
struct RfiArgs {
    #[command(flatten)]
    common: Common,
    /// Sliced tally CSV as written by `simulate --slices`
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Total sifted Z block length, or `inf` (default: the sifted count)
    #[arg(long)]
    n: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct CorrectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    e: Option<String>,
    /// Noise probability per gate summed over a basis' detectors
    #[arg(long = "p-noise")]
    p_noise: Option<String>,
    #[arg(long, default_value = "z")]
    basis: String,
    /// Correct every basis of a tally CSV instead
    #[arg(long, value_name = "FILE", conflicts_with_all = ["q", "e"])]
    tally: Option<PathBuf>,
}

/// CSV body plus an error to report after it has been written.
struct Emitted {
    body: Vec<u8>,
    deferred: Option<Error>,
}

impl From<Vec<u8>> for Emitted {
    fn from(body: Vec<u8>) -> Self {
        Emitted { body, deferred: None }
    }
}

/// Shortest round-trip float text.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::Level::Warn
    }
    fn log(&self, r: &log::Record) {
        if self.enabled(r.metadata()) {
            eprintln!("warning: {}", r.args());
        }
    }
    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(log::LevelFilter::Warn);
    }
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            return report(&Error::Usage(first.to_string()));
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    let msg = match e {
        Error::Domain(m)
        | Error::Data(m)
        | Error::InsufficientStatistics(m)
        | Error::Usage(m)
        | Error::NonConvergence(m) => m.clone(),
        other => other.to_string(),
    };
    eprintln!("error: {}: {}", e.code(), msg.replace('\n', " "));
    e.exit_code()
}

fn execute(cmd: Command) -> Result<()> {
    let common = match &cmd {
        Command::Simulate(a) => a.common.clone(),
        Command::Keyrate(a) => a.common.clone(),
        Command::Sweep(a) => a.common.clone(),
        Command::G2(a) => a.common.clone(),
        Command::Rfi(a) => a.common.clone(),
        Command::Correct(a) => a.common.clone(),
    };
    let mut cfg = RunConfig::new();
    if let Some(path) = &common.config {
        cfg.merge_file(path)?;
    }
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    let work = move || -> Result<Emitted> {
        match cmd {
            Command::Simulate(a) => cmd_simulate(&mut cfg, a),
            Command::Keyrate(a) => cmd_keyrate(&mut cfg, a).map(Into::into),
            Command::Sweep(a) => cmd_sweep(&mut cfg, a).map(Into::into),
            Command::G2(a) => cmd_g2(&mut cfg, a),
            Command::Rfi(a) => cmd_rfi(&mut cfg, a).map(Into::into),
            Command::Correct(a) => cmd_correct(&mut cfg, a).map(Into::into),
        }
    };
    let emitted = match common.threads {
        Some(0) => return Err(Error::Usage("--threads must be >= 1".into())),
        Some(n) => simulate::with_threads(n, work)?,
        None => work()?,
    };
    match &common.out {
        Some(path) => std::fs::write(path, &emitted.body)?,
        None => io::stdout().write_all(&emitted.body)?,
    }
    emitted.deferred.map_or(Ok(()), Err)
}

fn flag(cfg: &mut RunConfig, key: &str, value: &Option<String>) -> Result<()> {
    if let Some(v) = value {
        cfg.set(key, v)?;
    }
    Ok(())
}

fn number(name: &str, v: &Option<String>) -> Result<Option<f64>> {
    v.as_deref().map(|s| parse_f64(name, s)).transpose()
}

fn required(name: &str, v: &Option<String>) -> Result<f64> {
    number(name, v)?.ok_or_else(|| Error::Usage(format!("missing required --{name}")))
}

fn open(path: &PathBuf) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

#[derive(Serialize)]
struct BasisSummary {
    basis: String,
    gain: Option<f64>,
    qber: Option<f64>,
    predicted_gain: f64,
    predicted_qber: f64,
}

#[derive(Serialize)]
struct SimSummary {
    n_pulses: u64,
    seed: u64,
    protocol: String,
    slices: usize,
    bases: Vec<BasisSummary>,
    pmd_dgd_ps: f64,
    pmd_polarization_qber: f64,
}

fn cmd_simulate(cfg: &mut RunConfig, a: SimulateArgs) -> Result<Emitted> {
    flag(cfg, "sim.n_pulses", &a.pulses)?;
    flag(cfg, "sim.seed", &a.seed)?;
    flag(cfg, "sim.protocol", &a.protocol)?;
    flag(cfg, "channel.loss_db", &a.loss_db)?;
    flag(cfg, "channel.background_cps", &a.background_cps)?;
    flag(cfg, "sim.slices", &a.slices)?;
    flag(cfg, "sim.drift_rad", &a.drift_rad)?;
    let trial = cfg.trial()?;
    let link = cfg.link()?;
    let slices = cfg.slices()?;
    let drift = cfg.drift_rad()?;
    if slices == 0 {
        return Err(Error::Domain("sim.slices must be >= 1".into()));
    }

    let mut body = Vec::new();
    let total = if slices == 1 && drift == 0.0 {
        let tally = simulate::run(&trial, &link)?;
        tally.write_csv(&mut body)?;
        tally
    } else {
        let step = drift / slices as f64;
        let parts = simulate::split_run_with_phase(&trial, &link, slices, |k| step * k as f64)?;
        simulate::write_sliced_csv(&parts, &mut body)?;
        parts.into_iter().sum()
    };

    let sifted = protocol::sift(&total);
    let bases = match trial.protocol_mode {
        ProtocolMode::Bb84 => vec![Basis::Z, Basis::X],
        ProtocolMode::Rfi => Basis::ALL.to_vec(),
    };
    let bases = bases
        .into_iter()
        .map(|b| {
            let p = simulate::predict(&link, b)?;
            Ok(BasisSummary {
                basis: b.to_string(),
                gain: sifted.gain(b),
                qber: sifted.qber(b),
                predicted_gain: p.gain,
                predicted_qber: p.qber,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dgd = cfg.dgd_ps()?;
    let tc = coherence_time_ps(link.source.coherence_length_um()?);
    let summary = SimSummary {
        n_pulses: trial.n_pulses,
        seed: trial.seed,
        protocol: trial.protocol_mode.to_string(),
        slices,
        bases,
        pmd_dgd_ps: dgd,
        pmd_polarization_qber: pmd_polarization_qber(dgd, tc, link.optics.intrinsic_e_z),
    };
    let json = serde_json::to_string(&summary).map_err(|e| Error::Data(e.to_string()))?;
    match &a.summary {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => eprintln!("{json}"),
    }
    Ok(body.into())
}

const KEYRATE_HEADER: [&str; 18] = [
    "protocol",
    "ie_model",
    "q_z",
    "e_z",
    "e_x",
    "c",
    "n_z",
    "mu",
    "g2_pulsed",
    "a_z",
    "i_e",
    "secrecy",
    "error_correction",
    "smoothing",
    "privacy_amplification",
    "correctness",
    "rate_per_pulse",
    "clipped",
];

fn keyrate_row(input: &KeyRateInput, r: &KeyRateReport) -> Vec<String> {
    let c = match r.ie_model {
        IeModel::Rfi => Some(input.c_value()),
        _ => input.c,
    };
    vec![
        input.protocol.to_string(),
        r.ie_model.name().to_string(),
        fmt_f64(input.q_z),
        fmt_f64(input.e_z),
        fmt_f64(input.e_x),
        fmt_opt(c),
        fmt_f64(input.n_z),
        fmt_f64(input.mu),
        fmt_f64(input.g2_pulsed),
        fmt_f64(r.a_z),
        fmt_f64(r.i_e),
        fmt_f64(r.terms.secrecy),
        fmt_f64(r.terms.error_correction),
        fmt_f64(r.terms.smoothing),
        fmt_f64(r.terms.privacy_amplification),
        fmt_f64(r.terms.correctness),
        fmt_f64(r.rate),
        r.clipped.to_string(),
    ]
}

fn cmd_keyrate(cfg: &mut RunConfig, a: KeyrateArgs) -> Result<Vec<u8>> {
    flag(cfg, "source.mu", &a.mu)?;
    flag(cfg, "source.g2_pulsed", &a.g2)?;
    flag(cfg, "security.f_ec", &a.fec)?;
    flag(cfg, "sim.protocol", &a.protocol)?;
    let source = cfg.source()?;
    let sec = cfg.security()?;
    let protocol = cfg.protocol()?;
    let n = number("n", &a.n)?;

    let input = match &a.tally {
        Some(path) => {
            let s = protocol::sift(&TallySet::read_csv(open(path)?)?);
            let need = |v: Option<f64>, what: &str| {
                v.ok_or_else(|| Error::InsufficientStatistics(format!("tally has no sifted {what} counts")))
            };
            KeyRateInput {
                q_z: need(s.gain(Basis::Z), "Z")?,
                e_z: need(s.qber(Basis::Z), "Z")?,
                e_x: need(s.qber(Basis::X), "X")?,
                e_y: s.qber(Basis::Y),
                c: match (number("c", &a.c)?, protocol) {
                    (Some(c), _) => Some(c),
                    (None, ProtocolMode::Rfi) => Some(protocol::c_statistic(&s)?),
                    (None, ProtocolMode::Bb84) => None,
                },
                n_z: n.unwrap_or(s.n(Basis::Z) as f64),
                mu: source.mu,
                g2_pulsed: source.g2_pulsed,
                protocol,
            }
        }
        None => KeyRateInput {
            q_z: required("qz", &a.qz)?,
            e_z: required("ez", &a.ez)?,
            e_x: required("ex", &a.ex)?,
            e_y: number("ey", &a.ey)?,
            c: number("c", &a.c)?,
            n_z: n.unwrap_or(f64::INFINITY),
            mu: source.mu,
            g2_pulsed: source.g2_pulsed,
            protocol,
        },
    };

    // BB84 reports the phase-error bound and, for comparison, h(E_z).
    let models = match protocol {
        ProtocolMode::Bb84 => vec![IeModel::PhaseError, IeModel::BitError],
        ProtocolMode::Rfi => vec![IeModel::Rfi],
    };
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(KEYRATE_HEADER)?;
    for m in models {
        let r = keyrate::secure_key_rate_with(&input, &sec, m)?;
        out.write_record(keyrate_row(&input, &r))?;
    }
    into_bytes(out)
}

fn into_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn cmd_sweep(cfg: &mut RunConfig, a: SweepArgs) -> Result<Vec<u8>> {
    flag(cfg, "sweep.loss_start_db", &a.loss_start)?;
    flag(cfg, "sweep.loss_stop_db", &a.loss_stop)?;
    flag(cfg, "sweep.loss_step_db", &a.loss_step)?;
    flag(cfg, "sweep.block_sizes", &a.blocks)?;
    flag(cfg, "sim.protocol", &a.protocol)?;
    let params = cfg.sweep_params()?;
    let points = keyrate::sweep_loss(&params, &cfg.sweep_losses()?, &cfg.sweep_blocks()?)?;
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["loss_db", "block_size", "rate_per_pulse", "clipped"])?;
    for p in points {
        out.write_record([fmt_f64(p.loss_db), fmt_f64(p.block_size), fmt_f64(p.rate), p.clipped.to_string()])?;
    }
    into_bytes(out)
}

fn cmd_g2(cfg: &mut RunConfig, a: G2Args) -> Result<Emitted> {
    flag(cfg, "g2.bin_ps", &a.bin_ps)?;
    flag(cfg, "g2.window_ps", &a.window_ps)?;
    flag(cfg, "g2.half_width_ps", &a.half_width_ps)?;
    flag(cfg, "g2.side_peaks", &a.side_peaks)?;
    let bin = cfg.g2_i64("g2.bin_ps", 100)?;
    let window = cfg.g2_i64("g2.window_ps", 200_000)?;
    let ch_a = cfg.g2_usize("g2.channel_a", 0)?;
    let ch_b = cfg.g2_usize("g2.channel_b", 1)?;
    let series = TimestampSeries::read(open(&a.input)?)?;
    let hist = correlate::cross_correlate(series.channel(ch_a)?, series.channel(ch_b)?, bin, window)?;

    let rep = number("rep-ps", &a.rep_ps)?;
    if !a.fit && rep.is_none() {
        let curve = correlate::normalize_from_series(&hist, &series, ch_a, ch_b)?;
        let mut body = Vec::new();
        curve.write_csv(&mut body)?;
        return Ok(body.into());
    }

    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["quantity", "value", "std_err"])?;
    let mut deferred = None;
    if let Some(rep) = rep {
        let half = cfg.f64("g2.half_width_ps")?.unwrap_or(rep / 4.0);
        let n_side = cfg.g2_usize("g2.side_peaks", DEFAULT_SIDE_PEAKS)?;
        let g = correlate::pulsed_g2(&hist, rep, half, n_side)?;
        out.write_record(["pulsed_g2_zero".into(), fmt_f64(g.value), fmt_f64(g.std_err)])?;
    }
    if a.fit {
        let curve = correlate::normalize_from_series(&hist, &series, ch_a, ch_b)?;
        let opts = FitOptions {
            max_iterations: cfg.g2_usize("g2.max_iterations", FitOptions::default().max_iterations)?,
            ..FitOptions::default()
        };
        let weights: Vec<f64> = curve.counts.iter().map(|c| 1.0 / c.max(1.0)).collect();
        let f = correlate::fit_g2_weighted(&curve, &weights, &opts)?;
        let (p, s) = (f.params, f.std_err);
        for (name, v, e) in [
            ("A", p.a, s.a),
            ("B", p.b, s.b),
            ("C", p.c, s.c),
            ("tau1_ps", p.tau1, s.tau1),
            ("tau2_ps", p.tau2, s.tau2),
            ("tau3_ps", p.tau3, s.tau3),
            ("g2_zero", f.g2_zero, f.g2_zero_err),
        ] {
            out.write_record([name.to_string(), fmt_f64(v), fmt_f64(e)])?;
        }
        out.write_record(["residual_norm".into(), fmt_f64(f.residual_norm), String::new()])?;
        out.write_record(["converged".into(), f.converged.to_string(), String::new()])?;
        deferred = f.require_converged().err();
    }
    Ok(Emitted { body: into_bytes(out)?, deferred })
}

fn cmd_rfi(cfg: &mut RunConfig, a: RfiArgs) -> Result<Vec<u8>> {
    let source = cfg.source()?;
    let sec = cfg.security()?;
    let slices: Vec<SiftedResult> = simulate::read_sliced_csv(open(&a.input)?)?.iter().map(protocol::sift).collect();
    let grouping = protocol::rfi_group(&slices)?;
    let total = grouping.total();
    let n = number("n", &a.n)?.unwrap_or(total.n(Basis::Z) as f64);
    let rate = keyrate::rfi_grouped_key_rate(&grouping, &source, n, &sec)?;

    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record([
        "group",
        "bin_lo_rad",
        "bin_hi_rad",
        "theta_rad",
        "n_slices",
        "weight",
        "q_z",
        "e_z",
        "e_x",
        "c",
        "i_e",
        "rate_per_pulse",
        "finite_size_extrapolated",
    ])?;
    for (k, (g, r)) in grouping.groups.iter().zip(&rate.per_group).enumerate() {
        let s = &g.tallies;
        out.write_record([
            k.to_string(),
            fmt_f64(g.bin_lo),
            fmt_f64(g.bin_hi),
            fmt_f64(g.theta),
            g.n_slices.to_string(),
            fmt_f64(g.weight),
            fmt_opt(s.gain(Basis::Z)),
            fmt_opt(s.qber(Basis::Z)),
            fmt_opt(s.qber(Basis::X)),
            fmt_opt(g.c_statistic().ok()),
            fmt_opt(r.map(|r| r.i_e)),
            fmt_f64(r.map_or(0.0, |r| r.rate)),
            rate.finite_size_extrapolated.to_string(),
        ])?;
    }
    out.write_record([
        "all".to_string(),
        fmt_f64(0.0),
        fmt_f64(std::f64::consts::TAU),
        String::new(),
        (slices.len() - grouping.skipped.len()).to_string(),
        fmt_f64(1.0),
        fmt_opt(total.gain(Basis::Z)),
        fmt_opt(total.qber(Basis::Z)),
        fmt_opt(total.qber(Basis::X)),
        fmt_opt(protocol::c_statistic(&total).ok()),
        String::new(),
        fmt_f64(rate.rate),
        rate.finite_size_extrapolated.to_string(),
    ])?;
    into_bytes(out)
}

fn cmd_correct(cfg: &mut RunConfig, a: CorrectArgs) -> Result<Vec<u8>> {
    let p_noise = match number("p-noise", &a.p_noise)? {
        Some(p) => p,
        None => crate::channel::noise_total(cfg.link()?.noise_per_channel()?),
    };
    let rows: Vec<(Basis, f64, f64)> = match &a.tally {
        Some(path) => {
            let s = protocol::sift(&TallySet::read_csv(open(path)?)?);
            Basis::ALL
                .into_iter()
                .filter_map(|b| Some((b, s.gain(b)?, s.qber(b)?)))
                .collect()
        }
        None => vec![(a.basis.parse()?, required("q", &a.q)?, required("e", &a.e)?)],
    };
    if rows.is_empty() {
        return Err(Error::InsufficientStatistics("tally has no sifted counts".into()));
    }
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["basis", "q", "e", "p_noise_total", "q_corrected", "e_corrected"])?;
    for (b, q, e) in rows {
        let (qc, ec) = protocol::background_correct(q, e, p_noise)?;
        out.write_record([b.to_string(), fmt_f64(q), fmt_f64(e), fmt_f64(p_noise), fmt_f64(qc), fmt_f64(ec)])?;
    }
    into_bytes(out)
}
