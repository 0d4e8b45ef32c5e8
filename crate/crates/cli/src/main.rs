//! `risotto`: verification and experiment driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 verification failure.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array3;
use serde::Serialize;

use config::{DatasetConfig, DatasetKind, FileConfig};
use risotto_core::init::{init_block, BlockSpec, KernelSize};
use risotto_core::network::{build_network, forward, jacobian_report, ReportOptions};
use risotto_core::sigprop::{
    cov_bound_recursion, lemma_constant_scan, lemma_mc_check, mc_cov_trace, mc_norm_profile, rho_grid,
    theory_norm_profile, write_csv, CovBoundParams, LemmaCsvRow, NormRow, DEFAULT_C,
};
use risotto_core::train::{alpha_sweep, sgd_train, TrainConfig};
use risotto_core::{FeatureMap, InitScheme, NetworkSpec, RngStream, SchemeKind};

/// Tolerance on effective singular values for the isometry check.
const DI_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "risotto", version, about = "Orthogonal ResNet initialization: verification and experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Block Jacobian spectra; fails (exit 2) if a Risotto block is not an exact isometry.
    DiVerify(DiArgs),
    /// Monte-Carlo norm and covariance propagation next to the theory.
    Sigprop(SigpropArgs),
    /// Tabulate g, h and c of the ReLU Gaussian covariance, with Monte-Carlo checks.
    Lemma(LemmaArgs),
    /// Train a fully-connected residual network with SGD.
    Train(TrainArgs),
    /// One Risotto training run per alpha.
    AlphaSweep(SweepArgs),
    /// Initialize one block and dump its weight centers as JSON.
    InitDump(DumpArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct Common {
    /// Network JSON, or an object with `network`, `train` and `dataset` sections.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Initialization scheme.
    #[arg(long, default_value = "risotto-c", value_parser = clap::builder::PossibleValuesParser::new(InitScheme::NAMES))]
    scheme: String,
    /// Residual branch weight alpha (Risotto blocks; balanced normal).
    #[arg(long)]
    alpha: Option<f64>,
    /// Skip branch weight beta (balanced normal only).
    #[arg(long)]
    beta: Option<f64>,
    /// Number of residual blocks of the default network.
    #[arg(long, default_value_t = 5)]
    depth: usize,
    /// Width N1 of the default fully-connected network (input dim is width / 2).
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Monte-Carlo samples or initializations.
    #[arg(long)]
    samples: Option<usize>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output path (default: stdout).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct DiArgs {
    #[command(flatten)]
    common: Common,
    /// Skip the finite-difference cross-check.
    #[arg(long)]
    no_fd: bool,
}

#[derive(Args)]
struct SigpropArgs {
    #[command(flatten)]
    common: Common,
    /// Cosine between the two probe inputs of the covariance trace.
    #[arg(long, default_value_t = 0.2)]
    input_corr: f64,
    /// ReLU covariance constant c used by the covariance bound.
    #[arg(long, default_value_t = DEFAULT_C)]
    c: f64,
}

#[derive(Args)]
struct LemmaArgs {
    #[command(flatten)]
    common: Common,
    /// Number of equally spaced rho values on [-1, 1].
    #[arg(long, default_value_t = 21)]
    grid: usize,
}

#[derive(Args, Clone)]
struct TrainOpts {
    #[command(flatten)]
    common: Common,
    /// Dataset (overrides the config file).
    #[arg(long, value_enum)]
    dataset: Option<DatasetKind>,
    /// CIFAR-10 binary file.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Upper bound on SGD steps.
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// Where to write the JSON summary (default: the output path with a .json extension, or stdout).
    #[arg(long, value_name = "PATH")]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// Comma-separated alpha values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 1.0])]
    alphas: Vec<f64>,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    common: Common,
    /// Kernel side of the dumped block.
    #[arg(long, default_value_t = 1)]
    kernel: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        // Reader went away (e.g. `| head`): not an error.
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let kind = if let Some(e) = c.downcast_ref::<io::Error>() {
            Some(e.kind())
        } else if let Some(e) = c.downcast_ref::<serde_json::Error>() {
            e.io_error_kind()
        } else {
            match c.downcast_ref::<risotto_core::Error>() {
                Some(risotto_core::Error::Io(e)) => Some(e.kind()),
                Some(risotto_core::Error::Json(e)) => e.io_error_kind(),
                _ => None,
            }
        };
        kind == Some(io::ErrorKind::BrokenPipe)
    })
}

/// `Ok(false)` signals a verification failure.
fn run(cli: Cli) -> Result<bool> {
    let common = match &cli.cmd {
        Cmd::DiVerify(a) => &a.common,
        Cmd::Sigprop(a) => &a.common,
        Cmd::Lemma(a) => &a.common,
        Cmd::Train(a) => &a.opts.common,
        Cmd::AlphaSweep(a) => &a.opts.common,
        Cmd::InitDump(a) => &a.common,
    };
    if let Some(n) = common.threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.cmd {
        Cmd::DiVerify(a) => cmd_di_verify(&a),
        Cmd::Sigprop(a) => cmd_sigprop(&a).map(|_| true),
        Cmd::Lemma(a) => cmd_lemma(&a).map(|_| true),
        Cmd::Train(a) => cmd_train(&a).map(|_| true),
        Cmd::AlphaSweep(a) => cmd_alpha_sweep(&a).map(|_| true),
        Cmd::InitDump(a) => cmd_init_dump(&a).map(|_| true),
    }
}

struct Setup {
    scheme: InitScheme,
    spec: NetworkSpec,
}

fn load_file(c: &Common) -> Result<FileConfig> {
    match &c.config {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

fn scheme_of(c: &Common, depth: usize) -> Result<InitScheme> {
    let mut scheme: InitScheme = c.scheme.parse()?;
    match &mut scheme.kind {
        SchemeKind::BalancedNormal { alpha, beta } => match (c.alpha, c.beta) {
            (Some(a), Some(b)) => (*alpha, *beta) = (a, b),
            (Some(a), None) => (*alpha, *beta) = (a, (1.0 - a * a).max(0.0).sqrt()),
            (None, Some(b)) => (*alpha, *beta) = ((1.0 - b * b).max(0.0).sqrt(), b),
            (None, None) => {}
        },
        SchemeKind::FixupLike { total_depth } => *total_depth = depth.max(1),
        _ => {}
    }
    Ok(scheme)
}

fn setup(c: &Common, file: &FileConfig, output_dim: usize) -> Result<Setup> {
    let provisional: InitScheme = c.scheme.parse()?;
    let mut spec = match &file.network {
        Some(n) => n.clone(),
        None => {
            if c.width < 2 {
                bail!("--width must be >= 2");
            }
            NetworkSpec::fc(
                c.width / 2,
                c.width,
                c.depth,
                provisional.natural_kind(),
                c.alpha.unwrap_or(1.0),
                output_dim,
            )
        }
    };
    if let Some(a) = c.alpha {
        if provisional.is_risotto() {
            for b in &mut spec.blocks {
                b.alpha = a;
            }
        }
    }
    spec.validate()?;
    let scheme = scheme_of(c, spec.depth())?;
    Ok(Setup { scheme, spec })
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit<T: Serialize>(c: &Common, rows: &[T]) -> Result<()> {
    let mut w = open_out(c.out.as_deref())?;
    match c.format {
        Format::Csv => write_csv(&mut w, rows)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, rows)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn probe_input(spec: &NetworkSpec, seed: u64, stream: u64) -> FeatureMap {
    let mut r = RngStream::new(seed, stream);
    Array3::from_shape_fn((spec.input_dim, spec.spatial[0], spec.spatial[1]), |_| r.standard_normal())
}

#[derive(Serialize)]
struct DiRow {
    block: usize,
    kind: String,
    raw_min: Option<f64>,
    raw_max: Option<f64>,
    effective_min: Option<f64>,
    effective_max: Option<f64>,
    effective_residual: Option<f64>,
    fd_gap: Option<f64>,
    zero_preactivation: bool,
}

fn cmd_di_verify(a: &DiArgs) -> Result<bool> {
    let s = setup(&a.common, &load_file(&a.common)?, 10)?;
    let weights = build_network(&s.spec, &s.scheme, &RngStream::new(a.common.seed, 0))?;
    let x = probe_input(&s.spec, a.common.seed, 1);
    let act = forward(&s.spec, &weights, &x)?;
    let opts = ReportOptions {
        finite_differences: !a.no_fd,
        ..ReportOptions::default()
    };
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    let mut pass = true;
    for (l, w) in weights.blocks.iter().enumerate() {
        let r = jacobian_report(w, &act.states[l], &opts)?;
        if s.scheme.is_risotto() {
            let expect = w.n_in().min(w.n_out()) / 2 * s.spec.spatial_size();
            let ok = r.effective_singular_values.len() == expect
                && r.effective_singular_values.iter().all(|v| (v - 1.0).abs() <= DI_TOL);
            if !ok {
                eprintln!("block {}: effective spectrum is not within {DI_TOL:e} of 1", l + 1);
            }
            pass &= ok;
        }
        let ends = |v: &[f64]| (v.last().copied(), v.first().copied());
        let (raw_min, raw_max) = ends(&r.raw_singular_values);
        let (effective_min, effective_max) = ends(&r.effective_singular_values);
        rows.push(DiRow {
            block: l + 1,
            kind: format!("{:?}", w.kind),
            raw_min,
            raw_max,
            effective_min,
            effective_max,
            effective_residual: r.effective_residual,
            fd_gap: r.analytic_vs_fd_gap,
            zero_preactivation: r.zero_preactivation,
        });
        reports.push(r);
    }
    match a.common.format {
        Format::Csv => emit(&a.common, &rows)?,
        Format::Json => emit(&a.common, &reports)?,
    }
    if !s.scheme.is_risotto() {
        eprintln!("{}: isometry assertion applies to Risotto schemes only; report emitted", s.scheme);
    }
    Ok(pass)
}

fn unit_pair(spec: &NetworkSpec, corr: f64, seed: u64) -> Result<(FeatureMap, FeatureMap)> {
    if !(-1.0..=1.0).contains(&corr) {
        bail!("--input-corr must lie in [-1, 1]");
    }
    let a = probe_input(spec, seed, 1);
    let mut b = probe_input(spec, seed, 2);
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let a = a / na;
    let proj: f64 = a.iter().zip(b.iter()).map(|(p, q)| p * q).sum();
    b.scaled_add(-proj, &a);
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nb == 0.0 {
        bail!("input dimension too small for two independent probes");
    }
    let b = &a * corr + &(b * ((1.0 - corr * corr).sqrt() / nb));
    Ok((a, b))
}

#[derive(Serialize)]
struct SigpropJson<'a> {
    norm: &'a [NormRow],
    cov: &'a [risotto_core::sigprop::CovRow],
    trace: &'a risotto_core::sigprop::CovTrace,
}

fn cmd_sigprop(a: &SigpropArgs) -> Result<()> {
    let c = &a.common;
    let samples = c.samples.unwrap_or(200);
    if samples < 2 {
        bail!("--samples must be >= 2");
    }
    let s = setup(c, &load_file(c)?, 10)?;
    let rng = RngStream::new(c.seed, 0);
    let x = probe_input(&s.spec, c.seed, 1);
    let profile = mc_norm_profile(&s.spec, &s.scheme, &x, samples, &rng)?;
    let theory = theory_norm_profile(&s.spec, &s.scheme);
    let norm: Vec<NormRow> = profile
        .iter()
        .enumerate()
        .map(|(l, m)| NormRow {
            scheme: s.scheme.name().to_string(),
            depth: l,
            width: s.spec.blocks.get(l.wrapping_sub(1)).map_or(s.spec.first_layer_out, |b| b.n_out),
            mean: m.mean,
            stderr: m.stderr,
            theory: theory.as_ref().map(|t| t[l]),
        })
        .collect();
    let (xa, xb) = unit_pair(&s.spec, a.input_corr, c.seed)?;
    let trace = mc_cov_trace(&s.spec, &s.scheme, &xa, &xb, samples, &rng.substream(1 << 32))?;
    let bounds = match s.scheme.kind {
        SchemeKind::HeNormal | SchemeKind::HeUniform | SchemeKind::BalancedNormal { .. } => {
            let (alpha, beta) = s.spec.blocks.first().map_or((0.0, 1.0), |b| s.scheme.branch_weights(b));
            let p = CovBoundParams::new(alpha, beta, a.c, s.spec.depth(), trace.input_corr);
            Some(cov_bound_recursion(&p)?)
        }
        _ => None,
    };
    let cov = trace.rows(s.scheme.is_risotto(), bounds.as_deref());
    match c.format {
        Format::Json => {
            let mut w = open_out(c.out.as_deref())?;
            serde_json::to_writer_pretty(
                &mut w,
                &SigpropJson {
                    norm: &norm,
                    cov: &cov,
                    trace: &trace,
                },
            )?;
            writeln!(w)?;
            w.flush()?;
        }
        Format::Csv => match &c.out {
            Some(dir) => {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                write_csv(File::create(dir.join("norm.csv"))?, &norm)?;
                write_csv(File::create(dir.join("cov.csv"))?, &cov)?;
            }
            None => {
                let mut out = io::stdout().lock();
                write_csv(&mut out, &norm)?;
                writeln!(out)?;
                write_csv(&mut out, &cov)?;
            }
        },
    }
    Ok(())
}

fn cmd_lemma(a: &LemmaArgs) -> Result<()> {
    let c = &a.common;
    let samples = c.samples.unwrap_or(100_000);
    if samples == 1 {
        bail!("--samples must be 0 (no Monte Carlo) or >= 2");
    }
    let grid = rho_grid(a.grid);
    let scan = lemma_constant_scan(&grid)?;
    let rng = RngStream::new(c.seed, 0);
    let rows = scan
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mc = if samples >= 2 {
                Some(lemma_mc_check(1.0, 1.0, r.rho, samples, &rng.substream(i as u64))?)
            } else {
                None
            };
            Ok(LemmaCsvRow {
                rho: r.rho,
                g: r.g,
                h: r.h,
                c: r.c,
                mc_mean: mc.map(|m| m.mean),
                mc_stderr: mc.map(|m| m.stderr),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    eprintln!("c over grid: min {:.6}, max {:.6}", scan.c_min, scan.c_max);
    emit(c, &rows)
}

fn train_inputs(o: &TrainOpts) -> Result<(Setup, risotto_core::train::Dataset, TrainConfig)> {
    let c = &o.common;
    let file = load_file(c)?;
    let mut ds = file.dataset.clone().unwrap_or_else(DatasetConfig::blobs);
    if let Some(k) = o.dataset {
        ds.kind = k;
    }
    if let Some(p) = &o.data {
        ds.path = Some(p.clone());
    }
    let out_dim = match ds.kind {
        DatasetKind::Blobs => ds.n_classes,
        DatasetKind::Cifar10 => 10,
    };
    let mut s = setup(c, &file, out_dim)?;
    if file.network.is_none() && ds.kind == DatasetKind::Cifar10 {
        s.spec.input_dim = 3072;
    }
    s.spec.validate()?;
    let data = ds.load(s.spec.input_dim, c.seed)?;
    let mut cfg = file.train.clone().unwrap_or_else(|| TrainConfig::new(0.1, 20, 50, c.seed));
    if file.train.is_none() || c.seed != 0 {
        cfg.seed = c.seed;
    }
    if let Some(v) = o.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if o.max_steps.is_some() {
        cfg.max_steps = o.max_steps;
    }
    cfg.validate()?;
    Ok((s, data, cfg))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let (s, data, cfg) = train_inputs(&a.opts)?;
    let log = sgd_train(&s.spec, &s.scheme, &data, None, &cfg)?;
    let c = &a.opts.common;
    let summary = serde_json::to_string_pretty(&log.summary_json())?;
    match c.format {
        Format::Json => {
            let mut w = open_out(c.out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &log)?;
            writeln!(w)?;
            w.flush()?;
        }
        Format::Csv => {
            let mut w = open_out(c.out.as_deref())?;
            log.write_steps_csv(&mut w)?;
            w.flush()?;
            let target = a.summary.clone().or_else(|| c.out.as_ref().map(|p| p.with_extension("json")));
            match target {
                Some(p) => std::fs::write(&p, summary + "\n").with_context(|| format!("writing {}", p.display()))?,
                None => eprintln!("{summary}"),
            }
        }
    }
    if log.diverged {
        eprintln!("training diverged after {} steps", log.steps.len());
    }
    Ok(())
}

fn cmd_alpha_sweep(a: &SweepArgs) -> Result<()> {
    let (s, data, cfg) = train_inputs(&a.opts)?;
    if !s.scheme.is_risotto() {
        bail!("alpha-sweep runs Risotto schemes only");
    }
    let rows = alpha_sweep(&s.spec, &a.alphas, &data, &cfg)?;
    let by = |x: f64| rows.iter().find(|r| r.alpha == x);
    if let (Some(zero), Some(one)) = (by(0.0), by(1.0)) {
        if one.final_loss > zero.final_loss {
            eprintln!("warning: alpha = 1 ended with a higher loss than alpha = 0");
        }
    }
    emit(&a.opts.common, &rows)
}

fn cmd_init_dump(a: &DumpArgs) -> Result<()> {
    // Nested matrices: always JSON, whatever --format says.
    let c = &a.common;
    let scheme = scheme_of(c, 1)?;
    let spec = match &c.config {
        Some(_) => load_file(c)?
            .network
            .and_then(|n| n.blocks.first().cloned())
            .context("config has no blocks")?,
        None => BlockSpec {
            k1: KernelSize::square(a.kernel),
            k2: KernelSize::square(a.kernel),
            ..BlockSpec::uniform(scheme.natural_kind(), c.width, 1, c.alpha.unwrap_or(1.0))
        },
    };
    let spec = match c.alpha {
        Some(alpha) if scheme.is_risotto() => BlockSpec { alpha, ..spec },
        _ => spec,
    };
    let w = init_block(&spec, &scheme, &RngStream::new(c.seed, 1))?;
    let mut out = open_out(c.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &w.dump(&scheme, &spec, c.seed))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}
