//! `finitekey` command-line front end.
//!
//! Each subcommand writes one CSV table to stdout or `--out`. Column order
//! per subcommand is fixed; see the `*_COLUMNS` constants.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use finitekey::bounds::{
    audit_chain, key_length_corollary, key_length_general, leak_model, ProtocolParams, SecretSplit,
};
use finitekey::optimize::{
    optimize, rate_curve, GridSpec, Objective, OptimizationProblem, OptimumRecord, Pins, SecurityTarget,
};
use finitekey::rate::{asymptotic_rate, expected_rate_with, ChannelModel, KeyLengthMethod};
use finitekey::sim::{batch_run, run_protocol_stream, EcMode, PeScope, SimOptions};
use finitekey::source::{quality_from_povms, quality_from_qubits, PovmSource, QubitSource};
use finitekey::stats::{
    hypergeometric_exceed_exact, sample_without_replacement_mc, serfling_bound, SamplingInstance,
};

pub mod config;
mod source_spec;
pub mod table;

use table::{int, num, sci, Table};

pub const KEYLEN_COLUMNS: &[&str] = &[
    "n",
    "k",
    "q",
    "Q_tol",
    "eps_sec",
    "eps_cor",
    "leak_ec",
    "ell",
    "ell_general",
    "eps_general",
    "eps_bar_general",
    "mu",
    "hmax_bound",
    "hmin_after_ucr",
    "hmin_after_leak",
    "delta_bound",
];
pub const RATE_COLUMNS: &[&str] =
    &["n", "k", "Q", "Q_tol", "eps_sec", "eps_cor", "ell", "M", "eps_rob", "p_z", "rate", "rate_rel"];
pub const OPTIMUM_COLUMNS: &[&str] = &[
    "n",
    "k",
    "N",
    "Q",
    "Q_tol",
    "eps_cor",
    "eps_sec",
    "eps_total",
    "security_rate",
    "ell",
    "M",
    "eps_rob",
    "p_x",
    "p_z",
    "leak_ec",
    "rate",
    "rate_rel",
    "ell_over_n",
    "ell_over_N",
];
pub const CURVE_EXTRA_COLUMNS: &[&str] = &["size", "raw", "monotone", "asymptote"];
pub const SIMULATE_COLUMNS: &[&str] =
    &["runs", "seed", "abort_pe_rate", "abort_ec_rate", "corr_fail", "mean_lambda", "M_empirical"];
pub const SERFLING_COLUMNS: &[&str] = &["N", "n", "k", "errors_total", "delta", "exact", "mc", "bound"];
pub const QUALITY_COLUMNS: &[&str] = &["source", "q", "c"];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] finitekey::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(_) => 2,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "finitekey", version, about = "Finite-key bounds and simulation for BB84 QKD")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Secret key length and the intermediate bound values.
    Keylen(KeylenArgs),
    /// Expected key rate for fixed protocol parameters.
    Rate(RateArgs),
    /// Optimize protocol parameters for one block size.
    Optimize(OptimizeArgs),
    /// Optimize over a list of block sizes.
    Curve(CurveArgs),
    /// Monte Carlo simulation of the full protocol.
    Simulate(SimulateArgs),
    /// Sampling-without-replacement tail: exact, Monte Carlo and bound.
    Serfling(SerflingArgs),
    /// Preparation quality of a source.
    Quality(QualityArgs),
}

#[derive(Debug, Args)]
pub struct Output {
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamArgs {
    /// Raw key length (sifted X bits).
    #[arg(long)]
    pub n: u64,
    /// Parameter-estimation sample size (sifted Z bits).
    #[arg(long)]
    pub k: u64,
    /// Preparation quality in bits.
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    #[arg(long)]
    pub qtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub eps_sec: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub eps_cor: f64,
    /// Error-correction leakage in bits, or `auto` for xi * n * h(Q_tol).
    #[arg(long, default_value = "auto")]
    pub leak: String,
    #[arg(long, default_value_t = 1.1)]
    pub xi: f64,
}

impl ParamArgs {
    fn params(&self) -> Result<ProtocolParams, CliError> {
        let leak_ec =
            match self.leak.as_str() {
                "auto" => leak_model(self.n, self.qtol, self.xi),
                bits => bits.parse::<f64>().ok().filter(|b| b.is_finite() && *b >= 0.0).ok_or_else(|| {
                    CliError::Usage(format!("--leak: expected `auto` or bits, got {bits:?}"))
                })?,
            };
        let p = ProtocolParams {
            n: self.n,
            k: self.k,
            q: self.q,
            q_tol: self.qtol,
            eps_cor: self.eps_cor,
            eps_sec: self.eps_sec,
            leak_ec,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Corollary,
    General,
}

impl From<MethodArg> for KeyLengthMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Corollary => KeyLengthMethod::Corollary,
            MethodArg::General => KeyLengthMethod::General,
        }
    }
}

#[derive(Debug, Args)]
pub struct KeylenArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Channel bit error rate.
    #[arg(long)]
    pub qber: f64,
    #[arg(long, default_value_t = 1.0)]
    pub detection: f64,
    #[arg(long, value_enum, default_value = "corollary")]
    pub method: MethodArg,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    /// Maximize the expected rate at fixed n.
    ExpectedRate,
    /// Maximize ell/N at fixed sifted size N = n + k.
    SiftedRatio,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Channel bit error rate.
    #[arg(long)]
    pub qber: f64,
    /// Security per key bit: eps_cor + eps_sec <= rate * ell.
    #[arg(long, conflicts_with = "eps_total")]
    pub security_rate: Option<f64>,
    /// Fixed total security budget eps_cor + eps_sec.
    #[arg(long)]
    pub eps_total: Option<f64>,
    #[arg(long, default_value_t = 1.1)]
    pub xi: f64,
    #[arg(long, value_enum, default_value = "expected-rate")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    #[arg(long, default_value_t = 1.0)]
    pub detection: f64,
    #[arg(long, value_enum, default_value = "corollary")]
    pub method: MethodArg,
    /// Pin the sample size k.
    #[arg(long)]
    pub k: Option<u64>,
    /// Pin the tolerated error rate.
    #[arg(long)]
    pub qtol: Option<f64>,
    /// Pin eps_cor / (eps_cor + eps_sec).
    #[arg(long)]
    pub cor_fraction: Option<f64>,
    /// Multiply the density of every search grid.
    #[arg(long, default_value_t = 1)]
    pub grid_scale: usize,
    /// Skip the local refinement pass.
    #[arg(long)]
    pub no_refine: bool,
}

const DEFAULT_SECURITY_RATE: f64 = 1e-14;

impl ProblemArgs {
    fn problem(&self, size: u64) -> Result<OptimizationProblem, CliError> {
        if self.grid_scale == 0 {
            return Err(CliError::Usage("--grid-scale must be at least 1".into()));
        }
        let target = match (self.security_rate, self.eps_total) {
            (_, Some(eps)) => SecurityTarget::Total(eps),
            (Some(rate), None) => SecurityTarget::PerKeyBit(rate),
            (None, None) => SecurityTarget::PerKeyBit(DEFAULT_SECURITY_RATE),
        };
        let mut grid = GridSpec::default().refined(self.grid_scale);
        grid.refine = !self.no_refine;
        let prob = OptimizationProblem {
            size,
            qber: self.qber,
            target,
            xi: self.xi,
            mode: match self.mode {
                ModeArg::ExpectedRate => Objective::ExpectedRate,
                ModeArg::SiftedRatio => Objective::SiftedRatio,
            },
            q: self.q,
            detection_prob: self.detection,
            method: self.method.into(),
            grid,
            pins: Pins { k: self.k, q_tol: self.qtol, cor_fraction: self.cor_fraction },
        };
        prob.validate()?;
        Ok(prob)
    }
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Block size n, or sifted size N in sifted-ratio mode.
    #[arg(long)]
    pub n: u64,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Comma-separated sizes; overrides --from/--to/--points.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<f64>,
    #[arg(long, default_value_t = 1e3)]
    pub from: f64,
    #[arg(long, default_value_t = 1e8)]
    pub to: f64,
    /// Number of log-spaced sizes between --from and --to.
    #[arg(long, default_value_t = 11)]
    pub points: usize,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub output: Output,
}

impl CurveArgs {
    fn sizes(&self) -> Result<Vec<u64>, CliError> {
        let raw: Vec<f64> = if !self.sizes.is_empty() {
            self.sizes.clone()
        } else {
            if self.points < 2 || !(self.from > 0.0 && self.to > self.from) {
                return Err(CliError::Usage("need --points >= 2 and 0 < --from < --to".into()));
            }
            let (a, b) = (self.from.ln(), self.to.ln());
            let step = (b - a) / (self.points - 1) as f64;
            (0..self.points).map(|i| (a + step * i as f64).exp()).collect()
        };
        let mut sizes = raw
            .into_iter()
            .map(|s| {
                if s.is_finite() && s >= 1.0 {
                    Ok(s.round() as u64)
                } else {
                    Err(CliError::Usage(format!("bad size {s}")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        sizes.sort_unstable();
        sizes.dedup();
        Ok(sizes)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EcModeArg {
    Oracle,
    Uncorrected,
    FlipOne,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PeScopeArg {
    FirstK,
    AllZ,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Channel bit error rate.
    #[arg(long)]
    pub qber: f64,
    #[arg(long, default_value_t = 1.0)]
    pub detection: f64,
    /// Final key length; defaults to the closed-form bound.
    #[arg(long)]
    pub ell: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    pub runs: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "oracle")]
    pub ec_mode: EcModeArg,
    #[arg(long, value_enum, default_value = "first-k")]
    pub pe_scope: PeScopeArg,
    /// Write per-run transcripts (key=value lines) to this path.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SerflingArgs {
    /// Key-set size.
    #[arg(long)]
    pub n: u64,
    /// Sample size.
    #[arg(long)]
    pub k: u64,
    /// Errors in the whole population of n + k bits.
    #[arg(long)]
    pub errors: u64,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
    pub delta: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
pub enum SourcePreset {
    Bb84,
    Identical,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
pub enum SourceKind {
    Qubit,
    Povm,
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    #[arg(long, value_enum, default_value = "custom")]
    pub source: SourcePreset,
    /// How --source-x/--source-z are read for a custom source.
    #[arg(long, value_enum, default_value = "povm")]
    pub source_kind: SourceKind,
    /// X-basis states or POVM elements: entries "re,im" row-major,
    /// separated by spaces; elements separated by '|'.
    #[arg(long)]
    pub source_x: Option<String>,
    #[arg(long)]
    pub source_z: Option<String>,
    #[command(flatten)]
    pub output: Output,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Diagnostics go to `err`.
pub fn run<W: Write, E: Write>(argv: Vec<String>, out: &mut W, err: &mut E) -> i32 {
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(err, "error: {e}");
        return e.exit_code();
    }
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("FINITEKEY_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Usage(format!("FINITEKEY_THREADS: bad value {value:?}")))?;
    // a second call in the same process (tests) finds the pool already built
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn emit<W: Write>(table: &Table, output: &Output, out: &mut W) -> Result<(), CliError> {
    match &output.out {
        Some(path) => table.write(BufWriter::new(File::create(path)?)),
        None => table.write(out),
    }
}

fn dispatch<W: Write, E: Write>(cmd: Command, out: &mut W, err: &mut E) -> Result<(), CliError> {
    match cmd {
        Command::Keylen(a) => emit(&keylen(&a)?, &a.output, out),
        Command::Rate(a) => emit(&rate(&a)?, &a.output, out),
        Command::Optimize(a) => emit(&optimize_cmd(&a)?, &a.output, out),
        Command::Curve(a) => emit(&curve(&a)?, &a.output, out),
        Command::Simulate(a) => {
            writeln!(err, "seed={}", a.seed)?;
            emit(&simulate(&a)?, &a.output, out)
        }
        Command::Serfling(a) => {
            writeln!(err, "seed={}", a.seed)?;
            emit(&serfling(&a)?, &a.output, out)
        }
        Command::Quality(a) => emit(&quality(&a)?, &a.output, out),
    }
}

fn keylen(a: &KeylenArgs) -> Result<Table, CliError> {
    let p = a.params.params()?;
    let ell = key_length_corollary(&p)?;
    let (ell_general, split) = key_length_general(&p)?;
    let audit = audit_chain(&p, SecretSplit::fixed(p.eps_sec), ell);
    let mut t = Table::new(KEYLEN_COLUMNS);
    t.push(vec![
        int(p.n),
        int(p.k),
        num(p.q),
        sci(p.q_tol),
        sci(p.eps_sec),
        sci(p.eps_cor),
        num(p.leak_ec),
        int(ell),
        int(ell_general),
        sci(split.eps),
        sci(split.eps_bar),
        num(audit.mu),
        num(audit.hmax_bound),
        num(audit.hmin_after_ucr),
        num(audit.hmin_after_leak),
        sci(audit.delta_bound),
    ]);
    Ok(t)
}

fn rate(a: &RateArgs) -> Result<Table, CliError> {
    let p = a.params.params()?;
    let ch = ChannelModel { qber: a.qber, detection_prob: a.detection };
    // the leak is already folded into p; xi only matters for `auto`
    let r = expected_rate_with(&p, &ch, a.params.xi, a.method.into())?;
    let asym = asymptotic_rate(a.qber);
    let rate_rel = if asym > 0.0 { r.rate / asym } else { 0.0 };
    let mut t = Table::new(RATE_COLUMNS);
    t.push(vec![
        int(p.n),
        int(p.k),
        sci(a.qber),
        sci(p.q_tol),
        sci(p.eps_sec),
        sci(p.eps_cor),
        int(r.ell),
        num(r.m_expected),
        sci(r.eps_rob),
        sci(r.p_z),
        num(r.rate),
        num(rate_rel),
    ]);
    Ok(t)
}

fn optimum_row(r: &OptimumRecord) -> Vec<String> {
    vec![
        int(r.n),
        int(r.k),
        int(r.n + r.k),
        sci(r.qber),
        sci(r.q_tol),
        sci(r.eps_cor),
        sci(r.eps_sec),
        sci(r.eps_total),
        sci(r.security_rate),
        int(r.result.ell),
        num(r.result.m_expected),
        sci(r.result.eps_rob),
        sci(r.result.p_x),
        sci(r.result.p_z),
        num(r.result.leak_ec),
        num(r.rate()),
        num(r.rate_rel),
        num(r.ell_over_n),
        num(r.ell_over_sifted),
    ]
}

fn optimize_cmd(a: &OptimizeArgs) -> Result<Table, CliError> {
    let rec = optimize(&a.problem.problem(a.n)?)?;
    let mut t = Table::new(OPTIMUM_COLUMNS);
    t.push(optimum_row(&rec));
    Ok(t)
}

fn curve(a: &CurveArgs) -> Result<Table, CliError> {
    let sizes = a.sizes()?;
    let base = a.problem.problem(sizes[0])?;
    for &s in &sizes[1..] {
        OptimizationProblem { size: s, ..base }.validate()?;
    }
    let points = rate_curve(&base, &sizes)?;
    let asym = asymptotic_rate(a.problem.qber);
    let headers: Vec<&str> = CURVE_EXTRA_COLUMNS.iter().chain(OPTIMUM_COLUMNS).copied().collect();
    let mut t = Table::new(&headers);
    for pt in &points {
        let mut row = vec![int(pt.size), num(pt.raw), num(pt.monotone), num(asym)];
        row.extend(optimum_row(&pt.record));
        t.push(row);
    }
    Ok(t)
}

fn simulate(a: &SimulateArgs) -> Result<Table, CliError> {
    let p = a.params.params()?;
    let ch = ChannelModel { qber: a.qber, detection_prob: a.detection };
    let opts = SimOptions {
        ell: a.ell,
        ec_mode: match a.ec_mode {
            EcModeArg::Oracle => EcMode::Oracle,
            EcModeArg::Uncorrected => EcMode::Uncorrected,
            EcModeArg::FlipOne => EcMode::FlipOne,
        },
        pe_scope: match a.pe_scope {
            PeScopeArg::FirstK => PeScope::FirstK,
            PeScopeArg::AllZ => PeScope::AllZ,
        },
    };
    let summary = batch_run(&p, &ch, &opts, a.runs, a.seed)?;
    if let Some(path) = &a.dump {
        let mut w = BufWriter::new(File::create(path)?);
        for r in 0..a.runs {
            run_protocol_stream(&p, &ch, &opts, a.seed, r)?.dump(&mut w)?;
        }
        w.flush()?;
    }
    let mut t = Table::new(SIMULATE_COLUMNS);
    t.push(vec![
        int(summary.runs),
        int(summary.seed),
        sci(summary.abort_pe_rate()),
        sci(summary.abort_ec_rate()),
        int(summary.corr_fail),
        sci(summary.mean_lambda),
        num(summary.m_empirical),
    ]);
    Ok(t)
}

fn serfling(a: &SerflingArgs) -> Result<Table, CliError> {
    let inst = SamplingInstance::new(a.n, a.k, a.errors)?;
    if a.delta.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(CliError::Usage("--delta values must be positive".into()));
    }
    let mut t = Table::new(SERFLING_COLUMNS);
    for &delta in &a.delta {
        let exact = match hypergeometric_exceed_exact(&inst, delta) {
            Ok(v) => sci(v),
            Err(finitekey::Error::Size(_)) => String::new(),
            Err(e) => return Err(e.into()),
        };
        let mc = sample_without_replacement_mc(&inst, delta, a.trials, a.seed)?;
        t.push(vec![
            int(inst.n_total),
            int(inst.n_key),
            int(inst.k_sample),
            int(inst.errors_total),
            sci(delta),
            exact,
            sci(mc),
            sci(serfling_bound(&inst, delta)),
        ]);
    }
    Ok(t)
}

fn quality(a: &QualityArgs) -> Result<Table, CliError> {
    let custom = a.source_x.is_some() || a.source_z.is_some();
    if a.source != SourcePreset::Custom && custom {
        return Err(CliError::Usage("--source-x/--source-z need --source custom".into()));
    }
    let (label, qual) = match a.source {
        SourcePreset::Bb84 => ("bb84", quality_from_povms(&PovmSource::bb84())?),
        SourcePreset::Identical => {
            let bb84 = QubitSource::bb84();
            let same = QubitSource::new(bb84.states_x.clone(), bb84.states_x)?;
            ("identical", quality_from_qubits(&same)?)
        }
        SourcePreset::Custom => {
            let (Some(x), Some(z)) = (&a.source_x, &a.source_z) else {
                return Err(CliError::Usage(
                    "custom source needs --source-x and --source-z (or --source bb84|identical)".into(),
                ));
            };
            match a.source_kind {
                SourceKind::Qubit => {
                    let src = QubitSource::new(source_spec::qubits(x)?, source_spec::qubits(z)?)?;
                    ("custom-qubit", quality_from_qubits(&src)?)
                }
                SourceKind::Povm => {
                    let src = PovmSource::new(source_spec::matrices(x)?, source_spec::matrices(z)?)?;
                    ("custom-povm", quality_from_povms(&src)?)
                }
            }
        }
    };
    let mut t = Table::new(QUALITY_COLUMNS);
    t.push(vec![label.to_string(), num(qual.q), sci(qual.c)]);
    Ok(t)
}
