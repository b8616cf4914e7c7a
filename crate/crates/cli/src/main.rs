//! Command-line front end for the charged-polymer laboratory.
//!
//! Every result is written as JSON lines with a full config echo, so a
//! run can be reproduced bit-exactly from its own output; `--csv` emits
//! plot-ready tables instead. Monte Carlo commands require an explicit
//! `--seed` — there is no wall-clock default.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use polymerlab::bridge::{
    ballot_check, bridge_probability, bridge_silt_tail, conditional_q_bridge, BridgeMethod,
};
use polymerlab::charge::{ChargeLaw, FiniteLattice, Rational, TiltParams};
use polymerlab::ldp::{
    expected_q, green_constants, q_distribution, range_ld_probe, rate_function, saw_counts,
    wsaw_free_energy, QMethod, RateMethod,
};
use polymerlab::partition::{
    beta_c_asymptote, critical_scan, free_energy_ladder, geometric_ladder, z_double_enum, z_exact,
    z_mc, PartitionEstimate, Regime, ZPair,
};
use polymerlab::single_site::{
    check_density_envelope, check_gdb_smallbeta, check_small_delta_regimes, check_superadditivity,
    check_symmetric_unit_bound, eps_delta_quartic, fit_large_delta_envelope, GKind,
    SingleSiteTable,
};
use polymerlab::Error;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "polymerlab",
    version,
    about = "exact and Monte Carlo laboratory for the annealed charged-polymer model on Z^d"
)]
struct Cli {
    /// output path for JSON lines (default: stdout). A relative path is
    /// resolved against $POLYMERLAB_OUT when that is set.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// emit plot-ready CSV instead of JSON lines
    #[arg(long, global = true, default_value_t = false)]
    csv: bool,

    /// key-value config file mirroring flags (`samples 100000` per
    /// line); explicit command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Serialize, Clone)]
struct LawArgs {
    /// charge law: gaussian | rademacher | three-point:N | @file.json
    /// (custom lattice law as exact rationals)
    #[arg(long, default_value = "gaussian")]
    law: String,
}

impl LawArgs {
    fn build(&self) -> Result<ChargeLaw, Error> {
        parse_law(&self.law)
    }
}

#[derive(Args, Debug, Serialize, Clone)]
struct McArgs {
    /// Monte Carlo sample count per estimate (integer or 1e5 form)
    #[arg(long, default_value = "100000", value_parser = parse_count)]
    samples: u64,
    /// RNG seed; required for every Monte Carlo path, no default
    #[arg(long)]
    seed: Option<u64>,
    /// worker shards; results are reproducible for fixed (seed, shards)
    #[arg(long, default_value_t = 8)]
    shards: u32,
}

impl McArgs {
    fn seed(&self) -> Result<u64, Error> {
        self.seed.ok_or_else(|| {
            Error::InvalidInput("Monte Carlo paths require an explicit --seed".into())
        })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum PartitionMethodArg {
    Exact,
    DoubleEnum,
    Mc,
}

#[derive(Subcommand, Debug, Serialize)]
enum Cmd {
    /// Tabulate log g*(ℓ) (or log g) for ℓ = 0..lmax at fixed (δ, β)
    SingleSite {
        #[command(flatten)]
        law: LawArgs,
        /// charge bias δ >= 0
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        /// inverse temperature β >= 0
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// table size: entries for ℓ = 0..=lmax
        #[arg(long, default_value_t = 64)]
        lmax: u32,
        /// tabulate the tilted function g instead of g*
        #[arg(long, default_value_t = false)]
        tilted: bool,
    },
    /// Z_n and Z*_n by exact enumeration, double enumeration, or MC
    Partition {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// lattice dimension, 1..=5
        #[arg(long, default_value_t = 2)]
        d: u32,
        /// polymer length (number of monomers)
        #[arg(long)]
        n: u32,
        #[arg(long, value_enum, default_value_t = PartitionMethodArg::Exact)]
        method: PartitionMethodArg,
        /// enumeration budget in paths (exact/double-enum methods)
        #[arg(long, default_value = "4294967296", value_parser = parse_count)]
        budget: u64,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Free-energy ladder: a_n = (1/n) log Z*_n with extrapolated F*, F
    FreeEnergy {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 2)]
        d: u32,
        /// geometric ladder `lo:hi` (doubling), e.g. 64:1024
        #[arg(long, default_value = "64:1024")]
        ladder: String,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Bisect the critical curve on the sign of the extrapolated F*
    CriticalCurve {
        #[command(flatten)]
        law: LawArgs,
        /// δ grid `lo:hi:step`, e.g. 0.25:1:0.25
        #[arg(long)]
        delta_grid: String,
        #[arg(long, default_value_t = 2)]
        d: u32,
        #[arg(long, default_value = "64:1024")]
        ladder: String,
        /// bracket width target in β
        #[arg(long, default_value_t = 1e-3)]
        beta_tol: f64,
        #[arg(long, default_value_t = 12)]
        max_probes: u32,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Self-intersection local time: moments, distributions, constants
    Silt {
        #[command(subcommand)]
        cmd: SiltCmd,
    },
    /// Weakly self-avoiding walk free energy with two-sided bounds
    Wsaw {
        #[arg(long, default_value_t = 2)]
        d: u32,
        /// penalty strength u >= 0
        #[arg(long)]
        u: f64,
        #[arg(long, default_value = "64:4096")]
        ladder: String,
        /// enumeration budget: rungs below it are computed exactly
        #[arg(long, default_value = "4194304", value_parser = parse_count)]
        budget: u64,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Downward rate curve I(t) of Q_n with bridge companion bounds
    RateFunction {
        #[arg(long, default_value_t = 2)]
        d: u32,
        /// t grid `lo:hi:step`, t >= 1
        #[arg(long, default_value = "1:3:0.25")]
        t_grid: String,
        /// comma-separated n values, e.g. 8,12
        #[arg(long, default_value = "8,12")]
        ns: String,
        /// exact enumeration instead of MC
        #[arg(long, default_value_t = false)]
        exact: bool,
        #[arg(long, default_value = "4294967296", value_parser = parse_count)]
        budget: u64,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Exact self-avoiding-walk counts c_1..c_n
    SawCount {
        #[arg(long, default_value_t = 2)]
        d: u32,
        #[arg(long, default_value_t = 14)]
        nmax: u32,
        #[arg(long, default_value = "4294967296", value_parser = parse_count)]
        budget: u64,
    },
    /// Bridge estimators: probability series, ballot table, conditional
    /// self-intersections
    Bridge {
        #[command(subcommand)]
        cmd: BridgeCmd,
    },
    /// Upward large deviations of the (trimmed) range
    RangeProbe {
        #[arg(long, default_value_t = 2)]
        d: u32,
        #[arg(long)]
        n: u32,
        /// s grid `lo:hi:step` with s in [0, 1]
        #[arg(long, default_value = "0.1:0.9:0.1")]
        s_grid: String,
        /// local-time trim threshold A (enables the trimmed probe)
        #[arg(long)]
        trim_a: Option<u32>,
        /// trimmed-time budget θ (with --trim-a)
        #[arg(long)]
        theta: Option<f64>,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Named bound-check suites producing pass/fail reports
    Check {
        #[command(subcommand)]
        cmd: CheckCmd,
    },
}

#[derive(Subcommand, Debug, Serialize)]
enum SiltCmd {
    /// Exact E[Q_n] from the return-probability table
    ExpectedQ {
        #[arg(long, default_value_t = 2)]
        d: u32,
        #[arg(long)]
        n: u32,
    },
    /// Green function G_d and λ_d (λ_2 = 2/π exactly)
    Green {
        #[arg(long)]
        d: u32,
        /// tail-completion error target
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
    /// Distribution and tails of Q_n
    Distribution {
        #[arg(long, default_value_t = 2)]
        d: u32,
        #[arg(long)]
        n: u32,
        /// exact | mc | tilted-mc
        #[arg(long, default_value = "mc")]
        method: String,
        /// fixed tilt for tilted-mc (default: mean-matched per t)
        #[arg(long)]
        gamma: Option<f64>,
        /// t grid `lo:hi:step`
        #[arg(long, default_value = "1:3:0.5")]
        t_grid: String,
        #[arg(long, default_value = "4294967296", value_parser = parse_count)]
        budget: u64,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Asymptotic critical-curve predictions for a law
    BetaC {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long)]
        delta: f64,
        /// small | large
        #[arg(long)]
        regime: String,
        #[arg(long, default_value_t = 2)]
        d: u32,
    },
}

#[derive(Subcommand, Debug, Serialize)]
enum BridgeCmd {
    /// n P(B_n) series, exact (d = 1 or small n) or MC
    Probability {
        #[arg(long, default_value_t = 2)]
        d: u32,
        /// geometric ladder `lo:hi`
        #[arg(long, default_value = "16:2048")]
        ladder: String,
        #[arg(long, default_value_t = false)]
        exact: bool,
        #[arg(long, default_value = "4294967296", value_parser = parse_count)]
        budget: u64,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Integer-exact ballot identity table for d = 1
    Ballot {
        #[arg(long, default_value_t = 20)]
        nmax: u32,
    },
    /// Ê[Q_m | B_m]/m series by plain rejection
    ConditionalQ {
        #[arg(long, default_value_t = 3)]
        d: u32,
        /// geometric ladder `lo:hi` of m values
        #[arg(long, default_value = "64:512")]
        ladder: String,
        /// proposals per rung (accepted count is whatever bridges give)
        #[arg(long, default_value = "1000000", value_parser = parse_count)]
        proposals: u64,
        /// reference λ_d for the exceedance flag
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        #[command(flatten)]
        mc: McArgs,
    },
    /// d = 2 conditional SILT tail `P(Q_m <= (1+ε) λ_2 m log m | B_m)`
    SiltTail {
        #[arg(long, default_value = "64:512")]
        ladder: String,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
        #[arg(long, default_value = "1000000", value_parser = parse_count)]
        proposals: u64,
        #[command(flatten)]
        mc: McArgs,
    },
}

#[derive(Subcommand, Debug, Serialize)]
enum CheckCmd {
    /// g*_{δ, δ²/2}(ℓ) <= 1 for symmetric laws
    SymmetricUnitBound {
        #[command(flatten)]
        law: LawArgs,
        /// δ grid `lo:hi:step`
        #[arg(long, default_value = "0.05:3:0.05")]
        delta_grid: String,
        #[arg(long, default_value_t = 1000)]
        lmax: u32,
    },
    /// two-regime small-δ sandwich for g* along β(δ)
    SmallDeltaRegimes {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
        /// ε_δ; default is the quartic preset ¼(1-η)δ⁴ - k1 δ⁴
        #[arg(long)]
        eps_delta: Option<f64>,
        /// regime boundary for δ²ℓ
        #[arg(long, default_value_t = 0.3)]
        a: f64,
        #[arg(long, default_value_t = 2000)]
        lmax: u32,
    },
    /// super-additivity margin of log g* over all pairs m+n <= lmax
    Superadditivity {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 200)]
        lmax: u32,
    },
    /// small-β bounds on the tilted single-site function g
    GdbSmallbeta {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, default_value_t = 1e-3)]
        beta: f64,
        #[arg(long, default_value_t = 0.3)]
        eta: f64,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 500)]
        lmax: u32,
    },
    /// density envelope c0 ℓ^{-1/2} <= f_ℓ <= c1 ℓ^{-1/2}
    DensityEnvelope {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long, default_value_t = 64)]
        lmax: u32,
        #[arg(long, default_value_t = 1.0)]
        eps0: f64,
    },
    /// large-δ envelope of g* at β = δ²/(4 log δ), Gaussian law
    LargeDeltaEnvelope {
        #[arg(long, default_value_t = 20.0)]
        delta: f64,
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
        #[arg(long, default_value_t = 1000)]
        lmax: u32,
    },
}

fn parse_rational(v: &Value) -> Result<Rational, Error> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| Error::InvalidInput("rational must be a [num, den] pair".into()))?;
    let num = arr[0]
        .as_i64()
        .ok_or_else(|| Error::InvalidInput("rational numerator must be an integer".into()))?;
    let den = arr[1]
        .as_i64()
        .ok_or_else(|| Error::InvalidInput("rational denominator must be an integer".into()))?;
    Rational::new(num, den)
}

fn parse_law(spec: &str) -> Result<ChargeLaw, Error> {
    let s = spec.trim();
    if let Some(path) = s.strip_prefix('@') {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read law file {path}: {e}")))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("law file {path}: {e}")))?;
        let kind = v["kind"].as_str().unwrap_or("finite_lattice");
        return match kind {
            "gaussian" => Ok(ChargeLaw::StandardGaussian),
            "rademacher" => Ok(ChargeLaw::Rademacher),
            "three_point" => ChargeLaw::three_point(
                v["N"]
                    .as_u64()
                    .ok_or_else(|| Error::InvalidInput("three_point needs integer N".into()))?
                    as u32,
            ),
            "finite_lattice" => {
                let values = v["values"]
                    .as_array()
                    .ok_or_else(|| Error::InvalidInput("finite_lattice needs values".into()))?
                    .iter()
                    .map(parse_rational)
                    .collect::<Result<Vec<_>, _>>()?;
                let probs = v["probs"]
                    .as_array()
                    .ok_or_else(|| Error::InvalidInput("finite_lattice needs probs".into()))?
                    .iter()
                    .map(parse_rational)
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(ChargeLaw::FiniteLattice(FiniteLattice::new(values, probs)?))
            }
            other => Err(Error::InvalidInput(format!("unknown law kind `{other}`"))),
        };
    }
    match s.to_ascii_lowercase().as_str() {
        "gaussian" | "standard-gaussian" => Ok(ChargeLaw::StandardGaussian),
        "rademacher" => Ok(ChargeLaw::Rademacher),
        other => {
            if let Some(n) = other
                .strip_prefix("three-point:")
                .or_else(|| other.strip_prefix("three_point:"))
            {
                let n: u32 = n
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad three-point N `{n}`")))?;
                ChargeLaw::three_point(n)
            } else {
                Err(Error::InvalidInput(format!(
                    "unknown law `{s}` (gaussian | rademacher | three-point:N | @file.json)"
                )))
            }
        }
    }
}

/// `lo:hi` geometric ladder.
fn parse_ladder(s: &str) -> Result<Vec<u32>, Error> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "ladder `{s}` must be lo:hi (geometric doubling)"
        )));
    }
    let lo: u32 = parts[0]
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad ladder start `{}`", parts[0])))?;
    let hi: u32 = parts[1]
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad ladder end `{}`", parts[1])))?;
    geometric_ladder(lo, hi)
}

/// `lo:hi:step` arithmetic grid.
fn parse_grid(s: &str) -> Result<Vec<f64>, Error> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidInput(format!(
            "grid `{s}` must be lo:hi:step"
        )));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad grid value `{}`", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad grid value `{}`", parts[1])))?;
    let step: f64 = parts[2]
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad grid step `{}`", parts[2])))?;
    if step <= 0.0 || hi < lo {
        return Err(Error::InvalidInput(format!("degenerate grid `{s}`")));
    }
    let mut out = Vec::new();
    let mut x = lo;
    while x <= hi + 1e-12 * step {
        out.push(x);
        x += step;
    }
    Ok(out)
}

/// Counts accept plain integers or scientific notation (`1e5`).
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = s.parse().map_err(|_| format!("`{s}` is not a count"))?;
    if f >= 0.0 && f.fract() == 0.0 && f <= 1.8e19 {
        Ok(f as u64)
    } else {
        Err(format!("`{s}` is not a non-negative integer count"))
    }
}

fn parse_u32_list(s: &str) -> Result<Vec<u32>, Error> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad integer `{p}`")))
        })
        .collect()
}

struct Output {
    path: Option<PathBuf>,
    buffer: String,
}

impl Output {
    fn new(out: &Option<PathBuf>) -> Self {
        let path = out.as_ref().map(|p| {
            if p.is_relative() {
                if let Ok(dir) = std::env::var("POLYMERLAB_OUT") {
                    return PathBuf::from(dir).join(p);
                }
            }
            p.clone()
        });
        Output {
            path,
            buffer: String::new(),
        }
    }

    fn line(&mut self, s: &str) {
        self.buffer.push_str(s);
        self.buffer.push('\n');
    }

    fn record(&mut self, value: &Value) {
        self.line(&serde_json::to_string(value).expect("serializable record"));
    }

    fn finish(self) -> Result<(), Error> {
        match self.path {
            None => {
                print!("{}", self.buffer);
                std::io::stdout().flush().ok();
                Ok(())
            }
            Some(p) => fs::write(&p, self.buffer)
                .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", p.display()))),
        }
    }
}

fn partition_record(
    which: &str,
    law: &ChargeLaw,
    tilt: TiltParams,
    est: &PartitionEstimate,
    config: &Value,
) -> Value {
    json!({
        "op": "partition",
        "which": which,
        "law": law.id(),
        "delta": tilt.delta,
        "beta": tilt.beta,
        "d": est.d,
        "n": est.n,
        "log_value": est.log_value,
        "stderr": est.std_error,
        "method": est.method,
        "seed": est.seed,
        "shards": est.shards,
        "ess": est.ess,
        "low_ess": est.low_ess,
        "version": VERSION,
        "config": config,
    })
}

fn emit_pair(
    out: &mut Output,
    law: &ChargeLaw,
    tilt: TiltParams,
    pair: &ZPair,
    config: &Value,
    csv: bool,
) {
    if csv {
        out.line("which,law,delta,beta,d,n,log_value,stderr,ess");
        for (which, est) in [("z", &pair.z), ("z_star", &pair.z_star)] {
            out.line(&format!(
                "{which},{},{},{},{},{},{},{},{}",
                law.id(),
                tilt.delta,
                tilt.beta,
                est.d,
                est.n,
                est.log_value,
                est.std_error,
                est.ess.unwrap_or(f64::NAN)
            ));
        }
    } else {
        out.record(&partition_record("z", law, tilt, &pair.z, config));
        out.record(&partition_record("z_star", law, tilt, &pair.z_star, config));
    }
}

fn wrap(op: &str, config: &Value, result: Value) -> Value {
    json!({ "op": op, "version": VERSION, "config": config, "result": result })
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut out = Output::new(&cli.out);
    let csv = cli.csv;
    let config = serde_json::to_value(&cli.cmd).unwrap_or(Value::Null);
    match cli.cmd {
        Cmd::SingleSite {
            ref law,
            delta,
            beta,
            lmax,
            tilted,
        } => {
            let law = law.build()?;
            let tilt = TiltParams::new(delta, beta)?;
            let kind = if tilted { GKind::Tilted } else { GKind::Star };
            let table = SingleSiteTable::build(&law, tilt, lmax, kind)?;
            if csv {
                out.line("ell,log_g_star,mode,err_bound");
                for e in table.entries() {
                    out.line(&format!(
                        "{},{},{},{}",
                        e.ell, e.log_value, e.mode, e.err_bound
                    ));
                }
            } else {
                out.record(&wrap(
                    "single-site",
                    &config,
                    serde_json::to_value(&table).unwrap(),
                ));
            }
        }
        Cmd::Partition {
            ref law,
            delta,
            beta,
            d,
            n,
            method,
            budget,
            ref mc,
        } => {
            let law = law.build()?;
            let tilt = TiltParams::new(delta, beta)?;
            let pair = match method {
                PartitionMethodArg::Exact => z_exact(&law, tilt, d, n, budget)?,
                PartitionMethodArg::DoubleEnum => z_double_enum(&law, tilt, d, n, budget)?,
                PartitionMethodArg::Mc => {
                    z_mc(&law, tilt, d, n, mc.samples, mc.seed()?, mc.shards)?
                }
            };
            let low_ess = pair.z_star.low_ess;
            let ess = pair.z_star.ess;
            emit_pair(&mut out, &law, tilt, &pair, &config, csv);
            if low_ess {
                out.finish()?;
                return Err(Error::EssCollapse {
                    ess: ess.unwrap_or(0.0),
                    samples: mc.samples,
                });
            }
        }
        Cmd::FreeEnergy {
            ref law,
            delta,
            beta,
            d,
            ref ladder,
            ref mc,
        } => {
            let law = law.build()?;
            let tilt = TiltParams::new(delta, beta)?;
            let ladder = parse_ladder(ladder)?;
            let res =
                free_energy_ladder(&law, tilt, d, &ladder, mc.samples, mc.seed()?, mc.shards)?;
            if csv {
                out.line("n,a_n,stderr,ess,excluded,confinement,confinement_stderr");
                for r in &res.rungs {
                    let (c, cse) = r.confinement.unwrap_or((f64::NAN, f64::NAN));
                    out.line(&format!(
                        "{},{},{},{},{},{c},{cse}",
                        r.n, r.a_n, r.std_error, r.ess, r.excluded
                    ));
                }
            } else {
                out.record(&wrap(
                    "free-energy",
                    &config,
                    serde_json::to_value(&res).unwrap(),
                ));
            }
        }
        Cmd::CriticalCurve {
            ref law,
            ref delta_grid,
            d,
            ref ladder,
            beta_tol,
            max_probes,
            ref mc,
        } => {
            let law = law.build()?;
            let deltas = parse_grid(delta_grid)?;
            let ladder = parse_ladder(ladder)?;
            let scan = critical_scan(
                &law,
                &deltas,
                d,
                &ladder,
                mc.samples,
                mc.seed()?,
                mc.shards,
                beta_tol,
                max_probes,
            )?;
            let unresolved = scan.entries.iter().any(|e| !e.resolved);
            if csv {
                out.line("delta,beta_lo,beta_hi,beta_mid,resolved,probes");
                for e in &scan.entries {
                    out.line(&format!(
                        "{},{},{},{},{},{}",
                        e.delta,
                        e.beta_lo,
                        e.beta_hi,
                        e.beta_mid,
                        e.resolved,
                        e.probes.len()
                    ));
                }
            } else {
                out.record(&wrap(
                    "critical-curve",
                    &config,
                    serde_json::to_value(&scan).unwrap(),
                ));
            }
            if unresolved {
                out.finish()?;
                return Err(Error::EssCollapse {
                    ess: 0.0,
                    samples: mc.samples,
                });
            }
        }
        Cmd::Silt { ref cmd } => match cmd {
            SiltCmd::ExpectedQ { d, n } => {
                let e = expected_q(*d, *n)?;
                out.record(&wrap(
                    "silt expected-q",
                    &config,
                    json!({ "d": e.d, "n": e.n, "value": e.value, "ratio": e.ratio }),
                ));
            }
            SiltCmd::Green { d, eps } => {
                let g = green_constants(*d, *eps)?;
                out.record(&wrap(
                    "silt green",
                    &config,
                    serde_json::to_value(&g).unwrap(),
                ));
            }
            SiltCmd::Distribution {
                d,
                n,
                method,
                gamma,
                t_grid,
                budget,
                mc,
            } => {
                let ts = parse_grid(t_grid)?;
                let m = match method.as_str() {
                    "exact" => QMethod::ExactEnum,
                    "mc" => QMethod::Mc {
                        samples: mc.samples,
                    },
                    "tilted-mc" => QMethod::TiltedMc {
                        gamma: *gamma,
                        samples: mc.samples,
                    },
                    other => {
                        return Err(Error::InvalidInput(format!(
                            "unknown method `{other}` (exact | mc | tilted-mc)"
                        )))
                    }
                };
                let seed = if matches!(m, QMethod::ExactEnum) {
                    0
                } else {
                    mc.seed()?
                };
                let dist = q_distribution(*d, *n, &m, &ts, seed, mc.shards, *budget)?;
                if csv {
                    if let Some(h) = &dist.histogram {
                        out.line("q,count");
                        for (q, c) in h {
                            out.line(&format!("{q},{c}"));
                        }
                    } else {
                        out.line("t,p_hat,stderr,exponent,chernoff,gamma,ess");
                        for p in &dist.tails {
                            out.line(&format!(
                                "{},{},{},{},{},{},{}",
                                p.t,
                                p.p_hat,
                                p.std_error,
                                p.exponent.unwrap_or(f64::NAN),
                                p.chernoff_exponent.unwrap_or(f64::NAN),
                                p.gamma.unwrap_or(f64::NAN),
                                p.ess.unwrap_or(f64::NAN)
                            ));
                        }
                    }
                } else {
                    out.record(&wrap(
                        "silt distribution",
                        &config,
                        serde_json::to_value(&dist).unwrap(),
                    ));
                }
            }
            SiltCmd::BetaC {
                law,
                delta,
                regime,
                d,
            } => {
                let law = law.build()?;
                let regime = match regime.as_str() {
                    "small" => Regime::Small,
                    "large" => Regime::Large,
                    other => {
                        return Err(Error::InvalidInput(format!(
                            "unknown regime `{other}` (small | large)"
                        )))
                    }
                };
                let lambda = match (regime, *d) {
                    (Regime::Small, dd) if dd >= 3 => Some(green_constants(dd, 1e-4)?.lambda_d),
                    _ => None,
                };
                let pred = beta_c_asymptote(&law, *delta, regime, *d, lambda)?;
                out.record(&wrap(
                    "silt beta-c",
                    &config,
                    serde_json::to_value(&pred).unwrap(),
                ));
            }
        },
        Cmd::Wsaw {
            d,
            u,
            ref ladder,
            budget,
            ref mc,
        } => {
            let ladder_v = parse_ladder(ladder)?;
            let res = wsaw_free_energy(d, u, &ladder_v, mc.samples, mc.seed()?, mc.shards, budget)?;
            if csv {
                out.line("n,a_n,stderr,exact,bridge_upper,bridge_stderr");
                for r in &res.rungs {
                    out.line(&format!(
                        "{},{},{},{},{},{}",
                        r.n,
                        r.a_n,
                        r.std_error,
                        r.exact,
                        r.bridge_upper.unwrap_or(f64::NAN),
                        r.bridge_std_error
                    ));
                }
            } else {
                out.record(&wrap("wsaw", &config, serde_json::to_value(&res).unwrap()));
            }
        }
        Cmd::RateFunction {
            d,
            ref t_grid,
            ref ns,
            exact,
            budget,
            ref mc,
        } => {
            let ts = parse_grid(t_grid)?;
            let ns = parse_u32_list(ns)?;
            let (method, seed) = if exact {
                (RateMethod::Exact, 0)
            } else {
                (
                    RateMethod::Mc {
                        samples: mc.samples,
                    },
                    mc.seed()?,
                )
            };
            let curve = rate_function(d, &ts, &ns, &method, seed, mc.shards, budget)?;
            if csv {
                out.line("t,n,estimate,stderr,lower_bound_only,bridge_upper,exact");
                for p in &curve.points {
                    out.line(&format!(
                        "{},{},{},{},{},{},{}",
                        p.t,
                        p.n,
                        p.estimate.unwrap_or(f64::NAN),
                        p.std_error,
                        p.lower_bound_only.unwrap_or(f64::NAN),
                        p.bridge_upper.unwrap_or(f64::NAN),
                        p.exact
                    ));
                }
            } else {
                out.record(&wrap(
                    "rate-function",
                    &config,
                    serde_json::to_value(&curve).unwrap(),
                ));
            }
        }
        Cmd::SawCount { d, nmax, budget } => {
            let c = saw_counts(d, nmax, budget)?;
            if csv {
                out.line("n,c_n");
                for (i, v) in c.iter().enumerate() {
                    out.line(&format!("{},{v}", i + 1));
                }
            } else {
                out.record(&wrap("saw-count", &config, json!({ "d": d, "counts": c })));
            }
        }
        Cmd::Bridge { ref cmd } => match cmd {
            BridgeCmd::Probability {
                d,
                ladder,
                exact,
                budget,
                mc,
            } => {
                let ns = parse_ladder(ladder)?;
                let (method, seed) = if *exact {
                    (BridgeMethod::Exact, 0)
                } else {
                    (
                        BridgeMethod::Mc {
                            samples: mc.samples,
                        },
                        mc.seed()?,
                    )
                };
                let series = bridge_probability(*d, &ns, method, seed, mc.shards, *budget)?;
                if csv {
                    out.line("n,p_hat,stderr,n_times_p,exact");
                    for r in &series.rungs {
                        out.line(&format!(
                            "{},{},{},{},{}",
                            r.n, r.p_hat, r.std_error, r.n_times_p, r.exact
                        ));
                    }
                } else {
                    out.record(&wrap(
                        "bridge probability",
                        &config,
                        serde_json::to_value(&series).unwrap(),
                    ));
                }
            }
            BridgeCmd::Ballot { nmax } => {
                let rep = ballot_check(*nmax)?;
                out.record(&wrap(
                    "bridge ballot",
                    &config,
                    serde_json::to_value(&rep).unwrap(),
                ));
            }
            BridgeCmd::ConditionalQ {
                d,
                ladder,
                proposals,
                lambda,
                tol,
                mc,
            } => {
                let ms = parse_ladder(ladder)?;
                let series = conditional_q_bridge(
                    *d,
                    &ms,
                    *proposals,
                    mc.seed()?,
                    mc.shards,
                    *lambda,
                    *tol,
                )?;
                out.record(&wrap(
                    "bridge conditional-q",
                    &config,
                    serde_json::to_value(&series).unwrap(),
                ));
            }
            BridgeCmd::SiltTail {
                ladder,
                eps,
                proposals,
                mc,
            } => {
                let ms = parse_ladder(ladder)?;
                let series = bridge_silt_tail(2, &ms, *eps, *proposals, mc.seed()?, mc.shards)?;
                out.record(&wrap(
                    "bridge silt-tail",
                    &config,
                    serde_json::to_value(&series).unwrap(),
                ));
            }
        },
        Cmd::RangeProbe {
            d,
            n,
            ref s_grid,
            trim_a,
            theta,
            ref mc,
        } => {
            let ss = parse_grid(s_grid)?;
            let trim = match (trim_a, theta) {
                (Some(a), Some(th)) => Some((a, th)),
                (None, None) => None,
                _ => {
                    return Err(Error::InvalidInput(
                        "--trim-a and --theta must be given together".into(),
                    ))
                }
            };
            let probe = range_ld_probe(d, n, &ss, trim, mc.samples, mc.seed()?, mc.shards)?;
            if csv {
                out.line("s,p_hat,stderr,exponent,lower_bound_only");
                for p in &probe.points {
                    out.line(&format!(
                        "{},{},{},{},{}",
                        p.s,
                        p.p_hat,
                        p.std_error,
                        p.exponent.unwrap_or(f64::NAN),
                        p.lower_bound_only.unwrap_or(f64::NAN)
                    ));
                }
            } else {
                out.record(&wrap(
                    "range-probe",
                    &config,
                    serde_json::to_value(&probe).unwrap(),
                ));
            }
        }
        Cmd::Check { ref cmd } => {
            let report = match cmd {
                CheckCmd::SymmetricUnitBound {
                    law,
                    delta_grid,
                    lmax,
                } => {
                    let law = law.build()?;
                    let grid = parse_grid(delta_grid)?;
                    check_symmetric_unit_bound(&law, &grid, *lmax)?
                }
                CheckCmd::SmallDeltaRegimes {
                    law,
                    delta,
                    eta,
                    eps_delta,
                    a,
                    lmax,
                } => {
                    let law = law.build()?;
                    let eps = eps_delta.unwrap_or_else(|| eps_delta_quartic(&law, *delta, *eta));
                    check_small_delta_regimes(&law, *delta, *eta, eps, *a, *lmax)?
                }
                CheckCmd::Superadditivity {
                    law,
                    delta,
                    beta,
                    lmax,
                } => {
                    let law = law.build()?;
                    check_superadditivity(&law, TiltParams::new(*delta, *beta)?, *lmax)?
                }
                CheckCmd::GdbSmallbeta {
                    law,
                    delta,
                    beta,
                    eta,
                    a,
                    lmax,
                } => {
                    let law = law.build()?;
                    check_gdb_smallbeta(&law, *delta, *beta, *eta, *a, *lmax)?
                }
                CheckCmd::DensityEnvelope { law, lmax, eps0 } => {
                    let law = law.build()?;
                    check_density_envelope(&law, *lmax, *eps0)?
                }
                CheckCmd::LargeDeltaEnvelope { delta, eta, lmax } => {
                    fit_large_delta_envelope(*delta, *eta, *lmax)?
                }
            };
            out.record(&wrap(
                "check",
                &config,
                serde_json::to_value(&report).unwrap(),
            ));
        }
    }
    out.finish()
}

/// Expand `--config FILE` into flags appended after the subcommand,
/// skipping keys already present on the command line.
fn expand_config(argv: Vec<String>) -> Result<Vec<String>, Error> {
    let mut argv = argv;
    let pos = argv.iter().position(|a| a == "--config");
    let Some(pos) = pos else {
        return Ok(argv);
    };
    let path = argv
        .get(pos + 1)
        .cloned()
        .ok_or_else(|| Error::InvalidInput("--config needs a path".into()))?;
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::InvalidInput(format!("cannot read config {path}: {e}")))?;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(|c: char| c == '=' || c.is_whitespace())
            .ok_or_else(|| Error::InvalidInput(format!("bad config line `{line}`")))?;
        let flag = format!("--{}", key.trim());
        if argv.iter().any(|a| *a == flag) {
            continue; // explicit flags win
        }
        argv.push(flag);
        let v = value.trim();
        if !v.is_empty() {
            argv.push(v.to_string());
        }
    }
    Ok(argv)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match expand_config(argv) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
