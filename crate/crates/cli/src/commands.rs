use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use stirring_core::cylinder::GradientData;
use stirring_core::exact::write_entropy_csv;
use stirring_core::field::write_traces_csv;
use stirring_core::flows::{build_flow, g_d, verify_flow, FLOW_TOL};
use stirring_core::kmc::{EventMode, InitialLaw};
use stirring_core::she::{build_limit_model, she_targets, write_targets_csv};
use stirring_core::stats::{
    bg_experiment, entropy_growth_experiment, identity_suite, run_ensemble, traces, write_stat_csv,
    BgSpec, EnsembleSpec, EntropySweep, Preset, Verdict,
};

use crate::config::{
    self, parse_floats, parse_list, parse_mu0, AnSpec, BgConfig, EntropyConfig, RatesSpec,
    SimulateConfig,
};
use crate::output::{sanitize, RunDir};
use crate::ConfigError;

#[derive(Parser, Debug)]
#[command(
    name = "stirring",
    version,
    about = "Voter model with stirring: exact checks and simulations"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact identity suite for a rate preset.
    Verify(VerifyArgs),
    /// Relative entropy production on small tori.
    Entropy(EntropyArgs),
    /// Monte Carlo ensemble of fluctuation fields from a TOML config.
    Simulate(SimulateArgs),
    /// Boltzmann–Gibbs trend of time-integrated local fields.
    Bg(BgArgs),
    /// Limit covariances of the Ornstein–Uhlenbeck field.
    SheTargets(SheArgs),
    /// Divergence and energy of the discrete flows.
    FlowScaling(FlowArgs),
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// ssep-d1, ssep-d2, ssep-d3 or speed-change.
    #[arg(long, default_value = "ssep-d1")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    outdir: PathBuf,
}

#[derive(Args, Debug)]
struct EntropyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value = "8")]
    ns: String,
    #[arg(long, default_value = "1")]
    a_ns: String,
    #[arg(long, default_value = "0.5")]
    rhos: String,
    /// Comma-separated initial laws: full, empty or bernoulli:<rho>.
    #[arg(long, default_value = "bernoulli:0.6,full")]
    mu0: String,
    /// ssep or speed_change.
    #[arg(long, default_value = "ssep")]
    rates: String,
    #[arg(long, default_value_t = 0.2)]
    t_max: f64,
    #[arg(long, default_value_t = 50)]
    points: usize,
    #[arg(long)]
    outdir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    outdir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BgArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value = "64,128,256")]
    ns: String,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// A number or sqrt_log_n.
    #[arg(long, default_value = "sqrt_log_n")]
    a_n: String,
    #[arg(long, default_value = "ssep")]
    rates: String,
    #[arg(long, default_value = "effective")]
    event_mode: String,
    #[arg(long, default_value_t = 0.5)]
    t: f64,
    #[arg(long, default_value_t = 500)]
    replicas: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    outdir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SheArgs {
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Mode indices along the first axis, `1..4` or `1,3`.
    #[arg(long, default_value = "1..4")]
    modes: String,
    #[arg(long, default_value = "0.5")]
    t: String,
    #[arg(long, default_value = "ssep")]
    rates: String,
    #[arg(long, default_value = "runs")]
    outdir: PathBuf,
}

#[derive(Args, Debug)]
struct FlowArgs {
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value = "1..64")]
    ells: String,
    #[arg(long, default_value = "runs")]
    outdir: PathBuf,
}

/// Runs a subcommand; `Ok(false)` means the experiment's verdict failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify(a) => verify(a),
        Command::Entropy(a) => entropy(a),
        Command::Simulate(a) => simulate(a),
        Command::Bg(a) => bg(a),
        Command::SheTargets(a) => she(a),
        Command::FlowScaling(a) => flow_scaling(a),
    }
}

fn set_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        // A second call in the same process only fails because the pool exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Ok(())
}

fn parse_event_mode(s: &str) -> Result<EventMode, ConfigError> {
    match s {
        "null" => Ok(EventMode::Null),
        "effective" => Ok(EventMode::Effective),
        _ => Err(ConfigError(format!(
            "event mode must be null or effective, got {s:?}"
        ))),
    }
}

fn parse_an(s: &str) -> AnSpec {
    s.parse::<f64>()
        .map(AnSpec::Value)
        .unwrap_or_else(|_| AnSpec::Named(s.into()))
}

/// Core errors caused by bad parameters count as configuration errors.
fn input_error(e: stirring_core::Error) -> anyhow::Error {
    use stirring_core::Error as E;
    match e {
        E::InvalidTorus { .. }
        | E::InvalidDensity(_)
        | E::TorusTooSmall { .. }
        | E::StateSpaceTooLarge { .. }
        | E::DimensionMismatch { .. }
        | E::SupportTooLarge(_)
        | E::InvalidParameter(_) => ConfigError::from(e).into(),
        e => e.into(),
    }
}

fn finish(dir: &RunDir, verdict: Verdict) -> Result<bool> {
    dir.verdict(&verdict)?;
    say!(
        "{} {}",
        if verdict.pass { "PASS" } else { "FAIL" },
        dir.path().display()
    );
    Ok(verdict.pass)
}

fn verify(a: VerifyArgs) -> Result<bool> {
    let preset = Preset::parse(&a.preset).map_err(ConfigError::from)?;
    let checks = identity_suite(preset, a.seed)?;
    let dir = RunDir::create(&a.outdir, "verify")?;
    dir.json(
        "resolved_config.json",
        &json!({ "preset": a.preset, "seed": a.seed }),
    )?;
    let mut w = csv::Writer::from_writer(dir.writer("checks.csv")?);
    for c in &checks {
        w.serialize(c)?;
        say!(
            "{} {:<40} residual={:e} tol={:e}",
            if c.pass { "ok  " } else { "FAIL" },
            c.name,
            c.residual,
            c.tolerance
        );
    }
    w.flush()?;
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.name.as_str())
        .collect();
    let pass = failed.is_empty();
    finish(
        &dir,
        Verdict::new(
            "verify",
            pass,
            json!({ "checks": checks.len(), "failed": failed }),
        ),
    )
}

fn entropy(a: EntropyArgs) -> Result<bool> {
    let mut cfg: EntropyConfig = match &a.config {
        Some(p) => config::load(p)?,
        None => EntropyConfig {
            outdir: PathBuf::from("runs"),
            d: a.d,
            ns: parse_list(&a.ns)?,
            a_ns: parse_floats(&a.a_ns)?,
            rhos: parse_floats(&a.rhos)?,
            mu0: a
                .mu0
                .split(',')
                .map(|s| parse_mu0(s.trim()))
                .collect::<Result<_, _>>()?,
            rates: RatesSpec::Named(a.rates.clone()),
            t_max: a.t_max,
            points: a.points,
        },
    };
    if let Some(o) = a.outdir {
        cfg.outdir = o;
    }
    if cfg.points < 2 || !(cfg.t_max > 0.0) {
        return Err(ConfigError("entropy needs points ≥ 2 and t_max > 0".into()).into());
    }
    let sweep = EntropySweep {
        rates: cfg.rates.resolve(cfg.d)?,
        ns: cfg.ns.clone(),
        a_ns: cfg.a_ns.clone(),
        rhos: cfg.rhos.clone(),
        mu0: cfg.mu0.clone(),
        t_max: cfg.t_max,
        points: cfg.points,
    };
    let result = entropy_growth_experiment(&sweep).map_err(input_error)?;
    let dir = RunDir::create(&cfg.outdir, "entropy")?;
    dir.json("resolved_config.json", &cfg)?;
    let mut w = csv::Writer::from_writer(dir.writer("sweep.csv")?);
    for r in &result.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    for (row, rep) in result.rows.iter().zip(&result.reports) {
        let name = format!(
            "entropy_n{}_a{}_rho{}_{}.csv",
            row.n,
            row.a_n,
            row.rho,
            sanitize(&row.mu0)
        );
        write_entropy_csv(rep, dir.writer(&name)?)?;
        say!(
            "n={} a_n={} rho={} mu0={:<14} H0={:.6} max_excess={:+.3e} C0={:.4} envelope={} {}",
            row.n,
            row.a_n,
            row.rho,
            row.mu0,
            row.h0,
            row.max_excess,
            row.c0_fit,
            row.envelope_holds,
            if row.pass { "ok" } else { "FAIL" }
        );
    }
    let pass = result.rows.iter().all(|r| r.pass && r.envelope_holds);
    finish(
        &dir,
        Verdict::new(
            "entropy",
            pass,
            json!({ "runs": result.rows.len(), "c0_stable": result.c0_stable }),
        ),
    )
}

fn simulate(a: SimulateArgs) -> Result<bool> {
    let mut cfg: SimulateConfig = config::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.replicas {
        cfg.simulate.replicas = r;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    if let Some(o) = a.outdir {
        cfg.outdir = o;
    }
    let params = cfg.model.sim_params()?;
    let law = cfg
        .initial
        .clone()
        .unwrap_or(InitialLaw::Bernoulli { rho: cfg.model.rho });
    let spec = EnsembleSpec {
        params,
        law: law.clone(),
        replicas: cfg.simulate.replicas,
        seed: cfg.seed,
        observables: cfg.simulate.observables.clone(),
        sample_times: cfg.simulate.sample_times.clone(),
        martingale: cfg.simulate.martingale,
    };
    spec.validate().map_err(ConfigError::from)?;
    if let InitialLaw::File { path } = &law {
        if !std::path::Path::new(path).exists() {
            return Err(ConfigError(format!("initial snapshot {} not found", path)).into());
        }
    }
    set_threads(cfg.threads)?;

    let (report, records) = run_ensemble(&spec)?;
    let dir = RunDir::create(&cfg.outdir, "simulate")?;
    cfg.model.a_n = AnSpec::Value(spec.params.a_n);
    cfg.initial = Some(law);
    dir.json("resolved_config.json", &cfg)?;
    write_stat_csv(&report, dir.writer("stats.csv")?)?;
    if cfg.simulate.write_traces {
        write_traces_csv(&traces(&spec, &records)?, dir.writer("traces.csv")?)?;
    }
    let exclusion: u64 = records.iter().map(|r| r.exclusion_events).sum();
    let voter: u64 = records.iter().map(|r| r.voter_events).sum();
    for r in report.rows.iter().filter(|r| r.target.is_some()) {
        say!(
            "{:<10} {:<26} t=({}, {}) est={:.6e} se={:.2e} target={:.6e} z={:+.2}{} {}",
            r.observable,
            r.quantity,
            r.t1,
            r.t2,
            r.estimate,
            r.se,
            r.target.unwrap_or(f64::NAN),
            r.z.unwrap_or(f64::NAN),
            r.finite_n_prediction
                .map(|p| format!(" finite_n={p:.6e}"))
                .unwrap_or_default(),
            match r.pass {
                Some(true) => "ok",
                Some(false) => "FAIL",
                None => "",
            }
        );
    }
    let checked = report.rows.iter().filter(|r| r.pass.is_some()).count();
    let failed = report.rows.iter().filter(|r| r.pass == Some(false)).count();
    finish(
        &dir,
        Verdict::new(
            "simulate",
            report.pass(),
            json!({
                "replicas": spec.replicas,
                "checked_rows": checked,
                "failed_rows": failed,
                "exclusion_events": exclusion,
                "voter_events": voter,
            }),
        ),
    )
}

fn bg(a: BgArgs) -> Result<bool> {
    let mut cfg: BgConfig = match &a.config {
        Some(p) => config::load(p)?,
        None => BgConfig {
            seed: 0,
            outdir: PathBuf::from("runs"),
            threads: 0,
            d: a.d,
            ns: parse_list(&a.ns)?,
            rho: a.rho,
            a_n: parse_an(&a.a_n),
            rates: RatesSpec::Named(a.rates.clone()),
            event_mode: parse_event_mode(&a.event_mode)?,
            t: a.t,
            replicas: a.replicas,
            f: config::default_bg_f(),
            g: config::default_bg_g(),
        },
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    if let Some(o) = a.outdir {
        cfg.outdir = o;
    }
    let a_n = match &cfg.a_n {
        AnSpec::Value(v) => Some(*v),
        named => {
            named.resolve(cfg.ns.first().copied().unwrap_or(2))?;
            None
        }
    };
    if cfg.ns.is_empty() || !(cfg.t > 0.0) || cfg.replicas < 2 {
        return Err(ConfigError("bg needs at least one n, t > 0 and 2 replicas".into()).into());
    }
    let spec = BgSpec {
        f: cfg.f.clone(),
        g: cfg.g.clone(),
        rates: cfg.rates.resolve(cfg.d)?,
        ns: cfg.ns.clone(),
        rho: cfg.rho,
        a_n,
        t: cfg.t,
        replicas: cfg.replicas,
        seed: cfg.seed,
        event_mode: cfg.event_mode,
    };
    set_threads(cfg.threads)?;
    let report = bg_experiment(&spec).map_err(input_error)?;
    let dir = RunDir::create(&cfg.outdir, "bg")?;
    dir.json("resolved_config.json", &cfg)?;
    let mut w = csv::Writer::from_writer(dir.writer("bg.csv")?);
    for r in &report.rows {
        w.serialize(r)?;
        say!(
            "n={:<5} a_n={:.4} E|B|={:.6e} ± {:.2e}  E[B]={:+.3e} ± {:.2e}",
            r.n,
            r.a_n,
            r.mean_abs,
            r.se_abs,
            r.mean,
            r.se
        );
    }
    w.flush()?;
    finish(
        &dir,
        Verdict::new(
            "bg",
            report.decreasing,
            json!({ "criterion": report.criterion, "ns": cfg.ns }),
        ),
    )
}

fn she(a: SheArgs) -> Result<bool> {
    let grad = match a.rates.as_str() {
        "ssep" => GradientData::ssep(a.d),
        "speed_change" if a.d == 1 => {
            GradientData::speed_change_example(stirring_core::stats::SPEED_CHANGE_A)
                .map_err(ConfigError::from)?
        }
        other => {
            return Err(ConfigError(format!(
                "rates must be ssep or speed_change (d=1), got {other:?}"
            ))
            .into())
        }
    };
    let model = build_limit_model(&grad, a.rho, a.d).map_err(ConfigError::from)?;
    let ms: Vec<i64> = parse_list(&a.modes)?;
    let modes: Vec<Vec<i64>> = ms
        .iter()
        .map(|&m| {
            let mut v = vec![0; a.d];
            v[0] = m;
            v
        })
        .collect();
    let mut times = parse_floats(&a.t)?;
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(ConfigError("times must be non-negative".into()).into());
    }
    times.sort_by(f64::total_cmp);
    let rows = she_targets(&model, &modes, &times)?;
    let dir = RunDir::create(&a.outdir, "she-targets")?;
    dir.json(
        "resolved_config.json",
        &json!({ "d": a.d, "rho": a.rho, "modes": modes, "t": times, "rates": a.rates, "model": model }),
    )?;
    write_targets_csv(&rows, dir.writer("targets.csv")?)?;
    say!(
        "{:<10} {:>8} {:>8} {:<20} {:>14}",
        "mode",
        "t1",
        "t2",
        "quantity",
        "cov_limit"
    );
    for r in &rows {
        say!(
            "{:<10} {:>8} {:>8} {:<20} {:>14.7}",
            r.mode,
            r.t1,
            r.t2,
            r.quantity,
            r.value
        );
    }
    finish(
        &dir,
        Verdict::new("she-targets", true, json!({ "rows": rows.len() })),
    )
}

#[derive(Serialize)]
struct FlowRow {
    ell: usize,
    d: usize,
    energy: f64,
    g_d: f64,
    ratio: f64,
    divergence_residual: f64,
    pass: bool,
}

/// Smallest window entering the energy-ratio verdict.
const RATIO_MIN_ELL: usize = 4;

fn flow_scaling(a: FlowArgs) -> Result<bool> {
    if !(1..=3).contains(&a.d) {
        return Err(ConfigError(format!("flow-scaling supports d = 1, 2, 3, got {}", a.d)).into());
    }
    let ells: Vec<usize> = parse_list(&a.ells)?;
    if ells.contains(&0) {
        return Err(ConfigError("windows must be ≥ 1".into()).into());
    }
    let rows: Vec<FlowRow> = ells
        .iter()
        .map(|&ell| {
            let flow = build_flow(ell, a.d);
            let rep = verify_flow(&flow);
            let energy = flow.energy();
            let g = g_d(ell as f64, a.d);
            FlowRow {
                ell,
                d: a.d,
                energy,
                g_d: g,
                ratio: energy / g,
                divergence_residual: rep.max_divergence_residual,
                pass: rep.pass,
            }
        })
        .collect();
    let dir = RunDir::create(&a.outdir, "flow-scaling")?;
    dir.json("resolved_config.json", &json!({ "d": a.d, "ells": ells }))?;
    let mut w = csv::Writer::from_writer(dir.writer("scaling.csv")?);
    for r in &rows {
        w.serialize(r)?;
        say!(
            "ell={:<4} energy={:<12.6} g_d={:<10.4} ratio={:<8.4} residual={:.1e}",
            r.ell,
            r.energy,
            r.g_d,
            r.ratio,
            r.divergence_residual
        );
    }
    w.flush()?;
    let ratios: Vec<f64> = rows
        .iter()
        .filter(|r| r.ell >= RATIO_MIN_ELL)
        .map(|r| r.ratio)
        .collect();
    let spread = match (
        ratios.iter().cloned().reduce(f64::min),
        ratios.iter().cloned().reduce(f64::max),
    ) {
        (Some(lo), Some(hi)) if lo > 0.0 => Some(hi / lo),
        _ => None,
    };
    let divergence_ok = rows.iter().all(|r| r.pass);
    let pass = divergence_ok && spread.is_none_or(|s| s < 4.0);
    finish(
        &dir,
        Verdict::new(
            "flow-scaling",
            pass,
            json!({ "divergence_tol": FLOW_TOL, "divergence_ok": divergence_ok, "ratio_spread": spread }),
        ),
    )
}
