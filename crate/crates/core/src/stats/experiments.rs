//! Experiments built on the ensemble machinery and the exact analyzer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_ensemble, EnsembleSpec, Estimate, StatReport, Z_BAND};
use crate::cylinder::{CylinderFunction, RateFamily};
use crate::error::{Error, Result};
use crate::exact::{entropy_production_report, DistributionVector, EntropyParams, EntropyReport};
use crate::field::{FieldParams, TestFunction};
use crate::kmc::{default_a_n, init, EventMode, InitialLaw, SimParams};
use crate::lattice::{Configuration, Torus};

/// `M_t = X_t − X_0 − ∫₀ᵗ L_n X_s ds` against `∫₀ᵗ Γ^n_s ds` and the limit.
/// Keeps only the martingale rows of the ensemble report.
pub fn martingale_check(spec: &EnsembleSpec) -> Result<StatReport> {
    let mut spec = spec.clone();
    spec.martingale = true;
    let (mut report, _) = run_ensemble(&spec)?;
    report
        .rows
        .retain(|r| r.quantity.starts_with("martingale") || r.quantity == "gamma_integral");
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct X0Row {
    pub n: usize,
    pub a_n: f64,
    pub replicas: usize,
    pub variance: f64,
    pub se: f64,
    /// `χ(ρ)‖F‖²_n / a_n`.
    pub target: f64,
    pub z: f64,
    pub pass: bool,
}

/// Variance of `X^n_0(F)` under `ν_ρ` for each `n`, with `a_n` from
/// `a_n(n)`.
pub fn x0_variance_experiment(
    d: usize,
    ns: &[usize],
    rho: f64,
    a_n: impl Fn(usize) -> f64,
    f: &TestFunction,
    replicas: u64,
    seed: u64,
) -> Result<Vec<X0Row>> {
    let mut rows = Vec::new();
    for &n in ns {
        let torus = Torus::new(d, n)?;
        let a = a_n(n);
        let fp = FieldParams::new(rho, a)?;
        let grid = f.grid(&torus)?;
        let norm_sq = grid.iter().map(|v| v * v).sum::<f64>() / torus.size() as f64;
        let law = InitialLaw::Bernoulli { rho };
        let xs = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ r);
                let eta = law.sample(&torus, &mut rng)?;
                Ok(crate::field::field_eval(&eta, &grid, &fp))
            })
            .collect::<Result<Vec<f64>>>()?;
        let e = Estimate::from_samples(&xs)?;
        let target = rho * (1.0 - rho) * norm_sq / a;
        let z = (e.variance - target) / e.se_variance;
        rows.push(X0Row {
            n,
            a_n: a,
            replicas: xs.len(),
            variance: e.variance,
            se: e.se_variance,
            target,
            z,
            pass: z.abs() <= Z_BAND,
        });
    }
    Ok(rows)
}

/// Boltzmann–Gibbs sweep: `E|∫₀ᵗ Σ_x G(x/n)(τ_x Π^{+2}f)(η_s) ds| / √(a_n n^d)`.
#[derive(Debug, Clone)]
pub struct BgSpec {
    pub f: CylinderFunction,
    pub g: TestFunction,
    pub rates: RateFamily,
    pub ns: Vec<usize>,
    pub rho: f64,
    /// `None` uses [`default_a_n`].
    pub a_n: Option<f64>,
    pub t: f64,
    pub replicas: u64,
    pub seed: u64,
    pub event_mode: EventMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BgRow {
    pub n: usize,
    pub a_n: f64,
    pub replicas: usize,
    pub mean_abs: f64,
    pub se_abs: f64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BgReport {
    pub rows: Vec<BgRow>,
    /// `mean_abs` strictly decreasing in `n`.
    pub decreasing: bool,
    /// No finite-`n` rate is asserted; the verdict is the trend alone.
    pub criterion: String,
}

pub fn bg_experiment(spec: &BgSpec) -> Result<BgReport> {
    if spec.replicas < 2 {
        return Err(Error::InvalidParameter("need at least 2 replicas".into()));
    }
    if !(spec.t >= 0.0) {
        return Err(Error::InvalidParameter(format!("t = {}", spec.t)));
    }
    let centred = spec.f.pi2plus(spec.rho);
    let mut rows = Vec::new();
    for &n in &spec.ns {
        let torus = Torus::new(spec.rates.dim(), n)?;
        let a = spec.a_n.unwrap_or_else(|| default_a_n(n));
        let fp = FieldParams::new(spec.rho, a)?;
        let norm = fp.normalization(&torus);
        let weights: Vec<f64> = spec.g.grid(&torus)?.iter().map(|g| g * norm).collect();
        let mut params = SimParams::new(torus, spec.rho, a, spec.rates.clone())?;
        params.event_mode = spec.event_mode;
        let law = InitialLaw::Bernoulli { rho: spec.rho };
        let vals = (0..spec.replicas)
            .into_par_iter()
            .map(|r| {
                let mut s = init(params.clone(), &law, spec.seed, r)?;
                let id = s.add_field(&centred, weights.clone())?;
                s.run_until(spec.t, &[], |_, _| Ok(()))?;
                Ok(s.field(id).integral_at(spec.t))
            })
            .collect::<Result<Vec<f64>>>()?;
        let abs: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
        let ea = Estimate::from_samples(&abs)?;
        let e = Estimate::from_samples(&vals)?;
        rows.push(BgRow {
            n,
            a_n: a,
            replicas: vals.len(),
            mean_abs: ea.mean,
            se_abs: ea.se_mean,
            mean: e.mean,
            se: e.se_mean,
        });
    }
    let decreasing = rows.windows(2).all(|w| w[1].mean_abs < w[0].mean_abs);
    Ok(BgReport {
        rows,
        decreasing,
        criterion: "trend only: strictly decreasing E|integral| across n".into(),
    })
}

/// Initial law of an exact entropy run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialDensity {
    Bernoulli { rho: f64 },
    Full,
    Empty,
}

impl InitialDensity {
    pub fn distribution(&self, torus: Torus) -> Result<DistributionVector> {
        match self {
            InitialDensity::Bernoulli { rho } => DistributionVector::bernoulli(torus, *rho),
            InitialDensity::Full => DistributionVector::dirac(&Configuration::full(torus)),
            InitialDensity::Empty => DistributionVector::dirac(&Configuration::empty(torus)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            InitialDensity::Bernoulli { rho } => format!("bernoulli:{rho}"),
            InitialDensity::Full => "full".into(),
            InitialDensity::Empty => "empty".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EntropySweep {
    pub rates: RateFamily,
    pub ns: Vec<usize>,
    pub a_ns: Vec<f64>,
    pub rhos: Vec<f64>,
    pub mu0: Vec<InitialDensity>,
    pub t_max: f64,
    /// Grid points on `[0, t_max]`, endpoints included.
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySweepRow {
    pub n: usize,
    pub a_n: f64,
    pub rho: f64,
    pub mu0: String,
    pub h0: f64,
    pub h_max: f64,
    pub c0_fit: f64,
    pub r_d: f64,
    pub max_excess: f64,
    pub envelope_holds: bool,
    /// Inequality holds at every grid point.
    pub pass: bool,
    /// `H ≡ 0` along the run.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropySweepResult {
    pub rows: Vec<EntropySweepRow>,
    pub reports: Vec<EntropyReport>,
    /// Non-degenerate fitted constants agree within a factor 2 for each
    /// `(a_n, ρ, μ0)` across `n`.
    pub c0_stable: bool,
}

pub fn linspace(a: f64, b: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..points)
            .map(|k| a + (b - a) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

pub fn entropy_growth_experiment(sweep: &EntropySweep) -> Result<EntropySweepResult> {
    let times = linspace(0.0, sweep.t_max, sweep.points);
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &a in &sweep.a_ns {
        for &rho in &sweep.rhos {
            for mu0 in &sweep.mu0 {
                for &n in &sweep.ns {
                    let torus = Torus::new(sweep.rates.dim(), n)?;
                    let params = EntropyParams {
                        torus,
                        rates: sweep.rates.clone(),
                        rho,
                        a_n: a,
                    };
                    let rep =
                        entropy_production_report(&mu0.distribution(torus)?, &params, &times)?;
                    let h_max = rep.rows.iter().map(|r| r.h).fold(0.0, f64::max);
                    rows.push(EntropySweepRow {
                        n,
                        a_n: a,
                        rho,
                        mu0: mu0.label(),
                        h0: rep.rows.first().map_or(0.0, |r| r.h),
                        h_max,
                        c0_fit: rep.c0_fit,
                        r_d: rep.r_d,
                        max_excess: rep.max_excess,
                        envelope_holds: rep.envelope_holds,
                        pass: rep.pass,
                        degenerate: h_max < 1e-14,
                    });
                    reports.push(rep);
                }
            }
        }
    }
    let mut c0_stable = true;
    for group in rows.chunks(sweep.ns.len().max(1)) {
        let cs: Vec<f64> = group
            .iter()
            .filter(|r| !r.degenerate && r.c0_fit > 0.0)
            .map(|r| r.c0_fit)
            .collect();
        if let (Some(lo), Some(hi)) = (
            cs.iter().cloned().reduce(f64::min),
            cs.iter().cloned().reduce(f64::max),
        ) {
            c0_stable &= hi.is_finite() && hi <= 2.0 * lo;
        }
    }
    Ok(EntropySweepResult {
        rows,
        reports,
        c0_stable,
    })
}

/// Monte Carlo check of `log E exp{a Z²} ≤ C a`, with
/// `Z = n^{−d/2} Σ_x F(x/n)(τ_x f − f̃(ρ))` under `ν_ρ`.
#[derive(Debug, Clone)]
pub struct SubgaussianSpec {
    pub f: CylinderFunction,
    pub g: TestFunction,
    pub d: usize,
    pub n: usize,
    pub rho: f64,
    pub samples: usize,
    pub seed: u64,
    /// Number of `a` values on `(0, a_max/2]`.
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgaussianRow {
    pub a: f64,
    pub log_moment: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgaussianReport {
    pub rows: Vec<SubgaussianRow>,
    /// `(diam f + 1)^d` classes of mutually independent translates.
    pub classes: usize,
    pub oscillation: f64,
    pub sup_f: f64,
    /// `1/(K² osc² ‖F‖²_∞)`.
    pub a_max: f64,
    /// `K² osc² ‖F‖²_∞ / 2`.
    pub slope_bound: f64,
    pub max_slope: f64,
    pub min_slope: f64,
    pub second_moment: f64,
    pub degenerate: bool,
    pub diverged: bool,
    pub pass: bool,
}

fn oscillation(f: &CylinderFunction) -> Result<f64> {
    let sites = f.support();
    if sites.len() > 24 {
        return Err(Error::SupportTooLarge(sites.len()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for mask in 0u32..(1u32 << sites.len()) {
        let v = f.eval_with(|z| {
            sites
                .iter()
                .position(|s| s.as_slice() == z)
                .map_or(0, |i| (mask >> i & 1) as u8)
        });
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(hi - lo)
}

fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (xs.iter().map(|x| (x - m).exp()).sum::<f64>() / xs.len() as f64).ln()
}

pub fn subgaussian_moment_check(spec: &SubgaussianSpec) -> Result<SubgaussianReport> {
    if spec.samples < 2 || spec.points == 0 {
        return Err(Error::InvalidParameter(
            "need samples ≥ 2 and points ≥ 1".into(),
        ));
    }
    let torus = Torus::new(spec.d, spec.n)?;
    let lf = spec.f.compile(&torus)?;
    let grid = spec.g.grid(&torus)?;
    let tilde = spec.f.tilde(spec.rho);
    let osc = oscillation(&spec.f)?;
    let sup_f = grid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let classes = (spec.f.diameter() + 1).pow(spec.d as u32);
    let scale = (torus.size() as f64).powf(-0.5);
    let law = InitialLaw::Bernoulli { rho: spec.rho };
    let zs = (0..spec.samples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ r);
            let eta = law.sample(&torus, &mut rng)?;
            let occ = eta.occupancy();
            Ok(scale
                * (0..torus.size())
                    .map(|x| grid[x] * (lf.eval(occ, x) - tilde))
                    .sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    let z2: Vec<f64> = zs.iter().map(|z| z * z).collect();
    let second_moment = z2.iter().sum::<f64>() / z2.len() as f64;
    let k2 = (classes * classes) as f64;
    let spread = k2 * osc * osc * sup_f * sup_f;
    let degenerate = spread == 0.0 || z2.iter().all(|&v| v == 0.0);
    if degenerate {
        return Ok(SubgaussianReport {
            rows: Vec::new(),
            classes,
            oscillation: osc,
            sup_f,
            a_max: f64::INFINITY,
            slope_bound: 0.0,
            max_slope: 0.0,
            min_slope: 0.0,
            second_moment,
            degenerate: true,
            diverged: false,
            pass: true,
        });
    }
    let a_max = 1.0 / spread;
    let slope_bound = spread / 2.0;
    let mut rows = Vec::new();
    for k in 1..=spec.points {
        let a = 0.5 * a_max * k as f64 / spec.points as f64;
        let lm = log_mean_exp(&z2.iter().map(|v| a * v).collect::<Vec<_>>());
        rows.push(SubgaussianRow {
            a,
            log_moment: lm,
            slope: lm / a,
        });
    }
    let diverged = rows.iter().any(|r| !r.log_moment.is_finite());
    let max_slope = rows
        .iter()
        .map(|r| r.slope)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_slope = rows.iter().map(|r| r.slope).fold(f64::INFINITY, f64::min);
    let pass = !diverged && max_slope <= slope_bound && max_slope <= 2.0 * min_slope;
    Ok(SubgaussianReport {
        rows,
        classes,
        oscillation: osc,
        sup_f,
        a_max,
        slope_bound,
        max_slope,
        min_slope,
        second_moment,
        degenerate: false,
        diverged,
        pass,
    })
}
