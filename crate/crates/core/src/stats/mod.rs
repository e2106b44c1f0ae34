//! Replica ensembles and their statistical verdicts.
//!
//! Replicas run in parallel and are reduced in replica order, so every
//! report is a deterministic function of the spec and seed.

mod experiments;
mod identities;

pub use experiments::*;
pub use identities::*;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cylinder::CylinderFunction;
use crate::error::{Error, Result};
use crate::field::{FieldParams, FieldTrace, IntegrationMethod, TestFunction};
use crate::kmc::{init, FieldId, InitialLaw, SimParams, SimState};
use crate::lattice::Torus;
use crate::she::{build_limit_model, cov_limit, martingale_cov, LimitModel, ModeCombination};

/// Rows with `|z|` above this fail.
pub const Z_BAND: f64 = 3.0;

/// Sample mean, variance and standard errors of one scalar statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Standard error of the mean.
    pub se_mean: f64,
    /// Delta-method standard error of the variance.
    pub se_variance: f64,
    /// Every sample equal: no error bar.
    pub degenerate: bool,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "{n} samples, need at least 2"
            )));
        }
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
        let variance = m2 * nf / (nf - 1.0);
        let degenerate = xs.iter().all(|&x| x == xs[0]);
        Ok(Self {
            n,
            mean,
            variance,
            se_mean: (variance / nf).sqrt(),
            se_variance: ((m4 - m2 * m2).max(0.0) / nf).sqrt(),
            degenerate,
        })
    }
}

/// Sample covariance of paired draws and the standard error of the
/// product-moment estimator.
pub fn covariance_estimate(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::InvalidParameter(
            "paired samples differ in length".into(),
        ));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let e = Estimate::from_samples(&prods)?;
    Ok((e.mean * n / (n - 1.0), e.se_mean))
}

/// Observables recorded by [`run_ensemble`].
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub params: SimParams,
    pub law: InitialLaw,
    pub replicas: u64,
    pub seed: u64,
    pub observables: Vec<TestFunction>,
    /// Strictly increasing, nonnegative.
    pub sample_times: Vec<f64>,
    /// Record `𝕏_t`, `M_t` and `∫₀ᵗ Γ^n_s ds` event-exactly.
    pub martingale: bool,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.replicas < 2 {
            return Err(Error::InvalidParameter("need at least 2 replicas".into()));
        }
        if self.sample_times.is_empty() {
            return Err(Error::InvalidParameter("no sample times".into()));
        }
        if self.sample_times[0] < 0.0 || self.sample_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "sample times must be nonnegative and strictly increasing".into(),
            ));
        }
        if self.params.a_n <= 0.0 {
            return Err(Error::InvalidParameter("the field needs a_n > 0".into()));
        }
        Ok(())
    }

    fn field_params(&self) -> Result<FieldParams> {
        FieldParams::new(self.params.rho, self.params.a_n)
    }
}

/// Values of one replica, indexed `[observable][sample time]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub replica: u64,
    pub field: Vec<Vec<f64>>,
    pub integrated: Option<Vec<Vec<f64>>>,
    pub martingale: Option<Vec<Vec<f64>>>,
    pub gamma_integral: Option<Vec<Vec<f64>>>,
    pub exclusion_events: u64,
    pub voter_events: u64,
}

/// Per-observable weight tables for the event-exact martingale.
#[derive(Debug, Clone)]
struct MartingaleWeights {
    grid: Vec<f64>,
    /// `norm · Σ_j` coefficient of `η_x` in `L_n X` (constant rates) or of
    /// the voter part only (otherwise).
    occupation: Vec<f64>,
    /// Per bond: `Γ` weight multiplying the discordance time.
    discordance: Vec<f64>,
    /// Speed-change rates: tracked exclusion drift and `Γ` fields.
    drift_fields: Vec<(CylinderFunction, Vec<f64>)>,
    gamma_fields: Vec<(CylinderFunction, Vec<f64>)>,
}

fn martingale_weights(
    torus: &Torus,
    params: &SimParams,
    fp: &FieldParams,
    grid: Vec<f64>,
) -> MartingaleWeights {
    let d = torus.dim();
    let n = torus.side() as f64;
    let nd = torus.size() as f64;
    let norm = fp.normalization(torus);
    let a = params.a_n;
    let constant = params.rates.is_constant();
    let mut occupation = vec![0.0; torus.size()];
    let mut discordance = vec![0.0; torus.size() * d];
    let mut drift_fields = Vec::new();
    let mut gamma_fields = Vec::new();
    for j in 0..d {
        let cj = params.rates.rate(j);
        let c = cj.coefficient(&[]);
        let e = torus.unit(j);
        let mut drift_w = vec![0.0; torus.size()];
        let mut gamma_w = vec![0.0; torus.size()];
        for x in 0..torus.size() {
            let y = torus.step(x, j, true);
            let grad = grid[y] - grid[x];
            // voter: L^V η_x = Σ_y (η_y − η_x)
            occupation[x] += a * norm * grad;
            occupation[y] -= a * norm * grad;
            discordance[x * d + j] += (grid[x].powi(2) + grid[y].powi(2)) / nd;
            if constant {
                occupation[x] += n * n * c * norm * grad;
                occupation[y] -= n * n * c * norm * grad;
                discordance[x * d + j] += c * (n * grad).powi(2) / (a * nd);
            } else {
                drift_w[x] = n * n * norm * grad;
                gamma_w[x] = (n * grad).powi(2) / (a * nd);
            }
        }
        if !constant {
            let eta0 = CylinderFunction::eta(&vec![0; d]);
            let eta1 = CylinderFunction::eta(&e);
            drift_fields.push((cj.mul(&eta0.sub(&eta1)), drift_w));
            let disc = eta0.add(&eta1).sub(&eta0.mul(&eta1).scale(2.0));
            gamma_fields.push((cj.mul(&disc), gamma_w));
        }
    }
    MartingaleWeights {
        grid,
        occupation,
        discordance,
        drift_fields,
        gamma_fields,
    }
}

struct Tracked {
    weights: MartingaleWeights,
    drift: Vec<FieldId>,
    gamma: Vec<FieldId>,
    x0: f64,
}

fn field_value(state: &SimState, grid: &[f64], rho: f64, norm: f64) -> f64 {
    state
        .configuration()
        .occupancy()
        .iter()
        .zip(grid)
        .map(|(&e, &g)| g * (e as f64 - rho))
        .sum::<f64>()
        * norm
}

/// Runs one replica of `spec`.
pub fn run_replica(spec: &EnsembleSpec, replica: u64) -> Result<ReplicaRecord> {
    let fp = spec.field_params()?;
    let torus = spec.params.torus;
    let norm = fp.normalization(&torus);
    let rho = spec.params.rho;
    let grids = spec
        .observables
        .iter()
        .map(|f| f.grid(&torus))
        .collect::<Result<Vec<_>>>()?;
    let mut state = init(spec.params.clone(), &spec.law, spec.seed, replica)?;
    let mut tracked = Vec::new();
    if spec.martingale {
        state.track_occupation()?;
        for g in &grids {
            let weights = martingale_weights(&torus, &spec.params, &fp, g.clone());
            let drift = weights
                .drift_fields
                .iter()
                .map(|(f, w)| state.add_field(f, w.clone()))
                .collect::<Result<Vec<_>>>()?;
            let gamma = weights
                .gamma_fields
                .iter()
                .map(|(f, w)| state.add_field(f, w.clone()))
                .collect::<Result<Vec<_>>>()?;
            let x0 = field_value(&state, g, rho, norm);
            tracked.push(Tracked {
                weights,
                drift,
                gamma,
                x0,
            });
        }
    }
    let k = spec.observables.len();
    let m = spec.sample_times.len();
    let mut field = vec![Vec::with_capacity(m); k];
    let mut integrated = vec![Vec::with_capacity(m); k];
    let mut mart = vec![Vec::with_capacity(m); k];
    let mut gam = vec![Vec::with_capacity(m); k];
    let horizon = *spec.sample_times.last().unwrap();
    let bonds = state.bond_count();
    state
        .run_until(horizon, &spec.sample_times, |st, t| {
            for (i, g) in grids.iter().enumerate() {
                let x = field_value(st, g, rho, norm);
                field[i].push(x);
                if let Some(tr) = tracked.get(i) {
                    let w = &tr.weights;
                    let mut occ_int = 0.0;
                    let mut drift = 0.0;
                    for s in 0..torus.size() {
                        let o = st.occupation_time(s, t).unwrap_or(0.0);
                        occ_int += w.grid[s] * (o - rho * t);
                        drift += w.occupation[s] * o;
                    }
                    let mut gamma = 0.0;
                    for b in 0..bonds {
                        if w.discordance[b] != 0.0 {
                            gamma += w.discordance[b] * st.discordance_time(b, t).unwrap_or(0.0);
                        }
                    }
                    for &id in &tr.drift {
                        drift += st.field(id).integral_at(t);
                    }
                    for &id in &tr.gamma {
                        gamma += st.field(id).integral_at(t);
                    }
                    integrated[i].push(occ_int * norm);
                    mart[i].push(x - tr.x0 - drift);
                    gam[i].push(gamma);
                }
            }
            Ok(())
        })
        .map_err(|e| Error::InvalidParameter(format!("replica {replica}: {e}")))?;
    let log = state.log();
    Ok(ReplicaRecord {
        replica,
        field,
        integrated: spec.martingale.then_some(integrated),
        martingale: spec.martingale.then_some(mart),
        gamma_integral: spec.martingale.then_some(gam),
        exclusion_events: log.exclusion,
        voter_events: log.voter,
    })
}

/// Runs every replica (in parallel) and returns the records in replica order.
pub fn run_replicas(spec: &EnsembleSpec) -> Result<Vec<ReplicaRecord>> {
    spec.validate()?;
    (0..spec.replicas)
        .into_par_iter()
        .map(|r| run_replica(spec, r))
        .collect()
}

/// Field traces of the records, one per (replica, observable).
pub fn traces(spec: &EnsembleSpec, records: &[ReplicaRecord]) -> Result<Vec<FieldTrace>> {
    let mut out = Vec::new();
    for rec in records {
        for (i, obs) in spec.observables.iter().enumerate() {
            let mut tr = FieldTrace::new(rec.replica, obs.label());
            for (j, &t) in spec.sample_times.iter().enumerate() {
                tr.push(t, rec.field[i][j])?;
            }
            if let Some(integ) = &rec.integrated {
                tr.integrated = Some(integ[i].clone());
                tr.method = Some(IntegrationMethod::EventExact);
            }
            out.push(tr);
        }
    }
    Ok(out)
}

/// One line of a [`StatReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub observable: String,
    /// `mean`, `variance`, `covariance`, `integrated_variance`,
    /// `martingale_mean`, `martingale_second_moment`, `gamma_integral` or
    /// `martingale_minus_gamma`.
    pub quantity: String,
    pub t1: f64,
    pub t2: f64,
    pub replicas: usize,
    pub estimate: f64,
    pub se: f64,
    pub target: Option<f64>,
    pub z: Option<f64>,
    /// `|estimate/target − 1|`.
    pub rel_err: Option<f64>,
    /// Finite-`n` Gaussian prediction for Bernoulli starts with constant rates.
    pub finite_n_prediction: Option<f64>,
    pub degenerate: bool,
    /// `|z| ≤ 3` when a target exists.
    pub pass: Option<bool>,
}

impl StatRow {
    fn new(
        observable: &str,
        quantity: &str,
        t1: f64,
        t2: f64,
        replicas: usize,
        estimate: f64,
        se: f64,
    ) -> Self {
        Self {
            observable: observable.into(),
            quantity: quantity.into(),
            t1,
            t2,
            replicas,
            estimate,
            se,
            target: None,
            z: None,
            rel_err: None,
            finite_n_prediction: None,
            degenerate: !(se > 0.0),
            pass: None,
        }
    }

    fn with_target(mut self, target: Option<f64>) -> Self {
        self.target = target;
        if let Some(t) = target {
            if !self.degenerate {
                let z = (self.estimate - t) / self.se;
                self.z = Some(z);
                self.pass = Some(z.abs() <= Z_BAND);
            } else {
                self.pass = Some(false);
            }
            if t != 0.0 {
                self.rel_err = Some((self.estimate / t - 1.0).abs());
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub replicas: u64,
    pub seed: u64,
    pub rows: Vec<StatRow>,
}

impl StatReport {
    /// No targeted row outside the band and no degenerate row.
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    pub fn find(&self, observable: &str, quantity: &str, t1: f64, t2: f64) -> Option<&StatRow> {
        self.rows.iter().find(|r| {
            r.observable == observable && r.quantity == quantity && r.t1 == t1 && r.t2 == t2
        })
    }
}

/// Gaussian prediction at finite `n` for a Fourier mode under a Bernoulli
/// start with constant rates: the mode decays at rate
/// `μ = Σ_j (n² c_j + a_n)·2(1 − cos 2πm_j/n)` and receives noise
/// `q = 2χ Σ_j n² c_j·2(1 − cos 2πm_j/n)/a_n + 4dχ` per unit time, on top
/// of the initial variance `χ/a_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteNPrediction {
    pub mu: f64,
    pub q: f64,
    pub v0: f64,
}

impl FiniteNPrediction {
    pub fn new(spec: &EnsembleSpec, f: &TestFunction) -> Option<Self> {
        let m = match f {
            TestFunction::FourierCos { m } | TestFunction::FourierSin { m } => m.clone(),
            _ => return None,
        };
        let rho0 = match spec.law {
            InitialLaw::Bernoulli { rho } => rho,
            _ => return None,
        };
        if !spec.params.rates.is_constant() || rho0 != spec.params.rho {
            return None;
        }
        let torus = spec.params.torus;
        let n = torus.side() as f64;
        let chi = spec.params.rho * (1.0 - spec.params.rho);
        let a = spec.params.a_n;
        let grid = f.grid(&torus).ok()?;
        let discrete_norm = grid.iter().map(|v| v * v).sum::<f64>() / torus.size() as f64;
        let (mut mu, mut excl) = (0.0, 0.0);
        for (j, &mj) in m.iter().enumerate() {
            let c = spec.params.rates.rate(j).coefficient(&[]);
            let k = 2.0 * (1.0 - (2.0 * std::f64::consts::PI * mj as f64 / n).cos());
            mu += (n * n * c + a) * k;
            excl += n * n * c * k;
        }
        let d = torus.dim() as f64;
        Some(Self {
            mu,
            q: (2.0 * chi * excl / a + 4.0 * d * chi) * discrete_norm,
            v0: chi / a * discrete_norm,
        })
    }

    pub fn variance(&self, t: f64) -> f64 {
        let e = (-2.0 * self.mu * t).exp();
        if self.mu == 0.0 {
            return self.v0 + self.q * t;
        }
        e * self.v0 + self.q * (1.0 - e) / (2.0 * self.mu)
    }

    pub fn covariance(&self, s: f64, t: f64) -> f64 {
        (-self.mu * (t - s)).exp() * self.variance(s)
    }

    pub fn martingale_second_moment(&self, t: f64) -> f64 {
        self.q * t
    }
}

/// Builds the limit model for constant-rate families.
pub fn ssep_limit_model(spec: &EnsembleSpec) -> Result<Option<LimitModel>> {
    if !spec.params.rates.is_constant() {
        return Ok(None);
    }
    let d = spec.params.torus.dim();
    let cs: Vec<f64> = (0..d)
        .map(|j| spec.params.rates.rate(j).coefficient(&[]))
        .collect();
    if cs.iter().any(|&c| c != cs[0]) {
        return Ok(None);
    }
    let mut model = build_limit_model(&crate::cylinder::GradientData::ssep(d), spec.params.rho, d)?;
    for row in model.h_matrix.iter_mut() {
        for v in row.iter_mut() {
            *v *= cs[0];
        }
    }
    Ok(Some(model))
}

/// Reduces replica records into estimates, joined with limit targets
/// where `model` is given.
pub fn summarize(
    spec: &EnsembleSpec,
    records: &[ReplicaRecord],
    model: Option<&LimitModel>,
) -> Result<StatReport> {
    let times = &spec.sample_times;
    let r = records.len();
    let mut rows = Vec::new();
    for (i, obs) in spec.observables.iter().enumerate() {
        let label = obs.label();
        let comb = model.and_then(|_| ModeCombination::from_test_function(obs).ok());
        let pred = FiniteNPrediction::new(spec, obs);
        let col =
            |sel: &dyn Fn(&ReplicaRecord) -> f64| records.iter().map(sel).collect::<Vec<f64>>();
        for (j, &t) in times.iter().enumerate() {
            let xs = col(&|rec| rec.field[i][j]);
            let e = Estimate::from_samples(&xs)?;
            rows.push(
                StatRow::new(&label, "mean", t, t, r, e.mean, e.se_mean).with_target(Some(0.0)),
            );
            let target = match (model, &comb) {
                (Some(m), Some(c)) => Some(cov_limit(m, t, t, c, c)?),
                _ => None,
            };
            let mut row = StatRow::new(&label, "variance", t, t, r, e.variance, e.se_variance)
                .with_target(target);
            row.finite_n_prediction = pred.map(|p| p.variance(t));
            rows.push(row);
            for (k, &u) in times.iter().enumerate().skip(j + 1) {
                let ys = col(&|rec| rec.field[i][k]);
                let (cov, se) = covariance_estimate(&xs, &ys)?;
                let target = match (model, &comb) {
                    (Some(m), Some(c)) => Some(cov_limit(m, t, u, c, c)?),
                    _ => None,
                };
                let mut row =
                    StatRow::new(&label, "covariance", t, u, r, cov, se).with_target(target);
                row.finite_n_prediction = pred.map(|p| p.covariance(t, u));
                rows.push(row);
            }
            if records.iter().all(|rec| rec.martingale.is_some()) {
                let ms = col(&|rec| rec.martingale.as_ref().unwrap()[i][j]);
                let gs = col(&|rec| rec.gamma_integral.as_ref().unwrap()[i][j]);
                let ints = col(&|rec| rec.integrated.as_ref().unwrap()[i][j]);
                let em = Estimate::from_samples(&ms)?;
                rows.push(
                    StatRow::new(&label, "martingale_mean", t, t, r, em.mean, em.se_mean)
                        .with_target(Some(0.0)),
                );
                let m2: Vec<f64> = ms.iter().map(|m| m * m).collect();
                let e2 = Estimate::from_samples(&m2)?;
                let target = match (model, &comb) {
                    (Some(m), Some(c)) => Some(martingale_cov(m, t, t, c, c)),
                    _ => None,
                };
                let mut row = StatRow::new(
                    &label,
                    "martingale_second_moment",
                    t,
                    t,
                    r,
                    e2.mean,
                    e2.se_mean,
                )
                .with_target(target);
                row.finite_n_prediction = pred.map(|p| p.martingale_second_moment(t));
                rows.push(row);
                let eg = Estimate::from_samples(&gs)?;
                rows.push(StatRow::new(
                    &label,
                    "gamma_integral",
                    t,
                    t,
                    r,
                    eg.mean,
                    eg.se_mean,
                ));
                let diff: Vec<f64> = m2.iter().zip(&gs).map(|(a, b)| a - b).collect();
                let ed = Estimate::from_samples(&diff)?;
                rows.push(
                    StatRow::new(
                        &label,
                        "martingale_minus_gamma",
                        t,
                        t,
                        r,
                        ed.mean,
                        ed.se_mean,
                    )
                    .with_target(Some(0.0)),
                );
                let ei = Estimate::from_samples(&ints)?;
                let target = match (model, &comb) {
                    (Some(m), Some(c)) if t > 0.0 => {
                        Some(crate::she::integrated_cov(m, t, t, c, c))
                    }
                    _ => None,
                };
                rows.push(
                    StatRow::new(
                        &label,
                        "integrated_variance",
                        t,
                        t,
                        r,
                        ei.variance,
                        ei.se_variance,
                    )
                    .with_target(target),
                );
            }
        }
    }
    Ok(StatReport {
        replicas: spec.replicas,
        seed: spec.seed,
        rows,
    })
}

/// [`run_replicas`] followed by [`summarize`] against the constant-rate
/// limit model when one exists.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<(StatReport, Vec<ReplicaRecord>)> {
    let records = run_replicas(spec)?;
    let model = ssep_limit_model(spec)?;
    Ok((summarize(spec, &records, model.as_ref())?, records))
}

/// Writes a [`StatReport`] as CSV.
pub fn write_stat_csv<W: std::io::Write>(report: &StatReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "observable",
        "quantity",
        "t1",
        "t2",
        "replicas",
        "estimate",
        "se",
        "target",
        "z",
        "rel_err",
        "finite_n_prediction",
        "degenerate",
        "pass",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in &report.rows {
        out.write_record([
            r.observable.clone(),
            r.quantity.clone(),
            format!("{:e}", r.t1),
            format!("{:e}", r.t2),
            r.replicas.to_string(),
            format!("{:e}", r.estimate),
            format!("{:e}", r.se),
            opt(r.target),
            opt(r.z),
            opt(r.rel_err),
            opt(r.finite_n_prediction),
            r.degenerate.to_string(),
            r.pass.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `{experiment, pass, details}` written next to every experiment's CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub experiment: String,
    pub pass: bool,
    pub details: serde_json::Value,
}

impl Verdict {
    pub fn new(experiment: impl Into<String>, pass: bool, details: serde_json::Value) -> Self {
        Self {
            experiment: experiment.into(),
            pass,
            details,
        }
    }
}
