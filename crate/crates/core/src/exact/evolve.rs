use serde::Serialize;

use super::functionals::{dirichlet_form, v_vector};
use super::generator::{build_generator, GeneratorKind, GeneratorMatrix};
use super::sparse::SparseMatrix;
use super::{bernoulli_vector, check_rho, check_sites, DistributionVector};
use crate::cylinder::RateFamily;
use crate::error::{Error, Result};
use crate::lattice::Torus;

/// Largest `Λ δ` per uniformization substep.
const MAX_SUBSTEP_INTENSITY: f64 = 10.0;
/// Poisson tail mass left out of each substep.
const POISSON_TAIL: f64 = 1e-14;

fn uniformized_step(mu: &mut [f64], gen: &SparseMatrix, lambda: f64, dt: f64, scratch: &mut [f64]) {
    let x = lambda * dt;
    let mut term = mu.to_vec();
    let mut weight = (-x).exp();
    let mut cum = weight;
    for (o, t) in mu.iter_mut().zip(&term) {
        *o = weight * t;
    }
    let mut k = 0usize;
    while 1.0 - cum > POISSON_TAIL {
        k += 1;
        gen.apply_left_into(&term, scratch);
        for (t, s) in term.iter_mut().zip(scratch.iter()) {
            *t += s / lambda;
        }
        weight *= x / k as f64;
        cum += weight;
        for (o, t) in mu.iter_mut().zip(&term) {
            *o += weight * t;
        }
        if k > 10_000 {
            break;
        }
    }
}

fn evolve_raw(mu: &mut [f64], gen: &SparseMatrix, t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("evolution time {t}")));
    }
    let lambda = gen.max_exit_rate();
    if t == 0.0 || lambda == 0.0 {
        return Ok(());
    }
    let steps = (lambda * t / MAX_SUBSTEP_INTENSITY).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let mut scratch = vec![0.0; mu.len()];
    for _ in 0..steps {
        uniformized_step(mu, gen, lambda, dt, &mut scratch);
        let total: f64 = mu.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::Integrator(format!("mass became {total}")));
        }
        for v in mu.iter_mut() {
            *v = v.max(0.0) / total;
        }
    }
    Ok(())
}

/// Solves `d/dt μ_t = μ_t L` by uniformization: `μ_t = Σ_k Poisson(Λt; k) μ P^k`
/// with `P = I + L/Λ`, in substeps of intensity at most 10 and with the
/// mass renormalized after each.
pub fn evolve(
    mu0: &DistributionVector,
    gen: &GeneratorMatrix,
    t: f64,
) -> Result<DistributionVector> {
    if mu0.torus() != &gen.torus {
        return Err(Error::InvalidParameter(
            "distribution and generator live on different tori".into(),
        ));
    }
    let mut mu = mu0.probs().to_vec();
    evolve_raw(&mut mu, &gen.matrix, t)?;
    Ok(DistributionVector::from_raw(gen.torus, mu))
}

/// `μ_t` at each time of the nondecreasing grid `times`.
pub fn evolve_grid(
    mu0: &DistributionVector,
    gen: &GeneratorMatrix,
    times: &[f64],
) -> Result<Vec<DistributionVector>> {
    let mut out = Vec::with_capacity(times.len());
    let mut mu = mu0.probs().to_vec();
    let mut now = 0.0;
    for &t in times {
        if t < now {
            return Err(Error::InvalidParameter(
                "time grid must be nondecreasing".into(),
            ));
        }
        evolve_raw(&mut mu, &gen.matrix, t - now)?;
        now = t;
        out.push(DistributionVector::from_raw(gen.torus, mu.clone()));
    }
    Ok(out)
}

/// `H(μ | ν_ρ) = Σ_η μ(η) log(μ(η)/ν_ρ(η))` with `0 log 0 = 0`.
pub fn relative_entropy(mu: &DistributionVector, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    let nu = bernoulli_vector(mu.torus(), rho)?;
    Ok(mu
        .probs()
        .iter()
        .zip(&nu)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (p / q).ln())
        .sum())
}

/// `H'(t) = Σ_η (μL)(η) (1 + log f(η))`, `f = μ/ν_ρ`. States with no mass
/// but positive inflow make the derivative `−∞`.
pub fn entropy_derivative(mu: &DistributionVector, gen: &GeneratorMatrix, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    let nu = bernoulli_vector(mu.torus(), rho)?;
    let dmu = gen.apply_left(mu.probs());
    let mut acc = 0.0;
    for ((&p, &q), &dp) in mu.probs().iter().zip(&nu).zip(&dmu) {
        if p > 0.0 {
            acc += dp * (1.0 + (p / q).ln());
        } else if dp > 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
    }
    Ok(acc)
}

/// `R_d(n)`: `√a_n` (d=1), `a_n log n` (d=2), `a_n n^{d−2}` (d≥3).
pub fn r_d(n: usize, d: usize, a_n: f64) -> f64 {
    match d {
        1 => a_n.sqrt(),
        2 => a_n * (n as f64).ln(),
        _ => a_n * (n as f64).powi(d as i32 - 2),
    }
}

#[derive(Debug, Clone)]
pub struct EntropyParams {
    pub torus: Torus,
    pub rates: RateFamily,
    pub rho: f64,
    pub a_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyRow {
    pub t: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "Hprime")]
    pub hprime: f64,
    /// `−2n² I_n(f_t)`.
    pub dirichlet_term: f64,
    /// `a_n ∫ V f_t dν_ρ`.
    #[serde(rename = "V_term")]
    pub v_term: f64,
    pub bound_rhs: f64,
    pub gronwall_envelope: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    pub rows: Vec<EntropyRow>,
    /// Smallest `C₀ ≥ 0` with `H' ≤ C₀ a_n (H + R_d(n))` on the grid.
    pub c0_fit: f64,
    pub r_d: f64,
    /// `max (H' − bound_rhs)` over the grid.
    pub max_excess: f64,
    /// `H(t) ≤ (H(0) + R_d(n)) e^{C₀ a_n t}` on the grid.
    pub envelope_holds: bool,
    pub pass: bool,
}

/// Slack allowed in the entropy production inequality.
pub const ENTROPY_SLACK: f64 = 1e-9;

/// Largest torus for the entropy production report.
pub const ENTROPY_MAX_SITES: usize = 16;

/// Evolves `μ0` under `n² L^S + a_n L^V` and compares `H'(t)` with
/// `−2n² I_n(f_t) + a_n ∫ V f_t dν_ρ` at each grid time.
pub fn entropy_production_report(
    mu0: &DistributionVector,
    params: &EntropyParams,
    times: &[f64],
) -> Result<EntropyReport> {
    let torus = params.torus;
    check_sites(&torus, ENTROPY_MAX_SITES)?;
    check_rho(params.rho)?;
    let gen = build_generator(&torus, &params.rates, GeneratorKind::Combined, params.a_n)?;
    let nu = bernoulli_vector(&torus, params.rho)?;
    let v = v_vector(&torus, params.rho)?;
    let n2 = (torus.side() * torus.side()) as f64;
    let r = r_d(torus.side(), torus.dim(), params.a_n);
    let states = evolve_grid(mu0, &gen, times)?;
    let mut rows = Vec::with_capacity(times.len());
    for (&t, mu) in times.iter().zip(&states) {
        let f: Vec<f64> = mu.probs().iter().zip(&nu).map(|(p, q)| p / q).collect();
        let h = relative_entropy(mu, params.rho)?;
        let hprime = entropy_derivative(mu, &gen, params.rho)?;
        let dirichlet_term = -2.0 * n2 * dirichlet_form(&torus, &params.rates, params.rho, &f)?;
        let v_term = params.a_n * mu.probs().iter().zip(&v).map(|(p, x)| p * x).sum::<f64>();
        let bound_rhs = dirichlet_term + v_term;
        rows.push(EntropyRow {
            t,
            h,
            hprime,
            dirichlet_term,
            v_term,
            bound_rhs,
            gronwall_envelope: 0.0,
            violated: hprime > bound_rhs + ENTROPY_SLACK,
        });
    }
    let c0_fit = rows
        .iter()
        .filter(|row| params.a_n > 0.0 && row.h + r > 0.0 && row.hprime.is_finite())
        .map(|row| row.hprime / (params.a_n * (row.h + r)))
        .fold(0.0, f64::max);
    let h0 = rows.first().map_or(0.0, |row| row.h);
    let mut envelope_holds = true;
    for row in rows.iter_mut() {
        row.gronwall_envelope = (h0 + r) * (c0_fit * params.a_n * row.t).exp();
        envelope_holds &= row.h <= row.gronwall_envelope + ENTROPY_SLACK;
    }
    let max_excess = rows
        .iter()
        .filter(|row| row.hprime.is_finite())
        .map(|row| row.hprime - row.bound_rhs)
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = rows.iter().all(|row| !row.violated);
    Ok(EntropyReport {
        rows,
        c0_fit,
        r_d: r,
        max_excess,
        envelope_holds,
        pass,
    })
}

/// CSV with columns `t,H,Hprime,dirichlet_term,V_term,bound_rhs,gronwall_envelope,violated`.
pub fn write_entropy_csv<W: std::io::Write>(report: &EntropyReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in &report.rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Configuration;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(n: usize, a_n: f64) -> EntropyParams {
        EntropyParams {
            torus: Torus::new(1, n).unwrap(),
            rates: RateFamily::ssep(1),
            rho: 0.5,
            a_n,
        }
    }

    #[test]
    fn evolve_basics() {
        let torus = Torus::new(1, 6).unwrap();
        let ex =
            build_generator(&torus, &RateFamily::ssep(1), GeneratorKind::Exclusion, 0.0).unwrap();
        let nu = DistributionVector::bernoulli(torus, 0.3).unwrap();
        assert_eq!(evolve(&nu, &ex, 0.0).unwrap(), nu);
        let later = evolve(&nu, &ex, 2.0).unwrap();
        for (a, b) in later.probs().iter().zip(nu.probs()) {
            assert!((a - b).abs() < 1e-10);
        }
        let co =
            build_generator(&torus, &RateFamily::ssep(1), GeneratorKind::Combined, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let raw: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
        let z: f64 = raw.iter().sum();
        let mu = DistributionVector::new(torus, raw.iter().map(|v| v / z).collect()).unwrap();
        let out = evolve(&mu, &co, 1.0).unwrap();
        assert!((out.total() - 1.0).abs() < 1e-12);
        assert!(out.probs().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn uniformization_matches_two_state_closed_form() {
        let gen = SparseMatrix::from_rates(2, vec![(0, 1, 3.0), (1, 0, 1.0)]).unwrap();
        for t in [0.01, 0.3, 2.0] {
            let mut mu = vec![1.0, 0.0];
            evolve_raw(&mut mu, &gen, t).unwrap();
            let expect = 0.25 + 0.75 * (-4.0 * t).exp();
            assert!((mu[0] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn entropy_examples() {
        let torus = Torus::new(1, 4).unwrap();
        let nu = DistributionVector::bernoulli(torus, 0.5).unwrap();
        assert!(relative_entropy(&nu, 0.5).unwrap().abs() < 1e-15);
        let full = DistributionVector::dirac(&Configuration::full(torus)).unwrap();
        assert!((relative_entropy(&full, 0.5).unwrap() - 4.0 * 2f64.ln()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let raw: Vec<f64> = (0..16).map(|_| rng.gen::<f64>().powi(3)).collect();
            let z: f64 = raw.iter().sum();
            let mu = DistributionVector::new(torus, raw.iter().map(|v| v / z).collect()).unwrap();
            assert!(relative_entropy(&mu, 0.3).unwrap() >= 0.0);
        }
        assert!(relative_entropy(&nu, 1.0).is_err());
    }

    #[test]
    fn entropy_derivative_matches_finite_difference() {
        let p = params(6, 1.0);
        let gen = build_generator(&p.torus, &p.rates, GeneratorKind::Combined, p.a_n).unwrap();
        let mu0 = DistributionVector::bernoulli(p.torus, 0.6).unwrap();
        let mu = evolve(&mu0, &gen, 0.05).unwrap();
        let dt = 1e-5;
        let plus = evolve(&mu, &gen, dt).unwrap();
        let minus = evolve(&mu0, &gen, 0.05 - dt).unwrap();
        let fd = (relative_entropy(&plus, 0.5).unwrap() - relative_entropy(&minus, 0.5).unwrap())
            / (2.0 * dt);
        let an = entropy_derivative(&mu, &gen, 0.5).unwrap();
        assert!((fd - an).abs() < 1e-5 * an.abs().max(1.0), "{fd} vs {an}");
    }

    #[test]
    fn stationary_start_for_exclusion_stays_at_zero_entropy() {
        let p = params(6, 0.0);
        let mu0 = DistributionVector::bernoulli(p.torus, 0.5).unwrap();
        let times: Vec<f64> = (0..5).map(|k| 0.05 * k as f64).collect();
        let rep = entropy_production_report(&mu0, &p, &times).unwrap();
        for row in &rep.rows {
            assert!(row.h.abs() < 1e-12);
            assert!(!row.violated);
        }
    }

    #[test]
    fn proposition_holds_for_small_combined_runs() {
        let p = params(6, 1.0);
        let times: Vec<f64> = (0..=10).map(|k| 0.02 * k as f64).collect();
        for rho0 in [0.5, 0.6, 0.9] {
            let mu0 = DistributionVector::bernoulli(p.torus, rho0).unwrap();
            let rep = entropy_production_report(&mu0, &p, &times).unwrap();
            assert!(rep.pass, "{rho0}: {}", rep.max_excess);
            assert!(rep.envelope_holds);
        }
        let full = DistributionVector::dirac(&Configuration::full(p.torus)).unwrap();
        let rep = entropy_production_report(&full, &p, &times).unwrap();
        assert!((rep.rows[0].h - 6.0 * 2f64.ln()).abs() < 1e-12);
        assert!(rep.rows.iter().all(|r| r.h.is_finite()));
        assert!(rep.pass);
    }

    #[test]
    fn csv_header() {
        let p = params(4, 1.0);
        let mu0 = DistributionVector::bernoulli(p.torus, 0.6).unwrap();
        let rep = entropy_production_report(&mu0, &p, &[0.0, 0.1]).unwrap();
        let mut buf = Vec::new();
        write_entropy_csv(&rep, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "t,H,Hprime,dirichlet_term,V_term,bound_rhs,gronwall_envelope,violated\n"
        ));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn r_d_values() {
        assert_eq!(r_d(8, 1, 4.0), 2.0);
        assert!((r_d(8, 2, 1.0) - 8f64.ln()).abs() < 1e-15);
        assert_eq!(r_d(8, 3, 2.0), 16.0);
    }
}
