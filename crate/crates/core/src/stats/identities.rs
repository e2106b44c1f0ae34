//! Exact identity suite: every check compares two independent evaluations
//! of the same quantity and reports the largest discrepancy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cylinder::{
    bernoulli_expectation_by_enumeration, gradient_check, omega_product, CylinderFunction,
    GradientData, RateFamily,
};
use crate::error::{Error, Result};
use crate::exact::{
    adjoint, adjoint_voter_closed_form, bernoulli_vector, build_generator, gamma_k,
    gamma_k_binomial, GeneratorKind,
};
use crate::field::{as1_residual, field_eval, gamma_n_eval, FieldParams};
use crate::flows::{build_flow, verify_flow, FLOW_TOL};
use crate::lattice::{Configuration, Torus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    SsepD1,
    SsepD2,
    SsepD3,
    SpeedChange,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ssep-d1" => Ok(Preset::SsepD1),
            "ssep-d2" => Ok(Preset::SsepD2),
            "ssep-d3" => Ok(Preset::SsepD3),
            "speed-change" => Ok(Preset::SpeedChange),
            other => Err(Error::Parse(format!(
                "unknown preset {other:?} (expected ssep-d1, ssep-d2, ssep-d3 or speed-change)"
            ))),
        }
    }

    pub fn rates(&self) -> RateFamily {
        match self {
            Preset::SsepD1 => RateFamily::ssep(1),
            Preset::SsepD2 => RateFamily::ssep(2),
            Preset::SsepD3 => RateFamily::ssep(3),
            Preset::SpeedChange => {
                RateFamily::speed_change_example(SPEED_CHANGE_A).expect("valid example")
            }
        }
    }

    pub fn gradient(&self) -> GradientData {
        match self {
            Preset::SsepD1 => GradientData::ssep(1),
            Preset::SsepD2 => GradientData::ssep(2),
            Preset::SsepD3 => GradientData::ssep(3),
            Preset::SpeedChange => {
                GradientData::speed_change_example(SPEED_CHANGE_A).expect("valid example")
            }
        }
    }

    /// Torus for the exact-generator checks.
    pub fn exact_torus(&self) -> Torus {
        let (d, n) = match self {
            Preset::SsepD1 | Preset::SpeedChange => (1, 8),
            Preset::SsepD2 => (2, 4),
            Preset::SsepD3 => (3, 2),
        };
        Torus::new(d, n).expect("valid torus")
    }

    /// Torus for the direct rate-sum checks.
    pub fn field_torus(&self) -> Torus {
        let (d, n) = match self {
            Preset::SsepD1 | Preset::SpeedChange => (1, 8),
            Preset::SsepD2 => (2, 8),
            Preset::SsepD3 => (3, 4),
        };
        Torus::new(d, n).expect("valid torus")
    }
}

/// Parameter of the shipped speed-change example.
pub const SPEED_CHANGE_A: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: impl Into<String>, residual: f64, tolerance: f64) -> IdentityCheck {
    IdentityCheck {
        name: name.into(),
        residual,
        tolerance,
        pass: residual < tolerance,
    }
}

fn random_grid<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_configuration<R: Rng>(rng: &mut R, torus: &Torus) -> Result<Configuration> {
    let occ = (0..torus.size()).map(|_| rng.gen_range(0..=1u8)).collect();
    Configuration::from_occupancy(*torus, occ)
}

/// Largest pointwise gap between two cylinder functions over every
/// configuration of their joint support.
fn max_gap(f: &CylinderFunction, g: &CylinderFunction) -> Result<f64> {
    let diff = f.sub(g);
    let sites = diff.support();
    if sites.len() > 24 {
        return Err(Error::SupportTooLarge(sites.len()));
    }
    let mut worst: f64 = 0.0;
    for mask in 0u32..(1u32 << sites.len()) {
        let v = diff.eval_with(|z| {
            sites
                .iter()
                .position(|s| s.as_slice() == z)
                .map_or(0, |i| (mask >> i & 1) as u8)
        });
        worst = worst.max(v.abs());
    }
    Ok(worst)
}

fn projection_checks(f: &CylinderFunction, label: &str, rho: f64) -> Result<Vec<IdentityCheck>> {
    let decomposed = f.pi1(rho).add(&f.pi2plus(rho));
    let mut out = vec![check(
        format!("projection_decomposition[{label}]"),
        max_gap(&f.pi_rho(rho), &decomposed)?,
        1e-12,
    )];
    let p2 = f.pi2plus(rho);
    let mut worst: f64 = bernoulli_expectation_by_enumeration(&p2, rho)?.abs();
    for z in f.support() {
        let xi = omega_product(&[z], rho)?;
        worst = worst.max(bernoulli_expectation_by_enumeration(&p2.mul(&xi), rho)?.abs());
    }
    out.push(check(
        format!("projection_orthogonality[{label}]"),
        worst,
        1e-12,
    ));
    Ok(out)
}

/// Runs the exact identity suite for one preset. Gradient conditions are
/// checked for every shipped family regardless of the preset.
pub fn identity_suite(preset: Preset, seed: u64) -> Result<Vec<IdentityCheck>> {
    let mut out = Vec::new();
    for p in [
        Preset::SsepD1,
        Preset::SsepD2,
        Preset::SsepD3,
        Preset::SpeedChange,
    ] {
        let rep = gradient_check(&p.rates(), &p.gradient())?;
        out.push(check(
            format!("gradient_condition[{p:?}]"),
            rep.max_residual,
            1e-12,
        ));
    }
    let rates = preset.rates();
    let grad = preset.gradient();
    let rho = 0.5;
    let a_n = 1.7;
    let params = FieldParams::new(rho, a_n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let torus = preset.field_torus();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let eta = random_configuration(&mut rng, &torus)?;
        let f = random_grid(&mut rng, torus.size());
        worst = worst.max(as1_residual(&eta, &f, &params, &rates, &grad)?);
    }
    out.push(check("drift_gradient_form", worst, 1e-10));
    let constant = vec![0.8; torus.size()];
    let eta = random_configuration(&mut rng, &torus)?;
    out.push(check(
        "drift_gradient_form[constant F]",
        as1_residual(&eta, &constant, &params, &rates, &grad)?,
        1e-12,
    ));

    let torus = preset.exact_torus();
    let gen = build_generator(&torus, &rates, GeneratorKind::Combined, a_n)?;
    let states = 1usize << torus.size();
    let configs: Vec<Configuration> = (0..states as u64)
        .map(|w| Configuration::from_word(torus, w))
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let f = random_grid(&mut rng, torus.size());
        let x: Vec<f64> = configs.iter().map(|c| field_eval(c, &f, &params)).collect();
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        let (lx, lx2) = (gen.apply(&x), gen.apply(&x2));
        let w = rng.gen_range(0..states);
        let calculus = lx2[w] - 2.0 * x[w] * lx[w];
        worst = worst.max((calculus - gamma_n_eval(&configs[w], &f, &params, &rates)?).abs());
    }
    out.push(check("quadratic_variation", worst, 1e-10));

    let h = random_grid(&mut rng, states);
    for k in 2..=4 {
        let a = gamma_k(&h, &gen.matrix, k)?;
        let b = gamma_k_binomial(&h, &gen.matrix, k)?;
        let worst = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        out.push(check(format!("gamma_{k}_binomial"), worst, 1e-10));
    }

    let nu = bernoulli_vector(&torus, 0.35)?;
    let adj = adjoint(&gen, 0.35)?;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let f = random_grid(&mut rng, states);
        let g = random_grid(&mut rng, states);
        let (lf, ag) = (gen.apply(&f), adj.apply(&g));
        let lhs: f64 = (0..states).map(|i| nu[i] * lf[i] * g[i]).sum();
        let rhs: f64 = (0..states).map(|i| nu[i] * f[i] * ag[i]).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    out.push(check("adjoint_duality", worst, 1e-12));
    let voter = build_generator(&torus, &rates, GeneratorKind::Voter, 1.0)?;
    let closed = adjoint_voter_closed_form(&torus, 0.35)?;
    out.push(check(
        "voter_adjoint_closed_form",
        adjoint(&voter, 0.35)?.max_abs_diff(&closed),
        1e-12,
    ));

    let d = torus.dim();
    let o = vec![0i64; d];
    let e1 = torus.unit(0);
    let e2: Vec<i64> = e1.iter().map(|v| 2 * v).collect();
    let eta = |p: &[i64]| CylinderFunction::eta(p);
    let mut fs = vec![
        ("eta0*eta_e1".to_string(), eta(&o).mul(&eta(&e1))),
        (
            "eta0*eta_e1*eta_2e1".to_string(),
            eta(&o).mul(&eta(&e1)).mul(&eta(&e2)),
        ),
    ];
    for (j, c) in rates.rates().iter().enumerate() {
        fs.push((format!("c_{j}"), c.clone()));
    }
    for (label, f) in &fs {
        out.extend(projection_checks(f, label, 0.3)?);
    }

    for ell in [1usize, 2, 3, 8] {
        let rep = verify_flow(&build_flow(ell, d));
        out.push(check(
            format!("flow_divergence[ell={ell}]"),
            rep.max_divergence_residual,
            FLOW_TOL,
        ));
    }
    Ok(out)
}
