//! Exact computations on the full state space `{0,1}^{T^d_n}` of small tori.
//!
//! States are indexed by the occupancy word: site `i` is bit `i`.

mod evolve;
mod functionals;
mod generator;
mod sparse;

pub use evolve::{
    entropy_derivative, entropy_production_report, evolve, evolve_grid, r_d, relative_entropy,
    write_entropy_csv, EntropyParams, EntropyReport, EntropyRow, ENTROPY_SLACK,
};
pub use functionals::{
    carre_du_champ, compensator_check, dirichlet_form, dirichlet_via_generator, gamma_k,
    gamma_k_binomial, omega, omega_avg, sample_martingale, v_ell, v_ell_product_form, v_function,
    v_vector, CompensatorReport, MartingaleSample,
};
pub use generator::{
    adjoint, adjoint_voter_closed_form, build_generator, stationarity_defect, GeneratorKind,
    GeneratorMatrix, StationarityDefect,
};
pub use sparse::{DenseLike, SparseMatrix};

use crate::error::{Error, Result};
use crate::lattice::{Configuration, Torus};

/// Largest torus (in sites) handled by exact enumeration.
pub const MAX_EXACT_SITES: usize = 20;

pub(crate) fn check_sites(torus: &Torus, max: usize) -> Result<()> {
    if torus.size() > max {
        return Err(Error::StateSpaceTooLarge {
            sites: torus.size(),
            max,
        });
    }
    Ok(())
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidDensity(rho));
    }
    Ok(())
}

/// Number of states `2^{n^d}`.
pub fn state_count(torus: &Torus) -> usize {
    1usize << torus.size()
}

/// Writes the occupancy of state `word` into `occ`.
#[inline]
pub(crate) fn fill_occupancy(word: usize, occ: &mut [u8]) {
    for (i, o) in occ.iter_mut().enumerate() {
        *o = (word >> i & 1) as u8;
    }
}

/// `ν_ρ(η)` for every state.
pub fn bernoulli_vector(torus: &Torus, rho: f64) -> Result<Vec<f64>> {
    check_sites(torus, MAX_EXACT_SITES)?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidDensity(rho));
    }
    let n = torus.size() as u32;
    let pw: Vec<f64> = (0..=n)
        .map(|k| rho.powi(k as i32) * (1.0 - rho).powi((n - k) as i32))
        .collect();
    Ok((0..state_count(torus))
        .map(|w| pw[(w as u64).count_ones() as usize])
        .collect())
}

/// Evaluates `g` on every state.
pub fn tabulate<F: FnMut(&Configuration) -> f64>(torus: &Torus, mut g: F) -> Result<Vec<f64>> {
    check_sites(torus, MAX_EXACT_SITES)?;
    Ok((0..state_count(torus))
        .map(|w| g(&Configuration::from_word(*torus, w as u64)))
        .collect())
}

/// `∫ f dμ` for weights `mu`.
pub fn expectation(mu: &[f64], f: &[f64]) -> f64 {
    mu.iter().zip(f).map(|(a, b)| a * b).sum()
}

/// A probability vector over the states of a small torus.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionVector {
    torus: Torus,
    probs: Vec<f64>,
}

/// Mass tolerance of [`DistributionVector::new`].
pub const MASS_TOL: f64 = 1e-12;

impl DistributionVector {
    pub fn new(torus: Torus, probs: Vec<f64>) -> Result<Self> {
        check_sites(&torus, MAX_EXACT_SITES)?;
        if probs.len() != state_count(&torus) {
            return Err(Error::DimensionMismatch {
                expected: state_count(&torus),
                got: probs.len(),
            });
        }
        if let Some(&p) = probs.iter().find(|&&p| !(p >= 0.0)) {
            return Err(Error::NegativeDensity(p));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!("total mass {total}")));
        }
        Ok(Self { torus, probs })
    }

    /// Product Bernoulli law `ν_ρ`.
    pub fn bernoulli(torus: Torus, rho: f64) -> Result<Self> {
        let probs = bernoulli_vector(&torus, rho)?;
        Ok(Self { torus, probs })
    }

    /// Point mass at `eta`.
    pub fn dirac(eta: &Configuration) -> Result<Self> {
        let torus = *eta.torus();
        check_sites(&torus, MAX_EXACT_SITES)?;
        let mut probs = vec![0.0; state_count(&torus)];
        probs[eta.to_word() as usize] = 1.0;
        Ok(Self { torus, probs })
    }

    /// `μ = f ν_ρ` for a density `f`.
    pub fn from_density(torus: Torus, rho: f64, f: &[f64]) -> Result<Self> {
        let nu = bernoulli_vector(&torus, rho)?;
        if f.len() != nu.len() {
            return Err(Error::DimensionMismatch {
                expected: nu.len(),
                got: f.len(),
            });
        }
        Self::new(torus, nu.iter().zip(f).map(|(a, b)| a * b).collect())
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Density `dμ/dν_ρ`.
    pub fn density(&self, rho: f64) -> Result<Vec<f64>> {
        check_rho(rho)?;
        let nu = bernoulli_vector(&self.torus, rho)?;
        Ok(self.probs.iter().zip(&nu).map(|(p, q)| p / q).collect())
    }

    pub(crate) fn from_raw(torus: Torus, probs: Vec<f64>) -> Self {
        Self { torus, probs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_vector_sums_to_one() {
        let t = Torus::new(1, 6).unwrap();
        let nu = bernoulli_vector(&t, 0.3).unwrap();
        assert_eq!(nu.len(), 64);
        assert!((nu.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((nu[0b101] - 0.3 * 0.3 * 0.7f64.powi(4)).abs() < 1e-16);
    }

    #[test]
    fn distribution_validation() {
        let t = Torus::new(1, 2).unwrap();
        assert!(DistributionVector::new(t, vec![0.5, 0.5, 0.0, 0.0]).is_ok());
        assert!(matches!(
            DistributionVector::new(t, vec![1.5, -0.5, 0.0, 0.0]),
            Err(Error::NegativeDensity(_))
        ));
        assert!(DistributionVector::new(t, vec![0.5, 0.0, 0.0, 0.0]).is_err());
        let big = Torus::new(1, 21).unwrap();
        assert!(matches!(
            DistributionVector::bernoulli(big, 0.5),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn density_of_bernoulli_is_one() {
        let t = Torus::new(2, 2).unwrap();
        let mu = DistributionVector::bernoulli(t, 0.4).unwrap();
        for f in mu.density(0.4).unwrap() {
            assert!((f - 1.0).abs() < 1e-14);
        }
    }
}
