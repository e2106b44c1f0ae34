use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::generator::GeneratorMatrix;
use super::sparse::SparseMatrix;
use super::{
    bernoulli_vector, check_rho, check_sites, fill_occupancy, state_count, MAX_EXACT_SITES,
};
use crate::cylinder::RateFamily;
use crate::error::{Error, Result};
use crate::flows::convolved_measure;
use crate::lattice::{Configuration, Torus};

/// `ω = (η − ρ)/√(ρ(1−ρ))`.
#[inline]
pub fn omega(eta: u8, rho: f64) -> f64 {
    (eta as f64 - rho) / (rho * (1.0 - rho)).sqrt()
}

fn omegas(eta: &Configuration, rho: f64) -> Vec<f64> {
    eta.occupancy().iter().map(|&e| omega(e, rho)).collect()
}

/// `V(η) = 2 Σ_j Σ_x ω_x ω_{x+e_j}`, which equals `(L^{V,*} 1)(η)`.
pub fn v_function(eta: &Configuration, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    let torus = eta.torus();
    let w = omegas(eta, rho);
    let mut acc = 0.0;
    for x in 0..torus.size() {
        for j in 0..torus.dim() {
            acc += w[x] * w[torus.step(x, j, true)];
        }
    }
    Ok(2.0 * acc)
}

fn averaged_omegas(eta: &Configuration, rho: f64, ell: usize) -> Vec<f64> {
    let torus = eta.torus();
    let w = omegas(eta, rho);
    let m = convolved_measure(ell, torus.dim());
    let offsets: Vec<(Vec<i64>, f64)> = (0..m.weights.len())
        .filter(|&i| m.weights[i] != 0.0)
        .map(|i| {
            let mut c = Vec::with_capacity(torus.dim());
            let mut k = i;
            for _ in 0..torus.dim() {
                c.push((k % m.side) as i64);
                k /= m.side;
            }
            (c, m.weights[i])
        })
        .collect();
    let tables: Vec<(Vec<u32>, f64)> = offsets
        .iter()
        .map(|(z, p)| (torus.shift_table(z), *p))
        .collect();
    (0..torus.size())
        .map(|x| tables.iter().map(|(t, p)| p * w[t[x] as usize]).sum())
        .collect()
}

/// `ω^ℓ_x = Σ_y m^{(2)}_ℓ(y) ω_{x+y}`.
pub fn omega_avg(eta: &Configuration, x: usize, ell: usize, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    let n = eta.torus().side();
    if ell == 0 || 2 * ell > n {
        return Err(Error::InvalidWindow { ell, n });
    }
    Ok(averaged_omegas(eta, rho, ell)[x])
}

/// `V_ℓ(η) = 2 Σ_j Σ_x ω_x ω^ℓ_{x+e_j}`, defined for `1 ≤ ℓ < n/4`.
pub fn v_ell(eta: &Configuration, rho: f64, ell: usize) -> Result<f64> {
    check_rho(rho)?;
    let torus = eta.torus();
    if ell == 0 || 4 * ell >= torus.side() {
        return Err(Error::InvalidWindow {
            ell,
            n: torus.side(),
        });
    }
    let w = omegas(eta, rho);
    let avg = averaged_omegas(eta, rho, ell);
    let mut acc = 0.0;
    for x in 0..torus.size() {
        for j in 0..torus.dim() {
            acc += w[x] * avg[torus.step(x, j, true)];
        }
    }
    Ok(2.0 * acc)
}

/// `Σ_j Σ_x (Σ_y m_ℓ(y) ω_{x−y}) (Σ_z m_ℓ(z) ω_{x+e_j+z})`, averages over
/// disjoint boxes. Equals `V_ℓ / 2`.
pub fn v_ell_product_form(eta: &Configuration, rho: f64, ell: usize) -> Result<f64> {
    check_rho(rho)?;
    let torus = eta.torus();
    if ell == 0 || 4 * ell >= torus.side() {
        return Err(Error::InvalidWindow {
            ell,
            n: torus.side(),
        });
    }
    let d = torus.dim();
    let w = omegas(eta, rho);
    let mass = 1.0 / (ell.pow(d as u32)) as f64;
    let cube: Vec<Vec<i64>> = (0..ell.pow(d as u32))
        .map(|mut k| {
            (0..d)
                .map(|_| {
                    let c = (k % ell) as i64;
                    k /= ell;
                    c
                })
                .collect()
        })
        .collect();
    let back: Vec<Vec<u32>> = cube
        .iter()
        .map(|y| torus.shift_table(&y.iter().map(|v| -v).collect::<Vec<_>>()))
        .collect();
    let fwd: Vec<Vec<u32>> = cube.iter().map(|z| torus.shift_table(z)).collect();
    let mut acc = 0.0;
    for x in 0..torus.size() {
        let left: f64 = back.iter().map(|t| w[t[x] as usize]).sum::<f64>() * mass;
        for j in 0..d {
            let xe = torus.step(x, j, true);
            let right: f64 = fwd.iter().map(|t| w[t[xe] as usize]).sum::<f64>() * mass;
            acc += left * right;
        }
    }
    Ok(acc)
}

/// `V` tabulated on every state.
pub fn v_vector(torus: &Torus, rho: f64) -> Result<Vec<f64>> {
    check_rho(rho)?;
    check_sites(torus, MAX_EXACT_SITES)?;
    (0..state_count(torus))
        .map(|w| v_function(&Configuration::from_word(*torus, w as u64), rho))
        .collect()
}

fn check_density(f: &[f64], len: usize) -> Result<()> {
    if f.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            got: f.len(),
        });
    }
    if let Some(&v) = f.iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::NegativeDensity(v));
    }
    Ok(())
}

/// `I_n(f) = ½ Σ_j Σ_x ∫ c_j(τ_xη) [√f(σ^{x,x+e_j}η) − √f(η)]² dν_ρ`.
pub fn dirichlet_form(torus: &Torus, rates: &RateFamily, rho: f64, f: &[f64]) -> Result<f64> {
    check_rho(rho)?;
    let nu = bernoulli_vector(torus, rho)?;
    check_density(f, nu.len())?;
    let compiled = rates
        .rates()
        .iter()
        .map(|c| c.compile(torus))
        .collect::<Result<Vec<_>>>()?;
    let sq: Vec<f64> = f.iter().map(|v| v.sqrt()).collect();
    let mut occ = vec![0u8; torus.size()];
    let mut acc = 0.0;
    for w in 0..nu.len() {
        fill_occupancy(w, &mut occ);
        for x in 0..torus.size() {
            for (j, c) in compiled.iter().enumerate() {
                let y = torus.step(x, j, true);
                if occ[x] != occ[y] {
                    let diff = sq[w ^ (1 << x) ^ (1 << y)] - sq[w];
                    acc += nu[w] * c.eval(&occ, x) * diff * diff;
                }
            }
        }
    }
    Ok(0.5 * acc)
}

/// `−∫ (L √f) √f dν_ρ`.
pub fn dirichlet_via_generator(gen: &GeneratorMatrix, rho: f64, f: &[f64]) -> Result<f64> {
    check_rho(rho)?;
    let nu = bernoulli_vector(&gen.torus, rho)?;
    check_density(f, nu.len())?;
    let sq: Vec<f64> = f.iter().map(|v| v.sqrt()).collect();
    let l = gen.apply(&sq);
    Ok(-(0..nu.len()).map(|i| nu[i] * l[i] * sq[i]).sum::<f64>())
}

/// `½ Σ_{x,y} μ(x) r(x,y) [h(y) − h(x)]²`.
pub fn carre_du_champ(h: &[f64], mu: &[f64], gen: &SparseMatrix) -> f64 {
    let mut acc = 0.0;
    for x in 0..gen.dim() {
        if mu[x] == 0.0 {
            continue;
        }
        for (y, r) in gen.row(x) {
            let dh = h[y] - h[x];
            acc += mu[x] * r * dh * dh;
        }
    }
    0.5 * acc
}

fn check_k(k: u32) -> Result<()> {
    if !(2..=4).contains(&k) {
        return Err(Error::InvalidParameter(format!(
            "Γ_k needs k in 2..=4, got {k}"
        )));
    }
    Ok(())
}

/// `Γ_k(x) = Σ_y r(x,y) [h(y) − h(x)]^k`.
pub fn gamma_k(h: &[f64], gen: &SparseMatrix, k: u32) -> Result<Vec<f64>> {
    check_k(k)?;
    Ok((0..gen.dim())
        .map(|x| {
            gen.row(x)
                .map(|(y, r)| r * (h[y] - h[x]).powi(k as i32))
                .sum()
        })
        .collect())
}

/// `Γ_k` through generator calculus: `Σ_{i=1}^k C(k,i) (−h)^{k−i} L[h^i]`,
/// e.g. `Γ₂ = L h² − 2h L h`.
pub fn gamma_k_binomial(h: &[f64], gen: &SparseMatrix, k: u32) -> Result<Vec<f64>> {
    check_k(k)?;
    let mut out = vec![0.0; gen.dim()];
    let mut binom = 1.0;
    for i in 1..=k {
        binom = binom * (k - i + 1) as f64 / i as f64;
        let hi: Vec<f64> = h.iter().map(|v| v.powi(i as i32)).collect();
        let lhi = gen.apply(&hi);
        for x in 0..out.len() {
            out[x] += binom * (-h[x]).powi((k - i) as i32) * lhi[x];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensatorReport {
    /// Largest `|𝓛(m²) − Γ₂|` over states and test values of `m`.
    pub max_defect_m2: f64,
    /// Largest `|𝓛(m⁴) − (Γ₄ + 4mΓ₃ + 6m²Γ₂)|`.
    pub max_defect_m4: f64,
}

/// Largest state space accepted by [`compensator_check`].
pub const COMPENSATOR_MAX_STATES: usize = 1 << 12;

/// Checks that `∫Γ₂` compensates `M_t(h)²` and `∫(Γ₄ + 4MΓ₃ + 6M²Γ₂)`
/// compensates `M_t(h)⁴`, where `M_t(h) = h(X_t) − h(X_0) − ∫₀ᵗ Lh`.
///
/// The pair `(X_t, M_t)` is Markov with generator
/// `𝓛Φ(x,m) = Σ_y r(x,y)[Φ(y, m + h(y) − h(x)) − Φ(x,m)] − Lh(x) ∂_mΦ(x,m)`;
/// the compensator identities say `𝓛Φ` equals the claimed integrand at
/// every `(x, m)`, which is checked on the grid `ms`.
pub fn compensator_check(h: &[f64], gen: &SparseMatrix, ms: &[f64]) -> Result<CompensatorReport> {
    if gen.dim() > COMPENSATOR_MAX_STATES {
        return Err(Error::InvalidParameter(format!(
            "compensator check limited to {COMPENSATOR_MAX_STATES} states"
        )));
    }
    let lh = gen.apply(h);
    let g2 = gamma_k_binomial(h, gen, 2)?;
    let g3 = gamma_k_binomial(h, gen, 3)?;
    let g4 = gamma_k_binomial(h, gen, 4)?;
    let mut d2: f64 = 0.0;
    let mut d4: f64 = 0.0;
    for x in 0..gen.dim() {
        for &m in ms {
            let mut l2 = -lh[x] * 2.0 * m;
            let mut l4 = -lh[x] * 4.0 * m.powi(3);
            for (y, r) in gen.row(x) {
                let mm = m + h[y] - h[x];
                l2 += r * (mm * mm - m * m);
                l4 += r * (mm.powi(4) - m.powi(4));
            }
            d2 = d2.max((l2 - g2[x]).abs());
            d4 = d4.max((l4 - (g4[x] + 4.0 * m * g3[x] + 6.0 * m * m * g2[x])).abs());
        }
    }
    Ok(CompensatorReport {
        max_defect_m2: d2,
        max_defect_m4: d4,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleSample {
    /// `M_t(h)`.
    pub m: f64,
    /// `∫₀ᵗ Γ₂(X_s) ds`.
    pub int_gamma2: f64,
    pub final_state: usize,
}

/// Samples one path of the chain from `x0` up to time `t` and returns the
/// martingale `M_t(h)` with its quadratic compensator.
pub fn sample_martingale<R: Rng + ?Sized>(
    gen: &SparseMatrix,
    h: &[f64],
    x0: usize,
    t: f64,
    rng: &mut R,
) -> Result<MartingaleSample> {
    let lh = gen.apply(h);
    let g2 = gamma_k(h, gen, 2)?;
    let mut x = x0;
    let mut clock = 0.0;
    let mut drift = 0.0;
    let mut quad = 0.0;
    loop {
        let q = gen.exit_rate(x);
        let wait = if q > 0.0 {
            let e: f64 = Exp1.sample(rng);
            e / q
        } else {
            f64::INFINITY
        };
        let dt = wait.min(t - clock);
        drift += lh[x] * dt;
        quad += g2[x] * dt;
        clock += dt;
        if clock >= t {
            break;
        }
        let mut u = rng.gen::<f64>() * q;
        let mut next = x;
        for (y, r) in gen.row(x) {
            next = y;
            if u < r {
                break;
            }
            u -= r;
        }
        x = next;
    }
    Ok(MartingaleSample {
        m: h[x] - h[x0] - drift,
        int_gamma2: quad,
        final_state: x,
    })
}
