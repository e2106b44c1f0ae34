use serde::{Deserialize, Serialize};

use super::sparse::{DenseLike, SparseMatrix};
use super::{
    bernoulli_vector, check_rho, check_sites, fill_occupancy, state_count, MAX_EXACT_SITES,
};
use crate::cylinder::{LocalFunction, RateFamily};
use crate::error::{Error, Result};
use crate::lattice::Torus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Exclusion,
    Voter,
    Combined,
}

/// Generator of the exclusion part, the voter part, or `n² L^S + a_n L^V`.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub torus: Torus,
    pub kind: GeneratorKind,
    /// Voter speed; only meaningful for the combined kind.
    pub a_n: f64,
    pub matrix: SparseMatrix,
}

impl GeneratorMatrix {
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.matrix.apply(f)
    }

    pub fn apply_left(&self, mu: &[f64]) -> Vec<f64> {
        self.matrix.apply_left(mu)
    }

    /// Largest `|row sum|`.
    pub fn row_sum_defect(&self) -> f64 {
        (0..self.matrix.dim())
            .map(|i| {
                (self.matrix.diagonal()[i] + self.matrix.row(i).map(|(_, v)| v).sum::<f64>()).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn exclusion_row(
    torus: &Torus,
    rates: &[LocalFunction],
    word: usize,
    occ: &[u8],
    scale: f64,
    out: &mut Vec<(u32, f64)>,
) {
    for x in 0..torus.size() {
        for (j, c) in rates.iter().enumerate() {
            let y = torus.step(x, j, true);
            if occ[x] != occ[y] {
                let r = c.eval(occ, x);
                out.push(((word ^ (1 << x) ^ (1 << y)) as u32, scale * r));
            }
        }
    }
}

fn voter_row(torus: &Torus, word: usize, occ: &[u8], scale: f64, out: &mut Vec<(u32, f64)>) {
    for x in 0..torus.size() {
        let mut r = 0u32;
        for j in 0..torus.dim() {
            for forward in [true, false] {
                let y = torus.step(x, j, forward);
                r += (occ[x] != occ[y]) as u32;
            }
        }
        if r > 0 {
            out.push(((word ^ (1 << x)) as u32, scale * r as f64));
        }
    }
}

/// Exact generator on `{0,1}^{T^d_n}` for `n^d ≤ 20`.
///
/// Exclusion entries are `r(η, σ^{x,x+e_j}η) = c_j(τ_xη)`, voter entries
/// `r(η, σ^xη) = Σ_{|y−x|=1} (η_y − η_x)²`, and the combined kind is
/// `n²·exclusion + a_n·voter`. Transitions reached through several bonds
/// (as on the 2-torus) add up.
pub fn build_generator(
    torus: &Torus,
    rates: &RateFamily,
    kind: GeneratorKind,
    a_n: f64,
) -> Result<GeneratorMatrix> {
    check_sites(torus, MAX_EXACT_SITES)?;
    if rates.dim() != torus.dim() {
        return Err(Error::DimensionMismatch {
            expected: torus.dim(),
            got: rates.dim(),
        });
    }
    if !(a_n >= 0.0) || !a_n.is_finite() {
        return Err(Error::InvalidParameter(format!("a_n = {a_n}")));
    }
    let compiled = rates
        .rates()
        .iter()
        .map(|c| c.compile(torus))
        .collect::<Result<Vec<_>>>()?;
    let n2 = (torus.side() * torus.side()) as f64;
    let mut occ = vec![0u8; torus.size()];
    let matrix = SparseMatrix::from_row_fn(state_count(torus), |w, buf| {
        fill_occupancy(w, &mut occ);
        match kind {
            GeneratorKind::Exclusion => exclusion_row(torus, &compiled, w, &occ, 1.0, buf),
            GeneratorKind::Voter => voter_row(torus, w, &occ, 1.0, buf),
            GeneratorKind::Combined => {
                exclusion_row(torus, &compiled, w, &occ, n2, buf);
                voter_row(torus, w, &occ, a_n, buf);
            }
        }
    });
    Ok(GeneratorMatrix {
        torus: *torus,
        kind,
        a_n,
        matrix,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityDefect {
    /// `max |ν(η) r(η,η') − ν(η') r(η',η)|`.
    pub detailed: f64,
    /// `max_η' |Σ_η ν(η) L(η,η')|`.
    pub global: f64,
}

/// How far `ν_ρ` is from reversible and from stationary for `gen`.
pub fn stationarity_defect(gen: &GeneratorMatrix, rho: f64) -> Result<StationarityDefect> {
    let nu = bernoulli_vector(&gen.torus, rho)?;
    let m = &gen.matrix;
    let mut detailed: f64 = 0.0;
    for i in 0..m.dim() {
        for (j, r) in m.row(i) {
            detailed = detailed.max((nu[i] * r - nu[j] * m.get(j, i)).abs());
        }
    }
    let global = m
        .apply_left(&nu)
        .iter()
        .fold(0.0, |a: f64, v| a.max(v.abs()));
    Ok(StationarityDefect { detailed, global })
}

/// Adjoint of `gen` in `L²(ν_ρ)`, `D^{-1} Lᵀ D` with `D = diag(ν_ρ)`.
pub fn adjoint(gen: &GeneratorMatrix, rho: f64) -> Result<DenseLike> {
    check_rho(rho)?;
    let nu = bernoulli_vector(&gen.torus, rho)?;
    gen.matrix.weighted_adjoint(&nu)
}

/// Closed form of the voter adjoint: the jump `η → σ^xη` carries
/// `Σ_{|y−x|=1} {η_xη_y (1−ρ)/ρ + (1−η_x)(1−η_y) ρ/(1−ρ)}` and the
/// diagonal is `−Σ_x Σ_{|y−x|=1} (η_x − η_y)²`.
pub fn adjoint_voter_closed_form(torus: &Torus, rho: f64) -> Result<DenseLike> {
    check_rho(rho)?;
    check_sites(torus, MAX_EXACT_SITES)?;
    let up = (1.0 - rho) / rho;
    let down = rho / (1.0 - rho);
    let mut occ = vec![0u8; torus.size()];
    let count = state_count(torus);
    let mut rows = Vec::with_capacity(count);
    let mut diag = Vec::with_capacity(count);
    for w in 0..count {
        fill_occupancy(w, &mut occ);
        let mut row = Vec::new();
        let mut dg = 0.0;
        for x in 0..torus.size() {
            let mut coef = 0.0;
            for j in 0..torus.dim() {
                for forward in [true, false] {
                    let y = torus.step(x, j, forward);
                    let (ex, ey) = (occ[x] as f64, occ[y] as f64);
                    coef += ex * ey * up + (1.0 - ex) * (1.0 - ey) * down;
                    dg -= (ex - ey) * (ex - ey);
                }
            }
            if coef != 0.0 {
                row.push(((w ^ (1 << x)) as u32, coef));
            }
        }
        row.sort_by_key(|&(j, _)| j);
        rows.push(row);
        diag.push(dg);
    }
    Ok(DenseLike { rows, diag })
}
