use crate::cylinder::{CylinderFunction, LocalFunction};
use crate::error::{Error, Result};
use crate::lattice::Torus;

/// Lazily updated occupation time of every site and discordance time of
/// every bond: `∫₀ᵗ η_x(s) ds` and `∫₀ᵗ 1{η_x(s) ≠ η_{x+e_j}(s)} ds`.
#[derive(Debug, Clone)]
pub struct OccupationClock {
    site_time: Vec<f64>,
    site_last: Vec<f64>,
    bond_time: Vec<f64>,
    bond_last: Vec<f64>,
}

impl OccupationClock {
    pub fn new(sites: usize, bonds: usize) -> Self {
        Self {
            site_time: vec![0.0; sites],
            site_last: vec![0.0; sites],
            bond_time: vec![0.0; bonds],
            bond_last: vec![0.0; bonds],
        }
    }

    /// Credits site `x` up to `t` with its current value `eta_x`.
    #[inline]
    pub fn touch_site(&mut self, x: usize, eta_x: u8, t: f64) {
        if eta_x == 1 {
            self.site_time[x] += t - self.site_last[x];
        }
        self.site_last[x] = t;
    }

    #[inline]
    pub fn touch_bond(&mut self, b: usize, discordant: bool, t: f64) {
        if discordant {
            self.bond_time[b] += t - self.bond_last[b];
        }
        self.bond_last[b] = t;
    }

    /// `∫₀ᵗ η_x`, given the value held since the last touch.
    #[inline]
    pub fn site_at(&self, x: usize, eta_x: u8, t: f64) -> f64 {
        self.site_time[x]
            + if eta_x == 1 {
                t - self.site_last[x]
            } else {
                0.0
            }
    }

    #[inline]
    pub fn bond_at(&self, b: usize, discordant: bool, t: f64) -> f64 {
        self.bond_time[b]
            + if discordant {
                t - self.bond_last[b]
            } else {
                0.0
            }
    }
}

/// `S(η) = Σ_x w_x (τ_x f)(η)` maintained under local updates, with its
/// exact time integral along the piecewise-constant path.
#[derive(Debug, Clone)]
pub struct LocalField {
    f: LocalFunction,
    /// `inverse[k][s]` is the anchor `x` with `x + z_k = s`.
    inverse: Vec<Vec<u32>>,
    weights: Vec<f64>,
    values: Vec<f64>,
    sum: f64,
    integral: f64,
    last: f64,
}

impl LocalField {
    pub fn new(
        f: &CylinderFunction,
        weights: Vec<f64>,
        torus: &Torus,
        occ: &[u8],
        t: f64,
    ) -> Result<Self> {
        if weights.len() != torus.size() {
            return Err(Error::DimensionMismatch {
                expected: torus.size(),
                got: weights.len(),
            });
        }
        let lf = f.compile(torus)?;
        let inverse = lf
            .offsets()
            .iter()
            .map(|z| torus.shift_table(&z.iter().map(|v| -v).collect::<Vec<_>>()))
            .collect();
        let mut out = Self {
            f: lf,
            inverse,
            weights,
            values: Vec::new(),
            sum: 0.0,
            integral: 0.0,
            last: t,
        };
        out.rebuild(occ);
        Ok(out)
    }

    /// Recomputes every anchor value and the sum from scratch.
    pub fn rebuild(&mut self, occ: &[u8]) {
        self.values = (0..self.weights.len())
            .map(|x| self.f.eval(occ, x))
            .collect();
        self.sum = self
            .values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * w)
            .sum();
    }

    /// Accumulates the integral up to `t` at the current value.
    #[inline]
    pub fn advance(&mut self, t: f64) {
        self.integral += self.sum * (t - self.last);
        self.last = t;
    }

    /// Refreshes the anchors reading `site` after the configuration changed.
    #[inline]
    pub fn refresh_site(&mut self, site: usize, occ: &[u8]) {
        for k in 0..self.inverse.len() {
            let x = self.inverse[k][site] as usize;
            let new = self.f.eval(occ, x);
            let old = self.values[x];
            if new != old {
                self.sum += self.weights[x] * (new - old);
                self.values[x] = new;
            }
        }
    }

    pub fn value(&self) -> f64 {
        self.sum
    }

    /// `∫₀ᵗ S(η_s) ds` for `t` not before the last update.
    pub fn integral_at(&self, t: f64) -> f64 {
        self.integral + self.sum * (t - self.last)
    }

    /// `|S_incremental − S_rebuilt|`.
    pub fn drift(&self, occ: &[u8]) -> f64 {
        let fresh: f64 = (0..self.weights.len())
            .map(|x| self.f.eval(occ, x) * self.weights[x])
            .sum();
        (fresh - self.sum).abs()
    }
}
