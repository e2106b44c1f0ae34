//! Discrete torus geometry and occupation configurations.
//!
//! Sites are indexed row-major with coordinate 0 varying fastest, so the
//! site with coordinates `(c_0, .., c_{d-1})` has index `Σ c_i n^i`.
//! All coordinate arithmetic wraps with Euclidean modulo.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum supported lattice dimension.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "TorusSpec", into = "TorusSpec")]
pub struct Torus {
    d: usize,
    n: usize,
    size: usize,
}

#[derive(Serialize, Deserialize)]
struct TorusSpec {
    d: usize,
    n: usize,
}

impl TryFrom<TorusSpec> for Torus {
    type Error = Error;
    fn try_from(s: TorusSpec) -> Result<Self> {
        Torus::new(s.d, s.n)
    }
}

impl From<Torus> for TorusSpec {
    fn from(t: Torus) -> Self {
        TorusSpec { d: t.d, n: t.n }
    }
}

impl Torus {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) || n < 2 {
            return Err(Error::InvalidTorus { d, n });
        }
        let size = n
            .checked_pow(d as u32)
            .ok_or(Error::InvalidTorus { d, n })?;
        Ok(Self { d, n, size })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.n
    }

    /// Number of sites, `n^d`.
    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Row-major index of `coords`, wrapping every coordinate modulo `n`.
    pub fn site_index(&self, coords: &[i64]) -> Result<usize> {
        if coords.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: coords.len(),
            });
        }
        Ok(self.index_unchecked(coords))
    }

    #[inline]
    pub(crate) fn index_unchecked(&self, coords: &[i64]) -> usize {
        let n = self.n as i64;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for &c in coords.iter().take(self.d) {
            idx += c.rem_euclid(n) as usize * stride;
            stride *= self.n;
        }
        idx
    }

    /// Canonical coordinates of `site`, each in `0..n`.
    pub fn coords(&self, site: usize) -> Vec<i64> {
        let mut out = Vec::with_capacity(self.d);
        let mut rem = site;
        for _ in 0..self.d {
            out.push((rem % self.n) as i64);
            rem /= self.n;
        }
        out
    }

    #[inline]
    pub(crate) fn coords_array(&self, site: usize) -> [i64; MAX_DIM] {
        let mut out = [0i64; MAX_DIM];
        let mut rem = site;
        for c in out.iter_mut().take(self.d) {
            *c = (rem % self.n) as i64;
            rem /= self.n;
        }
        out
    }

    /// The site `site + offset` on the torus.
    #[inline]
    pub fn shift(&self, site: usize, offset: &[i64]) -> usize {
        let mut c = self.coords_array(site);
        for (ci, oi) in c.iter_mut().zip(offset) {
            *ci += oi;
        }
        self.index_unchecked(&c[..self.d])
    }

    /// Neighbour `site ± e_axis`.
    #[inline]
    pub fn step(&self, site: usize, axis: usize, forward: bool) -> usize {
        let stride = self.n.pow(axis as u32);
        let c = (site / stride) % self.n;
        if forward {
            if c + 1 == self.n {
                site + stride - self.n * stride
            } else {
                site + stride
            }
        } else if c == 0 {
            site + (self.n - 1) * stride
        } else {
            site - stride
        }
    }

    /// Position `x/n` of a site in the continuous torus `[0,1)^d`.
    pub fn position(&self, site: usize) -> Vec<f64> {
        self.coords(site)
            .into_iter()
            .map(|c| c as f64 / self.n as f64)
            .collect()
    }

    /// Table mapping every site to `site + offset`.
    pub fn shift_table(&self, offset: &[i64]) -> Vec<u32> {
        (0..self.size)
            .map(|s| self.shift(s, offset) as u32)
            .collect()
    }

    /// Unit vector `e_axis` as an offset.
    pub fn unit(&self, axis: usize) -> Vec<i64> {
        let mut v = vec![0; self.d];
        v[axis] = 1;
        v
    }
}

/// Occupation configuration `η ∈ {0,1}^{T^d_n}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    torus: Torus,
    occ: Vec<u8>,
}

impl Configuration {
    pub fn empty(torus: Torus) -> Self {
        Self {
            torus,
            occ: vec![0; torus.size()],
        }
    }

    pub fn full(torus: Torus) -> Self {
        Self {
            torus,
            occ: vec![1; torus.size()],
        }
    }

    pub fn from_occupancy(torus: Torus, occ: Vec<u8>) -> Result<Self> {
        if occ.len() != torus.size() {
            return Err(Error::InvalidParameter(format!(
                "occupancy has {} entries, torus has {} sites",
                occ.len(),
                torus.size()
            )));
        }
        if occ.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter(
                "occupancy values must be 0 or 1".into(),
            ));
        }
        Ok(Self { torus, occ })
    }

    /// Parses a bit string such as `"0101"` in site-index order.
    pub fn from_bits(torus: Torus, bits: &str) -> Result<Self> {
        let occ = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(Error::Parse(format!(
                    "unexpected character {other:?} in bit string"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_occupancy(torus, occ)
    }

    pub fn to_bits(&self) -> String {
        self.occ
            .iter()
            .map(|&b| if b == 1 { '1' } else { '0' })
            .collect()
    }

    /// Configuration whose site `i` holds bit `i` of `word`.
    pub fn from_word(torus: Torus, word: u64) -> Self {
        let occ = (0..torus.size()).map(|i| ((word >> i) & 1) as u8).collect();
        Self { torus, occ }
    }

    pub fn to_word(&self) -> u64 {
        debug_assert!(self.occ.len() <= 64);
        self.occ
            .iter()
            .enumerate()
            .fold(0u64, |w, (i, &b)| w | ((b as u64) << i))
    }

    #[inline]
    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    #[inline]
    pub fn get(&self, site: usize) -> u8 {
        self.occ[site]
    }

    #[inline]
    pub fn set(&mut self, site: usize, value: u8) {
        self.occ[site] = value;
    }

    #[inline]
    pub fn occupancy(&self) -> &[u8] {
        &self.occ
    }

    pub fn particle_count(&self) -> usize {
        self.occ.iter().map(|&b| b as usize).sum()
    }

    /// `σ^x η`.
    pub fn flip(&self, x: usize) -> Self {
        let mut out = self.clone();
        out.flip_in_place(x);
        out
    }

    #[inline]
    pub fn flip_in_place(&mut self, x: usize) {
        self.occ[x] ^= 1;
    }

    /// `σ^{x,y} η`.
    pub fn swap(&self, x: usize, y: usize) -> Self {
        let mut out = self.clone();
        out.swap_in_place(x, y);
        out
    }

    #[inline]
    pub fn swap_in_place(&mut self, x: usize, y: usize) {
        self.occ.swap(x, y);
    }

    /// `τ_z η`, defined by `(τ_z η)_x = η_{x+z}`.
    pub fn translate(&self, z: &[i64]) -> Result<Self> {
        if z.len() != self.torus.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.torus.dim(),
                got: z.len(),
            });
        }
        let occ = (0..self.torus.size())
            .map(|x| self.occ[self.torus.shift(x, z)])
            .collect();
        Ok(Self {
            torus: self.torus,
            occ,
        })
    }
}

/// JSON snapshot of a configuration: torus plus the occupancy bit string.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Snapshot {
    pub d: usize,
    pub n: usize,
    pub occupancy: String,
}

impl From<&Configuration> for Snapshot {
    fn from(c: &Configuration) -> Self {
        Snapshot {
            d: c.torus.dim(),
            n: c.torus.side(),
            occupancy: c.to_bits(),
        }
    }
}

impl TryFrom<Snapshot> for Configuration {
    type Error = Error;
    fn try_from(s: Snapshot) -> Result<Self> {
        Configuration::from_bits(Torus::new(s.d, s.n)?, &s.occupancy)
    }
}

impl Serialize for Configuration {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        Snapshot::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Configuration {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let snap = Snapshot::deserialize(d)?;
        Configuration::try_from(snap).map_err(serde::de::Error::custom)
    }
}
