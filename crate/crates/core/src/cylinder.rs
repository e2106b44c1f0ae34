//! Exact algebra of cylinder functions.
//!
//! A cylinder function is stored as a multilinear polynomial
//! `f(η) = Σ_B c_B η_B` over finite subsets `B ⊂ Z^d`. Subsets are sorted,
//! deduplicated lists of integer coordinate vectors, so each function has a
//! unique representation. Constants carry no sites and are dimension-free.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Configuration, Torus};

/// A point of `Z^d`.
pub type Point = Vec<i64>;
/// A finite subset of `Z^d`, kept sorted and deduplicated.
pub type Subset = Vec<Point>;

/// Coefficients at or below this magnitude are dropped after arithmetic.
pub const COEFF_EPS: f64 = 1e-14;

fn canonical(mut b: Subset) -> Subset {
    b.sort();
    b.dedup();
    b
}

fn add_point(a: &[i64], b: &[i64]) -> Point {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn unit(d: usize, axis: usize) -> Point {
    let mut v = vec![0; d];
    v[axis] = 1;
    v
}

/// Iterates over all subsets of `set` (as index masks).
fn subsets_of<T: Clone>(set: &[T]) -> impl Iterator<Item = Vec<T>> + '_ {
    (0u64..(1u64 << set.len())).map(move |mask| {
        set.iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, p)| p.clone())
            .collect()
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CylinderFunction {
    terms: BTreeMap<Subset, f64>,
}

impl CylinderFunction {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        let mut f = Self::zero();
        f.add_term(Vec::new(), c);
        f
    }

    /// The occupation variable `η_x`.
    pub fn eta(x: &[i64]) -> Self {
        Self::monomial(1.0, vec![x.to_vec()])
    }

    /// `coeff · Π_{x ∈ sites} η_x`.
    pub fn monomial(coeff: f64, sites: Vec<Point>) -> Self {
        let mut f = Self::zero();
        f.add_term(sites, coeff);
        f
    }

    pub fn from_terms<I: IntoIterator<Item = (Subset, f64)>>(terms: I) -> Self {
        let mut f = Self::zero();
        for (b, c) in terms {
            f.add_term(b, c);
        }
        f
    }

    /// Adds `coeff · η_B`, merging with an existing term.
    pub fn add_term(&mut self, sites: Subset, coeff: f64) {
        let key = canonical(sites);
        let entry = self.terms.entry(key.clone()).or_insert(0.0);
        *entry += coeff;
        if entry.abs() <= COEFF_EPS {
            self.terms.remove(&key);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Subset, f64)> {
        self.terms.iter().map(|(b, &c)| (b, c))
    }

    pub fn coefficient(&self, sites: &[Point]) -> f64 {
        self.terms
            .get(&canonical(sites.to_vec()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Lattice dimension implied by the stored sites, `None` for constants.
    pub fn dim(&self) -> Option<usize> {
        self.terms.keys().find_map(|b| b.first().map(|p| p.len()))
    }

    /// Union of all sets carrying a nonzero coefficient.
    pub fn support(&self) -> Vec<Point> {
        let set: BTreeSet<Point> = self.terms.keys().flatten().cloned().collect();
        set.into_iter().collect()
    }

    /// Largest coordinate-wise extent `max - min` of the support.
    pub fn diameter(&self) -> usize {
        support_diameter(&self.support())
    }

    /// Maximal `|B|` over stored terms.
    pub fn degree(&self) -> usize {
        self.terms.keys().map(Vec::len).max().unwrap_or(0)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_terms(self.terms.iter().map(|(b, &c)| (b.clone(), c * s)))
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (b, &c) in &other.terms {
            out.add_term(b.clone(), c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Product, using `η_x² = η_x`.
    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (a, &ca) in &self.terms {
            for (b, &cb) in &other.terms {
                let mut u = a.clone();
                u.extend(b.iter().cloned());
                out.add_term(u, ca * cb);
            }
        }
        out
    }

    /// `τ_z f`, i.e. `(τ_z f)(η) = f(τ_z η)`; every site moves by `+z`.
    pub fn translate(&self, z: &[i64]) -> Self {
        Self::from_terms(
            self.terms
                .iter()
                .map(|(b, &c)| (b.iter().map(|p| add_point(p, z)).collect(), c)),
        )
    }

    /// Evaluates `f` on a local assignment of occupation variables.
    pub fn eval_with<F: Fn(&[i64]) -> u8>(&self, eta: F) -> f64 {
        self.terms
            .iter()
            .filter(|(b, _)| b.iter().all(|p| eta(p) == 1))
            .map(|(_, &c)| c)
            .sum()
    }

    /// `(τ_x f)(η) = Σ_B c_B Π_{z∈B} η_{x+z}` on the torus.
    pub fn evaluate(&self, eta: &Configuration, x: usize) -> Result<f64> {
        let torus = eta.torus();
        self.check_fits(torus)?;
        let base = torus.coords(x);
        Ok(self.eval_with(|p| eta.get(torus.shift(torus.index_unchecked(&base), p))))
    }

    /// Rejects tori on which distinct support points would collide.
    pub fn check_fits(&self, torus: &Torus) -> Result<()> {
        if let Some(d) = self.dim() {
            if d != torus.dim() {
                return Err(Error::DimensionMismatch {
                    expected: torus.dim(),
                    got: d,
                });
            }
        }
        let diameter = self.diameter();
        if torus.side() <= diameter {
            return Err(Error::TorusTooSmall {
                n: torus.side(),
                diameter,
            });
        }
        Ok(())
    }

    /// `f̃(ρ) = E_{ν_ρ}[f] = Σ_B c_B ρ^{|B|}`.
    pub fn tilde(&self, rho: f64) -> f64 {
        self.terms
            .iter()
            .map(|(b, &c)| c * rho.powi(b.len() as i32))
            .sum()
    }

    /// `f̃'(ρ) = Σ_{B≠∅} c_B |B| ρ^{|B|-1}`.
    pub fn tilde_prime(&self, rho: f64) -> f64 {
        self.terms
            .iter()
            .filter(|(b, _)| !b.is_empty())
            .map(|(b, &c)| c * b.len() as f64 * rho.powi(b.len() as i32 - 1))
            .sum()
    }

    /// Coefficients in the centered basis `ξ^ρ_D = Π_{x∈D}(η_x − ρ)`.
    pub fn to_centered(&self, rho: f64) -> CenteredRepresentation {
        let mut terms: BTreeMap<Subset, f64> = BTreeMap::new();
        for (b, &c) in &self.terms {
            for dset in subsets_of(b) {
                let w = c * rho.powi((b.len() - dset.len()) as i32);
                *terms.entry(dset).or_insert(0.0) += w;
            }
        }
        terms.retain(|_, c| c.abs() > COEFF_EPS);
        CenteredRepresentation { rho, terms }
    }

    /// `Π_ρ f = f − f̃(ρ) − f̃'(ρ)(η_0 − ρ)`.
    pub fn pi_rho(&self, rho: f64) -> Self {
        let mut out = self.add(&Self::constant(-self.tilde(rho)));
        let slope = self.tilde_prime(rho);
        if let Some(d) = self.dim() {
            out = out.add(&Self::eta(&vec![0; d]).scale(-slope));
            out.add_term(Vec::new(), slope * rho);
        }
        out
    }

    /// Degree-one part of `Π_ρ f`, written as gradients:
    /// `Σ_{z∈A} (η_z − η_0) Σ_{B∋z} c_B ρ^{|B|−1}`.
    pub fn pi1(&self, rho: f64) -> Self {
        let Some(d) = self.dim() else {
            return Self::zero();
        };
        let origin = vec![0; d];
        let mut out = Self::zero();
        for z in self.support() {
            let weight: f64 = self
                .terms
                .iter()
                .filter(|(b, _)| b.contains(&z))
                .map(|(b, &c)| c * rho.powi(b.len() as i32 - 1))
                .sum();
            out.add_term(vec![z.clone()], weight);
            out.add_term(vec![origin.clone()], -weight);
        }
        out
    }

    /// Degree `≥ 2` part in `L²(ν_ρ)`, re-expanded in the `η_B` basis.
    pub fn pi2plus(&self, rho: f64) -> Self {
        let centered = self.to_centered(rho);
        CenteredRepresentation {
            rho,
            terms: centered
                .terms
                .into_iter()
                .filter(|(dset, _)| dset.len() >= 2)
                .collect(),
        }
        .expand()
    }

    /// Compiles `f` against a torus for repeated evaluation.
    pub fn compile(&self, torus: &Torus) -> Result<LocalFunction> {
        LocalFunction::new(self, torus)
    }
}

pub(crate) fn support_diameter(points: &[Point]) -> usize {
    let Some(first) = points.first() else {
        return 0;
    };
    (0..first.len())
        .map(|k| {
            let lo = points.iter().map(|p| p[k]).min().unwrap();
            let hi = points.iter().map(|p| p[k]).max().unwrap();
            (hi - lo) as usize
        })
        .max()
        .unwrap_or(0)
}

/// `E_{ν_ρ}[f]` by summing over every configuration of the support.
/// Independent of the closed form used by [`CylinderFunction::tilde`].
pub fn bernoulli_expectation_by_enumeration(f: &CylinderFunction, rho: f64) -> Result<f64> {
    let support = f.support();
    if support.len() > 24 {
        return Err(Error::SupportTooLarge(support.len()));
    }
    let mut total = 0.0;
    for mask in 0u64..(1u64 << support.len()) {
        let ones = mask.count_ones() as i32;
        let weight = rho.powi(ones) * (1.0 - rho).powi(support.len() as i32 - ones);
        let value = f.eval_with(|p| {
            let i = support.binary_search_by(|q| q.as_slice().cmp(p)).unwrap();
            (mask >> i & 1) as u8
        });
        total += weight * value;
    }
    Ok(total)
}

/// Representation `f = Σ_D c'_D ξ^ρ_D`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredRepresentation {
    pub rho: f64,
    pub terms: BTreeMap<Subset, f64>,
}

impl CenteredRepresentation {
    pub fn coefficient(&self, sites: &[Point]) -> f64 {
        self.terms
            .get(&canonical(sites.to_vec()))
            .copied()
            .unwrap_or(0.0)
    }

    /// Terms of degree exactly `k`.
    pub fn degree_part(&self, k: usize) -> CenteredRepresentation {
        CenteredRepresentation {
            rho: self.rho,
            terms: self
                .terms
                .iter()
                .filter(|(dset, _)| dset.len() == k)
                .map(|(dset, &c)| (dset.clone(), c))
                .collect(),
        }
    }

    /// Back to the `η_B` basis using `ξ_D = Σ_{B⊂D} (−ρ)^{|D|−|B|} η_B`.
    pub fn expand(&self) -> CylinderFunction {
        let mut out = CylinderFunction::zero();
        for (dset, &c) in &self.terms {
            for b in subsets_of(dset) {
                let k = (dset.len() - b.len()) as i32;
                out.add_term(b, c * (-self.rho).powi(k));
            }
        }
        out
    }
}

/// `Π_{x∈D} ω_x` with `ω_x = (η_x − ρ)/√(ρ(1−ρ))`.
pub fn omega_product(sites: &[Point], rho: f64) -> Result<CylinderFunction> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidDensity(rho));
    }
    let norm = (rho * (1.0 - rho)).sqrt();
    let mut out = CylinderFunction::constant(1.0);
    for p in canonical(sites.to_vec()) {
        let omega = CylinderFunction::eta(&p)
            .add(&CylinderFunction::constant(-rho))
            .scale(1.0 / norm);
        out = out.mul(&omega);
    }
    Ok(out)
}

/// Strictly positive exclusion rates `c_1, .., c_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFamily {
    d: usize,
    c: Vec<CylinderFunction>,
    c0: f64,
}

impl RateFamily {
    /// Validates positivity and independence from `η_0`, `η_{e_j}`;
    /// `c0` is the exact minimum over all local configurations.
    pub fn new(d: usize, c: Vec<CylinderFunction>) -> Result<Self> {
        if c.len() != d {
            return Err(Error::InvalidParameter(format!(
                "expected {d} rate functions, got {}",
                c.len()
            )));
        }
        let mut c0 = f64::INFINITY;
        for (j, cj) in c.iter().enumerate() {
            if let Some(dj) = cj.dim() {
                if dj != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: dj,
                    });
                }
            }
            let support = cj.support();
            let forbidden = [vec![0; d], unit(d, j)];
            if let Some(p) = support.iter().find(|p| forbidden.contains(p)) {
                return Err(Error::InvalidParameter(format!(
                    "rate c_{} depends on the bond endpoint {p:?}",
                    j + 1
                )));
            }
            if support.len() > 24 {
                return Err(Error::SupportTooLarge(support.len()));
            }
            for mask in 0u64..(1u64 << support.len()) {
                let v = cj.eval_with(|p| {
                    let i = support.binary_search_by(|q| q.as_slice().cmp(p)).unwrap();
                    (mask >> i & 1) as u8
                });
                c0 = c0.min(v);
            }
        }
        if c0.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidParameter(format!(
                "rates must be strictly positive, minimum is {c0}"
            )));
        }
        Ok(Self { d, c, c0 })
    }

    /// Symmetric simple exclusion, `c_j ≡ 1`.
    pub fn ssep(d: usize) -> Self {
        Self::new(d, vec![CylinderFunction::constant(1.0); d]).expect("ssep rates are valid")
    }

    /// One-dimensional gradient speed change `c_1 = 1 + a(η_{−1} + η_2)`.
    pub fn speed_change_example(a: f64) -> Result<Self> {
        let c = CylinderFunction::constant(1.0)
            .add(&CylinderFunction::eta(&[-1]).scale(a))
            .add(&CylinderFunction::eta(&[2]).scale(a));
        Self::new(1, vec![c])
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn rates(&self) -> &[CylinderFunction] {
        &self.c
    }

    pub fn rate(&self, j: usize) -> &CylinderFunction {
        &self.c[j]
    }

    /// Lower bound `c_0` (exact minimum).
    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn is_constant(&self) -> bool {
        self.c.iter().all(|cj| cj.degree() == 0)
    }

    /// Largest extent of the rate supports together with their bonds.
    pub fn diameter(&self) -> usize {
        self.c
            .iter()
            .enumerate()
            .map(|(j, cj)| {
                let mut pts = cj.support();
                pts.push(vec![0; self.d]);
                pts.push(unit(self.d, j));
                support_diameter(&pts)
            })
            .max()
            .unwrap_or(1)
    }
}

/// Gradient data `h_{j,k}` with `c_j(η)[η_{e_j} − η_0] = Σ_k (τ_{e_k} h_{j,k} − h_{j,k})(η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientData {
    pub h: Vec<Vec<CylinderFunction>>,
}

impl GradientData {
    /// `h_{j,k} = δ_{jk} η_0`.
    pub fn ssep(d: usize) -> Self {
        let h = (0..d)
            .map(|j| {
                (0..d)
                    .map(|k| {
                        if j == k {
                            CylinderFunction::eta(&vec![0; d])
                        } else {
                            CylinderFunction::zero()
                        }
                    })
                    .collect()
            })
            .collect();
        Self { h }
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn get(&self, j: usize, k: usize) -> &CylinderFunction {
        &self.h[j][k]
    }

    /// Gradient data for [`RateFamily::speed_change_example`], built by
    /// [`gradient_from_measures`] from
    /// `c[η_1 − η_0] = (τ_1 − 1)η_0 + a(τ_{−1} − 1)(η_0η_2) + a(τ_2 − 1)(η_{−1}η_0)`.
    pub fn speed_change_example(a: f64) -> Result<Self> {
        let g1 = CylinderFunction::eta(&[0]);
        let g2 = CylinderFunction::monomial(1.0, vec![vec![0], vec![2]]);
        let g3 = CylinderFunction::monomial(1.0, vec![vec![-1], vec![0]]);
        let m1 = SignedMeasure::new(vec![(vec![1], 1.0), (vec![0], -1.0)]);
        let m2 = SignedMeasure::new(vec![(vec![-1], a), (vec![0], -a)]);
        let m3 = SignedMeasure::new(vec![(vec![2], a), (vec![0], -a)]);
        let row = gradient_from_measures(1, &[(g1, m1), (g2, m2), (g3, m3)])?;
        Ok(Self { h: vec![row] })
    }
}

/// Finitely supported signed measure on `Z^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedMeasure {
    pub atoms: Vec<(Point, f64)>,
}

impl SignedMeasure {
    pub fn new(atoms: Vec<(Point, f64)>) -> Self {
        Self { atoms }
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum()
    }
}

/// Builds `h_{j,·}` from a representation
/// `c_j[η_{e_j} − η_0] = Σ_p Σ_y m_p(y) τ_y g_p` with zero-mass `m_p`.
///
/// Each `τ_y g − g` is telescoped along the lattice path from `0` to `y`
/// that moves coordinate 1 first, then coordinate 2, and so on; the
/// pieces are regrouped by step direction.
pub fn gradient_from_measures(
    d: usize,
    pieces: &[(CylinderFunction, SignedMeasure)],
) -> Result<Vec<CylinderFunction>> {
    let mut h = vec![CylinderFunction::zero(); d];
    for (g, m) in pieces {
        let mass = m.total_mass();
        let scale: f64 = m.atoms.iter().map(|(_, w)| w.abs()).sum::<f64>().max(1.0);
        if mass.abs() > 1e-12 * scale {
            return Err(Error::NonZeroMass(mass));
        }
        for (y, w) in &m.atoms {
            if y.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: y.len(),
                });
            }
            let mut z = vec![0i64; d];
            for (axis, &target) in y.iter().enumerate() {
                let step = target.signum();
                while z[axis] != target {
                    let mut next = z.clone();
                    next[axis] += step;
                    let piece = if step > 0 {
                        g.translate(&z)
                    } else {
                        g.translate(&next).scale(-1.0)
                    };
                    h[axis] = h[axis].add(&piece.scale(*w));
                    z = next;
                }
            }
        }
    }
    Ok(h)
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub pass: bool,
    pub max_residual: f64,
    pub sites_enumerated: usize,
}

/// Tolerance of the gradient identity.
pub const GRADIENT_TOL: f64 = 1e-12;

/// Evaluates both sides of the gradient condition on every configuration
/// of the joint support.
pub fn gradient_check(rates: &RateFamily, grad: &GradientData) -> Result<GradientReport> {
    let d = rates.dim();
    if grad.dim() != d || grad.h.iter().any(|row| row.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: grad.dim(),
        });
    }
    let mut max_residual: f64 = 0.0;
    let mut max_sites = 0;
    for j in 0..d {
        let ej = unit(d, j);
        let cj = rates.rate(j);
        let shifted: Vec<CylinderFunction> = (0..d)
            .map(|k| grad.h[j][k].translate(&unit(d, k)))
            .collect();
        let mut joint: BTreeSet<Point> = cj.support().into_iter().collect();
        joint.insert(vec![0; d]);
        joint.insert(ej.clone());
        for k in 0..d {
            joint.extend(grad.h[j][k].support());
            joint.extend(shifted[k].support());
        }
        let joint: Vec<Point> = joint.into_iter().collect();
        if joint.len() > 24 {
            return Err(Error::SupportTooLarge(joint.len()));
        }
        max_sites = max_sites.max(joint.len());
        let origin = vec![0; d];
        for mask in 0u64..(1u64 << joint.len()) {
            let eta = |p: &[i64]| {
                let i = joint.binary_search_by(|q| q.as_slice().cmp(p)).unwrap();
                (mask >> i & 1) as u8
            };
            let lhs = cj.eval_with(eta) * (eta(&ej) as f64 - eta(&origin) as f64);
            let rhs: f64 = (0..d)
                .map(|k| shifted[k].eval_with(eta) - grad.h[j][k].eval_with(eta))
                .sum();
            max_residual = max_residual.max((lhs - rhs).abs());
        }
    }
    Ok(GradientReport {
        pass: max_residual < GRADIENT_TOL,
        max_residual,
        sites_enumerated: max_sites,
    })
}

/// Largest `|J(η) − Σ_k (τ_{e_k} h_k − h_k)(η)|` over every configuration of
/// the joint support, for a current `J` given as a cylinder function.
pub fn telescoping_residual(current: &CylinderFunction, h: &[CylinderFunction]) -> Result<f64> {
    let d = h.len();
    let shifted: Vec<CylinderFunction> = h
        .iter()
        .enumerate()
        .map(|(k, hk)| hk.translate(&unit(d, k)))
        .collect();
    let mut joint: BTreeSet<Point> = current.support().into_iter().collect();
    for (hk, sk) in h.iter().zip(&shifted) {
        joint.extend(hk.support());
        joint.extend(sk.support());
    }
    let joint: Vec<Point> = joint.into_iter().collect();
    if joint.len() > 24 {
        return Err(Error::SupportTooLarge(joint.len()));
    }
    let mut worst: f64 = 0.0;
    for mask in 0u64..(1u64 << joint.len()) {
        let eta = |p: &[i64]| {
            let i = joint.binary_search_by(|q| q.as_slice().cmp(p)).unwrap();
            (mask >> i & 1) as u8
        };
        let rhs: f64 = h
            .iter()
            .zip(&shifted)
            .map(|(hk, sk)| sk.eval_with(eta) - hk.eval_with(eta))
            .sum();
        worst = worst.max((current.eval_with(eta) - rhs).abs());
    }
    Ok(worst)
}

/// A cylinder function compiled against a torus: every support offset is
/// resolved to a site-shift table.
#[derive(Debug, Clone)]
pub struct LocalFunction {
    offsets: Vec<Point>,
    tables: Vec<Vec<u32>>,
    terms: Vec<(f64, Vec<usize>)>,
    constant: f64,
}

impl LocalFunction {
    pub fn new(f: &CylinderFunction, torus: &Torus) -> Result<Self> {
        f.check_fits(torus)?;
        let offsets = f.support();
        let tables = offsets.iter().map(|p| torus.shift_table(p)).collect();
        let mut constant = 0.0;
        let mut terms = Vec::new();
        for (b, c) in f.terms() {
            if b.is_empty() {
                constant += c;
            } else {
                let idx = b
                    .iter()
                    .map(|p| offsets.binary_search(p).unwrap())
                    .collect();
                terms.push((c, idx));
            }
        }
        Ok(Self {
            offsets,
            tables,
            terms,
            constant,
        })
    }

    /// Support offsets `z` (sites `x + z` read by `τ_x f`).
    pub fn offsets(&self) -> &[Point] {
        &self.offsets
    }

    /// Site `x + offsets[k]`.
    #[inline]
    pub fn site(&self, k: usize, x: usize) -> usize {
        self.tables[k][x] as usize
    }

    /// Anchors `x` whose translate `τ_x f` reads `site`.
    pub fn anchors_reading(&self, torus: &Torus, site: usize) -> Vec<usize> {
        self.offsets
            .iter()
            .map(|z| {
                let neg: Vec<i64> = z.iter().map(|v| -v).collect();
                torus.shift(site, &neg)
            })
            .collect()
    }

    /// `(τ_x f)(η)` on raw occupancy.
    #[inline]
    pub fn eval(&self, occ: &[u8], x: usize) -> f64 {
        let mut acc = self.constant;
        for (c, idx) in &self.terms {
            if idx.iter().all(|&k| occ[self.tables[k][x] as usize] == 1) {
                acc += c;
            }
        }
        acc
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct TermSpec {
    sites: Vec<Point>,
    coeff: f64,
}

#[derive(Serialize, Deserialize)]
struct CylinderSpec {
    terms: Vec<TermSpec>,
}

impl Serialize for CylinderFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CylinderSpec {
            terms: self
                .terms
                .iter()
                .map(|(b, &c)| TermSpec {
                    sites: b.clone(),
                    coeff: c,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CylinderFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = CylinderSpec::deserialize(d)?;
        let dims: BTreeSet<usize> = spec
            .terms
            .iter()
            .flat_map(|t| t.sites.iter().map(Vec::len))
            .collect();
        if dims.len() > 1 {
            return Err(serde::de::Error::custom("sites of mixed dimension"));
        }
        Ok(CylinderFunction::from_terms(
            spec.terms.into_iter().map(|t| (t.sites, t.coeff)),
        ))
    }
}
