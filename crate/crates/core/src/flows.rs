//! Discrete flows on nearest-neighbour bonds of the cube `Λ_{2ℓ−1}`
//! connecting the Dirac mass at the origin to `m^{(2)}_ℓ = m_ℓ * m_ℓ`,
//! where `m_ℓ` is uniform on `Λ_ℓ = {0, .., ℓ−1}^d`.
//!
//! [`build_flow`] is multiscale: it transports `δ_0` to `m_ℓ` through the
//! uniform measures on cubes of side `1, 2, 4, ..`, each stage moving mass
//! one coordinate at a time, and then averages that flow over the
//! translates by `m_ℓ`. The energy stays within a constant of `g_d(ℓ)`.
//! A single-scale variant and a minimum-energy (harmonic) flow are kept
//! for comparison.

use crate::error::{Error, Result};

/// Weights of the one-dimensional `m_ℓ * m_ℓ` on `{0, .., 2ℓ−2}`.
pub fn convolved_weights_1d(ell: usize) -> Vec<f64> {
    assert!(ell >= 1);
    let l2 = (ell * ell) as f64;
    (0..2 * ell - 1)
        .map(|k| (ell - k.abs_diff(ell - 1)) as f64 / l2)
        .collect()
}

/// A measure on the cube `{0, .., side−1}^d`, stored row-major with
/// coordinate 0 fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxMeasure {
    pub d: usize,
    pub side: usize,
    pub weights: Vec<f64>,
}

impl BoxMeasure {
    pub fn at(&self, coords: &[usize]) -> f64 {
        self.weights[box_index(self.side, coords)]
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn box_index(side: usize, coords: &[usize]) -> usize {
    coords.iter().rev().fold(0, |acc, &c| acc * side + c)
}

fn box_coords(side: usize, d: usize, mut idx: usize) -> Vec<usize> {
    (0..d)
        .map(|_| {
            let c = idx % side;
            idx /= side;
            c
        })
        .collect()
}

/// `m^{(2)}_ℓ` on `Λ_{2ℓ−1}`, a product of one-dimensional triangular weights.
pub fn convolved_measure(ell: usize, d: usize) -> BoxMeasure {
    let w = convolved_weights_1d(ell);
    let side = w.len();
    let weights = (0..side.pow(d as u32))
        .map(|i| box_coords(side, d, i).iter().map(|&c| w[c]).product())
        .collect();
    BoxMeasure { d, side, weights }
}

/// Antisymmetric flux on the bonds `(y, y+e_k)` of a cube; the reverse
/// orientation is implied.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub ell: usize,
    pub d: usize,
    pub side: usize,
    /// `flux[k][idx(y)] = Φ(y, y+e_k)`; entries with `y_k = side−1` are bonds
    /// leaving the cube and must stay zero.
    pub flux: Vec<Vec<f64>>,
}

impl Flow {
    pub fn zero(ell: usize, d: usize) -> Self {
        let side = 2 * ell - 1;
        let n = side.pow(d as u32);
        Self {
            ell,
            d,
            side,
            flux: vec![vec![0.0; n]; d],
        }
    }

    /// `Φ(y, y+e_axis)`.
    pub fn get(&self, y: &[usize], axis: usize) -> f64 {
        self.flux[axis][box_index(self.side, y)]
    }

    pub fn add(&mut self, y: &[usize], axis: usize, v: f64) {
        let i = box_index(self.side, y);
        self.flux[axis][i] += v;
    }

    /// Bonds with nonzero flux as `(y, axis, Φ(y, y+e_axis))`.
    pub fn bonds(&self) -> Vec<(Vec<usize>, usize, f64)> {
        let mut out = Vec::new();
        for (axis, f) in self.flux.iter().enumerate() {
            for (i, &v) in f.iter().enumerate() {
                if v != 0.0 {
                    out.push((box_coords(self.side, self.d, i), axis, v));
                }
            }
        }
        out
    }

    /// `Σ_bonds Φ²`.
    pub fn energy(&self) -> f64 {
        self.flux.iter().flatten().map(|v| v * v).sum()
    }
}

/// One-dimensional transport flux from `mu` to `nu` on `{0, .., len−1}`:
/// `Φ(t, t+1) = Σ_{s≤t} (μ − ν)(s)`.
fn transport_1d(mu: &[f64], nu: &[f64], len: usize) -> Vec<f64> {
    // beyond the last atom the cumulative sum is zero; pin it exactly
    let end = mu.len().max(nu.len()).saturating_sub(1);
    let mut acc = 0.0;
    (0..len)
        .map(|t| {
            acc += mu.get(t).copied().unwrap_or(0.0) - nu.get(t).copied().unwrap_or(0.0);
            if t >= end {
                0.0
            } else {
                acc
            }
        })
        .collect()
}

/// Coordinate-sequential transport between product measures `⊗μ_k` and
/// `⊗ν_k`: stage `i` moves mass along axis `i` on every line, with the
/// axes before `i` already distributed as `ν` and those after still as `μ`.
fn sequential_transport(flow: &mut Flow, mu: &[f64], nu: &[f64]) {
    let (d, side) = (flow.d, flow.side);
    let profile = transport_1d(mu, nu, side);
    for axis in 0..d {
        for idx in 0..side.pow(d as u32) {
            let c = box_coords(side, d, idx);
            if c[axis] != 0 {
                continue;
            }
            let mass: f64 = (0..d)
                .filter(|&k| k != axis)
                .map(|k| {
                    let w = if k < axis { nu } else { mu };
                    w.get(c[k]).copied().unwrap_or(0.0)
                })
                .product();
            if mass == 0.0 {
                continue;
            }
            let mut y = c.clone();
            for (t, &p) in profile.iter().enumerate().take(side - 1) {
                y[axis] = t;
                flow.add(&y, axis, mass * p);
            }
        }
    }
}

fn uniform(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Averages every flux component over the translates `τ_y`, `y` uniform
/// on `Λ_ℓ`, one axis at a time.
fn box_average(flow: &mut Flow) {
    let (d, side, ell) = (flow.d, flow.side, flow.ell);
    let total = side.pow(d as u32);
    for (k, comp) in flow.flux.iter_mut().enumerate() {
        for axis in 0..d {
            let stride = side.pow(axis as u32);
            let src = comp.clone();
            for (idx, out) in comp.iter_mut().enumerate() {
                let t = (idx / stride) % side;
                if axis == k && t + 1 == side {
                    *out = 0.0;
                    continue;
                }
                let mut acc = 0.0;
                for s in 0..ell.min(t + 1) {
                    acc += src[idx - s * stride];
                }
                *out = acc / ell as f64;
            }
            debug_assert_eq!(comp.len(), total);
        }
    }
}

/// Flow `Φ_ℓ` from `δ_0` to `m^{(2)}_ℓ` supported in `Λ_{2ℓ−1}`.
pub fn build_flow(ell: usize, d: usize) -> Flow {
    assert!(ell >= 1 && (1..=3).contains(&d));
    let mut flow = Flow::zero(ell, d);
    if ell == 1 {
        return flow;
    }
    let mut sizes = vec![1usize];
    while sizes.last().unwrap() * 2 <= ell {
        sizes.push(sizes.last().unwrap() * 2);
    }
    if *sizes.last().unwrap() != ell {
        sizes.push(ell);
    }
    for w in sizes.windows(2) {
        sequential_transport(&mut flow, &uniform(w[0]), &uniform(w[1]));
    }
    // δ_0 → m_ℓ now lives in Λ_ℓ; translate-average it to connect m_ℓ to m_ℓ * m_ℓ.
    let base = flow.clone();
    box_average(&mut flow);
    for (f, b) in flow.flux.iter_mut().zip(&base.flux) {
        for (x, y) in f.iter_mut().zip(b) {
            *x += y;
        }
    }
    flow
}

/// Single-scale coordinate-sequential flow from `δ_0` straight to
/// `m^{(2)}_ℓ`. Its energy grows like `ℓ` in every dimension.
pub fn build_single_scale_flow(ell: usize, d: usize) -> Flow {
    let mut flow = Flow::zero(ell, d);
    let mut delta = vec![0.0; 2 * ell - 1];
    delta[0] = 1.0;
    sequential_transport(&mut flow, &delta, &convolved_weights_1d(ell));
    flow
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowReport {
    pub max_divergence_residual: f64,
    pub leaking_flux: f64,
    pub pass: bool,
}

/// Tolerance of the divergence identity.
pub const FLOW_TOL: f64 = 1e-14;

/// Checks support and `Σ_y Φ(x,y) = δ_0(x) − m^{(2)}_ℓ(x)` on the cube.
pub fn verify_flow(flow: &Flow) -> FlowReport {
    let (d, side) = (flow.d, flow.side);
    let target = convolved_measure(flow.ell, d);
    let mut worst: f64 = 0.0;
    let mut leak: f64 = 0.0;
    for idx in 0..side.pow(d as u32) {
        let c = box_coords(side, d, idx);
        let mut div = 0.0;
        for axis in 0..d {
            let out = flow.flux[axis][idx];
            if c[axis] + 1 == side {
                leak = leak.max(out.abs());
            } else {
                div += out;
            }
            if c[axis] > 0 {
                let mut prev = c.clone();
                prev[axis] -= 1;
                div -= flow.get(&prev, axis);
            }
        }
        let source = if idx == 0 { 1.0 } else { 0.0 };
        worst = worst.max((div - (source - target.weights[idx])).abs());
    }
    FlowReport {
        max_divergence_residual: worst,
        leaking_flux: leak,
        pass: worst < FLOW_TOL && leak == 0.0,
    }
}

/// Minimum-energy flow on the bonds of `Λ_{2ℓ−1}`: `Φ(x,y) = u(x) − u(y)`
/// with `u` solving the graph Poisson problem by conjugate gradients.
pub fn harmonic_flow(ell: usize, d: usize) -> Result<Flow> {
    let mut flow = Flow::zero(ell, d);
    let side = flow.side;
    let total = side.pow(d as u32);
    let target = convolved_measure(ell, d);
    let mut rhs: Vec<f64> = target.weights.iter().map(|w| -w).collect();
    rhs[0] += 1.0;
    let apply = |u: &[f64]| -> Vec<f64> {
        (0..total)
            .map(|i| {
                let c = box_coords(side, d, i);
                let mut acc = 0.0;
                for axis in 0..d {
                    let stride = side.pow(axis as u32);
                    if c[axis] + 1 < side {
                        acc += u[i] - u[i + stride];
                    }
                    if c[axis] > 0 {
                        acc += u[i] - u[i - stride];
                    }
                }
                acc
            })
            .collect()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut u = vec![0.0; total];
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let tol = 1e-30 * dot(&rhs, &rhs).max(1e-300);
    let mut iters = 0;
    while rr > tol {
        iters += 1;
        if iters > 20 * total + 100 {
            return Err(Error::Integrator(
                "conjugate gradient did not converge".into(),
            ));
        }
        let ap = apply(&p);
        let alpha = rr / dot(&p, &ap);
        for i in 0..total {
            u[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..total {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    for axis in 0..d {
        let stride = side.pow(axis as u32);
        for i in 0..total {
            if (i / stride) % side + 1 < side {
                flow.flux[axis][i] = u[i] - u[i + stride];
            }
        }
    }
    Ok(flow)
}

/// Energy scale `g_d(ℓ)`: `ℓ` in `d = 1`, `log ℓ` in `d = 2` (with
/// `g_2(1) = 1`), `1` in `d ≥ 3`.
pub fn g_d(ell: f64, d: usize) -> f64 {
    match d {
        1 => ell,
        2 => {
            if ell <= 1.0 {
                1.0
            } else {
                ell.ln()
            }
        }
        _ => 1.0,
    }
}

/// Real solution of `ℓ^d g_d(ℓ) = n²/a_n` as written for each dimension:
/// `n/√a_n` (d=1), `(n²/(a_n log n))^{1/2}` (d=2), `(n²/a_n)^{1/3}` (d=3).
pub fn ell_n_unclamped(n: usize, d: usize, a_n: f64) -> f64 {
    let n = n as f64;
    match d {
        1 => n / a_n.sqrt(),
        2 => (n * n / (a_n * n.ln())).sqrt(),
        _ => (n * n / a_n).powf(1.0 / d as f64),
    }
}

/// Window size `ℓ_n`: nearest integer to [`ell_n_unclamped`], clamped to
/// `[1, n/4 − 1]` so that `V_ℓ` stays defined.
pub fn ell_n(n: usize, d: usize, a_n: f64) -> usize {
    let hi = (n / 4).saturating_sub(1).max(1);
    let raw = ell_n_unclamped(n, d, a_n).round();
    if raw.is_finite() {
        (raw.max(1.0) as usize).min(hi)
    } else {
        1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub ell: usize,
    pub d: usize,
    pub energy: f64,
    pub g_d: f64,
    pub ratio: f64,
}

/// Flow energies against `g_d(ℓ)` for each window in `ells`.
pub fn scaling_study(d: usize, ells: &[usize]) -> Vec<ScalingRow> {
    ells.iter()
        .map(|&ell| {
            let energy = build_flow(ell, d).energy();
            let g = g_d(ell as f64, d);
            ScalingRow {
                ell,
                d,
                energy,
                g_d: g,
                ratio: energy / g,
            }
        })
        .collect()
}

/// Least-squares constant `C` in `energy ≈ C g_d(ℓ)`.
pub fn fit_constant(rows: &[ScalingRow]) -> f64 {
    let num: f64 = rows.iter().map(|r| r.energy * r.g_d).sum();
    let den: f64 = rows.iter().map(|r| r.g_d * r.g_d).sum();
    num / den
}

/// `Σ_bonds Φ²`.
pub fn flow_energy(flow: &Flow) -> f64 {
    flow.energy()
}

/// Writes `bond,flux` rows, the bond as `y0;y1;..|axis`.
pub fn write_flow_csv<W: std::io::Write>(flow: &Flow, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bond", "flux"])?;
    for (y, axis, v) in flow.bonds() {
        let ys: Vec<String> = y.iter().map(|c| c.to_string()).collect();
        out.write_record([format!("{}|{}", ys.join(";"), axis), format!("{v:e}")])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `ell,d,energy,g_d,ratio` rows.
pub fn write_scaling_csv<W: std::io::Write>(rows: &[ScalingRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["ell", "d", "energy", "g_d", "ratio"])?;
    for r in rows {
        out.write_record([
            r.ell.to_string(),
            r.d.to_string(),
            format!("{:e}", r.energy),
            format!("{:e}", r.g_d),
            format!("{:e}", r.ratio),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolved_measure_examples() {
        assert_eq!(convolved_measure(1, 1).weights, vec![1.0]);
        assert_eq!(convolved_measure(2, 1).weights, vec![0.25, 0.5, 0.25]);
        let m = convolved_measure(2, 2);
        assert_eq!(m.at(&[1, 1]), 0.25);
        assert_eq!(m.at(&[0, 2]), 0.0625);
        for (ell, d) in [(5, 1), (7, 2), (3, 3)] {
            assert!((convolved_measure(ell, d).total() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn build_flow_examples() {
        assert_eq!(build_flow(1, 1).energy(), 0.0);
        let f = build_flow(2, 1);
        assert_eq!(f.get(&[0], 0), 0.75);
        assert_eq!(f.get(&[1], 0), 0.25);
        assert_eq!(f.energy(), 0.625);
        let r = verify_flow(&build_flow(2, 2));
        assert_eq!(r.max_divergence_residual, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn one_dimensional_flow_is_the_cumulative_sum() {
        for ell in [3usize, 5, 8] {
            let f = build_flow(ell, 1);
            let w = convolved_weights_1d(ell);
            let mut acc = 0.0;
            for t in 0..2 * ell - 2 {
                acc += if t == 0 { 1.0 } else { 0.0 } - w[t];
                assert!((f.get(&[t], 0) - acc).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn verify_flow_detects_corruption() {
        let mut f = build_flow(3, 2);
        f.add(&[1, 1], 0, 1e-3);
        let r = verify_flow(&f);
        assert!((r.max_divergence_residual - 1e-3).abs() < 1e-15);
        assert!(!r.pass);
        let zero = Flow::zero(2, 1);
        assert_eq!(verify_flow(&zero).max_divergence_residual, 0.75);
    }

    #[test]
    fn divergence_holds_across_windows() {
        for d in 1..=2 {
            for ell in 1..=24 {
                let r = verify_flow(&build_flow(ell, d));
                assert!(r.pass, "d={d} ell={ell}: {r:?}");
            }
        }
        for ell in 1..=6 {
            assert!(verify_flow(&build_flow(ell, 3)).pass);
        }
    }

    #[test]
    fn dyadic_windows_are_exact() {
        for ell in [2usize, 4, 8, 16] {
            for d in 1..=2 {
                assert_eq!(
                    verify_flow(&build_flow(ell, d)).max_divergence_residual,
                    0.0
                );
            }
        }
    }

    #[test]
    fn harmonic_flow_is_valid_with_lower_energy() {
        for d in 1..=3 {
            for ell in [2usize, 3, 4] {
                let h = harmonic_flow(ell, d).unwrap();
                assert!(verify_flow(&h).max_divergence_residual < 1e-10);
                assert!(h.energy() <= build_flow(ell, d).energy() + 1e-12);
            }
        }
    }

    #[test]
    fn single_scale_flow_is_valid_but_energy_grows_linearly() {
        let small = build_single_scale_flow(4, 2);
        assert!(verify_flow(&small).pass);
        let big = build_single_scale_flow(32, 2);
        // energy/log ℓ keeps growing, unlike the multiscale construction
        let r_small = small.energy() / g_d(4.0, 2);
        let r_big = big.energy() / g_d(32.0, 2);
        assert!(r_big > 3.0 * r_small);
    }

    #[test]
    fn g_d_examples() {
        assert_eq!(g_d(16.0, 1), 16.0);
        assert_eq!(g_d(7.0, 3), 1.0);
        assert!((g_d(std::f64::consts::E.powi(2), 2) - 2.0).abs() < 1e-15);
        assert_eq!(g_d(1.0, 2), 1.0);
    }

    #[test]
    fn ell_n_examples() {
        assert!((ell_n_unclamped(100, 1, 4.0) - 50.0).abs() < 1e-12);
        assert_eq!(ell_n(100, 1, 4.0), 24);
        assert_eq!(ell_n(100, 3, 1.0), 22);
        assert_eq!(ell_n(100, 1, 1e9), 1);
    }

    #[test]
    fn energy_ratio_stays_bounded() {
        let ells: Vec<usize> = (4..=64).step_by(4).collect();
        for d in 1..=2 {
            let rows = scaling_study(d, &ells);
            let max = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
            let min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
            assert!(max / min < 4.0, "d={d}: {min}..{max}");
            assert!(fit_constant(&rows) > 0.0);
        }
        let rows = scaling_study(3, &[4, 8, 12, 16]);
        let max = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        let min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        assert!(max / min < 4.0);
    }

    #[test]
    fn csv_dumps() {
        let mut buf = Vec::new();
        write_flow_csv(&build_flow(2, 1), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "bond,flux\n0|0,7.5e-1\n1|0,2.5e-1\n");
        let mut buf = Vec::new();
        write_scaling_csv(&scaling_study(1, &[2]), &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("ell,d,energy,g_d,ratio\n2,1,"));
    }

    #[test]
    fn deterministic_construction() {
        assert_eq!(build_flow(7, 3), build_flow(7, 3));
    }
}
