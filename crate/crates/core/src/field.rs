//! Density fluctuation field `X^n(F) = (n^d a_n)^{−1/2} Σ_x F(x/n)(η_x − ρ)`
//! and the functionals built on it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cylinder::{GradientData, LocalFunction, RateFamily};
use crate::error::{Error, Result};
use crate::lattice::{Configuration, Torus};

/// Default mode cutoff `M` for negative Sobolev norms.
pub const DEFAULT_MODE_CUTOFF: i64 = 8;

/// A test function on `T^d`, evaluated on the grid `x/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant {
        value: f64,
    },
    /// `√2 cos(2π m·x)`.
    FourierCos {
        m: Vec<i64>,
    },
    /// `√2 sin(2π m·x)`.
    FourierSin {
        m: Vec<i64>,
    },
    /// Values at the sites, in site order.
    Tabulated {
        values: Vec<f64>,
    },
}

impl TestFunction {
    pub fn cos(m: &[i64]) -> Self {
        TestFunction::FourierCos { m: m.to_vec() }
    }

    pub fn sin(m: &[i64]) -> Self {
        TestFunction::FourierSin { m: m.to_vec() }
    }

    pub fn constant(value: f64) -> Self {
        TestFunction::Constant { value }
    }

    /// Short label such as `cos:1,2`.
    pub fn label(&self) -> String {
        let join = |m: &[i64]| {
            m.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            TestFunction::Constant { value } => format!("const:{value}"),
            TestFunction::FourierCos { m } => format!("cos:{}", join(m)),
            TestFunction::FourierSin { m } => format!("sin:{}", join(m)),
            TestFunction::Tabulated { .. } => "tabulated".into(),
        }
    }

    /// `F(x/n)` for every site.
    pub fn grid(&self, torus: &Torus) -> Result<Vec<f64>> {
        let phase = |m: &[i64], x: usize| -> Result<f64> {
            if m.len() != torus.dim() {
                return Err(Error::DimensionMismatch {
                    expected: torus.dim(),
                    got: m.len(),
                });
            }
            let c = torus.coords(x);
            let n = torus.side() as i64;
            // reduce m·x mod n first so the angle is exact for large arguments
            let k = m
                .iter()
                .zip(&c)
                .map(|(a, b)| a * b)
                .sum::<i64>()
                .rem_euclid(n);
            Ok(2.0 * PI * k as f64 / n as f64)
        };
        match self {
            TestFunction::Constant { value } => Ok(vec![*value; torus.size()]),
            TestFunction::FourierCos { m } => (0..torus.size())
                .map(|x| Ok(2f64.sqrt() * phase(m, x)?.cos()))
                .collect(),
            TestFunction::FourierSin { m } => (0..torus.size())
                .map(|x| Ok(2f64.sqrt() * phase(m, x)?.sin()))
                .collect(),
            TestFunction::Tabulated { values } => {
                if values.len() != torus.size() {
                    return Err(Error::DimensionMismatch {
                        expected: torus.size(),
                        got: values.len(),
                    });
                }
                Ok(values.clone())
            }
        }
    }

    /// `‖F‖²_{L²(T^d)}` for the analytic kinds, the grid average otherwise.
    pub fn l2_norm_sq(&self, torus: &Torus) -> Result<f64> {
        Ok(match self {
            TestFunction::Constant { value } => value * value,
            TestFunction::FourierCos { m } | TestFunction::FourierSin { m }
                if m.iter().all(|&v| v == 0) =>
            {
                if matches!(self, TestFunction::FourierCos { .. }) {
                    2.0
                } else {
                    0.0
                }
            }
            TestFunction::FourierCos { .. } | TestFunction::FourierSin { .. } => 1.0,
            TestFunction::Tabulated { values } => {
                values.iter().map(|v| v * v).sum::<f64>() / torus.size() as f64
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub rho: f64,
    pub a_n: f64,
}

impl FieldParams {
    pub fn new(rho: f64, a_n: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidDensity(rho));
        }
        if !(a_n > 0.0) || !a_n.is_finite() {
            return Err(Error::InvalidParameter(format!("a_n = {a_n}")));
        }
        Ok(Self { rho, a_n })
    }

    /// `(a_n n^d)^{−1/2}`.
    pub fn normalization(&self, torus: &Torus) -> f64 {
        1.0 / (self.a_n * torus.size() as f64).sqrt()
    }
}

/// `X^n(F)` with `F` given on the grid.
pub fn field_eval(eta: &Configuration, f: &[f64], params: &FieldParams) -> f64 {
    let s: f64 = eta
        .occupancy()
        .iter()
        .zip(f)
        .map(|(&e, &v)| v * (e as f64 - params.rho))
        .sum();
    s * params.normalization(eta.torus())
}

/// Field value at one Fourier pair: unnormalized `cos(2πm·x)` and `sin(2πm·x)`,
/// so that `c² + s² = |X(φ_m)|²` for `φ_m = e^{2πi m·x}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeValue {
    pub m: Vec<i64>,
    pub cos: f64,
    pub sin: f64,
}

/// `γ_m = 1 + ‖m‖²`.
pub fn gamma_m(m: &[i64]) -> f64 {
    1.0 + m.iter().map(|&v| (v * v) as f64).sum::<f64>()
}

/// `Σ_{‖m‖∞ ≤ M} γ_m^{−r} (c_m² + s_m²)` over the supplied modes.
pub fn sobolev_norm_sq(modes: &[ModeValue], r: f64, cutoff: i64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("Sobolev index r = {r}")));
    }
    Ok(modes
        .iter()
        .filter(|v| v.m.iter().all(|c| c.abs() <= cutoff))
        .map(|v| gamma_m(&v.m).powf(-r) * (v.cos * v.cos + v.sin * v.sin))
        .sum())
}

/// All mode values with `‖m‖∞ ≤ cutoff`, used for `‖X^n‖²_{−r}`.
pub fn fourier_mode_values(
    eta: &Configuration,
    params: &FieldParams,
    cutoff: i64,
) -> Vec<ModeValue> {
    let torus = eta.torus();
    let d = torus.dim();
    let n = torus.side() as i64;
    let side = 2 * cutoff + 1;
    let centered: Vec<(usize, f64)> = eta
        .occupancy()
        .iter()
        .enumerate()
        .map(|(x, &e)| (x, e as f64 - params.rho))
        .collect();
    let coords: Vec<Vec<i64>> = (0..torus.size()).map(|x| torus.coords(x)).collect();
    let norm = params.normalization(torus);
    (0..side.pow(d as u32))
        .map(|mut idx| {
            let m: Vec<i64> = (0..d)
                .map(|_| {
                    let v = idx % side - cutoff;
                    idx /= side;
                    v
                })
                .collect();
            let (mut c, mut s) = (0.0, 0.0);
            for &(x, w) in &centered {
                let k = m
                    .iter()
                    .zip(&coords[x])
                    .map(|(a, b)| a * b)
                    .sum::<i64>()
                    .rem_euclid(n);
                let th = 2.0 * PI * k as f64 / n as f64;
                c += w * th.cos();
                s += w * th.sin();
            }
            ModeValue {
                m,
                cos: c * norm,
                sin: s * norm,
            }
        })
        .collect()
}

/// `(a_n n^d)^{−1/2} Σ_x G(x/n) (τ_x f)(η)`.
pub fn cylinder_field(
    eta: &Configuration,
    f: &LocalFunction,
    g: &[f64],
    params: &FieldParams,
) -> f64 {
    let occ = eta.occupancy();
    let s: f64 = g.iter().enumerate().map(|(x, &w)| w * f.eval(occ, x)).sum();
    s * params.normalization(eta.torus())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMethod {
    /// Exact integral of the piecewise-constant path, accumulated at events.
    EventExact,
    /// Trapezoid rule on the sample grid.
    Trapezoid,
}

/// Time series of one observable along one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTrace {
    pub replica: u64,
    pub observable: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub integrated: Option<Vec<f64>>,
    pub method: Option<IntegrationMethod>,
}

impl FieldTrace {
    pub fn new(replica: u64, observable: impl Into<String>) -> Self {
        Self {
            replica,
            observable: observable.into(),
            times: Vec::new(),
            values: Vec::new(),
            integrated: None,
            method: None,
        }
    }

    pub fn push(&mut self, t: f64, value: f64) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::InvalidParameter(format!(
                    "sample times must increase: {t} after {last}"
                )));
            }
        }
        self.times.push(t);
        self.values.push(value);
        Ok(())
    }
}

/// Adds the trapezoid integral `∫₀ᵗ X_s ds` on the sample grid, starting
/// from zero at the first sample. Event-exact integrals are left alone.
pub fn integrated_field(trace: &FieldTrace) -> FieldTrace {
    let mut out = trace.clone();
    if out.method == Some(IntegrationMethod::EventExact) && out.integrated.is_some() {
        return out;
    }
    let mut acc = 0.0;
    let mut integ = Vec::with_capacity(trace.values.len());
    for i in 0..trace.values.len() {
        if i > 0 {
            let dt = trace.times[i] - trace.times[i - 1];
            acc += 0.5 * dt * (trace.values[i] + trace.values[i - 1]);
        } else if trace.times[0] > 0.0 {
            acc += trace.times[0] * trace.values[0];
        }
        integ.push(acc);
    }
    out.integrated = Some(integ);
    out.method = Some(IntegrationMethod::Trapezoid);
    out
}

/// Writes `replica,t,observable,value,integrated_value` rows.
pub fn write_traces_csv<W: std::io::Write>(traces: &[FieldTrace], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["replica", "t", "observable", "value", "integrated_value"])?;
    for tr in traces {
        for i in 0..tr.times.len() {
            let integ = tr
                .integrated
                .as_ref()
                .map(|v| format!("{:e}", v[i]))
                .unwrap_or_default();
            out.write_record([
                tr.replica.to_string(),
                format!("{:e}", tr.times[i]),
                tr.observable.clone(),
                format!("{:e}", tr.values[i]),
                integ,
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn compile_all(
    fs: &[crate::cylinder::CylinderFunction],
    torus: &Torus,
) -> Result<Vec<LocalFunction>> {
    fs.iter().map(|c| c.compile(torus)).collect()
}

/// `L_n X^n(F)` as `Σ_events rate · [X(after) − X(before)]`.
pub fn drift_rate_sum(
    eta: &Configuration,
    f: &[f64],
    params: &FieldParams,
    rates: &RateFamily,
) -> Result<f64> {
    let torus = eta.torus();
    let c = compile_all(rates.rates(), torus)?;
    let occ = eta.occupancy();
    let n2 = (torus.side() * torus.side()) as f64;
    let mut acc = 0.0;
    for x in 0..torus.size() {
        for (j, cj) in c.iter().enumerate() {
            let y = torus.step(x, j, true);
            if occ[x] != occ[y] {
                // the particle moves from the occupied end to the empty one
                let (ex, ey) = (occ[x] as f64, occ[y] as f64);
                let dx = f[x] * (ey - ex) + f[y] * (ex - ey);
                acc += n2 * cj.eval(occ, x) * dx;
            }
        }
        let mut flip = 0.0;
        for j in 0..torus.dim() {
            for fw in [true, false] {
                let y = torus.step(x, j, fw);
                flip += ((occ[y] as f64) - (occ[x] as f64)).powi(2);
            }
        }
        acc += params.a_n * flip * f[x] * (1.0 - 2.0 * occ[x] as f64);
    }
    Ok(acc * params.normalization(torus))
}

/// `(Δ^n_{j,k} F)(x/n) = n² {F(x+e_j) − F(x) − F(x+e_j−e_k) + F(x−e_k)}` on the grid.
pub fn discrete_mixed_laplacian(torus: &Torus, f: &[f64], j: usize, k: usize) -> Vec<f64> {
    let n2 = (torus.side() * torus.side()) as f64;
    (0..torus.size())
        .map(|x| {
            let xj = torus.step(x, j, true);
            let xjk = torus.step(xj, k, false);
            let xk = torus.step(x, k, false);
            n2 * (f[xj] - f[x] - f[xjk] + f[xk])
        })
        .collect()
}

/// `L_n X^n(F)` in gradient form:
/// `(a_n n^d)^{−1/2} Σ_{j,k} Σ_x {h_{j,k}(τ_xη) − h̃_{j,k}(ρ)} Δ^n_{j,k}F
///  + (a_n/n²)(a_n n^d)^{−1/2} Σ_x (η_x − ρ) Δ_nF`.
pub fn drift_gradient_form(
    eta: &Configuration,
    f: &[f64],
    params: &FieldParams,
    grad: &GradientData,
) -> Result<f64> {
    let torus = eta.torus();
    let d = torus.dim();
    if grad.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: grad.dim(),
        });
    }
    let occ = eta.occupancy();
    let n2 = (torus.side() * torus.side()) as f64;
    let mut acc = 0.0;
    let mut lap = vec![0.0; torus.size()];
    for j in 0..d {
        for k in 0..d {
            let h = grad.get(j, k);
            let ht = h.tilde(params.rho);
            let hl = h.compile(torus)?;
            let djk = discrete_mixed_laplacian(torus, f, j, k);
            for x in 0..torus.size() {
                acc += (hl.eval(occ, x) - ht) * djk[x];
            }
            if j == k {
                for (l, v) in lap.iter_mut().zip(&djk) {
                    *l += v;
                }
            }
        }
    }
    let voter: f64 = (0..torus.size())
        .map(|x| (occ[x] as f64 - params.rho) * lap[x])
        .sum();
    Ok((acc + params.a_n / n2 * voter) * params.normalization(torus))
}

/// `|drift_rate_sum − drift_gradient_form|`.
pub fn as1_residual(
    eta: &Configuration,
    f: &[f64],
    params: &FieldParams,
    rates: &RateFamily,
    grad: &GradientData,
) -> Result<f64> {
    Ok((drift_rate_sum(eta, f, params, rates)? - drift_gradient_form(eta, f, params, grad)?).abs())
}

/// The quadratic variation density
/// `Γ^n = (a_n n^d)^{−1} Σ_j Σ_x c_j(τ_xη)[η_{x+e_j} − η_x]²[∇_{n,j}F]²
///        + n^{−d} Σ_x F(x/n)² Σ_{|y−x|=1} [η_y − η_x]²`,
/// with `∇_{n,j}F(x/n) = n{F(x+e_j) − F(x)}`.
pub fn gamma_n_eval(
    eta: &Configuration,
    f: &[f64],
    params: &FieldParams,
    rates: &RateFamily,
) -> Result<f64> {
    let torus = eta.torus();
    let c = compile_all(rates.rates(), torus)?;
    let occ = eta.occupancy();
    let n = torus.side() as f64;
    let nd = torus.size() as f64;
    let (mut ex, mut vo) = (0.0, 0.0);
    for x in 0..torus.size() {
        for (j, cj) in c.iter().enumerate() {
            let y = torus.step(x, j, true);
            if occ[x] != occ[y] {
                let g = n * (f[y] - f[x]);
                ex += cj.eval(occ, x) * g * g;
            }
        }
        let mut flip = 0.0;
        for j in 0..torus.dim() {
            for fw in [true, false] {
                let y = torus.step(x, j, fw);
                flip += ((occ[y] as f64) - (occ[x] as f64)).powi(2);
            }
        }
        vo += f[x] * f[x] * flip;
    }
    Ok(ex / (params.a_n * nd) + vo / nd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cylinder::{bernoulli_expectation_by_enumeration, CylinderFunction};
    use crate::exact::{bernoulli_vector, build_generator, expectation, tabulate, GeneratorKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring(n: usize) -> Torus {
        Torus::new(1, n).unwrap()
    }

    fn random_conf(rng: &mut ChaCha8Rng, torus: Torus, rho: f64) -> Configuration {
        let occ = (0..torus.size()).map(|_| rng.gen_bool(rho) as u8).collect();
        Configuration::from_occupancy(torus, occ).unwrap()
    }

    fn random_grid(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn field_examples() {
        let torus = ring(16);
        let p = FieldParams::new(0.3, 2.0).unwrap();
        let eta = Configuration::from_bits(torus, "1011000010010001").unwrap();
        let c = TestFunction::constant(1.5).grid(&torus).unwrap();
        let expect = 1.5 * (6.0 - 0.3 * 16.0) / (16.0f64 * 2.0).sqrt();
        assert!((field_eval(&eta, &c, &p) - expect).abs() < 1e-14);
        let full = Configuration::full(torus);
        let cos = TestFunction::cos(&[1]).grid(&torus).unwrap();
        assert!(field_eval(&full, &cos, &p).abs() < 1e-10);
        let sin = TestFunction::sin(&[2]).grid(&torus).unwrap();
        let sum: Vec<f64> = cos.iter().zip(&sin).map(|(a, b)| a + b).collect();
        let lin = field_eval(&eta, &cos, &p) + field_eval(&eta, &sin, &p);
        assert!((field_eval(&eta, &sum, &p) - lin).abs() < 1e-14);
    }

    #[test]
    fn field_particle_hole_antisymmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let torus = Torus::new(2, 6).unwrap();
        for _ in 0..20 {
            let eta = random_conf(&mut rng, torus, 0.4);
            let holes: Vec<u8> = eta.occupancy().iter().map(|&e| 1 - e).collect();
            let flipped = Configuration::from_occupancy(torus, holes).unwrap();
            let f = random_grid(&mut rng, torus.size());
            let a = field_eval(&eta, &f, &FieldParams::new(0.4, 1.3).unwrap());
            let b = field_eval(&flipped, &f, &FieldParams::new(0.6, 1.3).unwrap());
            assert!((a + b).abs() < 1e-13);
        }
    }

    #[test]
    fn grids_are_orthonormal() {
        let torus = Torus::new(2, 8).unwrap();
        let nd = torus.size() as f64;
        let fs = [
            TestFunction::cos(&[1, 0]),
            TestFunction::sin(&[1, 2]),
            TestFunction::cos(&[0, 3]),
        ];
        for (i, a) in fs.iter().enumerate() {
            for (j, b) in fs.iter().enumerate() {
                let ga = a.grid(&torus).unwrap();
                let gb = b.grid(&torus).unwrap();
                let ip = ga.iter().zip(&gb).map(|(x, y)| x * y).sum::<f64>() / nd;
                assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
            assert_eq!(a.l2_norm_sq(&torus).unwrap(), 1.0);
        }
        assert!(TestFunction::cos(&[1]).grid(&torus).is_err());
    }

    #[test]
    fn variance_under_bernoulli_is_chi_over_a() {
        let torus = ring(8);
        let rho = 0.3;
        let p = FieldParams::new(rho, 2.5).unwrap();
        let nu = bernoulli_vector(&torus, rho).unwrap();
        for m in 1..4 {
            let g = TestFunction::cos(&[m]).grid(&torus).unwrap();
            let x = tabulate(&torus, |eta| field_eval(eta, &g, &p)).unwrap();
            assert!(expectation(&nu, &x).abs() < 1e-12);
            let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
            assert!((expectation(&nu, &x2) - rho * (1.0 - rho) / 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn sobolev_examples() {
        let zero = vec![ModeValue {
            m: vec![1],
            cos: 0.0,
            sin: 0.0,
        }];
        assert_eq!(sobolev_norm_sq(&zero, 2.0, 8).unwrap(), 0.0);
        let single = vec![ModeValue {
            m: vec![0],
            cos: 0.7,
            sin: 0.0,
        }];
        assert!((sobolev_norm_sq(&single, 3.0, 8).unwrap() - 0.49).abs() < 1e-15);
        let torus = ring(16);
        let eta = Configuration::from_bits(torus, "1011000010010001").unwrap();
        let p = FieldParams::new(0.5, 1.0).unwrap();
        let modes = fourier_mode_values(&eta, &p, DEFAULT_MODE_CUTOFF);
        assert_eq!(modes.len(), 17);
        let mut prev = f64::INFINITY;
        for r in [0.5, 1.0, 2.0, 4.0, 60.0] {
            let v = sobolev_norm_sq(&modes, r, DEFAULT_MODE_CUTOFF).unwrap();
            assert!(v <= prev);
            prev = v;
        }
        let m0 = &modes[8];
        assert_eq!(m0.m, vec![0]);
        assert!((prev - m0.cos * m0.cos).abs() < 1e-12);
        assert!(sobolev_norm_sq(&modes, 0.0, 8).is_err());
    }

    #[test]
    fn mode_values_match_field_eval() {
        let torus = Torus::new(2, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let eta = random_conf(&mut rng, torus, 0.5);
        let p = FieldParams::new(0.5, 1.7).unwrap();
        let modes = fourier_mode_values(&eta, &p, 2);
        let mv = modes.iter().find(|v| v.m == vec![1, -2]).unwrap();
        let cos = TestFunction::cos(&[1, -2]).grid(&torus).unwrap();
        let sin = TestFunction::sin(&[1, -2]).grid(&torus).unwrap();
        assert!((field_eval(&eta, &cos, &p) - 2f64.sqrt() * mv.cos).abs() < 1e-13);
        assert!((field_eval(&eta, &sin, &p) - 2f64.sqrt() * mv.sin).abs() < 1e-13);
    }

    #[test]
    fn integrated_field_examples() {
        let mut tr = FieldTrace::new(0, "const");
        for k in 0..=10 {
            tr.push(0.1 * k as f64, 2.0).unwrap();
        }
        let out = integrated_field(&tr);
        let integ = out.integrated.unwrap();
        assert_eq!(integ[0], 0.0);
        assert!((integ[10] - 2.0).abs() < 1e-14);
        assert_eq!(out.method, Some(IntegrationMethod::Trapezoid));
        assert!(tr.push(0.5, 1.0).is_err());
    }

    #[test]
    fn cylinder_field_examples() {
        let torus = ring(8);
        let rho = 0.5;
        let p = FieldParams::new(rho, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_grid(&mut rng, 8);
        let lin = CylinderFunction::eta(&[0]).sub(&CylinderFunction::constant(rho));
        let lf = lin.compile(&torus).unwrap();
        for _ in 0..10 {
            let eta = random_conf(&mut rng, torus, rho);
            assert!((cylinder_field(&eta, &lf, &g, &p) - field_eval(&eta, &g, &p)).abs() < 1e-14);
        }
        let pair = CylinderFunction::monomial(1.0, vec![vec![0], vec![1]]).pi2plus(rho);
        let pf = pair.compile(&torus).unwrap();
        let one = vec![1.0; 8];
        let full = Configuration::full(torus);
        let expect = 0.25 * 8.0 / (8.0f64 * 1.5).sqrt();
        assert!((cylinder_field(&full, &pf, &one, &p) - expect).abs() < 1e-14);
        let nu = bernoulli_vector(&torus, rho).unwrap();
        let vals = tabulate(&torus, |eta| cylinder_field(eta, &pf, &g, &p)).unwrap();
        assert!(expectation(&nu, &vals).abs() < 1e-13);
        assert!(
            bernoulli_expectation_by_enumeration(&pair, rho)
                .unwrap()
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn as1_residual_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let torus = ring(8);
        let p = FieldParams::new(0.5, 1.3).unwrap();
        let cos = TestFunction::cos(&[1]).grid(&torus).unwrap();
        let one = vec![1.0; 8];
        let ssep = (RateFamily::ssep(1), GradientData::ssep(1));
        let sc = (
            RateFamily::speed_change_example(0.5).unwrap(),
            GradientData::speed_change_example(0.5).unwrap(),
        );
        for _ in 0..100 {
            let eta = random_conf(&mut rng, torus, 0.5);
            let f = random_grid(&mut rng, 8);
            assert!(as1_residual(&eta, &cos, &p, &ssep.0, &ssep.1).unwrap() < 1e-10);
            assert!(as1_residual(&eta, &one, &p, &ssep.0, &ssep.1).unwrap() < 1e-12);
            assert!(as1_residual(&eta, &f, &p, &sc.0, &sc.1).unwrap() < 1e-10);
        }
        let t2 = Torus::new(2, 4).unwrap();
        let f2 = TestFunction::sin(&[1, 1]).grid(&t2).unwrap();
        for _ in 0..20 {
            let eta = random_conf(&mut rng, t2, 0.4);
            let p2 = FieldParams::new(0.4, 0.8).unwrap();
            let r =
                as1_residual(&eta, &f2, &p2, &RateFamily::ssep(2), &GradientData::ssep(2)).unwrap();
            assert!(r < 1e-10);
        }
    }

    #[test]
    fn drift_matches_exact_generator() {
        let torus = ring(8);
        let p = FieldParams::new(0.4, 1.7).unwrap();
        let rates = RateFamily::speed_change_example(0.5).unwrap();
        let gen = build_generator(&torus, &rates, GeneratorKind::Combined, p.a_n).unwrap();
        let f = TestFunction::cos(&[2]).grid(&torus).unwrap();
        let x = tabulate(&torus, |eta| field_eval(eta, &f, &p)).unwrap();
        let lx = gen.apply(&x);
        for w in 0..256u64 {
            let eta = Configuration::from_word(torus, w);
            assert!((drift_rate_sum(&eta, &f, &p, &rates).unwrap() - lx[w as usize]).abs() < 1e-10);
        }
    }

    #[test]
    fn gamma_n_matches_generator_calculus() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let torus = ring(8);
        let p = FieldParams::new(0.5, 2.0).unwrap();
        for rates in [
            RateFamily::ssep(1),
            RateFamily::speed_change_example(0.5).unwrap(),
        ] {
            let gen = build_generator(&torus, &rates, GeneratorKind::Combined, p.a_n).unwrap();
            for _ in 0..5 {
                let f = random_grid(&mut rng, 8);
                let x = tabulate(&torus, |eta| field_eval(eta, &f, &p)).unwrap();
                let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
                let lx = gen.apply(&x);
                let lx2 = gen.apply(&x2);
                for _ in 0..10 {
                    let w = rng.gen_range(0..256usize);
                    let eta = Configuration::from_word(torus, w as u64);
                    let g = gamma_n_eval(&eta, &f, &p, &rates).unwrap();
                    assert!(g >= 0.0);
                    assert!((g - (lx2[w] - 2.0 * x[w] * lx[w])).abs() < 1e-10);
                }
            }
        }
        assert_eq!(
            gamma_n_eval(
                &Configuration::empty(torus),
                &[1.0; 8],
                &p,
                &RateFamily::ssep(1)
            )
            .unwrap(),
            0.0
        );
    }

    #[test]
    fn gamma_n_mean_for_constant_test_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let torus = ring(64);
        let p = FieldParams::new(0.5, 1.0).unwrap();
        let one = vec![1.0; 64];
        let samples: Vec<f64> = (0..10_000)
            .map(|_| {
                gamma_n_eval(
                    &random_conf(&mut rng, torus, 0.5),
                    &one,
                    &p,
                    &RateFamily::ssep(1),
                )
                .unwrap()
            })
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.0).abs() < 3.0 * (var / n).sqrt(), "{mean}");
    }

    #[test]
    fn traces_csv() {
        let mut tr = FieldTrace::new(3, "cos:1");
        tr.push(0.0, 0.5).unwrap();
        tr.push(0.25, -0.5).unwrap();
        let tr = integrated_field(&tr);
        let mut buf = Vec::new();
        write_traces_csv(&[tr], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "replica,t,observable,value,integrated_value\n3,0e0,cos:1,5e-1,0e0\n3,2.5e-1,cos:1,-5e-1,0e0\n"
        );
    }
}
