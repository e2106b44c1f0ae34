//! Reference values for the limiting Ornstein–Uhlenbeck field
//! `dX = 𝒜X dt + √(4dχ(ρ)) dξ`, where `𝒜 = Σ_{j,k} ℍ_{jk} ∂_j ∂_k`.
//!
//! Everything is computed per real Fourier mode, where `𝒜` acts as
//! multiplication by `−λ(m) = −4π² mᵀℍm`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::cylinder::GradientData;
use crate::error::{Error, Result};
use crate::field::TestFunction;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitModel {
    pub d: usize,
    pub rho: f64,
    /// `ℍ_{jk} = ½ (h̃'_{jk}(ρ) + h̃'_{kj}(ρ))`.
    pub h_matrix: Vec<Vec<f64>>,
    /// `χ(ρ) = ρ(1−ρ)`.
    pub chi: f64,
    /// `σ² = 4dχ(ρ)`.
    pub noise_intensity: f64,
}

fn cholesky_ok(h: &[Vec<f64>]) -> bool {
    let d = h.len();
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = h[i][i] - s;
                if !(v > 0.0) {
                    return false;
                }
                l[i][i] = v.sqrt();
            } else {
                l[i][j] = (h[i][j] - s) / l[j][j];
            }
        }
    }
    true
}

fn quad_form(h: &[Vec<f64>], m: &[i64]) -> f64 {
    let mut acc = 0.0;
    for (j, row) in h.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            acc += m[j] as f64 * v * m[k] as f64;
        }
    }
    acc
}

/// Builds `ℍ` from gradient data and rejects it unless positive definite.
pub fn build_limit_model(grad: &GradientData, rho: f64, d: usize) -> Result<LimitModel> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidDensity(rho));
    }
    if grad.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: grad.dim(),
        });
    }
    let h: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            (0..d)
                .map(|k| 0.5 * (grad.get(j, k).tilde_prime(rho) + grad.get(k, j).tilde_prime(rho)))
                .collect()
        })
        .collect();
    if !cholesky_ok(&h) {
        // report the worst small integer direction
        let side = 9i64;
        let mut best: Option<(Vec<i64>, f64)> = None;
        for mut idx in 1..side.pow(d as u32) {
            let m: Vec<i64> = (0..d)
                .map(|_| {
                    let v = idx % side - 4;
                    idx /= side;
                    v
                })
                .collect();
            let norm: i64 = m.iter().map(|v| v * v).sum();
            if norm == 0 {
                continue;
            }
            let q = quad_form(&h, &m) / norm as f64;
            if best.as_ref().is_none_or(|(_, b)| q < *b) {
                best = Some((m, q));
            }
        }
        let (direction, value) = best.unwrap_or((vec![1; d], h[0][0]));
        return Err(Error::NotElliptic { direction, value });
    }
    let chi = rho * (1.0 - rho);
    Ok(LimitModel {
        d,
        rho,
        h_matrix: h,
        chi,
        noise_intensity: 4.0 * d as f64 * chi,
    })
}

/// `λ(m) = 4π² mᵀℍm`.
pub fn lambda_m(model: &LimitModel, m: &[i64]) -> f64 {
    4.0 * std::f64::consts::PI.powi(2) * quad_form(&model.h_matrix, m)
}

/// Mode multiplier `e^{−λ(m)t}` of `P_t`.
pub fn semigroup_apply(model: &LimitModel, t: f64, m: &[i64]) -> f64 {
    (-lambda_m(model, m) * t).exp()
}

/// Variance accumulated by an OU mode over time `dt`:
/// `σ²(1 − e^{−2λdt})/(2λ)`, or `σ² dt` when `λ = 0`.
pub fn ou_increment_variance(sigma2: f64, lambda: f64, dt: f64) -> f64 {
    if lambda == 0.0 {
        sigma2 * dt
    } else {
        sigma2 * -(-2.0 * lambda * dt).exp_m1() / (2.0 * lambda)
    }
}

/// `σ²/(2λ(m))`.
pub fn ou_stationary_variance(model: &LimitModel, m: &[i64]) -> f64 {
    model.noise_intensity / (2.0 * lambda_m(model, m))
}

/// Exact OU transition of one mode over `dt`.
pub fn ou_exact_step<R: Rng + ?Sized>(
    x: f64,
    m: &[i64],
    dt: f64,
    model: &LimitModel,
    rng: &mut R,
) -> f64 {
    let lambda = lambda_m(model, m);
    let z: f64 = StandardNormal.sample(rng);
    (-lambda * dt).exp() * x + ou_increment_variance(model.noise_intensity, lambda, dt).sqrt() * z
}

/// Element of the orthonormal real Fourier basis: `1`, `√2 cos(2πm·x)`,
/// `√2 sin(2πm·x)` with `m` canonical (first nonzero entry positive).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum BasisMode {
    Constant,
    Cos(Vec<i64>),
    Sin(Vec<i64>),
}

impl BasisMode {
    pub fn wavevector(&self, d: usize) -> Vec<i64> {
        match self {
            BasisMode::Constant => vec![0; d],
            BasisMode::Cos(m) | BasisMode::Sin(m) => m.clone(),
        }
    }
}

/// Finite linear combination of basis modes.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ModeCombination {
    pub terms: BTreeMap<BasisMode, f64>,
}

impl ModeCombination {
    pub fn single(mode: BasisMode) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(mode, 1.0);
        Self { terms }
    }

    fn add(&mut self, mode: BasisMode, c: f64) {
        if c != 0.0 {
            *self.terms.entry(mode).or_insert(0.0) += c;
        }
    }

    /// Expands a Fourier or constant test function. Tabulated functions
    /// have no finite expansion and are rejected.
    pub fn from_test_function(f: &TestFunction) -> Result<Self> {
        let canon = |m: &[i64]| -> (Vec<i64>, f64) {
            match m.iter().find(|&&v| v != 0) {
                Some(&v) if v < 0 => (m.iter().map(|x| -x).collect(), -1.0),
                _ => (m.to_vec(), 1.0),
            }
        };
        let mut out = Self::default();
        match f {
            TestFunction::Constant { value } => out.add(BasisMode::Constant, *value),
            TestFunction::FourierCos { m } => {
                if m.iter().all(|&v| v == 0) {
                    out.add(BasisMode::Constant, 2f64.sqrt());
                } else {
                    out.add(BasisMode::Cos(canon(m).0), 1.0);
                }
            }
            TestFunction::FourierSin { m } => {
                if m.iter().any(|&v| v != 0) {
                    let (c, s) = canon(m);
                    out.add(BasisMode::Sin(c), s);
                }
            }
            TestFunction::Tabulated { .. } => {
                return Err(Error::InvalidParameter(
                    "tabulated test functions have no finite mode expansion".into(),
                ))
            }
        }
        Ok(out)
    }

    /// `⟨F, G⟩_{L²(T^d)}`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.terms
            .iter()
            .filter_map(|(k, a)| other.terms.get(k).map(|b| a * b))
            .sum()
    }

    fn paired<'a>(&'a self, other: &'a Self) -> impl Iterator<Item = (&'a BasisMode, f64)> + 'a {
        self.terms
            .iter()
            .filter_map(|(k, a)| other.terms.get(k).map(|b| (k, a * b)))
    }
}

/// `Cov(X_{t1}(F), X_{t2}(G)) = σ² ∫₀^{t1} ⟨P_{t1−s}F, P_{t2−s}G⟩ ds`, per mode
/// `σ² e^{−λ(t2−t1)} (1 − e^{−2λ t1})/(2λ)`.
pub fn cov_limit(
    model: &LimitModel,
    t1: f64,
    t2: f64,
    f: &ModeCombination,
    g: &ModeCombination,
) -> Result<f64> {
    if !(0.0 <= t1 && t1 <= t2) {
        return Err(Error::InvalidParameter(format!(
            "cov_limit needs 0 ≤ t1 ≤ t2, got {t1}, {t2}"
        )));
    }
    Ok(f.paired(g)
        .map(|(mode, c)| {
            let lambda = lambda_m(model, &mode.wavevector(model.d));
            c * (-lambda * (t2 - t1)).exp()
                * ou_increment_variance(model.noise_intensity, lambda, t1)
        })
        .sum())
}

/// `4dχ(ρ) (s ∧ t) ⟨F, G⟩`.
pub fn martingale_cov(
    model: &LimitModel,
    s: f64,
    t: f64,
    f: &ModeCombination,
    g: &ModeCombination,
) -> f64 {
    model.noise_intensity * s.min(t) * f.inner(g)
}

/// Closed form of `∫₀^a ∫₀^b cov(u, v) du dv` for one mode.
fn integrated_mode_cov(sigma2: f64, lambda: f64, a: f64, b: f64) -> f64 {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    if lambda == 0.0 {
        return sigma2 * (a * a * b / 2.0 - a * a * a / 6.0);
    }
    let l2 = lambda * lambda;
    let k = 2.0 * a / lambda
        - (1.0 - (-lambda * a).exp()) / l2
        - ((-lambda * (b - a)).exp() - (-lambda * b).exp()) / l2;
    let prod = (1.0 - (-lambda * a).exp()) * (1.0 - (-lambda * b).exp()) / l2;
    sigma2 / (2.0 * lambda) * (k - prod)
}

/// `Cov(𝕏_a(F), 𝕏_b(G))` for the time-integrated field `𝕏_t = ∫₀ᵗ X_s ds`.
pub fn integrated_cov(
    model: &LimitModel,
    a: f64,
    b: f64,
    f: &ModeCombination,
    g: &ModeCombination,
) -> f64 {
    f.paired(g)
        .map(|(mode, c)| {
            let lambda = lambda_m(model, &mode.wavevector(model.d));
            c * integrated_mode_cov(model.noise_intensity, lambda, a, b)
        })
        .sum()
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kr = WGK[7] * fc;
    let mut ga = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        kr += WGK[i] * s;
        if i % 2 == 1 {
            ga += WG[i / 2] * s;
        }
    }
    (kr * h, ((kr - ga) * h).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
    let (v, err) = gk15(f, a, b);
    if err <= tol || (b - a).abs() < 1e-14 {
        return Ok(v);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!("no convergence on [{a}, {b}]")));
    }
    let m = 0.5 * (a + b);
    Ok(adapt(f, a, m, 0.5 * tol, depth - 1)? + adapt(f, m, b, 0.5 * tol, depth - 1)?)
}

/// Adaptive Gauss–Kronrod (7/15) quadrature of `f` on `[a, b]` to absolute
/// tolerance `tol`. Kinks should be placed at interval ends by the caller.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    adapt(&f, a, b, tol, 40)
}

fn integrate_split<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, kink: f64, tol: f64) -> Result<f64> {
    if kink > a && kink < b {
        Ok(integrate(&f, a, kink, 0.5 * tol)? + integrate(&f, kink, b, 0.5 * tol)?)
    } else {
        integrate(f, a, b, tol)
    }
}

/// Cross-checks the white-noise identity `E[ℳ_t(F) ℳ_s(G)] = 4dχ s⟨F,G⟩`
/// for `ℳ_t(F) = X_t(F) − ∫₀ᵗ X_u(𝒜F) du`: the covariance is assembled from
/// its four defining iterated integrals by numeric quadrature and the
/// absolute deviation from the closed form is returned.
pub fn mc_cov_check(
    model: &LimitModel,
    s: f64,
    t: f64,
    f: &ModeCombination,
    g: &ModeCombination,
) -> Result<f64> {
    let (s, t, f, g) = if s <= t { (s, t, f, g) } else { (t, s, g, f) };
    let tol = 1e-12;
    let mut total = 0.0;
    for (mode, c) in f.paired(g) {
        let lam = lambda_m(model, &mode.wavevector(model.d));
        // ⟨P_a F, P_b G⟩ = c e^{−λ(a+b)}; 𝒜 contributes a factor −λ
        let k = |a: f64, b: f64| (-lam * (a + b)).exp();
        let i1 = integrate(|u| k(t - u, s - u), 0.0, s, tol)?;
        let i2 = integrate_split(
            |u| integrate(|v| -lam * k(u - v, s - v), 0.0, u.min(s), tol).unwrap_or(f64::NAN),
            0.0,
            t,
            s,
            tol,
        )?;
        let i3 = integrate(
            |u| integrate(|v| -lam * k(t - v, u - v), 0.0, u, tol).unwrap_or(f64::NAN),
            0.0,
            s,
            tol,
        )?;
        let i4 = integrate_split(
            |u1| {
                integrate_split(
                    |u2| {
                        integrate(|v| lam * lam * k(u1 - v, u2 - v), 0.0, u1.min(u2), tol)
                            .unwrap_or(f64::NAN)
                    },
                    0.0,
                    s,
                    u1,
                    tol,
                )
                .unwrap_or(f64::NAN)
            },
            0.0,
            t,
            s,
            tol,
        )?;
        let v = i1 - i2 - i3 + i4;
        if !v.is_finite() {
            return Err(Error::Quadrature("inner integral failed".into()));
        }
        total += model.noise_intensity * c * v;
    }
    Ok((total - model.noise_intensity * s * f.inner(g)).abs())
}

/// Double quadrature of `cov_limit` over `[0,a] × [0,b]`.
pub fn integrated_cov_by_quadrature(
    model: &LimitModel,
    a: f64,
    b: f64,
    f: &ModeCombination,
    g: &ModeCombination,
) -> Result<f64> {
    let cov = |u: f64, v: f64| -> f64 {
        if u <= v {
            cov_limit(model, u, v, f, g).unwrap_or(f64::NAN)
        } else {
            cov_limit(model, v, u, g, f).unwrap_or(f64::NAN)
        }
    };
    let v = integrate(
        |u| integrate_split(|v| cov(u, v), 0.0, b, u, 1e-13).unwrap_or(f64::NAN),
        0.0,
        a,
        1e-12,
    )?;
    if !v.is_finite() {
        return Err(Error::Quadrature("inner integral failed".into()));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetRow {
    pub mode: String,
    pub t1: f64,
    pub t2: f64,
    /// `variance`, `covariance`, `integrated_variance` or `martingale_variance`.
    pub quantity: String,
    pub value: f64,
}

/// Limit targets for `√2 cos(2π m·x)` modes: one-time variances, two-time
/// covariances, integrated-field variances and martingale variances.
pub fn she_targets(
    model: &LimitModel,
    modes: &[Vec<i64>],
    times: &[f64],
) -> Result<Vec<TargetRow>> {
    let mut rows = Vec::new();
    for m in modes {
        let tf = TestFunction::cos(m);
        let f = ModeCombination::from_test_function(&tf)?;
        let label = tf.label();
        for (i, &t) in times.iter().enumerate() {
            rows.push(TargetRow {
                mode: label.clone(),
                t1: t,
                t2: t,
                quantity: "variance".into(),
                value: cov_limit(model, t, t, &f, &f)?,
            });
            for &u in &times[i + 1..] {
                let (a, b) = if t <= u { (t, u) } else { (u, t) };
                rows.push(TargetRow {
                    mode: label.clone(),
                    t1: a,
                    t2: b,
                    quantity: "covariance".into(),
                    value: cov_limit(model, a, b, &f, &f)?,
                });
            }
            rows.push(TargetRow {
                mode: label.clone(),
                t1: t,
                t2: t,
                quantity: "integrated_variance".into(),
                value: integrated_cov(model, t, t, &f, &f),
            });
            rows.push(TargetRow {
                mode: label.clone(),
                t1: t,
                t2: t,
                quantity: "martingale_variance".into(),
                value: martingale_cov(model, t, t, &f, &f),
            });
        }
    }
    Ok(rows)
}

/// Writes `mode,t1,t2,quantity,value` rows.
pub fn write_targets_csv<W: std::io::Write>(rows: &[TargetRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cylinder::CylinderFunction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ssep1() -> LimitModel {
        build_limit_model(&GradientData::ssep(1), 0.5, 1).unwrap()
    }

    fn cos(m: &[i64]) -> ModeCombination {
        ModeCombination::from_test_function(&TestFunction::cos(m)).unwrap()
    }

    #[test]
    fn model_examples() {
        let m = ssep1();
        assert_eq!(m.h_matrix, vec![vec![1.0]]);
        assert!((lambda_m(&m, &[1]) - 4.0 * PI * PI).abs() < 1e-12);
        assert!((lambda_m(&m, &[2]) - 16.0 * PI * PI).abs() < 1e-12);
        assert_eq!(lambda_m(&m, &[0]), 0.0);
        assert_eq!(m.noise_intensity, 1.0);
        let m2 = build_limit_model(&GradientData::ssep(2), 0.3, 2).unwrap();
        assert!((lambda_m(&m2, &[1, 1]) - 8.0 * PI * PI).abs() < 1e-12);
        assert_eq!(lambda_m(&m2, &[-1, 2]), lambda_m(&m2, &[1, -2]));
    }

    #[test]
    fn pair_gradient_data_gives_two_rho() {
        let grad = GradientData {
            h: vec![vec![CylinderFunction::monomial(
                1.0,
                vec![vec![0], vec![2]],
            )]],
        };
        let m = build_limit_model(&grad, 0.3, 1).unwrap();
        assert!((m.h_matrix[0][0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_elliptic() {
        let grad = GradientData {
            h: vec![vec![CylinderFunction::eta(&[0]).scale(-1.0)]],
        };
        match build_limit_model(&grad, 0.5, 1) {
            Err(Error::NotElliptic { direction, value }) => {
                assert_eq!(direction.len(), 1);
                assert!(value < 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semigroup_examples() {
        let m = ssep1();
        assert_eq!(semigroup_apply(&m, 0.0, &[1]), 1.0);
        assert!((semigroup_apply(&m, 0.1, &[1]) - 0.019296).abs() < 1e-6);
        let prod = semigroup_apply(&m, 0.03, &[2]) * semigroup_apply(&m, 0.05, &[2]);
        assert!((prod - semigroup_apply(&m, 0.08, &[2])).abs() < 1e-15);
    }

    #[test]
    fn cov_limit_examples() {
        let m = ssep1();
        let c1 = cos(&[1]);
        assert_eq!(cov_limit(&m, 0.0, 0.3, &c1, &c1).unwrap(), 0.0);
        assert_eq!(cov_limit(&m, 0.2, 0.3, &c1, &cos(&[2])).unwrap(), 0.0);
        let s = ModeCombination::from_test_function(&TestFunction::sin(&[1])).unwrap();
        assert_eq!(cov_limit(&m, 0.2, 0.3, &c1, &s).unwrap(), 0.0);
        let v = cov_limit(&m, 0.5, 0.5, &c1, &c1).unwrap();
        let stat = 1.0 / (8.0 * PI * PI);
        assert!((v - stat * (1.0 - (-4.0 * PI * PI).exp())).abs() < 1e-15);
        assert!((stat - 0.0126651).abs() < 1e-7);
        assert!((ou_stationary_variance(&m, &[1]) - stat).abs() < 1e-15);
        assert!(cov_limit(&m, 0.5, 0.4, &c1, &c1).is_err());
    }

    #[test]
    fn cov_limit_monotone_and_forward_consistent() {
        let m = ssep1();
        let c = cos(&[3]);
        let mut prev = 0.0;
        for k in 1..50 {
            let t = 0.002 * k as f64;
            let v = cov_limit(&m, t, t, &c, &c).unwrap();
            assert!(v >= prev);
            prev = v;
            let later = cov_limit(&m, t, t + 0.01, &c, &c).unwrap();
            assert!((later - v * semigroup_apply(&m, 0.01, &[3])).abs() < 1e-16);
        }
    }

    #[test]
    fn cov_limit_matches_quadrature_of_its_integral() {
        let m =
            build_limit_model(&GradientData::speed_change_example(0.5).unwrap(), 0.4, 1).unwrap();
        let c = cos(&[1]);
        let lam = lambda_m(&m, &[1]);
        let (t1, t2) = (0.05, 0.08);
        let q = integrate(
            |s| (-lam * (t1 - s)).exp() * (-lam * (t2 - s)).exp(),
            0.0,
            t1,
            1e-14,
        )
        .unwrap();
        assert!((m.noise_intensity * q - cov_limit(&m, t1, t2, &c, &c).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn constant_mode_is_brownian() {
        let m = ssep1();
        let one = ModeCombination::single(BasisMode::Constant);
        assert!((cov_limit(&m, 0.3, 0.7, &one, &one).unwrap() - 0.3).abs() < 1e-15);
        assert!(
            (integrated_cov(&m, 0.3, 0.7, &one, &one) - (0.09 * 0.7 / 2.0 - 0.027 / 6.0)).abs()
                < 1e-15
        );
    }

    #[test]
    fn martingale_cov_examples() {
        let m = ssep1();
        let c = cos(&[1]);
        assert_eq!(martingale_cov(&m, 1.0, 1.0, &c, &c), 1.0);
        assert_eq!(martingale_cov(&m, 1.0, 1.0, &c, &cos(&[2])), 0.0);
        assert_eq!(martingale_cov(&m, 0.0, 1.0, &c, &c), 0.0);
    }

    #[test]
    fn mc_cov_check_examples() {
        let m = ssep1();
        let c = cos(&[1]);
        assert!(mc_cov_check(&m, 0.3, 0.7, &c, &cos(&[2])).unwrap() < 1e-8);
        assert!(mc_cov_check(&m, 0.3, 0.7, &c, &c).unwrap() < 1e-6);
        assert!(mc_cov_check(&m, 0.4, 0.4, &c, &c).unwrap() < 1e-6);
        let one = ModeCombination::single(BasisMode::Constant);
        assert!(mc_cov_check(&m, 0.2, 0.5, &one, &one).unwrap() < 1e-9);
    }

    #[test]
    fn integrated_cov_matches_quadrature() {
        let m = ssep1();
        for mm in [1, 2] {
            let c = cos(&[mm]);
            for (a, b) in [(0.25, 0.5), (0.5, 0.25), (0.4, 0.4)] {
                let q = integrated_cov_by_quadrature(&m, a, b, &c, &c).unwrap();
                assert!((q - integrated_cov(&m, a, b, &c, &c)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ou_step_laws() {
        let m = ssep1();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        assert_eq!(ou_exact_step(0.7, &[1], 0.0, &m, &mut rng), 0.7);
        for (mm, dt) in [(1i64, 0.01), (1, 0.1), (2, 0.003), (3, 0.05), (1, 1.0)] {
            let lam = lambda_m(&m, &[mm]);
            let x0 = 0.2;
            let n = 100_000;
            let xs: Vec<f64> = (0..n)
                .map(|_| ou_exact_step(x0, &[mm], dt, &m, &mut rng))
                .collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let tv = ou_increment_variance(1.0, lam, dt);
            assert!((mean - x0 * (-lam * dt).exp()).abs() < 3.0 * (tv / n as f64).sqrt());
            assert!((var - tv).abs() < 3.0 * tv * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn mode_expansion_canonicalizes() {
        let a = ModeCombination::from_test_function(&TestFunction::sin(&[-1, 2])).unwrap();
        let b = ModeCombination::from_test_function(&TestFunction::sin(&[1, -2])).unwrap();
        assert_eq!(a.inner(&b), -1.0);
        let c = ModeCombination::from_test_function(&TestFunction::cos(&[0, -3])).unwrap();
        assert_eq!(c.inner(&cos(&[0, 3])), 1.0);
        assert!(
            ModeCombination::from_test_function(&TestFunction::Tabulated { values: vec![] })
                .is_err()
        );
    }

    #[test]
    fn targets_table() {
        let m = ssep1();
        let rows = she_targets(&m, &[vec![1], vec![2]], &[0.25, 0.5]).unwrap();
        assert_eq!(rows.len(), 2 * (2 * 3 + 1));
        let mut buf = Vec::new();
        write_targets_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("mode,t1,t2,quantity,value\n"));
    }
}
