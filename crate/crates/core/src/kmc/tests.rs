use super::*;
use crate::exact::{build_generator, evolve, DistributionVector, GeneratorKind};

fn params(
    n: usize,
    a_n: f64,
    rates: RateFamily,
    mode: EventMode,
    sampler: SamplerChoice,
) -> SimParams {
    let torus = Torus::new(rates.dim(), n).unwrap();
    let mut p = SimParams::new(torus, 0.5, a_n, rates).unwrap();
    p.event_mode = mode;
    p.sampler = sampler;
    p
}

fn empirical_law(p: &SimParams, start: &str, t: f64, replicas: u64, seed: u64) -> Vec<f64> {
    let states = 1usize << p.torus.size();
    let mut counts = vec![0.0; states];
    let law = InitialLaw::Pattern { bits: start.into() };
    for r in 0..replicas {
        let mut s = init(p.clone(), &law, seed, r).unwrap();
        s.run_until(t, &[], |_, _| Ok(())).unwrap();
        counts[s.configuration().to_word() as usize] += 1.0;
    }
    counts.iter().map(|c| c / replicas as f64).collect()
}

fn exact_law(p: &SimParams, start: &str, t: f64) -> Vec<f64> {
    let gen = build_generator(&p.torus, &p.rates, GeneratorKind::Combined, p.a_n).unwrap();
    let eta = Configuration::from_bits(p.torus, start).unwrap();
    let mu = evolve(&DistributionVector::dirac(&eta).unwrap(), &gen, t).unwrap();
    mu.probs().to_vec()
}

fn assert_laws_agree(p: &SimParams, label: &str) {
    let (start, t, replicas) = ("110100", 0.04, 20_000u64);
    let emp = empirical_law(p, start, t, replicas, 17);
    let ex = exact_law(p, start, t);
    for (w, (&a, &b)) in emp.iter().zip(&ex).enumerate() {
        let se = (b * (1.0 - b) / replicas as f64).sqrt();
        assert!(
            (a - b).abs() <= 5.0 * se + 2e-3,
            "{label}: state {w:06b}: kmc {a} vs exact {b}"
        );
    }
}

#[test]
fn tree_sampler_matches_exact_law_null_mode() {
    let rates = RateFamily::speed_change_example(0.5).unwrap();
    let p = params(6, 2.0, rates, EventMode::Null, SamplerChoice::Tree);
    assert_laws_agree(&p, "tree/null");
}

#[test]
fn tree_sampler_matches_exact_law_effective_mode() {
    let rates = RateFamily::speed_change_example(0.5).unwrap();
    let p = params(6, 2.0, rates, EventMode::Effective, SamplerChoice::Tree);
    assert_laws_agree(&p, "tree/effective");
}

#[test]
fn discordant_sampler_matches_exact_law() {
    for mode in [EventMode::Null, EventMode::Effective] {
        let p = params(6, 3.0, RateFamily::ssep(1), mode, SamplerChoice::Discordant);
        assert_laws_agree(&p, "discordant");
    }
}

#[test]
fn discordant_and_tree_agree_on_ssep() {
    let p = params(
        6,
        3.0,
        RateFamily::ssep(1),
        EventMode::Effective,
        SamplerChoice::Tree,
    );
    assert_laws_agree(&p, "tree/ssep");
}

#[test]
fn auto_picks_discordant_for_constant_rates() {
    let p = params(
        8,
        1.0,
        RateFamily::ssep(2),
        EventMode::Null,
        SamplerChoice::Auto,
    );
    let s = init(p, &InitialLaw::Bernoulli { rho: 0.5 }, 1, 0).unwrap();
    assert!(s.uses_discordant_sampler());
    let rates = RateFamily::speed_change_example(0.5).unwrap();
    let p = params(8, 1.0, rates, EventMode::Null, SamplerChoice::Auto);
    let s = init(p, &InitialLaw::Bernoulli { rho: 0.5 }, 1, 0).unwrap();
    assert!(!s.uses_discordant_sampler());
}

#[test]
fn discordant_sampler_rejects_nonconstant_rates() {
    let rates = RateFamily::speed_change_example(0.5).unwrap();
    let p = params(8, 1.0, rates, EventMode::Null, SamplerChoice::Discordant);
    assert!(init(p, &InitialLaw::Bernoulli { rho: 0.5 }, 1, 0).is_err());
}

#[test]
fn exclusion_alone_conserves_particles() {
    let rates = RateFamily::speed_change_example(0.5).unwrap();
    for sampler in [SamplerChoice::Tree, SamplerChoice::Auto] {
        let r = if sampler == SamplerChoice::Tree {
            rates.clone()
        } else {
            RateFamily::ssep(1)
        };
        let p = params(32, 0.0, r, EventMode::Null, sampler);
        let mut s = init(p, &InitialLaw::Bernoulli { rho: 0.3 }, 5, 0).unwrap();
        let k0 = s.configuration().particle_count();
        s.run_until(0.5, &[0.1, 0.2, 0.3], |st, _| {
            assert_eq!(st.configuration().particle_count(), k0);
            Ok(())
        })
        .unwrap();
        assert_eq!(s.log().voter, 0);
        assert!(s.log().exclusion > 0);
    }
}

#[test]
fn same_seed_same_path() {
    let rates = RateFamily::speed_change_example(0.5).unwrap();
    let p = params(16, 2.0, rates, EventMode::Null, SamplerChoice::Tree);
    let law = InitialLaw::Bernoulli { rho: 0.5 };
    let mut a = init(p.clone(), &law, 99, 3).unwrap();
    let mut b = init(p.clone(), &law, 99, 3).unwrap();
    a.run_until(0.3, &[], |_, _| Ok(())).unwrap();
    // observation must not consume randomness
    b.run_until(0.3, &[0.05, 0.1, 0.2], |_, _| Ok(())).unwrap();
    assert_eq!(a.configuration(), b.configuration());
    assert_eq!(a.log(), b.log());
    let mut c = init(p, &law, 99, 4).unwrap();
    c.run_until(0.3, &[], |_, _| Ok(())).unwrap();
    assert_ne!(a.configuration(), c.configuration());
}

#[test]
fn voter_event_count_matches_rate() {
    // d = 1, n = 64, ν_{1/2} start, a_n = 2, T = 1. At t = 0 the flip rate is
    // a_n · n · 2d · 2χ = 128. Stirring keeps the law close to product at
    // the current density, but voter flips make the density itself diffuse:
    // Var(ρ_s) ≈ 128 s / n², so E[D_s] ≈ n/2 − 256 s / n discordant bonds
    // and E[N_T] = 2 a_n ∫₀ᵀ E[D_s] ds ≈ 4 (32 − 2) = 120.
    let p = params(
        64,
        2.0,
        RateFamily::ssep(1),
        EventMode::Effective,
        SamplerChoice::Auto,
    );
    let law = InitialLaw::Bernoulli { rho: 0.5 };
    let reps = 200;
    let counts: Vec<f64> = (0..reps)
        .map(|r| {
            let mut s = init(p.clone(), &law, 7, r).unwrap();
            s.run_until(1.0, &[], |_, _| Ok(())).unwrap();
            s.log().voter as f64
        })
        .collect();
    let mean = counts.iter().sum::<f64>() / reps as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    assert!(
        (mean - 120.0).abs() < 3.0 * se + 1.0,
        "mean voter events {mean} ± {se}"
    );
    assert!(mean < 128.0);
}

#[test]
fn tracked_field_matches_direct_sum() {
    let rates = RateFamily::speed_change_example(0.5).unwrap();
    let p = params(12, 1.5, rates, EventMode::Null, SamplerChoice::Tree);
    let torus = p.torus;
    let mut s = init(p, &InitialLaw::Bernoulli { rho: 0.5 }, 3, 0).unwrap();
    let f = CylinderFunction::eta(&[0]).mul(&CylinderFunction::eta(&[1]));
    let w: Vec<f64> = (0..torus.size()).map(|x| (x as f64 * 0.7).sin()).collect();
    let id = s.add_field(&f, w.clone()).unwrap();
    let lf = f.compile(&torus).unwrap();
    let times: Vec<f64> = (1..=20).map(|k| k as f64 * 0.01).collect();
    // piecewise-constant integral by Riemann sums on a fine grid
    let mut riemann = 0.0;
    let dt = 1e-4;
    let grid: Vec<f64> = (1..=2000).map(|k| k as f64 * dt).collect();
    s.run_until(0.2, &grid, |st, t| {
        let direct: f64 = (0..torus.size())
            .map(|x| w[x] * lf.eval(st.configuration().occupancy(), x))
            .sum();
        let tracked = st.field(id).value();
        assert!((direct - tracked).abs() < 1e-10);
        riemann += direct * dt;
        if times.iter().any(|&u| (u - t).abs() < 1e-12) {
            let exact = st.field(id).integral_at(t);
            assert!(
                (exact - riemann).abs() < 0.05 * (1.0 + exact.abs()),
                "{exact} vs {riemann}"
            );
        }
        Ok(())
    })
    .unwrap();
}

#[test]
fn occupation_times_sum_to_particle_time() {
    let p = params(
        16,
        1.0,
        RateFamily::ssep(1),
        EventMode::Effective,
        SamplerChoice::Auto,
    );
    let mut s = init(p, &InitialLaw::Bernoulli { rho: 0.5 }, 11, 0).unwrap();
    s.track_occupation().unwrap();
    // with exclusion dominating, occupation sums track ∫ particle count
    let mut integral = 0.0;
    let dt = 1e-4;
    let grid: Vec<f64> = (1..=5000).map(|k| k as f64 * dt).collect();
    s.run_until(0.5, &grid, |st, _| {
        integral += st.configuration().particle_count() as f64 * dt;
        Ok(())
    })
    .unwrap();
    let total: f64 = (0..16).map(|x| s.occupation_time(x, 0.5).unwrap()).sum();
    assert!(
        (total - integral).abs() < 0.05 * integral,
        "{total} vs {integral}"
    );
    for x in 0..16 {
        let o = s.occupation_time(x, 0.5).unwrap();
        assert!((0.0..=0.5 + 1e-12).contains(&o));
    }
}

#[test]
fn incremental_rates_stay_in_sync() {
    let rates = RateFamily::speed_change_example(0.5).unwrap();
    for mode in [EventMode::Null, EventMode::Effective] {
        let p = params(4, 1.0, rates.clone(), mode, SamplerChoice::Tree);
        let mut s = init(p, &InitialLaw::Bernoulli { rho: 0.5 }, 2, 0).unwrap();
        for _ in 0..2000 {
            if s.step().is_err() {
                break;
            }
            assert!(s.rate_table_defect() < 1e-12);
        }
    }
    let mut p = params(16, 1.0, rates, EventMode::Null, SamplerChoice::Tree);
    p.resync_every = 100;
    let mut s = init(p, &InitialLaw::Bernoulli { rho: 0.5 }, 2, 0).unwrap();
    s.run_until(0.2, &[], |_, _| Ok(())).unwrap();
    assert!(s.rate_table_defect() < 1e-12);
}

#[test]
fn two_site_torus_counts_both_bonds() {
    let p = params(
        2,
        1.0,
        RateFamily::ssep(1),
        EventMode::Effective,
        SamplerChoice::Tree,
    );
    let s = init(p.clone(), &InitialLaw::Pattern { bits: "10".into() }, 0, 0).unwrap();
    // two distinct bonds join sites 0 and 1; each endpoint sees both
    assert!((s.total_rate() - (2.0 * 4.0 + 4.0 * 1.0)).abs() < 1e-12);
    let mut q = p;
    q.sampler = SamplerChoice::Discordant;
    let s = init(q, &InitialLaw::Pattern { bits: "10".into() }, 0, 0).unwrap();
    assert!((s.total_rate() - 12.0).abs() < 1e-12);
}

#[test]
fn consensus_is_absorbing() {
    let rates = RateFamily::speed_change_example(0.5).unwrap();
    for mode in [EventMode::Null, EventMode::Effective] {
        for (r, sampler) in [
            (RateFamily::ssep(1), SamplerChoice::Auto),
            (rates.clone(), SamplerChoice::Tree),
        ] {
            let p = params(8, 1.0, r, mode, sampler);
            let mut s = init(p, &InitialLaw::Pattern { bits: "1".into() }, 0, 0).unwrap();
            assert_eq!(s.step().unwrap_err(), Error::Absorbed);
            s.run_until(1.0, &[0.5], |_, _| Ok(())).unwrap();
            assert_eq!(s.clock(), 1.0);
            assert_eq!(s.log().total(), 0);
        }
    }
}

#[test]
fn zero_horizon_runs_no_events() {
    let p = params(
        16,
        1.0,
        RateFamily::ssep(1),
        EventMode::Null,
        SamplerChoice::Auto,
    );
    let mut s = init(p, &InitialLaw::Bernoulli { rho: 0.5 }, 4, 0).unwrap();
    s.run_until(0.0, &[0.0], |_, _| Ok(())).unwrap();
    assert_eq!(s.log().total(), 0);
}

#[test]
fn long_runs_conserve_and_stay_in_sync() {
    let p = params(
        64,
        0.0,
        RateFamily::ssep(1),
        EventMode::Null,
        SamplerChoice::Auto,
    );
    let mut s = init(p, &InitialLaw::Bernoulli { rho: 0.5 }, 8, 0).unwrap();
    let k0 = s.configuration().particle_count();
    for _ in 0..10_000_000 {
        s.step().unwrap();
    }
    assert_eq!(s.configuration().particle_count(), k0);

    let rates = RateFamily::speed_change_example(0.5).unwrap();
    let mut p = params(64, 2.0, rates, EventMode::Null, SamplerChoice::Tree);
    p.resync_every = u64::MAX;
    let mut s = init(p, &InitialLaw::Bernoulli { rho: 0.5 }, 8, 0).unwrap();
    for _ in 0..1_000_000 {
        if s.step().is_err() {
            break;
        }
    }
    assert!(s.rate_table_defect() < 1e-6);
    s.resync();
    assert_eq!(s.rate_table_defect(), 0.0);
}

#[test]
fn bernoulli_start_particle_count_smoke() {
    let p = params(
        256,
        1.0,
        RateFamily::ssep(1),
        EventMode::Null,
        SamplerChoice::Auto,
    );
    let law = InitialLaw::Bernoulli { rho: 0.5 };
    let bound = 4.0 * (256.0f64 * 0.25).sqrt();
    let inside = (0..200)
        .filter(|&r| {
            let s = init(p.clone(), &law, 1, r).unwrap();
            (s.configuration().particle_count() as f64 - 128.0).abs() <= bound
        })
        .count();
    assert!(inside >= 198);
}

#[test]
fn stirring_alone_keeps_bernoulli_marginals() {
    // a_n = 0: ν_ρ is invariant, so E[η_0 η_1] stays ρ².
    let p = params(
        32,
        0.0,
        RateFamily::speed_change_example(0.5).unwrap(),
        EventMode::Effective,
        SamplerChoice::Tree,
    );
    let law = InitialLaw::Bernoulli { rho: 0.3 };
    let reps = 400;
    let mut acc = Vec::new();
    for r in 0..reps {
        let mut s = init(p.clone(), &law, 21, r).unwrap();
        s.run_until(0.2, &[], |_, _| Ok(())).unwrap();
        let occ = s.configuration().occupancy();
        let v: f64 = (0..32)
            .map(|x| (occ[x] * occ[(x + 1) % 32]) as f64)
            .sum::<f64>()
            / 32.0;
        acc.push(v);
    }
    let mean = acc.iter().sum::<f64>() / reps as f64;
    let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    assert!(
        (mean - 0.09).abs() < 3.0 * (var / reps as f64).sqrt() + 1e-3,
        "{mean}"
    );
}

#[test]
fn initial_laws_validate() {
    let torus = Torus::new(1, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(InitialLaw::Bernoulli { rho: 1.5 }
        .sample(&torus, &mut rng)
        .is_err());
    assert!(InitialLaw::Pattern { bits: "12".into() }
        .sample(&torus, &mut rng)
        .is_err());
    let eta = InitialLaw::Pattern { bits: "10".into() }
        .sample(&torus, &mut rng)
        .unwrap();
    assert_eq!(eta.to_bits(), "10101010");
    assert!(SimParams::new(torus, 0.0, 1.0, RateFamily::ssep(1)).is_err());
    assert!(SimParams::new(torus, 0.5, -1.0, RateFamily::ssep(1)).is_err());
    assert!(SimParams::new(torus, 0.5, 1.0, RateFamily::ssep(2)).is_err());
}

#[test]
fn default_a_n_floor() {
    assert_eq!(default_a_n(2), 1.0);
    assert!((default_a_n(256) - (256f64).ln().sqrt()).abs() < 1e-15);
}
