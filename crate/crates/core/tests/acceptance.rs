//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use macran::analytics::{
    a_vector_covariance, capacity, dispersions, jacobian_identity_error, rac_dispersions, v_single, PowerPair,
};
use macran::codec::{decoder_density_agreement, sample_sphere, AgreementKind};
use macran::mac_regions::{compare_regions, default_split_grid, jnn_unified_point, linear_grid, mac_jnn_region, mac_sic_region, Case};
use macran::montecarlo::{estimate_g, rcu_bound_mc, simulate_mac, simulate_rac, trial_rng, GContext, MacSimConfig, RacSimConfig};
use macran::mvnormal::q_inv;
use macran::noise::{make_noise, NoiseModel, NoiseSpec};
use macran::rac_rates::first_order_gap;
use macran::{Decoder, Error};
use nalgebra::SMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn run(id: u32, name: &str, limit: Duration, f: impl FnOnce() -> macran::Result<Outcome>) -> bool {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (pass, detail) = match result {
        Ok(o) => (o.pass && elapsed <= limit, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let timing = if elapsed > limit {
        format!("{:.2}s exceeds {}s", elapsed.as_secs_f64(), limit.as_secs())
    } else {
        format!("{:.2}s", elapsed.as_secs_f64())
    };
    println!("{} [{id:2}] {name}: {detail} ({timing})", if pass { "PASS" } else { "FAIL" });
    pass
}

fn reference_pair() -> PowerPair {
    PowerPair::new(5.0, 2.0).unwrap()
}

fn c1_jacobian() -> macran::Result<Outcome> {
    let mut rng = trial_rng(2024, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let pp = PowerPair::new(rng.random_range(0.1..50.0), rng.random_range(0.1..50.0))?;
        for xi in [1.0, 1.8, 3.0, 6.0] {
            worst = worst.max(jacobian_identity_error(pp, xi)?);
        }
    }
    Ok(outcome(worst <= 1e-12, format!("max entrywise error {worst:.2e}")))
}

fn c2_reductions() -> macran::Result<Outcome> {
    let mut worst = 0.0f64;
    for i in 0..100 {
        let p = 0.01 * 10f64.powf(4.0 * i as f64 / 99.0);
        let xi = [1.0, 1.8, 3.0, 6.0][i % 4];
        let k = 1 + (i % 10) as u32;
        worst = worst.max((rac_dispersions(k, k, p, xi)?.v_rs - v_single(p, xi)).abs());
        worst = worst.max((rac_dispersions(2, 1, p, xi)?.v_rs - dispersions(PowerPair::new(p, p)?, xi)?.v_1).abs());
    }
    Ok(outcome(worst <= 1e-12, format!("max error {worst:.2e} over 100 points")))
}

fn c3_mu() -> macran::Result<Outcome> {
    let mut max_mu = f64::NEG_INFINITY;
    for k in 2..=50 {
        for p in [0.01, 0.1, 1.0, 10.0, 100.0] {
            max_mu = max_mu.max(first_order_gap(k, p)?);
        }
    }
    let at_one = [0.01, 0.1, 1.0, 10.0, 100.0].iter().all(|&p| first_order_gap(1, p).unwrap() == 0.0);
    Ok(outcome(max_mu < 0.0 && at_one, format!("max mu(k>=2) = {max_mu:.3e}, mu(1) = 0: {at_one}")))
}

fn c4_case_ii() -> macran::Result<Outcome> {
    let eps = 0.2;
    let jnn = mac_jnn_region(Case::Ii, None, reference_pair(), 3.0, eps)?;
    let sic = mac_sic_region(Case::Ii, None, reference_pair(), 3.0, eps, &default_split_grid(eps))?;
    let pts = compare_regions(&jnn, &sic, &linear_grid(0.0, 3.0, 50))?;
    let min_gap = pts.iter().map(|p| p.gap).fold(f64::INFINITY, f64::min);
    let asymptote = jnn.min_l2(50.0);
    let expect = (4.0f64 / 9.0).sqrt() * q_inv(eps)?;
    let ok = min_gap >= -1e-9 && (asymptote - expect).abs() <= 1e-3;
    Ok(outcome(ok, format!("min gap {min_gap:.3e}, asymptote {asymptote:.5} vs {expect:.5}")))
}

fn c5_case_iii() -> macran::Result<Outcome> {
    let eps = 0.2;
    let jnn = mac_jnn_region(Case::Iii, Some(0.5), reference_pair(), 3.0, eps)?;
    let sic = mac_sic_region(Case::Iii, Some(0.5), reference_pair(), 3.0, eps, &default_split_grid(eps))?;
    let pts = compare_regions(&jnn, &sic, &linear_grid(0.0, 3.0, 50))?;
    let interior = &pts[1..pts.len() - 1];
    let min_gap = interior.iter().map(|p| p.gap).fold(f64::INFINITY, f64::min);
    Ok(outcome(min_gap > 0.0, format!("min interior gap {min_gap:.4}")))
}

fn c6_agreement() -> macran::Result<Outcome> {
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in AgreementKind::ALL {
        let r = decoder_density_agreement(kind, 1000, 64, 200, 6)?;
        ok &= r.mismatches == 0;
        parts.push(format!("{kind:?} {}/{}", r.mismatches, r.instances));
    }
    Ok(outcome(ok, format!("mismatches: {}", parts.join(", "))))
}

fn c7_covariance() -> macran::Result<Outcome> {
    let (p1, p2) = (5.0, 2.0);
    let est = a_vector_covariance(PowerPair::new(p1, p2)?, &NoiseModel::gaussian(), 1_000_000, 7)?;
    let expected = SMatrix::<f64, 6, 6>::from_diagonal(&[2.0, p1, 2.0, p2, 2.0, p1 * p2].into());
    let z = est.max_z_score(&expected);
    Ok(outcome(z <= 5.0, format!("max |z| = {z:.2} over 36 entries")))
}

const TREND_NS: [u64; 3] = [200, 400, 800];

/// Error rates of JNN decoding at message sizes on the boundary of the unified
/// region along the case (ii) rate direction.
fn mac_trend(noise: NoiseModel) -> macran::Result<Vec<(u64, f64, f64)>> {
    let pp = reference_pair();
    let d1 = capacity(pp.p1() / (1.0 + pp.p2()))?;
    let d2 = capacity(pp.p2())?;
    let mut out = Vec::new();
    for n in TREND_NS {
        let region = jnn_unified_point(n, pp, noise.xi(), 0.2, 0.0)?;
        let (lm1, lm2) = region.boundary_along(d1, d2)?;
        let to_size = |lm: f64| if lm.exp() >= usize::MAX as f64 { usize::MAX } else { lm.exp().round().max(1.0) as usize };
        let mut cfg = MacSimConfig::new(n as usize, to_size(lm1), to_size(lm2), pp, Decoder::Jnn, 10_000, 8);
        cfg.noise = noise.clone();
        let r = simulate_mac(&cfg).map_err(|e| match e {
            Error::BudgetExceeded { budget, .. } => Error::InvalidParameter {
                name: "budget",
                reason: format!(
                    "n={n} needs log M1 + log M2 = {:.1} nats (M1 M2 = e^{:.1}) joint candidates, budget {budget}",
                    lm1 + lm2,
                    lm1 + lm2
                ),
            },
            e => e,
        })?;
        out.push((n, r.p_err_hat, r.ci95_halfwidth));
    }
    Ok(out)
}

fn trend_ok(points: &[(u64, f64, f64)]) -> (bool, String) {
    let in_band = points.iter().all(|&(_, p, _)| (0.05..=0.45).contains(&p));
    let (first, last) = (points[0], points[points.len() - 1]);
    let toward = (last.1 - 0.2).abs() <= (first.1 - 0.2).abs() + 2.0 * first.2.max(last.2);
    let text = points.iter().map(|(n, p, h)| format!("n={n}: {p:.3}+-{h:.3}")).collect::<Vec<_>>().join(", ");
    (in_band && toward, text)
}

fn c8_trend() -> macran::Result<Outcome> {
    let (ok, text) = trend_ok(&mac_trend(NoiseModel::gaussian())?);
    Ok(outcome(ok, text))
}

fn c9_noise() -> macran::Result<Outcome> {
    let mut ok = true;
    let mut parts = Vec::new();
    for spec in [NoiseSpec::Uniform, NoiseSpec::Laplace] {
        let (pass, text) = trend_ok(&mac_trend(make_noise(&spec)?)?);
        ok &= pass;
        parts.push(format!("{:?}: {text}", spec.kind()));
    }
    Ok(outcome(ok, parts.join("; ")))
}

fn c10_stopping() -> macran::Result<Outcome> {
    let mut freq = Vec::new();
    for n in [100usize, 400, 1600] {
        let cfg = RacSimConfig::new(2, 8, 1.0, vec![n / 2, n], Decoder::Jnn, 10_000, 10);
        let r = simulate_rac(&cfg)?;
        let b = r.breakdown.expect("rac breakdown");
        freq.push((n, b.time as f64 / r.trials as f64));
    }
    let decreasing = freq.windows(2).all(|w| w[1].1 < w[0].1);
    let text = freq.iter().map(|(n, f)| format!("n={n}: {f:.4}")).collect::<Vec<_>>().join(", ");
    Ok(outcome(decreasing, format!("E_time frequency {text}")))
}

fn c11_rcu() -> macran::Result<Outcome> {
    let configs: [(usize, f64, Decoder); 10] = [
        (4, 0.03, Decoder::Jnn),
        (4, 0.06, Decoder::Sic),
        (8, 0.05, Decoder::Jnn),
        (8, 0.08, Decoder::Sic),
        (8, 0.12, Decoder::Jnn),
        (16, 0.06, Decoder::Jnn),
        (16, 0.10, Decoder::Sic),
        (16, 0.15, Decoder::Jnn),
        (16, 0.20, Decoder::Sic),
        (16, 0.30, Decoder::Jnn),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, &(m, p, decoder)) in configs.iter().enumerate() {
        let pp = PowerPair::new(p, p)?;
        let sim = simulate_mac(&MacSimConfig::new(100, m, m, pp, decoder, 4000, 110 + i as u64))?;
        let rcu = rcu_bound_mc(&MacSimConfig::new(100, m, m, pp, decoder, 2000, 1110 + i as u64), 1000)?;
        let holds = rcu >= sim.p_err_hat - 2.0 * sim.ci95_halfwidth;
        ok &= holds;
        parts.push(format!("{decoder} M={m} P={p}: {rcu:.3} vs {:.3}", sim.p_err_hat));
    }
    Ok(outcome(ok, parts.join("; ")))
}

fn c12_g_shape() -> macran::Result<Outcome> {
    let pp = PowerPair::new(0.1, 0.1)?;
    let t_grid = linear_grid(0.0, 9.0, 10);
    let mut scaled = Vec::new();
    for (i, n) in [50usize, 100, 200].into_iter().enumerate() {
        let mut rng = trial_rng(12, i as u64);
        let x1 = sample_sphere(n, pp.p1(), &mut rng)?;
        let x2 = sample_sphere(n, pp.p2(), &mut rng)?;
        let y: Vec<f64> = (0..n).map(|j| x1[j] + x2[j] + rng.sample::<f64, _>(StandardNormal)).collect();
        let g = estimate_g(&t_grid, &GContext::G1 { y: &y, x2: &x2, pp }, 4_000_000, 120 + i as u64)?;
        let row: Vec<f64> = t_grid.iter().zip(&g).map(|(&t, &gv)| (n as f64).sqrt() * t.exp() * gv).collect();
        scaled.push((n, row));
    }
    let fitted = scaled[0].1.iter().copied().fold(0.0, f64::max);
    let worst = scaled.iter().flat_map(|(_, r)| r.iter().copied()).fold(0.0, f64::max);
    let ratio = worst / fitted;
    let range = scaled
        .iter()
        .map(|(n, r)| {
            let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = r.iter().copied().fold(0.0, f64::max);
            format!("n={n}: [{lo:.3}, {hi:.3}]")
        })
        .collect::<Vec<_>>()
        .join(", ");
    Ok(outcome(fitted > 0.0 && ratio <= 1.5, format!("G = {fitted:.3}, max ratio {ratio:.3}; {range}")))
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        run(1, "dispersion Jacobian identity", secs(1), c1_jacobian),
        run(2, "V_rs reductions", secs(1), c2_reductions),
        run(3, "mu(k) sign sweep", secs(1), c3_mu),
        run(4, "case (ii) SIC staircase above JNN boundary", secs(30), c4_case_ii),
        run(5, "case (iii) SIC region strictly inside JNN", secs(30), c5_case_iii),
        run(6, "nearest-neighbor and density decoders agree", secs(120), c6_agreement),
        run(7, "empirical A-vector covariance", secs(30), c7_covariance),
        run(8, "MAC-JNN error trend toward target", secs(1200), c8_trend),
        run(9, "MAC-JNN trend under uniform and Laplace noise", secs(2400), c9_noise),
        run(10, "RAC stopping-time error decay", secs(600), c10_stopping),
        run(11, "RCU bound dominates simulation", secs(600), c11_rcu),
        run(12, "g-function scaling", secs(300), c12_g_shape),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
