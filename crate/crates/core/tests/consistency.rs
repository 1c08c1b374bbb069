use approx::assert_abs_diff_eq;
use macran::analytics::{capacity_vector, dispersion_matrix, MatrixKind, PowerPair};
use macran::codec::Codebook;
use macran::mac_regions::{jnn_unified_point, mac_jnn_region, mac_sic_region, default_split_grid, Case};
use macran::montecarlo::{simulate_mac, trial_rng, MacSimConfig};
use macran::mvnormal::{mvn_lower_prob, q_inv};
use macran::noise::{empirical_moments, make_noise, NoiseSpec};
use macran::Decoder;

fn reference_pair() -> PowerPair {
    PowerPair::new(5.0, 2.0).unwrap()
}

#[test]
fn unified_region_marginals_match_corner_cases() {
    // With L2 huge, membership reduces to the single-user constraint on user 1.
    let u = jnn_unified_point(400, reference_pair(), 3.0, 0.2, 0.0).unwrap();
    let c = capacity_vector(reference_pair());
    let v = dispersion_matrix(MatrixKind::Vfull, reference_pair(), 3.0).unwrap();
    let l1 = (v.get(0, 0)).sqrt() * q_inv(0.2).unwrap();
    let log_m1 = 400.0 * c[0] - 20.0 * l1;
    assert_abs_diff_eq!(u.coverage(log_m1 - 1e-6, -1e6), 0.8, epsilon = 1e-6);
}

#[test]
fn corner_regions_at_median_error() {
    // At eps = 1/2 every single-constraint corner passes through zero.
    for case in [Case::I, Case::Iii] {
        let r = mac_jnn_region(case, Some(0.5), reference_pair(), 3.0, 0.5).unwrap();
        assert_abs_diff_eq!(r.min_l2(0.0), 0.0, epsilon = 1e-12);
    }
    let v = mac_jnn_region(Case::V, Some(0.5), reference_pair(), 3.0, 0.5).unwrap();
    assert!(v.contains(0.0, -1e9));
    assert!(!v.contains(-1e-9, 1e9));
}

#[test]
fn sic_region_inside_jnn_for_every_case() {
    let grid: Vec<f64> = (1..40).map(|i| i as f64 * 0.1).collect();
    for case in Case::ALL {
        let alpha = case.needs_alpha().then_some(0.3);
        let j = mac_jnn_region(case, alpha, reference_pair(), 3.0, 0.1).unwrap();
        let s = mac_sic_region(case, alpha, reference_pair(), 3.0, 0.1, &default_split_grid(0.1)).unwrap();
        for &l1 in &grid {
            assert!(s.min_l2(l1) >= j.min_l2(l1) - 1e-9, "{case} {l1}");
        }
    }
}

#[test]
fn orthant_probability_of_vfull_at_zero() {
    let v = dispersion_matrix(MatrixKind::Vfull, reference_pair(), 3.0).unwrap();
    let p = mvn_lower_prob(&[0.0, 0.0, 0.0], &v, 1e-9).unwrap();
    assert!(p > 0.125 && p < 0.5);
}

#[test]
fn codebook_roundtrip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cb.bin");
    let cb = Codebook::generate(5, 17, 2.5, &mut trial_rng(3, 0)).unwrap();
    cb.save(&path).unwrap();
    assert_eq!(Codebook::load(&path).unwrap(), cb);
}

#[test]
fn noise_models_are_unit_power() {
    for (spec, xi) in [(NoiseSpec::Gaussian, 3.0), (NoiseSpec::Uniform, 1.8), (NoiseSpec::Laplace, 6.0)] {
        let model = make_noise(&spec).unwrap();
        assert_abs_diff_eq!(model.xi(), xi, epsilon = 1e-12);
        let m = empirical_moments(&model, 400_000, 5).unwrap();
        assert_abs_diff_eq!(m.m2, 1.0, epsilon = 0.02);
        assert_abs_diff_eq!(m.m4, xi, epsilon = 0.15 * xi);
    }
}

#[test]
fn sic_never_beats_jnn_on_shared_draws() {
    // Same seed gives the same codebooks, messages and noise to both decoders.
    let pp = PowerPair::new(0.4, 0.4).unwrap();
    let jnn = simulate_mac(&MacSimConfig::new(30, 8, 8, pp, Decoder::Jnn, 2000, 21)).unwrap();
    let sic = simulate_mac(&MacSimConfig::new(30, 8, 8, pp, Decoder::Sic, 2000, 21)).unwrap();
    assert!(jnn.p_err_hat <= sic.p_err_hat + 2.0 * sic.ci95_halfwidth, "{} {}", jnn.p_err_hat, sic.p_err_hat);
}
