mod common;

use innoscope_core::jdrc::{self, JdrcOptions, Method};
use innoscope_core::Error;
use nalgebra::DMatrix;

fn opts(seed: u64, restarts: usize) -> JdrcOptions {
    JdrcOptions { seed, restarts, ..Default::default() }
}

#[test]
fn small_sets_match_exhaustive_search() {
    for seed in 0..8u64 {
        let mut r = common::rng(50 + seed);
        let n = 5 + (seed as usize % 4);
        let x = common::gaussian(n, 3, &mut r);
        for q in [1, 2] {
            let brute = common::fkm_brute_force(&x, q);
            let m = jdrc::fit_fkm(&x, 2, q, &opts(seed, 100)).unwrap();
            assert!((m.objective - brute).abs() <= 1e-9, "seed {seed} q {q}: {} vs {brute}", m.objective);
        }
    }
}

#[test]
fn full_rank_projection_is_plain_kmeans() {
    for seed in 0..3u64 {
        let (x, _) = common::blobs(25, 3, 6, 2.5, 30 + seed);
        let (best, _) = common::kmeans_oracle(&x, 3, 40, seed);
        let m = jdrc::fit_fkm(&x, 3, 6, &opts(seed, 20)).unwrap();
        assert!((m.objective - best).abs() <= 1e-9 * best.max(1.0), "{} vs {best}", m.objective);
        assert!((common::within_ss(&x, &m.labels, 3) - m.objective).abs() < 1e-9 * best);
    }
}

#[test]
fn planted_subspace_is_recovered() {
    for seed in 0..4u64 {
        let (x, truth) = common::planted_subspace(60, 4, 8, 3.0, 0.3, 1.0, 70 + seed);
        let m = jdrc::fit_fkm(&x, 4, 2, &opts(seed, 20)).unwrap();
        assert!(jdrc::adjusted_rand_index(&m.labels, &truth) >= 0.99);
    }
}

#[test]
fn fkm_prefers_the_tight_subspace_and_rkm_the_spread_one() {
    // Clusters live in a low-variance subspace; the masking directions have
    // large variance and no cluster structure.
    let (x, truth) = common::planted_subspace(80, 3, 6, 1.5, 0.3, 4.0, 11);
    let fkm = jdrc::fit_fkm(&x, 3, 2, &opts(0, 30)).unwrap();
    let rkm = jdrc::fit_rkm(&x, 3, 2, &opts(0, 30)).unwrap();
    let ari_f = jdrc::adjusted_rand_index(&fkm.labels, &truth);
    let ari_r = jdrc::adjusted_rand_index(&rkm.labels, &truth);
    assert!(ari_f >= 0.99, "fkm ARI {ari_f}");
    assert!(ari_r < ari_f, "rkm ARI {ari_r} vs fkm {ari_f}");
}

#[test]
fn rkm_with_singleton_clusters_is_truncated_svd() {
    let mut r = common::rng(5);
    let x = common::gaussian(5, 4, &mut r);
    for q in 1..=3 {
        let m = jdrc::fit_rkm(&x, 5, q, &opts(1, 5)).unwrap();
        let sv = x.clone().svd(false, false).singular_values;
        let mut s2: Vec<f64> = sv.iter().map(|s| s * s).collect();
        s2.sort_by(|a, b| b.total_cmp(a));
        let residual: f64 = s2[q..].iter().sum();
        assert!((m.objective - residual).abs() <= 1e-9, "q {q}: {} vs {residual}", m.objective);
    }
}

#[test]
fn steps_never_increase_and_fit_is_a_fixed_point() {
    let (x, _) = common::planted_subspace(40, 3, 5, 2.0, 0.8, 1.0, 3);
    for method in [Method::Fkm, Method::Rkm] {
        for seed in 0..10u64 {
            let m = if method == Method::Fkm {
                jdrc::fit_fkm(&x, 3, 2, &opts(seed, 1)).unwrap()
            } else {
                jdrc::fit_rkm(&x, 3, 2, &opts(seed, 1)).unwrap()
            };
            assert!(m.objective_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
            let again = jdrc::extra_iteration(&m, &x);
            assert!(again <= m.objective * (1.0 + 1e-12));
            assert!((again - m.objective).abs() <= 1e-6 * m.objective);

            // Each half-step on its own is an improvement.
            let a = jdrc::update_projection(method, &x, &m.labels, 3, 2);
            assert!(jdrc::objective(method, &x, &a, &m.labels, 3) <= m.objective * (1.0 + 1e-12));
            let l = jdrc::update_membership(&x, &m.a, &m.labels, 3);
            assert!(jdrc::objective(method, &x, &m.a, &l, 3) <= m.objective * (1.0 + 1e-12));
        }
    }
}

#[test]
fn fits_are_deterministic_and_canonical() {
    let (x, _) = common::planted_subspace(30, 4, 6, 3.0, 0.5, 1.0, 8);
    let a = jdrc::fit_fkm(&x, 4, 2, &opts(42, 10)).unwrap();
    let b = jdrc::fit_fkm(&x, 4, 2, &opts(42, 10)).unwrap();
    assert_eq!(a, b);
    assert!(a.sizes.windows(2).all(|w| w[0] >= w[1]));
    let ata = a.a.transpose() * &a.a;
    assert!((ata - DMatrix::identity(2, 2)).abs().max() < 1e-10);
    assert_eq!(a.sizes.iter().sum::<usize>(), 120);
    let u = a.membership_matrix();
    assert!(u.row_iter().all(|r| r.sum() == 1.0));
}

#[test]
fn fit_from_labels_starts_where_told() {
    let (x, truth) = common::planted_subspace(30, 3, 5, 3.0, 0.5, 1.0, 9);
    let m = jdrc::fit_from_labels(Method::Fkm, &x, &truth, 3, 2, &JdrcOptions::default()).unwrap();
    assert_eq!(jdrc::adjusted_rand_index(&m.labels, &truth), 1.0);
    assert!(jdrc::fit_from_labels(Method::Fkm, &x, &truth[1..], 3, 2, &JdrcOptions::default()).is_err());
}

#[test]
fn argument_validation() {
    let mut r = common::rng(2);
    let x = common::gaussian(10, 4, &mut r);
    assert!(matches!(jdrc::fit_fkm(&x, 1, 2, &opts(0, 1)), Err(Error::Argument(_))));
    assert!(matches!(jdrc::fit_fkm(&x, 11, 2, &opts(0, 1)), Err(Error::Argument(_))));
    assert!(matches!(jdrc::fit_fkm(&x, 3, 0, &opts(0, 1)), Err(Error::Range { .. })));
    assert!(matches!(jdrc::fit_fkm(&x, 3, 5, &opts(0, 1)), Err(Error::Range { .. })));
    assert!(matches!(jdrc::fit_fkm(&x, 3, 2, &opts(0, 0)), Err(Error::Argument(_))));
    let mut bad = x.clone();
    bad[(0, 0)] = f64::NAN;
    assert!(matches!(jdrc::fit_fkm(&bad, 3, 2, &opts(0, 1)), Err(Error::Numeric(_))));
}

#[test]
fn fixture_run_reproduces_published_structure() {
    let p = common::fixture();
    let z = innoscope_core::dataset::standardize(&p).unwrap();
    let m = jdrc::fit_fkm(&z.data, 4, 2, &JdrcOptions::default()).unwrap();
    assert_eq!(m.sizes, vec![679, 477, 475, 281]);
    let coords = jdrc::project(&m, &z.data).unwrap();
    let keys: Vec<String> = p.rows.iter().map(|r| r.key()).collect();
    let near = jdrc::nearest_to_centroid(&m, &coords, &keys).unwrap();
    assert_eq!(near[0].key, "ITF5 - Basilicata_2016");
    assert!((near[0].sq_dist_to_centroid - 0.000199).abs() < 5e-7);
    assert!((near[0].dist_to_centroid - 0.014096).abs() < 5e-7);
}
