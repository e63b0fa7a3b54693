//! Stream replay against dense ground truth.

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use sksv::budget::Budget;
use sksv::graph::{incidence_updates, oracle_laplacian, EdgeUpdate, GraphSketch, NegativeWeightPolicy};
use sksv::jl::{materialize_phi, JlFamily, SketchConfig};
use sksv::oracle::materialize_x;
use sksv::turnstile::{MatrixUpdate, SketchState};

fn config(family: JlFamily, m: usize, rows: usize, cols: usize) -> SketchConfig {
    SketchConfig {
        seed: 2024,
        family,
        m,
        rows,
        cols,
        eps: 0.5,
        delta: 0.05,
        k_hint: None,
    }
}

fn random_stream(rows: usize, cols: usize, len: usize, seed: u64) -> Vec<MatrixUpdate> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..len)
        .map(|_| MatrixUpdate::new(rng.random_range(0..rows), rng.random_range(0..cols), rng.random_range(-3.0..3.0)))
        .collect()
}

fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn sketch_equals_phi_times_materialized_x() {
    let (rows, cols) = (120, 7);
    let log = random_stream(rows, cols, 1_000, 1);
    for family in [JlFamily::Gaussian, JlFamily::Rademacher, JlFamily::SparseSign { s: 3 }] {
        let cfg = config(family, 40, rows, cols);
        let mut state = SketchState::new(cfg.clone()).unwrap();
        for u in &log {
            state.apply_update(u).unwrap();
        }
        let phi = materialize_phi(&cfg, &Budget::default()).unwrap();
        let x = materialize_x(&log, rows, cols, &Budget::default()).unwrap();
        assert!(rel_frobenius(&state.snapshot(), &(phi * x)) <= 1e-10, "{family}");
        assert_eq!(state.updates_applied(), 1_000);
    }
}

#[test]
fn graph_stream_matches_dense_incidence() {
    let n = 12;
    let mut rng = StdRng::seed_from_u64(2);
    let mut log = Vec::new();
    while log.len() < 1_000 {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u != v {
            log.push(EdgeUpdate::new(u, v, rng.random_range(-1.0..1.0)));
        }
    }
    let mut g = GraphSketch::for_rank(5, JlFamily::Gaussian, n, 4, 0.5, 0.05).unwrap();
    for e in &log {
        g.apply_edge_update(e).unwrap();
    }
    let cfg = g.config().clone();
    let phi = materialize_phi(&cfg, &Budget::default()).unwrap();
    let x = materialize_x(&incidence_updates(&log, n).unwrap(), cfg.rows, n, &Budget::default()).unwrap();
    assert!(rel_frobenius(g.state().sketch(), &(phi * &x)) <= 1e-10);

    let lap = oracle_laplacian(&log, n, NegativeWeightPolicy::Warn, &Budget::default()).unwrap();
    assert!((&lap.incidence - &x).amax() <= 1e-12);
}

#[test]
fn reordering_updates_only_reassociates() {
    let (rows, cols) = (80, 5);
    let mut log = random_stream(rows, cols, 1_000, 3);
    let cfg = config(JlFamily::Gaussian, 30, rows, cols);
    let mut a = SketchState::new(cfg.clone()).unwrap();
    a.apply_batch(&log).unwrap();
    log.shuffle(&mut StdRng::seed_from_u64(4));
    let mut b = SketchState::new(cfg).unwrap();
    for u in &log {
        b.apply_update(u).unwrap();
    }
    assert!(rel_frobenius(b.sketch(), a.sketch()) <= 1e-10);
}

#[test]
fn unit_weight_gram_is_the_laplacian() {
    let mut rng = StdRng::seed_from_u64(6);
    for _ in 0..20 {
        let n = rng.random_range(2..15);
        let mut log = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random_bool(0.3) {
                    log.push(EdgeUpdate::new(b, a, 1.0));
                    if rng.random_bool(0.2) {
                        log.push(EdgeUpdate::new(a, b, -1.0));
                    }
                }
            }
        }
        let lap = oracle_laplacian(&log, n, NegativeWeightPolicy::Error, &Budget::default()).unwrap();
        assert_eq!(lap.incidence_gram, lap.laplacian);
        let lam = lap.laplacian_eigenvalues();
        let rank = lam.iter().filter(|l| **l > 1e-8 * lam[0].max(1.0)).count();
        assert_eq!(rank, lap.expected_rank());
    }
}
