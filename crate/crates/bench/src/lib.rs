//! Shared fixtures for the benchmarks.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radar_autocal_core::track::{ctra_predict, CtraState};
use radar_autocal_core::{Timestamp, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` points scattered in a 50 m cube.
pub fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| Vec3::new(r.random_range(0.0..50.0), r.random_range(0.0..50.0), r.random_range(0.0..2.0)))
        .collect()
}

/// Square cost matrix with entries in [0, 100).
pub fn random_costs(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| (0..n).map(|_| r.random_range(0.0..100.0)).collect()).collect()
}

/// Noisy position samples of a turning CTRA vehicle at 15 Hz.
pub fn ctra_measurements(n: usize, seed: u64) -> (Vec<Timestamp>, Vec<Vector2<f64>>) {
    let mut r = rng(seed);
    let dt = 1.0 / 15.0;
    let mut s = CtraState::new(0.0, 0.0, 0.3, 10.0, 0.2, 0.1);
    let mut times = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        times.push(Timestamp((i as f64 * dt * 1e6).round() as i64));
        z.push(Vector2::new(s.x + r.random_range(-0.3..0.3), s.y + r.random_range(-0.3..0.3)));
        s = ctra_predict(&s, dt);
    }
    (times, z)
}
