//! Road-plane estimation from the merged moving-target cloud and the roll/pitch
//! leveling rotation derived from it.

use nalgebra::Matrix3xX;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{RotationMatrix, Vec3};

/// Above this many points density counting switches to a uniform grid.
pub const GRID_INDEX_THRESHOLD: usize = 50_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundError {
    #[error("empty point set")]
    Empty,
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundParams {
    /// Neighbor-count radius for the density filter, m.
    pub radius: f64,
    /// Points below this fraction of the maximum density are discarded.
    pub keep_fraction: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            radius: 1.0,
            keep_fraction: 0.2,
        }
    }
}

impl GroundParams {
    pub fn validate(&self) -> Result<(), GroundError> {
        if !(self.radius > 0.0) {
            return Err(GroundError::InvalidParams("radius must be > 0"));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction < 1.0) {
            return Err(GroundError::InvalidParams("keep_fraction must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Plane `n · p = d` in the sensor frame with `n_z > 0`, and the rotation taking
/// `n` onto `+z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    pub normal: Vec3,
    pub offset: f64,
    pub leveling: RotationMatrix,
}

/// Neighbor count (self included) within `radius` for every point.
pub fn point_densities(points: &[Vec3], radius: f64) -> Vec<usize> {
    if points.len() > GRID_INDEX_THRESHOLD {
        return grid_densities(points, radius);
    }
    let r2 = radius * radius;
    points
        .par_iter()
        .map(|p| points.iter().filter(|q| (*q - p).norm_squared() <= r2).count())
        .collect()
}

fn grid_densities(points: &[Vec3], radius: f64) -> Vec<usize> {
    use std::collections::HashMap;
    let key = |p: &Vec3| {
        (
            (p.x / radius).floor() as i64,
            (p.y / radius).floor() as i64,
            (p.z / radius).floor() as i64,
        )
    };
    let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        cells.entry(key(p)).or_default().push(i);
    }
    let r2 = radius * radius;
    points
        .par_iter()
        .map(|p| {
            let (cx, cy, cz) = key(p);
            let mut n = 0;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(idx) = cells.get(&(cx + dx, cy + dy, cz + dz)) {
                            n += idx.iter().filter(|&&j| (points[j] - p).norm_squared() <= r2).count();
                        }
                    }
                }
            }
            n
        })
        .collect()
}

/// Keeps points whose density is at least `keep_fraction` of the maximum density.
pub fn density_filter(points: &[Vec3], radius: f64, keep_fraction: f64) -> Result<Vec<Vec3>, GroundError> {
    if points.is_empty() {
        return Err(GroundError::Empty);
    }
    let dens = point_densities(points, radius);
    let max = *dens.iter().max().expect("non-empty") as f64;
    let threshold = keep_fraction * max;
    Ok(points
        .iter()
        .zip(&dens)
        .filter(|(_, &d)| d as f64 >= threshold)
        .map(|(p, _)| *p)
        .collect())
}

/// Total-least-squares plane through `points`: the left singular vector of the
/// smallest singular value of the centered point matrix. Returns `(n, d)`.
pub fn fit_plane(points: &[Vec3]) -> Result<(Vec3, f64), GroundError> {
    if points.len() < 3 {
        return Err(GroundError::Degenerate(format!("need at least 3 points, got {}", points.len())));
    }
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let centered = Matrix3xX::from_iterator(points.len(), points.iter().flat_map(|p| (p - centroid).into_iter().copied().collect::<Vec<_>>()));
    let svd = centered.svd(true, false);
    let u = svd.u.expect("svd u");
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let (s1, s2) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    if s1 <= 0.0 || s2 <= 1e-9 * s1 {
        return Err(GroundError::Degenerate("points are collinear or coincident".into()));
    }
    let mut n: Vec3 = u.column(order[2]).into_owned().normalize();
    if n.z < 0.0 {
        n = -n;
    }
    Ok((n, n.dot(&centroid)))
}

/// Rotation `Ry(β)·Rx(α)` with `R · n = [0, 0, 1]ᵀ` for a unit normal with `n_z > 0`.
///
/// Writing `n = [−sin β, sin α cos β, cos α cos β]` gives `β = −asin n_x`,
/// `α = atan2(n_y, n_z)`. The result has no yaw component, so it is exactly the
/// roll/pitch part of a `Rz·Ry·Rx` sensor orientation. For a normal tilted about a
/// single axis it coincides with the minimal rotation (angle `acos n_z`).
pub fn leveling_rotation(n: &Vec3) -> RotationMatrix {
    let n = n.normalize();
    if n.x == 0.0 && n.y == 0.0 {
        return RotationMatrix::identity();
    }
    let pitch = -n.x.clamp(-1.0, 1.0).asin();
    let roll = n.y.atan2(n.z);
    RotationMatrix::rot_y(pitch) * RotationMatrix::rot_x(roll)
}

/// Density filter → plane fit → leveling rotation.
pub fn estimate_ground(points: &[Vec3], radius: f64, keep_fraction: f64) -> Result<GroundPlane, GroundError> {
    let dense = density_filter(points, radius, keep_fraction)?;
    let (normal, offset) = fit_plane(&dense)?;
    Ok(GroundPlane {
        normal,
        offset,
        leveling: leveling_rotation(&normal),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{euler_to_rotation, rotation_error_angle, rotation_to_euler};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    #[test]
    fn uniform_grid_keeps_everything() {
        // periodic-free grid: interior and edge densities differ, so use a
        // radius that only counts the point itself
        let pts: Vec<Vec3> = (0..10).flat_map(|i| (0..10).map(move |j| Vec3::new(i as f64, j as f64, 0.0))).collect();
        assert_eq!(density_filter(&pts, 0.5, 0.2).unwrap().len(), 100);
        // with 4-neighbourhood counting, min density 3 ≥ 0.2 · 5
        assert_eq!(density_filter(&pts, 1.0, 0.2).unwrap().len(), 100);
    }

    #[test]
    fn distant_point_is_removed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut pts: Vec<Vec3> = Vec::new();
        while pts.len() < 100 {
            let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if p.norm() <= 1.0 {
                pts.push(p);
            }
        }
        pts.push(Vec3::new(50.0, 0.0, 0.0));
        // brute-force oracle: every blob point sees all 100 blob points within 2 m
        let oracle: Vec<usize> = pts.iter().map(|p| pts.iter().filter(|q| (*q - p).norm() <= 2.0).count()).collect();
        assert_eq!(oracle[..100].iter().max(), Some(&100));
        assert_eq!(oracle[100], 1);
        let kept = density_filter(&pts, 2.0, 0.2).unwrap();
        assert_eq!(kept.len(), 100);
        assert!(kept.iter().all(|p| p.x < 2.0));
    }

    #[test]
    fn density_edge_cases() {
        assert_eq!(density_filter(&[Vec3::new(1.0, 2.0, 3.0)], 1.0, 0.2).unwrap().len(), 1);
        assert_eq!(density_filter(&[], 1.0, 0.2), Err(GroundError::Empty));
    }

    #[test]
    fn grid_index_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-1.0..1.0)))
            .collect();
        assert_eq!(grid_densities(&pts, 1.3), point_densities(&pts, 1.3));
    }

    #[test]
    fn flat_plane_normal() {
        let pts: Vec<Vec3> = (0..5).flat_map(|i| (0..5).map(move |j| Vec3::new(i as f64, j as f64 * 0.7, 0.0))).collect();
        let (n, d) = fit_plane(&pts).unwrap();
        assert_eq!(n, Vec3::z());
        assert_eq!(d, 0.0);
    }

    #[test]
    fn tilted_plane_normal() {
        let tan = 10f64.to_radians().tan();
        let pts: Vec<Vec3> = (0..7).flat_map(|i| (0..6).map(move |j| {
            let x = i as f64 * 1.3 - 4.0;
            Vec3::new(x, j as f64 - 2.5, x * tan)
        })).collect();
        let (n, _) = fit_plane(&pts).unwrap();
        let s = 10f64.to_radians();
        assert!((n - Vec3::new(-s.sin(), 0.0, s.cos())).amax() < 1e-9);
    }

    #[test]
    fn noisy_plane_monte_carlo() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let truth = Vec3::new(0.1, -0.2, 1.0).normalize();
        let u = truth.cross(&Vec3::x()).normalize();
        let v = truth.cross(&u);
        let pts: Vec<Vec3> = (0..10_000)
            .map(|_| u * rng.random_range(-25.0..25.0) + v * rng.random_range(-25.0..25.0) + truth * (3.0 + noise.sample(&mut rng)))
            .collect();
        let (n, _) = fit_plane(&pts).unwrap();
        assert!(n.dot(&truth).clamp(-1.0, 1.0).acos().to_degrees() < 0.2);
    }

    #[test]
    fn collinear_is_degenerate() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.5)).collect();
        assert!(matches!(fit_plane(&pts), Err(GroundError::Degenerate(_))));
        assert!(matches!(fit_plane(&pts[..2]), Err(GroundError::Degenerate(_))));
        assert!(matches!(estimate_ground(&pts, 1.0, 0.2), Err(GroundError::Degenerate(_))));
    }

    #[test]
    fn leveling_cases() {
        assert_eq!(leveling_rotation(&Vec3::z()), RotationMatrix::identity());
        let s = 12f64.to_radians();
        let n = Vec3::new(0.0, -s.sin(), s.cos());
        let r = leveling_rotation(&n);
        assert!((r.apply(&n) - Vec3::z()).amax() < 1e-12);
        assert!((rotation_error_angle(&r, &RotationMatrix::identity()) - s).abs() < 1e-12);
    }

    #[test]
    fn leveling_recovers_sensor_roll_pitch() {
        let (roll, pitch) = (1.5f64.to_radians(), -12f64.to_radians());
        let sensor = euler_to_rotation(roll, pitch, 2.1);
        // world up expressed in the sensor frame
        let n = sensor.transpose().apply(&Vec3::z());
        let e = rotation_to_euler(&leveling_rotation(&n)).unwrap();
        assert!((e.roll - roll).abs() < 1e-12 && (e.pitch - pitch).abs() < 1e-12 && e.yaw.abs() < 1e-12);
    }

    #[test]
    fn level_scene_gives_identity() {
        let pts: Vec<Vec3> = (0..20).flat_map(|i| (0..4).map(move |j| Vec3::new(10.0 + i as f64 * 0.5, j as f64 * 0.9, -4.5))).collect();
        let g = estimate_ground(&pts, 1.0, 0.2).unwrap();
        assert!(rotation_error_angle(&g.leveling, &RotationMatrix::identity()).to_degrees() < 0.05);
        assert!((g.offset + 4.5).abs() < 1e-9);
    }

    fn sum_sq_dist(points: &[Vec3], n: &Vec3) -> f64 {
        let c = points.iter().sum::<Vec3>() / points.len() as f64;
        points.iter().map(|p| n.dot(&(p - c)).powi(2)).sum()
    }

    proptest! {
        #[test]
        fn leveling_maps_normal_to_z(x in -1.0..1.0f64, y in -1.0..1.0f64, z in 0.1..1.0f64) {
            let n = Vec3::new(x, y, z).normalize();
            prop_assume!(n.z > 0.1);
            let r = leveling_rotation(&n);
            prop_assert!((r.apply(&n) - Vec3::z()).amax() < 1e-12);
            prop_assert!(RotationMatrix::new(*r.matrix()).is_ok());
            prop_assert!(rotation_to_euler(&r).unwrap().yaw.abs() < 1e-9);
        }

        #[test]
        fn plane_fit_is_rigid_motion_equivariant(
            a in -3.0..3.0f64, b in -1.4..1.4f64, g in -3.0..3.0f64,
            t in proptest::array::uniform3(-50.0..50.0f64),
            pts in proptest::collection::vec(proptest::array::uniform3(-10.0..10.0f64), 8..30),
        ) {
            let pts: Vec<Vec3> = pts.into_iter().map(|p| Vec3::new(p[0], p[1], 0.1 * p[2])).collect();
            let Ok((n, _)) = fit_plane(&pts) else { return Ok(()); };
            let r = euler_to_rotation(a, b, g);
            let moved: Vec<Vec3> = pts.iter().map(|p| r.apply(p) + Vec3::from(t)).collect();
            let (n2, _) = fit_plane(&moved).unwrap();
            let expected = r.apply(&n);
            let err = (n2 - expected).amax().min((n2 + expected).amax());
            prop_assert!(err < 1e-9, "err {err}");
        }

        #[test]
        fn plane_fit_beats_unit_sphere_grid(
            pts in proptest::collection::vec(proptest::array::uniform3(-5.0..5.0f64), 5..12),
        ) {
            let pts: Vec<Vec3> = pts.into_iter().map(Vec3::from).collect();
            let Ok((n, _)) = fit_plane(&pts) else { return Ok(()); };
            let best = sum_sq_dist(&pts, &n);
            let mut grid_best = f64::INFINITY;
            for el in (0..=90).map(|d| (d as f64).to_radians()) {
                for az in (0..360).map(|d| (d as f64).to_radians()) {
                    let m = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                    grid_best = grid_best.min(sum_sq_dist(&pts, &m));
                }
            }
            prop_assert!(best <= grid_best + 1e-9);
            // grid tolerance: the grid optimum is within one 1° step of the fit
            let spread: f64 = pts.iter().map(|p| p.norm_squared()).sum();
            prop_assert!(grid_best - best <= spread * (1f64.to_radians()).powi(2) * 4.0 + 1e-9);
        }

        #[test]
        fn density_filter_is_monotone_subset(
            pts in proptest::collection::vec(proptest::array::uniform3(-5.0..5.0f64), 1..60),
            f1 in 0.05..0.95f64, f2 in 0.05..0.95f64,
        ) {
            let pts: Vec<Vec3> = pts.into_iter().map(Vec3::from).collect();
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let a = density_filter(&pts, 2.0, lo).unwrap();
            let b = density_filter(&pts, 2.0, hi).unwrap();
            prop_assert!(b.len() <= a.len());
            prop_assert!(b.iter().all(|p| a.contains(p)));
            prop_assert!(a.iter().all(|p| pts.contains(p)));
        }
    }
}
