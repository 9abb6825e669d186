//! Unscented Kalman filter with the CTRA model and an unscented RTS smoother,
//! measuring planar position only.

use nalgebra::{Matrix2, Matrix2x6, Matrix6, Matrix6x2, SymmetricEigen, Vector2, Vector6};

use super::ctra::{ctra_predict, CtraState};
use super::{TrackError, TrackParams};
use crate::geometry::wrap_angle;
use crate::types::Timestamp;

const N: usize = 6;
const THETA: usize = 2;
pub const PSD_TOL: f64 = 1e-9;

/// Sigma-point weights for the scaled unscented transform.
#[derive(Debug, Clone, Copy)]
struct Weights {
    gamma: f64,
    wm0: f64,
    wc0: f64,
    wi: f64,
}

impl Weights {
    fn new(alpha: f64, beta: f64, kappa: f64) -> Self {
        let n = N as f64;
        let lambda = alpha * alpha * (n + kappa) - n;
        Self {
            gamma: (n + lambda).sqrt(),
            wm0: lambda / (n + lambda),
            wc0: lambda / (n + lambda) + 1.0 - alpha * alpha + beta,
            wi: 0.5 / (n + lambda),
        }
    }

    fn mean(&self, i: usize) -> f64 {
        if i == 0 {
            self.wm0
        } else {
            self.wi
        }
    }

    fn cov(&self, i: usize) -> f64 {
        if i == 0 {
            self.wc0
        } else {
            self.wi
        }
    }
}

fn state_diff(a: &Vector6<f64>, b: &Vector6<f64>) -> Vector6<f64> {
    let mut d = a - b;
    d[THETA] = wrap_angle(d[THETA]);
    d
}

fn wrap_state(mut v: Vector6<f64>) -> Vector6<f64> {
    v[THETA] = wrap_angle(v[THETA]);
    v
}

/// Matrix square root `S` with `S Sᵀ = P`, falling back to a clamped eigen
/// decomposition when Cholesky fails.
fn sqrt_psd(p: &Matrix6<f64>) -> Matrix6<f64> {
    let sym = (p + p.transpose()) * 0.5;
    if let Some(c) = sym.cholesky() {
        return c.l();
    }
    let eig = SymmetricEigen::new(sym);
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix6::from_diagonal(&d)
}

fn sigma_points(x: &Vector6<f64>, p: &Matrix6<f64>, w: &Weights) -> [Vector6<f64>; 2 * N + 1] {
    let s = sqrt_psd(p) * w.gamma;
    let mut pts = [*x; 2 * N + 1];
    for i in 0..N {
        pts[1 + i] = wrap_state(x + s.column(i));
        pts[1 + N + i] = wrap_state(x - s.column(i));
    }
    pts
}

/// Weighted mean with a circular mean for the heading. Computed relative to the
/// first point, which keeps the large central weight from amplifying rounding.
fn sigma_mean(pts: &[Vector6<f64>], w: &Weights) -> Vector6<f64> {
    let base = pts[0];
    let mut acc = Vector6::zeros();
    let (mut s, mut c) = (0.0, 0.0);
    for (i, p) in pts.iter().enumerate() {
        let d = state_diff(p, &base);
        acc += d * w.mean(i);
        s += w.mean(i) * d[THETA].sin();
        c += w.mean(i) * d[THETA].cos();
    }
    acc[THETA] = s.atan2(c);
    wrap_state(base + acc)
}

/// Continuous white noise on jerk (along track) and on turn acceleration.
pub fn process_noise(x: &Vector6<f64>, dt: f64, sigma_jerk: f64, sigma_yaw_acc: f64) -> Matrix6<f64> {
    let qj = sigma_jerk * sigma_jerk;
    let qw = sigma_yaw_acc * sigma_yaw_acc;
    let (dt2, dt3, dt4, dt5) = (dt * dt, dt.powi(3), dt.powi(4), dt.powi(5));
    // chain (s, v, a)
    let j = [
        [dt5 / 20.0, dt4 / 8.0, dt3 / 6.0],
        [dt4 / 8.0, dt3 / 3.0, dt2 / 2.0],
        [dt3 / 6.0, dt2 / 2.0, dt],
    ];
    let (sin, cos) = x[THETA].sin_cos();
    // s projects onto (x, y) along the heading
    let map = |k: usize| -> Vec<(usize, f64)> {
        match k {
            0 => vec![(0, cos), (1, sin)],
            1 => vec![(3, 1.0)],
            _ => vec![(4, 1.0)],
        }
    };
    let mut q = Matrix6::zeros();
    for a in 0..3 {
        for b in 0..3 {
            for &(ia, ca) in &map(a) {
                for &(ib, cb) in &map(b) {
                    q[(ia, ib)] += ca * cb * j[a][b] * qj;
                }
            }
        }
    }
    q[(THETA, THETA)] += dt3 / 3.0 * qw;
    q[(THETA, 5)] += dt2 / 2.0 * qw;
    q[(5, THETA)] += dt2 / 2.0 * qw;
    q[(5, 5)] += dt * qw;
    q
}

/// One filtered or smoothed estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub t: Timestamp,
    pub state: CtraState,
    pub cov: Matrix6<f64>,
}

/// Forward-filtered and backward-smoothed estimates, one per measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherOutput {
    pub filtered: Vec<Estimate>,
    pub smoothed: Vec<Estimate>,
}

fn check_psd(p: &Matrix6<f64>, t: Timestamp) -> Result<(), TrackError> {
    let sym = (p + p.transpose()) * 0.5;
    let ok = sym.iter().all(|v| v.is_finite()) && SymmetricEigen::new(sym).eigenvalues.iter().all(|&l| l >= -PSD_TOL);
    if ok {
        Ok(())
    } else {
        Err(TrackError::NumericalFailure(t))
    }
}

/// Initial state from the first two measurements: position from the first,
/// speed and heading from the finite difference, `a = ω = 0`.
fn initial_state(times: &[Timestamp], z: &[Vector2<f64>]) -> (Vector6<f64>, Matrix6<f64>) {
    let dt = times[1].seconds_since(times[0]);
    let d = z[1] - z[0];
    let v = d.norm() / dt;
    let theta = if d.norm() > 0.0 { d.y.atan2(d.x) } else { 0.0 };
    let x = Vector6::new(z[0].x, z[0].y, wrap_angle(theta), v, 0.0, 0.0);
    let p = Matrix6::from_diagonal(&Vector6::new(
        1.0,
        1.0,
        30f64.to_radians().powi(2),
        25.0,
        4.0,
        20f64.to_radians().powi(2),
    ));
    (x, p)
}

/// UKF forward pass followed by the unscented RTS backward pass.
///
/// `times` must be strictly increasing and match `z` in length (≥ 2).
pub fn smooth_points(times: &[Timestamp], z: &[Vector2<f64>], params: &TrackParams) -> Result<SmootherOutput, TrackError> {
    assert_eq!(times.len(), z.len());
    if times.len() < 2 {
        return Err(TrackError::TooShort { len: times.len(), min: 2 });
    }
    let w = Weights::new(params.ukf_alpha, params.ukf_beta, params.ukf_kappa);
    let r = Matrix2::identity() * params.sigma_meas.powi(2);
    let h = Matrix2x6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0);

    let (mut x, mut p) = initial_state(times, z);
    let n = times.len();
    let mut xf = Vec::with_capacity(n);
    let mut pf = Vec::with_capacity(n);
    // predicted mean/cov and cross covariance for steps 1..n
    let mut xp = vec![Vector6::zeros(); n];
    let mut pp = vec![Matrix6::zeros(); n];
    let mut dc = vec![Matrix6::zeros(); n];

    for k in 0..n {
        if k > 0 {
            let dt = times[k].seconds_since(times[k - 1]);
            let sig = sigma_points(&x, &p, &w);
            let prop: Vec<Vector6<f64>> = sig
                .iter()
                .map(|s| ctra_predict(&CtraState::from_vector(s), dt).to_vector())
                .collect();
            let mean = sigma_mean(&prop, &w);
            let mut cov = process_noise(&mean, dt, params.sigma_jerk, params.sigma_yaw_acc);
            let mut cross = Matrix6::zeros();
            for i in 0..sig.len() {
                let dy = state_diff(&prop[i], &mean);
                let dx = state_diff(&sig[i], &x);
                cov += dy * dy.transpose() * w.cov(i);
                cross += dx * dy.transpose() * w.cov(i);
            }
            let cov = (cov + cov.transpose()) * 0.5;
            check_psd(&cov, times[k])?;
            xp[k] = mean;
            pp[k] = cov;
            dc[k] = cross;
            x = mean;
            p = cov;
        }
        // linear position measurement: the unscented update reduces to the KF update
        let s = h * p * h.transpose() + r;
        let s_inv = s.try_inverse().ok_or(TrackError::NumericalFailure(times[k]))?;
        let gain: Matrix6x2<f64> = p * h.transpose() * s_inv;
        let innov = z[k] - h * x;
        x = wrap_state(x + gain * innov);
        let ikh = Matrix6::identity() - gain * h;
        p = ikh * p * ikh.transpose() + gain * r * gain.transpose();
        p = (p + p.transpose()) * 0.5;
        check_psd(&p, times[k])?;
        xf.push(x);
        pf.push(p);
    }

    let mut xs = xf.clone();
    let mut ps = pf.clone();
    for k in (0..n - 1).rev() {
        let pp_inv = pp[k + 1]
            .try_inverse()
            .ok_or(TrackError::NumericalFailure(times[k + 1]))?;
        let g = dc[k + 1] * pp_inv;
        xs[k] = wrap_state(xf[k] + g * state_diff(&xs[k + 1], &xp[k + 1]));
        let pk = pf[k] + g * (ps[k + 1] - pp[k + 1]) * g.transpose();
        ps[k] = (pk + pk.transpose()) * 0.5;
        check_psd(&ps[k], times[k])?;
    }

    let pack = |xs: &[Vector6<f64>], ps: &[Matrix6<f64>]| -> Vec<Estimate> {
        (0..n)
            .map(|k| Estimate {
                t: times[k],
                state: CtraState::from_vector(&xs[k]),
                cov: ps[k],
            })
            .collect()
    };
    Ok(SmootherOutput {
        filtered: pack(&xf, &pf),
        smoothed: pack(&xs, &ps),
    })
}
