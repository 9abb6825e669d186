//! Constant turn rate and acceleration (CTRA) motion model.

use nalgebra::{Complex, Vector6};

use crate::geometry::wrap_angle;

/// Below this turn rate the straight-line (constant acceleration) limit is used, rad/s.
pub const OMEGA_EPS: f64 = 1e-6;

/// Planar kinematic state. `theta` is kept wrapped to (−π, π].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtraState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub a: f64,
    pub omega: f64,
}

impl CtraState {
    pub fn new(x: f64, y: f64, theta: f64, v: f64, a: f64, omega: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            v,
            a,
            omega,
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.x, self.y, self.theta, self.v, self.a, self.omega)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }
}

/// `(e^z − 1)/z`, i.e. `∫₀¹ e^{zs} ds`.
fn e1(z: Complex<f64>) -> Complex<f64> {
    if z.norm() < 0.1 {
        // Σ z^k / (k+1)!
        let mut term = Complex::new(1.0, 0.0);
        let mut sum = term;
        for k in 1..20 {
            term = term * z / (k as f64 + 1.0);
            sum += term;
        }
        sum
    } else {
        (z.exp() - 1.0) / z
    }
}

/// `(e^z (z − 1) + 1)/z²`, i.e. `∫₀¹ s e^{zs} ds`.
fn e2(z: Complex<f64>) -> Complex<f64> {
    if z.norm() < 0.1 {
        // Σ z^k / (k! (k+2))
        let mut pow_fact = Complex::new(1.0, 0.0);
        let mut sum = pow_fact / 2.0;
        for k in 1..20 {
            pow_fact = pow_fact * z / k as f64;
            sum += pow_fact / (k as f64 + 2.0);
        }
        sum
    } else {
        (z.exp() * (z - 1.0) + 1.0) / (z * z)
    }
}

/// Propagates `s` by `dt` seconds with `a` and `omega` held constant.
pub fn ctra_predict(s: &CtraState, dt: f64) -> CtraState {
    debug_assert!(dt >= 0.0);
    let (sin, cos) = s.theta.sin_cos();
    let (dx, dy) = if s.omega.abs() < OMEGA_EPS {
        let d = s.v * dt + 0.5 * s.a * dt * dt;
        (d * cos, d * sin)
    } else {
        // x + i y advances by ∫ (v + aτ) e^{i(θ + ωτ)} dτ
        let z = Complex::new(0.0, s.omega * dt);
        let disp = Complex::new(cos, sin) * (e1(z) * (s.v * dt) + e2(z) * (s.a * dt * dt));
        (disp.re, disp.im)
    };
    CtraState::new(s.x + dx, s.y + dy, s.theta + s.omega * dt, s.v + s.a * dt, s.a, s.omega)
}
