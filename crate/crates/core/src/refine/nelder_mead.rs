//! Two-dimensional Nelder-Mead simplex minimization.

use nalgebra::Vector2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadParams {
    /// Edge length of the initial right-angled simplex.
    pub initial_step: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
    /// Stop when the spread of vertex values falls below this.
    pub f_tol: f64,
    pub max_iter: usize,
}

impl Default for NelderMeadParams {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            x_tol: 1e-3,
            f_tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vector2<f64>,
    pub f: f64,
    pub iterations: usize,
    /// The iteration cap was reached before convergence.
    pub hit_cap: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` from `x0`. The returned point is the best vertex seen, so
/// `f(result) <= f(x0)`.
pub fn nelder_mead(f: impl Fn(&Vector2<f64>) -> f64, x0: Vector2<f64>, params: &NelderMeadParams) -> NelderMeadResult {
    let h = params.initial_step;
    let mut s: Vec<(Vector2<f64>, f64)> = [x0, x0 + Vector2::new(h, 0.0), x0 + Vector2::new(0.0, h)]
        .into_iter()
        .map(|x| (x, f(&x)))
        .collect();
    let mut iterations = 0;
    loop {
        // stable sort keeps the earlier vertex first on ties
        s.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = (0..3)
            .flat_map(|i| (i + 1..3).map(move |j| (i, j)))
            .map(|(i, j)| (s[i].0 - s[j].0).norm())
            .fold(0.0, f64::max);
        let spread = s[2].1 - s[0].1;
        if diameter < params.x_tol || spread < params.f_tol {
            return NelderMeadResult {
                x: s[0].0,
                f: s[0].1,
                iterations,
                hit_cap: false,
            };
        }
        if iterations >= params.max_iter {
            return NelderMeadResult {
                x: s[0].0,
                f: s[0].1,
                iterations,
                hit_cap: true,
            };
        }
        iterations += 1;

        let centroid = (s[0].0 + s[1].0) / 2.0;
        let worst = s[2];
        let xr = centroid + (centroid - worst.0) * REFLECT;
        let fr = f(&xr);
        if fr < s[0].1 {
            let xe = centroid + (xr - centroid) * EXPAND;
            let fe = f(&xe);
            s[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < s[1].1 {
            s[2] = (xr, fr);
            continue;
        }
        // contraction, outside or inside
        let (xc, fc) = if fr < worst.1 {
            let xc = centroid + (xr - centroid) * CONTRACT;
            (xc, f(&xc))
        } else {
            let xc = centroid + (worst.0 - centroid) * CONTRACT;
            (xc, f(&xc))
        };
        if fc < worst.1.min(fr) {
            s[2] = (xc, fc);
            continue;
        }
        let best = s[0].0;
        for v in s.iter_mut().skip(1) {
            v.0 = best + (v.0 - best) * SHRINK;
            v.1 = f(&v.0);
        }
    }
}
