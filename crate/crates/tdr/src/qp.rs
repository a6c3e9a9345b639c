//! Nonnegative, linearly constrained least squares:
//! minimize `||H b||^2` over `{b >= 0, c' b = 1}`.
//!
//! Solved by accelerated projected gradient descent with an exact Euclidean
//! projection onto the weighted simplex. The projection splits coordinates
//! into constrained ones (`c_i > 0`), which share the budget `c' b = 1`, and
//! free ones (`c_i = 0`), which are merely clipped at zero. The optimal
//! multiplier for the constrained block is found exactly by sorting the
//! breakpoints `y_i / c_i`, so every iterate is feasible to machine
//! precision.

use crate::error::{Result, TdrError};
use nalgebra::{DMatrix, DVector};

const QP_CAP: usize = 100_000;
const QP_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub beta: DVector<f64>,
    pub objective: f64,
    /// Sup norm of the projected-gradient fixed-point residual at `beta`,
    /// scaled to gradient units.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Euclidean projection of `y` onto `{b >= 0, c' b = 1}` for `c >= 0` with at
/// least one positive entry.
pub fn project_weighted_simplex(y: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
    let n = y.len();
    let mut indices: Vec<usize> = (0..n).filter(|&i| c[i] > 0.0).collect();
    indices.sort_by(|&i, &j| {
        let ri = y[i] / c[i];
        let rj = y[j] / c[j];
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut lambda = 0.0;
    for (k, &i) in indices.iter().enumerate() {
        s1 += c[i] * y[i];
        s2 += c[i] * c[i];
        let candidate = (s1 - 1.0) / s2;
        let next_ratio = indices.get(k + 1).map(|&j| y[j] / c[j]);
        if next_ratio.is_none_or(|r| candidate >= r) {
            lambda = candidate;
            break;
        }
    }
    DVector::from_fn(n, |i, _| {
        if c[i] > 0.0 {
            (y[i] - lambda * c[i]).max(0.0)
        } else {
            y[i].max(0.0)
        }
    })
}

/// Solves `min ||H b||^2` subject to `b >= 0` and `c' b = 1`, to a relative
/// projected-gradient tolerance of `1e-9`.
pub fn solve_constrained_ls(h: &DMatrix<f64>, c: &DVector<f64>) -> Result<QpSolution> {
    let n = c.len();
    if n == 0 {
        return Err(TdrError::InvalidInput("empty program".into()));
    }
    if h.ncols() != n {
        return Err(TdrError::InvalidInput(format!(
            "H has {} columns but c has {} entries",
            h.ncols(),
            n
        )));
    }
    if h.iter().any(|x| !x.is_finite()) || c.iter().any(|x| !x.is_finite()) {
        return Err(TdrError::InvalidInput("non-finite entries in the program".into()));
    }
    if c.iter().any(|&x| x < 0.0) {
        return Err(TdrError::InvalidInput("constraint weights must be nonnegative".into()));
    }
    if !c.iter().any(|&x| x > 0.0) {
        return Err(TdrError::Infeasible("constraint c' b = 1 with c = 0".into()));
    }

    // Equilibrate: rescale each column of H to unit norm. Moment-matching
    // systems mix visit counts spanning many orders of magnitude, and the
    // squared conditioning would stall a first-order method. The change of
    // variables is exact and preserves both constraints.
    let scale = DVector::from_fn(n, |j, _| {
        let norm = h.column(j).norm();
        if norm > 0.0 {
            norm
        } else {
            1.0
        }
    });
    let h_s = DMatrix::from_fn(h.nrows(), n, |i, j| h[(i, j)] / scale[j]);
    let c_s = DVector::from_fn(n, |j, _| c[j] / scale[j]);

    let gram = h_s.transpose() * &h_s;
    // The Frobenius norm bounds the spectral norm, so 2 ||G||_F is a safe
    // Lipschitz constant for the gradient 2 G b.
    let lipschitz = 2.0 * gram.norm();
    let unscale = |b: &DVector<f64>| DVector::from_fn(n, |j, _| b[j] / scale[j]);
    let mut beta = project_weighted_simplex(&DVector::from_element(n, 1.0), &c_s);
    if lipschitz == 0.0 {
        let beta = unscale(&beta);
        return Ok(QpSolution { beta, objective: 0.0, kkt_residual: 0.0, iterations: 0 });
    }
    let step = 1.0 / lipschitz;

    let mut momentum = beta.clone();
    let mut t = 1.0f64;
    let mut kkt = f64::INFINITY;
    for iteration in 1..=QP_CAP {
        let grad = 2.0 * (&gram * &momentum);
        let next = project_weighted_simplex(&(&momentum - step * &grad), &c_s);
        // Restart the momentum sequence whenever it points uphill.
        if (&momentum - &next).dot(&(&next - &beta)) > 0.0 {
            t = 1.0;
            momentum = next.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            momentum = &next + ((t - 1.0) / t_next) * (&next - &beta);
            t = t_next;
        }
        beta = next;
        if iteration % 8 == 0 || iteration == QP_CAP {
            let grad_beta = 2.0 * (&gram * &beta);
            let fixed_point = project_weighted_simplex(&(&beta - step * &grad_beta), &c_s);
            kkt = (&beta - &fixed_point).amax() * lipschitz;
            if kkt <= QP_TOL * (1.0 + grad_beta.amax()) {
                let beta = unscale(&beta);
                let objective = (h * &beta).norm_squared();
                return Ok(QpSolution { beta, objective, kkt_residual: kkt, iterations: iteration });
            }
        }
    }
    Err(TdrError::NonConvergence { what: "constrained least squares", cap: QP_CAP, residual: kkt })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(entries: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(entries)
    }

    fn feasible(beta: &DVector<f64>, c: &DVector<f64>) -> bool {
        beta.iter().all(|&x| x >= 0.0) && (c.dot(beta) - 1.0).abs() < 1e-9
    }

    #[test]
    fn projection_recovers_feasible_points() {
        let c = vector(&[0.5, 0.5]);
        let y = vector(&[1.0, 1.0]);
        let p = project_weighted_simplex(&y, &c);
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_clips_and_rebalances() {
        // Projection of (2, -1) onto the unit simplex is (1, 0).
        let c = vector(&[1.0, 1.0]);
        let p = project_weighted_simplex(&vector(&[2.0, -1.0]), &c);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert_eq!(p[1], 0.0);

        // Symmetric input splits the budget evenly.
        let q = project_weighted_simplex(&vector(&[0.0, 0.0]), &c);
        assert!((q[0] - 0.5).abs() < 1e-12 && (q[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn projection_leaves_free_coordinates_clipped_only() {
        let c = vector(&[1.0, 0.0]);
        let p = project_weighted_simplex(&vector(&[5.0, -2.0]), &c);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert_eq!(p[1], 0.0);
        let q = project_weighted_simplex(&vector(&[5.0, 2.0]), &c);
        assert!((q[0] - 1.0).abs() < 1e-12);
        assert!((q[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_objective_returns_a_feasible_point() {
        let h = DMatrix::zeros(3, 3);
        let c = vector(&[0.2, 0.3, 0.5]);
        let sol = solve_constrained_ls(&h, &c).unwrap();
        assert!(feasible(&sol.beta, &c));
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn identity_objective_puts_all_mass_on_the_free_ride() {
        // min b1^2 + b2^2 s.t. b1 = 1, b >= 0 has solution (1, 0).
        let h = DMatrix::identity(2, 2);
        let c = vector(&[1.0, 0.0]);
        let sol = solve_constrained_ls(&h, &c).unwrap();
        assert!((sol.beta[0] - 1.0).abs() < 1e-8);
        assert!(sol.beta[1].abs() < 1e-8);
        assert!((sol.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn null_space_direction_is_found_exactly() {
        // H annihilates (1, 1); with c = (1/2, 1/2) the optimum is (1, 1).
        let h = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let c = vector(&[0.5, 0.5]);
        let sol = solve_constrained_ls(&h, &c).unwrap();
        assert!((sol.beta[0] - 1.0).abs() < 1e-7);
        assert!((sol.beta[1] - 1.0).abs() < 1e-7);
        assert!(sol.objective < 1e-12);
    }

    #[test]
    fn solver_rejects_malformed_programs() {
        let h = DMatrix::identity(2, 2);
        assert!(solve_constrained_ls(&h, &vector(&[1.0])).is_err());
        assert!(solve_constrained_ls(&h, &vector(&[1.0, -0.5])).is_err());
        assert!(solve_constrained_ls(&h, &vector(&[0.0, 0.0])).is_err());
        assert!(solve_constrained_ls(&h, &vector(&[f64::NAN, 1.0])).is_err());
    }

    #[test]
    fn solution_is_invariant_to_problem_scale() {
        let h = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.5, -1.0, 3.0]);
        let c = vector(&[0.3, 0.5, 0.2]);
        let a = solve_constrained_ls(&h, &c).unwrap();
        let b = solve_constrained_ls(&(1e6 * &h), &c).unwrap();
        assert!((&a.beta - &b.beta).amax() < 1e-7);
    }
}
