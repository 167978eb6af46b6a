//! Weighted, bounded-variable and Gauss-Newton least squares for small dense
//! problems.
//!
//! All solvers whiten the system with the residual covariance first, so the
//! normal matrix `A^T Sigma^-1 A` is formed as `A_w^T A_w`.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Normal matrices with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum ResidualCovariance {
    Identity,
    /// The same 3x3 covariance for every consecutive block of three rows.
    Block(Matrix3<f64>),
    /// One 3x3 covariance per block of three rows.
    Blocks(Vec<Matrix3<f64>>),
    Full(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub sigma: ResidualCovariance,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        LinearSystem {
            a,
            b,
            sigma: ResidualCovariance::Identity,
        }
    }

    pub fn with_covariance(mut self, sigma: ResidualCovariance) -> Self {
        self.sigma = sigma;
        self
    }

    /// Stacks `a_i x = b_i` blocks with three rows each.
    pub fn from_blocks(blocks: &[(Matrix3<f64>, Vec3)]) -> Self {
        let m = 3 * blocks.len();
        let mut a = DMatrix::zeros(m, 3);
        let mut b = DVector::zeros(m);
        for (k, (ak, bk)) in blocks.iter().enumerate() {
            a.fixed_view_mut::<3, 3>(3 * k, 0).copy_from(ak);
            b.fixed_rows_mut::<3>(3 * k).copy_from(bk);
        }
        LinearSystem::new(a, b)
    }

    pub fn unknowns(&self) -> usize {
        self.a.ncols()
    }

    /// `(A_w, b_w)` with `Sigma^-1/2` applied to every row block.
    pub fn whitened(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if self.a.nrows() != self.b.len() {
            return Err(Error::invalid(format!(
                "system has {} rows but right-hand side has {}",
                self.a.nrows(),
                self.b.len()
            )));
        }
        whiten(&self.a, &self.b, &self.sigma)
    }

    /// Weighted squared residual `|A x - b|^2_Sigma`.
    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        let (a, b) = self.whitened()?;
        Ok((a * x - b).norm_squared())
    }

    /// Gradient of `1/2 |A x - b|^2_Sigma`.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (a, b) = self.whitened()?;
        Ok(a.transpose() * (&a * x - b))
    }
}

fn whiten(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    sigma: &ResidualCovariance,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut a = a.clone();
    let mut b = b.clone();
    let m = a.nrows();
    let block_count = |len: Option<usize>| -> Result<usize> {
        if !m.is_multiple_of(3) || len.is_some_and(|l| l * 3 != m) {
            return Err(Error::invalid(format!(
                "block covariance does not match {m} residual rows"
            )));
        }
        Ok(m / 3)
    };
    let whiten_block = |a: &mut DMatrix<f64>, b: &mut DVector<f64>, k: usize, s: &Matrix3<f64>| {
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::invalid("residual covariance is not positive definite"))?;
        let l = chol.l();
        let rows_a = a.rows(3 * k, 3).clone_owned();
        let rows_b = b.rows(3 * k, 3).clone_owned();
        let wa = l
            .solve_lower_triangular(&rows_a)
            .ok_or_else(|| Error::invalid("singular covariance"))?;
        let wb = l
            .solve_lower_triangular(&rows_b)
            .ok_or_else(|| Error::invalid("singular covariance"))?;
        a.rows_mut(3 * k, 3).copy_from(&wa);
        b.rows_mut(3 * k, 3).copy_from(&wb);
        Ok::<(), Error>(())
    };
    match sigma {
        ResidualCovariance::Identity => {}
        ResidualCovariance::Block(s) => {
            for k in 0..block_count(None)? {
                whiten_block(&mut a, &mut b, k, s)?;
            }
        }
        ResidualCovariance::Blocks(list) => {
            for (k, s) in (0..block_count(Some(list.len()))?).zip(list) {
                whiten_block(&mut a, &mut b, k, s)?;
            }
        }
        ResidualCovariance::Full(s) => {
            if s.nrows() != m || s.ncols() != m {
                return Err(Error::invalid("full covariance has the wrong size"));
            }
            let chol = s
                .clone()
                .cholesky()
                .ok_or_else(|| Error::invalid("residual covariance is not positive definite"))?;
            let l = chol.l();
            a = l.solve_lower_triangular(&a).ok_or_else(|| Error::invalid("singular covariance"))?;
            b = l.solve_lower_triangular(&b).ok_or_else(|| Error::invalid("singular covariance"))?;
        }
    }
    Ok((a, b))
}

/// Condition number of a symmetric positive semidefinite matrix, erroring
/// with [`Error::SingularSystem`] above [`MAX_CONDITION`].
pub fn check_conditioning(normal: &DMatrix<f64>) -> Result<f64> {
    if normal.is_empty() {
        return Ok(1.0);
    }
    let eig = SymmetricEigen::new(normal.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(max > 0.0) || !(condition <= MAX_CONDITION) {
        return Err(Error::SingularSystem { condition });
    }
    Ok(condition)
}

fn solve_normal(normal: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let condition = check_conditioning(normal)?;
    normal
        .clone()
        .cholesky()
        .map(|c| c.solve(rhs))
        .ok_or(Error::SingularSystem { condition })
}

/// `argmin_x |A x - b|^2_Sigma` through the normal equations.
pub fn solve_weighted_lsq(sys: &LinearSystem) -> Result<DVector<f64>> {
    let (a, b) = sys.whitened()?;
    let at = a.transpose();
    solve_normal(&(&at * &a), &(at * b))
}

/// Per-coordinate box `lower <= x <= upper`. Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Bounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::invalid("bounds have different lengths"));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::invalid("lower bound exceeds upper bound"));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn from_vec3(lower: Vec3, upper: Vec3) -> Result<Self> {
        Bounds::new(
            DVector::from_column_slice(lower.as_slice()),
            DVector::from_column_slice(upper.as_slice()),
        )
    }

    /// `center +- radius` on every axis.
    pub fn around(center: &Vec3, radius: f64) -> Result<Self> {
        let r = Vec3::repeat(radius);
        Bounds::from_vec3(center - r, center + r)
    }

    pub fn unbounded(n: usize) -> Self {
        Bounds {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (l, u))| l <= v && v <= u)
    }

    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(v, (l, u))| v.clamp(*l, *u)),
        )
    }

    /// A feasible starting point: the box centre where it is finite.
    fn interior_point(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.lower.iter().zip(self.upper.iter()).map(|(l, u)| {
                match (l.is_finite(), u.is_finite()) {
                    (true, true) => 0.5 * (l + u),
                    (true, false) => l.max(0.0),
                    (false, true) => u.min(0.0),
                    (false, false) => 0.0,
                }
            }),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Active {
    Free,
    Lower,
    Upper,
    Fixed,
}

/// Bounded-variable least squares by a primal active-set method.
///
/// Iterates: solve the subproblem over free variables with the active ones
/// held at their bounds, step to the first blocking bound if the subproblem
/// solution is infeasible, otherwise release the active bound whose multiplier
/// has the wrong sign. Terminates with the KKT point of the strictly convex
/// problem.
pub fn solve_bvls(sys: &LinearSystem, bounds: &Bounds) -> Result<DVector<f64>> {
    let n = sys.unknowns();
    if bounds.len() != n {
        return Err(Error::invalid(format!(
            "{} bounds for {n} unknowns",
            bounds.len()
        )));
    }
    let (a, b) = sys.whitened()?;
    let at = a.transpose();
    let h = &at * &a;
    let c = at * b;
    let scale = h.amax().max(c.amax()).max(f64::MIN_POSITIVE);

    let mut state: Vec<Active> = (0..n)
        .map(|j| {
            if bounds.lower[j] == bounds.upper[j] {
                Active::Fixed
            } else {
                Active::Free
            }
        })
        .collect();
    let mut x = bounds.interior_point();

    // Each pass either adds a bound or removes one with strict descent, so the
    // number of passes is bounded by the number of active-set patterns.
    for _ in 0..(10 * 3usize.pow(n.min(10) as u32)) {
        let free: Vec<usize> = (0..n).filter(|&j| state[j] == Active::Free).collect();
        let mut target = x.clone();
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |r, k| h[(free[r], free[k])]);
            let rhs = DVector::from_fn(free.len(), |r, _| {
                let i = free[r];
                c[i] - (0..n)
                    .filter(|&j| state[j] != Active::Free)
                    .map(|j| h[(i, j)] * x[j])
                    .sum::<f64>()
            });
            let y = solve_normal(&hff, &rhs)?;
            for (r, &j) in free.iter().enumerate() {
                target[j] = y[r];
            }
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for &j in &free {
            let (lo, hi) = (bounds.lower[j], bounds.upper[j]);
            let step = target[j] - x[j];
            if target[j] < lo {
                let a = (lo - x[j]) / step;
                if a < alpha {
                    alpha = a;
                    blocking = Some((j, Active::Lower));
                }
            } else if target[j] > hi {
                let a = (hi - x[j]) / step;
                if a < alpha {
                    alpha = a;
                    blocking = Some((j, Active::Upper));
                }
            }
        }

        if let Some((j, side)) = blocking {
            let alpha = alpha.max(0.0);
            for &k in &free {
                x[k] += alpha * (target[k] - x[k]);
            }
            x[j] = if side == Active::Lower {
                bounds.lower[j]
            } else {
                bounds.upper[j]
            };
            state[j] = side;
            continue;
        }

        x = target;
        for j in 0..n {
            match state[j] {
                Active::Lower => x[j] = bounds.lower[j],
                Active::Upper => x[j] = bounds.upper[j],
                Active::Fixed => x[j] = bounds.lower[j],
                Active::Free => x[j] = x[j].clamp(bounds.lower[j], bounds.upper[j]),
            }
        }
        let grad = &h * &x - &c;
        let tol = 1e-12 * scale;
        let release = (0..n)
            .filter_map(|j| match state[j] {
                Active::Lower if grad[j] < -tol => Some((j, -grad[j])),
                Active::Upper if grad[j] > tol => Some((j, grad[j])),
                _ => None,
            })
            .max_by(|p, q| p.1.total_cmp(&q.1));
        match release {
            Some((j, _)) => state[j] = Active::Free,
            None => return Ok(x),
        }
    }
    Err(Error::invalid("bounded least squares did not terminate"))
}

#[derive(Debug, Clone)]
pub struct GaussNewtonStep {
    pub delta: DVector<f64>,
    /// `J^T Sigma^-1 J` at the linearisation point.
    pub fisher: DMatrix<f64>,
}

/// One Gauss-Newton step: solves `(J^T Sigma^-1 J) dx = -J^T Sigma^-1 r(x)`.
pub fn gauss_newton_step<R, J>(
    residual_fn: R,
    jacobian_fn: J,
    x_hat: &DVector<f64>,
    sigma: &ResidualCovariance,
) -> Result<GaussNewtonStep>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let r = residual_fn(x_hat);
    let jac = jacobian_fn(x_hat);
    if jac.nrows() != r.len() || jac.ncols() != x_hat.len() {
        return Err(Error::invalid("jacobian shape does not match residual and state"));
    }
    if !jac.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("jacobian is not finite"));
    }
    let (jw, rw) = whiten(&jac, &r, sigma)?;
    let jt = jw.transpose();
    let fisher = &jt * &jw;
    let delta = solve_normal(&fisher, &(-(jt * rw)))?;
    Ok(GaussNewtonStep { delta, fisher })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn box3(lo: f64, hi: f64) -> Bounds {
        Bounds::new(DVector::from_element(3, lo), DVector::from_element(3, hi)).unwrap()
    }

    // Enumerates every free/lower/upper pattern, solving each subproblem and
    // keeping the best feasible candidate.
    fn enumeration_oracle(sys: &LinearSystem, bounds: &Bounds) -> (DVector<f64>, f64) {
        let n = sys.unknowns();
        let (a, b) = sys.whitened().unwrap();
        let mut best: Option<(DVector<f64>, f64)> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut x = DVector::zeros(n);
            let mut free = Vec::new();
            let mut c = code;
            for j in 0..n {
                match c % 3 {
                    0 => free.push(j),
                    1 => x[j] = bounds.lower[j],
                    _ => x[j] = bounds.upper[j],
                }
                c /= 3;
            }
            if !free.is_empty() {
                let af = DMatrix::from_fn(a.nrows(), free.len(), |r, k| a[(r, free[k])]);
                let rhs = &b - &a * &x;
                let Some(y) = (af.transpose() * &af).try_inverse().map(|inv| inv * af.transpose() * rhs)
                else {
                    continue;
                };
                for (k, &j) in free.iter().enumerate() {
                    x[j] = y[k];
                }
            }
            if !bounds.contains(&x) {
                continue;
            }
            let f = (&a * &x - &b).norm_squared();
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((x, f));
            }
        }
        best.unwrap()
    }

    fn assert_kkt(sys: &LinearSystem, bounds: &Bounds, x: &DVector<f64>) {
        let g = sys.gradient(x).unwrap();
        for j in 0..x.len() {
            let (lo, hi) = (bounds.lower[j], bounds.upper[j]);
            if lo == hi {
                continue;
            }
            if x[j] == lo {
                assert!(g[j] >= -1e-8, "lower-active {j} has gradient {}", g[j]);
            } else if x[j] == hi {
                assert!(g[j] <= 1e-8, "upper-active {j} has gradient {}", g[j]);
            } else {
                assert!(g[j].abs() < 1e-8, "free {j} has gradient {}", g[j]);
            }
        }
    }

    #[test]
    fn weighted_lsq_examples() {
        let sys = LinearSystem::new(DMatrix::identity(3, 3), dvec(&[1.0, 2.0, 3.0]));
        assert_abs_diff_eq!(solve_weighted_lsq(&sys).unwrap(), dvec(&[1.0, 2.0, 3.0]), epsilon = 1e-15);

        let mean = LinearSystem::new(DMatrix::from_element(2, 1, 1.0), dvec(&[1.0, 3.0]));
        assert_abs_diff_eq!(solve_weighted_lsq(&mean).unwrap()[0], 2.0, epsilon = 1e-15);

        let mut rank1 = DMatrix::zeros(4, 3);
        rank1.column_mut(0).fill(1.0);
        let sys = LinearSystem::new(rank1, dvec(&[1.0, 2.0, 3.0, 4.0]));
        assert!(matches!(solve_weighted_lsq(&sys), Err(Error::SingularSystem { .. })));
    }

    #[test]
    fn block_covariance_weights_rows() {
        // Two measurements of the same vector; the second is four times as
        // precise, so the weighted mean sits 4/5 of the way towards it.
        let i = Matrix3::identity();
        let sys = LinearSystem::from_blocks(&[(i, Vec3::zeros()), (i, Vec3::repeat(5.0))])
            .with_covariance(ResidualCovariance::Blocks(vec![i, i * 0.25]));
        let x = solve_weighted_lsq(&sys).unwrap();
        assert_abs_diff_eq!(x, dvec(&[4.0, 4.0, 4.0]), epsilon = 1e-12);
        let g = sys.gradient(&x).unwrap();
        assert!(g.amax() < 1e-9);
    }

    #[test]
    fn bvls_examples() {
        let interior = LinearSystem::new(DMatrix::identity(3, 3), dvec(&[0.1, 0.1, 0.1]));
        let x = solve_bvls(&interior, &box3(-0.3, 0.3)).unwrap();
        assert_abs_diff_eq!(x, dvec(&[0.1, 0.1, 0.1]), epsilon = 1e-15);

        let clamp = LinearSystem::new(DMatrix::identity(3, 3), dvec(&[1.0, 0.0, 0.0]));
        let x = solve_bvls(&clamp, &box3(-0.3, 0.3)).unwrap();
        assert_abs_diff_eq!(x, dvec(&[0.3, 0.0, 0.0]), epsilon = 1e-15);

        let a = DMatrix::from_fn(6, 3, |r, c| ((r * 3 + c) as f64).sin());
        let sys = LinearSystem::new(a, dvec(&[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let x = solve_bvls(&sys, &box3(0.5, 0.5)).unwrap();
        assert_eq!(x, dvec(&[0.5, 0.5, 0.5]));
    }

    #[test]
    fn bvls_with_flat_free_direction_is_singular() {
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 1.0;
        let sys = LinearSystem::new(a, dvec(&[0.1, 0.1, 0.0]));
        assert!(matches!(
            solve_bvls(&sys, &box3(-1.0, 1.0)),
            Err(Error::SingularSystem { .. })
        ));
        // Fixing the flat coordinate removes it from the free subproblem.
        let bounds = Bounds::new(dvec(&[-1.0, -1.0, 0.2]), dvec(&[1.0, 1.0, 0.2])).unwrap();
        let x = solve_bvls(&sys, &bounds).unwrap();
        assert_abs_diff_eq!(x, dvec(&[0.1, 0.1, 0.2]), epsilon = 1e-15);
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(Bounds::new(dvec(&[1.0]), dvec(&[0.0])).is_err());
        assert!(Bounds::new(dvec(&[f64::NAN]), dvec(&[0.0])).is_err());
    }

    #[test]
    fn gauss_newton_examples() {
        let c = dvec(&[1.0, -2.0, 0.5]);
        let step = gauss_newton_step(
            |x| x - &c,
            |_| DMatrix::identity(3, 3),
            &DVector::zeros(3),
            &ResidualCovariance::Identity,
        )
        .unwrap();
        assert_abs_diff_eq!(step.delta, c, epsilon = 1e-15);

        // r = x^2 at x = 1: J = 2, dx = -(2 * 1) / 4.
        let step = gauss_newton_step(
            |x| dvec(&[x[0] * x[0]]),
            |x| DMatrix::from_element(1, 1, 2.0 * x[0]),
            &dvec(&[1.0]),
            &ResidualCovariance::Identity,
        )
        .unwrap();
        assert_abs_diff_eq!(step.delta[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(step.fisher[(0, 0)], 4.0, epsilon = 1e-15);

        let zero = gauss_newton_step(
            |x| x.clone(),
            |_| DMatrix::zeros(3, 3),
            &DVector::zeros(3),
            &ResidualCovariance::Identity,
        );
        assert!(matches!(zero, Err(Error::SingularSystem { .. })));
    }

    fn arb_instance() -> impl Strategy<Value = (LinearSystem, Bounds)> {
        (
            proptest::collection::vec(-2.0..2.0f64, 18),
            proptest::collection::vec(-3.0..3.0f64, 6),
            proptest::collection::vec((-1.0..0.5f64, 0.0..1.5f64), 3),
        )
            .prop_map(|(a, b, lu)| {
                let a = DMatrix::from_row_slice(6, 3, &a);
                let lower = DVector::from_iterator(3, lu.iter().map(|p| p.0));
                let upper = DVector::from_iterator(3, lu.iter().map(|p| p.0 + p.1));
                (LinearSystem::new(a, DVector::from_vec(b)), Bounds::new(lower, upper).unwrap())
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn bvls_matches_enumeration_and_beats_vertices((sys, bounds) in arb_instance()) {
            let (a, _) = sys.whitened().unwrap();
            prop_assume!(check_conditioning(&(a.transpose() * &a)).is_ok());
            let x = solve_bvls(&sys, &bounds).unwrap();
            prop_assert!(bounds.contains(&x));
            assert_kkt(&sys, &bounds, &x);
            let f = sys.objective(&x).unwrap();
            let (_, f_oracle) = enumeration_oracle(&sys, &bounds);
            prop_assert!(f <= f_oracle + 1e-9 * (1.0 + f_oracle));
            for code in 0..8 {
                let v = DVector::from_fn(3, |j, _| {
                    if code >> j & 1 == 0 { bounds.lower[j] } else { bounds.upper[j] }
                });
                prop_assert!(f <= sys.objective(&v).unwrap() + 1e-12);
            }
            let clamped = bounds.clamp(&solve_weighted_lsq(&sys).unwrap());
            prop_assert!(f <= sys.objective(&clamped).unwrap() + 1e-12);
        }

        #[test]
        fn bvls_unbounded_equals_lsq((sys, _) in arb_instance()) {
            let (a, _) = sys.whitened().unwrap();
            prop_assume!(check_conditioning(&(a.transpose() * &a)).map(|c| c < 1e6).unwrap_or(false));
            let x = solve_bvls(&sys, &Bounds::unbounded(3)).unwrap();
            let y = solve_weighted_lsq(&sys).unwrap();
            prop_assert!((x - y).amax() < 1e-9);
        }

        #[test]
        fn bvls_interior_solution_is_unconstrained((sys, _) in arb_instance()) {
            let (a, _) = sys.whitened().unwrap();
            prop_assume!(check_conditioning(&(a.transpose() * &a)).is_ok());
            let y = solve_weighted_lsq(&sys).unwrap();
            let bounds = Bounds::new(y.add_scalar(-0.5), y.add_scalar(0.7)).unwrap();
            let x = solve_bvls(&sys, &bounds).unwrap();
            prop_assert!((x - y).amax() < 1e-9);
        }

        #[test]
        fn fisher_is_symmetric_psd(j in proptest::collection::vec(-3.0..3.0f64, 12)) {
            let jac = DMatrix::from_row_slice(4, 3, &j);
            let step = gauss_newton_step(
                |x| DVector::from_element(4, x.sum()),
                |_| jac.clone(),
                &DVector::zeros(3),
                &ResidualCovariance::Identity,
            );
            if let Ok(step) = step {
                let f = &step.fisher;
                prop_assert!((f - f.transpose()).amax() < 1e-12);
                prop_assert!(SymmetricEigen::new(f.clone()).eigenvalues.min() >= -1e-12);
            }
        }
    }
}
