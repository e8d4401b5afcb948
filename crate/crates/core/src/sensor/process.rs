//! Linear time-invariant process models and their covariance fixed points.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Eigenvalues with modulus within this margin of 1 count as unstable.
const STABILITY_MARGIN: f64 = 1e-10;
const PSD_TOL: f64 = -1e-10;
const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

/// `x(k+1) = A x(k) + w(k)`, `y(k) = C x(k) + v(k)` with `w ~ N(0, Q)`,
/// `v ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessModel {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    c: DMatrix<f64>,
    r_meas: DMatrix<f64>,
    pi0: Option<DMatrix<f64>>,
}

impl ProcessModel {
    /// Builds a model and checks every structural assumption: symmetric PSD
    /// `Q`, symmetric PD `R`, `(A, C)` observable and `(A, √Q)` controllable.
    pub fn new(
        a: DMatrix<f64>,
        q: DMatrix<f64>,
        c: DMatrix<f64>,
        r_meas: DMatrix<f64>,
    ) -> Result<Self> {
        let model = Self::relaxed(a, q, c, r_meas)?;
        if !model.is_observable() {
            return Err(Error::Config("(A, C) is not observable".into()));
        }
        if !model.is_controllable() {
            return Err(Error::Config("(A, sqrt(Q)) is not controllable".into()));
        }
        Ok(model)
    }

    /// Like [`ProcessModel::new`] but skips the observability and
    /// controllability rank tests. Covariance checks still apply.
    pub fn relaxed(
        a: DMatrix<f64>,
        q: DMatrix<f64>,
        c: DMatrix<f64>,
        r_meas: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Config(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if q.shape() != (n, n) {
            return Err(Error::Config(format!(
                "Q must be {n}x{n}, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        let m = c.nrows();
        if m == 0 || c.ncols() != n {
            return Err(Error::Config(format!(
                "C must be m x {n}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if r_meas.shape() != (m, m) {
            return Err(Error::Config(format!(
                "R must be {m}x{m}, got {}x{}",
                r_meas.nrows(),
                r_meas.ncols()
            )));
        }
        for (name, mat) in [("A", &a), ("Q", &q), ("C", &c), ("R", &r_meas)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{name} has non-finite entries")));
            }
        }
        check_psd("Q", &q, false)?;
        check_psd("R", &r_meas, true)?;
        Ok(Self {
            a,
            q,
            c,
            r_meas,
            pi0: None,
        })
    }

    /// Scalar process with full structural checks.
    pub fn scalar(a: f64, q: f64, c: f64, r_meas: f64) -> Result<Self> {
        let m = |v| DMatrix::from_element(1, 1, v);
        Self::new(m(a), m(q), m(c), m(r_meas))
    }

    /// Starting covariance for the filter iteration (defaults to zero).
    pub fn with_initial_cov(mut self, pi0: DMatrix<f64>) -> Result<Self> {
        if pi0.shape() != self.a.shape() {
            return Err(Error::Config(
                "initial covariance has the wrong shape".into(),
            ));
        }
        check_psd("Pi0", &pi0, false)?;
        self.pi0 = Some(pi0);
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn r_meas(&self) -> &DMatrix<f64> {
        &self.r_meas
    }

    /// Prediction map `h(X) = A X Aᵀ + Q`.
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a * x * self.a.transpose() + &self.q
    }

    pub fn is_observable(&self) -> bool {
        let n = self.state_dim();
        let mut blocks = Vec::with_capacity(n);
        let mut term = self.c.clone();
        for _ in 0..n {
            blocks.push(term.clone());
            term = &term * &self.a;
        }
        let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut obs = DMatrix::zeros(rows, n);
        let mut at = 0;
        for b in &blocks {
            obs.view_mut((at, 0), b.shape()).copy_from(b);
            at += b.nrows();
        }
        numeric_rank(&obs) == n
    }

    /// `(A, √Q)` controllability. `√Q` and `Q` share a column space, so the
    /// Krylov matrix is built from `Q` directly.
    pub fn is_controllable(&self) -> bool {
        let n = self.state_dim();
        let mut ctrb = DMatrix::zeros(n, n * n);
        let mut term = self.q.clone();
        for k in 0..n {
            ctrb.view_mut((0, k * n), (n, n)).copy_from(&term);
            term = &self.a * &term;
        }
        numeric_rank(&ctrb) == n
    }
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * max)
        .count()
}

fn check_psd(name: &str, m: &DMatrix<f64>, strict: bool) -> Result<()> {
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Config(format!("{name} is not symmetric")));
    }
    let min_eig = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if strict && min_eig <= 0.0 {
        return Err(Error::Config(format!(
            "{name} is not positive definite (min eigenvalue {min_eig})"
        )));
    }
    if !strict && min_eig < PSD_TOL {
        return Err(Error::Config(format!(
            "{name} is not positive semidefinite (min eigenvalue {min_eig})"
        )));
    }
    Ok(())
}

/// Spectral radius of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let eig = a
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?
        .complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Stable iff the spectral radius is below 1; the boundary counts as unstable.
pub fn classify_stability(a: &DMatrix<f64>) -> Result<Stability> {
    Ok(if spectral_radius(a)? < 1.0 - STABILITY_MARGIN {
        Stability::Stable
    } else {
        Stability::Unstable
    })
}

/// Filtered steady-state covariance: the fixed point of prediction followed
/// by a measurement update, iterated from the model's initial covariance.
pub fn steady_state_filter_cov(p: &ProcessModel) -> Result<DMatrix<f64>> {
    let n = p.state_dim();
    let mut x = p.pi0.clone().unwrap_or_else(|| DMatrix::zeros(n, n));
    let ct = p.c.transpose();
    for _ in 0..FIXED_POINT_MAX_ITERS {
        let prior = p.predict(&x);
        let innovation = &p.c * &prior * &ct + &p.r_meas;
        let chol = innovation
            .cholesky()
            .ok_or_else(|| Error::Numerical("innovation covariance lost definiteness".into()))?;
        let gain_t = chol.solve(&(&p.c * &prior));
        let mut next = &prior - &prior * &ct * gain_t;
        symmetrize(&mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("Riccati iteration diverged".into()));
        }
        let delta = (&next - &x).norm();
        x = next;
        if delta <= FIXED_POINT_TOL * x.norm().max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::Numerical(
        "Riccati iteration did not converge".into(),
    ))
}

/// Bounded fixed point of `P = A P Aᵀ + Q` for stable `A`.
pub fn lyapunov_limit(p: &ProcessModel) -> Result<DMatrix<f64>> {
    if classify_stability(&p.a)? == Stability::Unstable {
        return Err(Error::Domain(
            "prediction error is unbounded for an unstable process".into(),
        ));
    }
    let n = p.state_dim();
    let mut x = DMatrix::zeros(n, n);
    for _ in 0..FIXED_POINT_MAX_ITERS {
        let mut next = p.predict(&x);
        symmetrize(&mut next);
        let delta = (&next - &x).norm();
        x = next;
        if delta <= FIXED_POINT_TOL * x.norm().max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::Numerical(
        "Lyapunov iteration did not converge".into(),
    ))
}

/// Trace of the never-transmit error covariance limit.
pub fn no_comm_limit(p: &ProcessModel) -> Result<f64> {
    Ok(lyapunov_limit(p)?.trace())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn eye2() -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }

    #[test]
    fn stability_classes() {
        assert_eq!(
            classify_stability(&dmatrix![1.2, 0.0; 0.0, 0.0]).unwrap(),
            Stability::Unstable
        );
        assert_eq!(
            classify_stability(&dmatrix![0.3, 1.0; 0.0, 0.1]).unwrap(),
            Stability::Stable
        );
        assert_eq!(
            classify_stability(&DMatrix::zeros(2, 2)).unwrap(),
            Stability::Stable
        );
        assert_eq!(
            classify_stability(&dmatrix![1.0]).unwrap(),
            Stability::Unstable
        );
        // Rotation-like pair with complex eigenvalues of modulus 0.9.
        let rot = dmatrix![0.0, -0.9; 0.9, 0.0];
        assert!((spectral_radius(&rot).unwrap() - 0.9).abs() < 1e-12);
        assert!(matches!(
            classify_stability(&DMatrix::zeros(2, 3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn scalar_filter_fixed_points() {
        for q in [0.3, 1.0, 4.0] {
            let p0 =
                ProcessModel::relaxed(dmatrix![0.0], dmatrix![q], dmatrix![1.0], dmatrix![1.0])
                    .unwrap();
            let pbar = steady_state_filter_cov(&p0).unwrap()[(0, 0)];
            assert!((pbar - q / (q + 1.0)).abs() < 1e-9);

            let p1 = ProcessModel::scalar(1.0, q, 1.0, 1.0).unwrap();
            let prior = (q + (q * q + 4.0 * q).sqrt()) / 2.0;
            let pbar = steady_state_filter_cov(&p1).unwrap()[(0, 0)];
            assert!((pbar - prior / (prior + 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn no_noise_gives_zero_covariance() {
        let p = ProcessModel::relaxed(
            dmatrix![0.5, 0.1; 0.0, 0.2],
            DMatrix::zeros(2, 2),
            eye2(),
            eye2(),
        )
        .unwrap();
        assert!(steady_state_filter_cov(&p).unwrap().norm() < 1e-12);
        assert!(matches!(
            ProcessModel::new(
                dmatrix![0.5, 0.1; 0.0, 0.2],
                DMatrix::zeros(2, 2),
                eye2(),
                eye2()
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn riccati_residual_and_symmetry() {
        let p = ProcessModel::new(
            dmatrix![1.1, 1.0; 0.0, 1.0],
            dmatrix![1.0, 0.0; 0.0, 4.0],
            eye2(),
            eye2(),
        )
        .unwrap();
        let x = steady_state_filter_cov(&p).unwrap();
        let prior = p.predict(&x);
        let s = &prior + eye2();
        let update = &prior - &prior * s.try_inverse().unwrap() * &prior;
        assert!((&update - &x).norm() <= 1e-10);
        assert!((&x - x.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn lyapunov_limits() {
        let p = ProcessModel::relaxed(
            dmatrix![0.0, 0.0; 0.0, 0.0],
            dmatrix![2.0, 0.0; 0.0, 3.0],
            eye2(),
            eye2(),
        )
        .unwrap();
        assert!((no_comm_limit(&p).unwrap() - 5.0).abs() < 1e-12);
        for (a, q) in [(0.5, 1.0), (0.9, 2.0), (-0.3, 0.7)] {
            let p = ProcessModel::scalar(a, q, 1.0, 1.0).unwrap();
            assert!((no_comm_limit(&p).unwrap() - q / (1.0 - a * a)).abs() < 1e-9);
        }
        let p = ProcessModel::scalar(1.2, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(no_comm_limit(&p), Err(Error::Domain(_))));
    }

    #[test]
    fn covariance_validation() {
        let bad_q = dmatrix![1.0, 0.0; 0.0, -0.1];
        assert!(matches!(
            ProcessModel::new(eye2(), bad_q, eye2(), eye2()),
            Err(Error::Config(_))
        ));
        let singular_r = dmatrix![1.0, 0.0; 0.0, 0.0];
        assert!(ProcessModel::new(eye2(), eye2(), eye2(), singular_r).is_err());
        let asym = dmatrix![1.0, 0.2; 0.0, 1.0];
        assert!(ProcessModel::new(eye2(), asym, eye2(), eye2()).is_err());
        assert!(ProcessModel::new(eye2(), eye2(), DMatrix::identity(1, 3), dmatrix![1.0]).is_err());
    }

    #[test]
    fn observability_rank_test() {
        // Only the second state is measured and it does not see the first.
        let p = ProcessModel::relaxed(
            dmatrix![1.0, 0.0; 0.0, 1.0],
            eye2(),
            dmatrix![0.0, 1.0],
            dmatrix![1.0],
        )
        .unwrap();
        assert!(!p.is_observable());
        let p = ProcessModel::relaxed(
            dmatrix![1.0, 1.0; 0.0, 1.0],
            eye2(),
            dmatrix![1.0, 0.0],
            dmatrix![1.0],
        )
        .unwrap();
        assert!(p.is_observable());
    }
}
