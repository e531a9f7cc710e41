//! Dense small-matrix linear algebra: discrete Lyapunov and Riccati solvers,
//! spectral radius, eigendecomposition and singular value extremes.
//!
//! Everything here is a pure function of its inputs. Matrices are expected to
//! be small (a dozen states at most); no attempt is made at structured or
//! sparse solvers.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMatrix = DMatrix<Complex<f64>>;

/// Tolerances shared by the solvers in this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative residual bound for the Lyapunov solution.
    pub lyapunov_residual: f64,
    /// Frobenius bound on one Riccati map step, used as the stopping rule.
    pub riccati_residual: f64,
    pub riccati_max_iterations: usize,
    /// Relative bound on ‖Mv − λv‖ for an accepted eigenpair.
    pub eigenpair_residual: f64,
    /// Eigenvector-matrix condition number above which a warning is attached.
    pub eigen_condition_warning: f64,
    /// Relative asymmetry allowed for inputs that must be symmetric.
    pub symmetry: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            lyapunov_residual: 1e-10,
            riccati_residual: 1e-9,
            riccati_max_iterations: 10_000,
            eigenpair_residual: 1e-8,
            eigen_condition_warning: 1e8,
            symmetry: 1e-12,
        }
    }
}

fn require_square(m: &Matrix, context: &'static str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(
            context,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(m.nrows())
}

fn require_shape(m: &Matrix, rows: usize, cols: usize, context: &'static str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dim(
            context,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn require_symmetric(m: &Matrix, tol: f64, context: &'static str) -> Result<()> {
    let asym = (m - m.transpose()).norm();
    if asym > tol * m.norm().max(f64::MIN_POSITIVE) && asym > 0.0 {
        return Err(Error::InvalidInput {
            context,
            reason: format!("matrix is not symmetric (asymmetry {asym:e})"),
        });
    }
    Ok(())
}

fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex<f64>>> {
    let n = require_square(m, "eigenvalues")?;
    if n == 0 {
        return Ok(Vec::new());
    }
    Ok(m.complex_eigenvalues().iter().copied().collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

/// Solves `M = phi·M·phiᵀ + q` for a Schur-stable `phi`.
pub fn solve_discrete_lyapunov(phi: &Matrix, q: &Matrix) -> Result<Matrix> {
    solve_discrete_lyapunov_with(phi, q, &Tolerances::default())
}

pub fn solve_discrete_lyapunov_with(phi: &Matrix, q: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    let n = require_square(phi, "solve_discrete_lyapunov")?;
    require_shape(q, n, n, "solve_discrete_lyapunov")?;
    require_symmetric(q, tol.symmetry, "solve_discrete_lyapunov")?;
    let radius = spectral_radius(phi)?;
    if radius >= 1.0 {
        return Err(Error::Divergence {
            context: "solve_discrete_lyapunov",
            radius,
        });
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }

    // Column-major vec: vec(phi·M·phiᵀ) = (phi ⊗ phi)·vec(M).
    let kron = phi.kronecker(phi);
    let system = Matrix::identity(n * n, n * n) - kron;
    let lu = system.clone().lu();
    let rhs = DVector::from_column_slice(q.as_slice());
    let mut sol = lu.solve(&rhs).ok_or(Error::Divergence {
        context: "solve_discrete_lyapunov",
        radius,
    })?;
    // One step of iterative refinement.
    let resid = &rhs - &system * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    let m = symmetrize(&Matrix::from_column_slice(n, n, sol.as_slice()));

    let residual = (&m - (phi * &m * phi.transpose() + q)).norm();
    if residual > tol.lyapunov_residual * (1.0 + m.norm()) {
        return Err(Error::Convergence {
            context: "solve_discrete_lyapunov",
            iterations: 1,
            residual,
        });
    }
    Ok(m)
}

/// Iterates the control-form Riccati map
/// `X ← aᵀXa − aᵀXb(bᵀXb + r)⁻¹bᵀXa + q` from `x0`.
fn riccati_iterate(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
    x0: Matrix,
    tol: &Tolerances,
    context: &'static str,
) -> Result<Matrix> {
    let at = a.transpose();
    let bt = b.transpose();
    let mut x = x0;
    let mut step = f64::INFINITY;
    for _ in 0..tol.riccati_max_iterations {
        let xb = &x * b;
        let gram = &bt * &xb + r;
        let gram_inv = gram.try_inverse().ok_or_else(|| Error::InvalidInput {
            context,
            reason: "singular innovation/control Gram matrix".into(),
        })?;
        let xa = &x * a;
        let next = &at * &xa - (&at * &xb) * gram_inv * (&bt * &xa) + q;
        let next = symmetrize(&next);
        step = (&next - &x).norm();
        x = next;
        if !step.is_finite() {
            break;
        }
        if step < tol.riccati_residual {
            return Ok(x);
        }
    }
    Err(Error::Convergence {
        context,
        iterations: tol.riccati_max_iterations,
        residual: step,
    })
}

/// Prior-covariance filter Riccati solution
/// `P = aPaᵀ − aPcᵀ(cPcᵀ + meas_cov)⁻¹cPaᵀ + process_cov`.
///
/// Iterates the Riccati map from `P₀ = process_cov` until one step moves the
/// iterate by less than 1e-9 in Frobenius norm, for at most 10 000 steps.
pub fn solve_dare_estimator(
    a: &Matrix,
    c: &Matrix,
    process_cov: &Matrix,
    meas_cov: &Matrix,
) -> Result<Matrix> {
    solve_dare_estimator_with(a, c, process_cov, meas_cov, &Tolerances::default())
}

pub fn solve_dare_estimator_with(
    a: &Matrix,
    c: &Matrix,
    process_cov: &Matrix,
    meas_cov: &Matrix,
    tol: &Tolerances,
) -> Result<Matrix> {
    let n = require_square(a, "solve_dare_estimator")?;
    if c.ncols() != n {
        return Err(Error::dim(
            "solve_dare_estimator",
            format!("c with {n} columns"),
            c.ncols(),
        ));
    }
    require_shape(process_cov, n, n, "solve_dare_estimator")?;
    require_shape(meas_cov, c.nrows(), c.nrows(), "solve_dare_estimator")?;
    require_symmetric(process_cov, tol.symmetry, "solve_dare_estimator")?;
    require_symmetric(meas_cov, tol.symmetry, "solve_dare_estimator")?;
    // The filter equation is the control equation for the dual pair (aᵀ, cᵀ).
    riccati_iterate(
        &a.transpose(),
        &c.transpose(),
        process_cov,
        meas_cov,
        process_cov.clone(),
        tol,
        "solve_dare_estimator",
    )
}

/// Control Riccati solution `S = aᵀSa − aᵀSb(bᵀSb + r)⁻¹bᵀSa + q`,
/// iterated from `S₀ = q`.
pub fn solve_dare_controller(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    solve_dare_controller_with(a, b, q, r, &Tolerances::default())
}

pub fn solve_dare_controller_with(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
    tol: &Tolerances,
) -> Result<Matrix> {
    let n = require_square(a, "solve_dare_controller")?;
    if b.nrows() != n {
        return Err(Error::dim(
            "solve_dare_controller",
            format!("b with {n} rows"),
            b.nrows(),
        ));
    }
    require_shape(q, n, n, "solve_dare_controller")?;
    require_shape(r, b.ncols(), b.ncols(), "solve_dare_controller")?;
    require_symmetric(q, tol.symmetry, "solve_dare_controller")?;
    require_symmetric(r, tol.symmetry, "solve_dare_controller")?;
    riccati_iterate(a, b, q, r, q.clone(), tol, "solve_dare_controller")
}

/// Eigenvalues with unit-norm eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub eigenvalues: Vec<Complex<f64>>,
    /// Eigenvectors as columns, each of unit Euclidean norm.
    pub eigenvectors: CMatrix,
    /// σ_max/σ_min of the eigenvector matrix (infinite when singular).
    pub condition: f64,
    /// Largest ‖Mv − λv‖ over the returned pairs.
    pub max_residual: f64,
    /// Set when the matrix looks defective or the eigenvector matrix is
    /// badly conditioned.
    pub warning: Option<String>,
}

impl EigenResult {
    /// Maximal and minimal singular value of the eigenvector matrix.
    pub fn vector_singular_extremes(&self) -> (f64, f64) {
        complex_singular_extremes(&self.eigenvectors)
    }
}

fn complex_singular_extremes(m: &CMatrix) -> (f64, f64) {
    if m.is_empty() {
        return (0.0, 0.0);
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    (max, min)
}

/// Eigendecomposition `m = V·D·V⁻¹` with unit-column `V`.
///
/// Eigenvalues come from the real Schur form. Each cluster of (numerically)
/// equal eigenvalues gets an orthonormal basis of the null space of `m − λI`
/// taken from its SVD, so repeated but non-defective eigenvalues still yield
/// independent vectors. Defective matrices produce a warning instead of an
/// error.
pub fn eigen_decompose(m: &Matrix) -> Result<EigenResult> {
    eigen_decompose_with(m, &Tolerances::default())
}

pub fn eigen_decompose_with(m: &Matrix, tol: &Tolerances) -> Result<EigenResult> {
    let n = require_square(m, "eigen_decompose")?;
    let values = eigenvalues(m)?;
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let cm: CMatrix = m.map(|x| Complex::new(x, 0.0));

    // Group eigenvalues that coincide to within a relative 1e-6.
    let mut clusters: Vec<(Complex<f64>, Vec<usize>)> = Vec::new();
    for (i, &l) in values.iter().enumerate() {
        let cluster_tol = 1e-6 * scale.max(1.0);
        match clusters
            .iter_mut()
            .find(|(c, _)| (c - l).norm() <= cluster_tol)
        {
            Some((_, members)) => members.push(i),
            None => clusters.push((l, vec![i])),
        }
    }

    let mut vectors = CMatrix::zeros(n, n);
    for (_, members) in &clusters {
        let mean = members.iter().map(|&i| values[i]).sum::<Complex<f64>>() / members.len() as f64;
        let shifted = &cm - CMatrix::identity(n, n) * mean;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        for (slot, &i) in members.iter().enumerate() {
            let row = order[slot];
            let mut v: DVector<Complex<f64>> = v_t.row(row).transpose().map(|z| z.conj());
            normalize_phase(&mut v);
            vectors.set_column(i, &v);
        }
    }

    let mut max_residual: f64 = 0.0;
    for (i, &l) in values.iter().enumerate() {
        let v = vectors.column(i);
        let r = (&cm * v - v * l).norm();
        max_residual = max_residual.max(r);
    }
    let (smax, smin) = complex_singular_extremes(&vectors);
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };

    let mut warning = None;
    if max_residual > tol.eigenpair_residual * scale {
        warning = Some(format!(
            "matrix appears defective: eigenpair residual {max_residual:e} exceeds {:e}",
            tol.eigenpair_residual * scale
        ));
    } else if condition.is_nan() || condition >= tol.eigen_condition_warning {
        warning = Some(format!(
            "eigenvector matrix is ill-conditioned (cond {condition:e})"
        ));
    }

    Ok(EigenResult {
        eigenvalues: values,
        eigenvectors: vectors,
        condition,
        max_residual,
        warning,
    })
}

/// Unit norm, with the largest-magnitude component rotated onto the positive
/// real axis.
fn normalize_phase(v: &mut DVector<Complex<f64>>) {
    let norm = v.norm();
    if norm == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex::new(1.0, 0.0));
    let phase = pivot.conj() / pivot.norm();
    for z in v.iter_mut() {
        *z = *z * phase / norm;
    }
}

/// `(σ_max, σ_min)` of any rectangular matrix.
pub fn singular_value_extremes(m: &Matrix) -> (f64, f64) {
    if m.is_empty() {
        return (0.0, 0.0);
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    (max, min)
}

/// Square diagonal matrix from its diagonal.
pub fn diag(values: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_column_slice(values))
}

/// Builds a matrix from rows; panics on ragged input. Test and preset helper.
pub fn from_rows(rows: &[&[f64]]) -> Matrix {
    let ncols = rows.first().map_or(0, |r| r.len());
    assert!(rows.iter().all(|r| r.len() == ncols), "ragged rows");
    Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

pub fn is_diagonal(m: &Matrix) -> bool {
    m.nrows() == m.ncols()
        && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pendulum_angle_block() -> Matrix {
        from_rows(&[&[1.0015, 0.01], &[0.2945, 1.0015]])
    }

    #[test]
    fn spectral_radius_examples() {
        assert_eq!(spectral_radius(&Matrix::identity(4, 4)).unwrap(), 1.0);
        assert!((spectral_radius(&diag(&[0.1; 4])).unwrap() - 0.1).abs() < 1e-15);
        // Characteristic polynomial of [[a, b], [c, a]]: (λ − a)² = bc.
        let expected = 1.0015 + (0.01f64 * 0.2945).sqrt();
        let got = spectral_radius(&pendulum_angle_block()).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - 1.05577).abs() < 1e-5);
    }

    #[test]
    fn spectral_radius_rejects_rectangular() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(spectral_radius(&m), Err(Error::Dimension { .. })));
    }

    #[test]
    fn lyapunov_examples() {
        let q = from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let m = solve_discrete_lyapunov(&Matrix::zeros(2, 2), &q).unwrap();
        assert!((m - &q).norm() < 1e-15);

        let phi = from_rows(&[&[0.3, 0.1], &[0.0, 0.5]]);
        let m = solve_discrete_lyapunov(&phi, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(m.norm(), 0.0);

        let m = solve_discrete_lyapunov(&diag(&[0.5]), &diag(&[1.0])).unwrap();
        assert!((m[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_errors() {
        let err = solve_discrete_lyapunov(&diag(&[1.0]), &diag(&[1.0])).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        let asym = from_rows(&[&[1.0, 0.2], &[0.0, 1.0]]);
        let err = solve_discrete_lyapunov(&diag(&[0.5, 0.5]), &asym).unwrap_err();
        assert!(matches!(err, Error::InvalidInput { .. }));
    }

    #[test]
    fn scalar_dare_estimator_matches_quadratic() {
        // P = 0.25P − 0.25P²/(P+1) + 1  ⇔  P² − 0.25P − 1 = 0.
        let p = solve_dare_estimator(&diag(&[0.5]), &diag(&[1.0]), &diag(&[1.0]), &diag(&[1.0]))
            .unwrap();
        let expected = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
        assert!((p[(0, 0)] - expected).abs() < 1e-8);
        assert!((p[(0, 0)] - 1.132782).abs() < 1e-6);
    }

    #[test]
    fn dare_without_dynamics_is_process_cov() {
        let q = from_rows(&[&[2.0, 0.3], &[0.3, 1.0]]);
        let c = from_rows(&[&[1.0, 0.0]]);
        let p = solve_dare_estimator(&Matrix::zeros(2, 2), &c, &q, &diag(&[0.1])).unwrap();
        assert!((p - q).norm() < 1e-12);
    }

    #[test]
    fn scalar_dare_controller_matches_quadratic() {
        // S = 0.25S − 0.25S²/(S+1) + 1 with b = r = 1: same quadratic.
        let s = solve_dare_controller(&diag(&[0.5]), &diag(&[1.0]), &diag(&[1.0]), &diag(&[1.0]))
            .unwrap();
        let expected = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
        assert!((s[(0, 0)] - expected).abs() < 1e-8);
    }

    #[test]
    fn controller_dare_zero_weight_stable_plant() {
        let s = solve_dare_controller(
            &diag(&[0.5, 0.2]),
            &from_rows(&[&[1.0], &[0.0]]),
            &Matrix::zeros(2, 2),
            &diag(&[1.0]),
        )
        .unwrap();
        assert_eq!(s.norm(), 0.0);
    }

    #[test]
    fn dare_reports_non_convergence() {
        // (a, c) undetectable: unstable mode invisible to the sensor.
        let tol = Tolerances {
            riccati_max_iterations: 50,
            ..Tolerances::default()
        };
        let err = solve_dare_estimator_with(
            &diag(&[2.0, 0.5]),
            &from_rows(&[&[0.0, 1.0]]),
            &diag(&[1.0, 1.0]),
            &diag(&[1.0]),
            &tol,
        )
        .unwrap_err();
        match err {
            Error::Convergence {
                iterations,
                residual,
                ..
            } => {
                assert_eq!(iterations, 50);
                assert!(residual > 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eigen_examples() {
        let e = eigen_decompose(&diag(&[2.0, 3.0])).unwrap();
        let mut vals: Vec<f64> = e.eigenvalues.iter().map(|z| z.re).collect();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![2.0, 3.0]);
        for (i, l) in e.eigenvalues.iter().enumerate() {
            let col = e.eigenvectors.column(i);
            let idx = if (l.re - 2.0).abs() < 1e-12 { 0 } else { 1 };
            assert!((col[idx].re - 1.0).abs() < 1e-12);
            assert!(col[1 - idx].norm() < 1e-12);
        }
        assert!(e.warning.is_none());

        let e = eigen_decompose(&from_rows(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        let mut vals: Vec<f64> = e.eigenvalues.iter().map(|z| z.re).collect();
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] + 1.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_repeated_but_diagonalizable() {
        let e = eigen_decompose(&diag(&[0.1, 0.1, 0.1, 0.5])).unwrap();
        assert!(e.warning.is_none(), "{:?}", e.warning);
        assert!((e.condition - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eigen_defective_warns() {
        let jordan = from_rows(&[&[1.0, 0.01], &[0.0, 1.0]]);
        let e = eigen_decompose(&jordan).unwrap();
        assert!(e.warning.is_some());
    }

    #[test]
    fn eigen_complex_pair_reconstructs() {
        let m = from_rows(&[&[0.9, -0.3, 0.0], &[0.3, 0.9, 0.1], &[0.0, 0.0, 0.5]]);
        let e = eigen_decompose(&m).unwrap();
        assert!(e.warning.is_none());
        let v = &e.eigenvectors;
        let d = CMatrix::from_diagonal(&DVector::from_vec(e.eigenvalues.clone()));
        let vinv = v.clone().try_inverse().unwrap();
        let recon = v * d * vinv;
        let err = recon.map(|z| z.re) - &m;
        assert!(err.norm() <= 1e-6 * m.norm());
        for j in 0..3 {
            assert!((v.column(j).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_value_examples() {
        assert_eq!(singular_value_extremes(&Matrix::identity(3, 3)), (1.0, 1.0));
        let (smax, smin) = singular_value_extremes(&diag(&[3.0, 0.5]));
        assert!((smax - 3.0).abs() < 1e-14 && (smin - 0.5).abs() < 1e-14);
        // MᵀM = [[1,1],[1,2]] has eigenvalues (3 ± √5)/2.
        let (smax, smin) = singular_value_extremes(&from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]));
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((smax - golden).abs() < 1e-12);
        assert!((smin - 1.0 / golden).abs() < 1e-12);
    }
}
