//! Plant, steady-state Kalman estimator and fixed-gain controller, plus the
//! networked inverted pendulum preset.

use crate::error::{Error, Result};
use crate::numerics::{
    self, diag, from_rows, is_diagonal, solve_dare_controller, solve_dare_estimator, Matrix, Vector,
};
use crate::rng::GaussianStream;

/// Discrete LTI plant `x⁺ = Ax + Bu + Γn`, `y = Cx + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub gamma: Matrix,
    pub sigma_n: Matrix,
    pub sigma_v: Matrix,
}

impl PlantModel {
    pub fn new(
        a: Matrix,
        b: Matrix,
        c: Matrix,
        gamma: Matrix,
        sigma_n: Matrix,
        sigma_v: Matrix,
    ) -> Result<Self> {
        let n = a.nrows();
        let check = |ok: bool, key: &str, expected: String, got: (usize, usize)| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(
                    key,
                    format!("expected {expected}, got {}x{}", got.0, got.1),
                ))
            }
        };
        check(a.is_square(), "a", "square".into(), a.shape())?;
        check(b.nrows() == n, "b", format!("{n} rows"), b.shape())?;
        check(c.ncols() == n, "c", format!("{n} columns"), c.shape())?;
        check(
            gamma.nrows() == n,
            "gamma",
            format!("{n} rows"),
            gamma.shape(),
        )?;
        let m_n = gamma.ncols();
        let m_y = c.nrows();
        check(
            sigma_n.shape() == (m_n, m_n),
            "sigma_n",
            format!("{m_n}x{m_n}"),
            sigma_n.shape(),
        )?;
        check(
            sigma_v.shape() == (m_y, m_y),
            "sigma_v",
            format!("{m_y}x{m_y}"),
            sigma_v.shape(),
        )?;
        for (key, m) in [("sigma_n", &sigma_n), ("sigma_v", &sigma_v)] {
            if (m - m.transpose()).norm() > 1e-12 * m.norm() {
                return Err(Error::config(key, "covariance must be symmetric"));
            }
            if numerics::eigenvalues(m)?
                .iter()
                .any(|l| l.re < -1e-12 * m.norm())
            {
                return Err(Error::config(
                    key,
                    "covariance must be positive semidefinite",
                ));
            }
        }
        if sigma_v.clone().try_inverse().is_none() {
            return Err(Error::config(
                "sigma_v",
                "measurement covariance must be nonsingular",
            ));
        }
        Ok(Self {
            a,
            b,
            c,
            gamma,
            sigma_n,
            sigma_v,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.gamma.ncols()
    }

    /// `Γ Σn Γᵀ`
    pub fn process_cov(&self) -> Matrix {
        &self.gamma * &self.sigma_n * self.gamma.transpose()
    }
}

/// Filter and controller gains of the LQG loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopGains {
    /// Prior-covariance filter Riccati solution.
    pub p: Matrix,
    /// Steady-state Kalman gain `P Cᵀ Σo⁻¹`.
    pub l: Matrix,
    /// Innovation covariance `C P Cᵀ + Σv`.
    pub sigma_o: Matrix,
    /// Control Riccati solution.
    pub s: Matrix,
    /// `K = −(BᵀSB + R)⁻¹BᵀSA`, so that `u = K x̂`.
    pub k_gain: Matrix,
    pub q_weight: Matrix,
    pub r_weight: Matrix,
}

impl LoopGains {
    pub fn compute(model: &PlantModel, q_weight: Matrix, r_weight: Matrix) -> Result<Self> {
        let p = solve_dare_estimator(&model.a, &model.c, &model.process_cov(), &model.sigma_v)?;
        let sigma_o = &model.c * &p * model.c.transpose() + &model.sigma_v;
        let sigma_o_inv = sigma_o
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput {
                context: "LoopGains::compute",
                reason: "singular innovation covariance".into(),
            })?;
        let l = &p * model.c.transpose() * sigma_o_inv;

        let s = solve_dare_controller(&model.a, &model.b, &q_weight, &r_weight)?;
        let bt = model.b.transpose();
        let gram = &bt * &s * &model.b + &r_weight;
        let gram_inv = gram.try_inverse().ok_or_else(|| Error::InvalidInput {
            context: "LoopGains::compute",
            reason: "singular control Gram matrix".into(),
        })?;
        let k_gain = -(gram_inv * &bt * &s * &model.a);
        Ok(Self {
            p,
            l,
            sigma_o,
            s,
            k_gain,
            q_weight,
            r_weight,
        })
    }

    /// `L Σo Lᵀ`, the covariance of `L r` under healthy operation.
    pub fn residual_cov(&self) -> Matrix {
        &self.l * &self.sigma_o * self.l.transpose()
    }
}

/// `x̂(k|k−1)` and `x̂(k|k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub x_hat_prior: Vector,
    pub x_hat_post: Vector,
}

impl EstimatorState {
    pub fn zeros(n: usize) -> Self {
        Self {
            x_hat_prior: Vector::zeros(n),
            x_hat_post: Vector::zeros(n),
        }
    }
}

fn check_len(v: &Vector, n: usize, context: &'static str) -> Result<()> {
    if v.len() != n {
        return Err(Error::dim(context, n, v.len()));
    }
    Ok(())
}

pub fn plant_step(model: &PlantModel, x: &Vector, u: &Vector, n: &Vector) -> Result<Vector> {
    check_len(x, model.state_dim(), "plant_step: x")?;
    check_len(u, model.input_dim(), "plant_step: u")?;
    check_len(n, model.noise_dim(), "plant_step: n")?;
    Ok(&model.a * x + &model.b * u + &model.gamma * n)
}

pub fn plant_output(model: &PlantModel, x: &Vector, v: &Vector) -> Result<Vector> {
    check_len(x, model.state_dim(), "plant_output: x")?;
    check_len(v, model.output_dim(), "plant_output: v")?;
    Ok(&model.c * x + v)
}

/// Measurement update `x̂(k|k) = x̂(k|k−1) + L(measurement − C x̂(k|k−1))`.
pub fn estimator_update(
    gains: &LoopGains,
    model: &PlantModel,
    st: &EstimatorState,
    measurement: &Vector,
) -> Result<EstimatorState> {
    check_len(
        measurement,
        model.output_dim(),
        "estimator_update: measurement",
    )?;
    check_len(
        &st.x_hat_prior,
        model.state_dim(),
        "estimator_update: x_hat_prior",
    )?;
    let innovation = measurement - &model.c * &st.x_hat_prior;
    Ok(EstimatorState {
        x_hat_prior: st.x_hat_prior.clone(),
        x_hat_post: &st.x_hat_prior + &gains.l * innovation,
    })
}

/// Time update `x̂(k+1|k) = A x̂(k|k) + B u`.
pub fn estimator_predict(
    _gains: &LoopGains,
    model: &PlantModel,
    st: &EstimatorState,
    u: &Vector,
) -> Result<EstimatorState> {
    check_len(u, model.input_dim(), "estimator_predict: u")?;
    check_len(
        &st.x_hat_post,
        model.state_dim(),
        "estimator_predict: x_hat_post",
    )?;
    Ok(EstimatorState {
        x_hat_prior: &model.a * &st.x_hat_post + &model.b * u,
        x_hat_post: st.x_hat_post.clone(),
    })
}

/// `u = K x̂(k|k)`
pub fn control_law(gains: &LoopGains, st: &EstimatorState) -> Vector {
    &gains.k_gain * &st.x_hat_post
}

/// Independent zero-mean Gaussians with the variances on the diagonal of
/// `cov`. One standard draw is consumed per component even when its variance
/// is zero.
pub fn sample_noise(stream: &mut GaussianStream, cov: &Matrix) -> Result<Vector> {
    if !is_diagonal(cov) {
        return Err(Error::UnsupportedCovariance);
    }
    let n = cov.nrows();
    let mut out = Vector::zeros(n);
    for i in 0..n {
        let var = cov[(i, i)];
        if var < 0.0 {
            return Err(Error::InvalidInput {
                context: "sample_noise",
                reason: format!("negative variance {var} at index {i}"),
            });
        }
        out[i] = var.sqrt() * stream.next_standard();
    }
    Ok(out)
}

/// Sampling period of the pendulum preset, seconds.
pub const PENDULUM_DT: f64 = 0.01;
/// `g/l` of the linearized pendulum (g = 9.81 m/s², l = 1/3 m).
pub const PENDULUM_GRAVITY_OVER_LENGTH: f64 = 29.43;
/// Angular acceleration per unit cart acceleration (1/l).
pub const PENDULUM_INPUT_GAIN: f64 = 3.0;

/// The 4-decimal transition and input matrices as commonly reference for this
/// platform. The preset uses the exact discretization, which rounds to these.
pub const REFERENCE_A: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0100, 0.0],
    [0.0, 1.0015, 0.0, 0.0100],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.2945, 0.0, 1.0015],
];
pub const REFERENCE_B: [f64; 4] = [0.0, 0.0002, 0.0100, 0.0300];
/// Reference steady-state Kalman gain (4 decimals), row-major 4x2.
pub const REFERENCE_L: [[f64; 2]; 4] = [[0.2951, 0.0], [0.0, 0.1673], [5.1094, 0.0], [0.0, 1.5290]];
/// Reference LQ gain (4 decimals).
pub const REFERENCE_K: [f64; 4] = [2.8889, -36.6415, 4.9141, -7.3267];
/// Elementwise tolerance for the preset's recomputed gains.
pub const PRESET_GAIN_TOLERANCE: f64 = 5e-3;

/// Exact zero-order-hold discretization of the linearized cart-pendulum with
/// state `[α, θ, α̇, θ̇]` and cart acceleration input.
pub fn pendulum_discretization(
    gravity_over_length: f64,
    input_gain: f64,
    dt: f64,
) -> (Matrix, Matrix) {
    let w = gravity_over_length.sqrt();
    let (ch, sh) = ((w * dt).cosh(), (w * dt).sinh());
    let a = from_rows(&[
        &[1.0, 0.0, dt, 0.0],
        &[0.0, ch, 0.0, sh / w],
        &[0.0, 0.0, 1.0, 0.0],
        &[0.0, w * sh, 0.0, ch],
    ]);
    let b = Matrix::from_column_slice(
        4,
        1,
        &[
            dt * dt / 2.0,
            input_gain * (ch - 1.0) / (w * w),
            dt,
            input_gain * sh / w,
        ],
    );
    (a, b)
}

/// Networked inverted pendulum: 10 ms sampling, camera measuring cart
/// position and pendulum angle, Q = 10·I, R = 1.
///
/// Gains are recomputed from the Riccati equations and cross-checked against
/// the reference values; a mismatch above [`PRESET_GAIN_TOLERANCE`] is an
/// error.
pub fn pendulum_preset() -> Result<(PlantModel, LoopGains)> {
    let (a, b) = pendulum_discretization(
        PENDULUM_GRAVITY_OVER_LENGTH,
        PENDULUM_INPUT_GAIN,
        PENDULUM_DT,
    );
    let c = from_rows(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]]);
    let gamma = from_rows(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
    let model = PlantModel::new(a, b, c, gamma, diag(&[1e-5, 1e-5]), diag(&[2.7e-7, 5.5e-6]))?;
    let gains = LoopGains::compute(&model, diag(&[10.0; 4]), diag(&[1.0]))?;

    for (i, row) in REFERENCE_L.iter().enumerate() {
        for (j, &expected) in row.iter().enumerate() {
            let got = gains.l[(i, j)];
            if (got - expected).abs() > PRESET_GAIN_TOLERANCE {
                return Err(Error::PresetIntegrity {
                    quantity: format!("L[{i}][{j}]"),
                    recomputed: got,
                    expected,
                });
            }
        }
    }
    for (j, &expected) in REFERENCE_K.iter().enumerate() {
        let got = gains.k_gain[(0, j)];
        if (got - expected).abs() > PRESET_GAIN_TOLERANCE {
            return Err(Error::PresetIntegrity {
                quantity: format!("K[{j}]"),
                recomputed: got,
                expected,
            });
        }
    }
    Ok((model, gains))
}
