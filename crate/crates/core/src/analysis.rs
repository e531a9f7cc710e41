//! Closed-form test expectations, closed-loop block matrices, the dwell-time
//! certificate and Monte Carlo estimators of the long-run test means.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LoopGains, PlantModel};
use crate::numerics::{eigen_decompose, solve_discrete_lyapunov, spectral_radius, Matrix, Vector};
use crate::sim::{run_closed_loop_with, stage_cost, ScenarioConfig, Scheme};

/// Block matrices of the closed loop under attack, attack-free, and with the
/// delayed (compensated) measurement.
///
/// The switched-system state is `ζ = [x; x_a − x̂(k|k−1); x_a]`; the delayed
/// system state is `ζ̄ = [x; x̂(k−1|k−1)]` driven by `x(k−h)` and
/// `[n(k); v(k−h)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopModel {
    /// `(A+BK)(I−LC)`
    pub phi1: Matrix,
    /// `A_a − (A+BK)`
    pub phi2: Matrix,
    /// `[−BK(I−LC), BK]`
    pub h_block: Matrix,
    /// `[Φ1, Φ2; 0, A_a]`
    pub xi: Matrix,
    /// `[A, H; 0, Ξ]`, the attacked loop.
    pub a0: Matrix,
    /// Noise input of the conventional loop under attack, for `[n; v; w_d]`.
    pub lambda_d: Matrix,
    /// Noise input of the new loop under attack, for `[n; v; w_y]`.
    pub lambda0: Matrix,
    /// Attack-free new loop.
    pub a1: Matrix,
    /// Noise input of the attack-free loop, for `[n; v; w_y]`.
    pub lambda1: Matrix,
    pub a0_delay: Matrix,
    pub a1_delay: Matrix,
    pub gamma0_delay: Matrix,
    /// `[I, 0]`, picks `x` out of `ζ̄`.
    pub e_selector: Matrix,
    /// `[0, I]`
    pub e_complement: Matrix,
}

fn blocks(rows: &[&[&Matrix]]) -> Matrix {
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|m| m.ncols()).collect();
    let mut out = Matrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (i, row) in rows.iter().enumerate() {
        let mut c0 = 0;
        for (j, m) in row.iter().enumerate() {
            debug_assert_eq!(m.shape(), (heights[i], widths[j]));
            out.view_mut((r0, c0), m.shape()).copy_from(*m);
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    out
}

impl ClosedLoopModel {
    pub fn build(model: &PlantModel, gains: &LoopGains, a_attack: &Matrix) -> Result<Self> {
        let n = model.state_dim();
        if a_attack.shape() != (n, n) {
            return Err(Error::dim(
                "ClosedLoopModel: a_attack",
                format!("{n}x{n}"),
                format!("{:?}", a_attack.shape()),
            ));
        }
        if gains.l.shape() != (n, model.output_dim())
            || gains.k_gain.shape() != (model.input_dim(), n)
        {
            return Err(Error::dim(
                "ClosedLoopModel: gains",
                "plant-compatible L and K",
                "mismatch",
            ));
        }
        let (a, b, c, k, l) = (&model.a, &model.b, &model.c, &gains.k_gain, &gains.l);
        let (m_y, m_n, m_u) = (model.output_dim(), model.noise_dim(), model.input_dim());
        let eye = Matrix::identity(n, n);
        let z = |r: usize, c: usize| Matrix::zeros(r, c);

        let acl = a + b * k;
        let i_lc = &eye - l * c;
        let bk = b * k;
        let phi1 = &acl * &i_lc;
        let phi2 = a_attack - &acl;
        let h_block = blocks(&[&[&(-(&bk * &i_lc)), &bk]]);
        let xi = blocks(&[&[&phi1, &phi2], &[&z(n, n), a_attack]]);
        let a0 = blocks(&[&[a, &h_block], &[&z(2 * n, n), &xi]]);

        let lambda_d = blocks(&[
            &[&model.gamma, &z(n, m_y), b],
            &[&z(n, m_n), &z(n, m_y), &(-b)],
            &[&z(n, m_n), &z(n, m_y), &z(n, m_u)],
        ]);
        let bkl = &bk * l;
        let acl_l = &acl * l;
        let lambda0 = blocks(&[
            &[&model.gamma, &z(n, m_y), &(-&bkl)],
            &[&z(n, m_n), &z(n, m_y), &acl_l],
            &[&z(n, m_n), &z(n, m_y), &z(n, m_y)],
        ]);
        let lc = l * c;
        let a1 = blocks(&[
            &[&(a + &bk * &lc), &(-(&bk * &i_lc)), &z(n, n)],
            &[&(-(&acl * &lc)), &phi1, &z(n, n)],
            &[&z(n, n), &z(n, n), &z(n, n)],
        ]);
        let lambda1 = blocks(&[
            &[&model.gamma, &bkl, &z(n, m_y)],
            &[&z(n, m_n), &(-&acl_l), &z(n, m_y)],
            &[&z(n, m_n), &z(n, m_y), &z(n, m_y)],
        ]);

        let i_lc_acl = &i_lc * &acl;
        let a0_delay = blocks(&[&[a, &(&bk * &i_lc_acl)], &[&z(n, n), &i_lc_acl]]);
        let a1_delay = blocks(&[&[&(&bk * &lc)], &[&lc]]);
        let gamma0_delay = blocks(&[&[&model.gamma, &bkl], &[&z(n, m_n), l]]);
        let e_selector = blocks(&[&[&eye, &z(n, n)]]);
        let e_complement = blocks(&[&[&z(n, n), &eye]]);

        Ok(Self {
            phi1,
            phi2,
            h_block,
            xi,
            a0,
            lambda_d,
            lambda0,
            a1,
            lambda1,
            a0_delay,
            a1_delay,
            gamma0_delay,
            e_selector,
            e_complement,
        })
    }
}

fn stable_phi1(model: &PlantModel, gains: &LoopGains) -> Result<Matrix> {
    let n = model.state_dim();
    let phi1 =
        (&model.a + &model.b * &gains.k_gain) * (Matrix::identity(n, n) - &gains.l * &model.c);
    let rho = spectral_radius(&phi1)?;
    if rho >= 1.0 {
        return Err(Error::Divergence {
            context: "(A+BK)(I-LC)",
            radius: rho,
        });
    }
    Ok(phi1)
}

/// Long-run `E[w_d(k−1) L r_d(k)]` and `E[(L r_d)(L r_d)ᵀ]` for the
/// conventional loop under an attack with stable `A_a`.
pub fn limitation1_expectations(
    model: &PlantModel,
    gains: &LoopGains,
    sigma2_wd: f64,
) -> Result<(Vector, Matrix)> {
    let phi1 = stable_phi1(model, gains)?;
    let lc = &gains.l * &model.c;
    let cross = -(&lc * &model.b).column(0) * sigma2_wd;
    let q = &model.b * model.b.transpose() * sigma2_wd;
    let m_d = solve_discrete_lyapunov(&phi1, &q)?;
    let steady = &lc * m_d * lc.transpose();
    Ok((cross, steady))
}

/// Long-run `E[w_y,i(k) L r(k)]` for each output `i`, and `E[(L r)(L r)ᵀ]`,
/// for the new loop under an attack with stable `A_a`.
pub fn theorem2_expectations(
    model: &PlantModel,
    gains: &LoopGains,
    sigma_wy: &Matrix,
) -> Result<(Vec<Vector>, Matrix)> {
    let m_y = model.output_dim();
    if sigma_wy.shape() != (m_y, m_y) {
        return Err(Error::dim(
            "theorem2_expectations: sigma_wy",
            format!("{m_y}x{m_y}"),
            format!("{:?}", sigma_wy.shape()),
        ));
    }
    let phi1 = stable_phi1(model, gains)?;
    let l = &gains.l;
    let cross = (0..m_y).map(|i| -l.column(i) * sigma_wy[(i, i)]).collect();
    let acl_l = (&model.a + &model.b * &gains.k_gain) * l;
    let q = &acl_l * sigma_wy * acl_l.transpose();
    let m = solve_discrete_lyapunov(&phi1, &q)?;
    let steady = l * (&model.c * m * model.c.transpose() + sigma_wy) * l.transpose();
    Ok((cross, steady))
}

/// Attack-free cost increase `σ² tr(BᵀSB + R)` from a control-side
/// watermark.
pub fn limitation3_delta_j(sigma2_wd: f64, s: &Matrix, b: &Matrix, r: &Matrix) -> f64 {
    sigma2_wd * (b.transpose() * s * b + r).trace()
}

/// Exact steady-state `E[xᵀQx + uᵀRu]` of the attack-free loop, with an
/// optional white control-side watermark of variance `sigma2_wd` added to
/// `u`.
pub fn steady_lqg_cost(model: &PlantModel, gains: &LoopGains, sigma2_wd: f64) -> Result<f64> {
    let n = model.state_dim();
    let (a, b, k, l) = (&model.a, &model.b, &gains.k_gain, &gains.l);
    let lc = l * &model.c;
    let i_lc = Matrix::identity(n, n) - &lc;
    let bk = b * k;
    let acl = a + &bk;
    // Loop state [x; x̂(k|k−1)], inputs [n; v; w_d].
    let f = blocks(&[
        &[&(a + &bk * &lc), &(&bk * &i_lc)],
        &[&(&acl * &lc), &(&acl * &i_lc)],
    ]);
    let g = blocks(&[
        &[&model.gamma, &(&bk * l), b],
        &[&Matrix::zeros(n, model.noise_dim()), &(&acl * l), b],
    ]);
    let m_u = model.input_dim();
    let w_cov = Matrix::identity(m_u, m_u) * sigma2_wd;
    let input_cov = blocks(&[
        &[
            &model.sigma_n,
            &Matrix::zeros(model.noise_dim(), model.output_dim()),
            &Matrix::zeros(model.noise_dim(), m_u),
        ],
        &[
            &Matrix::zeros(model.output_dim(), model.noise_dim()),
            &model.sigma_v,
            &Matrix::zeros(model.output_dim(), m_u),
        ],
        &[
            &Matrix::zeros(m_u, model.noise_dim()),
            &Matrix::zeros(m_u, model.output_dim()),
            &w_cov,
        ],
    ]);
    let cov = solve_discrete_lyapunov(&f, &(&g * &input_cov * g.transpose()))?;
    // u = K(LC x + (I − LC) x̂ + L v) + w_d
    let k_state = blocks(&[&[&(k * &lc), &(k * &i_lc)]]);
    let kl = k * l;
    let sel_x = blocks(&[&[&Matrix::identity(n, n), &Matrix::zeros(n, n)]]);
    let x_cov = &sel_x * &cov * sel_x.transpose();
    let u_cov =
        &k_state * &cov * k_state.transpose() + &kl * &model.sigma_v * kl.transpose() + w_cov;
    Ok((&gains.q_weight * x_cov).trace() + (&gains.r_weight * u_cov).trace())
}

/// `tr(L Σo Lᵀ)`
pub fn normal_residual_trace(gains: &LoopGains) -> f64 {
    (&gains.l * &gains.sigma_o * gains.l.transpose()).trace()
}

/// `m_y² / (m_x² + m_x m_y)`: cost of the new tests relative to the
/// conventional ones.
pub fn complexity_ratio(m_x: usize, m_y: usize) -> Result<f64> {
    if m_x == 0 || m_y == 0 {
        return Err(Error::InvalidInput {
            context: "complexity_ratio",
            reason: "dimensions must be at least 1".into(),
        });
    }
    let (x, y) = (m_x as f64, m_y as f64);
    Ok(y * y / (x * x + x * y))
}

/// Constants reference alongside the dwell-time example for the pendulum.
pub const REFERENCE_LAMBDA_PLUS: f64 = 5.4250;
pub const REFERENCE_LAMBDA_MINUS: f64 = 0.9895;
pub const REFERENCE_G0: f64 = -3879.8947;
pub const REFERENCE_G1: f64 = -614.4731;
pub const REFERENCE_RATIO_BOUND: f64 = 159.4495;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Satisfied,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellTimeCertificate {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub g0: f64,
    pub g1: f64,
    pub g: f64,
    pub lambda_star: f64,
    pub lambda_dagger: f64,
    pub ratio_bound: f64,
    pub t0: u64,
    pub t1: u64,
    pub observed_ratio: f64,
    /// `g / (λ† − λ*)`, defined when `g < 0` and `λ† < λ*`.
    pub tau_ave: Option<f64>,
    pub verdict: Verdict,
    pub warnings: Vec<String>,
}

/// Lower bound on `𝒯₁/𝒯₀`: `(ln λ₊ − λ* ln λ₋) / ((λ* − 1) ln λ₋)`.
pub fn ratio_bound(lambda_plus: f64, lambda_minus: f64, lambda_star: f64) -> f64 {
    (lambda_plus.ln() - lambda_star * lambda_minus.ln()) / ((lambda_star - 1.0) * lambda_minus.ln())
}

impl DwellTimeCertificate {
    /// Evaluate the conditions from given growth/decay rates and eigenvector
    /// conditioning constants.
    #[allow(clippy::too_many_arguments)]
    pub fn from_constants(
        lambda_plus: f64,
        lambda_minus: f64,
        g0: f64,
        g1: f64,
        lambda_star: f64,
        lambda_dagger: f64,
        t0: u64,
        t1: u64,
    ) -> Result<Self> {
        if lambda_plus.is_nan() || lambda_plus <= 1.0 {
            return Err(Error::InvalidInput {
                context: "dwell_time_certificate",
                reason: format!("lambda_plus = {lambda_plus} must exceed 1"),
            });
        }
        if !(lambda_minus > 0.0 && lambda_minus < 1.0) {
            return Err(Error::InvalidInput {
                context: "dwell_time_certificate",
                reason: format!("lambda_minus = {lambda_minus} must lie in (0, 1)"),
            });
        }
        if !(0.0..1.0).contains(&lambda_star) {
            return Err(Error::InvalidInput {
                context: "dwell_time_certificate",
                reason: format!("lambda_star = {lambda_star} must lie in [0, 1)"),
            });
        }
        if t0 == 0 {
            return Err(Error::InvalidInput {
                context: "dwell_time_certificate",
                reason: "attacked duration t0 must be positive".into(),
            });
        }
        let bound = ratio_bound(lambda_plus, lambda_minus, lambda_star);
        let observed = t1 as f64 / t0 as f64;
        let g = g0.min(g1);
        let tau_ave = (g < 0.0 && lambda_dagger > 0.0 && lambda_dagger < lambda_star)
            .then(|| g / (lambda_dagger - lambda_star));
        Ok(Self {
            lambda_plus,
            lambda_minus,
            g0,
            g1,
            g,
            lambda_star,
            lambda_dagger,
            ratio_bound: bound,
            t0,
            t1,
            observed_ratio: observed,
            tau_ave,
            verdict: if observed >= bound {
                Verdict::Satisfied
            } else {
                Verdict::Violated
            },
            warnings: Vec::new(),
        })
    }
}

/// Certificate computed from the attacked (`a0`) and attack-free (`a1`)
/// closed-loop matrices. `λ₊`, `λ₋` are their spectral radii and `g_i`
/// come from unit-column eigenvector matrices.
pub fn dwell_time_certificate(
    a0: &Matrix,
    a1: &Matrix,
    lambda_star: f64,
    lambda_dagger: f64,
    t0: u64,
    t1: u64,
) -> Result<DwellTimeCertificate> {
    let e0 = eigen_decompose(a0)?;
    let e1 = eigen_decompose(a1)?;
    let lambda_plus = e0.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let lambda_minus = e1.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let g_of = |e: &crate::numerics::EigenResult| {
        let (smax, smin) = e.vector_singular_extremes();
        (smax / smin).ln() / lambda_minus.ln()
    };
    let mut cert = DwellTimeCertificate::from_constants(
        lambda_plus,
        lambda_minus,
        g_of(&e0),
        g_of(&e1),
        lambda_star,
        lambda_dagger,
        t0,
        t1,
    )?;
    cert.warnings
        .extend(e0.warning.map(|w| format!("attacked mode: {w}")));
    cert.warnings
        .extend(e1.warning.map(|w| format!("attack-free mode: {w}")));
    Ok(cert)
}

/// Steps discarded at the start of every replica before averaging.
pub const MC_BURN_IN: u64 = 50;
/// Minimum number of averaged steps over all replicas.
pub const MC_MIN_SAMPLES: u64 = 10_000;

/// Replica means of the test terms with replica-based standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEstimate {
    pub replicas: usize,
    pub failures: usize,
    pub steps_per_replica: u64,
    /// Column `i` estimates `E[w_i L r]`.
    pub cross: Matrix,
    pub cross_se: Matrix,
    /// Estimates `E[(L r)(L r)ᵀ]`.
    pub cov: Matrix,
    pub cov_se: Matrix,
}

/// Seeds of replica `i`: both base seeds offset by `i`.
pub fn replica_config(cfg: &ScenarioConfig, i: usize) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.noise_seed = cfg.noise_seed.wrapping_add(i as u64);
    c.watermark.seed = cfg.watermark.seed.wrapping_add(i as u64);
    c
}

fn replica_means(cfg: &ScenarioConfig) -> Result<(Matrix, Matrix, u64)> {
    let n = cfg.model.state_dim();
    let m_w = cfg.watermark.sigma_w.len();
    let l = &cfg.gains.l;
    let mut cross = Matrix::zeros(n, m_w);
    let mut outer = Matrix::zeros(n, n);
    let mut count = 0u64;
    let summary = run_closed_loop_with(cfg, |rec| {
        if rec.k < MC_BURN_IN {
            return;
        }
        let lr = l * &rec.residual;
        if let Some(w) = &rec.w_test {
            for j in 0..m_w {
                cross.column_mut(j).axpy(w[j], &lr, 1.0);
            }
        }
        outer.ger(1.0, &lr, &lr, 1.0);
        count += 1;
    })?;
    if summary.termination.is_some() || count == 0 {
        return Err(Error::InsufficientSamples {
            reason: format!("replica stopped after {} steps", summary.steps),
        });
    }
    let c = count as f64;
    Ok((cross / c, outer / c, count))
}

/// Long-run averages of `w·(L r)` and `(L r)(L r)ᵀ` over `replicas`
/// independent runs, in parallel.
///
/// Replicas that stop early (safety termination) or fail count as failures
/// and are left out of the estimate.
pub fn monte_carlo_test_means(cfg: &ScenarioConfig, replicas: usize) -> Result<MonteCarloEstimate> {
    if cfg.scheme == Scheme::NoWatermark {
        return Err(Error::config(
            "scheme",
            "Monte Carlo test means need a watermark",
        ));
    }
    if replicas < 2 {
        return Err(Error::config(
            "replicas",
            "at least 2 replicas are needed for standard errors",
        ));
    }
    cfg.validate()?;
    if cfg.horizon <= MC_BURN_IN {
        return Err(Error::InsufficientSamples {
            reason: format!(
                "horizon {} does not exceed the burn-in of {MC_BURN_IN} steps",
                cfg.horizon
            ),
        });
    }
    let per = cfg.horizon - MC_BURN_IN;
    let total = per * replicas as u64;
    if total < MC_MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            reason: format!("{total} averaged steps, need at least {MC_MIN_SAMPLES}"),
        });
    }
    let results: Vec<Result<(Matrix, Matrix, u64)>> = (0..replicas)
        .into_par_iter()
        .map(|i| replica_means(&replica_config(cfg, i)))
        .collect();
    let ok: Vec<&(Matrix, Matrix, u64)> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failures = replicas - ok.len();
    if ok.len() < 2 {
        return Err(Error::InsufficientSamples {
            reason: format!("{failures} of {replicas} replicas failed"),
        });
    }
    let (cross, cross_se) = mean_and_se(ok.iter().map(|r| &r.0));
    let (cov, cov_se) = mean_and_se(ok.iter().map(|r| &r.1));
    Ok(MonteCarloEstimate {
        replicas: ok.len(),
        failures,
        steps_per_replica: per,
        cross,
        cross_se,
        cov,
        cov_se,
    })
}

/// Elementwise mean and standard error of the mean.
pub fn mean_and_se<'a, I>(samples: I) -> (Matrix, Matrix)
where
    I: Iterator<Item = &'a Matrix> + Clone,
{
    let n = samples.clone().count() as f64;
    let first = samples.clone().next().expect("at least one sample");
    let mut mean = Matrix::zeros(first.nrows(), first.ncols());
    for s in samples.clone() {
        mean += s;
    }
    mean /= n;
    let mut var = Matrix::zeros(first.nrows(), first.ncols());
    for s in samples {
        var += (s - &mean).map(|d| d * d);
    }
    let se = (var / (n - 1.0)).map(|v| (v / n).sqrt());
    (mean, se)
}

/// Monte Carlo estimate of the LQG cost increase caused by the control-side
/// watermark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaJEstimate {
    pub replicas: usize,
    pub steps_per_replica: u64,
    /// Replica mean of `J(w) − J(0)` with common noise.
    pub plain: f64,
    pub plain_se: f64,
    /// Replica mean of `(J(w) + J(−w))/2 − J(0)`. In the linear loop the
    /// mirrored run is `x₀ − δ`, so this is the mean of `δᵀQδ + δuᵀRδu`
    /// with `δ = x_w − x₀`.
    pub paired: f64,
    pub paired_se: f64,
}

fn replica_delta_j(cfg: &ScenarioConfig) -> Result<(f64, f64)> {
    let collect = |c: &ScenarioConfig| -> Result<Vec<(Vector, Vector)>> {
        let mut out = Vec::with_capacity(c.horizon as usize);
        let summary = run_closed_loop_with(c, |rec| {
            if rec.k >= MC_BURN_IN {
                out.push((rec.x.clone(), rec.u.clone()));
            }
        })?;
        if summary.termination.is_some() {
            return Err(Error::InsufficientSamples {
                reason: format!("replica stopped after {} steps", summary.steps),
            });
        }
        Ok(out)
    };
    let marked = collect(cfg)?;
    let clean = collect(&ScenarioConfig {
        scheme: Scheme::NoWatermark,
        watermark: crate::sim::WatermarkConfig {
            seed: cfg.watermark.seed,
            sigma_w: vec![],
        },
        ..cfg.clone()
    })?;
    let (q, r) = (&cfg.gains.q_weight, &cfg.gains.r_weight);
    let (mut plain, mut paired) = (0.0, 0.0);
    for ((xw, uw), (x0, u0)) in marked.iter().zip(&clean) {
        plain += stage_cost(xw, uw, q, r) - stage_cost(x0, u0, q, r);
        paired += stage_cost(&(xw - x0), &(uw - u0), q, r);
    }
    let n = marked.len() as f64;
    Ok((plain / n, paired / n))
}

/// Cost increase of the conventional watermark over `replicas` paired runs
/// sharing plant and sensor noise. Safety limits are switched off so the
/// loop stays linear.
pub fn monte_carlo_delta_j(cfg: &ScenarioConfig, replicas: usize) -> Result<DeltaJEstimate> {
    if cfg.scheme != Scheme::ConventionalDw {
        return Err(Error::config(
            "scheme",
            "cost increase is defined for the conventional watermark",
        ));
    }
    if cfg.attack.is_some() {
        return Err(Error::config(
            "attack",
            "cost increase is measured on the attack-free loop",
        ));
    }
    if replicas < 2 {
        return Err(Error::config(
            "replicas",
            "at least 2 replicas are needed for standard errors",
        ));
    }
    cfg.validate()?;
    if cfg.horizon <= MC_BURN_IN {
        return Err(Error::InsufficientSamples {
            reason: format!(
                "horizon {} does not exceed the burn-in of {MC_BURN_IN} steps",
                cfg.horizon
            ),
        });
    }
    let linear = ScenarioConfig {
        safety: None,
        ..cfg.clone()
    };
    let results = (0..replicas)
        .into_par_iter()
        .map(|i| replica_delta_j(&replica_config(&linear, i)))
        .collect::<Result<Vec<_>>>()?;
    let plain: Vec<Matrix> = results
        .iter()
        .map(|r| Matrix::from_element(1, 1, r.0))
        .collect();
    let paired: Vec<Matrix> = results
        .iter()
        .map(|r| Matrix::from_element(1, 1, r.1))
        .collect();
    let (pm, pse) = mean_and_se(plain.iter());
    let (qm, qse) = mean_and_se(paired.iter());
    Ok(DeltaJEstimate {
        replicas,
        steps_per_replica: cfg.horizon - MC_BURN_IN,
        plain: pm[0],
        plain_se: pse[0],
        paired: qm[0],
        paired_se: qse[0],
    })
}
