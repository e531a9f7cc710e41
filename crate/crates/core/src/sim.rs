//! Closed-loop engine for the three loop variants, with platform safety
//! limits, trace export and the performance metrics built on traces.
//!
//! Step order at every `k`: sample `n(k)`, `v(k)`; sensor output `y(k)`;
//! channel (encrypt, attack, decrypt for the new scheme, attack only
//! otherwise); test statistics and `ε(k)`; compensation; estimator update;
//! control; safety check on `x(k)`; plant and estimator time update.

use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use crate::attack::{attack_channel, AttackState, FdiaSpec};
use crate::detect::{
    compensated_indicator, conventional_stats, decide, decide_conventional, new_stats,
    CompensationBuffer, DetectorConfig, TestWindowState,
};
use crate::error::{Error, Result};
use crate::model::{
    control_law, estimator_predict, estimator_update, plant_output, plant_step, sample_noise,
    EstimatorState, LoopGains, PlantModel,
};
use crate::numerics::{Matrix, Vector};
use crate::rng::{GaussianStream, StreamPurpose};
use crate::watermark::{
    decrypt_output, encrypt_output, inject_control_watermark, next_watermark, quantize_vec,
    WatermarkChannel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    NoWatermark,
    #[serde(rename = "ConventionalDW")]
    ConventionalDw,
    #[serde(rename = "NewDW")]
    NewDw,
}

/// Limits of the cart-pendulum platform, for state `[α, θ, α̇, θ̇]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyLimits {
    /// Cart position limit, m.
    pub position: f64,
    /// Pendulum angle limit, rad.
    pub angle: f64,
    /// Cart or angular velocity above which the cart is put back.
    pub velocity: Option<f64>,
}

impl Default for SafetyLimits {
    fn default() -> Self {
        Self {
            position: 0.3,
            angle: 0.8,
            velocity: Some(5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkConfig {
    pub seed: u64,
    /// Per-component variances: one per output for the new scheme, one per
    /// input for the conventional scheme.
    pub sigma_w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scheme: Scheme,
    pub compensation: bool,
    pub model: PlantModel,
    pub gains: LoopGains,
    pub watermark: WatermarkConfig,
    pub attack: Option<FdiaSpec>,
    pub detector: DetectorConfig,
    pub horizon: u64,
    pub noise_seed: u64,
    pub safety: Option<SafetyLimits>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if self.compensation && self.scheme != Scheme::NewDw {
            return Err(Error::config("compensation", "only available with NewDW"));
        }
        self.detector.validate()?;
        let m_y = self.model.output_dim();
        if self.detector.thresh_new_1.len() != m_y {
            return Err(Error::config(
                "detector.thresh_new_1",
                format!(
                    "expected {m_y} thresholds, got {}",
                    self.detector.thresh_new_1.len()
                ),
            ));
        }
        let expected_w = match self.scheme {
            Scheme::NoWatermark => None,
            Scheme::ConventionalDw => Some(self.model.input_dim()),
            Scheme::NewDw => Some(m_y),
        };
        if let Some(n) = expected_w {
            if self.watermark.sigma_w.len() != n {
                return Err(Error::config(
                    "watermark.sigma_w",
                    format!(
                        "expected {n} variances, got {}",
                        self.watermark.sigma_w.len()
                    ),
                ));
            }
        }
        if let Some(a) = &self.attack {
            if a.state_dim() != self.model.state_dim() {
                return Err(Error::config(
                    "attack.x_a_init",
                    "dimension differs from plant state",
                ));
            }
        }
        if let Some(s) = &self.safety {
            if self.model.state_dim() != 4 {
                return Err(Error::config(
                    "safety",
                    "limits assume the 4-state cart-pendulum layout",
                ));
            }
            if !(s.position > 0.0 && s.angle > 0.0 && s.velocity.is_none_or(|v| v > 0.0)) {
                return Err(Error::config("safety", "limits must be positive"));
            }
        }
        let gains_ok = self.gains.l.shape() == (self.model.state_dim(), m_y)
            && self.gains.k_gain.shape() == (self.model.input_dim(), self.model.state_dim())
            && self.gains.sigma_o.shape() == (m_y, m_y);
        if !gains_ok {
            return Err(Error::config(
                "model.l",
                "gain dimensions do not match the plant",
            ));
        }
        Ok(())
    }

    fn channel(&self, purpose: StreamPurpose) -> Result<WatermarkChannel> {
        WatermarkChannel::from_variances(self.watermark.seed, purpose, &self.watermark.sigma_w)
            .map_err(|e| match e {
                Error::Config { reason, .. } => Error::config("watermark.sigma_w", reason),
                other => other,
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Running,
    Off,
    Back,
}

impl Event {
    pub fn as_str(self) -> &'static str {
        match self {
            Event::Running => "RUNNING",
            Event::Off => "OFF",
            Event::Back => "BACK",
        }
    }
}

/// Everything observed at one step. Fields a scheme does not produce are
/// `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: u64,
    /// `x(k)` as it entered the step (before any BACK reset).
    pub x: Vector,
    pub x_hat_prior: Vector,
    pub x_hat_post: Vector,
    pub u: Vector,
    pub y: Vector,
    pub y_plus: Option<Vector>,
    /// Payload received over the network.
    pub y_a: Vector,
    pub y_minus: Option<Vector>,
    /// Measurement fed to the estimator by the new scheme.
    pub y_tilde: Option<Vector>,
    /// `r(k)` (new scheme) or `r_d(k)` (otherwise).
    pub residual: Vector,
    /// Watermark paired with `residual` in the tests: `w_y(k)` or `w_d(k−1)`.
    pub w_test: Option<Vector>,
    pub phi_d: Option<(f64, f64)>,
    pub phi_1: Option<Vector>,
    pub phi_2: Option<f64>,
    pub phi_2_tilde: Option<f64>,
    pub eps: Option<u8>,
    pub h: Option<u64>,
    pub warm_up: bool,
    pub attack_active: bool,
    pub event: Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Termination {
    pub step: u64,
    /// Set when the state overflowed rather than crossing a limit.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: u64,
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub scheme: Scheme,
    pub steps: Vec<StepRecord>,
    pub termination: Option<Termination>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Run a scenario, handing every step record to `observe` instead of storing
/// it.
pub fn run_closed_loop_with<F>(cfg: &ScenarioConfig, mut observe: F) -> Result<RunSummary>
where
    F: FnMut(&StepRecord),
{
    cfg.validate()?;
    let model = &cfg.model;
    let gains = &cfg.gains;
    let n_x = model.state_dim();

    let mut noise = GaussianStream::new(cfg.noise_seed, StreamPurpose::PlantNoise);
    let (mut wy_enc, mut wy_dec) = match cfg.scheme {
        Scheme::NewDw => {
            let (e, d) = cfg.channel(StreamPurpose::OutputWatermark)?.split();
            (Some(e), Some(d))
        }
        _ => (None, None),
    };
    let mut wd = match cfg.scheme {
        Scheme::ConventionalDw => Some(cfg.channel(StreamPurpose::ControlWatermark)?.split().0),
        _ => None,
    };
    let mut attack_state = cfg.attack.as_ref().map(AttackState::new);
    let mut tests = TestWindowState::new(cfg.detector.window);
    let mut tilde_tests = TestWindowState::new(cfg.detector.window);
    let mut buffer = CompensationBuffer::new();
    let mut w_d_prev = Vector::zeros(model.input_dim());

    let mut x = Vector::zeros(n_x);
    let mut est = EstimatorState::zeros(n_x);
    let mut termination = None;
    let mut steps = 0u64;

    for k in 0..cfg.horizon {
        let n = sample_noise(&mut noise, &model.sigma_n)?;
        let v = sample_noise(&mut noise, &model.sigma_v)?;
        let y = quantize_vec(&plant_output(model, &x, &v)?);

        let mut transmit = |payload: &Vector| -> Result<(Vector, bool)> {
            match (&cfg.attack, attack_state.as_mut()) {
                (Some(spec), Some(st)) => {
                    let (out, next) = attack_channel(spec, st, k, payload, &model.c)?;
                    let active = next.active;
                    *st = next;
                    Ok((out, active))
                }
                _ => Ok((payload.clone(), false)),
            }
        };

        let mut rec = StepRecord {
            k,
            x: x.clone(),
            x_hat_prior: est.x_hat_prior.clone(),
            x_hat_post: est.x_hat_post.clone(),
            u: Vector::zeros(model.input_dim()),
            y: y.clone(),
            y_plus: None,
            y_a: Vector::zeros(0),
            y_minus: None,
            y_tilde: None,
            residual: Vector::zeros(0),
            w_test: None,
            phi_d: None,
            phi_1: None,
            phi_2: None,
            phi_2_tilde: None,
            eps: None,
            h: None,
            warm_up: false,
            attack_active: false,
            event: Event::Running,
        };

        let measurement = match cfg.scheme {
            Scheme::NewDw => {
                let w_enc = next_watermark(wy_enc.as_mut().expect("enc endpoint"))?;
                let y_plus = encrypt_output(&y, &w_enc)?;
                let (y_a, active) = transmit(&y_plus)?;
                let w_dec = next_watermark(wy_dec.as_mut().expect("dec endpoint"))?;
                let y_minus = decrypt_output(&y_a, &w_dec)?;
                let r = &y_minus - &model.c * &est.x_hat_prior;
                let stats = new_stats(&mut tests, &w_dec, &r, &gains.l, &gains.sigma_o)?;
                let eps = if stats.warm_up {
                    1
                } else {
                    decide(&stats.phi_1, stats.phi_2, &cfg.detector)
                };
                let y_tilde = if cfg.compensation {
                    let (y_tilde, h) = buffer.compensate(eps, &y_minus, k)?;
                    rec.h = Some(h);
                    rec.phi_2_tilde = Some(compensated_indicator(
                        &mut tilde_tests,
                        &y_tilde,
                        &est.x_hat_prior,
                        &model.c,
                        &gains.l,
                        &gains.sigma_o,
                    )?);
                    y_tilde
                } else {
                    y_minus.clone()
                };
                rec.y_plus = Some(y_plus);
                rec.y_a = y_a;
                rec.y_minus = Some(y_minus);
                rec.y_tilde = Some(y_tilde.clone());
                rec.residual = r;
                rec.w_test = Some(w_dec);
                rec.phi_1 = Some(stats.phi_1);
                rec.phi_2 = Some(stats.phi_2);
                rec.eps = Some(eps);
                rec.warm_up = stats.warm_up;
                rec.attack_active = active;
                y_tilde
            }
            Scheme::ConventionalDw => {
                let (y_a, active) = transmit(&y)?;
                let r_d = &y_a - &model.c * &est.x_hat_prior;
                let stats =
                    conventional_stats(&mut tests, w_d_prev[0], &r_d, &gains.l, &gains.sigma_o)?;
                rec.eps = Some(if stats.warm_up {
                    1
                } else {
                    decide_conventional(stats.phi_d1, stats.phi_d2, &cfg.detector)
                });
                rec.phi_d = Some((stats.phi_d1, stats.phi_d2));
                rec.warm_up = stats.warm_up;
                rec.w_test = Some(w_d_prev.clone());
                rec.residual = r_d;
                rec.y_a = y_a.clone();
                rec.attack_active = active;
                y_a
            }
            Scheme::NoWatermark => {
                let (y_a, active) = transmit(&y)?;
                rec.residual = &y_a - &model.c * &est.x_hat_prior;
                rec.y_a = y_a.clone();
                rec.attack_active = active;
                y_a
            }
        };

        est = estimator_update(gains, model, &est, &measurement)?;
        let u_d = control_law(gains, &est);
        let u = match wd.as_mut() {
            Some(ep) => {
                let w_d = next_watermark(ep)?;
                let u = inject_control_watermark(&u_d, &w_d)?;
                w_d_prev = w_d;
                u
            }
            None => u_d,
        };
        rec.x_hat_post = est.x_hat_post.clone();
        rec.u = u.clone();
        steps += 1;

        if !x.iter().all(|v| v.is_finite()) {
            rec.event = Event::Off;
            termination = Some(Termination {
                step: k,
                diverged: true,
            });
        } else if let Some(lim) = &cfg.safety {
            if x[0].abs() >= lim.position || x[1].abs() >= lim.angle {
                rec.event = Event::Off;
                termination = Some(Termination {
                    step: k,
                    diverged: false,
                });
            } else if lim
                .velocity
                .is_some_and(|vl| x[2].abs() > vl || x[3].abs() > vl)
            {
                rec.event = Event::Back;
                x[0] = 0.0;
                x[2] = 0.0;
            }
        }
        observe(&rec);
        if termination.is_some() {
            break;
        }

        x = plant_step(model, &x, &u, &n)?;
        est = estimator_predict(gains, model, &est, &u)?;
    }
    Ok(RunSummary { steps, termination })
}

pub fn run_closed_loop(cfg: &ScenarioConfig) -> Result<SimTrace> {
    let mut steps = Vec::with_capacity(cfg.horizon.min(1 << 20) as usize);
    let summary = run_closed_loop_with(cfg, |rec| steps.push(rec.clone()))?;
    Ok(SimTrace {
        scheme: cfg.scheme,
        steps,
        termination: summary.termination,
    })
}

/// Mean of `‖L r(k) − L r°(k)‖²` between the attacked run and its attack-free
/// twin driven by the same noise and watermark streams.
pub fn twin_run_distortion_power(cfg: &ScenarioConfig) -> Result<f64> {
    if cfg.attack.is_none() {
        return Err(Error::config("attack", "distortion power needs an attack"));
    }
    if (cfg.horizon as usize) < cfg.detector.window {
        return Err(Error::WarmUp {
            available: cfg.horizon as usize,
            required: cfg.detector.window,
        });
    }
    let clean_cfg = ScenarioConfig {
        attack: None,
        ..cfg.clone()
    };
    let mut clean = Vec::with_capacity(cfg.horizon as usize);
    run_closed_loop_with(&clean_cfg, |rec| clean.push(rec.residual.clone()))?;
    let l = &cfg.gains.l;
    let mut sum = 0.0;
    let mut count = 0u64;
    run_closed_loop_with(cfg, |rec| {
        if let Some(r0) = clean.get(rec.k as usize) {
            sum += (l * (&rec.residual - r0)).norm_squared();
            count += 1;
        }
    })?;
    Ok(sum / count as f64)
}

/// Time average of `xᵀQx + uᵀRu`.
pub fn lqg_cost(trace: &SimTrace, q: &Matrix, r: &Matrix) -> f64 {
    if trace.steps.is_empty() {
        return 0.0;
    }
    let sum: f64 = trace
        .steps
        .iter()
        .map(|s| stage_cost(&s.x, &s.u, q, r))
        .sum();
    sum / trace.steps.len() as f64
}

pub fn stage_cost(x: &Vector, u: &Vector, q: &Matrix, r: &Matrix) -> f64 {
    (x.transpose() * q * x)[0] + (u.transpose() * r * u)[0]
}

/// `‖C (x − x̂(k|k))‖²` at one step.
pub fn output_error_sq(c: &Matrix, rec: &StepRecord) -> f64 {
    (c * (&rec.x - &rec.x_hat_post)).norm_squared()
}

/// `E_T(k)`: mean of `‖C(x − x̂(k|k))‖²` over the `window` records ending at
/// record index `k`.
pub fn estimation_error_power(
    trace: &SimTrace,
    c: &Matrix,
    window: usize,
    k: usize,
) -> Result<f64> {
    if window == 0 {
        return Err(Error::config("window", "must be at least 1"));
    }
    if k >= trace.steps.len() {
        return Err(Error::InvalidInput {
            context: "estimation_error_power",
            reason: format!("step {k} beyond trace of length {}", trace.steps.len()),
        });
    }
    if k + 1 < window {
        return Err(Error::WarmUp {
            available: k + 1,
            required: window,
        });
    }
    let sum: f64 = trace.steps[k + 1 - window..=k]
        .iter()
        .map(|s| output_error_sq(c, s))
        .sum();
    Ok(sum / window as f64)
}

/// CSV header for a plant with `n_x` states and `m_y` outputs.
pub fn csv_header(n_x: usize, m_y: usize) -> String {
    let mut cols = vec!["k".to_string()];
    cols.extend((1..=n_x).map(|i| format!("x{i}")));
    cols.extend((1..=n_x).map(|i| format!("xhat{i}")));
    cols.push("u".into());
    for prefix in ["y", "ya", "ytilde", "r"] {
        cols.extend((1..=m_y).map(|i| format!("{prefix}{i}")));
    }
    cols.extend(["phi_d1".into(), "phi_d2".into()]);
    cols.extend((1..=m_y).map(|i| format!("phi_1{i}")));
    cols.extend(["phi_2", "phi_2_tilde", "eps", "h", "event"].map(String::from));
    cols.join(",")
}

fn push_vec(line: &mut String, v: Option<&Vector>, n: usize) {
    for i in 0..n {
        line.push(',');
        if let Some(v) = v {
            let _ = write!(line, "{}", v[i]);
        }
    }
}

fn push_opt<T: std::fmt::Display>(line: &mut String, v: Option<T>) {
    line.push(',');
    if let Some(v) = v {
        let _ = write!(line, "{v}");
    }
}

/// Write the trace as comma-separated text. Quantities the scheme does not
/// produce are left empty.
pub fn write_csv<W: io::Write>(trace: &SimTrace, out: &mut W) -> io::Result<()> {
    let Some(first) = trace.steps.first() else {
        return writeln!(out, "{}", csv_header(0, 0));
    };
    let n_x = first.x.len();
    let m_y = first.y.len();
    writeln!(out, "{}", csv_header(n_x, m_y))?;
    for s in &trace.steps {
        let mut line = s.k.to_string();
        push_vec(&mut line, Some(&s.x), n_x);
        push_vec(&mut line, Some(&s.x_hat_post), n_x);
        push_opt(&mut line, s.u.get(0));
        push_vec(&mut line, Some(&s.y), m_y);
        push_vec(&mut line, Some(&s.y_a), m_y);
        push_vec(&mut line, s.y_tilde.as_ref(), m_y);
        push_vec(&mut line, Some(&s.residual), m_y);
        push_opt(&mut line, s.phi_d.map(|p| p.0));
        push_opt(&mut line, s.phi_d.map(|p| p.1));
        push_vec(&mut line, s.phi_1.as_ref(), m_y);
        push_opt(&mut line, s.phi_2);
        push_opt(&mut line, s.phi_2_tilde);
        push_opt(&mut line, s.eps);
        push_opt(&mut line, s.h);
        line.push(',');
        line.push_str(s.event.as_str());
        writeln!(out, "{line}")?;
    }
    Ok(())
}
