//! Windowed watermark tests, the alarm rule and the compensation buffer.
//!
//! A window keeps the last `T` pairs `(w(k), L r(k))`. Statistics are always
//! recomputed from the stored terms, so they depend only on the last `T`
//! terms and not on the position in the run.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    #[serde(rename = "window_T")]
    pub window: usize,
    /// `(ϑ_d1, ϑ_d2)`
    pub thresh_conv: (f64, f64),
    pub thresh_new_1: Vec<f64>,
    pub thresh_new_2: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 5,
            thresh_conv: (2e-4, 1.5e-3),
            thresh_new_1: vec![7e-4, 7e-4],
            thresh_new_2: 7e-4,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("window_T", "must be at least 1"));
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.thresh_conv.0) || !positive(self.thresh_conv.1) {
            return Err(Error::config("thresh_conv", "thresholds must be positive"));
        }
        if !self.thresh_new_1.iter().all(|&x| positive(x)) {
            return Err(Error::config("thresh_new_1", "thresholds must be positive"));
        }
        if !positive(self.thresh_new_2) {
            return Err(Error::config("thresh_new_2", "threshold must be positive"));
        }
        Ok(())
    }
}

/// Ring buffer of the last `T` test terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TestWindowState {
    window: usize,
    w: VecDeque<Vector>,
    lr: VecDeque<Vector>,
}

impl TestWindowState {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "window must be at least 1");
        Self {
            window,
            w: VecDeque::with_capacity(window),
            lr: VecDeque::with_capacity(window),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.lr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lr.is_empty()
    }

    /// True until `T` terms have been pushed.
    pub fn warming_up(&self) -> bool {
        self.lr.len() < self.window
    }

    pub fn push(&mut self, w: Vector, lr: Vector) {
        if self.lr.len() == self.window {
            self.w.pop_front();
            self.lr.pop_front();
        }
        self.w.push_back(w);
        self.lr.push_back(lr);
    }

    /// Window mean of `w_i · L r`, one column per watermark component.
    pub fn cross_mean(&self) -> Matrix {
        let n = self.lr.len();
        let (rows, cols) = match (self.lr.front(), self.w.front()) {
            (Some(lr), Some(w)) => (lr.len(), w.len()),
            _ => return Matrix::zeros(0, 0),
        };
        let mut acc = Matrix::zeros(rows, cols);
        for (w, lr) in self.w.iter().zip(&self.lr) {
            for j in 0..cols {
                acc.column_mut(j).axpy(w[j], lr, 1.0);
            }
        }
        acc / n as f64
    }

    /// Window mean of `(L r)(L r)ᵀ`.
    pub fn outer_mean(&self) -> Matrix {
        let n = self.lr.len();
        let Some(first) = self.lr.front() else {
            return Matrix::zeros(0, 0);
        };
        let mut acc = Matrix::zeros(first.len(), first.len());
        for lr in &self.lr {
            acc.ger(1.0, lr, lr, 1.0);
        }
        acc / n as f64
    }

    /// Window mean of `‖L r‖²`, the trace of [`outer_mean`](Self::outer_mean).
    pub fn energy_mean(&self) -> f64 {
        self.lr.iter().map(|v| v.norm_squared()).sum::<f64>() / self.lr.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConventionalStats {
    pub phi_d1: f64,
    pub phi_d2: f64,
    pub warm_up: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewStats {
    pub phi_1: Vector,
    pub phi_2: f64,
    pub warm_up: bool,
}

fn lr_term(l: &Matrix, r: &Vector, sigma_o: &Matrix, context: &'static str) -> Result<Vector> {
    if l.ncols() != r.len() {
        return Err(Error::dim(context, l.ncols(), r.len()));
    }
    if sigma_o.shape() != (r.len(), r.len()) {
        return Err(Error::dim(
            context,
            format!("{0}x{0} sigma_o", r.len()),
            format!("{:?}", sigma_o.shape()),
        ));
    }
    Ok(l * r)
}

/// `tr(L Σo Lᵀ)`
pub fn centering_trace(l: &Matrix, sigma_o: &Matrix) -> f64 {
    (l * sigma_o * l.transpose()).trace()
}

/// Push `w_d(k−1)·L r_d(k)` and return `(‖𝒲_d‖_F, |tr 𝒱_d|)` over the window.
pub fn conventional_stats(
    state: &mut TestWindowState,
    w_d_prev: f64,
    r_d: &Vector,
    l: &Matrix,
    sigma_o: &Matrix,
) -> Result<ConventionalStats> {
    let lr = lr_term(l, r_d, sigma_o, "conventional_stats")?;
    state.push(Vector::from_element(1, w_d_prev), lr);
    Ok(ConventionalStats {
        phi_d1: state.cross_mean().norm(),
        phi_d2: (state.energy_mean() - centering_trace(l, sigma_o)).abs(),
        warm_up: state.warming_up(),
    })
}

/// Push the contemporaneous pair `(w_y(k), L r(k))` and return the per-output
/// `φ_1,i` and `φ_2`.
pub fn new_stats(
    state: &mut TestWindowState,
    w_y: &Vector,
    r: &Vector,
    l: &Matrix,
    sigma_o: &Matrix,
) -> Result<NewStats> {
    let lr = lr_term(l, r, sigma_o, "new_stats")?;
    if w_y.len() != r.len() {
        return Err(Error::dim("new_stats: w_y", r.len(), w_y.len()));
    }
    state.push(w_y.clone(), lr);
    let cross = state.cross_mean();
    let phi_1 = Vector::from_iterator(cross.ncols(), cross.column_iter().map(|c| c.norm()));
    Ok(NewStats {
        phi_1,
        phi_2: (state.energy_mean() - centering_trace(l, sigma_o)).abs(),
        warm_up: state.warming_up(),
    })
}

/// `φ̃_2` on `r̃ = ỹ − C x̂(k|k−1)`.
pub fn compensated_indicator(
    state: &mut TestWindowState,
    y_tilde: &Vector,
    x_hat_prior: &Vector,
    c: &Matrix,
    l: &Matrix,
    sigma_o: &Matrix,
) -> Result<f64> {
    if c.ncols() != x_hat_prior.len() {
        return Err(Error::dim(
            "compensated_indicator: x_hat_prior",
            c.ncols(),
            x_hat_prior.len(),
        ));
    }
    if c.nrows() != y_tilde.len() {
        return Err(Error::dim(
            "compensated_indicator: y_tilde",
            c.nrows(),
            y_tilde.len(),
        ));
    }
    let r = y_tilde - c * x_hat_prior;
    let lr = lr_term(l, &r, sigma_o, "compensated_indicator")?;
    state.push(Vector::zeros(0), lr);
    Ok((state.energy_mean() - centering_trace(l, sigma_o)).abs())
}

/// Detection flag ε for the new tests: 0 if any `φ_1,i ≥ ϑ_1,i` or
/// `φ_2 ≥ ϑ_2`, else 1.
pub fn decide(phi_1: &Vector, phi_2: f64, cfg: &DetectorConfig) -> u8 {
    let alarm = phi_1
        .iter()
        .zip(&cfg.thresh_new_1)
        .any(|(phi, th)| phi >= th)
        || phi_2 >= cfg.thresh_new_2;
    u8::from(!alarm)
}

/// Detection flag ε for the conventional tests.
pub fn decide_conventional(phi_d1: f64, phi_d2: f64, cfg: &DetectorConfig) -> u8 {
    u8::from(!(phi_d1 >= cfg.thresh_conv.0 || phi_d2 >= cfg.thresh_conv.1))
}

/// Holds the most recent output that passed the tests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompensationBuffer {
    pub last_healthy_output: Option<Vector>,
    pub last_healthy_step: u64,
    pub h_current: u64,
}

impl CompensationBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `(ỹ(k), h(k))`.
    pub fn compensate(&mut self, eps: u8, y_minus: &Vector, k: u64) -> Result<(Vector, u64)> {
        if eps == 1 {
            self.last_healthy_output = Some(y_minus.clone());
            self.last_healthy_step = k;
            self.h_current = 0;
            return Ok((y_minus.clone(), 0));
        }
        let y = self
            .last_healthy_output
            .clone()
            .ok_or(Error::ColdStart { step: k })?;
        self.h_current = k - self.last_healthy_step;
        Ok((y, self.h_current))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::diag;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn zero_residuals() {
        let l = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]);
        let so = diag(&[0.3, 0.2]);
        let mut conv = TestWindowState::new(5);
        let mut new = TestWindowState::new(5);
        let mut last = None;
        for _ in 0..5 {
            let c = conventional_stats(&mut conv, 0.7, &Vector::zeros(2), &l, &so).unwrap();
            let n = new_stats(&mut new, &v(&[0.1, -0.2]), &Vector::zeros(2), &l, &so).unwrap();
            last = Some((c, n));
        }
        let (c, n) = last.unwrap();
        let centering = (&l * &so * l.transpose()).trace();
        assert_eq!(c.phi_d1, 0.0);
        assert!((c.phi_d2 - centering).abs() < 1e-15);
        assert!(!c.warm_up);
        assert_eq!(n.phi_1, Vector::zeros(2));
    }

    #[test]
    fn single_term_window() {
        let l = Matrix::identity(4, 4);
        let so = Matrix::zeros(4, 4);
        let r = v(&[1.0, 2.0, 3.0, 4.0]);
        let mut st = TestWindowState::new(1);
        let c = conventional_stats(&mut st, 1.0, &r, &l, &so).unwrap();
        assert!((c.phi_d1 - 30f64.sqrt()).abs() < 1e-14);

        let l = Matrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 3.0]);
        let so = Matrix::zeros(2, 2);
        let r = v(&[0.5, -1.0]);
        let mut st = TestWindowState::new(1);
        let n = new_stats(&mut st, &v(&[1.0, 0.0]), &r, &l, &so).unwrap();
        assert!((n.phi_1[0] - (&l * &r).norm()).abs() < 1e-15);
        assert_eq!(n.phi_1[1], 0.0);
    }

    #[test]
    fn warm_up_flag() {
        let mut st = TestWindowState::new(3);
        let l = Matrix::identity(1, 1);
        let so = Matrix::zeros(1, 1);
        let flags: Vec<bool> = (0..4)
            .map(|_| {
                new_stats(&mut st, &v(&[1.0]), &v(&[1.0]), &l, &so)
                    .unwrap()
                    .warm_up
            })
            .collect();
        assert_eq!(flags, vec![true, true, false, false]);
    }

    #[test]
    fn decision_rule() {
        let cfg = DetectorConfig::default();
        assert_eq!(decide(&v(&[1e-4, 1e-4]), 1e-4, &cfg), 1);
        assert_eq!(decide(&v(&[1e-4, 1e-4]), 7e-4, &cfg), 0);
        assert_eq!(decide(&v(&[1e-4, 8e-4]), 1e-4, &cfg), 0);
        assert_eq!(decide_conventional(1e-4, 1e-3, &cfg), 1);
        assert_eq!(decide_conventional(2e-4, 1e-3, &cfg), 0);
        assert_eq!(decide_conventional(1e-4, 1.5e-3, &cfg), 0);
    }

    #[test]
    fn compensation_delays() {
        let mut buf = CompensationBuffer::new();
        let eps = [1u8, 1, 0, 0, 1];
        let hs: Vec<u64> = eps
            .iter()
            .enumerate()
            .map(|(k, &e)| buf.compensate(e, &v(&[k as f64]), k as u64).unwrap().1)
            .collect();
        assert_eq!(hs, vec![0, 0, 1, 2, 0]);

        let mut buf = CompensationBuffer::new();
        buf.compensate(1, &v(&[0.25, 0.5]), 100).unwrap();
        let (y, h) = buf.compensate(0, &v(&[2.0, 2.0]), 101).unwrap();
        assert_eq!(y, v(&[0.25, 0.5]));
        assert_eq!(h, 1);
        assert_eq!(buf.h_current, 1);

        let mut buf = CompensationBuffer::new();
        for k in 0..10 {
            let y = v(&[k as f64 * 0.1]);
            assert_eq!(buf.compensate(1, &y, k).unwrap().0, y);
        }
    }

    #[test]
    fn cold_start_is_an_error() {
        let mut buf = CompensationBuffer::new();
        assert_eq!(
            buf.compensate(0, &v(&[1.0]), 0),
            Err(Error::ColdStart { step: 0 })
        );
    }

    #[test]
    fn compensated_indicator_zero_residual() {
        let c = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let l = Matrix::from_row_slice(2, 1, &[0.5, 1.0]);
        let so = diag(&[0.0]);
        let mut st = TestWindowState::new(2);
        let x = v(&[0.3, 7.0]);
        let phi = compensated_indicator(&mut st, &v(&[0.3]), &x, &c, &l, &so).unwrap();
        assert_eq!(phi, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        let bad = DetectorConfig {
            window: 0,
            ..DetectorConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DetectorConfig {
            thresh_new_2: 0.0,
            ..DetectorConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn terms() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 5)
    }

    proptest! {
        #[test]
        fn statistics_depend_only_on_last_window(prefix in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 0..20), tail in terms()) {
            let l = Matrix::from_row_slice(2, 2, &[1.0, 0.2, -0.3, 0.8]);
            let so = diag(&[0.01, 0.02]);
            let run = |seq: &[(f64, f64, f64)]| {
                let mut st = TestWindowState::new(5);
                let mut out = None;
                for &(w, r1, r2) in seq {
                    out = Some(new_stats(&mut st, &v(&[w, -w]), &v(&[r1, r2]), &l, &so).unwrap());
                }
                out.unwrap()
            };
            let mut long = prefix.clone();
            long.extend_from_slice(&tail);
            let a = run(&long);
            let b = run(&tail);
            prop_assert_eq!(a.phi_1, b.phi_1);
            prop_assert_eq!(a.phi_2, b.phi_2);
        }

        #[test]
        fn residual_scaling(tail in terms(), lambda in 1.0f64..10.0) {
            let l = Matrix::from_row_slice(2, 2, &[1.0, 0.2, -0.3, 0.8]);
            let so = diag(&[0.01, 0.02]);
            let centering = centering_trace(&l, &so);
            let run = |scale: f64| {
                let mut st = TestWindowState::new(5);
                let mut out = None;
                for &(w, r1, r2) in &tail {
                    out = Some(new_stats(&mut st, &v(&[w, 0.5 * w]), &v(&[scale * r1, scale * r2]), &l, &so).unwrap());
                }
                (out.unwrap(), st.energy_mean())
            };
            let (base, e0) = run(1.0);
            let (scaled, e1) = run(lambda);
            for i in 0..2 {
                prop_assert!((scaled.phi_1[i] - lambda * base.phi_1[i]).abs() <= 1e-12 * (1.0 + scaled.phi_1[i]));
            }
            prop_assert!((e1 - lambda * lambda * e0).abs() <= 1e-12 * (1.0 + e1));
            // φ₂ adds back the centering term before scaling.
            let excess = |phi_2: f64, e: f64| if e >= centering { phi_2 + centering } else { centering - phi_2 };
            prop_assert!((excess(scaled.phi_2, e1) - lambda * lambda * excess(base.phi_2, e0)).abs() <= 1e-10 * (1.0 + e1));
        }
    }
}
