//! Keyed watermark streams, output encryption/decryption and control-side
//! injection.
//!
//! Both endpoints of a channel run the same Gaussian stream from the shared
//! seed, so the sensor-side key and the controller-side key agree bit for bit
//! as long as they advance in lockstep.

use crate::error::{Error, Result};
use crate::numerics::{is_diagonal, Matrix, Vector};
use crate::rng::{GaussianStream, StreamPurpose};

/// Grid spacing for sensor samples and watermark draws.
///
/// Values on this grid with magnitude below 2^20 add and subtract exactly in
/// f64, which makes `decrypt(encrypt(y, w), w) == y` hold bitwise.
pub const KEY_QUANTUM: f64 = 1.0 / 4_294_967_296.0;

/// Round to the nearest multiple of [`KEY_QUANTUM`].
pub fn quantize(x: f64) -> f64 {
    (x / KEY_QUANTUM).round() * KEY_QUANTUM
}

pub fn quantize_vec(v: &Vector) -> Vector {
    v.map(quantize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointRole {
    /// Sensor side (`k⁺_w`).
    Enc,
    /// Controller side (`k⁻_w`).
    Dec,
}

/// Shared configuration of a watermark channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkChannel {
    pub seed: u64,
    pub purpose: StreamPurpose,
    /// Diagonal covariance of one draw.
    pub covariance: Matrix,
}

impl WatermarkChannel {
    pub fn new(seed: u64, purpose: StreamPurpose, covariance: Matrix) -> Result<Self> {
        if !covariance.is_square() {
            return Err(Error::dim(
                "WatermarkChannel: covariance",
                "square",
                format!("{:?}", covariance.shape()),
            ));
        }
        if !is_diagonal(&covariance) {
            return Err(Error::UnsupportedCovariance);
        }
        if covariance
            .diagonal()
            .iter()
            .any(|&s| !s.is_finite() || s < 0.0)
        {
            return Err(Error::config(
                "sigma_w",
                "variances must be finite and nonnegative",
            ));
        }
        Ok(Self {
            seed,
            purpose,
            covariance,
        })
    }

    /// Channel from a list of per-component variances.
    pub fn from_variances(seed: u64, purpose: StreamPurpose, variances: &[f64]) -> Result<Self> {
        Self::new(seed, purpose, crate::numerics::diag(variances))
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn endpoint(&self, role: EndpointRole) -> WatermarkEndpoint {
        WatermarkEndpoint {
            role,
            counter: 1,
            stream: GaussianStream::new(self.seed, self.purpose),
            std_dev: self.covariance.diagonal().map(f64::sqrt),
        }
    }

    /// The (enc, dec) endpoint pair, both at counter 1.
    pub fn split(&self) -> (WatermarkEndpoint, WatermarkEndpoint) {
        (
            self.endpoint(EndpointRole::Enc),
            self.endpoint(EndpointRole::Dec),
        )
    }
}

/// One side of a channel with its own counter and stream position.
#[derive(Debug, Clone)]
pub struct WatermarkEndpoint {
    role: EndpointRole,
    counter: u64,
    stream: GaussianStream,
    std_dev: Vector,
}

impl WatermarkEndpoint {
    pub fn role(&self) -> EndpointRole {
        self.role
    }

    /// Index of the next draw.
    pub fn counter(&self) -> u64 {
        self.counter
    }
}

/// Draw the watermark for the endpoint's current counter and advance it.
///
/// Every draw consumes one standard normal per component, even for
/// zero-variance components, and is rounded to [`KEY_QUANTUM`].
pub fn next_watermark(ep: &mut WatermarkEndpoint) -> Result<Vector> {
    let next = ep.counter.checked_add(1).ok_or(Error::ChannelExhausted)?;
    let n = ep.std_dev.len();
    let mut w = Vector::zeros(n);
    for i in 0..n {
        w[i] = quantize(ep.std_dev[i] * ep.stream.next_standard());
    }
    ep.counter = next;
    Ok(w)
}

fn same_len(a: &Vector, b: &Vector, context: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(context, a.len(), b.len()));
    }
    Ok(())
}

/// `y⁺ = y + w_y`
pub fn encrypt_output(y: &Vector, w: &Vector) -> Result<Vector> {
    same_len(y, w, "encrypt_output")?;
    Ok(y + w)
}

/// `y⁻ = y_a − w_y`
pub fn decrypt_output(y_a: &Vector, w: &Vector) -> Result<Vector> {
    same_len(y_a, w, "decrypt_output")?;
    Ok(y_a - w)
}

/// `u = u_d + w_d`
pub fn inject_control_watermark(u_d: &Vector, w_d: &Vector) -> Result<Vector> {
    same_len(u_d, w_d, "inject_control_watermark")?;
    Ok(u_d + w_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn channel(vars: &[f64]) -> WatermarkChannel {
        WatermarkChannel::from_variances(1, StreamPurpose::OutputWatermark, vars).unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn zero_covariance_still_counts() {
        let (mut enc, _) = channel(&[0.0, 0.0]).split();
        assert_eq!(next_watermark(&mut enc).unwrap(), Vector::zeros(2));
        assert_eq!(enc.counter(), 2);
    }

    #[test]
    fn endpoints_stay_synchronized() {
        let (mut enc, mut dec) = channel(&[1e-4, 10.0]).split();
        for _ in 0..10_000 {
            let a = next_watermark(&mut enc).unwrap();
            let b = next_watermark(&mut dec).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(enc.counter(), dec.counter());
    }

    #[test]
    fn draws_are_on_the_key_grid() {
        let (mut enc, _) = channel(&[10.0]).split();
        for _ in 0..1000 {
            let w = next_watermark(&mut enc).unwrap()[0];
            assert_eq!(quantize(w), w);
        }
    }

    #[test]
    fn counter_overflow_is_an_error() {
        let (mut enc, _) = channel(&[1.0]).split();
        enc.counter = u64::MAX;
        assert_eq!(next_watermark(&mut enc), Err(Error::ChannelExhausted));
        assert_eq!(enc.counter(), u64::MAX);
    }

    #[test]
    fn non_diagonal_covariance_rejected() {
        let cov = crate::numerics::from_rows(&[&[1.0, 0.5], &[0.5, 1.0]]);
        assert_eq!(
            WatermarkChannel::new(1, StreamPurpose::OutputWatermark, cov),
            Err(Error::UnsupportedCovariance)
        );
    }

    #[test]
    fn moments_whiteness_and_independence() {
        let (mut enc, _) = channel(&[1e-4, 1e-4]).split();
        let n = 1_000_000usize;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            let w = next_watermark(&mut enc).unwrap();
            a.push(w[0]);
            b.push(w[1]);
        }
        let nf = n as f64;
        let mean = a.iter().sum::<f64>() / nf;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
        assert!(mean.abs() <= 3.0 * 1e-2 / 1000.0, "mean {mean}");
        assert!((var / 1e-4 - 1.0).abs() < 0.05, "var {var}");

        let bound = 3.0 / nf.sqrt();
        for lag in 1..=5 {
            let c: f64 = (lag..n)
                .map(|k| (a[k] - mean) * (a[k - lag] - mean))
                .sum::<f64>()
                / nf
                / var;
            assert!(c.abs() < bound, "lag {lag}: {c}");
        }
        let mean_b = b.iter().sum::<f64>() / nf;
        let var_b = b.iter().map(|x| (x - mean_b).powi(2)).sum::<f64>() / nf;
        let cross: f64 = (0..n).map(|k| (a[k] - mean) * (b[k] - mean_b)).sum::<f64>()
            / nf
            / (var * var_b).sqrt();
        assert!(cross.abs() < bound, "cross {cross}");
    }

    #[test]
    fn arithmetic_examples() {
        assert_eq!(
            encrypt_output(&v(&[0.1, 0.2]), &v(&[0.0, 0.0])).unwrap(),
            v(&[0.1, 0.2])
        );
        assert_eq!(
            encrypt_output(&v(&[0.0, 0.0]), &v(&[0.3, -0.1])).unwrap(),
            v(&[0.3, -0.1])
        );
        let y = encrypt_output(&v(&[0.1, 0.2]), &v(&[0.01, -0.01])).unwrap();
        assert!((y - v(&[0.11, 0.19])).amax() < 1e-15);
        let w = v(&[0.5, -2.0]);
        assert_eq!(decrypt_output(&w, &w).unwrap(), Vector::zeros(2));
        let y = v(&[0.1, 0.2]);
        let attacked = v(&[2.0, 2.0]);
        assert_ne!(decrypt_output(&attacked, &w).unwrap(), y);
        assert_eq!(
            inject_control_watermark(&v(&[0.7]), &v(&[0.0])).unwrap(),
            v(&[0.7])
        );
        assert_eq!(
            inject_control_watermark(&v(&[0.0]), &v(&[0.7])).unwrap(),
            v(&[0.7])
        );
        assert_eq!(
            inject_control_watermark(&v(&[0.5]), &v(&[-0.5])).unwrap(),
            v(&[0.0])
        );
        assert!(encrypt_output(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise_on_the_grid(y in -1.0e3f64..1.0e3, seed in any::<u64>()) {
            let ch = WatermarkChannel::from_variances(seed, StreamPurpose::OutputWatermark, &[10.0]).unwrap();
            let (mut enc, mut dec) = ch.split();
            let y = v(&[quantize(y)]);
            let plus = encrypt_output(&y, &next_watermark(&mut enc).unwrap()).unwrap();
            let minus = decrypt_output(&plus, &next_watermark(&mut dec).unwrap()).unwrap();
            prop_assert_eq!(minus, y);
        }
    }
}
