//! False data injection on the measurement channel.
//!
//! While a window is active the transmitted packet is discarded and replaced
//! by `C x_a`, with the attacker state following `x_a⁺ = A_a x_a`. The state
//! restarts from `x_a_init` at the first step of every window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{spectral_radius, Matrix, Vector};

/// Inclusive step interval; `end = None` means the attack never stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackWindow {
    pub start: u64,
    pub end: Option<u64>,
}

impl AttackWindow {
    pub fn bounded(start: u64, end: u64) -> Self {
        Self {
            start,
            end: Some(end),
        }
    }

    pub fn from(start: u64) -> Self {
        Self { start, end: None }
    }

    pub fn contains(&self, k: u64) -> bool {
        k >= self.start && self.end.is_none_or(|e| k <= e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdiaSpec {
    pub a_attack: Matrix,
    pub x_a_init: Vector,
    pub windows: Vec<AttackWindow>,
    /// Set when `ρ(A_a) ≥ 1`; the attack is still usable.
    pub warning: Option<String>,
}

impl FdiaSpec {
    pub fn new(a_attack: Matrix, x_a_init: Vector, windows: Vec<AttackWindow>) -> Result<Self> {
        if !a_attack.is_square() {
            return Err(Error::config("a_attack", "must be square"));
        }
        if x_a_init.len() != a_attack.nrows() {
            return Err(Error::config(
                "x_a_init",
                format!(
                    "expected {} entries, got {}",
                    a_attack.nrows(),
                    x_a_init.len()
                ),
            ));
        }
        if x_a_init
            .iter()
            .chain(a_attack.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::config("a_attack", "entries must be finite"));
        }
        for (i, w) in windows.iter().enumerate() {
            if let Some(end) = w.end {
                if end < w.start {
                    return Err(Error::config(format!("windows[{i}]"), "end precedes start"));
                }
            }
            if i + 1 < windows.len() {
                let next = &windows[i + 1];
                match w.end {
                    Some(end) if end < next.start => {}
                    _ => {
                        return Err(Error::config(
                            format!("windows[{}]", i + 1),
                            "windows must be sorted and disjoint",
                        ))
                    }
                }
            }
        }
        let rho = spectral_radius(&a_attack)?;
        let warning =
            (rho >= 1.0).then(|| format!("attack dynamics have spectral radius {rho:.6} >= 1"));
        Ok(Self {
            a_attack,
            x_a_init,
            windows,
            warning,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.x_a_init.len()
    }

    pub fn window_at(&self, k: u64) -> Option<&AttackWindow> {
        self.windows.iter().find(|w| w.contains(k))
    }

    /// Attack with `A_a = 0.1·I` starting from `x_a(2) = [1e-7; 0; 0; 1e-7]`
    /// and lasting for the rest of the run.
    pub fn persistent_preset() -> Self {
        Self::new(
            Matrix::identity(4, 4) * 0.1,
            Vector::from_column_slice(&[1e-7, 0.0, 0.0, 1e-7]),
            vec![AttackWindow::from(2)],
        )
        .expect("valid preset")
    }
}

/// Four-step burst at k = 100..=103 from `x_a(100) = [2; 2; 2; 2]`.
pub fn burst_preset_fig6() -> FdiaSpec {
    FdiaSpec::new(
        Matrix::identity(4, 4) * 0.1,
        Vector::from_element(4, 2.0),
        vec![AttackWindow::bounded(100, 103)],
    )
    .expect("valid preset")
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackState {
    pub x_a: Vector,
    pub active: bool,
    last_step: Option<u64>,
}

impl AttackState {
    pub fn new(spec: &FdiaSpec) -> Self {
        Self {
            x_a: spec.x_a_init.clone(),
            active: false,
            last_step: None,
        }
    }
}

/// Pass the packet through the channel at step `k`.
pub fn attack_channel(
    spec: &FdiaSpec,
    state: &AttackState,
    k: u64,
    y_transmitted: &Vector,
    c: &Matrix,
) -> Result<(Vector, AttackState)> {
    if let Some(prev) = state.last_step {
        if k <= prev {
            return Err(Error::Sequencing {
                step: k,
                previous: prev,
            });
        }
    }
    if c.ncols() != spec.state_dim() {
        return Err(Error::dim("attack_channel: c", spec.state_dim(), c.ncols()));
    }
    if c.nrows() != y_transmitted.len() {
        return Err(Error::dim(
            "attack_channel: y",
            c.nrows(),
            y_transmitted.len(),
        ));
    }
    match spec.window_at(k) {
        Some(w) => {
            let x_a = if k == w.start || !state.active {
                spec.x_a_init.clone()
            } else {
                state.x_a.clone()
            };
            let y = c * &x_a;
            Ok((
                y,
                AttackState {
                    x_a: &spec.a_attack * x_a,
                    active: true,
                    last_step: Some(k),
                },
            ))
        }
        None => Ok((
            y_transmitted.clone(),
            AttackState {
                x_a: state.x_a.clone(),
                active: false,
                last_step: Some(k),
            },
        )),
    }
}
