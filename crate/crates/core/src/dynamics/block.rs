//! Single-state controller blocks for generators and heat sources.

use num_complex::Complex64;
use thiserror::Error;

use crate::netmodel::BlockKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PassivityError {
    #[error("block is not linear time-invariant; no frequency response available")]
    Unsupported,
    #[error("frequency grid is empty")]
    EmptyGrid,
}

/// Linear block with transfer `gain * (1 + alpha*tau*s) / (1 + tau*s)` from
/// the negated input to the output. `alpha = 0` is the first-order droop
/// `tau*y' = -y - gain*u`.
///
/// Realization, with `u` the input (frequency or average temperature):
///
/// ```text
/// tau * x' = -x - gain * (1 - alpha) * u
///        y =  x - gain * alpha * u
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearBlock {
    pub tau: f64,
    pub gain: f64,
    pub alpha: f64,
}

impl LinearBlock {
    /// `cost` is the quadratic cost coefficient; the gain is its reciprocal.
    pub fn from_spec(tau: f64, cost: f64, kind: BlockKind) -> Self {
        let alpha = match kind {
            BlockKind::FirstOrder => 0.0,
            BlockKind::LeadLag { alpha } => alpha,
        };
        Self {
            tau,
            gain: 1.0 / cost,
            alpha,
        }
    }

    pub fn derivative(&self, x: f64, u: f64) -> f64 {
        (-x - self.gain * (1.0 - self.alpha) * u) / self.tau
    }

    pub fn output(&self, x: f64, u: f64) -> f64 {
        x - self.gain * self.alpha * u
    }

    /// Direct feedthrough coefficient `d` in `y = x - d*u`.
    pub fn feedthrough(&self) -> f64 {
        self.gain * self.alpha
    }

    /// State that holds the block at rest for a constant input.
    pub fn rest_state(&self, u: f64) -> f64 {
        -self.gain * (1.0 - self.alpha) * u
    }

    /// Weight `P` of the quadratic storage `P/2 * (x - x*)^2`.
    ///
    /// With `d = -(u - u*)` the storage satisfies
    /// `dW/dt <= d * (y - y*) - gain*alpha*d^2` (for `alpha != 1`) when
    /// `P = tau / (gain * |1 - alpha|)`:
    ///
    /// * `alpha < 1`: the cross term cancels exactly and the remainder is
    ///   `x~^2 / (gain*(1 - alpha)) + gain*alpha*d^2 >= 0`.
    /// * `alpha > 1`: the remainder is a quadratic form in `(x~, d)` with
    ///   discriminant `-4 / (alpha - 1) < 0`.
    /// * `alpha = 1`: the state is unobservable and decays on its own; any
    ///   `P > tau / (4*gain)` works, `tau / gain` is used.
    ///
    /// For the first-order block this is `tau / gain = tau * Q`.
    pub fn storage_weight(&self) -> f64 {
        let gap = (1.0 - self.alpha).abs();
        if gap < 1e-12 {
            self.tau / self.gain
        } else {
            self.tau / (self.gain * gap)
        }
    }

    pub fn dc_gain(&self) -> f64 {
        self.gain
    }
}

/// A block that may or may not admit a frequency response.
pub trait IoBlock {
    /// `G(j*nu)` from negated input to output, `None` when the block is not LTI.
    fn frequency_response(&self, nu: f64) -> Option<Complex64>;
}

impl IoBlock for LinearBlock {
    fn frequency_response(&self, nu: f64) -> Option<Complex64> {
        let s = Complex64::new(0.0, nu);
        Some(self.gain * (1.0 + self.alpha * self.tau * s) / (1.0 + self.tau * s))
    }
}

/// Minimum of `Re G(j*nu)` over the grid. A positive value certifies input
/// strict passivity on that grid.
pub fn passivity_margin<B: IoBlock + ?Sized>(block: &B, grid: &[f64]) -> Result<f64, PassivityError> {
    if grid.is_empty() {
        return Err(PassivityError::EmptyGrid);
    }
    grid.iter().try_fold(f64::INFINITY, |acc, &nu| {
        let g = block.frequency_response(nu).ok_or(PassivityError::Unsupported)?;
        Ok(acc.min(g.re))
    })
}

/// `n` logarithmically spaced points between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}
