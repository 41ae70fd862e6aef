//! Parameter updaters driven by the stochastic gradient `g(t) = -ψ(t)ε(t)`.
//!
//! - [`adam_step`]: recursive ADAM with bias-corrected moments.
//! - [`normalized_sgd_step`]: gradient step scaled elementwise by the inverse
//!   square root of an averaged squared-gradient diagonal.
//! - [`sign_sign_step`]: step along the elementwise sign of the gradient.
//!
//! ADAM approaches the second as `β₂ → 1, ε → 0` and equals the third
//! step-for-step when `β₁ = β₂ = 0, ε → 0`.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};

/// Default M3-style floor for the normalization diagonal.
pub const DEFAULT_DELTA_V: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GainSchedule {
    Constant {
        alpha: f64,
    },
    /// `α_k = alpha_bar / (k + t0)` for step index `k ≥ 1`, so `k·α_k → alpha_bar`.
    Decaying {
        alpha_bar: f64,
        t0: f64,
    },
}

impl GainSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GainSchedule::Constant { alpha } if alpha > 0.0 && alpha.is_finite() => Ok(()),
            GainSchedule::Decaying { alpha_bar, t0 }
                if alpha_bar > 0.0 && alpha_bar.is_finite() && t0 >= 1.0 && t0.is_finite() =>
            {
                Ok(())
            }
            other => Err(Error::InvalidSpec(format!("invalid gain schedule {other:?}"))),
        }
    }

    /// Gain for the `k`-th update (`k ≥ 1`).
    #[inline]
    pub fn alpha(&self, k: u64) -> f64 {
        match *self {
            GainSchedule::Constant { alpha } => alpha,
            GainSchedule::Decaying { alpha_bar, t0 } => alpha_bar / (k as f64 + t0),
        }
    }
}

impl Default for GainSchedule {
    fn default() -> Self {
        GainSchedule::Constant { alpha: 0.001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamHyperParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub gain: GainSchedule,
}

impl Default for AdamHyperParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8, gain: GainSchedule::default() }
    }
}

impl AdamHyperParams {
    /// Filtering turned off; `epsilon = 1e-12` stands in for `ε → 0`.
    pub fn sign_sign(gain: GainSchedule) -> Self {
        Self { beta1: 0.0, beta2: 0.0, epsilon: 1e-12, gain }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::InvalidSpec(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidSpec(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        self.gain.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub k: u64,
}

impl AdamState {
    pub fn new(d: usize) -> Self {
        Self { m: vec![0.0; d], v: vec![0.0; d], k: 0 }
    }

    /// Bias-corrected first moment.
    pub fn m_hat(&self, hp: &AdamHyperParams) -> Vec<f64> {
        let c = bias_correction(hp.beta1, self.k);
        self.m.iter().map(|m| m / c).collect()
    }

    /// Bias-corrected second moment.
    pub fn v_hat(&self, hp: &AdamHyperParams) -> Vec<f64> {
        let c = bias_correction(hp.beta2, self.k);
        self.v.iter().map(|v| v / c).collect()
    }
}

/// `1 - β^k`, with `0^k = 0` for `k ≥ 1`.
#[inline]
fn bias_correction(beta: f64, k: u64) -> f64 {
    if beta == 0.0 {
        1.0
    } else {
        1.0 - beta.powf(k as f64)
    }
}

/// Advances the moments with `g` and writes the normalized direction
/// `m̂ ⊘ (v̂^½ + ε)` into `dir`. Returns the new step index.
pub fn adam_direction(hp: &AdamHyperParams, st: &mut AdamState, g: &[f64], dir: &mut [f64]) -> Result<u64> {
    check_len("gradient", st.m.len(), g.len())?;
    check_len("direction buffer", st.m.len(), dir.len())?;
    check_finite("gradient", g)?;
    let k = st.k.checked_add(1).ok_or(Error::StepOverflow)?;
    st.k = k;
    let c1 = bias_correction(hp.beta1, k);
    let c2 = bias_correction(hp.beta2, k);
    for i in 0..g.len() {
        let gi = g[i];
        st.m[i] = hp.beta1 * st.m[i] + (1.0 - hp.beta1) * gi;
        st.v[i] = hp.beta2 * st.v[i] + (1.0 - hp.beta2) * (gi * gi);
        let m_hat = st.m[i] / c1;
        let v_hat = st.v[i] / c2;
        let denom = v_hat.sqrt() + hp.epsilon;
        dir[i] = if m_hat == 0.0 { 0.0 } else { m_hat / denom };
    }
    Ok(k)
}

/// One recursive ADAM update of `theta` in place.
pub fn adam_step(hp: &AdamHyperParams, st: &mut AdamState, theta: &mut [f64], g: &[f64]) -> Result<()> {
    check_len("parameter vector", st.m.len(), theta.len())?;
    check_finite("parameter vector", theta)?;
    let mut dir = vec![0.0; g.len()];
    let k = adam_direction(hp, st, g, &mut dir)?;
    let alpha = hp.gain.alpha(k);
    for (t, d) in theta.iter_mut().zip(&dir) {
        *t -= alpha * d;
    }
    Ok(())
}

/// `θ ← θ - α·g ⊘ dbar^½` with `dbar` floored at `delta_v`.
///
/// Returns how many entries of `dbar` were floored.
pub fn normalized_sgd_step(alpha: f64, theta: &mut [f64], g: &[f64], dbar: &[f64], delta_v: f64) -> Result<usize> {
    check_len("gradient", theta.len(), g.len())?;
    check_len("normalization diagonal", theta.len(), dbar.len())?;
    check_finite("gradient", g)?;
    check_finite("normalization diagonal", dbar)?;
    let mut floored = 0;
    for i in 0..theta.len() {
        let d = if dbar[i] > delta_v {
            dbar[i]
        } else {
            floored += 1;
            delta_v
        };
        theta[i] -= alpha * g[i] / d.sqrt();
    }
    Ok(floored)
}

/// `sign(0) = 0`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `θ ← θ - α·sign(g)` elementwise.
pub fn sign_sign_step(alpha: f64, theta: &mut [f64], g: &[f64]) -> Result<()> {
    check_len("gradient", theta.len(), g.len())?;
    check_finite("gradient", g)?;
    for (t, &gi) in theta.iter_mut().zip(g) {
        *t -= alpha * sign(gi);
    }
    Ok(())
}
