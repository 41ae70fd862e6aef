//! One-hidden-layer tanh network used as the top derivative of the state chain.
//!
//! The network maps the concatenated input `[x; u]` to a scalar:
//!
//! ```text
//! f(x, u, θ) = w_out · tanh(W_in · [x; u] + b_h) + b_out
//! ```
//!
//! Flat parameter layout (length `d = width · (inputs + 2) + 1`):
//!
//! | block   | length           | order                  |
//! |---------|------------------|------------------------|
//! | `W_in`  | `width · inputs` | row-major, one row per hidden unit |
//! | `b_h`   | `width`          |                        |
//! | `w_out` | `width`          |                        |
//! | `b_out` | 1                |                        |
//!
//! Jacobians with respect to θ and to the state inputs `x` are computed in
//! closed form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `h = apply(z)`.
    #[inline]
    pub fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub n_state_inputs: usize,
    pub n_exog_inputs: usize,
    pub hidden_width: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(n_state_inputs: usize, n_exog_inputs: usize, hidden_width: usize) -> Result<Self> {
        let spec = Self { n_state_inputs, n_exog_inputs, hidden_width, activation: Activation::Tanh };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 {
            return Err(Error::InvalidSpec("mlp hidden_width must be >= 1".into()));
        }
        if self.n_inputs() == 0 {
            return Err(Error::InvalidSpec("mlp needs at least one input".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn n_inputs(&self) -> usize {
        self.n_state_inputs + self.n_exog_inputs
    }

    #[inline]
    pub fn n_params(&self) -> usize {
        self.hidden_width * (self.n_inputs() + 2) + 1
    }

    pub fn layout(&self) -> MlpLayout {
        let w = self.hidden_width;
        let w_in = w * self.n_inputs();
        MlpLayout { w_in: 0..w_in, b_hidden: w_in..w_in + w, w_out: w_in + w..w_in + 2 * w, b_out: w_in + 2 * w }
    }

    /// Uniform on `[-0.5, 0.5]` scaled by `1/sqrt(fan_in)` per layer.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let layout = self.layout();
        let hidden_scale = 1.0 / (self.n_inputs() as f64).sqrt();
        let out_scale = 1.0 / (self.hidden_width as f64).sqrt();
        let mut theta = vec![0.0; self.n_params()];
        for (k, t) in theta.iter_mut().enumerate() {
            let scale = if k < layout.w_out.start { hidden_scale } else { out_scale };
            *t = rng.gen_range(-0.5..=0.5) * scale;
        }
        theta
    }

    fn check(&self, theta: &[f64], x: &[f64], u: &[f64]) -> Result<()> {
        check_len("mlp parameters", self.n_params(), theta.len())?;
        check_len("mlp state input", self.n_state_inputs, x.len())?;
        check_len("mlp exogenous input", self.n_exog_inputs, u.len())
    }

    #[inline]
    fn input(&self, x: &[f64], u: &[f64], i: usize) -> f64 {
        if i < x.len() {
            x[i]
        } else {
            u[i - x.len()]
        }
    }

    /// Fills `hidden` with the hidden activations and returns the output.
    fn forward_hidden(&self, theta: &[f64], x: &[f64], u: &[f64], hidden: &mut [f64]) -> f64 {
        let n_in = self.n_inputs();
        let layout = self.layout();
        let mut out = theta[layout.b_out];
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &theta[j * n_in..(j + 1) * n_in];
            let mut z = theta[layout.b_hidden.start + j];
            for (i, w) in row.iter().enumerate() {
                z += w * self.input(x, u, i);
            }
            *h = self.activation.apply(z);
            out += theta[layout.w_out.start + j] * *h;
        }
        out
    }

    /// Output together with both Jacobians, written into caller buffers.
    ///
    /// Panics if buffer lengths are wrong; use the free functions for the
    /// checked API.
    pub fn eval_into(
        &self,
        theta: &[f64],
        x: &[f64],
        u: &[f64],
        hidden: &mut [f64],
        d_theta: &mut [f64],
        d_state: &mut [f64],
    ) -> f64 {
        assert_eq!(hidden.len(), self.hidden_width);
        assert_eq!(d_theta.len(), self.n_params());
        assert_eq!(d_state.len(), self.n_state_inputs);
        let out = self.forward_hidden(theta, x, u, hidden);
        let n_in = self.n_inputs();
        let layout = self.layout();
        d_state.iter_mut().for_each(|v| *v = 0.0);
        for (j, &h) in hidden.iter().enumerate() {
            let w_out = theta[layout.w_out.start + j];
            let back = w_out * self.activation.derivative_from_output(h);
            for i in 0..n_in {
                d_theta[j * n_in + i] = back * self.input(x, u, i);
            }
            for (i, ds) in d_state.iter_mut().enumerate() {
                *ds += back * theta[j * n_in + i];
            }
            d_theta[layout.b_hidden.start + j] = back;
            d_theta[layout.w_out.start + j] = h;
        }
        d_theta[layout.b_out] = 1.0;
        out
    }

    pub fn forward_unchecked(&self, theta: &[f64], x: &[f64], u: &[f64], hidden: &mut [f64]) -> f64 {
        self.forward_hidden(theta, x, u, hidden)
    }
}

/// Index ranges of each parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpLayout {
    pub w_in: std::ops::Range<usize>,
    pub b_hidden: std::ops::Range<usize>,
    pub w_out: std::ops::Range<usize>,
    pub b_out: usize,
}

/// Structured view of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// `hidden_width × inputs`, row-major.
    pub w_in: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl MlpParams {
    pub fn unflatten(spec: &MlpSpec, theta: &[f64]) -> Result<Self> {
        check_len("mlp parameters", spec.n_params(), theta.len())?;
        let layout = spec.layout();
        Ok(Self {
            w_in: theta[layout.w_in].to_vec(),
            b_hidden: theta[layout.b_hidden].to_vec(),
            w_out: theta[layout.w_out].to_vec(),
            b_out: theta[layout.b_out],
        })
    }

    pub fn flatten(&self, spec: &MlpSpec) -> Result<Vec<f64>> {
        check_len("w_in", spec.hidden_width * spec.n_inputs(), self.w_in.len())?;
        check_len("b_hidden", spec.hidden_width, self.b_hidden.len())?;
        check_len("w_out", spec.hidden_width, self.w_out.len())?;
        let mut theta = Vec::with_capacity(spec.n_params());
        theta.extend_from_slice(&self.w_in);
        theta.extend_from_slice(&self.b_hidden);
        theta.extend_from_slice(&self.w_out);
        theta.push(self.b_out);
        Ok(theta)
    }
}

pub fn mlp_forward(spec: &MlpSpec, theta: &[f64], x: &[f64], u: &[f64]) -> Result<f64> {
    spec.check(theta, x, u)?;
    let mut hidden = vec![0.0; spec.hidden_width];
    Ok(spec.forward_hidden(theta, x, u, &mut hidden))
}

/// ∂f/∂θ with `x` and `u` held fixed.
pub fn mlp_grad_theta(spec: &MlpSpec, theta: &[f64], x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    spec.check(theta, x, u)?;
    let mut hidden = vec![0.0; spec.hidden_width];
    let mut d_theta = vec![0.0; spec.n_params()];
    let mut d_state = vec![0.0; spec.n_state_inputs];
    spec.eval_into(theta, x, u, &mut hidden, &mut d_theta, &mut d_state);
    Ok(d_theta)
}

/// ∂f/∂x, one entry per state input.
pub fn mlp_grad_state(spec: &MlpSpec, theta: &[f64], x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    spec.check(theta, x, u)?;
    let mut hidden = vec![0.0; spec.hidden_width];
    let mut d_theta = vec![0.0; spec.n_params()];
    let mut d_state = vec![0.0; spec.n_state_inputs];
    spec.eval_into(theta, x, u, &mut hidden, &mut d_theta, &mut d_state);
    Ok(d_state)
}
