//! Structured recurrent predictor: a chain of Euler-discretized integrators
//! whose top derivative is a static function `f(x̂, u, θ)`.
//!
//! ```text
//! x̂_i(t+Ts) = x̂_i(t) + Ts·x̂_{i+1}(t)          i < n
//! x̂_n(t+Ts) = x̂_n(t) + Ts·f(x̂(t), u(t), θ)
//! ŷ(t)      = c·x̂(t)
//! ```
//!
//! The sensitivity matrix `Ψ = ∂x̂/∂θ` (n × d, row-major) follows the same
//! chain, with the top row driven by the total derivative
//! `∂f/∂x̂ · Ψ + ∂f/∂θ`. The output gradient is `ψ = (c·Ψ)ᵀ`.
//!
//! With `n = 0` the chain vanishes and the model is static: `ŷ = f(u, θ)`,
//! `ψ = ∂f/∂θ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mlp::MlpSpec;

/// Linear-in-parameters top derivative `f = w·[x; u] (+ b)`.
///
/// Small-instance oracle: a first-order linear plant lies exactly in this
/// model class, so the parameter vector that describes it is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub n_state_inputs: usize,
    pub n_exog_inputs: usize,
    #[serde(default)]
    pub bias: bool,
}

impl LinearSpec {
    pub fn n_inputs(&self) -> usize {
        self.n_state_inputs + self.n_exog_inputs
    }

    pub fn n_params(&self) -> usize {
        self.n_inputs() + usize::from(self.bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    Mlp(MlpSpec),
    Linear(LinearSpec),
}

impl Nonlinearity {
    pub fn n_params(&self) -> usize {
        match self {
            Nonlinearity::Mlp(s) => s.n_params(),
            Nonlinearity::Linear(s) => s.n_params(),
        }
    }

    pub fn n_state_inputs(&self) -> usize {
        match self {
            Nonlinearity::Mlp(s) => s.n_state_inputs,
            Nonlinearity::Linear(s) => s.n_state_inputs,
        }
    }

    pub fn n_exog_inputs(&self) -> usize {
        match self {
            Nonlinearity::Mlp(s) => s.n_exog_inputs,
            Nonlinearity::Linear(s) => s.n_exog_inputs,
        }
    }

    /// Random initial parameters: uniform on `[-0.5, 0.5]` over `sqrt(fan_in)`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Nonlinearity::Mlp(s) => s.init_params(rng),
            Nonlinearity::Linear(s) => {
                let scale = 1.0 / (s.n_inputs().max(1) as f64).sqrt();
                (0..s.n_params()).map(|_| rng.gen_range(-0.5..=0.5) * scale).collect()
            }
        }
    }

    fn eval(&self, theta: &[f64], x: &[f64], u: &[f64], ws: &mut Workspace) -> f64 {
        match self {
            Nonlinearity::Mlp(s) => s.eval_into(theta, x, u, &mut ws.hidden, &mut ws.d_theta, &mut ws.d_state),
            Nonlinearity::Linear(s) => {
                let mut out = 0.0;
                for (i, &xi) in x.iter().chain(u.iter()).enumerate() {
                    out += theta[i] * xi;
                    ws.d_theta[i] = xi;
                }
                if s.bias {
                    out += theta[s.n_inputs()];
                    ws.d_theta[s.n_inputs()] = 1.0;
                }
                ws.d_state.copy_from_slice(&theta[..s.n_state_inputs]);
                out
            }
        }
    }

    fn value(&self, theta: &[f64], x: &[f64], u: &[f64], ws: &mut Workspace) -> f64 {
        match self {
            Nonlinearity::Mlp(s) => s.forward_unchecked(theta, x, u, &mut ws.hidden),
            Nonlinearity::Linear(_) => self.eval(theta, x, u, ws),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredModelSpec {
    pub n: usize,
    pub ts: f64,
    pub c: Vec<f64>,
    pub f: Nonlinearity,
}

impl StructuredModelSpec {
    /// Model with the default measurement row `c = (1, 0, …, 0)`.
    pub fn new(n: usize, ts: f64, f: Nonlinearity) -> Result<Self> {
        let mut c = vec![0.0; n];
        if n > 0 {
            c[0] = 1.0;
        }
        let spec = Self { n, ts, c, f };
        spec.validate()?;
        Ok(spec)
    }

    /// `n` chained states, `n_inputs` exogenous inputs, one hidden tanh layer.
    pub fn with_mlp(n: usize, n_inputs: usize, hidden_width: usize, ts: f64) -> Result<Self> {
        Self::new(n, ts, Nonlinearity::Mlp(MlpSpec::new(n, n_inputs, hidden_width)?))
    }

    pub fn with_linear(n: usize, n_inputs: usize, bias: bool, ts: f64) -> Result<Self> {
        Self::new(n, ts, Nonlinearity::Linear(LinearSpec { n_state_inputs: n, n_exog_inputs: n_inputs, bias }))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::InvalidSpec(format!("sampling period must be > 0, got {}", self.ts)));
        }
        if self.c.len() != self.n {
            return Err(Error::InvalidSpec(format!(
                "measurement row has {} entries, state dimension is {}",
                self.c.len(),
                self.n
            )));
        }
        if self.c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("measurement row must be finite".into()));
        }
        if self.f.n_state_inputs() != self.n {
            return Err(Error::InvalidSpec(format!(
                "top derivative sees {} states, model has {}",
                self.f.n_state_inputs(),
                self.n
            )));
        }
        match &self.f {
            Nonlinearity::Mlp(s) => s.validate()?,
            Nonlinearity::Linear(s) => {
                if s.n_params() == 0 {
                    return Err(Error::InvalidSpec("linear map has no parameters".into()));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n_params(&self) -> usize {
        self.f.n_params()
    }

    #[inline]
    pub fn n_inputs(&self) -> usize {
        self.f.n_exog_inputs()
    }

    pub fn is_static(&self) -> bool {
        self.n == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub x_hat: Vec<f64>,
    /// n × d, row-major: row i is ∂x̂_i/∂θ.
    pub psi_mat: Vec<f64>,
    pub psi: Vec<f64>,
    pub y_hat: f64,
}

impl ModelState {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self { x_hat: vec![0.0; n], psi_mat: vec![0.0; n * d], psi: vec![0.0; d], y_hat: 0.0 }
    }

    pub fn reset(&mut self) {
        self.x_hat.iter_mut().for_each(|v| *v = 0.0);
        self.psi_mat.iter_mut().for_each(|v| *v = 0.0);
        self.psi.iter_mut().for_each(|v| *v = 0.0);
        self.y_hat = 0.0;
    }

    pub fn is_finite(&self) -> bool {
        self.y_hat.is_finite()
            && self.x_hat.iter().all(|v| v.is_finite())
            && self.psi_mat.iter().all(|v| v.is_finite())
            && self.psi.iter().all(|v| v.is_finite())
    }

    pub fn state_norm(&self) -> f64 {
        self.x_hat.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius norm of Ψ.
    pub fn gradient_norm(&self) -> f64 {
        self.psi_mat.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn model_init(spec: &StructuredModelSpec) -> ModelState {
    ModelState::zeros(spec.n, spec.n_params())
}

/// Scratch buffers for one model evaluation.
#[derive(Debug, Clone)]
pub struct Workspace {
    hidden: Vec<f64>,
    d_theta: Vec<f64>,
    d_state: Vec<f64>,
    top_row: Vec<f64>,
}

impl Workspace {
    pub fn new(spec: &StructuredModelSpec) -> Self {
        let hidden = match &spec.f {
            Nonlinearity::Mlp(s) => s.hidden_width,
            Nonlinearity::Linear(_) => 0,
        };
        Self {
            hidden: vec![0.0; hidden],
            d_theta: vec![0.0; spec.n_params()],
            d_state: vec![0.0; spec.n],
            top_row: vec![0.0; spec.n_params()],
        }
    }
}

/// Model spec bundled with its scratch space; drives the per-sample
/// recursion in place.
#[derive(Debug, Clone)]
pub struct Predictor {
    spec: StructuredModelSpec,
    ws: Workspace,
}

impl Predictor {
    pub fn new(spec: StructuredModelSpec) -> Result<Self> {
        spec.validate()?;
        let ws = Workspace::new(&spec);
        Ok(Self { spec, ws })
    }

    pub fn spec(&self) -> &StructuredModelSpec {
        &self.spec
    }

    pub fn init_state(&self) -> ModelState {
        model_init(&self.spec)
    }

    fn check(&self, state: &ModelState, theta: &[f64], u: &[f64]) -> Result<()> {
        let d = self.spec.n_params();
        check_len("parameter vector", d, theta.len())?;
        check_len("input vector", self.spec.n_inputs(), u.len())?;
        check_len("state vector", self.spec.n, state.x_hat.len())?;
        check_len("gradient matrix", self.spec.n * d, state.psi_mat.len())?;
        check_len("output gradient", d, state.psi.len())
    }

    /// Makes `ŷ(t)` and `ψ(t)` available for the sample carrying `u(t)`.
    ///
    /// A dynamic model already holds them from the previous `advance`; a
    /// static model evaluates `f(u(t), θ)` here.
    pub fn observe(&mut self, state: &mut ModelState, theta: &[f64], u: &[f64]) -> Result<()> {
        if !self.spec.is_static() {
            return Ok(());
        }
        self.check(state, theta, u)?;
        state.y_hat = self.spec.f.eval(theta, &[], u, &mut self.ws);
        state.psi.copy_from_slice(&self.ws.d_theta);
        if state.y_hat.is_finite() && state.psi.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Diverged)
        }
    }

    /// Joint state and sensitivity update from `t` to `t + Ts`, both
    /// evaluated at the pre-update state. No-op for static models.
    pub fn advance(&mut self, state: &mut ModelState, theta: &[f64], u: &[f64]) -> Result<()> {
        if self.spec.is_static() {
            return Ok(());
        }
        self.check(state, theta, u)?;
        let n = self.spec.n;
        let d = self.spec.n_params();
        let ts = self.spec.ts;

        let f = self.spec.f.eval(theta, &state.x_hat, u, &mut self.ws);

        // Top row from the old Ψ: Ψ_n + Ts·(∂f/∂x̂·Ψ + ∂f/∂θ).
        let top = &mut self.ws.top_row;
        top.copy_from_slice(&self.ws.d_theta);
        for (i, &dfdx) in self.ws.d_state.iter().enumerate() {
            if dfdx != 0.0 {
                let row = &state.psi_mat[i * d..(i + 1) * d];
                for (t, r) in top.iter_mut().zip(row) {
                    *t += dfdx * r;
                }
            }
        }
        for (t, r) in top.iter_mut().zip(&state.psi_mat[(n - 1) * d..]) {
            *t = r + ts * *t;
        }

        // Lower rows shift up the chain; ascending order reads only old rows.
        for i in 0..n - 1 {
            for k in 0..d {
                state.psi_mat[i * d + k] += ts * state.psi_mat[(i + 1) * d + k];
            }
            state.x_hat[i] += ts * state.x_hat[i + 1];
        }
        state.psi_mat[(n - 1) * d..].copy_from_slice(top);
        state.x_hat[n - 1] += ts * f;

        self.refresh_outputs(state);
        if state.is_finite() {
            Ok(())
        } else {
            Err(Error::Diverged)
        }
    }

    /// State-only propagation (no sensitivities).
    pub fn advance_state(&mut self, state: &mut ModelState, theta: &[f64], u: &[f64]) -> Result<()> {
        self.check(state, theta, u)?;
        if self.spec.is_static() {
            state.y_hat = self.spec.f.value(theta, &[], u, &mut self.ws);
        } else {
            let n = self.spec.n;
            let ts = self.spec.ts;
            let f = self.spec.f.value(theta, &state.x_hat, u, &mut self.ws);
            for i in 0..n - 1 {
                state.x_hat[i] += ts * state.x_hat[i + 1];
            }
            state.x_hat[n - 1] += ts * f;
            state.y_hat = dot(&self.spec.c, &state.x_hat);
        }
        if state.y_hat.is_finite() && state.x_hat.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Diverged)
        }
    }

    fn refresh_outputs(&self, state: &mut ModelState) {
        let d = self.spec.n_params();
        state.y_hat = dot(&self.spec.c, &state.x_hat);
        state.psi.iter_mut().for_each(|v| *v = 0.0);
        for (i, &ci) in self.spec.c.iter().enumerate() {
            if ci != 0.0 {
                for (p, r) in state.psi.iter_mut().zip(&state.psi_mat[i * d..(i + 1) * d]) {
                    *p += ci * r;
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Advances `x̂` and `ŷ` one sample; `Ψ` and `ψ` are carried over unchanged.
pub fn model_predict_step(
    spec: &StructuredModelSpec,
    state: &ModelState,
    theta: &[f64],
    u: &[f64],
) -> Result<ModelState> {
    let mut p = Predictor::new(spec.clone())?;
    let mut next = state.clone();
    p.advance_state(&mut next, theta, u)?;
    Ok(next)
}

/// Advances `Ψ` and `ψ` one sample from the pre-update state; `x̂` and `ŷ`
/// are carried over unchanged. Pair with [`model_predict_step`] on the same
/// inputs.
pub fn model_gradient_step(
    spec: &StructuredModelSpec,
    state: &ModelState,
    theta: &[f64],
    u: &[f64],
) -> Result<ModelState> {
    let mut p = Predictor::new(spec.clone())?;
    let mut next = state.clone();
    if spec.is_static() {
        p.observe(&mut next, theta, u)?;
        next.y_hat = state.y_hat;
    } else {
        p.advance(&mut next, theta, u)?;
        next.x_hat.copy_from_slice(&state.x_hat);
        next.y_hat = state.y_hat;
    }
    Ok(next)
}
