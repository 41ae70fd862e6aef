//! The recursive identification loop.
//!
//! Per sample, in order:
//!
//! 1. `ε(t) = y(t) - ŷ(t)` with `ŷ(t)`, `ψ(t)` from the previous propagation;
//! 2. `g(t) = -ψ(t)ε(t)` and one optimizer update of `θ̂`;
//! 3. `θ̂` clamped into the parameter box;
//! 4. state, output and sensitivity propagation with the new `θ̂(t)`;
//! 5. divergence check: an out-of-bound or non-finite state resets `x̂`, `Ψ`
//!    (and ADAM's first moment).

use serde::{Deserialize, Serialize};

use crate::analysis::RunningMean;
use crate::error::{check_len, Error, Result};
use crate::model::{ModelState, Predictor, StructuredModelSpec};
use crate::optim::{
    adam_direction, normalized_sgd_step, sign_sign_step, AdamHyperParams, AdamState, GainSchedule, DEFAULT_DELTA_V,
};
use crate::plant::{rng_stream, DataRecord};

/// RNG stream used for random parameter initialization.
pub const STREAM_INIT: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafeguardSpec {
    pub theta_box: f64,
    pub state_norm_max: f64,
    pub grad_norm_max: f64,
}

impl Default for SafeguardSpec {
    fn default() -> Self {
        Self { theta_box: 10.0, state_norm_max: 1e3, grad_norm_max: 1e6 }
    }
}

impl SafeguardSpec {
    pub fn validate(&self) -> Result<()> {
        if [self.theta_box, self.state_norm_max, self.grad_norm_max].iter().all(|b| *b > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidSpec("safeguard bounds must be > 0".into()))
        }
    }

    /// Clamps into `[-theta_box, theta_box]`; returns the number of clamped
    /// components. Non-finite components are set to zero and counted.
    pub fn clamp_theta(&self, theta: &mut [f64]) -> usize {
        let mut n = 0;
        for t in theta.iter_mut() {
            if !t.is_finite() {
                *t = 0.0;
                n += 1;
            } else if t.abs() > self.theta_box {
                *t = t.clamp(-self.theta_box, self.theta_box);
                n += 1;
            }
        }
        n
    }

    pub fn state_ok(&self, st: &ModelState) -> bool {
        st.is_finite() && st.state_norm() <= self.state_norm_max && st.gradient_norm() <= self.grad_norm_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SafeguardOutcome {
    pub clamped: usize,
    pub reset: bool,
}

impl SafeguardOutcome {
    pub fn triggered(&self) -> bool {
        self.clamped > 0 || self.reset
    }
}

/// Projects parameters into the box and resets a diverged model state.
pub fn apply_safeguard(
    sg: &SafeguardSpec,
    theta: &mut [f64],
    state: &mut ModelState,
    adam: Option<&mut AdamState>,
) -> SafeguardOutcome {
    let clamped = sg.clamp_theta(theta);
    let reset = !sg.state_ok(state);
    if reset {
        state.reset();
        if let Some(a) = adam {
            a.m.iter_mut().for_each(|m| *m = 0.0);
        }
    }
    SafeguardOutcome { clamped, reset }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Adam(AdamHyperParams),
    /// Normalized by the running mean of `g ⊙ g`.
    NormalizedSgd {
        gain: GainSchedule,
        #[serde(default = "default_delta_v")]
        delta_v: f64,
    },
    SignSign {
        gain: GainSchedule,
    },
}

fn default_delta_v() -> f64 {
    DEFAULT_DELTA_V
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerSpec::Adam(hp) => hp.validate(),
            OptimizerSpec::NormalizedSgd { gain, delta_v } => {
                if !(*delta_v > 0.0) {
                    return Err(Error::InvalidSpec("delta_v must be > 0".into()));
                }
                gain.validate()
            }
            OptimizerSpec::SignSign { gain } => gain.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// Uniform `[-0.5, 0.5] / sqrt(fan_in)` per layer from the run seed.
    Random,
    Fixed {
        theta: Vec<f64>,
    },
    Zeros,
}

impl InitSpec {
    pub fn initial_theta(&self, model: &StructuredModelSpec, seed: u64) -> Result<Vec<f64>> {
        match self {
            InitSpec::Random => Ok(model.f.init_params(&mut rng_stream(seed, STREAM_INIT))),
            InitSpec::Fixed { theta } => {
                check_len("initial parameters", model.n_params(), theta.len())?;
                Ok(theta.clone())
            }
            InitSpec::Zeros => Ok(vec![0.0; model.n_params()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: StructuredModelSpec,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub safeguard: SafeguardSpec,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    pub theta_init: InitSpec,
    /// Record every `trace_stride`-th sample.
    #[serde(default = "one")]
    pub trace_stride: usize,
    #[serde(default)]
    pub record_theta: bool,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.safeguard.validate()?;
        if self.horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be >= 1".into()));
        }
        if self.trace_stride == 0 {
            return Err(Error::InvalidSpec("trace_stride must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub eps: f64,
    pub y_hat: f64,
    /// Safeguard fired at any sample since the previous row.
    pub triggered: bool,
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub n_samples: usize,
    /// Samples per MSE window (10% of the horizon).
    pub window: usize,
    pub initial_mse: f64,
    pub final_mse: f64,
    pub trigger_count: usize,
    pub reset_count: usize,
    pub clamp_count: usize,
    pub final_theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub summary: RunSummary,
}

/// What the optimizer saw and did at one sample, before any clamping.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub k: usize,
    pub eps: f64,
    pub psi: &'a [f64],
    pub gradient: &'a [f64],
    pub theta_before: &'a [f64],
    pub theta_after: &'a [f64],
}

enum Updater {
    Adam { hp: AdamHyperParams, st: AdamState },
    Normalized { gain: GainSchedule, delta_v: f64, dbar: RunningMean, k: u64 },
    SignSign { gain: GainSchedule, k: u64 },
}

impl Updater {
    fn new(spec: &OptimizerSpec, d: usize) -> Self {
        match *spec {
            OptimizerSpec::Adam(hp) => Updater::Adam { hp, st: AdamState::new(d) },
            OptimizerSpec::NormalizedSgd { gain, delta_v } => {
                Updater::Normalized { gain, delta_v, dbar: RunningMean::new(d), k: 0 }
            }
            OptimizerSpec::SignSign { gain } => Updater::SignSign { gain, k: 0 },
        }
    }

    fn update(&mut self, theta: &mut [f64], g: &[f64], dir: &mut [f64], sq: &mut [f64]) -> Result<()> {
        match self {
            Updater::Adam { hp, st } => {
                let k = adam_direction(hp, st, g, dir)?;
                let alpha = hp.gain.alpha(k);
                for (t, d) in theta.iter_mut().zip(dir.iter()) {
                    *t -= alpha * d;
                }
            }
            Updater::Normalized { gain, delta_v, dbar, k } => {
                *k = k.checked_add(1).ok_or(Error::StepOverflow)?;
                for (s, gi) in sq.iter_mut().zip(g) {
                    *s = gi * gi;
                }
                dbar.push(sq);
                normalized_sgd_step(gain.alpha(*k), theta, g, dbar.mean(), *delta_v)?;
            }
            Updater::SignSign { gain, k } => {
                *k = k.checked_add(1).ok_or(Error::StepOverflow)?;
                sign_sign_step(gain.alpha(*k), theta, g)?;
            }
        }
        Ok(())
    }

    fn adam_state(&mut self) -> Option<&mut AdamState> {
        match self {
            Updater::Adam { st, .. } => Some(st),
            _ => None,
        }
    }
}

pub fn identify(cfg: &RunConfig, data: &[DataRecord]) -> Result<RunTrace> {
    identify_with(cfg, data, |_| {})
}

/// [`identify`] with a callback observing every optimizer update.
pub fn identify_with<F>(cfg: &RunConfig, data: &[DataRecord], mut observe: F) -> Result<RunTrace>
where
    F: FnMut(&StepEvent<'_>),
{
    cfg.validate()?;
    if data.len() < cfg.horizon {
        return Err(Error::InsufficientData { needed: cfg.horizon, got: data.len() });
    }
    let d = cfg.model.n_params();
    let mut theta = cfg.theta_init.initial_theta(&cfg.model, cfg.seed)?;
    let mut pred = Predictor::new(cfg.model.clone())?;
    let mut st = pred.init_state();
    let mut updater = Updater::new(&cfg.optimizer, d);
    let sg = cfg.safeguard;

    let mut g = vec![0.0; d];
    let mut dir = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut theta_before = vec![0.0; d];

    let window = (cfg.horizon / 10).max(1);
    let final_start = cfg.horizon - window;
    let (mut sse_initial, mut sse_final) = (0.0, 0.0);
    let (mut trigger_count, mut reset_count, mut clamp_count) = (0, 0, 0);
    let mut rows = Vec::with_capacity(cfg.horizon.div_ceil(cfg.trace_stride));
    let mut pending_trigger = false;

    for (k, rec) in data[..cfg.horizon].iter().enumerate() {
        let mut outcome = SafeguardOutcome::default();
        if pred.observe(&mut st, &theta, &rec.u).is_err() {
            outcome.reset = true;
            st.reset();
        }
        let y_hat = st.y_hat;
        let eps = rec.y - y_hat;
        for (gi, p) in g.iter_mut().zip(&st.psi) {
            *gi = -p * eps;
        }
        if eps.is_finite() && g.iter().all(|v| v.is_finite()) {
            theta_before.copy_from_slice(&theta);
            updater.update(&mut theta, &g, &mut dir, &mut sq)?;
            observe(&StepEvent {
                k,
                eps,
                psi: &st.psi,
                gradient: &g,
                theta_before: &theta_before,
                theta_after: &theta,
            });
        } else {
            outcome.reset = true;
        }
        outcome.clamped = sg.clamp_theta(&mut theta);

        if pred.advance(&mut st, &theta, &rec.u).is_err() {
            outcome.reset = true;
        }
        let after = apply_safeguard(&sg, &mut theta, &mut st, updater.adam_state());
        outcome.reset |= after.reset;
        if outcome.reset && !after.reset {
            st.reset();
            if let Some(a) = updater.adam_state() {
                a.m.iter_mut().for_each(|m| *m = 0.0);
            }
        }

        let e2 = if eps.is_finite() { eps * eps } else { 0.0 };
        if k < window {
            sse_initial += e2;
        }
        if k >= final_start {
            sse_final += e2;
        }
        if outcome.triggered() {
            trigger_count += 1;
            pending_trigger = true;
        }
        reset_count += usize::from(outcome.reset);
        clamp_count += outcome.clamped;

        if k % cfg.trace_stride == 0 {
            rows.push(TraceRow {
                t: rec.t,
                eps,
                y_hat,
                triggered: pending_trigger,
                theta: cfg.record_theta.then(|| theta.clone()),
            });
            pending_trigger = false;
        }
    }

    Ok(RunTrace {
        rows,
        summary: RunSummary {
            seed: cfg.seed,
            n_samples: cfg.horizon,
            window,
            initial_mse: sse_initial / window as f64,
            final_mse: sse_final / window as f64,
            trigger_count,
            reset_count,
            clamp_count,
            final_theta: theta,
        },
    })
}

impl RunTrace {
    /// CSV with header `t,eps,y_hat,triggered[,theta_0..theta_{d-1}]`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.rows.first().and_then(|r| r.theta.as_ref()).map_or(0, Vec::len);
        let mut header: Vec<String> = ["t", "eps", "y_hat", "triggered"].iter().map(|s| s.to_string()).collect();
        header.extend((0..d).map(|i| format!("theta_{i}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut row =
                vec![r.t.to_string(), r.eps.to_string(), r.y_hat.to_string(), u8::from(r.triggered).to_string()];
            if let Some(th) = &r.theta {
                row.extend(th.iter().map(|v| v.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<TraceRow>> {
        let mut rdr = csv::Reader::from_reader(reader);
        let n_cols = rdr.headers()?.len();
        if n_cols < 4 {
            return Err(Error::InvalidSpec("trace CSV needs at least 4 columns".into()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| Error::InvalidSpec(format!("bad trace value {:?}: {e}", &rec[i])))
            };
            let theta = if n_cols > 4 { Some((4..n_cols).map(num).collect::<Result<Vec<_>>>()?) } else { None };
            rows.push(TraceRow { t: num(0)?, eps: num(1)?, y_hat: num(2)?, triggered: &rec[3] == "1", theta });
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{gen_input, InputGenSpec, PlantSpec};

    fn adam(alpha: f64) -> OptimizerSpec {
        OptimizerSpec::Adam(AdamHyperParams { gain: GainSchedule::Constant { alpha }, ..Default::default() })
    }

    fn white_input(seed: u64, horizon: usize) -> Vec<f64> {
        let spec = InputGenSpec { amplitude: 1.0, filter_pole: 0.0, u_max: 1.0, offset: 0.0 };
        gen_input(&spec, &mut rng_stream(seed, 0), horizon)
    }

    #[test]
    fn safeguard_identity_within_bounds() {
        let sg = SafeguardSpec::default();
        let mut theta = vec![1.0, -2.0];
        let mut st = ModelState::zeros(1, 2);
        st.x_hat[0] = 5.0;
        let before = st.clone();
        let out = apply_safeguard(&sg, &mut theta, &mut st, None);
        assert!(!out.triggered());
        assert_eq!(st, before);
        assert_eq!(theta, vec![1.0, -2.0]);
    }

    #[test]
    fn safeguard_clamps_theta() {
        let sg = SafeguardSpec::default();
        let mut theta = vec![20.0, -20.0, 3.0];
        let mut st = ModelState::zeros(1, 3);
        let out = apply_safeguard(&sg, &mut theta, &mut st, None);
        assert_eq!(theta, vec![10.0, -10.0, 3.0]);
        assert_eq!(out.clamped, 2);
        assert!(!out.reset);
    }

    #[test]
    fn safeguard_resets_non_finite_state() {
        let sg = SafeguardSpec::default();
        let mut theta = vec![0.5];
        let mut st = ModelState::zeros(1, 1);
        st.x_hat[0] = f64::NAN;
        st.psi_mat[0] = 3.0;
        let mut adam = AdamState::new(1);
        adam.m[0] = 0.4;
        adam.v[0] = 0.2;
        let out = apply_safeguard(&sg, &mut theta, &mut st, Some(&mut adam));
        assert!(out.reset && out.triggered());
        assert_eq!(st, ModelState::zeros(1, 1));
        assert_eq!(adam.m[0], 0.0);
        assert_eq!(adam.v[0], 0.2);
    }

    #[test]
    fn safeguard_resets_large_gradient() {
        let sg = SafeguardSpec { grad_norm_max: 1.0, ..Default::default() };
        let mut st = ModelState::zeros(1, 2);
        st.psi_mat = vec![1.0, 1.0];
        assert!(apply_safeguard(&sg, &mut [0.0, 0.0], &mut st, None).reset);
    }

    #[test]
    fn matching_model_is_a_fixed_point() {
        let model = StructuredModelSpec::with_mlp(1, 1, 8, 0.1).unwrap();
        let theta_star = model.f.init_params(&mut rng_stream(99, 0));
        let plant = PlantSpec::Model { model: model.clone(), theta: theta_star.clone(), noise_std: 0.0 };
        let data = plant.simulate(&white_input(1, 2_000), &mut rng_stream(1, 1)).unwrap();
        let cfg = RunConfig {
            model,
            optimizer: adam(0.01),
            safeguard: SafeguardSpec::default(),
            horizon: 2_000,
            seed: 0,
            theta_init: InitSpec::Fixed { theta: theta_star.clone() },
            trace_stride: 1,
            record_theta: true,
        };
        let trace = identify(&cfg, &data).unwrap();
        for row in &trace.rows {
            assert_eq!(row.eps, 0.0);
            assert_eq!(row.theta.as_deref(), Some(theta_star.as_slice()));
        }
    }

    #[test]
    fn trace_length_follows_stride() {
        let model = StructuredModelSpec::with_linear(1, 1, false, 1.0).unwrap();
        let plant = PlantSpec::Linear { a: 0.5, b: 1.0, noise_std: 0.1 };
        let data = plant.simulate(&white_input(2, 105), &mut rng_stream(2, 1)).unwrap();
        for (stride, expected) in [(1, 105), (10, 11), (200, 1)] {
            let cfg = RunConfig {
                model: model.clone(),
                optimizer: adam(0.01),
                safeguard: SafeguardSpec::default(),
                horizon: 105,
                seed: 0,
                theta_init: InitSpec::Zeros,
                trace_stride: stride,
                record_theta: false,
            };
            let trace = identify(&cfg, &data).unwrap();
            assert_eq!(trace.rows.len(), expected);
            assert_eq!(trace.summary.window, 10);
            assert!(trace.summary.final_mse >= 0.0);
        }
    }

    #[test]
    fn insufficient_data_rejected() {
        let cfg = RunConfig {
            model: StructuredModelSpec::with_linear(1, 1, false, 1.0).unwrap(),
            optimizer: adam(0.01),
            safeguard: SafeguardSpec::default(),
            horizon: 10,
            seed: 0,
            theta_init: InitSpec::Zeros,
            trace_stride: 1,
            record_theta: false,
        };
        assert!(matches!(identify(&cfg, &[]), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn all_optimizers_reduce_error_on_linear_oracle() {
        let model = StructuredModelSpec::with_linear(1, 1, false, 1.0).unwrap();
        let plant = PlantSpec::Linear { a: 0.5, b: 1.0, noise_std: 0.01 };
        let horizon = 20_000;
        let data = plant.simulate(&white_input(3, horizon), &mut rng_stream(3, 1)).unwrap();
        let gain = GainSchedule::Constant { alpha: 0.002 };
        for opt in [
            adam(0.002),
            OptimizerSpec::NormalizedSgd { gain, delta_v: DEFAULT_DELTA_V },
            OptimizerSpec::SignSign { gain },
        ] {
            let cfg = RunConfig {
                model: model.clone(),
                optimizer: opt,
                safeguard: SafeguardSpec::default(),
                horizon,
                seed: 0,
                theta_init: InitSpec::Zeros,
                trace_stride: 100,
                record_theta: false,
            };
            let s = identify(&cfg, &data).unwrap().summary;
            assert!(s.final_mse < 0.1 * s.initial_mse, "{opt:?}: {s:?}");
            // θ* = (a - 1, b) with Ts = 1.
            assert!((s.final_theta[0] + 0.5).abs() < 0.05, "{opt:?}: {:?}", s.final_theta);
            assert!((s.final_theta[1] - 1.0).abs() < 0.05, "{opt:?}: {:?}", s.final_theta);
        }
    }

    #[test]
    fn identical_config_is_deterministic() {
        let model = StructuredModelSpec::with_mlp(1, 1, 8, 0.1).unwrap();
        let plant = PlantSpec::Linear { a: 0.5, b: 1.0, noise_std: 0.1 };
        let data = plant.simulate(&white_input(4, 3_000), &mut rng_stream(4, 1)).unwrap();
        let cfg = RunConfig {
            model,
            optimizer: adam(0.001),
            safeguard: SafeguardSpec::default(),
            horizon: 3_000,
            seed: 42,
            theta_init: InitSpec::Random,
            trace_stride: 7,
            record_theta: true,
        };
        let a = identify(&cfg, &data).unwrap();
        let b = identify(&cfg, &data).unwrap();
        assert_eq!(a, b);
        let mut csv_a = Vec::new();
        a.write_csv(&mut csv_a).unwrap();
        let back = RunTrace::read_csv(csv_a.as_slice()).unwrap();
        assert_eq!(back, a.rows);
    }
}
