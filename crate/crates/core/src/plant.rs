//! Data-generating systems and the excitation signal.
//!
//! All noise is Gaussian truncated at [`NOISE_CLIP_SIGMAS`] standard
//! deviations so every generated record obeys a computable bound.

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Predictor, StructuredModelSpec};

pub const NOISE_CLIP_SIGMAS: f64 = 6.0;

/// Independent, reproducible RNG stream `stream` under `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    std * z.clamp(-NOISE_CLIP_SIGMAS, NOISE_CLIP_SIGMAS)
}

/// One sample `(t, u(t), y(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub t: f64,
    pub u: Vec<f64>,
    pub y: f64,
}

impl DataRecord {
    pub fn norm(&self) -> f64 {
        (self.y * self.y + self.u.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

/// Longitudinal vehicle `ẋ₁ = u - drag·x₁² - w` sampled every `ts`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CruisePlantSpec {
    /// Vehicle mass in kg; informational, the dynamics use the lumped drag.
    pub mass: f64,
    /// Lumped `ρ·A·C/(2m)` in 1/m.
    pub drag_coeff: f64,
    pub ts: f64,
    pub inner_substeps: usize,
    /// Thrust limit in m/s².
    pub u_max: f64,
    /// Standard deviation of the disturbance `w` in m/s².
    pub w_std: f64,
    /// Standard deviation of the velocity measurement noise in m/s.
    pub meas_std: f64,
    pub initial_velocity: f64,
}

impl Default for CruisePlantSpec {
    fn default() -> Self {
        let max_speed: f64 = 60.0;
        let u_max = 3.0;
        Self {
            mass: 1500.0,
            drag_coeff: u_max / (max_speed * max_speed),
            ts: 0.1,
            inner_substeps: 10,
            u_max,
            w_std: 0.01,
            meas_std: 0.1,
            initial_velocity: 0.0,
        }
    }
}

impl CruisePlantSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(format!("cruise plant: {msg}")));
        if !(self.drag_coeff > 0.0) {
            return bad("drag_coeff must be > 0");
        }
        if self.inner_substeps == 0 {
            return bad("inner_substeps must be >= 1");
        }
        if !(self.u_max > 0.0) {
            return bad("u_max must be > 0");
        }
        if !(self.ts > 0.0) {
            return bad("ts must be > 0");
        }
        if !(self.w_std >= 0.0 && self.meas_std >= 0.0) {
            return bad("noise standard deviations must be >= 0");
        }
        if !(self.initial_velocity >= 0.0 && self.initial_velocity.is_finite()) {
            return bad("initial_velocity must be >= 0");
        }
        Ok(())
    }

    /// Upper bound on the true velocity for inputs within `u_max`.
    pub fn velocity_bound(&self) -> f64 {
        let push = self.u_max + NOISE_CLIP_SIGMAS * self.w_std;
        self.initial_velocity.max((push / self.drag_coeff).sqrt())
    }

    /// Bound `C` on `‖(y, u)‖` for every generated record.
    pub fn record_bound(&self) -> f64 {
        let y = self.velocity_bound() + NOISE_CLIP_SIGMAS * self.meas_std;
        (y * y + self.u_max * self.u_max).sqrt()
    }
}

/// Advances the velocity over one sampling period and measures it.
///
/// `w` is drawn once per sample and held over the Euler substeps.
pub fn cruise_step<R: Rng + ?Sized>(spec: &CruisePlantSpec, x1: f64, u: f64, rng: &mut R) -> Result<(f64, f64)> {
    if u.abs() > spec.u_max {
        return Err(Error::InputOutOfRange { value: u, limit: spec.u_max });
    }
    let w = gaussian(rng, spec.w_std);
    let h = spec.ts / spec.inner_substeps as f64;
    let mut x = x1;
    for _ in 0..spec.inner_substeps {
        x = (x + h * (u - spec.drag_coeff * x * x - w)).max(0.0);
    }
    let y = x + gaussian(rng, spec.meas_std);
    Ok((x, y))
}

/// Filtered uniform excitation `u(t) = p·u(t-1) + (1-p)·ū(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputGenSpec {
    /// Constant level added to the filtered noise.
    pub offset: f64,
    pub amplitude: f64,
    pub filter_pole: f64,
    pub u_max: f64,
}

impl Default for InputGenSpec {
    fn default() -> Self {
        Self { offset: 0.0, amplitude: 3.0, filter_pole: 0.9, u_max: 3.0 }
    }
}

impl InputGenSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidSpec("input amplitude must be >= 0".into()));
        }
        if !self.offset.is_finite() {
            return Err(Error::InvalidSpec("input offset must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.filter_pole) {
            return Err(Error::InvalidSpec(format!("input filter pole must lie in [0, 1), got {}", self.filter_pole)));
        }
        if !(self.u_max > 0.0) {
            return Err(Error::InvalidSpec("input u_max must be > 0".into()));
        }
        Ok(())
    }
}

pub fn gen_input<R: Rng + ?Sized>(spec: &InputGenSpec, rng: &mut R, horizon: usize) -> Vec<f64> {
    let p = spec.filter_pole;
    let mut prev = 0.0;
    (0..horizon)
        .map(|_| {
            let raw = if spec.amplitude > 0.0 { rng.gen_range(-spec.amplitude..=spec.amplitude) } else { 0.0 };
            prev = p * prev + (1.0 - p) * raw;
            (spec.offset + prev).clamp(-spec.u_max, spec.u_max)
        })
        .collect()
}

/// `x' = a·x + b·u`, `y = x' + noise`.
pub fn linear_plant_step<R: Rng + ?Sized>(a: f64, b: f64, x: f64, u: f64, noise_std: f64, rng: &mut R) -> (f64, f64) {
    let next = a * x + b * u;
    (next, next + gaussian(rng, noise_std))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantSpec {
    Cruise(CruisePlantSpec),
    /// First-order linear plant with a known optimal predictor.
    Linear {
        a: f64,
        b: f64,
        noise_std: f64,
    },
    /// Data generated by the structured model itself at fixed parameters.
    Model {
        model: StructuredModelSpec,
        theta: Vec<f64>,
        #[serde(default)]
        noise_std: f64,
    },
}

impl PlantSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PlantSpec::Cruise(c) => c.validate(),
            PlantSpec::Linear { a, b, noise_std } => {
                if !(a.abs() < 1.0) || !b.is_finite() || !(*noise_std >= 0.0) {
                    return Err(Error::InvalidSpec("linear plant needs |a| < 1, finite b and noise_std >= 0".into()));
                }
                Ok(())
            }
            PlantSpec::Model { model, theta, noise_std } => {
                model.validate()?;
                if theta.len() != model.n_params() {
                    return Err(Error::DimensionMismatch {
                        what: "model plant parameters",
                        expected: model.n_params(),
                        got: theta.len(),
                    });
                }
                if !(*noise_std >= 0.0) {
                    return Err(Error::InvalidSpec("noise_std must be >= 0".into()));
                }
                Ok(())
            }
        }
    }

    pub fn ts(&self) -> f64 {
        match self {
            PlantSpec::Cruise(c) => c.ts,
            PlantSpec::Linear { .. } => 1.0,
            PlantSpec::Model { model, .. } => model.ts,
        }
    }

    /// Generates `inputs.len()` records driven by `inputs`.
    ///
    /// Record `k` carries `u(k)` and the measurement of the state reached
    /// from `u(0..k)`.
    pub fn simulate<R: Rng + ?Sized>(&self, inputs: &[f64], rng: &mut R) -> Result<Vec<DataRecord>> {
        self.validate()?;
        let ts = self.ts();
        let mut records = Vec::with_capacity(inputs.len());
        match self {
            PlantSpec::Cruise(spec) => {
                let mut x = spec.initial_velocity;
                let mut y = x + gaussian(rng, spec.meas_std);
                for (k, &u) in inputs.iter().enumerate() {
                    records.push(DataRecord { t: k as f64 * ts, u: vec![u], y });
                    (x, y) = cruise_step(spec, x, u, rng)?;
                }
            }
            PlantSpec::Linear { a, b, noise_std } => {
                let mut x = 0.0;
                let mut y = gaussian(rng, *noise_std);
                for (k, &u) in inputs.iter().enumerate() {
                    records.push(DataRecord { t: k as f64 * ts, u: vec![u], y });
                    (x, y) = linear_plant_step(*a, *b, x, u, *noise_std, rng);
                }
            }
            PlantSpec::Model { model, theta, noise_std } => {
                if model.n_inputs() != 1 {
                    return Err(Error::InvalidSpec("model plant must have exactly one input".into()));
                }
                let mut p = Predictor::new(model.clone())?;
                let mut st = p.init_state();
                for (k, &u) in inputs.iter().enumerate() {
                    let u = [u];
                    if model.is_static() {
                        p.advance_state(&mut st, theta, &u)?;
                    }
                    let y = st.y_hat + gaussian(rng, *noise_std);
                    records.push(DataRecord { t: k as f64 * ts, u: u.to_vec(), y });
                    if !model.is_static() {
                        p.advance_state(&mut st, theta, &u)?;
                    }
                }
            }
        }
        Ok(records)
    }
}

/// Writes records as CSV with header `t,u,y` (or `t,u_0,..,u_{K-1},y`).
pub fn write_records_csv<W: Write>(writer: W, records: &[DataRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let k = records.first().map_or(1, |r| r.u.len());
    let mut header = vec!["t".to_string()];
    if k == 1 {
        header.push("u".into());
    } else {
        header.extend((0..k).map(|i| format!("u_{i}")));
    }
    header.push("y".into());
    w.write_record(&header)?;
    for r in records {
        if r.u.len() != k {
            return Err(Error::DimensionMismatch { what: "record input", expected: k, got: r.u.len() });
        }
        let mut row = Vec::with_capacity(k + 2);
        row.push(r.t.to_string());
        row.extend(r.u.iter().map(|v| v.to_string()));
        row.push(r.y.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<DataRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let n = header.len();
    if n < 3 || &header[0] != "t" || &header[n - 1] != "y" {
        return Err(Error::InvalidSpec(format!("unexpected data header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let parse = |i: usize| -> Result<f64> {
            row[i].trim().parse::<f64>().map_err(|e| Error::InvalidSpec(format!("bad number {:?}: {e}", &row[i])))
        };
        let u = (1..n - 1).map(parse).collect::<Result<Vec<_>>>()?;
        out.push(DataRecord { t: parse(0)?, u, y: parse(n - 1)? });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless() -> CruisePlantSpec {
        CruisePlantSpec { w_std: 0.0, meas_std: 0.0, ..Default::default() }
    }

    #[test]
    fn rest_is_equilibrium() {
        let mut rng = rng_stream(1, 0);
        let (x, y) = cruise_step(&noiseless(), 0.0, 0.0, &mut rng).unwrap();
        assert_eq!((x, y), (0.0, 0.0));
    }

    #[test]
    fn drag_coefficient_gives_sixty_at_full_thrust() {
        let spec = CruisePlantSpec::default();
        assert!((spec.drag_coeff - 8.333_333_333_333_333e-4).abs() < 1e-15);
        assert!((spec.drag_coeff * 60.0 * 60.0 - 3.0).abs() < 1e-12);
        // Equilibrium is a fixed point of the sampled map.
        let mut rng = rng_stream(1, 0);
        let (x, _) = cruise_step(&noiseless(), 60.0, 3.0, &mut rng).unwrap();
        assert!((x - 60.0).abs() < 1e-12);
    }

    #[test]
    fn single_substep_hand_value() {
        let spec = CruisePlantSpec { inner_substeps: 1, ..noiseless() };
        let mut rng = rng_stream(1, 0);
        let (x, y) = cruise_step(&spec, 10.0, 1.0, &mut rng).unwrap();
        let expected = 10.0 + 0.1 * (1.0 - (3.0 / 3600.0) * 100.0);
        assert!((x - expected).abs() < 1e-14);
        assert!((x - 10.0917).abs() < 1e-4);
        assert_eq!(x, y);
    }

    #[test]
    fn input_limit_enforced() {
        let mut rng = rng_stream(1, 0);
        assert!(cruise_step(&noiseless(), 0.0, 3.5, &mut rng).is_err());
    }

    #[test]
    fn monotone_approach_to_equilibrium() {
        let spec = noiseless();
        let mut rng = rng_stream(1, 0);
        let u = 1.2;
        let eq = (u / spec.drag_coeff).sqrt();
        let mut x = 0.0;
        for _ in 0..20_000 {
            let (next, _) = cruise_step(&spec, x, u, &mut rng).unwrap();
            assert!(next >= x && next <= eq + 1e-9);
            x = next;
        }
        assert!((x - eq).abs() < 1e-3);
    }

    #[test]
    fn zero_amplitude_input_is_zero() {
        let spec = InputGenSpec { amplitude: 0.0, ..Default::default() };
        let u = gen_input(&spec, &mut rng_stream(3, 0), 100);
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unfiltered_input_is_white() {
        let spec = InputGenSpec { amplitude: 1.0, filter_pole: 0.0, u_max: 1.0, offset: 0.0 };
        let u = gen_input(&spec, &mut rng_stream(11, 0), 100_000);
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        let var = u.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let cov1 = u.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>();
        assert!((cov1 / var).abs() < 0.02);
    }

    #[test]
    fn input_is_clipped() {
        let spec = InputGenSpec { amplitude: 10.0, filter_pole: 0.5, u_max: 3.0, offset: 0.0 };
        let u = gen_input(&spec, &mut rng_stream(2, 0), 10_000);
        assert!(u.iter().all(|v| v.abs() <= 3.0));
        assert!(u.iter().any(|v| v.abs() == 3.0));
    }

    #[test]
    fn linear_plant_examples() {
        let mut rng = rng_stream(0, 0);
        assert_eq!(linear_plant_step(0.5, 1.0, 2.0, 0.0, 0.0, &mut rng), (1.0, 1.0));
        let plant = PlantSpec::Linear { a: 0.0, b: 1.0, noise_std: 0.0 };
        let u = [0.3, -0.2, 0.9, 0.1];
        let recs = plant.simulate(&u, &mut rng).unwrap();
        for k in 1..u.len() {
            assert_eq!(recs[k].y, u[k - 1]);
        }
    }

    #[test]
    fn linear_plant_stationary_variance() {
        // Unit-variance white input: var(y) = b²/(1 - a²).
        let (a, b) = (0.5, 1.0);
        let mut rng = rng_stream(21, 0);
        let mut x = 0.0;
        let mut ys = Vec::with_capacity(100_000);
        for _ in 0..100_100 {
            let u: f64 = StandardNormal.sample(&mut rng);
            let (next, y) = linear_plant_step(a, b, x, u, 0.0, &mut rng);
            x = next;
            ys.push(y);
        }
        let ys = &ys[100..];
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ys.len() as f64;
        let expected = b * b / (1.0 - a * a);
        assert!((var - expected).abs() / expected < 0.02, "{var} vs {expected}");
    }

    #[test]
    fn seeded_data_is_bit_identical() {
        let plant = PlantSpec::Cruise(CruisePlantSpec::default());
        let gen = |seed| {
            let u = gen_input(&InputGenSpec::default(), &mut rng_stream(seed, 0), 5_000);
            plant.simulate(&u, &mut rng_stream(seed, 1)).unwrap()
        };
        assert_eq!(gen(7), gen(7));
        assert_ne!(gen(7), gen(8));
    }

    #[test]
    fn records_respect_bound() {
        let spec = CruisePlantSpec { initial_velocity: 30.0, ..Default::default() };
        let plant = PlantSpec::Cruise(spec);
        let input = InputGenSpec { amplitude: 3.0, filter_pole: 0.0, u_max: 3.0, offset: 0.0 };
        let u = gen_input(&input, &mut rng_stream(5, 0), 50_000);
        let recs = plant.simulate(&u, &mut rng_stream(5, 1)).unwrap();
        let c = spec.record_bound();
        assert!(recs.iter().all(|r| r.norm() <= c));
    }

    #[test]
    fn model_plant_reproduces_predictor() {
        let model = StructuredModelSpec::with_linear(0, 1, false, 1.0).unwrap();
        let plant = PlantSpec::Model { model, theta: vec![2.0], noise_std: 0.0 };
        let recs = plant.simulate(&[0.5, -1.0], &mut rng_stream(0, 0)).unwrap();
        assert_eq!(recs[0].y, 1.0);
        assert_eq!(recs[1].y, -2.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let plant = PlantSpec::Cruise(CruisePlantSpec::default());
        let u = gen_input(&InputGenSpec::default(), &mut rng_stream(4, 0), 200);
        let recs = plant.simulate(&u, &mut rng_stream(4, 1)).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &recs).unwrap();
        assert!(buf.starts_with(b"t,u,y\n"));
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }
}
