//! Output sensitivities against finite differences of the simulated trajectory.

use proptest::prelude::*;
use rand::Rng;
use rnnid::mlp::MlpSpec;
use rnnid::model::{Nonlinearity, Predictor, StructuredModelSpec};
use rnnid::plant::rng_stream;

/// Relative error with the scale floored at `floor`; central differences
/// lose about `1e-16·|ŷ|/h` to cancellation, so tiny entries need the floor.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn simulate_output(spec: &StructuredModelSpec, theta: &[f64], u: &[Vec<f64>]) -> f64 {
    let mut p = Predictor::new(spec.clone()).unwrap();
    let mut st = p.init_state();
    for ut in u {
        p.advance_state(&mut st, theta, ut).unwrap();
    }
    spec.c.iter().zip(&st.x_hat).map(|(c, x)| c * x).sum()
}

/// Largest relative error between ψ after `u.len()` steps and central differences of ŷ.
fn worst_output_error(spec: &StructuredModelSpec, theta: &[f64], u: &[Vec<f64>]) -> f64 {
    let mut p = Predictor::new(spec.clone()).unwrap();
    let mut st = p.init_state();
    for ut in u {
        p.advance(&mut st, theta, ut).unwrap();
    }
    let h = 1e-6;
    (0..theta.len())
        .map(|k| {
            let mut hi = theta.to_vec();
            let mut lo = theta.to_vec();
            hi[k] += h;
            lo[k] -= h;
            let fd = (simulate_output(spec, &hi, u) - simulate_output(spec, &lo, u)) / (2.0 * h);
            rel_err(fd, st.psi[k], 1e-4 * (1.0 + st.y_hat.abs()))
        })
        .fold(0.0, f64::max)
}

fn random_case(
    seed: u64,
    n: usize,
    width: usize,
    k: usize,
    steps: usize,
) -> (StructuredModelSpec, Vec<f64>, Vec<Vec<f64>>) {
    let mut rng = rng_stream(seed, 0);
    let f = Nonlinearity::Mlp(MlpSpec::new(n, k, width).unwrap());
    let mut spec = StructuredModelSpec::new(n, 0.1, f).unwrap();
    spec.c = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let theta = (0..spec.n_params()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let u = (0..steps).map(|_| (0..k).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect();
    (spec, theta, u)
}

#[test]
fn three_state_chain_with_two_inputs() {
    let (spec, theta, u) = random_case(9, 3, 6, 2, 60);
    let err = worst_output_error(&spec, &theta, &u);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn linear_top_derivative() {
    let spec = StructuredModelSpec::with_linear(2, 1, true, 0.5).unwrap();
    let theta = [-0.4, -0.2, 0.7, 0.1];
    let u: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.7).sin()]).collect();
    let err = worst_output_error(&spec, &theta, &u);
    assert!(err < 1e-6, "relative error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sensitivity_matches_finite_differences(seed in any::<u64>(), n in 1usize..=2, width in 1usize..=8, steps in 1usize..=50) {
        let (spec, theta, u) = random_case(seed, n, width, 1, steps);
        let err = worst_output_error(&spec, &theta, &u);
        prop_assert!(err < 1e-4, "relative error {}", err);
    }
}
