use proptest::prelude::*;
use rand::Rng;
use rnnid::analysis::{cosine, estimate_frozen, lyapunov_derivative};
use rnnid::experiment::generate_data;
use rnnid::ident::{apply_safeguard, SafeguardSpec};
use rnnid::model::{ModelState, Predictor, StructuredModelSpec};
use rnnid::optim::{adam_step, normalized_sgd_step, AdamHyperParams, AdamState, GainSchedule, DEFAULT_DELTA_V};
use rnnid::plant::{cruise_step, gen_input, rng_stream, CruisePlantSpec, InputGenSpec, PlantSpec};

fn vec_in(len: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn output_gradient_is_measurement_row_times_psi(seed in any::<u64>(), n in 1usize..=3, steps in 1usize..40) {
        let mut rng = rng_stream(seed, 0);
        let mut spec = StructuredModelSpec::with_mlp(n, 1, 4, 0.1).unwrap();
        spec.c = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let theta: Vec<f64> = (0..spec.n_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut p = Predictor::new(spec.clone()).unwrap();
        let mut st = p.init_state();
        let d = spec.n_params();
        for _ in 0..steps {
            p.advance(&mut st, &theta, &[rng.gen_range(-1.0..1.0)]).unwrap();
            for k in 0..d {
                let expected: f64 = (0..n).map(|i| spec.c[i] * st.psi_mat[i * d + k]).sum();
                prop_assert_eq!(expected, st.psi[k]);
            }
            let y: f64 = (0..n).map(|i| spec.c[i] * st.x_hat[i]).sum();
            prop_assert_eq!(y, st.y_hat);
        }
    }

    #[test]
    fn safeguard_leaves_everything_within_bounds(
        theta in vec_in(5, 50.0),
        x in vec_in(2, 3e3),
        psi in vec_in(10, 3e6),
        m in vec_in(5, 1.0),
        v in prop::collection::vec(0.0..1.0f64, 5),
        poison in any::<bool>(),
    ) {
        let sg = SafeguardSpec::default();
        let mut theta = theta;
        let mut st = ModelState::zeros(2, 5);
        st.x_hat = x;
        if poison {
            st.x_hat[1] = f64::NAN;
        }
        st.psi_mat = psi;
        st.psi = st.psi_mat[..5].to_vec();
        st.y_hat = st.x_hat[0];
        let mut adam = AdamState { m: m.clone(), v: v.clone(), k: 3 };
        let out = apply_safeguard(&sg, &mut theta, &mut st, Some(&mut adam));
        prop_assert!(theta.iter().all(|t| t.abs() <= sg.theta_box));
        prop_assert!(sg.state_ok(&st));
        prop_assert_eq!(&adam.v, &v);
        if out.reset {
            prop_assert!(adam.m.iter().all(|x| *x == 0.0));
            prop_assert!(st.x_hat.iter().chain(&st.psi_mat).all(|x| *x == 0.0));
        } else {
            prop_assert_eq!(&adam.m, &m);
        }
    }

    #[test]
    fn adam_counter_and_second_moment(gs in prop::collection::vec(vec_in(3, 10.0), 1..30)) {
        let hp = AdamHyperParams::default();
        let mut st = AdamState::new(3);
        let mut theta = vec![0.0; 3];
        for (i, g) in gs.iter().enumerate() {
            adam_step(&hp, &mut st, &mut theta, g).unwrap();
            prop_assert_eq!(st.k, i as u64 + 1);
            prop_assert!(st.v.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn filtering_off_moves_each_component_by_alpha(g in vec_in(6, 10.0), alpha in 1e-5..1e-1f64) {
        let hp = AdamHyperParams::sign_sign(GainSchedule::Constant { alpha });
        let mut st = AdamState::new(6);
        st.k = 17;
        let mut theta = vec![0.0; 6];
        adam_step(&hp, &mut st, &mut theta, &g).unwrap();
        for (t, gi) in theta.iter().zip(&g) {
            if gi.abs() >= 1e-3 {
                prop_assert!((t + alpha * gi.signum()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unit_normalization_is_plain_gradient_step(g in vec_in(4, 10.0), alpha in 1e-4..1.0f64) {
        let mut theta = vec![1.0; 4];
        normalized_sgd_step(alpha, &mut theta, &g, &[1.0; 4], DEFAULT_DELTA_V).unwrap();
        for (t, gi) in theta.iter().zip(&g) {
            prop_assert_eq!(*t, 1.0 - alpha * gi);
        }
    }

    #[test]
    fn cruise_records_obey_bound(seed in any::<u64>(), offset in -3.0..3.0f64, x0 in 0.0..70.0f64) {
        let spec = CruisePlantSpec { initial_velocity: x0, ..CruisePlantSpec::default() };
        let input = InputGenSpec { offset, amplitude: 6.0, filter_pole: 0.98, u_max: 3.0 };
        let data = generate_data(&PlantSpec::Cruise(spec), &input, 3_000, seed).unwrap();
        let c = spec.record_bound();
        prop_assert!(data.iter().all(|r| r.norm() <= c));
    }

    #[test]
    fn noiseless_cruise_rises_monotonically(u in 0.05..3.0f64) {
        let spec = CruisePlantSpec { w_std: 0.0, meas_std: 0.0, ..CruisePlantSpec::default() };
        let eq = (u / spec.drag_coeff).sqrt();
        let mut rng = rng_stream(0, 0);
        let mut x = 0.0;
        for _ in 0..2_000 {
            let (next, _) = cruise_step(&spec, x, u, &mut rng).unwrap();
            prop_assert!(next >= x && next <= eq);
            x = next;
        }
    }

    #[test]
    fn inputs_stay_within_limit(seed in any::<u64>(), offset in -5.0..5.0f64, amplitude in 0.0..20.0f64, pole in 0.0..0.999f64) {
        let spec = InputGenSpec { offset, amplitude, filter_pole: pole, u_max: 3.0 };
        let u = gen_input(&spec, &mut rng_stream(seed, 0), 500);
        prop_assert!(u.iter().all(|v| v.abs() <= 3.0));
    }

    #[test]
    fn cosine_is_bounded_and_reflexive(a in vec_in(5, 10.0), b in vec_in(5, 10.0)) {
        if let Some(c) = cosine(&a, &b) {
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert_eq!(Some(c), cosine(&b, &a));
        }
        if let Some(c) = cosine(&a, &a) {
            prop_assert!((c - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lyapunov_derivatives_are_nonpositive(theta0 in -2.0..2.0f64, theta in -2.0..2.0f64, seed in any::<u64>()) {
        let model = StructuredModelSpec::with_linear(0, 1, false, 1.0).unwrap();
        let plant = PlantSpec::Model { model: model.clone(), theta: vec![theta0], noise_std: 0.1 };
        let input = InputGenSpec { offset: 0.0, amplitude: 1.0, filter_pole: 0.0, u_max: 1.0 };
        let data = generate_data(&plant, &input, 3_000, seed).unwrap();
        let est = estimate_frozen(&model, &[theta], &data, 3_000, 500, &AdamHyperParams::default()).unwrap();
        let lv = lyapunov_derivative(&est);
        prop_assert!(lv.dv_nsg <= 0.0 && lv.dv_ss <= 0.0);
        prop_assert_eq!(lv.dv_ss, -est.g_bar[0].abs());
    }
}
