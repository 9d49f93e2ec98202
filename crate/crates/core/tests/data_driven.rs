//! Cross-module checks: noise-free Hankel models reproduce their plant, and the
//! concentration quantities follow their depth and data-length trends.

use deep_hankel::concentration::{plant_gram_decomposition, singular_value_sweep};
use deep_hankel::linalg::{median, numeric_rank, singular_values_desc, RankTol};
use deep_hankel::lti::{fourth_order_benchmark, second_order_benchmark, tf_to_ss};
use deep_hankel::rollout::{rollout, RolloutState};
use deep_hankel::traj_lqr::{build_traj_model, design_servo, simulate_closed_loop, AlphaUpdate, ServoWeights};
use deep_hankel::{build_model, gaussian_signal, simulate, LtiSystem, NoiseSpec, Signal};

fn plants() -> Vec<LtiSystem> {
    vec![
        second_order_benchmark(),
        fourth_order_benchmark(),
        tf_to_ss(&[0.0, 0.5, -0.2], &[1.0, -1.1, 0.3], 1.0).unwrap(),
    ]
}

#[test]
fn noise_free_stacked_rank_is_depth_plus_order() {
    for plant in plants() {
        let u = gaussian_signal(300, 11).unwrap();
        let (y, _) = simulate(&plant, &u, None, NoiseSpec::none()).unwrap();
        for depth in [plant.order(), 6, 12] {
            let m = build_model(&u, &y, depth).unwrap().stacked();
            let sv = singular_values_desc(&m);
            let rank = numeric_rank(&sv, RankTol::Auto.resolve(m.nrows(), m.ncols()));
            assert_eq!(rank, depth + plant.order(), "n={} L={depth}", plant.order());
        }
    }
}

#[test]
fn noise_free_rollout_matches_simulation_for_random_inputs() {
    for plant in plants() {
        let depth = plant.order() + 3;
        let u = gaussian_signal(250, 1).unwrap();
        let (y, _) = simulate(&plant, &u, None, NoiseSpec::none()).unwrap();
        let model = build_model(&u, &y, depth).unwrap();
        for seed in [5, 6, 7] {
            let test_u = gaussian_signal(200, seed).unwrap();
            let (truth, _) = simulate(&plant, &test_u, None, NoiseSpec::none()).unwrap();
            let out = rollout(&model, &RolloutState::origin(depth), test_u.values(), RankTol::Auto).unwrap();
            let err = out.y_pred.iter().zip(truth.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "n={} seed={seed}: {err}", plant.order());
        }
    }
}

#[test]
fn rollout_and_trajectory_dynamics_agree() {
    let plant = fourth_order_benchmark();
    let depth = 7;
    let u = gaussian_signal(300, 2).unwrap();
    let (y, _) = simulate(&plant, &u, None, NoiseSpec::none()).unwrap();
    let model = build_model(&u, &y, depth).unwrap();
    let traj = build_traj_model(&model, RankTol::Auto, plant.order()).unwrap();
    let test_u = gaussian_signal(100, 3).unwrap();
    let out = rollout(&model, &RolloutState::origin(depth), test_u.values(), RankTol::Auto).unwrap();
    // alpha_k covers the window through step k, which ends with u_k
    let mut alpha = nalgebra::DVector::zeros(traj.width());
    alpha = traj.a_alpha() * &alpha + traj.b_alpha() * test_u[0];
    for k in 0..test_u.len() {
        assert!((traj.c_alpha().dot(&alpha) - out.y_pred[k]).abs() < 1e-6, "step {k}");
        if k + 1 < test_u.len() {
            alpha = traj.a_alpha() * &alpha + traj.b_alpha() * test_u[k + 1];
        }
    }
}

#[test]
fn servo_tracks_on_higher_order_plant() {
    let plant = fourth_order_benchmark();
    let u = gaussian_signal(400, 4).unwrap();
    let (y, _) = simulate(&plant, &u, None, NoiseSpec::none()).unwrap();
    let traj = build_traj_model(&build_model(&u, &y, 10).unwrap(), RankTol::Auto, 4).unwrap();
    let design = design_servo(&traj, ServoWeights::default()).unwrap();
    let reference: Vec<f64> = (0..600).map(|t| if t < 300 { 1.0 } else { -0.5 }).collect();
    let run = simulate_closed_loop(&plant, &traj, &design, &reference, NoiseSpec::none(), AlphaUpdate::Resolve).unwrap();
    assert!(!run.unstable);
    assert!((run.y[299] - 1.0).abs() < 1e-3);
    assert!((run.y[599] + 0.5).abs() < 1e-3);
}

#[test]
fn inverse_singular_value_stays_below_depth_scaling() {
    let rows = singular_value_sweep(8, &[1_000, 3_000, 10_000], 50, 0).unwrap();
    for row in &rows {
        assert!(row.median_inv_sigma < row.scale_bound, "N={}: {} vs {}", row.data_len, row.median_inv_sigma, row.scale_bound);
        assert!(row.q25_inv_sigma <= row.median_inv_sigma && row.median_inv_sigma <= row.q75_inv_sigma);
    }
    assert!(rows.windows(2).all(|w| w[1].median_inv_sigma < w[0].median_inv_sigma));
}

#[test]
fn deeper_hankel_tightens_bound_not_median() {
    let shallow = &singular_value_sweep(2, &[10_000], 50, 0).unwrap()[0];
    let deep = &singular_value_sweep(20, &[10_000], 50, 0).unwrap()[0];
    assert!(deep.scale_bound < shallow.scale_bound);
    assert!(shallow.median_inv_sigma < shallow.scale_bound);
    assert!(deep.median_inv_sigma < deep.scale_bound);
}

#[test]
fn clean_gram_eigenvalue_grows_with_data() {
    let plant = second_order_benchmark();
    let medians: Vec<f64> = [500, 5_000, 50_000]
        .iter()
        .map(|&n| {
            let lam: Vec<f64> = (0..20).map(|s| plant_gram_decomposition(&plant, 5, n, 0.1, s).unwrap().lambda_full).collect();
            median(&lam)
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[1] > w[0]), "{medians:?}");
}

#[test]
fn signal_start_index_survives_model_building() {
    let u = Signal::with_start(gaussian_signal(40, 1).unwrap().into_values(), 7).unwrap();
    let y = Signal::with_start(gaussian_signal(40, 2).unwrap().into_values(), 7).unwrap();
    let m = build_model(&u, &y, 4).unwrap();
    assert_eq!(m.width(), 40 - 4);
    assert_eq!(m.data_len(), 39);
}
