mod common;

use admm_nnmpc::numerics::{fd_jacobian, FdSpec};
use admm_nnmpc::predictor::{
    estimate_constants, rollout, Activation, ConstantVelocity, InteractiveParams, InteractivePredictor, Mlp,
    MlpPredictor, Predictor, SampleRegion, SoftClamp,
};
use admm_nnmpc::sim::ScenarioConfig;
use common::history;
use nalgebra::DVector;
use proptest::prelude::*;

fn builtin_predictor() -> Box<dyn Predictor> {
    ScenarioConfig::builtin("two_lane").unwrap().predictor.build().unwrap()
}

proptest! {
    #[test]
    fn soft_clamp_is_bounded_and_monotone(a in -1e3f64..1e3, b in -1e3f64..1e3) {
        let c = SoftClamp::new(15.0, 5.0);
        let (va, da) = c.eval(a);
        let (vb, _) = c.eval(b);
        prop_assert!(va.abs() <= 15.0);
        prop_assert!(da >= 0.0 && da <= 1.0);
        if a < b {
            prop_assert!(va <= vb);
        }
    }

    #[test]
    fn interactive_outputs_respect_declared_bounds(
        ego in (-50.0f64..300.0, -3.0f64..12.0),
        others in prop::collection::vec((-50.0f64..300.0, -3.0f64..12.0), 1..5),
        speed in 0.0f64..30.0,
    ) {
        let pred = builtin_predictor();
        let (s_x, s_y) = pred.output_bounds();
        let vehicles: Vec<[f64; 2]> = others.iter().map(|&(x, y)| [x, y]).collect();
        let speeds = vec![speed; vehicles.len() + 1];
        let buf = history([ego.0, ego.1], &vehicles, &speeds, pred.history_depth(), 0.25);
        for p in pred.predict_one(&buf).unwrap().positions {
            prop_assert!(p[0].abs() <= s_x && p[1].abs() <= s_y);
        }
    }
}

#[test]
fn constant_velocity_extrapolates() {
    let cv = ConstantVelocity::new(0.25, 300.0, 15.0).unwrap();
    let buf = history([0.0, 0.0], &[[10.0, 3.7]], &[8.0, 6.0], 2, 0.25);
    let out = cv.predict_one(&buf).unwrap().positions;
    assert!((out[0][0] - 11.5).abs() < 1e-12);
    assert!((out[0][1] - 3.7).abs() < 1e-12);
    assert!(!cv.is_interactive());
}

#[test]
fn constant_velocity_rollout_ignores_the_ego_plan() {
    let cv = ConstantVelocity::new(0.25, 300.0, 15.0).unwrap();
    let buf = history([0.0, 0.0], &[[10.0, 3.7]], &[8.0, 6.0], 2, 0.25);
    let z = DVector::from_fn(16, |i, _| i as f64 * 0.3);
    let r = rollout(&cv, &buf, &z, 4).unwrap();
    assert_eq!(r.jacobian.amax(), 0.0);
    assert!((r.positions[3][0][0] - 16.0).abs() < 1e-9);
}

#[test]
fn interactive_rollout_jacobian_matches_finite_differences() {
    let pred = builtin_predictor();
    let buf = history([0.0, 1.0], &[[-2.0, 3.7], [4.0, 3.7]], &[8.0, 8.0, 8.0], 2, 0.25);
    let z = DVector::from_fn(16, |i, _| {
        let t = (i / 4 + 1) as f64;
        [2.0 * t, 1.0 + 0.5 * t, 0.2, 8.0][i % 4]
    });
    let r = rollout(pred.as_ref(), &buf, &z, 4).unwrap();
    let spec = FdSpec { h: 1e-6, rtol: 1e-5, atol: 1e-7 };
    let fd = fd_jacobian(
        |x| {
            let r = rollout(pred.as_ref(), &buf, x, 4)?;
            Ok(DVector::from_iterator(r.jacobian.nrows(), r.positions.iter().flatten().flatten().copied()))
        },
        &z,
        &spec,
    )
    .unwrap();
    assert!(spec.worst_ratio(&r.jacobian, &fd) <= 1.0);
    assert!(r.jacobian.amax() > 0.0);
}

#[test]
fn yielding_depends_on_the_longitudinal_offset() {
    let buf = history([0.0, 2.5], &[[1.0, 3.7]], &[8.0, 8.0], 2, 0.25);
    let x_after = |offset: f64| {
        let p = InteractivePredictor::new(InteractiveParams { lon_offset: offset, ..InteractiveParams::default() }).unwrap();
        p.predict_one(&buf).unwrap().positions[0][0]
    };
    // a vehicle slightly ahead of the ego yields more once the gate is shifted
    assert!(x_after(3.0) < x_after(0.0));
}

#[test]
fn mlp_round_trips_and_infers_its_shape() {
    let net = Mlp::random(&[12, 16, 4], Activation::Gelu, 0.3, 9).unwrap();
    let back = Mlp::from_bytes(&net.to_binary()).unwrap();
    assert_eq!(back.sizes(), vec![12, 16, 4]);
    let x = DVector::from_fn(12, |i, _| i as f64 * 0.1);
    assert_eq!(net.forward(&x, false).0, back.forward(&x, false).0);
    let text = Mlp::from_bytes(net.to_text().as_bytes()).unwrap();
    assert!((text.forward(&x, false).0 - net.forward(&x, false).0).amax() < 1e-12);

    let pred = MlpPredictor::new(net, 300.0, 15.0).unwrap();
    assert_eq!(pred.history_depth(), 2);
}

#[test]
fn mlp_jacobian_matches_finite_differences() {
    let net = Mlp::random(&[6, 8, 8, 3], Activation::Softplus, 0.5, 3).unwrap();
    let x = DVector::from_vec(vec![0.1, -0.4, 0.3, 0.9, -1.2, 0.05]);
    let (_, jac) = net.forward(&x, true);
    let spec = FdSpec { h: 1e-6, rtol: 1e-6, atol: 1e-8 };
    let fd = fd_jacobian(|v| Ok(net.forward(v, false).0), &x, &spec).unwrap();
    assert!(spec.worst_ratio(&jac.unwrap(), &fd) <= 1.0);
}

#[test]
fn malformed_weights_are_rejected() {
    assert!(Mlp::from_bytes(b"NNMPCMLP\x01").is_err());
    let net = Mlp::random(&[5, 4, 3], Activation::Tanh, 0.3, 1).unwrap();
    assert!(MlpPredictor::new(net, 300.0, 15.0).is_err());
}

#[test]
fn constant_estimation_needs_enough_samples() {
    let pred = builtin_predictor();
    let region = SampleRegion::around_merge(4, 8, 0.25);
    assert!(estimate_constants(pred.as_ref(), &region, 50, 0).is_err());
    let c = estimate_constants(pred.as_ref(), &region, 100, 0).unwrap();
    assert!(c.theta_x > 0.0 && c.l_grad_phi > 0.0);
    assert_eq!((c.s_x, c.s_y), pred.output_bounds());
}
