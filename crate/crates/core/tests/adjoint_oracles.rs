use ddnn::adjoint::{adjoint_rhs, backward_pass_with_trajectory, AdjointTrajectory, Side, GRADIENT_SIGN};
use ddnn::field::{Activation, MlpWeights};
use ddnn::*;

mod common;
use common::{axpy, heun_unroll_gradient, library_gradient, max_rel, node_field};

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn rel_norm(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b)
}

#[test]
fn node_limit_matches_heun_unroll_backprop() {
    let field = node_field(4);
    let (z0, y) = ([0.4, -0.3], [1.0, 0.5]);
    let h = 1e-3;
    let got = library_gradient(&field, &z0, &y, 2.0, h);
    let want = heun_unroll_gradient(&field, &z0, &y, 2.0, h);
    let err = max_rel(&got, &want);
    assert!(err < 1e-3, "max relative error {err}");
}

/// Classical NODE adjoint: `a = dL/dz`, `da/dt = -a^T f_z`,
/// `dL/dtheta = int a^T f_theta dt`, integrated backwards with RK4 on the
/// augmented state `[z, a, g_theta]`, re-solving `z` in reverse time.
fn node_adjoint_gradient(field: &DelayField, z_t: &[f64], g_t: &[f64], t_end: f64, n: usize) -> Vec<f64> {
    let d = z_t.len();
    let p = field.theta().len();
    let rhs = |s: &[f64]| -> Vec<f64> {
        let (z, a) = (&s[..d], &s[d..2 * d]);
        let (fz, cache) = field.eval(0.0, z, z).unwrap();
        let vjp = field.vjp(&cache, a).unwrap();
        let mut out = fz;
        out.extend(vjp.wrt_z.iter().map(|x| -x));
        out.extend(vjp.wrt_theta);
        out
    };
    let mut s: Vec<f64> = z_t.iter().chain(g_t).copied().chain(std::iter::repeat_n(0.0, p)).collect();
    let h = -t_end / n as f64;
    for _ in 0..n {
        let k1 = rhs(&s);
        let mut tmp = s.clone();
        axpy(&mut tmp, 0.5 * h, &k1);
        let k2 = rhs(&tmp);
        let mut tmp = s.clone();
        axpy(&mut tmp, 0.5 * h, &k2);
        let k3 = rhs(&tmp);
        let mut tmp = s.clone();
        axpy(&mut tmp, h, &k3);
        let k4 = rhs(&tmp);
        for i in 0..s.len() {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    // the integral runs from T down to 0, so the accumulated value is -int_0^T
    s[2 * d..].iter().map(|x| -x).collect()
}

#[test]
fn lambda_one_agrees_with_plain_node_adjoint() {
    let field = node_field(9);
    let (z0, y) = ([0.2, 0.1], [-0.5, 0.8]);
    let (t_end, h) = (1.0, 1e-4);
    let fwd = solve_dde_fixed(&field, History::constant(z0.to_vec()), 0.0, t_end, h, &[]).unwrap();
    let zt = fwd.last_state().to_vec();
    let g: Vec<f64> = zt.iter().zip(&y).map(|(a, b)| a - b).collect();
    let obs = ObservationSet::new(vec![t_end], vec![g.clone()], 0.0).unwrap();
    let got = backward_pass(&fwd, &field, &obs, &StepMode::Fixed { h }).unwrap().grad_theta;
    let want = node_adjoint_gradient(&field, &zt, &g, t_end, 2000);
    let err = rel_norm(&got, &want);
    assert!(err < 1e-6, "relative error {err}");
}

fn toy_forward(h: f64, times: &[f64]) -> (DelayField, Trajectory) {
    let spec = DelayFieldSpec::convex(2, 5, 0.75, 0.8);
    let field = DelayField::new(spec.clone(), init_params(&spec, 3)).unwrap();
    let fwd = solve_dde_fixed(&field, History::constant(vec![0.3, -0.1]), 0.0, 2.0, h, times).unwrap();
    (field, fwd)
}

#[test]
fn coincident_observations_add_up() {
    let times = [0.5, 1.25, 2.0];
    let (field, fwd) = toy_forward(0.05, &times);
    let g = vec![vec![0.3, -0.7], vec![1.1, 0.2], vec![-0.4, 0.9]];
    let whole = ObservationSet::new(times.to_vec(), g.clone(), 1.0).unwrap();
    let halve = |v: &Vec<f64>| v.iter().map(|x| 0.5 * x).collect::<Vec<_>>();
    let split = ObservationSet::new(
        vec![0.5, 1.25, 1.25, 2.0],
        vec![g[0].clone(), halve(&g[1]), halve(&g[1]), g[2].clone()],
        1.0,
    )
    .unwrap();
    for mode in [StepMode::Fixed { h: 0.05 }, StepMode::Adaptive(SolverConfig::default())] {
        let a = backward_pass(&fwd, &field, &whole, &mode).unwrap();
        let b = backward_pass(&fwd, &field, &split, &mode).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn zero_loss_gradients_give_zero_gradient_and_costate() {
    let times = [1.0, 2.0];
    let (field, fwd) = toy_forward(0.05, &times);
    let obs = ObservationSet::new(times.to_vec(), vec![vec![0.0; 2]; 2], 0.0).unwrap();
    let (adj, res) = backward_pass_with_trajectory(&fwd, &field, &obs, &StepMode::Fixed { h: 0.05 }).unwrap();
    assert!(res.grad_theta.iter().all(|&g| g == 0.0));
    for &t in adj.times() {
        assert!(adj.query(t, Side::Below).unwrap().iter().all(|&a| a == 0.0));
    }
}

#[test]
fn bias_only_field_gradient_is_exact() {
    // f = c, so z(t) = z0 + c t and dL/dc = sum_k g_k t_k exactly
    let spec = DelayFieldSpec::convex(2, 3, 0.5, 0.6);
    let mut theta = ParamVec::zeros(&spec);
    let l = spec.layout();
    theta.0[l.b2.clone()].copy_from_slice(&[0.4, -0.2]);
    let field = DelayField::new(spec, theta).unwrap();
    let times = [0.7, 1.3, 2.0];
    let fwd = solve_dde_fixed(&field, History::constant(vec![1.0, 1.0]), 0.0, 2.0, 0.1, &times).unwrap();
    let g = vec![vec![1.0, 2.0], vec![-0.5, 0.25], vec![3.0, -1.0]];
    let obs = ObservationSet::new(times.to_vec(), g.clone(), 0.0).unwrap();
    let (adj, res) = backward_pass_with_trajectory(&fwd, &field, &obs, &StepMode::Fixed { h: 0.1 }).unwrap();
    for j in 0..2 {
        let want: f64 = times.iter().zip(&g).map(|(t, gk)| t * gk[j]).sum();
        assert!((res.grad_theta[l.b2.start + j] - want).abs() < 1e-12);
    }
    // the costate is constant between jumps: -(g_2 + g_3) on (0.7, 1.3)
    let mid = adj.query(1.0, Side::Below).unwrap();
    assert!((mid[0] + 2.5).abs() < 1e-12 && (mid[1] - 0.75).abs() < 1e-12);
}

#[test]
fn scalar_linear_field_has_analytic_adjoint_rhs() {
    // f = w2 * (w1 * z) with identity activation and lambda = 1
    let mut spec = DelayFieldSpec::convex(1, 1, 1.0, 0.5);
    spec.activation = Activation::Identity;
    let (w1, w2) = (0.8, -1.5);
    let w = MlpWeights {
        w1: vec![w1],
        b1: vec![0.0],
        w2: vec![w2],
        b2: vec![0.0],
    };
    let field = DelayField::new(spec.clone(), ParamVec::pack(&spec, &w).unwrap()).unwrap();
    let fwd = solve_dde_fixed(&field, History::constant(vec![1.0]), 0.0, 1.0, 0.01, &[]).unwrap();
    let adj = AdjointTrajectory::new(1, 1.0);
    for t in [0.6, 0.77, 1.0] {
        let alpha = 0.6;
        let got = adjoint_rhs(t, &[alpha], &adj, &fwd, &field).unwrap()[0];
        assert!((got + alpha * w1 * w2).abs() < 1e-15);
    }
    // closed-form costate alpha(t) = alpha(T) exp(w (T - t)) with w = w1 w2
    let obs = ObservationSet::new(vec![1.0], vec![vec![-1.0]], 0.0).unwrap();
    let (adj, _) = backward_pass_with_trajectory(&fwd, &field, &obs, &StepMode::Fixed { h: 1e-3 }).unwrap();
    let want = (w1 * w2 * 1.0f64).exp();
    let got = adj.query(0.0, Side::Below).unwrap()[0];
    assert!((got - want).abs() < 1e-6 * want.abs(), "{got} vs {want}");
}

#[test]
fn advanced_term_vanishes_within_one_delay_of_the_end() {
    let (field, fwd) = toy_forward(0.05, &[]);
    let spec = field.spec().clone();
    let t_end = fwd.last_time();
    let alpha = [0.7, -0.4];
    // a non-zero recorded costate: the padding rule must still zero the advanced term
    let mut adj = AdjointTrajectory::new(2, t_end);
    adj.record(t_end, &alpha, &alpha).unwrap();
    for t in [t_end - 0.5 * spec.tau, t_end - 0.01] {
        let got = adjoint_rhs(t, &alpha, &adj, &fwd, &field).unwrap();
        let z = fwd.interpolate(t).unwrap();
        let v = fwd.interpolate(t - spec.tau).unwrap();
        let (_, cache) = field.eval(t, &z, &v).unwrap();
        let local = field.vjp(&cache, &alpha).unwrap().wrt_z;
        for (g, l) in got.iter().zip(&local) {
            assert!((g + l).abs() < 1e-14);
        }
    }
}

#[test]
fn gradient_sign_is_negative() {
    assert_eq!(GRADIENT_SIGN, -1.0);
}
