//! Oracles shared by several test targets.

use ddnn::adjoint::relative_error;
use ddnn::*;

/// Largest componentwise relative error, with a floor of 1e-6 of the
/// largest reference component.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y, 1e-6 * scale))
        .fold(0.0, f64::max)
}

pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// A lambda = 1 field with non-zero biases.
pub fn node_field(seed: u64) -> DelayField {
    let spec = DelayFieldSpec::convex(2, 6, 1.0, 0.7);
    let mut theta = init_params(&spec, seed);
    let l = spec.layout();
    for (k, i) in l.b1.clone().enumerate() {
        theta.0[i] = 0.05 * (k as f64 - 2.0);
    }
    theta.0[l.b2.start] = 0.1;
    DelayField::new(spec, theta).unwrap()
}

fn f(field: &DelayField, z: &[f64]) -> Vec<f64> {
    field.eval(0.0, z, z).unwrap().0
}

/// Loss `0.5 |z(T) - y|^2` and the library gradient through a fixed-step forward solve.
pub fn library_gradient(field: &DelayField, z0: &[f64], y: &[f64], t_end: f64, h: f64) -> Vec<f64> {
    let fwd = solve_dde_fixed(field, History::constant(z0.to_vec()), 0.0, t_end, h, &[]).unwrap();
    let zt = fwd.last_state();
    let g: Vec<f64> = zt.iter().zip(y).map(|(a, b)| a - b).collect();
    let obs = ObservationSet::new(vec![t_end], vec![g], 0.0).unwrap();
    backward_pass(&fwd, field, &obs, &StepMode::Fixed { h }).unwrap().grad_theta
}

/// Reverse-mode differentiation through an independently coded Heun unroll.
pub fn heun_unroll_gradient(field: &DelayField, z0: &[f64], y: &[f64], t_end: f64, h: f64) -> Vec<f64> {
    let n = (t_end / h).round() as usize;
    let mut states = vec![z0.to_vec()];
    for _ in 0..n {
        let z = states.last().unwrap();
        let k1 = f(field, z);
        let mut zt = z.clone();
        axpy(&mut zt, h, &k1);
        let k2 = f(field, &zt);
        let mut next = z.clone();
        axpy(&mut next, 0.5 * h, &k1);
        axpy(&mut next, 0.5 * h, &k2);
        states.push(next);
    }
    let mut gz: Vec<f64> = states[n].iter().zip(y).map(|(a, b)| a - b).collect();
    let mut g_theta = vec![0.0; field.theta().len()];
    for z in states[..n].iter().rev() {
        let (k1, c1) = field.eval(0.0, z, z).unwrap();
        let mut zt = z.clone();
        axpy(&mut zt, h, &k1);
        let (_, c2) = field.eval(0.0, &zt, &zt).unwrap();
        let a2: Vec<f64> = gz.iter().map(|g| 0.5 * h * g).collect();
        let v2 = field.vjp(&c2, &a2).unwrap();
        let g_zt = v2.wrt_z;
        let mut a1 = a2.clone();
        axpy(&mut a1, h, &g_zt);
        let v1 = field.vjp(&c1, &a1).unwrap();
        axpy(&mut g_theta, 1.0, &v2.wrt_theta);
        axpy(&mut g_theta, 1.0, &v1.wrt_theta);
        let mut prev = gz.clone();
        axpy(&mut prev, 1.0, &g_zt);
        axpy(&mut prev, 1.0, &v1.wrt_z);
        gz = prev;
    }
    g_theta
}
