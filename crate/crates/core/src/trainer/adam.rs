//! Adam optimizer over named parameter tensors.

use indexmap::IndexMap;
use ndarray::{ArrayD, Zip};

use crate::params::{GradSet, ParamSet};

/// Adam with bias correction and no weight decay. Moment buffers are
/// keyed by parameter name and created lazily on the first step that
/// touches a tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: IndexMap<String, ArrayD<f64>>,
    v: IndexMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update. Only tensors present in `grads` move; anything
    /// else (in particular, anything outside the trainable `ParamSet`)
    /// is untouched by construction.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads.iter() {
            let p = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter {name:?}"));
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            *m *= self.beta1;
            m.scaled_add(1.0 - self.beta1, g);

            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let one_minus_b2 = 1.0 - self.beta2;
            let beta2 = self.beta2;
            Zip::from(&mut *v)
                .and(g)
                .for_each(|v, &g| *v = beta2 * *v + one_minus_b2 * g * g);

            let (lr, eps) = (self.lr, self.eps);
            let m = &self.m[name];
            let v = &self.v[name];
            Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::ArrayD;

    fn scalar_param(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", ArrayD::from_elem(vec![1], value));
        p
    }

    fn grad_for(params: &ParamSet, g: f64) -> GradSet {
        let mut grads = GradSet::zeros_like(params);
        grads.accumulate("w", ArrayD::from_elem(vec![1], g).view());
        grads
    }

    /// Two steps recomputed by hand with the update equations inlined.
    #[test]
    fn matches_hand_computed_updates() {
        let mut params = scalar_param(0.0);
        let mut opt = Adam::new(0.1);
        let grads = grad_for(&params, 1.0);
        opt.step(&mut params, &grads);

        let m1: f64 = 0.1 * 1.0;
        let v1: f64 = 0.001 * 1.0;
        let p1 = -0.1 * (m1 / (1.0 - 0.9)) / ((v1 / (1.0 - 0.999)).sqrt() + 1e-8);
        assert_abs_diff_eq!(params.expect("w")[[0]], p1, epsilon = 1e-15);

        let grads = grad_for(&params, 2.0);
        opt.step(&mut params, &grads);
        let m2 = 0.9 * m1 + 0.1 * 2.0;
        let v2 = 0.999 * v1 + 0.001 * 4.0;
        let bc1 = 1.0 - 0.9f64.powi(2);
        let bc2 = 1.0 - 0.999f64.powi(2);
        let p2 = p1 - 0.1 * (m2 / bc1) / ((v2 / bc2).sqrt() + 1e-8);
        assert_abs_diff_eq!(params.expect("w")[[0]], p2, epsilon = 1e-15);
        assert_eq!(opt.step_count(), 2);
    }

    /// After bias correction the first step has magnitude ~lr regardless
    /// of the gradient scale (as long as |g| dwarfs the denominator eps).
    #[test]
    fn first_step_size_is_learning_rate() {
        for g in [0.1, 1.0, 3.0, 1e6] {
            let mut params = scalar_param(0.0);
            let mut opt = Adam::new(0.01);
            let grads = grad_for(&params, g);
            opt.step(&mut params, &grads);
            assert_abs_diff_eq!(params.expect("w")[[0]], -0.01, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter_fixed() {
        let mut params = scalar_param(1.5);
        let mut opt = Adam::new(0.5);
        for _ in 0..10 {
            let grads = grad_for(&params, 0.0);
            opt.step(&mut params, &grads);
        }
        assert_eq!(params.expect("w")[[0]], 1.5);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut params = scalar_param(-4.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..800 {
            let g = 2.0 * (params.expect("w")[[0]] - 3.0);
            let grads = grad_for(&params, g);
            opt.step(&mut params, &grads);
        }
        assert_abs_diff_eq!(params.expect("w")[[0]], 3.0, epsilon = 1e-3);
    }

    #[test]
    fn untouched_parameters_never_move() {
        let mut params = ParamSet::new();
        params.insert("w", ArrayD::from_elem(vec![1], 0.0));
        params.insert("frozen", ArrayD::from_elem(vec![2], 7.0));
        // gradients built for a set that only contains `w`
        let mut probe = ParamSet::new();
        probe.insert("w", ArrayD::from_elem(vec![1], 0.0));
        let mut grads = GradSet::zeros_like(&probe);
        grads.accumulate("w", ArrayD::from_elem(vec![1], 1.0).view());
        let mut opt = Adam::new(0.1);
        opt.step(&mut params, &grads);
        assert_eq!(params.expect("frozen")[[0]], 7.0);
        assert_ne!(params.expect("w")[[0]], 0.0);
    }
}
