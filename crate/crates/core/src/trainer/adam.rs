use crate::error::Result;
use crate::policy::PolicyParams;

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn step(&mut self, params: &mut PolicyParams, grads: &PolicyParams) -> Result<()> {
        params.check_shape(grads)?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .params_mut()
            .zip(grads.params())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (PolicyParams, Adam) {
        let p = PolicyParams::init(&mut ChaCha8Rng::seed_from_u64(0));
        let n = p.param_count();
        (p, Adam::new(n, 3e-4))
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut p, mut opt) = setup();
        let before = p.clone();
        let g = p.zeros_like();
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let (mut p, mut opt) = setup();
        let mut g = p.zeros_like();
        g.log_std = 1.0;
        opt.step(&mut p, &g).unwrap();
        let m0 = *opt.first_moment().last().unwrap();
        let z = p.zeros_like();
        opt.step(&mut p, &z).unwrap();
        assert!((opt.first_moment().last().unwrap() - 0.9 * m0).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let (mut p, mut opt) = setup();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.params_mut().enumerate().for_each(|(i, x)| *x = if i % 2 == 0 { 50.0 } else { -50.0 });
        opt.step(&mut p, &g).unwrap();
        for (i, (a, b)) in before.params().zip(p.params()).enumerate() {
            let expect = if i % 2 == 0 { -3e-4 } else { 3e-4 };
            let closed = -3e-4 * g.params().nth(i).unwrap() / (50.0 + 1e-8);
            assert!((b - a - closed).abs() < 1e-15);
            assert!((b - a - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_gradient_step_converges_to_lr() {
        let (mut p, mut opt) = setup();
        let mut g = p.zeros_like();
        g.log_std = 0.7;
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p.log_std;
            opt.step(&mut p, &g).unwrap();
            last = before - p.log_std;
        }
        assert!((last - 3e-4).abs() < 1e-9);
    }
}
