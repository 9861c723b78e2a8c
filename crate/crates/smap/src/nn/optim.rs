use crate::scalar::{s, Scalar};

use super::ParamMut;

/// ADAM with bias correction. Moment buffers are created lazily on the first
/// step and are keyed by parameter order, which must stay stable across steps.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
    skipped_nonfinite: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: T) -> Self {
        Self {
            learning_rate,
            beta1: s(0.9),
            beta2: s(0.999),
            eps: s(1e-8),
            step: 0,
            moments: Vec::new(),
            skipped_nonfinite: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Steps skipped because a gradient contained a non-finite value.
    pub fn skipped_steps(&self) -> u64 {
        self.skipped_nonfinite
    }

    /// Applies one update to every parameter. A non-finite gradient anywhere
    /// skips the whole step and counts the event.
    pub fn step(&mut self, mut params: Vec<ParamMut<'_, T>>) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![T::zero(); p.value.len()], vec![T::zero(); p.value.len()]))
                .collect();
        }
        assert_eq!(self.moments.len(), params.len(), "parameter layout changed");

        for p in &params {
            if p.grad.iter().any(|g| !g.is_finite()) {
                self.skipped_nonfinite += 1;
                return;
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let one = T::one();
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] = p.value[i] - self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Dense, Layer};
    use crate::nn::Sequential;

    fn one_param_net(init: &[f64]) -> Sequential<f64> {
        let mut d = Dense::new(init.len(), 1);
        // Use the weight vector as the optimized parameter set.
        d.w.copy_from_slice(init);
        Sequential::new(vec![Layer::Dense(d)])
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        let mut net = one_param_net(&[0.0, 0.0, 0.0]);
        let mut adam = Adam::new(0.01);
        {
            let mut params = net.params();
            params[0].grad.copy_from_slice(&[0.4, -3.0, 1e-3]);
        }
        let before: Vec<f64> = net.params()[0].value.clone();
        adam.step(net.params());
        let after: Vec<f64> = net.params()[0].value.clone();
        for (b, a) in before.iter().zip(after.iter()) {
            // Bias-corrected first step is lr * g / (|g| + eps') ~ +-lr.
            assert!(((a - b).abs() - 0.01).abs() < 1e-5, "step {}", a - b);
        }
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut net = one_param_net(&[1.0, -2.0]);
        let mut adam = Adam::new(0.1);
        adam.step(net.params());
        assert_eq!(net.params()[0].value.as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let mut net = one_param_net(&[1.0]);
        let mut adam = Adam::new(0.1);
        net.params()[0].grad[0] = f64::NAN;
        adam.step(net.params());
        assert_eq!(adam.skipped_steps(), 1);
        assert_eq!(adam.steps_taken(), 0);
        assert_eq!(net.params()[0].value[0], 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(x) = 0.5 || x - c ||^2, gradient x - c. The slow second-moment
        // window makes ADAM land softly on this bowl: 200 steps at lr 0.02
        // reach c = 1.6 from one side without ever crossing it.
        let c = [1.6];
        let mut net = one_param_net(&[0.0; 1]);
        let mut adam = Adam::new(0.02);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let loss: f64;
            {
                let mut params = net.params();
                let x = &params[0].value;
                loss = x.iter().zip(c.iter()).map(|(x, c)| 0.5 * (x - c).powi(2)).sum();
                let g: Vec<f64> = x.iter().zip(c.iter()).map(|(x, c)| x - c).collect();
                params[0].grad.copy_from_slice(&g);
            }
            losses.push(loss);
            adam.step(net.params());
            net.zero_grad();
        }
        for w in losses.windows(2).skip(10) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased after step 10: {w:?}");
        }
        let last = {
            let mut params = net.params();
            let x = &mut params[0].value;
            x.iter().zip(c.iter()).map(|(x, c)| 0.5 * (x - c).powi(2)).sum::<f64>()
        };
        assert!(last < 1e-3, "final loss {last}");
    }
}
