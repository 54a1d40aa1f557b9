//! Adam optimizer with bias correction.
//!
//! The update follows the textbook form (explicit bias-corrected moments)
//! so trajectories can be checked step-for-step against an independent
//! scalar implementation of the published equations.

use super::tensor::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates per parameter tensor, plus the step
/// count.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed state for parameter tensors of the given sizes.
    pub fn new(sizes: &[usize], hyper: AdamHyper) -> Self {
        AdamState {
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
            hyper,
        }
    }

    /// One optimization step over all parameter tensors.
    ///
    /// `params[i]` and `grads[i]` must have the lengths the state was built
    /// with. A zero gradient leaves parameters unchanged (the moments decay
    /// but the update is exactly zero for zero moments).
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1 = T::from_f64(self.hyper.beta1);
        let b2 = T::from_f64(self.hyper.beta2);
        let one = T::one();
        let bias1 = T::from_f64(1.0 - self.hyper.beta1.powi(self.t as i32));
        let bias2 = T::from_f64(1.0 - self.hyper.beta2.powi(self.t as i32));
        let eps = T::from_f64(self.hyper.epsilon);
        let lr = T::from_f64(lr);

        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(p.len(), m.len());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent straight-line implementation of the published update for
    /// a single scalar, used as the trajectory oracle.
    fn reference_adam_trajectory(x0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999, 1e-8);
        let mut x = x0;
        let mut m = 0.0;
        let mut v = 0.0;
        let mut out = Vec::with_capacity(steps);
        for t in 1..=steps {
            let g = 2.0 * x; // gradient of x^2
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            x -= lr * m_hat / (v_hat.sqrt() + eps);
            out.push(x);
        }
        out
    }

    #[test]
    fn zero_gradient_is_a_no_op_on_parameters() {
        let mut state: AdamState<f64> = AdamState::new(&[3], AdamHyper::default());
        let mut params = vec![1.0, -2.0, 0.5];
        let zeros = vec![0.0; 3];
        state.step(&mut [&mut params], &[&zeros], 0.1);
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut state: AdamState<f64> = AdamState::new(&[1], AdamHyper::default());
        let mut x = vec![1.0];
        let g = vec![2.0];
        state.step(&mut [&mut x], &[&g], 0.1);
        // First bias-corrected step has magnitude ~lr regardless of gradient
        // scale.
        assert!((x[0] - 0.9).abs() < 1e-7, "x after one step: {}", x[0]);
    }

    #[test]
    fn quadratic_trajectory_matches_reference_per_step() {
        let lr = 0.1;
        let steps = 500;
        let reference = reference_adam_trajectory(1.0, lr, steps);

        let mut state: AdamState<f64> = AdamState::new(&[1], AdamHyper::default());
        let mut x = vec![1.0];
        for step in 0..steps {
            let g = vec![2.0 * x[0]];
            state.step(&mut [&mut x], &[&g], lr);
            assert!(
                (x[0] - reference[step]).abs() < 1e-9,
                "step {step}: {} vs reference {}",
                x[0],
                reference[step]
            );
        }
        assert!(x[0].abs() < 1e-3, "final x {}", x[0]);
    }
}
