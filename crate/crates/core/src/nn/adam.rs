use super::array::NetParams;
use crate::error::Result;

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: NetParams,
    pub second_moment: NetParams,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &NetParams, learning_rate: f64) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut NetParams, grads: &NetParams) -> Result<()> {
        params.check_same_layout(grads)?;
        params.check_same_layout(&self.first_moment)?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads.entry(i).data();
            let m = self.first_moment.entry_mut(i).data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.second_moment.entry_mut(i).data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let m = self.first_moment.entry(i).data();
            let v = self.second_moment.entry(i).data();
            let p = params.entry_mut(i).data_mut();
            for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
                let m_hat = mi / correction1;
                let v_hat = vi / correction2;
                *pi -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::RealArray;

    fn scalar(v: f64) -> NetParams {
        let mut p = NetParams::new();
        p.push("p", RealArray::new(vec![1], vec![v]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut params = scalar(0.37);
        let mut state = AdamState::new(&params, 3e-4);
        state.step(&mut params, &scalar(0.0)).unwrap();
        assert_eq!(params, scalar(0.37));
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1, so p = 0 - 0.1 / (1 + 1e-8)
        let mut params = scalar(0.0);
        let mut state = AdamState::new(&params, 0.1);
        state.step(&mut params, &scalar(1.0)).unwrap();
        let p = params.entry(0).data()[0];
        assert!((p - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn repeated_updates_move_monotonically_against_gradient() {
        let mut params = scalar(1.0);
        let mut state = AdamState::new(&params, 0.05);
        let mut last = 1.0;
        for _ in 0..2 {
            state.step(&mut params, &scalar(2.0)).unwrap();
            let p = params.entry(0).data()[0];
            assert!(p < last);
            last = p;
        }
        assert_eq!(state.step_count, 2);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut params = scalar(0.0);
        let mut state = AdamState::new(&params, 0.1);
        let mut other = NetParams::new();
        other.push("q", RealArray::zeros(vec![1])).unwrap();
        assert!(state.step(&mut params, &other).is_err());
        assert_eq!(state.step_count, 0);
    }
}
