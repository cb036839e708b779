//! First-order linear time-invariant model.

use crate::model::{LocalJacobians, Model};

/// `y_t = theta_1 * y_{t-1} + theta_2 * u_{t-1}` with n = 1, p = q = 1.
#[derive(Clone, Copy, Debug, Default)]
pub struct LtiFirstOrder;

impl Model for LtiFirstOrder {
    fn order(&self) -> usize {
        1
    }
    fn n_outputs(&self) -> usize {
        1
    }
    fn n_inputs(&self) -> usize {
        1
    }
    fn n_params(&self) -> usize {
        2
    }

    fn evaluate(&self, lagged: &[&[f64]], inputs: &[&[f64]], theta: &[f64], out: &mut [f64]) {
        // inputs[1] is u_{t-1}; the current input u_t does not enter.
        out[0] = theta[0] * lagged[0][0] + theta[1] * inputs[1][0];
    }

    fn local_jacobians(
        &self,
        lagged: &[&[f64]],
        inputs: &[&[f64]],
        theta: &[f64],
        out: &mut LocalJacobians,
    ) {
        out.wrt_lagged[0][(0, 0)] = theta[0];
        out.wrt_inputs[0][(0, 0)] = 0.0;
        out.wrt_inputs[1][(0, 0)] = theta[1];
        out.wrt_theta[(0, 0)] = lagged[0][0];
        out.wrt_theta[(0, 1)] = inputs[1][0];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_hand_case() {
        let m = LtiFirstOrder;
        let mut out = [0.0];
        m.evaluate(&[&[2.0]], &[&[9.0], &[3.0]], &[0.5, 1.0], &mut out);
        assert_eq!(out[0], 2.5);
    }

    #[test]
    fn jacobians_are_the_coefficients() {
        let m = LtiFirstOrder;
        let mut jac = LocalJacobians::for_model(&m);
        m.local_jacobians(&[&[2.0]], &[&[9.0], &[3.0]], &[0.5, 1.0], &mut jac);
        assert_eq!(jac.wrt_lagged[0][(0, 0)], 0.5);
        assert_eq!(jac.wrt_theta[(0, 0)], 2.0);
        assert_eq!(jac.wrt_theta[(0, 1)], 3.0);
        assert_eq!(jac.wrt_inputs[1][(0, 0)], 1.0);
    }
}
