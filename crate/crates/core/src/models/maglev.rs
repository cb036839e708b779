//! Magnetic-levitation gray-box model.
//!
//! The Euler-discretized ball dynamics give the implicit residual
//!
//! ```text
//! h_t = m z_{t-2}^2 ((z_t - 2 z_{t-1} + z_{t-2}) / T_s^2 - g) + k_m i_{t-2}^2 + k_0
//! ```
//!
//! with theta = (k_m, k_0). The residual form avoids dividing by z^2 and is
//! exactly linear in theta at a fixed trajectory, which is what the
//! least-squares baseline exploits. Free-run simulation uses the residual
//! solved for z_t, which is well defined while z stays away from zero.

use crate::model::{LocalJacobians, Model, ResidualJacobians};

#[derive(Clone, Copy, Debug)]
pub struct Maglev {
    /// Ball mass in kilograms.
    pub mass: f64,
    /// Gravitational acceleration in m/s^2.
    pub gravity: f64,
    /// Sampling period in seconds.
    pub sample_period: f64,
}

impl Default for Maglev {
    fn default() -> Self {
        Maglev {
            mass: 24.197e-3,
            gravity: 9.81,
            sample_period: 10e-3,
        }
    }
}

/// True magnet constant used by the data generator, in H*m.
pub const MAGLEV_KM_TRUE: f64 = 2.1039e-4;
/// True offset constant used by the data generator, in N*m.
pub const MAGLEV_K0_TRUE: f64 = 0.0;

impl Model for Maglev {
    fn order(&self) -> usize {
        2
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

    /// Explicit rollout form: the residual solved for z_t.
    fn evaluate(&self, lagged: &[&[f64]], inputs: &[&[f64]], theta: &[f64], out: &mut [f64]) {
        let (km, k0) = (theta[0], theta[1]);
        let z1 = lagged[0][0]; // z_{t-1}
        let z2 = lagged[1][0]; // z_{t-2}
        let i2 = inputs[2][0]; // i_{t-2}
        let ts2 = self.sample_period * self.sample_period;
        out[0] = 2.0 * z1 - z2 + ts2 * (self.gravity - (km * i2 * i2 + k0) / (self.mass * z2 * z2));
    }

    fn local_jacobians(
        &self,
        lagged: &[&[f64]],
        inputs: &[&[f64]],
        theta: &[f64],
        out: &mut LocalJacobians,
    ) {
        let (km, k0) = (theta[0], theta[1]);
        let z2 = lagged[1][0];
        let i2 = inputs[2][0];
        let ts2 = self.sample_period * self.sample_period;
        let mz2 = self.mass * z2 * z2;
        out.wrt_lagged[0][(0, 0)] = 2.0;
        out.wrt_lagged[1][(0, 0)] = -1.0 + 2.0 * ts2 * (km * i2 * i2 + k0) / (self.mass * z2 * z2 * z2);
        out.wrt_inputs[0][(0, 0)] = 0.0;
        out.wrt_inputs[1][(0, 0)] = 0.0;
        out.wrt_inputs[2][(0, 0)] = -2.0 * ts2 * km * i2 / mz2;
        out.wrt_theta[(0, 0)] = -ts2 * i2 * i2 / mz2;
        out.wrt_theta[(0, 1)] = -ts2 / mz2;
    }

    fn residual(&self, outputs: &[&[f64]], inputs: &[&[f64]], theta: &[f64], out: &mut [f64]) {
        let (km, k0) = (theta[0], theta[1]);
        let z0 = outputs[0][0]; // z_t
        let z1 = outputs[1][0]; // z_{t-1}
        let z2 = outputs[2][0]; // z_{t-2}
        let i2 = inputs[2][0];
        let ts2 = self.sample_period * self.sample_period;
        out[0] = self.mass * z2 * z2 * ((z0 - 2.0 * z1 + z2) / ts2 - self.gravity)
            + km * i2 * i2
            + k0;
    }

    fn residual_jacobians(
        &self,
        outputs: &[&[f64]],
        inputs: &[&[f64]],
        _theta: &[f64],
        out: &mut ResidualJacobians,
    ) {
        let z0 = outputs[0][0];
        let z1 = outputs[1][0];
        let z2 = outputs[2][0];
        let i2 = inputs[2][0];
        let ts2 = self.sample_period * self.sample_period;
        let m = self.mass;
        out.wrt_outputs[0][(0, 0)] = m / ts2 * z2 * z2;
        out.wrt_outputs[1][(0, 0)] = -2.0 * m / ts2 * z2 * z2;
        out.wrt_outputs[2][(0, 0)] =
            m / ts2 * z2 * (2.0 * z0 - 4.0 * z1 + 3.0 * z2) - 2.0 * m * self.gravity * z2;
        out.wrt_inputs[0][(0, 0)] = 0.0;
        out.wrt_inputs[1][(0, 0)] = 0.0;
        out.wrt_inputs[2][(0, 0)] = 2.0 * _theta[0] * i2;
        out.wrt_theta[(0, 0)] = i2 * i2;
        out.wrt_theta[(0, 1)] = 1.0;
    }

    fn has_identity_diagonal(&self) -> bool {
        false
    }
}

impl Maglev {
    /// Coil current holding the ball at rest at distance `z_star` for the
    /// given magnet constants.
    pub fn equilibrium_current(&self, z_star: f64, km: f64, k0: f64) -> f64 {
        ((self.mass * self.gravity * z_star * z_star - k0) / km).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_vanishes_on_equilibrium_triple() {
        let m = Maglev::default();
        let z = 0.02;
        let i = m.equilibrium_current(z, MAGLEV_KM_TRUE, MAGLEV_K0_TRUE);
        let mut out = [0.0];
        m.residual(
            &[&[z], &[z], &[z]],
            &[&[i], &[i], &[i]],
            &[MAGLEV_KM_TRUE, MAGLEV_K0_TRUE],
            &mut out,
        );
        assert!(out[0].abs() < 1e-15);
        // evaluate must hold the equilibrium too
        let mut next = [0.0];
        m.evaluate(
            &[&[z], &[z]],
            &[&[i], &[i], &[i]],
            &[MAGLEV_KM_TRUE, MAGLEV_K0_TRUE],
            &mut next,
        );
        assert!((next[0] - z).abs() < 1e-12);
    }

    #[test]
    fn residual_is_linear_in_theta() {
        let m = Maglev::default();
        let win_y: Vec<&[f64]> = vec![&[0.021], &[0.0205], &[0.0198]];
        let win_u: Vec<&[f64]> = vec![&[0.6], &[0.65], &[0.7]];
        let eval = |theta: &[f64]| {
            let mut out = [0.0];
            m.residual(&win_y, &win_u, theta, &mut out);
            out[0]
        };
        let a = eval(&[1.0, 0.0]) - eval(&[0.0, 0.0]);
        let b = eval(&[0.0, 1.0]) - eval(&[0.0, 0.0]);
        let c = eval(&[0.0, 0.0]);
        let th = [3.7, -2.2];
        assert!((eval(&th) - (a * th[0] + b * th[1] + c)).abs() < 1e-12);
    }

    #[test]
    fn residual_partials_match_stated_forms() {
        let mg = Maglev::default();
        let (z0, z1, z2, i2) = (0.021, 0.0205, 0.0198, 0.66);
        let mut jac = crate::model::ResidualJacobians::for_model(&mg);
        mg.residual_jacobians(&[&[z0], &[z1], &[z2]], &[&[0.9], &[0.8], &[i2]], &[2e-4, 0.0], &mut jac);
        let ts2 = mg.sample_period * mg.sample_period;
        assert!((jac.wrt_theta[(0, 0)] - i2 * i2).abs() < 1e-15);
        assert!((jac.wrt_theta[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((jac.wrt_outputs[0][(0, 0)] - mg.mass / ts2 * z2 * z2).abs() < 1e-12);
        assert!((jac.wrt_outputs[1][(0, 0)] + 2.0 * mg.mass / ts2 * z2 * z2).abs() < 1e-12);
        let expect = mg.mass / ts2 * z2 * (2.0 * z0 - 4.0 * z1 + 3.0 * z2)
            - 2.0 * mg.mass * mg.gravity * z2;
        assert!((jac.wrt_outputs[2][(0, 0)] - expect).abs() < 1e-12);
    }
}
