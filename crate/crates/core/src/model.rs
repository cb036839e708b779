//! Model interfaces.
//!
//! A [`Model`] is a parametric one-step map for input-output dynamics,
//!
//! ```text
//! y_t = M(y_{t-1}, ..., y_{t-n}, u_t, ..., u_{t-n}, theta)
//! ```
//!
//! together with its local Jacobians — partial derivatives with respect to the
//! direct arguments only, never through time. Window arguments are passed
//! newest-first: `lagged[k-1]` holds `y_{t-k}` and `inputs[j]` holds `u_{t-j}`.
//!
//! Models may alternatively (or additionally) define an implicit residual
//! `r(y_s, ..., y_{s-n}, u_s, ..., u_{s-n}, theta)` that vanishes along valid
//! trajectories; the default residual of an explicit model is
//! `y_s - M(...)`. Implicit models (the magnetic-levitation gray box) override
//! the residual directly and need not have an identity diagonal block.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::Result;

/// Parametric one-step dynamic map with hand-derived local Jacobians.
pub trait Model: Send + Sync {
    /// Dynamical order n (number of output lags).
    fn order(&self) -> usize;
    /// Output width p.
    fn n_outputs(&self) -> usize;
    /// Input width q.
    fn n_inputs(&self) -> usize;
    /// Parameter count.
    fn n_params(&self) -> usize;

    /// Evaluate y_t into `out` (length p). `lagged` has n entries (newest
    /// first), `inputs` has n+1 entries (newest first).
    fn evaluate(&self, lagged: &[&[f64]], inputs: &[&[f64]], theta: &[f64], out: &mut [f64]);

    /// Exact partial derivatives of the map at the given window.
    fn local_jacobians(
        &self,
        lagged: &[&[f64]],
        inputs: &[&[f64]],
        theta: &[f64],
        out: &mut LocalJacobians,
    );

    /// Constraint residual over a full window: `outputs[j] = y_{s-j}` for
    /// j = 0..=n, `inputs[j] = u_{s-j}`. Explicit models use
    /// `r = y_s - M(y_{s-1}, ..., u_s, ..., theta)`.
    fn residual(&self, outputs: &[&[f64]], inputs: &[&[f64]], theta: &[f64], out: &mut [f64]) {
        self.evaluate(&outputs[1..], inputs, theta, out);
        for (o, y) in out.iter_mut().zip(outputs[0]) {
            *o = y - *o;
        }
    }

    /// Partial derivatives of the residual with respect to every window entry
    /// and theta.
    fn residual_jacobians(
        &self,
        outputs: &[&[f64]],
        inputs: &[&[f64]],
        theta: &[f64],
        out: &mut ResidualJacobians,
    ) {
        let p = self.n_outputs();
        let mut local = LocalJacobians::new(self.order(), p, self.n_inputs(), self.n_params());
        self.local_jacobians(&outputs[1..], inputs, theta, &mut local);
        out.wrt_outputs[0] = DMatrix::identity(p, p);
        for k in 1..=self.order() {
            out.wrt_outputs[k] = -&local.wrt_lagged[k - 1];
        }
        for j in 0..=self.order() {
            out.wrt_inputs[j] = -&local.wrt_inputs[j];
        }
        out.wrt_theta = -&local.wrt_theta;
    }

    /// Whether the residual's derivative with respect to the newest output is
    /// the identity block (true for explicit-output models).
    fn has_identity_diagonal(&self) -> bool {
        true
    }

    /// Model-specific parameter initialization; `None` falls back to the
    /// solver default (0.1-scaled standard normal).
    fn init_theta(&self, _rng: &mut dyn rand::RngCore) -> Option<Vec<f64>> {
        None
    }
}

/// Jacobians of the explicit map M.
#[derive(Clone, Debug)]
pub struct LocalJacobians {
    /// `wrt_lagged[k-1]` is the p x p block dM/dy_{t-k}.
    pub wrt_lagged: Vec<DMatrix<f64>>,
    /// `wrt_inputs[j]` is the p x q block dM/du_{t-j}.
    pub wrt_inputs: Vec<DMatrix<f64>>,
    /// p x n_theta block dM/dtheta.
    pub wrt_theta: DMatrix<f64>,
}

impl LocalJacobians {
    pub fn new(order: usize, p: usize, q: usize, n_theta: usize) -> Self {
        LocalJacobians {
            wrt_lagged: (0..order).map(|_| DMatrix::zeros(p, p)).collect(),
            wrt_inputs: (0..=order).map(|_| DMatrix::zeros(p, q)).collect(),
            wrt_theta: DMatrix::zeros(p, n_theta),
        }
    }

    pub fn for_model(model: &dyn Model) -> Self {
        Self::new(model.order(), model.n_outputs(), model.n_inputs(), model.n_params())
    }
}

/// Jacobians of the residual form.
#[derive(Clone, Debug)]
pub struct ResidualJacobians {
    /// `wrt_outputs[j]` is the p x p block dr/dy_{s-j} (j = 0 is the newest).
    pub wrt_outputs: Vec<DMatrix<f64>>,
    /// `wrt_inputs[j]` is the p x q block dr/du_{s-j}.
    pub wrt_inputs: Vec<DMatrix<f64>>,
    /// p x n_theta block dr/dtheta.
    pub wrt_theta: DMatrix<f64>,
}

impl ResidualJacobians {
    pub fn new(order: usize, p: usize, q: usize, n_theta: usize) -> Self {
        ResidualJacobians {
            wrt_outputs: (0..=order).map(|_| DMatrix::zeros(p, p)).collect(),
            wrt_inputs: (0..=order).map(|_| DMatrix::zeros(p, q)).collect(),
            wrt_theta: DMatrix::zeros(p, n_theta),
        }
    }

    pub fn for_model(model: &dyn Model) -> Self {
        Self::new(model.order(), model.n_outputs(), model.n_inputs(), model.n_params())
    }
}

/// State-space model split into state map M1 and output map M2.
pub trait StateSpaceModel: Send + Sync {
    fn n_state(&self) -> usize;
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn n_params(&self) -> usize;

    /// x_{t+1} = M1(x_t, u_t, theta), written into `out` (length n_state).
    fn state_map(&self, state: &[f64], input: &[f64], theta: &[f64], out: &mut [f64]);
    /// y_t = M2(x_t, u_t, theta), written into `out` (length p).
    fn output_map(&self, state: &[f64], input: &[f64], theta: &[f64], out: &mut [f64]);

    /// dM1/dx (n_state x n_state) and dM1/dtheta (n_state x n_theta).
    fn state_jacobians(
        &self,
        state: &[f64],
        input: &[f64],
        theta: &[f64],
        wrt_state: &mut DMatrix<f64>,
        wrt_theta: &mut DMatrix<f64>,
    );
    /// dM2/dx (p x n_state) and dM2/dtheta (p x n_theta).
    fn output_jacobians(
        &self,
        state: &[f64],
        input: &[f64],
        theta: &[f64],
        wrt_state: &mut DMatrix<f64>,
        wrt_theta: &mut DMatrix<f64>,
    );
}

/// Draw the solver's default parameter initialization: 0.1-scaled standard
/// normal, unless the model supplies its own scheme.
pub fn draw_theta_init<R: Rng>(model: &dyn Model, rng: &mut R) -> Vec<f64> {
    if let Some(theta) = model.init_theta(rng) {
        return theta;
    }
    use rand_distr::{Distribution, StandardNormal};
    (0..model.n_params())
        .map(|_| 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

pub(crate) fn check_window_shapes(model: &dyn Model, lagged: &[&[f64]], inputs: &[&[f64]], theta: &[f64]) -> Result<()> {
    use crate::error::Error;
    if lagged.len() != model.order()
        || inputs.len() != model.order() + 1
        || theta.len() != model.n_params()
        || lagged.iter().any(|l| l.len() != model.n_outputs())
        || inputs.iter().any(|u| u.len() != model.n_inputs())
    {
        return Err(Error::Dimension(format!(
            "window shapes do not match model (n={}, p={}, q={}, n_theta={})",
            model.order(),
            model.n_outputs(),
            model.n_inputs(),
            model.n_params()
        )));
    }
    Ok(())
}
