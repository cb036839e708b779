//! Assembly of the constrained simulation-error problem.
//!
//! The decision vector stacks the parameters first, then the trajectory:
//!
//! ```text
//! output-error:        x = [theta | y_1 ... y_N]
//! errors-in-variables: x = [theta | u_1 ... u_N | y_1 ... y_N]
//! state-space:         x = [theta | x_1 ... x_N]
//! ```
//!
//! The theta-first ordering is load-bearing: the FLOP analysis of the sparse
//! factorization assumes the dense columns lead. One scalar equality
//! constraint is produced per output channel per constrained time step, in
//! time order, so the trajectory part of the Jacobian is block lower
//! triangular with invertible (identity, for explicit-output models) diagonal
//! blocks.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, ResidualJacobians, StateSpaceModel};
use crate::series::Series;
use crate::sim::simulate_free_run;
use crate::sparse::{OePattern, SparseJacobian};
use crate::weighting::Weighting;

/// Which constrained formulation the instance carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    OutputError,
    ErrorsInVariables,
    StateSpace,
}

#[derive(Clone)]
enum ProblemModel {
    Nio(Arc<dyn Model>),
    Ss(Arc<dyn StateSpaceModel>),
}

/// Index arithmetic for the flat decision vector.
#[derive(Clone, Copy, Debug)]
pub struct VariableLayout {
    pub variant: Variant,
    pub n_theta: usize,
    pub n_data: usize,
    /// Output width p (state width for the state-space variant).
    pub block_width: usize,
    pub n_inputs: usize,
    /// Dynamical order (1 for the state-space variant).
    pub order: usize,
    pub n_vars: usize,
    pub n_constraints: usize,
}

impl VariableLayout {
    pub fn theta_range(&self) -> std::ops::Range<usize> {
        0..self.n_theta
    }

    /// Offset of trajectory sample t (output block for NIO variants, state
    /// block for the state-space variant).
    pub fn traj_offset(&self, t: usize) -> usize {
        match self.variant {
            Variant::OutputError | Variant::StateSpace => self.n_theta + t * self.block_width,
            Variant::ErrorsInVariables => {
                self.n_theta + self.n_inputs * self.n_data + t * self.block_width
            }
        }
    }

    /// Offset of input sample t; only meaningful for errors-in-variables.
    pub fn input_offset(&self, t: usize) -> usize {
        debug_assert_eq!(self.variant, Variant::ErrorsInVariables);
        self.n_theta + t * self.n_inputs
    }

    /// Number of constraint blocks (p or n_state scalar rows each).
    pub fn n_blocks(&self) -> usize {
        self.n_constraints / self.block_width
    }

    /// Length of the [theta, initial trajectory] prefix that parameterizes
    /// the constraint manifold; the remaining suffix is eliminated by the
    /// constraints.
    pub fn reduced_len(&self) -> usize {
        match self.variant {
            Variant::OutputError => self.n_theta + self.block_width * self.order,
            Variant::ErrorsInVariables => {
                self.n_theta + self.n_inputs * self.n_data + self.block_width * self.order
            }
            Variant::StateSpace => self.n_theta + self.block_width,
        }
    }
}

/// An assembled constrained simulation-error problem.
#[derive(Clone)]
pub struct ProblemInstance {
    model: ProblemModel,
    pub dataset: Dataset,
    pub weighting: Weighting,
    pub layout: VariableLayout,
    /// Optional uniform scale applied to every constraint row (residual and
    /// Jacobian). Rescales the multipliers only.
    constraint_scale: Option<f64>,
}

impl ProblemInstance {
    /// Assemble the output-error or errors-in-variables problem for an
    /// input-output model.
    pub fn assemble(
        model: Arc<dyn Model>,
        dataset: Dataset,
        weighting: Weighting,
        variant: Variant,
    ) -> Result<Self> {
        assert!(variant != Variant::StateSpace, "use assemble_ss for state-space problems");
        let n = model.order();
        let big_n = dataset.len();
        if big_n <= n {
            return Err(Error::InsufficientData { n: big_n, order: n });
        }
        if dataset.n_outputs() != model.n_outputs() || dataset.n_inputs() != model.n_inputs() {
            return Err(Error::Dimension("dataset widths do not match model".into()));
        }
        let p = model.n_outputs();
        let q = model.n_inputs();
        let n_theta = model.n_params();
        let m = p * (big_n - n);
        let n_vars = match variant {
            Variant::OutputError => n_theta + p * big_n,
            Variant::ErrorsInVariables => n_theta + q * big_n + p * big_n,
            Variant::StateSpace => unreachable!(),
        };
        let layout = VariableLayout {
            variant,
            n_theta,
            n_data: big_n,
            block_width: p,
            n_inputs: q,
            order: n,
            n_vars,
            n_constraints: m,
        };
        debug_assert!(m < n_vars);
        Ok(ProblemInstance {
            model: ProblemModel::Nio(model),
            dataset,
            weighting,
            layout,
            constraint_scale: None,
        })
    }

    /// Assemble the state-space problem.
    pub fn assemble_ss(
        model: Arc<dyn StateSpaceModel>,
        dataset: Dataset,
        weighting: Weighting,
    ) -> Result<Self> {
        let big_n = dataset.len();
        if big_n < 2 {
            return Err(Error::InsufficientData { n: big_n, order: 1 });
        }
        if dataset.n_outputs() != model.n_outputs() || dataset.n_inputs() != model.n_inputs() {
            return Err(Error::Dimension("dataset widths do not match model".into()));
        }
        let ns = model.n_state();
        let n_theta = model.n_params();
        let layout = VariableLayout {
            variant: Variant::StateSpace,
            n_theta,
            n_data: big_n,
            block_width: ns,
            n_inputs: model.n_inputs(),
            order: 1,
            n_vars: n_theta + ns * big_n,
            n_constraints: ns * (big_n - 1),
        };
        Ok(ProblemInstance {
            model: ProblemModel::Ss(model),
            dataset,
            weighting,
            layout,
            constraint_scale: None,
        })
    }

    /// Divide every constraint row by `scale` (conditioning aid for residuals
    /// with large physical units).
    pub fn with_constraint_scale(mut self, scale: f64) -> Self {
        assert!(scale > 0.0 && scale.is_finite());
        self.constraint_scale = Some(scale);
        self
    }

    pub fn n_vars(&self) -> usize {
        self.layout.n_vars
    }

    pub fn n_constraints(&self) -> usize {
        self.layout.n_constraints
    }

    pub fn nio_model(&self) -> Option<&Arc<dyn Model>> {
        match &self.model {
            ProblemModel::Nio(m) => Some(m),
            ProblemModel::Ss(_) => None,
        }
    }

    /// Initial decision vector: trajectory warm-started at the measurements
    /// (inputs at the measured inputs, states at zero), parameters as given.
    pub fn initial_point(&self, theta: &[f64]) -> Vec<f64> {
        assert_eq!(theta.len(), self.layout.n_theta);
        let mut x = vec![0.0; self.layout.n_vars];
        x[..theta.len()].copy_from_slice(theta);
        match self.layout.variant {
            Variant::OutputError => {
                x[self.layout.n_theta..].copy_from_slice(self.dataset.outputs.flat());
            }
            Variant::ErrorsInVariables => {
                let nu = self.layout.n_inputs * self.layout.n_data;
                x[self.layout.n_theta..self.layout.n_theta + nu]
                    .copy_from_slice(self.dataset.inputs.flat());
                x[self.layout.n_theta + nu..].copy_from_slice(self.dataset.outputs.flat());
            }
            Variant::StateSpace => {}
        }
        x
    }

    pub fn theta_of<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[..self.layout.n_theta]
    }

    /// Trajectory block of the decision vector as a series.
    pub fn trajectory_of(&self, x: &[f64]) -> Series {
        let off = self.layout.traj_offset(0);
        let w = self.layout.block_width;
        Series::from_flat(x[off..off + w * self.layout.n_data].to_vec(), w).expect("layout")
    }

    /// Input block (errors-in-variables only).
    pub fn inputs_of(&self, x: &[f64]) -> Series {
        match self.layout.variant {
            Variant::ErrorsInVariables => {
                let off = self.layout.input_offset(0);
                let q = self.layout.n_inputs;
                Series::from_flat(x[off..off + q * self.layout.n_data].to_vec(), q).expect("layout")
            }
            _ => self.dataset.inputs.clone(),
        }
    }

    /// Cost and its exact gradient.
    pub fn cost_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(x.len(), self.layout.n_vars);
        let lay = &self.layout;
        let mut grad = vec![0.0; lay.n_vars];
        let theta = self.theta_of(x);
        let mut cost = self.weighting.ridge(theta);
        self.weighting.ridge_grad_into(theta, &mut grad[..lay.n_theta]);
        match &self.model {
            ProblemModel::Nio(_) => {
                let p = lay.block_width;
                let mut diff = vec![0.0; p];
                for t in 0..lay.n_data {
                    let off = lay.traj_offset(t);
                    let y = &x[off..off + p];
                    let meas = self.dataset.outputs.sample(t);
                    for i in 0..p {
                        diff[i] = y[i] - meas[i];
                    }
                    cost += self.weighting.y_quad(&diff);
                    self.weighting.y_grad_into(&diff, &mut grad[off..off + p]);
                }
                if lay.variant == Variant::ErrorsInVariables {
                    let q = lay.n_inputs;
                    let mut du = vec![0.0; q];
                    for t in 0..lay.n_data {
                        let off = lay.input_offset(t);
                        let u = &x[off..off + q];
                        let meas = self.dataset.inputs.sample(t);
                        for i in 0..q {
                            du[i] = u[i] - meas[i];
                        }
                        cost += self.weighting.u_quad(&du);
                        self.weighting.u_grad_into(&du, &mut grad[off..off + q]);
                    }
                }
            }
            ProblemModel::Ss(model) => {
                let ns = lay.block_width;
                let p = model.n_outputs();
                let mut yhat = vec![0.0; p];
                let mut diff = vec![0.0; p];
                let mut wy = vec![0.0; p];
                let mut m2x = DMatrix::zeros(p, ns);
                let mut m2t = DMatrix::zeros(p, lay.n_theta);
                for t in 0..lay.n_data {
                    let off = lay.traj_offset(t);
                    let state = &x[off..off + ns];
                    let input = self.dataset.inputs.sample(t);
                    model.output_map(state, input, theta, &mut yhat);
                    let meas = self.dataset.outputs.sample(t);
                    for i in 0..p {
                        diff[i] = yhat[i] - meas[i];
                    }
                    cost += self.weighting.y_quad(&diff);
                    wy.iter_mut().for_each(|v| *v = 0.0);
                    self.weighting.y_grad_into(&diff, &mut wy);
                    model.output_jacobians(state, input, theta, &mut m2x, &mut m2t);
                    for c in 0..ns {
                        let mut acc = 0.0;
                        for i in 0..p {
                            acc += m2x[(i, c)] * wy[i];
                        }
                        grad[off + c] += acc;
                    }
                    for c in 0..lay.n_theta {
                        let mut acc = 0.0;
                        for i in 0..p {
                            acc += m2t[(i, c)] * wy[i];
                        }
                        grad[c] += acc;
                    }
                }
            }
        }
        (cost, grad)
    }

    /// Constraint residuals in time order, evaluated on the trajectory values
    /// stored in `x` (never on the measured data).
    pub fn constraint_residual(&self, x: &[f64]) -> Vec<f64> {
        let lay = &self.layout;
        let mut h = vec![0.0; lay.n_constraints];
        match &self.model {
            ProblemModel::Nio(model) => {
                let n = lay.order;
                let p = lay.block_width;
                let theta = self.theta_of(x);
                for b in 0..lay.n_blocks() {
                    let s = b + n; // newest sample index in the window
                    let outputs: Vec<&[f64]> = (0..=n)
                        .map(|j| {
                            let off = lay.traj_offset(s - j);
                            &x[off..off + p]
                        })
                        .collect();
                    let inputs = self.input_windows(x, s);
                    let inputs_ref: Vec<&[f64]> = inputs.iter().map(|v| &v[..]).collect();
                    model.residual(&outputs, &inputs_ref, theta, &mut h[b * p..(b + 1) * p]);
                }
            }
            ProblemModel::Ss(model) => {
                let ns = lay.block_width;
                let theta = self.theta_of(x);
                let mut pred = vec![0.0; ns];
                for b in 0..lay.n_blocks() {
                    let off_b = lay.traj_offset(b);
                    let off_n = lay.traj_offset(b + 1);
                    model.state_map(
                        &x[off_b..off_b + ns],
                        self.dataset.inputs.sample(b),
                        theta,
                        &mut pred,
                    );
                    for i in 0..ns {
                        h[b * ns + i] = x[off_n + i] - pred[i];
                    }
                }
            }
        }
        if let Some(s) = self.constraint_scale {
            for v in &mut h {
                *v /= s;
            }
        }
        h
    }

    /// Sparse constraint Jacobian at `x`; rows in constraint order.
    pub fn constraint_jacobian(&self, x: &[f64]) -> SparseJacobian {
        let lay = &self.layout;
        let mut jac = SparseJacobian::new(lay.n_constraints, lay.n_vars, lay.n_theta);
        match &self.model {
            ProblemModel::Nio(model) => {
                let n = lay.order;
                let p = lay.block_width;
                let q = lay.n_inputs;
                let theta = self.theta_of(x);
                let mut rj = ResidualJacobians::for_model(model.as_ref());
                for b in 0..lay.n_blocks() {
                    let s = b + n;
                    let outputs: Vec<&[f64]> = (0..=n)
                        .map(|j| {
                            let off = lay.traj_offset(s - j);
                            &x[off..off + p]
                        })
                        .collect();
                    let inputs = self.input_windows(x, s);
                    let inputs_ref: Vec<&[f64]> = inputs.iter().map(|v| &v[..]).collect();
                    model.residual_jacobians(&outputs, &inputs_ref, theta, &mut rj);
                    for r in 0..p {
                        let row = b * p + r;
                        for c in 0..lay.n_theta {
                            jac.theta_row_mut(row)[c] = rj.wrt_theta[(r, c)];
                        }
                        if lay.variant == Variant::ErrorsInVariables {
                            // input band: oldest window entry first
                            let mut vals = Vec::with_capacity(q * (n + 1));
                            for j in (0..=n).rev() {
                                for c in 0..q {
                                    vals.push(rj.wrt_inputs[j][(r, c)]);
                                }
                            }
                            jac.push_segment(row, lay.input_offset(s - n), vals);
                        }
                        let mut vals = Vec::with_capacity(p * (n + 1));
                        for j in (0..=n).rev() {
                            for c in 0..p {
                                vals.push(rj.wrt_outputs[j][(r, c)]);
                            }
                        }
                        jac.push_segment(row, lay.traj_offset(s - n), vals);
                    }
                }
            }
            ProblemModel::Ss(model) => {
                let ns = lay.block_width;
                let theta = self.theta_of(x);
                let mut m1x = DMatrix::zeros(ns, ns);
                let mut m1t = DMatrix::zeros(ns, lay.n_theta);
                for b in 0..lay.n_blocks() {
                    let off_b = lay.traj_offset(b);
                    model.state_jacobians(
                        &x[off_b..off_b + ns],
                        self.dataset.inputs.sample(b),
                        theta,
                        &mut m1x,
                        &mut m1t,
                    );
                    for r in 0..ns {
                        let row = b * ns + r;
                        for c in 0..lay.n_theta {
                            jac.theta_row_mut(row)[c] = -m1t[(r, c)];
                        }
                        let mut vals = Vec::with_capacity(2 * ns);
                        for c in 0..ns {
                            vals.push(-m1x[(r, c)]);
                        }
                        for c in 0..ns {
                            vals.push(if c == r { 1.0 } else { 0.0 });
                        }
                        jac.push_segment(row, off_b, vals);
                    }
                }
            }
        }
        if let Some(s) = self.constraint_scale {
            for r in 0..lay.n_constraints {
                jac.scale_row(r, 1.0 / s);
            }
        }
        if lay.variant == Variant::OutputError {
            jac.set_pattern(OePattern {
                n_theta: lay.n_theta,
                p: lay.block_width,
                phi: lay.order,
                n_data: lay.n_data,
            });
        }
        jac
    }

    fn input_windows(&self, x: &[f64], s: usize) -> Vec<Vec<f64>> {
        let lay = &self.layout;
        let n = lay.order;
        (0..=n)
            .map(|j| match lay.variant {
                Variant::ErrorsInVariables => {
                    let off = lay.input_offset(s - j);
                    x[off..off + lay.n_inputs].to_vec()
                }
                _ => self.dataset.inputs.sample(s - j).to_vec(),
            })
            .collect()
    }

    /// Lagrange multipliers from the stationarity of the eliminated
    /// trajectory block: solves the block upper-triangular system
    /// `J_w' lambda = -grad_w f` by backward substitution over time blocks.
    pub fn recover_multipliers(&self, x: &[f64]) -> Vec<f64> {
        let jac = self.constraint_jacobian(x);
        let (_, grad) = self.cost_and_gradient(x);
        self.recover_multipliers_with(&jac, &grad)
    }

    /// As [`recover_multipliers`](Self::recover_multipliers) with a
    /// preassembled Jacobian and cost gradient.
    pub fn recover_multipliers_with(&self, jac: &SparseJacobian, grad: &[f64]) -> Vec<f64> {
        let lay = &self.layout;
        let w = lay.block_width;
        let blocks = lay.n_blocks();
        let order = lay.order;
        let identity_diag = match &self.model {
            ProblemModel::Nio(m) => m.has_identity_diagonal() && self.constraint_scale.is_none(),
            ProblemModel::Ss(_) => self.constraint_scale.is_none(),
        };
        let mut lambda = vec![0.0; lay.n_constraints];
        let mut rhs = vec![0.0; w];
        for b in (0..blocks).rev() {
            // w-block b corresponds to trajectory sample order + b
            let goff = lay.traj_offset(lay.order + b);
            for i in 0..w {
                rhs[i] = -grad[goff + i];
            }
            for a in b + 1..=(b + order).min(blocks - 1) {
                // block d h_a / d traj_{order+b} sits at window position order-(a-b)
                let blk = self.band_block(jac, a, order - (a - b));
                for c in 0..w {
                    let mut acc = 0.0;
                    for r in 0..w {
                        acc += blk[(r, c)] * lambda[a * w + r];
                    }
                    rhs[c] -= acc;
                }
            }
            if identity_diag {
                lambda[b * w..(b + 1) * w].copy_from_slice(&rhs);
            } else {
                let diag = self.band_block(jac, b, order);
                let sol = diag
                    .transpose()
                    .lu()
                    .solve(&nalgebra::DVector::from_column_slice(&rhs))
                    .expect("diagonal constraint block is invertible by construction");
                lambda[b * w..(b + 1) * w].copy_from_slice(sol.as_slice());
            }
        }
        lambda
    }

    /// p x p (or n_state x n_state) sub-block of the trajectory band of
    /// constraint block `a` at window position `pos` (0 = oldest).
    fn band_block(&self, jac: &SparseJacobian, a: usize, pos: usize) -> DMatrix<f64> {
        let w = self.layout.block_width;
        let mut out = DMatrix::zeros(w, w);
        for r in 0..w {
            let segs = jac.segments(a * w + r);
            let (_, vals) = segs.last().expect("trajectory band present");
            for c in 0..w {
                out[(r, c)] = vals[pos * w + c];
            }
        }
        out
    }

    /// Gradient of the eliminated (unconstrained) objective over the
    /// [theta, initial trajectory] prefix, computed as grad_z f + J_z' lambda.
    /// `feas_tol` bounds the constraint infinity norm beyond which the result
    /// is flagged stale.
    pub fn reduced_gradient(&self, x: &[f64], feas_tol: f64) -> ReducedGradient {
        let jac = self.constraint_jacobian(x);
        let (_, grad) = self.cost_and_gradient(x);
        let lambda = self.recover_multipliers_with(&jac, &grad);
        let h = self.constraint_residual(x);
        let infeasibility = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut ledger = crate::sparse::FlopLedger::new();
        let jtl = jac.matvec_t(&lambda, &mut ledger);
        let zlen = self.layout.reduced_len();
        let values: Vec<f64> = (0..zlen).map(|i| grad[i] + jtl[i]).collect();
        ReducedGradient {
            values,
            infeasibility,
            stale: infeasibility > feas_tol,
        }
    }

    /// Whether the trajectory block of `x` equals the free-run rollout of the
    /// stored parameters from the leading trajectory samples (the constraint
    /// feasibility characterization, checked elementwise).
    pub fn is_feasible_rollout(&self, x: &[f64], tol: f64) -> bool {
        match &self.model {
            ProblemModel::Nio(model) => {
                let traj = self.trajectory_of(x);
                let init = traj.head(self.layout.order);
                let inputs = self.inputs_of(x);
                match simulate_free_run(model.as_ref(), self.theta_of(x), &init, &inputs) {
                    Ok(sim) => traj
                        .flat()
                        .iter()
                        .zip(sim.flat())
                        .all(|(a, b)| (a - b).abs() <= tol),
                    Err(_) => false,
                }
            }
            ProblemModel::Ss(model) => {
                let lay = &self.layout;
                let ns = lay.block_width;
                let theta = self.theta_of(x);
                let mut state = x[lay.traj_offset(0)..lay.traj_offset(0) + ns].to_vec();
                let mut next = vec![0.0; ns];
                for t in 1..lay.n_data {
                    model.state_map(&state, self.dataset.inputs.sample(t - 1), theta, &mut next);
                    let off = lay.traj_offset(t);
                    if !next
                        .iter()
                        .zip(&x[off..off + ns])
                        .all(|(a, b)| (a - b).abs() <= tol)
                    {
                        return false;
                    }
                    state.copy_from_slice(&next);
                }
                true
            }
        }
    }
}

/// Reduced gradient with a staleness flag for infeasible evaluation points.
#[derive(Clone, Debug)]
pub struct ReducedGradient {
    pub values: Vec<f64>,
    pub infeasibility: f64,
    /// Set when the evaluation point violates the supplied feasibility bound;
    /// the values then only approximate the eliminated-objective gradient.
    pub stale: bool,
}

impl ReducedGradient {
    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LtiFirstOrder, Maglev, MAGLEV_K0_TRUE, MAGLEV_KM_TRUE};

    fn lti_dataset(n: usize) -> Dataset {
        let theta = [0.5, 1.0];
        let mut u = vec![0.0; n];
        for (i, v) in u.iter_mut().enumerate() {
            *v = ((i * 37 + 11) % 17) as f64 / 17.0 - 0.5;
        }
        let y = simulate_free_run(
            &LtiFirstOrder,
            &theta,
            &Series::from_scalars(&[0.0]),
            &Series::from_scalars(&u),
        )
        .unwrap();
        Dataset::new(Series::from_scalars(&u), y, 1.0).unwrap()
    }

    #[test]
    fn layout_counts_for_lti_output_error() {
        let ds = lti_dataset(20);
        let prob = ProblemInstance::assemble(
            Arc::new(LtiFirstOrder),
            ds,
            Weighting::identity(1, 1),
            Variant::OutputError,
        )
        .unwrap();
        assert_eq!(prob.n_vars(), 22);
        assert_eq!(prob.n_constraints(), 19);
    }

    #[test]
    fn layout_counts_for_maglev() {
        let n = 200;
        let z = vec![0.02; n];
        let i = vec![0.67; n];
        let ds = Dataset::new(Series::from_scalars(&i), Series::from_scalars(&z), 0.01).unwrap();
        let prob = ProblemInstance::assemble(
            Arc::new(Maglev::default()),
            ds,
            Weighting::identity(1, 1),
            Variant::OutputError,
        )
        .unwrap();
        assert_eq!(prob.n_vars(), 202);
        assert_eq!(prob.n_constraints(), 198);
    }

    #[test]
    fn cost_zero_at_measurements_without_ridge() {
        let ds = lti_dataset(12);
        let prob = ProblemInstance::assemble(
            Arc::new(LtiFirstOrder),
            ds,
            Weighting::identity(1, 1),
            Variant::OutputError,
        )
        .unwrap();
        let x = prob.initial_point(&[0.3, 0.7]);
        let (cost, grad) = prob.cost_and_gradient(&x);
        assert_eq!(cost, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn cost_single_deviation_quadratic() {
        let ds = lti_dataset(12);
        let prob = ProblemInstance::assemble(
            Arc::new(LtiFirstOrder),
            ds,
            Weighting::identity(1, 1),
            Variant::OutputError,
        )
        .unwrap();
        let mut x = prob.initial_point(&[0.3, 0.7]);
        let delta = 0.37;
        let off = prob.layout.traj_offset(5);
        x[off] += delta;
        let (cost, grad) = prob.cost_and_gradient(&x);
        assert!((cost - delta * delta).abs() < 1e-14);
        assert!((grad[off] - 2.0 * delta).abs() < 1e-14);
    }

    #[test]
    fn residual_zero_on_free_run_trajectory() {
        let ds = lti_dataset(15);
        let prob = ProblemInstance::assemble(
            Arc::new(LtiFirstOrder),
            ds.clone(),
            Weighting::identity(1, 1),
            Variant::OutputError,
        )
        .unwrap();
        // the dataset itself is a rollout at theta = (0.5, 1.0)
        let x = prob.initial_point(&[0.5, 1.0]);
        let h = prob.constraint_residual(&x);
        assert!(h.iter().all(|v| v.abs() < 1e-14));
        assert!(prob.is_feasible_rollout(&x, 1e-12));
    }

    #[test]
    fn residual_perturbation_structure() {
        let ds = lti_dataset(15);
        let prob = ProblemInstance::assemble(
            Arc::new(LtiFirstOrder),
            ds,
            Weighting::identity(1, 1),
            Variant::OutputError,
        )
        .unwrap();
        let theta1 = 0.5;
        let mut x = prob.initial_point(&[theta1, 1.0]);
        let eps = 1e-3;
        // perturb the second output sample (0-based index 1)
        x[prob.layout.traj_offset(1)] += eps;
        let h = prob.constraint_residual(&x);
        assert!((h[0] - eps).abs() < 1e-12);
        assert!((h[1] + theta1 * eps).abs() < 1e-12);
        assert!(h[2..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn lti_jacobian_rows_carry_expected_entries() {
        let ds = lti_dataset(10);
        let prob = ProblemInstance::assemble(
            Arc::new(LtiFirstOrder),
            ds.clone(),
            Weighting::identity(1, 1),
            Variant::OutputError,
        )
        .unwrap();
        let x = prob.initial_point(&[0.5, 1.0]);
        let jac = prob.constraint_jacobian(&x);
        // row t: dtheta = [-y_t, -u_t], band [-theta1, 1] at columns of (y_t, y_{t+1})
        for b in 0..prob.layout.n_blocks() {
            let y_t = x[prob.layout.traj_offset(b)];
            let u_t = ds.inputs.sample(b)[0];
            assert!((jac.theta_row(b)[0] + y_t).abs() < 1e-14);
            assert!((jac.theta_row(b)[1] + u_t).abs() < 1e-14);
            assert!((jac.get(b, prob.layout.traj_offset(b)) + 0.5).abs() < 1e-14);
            assert!((jac.get(b, prob.layout.traj_offset(b + 1)) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn multipliers_satisfy_adjoint_system() {
        let ds = lti_dataset(14);
        let prob = ProblemInstance::assemble(
            Arc::new(LtiFirstOrder),
            ds,
            Weighting::identity(1, 1).with_ridge(1e-3),
            Variant::OutputError,
        )
        .unwrap();
        let mut x = prob.initial_point(&[0.4, 0.9]);
        // randomish perturbation
        for (i, v) in x.iter_mut().enumerate() {
            *v += ((i * 13 % 7) as f64 - 3.0) * 0.01;
        }
        let jac = prob.constraint_jacobian(&x);
        let (_, grad) = prob.cost_and_gradient(&x);
        let lambda = prob.recover_multipliers_with(&jac, &grad);
        // J_w' lambda + grad_w f = 0
        let mut ledger = crate::sparse::FlopLedger::new();
        let jtl = jac.matvec_t(&lambda, &mut ledger);
        for i in prob.layout.reduced_len()..prob.n_vars() {
            assert!((jtl[i] + grad[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn multipliers_zero_at_exact_fit() {
        let ds = lti_dataset(12);
        let prob = ProblemInstance::assemble(
            Arc::new(LtiFirstOrder),
            ds,
            Weighting::identity(1, 1),
            Variant::OutputError,
        )
        .unwrap();
        let x = prob.initial_point(&[0.5, 1.0]);
        let lambda = prob.recover_multipliers(&x);
        assert!(lambda.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn lti_three_sample_multipliers_by_hand() {
        // N = 3: two constraints; backward solve gives lambda_2 = -g_{y3},
        // lambda_1 = -g_{y2} + theta1 * lambda_2.
        let theta = [0.5, 1.0];
        let u = Series::from_scalars(&[1.0, -1.0, 0.5]);
        let y = Series::from_scalars(&[0.1, 0.4, -0.2]);
        let ds = Dataset::new(u, y, 1.0).unwrap();
        let prob = ProblemInstance::assemble(
            Arc::new(LtiFirstOrder),
            ds.clone(),
            Weighting::identity(1, 1),
            Variant::OutputError,
        )
        .unwrap();
        let mut x = prob.initial_point(&theta);
        x[prob.layout.traj_offset(1)] = 0.9; // make it infeasible/generic
        x[prob.layout.traj_offset(2)] = -0.3;
        let (_, grad) = prob.cost_and_gradient(&x);
        let lambda = prob.recover_multipliers(&x);
        let g2 = grad[prob.layout.traj_offset(1)];
        let g3 = grad[prob.layout.traj_offset(2)];
        let lam2 = -g3;
        let lam1 = -g2 + theta[0] * lam2;
        assert!((lambda[1] - lam2).abs() < 1e-14);
        assert!((lambda[0] - lam1).abs() < 1e-14);
    }

    #[test]
    fn maglev_scaled_rows_rescale_multipliers_only() {
        let n = 40;
        let mg = Maglev::default();
        let istar = mg.equilibrium_current(0.02, MAGLEV_KM_TRUE, MAGLEV_K0_TRUE);
        let i = vec![istar; n];
        let z = vec![0.02; n];
        let ds = Dataset::new(Series::from_scalars(&i), Series::from_scalars(&z), 0.01).unwrap();
        let prob = ProblemInstance::assemble(
            Arc::new(mg),
            ds.clone(),
            Weighting::identity(1, 1),
            Variant::OutputError,
        )
        .unwrap();
        let scale = mg.mass / (mg.sample_period * mg.sample_period);
        let scaled = ProblemInstance::assemble(
            Arc::new(mg),
            ds,
            Weighting::identity(1, 1),
            Variant::OutputError,
        )
        .unwrap()
        .with_constraint_scale(scale);
        let mut x = prob.initial_point(&[1.5e-4, 1e-5]);
        for (k, v) in x.iter_mut().enumerate().skip(2) {
            *v += ((k % 5) as f64 - 2.0) * 1e-4;
        }
        let h = prob.constraint_residual(&x);
        let hs = scaled.constraint_residual(&x);
        for (a, b) in h.iter().zip(&hs) {
            assert!((a / scale - b).abs() < 1e-15);
        }
        // reduced gradient is scale-invariant
        let r1 = prob.reduced_gradient(&x, f64::INFINITY);
        let r2 = scaled.reduced_gradient(&x, f64::INFINITY);
        for (a, b) in r1.values.iter().zip(&r2.values) {
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    // Small parametric state-space model for layout and gradient tests.
    struct ToySs;

    impl StateSpaceModel for ToySs {
        fn n_state(&self) -> usize {
            3
        }
        fn n_inputs(&self) -> usize {
            1
        }
        fn n_outputs(&self) -> usize {
            1
        }
        fn n_params(&self) -> usize {
            5
        }
        fn state_map(&self, s: &[f64], u: &[f64], th: &[f64], out: &mut [f64]) {
            out[0] = th[0] * s[0] + th[1] * s[1] + th[2] * u[0];
            out[1] = th[3] * s[0] + 0.5 * s[2];
            out[2] = 0.2 * s[1];
        }
        fn output_map(&self, s: &[f64], _u: &[f64], th: &[f64], out: &mut [f64]) {
            out[0] = th[4] * s[0] + s[2];
        }
        fn state_jacobians(
            &self,
            s: &[f64],
            u: &[f64],
            th: &[f64],
            wx: &mut DMatrix<f64>,
            wt: &mut DMatrix<f64>,
        ) {
            wx.fill(0.0);
            wt.fill(0.0);
            wx[(0, 0)] = th[0];
            wx[(0, 1)] = th[1];
            wx[(1, 0)] = th[3];
            wx[(1, 2)] = 0.5;
            wx[(2, 1)] = 0.2;
            wt[(0, 0)] = s[0];
            wt[(0, 1)] = s[1];
            wt[(0, 2)] = u[0];
            wt[(1, 3)] = s[0];
        }
        fn output_jacobians(
            &self,
            s: &[f64],
            _u: &[f64],
            th: &[f64],
            wx: &mut DMatrix<f64>,
            wt: &mut DMatrix<f64>,
        ) {
            wx.fill(0.0);
            wt.fill(0.0);
            wx[(0, 0)] = th[4];
            wx[(0, 2)] = 1.0;
            wt[(0, 4)] = s[0];
        }
    }

    #[test]
    fn state_space_layout_counts() {
        let ds = Dataset::new(
            Series::from_scalars(&[0.0; 10]),
            Series::from_scalars(&[1.0; 10]),
            1.0,
        )
        .unwrap();
        let prob = ProblemInstance::assemble_ss(Arc::new(ToySs), ds, Weighting::identity(1, 1)).unwrap();
        assert_eq!(prob.n_vars(), 35);
        assert_eq!(prob.n_constraints(), 27);
    }

    #[test]
    fn state_space_gradient_matches_finite_differences() {
        let u: Vec<f64> = (0..8).map(|i| (i as f64 * 0.31).sin()).collect();
        let y: Vec<f64> = (0..8).map(|i| (i as f64 * 0.17).cos()).collect();
        let ds = Dataset::new(Series::from_scalars(&u), Series::from_scalars(&y), 1.0).unwrap();
        let prob = ProblemInstance::assemble_ss(
            Arc::new(ToySs),
            ds,
            Weighting::identity(1, 1).with_ridge(1e-2),
        )
        .unwrap();
        let mut x = prob.initial_point(&[0.3, -0.2, 0.8, 0.1, 0.6]);
        for (k, v) in x.iter_mut().enumerate() {
            *v += ((k * 7 % 11) as f64 - 5.0) * 0.03;
        }
        let (_, grad) = prob.cost_and_gradient(&x);
        let eps = 1e-6;
        for k in 0..prob.n_vars() {
            let mut xp = x.clone();
            xp[k] += eps;
            let (cp, _) = prob.cost_and_gradient(&xp);
            let mut xm = x.clone();
            xm[k] -= eps;
            let (cm, _) = prob.cost_and_gradient(&xm);
            let fd = (cp - cm) / (2.0 * eps);
            assert!(
                (grad[k] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "grad[{}] = {} vs fd {}",
                k,
                grad[k],
                fd
            );
        }
    }

    #[test]
    fn state_space_multipliers_satisfy_adjoint_system() {
        let u: Vec<f64> = (0..7).map(|i| (i as f64 * 0.5).sin()).collect();
        let y: Vec<f64> = (0..7).map(|i| 0.3 * i as f64).collect();
        let ds = Dataset::new(Series::from_scalars(&u), Series::from_scalars(&y), 1.0).unwrap();
        let prob = ProblemInstance::assemble_ss(Arc::new(ToySs), ds, Weighting::identity(1, 1)).unwrap();
        let mut x = prob.initial_point(&[0.3, -0.2, 0.8, 0.1, 0.6]);
        for (k, v) in x.iter_mut().enumerate() {
            *v += ((k * 3 % 5) as f64 - 2.0) * 0.05;
        }
        let jac = prob.constraint_jacobian(&x);
        let (_, grad) = prob.cost_and_gradient(&x);
        let lambda = prob.recover_multipliers_with(&jac, &grad);
        let mut ledger = crate::sparse::FlopLedger::new();
        let jtl = jac.matvec_t(&lambda, &mut ledger);
        for i in prob.layout.reduced_len()..prob.n_vars() {
            assert!((jtl[i] + grad[i]).abs() < 1e-10);
        }
    }
}
