//! Comparison methods: the unconstrained rollout gradient with an Adam
//! optimizer, and one-step prediction-error least squares for models whose
//! residual is linear in the parameters.
//!
//! The rollout gradient is computed by forward sensitivity propagation, which
//! produces the same values as reverse-mode backpropagation through time for
//! the full-batch loss while only carrying the last n sensitivity blocks.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{LocalJacobians, Model};
use crate::series::Series;
use crate::sparse::{qless_qr_dense, FlopLedger};
use crate::weighting::Weighting;

/// Value and gradient of the unconstrained simulation-error loss over
/// `zeta = [theta, y_init]`.
#[derive(Clone, Debug)]
pub struct RolloutGradient {
    pub loss: f64,
    /// Length n_theta + p * n: theta block first, then the initial outputs.
    pub grad: Vec<f64>,
    /// Frobenius norm of d y_t / d theta per time step.
    pub theta_sensitivity_norms: Vec<f64>,
}

/// Running sensitivity blocks of the rollout: d y_t / d zeta for the last n
/// time steps.
struct SensitivityState {
    /// Each entry is p x (n_theta + p*n).
    ring: VecDeque<DMatrix<f64>>,
}

/// Exact gradient of the simulation-error loss by forward sensitivity
/// propagation. `horizon` truncates the time dependence: contributions older
/// than `horizon` steps are dropped (None propagates in full).
pub fn bptt_gradient(
    model: &dyn Model,
    theta: &[f64],
    init_outputs: &Series,
    dataset: &Dataset,
    weighting: &Weighting,
    horizon: Option<usize>,
) -> Result<RolloutGradient> {
    let n = model.order();
    let p = model.n_outputs();
    let big_n = dataset.len();
    if init_outputs.len() != n || big_n <= n {
        return Err(Error::Dimension("init/record lengths do not fit the model".into()));
    }
    let nz = theta.len() + p * n;

    match horizon {
        None => rollout_gradient_full(model, theta, init_outputs, dataset, weighting),
        Some(hor) => {
            // Re-propagate a zero-initialized sensitivity over the last `hor`
            // steps for each time index; the trajectory itself is exact.
            // Anything older than `hor` steps is treated as a constant, so
            // the window [t - hor + 1, t] keeps exactly the direct
            // contributions at distance < hor.
            let full = rollout_gradient_full(model, theta, init_outputs, dataset, weighting)?;
            let y = crate::sim::simulate_free_run(model, theta, init_outputs, &dataset.inputs)?;
            let nt = theta.len();
            let mut grad = vec![0.0; nz];
            let mut diff = vec![0.0; p];
            let mut wdiff = vec![0.0; p];
            let mut local = LocalJacobians::for_model(model);
            weighting.ridge_grad_into(theta, &mut grad[..nt]);
            // samples t < n are init variables themselves
            for t in 0..n {
                for i in 0..p {
                    diff[i] = y.sample(t)[i] - dataset.outputs.sample(t)[i];
                }
                wdiff.iter_mut().for_each(|v| *v = 0.0);
                weighting.y_grad_into(&diff, &mut wdiff);
                for i in 0..p {
                    grad[nt + t * p + i] += wdiff[i];
                }
            }
            for t in n..big_n {
                let w0 = (t + 1).saturating_sub(hor).max(n);
                let mut ring: VecDeque<DMatrix<f64>> = (1..=n)
                    .map(|k| {
                        let mut s = DMatrix::zeros(p, nz);
                        // lag variable y_{w0 - k}: identity if it is an init
                        // variable still inside the window
                        if w0 >= k {
                            let idx = w0 - k;
                            if idx < n && idx + hor > t {
                                for i in 0..p {
                                    s[(i, nt + idx * p + i)] = 1.0;
                                }
                            }
                        }
                        s
                    })
                    .collect();
                let mut sens = DMatrix::zeros(p, nz);
                for s in w0..=t {
                    let lagged: Vec<&[f64]> = (1..=n).map(|k| y.sample(s - k)).collect();
                    let inputs: Vec<&[f64]> = (0..=n).map(|j| dataset.inputs.sample(s - j)).collect();
                    model.local_jacobians(&lagged, &inputs, theta, &mut local);
                    sens.fill(0.0);
                    sens.view_mut((0, 0), (p, nt)).copy_from(&local.wrt_theta);
                    for k in 1..=n {
                        sens += &local.wrt_lagged[k - 1] * &ring[k - 1];
                    }
                    ring.push_front(sens.clone());
                    ring.pop_back();
                }
                for i in 0..p {
                    diff[i] = y.sample(t)[i] - dataset.outputs.sample(t)[i];
                }
                wdiff.iter_mut().for_each(|v| *v = 0.0);
                weighting.y_grad_into(&diff, &mut wdiff);
                for c in 0..nz {
                    let mut acc = 0.0;
                    for i in 0..p {
                        acc += sens[(i, c)] * wdiff[i];
                    }
                    grad[c] += acc;
                }
            }
            Ok(RolloutGradient {
                loss: full.loss,
                grad,
                theta_sensitivity_norms: full.theta_sensitivity_norms,
            })
        }
    }
}

fn rollout_gradient_full(
    model: &dyn Model,
    theta: &[f64],
    init_outputs: &Series,
    dataset: &Dataset,
    weighting: &Weighting,
) -> Result<RolloutGradient> {
    let n = model.order();
    let p = model.n_outputs();
    let big_n = dataset.len();
    let nt = theta.len();
    let nz = nt + p * n;

    let y = crate::sim::simulate_free_run(model, theta, init_outputs, &dataset.inputs)?;

    let mut state = SensitivityState {
        ring: VecDeque::with_capacity(n),
    };
    // y_t for t < n are the init variables themselves (newest lag first when
    // consumed, so the ring front corresponds to y_{t-1}).
    for t in (0..n).rev() {
        let mut s = DMatrix::zeros(p, nz);
        for i in 0..p {
            s[(i, nt + t * p + i)] = 1.0;
        }
        state.ring.push_back(s);
    }

    let mut loss = weighting.ridge(theta);
    let mut grad = vec![0.0; nz];
    weighting.ridge_grad_into(theta, &mut grad[..nt]);
    let mut diff = vec![0.0; p];
    let mut wdiff = vec![0.0; p];
    let mut norms = Vec::with_capacity(big_n);
    let mut local = LocalJacobians::for_model(model);

    let mut accumulate = |sens: &DMatrix<f64>, t: usize, loss: &mut f64, grad: &mut [f64]| {
        for i in 0..p {
            diff[i] = y.sample(t)[i] - dataset.outputs.sample(t)[i];
        }
        *loss += weighting.y_quad(&diff);
        wdiff.iter_mut().for_each(|v| *v = 0.0);
        weighting.y_grad_into(&diff, &mut wdiff);
        for c in 0..nz {
            let mut acc = 0.0;
            for i in 0..p {
                acc += sens[(i, c)] * wdiff[i];
            }
            grad[c] += acc;
        }
    };

    for t in 0..n {
        let s = state.ring[n - 1 - t].clone();
        accumulate(&s, t, &mut loss, &mut grad);
        norms.push(theta_block_norm(&s, nt));
    }

    let mut sens = DMatrix::zeros(p, nz);
    for t in n..big_n {
        let lagged: Vec<&[f64]> = (1..=n).map(|k| y.sample(t - k)).collect();
        let inputs: Vec<&[f64]> = (0..=n).map(|j| dataset.inputs.sample(t - j)).collect();
        model.local_jacobians(&lagged, &inputs, theta, &mut local);
        sens.fill(0.0);
        sens.view_mut((0, 0), (p, nt)).copy_from(&local.wrt_theta);
        for k in 1..=n {
            sens += &local.wrt_lagged[k - 1] * &state.ring[k - 1];
        }
        accumulate(&sens, t, &mut loss, &mut grad);
        norms.push(theta_block_norm(&sens, nt));
        state.ring.push_front(sens.clone());
        state.ring.pop_back();
    }

    Ok(RolloutGradient {
        loss,
        grad,
        theta_sensitivity_norms: norms,
    })
}

fn theta_block_norm(sens: &DMatrix<f64>, nt: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..nt {
        for r in 0..sens.nrows() {
            acc += sens[(r, c)] * sens[(r, c)];
        }
    }
    acc.sqrt()
}

/// Adam configuration for the rollout-gradient baseline.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            epochs: 10_000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamFit {
    pub theta: Vec<f64>,
    pub init_outputs: Series,
    pub loss_trace: Vec<f64>,
    /// Set when a rollout diverged; optimization stopped at the last finite
    /// iterate.
    pub diverged: bool,
}

/// Full-batch Adam over `zeta = [theta, y_init]` with the rollout gradient.
/// Parameters start from a seeded draw, initial outputs from the first
/// measured samples. Deterministic per seed. Divergence is reported, not
/// repaired.
pub fn adam_fit(
    model: &dyn Model,
    dataset: &Dataset,
    weighting: &Weighting,
    config: &AdamConfig,
) -> Result<AdamFit> {
    use rand::SeedableRng;
    let n = model.order();
    let p = model.n_outputs();
    let nt = model.n_params();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let mut zeta = crate::model::draw_theta_init(model, &mut rng);
    zeta.extend_from_slice(dataset.outputs.head(n).flat());
    let nz = nt + p * n;
    debug_assert_eq!(zeta.len(), nz);

    let mut m1 = vec![0.0; nz];
    let mut m2 = vec![0.0; nz];
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut diverged = false;
    for epoch in 0..config.epochs {
        let init = Series::from_flat(zeta[nt..].to_vec(), p).expect("layout");
        let rg = match bptt_gradient(model, &zeta[..nt], &init, dataset, weighting, None) {
            Ok(rg) => rg,
            Err(Error::DivergedSimulation { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if !rg.loss.is_finite() || rg.grad.iter().any(|g| !g.is_finite()) {
            diverged = true;
            break;
        }
        loss_trace.push(rg.loss);
        let t = (epoch + 1) as f64;
        let bc1 = 1.0 - config.beta1.powf(t);
        let bc2 = 1.0 - config.beta2.powf(t);
        for i in 0..nz {
            m1[i] = config.beta1 * m1[i] + (1.0 - config.beta1) * rg.grad[i];
            m2[i] = config.beta2 * m2[i] + (1.0 - config.beta2) * rg.grad[i] * rg.grad[i];
            let mhat = m1[i] / bc1;
            let vhat = m2[i] / bc2;
            zeta[i] -= config.learning_rate * mhat / (vhat.sqrt() + config.epsilon);
        }
    }
    Ok(AdamFit {
        theta: zeta[..nt].to_vec(),
        init_outputs: Series::from_flat(zeta[nt..].to_vec(), p).expect("layout"),
        loss_trace,
        diverged,
    })
}

/// One-step prediction-error least squares for a model whose residual is
/// affine in theta at the measured data: minimizes `||A theta + c||` over the
/// constraint windows via the QR-factored normal equations.
pub fn pem_ls(model: &dyn Model, dataset: &Dataset) -> Result<Vec<f64>> {
    let n = model.order();
    let p = model.n_outputs();
    let nt = model.n_params();
    let big_n = dataset.len();
    if big_n <= n {
        return Err(Error::InsufficientData { n: big_n, order: n });
    }
    let rows = p * (big_n - n);

    let mut a = vec![0.0; rows * nt]; // column-major
    let mut c = vec![0.0; rows];
    let mut r_zero = vec![0.0; p];
    let mut r_probe = vec![0.0; p];
    let theta_zero = vec![0.0; nt];
    for b in 0..big_n - n {
        let s = b + n;
        let outputs: Vec<&[f64]> = (0..=n).map(|j| dataset.outputs.sample(s - j)).collect();
        let inputs: Vec<&[f64]> = (0..=n).map(|j| dataset.inputs.sample(s - j)).collect();
        model.residual(&outputs, &inputs, &theta_zero, &mut r_zero);
        for i in 0..p {
            c[b * p + i] = r_zero[i];
        }
        for k in 0..nt {
            let mut theta_probe = vec![0.0; nt];
            theta_probe[k] = 1.0;
            model.residual(&outputs, &inputs, &theta_probe, &mut r_probe);
            for i in 0..p {
                a[k * rows + b * p + i] = r_probe[i] - r_zero[i];
            }
        }
        // affinity check on a random direction
        if b == 0 {
            let probe: Vec<f64> = (0..nt).map(|k| 0.37 + 0.61 * k as f64).collect();
            model.residual(&outputs, &inputs, &probe, &mut r_probe);
            for i in 0..p {
                let lin: f64 = (0..nt).map(|k| a[k * rows + i] * probe[k]).sum::<f64>() + r_zero[i];
                let scale = 1.0 + lin.abs();
                if (r_probe[i] - lin).abs() > 1e-8 * scale {
                    return Err(Error::NotLinearInParams { column: i });
                }
            }
        }
    }

    // Q-less QR of A gives R with R'R = A'A.
    let factor = qless_qr_dense(a.clone(), rows, nt).map_err(|e| match e {
        Error::RankBreakdown { column } => Error::RankDeficientRegressor { column },
        other => other,
    })?;
    // rhs = -A' c
    let mut rhs = vec![0.0; nt];
    for (k, r) in rhs.iter_mut().enumerate() {
        let col = &a[k * rows..(k + 1) * rows];
        *r = -col.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>();
    }
    Ok(factor.solve_normal(&rhs))
}

/// Total and per-class FLOPs of one rollout-gradient evaluation are not
/// tracked; expose a scratch ledger for callers that route the shared
/// matrix-vector helpers.
pub fn scratch_ledger() -> FlopLedger {
    FlopLedger::new()
}
