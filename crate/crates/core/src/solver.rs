//! Euler-discretized controlled-multiplier identification loop.
//!
//! Each iteration treats the constraint values as the output of a plant whose
//! state is the decision vector: the multipliers are chosen by a
//! feedback-linearizing controller that regulates the constraints to zero
//! while the state drifts along the projected negative cost gradient,
//!
//! ```text
//! sigma = (J J')^{-1} (J grad_f + K h)
//! dx    = -grad_f - J' sigma
//! x_next = x + tau * dx
//! ```
//!
//! The normal-equation solve goes through the Q-less sparse QR of J' (or its
//! dense fallback), and the loop stops once both the step norm and the
//! constraint norm fall below their tolerances.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::ProblemInstance;
use crate::sparse::{qless_qr, qless_qr_dense, solve_step_system, FlopLedger};

/// Solver parameters. All tolerances and the step size must be positive.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolverConfig {
    /// Constraint feedback gain K.
    pub gain: f64,
    /// Euler step size tau.
    pub step_size: f64,
    /// Step-norm tolerance (eps_f).
    pub step_tol: f64,
    /// Constraint-norm tolerance (eps_h).
    pub constraint_tol: f64,
    pub max_iters: usize,
    /// Route the factorization through the dense kernel instead of the
    /// structure-exploiting one.
    pub dense_fallback: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gain: 1.0,
            step_size: 1e-2,
            step_tol: 1e-8,
            constraint_tol: 1e-8,
            max_iters: 10_000,
            dense_fallback: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0) {
            return Err(Error::InvalidConfig("gain must be > 0".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig("step_size must be > 0".into()));
        }
        if !(self.step_tol > 0.0) || !(self.constraint_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Diagnostics of a single iteration.
#[derive(Clone, Debug)]
pub struct StepDiag {
    pub cost: f64,
    pub step_norm: f64,
    pub constraint_norm: f64,
    /// Multipliers sigma of the controller (the Lagrange-multiplier
    /// equivalent of the step).
    pub sigma: Vec<f64>,
    pub factorization_ms: f64,
    pub ledger: FlopLedger,
}

/// Per-iteration trace record.
#[derive(Clone, Debug, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub cost: f64,
    pub constraint_norm: f64,
    pub step_norm: f64,
    pub factorization_ms: f64,
    /// Running total of multiplications actually performed by the
    /// factorizations and matrix-vector products.
    pub cumulative_flops: u64,
}

pub type SolverTrace = Vec<TraceRecord>;

/// Terminal state of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Diverged,
    RankBreakdown,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    pub trace: SolverTrace,
    pub status: SolveStatus,
}

/// One Euler step of the controlled-multiplier flow.
pub fn flcmo_step(
    problem: &ProblemInstance,
    x: &[f64],
    config: &SolverConfig,
) -> Result<(Vec<f64>, StepDiag)> {
    let (cost, grad) = problem.cost_and_gradient(x);
    let h = problem.constraint_residual(x);
    let jac = problem.constraint_jacobian(x);
    let mut ledger = FlopLedger::new();

    let jg = jac.matvec(&grad, &mut ledger);
    let rhs: Vec<f64> = jg
        .iter()
        .zip(&h)
        .map(|(a, b)| a + config.gain * b)
        .collect();

    let t0 = Instant::now();
    let factor = if config.dense_fallback {
        qless_qr_dense(jac.to_dense_transposed(), jac.n_cols(), jac.n_rows())?
    } else {
        qless_qr(&jac)?
    };
    let factorization_ms = t0.elapsed().as_secs_f64() * 1e3;
    ledger.merge(&factor.flop_ledger);

    let sigma = solve_step_system(&factor, &rhs);
    let jt_sigma = jac.matvec_t(&sigma, &mut ledger);

    let mut x_next = x.to_vec();
    let mut step_norm_sq = 0.0;
    for i in 0..x.len() {
        let d = -grad[i] - jt_sigma[i];
        step_norm_sq += d * d;
        x_next[i] += config.step_size * d;
    }
    let step_norm = step_norm_sq.sqrt();
    if !step_norm.is_finite() {
        return Err(Error::NonFiniteStep);
    }
    let constraint_norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((
        x_next,
        StepDiag {
            cost,
            step_norm,
            constraint_norm,
            sigma,
            factorization_ms,
            ledger,
        },
    ))
}

/// Iterate [`flcmo_step`] from `x0` until both the step norm and the
/// constraint norm are below their tolerances, the iteration budget runs out,
/// or the step degenerates. Failures surface in the status, never silently.
pub fn solve(problem: &ProblemInstance, x0: &[f64], config: &SolverConfig) -> Result<SolveOutcome> {
    config.validate()?;
    let mut x = x0.to_vec();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteStep);
    }
    let mut trace = Vec::new();
    let mut cumulative_flops = 0u64;
    let mut prev_step_norm = f64::INFINITY;
    for k in 0..config.max_iters {
        let h = problem.constraint_residual(&x);
        let h_norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if prev_step_norm < config.step_tol && h_norm < config.constraint_tol {
            return Ok(SolveOutcome {
                x,
                trace,
                status: SolveStatus::Converged,
            });
        }
        match flcmo_step(problem, &x, config) {
            Ok((x_next, diag)) => {
                cumulative_flops += diag.ledger.measured_total() + diag.ledger.matvec_flops;
                trace.push(TraceRecord {
                    iteration: k,
                    cost: diag.cost,
                    constraint_norm: diag.constraint_norm,
                    step_norm: diag.step_norm,
                    factorization_ms: diag.factorization_ms,
                    cumulative_flops,
                });
                prev_step_norm = diag.step_norm;
                x = x_next;
                if x.iter().any(|v| !v.is_finite()) {
                    return Ok(SolveOutcome {
                        x,
                        trace,
                        status: SolveStatus::Diverged,
                    });
                }
            }
            Err(Error::RankBreakdown { .. }) => {
                return Ok(SolveOutcome {
                    x,
                    trace,
                    status: SolveStatus::RankBreakdown,
                });
            }
            Err(Error::NonFiniteStep) => {
                return Ok(SolveOutcome {
                    x,
                    trace,
                    status: SolveStatus::Diverged,
                });
            }
            Err(e) => return Err(e),
        }
    }
    // final check so a run that converges exactly at the budget is not
    // misreported
    let h = problem.constraint_residual(&x);
    let h_norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let status = if prev_step_norm < config.step_tol && h_norm < config.constraint_tol {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIters
    };
    Ok(SolveOutcome { x, trace, status })
}

/// Post-hoc stationarity certificate at a solution candidate.
#[derive(Clone, Debug, Serialize)]
pub struct StationarityReport {
    /// Constraint violation, infinity norm.
    pub constraint_inf: f64,
    /// Reduced-gradient infinity norm (gradient of the eliminated objective).
    pub reduced_gradient_inf: f64,
    /// Full Lagrangian gradient infinity norm with recovered multipliers.
    pub kkt_inf: f64,
    pub pass: bool,
}

/// Check the converged point against the optimality conditions of the
/// constrained program: all three norms must fall below
/// `10 * max(step_tol, constraint_tol)`.
pub fn verify_stationarity(
    problem: &ProblemInstance,
    x: &[f64],
    config: &SolverConfig,
) -> StationarityReport {
    let jac = problem.constraint_jacobian(x);
    let (_, grad) = problem.cost_and_gradient(x);
    let lambda = problem.recover_multipliers_with(&jac, &grad);
    let h = problem.constraint_residual(x);
    let constraint_inf = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut ledger = FlopLedger::new();
    let jtl = jac.matvec_t(&lambda, &mut ledger);
    let kkt_inf = grad
        .iter()
        .zip(&jtl)
        .fold(0.0f64, |a, (g, j)| a.max((g + j).abs()));
    let reduced = problem.reduced_gradient(x, config.constraint_tol * 10.0);
    let tol = 10.0 * config.step_tol.max(config.constraint_tol);
    let reduced_inf = reduced.inf_norm();
    StationarityReport {
        constraint_inf,
        reduced_gradient_inf: reduced_inf,
        kkt_inf,
        pass: constraint_inf < tol && reduced_inf < tol && kkt_inf < tol,
    }
}

/// Result of one seeded fit.
#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub outcome: SolveOutcome,
}

/// Run independent seeded solves over a shared problem, each starting from
/// the problem's warm-started trajectory and a seeded parameter draw.
/// Results come back in seed order regardless of scheduling.
pub fn multi_seed_solve(
    problem: &ProblemInstance,
    model: &dyn crate::model::Model,
    seeds: &[u64],
    config: &SolverConfig,
) -> Result<Vec<SeedResult>> {
    config.validate()?;
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seeds.len().max(1));
    let mut results: Vec<Option<Result<SeedResult>>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results = std::sync::Mutex::new(&mut results);
        let next = &next;
        let results = &results;
        let mut handles = Vec::new();
        for _ in 0..workers {
            handles.push(scope.spawn(move || loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let seed = seeds[i];
                let theta = seeded_theta(model, seed);
                let x0 = problem.initial_point(&theta);
                let out = solve(problem, &x0, config).map(|outcome| SeedResult { seed, outcome });
                results.lock().unwrap()[i] = Some(out);
            }));
        }
        for h in handles {
            h.join().expect("solver worker panicked");
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every seed scheduled"))
        .collect()
}

/// Seeded parameter draw used by the multi-seed driver.
pub fn seeded_theta(model: &dyn crate::model::Model, seed: u64) -> Vec<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    crate::model::draw_theta_init(model, &mut rng)
}
