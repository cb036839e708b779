//! Free-run simulation of a model over an input record.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::series::Series;

/// Roll the model forward: the first n samples reproduce `init_outputs`
/// verbatim, every later sample is the model map applied to its own past
/// outputs. Returns an error carrying the first offending index if a
/// non-finite value appears.
pub fn simulate_free_run(
    model: &dyn Model,
    theta: &[f64],
    init_outputs: &Series,
    inputs: &Series,
) -> Result<Series> {
    let n = model.order();
    let p = model.n_outputs();
    let big_n = inputs.len();
    if init_outputs.len() != n || init_outputs.width() != p {
        return Err(Error::Dimension(format!(
            "init_outputs must be {} samples of width {}",
            n, p
        )));
    }
    if inputs.width() != model.n_inputs() {
        return Err(Error::Dimension("input width does not match model".into()));
    }
    if big_n <= n {
        return Err(Error::InsufficientData { n: big_n, order: n });
    }
    if theta.len() != model.n_params() {
        return Err(Error::Dimension("theta length does not match model".into()));
    }

    let mut out = Series::zeros(big_n, p);
    for t in 0..n {
        out.sample_mut(t).copy_from_slice(init_outputs.sample(t));
    }
    let mut step = vec![0.0; p];
    for t in n..big_n {
        {
            let lagged: Vec<&[f64]> = (1..=n).map(|k| out.sample(t - k)).collect();
            let input_win: Vec<&[f64]> = (0..=n).map(|j| inputs.sample(t - j)).collect();
            model.evaluate(&lagged, &input_win, theta, &mut step);
        }
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedSimulation { index: t });
        }
        out.sample_mut(t).copy_from_slice(&step);
    }
    Ok(out)
}
