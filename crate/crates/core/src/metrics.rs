//! Validation metrics: per-channel RMSE and best-fit rate.

use crate::error::{Error, Result};
use crate::series::Series;

/// Per-channel root-mean-squared error between a simulated and a reference
/// series of equal length.
pub fn rmse(sim: &Series, reference: &Series) -> Result<Vec<f64>> {
    check_shapes(sim, reference)?;
    let n = sim.len() as f64;
    let p = sim.width();
    let mut acc = vec![0.0; p];
    for (s, r) in sim.iter_samples().zip(reference.iter_samples()) {
        for i in 0..p {
            let d = s[i] - r[i];
            acc[i] += d * d;
        }
    }
    Ok(acc.into_iter().map(|a| (a / n).sqrt()).collect())
}

/// Per-channel best-fit rate, `1 - ||ref - sim|| / ||ref - mean(ref)||`,
/// stored as a fraction (1 is a perfect fit, 0 matches the mean predictor).
pub fn bfr(sim: &Series, reference: &Series) -> Result<Vec<f64>> {
    check_shapes(sim, reference)?;
    let p = sim.width();
    let means = reference.channel_means();
    let mut err = vec![0.0; p];
    let mut spread = vec![0.0; p];
    for (s, r) in sim.iter_samples().zip(reference.iter_samples()) {
        for i in 0..p {
            let d = r[i] - s[i];
            err[i] += d * d;
            let c = r[i] - means[i];
            spread[i] += c * c;
        }
    }
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        if spread[i] == 0.0 {
            return Err(Error::DegenerateReference { channel: i });
        }
        out.push(1.0 - (err[i] / spread[i]).sqrt());
    }
    Ok(out)
}

fn check_shapes(sim: &Series, reference: &Series) -> Result<()> {
    if sim.len() != reference.len() || sim.width() != reference.width() {
        return Err(Error::Dimension(format!(
            "series shapes differ: {}x{} vs {}x{}",
            sim.len(),
            sim.width(),
            reference.len(),
            reference.width()
        )));
    }
    if sim.is_empty() {
        return Err(Error::Dimension("empty series".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_identity_and_offset() {
        let a = Series::from_scalars(&[1.0, 2.0, 3.0]);
        assert_eq!(rmse(&a, &a).unwrap(), vec![0.0]);
        let b = Series::from_scalars(&[2.0, 3.0, 4.0]);
        assert!((rmse(&b, &a).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rmse_hand_case() {
        // residuals [3, 4] over N = 2 -> sqrt(25/2)
        let sim = Series::from_scalars(&[3.0, 4.0]);
        let reference = Series::from_scalars(&[0.0, 0.0]);
        assert!((rmse(&sim, &reference).unwrap()[0] - (12.5f64).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn bfr_identity_mean_and_hand_case() {
        let r = Series::from_scalars(&[0.0, 2.0]);
        assert!((bfr(&r, &r).unwrap()[0] - 1.0).abs() < 1e-15);
        let mean_pred = Series::from_scalars(&[1.0, 1.0]);
        assert!(bfr(&mean_pred, &r).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn bfr_rejects_constant_reference() {
        let r = Series::from_scalars(&[5.0, 5.0]);
        let s = Series::from_scalars(&[1.0, 2.0]);
        assert!(matches!(
            bfr(&s, &r),
            Err(Error::DegenerateReference { channel: 0 })
        ));
    }

    #[test]
    fn metrics_invariant_under_channel_permutation() {
        let sim = Series::from_rows(&[vec![1.0, 10.0], vec![2.0, 20.0]]).unwrap();
        let reference = Series::from_rows(&[vec![1.5, 11.0], vec![2.5, 19.0]]).unwrap();
        let swap = |s: &Series| {
            Series::from_rows(
                &s.iter_samples()
                    .map(|r| vec![r[1], r[0]])
                    .collect::<Vec<_>>(),
            )
            .unwrap()
        };
        let direct = rmse(&sim, &reference).unwrap();
        let swapped = rmse(&swap(&sim), &swap(&reference)).unwrap();
        assert_eq!(direct[0], swapped[1]);
        assert_eq!(direct[1], swapped[0]);
        let direct = bfr(&sim, &reference).unwrap();
        let swapped = bfr(&swap(&sim), &swap(&reference)).unwrap();
        assert_eq!(direct[0], swapped[1]);
        assert_eq!(direct[1], swapped[0]);
    }
}
