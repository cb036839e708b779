//! Cost weighting: output/input weight matrices and ridge regularization.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

/// Symmetric positive-definite weights for the output (and, for
/// errors-in-variables problems, input) mismatch terms, plus the ridge
/// coefficient of the regularizer `rho(theta) = ridge * ||theta||^2`.
#[derive(Clone, Debug)]
pub struct Weighting {
    w_y: DMatrix<f64>,
    w_u: DMatrix<f64>,
    pub ridge_coeff: f64,
    y_identity: bool,
    u_identity: bool,
}

impl Weighting {
    /// Identity weights on both blocks.
    pub fn identity(p: usize, q: usize) -> Self {
        Weighting {
            w_y: DMatrix::identity(p, p),
            w_u: DMatrix::identity(q, q),
            ridge_coeff: 0.0,
            y_identity: true,
            u_identity: true,
        }
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        assert!(ridge >= 0.0, "ridge coefficient must be nonnegative");
        self.ridge_coeff = ridge;
        self
    }

    pub fn new(w_y: DMatrix<f64>, w_u: DMatrix<f64>, ridge_coeff: f64) -> Result<Self> {
        check_spd(&w_y)?;
        check_spd(&w_u)?;
        if ridge_coeff < 0.0 {
            return Err(Error::InvalidConfig("ridge coefficient must be nonnegative".into()));
        }
        let y_identity = w_y == DMatrix::identity(w_y.nrows(), w_y.ncols());
        let u_identity = w_u == DMatrix::identity(w_u.nrows(), w_u.ncols());
        Ok(Weighting {
            w_y,
            w_u,
            ridge_coeff,
            y_identity,
            u_identity,
        })
    }

    /// Replace the input weight by `scale * I` (used for the W_u sweep).
    pub fn with_uniform_input_weight(mut self, scale: f64) -> Result<Self> {
        if scale <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        let q = self.w_u.nrows();
        self.w_u = DMatrix::identity(q, q) * scale;
        self.u_identity = scale == 1.0;
        Ok(self)
    }

    pub fn w_y(&self) -> &DMatrix<f64> {
        &self.w_y
    }

    pub fn w_u(&self) -> &DMatrix<f64> {
        &self.w_u
    }

    /// d' W_y d
    pub fn y_quad(&self, d: &[f64]) -> f64 {
        quad(&self.w_y, self.y_identity, d)
    }

    /// out += 2 W_y d
    pub fn y_grad_into(&self, d: &[f64], out: &mut [f64]) {
        grad_into(&self.w_y, self.y_identity, d, out)
    }

    pub fn u_quad(&self, d: &[f64]) -> f64 {
        quad(&self.w_u, self.u_identity, d)
    }

    pub fn u_grad_into(&self, d: &[f64], out: &mut [f64]) {
        grad_into(&self.w_u, self.u_identity, d, out)
    }

    pub fn ridge(&self, theta: &[f64]) -> f64 {
        self.ridge_coeff * theta.iter().map(|t| t * t).sum::<f64>()
    }

    pub fn ridge_grad_into(&self, theta: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(theta) {
            *o += 2.0 * self.ridge_coeff * t;
        }
    }
}

fn quad(w: &DMatrix<f64>, identity: bool, d: &[f64]) -> f64 {
    if identity {
        return d.iter().map(|x| x * x).sum();
    }
    let mut acc = 0.0;
    for (i, di) in d.iter().enumerate() {
        let mut row = 0.0;
        for (j, dj) in d.iter().enumerate() {
            row += w[(i, j)] * dj;
        }
        acc += di * row;
    }
    acc
}

fn grad_into(w: &DMatrix<f64>, identity: bool, d: &[f64], out: &mut [f64]) {
    if identity {
        for (o, x) in out.iter_mut().zip(d) {
            *o += 2.0 * x;
        }
        return;
    }
    for (i, o) in out.iter_mut().enumerate() {
        let mut row = 0.0;
        for (j, dj) in d.iter().enumerate() {
            row += w[(i, j)] * dj;
        }
        *o += 2.0 * row;
    }
}

fn check_spd(w: &DMatrix<f64>) -> Result<()> {
    if w.nrows() != w.ncols() {
        return Err(Error::NotPositiveDefinite);
    }
    let sym_err = (w - w.transpose()).norm();
    if sym_err > 1e-10 * (1.0 + w.norm()) {
        return Err(Error::NotPositiveDefinite);
    }
    Cholesky::new(w.clone()).ok_or(Error::NotPositiveDefinite)?;
    Ok(())
}
