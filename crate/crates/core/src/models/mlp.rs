//! Multilayer-perceptron input-output model (the NNOE parameterization).

use nalgebra::DMatrix;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{LocalJacobians, Model};

/// Fully connected network mapping the regression window
///
/// ```text
/// [y_{t-1}, ..., y_{t-n}, u_t, ..., u_{t-n}]   (width p*n + q*(n+1))
/// ```
///
/// through tanh hidden layers to a linear output layer of width p.
///
/// Parameters are flattened per layer, weights row-major then biases, layers
/// ordered input to output.
#[derive(Clone, Debug)]
pub struct MlpNio {
    order: usize,
    n_outputs: usize,
    n_inputs: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    layer_dims: Vec<(usize, usize)>, // (in, out) per layer
    n_params: usize,
}

impl MlpNio {
    pub fn new(order: usize, n_outputs: usize, n_inputs: usize, hidden: Vec<usize>) -> Self {
        assert!(order >= 1 && n_outputs >= 1 && n_inputs >= 1);
        assert!(hidden.iter().all(|&w| w >= 1), "layer widths must be positive");
        let in0 = n_outputs * order + n_inputs * (order + 1);
        let mut layer_dims = Vec::new();
        let mut prev = in0;
        for &w in &hidden {
            layer_dims.push((prev, w));
            prev = w;
        }
        layer_dims.push((prev, n_outputs));
        let n_params = layer_dims.iter().map(|(i, o)| i * o + o).sum();
        MlpNio {
            order,
            n_outputs,
            n_inputs,
            hidden,
            layer_dims,
            n_params,
        }
    }

    fn input_dim(&self) -> usize {
        self.layer_dims[0].0
    }

    fn gather_input(&self, lagged: &[&[f64]], inputs: &[&[f64]], buf: &mut Vec<f64>) {
        buf.clear();
        for l in lagged {
            buf.extend_from_slice(l);
        }
        for u in inputs {
            buf.extend_from_slice(u);
        }
    }

    /// Forward pass; returns pre-activations per layer and activations per
    /// layer (activations[0] is the input vector).
    fn forward(&self, input: &[f64], theta: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n_layers = self.layer_dims.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        acts.push(input.to_vec());
        let mut offset = 0;
        for (l, &(din, dout)) in self.layer_dims.iter().enumerate() {
            let w = &theta[offset..offset + din * dout];
            let b = &theta[offset + din * dout..offset + din * dout + dout];
            offset += din * dout + dout;
            let x = &acts[l];
            let mut z = vec![0.0; dout];
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &w[r * din..(r + 1) * din];
                *zr = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            let a = if l + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|v| v.tanh()).collect()
            };
            pre.push(z);
            acts.push(a);
        }
        (pre, acts)
    }
}

impl Model for MlpNio {
    fn order(&self) -> usize {
        self.order
    }
    fn n_outputs(&self) -> usize {
        self.n_outputs
    }
    fn n_inputs(&self) -> usize {
        self.n_inputs
    }
    fn n_params(&self) -> usize {
        self.n_params
    }

    fn evaluate(&self, lagged: &[&[f64]], inputs: &[&[f64]], theta: &[f64], out: &mut [f64]) {
        let mut buf = Vec::with_capacity(self.input_dim());
        self.gather_input(lagged, inputs, &mut buf);
        let (_, acts) = self.forward(&buf, theta);
        out.copy_from_slice(acts.last().unwrap());
    }

    fn local_jacobians(
        &self,
        lagged: &[&[f64]],
        inputs: &[&[f64]],
        theta: &[f64],
        out: &mut LocalJacobians,
    ) {
        let mut buf = Vec::with_capacity(self.input_dim());
        self.gather_input(lagged, inputs, &mut buf);
        let (pre, acts) = self.forward(&buf, theta);
        let n_layers = self.layer_dims.len();
        let p = self.n_outputs;

        // Sensitivity of the output with respect to each layer's
        // pre-activation, built backward from the identity at the top.
        // s[l] has shape p x dout(l).
        let mut s: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); n_layers];
        s[n_layers - 1] = DMatrix::identity(p, p);
        let mut offsets = Vec::with_capacity(n_layers);
        {
            let mut off = 0;
            for &(din, dout) in &self.layer_dims {
                offsets.push(off);
                off += din * dout + dout;
            }
        }
        for l in (0..n_layers - 1).rev() {
            let (din_next, dout_next) = self.layer_dims[l + 1];
            let w_next = &theta[offsets[l + 1]..offsets[l + 1] + din_next * dout_next];
            let w_next = DMatrix::from_row_slice(dout_next, din_next, w_next);
            // d z_{l+1} / d a_l = W_{l+1}; d a_l / d z_l = diag(1 - tanh^2).
            let mut m = &s[l + 1] * w_next;
            for (c, z) in pre[l].iter().enumerate() {
                let d = 1.0 - z.tanh() * z.tanh();
                for r in 0..p {
                    m[(r, c)] *= d;
                }
            }
            s[l] = m;
        }

        // Parameter block: for layer l, d out_i / d W_{rc} = s[l][(i,r)] * a_{l-1}[c],
        // d out_i / d b_r = s[l][(i,r)].
        for (l, &(din, dout)) in self.layer_dims.iter().enumerate() {
            let a_prev = &acts[l];
            let base = offsets[l];
            for r in 0..dout {
                for c in 0..din {
                    let col = base + r * din + c;
                    for i in 0..p {
                        out.wrt_theta[(i, col)] = s[l][(i, r)] * a_prev[c];
                    }
                }
                let col = base + din * dout + r;
                for i in 0..p {
                    out.wrt_theta[(i, col)] = s[l][(i, r)];
                }
            }
        }

        // Input-window blocks through the first layer: d out / d x0 = s[0] * W_1.
        let (din0, dout0) = self.layer_dims[0];
        let w0 = DMatrix::from_row_slice(dout0, din0, &theta[..din0 * dout0]);
        let dx = &s[0] * w0; // p x din0
        let p_w = self.n_outputs;
        let q = self.n_inputs;
        for k in 0..self.order {
            for i in 0..p {
                for c in 0..p_w {
                    out.wrt_lagged[k][(i, c)] = dx[(i, k * p_w + c)];
                }
            }
        }
        let u_base = self.order * p_w;
        for j in 0..=self.order {
            for i in 0..p {
                for c in 0..q {
                    out.wrt_inputs[j][(i, c)] = dx[(i, u_base + j * q + c)];
                }
            }
        }
    }

    fn init_theta(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        // Zero-mean normal weights with std 1/sqrt(fan-in); zero biases.
        let mut theta = Vec::with_capacity(self.n_params);
        for &(din, dout) in &self.layer_dims {
            let std = 1.0 / (din as f64).sqrt();
            for _ in 0..din * dout {
                let g: f64 = StandardNormal.sample(rng);
                theta.push(std * g);
            }
            theta.extend(std::iter::repeat(0.0).take(dout));
        }
        Some(theta)
    }
}
