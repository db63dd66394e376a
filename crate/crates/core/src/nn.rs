//! Small dense feed-forward networks with explicit backpropagation.
//!
//! Parameters of all layers live in one flat vector so that optimisers,
//! soft updates and checkpoints work on plain slices. Layer `l` stores its
//! weight matrix (`out × in`, row-major) followed by its bias.

use matrixmultiply::dgemm;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    offsets: Vec<usize>,
    pub params: Vec<f64>,
}

/// Intermediate values kept by [`Mlp::forward_tape`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    /// `inputs[l]` is the input of layer `l`; the last entry is the output.
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn layer_offsets(dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len());
    let mut at = 0;
    for w in dims.windows(2) {
        offsets.push(at);
        at += w[0] * w[1] + w[1];
    }
    offsets.push(at);
    offsets
}

/// `c (m×n) = beta·c + a (m×k) · b (k×n)`, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices whose lengths cover every strided index.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    /// Network with the given activations per layer and all-zero parameters.
    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {dims:?}")));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::DimensionMismatch { expected: dims.len() - 1, got: activations.len() });
        }
        let offsets = layer_offsets(dims);
        let total = *offsets.last().unwrap_or(&0);
        Ok(Self { dims: dims.to_vec(), activations: activations.to_vec(), offsets, params: vec![0.0; total] })
    }

    /// Rectifier hidden layers, linear output, He-scaled Gaussian weights and
    /// zero biases. `out_scale` shrinks the last layer.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], out_scale: f64, rng: &mut R) -> Result<Self> {
        let mut acts = vec![Activation::Relu; dims.len().saturating_sub(2)];
        acts.push(Activation::Identity);
        let mut net = Self::zeros(dims, &acts)?;
        let layers = net.layers();
        for l in 0..layers {
            let (fan_in, fan_out) = (net.dims[l], net.dims[l + 1]);
            let mut std = (2.0 / fan_in as f64).sqrt();
            if l + 1 == layers {
                std *= out_scale;
            }
            let start = net.offsets[l];
            for w in &mut net.params[start..start + fan_in * fan_out] {
                let z: f64 = StandardNormal.sample(rng);
                *w = std * z;
            }
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Weight and bias slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let start = self.offsets[l];
        let (w, b) = self.params[start..start + i * o + o].split_at(i * o);
        (w, b)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let start = self.offsets[l];
        let (w, b) = self.params[start..start + i * o + o].split_at_mut(i * o);
        (w, b)
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.dims == other.dims && self.activations == other.activations
    }

    fn check_input(&self, x: &[f64], batch: usize) -> Result<()> {
        if x.len() != batch * self.input_dim() {
            return Err(Error::DimensionMismatch { expected: batch * self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Batched forward pass keeping intermediate values.
    pub fn forward_tape(&self, x: &[f64], batch: usize) -> Result<Tape> {
        self.check_input(x, batch)?;
        let mut values = Vec::with_capacity(self.dims.len());
        values.push(x.to_vec());
        for l in 0..self.layers() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let (w, b) = self.layer(l);
            let mut z = Vec::with_capacity(batch * o);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            gemm(batch, i, o, &values[l], i, 1, w, 1, i, 1.0, &mut z);
            if self.activations[l] == Activation::Relu {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            values.push(z);
        }
        Ok(Tape { batch, values })
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut tape = self.forward_tape(x, batch)?;
        Ok(tape.values.pop().unwrap_or_default())
    }

    /// Backward pass. Parameter gradients are added into `grad`; the gradient
    /// with respect to the input is returned.
    pub fn backward(&self, tape: &Tape, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        let batch = tape.batch;
        if upstream.len() != batch * self.output_dim() {
            return Err(Error::DimensionMismatch { expected: batch * self.output_dim(), got: upstream.len() });
        }
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), got: grad.len() });
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.layers()).rev() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            if self.activations[l] == Activation::Relu {
                for (d, &out) in delta.iter_mut().zip(&tape.values[l + 1]) {
                    if out <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let start = self.offsets[l];
            let (gw, gb) = grad[start..start + i * o + o].split_at_mut(i * o);
            // dW (o×i) += deltaᵀ (o×batch) · X (batch×i)
            gemm(o, batch, i, &delta, 1, o, &tape.values[l], i, 1, 1.0, gw);
            for row in delta.chunks_exact(o) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            // dX (batch×i) = delta (batch×o) · W (o×i)
            let (w, _) = self.layer(l);
            let mut dx = vec![0.0; batch * i];
            gemm(batch, o, i, &delta, o, 1, w, i, 1, 0.0, &mut dx);
            delta = dx;
        }
        Ok(delta)
    }
}

/// One forward and backward pass: `(output, parameter gradients, input gradient)`.
pub fn mlp_forward_backward(
    net: &Mlp,
    input: &[f64],
    batch: usize,
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let tape = net.forward_tape(input, batch)?;
    let mut grad = vec![0.0; net.num_params()];
    let dx = net.backward(&tape, upstream, &mut grad)?;
    let out = tape.values.last().cloned().unwrap_or_default();
    Ok((out, grad, dx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Gradient-descent state for one parameter vector.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64, momentum: f64, velocity: Vec<f64> },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64, m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl Optimizer {
    pub fn sgd(lr: f64, momentum: f64, n: usize) -> Self {
        Optimizer::Sgd { lr, momentum, velocity: vec![0.0; n] }
    }

    pub fn adam(lr: f64, n: usize) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(lr, 0.0, n),
            OptimizerKind::Adam => Self::adam(lr, n),
        }
    }

    pub fn set_lr(&mut self, new_lr: f64) {
        match self {
            Optimizer::Sgd { lr, .. } | Optimizer::Adam { lr, .. } => *lr = new_lr,
        }
    }

    /// Descend along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr, momentum, velocity } => {
                if *momentum == 0.0 {
                    for (p, g) in params.iter_mut().zip(grad) {
                        *p -= *lr * g;
                    }
                } else {
                    for ((p, g), u) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
                        *u = *momentum * *u + g;
                        *p -= *lr * *u;
                    }
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (((p, g), mi), vi) in params.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = *beta1 * *mi + (1.0 - *beta1) * g;
                    *vi = *beta2 * *vi + (1.0 - *beta2) * g * g;
                    *p -= *lr * (*mi / c1) / ((*vi / c2).sqrt() + *eps);
                }
            }
        }
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// Naive per-sample forward pass, written independently of the gemm path.
    fn naive_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 0..net.layers() {
            let (w, b) = net.layer(l);
            let (i, o) = (net.dims()[l], net.dims()[l + 1]);
            let mut z = vec![0.0; o];
            for r in 0..o {
                z[r] = b[r] + (0..i).map(|c| w[r * i + c] * h[c]).sum::<f64>();
                if net.activations()[l] == Activation::Relu {
                    z[r] = z[r].max(0.0);
                }
            }
            h = z;
        }
        h
    }

    #[test]
    fn identity_network_passes_input_through() {
        let mut net = Mlp::zeros(&[3, 3], &[Activation::Identity]).unwrap();
        let (w, _) = net.layer_mut(0);
        for k in 0..3 {
            w[k * 3 + k] = 1.0;
        }
        let x = [0.5, -2.0, 7.0, 1.0, 2.0, 3.0];
        assert_eq!(net.forward(&x, 2).unwrap(), x.to_vec());
    }

    #[test]
    fn batched_matches_naive() {
        let mut rng = stream(1, "nn");
        let net = Mlp::new(&[4, 7, 5, 3], 1.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..4 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = net.forward(&x, 6).unwrap();
        for b in 0..6 {
            let want = naive_forward(&net, &x[b * 4..(b + 1) * 4]);
            for (g, w) in out[b * 3..(b + 1) * 3].iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = stream(2, "nn");
        let net = Mlp::new(&[3, 8, 2], 1.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g, dx) = mlp_forward_backward(&net, &x, 3, &[0.0; 6]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = stream(3, "nn");
        let net = Mlp::new(&[3, 4, 2], 1.0, &mut rng).unwrap();
        assert!(matches!(net.forward(&[1.0; 4], 1), Err(Error::DimensionMismatch { .. })));
        assert!(mlp_forward_backward(&net, &[1.0; 3], 1, &[1.0; 3]).is_err());
    }

    /// Scalar loss `Σ upstream · output` for finite differences.
    fn probe(net: &Mlp, x: &[f64], batch: usize, up: &[f64]) -> f64 {
        naive_batch(net, x, batch).iter().zip(up).map(|(a, b)| a * b).sum()
    }

    fn naive_batch(net: &Mlp, x: &[f64], batch: usize) -> Vec<f64> {
        let d = net.input_dim();
        (0..batch).flat_map(|b| naive_forward(net, &x[b * d..(b + 1) * d])).collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream(4, "nn");
        let mut net = Mlp::new(&[5, 16, 12, 3], 1.0, &mut rng).unwrap();
        // Non-zero biases keep most units away from the rectifier kink.
        for l in 0..net.layers() {
            let (_, b) = net.layer_mut(l);
            for v in b.iter_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let batch = 4;
        let x: Vec<f64> = (0..5 * batch).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..3 * batch).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, grad, dx) = mlp_forward_backward(&net, &x, batch, &up).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..net.num_params() {
            let orig = net.params[k];
            net.params[k] = orig + h;
            let plus = probe(&net, &x, batch, &up);
            net.params[k] = orig - h;
            let minus = probe(&net, &x, batch, &up);
            net.params[k] = orig;
            worst = worst.max(rel_err((plus - minus) / (2.0 * h), grad[k]));
        }
        assert!(worst <= 1e-5, "parameter gradient error {worst}");
        let mut xs = x.clone();
        for k in 0..xs.len() {
            let orig = xs[k];
            xs[k] = orig + h;
            let plus = probe(&net, &xs, batch, &up);
            xs[k] = orig - h;
            let minus = probe(&net, &xs, batch, &up);
            xs[k] = orig;
            assert!(rel_err((plus - minus) / (2.0 * h), dx[k]) <= 1e-5);
        }
    }

    #[test]
    fn optimisers_descend_a_quadratic() {
        for mut opt in
            [Optimizer::sgd(0.1, 0.9, 2), Optimizer::adam(0.05, 2), Optimizer::new(OptimizerKind::Sgd, 0.1, 2)]
        {
            let mut p = vec![3.0, -2.0];
            for _ in 0..500 {
                let g = vec![2.0 * p[0], 2.0 * p[1]];
                opt.step(&mut p, &g);
            }
            assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2, "{p:?}");
        }
    }

    #[test]
    fn sgd_step_is_lr_times_gradient() {
        let mut opt = Optimizer::sgd(0.5, 0.0, 2);
        let mut p = vec![1.0, 1.0];
        opt.step(&mut p, &[0.2, -0.4]);
        assert_eq!(p, vec![0.9, 1.2]);
    }
}
