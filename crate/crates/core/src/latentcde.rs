//! Controlled latent states `dz = G(z) dx` and their discrete (controlled ResNet) updates.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::{EmbeddedPath, SampledPath};

/// Latent values above this magnitude are reported as a divergence.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum CdeError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("latent state diverged at t = {time}")]
    Divergence { time: f64 },
    #[error("latent state diverged at step {0}")]
    DivergedAtStep(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("substeps must be at least 1")]
    ZeroSubsteps,
}

/// `G(z)[i][j] = sum_l a[i][j][l] z_l + b[i][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineField {
    pub p: usize,
    pub d: usize,
    /// Row-major `p x d x p`.
    pub a: Vec<f64>,
    /// Row-major `p x d`.
    pub b: Vec<f64>,
}

/// Scalar latent (`p = 1`) with one polynomial per channel:
/// `G^j(h) = sum_m coeffs[j][m] h^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialScalarField {
    pub coeffs: Vec<Vec<f64>>,
}

impl PolynomialScalarField {
    pub fn channel(&self, j: usize, h: f64) -> f64 {
        self.coeffs[j].iter().rev().fold(0.0, |acc, c| acc * h + c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            n_in: self.n_in,
            n_out: self.n_out,
            w: vec![0.0; self.w.len()],
            b: vec![0.0; self.b.len()],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

/// Feed-forward field with tanh on every layer; the last layer has `p * d` outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralField {
    pub p: usize,
    pub d: usize,
    pub layers: Vec<Layer>,
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl NeuralField {
    /// Uniform `±1/sqrt(fan_in)` initialisation of all weights and biases.
    pub fn init<R: Rng>(p: usize, d: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![p];
        sizes.extend_from_slice(hidden);
        sizes.push(p * d);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut draw = || rng.random_range(-bound..=bound);
                Layer {
                    n_in: w[0],
                    n_out: w[1],
                    w: (0..w[0] * w[1]).map(|_| draw()).collect(),
                    b: (0..w[1]).map(|_| draw()).collect(),
                }
            })
            .collect();
        Self { p, d, layers }
    }

    /// Default architecture `[p, 128, 128, p*d]`.
    pub fn default_init<R: Rng>(p: usize, d: usize, rng: &mut R) -> Self {
        Self::init(p, d, &[128, 128], rng)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.p];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn zeros_like(&self) -> NeuralField {
        NeuralField {
            p: self.p,
            d: self.d,
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), CdeError> {
        if flat.len() != self.n_params() {
            return Err(CdeError::Shape(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut pos = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }

    fn forward(&self, z: &[f64]) -> MlpCache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(z.to_vec());
        for l in &self.layers {
            let mut h = l.affine(acts.last().unwrap());
            h.iter_mut().for_each(|v| *v = v.tanh());
            acts.push(h);
        }
        MlpCache { acts }
    }

    /// Backpropagates `grad_out` (w.r.t. the network output), accumulating
    /// parameter gradients into `acc` and returning the gradient w.r.t. the input.
    fn backward(&self, cache: &MlpCache, grad_out: &[f64], acc: &mut NeuralField) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let out = &cache.acts[li + 1];
            let input = &cache.acts[li];
            // through tanh
            for (gv, o) in g.iter_mut().zip(out) {
                *gv *= 1.0 - o * o;
            }
            let al = &mut acc.layers[li];
            let mut g_in = vec![0.0; l.n_in];
            for o in 0..l.n_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                al.b[o] += go;
                let row = o * l.n_in;
                for i in 0..l.n_in {
                    al.w[row + i] += go * input[i];
                    g_in[i] += go * l.w[row + i];
                }
            }
            g = g_in;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VectorField {
    Affine(AffineField),
    PolynomialScalar(PolynomialScalarField),
    Neural(NeuralField),
}

impl VectorField {
    pub fn latent_dim(&self) -> usize {
        match self {
            VectorField::Affine(f) => f.p,
            VectorField::PolynomialScalar(_) => 1,
            VectorField::Neural(f) => f.p,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            VectorField::Affine(f) => f.d,
            VectorField::PolynomialScalar(f) => f.coeffs.len(),
            VectorField::Neural(f) => f.d,
        }
    }

    /// `G(z)` as a row-major `p x d` matrix.
    pub fn evaluate(&self, z: &[f64]) -> Vec<f64> {
        match self {
            VectorField::Affine(f) => {
                let mut g = f.b.clone();
                for (ij, gv) in g.iter_mut().enumerate() {
                    let coeffs = &f.a[ij * f.p..(ij + 1) * f.p];
                    *gv += coeffs.iter().zip(z).map(|(a, v)| a * v).sum::<f64>();
                }
                g
            }
            VectorField::PolynomialScalar(f) => {
                (0..f.coeffs.len()).map(|j| f.channel(j, z[0])).collect()
            }
            VectorField::Neural(f) => f.forward(z).acts.pop().unwrap(),
        }
    }
}

/// One controlled ResNet update `z + G(z) dx`.
pub fn resnet_step(z: &[f64], field: &VectorField, dx: &[f64]) -> Result<Vec<f64>, CdeError> {
    let (p, d) = (field.latent_dim(), field.control_dim());
    if z.len() != p || dx.len() != d {
        return Err(CdeError::Shape(format!(
            "field is {p}x{d}, got z of length {} and dx of length {}",
            z.len(),
            dx.len()
        )));
    }
    let g = field.evaluate(z);
    let out: Vec<f64> = (0..p)
        .map(|i| z[i] + (0..d).map(|j| g[i * d + j] * dx[j]).sum::<f64>())
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(CdeError::NonFinite("latent update"));
    }
    Ok(out)
}

/// Latent values on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl LatentTrajectory {
    pub fn last(&self) -> &[f64] {
        self.values.last().expect("trajectory is never empty")
    }
}

/// Euler scheme over the segments of an embedded path, each split into `substeps` pieces.
pub fn solve_controlled(
    z0: &[f64],
    field: &VectorField,
    path: &EmbeddedPath,
    substeps: usize,
) -> Result<LatentTrajectory, CdeError> {
    if substeps == 0 {
        return Err(CdeError::ZeroSubsteps);
    }
    if path.dim() != field.control_dim() {
        return Err(CdeError::Shape(format!(
            "path has {} channels, field expects {}",
            path.dim(),
            field.control_dim()
        )));
    }
    let mut z = z0.to_vec();
    let mut times = vec![0.0];
    let mut values = vec![z.clone()];
    for seg in path.segments() {
        let piece: Vec<f64> = seg.increment.iter().map(|v| v / substeps as f64).collect();
        for s in 1..=substeps {
            z = resnet_step(&z, field, &piece).map_err(|e| match e {
                CdeError::NonFinite(_) => CdeError::Divergence { time: seg.t_start },
                other => other,
            })?;
            let t = seg.t_start + (seg.t_end - seg.t_start) * s as f64 / substeps as f64;
            if z.iter().any(|v| v.abs() > OVERFLOW_GUARD) {
                return Err(CdeError::Divergence { time: t });
            }
            times.push(t);
            values.push(z.clone());
        }
    }
    Ok(LatentTrajectory { times, values })
}

/// Time-augmented increments `(X(t_k) - X(t_{k-1}), t_k - t_{k-1})` between observations.
pub fn observation_increments(path: &SampledPath) -> Vec<Vec<f64>> {
    (1..path.len())
        .map(|k| {
            let mut inc: Vec<f64> = path
                .row(k)
                .iter()
                .zip(path.row(k - 1))
                .map(|(a, b)| a - b)
                .collect();
            inc.push(path.times()[k] - path.times()[k - 1]);
            inc
        })
        .collect()
}

/// Forward pass of the discrete recursion with cached activations.
#[derive(Debug, Clone)]
pub struct Unroll {
    /// `states[0] = z0`, `states[k]` after the k-th increment.
    pub states: Vec<Vec<f64>>,
    caches: Vec<MlpCache>,
}

/// Runs `z_k = z_{k-1} + G(z_{k-1}) dx_k` from `z0`.
pub fn forward_unroll(
    field: &NeuralField,
    z0: &[f64],
    increments: &[Vec<f64>],
) -> Result<Unroll, CdeError> {
    let (p, d) = (field.p, field.d);
    let mut states = Vec::with_capacity(increments.len() + 1);
    let mut caches = Vec::with_capacity(increments.len());
    states.push(z0.to_vec());
    for dx in increments {
        if dx.len() != d {
            return Err(CdeError::Shape(format!(
                "increment of length {}, expected {d}",
                dx.len()
            )));
        }
        let z = states.last().unwrap();
        let cache = field.forward(z);
        let g = cache.acts.last().unwrap();
        let next: Vec<f64> = (0..p)
            .map(|i| z[i] + (0..d).map(|j| g[i * d + j] * dx[j]).sum::<f64>())
            .collect();
        if next.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_GUARD) {
            return Err(CdeError::DivergedAtStep(states.len()));
        }
        states.push(next);
        caches.push(cache);
    }
    Ok(Unroll { states, caches })
}

/// Reverse pass: given `dL/dz_k` for every state (direct dependence only),
/// accumulates field gradients into `acc` and returns `dL/dz_0`.
pub fn backward_unroll(
    field: &NeuralField,
    unroll: &Unroll,
    increments: &[Vec<f64>],
    state_grads: &[Vec<f64>],
    acc: &mut NeuralField,
) -> Vec<f64> {
    let (p, d) = (field.p, field.d);
    let k_last = unroll.states.len() - 1;
    let mut g = state_grads[k_last].clone();
    for k in (1..=k_last).rev() {
        let dx = &increments[k - 1];
        let mut grad_out = vec![0.0; p * d];
        for i in 0..p {
            for j in 0..d {
                grad_out[i * d + j] = g[i] * dx[j];
            }
        }
        let through_field = field.backward(&unroll.caches[k - 1], &grad_out, acc);
        for i in 0..p {
            g[i] += through_field[i] + state_grads[k - 1][i];
        }
    }
    g
}
