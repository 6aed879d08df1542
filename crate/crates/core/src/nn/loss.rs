//! Forward pass, composite loss, and exact backprop.
//!
//! The objective optimized by a client is
//!
//! ```text
//! total = CE(batch) + alpha_l2r * mean_n ||z_n||^2 + (mu/2) * ||theta - anchor||^2
//! ```
//!
//! where `z_n` is the post-activation output of the last base layer for row
//! `n`, CE is the batch-mean categorical cross-entropy computed through
//! log-sum-exp, and the proximal distance runs over every parameter. The
//! gradient returned here is the exact derivative of that total; the L2R
//! term reaches base-layer parameters only through `z`.

use crate::error::{CoreError, Result};
use crate::nn::params::{Minibatch, ModelParams};
use crate::scalar::Scalar;

/// Loss decomposition for one minibatch. `l2r` is the raw mean squared
/// representation norm (before the `alpha` factor); `prox` already includes
/// the `mu/2` factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<T> {
    pub data_loss: T,
    pub l2r: T,
    pub prox: T,
    pub total: T,
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut s0 = T::zero();
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    let mut s3 = T::zero();
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let ra = ca.remainder();
    let rb = cb.remainder();
    for (x, y) in ca.zip(cb) {
        s0 = s0 + x[0] * y[0];
        s1 = s1 + x[1] * y[1];
        s2 = s2 + x[2] * y[2];
        s3 = s3 + x[3] * y[3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    let ry_start = y.len() / 4 * 4;
    let cy = y.chunks_exact_mut(4);
    let cx = x.chunks_exact(4);
    for (dy, dx) in cy.zip(cx) {
        dy[0] = dy[0] + a * dx[0];
        dy[1] = dy[1] + a * dx[1];
        dy[2] = dy[2] + a * dx[2];
        dy[3] = dy[3] + a * dx[3];
    }
    for (dy, dx) in y[ry_start..].iter_mut().zip(&x[ry_start..]) {
        *dy = *dy + a * *dx;
    }
}

/// All layer activations for a batch: `acts[0]` is the input,
/// `acts[i+1]` the post-activation output of layer `i` (the final entry is
/// the pre-softmax logits).
fn forward_acts<T: Scalar>(params: &ModelParams<T>, inputs: &[T], batch: usize) -> Vec<Vec<T>> {
    let num_layers = params.layers.len();
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(num_layers + 1);
    acts.push(inputs.to_vec());
    for (i, layer) in params.layers.iter().enumerate() {
        let prev = &acts[i];
        let mut out = vec![T::zero(); batch * layer.out_dim];
        for n in 0..batch {
            let x = &prev[n * layer.in_dim..(n + 1) * layer.in_dim];
            let row = &mut out[n * layer.out_dim..(n + 1) * layer.out_dim];
            for (o, v) in row.iter_mut().enumerate() {
                *v = layer.bias[o] + dot(layer.weight_row(o), x);
            }
        }
        if i + 1 < num_layers {
            for v in out.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        acts.push(out);
    }
    acts
}

/// Forward pass: returns pre-softmax logits (`batch x num_classes`) and the
/// base representation (`batch x base_repr_dim`, the post-activation output
/// of the last base layer).
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Minibatch<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    if batch.in_dim != params.in_dim() {
        return Err(CoreError::DimMismatch(format!(
            "batch features {} != model input {}",
            batch.in_dim,
            params.in_dim()
        )));
    }
    if params.base_cut > params.layers.len() {
        return Err(CoreError::InvalidConfig(format!(
            "base_cut {} exceeds layer count {}",
            params.base_cut,
            params.layers.len()
        )));
    }
    let acts = forward_acts(params, &batch.inputs, batch.len());
    let logits = acts[params.layers.len()].clone();
    let base_repr = acts[params.base_cut].clone();
    Ok((logits, base_repr))
}

/// Per-row softmax cross-entropy through log-sum-exp. Returns the summed
/// loss and writes `softmax(x) - onehot` into `dlogits`.
fn softmax_ce<T: Scalar>(
    logits: &[T],
    labels: &[usize],
    num_classes: usize,
    dlogits: &mut [T],
) -> Result<T> {
    let mut loss_sum = T::zero();
    for (n, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(CoreError::InvalidConfig(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        let row = &logits[n * num_classes..(n + 1) * num_classes];
        let drow = &mut dlogits[n * num_classes..(n + 1) * num_classes];
        let max = row.iter().copied().fold(row[0], T::max);
        let mut sum_exp = T::zero();
        for (d, &v) in drow.iter_mut().zip(row) {
            let e = (v - max).exp();
            *d = e;
            sum_exp = sum_exp + e;
        }
        let lse = max + sum_exp.ln();
        loss_sum = loss_sum + (lse - row[label]);
        let inv = T::one() / sum_exp;
        for d in drow.iter_mut() {
            *d = *d * inv;
        }
        drow[label] = drow[label] - T::one();
    }
    Ok(loss_sum)
}

/// Composite loss and its exact gradient for one minibatch.
///
/// `anchor` is the round's received global model (the proximal center).
/// Returns the loss decomposition and a gradient with the same shapes as
/// `params`.
pub fn loss_and_grad<T: Scalar>(
    params: &ModelParams<T>,
    anchor: &ModelParams<T>,
    batch: &Minibatch<T>,
    mu: f64,
    alpha_l2r: f64,
) -> Result<(LossTerms<T>, ModelParams<T>)> {
    if mu < 0.0 || alpha_l2r < 0.0 {
        return Err(CoreError::InvalidConfig(format!(
            "penalty weights must be >= 0 (mu={mu}, alpha_l2r={alpha_l2r})"
        )));
    }
    if !params.same_shape(anchor) {
        return Err(CoreError::DimMismatch(
            "anchor shape differs from params".into(),
        ));
    }
    if batch.in_dim != params.in_dim() {
        return Err(CoreError::DimMismatch(format!(
            "batch features {} != model input {}",
            batch.in_dim,
            params.in_dim()
        )));
    }
    if batch.inputs.iter().any(|v| !v.is_finite())
        || !params.is_finite()
        || !anchor.is_finite()
    {
        return Err(CoreError::NonFinite("loss_and_grad inputs".into()));
    }

    let b = batch.len();
    let inv_b = T::one() / T::from_usize(b);
    let num_layers = params.layers.len();
    let num_classes = params.num_classes();
    let acts = forward_acts(params, &batch.inputs, b);
    let logits = &acts[num_layers];

    // Data term and dL/dlogits (softmax - onehot, scaled by 1/B below).
    let mut dlogits = vec![T::zero(); logits.len()];
    let loss_sum = softmax_ce(logits, &batch.labels, num_classes, &mut dlogits)?;
    let data_loss = loss_sum * inv_b;
    for d in dlogits.iter_mut() {
        *d = *d * inv_b;
    }

    // L2R term: mean squared norm of the base representation.
    let z = &acts[params.base_cut];
    let l2r = dot(z, z) * inv_b;
    let alpha = T::from_f64(alpha_l2r);

    let mut grads = params.zeros_like();
    // Upstream gradient w.r.t. the post-activation output of the current
    // layer (for the last layer: w.r.t. logits directly).
    let mut d_out = dlogits;
    for i in (0..num_layers).rev() {
        let layer = &params.layers[i];
        let out_act = &acts[i + 1];
        // The L2R penalty attaches to the post-activation output of the
        // last base layer before the ReLU mask is applied.
        if i + 1 == params.base_cut && alpha_l2r > 0.0 {
            let scale = alpha * (T::one() + T::one()) * inv_b;
            axpy(&mut d_out, scale, z);
        }
        if i + 1 < num_layers {
            for (d, &a) in d_out.iter_mut().zip(out_act) {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        // d_out now holds dL/d(pre-activation) for layer i.
        let g = &mut grads.layers[i];
        let prev = &acts[i];
        for n in 0..b {
            let x = &prev[n * layer.in_dim..(n + 1) * layer.in_dim];
            let drow = &d_out[n * layer.out_dim..(n + 1) * layer.out_dim];
            for (o, &dz) in drow.iter().enumerate() {
                if dz != T::zero() {
                    g.bias[o] = g.bias[o] + dz;
                    axpy(
                        &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim],
                        dz,
                        x,
                    );
                }
            }
        }
        if i > 0 {
            let mut d_prev = vec![T::zero(); b * layer.in_dim];
            for n in 0..b {
                let drow = &d_out[n * layer.out_dim..(n + 1) * layer.out_dim];
                let dprow = &mut d_prev[n * layer.in_dim..(n + 1) * layer.in_dim];
                for (o, &dz) in drow.iter().enumerate() {
                    if dz != T::zero() {
                        axpy(dprow, dz, layer.weight_row(o));
                    }
                }
            }
            d_out = d_prev;
        }
    }

    // Proximal term and its gradient.
    let mu_t = T::from_f64(mu);
    let half = T::from_f64(0.5);
    let prox = mu_t * half * params.l2_distance_sq(anchor);
    if mu > 0.0 {
        for ((g, p), a) in grads
            .iter_params_mut()
            .zip(params.iter_params())
            .zip(anchor.iter_params())
        {
            *g = *g + mu_t * (p - a);
        }
    }

    let total = data_loss + alpha * l2r + prox;
    let terms = LossTerms {
        data_loss,
        l2r,
        prox,
        total,
    };
    if !total.is_finite() {
        return Err(CoreError::NonFinite("loss".into()));
    }
    Ok((terms, grads))
}

/// Classification accuracy: fraction of rows whose argmax logit equals the
/// label. Ties break toward the lowest class index.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    inputs: &[T],
    labels: &[usize],
) -> Result<f64> {
    if labels.is_empty() {
        return Err(CoreError::Empty("evaluation dataset".into()));
    }
    let in_dim = params.in_dim();
    if inputs.len() != labels.len() * in_dim {
        return Err(CoreError::DimMismatch(format!(
            "evaluation storage {} != {} rows x {} features",
            inputs.len(),
            labels.len(),
            in_dim
        )));
    }
    let num_classes = params.num_classes();
    let mut correct = 0usize;
    // Evaluate in chunks to bound peak activation memory.
    let chunk = 256usize;
    let mut start = 0usize;
    while start < labels.len() {
        let end = (start + chunk).min(labels.len());
        let rows = end - start;
        let acts = forward_acts(params, &inputs[start * in_dim..end * in_dim], rows);
        let logits = &acts[params.layers.len()];
        for n in 0..rows {
            let row = &logits[n * num_classes..(n + 1) * num_classes];
            let mut best = 0usize;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            if best == labels[start + n] {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / labels.len() as f64)
}
