//! Pointwise layers: sigmoid, binary cross-entropy, the linear head,
//! mean pooling, inverted dropout and the representation-projection layer.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::projections::{l2_norm, lp_norm, ProjectionKind, ProjectionSpec};
use crate::tensor::Tensor;

/// Clamp bound applied to predicted probabilities inside the loss.
pub const BCE_EPS: f64 = 1e-12;

/// Overflow-safe logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise sigmoid.
pub fn sigmoid(y_prime: &Tensor) -> Tensor {
    let data = y_prime.data().iter().map(|&x| sigmoid_scalar(x)).collect();
    Tensor::from_parts(y_prime.shape().to_vec(), data)
}

fn check_label(y: f64) -> Result<()> {
    if y == 0.0 || y == 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLabel(format!("label must be 0 or 1, got {y}")))
    }
}

/// Single-example binary cross-entropy with the prediction clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_single(y_hat: f64, y: f64) -> Result<f64> {
    check_label(y)?;
    let p = y_hat.clamp(BCE_EPS, 1.0 - BCE_EPS);
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
}

/// d(loss)/d(y_hat) for [`bce_single`].
pub fn bce_grad_y_hat(y_hat: f64, y: f64) -> f64 {
    let p = y_hat.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y / p) + (1.0 - y) / (1.0 - p)
}

/// Per-example losses and their mean over the batch.
pub fn bce_loss(y_hat: &[f64], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    if y_hat.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            y_hat.len(),
            y.len()
        )));
    }
    if y_hat.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut losses = Vec::with_capacity(y.len());
    for (&p, &label) in y_hat.iter().zip(y) {
        losses.push(bce_single(p, label)?);
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok((losses, mean))
}

/// `out = x w + b` for `x: [batch, k]`, `w: [k, 1]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: f64) -> Result<Tensor> {
    if x.shape().len() != 2 || w.shape().len() != 2 || w.cols() != 1 {
        return Err(Error::Shape(format!(
            "expected x [batch, k] and w [k, 1], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if x.cols() != w.rows() {
        return Err(Error::Shape(format!(
            "x has {} columns but w has {} rows",
            x.cols(),
            w.rows()
        )));
    }
    let batch = x.rows();
    let mut out = Vec::with_capacity(batch);
    for r in 0..batch {
        let mut acc = b;
        for (xi, wi) in x.row(r).iter().zip(w.data()) {
            acc += xi * wi;
        }
        out.push(acc);
    }
    Ok(Tensor::from_parts(vec![batch, 1], out))
}

/// Componentwise mean over the rows of a `[T, d]` sequence.
pub fn mean_pool(seq: &Tensor) -> Result<Vec<f64>> {
    let t = seq.rows();
    if t == 0 {
        return Err(Error::InvalidInput("empty sequence".into()));
    }
    let d = seq.cols();
    let mut out = vec![0.0; d];
    for r in 0..t {
        for (o, x) in out.iter_mut().zip(seq.row(r)) {
            *o += x;
        }
    }
    let inv = 1.0 / t as f64;
    for o in &mut out {
        *o *= inv;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted dropout: each component is zeroed with probability `rate` and
/// survivors are scaled by `1/(1-rate)`, so eval mode is the identity.
/// Returns the output and the per-component scale factors applied.
pub fn dropout(h: &[f64], rate: f64, mode: DropoutMode, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if mode == DropoutMode::Eval || rate == 0.0 {
        return Ok((h.to_vec(), vec![1.0; h.len()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep_scale = 1.0 / (1.0 - rate);
    let factors: Vec<f64> = (0..h.len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect();
    let out = h.iter().zip(&factors).map(|(x, f)| x * f).collect();
    Ok((out, factors))
}

/// How gradients flow back through the projection layer: the exact Jacobian
/// of the active branch, or a central-difference Jacobian for general p.
#[derive(Debug, Clone)]
pub enum ProjectionBackward {
    /// Input was feasible; the projection was the identity.
    Identity,
    /// L2 ball with the input outside: `J = (R/||v||)(I - vv^T/||v||^2)`.
    L2Radial { input: Vec<f64>, norm: f64, radius: f64 },
    /// Simplex or L1 ball: identity on the support minus the rank-one
    /// uniform correction restricted to the support; `signs` are all 1 for
    /// the simplex.
    SupportAffine { support: Vec<usize>, signs: Vec<f64> },
    /// General p: central finite differences on the kernel (step 1e-6).
    Numeric { input: Vec<f64>, spec: ProjectionSpec },
}

/// Projection of an intermediate representation onto the configured set,
/// together with the Jacobian information needed by the backward pass.
pub fn representation_project_cached(
    h: &[f64],
    spec: &ProjectionSpec,
) -> Result<(Vec<f64>, ProjectionBackward)> {
    spec.validate()?;
    match spec.kind {
        ProjectionKind::Simplex => {
            let w = crate::projections::project_simplex(h, spec.radius)?;
            let support: Vec<usize> = w
                .iter()
                .enumerate()
                .filter(|(_, &x)| x > 0.0)
                .map(|(i, _)| i)
                .collect();
            let signs = vec![1.0; support.len()];
            Ok((w, ProjectionBackward::SupportAffine { support, signs }))
        }
        ProjectionKind::LpBall => {
            if spec.p == 1.0 {
                if lp_norm(h, 1.0) <= spec.radius {
                    return Ok((h.to_vec(), ProjectionBackward::Identity));
                }
                let w = crate::projections::project_l1_ball(h, spec.radius)?;
                let support: Vec<usize> = w
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x != 0.0)
                    .map(|(i, _)| i)
                    .collect();
                let signs = support.iter().map(|&i| h[i].signum()).collect();
                Ok((w, ProjectionBackward::SupportAffine { support, signs }))
            } else if spec.p == 2.0 {
                let norm = l2_norm(h);
                if norm <= spec.radius {
                    return Ok((h.to_vec(), ProjectionBackward::Identity));
                }
                let w = crate::projections::project_l2_ball(h, spec.radius)?;
                Ok((
                    w,
                    ProjectionBackward::L2Radial {
                        input: h.to_vec(),
                        norm,
                        radius: spec.radius,
                    },
                ))
            } else {
                if lp_norm(h, spec.p) <= spec.radius {
                    return Ok((h.to_vec(), ProjectionBackward::Identity));
                }
                let w = crate::projections::project_lp_ball(h, spec.p, spec.radius)?;
                Ok((
                    w,
                    ProjectionBackward::Numeric {
                        input: h.to_vec(),
                        spec: *spec,
                    },
                ))
            }
        }
    }
}

/// Projection of a representation onto the configured set (no cache).
/// Feasible inputs pass through unchanged, bit for bit.
pub fn representation_project(h: &[f64], spec: &ProjectionSpec) -> Result<Vec<f64>> {
    Ok(representation_project_cached(h, spec)?.0)
}

const NUMERIC_JACOBIAN_STEP: f64 = 1e-6;

/// Pull an upstream gradient back through the projection layer.
pub fn projection_backward(cache: &ProjectionBackward, grad: &[f64]) -> Result<Vec<f64>> {
    match cache {
        ProjectionBackward::Identity => Ok(grad.to_vec()),
        ProjectionBackward::L2Radial {
            input,
            norm,
            radius,
        } => {
            // (R/||v||) (g - v (v.g)/||v||^2)
            let scale = radius / norm;
            let vg = crate::tensor::dot(input, grad);
            let coeff = vg / (norm * norm);
            Ok(grad
                .iter()
                .zip(input)
                .map(|(g, v)| scale * (g - coeff * v))
                .collect())
        }
        ProjectionBackward::SupportAffine { support, signs } => {
            let k = support.len() as f64;
            let mut signed_sum = 0.0;
            for (&i, &s) in support.iter().zip(signs) {
                signed_sum += s * grad[i];
            }
            let mut out = vec![0.0; grad.len()];
            for (&i, &s) in support.iter().zip(signs) {
                out[i] = grad[i] - s * signed_sum / k;
            }
            Ok(out)
        }
        ProjectionBackward::Numeric { input, spec } => {
            let n = input.len();
            let mut out = vec![0.0; n];
            let mut probe = input.clone();
            for j in 0..n {
                let orig = probe[j];
                probe[j] = orig + NUMERIC_JACOBIAN_STEP;
                let plus = spec.project(&probe)?;
                probe[j] = orig - NUMERIC_JACOBIAN_STEP;
                let minus = spec.project(&probe)?;
                probe[j] = orig;
                let mut acc = 0.0;
                for ((p, m), g) in plus.iter().zip(&minus).zip(grad) {
                    acc += g * (p - m);
                }
                out[j] = acc / (2.0 * NUMERIC_JACOBIAN_STEP);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_symmetry_point() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }

    #[test]
    fn sigmoid_complement() {
        for &x in &[0.3, 1.7, -2.4, 11.0] {
            let s = sigmoid_scalar(x) + sigmoid_scalar(-x);
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        let y = sigmoid_scalar(100.0);
        assert!(y.is_finite());
        assert!(y > 1.0 - 1e-40);
        assert!(y <= 1.0);
        let y = sigmoid_scalar(-1000.0);
        assert!(y >= 0.0 && y < 1e-40);
    }

    #[test]
    fn bce_half_prediction_is_ln_two() {
        let loss = bce_single(0.5, 1.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_limit() {
        let loss = bce_single(1.0 - 1e-12, 1.0).unwrap();
        assert!(loss > 0.0 && loss < 2e-12);
    }

    #[test]
    fn bce_batch_mean() {
        let (losses, mean) = bce_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert_eq!(losses.len(), 2);
        assert!((mean - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_non_binary_labels() {
        assert!(matches!(
            bce_single(0.5, 0.5),
            Err(Error::InvalidLabel(_))
        ));
    }

    #[test]
    fn linear_forward_examples() {
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let w0 = Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap();
        assert_eq!(linear_forward(&x, &w0, 0.0).unwrap().data(), &[0.0]);
        let w1 = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(linear_forward(&x, &w1, 1.0).unwrap().data(), &[4.0]);
        let x5 = Tensor::matrix(1, 1, vec![5.0]).unwrap();
        let wid = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        assert_eq!(linear_forward(&x5, &wid, 0.0).unwrap().data(), &[5.0]);
    }

    #[test]
    fn linear_forward_shape_error() {
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let w = Tensor::matrix(3, 1, vec![0.0; 3]).unwrap();
        assert!(matches!(linear_forward(&x, &w, 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_pool_examples() {
        let single = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(mean_pool(&single).unwrap(), vec![1.0, -2.0, 0.5]);
        let cancel = Tensor::matrix(2, 2, vec![1.0, -3.0, -1.0, 3.0]).unwrap();
        assert_eq!(mean_pool(&cancel).unwrap(), vec![0.0, 0.0]);
        let avg = Tensor::matrix(2, 2, vec![1.0, 3.0, 3.0, 1.0]).unwrap();
        assert_eq!(mean_pool(&avg).unwrap(), vec![2.0, 2.0]);
        let empty = Tensor::zeros(vec![0, 2]);
        assert!(mean_pool(&empty).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let h = [1.0, -2.0, 3.0];
        let (out, _) = dropout(&h, 0.0, DropoutMode::Train, 7).unwrap();
        assert_eq!(out, h);
        let (out, _) = dropout(&h, 0.5, DropoutMode::Eval, 7).unwrap();
        assert_eq!(out, h);
        assert!(dropout(&h, 1.0, DropoutMode::Train, 7).is_err());
    }

    #[test]
    fn dropout_is_deterministic_given_seed() {
        let h = [1.0; 32];
        let (a, _) = dropout(&h, 0.5, DropoutMode::Train, 99).unwrap();
        let (b, _) = dropout(&h, 0.5, DropoutMode::Train, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_preserves_expectation() {
        // Monte Carlo: mean over many masks approaches the identity.
        let h = [1.0, 1.0, 1.0, 1.0];
        let trials = 100_000;
        let mut acc = [0.0; 4];
        for seed in 0..trials {
            let (out, _) = dropout(&h, 0.5, DropoutMode::Train, seed).unwrap();
            for (a, o) in acc.iter_mut().zip(&out) {
                *a += o;
            }
        }
        for a in &acc {
            let mean = a / trials as f64;
            assert!((mean - 1.0).abs() < 0.02, "mean {mean} drifted");
        }
    }

    #[test]
    fn projection_layer_identity_for_roomy_ball() {
        let spec = ProjectionSpec::lp_ball(2.0, 1e6).unwrap();
        let h = [4.0, -3.0, 2.5];
        let (out, cache) = representation_project_cached(&h, &spec).unwrap();
        assert_eq!(out, h);
        assert!(matches!(cache, ProjectionBackward::Identity));
    }

    #[test]
    fn projection_layer_radial_case() {
        let spec = ProjectionSpec::lp_ball(2.0, 5.0).unwrap();
        let out = representation_project(&[6.0, 8.0], &spec).unwrap();
        assert!((out[0] - 3.0).abs() < 1e-12 && (out[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn projection_layer_simplex_case() {
        let spec = ProjectionSpec::simplex(1.0).unwrap();
        let out = representation_project(&[2.0, 0.0], &spec).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-10 && out[1].abs() < 1e-10);
    }
}
