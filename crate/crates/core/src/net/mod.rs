//! The classifier: encoder (mean-pool or 2-layer biLSTM), optional
//! representation projection, inverted dropout, linear head and sigmoid,
//! with exact hand-written backward passes.

pub mod lstm;
pub mod ops;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::projections::ProjectionSpec;
use crate::tensor::{dot, Tensor};
use lstm::{bilstm_backward, bilstm_forward_cached, BiLstmCache, BiLstmParams, LstmDirParams};
use ops::{
    dropout, projection_backward, representation_project_cached, sigmoid_scalar, DropoutMode,
    ProjectionBackward,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Componentwise mean over the token vectors; the classifier input
    /// dimension equals the feature dimension.
    MeanPool,
    /// Two stacked bidirectional LSTM layers; the classifier consumes the
    /// concatenated final forward/backward states (`2 * hidden_dim`).
    BiLstm2,
}

/// All trainable parameters plus the structural configuration they depend
/// on. Initialization is a deterministic function of `rng_seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub lstm: Option<BiLstmParams>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
    pub dropout_rate: f64,
    pub projection: Option<ProjectionSpec>,
    pub rng_seed: u64,
}

impl ModelParams {
    pub fn init(
        encoder: EncoderKind,
        input_dim: usize,
        hidden_dim: usize,
        dropout_rate: f64,
        projection: Option<ProjectionSpec>,
        rng_seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be >= 1".into()));
        }
        if encoder == EncoderKind::BiLstm2 && hidden_dim == 0 {
            return Err(Error::InvalidConfig("hidden_dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        if let Some(spec) = &projection {
            spec.validate()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let lstm = match encoder {
            EncoderKind::MeanPool => None,
            EncoderKind::BiLstm2 => {
                let bound = 1.0 / (hidden_dim as f64).sqrt();
                let mut dir = |in_dim: usize| -> LstmDirParams {
                    let mut draw = |n: usize| -> Vec<f64> {
                        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                    };
                    LstmDirParams {
                        w_x: Tensor::from_parts(
                            vec![4 * hidden_dim, in_dim],
                            draw(4 * hidden_dim * in_dim),
                        ),
                        w_h: Tensor::from_parts(
                            vec![4 * hidden_dim, hidden_dim],
                            draw(4 * hidden_dim * hidden_dim),
                        ),
                        b: draw(4 * hidden_dim),
                    }
                };
                let layers = (0..2)
                    .map(|l| {
                        let in_dim = if l == 0 { input_dim } else { 2 * hidden_dim };
                        lstm::LstmLayerParams {
                            fwd: dir(in_dim),
                            bwd: dir(in_dim),
                        }
                    })
                    .collect();
                Some(BiLstmParams { layers })
            }
        };
        let repr = match encoder {
            EncoderKind::MeanPool => input_dim,
            EncoderKind::BiLstm2 => 2 * hidden_dim,
        };
        let head_bound = 1.0 / (repr as f64).sqrt();
        let head_w = (0..repr)
            .map(|_| rng.random_range(-head_bound..head_bound))
            .collect();
        Ok(Self {
            encoder,
            input_dim,
            hidden_dim,
            lstm,
            head_w,
            head_b: 0.0,
            dropout_rate,
            projection,
            rng_seed,
        })
    }

    /// Classifier input dimension: `2*hidden_dim` for the biLSTM encoder,
    /// `input_dim` for mean pooling.
    pub fn repr_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::MeanPool => self.input_dim,
            EncoderKind::BiLstm2 => 2 * self.hidden_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        let lstm: usize = self
            .lstm
            .as_ref()
            .map(|l| {
                l.layers
                    .iter()
                    .map(|layer| {
                        let d = |dir: &LstmDirParams| {
                            dir.w_x.data().len() + dir.w_h.data().len() + dir.b.len()
                        };
                        d(&layer.fwd) + d(&layer.bwd)
                    })
                    .sum()
            })
            .unwrap_or(0);
        lstm + self.head_w.len() + 1
    }

    /// All parameters in a fixed order (LSTM blocks, head weights, head
    /// bias); the inverse of [`ModelParams::assign_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        if let Some(lstm) = &self.lstm {
            flatten_bilstm(lstm, &mut out);
        }
        out.extend_from_slice(&self.head_w);
        out.push(self.head_b);
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut k = 0;
        if let Some(lstm) = &mut self.lstm {
            assign_bilstm(lstm, flat, &mut k);
        }
        for w in &mut self.head_w {
            *w = flat[k];
            k += 1;
        }
        self.head_b = flat[k];
        Ok(())
    }

    /// SGD step: `theta -= lr * grad`.
    pub fn apply_gradient(&mut self, grads: &ModelGrads, lr: f64) {
        if let (Some(lstm), Some(glstm)) = (&mut self.lstm, &grads.lstm) {
            for (layer, glayer) in lstm.layers.iter_mut().zip(&glstm.layers) {
                for (dir, gdir) in [
                    (&mut layer.fwd, &glayer.fwd),
                    (&mut layer.bwd, &glayer.bwd),
                ] {
                    for (w, g) in dir.w_x.data_mut().iter_mut().zip(gdir.w_x.data()) {
                        *w -= lr * g;
                    }
                    for (w, g) in dir.w_h.data_mut().iter_mut().zip(gdir.w_h.data()) {
                        *w -= lr * g;
                    }
                    for (w, g) in dir.b.iter_mut().zip(&gdir.b) {
                        *w -= lr * g;
                    }
                }
            }
        }
        for (w, g) in self.head_w.iter_mut().zip(&grads.head_w) {
            *w -= lr * g;
        }
        self.head_b -= lr * grads.head_b;
    }
}

fn flatten_bilstm(p: &BiLstmParams, out: &mut Vec<f64>) {
    for layer in &p.layers {
        for dir in [&layer.fwd, &layer.bwd] {
            out.extend_from_slice(dir.w_x.data());
            out.extend_from_slice(dir.w_h.data());
            out.extend_from_slice(&dir.b);
        }
    }
}

fn assign_bilstm(p: &mut BiLstmParams, flat: &[f64], k: &mut usize) {
    for layer in &mut p.layers {
        for dir in [&mut layer.fwd, &mut layer.bwd] {
            for v in dir.w_x.data_mut() {
                *v = flat[*k];
                *k += 1;
            }
            for v in dir.w_h.data_mut() {
                *v = flat[*k];
                *k += 1;
            }
            for v in &mut dir.b {
                *v = flat[*k];
                *k += 1;
            }
        }
    }
}

/// Gradients with the same block structure as [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub lstm: Option<BiLstmParams>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            lstm: params.lstm.as_ref().map(|l| {
                BiLstmParams::zeros(
                    params.input_dim,
                    params.hidden_dim,
                    l.layers.len(),
                )
            }),
            head_w: vec![0.0; params.head_w.len()],
            head_b: 0.0,
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelGrads, scale: f64) {
        if let (Some(a), Some(b)) = (&mut self.lstm, &other.lstm) {
            for (layer, olayer) in a.layers.iter_mut().zip(&b.layers) {
                for (dir, odir) in [
                    (&mut layer.fwd, &olayer.fwd),
                    (&mut layer.bwd, &olayer.bwd),
                ] {
                    for (w, o) in dir.w_x.data_mut().iter_mut().zip(odir.w_x.data()) {
                        *w += scale * o;
                    }
                    for (w, o) in dir.w_h.data_mut().iter_mut().zip(odir.w_h.data()) {
                        *w += scale * o;
                    }
                    for (w, o) in dir.b.iter_mut().zip(&odir.b) {
                        *w += scale * o;
                    }
                }
            }
        }
        for (w, o) in self.head_w.iter_mut().zip(&other.head_w) {
            *w += scale * o;
        }
        self.head_b += scale * other.head_b;
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(lstm) = &self.lstm {
            flatten_bilstm(lstm, &mut out);
        }
        out.extend_from_slice(&self.head_w);
        out.push(self.head_b);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Whether dropout is active, and the seed that fixes its mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Eval,
    Train { dropout_seed: u64 },
}

/// Intermediate activations kept for [`model_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    lstm: Option<BiLstmCache>,
    proj: Option<ProjectionBackward>,
    drop_factors: Vec<f64>,
    h_drop: Vec<f64>,
    pub y_hat: f64,
}

/// Run the model on one featurized example (`[T, input_dim]`), producing the
/// positive-class probability and the cache for the backward pass.
pub fn model_forward(
    features: &Tensor,
    params: &ModelParams,
    phase: Phase,
) -> Result<(f64, ForwardCache)> {
    if features.rows() == 0 {
        return Err(Error::InvalidInput("empty feature sequence".into()));
    }
    if features.cols() != params.input_dim {
        return Err(Error::Shape(format!(
            "feature dim {} != model input dim {}",
            features.cols(),
            params.input_dim
        )));
    }
    let (h_enc, lstm_cache) = match params.encoder {
        EncoderKind::MeanPool => (ops::mean_pool(features)?, None),
        EncoderKind::BiLstm2 => {
            let lstm = params
                .lstm
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("biLSTM encoder without weights".into()))?;
            let (h, cache) = bilstm_forward_cached(features, lstm)?;
            (h, Some(cache))
        }
    };
    let (h_proj, proj_cache) = match &params.projection {
        Some(spec) => {
            let (h, cache) = representation_project_cached(&h_enc, spec)?;
            (h, Some(cache))
        }
        None => (h_enc, None),
    };
    let (h_drop, drop_factors) = match phase {
        Phase::Eval => (h_proj.clone(), vec![1.0; h_proj.len()]),
        Phase::Train { dropout_seed } => dropout(
            &h_proj,
            params.dropout_rate,
            DropoutMode::Train,
            dropout_seed,
        )?,
    };
    if params.head_w.len() != h_drop.len() {
        return Err(Error::Shape(format!(
            "head expects {} inputs, representation has {}",
            params.head_w.len(),
            h_drop.len()
        )));
    }
    let logit = dot(&params.head_w, &h_drop) + params.head_b;
    let y_hat = sigmoid_scalar(logit);
    Ok((
        y_hat,
        ForwardCache {
            lstm: lstm_cache,
            proj: proj_cache,
            drop_factors,
            h_drop,
            y_hat,
        },
    ))
}

/// Exact gradients of the scalar loss with respect to every parameter, given
/// `d_yhat = d(loss)/d(y_hat)` from the loss function.
pub fn model_backward(
    cache: &ForwardCache,
    params: &ModelParams,
    d_yhat: f64,
) -> Result<ModelGrads> {
    let y = cache.y_hat;
    let d_logit = d_yhat * y * (1.0 - y);
    let mut grads = ModelGrads::zeros_like(params);
    for (g, h) in grads.head_w.iter_mut().zip(&cache.h_drop) {
        *g = d_logit * h;
    }
    grads.head_b = d_logit;

    let d_h_drop: Vec<f64> = params.head_w.iter().map(|w| d_logit * w).collect();
    let d_h_proj: Vec<f64> = d_h_drop
        .iter()
        .zip(&cache.drop_factors)
        .map(|(g, f)| g * f)
        .collect();
    let d_h_enc = match &cache.proj {
        Some(proj) => projection_backward(proj, &d_h_proj)?,
        None => d_h_proj,
    };
    match params.encoder {
        EncoderKind::MeanPool => {
            // Mean pooling has no parameters and input gradients are unused.
        }
        EncoderKind::BiLstm2 => {
            let lstm = params
                .lstm
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("biLSTM encoder without weights".into()))?;
            let lstm_cache = cache
                .lstm
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("cache missing LSTM activations".into()))?;
            grads.lstm = Some(bilstm_backward(lstm, lstm_cache, &d_h_enc)?);
        }
    }
    Ok(grads)
}

/// Finite-difference gradient oracles used by the verification suites.
pub mod check {
    use super::*;

    /// Central finite differences of an arbitrary scalar function of the
    /// parameters, in [`ModelParams::flatten`] order.
    pub fn finite_difference_gradient(
        params: &ModelParams,
        step: f64,
        mut f: impl FnMut(&ModelParams) -> Result<f64>,
    ) -> Result<Vec<f64>> {
        let base = params.flatten();
        let mut work = params.clone();
        let mut out = Vec::with_capacity(base.len());
        for j in 0..base.len() {
            let mut probe = base.clone();
            probe[j] = base[j] + step;
            work.assign_flat(&probe)?;
            let plus = f(&work)?;
            probe[j] = base[j] - step;
            work.assign_flat(&probe)?;
            let minus = f(&work)?;
            out.push((plus - minus) / (2.0 * step));
        }
        Ok(out)
    }

    /// Worst per-parameter relative error between two gradient vectors.
    /// Each component is compared against `max(|a|, |b|, floor)` so that
    /// near-zero gradients are judged in absolute terms.
    pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
            .fold(0.0f64, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ops::{bce_grad_y_hat, bce_single};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_features(seed: u64, t: usize, d: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(t, d, data).unwrap()
    }

    #[test]
    fn zero_params_predict_one_half() {
        let mut params =
            ModelParams::init(EncoderKind::MeanPool, 3, 0, 0.0, None, 1).unwrap();
        params.head_w.iter_mut().for_each(|w| *w = 0.0);
        params.head_b = 0.0;
        for seed in 0..5 {
            let x = random_features(seed, 2, 3);
            let (y, _) = model_forward(&x, &params, Phase::Eval).unwrap();
            assert_eq!(y, 0.5);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let params = ModelParams::init(EncoderKind::BiLstm2, 3, 2, 0.2, None, 5).unwrap();
        let x = random_features(9, 4, 3);
        let (a, _) = model_forward(&x, &params, Phase::Train { dropout_seed: 42 }).unwrap();
        let (b, _) = model_forward(&x, &params, Phase::Train { dropout_seed: 42 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let a = ModelParams::init(EncoderKind::BiLstm2, 3, 2, 0.1, None, 77).unwrap();
        let b = ModelParams::init(EncoderKind::BiLstm2, 3, 2, 0.1, None, 77).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let c = ModelParams::init(EncoderKind::BiLstm2, 3, 2, 0.1, None, 78).unwrap();
        assert_ne!(a.flatten(), c.flatten());
    }

    #[test]
    fn roomy_ball_projection_is_bitwise_identity() {
        let spec = ProjectionSpec::lp_ball(2.0, 1e6).unwrap();
        let base = ModelParams::init(EncoderKind::MeanPool, 4, 0, 0.0, None, 3).unwrap();
        let mut projected = base.clone();
        projected.projection = Some(spec);
        for seed in 0..10 {
            let x = random_features(seed, 3, 4);
            let (ya, _) = model_forward(&x, &base, Phase::Eval).unwrap();
            let (yb, _) = model_forward(&x, &projected, Phase::Eval).unwrap();
            assert_eq!(ya.to_bits(), yb.to_bits());
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let params = ModelParams::init(EncoderKind::BiLstm2, 3, 2, 0.0, None, 11).unwrap();
        let x = random_features(13, 3, 3);
        let (_, cache) = model_forward(&x, &params, Phase::Eval).unwrap();
        let grads = model_backward(&cache, &params, 0.0).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn flatten_assign_roundtrip() {
        let params = ModelParams::init(EncoderKind::BiLstm2, 3, 2, 0.0, None, 17).unwrap();
        let flat = params.flatten();
        assert_eq!(flat.len(), params.param_count());
        let mut other = ModelParams::init(EncoderKind::BiLstm2, 3, 2, 0.0, None, 999).unwrap();
        other.assign_flat(&flat).unwrap();
        assert_eq!(other.flatten(), flat);
    }

    fn loss_of(params: &ModelParams, x: &Tensor, label: f64, phase: Phase) -> f64 {
        let (y, _) = model_forward(x, params, phase).unwrap();
        bce_single(y, label).unwrap()
    }

    fn grad_check_case(encoder: EncoderKind, projection: Option<ProjectionSpec>, seed: u64) {
        let (d_in, d_h) = (3, 2);
        let mut params = ModelParams::init(encoder, d_in, d_h, 0.3, None, seed).unwrap();
        let x = random_features(seed + 100, 3, d_in);
        let label = if seed % 2 == 0 { 1.0 } else { 0.0 };
        let phase = Phase::Train { dropout_seed: seed * 31 + 7 };

        // Pick a radius strictly inside the active region so finite
        // differences never cross the projection boundary.
        if let Some(mut spec) = projection {
            let h = match encoder {
                EncoderKind::MeanPool => ops::mean_pool(&x).unwrap(),
                EncoderKind::BiLstm2 => {
                    lstm::bilstm_forward(&x, params.lstm.as_ref().unwrap()).unwrap()
                }
            };
            let norm = crate::projections::lp_norm(&h, spec.p);
            spec.radius = (0.7 * norm).max(1e-3);
            params.projection = Some(spec);
        }

        let (_, cache) = model_forward(&x, &params, phase).unwrap();
        let d_yhat = bce_grad_y_hat(cache.y_hat, label);
        let analytic = model_backward(&cache, &params, d_yhat).unwrap().flatten();
        let numeric = check::finite_difference_gradient(&params, 1e-5, |p| {
            Ok(loss_of(p, &x, label, phase))
        })
        .unwrap();
        let err = check::max_relative_error(&analytic, &numeric, 1e-4);
        assert!(
            err < 1e-4,
            "gradient mismatch {err} for {encoder:?} {:?}",
            params.projection
        );
    }

    #[test]
    fn gradients_match_finite_differences_meanpool() {
        grad_check_case(EncoderKind::MeanPool, None, 2);
    }

    #[test]
    fn gradients_match_finite_differences_bilstm() {
        grad_check_case(EncoderKind::BiLstm2, None, 4);
    }

    #[test]
    fn gradients_match_with_l2_projection() {
        grad_check_case(
            EncoderKind::BiLstm2,
            Some(ProjectionSpec::lp_ball(2.0, 1.0).unwrap()),
            6,
        );
    }

    #[test]
    fn gradients_match_with_simplex_projection() {
        grad_check_case(
            EncoderKind::MeanPool,
            Some(ProjectionSpec::simplex(1.0).unwrap()),
            8,
        );
    }

    #[test]
    fn gradients_match_with_l1_projection() {
        grad_check_case(
            EncoderKind::MeanPool,
            Some(ProjectionSpec::lp_ball(1.0, 1.0).unwrap()),
            10,
        );
    }

    #[test]
    fn gradients_match_with_l4_projection() {
        grad_check_case(
            EncoderKind::BiLstm2,
            Some(ProjectionSpec::lp_ball(4.0, 1.0).unwrap()),
            12,
        );
    }

    #[test]
    fn interior_projection_grads_equal_no_projection_grads() {
        let base = ModelParams::init(EncoderKind::MeanPool, 4, 0, 0.0, None, 21).unwrap();
        let mut roomy = base.clone();
        roomy.projection = Some(ProjectionSpec::lp_ball(2.0, 1e6).unwrap());
        let x = random_features(22, 2, 4);
        let (ya, ca) = model_forward(&x, &base, Phase::Eval).unwrap();
        let (yb, cb) = model_forward(&x, &roomy, Phase::Eval).unwrap();
        assert_eq!(ya.to_bits(), yb.to_bits());
        let ga = model_backward(&ca, &base, 1.0).unwrap().flatten();
        let gb = model_backward(&cb, &roomy, 1.0).unwrap().flatten();
        assert_eq!(ga, gb);
    }
}
