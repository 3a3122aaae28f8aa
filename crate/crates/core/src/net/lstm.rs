//! Two-layer bidirectional LSTM with an exact hand-written backward pass.
//!
//! Gate layout inside the stacked weight matrices is `[input, forget,
//! candidate, output]`, each block `hidden_dim` rows. The encoder output is
//! the top layer's final forward state concatenated with its final backward
//! state.

use crate::error::{Error, Result};
use crate::net::ops::sigmoid_scalar;
use crate::tensor::{matvec, matvec_transpose_add, outer_add, Tensor};

/// Weights for one direction of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirParams {
    /// `[4*hidden, input]`
    pub w_x: Tensor,
    /// `[4*hidden, hidden]`
    pub w_h: Tensor,
    /// `[4*hidden]`
    pub b: Vec<f64>,
}

impl LstmDirParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_x: Tensor::zeros(vec![4 * hidden_dim, input_dim]),
            w_h: Tensor::zeros(vec![4 * hidden_dim, hidden_dim]),
            b: vec![0.0; 4 * hidden_dim],
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.cols()
    }
}

/// One stacked layer: forward and backward direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub fwd: LstmDirParams,
    pub bwd: LstmDirParams,
}

/// The full 2-layer bidirectional stack.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams {
    pub layers: Vec<LstmLayerParams>,
}

impl BiLstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { 2 * hidden_dim };
                LstmLayerParams {
                    fwd: LstmDirParams::zeros(in_dim, hidden_dim),
                    bwd: LstmDirParams::zeros(in_dim, hidden_dim),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].fwd.hidden_dim()
    }
}

/// Per-step activations for one direction, indexed by processing step.
#[derive(Debug, Clone)]
struct DirCache {
    /// Time indices in processing order (`0..T` forward, reversed backward).
    order: Vec<usize>,
    gate_i: Vec<Vec<f64>>,
    gate_f: Vec<Vec<f64>>,
    gate_g: Vec<Vec<f64>>,
    gate_o: Vec<Vec<f64>>,
    cell: Vec<Vec<f64>>,
    tanh_cell: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

/// Activations for the whole stack, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BiLstmCache {
    dirs: Vec<[DirCache; 2]>,
    /// `layer_inputs[l][t]` is the input vector consumed by layer `l` at
    /// time `t` (the raw features for `l = 0`).
    layer_inputs: Vec<Vec<Vec<f64>>>,
    hidden_dim: usize,
}

fn run_direction(params: &LstmDirParams, inputs: &[Vec<f64>], order: Vec<usize>) -> DirCache {
    let h_dim = params.hidden_dim();
    let steps = order.len();
    let mut cache = DirCache {
        order,
        gate_i: Vec::with_capacity(steps),
        gate_f: Vec::with_capacity(steps),
        gate_g: Vec::with_capacity(steps),
        gate_o: Vec::with_capacity(steps),
        cell: Vec::with_capacity(steps),
        tanh_cell: Vec::with_capacity(steps),
        hidden: Vec::with_capacity(steps),
    };
    let mut h_prev = vec![0.0; h_dim];
    let mut c_prev = vec![0.0; h_dim];
    let mut z = vec![0.0; 4 * h_dim];
    let mut zh = vec![0.0; 4 * h_dim];
    for s in 0..steps {
        let t = cache.order[s];
        matvec(&params.w_x, &inputs[t], &mut z);
        matvec(&params.w_h, &h_prev, &mut zh);
        for k in 0..4 * h_dim {
            z[k] += zh[k] + params.b[k];
        }
        let mut gi = vec![0.0; h_dim];
        let mut gf = vec![0.0; h_dim];
        let mut gg = vec![0.0; h_dim];
        let mut go = vec![0.0; h_dim];
        let mut c = vec![0.0; h_dim];
        let mut tc = vec![0.0; h_dim];
        let mut h = vec![0.0; h_dim];
        for k in 0..h_dim {
            gi[k] = sigmoid_scalar(z[k]);
            gf[k] = sigmoid_scalar(z[h_dim + k]);
            gg[k] = z[2 * h_dim + k].tanh();
            go[k] = sigmoid_scalar(z[3 * h_dim + k]);
            c[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
            tc[k] = c[k].tanh();
            h[k] = go[k] * tc[k];
        }
        h_prev.copy_from_slice(&h);
        c_prev.copy_from_slice(&c);
        cache.gate_i.push(gi);
        cache.gate_f.push(gf);
        cache.gate_g.push(gg);
        cache.gate_o.push(go);
        cache.cell.push(c);
        cache.tanh_cell.push(tc);
        cache.hidden.push(h);
    }
    cache
}

/// Backward through one direction. `d_hidden_ext[t]` is the gradient flowing
/// into the hidden state at time `t` from outside the recurrence. Returns
/// gradients for this direction's weights and for the inputs (indexed by
/// time).
fn backward_direction(
    params: &LstmDirParams,
    cache: &DirCache,
    inputs: &[Vec<f64>],
    d_hidden_ext: &[Vec<f64>],
) -> (LstmDirParams, Vec<Vec<f64>>) {
    let h_dim = params.hidden_dim();
    let in_dim = params.w_x.cols();
    let steps = cache.order.len();
    let mut grads = LstmDirParams::zeros(in_dim, h_dim);
    let mut d_inputs = vec![vec![0.0; in_dim]; steps];

    let mut dh_rec = vec![0.0; h_dim];
    let mut dc_rec = vec![0.0; h_dim];
    let mut dz = vec![0.0; 4 * h_dim];
    let zero = vec![0.0; h_dim];
    for s in (0..steps).rev() {
        let t = cache.order[s];
        let gi = &cache.gate_i[s];
        let gf = &cache.gate_f[s];
        let gg = &cache.gate_g[s];
        let go = &cache.gate_o[s];
        let tc = &cache.tanh_cell[s];
        let c_prev = if s > 0 { &cache.cell[s - 1] } else { &zero };
        let h_prev = if s > 0 { &cache.hidden[s - 1] } else { &zero };

        for k in 0..h_dim {
            let dh = d_hidden_ext[t][k] + dh_rec[k];
            let d_o = dh * tc[k];
            let dc = dc_rec[k] + dh * go[k] * (1.0 - tc[k] * tc[k]);
            let d_f = dc * c_prev[k];
            let d_i = dc * gg[k];
            let d_g = dc * gi[k];
            dz[k] = d_i * gi[k] * (1.0 - gi[k]);
            dz[h_dim + k] = d_f * gf[k] * (1.0 - gf[k]);
            dz[2 * h_dim + k] = d_g * (1.0 - gg[k] * gg[k]);
            dz[3 * h_dim + k] = d_o * go[k] * (1.0 - go[k]);
            dc_rec[k] = dc * gf[k];
        }
        outer_add(&mut grads.w_x, &dz, &inputs[t], 1.0);
        outer_add(&mut grads.w_h, &dz, h_prev, 1.0);
        for (gb, d) in grads.b.iter_mut().zip(&dz) {
            *gb += d;
        }
        matvec_transpose_add(&params.w_x, &dz, &mut d_inputs[t]);
        dh_rec.iter_mut().for_each(|x| *x = 0.0);
        matvec_transpose_add(&params.w_h, &dz, &mut dh_rec);
    }
    (grads, d_inputs)
}

/// Forward pass over a `[T, d_in]` sequence; returns the concatenated final
/// forward/backward states of the top layer and the activation cache.
pub fn bilstm_forward_cached(seq: &Tensor, params: &BiLstmParams) -> Result<(Vec<f64>, BiLstmCache)> {
    let t_len = seq.rows();
    if t_len == 0 {
        return Err(Error::InvalidInput("empty sequence".into()));
    }
    if seq.cols() != params.layers[0].fwd.w_x.cols() {
        return Err(Error::Shape(format!(
            "sequence feature dim {} != lstm input dim {}",
            seq.cols(),
            params.layers[0].fwd.w_x.cols()
        )));
    }
    let h_dim = params.hidden_dim();
    let mut layer_inputs: Vec<Vec<Vec<f64>>> =
        vec![(0..t_len).map(|r| seq.row(r).to_vec()).collect()];
    let mut dirs = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let inputs = &layer_inputs[l];
        let fwd = run_direction(&layer.fwd, inputs, (0..t_len).collect());
        let bwd = run_direction(&layer.bwd, inputs, (0..t_len).rev().collect());
        let mut outputs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut o = Vec::with_capacity(2 * h_dim);
            o.extend_from_slice(&fwd.hidden[t]);
            o.extend_from_slice(&bwd.hidden[t_len - 1 - t]);
            outputs.push(o);
        }
        dirs.push([fwd, bwd]);
        layer_inputs.push(outputs);
    }
    let top = dirs.last().unwrap();
    let mut out = Vec::with_capacity(2 * h_dim);
    out.extend_from_slice(top[0].hidden.last().unwrap());
    out.extend_from_slice(top[1].hidden.last().unwrap());
    Ok((
        out,
        BiLstmCache {
            dirs,
            layer_inputs,
            hidden_dim: h_dim,
        },
    ))
}

/// Backward through the stack given the gradient of the loss with respect to
/// the concatenated encoder output.
pub fn bilstm_backward(
    params: &BiLstmParams,
    cache: &BiLstmCache,
    d_out: &[f64],
) -> Result<BiLstmParams> {
    let h_dim = cache.hidden_dim;
    if d_out.len() != 2 * h_dim {
        return Err(Error::Shape(format!(
            "upstream gradient length {} != 2*hidden {}",
            d_out.len(),
            2 * h_dim
        )));
    }
    let layers = params.layers.len();
    let t_len = cache.layer_inputs[0].len();
    let mut grads = Vec::with_capacity(layers);

    // External hidden-state gradients for the top layer: only the final
    // forward state (t = T-1) and final backward state (t = 0) feed the head.
    let mut d_ext_fwd = vec![vec![0.0; h_dim]; t_len];
    let mut d_ext_bwd = vec![vec![0.0; h_dim]; t_len];
    d_ext_fwd[t_len - 1].copy_from_slice(&d_out[..h_dim]);
    d_ext_bwd[0].copy_from_slice(&d_out[h_dim..]);

    for l in (0..layers).rev() {
        let inputs = &cache.layer_inputs[l];
        let (g_fwd, dx_fwd) =
            backward_direction(&params.layers[l].fwd, &cache.dirs[l][0], inputs, &d_ext_fwd);
        let (g_bwd, dx_bwd) =
            backward_direction(&params.layers[l].bwd, &cache.dirs[l][1], inputs, &d_ext_bwd);
        grads.push(LstmLayerParams {
            fwd: g_fwd,
            bwd: g_bwd,
        });
        if l > 0 {
            // Split the summed input gradient into the lower layer's
            // forward/backward output halves.
            for t in 0..t_len {
                for k in 0..h_dim {
                    d_ext_fwd[t][k] = dx_fwd[t][k] + dx_bwd[t][k];
                    d_ext_bwd[t][k] = dx_fwd[t][h_dim + k] + dx_bwd[t][h_dim + k];
                }
            }
        }
    }
    grads.reverse();
    Ok(BiLstmParams { layers: grads })
}

/// Encoder output without the cache.
pub fn bilstm_forward(seq: &Tensor, params: &BiLstmParams) -> Result<Vec<f64>> {
    Ok(bilstm_forward_cached(seq, params)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut ChaCha8Rng, in_dim: usize, h_dim: usize) -> LstmDirParams {
        let mut rand_vec = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
        };
        LstmDirParams {
            w_x: Tensor::matrix(4 * h_dim, in_dim, rand_vec(4 * h_dim * in_dim)).unwrap(),
            w_h: Tensor::matrix(4 * h_dim, h_dim, rand_vec(4 * h_dim * h_dim)).unwrap(),
            b: rand_vec(4 * h_dim),
        }
    }

    fn random_params(seed: u64, in_dim: usize, h_dim: usize) -> BiLstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..2)
            .map(|l| {
                let d = if l == 0 { in_dim } else { 2 * h_dim };
                LstmLayerParams {
                    fwd: random_dir(&mut rng, d, h_dim),
                    bwd: random_dir(&mut rng, d, h_dim),
                }
            })
            .collect();
        BiLstmParams { layers }
    }

    fn random_seq(seed: u64, t: usize, d: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(t, d, data).unwrap()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let params = BiLstmParams::zeros(3, 2, 2);
        let seq = random_seq(1, 4, 3);
        let out = bilstm_forward(&seq, &params).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let params = random_params(7, 3, 2);
        let seq = random_seq(2, 1, 3);
        let a = bilstm_forward(&seq, &params).unwrap();
        let b = bilstm_forward(&seq, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let params = random_params(7, 3, 2);
        let seq = Tensor::zeros(vec![0, 3]);
        assert!(bilstm_forward(&seq, &params).is_err());
    }

    /// Swap every layer's direction parameters (and, above layer 0, the
    /// column blocks consuming the lower layer's concatenated output), feed
    /// the reversed sequence, and the output halves must swap.
    #[test]
    fn direction_symmetry() {
        let h_dim = 2;
        let params = random_params(11, 3, h_dim);
        let swap_cols = |w: &Tensor| -> Tensor {
            let rows = w.rows();
            let cols = w.cols();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let row = w.row(r);
                data.extend_from_slice(&row[h_dim..]);
                data.extend_from_slice(&row[..h_dim]);
            }
            Tensor::matrix(rows, cols, data).unwrap()
        };
        let swapped = BiLstmParams {
            layers: params
                .layers
                .iter()
                .enumerate()
                .map(|(l, layer)| {
                    let mut fwd = layer.bwd.clone();
                    let mut bwd = layer.fwd.clone();
                    if l > 0 {
                        fwd.w_x = swap_cols(&fwd.w_x);
                        bwd.w_x = swap_cols(&bwd.w_x);
                    }
                    LstmLayerParams { fwd, bwd }
                })
                .collect(),
        };
        let seq = random_seq(3, 5, 3);
        let reversed = {
            let rows: Vec<Vec<f64>> = (0..seq.rows()).rev().map(|r| seq.row(r).to_vec()).collect();
            Tensor::from_rows(rows).unwrap()
        };
        let out = bilstm_forward(&seq, &params).unwrap();
        let out_swapped = bilstm_forward(&reversed, &swapped).unwrap();
        for k in 0..h_dim {
            assert!((out[k] - out_swapped[h_dim + k]).abs() < 1e-12);
            assert!((out[h_dim + k] - out_swapped[k]).abs() < 1e-12);
        }
    }

    /// Gradient of `sum(w . out)` against central finite differences over
    /// every LSTM parameter.
    #[test]
    fn backward_matches_finite_differences() {
        let (in_dim, h_dim, t_len) = (3, 2, 4);
        let params = random_params(17, in_dim, h_dim);
        let seq = random_seq(19, t_len, in_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let probe: Vec<f64> = (0..2 * h_dim).map(|_| rng.random_range(-1.0..1.0)).collect();

        let (_, cache) = bilstm_forward_cached(&seq, &params).unwrap();
        let analytic = bilstm_backward(&params, &cache, &probe).unwrap();

        let flatten = |p: &BiLstmParams| -> Vec<f64> {
            let mut out = Vec::new();
            for layer in &p.layers {
                for dir in [&layer.fwd, &layer.bwd] {
                    out.extend_from_slice(dir.w_x.data());
                    out.extend_from_slice(dir.w_h.data());
                    out.extend_from_slice(&dir.b);
                }
            }
            out
        };
        let assign = |p: &mut BiLstmParams, flat: &[f64]| {
            let mut k = 0;
            for layer in &mut p.layers {
                for dir in [&mut layer.fwd, &mut layer.bwd] {
                    for v in dir.w_x.data_mut() {
                        *v = flat[k];
                        k += 1;
                    }
                    for v in dir.w_h.data_mut() {
                        *v = flat[k];
                        k += 1;
                    }
                    for v in &mut dir.b {
                        *v = flat[k];
                        k += 1;
                    }
                }
            }
            assert_eq!(k, flat.len());
        };

        let base = flatten(&params);
        let analytic_flat = flatten(&analytic);
        let eps = 1e-5;
        let mut work = params.clone();
        for j in 0..base.len() {
            let mut plus = base.clone();
            plus[j] += eps;
            assign(&mut work, &plus);
            let op = bilstm_forward(&seq, &work).unwrap();
            let fp: f64 = op.iter().zip(&probe).map(|(a, b)| a * b).sum();
            let mut minus = base.clone();
            minus[j] -= eps;
            assign(&mut work, &minus);
            let om = bilstm_forward(&seq, &work).unwrap();
            let fm: f64 = om.iter().zip(&probe).map(|(a, b)| a * b).sum();
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic_flat[j];
            let denom = a.abs().max(numeric.abs()).max(1e-4);
            assert!(
                ((a - numeric) / denom).abs() < 1e-6,
                "param {j}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}
