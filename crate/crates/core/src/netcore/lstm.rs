use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};

use super::params::{LstmLayer, ModelParams};
use crate::error::{Error, Result};
use crate::flowdata::Window;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one layer at one timestep, `B × H` unless noted.
#[derive(Debug, Clone)]
struct StepCache {
    /// Layer input, `B × D`.
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    f: Array2<f64>,
    i: Array2<f64>,
    o: Array2<f64>,
    g: Array2<f64>,
    tanh_c: Array2<f64>,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `[layer][timestep]`.
    steps: Vec<Vec<StepCache>>,
    /// Final hidden state of the top layer, `B × H_top`.
    top: Array2<f64>,
}

impl ForwardCache {
    pub fn top_hidden(&self) -> &Array2<f64> {
        &self.top
    }
}

/// Rearranges windows into one `B × D` matrix per timestep.
pub fn batch_steps(windows: &[&Window]) -> Vec<Array2<f64>> {
    let Some(first) = windows.first() else {
        return Vec::new();
    };
    let (seq_len, dim) = first.inputs.dim();
    (0..seq_len)
        .map(|t| {
            let mut m = Array2::zeros((windows.len(), dim));
            for (mut row, w) in m.outer_iter_mut().zip(windows) {
                row.assign(&w.inputs.row(t));
            }
            m
        })
        .collect()
}

fn layer_forward(
    layer: &LstmLayer,
    inputs: &[Array2<f64>],
    cache: &mut Vec<StepCache>,
) -> Vec<Array2<f64>> {
    let batch = inputs[0].nrows();
    let hidden = layer.u.ncols();
    let mut h = Array2::<f64>::zeros((batch, hidden));
    let mut c = Array2::<f64>::zeros((batch, hidden));
    let mut outputs = Vec::with_capacity(inputs.len());
    let bias = layer.b.as_slice().expect("contiguous bias");

    for x in inputs {
        let mut z = Array2::<f64>::zeros((batch, 4 * hidden));
        general_mat_mul(1.0, x, &layer.w.t(), 0.0, &mut z);
        general_mat_mul(1.0, &h, &layer.u.t(), 1.0, &mut z);

        let mut f = Array2::zeros((batch, hidden));
        let mut i = Array2::zeros((batch, hidden));
        let mut o = Array2::zeros((batch, hidden));
        let mut g = Array2::zeros((batch, hidden));
        let mut c_new = Array2::zeros((batch, hidden));
        let mut tanh_c = Array2::zeros((batch, hidden));
        let mut h_new = Array2::zeros((batch, hidden));
        {
            let zs = z.as_slice().expect("standard layout");
            let cs = c.as_slice().expect("standard layout");
            let (fs, is, os, gs) = (
                f.as_slice_mut().unwrap(),
                i.as_slice_mut().unwrap(),
                o.as_slice_mut().unwrap(),
                g.as_slice_mut().unwrap(),
            );
            let (cn, tc, hn) = (
                c_new.as_slice_mut().unwrap(),
                tanh_c.as_slice_mut().unwrap(),
                h_new.as_slice_mut().unwrap(),
            );
            for r in 0..batch {
                let zr = &zs[r * 4 * hidden..(r + 1) * 4 * hidden];
                for j in 0..hidden {
                    let k = r * hidden + j;
                    fs[k] = sigmoid(zr[j] + bias[j]);
                    is[k] = sigmoid(zr[hidden + j] + bias[hidden + j]);
                    os[k] = sigmoid(zr[2 * hidden + j] + bias[2 * hidden + j]);
                    gs[k] = (zr[3 * hidden + j] + bias[3 * hidden + j]).tanh();
                    cn[k] = fs[k] * cs[k] + is[k] * gs[k];
                    tc[k] = cn[k].tanh();
                    hn[k] = os[k] * tc[k];
                }
            }
        }
        cache.push(StepCache {
            x: x.clone(),
            h_prev: h,
            c_prev: c,
            f,
            i,
            o,
            g,
            tanh_c,
        });
        outputs.push(h_new.clone());
        h = h_new;
        c = c_new;
    }
    outputs
}

/// Forward pass over a batch given as one `B × D` matrix per timestep.
///
/// Returns `B × N_out` predictions (normalized scale) and the activation cache.
pub fn forward_batch(
    params: &ModelParams,
    steps: &[Array2<f64>],
) -> Result<(Array2<f64>, ForwardCache)> {
    let Some(first) = steps.first() else {
        return Err(Error::contract("empty input sequence"));
    };
    let input_dim = params.layers[0].w.ncols();
    if steps
        .iter()
        .any(|x| x.ncols() != input_dim || x.nrows() != first.nrows())
    {
        return Err(Error::contract(format!(
            "input width {} does not match network input {input_dim}",
            first.ncols()
        )));
    }
    if first.nrows() == 0 {
        return Err(Error::contract("empty batch"));
    }
    let mut caches = Vec::with_capacity(params.layers.len());
    let mut seq = steps.to_vec();
    for layer in &params.layers {
        let mut cache = Vec::with_capacity(seq.len());
        seq = layer_forward(layer, &seq, &mut cache);
        caches.push(cache);
    }
    let top = seq.pop().expect("nonempty sequence");
    let mut out = Array2::zeros((top.nrows(), params.b_out.len()));
    general_mat_mul(1.0, &top, &params.w_out.t(), 0.0, &mut out);
    out += &params.b_out;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite network output"));
    }
    Ok((out, ForwardCache { steps: caches, top }))
}

/// Forward pass for a single `L × N_in` window.
pub fn forward(params: &ModelParams, inputs: &Array2<f64>) -> Result<(Array1<f64>, ForwardCache)> {
    let steps: Vec<Array2<f64>> = inputs
        .outer_iter()
        .map(|row| row.to_owned().insert_axis(Axis(0)))
        .collect();
    let (out, cache) = forward_batch(params, &steps)?;
    Ok((out.row(0).to_owned(), cache))
}

/// Backpropagates `d_out` (`B × N_out`, gradient of the loss w.r.t. the
/// outputs) through the head and every layer.
fn backward(params: &ModelParams, cache: &ForwardCache, d_out: &Array2<f64>) -> ModelParams {
    let mut grads = params.zeros_like();
    let batch = d_out.nrows();
    general_mat_mul(1.0, &d_out.t(), &cache.top, 0.0, &mut grads.w_out);
    grads.b_out = d_out.sum_axis(Axis(0));

    let seq_len = cache.steps[0].len();
    let top_hidden = cache.top.ncols();
    let mut dh_seq: Vec<Array2<f64>> = (0..seq_len)
        .map(|_| Array2::zeros((batch, top_hidden)))
        .collect();
    general_mat_mul(1.0, d_out, &params.w_out, 0.0, &mut dh_seq[seq_len - 1]);

    for (k, layer) in params.layers.iter().enumerate().rev() {
        let hidden = layer.u.ncols();
        let input_dim = layer.w.ncols();
        let grad = &mut grads.layers[k];
        let mut dh_next = Array2::<f64>::zeros((batch, hidden));
        let mut dc_next = Array2::<f64>::zeros((batch, hidden));
        let mut dx_seq: Vec<Array2<f64>> = if k > 0 {
            (0..seq_len)
                .map(|_| Array2::zeros((batch, input_dim)))
                .collect()
        } else {
            Vec::new()
        };
        let mut dz = Array2::<f64>::zeros((batch, 4 * hidden));

        for t in (0..seq_len).rev() {
            let sc = &cache.steps[k][t];
            {
                let dh_in = dh_seq[t].as_slice().unwrap();
                let dhn = dh_next.as_slice().unwrap();
                let dcn = dc_next.as_slice_mut().unwrap();
                let (f, i, o, g) = (
                    sc.f.as_slice().unwrap(),
                    sc.i.as_slice().unwrap(),
                    sc.o.as_slice().unwrap(),
                    sc.g.as_slice().unwrap(),
                );
                let (tc, cp) = (sc.tanh_c.as_slice().unwrap(), sc.c_prev.as_slice().unwrap());
                let dzs = dz.as_slice_mut().unwrap();
                for r in 0..batch {
                    let row = &mut dzs[r * 4 * hidden..(r + 1) * 4 * hidden];
                    for j in 0..hidden {
                        let n = r * hidden + j;
                        let dh = dh_in[n] + dhn[n];
                        let dc = dh * o[n] * (1.0 - tc[n] * tc[n]) + dcn[n];
                        let d_o = dh * tc[n];
                        let d_i = dc * g[n];
                        let d_g = dc * i[n];
                        let d_f = dc * cp[n];
                        row[j] = d_f * f[n] * (1.0 - f[n]);
                        row[hidden + j] = d_i * i[n] * (1.0 - i[n]);
                        row[2 * hidden + j] = d_o * o[n] * (1.0 - o[n]);
                        row[3 * hidden + j] = d_g * (1.0 - g[n] * g[n]);
                        dcn[n] = dc * f[n];
                    }
                }
            }
            general_mat_mul(1.0, &dz.t(), &sc.x, 1.0, &mut grad.w);
            general_mat_mul(1.0, &dz.t(), &sc.h_prev, 1.0, &mut grad.u);
            grad.b += &dz.sum_axis(Axis(0));
            if k > 0 {
                general_mat_mul(1.0, &dz, &layer.w, 0.0, &mut dx_seq[t]);
            }
            general_mat_mul(1.0, &dz, &layer.u, 0.0, &mut dh_next);
        }
        dh_seq = dx_seq;
    }
    grads
}

/// Mean absolute error over batch and outputs, and its gradient.
///
/// Windows must already be normalized. The subgradient of `|·|` at 0 is 0.
pub fn loss_and_grad(params: &ModelParams, batch: &[&Window]) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let steps = batch_steps(batch);
    let (pred, cache) = forward_batch(params, &steps)?;
    let n_out = pred.ncols();
    if batch.iter().any(|w| w.target.len() != n_out) {
        return Err(Error::contract(format!(
            "targets do not have {n_out} outputs"
        )));
    }
    let scale = 1.0 / (batch.len() * n_out) as f64;
    let mut loss = 0.0;
    let mut d_out = Array2::zeros(pred.raw_dim());
    for (r, w) in batch.iter().enumerate() {
        for (j, &y) in w.target.iter().enumerate() {
            let diff = pred[[r, j]] - y;
            loss += diff.abs();
            d_out[[r, j]] = if diff > 0.0 {
                scale
            } else if diff < 0.0 {
                -scale
            } else {
                0.0
            };
        }
    }
    let grads = backward(params, &cache, &d_out);
    if let Some(block) = grads.first_non_finite() {
        return Err(Error::numeric(format!(
            "non-finite gradient in block {block}"
        )));
    }
    Ok((loss * scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::NetSpec;
    use ndarray::array;

    #[test]
    fn zero_params_give_zero_output() {
        let spec = NetSpec::new(3, 4, vec![5, 6], 3).unwrap();
        let params = ModelParams::zeros(&spec);
        let x = Array2::from_shape_fn((3, 3), |(t, j)| (t + 2 * j) as f64 - 1.5);
        let (y, _) = forward(&params, &x).unwrap();
        assert_eq!(y, Array1::<f64>::zeros(4));
    }

    #[test]
    fn output_has_spec_length() {
        let spec = NetSpec::new(3, 7, vec![5], 2).unwrap();
        let params = ModelParams::zeros(&spec);
        let (y, _) = forward(&params, &Array2::ones((2, 3))).unwrap();
        assert_eq!(y.len(), 7);
        assert!(matches!(
            forward(&params, &Array2::ones((2, 4))),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn hand_traced_single_unit() {
        // One unit, one input, one step. Only the candidate and gate biases
        // are set: f = σ(0), i = σ(0) = 0.5, o = σ(0) = 0.5, g = tanh(1·x).
        let spec = NetSpec::new(1, 1, vec![1], 1).unwrap();
        let mut p = ModelParams::zeros(&spec);
        p.layers[0].w = array![[0.0], [0.0], [0.0], [1.0]];
        p.w_out = array![[2.0]];
        let (y, _) = forward(&p, &array![[0.8]]).unwrap();
        let c = 0.5 * 0.8f64.tanh();
        let expected = 2.0 * 0.5 * c.tanh();
        assert!((y[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn mae_loss_and_output_gradient() {
        let spec = NetSpec::new(1, 1, vec![2], 1).unwrap();
        let mut p = ModelParams::zeros(&spec);
        p.b_out[0] = 2.0;
        let w = Window {
            inputs: array![[0.3]],
            target: array![1.0],
            target_bin: 1,
        };
        let (loss, grads) = loss_and_grad(&p, &[&w]).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grads.b_out[0], 1.0);

        p.b_out[0] = 1.0;
        let (loss, grads) = loss_and_grad(&p, &[&w]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.b_out[0], 0.0);
    }

    #[test]
    fn batch_matches_single_forward() {
        let spec = NetSpec::new(2, 2, vec![3, 3], 3).unwrap();
        let p = crate::netcore::init_params(&spec, 9);
        let windows: Vec<Window> = (0..4)
            .map(|k| Window {
                inputs: Array2::from_shape_fn((3, 2), |(t, j)| {
                    ((k * 7 + t * 3 + j) % 5) as f64 - 2.0
                }),
                target: array![0.0, 0.0],
                target_bin: k + 3,
            })
            .collect();
        let refs: Vec<&Window> = windows.iter().collect();
        let (batched, _) = forward_batch(&p, &batch_steps(&refs)).unwrap();
        for (k, w) in windows.iter().enumerate() {
            let (single, _) = forward(&p, &w.inputs).unwrap();
            for j in 0..2 {
                assert!((single[j] - batched[[k, j]]).abs() < 1e-14);
            }
        }
    }
}
