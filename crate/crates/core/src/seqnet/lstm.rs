use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayViewMut2, Axis};

use super::batch::SeqBatch;
use super::kernels::{activate_gates, tanh};
use super::params::{Head, NetworkParams};
use crate::error::{Error, Result};

/// Activations recorded by a forward pass, consumed by [`NetworkParams::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    layers: Vec<LayerTape>,
    /// Input rows of the head: `[steps*batch, width]` or `[batch, width]`.
    head_input: Array2<f64>,
    /// Post-activation head output, time-major.
    output: Array3<f64>,
    steps: usize,
    batch: usize,
}

#[derive(Debug, Clone)]
struct LayerTape {
    input: Array3<f64>,
    dirs: Vec<DirTape>,
}

#[derive(Debug, Clone)]
struct DirTape {
    /// Activated gates `[steps, batch, 4H]` in order input, forget, candidate, output.
    gates: Array3<f64>,
    cells: Array3<f64>,
    cell_tanh: Array3<f64>,
    hidden: Array3<f64>,
}

fn step_order(steps: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    }
}

fn flat(a: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (t, b, f) = a.dim();
    a.view()
        .into_shape_with_order((t * b, f))
        .expect("standard layout")
}

/// `a * b` into a freshly allocated row-major matrix.
fn matmul<A, B>(a: &A, b: &B) -> Array2<f64>
where
    A: ndarray::linalg::Dot<B, Output = Array2<f64>>,
{
    let out = a.dot(b);
    if out.is_standard_layout() {
        out
    } else {
        out.as_standard_layout().into_owned()
    }
}

fn run_direction(
    wx: ArrayView2<'_, f64>,
    wh: ArrayView2<'_, f64>,
    bias: &[f64],
    input: &Array3<f64>,
    reverse: bool,
) -> DirTape {
    let (steps, batch, _) = input.dim();
    let h = wh.nrows();
    let h4 = 4 * h;
    let mut gates = matmul(&flat(input), &wx)
        .into_shape_with_order((steps, batch, h4))
        .expect("shape");
    let mut cells = Array3::zeros((steps, batch, h));
    let mut cell_tanh = Array3::zeros((steps, batch, h));
    let mut hidden = Array3::zeros((steps, batch, h));
    let mut h_prev = Array2::<f64>::zeros((batch, h));
    let mut c_prev = vec![0.0; batch * h];

    for (k, t) in step_order(steps, reverse).into_iter().enumerate() {
        let mut pre = gates.index_axis_mut(Axis(0), t);
        if k > 0 {
            general_mat_mul(1.0, &h_prev, &wh, 1.0, &mut pre);
        }
        let pre = pre.into_slice().expect("contiguous");
        activate_gates(pre, bias, h);
        let c_t = cells.index_axis_mut(Axis(0), t).into_slice().expect("contiguous");
        let tc_t = cell_tanh
            .index_axis_mut(Axis(0), t)
            .into_slice()
            .expect("contiguous");
        let h_t = hidden
            .index_axis_mut(Axis(0), t)
            .into_slice()
            .expect("contiguous");
        for (b, g) in pre.chunks_exact(h4).enumerate() {
            let (ig, rest) = g.split_at(h);
            let (fg, rest) = rest.split_at(h);
            let (cg, og) = rest.split_at(h);
            let rows = b * h..(b + 1) * h;
            let cp = &mut c_prev[rows.clone()];
            let c = &mut c_t[rows.clone()];
            for j in 0..h {
                c[j] = fg[j] * cp[j] + ig[j] * cg[j];
            }
            cp.copy_from_slice(c);
            let tc = &mut tc_t[rows.clone()];
            for (t, &c) in tc.iter_mut().zip(c.iter()) {
                *t = tanh(c);
            }
            let hv = &mut h_t[rows];
            for j in 0..h {
                hv[j] = og[j] * tc[j];
            }
        }
        h_prev
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(h_t);
    }
    DirTape {
        gates,
        cells,
        cell_tanh,
        hidden,
    }
}

#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    wx: ArrayView2<'_, f64>,
    wh: ArrayView2<'_, f64>,
    tape: &DirTape,
    input: &Array3<f64>,
    d_hidden: &Array3<f64>,
    reverse: bool,
    mut dwx: ArrayViewMut2<'_, f64>,
    mut dwh: ArrayViewMut2<'_, f64>,
    db: &mut [f64],
    d_input: &mut Array3<f64>,
) {
    let (steps, batch, h) = tape.hidden.dim();
    let h4 = 4 * h;
    let order = step_order(steps, reverse);
    let mut dpre = Array3::<f64>::zeros((steps, batch, h4));
    let mut dh_next = Array2::<f64>::zeros((batch, h));
    let mut dc_next = vec![0.0; batch * h];

    let zeros = vec![0.0; batch * h];
    let mut dh = vec![0.0; h];
    for k in (0..steps).rev() {
        let t = order[k];
        let c_prev_view = (k > 0).then(|| tape.cells.index_axis(Axis(0), order[k - 1]));
        let c_prev = c_prev_view
            .as_ref()
            .map_or(&zeros[..], |v| v.as_slice().expect("contiguous"));
        let gates = tape.gates.index_axis(Axis(0), t);
        let gates = gates.as_slice().expect("contiguous");
        let tc = tape.cell_tanh.index_axis(Axis(0), t);
        let tc = tc.as_slice().expect("contiguous");
        let dh_up = d_hidden.index_axis(Axis(0), t);
        let dh_up = dh_up.as_slice().expect("contiguous");
        let dhn = dh_next.as_slice().expect("contiguous");
        let mut dp_t = dpre.index_axis_mut(Axis(0), t);
        let dp = dp_t.as_slice_mut().expect("contiguous");
        for (b, (g, d)) in gates.chunks_exact(h4).zip(dp.chunks_exact_mut(h4)).enumerate() {
            let rows = b * h..(b + 1) * h;
            let (ig, rest) = g.split_at(h);
            let (fg, rest) = rest.split_at(h);
            let (cg, og) = rest.split_at(h);
            let (d_i, rest) = d.split_at_mut(h);
            let (d_f, rest) = rest.split_at_mut(h);
            let (d_g, d_o) = rest.split_at_mut(h);
            let (up, next, tcr) = (&dh_up[rows.clone()], &dhn[rows.clone()], &tc[rows.clone()]);
            let cp = &c_prev[rows.clone()];
            let dcn = &mut dc_next[rows];
            for j in 0..h {
                dh[j] = up[j] + next[j];
            }
            for j in 0..h {
                let dc = dh[j] * og[j] * (1.0 - tcr[j] * tcr[j]) + dcn[j];
                d_i[j] = dc * cg[j] * ig[j] * (1.0 - ig[j]);
                d_f[j] = dc * cp[j] * fg[j] * (1.0 - fg[j]);
                d_g[j] = dc * ig[j] * (1.0 - cg[j] * cg[j]);
                d_o[j] = dh[j] * tcr[j] * og[j] * (1.0 - og[j]);
                dcn[j] = dc * fg[j];
            }
        }
        if k > 0 {
            general_mat_mul(1.0, &dp_t, &wh.t(), 0.0, &mut dh_next);
        }
    }

    // Recurrent weights see the previous step's hidden state.
    let mut h_prev = Array3::<f64>::zeros((steps, batch, h));
    for k in 1..steps {
        h_prev
            .index_axis_mut(Axis(0), order[k])
            .assign(&tape.hidden.index_axis(Axis(0), order[k - 1]));
    }
    let dpre_flat = flat(&dpre);
    general_mat_mul(1.0, &flat(&h_prev).t(), &dpre_flat, 1.0, &mut dwh);
    general_mat_mul(1.0, &flat(input).t(), &dpre_flat, 1.0, &mut dwx);
    for row in dpre_flat.outer_iter() {
        for (acc, v) in db.iter_mut().zip(row.iter()) {
            *acc += v;
        }
    }
    let (t_len, b_len, in_dim) = d_input.dim();
    let mut d_in = d_input
        .view_mut()
        .into_shape_with_order((t_len * b_len, in_dim))
        .expect("standard layout");
    general_mat_mul(1.0, &dpre_flat, &wx.t(), 1.0, &mut d_in);
}

fn concat_dirs(dirs: &[DirTape]) -> Array3<f64> {
    if dirs.len() == 1 {
        return dirs[0].hidden.clone();
    }
    let (t, b, h) = dirs[0].hidden.dim();
    let mut out = Array3::zeros((t, b, h * dirs.len()));
    for (d, dir) in dirs.iter().enumerate() {
        out.slice_mut(s![.., .., d * h..(d + 1) * h]).assign(&dir.hidden);
    }
    out
}

impl NetworkParams {
    /// Runs the network; output is `[batch, steps, output_dim]` for a per-step
    /// head and `[batch, 1, output_dim]` for a final-state head.
    pub fn forward(&self, input: &SeqBatch) -> Result<SeqBatch> {
        self.forward_with_tape(input).map(|(out, _)| out)
    }

    pub fn forward_with_tape(&self, input: &SeqBatch) -> Result<(SeqBatch, Tape)> {
        let c = *self.config();
        let (batch, steps, features) = input.dims();
        if features != c.input_dim {
            return Err(Error::shape(format!(
                "network expects {} input features, got {features}",
                c.input_dim
            )));
        }
        if steps == 0 || batch == 0 {
            return Err(Error::shape("empty batch"));
        }
        let mut layers = Vec::with_capacity(c.num_layers);
        let mut x = input.time_major().clone();
        for layer in 0..c.num_layers {
            let dirs: Vec<DirTape> = (0..c.directions())
                .map(|d| {
                    run_direction(
                        self.wx(layer, d),
                        self.wh(layer, d),
                        self.bias(layer, d),
                        &x,
                        d == 1,
                    )
                })
                .collect();
            let next = concat_dirs(&dirs);
            layers.push(LayerTape { input: x, dirs });
            x = next;
        }

        let h = c.hidden_units;
        let head_input = match c.head {
            Head::PerStep => flat(&x).to_owned(),
            Head::FinalState => {
                let last = layers.last().expect("at least one layer");
                let mut state = Array2::zeros((batch, c.state_width()));
                state
                    .slice_mut(s![.., 0..h])
                    .assign(&last.dirs[0].hidden.index_axis(Axis(0), steps - 1));
                if c.bidirectional {
                    state
                        .slice_mut(s![.., h..2 * h])
                        .assign(&last.dirs[1].hidden.index_axis(Axis(0), 0));
                }
                state
            }
        };
        let mut pre = matmul(&head_input, &self.head_w());
        let act = c.output_activation;
        for row in pre.rows_mut() {
            for (v, b) in row.into_iter().zip(self.head_b()) {
                *v = act.apply(*v + b);
            }
        }
        let out_steps = match c.head {
            Head::PerStep => steps,
            Head::FinalState => 1,
        };
        let output = pre
            .into_shape_with_order((out_steps, batch, c.output_dim))
            .expect("shape");
        if !output.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("network output"));
        }
        let tape = Tape {
            layers,
            head_input,
            output: output.clone(),
            steps,
            batch,
        };
        Ok((SeqBatch::from_time_major(output), tape))
    }

    /// Backpropagates `d_output` (the loss gradient with respect to the
    /// forward output) through the recorded pass. Parameter gradients are
    /// accumulated into `grads`; the gradient with respect to the input
    /// sequence is returned.
    pub fn backward(
        &self,
        tape: &Tape,
        d_output: &SeqBatch,
        grads: &mut NetworkParams,
    ) -> Result<SeqBatch> {
        let c = *self.config();
        if !grads.same_shape(self) {
            return Err(Error::shape("gradient store does not match parameters"));
        }
        if d_output.time_major().dim() != tape.output.dim() {
            return Err(Error::shape(format!(
                "output gradient has dims {:?}, forward output {:?}",
                d_output.dims(),
                tape.output.dim()
            )));
        }
        let (steps, batch, h) = (tape.steps, tape.batch, c.hidden_units);
        let rows = tape.head_input.nrows();

        let mut d_pre = flat(d_output.time_major()).to_owned();
        let act = c.output_activation;
        for (d, y) in d_pre.iter_mut().zip(tape.output.iter()) {
            *d *= act.derivative_from_output(*y);
        }
        debug_assert_eq!(d_pre.nrows(), rows);
        let d_state = matmul(&d_pre, &self.head_w().t());
        {
            let (mut dw, db) = grads.head_mut();
            general_mat_mul(1.0, &tape.head_input.t(), &d_pre, 1.0, &mut dw);
            for row in d_pre.outer_iter() {
                for (acc, v) in db.iter_mut().zip(row.iter()) {
                    *acc += v;
                }
            }
        }

        let mut d_hidden: Vec<Array3<f64>> =
            vec![Array3::zeros((steps, batch, h)); c.directions()];
        match c.head {
            Head::PerStep => {
                let d_state = d_state
                    .into_shape_with_order((steps, batch, c.state_width()))
                    .expect("shape");
                for (d, dh) in d_hidden.iter_mut().enumerate() {
                    dh.assign(&d_state.slice(s![.., .., d * h..(d + 1) * h]));
                }
            }
            Head::FinalState => {
                d_hidden[0]
                    .index_axis_mut(Axis(0), steps - 1)
                    .assign(&d_state.slice(s![.., 0..h]));
                if c.bidirectional {
                    d_hidden[1]
                        .index_axis_mut(Axis(0), 0)
                        .assign(&d_state.slice(s![.., h..2 * h]));
                }
            }
        }

        let mut d_input = Array3::zeros((0, 0, 0));
        for layer in (0..c.num_layers).rev() {
            let lt = &tape.layers[layer];
            d_input = Array3::zeros(lt.input.dim());
            for (d, dir) in lt.dirs.iter().enumerate() {
                let (wx, wh) = (self.wx(layer, d), self.wh(layer, d));
                let (dwx, dwh, db) = grads.block_mut(layer, d);
                backprop_direction(
                    wx,
                    wh,
                    dir,
                    &lt.input,
                    &d_hidden[d],
                    d == 1,
                    dwx,
                    dwh,
                    db,
                    &mut d_input,
                );
            }
            if layer > 0 {
                for (d, dh) in d_hidden.iter_mut().enumerate() {
                    dh.assign(&d_input.slice(s![.., .., d * h..(d + 1) * h]));
                }
            }
        }

        if let Some(i) = grads.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "gradient parameter {i} ({})",
                locate(&c, i)
            )));
        }
        if !d_input.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("input gradient"));
        }
        Ok(SeqBatch::from_time_major(d_input))
    }
}

fn locate(c: &super::params::NetworkConfig, index: usize) -> String {
    let mut off = 0;
    for layer in 0..c.num_layers {
        let len = 4 * c.hidden_units * (c.layer_input_dim(layer) + c.hidden_units + 1);
        for dir in 0..c.directions() {
            if index < off + len {
                return format!("layer {layer} direction {dir}");
            }
            off += len;
        }
    }
    "output head".to_string()
}

/// Loss value and exact parameter gradient of `loss(network(input))`.
///
/// `loss` returns the scalar and its gradient with respect to the network
/// output.
pub fn gradients<L>(params: &NetworkParams, input: &SeqBatch, loss: L) -> Result<(f64, NetworkParams)>
where
    L: FnOnce(&SeqBatch) -> (f64, SeqBatch),
{
    let (out, tape) = params.forward_with_tape(input)?;
    let (value, d_out) = loss(&out);
    if !value.is_finite() {
        return Err(Error::numeric("loss value"));
    }
    let mut grads = NetworkParams::zeros(*params.config());
    params.backward(&tape, &d_out, &mut grads)?;
    Ok((value, grads))
}
