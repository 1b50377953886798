//! Parameter layout, forward pass and backpropagation for the two
//! architectures. Everything here works on standardized windows.

use serde::{Deserialize, Serialize};

use crate::error::{ExqError, Result};

/// Lower bound added to the softplus scale map.
pub const NU_FLOOR: f64 = 1e-6;
pub const XI_MIN: f64 = -0.49;
pub const XI_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Feedforward,
    Recurrent,
}

/// Sizes that determine the parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkShape {
    pub architecture: Architecture,
    /// Time steps per window `s`.
    pub window: usize,
    /// Features per time step.
    pub features: usize,
    /// LSTM state size (ignored by the feedforward architecture).
    pub state_dim: usize,
    /// Hidden tanh layers between the input (or LSTM state) and the output layer.
    pub dense_layers: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dense {
    pub w: usize,
    pub b: usize,
    pub inputs: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Lstm {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b: usize,
}

/// Offsets of each block in the flat weight vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub lstm: Option<Lstm>,
    /// Hidden layers followed by the two-unit output layer.
    pub dense: Vec<Dense>,
    pub total: usize,
}

impl NetworkShape {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.features == 0 {
            return Err(ExqError::InvalidParameter(
                "window and features must be positive".into(),
            ));
        }
        if self.architecture == Architecture::Recurrent && self.state_dim == 0 {
            return Err(ExqError::InvalidParameter(
                "recurrent state_dim must be positive".into(),
            ));
        }
        if self.dense_layers.contains(&0) {
            return Err(ExqError::InvalidParameter("dense layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.window * self.features
    }

    pub(crate) fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let (lstm, mut width) = match self.architecture {
            Architecture::Feedforward => (None, self.input_len()),
            Architecture::Recurrent => {
                let h = self.state_dim;
                let l = Lstm {
                    w_ih: take(4 * h * self.features),
                    w_hh: take(4 * h * h),
                    b: take(4 * h),
                };
                (Some(l), h)
            }
        };
        let mut dense = Vec::new();
        for &out in self.dense_layers.iter().chain(&[2]) {
            dense.push(Dense {
                w: take(out * width),
                b: take(out),
                inputs: width,
                outputs: out,
            });
            width = out;
        }
        Layout { lstm, dense, total: at }
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// Output maps `(ν, ξ)` and their derivatives with respect to the raw outputs.
pub fn output_maps(o: [f64; 2]) -> (f64, f64, f64, f64) {
    let nu = softplus(o[0]) + NU_FLOOR;
    let d_nu = sigmoid(o[0]);
    let s = sigmoid(o[1]);
    let span = XI_MAX - XI_MIN;
    let xi = XI_MIN + span * s.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    (nu, xi, d_nu, span * s * (1.0 - s))
}

/// Inverse of the scale map, for initializing the output bias.
pub fn inverse_nu_map(nu: f64) -> f64 {
    let v = (nu - NU_FLOOR).max(1e-12);
    if v > 30.0 {
        v
    } else {
        v.exp_m1().ln()
    }
}

/// `y += W x` for row-major `W` (`y.len()` rows).
fn matvec_add(w: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    for (row, yi) in w.chunks_exact(n).zip(y.iter_mut()) {
        *yi += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `x_grad += Wᵀ dy` and `w_grad += dy xᵀ`.
fn matvec_back(w: &[f64], x: &[f64], dy: &[f64], w_grad: &mut [f64], x_grad: Option<&mut [f64]>) {
    let n = x.len();
    for (gr, &d) in w_grad.chunks_exact_mut(n).zip(dy) {
        if d == 0.0 {
            continue;
        }
        for (g, &xi) in gr.iter_mut().zip(x) {
            *g += d * xi;
        }
    }
    if let Some(xg) = x_grad {
        for (row, &d) in w.chunks_exact(n).zip(dy) {
            if d == 0.0 {
                continue;
            }
            for (g, &wi) in xg.iter_mut().zip(row) {
                *g += d * wi;
            }
        }
    }
}

/// Intermediate values of one forward pass.
pub(crate) struct Cache {
    /// Per LSTM step: gates `[i, f, g, o]` (4H), `c_t`, `tanh c_t`.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    cell_tanh: Vec<Vec<f64>>,
    /// Inputs to each dense layer (activations), last entry unused.
    activations: Vec<Vec<f64>>,
    pub out: [f64; 2],
}

pub(crate) struct Net<'a> {
    pub shape: &'a NetworkShape,
    pub layout: &'a Layout,
    pub w: &'a [f64],
}

impl Net<'_> {
    pub fn forward(&self, x: &[f64]) -> Cache {
        let mut cache = Cache {
            gates: vec![],
            cells: vec![],
            cell_tanh: vec![],
            activations: vec![],
            out: [0.0; 2],
        };
        let mut a = match self.layout.lstm {
            None => x.to_vec(),
            Some(l) => self.lstm_forward(l, x, &mut cache),
        };
        let last = self.layout.dense.len() - 1;
        for (k, d) in self.layout.dense.iter().enumerate() {
            let mut z = self.w[d.b..d.b + d.outputs].to_vec();
            matvec_add(&self.w[d.w..d.w + d.outputs * d.inputs], &a, &mut z);
            cache.activations.push(std::mem::take(&mut a));
            if k < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = z;
        }
        cache.out = [a[0], a[1]];
        cache
    }

    fn lstm_forward(&self, l: Lstm, x: &[f64], cache: &mut Cache) -> Vec<f64> {
        let h_dim = self.shape.state_dim;
        let f = self.shape.features;
        let w_ih = &self.w[l.w_ih..l.w_ih + 4 * h_dim * f];
        let w_hh = &self.w[l.w_hh..l.w_hh + 4 * h_dim * h_dim];
        let bias = &self.w[l.b..l.b + 4 * h_dim];
        let mut h = vec![0.0; h_dim];
        let mut c = vec![0.0; h_dim];
        cache.activations.reserve(self.layout.dense.len());
        for step in x.chunks_exact(f) {
            let mut z = bias.to_vec();
            matvec_add(w_ih, step, &mut z);
            matvec_add(w_hh, &h, &mut z);
            for (k, v) in z.iter_mut().enumerate() {
                *v = if (2 * h_dim..3 * h_dim).contains(&k) {
                    v.tanh()
                } else {
                    sigmoid(*v)
                };
            }
            let mut tc = vec![0.0; h_dim];
            for j in 0..h_dim {
                let (i, fg, g, o) = (z[j], z[h_dim + j], z[2 * h_dim + j], z[3 * h_dim + j]);
                c[j] = fg * c[j] + i * g;
                tc[j] = c[j].tanh();
                h[j] = o * tc[j];
            }
            cache.gates.push(z);
            cache.cells.push(c.clone());
            cache.cell_tanh.push(tc);
        }
        h
    }

    /// Accumulates `∂(output · dout)/∂W` into `grad`.
    pub fn backward(&self, x: &[f64], cache: &Cache, dout: [f64; 2], grad: &mut [f64]) {
        let mut da = dout.to_vec();
        let n_dense = self.layout.dense.len();
        for (k, d) in self.layout.dense.iter().enumerate().rev() {
            if k < n_dense - 1 {
                // `da` is w.r.t. this layer's tanh output; recover it from the next input
                let act = &cache.activations[k + 1];
                for (g, a) in da.iter_mut().zip(act) {
                    *g *= 1.0 - a * a;
                }
            }
            let input = &cache.activations[k];
            for (g, v) in grad[d.b..d.b + d.outputs].iter_mut().zip(&da) {
                *g += v;
            }
            let need_input_grad = k > 0 || self.layout.lstm.is_some();
            let mut d_in = vec![0.0; d.inputs];
            let (w, wg) = (
                &self.w[d.w..d.w + d.outputs * d.inputs],
                d.w..d.w + d.outputs * d.inputs,
            );
            matvec_back(
                w,
                input,
                &da,
                &mut grad[wg],
                need_input_grad.then_some(d_in.as_mut_slice()),
            );
            da = d_in;
        }
        if let Some(l) = self.layout.lstm {
            self.lstm_backward(l, x, cache, da, grad);
        }
    }

    fn lstm_backward(&self, l: Lstm, x: &[f64], cache: &Cache, dh_top: Vec<f64>, grad: &mut [f64]) {
        let h_dim = self.shape.state_dim;
        let f = self.shape.features;
        let w_hh = &self.w[l.w_hh..l.w_hh + 4 * h_dim * h_dim];
        let steps: Vec<&[f64]> = x.chunks_exact(f).collect();
        let mut dh = dh_top;
        let mut dc = vec![0.0; h_dim];
        let mut dz = vec![0.0; 4 * h_dim];
        let zeros = vec![0.0; h_dim];
        for t in (0..steps.len()).rev() {
            let z = &cache.gates[t];
            let tc = &cache.cell_tanh[t];
            let c_prev = if t > 0 { &cache.cells[t - 1] } else { &zeros };
            for j in 0..h_dim {
                let (i, fg, g, o) = (z[j], z[h_dim + j], z[2 * h_dim + j], z[3 * h_dim + j]);
                let d_o = dh[j] * tc[j];
                dc[j] += dh[j] * o * (1.0 - tc[j] * tc[j]);
                dz[j] = dc[j] * g * i * (1.0 - i);
                dz[h_dim + j] = dc[j] * c_prev[j] * fg * (1.0 - fg);
                dz[2 * h_dim + j] = dc[j] * i * (1.0 - g * g);
                dz[3 * h_dim + j] = d_o * o * (1.0 - o);
                dc[j] *= fg;
            }
            for (g, v) in grad[l.b..l.b + 4 * h_dim].iter_mut().zip(&dz) {
                *g += v;
            }
            let (a, b) = (l.w_ih, l.w_ih + 4 * h_dim * f);
            let w_ih = &self.w[a..b];
            matvec_back(w_ih, steps[t], &dz, &mut grad[a..b], None);
            let h_prev: Vec<f64> = if t > 0 {
                let z_prev = &cache.gates[t - 1];
                (0..h_dim)
                    .map(|j| z_prev[3 * h_dim + j] * cache.cell_tanh[t - 1][j])
                    .collect()
            } else {
                zeros.clone()
            };
            let mut dh_prev = vec![0.0; h_dim];
            let (a, b) = (l.w_hh, l.w_hh + 4 * h_dim * h_dim);
            matvec_back(w_hh, &h_prev, &dz, &mut grad[a..b], Some(&mut dh_prev));
            dh = dh_prev;
        }
    }
}
