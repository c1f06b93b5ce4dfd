//! One direction of a standard four-gate LSTM over a `T x I` sequence.
//!
//! Gate pre-activations are `x_t W + h_{t-1} U + b`, laid out `[i, f, g, o]`
//! over `4H` columns. The candidate `g` and the cell output use a configurable
//! activation (`tanh` in the standard cell).

use nalgebra::DVector;

use super::{Activation, Matrix};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
pub(super) struct LstmCache {
    /// Post-nonlinearity gates per time step (indexed by time, not by order of processing).
    gates: Vec<DVector<f64>>,
    cells: Vec<DVector<f64>>,
    hidden: Vec<DVector<f64>>,
    reverse: bool,
    activation: Activation,
}

impl LstmCache {
    /// ReLU on/off pattern of the candidate and cell-output activations.
    pub(super) fn relu_signature(&self, out: &mut Vec<bool>) {
        if self.activation != Activation::Relu {
            return;
        }
        for (g, c) in self.gates.iter().zip(&self.cells) {
            let h = c.len();
            out.extend(g.rows(2 * h, h).iter().map(|v| *v > 0.0));
            out.extend(c.iter().map(|v| *v > 0.0));
        }
    }
}

fn order(t: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..t).rev())
    } else {
        Box::new(0..t)
    }
}

/// Returns the `T x H` hidden sequence, aligned with the input time axis.
pub(super) fn forward(
    x: &Matrix,
    w: &Matrix,
    u: &Matrix,
    b: &Matrix,
    activation: Activation,
    reverse: bool,
) -> (Matrix, LstmCache) {
    let steps = x.nrows();
    let h = u.nrows();
    let mut xw = x * w;
    for mut row in xw.row_iter_mut() {
        row += b;
    }
    let mut gates = vec![DVector::zeros(0); steps];
    let mut cells = vec![DVector::zeros(0); steps];
    let mut hidden = vec![DVector::zeros(0); steps];
    let mut h_prev = DVector::<f64>::zeros(h);
    let mut c_prev = DVector::<f64>::zeros(h);
    let mut out = Matrix::zeros(steps, h);
    for t in order(steps, reverse) {
        let mut z = u.tr_mul(&h_prev);
        for (j, zj) in z.iter_mut().enumerate() {
            *zj += xw[(t, j)];
        }
        for j in 0..h {
            z[j] = sigmoid(z[j]);
            z[h + j] = sigmoid(z[h + j]);
            z[2 * h + j] = activation.apply(z[2 * h + j]);
            z[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        let mut c = DVector::zeros(h);
        let mut hv = DVector::zeros(h);
        for j in 0..h {
            c[j] = z[h + j] * c_prev[j] + z[j] * z[2 * h + j];
            hv[j] = z[3 * h + j] * activation.apply(c[j]);
            out[(t, j)] = hv[j];
        }
        gates[t] = z;
        c_prev = c.clone();
        h_prev = hv.clone();
        cells[t] = c;
        hidden[t] = hv;
    }
    (
        out,
        LstmCache {
            gates,
            cells,
            hidden,
            reverse,
            activation,
        },
    )
}

pub(super) struct LstmGrads {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Matrix,
    pub x: Matrix,
}

/// Backpropagation through time given the gradient of the hidden sequence.
pub(super) fn backward(x: &Matrix, w: &Matrix, u: &Matrix, cache: &LstmCache, dout: &Matrix) -> LstmGrads {
    let steps = x.nrows();
    let h = u.nrows();
    let mut du = Matrix::zeros(h, 4 * h);
    let mut dz_all = Matrix::zeros(steps, 4 * h);
    let mut dh_next = DVector::<f64>::zeros(h);
    let mut dc_next = DVector::<f64>::zeros(h);
    let zero = DVector::<f64>::zeros(h);
    let processed: Vec<usize> = order(steps, cache.reverse).collect();
    for (pos, &t) in processed.iter().enumerate().rev() {
        let (c_prev, h_prev) = if pos == 0 {
            (&zero, &zero)
        } else {
            let p = processed[pos - 1];
            (&cache.cells[p], &cache.hidden[p])
        };
        let g = &cache.gates[t];
        let c = &cache.cells[t];
        let mut dz = DVector::<f64>::zeros(4 * h);
        for j in 0..h {
            let (ig, fg, gg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let act = cache.activation;
            let tc = act.apply(c[j]);
            let dh = dout[(t, j)] + dh_next[j];
            let dc = dc_next[j] + dh * og * act.derivative_from_output(tc);
            dz[j] = dc * gg * ig * (1.0 - ig);
            dz[h + j] = dc * c_prev[j] * fg * (1.0 - fg);
            dz[2 * h + j] = dc * ig * act.derivative_from_output(gg);
            dz[3 * h + j] = dh * tc * og * (1.0 - og);
            dc_next[j] = dc * fg;
        }
        du.ger(1.0, h_prev, &dz, 1.0);
        dh_next = u * &dz;
        for j in 0..4 * h {
            dz_all[(t, j)] = dz[j];
        }
    }
    let dw = x.tr_mul(&dz_all);
    let db = Matrix::from_fn(1, 4 * h, |_, j| dz_all.column(j).sum());
    let dx = &dz_all * w.transpose();
    LstmGrads { w: dw, u: du, b: db, x: dx }
}
