use rand::Rng;

use super::{gemm, Affine, Matrix, Param};
use crate::error::{check_len, Result};

/// Single LSTM layer without peepholes. Gate blocks are stacked `i, f, g, o`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// Input projection `4H x in` with the gate biases.
    pub input: Affine,
    /// Recurrent weights `4H x H`.
    pub recurrent: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything the backward pass needs from one forward sequence.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Matrix,
    /// Post-nonlinearity gates, `T x 4H`.
    gates: Matrix,
    /// `c_t`, `T x H`.
    cells: Matrix,
    /// `h_{t-1}` and `c_{t-1}`, `T x H`.
    h_prev: Matrix,
    c_prev: Matrix,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    pub fn new(input: Affine, recurrent: Param) -> Result<Self> {
        let h = recurrent.cols;
        check_len("lstm recurrent rows", 4 * h, recurrent.rows)?;
        check_len("lstm input rows", 4 * h, input.output_dim())?;
        Ok(Self { input, recurrent })
    }

    /// Glorot weights, zero biases except the forget gate at 1.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut proj = Affine::glorot(input, 4 * hidden, rng);
        proj.b.value[hidden..2 * hidden].fill(1.0);
        Self {
            input: proj,
            recurrent: Param::glorot(4 * hidden, hidden, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input.input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.recurrent.cols
    }

    pub fn forward(&self, x: &Matrix, init: &LstmState) -> Result<(Matrix, LstmState, LstmCache)> {
        let h = self.hidden();
        check_len("lstm state h", h, init.h.len())?;
        check_len("lstm state c", h, init.c.len())?;
        let t_len = x.rows;
        let mut gates = self.input.forward(x)?;
        let mut cells = Matrix::zeros(t_len, h);
        let mut hs = Matrix::zeros(t_len, h);
        let mut h_prev = Matrix::zeros(t_len, h);
        let mut c_prev = Matrix::zeros(t_len, h);
        let mut state = init.clone();
        let wh = &self.recurrent.value;
        for t in 0..t_len {
            h_prev.row_mut(t).copy_from_slice(&state.h);
            c_prev.row_mut(t).copy_from_slice(&state.c);
            let a = gates.row_mut(t);
            for (r, av) in a.iter_mut().enumerate() {
                let w = &wh[r * h..(r + 1) * h];
                *av += w.iter().zip(&state.h).map(|(p, q)| p * q).sum::<f64>();
            }
            for j in 0..h {
                let i = sigmoid(a[j]);
                let f = sigmoid(a[h + j]);
                let g = a[2 * h + j].tanh();
                let o = sigmoid(a[3 * h + j]);
                a[j] = i;
                a[h + j] = f;
                a[2 * h + j] = g;
                a[3 * h + j] = o;
                state.c[j] = f * state.c[j] + i * g;
                state.h[j] = o * state.c[j].tanh();
            }
            cells.row_mut(t).copy_from_slice(&state.c);
            hs.row_mut(t).copy_from_slice(&state.h);
        }
        let cache = LstmCache {
            x: x.clone(),
            gates,
            cells,
            h_prev,
            c_prev,
        };
        Ok((hs, state, cache))
    }

    /// Full backpropagation through time. The final state receives no gradient.
    pub fn backward(&mut self, cache: &LstmCache, gh: &Matrix) -> Result<Matrix> {
        let h = self.hidden();
        let t_len = cache.x.rows;
        check_len("lstm grad rows", t_len, gh.rows)?;
        check_len("lstm grad cols", h, gh.cols)?;
        let mut da = Matrix::zeros(t_len, 4 * h);
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let wh = &self.recurrent.value;
        for t in (0..t_len).rev() {
            let gate = cache.gates.row(t);
            let c = cache.cells.row(t);
            let cp = cache.c_prev.row(t);
            let dat = da.row_mut(t);
            for j in 0..h {
                let (i, f, g, o) = (gate[j], gate[h + j], gate[2 * h + j], gate[3 * h + j]);
                let tc = c[j].tanh();
                let dh = gh.get(t, j) + dh_next[j];
                let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                dat[j] = dc * g * i * (1.0 - i);
                dat[h + j] = dc * cp[j] * f * (1.0 - f);
                dat[2 * h + j] = dc * i * (1.0 - g * g);
                dat[3 * h + j] = dh * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (r, &d) in dat.iter().enumerate() {
                if d != 0.0 {
                    for (acc, w) in dh_next.iter_mut().zip(&wh[r * h..(r + 1) * h]) {
                        *acc += d * w;
                    }
                }
            }
        }
        let mut gwh = Matrix {
            rows: 4 * h,
            cols: h,
            data: std::mem::take(&mut self.recurrent.grad),
        };
        gemm(1.0, &da, true, &cache.h_prev, false, 1.0, &mut gwh);
        self.recurrent.grad = gwh.data;
        self.input.backward(&cache.x, &da)
    }

    pub fn zero_grad(&mut self) {
        self.input.zero_grad();
        self.recurrent.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_give_zero_output() {
        let lstm = Lstm::new(
            Affine::new(Param::zeros(8, 3), Param::zeros(1, 8)).unwrap(),
            Param::zeros(8, 2),
        )
        .unwrap();
        let x = Matrix::from_rows(&vec![vec![1.0, -2.0, 0.5]; 4]).unwrap();
        let (hs, fin, _) = lstm.forward(&x, &LstmState::zeros(2)).unwrap();
        assert!(hs.data.iter().all(|&v| v == 0.0));
        assert!(fin.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_cell_by_hand() {
        // in = 1, H = 1: weights per gate (wx, wh, b)
        let wx = [0.5, -0.3, 0.8, 0.1];
        let wh = [0.2, 0.4, -0.6, 0.7];
        let b = [0.1, 1.0, -0.2, 0.05];
        let lstm = Lstm::new(
            Affine::new(Param::new(4, 1, wx.to_vec()), Param::new(1, 4, b.to_vec())).unwrap(),
            Param::new(4, 1, wh.to_vec()),
        )
        .unwrap();
        let (x, h0, c0) = (0.9, -0.25, 0.3);
        let state = LstmState {
            h: vec![h0],
            c: vec![c0],
        };
        let (hs, fin, _) = lstm
            .forward(&Matrix::from_vec(1, 1, vec![x]).unwrap(), &state)
            .unwrap();
        let pre = |n: usize| wx[n] * x + wh[n] * h0 + b[n];
        let lg = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (i, f, g, o) = (lg(pre(0)), lg(pre(1)), pre(2).tanh(), lg(pre(3)));
        let c1 = f * c0 + i * g;
        let h1 = o * c1.tanh();
        assert_abs_diff_eq!(hs.data[0], h1, epsilon = 1e-12);
        assert_abs_diff_eq!(fin.c[0], c1, epsilon = 1e-12);
    }

    #[test]
    fn forget_bias_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lstm = Lstm::init(5, 3, &mut rng);
        assert_eq!(&lstm.input.b.value[3..6], &[1.0; 3]);
        assert!(lstm.input.b.value[..3].iter().all(|&v| v == 0.0));
        assert!(lstm.input.b.value[6..].iter().all(|&v| v == 0.0));
    }
}
