use rand::Rng;

use super::{gemm, Matrix, Param};
use crate::error::{check_len, Error, Result};

/// `y = W x + b` applied to every row of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    /// `out x in`.
    pub w: Param,
    /// `1 x out`.
    pub b: Param,
}

impl Affine {
    pub fn new(w: Param, b: Param) -> Result<Self> {
        check_len("affine bias length", w.rows, b.len())?;
        Ok(Self { w, b })
    }

    pub fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: Param::glorot(output, input, rng),
            b: Param::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        check_len("affine input dim", self.input_dim(), x.cols)?;
        let mut y = Matrix::zeros(x.rows, self.output_dim());
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.b.value);
        }
        gemm(1.0, x, false, &self.w.matrix(), true, 1.0, &mut y);
        Ok(y)
    }

    /// Accumulates `dW`, `db`; returns `dx`.
    pub fn backward(&mut self, x: &Matrix, gy: &Matrix) -> Result<Matrix> {
        check_len("affine input dim", self.input_dim(), x.cols)?;
        check_len("affine grad dim", self.output_dim(), gy.cols)?;
        check_len("affine batch", x.rows, gy.rows)?;
        let mut gw = Matrix {
            rows: self.w.rows,
            cols: self.w.cols,
            data: std::mem::take(&mut self.w.grad),
        };
        gemm(1.0, gy, true, x, false, 1.0, &mut gw);
        self.w.grad = gw.data;
        for r in 0..gy.rows {
            for (g, v) in self.b.grad.iter_mut().zip(gy.row(r)) {
                *g += v;
            }
        }
        let mut gx = Matrix::zeros(x.rows, x.cols);
        gemm(1.0, gy, false, &self.w.matrix(), false, 0.0, &mut gx);
        Ok(gx)
    }

    pub fn zero_grad(&mut self) {
        self.w.zero_grad();
        self.b.zero_grad();
    }
}

/// Row-wise `re^2 + im^2` over interleaved pairs.
pub fn pow_pairs_fwd(z: &Matrix) -> Result<Matrix> {
    if z.cols % 2 != 0 {
        return Err(Error::Dimension {
            context: "pow_pairs needs an even width",
            expected: z.cols + 1,
            actual: z.cols,
        });
    }
    Ok(Matrix {
        rows: z.rows,
        cols: z.cols / 2,
        data: z.data.chunks(2).map(|p| p[0] * p[0] + p[1] * p[1]).collect(),
    })
}

pub fn pow_pairs_bwd(z: &Matrix, gp: &Matrix) -> Result<Matrix> {
    check_len("pow_pairs grad size", z.data.len(), 2 * gp.data.len())?;
    Ok(Matrix {
        rows: z.rows,
        cols: z.cols,
        data: z
            .data
            .chunks(2)
            .zip(&gp.data)
            .flat_map(|(p, g)| [2.0 * p[0] * g, 2.0 * p[1] * g])
            .collect(),
    })
}

pub fn relu_fwd(x: &Matrix) -> Matrix {
    Matrix {
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Subgradient 0 at the kink.
pub fn relu_bwd(x: &Matrix, gy: &Matrix) -> Matrix {
    Matrix {
        rows: x.rows,
        cols: x.cols,
        data: x
            .data
            .iter()
            .zip(&gy.data)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

/// `log(max(x, floor))`.
pub fn log_fwd(x: &Matrix, floor: f64) -> Matrix {
    Matrix {
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().map(|&v| v.max(floor).ln()).collect(),
    }
}

/// Zero gradient wherever the floor is active.
pub fn log_bwd(x: &Matrix, gy: &Matrix, floor: f64) -> Matrix {
    Matrix {
        rows: x.rows,
        cols: x.cols,
        data: x
            .data
            .iter()
            .zip(&gy.data)
            .map(|(&v, &g)| if v > floor { g / v } else { 0.0 })
            .collect(),
    }
}

/// `1 x D` filters with stride `D` along the row and stride 1 across rows,
/// shared by every row of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1xD {
    /// Filters `F x D` plus per-filter bias.
    pub kernel: Affine,
}

impl Conv1xD {
    pub fn new(filters: Param, bias: Param) -> Result<Self> {
        Ok(Self {
            kernel: Affine::new(filters, bias)?,
        })
    }

    pub fn width(&self) -> usize {
        self.kernel.input_dim()
    }

    pub fn num_filters(&self) -> usize {
        self.kernel.output_dim()
    }

    fn blocks(&self, grid_cols: usize) -> Result<usize> {
        let d = self.width();
        if grid_cols % d != 0 {
            return Err(Error::Dimension {
                context: "conv grid width not a multiple of filter width",
                expected: d,
                actual: grid_cols,
            });
        }
        Ok(grid_cols / d)
    }

    /// `R x (G*D)` in, `R x (G*F)` out.
    pub fn forward(&self, grid: &Matrix) -> Result<Matrix> {
        let g = self.blocks(grid.cols)?;
        let flat = grid.clone().reshape(grid.rows * g, self.width())?;
        self.kernel
            .forward(&flat)?
            .reshape(grid.rows, g * self.num_filters())
    }

    pub fn backward(&mut self, grid: &Matrix, gy: &Matrix) -> Result<Matrix> {
        let g = self.blocks(grid.cols)?;
        let flat = grid.clone().reshape(grid.rows * g, self.width())?;
        let gflat = gy.clone().reshape(grid.rows * g, self.num_filters())?;
        self.kernel
            .backward(&flat, &gflat)?
            .reshape(grid.rows, grid.cols)
    }
}

/// Row-wise max over the active columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    pub argmax: Vec<usize>,
    pub cols: usize,
}

/// Ties go to the lowest column index. `active` masks columns out of the pool.
pub fn maxpool_fwd(grid: &Matrix, active: Option<&[bool]>) -> Result<(Matrix, MaxPool)> {
    if let Some(mask) = active {
        check_len("maxpool mask", grid.cols, mask.len())?;
        if !mask.iter().any(|&a| a) {
            return Err(Error::Empty("maxpool mask has no active column"));
        }
    }
    if grid.cols == 0 {
        return Err(Error::Empty("maxpool over zero columns"));
    }
    let mut out = Matrix::zeros(grid.rows, 1);
    let mut argmax = Vec::with_capacity(grid.rows);
    for r in 0..grid.rows {
        let row = grid.row(r);
        let mut best = usize::MAX;
        let mut best_v = f64::NEG_INFINITY;
        for (c, &v) in row.iter().enumerate() {
            if active.map_or(true, |m| m[c]) && (best == usize::MAX || v > best_v) {
                best = c;
                best_v = v;
            }
        }
        out.data[r] = best_v;
        argmax.push(best);
    }
    Ok((
        out,
        MaxPool {
            argmax,
            cols: grid.cols,
        },
    ))
}

pub fn maxpool_bwd(pool: &MaxPool, gy: &Matrix) -> Result<Matrix> {
    check_len("maxpool grad rows", pool.argmax.len(), gy.data.len())?;
    let mut gx = Matrix::zeros(pool.argmax.len(), pool.cols);
    for (r, (&c, &g)) in pool.argmax.iter().zip(&gy.data).enumerate() {
        gx.data[r * pool.cols + c] = g;
    }
    Ok(gx)
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy over rows and its gradient `(softmax - onehot) / T`.
pub fn softmax_xent(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_len("xent labels", logits.rows, labels.len())?;
    if logits.rows == 0 {
        return Err(Error::Empty("cross-entropy over zero frames"));
    }
    let c = logits.cols;
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Label {
            label: bad,
            classes: c,
        });
    }
    let t = logits.rows as f64;
    let mut grad = Matrix::zeros(logits.rows, c);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        for (j, (g, &v)) in grad.row_mut(r).iter_mut().zip(row).enumerate() {
            let p = (v - lse).exp();
            *g = (p - if j == label { 1.0 } else { 0.0 }) / t;
        }
    }
    Ok((loss / t, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_identity_and_bias() {
        let mut w = Param::zeros(3, 3);
        for i in 0..3 {
            w.value[i * 3 + i] = 1.0;
        }
        let a = Affine::new(w, Param::new(1, 3, vec![0.5, -1.0, 2.0])).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(a.forward(&x).unwrap().data, vec![1.5, 1.0, 5.0]);
        let z = Matrix::zeros(2, 3);
        assert_eq!(a.forward(&z).unwrap().data, vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert!(a.forward(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn pow_examples() {
        let z = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(pow_pairs_fwd(&z).unwrap().data, vec![25.0]);
        let zero = Matrix::zeros(1, 4);
        let p = pow_pairs_fwd(&zero).unwrap();
        assert_eq!(p.data, vec![0.0, 0.0]);
        let g = pow_pairs_bwd(&zero, &Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap()).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
        assert!(pow_pairs_fwd(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn relu_and_log_examples() {
        let x = Matrix::from_rows(&[vec![-2.0, 3.0, 0.0]]).unwrap();
        assert_eq!(relu_fwd(&x).data, vec![0.0, 3.0, 0.0]);
        let g = relu_bwd(&x, &Matrix::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap());
        assert_eq!(g.data, vec![0.0, 1.0, 0.0]);
        let eps = 1e-10;
        let x = Matrix::from_rows(&[vec![0.5 * eps, 2.0]]).unwrap();
        let y = log_fwd(&x, eps);
        assert_eq!(y.data[0], eps.ln());
        assert_abs_diff_eq!(y.data[1], 2f64.ln(), epsilon = 1e-15);
        let g = log_bwd(&x, &Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(), eps);
        assert_eq!(g.data, vec![0.0, 0.5]);
    }

    #[test]
    fn conv_examples() {
        // two geometries, D = 3, K = 2 rows
        let grid = Matrix::from_rows(&[
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![0.5, 0.0, 1.0, 2.0, 2.0, 2.0],
        ])
        .unwrap();
        let ones = Conv1xD::new(Param::new(1, 3, vec![1.0; 3]), Param::zeros(1, 1)).unwrap();
        assert_eq!(ones.forward(&grid).unwrap().data, vec![6.0, 15.0, 1.5, 6.0]);
        let pick = Conv1xD::new(Param::new(1, 3, vec![0.0, 1.0, 0.0]), Param::zeros(1, 1)).unwrap();
        assert_eq!(pick.forward(&grid).unwrap().data, vec![2.0, 5.0, 0.0, 2.0]);
        assert!(ones.forward(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let g = Matrix::from_rows(&[vec![0.2, 5.0], vec![1.0, 1.0]]).unwrap();
        let (y, pool) = maxpool_fwd(&g, None).unwrap();
        assert_eq!(y.data, vec![5.0, 1.0]);
        assert_eq!(pool.argmax, vec![1, 0]);
        let gx = maxpool_bwd(&pool, &Matrix::from_vec(2, 1, vec![3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(gx.data, vec![0.0, 3.0, 4.0, 0.0]);
        let (y, pool) = maxpool_fwd(&g, Some(&[true, false])).unwrap();
        assert_eq!(y.data, vec![0.2, 1.0]);
        assert_eq!(pool.argmax, vec![0, 0]);
        assert!(maxpool_fwd(&g, Some(&[false, false])).is_err());
    }

    #[test]
    fn xent_examples() {
        let c = 5;
        let logits = Matrix::from_rows(&[vec![0.3; c]]).unwrap();
        let (loss, _) = softmax_xent(&logits, &[2]).unwrap();
        assert_abs_diff_eq!(loss, (c as f64).ln(), epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Matrix::from_rows(&[(0..c).map(|_| rng.gen_range(-3.0..3.0)).collect()]).unwrap();
        let shifted = Matrix::from_rows(&[l.data.iter().map(|v| v + 100.0).collect()]).unwrap();
        let (a, _) = softmax_xent(&l, &[1]).unwrap();
        let (b, _) = softmax_xent(&shifted, &[1]).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        assert!(a >= 0.0);
        assert!(softmax_xent(&l, &[c]).is_err());
        let p = softmax_rows(&l);
        assert_abs_diff_eq!(p.data.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}
