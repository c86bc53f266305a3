//! Dense row-major f64 matrices plus the handful of neural-net primitives
//! (softmax, layer norm, GELU) used by the resampler and the toy decoder.
//!
//! Every primitive with a nonlinearity ships a matching `*_backward` so the
//! attention modules can assemble exact reverse-mode gradients.

use rand::Rng;
use rand_distr::StandardNormal;

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong;
    /// shapes are internal invariants, not user input.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Seeded Gaussian init, entries ~ N(0, scale^2).
    pub fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale
            })
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self (r x k) * other (k x c)`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dims");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for c in 0..other.cols {
                    out_row[c] += a * orow[c];
                }
            }
        }
        out
    }

    /// `self^T (k x r)^T=(r x k)... ` computes `self^T * other` where
    /// self is (k x r), other is (k x c), result (r x c).
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_tn outer dims");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for r in 0..self.cols {
                let a = self.data[k * self.cols + r];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for c in 0..other.cols {
                    out_row[c] += a * orow[c];
                }
            }
        }
        out
    }

    /// Computes `self * other^T`; self (r x k), other (c x k), result (r x c).
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dims");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let srow = &self.data[r * self.cols..(r + 1) * self.cols];
            for c in 0..other.rows {
                let orow = &other.data[c * other.cols..(c + 1) * other.cols];
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += srow[k] * orow[k];
                }
                out.data[r * other.rows + c] = acc;
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "add shapes");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }

    /// `self += other * s` (axpy).
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shapes");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    /// Stacks matrices vertically; all must share the column count.
    pub fn vcat(parts: &[&Matrix]) -> Matrix {
        assert!(!parts.is_empty());
        let cols = parts[0].cols;
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            assert_eq!(p.cols, cols, "vcat column mismatch");
            data.extend_from_slice(&p.data);
        }
        Matrix { rows, cols, data }
    }

    /// Copies rows `[start, start+len)` into a new matrix.
    pub fn row_block(&self, start: usize, len: usize) -> Matrix {
        assert!(start + len <= self.rows);
        Matrix::from_vec(
            len,
            self.cols,
            self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        )
    }

    /// Copies columns `[start, start+len)` into a new matrix.
    pub fn col_block(&self, start: usize, len: usize) -> Matrix {
        assert!(start + len <= self.cols);
        let mut out = Matrix::zeros(self.rows, len);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + len]);
        }
        out
    }

    /// Writes `block` into columns `[start, ...)` of self.
    pub fn set_col_block(&mut self, start: usize, block: &Matrix) {
        assert_eq!(self.rows, block.rows);
        assert!(start + block.cols <= self.cols);
        for r in 0..self.rows {
            self.row_mut(r)[start..start + block.cols].copy_from_slice(block.row(r));
        }
    }
}

/// Row-wise softmax. Subtracts the row max for stability.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
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

/// Backward of row-wise softmax: given probabilities `p` and upstream `dp`,
/// returns `ds` with `ds_ij = p_ij * (dp_ij - sum_k dp_ik p_ik)`.
pub fn softmax_rows_backward(p: &Matrix, dp: &Matrix) -> Matrix {
    assert_eq!(p.shape(), dp.shape());
    let mut out = Matrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let prow = p.row(r);
        let drow = dp.row(r);
        let dot: f64 = prow.iter().zip(drow).map(|(a, b)| a * b).sum();
        let orow = out.row_mut(r);
        for c in 0..prow.len() {
            orow[c] = prow[c] * (drow[c] - dot);
        }
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Per-row layer-norm cache: normalized activations and inverse std.
pub struct LayerNormCache {
    pub xhat: Matrix,
    pub rstd: Vec<f64>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer norm over each row: `y = xhat * gamma + beta`,
/// `xhat = (x - mean) / sqrt(var + eps)`.
pub fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64]) -> (Matrix, LayerNormCache) {
    let d = x.cols();
    assert_eq!(gamma.len(), d);
    assert_eq!(beta.len(), d);
    let mut y = Matrix::zeros(x.rows(), d);
    let mut xhat = Matrix::zeros(x.rows(), d);
    let mut rstd = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd.push(rs);
        for c in 0..d {
            let xh = (row[c] - mean) * rs;
            xhat.set(r, c, xh);
            y.set(r, c, xh * gamma[c] + beta[c]);
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

/// Backward of [`layer_norm`]. Returns `dx` and accumulates into
/// `dgamma`/`dbeta`.
pub fn layer_norm_backward(
    dy: &Matrix,
    cache: &LayerNormCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Matrix {
    let d = dy.cols();
    let mut dx = Matrix::zeros(dy.rows(), d);
    for r in 0..dy.rows() {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        let rs = cache.rstd[r];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            dgamma[c] += dyr[c] * xh[c];
            dbeta[c] += dyr[c];
            let dxhat = dyr[c] * gamma[c];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xh[c];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let dxr = dx.row_mut(r);
        for c in 0..d {
            let dxhat = dyr[c] * gamma[c];
            dxr[c] = rs * (dxhat - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

/// Exact derivative of the tanh-form GELU above.
pub fn gelu_deriv(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn gelu_matrix(x: &Matrix) -> Matrix {
    Matrix::from_vec(
        x.rows(),
        x.cols(),
        x.as_slice().iter().map(|&v| gelu(v)).collect(),
    )
}

/// Elementwise `dx = dy * gelu'(x)` where `x` is the pre-activation.
pub fn gelu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    assert_eq!(x.shape(), dy.shape());
    Matrix::from_vec(
        x.rows(),
        x.cols(),
        x.as_slice()
            .iter()
            .zip(dy.as_slice())
            .map(|(&v, &g)| g * gelu_deriv(v))
            .collect(),
    )
}

/// Relative error with an absolute floor, for finite-difference checks.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn matmul_against_hand_computed() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.as_slice(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_matmuls_agree_with_explicit_transpose() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let a = Matrix::gaussian(4, 3, 1.0, &mut rng);
        let b = Matrix::gaussian(4, 5, 1.0, &mut rng);
        let at = Matrix::from_fn(3, 4, |r, c| a.get(c, r));
        let tn = a.matmul_tn(&b);
        let explicit = at.matmul(&b);
        for (x, y) in tn.as_slice().iter().zip(explicit.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }

        let c = Matrix::gaussian(5, 3, 1.0, &mut rng);
        let ct = Matrix::from_fn(3, 5, |r, cc| c.get(cc, r));
        let nt = a.matmul_nt(&c);
        let explicit = a.matmul(&ct);
        for (x, y) in nt.as_slice().iter().zip(explicit.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = Matrix::gaussian(5, 7, 2.0, &mut rng);
        let p = softmax_rows(&x);
        for r in 0..5 {
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x = Matrix::gaussian(2, 5, 1.0, &mut rng);
        let dp = Matrix::gaussian(2, 5, 1.0, &mut rng);
        let p = softmax_rows(&x);
        let ds = softmax_rows_backward(&p, &dp);

        let eps = 1e-6;
        let loss = |m: &Matrix| -> f64 {
            let p = softmax_rows(m);
            p.as_slice()
                .iter()
                .zip(dp.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        };
        for i in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += eps;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert!(rel_err(ds.as_slice()[i], fd) < 1e-5);
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let x = Matrix::gaussian(3, 6, 1.0, &mut rng);
        let gamma: Vec<f64> = (0..6).map(|i| 1.0 + 0.1 * i as f64).collect();
        let beta: Vec<f64> = (0..6).map(|i| 0.05 * i as f64).collect();
        let dy = Matrix::gaussian(3, 6, 1.0, &mut rng);

        let (_, cache) = layer_norm(&x, &gamma, &beta);
        let mut dgamma = vec![0.0; 6];
        let mut dbeta = vec![0.0; 6];
        let dx = layer_norm_backward(&dy, &cache, &gamma, &mut dgamma, &mut dbeta);

        let eps = 1e-6;
        let loss = |m: &Matrix, g: &[f64], b: &[f64]| -> f64 {
            let (y, _) = layer_norm(m, g, b);
            y.as_slice()
                .iter()
                .zip(dy.as_slice())
                .map(|(a, u)| a * u)
                .sum()
        };
        for i in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += eps;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= eps;
            let fd = (loss(&xp, &gamma, &beta) - loss(&xm, &gamma, &beta)) / (2.0 * eps);
            assert!(rel_err(dx.as_slice()[i], fd) < 1e-5, "dx[{i}]");
        }
        for i in 0..6 {
            let mut gp = gamma.clone();
            gp[i] += eps;
            let mut gm = gamma.clone();
            gm[i] -= eps;
            let fd = (loss(&x, &gp, &beta) - loss(&x, &gm, &beta)) / (2.0 * eps);
            assert!(rel_err(dgamma[i], fd) < 1e-5, "dgamma[{i}]");
        }
    }

    #[test]
    fn gelu_deriv_matches_finite_differences() {
        for i in -20..=20 {
            let x = i as f64 * 0.25;
            let eps = 1e-6;
            let fd = (gelu(x + eps) - gelu(x - eps)) / (2.0 * eps);
            let d = gelu_deriv(x);
            // The tails saturate, so allow a small absolute slack where the
            // central difference cancels catastrophically.
            assert!((d - fd).abs() < 1e-8 || rel_err(d, fd) < 1e-6, "x={x}");
        }
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x = Matrix::gaussian(4, 9, 3.0, &mut rng);
        let lp = log_softmax_rows(&x);
        for r in 0..4 {
            let s: f64 = lp.row(r).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
