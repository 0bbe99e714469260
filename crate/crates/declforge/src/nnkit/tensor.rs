//! Row-major 2-D f32 container used by the tape and the no-grad forward paths.
//!
//! The row dimension doubles as the batch dimension: a single vector is a
//! `1 x n` tensor, a batch of candidate rows is `K x n`, a training batch is
//! `B x n`. Keeping everything two-dimensional keeps the kernel set small.

/// Dense row-major matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "Tensor::from_vec size mismatch");
        Tensor { rows, cols, data }
    }

    /// Single-row tensor wrapping a vector.
    pub fn row_vector(data: Vec<f32>) -> Self {
        Tensor { rows: 1, cols: data.len(), data }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// y = x . w^T (+ bias), where w is `out x in` row-major.
pub(crate) fn linear_into(y: &mut Tensor, x: &Tensor, w: &[f32], b: Option<&[f32]>, out: usize, inn: usize) {
    debug_assert_eq!(x.cols, inn);
    debug_assert_eq!(y.cols, out);
    debug_assert_eq!(y.rows, x.rows);
    for r in 0..x.rows {
        let xr = x.row(r);
        let yr = y.row_mut(r);
        for o in 0..out {
            let wr = &w[o * inn..(o + 1) * inn];
            let mut s = 0.0f32;
            for i in 0..inn {
                s += wr[i] * xr[i];
            }
            yr[o] = match b {
                Some(bias) => s + bias[o],
                None => s,
            };
        }
    }
}

/// dx += g . w, where g is `rows x out` and w is `out x in`.
pub(crate) fn linear_backprop_input(dx: &mut Tensor, g: &Tensor, w: &[f32], out: usize, inn: usize) {
    for r in 0..g.rows {
        let gr = g.row(r);
        let dxr = dx.row_mut(r);
        for o in 0..out {
            let go = gr[o];
            if go == 0.0 {
                continue;
            }
            let wr = &w[o * inn..(o + 1) * inn];
            for i in 0..inn {
                dxr[i] += go * wr[i];
            }
        }
    }
}

/// dw += g^T . x accumulated row by row.
pub(crate) fn linear_backprop_weight(dw: &mut [f32], g: &Tensor, x: &Tensor, out: usize, inn: usize) {
    for r in 0..g.rows {
        let gr = g.row(r);
        let xr = x.row(r);
        for o in 0..out {
            let go = gr[o];
            if go == 0.0 {
                continue;
            }
            let dwr = &mut dw[o * inn..(o + 1) * inn];
            for i in 0..inn {
                dwr[i] += go * xr[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_views_are_contiguous() {
        let t = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn linear_matches_naive_oracle() {
        // Independent triple-loop oracle over a fixed case.
        let x = Tensor::from_vec(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]);
        let w = vec![0.1, -0.2, 0.3, -0.4, 0.5, 0.6]; // 2 x 3
        let b = vec![0.05, -0.05];
        let mut y = Tensor::zeros(2, 2);
        linear_into(&mut y, &x, &w, Some(&b), 2, 3);
        for r in 0..2 {
            for o in 0..2 {
                let mut s = b[o];
                for i in 0..3 {
                    s += w[o * 3 + i] * x.row(r)[i];
                }
                assert!((y.row(r)[o] - s).abs() < 1e-6);
            }
        }
    }
}
