//! 1-D convolution over time with "same" zero padding and stride 1.
//!
//! For filter size `k` the window at output step `t` covers input steps
//! `t - (k-1)/2 ..= t + k/2`, so odd sizes are centered and even sizes lean
//! one step into the future.

use super::Matrix;

pub(super) fn pad_left(filter_size: usize) -> usize {
    (filter_size - 1) / 2
}

/// `T x (k*C)` patch matrix; column `j*C + c` holds channel `c` at offset `j`.
pub(super) fn im2col(x: &Matrix, filter_size: usize) -> Matrix {
    let (steps, channels) = x.shape();
    let pl = pad_left(filter_size) as isize;
    Matrix::from_fn(steps, filter_size * channels, |t, col| {
        let (j, c) = (col / channels, col % channels);
        let src = t as isize + j as isize - pl;
        if src < 0 || src >= steps as isize {
            0.0
        } else {
            x[(src as usize, c)]
        }
    })
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the input.
pub(super) fn col2im(dcols: &Matrix, steps: usize, channels: usize, filter_size: usize) -> Matrix {
    let pl = pad_left(filter_size) as isize;
    let mut dx = Matrix::zeros(steps, channels);
    for t in 0..steps {
        for j in 0..filter_size {
            let src = t as isize + j as isize - pl;
            if src < 0 || src >= steps as isize {
                continue;
            }
            for c in 0..channels {
                dx[(src as usize, c)] += dcols[(t, j * channels + c)];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_offsets() {
        assert_eq!(pad_left(3), 1);
        assert_eq!(pad_left(4), 1);
        assert_eq!(pad_left(5), 2);
    }

    #[test]
    fn col2im_is_adjoint() {
        let x = Matrix::from_fn(6, 2, |r, c| (r * 2 + c) as f64 * 0.37 - 1.0);
        for k in [3, 4, 5] {
            let cols = im2col(&x, k);
            let y = Matrix::from_fn(cols.nrows(), cols.ncols(), |r, c| ((r + 3 * c) % 7) as f64 - 3.0);
            let lhs = cols.dot(&y);
            let rhs = x.dot(&col2im(&y, 6, 2, k));
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
