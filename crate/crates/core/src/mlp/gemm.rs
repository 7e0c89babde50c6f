//! f64 matrix products over strided views.
//!
//! Row-parallel products split the output into fixed-size row blocks, so the
//! summation order of every output element is the same for any thread count.

use rayon::prelude::*;

#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows x cols` matrix.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!((rows - 1) * rs + (cols - 1) * cs < data.len(), "view exceeds buffer");
        }
        MatRef {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn row_block(self, start: usize, len: usize) -> Self {
        MatRef::strided(&self.data[start * self.rs..], len, self.cols, self.rs, self.cs)
    }
}

/// `c = a * b + beta * c`, with `c` row-major and densely packed.
pub(crate) fn gemm(a: MatRef, b: MatRef, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    assert_eq!(c.len(), a.rows * b.cols, "output size");
    if c.is_empty() {
        return;
    }
    if a.cols == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: both views were bounds-checked at construction and `c` holds
    // exactly `a.rows * b.cols` packed elements.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// Like [`gemm`], computing blocks of `block_rows` output rows in parallel.
pub(crate) fn par_gemm(a: MatRef, b: MatRef, beta: f64, c: &mut [f64], block_rows: usize) {
    assert_eq!(c.len(), a.rows * b.cols, "output size");
    if b.cols == 0 || a.rows <= block_rows {
        return gemm(a, b, beta, c);
    }
    c.par_chunks_mut(block_rows * b.cols)
        .enumerate()
        .for_each(|(i, block)| {
            let start = i * block_rows;
            let len = block.len() / b.cols;
            gemm(a.row_block(start, len), b, beta, block);
        });
}
