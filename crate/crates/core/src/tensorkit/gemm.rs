use rayon::prelude::*;

use super::Scalar;

/// Rows of C handed to one task by [`par_gemm`]. Fixed so the partition is
/// identical for every thread count.
const ROW_BLOCK: usize = 16;

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Scalar> MatView<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a [T], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * rs + (cols - 1) * cs;
            assert!(last < data.len(), "matrix view out of bounds");
        }
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn rows_from(self, r0: usize, count: usize) -> Self {
        Self {
            data: &self.data[r0 * self.rs..],
            rows: count,
            ..self
        }
    }
}

/// `C = alpha * A * B + beta * C` with C row-major of shape `a.rows x b.cols`
/// and row stride `rsc`.
pub(crate) fn gemm<T: Scalar>(alpha: T, a: MatView<T>, b: MatView<T>, beta: T, c: &mut [T], rsc: usize) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * rsc + n <= c.len(), "gemm output out of bounds");
    // SAFETY: all three views were bounds-checked above; `c` is a unique borrow
    // and cannot alias the shared borrows behind `a` and `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        )
    }
}

/// [`gemm`] with C (contiguous row-major) split into fixed row blocks that
/// run in parallel. Every element of C is produced by exactly one block.
pub(crate) fn par_gemm<T: Scalar>(alpha: T, a: MatView<T>, b: MatView<T>, beta: T, c: &mut [T]) {
    let n = b.cols;
    if n == 0 {
        return;
    }
    assert_eq!(c.len(), a.rows * n, "par_gemm output size");
    c.par_chunks_mut(ROW_BLOCK * n).enumerate().for_each(|(blk, chunk)| {
        let rows = chunk.len() / n;
        gemm(alpha, a.rows_from(blk * ROW_BLOCK, rows), b, beta, chunk, n);
    });
}
