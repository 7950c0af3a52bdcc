//! Thin safe layer over `matrixmultiply::dgemm` with explicit strides.

/// A strided read-only view of a matrix inside a flat buffer.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    /// Row-major `rows × cols` matrix.
    pub fn dense(data: &'a [f64], rows: usize, cols: usize) -> Self {
        View { data, offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows × cols` matrix (so the view is `cols × rows`).
    pub fn dense_t(data: &'a [f64], rows: usize, cols: usize) -> Self {
        View { data, offset: 0, rows: cols, cols: rows, rs: 1, cs: cols }
    }

    /// Column block `[c0, c0 + width)` of a row-major matrix with `stride` columns.
    pub fn col_block(data: &'a [f64], rows: usize, stride: usize, c0: usize, width: usize) -> Self {
        View { data, offset: c0, rows, cols: width, rs: stride, cs: 1 }
    }

    pub fn t(self) -> Self {
        View { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "gemm view out of bounds");
        }
    }
}

/// Mutable strided destination.
pub(crate) struct ViewMut<'a> {
    pub data: &'a mut [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> ViewMut<'a> {
    pub fn dense(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        ViewMut { data, offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    pub fn col_block(data: &'a mut [f64], rows: usize, stride: usize, c0: usize, width: usize) -> Self {
        ViewMut { data, offset: c0, rows, cols: width, rs: stride, cs: 1 }
    }
}

/// `c = alpha · a · b + beta · c`.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: ViewMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    a.check();
    b.check();
    if c.rows > 0 && c.cols > 0 {
        let last = c.offset + (c.rows - 1) * c.rs + (c.cols - 1) * c.cs;
        assert!(last < c.data.len(), "gemm output out of bounds");
    } else {
        return;
    }
    // SAFETY: every index touched by dgemm lies within the bounds checked above,
    // and `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}
