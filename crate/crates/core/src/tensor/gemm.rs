//! Strided `C += A·B` on slices, backed by `matrixmultiply`.

/// A strided matrix view: element (i, j) lives at `offset + i*rs + j*cs`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn row_major(offset: usize, rows: usize, cols: usize) -> Self {
        Self {
            offset,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` block whose rows are `ld` apart.
    pub fn transposed(offset: usize, rows: usize, cols: usize, ld: usize) -> Self {
        Self {
            offset,
            rows: cols,
            cols: rows,
            rs: 1,
            cs: ld,
        }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
    }
}

/// `c += a · b` for strided views into the given buffers.
pub(crate) fn gemm_acc(a: &[f64], av: View, b: &[f64], bv: View, c: &mut [f64], cv: View) {
    assert_eq!(av.cols, bv.rows, "gemm inner dimension");
    assert_eq!(av.rows, cv.rows, "gemm rows");
    assert_eq!(bv.cols, cv.cols, "gemm cols");
    let (m, k, n) = (av.rows, av.cols, bv.cols);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(av.last_index() < a.len(), "gemm: A view out of bounds");
    assert!(bv.last_index() < b.len(), "gemm: B view out of bounds");
    assert!(cv.last_index() < c.len(), "gemm: C view out of bounds");
    // SAFETY: every element addressed by the three views was bounds-checked
    // above, and `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            1.0,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}
